//! Synthetic confounded-data generation.
//!
//! Each sample realizes a causal graph in which the binary label `Y` drives a
//! block of "signal" feature dimensions and the nuisance `V` drives a
//! disjoint block of "marker" dimensions, with everything else pure noise.
//! The Y-V association (the confounding) is controlled per domain through
//! `P(Y=1 | V)`, while the feature mechanism `X | Y, V` stays fixed, so a
//! source/target pair can flip the association without touching anything
//! else.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::distributions::{Bernoulli, Distribution};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which side of the dataset-shift divide a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

/// Whether the nuisance column holds a binary indicator or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceKind {
    Binary,
    Continuous,
}

/// One observation: features, binary label, nuisance value, a group id for
/// split integrity (all samples of a group stay on one side of any split),
/// and the domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
    pub nuisance: f64,
    pub group_id: u64,
    /// Extra label columns correlated with `label`; in-memory only, the CSV
    /// schema does not carry them.
    pub aux_labels: Vec<u8>,
    pub domain: Domain,
}

/// Provenance of a generated dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// A homogeneous collection of [`Sample`]s.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    nuisance_kind: NuisanceKind,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, dim: usize, nuisance_kind: NuisanceKind) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::Dimension(format!(
                    "sample {i} has {} features, dataset dim is {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) || !s.nuisance.is_finite() {
                return Err(Error::NonFinite(format!("sample {i} has non-finite values")));
            }
            if s.label > 1 {
                return Err(Error::InvalidConfig(format!(
                    "sample {i} label must be 0 or 1, got {}",
                    s.label
                )));
            }
            if nuisance_kind == NuisanceKind::Binary && s.nuisance != 0.0 && s.nuisance != 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "sample {i}: binary nuisance must be 0 or 1, got {}",
                    s.nuisance
                )));
            }
        }
        Ok(Self {
            samples,
            dim,
            nuisance_kind,
            meta: DatasetMeta::default(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nuisance_kind(&self) -> NuisanceKind {
        self.nuisance_kind
    }

    /// Design matrix, one row per sample.
    pub fn features_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.dim));
        for (i, s) in self.samples.iter().enumerate() {
            for (j, &v) in s.features.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    pub fn labels(&self) -> Array1<f64> {
        self.samples.iter().map(|s| s.label as f64).collect()
    }

    pub fn nuisance_values(&self) -> Array1<f64> {
        self.samples.iter().map(|s| s.nuisance).collect()
    }

    /// New dataset from the samples at `indices` (cloned, order preserved).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            nuisance_kind: self.nuisance_kind,
            meta: self.meta.clone(),
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Dataset {
        for s in &mut self.samples {
            s.domain = domain;
        }
        self
    }

    /// Counts indexed `[label][nuisance]`; requires a binary nuisance.
    pub fn cell_counts(&self) -> Result<[[usize; 2]; 2]> {
        if self.nuisance_kind != NuisanceKind::Binary {
            return Err(Error::InvalidConfig(
                "cell counts require a binary nuisance".to_string(),
            ));
        }
        let mut cells = [[0usize; 2]; 2];
        for s in &self.samples {
            cells[s.label as usize][s.nuisance as usize] += 1;
        }
        Ok(cells)
    }
}

/// Everything that determines a generated dataset.
///
/// `signal_dims` carry the label's imprint (`Y * signal_strength` plus
/// noise), `marker_dims` carry the nuisance's imprint (`V * marker_strength`
/// plus noise), all other dimensions are pure Gaussian noise with standard
/// deviation `noise_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_samples: usize,
    pub dim: usize,
    /// P(V = 1).
    pub p_v: f64,
    /// P(Y = 1 | V = 0).
    pub base_rate_v0: f64,
    /// P(Y = 1 | V = 1).
    pub base_rate_v1: f64,
    pub signal_strength: f64,
    pub marker_strength: f64,
    pub noise_sd: f64,
    pub signal_dims: Vec<usize>,
    pub marker_dims: Vec<usize>,
    pub seed: u64,
    /// Extra Y-correlated label columns per sample (0 = off). These live in
    /// [`Sample::aux_labels`] only; the CSV schema cannot carry them.
    #[serde(default)]
    pub aux_label_count: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            dim: 32,
            p_v: 0.5,
            base_rate_v0: 0.021,
            base_rate_v1: 0.039,
            signal_strength: 1.0,
            marker_strength: 1.0,
            noise_sd: 1.0,
            signal_dims: vec![0, 1, 2, 3],
            marker_dims: vec![4, 5],
            seed: 0,
            aux_label_count: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".to_string()));
        }
        for (name, p) in [
            ("p_v", self.p_v),
            ("base_rate_v0", self.base_rate_v0),
            ("base_rate_v1", self.base_rate_v1),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        if self.signal_strength < 0.0 || self.marker_strength < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::InvalidConfig(
                "strengths and noise_sd must be >= 0".to_string(),
            ));
        }
        for &d in self.signal_dims.iter().chain(&self.marker_dims) {
            if d >= self.dim {
                return Err(Error::InvalidConfig(format!(
                    "feature index {d} out of range for dim {}",
                    self.dim
                )));
            }
        }
        if self.signal_dims.iter().any(|d| self.marker_dims.contains(d)) {
            return Err(Error::InvalidConfig(
                "signal_dims and marker_dims must be disjoint".to_string(),
            ));
        }
        Ok(())
    }

    /// True when two configs share the same `X | Y, V` mechanism, i.e. they
    /// differ only in the Y-V association (and bookkeeping like seed or
    /// sample count).
    pub fn same_mechanism(&self, other: &GenConfig) -> bool {
        self.dim == other.dim
            && self.signal_dims == other.signal_dims
            && self.marker_dims == other.marker_dims
            && self.signal_strength == other.signal_strength
            && self.marker_strength == other.marker_strength
            && self.noise_sd == other.noise_sd
    }

    /// Stable fingerprint of the full config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("GenConfig serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Per-(Y, V) cell sizes for an engineered base-rate imbalance. Both views
/// have the same total size `pos + neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImbalanceCounts {
    pub pos_v0: usize,
    pub neg_v0: usize,
    pub pos_v1: usize,
    pub neg_v1: usize,
}

impl ImbalanceCounts {
    pub fn total(&self) -> usize {
        self.pos_v0 + self.neg_v0 + self.pos_v1 + self.neg_v1
    }

    pub fn n_per_view(&self) -> usize {
        self.pos_v0 + self.neg_v0
    }
}

#[derive(Clone, Copy, PartialEq)]
enum DimRole {
    Signal,
    Marker,
    Noise,
}

fn roles(config: &GenConfig) -> Vec<DimRole> {
    let mut r = vec![DimRole::Noise; config.dim];
    for &d in &config.signal_dims {
        r[d] = DimRole::Signal;
    }
    for &d in &config.marker_dims {
        r[d] = DimRole::Marker;
    }
    r
}

/// Draw one feature vector given the label and the nuisance's effect size
/// (`v` itself for a binary nuisance, the standardized value for a
/// continuous one).
fn draw_features(
    rng: &mut ChaCha8Rng,
    config: &GenConfig,
    roles: &[DimRole],
    y: u8,
    v_effect: f64,
) -> Vec<f64> {
    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    roles
        .iter()
        .map(|role| {
            let eps = if config.noise_sd > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            match role {
                DimRole::Signal => y as f64 * config.signal_strength + eps,
                DimRole::Marker => v_effect * config.marker_strength + eps,
                DimRole::Noise => eps,
            }
        })
        .collect()
}

fn draw_aux_labels(rng: &mut ChaCha8Rng, count: usize, y: u8) -> Vec<u8> {
    // Each auxiliary label agrees with Y 80% of the time.
    let p = if y == 1 { 0.8 } else { 0.2 };
    let dist = Bernoulli::new(p).unwrap();
    (0..count).map(|_| dist.sample(rng) as u8).collect()
}

/// Generate a dataset with `V ~ Bernoulli(p_v)` and
/// `Y | V ~ Bernoulli(base_rate_v)`. Deterministic for a fixed seed.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let roles = roles(config);
    let v_dist = Bernoulli::new(config.p_v).expect("validated");
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let v = v_dist.sample(&mut rng) as u8;
        let rate = if v == 1 {
            config.base_rate_v1
        } else {
            config.base_rate_v0
        };
        let y = Bernoulli::new(rate).expect("validated").sample(&mut rng) as u8;
        let features = draw_features(&mut rng, config, &roles, y, v as f64);
        let aux_labels = draw_aux_labels(&mut rng, config.aux_label_count, y);
        samples.push(Sample {
            features,
            label: y,
            nuisance: v as f64,
            group_id: i as u64,
            aux_labels,
            domain: Domain::Source,
        });
    }
    let mut ds = Dataset::new(samples, config.dim, NuisanceKind::Binary)?;
    ds.meta = DatasetMeta {
        seed: Some(config.seed),
        config_hash: Some(config.fingerprint()),
    };
    Ok(ds)
}

/// Cell counts for a base-rate imbalance of `ratio` between the two views.
///
/// Both views hold `n_per_view` samples; total positives are
/// `round(overall_rate * 2 * n_per_view)`, split so that
/// `pos_v1 / pos_v0 = ratio` up to integer rounding
/// (`pos_v0 = round(P / (1 + ratio))`).
pub fn engineered_imbalance(
    ratio: f64,
    n_per_view: usize,
    overall_rate: f64,
) -> Result<ImbalanceCounts> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ratio must be a positive real, got {ratio}"
        )));
    }
    if !(0.0..=1.0).contains(&overall_rate) {
        return Err(Error::InvalidConfig(format!(
            "overall_rate must be in [0, 1], got {overall_rate}"
        )));
    }
    if n_per_view == 0 {
        return Err(Error::InvalidConfig("n_per_view must be >= 1".to_string()));
    }
    let total_pos = (overall_rate * 2.0 * n_per_view as f64).round() as usize;
    let pos_v0 = (total_pos as f64 / (1.0 + ratio)).round() as usize;
    let pos_v1 = total_pos - pos_v0;
    if total_pos > 0 && (pos_v0 == 0 || pos_v1 == 0) {
        return Err(Error::Infeasible(format!(
            "ratio {ratio} rounds a positive cell to zero (total positives {total_pos})"
        )));
    }
    if pos_v0 > n_per_view || pos_v1 > n_per_view {
        return Err(Error::Infeasible(format!(
            "positives exceed subgroup size: pos_v0={pos_v0}, pos_v1={pos_v1}, n_per_view={n_per_view}"
        )));
    }
    Ok(ImbalanceCounts {
        pos_v0,
        neg_v0: n_per_view - pos_v0,
        pos_v1,
        neg_v1: n_per_view - pos_v1,
    })
}

/// Generate a dataset with exactly the given (Y, V) cell counts, features
/// drawn by the same mechanism as [`generate`]. Row order is shuffled;
/// deterministic for a fixed `config.seed`.
pub fn realize_counts(counts: &ImbalanceCounts, config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    if counts.pos_v0 + counts.neg_v0 != counts.pos_v1 + counts.neg_v1 {
        return Err(Error::Infeasible("views have different totals".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim_roles = roles(config);
    let mut samples = Vec::with_capacity(counts.total());
    for (y, v, n) in [
        (0u8, 0u8, counts.neg_v0),
        (1, 0, counts.pos_v0),
        (0, 1, counts.neg_v1),
        (1, 1, counts.pos_v1),
    ] {
        for _ in 0..n {
            let features = draw_features(&mut rng, config, &dim_roles, y, v as f64);
            let aux_labels = draw_aux_labels(&mut rng, config.aux_label_count, y);
            samples.push(Sample {
                features,
                label: y,
                nuisance: v as f64,
                group_id: 0,
                aux_labels,
                domain: Domain::Source,
            });
        }
    }
    samples.shuffle(&mut rng);
    for (i, s) in samples.iter_mut().enumerate() {
        s.group_id = i as u64;
    }
    let mut ds = Dataset::new(samples, config.dim, NuisanceKind::Binary)?;
    ds.meta = DatasetMeta {
        seed: Some(config.seed),
        config_hash: Some(config.fingerprint()),
    };
    Ok(ds)
}

/// Generate a source/target pair that shares the feature mechanism and
/// differs only in the Y-V association.
pub fn make_source_target_pair(
    source_cfg: &GenConfig,
    target_cfg: &GenConfig,
) -> Result<(Dataset, Dataset)> {
    if !source_cfg.same_mechanism(target_cfg) {
        return Err(Error::InvalidConfig(
            "source and target configs must share dim, signal/marker dims, strengths and noise"
                .to_string(),
        ));
    }
    let source = generate(source_cfg)?;
    let target = generate(target_cfg)?.with_domain(Domain::Target);
    Ok((source, target))
}

/// Age distribution used by [`continuous_nuisance_variant`]: a Gaussian
/// clipped to a plausible adult range.
pub const AGE_MEAN: f64 = 60.0;
pub const AGE_SD: f64 = 18.0;
pub const AGE_MIN: f64 = 18.0;
pub const AGE_MAX: f64 = 100.0;

/// Generate a dataset whose nuisance is a continuous "age" value.
///
/// Marker dims carry the standardized age `z = (age - 60) / 18` times
/// `marker_strength`; the label rate follows a logistic link
/// `P(Y=1 | age) = sigmoid(logit(base_rate_v0) + age_effect * z)`, so
/// `base_rate_v0` is the rate at the mean age and `base_rate_v1` is unused.
pub fn continuous_nuisance_variant(config: &GenConfig, age_effect: f64) -> Result<Dataset> {
    config.validate()?;
    if !(config.base_rate_v0 > 0.0 && config.base_rate_v0 < 1.0) {
        return Err(Error::InvalidConfig(
            "continuous variant needs base_rate_v0 strictly inside (0, 1)".to_string(),
        ));
    }
    if !age_effect.is_finite() {
        return Err(Error::InvalidConfig("age_effect must be finite".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim_roles = roles(config);
    let age_dist = Normal::new(AGE_MEAN, AGE_SD).unwrap();
    let base_logit = (config.base_rate_v0 / (1.0 - config.base_rate_v0)).ln();
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let age = age_dist.sample(&mut rng).clamp(AGE_MIN, AGE_MAX);
        let z = (age - AGE_MEAN) / AGE_SD;
        let p_y = crate::net::sigmoid(base_logit + age_effect * z);
        let y = Bernoulli::new(p_y).unwrap().sample(&mut rng) as u8;
        let features = draw_features(&mut rng, config, &dim_roles, y, z);
        let aux_labels = draw_aux_labels(&mut rng, config.aux_label_count, y);
        samples.push(Sample {
            features,
            label: y,
            nuisance: age,
            group_id: i as u64,
            aux_labels,
            domain: Domain::Source,
        });
    }
    let mut ds = Dataset::new(samples, config.dim, NuisanceKind::Continuous)?;
    ds.meta = DatasetMeta {
        seed: Some(config.seed),
        config_hash: Some(config.fingerprint()),
    };
    Ok(ds)
}

/// Expected CSV header for dimension `d`: `f0,...,f{d-1},label,nuisance,group_id,domain`.
fn expected_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    h.extend(
        ["label", "nuisance", "group_id", "domain"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

/// Write a dataset to CSV. Floats use Rust's shortest round-trip decimal
/// formatting, so [`load_csv`] recovers them bit-exactly.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    if dataset.samples.iter().any(|s| !s.aux_labels.is_empty()) {
        return Err(Error::InvalidConfig(
            "auxiliary labels cannot be represented in the fixed CSV schema".to_string(),
        ));
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", expected_header(dataset.dim).join(","))?;
    for s in &dataset.samples {
        for v in &s.features {
            write!(w, "{v},")?;
        }
        writeln!(w, "{},{},{},{}", s.label, s.nuisance, s.group_id, s.domain)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`save_csv`].
///
/// The nuisance kind is inferred: binary when every nuisance value is 0 or 1
/// (including the empty file), continuous otherwise. Generation metadata is
/// not stored in the CSV and comes back empty.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("empty file, expected a header".to_string()))??;
    let header: Vec<&str> = header_line.split(',').collect();
    if header.len() < 5 {
        return Err(Error::Parse(format!(
            "header has {} columns, need at least 5",
            header.len()
        )));
    }
    let dim = header.len() - 4;
    let expected = expected_header(dim);
    for (got, want) in header.iter().zip(&expected) {
        if got != want {
            return Err(Error::Parse(format!(
                "unexpected header column {got:?}, expected {want:?}"
            )));
        }
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = lineno + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 4 {
            return Err(Error::Parse(format!(
                "row {row}: {} columns, expected {}",
                fields.len(),
                dim + 4
            )));
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {row}: bad {what} value {s:?}")))
        };
        let features = fields[..dim]
            .iter()
            .map(|s| parse_f64(s, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        let label = match fields[dim] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Parse(format!(
                    "row {row}: label must be 0 or 1, got {other:?}"
                )))
            }
        };
        let nuisance = parse_f64(fields[dim + 1], "nuisance")?;
        let group_id = fields[dim + 2].parse::<u64>().map_err(|_| {
            Error::Parse(format!(
                "row {row}: bad group_id value {:?}",
                fields[dim + 2]
            ))
        })?;
        let domain = match fields[dim + 3] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => {
                return Err(Error::Parse(format!(
                    "row {row}: domain must be source or target, got {other:?}"
                )))
            }
        };
        samples.push(Sample {
            features,
            label,
            nuisance,
            group_id,
            aux_labels: Vec::new(),
            domain,
        });
    }
    let kind = if samples
        .iter()
        .all(|s| s.nuisance == 0.0 || s.nuisance == 1.0)
    {
        NuisanceKind::Binary
    } else {
        NuisanceKind::Continuous
    };
    Dataset::new(samples, dim, kind)
}

/// Assign a continuous nuisance value to its age bin given ascending edges;
/// bin `k` holds values in `[edges[k-1], edges[k])`.
pub fn age_bin(value: f64, edges: &[f64]) -> usize {
    edges.iter().position(|&e| value < e).unwrap_or(edges.len())
}
