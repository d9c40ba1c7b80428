use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use deconf::synthgen::{GenConfig, NuisanceKind};
use deconf::trainers::{AdvConfig, TrainConfig};

/// Which training strategy a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Standard,
    Adversarial,
    InstanceWeighting,
    Matching,
    Covariate,
}

impl TrainerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainerKind::Standard => "standard",
            TrainerKind::Adversarial => "adversarial",
            TrainerKind::InstanceWeighting => "instance_weighting",
            TrainerKind::Matching => "matching",
            TrainerKind::Covariate => "covariate",
        }
    }
}

/// One experiment, fully described by a TOML file. Unknown keys anywhere are
/// parse errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub trainer: TrainerSection,
    pub generation: GenerationSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Output directory; the --out flag overrides it.
    #[serde(default)]
    pub out_dir: Option<String>,
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Fraction of source groups held out as the source test set.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_replicates() -> usize {
    3
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub kind: TrainerKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub n_samples: usize,
    pub dim: usize,
    pub p_v: f64,
    pub signal_strength: f64,
    pub marker_strength: f64,
    pub noise_sd: f64,
    pub signal_dims: Vec<usize>,
    pub marker_dims: Vec<usize>,
    pub source: RatePair,
    pub target: RatePair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePair {
    pub base_rate_v0: f64,
    pub base_rate_v1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            lr_decay_factor: t.lr_decay_factor,
            patience_epochs: t.patience_epochs,
            val_fraction: t.val_fraction,
            max_epochs: t.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarySection {
    pub lambda_weight: f64,
    pub hidden: Vec<usize>,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub lr: f64,
    pub nuisance: NuisanceKind,
}

impl Default for AdversarySection {
    fn default() -> Self {
        let a = AdvConfig::default();
        Self {
            lambda_weight: a.lambda_weight,
            hidden: vec![32, 32, 32],
            pretrain_epochs: a.adversary_pretrain_epochs,
            joint_epochs: a.joint_epochs,
            lr: a.adversary_lr,
            nuisance: NuisanceKind::Binary,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub probe: bool,
    pub orthogonality: bool,
    pub export_scores: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            probe: true,
            orthogonality: true,
            export_scores: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub n_per_view: usize,
    pub overall_rate: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: vec![1.0, 2.0, 10.0, 100.0],
            n_per_view: 10_000,
            overall_rate: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.run.replicates == 0 {
            return Err("run.replicates must be >= 1".to_string());
        }
        if !(self.run.test_fraction > 0.0 && self.run.test_fraction < 1.0) {
            return Err("run.test_fraction must be in (0, 1)".to_string());
        }
        self.source_gen_config(0)
            .validate()
            .map_err(|e| e.to_string())?;
        self.train_config(0).validate().map_err(|e| e.to_string())?;
        self.adv_config().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Stable hash of the parsed config; independent of TOML formatting.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Replicate `i` trains with this seed.
    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.run
            .master_seed
            .wrapping_add(replicate as u64 * 10_007)
    }

    pub fn source_gen_config(&self, seed: u64) -> GenConfig {
        self.gen_config(&self.generation.source, seed)
    }

    pub fn target_gen_config(&self, seed: u64) -> GenConfig {
        self.gen_config(&self.generation.target, seed)
    }

    fn gen_config(&self, rates: &RatePair, seed: u64) -> GenConfig {
        let g = &self.generation;
        GenConfig {
            n_samples: g.n_samples,
            dim: g.dim,
            p_v: g.p_v,
            base_rate_v0: rates.base_rate_v0,
            base_rate_v1: rates.base_rate_v1,
            signal_strength: g.signal_strength,
            marker_strength: g.marker_strength,
            noise_sd: g.noise_sd,
            signal_dims: g.signal_dims.clone(),
            marker_dims: g.marker_dims.clone(),
            seed,
            aux_label_count: 0,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            initial_lr: t.initial_lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            lr_decay_factor: t.lr_decay_factor,
            patience_epochs: t.patience_epochs,
            val_fraction: t.val_fraction,
            max_epochs: t.max_epochs,
            seed,
        }
    }

    pub fn adv_config(&self) -> AdvConfig {
        let a = &self.adversary;
        let mut layers = vec![1];
        layers.extend_from_slice(&a.hidden);
        layers.push(1);
        let out = match a.nuisance {
            NuisanceKind::Binary => deconf::net::OutputActivation::Sigmoid,
            NuisanceKind::Continuous => deconf::net::OutputActivation::Linear,
        };
        AdvConfig {
            lambda_weight: a.lambda_weight,
            adversary_spec: deconf::net::NetworkSpec::new(
                layers,
                deconf::net::HiddenActivation::Relu,
                out,
            )
            .expect("adversary layers validated"),
            adversary_pretrain_epochs: a.pretrain_epochs,
            joint_epochs: a.joint_epochs,
            adversary_lr: a.lr,
            nuisance_kind: a.nuisance,
        }
    }
}
