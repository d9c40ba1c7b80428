use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Adversary, CovariateHead, TrainedModel, TrainingReport};
use crate::net::{DenseLayer, NetworkParams, NetworkSpec};
use crate::{Error, Result};

/// On-disk model format: JSON with flattened row-major weight matrices.
/// Floats are written with shortest round-trip decimals, so loading
/// reproduces every parameter bit-exactly.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config_hash: String,
    spec: NetworkSpec,
    layers: Vec<LayerFile>,
    covariate: Option<CovariateHead>,
    adversary: Option<AdversaryFile>,
    report: TrainingReport,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdversaryFile {
    spec: NetworkSpec,
    layers: Vec<LayerFile>,
}

const FORMAT_VERSION: u32 = 1;

fn layers_to_file(params: &NetworkParams) -> Vec<LayerFile> {
    params
        .layers
        .iter()
        .map(|l| LayerFile {
            out_dim: l.out_dim(),
            in_dim: l.in_dim(),
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn layers_from_file(layers: Vec<LayerFile>, spec: &NetworkSpec) -> Result<NetworkParams> {
    let parsed = NetworkParams {
        layers: layers
            .into_iter()
            .map(|l| {
                if l.weights.len() != l.out_dim * l.in_dim || l.bias.len() != l.out_dim {
                    return Err(Error::Parse(format!(
                        "layer claims {}x{} but holds {} weights and {} biases",
                        l.out_dim,
                        l.in_dim,
                        l.weights.len(),
                        l.bias.len()
                    )));
                }
                Ok(DenseLayer {
                    weights: Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights)
                        .expect("length checked"),
                    bias: Array1::from_vec(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    if !parsed.matches(spec) {
        return Err(Error::Parse(
            "stored layer shapes do not match the stored spec".to_string(),
        ));
    }
    if !parsed.all_finite() {
        return Err(Error::NonFinite("stored parameters are not finite".to_string()));
    }
    Ok(parsed)
}

/// Write a trained model (and its adversary, if any) to a self-describing
/// JSON file. `config_hash` ties the file back to the run configuration.
pub fn save_model(model: &TrainedModel, config_hash: &str, path: &Path) -> Result<()> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        spec: model.spec.clone(),
        layers: layers_to_file(&model.params),
        covariate: model.covariate,
        adversary: model.adversary.as_ref().map(|a| AdversaryFile {
            spec: a.spec.clone(),
            layers: layers_to_file(&a.params),
        }),
        report: model.report.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Read a model written by [`save_model`]; returns the model and the stored
/// config hash.
pub fn load_model(path: &Path) -> Result<(TrainedModel, String)> {
    let json = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&json)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    let params = layers_from_file(file.layers, &file.spec)?;
    let adversary = match file.adversary {
        None => None,
        Some(a) => {
            let params = layers_from_file(a.layers, &a.spec)?;
            Some(Adversary {
                spec: a.spec,
                params,
            })
        }
    };
    Ok((
        TrainedModel {
            spec: file.spec,
            params,
            covariate: file.covariate,
            adversary,
            report: file.report,
        },
        file.config_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainers::test_support::easy_dataset;
    use crate::trainers::{train_covariate, train_standard, TrainConfig};

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = easy_dataset(800, 1);
        let model = train_standard(&ds, &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, "abc123", &path).unwrap();
        let (back, hash) = load_model(&path).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(back.spec, model.spec);
        assert_eq!(back.params, model.params);
        assert_eq!(back.report, model.report);
        assert_eq!(back.covariate, model.covariate);
    }

    #[test]
    fn round_trip_keeps_covariate_head() {
        let ds = easy_dataset(800, 2);
        let model = train_covariate(&ds, &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, "h", &path).unwrap();
        let (back, _) = load_model(&path).unwrap();
        assert_eq!(back.covariate, model.covariate);
        // Scores are reproduced bit-exactly.
        let x = ds.features_matrix();
        assert_eq!(
            back.scores(x.view()).unwrap(),
            model.scores(x.view()).unwrap()
        );
    }

    #[test]
    fn corrupted_shapes_are_rejected() {
        let ds = easy_dataset(600, 3);
        let model = train_standard(&ds, &quick()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, "h", &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let broken = text.replacen("\"in_dim\": 8", "\"in_dim\": 9", 1);
        std::fs::write(&path, broken).unwrap();
        assert!(load_model(&path).is_err());
    }
}
