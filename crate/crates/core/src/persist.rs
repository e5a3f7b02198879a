//! Versioned model persistence: a structured JSON document holding the
//! basis, network, blend, and scaling constants. Floats are written with
//! shortest-round-trip encoding, so a loaded model reproduces every
//! prediction of the saved one bit for bit. A format-version field gates
//! loading.

use crate::dist::BlendSpec;
use crate::error::{Error, Result};
use crate::network::{Activation, Head, NetworkParams};
use crate::regression::{FittedModel, Mode, Scaling, TrainInfo};
use crate::splines::SplineBasis;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkRecord {
    activation: Activation,
    head: Head,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplineRecord {
    order: usize,
    num_basis: usize,
    /// Interior knots only; the boundary multiplicities are rebuilt.
    interior_knots: Vec<f64>,
}

/// Training provenance stored with the model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_hash: String,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub epochs_run: usize,
    pub restarts: usize,
}

/// The on-disk document.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    mode: Mode,
    spline: SplineRecord,
    network: NetworkRecord,
    blend: Option<BlendSpec>,
    scaling: Scaling,
    sqrt_transform: bool,
    pub metadata: Metadata,
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, config_hash: &str) -> Self {
        let d = model.basis.order();
        let t = model.basis.knots();
        let interior = t[d..t.len() - d].to_vec();
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        ModelFile {
            format_version: FORMAT_VERSION,
            mode: model.mode,
            spline: SplineRecord {
                order: d,
                num_basis: model.basis.num_basis(),
                interior_knots: interior,
            },
            network: NetworkRecord {
                activation: model.network.activation,
                head: model.network.head,
                layers: model
                    .network
                    .weights
                    .iter()
                    .zip(&model.network.biases)
                    .map(|(w, b)| LayerRecord {
                        rows: w.nrows(),
                        cols: w.ncols(),
                        weights: w.iter().cloned().collect(),
                        biases: b.to_vec(),
                    })
                    .collect(),
            },
            blend: model.blend,
            scaling: model.scaling.clone(),
            sqrt_transform: model.sqrt_transform,
            metadata: Metadata {
                seed: model.info.seed,
                config_hash: config_hash.to_string(),
                best_val_loss: finite(model.info.best_val_loss),
                final_train_loss: finite(model.info.final_train_loss),
                epochs_run: model.info.epochs_run,
                restarts: model.info.restarts,
            },
        }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Persistence(format!(
                "model file is format version {}, this build reads version {}",
                self.format_version, FORMAT_VERSION
            )));
        }
        let basis = SplineBasis::with_interior_knots(
            self.spline.num_basis,
            self.spline.order,
            &self.spline.interior_knots,
        )?;
        let mut weights = Vec::with_capacity(self.network.layers.len());
        let mut biases = Vec::with_capacity(self.network.layers.len());
        for layer in self.network.layers {
            if layer.weights.len() != layer.rows * layer.cols || layer.biases.len() != layer.rows {
                return Err(Error::Persistence("layer shape mismatch".into()));
            }
            weights.push(
                Array2::from_shape_vec((layer.rows, layer.cols), layer.weights)
                    .map_err(|e| Error::Persistence(e.to_string()))?,
            );
            biases.push(Array1::from_vec(layer.biases));
        }
        let network = NetworkParams {
            weights,
            biases,
            activation: self.network.activation,
            head: self.network.head,
        };
        network.validate()?;
        if self.mode == Mode::Spqrx && self.blend.is_none() {
            return Err(Error::Persistence("tail model without blend spec".into()));
        }
        Ok(FittedModel {
            mode: self.mode,
            basis,
            network,
            blend: self.blend,
            scaling: self.scaling,
            sqrt_transform: self.sqrt_transform,
            info: TrainInfo {
                best_val_loss: self.metadata.best_val_loss.unwrap_or(f64::INFINITY),
                final_train_loss: self.metadata.final_train_loss.unwrap_or(f64::NAN),
                epochs_run: self.metadata.epochs_run,
                restarts: self.metadata.restarts,
                seed: self.metadata.seed,
                log: Vec::new(),
            },
        })
    }
}

/// Serialize a model to the versioned JSON document.
pub fn to_json(model: &FittedModel, config_hash: &str) -> Result<String> {
    serde_json::to_string_pretty(&ModelFile::from_model(model, config_hash))
        .map_err(|e| Error::Persistence(e.to_string()))
}

/// Parse a model from the JSON document, rejecting unknown versions.
pub fn from_json(json: &str) -> Result<FittedModel> {
    let file: ModelFile =
        serde_json::from_str(json).map_err(|e| Error::Persistence(e.to_string()))?;
    file.into_model()
}

pub fn save_model(model: &FittedModel, path: &Path, config_hash: &str) -> Result<()> {
    std::fs::write(path, to_json(model, config_hash)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let json = std::fs::read_to_string(path)?;
    from_json(&json)
}

/// Read only the metadata block (for reporting).
pub fn load_metadata(path: &Path) -> Result<Metadata> {
    let json = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&json).map_err(|e| Error::Persistence(e.to_string()))?;
    Ok(file.metadata)
}

/// Hex fingerprint of a configuration document, stored in model metadata.
pub fn config_fingerprint(config_text: &str) -> String {
    format!("{:016x}", crate::util::fnv1a(config_text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::XiActivation;
    use crate::regression::{fit_spqrx, Architecture, TrainingConfig};
    use crate::simulate::{generate, SimDesign, SimSpec};

    fn quick_model() -> FittedModel {
        let (data, _) = generate(&SimSpec {
            design: SimDesign::LogNormal,
            n: 300,
            seed: 21,
        })
        .unwrap();
        let arch = Architecture {
            num_basis: 8,
            hidden: vec![4],
            xi_activation: XiActivation::ScaledTanh { lo: -0.5, hi: 0.7 },
            ..Architecture::default()
        };
        let config = TrainingConfig {
            seed: 21,
            max_epochs: 30,
            ..TrainingConfig::default()
        };
        let blend = BlendSpec::new(0.8, 0.95, 5.0, 5.0).unwrap();
        fit_spqrx(&data, &arch, blend, &config).unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let model = quick_model();
        let json = to_json(&model, "abc").unwrap();
        let loaded = from_json(&json).unwrap();

        assert_eq!(model.network, loaded.network);
        assert_eq!(model.basis, loaded.basis);
        for x in [[0.1, 0.5, 0.9], [0.7, 0.7, 0.2], [0.05, 0.95, 0.55]] {
            for tau in [0.1, 0.5, 0.9, 0.999] {
                let a = model.quantile(&x, tau).unwrap();
                let b = loaded.quantile(&x, tau).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "quantile bits differ");
            }
            let y = 3.0;
            assert_eq!(
                model.cdf(&x, y).unwrap().to_bits(),
                loaded.cdf(&x, y).unwrap().to_bits()
            );
            assert_eq!(
                model.density(&x, y).unwrap().to_bits(),
                loaded.density(&x, y).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn version_mismatch_is_rejected_with_message() {
        let model = quick_model();
        let json = to_json(&model, "abc").unwrap();
        let bumped = json.replace(
            &format!("\"format_version\": {FORMAT_VERSION}"),
            "\"format_version\": 99",
        );
        let err = from_json(&bumped).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn metadata_survives_the_file() {
        let model = quick_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path, "deadbeef").unwrap();
        let meta = load_metadata(&path).unwrap();
        assert_eq!(meta.config_hash, "deadbeef");
        assert_eq!(meta.seed, 21);
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.mode, model.mode);
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(config_fingerprint("hello"), config_fingerprint("hello"));
        assert_ne!(config_fingerprint("a"), config_fingerprint("b"));
    }
}
