//! Feed-forward policy inference from a portable weights document.
//!
//! Document layout (JSON):
//!
//! ```json
//! {
//!   "input_dim": 6,
//!   "layers": [
//!     {"rows": 256, "cols": 6, "weights": [...], "bias": [...], "activation": "tanh"},
//!     {"rows": 256, "cols": 256, "weights": [...], "bias": [...], "activation": "tanh"},
//!     {"rows": 6, "cols": 256, "weights": [...], "bias": [...], "activation": "linear"}
//!   ]
//! }
//! ```
//!
//! `weights` is row-major with `rows` outputs and `cols` inputs. The six
//! outputs are the per-axis mean and spread of the training-time Gaussian
//! policy; inference uses the three means only.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::ControlVector;
use crate::error::{Error, Result};

pub const OUTPUT_DIM: usize = 6;
pub const ALLOWED_INPUT_DIMS: [usize; 2] = [6, 11];
pub const REFERENCE_HIDDEN: [usize; 2] = [256, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Self::Tanh),
            "linear" | "identity" => Ok(Self::Linear),
            other => Err(Error::Weights(format!("unknown activation `{other}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDocument {
    pub input_dim: usize,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Parses and validates a weights document.
pub fn mlp_load(document: &str) -> Result<MlpPolicy> {
    let doc: WeightsDocument = serde_json::from_str(document).map_err(|e| Error::Weights(e.to_string()))?;
    MlpPolicy::from_document(&doc)
}

impl MlpPolicy {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        mlp_load(&text)
    }

    pub fn from_document(doc: &WeightsDocument) -> Result<Self> {
        if !ALLOWED_INPUT_DIMS.contains(&doc.input_dim) {
            return Err(Error::Weights(format!(
                "input_dim must be one of {ALLOWED_INPUT_DIMS:?}, got {}",
                doc.input_dim
            )));
        }
        if doc.layers.is_empty() {
            return Err(Error::Weights("no layers".into()));
        }
        let mut expected_cols = doc.input_dim;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.iter().enumerate() {
            if l.cols != expected_cols {
                return Err(Error::Weights(format!(
                    "layer {i} expects {} inputs but receives {expected_cols}",
                    l.cols
                )));
            }
            if l.rows == 0 {
                return Err(Error::Weights(format!("layer {i} has no outputs")));
            }
            if l.weights.len() != l.rows * l.cols {
                return Err(Error::Weights(format!(
                    "layer {i} weights hold {} values, expected {}",
                    l.weights.len(),
                    l.rows * l.cols
                )));
            }
            if l.bias.len() != l.rows {
                return Err(Error::Weights(format!(
                    "layer {i} bias holds {} values, expected {}",
                    l.bias.len(),
                    l.rows
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::Weights(format!("layer {i} contains non-finite values")));
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_column_slice(&l.bias),
                activation: Activation::parse(&l.activation)?,
            });
            expected_cols = l.rows;
        }
        if expected_cols != OUTPUT_DIM {
            return Err(Error::Weights(format!(
                "final layer has {expected_cols} outputs, expected {OUTPUT_DIM}"
            )));
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(Error::Weights("final layer must be linear".into()));
        }
        Ok(Self {
            input_dim: doc.input_dim,
            layers,
        })
    }

    pub fn to_document(&self) -> WeightsDocument {
        WeightsDocument {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    // nalgebra stores column-major; the document is row-major
                    weights: l.weights.transpose().iter().copied().collect(),
                    bias: l.bias.iter().copied().collect(),
                    activation: l.activation.name().to_string(),
                })
                .collect(),
        }
    }

    /// Randomly initialized policy with uniform `±1/√fan_in` weights.
    pub fn random(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(OUTPUT_DIM);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (cols, rows) = (w[0], w[1]);
                let bound = 1.0 / (cols as f64).sqrt();
                LayerDocument {
                    rows,
                    cols,
                    weights: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: (0..rows).map(|_| rng.random_range(-bound..bound)).collect(),
                    activation: if i + 2 == dims.len() { "linear" } else { "tanh" }.to_string(),
                }
            })
            .collect();
        Self::from_document(&WeightsDocument { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Two tanh hidden layers of width 256 followed by a linear output.
    pub fn is_reference_architecture(&self) -> bool {
        self.layers.len() == 3
            && self.layers[..2]
                .iter()
                .zip(REFERENCE_HIDDEN)
                .all(|(l, w)| l.weights.nrows() == w && l.activation == Activation::Tanh)
    }

    /// Raw network outputs.
    pub fn forward(&self, observation: &[f64]) -> Result<DVector<f64>> {
        if observation.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: observation.len(),
            });
        }
        let mut x = DVector::from_column_slice(observation);
        for layer in &self.layers {
            x = &layer.weights * x + &layer.bias;
            if layer.activation == Activation::Tanh {
                x.apply(|v| *v = v.tanh());
            }
        }
        Ok(x)
    }

    /// Mean thrust from the first three outputs, clamped to `±u_max`.
    pub fn act(&self, observation: &[f64], u_max: f64) -> Result<ControlVector> {
        let out = self.forward(observation)?;
        Ok(ControlVector::new(out[0], out[1], out[2]).clamped(u_max))
    }
}

pub fn mlp_act(policy: &MlpPolicy, observation: &[f64], u_max: f64) -> Result<ControlVector> {
    policy.act(observation, u_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: usize, cols: usize, fill: f64, activation: &str) -> LayerDocument {
        LayerDocument {
            rows,
            cols,
            weights: vec![fill; rows * cols],
            bias: vec![fill; rows],
            activation: activation.into(),
        }
    }

    fn reference_doc(input_dim: usize, fill: f64) -> WeightsDocument {
        WeightsDocument {
            input_dim,
            layers: vec![
                layer(256, input_dim, fill, "tanh"),
                layer(256, 256, fill, "tanh"),
                layer(6, 256, fill, "linear"),
            ],
        }
    }

    /// Plain nested-loop forward pass over the document, independent of nalgebra.
    #[allow(clippy::needless_range_loop)]
    fn oracle_forward(doc: &WeightsDocument, obs: &[f64]) -> Vec<f64> {
        let mut x = obs.to_vec();
        for l in &doc.layers {
            let mut y = vec![0.0; l.rows];
            for (r, out) in y.iter_mut().enumerate() {
                let mut acc = l.bias[r];
                for c in 0..l.cols {
                    acc += l.weights[r * l.cols + c] * x[c];
                }
                *out = if l.activation == "tanh" { acc.tanh() } else { acc };
            }
            x = y;
        }
        x
    }

    #[test]
    fn loads_reference_shapes() {
        for dim in [6, 11] {
            let text = serde_json::to_string(&reference_doc(dim, 0.0)).unwrap();
            let p = mlp_load(&text).unwrap();
            assert_eq!(p.input_dim(), dim);
            assert!(p.is_reference_architecture());
        }
    }

    #[test]
    fn rejects_seven_inputs() {
        let text = serde_json::to_string(&reference_doc(7, 0.0)).unwrap();
        assert!(matches!(mlp_load(&text), Err(Error::Weights(_))));
    }

    #[test]
    fn rejects_broken_chain() {
        let mut doc = reference_doc(6, 0.0);
        doc.layers[1] = layer(256, 128, 0.0, "tanh");
        assert!(MlpPolicy::from_document(&doc).is_err());
    }

    #[test]
    fn rejects_unknown_activation() {
        let mut doc = reference_doc(6, 0.0);
        doc.layers[0].activation = "relu6".into();
        let err = MlpPolicy::from_document(&doc).unwrap_err();
        assert!(err.to_string().contains("relu6"));
    }

    #[test]
    fn rejects_wrong_output_and_bad_lengths() {
        let mut doc = reference_doc(6, 0.0);
        doc.layers[2] = layer(4, 256, 0.0, "linear");
        assert!(MlpPolicy::from_document(&doc).is_err());

        let mut doc = reference_doc(6, 0.0);
        doc.layers[0].weights.pop();
        assert!(MlpPolicy::from_document(&doc).is_err());

        let mut doc = reference_doc(6, 0.0);
        doc.layers[2].activation = "tanh".into();
        assert!(MlpPolicy::from_document(&doc).is_err());

        assert!(mlp_load("{not json").is_err());
        assert!(mlp_load(r#"{"input_dim": 6, "layers": []}"#).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpPolicy::from_document(&reference_doc(6, 0.0)).unwrap();
        let u = p.act(&[0.3, -0.1, 0.4, 0.0, 0.2, 0.0], 1.0).unwrap();
        assert_eq!(u, ControlVector::zero());
    }

    #[test]
    fn single_path_matches_oracle() {
        // one active path input 0 → hidden 0 → hidden 0 → output 0
        let mut doc = reference_doc(6, 0.0);
        doc.layers[0].weights[0] = 0.8;
        doc.layers[1].weights[0] = 1.5;
        doc.layers[2].weights[0] = 0.7;
        doc.layers[2].bias[0] = 0.05;
        let p = MlpPolicy::from_document(&doc).unwrap();
        let obs = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let u = p.act(&obs, 1.0).unwrap();
        let expected = oracle_forward(&doc, &obs)[0];
        assert!((expected - (0.7 * (1.5 * 0.8f64.tanh()).tanh() + 0.05)).abs() < 1e-15);
        assert!((u.0.x - expected).abs() < 1e-15);
        assert_eq!(u.0.y, 0.0);
    }

    #[test]
    fn random_policy_matches_oracle() {
        let p = MlpPolicy::random(11, &[16, 16], 7).unwrap();
        let doc = p.to_document();
        let obs: Vec<f64> = (0..11).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = p.forward(&obs).unwrap();
        let want = oracle_forward(&doc, &obs);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn document_round_trip() {
        let p = MlpPolicy::random(6, &[8, 8], 3).unwrap();
        let text = serde_json::to_string(&p.to_document()).unwrap();
        assert_eq!(mlp_load(&text).unwrap(), p);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = MlpPolicy::random(6, &[4], 1).unwrap();
        assert!(matches!(
            p.act(&[0.0; 11], 1.0),
            Err(Error::DimensionMismatch {
                expected: 6,
                actual: 11
            })
        ));
    }

    #[test]
    fn outputs_clamped_for_large_weights() {
        let p = MlpPolicy::from_document(&reference_doc(6, 3.0)).unwrap();
        let u = p.act(&[1.0; 6], 1.0).unwrap();
        assert_eq!(u.0.amax(), 1.0);
    }
}
