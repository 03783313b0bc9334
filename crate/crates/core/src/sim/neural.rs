//! Feedforward network behavior loaded from a JSON weights file.
//!
//! ```json
//! {"layers": [{"w": [[...], ...], "b": [...], "act": "sigmoid"}],
//!  "out_lo": [-1.0], "out_hi": [1.0]}
//! ```
//!
//! `w` is row-major with one row per output unit. The final layer output
//! is clamped to `[out_lo, out_hi]` and then mapped affinely onto the
//! controller output box.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, BehaviorKind};
use crate::error::{Error, Result};
use crate::space::BoxSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Id,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
            Activation::Id => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub layers: Vec<Layer>,
    pub out_lo: Vec<f64>,
    pub out_hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NeuralBehavior {
    weights: Weights,
    input: BoxSpace,
    output: BoxSpace,
}

impl NeuralBehavior {
    pub fn new(weights: Weights, input: BoxSpace, output: BoxSpace) -> Result<Self> {
        if weights.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        let mut width = input.dims();
        for (n, layer) in weights.layers.iter().enumerate() {
            if layer.w.len() != layer.b.len() {
                return Err(Error::Dimension(format!(
                    "layer {n}: {} weight rows but {} biases",
                    layer.w.len(),
                    layer.b.len()
                )));
            }
            if let Some(row) = layer.w.iter().find(|r| r.len() != width) {
                return Err(Error::Dimension(format!(
                    "layer {n}: weight row has {} columns, expected {width}",
                    row.len()
                )));
            }
            width = layer.b.len();
        }
        if width != output.dims() || weights.out_lo.len() != width || weights.out_hi.len() != width {
            return Err(Error::Dimension(format!(
                "network emits {width} values, output space has {} dimensions",
                output.dims()
            )));
        }
        if weights.out_lo.iter().zip(&weights.out_hi).any(|(lo, hi)| lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Dimension("out_lo must be below out_hi".into()));
        }
        Ok(NeuralBehavior {
            weights,
            input,
            output,
        })
    }

    pub fn load(path: &Path, input: BoxSpace, output: BoxSpace) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let weights: Weights = serde_json::from_str(&text)?;
        NeuralBehavior::new(weights, input, output)
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }
}

impl Behavior for NeuralBehavior {
    fn input_space(&self) -> &BoxSpace {
        &self.input
    }

    fn output_space(&self) -> &BoxSpace {
        &self.output
    }

    fn kind(&self) -> BehaviorKind {
        BehaviorKind::Neural
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.input.clamp(x);
        for layer in &self.weights.layers {
            h = layer
                .w
                .iter()
                .zip(&layer.b)
                .map(|(row, b)| layer.act.apply(row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b))
                .collect();
        }
        let (lo, hi) = (&self.weights.out_lo, &self.weights.out_hi);
        let mapped: Vec<f64> = h
            .iter()
            .enumerate()
            .map(|(j, y)| {
                let t = (y.clamp(lo[j], hi[j]) - lo[j]) / (hi[j] - lo[j]);
                self.output.lower()[j] + t * self.output.extent(j)
            })
            .collect();
        self.output.clamp(&mapped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoxSpace {
        BoxSpace::new(vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let w = Weights {
            layers: vec![
                Layer {
                    w: vec![vec![0.0, 0.0]; 3],
                    b: vec![0.0; 3],
                    act: Activation::Sigmoid,
                },
                Layer {
                    w: vec![vec![0.0; 3]],
                    b: vec![0.0],
                    act: Activation::Tanh,
                },
            ],
            out_lo: vec![-1.0],
            out_hi: vec![1.0],
        };
        let input = BoxSpace::new(vec![-1.2, -0.07], vec![0.6, 0.07]).unwrap();
        let nb = NeuralBehavior::new(w, input, unit()).unwrap();
        assert_eq!(nb.eval(&[-0.5, 0.01]), vec![0.0]);
    }

    #[test]
    fn identity_layer_clamps() {
        let w = Weights {
            layers: vec![Layer {
                w: vec![vec![1.0]],
                b: vec![0.0],
                act: Activation::Id,
            }],
            out_lo: vec![-1.0],
            out_hi: vec![1.0],
        };
        let input = BoxSpace::new(vec![-3.0], vec![3.0]).unwrap();
        let nb = NeuralBehavior::new(w, input, unit()).unwrap();
        assert_eq!(nb.eval(&[0.25]), vec![0.25]);
        assert_eq!(nb.eval(&[2.5]), vec![1.0]);
        assert_eq!(nb.eval(&[-2.5]), vec![-1.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = Weights {
            layers: vec![Layer {
                w: vec![vec![1.0, 2.0]],
                b: vec![0.0],
                act: Activation::Id,
            }],
            out_lo: vec![-1.0],
            out_hi: vec![1.0],
        };
        let input = BoxSpace::new(vec![-3.0], vec![3.0]).unwrap();
        assert!(matches!(
            NeuralBehavior::new(w, input, unit()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn weights_json_schema() {
        let src = r#"{"layers":[{"w":[[0.5]],"b":[0.1],"act":"sigmoid"}],"out_lo":[0.0],"out_hi":[1.0]}"#;
        let w: Weights = serde_json::from_str(src).unwrap();
        assert_eq!(w.layers[0].act, Activation::Sigmoid);
        assert!(serde_json::from_str::<Weights>(&src.replace("sigmoid", "relu")).is_err());
    }

    #[test]
    fn reference_weights_match_golden_table() {
        use crate::sim::{MountainCar, Plant};
        let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        let mc = MountainCar::new();
        let net = NeuralBehavior::load(
            &data.join("reference_controller.json"),
            mc.controller_input_space().clone(),
            mc.controller_output_space().clone(),
        )
        .unwrap();
        let golden: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(data.join("reference_controller_golden.json")).unwrap()).unwrap();
        let points = golden["points"].as_array().unwrap();
        assert_eq!(points.len(), 10);
        for p in points {
            let x: Vec<f64> = serde_json::from_value(p["input"].clone()).unwrap();
            let y: Vec<f64> = serde_json::from_value(p["output"].clone()).unwrap();
            let got = net.eval(&x);
            assert!((got[0] - y[0]).abs() < 1e-12, "{x:?}: {} vs {}", got[0], y[0]);
        }
    }
}
