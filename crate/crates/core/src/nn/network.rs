use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }
}

/// One fully connected layer `sigma(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Feed-forward network `N: R^n -> R^p` whose last layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    input_dim: usize,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    input_dim: usize,
    layers: Vec<RawLayer>,
}

impl MlpNetwork {
    /// Validates the layer chain. The final activation must be identity.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Shape {
                layer: 0,
                reason: "network has no layers".into(),
            });
        }
        let mut width = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != width {
                return Err(NetworkError::Shape {
                    layer: i,
                    reason: format!(
                        "expects {} inputs but previous width is {}",
                        l.in_dim(),
                        width
                    ),
                });
            }
            if l.bias.len() != l.out_dim() {
                return Err(NetworkError::Shape {
                    layer: i,
                    reason: format!(
                        "bias has {} entries for {} outputs",
                        l.bias.len(),
                        l.out_dim()
                    ),
                });
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(NetworkError::Shape {
                    layer: i,
                    reason: "non-finite parameter".into(),
                });
            }
            width = l.out_dim();
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(NetworkError::FinalActivation);
        }
        Ok(Self { input_dim, layers })
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let raw: RawNetwork =
            serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (i, rl) in raw.layers.into_iter().enumerate() {
            let rows = rl.weights.len();
            let cols = rl.weights.first().map_or(0, Vec::len);
            if rl.weights.iter().any(|r| r.len() != cols) {
                return Err(NetworkError::Shape {
                    layer: i,
                    reason: "ragged weight rows".into(),
                });
            }
            let flat: Vec<f64> = rl.weights.into_iter().flatten().collect();
            layers.push(Layer::new(
                DMatrix::from_row_slice(rows, cols, &flat),
                DVector::from_vec(rl.bias),
                rl.activation,
            ));
        }
        Self::new(raw.input_dim, layers)
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let raw = RawNetwork {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| RawLayer {
                    weights: l
                        .weight
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                    activation: l.activation,
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("network serializes")
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Pointwise evaluation `N(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "network input dimension");
        let mut h = DVector::from_column_slice(x);
        for l in &self.layers {
            let mut z = &l.weight * &h + &l.bias;
            z.apply(|v| *v = l.activation.apply(*v));
            h = z;
        }
        h.iter().copied().collect()
    }

    /// A network that outputs zeros everywhere (a single zero affine layer).
    pub fn zero(input_dim: usize, output_dim: usize) -> Self {
        Self::new(
            input_dim,
            vec![Layer::new(
                DMatrix::zeros(output_dim, input_dim),
                DVector::zeros(output_dim),
                Activation::Identity,
            )],
        )
        .expect("zero network is well formed")
    }
}
