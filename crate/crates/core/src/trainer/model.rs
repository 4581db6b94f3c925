use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainerError};

pub const MODELS: [&str; 2] = ["linear", "mlp"];
pub const ACTIVATIONS: [&str; 2] = ["relu", "tanh"];

fn default_activation() -> String {
    "relu".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: String,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden layer widths; MLP only.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: "linear".into(),
            input_dim,
            output_dim,
            hidden: vec![],
            activation: default_activation(),
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: &str) -> Self {
        Self {
            kind: "mlp".into(),
            input_dim,
            output_dim,
            hidden,
            activation: activation.into(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let unknown = |name: &str| TrainerError::UnknownComponent {
            section: "model".into(),
            name: name.into(),
        };
        if !MODELS.contains(&self.kind.as_str()) {
            return Err(unknown(&self.kind));
        }
        if !ACTIVATIONS.contains(&self.activation.as_str()) {
            return Err(unknown(&self.activation));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(TrainerError::InvalidSpec("layer widths must be positive".into()));
        }
        match (self.kind.as_str(), self.hidden.is_empty()) {
            ("linear", false) => Err(TrainerError::InvalidSpec("linear models take no hidden layers".into())),
            ("mlp", true) => Err(TrainerError::InvalidSpec("mlp needs at least one hidden layer".into())),
            _ => Ok(()),
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct Cache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    out_shape: (usize, usize),
}

/// Named view of one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A stack of affine layers with an activation between consecutive ones.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    activation: Activation,
    pub layers: Vec<Layer>,
    cache: Option<Cache>,
}

impl Model {
    /// Zero weights and biases.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.check()?;
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[1], w[0])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            activation: if spec.activation == "tanh" { Activation::Tanh } else { Activation::Relu },
            layers,
            cache: None,
        })
    }

    /// Glorot-uniform weights drawn in layer order, zero biases.
    pub fn init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        for layer in &mut model.layers {
            let (fan_out, fan_in) = layer.w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.w.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(TrainerError::ShapeMismatch(format!(
                "batch has {} features, model expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Array2<f64>, mut keep: Option<&mut Cache>) -> Array2<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w.t()) + &layer.b;
            let next = if i < last { z.mapv(|v| self.activation.apply(v)) } else { z.clone() };
            if let Some(c) = keep.as_deref_mut() {
                c.inputs.push(std::mem::replace(&mut h, next));
                if i < last {
                    c.pre.push(z);
                }
            } else {
                h = next;
            }
        }
        h
    }

    /// Forward pass without touching the activation cache.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    /// Forward pass that records activations for one [`Model::backward`].
    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut cache = Cache {
            inputs: Vec::new(),
            pre: Vec::new(),
            out_shape: (0, 0),
        };
        let y = self.run(x, Some(&mut cache));
        cache.out_shape = y.dim();
        self.cache = Some(cache);
        Ok(y)
    }

    /// Parameter gradients given dL/dy, in [`Model::blocks`] order. Consumes
    /// the cache left by the last forward pass.
    pub fn backward(&mut self, upstream: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        let cache = self.cache.take().ok_or(TrainerError::StaleCache)?;
        if upstream.dim() != cache.out_shape {
            return Err(TrainerError::StaleCache);
        }
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        let mut delta = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads[2 * i] = delta.t().dot(input).into_raw_vec_and_offset().0;
            grads[2 * i + 1] = delta.sum_axis(Axis(0)).to_vec();
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].w);
                let z = &cache.pre[i - 1];
                ndarray::Zip::from(&mut back)
                    .and(z)
                    .and(input)
                    .for_each(|d, &z, &a| *d *= self.activation.grad(z, a));
                delta = back;
            }
        }
        Ok(grads)
    }

    pub fn block_info(&self) -> Vec<BlockInfo> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    BlockInfo {
                        name: format!("layers.{i}.weight"),
                        shape: l.w.shape().to_vec(),
                    },
                    BlockInfo {
                        name: format!("layers.{i}.bias"),
                        shape: l.b.shape().to_vec(),
                    },
                ]
            })
            .collect()
    }

    /// Parameter blocks: weight then bias for each layer.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.cache = None;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_blocks(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        let mut dst = self.blocks_mut();
        if dst.len() != blocks.len() || dst.iter().zip(blocks).any(|(d, s)| d.len() != s.len()) {
            return Err(TrainerError::ShapeMismatch("parameter blocks do not fit the model".into()));
        }
        for (d, s) in dst.iter_mut().zip(blocks) {
            d.copy_from_slice(s);
        }
        Ok(())
    }
}
