use rand::Rng;

use crate::autodiff::{ParamKind, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Slope of the leaky rectifier used by every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully connected layer `x·W + b` stored as `{prefix}.w` / `{prefix}.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            prefix: prefix.into(),
            in_dim,
            out_dim,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.insert(self.weight_name(), ParamKind::Dense, glorot(self.in_dim, self.out_dim, rng))?;
        if self.bias {
            store.insert(self.bias_name(), ParamKind::Dense, Tensor::zeros(vec![self.out_dim]))?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight_name())?;
        let y = tape.matmul(x, w)?;
        if self.bias {
            let b = tape.param(&self.bias_name())?;
            tape.add_row(y, b)
        } else {
            Ok(y)
        }
    }
}

pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], values).expect("consistent shape")
}

/// Stack of linear layers with leaky-rectifier activations between them; the
/// last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(format!("{prefix}.{i}"), d, h));
            d = h;
        }
        layers.push(Linear::new(format!("{prefix}.out"), d, out_dim));
        Mlp { layers }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn output(&self) -> &Linear {
        self.layers.last().expect("at least one layer")
    }
}
