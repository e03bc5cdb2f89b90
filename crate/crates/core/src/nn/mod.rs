//! Feed-forward networks, optimizers and their persistence.

mod checkpoint;
pub mod gradcheck;
mod mlp;
mod optim;
mod tensor;

pub use checkpoint::ModelCheckpoint;
pub use mlp::{Backprop, Hidden, Mlp, Output, Trace};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

/// Hidden-layer architecture shared by every network in the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Hidden,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![64, 64],
            activation: Hidden::Tanh,
        }
    }
}

impl NetConfig {
    pub fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(input);
        s.extend(&self.hidden);
        s.push(output);
        s
    }

    pub fn build<R: rand::Rng + ?Sized>(
        &self,
        input: usize,
        output: usize,
        head: Output,
        rng: &mut R,
    ) -> crate::Result<Mlp> {
        Mlp::new(&self.sizes(input, output), self.activation, head, rng)
    }
}

/// Numerically safe `ln(clamp(p, lo, 1 - lo))`.
pub fn clamped_ln(p: f64, lo: f64) -> f64 {
    p.clamp(lo, 1.0 - lo).ln()
}
