use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Hidden {
    #[default]
    Tanh,
    Relu,
}

/// Output nonlinearity.
///
/// `SoftmaxBlocks` normalizes consecutive blocks of the output independently;
/// any trailing dimensions past the last block pass through unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Identity,
    Sigmoid,
    SoftmaxBlocks(Vec<usize>),
}

/// Feed-forward network with parameters in one flat buffer.
///
/// Layer `l` stores its weight as an `[in, out]` row-major block followed by
/// an `[out]` bias. Gradients and tangents use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Hidden,
    output: Output,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations saved by a forward pass, consumed by the backward and
/// forward-mode passes.
#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: usize,
    /// `acts[0]` is the input, `acts[l]` the post-activation of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

impl Trace {
    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// `[rows, input_dim]`, empty unless requested.
    pub input: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the strided extents of an
    // m×k, k×n and m×n (row-major, contiguous) matrix respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Hidden, output: Output, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = net.offsets[l];
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden: Hidden, output: Output) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("layer sizes {sizes:?} need ≥2 positive entries")));
        }
        let out_dim = *sizes.last().unwrap();
        if let Output::SoftmaxBlocks(blocks) = &output {
            let covered: usize = blocks.iter().sum();
            if blocks.is_empty() || blocks.iter().any(|&b| b == 0) || covered > out_dim {
                return Err(Error::invalid(format!("softmax blocks {blocks:?} do not fit output dim {out_dim}")));
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; n],
            offsets,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden(&self) -> Hidden {
        self.hidden
    }

    pub fn output(&self) -> &Output {
        &self.output
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                context: "mlp parameters",
                expected: self.params.len().to_string(),
                got: params.len().to_string(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("mlp parameters".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = self.offsets[l];
        (w..w + i * o, w + i * o..w + i * o + o)
    }

    /// `(weight [in, out], bias [out])` of layer `l` inside a params-shaped buffer.
    pub fn layer_view<'a>(&self, flat: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let (w, b) = self.layer_range(l);
        (&flat[w], &flat[b])
    }

    pub fn weight(&self, l: usize) -> Tensor {
        let (w, _) = self.layer_view(&self.params, l);
        Tensor::matrix(self.sizes[l], self.sizes[l + 1], w.to_vec()).expect("finite params")
    }

    pub fn bias(&self, l: usize) -> Tensor {
        let (_, b) = self.layer_view(&self.params, l);
        Tensor::vector(b.to_vec()).expect("finite params")
    }

    /// Overwrite layer `l` (used by checkpoint loading and tests).
    pub fn set_layer(&mut self, l: usize, weight: &Tensor, bias: &Tensor) -> Result<()> {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        if weight.shape() != [i, o] || bias.shape() != [o] {
            return Err(Error::Shape {
                context: "mlp layer",
                expected: format!("[{i}, {o}] and [{o}]"),
                got: format!("{:?} and {:?}", weight.shape(), bias.shape()),
            });
        }
        let (w, b) = self.layer_range(l);
        self.params[w].copy_from_slice(weight.data());
        self.params[b].copy_from_slice(bias.data());
        Ok(())
    }

    fn check_input(&self, input: &[f64], rows: usize) -> Result<()> {
        if rows == 0 || input.len() != rows * self.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: format!("[{rows}, {}]", self.input_dim()),
                got: format!("{} values", input.len()),
            });
        }
        Ok(())
    }

    /// Run the network on a `[.., input_dim]` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.last_dim() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: format!("last dim {}", self.input_dim()),
                got: format!("{:?}", input.shape()),
            });
        }
        let out = self.forward_rows(input.data(), input.rows())?;
        let mut shape = input.shape().to_vec();
        *shape.last_mut().unwrap() = self.output_dim();
        Tensor::new(shape, out)
    }

    /// Forward pass over `rows` row-major inputs, returning outputs only.
    pub fn forward_rows(&self, input: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(self.trace(input, rows)?.output)
    }

    /// Forward pass keeping every intermediate needed for gradients.
    pub fn trace(&self, input: &[f64], rows: usize) -> Result<Trace> {
        self.check_input(input, rows)?;
        let last = self.num_layers() - 1;
        let mut acts = vec![input.to_vec()];
        let mut logits = Vec::new();
        for l in 0..=last {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_view(&self.params, l);
            let mut z = vec![0.0; rows * o];
            gemm(rows, i, o, &acts[l], i as isize, 1, w, o as isize, 1, 0.0, &mut z);
            for r in 0..rows {
                for (zj, bj) in z[r * o..(r + 1) * o].iter_mut().zip(b) {
                    *zj += bj;
                }
            }
            if l < last {
                match self.hidden {
                    Hidden::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                    Hidden::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFault {
                    layer: l,
                    detail: "non-finite activation in forward pass".into(),
                });
            }
            if l < last {
                acts.push(z);
            } else {
                logits = z;
            }
        }
        let output = self.apply_output(&logits, rows);
        Ok(Trace {
            rows,
            acts,
            logits,
            output,
        })
    }

    fn apply_output(&self, logits: &[f64], rows: usize) -> Vec<f64> {
        let mut y = logits.to_vec();
        match &self.output {
            Output::Identity => {}
            Output::Sigmoid => y.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Output::SoftmaxBlocks(blocks) => {
                let o = self.output_dim();
                for r in 0..rows {
                    let mut start = r * o;
                    for &bs in blocks {
                        softmax_in_place(&mut y[start..start + bs]);
                        start += bs;
                    }
                }
            }
        }
        y
    }

    /// Pull a gradient with respect to the outputs back to the logits.
    pub fn output_vjp(&self, output: &[f64], grad_out: &[f64], rows: usize) -> Vec<f64> {
        match &self.output {
            Output::Identity => grad_out.to_vec(),
            Output::Sigmoid => output.iter().zip(grad_out).map(|(y, g)| g * y * (1.0 - y)).collect(),
            Output::SoftmaxBlocks(blocks) => {
                let o = self.output_dim();
                let mut g = grad_out.to_vec();
                for r in 0..rows {
                    let mut start = r * o;
                    for &bs in blocks {
                        let y = &output[start..start + bs];
                        let gb = &mut g[start..start + bs];
                        let dot: f64 = y.iter().zip(gb.iter()).map(|(a, b)| a * b).sum();
                        for (gj, yj) in gb.iter_mut().zip(y) {
                            *gj = yj * (*gj - dot);
                        }
                        start += bs;
                    }
                }
                g
            }
        }
    }

    /// Reverse pass with respect to the network outputs.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<Backprop> {
        let rows = input.rows();
        if input.last_dim() != self.input_dim() || upstream.len() != rows * self.output_dim() {
            return Err(Error::Shape {
                context: "mlp backward",
                expected: format!("[{rows}, {}] upstream", self.output_dim()),
                got: format!("{:?}", upstream.shape()),
            });
        }
        let trace = self.trace(input.data(), rows)?;
        let g = self.output_vjp(&trace.output, upstream.data(), rows);
        self.backward_logits(&trace, &g, true)
    }

    /// Reverse pass starting from a gradient on the pre-activation logits.
    pub fn backward_logits(&self, trace: &Trace, grad_logits: &[f64], want_input: bool) -> Result<Backprop> {
        let rows = trace.rows;
        if grad_logits.len() != rows * self.output_dim() {
            return Err(Error::Shape {
                context: "mlp backward",
                expected: format!("{} logit gradients", rows * self.output_dim()),
                got: grad_logits.len().to_string(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_logits.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..self.num_layers()).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let h = &trace.acts[l];
            let (wr, br) = self.layer_range(l);
            gemm(i, rows, o, h, 1, i as isize, &g, o as isize, 1, 0.0, &mut grads[wr.clone()]);
            let db = &mut grads[br];
            for r in 0..rows {
                for (d, gv) in db.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                    *d += gv;
                }
            }
            if grads[wr.start..wr.end + o].iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFault {
                    layer: l,
                    detail: "non-finite parameter gradient".into(),
                });
            }
            if l == 0 && !want_input {
                break;
            }
            let mut gp = vec![0.0; rows * i];
            gemm(rows, o, i, &g, o as isize, 1, &self.params[wr], 1, o as isize, 0.0, &mut gp);
            if l > 0 {
                match self.hidden {
                    Hidden::Tanh => gp.iter_mut().zip(h).for_each(|(d, a)| *d *= 1.0 - a * a),
                    Hidden::Relu => gp.iter_mut().zip(h).for_each(|(d, a)| {
                        if *a <= 0.0 {
                            *d = 0.0
                        }
                    }),
                }
                if gp.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericFault {
                        layer: l,
                        detail: "non-finite activation gradient".into(),
                    });
                }
                g = gp;
            } else {
                input_grad = gp;
            }
        }
        Ok(Backprop {
            params: grads,
            input: input_grad,
        })
    }

    /// Forward-mode derivative of the logits along a parameter tangent.
    pub fn jvp_logits(&self, trace: &Trace, tangent: &[f64]) -> Vec<f64> {
        assert_eq!(tangent.len(), self.params.len(), "tangent layout");
        let rows = trace.rows;
        let last = self.num_layers() - 1;
        let mut dh: Vec<f64> = Vec::new();
        for l in 0..=last {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (wr, br) = self.layer_range(l);
            let mut dz = vec![0.0; rows * o];
            gemm(rows, i, o, &trace.acts[l], i as isize, 1, &tangent[wr.clone()], o as isize, 1, 0.0, &mut dz);
            if l > 0 {
                gemm(rows, i, o, &dh, i as isize, 1, &self.params[wr], o as isize, 1, 1.0, &mut dz);
            }
            let db = &tangent[br];
            for r in 0..rows {
                for (z, b) in dz[r * o..(r + 1) * o].iter_mut().zip(db) {
                    *z += b;
                }
            }
            if l < last {
                let a = &trace.acts[l + 1];
                match self.hidden {
                    Hidden::Tanh => dz.iter_mut().zip(a).for_each(|(d, h)| *d *= 1.0 - h * h),
                    Hidden::Relu => dz.iter_mut().zip(a).for_each(|(d, h)| {
                        if *h <= 0.0 {
                            *d = 0.0
                        }
                    }),
                }
            }
            dh = dz;
        }
        dh
    }
}
