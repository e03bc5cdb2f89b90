//! Customer generator with type-entropy and type-KL regularization.
//!
//! The generator maps Gaussian noise to soft per-block type distributions plus
//! a unit request vector. The discriminator compares these relaxed outputs
//! with one-hot encoded real profiles; hard categorical samples are drawn only
//! when customers are emitted.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    CustomerProfile, CustomerSampler, Dataset, MarketDims, NUM_CATEGORIES, NUM_LEVEL_FLAGS, NUM_POWER_LEVELS,
    TYPE_BLOCKS, TYPE_ONEHOT_DIM,
};
use crate::nn::{clamped_ln, ModelCheckpoint, Mlp, NetConfig, Optimizer, Output};
use crate::par::map_chunks;
use crate::rng::{stream, Domain, SimRng};

/// Probability floor inside logarithms.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GansdConfig {
    pub noise_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch: usize,
    /// Generator steps per discriminator step.
    pub gen_steps: usize,
    pub iterations: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub net: NetConfig,
}

impl Default for GansdConfig {
    fn default() -> Self {
        GansdConfig {
            noise_dim: 10,
            alpha: 1.0,
            beta: 1.0,
            batch: 256,
            gen_steps: 3,
            iterations: 2000,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            net: NetConfig::default(),
        }
    }
}

impl GansdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("gansd: alpha and beta must be nonnegative"));
        }
        if self.noise_dim == 0 || self.batch == 0 || self.gen_steps == 0 {
            return Err(Error::invalid("gansd: noise_dim, batch and gen_steps must be positive"));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::invalid("gansd: learning rates must be positive"));
        }
        Ok(())
    }
}

/// Per-block distributions over (query category, purchase power, level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub blocks: [Vec<f64>; 3],
}

impl TypeDistribution {
    /// Mean of the first 13 columns of `rows` encoded (soft or one-hot) profiles.
    pub fn from_encoded(encoded: &[f64], width: usize) -> Result<Self> {
        let rows = encoded.len() / width.max(1);
        if rows == 0 || width < TYPE_ONEHOT_DIM || encoded.len() != rows * width {
            return Err(Error::invalid("type distribution needs a nonempty batch"));
        }
        let mut acc = vec![0.0; TYPE_ONEHOT_DIM];
        for r in encoded.chunks_exact(width) {
            acc.iter_mut().zip(&r[..TYPE_ONEHOT_DIM]).for_each(|(a, x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a /= rows as f64);
        let (c, rest) = acc.split_at(NUM_CATEGORIES);
        let (p, h) = rest.split_at(NUM_POWER_LEVELS);
        Ok(TypeDistribution {
            blocks: [c.to_vec(), p.to_vec(), h.to_vec()],
        })
    }

    pub fn from_profiles(profiles: &[CustomerProfile]) -> Result<Self> {
        let mut enc = Vec::with_capacity(profiles.len() * TYPE_ONEHOT_DIM);
        for p in profiles {
            let start = enc.len();
            enc.resize(start + TYPE_ONEHOT_DIM, 0.0);
            for v in p.feature_values() {
                enc[start + v] = 1.0;
            }
        }
        Self::from_encoded(&enc, TYPE_ONEHOT_DIM)
    }

    /// Concatenated blocks in encoding order.
    pub fn flat(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    /// Entropy summed over the three blocks.
    pub fn entropy(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .filter(|&&q| q > 0.0)
            .map(|&q| -q * q.ln())
            .sum()
    }

    /// `KL(self ‖ other)` summed over blocks, with a probability floor.
    pub fn kl(&self, other: &TypeDistribution) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .filter(|(&q, _)| q > 0.0)
            .map(|(&q, &p)| q * (q.max(PROB_FLOOR).ln() - p.max(PROB_FLOOR).ln()))
            .sum()
    }
}

/// Entropy of the joint distribution over the 48 customer types.
pub fn joint_type_entropy(profiles: &[CustomerProfile]) -> f64 {
    let mut counts = [0usize; crate::market::NUM_TYPES];
    profiles.iter().for_each(|p| counts[p.type_index()] += 1);
    let n = profiles.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.ln()
        })
        .sum()
}

fn normalize_tail(out: &mut [f64], width: usize) {
    for r in out.chunks_exact_mut(width) {
        crate::market::normalize(&mut r[TYPE_ONEHOT_DIM..]);
    }
}

/// Discriminator loss: the negated `E[ln D(x)] + E[ln(1 − D(G(z)))]`.
pub fn gansd_discriminator_loss(real: &[f64], generated: &[f64], disc: &Mlp) -> Result<f64> {
    let w = disc.input_dim();
    let (nr, ng) = (real.len() / w, generated.len() / w);
    if nr == 0 || ng == 0 {
        return Err(Error::invalid("discriminator loss needs nonempty batches"));
    }
    let dr = disc.forward_rows(real, nr)?;
    let dg = disc.forward_rows(generated, ng)?;
    let lr: f64 = dr.iter().map(|&d| clamped_ln(d, PROB_FLOOR)).sum::<f64>() / nr as f64;
    let lg: f64 = dg.iter().map(|&d| clamped_ln(1.0 - d, PROB_FLOOR)).sum::<f64>() / ng as f64;
    Ok(-(lr + lg))
}

/// Gradient of [`gansd_discriminator_loss`] with respect to the discriminator.
pub fn discriminator_loss_grad(real: &[f64], generated: &[f64], disc: &Mlp) -> Result<(f64, Vec<f64>)> {
    let w = disc.input_dim();
    let (nr, ng) = (real.len() / w, generated.len() / w);
    if nr == 0 || ng == 0 {
        return Err(Error::invalid("discriminator loss needs nonempty batches"));
    }
    let mut input = Vec::with_capacity(real.len() + generated.len());
    input.extend_from_slice(real);
    input.extend_from_slice(generated);
    let trace = disc.trace(&input, nr + ng)?;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(nr + ng);
    for (i, &d) in trace.output.iter().enumerate() {
        if i < nr {
            loss -= clamped_ln(d, PROB_FLOOR) / nr as f64;
            g.push((d - 1.0) / nr as f64);
        } else {
            loss -= clamped_ln(1.0 - d, PROB_FLOOR) / ng as f64;
            g.push(d / ng as f64);
        }
    }
    Ok((loss, disc.backward_logits(&trace, &g, false)?.params))
}

/// Generator loss on a batch of its (soft) outputs: the negation of
/// `mean D(G(z)) + α·H(V̂) − β·KL(V̂ ‖ V(x))`, where `V̂` is the batch-mean
/// type distribution.
pub fn gansd_generator_loss(
    generated: &[f64],
    data: &TypeDistribution,
    disc: &Mlp,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let w = disc.input_dim();
    let rows = generated.len() / w;
    if rows == 0 {
        return Err(Error::invalid("generator loss needs a nonempty batch"));
    }
    let d = disc.forward_rows(generated, rows)?;
    let mean_d = d.iter().sum::<f64>() / rows as f64;
    let v = TypeDistribution::from_encoded(generated, w)?;
    Ok(-(mean_d + alpha * v.entropy() - beta * v.kl(data)))
}

/// Loss and gradient with respect to the soft generator outputs.
fn generator_output_grad(
    generated: &[f64],
    data: &TypeDistribution,
    disc: &Mlp,
    alpha: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>, TypeDistribution)> {
    let w = disc.input_dim();
    let rows = generated.len() / w;
    let trace = disc.trace(generated, rows)?;
    let mean_d = trace.output.iter().sum::<f64>() / rows as f64;
    let up = vec![-1.0 / rows as f64; rows];
    let gl = disc.output_vjp(&trace.output, &up, rows);
    let mut grad = disc.backward_logits(&trace, &gl, true)?.input;
    let v = TypeDistribution::from_encoded(generated, w)?;
    let loss = -(mean_d + alpha * v.entropy() - beta * v.kl(data));
    let p = data.flat();
    let coef: Vec<f64> = v
        .flat()
        .iter()
        .zip(&p)
        .map(|(&q, &pj)| {
            let lq = q.max(PROB_FLOOR).ln();
            (alpha * (lq + 1.0) + beta * (lq + 1.0 - pj.max(PROB_FLOOR).ln())) / rows as f64
        })
        .collect();
    for r in grad.chunks_exact_mut(w) {
        r[..TYPE_ONEHOT_DIM].iter_mut().zip(&coef).for_each(|(g, c)| *g += c);
    }
    Ok((loss, grad, v))
}

/// Trained generator and discriminator.
#[derive(Debug, Clone)]
pub struct GansdModel {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub config: GansdConfig,
    pub dims: MarketDims,
}

impl GansdModel {
    pub fn new(config: GansdConfig, dims: MarketDims, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Domain::Init, 0);
        let width = dims.profile_dim();
        let generator = config.net.build(
            config.noise_dim,
            width,
            Output::SoftmaxBlocks(TYPE_BLOCKS.to_vec()),
            &mut rng,
        )?;
        let discriminator = config.net.build(width, 1, Output::Sigmoid, &mut rng)?;
        Ok(GansdModel {
            generator,
            discriminator,
            config,
            dims,
        })
    }

    /// Soft profiles (type blocks and unit request) for a noise batch.
    pub fn soft_outputs(&self, noise: &[f64]) -> Result<Vec<f64>> {
        let rows = noise.len() / self.config.noise_dim;
        let mut out = self.generator.forward_rows(noise, rows)?;
        normalize_tail(&mut out, self.dims.profile_dim());
        Ok(out)
    }

    /// Standard normal generator inputs for `rows` samples.
    pub fn noise(&self, rng: &mut SimRng, rows: usize) -> Vec<f64> {
        (0..rows * self.config.noise_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Generator loss and parameter gradient for a noise batch.
    pub fn generator_loss_grad(&self, noise: &[f64], data: &TypeDistribution) -> Result<(f64, Vec<f64>, TypeDistribution)> {
        let width = self.dims.profile_dim();
        let rows = noise.len() / self.config.noise_dim;
        let trace = self.generator.trace(noise, rows)?;
        let mut y = trace.output.clone();
        normalize_tail(&mut y, width);
        let (loss, mut gy, v) =
            generator_output_grad(&y, data, &self.discriminator, self.config.alpha, self.config.beta)?;
        // pull the request gradient back through the normalization
        for (r, (g, raw)) in gy.chunks_exact_mut(width).zip(trace.output.chunks_exact(width)).enumerate() {
            let u = &raw[TYPE_ONEHOT_DIM..];
            let n = crate::market::l2_norm(u).max(1e-12);
            let yr = &y[r * width + TYPE_ONEHOT_DIM..(r + 1) * width];
            let gr = &mut g[TYPE_ONEHOT_DIM..];
            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
            gr.iter_mut().zip(yr).for_each(|(gi, yi)| *gi = (*gi - dot * yi) / n);
        }
        let gl = self.generator.output_vjp(&trace.output, &gy, rows);
        let grads = self.generator.backward_logits(&trace, &gl, false)?.params;
        Ok((loss, grads, v))
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let mut ck = ModelCheckpoint::new();
        ck.insert_mlp("generator", &self.generator);
        ck.insert_mlp("discriminator", &self.discriminator);
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &ModelCheckpoint) -> Result<()> {
        ck.load_mlp("generator", &mut self.generator)?;
        ck.load_mlp("discriminator", &mut self.discriminator)
    }

    /// Draw one profile from the soft output row of a generator.
    fn harden(&self, row: &[f64], rng: &mut SimRng) -> CustomerProfile {
        let mut pick = |p: &[f64]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let c = pick(&row[..NUM_CATEGORIES]);
        let p = pick(&row[NUM_CATEGORIES..NUM_CATEGORIES + NUM_POWER_LEVELS]);
        let h = pick(&row[NUM_CATEGORIES + NUM_POWER_LEVELS..TYPE_ONEHOT_DIM]);
        let t = (c * NUM_POWER_LEVELS + p) * NUM_LEVEL_FLAGS + h;
        CustomerProfile::from_type(t, row[TYPE_ONEHOT_DIM..].to_vec())
    }
}

impl CustomerSampler for GansdModel {
    fn sample(&self, rng: &mut SimRng) -> CustomerProfile {
        self.sample_batch(std::slice::from_mut(rng)).pop().expect("one profile")
    }

    fn sample_batch(&self, rngs: &mut [SimRng]) -> Vec<CustomerProfile> {
        let mut noise = Vec::with_capacity(rngs.len() * self.config.noise_dim);
        for r in rngs.iter_mut() {
            for _ in 0..self.config.noise_dim {
                noise.push(r.sample(StandardNormal));
            }
        }
        let out = self.soft_outputs(&noise).expect("generator parameters are finite");
        out.chunks_exact(self.dims.profile_dim())
            .zip(rngs.iter_mut())
            .map(|(row, r)| self.harden(row, r))
            .collect()
    }
}

/// `count` customers from any sampler; customer `i` uses its own stream.
pub fn sample_customers<S: CustomerSampler + ?Sized>(model: &S, count: usize, seed: u64, threads: usize) -> Vec<CustomerProfile> {
    map_chunks(count, 4096, threads, |range| {
        let mut rngs: Vec<SimRng> = range.map(|i| stream(seed, Domain::Sampler, i as u64)).collect();
        model.sample_batch(&mut rngs)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GansdCurvePoint {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub type_entropy: f64,
    pub type_kl: f64,
}

pub fn curve_csv(curve: &[GansdCurvePoint]) -> String {
    let mut s = String::from("iter,d_loss,g_loss,type_entropy,type_kl\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{},{}\n", p.iter, p.d_loss, p.g_loss, p.type_entropy, p.type_kl));
    }
    s
}

/// Train on the customer profiles of a dataset.
pub fn train_gansd(dataset: &Dataset, config: &GansdConfig, dims: MarketDims, seed: u64) -> Result<(GansdModel, Vec<GansdCurvePoint>)> {
    let profiles: Vec<CustomerProfile> = dataset.sessions.iter().map(|s| s.profile.clone()).collect();
    train_gansd_on(&profiles, config, dims, seed)
}

pub fn train_gansd_on(
    profiles: &[CustomerProfile],
    config: &GansdConfig,
    dims: MarketDims,
    seed: u64,
) -> Result<(GansdModel, Vec<GansdCurvePoint>)> {
    if profiles.is_empty() {
        return Err(Error::invalid("gansd: dataset has no sessions"));
    }
    let mut model = GansdModel::new(config.clone(), dims, seed)?;
    let data = TypeDistribution::from_profiles(profiles)?;
    let encoded: Vec<Vec<f64>> = profiles.iter().map(|p| p.encode()).collect();
    let mut rng = stream(seed, Domain::Training, 0);
    let mut opt_g = adam_half(config.lr_generator);
    let mut opt_d = adam_half(config.lr_discriminator);
    let b = config.batch;
    let mut curve = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let real: Vec<f64> = (0..b).flat_map(|_| encoded.choose(&mut rng).unwrap().iter().copied()).collect();
        let z = model.noise(&mut rng, b);
        let fake = model.soft_outputs(&z)?;
        let (d_loss, gd) = discriminator_loss_grad(&real, &fake, &model.discriminator)?;
        opt_d.step(model.discriminator.params_mut(), &gd)?;
        let mut g_loss = 0.0;
        let mut v = data.clone();
        for _ in 0..config.gen_steps {
            let z = model.noise(&mut rng, b);
            let (l, gg, vb) = model.generator_loss_grad(&z, &data)?;
            opt_g.step(model.generator.params_mut(), &gg)?;
            g_loss = l;
            v = vb;
        }
        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::Diverged {
                stage: "gansd",
                iteration: iter,
                detail: format!("d_loss {d_loss}, g_loss {g_loss}"),
            });
        }
        curve.push(GansdCurvePoint {
            iter,
            d_loss,
            g_loss,
            type_entropy: v.entropy(),
            type_kl: v.kl(&data),
        });
    }
    Ok((model, curve))
}

fn adam_half(lr: f64) -> Optimizer {
    let mut o = Optimizer::adam(lr);
    o.kind = crate::nn::OptimizerKind::Adam {
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    o
}
