//! Sampling set decoder and the smooth-L1 Chamfer loss.
//!
//! A point is produced by pushing `concat(z, ε)` through a per-point MLP with
//! a sigmoid head, one fresh `ε ~ N(0, I)` per requested point, so any number
//! of points can be drawn from one latent. The first layer is stored as two
//! blocks (latent and noise columns) so the latent half is evaluated once per
//! set rather than once per point.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::PointFrame;
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{
    ops, Adam, AdamConfig, AdjointRule, GradAccumulator, Gradients, Parameters, Real, Tape, Tensor, Var,
};

pub const NOISE_DIM: usize = 16;
pub const DECODER_HIDDEN: [usize; 3] = [128, 128, 64];

/// `0.5 d²` for `|d| < 1`, else `|d| − 0.5`.
pub fn smooth_l1<T: Real>(a: T, b: T) -> T {
    let d = (a - b).abs();
    let half = T::from_f64_lossy(0.5);
    if d < T::one() {
        half * d * d
    } else {
        d - half
    }
}

/// Derivative of [`smooth_l1`] with respect to `a`.
pub fn smooth_l1_grad<T: Real>(a: T, b: T) -> T {
    (a - b).max(-T::one()).min(T::one())
}

fn point_distance<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + smooth_l1(a, b))
}

struct Matching<T> {
    value: T,
    /// For each row of the first set, its nearest row in the second.
    forward: Vec<usize>,
    /// For each row of the second set, its nearest row in the first.
    backward: Vec<usize>,
}

fn nearest_matches<T: Real>(s1: &Tensor<T>, s2: &Tensor<T>) -> Result<Matching<T>> {
    if s1.rows() == 0 || s2.rows() == 0 {
        return Err(Error::Empty("chamfer point set"));
    }
    if s1.cols() != s2.cols() {
        return Err(Error::ShapeMismatch {
            op: "chamfer",
            left: s1.shape().to_vec(),
            right: s2.shape().to_vec(),
        });
    }
    let (n, m) = (s1.rows(), s2.rows());
    let mut fwd = vec![(T::infinity(), 0usize); n];
    let mut bwd = vec![(T::infinity(), 0usize); m];
    for i in 0..n {
        let xi = s1.row(i);
        for j in 0..m {
            let d = point_distance(xi, s2.row(j));
            if d < fwd[i].0 {
                fwd[i] = (d, j);
            }
            if d < bwd[j].0 {
                bwd[j] = (d, i);
            }
        }
    }
    // summing in sorted order makes the value exactly permutation invariant
    let sorted_sum = |v: &[(T, usize)]| {
        let mut d: Vec<T> = v.iter().map(|p| p.0).collect();
        d.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        d.into_iter().fold(T::zero(), |s, x| s + x)
    };
    let (a, b) = (sorted_sum(&fwd), sorted_sum(&bwd));
    Ok(Matching {
        value: a + b,
        forward: fwd.into_iter().map(|p| p.1).collect(),
        backward: bwd.into_iter().map(|p| p.1).collect(),
    })
}

/// Symmetric nearest-neighbour sum between two `[n, 2]` point sets.
pub fn chamfer<T: Real>(s1: &Tensor<T>, s2: &Tensor<T>) -> Result<T> {
    Ok(nearest_matches(s1, s2)?.value)
}

struct ChamferRule {
    forward: Vec<usize>,
    backward: Vec<usize>,
}

impl<T: Real> AdjointRule<T> for ChamferRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (s1, s2) = (inputs[0], inputs[1]);
        let g = grad_output.item();
        let mut d1 = Tensor::zeros(s1.shape());
        let mut d2 = Tensor::zeros(s2.shape());
        let mut pair = |i: usize, j: usize| {
            for c in 0..s1.cols() {
                let dd = g * smooth_l1_grad(s1.get(i, c), s2.get(j, c));
                d1.row_mut(i)[c] = d1.row(i)[c] + dd;
                d2.row_mut(j)[c] = d2.row(j)[c] - dd;
            }
        };
        for (i, &j) in self.forward.iter().enumerate() {
            pair(i, j);
        }
        for (j, &i) in self.backward.iter().enumerate() {
            pair(i, j);
        }
        vec![needs[0].then_some(d1), needs[1].then_some(d2)]
    }
}

/// Taped Chamfer loss; subgradients follow the nearest-neighbour matches.
pub fn chamfer_taped<T: Real>(tape: &mut Tape<T>, s1: Var, s2: Var) -> Result<Var> {
    let m = nearest_matches(tape.value(s1), tape.value(s2))?;
    let rule = ChamferRule {
        forward: m.forward,
        backward: m.backward,
    };
    tape.custom(vec![s1, s2], Tensor::scalar(m.value), Box::new(rule))
}

/// Source of the per-point noise vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSpec {
    pub dim: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(seed: u64) -> Self {
        Self { dim: NOISE_DIM, seed }
    }

    /// `[n, dim]` standard-normal draws; row `i` does not depend on `n`.
    pub fn sample<T: Real>(&self, n: usize) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data = (0..n * self.dim)
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Tensor::matrix(n, self.dim, data).expect("shape")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderShape {
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for DecoderShape {
    fn default() -> Self {
        Self {
            latent_dim: encoder::LATENT_DIM,
            noise_dim: NOISE_DIM,
            hidden: DECODER_HIDDEN.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// `concat(z, ε) → hidden… → 2`, ReLU between hidden layers, sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub w_latent: Tensor<T>,
    pub w_noise: Tensor<T>,
    pub b_in: Tensor<T>,
    /// Remaining hidden layers followed by the 2-wide output layer.
    pub layers: Vec<Dense<T>>,
}

fn uniform_fan_in<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

impl<T: Real> DecoderParams<T> {
    pub fn init<R: Rng>(shape: &DecoderShape, rng: &mut R) -> Result<Self> {
        let Some(&h1) = shape.hidden.first() else {
            return Err(Error::invalid("decoder needs at least one hidden layer"));
        };
        let fan = shape.latent_dim + shape.noise_dim;
        let w_latent = uniform_fan_in(rng, h1, shape.latent_dim, fan);
        let w_noise = uniform_fan_in(rng, h1, shape.noise_dim, fan);
        let b_in = uniform_fan_in(rng, 1, h1, fan);
        let mut widths = shape.hidden.clone();
        widths.push(2);
        let layers = widths
            .windows(2)
            .map(|p| Dense {
                w: uniform_fan_in(rng, p[1], p[0], p[0]),
                b: uniform_fan_in(rng, 1, p[1], p[0]),
            })
            .collect();
        Ok(Self {
            w_latent,
            w_noise,
            b_in,
            layers,
        })
    }

    /// Noise source matching this decoder's noise width.
    pub fn noise(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            dim: self.w_noise.cols(),
            seed,
        }
    }

    pub fn shape(&self) -> DecoderShape {
        DecoderShape {
            latent_dim: self.w_latent.cols(),
            noise_dim: self.w_noise.cols(),
            hidden: std::iter::once(self.w_latent.rows())
                .chain(self.layers.iter().take(self.layers.len() - 1).map(|d| d.w.rows()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> DecoderParams<U> {
        DecoderParams {
            w_latent: self.w_latent.cast(),
            w_noise: self.w_noise.cast(),
            b_in: self.b_in.cast(),
            layers: self
                .layers
                .iter()
                .map(|d| Dense {
                    w: d.w.cast(),
                    b: d.b.cast(),
                })
                .collect(),
        }
    }
}

impl<T: Real> Parameters<T> for DecoderParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.w_latent, &self.w_noise, &self.b_in];
        for d in &self.layers {
            v.push(&d.w);
            v.push(&d.b);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.w_latent, &mut self.w_noise, &mut self.b_in];
        for d in &mut self.layers {
            v.push(&mut d.w);
            v.push(&mut d.b);
        }
        v
    }
}

/// Decodes `z: [1, latent]` with explicit noise rows `eps: [n, noise]`.
pub fn decode_with_noise<T: Real>(z: &Tensor<T>, eps: &Tensor<T>, params: &DecoderParams<T>) -> Result<Tensor<T>> {
    let zh = ops::linear(z, &params.w_latent, Some(&params.b_in))?;
    let eh = ops::linear(eps, &params.w_noise, None)?;
    let mut h = ops::relu(&ops::add(&eh, &zh)?);
    let last = params.layers.len() - 1;
    for (i, d) in params.layers.iter().enumerate() {
        let y = ops::linear(&h, &d.w, Some(&d.b))?;
        h = if i == last { ops::sigmoid(&y) } else { ops::relu(&y) };
    }
    Ok(h)
}

/// Draws `n` points from latent `z`.
pub fn decode<T: Real>(z: &Tensor<T>, n: usize, noise: &NoiseSpec, params: &DecoderParams<T>) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(Error::invalid("cannot decode an empty set"));
    }
    decode_with_noise(z, &noise.sample(n), params)
}

/// Tape handles for decoder parameters, in [`Parameters`] order.
pub struct DecoderVars {
    vars: Vec<Var>,
}

impl DecoderVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, params: &DecoderParams<T>, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self { vars }
    }

    pub fn gradients<T: Real>(&self, grads: &mut Gradients<T>, params: &DecoderParams<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.take_or_zeros(v, t))
            .collect()
    }
}

pub fn decode_taped<T: Real>(tape: &mut Tape<T>, z: Var, eps: Tensor<T>, vars: &DecoderVars) -> Result<Var> {
    let v = &vars.vars;
    let e = tape.constant(eps);
    let zh = tape.linear(z, v[0], Some(v[2]))?;
    let eh = tape.linear(e, v[1], None)?;
    let pre = tape.add(eh, zh)?;
    let mut h = tape.relu(pre);
    let n_layers = (v.len() - 3) / 2;
    for i in 0..n_layers {
        let y = tape.linear(h, v[3 + 2 * i], Some(v[4 + 2 * i]))?;
        h = if i + 1 == n_layers { tape.sigmoid(y) } else { tape.relu(y) };
    }
    Ok(h)
}

/// Chamfer loss of decoding `z` against `target`, with `target.rows()` points.
pub fn reconstruction_loss_taped<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    target: &Tensor<T>,
    noise: &NoiseSpec,
    vars: &DecoderVars,
) -> Result<Var> {
    let pred = decode_taped(tape, z, noise.sample(target.rows()), vars)?;
    let t = tape.constant(target.clone());
    chamfer_taped(tape, pred, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Noise seed used for every evaluation decode.
    pub eval_seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 100,
            eval_seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Clone, Debug)]
pub struct DecoderTraining {
    pub best: DecoderParams<f32>,
    pub best_epoch: usize,
    pub final_params: DecoderParams<f32>,
    pub history: Vec<EpochLoss>,
}

impl DecoderTraining {
    pub fn best_validation(&self) -> f64 {
        self.history[self.best_epoch - 1].validation
    }
}

/// Mean Chamfer loss of decoding each latent against its frame with the fixed eval noise.
pub fn mean_reconstruction(
    latents: &[Tensor<f32>],
    targets: &[Tensor<f32>],
    decoder: &DecoderParams<f32>,
    eval_seed: u64,
) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::Empty("reconstruction frames"));
    }
    let noise = decoder.noise(eval_seed);
    let mut sum = 0.0;
    for (z, x) in latents.iter().zip(targets) {
        let pred = decode(z, x.rows(), &noise, decoder)?;
        sum += chamfer(&pred, x)?.to_f64_lossy();
    }
    Ok(sum / latents.len() as f64)
}

/// Mean reconstruction loss of `frames` through a frozen encoder/decoder pair.
pub fn reconstruction_loss(
    encoder: &EncoderParams<f32>,
    decoder: &DecoderParams<f32>,
    frames: &[PointFrame],
    eval_seed: u64,
) -> Result<f64> {
    let latents = frames
        .iter()
        .map(|f| encoder::encode(f, encoder))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor<f32>> = frames.iter().map(PointFrame::to_tensor).collect();
    mean_reconstruction(&latents, &targets, decoder, eval_seed)
}

/// Loss and decoder gradient for one latent/target pair.
pub fn decoder_loss_and_grad<T: Real>(
    z: &Tensor<T>,
    target: &Tensor<T>,
    noise: &NoiseSpec,
    params: &DecoderParams<T>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = DecoderVars::register(&mut tape, params, true);
    let zv = tape.constant(z.clone());
    let loss = reconstruction_loss_taped(&mut tape, zv, target, noise, &vars)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.gradients(&mut grads, params)))
}

/// Adam on precomputed latents; keeps the checkpoint with the lowest
/// validation loss (training loss when there is no validation data).
pub fn fit_decoder<R: Rng>(
    init: DecoderParams<f32>,
    train: (&[Tensor<f32>], &[Tensor<f32>]),
    validation: (&[Tensor<f32>], &[Tensor<f32>]),
    cfg: &DecoderTrainConfig,
    rng: &mut R,
) -> Result<DecoderTraining> {
    let (train_z, train_x) = train;
    if train_z.is_empty() {
        return Err(Error::Empty("decoder training frames"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be at least 1"));
    }
    let mut params = init;
    let mut opt = Adam::new(cfg.adam);
    let mut acc = GradAccumulator::zeros_like(&params);
    let mut order: Vec<usize> = (0..train_z.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, DecoderParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut train_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            acc.reset();
            for &i in batch {
                let noise = params.noise(rng.random());
                let (loss, g) = decoder_loss_and_grad(&train_z[i], &train_x[i], &noise, &params)?;
                train_sum += loss as f64;
                acc.add(&g)?;
            }
            opt.step(&mut params, &acc.mean())?;
        }
        let train_loss = train_sum / train_z.len() as f64;
        let validation_loss = if validation.0.is_empty() {
            train_loss
        } else {
            mean_reconstruction(validation.0, validation.1, &params, cfg.eval_seed)?
        };
        if best.as_ref().is_none_or(|(b, _, _)| validation_loss < *b) {
            best = Some((validation_loss, epoch, params.clone()));
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: validation_loss,
        });
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(DecoderTraining {
        best,
        best_epoch,
        final_params: params,
        history,
    })
}

/// Stage-2 training: the encoder is only read, never updated.
pub fn train_decoder<R: Rng>(
    encoder: &EncoderParams<f32>,
    init: DecoderParams<f32>,
    train: &[PointFrame],
    validation: &[PointFrame],
    cfg: &DecoderTrainConfig,
    rng: &mut R,
) -> Result<DecoderTraining> {
    if train.is_empty() {
        return Err(Error::Empty("decoder training frames"));
    }
    let encode_all = |frames: &[PointFrame]| -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
        let z = frames
            .iter()
            .map(|f| encoder::encode(f, encoder))
            .collect::<Result<Vec<_>>>()?;
        Ok((z, frames.iter().map(PointFrame::to_tensor).collect()))
    };
    let (tz, tx) = encode_all(train)?;
    let (vz, vx) = encode_all(validation)?;
    fit_decoder(init, (&tz, &tx), (&vz, &vx), cfg, rng)
}

const DECODER_FORMAT: &str = "hebbset-decoder";

impl<T: Real> DecoderParams<T> {
    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_json(DECODER_FORMAT, self.shape(), self.tensors())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let (shape, data): (DecoderShape, _) = checkpoint::from_json(DECODER_FORMAT, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = Self::init(&shape, &mut rng)?;
        checkpoint::fill(params.tensors_mut(), data)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn set(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn smooth_l1_branches() {
        assert!((smooth_l1(0.2, 0.0) - 0.02f64).abs() < 1e-15);
        assert_eq!(smooth_l1(2.0, 0.0), 1.5f64);
        assert_eq!(smooth_l1(0.0, 2.0), 1.5f64);
        // both branch formulas give 0.5 at |d| = 1
        assert_eq!(smooth_l1(1.0, 0.0), 0.5f64);
        assert_eq!(0.5 * 1.0f64 * 1.0, 1.0f64 - 0.5);
        assert_eq!(smooth_l1_grad(3.0, 0.0), 1.0f64);
        assert_eq!(smooth_l1_grad(0.0, 3.0), -1.0f64);
    }

    #[test]
    fn chamfer_examples() {
        let s = set(&[[0.1, 0.2], [0.7, 0.4]]);
        assert_eq!(chamfer(&s, &s).unwrap(), 0.0);
        let a = set(&[[0.0, 0.0]]);
        let b = set(&[[0.3, 0.4]]);
        assert!((chamfer(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let empty = Tensor::<f64>::zeros(&[0, 2]);
        assert!(chamfer(&a, &empty).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DecoderParams::<f32>::init(&DecoderShape::default(), &mut rng).unwrap();
        let z = Tensor::vector((0..256).map(|i| (i % 7) as f32 / 7.0).collect());
        let noise = NoiseSpec::new(42);
        let a = decode(&z, 5, &noise, &p).unwrap();
        let b = decode(&z, 5, &noise, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows(), 5);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let one = decode(&z, 1, &noise, &p).unwrap();
        let three = decode(&z, 3, &noise, &p).unwrap();
        assert_eq!(one.row(0), three.row(0));
        assert!(decode(&z, 0, &noise, &p).is_err());
    }

    #[test]
    fn default_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DecoderParams::<f32>::init(&DecoderShape::default(), &mut rng).unwrap();
        assert_eq!(p.num_params(), 272 * 128 + 128 + 128 * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2);
        assert_eq!(p.num_params(), 59_842);
        assert_eq!(p.shape(), DecoderShape::default());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = DecoderShape {
            latent_dim: 5,
            noise_dim: 3,
            hidden: vec![4, 3],
        };
        let p = DecoderParams::<f32>::init(&shape, &mut rng).unwrap();
        assert_eq!(DecoderParams::<f32>::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn chamfer_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let m = rng.random_range(1..8);
            let a = set(&(0..n).map(|_| [rng.random(), rng.random()]).collect::<Vec<_>>());
            let b = set(&(0..m).map(|_| [rng.random(), rng.random()]).collect::<Vec<_>>());
            let d = |x: &[f64], y: &[f64]| {
                let f = |u: f64| if u.abs() < 1.0 { 0.5 * u * u } else { u.abs() - 0.5 };
                f(x[0] - y[0]) + f(x[1] - y[1])
            };
            let mut oracle = 0.0;
            for i in 0..n {
                oracle += (0..m).map(|j| d(a.row(i), b.row(j))).fold(f64::INFINITY, f64::min);
            }
            for j in 0..m {
                oracle += (0..n).map(|i| d(a.row(i), b.row(j))).fold(f64::INFINITY, f64::min);
            }
            let got = chamfer(&a, &b).unwrap();
            assert!((got - oracle).abs() < 1e-12);
            assert!((got - chamfer(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let a = set(&[[0.1, 0.9], [0.4, 0.35], [0.8, 0.2]]);
        let b = set(&[[0.15, 0.7], [0.9, 0.1]]);
        let mut tape = Tape::new();
        let av = tape.param(a.clone());
        let bv = tape.param(b.clone());
        let loss = chamfer_taped(&mut tape, av, bv).unwrap();
        assert_eq!(tape.value(loss).item(), chamfer(&a, &b).unwrap());
        let g = tape.backward(loss).unwrap();
        let ga = g.get(av).unwrap().clone();
        let gb = g.get(bv).unwrap().clone();
        let err = finite_diff_check(|t| chamfer(t, &b), &a, &ga, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
        let err = finite_diff_check(|t| chamfer(&a, t), &b, &gb, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn decoder_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = DecoderShape {
            latent_dim: 4,
            noise_dim: 3,
            hidden: vec![5, 4],
        };
        let p = DecoderParams::<f64>::init(&shape, &mut rng).unwrap();
        let z = Tensor::vector(vec![0.3, 0.0, 0.8, 0.5]);
        let target = set(&[[0.2, 0.3], [0.7, 0.6], [0.5, 0.9]]);
        let noise = NoiseSpec { dim: 3, seed: 2 };
        let (value, grads) = decoder_loss_and_grad(&z, &target, &noise, &p).unwrap();
        let loss_of = |q: &DecoderParams<f64>| chamfer(&decode(&z, 3, &noise, q)?, &target);
        assert_eq!(value, loss_of(&p).unwrap());
        for (k, g) in grads.iter().enumerate() {
            let theta = p.tensors()[k].clone();
            let f = |t: &Tensor<f64>| {
                let mut q = p.clone();
                *q.tensors_mut()[k] = t.clone();
                loss_of(&q)
            };
            let err = finite_diff_check(f, &theta, g, 1e-6).unwrap();
            assert!(err < 1e-5, "tensor {k}: {err}");
        }
    }

    #[test]
    fn taped_decode_matches_eager() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = DecoderParams::<f32>::init(&DecoderShape::default(), &mut rng).unwrap();
        let z = Tensor::vector((0..256).map(|i| ((i * 13) % 11) as f32 / 11.0).collect());
        let noise = NoiseSpec::new(3);
        let eager = decode(&z, 7, &noise, &p).unwrap();
        let mut tape = Tape::new();
        let vars = DecoderVars::register(&mut tape, &p, true);
        let zv = tape.constant(z);
        let out = decode_taped(&mut tape, zv, noise.sample(7), &vars).unwrap();
        assert_eq!(tape.value(out), &eager);
    }
}
