//! Latent LSTM predictor: observe ground-truth latents, then feed back its
//! own predictions.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{Chunk, PointFrame, CHUNK_LEN};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{ops, Adam, AdamConfig, GradAccumulator, Parameters, Real, Tape, Tensor, Var};
use crate::setdecoder::{self, DecoderParams, DecoderVars, EpochLoss, NoiseSpec};

pub const LSTM_INPUT: usize = 64;
pub const LSTM_HIDDEN: usize = 64;
pub const OBSERVE_STEPS: usize = 25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub latent_dim: usize,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for LstmShape {
    fn default() -> Self {
        Self {
            latent_dim: encoder::LATENT_DIM,
            input_dim: LSTM_INPUT,
            hidden: LSTM_HIDDEN,
        }
    }
}

/// Input map, one LSTM cell (gates stacked i, f, g, o) and output map.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_in: Tensor<T>,
    pub b_in: Tensor<T>,
    /// `[4·hidden, input + hidden]`
    pub w_gate: Tensor<T>,
    pub b_gate: Tensor<T>,
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

fn uniform<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

impl<T: Real> LstmParams<T> {
    pub fn init<R: Rng>(shape: &LstmShape, rng: &mut R) -> Self {
        let (l, i, h) = (shape.latent_dim, shape.input_dim, shape.hidden);
        let bi = 1.0 / (l as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        Self {
            w_in: uniform(rng, i, l, bi),
            b_in: uniform(rng, 1, i, bi),
            w_gate: uniform(rng, 4 * h, i + h, bh),
            b_gate: uniform(rng, 1, 4 * h, bh),
            w_out: uniform(rng, l, h, bh),
            b_out: uniform(rng, 1, l, bh),
        }
    }

    pub fn zeros(shape: &LstmShape) -> Self {
        let (l, i, h) = (shape.latent_dim, shape.input_dim, shape.hidden);
        Self {
            w_in: Tensor::zeros(&[i, l]),
            b_in: Tensor::zeros(&[1, i]),
            w_gate: Tensor::zeros(&[4 * h, i + h]),
            b_gate: Tensor::zeros(&[1, 4 * h]),
            w_out: Tensor::zeros(&[l, h]),
            b_out: Tensor::zeros(&[1, l]),
        }
    }

    pub fn shape(&self) -> LstmShape {
        LstmShape {
            latent_dim: self.w_in.cols(),
            input_dim: self.w_in.rows(),
            hidden: self.w_out.cols(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_out.cols()
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            w_in: self.w_in.cast(),
            b_in: self.b_in.cast(),
            w_gate: self.w_gate.cast(),
            b_gate: self.b_gate.cast(),
            w_out: self.w_out.cast(),
            b_out: self.b_out.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for LstmParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        vec![&self.w_in, &self.b_in, &self.w_gate, &self.b_gate, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_gate,
            &mut self.b_gate,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

/// `(h, c)`, each `[1, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[1, hidden]),
            c: Tensor::zeros(&[1, hidden]),
        }
    }
}

pub fn lstm_step<T: Real>(z: &Tensor<T>, state: &LstmState<T>, p: &LstmParams<T>) -> Result<(Tensor<T>, LstmState<T>)> {
    let hd = p.hidden();
    let x = ops::linear(z, &p.w_in, Some(&p.b_in))?;
    let xh = ops::concat_cols(&x, &state.h)?;
    let gates = ops::linear(&xh, &p.w_gate, Some(&p.b_gate))?;
    let i = ops::sigmoid(&ops::slice_cols(&gates, 0, hd)?);
    let f = ops::sigmoid(&ops::slice_cols(&gates, hd, hd)?);
    let g = ops::tanh(&ops::slice_cols(&gates, 2 * hd, hd)?);
    let o = ops::sigmoid(&ops::slice_cols(&gates, 3 * hd, hd)?);
    let c = ops::add(&ops::mul(&f, &state.c)?, &ops::mul(&i, &g)?)?;
    let h = ops::mul(&o, &ops::tanh(&c))?;
    let out = ops::linear(&h, &p.w_out, Some(&p.b_out))?;
    Ok((out, LstmState { h, c }))
}

/// Tape handles for LSTM parameters, in [`Parameters`] order.
pub struct LstmVars {
    vars: Vec<Var>,
    hidden: usize,
}

impl LstmVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, p: &LstmParams<T>, trainable: bool) -> Self {
        let vars = p
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
        Self {
            vars,
            hidden: p.hidden(),
        }
    }

    pub fn gradients<T: Real>(&self, grads: &mut crate::numerics::Gradients<T>, p: &LstmParams<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(p.tensors())
            .map(|(&v, t)| grads.take_or_zeros(v, t))
            .collect()
    }
}

pub fn lstm_step_taped<T: Real>(tape: &mut Tape<T>, z: Var, state: (Var, Var), vars: &LstmVars) -> Result<(Var, (Var, Var))> {
    let v = &vars.vars;
    let hd = vars.hidden;
    let (h0, c0) = state;
    let x = tape.linear(z, v[0], Some(v[1]))?;
    let xh = tape.concat_cols(x, h0)?;
    let gates = tape.linear(xh, v[2], Some(v[3]))?;
    let i = tape.slice_cols(gates, 0, hd)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(gates, hd, hd)?;
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(gates, 2 * hd, hd)?;
    let g = tape.tanh(g);
    let o = tape.slice_cols(gates, 3 * hd, hd)?;
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c0)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    let out = tape.linear(h, v[4], Some(v[5]))?;
    Ok((out, (h, c)))
}

/// Chunk length and how many leading frames are fed as ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutSpec {
    pub len: usize,
    pub observe: usize,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        Self {
            len: CHUNK_LEN,
            observe: OBSERVE_STEPS,
        }
    }
}

impl RolloutSpec {
    pub fn steps(&self) -> usize {
        self.len - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.len < 2 || self.observe == 0 || self.observe > self.len - 1 {
            return Err(Error::invalid(format!(
                "rollout needs 1 <= observe ({}) <= len - 1 ({})",
                self.observe,
                self.len.saturating_sub(1)
            )));
        }
        Ok(())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        self.validate()?;
        if got != self.len {
            return Err(Error::invalid(format!(
                "rollout expects {} latents, got {got}",
                self.len
            )));
        }
        Ok(())
    }
}

/// Predictions in time order; entry `j` predicts frame `j + 1` (0-indexed).
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult<T> {
    pub predictions: Vec<Tensor<T>>,
    /// How many steps consumed a ground-truth latent.
    pub teacher_forced: usize,
    /// How many steps consumed the previous prediction.
    pub recursive: usize,
}

pub fn rollout<T: Real>(latents: &[Tensor<T>], p: &LstmParams<T>, spec: RolloutSpec) -> Result<RolloutResult<T>> {
    spec.check_len(latents.len())?;
    let mut state = LstmState::zeros(p.hidden());
    let mut predictions: Vec<Tensor<T>> = Vec::with_capacity(spec.steps());
    let (mut teacher_forced, mut recursive) = (0, 0);
    for s in 0..spec.steps() {
        let input = if s < spec.observe {
            teacher_forced += 1;
            &latents[s]
        } else {
            recursive += 1;
            predictions.last().expect("observe >= 1")
        };
        let (out, next) = lstm_step(input, &state, p)?;
        state = next;
        predictions.push(out);
    }
    Ok(RolloutResult {
        predictions,
        teacher_forced,
        recursive,
    })
}

pub fn rollout_taped<T: Real>(tape: &mut Tape<T>, latents: &[Var], vars: &LstmVars, spec: RolloutSpec) -> Result<Vec<Var>> {
    spec.check_len(latents.len())?;
    let zero = Tensor::zeros(&[1, vars.hidden]);
    let mut state = (tape.constant(zero.clone()), tape.constant(zero));
    let mut out: Vec<Var> = Vec::with_capacity(spec.steps());
    for s in 0..spec.steps() {
        let input = if s < spec.observe { latents[s] } else { out[s - 1] };
        let (z, next) = lstm_step_taped(tape, input, state, vars)?;
        state = next;
        out.push(z);
    }
    Ok(out)
}

/// Mean over steps of the Chamfer loss between decoded predictions and the
/// following frames; the decoder is a tape constant.
pub fn rollout_loss_and_grad<T: Real>(
    latents: &[Tensor<T>],
    targets: &[Tensor<T>],
    lstm: &LstmParams<T>,
    decoder: &DecoderParams<T>,
    noise: &[NoiseSpec],
    spec: RolloutSpec,
) -> Result<(T, Vec<Tensor<T>>)> {
    spec.check_len(targets.len())?;
    if noise.len() != spec.steps() {
        return Err(Error::invalid("one noise spec per rollout step is required"));
    }
    let mut tape = Tape::new();
    let lv = LstmVars::register(&mut tape, lstm, true);
    let dv = DecoderVars::register(&mut tape, decoder, false);
    let zs: Vec<Var> = latents.iter().map(|z| tape.constant(z.clone())).collect();
    let preds = rollout_taped(&mut tape, &zs, &lv, spec)?;
    let mut losses = Vec::with_capacity(preds.len());
    for (j, &z) in preds.iter().enumerate() {
        losses.push(setdecoder::reconstruction_loss_taped(&mut tape, z, &targets[j + 1], &noise[j], &dv)?);
    }
    let total = tape.add_scalars(&losses)?;
    let loss = tape.scale(total, T::one() / T::from_f64_lossy(losses.len() as f64))?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, lv.gradients(&mut grads, lstm)))
}

/// Per-step losses of one rollout against its chunk, with fixed eval noise.
pub fn rollout_losses(
    latents: &[Tensor<f32>],
    targets: &[Tensor<f32>],
    lstm: &LstmParams<f32>,
    decoder: &DecoderParams<f32>,
    spec: RolloutSpec,
    eval_seed: u64,
) -> Result<(RolloutResult<f32>, Vec<f64>)> {
    let r = rollout(latents, lstm, spec)?;
    let noise = decoder.noise(eval_seed);
    let losses = r
        .predictions
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let x = &targets[j + 1];
            let pred = setdecoder::decode(z, x.rows(), &noise, decoder)?;
            Ok(setdecoder::chamfer(&pred, x)? as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((r, losses))
}

/// Per-step loss curve averaged over chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionEval {
    pub per_step: Vec<f64>,
    pub observe: usize,
}

impl PredictionEval {
    pub fn mean(&self) -> f64 {
        mean(&self.per_step)
    }

    /// Steps whose input was a ground-truth latent.
    pub fn observed_mean(&self) -> f64 {
        mean(&self.per_step[..self.observe])
    }

    /// Steps whose input was the model's own prediction.
    pub fn recursive_mean(&self) -> f64 {
        mean(&self.per_step[self.observe..])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Encoded latents and target tensors of one chunk.
#[derive(Clone, Debug)]
pub struct EncodedChunk {
    pub latents: Vec<Tensor<f32>>,
    pub targets: Vec<Tensor<f32>>,
}

pub fn encode_chunks(chunks: &[Chunk], encoder: &EncoderParams<f32>) -> Result<Vec<EncodedChunk>> {
    chunks
        .iter()
        .map(|c| {
            Ok(EncodedChunk {
                latents: c
                    .frames
                    .iter()
                    .map(|f| encoder::encode(f, encoder))
                    .collect::<Result<_>>()?,
                targets: c.frames.iter().map(PointFrame::to_tensor).collect(),
            })
        })
        .collect()
}

pub fn evaluate_prediction(
    chunks: &[EncodedChunk],
    lstm: &LstmParams<f32>,
    decoder: &DecoderParams<f32>,
    spec: RolloutSpec,
    eval_seed: u64,
) -> Result<PredictionEval> {
    if chunks.is_empty() {
        return Err(Error::Empty("prediction chunks"));
    }
    let mut per_step = vec![0.0; spec.steps()];
    for c in chunks {
        let (_, losses) = rollout_losses(&c.latents, &c.targets, lstm, decoder, spec, eval_seed)?;
        for (acc, l) in per_step.iter_mut().zip(losses) {
            *acc += l;
        }
    }
    for v in &mut per_step {
        *v /= chunks.len() as f64;
    }
    Ok(PredictionEval {
        per_step,
        observe: spec.observe,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmTrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_seed: u64,
    pub spec: RolloutSpec,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 50,
            eval_seed: 0x5eed,
            spec: RolloutSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmTraining {
    pub best: LstmParams<f32>,
    pub best_epoch: usize,
    pub final_params: LstmParams<f32>,
    pub history: Vec<EpochLoss>,
}

impl LstmTraining {
    pub fn best_validation(&self) -> f64 {
        self.history[self.best_epoch - 1].validation
    }
}

/// Stage-3 training over pre-encoded chunks; keeps the best-validation
/// checkpoint (training loss when there is no validation data).
pub fn fit_lstm<R: Rng>(
    init: LstmParams<f32>,
    decoder: &DecoderParams<f32>,
    train: &[EncodedChunk],
    validation: &[EncodedChunk],
    cfg: &LstmTrainConfig,
    rng: &mut R,
) -> Result<LstmTraining> {
    if train.is_empty() {
        return Err(Error::Empty("predictor training chunks"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be at least 1"));
    }
    cfg.spec.validate()?;
    let mut params = init;
    let mut opt = Adam::new(cfg.adam);
    let mut acc = GradAccumulator::zeros_like(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, LstmParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut train_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            acc.reset();
            for &i in batch {
                let noise: Vec<NoiseSpec> = (0..cfg.spec.steps()).map(|_| decoder.noise(rng.random())).collect();
                let c = &train[i];
                let (loss, g) = rollout_loss_and_grad(&c.latents, &c.targets, &params, decoder, &noise, cfg.spec)?;
                train_sum += loss as f64;
                acc.add(&g)?;
            }
            opt.step(&mut params, &acc.mean())?;
        }
        let train_loss = train_sum / train.len() as f64;
        let validation_loss = if validation.is_empty() {
            train_loss
        } else {
            evaluate_prediction(validation, &params, decoder, cfg.spec, cfg.eval_seed)?.mean()
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
    Ok(LstmTraining {
        best,
        best_epoch,
        final_params: params,
        history,
    })
}

/// Encodes the chunks with the frozen encoder and trains the predictor
/// against the frozen decoder.
pub fn train_lstm<R: Rng>(
    encoder: &EncoderParams<f32>,
    decoder: &DecoderParams<f32>,
    init: LstmParams<f32>,
    train: &[Chunk],
    validation: &[Chunk],
    cfg: &LstmTrainConfig,
    rng: &mut R,
) -> Result<LstmTraining> {
    let tr = encode_chunks(train, encoder)?;
    let va = encode_chunks(validation, encoder)?;
    fit_lstm(init, decoder, &tr, &va, cfg, rng)
}

/// Decoded predictions for one chunk, each with the ground truth's cardinality.
#[derive(Clone, Debug)]
pub struct ChunkPrediction {
    pub frames: Vec<PointFrame>,
    pub losses: Vec<f64>,
    pub teacher_forced: usize,
    pub recursive: usize,
}

pub fn predict_sets(
    chunk: &Chunk,
    encoder: &EncoderParams<f32>,
    decoder: &DecoderParams<f32>,
    lstm: &LstmParams<f32>,
    spec: RolloutSpec,
    eval_seed: u64,
) -> Result<ChunkPrediction> {
    let enc = encode_chunks(std::slice::from_ref(chunk), encoder)?.remove(0);
    let (r, losses) = rollout_losses(&enc.latents, &enc.targets, lstm, decoder, spec, eval_seed)?;
    let noise = decoder.noise(eval_seed);
    let frames = r
        .predictions
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let truth = &chunk.frames[j + 1];
            let pts = setdecoder::decode(z, truth.len(), &noise, decoder)?;
            Ok(PointFrame::from_tensor(truth.t, &pts))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChunkPrediction {
        frames,
        losses,
        teacher_forced: r.teacher_forced,
        recursive: r.recursive,
    })
}

const LSTM_FORMAT: &str = "hebbset-lstm";

impl<T: Real> LstmParams<T> {
    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_json(LSTM_FORMAT, self.shape(), self.tensors())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let (shape, data): (LstmShape, _) = checkpoint::from_json(LSTM_FORMAT, s)?;
        let mut params = Self::zeros(&shape);
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

/// Deterministic toy-sized models for gradient checks.
#[doc(hidden)]
pub fn toy_models(seed: u64) -> (LstmParams<f64>, DecoderParams<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = LstmShape {
        latent_dim: 8,
        input_dim: 4,
        hidden: 4,
    };
    let mut lstm = LstmParams::init(&shape, &mut rng);
    for t in lstm.tensors_mut() {
        t.scale_in_place(3.0);
    }
    let dshape = setdecoder::DecoderShape {
        latent_dim: 8,
        noise_dim: 3,
        hidden: vec![6],
    };
    let mut decoder = DecoderParams::init(&dshape, &mut rng).expect("valid toy shape");
    for t in decoder.tensors_mut() {
        t.scale_in_place(3.0);
    }
    (lstm, decoder)
}
