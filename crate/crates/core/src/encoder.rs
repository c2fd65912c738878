//! Per-point MLP encoder with max-normalization, distance-based k-WTA and a
//! global max-pool.
//!
//! Each layer computes, per point, `relu(W·x)`, divides by its maximum and
//! keeps only the `k` neurons whose weight rows lie nearest (Euclidean) to
//! the layer input `x`. The latent is the column-wise max over points of the
//! last layer's code, so it is invariant to point order and duplication.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PointFrame;
use crate::error::{Error, Result};
use crate::numerics::{ops, Parameters, Real, Tape, Tensor, Var};

/// Input, hidden and latent widths of the default encoder.
pub const ENCODER_WIDTHS: [usize; 4] = [2, 32, 128, 256];
pub const LATENT_DIM: usize = 256;
const WARMUP_FRAMES: usize = 64;

/// Prototype rows of one bias-free layer, shaped `[d_out, d_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub weights: Tensor<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn new(weights: Tensor<T>) -> Self {
        Self { weights }
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn row(&self, j: usize) -> &[T] {
        self.weights.row(j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WinnerMask {
    /// Keep the `k` nearest prototypes per point.
    Kwta(usize),
    /// No masking; every neuron passes.
    Disabled,
}

impl WinnerMask {
    pub fn k(self) -> Option<usize> {
        match self {
            WinnerMask::Kwta(k) => Some(k),
            WinnerMask::Disabled => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<LayerWeights<T>>,
    pub mask: WinnerMask,
}

impl<T: Real> EncoderParams<T> {
    pub fn new(layers: Vec<LayerWeights<T>>, mask: WinnerMask) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::ShapeMismatch {
                    op: "encoder",
                    left: pair[0].weights.shape().to_vec(),
                    right: pair[1].weights.shape().to_vec(),
                });
            }
        }
        if let WinnerMask::Kwta(k) = mask {
            let narrowest = layers.iter().map(LayerWeights::d_out).min().unwrap();
            if k == 0 || k > narrowest {
                return Err(Error::invalid(format!(
                    "k = {k} must lie in [1, {narrowest}] (narrowest layer)"
                )));
            }
        }
        Ok(Self { layers, mask })
    }

    /// `[d_in, d1, d2, ...]`
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].d_in()];
        w.extend(self.layers.iter().map(LayerWeights::d_out));
        w
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().unwrap().d_out()
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights::new(l.weights.cast()))
                .collect(),
            mask: self.mask,
        }
    }

    /// Layer 1 rows uniform in `[0,1]^d_in`; deeper rows copied from the
    /// layer inputs of points drawn from `frames` (uniform when `frames` is empty).
    pub fn init<R: Rng>(
        widths: &[usize],
        mask: WinnerMask,
        frames: &[PointFrame],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("encoder widths need an input and at least one layer"));
        }
        let uniform = |rng: &mut R, rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| T::from_f64_lossy(rng.random::<f64>()))
                .collect();
            Tensor::matrix(rows, cols, data).expect("shape")
        };

        let warmup: Vec<Tensor<T>> = if frames.is_empty() {
            Vec::new()
        } else {
            let n = frames.len().min(WARMUP_FRAMES);
            index::sample(rng, frames.len(), n)
                .into_iter()
                .map(|i| frames[i].to_tensor())
                .collect()
        };

        let mut layers: Vec<LayerWeights<T>> = Vec::new();
        let mut inputs = warmup;
        for (l, pair) in widths.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let weights = if l == 0 || inputs.is_empty() {
                uniform(rng, d_out, d_in)
            } else {
                let pool: Vec<&[T]> = inputs
                    .iter()
                    .flat_map(|x| (0..x.rows()).map(move |i| x.row(i)))
                    .collect();
                let picks: Vec<usize> = if pool.len() >= d_out {
                    index::sample(rng, pool.len(), d_out).into_vec()
                } else {
                    (0..d_out).map(|_| rng.random_range(0..pool.len())).collect()
                };
                let data = picks.iter().flat_map(|&p| pool[p].iter().copied()).collect();
                Tensor::matrix(d_out, d_in, data)?
            };
            let layer = LayerWeights::new(weights);
            if !inputs.is_empty() {
                inputs = inputs
                    .iter()
                    .map(|x| layer_forward(x, &layer, mask_for(mask, d_out)))
                    .collect::<Result<_>>()?;
            }
            layers.push(layer);
        }
        Self::new(layers, mask)
    }
}

fn mask_for(mask: WinnerMask, d_out: usize) -> WinnerMask {
    match mask {
        WinnerMask::Kwta(k) => WinnerMask::Kwta(k.min(d_out)),
        m => m,
    }
}

impl<T: Real> Parameters<T> for EncoderParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().map(|l| &mut l.weights).collect()
    }
}

/// `v / max(v)`, or `v` unchanged when its maximum is not positive.
pub fn max_normalize<T: Real>(v: &[T]) -> Vec<T> {
    let m = ops::argmax(v);
    let top = v.get(m).copied().unwrap_or(T::zero());
    if top > T::zero() {
        v.iter().map(|&x| x / top).collect()
    } else {
        v.to_vec()
    }
}

/// Squared distances `[N, d_out]` from every input row to every prototype row.
pub fn distance_matrix<T: Real>(x: &Tensor<T>, w: &LayerWeights<T>) -> Result<Tensor<T>> {
    if x.cols() != w.d_in() {
        return Err(Error::ShapeMismatch {
            op: "kwta",
            left: x.shape().to_vec(),
            right: w.weights.shape().to_vec(),
        });
    }
    let mut d = Tensor::zeros(&[x.rows(), w.d_out()]);
    for i in 0..x.rows() {
        let xi = x.row(i);
        for (j, v) in d.row_mut(i).iter_mut().enumerate() {
            *v = ops::sq_dist(xi, w.row(j));
        }
    }
    Ok(d)
}

fn winners_from_distances<T: Real>(dist: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let key = |a: &usize, b: &usize| dist[*a].partial_cmp(&dist[*b]).unwrap().then(a.cmp(b));
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, key);
    }
    let mut winners = order[..k].to_vec();
    winners.sort_unstable();
    winners
}

/// Indices of the `k` prototype rows nearest to `x`, ascending. Ties go to
/// the lower index.
pub fn kwta_winners<T: Real>(x: &[T], w: &LayerWeights<T>, k: usize) -> Result<Vec<usize>> {
    if x.len() != w.d_in() {
        return Err(Error::ShapeMismatch {
            op: "kwta",
            left: vec![x.len()],
            right: w.weights.shape().to_vec(),
        });
    }
    if k > w.d_out() {
        return Err(Error::invalid(format!("k = {k} exceeds layer width {}", w.d_out())));
    }
    let dist: Vec<T> = (0..w.d_out()).map(|j| ops::sq_dist(x, w.row(j))).collect();
    Ok(winners_from_distances(&dist, k))
}

/// 0/1 mask of the k nearest prototypes for every row of a distance matrix.
fn mask_from_distances<T: Real>(dist: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k > dist.cols() {
        return Err(Error::invalid(format!("k = {k} exceeds layer width {}", dist.cols())));
    }
    let mut m = Tensor::zeros(dist.shape());
    for i in 0..dist.rows() {
        for j in winners_from_distances(dist.row(i), k) {
            m.row_mut(i)[j] = T::one();
        }
    }
    Ok(m)
}

fn winner_mask<T: Real>(x: &Tensor<T>, w: &LayerWeights<T>, k: usize) -> Result<Tensor<T>> {
    mask_from_distances(&distance_matrix(x, w)?, k)
}

/// Code of one layer plus, under k-WTA, the distance matrix used to pick winners.
pub(crate) fn layer_forward_full<T: Real>(
    x: &Tensor<T>,
    w: &LayerWeights<T>,
    mask: WinnerMask,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let z = ops::linear(x, &w.weights, None)?;
    let (a, _) = ops::max_normalize_rows(&ops::relu(&z))?;
    match mask {
        WinnerMask::Kwta(k) => {
            let dist = distance_matrix(x, w)?;
            let keep = mask_from_distances(&dist, k)?;
            Ok((ops::mul(&a, &keep)?, Some(dist)))
        }
        WinnerMask::Disabled => Ok((a, None)),
    }
}

/// One encoder layer applied to the `[N, d_in]` inputs; returns the `[N, d_out]` code.
pub fn layer_forward<T: Real>(x: &Tensor<T>, w: &LayerWeights<T>, mask: WinnerMask) -> Result<Tensor<T>> {
    Ok(layer_forward_full(x, w, mask)?.0)
}

/// Inputs and codes of every layer for one frame.
#[derive(Clone, Debug)]
pub struct EncoderTrace<T> {
    pub inputs: Vec<Tensor<T>>,
    pub codes: Vec<Tensor<T>>,
    /// Input-to-prototype squared distances per layer, when k-WTA is on.
    pub distances: Vec<Option<Tensor<T>>>,
}

impl<T: Real> EncoderTrace<T> {
    pub fn last_code(&self) -> &Tensor<T> {
        self.codes.last().unwrap()
    }

    pub fn latent(&self) -> Tensor<T> {
        ops::max_over_rows(self.last_code()).expect("non-empty").0
    }
}

pub fn trace<T: Real>(points: &Tensor<T>, params: &EncoderParams<T>) -> Result<EncoderTrace<T>> {
    if points.rows() == 0 {
        return Err(Error::Empty("encoder input frame"));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut codes = Vec::with_capacity(params.layers.len());
    let mut distances = Vec::with_capacity(params.layers.len());
    let mut x = points.clone();
    for layer in &params.layers {
        let (y, d) = layer_forward_full(&x, layer, params.mask)?;
        inputs.push(x);
        x = y.clone();
        codes.push(y);
        distances.push(d);
    }
    Ok(EncoderTrace {
        inputs,
        codes,
        distances,
    })
}

/// `[1, d_latent]` global feature of a `[N, 2]` point matrix.
pub fn encode_points<T: Real>(points: &Tensor<T>, params: &EncoderParams<T>) -> Result<Tensor<T>> {
    if points.rows() == 0 {
        return Err(Error::Empty("encoder input frame"));
    }
    let mut x = points.clone();
    for layer in &params.layers {
        x = layer_forward(&x, layer, params.mask)?;
    }
    Ok(ops::max_over_rows(&x)?.0)
}

pub fn encode<T: Real>(frame: &PointFrame, params: &EncoderParams<T>) -> Result<Tensor<T>> {
    encode_points(&frame.to_tensor(), params)
}

/// Tape handles for encoder weights.
pub struct EncoderVars {
    pub layers: Vec<Var>,
}

impl EncoderVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, params: &EncoderParams<T>, trainable: bool) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    tape.param(l.weights.clone())
                } else {
                    tape.constant(l.weights.clone())
                }
            })
            .collect();
        Self { layers }
    }
}

/// Taped forward pass; gradients route through ReLU, the max-normalize
/// divisor and the max-pool argmax. A k-WTA mask, if any, enters as a constant.
pub fn encode_taped<T: Real>(
    tape: &mut Tape<T>,
    points: Var,
    vars: &EncoderVars,
    mask: WinnerMask,
) -> Result<Var> {
    if tape.value(points).rows() == 0 {
        return Err(Error::Empty("encoder input frame"));
    }
    let mut x = points;
    for &w in &vars.layers {
        let z = tape.linear(x, w, None)?;
        let r = tape.relu(z);
        let mut a = tape.max_normalize(r)?;
        if let WinnerMask::Kwta(k) = mask {
            let layer = LayerWeights::new(tape.value(w).clone());
            let keep = winner_mask(tape.value(x), &layer, k)?;
            let keep = tape.constant(keep);
            a = tape.mul(a, keep)?;
        }
        x = a;
    }
    tape.max_over_rows(x)
}

#[derive(Serialize, Deserialize)]
struct EncoderCheckpoint {
    format: String,
    version: u32,
    widths: Vec<usize>,
    k: Option<usize>,
    /// Row-major `[d_out, d_in]` weights per layer.
    weights: Vec<Vec<f64>>,
}

const ENCODER_FORMAT: &str = "hebbset-encoder";

impl<T: Real> EncoderParams<T> {
    pub fn to_json(&self) -> Result<String> {
        let ck = EncoderCheckpoint {
            format: ENCODER_FORMAT.into(),
            version: 1,
            widths: self.widths(),
            k: self.mask.k(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.data().iter().map(|v| v.to_f64_lossy()).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: EncoderCheckpoint = serde_json::from_str(s)?;
        if ck.format != ENCODER_FORMAT || ck.version != 1 {
            return Err(Error::Checkpoint(format!(
                "expected {ENCODER_FORMAT} v1, found {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.widths.len() != ck.weights.len() + 1 {
            return Err(Error::Checkpoint("widths and weights disagree".into()));
        }
        let layers = ck
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| {
                let data = w.into_iter().map(T::from_f64_lossy).collect();
                Tensor::matrix(ck.widths[l + 1], ck.widths[l], data)
                    .map(LayerWeights::new)
                    .map_err(|_| Error::Checkpoint(format!("layer {l} has the wrong size")))
            })
            .collect::<Result<_>>()?;
        let mask = ck.k.map_or(WinnerMask::Disabled, WinnerMask::Kwta);
        Self::new(layers, mask)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
