//! Activity-aware Hebbian / anti-Hebbian training of the k-WTA encoder.
//!
//! Every prototype row `w_j` moves toward (or away from) its nearest layer
//! input by `η · g(p_j) · (x_{i*} − w_j) / N`, where `p_j` is the fraction of
//! points on which neuron `j` is active after k-WTA and `g` compares it to
//! the target activity `k / d_out`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::PointFrame;
use crate::encoder::{self, EncoderParams, LayerWeights, WinnerMask};
use crate::error::{Error, Result};
use crate::numerics::{ops, Real, Tensor};

/// Per-neuron activation statistics of one layer code.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityStats {
    /// `n_r`: points on which neuron `r` is strictly positive.
    pub counts: Vec<usize>,
    /// `p_r = n_r / N`.
    pub p: Vec<f64>,
    pub n_points: usize,
    pub p_star: f64,
}

impl ActivityStats {
    pub fn total_activations(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn activity<T: Real>(code: &Tensor<T>, p_star: f64) -> ActivityStats {
    let n = code.rows();
    let mut counts = vec![0usize; code.cols()];
    for i in 0..n {
        for (c, &v) in counts.iter_mut().zip(code.row(i)) {
            if v > T::zero() {
                *c += 1;
            }
        }
    }
    let p = counts
        .iter()
        .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    ActivityStats {
        counts,
        p,
        n_points: n,
        p_star,
    }
}

/// +1 below the target activity, −1 above it, 0 at it.
pub fn learning_sign(p: f64, p_star: f64) -> i8 {
    if p < p_star {
        1
    } else if p > p_star {
        -1
    } else {
        0
    }
}

/// Index of the input row closest to `w`; lowest index on ties.
pub fn nearest_point<T: Real>(w: &[T], x: &Tensor<T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for i in 0..x.rows() {
        let d = ops::sq_dist(w, x.row(i));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// `ΔW` for explicit per-row signs.
pub fn instar_update<T: Real>(x: &Tensor<T>, w: &LayerWeights<T>, signs: &[i8], eta: f64) -> Result<Tensor<T>> {
    instar_update_with(x, w, signs, eta, |j| nearest_point(w.row(j), x))
}

/// Nearest input of prototype `j`, read off a precomputed `[N, d_out]` distance matrix.
fn nearest_from_distances<T: Real>(dist: &Tensor<T>, j: usize) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for i in 0..dist.rows() {
        let d = dist.get(i, j);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn instar_update_with<T: Real>(
    x: &Tensor<T>,
    w: &LayerWeights<T>,
    signs: &[i8],
    eta: f64,
    nearest: impl Fn(usize) -> usize,
) -> Result<Tensor<T>> {
    if x.cols() != w.d_in() || signs.len() != w.d_out() {
        return Err(Error::ShapeMismatch {
            op: "hebbian_step",
            left: x.shape().to_vec(),
            right: w.weights.shape().to_vec(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("hebbian_step inputs"));
    }
    let scale = T::from_f64_lossy(eta) / T::from_usize(x.rows()).unwrap();
    let mut dw = Tensor::zeros(w.weights.shape());
    for (j, &g) in signs.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let wj = w.row(j);
        let xi = x.row(nearest(j));
        let s = if g > 0 { scale } else { -scale };
        for ((d, &a), &b) in dw.row_mut(j).iter_mut().zip(xi).zip(wj) {
            *d = s * (a - b);
        }
    }
    Ok(dw)
}

/// Activity-aware update of one layer given its inputs and its code.
pub fn hebbian_step<T: Real>(
    x: &Tensor<T>,
    w: &LayerWeights<T>,
    code: &Tensor<T>,
    p_star: f64,
    eta: f64,
) -> Result<Tensor<T>> {
    let stats = activity(code, p_star);
    let signs: Vec<i8> = stats.p.iter().map(|&p| learning_sign(p, p_star)).collect();
    instar_update(x, w, &signs, eta)
}

/// Colliding pairs `Σ_r n_r (n_r − 1) / 2`.
pub fn objective_from_counts(counts: &[usize]) -> u64 {
    counts
        .iter()
        .map(|&n| (n as u64) * (n as u64).saturating_sub(1) / 2)
        .sum()
}

pub fn objective<T: Real>(code: &Tensor<T>) -> f64 {
    objective_from_counts(&activity(code, 0.0).counts) as f64
}

/// `k / d`
pub fn optimal_activity(k: usize, d: usize) -> Result<f64> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("optimal activity needs 1 ≤ k ≤ d, got k={k}, d={d}")));
    }
    Ok(k as f64 / d as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HebbConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for HebbConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            batch_size: 16,
            epochs: 50,
        }
    }
}

impl HebbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Mean objective per layer after an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochObjective {
    pub epoch: usize,
    pub per_layer: Vec<f64>,
}

impl EpochObjective {
    pub fn last_layer(&self) -> f64 {
        *self.per_layer.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct EncoderTraining {
    /// Parameters from the epoch with the lowest last-layer objective.
    pub selected: EncoderParams<f32>,
    pub selected_epoch: usize,
    pub final_params: EncoderParams<f32>,
    /// Objective of the initial parameters (epoch 0).
    pub initial: EpochObjective,
    /// One entry per epoch, starting at epoch 1.
    pub history: Vec<EpochObjective>,
}

impl EncoderTraining {
    pub fn selected_objective(&self) -> f64 {
        self.history[self.selected_epoch - 1].last_layer()
    }
}

/// Mean per-frame objective of every layer.
pub fn mean_objectives<T: Real>(params: &EncoderParams<T>, frames: &[PointFrame]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::Empty("objective frames"));
    }
    let mut sums = vec![0.0; params.layers.len()];
    for f in frames {
        let tr = encoder::trace(&f.to_tensor(), params)?;
        for (s, c) in sums.iter_mut().zip(&tr.codes) {
            *s += objective(c);
        }
    }
    Ok(sums.into_iter().map(|s| s / frames.len() as f64).collect())
}

/// `ΔW` of every layer for one frame, all computed with the current weights.
pub fn frame_updates<T: Real>(params: &EncoderParams<T>, points: &Tensor<T>, eta: f64) -> Result<Vec<Tensor<T>>> {
    let k = params
        .mask
        .k()
        .ok_or_else(|| Error::invalid("Hebbian training needs a k-WTA encoder"))?;
    let tr = encoder::trace(points, params)?;
    params
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let p_star = optimal_activity(k, layer.d_out())?;
            let stats = activity(&tr.codes[l], p_star);
            let signs: Vec<i8> = stats.p.iter().map(|&p| learning_sign(p, p_star)).collect();
            match &tr.distances[l] {
                // squared distance is symmetric bit for bit, so this matches nearest_point
                Some(d) => instar_update_with(&tr.inputs[l], layer, &signs, eta, |j| nearest_from_distances(d, j)),
                None => instar_update(&tr.inputs[l], layer, &signs, eta),
            }
        })
        .collect()
}

/// Stage-1 training. Frames are reshuffled every epoch and consumed in
/// batches; per-frame updates are averaged over the batch and applied to all
/// layers at once. The checkpoint with the lowest mean last-layer objective
/// on `frames` is selected, earliest epoch on ties.
pub fn train_encoder<R: Rng>(
    initial: EncoderParams<f32>,
    frames: &[PointFrame],
    cfg: &HebbConfig,
    rng: &mut R,
) -> Result<EncoderTraining> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("encoder training frames"));
    }
    if !matches!(initial.mask, WinnerMask::Kwta(_)) {
        return Err(Error::invalid("Hebbian training needs a k-WTA encoder"));
    }
    let points: Vec<Tensor<f32>> = frames.iter().map(PointFrame::to_tensor).collect();
    let mut params = initial;
    let initial_obj = EpochObjective {
        epoch: 0,
        per_layer: mean_objectives(&params, frames)?,
    };

    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EncoderParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Tensor<f32>> = params
                .layers
                .iter()
                .map(|l| Tensor::zeros(l.weights.shape()))
                .collect();
            for &i in batch {
                for (a, d) in acc.iter_mut().zip(frame_updates(&params, &points[i], cfg.eta)?) {
                    a.add_assign(&d)?;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for (layer, mut d) in params.layers.iter_mut().zip(acc) {
                d.scale_in_place(inv);
                layer.weights.add_assign(&d)?;
            }
        }
        let obj = EpochObjective {
            epoch,
            per_layer: mean_objectives(&params, frames)?,
        };
        let last = obj.last_layer();
        if best.as_ref().is_none_or(|(b, _, _)| last < *b) {
            best = Some((last, epoch, params.clone()));
        }
        history.push(obj);
    }
    let (_, selected_epoch, selected) = best.expect("at least one epoch");
    Ok(EncoderTraining {
        selected,
        selected_epoch,
        final_params: params,
        initial: initial_obj,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn nearest_point_examples() {
        let x = m(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(nearest_point(&[0.9, 0.0], &x), 1);
        assert_eq!(nearest_point(&[0.5, 0.0], &x), 0);
        assert_eq!(nearest_point(&[0.3, 0.3], &m(&[[0.7, 0.1]])), 0);
    }

    #[test]
    fn activity_examples() {
        let code = m(&[[0.7, 0.0], [1.0, 0.0]]);
        let s = activity(&code, 0.5);
        assert_eq!(s.counts, vec![2, 0]);
        assert_eq!(s.p, vec![1.0, 0.0]);
        let s = activity(&m(&[[0.0, 0.0]]), 0.5);
        assert!(s.p.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn sign_examples() {
        assert_eq!(learning_sign(0.0, 3.0 / 256.0), 1);
        assert_eq!(learning_sign(0.5, 3.0 / 256.0), -1);
        assert_eq!(learning_sign(3.0 / 256.0, 3.0 / 256.0), 0);
    }

    #[test]
    fn step_by_substitution() {
        let w = LayerWeights::new(m(&[[0.0, 0.0]]));
        let x = m(&[[1.0, 0.0]]);
        let dw = instar_update(&x, &w, &[1], 0.01).unwrap();
        assert_eq!(dw.data(), &[0.01, 0.0]);
        let anti = instar_update(&x, &w, &[-1], 0.01).unwrap();
        assert_eq!(anti.data(), &[-0.01, 0.0]);
        let w = LayerWeights::new(m(&[[1.0, 0.0]]));
        assert_eq!(instar_update(&x, &w, &[1], 0.01).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(instar_update(&x, &w, &[-1], 0.01).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn inactive_row_gets_hebbian_update() {
        // zero row never fires: code column is all zero, so p = 0 < p*
        let w = LayerWeights::new(m(&[[0.0, 0.0], [0.9, 0.1]]));
        let x = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let code = encoder::layer_forward(&x, &w, WinnerMask::Kwta(1)).unwrap();
        let dw = hebbian_step(&x, &w, &code, 0.5, 0.01).unwrap();
        assert_eq!(dw.row(0), &[0.005, 0.0]);
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective_from_counts(&[2, 0, 0]), 1);
        assert_eq!(objective_from_counts(&[1, 1, 0]), 0);
        assert_eq!(objective(&m(&[[1.0, 0.0], [0.5, 0.0]])), 1.0);
    }

    #[test]
    fn optimal_activity_examples() {
        assert_eq!(optimal_activity(3, 256).unwrap(), 0.01171875);
        assert_eq!(optimal_activity(1, 1).unwrap(), 1.0);
        assert!(optimal_activity(4, 3).is_err());
    }

    #[test]
    fn dense_encoder_cannot_be_trained_with_hebbian_rule() {
        let w = LayerWeights::new(Tensor::<f32>::zeros(&[2, 2]));
        let p = EncoderParams::new(vec![w], WinnerMask::Disabled).unwrap();
        let f = vec![PointFrame::new(0.0, vec![[0.5, 0.5]])];
        let mut rng = rand::rng();
        assert!(train_encoder(p, &f, &HebbConfig::default(), &mut rng).is_err());
    }
}
