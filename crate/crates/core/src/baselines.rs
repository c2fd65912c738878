//! Comparison encoders: a frozen random encoder and an end-to-end trained one,
//! both without the k-WTA mask, plus seeded nested subsampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PointFrame;
use crate::encoder::{self, EncoderParams, EncoderVars, LayerWeights, WinnerMask, ENCODER_WIDTHS};
use crate::error::{Error, Result};
use crate::numerics::{Adam, GradAccumulator, Real, Tape, Tensor};
use crate::setdecoder::{
    self, DecoderParams, DecoderTrainConfig, DecoderTraining, DecoderVars, EpochLoss, NoiseSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Untrained,
    SelfSupervised,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Untrained => "untrained",
            Self::SelfSupervised => "self_supervised",
        }
    }
}

/// Random encoder without a winner mask; weights uniform in `±1/√d_in`.
pub fn random_encoder<R: Rng>(widths: &[usize], rng: &mut R) -> Result<EncoderParams<f32>> {
    if widths.len() < 2 {
        return Err(Error::invalid("encoder widths need an input and at least one layer"));
    }
    let layers = widths
        .windows(2)
        .map(|p| {
            let bound = 1.0 / (p[0] as f64).sqrt();
            let data = (0..p[0] * p[1]).map(|_| rng.random_range(-bound..bound) as f32).collect();
            Tensor::matrix(p[1], p[0], data).map(LayerWeights::new)
        })
        .collect::<Result<Vec<_>>>()?;
    EncoderParams::new(layers, WinnerMask::Disabled)
}

#[derive(Clone, Debug)]
pub struct UntrainedBaseline {
    pub encoder: EncoderParams<f32>,
    pub decoder: DecoderTraining,
}

/// Stage-2 decoder training against a frozen random encoder.
pub fn run_untrained_baseline(
    seed: u64,
    train: &[PointFrame],
    validation: &[PointFrame],
    cfg: &DecoderTrainConfig,
) -> Result<UntrainedBaseline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = random_encoder(&ENCODER_WIDTHS, &mut rng)?;
    let init = DecoderParams::init(&Default::default(), &mut rng)?;
    let decoder = setdecoder::train_decoder(&encoder, init, train, validation, cfg, &mut rng)?;
    Ok(UntrainedBaseline { encoder, decoder })
}

/// Reconstruction loss and gradients for both networks on one frame.
pub type JointGrads<T> = (T, Vec<Tensor<T>>, Vec<Tensor<T>>);

pub fn end_to_end_loss_and_grad<T: Real>(
    points: &Tensor<T>,
    enc: &EncoderParams<T>,
    dec: &DecoderParams<T>,
    noise: &NoiseSpec,
) -> Result<JointGrads<T>> {
    let mut tape = Tape::new();
    let ev = EncoderVars::register(&mut tape, enc, true);
    let dv = DecoderVars::register(&mut tape, dec, true);
    let x = tape.constant(points.clone());
    let z = encoder::encode_taped(&mut tape, x, &ev, enc.mask)?;
    let loss = setdecoder::reconstruction_loss_taped(&mut tape, z, points, noise, &dv)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let ge = enc
        .layers
        .iter()
        .zip(&ev.layers)
        .map(|(l, &v)| grads.take_or_zeros(v, &l.weights))
        .collect();
    let gd = dv.gradients(&mut grads, dec);
    Ok((value, ge, gd))
}

#[derive(Clone, Debug)]
pub struct SelfSupervised {
    pub encoder: EncoderParams<f32>,
    pub decoder: DecoderParams<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochLoss>,
}

/// Joint encoder/decoder training on the reconstruction loss; keeps the
/// best-validation pair (training loss when there is no validation data).
pub fn train_self_supervised<R: Rng>(
    init_encoder: EncoderParams<f32>,
    init_decoder: DecoderParams<f32>,
    train: &[PointFrame],
    validation: &[PointFrame],
    cfg: &DecoderTrainConfig,
    rng: &mut R,
) -> Result<SelfSupervised> {
    if train.is_empty() {
        return Err(Error::Empty("self-supervised training frames"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be at least 1"));
    }
    let points: Vec<Tensor<f32>> = train.iter().map(PointFrame::to_tensor).collect();
    let (mut enc, mut dec) = (init_encoder, init_decoder);
    let (mut opt_e, mut opt_d) = (Adam::new(cfg.adam), Adam::new(cfg.adam));
    let mut acc_e = GradAccumulator::zeros_like(&enc);
    let mut acc_d = GradAccumulator::zeros_like(&dec);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, EncoderParams<f32>, DecoderParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut train_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            acc_e.reset();
            acc_d.reset();
            for &i in batch {
                let noise = dec.noise(rng.random());
                let (loss, ge, gd) = end_to_end_loss_and_grad(&points[i], &enc, &dec, &noise)?;
                train_sum += loss as f64;
                acc_e.add(&ge)?;
                acc_d.add(&gd)?;
            }
            opt_e.step(&mut enc, &acc_e.mean())?;
            opt_d.step(&mut dec, &acc_d.mean())?;
        }
        let train_loss = train_sum / train.len() as f64;
        let validation_loss = if validation.is_empty() {
            train_loss
        } else {
            setdecoder::reconstruction_loss(&enc, &dec, validation, cfg.eval_seed)?
        };
        if best.as_ref().is_none_or(|b| validation_loss < b.0) {
            best = Some((validation_loss, epoch, enc.clone(), dec.clone()));
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: validation_loss,
        });
    }
    let (_, best_epoch, encoder, decoder) = best.expect("at least one epoch");
    Ok(SelfSupervised {
        encoder,
        decoder,
        best_epoch,
        history,
    })
}

/// Sorted indices of a seeded subsample of `floor(fraction · n)` items.
///
/// For a fixed seed the subsamples are nested: a smaller fraction always
/// selects a subset of a larger one.
pub fn subsample(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} is outside (0, 1]")));
    }
    let count = (fraction * n as f64 + 1e-9).floor() as usize;
    if count == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {n} frames selects no frames"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Parameters};
    use crate::setdecoder::DecoderShape;

    #[test]
    fn subsample_is_nested_and_sized() {
        let full = subsample(1000, 1.0, 3).unwrap();
        assert_eq!(full, (0..1000).collect::<Vec<_>>());
        let ten = subsample(1000, 0.1, 3).unwrap();
        let five = subsample(1000, 0.05, 3).unwrap();
        assert_eq!((ten.len(), five.len()), (100, 50));
        assert!(five.iter().all(|i| ten.binary_search(i).is_ok()));
        assert_eq!(five, subsample(1000, 0.05, 3).unwrap());
        assert!(subsample(50, 0.01, 3).is_err());
        assert!(subsample(50, 0.0, 3).is_err());
        assert!(subsample(50, 1.5, 3).is_err());
    }

    #[test]
    fn disabled_mask_equals_full_width_winners() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = random_encoder(&ENCODER_WIDTHS, &mut rng).unwrap();
        let frame = PointFrame::new(0.0, vec![[0.1, 0.9], [0.5, 0.5], [0.8, 0.3]]);
        let mut x = frame.to_tensor::<f32>();
        for layer in &dense.layers {
            let y = encoder::layer_forward(&x, layer, WinnerMask::Disabled).unwrap();
            let full = encoder::layer_forward(&x, layer, WinnerMask::Kwta(layer.d_out())).unwrap();
            assert_eq!(y, full);
            x = y;
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut enc = EncoderParams::<f64>::init(&[2, 4, 6, 8], WinnerMask::Disabled, &[], &mut rng).unwrap();
        for l in &mut enc.layers {
            for w in l.weights.data_mut() {
                *w = *w * 2.0 - 0.5;
            }
        }
        let shape = DecoderShape {
            latent_dim: 8,
            noise_dim: 3,
            hidden: vec![5],
        };
        let mut dec = DecoderParams::<f64>::init(&shape, &mut rng).unwrap();
        for t in dec.tensors_mut() {
            t.scale_in_place(3.0);
        }
        let points = Tensor::from_rows(&[vec![0.2, 0.7], vec![0.9, 0.4], vec![0.5, 0.1], vec![0.3, 0.3]]).unwrap();
        let noise = NoiseSpec { dim: 3, seed: 4 };
        let (_, ge, gd) = end_to_end_loss_and_grad(&points, &enc, &dec, &noise).unwrap();
        for (k, g) in ge.iter().enumerate() {
            let f = |t: &Tensor<f64>| {
                let mut q = enc.clone();
                q.layers[k].weights = t.clone();
                Ok(end_to_end_loss_and_grad(&points, &q, &dec, &noise)?.0)
            };
            let err = finite_diff_check(f, &enc.layers[k].weights, g, 1e-6).unwrap();
            assert!(err < 1e-4, "encoder layer {k}: {err}");
        }
        for (k, g) in gd.iter().enumerate() {
            let f = |t: &Tensor<f64>| {
                let mut q = dec.clone();
                *q.tensors_mut()[k] = t.clone();
                Ok(end_to_end_loss_and_grad(&points, &enc, &q, &noise)?.0)
            };
            let err = finite_diff_check(f, dec.tensors()[k], g, 1e-6).unwrap();
            assert!(err < 1e-4, "decoder tensor {k}: {err}");
        }
    }

    #[test]
    fn self_supervised_moves_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<_> = (0..4)
            .map(|t| PointFrame::new(t as f64, vec![[0.1, 0.2 + 0.1 * t as f32], [0.7, 0.4]]))
            .collect();
        let enc = EncoderParams::init(&[2, 4, 6, 8], WinnerMask::Disabled, &[], &mut rng).unwrap();
        let shape = DecoderShape {
            latent_dim: 8,
            noise_dim: 3,
            hidden: vec![5],
        };
        let dec = DecoderParams::init(&shape, &mut rng).unwrap();
        let cfg = DecoderTrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let out = train_self_supervised(enc.clone(), dec, &frames, &frames, &cfg, &mut rng).unwrap();
        assert_ne!(out.encoder.layers, enc.layers);
        assert_eq!(out.history.len(), 2);
        assert!(train_self_supervised(enc, out.decoder, &[], &frames, &cfg, &mut rng).is_err());
    }
}
