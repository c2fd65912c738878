//! Three-stage training per method and the limited-data study.

use serde::{Deserialize, Serialize};

use crate::baselines::{self, SelfSupervised};
use crate::dataset::{Chunk, DatasetSplit, PointFrame};
use crate::encoder::{EncoderParams, WinnerMask, ENCODER_WIDTHS};
use crate::error::{Error, Result};
use crate::hebbian::{self, EncoderTraining, HebbConfig};
use crate::predictor::{self, LstmParams, LstmShape, LstmTrainConfig, LstmTraining, PredictionEval};
use crate::seeds;
use crate::setdecoder::{self, DecoderParams, DecoderShape, DecoderTrainConfig, DecoderTraining};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Hebbian { k: usize },
    Untrained,
    SelfSupervised,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Self::Hebbian { k } => format!("hebbian_k{k}"),
            Self::Untrained => "untrained".into(),
            Self::SelfSupervised => "self_supervised".into(),
        }
    }

    /// Stream label, so every method draws independent randomness.
    fn stream(self, stage: &str) -> String {
        format!("{}/{stage}", self.label())
    }
}

/// How Hebbian encoder weights start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInit {
    /// Every row uniform in `[0, 1]^d_in`.
    #[default]
    Uniform,
    /// Layer 1 uniform, deeper rows copied from warm-up layer inputs.
    FromData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub widths: Vec<usize>,
    pub encoder_init: EncoderInit,
    pub hebb: HebbConfig,
    pub decoder_shape: DecoderShape,
    pub decoder: DecoderTrainConfig,
    pub self_supervised: DecoderTrainConfig,
    pub lstm_shape: LstmShape,
    pub lstm: LstmTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            widths: ENCODER_WIDTHS.to_vec(),
            encoder_init: EncoderInit::default(),
            hebb: HebbConfig::default(),
            decoder_shape: DecoderShape::default(),
            decoder: DecoderTrainConfig::default(),
            self_supervised: DecoderTrainConfig::default(),
            lstm_shape: LstmShape::default(),
            lstm: LstmTrainConfig::default(),
        }
    }
}

/// Stage-1 outcome; carries the training record of whichever method ran.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub encoder: EncoderParams<f32>,
    pub hebbian: Option<EncoderTraining>,
    pub self_supervised: Option<SelfSupervised>,
}

pub fn encoder_stage(
    method: Method,
    frames: &[PointFrame],
    validation: &[PointFrame],
    cfg: &PipelineConfig,
) -> Result<EncoderStage> {
    let mut rng = seeds::rng(cfg.seed, &method.stream("encoder"));
    match method {
        Method::Hebbian { k } => {
            let warmup = match cfg.encoder_init {
                EncoderInit::Uniform => &[][..],
                EncoderInit::FromData => frames,
            };
            let init = EncoderParams::init(&cfg.widths, WinnerMask::Kwta(k), warmup, &mut rng)?;
            let t = hebbian::train_encoder(init, frames, &cfg.hebb, &mut rng)?;
            Ok(EncoderStage {
                encoder: t.selected.clone(),
                hebbian: Some(t),
                self_supervised: None,
            })
        }
        Method::Untrained => Ok(EncoderStage {
            encoder: baselines::random_encoder(&cfg.widths, &mut rng)?,
            hebbian: None,
            self_supervised: None,
        }),
        Method::SelfSupervised => {
            let enc = baselines::random_encoder(&cfg.widths, &mut rng)?;
            let dec = DecoderParams::init(&cfg.decoder_shape, &mut rng)?;
            let s = baselines::train_self_supervised(enc, dec, frames, validation, &cfg.self_supervised, &mut rng)?;
            Ok(EncoderStage {
                encoder: s.encoder.clone(),
                hebbian: None,
                self_supervised: Some(s),
            })
        }
    }
}

/// Stage 2 on the full training frames. The self-supervised decoder starts
/// from its jointly trained weights; the others start fresh.
pub fn decoder_stage(
    method: Method,
    stage: &EncoderStage,
    train: &[PointFrame],
    validation: &[PointFrame],
    cfg: &PipelineConfig,
) -> Result<DecoderTraining> {
    let mut rng = seeds::rng(cfg.seed, &method.stream("decoder"));
    let init = match &stage.self_supervised {
        Some(s) => s.decoder.clone(),
        None => DecoderParams::init(&cfg.decoder_shape, &mut rng)?,
    };
    setdecoder::train_decoder(&stage.encoder, init, train, validation, &cfg.decoder, &mut rng)
}

pub fn lstm_stage(
    method: Method,
    encoder: &EncoderParams<f32>,
    decoder: &DecoderParams<f32>,
    train: &[Chunk],
    validation: &[Chunk],
    cfg: &PipelineConfig,
) -> Result<LstmTraining> {
    let mut rng = seeds::rng(cfg.seed, &method.stream("lstm"));
    let init = LstmParams::init(&cfg.lstm_shape, &mut rng);
    predictor::train_lstm(encoder, decoder, init, train, validation, &cfg.lstm, &mut rng)
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub encoder: EncoderStage,
    pub decoder: DecoderTraining,
    /// Mean reconstruction loss on the test frames.
    pub recon_test: f64,
    pub lstm: Option<LstmTraining>,
    pub prediction_test: Option<PredictionEval>,
}

/// Runs all stages for one method. `encoder_frames` feeds stage 1 only; the
/// decoder and LSTM always see the full training split.
pub fn run_method(
    method: Method,
    encoder_frames: &[PointFrame],
    split: &DatasetSplit,
    cfg: &PipelineConfig,
    with_prediction: bool,
) -> Result<MethodRun> {
    let (train, validation, test) = (split.train_frames(), split.validation_frames(), split.test_frames());
    if test.is_empty() {
        return Err(Error::Empty("test frames"));
    }
    let encoder = encoder_stage(method, encoder_frames, &validation, cfg)?;
    let decoder = decoder_stage(method, &encoder, &train, &validation, cfg)?;
    let recon_test = setdecoder::reconstruction_loss(&encoder.encoder, &decoder.best, &test, cfg.decoder.eval_seed)?;
    let (lstm, prediction_test) = if with_prediction {
        let l = lstm_stage(method, &encoder.encoder, &decoder.best, &split.train, &split.validation, cfg)?;
        let enc_test = predictor::encode_chunks(&split.test, &encoder.encoder)?;
        let eval = predictor::evaluate_prediction(&enc_test, &l.best, &decoder.best, cfg.lstm.spec, cfg.lstm.eval_seed)?;
        (Some(l), Some(eval))
    } else {
        (None, None)
    };
    Ok(MethodRun {
        method,
        encoder,
        decoder,
        recon_test,
        lstm,
        prediction_test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub seed: u64,
    pub fraction: f64,
    pub method: String,
    pub encoder_frames: usize,
    pub recon_loss: f64,
    pub prediction_loss: Option<f64>,
}

pub const STUDY_FRACTIONS: [f64; 6] = [0.5, 0.25, 0.1, 0.05, 0.02, 0.01];

/// For each seed and fraction, trains the Hebbian and self-supervised
/// encoders on a nested frame-level subsample of the training split and
/// everything downstream on the full split. Rows are ordered by seed,
/// fraction, then method.
pub fn limited_data_study(
    split: &DatasetSplit,
    fractions: &[f64],
    study_seeds: &[u64],
    k: usize,
    cfg: &PipelineConfig,
    with_prediction: bool,
) -> Result<Vec<StudyRow>> {
    let train = split.train_frames();
    let mut rows = Vec::with_capacity(fractions.len() * study_seeds.len() * 2);
    for &seed in study_seeds {
        let run_cfg = PipelineConfig { seed, ..cfg.clone() };
        for &fraction in fractions {
            let idx = baselines::subsample(train.len(), fraction, seeds::substream(seed, "subsample"))?;
            let frames: Vec<PointFrame> = idx.iter().map(|&i| train[i].clone()).collect();
            for method in [Method::Hebbian { k }, Method::SelfSupervised] {
                let run = run_method(method, &frames, split, &run_cfg, with_prediction)?;
                rows.push(StudyRow {
                    seed,
                    fraction,
                    method: method.label(),
                    encoder_frames: frames.len(),
                    recon_loss: run.recon_test,
                    prediction_loss: run.prediction_test.map(|p| p.mean()),
                });
            }
        }
    }
    Ok(rows)
}
