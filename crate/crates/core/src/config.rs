//! Plain-text `key = value` experiment configuration.
//!
//! Every key has a default, so an empty file is valid. Later assignments
//! win, which is how command-line overrides are applied.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::pipeline::{EncoderInit, Method, PipelineConfig, STUDY_FRACTIONS};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Frames file to read; when unset the synthetic generator's output in
    /// the output directory is used.
    pub data_path: Option<PathBuf>,
    pub synth: SynthConfig,
    pub output: PathBuf,
    /// Winner count for the Hebbian encoder trained by default.
    pub k: usize,
    /// Methods evaluated by the reconstruction table.
    pub recon_methods: Vec<Method>,
    /// Encoder-data fractions; 1.0 gives the full-data reference.
    pub study_fractions: Vec<f64>,
    pub study_seeds: Vec<u64>,
    pub study_prediction: bool,
    /// Points per set for the cost report.
    pub cost_n: u64,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_path: None,
            synth: SynthConfig::default(),
            output: PathBuf::from("out"),
            k: 5,
            recon_methods: vec![
                Method::Untrained,
                Method::SelfSupervised,
                Method::Hebbian { k: 1 },
                Method::Hebbian { k: 3 },
                Method::Hebbian { k: 5 },
                Method::Hebbian { k: 7 },
            ],
            study_fractions: std::iter::once(1.0).chain(STUDY_FRACTIONS).collect(),
            study_seeds: vec![0, 1, 2],
            study_prediction: false,
            cost_n: crate::costmodel::REFERENCE_N,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_owned(),
        message: message.into(),
    }
}

fn scalar<T: FromStr>(field: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| cfg_err(field, format!("cannot parse `{v}`: {e}")))
}

fn list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| scalar(field, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_method(field: &str, s: &str) -> Result<Method> {
    match s {
        "untrained" => Ok(Method::Untrained),
        "self_supervised" => Ok(Method::SelfSupervised),
        _ => match s.strip_prefix("hebbian_k").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Method::Hebbian { k }),
            _ => Err(cfg_err(
                field,
                format!("unknown method `{s}` (untrained, self_supervised or hebbian_k<N>)"),
            )),
        },
    }
}

impl ExperimentConfig {
    /// Parses file text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override, as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| cfg_err(kv, "override must look like key=value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "seed" => {
                self.seed = scalar(key, v)?;
                p.seed = self.seed;
            }
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "k" => self.k = scalar(key, v)?,
            "synth.frames" => self.synth.frames = scalar(key, v)?,
            "synth.initial_units" => self.synth.initial_units = scalar(key, v)?,
            "synth.min_units" => self.synth.min_units = scalar(key, v)?,
            "synth.max_units" => self.synth.max_units = scalar(key, v)?,
            "synth.speed" => self.synth.speed = scalar(key, v)?,
            "synth.jitter" => self.synth.jitter = scalar(key, v)?,
            "synth.spread" => self.synth.spread = scalar(key, v)?,
            "synth.spawn_rate" => self.synth.spawn_rate = scalar(key, v)?,
            "synth.death_rate" => self.synth.death_rate = scalar(key, v)?,
            "synth.period" => self.synth.period = scalar(key, v)?,
            "encoder.widths" => {
                p.widths = list(key, v)?;
                if let Some(&last) = p.widths.last() {
                    p.decoder_shape.latent_dim = last;
                    p.lstm_shape.latent_dim = last;
                }
            }
            "encoder.init" => {
                p.encoder_init = match v {
                    "uniform" => EncoderInit::Uniform,
                    "from_data" => EncoderInit::FromData,
                    _ => return Err(cfg_err(key, format!("expected uniform or from_data, found `{v}`"))),
                }
            }
            "hebb.eta" => p.hebb.eta = scalar(key, v)?,
            "hebb.batch_size" => p.hebb.batch_size = scalar(key, v)?,
            "hebb.epochs" => p.hebb.epochs = scalar(key, v)?,
            "decoder.noise_dim" => p.decoder_shape.noise_dim = scalar(key, v)?,
            "decoder.hidden" => p.decoder_shape.hidden = list(key, v)?,
            "decoder.lr" => p.decoder.adam.lr = scalar(key, v)?,
            "decoder.batch_size" => p.decoder.batch_size = scalar(key, v)?,
            "decoder.epochs" => p.decoder.epochs = scalar(key, v)?,
            "baseline.lr" => p.self_supervised.adam.lr = scalar(key, v)?,
            "baseline.batch_size" => p.self_supervised.batch_size = scalar(key, v)?,
            "baseline.epochs" => p.self_supervised.epochs = scalar(key, v)?,
            "lstm.input_dim" => p.lstm_shape.input_dim = scalar(key, v)?,
            "lstm.hidden" => p.lstm_shape.hidden = scalar(key, v)?,
            "lstm.lr" => p.lstm.adam.lr = scalar(key, v)?,
            "lstm.batch_size" => p.lstm.batch_size = scalar(key, v)?,
            "lstm.epochs" => p.lstm.epochs = scalar(key, v)?,
            "lstm.observe" => p.lstm.spec.observe = scalar(key, v)?,
            "eval.seed" => {
                let s = scalar(key, v)?;
                p.decoder.eval_seed = s;
                p.self_supervised.eval_seed = s;
                p.lstm.eval_seed = s;
            }
            "eval.methods" => {
                self.recon_methods = v
                    .split(',')
                    .map(|s| parse_method(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "study.fractions" => self.study_fractions = list(key, v)?,
            "study.seeds" => self.study_seeds = list(key, v)?,
            "study.prediction" => self.study_prediction = scalar(key, v)?,
            "cost.n" => self.cost_n = scalar(key, v)?,
            _ => return Err(cfg_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.pipeline;
        let s = &self.synth;
        vec![
            ("seed", self.seed.to_string()),
            (
                "data.path",
                self.data_path.as_ref().map(|d| d.display().to_string()).unwrap_or_default(),
            ),
            ("output", self.output.display().to_string()),
            ("k", self.k.to_string()),
            ("synth.frames", s.frames.to_string()),
            ("synth.initial_units", s.initial_units.to_string()),
            ("synth.min_units", s.min_units.to_string()),
            ("synth.max_units", s.max_units.to_string()),
            ("synth.speed", s.speed.to_string()),
            ("synth.jitter", s.jitter.to_string()),
            ("synth.spread", s.spread.to_string()),
            ("synth.spawn_rate", s.spawn_rate.to_string()),
            ("synth.death_rate", s.death_rate.to_string()),
            ("synth.period", s.period.to_string()),
            ("encoder.widths", join(&p.widths)),
            (
                "encoder.init",
                match p.encoder_init {
                    EncoderInit::Uniform => "uniform",
                    EncoderInit::FromData => "from_data",
                }
                .into(),
            ),
            ("hebb.eta", p.hebb.eta.to_string()),
            ("hebb.batch_size", p.hebb.batch_size.to_string()),
            ("hebb.epochs", p.hebb.epochs.to_string()),
            ("decoder.noise_dim", p.decoder_shape.noise_dim.to_string()),
            ("decoder.hidden", join(&p.decoder_shape.hidden)),
            ("decoder.lr", p.decoder.adam.lr.to_string()),
            ("decoder.batch_size", p.decoder.batch_size.to_string()),
            ("decoder.epochs", p.decoder.epochs.to_string()),
            ("baseline.lr", p.self_supervised.adam.lr.to_string()),
            ("baseline.batch_size", p.self_supervised.batch_size.to_string()),
            ("baseline.epochs", p.self_supervised.epochs.to_string()),
            ("lstm.input_dim", p.lstm_shape.input_dim.to_string()),
            ("lstm.hidden", p.lstm_shape.hidden.to_string()),
            ("lstm.lr", p.lstm.adam.lr.to_string()),
            ("lstm.batch_size", p.lstm.batch_size.to_string()),
            ("lstm.epochs", p.lstm.epochs.to_string()),
            ("lstm.observe", p.lstm.spec.observe.to_string()),
            ("eval.seed", p.decoder.eval_seed.to_string()),
            (
                "eval.methods",
                self.recon_methods.iter().map(|m| m.label()).collect::<Vec<_>>().join(","),
            ),
            ("study.fractions", join(&self.study_fractions)),
            ("study.seeds", join(&self.study_seeds)),
            ("study.prediction", self.study_prediction.to_string()),
            ("cost.n", self.cost_n.to_string()),
        ]
    }

    /// Canonical text; parsing it reproduces this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(cfg_err("k", "must be at least 1"));
        }
        if let Some(path) = &self.data_path {
            if !path.exists() {
                return Err(cfg_err("data.path", format!("{} does not exist", path.display())));
            }
        }
        self.synth.validate().map_err(|e| cfg_err("synth", e.to_string()))?;
        let p = &self.pipeline;
        if p.widths.len() < 2 || p.widths[0] != 2 || p.widths.contains(&0) {
            return Err(cfg_err("encoder.widths", "need at least two positive widths starting at 2"));
        }
        for m in &self.recon_methods {
            if let Method::Hebbian { k } = m {
                if p.widths[1..].iter().any(|w| w < k) {
                    return Err(cfg_err("eval.methods", format!("k={k} exceeds a layer width")));
                }
            }
        }
        if p.widths[1..].iter().any(|&w| w < self.k) {
            return Err(cfg_err("k", "exceeds a layer width"));
        }
        if *p.widths.last().unwrap() != p.decoder_shape.latent_dim || p.decoder_shape.latent_dim != p.lstm_shape.latent_dim {
            return Err(cfg_err(
                "encoder.widths",
                "last width must equal the decoder and predictor latent size",
            ));
        }
        p.hebb.validate().map_err(|e| cfg_err("hebb", e.to_string()))?;
        for (field, c) in [
            ("decoder", &p.decoder),
            ("baseline", &p.self_supervised),
        ] {
            if c.epochs == 0 || c.batch_size == 0 {
                return Err(cfg_err(field, "epochs and batch size must be at least 1"));
            }
            if !(c.adam.lr > 0.0) {
                return Err(cfg_err(field, "learning rate must be positive"));
            }
        }
        if p.lstm.epochs == 0 || p.lstm.batch_size == 0 || !(p.lstm.adam.lr > 0.0) {
            return Err(cfg_err("lstm", "epochs, batch size and learning rate must be positive"));
        }
        p.lstm.spec.validate().map_err(|e| cfg_err("lstm.observe", e.to_string()))?;
        if p.decoder_shape.noise_dim == 0 || p.decoder_shape.hidden.is_empty() {
            return Err(cfg_err("decoder", "noise_dim and hidden widths must be non-empty"));
        }
        if self.study_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(cfg_err("study.fractions", "each fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}
