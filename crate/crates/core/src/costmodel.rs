//! Analytic parameter, activation and FLOP counts.
//!
//! FLOPs are two per multiply-accumulate. Biases, elementwise activations,
//! normalization and k-WTA distance work are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::LstmShape;
use crate::setdecoder::DecoderShape;

/// Reference point count for per-point rows.
pub const REFERENCE_N: u64 = 159;

/// Whether a layer runs once per point or once per set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    PerPoint,
    PerSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layer {
    Linear { input: u64, output: u64, bias: bool },
    Activation { dim: u64 },
    /// Four gates over `[x, h]`; the result of each gate counts once.
    LstmCell { input: u64, hidden: u64 },
    /// Same-padded convolution over an `h × w` map.
    Conv { kh: u64, kw: u64, cin: u64, cout: u64, h: u64, w: u64 },
    /// Four same-padded gate convolutions over the stacked `[x, h]` channels.
    ConvLstmCell { kh: u64, kw: u64, input: u64, hidden: u64, h: u64, w: u64 },
    /// Reduces per-point features of this width to one vector per set.
    MaxPool { dim: u64 },
}

impl Layer {
    fn input_dim(&self) -> u64 {
        match *self {
            Self::Linear { input, .. } | Self::LstmCell { input, .. } => input,
            Self::Activation { dim } | Self::MaxPool { dim } => dim,
            Self::Conv { cin, h, w, .. } => cin * h * w,
            Self::ConvLstmCell { input, h, w, .. } => input * h * w,
        }
    }

    fn output_dim(&self) -> u64 {
        match *self {
            Self::Linear { output, .. } => output,
            Self::LstmCell { hidden, .. } => hidden,
            Self::Activation { dim } | Self::MaxPool { dim } => dim,
            Self::Conv { cout, h, w, .. } => cout * h * w,
            Self::ConvLstmCell { hidden, h, w, .. } => hidden * h * w,
        }
    }

    pub fn params(&self) -> u64 {
        match *self {
            Self::Linear { input, output, bias } => input * output + if bias { output } else { 0 },
            Self::LstmCell { input, hidden } => 4 * ((input + hidden) * hidden + hidden),
            Self::Conv { kh, kw, cin, cout, .. } => kh * kw * cin * cout + cout,
            Self::ConvLstmCell { kh, kw, input, hidden, .. } => 4 * (kh * kw * (input + hidden) * hidden + hidden),
            Self::Activation { .. } | Self::MaxPool { .. } => 0,
        }
    }

    /// FLOPs for one application.
    pub fn flops(&self) -> u64 {
        match *self {
            Self::Linear { input, output, .. } => 2 * input * output,
            Self::LstmCell { input, hidden } => 4 * 2 * (input + hidden) * hidden,
            Self::Conv { kh, kw, cin, cout, h, w } => 2 * kh * kw * cin * cout * h * w,
            Self::ConvLstmCell { kh, kw, input, hidden, h, w } => 4 * 2 * kh * kw * (input + hidden) * hidden * h * w,
            Self::Activation { .. } | Self::MaxPool { .. } => 0,
        }
    }

    /// Activations for one application. An LSTM cell holds four gate
    /// outputs plus the cell state, its tanh and the hidden state.
    pub fn activations(&self) -> u64 {
        match *self {
            Self::LstmCell { hidden, .. } => 7 * hidden,
            Self::ConvLstmCell { hidden, h, w, .. } => 7 * hidden * h * w,
            _ => self.output_dim(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub layer: Layer,
    pub multiplicity: Multiplicity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    stages: Vec<Stage>,
}

impl ArchSpec {
    /// Checks that consecutive widths agree and that pooling consumes
    /// per-point features.
    pub fn new(name: impl Into<String>, stages: Vec<Stage>) -> Result<Self> {
        for (i, s) in stages.iter().enumerate() {
            if let Layer::MaxPool { .. } = s.layer {
                if s.multiplicity != Multiplicity::PerPoint {
                    return Err(Error::invalid(format!("stage {i}: max pool must read per-point features")));
                }
            }
            if s.layer.input_dim() == 0 || s.layer.output_dim() == 0 {
                return Err(Error::invalid(format!("stage {i}: zero width")));
            }
        }
        for (i, pair) in stages.windows(2).enumerate() {
            let (a, b) = (pair[0].layer.output_dim(), pair[1].layer.input_dim());
            if a != b {
                return Err(Error::invalid(format!("stage {}: input width {b} does not follow {a}", i + 1)));
            }
        }
        Ok(Self {
            name: name.into(),
            stages,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Joins two specs without a width check at the seam, since separate
    /// modules may hand over through a broadcast or a sampler.
    pub fn concat(&self, other: &ArchSpec, name: impl Into<String>) -> ArchSpec {
        ArchSpec {
            name: name.into(),
            stages: self.stages.iter().chain(&other.stages).copied().collect(),
        }
    }

    fn has_per_point(&self) -> bool {
        self.stages.iter().any(|s| s.multiplicity == Multiplicity::PerPoint)
    }

    fn times(&self, s: &Stage, n: u64) -> u64 {
        match (s.layer, s.multiplicity) {
            (Layer::MaxPool { .. }, _) | (_, Multiplicity::PerSet) => 1,
            (_, Multiplicity::PerPoint) => n,
        }
    }

    fn check_n(&self, n: u64) -> Result<()> {
        if n == 0 && self.has_per_point() {
            return Err(Error::invalid(format!("{}: per-point layers need N >= 1", self.name)));
        }
        Ok(())
    }
}

fn per_point(layer: Layer) -> Stage {
    Stage {
        layer,
        multiplicity: Multiplicity::PerPoint,
    }
}

fn per_set(layer: Layer) -> Stage {
    Stage {
        layer,
        multiplicity: Multiplicity::PerSet,
    }
}

/// Bias-free linear + ReLU per point for each width step, then max pooling.
pub fn encoder_spec(widths: &[usize]) -> Result<ArchSpec> {
    if widths.len() < 2 {
        return Err(Error::invalid("encoder needs at least two widths"));
    }
    let mut stages = Vec::new();
    for w in widths.windows(2) {
        let (input, output) = (w[0] as u64, w[1] as u64);
        stages.push(per_point(Layer::Linear {
            input,
            output,
            bias: false,
        }));
        stages.push(per_point(Layer::Activation { dim: output }));
    }
    stages.push(per_point(Layer::MaxPool {
        dim: *widths.last().unwrap() as u64,
    }));
    ArchSpec::new("encoder", stages)
}

/// One step: input map, LSTM cell, output map.
pub fn predictor_spec(shape: &LstmShape) -> Result<ArchSpec> {
    let (l, i, h) = (shape.latent_dim as u64, shape.input_dim as u64, shape.hidden as u64);
    ArchSpec::new(
        "predictor",
        vec![
            per_set(Layer::Linear {
                input: l,
                output: i,
                bias: true,
            }),
            per_set(Layer::LstmCell { input: i, hidden: h }),
            per_set(Layer::Linear {
                input: h,
                output: l,
                bias: true,
            }),
        ],
    )
}

/// Per output point: `[latent ‖ noise]` through the ReLU stack to a
/// sigmoid coordinate head.
pub fn decoder_spec(shape: &DecoderShape) -> Result<ArchSpec> {
    let mut widths = vec![(shape.latent_dim + shape.noise_dim) as u64];
    widths.extend(shape.hidden.iter().map(|&h| h as u64));
    widths.push(2);
    let mut stages = Vec::new();
    for w in widths.windows(2) {
        stages.push(per_point(Layer::Linear {
            input: w[0],
            output: w[1],
            bias: true,
        }));
        stages.push(per_point(Layer::Activation { dim: w[1] }));
    }
    ArchSpec::new("decoder", stages)
}

/// Frame-based comparison: one ConvLSTM cell with 32 hidden channels on a
/// 256×256 occupancy map, then a 7×7 conv back to one sigmoid channel.
pub fn convlstm_spec() -> ArchSpec {
    let (h, w) = (256, 256);
    ArchSpec::new(
        "convlstm",
        vec![
            per_set(Layer::ConvLstmCell {
                kh: 7,
                kw: 7,
                input: 1,
                hidden: 32,
                h,
                w,
            }),
            per_set(Layer::Conv {
                kh: 7,
                kw: 7,
                cin: 32,
                cout: 1,
                h,
                w,
            }),
            per_set(Layer::Activation { dim: h * w }),
        ],
    )
    .expect("fixed spec chains")
}

pub fn count_params(spec: &ArchSpec) -> u64 {
    spec.stages.iter().map(|s| s.layer.params()).sum()
}

pub fn count_flops(spec: &ArchSpec, n: u64) -> Result<u64> {
    spec.check_n(n)?;
    Ok(spec.stages.iter().map(|s| spec.times(s, n) * s.layer.flops()).sum())
}

pub fn count_activations(spec: &ArchSpec, n: u64) -> Result<u64> {
    spec.check_n(n)?;
    Ok(spec.stages.iter().map(|s| spec.times(s, n) * s.layer.activations()).sum())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub name: String,
    /// Points per set the per-point counts assume.
    pub n: u64,
    pub params: u64,
    pub activations: u64,
    pub flops: u64,
}

pub fn report(spec: &ArchSpec, n: u64) -> Result<CostReport> {
    Ok(CostReport {
        name: spec.name.clone(),
        n,
        params: count_params(spec),
        activations: count_activations(spec, n)?,
        flops: count_flops(spec, n)?,
    })
}

/// Sum of module reports taken at the same N.
pub fn total(name: impl Into<String>, parts: &[CostReport]) -> Result<CostReport> {
    let n = parts.first().ok_or(Error::Empty("cost reports"))?.n;
    if parts.iter().any(|p| p.n != n) {
        return Err(Error::invalid("reports were taken at different N"));
    }
    Ok(CostReport {
        name: name.into(),
        n,
        params: parts.iter().map(|p| p.params).sum(),
        activations: parts.iter().map(|p| p.activations).sum(),
        flops: parts.iter().map(|p| p.flops).sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub activations: f64,
    pub flops: f64,
}

/// How many times more the frame-based model costs than `model`.
pub fn compare_report(model: &CostReport, convlstm: &CostReport) -> Result<Ratios> {
    if model.n != convlstm.n {
        return Err(Error::invalid("reports were taken at different N"));
    }
    if model.activations == 0 || model.flops == 0 {
        return Err(Error::invalid("model report has a zero count; ratio is undefined"));
    }
    Ok(Ratios {
        activations: convlstm.activations as f64 / model.activations as f64,
        flops: convlstm.flops as f64 / model.flops as f64,
    })
}

/// Reports for the encoder, predictor, decoder, their total and the
/// frame-based model, all at `n` points (the decoder emits `n` points too).
pub fn standard_reports(
    widths: &[usize],
    lstm: &LstmShape,
    decoder: &DecoderShape,
    n: u64,
) -> Result<Vec<CostReport>> {
    let parts = vec![
        report(&encoder_spec(widths)?, n)?,
        report(&predictor_spec(lstm)?, n)?,
        report(&decoder_spec(decoder)?, n)?,
    ];
    let mut all = parts.clone();
    all.push(total("total", &parts)?);
    all.push(CostReport {
        n,
        ..report(&convlstm_spec(), n)?
    });
    Ok(all)
}

/// Short human form: 36.9k, 12.1M, 27.3G.
pub fn human(v: u64) -> String {
    let x = v as f64;
    match v {
        0..=999 => v.to_string(),
        1_000..=999_999 => format!("{:.1}k", x / 1e3),
        1_000_000..=999_999_999 => format!("{:.1}M", x / 1e6),
        _ => format!("{:.1}G", x / 1e9),
    }
}

pub fn render_table(reports: &[CostReport]) -> String {
    let name_w = reports.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>12}  {:>14}  {:>16}  {:>4}",
        "model", "parameters", "activations", "flops", "N"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>12}  {:>14}  {:>16}  {:>4}   ({} / {} / {})",
            r.name,
            r.params,
            r.activations,
            r.flops,
            r.n,
            human(r.params),
            human(r.activations),
            human(r.flops)
        );
    }
    out
}
