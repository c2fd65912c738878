//! `hebbset` experiment driver. Every subcommand reads the same key-value
//! config, writes its artifacts under the output directory and records a
//! manifest in `manifests/<subcommand>.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hebbset::artifacts::{self, Manifest};
use hebbset::baselines::SelfSupervised;
use hebbset::config::{self, ExperimentConfig};
use hebbset::costmodel;
use hebbset::dataset::{self, DatasetSplit, PointFrame, CHUNK_LEN, MAP_RESOLUTION};
use hebbset::encoder::EncoderParams;
use hebbset::pipeline::{self, EncoderStage, Method};
use hebbset::predictor::{self, LstmParams};
use hebbset::seeds;
use hebbset::setdecoder::{self, DecoderParams, EpochLoss};
use hebbset::Error;

const BUILD: &str = env!("HEBBSET_BUILD");

#[derive(Parser)]
#[command(name = "hebbset", version, about = "Hebbian point-set encoder experiments")]
struct Cli {
    /// Key-value config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set hebb.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set output=DIR`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic frames into `frames.jsonl`.
    GenData,
    /// Train the activity-aware Hebbian encoder.
    TrainEncoder {
        /// Winners per point; defaults to the config's `k`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Build a baseline encoder: `untrained` or `self_supervised`.
    TrainBaseline {
        #[arg(long)]
        kind: String,
    },
    /// Train the set decoder against a frozen encoder.
    TrainDecoder {
        /// `hebbian_k<N>`, `untrained` or `self_supervised`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Train the latent LSTM against a frozen encoder and decoder.
    TrainLstm {
        #[arg(long)]
        method: Option<String>,
    },
    /// Reconstruction loss table over the configured methods.
    EvalRecon {
        /// Comma-separated methods, overriding `eval.methods`.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Per-step prediction loss on the test chunks, plus predicted frames.
    EvalPredict {
        #[arg(long)]
        method: Option<String>,
    },
    /// Encoder-data ablation of Hebbian against self-supervised training.
    LimitedData {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Analytic parameter, activation and FLOP counts.
    CostReport {
        /// Points per set for per-point layers.
        #[arg(long)]
        n: Option<u64>,
    },
    /// Rasterize one frame of a frames file to PGM.
    Render {
        /// Frames file; defaults to the dataset.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = MAP_RESOLUTION)]
        resolution: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::GenData => "gen-data",
            Self::TrainEncoder { .. } => "train-encoder",
            Self::TrainBaseline { .. } => "train-baseline",
            Self::TrainDecoder { .. } => "train-decoder",
            Self::TrainLstm { .. } => "train-lstm",
            Self::EvalRecon { .. } => "eval-recon",
            Self::EvalPredict { .. } => "eval-predict",
            Self::LimitedData { .. } => "limited-data",
            Self::CostReport { .. } => "cost-report",
            Self::Render { .. } => "render",
        }
    }
}

/// Usage and config problems exit 1, everything else 2.
enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::Usage(Error::Config {
                    field: "--config".into(),
                    message: format!("{}: {e}", path.display()),
                })
            })?;
            ExperimentConfig::parse(&text).map_err(Failure::Usage)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv).map_err(Failure::Usage)?;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn method_arg(cfg: &ExperimentConfig, arg: &Option<String>) -> CliResult<Method> {
    match arg {
        Some(s) => Ok(config::parse_method("--method", s)?),
        None => Ok(Method::Hebbian { k: cfg.k }),
    }
}

struct Run {
    cfg: ExperimentConfig,
    command: &'static str,
    outputs: Vec<String>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    /// Path for a new artifact, recorded in the manifest.
    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_owned());
        self.path(name)
    }

    fn require(&self, name: &str, stage: &'static str) -> hebbset::Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingPrerequisite {
                stage,
                path: p.display().to_string(),
            })
        }
    }

    fn frames(&self) -> hebbset::Result<Vec<PointFrame>> {
        let path = match &self.cfg.data_path {
            Some(p) => p.clone(),
            None => self.require("frames.jsonl", "gen-data")?,
        };
        dataset::load_frames(path)
    }

    fn split(&self) -> hebbset::Result<DatasetSplit> {
        let chunks = dataset::make_chunks(&self.frames()?, CHUNK_LEN)?;
        let split = dataset::split(chunks, seeds::substream(self.cfg.seed, "split"));
        if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
            return Err(Error::invalid(format!(
                "need at least 10 chunks of {CHUNK_LEN} frames for a train/validation/test split"
            )));
        }
        Ok(split)
    }

    fn encoder(&self, m: Method) -> hebbset::Result<EncoderParams<f32>> {
        let stage = match m {
            Method::Hebbian { .. } => "train-encoder",
            _ => "train-baseline",
        };
        EncoderParams::load(self.require(&format!("encoder_{}.json", m.label()), stage)?)
    }

    fn decoder(&self, m: Method) -> hebbset::Result<DecoderParams<f32>> {
        DecoderParams::load(self.require(&format!("decoder_{}.json", m.label()), "train-decoder")?)
    }

    fn finish(self) -> hebbset::Result<()> {
        let dir = self.path("manifests");
        fs::create_dir_all(&dir)?;
        Manifest::new(self.command, &self.cfg, BUILD, self.outputs).save(dir.join(format!("{}.json", self.command)))
    }
}

#[derive(Serialize)]
struct ObjectiveRow {
    epoch: usize,
    layer: usize,
    objective: f64,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    train: f64,
    validation: f64,
}

fn loss_rows(h: &[EpochLoss]) -> Vec<LossRow> {
    h.iter()
        .map(|e| LossRow {
            epoch: e.epoch,
            train: e.train,
            validation: e.validation,
        })
        .collect()
}

#[derive(Serialize)]
struct ReconRow {
    method: String,
    k: Option<usize>,
    train: f64,
    validation: f64,
    test: f64,
}

#[derive(Serialize)]
struct PredictRow {
    step: usize,
    segment: &'static str,
    loss: f64,
}

fn gen_data(run: &mut Run) -> hebbset::Result<()> {
    let frames = dataset::synth_generate(&run.cfg.synth, seeds::substream(run.cfg.seed, "data"))?;
    dataset::save_frames(run.output("frames.jsonl"), &frames)?;
    println!("wrote {} frames", frames.len());
    Ok(())
}

fn encoder_with_records(run: &mut Run, method: Method) -> hebbset::Result<()> {
    let split = run.split()?;
    let stage = pipeline::encoder_stage(method, &split.train_frames(), &split.validation_frames(), &run.cfg.pipeline)?;
    let label = method.label();
    stage.encoder.save(run.output(&format!("encoder_{label}.json")))?;
    if let Some(t) = &stage.hebbian {
        let rows: Vec<ObjectiveRow> = std::iter::once(&t.initial)
            .chain(&t.history)
            .flat_map(|e| {
                e.per_layer.iter().enumerate().map(move |(l, &o)| ObjectiveRow {
                    epoch: e.epoch,
                    layer: l + 1,
                    objective: o,
                })
            })
            .collect();
        artifacts::write_csv(run.output(&format!("encoder_{label}_objective.csv")), &rows)?;
        println!(
            "{label}: last-layer objective {:.3} at init, {:.3} at selected epoch {}",
            t.initial.last_layer(),
            t.selected_objective(),
            t.selected_epoch
        );
    }
    if let Some(s) = &stage.self_supervised {
        s.decoder.save(run.output(&format!("joint_decoder_{label}.json")))?;
        artifacts::write_csv(run.output(&format!("encoder_{label}_history.csv")), &loss_rows(&s.history))?;
        println!("{label}: joint training selected epoch {}", s.best_epoch);
    }
    if stage.hebbian.is_none() && stage.self_supervised.is_none() {
        println!("{label}: random encoder written");
    }
    Ok(())
}

fn train_decoder(run: &mut Run, method: Method) -> hebbset::Result<()> {
    let split = run.split()?;
    let encoder = run.encoder(method)?;
    let self_supervised = match method {
        Method::SelfSupervised => {
            let p = run.require(&format!("joint_decoder_{}.json", method.label()), "train-baseline")?;
            Some(SelfSupervised {
                encoder: encoder.clone(),
                decoder: DecoderParams::load(p)?,
                best_epoch: 0,
                history: Vec::new(),
            })
        }
        _ => None,
    };
    let stage = EncoderStage {
        encoder,
        hebbian: None,
        self_supervised,
    };
    let t = pipeline::decoder_stage(method, &stage, &split.train_frames(), &split.validation_frames(), &run.cfg.pipeline)?;
    let label = method.label();
    t.best.save(run.output(&format!("decoder_{label}.json")))?;
    artifacts::write_csv(run.output(&format!("decoder_{label}_history.csv")), &loss_rows(&t.history))?;
    let test = setdecoder::reconstruction_loss(&stage.encoder, &t.best, &split.test_frames(), run.cfg.pipeline.decoder.eval_seed)?;
    println!("{label}: best epoch {}, test reconstruction {test:.6}", t.best_epoch);
    Ok(())
}

fn train_lstm(run: &mut Run, method: Method) -> hebbset::Result<()> {
    let split = run.split()?;
    let (encoder, decoder) = (run.encoder(method)?, run.decoder(method)?);
    let t = pipeline::lstm_stage(method, &encoder, &decoder, &split.train, &split.validation, &run.cfg.pipeline)?;
    let label = method.label();
    t.best.save(run.output(&format!("lstm_{label}.json")))?;
    artifacts::write_csv(run.output(&format!("lstm_{label}_history.csv")), &loss_rows(&t.history))?;
    println!(
        "{label}: best epoch {}, validation {:.6}",
        t.best_epoch,
        t.history.get(t.best_epoch.saturating_sub(1)).map_or(f64::NAN, |e| e.validation)
    );
    Ok(())
}

fn eval_recon(run: &mut Run, methods: &[Method]) -> hebbset::Result<()> {
    let split = run.split()?;
    let (train, val, test) = (split.train_frames(), split.validation_frames(), split.test_frames());
    let seed = run.cfg.pipeline.decoder.eval_seed;
    let mut rows = Vec::new();
    for &m in methods {
        let (enc, dec) = (run.encoder(m)?, run.decoder(m)?);
        let loss = |frames: &[PointFrame]| setdecoder::reconstruction_loss(&enc, &dec, frames, seed);
        rows.push(ReconRow {
            method: m.label(),
            k: match m {
                Method::Hebbian { k } => Some(k),
                _ => None,
            },
            train: loss(&train)?,
            validation: loss(&val)?,
            test: loss(&test)?,
        });
    }
    artifacts::write_csv(run.output("recon.csv"), &rows)?;
    println!("{:<18} {:>12} {:>12} {:>12}", "model", "train", "validation", "test");
    for r in &rows {
        println!("{:<18} {:>12.4e} {:>12.4e} {:>12.4e}", r.method, r.train, r.validation, r.test);
    }
    Ok(())
}

fn eval_predict(run: &mut Run, method: Method) -> hebbset::Result<()> {
    let split = run.split()?;
    let (encoder, decoder) = (run.encoder(method)?, run.decoder(method)?);
    let label = method.label();
    let lstm = LstmParams::load(run.require(&format!("lstm_{label}.json"), "train-lstm")?)?;
    let (spec, eval_seed) = (run.cfg.pipeline.lstm.spec, run.cfg.pipeline.lstm.eval_seed);
    let enc = predictor::encode_chunks(&split.test, &encoder)?;
    let eval = predictor::evaluate_prediction(&enc, &lstm, &decoder, spec, eval_seed)?;
    let rows: Vec<PredictRow> = eval
        .per_step
        .iter()
        .enumerate()
        .map(|(s, &loss)| PredictRow {
            step: s + 1,
            segment: if s < eval.observe { "observed" } else { "recursive" },
            loss,
        })
        .collect();
    artifacts::write_csv(run.output(&format!("predict_{label}.csv")), &rows)?;
    let mut frames = Vec::new();
    for c in &split.test {
        frames.extend(predictor::predict_sets(c, &encoder, &decoder, &lstm, spec, eval_seed)?.frames);
    }
    dataset::save_frames(run.output(&format!("predictions_{label}.jsonl")), &frames)?;
    println!(
        "{label}: mean {:.6}, observed {:.6}, recursive {:.6} over {} steps",
        eval.mean(),
        eval.observed_mean(),
        eval.recursive_mean(),
        eval.per_step.len()
    );
    Ok(())
}

fn limited_data(run: &mut Run, k: usize) -> hebbset::Result<()> {
    let split = run.split()?;
    let c = &run.cfg;
    let rows = pipeline::limited_data_study(&split, &c.study_fractions, &c.study_seeds, k, &c.pipeline, c.study_prediction)?;
    artifacts::write_csv(run.output("limited_data.csv"), &rows)?;
    println!("{:<18} {:>9} {:>8} {:>12}", "method", "fraction", "seed", "test recon");
    for r in &rows {
        println!("{:<18} {:>9} {:>8} {:>12.4e}", r.method, r.fraction, r.seed, r.recon_loss);
    }
    Ok(())
}

fn cost_report(run: &mut Run, n: Option<u64>) -> hebbset::Result<()> {
    let p = &run.cfg.pipeline;
    let n = n.unwrap_or(run.cfg.cost_n);
    let reports = costmodel::standard_reports(&p.widths, &p.lstm_shape, &p.decoder_shape, n)?;
    print!("{}", costmodel::render_table(&reports));
    let total = &reports[reports.len() - 2];
    let frame = &reports[reports.len() - 1];
    let r = costmodel::compare_report(total, frame)?;
    println!("convlstm / total: activations x{:.1}, flops x{:.1}", r.activations, r.flops);
    fs::write(
        run.output("cost.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "reports": reports, "ratios": r }))? + "\n",
    )?;
    artifacts::write_csv(run.output("cost.csv"), &reports)?;
    Ok(())
}

fn render(run: &mut Run, input: &Option<PathBuf>, index: usize, resolution: usize) -> hebbset::Result<()> {
    let frames = match input {
        Some(p) => dataset::load_frames(p)?,
        None => run.frames()?,
    };
    let frame = frames
        .get(index)
        .ok_or_else(|| Error::invalid(format!("frame {index} out of range ({} frames)", frames.len())))?;
    let bitmap = dataset::rasterize(frame, resolution)?;
    let stem = input
        .as_deref()
        .and_then(Path::file_stem)
        .map_or("frames".into(), |s| s.to_string_lossy().into_owned());
    fs::create_dir_all(run.path("render"))?;
    let out = run.output(&format!("render/{stem}_{index}.pgm"));
    fs::write(&out, bitmap.to_pgm())?;
    println!("{} occupied pixels -> {}", bitmap.occupancy(), out.display());
    Ok(())
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cfg.output).map_err(|e| Failure::Runtime(e.into()))?;
    let mut run = Run {
        cfg,
        command: cli.command.name(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::GenData => gen_data(&mut run)?,
        Command::TrainEncoder { k } => {
            let k = k.unwrap_or(run.cfg.k);
            if k == 0 {
                return Err(Failure::Usage(Error::Config {
                    field: "--k".into(),
                    message: "must be at least 1".into(),
                }));
            }
            encoder_with_records(&mut run, Method::Hebbian { k })?
        }
        Command::TrainBaseline { kind } => {
            let m = config::parse_method("--kind", kind)?;
            if let Method::Hebbian { .. } = m {
                return Err(Failure::Usage(Error::Config {
                    field: "--kind".into(),
                    message: "expected untrained or self_supervised".into(),
                }));
            }
            encoder_with_records(&mut run, m)?
        }
        Command::TrainDecoder { method } => {
            let m = method_arg(&run.cfg, method)?;
            train_decoder(&mut run, m)?
        }
        Command::TrainLstm { method } => {
            let m = method_arg(&run.cfg, method)?;
            train_lstm(&mut run, m)?
        }
        Command::EvalRecon { methods } => {
            let ms = match methods {
                Some(s) => s
                    .split(',')
                    .map(|m| config::parse_method("--methods", m.trim()))
                    .collect::<hebbset::Result<Vec<_>>>()?,
                None => run.cfg.recon_methods.clone(),
            };
            eval_recon(&mut run, &ms)?
        }
        Command::EvalPredict { method } => {
            let m = method_arg(&run.cfg, method)?;
            eval_predict(&mut run, m)?
        }
        Command::LimitedData { k } => {
            let k = k.unwrap_or(run.cfg.k);
            limited_data(&mut run, k)?
        }
        Command::CostReport { n } => cost_report(&mut run, *n)?,
        Command::Render { input, index, resolution } => render(&mut run, input, *index, *resolution)?,
    }
    run.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
