//! The `scatternet` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use scatternet_core::loss::{merge_identical_classes, MergedClasses};
use scatternet_core::model::{build_model, layer_specs, LayerSpec, ModelConfig, Variant};
use scatternet_core::pipeline::{filter_and_split, make_synthetic_dataset, prepare_examples, synthetic_weights, Example, Record};
use scatternet_core::trainer::{evaluate, gradient_suite, Trainer};
use scatternet_core::wavelets::{analyticity_report, filter_bank, FilterBank};

use crate::config::{parse_override, read_pairs, resolve, SEED_VAR};
use crate::dataset::{load_dataset, write_dataset, CLASSES_FILE};
use crate::tables::{read_weights, score_tables, LabelTable};
use crate::{checkpoint, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "scatternet", version, about = "Scatter-augmented residual network for multilabel 12-lead ECG classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset directory and write the best checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset
    Eval(EvalArgs),
    /// Score a prediction table against a truth table
    Score(ScoreArgs),
    /// Print the parameter count and per-layer table
    Params(ParamsArgs),
    /// Run the 64-bit gradient check suite
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset
    Synth(SynthArgs),
    /// Print the filter-bank report
    Doctor(DoctorArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Weight matrix CSV [default: <data>/classes.csv]
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Model preset (full|tiny)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any configuration key, as key=value; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Holdout,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitName,
    /// Weight matrix CSV; must agree with the checkpoint's classes
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the probabilities as CSV
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    /// Write the binary targets as CSV
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// per_record|pooled
    #[arg(long, default_value = "per_record")]
    pub normalization: String,
}

#[derive(Debug, clap::Args)]
pub struct ParamsArgs {
    #[arg(long, value_parser = parse_variant, default_value = "scatter")]
    pub variant: Variant,
    #[arg(long, default_value = "full")]
    pub preset: String,
    #[arg(long, default_value_t = 24)]
    pub classes: usize,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Coordinates probed per parameter tensor of the network
    #[arg(long, default_value_t = 3)]
    pub per_input: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub records: usize,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct DoctorArgs {
    /// FFT length of the spectral estimates
    #[arg(long, default_value_t = 256)]
    pub fft_len: usize,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: scatternet_core::Error| e.to_string())
}

/// Parses `args` (program name first) and runs the command, writing its
/// report to `out`.
pub fn run<I, T, W>(args: I, out: &mut W) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(stdout_err)?;
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.render().to_string())),
    };
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Score(a) => score(a, out),
        Command::Params(a) => params(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Doctor(a) => doctor(a, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io(Path::new("<output>"), e)
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_err)?
    };
}

fn weights_path(data: &Path, weights: Option<PathBuf>) -> PathBuf {
    weights.unwrap_or_else(|| data.join(CLASSES_FILE))
}

fn split_examples(records: Vec<Record>, merged: &MergedClasses, seed: u64) -> Result<[Vec<Example>; 3]> {
    let split = filter_and_split(records, merged, seed)?;
    Ok([
        prepare_examples(&split.train, merged),
        prepare_examples(&split.val, merged),
        prepare_examples(&split.holdout, merged),
    ])
}

fn train<W: Write>(a: TrainArgs, out: &mut W) -> Result<()> {
    let file = a.config.as_deref().map(read_pairs).transpose()?.unwrap_or_default();
    let mut cli = Vec::new();
    if let Some(p) = &a.preset {
        cli.push(("preset".to_string(), p.clone()));
    }
    if let Some(v) = a.variant {
        cli.push(("variant".to_string(), v.name().to_string()));
    }
    if let Some(e) = a.epochs {
        cli.push(("max_epochs".to_string(), e.to_string()));
    }
    if let Some(s) = a.seed {
        cli.push(("seed".to_string(), s.to_string()));
    }
    for o in &a.overrides {
        cli.push(parse_override(o)?);
    }
    let env_seed = std::env::var(SEED_VAR).ok();
    let cfg = resolve(&file, env_seed.as_deref(), &cli)?;

    let weights = read_weights(&weights_path(&a.data, a.weights))?;
    let merged = merge_identical_classes(&weights);
    let records = load_dataset(&a.data)?;
    let [train, val, _] = split_examples(records, &merged, cfg.seed)?;
    say!(out, "{} classes ({} merged), {} train / {} val pieces", weights.dim(), merged.dim(), train.len(), val.len());
    let max_epochs = cfg.max_epochs;
    let mut trainer = Trainer::new(cfg, merged.matrix.clone(), train, val)?;
    while trainer.epoch() < max_epochs {
        let log = trainer.run_epoch()?;
        say!(
            out,
            "epoch {:>4}  lr {:.1e}  train loss {:.6}  val score {:.6}  val bce {:.6}  best {:.6}",
            log.epoch,
            log.lr,
            log.train_loss,
            log.val_score,
            log.val_bce,
            log.best_score
        );
    }
    let best = trainer.best().cloned().unwrap_or_else(|| trainer.checkpoint());
    checkpoint::save(&a.out, &best)?;
    say!(out, "wrote {} (epoch {}, val score {:?})", a.out.display(), best.epoch, best.best_score);
    Ok(())
}

fn eval<W: Write>(a: EvalArgs, out: &mut W) -> Result<()> {
    let ck = checkpoint::load(&a.ckpt)?;
    if let Some(path) = &a.weights {
        let merged = merge_identical_classes(&read_weights(path)?);
        if merged.matrix != ck.weights {
            return Err(Error::format(
                path,
                format!("{} merged classes, the checkpoint was trained on {} different ones", merged.dim(), ck.weights.dim()),
            ));
        }
    }
    let merged = merge_identical_classes(&ck.weights);
    let records = load_dataset(&a.data)?;
    let [train, val, holdout] = split_examples(records, &merged, ck.config.seed)?;
    let examples = match a.split {
        SplitName::Train => train,
        SplitName::Val => val,
        SplitName::Holdout => holdout,
    };
    let report = evaluate(&ck.model, &examples, &ck.weights, &ck.config)?;
    let split = a.split.to_possible_value().map_or(String::new(), |v| v.get_name().to_string());
    say!(out, "split {split}: {} pieces", examples.len());
    say!(out, "score {}", report.score);
    say!(out, "bce {}", report.bce);
    say!(out, "{:<24} {:>9} {:>9}", "class", "precision", "recall");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for c in &report.per_class {
        say!(out, "{:<24} {:>9} {:>9}", c.label, show(c.precision), show(c.recall));
    }
    let classes = ck.weights.labels().to_vec();
    if let Some(path) = &a.pred_out {
        LabelTable {
            classes: classes.clone(),
            rows: report.probabilities.clone(),
        }
        .write(path)?;
    }
    if let Some(path) = &a.truth_out {
        LabelTable {
            classes,
            rows: report.targets.clone(),
        }
        .write(path)?;
    }
    Ok(())
}

fn score<W: Write>(a: ScoreArgs, out: &mut W) -> Result<()> {
    let normalization = scatternet_core::trainer::parse_normalization(&a.normalization)?;
    let weights = read_weights(&a.weights)?;
    let s = score_tables(&a.truth, &a.pred, &weights, a.threshold, normalization)?;
    say!(out, "{s:?}");
    Ok(())
}

/// Parameter count and per-layer table of one architecture.
pub fn params_report(variant: Variant, preset: &str, classes: usize) -> Result<(usize, Vec<(String, usize)>)> {
    let cfg = ModelConfig {
        n_classes: classes,
        ..ModelConfig::preset(preset)?
    };
    let model = build_model::<f32>(&cfg, variant, 0)?;
    Ok((model.parameter_count(), model.layer_table()))
}

fn params<W: Write>(a: ParamsArgs, out: &mut W) -> Result<()> {
    let (count, table) = params_report(a.variant, &a.preset, a.classes)?;
    let cfg = ModelConfig {
        n_classes: a.classes,
        ..ModelConfig::preset(&a.preset)?
    };
    say!(out, "{count}");
    say!(out, "{:<16} {:>8}  shape", "layer", "params");
    let specs = layer_specs(&cfg);
    for (name, n) in &table {
        say!(out, "{name:<16} {n:>8}  {}", layer_shape(&specs, name, a.variant));
    }
    say!(out, "{:<16} {count:>8}  ({} variant, {} preset, {} classes)", "total", a.variant.name(), a.preset, a.classes);
    Ok(())
}

/// Channels, kernel and stride of one row of the parameter table.
fn layer_shape(specs: &[LayerSpec], name: &str, variant: Variant) -> String {
    let describe = |i: usize, o: usize, k: Option<usize>, stride: usize| {
        let mut d = format!("{i} -> {o}");
        if let Some(k) = k {
            d += &format!(", k{k}");
        }
        if stride != 1 {
            d += &format!(", stride {stride}");
        }
        d
    };
    if let Some(rest) = name.strip_prefix("residual.") {
        let (stage, block) = rest.split_once('.').unwrap_or((rest, "1"));
        let Some(spec) = specs.iter().find(|s| s.name == format!("residual.{stage}.x")) else {
            return String::new();
        };
        let first = block == "1";
        let cin = if first { spec.in_channels } else { spec.out_channels };
        let stride = if first { spec.stride } else { 1 };
        let (w1, w2) = spec.widths.unwrap_or_default();
        let kind = if variant == Variant::Scatter && stride == 2 { "scatter" } else { "bottleneck" };
        return format!("{}, widths {w1}/{w2}, {kind}", describe(cin, spec.out_channels, None, stride));
    }
    specs
        .iter()
        .find(|s| s.name == name)
        .map_or(String::new(), |s| describe(s.in_channels, s.out_channels, s.kernel, s.stride))
}

fn gradcheck<W: Write>(a: GradcheckArgs, out: &mut W) -> Result<()> {
    let results = gradient_suite(a.per_input, a.seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        say!(
            out,
            "{verdict:<4} {:<24} max rel {:.3e} (< {:.0e}), {} coordinates",
            r.name,
            r.report.max_relative_error,
            r.tolerance,
            r.report.checked
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(scatternet_core::Error::NumericalAbort {
            epoch: 0,
            batch: 0,
            lr: 0.0,
            reason: format!("{failed} gradient checks above tolerance"),
        }
        .into());
    }
    say!(out, "all {} checks passed", results.len());
    Ok(())
}

fn synth<W: Write>(a: SynthArgs, out: &mut W) -> Result<()> {
    let records = make_synthetic_dataset(a.records, a.classes, a.seed)?;
    write_dataset(&a.out, &records, &synthetic_weights(a.classes))?;
    say!(out, "wrote {} records with {} classes to {}", records.len(), a.classes, a.out.display());
    Ok(())
}

/// Filter-bank figures: the taps' sums, their symmetry residuals, the
/// negative-frequency energy share of the high-pass and the Lipschitz
/// bound of one scatter layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Doctor {
    pub sum_phi: f64,
    pub sum_psi_re: f64,
    pub sum_psi_im: f64,
    /// `max |phi[n] - phi[-n]|`
    pub phi_symmetry: f64,
    /// `max |psi[n] - conj(psi[-n])|`, split into real and imaginary parts
    pub psi_conjugate_symmetry: (f64, f64),
    pub neg_freq_energy_ratio: f64,
    pub lipschitz_bound: f64,
}

pub fn doctor_report(fb: &FilterBank, fft_len: usize) -> Result<Doctor> {
    let n = fb.phi.len();
    let mirror = |c: &[f64], sign: f64| (0..n).map(|i| (c[i] - sign * c[n - 1 - i]).abs()).fold(0.0, f64::max);
    let report = analyticity_report(fb, fft_len)?;
    Ok(Doctor {
        sum_phi: fb.phi.iter().sum(),
        sum_psi_re: fb.psi_re.iter().sum(),
        sum_psi_im: fb.psi_im.iter().sum(),
        phi_symmetry: mirror(&fb.phi, 1.0),
        psi_conjugate_symmetry: (mirror(&fb.psi_re, 1.0), mirror(&fb.psi_im, -1.0)),
        neg_freq_energy_ratio: report.neg_freq_energy_ratio,
        lipschitz_bound: report.lipschitz_bound,
    })
}

fn doctor<W: Write>(a: DoctorArgs, out: &mut W) -> Result<()> {
    let d = doctor_report(&filter_bank(), a.fft_len)?;
    say!(out, "sum(phi)                   {:+.3e}", d.sum_phi);
    say!(out, "sum(psi) re / im           {:+.3e} / {:+.3e}", d.sum_psi_re, d.sum_psi_im);
    say!(out, "phi symmetry residual      {:.3e}", d.phi_symmetry);
    say!(out, "psi conj-symmetry re / im  {:.3e} / {:.3e}", d.psi_conjugate_symmetry.0, d.psi_conjugate_symmetry.1);
    say!(out, "negative-frequency ratio   {:.7} (fft {})", d.neg_freq_energy_ratio, a.fft_len);
    say!(out, "Lipschitz bound C*         {:.12}", d.lipschitz_bound);
    Ok(())
}
