//! Command-line interface: one binary with `train`, `eval`, `gradcheck`,
//! `pe-dump`, `sweep`, and `synth` subcommands.
//!
//! Option layering: built-in defaults, then `--config <file>` (key=value
//! lines), then explicit flags. Exit codes: 0 success, 1 runtime or numeric
//! failure, 2 usage error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::data::{self, Dataset, SynthKind};
use crate::encoding::EncodingSpec;
use crate::error::Error;
use crate::model::{AttentionTrace, Stacking};
use crate::trainer::sweep::{ablation, sweep, SpaceSpec, SweepOptions};
use crate::trainer::{self, atomic_write, checkpoint, metrics_csv, TrainConfig};
use crate::cell::CellMode;

pub const ENV_DATA_DIR: &str = "LARNN_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "larnn",
    version,
    about = "Linear Attention Recurrent Neural Network laboratory",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint; optionally dump attention weights as CSV.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite; exit 0 iff it passes.
    Gradcheck(GradcheckArgs),
    /// Emit the positional-encoding matrix as CSV and/or a PGM heatmap.
    PeDump(PeDumpArgs),
    /// Two-round random hyperparameter search, or the factorial ablation.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset and write it as CSV.
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// UCI HAR dataset root (default: $LARNN_DATA_DIR)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic task instead of --data: adding | long-sum
    #[arg(long)]
    synth: Option<String>,
    /// Synthetic sample count, split 3:1 into train/test [default: 8000]
    #[arg(long)]
    synth_n: Option<usize>,
    /// Synthetic sequence length [default: 64]
    #[arg(long)]
    seq_len: Option<usize>,
    /// Keep raw values (skip per-channel z-score normalization)
    #[arg(long)]
    no_normalize: bool,
    /// Dataset seed for synthetic generation [default: the training seed]
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Cell mode: vanilla | bnlstm | residual | layer [default: residual]
    #[arg(long)]
    mode: Option<String>,
    /// Hidden width [default: 42]
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention window over past cell states [default: 32]
    #[arg(long)]
    window: Option<usize>,
    /// Attention heads [default: hidden / 2]
    #[arg(long)]
    heads: Option<usize>,
    /// Stacked cells, 1..=3 [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Stacking: residual | plain [default: residual]
    #[arg(long)]
    stacking: Option<String>,
    /// Disable the positional encoding
    #[arg(long)]
    no_pe: bool,
    /// Positional-encoding channels (even) [default: 8]
    #[arg(long)]
    n_pe: Option<usize>,
    /// Disable the ELU+BN activation on the key/value linears
    #[arg(long)]
    no_linear_activation: bool,
    /// Also activate the query linear (off by default)
    #[arg(long)]
    activate_query: bool,
    /// Wrap the layer-mode candidate in tanh (ablation flag)
    #[arg(long)]
    layer_tanh: bool,
}

#[derive(Args, Clone, Default)]
struct OptimArgs {
    /// Training epochs [default: 25]
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient-norm clip [default: 5.0]
    #[arg(long)]
    clip: Option<f64>,
    /// Random seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// key=value file applied before flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint.bin and metrics.csv [default: larnn-out]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Write attention weights (sample,head,timestep,w0..wk-1) here
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    /// How many samples to trace into the attention CSV [default: 8]
    #[arg(long)]
    dump_attention_samples: Option<usize>,
    /// Evaluate the train split instead of the test split
    #[arg(long)]
    train_split: bool,
    /// Seed used when regenerating a synthetic eval set [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Only the eight tiny-model configurations (fastest complete check)
    #[arg(long)]
    tiny_config: bool,
}

#[derive(Args)]
struct PeDumpArgs {
    /// Window size (positions) [default: 128]
    #[arg(long)]
    window: Option<usize>,
    /// Encoding channels (even) [default: 8]
    #[arg(long)]
    n_pe: Option<usize>,
    /// CSV output path (stdout when omitted)
    #[arg(long)]
    csv: Option<PathBuf>,
    /// 8-bit binary PGM heatmap path ([-1,1] mapped to [0,255])
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// key=value file applied before flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON search-space file (defaults to the built-in space)
    #[arg(long)]
    space: Option<PathBuf>,
    /// Search rounds: diffuse, then focused [default: 2]
    #[arg(long)]
    rounds: Option<usize>,
    /// Trials per round [default: 16]
    #[arg(long)]
    trials: Option<usize>,
    /// Round-1 epoch budget (round 2 runs 4x) [default: 25]
    #[arg(long)]
    budget_epochs: Option<usize>,
    /// Parallel trial workers [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON-lines trial log [default: trials.jsonl]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run the factorial {mode, pe, linear-activation} ablation instead
    #[arg(long)]
    ablation: bool,
    /// Seeds per ablation cell [default: 3]
    #[arg(long)]
    ablation_seeds: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// adding | long-sum
    #[arg(long)]
    kind: String,
    /// Sample count [default: 10000]
    #[arg(long)]
    n: Option<usize>,
    /// Sequence length [default: 128]
    #[arg(long)]
    seq_len: Option<usize>,
    /// Random seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Entry point used by `main` and by the CLI tests.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::PeDump(args) => cmd_pe_dump(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            eprintln!("error: {msg}");
            eprintln!();
            eprintln!("{}", cmd.render_help());
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ── layered settings ────────────────────────────────────────────────────

/// Every tunable in positive sense with `None` = "not specified here".
#[derive(Default, Clone)]
struct Settings {
    data: Option<PathBuf>,
    synth: Option<String>,
    synth_n: Option<usize>,
    seq_len: Option<usize>,
    normalize: Option<bool>,
    data_seed: Option<u64>,
    mode: Option<String>,
    hidden: Option<usize>,
    window: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    stacking: Option<String>,
    use_pe: Option<bool>,
    n_pe: Option<usize>,
    activate_linears: Option<bool>,
    activate_query: Option<bool>,
    layer_tanh: Option<bool>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    clip: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Settings {
    /// Later layers win field by field.
    fn layered(mut self, over: Settings) -> Settings {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if over.$field.is_some() { self.$field = over.$field; })*
            };
        }
        take!(
            data, synth, synth_n, seq_len, normalize, data_seed, mode, hidden, window, heads,
            layers, stacking, use_pe, n_pe, activate_linears, activate_query, layer_tanh, epochs,
            batch_size, lr, clip, seed, out
        );
        self
    }

    fn from_args(data: &DataArgs, model: &ModelArgs, optim: &OptimArgs, out: Option<&PathBuf>) -> Settings {
        Settings {
            data: data.data.clone(),
            synth: data.synth.clone(),
            synth_n: data.synth_n,
            seq_len: data.seq_len,
            normalize: data.no_normalize.then_some(false),
            data_seed: data.data_seed,
            mode: model.mode.clone(),
            hidden: model.hidden,
            window: model.window,
            heads: model.heads,
            layers: model.layers,
            stacking: model.stacking.clone(),
            use_pe: model.no_pe.then_some(false),
            n_pe: model.n_pe,
            activate_linears: model.no_linear_activation.then_some(false),
            activate_query: model.activate_query.then_some(true),
            layer_tanh: model.layer_tanh.then_some(true),
            epochs: optim.epochs,
            batch_size: optim.batch_size,
            lr: optim.lr,
            clip: optim.clip,
            seed: optim.seed,
            out: out.cloned(),
        }
    }

    fn from_config_file(path: &Path) -> CliResult<Settings> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            let bad = |what: &str| {
                usage(format!(
                    "{}:{}: {what} value '{value}'",
                    path.display(),
                    i + 1
                ))
            };
            match key.as_str() {
                "data" => s.data = Some(PathBuf::from(value)),
                "synth" => s.synth = Some(value.to_string()),
                "synth_n" => s.synth_n = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "seq_len" => s.seq_len = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "normalize" => s.normalize = Some(parse_bool(value).ok_or_else(|| bad("bad boolean"))?),
                "data_seed" => s.data_seed = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "mode" => s.mode = Some(value.to_string()),
                "hidden" => s.hidden = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "window" => s.window = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "heads" => s.heads = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "layers" => s.layers = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "stacking" => s.stacking = Some(value.to_string()),
                "use_pe" => s.use_pe = Some(parse_bool(value).ok_or_else(|| bad("bad boolean"))?),
                "n_pe" => s.n_pe = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "activate_linears" => {
                    s.activate_linears = Some(parse_bool(value).ok_or_else(|| bad("bad boolean"))?)
                }
                "activate_query" => {
                    s.activate_query = Some(parse_bool(value).ok_or_else(|| bad("bad boolean"))?)
                }
                "layer_tanh" => s.layer_tanh = Some(parse_bool(value).ok_or_else(|| bad("bad boolean"))?),
                "epochs" => s.epochs = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "batch_size" => s.batch_size = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "lr" => s.lr = Some(value.parse().map_err(|_| bad("bad float"))?),
                "clip" => s.clip = Some(value.parse().map_err(|_| bad("bad float"))?),
                "seed" => s.seed = Some(value.parse().map_err(|_| bad("bad integer"))?),
                "out" => s.out = Some(PathBuf::from(value)),
                other => {
                    return Err(usage(format!(
                        "{}:{}: unknown config key '{other}'",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(s)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Some(true),
        "false" | "0" | "off" | "no" => Some(false),
        _ => None,
    }
}

enum DataSource {
    Har { root: PathBuf },
    Synth { kind: SynthKind, n: usize, steps: usize, seed: u64 },
}

struct Resolved {
    config: TrainConfig,
    source: DataSource,
    normalize: bool,
    out: PathBuf,
}

fn resolve(settings: Settings) -> CliResult<Resolved> {
    let env_data = std::env::var_os(ENV_DATA_DIR).map(PathBuf::from);
    let data = settings.data.clone().or(env_data);
    let source = match (&settings.synth, data) {
        (Some(_), Some(_)) if settings.data.is_some() => {
            return Err(usage("--data and --synth are mutually exclusive"));
        }
        (Some(kind), _) => DataSource::Synth {
            kind: SynthKind::parse(kind)?,
            n: settings.synth_n.unwrap_or(8000),
            steps: settings.seq_len.unwrap_or(64),
            seed: settings.data_seed.or(settings.seed).unwrap_or(42),
        },
        (None, Some(root)) => DataSource::Har { root },
        (None, None) => {
            return Err(usage(format!(
                "no dataset: pass --data <dir>, --synth <kind>, or set {ENV_DATA_DIR}"
            )));
        }
    };

    let hidden = settings.hidden.unwrap_or(42);
    let mut config = TrainConfig {
        lr: settings.lr.unwrap_or(1e-3),
        clip_norm: settings.clip.unwrap_or(5.0),
        epochs: settings.epochs.unwrap_or(25),
        batch_size: settings.batch_size.unwrap_or(32),
        seed: settings.seed.unwrap_or(42),
        ..TrainConfig::default()
    };
    config.model.hidden = hidden;
    config.model.window = settings.window.unwrap_or(32);
    config.model.heads = settings.heads.unwrap_or((hidden / 2).max(1));
    config.model.layers = settings.layers.unwrap_or(2);
    config.model.mode = CellMode::parse(settings.mode.as_deref().unwrap_or("residual"))?;
    config.model.stacking = Stacking::parse(settings.stacking.as_deref().unwrap_or("residual"))?;
    config.model.use_pe = settings.use_pe.unwrap_or(true);
    config.model.n_pe = settings.n_pe.unwrap_or(8);
    config.model.activate_linears = settings.activate_linears.unwrap_or(true);
    config.model.activate_query = settings.activate_query.unwrap_or(false);
    config.model.layer_tanh = settings.layer_tanh.unwrap_or(false);

    Ok(Resolved {
        config,
        source,
        normalize: settings.normalize.unwrap_or(true),
        out: settings.out.unwrap_or_else(|| PathBuf::from("larnn-out")),
    })
}

/// Loads or generates the train/test pair for a resolved source.
fn load_pair(source: &DataSource, normalize: bool) -> crate::Result<(Dataset, Dataset)> {
    match source {
        DataSource::Har { root } => data::load_har_normalized(root, normalize),
        DataSource::Synth { kind, n, steps, seed } => {
            let full = data::synth_task(*kind, *n, *steps, *seed);
            let split = *n * 3 / 4;
            let train_idx: Vec<usize> = (0..split).collect();
            let test_idx: Vec<usize> = (split..*n).collect();
            let mut train = subset(&full, &train_idx);
            let mut test = subset(&full, &test_idx);
            if normalize {
                let stats = train.fit_channel_stats();
                train.normalize_with(&stats);
                test.normalize_with(&stats);
            }
            Ok((train, test))
        }
    }
}

fn subset(ds: &Dataset, indices: &[usize]) -> Dataset {
    let (x, labels) = ds.gather(indices);
    Dataset::new(
        x.to_vec(),
        indices.len(),
        ds.steps(),
        ds.channels(),
        labels,
        ds.classes,
    )
}

// ── subcommands ─────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut settings = Settings::default();
    if let Some(path) = &args.config {
        settings = settings.layered(Settings::from_config_file(path)?);
    }
    settings = settings.layered(Settings::from_args(&args.data, &args.model, &args.optim, args.out.as_ref()));
    let resolved = resolve(settings)?;
    let (train_ds, test_ds) = load_pair(&resolved.source, resolved.normalize)?;

    let mut config = resolved.config;
    config.model.input_dim = train_ds.channels();
    config.model.classes = train_ds.classes;
    config.validate()?;

    println!(
        "training {} cell(s), mode {}, hidden {}, window {}, heads {}, {} train / {} test samples",
        config.model.layers,
        config.model.mode.name(),
        config.model.hidden,
        config.model.window,
        config.model.heads,
        train_ds.len(),
        test_ds.len()
    );
    let mut trained = trainer::train(&config, &train_ds, &test_ds)?;
    for e in &trained.record.epochs {
        println!(
            "epoch {:>3}: train_loss {:.4} train_acc {:.4} test_acc {:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy
        );
    }
    if trained.record.diverged {
        return Err(CliError::Runtime(Error::Diverged {
            epoch: trained.record.epochs.len(),
        }));
    }

    let checkpoint_path = resolved.out.join("checkpoint.bin");
    checkpoint::save(&mut trained.model, &trained.adam, &checkpoint_path)?;
    let metrics_path = resolved.out.join("metrics.csv");
    atomic_write(&metrics_path, metrics_csv(&trained.record).as_bytes())?;
    println!("checkpoint: {}", checkpoint_path.display());
    println!("metrics: {}", metrics_path.display());
    println!(
        "final test accuracy: {:.1}%",
        trained.record.final_test_accuracy * 100.0
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let settings = Settings {
        seed: args.seed,
        ..Settings::from_args(&args.data, &ModelArgs::default(), &OptimArgs::default(), None)
    };
    let env_data = std::env::var_os(ENV_DATA_DIR).map(PathBuf::from);
    let source = match (&settings.synth, settings.data.clone().or(env_data)) {
        (Some(kind), _) => DataSource::Synth {
            kind: SynthKind::parse(kind)?,
            n: settings.synth_n.unwrap_or(8000),
            steps: settings.seq_len.unwrap_or(64),
            seed: settings.data_seed.or(settings.seed).unwrap_or(42),
        },
        (None, Some(root)) => DataSource::Har { root },
        (None, None) => {
            return Err(usage(format!(
                "no dataset: pass --data <dir>, --synth <kind>, or set {ENV_DATA_DIR}"
            )))
        }
    };
    let (train_ds, test_ds) = load_pair(&source, settings.normalize.unwrap_or(true))?;
    let ds = if args.train_split { &train_ds } else { &test_ds };
    if ds.channels() != model.config.input_dim {
        return Err(CliError::Runtime(Error::contract(format!(
            "dataset has {} channels, checkpoint expects {}",
            ds.channels(),
            model.config.input_dim
        ))));
    }

    let acc = trainer::evaluate(&model, ds, 64)?;
    if let Some(path) = &args.dump_attention {
        let samples = args.dump_attention_samples.unwrap_or(8).min(ds.len());
        let csv = attention_csv(&model, ds, samples)?;
        atomic_write(path, csv.as_bytes())?;
        println!("attention weights: {}", path.display());
    }
    println!("accuracy: {:.1}%", acc * 100.0);
    Ok(())
}

/// One row per (sample, head, timestep); columns are the window positions.
fn attention_csv(model: &crate::model::Model, ds: &Dataset, samples: usize) -> crate::Result<String> {
    let mut out = String::from("sample,head,timestep");
    for j in 0..model.config.window {
        write!(out, ",w{j}").unwrap();
    }
    out.push('\n');
    if !model.config.mode.uses_attention() {
        return Ok(out);
    }
    let indices: Vec<usize> = (0..samples).collect();
    let (x, _) = ds.gather(&indices);
    let mut trace = AttentionTrace::default();
    model.forward_traced(&x, false, Some(&mut trace))?;
    for (t, weights) in trace.steps.iter().enumerate() {
        let (batch, heads, window) = weights.dims3();
        for b in 0..batch {
            for h in 0..heads {
                write!(out, "{b},{h},{t}").unwrap();
                for j in 0..window {
                    write!(out, ",{:?}", weights.at3(b, h, j)).unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let started = std::time::Instant::now();
    let mut report = crate::gradcheck::tiny_config_suite()?;
    if !args.tiny_config {
        // A medium configuration on top of the tiny suite.
        for mode in [CellMode::LarnnResidual, CellMode::LarnnLayer] {
            let config = crate::model::ModelConfig {
                input_dim: 5,
                classes: 3,
                hidden: 8,
                layers: 2,
                window: 4,
                heads: 4,
                mode,
                n_pe: 4,
                ..Default::default()
            };
            report
                .configs
                .push(crate::gradcheck::check_model(&config, &format!("medium/{}", mode.name()), 97)?);
        }
    }
    for c in &report.configs {
        println!(
            "{:<40} max rel err {:.3e} over {} parameters",
            c.label, c.max_rel_err, c.parameters
        );
    }
    let worst = report.worst();
    println!(
        "worst offender: {}[{}] in {} (rel err {:.3e})",
        worst.worst_param, worst.worst_index, worst.label, worst.max_rel_err
    );
    println!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
    if report.passed() {
        println!("gradcheck: PASS (tolerance {:.0e})", crate::gradcheck::GRADCHECK_TOLERANCE);
        Ok(())
    } else {
        Err(CliError::Runtime(Error::contract(format!(
            "gradcheck failed: rel err {:.3e} >= {:.0e}",
            worst.max_rel_err,
            crate::gradcheck::GRADCHECK_TOLERANCE
        ))))
    }
}

fn cmd_pe_dump(args: PeDumpArgs) -> CliResult<()> {
    let window = args.window.unwrap_or(128);
    let n_pe = args.n_pe.unwrap_or(8);
    let spec = EncodingSpec::new(window, n_pe)?;
    let matrix = spec.build();

    let mut csv = String::from("pos");
    for j in 0..n_pe / 2 {
        write!(csv, ",sin_{j}").unwrap();
    }
    for j in 0..n_pe / 2 {
        write!(csv, ",cos_{j}").unwrap();
    }
    csv.push('\n');
    for pos in 0..window {
        write!(csv, "{pos}").unwrap();
        for j in 0..n_pe {
            write!(csv, ",{:?}", matrix.at2(pos, j)).unwrap();
        }
        csv.push('\n');
    }
    match &args.csv {
        Some(path) => {
            atomic_write(path, csv.as_bytes())?;
            println!("csv: {}", path.display());
        }
        None => print!("{csv}"),
    }

    if let Some(path) = &args.pgm {
        // Feature channels as rows, positions as columns, newest leftmost.
        let mut pgm = format!("P5\n{window} {n_pe}\n255\n").into_bytes();
        for j in 0..n_pe {
            for pos in 0..window {
                let v = matrix.at2(pos, j);
                let byte = ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8;
                pgm.push(byte);
            }
        }
        atomic_write(path, &pgm)?;
        println!("pgm: {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let mut settings = Settings::default();
    if let Some(path) = &args.config {
        settings = settings.layered(Settings::from_config_file(path)?);
    }
    settings = settings.layered(Settings::from_args(&args.data, &args.model, &args.optim, None));
    let resolved = resolve(settings)?;
    let (train_ds, test_ds) = load_pair(&resolved.source, resolved.normalize)?;

    let mut base = resolved.config;
    base.model.input_dim = train_ds.channels();
    base.model.classes = train_ds.classes;

    let log = args.log.clone().unwrap_or_else(|| PathBuf::from("trials.jsonl"));
    let jobs = args.jobs.unwrap_or(1);
    let seed = base.seed;

    if args.ablation {
        let count = args.ablation_seeds.unwrap_or(3) as u64;
        let seeds: Vec<u64> = (0..count).map(|i| seed + i).collect();
        let (records, report) = ablation(&base, &seeds, &train_ds, &test_ds, jobs, Some(&log))?;
        print!("{}", report.render());
        println!("trials: {} (log: {})", records.len(), log.display());
        return Ok(());
    }

    let space = match &args.space {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str::<SpaceSpec>(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => SpaceSpec::default(),
    };
    let opts = SweepOptions {
        rounds: args.rounds.unwrap_or(2),
        trials_per_round: args.trials.unwrap_or(16),
        budget_epochs: args.budget_epochs.unwrap_or(25),
        seed,
        jobs,
        base,
    };
    let records = sweep(&space, &opts, &train_ds, &test_ds, Some(&log))?;
    let best = records
        .iter()
        .filter(|r| !r.diverged)
        .max_by(|a, b| a.best_test_accuracy.total_cmp(&b.best_test_accuracy));
    match best {
        Some(best) => println!(
            "best trial {} (round {}): test accuracy {:.4} with mode={} pe={} linact={} layers={} window={} hidden={} lr={:.2e}",
            best.trial_id,
            best.round,
            best.best_test_accuracy,
            best.config.model.mode.name(),
            best.config.model.use_pe,
            best.config.model.activate_linears,
            best.config.model.layers,
            best.config.model.window,
            best.config.model.hidden,
            best.config.lr
        ),
        None => println!("all trials diverged"),
    }
    println!("trials: {} (log: {})", records.len(), log.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let kind = SynthKind::parse(&args.kind)?;
    let ds = data::synth_task(
        kind,
        args.n.unwrap_or(10_000),
        args.seq_len.unwrap_or(128),
        args.seed.unwrap_or(42),
    );
    atomic_write(&args.out, data::to_csv(&ds).as_bytes())?;
    println!(
        "wrote {} samples x {} steps x {} channels to {}",
        ds.len(),
        ds.steps(),
        ds.channels(),
        args.out.display()
    );
    Ok(())
}
