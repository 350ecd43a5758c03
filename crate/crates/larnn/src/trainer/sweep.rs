//! Two-round random-search hyperparameter sweep (diffuse, then focused) and
//! the factorial ablation harness over the architecture toggles.
//!
//! Round one samples uniformly from the full space on a short epoch budget;
//! round two narrows every axis around the best round-one trial (categorical
//! axes collapse to the winner, ordered lists keep the winner and its
//! neighbours, the learning-rate log-range halves) and trains four times
//! longer. Trials are independent and may run in parallel; the JSON-lines
//! log has one record per line with sorted keys and is rewritten atomically.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::CellMode;
use crate::data::Dataset;
use crate::error::Error;
use crate::trainer::{atomic_write, record_json_line, train, TrainConfig, TrialRecord};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
}

/// The search space. Every axis defaults to the standard grid, so a space
/// file only needs the axes it wants to change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSpec {
    pub mode: Vec<String>,
    pub use_pe: Vec<bool>,
    pub activate_linears: Vec<bool>,
    pub layers: Vec<usize>,
    pub window: Vec<usize>,
    pub hidden: Vec<usize>,
    pub lr: LogRange,
}

impl Default for SpaceSpec {
    fn default() -> Self {
        SpaceSpec {
            mode: vec!["residual".into(), "layer".into()],
            use_pe: vec![true, false],
            activate_linears: vec![true, false],
            layers: vec![1, 2, 3],
            window: vec![8, 16, 32, 64],
            hidden: vec![32, 42, 64],
            lr: LogRange { lo: 1e-4, hi: 1e-2 },
        }
    }
}

fn pick<T: Clone>(list: &[T], rng: &mut ChaCha8Rng) -> T {
    list[rng.gen_range(0..list.len())].clone()
}

/// Keeps the winner and its immediate neighbours of an ordered list.
fn neighbourhood<T: Clone + PartialEq>(list: &[T], best: &T) -> Vec<T> {
    match list.iter().position(|v| v == best) {
        Some(i) => {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(list.len() - 1);
            list[lo..=hi].to_vec()
        }
        None => list.to_vec(),
    }
}

impl SpaceSpec {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, empty) in [
            ("mode", self.mode.is_empty()),
            ("use_pe", self.use_pe.is_empty()),
            ("activate_linears", self.activate_linears.is_empty()),
            ("layers", self.layers.is_empty()),
            ("window", self.window.is_empty()),
            ("hidden", self.hidden.is_empty()),
        ] {
            if empty {
                return Err(Error::contract(format!("sweep space: axis '{name}' is empty")));
            }
        }
        for m in &self.mode {
            CellMode::parse(m)?;
        }
        if !(self.lr.lo > 0.0 && self.lr.hi >= self.lr.lo) {
            return Err(Error::contract("sweep space: lr range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }

    /// Draws one configuration uniformly (learning rate log-uniformly).
    pub fn sample(&self, base: &TrainConfig, rng: &mut ChaCha8Rng) -> crate::Result<TrainConfig> {
        let mut config = base.clone();
        config.model.mode = CellMode::parse(&pick(&self.mode, rng))?;
        config.model.use_pe = pick(&self.use_pe, rng);
        config.model.activate_linears = pick(&self.activate_linears, rng);
        config.model.layers = pick(&self.layers, rng);
        config.model.window = pick(&self.window, rng);
        config.model.hidden = pick(&self.hidden, rng);
        config.model.heads = (config.model.hidden / 2).max(1);
        config.lr = (rng.gen_range(self.lr.lo.ln()..=self.lr.hi.ln())).exp();
        config.seed = rng.next_u64();
        Ok(config)
    }

    /// The focused-round space around one winning trial.
    pub fn narrowed(&self, best: &TrainConfig) -> SpaceSpec {
        let ratio = (self.lr.hi / self.lr.lo).powf(0.25);
        SpaceSpec {
            mode: vec![best.model.mode.name().to_string()],
            use_pe: vec![best.model.use_pe],
            activate_linears: vec![best.model.activate_linears],
            layers: neighbourhood(&self.layers, &best.model.layers),
            window: neighbourhood(&self.window, &best.model.window),
            hidden: neighbourhood(&self.hidden, &best.model.hidden),
            lr: LogRange {
                lo: (best.lr / ratio).max(self.lr.lo),
                hi: (best.lr * ratio).min(self.lr.hi),
            },
        }
    }

    /// True when every axis of `self` fits inside `outer`.
    pub fn subset_of(&self, outer: &SpaceSpec) -> bool {
        self.mode.iter().all(|v| outer.mode.contains(v))
            && self.use_pe.iter().all(|v| outer.use_pe.contains(v))
            && self
                .activate_linears
                .iter()
                .all(|v| outer.activate_linears.contains(v))
            && self.layers.iter().all(|v| outer.layers.contains(v))
            && self.window.iter().all(|v| outer.window.contains(v))
            && self.hidden.iter().all(|v| outer.hidden.contains(v))
            && self.lr.lo >= outer.lr.lo
            && self.lr.hi <= outer.lr.hi
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub rounds: usize,
    pub trials_per_round: usize,
    pub budget_epochs: usize,
    pub seed: u64,
    pub jobs: usize,
    pub base: TrainConfig,
}

fn run_parallel(
    configs: &[TrainConfig],
    train_ds: &Dataset,
    test_ds: &Dataset,
    jobs: usize,
) -> crate::Result<Vec<TrialRecord>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let results: Vec<crate::Result<TrialRecord>> = pool.install(|| {
        configs
            .par_iter()
            .map(|config| train(config, train_ds, test_ds).map(|t| t.record))
            .collect()
    });
    results.into_iter().collect()
}

fn append_log(log_path: Option<&Path>, records: &[TrialRecord]) -> crate::Result<()> {
    let Some(path) = log_path else { return Ok(()) };
    let mut content = match std::fs::read_to_string(path) {
        Ok(existing) => existing,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(source) => {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    for record in records {
        content.push_str(&record_json_line(record));
        content.push('\n');
    }
    atomic_write(path, content.as_bytes())
}

/// Runs the multi-round search. All sampled configurations are drawn up
/// front per round, so results are independent of `jobs`.
pub fn sweep(
    space: &SpaceSpec,
    opts: &SweepOptions,
    train_ds: &Dataset,
    test_ds: &Dataset,
    log_path: Option<&Path>,
) -> crate::Result<Vec<TrialRecord>> {
    space.validate()?;
    let mut current = space.clone();
    let mut all: Vec<TrialRecord> = Vec::new();
    let mut trial_id = 0;
    for round in 0..opts.rounds {
        let epochs = if round == 0 {
            opts.budget_epochs
        } else {
            opts.budget_epochs * 4
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(round as u64 * 0x9E37_79B9_7F4A_7C15));
        let mut configs = Vec::with_capacity(opts.trials_per_round);
        for _ in 0..opts.trials_per_round {
            let mut config = current.sample(&opts.base, &mut rng)?;
            config.epochs = epochs;
            configs.push(config);
        }
        let mut records = run_parallel(&configs, train_ds, test_ds, opts.jobs)?;
        for record in records.iter_mut() {
            record.trial_id = trial_id;
            record.round = round;
            trial_id += 1;
        }
        append_log(log_path, &records)?;
        all.extend(records);

        let best = all
            .iter()
            .filter(|r| !r.diverged)
            .max_by(|a, b| a.best_test_accuracy.total_cmp(&b.best_test_accuracy));
        if let Some(best) = best {
            current = current.narrowed(&best.config);
        }
    }
    Ok(all)
}

// ── Ablation harness ────────────────────────────────────────────────────

/// One cell of the factorial grid with its per-seed accuracies.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub mode: String,
    pub use_pe: bool,
    pub activate_linears: bool,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Mean accuracy per setting of one toggle, and which setting won.
#[derive(Debug, Clone, Serialize)]
pub struct AxisSummary {
    pub axis: String,
    pub options: Vec<(String, f64)>,
    pub winner: String,
    /// Directional expectation; informational only, never a gate.
    pub expectation: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub axes: Vec<AxisSummary>,
}

impl AblationReport {
    pub fn winner(&self, axis: &str) -> Option<&str> {
        self.axes
            .iter()
            .find(|a| a.axis == axis)
            .map(|a| a.winner.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for cell in &self.cells {
            writeln!(
                out,
                "cell mode={} pe={} linact={}: mean {:.4} over {:?}",
                cell.mode,
                if cell.use_pe { "on" } else { "off" },
                if cell.activate_linears { "on" } else { "off" },
                cell.mean_accuracy,
                cell.accuracies
                    .iter()
                    .map(|a| (a * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            )
            .unwrap();
        }
        for axis in &self.axes {
            let options: Vec<String> = axis
                .options
                .iter()
                .map(|(name, acc)| format!("{name} {:.4}", acc))
                .collect();
            writeln!(
                out,
                "axis {}: {} -> winner {} ({})",
                axis.axis,
                options.join(" vs "),
                axis.winner,
                axis.expectation
            )
            .unwrap();
        }
        out
    }
}

/// Runs the full {mode} x {positional encoding} x {linear activation}
/// factorial with several seeds per cell, logs every trial, and summarizes
/// per-cell and per-axis mean accuracy with the winning setting flagged.
pub fn ablation(
    base: &TrainConfig,
    seeds: &[u64],
    train_ds: &Dataset,
    test_ds: &Dataset,
    jobs: usize,
    log_path: Option<&Path>,
) -> crate::Result<(Vec<TrialRecord>, AblationReport)> {
    let mut configs = Vec::new();
    for mode in [CellMode::LarnnResidual, CellMode::LarnnLayer] {
        for use_pe in [true, false] {
            for activate_linears in [true, false] {
                for &seed in seeds {
                    let mut config = base.clone();
                    config.model.mode = mode;
                    config.model.use_pe = use_pe;
                    config.model.activate_linears = activate_linears;
                    config.seed = seed;
                    configs.push(config);
                }
            }
        }
    }
    let mut records = run_parallel(&configs, train_ds, test_ds, jobs)?;
    for (i, record) in records.iter_mut().enumerate() {
        record.trial_id = i;
        record.round = 0;
    }
    append_log(log_path, &records)?;

    let mut cells = Vec::new();
    let mut cursor = 0;
    for mode in ["residual", "layer"] {
        for use_pe in [true, false] {
            for activate_linears in [true, false] {
                let accuracies: Vec<f64> = records[cursor..cursor + seeds.len()]
                    .iter()
                    .map(|r| r.final_test_accuracy)
                    .collect();
                cursor += seeds.len();
                let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
                cells.push(AblationCell {
                    mode: mode.to_string(),
                    use_pe,
                    activate_linears,
                    accuracies,
                    mean_accuracy,
                });
            }
        }
    }

    let mean_where = |f: &dyn Fn(&AblationCell) -> bool| -> f64 {
        let selected: Vec<f64> = cells.iter().filter(|c| f(c)).map(|c| c.mean_accuracy).collect();
        selected.iter().sum::<f64>() / selected.len() as f64
    };
    let axis = |name: &str, options: Vec<(String, f64)>, expectation: &str| -> AxisSummary {
        let winner = options
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        AxisSummary {
            axis: name.to_string(),
            options,
            winner,
            expectation: expectation.to_string(),
        }
    };
    let axes = vec![
        axis(
            "mode",
            vec![
                ("residual".into(), mean_where(&|c| c.mode == "residual")),
                ("layer".into(), mean_where(&|c| c.mode == "layer")),
            ],
            "expected (non-binding): residual",
        ),
        axis(
            "use_pe",
            vec![
                ("on".into(), mean_where(&|c| c.use_pe)),
                ("off".into(), mean_where(&|c| !c.use_pe)),
            ],
            "expected (non-binding): off",
        ),
        axis(
            "activate_linears",
            vec![
                ("on".into(), mean_where(&|c| c.activate_linears)),
                ("off".into(), mean_where(&|c| !c.activate_linears)),
            ],
            "expected (non-binding): on",
        ),
    ];
    Ok((records, AblationReport { cells, axes }))
}
