//! Dataset ingestion: the UCI HAR inertial-signal text format and synthetic
//! sequence-classification tasks for fast desk-scale validation.
//!
//! Storage is a plain row-major buffer (no tape types), so datasets are
//! `Send + Sync` and can back parallel sweep trials; batches materialize
//! tensors on demand.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::tensor::Tensor;

/// The nine inertial signal channels, in sorted filename order.
pub const HAR_SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-channel z-score statistics fitted on the training split.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A fixed-length multichannel sequence-classification dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    data: Vec<f64>,
    samples: usize,
    steps: usize,
    channels: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub normalization: Option<ChannelStats>,
}

impl Dataset {
    pub fn new(
        data: Vec<f64>,
        samples: usize,
        steps: usize,
        channels: usize,
        labels: Vec<usize>,
        classes: usize,
    ) -> Dataset {
        assert_eq!(data.len(), samples * steps * channels);
        assert_eq!(labels.len(), samples);
        Dataset {
            data,
            samples,
            steps,
            channels,
            labels,
            classes,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn value(&self, sample: usize, step: usize, channel: usize) -> f64 {
        self.data[(sample * self.steps + step) * self.channels + channel]
    }

    /// The whole set as one `[n, steps, channels]` tensor.
    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(&[self.samples, self.steps, self.channels], self.data.clone())
    }

    /// Copies the given samples into a `[len, steps, channels]` batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let stride = self.steps * self.channels;
        let mut out = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            out.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(&[indices.len(), self.steps, self.channels], out),
            labels,
        )
    }

    /// Deterministically shuffled minibatches; the final partial batch is
    /// included, and every sample appears exactly once.
    pub fn batches(&self, batch_size: usize, shuffle_seed: u64) -> Batches<'_> {
        assert!(batch_size >= 1, "batches: batch size must be >= 1");
        let mut order: Vec<usize> = (0..self.samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        order.shuffle(&mut rng);
        Batches {
            dataset: self,
            order,
            batch_size,
            cursor: 0,
        }
    }

    /// In-order minibatches (for evaluation passes).
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.samples)
            .collect::<Vec<_>>()
            .chunks(batch_size.max(1))
            .map(|c| c.to_vec())
            .collect()
    }

    /// Fits per-channel mean/std on `self` and returns the statistics.
    pub fn fit_channel_stats(&self) -> ChannelStats {
        let mut mean = vec![0.0; self.channels];
        let mut std = vec![0.0; self.channels];
        let count = (self.samples * self.steps) as f64;
        for s in 0..self.samples {
            for t in 0..self.steps {
                for c in 0..self.channels {
                    mean[c] += self.value(s, t, c);
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for s in 0..self.samples {
            for t in 0..self.steps {
                for c in 0..self.channels {
                    let d = self.value(s, t, c) - mean[c];
                    std[c] += d * d;
                }
            }
        }
        for v in std.iter_mut() {
            *v = (*v / count).sqrt();
            // Degenerate channels stay unscaled rather than dividing by ~0.
            if *v < 1e-12 {
                *v = 1.0;
            }
        }
        ChannelStats { mean, std }
    }

    /// Applies z-score normalization in place with the given statistics.
    pub fn normalize_with(&mut self, stats: &ChannelStats) {
        assert_eq!(stats.mean.len(), self.channels);
        for i in 0..self.data.len() {
            let c = i % self.channels;
            self.data[i] = (self.data[i] - stats.mean[c]) / stats.std[c];
        }
        self.normalization = Some(stats.clone());
    }
}

/// Iterator over shuffled minibatches.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}

// ── UCI HAR loader ──────────────────────────────────────────────────────

fn signal_path(root: &Path, split: Split, signal: &str) -> PathBuf {
    root.join(split.name())
        .join("Inertial Signals")
        .join(format!("{signal}_{}.txt", split.name()))
}

fn open_lines(path: &Path) -> crate::Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !line.trim().is_empty() {
            lines.push(line);
        } else {
            // Trailing blank lines are tolerated; blanks elsewhere are not.
            let _ = i;
        }
    }
    Ok(lines)
}

fn parse_signal_file(path: &Path) -> crate::Result<Vec<Vec<f64>>> {
    let lines = open_lines(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut row = Vec::new();
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not a decimal float: '{token}'"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!(
                        "ragged line: {} values where the first line has {}",
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads one raw (unnormalized) HAR split: nine whitespace-separated signal
/// files plus 1-indexed labels, under
/// `<root>/<split>/Inertial Signals/<signal>_<split>.txt` and
/// `<root>/<split>/y_<split>.txt`.
pub fn load_har(root: &Path, split: Split) -> crate::Result<Dataset> {
    let mut per_signal: Vec<Vec<Vec<f64>>> = Vec::with_capacity(HAR_SIGNALS.len());
    for signal in HAR_SIGNALS {
        per_signal.push(parse_signal_file(&signal_path(root, split, signal))?);
    }
    let samples = per_signal[0].len();
    let steps = per_signal[0].first().map_or(0, |r| r.len());
    for (signal, rows) in HAR_SIGNALS.iter().zip(&per_signal) {
        if rows.len() != samples || rows.first().map_or(0, |r| r.len()) != steps {
            return Err(Error::contract(format!(
                "signal {signal}: {} x {} does not match {} x {}",
                rows.len(),
                rows.first().map_or(0, |r| r.len()),
                samples,
                steps
            )));
        }
    }

    let label_path = root.join(split.name()).join(format!("y_{}.txt", split.name()));
    let label_lines = open_lines(&label_path)?;
    let mut labels = Vec::with_capacity(label_lines.len());
    for (i, line) in label_lines.iter().enumerate() {
        let v: i64 = line.trim().parse().map_err(|_| Error::Parse {
            path: label_path.clone(),
            line: i + 1,
            message: format!("not an integer label: '{line}'"),
        })?;
        if v < 1 {
            return Err(Error::contract(format!(
                "label {v} at {}:{} is outside 1..C",
                label_path.display(),
                i + 1
            )));
        }
        labels.push((v - 1) as usize);
    }
    if labels.len() != samples {
        return Err(Error::contract(format!(
            "{} labels for {samples} samples",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);

    let channels = HAR_SIGNALS.len();
    let mut data = vec![0.0; samples * steps * channels];
    for (c, rows) in per_signal.iter().enumerate() {
        for (s, row) in rows.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                data[(s * steps + t) * channels + c] = v;
            }
        }
    }
    Ok(Dataset::new(data, samples, steps, channels, labels, classes))
}

/// Loads both HAR splits and z-scores each channel with statistics fitted
/// on the training split (reused verbatim for the test split).
pub fn load_har_normalized(root: &Path, normalize: bool) -> crate::Result<(Dataset, Dataset)> {
    let mut train = load_har(root, Split::Train)?;
    let mut test = load_har(root, Split::Test)?;
    if normalize {
        let stats = train.fit_channel_stats();
        train.normalize_with(&stats);
        test.normalize_with(&stats);
    }
    Ok((train, test))
}

/// Serializes one channel of a dataset back to the HAR signal text format
/// (used to build fixtures and to verify loader round-trips).
pub fn write_signal_text(ds: &Dataset, channel: usize) -> String {
    let mut out = String::new();
    for s in 0..ds.len() {
        for t in 0..ds.steps() {
            if t > 0 {
                out.push(' ');
            }
            write!(out, "{:?}", ds.value(s, t, channel)).unwrap();
        }
        out.push('\n');
    }
    out
}

// ── Synthetic tasks ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Two channels: uniform values and two one-hot markers; the label says
    /// whether the two marked values sum past 1.
    Adding,
    /// One random-walk channel; the label says which half of the sequence
    /// has the larger sum. Samples too close to the boundary are redrawn so
    /// the task stays cleanly separable, and target labels alternate so the
    /// classes balance by construction.
    LongSum,
}

impl SynthKind {
    pub fn parse(s: &str) -> crate::Result<SynthKind> {
        match s {
            "adding" => Ok(SynthKind::Adding),
            "long-sum" => Ok(SynthKind::LongSum),
            other => Err(Error::contract(format!(
                "unknown synthetic task '{other}' (expected adding|long-sum)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Adding => "adding",
            SynthKind::LongSum => "long-sum",
        }
    }
}

/// Margin (as a fraction of the decision statistic's standard deviation)
/// below which long-sum draws are rejected.
const LONG_SUM_MARGIN: f64 = 0.8;

/// Generates a synthetic dataset; bit-identical for identical arguments.
pub fn synth_task(kind: SynthKind, n: usize, steps: usize, seed: u64) -> Dataset {
    assert!(steps >= 4, "synthetic tasks need at least 4 steps");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::Adding => {
            let channels = 2;
            let mut data = vec![0.0; n * steps * channels];
            let mut labels = Vec::with_capacity(n);
            for s in 0..n {
                let base = s * steps * channels;
                for t in 0..steps {
                    data[base + t * channels] = rng.gen_range(0.0..1.0);
                }
                let first = rng.gen_range(0..steps / 2);
                let second = rng.gen_range(steps / 2..steps);
                data[base + first * channels + 1] = 1.0;
                data[base + second * channels + 1] = 1.0;
                let sum = data[base + first * channels] + data[base + second * channels];
                labels.push(usize::from(sum > 1.0));
            }
            Dataset::new(data, n, steps, channels, labels, 2)
        }
        SynthKind::LongSum => {
            let half = steps / 2;
            // std of (second-half sum - first-half sum) for unit normal steps.
            let spread = {
                let mut v = 0.0;
                for s in 0..steps {
                    let coef = if s < half { s as f64 } else { (steps - s) as f64 };
                    v += coef * coef;
                }
                v.sqrt()
            };
            let margin = LONG_SUM_MARGIN * spread;
            let mut data = vec![0.0; n * steps];
            let mut labels = Vec::with_capacity(n);
            let mut walk = vec![0.0; steps];
            for s in 0..n {
                let want = s % 2;
                loop {
                    let mut level = 0.0;
                    for w in walk.iter_mut() {
                        let step: f64 = rng.sample(StandardNormal);
                        level += step;
                        *w = level;
                    }
                    let first: f64 = walk[..half].iter().sum();
                    let second: f64 = walk[half..].iter().sum();
                    if (second - first).abs() < margin {
                        continue;
                    }
                    let label = usize::from(second > first);
                    if label != want {
                        continue;
                    }
                    data[s * steps..(s + 1) * steps].copy_from_slice(&walk);
                    labels.push(label);
                    break;
                }
            }
            Dataset::new(data, n, steps, 1, labels, 2)
        }
    }
}

/// Recomputes an `adding` label straight from the sample values.
pub fn adding_label_oracle(ds: &Dataset, sample: usize) -> usize {
    let marked: Vec<usize> = (0..ds.steps()).filter(|&t| ds.value(sample, t, 1) == 1.0).collect();
    let sum: f64 = marked.iter().map(|&t| ds.value(sample, t, 0)).sum();
    usize::from(sum > 1.0)
}

/// Recomputes a `long-sum` label straight from the sample values.
pub fn long_sum_label_oracle(ds: &Dataset, sample: usize) -> usize {
    let half = ds.steps() / 2;
    let first: f64 = (0..half).map(|t| ds.value(sample, t, 0)).sum();
    let second: f64 = (half..ds.steps()).map(|t| ds.value(sample, t, 0)).sum();
    usize::from(second > first)
}

/// CSV export: header `t0c0,...,label`, one row per sample, shortest
/// round-trip float formatting.
pub fn to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for t in 0..ds.steps() {
        for c in 0..ds.channels() {
            write!(out, "t{t}c{c},").unwrap();
        }
    }
    out.push_str("label\n");
    for s in 0..ds.len() {
        for t in 0..ds.steps() {
            for c in 0..ds.channels() {
                write!(out, "{:?},", ds.value(s, t, c)).unwrap();
            }
        }
        writeln!(out, "{}", ds.labels[s]).unwrap();
    }
    out
}

#[cfg(test)]
mod tests;
