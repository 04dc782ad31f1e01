//! Pooling, accuracy statistics, exports and Gelman–Rubin diagnostics over
//! replica chains.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::Evaluation;
use crate::tempering::{fraction_index, Counters};

/// Everything one ladder position recorded during a run.
///
/// The traces have one entry per step. Parameter vectors are kept only from
/// the switch index on, every `thin`-th step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStore {
    pub replica: usize,
    pub budget: usize,
    pub switch_index: usize,
    pub thin: usize,
    pub log_lik_trace: Vec<f64>,
    pub train_acc_trace: Vec<f64>,
    pub test_acc_trace: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub sample_steps: Vec<usize>,
    pub counters: Counters,
}

impl ChainStore {
    pub fn new(replica: usize, budget: usize, switch_index: usize, thin: usize) -> Self {
        ChainStore {
            replica,
            budget,
            switch_index,
            thin: thin.max(1),
            log_lik_trace: Vec::with_capacity(budget),
            train_acc_trace: Vec::with_capacity(budget),
            test_acc_trace: Vec::with_capacity(budget),
            samples: Vec::new(),
            sample_steps: Vec::new(),
            counters: Counters::default(),
        }
    }

    /// Records the chain position after step `step`.
    pub fn record(&mut self, step: usize, theta: &[f64], eval: &Evaluation) {
        self.log_lik_trace.push(eval.log_lik);
        self.train_acc_trace.push(eval.train_accuracy);
        self.test_acc_trace.push(eval.test_accuracy);
        if step >= self.switch_index && (step - self.switch_index).is_multiple_of(self.thin) {
            self.samples.push(theta.to_vec());
            self.sample_steps.push(step);
        }
    }

    pub fn len(&self) -> usize {
        self.log_lik_trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_lik_trace.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(Vec::len)
    }

    /// Stored values of one coordinate at steps `>= from_step`.
    pub fn coordinate(&self, weight_id: usize, from_step: usize) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (s, theta) in self.sample_steps.iter().zip(&self.samples) {
            if *s < from_step {
                continue;
            }
            let v = theta.get(weight_id).ok_or_else(|| {
                Error::invalid(format!("weight id {weight_id} out of range for {} parameters", theta.len()))
            })?;
            out.push(*v);
        }
        Ok(out)
    }
}

/// Post-burn-in material from all chains, concatenated in replica order.
#[derive(Debug, Clone, Default)]
pub struct Pooled<'a> {
    pub samples: Vec<&'a [f64]>,
    pub log_lik: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
}

impl Pooled<'_> {
    pub fn coordinate(&self, weight_id: usize) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                s.get(weight_id).copied().ok_or_else(|| {
                    Error::invalid(format!("weight id {weight_id} out of range for {} parameters", s.len()))
                })
            })
            .collect()
    }
}

pub fn pool(chains: &[ChainStore], burn_in_fraction: f64) -> Result<Pooled<'_>> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::invalid(format!(
            "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
        )));
    }
    let mut pooled = Pooled::default();
    for c in chains {
        let start = fraction_index(c.len(), burn_in_fraction);
        pooled.log_lik.extend_from_slice(&c.log_lik_trace[start..]);
        pooled.train_acc.extend_from_slice(&c.train_acc_trace[start..]);
        pooled.test_acc.extend_from_slice(&c.test_acc_trace[start..]);
        for (s, theta) in c.sample_steps.iter().zip(&c.samples) {
            if *s >= start {
                pooled.samples.push(theta);
            }
        }
    }
    if pooled.log_lik.is_empty() {
        return Err(Error::invalid("burn-in leaves no samples to pool"));
    }
    Ok(pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyMask);
        }
        let n = values.len() as f64;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        // Summation rounding can push the mean of a constant trace past its max.
        let mut mean = values.iter().sum::<f64>() / n;
        if min <= max {
            mean = mean.clamp(min, max);
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(MetricStats {
            mean,
            max,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub train: MetricStats,
    pub test: MetricStats,
    pub acceptance_pct: f64,
    /// Accepted swaps over attempted swaps.
    pub swap_pct_of_attempts: f64,
    /// Accepted swaps over total samples.
    pub swap_pct_of_samples: f64,
    pub wall_clock_minutes: f64,
}

/// Accuracy statistics over pooled traces. Rates and timing are left at zero
/// for the caller to fill in.
pub fn summarize(pooled: &Pooled<'_>) -> Result<PosteriorSummary> {
    Ok(PosteriorSummary {
        train: MetricStats::of(&pooled.train_acc)?,
        test: MetricStats::of(&pooled.test_acc)?,
        acceptance_pct: 0.0,
        swap_pct_of_attempts: 0.0,
        swap_pct_of_samples: 0.0,
        wall_clock_minutes: 0.0,
    })
}

/// Classic potential scale reduction over equal-length chains of one scalar.
/// Longer chains are truncated to the shortest.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::invalid("need at least two chains"));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 samples per chain, got {n}")));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

pub fn gelman_rubin(chains: &[ChainStore], weight_id: usize, burn_in_fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::invalid(format!(
            "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
        )));
    }
    let series = chains
        .iter()
        .map(|c| c.coordinate(weight_id, fraction_index(c.len(), burn_in_fraction)))
        .collect::<Result<Vec<_>>>()?;
    potential_scale_reduction(&series)
}

/// `step,value,replica` rows for every stored sample of one coordinate.
pub fn trace_csv(chains: &[ChainStore], weight_id: usize) -> Result<String> {
    let mut out = String::from("step,value,replica\n");
    for c in chains {
        let values = c.coordinate(weight_id, 0)?;
        for (s, v) in c.sample_steps.iter().zip(values) {
            writeln!(out, "{s},{v},{}", c.replica).expect("write to string");
        }
    }
    Ok(out)
}

/// Equal-width histogram as `(bin_center, count)`. Constant input yields a
/// single bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<(f64, usize)>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if values.is_empty() {
        return Err(Error::invalid("histogram of no samples"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![(lo, values.len())]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c))
        .collect())
}

pub fn histogram_csv(pooled: &Pooled<'_>, weight_id: usize, bins: usize) -> Result<String> {
    let mut out = String::from("bin_center,count\n");
    for (center, count) in histogram(&pooled.coordinate(weight_id)?, bins)? {
        writeln!(out, "{center},{count}").expect("write to string");
    }
    Ok(out)
}

pub fn export_trace(chains: &[ChainStore], weight_id: usize, path: &Path) -> Result<()> {
    let csv = trace_csv(chains, weight_id)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

pub fn export_histogram(pooled: &Pooled<'_>, weight_id: usize, bins: usize, path: &Path) -> Result<()> {
    let csv = histogram_csv(pooled, weight_id, bins)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

pub fn accuracy_trace_csv(chain: &ChainStore) -> String {
    let mut out = String::from("step,train_acc,test_acc\n");
    for (s, (tr, te)) in chain.train_acc_trace.iter().zip(&chain.test_acc_trace).enumerate() {
        writeln!(out, "{s},{tr},{te}").expect("write to string");
    }
    out
}

pub fn loglik_trace_csv(chain: &ChainStore) -> String {
    let mut out = String::from("step,log_lik\n");
    for (s, ll) in chain.log_lik_trace.iter().enumerate() {
        writeln!(out, "{s},{ll}").expect("write to string");
    }
    out
}

/// Row-major little-endian f64 matrix of a chain's stored samples.
pub fn samples_bytes(chain: &ChainStore) -> Vec<u8> {
    let dim = chain.dim().unwrap_or(0);
    let mut out = Vec::with_capacity(chain.samples.len() * dim * 8);
    for theta in &chain.samples {
        for v in theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Sidecar describing a `samples_r<id>.bin` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplesHeader {
    pub replica: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub order: String,
    pub thin: usize,
    pub first_step: Option<usize>,
    pub steps: Vec<usize>,
}

pub fn samples_header(chain: &ChainStore) -> SamplesHeader {
    SamplesHeader {
        replica: chain.replica,
        rows: chain.samples.len(),
        cols: chain.dim().unwrap_or(0),
        dtype: "f64le".into(),
        order: "row-major".into(),
        thin: chain.thin,
        first_step: chain.sample_steps.first().copied(),
        steps: chain.sample_steps.clone(),
    }
}

/// Reads a samples file back as rows of `cols` values.
pub fn read_samples(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if cols == 0 || bytes.len() % (8 * cols) != 0 {
        return Err(Error::Load {
            file: path.display().to_string(),
            message: format!("{} bytes is not a whole number of {cols}-column rows", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8 * cols)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect())
}
