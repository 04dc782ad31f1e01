//! Command-line front end: configuration, end-to-end runs and report files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{load_dataset, Dataset};
use crate::model::{GcnPosterior, Topology};
use crate::posterior::{
    accuracy_trace_csv, gelman_rubin, histogram_csv, loglik_trace_csv, pool, samples_bytes, samples_header,
    summarize, trace_csv, PosteriorSummary,
};
use crate::proposals::{ProposalConfig, ProposalKind};
use crate::target::LogTarget;
use crate::tempering::{coordinate, Counters, EnsembleRun, RunConfig, SwapStats};

/// Default output directory when neither a flag nor a config file sets one.
pub const OUT_DIR_ENV: &str = "BGCN_OUT_DIR";

pub const DEFAULT_WEIGHT_IDS: [usize; 5] = [0, 100, 1000, 5000, 8000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub replicas: usize,
    pub max_samples: usize,
    pub tmax: f64,
    pub swap_interval: usize,
    pub switch_fraction: f64,
    pub proposal: ProposalKind,
    pub lg_rate: f64,
    pub lr: f64,
    pub rw_std: f64,
    pub prior_var: f64,
    pub hidden: usize,
    pub seed: u64,
    pub thin: usize,
    /// Coordinates that get trace, histogram and r̂ outputs.
    pub weight_ids: Vec<usize>,
    pub bins: usize,
    /// Drop the prior term from the proposal gradient.
    pub likelihood_only_gradient: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            dataset_dir: PathBuf::new(),
            out_dir: default_out_dir(),
            replicas: 8,
            max_samples: 48_000,
            tmax: 2.0,
            swap_interval: 2,
            switch_fraction: 0.6,
            proposal: ProposalKind::AdaptLg,
            lg_rate: 0.5,
            lr: ProposalKind::AdaptLg.default_step_scale(),
            rw_std: 0.005,
            prior_var: 25.0,
            hidden: 16,
            seed: 1,
            thin: 1,
            weight_ids: DEFAULT_WEIGHT_IDS.to_vec(),
            bins: 50,
            likelihood_only_gradient: false,
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("bgcn-out"))
}

impl CliConfig {
    pub fn proposal_config(&self) -> ProposalConfig {
        let mut p = ProposalConfig::new(self.proposal);
        p.step_scale = self.lr;
        p.rw_std = self.rw_std;
        p.lg_rate = self.lg_rate;
        p
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            replicas: self.replicas,
            max_samples: self.max_samples,
            tmax: self.tmax,
            swap_interval: self.swap_interval,
            switch_fraction: self.switch_fraction,
            proposal: self.proposal_config(),
            seed: self.seed,
            thin: self.thin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Lists every invalid field. An empty list means the config is usable.
pub fn validate(cfg: &CliConfig) -> Vec<FieldError> {
    let mut errs = Vec::new();
    let mut check = |ok: bool, field: &'static str, message: String| {
        if !ok {
            errs.push(FieldError { field, message });
        }
    };
    check(cfg.replicas >= 1, "replicas", "must be at least 1".into());
    check(cfg.max_samples >= 1, "max_samples", "must be at least 1".into());
    check(
        cfg.replicas == 0 || cfg.max_samples == 0 || cfg.max_samples >= cfg.replicas,
        "max_samples",
        format!("{} samples cannot cover {} replicas", cfg.max_samples, cfg.replicas),
    );
    check(
        cfg.tmax >= 1.0 && cfg.tmax.is_finite(),
        "tmax",
        format!("must be >= 1, got {}", cfg.tmax),
    );
    check(cfg.swap_interval >= 1, "swap_interval", "must be at least 1".into());
    check(
        cfg.switch_fraction > 0.0 && cfg.switch_fraction < 1.0,
        "switch_fraction",
        format!("must lie in (0, 1), got {}", cfg.switch_fraction),
    );
    check(
        (0.0..=1.0).contains(&cfg.lg_rate),
        "lg_rate",
        format!("must lie in [0, 1], got {}", cfg.lg_rate),
    );
    check(positive(cfg.lr), "lr", format!("must be positive, got {}", cfg.lr));
    check(positive(cfg.rw_std), "rw_std", format!("must be positive, got {}", cfg.rw_std));
    check(
        positive(cfg.prior_var),
        "prior_var",
        format!("must be positive, got {}", cfg.prior_var),
    );
    check(cfg.hidden >= 1, "hidden", "must be at least 1".into());
    check(cfg.thin >= 1, "thin", "must be at least 1".into());
    check(cfg.bins >= 1, "bins", "must be at least 1".into());
    check(
        !cfg.dataset_dir.as_os_str().is_empty(),
        "dataset_dir",
        "is required".into(),
    );
    errs
}

/// Command-line flags. Every value is optional so a config file can supply
/// it; flags win over the file.
#[derive(Debug, Default, Parser)]
#[command(name = "bgcn", version, about = "Bayesian GCN node classification with parallel-tempered Langevin MCMC")]
pub struct Args {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Defaults to $BGCN_OUT_DIR, then ./bgcn-out.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub swap_interval: Option<usize>,
    #[arg(long)]
    pub switch_fraction: Option<f64>,
    /// rw, lg or adapt-lg.
    #[arg(long, value_parser = parse_kind)]
    pub proposal: Option<ProposalKind>,
    #[arg(long)]
    pub lg_rate: Option<f64>,
    /// Gradient step scale; 0.01 for adapt-lg and 0.1 for lg when unset.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rw_std: Option<f64>,
    #[arg(long)]
    pub prior_var: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Comma-separated coordinates for trace, histogram and r̂ output.
    #[arg(long, value_delimiter = ',')]
    pub weight_ids: Option<Vec<usize>>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub likelihood_only_gradient: bool,
}

pub fn parse_kind(s: &str) -> std::result::Result<ProposalKind, String> {
    match s {
        "rw" | "random-walk" => Ok(ProposalKind::RandomWalk),
        "lg" => Ok(ProposalKind::Lg),
        "adapt-lg" => Ok(ProposalKind::AdaptLg),
        other => Err(format!("unknown proposal '{other}', expected rw, lg or adapt-lg")),
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are
/// skipped; keys may use dashes or underscores.
pub fn parse_config_file(text: &str, file: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Validation {
            file: file.into(),
            line: Some(i + 1),
            message: format!("expected key=value, got '{line}'"),
        })?;
        out.insert(k.trim().replace('-', "_"), (i + 1, v.trim().to_string()));
    }
    Ok(out)
}

fn file_value<T: std::str::FromStr>(
    entries: &mut BTreeMap<String, (usize, String)>,
    key: &str,
    file: &str,
) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match entries.remove(key) {
        None => Ok(None),
        Some((line, v)) => v.parse().map(Some).map_err(|e: T::Err| Error::Validation {
            file: file.into(),
            line: Some(line),
            message: format!("{key}: {e}"),
        }),
    }
}

impl Args {
    /// Merges defaults, the optional config file and the flags.
    pub fn resolve(self) -> Result<CliConfig> {
        let mut file = Args::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let name = path.display().to_string();
            let mut entries = parse_config_file(&text, &name)?;
            let e = &mut entries;
            file.dataset_dir = file_value(e, "dataset_dir", &name)?;
            file.out_dir = file_value(e, "out_dir", &name)?;
            file.replicas = file_value(e, "replicas", &name)?;
            file.max_samples = file_value(e, "max_samples", &name)?;
            file.tmax = file_value(e, "tmax", &name)?;
            file.swap_interval = file_value(e, "swap_interval", &name)?;
            file.switch_fraction = file_value(e, "switch_fraction", &name)?;
            file.lg_rate = file_value(e, "lg_rate", &name)?;
            file.lr = file_value(e, "lr", &name)?;
            file.rw_std = file_value(e, "rw_std", &name)?;
            file.prior_var = file_value(e, "prior_var", &name)?;
            file.hidden = file_value(e, "hidden", &name)?;
            file.seed = file_value(e, "seed", &name)?;
            file.thin = file_value(e, "thin", &name)?;
            file.bins = file_value(e, "bins", &name)?;
            file.likelihood_only_gradient = file_value(e, "likelihood_only_gradient", &name)?.unwrap_or(false);
            if let Some((line, v)) = e.remove("proposal") {
                file.proposal = Some(parse_kind(&v).map_err(|m| Error::Validation {
                    file: name.clone(),
                    line: Some(line),
                    message: m,
                })?);
            }
            if let Some((line, v)) = e.remove("weight_ids") {
                let ids = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|err| Error::Validation {
                        file: name.clone(),
                        line: Some(line),
                        message: format!("weight_ids: {err}"),
                    })?;
                file.weight_ids = Some(ids);
            }
            if let Some((key, (line, _))) = e.iter().next() {
                return Err(Error::Validation {
                    file: name,
                    line: Some(*line),
                    message: format!("unknown key '{key}'"),
                });
            }
        }

        let d = CliConfig::default();
        let proposal = self.proposal.or(file.proposal).unwrap_or(d.proposal);
        Ok(CliConfig {
            dataset_dir: self.dataset_dir.or(file.dataset_dir).unwrap_or(d.dataset_dir),
            out_dir: self.out_dir.or(file.out_dir).unwrap_or(d.out_dir),
            replicas: self.replicas.or(file.replicas).unwrap_or(d.replicas),
            max_samples: self.max_samples.or(file.max_samples).unwrap_or(d.max_samples),
            tmax: self.tmax.or(file.tmax).unwrap_or(d.tmax),
            swap_interval: self.swap_interval.or(file.swap_interval).unwrap_or(d.swap_interval),
            switch_fraction: self.switch_fraction.or(file.switch_fraction).unwrap_or(d.switch_fraction),
            proposal,
            lg_rate: self.lg_rate.or(file.lg_rate).unwrap_or(d.lg_rate),
            lr: self.lr.or(file.lr).unwrap_or(proposal.default_step_scale()),
            rw_std: self.rw_std.or(file.rw_std).unwrap_or(d.rw_std),
            prior_var: self.prior_var.or(file.prior_var).unwrap_or(d.prior_var),
            hidden: self.hidden.or(file.hidden).unwrap_or(d.hidden),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            thin: self.thin.or(file.thin).unwrap_or(d.thin),
            weight_ids: self.weight_ids.or(file.weight_ids).unwrap_or(d.weight_ids),
            bins: self.bins.or(file.bins).unwrap_or(d.bins),
            likelihood_only_gradient: self.likelihood_only_gradient || file.likelihood_only_gradient,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhatEntry {
    pub weight_id: usize,
    /// `None` when the value is infinite or could not be computed.
    pub rhat: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub nodes: usize,
    pub features: usize,
    pub classes: usize,
    pub edges: usize,
    pub train: usize,
    pub test: usize,
}

/// The contents of `run_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: CliConfig,
    pub dataset: DatasetInfo,
    pub topology: Topology,
    pub param_count: usize,
    pub temperatures: Vec<f64>,
    pub per_replica_budget: usize,
    pub dropped_samples: usize,
    pub switch_index: usize,
    pub thin: usize,
    pub retained_samples_per_replica: usize,
    pub summary: PosteriorSummary,
    pub counters: Counters,
    pub replica_counters: Vec<Counters>,
    pub swaps: SwapStats,
    pub rhat: Vec<RhatEntry>,
}

/// A finished run held in memory.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: RunSummary,
    pub run: EnsembleRun,
}

/// Samples the posterior for an already loaded dataset.
pub fn execute_with_dataset(cfg: &CliConfig, dataset: Dataset) -> Result<RunReport> {
    let errs = validate(cfg);
    if !errs.is_empty() {
        let list: Vec<String> = errs.iter().map(ToString::to_string).collect();
        return Err(Error::invalid(list.join("; ")));
    }
    let info = DatasetInfo {
        nodes: dataset.num_nodes,
        features: dataset.num_features,
        classes: dataset.num_classes,
        edges: dataset.edges.len(),
        train: dataset.train_mask.len(),
        test: dataset.test_mask.len(),
    };
    let mut target = GcnPosterior::new(dataset, cfg.hidden, cfg.prior_var)?;
    target.prior_in_gradient = !cfg.likelihood_only_gradient;
    let p = target.dim();
    if let Some(bad) = cfg.weight_ids.iter().find(|&&w| w >= p) {
        return Err(Error::invalid(format!("weight id {bad} out of range for {p} parameters")));
    }
    let run_cfg = cfg.run_config();
    log::info!(
        "sampling {p} parameters with {} replicas x {} steps",
        run_cfg.replicas,
        run_cfg.per_replica_budget()
    );

    let started = Instant::now();
    let run = coordinate(&target, &run_cfg)?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;

    let pooled = pool(&run.chains, cfg.switch_fraction)?;
    let mut summary = summarize(&pooled)?;
    summary.acceptance_pct = run.acceptance_pct();
    summary.swap_pct_of_attempts = run.swap_pct_of_attempts();
    summary.swap_pct_of_samples = run.swap_pct_of_samples();
    summary.wall_clock_minutes = minutes;

    let rhat = cfg
        .weight_ids
        .iter()
        .map(|&w| match gelman_rubin(&run.chains, w, cfg.switch_fraction) {
            Ok(r) if r.is_finite() => RhatEntry {
                weight_id: w,
                rhat: Some(r),
                note: None,
            },
            Ok(_) => RhatEntry {
                weight_id: w,
                rhat: None,
                note: Some("infinite: chains constant but different".into()),
            },
            Err(e) => RhatEntry {
                weight_id: w,
                rhat: None,
                note: Some(e.to_string()),
            },
        })
        .collect();

    let summary = RunSummary {
        config: cfg.clone(),
        dataset: info,
        topology: target.topology(),
        param_count: p,
        temperatures: run.ladder.temps.clone(),
        per_replica_budget: run_cfg.per_replica_budget(),
        dropped_samples: run_cfg.dropped_samples(),
        switch_index: run_cfg.switch_index(),
        thin: cfg.thin,
        retained_samples_per_replica: run.chains.first().map_or(0, |c| c.samples.len()),
        summary,
        counters: run.counters(),
        replica_counters: run.chains.iter().map(|c| c.counters).collect(),
        swaps: run.swaps,
        rhat,
    };
    Ok(RunReport { summary, run })
}

pub fn execute(cfg: &CliConfig) -> Result<RunReport> {
    let errs = validate(cfg);
    if !errs.is_empty() {
        let list: Vec<String> = errs.iter().map(ToString::to_string).collect();
        return Err(Error::invalid(list.join("; ")));
    }
    execute_with_dataset(cfg, load_dataset(&cfg.dataset_dir)?)
}

/// Table with the columns train/test mean-max-std, swap %, accept % and
/// minutes.
pub fn report_table(s: &RunSummary) -> String {
    let p = &s.summary;
    let mut out = String::new();
    out.push_str("Train Acc. (Mean, Max, Std)  | Test Acc. (Mean, Max, Std)   | Swap Per. | Accept Per. | Time (min.)\n");
    out.push_str(&format!(
        "{:6.2} {:6.2} {:6.2}       | {:6.2} {:6.2} {:6.2}       | {:9.2} | {:11.2} | {:11.2}\n",
        p.train.mean,
        p.train.max,
        p.train.std,
        p.test.mean,
        p.test.max,
        p.test.std,
        p.swap_pct_of_attempts,
        p.acceptance_pct,
        p.wall_clock_minutes
    ));
    out.push_str(&format!(
        "swap %: {:.2} of attempts, {:.2} of samples; {} replicas x {} steps, {} dropped\n",
        p.swap_pct_of_attempts, p.swap_pct_of_samples, s.temperatures.len(), s.per_replica_budget, s.dropped_samples
    ));
    for r in &s.rhat {
        match r.rhat {
            Some(v) => out.push_str(&format!("r-hat w{}: {v:.4}\n", r.weight_id)),
            None => out.push_str(&format!(
                "r-hat w{}: n/a ({})\n",
                r.weight_id,
                r.note.as_deref().unwrap_or("")
            )),
        }
    }
    out
}

struct OutputWriter {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn write_all(report: &RunReport, w: &mut OutputWriter) -> Result<()> {
    let s = &report.summary;
    let chains = &report.run.chains;
    let json = serde_json::to_string_pretty(s).map_err(|e| Error::invalid(e.to_string()))?;
    w.write("run_summary.json", json + "\n")?;
    w.write("report.txt", report_table(s))?;
    let pooled = pool(chains, s.config.switch_fraction)?;
    for &id in &s.config.weight_ids {
        w.write(&format!("trace_w{id}.csv"), trace_csv(chains, id)?)?;
        if !pooled.samples.is_empty() {
            w.write(&format!("hist_w{id}.csv"), histogram_csv(&pooled, id, s.config.bins)?)?;
        }
    }
    for c in chains {
        let r = c.replica;
        w.write(&format!("accuracy_trace_r{r}.csv"), accuracy_trace_csv(c))?;
        w.write(&format!("loglik_trace_r{r}.csv"), loglik_trace_csv(c))?;
        w.write(&format!("samples_r{r}.bin"), samples_bytes(c))?;
        let header =
            serde_json::to_string_pretty(&samples_header(c)).map_err(|e| Error::invalid(e.to_string()))?;
        w.write(&format!("samples_r{r}.json"), header + "\n")?;
    }
    Ok(())
}

/// Writes every report file into `out_dir`. On failure the files written so
/// far are removed.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<()> {
    let mut w = OutputWriter::new(out_dir)?;
    match write_all(report, &mut w) {
        Ok(()) => Ok(()),
        Err(e) => {
            w.discard();
            Err(e)
        }
    }
}

/// Runs end to end and writes the outputs to `cfg.out_dir`.
pub fn run(cfg: &CliConfig) -> Result<RunReport> {
    let report = execute(cfg)?;
    write_outputs(&report, &cfg.out_dir)?;
    Ok(report)
}
