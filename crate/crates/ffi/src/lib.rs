//! C ABI over the `bgcn` crate.
//!
//! Datasets and finished runs are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`BgcnStatus`]; on failure `bgcn_last_error` describes the problem for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bgcn::cli::{execute_with_dataset, write_outputs, CliConfig, RunReport};
use bgcn::error::Error;
use bgcn::graph_data::{load_dataset, Dataset};
use bgcn::model::Topology;
use bgcn::posterior::{gelman_rubin, potential_scale_reduction};
use bgcn::proposals::ProposalKind;

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Load = 4,
    Validation = 5,
    Dimension = 6,
    NonFinite = 7,
    EmptyMask = 8,
    Coordination = 9,
    Panic = 10,
}

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgcnProposal {
    RandomWalk = 0,
    Lg = 1,
    AdaptLg = 2,
}

/// Sampler settings. Fill with `bgcn_run_config_default` and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BgcnRunConfig {
    pub replicas: usize,
    pub max_samples: usize,
    pub tmax: f64,
    pub swap_interval: usize,
    pub switch_fraction: f64,
    pub proposal: BgcnProposal,
    pub lg_rate: f64,
    /// Gradient step scale.
    pub lr: f64,
    pub rw_std: f64,
    pub prior_var: f64,
    pub hidden: usize,
    pub seed: u64,
    pub thin: usize,
    /// Coordinates for trace, histogram and r-hat output; may be null when
    /// `num_weight_ids` is 0.
    pub weight_ids: *const usize,
    pub num_weight_ids: usize,
    pub bins: usize,
}

/// Accuracy statistics and rates of a finished run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BgcnSummary {
    pub train_mean: f64,
    pub train_max: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_max: f64,
    pub test_std: f64,
    pub acceptance_pct: f64,
    pub swap_pct_of_attempts: f64,
    pub swap_pct_of_samples: f64,
    pub wall_clock_minutes: f64,
    pub replicas: usize,
    pub per_replica_budget: usize,
    pub param_count: usize,
}

/// Opaque loaded dataset.
pub struct BgcnDataset {
    inner: Dataset,
}

/// Opaque finished run.
pub struct BgcnRun {
    inner: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BgcnStatus {
    match e {
        Error::Io { .. } => BgcnStatus::Io,
        Error::Load { .. } => BgcnStatus::Load,
        Error::Validation { .. } => BgcnStatus::Validation,
        Error::Dimension(_) => BgcnStatus::Dimension,
        Error::NonFinite(_) => BgcnStatus::NonFinite,
        Error::InvalidArgument(_) => BgcnStatus::InvalidArgument,
        Error::EmptyMask => BgcnStatus::EmptyMask,
        Error::Coordination(_) => BgcnStatus::Coordination,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (BgcnStatus, String)>) -> BgcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BgcnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BgcnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (BgcnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BgcnStatus, String) {
    (BgcnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (BgcnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BgcnStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bgcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of weights and biases in a two-layer network.
#[no_mangle]
pub extern "C" fn bgcn_param_count(in_features: usize, hidden: usize, out_classes: usize) -> usize {
    Topology::new(in_features, hidden, out_classes).param_count()
}

/// Log swap acceptance for two replicas' log-likelihoods and temperatures.
#[no_mangle]
pub extern "C" fn bgcn_swap_log_prob(log_lik_i: f64, log_lik_j: f64, t_i: f64, t_j: f64) -> f64 {
    bgcn::tempering::swap_log_prob(log_lik_i, log_lik_j, t_i, t_j)
}

/// Gelman–Rubin r-hat of `num_chains` chains of `len` values each, stored
/// chain after chain. Writes `INFINITY` when chains are constant but differ.
///
/// # Safety
/// `values` must point to `num_chains * len` readable doubles and `out` to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn bgcn_gelman_rubin(
    values: *const f64,
    num_chains: usize,
    len: usize,
    out: *mut f64,
) -> BgcnStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let total = num_chains
            .checked_mul(len)
            .ok_or((BgcnStatus::InvalidArgument, "size overflow".into()))?;
        let flat = std::slice::from_raw_parts(values, total);
        let chains: Vec<Vec<f64>> = if len == 0 {
            vec![Vec::new(); num_chains]
        } else {
            flat.chunks(len).map(<[f64]>::to_vec).collect()
        };
        *out = potential_scale_reduction(&chains).map_err(lib_err)?;
        Ok(())
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn bgcn_dataset_load(dir: *const c_char, out: *mut *mut BgcnDataset) -> BgcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let inner = load_dataset(dir).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BgcnDataset { inner }));
        Ok(())
    })
}

/// Writes node, feature and class counts; any output pointer may be null.
///
/// # Safety
/// `ds` must come from `bgcn_dataset_load`; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgcn_dataset_shape(
    ds: *const BgcnDataset,
    nodes: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> BgcnStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        for (p, v) in [
            (nodes, ds.inner.num_nodes),
            (features, ds.inner.num_features),
            (classes, ds.inner.num_classes),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must come from `bgcn_dataset_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn bgcn_dataset_free(ds: *mut BgcnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fills `cfg` with the default experiment settings.
///
/// # Safety
/// `cfg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run_config_default(cfg: *mut BgcnRunConfig) -> BgcnStatus {
    guard(|| {
        if cfg.is_null() {
            return Err(null("cfg"));
        }
        let d = CliConfig::default();
        *cfg = BgcnRunConfig {
            replicas: d.replicas,
            max_samples: d.max_samples,
            tmax: d.tmax,
            swap_interval: d.swap_interval,
            switch_fraction: d.switch_fraction,
            proposal: BgcnProposal::AdaptLg,
            lg_rate: d.lg_rate,
            lr: d.lr,
            rw_std: d.rw_std,
            prior_var: d.prior_var,
            hidden: d.hidden,
            seed: d.seed,
            thin: d.thin,
            weight_ids: ptr::null(),
            num_weight_ids: 0,
            bins: d.bins,
        };
        Ok(())
    })
}

unsafe fn to_cli(cfg: &BgcnRunConfig) -> Result<CliConfig, (BgcnStatus, String)> {
    let weight_ids = if cfg.num_weight_ids == 0 {
        Vec::new()
    } else if cfg.weight_ids.is_null() {
        return Err(null("weight_ids"));
    } else {
        std::slice::from_raw_parts(cfg.weight_ids, cfg.num_weight_ids).to_vec()
    };
    Ok(CliConfig {
        // Only used for reporting; the dataset is already loaded.
        dataset_dir: PathBuf::from("<handle>"),
        out_dir: PathBuf::new(),
        replicas: cfg.replicas,
        max_samples: cfg.max_samples,
        tmax: cfg.tmax,
        swap_interval: cfg.swap_interval,
        switch_fraction: cfg.switch_fraction,
        proposal: match cfg.proposal {
            BgcnProposal::RandomWalk => ProposalKind::RandomWalk,
            BgcnProposal::Lg => ProposalKind::Lg,
            BgcnProposal::AdaptLg => ProposalKind::AdaptLg,
        },
        lg_rate: cfg.lg_rate,
        lr: cfg.lr,
        rw_std: cfg.rw_std,
        prior_var: cfg.prior_var,
        hidden: cfg.hidden,
        seed: cfg.seed,
        thin: cfg.thin,
        weight_ids,
        bins: cfg.bins,
        likelihood_only_gradient: false,
    })
}

/// Samples the posterior. Blocks until every replica finishes.
///
/// # Safety
/// `ds` must come from `bgcn_dataset_load`, `cfg` must be readable and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run(
    ds: *const BgcnDataset,
    cfg: *const BgcnRunConfig,
    out: *mut *mut BgcnRun,
) -> BgcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let cli = to_cli(cfg)?;
        let inner = execute_with_dataset(&cli, ds.inner.clone()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BgcnRun { inner }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from `bgcn_run`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run_summary(run: *const BgcnRun, out: *mut BgcnSummary) -> BgcnStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = &run.inner.summary;
        let p = &s.summary;
        *out = BgcnSummary {
            train_mean: p.train.mean,
            train_max: p.train.max,
            train_std: p.train.std,
            test_mean: p.test.mean,
            test_max: p.test.max,
            test_std: p.test.std,
            acceptance_pct: p.acceptance_pct,
            swap_pct_of_attempts: p.swap_pct_of_attempts,
            swap_pct_of_samples: p.swap_pct_of_samples,
            wall_clock_minutes: p.wall_clock_minutes,
            replicas: s.temperatures.len(),
            per_replica_budget: s.per_replica_budget,
            param_count: s.param_count,
        };
        Ok(())
    })
}

/// r-hat of one coordinate across the run's replicas after discarding the
/// first `burn_in_fraction` of each chain.
///
/// # Safety
/// `run` must come from `bgcn_run`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run_rhat(
    run: *const BgcnRun,
    weight_id: usize,
    burn_in_fraction: f64,
    out: *mut f64,
) -> BgcnStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gelman_rubin(&run.inner.run.chains, weight_id, burn_in_fraction).map_err(lib_err)?;
        Ok(())
    })
}

/// Writes the summary, traces, histograms and sample files into `dir`.
///
/// # Safety
/// `run` must come from `bgcn_run`; `dir` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run_write(run: *const BgcnRun, dir: *const c_char) -> BgcnStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let dir = path_arg(dir, "dir")?;
        write_outputs(&run.inner, &dir).map_err(lib_err)
    })
}

/// # Safety
/// `run` must come from `bgcn_run` or be null.
#[no_mangle]
pub unsafe extern "C" fn bgcn_run_free(run: *mut BgcnRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
