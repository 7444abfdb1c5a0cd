//! C ABI for the auction simulator.
//!
//! Conventions:
//!
//! - every fallible function returns a [`DsStatus`]; on failure a message is
//!   available from [`ds_last_error`] on the same thread
//! - handles ([`DsConfig`], [`DsSummary`]) are opaque and owned by the caller
//!   once returned; release them with the matching `_free` function
//! - strings returned as `char *` are owned by the caller and released with
//!   [`ds_string_free`]
//! - panics never cross the boundary; they surface as `DS_STATUS_PANIC`

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use disclosure_sim::experiment::{expand_grid, run_experiment, ExperimentConfig};
use disclosure_sim::metrics::summary_csv_string;
use disclosure_sim::{run_second_price, AgentBackend, BidderId, Error, MetricsSummary, SimRng, TieRule};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Validation = 4,
    Mechanism = 5,
    Io = 6,
    OutOfRange = 7,
    Other = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsBackend {
    OracleTruthful = 0,
    ScriptedPaper = 1,
    RationalBayes = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsTieRule {
    LowestIndex = 0,
    SeededRandom = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DsAuctionOutcome {
    pub winner: usize,
    pub price: f64,
    pub winning_bid: f64,
}

/// Numeric part of one summary row. Means and percentages are NaN when the
/// row has no successful rounds (`rounds_ok == 0`).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DsSummaryRow {
    pub rounds_ok: u64,
    pub rounds_failed: u64,
    pub mean_revenue: f64,
    pub mean_welfare: f64,
    pub pct_truthful: f64,
    pub pct_over: f64,
    pub pct_under: f64,
    pub bid_count: u64,
}

/// Experiment configuration handle.
pub struct DsConfig {
    inner: ExperimentConfig,
}

/// Result table of a run.
pub struct DsSummary {
    rows: Vec<MetricsSummary>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::Config(_) => DsStatus::Config,
        Error::Validation(_) => DsStatus::Validation,
        Error::Mechanism(_) => DsStatus::Mechanism,
        Error::Io { .. } | Error::Checksum { .. } => DsStatus::Io,
        _ => DsStatus::Other,
    }
}

fn fail(status: DsStatus, msg: impl Into<String>) -> DsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DsStatus>) -> DsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DsStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> DsStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DsStatus> {
    if p.is_null() {
        return Err(fail(DsStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(DsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, DsStatus> {
    p.as_ref().ok_or_else(|| fail(DsStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DsStatus> {
    p.as_mut().ok_or_else(|| fail(DsStatus::NullPointer, format!("{what} is NULL")))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// call into this library on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML experiment configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_config_from_toml(toml: *const c_char, out: *mut *mut DsConfig) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(toml, "toml")?;
        let inner = ExperimentConfig::from_toml_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DsConfig { inner }));
        Ok(())
    })
}

/// The 21-cell default grid for one analytic backend.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_config_default(seed: u64, backend: DsBackend, out: *mut *mut DsConfig) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let backend = match backend {
            DsBackend::OracleTruthful => AgentBackend::OracleTruthful,
            DsBackend::ScriptedPaper => AgentBackend::scripted(),
            DsBackend::RationalBayes => AgentBackend::RationalBayes(Default::default()),
        };
        let inner = ExperimentConfig::paper_default(seed, vec![backend]);
        *out = Box::into_raw(Box::new(DsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ds_config_set_output_dir(config: *mut DsConfig, dir: *const c_char) -> DsStatus {
    guard(|| {
        let config = out_arg(config, "config")?;
        config.inner.output_dir = PathBuf::from(str_arg(dir, "dir")?);
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_config_set_rounds(config: *mut DsConfig, rounds: u64) -> DsStatus {
    guard(|| {
        out_arg(config, "config")?.inner.rounds_per_config = rounds;
        Ok(())
    })
}

/// Number of cells in the expanded grid.
///
/// # Safety
/// `config` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_config_cell_count(config: *const DsConfig, out: *mut usize) -> DsStatus {
    guard(|| {
        let config = ref_arg(config, "config")?;
        let out = out_arg(out, "out")?;
        *out = expand_grid(&config.inner).map_err(lib_err)?.len();
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_config_free(config: *mut DsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the grid, writing outputs to the configured directory, and returns
/// the per-cell summary.
///
/// # Safety
/// `config` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_run(config: *const DsConfig, out: *mut *mut DsSummary) -> DsStatus {
    guard(|| {
        let config = ref_arg(config, "config")?;
        let out = out_arg(out, "out")?;
        let manifest = run_experiment(&config.inner).map_err(lib_err)?;
        let (_, cells) = disclosure_sim::report::load_run(&config.inner.output_dir).map_err(lib_err)?;
        let eps = manifest.config.truthful_tolerance;
        let rows = cells
            .iter()
            .map(|(c, entries)| {
                disclosure_sim::metrics::aggregate_group(c.config_id.clone(), entries, eps)
                    .with_labels(c.labels.clone())
            })
            .collect();
        *out = Box::into_raw(Box::new(DsSummary { rows }));
        Ok(())
    })
}

/// # Safety
/// `summary` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ds_summary_len(summary: *const DsSummary) -> usize {
    summary.as_ref().map_or(0, |s| s.rows.len())
}

/// # Safety
/// `summary` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_summary_row(summary: *const DsSummary, index: usize, out: *mut DsSummaryRow) -> DsStatus {
    guard(|| {
        let summary = ref_arg(summary, "summary")?;
        let out = out_arg(out, "out")?;
        let r = summary
            .rows
            .get(index)
            .ok_or_else(|| fail(DsStatus::OutOfRange, format!("row {index} of {}", summary.rows.len())))?;
        let nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = DsSummaryRow {
            rounds_ok: r.rounds_ok,
            rounds_failed: r.rounds_failed,
            mean_revenue: nan(r.mean_revenue),
            mean_welfare: nan(r.mean_welfare),
            pct_truthful: nan(r.pct_truthful),
            pct_over: nan(r.pct_over),
            pct_under: nan(r.pct_under),
            bid_count: r.bid_count,
        };
        Ok(())
    })
}

/// `config_id` of a row as a new string; free with [`ds_string_free`].
///
/// # Safety
/// `summary` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_summary_config_id(
    summary: *const DsSummary,
    index: usize,
    out: *mut *mut c_char,
) -> DsStatus {
    guard(|| {
        let summary = ref_arg(summary, "summary")?;
        let out = out_arg(out, "out")?;
        let r = summary
            .rows
            .get(index)
            .ok_or_else(|| fail(DsStatus::OutOfRange, format!("row {index} of {}", summary.rows.len())))?;
        *out = CString::new(r.config_id.clone()).expect("ids have no NUL").into_raw();
        Ok(())
    })
}

/// The summary rendered as CSV (same format as summary.csv); free with
/// [`ds_string_free`].
///
/// # Safety
/// `summary` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_summary_csv(summary: *const DsSummary, out: *mut *mut c_char) -> DsStatus {
    guard(|| {
        let summary = ref_arg(summary, "summary")?;
        let out = out_arg(out, "out")?;
        *out = CString::new(summary_csv_string(&summary.rows)).expect("CSV has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `summary` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_summary_free(summary: *mut DsSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Second-price auction over `bids[0..n]`; bidder ids are array indices.
/// `seed` only matters for `DS_TIE_RULE_SEEDED_RANDOM`.
///
/// # Safety
/// `bids` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_second_price(
    bids: *const f64,
    n: usize,
    tie_rule: DsTieRule,
    seed: u64,
    out: *mut DsAuctionOutcome,
) -> DsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if bids.is_null() {
            return Err(fail(DsStatus::NullPointer, "bids is NULL"));
        }
        let pairs: Vec<(BidderId, f64)> =
            std::slice::from_raw_parts(bids, n).iter().enumerate().map(|(i, &b)| (BidderId(i), b)).collect();
        let rule = match tie_rule {
            DsTieRule::LowestIndex => TieRule::LowestIndex,
            DsTieRule::SeededRandom => TieRule::SeededRandom,
        };
        let o = run_second_price(&pairs, rule, &mut SimRng::from_seed(seed)).map_err(lib_err)?;
        *out = DsAuctionOutcome { winner: o.winner.index(), price: o.price, winning_bid: o.winning_bid };
        Ok(())
    })
}
