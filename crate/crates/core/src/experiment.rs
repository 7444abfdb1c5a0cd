//! Experiment grids: configuration file, grid expansion, seeding, execution
//! and persistence.
//!
//! Outputs for a run in `output_dir`:
//!
//! - `<config_id>.jsonl`: one [`RoundEntry`] per line, in round order
//! - `<config_id>.done.json`: completion marker with checksum, used to resume
//! - `summary.csv`: one row per cell
//! - `manifest.json`: config echo, versions, per-cell checksums and counts
//!
//! Seeds derive from `(experiment_seed, config_id, round_index)`, never from
//! grid position, so editing one cell leaves every other cell's draws alone.
//! With common random numbers the valuation draw depends only on
//! `(experiment_seed, round_index)` and all cells see the same valuations.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, AgentBackend};
use crate::auction::TieRule;
use crate::error::{Error, Result};
use crate::llm::{LlmClient, LlmConfig};
use crate::metrics::{aggregate, write_summary_csv, CellLabels, MetricsSummary, DEFAULT_TRUTHFUL_TOLERANCE};
use crate::model::{DisclosureStrategy, PooledInfo, RoundEntry, StrategyFamily, ValuePrior};
use crate::pipeline::{run_round, RoundConfig};
use crate::rng::{derive_seed, stable_hash, HashPart};
use crate::signaling::templates;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One strategy family with the fractions and pooled-information variants to
/// sweep. Omitted fractions default to 0.2, 0.4, 0.6, 0.8; omitted pooled
/// info defaults to both tier variants for tiered families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub family: StrategyFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disclosure_fractions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_info: Option<Vec<PooledInfo>>,
}

impl StrategySpec {
    pub fn family(family: StrategyFamily) -> Self {
        StrategySpec { family, disclosure_fractions: None, pooled_info: None }
    }

    fn expand(&self, at: usize) -> Result<Vec<DisclosureStrategy>> {
        let ctx = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("strategies[{at}]: {m}")),
            other => other,
        };
        if self.family == StrategyFamily::FullDisclosure {
            return Ok(vec![DisclosureStrategy::full_disclosure()]);
        }
        let fractions = self.disclosure_fractions.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
        if fractions.is_empty() {
            return Err(Error::config(format!("strategies[{at}].disclosure_fractions is empty")));
        }
        let pooled = match (self.family, &self.pooled_info) {
            (StrategyFamily::Randomized, None) => vec![PooledInfo::NoInfo],
            (_, None) => vec![PooledInfo::TierOnly, PooledInfo::TierWithAverage],
            (_, Some(p)) if p.is_empty() => {
                return Err(Error::config(format!("strategies[{at}].pooled_info is empty")));
            }
            (_, Some(p)) => p.clone(),
        };
        let mut out = Vec::new();
        for &d in &fractions {
            for &p in &pooled {
                out.push(DisclosureStrategy::new(self.family, d, p).map_err(ctx)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment_seed: u64,
    #[serde(default = "default_bidders")]
    pub n_bidders: usize,
    #[serde(default = "default_rounds")]
    pub rounds_per_config: u64,
    #[serde(default)]
    pub prior: ValuePrior,
    pub strategies: Vec<StrategySpec>,
    pub backends: Vec<AgentBackend>,
    #[serde(default)]
    pub tie_rule: TieRule,
    /// Share valuation draws across cells. Unset means on for analytic
    /// backends and off for the LLM backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_random_numbers: Option<bool>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tolerance")]
    pub truthful_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmConfig>,
}

fn default_bidders() -> usize {
    10
}
fn default_rounds() -> u64 {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_tolerance() -> f64 {
    DEFAULT_TRUTHFUL_TOLERANCE
}

impl ExperimentConfig {
    /// The 21-cell grid: full disclosure, Pool-High and Pool-Low at four
    /// thresholds with both pooled-information variants, randomized pooling at
    /// four thresholds. 10 bidders, 100 rounds per cell.
    pub fn paper_default(experiment_seed: u64, backends: Vec<AgentBackend>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment_seed,
            n_bidders: default_bidders(),
            rounds_per_config: default_rounds(),
            prior: ValuePrior::default(),
            strategies: vec![
                StrategySpec::family(StrategyFamily::FullDisclosure),
                StrategySpec::family(StrategyFamily::PoolHigh),
                StrategySpec::family(StrategyFamily::PoolLow),
                StrategySpec::family(StrategyFamily::Randomized),
            ],
            backends,
            tie_rule: TieRule::default(),
            common_random_numbers: None,
            output_dir: default_output_dir(),
            truthful_tolerance: default_tolerance(),
            llm: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let ec: ExperimentConfig = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        ec.validate()?;
        Ok(ec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if self.n_bidders < 2 {
            return Err(Error::config(format!("n_bidders: must be at least 2, got {}", self.n_bidders)));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies: at least one strategy is required"));
        }
        if self.backends.is_empty() {
            return Err(Error::config("backends: at least one backend is required"));
        }
        for (i, b) in self.backends.iter().enumerate() {
            b.validate().map_err(|e| Error::config(format!("backends[{i}]: {e}")))?;
        }
        if !(self.truthful_tolerance.is_finite() && self.truthful_tolerance >= 0.0) {
            return Err(Error::config("truthful_tolerance: must be a non-negative number"));
        }
        if let Some(llm) = &self.llm {
            llm.validate()?;
        }
        for (i, s) in self.strategies.iter().enumerate() {
            s.expand(i)?;
        }
        Ok(())
    }

    pub fn uses_llm(&self) -> bool {
        self.backends.iter().any(|b| !b.is_analytic())
    }

    /// Experiment-wide settings a persisted cell depends on besides its own
    /// parameters.
    fn run_key(&self) -> u64 {
        let prior = serde_json::to_string(&self.prior).expect("prior serialises");
        let tie = serde_json::to_string(&self.tie_rule).expect("tie rule serialises");
        stable_hash(&[
            HashPart::U64(self.experiment_seed),
            HashPart::U64(self.n_bidders as u64),
            HashPart::U64(self.rounds_per_config),
            HashPart::Str(&prior),
            HashPart::Str(&tie),
            HashPart::U64(u64::from(templates::VERSION)),
        ])
    }
}

/// Label used for a backend in summaries: its kind, plus a parameter hash
/// when the parameters differ from the defaults.
pub fn backend_label(backend: &AgentBackend) -> String {
    let default = match backend {
        AgentBackend::ScriptedPaper(_) => AgentBackend::scripted(),
        AgentBackend::RationalBayes(_) => AgentBackend::RationalBayes(Default::default()),
        other => other.clone(),
    };
    if *backend == default {
        backend.name().to_string()
    } else {
        let json = serde_json::to_string(backend).expect("backend serialises");
        format!("{}-{:08x}", backend.name(), stable_hash(&[HashPart::Str(&json)]) >> 32)
    }
}

/// One cell of the expanded grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config_id: String,
    pub strategy: DisclosureStrategy,
    pub backend: AgentBackend,
    pub common_random_numbers: bool,
}

impl GridCell {
    fn new(strategy: DisclosureStrategy, backend: AgentBackend, crn: Option<bool>) -> Self {
        let s = serde_json::to_string(&strategy).expect("strategy serialises");
        let b = serde_json::to_string(&backend).expect("backend serialises");
        let h = stable_hash(&[HashPart::Str(&s), HashPart::Str(&b)]);
        let config_id = format!("{}__{}__{:08x}", strategy.slug(), backend.name(), h >> 32);
        let common_random_numbers = crn.unwrap_or_else(|| backend.is_analytic());
        GridCell { config_id, strategy, backend, common_random_numbers }
    }

    pub fn labels(&self) -> CellLabels {
        CellLabels {
            strategy: self.strategy.family.as_str().to_string(),
            disclosure_fraction: Some(self.strategy.disclosure_fraction),
            pooled_info: self.strategy.pooled_info.as_str().to_string(),
            backend: backend_label(&self.backend),
        }
    }

    pub fn round_seed(&self, experiment_seed: u64, round_index: u64) -> u64 {
        stable_hash(&[HashPart::U64(experiment_seed), HashPart::Str(&self.config_id), HashPart::U64(round_index)])
    }

    pub fn round_config(&self, ec: &ExperimentConfig, round_index: u64) -> RoundConfig {
        let round_seed = self.round_seed(ec.experiment_seed, round_index);
        let valuation_seed = if self.common_random_numbers {
            stable_hash(&[HashPart::U64(ec.experiment_seed), HashPart::Str("valuations"), HashPart::U64(round_index)])
        } else {
            derive_seed(round_seed, "valuations")
        };
        RoundConfig {
            config_id: self.config_id.clone(),
            round_index,
            n_bidders: ec.n_bidders,
            prior: ec.prior,
            strategy: self.strategy,
            tie_rule: ec.tie_rule,
            backend: self.backend.clone(),
            round_seed,
            valuation_seed,
        }
    }
}

/// Ordered product strategies x backends. Duplicate cells are dropped with a
/// warning.
pub fn expand_grid(ec: &ExperimentConfig) -> Result<Vec<GridCell>> {
    ec.validate()?;
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for (i, spec) in ec.strategies.iter().enumerate() {
        for strategy in spec.expand(i)? {
            for backend in &ec.backends {
                let cell = GridCell::new(strategy, backend.clone(), ec.common_random_numbers);
                if seen.insert(cell.config_id.clone()) {
                    cells.push(cell);
                } else {
                    log::warn!("duplicate grid cell {} ignored", cell.config_id);
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub config_id: String,
    #[serde(flatten)]
    pub labels: CellLabels,
    pub common_random_numbers: bool,
    pub file: String,
    pub sha256: String,
    pub rounds: u64,
    pub rounds_ok: u64,
    pub rounds_failed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub template_version: u32,
    pub experiment_seed: u64,
    pub config: ExperimentConfig,
    pub summary_file: String,
    pub cells: Vec<CellManifest>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn total_failed(&self) -> u64 {
        self.cells.iter().map(|c| c.rounds_failed).sum()
    }
}

/// Progress report for one finished cell.
#[derive(Clone, Debug)]
pub struct CellReport {
    pub cell: GridCell,
    pub summary: MetricsSummary,
    pub resumed: bool,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct DoneMarker {
    sha256: String,
    lines: u64,
    run_key: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<RoundEntry>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn encode_jsonl(entries: &[RoundEntry]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Entries of a cell already completed by an earlier run with the same
/// settings, if its JSONL still matches the recorded checksum.
fn completed_cell(jsonl: &Path, marker: &Path, expected_lines: u64, run_key: &str) -> Option<Vec<RoundEntry>> {
    let marker: DoneMarker = serde_json::from_slice(&fs::read(marker).ok()?).ok()?;
    if marker.run_key != run_key || marker.lines != expected_lines {
        return None;
    }
    let bytes = fs::read(jsonl).ok()?;
    if sha256_hex(&bytes) != marker.sha256 {
        log::warn!("{}: checksum mismatch, re-running cell", jsonl.display());
        return None;
    }
    let entries = parse_jsonl(jsonl, &bytes).ok()?;
    (entries.len() as u64 == expected_lines).then_some(entries)
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub fn run_experiment(ec: &ExperimentConfig) -> Result<RunManifest> {
    run_experiment_with(ec, |_| {})
}

/// Runs every cell of the grid and writes all outputs; `progress` is called
/// once per finished cell in grid order.
///
/// Fails before running any round if the output directory is not writable or
/// an LLM backend has no API key. Cells whose JSONL is complete and matches
/// its checksum are reused instead of re-run.
pub fn run_experiment_with(ec: &ExperimentConfig, progress: impl FnMut(&CellReport)) -> Result<RunManifest> {
    ec.validate()?;
    let llm = if ec.uses_llm() { Some(Arc::new(LlmClient::new(ec.llm.clone().unwrap_or_default())?)) } else { None };
    run_experiment_using(ec, llm, progress)
}

/// Like [`run_experiment_with`] but with a caller-built LLM client, which is
/// required when the grid has an LLM backend.
pub fn run_experiment_using(
    ec: &ExperimentConfig,
    llm: Option<Arc<LlmClient>>,
    mut progress: impl FnMut(&CellReport),
) -> Result<RunManifest> {
    let cells = expand_grid(ec)?;
    if ec.uses_llm() && llm.is_none() {
        return Err(Error::config("grid has an llm backend but no LLM client was provided"));
    }
    let out = &ec.output_dir;
    ensure_writable(out)?;
    let run_key = format!("{:016x}", ec.run_key());

    let mut manifest_cells = Vec::with_capacity(cells.len());
    let mut summaries = Vec::with_capacity(cells.len());
    for cell in &cells {
        let file = format!("{}.jsonl", cell.config_id);
        let jsonl = out.join(&file);
        let marker = out.join(format!("{}.done.json", cell.config_id));

        let (entries, bytes, resumed) = match completed_cell(&jsonl, &marker, ec.rounds_per_config, &run_key) {
            Some(entries) => {
                let bytes = fs::read(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
                (entries, bytes, true)
            }
            None => {
                let agent = Agent::for_cell(&cell.backend, &cell.strategy, ec.n_bidders, llm.clone())?;
                let entries = (0..ec.rounds_per_config)
                    .into_par_iter()
                    .map(|r| run_round(&cell.round_config(ec, r), &agent))
                    .collect::<Result<Vec<_>>>()?;
                let bytes = encode_jsonl(&entries)?;
                write_file(&jsonl, &bytes)?;
                let done =
                    DoneMarker { sha256: sha256_hex(&bytes), lines: entries.len() as u64, run_key: run_key.clone() };
                write_file(&marker, &serde_json::to_vec(&done)?)?;
                (entries, bytes, false)
            }
        };

        let summary = aggregate(&entries, ec.truthful_tolerance)?.with_labels(cell.labels());
        let summary = MetricsSummary { config_id: cell.config_id.clone(), ..summary };
        manifest_cells.push(CellManifest {
            config_id: cell.config_id.clone(),
            labels: cell.labels(),
            common_random_numbers: cell.common_random_numbers,
            file,
            sha256: sha256_hex(&bytes),
            rounds: ec.rounds_per_config,
            rounds_ok: summary.rounds_ok,
            rounds_failed: summary.rounds_failed,
        });
        progress(&CellReport { cell: cell.clone(), summary: summary.clone(), resumed });
        summaries.push(summary);
    }

    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &summaries).map_err(|e| Error::io(out.join(SUMMARY_FILE), e))?;
    write_file(&out.join(SUMMARY_FILE), &csv)?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        template_version: templates::VERSION,
        experiment_seed: ec.experiment_seed,
        config: ec.clone(),
        summary_file: SUMMARY_FILE.to_string(),
        cells: manifest_cells,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.write_all(b"\n").expect("Vec write");
    write_file(&out.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}
