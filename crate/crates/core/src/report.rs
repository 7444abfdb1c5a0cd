//! Re-aggregation of a finished run directory.
//!
//! Every JSONL file is checked against the checksum in the manifest before it
//! is read; a mismatch is an error, never a silent recompute.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::{parse_jsonl, sha256_hex, CellManifest, RunManifest};
use crate::metrics::{aggregate_group, CellLabels, MetricsSummary};
use crate::model::RoundEntry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    /// One row per cell (strategy family, threshold, pooled info, backend).
    Threshold,
    /// One row per (family, pooled info, backend), pooling all thresholds.
    Strategy,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(GroupBy::Threshold),
            "strategy" => Ok(GroupBy::Strategy),
            other => Err(Error::config(format!("unknown grouping {other:?}, expected strategy or threshold"))),
        }
    }
}

/// A cell's manifest entry with its rounds.
pub type CellEntries = (CellManifest, Vec<RoundEntry>);

/// Loads the manifest and every cell's entries, verifying checksums.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Vec<CellEntries>)> {
    let manifest = RunManifest::load(dir)?;
    let mut cells = Vec::with_capacity(manifest.cells.len());
    for cell in &manifest.cells {
        let path = dir.join(&cell.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != cell.sha256 {
            return Err(Error::Checksum { path: path.clone(), expected: cell.sha256.clone(), found });
        }
        cells.push((cell.clone(), parse_jsonl(&path, &bytes)?));
    }
    Ok((manifest, cells))
}

pub fn report(dir: &Path, group_by: GroupBy) -> Result<Vec<MetricsSummary>> {
    let (manifest, cells) = load_run(dir)?;
    let eps = manifest.config.truthful_tolerance;
    match group_by {
        GroupBy::Threshold => cells
            .iter()
            .map(|(c, entries)| Ok(aggregate_group(c.config_id.clone(), entries, eps).with_labels(c.labels.clone())))
            .collect(),
        GroupBy::Strategy => {
            // Groups in order of first appearance.
            let mut groups: Vec<(String, CellLabels, Vec<f64>, Vec<RoundEntry>)> = Vec::new();
            for (c, entries) in cells {
                let l = &c.labels;
                let id = if l.strategy == l.pooled_info || l.pooled_info == "no_info" {
                    format!("{}__{}", l.strategy, l.backend)
                } else {
                    format!("{}_{}__{}", l.strategy, l.pooled_info, l.backend)
                };
                let d = l.disclosure_fraction.unwrap_or(f64::NAN);
                match groups.iter_mut().find(|g| g.0 == id) {
                    Some(g) => {
                        g.2.push(d);
                        g.3.extend(entries);
                    }
                    None => groups.push((id, l.clone(), vec![d], entries)),
                }
            }
            groups
                .into_iter()
                .map(|(id, mut labels, fractions, entries)| {
                    // Keep the fraction only when every cell in the group shares it.
                    let first = fractions[0];
                    labels.disclosure_fraction = fractions
                        .iter()
                        .all(|d| d.to_bits() == first.to_bits())
                        .then_some(first)
                        .filter(|d| !d.is_nan());
                    Ok(aggregate_group(id, &entries, eps).with_labels(labels))
                })
                .collect()
        }
    }
}
