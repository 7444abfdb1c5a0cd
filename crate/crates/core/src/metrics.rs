//! Bid deviation, revenue and social welfare, per round and aggregated.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RoundEntry, RoundRecord};

pub const DEFAULT_TRUTHFUL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationClass {
    Over,
    Truthful,
    Under,
}

/// Compares a bid with the bidder's own estimate; `|bid - estimate| <= eps`
/// counts as truthful.
pub fn classify_bid(bid: f64, estimate: f64, eps: f64) -> DeviationClass {
    let diff = bid - estimate;
    if diff.abs() <= eps {
        DeviationClass::Truthful
    } else if diff > 0.0 {
        DeviationClass::Over
    } else {
        DeviationClass::Under
    }
}

/// Price paid by the winner.
pub fn round_revenue(rec: &RoundRecord) -> f64 {
    rec.outcome.price
}

/// True valuation of the winner.
pub fn round_welfare(rec: &RoundRecord) -> f64 {
    rec.winner_value()
}

/// Descriptive labels of a summary row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellLabels {
    pub strategy: String,
    pub disclosure_fraction: Option<f64>,
    pub pooled_info: String,
    pub backend: String,
}

/// Aggregate over one configuration (or one pooled group of them).
///
/// Means and percentages are `None` when there is nothing to average; they
/// are written as empty CSV fields, never as NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub config_id: String,
    #[serde(flatten)]
    pub labels: CellLabels,
    pub rounds_ok: u64,
    pub rounds_failed: u64,
    pub mean_revenue: Option<f64>,
    pub sum_revenue: f64,
    pub mean_welfare: Option<f64>,
    pub sum_welfare: f64,
    pub pct_truthful: Option<f64>,
    pub pct_over: Option<f64>,
    pub pct_under: Option<f64>,
    pub bid_count: u64,
}

impl MetricsSummary {
    pub fn is_empty(&self) -> bool {
        self.rounds_ok == 0
    }

    pub fn with_labels(mut self, labels: CellLabels) -> Self {
        self.labels = labels;
        self
    }
}

/// Aggregates the entries of one configuration.
///
/// Entries are folded in `round_index` order so the result does not depend on
/// the order they are passed in.
pub fn aggregate(entries: &[RoundEntry], eps: f64) -> Result<MetricsSummary> {
    let config_id = entries.first().map(|e| e.config_id().to_string()).unwrap_or_default();
    if let Some(other) = entries.iter().find(|e| e.config_id() != config_id) {
        return Err(Error::Validation(format!(
            "aggregate over mixed configurations: {config_id} and {}",
            other.config_id()
        )));
    }
    Ok(aggregate_group(config_id, entries.iter(), eps))
}

/// Aggregates any collection of entries under the given id.
pub fn aggregate_group<'a>(
    config_id: String,
    entries: impl IntoIterator<Item = &'a RoundEntry>,
    eps: f64,
) -> MetricsSummary {
    let mut ordered: Vec<&RoundEntry> = entries.into_iter().collect();
    ordered.sort_by(|a, b| a.config_id().cmp(b.config_id()).then(a.round_index().cmp(&b.round_index())));

    let mut rounds_failed = 0u64;
    let mut rounds_ok = 0u64;
    let (mut sum_revenue, mut sum_welfare) = (0.0, 0.0);
    let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut bid_count = 0u64;
    for entry in ordered {
        let Some(rec) = entry.record() else {
            rounds_failed += 1;
            continue;
        };
        rounds_ok += 1;
        sum_revenue += round_revenue(rec);
        sum_welfare += round_welfare(rec);
        for r in &rec.responses {
            bid_count += 1;
            let key = match classify_bid(r.bid, r.estimated_value, eps) {
                DeviationClass::Truthful => "truthful",
                DeviationClass::Over => "over",
                DeviationClass::Under => "under",
            };
            *counts.entry(key).or_default() += 1;
        }
    }
    if rounds_ok == 0 {
        log::warn!("{config_id}: no successful rounds to aggregate");
    }
    let mean = |sum: f64| (rounds_ok > 0).then(|| sum / rounds_ok as f64);
    let pct = |k: &str| (bid_count > 0).then(|| 100.0 * counts.get(k).copied().unwrap_or(0) as f64 / bid_count as f64);
    MetricsSummary {
        config_id,
        labels: CellLabels::default(),
        rounds_ok,
        rounds_failed,
        mean_revenue: mean(sum_revenue),
        sum_revenue,
        mean_welfare: mean(sum_welfare),
        sum_welfare,
        pct_truthful: pct("truthful"),
        pct_over: pct("over"),
        pct_under: pct("under"),
        bid_count,
    }
}

pub const CSV_COLUMNS: [&str; 15] = [
    "config_id",
    "strategy",
    "disclosure_fraction",
    "pooled_info",
    "backend",
    "rounds_ok",
    "rounds_failed",
    "mean_revenue",
    "sum_revenue",
    "mean_welfare",
    "sum_welfare",
    "pct_truthful",
    "pct_over",
    "pct_under",
    "bid_count",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the summary table with a header row; floats use the shortest
/// round-trip representation.
pub fn write_summary_csv<W: Write>(out: W, rows: &[MetricsSummary]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        let fields = [
            r.config_id.clone(),
            r.labels.strategy.clone(),
            opt(r.labels.disclosure_fraction),
            r.labels.pooled_info.clone(),
            r.labels.backend.clone(),
            r.rounds_ok.to_string(),
            r.rounds_failed.to_string(),
            opt(r.mean_revenue),
            r.sum_revenue.to_string(),
            opt(r.mean_welfare),
            r.sum_welfare.to_string(),
            opt(r.pct_truthful),
            opt(r.pct_over),
            opt(r.pct_under),
            r.bid_count.to_string(),
        ];
        w.write_record(&fields)?;
    }
    w.flush()
}

pub fn summary_csv_string(rows: &[MetricsSummary]) -> String {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, rows).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Announcement, AuctionOutcome, BidResponse, BidderId, FailedRound, Phase, Signal, Valuation};
    use proptest::prelude::*;

    fn record(round: u64, values: &[f64], bids: &[(f64, f64)]) -> RoundEntry {
        let n = values.len();
        let responses: Vec<BidResponse> = bids
            .iter()
            .enumerate()
            .map(|(i, &(b, e))| BidResponse::new(BidderId(i), b, e, "t".into()).unwrap())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| bids[b].0.total_cmp(&bids[a].0).then(a.cmp(&b)));
        let outcome =
            AuctionOutcome { winner: BidderId(order[0]), price: bids[order[1]].0, winning_bid: bids[order[0]].0 };
        RoundEntry::Ok(RoundRecord {
            round_index: round,
            config_id: "c".into(),
            seed: 0,
            valuations: values.iter().map(|&v| Valuation::new(v).unwrap()).collect(),
            signals: vec![Signal::NoInfo; n],
            responses,
            outcome,
            announcement: Announcement { winner: outcome.winner, price: outcome.price },
            transcripts: Vec::new(),
        })
    }

    fn failed(round: u64) -> RoundEntry {
        RoundEntry::Failed(FailedRound {
            round_index: round,
            config_id: "c".into(),
            seed: 0,
            phase: Phase::BidGeneration,
            bidder: None,
            cause: "x".into(),
            transcripts: Vec::new(),
        })
    }

    #[test]
    fn classification() {
        assert_eq!(classify_bid(0.7, 0.7, 1e-9), DeviationClass::Truthful);
        assert_eq!(classify_bid(0.8, 0.7, 1e-9), DeviationClass::Over);
        assert_eq!(classify_bid(0.6, 0.7, 1e-9), DeviationClass::Under);
        assert_eq!(classify_bid(0.7 + 1e-12, 0.7, 1e-9), DeviationClass::Truthful);
    }

    #[test]
    fn revenue_and_welfare() {
        let e = record(0, &[0.9, 0.2], &[(0.8, 0.8), (0.7, 0.7)]);
        let rec = e.record().unwrap();
        assert_eq!(round_revenue(rec), 0.7);
        assert_eq!(round_welfare(rec), 0.9);
        let tie = record(0, &[0.1, 0.2, 0.3], &[(0.5, 0.5), (0.5, 0.5), (0.5, 0.5)]);
        assert_eq!(round_revenue(tie.record().unwrap()), 0.5);
    }

    #[test]
    fn mean_revenue_and_failed_rounds() {
        let entries = vec![
            record(0, &[0.9, 0.2], &[(0.8, 0.8), (0.7, 0.7)]),
            record(1, &[0.6, 0.5], &[(0.6, 0.5), (0.5, 0.6)]),
            failed(2),
        ];
        let s = aggregate(&entries, 1e-9).unwrap();
        assert_eq!(s.rounds_ok, 2);
        assert_eq!(s.rounds_failed, 1);
        assert!((s.mean_revenue.unwrap() - 0.6).abs() < 1e-15);
        assert!((s.sum_revenue - 1.2).abs() < 1e-15);
        assert_eq!(s.bid_count, 4);
        assert_eq!(s.pct_truthful, Some(50.0));
        assert_eq!(s.pct_over, Some(25.0));
        assert_eq!(s.pct_under, Some(25.0));
    }

    #[test]
    fn empty_summary_has_no_nan() {
        let s = aggregate(&[failed(0)], 1e-9).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.mean_revenue, None);
        assert_eq!(s.pct_truthful, None);
        let csv = summary_csv_string(&[s]);
        assert!(!csv.contains("NaN"));
        let empty = aggregate(&[], 1e-9).unwrap();
        assert_eq!(empty.rounds_ok, 0);
    }

    #[test]
    fn mixed_configs_rejected() {
        let mut other = record(1, &[0.5, 0.4], &[(0.5, 0.5), (0.4, 0.4)]);
        if let RoundEntry::Ok(r) = &mut other {
            r.config_id = "d".into();
        }
        assert!(aggregate(&[record(0, &[0.5, 0.4], &[(0.5, 0.5), (0.4, 0.4)]), other], 1e-9).is_err());
    }

    #[test]
    fn csv_header_order() {
        let csv = summary_csv_string(&[]);
        assert_eq!(
            csv.trim_end(),
            "config_id,strategy,disclosure_fraction,pooled_info,backend,rounds_ok,rounds_failed,mean_revenue,sum_revenue,mean_welfare,sum_welfare,pct_truthful,pct_over,pct_under,bid_count"
        );
    }

    proptest! {
        #[test]
        fn aggregation_is_order_invariant(
            rows in proptest::collection::vec(
                proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 2..6),
                1..30,
            ),
            seed: u64,
        ) {
            let entries: Vec<RoundEntry> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let values: Vec<f64> = r.iter().map(|t| t.0).collect();
                    let bids: Vec<(f64, f64)> = r.iter().map(|t| (t.1, t.2)).collect();
                    record(i as u64, &values, &bids)
                })
                .collect();
            let mut shuffled = entries.clone();
            let mut rng = crate::rng::SimRng::from_seed(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.below(i + 1));
            }
            let a = aggregate(&entries, 1e-9).unwrap();
            let b = aggregate(&shuffled, 1e-9).unwrap();
            prop_assert_eq!(summary_csv_string(std::slice::from_ref(&a)), summary_csv_string(&[b]));
            let total = a.pct_truthful.unwrap() + a.pct_over.unwrap() + a.pct_under.unwrap();
            prop_assert!((total - 100.0).abs() < 1e-9);
            for e in &entries {
                let rec = e.record().unwrap();
                prop_assert!(round_revenue(rec) <= 1.0 && round_welfare(rec) <= 1.0);
            }
        }
    }
}
