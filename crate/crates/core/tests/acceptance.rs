//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with its own harness so the lines show up in plain `cargo test`
//! output; the process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use disclosure_sim::agents::{decide, rational_tier_estimate, BidRequest, PublicContext};
use disclosure_sim::experiment::{run_experiment, ExperimentConfig, StrategySpec};
use disclosure_sim::llm::stub::{StubMode, StubServer};
use disclosure_sim::llm::{LlmClient, LlmConfig};
use disclosure_sim::report::load_run;
use disclosure_sim::{
    assign_signals, run_round, run_second_price, AgentBackend, BidderId, DisclosureStrategy, PooledInfo, RoundConfig,
    RoundEntry, RoundRecord, Signal, SimRng, StrategyFamily, TieRule, Valuation, ValuePrior,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SEED: u64 = 20240601;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// summary.csv as one map per row.
fn read_summary(dir: &Path) -> Vec<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(dir.join("summary.csv")).expect("summary.csv");
    reader.deserialize().map(|row| row.expect("summary row")).collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

fn records(entries: &[RoundEntry]) -> Result<Vec<&RoundRecord>, String> {
    entries.iter().map(|e| e.record().ok_or_else(|| format!("round {} failed", e.round_index()))).collect()
}

/// Independent generator for oracles (SplitMix64).
struct Oracle(u64);

impl Oracle {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Monte Carlo means of the second-highest and highest of n uniforms.
    fn order_stat_means(&mut self, n: usize, samples: usize) -> (f64, f64) {
        let (mut second, mut first) = (0.0, 0.0);
        for _ in 0..samples {
            let mut v: Vec<f64> = (0..n).map(|_| self.next()).collect();
            v.sort_by(f64::total_cmp);
            second += v[n - 2];
            first += v[n - 1];
        }
        (second / samples as f64, first / samples as f64)
    }
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let n = 10;
    let mut ec = ExperimentConfig::paper_default(SEED, vec![AgentBackend::OracleTruthful]);
    ec.strategies = vec![StrategySpec::family(StrategyFamily::FullDisclosure)];
    ec.rounds_per_config = 10_000;
    ec.output_dir = dir.path().to_path_buf();
    let start = Instant::now();
    run_experiment(&ec).map_err(err)?;
    let elapsed = start.elapsed();
    let row = &read_summary(dir.path())[0];
    let (revenue, welfare) = (num(row, "mean_revenue"), num(row, "mean_welfare"));

    let exact_revenue = (n as f64 - 1.0) / (n as f64 + 1.0);
    let exact_welfare = n as f64 / (n as f64 + 1.0);
    let (mc_revenue, mc_welfare) = Oracle(0xfeed).order_stat_means(n, 200_000);
    ensure!((mc_revenue - exact_revenue).abs() < 0.003, "oracle revenue {mc_revenue} vs {exact_revenue}");
    ensure!((mc_welfare - exact_welfare).abs() < 0.003, "oracle welfare {mc_welfare} vs {exact_welfare}");
    ensure!((revenue - exact_revenue).abs() <= 0.01, "mean_revenue {revenue} vs {exact_revenue} ± 0.01");
    ensure!((welfare - exact_welfare).abs() <= 0.005, "mean_welfare {welfare} vs {exact_welfare} ± 0.005");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "mean_revenue={revenue:.5} (target {exact_revenue:.5}, oracle {mc_revenue:.5}), \
         mean_welfare={welfare:.5} (target {exact_welfare:.5}, oracle {mc_welfare:.5}), {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut ec = ExperimentConfig::paper_default(SEED, vec![AgentBackend::scripted()]);
    ec.strategies = vec![
        StrategySpec::family(StrategyFamily::FullDisclosure),
        StrategySpec {
            disclosure_fractions: Some(vec![0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0]),
            ..StrategySpec::family(StrategyFamily::Randomized)
        },
    ];
    ec.rounds_per_config = 1000;
    ec.output_dir = dir.path().to_path_buf();
    run_experiment(&ec).map_err(err)?;
    let rows = read_summary(dir.path());
    for row in &rows {
        ensure!(row["pct_truthful"] == "100", "{} pct_truthful={}", row["config_id"], row["pct_truthful"]);
        ensure!(num(row, "bid_count") == 10_000.0, "{} bid_count={}", row["config_id"], row["bid_count"]);
    }
    Ok(format!("{} cells x 1000 rounds, pct_truthful=100 in all", rows.len()))
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut ec = ExperimentConfig::paper_default(SEED, vec![AgentBackend::OracleTruthful]);
    ec.strategies =
        vec![StrategySpec::family(StrategyFamily::FullDisclosure), StrategySpec::family(StrategyFamily::PoolLow)];
    ec.common_random_numbers = Some(true);
    ec.rounds_per_config = 1000;
    ec.output_dir = dir.path().to_path_buf();
    run_experiment(&ec).map_err(err)?;
    let (_, cells) = load_run(dir.path()).map_err(err)?;
    let (fd_cell, fd_entries) = &cells[0];
    ensure!(fd_cell.labels.strategy == "full_disclosure", "first cell is {}", fd_cell.config_id);
    let fd = records(fd_entries)?;
    let mut compared = 0;
    for (cell, entries) in &cells[1..] {
        let pl = records(entries)?;
        ensure!(pl.len() == 1000, "{}: {} rounds", cell.config_id, pl.len());
        for (a, b) in fd.iter().zip(&pl) {
            ensure!(a.valuations == b.valuations, "{} round {}: valuations differ", cell.config_id, a.round_index);
            ensure!(
                a.outcome.winner == b.outcome.winner && a.outcome.price.to_bits() == b.outcome.price.to_bits(),
                "{} round {}: ({}, {}) vs ({}, {})",
                cell.config_id,
                a.round_index,
                a.outcome.winner,
                a.outcome.price,
                b.outcome.winner,
                b.outcome.price
            );
            compared += 1;
        }
    }
    Ok(format!("{} pool-low cells, {compared} rounds with identical winner and price", cells.len() - 1))
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut ec = ExperimentConfig::paper_default(SEED, vec![AgentBackend::scripted()]);
    ec.strategies = vec![StrategySpec {
        family: StrategyFamily::PoolHigh,
        disclosure_fractions: Some(vec![0.2]),
        pooled_info: Some(vec![PooledInfo::TierOnly]),
    }];
    ec.rounds_per_config = 1000;
    ec.output_dir = dir.path().to_path_buf();
    run_experiment(&ec).map_err(err)?;
    let (_, cells) = load_run(dir.path()).map_err(err)?;
    let recs = records(&cells[0].1)?;
    let mut qualifying = 0;
    for rec in &recs {
        let disclosed: Vec<f64> =
            (0..10).filter(|&i| rec.signals[i].is_exact()).map(|i| rec.valuations[i].get()).collect();
        ensure!(disclosed.len() == 2, "round {}: {} disclosed", rec.round_index, disclosed.len());
        if disclosed.iter().any(|&v| v >= 0.75) {
            continue;
        }
        qualifying += 1;
        let pooled: Vec<f64> =
            rec.responses.iter().filter(|r| !rec.signals[r.bidder.index()].is_exact()).map(|r| r.bid).collect();
        ensure!(pooled.len() == 8, "round {}: {} pooled", rec.round_index, pooled.len());
        ensure!(pooled.iter().all(|&b| b == 0.75), "round {}: pooled bids {pooled:?}", rec.round_index);
        ensure!(rec.outcome.price == 0.75, "round {}: revenue {}", rec.round_index, rec.outcome.price);
    }
    ensure!(qualifying > 0, "no qualifying rounds");
    Ok(format!("{qualifying}/1000 qualifying rounds, all with revenue 0.75 and eight pooled bids of 0.75"))
}

fn criterion_5() -> Outcome {
    let mut rng = SimRng::from_seed(SEED);
    let mut mismatches = 0;
    let mut with_ties = 0;
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    for i in 0..10_000 {
        let n = 2 + rng.below(11);
        let bids: Vec<f64> = (0..n)
            .map(|_| match i % 3 {
                0 => rng.next_f64(),
                1 => levels[rng.below(levels.len())],
                _ => 0.5,
            })
            .collect();
        // Brute force: sort descending by bid, ties by ascending id.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| bids[b].total_cmp(&bids[a]).then(a.cmp(&b)));
        let (winner, price) = (order[0], bids[order[1]]);
        let top: Vec<usize> = (0..n).filter(|&j| bids[j] == bids[order[0]]).collect();
        if top.len() > 1 {
            with_ties += 1;
        }

        // Feed the pairs in a shuffled order.
        let mut pairs: Vec<(BidderId, f64)> = bids.iter().enumerate().map(|(j, &b)| (BidderId(j), b)).collect();
        for j in (1..pairs.len()).rev() {
            pairs.swap(j, rng.below(j + 1));
        }
        let lowest = run_second_price(&pairs, TieRule::LowestIndex, &mut SimRng::from_seed(i)).map_err(err)?;
        if lowest.winner != BidderId(winner) || lowest.price != price || lowest.winning_bid != bids[winner] {
            mismatches += 1;
        }
        let random = run_second_price(&pairs, TieRule::SeededRandom, &mut SimRng::from_seed(i)).map_err(err)?;
        if !top.contains(&random.winner.index()) || random.price != price {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    Ok(format!("10000 vectors ({with_ties} with tied top bids), both tie rules, 0 mismatches"))
}

fn criterion_6() -> Outcome {
    let backends =
        vec![AgentBackend::OracleTruthful, AgentBackend::scripted(), AgentBackend::RationalBayes(Default::default())];
    let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
    let mut manifests = Vec::new();
    for dir in &dirs {
        let mut ec = ExperimentConfig::paper_default(SEED, backends.clone());
        ec.output_dir = dir.path().to_path_buf();
        let mut m = run_experiment(&ec).map_err(err)?;
        m.config.output_dir = "out".into();
        manifests.push(m);
    }
    ensure!(manifests[0] == manifests[1], "manifests differ");
    let cells = &manifests[0].cells;
    ensure!(cells.len() == 63, "{} cells", cells.len());
    let mut files: Vec<String> = cells.iter().map(|c| c.file.clone()).collect();
    files.push("summary.csv".into());
    for f in &files {
        let a = fs::read(dirs[0].path().join(f)).map_err(err)?;
        let b = fs::read(dirs[1].path().join(f)).map_err(err)?;
        ensure!(a == b, "{f} differs between runs");
    }
    Ok(format!("21 cells x 3 analytic backends x 100 rounds, {} files byte-identical", files.len()))
}

fn criterion_7() -> Outcome {
    // Formula vs. the definition: mean of the j-th order statistic is j/(n+1).
    let mut checked = 0;
    for n in 2..=20usize {
        for k in 1..n {
            let top: f64 = ((n - k + 1)..=n).map(|j| j as f64 / (n + 1) as f64).sum::<f64>() / k as f64;
            let bottom: f64 = (1..=k).map(|j| j as f64 / (n + 1) as f64).sum::<f64>() / k as f64;
            let high = rational_tier_estimate(disclosure_sim::TierLevel::High, n, k);
            let low = rational_tier_estimate(disclosure_sim::TierLevel::Low, n, k);
            let f_high = (2 * n - k + 1) as f64 / (2 * (n + 1)) as f64;
            let f_low = (k + 1) as f64 / (2 * (n + 1)) as f64;
            ensure!((high - f_high).abs() < 1e-12 && (high - top).abs() < 1e-12, "high n={n} k={k}: {high}");
            ensure!((low - f_low).abs() < 1e-12 && (low - bottom).abs() < 1e-12, "low n={n} k={k}: {low}");
            checked += 1;
        }
    }

    // Monte Carlo: mean true value of pooled bidders under the signaling
    // module, and the backend's bid on the matching signal.
    let n = 10;
    let samples = 100_000;
    let ctx = PublicContext::new(n, ValuePrior::default());
    let mut worst: f64 = 0.0;
    for d in [0.2, 0.4, 0.6, 0.8] {
        for family in [StrategyFamily::PoolHigh, StrategyFamily::PoolLow] {
            let strategy = DisclosureStrategy::new(family, d, PooledInfo::TierOnly).map_err(err)?;
            let k = strategy.pooled_count(n);
            let mut rng = SimRng::from_seed(SEED ^ k as u64);
            let (mut sum, mut count) = (0.0, 0u64);
            let mut tier_signal = None;
            for _ in 0..samples {
                let v = disclosure_sim::sample_valuations(&ValuePrior::default(), n, &mut rng).map_err(err)?;
                let a = assign_signals(&strategy, &v, &mut rng).map_err(err)?;
                for b in &a.pooled {
                    sum += v[b.index()].get();
                    count += 1;
                }
                tier_signal.get_or_insert(a.signals[a.pooled[0].index()]);
            }
            let mc = sum / count as f64;
            let backend = AgentBackend::rational(n, k);
            let signal = tier_signal.unwrap();
            let req = BidRequest {
                bidder: BidderId(0),
                signal: &signal,
                ctx: &ctx,
                true_value: Valuation::new(0.5).map_err(err)?,
                seed: 0,
            };
            let bid = decide(&backend, &req).map_err(err)?.bid;
            let level = match signal {
                Signal::Tier { level, .. } => level,
                other => return Err(format!("pooled bidder got {other:?}")),
            };
            let formula = rational_tier_estimate(level, n, k);
            ensure!((bid - formula).abs() < 1e-12, "{family:?} k={k}: bid {bid} vs {formula}");
            ensure!((mc - formula).abs() <= 0.01, "{family:?} k={k}: monte carlo {mc} vs {formula}");
            worst = worst.max((mc - formula).abs());
        }
    }
    Ok(format!("{checked} (n,k) pairs exact to 1e-12; n=10 k in {{2,4,6,8}} both tiers, max MC gap {worst:.4}"))
}

fn stub_llm_config(stub: &StubServer) -> LlmConfig {
    LlmConfig {
        base_url: stub.base_url(),
        model_name: "stub".into(),
        api_key_env: "DSIM_ACCEPTANCE_KEY".into(),
        backoff_base_ms: 1,
        request_timeout_secs: 10.0,
        ..LlmConfig::default()
    }
}

fn criterion_8() -> Outcome {
    // End-to-end through the binary, key supplied via the environment.
    let stub = StubServer::start("127.0.0.1:0", StubMode::Scripted).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg_path = dir.path().join("llm.toml");
    let out = dir.path().join("out");
    fs::write(
        &cfg_path,
        format!(
            r#"schema_version = 1
experiment_seed = {SEED}
rounds_per_config = 5
backends = [{{ kind = "llm" }}]

[[strategies]]
family = "pool_high"
disclosure_fractions = [0.2]
pooled_info = ["tier_only"]

[llm]
model_name = "stub"
api_key_env = "DSIM_ACCEPTANCE_KEY"
backoff_base_ms = 1
"#
        ),
    )
    .map_err(err)?;
    let status = Command::new(env!("CARGO_BIN_EXE_disclosure-sim"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(["--base-url", &stub.base_url()])
        .env("DSIM_ACCEPTANCE_KEY", "stub-key")
        .output()
        .map_err(err)?;
    ensure!(status.status.success(), "run exited {:?}: {}", status.status, String::from_utf8_lossy(&status.stderr));
    let (manifest, cells) = load_run(&out).map_err(err)?;
    ensure!(!serde_json::to_string(&manifest).map_err(err)?.contains("stub-key"), "key leaked into manifest");
    let recs = records(&cells[0].1)?;
    ensure!(recs.len() == 5, "{} rounds", recs.len());
    for rec in &recs {
        ensure!(rec.transcripts.len() == 10, "round {}: {} transcripts", rec.round_index, rec.transcripts.len());
        for r in &rec.responses {
            if !rec.signals[r.bidder.index()].is_exact() {
                ensure!(r.bid == 0.75, "round {}: pooled bid {}", rec.round_index, r.bid);
            }
        }
    }
    let requests = stub.request_count();
    drop(stub);

    let ctx = PublicContext::new(10, ValuePrior::default());
    let signal = Signal::Exact { value: Valuation::new(0.42).map_err(err)? };

    // Two malformed answers, then a valid one.
    let stub = StubServer::start("127.0.0.1:0", StubMode::Malformed { fail_first: 2 }).map_err(err)?;
    let client = LlmClient::with_api_key(stub_llm_config(&stub), "stub-key".into()).map_err(err)?;
    let d = client.llm_decide(&ctx, &signal, BidderId(3)).map_err(|f| err(f.cause))?;
    let last = d.transcript.last().map(|t| t.attempt);
    ensure!(last == Some(3) && d.transcript.len() == 3, "succeeded at attempt {last:?}");
    ensure!(d.response.bid == 0.42, "bid {}", d.response.bid);
    drop(stub);

    // Out-of-range bids only: the round fails with a recorded cause.
    let stub = StubServer::start("127.0.0.1:0", StubMode::OutOfRange).map_err(err)?;
    let cfg = stub_llm_config(&stub);
    let max_retries = cfg.max_retries;
    let client = LlmClient::with_api_key(cfg, "stub-key".into()).map_err(err)?;
    let rc = RoundConfig::new("out_of_range", 0, 10, DisclosureStrategy::full_disclosure(), AgentBackend::Llm, SEED);
    let entry = run_round(&rc, &client).map_err(err)?;
    let RoundEntry::Failed(f) = entry else {
        return Err("out-of-range round did not fail".into());
    };
    let attempts = f.transcripts.iter().find(|t| Some(t.bidder) == f.bidder).map(|t| t.attempts.len());
    ensure!(attempts == Some(max_retries as usize + 1), "failing bidder made {attempts:?} attempts");
    ensure!(f.cause.contains("outside") || f.cause.contains("range"), "cause: {}", f.cause);
    Ok(format!(
        "5-round run ok ({requests} stub requests); malformed x2 then valid at attempt 3; \
         out-of-range failed after {} attempts: {}",
        max_retries + 1,
        f.cause
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("analytic revenue/welfare", criterion_1),
        ("truthfulness under full and randomized disclosure", criterion_2),
        ("pool-low matches full disclosure", criterion_3),
        ("pool-high tier-only constant", criterion_4),
        ("mechanism oracle", criterion_5),
        ("determinism", criterion_6),
        ("rational tier estimates", criterion_7),
        ("llm path offline", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("acceptance {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {} ({name}): FAIL - {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
