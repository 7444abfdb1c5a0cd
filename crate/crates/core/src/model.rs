//! Domain types shared by every stage of a round, plus the valuation prior.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::RawLlmResponse;
use crate::rng::SimRng;

/// A bidder's utility for the item, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Valuation(f64);

impl Valuation {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Valuation(value))
        } else {
            Err(Error::Validation(format!("valuation {value} outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Valuation {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Valuation::new(value)
    }
}

impl From<Valuation> for f64 {
    fn from(v: Valuation) -> f64 {
        v.0
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Shortest representation that round-trips, e.g. 0.3568638462861372.
        write!(f, "{}", self.0)
    }
}

/// Uniform prior over `[lo, hi]` with `0 <= lo < hi <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct ValuePrior {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawPrior> for ValuePrior {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        ValuePrior::uniform(raw.lo, raw.hi)
    }
}

impl Default for ValuePrior {
    fn default() -> Self {
        ValuePrior { lo: 0.0, hi: 1.0 }
    }
}

impl ValuePrior {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 || lo >= hi {
            return Err(Error::config(format!("prior must satisfy 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")));
        }
        Ok(ValuePrior { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mean(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn draw(&self, rng: &mut SimRng) -> Valuation {
        let v = self.lo + (self.hi - self.lo) * rng.next_f64();
        // lo + (hi-lo)*u can round past hi only for hi < 1; clamp keeps the invariant.
        Valuation(v.clamp(self.lo, self.hi))
    }
}

/// Draws `n` i.i.d. valuations. Bidder ids follow draw order.
pub fn sample_valuations(prior: &ValuePrior, n: usize, rng: &mut SimRng) -> Result<Vec<Valuation>> {
    if n < 2 {
        return Err(Error::config(format!("need at least 2 bidders for a second price, got {n}")));
    }
    Ok((0..n).map(|_| prior.draw(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidderId(pub usize);

impl BidderId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for BidderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bidder_{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyFamily {
    FullDisclosure,
    PoolHigh,
    PoolLow,
    Randomized,
}

impl StrategyFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyFamily::FullDisclosure => "full_disclosure",
            StrategyFamily::PoolHigh => "pool_high",
            StrategyFamily::PoolLow => "pool_low",
            StrategyFamily::Randomized => "randomized",
        }
    }

    pub fn is_tiered(self) -> bool {
        matches!(self, StrategyFamily::PoolHigh | StrategyFamily::PoolLow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PooledInfo {
    TierOnly,
    TierWithAverage,
    NoInfo,
}

impl PooledInfo {
    pub fn as_str(self) -> &'static str {
        match self {
            PooledInfo::TierOnly => "tier_only",
            PooledInfo::TierWithAverage => "tier_with_average",
            PooledInfo::NoInfo => "no_info",
        }
    }
}

/// Configuration of the auctioneer's signaling map.
///
/// `disclosure_fraction` is the share of bidders who learn their exact value;
/// all families share it as their x-axis. Full disclosure is normalised to
/// `d = 1` with `NoInfo` pooled information.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisclosureStrategy {
    pub family: StrategyFamily,
    pub disclosure_fraction: f64,
    pub pooled_info: PooledInfo,
}

impl DisclosureStrategy {
    pub fn full_disclosure() -> Self {
        DisclosureStrategy {
            family: StrategyFamily::FullDisclosure,
            disclosure_fraction: 1.0,
            pooled_info: PooledInfo::NoInfo,
        }
    }

    pub fn pool_high(d: f64, pooled_info: PooledInfo) -> Result<Self> {
        Self::new(StrategyFamily::PoolHigh, d, pooled_info)
    }

    pub fn pool_low(d: f64, pooled_info: PooledInfo) -> Result<Self> {
        Self::new(StrategyFamily::PoolLow, d, pooled_info)
    }

    pub fn randomized(d: f64) -> Result<Self> {
        Self::new(StrategyFamily::Randomized, d, PooledInfo::NoInfo)
    }

    pub fn new(family: StrategyFamily, d: f64, pooled_info: PooledInfo) -> Result<Self> {
        if family == StrategyFamily::FullDisclosure {
            return Ok(Self::full_disclosure());
        }
        let s = DisclosureStrategy { family, disclosure_fraction: d, pooled_info };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.disclosure_fraction;
        if !(d.is_finite() && (0.0..=1.0).contains(&d)) {
            return Err(Error::config(format!("disclosure_fraction {d} outside [0, 1]")));
        }
        match (self.family, self.pooled_info) {
            (StrategyFamily::FullDisclosure, _) => Ok(()),
            (StrategyFamily::Randomized, PooledInfo::NoInfo) => Ok(()),
            (StrategyFamily::Randomized, p) => {
                Err(Error::config(format!("randomized pooling requires pooled_info = no_info, got {}", p.as_str())))
            }
            (_, PooledInfo::NoInfo) => Err(Error::config(format!(
                "{} requires pooled_info tier_only or tier_with_average",
                self.family.as_str()
            ))),
            _ => Ok(()),
        }
    }

    /// Number of bidders receiving their exact value under a tiered strategy:
    /// `d * n` rounded half-up. Full disclosure reveals everyone.
    ///
    /// A tolerance of 1e-9 absorbs representation error, so `0.35 * 10`
    /// (stored as 3.4999999999999996) still rounds up to 4.
    pub fn disclosed_count(&self, n: usize) -> usize {
        match self.family {
            StrategyFamily::FullDisclosure => n,
            _ => {
                let k = (self.disclosure_fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
                k.min(n)
            }
        }
    }

    /// Pooled bidders per round for tiered strategies.
    pub fn pooled_count(&self, n: usize) -> usize {
        n - self.disclosed_count(n)
    }

    /// Short human-readable slug, e.g. `pool_high_d0.2_tier_only`.
    pub fn slug(&self) -> String {
        match self.family {
            StrategyFamily::FullDisclosure => "full_disclosure".to_string(),
            StrategyFamily::Randomized => format!("randomized_d{}", self.disclosure_fraction),
            f => format!("{}_d{}_{}", f.as_str(), self.disclosure_fraction, self.pooled_info.as_str()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierLevel {
    High,
    Low,
}

impl TierLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            TierLevel::High => "high",
            TierLevel::Low => "low",
        }
    }
}

/// What one bidder learns about their valuation in a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Exact {
        value: Valuation,
    },
    Tier {
        level: TierLevel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tier_average: Option<Valuation>,
    },
    NoInfo,
}

impl Signal {
    pub fn is_exact(&self) -> bool {
        matches!(self, Signal::Exact { .. })
    }
}

/// A sealed bid together with the bidder's own value estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidResponse {
    pub bidder: BidderId,
    pub bid: f64,
    pub estimated_value: f64,
    pub explanation: String,
}

impl BidResponse {
    pub fn new(bidder: BidderId, bid: f64, estimated_value: f64, explanation: String) -> Result<Self> {
        check_unit("bid", bid)?;
        check_unit("estimated value", estimated_value)?;
        Ok(BidResponse { bidder, bid, estimated_value, explanation })
    }
}

pub(crate) fn check_unit(what: &str, x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} {x} outside [0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub winner: BidderId,
    /// Second-highest bid; equals `winning_bid` when the top bid is tied.
    pub price: f64,
    pub winning_bid: f64,
}

/// What the auctioneer announces publicly after clearing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub winner: BidderId,
    pub price: f64,
}

/// Raw exchanges with one LLM-backed bidder, in attempt order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub bidder: BidderId,
    pub attempts: Vec<RawLlmResponse>,
}

/// Full audit record of one successful round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u64,
    pub config_id: String,
    pub seed: u64,
    pub valuations: Vec<Valuation>,
    pub signals: Vec<Signal>,
    pub responses: Vec<BidResponse>,
    pub outcome: AuctionOutcome,
    pub announcement: Announcement,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<AgentTranscript>,
}

impl RoundRecord {
    pub fn n_bidders(&self) -> usize {
        self.valuations.len()
    }

    /// True valuation of the winning bidder.
    pub fn winner_value(&self) -> f64 {
        self.valuations[self.outcome.winner.index()].get()
    }

    /// Structural invariants: equal lengths, winner indexes the responses,
    /// winning bid matches the winner's response.
    pub fn check(&self) -> Result<()> {
        let n = self.valuations.len();
        if self.signals.len() != n || self.responses.len() != n {
            return Err(Error::Validation(format!(
                "round {}: lengths differ (valuations {n}, signals {}, responses {})",
                self.round_index,
                self.signals.len(),
                self.responses.len()
            )));
        }
        let w = self.outcome.winner.index();
        if w >= n || self.responses[w].bid != self.outcome.winning_bid {
            return Err(Error::Validation(format!("round {}: outcome does not match responses", self.round_index)));
        }
        if self.outcome.price > self.outcome.winning_bid {
            return Err(Error::Validation(format!("round {}: price exceeds winning bid", self.round_index)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ContextInitialization,
    InformationDisclosure,
    SignalReception,
    BidGeneration,
    AuctionExecution,
    OutcomeAnnouncement,
}

/// A round aborted by an unrecoverable failure. No outcome is recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedRound {
    pub round_index: u64,
    pub config_id: String,
    pub seed: u64,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bidder: Option<BidderId>,
    pub cause: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<AgentTranscript>,
}

/// One line of a cell's JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RoundEntry {
    Ok(RoundRecord),
    Failed(FailedRound),
}

impl RoundEntry {
    pub fn round_index(&self) -> u64 {
        match self {
            RoundEntry::Ok(r) => r.round_index,
            RoundEntry::Failed(f) => f.round_index,
        }
    }

    pub fn config_id(&self) -> &str {
        match self {
            RoundEntry::Ok(r) => &r.config_id,
            RoundEntry::Failed(f) => &f.config_id,
        }
    }

    pub fn record(&self) -> Option<&RoundRecord> {
        match self {
            RoundEntry::Ok(r) => Some(r),
            RoundEntry::Failed(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampling_is_reproducible() {
        let prior = ValuePrior::default();
        let a = sample_valuations(&prior, 10, &mut SimRng::from_seed(42)).unwrap();
        let b = sample_valuations(&prior, 10, &mut SimRng::from_seed(42)).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(&v.get())));
    }

    #[test]
    fn degenerate_prior_rejected() {
        assert!(matches!(ValuePrior::uniform(0.5, 0.5), Err(Error::Config(_))));
        assert!(ValuePrior::uniform(0.6, 0.5).is_err());
        assert!(ValuePrior::uniform(-0.1, 0.5).is_err());
        assert!(ValuePrior::uniform(0.0, 1.5).is_err());
    }

    #[test]
    fn fewer_than_two_bidders_rejected() {
        let prior = ValuePrior::default();
        assert!(matches!(sample_valuations(&prior, 1, &mut SimRng::from_seed(0)), Err(Error::Config(_))));
    }

    #[test]
    fn sample_mean_and_cdf_match_uniform() {
        let prior = ValuePrior::default();
        let n = 100_000;
        let mut v: Vec<f64> = sample_valuations(&prior, n, &mut SimRng::from_seed(2024))
            .unwrap()
            .into_iter()
            .map(Valuation::get)
            .collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");

        v.sort_by(f64::total_cmp);
        let sup = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "KS distance {sup}");
    }

    #[test]
    fn disclosed_count_rounds_half_up() {
        let counts: Vec<usize> = [0.2, 0.4, 0.6, 0.8]
            .iter()
            .map(|&d| DisclosureStrategy::pool_high(d, PooledInfo::TierOnly).unwrap().disclosed_count(10))
            .collect();
        assert_eq!(counts, vec![2, 4, 6, 8]);
        let s = DisclosureStrategy::pool_low(0.25, PooledInfo::TierOnly).unwrap();
        assert_eq!(s.disclosed_count(10), 3);
        let s = DisclosureStrategy::pool_low(0.35, PooledInfo::TierOnly).unwrap();
        assert_eq!(s.disclosed_count(10), 4);
        assert_eq!(DisclosureStrategy::full_disclosure().disclosed_count(7), 7);
    }

    #[test]
    fn strategy_combinations() {
        assert!(DisclosureStrategy::new(StrategyFamily::Randomized, 0.5, PooledInfo::TierOnly).is_err());
        assert!(DisclosureStrategy::new(StrategyFamily::PoolHigh, 0.5, PooledInfo::NoInfo).is_err());
        assert!(DisclosureStrategy::new(StrategyFamily::PoolLow, 1.2, PooledInfo::TierOnly).is_err());
        let full = DisclosureStrategy::new(StrategyFamily::FullDisclosure, 0.3, PooledInfo::TierOnly).unwrap();
        assert_eq!(full, DisclosureStrategy::full_disclosure());
    }

    #[test]
    fn valuation_rejects_out_of_range_on_deserialize() {
        assert!(serde_json::from_str::<Valuation>("1.5").is_err());
        assert!(serde_json::from_str::<Valuation>("0.25").is_ok());
    }

    proptest! {
        #[test]
        fn samples_stay_in_prior(lo in 0.0f64..0.9, width in 0.01f64..0.1, seed: u64, n in 2usize..50) {
            let prior = ValuePrior::uniform(lo, lo + width).unwrap();
            let vals = sample_valuations(&prior, n, &mut SimRng::from_seed(seed)).unwrap();
            prop_assert_eq!(vals.len(), n);
            for v in vals {
                prop_assert!(v.get() >= prior.lo() && v.get() <= prior.hi());
            }
        }

        #[test]
        fn valuation_json_round_trips(x in 0.0f64..=1.0) {
            let v = Valuation::new(x).unwrap();
            let s = serde_json::to_string(&v).unwrap();
            prop_assert_eq!(serde_json::from_str::<Valuation>(&s).unwrap().get().to_bits(), x.to_bits());
        }
    }
}
