//! Bidder decision-making.
//!
//! Every backend turns `(signal, public context)` into a [`BidResponse`] in
//! one call: the value estimate and the bid are produced together and kept as
//! separate fields. The three analytic backends live here; the LLM backend is
//! in [`crate::llm`] and plugs in through the [`Bidder`] trait.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{LlmClient, RawLlmResponse};
use crate::model::{BidResponse, BidderId, DisclosureStrategy, Signal, TierLevel, Valuation, ValuePrior};
use crate::rng::SimRng;

pub const AUCTION_TYPE: &str = "sealed-bid second-price";

/// Information every bidder shares: the mechanism, the number of bidders and
/// the valuation prior. The signaling map is not part of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicContext {
    pub n_bidders: usize,
    pub auction_type: String,
    pub prior: ValuePrior,
}

impl PublicContext {
    pub fn new(n_bidders: usize, prior: ValuePrior) -> Self {
        PublicContext { n_bidders, auction_type: AUCTION_TYPE.to_string(), prior }
    }
}

/// Bid constants used by [`AgentBackend::ScriptedPaper`].
///
/// Defaults reproduce recorded LLM behaviour: tier-only high bidders bid 0.75
/// (the mean of uniform `[0.5, 1]`), uninformed bidders bid the prior mean 0.5.
/// The low-tier constant 0.25 is the symmetric counterpart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedParams {
    #[serde(default = "default_high_tier")]
    pub high_tier_bid: f64,
    #[serde(default = "default_low_tier")]
    pub low_tier_bid: f64,
    #[serde(default = "default_no_info")]
    pub no_info_bid: f64,
    /// Optional deviation from truthful bidding on tier signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<Deviation>,
}

fn default_high_tier() -> f64 {
    0.75
}
fn default_low_tier() -> f64 {
    0.25
}
fn default_no_info() -> f64 {
    0.5
}

impl Default for ScriptedParams {
    fn default() -> Self {
        ScriptedParams {
            high_tier_bid: default_high_tier(),
            low_tier_bid: default_low_tier(),
            no_info_bid: default_no_info(),
            deviation: None,
        }
    }
}

/// With probability `probability`, a bidder holding a tier signal shifts its
/// bid by `delta` away from its estimate: down in the high tier, up in the low
/// tier. Bids are clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deviation {
    pub delta: f64,
    pub probability: f64,
}

/// What a rational bidder is assumed to know about the signaling map: the
/// number of bidders and how many of them are pooled each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolKnowledge {
    pub n_bidders: usize,
    pub pooled_count: usize,
}

/// Parameters of [`AgentBackend::RationalBayes`]. `knowledge` is filled in from
/// the cell's strategy when the experiment runner builds the agent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalBayesParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<PoolKnowledge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentBackend {
    /// Bids the true valuation, ignoring the signal. A benchmark only.
    OracleTruthful,
    /// Deterministic replay of documented LLM bidding behaviour.
    ScriptedPaper(ScriptedParams),
    /// Posterior-mean bidder that knows the strategy family and pool size.
    /// An analytic yardstick: real bidders are not told the signaling map.
    RationalBayes(RationalBayesParams),
    /// Chat-completions backed bidder; configured by the experiment's `llm`
    /// section.
    Llm,
}

impl AgentBackend {
    pub fn scripted() -> Self {
        AgentBackend::ScriptedPaper(ScriptedParams::default())
    }

    pub fn rational(n_bidders: usize, pooled_count: usize) -> Self {
        AgentBackend::RationalBayes(RationalBayesParams { knowledge: Some(PoolKnowledge { n_bidders, pooled_count }) })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentBackend::OracleTruthful => "oracle_truthful",
            AgentBackend::ScriptedPaper(_) => "scripted_paper",
            AgentBackend::RationalBayes(_) => "rational_bayes",
            AgentBackend::Llm => "llm",
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, AgentBackend::Llm)
    }

    pub fn validate(&self) -> Result<()> {
        if let AgentBackend::ScriptedPaper(p) = self {
            for (key, v) in
                [("high_tier_bid", p.high_tier_bid), ("low_tier_bid", p.low_tier_bid), ("no_info_bid", p.no_info_bid)]
            {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("scripted_paper.{key} = {v} outside [0, 1]")));
                }
            }
            if let Some(d) = p.deviation {
                if !(0.0..=1.0).contains(&d.probability) || !(0.0..=1.0).contains(&d.delta) {
                    return Err(Error::config("scripted_paper.deviation: delta and probability must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Copy of this backend with strategy knowledge attached (RationalBayes
    /// only; other backends are returned unchanged).
    pub fn informed_by(&self, strategy: &DisclosureStrategy, n_bidders: usize) -> Self {
        match self {
            AgentBackend::RationalBayes(_) => AgentBackend::rational(n_bidders, strategy.pooled_count(n_bidders)),
            other => other.clone(),
        }
    }
}

/// Posterior mean of a pooled bidder's value under a uniform `[0, 1]` prior,
/// when the `k` highest (or lowest) of `n` values are pooled: the average of
/// the order-statistic means `j / (n + 1)` over the pooled ranks.
pub fn rational_tier_estimate(level: TierLevel, n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    match level {
        TierLevel::High => (2.0 * n - k + 1.0) / (2.0 * (n + 1.0)),
        TierLevel::Low => (k + 1.0) / (2.0 * (n + 1.0)),
    }
}

/// Everything a bidder may use for one decision.
#[derive(Clone, Copy, Debug)]
pub struct BidRequest<'a> {
    pub bidder: BidderId,
    pub signal: &'a Signal,
    pub ctx: &'a PublicContext,
    /// Read only by `OracleTruthful`.
    pub true_value: Valuation,
    /// Seed of this bidder's private random stream for the round.
    pub seed: u64,
}

/// Decision of an analytic backend.
pub fn decide(backend: &AgentBackend, req: &BidRequest<'_>) -> Result<BidResponse> {
    let (estimate, bid, explanation) = match backend {
        AgentBackend::OracleTruthful => {
            let v = req.true_value.get();
            (v, v, format!("Oracle benchmark: my true value is {v}, so I bid it."))
        }
        AgentBackend::ScriptedPaper(params) => scripted(params, req),
        AgentBackend::RationalBayes(params) => {
            let estimate = match *req.signal {
                Signal::Exact { value } => value.get(),
                Signal::Tier { tier_average: Some(avg), .. } => avg.get(),
                Signal::Tier { level, tier_average: None } => {
                    let k = params.knowledge.ok_or_else(|| {
                        Error::config("rational_bayes needs pool knowledge (n_bidders, pooled_count)")
                    })?;
                    if k.pooled_count == 0 || k.pooled_count > k.n_bidders {
                        return Err(Error::config(format!(
                            "rational_bayes: pooled_count {} invalid for {} bidders",
                            k.pooled_count, k.n_bidders
                        )));
                    }
                    let p = req.ctx.prior;
                    p.lo() + (p.hi() - p.lo()) * rational_tier_estimate(level, k.n_bidders, k.pooled_count)
                }
                Signal::NoInfo => req.ctx.prior.mean(),
            };
            (
                estimate,
                estimate,
                format!("Posterior mean of my value given the signal is {estimate}; truthful bidding is dominant."),
            )
        }
        AgentBackend::Llm => {
            return Err(Error::config("the llm backend needs a client; use Agent::Llm"));
        }
    };
    BidResponse::new(req.bidder, bid, estimate, explanation)
}

fn scripted(params: &ScriptedParams, req: &BidRequest<'_>) -> (f64, f64, String) {
    let estimate = match *req.signal {
        Signal::Exact { value } => {
            let v = value.get();
            return (v, v, format!("Given my true value is {v}, I will bid exactly this amount."));
        }
        Signal::NoInfo => {
            let v = params.no_info_bid;
            return (
                v,
                v,
                format!("Without specific information about my true value, I assume the midpoint {v} and bid it."),
            );
        }
        Signal::Tier { tier_average: Some(avg), .. } => avg.get(),
        Signal::Tier { level: TierLevel::High, tier_average: None } => params.high_tier_bid,
        Signal::Tier { level: TierLevel::Low, tier_average: None } => params.low_tier_bid,
    };
    let Signal::Tier { level, .. } = *req.signal else { unreachable!() };
    let mut bid = estimate;
    if let Some(dev) = params.deviation {
        let mut rng = SimRng::from_seed(req.seed);
        if rng.bernoulli(dev.probability) {
            bid = match level {
                TierLevel::High => estimate - dev.delta,
                TierLevel::Low => estimate + dev.delta,
            }
            .clamp(0.0, 1.0);
        }
    }
    (
        estimate,
        bid,
        format!("My value is in the {} value tier; I estimate it at {estimate} and bid {bid}.", level.as_str()),
    )
}

/// A failed decision with whatever raw exchanges preceded the failure.
#[derive(Debug)]
pub struct AgentFailure {
    pub cause: Error,
    pub transcript: Vec<RawLlmResponse>,
}

/// Successful decision plus the raw exchanges behind it (empty for analytic
/// backends).
#[derive(Clone, Debug)]
pub struct Decision {
    pub response: BidResponse,
    pub transcript: Vec<RawLlmResponse>,
}

/// Uniform decision contract over all backends.
pub trait Bidder: Send + Sync {
    fn decide(&self, req: &BidRequest<'_>) -> std::result::Result<Decision, AgentFailure>;

    /// Whether the n decisions of a round should be issued concurrently.
    fn concurrent(&self) -> bool {
        false
    }
}

/// Runtime agent for one grid cell.
#[derive(Clone)]
pub enum Agent {
    Analytic(AgentBackend),
    Llm(Arc<LlmClient>),
}

impl Agent {
    /// Builds the agent for a cell. `llm` must be provided for the LLM backend.
    pub fn for_cell(
        backend: &AgentBackend,
        strategy: &DisclosureStrategy,
        n_bidders: usize,
        llm: Option<Arc<LlmClient>>,
    ) -> Result<Self> {
        match backend {
            AgentBackend::Llm => {
                llm.map(Agent::Llm).ok_or_else(|| Error::config("llm backend selected but no LLM client configured"))
            }
            other => {
                other.validate()?;
                Ok(Agent::Analytic(other.informed_by(strategy, n_bidders)))
            }
        }
    }
}

impl Bidder for Agent {
    fn decide(&self, req: &BidRequest<'_>) -> std::result::Result<Decision, AgentFailure> {
        match self {
            Agent::Analytic(backend) => decide(backend, req)
                .map(|response| Decision { response, transcript: Vec::new() })
                .map_err(|cause| AgentFailure { cause, transcript: Vec::new() }),
            Agent::Llm(client) => client.decide(req),
        }
    }

    fn concurrent(&self) -> bool {
        matches!(self, Agent::Llm(_))
    }
}
