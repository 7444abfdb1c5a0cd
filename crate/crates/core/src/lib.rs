//! Deterministic simulation of information-disclosure strategies in sealed-bid
//! second-price auctions.
//!
//! A round proceeds through six phases: valuations are drawn, the auctioneer
//! assigns each bidder a private signal according to a [`DisclosureStrategy`],
//! bidder agents turn signals into sealed bids, and the mechanism clears at the
//! second-highest bid. Rounds are grouped into experiment grids whose records
//! are persisted as JSONL and summarised into revenue, welfare and
//! bid-deviation metrics.
//!
//! Bidder agents come in four flavours behind one contract:
//!
//! - `OracleTruthful` bids its true valuation (a benchmark that ignores signals),
//! - `ScriptedPaper` replays documented LLM bidding behaviour deterministically,
//! - `RationalBayes` bids the exact posterior mean given the strategy family,
//! - `Llm` queries an OpenAI-compatible chat-completions endpoint.

pub mod agents;
pub mod auction;
pub mod error;
pub mod experiment;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod signaling;

pub use agents::{AgentBackend, PublicContext, RationalBayesParams, ScriptedParams};
pub use auction::{run_second_price, TieRule};
pub use error::{Error, Result};
pub use experiment::{expand_grid, run_experiment, ExperimentConfig, GridCell, RunManifest};
pub use metrics::{aggregate, classify_bid, DeviationClass, MetricsSummary};
pub use model::{
    sample_valuations, AuctionOutcome, BidResponse, BidderId, DisclosureStrategy, PooledInfo, RoundEntry, RoundRecord,
    Signal, StrategyFamily, TierLevel, Valuation, ValuePrior,
};
pub use pipeline::{run_round, RoundConfig};
pub use rng::{stable_hash, SimRng};
pub use signaling::{assign_signals, render_private_message, SignalAssignment};
