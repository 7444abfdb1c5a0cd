//! One auction round, phase by phase.
//!
//! 1. context initialisation: draw valuations
//! 2. information disclosure: assign private signals
//! 3. signal reception and
//! 4. bid generation: one agent call per bidder returns both the value
//!    estimate and the bid
//! 5. bid collection and auction execution
//! 6. outcome announcement: winner and price go into the record
//!
//! All signals exist before the first agent call and no agent sees another
//! bidder's signal or bid. The announcement feeds nothing downstream.

use std::thread;

use crate::agents::{AgentBackend, AgentFailure, BidRequest, Bidder, Decision, PublicContext};
use crate::auction::{run_second_price, TieRule};
use crate::error::{Error, Result};
use crate::model::{
    sample_valuations, AgentTranscript, Announcement, BidderId, DisclosureStrategy, FailedRound, Phase, RoundEntry,
    RoundRecord, ValuePrior,
};
use crate::rng::{derive_seed, stable_hash, HashPart, SimRng};
use crate::signaling::assign_signals;

#[derive(Clone, Debug, PartialEq)]
pub struct RoundConfig {
    pub config_id: String,
    pub round_index: u64,
    pub n_bidders: usize,
    pub prior: ValuePrior,
    pub strategy: DisclosureStrategy,
    pub tie_rule: TieRule,
    pub backend: AgentBackend,
    /// Root of every random stream in the round except the valuation draw.
    pub round_seed: u64,
    /// Seed of the valuation draw. Equal to a derivation of `round_seed`
    /// unless common random numbers are in use.
    pub valuation_seed: u64,
}

impl RoundConfig {
    /// Round config with valuations derived from the round seed.
    pub fn new(
        config_id: impl Into<String>,
        round_index: u64,
        n_bidders: usize,
        strategy: DisclosureStrategy,
        backend: AgentBackend,
        round_seed: u64,
    ) -> Self {
        RoundConfig {
            config_id: config_id.into(),
            round_index,
            n_bidders,
            prior: ValuePrior::default(),
            strategy,
            tie_rule: TieRule::default(),
            backend,
            round_seed,
            valuation_seed: derive_seed(round_seed, "valuations"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bidders < 2 {
            return Err(Error::config(format!("n_bidders must be at least 2, got {}", self.n_bidders)));
        }
        self.strategy.validate()?;
        self.backend.validate()
    }

    fn agent_seed(&self, bidder: BidderId) -> u64 {
        stable_hash(&[HashPart::U64(self.round_seed), HashPart::Str("agent"), HashPart::U64(bidder.index() as u64)])
    }
}

fn failed(
    rc: &RoundConfig,
    phase: Phase,
    bidder: Option<BidderId>,
    cause: &Error,
    transcripts: Vec<AgentTranscript>,
) -> RoundEntry {
    log::warn!("{} round {}: failed in {phase:?}: {cause}", rc.config_id, rc.round_index);
    RoundEntry::Failed(FailedRound {
        round_index: rc.round_index,
        config_id: rc.config_id.clone(),
        seed: rc.round_seed,
        phase,
        bidder,
        cause: cause.to_string(),
        transcripts,
    })
}

/// Runs one round with `agent` deciding for every bidder.
///
/// Configuration problems are returned as errors before phase 1. Agent or
/// mechanism failures produce a [`RoundEntry::Failed`] with no outcome.
pub fn run_round(rc: &RoundConfig, agent: &dyn Bidder) -> Result<RoundEntry> {
    rc.validate()?;
    let n = rc.n_bidders;
    let ctx = PublicContext::new(n, rc.prior);

    // 1. context initialisation
    let valuations = sample_valuations(&rc.prior, n, &mut SimRng::from_seed(rc.valuation_seed))?;

    // 2. information disclosure
    let mut signal_rng = SimRng::from_seed(derive_seed(rc.round_seed, "signals"));
    let signals = assign_signals(&rc.strategy, &valuations, &mut signal_rng)?.signals;

    // 3 + 4. belief update and bid generation
    let requests: Vec<BidRequest<'_>> = (0..n)
        .map(|i| {
            let bidder = BidderId(i);
            BidRequest {
                bidder,
                signal: &signals[i],
                ctx: &ctx,
                true_value: valuations[i],
                seed: rc.agent_seed(bidder),
            }
        })
        .collect();
    let results: Vec<std::result::Result<Decision, AgentFailure>> = if agent.concurrent() {
        thread::scope(|s| {
            let handles: Vec<_> = requests.iter().map(|r| s.spawn(move || agent.decide(r))).collect();
            handles.into_iter().map(|h| h.join().expect("bidder thread panicked")).collect()
        })
    } else {
        requests.iter().map(|r| agent.decide(r)).collect()
    };

    let mut responses = Vec::with_capacity(n);
    let mut transcripts = Vec::new();
    let mut first_failure: Option<(BidderId, Error)> = None;
    for (i, result) in results.into_iter().enumerate() {
        let bidder = BidderId(i);
        let (transcript, outcome) = match result {
            Ok(d) => (d.transcript, Ok(d.response)),
            Err(f) => (f.transcript, Err(f.cause)),
        };
        if !transcript.is_empty() {
            transcripts.push(AgentTranscript { bidder, attempts: transcript });
        }
        match outcome {
            Ok(mut response) => {
                response.bidder = bidder;
                responses.push(response);
            }
            Err(cause) if first_failure.is_none() => first_failure = Some((bidder, cause)),
            Err(_) => {}
        }
    }
    if let Some((bidder, cause)) = first_failure {
        return Ok(failed(rc, Phase::BidGeneration, Some(bidder), &cause, transcripts));
    }

    // 5. bid collection and auction execution
    let bids: Vec<(BidderId, f64)> = responses.iter().map(|r| (r.bidder, r.bid)).collect();
    let mut tie_rng = SimRng::from_seed(derive_seed(rc.round_seed, "ties"));
    let outcome = match run_second_price(&bids, rc.tie_rule, &mut tie_rng) {
        Ok(o) => o,
        Err(e) => return Ok(failed(rc, Phase::AuctionExecution, None, &e, transcripts)),
    };

    // 6. outcome announcement
    let announcement = Announcement { winner: outcome.winner, price: outcome.price };

    Ok(RoundEntry::Ok(RoundRecord {
        round_index: rc.round_index,
        config_id: rc.config_id.clone(),
        seed: rc.round_seed,
        valuations,
        signals,
        responses,
        outcome,
        announcement,
        transcripts,
    }))
}
