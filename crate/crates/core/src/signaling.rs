//! Signaling maps that turn a round's valuation vector into private signals,
//! and the message templates bidders see.
//!
//! Tiered strategies use empirical rank quantiles: exactly
//! [`DisclosureStrategy::disclosed_count`] bidders learn their value each
//! round. Rank ties are broken by ascending bidder id, a lower id counting as
//! the lower rank.

use serde::Serialize;

use crate::error::Result;
use crate::model::{BidderId, DisclosureStrategy, Signal, StrategyFamily, TierLevel, Valuation};
use crate::rng::SimRng;

/// The fixed message table. The text is part of the public contract; bump
/// [`templates::VERSION`] on any change.
pub mod templates {
    pub const VERSION: u32 = 1;

    /// Placeholders: `{lo}`, `{hi}`, `{n}`.
    pub const PUBLIC_PREAMBLE: &str = "You are a rational bidder in a second-price auction. \
The auction is one-time: you submit the bid and will receive the results. \
As a prior, you don't know your true value towards the current item. \
You only know your true-value falls between [{lo}, {hi}]. \
Auctioneer may give you more information. \
The value of the item for each bidder is independently drawn from a uniform distribution over [{lo}, {hi}] \
and the auction will consist of {n} bidders, including you. \
This is common knowledge to all bidders. \
However, your exact value is private and known only to you, based on signals or disclosed information provided by the auctioneer.";

    /// Placeholder: `{value}`.
    pub const EXACT: &str = "Your true value towards this current auctioned item is {value}";

    /// Placeholder: `{level}` (`high` or `low`), substituted literally.
    pub const TIER: &str = "Your true value towards this current auctioned item is not disclosed \
due to your value is being in the {level} value tier. \
This indicates your value towards this item is {level}er than some of other bidders, \
but the exact value will remain unknown.";

    /// Appended to [`TIER`] after a space. Placeholder: `{avg}`.
    pub const TIER_AVERAGE: &str = "The average value of all bidders in the same tier with you is {avg}";

    pub const NO_INFO: &str = "You have no information about your true value.";

    pub const BIDDING_INSTRUCTION: &str = "Based on this information, submit a bid between 0 and 1, \
and provide the following details in your response: \
name: your name as a bidder. \
bid: Your bid for this round (a value between 0 and 1). \
estimated value: Your estimate of your true value based on the information received. \
explanation: A brief explanation of how you decided at your bid. \
Please return your response in the provided format";

    /// Format appended to the bidding instruction so responses can be parsed.
    pub const RESPONSE_FORMAT: &str = "Format: a single JSON object with the keys \
\"name\" (string), \"bid\" (number), \"estimated value\" (number) and \"explanation\" (string).";
}

/// Per-round signals plus the partition of bidders they induce.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalAssignment {
    pub signals: Vec<Signal>,
    pub disclosed: Vec<BidderId>,
    pub pooled: Vec<BidderId>,
}

/// Applies the strategy's signaling map to one round.
///
/// `rng` is consumed only by the randomized family: exactly one draw per
/// bidder, in bidder-id order.
pub fn assign_signals(
    strategy: &DisclosureStrategy,
    valuations: &[Valuation],
    rng: &mut SimRng,
) -> Result<SignalAssignment> {
    strategy.validate()?;
    let n = valuations.len();
    if n < 2 {
        return Err(crate::Error::config(format!("need at least 2 bidders, got {n}")));
    }
    let exact = |i: usize| Signal::Exact { value: valuations[i] };

    let mut disclosed_flags = vec![false; n];
    let mut signals: Vec<Signal> = match strategy.family {
        StrategyFamily::FullDisclosure => {
            disclosed_flags.fill(true);
            (0..n).map(exact).collect()
        }
        StrategyFamily::Randomized => (0..n)
            .map(|i| {
                if rng.bernoulli(strategy.disclosure_fraction) {
                    disclosed_flags[i] = true;
                    exact(i)
                } else {
                    Signal::NoInfo
                }
            })
            .collect(),
        family @ (StrategyFamily::PoolHigh | StrategyFamily::PoolLow) => {
            let k = strategy.disclosed_count(n);
            // Ascending rank; equal values fall back to bidder id.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| valuations[a].get().total_cmp(&valuations[b].get()).then(a.cmp(&b)));
            let revealed = match family {
                StrategyFamily::PoolHigh => &order[..k],
                _ => &order[n - k..],
            };
            for &i in revealed {
                disclosed_flags[i] = true;
            }
            vec![Signal::NoInfo; n]
        }
    };

    if strategy.family.is_tiered() {
        let level = match strategy.family {
            StrategyFamily::PoolHigh => TierLevel::High,
            _ => TierLevel::Low,
        };
        let pooled: Vec<usize> = (0..n).filter(|&i| !disclosed_flags[i]).collect();
        let tier_average = match strategy.pooled_info {
            crate::model::PooledInfo::TierWithAverage if !pooled.is_empty() => {
                let sum: f64 = pooled.iter().map(|&i| valuations[i].get()).sum();
                // Mean of values in [0, 1] stays in [0, 1] up to rounding.
                Some(Valuation::new((sum / pooled.len() as f64).clamp(0.0, 1.0))?)
            }
            _ => None,
        };
        for i in 0..n {
            signals[i] = if disclosed_flags[i] { exact(i) } else { Signal::Tier { level, tier_average } };
        }
    }

    let (disclosed, pooled): (Vec<BidderId>, Vec<BidderId>) =
        (0..n).map(BidderId).partition(|b| disclosed_flags[b.index()]);
    Ok(SignalAssignment { signals, disclosed, pooled })
}

/// Private message for a signal. Strategy parameters are never included.
pub fn render_private_message(signal: &Signal) -> String {
    match signal {
        Signal::Exact { value } => templates::EXACT.replace("{value}", &value.to_string()),
        Signal::Tier { level, tier_average } => {
            let tier = templates::TIER.replace("{level}", level.as_str());
            match tier_average {
                Some(avg) => format!("{tier} {}", templates::TIER_AVERAGE.replace("{avg}", &avg.to_string())),
                None => tier,
            }
        }
        Signal::NoInfo => templates::NO_INFO.to_string(),
    }
}

/// Inverse of [`render_private_message`], used by the stub endpoint to answer
/// prompts. Returns `None` for text that is not a rendered private message.
pub fn interpret_private_message(text: &str) -> Option<Signal> {
    let text = text.trim();
    if text == templates::NO_INFO {
        return Some(Signal::NoInfo);
    }
    for level in [TierLevel::High, TierLevel::Low] {
        let tier = templates::TIER.replace("{level}", level.as_str());
        if let Some(rest) = text.strip_prefix(tier.as_str()) {
            let rest = rest.trim();
            if rest.is_empty() {
                return Some(Signal::Tier { level, tier_average: None });
            }
            let avg_prefix = templates::TIER_AVERAGE.replace("{avg}", "");
            let avg = rest.strip_prefix(avg_prefix.as_str())?.trim().parse().ok()?;
            return Some(Signal::Tier { level, tier_average: Some(Valuation::new(avg).ok()?) });
        }
    }
    let exact_prefix = templates::EXACT.replace("{value}", "");
    let value: f64 = text.strip_prefix(exact_prefix.as_str())?.trim().parse().ok()?;
    Some(Signal::Exact { value: Valuation::new(value).ok()? })
}
