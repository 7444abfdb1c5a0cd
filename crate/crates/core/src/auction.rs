//! Sealed-bid second-price auction without a reserve price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_unit, AuctionOutcome, BidderId};
use crate::rng::SimRng;

/// How a tie for the highest bid is resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// The tied bidder with the smallest id wins.
    #[default]
    LowestIndex,
    /// Uniform choice among tied bidders, ordered by id before drawing.
    SeededRandom,
}

/// Clears one auction. The winner pays the second-highest bid, which equals
/// the winning bid when the top bid is tied.
///
/// `rng` is consumed only when `SeededRandom` has to break a tie.
pub fn run_second_price(bids: &[(BidderId, f64)], tie_rule: TieRule, rng: &mut SimRng) -> Result<AuctionOutcome> {
    if bids.len() < 2 {
        return Err(Error::Mechanism(format!("second-price auction needs at least 2 bids, got {}", bids.len())));
    }
    for (bidder, bid) in bids {
        check_unit(&format!("bid of {bidder}"), *bid)?;
    }

    let top = bids.iter().map(|&(_, b)| b).fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<BidderId> = bids.iter().filter(|&&(_, b)| b == top).map(|&(id, _)| id).collect();
    tied.sort_unstable();

    let winner = match (tie_rule, tied.len()) {
        (_, 1) | (TieRule::LowestIndex, _) => tied[0],
        (TieRule::SeededRandom, len) => tied[rng.below(len)],
    };
    let price = if tied.len() > 1 {
        top
    } else {
        bids.iter().filter(|&&(id, _)| id != winner).map(|&(_, b)| b).fold(f64::NEG_INFINITY, f64::max)
    };

    Ok(AuctionOutcome { winner, price, winning_bid: top })
}
