use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::PoolEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub component_id: String,
    pub bid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionResult {
    pub winner: String,
    /// Credits per message paid to the winner.
    pub payment: f64,
    pub qualified: Vec<Bid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuctionError {
    #[error("no bid at or below the reserve")]
    NoQualifiedBidders,
}

/// Machine bids are their posted prices.
pub fn bids_from(candidates: &[PoolEntry]) -> Vec<Bid> {
    candidates
        .iter()
        .map(|e| Bid {
            component_id: e.descriptor.id.clone(),
            bid: e.descriptor.posted_terms.price,
        })
        .collect()
}

/// Sealed-bid second-price reverse auction with a reserve price.
///
/// The lowest qualified bid wins (ties to the lowest id) and is paid the
/// second-lowest qualified bid, or the reserve when it bid alone.
pub fn run_reverse_auction(bids: &[Bid], reserve: f64) -> Result<AuctionResult, AuctionError> {
    let mut qualified: Vec<Bid> = bids
        .iter()
        .filter(|b| b.bid >= 0.0 && b.bid <= reserve)
        .cloned()
        .collect();
    qualified.sort_by(|a, b| {
        a.bid
            .total_cmp(&b.bid)
            .then_with(|| a.component_id.cmp(&b.component_id))
    });
    let winner = qualified.first().ok_or(AuctionError::NoQualifiedBidders)?;
    let payment = qualified.get(1).map_or(reserve, |b| b.bid);
    Ok(AuctionResult {
        winner: winner.component_id.clone(),
        payment,
        qualified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bids(v: &[(&str, f64)]) -> Vec<Bid> {
        v.iter()
            .map(|(id, b)| Bid { component_id: id.to_string(), bid: *b })
            .collect()
    }

    #[test]
    fn second_price_payment() {
        let r = run_reverse_auction(&bids(&[("A", 5.0), ("B", 7.0), ("C", 9.0)]), 10.0).unwrap();
        assert_eq!(r.winner, "A");
        assert_eq!(r.payment, 7.0);
    }

    #[test]
    fn lone_bidder_gets_reserve() {
        let r = run_reverse_auction(&bids(&[("A", 5.0)]), 10.0).unwrap();
        assert_eq!((r.winner.as_str(), r.payment), ("A", 10.0));
    }

    #[test]
    fn winner_bid_does_not_set_its_payment() {
        let r = run_reverse_auction(&bids(&[("A", 6.0), ("B", 7.0)]), 10.0).unwrap();
        assert_eq!((r.winner.as_str(), r.payment), ("A", 7.0));
    }

    #[test]
    fn bids_above_reserve_do_not_qualify() {
        assert_eq!(
            run_reverse_auction(&bids(&[("A", 11.0)]), 10.0),
            Err(AuctionError::NoQualifiedBidders)
        );
        let r = run_reverse_auction(&bids(&[("A", 4.0), ("B", 12.0)]), 10.0).unwrap();
        assert_eq!(r.payment, 10.0);
        assert_eq!(r.qualified.len(), 1);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let r = run_reverse_auction(&bids(&[("B", 3.0), ("A", 3.0)]), 10.0).unwrap();
        assert_eq!((r.winner.as_str(), r.payment), ("A", 3.0));
    }

    proptest! {
        #[test]
        fn payment_bounds(raw in prop::collection::vec(0u32..20, 1..10), reserve in 0u32..20) {
            let bs: Vec<Bid> = raw.iter().enumerate()
                .map(|(i, b)| Bid { component_id: format!("m{i}"), bid: f64::from(*b) })
                .collect();
            if let Ok(r) = run_reverse_auction(&bs, f64::from(reserve)) {
                let win = bs.iter().find(|b| b.component_id == r.winner).unwrap();
                prop_assert!(r.payment >= win.bid);
                prop_assert!(r.payment <= f64::from(reserve));
            }
        }
    }
}
