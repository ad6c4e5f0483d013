//! Alternating-offers negotiation over price and quality.
//!
//! The buyer opens. Both sides concede along a time-dependent curve
//! `x(k) = start + (end - start)·(k/R)^(1/β)` over `R` rounds, quantized to a
//! price grain so humans are not pestered with tiny increments. A side accepts
//! the standing offer when it is worth at least as much to it as the offer it
//! would make next.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub price: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Buyer,
    Seller,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub actor: Actor,
    pub offer: Offer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoDealReason {
    RoundCapExhausted,
    SellerWithdrew,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Agreement(Offer),
    NoDeal(NoDealReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationTranscript {
    pub rounds: Vec<Move>,
    pub outcome: Outcome,
    pub round_cap: u32,
}

impl NegotiationTranscript {
    pub fn agreement(&self) -> Option<Offer> {
        match self.outcome {
            Outcome::Agreement(o) => Some(o),
            Outcome::NoDeal(_) => None,
        }
    }

    fn prices(&self, actor: Actor) -> impl Iterator<Item = f64> + '_ {
        self.rounds
            .iter()
            .filter(move |m| m.actor == actor)
            .map(|m| m.offer.price)
    }

    /// Buyer prices never fall, seller prices never rise, at most `2R` moves.
    pub fn is_well_formed(&self) -> bool {
        let nondecreasing = |v: Vec<f64>| v.windows(2).all(|w| w[0] <= w[1]);
        let nonincreasing = |v: Vec<f64>| v.windows(2).all(|w| w[0] >= w[1]);
        self.rounds.len() <= 2 * self.round_cap as usize
            && nondecreasing(self.prices(Actor::Buyer).collect())
            && nonincreasing(self.prices(Actor::Seller).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub price: f64,
    pub quality: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self { price: 1.0, quality: 1.0 }
    }
}

/// Buyer-side negotiation tactic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tactic {
    pub beta: f64,
    pub rounds: u32,
    pub weights: UtilityWeights,
    pub grain: f64,
    /// Buyer's opening price.
    #[serde(default)]
    pub opening_price: f64,
}

impl Default for Tactic {
    fn default() -> Self {
        Self {
            beta: 1.0,
            rounds: 5,
            weights: UtilityWeights::default(),
            grain: 0.5,
            opening_price: 0.0,
        }
    }
}

/// Fraction of the concession range covered by round `k` of `rounds`.
pub fn concession(k: u32, rounds: u32, beta: f64) -> f64 {
    if rounds == 0 {
        return 1.0;
    }
    (f64::from(k) / f64::from(rounds)).powf(1.0 / beta)
}

const GRAIN_EPS: f64 = 1e-9;

pub fn round_up(x: f64, grain: f64) -> f64 {
    if grain > 0.0 {
        (x / grain - GRAIN_EPS).ceil() * grain
    } else {
        x
    }
}

pub fn round_down(x: f64, grain: f64) -> f64 {
    if grain > 0.0 {
        (x / grain + GRAIN_EPS).floor() * grain
    } else {
        x
    }
}

pub fn buyer_utility(o: &Offer, w: &UtilityWeights, max_price: f64) -> f64 {
    w.quality * o.quality - w.price * o.price / max_price.max(f64::MIN_POSITIVE)
}

pub fn seller_utility(o: &Offer, w: &UtilityWeights, reservation: f64, scale: f64) -> f64 {
    w.price * (o.price - reservation) / scale.max(f64::MIN_POSITIVE) - w.quality * o.quality
}

/// The provider's side of a negotiation.
pub trait Seller {
    fn respond(&mut self, round: u32, buyer_offer: &Offer) -> SellerMove;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SellerMove {
    Accept,
    Counter(Offer),
    Withdraw,
}

/// Seller conceding from `opening` to its private `reservation`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDependentSeller {
    pub reservation: f64,
    pub opening: f64,
    pub quality: f64,
    pub beta: f64,
    pub rounds: u32,
    pub grain: f64,
    pub weights: UtilityWeights,
}

impl TimeDependentSeller {
    pub fn planned(&self, k: u32) -> Offer {
        let opening = self.opening.max(self.reservation);
        let p = opening - (opening - self.reservation) * concession(k, self.rounds, self.beta);
        Offer {
            price: round_down(p, self.grain).max(self.reservation),
            quality: self.quality,
        }
    }
}

impl Seller for TimeDependentSeller {
    fn respond(&mut self, round: u32, buyer_offer: &Offer) -> SellerMove {
        let next = self.planned(round);
        let scale = self.opening.max(self.reservation).max(1.0);
        let u = |o: &Offer| seller_utility(o, &self.weights, self.reservation, scale);
        if buyer_offer.quality <= self.quality && u(buyer_offer) >= u(&next) {
            SellerMove::Accept
        } else {
            SellerMove::Counter(next)
        }
    }
}

/// Negotiation terms fixed by the slot being procured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuyerLimits {
    pub max_price: f64,
    pub min_quality: f64,
    /// Quality the buyer asks for in its offers.
    pub target_quality: f64,
}

/// Buyer's planned offer in round `k`.
pub fn buyer_offer(k: u32, tactic: &Tactic, limits: &BuyerLimits) -> Offer {
    let open = tactic.opening_price.min(limits.max_price);
    let p = open + (limits.max_price - open) * concession(k, tactic.rounds, tactic.beta);
    Offer {
        price: round_up(p, tactic.grain).min(limits.max_price),
        quality: limits.target_quality,
    }
}

/// Runs alternating offers, buyer first, for at most `tactic.rounds` rounds each.
pub fn negotiate(tactic: &Tactic, limits: &BuyerLimits, seller: &mut dyn Seller) -> NegotiationTranscript {
    let mut rounds = Vec::new();
    let mut standing: Option<Offer> = None;
    let u_b = |o: &Offer| buyer_utility(o, &tactic.weights, limits.max_price);
    let acceptable = |o: &Offer| o.price <= limits.max_price && o.quality >= limits.min_quality;
    let done = |rounds: Vec<Move>, outcome| NegotiationTranscript {
        rounds,
        outcome,
        round_cap: tactic.rounds,
    };

    for k in 1..=tactic.rounds {
        let mine = buyer_offer(k, tactic, limits);
        if let Some(s) = standing {
            if acceptable(&s) && u_b(&s) >= u_b(&mine) {
                return done(rounds, Outcome::Agreement(s));
            }
        }
        rounds.push(Move { actor: Actor::Buyer, offer: mine });
        match seller.respond(k, &mine) {
            SellerMove::Accept => return done(rounds, Outcome::Agreement(mine)),
            SellerMove::Withdraw => return done(rounds, Outcome::NoDeal(NoDealReason::SellerWithdrew)),
            SellerMove::Counter(mut o) => {
                // Sellers may not walk their price back up.
                if let Some(prev) = standing {
                    o.price = o.price.min(prev.price);
                }
                rounds.push(Move { actor: Actor::Seller, offer: o });
                standing = Some(o);
            }
        }
    }
    done(rounds, Outcome::NoDeal(NoDealReason::RoundCapExhausted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seller(reservation: f64, opening: f64, beta: f64, rounds: u32, grain: f64) -> TimeDependentSeller {
        TimeDependentSeller {
            reservation,
            opening,
            quality: 0.9,
            beta,
            rounds,
            grain,
            weights: UtilityWeights::default(),
        }
    }

    fn limits(max_price: f64) -> BuyerLimits {
        BuyerLimits { max_price, min_quality: 0.8, target_quality: 0.9 }
    }

    fn tactic(beta: f64, rounds: u32, grain: f64) -> Tactic {
        Tactic { beta, rounds, grain, ..Tactic::default() }
    }

    #[test]
    fn agreement_inside_the_zone() {
        // Hand-worked, β=1, R=5, g=0.5:
        //   buyer  p(k) = 10·k/5              → 2, 4, 6, ...
        //   seller s(k) = 8 − 4·k/5 floored   → 7.0, 6.0, 5.5, ...
        // Round 1: B 2, S 7.  Round 2: B 4, S 6.  Round 3: the buyer's next offer
        // would be 6, the standing 6 is no worse, so the buyer accepts 6.
        let t = negotiate(&tactic(1.0, 5, 0.5), &limits(10.0), &mut seller(4.0, 8.0, 1.0, 5, 0.5));
        let prices: Vec<(Actor, f64)> = t.rounds.iter().map(|m| (m.actor, m.offer.price)).collect();
        assert_eq!(
            prices,
            vec![(Actor::Buyer, 2.0), (Actor::Seller, 7.0), (Actor::Buyer, 4.0), (Actor::Seller, 6.0)]
        );
        let deal = t.agreement().unwrap();
        assert_eq!(deal.price, 6.0);
        assert!((4.0..=10.0).contains(&deal.price));
        assert!(t.is_well_formed());
    }

    #[test]
    fn empty_zone_means_no_deal() {
        let t = negotiate(&tactic(1.0, 5, 0.5), &limits(10.0), &mut seller(12.0, 15.0, 1.0, 5, 0.5));
        assert_eq!(t.outcome, Outcome::NoDeal(NoDealReason::RoundCapExhausted));
        assert!(t.is_well_formed());
    }

    #[test]
    fn zero_round_cap() {
        let t = negotiate(&tactic(1.0, 0, 0.5), &limits(10.0), &mut seller(4.0, 8.0, 1.0, 0, 0.5));
        assert!(t.rounds.is_empty());
        assert_eq!(t.outcome, Outcome::NoDeal(NoDealReason::RoundCapExhausted));
    }

    #[test]
    fn low_quality_counter_is_never_accepted() {
        let mut s = seller(1.0, 1.0, 1.0, 3, 0.0);
        s.quality = 0.5;
        let t = negotiate(&tactic(1.0, 3, 0.0), &limits(10.0), &mut s);
        assert!(t.agreement().is_none());
    }

    struct Greedy(f64);
    impl Seller for Greedy {
        fn respond(&mut self, _: u32, _: &Offer) -> SellerMove {
            self.0 += 1.0;
            SellerMove::Counter(Offer { price: self.0, quality: 0.9 })
        }
    }

    #[test]
    fn rising_counters_are_clamped() {
        let t = negotiate(&tactic(1.0, 4, 0.5), &limits(100.0), &mut Greedy(50.0));
        assert!(t.is_well_formed());
    }

    #[test]
    fn quantization() {
        assert_eq!(round_up(6.0, 0.5), 6.0);
        assert_eq!(round_up(6.1, 0.5), 6.5);
        assert_eq!(round_down(7.2, 0.5), 7.0);
        assert_eq!(round_down(5.5, 0.5), 5.5);
        assert_eq!(round_up(3.3, 0.0), 3.3);
    }

    proptest! {
        #[test]
        fn transcripts_are_monotone_and_bounded(
            beta in 0.2f64..5.0,
            seller_beta in 0.2f64..5.0,
            reservation in 0.0f64..15.0,
            markup in 0.0f64..10.0,
            grain in prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 1.0]),
            rounds in 0u32..12,
            max_price in 0.5f64..12.0,
        ) {
            let mut s = seller(reservation, reservation + markup, seller_beta, rounds, grain);
            let t = negotiate(&tactic(beta, rounds, grain), &limits(max_price), &mut s);
            prop_assert!(t.is_well_formed());
            prop_assert_eq!(t.agreement().is_some(), reservation <= max_price && rounds >= 1);
            if let Some(deal) = t.agreement() {
                prop_assert!(deal.price >= reservation - 1e-9 && deal.price <= max_price + 1e-9);
            }
        }
    }
}
