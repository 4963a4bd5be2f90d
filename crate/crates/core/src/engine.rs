//! Exact one-step negotiation.
//!
//! Each agent proposes, among the deals with maximal utility product, the one
//! it likes best. Both proposals come out of one pass over the deal space
//! since both agents rank the same utility table.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::float::{approx_eq, definitely_gt, EPSILON};
use crate::model::{ActionVector, ConflictSet, NegotiationResult, PartialActionVector, Scenario, SearchStats, Side};
use crate::policy::{preferred_vector, OwnerModel, UtilityTracker};

/// Largest number of free entries the exhaustive search will enumerate.
pub const MAX_ENUMERATED_BITS: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Tolerance for treating two products as equal. Must be positive.
    pub product_epsilon: f64,
    /// Seed for the coin that settles equal-product proposals.
    pub rng_seed: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            product_epsilon: EPSILON,
            rng_seed: None,
        }
    }
}

impl EngineConfig {
    pub fn seeded(seed: u64) -> Self {
        EngineConfig {
            rng_seed: Some(seed),
            ..Default::default()
        }
    }
}

/// A scored complete deal.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Deal {
    pub actions: Vec<bool>,
    pub utilities: [f64; 2],
    pub product: f64,
}

impl Deal {
    pub fn new(actions: Vec<bool>, utilities: [f64; 2]) -> Self {
        Deal {
            actions,
            product: utilities[0] * utilities[1],
            utilities,
        }
    }
}

/// Whether a candidate with `product`/`own` beats the incumbent for one agent:
/// a larger product, or an equal product with a larger own utility.
///
/// The second field is set when the products tie but the own utilities
/// differ, i.e. when the other agent might have decided differently.
pub(crate) fn beats(product: f64, own: f64, best_product: f64, best_own: f64, eps: f64) -> (bool, bool) {
    if definitely_gt(product, best_product, eps) {
        (true, false)
    } else if approx_eq(product, best_product, eps) {
        (definitely_gt(own, best_own, eps), !approx_eq(own, best_own, eps))
    } else {
        (false, false)
    }
}

/// The partial vector that fixes every agreed entry and leaves conflicts open.
pub fn conflict_partial(s: &Scenario) -> PartialActionVector {
    let v = preferred_vector(s, Side::A);
    let w = preferred_vector(s, Side::B);
    PartialActionVector(
        v.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(&x, &y)| (x == y).then_some(x))
            .collect(),
    )
}

/// All deals consistent with the agreed entries, conflict entries ranging
/// over `{0,1}` in lexicographic order (first conflict most significant).
pub fn enumerate_deals<'a>(s: &Scenario, c: &'a ConflictSet) -> impl Iterator<Item = ActionVector> + 'a {
    let base = preferred_vector(s, Side::A).0;
    let k = c.len();
    assert!(k <= MAX_ENUMERATED_BITS, "{k} conflicts is too many to enumerate");
    (0..1u64 << k).map(move |mask| {
        let mut actions = base.clone();
        for (j, &i) in c.indices().iter().enumerate() {
            actions[i] = (mask >> (k - 1 - j)) & 1 == 1;
        }
        ActionVector(actions)
    })
}

pub fn negotiate_exhaustive(s: &Scenario, cfg: &EngineConfig) -> NegotiationResult {
    search_completions(s, &conflict_partial(s), cfg)
}

/// Exhaustive product maximization over every completion of `t`.
///
/// # Panics
///
/// If `t` has more than [`MAX_ENUMERATED_BITS`] undecided entries.
pub fn search_completions(s: &Scenario, t: &PartialActionVector, cfg: &EngineConfig) -> NegotiationResult {
    let start = Instant::now();
    let models = [OwnerModel::new(s, Side::A), OwnerModel::new(s, Side::B)];
    let free: Vec<usize> = t.undecided_indices().collect();
    let k = free.len();
    assert!(
        k <= MAX_ENUMERATED_BITS,
        "{k} undecided entries is too many to enumerate"
    );

    let base: Vec<bool> = t.0.iter().map(|e| e.unwrap_or(false)).collect();
    let mut trackers = [
        UtilityTracker::new(&models[0], base.clone()),
        UtilityTracker::new(&models[1], base.clone()),
    ];
    let mut dirty = [vec![false; models[0].num_types()], vec![false; models[1].num_types()]];
    let eps = cfg.product_epsilon;

    // (mask, utilities, product) of each agent's proposal so far
    let mut best: [Option<(u64, [f64; 2], f64)>; 2] = [None, None];
    let total: u64 = 1u64 << k;
    let mut mask = 0u64;
    loop {
        let utilities = [trackers[0].utility(), trackers[1].utility()];
        let product = utilities[0] * utilities[1];
        for side in Side::BOTH {
            let me = side.index();
            let better = match best[me] {
                None => true,
                Some((_, bu, bp)) => beats(product, utilities[me], bp, bu[me], eps).0,
            };
            if better {
                best[me] = Some((mask, utilities, product));
            }
        }

        let next = mask + 1;
        if next == total {
            break;
        }
        let changed = mask ^ next;
        for bit in 0..k {
            if (changed >> bit) & 1 == 1 {
                let i = free[k - 1 - bit];
                let value = (next >> bit) & 1 == 1;
                for (tr, d) in trackers.iter_mut().zip(dirty.iter_mut()) {
                    d[tr.set_deferred(i, value)] = true;
                }
            }
        }
        for (tr, d) in trackers.iter_mut().zip(dirty.iter_mut()) {
            for (r, flag) in d.iter_mut().enumerate() {
                if std::mem::take(flag) {
                    tr.refit(r);
                }
            }
        }
        mask = next;
    }

    let decode = |m: u64| -> Vec<bool> {
        let mut actions = base.clone();
        for (j, &i) in free.iter().enumerate() {
            actions[i] = (m >> (k - 1 - j)) & 1 == 1;
        }
        actions
    };
    let proposals = best.map(|b| {
        let (m, u, _) = b.expect("at least one deal");
        Deal::new(decode(m), u)
    });
    let stats = SearchStats {
        vectors_evaluated: total,
        ..Default::default()
    };
    settle(&models, proposals, cfg, stats, start)
}

/// Applies the acceptance rule to the two proposals and assembles the result.
///
/// Identical proposals are accepted as is. Otherwise the larger product wins,
/// and a seeded coin decides between equal products.
pub(crate) fn settle(
    models: &[OwnerModel; 2],
    proposals: [Deal; 2],
    cfg: &EngineConfig,
    mut stats: SearchStats,
    start: Instant,
) -> NegotiationResult {
    let [pa, pb] = &proposals;
    let mut settled_by_coin = false;
    let chosen = if pa.actions == pb.actions || definitely_gt(pa.product, pb.product, cfg.product_epsilon) {
        pa
    } else if definitely_gt(pb.product, pa.product, cfg.product_epsilon) {
        pb
    } else {
        settled_by_coin = true;
        if flip_coin(cfg.rng_seed) {
            pa
        } else {
            pb
        }
    };
    stats.wall_time = start.elapsed();
    NegotiationResult {
        chosen: ActionVector(chosen.actions.clone()),
        utility_a: chosen.utilities[0],
        utility_b: chosen.utilities[1],
        product: chosen.product,
        policy_for_a: models[0].synthesize(&chosen.actions),
        policy_for_b: models[1].synthesize(&chosen.actions),
        stats,
        proposals: [ActionVector(pa.actions.clone()), ActionVector(pb.actions.clone())],
        settled_by_coin,
    }
}

/// `true` selects agent a's proposal.
fn flip_coin(seed: Option<u64>) -> bool {
    let mut rng = match seed {
        Some(seed) => ChaCha8Rng::seed_from_u64(seed),
        None => ChaCha8Rng::from_entropy(),
    };
    rng.gen_bool(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::example_one;
    use crate::model::PrivacyPolicy;
    use crate::policy::{detect_conflicts, utility};

    fn bits(b: &[u8]) -> ActionVector {
        ActionVector::from_bits(b)
    }

    #[test]
    fn deals_of_example_one() {
        let s = example_one();
        let c = detect_conflicts(&s);
        let deals: Vec<_> = enumerate_deals(&s, &c).collect();
        assert_eq!(
            deals,
            [
                bits(&[1, 1, 0, 0]),
                bits(&[1, 1, 0, 1]),
                bits(&[1, 1, 1, 0]),
                bits(&[1, 1, 1, 1])
            ]
        );
    }

    #[test]
    fn no_conflict_single_deal() {
        let mut s = example_one();
        s.policies[1] = PrivacyPolicy::new(vec![8.0]);
        s.intimacy[1] = s.intimacy[0].clone();
        s.policies[0] = PrivacyPolicy::new(vec![8.0]);
        let c = detect_conflicts(&s);
        assert!(c.is_empty());
        assert_eq!(enumerate_deals(&s, &c).count(), 1);

        let r = negotiate_exhaustive(&s, &EngineConfig::seeded(0));
        assert_eq!(r.chosen, preferred_vector(&s, Side::A));
        assert_eq!(r.product, 100.0);
        assert_eq!(r.stats.vectors_evaluated, 1);
    }

    #[test]
    fn three_conflicts_eight_deals() {
        let mut s = example_one();
        s.policies[0] = PrivacyPolicy::new(vec![6.5]);
        s.policies[1] = PrivacyPolicy::new(vec![0.0]);
        let c = detect_conflicts(&s);
        assert_eq!(c.len(), 3);
        let mut deals: Vec<_> = enumerate_deals(&s, &c).collect();
        assert_eq!(deals.len(), 8);
        deals.dedup();
        assert_eq!(deals.len(), 8);
    }

    #[test]
    fn example_two_outcome() {
        let s = example_one();
        let r = negotiate_exhaustive(&s, &EngineConfig::seeded(1));
        assert_eq!(r.chosen, bits(&[1, 1, 1, 0]));
        assert_eq!(r.utility_a, 9.0);
        assert_eq!(r.utility_b, 8.0);
        assert_eq!(r.product, 72.0);
        assert_eq!(r.policy_for_a, PrivacyPolicy::new(vec![4.0]));
        assert_eq!(r.policy_for_b, PrivacyPolicy::new(vec![6.0]));
        assert_eq!(r.stats.vectors_evaluated, 4);
        assert!(!r.settled_by_coin);
        for o in enumerate_deals(&s, &detect_conflicts(&s)) {
            let p = utility(&s, Side::A, &o) * utility(&s, Side::B, &o);
            assert!(r.product >= p);
        }
    }

    #[test]
    fn settle_prefers_larger_product_then_coin() {
        let s = example_one();
        let models = [OwnerModel::new(&s, Side::A), OwnerModel::new(&s, Side::B)];
        let hi = Deal::new(vec![true, true, true, false], [9.0, 8.0]);
        let lo = Deal::new(vec![true, true, false, false], [10.0, 6.0]);
        let cfg = EngineConfig::seeded(3);
        let r = settle(
            &models,
            [lo.clone(), hi.clone()],
            &cfg,
            SearchStats::default(),
            Instant::now(),
        );
        assert_eq!(r.product, 72.0);
        assert!(!r.settled_by_coin);

        let tie = Deal::new(vec![true, true, false, true], [8.0, 9.0]);
        let picks: std::collections::HashSet<_> = (0..64)
            .map(|seed| {
                let r = settle(
                    &models,
                    [hi.clone(), tie.clone()],
                    &EngineConfig::seeded(seed),
                    SearchStats::default(),
                    Instant::now(),
                );
                assert!(r.settled_by_coin);
                r.chosen
            })
            .collect();
        assert_eq!(picks.len(), 2, "both tied proposals should be reachable by the coin");
    }
}
