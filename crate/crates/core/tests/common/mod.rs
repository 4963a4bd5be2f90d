//! Brute-force oracles and scenario strategies shared by the integration tests.
//! Nothing here goes through `OwnerModel`; the oracles recompute everything
//! from the scenario fields directly.

#![allow(dead_code)]

use std::collections::BTreeSet;

use polneg::{ActionVector, PrivacyPolicy, Scenario, Side};
use proptest::prelude::*;

/// Every threshold the synthesis grid may pick for `(owner, type r)`.
pub fn grid(s: &Scenario, owner: Side, r: usize) -> Vec<f64> {
    let mut g = vec![s.policy(owner).thresholds[r], 0.0, s.max_intimacy];
    for i in 0..s.num_targets() {
        if s.rel(owner, i) == r {
            g.push(s.intimacy(owner, i));
        }
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Cartesian product of the per-type grids.
pub fn grid_points(s: &Scenario, owner: Side) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for r in 0..s.num_types() {
        let g = grid(s, owner, r);
        points = points
            .into_iter()
            .flat_map(|p| {
                g.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    points
}

/// Action for target `i` straight from the definition, override exceptions.
pub fn naive_act(s: &Scenario, owner: Side, thresholds: &[f64], exceptions: &BTreeSet<usize>, i: usize) -> bool {
    let granted = s.intimacy(owner, i) >= thresholds[s.rel(owner, i)];
    if exceptions.contains(&i) {
        !granted
    } else {
        granted
    }
}

pub fn naive_induce(s: &Scenario, owner: Side, p: &PrivacyPolicy) -> Vec<bool> {
    (0..s.num_targets())
        .map(|i| naive_act(s, owner, &p.thresholds, &p.exceptions, i))
        .collect()
}

fn euclid(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Smallest exception count of any grid policy inducing `o`, found by
/// scanning every grid point against every exception subset.
pub fn min_exceptions_by_subsets(s: &Scenario, owner: Side, o: &[bool]) -> usize {
    let n = s.num_targets();
    assert!(n <= 12);
    let mut best = usize::MAX;
    for point in grid_points(s, owner) {
        for mask in 0u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size >= best {
                continue;
            }
            let e: BTreeSet<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if (0..n).all(|i| naive_act(s, owner, &point, &e, i) == o[i]) {
                best = size;
            }
        }
    }
    best
}

/// Utility by exhaustive scan of the threshold grid: minimal exceptions
/// first, then minimal distance to the preferred thresholds.
pub fn naive_utility(s: &Scenario, owner: Side, o: &[bool]) -> f64 {
    let n = s.num_targets();
    let pref = &s.policy(owner).thresholds;
    let mut best: Option<(usize, f64)> = None;
    for point in grid_points(s, owner) {
        let e = (0..n)
            .filter(|&i| (s.intimacy(owner, i) >= point[s.rel(owner, i)]) != o[i])
            .count();
        let d = euclid(&point, pref);
        if best.is_none_or(|(be, bd)| (e, d) < (be, bd)) {
            best = Some((e, d));
        }
    }
    let (e, d) = best.unwrap();
    let cap = s.max_intimacy * (s.num_types() as f64).sqrt();
    (1.0 - e as f64 / n as f64) * (cap - d)
}

pub fn naive_conflicts(s: &Scenario) -> Vec<usize> {
    let v = naive_induce(s, Side::A, s.policy(Side::A));
    let w = naive_induce(s, Side::B, s.policy(Side::B));
    (0..s.num_targets()).filter(|&i| v[i] != w[i]).collect()
}

/// Maximum utility product over all deals that keep the agreed entries.
pub fn naive_best_product(s: &Scenario) -> f64 {
    let c = naive_conflicts(s);
    let base = naive_induce(s, Side::A, s.policy(Side::A));
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1 << c.len()) {
        let mut o = base.clone();
        for (j, &i) in c.iter().enumerate() {
            o[i] = mask >> j & 1 == 1;
        }
        best = best.max(naive_utility(s, Side::A, &o) * naive_utility(s, Side::B, &o));
    }
    best
}

/// Maximum utility product over every completion of a partial vector.
pub fn naive_best_completion(s: &Scenario, t: &[Option<bool>]) -> f64 {
    let free: Vec<usize> = (0..t.len()).filter(|&i| t[i].is_none()).collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1 << free.len()) {
        let mut o: Vec<bool> = t.iter().map(|e| e.unwrap_or(false)).collect();
        for (j, &i) in free.iter().enumerate() {
            o[i] = mask >> j & 1 == 1;
        }
        best = best.max(naive_utility(s, Side::A, &o) * naive_utility(s, Side::B, &o));
    }
    best
}

pub fn approx(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn example_one() -> Scenario {
    Scenario {
        negotiators: ["a".into(), "b".into()],
        targets: vec!["i1".into(), "i2".into(), "i3".into(), "i4".into()],
        relationship_types: vec!["r1".into()],
        rel_of: [vec![0; 4], vec![0; 4]],
        intimacy: [vec![10.0, 6.0, 4.0, 1.0], vec![8.0, 6.0, 7.0, 4.0]],
        max_intimacy: 10.0,
        policies: [PrivacyPolicy::new(vec![5.0]), PrivacyPolicy::new(vec![4.0])],
    }
}

pub fn bits(b: &[u8]) -> ActionVector {
    ActionVector::from_bits(b)
}

fn value(y: f64, integer: bool) -> BoxedStrategy<f64> {
    if integer {
        (0..=y as u32).prop_map(f64::from).boxed()
    } else {
        (0.0..=y).boxed()
    }
}

/// Random valid scenarios. `with_exceptions` lets preferred policies carry
/// exception sets.
pub fn scenario(max_targets: usize, max_types: usize, with_exceptions: bool) -> impl Strategy<Value = Scenario> {
    (
        1..=max_targets,
        1..=max_types,
        prop_oneof![Just(5.0), Just(10.0)],
        any::<bool>(),
    )
        .prop_flat_map(move |(n, k, y, integer)| {
            let side = move || {
                (
                    proptest::collection::vec(value(y, integer), n),
                    proptest::collection::vec(0..k, n),
                    proptest::collection::vec(value(y, integer), k),
                    if with_exceptions {
                        proptest::collection::btree_set(0..n, 0..=n.min(3)).boxed()
                    } else {
                        Just(BTreeSet::new()).boxed()
                    },
                )
            };
            (side(), side()).prop_map(move |((ia, ra, ta, ea), (ib, rb, tb, eb))| Scenario {
                negotiators: ["a".into(), "b".into()],
                targets: (0..n).map(|i| format!("t{i}")).collect(),
                relationship_types: (0..k).map(|r| format!("r{r}")).collect(),
                rel_of: [ra, rb],
                intimacy: [ia, ib],
                max_intimacy: y,
                policies: [
                    PrivacyPolicy {
                        thresholds: ta,
                        exceptions: ea,
                    },
                    PrivacyPolicy {
                        thresholds: tb,
                        exceptions: eb,
                    },
                ],
            })
        })
}

pub fn vector(n: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), n)
}
