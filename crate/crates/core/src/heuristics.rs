//! Pruning strategies for large conflict sets: distance-based fixing, greedy
//! conflict-at-a-time resolution, and a best-first search seeded by greedy
//! completions (GreedyBnB) that can be cut off by a budget.
//!
//! Every strategy is run from each agent's point of view, which matters only
//! when two candidates tie on product and the agent's own utility breaks the
//! tie. Agent b's search is therefore replayed only if agent a's run saw an
//! equal-product comparison between candidates it valued differently;
//! otherwise both runs are identical. A replay gets its own budget.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use crate::engine::{beats, conflict_partial, search_completions, settle, Deal, EngineConfig};
use crate::float::approx_eq;
use crate::model::{ActionVector, ConflictSet, NegotiationResult, PartialActionVector, Scenario, SearchStats, Side};
use crate::policy::{detect_conflicts, preferred_vector, OwnerModel, UtilityTracker};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceHeuristicConfig {
    /// Importance threshold; shared by both agents.
    pub importance_threshold: f64,
}

/// Limits for an anytime GreedyBnB run. Both `None` means run to completion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnytimeBudget {
    pub wall_time_limit: Option<Duration>,
    /// Maximum number of greedy-completion calls. The root completion is
    /// always computed, so values below 1 behave like 1.
    pub node_limit: Option<u64>,
}

impl AnytimeBudget {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn nodes(limit: u64) -> Self {
        AnytimeBudget {
            node_limit: Some(limit),
            ..Default::default()
        }
    }

    pub fn wall_time(limit: Duration) -> Self {
        AnytimeBudget {
            wall_time_limit: Some(limit),
            ..Default::default()
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.wall_time_limit.is_none() && self.node_limit.is_none()
    }
}

/// Fixes each conflict whose importance gap reaches `phi` to the action of
/// the agent for whom it matters more; the rest stay undecided.
pub fn fix_by_distance(s: &Scenario, c: &ConflictSet, phi: f64) -> PartialActionVector {
    let v = preferred_vector(s, Side::A);
    let w = preferred_vector(s, Side::B);
    let mut t = PartialActionVector(v.as_slice().iter().map(|&x| Some(x)).collect());
    let importance = |side: Side, i: usize| (s.policy(side).thresholds[s.rel(side, i)] - s.intimacy(side, i)).abs();
    for &i in c.indices() {
        let da = importance(Side::A, i);
        let db = importance(Side::B, i);
        t.0[i] = if (da - db).abs() >= phi {
            Some(if da > db { v.as_slice()[i] } else { w.as_slice()[i] })
        } else {
            None
        };
    }
    t
}

pub fn negotiate_distance(s: &Scenario, phi: f64, cfg: &EngineConfig) -> NegotiationResult {
    let c = detect_conflicts(s);
    search_completions(s, &fix_by_distance(s, &c, phi), cfg)
}

/// Greedy completion of a partial vector from one agent's point of view.
#[derive(Debug, Clone)]
struct Completion {
    deal: Deal,
    evaluated: u64,
    tie_seen: bool,
}

fn greedy_run(models: &[OwnerModel; 2], t: &PartialActionVector, side: Side, eps: f64) -> Completion {
    let mut trackers = [
        UtilityTracker::from_partial(&models[0], t),
        UtilityTracker::from_partial(&models[1], t),
    ];
    let mut open: Vec<usize> = t.undecided_indices().collect();
    let me = side.index();
    let mut evaluated = 0u64;
    let mut tie_seen = false;

    while !open.is_empty() {
        // (position in `open`, action, utilities, product)
        let mut best: Option<(usize, bool, [f64; 2], f64)> = None;
        for (pos, &i) in open.iter().enumerate() {
            for action in [false, true] {
                let u = [trackers[0].probe(i, action), trackers[1].probe(i, action)];
                let product = u[0] * u[1];
                evaluated += 1;
                let better = match best {
                    None => true,
                    Some((_, _, bu, bp)) => {
                        let (better, tied) = beats(product, u[me], bp, bu[me], eps);
                        tie_seen |= tied;
                        better
                    }
                };
                if better {
                    best = Some((pos, action, u, product));
                }
            }
        }
        let (pos, action, _, _) = best.expect("open is non-empty");
        let i = open.remove(pos);
        trackers[0].set(i, action);
        trackers[1].set(i, action);
    }

    // the completed vector itself
    evaluated += 1;
    Completion {
        deal: Deal::new(
            trackers[0].actions().to_vec(),
            [trackers[0].utility(), trackers[1].utility()],
        ),
        evaluated,
        tie_seen,
    }
}

fn greedy_from(s: &Scenario, t: &PartialActionVector, cfg: &EngineConfig) -> NegotiationResult {
    let start = Instant::now();
    let models = [OwnerModel::new(s, Side::A), OwnerModel::new(s, Side::B)];
    let eps = cfg.product_epsilon;
    let for_a = greedy_run(&models, t, Side::A, eps);
    let for_b = if for_a.tie_seen {
        greedy_run(&models, t, Side::B, eps)
    } else {
        for_a.clone()
    };
    let stats = SearchStats {
        vectors_evaluated: for_a.evaluated.max(for_b.evaluated),
        ..Default::default()
    };
    settle(&models, [for_a.deal, for_b.deal], cfg, stats, start)
}

pub fn negotiate_greedy(s: &Scenario, cfg: &EngineConfig) -> NegotiationResult {
    greedy_from(s, &conflict_partial(s), cfg)
}

/// Greedily resolves the undecided entries of `t`; returns the completed
/// vector and its utility product.
pub fn greedy_complete(s: &Scenario, t: &PartialActionVector, cfg: &EngineConfig) -> (ActionVector, f64) {
    let r = greedy_from(s, t, cfg);
    (r.chosen, r.product)
}

/// An entry of the GreedyBnB queue.
#[derive(Debug, Clone)]
pub struct BnBNode {
    pub partial: PartialActionVector,
    /// Greedy completion of `partial`.
    pub completion: ActionVector,
    /// Product of the completion.
    pub bound: f64,
}

struct Queued {
    node: BnBNode,
    utilities: [f64; 2],
    seq: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Max-heap: larger bound first, then insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        self.node
            .bound
            .total_cmp(&other.node.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct BnbOutcome {
    best: Deal,
    evaluated: u64,
    greedy_calls: u64,
    exhausted: bool,
    tie_seen: bool,
}

struct Budget {
    limits: AnytimeBudget,
    start: Instant,
}

impl Budget {
    fn allows(&self, calls: u64) -> bool {
        self.limits.node_limit.is_none_or(|l| calls < l)
            && self.limits.wall_time_limit.is_none_or(|w| self.start.elapsed() < w)
    }
}

fn bnb_run(
    models: &[OwnerModel; 2],
    root: &PartialActionVector,
    side: Side,
    limits: AnytimeBudget,
    eps: f64,
) -> BnbOutcome {
    let budget = Budget {
        limits,
        start: Instant::now(),
    };
    let me = side.index();

    let first = greedy_run(models, root, side, eps);
    let mut calls = 1u64;
    let mut evaluated = first.evaluated;
    let mut tie_seen = first.tie_seen;
    let mut incumbent = first.deal.clone();

    let mut seq = 0u64;
    let mut queue = BinaryHeap::new();
    queue.push(Queued {
        node: BnBNode {
            partial: root.clone(),
            completion: ActionVector(first.deal.actions),
            bound: first.deal.product,
        },
        utilities: first.deal.utilities,
        seq,
    });
    // A partial already evaluated once cannot beat the incumbent a second
    // time, since the incumbent never gets worse.
    let mut seen: HashSet<PartialActionVector> = HashSet::new();
    seen.insert(root.clone());
    let mut exhausted = false;

    'search: while let Some(Queued { node, utilities, .. }) = queue.pop() {
        let (better, tied) = beats(
            node.bound,
            utilities[me],
            incumbent.product,
            incumbent.utilities[me],
            eps,
        );
        tie_seen |= tied;
        if better {
            incumbent = Deal {
                actions: node.completion.0.clone(),
                utilities,
                product: node.bound,
            };
            let floor = incumbent.product;
            queue.retain(|q| !(q.node.bound < floor && !approx_eq(q.node.bound, floor, eps)));
        }

        let open: Vec<usize> = node.partial.undecided_indices().collect();
        if open.is_empty() {
            continue;
        }
        if !budget.allows(calls) {
            exhausted = true;
            break;
        }
        for i in open {
            for action in [false, true] {
                let mut child = node.partial.clone();
                child.0[i] = Some(action);
                if seen.contains(&child) {
                    continue;
                }
                if !budget.allows(calls) {
                    exhausted = true;
                    break 'search;
                }
                let done = greedy_run(models, &child, side, eps);
                calls += 1;
                evaluated += done.evaluated;
                tie_seen |= done.tie_seen;
                let (better, tied) = beats(
                    done.deal.product,
                    done.deal.utilities[me],
                    incumbent.product,
                    incumbent.utilities[me],
                    eps,
                );
                tie_seen |= tied;
                seen.insert(child.clone());
                if better {
                    seq += 1;
                    queue.push(Queued {
                        node: BnBNode {
                            partial: child,
                            completion: ActionVector(done.deal.actions),
                            bound: done.deal.product,
                        },
                        utilities: done.deal.utilities,
                        seq,
                    });
                }
            }
        }
    }

    if exhausted {
        // Queued completions are complete deals already evaluated; the best
        // of them counts as seen.
        for q in queue.into_sorted_vec().into_iter().rev() {
            let (better, tied) = beats(
                q.node.bound,
                q.utilities[me],
                incumbent.product,
                incumbent.utilities[me],
                eps,
            );
            tie_seen |= tied;
            if better {
                incumbent = Deal {
                    actions: q.node.completion.0,
                    utilities: q.utilities,
                    product: q.node.bound,
                };
            }
        }
    }

    BnbOutcome {
        best: incumbent,
        evaluated,
        greedy_calls: calls,
        exhausted,
        tie_seen,
    }
}

pub fn negotiate_greedy_bnb(s: &Scenario, budget: AnytimeBudget, cfg: &EngineConfig) -> NegotiationResult {
    let start = Instant::now();
    let models = [OwnerModel::new(s, Side::A), OwnerModel::new(s, Side::B)];
    let root = conflict_partial(s);
    let eps = cfg.product_epsilon;
    let for_a = bnb_run(&models, &root, Side::A, budget, eps);
    let for_b = if for_a.tie_seen {
        Some(bnb_run(&models, &root, Side::B, budget, eps))
    } else {
        None
    };
    let (b_best, b_evaluated, b_calls, b_exhausted) = match &for_b {
        Some(o) => (o.best.clone(), o.evaluated, o.greedy_calls, o.exhausted),
        None => (for_a.best.clone(), for_a.evaluated, for_a.greedy_calls, for_a.exhausted),
    };
    let stats = SearchStats {
        vectors_evaluated: for_a.evaluated.max(b_evaluated),
        greedy_calls: for_a.greedy_calls.max(b_calls),
        budget_exhausted: for_a.exhausted || b_exhausted,
        ..Default::default()
    };
    settle(&models, [for_a.best, b_best], cfg, stats, start)
}
