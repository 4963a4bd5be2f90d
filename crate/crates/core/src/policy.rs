//! Policy semantics: per-target actions, conflict detection, minimal-exception
//! policy synthesis, policy distance and the utility of a deal.
//!
//! Exceptions override the threshold decision in either direction: a target
//! listed in `E` gets the opposite of what its intimacy and threshold say.
//!
//! Synthesis searches, per relationship type, a finite grid of thresholds:
//! the owner's preferred threshold, `0`, `Y`, and every intimacy the owner
//! holds towards a target of that type. The exception count only changes at
//! intimacy values, so the grid always contains a count-minimal threshold.
//! Ties are broken by distance to the preferred threshold, then by the
//! smaller threshold.

use thiserror::Error;

use crate::model::{ActionVector, ConflictSet, PartialActionVector, PrivacyPolicy, Scenario, Side};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("target index {index} out of range ({len} targets)")]
    UnknownTarget { index: usize, len: usize },
    #[error("policies have different arity ({0} vs {1} thresholds)")]
    ArityMismatch(usize, usize),
}

/// The action `p` prescribes for target `i` when applied by `owner`.
pub fn act(s: &Scenario, owner: Side, p: &PrivacyPolicy, i: usize) -> Result<bool, PolicyError> {
    if i >= s.num_targets() {
        return Err(PolicyError::UnknownTarget {
            index: i,
            len: s.num_targets(),
        });
    }
    let base = s.intimacy(owner, i) >= p.thresholds[s.rel(owner, i)];
    Ok(base != p.exceptions.contains(&i))
}

pub fn induce(s: &Scenario, owner: Side, p: &PrivacyPolicy) -> ActionVector {
    ActionVector(
        (0..s.num_targets())
            .map(|i| act(s, owner, p, i).expect("index in range"))
            .collect(),
    )
}

/// The vector `owner` would enforce unilaterally.
pub fn preferred_vector(s: &Scenario, owner: Side) -> ActionVector {
    induce(s, owner, s.policy(owner))
}

pub fn detect_conflicts(s: &Scenario) -> ConflictSet {
    let v = preferred_vector(s, Side::A);
    let w = preferred_vector(s, Side::B);
    ConflictSet(
        v.as_slice()
            .iter()
            .zip(w.as_slice())
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, _)| i)
            .collect(),
    )
}

/// Euclidean distance between threshold vectors. Exceptions do not count.
pub fn distance(p: &PrivacyPolicy, q: &PrivacyPolicy) -> Result<f64, PolicyError> {
    if p.thresholds.len() != q.thresholds.len() {
        return Err(PolicyError::ArityMismatch(p.thresholds.len(), q.thresholds.len()));
    }
    Ok(p.thresholds
        .iter()
        .zip(&q.thresholds)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// The policy that induces `o` for `owner` with the fewest exceptions.
pub fn synthesize_policy(s: &Scenario, owner: Side, o: &ActionVector) -> PrivacyPolicy {
    OwnerModel::new(s, owner).synthesize(o.as_slice())
}

pub fn utility(s: &Scenario, owner: Side, o: &ActionVector) -> f64 {
    OwnerModel::new(s, owner).utility(o.as_slice())
}

/// Utility of `t` with every undecided entry set to the owner's own
/// preferred action.
pub fn partial_utility(s: &Scenario, owner: Side, t: &PartialActionVector) -> f64 {
    let model = OwnerModel::new(s, owner);
    let completed = model.complete(t);
    model.utility(&completed)
}

/// Best threshold for one relationship type, given a target assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeFit {
    pub exceptions: usize,
    pub threshold: f64,
    /// `|threshold - preferred threshold|`
    pub offset: f64,
}

#[derive(Debug, Clone)]
struct Cut {
    /// Number of members whose intimacy is below `threshold`.
    below: usize,
    threshold: f64,
    offset: f64,
}

#[derive(Debug, Clone)]
struct TypeGroup {
    /// `(target, intimacy)` sorted by intimacy.
    members: Vec<(usize, f64)>,
    /// One best candidate per distinct `below`, ascending in `below`.
    cuts: Vec<Cut>,
}

/// Precomputed per-owner view of a scenario for fast repeated utility
/// evaluation.
#[derive(Debug, Clone)]
pub struct OwnerModel {
    side: Side,
    n: usize,
    max_distance: f64,
    type_of: Vec<usize>,
    groups: Vec<TypeGroup>,
    preferred_actions: Vec<bool>,
}

impl OwnerModel {
    pub fn new(s: &Scenario, owner: Side) -> Self {
        let preferred = &s.policy(owner).thresholds;
        let type_of = s.rel_of[owner.index()].clone();
        let groups = (0..s.num_types())
            .map(|r| {
                let mut members: Vec<(usize, f64)> = (0..s.num_targets())
                    .filter(|&i| type_of[i] == r)
                    .map(|i| (i, s.intimacy(owner, i)))
                    .collect();
                members.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));

                let pref = preferred[r];
                let mut candidates: Vec<f64> = vec![pref, 0.0, s.max_intimacy];
                candidates.extend(members.iter().map(|m| m.1));
                candidates.sort_by(f64::total_cmp);
                candidates.dedup();

                let mut cuts: Vec<Cut> = Vec::new();
                for theta in candidates {
                    let below = members.partition_point(|m| m.1 < theta);
                    let offset = (theta - pref).abs();
                    match cuts.last_mut() {
                        Some(last) if last.below == below => {
                            // Candidates ascend, so an equal offset keeps the smaller threshold.
                            if offset < last.offset {
                                last.threshold = theta;
                                last.offset = offset;
                            }
                        }
                        _ => cuts.push(Cut {
                            below,
                            threshold: theta,
                            offset,
                        }),
                    }
                }
                TypeGroup { members, cuts }
            })
            .collect();
        OwnerModel {
            side: owner,
            n: s.num_targets(),
            max_distance: s.max_distance(),
            type_of,
            groups,
            preferred_actions: preferred_vector(s, owner).0,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn num_types(&self) -> usize {
        self.groups.len()
    }

    pub fn type_of(&self, target: usize) -> usize {
        self.type_of[target]
    }

    pub fn preferred_actions(&self) -> &[bool] {
        &self.preferred_actions
    }

    /// Fills undecided entries with this owner's preferred action.
    pub fn complete(&self, t: &PartialActionVector) -> Vec<bool> {
        assert_eq!(t.len(), self.n, "partial vector length");
        t.0.iter()
            .zip(&self.preferred_actions)
            .map(|(e, &pref)| e.unwrap_or(pref))
            .collect()
    }

    pub fn fit_type(&self, r: usize, actions: &[bool]) -> TypeFit {
        let group = &self.groups[r];
        let ones_total = group.members.iter().filter(|m| actions[m.0]).count();
        let zeros_total = group.members.len() - ones_total;

        let mut best: Option<TypeFit> = None;
        let (mut k, mut ones_below, mut zeros_below) = (0usize, 0usize, 0usize);
        for cut in &group.cuts {
            while k < cut.below {
                if actions[group.members[k].0] {
                    ones_below += 1;
                } else {
                    zeros_below += 1;
                }
                k += 1;
            }
            // Granted targets below the threshold and denied ones at or above it.
            let exceptions = ones_below + (zeros_total - zeros_below);
            let candidate = TypeFit {
                exceptions,
                threshold: cut.threshold,
                offset: cut.offset,
            };
            best = Some(match best {
                None => candidate,
                Some(b) => {
                    if (candidate.exceptions, candidate.offset, candidate.threshold)
                        < (b.exceptions, b.offset, b.threshold)
                    {
                        candidate
                    } else {
                        b
                    }
                }
            });
        }
        best.expect("grid always contains 0 and Y")
    }

    pub fn fit_all(&self, actions: &[bool]) -> Vec<TypeFit> {
        assert_eq!(actions.len(), self.n, "action vector length");
        (0..self.groups.len()).map(|r| self.fit_type(r, actions)).collect()
    }

    /// Combines per-type fits into the utility value.
    pub fn score(&self, fits: &[TypeFit]) -> f64 {
        let exceptions: usize = fits.iter().map(|f| f.exceptions).sum();
        let dist = fits.iter().map(|f| f.offset * f.offset).sum::<f64>().sqrt();
        let lambda = 1.0 - exceptions as f64 / self.n as f64;
        lambda * (self.max_distance - dist)
    }

    pub fn utility(&self, actions: &[bool]) -> f64 {
        self.score(&self.fit_all(actions))
    }

    pub fn synthesize(&self, actions: &[bool]) -> PrivacyPolicy {
        let fits = self.fit_all(actions);
        let mut policy = PrivacyPolicy::new(fits.iter().map(|f| f.threshold).collect());
        for (group, fit) in self.groups.iter().zip(&fits) {
            for &(i, x) in &group.members {
                if (x >= fit.threshold) != actions[i] {
                    policy.exceptions.insert(i);
                }
            }
        }
        policy
    }
}

/// Mutable assignment with cached per-type fits, for search loops that
/// change one entry at a time.
#[derive(Debug, Clone)]
pub struct UtilityTracker<'m> {
    model: &'m OwnerModel,
    actions: Vec<bool>,
    fits: Vec<TypeFit>,
}

impl<'m> UtilityTracker<'m> {
    pub fn new(model: &'m OwnerModel, actions: Vec<bool>) -> Self {
        let fits = model.fit_all(&actions);
        UtilityTracker { model, actions, fits }
    }

    /// Tracker over a partial vector completed with the owner's preferences.
    pub fn from_partial(model: &'m OwnerModel, t: &PartialActionVector) -> Self {
        Self::new(model, model.complete(t))
    }

    pub fn actions(&self) -> &[bool] {
        &self.actions
    }

    pub fn utility(&self) -> f64 {
        self.model.score(&self.fits)
    }

    pub fn set(&mut self, i: usize, value: bool) {
        if self.actions[i] != value {
            self.actions[i] = value;
            let r = self.model.type_of(i);
            self.fits[r] = self.model.fit_type(r, &self.actions);
        }
    }

    /// Changes an entry without refitting; the caller must `refit` its type.
    pub fn set_deferred(&mut self, i: usize, value: bool) -> usize {
        self.actions[i] = value;
        self.model.type_of(i)
    }

    pub fn refit(&mut self, r: usize) {
        self.fits[r] = self.model.fit_type(r, &self.actions);
    }

    /// Utility with entry `i` set to `value`, leaving the tracker unchanged.
    pub fn probe(&mut self, i: usize, value: bool) -> f64 {
        if self.actions[i] == value {
            return self.utility();
        }
        let r = self.model.type_of(i);
        self.actions[i] = value;
        let fit = self.model.fit_type(r, &self.actions);
        self.actions[i] = !value;
        let saved = std::mem::replace(&mut self.fits[r], fit);
        let u = self.model.score(&self.fits);
        self.fits[r] = saved;
        u
    }
}
