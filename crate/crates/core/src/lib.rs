//! Negotiation of shared-item privacy policies between two agents.
//!
//! Each agent holds a relationship-based policy (per-type intimacy thresholds
//! plus exceptions). When the policies disagree on some targets, the agents
//! agree on the action vector that maximizes the product of their utilities,
//! either exactly ([`engine`]) or approximately ([`heuristics`]). [`bench`]
//! generates random instances and measures the trade-offs.

pub mod bench;
pub mod engine;
pub mod float;
pub mod heuristics;
pub mod model;
pub mod policy;

pub use engine::{enumerate_deals, negotiate_exhaustive, EngineConfig};
pub use heuristics::{
    fix_by_distance, greedy_complete, negotiate_distance, negotiate_greedy, negotiate_greedy_bnb, AnytimeBudget,
    DistanceHeuristicConfig,
};
pub use model::{
    load_scenario, save_scenario, ActionVector, ConflictSet, NegotiationResult, PartialActionVector, PrivacyPolicy,
    Scenario, ScenarioError, SearchStats, Side, Violation,
};
pub use policy::{detect_conflicts, distance, induce, partial_utility, synthesize_policy, utility};
