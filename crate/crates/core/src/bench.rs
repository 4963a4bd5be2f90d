//! Random instance generation and solver sweeps.
//!
//! A sweep generates one scenario per `(target count, repetition)`, runs every
//! configured solver on that same scenario and emits one record per solver.
//! Utility loss is measured against the exhaustive optimum of the same
//! instance when the exhaustive solver is configured and was affordable.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{conflict_partial, negotiate_exhaustive, EngineConfig};
use crate::heuristics::{fix_by_distance, negotiate_distance, negotiate_greedy, negotiate_greedy_bnb, AnytimeBudget};
use crate::model::{NegotiationResult, PrivacyPolicy, Scenario};
use crate::policy::detect_conflicts;

/// Attempts before `generate` gives up on finding a conflicting instance.
pub const MAX_RESAMPLES: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueDistribution {
    /// Uniform over the integers `0..=floor(Y)`.
    Integer,
    /// Uniform over the reals `[0, Y]`.
    Real,
}

impl FromStr for ValueDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "integer" | "int" => Ok(ValueDistribution::Integer),
            "real" => Ok(ValueDistribution::Real),
            other => Err(format!("unknown distribution {other:?} (expected integer or real)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub num_targets: usize,
    pub num_relationship_types: usize,
    pub max_intimacy: f64,
    pub intimacy_distribution: ValueDistribution,
    pub threshold_distribution: ValueDistribution,
    pub seed: u64,
    pub require_conflict: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_targets: 10,
            num_relationship_types: 3,
            max_intimacy: 10.0,
            intimacy_distribution: ValueDistribution::Integer,
            threshold_distribution: ValueDistribution::Integer,
            seed: 0,
            require_conflict: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("no conflicting instance found after {0} attempts")]
    ResampleLimit(u64),
}

fn draw(rng: &mut ChaCha8Rng, dist: ValueDistribution, max: f64) -> f64 {
    match dist {
        ValueDistribution::Integer => rng.gen_range(0..=max.floor() as u64) as f64,
        ValueDistribution::Real => rng.gen_range(0.0..=max),
    }
}

/// Draws a random scenario. Preferred policies have no exceptions.
pub fn generate(cfg: &GeneratorConfig) -> Result<Scenario, GenerateError> {
    if cfg.num_targets == 0 {
        return Err(GenerateError::Config("num_targets must be at least 1".into()));
    }
    if cfg.num_relationship_types == 0 {
        return Err(GenerateError::Config(
            "num_relationship_types must be at least 1".into(),
        ));
    }
    if !(cfg.max_intimacy.is_finite() && cfg.max_intimacy > 0.0) {
        return Err(GenerateError::Config(format!(
            "max_intimacy must be positive, got {}",
            cfg.max_intimacy
        )));
    }
    let n = cfg.num_targets;
    let k = cfg.num_relationship_types;
    let y = cfg.max_intimacy;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for _ in 0..MAX_RESAMPLES {
        let mut intimacy: [Vec<f64>; 2] = Default::default();
        let mut rel_of: [Vec<usize>; 2] = Default::default();
        for side in 0..2 {
            intimacy[side] = (0..n).map(|_| draw(&mut rng, cfg.intimacy_distribution, y)).collect();
            rel_of[side] = (0..n).map(|_| rng.gen_range(0..k)).collect();
        }
        let policies =
            [0, 1].map(|_| PrivacyPolicy::new((0..k).map(|_| draw(&mut rng, cfg.threshold_distribution, y)).collect()));
        let s = Scenario {
            negotiators: ["a".into(), "b".into()],
            targets: (1..=n).map(|i| format!("t{i}")).collect(),
            relationship_types: (1..=k).map(|r| format!("r{r}")).collect(),
            rel_of,
            intimacy,
            max_intimacy: y,
            policies,
        };
        if !cfg.require_conflict || !detect_conflicts(&s).is_empty() {
            return Ok(s);
        }
    }
    Err(GenerateError::ResampleLimit(MAX_RESAMPLES))
}

/// A solver configuration as named on the command line and in CSV output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverSpec {
    Exhaustive,
    Distance(f64),
    Greedy,
    GreedyBnb(AnytimeBudget),
}

impl fmt::Display for SolverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverSpec::Exhaustive => f.write_str("exhaustive"),
            SolverSpec::Distance(phi) => write!(f, "distance:{phi}"),
            SolverSpec::Greedy => f.write_str("greedy"),
            SolverSpec::GreedyBnb(b) => {
                f.write_str("greedybnb")?;
                if let Some(t) = b.wall_time_limit {
                    write!(f, ":{}ms", t.as_millis())?;
                }
                if let Some(n) = b.node_limit {
                    write!(f, ":{n}nodes")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for SolverSpec {
    type Err = String;

    /// `exhaustive`, `greedy`, `distance:<phi>`, `greedybnb`,
    /// `greedybnb:<ms>ms`, `greedybnb:<k>nodes`, or both limits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default();
        match head {
            "exhaustive" | "greedy" if parts.clone().next().is_some() => Err(format!("{head} takes no parameter")),
            "exhaustive" => Ok(SolverSpec::Exhaustive),
            "greedy" => Ok(SolverSpec::Greedy),
            "distance" => {
                let phi = parts
                    .next()
                    .ok_or("distance needs an importance threshold, e.g. distance:0.5")?;
                let phi: f64 = phi.parse().map_err(|_| format!("bad importance threshold {phi:?}"))?;
                if !(phi >= 0.0 && phi.is_finite()) || parts.next().is_some() {
                    return Err(format!("bad distance solver {s:?}"));
                }
                Ok(SolverSpec::Distance(phi))
            }
            "greedybnb" => {
                let mut budget = AnytimeBudget::unbounded();
                for p in parts {
                    if let Some(ms) = p.strip_suffix("ms") {
                        let ms: u64 = ms.parse().map_err(|_| format!("bad time limit {p:?}"))?;
                        budget.wall_time_limit = Some(Duration::from_millis(ms));
                    } else if let Some(k) = p.strip_suffix("nodes") {
                        let k: u64 = k.parse().map_err(|_| format!("bad node limit {p:?}"))?;
                        budget.node_limit = Some(k);
                    } else {
                        return Err(format!("bad greedybnb limit {p:?} (expected <ms>ms or <k>nodes)"));
                    }
                }
                Ok(SolverSpec::GreedyBnb(budget))
            }
            other => Err(format!("unknown solver {other:?}")),
        }
    }
}

impl SolverSpec {
    /// Number of free entries an exhaustive-style solver would enumerate, if
    /// the solver enumerates at all.
    pub fn enumerated_bits(&self, s: &Scenario) -> Option<usize> {
        match self {
            SolverSpec::Exhaustive => Some(conflict_partial(s).undecided_count()),
            SolverSpec::Distance(phi) => Some(fix_by_distance(s, &detect_conflicts(s), *phi).undecided_count()),
            _ => None,
        }
    }

    pub fn run(&self, s: &Scenario, cfg: &EngineConfig) -> NegotiationResult {
        match *self {
            SolverSpec::Exhaustive => negotiate_exhaustive(s, cfg),
            SolverSpec::Distance(phi) => negotiate_distance(s, phi, cfg),
            SolverSpec::Greedy => negotiate_greedy(s, cfg),
            SolverSpec::GreedyBnb(budget) => negotiate_greedy_bnb(s, budget, cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub target_counts: Vec<usize>,
    pub repetitions: usize,
    pub solvers: Vec<SolverSpec>,
    /// Enumerating solvers are skipped above this many free entries.
    pub conflict_cap_for_exhaustive: usize,
    pub base_seed: u64,
    /// Template for every instance; `num_targets` and `seed` are overridden.
    pub generator: GeneratorConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            target_counts: (10..=200).step_by(10).collect(),
            repetitions: 1000,
            solvers: vec![
                SolverSpec::Exhaustive,
                SolverSpec::Greedy,
                SolverSpec::GreedyBnb(AnytimeBudget::unbounded()),
            ],
            conflict_cap_for_exhaustive: 22,
            base_seed: 0,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub scenario_seed: u64,
    pub num_targets: usize,
    pub num_conflicts: usize,
    pub solver_id: String,
    pub product: f64,
    pub utility_a: f64,
    pub utility_b: f64,
    pub min_utility: f64,
    pub utility_loss_pct: Option<f64>,
    pub vectors_evaluated: u64,
    pub wall_time_ns: u64,
    pub budget_exhausted: bool,
}

pub const CSV_HEADER: [&str; 12] = [
    "seed",
    "n_targets",
    "n_conflicts",
    "solver",
    "product",
    "utility_a",
    "utility_b",
    "min_utility",
    "loss_pct",
    "vectors",
    "wall_ns",
    "budget_exhausted",
];

impl ExperimentRecord {
    pub fn csv_fields(&self) -> [String; 12] {
        [
            self.scenario_seed.to_string(),
            self.num_targets.to_string(),
            self.num_conflicts.to_string(),
            self.solver_id.clone(),
            format_sig9(self.product),
            format_sig9(self.utility_a),
            format_sig9(self.utility_b),
            format_sig9(self.min_utility),
            self.utility_loss_pct.map(format_sig9).unwrap_or_default(),
            self.vectors_evaluated.to_string(),
            self.wall_time_ns.to_string(),
            self.budget_exhausted.to_string(),
        ]
    }
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros dropped.
pub fn format_sig9(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let fixed = format!("{:.*}", (DIGITS - 1 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub trait RecordSink {
    fn write(&mut self, record: &ExperimentRecord) -> std::io::Result<()>;
}

impl RecordSink for Vec<ExperimentRecord> {
    fn write(&mut self, record: &ExperimentRecord) -> std::io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes records in the fixed CSV layout.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> std::io::Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        writer.write_record(CSV_HEADER).map_err(std::io::Error::other)?;
        Ok(CsvSink { writer })
    }

    pub fn into_inner(self) -> std::io::Result<W> {
        self.writer.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> RecordSink for CsvSink<W> {
    fn write(&mut self, record: &ExperimentRecord) -> std::io::Result<()> {
        self.writer
            .write_record(record.csv_fields())
            .map_err(std::io::Error::other)?;
        self.writer.flush()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("failed to write record: {0}")]
    Sink(#[from] std::io::Error),
    #[error("invalid sweep configuration: {0}")]
    Config(String),
}

/// Seed of the scenario for one `(target count, repetition)` cell.
pub fn scenario_seed(base: u64, num_targets: usize, repetition: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(base ^ splitmix(num_targets as u64)) ^ repetition as u64)
}

/// Runs every solver on one instance and returns its records in solver order.
pub fn run_instance(
    s: &Scenario,
    scenario_seed: u64,
    solvers: &[SolverSpec],
    conflict_cap: usize,
) -> Vec<ExperimentRecord> {
    let num_conflicts = detect_conflicts(s).len();
    let cfg = EngineConfig::seeded(scenario_seed);
    let mut records = Vec::with_capacity(solvers.len());
    let mut optimum: Option<f64> = None;
    for solver in solvers {
        if solver.enumerated_bits(s).is_some_and(|bits| bits > conflict_cap) {
            continue;
        }
        let r = solver.run(s, &cfg);
        if *solver == SolverSpec::Exhaustive {
            optimum = Some(r.product);
        }
        records.push(ExperimentRecord {
            scenario_seed,
            num_targets: s.num_targets(),
            num_conflicts,
            solver_id: solver.to_string(),
            product: r.product,
            utility_a: r.utility_a,
            utility_b: r.utility_b,
            min_utility: r.min_utility(),
            utility_loss_pct: None,
            vectors_evaluated: r.stats.vectors_evaluated,
            wall_time_ns: r.stats.wall_time.as_nanos().min(u128::from(u64::MAX)) as u64,
            budget_exhausted: r.stats.budget_exhausted,
        });
    }
    if let Some(best) = optimum {
        for rec in &mut records {
            rec.utility_loss_pct = Some(loss_pct(best, rec.product));
        }
    }
    records
}

/// Percentage of `optimum` lost by `product`, clamped to `[0, 100]`.
pub fn loss_pct(optimum: f64, product: f64) -> f64 {
    if optimum <= 0.0 {
        return 0.0;
    }
    (100.0 * (optimum - product) / optimum).clamp(0.0, 100.0)
}

/// Runs the sweep, emitting records in `(target count, repetition, solver)`
/// order regardless of how repetitions are scheduled on the rayon pool.
pub fn run_sweep(cfg: &SweepConfig, sink: &mut dyn RecordSink) -> Result<Vec<Aggregate>, BenchError> {
    if cfg.repetitions == 0 {
        return Err(BenchError::Config("repetitions must be at least 1".into()));
    }
    if cfg.solvers.is_empty() {
        return Err(BenchError::Config("no solvers configured".into()));
    }
    let mut all = Vec::new();
    for &n in &cfg.target_counts {
        let batch: Result<Vec<Vec<ExperimentRecord>>, GenerateError> = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                let seed = scenario_seed(cfg.base_seed, n, rep);
                let s = generate(&GeneratorConfig {
                    num_targets: n,
                    seed,
                    ..cfg.generator.clone()
                })?;
                Ok(run_instance(&s, seed, &cfg.solvers, cfg.conflict_cap_for_exhaustive))
            })
            .collect();
        for records in batch? {
            for r in records {
                sink.write(&r)?;
                all.push(r);
            }
        }
    }
    Ok(summarize(&all))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Distribution {
    fn of(mut xs: Vec<f64>) -> Distribution {
        assert!(!xs.is_empty());
        xs.sort_by(f64::total_cmp);
        let len = xs.len();
        let median = if len % 2 == 1 {
            xs[len / 2]
        } else {
            (xs[len / 2 - 1] + xs[len / 2]) / 2.0
        };
        // nearest rank
        let rank = ((0.95 * len as f64).ceil() as usize).clamp(1, len);
        Distribution {
            mean: xs.iter().sum::<f64>() / len as f64,
            median,
            p95: xs[rank - 1],
        }
    }
}

/// Per-`(target count, solver)` aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub num_targets: usize,
    pub solver_id: String,
    pub records: usize,
    pub product: Distribution,
    pub min_utility: Distribution,
    pub vectors_evaluated: Distribution,
    pub wall_time_ns: Distribution,
    /// Over records whose instance had an exhaustive optimum.
    pub loss_pct: Option<Distribution>,
}

/// Groups records by `(n, solver)` in order of first appearance.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(usize, &str)> = Vec::new();
    for r in records {
        let key = (r.num_targets, r.solver_id.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(n, solver)| {
            let group: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.num_targets == n && r.solver_id == solver)
                .collect();
            let col = |f: &dyn Fn(&ExperimentRecord) -> f64| Distribution::of(group.iter().map(|r| f(r)).collect());
            let losses: Vec<f64> = group.iter().filter_map(|r| r.utility_loss_pct).collect();
            Aggregate {
                num_targets: n,
                solver_id: solver.to_string(),
                records: group.len(),
                product: col(&|r| r.product),
                min_utility: col(&|r| r.min_utility),
                vectors_evaluated: col(&|r| r.vectors_evaluated as f64),
                wall_time_ns: col(&|r| r.wall_time_ns as f64),
                loss_pct: (!losses.is_empty()).then(|| Distribution::of(losses)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(67.5), "67.5");
        assert_eq!(format_sig9(100.0), "100");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(299.999999999), "300");
        assert_eq!(format_sig9(123456789012.0), "1.23456789e+11");
        assert_eq!(format_sig9(-2.5e-7), "-2.5e-07");
        assert_eq!(format_sig9(17.320508075688775), "17.3205081");
    }

    #[test]
    fn solver_specs_round_trip() {
        for text in [
            "exhaustive",
            "greedy",
            "distance:0.5",
            "distance:4",
            "greedybnb",
            "greedybnb:500ms",
            "greedybnb:100nodes",
        ] {
            let spec: SolverSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert!("distance".parse::<SolverSpec>().is_err());
        assert!("distance:-1".parse::<SolverSpec>().is_err());
        assert!("greedy:3".parse::<SolverSpec>().is_err());
        assert!("greedybnb:5s".parse::<SolverSpec>().is_err());
        assert!("magic".parse::<SolverSpec>().is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = GeneratorConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(
            crate::model::scenario_to_string(&a),
            crate::model::scenario_to_string(&b)
        );
        assert!(!detect_conflicts(&a).is_empty());
        assert!(a.validate().is_empty());
        assert!(a.intimacy.iter().flatten().all(|x| x.fract() == 0.0));
        assert!(a.policies.iter().all(|p| p.exceptions.is_empty()));
    }

    #[test]
    fn degenerate_config_hits_resample_limit() {
        // One target, one type, Y < 1: everything is 0, so both agents always grant.
        let cfg = GeneratorConfig {
            num_targets: 1,
            num_relationship_types: 1,
            max_intimacy: 0.5,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(GenerateError::ResampleLimit(_))));
        let relaxed = GeneratorConfig {
            require_conflict: false,
            ..cfg
        };
        assert!(generate(&relaxed).is_ok());
    }

    #[test]
    fn loss_is_clamped() {
        assert_eq!(loss_pct(100.0, 90.0), 10.0);
        assert_eq!(loss_pct(100.0, 100.0 + 1e-12), 0.0);
        assert_eq!(loss_pct(0.0, 0.0), 0.0);
    }

    #[test]
    fn summary_of_single_record() {
        let r = ExperimentRecord {
            scenario_seed: 1,
            num_targets: 10,
            num_conflicts: 4,
            solver_id: "greedy".into(),
            product: 250.0,
            utility_a: 12.5,
            utility_b: 20.0,
            min_utility: 12.5,
            utility_loss_pct: Some(3.0),
            vectors_evaluated: 21,
            wall_time_ns: 1000,
            budget_exhausted: false,
        };
        let agg = summarize(std::slice::from_ref(&r));
        assert_eq!(agg.len(), 1);
        let a = &agg[0];
        assert_eq!(a.records, 1);
        assert_eq!(
            a.product,
            Distribution {
                mean: 250.0,
                median: 250.0,
                p95: 250.0
            }
        );
        assert_eq!(a.min_utility.mean, 12.5);
        assert_eq!(a.vectors_evaluated.p95, 21.0);
        assert_eq!(a.loss_pct.unwrap().mean, 3.0);
    }

    #[test]
    fn csv_layout() {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        let cfg = SweepConfig {
            target_counts: vec![10],
            repetitions: 5,
            solvers: vec![SolverSpec::Exhaustive, SolverSpec::Greedy],
            ..Default::default()
        };
        run_sweep(&cfg, &mut sink).unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "seed,n_targets,n_conflicts,solver,product,utility_a,utility_b,min_utility,loss_pct,vectors,wall_ns,budget_exhausted");
        assert_eq!(lines.len(), 11);
        for pair in lines[1..].chunks(2) {
            assert!(pair[0].contains(",exhaustive,"));
            assert!(pair[1].contains(",greedy,"));
        }
    }
}
