//! The `polneg` command: solve scenario files, generate random ones, and run
//! benchmark sweeps.
//!
//! Everything goes through [`run`], which returns the process exit code:
//! 0 on success, 2 for usage errors, 3 for bad data or I/O failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use polneg::bench::{
    generate, run_sweep, Aggregate, CsvSink, GenerateError, GeneratorConfig, SolverSpec, SweepConfig, ValueDistribution,
};
use polneg::engine::conflict_partial;
use polneg::{
    detect_conflicts, fix_by_distance, load_scenario, negotiate_distance, negotiate_exhaustive, negotiate_greedy,
    negotiate_greedy_bnb, save_scenario, ActionVector, AnytimeBudget, EngineConfig, NegotiationResult, PrivacyPolicy,
    Scenario, ScenarioError, SearchStats, Side,
};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// `solve` refuses to enumerate more free entries than this.
pub const MAX_SOLVE_ENUMERATION: usize = 40;
/// Largest instance `gen` and `bench` will build.
pub const MAX_TARGETS: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "polneg", version, about = "Negotiate privacy policies for shared items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Negotiate one scenario file and report the agreed deal.
    Solve(SolveArgs),
    /// Write a random scenario file.
    Gen(GenArgs),
    /// Run a seeded sweep over random scenarios and write per-run CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Exhaustive,
    Distance,
    Greedy,
    Greedybnb,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    solver: SolverKind,
    /// Importance threshold for the distance solver.
    #[arg(long)]
    phi: Option<f64>,
    /// Wall-clock budget for greedybnb, in milliseconds.
    #[arg(long)]
    time_ms: Option<u64>,
    /// Greedy-completion budget for greedybnb.
    #[arg(long)]
    node_limit: Option<u64>,
    /// Seed for the coin that settles equal-product proposals.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Dist {
    Integer,
    Real,
}

impl From<Dist> for ValueDistribution {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Integer => ValueDistribution::Integer,
            Dist::Real => ValueDistribution::Real,
        }
    }
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    /// Number of relationship types.
    #[arg(long, default_value_t = 3)]
    types: usize,
    /// Upper end of the intimacy scale.
    #[arg(long, default_value_t = 10.0)]
    max_intimacy: f64,
    #[arg(long, value_enum, default_value = "integer")]
    intimacy_dist: Dist,
    #[arg(long, value_enum, default_value = "integer")]
    threshold_dist: Dist,
    /// Accept instances where the preferred policies already agree.
    #[arg(long)]
    no_require_conflict: bool,
}

impl GeneratorArgs {
    fn config(&self, num_targets: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            num_targets,
            num_relationship_types: self.types,
            max_intimacy: self.max_intimacy,
            intimacy_distribution: self.intimacy_dist.into(),
            threshold_distribution: self.threshold_dist.into(),
            seed,
            require_conflict: !self.no_require_conflict,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of targets.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Target counts: `lo:hi:step`, or a comma-separated list.
    #[arg(long, default_value = "10:40:10")]
    targets: String,
    /// Repetitions per target count.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Comma-separated solvers: exhaustive, greedy, greedybnb, distance:<phi>,
    /// greedybnb:<ms>ms, greedybnb:<k>nodes.
    #[arg(long, default_value = "exhaustive,greedy,greedybnb")]
    solvers: String,
    /// Adds one distance solver per importance threshold.
    #[arg(long, value_delimiter = ',')]
    phis: Vec<f64>,
    /// Adds one time-bounded greedybnb solver per cutoff.
    #[arg(long, value_delimiter = ',')]
    cutoffs_ms: Vec<u64>,
    /// Base seed for the scenario seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Enumerating solvers skip instances with more free entries than this.
    #[arg(long, default_value_t = 22)]
    exhaustive_cap: usize,
    #[command(flatten)]
    generator: GeneratorArgs,
}

/// A policy with names in place of indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyReport {
    pub thresholds: IndexMap<String, f64>,
    pub exceptions: Vec<String>,
}

impl PolicyReport {
    fn new(s: &Scenario, p: &PrivacyPolicy) -> Self {
        PolicyReport {
            thresholds: s
                .relationship_types
                .iter()
                .cloned()
                .zip(p.thresholds.iter().copied())
                .collect(),
            exceptions: p.exceptions.iter().map(|&i| s.targets[i].clone()).collect(),
        }
    }
}

/// What `solve --json` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub chosen: ActionVector,
    pub utility_a: f64,
    pub utility_b: f64,
    pub product: f64,
    pub policy_a: PolicyReport,
    pub policy_b: PolicyReport,
    pub stats: SearchStats,
}

impl Report {
    pub fn new(s: &Scenario, r: &NegotiationResult) -> Self {
        Report {
            chosen: r.chosen.clone(),
            utility_a: r.utility_a,
            utility_b: r.utility_b,
            product: r.product,
            policy_a: PolicyReport::new(s, &r.policy_for_a),
            policy_b: PolicyReport::new(s, &r.policy_for_b),
            stats: r.stats.clone(),
        }
    }
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let (name, outcome) = match cli.command {
        Command::Solve(a) => ("solve", solve(a, out)),
        Command::Gen(a) => ("gen", gen(a, out)),
        Command::Bench(a) => ("bench", bench(a, out)),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            if f.code == EXIT_USAGE {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    let _ = writeln!(err, "\n{}\n\nFor more information, try '--help'.", sub.render_usage());
                }
            }
            f.code
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    load_scenario(io::BufReader::new(file)).map_err(|e| match e {
        ScenarioError::Invalid(violations) => {
            let mut msg = format!("{} is not a valid scenario:", path.display());
            for v in violations {
                let _ = write!(msg, "\n  {v}");
            }
            Failure::data(msg)
        }
        other => Failure::data(format!("{}: {other}", path.display())),
    })
}

fn refuse_large(free: usize) -> Result<(), Failure> {
    if free > MAX_SOLVE_ENUMERATION {
        return Err(Failure::data(format!(
            "refusing to enumerate 2^{free} deals (limit 2^{MAX_SOLVE_ENUMERATION}); use greedy or greedybnb"
        )));
    }
    Ok(())
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.phi.is_some() && a.solver != SolverKind::Distance {
        return Err(Failure::usage("--phi only applies to --solver distance"));
    }
    if (a.time_ms.is_some() || a.node_limit.is_some()) && a.solver != SolverKind::Greedybnb {
        return Err(Failure::usage(
            "--time-ms and --node-limit only apply to --solver greedybnb",
        ));
    }
    let phi = match (a.solver, a.phi) {
        (SolverKind::Distance, None) => return Err(Failure::usage("--solver distance requires --phi <real>")),
        (_, Some(phi)) if !(phi.is_finite() && phi >= 0.0) => {
            return Err(Failure::usage(format!(
                "--phi must be a finite non-negative number, got {phi}"
            )))
        }
        (_, phi) => phi.unwrap_or(0.0),
    };

    let s = read_scenario(&a.scenario)?;
    let cfg = EngineConfig::seeded(a.seed);
    let result = match a.solver {
        SolverKind::Exhaustive => {
            refuse_large(conflict_partial(&s).undecided_count())?;
            negotiate_exhaustive(&s, &cfg)
        }
        SolverKind::Distance => {
            refuse_large(fix_by_distance(&s, &detect_conflicts(&s), phi).undecided_count())?;
            negotiate_distance(&s, phi, &cfg)
        }
        SolverKind::Greedy => negotiate_greedy(&s, &cfg),
        SolverKind::Greedybnb => {
            let budget = AnytimeBudget {
                wall_time_limit: a.time_ms.map(Duration::from_millis),
                node_limit: a.node_limit,
            };
            negotiate_greedy_bnb(&s, budget, &cfg)
        }
    };

    let report = Report::new(&s, &result);
    if a.json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::data(e.to_string()))?;
        writeln!(out, "{text}")?;
    } else {
        out.write_all(human_report(&s, &result, &report).as_bytes())?;
    }
    Ok(())
}

fn human_report(s: &Scenario, r: &NegotiationResult, report: &Report) -> String {
    let mut t = String::new();
    let names = |pick: bool| -> String {
        let v: Vec<&str> = (0..s.num_targets())
            .filter(|&i| r.chosen.as_slice()[i] == pick)
            .map(|i| s.targets[i].as_str())
            .collect();
        if v.is_empty() {
            "-".into()
        } else {
            v.join(", ")
        }
    };
    let _ = writeln!(t, "chosen     {}", r.chosen);
    let _ = writeln!(t, "  granted  {}", names(true));
    let _ = writeln!(t, "  denied   {}", names(false));
    for side in Side::BOTH {
        let _ = writeln!(t, "utility {}  {}", s.negotiators[side.index()], r.utility(side));
    }
    let _ = writeln!(t, "product    {}", r.product);
    if r.settled_by_coin {
        let _ = writeln!(
            t,
            "(proposals {} and {} tied; settled by coin)",
            r.proposals[0], r.proposals[1]
        );
    }
    for (side, p) in [(Side::A, &report.policy_a), (Side::B, &report.policy_b)] {
        let _ = writeln!(t, "policy for {}", s.negotiators[side.index()]);
        let width = s.relationship_types.iter().map(String::len).max().unwrap_or(0);
        for (ty, theta) in &p.thresholds {
            let _ = writeln!(t, "  {ty:<width$}  threshold {theta}");
        }
        let exceptions = if p.exceptions.is_empty() {
            "none".to_string()
        } else {
            p.exceptions.join(", ")
        };
        let _ = writeln!(t, "  exceptions: {exceptions}");
    }
    let st = &r.stats;
    let _ = writeln!(
        t,
        "vectors evaluated {}, greedy calls {}, wall time {:?}, budget exhausted {}",
        st.vectors_evaluated,
        st.greedy_calls,
        st.wall_time,
        if st.budget_exhausted { "yes" } else { "no" }
    );
    t
}

fn check_generator(g: &GeneratorArgs) -> Result<(), Failure> {
    if g.types == 0 || g.types > MAX_TARGETS {
        return Err(Failure::usage(format!("--types must be between 1 and {MAX_TARGETS}")));
    }
    if !(g.max_intimacy.is_finite() && g.max_intimacy > 0.0) {
        return Err(Failure::usage("--max-intimacy must be a positive number"));
    }
    Ok(())
}

fn generate_error(e: GenerateError) -> Failure {
    match e {
        GenerateError::Config(m) => Failure::usage(m),
        other => Failure::data(other.to_string()),
    }
}

/// Writes through a temporary file in the destination directory, so a
/// failure never leaves partial output behind.
fn write_atomically<F>(path: &Path, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut io::BufWriter<tempfile::NamedTempFile>) -> Result<(), Failure>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Failure::data(format!("cannot write into {}: {e}", dir.display())))?;
    let mut w = io::BufWriter::new(tmp);
    body(&mut w)?;
    let tmp = w.into_inner().map_err(|e| Failure::data(e.error().to_string()))?;
    tmp.persist(path)
        .map_err(|e| Failure::data(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<(), Failure> {
    check_generator(&a.generator)?;
    if a.n == 0 || a.n > MAX_TARGETS {
        return Err(Failure::usage(format!("--n must be between 1 and {MAX_TARGETS}")));
    }
    let s = generate(&a.generator.config(a.n, a.seed)).map_err(generate_error)?;
    let write = |w: &mut dyn Write| -> Result<(), Failure> {
        save_scenario(&s, &mut *w).map_err(|e| Failure::data(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    };
    match &a.out {
        Some(path) => write_atomically(path, |w| write(w)),
        None => write(out),
    }
}

/// `lo:hi:step` (inclusive) or `a,b,c`.
fn parse_targets(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || {
        Failure::usage(format!(
            "bad --targets {spec:?}; expected lo:hi:step or a comma-separated list"
        ))
    };
    let counts: Vec<usize> = if spec.contains(':') {
        let parts: Vec<usize> = spec
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [lo, hi, step] = parts[..] else { return Err(bad()) };
        if step == 0 || lo > hi {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if counts.is_empty() || counts.iter().any(|&n| n == 0 || n > MAX_TARGETS) {
        return Err(Failure::usage(format!(
            "target counts must be between 1 and {MAX_TARGETS}"
        )));
    }
    Ok(counts)
}

fn parse_solvers(a: &BenchArgs) -> Result<Vec<SolverSpec>, Failure> {
    let mut solvers: Vec<SolverSpec> = Vec::new();
    for part in a.solvers.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        solvers.push(part.parse().map_err(|e| Failure::usage(format!("--solvers: {e}")))?);
    }
    for &phi in &a.phis {
        if !(phi.is_finite() && phi >= 0.0) {
            return Err(Failure::usage(format!("--phis: bad importance threshold {phi}")));
        }
        solvers.push(SolverSpec::Distance(phi));
    }
    for &ms in &a.cutoffs_ms {
        solvers.push(SolverSpec::GreedyBnb(AnytimeBudget::wall_time(Duration::from_millis(
            ms,
        ))));
    }
    if solvers.is_empty() {
        return Err(Failure::usage("no solvers given"));
    }
    let mut ids: Vec<String> = solvers.iter().map(ToString::to_string).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::usage(format!("solver {} listed twice", w[0])));
    }
    Ok(solvers)
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), Failure> {
    check_generator(&a.generator)?;
    let target_counts = parse_targets(&a.targets)?;
    let solvers = parse_solvers(&a)?;
    if a.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    if a.exhaustive_cap > MAX_SOLVE_ENUMERATION {
        return Err(Failure::usage(format!(
            "--exhaustive-cap must be at most {MAX_SOLVE_ENUMERATION}"
        )));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    match a.jobs {
        Some(0) => return Err(Failure::usage("--jobs must be at least 1")),
        Some(k) => pool = pool.num_threads(k),
        None => {}
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::data(format!("cannot start worker pool: {e}")))?;

    let cfg = SweepConfig {
        target_counts,
        repetitions: a.reps,
        solvers,
        conflict_cap_for_exhaustive: a.exhaustive_cap,
        base_seed: a.seed,
        generator: a.generator.config(1, 0),
    };
    let mut aggregates = Vec::new();
    write_atomically(&a.out, |w| {
        let mut sink = CsvSink::new(w)?;
        aggregates = pool.install(|| run_sweep(&cfg, &mut sink)).map_err(|e| match e {
            polneg::bench::BenchError::Config(m) => Failure::usage(m),
            polneg::bench::BenchError::Generate(GenerateError::Config(m)) => Failure::usage(m),
            other => Failure::data(other.to_string()),
        })?;
        sink.into_inner()?;
        Ok(())
    })?;
    out.write_all(aggregate_table(&aggregates).as_bytes())?;
    Ok(())
}

/// Mean and tail columns per `(n, solver)`.
pub fn aggregate_table(rows: &[Aggregate]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:>6}  {:<22} {:>6}  {:>10}  {:>8}  {:>12}  {:>10}  {:>8}  {:>8}",
        "n", "solver", "runs", "product", "min_u", "vectors", "time_ms", "loss%", "p95_loss"
    );
    for a in rows {
        let (loss, p95) = match a.loss_pct {
            Some(d) => (format!("{:.2}", d.mean), format!("{:.2}", d.p95)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            t,
            "{:>6}  {:<22} {:>6}  {:>10.3}  {:>8.3}  {:>12.1}  {:>10.3}  {:>8}  {:>8}",
            a.num_targets,
            a.solver_id,
            a.records,
            a.product.mean,
            a.min_utility.mean,
            a.vectors_evaluated.mean,
            a.wall_time_ns.mean / 1e6,
            loss,
            p95
        );
    }
    t
}
