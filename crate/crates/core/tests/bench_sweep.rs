use polneg::bench::{
    generate, run_sweep, scenario_seed, CsvSink, ExperimentRecord, GeneratorConfig, SolverSpec, SweepConfig, CSV_HEADER,
};
use polneg::{detect_conflicts, AnytimeBudget};

fn sweep(targets: Vec<usize>, reps: usize, solvers: Vec<SolverSpec>) -> SweepConfig {
    SweepConfig {
        target_counts: targets,
        repetitions: reps,
        solvers,
        base_seed: 11,
        ..Default::default()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

#[test]
fn conflict_rate_matches_the_generator_law() {
    // Integer values on 0..=10: a target conflicts when exactly one side's
    // intimacy clears its own uniformly drawn threshold. P(x >= t) = 6/11,
    // so P(conflict) = 2 * 6/11 * 5/11 = 60/121.
    let n = 50;
    let expected = n as f64 * 60.0 / 121.0;
    let observed = mean((0..1000).map(|rep| {
        let s = generate(&GeneratorConfig {
            num_targets: n,
            seed: scenario_seed(3, n, rep),
            require_conflict: false,
            ..Default::default()
        })
        .unwrap();
        detect_conflicts(&s).len() as f64
    }));
    assert!(
        (observed - expected).abs() < 1.0,
        "observed {observed}, expected {expected}"
    );
}

#[test]
fn csv_is_reproducible_apart_from_timing() {
    let cfg = sweep(
        vec![6, 12],
        15,
        vec![
            SolverSpec::Exhaustive,
            SolverSpec::Distance(1.0),
            SolverSpec::Greedy,
            SolverSpec::GreedyBnb(AnytimeBudget::nodes(50)),
        ],
    );
    let render = || {
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        run_sweep(&cfg, &mut sink).unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        let wall = CSV_HEADER.iter().position(|h| *h == "wall_ns").unwrap();
        text.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(wall);
                f.join(",")
            })
            .collect::<Vec<_>>()
    };
    let first = render();
    assert_eq!(first.len(), 1 + 2 * 15 * 4);
    assert_eq!(first, render());
}

#[test]
fn loss_against_exhaustive() {
    let cfg = sweep(
        vec![8, 14],
        40,
        vec![
            SolverSpec::Exhaustive,
            SolverSpec::Greedy,
            SolverSpec::GreedyBnb(AnytimeBudget::unbounded()),
        ],
    );
    let mut records: Vec<ExperimentRecord> = Vec::new();
    let aggregates = run_sweep(&cfg, &mut records).unwrap();
    for r in &records {
        let loss = r.utility_loss_pct.expect("every instance has an optimum");
        assert!((0.0..=100.0).contains(&loss));
        if r.solver_id == "exhaustive" {
            assert_eq!(loss, 0.0);
        }
    }
    for n in [8, 14] {
        let loss = |id: &str| {
            aggregates
                .iter()
                .find(|a| a.num_targets == n && a.solver_id == id)
                .unwrap()
                .loss_pct
                .unwrap()
                .mean
        };
        assert!(loss("greedybnb") <= loss("greedy") + 1e-9);
    }
}

#[test]
fn capped_instances_are_skipped() {
    let mut cfg = sweep(vec![30], 10, vec![SolverSpec::Exhaustive, SolverSpec::Greedy]);
    cfg.conflict_cap_for_exhaustive = 0;
    let mut records: Vec<ExperimentRecord> = Vec::new();
    run_sweep(&cfg, &mut records).unwrap();
    assert!(records
        .iter()
        .all(|r| r.solver_id == "greedy" && r.utility_loss_pct.is_none()));
    assert_eq!(records.len(), 10);
}

#[test]
fn distance_work_grows_with_threshold() {
    let phis = [0.5, 1.0, 2.0, 3.0, 4.0];
    let cfg = sweep(vec![16], 60, phis.iter().map(|&p| SolverSpec::Distance(p)).collect());
    let mut records: Vec<ExperimentRecord> = Vec::new();
    let agg = run_sweep(&cfg, &mut records).unwrap();
    let means: Vec<f64> = agg.iter().map(|a| a.vectors_evaluated.mean).collect();
    assert_eq!(means.len(), phis.len());
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn empty_configurations_are_rejected() {
    let mut sink: Vec<ExperimentRecord> = Vec::new();
    assert!(run_sweep(&sweep(vec![5], 0, vec![SolverSpec::Greedy]), &mut sink).is_err());
    assert!(run_sweep(&sweep(vec![5], 3, vec![]), &mut sink).is_err());
}
