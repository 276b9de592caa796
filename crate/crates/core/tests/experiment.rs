use rcmdp::epigraph::{BisectionConfig, SubroutineConfig};
use rcmdp::experiment::{
    metrics_from_returns, read_policies, read_rows, run_experiment, uniform_objective, Algorithm,
    ExperimentConfig, MetricRow,
};
use rcmdp::lagrange::LagrangeConfig;
use rcmdp::robust::robust_values;
use rcmdp::{Instance, Setting};

fn small_config(setting: Setting, seeds: Vec<u64>, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_setting(setting, seeds, dir);
    cfg.algorithms = vec![Algorithm::Epirc, Algorithm::Lf, Algorithm::LfPiAvg];
    if setting == Setting::Cmdp {
        cfg.algorithms.extend([Algorithm::LfOccAvg, Algorithm::LpOracle]);
    }
    cfg.epirc = Some(BisectionConfig {
        outer_iterations: 4,
        subroutine: SubroutineConfig::new(40, 1e-3),
        warm_start: true,
    });
    cfg.lf = Some(LagrangeConfig::new(5, 40, 1e-3));
    cfg
}

fn without_wall(rows: Vec<MetricRow>) -> Vec<MetricRow> {
    rows.into_iter().map(|r| MetricRow { wall_ms: 0.0, ..r }).collect()
}

#[test]
fn repeated_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(Setting::Cmdp, vec![7, 7], dir.path())).unwrap();
    assert_eq!(report.failures, 0);
    let runs = dir.path().join("runs");
    let i0 = std::fs::read_to_string(runs.join("run000_instance_seed7.json")).unwrap();
    let i1 = std::fs::read_to_string(runs.join("run001_instance_seed7.json")).unwrap();
    assert_eq!(i0, i1);
    for alg in ["epirc", "lf", "lf-pi-avg", "lf-occ-avg", "lp-oracle"] {
        let a = read_rows(runs.join(format!("run000_{alg}_seed7.csv"))).unwrap();
        let b = read_rows(runs.join(format!("run001_{alg}_seed7.csv"))).unwrap();
        // Wall-clock time is the only column allowed to differ.
        assert_eq!(without_wall(a), without_wall(b), "{alg}");
        let pa = std::fs::read(runs.join(format!("run000_{alg}_seed7_policies.json"))).unwrap();
        let pb = std::fs::read(runs.join(format!("run001_{alg}_seed7_policies.json"))).unwrap();
        assert_eq!(pa, pb, "{alg}");
    }
    // Identical runs aggregate with zero spread.
    for a in &report.aggregate {
        assert_eq!(a.runs, 2);
        assert_eq!(a.violation_stderr, 0.0);
        assert_eq!(a.relative_return_stderr, 0.0);
    }
    let lp = report.runs.iter().find(|r| r.algorithm == Algorithm::Epirc).unwrap();
    assert!(lp.lp_value.is_some() && lp.gap.is_some());
}

#[test]
fn marked_metrics_match_fresh_evaluation() {
    for setting in [Setting::Finite, Setting::Kl, Setting::Cmdp] {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&small_config(setting, vec![3], dir.path())).unwrap();
        assert_eq!(report.failures, 0);
        let runs = dir.path().join("runs");
        let inst = Instance::load(runs.join("run000_instance_seed3.json")).unwrap();
        let base = uniform_objective(&inst).unwrap();
        for summary in &report.runs {
            let stem = format!("run000_{}_seed3", summary.algorithm);
            let rows = read_rows(runs.join(format!("{stem}.csv"))).unwrap();
            let policies = read_policies(runs.join(format!("{stem}_policies.json"))).unwrap();
            assert_eq!(rows.len(), policies.len());
            let k = summary.marked_k.unwrap();
            let pos = rows.iter().position(|r| r.k == k).unwrap();
            let returns = robust_values(&inst, &policies[pos]).unwrap();
            let (v, rr) = metrics_from_returns(&inst, &returns, base);
            assert!((v - summary.marked_violation.unwrap()).abs() <= 1e-8, "{setting} {}", summary.algorithm);
            assert!((rr - summary.marked_relative_return.unwrap()).abs() <= 1e-8);
            assert!((returns[0] - summary.marked_objective.unwrap()).abs() <= 1e-8);
        }
    }
}

#[test]
fn uniform_start_has_zero_relative_return() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Setting::Finite, vec![1], dir.path());
    cfg.algorithms = vec![Algorithm::Epirc];
    cfg.epirc = Some(BisectionConfig {
        outer_iterations: 2,
        subroutine: SubroutineConfig::new(1, 0.0),
        warm_start: false,
    });
    run_experiment(&cfg).unwrap();
    let rows = read_rows(dir.path().join("runs/run000_epirc_seed1.csv")).unwrap();
    assert!(rows.iter().all(|r| r.relative_return == 0.0));
}

#[test]
fn summary_and_aggregate_files_written() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small_config(Setting::Finite, vec![0, 1], dir.path())).unwrap();
    for f in ["metrics.csv", "aggregate.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows = read_rows(dir.path().join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.violation.is_finite() && r.relative_return.is_finite()));
    let epirc: Vec<_> = rows.iter().filter(|r| r.algorithm == Algorithm::Epirc).collect();
    assert!(epirc.iter().all(|r| r.b0_low.is_some() && r.b0_high.is_some()));
    assert!(rows
        .iter()
        .filter(|r| r.algorithm != Algorithm::Epirc)
        .all(|r| r.b0_low.is_none() && r.b0_high.is_none()));
}
