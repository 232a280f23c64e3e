mod common;

use resnc_core::config::{builtin_abilene, ScenarioConfig, ABILENE_TOML};
use resnc_core::experiment::{
    dump_lp, read_trace_csv, region_experiment, reliability_spec, run_experiment, run_trials, write_trace_csv,
    EnsembleSeries, Execution, RunOptions,
};
use resnc_core::metrics::{RegionQuery, Series};

fn small_line(horizon: usize, trials: usize) -> ScenarioConfig {
    let mut cfg = common::three_node_line();
    cfg.experiment.horizon = horizon;
    cfg.experiment.trials = trials;
    cfg.experiment.t_win = 20;
    cfg.experiment.t_recover = 30;
    cfg.policy.frame = 25;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn builtin_round_trips_through_toml() {
    let cfg = builtin_abilene();
    let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.hash(), cfg.hash());
    assert_eq!(ScenarioConfig::from_toml(ABILENE_TOML).unwrap().hash(), cfg.hash());
}

#[test]
fn run_writes_every_output() {
    let cfg = small_line(120, 3);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        exec: Execution::Sequential,
        verbose: true,
        plots: true,
    };
    let m = run_experiment(&cfg, dir.path(), opts).unwrap();
    assert_eq!(m.trials.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(m.config_hash, cfg.hash());
    for name in [
        "manifest.json",
        "ensemble.csv",
        "trial_0.csv",
        "capacity_2.csv",
        "flows_1.csv",
        "reliability_long.svg",
        "reliability_short.svg",
        "cost_long.svg",
        "capacity_0.svg",
        "flow_matching_0.svg",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["trials"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["request_averaging"], "current");
    for t in &m.trials {
        assert!(t.max_conservation_residual <= 1e-9);
    }
}

#[test]
fn trace_csv_round_trips_exactly() {
    let cfg = small_line(80, 1);
    let trace = run_trials(&cfg, Execution::Sequential, false).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace_csv(&path, &trace, &[1, 2]).unwrap();
    let back = read_trace_csv(&path, trace.series.scaling.clone()).unwrap();
    assert_eq!(back, trace.series);
}

#[test]
fn ensemble_from_csv_matches_streaming() {
    let cfg = small_line(100, 4);
    let traces = run_trials(&cfg, Execution::Sequential, false).unwrap();
    let spec = reliability_spec(&cfg);
    let live: Vec<&Series> = traces.iter().map(|t| &t.series).collect();
    let streaming = EnsembleSeries::compute(&live, &spec);

    let dir = tempfile::tempdir().unwrap();
    let mut read = Vec::new();
    for t in &traces {
        let p = dir.path().join(format!("{}.csv", t.seed));
        write_trace_csv(&p, t, &[1, 2]).unwrap();
        read.push(read_trace_csv(&p, t.series.scaling.clone()).unwrap());
    }
    let refs: Vec<&Series> = read.iter().collect();
    let batch = EnsembleSeries::compute(&refs, &spec);
    let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs());
    for c in 0..2 {
        for t in 0..100 {
            for (x, y) in [
                (streaming.reliability_long[c][t], batch.reliability_long[c][t]),
                (streaming.reliability_short[c][t], batch.reliability_short[c][t]),
                (streaming.cost_long[c][t], batch.cost_long[c][t]),
            ] {
                assert!(close(x.mean, y.mean) && close(x.sigma, y.sigma), "c{c} t{t}: {x:?} vs {y:?}");
            }
        }
    }
}

#[test]
fn sequential_and_pool_agree() {
    let cfg = small_line(60, 3);
    let a = run_trials(&cfg, Execution::Sequential, false).unwrap();
    let b = run_trials(&cfg, Execution::Parallel { threads: Some(2) }, false).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.series, y.series);
        assert_eq!(x.virtual_total, y.virtual_total);
    }
}

#[test]
fn region_grid_has_one_row_per_point() {
    let cfg = small_line(120, 2);
    let dir = tempfile::tempdir().unwrap();
    let query = RegionQuery {
        lambda_scales: vec![0.5, 1.0],
        gamma_long: vec![0.5, 0.9],
        gamma_short: vec![0.9],
        t_recover: vec![10, 30],
        p_resil: vec![0.9],
    };
    let rows = region_experiment(&cfg, &query, dir.path(), RunOptions::default()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let text = std::fs::read_to_string(dir.path().join("region.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + rows.len());
    // a looser long-term target can only add members
    for pair in rows.chunks(4) {
        let loose = &pair[0];
        let strict = &pair[2];
        assert!(!strict.reliable_post || loose.reliable_post);
    }
}

#[test]
fn region_needs_an_outage() {
    let mut cfg = small_line(50, 1);
    cfg.outage = None;
    let query = RegionQuery {
        lambda_scales: vec![1.0],
        gamma_long: vec![0.9],
        gamma_short: vec![0.9],
        t_recover: vec![10],
        p_resil: vec![0.9],
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(region_experiment(&cfg, &query, dir.path(), RunOptions::default()).is_err());
}

#[test]
fn dump_lp_is_readable() {
    let cfg = small_line(40, 1);
    let text = dump_lp(&cfg, 0, 10).unwrap();
    assert!(text.contains("Maximize"));
    assert!(text.contains("Subject To"));
    assert!(text.trim_end().ends_with("End"));
    assert!(dump_lp(&cfg, 0, 40).is_err());
}
