//! Monte Carlo orchestration and output files: per-trial trace CSVs,
//! ensemble series, capacity staircases, region grids, SVG plots and a JSON
//! manifest.
//!
//! Trials are independent given their seed and are collected in seed order,
//! so results do not depend on how they were scheduled.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    cumulative_mean, cumulative_reliability, ensemble, p_relia_series, region_rows, short_term_reliability,
    trailing_sums, Estimate, RegionQuery, RegionRow, ReliabilitySpec, Series,
};
use crate::plot::{Chart, Line};
use crate::policy::{CapacitySnapshot, Engine, PolicyConfig, ResourceFlows, TrialTrace, Variant};
use crate::scenario::Scenario;

/// How trials are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon pool with the given number of workers (`None`: one per core).
    /// Without the `parallel` feature this runs sequentially.
    Parallel { threads: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: None }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn threads(self) -> usize {
        match self {
            Execution::Sequential => 1,
            #[cfg(feature = "parallel")]
            Execution::Parallel { threads } => threads.unwrap_or_else(rayon::current_num_threads),
            #[cfg(not(feature = "parallel"))]
            Execution::Parallel { .. } => 1,
        }
    }

    /// `f(0), ..., f(n-1)` in index order; the first failure wins and is
    /// tagged with its trial index.
    pub fn map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let tag = |i: usize, r: Result<T>| {
            r.map_err(|e| Error::Trial {
                trial: i,
                source: Box::new(e),
            })
        };
        match self {
            Execution::Sequential => (0..n).map(|i| tag(i, f(i))).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel { threads } => {
                use rayon::prelude::*;
                let mut builder = rayon::ThreadPoolBuilder::new();
                if let Some(t) = threads {
                    builder = builder.num_threads(t);
                }
                let pool = builder
                    .build()
                    .map_err(|e| Error::config(format!("thread pool: {e}")))?;
                pool.install(|| (0..n).into_par_iter().map(|i| tag(i, f(i))).collect())
            }
            #[cfg(not(feature = "parallel"))]
            Execution::Parallel { .. } => Execution::Sequential.map(n, f),
        }
    }
}

/// Seeds of `n` trials: consecutive values from the master seed.
pub fn trial_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| master.wrapping_add(i)).collect()
}

/// Runs every trial of `cfg` and returns their traces in seed order.
pub fn run_trials(cfg: &ScenarioConfig, exec: Execution, verbose: bool) -> Result<Vec<TrialTrace>> {
    let scenario = cfg.to_scenario()?;
    let policy = PolicyConfig {
        verbose,
        ..cfg.policy_config()
    };
    let engine = Engine::new(&policy, &scenario)?;
    let seeds = trial_seeds(cfg.experiment.seed, cfg.experiment.trials);
    exec.map(seeds.len(), |i| {
        let tr = engine.run_trial(&scenario, seeds[i])?;
        log::info!("trial seed {} done", seeds[i]);
        Ok(tr)
    })
}

/// Runs every trial once per post-outage arrival scale, sharing the common
/// pre-outage prefix. Returns traces indexed `[scale][trial]`.
pub fn run_scales(cfg: &ScenarioConfig, scales: &[f64], exec: Execution) -> Result<Vec<Vec<TrialTrace>>> {
    let configs: Vec<ScenarioConfig> = scales.iter().map(|&s| cfg.with_lambda_scale(s)).collect();
    let scenarios = configs.iter().map(|c| c.to_scenario()).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Scenario> = scenarios.iter().collect();
    let policy = cfg.policy_config();
    let engine = Engine::new(&policy, &scenarios[0])?;
    let seeds = trial_seeds(cfg.experiment.seed, cfg.experiment.trials);
    let per_trial = exec.map(seeds.len(), |i| {
        let branches = engine.run_forked(&refs, seeds[i])?;
        log::info!("trial seed {} done ({} scales)", seeds[i], refs.len());
        Ok(branches)
    })?;
    let mut out: Vec<Vec<TrialTrace>> = (0..scales.len()).map(|_| Vec::with_capacity(seeds.len())).collect();
    for branches in per_trial {
        for (k, tr) in branches.into_iter().enumerate() {
            out[k].push(tr);
        }
    }
    Ok(out)
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

/// Shortest text that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x}")
}

/// Column names of a trace CSV for commodities with the given ids.
pub fn trace_header(ids: &[u32]) -> Vec<String> {
    let mut h = vec!["slot".to_string()];
    for id in ids {
        for col in ["arrivals", "delivered", "expired", "cost"] {
            h.push(format!("c{id}_{col}"));
        }
    }
    h.push("virtual_total".into());
    h.push("request_norm".into());
    h
}

/// Writes one trial: arrivals and deliveries in packets per slot (final
/// stage units for deliveries), cost per slot, virtual backlog and request
/// queue norm.
pub fn write_trace_csv(path: &Path, trace: &TrialTrace, ids: &[u32]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(trace_header(ids)).map_err(csv_err(path))?;
    let s = &trace.series;
    let mut rec = Vec::with_capacity(4 * ids.len() + 3);
    for t in 0..trace.horizon() {
        rec.clear();
        rec.push(t.to_string());
        for c in 0..s.commodities() {
            rec.push(num(s.arrivals[c][t]));
            rec.push(num(s.delivered[c][t]));
            rec.push(num(s.expired[c][t]));
            rec.push(num(s.cost[c][t]));
        }
        rec.push(num(trace.virtual_total[t]));
        rec.push(num(trace.request_norm[t]));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the per-commodity series back from a trace CSV.
pub fn read_trace_csv(path: &Path, scaling: Vec<f64>) -> Result<Series> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let ncom = scaling.len();
    let width = r.headers().map_err(csv_err(path))?.len();
    if width != 4 * ncom + 3 {
        return Err(Error::Dimension(format!(
            "{}: {width} columns for {ncom} commodities",
            path.display()
        )));
    }
    let mut s = Series::new(scaling, 0);
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let val = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::Dimension(format!("{}: bad number `{}`", path.display(), &rec[k])))
        };
        for c in 0..ncom {
            s.arrivals[c].push(val(1 + 4 * c)?);
            s.delivered[c].push(val(2 + 4 * c)?);
            s.expired[c].push(val(3 + 4 * c)?);
            s.cost[c].push(val(4 + 4 * c)?);
        }
    }
    Ok(s)
}

/// Ensemble statistics per commodity and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    pub reliability_long: Vec<Vec<Estimate>>,
    pub reliability_short: Vec<Vec<Estimate>>,
    pub throughput_short: Vec<Vec<Estimate>>,
    pub cost_long: Vec<Vec<Estimate>>,
    pub cost_short: Vec<Vec<Estimate>>,
    pub p_relia: Vec<Vec<Option<Estimate>>>,
}

impl EnsembleSeries {
    /// Streams the trials in the given order into per-slot accumulators.
    pub fn compute(traces: &[&Series], spec: &ReliabilitySpec) -> Self {
        let ncom = traces.first().map_or(0, |s| s.commodities());
        let per = |f: &dyn Fn(&Series, usize) -> Vec<f64>| -> Vec<Vec<Estimate>> {
            (0..ncom)
                .map(|c| {
                    let runs: Vec<Vec<f64>> = traces.iter().map(|s| f(s, c)).collect();
                    ensemble(runs.iter().map(Vec::as_slice))
                })
                .collect()
        };
        let t_win = spec.t_win;
        Self {
            reliability_long: per(&|s, c| cumulative_reliability(s, c)),
            reliability_short: per(&|s, c| short_term_reliability(s, c, t_win)),
            throughput_short: per(&|s, c| {
                trailing_sums(&s.delivered[c], t_win)
                    .into_iter()
                    .map(|x| x / t_win as f64)
                    .collect()
            }),
            cost_long: per(&|s, c| cumulative_mean(&s.cost[c])),
            cost_short: per(&|s, c| {
                trailing_sums(&s.cost[c], t_win)
                    .into_iter()
                    .map(|x| x / t_win as f64)
                    .collect()
            }),
            p_relia: (0..ncom).map(|c| p_relia_series(traces, c, spec)).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.reliability_long.first().map_or(0, Vec::len)
    }
}

const ENSEMBLE_COLUMNS: [&str; 6] = ["rel_long", "rel_short", "thr_short", "cost_long", "cost_short", "p_relia"];

pub fn write_ensemble_csv(path: &Path, ens: &EnsembleSeries, ids: &[u32]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["slot".to_string()];
    for id in ids {
        for col in ENSEMBLE_COLUMNS {
            header.push(format!("c{id}_{col}_mean"));
            header.push(format!("c{id}_{col}_sigma"));
        }
    }
    w.write_record(&header).map_err(csv_err(path))?;
    let mut rec = Vec::with_capacity(header.len());
    for t in 0..ens.horizon() {
        rec.clear();
        rec.push(t.to_string());
        for c in 0..ids.len() {
            for e in [
                ens.reliability_long[c][t],
                ens.reliability_short[c][t],
                ens.throughput_short[c][t],
                ens.cost_long[c][t],
                ens.cost_short[c][t],
                ens.p_relia[c][t].unwrap_or(Estimate {
                    mean: f64::NAN,
                    sigma: f64::NAN,
                }),
            ] {
                rec.push(num(e.mean));
                rec.push(num(e.sigma));
            }
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Display names of the physical resources, links first.
pub fn resource_names(scenario: &Scenario) -> Vec<String> {
    let net = &scenario.network;
    net.links()
        .iter()
        .map(|l| format!("link_{}_{}", l.from, l.to))
        .chain(net.nodes().iter().map(|n| format!("node_{}", n.id)))
        .collect()
}

/// Virtual capacities at every frame end.
pub fn write_capacity_csv(path: &Path, snaps: &[CapacitySnapshot], names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["slot".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for s in snaps {
        let mut rec = vec![s.slot.to_string()];
        rec.extend(s.links.iter().chain(&s.nodes).map(|&x| num(x)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-slot virtual and actual load on every resource (verbose runs).
pub fn write_flows_csv(path: &Path, flows: &ResourceFlows, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["slot".to_string()];
    for n in names {
        header.push(format!("{n}_virtual"));
        header.push(format!("{n}_actual"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, (nu, x)) in flows.nu.iter().zip(&flows.x).enumerate() {
        let mut rec = vec![t.to_string()];
        for (a, b) in nu.iter().zip(x) {
            rec.push(num(*a));
            rec.push(num(*b));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_region_csv(path: &Path, rows: &[RegionRow], ids: &[u32]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = [
        "lambda_scale",
        "gamma_long",
        "gamma_short",
        "t_recover",
        "p_resil",
        "reliable_pre",
        "reliable_post",
        "resilient",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["p_hat", "worst_p_hat", "level_post"] {
        header.extend(ids.iter().map(|id| format!("{prefix}_c{id}")));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        let th = r.thresholds;
        let mut rec = vec![
            num(r.lambda_scale),
            num(th.gamma_long),
            num(th.gamma_short),
            th.t_recover.to_string(),
            num(th.p_resil),
            r.reliable_pre.to_string(),
            r.reliable_post.to_string(),
            r.resilient.to_string(),
        ];
        rec.extend(r.p_hat.iter().chain(&r.worst_p_hat).chain(&r.level_post).map(|&x| num(x)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub file: String,
    pub lost: Vec<f64>,
    pub max_conservation_residual: f64,
    pub lp_iterations: u64,
}

/// What was run and where the outputs went.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_hash: String,
    pub variant: Variant,
    /// How the request queues average the virtual flow.
    pub request_averaging: &'static str,
    pub v: f64,
    pub horizon: usize,
    pub outage_at: Option<usize>,
    pub lambda_scale: Option<f64>,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub trials: Vec<TrialRecord>,
    pub files: Vec<String>,
}

fn request_averaging(v: Variant) -> &'static str {
    match v {
        Variant::ResRcnc => "current",
        Variant::Rcnc => "full-history",
    }
}

/// Options shared by the output-producing runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Record per-resource flows and draw flow-matching overlays.
    pub verbose: bool,
    pub plots: bool,
}

pub fn reliability_spec(cfg: &ScenarioConfig) -> ReliabilitySpec {
    let e = &cfg.experiment;
    ReliabilitySpec::uniform(
        cfg.commodities.iter().map(|c| c.gamma_long).collect(),
        e.gamma_short,
        e.t_win,
        e.t_recover,
        e.p_resil,
        e.trials.max(1),
    )
}

fn write_svg(dir: &Path, name: &str, chart: &Chart, files: &mut Vec<String>) -> Result<()> {
    let svg = match chart.to_svg() {
        Ok(svg) => svg,
        Err(e) => {
            // short horizons leave windowed series undefined
            log::warn!("skipping {name}: {e}");
            return Ok(());
        }
    };
    let path = dir.join(name);
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    files.push(name.to_string());
    Ok(())
}

fn slots(n: usize) -> Vec<f64> {
    (0..n).map(|t| t as f64).collect()
}

fn band_lines(ids: &[u32], series: &[Vec<Estimate>]) -> Vec<Line> {
    ids.iter()
        .zip(series)
        .map(|(id, s)| {
            Line::new(format!("c{id}"), slots(s.len()), s.iter().map(|e| e.mean).collect())
                .with_sigma(s.iter().map(|e| e.sigma).collect())
        })
        .collect()
}

/// Runs the configured experiment and writes everything into `out`.
pub fn run_experiment(cfg: &ScenarioConfig, out: &Path, opts: RunOptions) -> Result<Manifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scenario = cfg.to_scenario()?;
    let ids: Vec<u32> = scenario.commodities.iter().map(|c| c.id).collect();
    let names = resource_names(&scenario);
    let start = Instant::now();
    let traces = run_trials(cfg, opts.exec, opts.verbose)?;
    let wall = start.elapsed().as_secs_f64();

    let mut files = Vec::new();
    let mut trials = Vec::new();
    for tr in &traces {
        let file = format!("trial_{}.csv", tr.seed);
        write_trace_csv(&out.join(&file), tr, &ids)?;
        let cap = format!("capacity_{}.csv", tr.seed);
        write_capacity_csv(&out.join(&cap), &tr.capacities, &names)?;
        files.push(cap);
        if let Some(flows) = &tr.flows {
            let f = format!("flows_{}.csv", tr.seed);
            write_flows_csv(&out.join(&f), flows, &names)?;
            files.push(f);
        }
        trials.push(TrialRecord {
            seed: tr.seed,
            file,
            lost: tr.summary.lost.clone(),
            max_conservation_residual: tr.summary.max_conservation_residual,
            lp_iterations: tr.summary.lp_iterations,
        });
    }
    let spec = reliability_spec(cfg);
    let series: Vec<&Series> = traces.iter().map(|t| &t.series).collect();
    let ens = EnsembleSeries::compute(&series, &spec);
    write_ensemble_csv(&out.join("ensemble.csv"), &ens, &ids)?;
    files.push("ensemble.csv".into());

    if opts.plots && ens.horizon() > 0 {
        let outage = cfg.outage.as_ref().map(|o| o.time as f64);
        let gamma = cfg.commodities.first().map(|c| c.gamma_long);
        let chart = |title: &str, y: &str, lines: Vec<Line>, reference: Option<f64>| Chart {
            title: title.into(),
            x_label: "slot".into(),
            y_label: y.into(),
            lines,
            reference,
            marker: outage,
        };
        write_svg(
            out,
            "reliability_long.svg",
            &chart("Long-term reliability level", "level", band_lines(&ids, &ens.reliability_long), gamma),
            &mut files,
        )?;
        write_svg(
            out,
            "reliability_short.svg",
            &chart(
                "Short-term reliability level",
                "level",
                band_lines(&ids, &ens.reliability_short),
                Some(cfg.experiment.gamma_short),
            ),
            &mut files,
        )?;
        write_svg(
            out,
            "cost_long.svg",
            &chart("Long-term average cost", "cost per slot", band_lines(&ids, &ens.cost_long), None),
            &mut files,
        )?;
        if let Some(tr) = traces.first() {
            write_capacity_plot(out, cfg, tr, &names, &mut files)?;
            if let Some(flows) = &tr.flows {
                write_flow_plot(out, tr, flows, &names, &mut files)?;
            }
        }
    }

    let manifest = Manifest {
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        variant: cfg.policy.variant,
        request_averaging: request_averaging(cfg.policy.variant),
        v: traces.first().map_or(f64::NAN, |t| t.v),
        horizon: cfg.experiment.horizon,
        outage_at: cfg.outage.as_ref().map(|o| o.time),
        lambda_scale: cfg.outage.as_ref().map(|o| o.lambda_scale),
        threads: opts.exec.threads(),
        wall_time_secs: wall,
        trials,
        files,
    };
    write_manifest(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_capacity_plot(
    out: &Path,
    cfg: &ScenarioConfig,
    tr: &TrialTrace,
    names: &[String],
    files: &mut Vec<String>,
) -> Result<()> {
    if tr.capacities.is_empty() {
        return Ok(());
    }
    let links = tr.capacities[0].links.len();
    // processing capacities share a scale, so plot the nodes
    let lines: Vec<Line> = (0..tr.capacities[0].nodes.len())
        .map(|k| {
            let x = tr.capacities.iter().map(|s| s.slot as f64).collect();
            let y = tr.capacities.iter().map(|s| s.nodes[k]).collect();
            Line::new(names[links + k].clone(), x, y).stepped()
        })
        .collect();
    let chart = Chart {
        title: format!("Virtual processing capacity, seed {}", tr.seed),
        x_label: "slot".into(),
        y_label: "CPU".into(),
        lines,
        reference: None,
        marker: cfg.outage.as_ref().map(|o| o.time as f64),
    };
    write_svg(out, &format!("capacity_{}.svg", tr.seed), &chart, files)
}

fn write_flow_plot(
    out: &Path,
    tr: &TrialTrace,
    flows: &ResourceFlows,
    names: &[String],
    files: &mut Vec<String>,
) -> Result<()> {
    // the resource carrying the most virtual flow
    let n = names.len();
    let mut totals = vec![0.0; n];
    for row in &flows.nu {
        for (a, v) in totals.iter_mut().zip(row) {
            *a += v;
        }
    }
    let Some(r) = (0..n).max_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(b.cmp(&a))) else {
        return Ok(());
    };
    let x = slots(flows.nu.len());
    let chart = Chart {
        title: format!("Flow matching on {}, seed {}", names[r], tr.seed),
        x_label: "slot".into(),
        y_label: "load per slot".into(),
        lines: vec![
            Line::new("virtual", x.clone(), flows.nu.iter().map(|row| row[r]).collect()),
            Line::new("actual", x, flows.x.iter().map(|row| row[r]).collect()),
        ],
        reference: None,
        marker: None,
    };
    write_svg(out, &format!("flow_matching_{}.svg", tr.seed), &chart, files)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs each variant into its own subdirectory and overlays their
/// commodity-averaged ensemble means.
pub fn compare_experiment(
    cfg: &ScenarioConfig,
    variants: &[Variant],
    out: &Path,
    opts: RunOptions,
) -> Result<Vec<PathBuf>> {
    if variants.is_empty() {
        return Err(Error::config("compare: no variants given"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let spec = reliability_spec(cfg);
    let mut dirs = Vec::new();
    let mut rel = Vec::new();
    let mut cost = Vec::new();
    for &v in variants {
        let mut c = cfg.clone();
        c.policy.variant = v;
        let dir = out.join(v.label());
        run_experiment(&c, &dir, opts)?;
        let scaling = c.to_scenario()?.layouts().iter().map(|l| l.total_scaling).collect::<Vec<_>>();
        let seeds = trial_seeds(c.experiment.seed, c.experiment.trials);
        let series = seeds
            .iter()
            .map(|s| read_trace_csv(&dir.join(format!("trial_{s}.csv")), scaling.clone()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Series> = series.iter().collect();
        let ens = EnsembleSeries::compute(&refs, &spec);
        let avg = |s: &[Vec<Estimate>]| -> Vec<f64> {
            let h = s.first().map_or(0, Vec::len);
            (0..h).map(|t| s.iter().map(|c| c[t].mean).sum::<f64>() / s.len() as f64).collect()
        };
        rel.push((v, avg(&ens.reliability_long)));
        cost.push((v, avg(&ens.cost_long)));
        dirs.push(dir);
    }
    let path = out.join("compare.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["slot".to_string()];
    for (v, _) in &rel {
        header.push(format!("{}_rel_long", v.label()));
        header.push(format!("{}_cost_long", v.label()));
    }
    w.write_record(&header).map_err(csv_err(&path))?;
    let h = rel[0].1.len();
    for t in 0..h {
        let mut rec = vec![t.to_string()];
        for k in 0..rel.len() {
            rec.push(num(rel[k].1[t]));
            rec.push(num(cost[k].1[t]));
        }
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if opts.plots && h > 0 {
        let marker = cfg.outage.as_ref().map(|o| o.time as f64);
        let mk = |title: &str, y: &str, data: &[(Variant, Vec<f64>)], reference: Option<f64>| Chart {
            title: title.into(),
            x_label: "slot".into(),
            y_label: y.into(),
            lines: data
                .iter()
                .map(|(v, s)| Line::new(v.label(), slots(s.len()), s.clone()))
                .collect(),
            reference,
            marker,
        };
        let mut files = Vec::new();
        let gamma = cfg.commodities.first().map(|c| c.gamma_long);
        write_svg(out, "compare_reliability.svg", &mk("Long-term reliability level", "level", &rel, gamma), &mut files)?;
        write_svg(out, "compare_cost.svg", &mk("Long-term average cost", "cost per slot", &cost, None), &mut files)?;
    }
    Ok(dirs)
}

/// Simulates each arrival scale of the query and evaluates the threshold
/// grid over the cached traces.
pub fn region_experiment(cfg: &ScenarioConfig, query: &RegionQuery, out: &Path, opts: RunOptions) -> Result<Vec<RegionRow>> {
    query.validate()?;
    let outage = cfg
        .outage
        .as_ref()
        .ok_or_else(|| Error::config("region: the scenario has no outage"))?
        .time;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let traces = run_scales(cfg, &query.lambda_scales, opts.exec)?;
    let wall = start.elapsed().as_secs_f64();
    let mut rows = Vec::new();
    for (scale, trs) in query.lambda_scales.iter().zip(&traces) {
        let series: Vec<&Series> = trs.iter().map(|t| &t.series).collect();
        rows.extend(region_rows(*scale, &series, query, cfg.experiment.t_win, outage)?);
    }
    let ids: Vec<u32> = cfg.commodities.iter().map(|c| c.id).collect();
    write_region_csv(&out.join("region.csv"), &rows, &ids)?;
    let manifest = Manifest {
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        variant: cfg.policy.variant,
        request_averaging: request_averaging(cfg.policy.variant),
        v: traces.first().and_then(|t| t.first()).map_or(f64::NAN, |t| t.v),
        horizon: cfg.experiment.horizon,
        outage_at: Some(outage),
        lambda_scale: None,
        threads: opts.exec.threads(),
        wall_time_secs: wall,
        trials: Vec::new(),
        files: vec!["region.csv".into()],
    };
    write_manifest(&out.join("manifest.json"), &manifest)?;
    Ok(rows)
}

/// The flow-matching LP of trial `seed` at `slot`, in CPLEX LP format.
pub fn dump_lp(cfg: &ScenarioConfig, seed: u64, slot: usize) -> Result<String> {
    let scenario = cfg.to_scenario()?;
    let policy = cfg.policy_config();
    if slot >= policy.horizon {
        return Err(Error::WindowOutOfRange {
            start: slot,
            end: slot + 1,
            horizon: policy.horizon,
        });
    }
    let engine = Engine::new(&policy, &scenario)?;
    let mut st = engine.start(&scenario, seed);
    st.run_until(&engine, &scenario, slot)?;
    Ok(engine.current_lp(&scenario, &st, true)?.lp.to_lp_format())
}
