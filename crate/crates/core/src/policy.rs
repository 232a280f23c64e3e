//! Per-slot orchestration of the controller and trial execution.

use serde::{Deserialize, Serialize};

use crate::capacity::{CapacityConfig, FrameState};
use crate::error::{Error, Result};
use crate::flow_matching::{build_lp, FlowMatchingInput, FlowMatchingLp, RequestQueues, WarmStart};
use crate::lp::{LpSolver, Simplex};
use crate::metrics::Series;
use crate::model::EdgeKind;
use crate::queueing::{conservation_report, IncomingScaling, QueueState};
use crate::scenario::{AliveMask, Resource, Scenario};
use crate::traffic::{ArrivalStreams, FadingAverage};
use crate::virtual_ctl::{choose_v, compute_weights, max_weight_assign, Penalty, ResourceIndex, VirtualQueues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Thresholded capacity iteration plus the outage-time actions.
    ResRcnc,
    /// RCNC-style baseline: full-history request targets, scaled ungated
    /// capacity cuts, no outage actions.
    Rcnc,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::ResRcnc => "resrcnc",
            Variant::Rcnc => "rcnc-style-baseline",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resrcnc" | "mc-resrcnc" => Ok(Variant::ResRcnc),
            "rcnc" | "mc-rcnc" | "baseline" => Ok(Variant::Rcnc),
            other => Err(Error::config(format!("unknown policy variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub variant: Variant,
    /// Frame length K.
    pub frame: usize,
    /// Look-ahead depth n.
    pub lookahead: usize,
    pub v_prime: f64,
    pub t_forget: usize,
    pub r_min_tr: f64,
    pub r_min_pr: f64,
    pub kappa: f64,
    pub floor_fraction: f64,
    pub horizon: usize,
    pub incoming: IncomingScaling,
    /// Record per-slot virtual and actual flow per physical resource.
    pub verbose: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ResRcnc,
            frame: 2000,
            lookahead: 2,
            v_prime: 5.0,
            t_forget: 500,
            r_min_tr: 1000.0,
            r_min_pr: 0.1,
            kappa: 0.5,
            floor_fraction: 0.01,
            horizon: 100_000,
            incoming: IncomingScaling::Scaled,
            verbose: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("policy: {m}")));
        if self.frame == 0 {
            return bad("frame length K must be >= 1");
        }
        if self.lookahead == 0 {
            return bad("look-ahead n must be >= 1");
        }
        if self.t_forget == 0 {
            return bad("T_forget must be >= 1");
        }
        if !(self.v_prime >= 0.0) {
            return bad("V' must be >= 0");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return bad("capacity floor fraction must lie in [0, 1]");
        }
        if !(self.r_min_tr >= 0.0 && self.r_min_pr >= 0.0) {
            return bad("thresholds must be >= 0");
        }
        Ok(())
    }

    fn capacity(&self) -> CapacityConfig {
        CapacityConfig {
            frame: self.frame,
            r_min_tr: self.r_min_tr,
            r_min_pr: self.r_min_pr,
            floor_fraction: self.floor_fraction,
        }
    }
}

/// Virtual capacities at the end of a frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacitySnapshot {
    pub slot: usize,
    pub links: Vec<f64>,
    pub nodes: Vec<f64>,
}

/// Per-slot virtual and actual flow on every physical resource (links
/// first), recorded in verbose mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResourceFlows {
    pub nu: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub lost: Vec<f64>,
    pub max_conservation_residual: f64,
    pub lp_iterations: u64,
    pub max_lp_vars: usize,
    pub max_lp_rows: usize,
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub seed: u64,
    pub variant: Variant,
    pub v: f64,
    /// Per-commodity arrival, delivery, expiry and cost series.
    pub series: Series,
    /// `[slot]` series.
    pub virtual_total: Vec<f64>,
    pub request_norm: Vec<f64>,
    pub capacities: Vec<CapacitySnapshot>,
    /// Cumulative virtual and actual flow per `[c][e, l]` at the outage
    /// slot (before it executes) and at the horizon.
    pub cum_nu_at_outage: Option<Vec<Vec<f64>>>,
    pub cum_x_at_outage: Option<Vec<Vec<f64>>>,
    pub cum_nu: Vec<Vec<f64>>,
    pub cum_x: Vec<Vec<f64>>,
    pub flows: Option<ResourceFlows>,
    pub summary: TrialSummary,
}

impl TrialTrace {
    pub fn horizon(&self) -> usize {
        self.virtual_total.len()
    }

    pub fn commodities(&self) -> usize {
        self.series.commodities()
    }
}

/// Immutable per-run pieces shared by every trial.
pub struct Engine<'a> {
    pub config: &'a PolicyConfig,
    pub penalty: Penalty,
    index: ResourceIndex,
    solver: Box<dyn LpSolver + 'a>,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a PolicyConfig, scenario: &Scenario) -> Result<Self> {
        Self::with_solver(config, scenario, Box::new(Simplex::default()))
    }

    pub fn with_solver(config: &'a PolicyConfig, scenario: &Scenario, solver: Box<dyn LpSolver + 'a>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            penalty: choose_v(scenario, config.v_prime),
            index: ResourceIndex::new(scenario),
            solver,
        })
    }

    pub fn start(&self, scenario: &Scenario, seed: u64) -> TrialState {
        TrialState::new(self, scenario, seed)
    }

    pub fn run_trial(&self, scenario: &Scenario, seed: u64) -> Result<TrialTrace> {
        let mut st = self.start(scenario, seed);
        st.run_until(self, scenario, self.config.horizon)?;
        st.finish(scenario)
    }

    /// Runs the common pre-outage prefix once and continues a copy of the
    /// state under each scenario. The scenarios must differ only in their
    /// post-outage arrival rates; the result equals separate runs.
    pub fn run_forked(&self, scenarios: &[&Scenario], seed: u64) -> Result<Vec<TrialTrace>> {
        let Some(first) = scenarios.first() else {
            return Ok(Vec::new());
        };
        // a(t_o) is drawn at the end of slot t_o - 1 from the post-outage
        // rates, so branches take over one slot before the outage.
        let outage = first.outage.as_ref().map_or(0, |o| o.time);
        if outage == 0 {
            return scenarios.iter().map(|s| self.run_trial(s, seed)).collect();
        }
        let fork_at = (outage - 1).min(self.config.horizon);
        for s in scenarios {
            if s.outage != first.outage
                || s.commodities != first.commodities
                || s.arrivals.commodities.iter().zip(&first.arrivals.commodities).any(|(a, b)| a.pre != b.pre)
            {
                return Err(Error::config("forked scenarios differ before the outage"));
            }
        }
        let mut st = self.start(first, seed);
        st.run_until(self, first, fork_at)?;
        scenarios
            .iter()
            .map(|s| {
                let mut branch = st.clone();
                branch.run_until(self, s, self.config.horizon)?;
                branch.finish(s)
            })
            .collect()
    }

    /// The flow-matching LP a trial would solve at its current slot.
    pub fn current_lp(&self, scenario: &Scenario, st: &TrialState, named: bool) -> Result<FlowMatchingLp> {
        let actual_links: Vec<f64> = scenario.network.links().iter().map(|l| l.capacity).collect();
        let actual_nodes: Vec<f64> = scenario.network.nodes().iter().map(|n| n.capacity).collect();
        let abar: Vec<Vec<f64>> = st.fading.iter().map(|f| f.values().to_vec()).collect();
        build_lp(&FlowMatchingInput {
            scenario,
            requests: &st.requests,
            backlog: &st.queues.backlog,
            arrival_avg: &abar,
            link_cap: &actual_links,
            node_cap: &actual_nodes,
            alive: &st.alive,
            lookahead: self.config.lookahead,
            named,
        })
    }
}

/// Mutable state of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub t: usize,
    pub queues: QueueState,
    pub virtual_queues: VirtualQueues,
    pub requests: RequestQueues,
    pub frame: FrameState,
    pub fading: Vec<FadingAverage>,
    pub alive: AliveMask,
    /// Running full-history mean of the virtual flow (baseline only).
    nu_history: Vec<Vec<f64>>,
    streams: ArrivalStreams,
    arrivals_now: Vec<Vec<f64>>,
    /// Basis of the previous slot's flow-matching LP.
    warm: WarmStart,
    trace: TrialTrace,
}

impl TrialState {
    fn new(engine: &Engine<'_>, scenario: &Scenario, seed: u64) -> Self {
        let config = engine.config;
        let ncom = scenario.commodities.len();
        let mut streams = ArrivalStreams::new(seed, ncom);
        let arrivals_now = scenario.arrivals.sample(0, &mut streams);
        let mut queues = QueueState::new(scenario);
        queues.incoming = config.incoming;
        queues.add_arrivals(scenario, &arrivals_now);
        let horizon = config.horizon;
        let trace = TrialTrace {
            seed,
            variant: config.variant,
            v: engine.penalty.v,
            series: Series::new(scenario.layouts().iter().map(|l| l.total_scaling).collect(), horizon),
            virtual_total: Vec::with_capacity(horizon),
            request_norm: Vec::with_capacity(horizon),
            capacities: Vec::new(),
            cum_nu_at_outage: None,
            cum_x_at_outage: None,
            cum_nu: scenario.edge_tensors(),
            cum_x: scenario.edge_tensors(),
            flows: config.verbose.then(ResourceFlows::default),
            summary: TrialSummary {
                lost: vec![0.0; ncom],
                max_conservation_residual: 0.0,
                lp_iterations: 0,
                max_lp_vars: 0,
                max_lp_rows: 0,
            },
        };
        Self {
            t: 0,
            queues,
            virtual_queues: VirtualQueues::new(scenario),
            requests: RequestQueues::new(scenario),
            frame: FrameState::new(scenario, config.capacity()),
            fading: scenario
                .layouts()
                .iter()
                .map(|l| FadingAverage::new(config.t_forget, l.lifetimes + 1))
                .collect(),
            alive: AliveMask::all(&scenario.network),
            nu_history: scenario.edge_tensors(),
            streams,
            arrivals_now,
            warm: WarmStart::default(),
            trace,
        }
    }

    pub fn run_until(&mut self, engine: &Engine<'_>, scenario: &Scenario, end: usize) -> Result<()> {
        while self.t < end {
            self.step(engine, scenario)
                .map_err(|e| match e {
                    Error::Invariant { .. } => e,
                    other => Error::Invariant {
                        slot: self.t,
                        detail: other.to_string(),
                    },
                })?;
        }
        Ok(())
    }

    /// Outage actions at `t_o`: mark failures, drop stranded backlog and,
    /// for the resilient variant, reset capacities and redistribute frame
    /// averages. The arrival switch is built into the scenario's arrival
    /// process.
    fn outage(&mut self, engine: &Engine<'_>, scenario: &Scenario) -> Result<()> {
        self.alive = scenario.outage_mask()?;
        let before: Vec<f64> = self.queues.counters.iter().map(|c| c.lost).collect();
        self.queues.drop_failed(scenario, &self.alive);
        for (c, b) in before.iter().enumerate() {
            self.trace.summary.lost[c] += self.queues.counters[c].lost - b;
        }
        self.trace.cum_nu_at_outage = Some(self.trace.cum_nu.clone());
        self.trace.cum_x_at_outage = Some(self.trace.cum_x.clone());
        if engine.config.variant == Variant::ResRcnc {
            self.frame.outage_reset(scenario, &self.alive);
            self.frame.redistribute(scenario, &self.alive);
        }
        Ok(())
    }

    /// One slot of the control loop.
    pub fn step(&mut self, engine: &Engine<'_>, scenario: &Scenario) -> Result<()> {
        let t = self.t;
        let config = engine.config;
        if scenario.outage.as_ref().is_some_and(|o| o.time == t) {
            self.outage(engine, scenario)?;
        }

        let w = compute_weights(scenario, &self.virtual_queues, engine.penalty.v);
        let nu = max_weight_assign(
            scenario,
            &engine.index,
            &w,
            &self.frame.link_cap,
            &self.frame.node_cap,
            &self.alive,
        );

        let fm = engine.current_lp(scenario, self, false)?;
        let start = self.warm.basis_for(&fm);
        let sol = engine.solver.solve_from(&fm.lp, start.as_ref())?;
        self.warm.remember(&fm, &sol.basis);
        self.trace.summary.lp_iterations += sol.iterations as u64;
        self.trace.summary.max_lp_vars = self.trace.summary.max_lp_vars.max(fm.lp.num_vars());
        self.trace.summary.max_lp_rows = self.trace.summary.max_lp_rows.max(fm.lp.rows.len());
        let x = fm.extract(scenario, &sol);
        check_admissible(scenario, &x, &self.alive, t)?;

        let next = scenario.arrivals.sample(t + 1, &mut self.streams);
        let outcome = self.queues.advance(scenario, &x, t)?;
        self.queues.add_arrivals(scenario, &next);

        let a = std::mem::replace(&mut self.arrivals_now, next);
        self.virtual_queues.update(scenario, &nu, &a);
        match config.variant {
            Variant::ResRcnc => self.requests.update(&nu, &x),
            Variant::Rcnc => {
                let k = t as f64;
                for (h, v) in self.nu_history.iter_mut().zip(&nu) {
                    for (h, &v) in h.iter_mut().zip(v) {
                        *h = (k * *h + v) / (k + 1.0);
                    }
                }
                self.requests.update(&self.nu_history, &x);
            }
        }
        for (c, f) in self.fading.iter_mut().enumerate() {
            f.update(&a[c], t);
        }
        self.frame.update_averages(&nu, &x, t);
        if self.frame.is_frame_end(t) {
            let eps = self.frame.reductions(scenario, &self.alive);
            match config.variant {
                Variant::ResRcnc => self.frame.apply(scenario, &eps),
                Variant::Rcnc => self.frame.apply_scaled(scenario, &eps, config.kappa),
            }
            self.trace.capacities.push(CapacitySnapshot {
                slot: t,
                links: self.frame.link_cap.clone(),
                nodes: self.frame.node_cap.clone(),
            });
            self.check_conservation(scenario)?;
        }

        self.record(scenario, &a, &nu, &x, &outcome.delivered, &outcome.expired);
        self.t += 1;
        Ok(())
    }

    fn check_conservation(&mut self, scenario: &Scenario) -> Result<()> {
        self.queues.check(scenario, self.t)?;
        for ledger in conservation_report(scenario, &self.queues) {
            let r = ledger.relative_residual();
            let m = &mut self.trace.summary.max_conservation_residual;
            *m = m.max(r);
        }
        Ok(())
    }

    fn record(
        &mut self,
        scenario: &Scenario,
        a: &[Vec<f64>],
        nu: &[Vec<f64>],
        x: &[Vec<f64>],
        delivered: &[f64],
        expired: &[f64],
    ) {
        let tr = &mut self.trace;
        for c in 0..scenario.commodities.len() {
            tr.series.arrivals[c].push(a[c].iter().sum());
            tr.series.delivered[c].push(delivered[c]);
            tr.series.expired[c].push(expired[c]);
            let lay = scenario.layout(c);
            let g = scenario.graph(c);
            let mut h = 0.0;
            for (e, edge) in g.edges().iter().enumerate() {
                let sent: f64 = (1..=lay.lifetimes).map(|l| x[c][lay.el(e, l)]).sum();
                if sent != 0.0 {
                    h += scenario.edge_cost(c, e) * edge.rho * sent;
                }
            }
            tr.series.cost[c].push(h);
            for (acc, v) in tr.cum_nu[c].iter_mut().zip(&nu[c]) {
                *acc += v;
            }
            for (acc, v) in tr.cum_x[c].iter_mut().zip(&x[c]) {
                *acc += v;
            }
        }
        tr.virtual_total.push(self.virtual_queues.total());
        tr.request_norm.push(self.requests.norm());
        if let Some(flows) = tr.flows.as_mut() {
            let links = scenario.network.link_count();
            let mut fnu = vec![0.0; links + scenario.network.node_count()];
            let mut fx = fnu.clone();
            for c in 0..scenario.commodities.len() {
                let lay = scenario.layout(c);
                for (e, edge) in scenario.graph(c).edges().iter().enumerate() {
                    let r = Resource::of(edge.kind).flat(links);
                    for l in 1..=lay.lifetimes {
                        fnu[r] += edge.rho * nu[c][lay.el(e, l)];
                        fx[r] += edge.rho * x[c][lay.el(e, l)];
                    }
                }
            }
            flows.nu.push(fnu);
            flows.x.push(fx);
        }
    }

    pub fn finish(mut self, scenario: &Scenario) -> Result<TrialTrace> {
        self.check_conservation(scenario)?;
        Ok(self.trace)
    }
}

/// Non-negativity, actual capacity and dead-edge checks on an executed
/// decision (availability is enforced by the queue update).
pub fn check_admissible(scenario: &Scenario, x: &[Vec<f64>], alive: &AliveMask, slot: usize) -> Result<()> {
    let links = scenario.network.link_count();
    let mut used = vec![0.0; links + scenario.network.node_count()];
    for c in 0..scenario.commodities.len() {
        let lay = scenario.layout(c);
        let g = scenario.graph(c);
        for (e, edge) in g.edges().iter().enumerate() {
            for l in 1..=lay.lifetimes {
                let v = x[c][lay.el(e, l)];
                if v == 0.0 {
                    continue;
                }
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Invariant {
                        slot,
                        detail: format!("negative or non-finite flow {v}"),
                    });
                }
                if !lay.controllable[e] || !alive.edge_alive(g, e) {
                    return Err(Error::Invariant {
                        slot,
                        detail: format!("flow on unusable edge {:?}", g.edge_key(e)),
                    });
                }
                used[Resource::of(edge.kind).flat(links)] += edge.rho * v;
            }
        }
    }
    for (r, &u) in used.iter().enumerate() {
        let cap = if r < links {
            scenario.network.links()[r].capacity
        } else {
            scenario.network.nodes()[r - links].capacity
        };
        if u > cap * (1.0 + 1e-7) + 1e-9 {
            return Err(Error::Invariant {
                slot,
                detail: format!("resource {r} uses {u} of capacity {cap}"),
            });
        }
    }
    Ok(())
}

/// Cost per unit of flow on an edge: link cost per packet, node cost per
/// CPU unit times the workload.
pub fn unit_cost(scenario: &Scenario, c: usize, e: usize) -> f64 {
    let edge = &scenario.graph(c).edges()[e];
    match edge.kind {
        EdgeKind::Transmission { .. } => scenario.edge_cost(c, e),
        EdgeKind::Processing { .. } => scenario.edge_cost(c, e) * edge.rho,
    }
}
