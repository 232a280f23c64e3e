//! Matching the actual flow to the virtual flow: request queues and the
//! n-slot look-ahead linear program.

use crate::error::{Error, Result};
use crate::lp::{Basis, LinearProgram, LpSolver, Row, Solution, VarStatus};
use crate::model::EdgeKind;
use crate::scenario::{AliveMask, Resource, Scenario};

/// Signed request queues `R[c][e, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestQueues {
    pub r: Vec<Vec<f64>>,
}

impl RequestQueues {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            r: scenario.edge_tensors(),
        }
    }

    /// `R(t+1) = R(t) + target - x(t)`, where `target` is the virtual flow (or
    /// its running average for the baseline). No clamping.
    pub fn update(&mut self, target: &[Vec<f64>], x: &[Vec<f64>]) {
        for ((r, t), x) in self.r.iter_mut().zip(target).zip(x) {
            for ((r, t), x) in r.iter_mut().zip(t).zip(x) {
                *r += t - x;
            }
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.r.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Delayed column sum `g_tau(X) = sum_{s=1..tau} D^(tau-s+1) X[:, s]` where
/// `columns[s-1]` holds column `s` with lifetimes `1..=L` at indices
/// `0..L`, and `D` shifts every entry one lifetime down.
pub fn g_tau(columns: &[Vec<f64>], tau: usize) -> Result<Vec<f64>> {
    if tau > columns.len() {
        return Err(Error::Dimension(format!(
            "g_tau with tau = {tau} on {} columns",
            columns.len()
        )));
    }
    let len = columns.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (s, col) in columns.iter().enumerate().take(tau) {
        let shift = tau - s;
        for l in 0..len {
            if let Some(v) = col.get(l + shift) {
                out[l] += v;
            }
        }
    }
    Ok(out)
}

/// Inputs to one flow-matching problem.
pub struct FlowMatchingInput<'a> {
    pub scenario: &'a Scenario,
    pub requests: &'a RequestQueues,
    /// Actual backlog `Q[c][v, l]`.
    pub backlog: &'a [Vec<f64>],
    /// Fading-average arrivals at each commodity's source, by lifetime.
    pub arrival_avg: &'a [Vec<f64>],
    /// Actual capacities per physical link and node.
    pub link_cap: &'a [f64],
    pub node_cap: &'a [f64],
    pub alive: &'a AliveMask,
    pub lookahead: usize,
    /// Attach readable variable names (for dumps).
    pub named: bool,
}

/// The LP together with the meaning of every variable.
#[derive(Debug, Clone)]
pub struct FlowMatchingLp {
    pub lp: LinearProgram,
    /// `(commodity, layered edge, lifetime, look-ahead slot 1..=n)`.
    pub vars: Vec<(usize, usize, usize, usize)>,
    /// What each row of `lp` constrains.
    pub rows: Vec<RowKey>,
    /// Dense ids of variables and rows that are stable across slots, and
    /// the size of each id space.
    var_keys: Vec<u32>,
    row_keys: Vec<u32>,
    key_space: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKey {
    /// Cohort of commodity `c` at layered node `v` holding lifetime `l` at
    /// look-ahead offset `tau`.
    Availability { c: usize, v: usize, tau: usize, l: usize },
    /// Flat resource index (links first) in look-ahead slot `slot`.
    Capacity { resource: usize, slot: usize },
}

/// Basis statuses of the last solved program, looked up by meaning so they
/// carry over to the next slot's program even when its shape changes.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    vars: Vec<VarStatus>,
    rows: Vec<VarStatus>,
    seen: bool,
}

impl WarmStart {
    pub fn remember(&mut self, fm: &FlowMatchingLp, basis: &Basis) {
        self.vars.clear();
        self.vars.resize(fm.key_space.0, VarStatus::Lower);
        self.rows.clear();
        self.rows.resize(fm.key_space.1, VarStatus::Basic);
        for (&k, &st) in fm.var_keys.iter().zip(&basis.cols) {
            self.vars[k as usize] = st;
        }
        for (&k, &st) in fm.row_keys.iter().zip(&basis.rows) {
            self.rows[k as usize] = st;
        }
        self.seen = true;
    }

    /// Starting basis for `fm`, or `None` before anything was remembered.
    pub fn basis_for(&self, fm: &FlowMatchingLp) -> Option<Basis> {
        if !self.seen || (self.vars.len(), self.rows.len()) != fm.key_space {
            return None;
        }
        Some(Basis {
            cols: fm.var_keys.iter().map(|&k| self.vars[k as usize]).collect(),
            rows: fm.row_keys.iter().map(|&k| self.rows[k as usize]).collect(),
        })
    }
}

impl FlowMatchingLp {
    /// Executed decision: the first look-ahead column of every plan.
    pub fn extract(&self, scenario: &Scenario, sol: &Solution) -> Vec<Vec<f64>> {
        let mut x = scenario.edge_tensors();
        for (k, &(c, e, l, s)) in self.vars.iter().enumerate() {
            if s == 1 {
                x[c][scenario.layout(c).el(e, l)] = sol.x[k];
            }
        }
        x
    }

    pub fn solve(&self, solver: &dyn LpSolver) -> Result<Solution> {
        solver.solve(&self.lp)
    }
}

const NONE: u32 = u32::MAX;

/// Builds the flow-matching LP.
///
/// Variables are look-ahead flows `M[c][e][l, s]`. A variable is kept only if
/// its request is positive or it can feed a kept variable at its head in a
/// later slot; every other variable has a non-positive objective and can only
/// tighten constraints, so fixing it at zero leaves the optimum unchanged.
/// Availability rows are written per lifetime cohort: for slot `tau` and
/// lifetime `l`, everything sent so far by the cohort that will hold lifetime
/// `l` at slot `tau` is bounded by its backlog, its predicted arrivals and
/// its scaled inflow.
pub fn build_lp(input: &FlowMatchingInput<'_>) -> Result<FlowMatchingLp> {
    let s = input.scenario;
    let n = input.lookahead;
    if n == 0 {
        return Err(Error::Dimension("look-ahead depth must be at least 1".into()));
    }
    let ncom = s.commodities.len();
    if input.requests.r.len() != ncom || input.backlog.len() != ncom || input.arrival_avg.len() != ncom {
        return Err(Error::Dimension("per-commodity inputs disagree with the scenario".into()));
    }
    let links = s.network.link_count();
    let mut lp = LinearProgram::default();
    let mut vars = Vec::new();
    let mut rows = Vec::new();
    let (mut var_keys, mut row_keys) = (Vec::new(), Vec::new());
    let (mut var_base, mut row_base) = (0usize, 0usize);

    for c in 0..ncom {
        let lay = s.layout(c);
        let g = s.graph(c);
        let lmax = lay.lifetimes;
        let r = &input.requests.r[c];
        if r.len() != lay.edges * lay.stride() || input.backlog[c].len() != lay.nodes * lay.stride() {
            return Err(Error::Dimension(format!("commodity {c}: tensor sizes")));
        }
        let slot = |e: usize, l: usize, s: usize| (lay.el(e, l)) * n + (s - 1);
        let mut useful = vec![false; lay.edges * lay.stride() * n];
        // has_out[(v, l) * n + s - 1]: some useful outgoing variable at v
        let mut has_out = vec![false; lay.nodes * lay.stride() * n];
        let live: Vec<bool> = (0..lay.edges)
            .map(|e| lay.controllable[e] && input.alive.edge_alive(g, e))
            .collect();
        for sl in (1..=n).rev() {
            for (e, edge) in g.edges().iter().enumerate() {
                if !live[e] {
                    continue;
                }
                for l in 1..=lmax {
                    let mut u = r[lay.el(e, l)] > 0.0;
                    if !u && edge.head != lay.destination {
                        let mut k = 0;
                        while !u && sl + 1 + k <= n && l >= 2 + k {
                            u = has_out[lay.vl(edge.head, l - 1 - k) * n + sl + k];
                            k += 1;
                        }
                    }
                    if u {
                        useful[slot(e, l, sl)] = true;
                        has_out[lay.vl(edge.tail, l) * n + sl - 1] = true;
                    }
                }
            }
        }
        let mut ids = vec![NONE; useful.len()];
        for e in 0..lay.edges {
            for l in 1..=lmax {
                for sl in 1..=n {
                    if useful[slot(e, l, sl)] {
                        ids[slot(e, l, sl)] = lp.objective.len() as u32;
                        var_keys.push((var_base + slot(e, l, sl)) as u32);
                        lp.objective.push(r[lay.el(e, l)]);
                        lp.upper.push(f64::INFINITY);
                        vars.push((c, e, l, sl));
                        if input.named {
                            let (a, b) = g.edge_key(e);
                            lp.names.push(format!("x_c{}_{a}_{b}_l{l}_s{sl}", s.commodities[c].id));
                        }
                    }
                }
            }
        }

        // availability rows
        let q = &input.backlog[c];
        let abar = &input.arrival_avg[c];
        for v in 0..lay.nodes {
            if v == lay.destination {
                continue;
            }
            let degree = g.out_edges(v).len() + g.in_edges(v).len();
            for tau in 0..n {
                for l in 1..=lmax {
                    let mut coefs = Vec::with_capacity((tau + 1) * degree);
                    for sl in 1..=tau + 1 {
                        let lt = l + tau + 1 - sl;
                        if lt > lmax {
                            continue;
                        }
                        for &e in g.out_edges(v) {
                            let id = ids[slot(e, lt, sl)];
                            if id != NONE {
                                coefs.push((id as usize, 1.0));
                            }
                        }
                    }
                    if coefs.is_empty() {
                        continue;
                    }
                    let mut rhs = if l + tau <= lmax { q[lay.vl(v, l + tau)] } else { 0.0 };
                    if v == lay.source {
                        for sl in 2..=tau + 1 {
                            let lt = l + tau + 1 - sl;
                            if lt <= lmax {
                                rhs += abar[lt];
                            }
                        }
                    }
                    for sl in 1..=tau {
                        let lt = l + tau + 1 - sl;
                        if lt > lmax {
                            continue;
                        }
                        for &e in g.in_edges(v) {
                            let id = ids[slot(e, lt, sl)];
                            if id != NONE {
                                coefs.push((id as usize, -g.edges()[e].zeta));
                            }
                        }
                    }
                    lp.rows.push(Row { coefs, rhs: rhs.max(0.0) });
                    rows.push(RowKey::Availability { c, v, tau, l });
                    row_keys.push((row_base + lay.vl(v, l) * n + tau) as u32);
                }
            }
        }
        var_base += useful.len();
        row_base += lay.nodes * lay.stride() * n;
    }

    // capacity rows: one per physical resource and look-ahead slot
    let resources = links + s.network.node_count();
    let mut cap_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); resources * n];
    for (k, &(c, e, _, sl)) in vars.iter().enumerate() {
        let edge = &s.graph(c).edges()[e];
        let r = Resource::of(edge.kind).flat(links);
        let coef = match edge.kind {
            EdgeKind::Transmission { .. } => 1.0,
            EdgeKind::Processing { .. } => edge.rho,
        };
        cap_rows[r * n + sl - 1].push((k, coef));
    }
    for (i, coefs) in cap_rows.into_iter().enumerate() {
        if coefs.is_empty() {
            continue;
        }
        let r = i / n;
        let rhs = if r < links {
            input.link_cap[r]
        } else {
            input.node_cap[r - links]
        };
        lp.rows.push(Row { coefs, rhs });
        rows.push(RowKey::Capacity { resource: r, slot: i % n + 1 });
        row_keys.push((row_base + i) as u32);
    }
    Ok(FlowMatchingLp {
        lp,
        vars,
        rows,
        var_keys,
        row_keys,
        key_space: (var_base, row_base + resources * n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::Simplex;
    use crate::scenario::fixtures;

    fn solve(input: &FlowMatchingInput<'_>) -> (FlowMatchingLp, Solution) {
        let fm = build_lp(input).unwrap();
        let sol = fm.solve(&Simplex::default()).unwrap();
        (fm, sol)
    }

    #[test]
    fn request_queue_updates() {
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let mut r = RequestQueues::new(&s);
        let mut nu = s.edge_tensors();
        let mut x = s.edge_tensors();
        nu[0][1] = 140_000.0;
        x[0][1] = 100_000.0;
        r.update(&nu, &x);
        assert_eq!(r.r[0][1], 40_000.0);
        r.r[0][2] = 5.0;
        let mut x = s.edge_tensors();
        x[0][2] = 5.0;
        r.update(&s.edge_tensors(), &x);
        assert_eq!(r.r[0][2], 0.0);
        let before = r.clone();
        r.update(&x, &x);
        assert_eq!(r, before);
    }

    #[test]
    fn g_tau_examples() {
        assert_eq!(g_tau(&[vec![1.0, 2.0]], 0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(g_tau(&[vec![0.0, 0.0, 1.0]], 1).unwrap(), vec![0.0, 1.0, 0.0]);
        let x = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert_eq!(g_tau(&x, 2).unwrap(), vec![2.0, 0.0]);
        assert!(g_tau(&x, 3).is_err());
    }

    fn two_node_input<'a>(
        s: &'a Scenario,
        r: &'a RequestQueues,
        q: &'a [Vec<f64>],
        abar: &'a [Vec<f64>],
        caps: (&'a [f64], &'a [f64]),
        alive: &'a AliveMask,
        n: usize,
    ) -> FlowMatchingInput<'a> {
        FlowMatchingInput {
            scenario: s,
            requests: r,
            backlog: q,
            arrival_avg: abar,
            link_cap: caps.0,
            node_cap: caps.1,
            alive,
            lookahead: n,
            named: true,
        }
    }

    #[test]
    fn two_node_single_slot() {
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let lay = s.layout(0);
        let e = s.graph(0).out_edges(lay.source)[0];
        let mut r = RequestQueues::new(&s);
        r.r[0][lay.el(e, 2)] = 1.0;
        let mut q = s.node_tensors();
        q[0][lay.vl(lay.source, 2)] = 3.0;
        let abar = vec![vec![0.0; 3]];
        let alive = AliveMask::all(&s.network);
        let (links, nodes) = (vec![10.0], vec![10.0, 10.0]);
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 1);
        let (fm, sol) = solve(&input);
        assert_eq!(sol.objective, 3.0);
        let x = fm.extract(&s, &sol);
        assert_eq!(x[0][lay.el(e, 2)], 3.0);
    }

    #[test]
    fn nothing_requested_nothing_sent() {
        let s = fixtures::diamond(0.0, None);
        let mut r = RequestQueues::new(&s);
        for v in r.r[0].iter_mut() {
            *v = -1.0;
        }
        let mut q = s.node_tensors();
        for v in q[0].iter_mut() {
            *v = 5.0;
        }
        let abar = vec![vec![1.0; 7]];
        let alive = AliveMask::all(&s.network);
        let links = vec![30.0; 5];
        let nodes = vec![4.0; 4];
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 2);
        let (fm, sol) = solve(&input);
        assert!(fm.lp.objective.is_empty());
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn lifetime_one_cohort_is_available() {
        // backlog only at lifetime 1 can still be sent this slot
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let lay = s.layout(0);
        let e = s.graph(0).out_edges(lay.source)[0];
        let mut r = RequestQueues::new(&s);
        r.r[0][lay.el(e, 1)] = 1.0;
        let mut q = s.node_tensors();
        q[0][lay.vl(lay.source, 1)] = 4.0;
        let abar = vec![vec![0.0; 3]];
        let alive = AliveMask::all(&s.network);
        let (links, nodes) = (vec![10.0], vec![10.0, 10.0]);
        for n in 1..=3 {
            let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, n);
            let (fm, sol) = solve(&input);
            assert_eq!(fm.extract(&s, &sol)[0][lay.el(e, 1)], 4.0);
        }
    }

    #[test]
    fn lookahead_uses_predicted_arrivals() {
        // lifetime 2 requested; nothing queued but 6 expected next slot
        let s = fixtures::two_node(100.0, 0.0, 2, 0.9);
        let lay = s.layout(0);
        let e = s.graph(0).out_edges(lay.source)[0];
        let mut r = RequestQueues::new(&s);
        r.r[0][lay.el(e, 2)] = 1.0;
        let q = s.node_tensors();
        let abar = vec![vec![0.0, 0.0, 6.0]];
        let alive = AliveMask::all(&s.network);
        let (links, nodes) = (vec![100.0], vec![10.0, 10.0]);
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 2);
        let (fm, sol) = solve(&input);
        assert_eq!(sol.objective, 6.0);
        // nothing executable now
        assert!(fm.extract(&s, &sol)[0].iter().all(|&v| v == 0.0));
        assert!(fm.lp.to_lp_format().contains("x_c1_"));
    }

    #[test]
    fn capacity_is_shared_across_slots_independently() {
        let s = fixtures::two_node(2.0, 0.0, 3, 0.9);
        let lay = s.layout(0);
        let e = s.graph(0).out_edges(lay.source)[0];
        let mut r = RequestQueues::new(&s);
        r.r[0][lay.el(e, 3)] = 1.0;
        r.r[0][lay.el(e, 2)] = 1.0;
        let mut q = s.node_tensors();
        q[0][lay.vl(lay.source, 3)] = 10.0;
        let abar = vec![vec![0.0; 4]];
        let alive = AliveMask::all(&s.network);
        let (links, nodes) = (vec![2.0], vec![10.0, 10.0]);
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 2);
        let (_, sol) = solve(&input);
        // two slots of capacity 2
        assert!((sol.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn relay_through_middle_node() {
        // diamond: ask only for the final hop; the first hop is kept as a feeder
        let s = fixtures::diamond(0.0, None);
        let lay = s.layout(0);
        let g = s.graph(0);
        let mid = g.index_of(&s.network, 2, 3).unwrap();
        let src3 = g.index_of(&s.network, 1, 3).unwrap();
        let first = *g.out_edges(src3).iter().find(|&&e| g.edges()[e].head == mid).unwrap();
        let last = *g.out_edges(mid).iter().find(|&&e| g.edges()[e].head == lay.destination).unwrap();
        let mut r = RequestQueues::new(&s);
        r.r[0][lay.el(last, 2)] = 1.0;
        r.r[0][lay.el(first, 3)] = -0.5;
        let mut q = s.node_tensors();
        q[0][lay.vl(src3, 3)] = 7.0;
        let abar = vec![vec![0.0; 7]];
        let alive = AliveMask::all(&s.network);
        let links = vec![30.0; 5];
        let nodes = vec![4.0; 4];
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 2);
        let (fm, sol) = solve(&input);
        assert!((sol.objective - (7.0 - 0.5 * 7.0)).abs() < 1e-9, "{}", sol.objective);
        assert_eq!(fm.extract(&s, &sol)[0][lay.el(first, 3)], 7.0);
    }

    #[test]
    fn dead_edges_have_no_variables() {
        let s = fixtures::diamond(0.0, None);
        let mut r = RequestQueues::new(&s);
        for v in r.r[0].iter_mut() {
            *v = 1.0;
        }
        let q = s.node_tensors();
        let abar = vec![vec![0.0; 7]];
        let mut alive = AliveMask::all(&s.network);
        alive.nodes[1] = false;
        let links = vec![30.0; 5];
        let nodes = vec![4.0; 4];
        let input = two_node_input(&s, &r, &q, &abar, (&links, &nodes), &alive, 1);
        let fm = build_lp(&input).unwrap();
        let g = s.graph(0);
        assert!(fm
            .vars
            .iter()
            .all(|&(_, e, _, _)| alive.edge_alive(g, e) && s.layout(0).controllable[e]));
    }
}
