//! Frame-wise virtual-capacity iteration and the outage-time actions.

use serde::{Deserialize, Serialize};

use crate::model::EdgeKind;
use crate::scenario::{AliveMask, Resource, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    /// Frame length K in slots.
    pub frame: usize,
    /// Reduction threshold for links, packets/slot.
    pub r_min_tr: f64,
    /// Reduction threshold for processing, CPU units.
    pub r_min_pr: f64,
    /// Virtual capacity never drops below this fraction of the actual one.
    pub floor_fraction: f64,
}

/// Per-resource reductions at a frame end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reductions {
    pub links: Vec<f64>,
    pub nodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub config: CapacityConfig,
    pub nu_avg: Vec<Vec<f64>>,
    pub x_avg: Vec<Vec<f64>>,
    pub link_cap: Vec<f64>,
    pub node_cap: Vec<f64>,
}

impl FrameState {
    pub fn new(scenario: &Scenario, config: CapacityConfig) -> Self {
        assert!(config.frame >= 1, "frame length must be positive");
        Self {
            config,
            nu_avg: scenario.edge_tensors(),
            x_avg: scenario.edge_tensors(),
            link_cap: scenario.network.links().iter().map(|l| l.capacity).collect(),
            node_cap: scenario.network.nodes().iter().map(|n| n.capacity).collect(),
        }
    }

    /// Running frame averages: restart at the first slot of each frame,
    /// incremental mean afterwards.
    pub fn update_averages(&mut self, nu: &[Vec<f64>], x: &[Vec<f64>], t: usize) {
        let j = t % self.config.frame;
        let (keep, div) = (j as f64, (j + 1) as f64);
        for (avg, val) in [(&mut self.nu_avg, nu), (&mut self.x_avg, x)] {
            for (a, v) in avg.iter_mut().zip(val) {
                if j == 0 {
                    a.copy_from_slice(v);
                } else {
                    for (a, &v) in a.iter_mut().zip(v) {
                        *a = (keep * *a + v) / div;
                    }
                }
            }
        }
    }

    pub fn is_frame_end(&self, t: usize) -> bool {
        (t + 1) % self.config.frame == 0
    }

    /// Reductions from the frame averages. The shortfall of an edge is
    /// credited with the share of its tail's incoming shortfall that is
    /// proportional to its part of the tail's outgoing virtual flow.
    pub fn reductions(&self, scenario: &Scenario, alive: &AliveMask) -> Reductions {
        let mut eps = Reductions {
            links: vec![0.0; scenario.network.link_count()],
            nodes: vec![0.0; scenario.network.node_count()],
        };
        for c in 0..scenario.commodities.len() {
            let lay = scenario.layout(c);
            let g = scenario.graph(c);
            let mut short = vec![0.0; lay.edges];
            let mut nu_e = vec![0.0; lay.edges];
            for e in 0..lay.edges {
                for l in 1..=lay.lifetimes {
                    let i = lay.el(e, l);
                    short[e] += (self.nu_avg[c][i] - self.x_avg[c][i]).max(0.0);
                    nu_e[e] += self.nu_avg[c][i];
                }
            }
            for (e, edge) in g.edges().iter().enumerate() {
                if !lay.controllable[e] || !alive.edge_alive(g, e) {
                    continue;
                }
                let incoming: f64 = g.in_edges(edge.tail).iter().map(|&k| short[k]).sum();
                let out_nu: f64 = g.out_edges(edge.tail).iter().map(|&k| nu_e[k]).sum();
                let ratio = if out_nu > 0.0 { nu_e[e] / out_nu } else { 0.0 };
                let contrib = edge.rho * (short[e] - incoming * ratio);
                match edge.kind {
                    EdgeKind::Transmission { link } => eps.links[link] += contrib,
                    EdgeKind::Processing { node } => eps.nodes[node] += contrib,
                }
            }
        }
        eps
    }

    fn floor(&self, actual: f64) -> f64 {
        self.config.floor_fraction * actual
    }

    /// Thresholded update `C(k+1) = C(k) - eps * 1{eps > r_min}`.
    pub fn apply(&mut self, scenario: &Scenario, eps: &Reductions) {
        for (i, l) in scenario.network.links().iter().enumerate() {
            if eps.links[i] > self.config.r_min_tr {
                self.link_cap[i] = (self.link_cap[i] - eps.links[i]).max(self.floor(l.capacity));
            }
        }
        for (i, n) in scenario.network.nodes().iter().enumerate() {
            if eps.nodes[i] > self.config.r_min_pr {
                self.node_cap[i] = (self.node_cap[i] - eps.nodes[i]).max(self.floor(n.capacity));
            }
        }
    }

    /// Ungated update `C(k+1) = C(k) - kappa * max(0, eps)` used by the
    /// baseline.
    pub fn apply_scaled(&mut self, scenario: &Scenario, eps: &Reductions, kappa: f64) {
        for (i, l) in scenario.network.links().iter().enumerate() {
            self.link_cap[i] = (self.link_cap[i] - kappa * eps.links[i].max(0.0)).max(self.floor(l.capacity));
        }
        for (i, n) in scenario.network.nodes().iter().enumerate() {
            self.node_cap[i] = (self.node_cap[i] - kappa * eps.nodes[i].max(0.0)).max(self.floor(n.capacity));
        }
    }

    /// Surviving resources get their actual capacity back; failed ones drop
    /// to zero.
    pub fn outage_reset(&mut self, scenario: &Scenario, alive: &AliveMask) {
        for (i, l) in scenario.network.links().iter().enumerate() {
            self.link_cap[i] = if alive.links[i] { l.capacity } else { 0.0 };
        }
        for (i, n) in scenario.network.nodes().iter().enumerate() {
            self.node_cap[i] = if alive.nodes[i] { n.capacity } else { 0.0 };
        }
    }

    /// Moves the frame-average flow of failed edges onto the surviving edges
    /// of the same kind, stage, commodity and lifetime, in proportion to
    /// their own averages (uniformly if those are all zero).
    pub fn redistribute(&mut self, scenario: &Scenario, alive: &AliveMask) {
        for c in 0..scenario.commodities.len() {
            let lay = scenario.layout(c);
            let g = scenario.graph(c);
            for processing in [false, true] {
                let stages = if processing { g.stages() - 1 } else { g.stages() };
                for m in 1..=stages {
                    let group = |alive_side: bool| -> Vec<usize> {
                        (0..lay.edges)
                            .filter(|&e| {
                                let edge = &g.edges()[e];
                                edge.stage == m
                                    && edge.is_processing() == processing
                                    && lay.controllable[e]
                                    && alive.edge_alive(g, e) == alive_side
                            })
                            .collect()
                    };
                    let dead = group(false);
                    if dead.is_empty() {
                        continue;
                    }
                    let live = group(true);
                    for avg in [&mut self.nu_avg[c], &mut self.x_avg[c]] {
                        for l in 1..=lay.lifetimes {
                            let lost: f64 = dead.iter().map(|&e| avg[lay.el(e, l)]).sum();
                            if lost == 0.0 || live.is_empty() {
                                continue;
                            }
                            for &e in &dead {
                                avg[lay.el(e, l)] = 0.0;
                            }
                            let kept: f64 = live.iter().map(|&e| avg[lay.el(e, l)]).sum();
                            for &e in &live {
                                let share = if kept > 0.0 {
                                    avg[lay.el(e, l)] / kept
                                } else {
                                    1.0 / live.len() as f64
                                };
                                avg[lay.el(e, l)] += share * lost;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Virtual capacity of a physical resource.
    pub fn capacity(&self, r: Resource) -> f64 {
        match r {
            Resource::Link(i) => self.link_cap[i],
            Resource::Node(i) => self.node_cap[i],
        }
    }
}
