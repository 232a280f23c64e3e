//! The relaxed control plane: reliability and causality virtual queues,
//! drift-plus-penalty weights and the max-weight virtual flow.

use serde::Serialize;

use crate::model::EdgeKind;
use crate::scenario::{AliveMask, Resource, Scenario};

/// Penalty weight `V = V' * C_avg / e_avg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Penalty {
    pub v_prime: f64,
    pub v: f64,
    pub c_avg: f64,
    pub e_avg: f64,
}

/// Scales `v_prime` by the ratio of mean capacity to mean cost over every
/// commodity's layered edges, so the penalty and queue terms of the weights
/// are of comparable size.
pub fn choose_v(scenario: &Scenario, v_prime: f64) -> Penalty {
    let mut c_sum = 0.0;
    let mut e_sum = 0.0;
    let mut count = 0usize;
    for c in 0..scenario.commodities.len() {
        let lay = scenario.layout(c);
        for (e, edge) in scenario.graph(c).edges().iter().enumerate() {
            c_sum += scenario.edge_capacity(c, e) / edge.rho;
            e_sum += scenario.edge_cost(c, e) * edge.rho / lay.beta[edge.tail];
            count += 1;
        }
    }
    let (c_avg, e_avg) = if count == 0 {
        (0.0, 0.0)
    } else {
        (c_sum / count as f64, e_sum / count as f64)
    };
    let v = if v_prime == 0.0 || e_avg == 0.0 {
        0.0
    } else {
        v_prime * c_avg / e_avg
    };
    Penalty { v_prime, v, c_avg, e_avg }
}

/// Reliability queues `U_d` (one per commodity) and causality queues
/// `U[c][v, l]` (the consuming destination copy's entries stay zero).
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQueues {
    pub reliability: Vec<f64>,
    pub causality: Vec<Vec<f64>>,
}

impl VirtualQueues {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            reliability: vec![0.0; scenario.commodities.len()],
            causality: scenario.node_tensors(),
        }
    }

    /// One slot of virtual-queue dynamics driven by virtual flow `nu` and the
    /// arrivals `a` of the same slot.
    pub fn update(&mut self, scenario: &Scenario, nu: &[Vec<f64>], a: &[Vec<f64>]) {
        for (c, com) in scenario.commodities.iter().enumerate() {
            let lay = scenario.layout(c);
            let graph = scenario.graph(c);
            let lmax = lay.lifetimes;
            let nu_c = &nu[c];

            let into_d: f64 = graph
                .in_edges(lay.destination)
                .iter()
                .map(|&e| {
                    let z = graph.edges()[e].zeta;
                    (1..=lmax).map(|l| z * nu_c[lay.el(e, l)]).sum::<f64>()
                })
                .sum();
            let arrived: f64 = a[c].iter().skip(1).sum();
            let ud = &mut self.reliability[c];
            *ud = (*ud - into_d + lay.total_scaling * com.gamma_long * arrived).max(0.0);

            // suffix sums over lifetimes: x^(>= l)
            let mut out_ge = vec![0.0; lmax + 2];
            let mut in_ge = vec![0.0; lmax + 2];
            let u = &mut self.causality[c];
            for v in 0..lay.nodes {
                if v == lay.destination {
                    continue;
                }
                out_ge.iter_mut().for_each(|x| *x = 0.0);
                in_ge.iter_mut().for_each(|x| *x = 0.0);
                for &e in graph.out_edges(v) {
                    for l in 1..=lmax {
                        out_ge[l] += nu_c[lay.el(e, l)];
                    }
                }
                for &e in graph.in_edges(v) {
                    let z = graph.edges()[e].zeta;
                    for l in 1..=lmax {
                        in_ge[l] += z * nu_c[lay.el(e, l)];
                    }
                }
                let mut a_ge = vec![0.0; lmax + 2];
                if v == lay.source {
                    for l in (1..=lmax).rev() {
                        a_ge[l] = a_ge[l + 1] + a[c][l];
                    }
                }
                for l in (1..=lmax).rev() {
                    out_ge[l] += out_ge[l + 1];
                    in_ge[l] += in_ge[l + 1];
                }
                for l in 1..=lmax {
                    let i = lay.vl(v, l);
                    u[i] = (u[i] - a_ge[l] + out_ge[l] - in_ge[l + 1]).max(0.0);
                }
            }
        }
    }

    /// Sum of every virtual queue.
    pub fn total(&self) -> f64 {
        self.reliability.iter().sum::<f64>()
            + self.causality.iter().flatten().sum::<f64>()
    }
}

/// Drift-plus-penalty weight of every (commodity, layered edge, lifetime);
/// edges leaving the consuming destination copy get `-inf`.
pub fn compute_weights(scenario: &Scenario, queues: &VirtualQueues, v: f64) -> Vec<Vec<f64>> {
    let mut w = scenario.edge_tensors();
    for c in 0..scenario.commodities.len() {
        let lay = scenario.layout(c);
        let graph = scenario.graph(c);
        let lmax = lay.lifetimes;
        let u = &queues.causality[c];
        // prefix sums U^(<= l), with U^(<= 0) = 0
        let mut prefix = lay.node_tensor();
        for node in 0..lay.nodes {
            for l in 1..=lmax {
                prefix[lay.vl(node, l)] = prefix[lay.vl(node, l - 1)] + u[lay.vl(node, l)];
            }
        }
        let ud = queues.reliability[c];
        for (e, edge) in graph.edges().iter().enumerate() {
            if !lay.controllable[e] {
                for l in 1..=lmax {
                    w[c][lay.el(e, l)] = f64::NEG_INFINITY;
                }
                continue;
            }
            let cost = v * scenario.edge_cost(c, e);
            let bt = lay.beta[edge.tail] / edge.rho;
            let bh = edge.zeta * lay.beta[edge.head] / edge.rho;
            for l in 1..=lmax {
                let down = if edge.head == lay.destination {
                    ud
                } else {
                    prefix[lay.vl(edge.head, l - 1)]
                };
                w[c][lay.el(e, l)] = -cost - bt * prefix[lay.vl(edge.tail, l)] + bh * down;
            }
        }
    }
    w
}

/// One candidate for a physical resource in the max-weight step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub commodity: usize,
    pub lifetime: usize,
    pub stage: usize,
    pub weight: f64,
}

impl Candidate {
    fn key(&self) -> (usize, usize, usize) {
        (self.commodity, self.lifetime, self.stage)
    }
}

/// Index of the candidate that receives the whole resource: the largest
/// strictly positive weight, ties to the lowest (commodity, lifetime, stage).
pub fn select(cands: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cands.iter().enumerate() {
        if !(c.weight > 0.0) {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cb = &cands[b];
                if c.weight > cb.weight || (c.weight == cb.weight && c.key() < cb.key()) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Precomputed candidate lists: for every physical resource, the
/// (commodity, layered edge) pairs that draw on it, ordered by commodity
/// then stage.
#[derive(Debug, Clone)]
pub struct ResourceIndex {
    pub entries: Vec<Vec<(usize, usize)>>,
    links: usize,
}

impl ResourceIndex {
    pub fn new(scenario: &Scenario) -> Self {
        let links = scenario.network.link_count();
        let mut entries = vec![Vec::new(); links + scenario.network.node_count()];
        for c in 0..scenario.commodities.len() {
            let lay = scenario.layout(c);
            let graph = scenario.graph(c);
            let mut edges: Vec<usize> = (0..graph.edge_count()).filter(|&e| lay.controllable[e]).collect();
            edges.sort_by_key(|&e| (graph.edges()[e].stage, e));
            for e in edges {
                let r = Resource::of(graph.edges()[e].kind).flat(links);
                entries[r].push((c, e));
            }
        }
        Self { entries, links }
    }

    pub fn resource(&self, r: usize) -> Resource {
        if r < self.links {
            Resource::Link(r)
        } else {
            Resource::Node(r - self.links)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Max-weight virtual flow. `link_cap` and `node_cap` are the current
/// virtual capacities; dead resources receive nothing.
pub fn max_weight_assign(
    scenario: &Scenario,
    index: &ResourceIndex,
    w: &[Vec<f64>],
    link_cap: &[f64],
    node_cap: &[f64],
    alive: &AliveMask,
) -> Vec<Vec<f64>> {
    let mut nu = scenario.edge_tensors();
    let mut cands = Vec::new();
    let mut slots = Vec::new();
    for (r, entries) in index.entries.iter().enumerate() {
        cands.clear();
        slots.clear();
        for &(c, e) in entries {
            let graph = scenario.graph(c);
            if !alive.edge_alive(graph, e) {
                continue;
            }
            let lay = scenario.layout(c);
            let stage = graph.edges()[e].stage;
            for l in 1..=lay.lifetimes {
                cands.push(Candidate {
                    commodity: c,
                    lifetime: l,
                    stage,
                    weight: w[c][lay.el(e, l)],
                });
                slots.push((c, e, l));
            }
        }
        if let Some(i) = select(&cands) {
            let (c, e, l) = slots[i];
            let lay = scenario.layout(c);
            let edge = &scenario.graph(c).edges()[e];
            nu[c][lay.el(e, l)] = match edge.kind {
                EdgeKind::Transmission { link } => link_cap[link],
                EdgeKind::Processing { node } => node_cap[node] / edge.rho,
            };
        }
        debug_assert!(r < index.len());
    }
    nu
}
