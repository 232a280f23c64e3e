//! Lifetime-indexed fluid queues: aging, expiry, destination consumption and
//! mass accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{AliveMask, Scenario};

/// How incoming flow enters the downstream queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomingScaling {
    /// Incoming flow is multiplied by the edge's scaling factor.
    #[default]
    Scaled,
    /// Incoming flow enters unscaled (processing does not change packet counts).
    Unscaled,
}

/// Per-commodity running counters. Raw counts are in packets of the stage at
/// which the event happened; `*_mass` fields weight each packet by
/// `1 / Ξ(stage)` so processing scaling cancels out.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub arrived: f64,
    pub delivered: f64,
    pub expired: f64,
    pub lost: f64,
    pub arrived_mass: f64,
    pub delivered_mass: f64,
    pub expired_mass: f64,
    pub lost_mass: f64,
}

/// Backlog `Q[c][v, l]` for every commodity, layered node and lifetime.
#[derive(Debug, Clone)]
pub struct QueueState {
    pub backlog: Vec<Vec<f64>>,
    pub counters: Vec<Counters>,
    pub incoming: IncomingScaling,
}

/// Packets leaving the network in one slot, per commodity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotOutcome {
    pub delivered: Vec<f64>,
    pub expired: Vec<f64>,
}

const AVAIL_RTOL: f64 = 1e-7;

impl QueueState {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            backlog: scenario.node_tensors(),
            counters: vec![Counters::default(); scenario.commodities.len()],
            incoming: IncomingScaling::Scaled,
        }
    }

    pub fn get(&self, scenario: &Scenario, c: usize, v: usize, l: usize) -> f64 {
        self.backlog[c][scenario.layout(c).vl(v, l)]
    }

    /// Adds exogenous arrivals `a[c][l]` at each commodity's layer-1 source.
    pub fn add_arrivals(&mut self, scenario: &Scenario, arrivals: &[Vec<f64>]) {
        for (c, a) in arrivals.iter().enumerate() {
            let lay = scenario.layout(c);
            let cnt = &mut self.counters[c];
            for (l, &x) in a.iter().enumerate().skip(1) {
                self.backlog[c][lay.vl(lay.source, l)] += x;
                cnt.arrived += x;
                cnt.arrived_mass += x;
            }
        }
    }

    /// One slot of queue dynamics under flows `x[c][e, l]`.
    ///
    /// Outgoing flow from a (node, lifetime) bucket must not exceed its
    /// backlog; a violation is reported as an error since it means the
    /// controller produced an inadmissible decision.
    pub fn advance(&mut self, scenario: &Scenario, x: &[Vec<f64>], slot: usize) -> Result<SlotOutcome> {
        let n = scenario.commodities.len();
        let mut out = SlotOutcome {
            delivered: vec![0.0; n],
            expired: vec![0.0; n],
        };
        for c in 0..n {
            let lay = scenario.layout(c);
            let graph = scenario.graph(c);
            let q = &self.backlog[c];
            let xc = &x[c];
            let lmax = lay.lifetimes;
            let mut next = lay.node_tensor();
            let mut expired_raw = 0.0;
            let mut expired_mass = 0.0;
            let mut delivered = 0.0;

            for v in 0..lay.nodes {
                for l in 1..=lmax {
                    let avail = q[lay.vl(v, l)];
                    let sent: f64 = graph
                        .out_edges(v)
                        .iter()
                        .map(|&e| xc[lay.el(e, l)])
                        .sum();
                    if sent > avail * (1.0 + AVAIL_RTOL) + AVAIL_RTOL {
                        return Err(Error::Invariant {
                            slot,
                            detail: format!(
                                "availability: commodity {c} node {} lifetime {l} sends {sent} of {avail}",
                                graph.node(v)
                            ),
                        });
                    }
                    let rest = (avail - sent).max(0.0);
                    if l == 1 {
                        expired_raw += rest;
                        expired_mass += rest * lay.beta[v];
                    } else {
                        next[lay.vl(v, l - 1)] += rest;
                    }
                }
            }
            for (e, edge) in graph.edges().iter().enumerate() {
                let zeta = match self.incoming {
                    IncomingScaling::Scaled => edge.zeta,
                    IncomingScaling::Unscaled => 1.0,
                };
                for l in 1..=lmax {
                    let f = xc[lay.el(e, l)];
                    if f == 0.0 {
                        continue;
                    }
                    let moved = zeta * f;
                    if edge.head == lay.destination {
                        delivered += moved;
                    } else if l == 1 {
                        expired_raw += moved;
                        expired_mass += moved * lay.beta[edge.head];
                    } else {
                        next[lay.vl(edge.head, l - 1)] += moved;
                    }
                }
            }
            self.backlog[c] = next;
            let cnt = &mut self.counters[c];
            cnt.delivered += delivered;
            cnt.delivered_mass += delivered * lay.beta[lay.destination];
            cnt.expired += expired_raw;
            cnt.expired_mass += expired_mass;
            out.delivered[c] = delivered;
            out.expired[c] = expired_raw;
        }
        Ok(out)
    }

    /// Drops every packet queued at a failed node and books it as lost.
    pub fn drop_failed(&mut self, scenario: &Scenario, mask: &AliveMask) {
        for c in 0..scenario.commodities.len() {
            let lay = scenario.layout(c);
            let graph = scenario.graph(c);
            for v in 0..lay.nodes {
                if mask.node_alive(graph, v) {
                    continue;
                }
                for l in 1..=lay.lifetimes {
                    let i = lay.vl(v, l);
                    let b = std::mem::take(&mut self.backlog[c][i]);
                    self.counters[c].lost += b;
                    self.counters[c].lost_mass += b * lay.beta[v];
                }
            }
        }
    }

    /// Total backlog of commodity `c`, optionally β-weighted.
    pub fn total(&self, scenario: &Scenario, c: usize, weighted: bool) -> f64 {
        let lay = scenario.layout(c);
        let mut s = 0.0;
        for v in 0..lay.nodes {
            let w = if weighted { lay.beta[v] } else { 1.0 };
            for l in 1..=lay.lifetimes {
                s += w * self.backlog[c][lay.vl(v, l)];
            }
        }
        s
    }

    /// Checks the structural invariants: non-negative backlog, nothing parked
    /// at the consuming destination copy.
    pub fn check(&self, scenario: &Scenario, slot: usize) -> Result<()> {
        for c in 0..scenario.commodities.len() {
            let lay = scenario.layout(c);
            for (i, &b) in self.backlog[c].iter().enumerate() {
                if b < 0.0 || !b.is_finite() || (i % lay.stride() == 0 && b != 0.0) {
                    return Err(Error::Invariant {
                        slot,
                        detail: format!("commodity {c}: bad backlog {b} at index {i}"),
                    });
                }
            }
            for l in 1..=lay.lifetimes {
                if self.backlog[c][lay.vl(lay.destination, l)] != 0.0 {
                    return Err(Error::Invariant {
                        slot,
                        detail: format!("commodity {c}: backlog at consuming destination"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Packets (at the destination stage) reaching the consuming destination
/// copy under flows `x` of commodity `c`.
pub fn timely_delivery(scenario: &Scenario, x: &[Vec<f64>], c: usize) -> f64 {
    let lay = scenario.layout(c);
    let graph = scenario.graph(c);
    graph
        .in_edges(lay.destination)
        .iter()
        .map(|&e| {
            let z = graph.edges()[e].zeta;
            (1..=lay.lifetimes).map(|l| z * x[c][lay.el(e, l)]).sum::<f64>()
        })
        .sum()
}

/// Mass balance of one commodity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationLedger {
    pub arrived: f64,
    pub delivered: f64,
    pub expired: f64,
    pub lost: f64,
    pub in_network: f64,
    /// `arrived - delivered - expired - lost - in_network`.
    pub residual: f64,
}

impl ConservationLedger {
    pub fn relative_residual(&self) -> f64 {
        if self.arrived == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / self.arrived
        }
    }
}

pub fn conservation_report(scenario: &Scenario, queues: &QueueState) -> Vec<ConservationLedger> {
    queues
        .counters
        .iter()
        .enumerate()
        .map(|(c, k)| {
            let in_network = queues.total(scenario, c, true);
            ConservationLedger {
                arrived: k.arrived_mass,
                delivered: k.delivered_mass,
                expired: k.expired_mass,
                lost: k.lost_mass,
                in_network,
                residual: k.arrived_mass - k.delivered_mass - k.expired_mass - k.lost_mass - in_network,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Commodity, Link, NodeSpec, PhysicalNetwork, ServiceChain, UnitSystem};
    use crate::scenario::fixtures;
    use crate::traffic::{ArrivalKind, ArrivalProcess, CommodityRates};

    #[test]
    fn pure_aging_expires_lifetime_one() {
        let s = fixtures::two_node(10.0, 0.0, 3, 0.9);
        let mut q = QueueState::new(&s);
        let lay = s.layout(0);
        q.backlog[0][lay.vl(lay.source, 1)] = 4.5;
        q.counters[0].arrived_mass = 4.5;
        let x = s.edge_tensors();
        let out = q.advance(&s, &x, 0).unwrap();
        assert!(q.backlog[0].iter().all(|&b| b == 0.0));
        assert_eq!(out.expired[0], 4.5);
        assert_eq!(q.counters[0].expired, 4.5);
    }

    #[test]
    fn one_hop_moves_and_ages() {
        // three-node line so node 2 is not the destination
        let network = PhysicalNetwork::new(
            (1..=3).map(|id| NodeSpec { id, capacity: 1.0, cost: 0.0 }).collect(),
            vec![
                Link { from: 1, to: 2, capacity: 10.0, cost: 1.0 },
                Link { from: 2, to: 3, capacity: 10.0, cost: 1.0 },
            ],
        )
        .unwrap();
        let commodity = Commodity {
            id: 1,
            service: 1,
            source: 1,
            destination: 3,
            lifetime_min: 3,
            lifetime_max: 3,
            gamma_long: 0.5,
        };
        let s = Scenario::new(
            network,
            UnitSystem::new(1.0, 1.0).unwrap(),
            vec![ServiceChain::new(1, vec![], vec![]).unwrap()],
            vec![commodity],
            ArrivalProcess::new(
                ArrivalKind::Constant,
                vec![CommodityRates { pre: vec![0.0; 4], post: vec![0.0; 4] }],
            )
            .unwrap(),
            None,
        )
        .unwrap();
        let lay = s.layout(0);
        let g = s.graph(0);
        let e = g.out_edges(lay.source)[0];
        let mut q = QueueState::new(&s);
        q.backlog[0][lay.vl(lay.source, 3)] = 5.0;
        let mut x = s.edge_tensors();
        x[0][lay.el(e, 3)] = 5.0;
        q.advance(&s, &x, 0).unwrap();
        let v2 = g.edges()[e].head;
        assert_eq!(q.backlog[0][lay.vl(v2, 2)], 5.0);
        assert_eq!(q.total(&s, 0, false), 5.0);
    }

    #[test]
    fn processing_scales_downstream() {
        // single node pair, service with ξ = 2.3 processed at node 1
        let network = PhysicalNetwork::new(
            (1..=2).map(|id| NodeSpec { id, capacity: 100.0, cost: 0.0 }).collect(),
            vec![Link { from: 1, to: 2, capacity: 100.0, cost: 1.0 }],
        )
        .unwrap();
        let commodity = Commodity {
            id: 1,
            service: 1,
            source: 1,
            destination: 2,
            lifetime_min: 4,
            lifetime_max: 4,
            gamma_long: 0.5,
        };
        let s = Scenario::new(
            network,
            UnitSystem::new(1.0, 1.0).unwrap(),
            vec![ServiceChain::new(1, vec![2.3], vec![0.01]).unwrap()],
            vec![commodity],
            ArrivalProcess::new(
                ArrivalKind::Constant,
                vec![CommodityRates { pre: vec![0.0; 5], post: vec![0.0; 5] }],
            )
            .unwrap(),
            None,
        )
        .unwrap();
        let lay = s.layout(0);
        let g = s.graph(0);
        let e = *g
            .out_edges(lay.source)
            .iter()
            .find(|&&e| g.edges()[e].is_processing())
            .unwrap();
        let mut q = QueueState::new(&s);
        q.backlog[0][lay.vl(lay.source, 4)] = 10.0;
        let mut x = s.edge_tensors();
        x[0][lay.el(e, 4)] = 10.0;
        q.advance(&s, &x, 0).unwrap();
        let head = g.edges()[e].head;
        assert!((q.backlog[0][lay.vl(head, 3)] - 23.0).abs() < 1e-12);

        // β-weighted mass is unchanged by processing
        assert!((q.total(&s, 0, true) - 10.0).abs() < 1e-12);

        q.incoming = IncomingScaling::Unscaled;
        let mut q2 = QueueState::new(&s);
        q2.incoming = IncomingScaling::Unscaled;
        q2.backlog[0][lay.vl(lay.source, 4)] = 10.0;
        q2.advance(&s, &x, 0).unwrap();
        assert_eq!(q2.backlog[0][lay.vl(head, 3)], 10.0);
    }

    #[test]
    fn overdraw_is_an_error() {
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let lay = s.layout(0);
        let mut q = QueueState::new(&s);
        q.backlog[0][lay.vl(lay.source, 2)] = 1.0;
        let mut x = s.edge_tensors();
        let e = s.graph(0).out_edges(lay.source)[0];
        x[0][lay.el(e, 2)] = 2.0;
        assert!(matches!(q.advance(&s, &x, 7), Err(Error::Invariant { slot: 7, .. })));
    }

    #[test]
    fn timely_delivery_values() {
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let lay = s.layout(0);
        let mut x = s.edge_tensors();
        assert_eq!(timely_delivery(&s, &x, 0), 0.0);
        let e = s.graph(0).in_edges(lay.destination)[0];
        x[0][lay.el(e, 2)] = 1.0;
        assert_eq!(timely_delivery(&s, &x, 0), 1.0);

        let d = fixtures::diamond(0.0, None);
        let lay = d.layout(0);
        let g = d.graph(0);
        let e = *g
            .in_edges(lay.destination)
            .iter()
            .find(|&&e| g.edges()[e].is_processing())
            .unwrap();
        let mut x = d.edge_tensors();
        x[0][lay.el(e, 3)] = 4.0;
        assert!((timely_delivery(&d, &x, 0) - 4.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_run_ledger_is_zero() {
        let s = fixtures::two_node(10.0, 0.0, 2, 0.9);
        let q = QueueState::new(&s);
        let r = conservation_report(&s, &q);
        assert_eq!(r[0].arrived, 0.0);
        assert_eq!(r[0].residual, 0.0);
    }
}
