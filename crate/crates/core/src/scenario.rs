//! A validated, immutable bundle of everything a trial needs: topology,
//! services, commodities with their layered graphs, arrival rates and the
//! optional outage. Shared read-only by concurrent trials.

use crate::error::{Error, Result};
use crate::model::{
    apply_outage, build_layered_graph, Commodity, EdgeKind, LayeredGraph, OutageSpec,
    PhysicalNetwork, ServiceChain, UnitSystem,
};
use crate::traffic::ArrivalProcess;

/// Index bookkeeping of one commodity on its service's layered graph.
/// Node-lifetime tensors use stride `lifetimes + 1` with lifetime 0 unused.
#[derive(Debug, Clone)]
pub struct CommodityLayout {
    pub service: usize,
    pub lifetimes: usize,
    pub source: usize,
    pub destination: usize,
    /// `1 / Ξ(stage)` for each layered node.
    pub beta: Vec<f64>,
    /// `Ξ` at the final stage.
    pub total_scaling: f64,
    /// Edges the controller may use: every layered edge except those leaving
    /// the consuming destination copy.
    pub controllable: Vec<bool>,
    pub nodes: usize,
    pub edges: usize,
}

impl CommodityLayout {
    #[inline]
    pub fn stride(&self) -> usize {
        self.lifetimes + 1
    }

    #[inline]
    pub fn vl(&self, v: usize, l: usize) -> usize {
        v * (self.lifetimes + 1) + l
    }

    #[inline]
    pub fn el(&self, e: usize, l: usize) -> usize {
        e * (self.lifetimes + 1) + l
    }

    pub fn node_tensor(&self) -> Vec<f64> {
        vec![0.0; self.nodes * self.stride()]
    }

    pub fn edge_tensor(&self) -> Vec<f64> {
        vec![0.0; self.edges * self.stride()]
    }
}

/// Which layered nodes and edges are still functional.
#[derive(Debug, Clone, PartialEq)]
pub struct AliveMask {
    pub links: Vec<bool>,
    pub nodes: Vec<bool>,
}

impl AliveMask {
    pub fn all(network: &PhysicalNetwork) -> Self {
        Self {
            links: vec![true; network.link_count()],
            nodes: vec![true; network.node_count()],
        }
    }

    pub fn edge_alive(&self, graph: &LayeredGraph, e: usize) -> bool {
        let edge = &graph.edges()[e];
        let stages = graph.stages();
        let ok_ends = self.nodes[edge.tail / stages] && self.nodes[edge.head / stages];
        match edge.kind {
            EdgeKind::Transmission { link } => ok_ends && self.links[link],
            EdgeKind::Processing { .. } => ok_ends,
        }
    }

    pub fn node_alive(&self, graph: &LayeredGraph, v: usize) -> bool {
        self.nodes[v / graph.stages()]
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: PhysicalNetwork,
    pub units: UnitSystem,
    pub services: Vec<ServiceChain>,
    pub commodities: Vec<Commodity>,
    /// One layered graph per service, same order as `services`.
    pub graphs: Vec<LayeredGraph>,
    pub arrivals: ArrivalProcess,
    pub outage: Option<OutageSpec>,
    layouts: Vec<CommodityLayout>,
}

impl Scenario {
    pub fn new(
        network: PhysicalNetwork,
        units: UnitSystem,
        services: Vec<ServiceChain>,
        commodities: Vec<Commodity>,
        mut arrivals: ArrivalProcess,
        outage: Option<OutageSpec>,
    ) -> Result<Self> {
        for s in &services {
            s.validate()?;
        }
        let graphs: Vec<_> = services
            .iter()
            .map(|s| build_layered_graph(&network, s))
            .collect();
        if arrivals.commodities.len() != commodities.len() {
            return Err(Error::Dimension(format!(
                "{} arrival rate entries for {} commodities",
                arrivals.commodities.len(),
                commodities.len()
            )));
        }
        let mut layouts = Vec::with_capacity(commodities.len());
        for (ci, c) in commodities.iter().enumerate() {
            c.validate()?;
            let si = services
                .iter()
                .position(|s| s.id == c.service)
                .ok_or_else(|| {
                    Error::config(format!(
                        "commodity {}: unknown service {}",
                        c.id, c.service
                    ))
                })?;
            let service = &services[si];
            let graph = &graphs[si];
            let source = graph.index_of(&network, c.source, 1).ok_or_else(|| {
                Error::config(format!("commodity {}: unknown source node {}", c.id, c.source))
            })?;
            let destination = graph
                .index_of(&network, c.destination, service.stages())
                .ok_or_else(|| {
                    Error::config(format!(
                        "commodity {}: unknown destination node {}",
                        c.id, c.destination
                    ))
                })?;
            let beta = graph
                .nodes()
                .iter()
                .map(|n| 1.0 / service.cumulative_scaling(n.stage).expect("stage in range"))
                .collect();
            let controllable = graph
                .edges()
                .iter()
                .map(|e| e.tail != destination)
                .collect();
            let rates = &arrivals.commodities[ci];
            if rates.pre.len() != c.lifetime_max + 1 {
                return Err(Error::Dimension(format!(
                    "commodity {}: expected {} rate entries, got {}",
                    c.id,
                    c.lifetime_max + 1,
                    rates.pre.len()
                )));
            }
            for (l, (&pre, &post)) in rates.pre.iter().zip(&rates.post).enumerate() {
                let in_set = (c.lifetime_min..=c.lifetime_max).contains(&l);
                if !in_set && (pre != 0.0 || post != 0.0) {
                    return Err(Error::config(format!(
                        "commodity {}: positive rate at lifetime {l} outside the arrival set",
                        c.id
                    )));
                }
            }
            layouts.push(CommodityLayout {
                service: si,
                lifetimes: c.lifetime_max,
                source,
                destination,
                beta,
                total_scaling: service.total_scaling(),
                controllable,
                nodes: graph.node_count(),
                edges: graph.edge_count(),
            });
        }
        if let Some(o) = &outage {
            // validates ids and endpoint survival
            apply_outage(&network, &services, &commodities, o)?;
            arrivals.switch_at = Some(o.time);
        } else {
            arrivals.switch_at = None;
        }
        Ok(Self {
            network,
            units,
            services,
            commodities,
            graphs,
            arrivals,
            outage,
            layouts,
        })
    }

    pub fn layout(&self, c: usize) -> &CommodityLayout {
        &self.layouts[c]
    }

    pub fn layouts(&self) -> &[CommodityLayout] {
        &self.layouts
    }

    pub fn graph(&self, c: usize) -> &LayeredGraph {
        &self.graphs[self.layouts[c].service]
    }

    pub fn service(&self, c: usize) -> &ServiceChain {
        &self.services[self.layouts[c].service]
    }

    /// Alive mask after the outage, derived by rebuilding the post-outage
    /// topology and matching elements by id.
    pub fn outage_mask(&self) -> Result<AliveMask> {
        let Some(spec) = &self.outage else {
            return Ok(AliveMask::all(&self.network));
        };
        let (survived, _) = apply_outage(&self.network, &self.services, &self.commodities, spec)?;
        Ok(AliveMask {
            links: self
                .network
                .links()
                .iter()
                .map(|l| survived.link_index(l.from, l.to).is_some())
                .collect(),
            nodes: self
                .network
                .nodes()
                .iter()
                .map(|n| survived.contains_node(n.id))
                .collect(),
        })
    }

    /// Capacity of the physical resource behind a layered edge.
    pub fn edge_capacity(&self, c: usize, e: usize) -> f64 {
        match self.graph(c).edges()[e].kind {
            EdgeKind::Transmission { link } => self.network.links()[link].capacity,
            EdgeKind::Processing { node } => self.network.nodes()[node].capacity,
        }
    }

    /// Cost per unit of `rho * flow` on a layered edge.
    pub fn edge_cost(&self, c: usize, e: usize) -> f64 {
        match self.graph(c).edges()[e].kind {
            EdgeKind::Transmission { link } => self.network.links()[link].cost,
            EdgeKind::Processing { node } => self.network.nodes()[node].cost,
        }
    }

    /// Per-commodity zero tensor over (layered edge, lifetime).
    pub fn edge_tensors(&self) -> Vec<Vec<f64>> {
        self.layouts.iter().map(|l| l.edge_tensor()).collect()
    }

    pub fn node_tensors(&self) -> Vec<Vec<f64>> {
        self.layouts.iter().map(|l| l.node_tensor()).collect()
    }
}

/// Physical resource index: links first, then node processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Link(usize),
    Node(usize),
}

impl Resource {
    pub fn of(kind: EdgeKind) -> Self {
        match kind {
            EdgeKind::Transmission { link } => Resource::Link(link),
            EdgeKind::Processing { node } => Resource::Node(node),
        }
    }

    /// Flat index with links first.
    pub fn flat(self, links: usize) -> usize {
        match self {
            Resource::Link(i) => i,
            Resource::Node(i) => links + i,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::model::{Link, NodeSpec};
    use crate::traffic::{ArrivalKind, CommodityRates};

    /// Two nodes `1 -> 2` with a single-stage service and one commodity.
    pub fn two_node(capacity: f64, rate: f64, lifetimes: usize, gamma: f64) -> Scenario {
        two_node_with(capacity, rate, lifetimes, gamma, ArrivalKind::Poisson, None)
    }

    pub fn two_node_with(
        capacity: f64,
        rate: f64,
        lifetimes: usize,
        gamma: f64,
        kind: ArrivalKind,
        outage: Option<OutageSpec>,
    ) -> Scenario {
        let network = PhysicalNetwork::new(
            vec![
                NodeSpec { id: 1, capacity: 10.0, cost: 1.0 },
                NodeSpec { id: 2, capacity: 10.0, cost: 1.0 },
            ],
            vec![Link { from: 1, to: 2, capacity, cost: 1.0 }],
        )
        .unwrap();
        let service = ServiceChain::new(1, vec![], vec![]).unwrap();
        let commodity = Commodity {
            id: 1,
            service: 1,
            source: 1,
            destination: 2,
            lifetime_min: lifetimes,
            lifetime_max: lifetimes,
            gamma_long: gamma,
        };
        let mut pre = vec![0.0; lifetimes + 1];
        pre[lifetimes] = rate;
        let arrivals = ArrivalProcess::new(
            kind,
            vec![CommodityRates { pre: pre.clone(), post: pre }],
        )
        .unwrap();
        Scenario::new(
            network,
            UnitSystem::new(1000.0, 0.014).unwrap(),
            vec![service],
            vec![commodity],
            arrivals,
            outage,
        )
        .unwrap()
    }

    /// Diamond `1 -> {2, 3} -> 4` with a two-function chain (ξ = 2, 0.5),
    /// processing possible everywhere.
    pub fn diamond(rate: f64, outage: Option<OutageSpec>) -> Scenario {
        let nodes = (1..=4)
            .map(|id| NodeSpec { id, capacity: 4.0, cost: 0.5 })
            .collect();
        let links = [(1, 2), (1, 3), (2, 4), (3, 4), (2, 3)]
            .into_iter()
            .map(|(from, to)| Link { from, to, capacity: 30.0, cost: 1.0 })
            .collect();
        let network = PhysicalNetwork::new(nodes, links).unwrap();
        let service = ServiceChain::new(1, vec![2.0, 0.5], vec![0.1, 0.05]).unwrap();
        let commodity = Commodity {
            id: 1,
            service: 1,
            source: 1,
            destination: 4,
            lifetime_min: 5,
            lifetime_max: 6,
            gamma_long: 0.9,
        };
        let mut pre = vec![0.0; 7];
        pre[5] = rate;
        pre[6] = rate;
        let arrivals = ArrivalProcess::new(
            ArrivalKind::Poisson,
            vec![CommodityRates { pre: pre.clone(), post: pre }],
        )
        .unwrap();
        Scenario::new(
            network,
            UnitSystem::new(1000.0, 0.014).unwrap(),
            vec![service],
            vec![commodity],
            arrivals,
            outage,
        )
        .unwrap()
    }
}
