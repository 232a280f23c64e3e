//! Physical network, service chains, commodities and the layered-graph
//! expansion that turns joint transmission/processing into a single routing
//! problem per service.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// A compute-capable network node. Capacity is in CPU units, cost per CPU-unit-slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub capacity: f64,
    pub cost: f64,
}

/// A directed transmission link. Capacity in packets/slot, cost per packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalNetwork {
    nodes: Vec<NodeSpec>,
    links: Vec<Link>,
    index: BTreeMap<NodeId, usize>,
}

impl PhysicalNetwork {
    /// Builds a validated network. Nodes are sorted by id and links by
    /// `(from, to)` so that every downstream index is reproducible.
    pub fn new(mut nodes: Vec<NodeSpec>, mut links: Vec<Link>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        links.sort_by_key(|l| (l.from, l.to));
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::config(format!("duplicate node id {}", n.id)));
            }
            if !(n.capacity > 0.0) || !n.capacity.is_finite() {
                return Err(Error::config(format!(
                    "node {}: processing capacity must be positive",
                    n.id
                )));
            }
            if !(n.cost >= 0.0) {
                return Err(Error::config(format!("node {}: negative cost", n.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for l in &links {
            if l.from == l.to {
                return Err(Error::config(format!("self-loop on node {}", l.from)));
            }
            for end in [l.from, l.to] {
                if !index.contains_key(&end) {
                    return Err(Error::config(format!(
                        "link ({}, {}) references unknown node {}",
                        l.from, l.to, end
                    )));
                }
            }
            if !seen.insert((l.from, l.to)) {
                return Err(Error::config(format!("duplicate link ({}, {})", l.from, l.to)));
            }
            if !(l.capacity > 0.0) || !l.capacity.is_finite() {
                return Err(Error::config(format!(
                    "link ({}, {}): capacity must be positive",
                    l.from, l.to
                )));
            }
            if !(l.cost >= 0.0) {
                return Err(Error::config(format!(
                    "link ({}, {}): negative cost",
                    l.from, l.to
                )));
            }
        }
        Ok(Self {
            nodes,
            links,
            index,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn link_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.links
            .binary_search_by_key(&(from, to), |l| (l.from, l.to))
            .ok()
    }
}

/// An ordered chain of `stages - 1` functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceChain {
    pub id: u32,
    /// Output packets per input packet, one entry per function.
    pub scaling: Vec<f64>,
    /// Processing resource per unit of input rate, one entry per function
    /// (CPU per packet/slot once loaded).
    pub workload: Vec<f64>,
}

impl ServiceChain {
    pub fn new(id: u32, scaling: Vec<f64>, workload: Vec<f64>) -> Result<Self> {
        let s = Self {
            id,
            scaling,
            workload,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scaling.len() != self.workload.len() {
            return Err(Error::config(format!(
                "service {}: {} scaling factors but {} workloads",
                self.id,
                self.scaling.len(),
                self.workload.len()
            )));
        }
        if self.scaling.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::config(format!(
                "service {}: scaling factors must be positive",
                self.id
            )));
        }
        if self.workload.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::config(format!(
                "service {}: workloads must be positive",
                self.id
            )));
        }
        Ok(())
    }

    /// Number of stages (functions + 1).
    pub fn stages(&self) -> usize {
        self.scaling.len() + 1
    }

    /// Product of the scaling factors of the functions before stage `m`.
    pub fn cumulative_scaling(&self, m: usize) -> Result<f64> {
        if m == 0 || m > self.stages() {
            return Err(Error::StageOutOfRange {
                stage: m,
                max: self.stages(),
            });
        }
        Ok(self.scaling[..m - 1].iter().product())
    }

    /// `Ξ` at the final stage.
    pub fn total_scaling(&self) -> f64 {
        self.scaling.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commodity {
    pub id: u32,
    pub service: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub lifetime_min: usize,
    pub lifetime_max: usize,
    pub gamma_long: f64,
}

impl Commodity {
    pub fn validate(&self) -> Result<()> {
        if self.lifetime_min == 0 || self.lifetime_min > self.lifetime_max {
            return Err(Error::config(format!(
                "commodity {}: need 1 <= lifetime_min <= lifetime_max",
                self.id
            )));
        }
        if self.source == self.destination {
            return Err(Error::config(format!(
                "commodity {}: source equals destination",
                self.id
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_long) {
            return Err(Error::config(format!(
                "commodity {}: gamma_long outside [0, 1]",
                self.id
            )));
        }
        Ok(())
    }

    /// Lifetimes with which exogenous packets arrive.
    pub fn arrival_lifetimes(&self) -> std::ops::RangeInclusive<usize> {
        self.lifetime_min..=self.lifetime_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    /// Intra-layer edge backed by physical link `link`.
    Transmission { link: usize },
    /// Inter-layer edge backed by the processing capability of physical node `node`.
    Processing { node: usize },
}

/// An edge of a layered graph. Indices refer to the physical network the
/// layered graph was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayeredEdge {
    pub tail: usize,
    pub head: usize,
    /// Stage of the tail node.
    pub stage: usize,
    pub kind: EdgeKind,
    pub zeta: f64,
    pub rho: f64,
}

impl LayeredEdge {
    pub fn is_processing(&self) -> bool {
        matches!(self.kind, EdgeKind::Processing { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayeredNode {
    pub node: NodeId,
    pub stage: usize,
}

impl fmt::Display for LayeredNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.node, self.stage)
    }
}

/// Per-service expansion of the physical network: `stages` copies of every
/// node, transmission edges within a layer and processing edges between
/// consecutive layers.
#[derive(Debug, Clone)]
pub struct LayeredGraph {
    service: u32,
    stages: usize,
    nodes: Vec<LayeredNode>,
    edges: Vec<LayeredEdge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl LayeredGraph {
    pub fn service(&self) -> u32 {
        self.service
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn nodes(&self) -> &[LayeredNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[LayeredEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Outgoing edge indices of layered node `v`.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    /// Index of `(node, stage)` given the physical network the graph was built on.
    pub fn index_of(&self, network: &PhysicalNetwork, node: NodeId, stage: usize) -> Option<usize> {
        if stage == 0 || stage > self.stages {
            return None;
        }
        network
            .node_index(node)
            .map(|i| i * self.stages + (stage - 1))
    }

    pub fn node(&self, v: usize) -> LayeredNode {
        self.nodes[v]
    }

    /// Edge key independent of physical indexing, used to compare graphs
    /// built on different (e.g. post-outage) networks.
    pub fn edge_key(&self, e: usize) -> (LayeredNode, LayeredNode) {
        let edge = &self.edges[e];
        (self.nodes[edge.tail], self.nodes[edge.head])
    }
}

/// Expands `network` into the layered graph of `service`.
pub fn build_layered_graph(network: &PhysicalNetwork, service: &ServiceChain) -> LayeredGraph {
    let stages = service.stages();
    let n = network.node_count();
    let mut nodes = Vec::with_capacity(n * stages);
    for spec in network.nodes() {
        for m in 1..=stages {
            nodes.push(LayeredNode {
                node: spec.id,
                stage: m,
            });
        }
    }
    let idx = |phys: usize, m: usize| phys * stages + (m - 1);

    let mut edges = Vec::with_capacity(network.link_count() * stages + n * (stages - 1));
    for (li, link) in network.links().iter().enumerate() {
        let from = network.node_index(link.from).expect("validated");
        let to = network.node_index(link.to).expect("validated");
        for m in 1..=stages {
            edges.push(LayeredEdge {
                tail: idx(from, m),
                head: idx(to, m),
                stage: m,
                kind: EdgeKind::Transmission { link: li },
                zeta: 1.0,
                rho: 1.0,
            });
        }
    }
    for i in 0..n {
        for m in 1..stages {
            edges.push(LayeredEdge {
                tail: idx(i, m),
                head: idx(i, m + 1),
                stage: m,
                kind: EdgeKind::Processing { node: i },
                zeta: service.scaling[m - 1],
                rho: service.workload[m - 1],
            });
        }
    }
    edges.sort_by_key(|e| (e.tail, e.head));

    let mut out_edges = vec![Vec::new(); nodes.len()];
    let mut in_edges = vec![Vec::new(); nodes.len()];
    for (k, e) in edges.iter().enumerate() {
        out_edges[e.tail].push(k);
        in_edges[e.head].push(k);
    }
    LayeredGraph {
        service: service.id,
        stages,
        nodes,
        edges,
        out_edges,
        in_edges,
    }
}

/// Diagonal weight `1 / Ξ(stage)` of a layered node.
pub fn beta_weight(graph: &LayeredGraph, service: &ServiceChain, v: usize) -> Result<f64> {
    if service.id != graph.service() {
        return Err(Error::config(format!(
            "service {} does not match layered graph of service {}",
            service.id,
            graph.service()
        )));
    }
    let node = graph
        .nodes()
        .get(v)
        .ok_or_else(|| Error::config(format!("layered node {v} not in graph")))?;
    Ok(1.0 / service.cumulative_scaling(node.stage)?)
}

/// A single outage event: at slot `time` the listed nodes (with all incident
/// links) and links stop working.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutageSpec {
    pub time: usize,
    #[serde(default)]
    pub failed_nodes: Vec<NodeId>,
    #[serde(default)]
    pub failed_links: Vec<(NodeId, NodeId)>,
}

impl OutageSpec {
    pub fn validate(&self, network: &PhysicalNetwork) -> Result<()> {
        for &n in &self.failed_nodes {
            if !network.contains_node(n) {
                return Err(Error::config(format!("outage: unknown node {n}")));
            }
        }
        for &(a, b) in &self.failed_links {
            if network.link_index(a, b).is_none() {
                return Err(Error::config(format!("outage: unknown link ({a}, {b})")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.failed_nodes.is_empty() && self.failed_links.is_empty()
    }

    pub fn link_fails(&self, from: NodeId, to: NodeId) -> bool {
        self.failed_nodes.contains(&from)
            || self.failed_nodes.contains(&to)
            || self.failed_links.contains(&(from, to))
    }
}

/// Removes failed elements and rebuilds the layered graph of every service on
/// the surviving topology.
pub fn apply_outage(
    network: &PhysicalNetwork,
    services: &[ServiceChain],
    commodities: &[Commodity],
    spec: &OutageSpec,
) -> Result<(PhysicalNetwork, Vec<LayeredGraph>)> {
    spec.validate(network)?;
    for c in commodities {
        for end in [c.source, c.destination] {
            if spec.failed_nodes.contains(&end) {
                return Err(Error::config(format!(
                    "outage fails node {end}, an endpoint of commodity {}",
                    c.id
                )));
            }
        }
    }
    let nodes = network
        .nodes()
        .iter()
        .filter(|n| !spec.failed_nodes.contains(&n.id))
        .cloned()
        .collect();
    let links = network
        .links()
        .iter()
        .filter(|l| !spec.link_fails(l.from, l.to))
        .cloned()
        .collect();
    let survived = PhysicalNetwork::new(nodes, links)?;
    let graphs = services
        .iter()
        .map(|s| build_layered_graph(&survived, s))
        .collect();
    Ok((survived, graphs))
}

/// Packet size and slot duration used to express every rate in packets/slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub packet_bits: f64,
    pub slot_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Gbps,
    Mbps,
    Bps,
    PacketsPerSlot,
    /// Processing workload per Mbps of input.
    CpuPerMbps,
    /// Processing workload per packet/slot of input.
    CpuPerPacketRate,
    /// Transmission cost per Gbps.
    CostPerGbps,
    /// Transmission cost per packet/slot.
    CostPerPacketRate,
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Gbps" => Unit::Gbps,
            "Mbps" => Unit::Mbps,
            "bps" => Unit::Bps,
            "packets/slot" => Unit::PacketsPerSlot,
            "CPU/Mbps" => Unit::CpuPerMbps,
            "CPU/(packet/slot)" => Unit::CpuPerPacketRate,
            "$/Gbps" => Unit::CostPerGbps,
            "$/(packet/slot)" => Unit::CostPerPacketRate,
            other => {
                return Err(Error::UnknownUnit {
                    from: other.to_string(),
                    to: String::new(),
                })
            }
        })
    }
}

impl UnitSystem {
    pub fn new(packet_bits: f64, slot_seconds: f64) -> Result<Self> {
        if !(packet_bits > 0.0) || !(slot_seconds > 0.0) {
            return Err(Error::config("packet size and slot duration must be positive"));
        }
        Ok(Self {
            packet_bits,
            slot_seconds,
        })
    }

    /// bits/s carried by one packet per slot.
    fn bps_per_packet_rate(&self) -> f64 {
        self.packet_bits / self.slot_seconds
    }

    /// Linear conversion between compatible units.
    pub fn convert_rate(&self, value: f64, from: Unit, to: Unit) -> Result<f64> {
        use Unit::*;
        let bps = self.bps_per_packet_rate();
        // Each family is first mapped onto its canonical unit.
        let (family, canonical) = match from {
            Gbps => (0, value * 1e9 / bps),
            Mbps => (0, value * 1e6 / bps),
            Bps => (0, value / bps),
            PacketsPerSlot => (0, value),
            CpuPerMbps => (1, value * bps / 1e6),
            CpuPerPacketRate => (1, value),
            CostPerGbps => (2, value * bps / 1e9),
            CostPerPacketRate => (2, value),
        };
        let (target_family, out) = match to {
            Gbps => (0, canonical * bps / 1e9),
            Mbps => (0, canonical * bps / 1e6),
            Bps => (0, canonical * bps),
            PacketsPerSlot => (0, canonical),
            CpuPerMbps => (1, canonical * 1e6 / bps),
            CpuPerPacketRate => (1, canonical),
            CostPerGbps => (2, canonical * 1e9 / bps),
            CostPerPacketRate => (2, canonical),
        };
        if family != target_family {
            return Err(Error::UnknownUnit {
                from: format!("{from:?}"),
                to: format!("{to:?}"),
            });
        }
        Ok(out)
    }
}
