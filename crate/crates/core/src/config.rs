//! Scenario configuration in paper units (Gbps, CPU, ms, kbit), loading,
//! validation and the bundled Abilene scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Commodity, Link, NodeSpec, OutageSpec, PhysicalNetwork, ServiceChain, Unit, UnitSystem};
use crate::policy::{PolicyConfig, Variant};
use crate::queueing::IncomingScaling;
use crate::scenario::Scenario;
use crate::traffic::{ArrivalKind, ArrivalProcess, CommodityRates};

/// The bundled Abilene scenario file.
pub const ABILENE_TOML: &str = include_str!("../scenarios/abilene.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub units: UnitsConfig,
    pub network: NetworkConfig,
    pub services: Vec<ServiceConfig>,
    pub commodities: Vec<CommodityConfig>,
    #[serde(default)]
    pub outage: Option<OutageConfig>,
    pub policy: PolicySection,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsConfig {
    pub packet_kbit: f64,
    pub slot_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub nodes: Vec<NodeConfig>,
    pub links: Vec<LinkConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub cpu: f64,
    pub cost_per_cpu: f64,
}

/// A link; `bidirectional` expands into two directed links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub from: u32,
    pub to: u32,
    pub gbps: f64,
    pub cost_per_gbps: f64,
    #[serde(default = "yes")]
    pub bidirectional: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub id: u32,
    pub scaling: Vec<f64>,
    /// CPU per Mbps of input, one per function.
    pub workload_cpu_per_mbps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateBasis {
    /// `lambda_gbps` is the rate of each lifetime class.
    #[default]
    PerLifetime,
    /// `lambda_gbps` is split evenly over the lifetime classes.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommodityConfig {
    pub id: u32,
    pub service: u32,
    pub source: u32,
    pub destination: u32,
    pub lambda_gbps: f64,
    /// Arrival lifetimes `[min, max]`.
    pub lifetimes: [usize; 2],
    pub gamma_long: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageConfig {
    pub time: usize,
    #[serde(default)]
    pub failed_nodes: Vec<u32>,
    #[serde(default)]
    pub failed_links: Vec<[u32; 2]>,
    /// Post-outage arrival rates as a multiple of the pre-outage ones.
    pub lambda_scale: f64,
}

/// Controller parameters; thresholds in packets/slot and CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub variant: Variant,
    pub frame: usize,
    pub lookahead: usize,
    pub v_prime: f64,
    pub t_forget: usize,
    pub r_min_tr: f64,
    pub r_min_pr: f64,
    pub kappa: f64,
    #[serde(default = "floor_default")]
    pub floor_fraction: f64,
    #[serde(default)]
    pub incoming: IncomingScaling,
}

fn floor_default() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub t_win: usize,
    pub gamma_short: f64,
    pub t_recover: usize,
    pub p_resil: f64,
    #[serde(default)]
    pub arrivals: ArrivalKind,
    #[serde(default)]
    pub rate_basis: RateBasis,
}

/// Command-line scale overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
    pub outage_at: Option<usize>,
    pub lambda_scale: Option<f64>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(t) = self.trials {
            cfg.experiment.trials = t;
        }
        if let Some(h) = self.horizon {
            cfg.experiment.horizon = h;
        }
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.policy.variant = v;
        }
        if self.outage_at.is_some() || self.lambda_scale.is_some() {
            let o = cfg
                .outage
                .as_mut()
                .ok_or_else(|| Error::config("outage: overrides given but the scenario has no outage"))?;
            if let Some(t) = self.outage_at {
                o.time = t;
            }
            if let Some(s) = self.lambda_scale {
                o.lambda_scale = s;
            }
        }
        cfg.validate()
    }
}

fn field(path: impl std::fmt::Display, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("{path}: {msg}"))
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, format!("must be positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, format!("must be non-negative, got {v}")))
    }
}

fn unit_interval(path: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(field(path, format!("must lie in [0, 1], got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        positive("units.packet_kbit", self.units.packet_kbit)?;
        positive("units.slot_ms", self.units.slot_ms)?;
        let mut ids = std::collections::BTreeSet::new();
        for (i, n) in self.network.nodes.iter().enumerate() {
            non_negative(&format!("network.nodes[{i}].cpu"), n.cpu)?;
            non_negative(&format!("network.nodes[{i}].cost_per_cpu"), n.cost_per_cpu)?;
            if !ids.insert(n.id) {
                return Err(field(format!("network.nodes[{i}].id"), format!("duplicate node {}", n.id)));
            }
        }
        for (i, l) in self.network.links.iter().enumerate() {
            let p = format!("network.links[{i}]");
            for end in [l.from, l.to] {
                if !ids.contains(&end) {
                    return Err(field(&p, format!("unknown node {end}")));
                }
            }
            if l.from == l.to {
                return Err(field(&p, "self-loop"));
            }
            non_negative(&format!("{p}.gbps"), l.gbps)?;
            non_negative(&format!("{p}.cost_per_gbps"), l.cost_per_gbps)?;
        }
        let mut sids = std::collections::BTreeSet::new();
        for (i, s) in self.services.iter().enumerate() {
            let p = format!("services[{i}]");
            if s.scaling.len() != s.workload_cpu_per_mbps.len() {
                return Err(field(&p, "scaling and workload lists differ in length"));
            }
            for (k, &x) in s.scaling.iter().enumerate() {
                positive(&format!("{p}.scaling[{k}]"), x)?;
            }
            for (k, &x) in s.workload_cpu_per_mbps.iter().enumerate() {
                positive(&format!("{p}.workload_cpu_per_mbps[{k}]"), x)?;
            }
            if !sids.insert(s.id) {
                return Err(field(&p, format!("duplicate service {}", s.id)));
            }
        }
        for (i, c) in self.commodities.iter().enumerate() {
            let p = format!("commodities[{i}] (id {})", c.id);
            if !sids.contains(&c.service) {
                return Err(field(&p, format!("unknown service {}", c.service)));
            }
            if !ids.contains(&c.source) {
                return Err(field(&p, format!("unknown source node {}", c.source)));
            }
            if !ids.contains(&c.destination) {
                return Err(field(&p, format!("unknown destination node {}", c.destination)));
            }
            non_negative(&format!("{p}.lambda_gbps"), c.lambda_gbps)?;
            if c.lifetimes[0] == 0 || c.lifetimes[0] > c.lifetimes[1] {
                return Err(field(&p, "lifetimes must satisfy 1 <= min <= max"));
            }
            unit_interval(&format!("{p}.gamma_long"), c.gamma_long)?;
        }
        if let Some(o) = &self.outage {
            for n in &o.failed_nodes {
                if !ids.contains(n) {
                    return Err(field("outage.failed_nodes", format!("unknown node {n}")));
                }
            }
            non_negative("outage.lambda_scale", o.lambda_scale)?;
        }
        self.policy_config().validate()?;
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(field("experiment.trials", "must be >= 1"));
        }
        if e.t_win == 0 {
            return Err(field("experiment.t_win", "must be >= 1"));
        }
        unit_interval("experiment.gamma_short", e.gamma_short)?;
        unit_interval("experiment.p_resil", e.p_resil)?;
        Ok(())
    }

    pub fn unit_system(&self) -> Result<UnitSystem> {
        UnitSystem::new(self.units.packet_kbit * 1e3, self.units.slot_ms * 1e-3)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        let p = &self.policy;
        PolicyConfig {
            variant: p.variant,
            frame: p.frame,
            lookahead: p.lookahead,
            v_prime: p.v_prime,
            t_forget: p.t_forget,
            r_min_tr: p.r_min_tr,
            r_min_pr: p.r_min_pr,
            kappa: p.kappa,
            floor_fraction: p.floor_fraction,
            horizon: self.experiment.horizon,
            incoming: p.incoming,
            verbose: false,
        }
    }

    /// Converts to simulation units (packets/slot, CPU per packet/slot).
    pub fn to_scenario(&self) -> Result<Scenario> {
        let units = self.unit_system()?;
        let nodes = self
            .network
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                capacity: n.cpu,
                cost: n.cost_per_cpu,
            })
            .collect();
        let mut links = Vec::new();
        for l in &self.network.links {
            let capacity = units.convert_rate(l.gbps, Unit::Gbps, Unit::PacketsPerSlot)?;
            let cost = units.convert_rate(l.cost_per_gbps, Unit::CostPerGbps, Unit::CostPerPacketRate)?;
            links.push(Link { from: l.from, to: l.to, capacity, cost });
            if l.bidirectional {
                links.push(Link { from: l.to, to: l.from, capacity, cost });
            }
        }
        let network = PhysicalNetwork::new(nodes, links)?;
        let services = self
            .services
            .iter()
            .map(|s| {
                let workload = s
                    .workload_cpu_per_mbps
                    .iter()
                    .map(|&r| units.convert_rate(r, Unit::CpuPerMbps, Unit::CpuPerPacketRate))
                    .collect::<Result<Vec<_>>>()?;
                ServiceChain::new(s.id, s.scaling.clone(), workload)
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = self.outage.as_ref().map_or(1.0, |o| o.lambda_scale);
        let mut commodities = Vec::new();
        let mut rates = Vec::new();
        for c in &self.commodities {
            let [lo, hi] = c.lifetimes;
            let total = units.convert_rate(c.lambda_gbps, Unit::Gbps, Unit::PacketsPerSlot)?;
            let each = match self.experiment.rate_basis {
                RateBasis::PerLifetime => total,
                RateBasis::Aggregate => total / (hi - lo + 1) as f64,
            };
            let mut pre = vec![0.0; hi + 1];
            for r in &mut pre[lo..=hi] {
                *r = each;
            }
            let post = pre.iter().map(|r| r * scale).collect();
            rates.push(CommodityRates { pre, post });
            commodities.push(Commodity {
                id: c.id,
                service: c.service,
                source: c.source,
                destination: c.destination,
                lifetime_min: lo,
                lifetime_max: hi,
                gamma_long: c.gamma_long,
            });
        }
        let arrivals = ArrivalProcess::new(self.experiment.arrivals, rates)?;
        let outage = self.outage.as_ref().map(|o| OutageSpec {
            time: o.time,
            failed_nodes: o.failed_nodes.clone(),
            failed_links: o.failed_links.iter().map(|&[a, b]| (a, b)).collect(),
        });
        Scenario::new(network, units, services, commodities, arrivals, outage)
            .map_err(|e| Error::config(format!("scenario `{}`: {e}", self.name)))
    }

    /// Copy with a different post-outage arrival scale.
    pub fn with_lambda_scale(&self, scale: f64) -> Self {
        let mut c = self.clone();
        if let Some(o) = c.outage.as_mut() {
            o.lambda_scale = scale;
        }
        c
    }
}

/// The Abilene scenario: 11 nodes, 14 bidirectional 10 Gbps links, two
/// service chains and six commodities, with node 6 failing at slot 45000.
pub fn builtin_abilene() -> ScenarioConfig {
    let names = ["NYC", "IND", "WDC", "CHI", "SEA", "ATL", "KC", "DEN", "LA", "HOU", "SNV"];
    let nodes = names
        .iter()
        .enumerate()
        .map(|(i, n)| NodeConfig {
            id: i as u32 + 1,
            name: (*n).to_string(),
            cpu: 20.0,
            cost_per_cpu: 0.5,
        })
        .collect();
    let pairs = [
        (5, 11),
        (5, 8),
        (11, 8),
        (11, 9),
        (9, 10),
        (8, 7),
        (7, 10),
        (7, 2),
        (10, 6),
        (2, 6),
        (2, 4),
        (6, 3),
        (4, 1),
        (1, 3),
    ];
    let links = pairs
        .iter()
        .map(|&(from, to)| LinkConfig {
            from,
            to,
            gbps: 10.0,
            cost_per_gbps: 1.0,
            bidirectional: true,
        })
        .collect();
    let services = vec![
        ServiceConfig {
            id: 1,
            scaling: vec![1.0, 2.3],
            workload_cpu_per_mbps: vec![1.0 / 500.0, 1.0 / 800.0],
        },
        ServiceConfig {
            id: 2,
            scaling: vec![1.0 / 3.0, 1.0 / 2.0],
            workload_cpu_per_mbps: vec![1.0 / 340.0, 1.0 / 300.0],
        },
    ];
    let pairs = [(1, 7), (2, 10), (4, 11)];
    let commodities = (0..6)
        .map(|k| {
            let (source, destination) = pairs[k % 3];
            CommodityConfig {
                id: k as u32 + 1,
                service: if k < 3 { 1 } else { 2 },
                source,
                destination,
                lambda_gbps: if k < 3 { 1.64 } else { 2.46 },
                lifetimes: [6, 7],
                gamma_long: 0.9,
            }
        })
        .collect();
    ScenarioConfig {
        name: "abilene".into(),
        units: UnitsConfig {
            packet_kbit: 1.0,
            slot_ms: 14.0,
        },
        network: NetworkConfig { nodes, links },
        services,
        commodities,
        outage: Some(OutageConfig {
            time: 45_000,
            failed_nodes: vec![6],
            failed_links: vec![],
            lambda_scale: 0.75,
        }),
        policy: PolicySection {
            variant: Variant::ResRcnc,
            frame: 2000,
            lookahead: 2,
            v_prime: 5.0,
            t_forget: 500,
            r_min_tr: 1000.0,
            r_min_pr: 0.1,
            kappa: 0.5,
            floor_fraction: 0.01,
            incoming: IncomingScaling::Scaled,
        },
        experiment: ExperimentConfig {
            horizon: 100_000,
            trials: 128,
            seed: 0,
            t_win: 500,
            gamma_short: 0.9,
            t_recover: 4000,
            p_resil: 0.9,
            arrivals: ArrivalKind::Poisson,
            rate_basis: RateBasis::PerLifetime,
        },
    }
}

/// Resolves `abilene` to the bundled scenario, anything else to a file.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig> {
    if name_or_path == "abilene" {
        ScenarioConfig::from_toml(ABILENE_TOML)
    } else {
        ScenarioConfig::load(Path::new(name_or_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_matches_builtin() {
        assert_eq!(ScenarioConfig::from_toml(ABILENE_TOML).unwrap(), builtin_abilene());
    }

    #[test]
    fn round_trip_keeps_hash() {
        let a = builtin_abilene();
        let b = ScenarioConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), a.with_lambda_scale(1.0).hash());
    }

    #[test]
    fn abilene_shape() {
        let cfg = builtin_abilene();
        let s = cfg.to_scenario().unwrap();
        assert_eq!(s.network.node_count(), 11);
        assert_eq!(s.network.link_count(), 28);
        assert_eq!(s.commodities.len(), 6);
        // 28*2 transmission + 11 processing per stage boundary
        assert_eq!(s.graphs[0].edge_count(), 28 * 3 + 11 * 2);
        let c5 = &cfg.commodities[4];
        assert_eq!((c5.service, c5.source, c5.destination), (2, 2, 10));
        assert_eq!(cfg.services[0].workload_cpu_per_mbps[0], 1.0 / 500.0);
        assert_eq!(cfg.outage.as_ref().unwrap().lambda_scale, 0.75);
    }

    #[test]
    fn unit_conversion() {
        let s = builtin_abilene().to_scenario().unwrap();
        let l = &s.network.links()[0];
        assert!((l.capacity - 140_000.0).abs() < 1e-6);
        assert!((l.cost - 1e3 / 0.014e9).abs() < 1e-15);
        let rate = s.arrivals.commodities[0].pre[6];
        assert!((rate - 22_960.0).abs() < 1e-6);
        assert!((s.arrivals.commodities[3].pre[7] - 34_440.0).abs() < 1e-6);
        assert!((s.arrivals.commodities[3].post[7] - 0.75 * 34_440.0).abs() < 1e-6);
        assert_eq!(s.arrivals.switch_at, Some(45_000));
        // 1/500 CPU per Mbps, one packet/slot is 1/14 Mbps
        let r = s.services[0].workload[0];
        assert!((r - 1.0 / 500.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_basis_splits_rate() {
        let mut cfg = builtin_abilene();
        cfg.experiment.rate_basis = RateBasis::Aggregate;
        let s = cfg.to_scenario().unwrap();
        assert!((s.arrivals.commodities[0].pre[6] - 11_480.0).abs() < 1e-6);
    }

    #[test]
    fn missing_destination_names_commodity() {
        let mut cfg = builtin_abilene();
        cfg.commodities[2].destination = 99;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("commodities[2] (id 3)"), "{err}");
        assert!(err.contains("99"));
    }

    #[test]
    fn unknown_field_rejected_with_path() {
        let text = ABILENE_TOML.replace("packet_kbit", "packet_kbits");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("packet_kbits"), "{err}");
    }

    #[test]
    fn zero_v_prime_gives_zero_v() {
        let mut cfg = builtin_abilene();
        cfg.policy.v_prime = 0.0;
        cfg.validate().unwrap();
        let s = cfg.to_scenario().unwrap();
        assert_eq!(crate::virtual_ctl::choose_v(&s, 0.0).v, 0.0);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = builtin_abilene();
        Overrides {
            trials: Some(16),
            horizon: Some(20_000),
            outage_at: Some(10_000),
            lambda_scale: Some(1.0),
            ..Default::default()
        }
        .apply(&mut cfg)
        .unwrap();
        assert_eq!(cfg.experiment.trials, 16);
        assert_eq!(cfg.outage.as_ref().unwrap().time, 10_000);
        let bad = Overrides { trials: Some(0), ..Default::default() };
        assert!(bad.apply(&mut cfg).is_err());
    }
}
