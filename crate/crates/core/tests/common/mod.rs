//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use resnc_core::config::{
    builtin_abilene, CommodityConfig, LinkConfig, NetworkConfig, NodeConfig, ScenarioConfig, ServiceConfig,
};

/// Two nodes joined by one directed 10 Gbps link, a service without
/// functions and one commodity offering `load` of the link capacity.
pub fn two_node(load: f64, lifetimes: [usize; 2], horizon: usize) -> ScenarioConfig {
    let mut cfg = builtin_abilene();
    cfg.name = "two-node".into();
    cfg.network = NetworkConfig {
        nodes: (1..=2)
            .map(|id| NodeConfig {
                id,
                name: String::new(),
                cpu: 20.0,
                cost_per_cpu: 0.5,
            })
            .collect(),
        links: vec![LinkConfig {
            from: 1,
            to: 2,
            gbps: 10.0,
            cost_per_gbps: 1.0,
            bidirectional: false,
        }],
    };
    cfg.services = vec![ServiceConfig {
        id: 1,
        scaling: vec![],
        workload_cpu_per_mbps: vec![],
    }];
    let classes = (lifetimes[1] - lifetimes[0] + 1) as f64;
    cfg.commodities = vec![CommodityConfig {
        id: 1,
        service: 1,
        source: 1,
        destination: 2,
        lambda_gbps: 10.0 * load / classes,
        lifetimes,
        gamma_long: 0.9,
    }];
    cfg.outage = None;
    cfg.experiment.horizon = horizon;
    cfg.experiment.trials = 1;
    cfg.validate().expect("two-node config is valid");
    cfg
}

/// Nodes `1 - 2 - 3` on bidirectional links, a one-function service and
/// two commodities in opposite directions; link `1 -> 2` fails at slot 50.
pub fn three_node_line() -> ScenarioConfig {
    let mut cfg = two_node(0.3, [2, 3], 100);
    cfg.name = "three-node-line".into();
    cfg.network.nodes.push(NodeConfig {
        id: 3,
        name: String::new(),
        cpu: 20.0,
        cost_per_cpu: 0.5,
    });
    cfg.network.links = [(1, 2), (2, 3)]
        .iter()
        .map(|&(from, to)| LinkConfig {
            from,
            to,
            gbps: 10.0,
            cost_per_gbps: 1.0,
            bidirectional: true,
        })
        .collect();
    cfg.services = vec![ServiceConfig {
        id: 1,
        scaling: vec![2.0],
        workload_cpu_per_mbps: vec![0.002],
    }];
    let mut back = cfg.commodities[0].clone();
    cfg.commodities[0].destination = 3;
    back.id = 2;
    back.source = 3;
    back.destination = 1;
    back.lifetimes = [1, 2];
    cfg.commodities.push(back);
    cfg.outage = Some(resnc_core::config::OutageConfig {
        time: 50,
        failed_nodes: vec![],
        failed_links: vec![[1, 2]],
        lambda_scale: 1.0,
    });
    cfg.validate().expect("line config is valid");
    cfg
}

/// Brute-force LP optimum: the best feasible point among all vertices of
/// `{Ax <= b, 0 <= x <= u}`.
pub fn vertex_enumeration(lp: &resnc_core::lp::LinearProgram) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = lp.num_vars();
    let mut g: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for r in &lp.rows {
        let mut v = vec![0.0; n];
        for &(j, a) in &r.coefs {
            v[j] += a;
        }
        g.push(v);
        h.push(r.rhs);
    }
    for j in 0..n {
        let mut v = vec![0.0; n];
        v[j] = -1.0;
        g.push(v);
        h.push(0.0);
        if lp.upper[j].is_finite() {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            g.push(v);
            h.push(lp.upper[j]);
        }
    }
    if n == 0 {
        return 0.0;
    }
    let total = g.len();
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| g[idx[i]][j]);
        let b = DVector::from_fn(n, |i, _| h[idx[i]]);
        if let Some(x) = a.lu().solve(&b) {
            let feasible = (0..total).all(|r| {
                let lhs: f64 = (0..n).map(|j| g[r][j] * x[j]).sum();
                lhs <= h[r] + 1e-9 * (1.0 + h[r].abs())
            });
            if feasible {
                best = best.max((0..n).map(|j| lp.objective[j] * x[j]).sum());
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < total - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}
