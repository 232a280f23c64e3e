//! Timely throughput, reliability levels, satisfaction events, Monte Carlo
//! estimates and region membership. Everything here is a pure function of
//! recorded series, so results can be replayed from stored CSVs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-commodity, per-slot series of one trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    /// `Ξ` at the final stage of each commodity's service.
    pub scaling: Vec<f64>,
    /// Source arrivals `Σ_l a_l(t)`.
    pub arrivals: Vec<Vec<f64>>,
    /// Packets delivered before expiring, in final-stage units.
    pub delivered: Vec<Vec<f64>>,
    pub expired: Vec<Vec<f64>>,
    /// Transmission plus processing cost `h(t)`.
    pub cost: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(scaling: Vec<f64>, horizon: usize) -> Self {
        let series = || vec![Vec::with_capacity(horizon); scaling.len()];
        Self {
            arrivals: series(),
            delivered: series(),
            expired: series(),
            cost: series(),
            scaling,
        }
    }

    pub fn commodities(&self) -> usize {
        self.scaling.len()
    }

    pub fn horizon(&self) -> usize {
        self.arrivals.first().map_or(0, Vec::len)
    }

    fn window(&self, t: usize, len: usize) -> Result<std::ops::Range<usize>> {
        let horizon = self.horizon();
        if len == 0 || t + len > horizon {
            return Err(Error::WindowOutOfRange {
                start: t,
                end: t + len,
                horizon,
            });
        }
        Ok(t..t + len)
    }
}

fn mean_over(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `R(t, T)`: mean timely deliveries over slots `t..t+T`.
pub fn short_term_throughput(s: &Series, c: usize, t: usize, len: usize) -> Result<f64> {
    Ok(mean_over(&s.delivered[c][s.window(t, len)?]))
}

/// `A(t, T)`: mean source arrivals over slots `t..t+T`.
pub fn arrival_rate(s: &Series, c: usize, t: usize, len: usize) -> Result<f64> {
    Ok(mean_over(&s.arrivals[c][s.window(t, len)?]))
}

/// `R(t, T) / (Ξ A(t, T))`, or `None` when the window saw no arrivals.
pub fn reliability_level(s: &Series, c: usize, t: usize, len: usize) -> Result<Option<f64>> {
    let r = s.window(t, len)?;
    let a: f64 = s.arrivals[c][r.clone()].iter().sum();
    if a <= 0.0 {
        return Ok(None);
    }
    let d: f64 = s.delivered[c][r].iter().sum();
    Ok(Some(d / (s.scaling[c] * a)))
}

/// Window-mean cost over slots `t..t+T`.
pub fn cost_metrics(s: &Series, c: usize, t: usize, len: usize) -> Result<f64> {
    Ok(mean_over(&s.cost[c][s.window(t, len)?]))
}

/// Running mean from slot 0, the "long-term" series of the plots.
pub fn cumulative_mean(xs: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    xs.iter()
        .enumerate()
        .map(|(t, &x)| {
            sum += x;
            sum / (t + 1) as f64
        })
        .collect()
}

/// Cumulative reliability level `R(0, t+1) / (Ξ A(0, t+1))` for every slot,
/// `NaN` while nothing has arrived.
pub fn cumulative_reliability(s: &Series, c: usize) -> Vec<f64> {
    let (mut a, mut d) = (0.0, 0.0);
    s.arrivals[c]
        .iter()
        .zip(&s.delivered[c])
        .map(|(&x, &y)| {
            a += x;
            d += y;
            if a > 0.0 {
                d / (s.scaling[c] * a)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Thresholds of the reliability and resilience requirements, per
/// commodity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySpec {
    pub gamma_long: Vec<f64>,
    pub gamma_short: Vec<f64>,
    pub t_win: usize,
    pub t_recover: Vec<usize>,
    pub p_resil: Vec<f64>,
    pub n_trial: usize,
}

impl ReliabilitySpec {
    /// Same thresholds for every commodity except `gamma_long`.
    pub fn uniform(
        gamma_long: Vec<f64>,
        gamma_short: f64,
        t_win: usize,
        t_recover: usize,
        p_resil: f64,
        n_trial: usize,
    ) -> Self {
        let n = gamma_long.len();
        Self {
            gamma_long,
            gamma_short: vec![gamma_short; n],
            t_win,
            t_recover: vec![t_recover; n],
            p_resil: vec![p_resil; n],
            n_trial,
        }
    }

    pub fn commodities(&self) -> usize {
        self.gamma_long.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.commodities();
        if self.gamma_short.len() != n || self.t_recover.len() != n || self.p_resil.len() != n {
            return Err(Error::Dimension("reliability spec lists differ in length".into()));
        }
        let unit = |x: &f64| (0.0..=1.0).contains(x);
        if !self.gamma_long.iter().chain(&self.gamma_short).all(unit) {
            return Err(Error::config("reliability thresholds must lie in [0, 1]"));
        }
        if !self.p_resil.iter().all(unit) {
            return Err(Error::config("p_resil must lie in [0, 1]"));
        }
        if self.t_win == 0 || self.n_trial == 0 {
            return Err(Error::config("t_win and n_trial must be at least 1"));
        }
        Ok(())
    }
}

/// Whether the trailing window `[t - T_win + 1, t]` delivered at least
/// `γ_short Ξ` times its arrivals. A window without arrivals counts as
/// satisfied.
pub fn satisfaction_event(s: &Series, c: usize, t: usize, spec: &ReliabilitySpec) -> Result<bool> {
    if t + 1 < spec.t_win {
        return Err(Error::WindowOutOfRange {
            start: (t + 1).saturating_sub(spec.t_win),
            end: t + 1,
            horizon: s.horizon(),
        });
    }
    let start = t + 1 - spec.t_win;
    let r = s.window(start, spec.t_win)?;
    let a: f64 = s.arrivals[c][r.clone()].iter().sum();
    let d: f64 = s.delivered[c][r].iter().sum();
    Ok(d >= spec.gamma_short[c] * s.scaling[c] * a)
}

/// Trailing-window sums for every slot `t >= len - 1`, indexed by `t`
/// (earlier entries are `NaN`).
pub fn trailing_sums(xs: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; xs.len()];
    if len == 0 {
        return out;
    }
    // running sum, re-summed once per window length to stop drift
    let mut sum = 0.0;
    for t in 0..xs.len() {
        sum += xs[t];
        if t >= len {
            sum -= xs[t - len];
        }
        if t + 1 >= len {
            if (t + 1) % len == 0 {
                sum = xs[t + 1 - len..=t].iter().sum();
            }
            out[t] = sum;
        }
    }
    out
}

/// Short-term reliability level over the trailing window at every slot,
/// `NaN` before a full window or when it saw no arrivals.
pub fn short_term_reliability(s: &Series, c: usize, t_win: usize) -> Vec<f64> {
    let a = trailing_sums(&s.arrivals[c], t_win);
    let d = trailing_sums(&s.delivered[c], t_win);
    a.iter()
        .zip(&d)
        .map(|(&a, &d)| if a > 0.0 { d / (s.scaling[c] * a) } else { f64::NAN })
        .collect()
}

/// Satisfaction event at every slot with a full trailing window.
pub fn satisfaction_series(s: &Series, c: usize, spec: &ReliabilitySpec) -> Vec<Option<bool>> {
    let a = trailing_sums(&s.arrivals[c], spec.t_win);
    let d = trailing_sums(&s.delivered[c], spec.t_win);
    let g = spec.gamma_short[c] * s.scaling[c];
    a.iter()
        .zip(&d)
        .map(|(&a, &d)| (!a.is_nan()).then(|| d >= g * a))
        .collect()
}

/// Sample mean with the ±1 sample standard deviation used for bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sigma: f64,
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one
/// sample).
pub fn mean_sigma(xs: &[f64]) -> Estimate {
    if xs.is_empty() {
        return Estimate { mean: f64::NAN, sigma: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sigma = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Estimate { mean, sigma }
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Ensemble {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Ensemble {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        let sigma = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: if self.n > 0 { self.mean } else { f64::NAN },
            sigma,
        }
    }
}

/// Per-slot ensemble of equally long series; `NaN` entries are skipped.
pub fn ensemble<'a>(runs: impl IntoIterator<Item = &'a [f64]>) -> Vec<Estimate> {
    let mut acc: Vec<Ensemble> = Vec::new();
    for run in runs {
        if acc.len() < run.len() {
            acc.resize(run.len(), Ensemble::default());
        }
        for (a, &x) in acc.iter_mut().zip(run) {
            if !x.is_nan() {
                a.push(x);
            }
        }
    }
    acc.iter().map(Ensemble::estimate).collect()
}

/// `p̂_relia(t)`: share of trials whose satisfaction event holds at `t`.
pub fn estimate_p_relia(traces: &[&Series], c: usize, t: usize, spec: &ReliabilitySpec) -> Result<Estimate> {
    let hits = traces
        .iter()
        .map(|s| satisfaction_event(s, c, t, spec).map(|b| if b { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_sigma(&hits))
}

/// `p̂_relia(t)` for every slot, `None` before a full window.
pub fn p_relia_series(traces: &[&Series], c: usize, spec: &ReliabilitySpec) -> Vec<Option<Estimate>> {
    let events: Vec<Vec<Option<bool>>> = traces.iter().map(|s| satisfaction_series(s, c, spec)).collect();
    let horizon = traces.iter().map(|s| s.horizon()).min().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let hits: Option<Vec<f64>> = events
                .iter()
                .map(|e| e[t].map(|b| if b { 1.0 } else { 0.0 }))
                .collect();
            hits.map(|h| mean_sigma(&h))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resilience {
    pub member: bool,
    /// `p̂_relia` at `t_o + T_recover` per commodity.
    pub p_hat: Vec<f64>,
    /// Smallest `p̂_relia` over `[t_o + T_recover, horizon)` per commodity.
    pub worst: Vec<f64>,
}

/// Resilience: every commodity has `p̂_relia(t_o + T_recover) >= p_resil`.
pub fn resilience_membership(traces: &[&Series], spec: &ReliabilitySpec, outage: usize) -> Result<Resilience> {
    let horizon = traces.iter().map(|s| s.horizon()).min().unwrap_or(0);
    let mut p_hat = Vec::new();
    let mut worst = Vec::new();
    for c in 0..spec.commodities() {
        let at = outage + spec.t_recover[c];
        if at >= horizon {
            return Err(Error::WindowOutOfRange {
                start: outage,
                end: at + 1,
                horizon,
            });
        }
        let series = p_relia_series(traces, c, spec);
        p_hat.push(series[at].map_or(f64::NAN, |e| e.mean));
        worst.push(
            series[at..]
                .iter()
                .flatten()
                .fold(f64::INFINITY, |m, e| m.min(e.mean)),
        );
    }
    let member = (0..spec.commodities()).all(|c| p_hat[c] >= spec.p_resil[c]);
    Ok(Resilience { member, p_hat, worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reliability {
    pub member: bool,
    /// Sample-mean reliability level per commodity, `NaN` if no trial saw
    /// arrivals.
    pub level: Vec<f64>,
}

/// Reliability: the sample-mean level over `[0, t_o)` (pre) or
/// `[t_o, horizon)` (post) reaches `γ_long` for every commodity.
pub fn reliability_membership(
    traces: &[&Series],
    spec: &ReliabilitySpec,
    outage: usize,
    phase: Phase,
) -> Result<Reliability> {
    let horizon = traces.iter().map(|s| s.horizon()).min().unwrap_or(0);
    let (start, len) = match phase {
        Phase::Pre => (0, outage),
        Phase::Post => (outage, horizon.saturating_sub(outage)),
    };
    let mut level = Vec::new();
    for c in 0..spec.commodities() {
        let mut vals = Vec::new();
        for s in traces {
            if let Some(r) = reliability_level(s, c, start, len)? {
                vals.push(r);
            }
        }
        level.push(if vals.is_empty() { f64::NAN } else { mean_over(&vals) });
    }
    let member = level
        .iter()
        .zip(&spec.gamma_long)
        .all(|(&r, &g)| r.is_nan() || r >= g);
    Ok(Reliability { member, level })
}

/// Post-hoc thresholds of one region grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub gamma_long: f64,
    pub gamma_short: f64,
    pub t_recover: usize,
    pub p_resil: f64,
}

/// Grid over arrival scales (each needs its own traces) and thresholds
/// (evaluated over the cached traces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionQuery {
    pub lambda_scales: Vec<f64>,
    pub gamma_long: Vec<f64>,
    pub gamma_short: Vec<f64>,
    pub t_recover: Vec<usize>,
    pub p_resil: Vec<f64>,
}

impl RegionQuery {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_scales.is_empty()
            || self.gamma_long.is_empty()
            || self.gamma_short.is_empty()
            || self.t_recover.is_empty()
            || self.p_resil.is_empty()
        {
            return Err(Error::config("region grid has an empty axis"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<Thresholds> {
        let mut out = Vec::new();
        for &gamma_long in &self.gamma_long {
            for &gamma_short in &self.gamma_short {
                for &t_recover in &self.t_recover {
                    for &p_resil in &self.p_resil {
                        out.push(Thresholds {
                            gamma_long,
                            gamma_short,
                            t_recover,
                            p_resil,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One row of a region grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow {
    pub lambda_scale: f64,
    pub thresholds: Thresholds,
    pub reliable_pre: bool,
    pub reliable_post: bool,
    pub resilient: bool,
    pub p_hat: Vec<f64>,
    pub worst_p_hat: Vec<f64>,
    pub level_post: Vec<f64>,
}

/// Evaluates every threshold tuple on the traces of one arrival scale.
pub fn region_rows(
    lambda_scale: f64,
    traces: &[&Series],
    query: &RegionQuery,
    t_win: usize,
    outage: usize,
) -> Result<Vec<RegionRow>> {
    let ncom = traces.first().map_or(0, |s| s.commodities());
    query
        .thresholds()
        .into_iter()
        .map(|th| {
            let spec = ReliabilitySpec::uniform(
                vec![th.gamma_long; ncom],
                th.gamma_short,
                t_win,
                th.t_recover,
                th.p_resil,
                traces.len().max(1),
            );
            spec.validate()?;
            let pre = reliability_membership(traces, &spec, outage, Phase::Pre)?;
            let post = reliability_membership(traces, &spec, outage, Phase::Post)?;
            let res = resilience_membership(traces, &spec, outage)?;
            Ok(RegionRow {
                lambda_scale,
                thresholds: th,
                reliable_pre: pre.member,
                reliable_post: post.member,
                resilient: res.member,
                p_hat: res.p_hat,
                worst_p_hat: res.worst,
                level_post: post.level,
            })
        })
        .collect()
}
