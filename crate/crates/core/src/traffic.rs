//! Exogenous arrivals and the fading-memory arrival-rate estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    #[default]
    Poisson,
    /// Deterministic arrivals equal to the mean; handy for tests.
    Constant,
}

/// Mean arrival rates (packets/slot) of one commodity at its source, indexed
/// by lifetime `0..=lifetime_max` (entry 0 and lifetimes outside the arrival
/// set are zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommodityRates {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    pub commodities: Vec<CommodityRates>,
    /// First slot drawn from the post-outage rates.
    pub switch_at: Option<usize>,
}

impl ArrivalProcess {
    pub fn new(kind: ArrivalKind, commodities: Vec<CommodityRates>) -> Result<Self> {
        for (c, r) in commodities.iter().enumerate() {
            if r.pre.len() != r.post.len() {
                return Err(Error::Dimension(format!(
                    "commodity index {c}: pre/post rate vectors differ in length"
                )));
            }
            if r.pre.iter().chain(&r.post).any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::config(format!(
                    "commodity index {c}: arrival rates must be finite and non-negative"
                )));
            }
            if r.post.iter().zip(&r.pre).any(|(po, pr)| po > pr) {
                log::warn!("commodity index {c}: post-outage rate exceeds pre-outage rate");
            }
        }
        Ok(Self {
            kind,
            commodities,
            switch_at: None,
        })
    }

    /// Mean rates in force at slot `t` for commodity `c`.
    pub fn rates_at(&self, c: usize, t: usize) -> &[f64] {
        let r = &self.commodities[c];
        match self.switch_at {
            Some(s) if t >= s => &r.post,
            _ => &r.pre,
        }
    }

    /// Switches to the post-outage means from slot `t` on.
    pub fn switch_rates(&mut self, t: usize) {
        if self.switch_at.is_none() {
            self.switch_at = Some(t);
        }
    }

    /// Draws `a^(c,l)(t)` for every commodity at its layer-1 source.
    pub fn sample(&self, t: usize, streams: &mut ArrivalStreams) -> Vec<Vec<f64>> {
        (0..self.commodities.len())
            .map(|c| {
                let rng = &mut streams.rngs[c];
                self.rates_at(c, t)
                    .iter()
                    .map(|&lambda| sample_one(self.kind, lambda, rng))
                    .collect()
            })
            .collect()
    }
}

fn sample_one(kind: ArrivalKind, lambda: f64, rng: &mut ChaCha8Rng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    match kind {
        ArrivalKind::Constant => lambda,
        ArrivalKind::Poisson => Poisson::new(lambda)
            .expect("positive finite mean")
            .sample(rng),
    }
}

/// One generator per commodity, all derived from the trial seed. Each
/// commodity uses its own ChaCha stream so adding commodities leaves the
/// existing streams untouched.
#[derive(Debug, Clone)]
pub struct ArrivalStreams {
    rngs: Vec<ChaCha8Rng>,
}

impl ArrivalStreams {
    pub fn new(seed: u64, commodities: usize) -> Self {
        let rngs = (0..commodities)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                rng
            })
            .collect();
        Self { rngs }
    }
}

/// Running arrival-rate estimate per lifetime: an exact cumulative mean for
/// the first `window` slots, then an exponential average with weight
/// `1/window`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingAverage {
    window: usize,
    values: Vec<f64>,
}

impl FadingAverage {
    pub fn new(window: usize, lifetimes: usize) -> Self {
        assert!(window >= 1, "fading window must be at least one slot");
        Self {
            window,
            values: vec![0.0; lifetimes],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Folds in the arrivals `a` observed at slot `t`.
    pub fn update(&mut self, a: &[f64], t: usize) {
        debug_assert_eq!(a.len(), self.values.len());
        let (keep, div) = if t >= self.window {
            ((self.window - 1) as f64, self.window as f64)
        } else {
            (t as f64, (t + 1) as f64)
        };
        for (v, &x) in self.values.iter_mut().zip(a) {
            *v = (keep * *v + x) / div;
        }
    }

    /// Overwrites the estimate, e.g. to seed a test at a given state.
    pub fn set(&mut self, values: &[f64]) {
        self.values.copy_from_slice(values);
    }
}
