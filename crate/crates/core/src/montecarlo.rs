//! Monte Carlo estimation of the mean and variance of a time-averaged output under uniformly
//! distributed parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveModel, EvalRecord, Tier};
use crate::error::{Error, Result};
use crate::model::{time_average, OutputSignal, Parameter};

/// One-pass mean and unbiased variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `1 / (n - 1) * sum (x - mean)^2`; NaN for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Tier usage between two retrainings of the ML model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierWindow {
    /// First sample index of the window.
    pub start: usize,
    /// One past the last sample index.
    pub end: usize,
    pub ml: f64,
    pub rb: f64,
    pub fom: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McReport {
    pub n_mc: usize,
    pub mean: f64,
    pub variance: f64,
    /// Time-averaged output per sample.
    pub values: Vec<f64>,
    pub records: Vec<EvalRecord>,
    /// Sample indices at which the ML model was retrained.
    pub retrainings: Vec<usize>,
    pub windows: Vec<TierWindow>,
}

/// Splits the records at retraining events and reports tier fractions per window.
pub fn tier_windows(records: &[EvalRecord]) -> Vec<TierWindow> {
    let mut cuts = vec![0];
    cuts.extend(records.iter().enumerate().filter(|(_, r)| r.retrained).map(|(i, _)| i + 1));
    cuts.push(records.len());
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let slice = &records[w[0]..w[1]];
            let frac = |t: Tier| slice.iter().filter(|r| r.tier == t).count() as f64 / slice.len() as f64;
            TierWindow { start: w[0], end: w[1], ml: frac(Tier::Ml), rb: frac(Tier::Rb), fom: frac(Tier::Fom) }
        })
        .collect()
}

/// Draws `n_mc` parameters uniformly from the box (seeded) and averages each certified output
/// over `window`.
pub fn monte_carlo(model: &mut AdaptiveModel, n_mc: usize, window: (f64, f64), seed: u64) -> Result<McReport> {
    monte_carlo_observed(model, n_mc, window, seed, |_, _, _| Ok(()))
}

/// As [`monte_carlo`], handing each sample index, parameter and served output signal to
/// `observe`.
pub fn monte_carlo_observed<F>(
    model: &mut AdaptiveModel,
    n_mc: usize,
    window: (f64, f64),
    seed: u64,
    mut observe: F,
) -> Result<McReport>
where
    F: FnMut(usize, &Parameter, &OutputSignal) -> Result<()>,
{
    if n_mc < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least two samples".into()));
    }
    let bounds = model.fom().parameter_box.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = model.records().len();
    let mut stats = Welford::new();
    let mut values = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        let mu: Parameter = bounds.sample_uniform(&mut rng);
        let (out, _) = model.eval_output(&mu)?;
        observe(i, &mu, &out)?;
        let v = time_average(&out, window)?;
        model.annotate_last(v);
        stats.push(v);
        values.push(v);
    }
    let records = model.records()[first..].to_vec();
    let retrainings = records.iter().enumerate().filter(|(_, r)| r.retrained).map(|(i, _)| i).collect();
    let windows = tier_windows(&records);
    Ok(McReport { n_mc, mean: stats.mean(), variance: stats.variance(), values, records, retrainings, windows })
}
