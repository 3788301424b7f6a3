use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::params::SystemParams;

use super::{AvailabilityCurve, MeanFieldError};

const BATCHES: usize = 20;
const SURVIVAL_CUTOFF: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessBound {
    /// Lower bound on the mean staleness (seconds).
    pub f_lower: f64,
    /// Batch-means standard error of `f_lower`.
    pub std_error: f64,
    /// `f_lower · λ`.
    pub normalized: f64,
    /// Ladder indices kept before truncation.
    pub terms: usize,
    pub samples: usize,
}

/// Per-index sums over a block of ladder samples.
#[derive(Debug, Clone, Default)]
struct LadderSums {
    /// Σ o(γ_i) over samples with γ_i ≤ τ_l.
    within: Vec<f64>,
    /// Number of samples with γ_i ≤ τ_l.
    count: Vec<u64>,
    samples: u64,
}

impl LadderSums {
    fn new(i_max: usize) -> Self {
        LadderSums {
            within: vec![0.0; i_max],
            count: vec![0; i_max],
            samples: 0,
        }
    }

    fn merge(&mut self, other: &LadderSums) {
        for i in 0..self.within.len() {
            self.within[i] += other.within[i];
            self.count[i] += other.count[i];
        }
        self.samples += other.samples;
    }

    /// Bound in units of δ and the number of indices used. `None` when the
    /// denominator vanishes.
    fn evaluate(&self) -> Option<(f64, usize)> {
        let mut survival = 1.0;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut terms = 0;
        for i in 0..self.within.len() {
            if self.count[i] == 0 || survival < SURVIVAL_CUTOFF {
                break;
            }
            let p = self.within[i] / self.count[i] as f64;
            let u = self.within[i] / self.samples as f64;
            num += (i + 1) as f64 * p * survival;
            den += u * survival;
            survival *= 1.0 - p;
            terms = i + 1;
        }
        (den > 0.0).then(|| (num / den, terms))
    }
}

/// Monte-Carlo estimate of the staleness lower bound
/// `δ Σ_i i p_i Π_{j<i}(1-p_j) / Σ_i u_i Π_{j<i}(1-p_j)`, where `γ_i` is
/// the `i`-th point of a rate-`λ` Poisson ladder, `p_i = E[o(γ_i) | γ_i ≤ τ_l]`
/// and `u_i = E[o(γ_i)]` with `o = 0` beyond `τ_l`. Indices stop at
/// `ceil(10 λ τ_l)` or once the survival product drops below 1e-6.
pub fn staleness_bound(
    curve: &AvailabilityCurve,
    params: &SystemParams,
    samples: usize,
    seed: u64,
) -> Result<StalenessBound, MeanFieldError> {
    if curve.tau.is_empty() {
        return Err(MeanFieldError::CurveUnavailable);
    }
    let lambda = params.obs_rate;
    if lambda <= 0.0 {
        return Err(MeanFieldError::NothingIncorporated);
    }
    let lifetime = curve.lifetime();
    let i_max = ((10.0 * lambda * lifetime).ceil() as usize).max(1);
    let samples = samples.max(BATCHES);
    let per_batch = samples / BATCHES;
    let exp = Exp::new(lambda).expect("positive rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut batches = Vec::with_capacity(BATCHES);
    for _ in 0..BATCHES {
        let mut sums = LadderSums::new(i_max);
        for _ in 0..per_batch {
            sums.samples += 1;
            let mut gamma = 0.0;
            for i in 0..i_max {
                gamma += exp.sample(&mut rng);
                if gamma > lifetime {
                    break;
                }
                sums.within[i] += curve.value_at(gamma);
                sums.count[i] += 1;
            }
        }
        batches.push(sums);
    }

    let mut total = LadderSums::new(i_max);
    for b in &batches {
        total.merge(b);
    }
    let delta = params.staleness_delta();
    let (units, terms) = total
        .evaluate()
        .ok_or(MeanFieldError::NothingIncorporated)?;
    let f_lower = delta * units;

    let estimates: Vec<f64> = batches
        .iter()
        .filter_map(|b| b.evaluate().map(|(u, _)| delta * u))
        .collect();
    let std_error = if estimates.len() > 1 {
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::NAN
    };

    Ok(StalenessBound {
        f_lower,
        std_error,
        normalized: f_lower * lambda,
        terms,
        samples: per_batch * BATCHES,
    })
}
