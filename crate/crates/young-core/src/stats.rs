//! Empirical ergodic statistics along long orbits from Lebesgue-random
//! seeds: Birkhoff averages, correlations, variance, CLT and large
//! deviations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::TAU;

use crate::error::{Result, YoungError};
use crate::maps::{splitmix, MapModel, Point};
use crate::orbit::OrbitSampler;

pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    Constant(f64),
    /// `cos(2πk·x[axis])`.
    Cosine { axis: usize, k: f64 },
    /// Chart distance to a point.
    DistanceTo(Point),
    /// `ψ∘f − ψ`.
    Coboundary(Box<Observable>),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Constant(c) => format!("const({c})"),
            Observable::Cosine { axis, k } => format!("cos(2pi*{k}*x{axis})"),
            Observable::DistanceTo(p) => format!("dist({},{},{})", p[0], p[1], p[2]),
            Observable::Coboundary(psi) => format!("cob({})", psi.name()),
        }
    }

    /// Hölder exponent of the observable.
    pub fn holder_exponent(&self) -> f64 {
        1.0
    }

    /// Value at `x` whose image is `fx`.
    pub fn eval(&self, map: &MapModel, x: &Point, fx: &Point) -> f64 {
        match self {
            Observable::Constant(c) => *c,
            Observable::Cosine { axis, k } => (TAU * k * x[*axis]).cos(),
            Observable::DistanceTo(p) => map.chart_distance(x, p),
            Observable::Coboundary(psi) => psi.eval(map, fx, fx) - psi.eval(map, x, x),
        }
    }

    /// Bound on |φ| over the trapping region.
    pub fn sup_bound(&self, map: &MapModel) -> f64 {
        match self {
            Observable::Constant(c) => c.abs(),
            Observable::Cosine { .. } => 1.0,
            Observable::DistanceTo(_) => {
                if map.is_skew() {
                    (std::f64::consts::PI.powi(2) + 4.0).sqrt()
                } else {
                    std::f64::consts::FRAC_1_SQRT_2
                }
            }
            Observable::Coboundary(psi) => 2.0 * psi.sup_bound(map),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub burn_in: usize,
    pub seed: u64,
}

impl TimeSeries {
    pub fn generate(map: &MapModel, phi: &Observable, n: usize, burn_in: usize, seed: u64) -> Self {
        let mut orbit = OrbitSampler::new(map, seed);
        for _ in 0..burn_in {
            orbit.step();
        }
        let mut x = orbit.point;
        let values = (0..n)
            .map(|_| {
                let fx = orbit.step();
                let v = phi.eval(map, &x, &fx);
                x = fx;
                v
            })
            .collect();
        Self { values, burn_in, seed }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Independent per-sample seed.
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    let mut s = seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix(&mut s)
}

pub fn birkhoff_average(map: &MapModel, phi: &Observable, n: usize, seed: u64) -> Result<f64> {
    if n < 1000 {
        return Err(YoungError::Domain(format!("orbit length {n} below 1000")));
    }
    Ok(TimeSeries::generate(map, phi, n, DEFAULT_BURN_IN, seed).sum() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n: usize,
    pub estimate: f64,
    pub error: f64,
}

pub const JACKKNIFE_BLOCKS: usize = 20;

/// Delete-one-block jackknife of a statistic of per-block sums.
fn jackknife(blocks: &[(f64, f64, f64, f64)], stat: impl Fn(f64, f64, f64, f64) -> f64) -> (f64, f64) {
    let tot = blocks.iter().fold((0.0, 0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let full = stat(tot.0, tot.1, tot.2, tot.3);
    let k = blocks.len() as f64;
    let leave: Vec<f64> = blocks
        .iter()
        .map(|b| stat(tot.0 - b.0, tot.1 - b.1, tot.2 - b.2, tot.3 - b.3))
        .collect();
    let mean = leave.iter().sum::<f64>() / k;
    let var = (k - 1.0) / k * leave.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (full, var.sqrt())
}

/// `∫(φ∘fⁿ)ψ − ∫φ∫ψ` along one orbit of length `samples + max n`, with
/// jackknife errors over contiguous blocks.
pub fn correlation(map: &MapModel, phi: &Observable, psi: &Observable, n_list: &[usize], samples: usize, seed: u64) -> Result<Vec<Estimate>> {
    let n_max = *n_list.iter().max().ok_or_else(|| YoungError::Domain("empty lag list".into()))?;
    if samples < JACKKNIFE_BLOCKS {
        return Err(YoungError::Domain(format!("{samples} samples below {JACKKNIFE_BLOCKS}")));
    }
    let mut orbit = OrbitSampler::new(map, seed);
    for _ in 0..DEFAULT_BURN_IN {
        orbit.step();
    }
    let mut pts = Vec::with_capacity(samples + n_max + 1);
    pts.push(orbit.point);
    for _ in 0..samples + n_max {
        pts.push(orbit.step());
    }
    let a: Vec<f64> = pts.windows(2).map(|w| phi.eval(map, &w[0], &w[1])).collect();
    let b: Vec<f64> = pts.windows(2).map(|w| psi.eval(map, &w[0], &w[1])).collect();
    let block = samples / JACKKNIFE_BLOCKS;
    Ok(n_list
        .iter()
        .map(|&n| {
            let blocks: Vec<(f64, f64, f64, f64)> = (0..JACKKNIFE_BLOCKS)
                .map(|j| {
                    (j * block..(j + 1) * block).fold((0.0, 0.0, 0.0, block as f64), |s, i| (s.0 + a[i + n] * b[i], s.1 + a[i + n], s.2 + b[i], s.3))
                })
                .collect();
            let (estimate, error) = jackknife(&blocks, |ab, sa, sb, m| ab / m - (sa / m) * (sb / m));
            Estimate { n, estimate, error }
        })
        .collect())
}

/// Centred Birkhoff sums `S_n − n·mean` of `samples` independent orbits;
/// the mean is pooled over all orbits unless given.
pub fn block_sums(map: &MapModel, phi: &Observable, n: usize, samples: usize, seed: u64, mean: Option<f64>) -> (Vec<f64>, f64) {
    let sums: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| TimeSeries::generate(map, phi, n, DEFAULT_BURN_IN / 10, sample_seed(seed, i)).sum())
        .collect();
    let m = mean.unwrap_or_else(|| sums.iter().sum::<f64>() / (samples * n) as f64);
    (sums.iter().map(|s| s - n as f64 * m).collect(), m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: usize,
    pub samples: usize,
    pub sigma2: f64,
    pub error: f64,
    /// Estimate at `2n`.
    pub sigma2_doubled: f64,
    pub error_doubled: f64,
    /// `sigma2_doubled / sigma2` (0 when both vanish).
    pub doubling_ratio: f64,
    /// Largest |S_n − n·mean| over samples, used by the coboundary check.
    pub max_abs_sum: f64,
}

fn second_moment(sums: &[f64], n: usize) -> (f64, f64) {
    let k = sums.len() as f64;
    let v: Vec<f64> = sums.iter().map(|s| s * s / n as f64).collect();
    let m = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (m, (var / k).sqrt())
}

pub fn variance(map: &MapModel, phi: &Observable, n: usize, samples: usize, seed: u64) -> Result<VarianceReport> {
    if n < 1000 || samples < 1000 {
        return Err(YoungError::Domain(format!("n = {n}, samples = {samples}; both must be at least 1000")));
    }
    let (s1, mean) = block_sums(map, phi, n, samples, seed, None);
    let (s2, _) = block_sums(map, phi, 2 * n, samples, seed ^ 0x5bd1_e995, Some(mean));
    let (sigma2, error) = second_moment(&s1, n);
    let (sigma2_doubled, error_doubled) = second_moment(&s2, 2 * n);
    Ok(VarianceReport {
        n,
        samples,
        sigma2,
        error,
        sigma2_doubled,
        error_doubled,
        doubling_ratio: if sigma2 > 0.0 { sigma2_doubled / sigma2 } else { 0.0 },
        max_abs_sum: s1.iter().chain(&s2).fold(0.0, |m, s| m.max(s.abs())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub block_n: usize,
    pub samples: usize,
    pub sigma: f64,
    /// None when degenerate.
    pub ks: Option<f64>,
    /// σ vanishes within noise (coboundary suspect).
    pub degenerate: bool,
    /// Histogram of normalised block sums: (bin centre, density, normal density).
    pub histogram: Vec<(f64, f64, f64)>,
}

/// Kolmogorov–Smirnov distance of a sample to the standard normal law.
pub fn ks_normal(values: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / k).max((i + 1) as f64 / k - c)
        })
        .fold(0.0, f64::max)
}

pub fn clt_test(map: &MapModel, phi: &Observable, block_n: usize, samples: usize, seed: u64) -> Result<CltReport> {
    if samples < 10_000 {
        return Err(YoungError::Domain(format!("{samples} samples below 10^4")));
    }
    let (sums, _) = block_sums(map, phi, block_n, samples, seed, None);
    let sd = (sums.iter().map(|s| s * s).sum::<f64>() / samples as f64).sqrt();
    let sigma = sd / (block_n as f64).sqrt();
    let scale = phi.sup_bound(map).max(1e-300);
    if sigma <= 1e-9 * scale {
        return Ok(CltReport {
            block_n,
            samples,
            sigma,
            ks: None,
            degenerate: true,
            histogram: Vec::new(),
        });
    }
    let z: Vec<f64> = sums.iter().map(|s| s / sd).collect();
    const BINS: usize = 40;
    let (lo, hi) = (-4.0, 4.0);
    let width = (hi - lo) / BINS as f64;
    let mut counts = vec![0usize; BINS];
    for &x in &z {
        if (lo..hi).contains(&x) {
            counts[((x - lo) / width) as usize] += 1;
        }
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let x = lo + (i as f64 + 0.5) * width;
            (x, c as f64 / (samples as f64 * width), (-0.5 * x * x).exp() / (TAU).sqrt())
        })
        .collect();
    Ok(CltReport {
        block_n,
        samples,
        sigma,
        ks: Some(ks_normal(&z)),
        degenerate: false,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub n: usize,
    pub epsilon: f64,
    pub count: usize,
    pub probability: f64,
    /// `−(1/n) ln p`; a lower bound `−(1/n) ln(1/samples)` when censored.
    pub rate: f64,
    /// None when censored.
    pub error: Option<f64>,
    pub censored: bool,
}

/// `−(1/n) log μ(|S_n/n − mean| > ε)` over `n_list` and each ε, estimated
/// from the same orbit samples for every ε.
pub fn large_deviations(map: &MapModel, phi: &Observable, epsilons: &[f64], n_list: &[usize], samples: usize, seed: u64) -> Result<Vec<RateEstimate>> {
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(YoungError::Domain(format!("epsilon {e} must be positive")));
    }
    let mut out = Vec::new();
    for (k, &n) in n_list.iter().enumerate() {
        let (sums, _) = block_sums(map, phi, n, samples, sample_seed(seed, k), None);
        for &eps in epsilons {
            let count = sums.iter().filter(|s| (*s / n as f64).abs() > eps).count();
            let p = count as f64 / samples as f64;
            let censored = count == 0;
            let (rate, error) = if censored {
                ((samples as f64).ln() / n as f64, None)
            } else {
                (-p.ln() / n as f64, Some(((1.0 - p) / count as f64).sqrt() / n as f64))
            };
            out.push(RateEstimate {
                n,
                epsilon: eps,
                count,
                probability: p,
                rate,
                error,
                censored,
            });
        }
    }
    Ok(out)
}

/// Rates at each n are nondecreasing in ε within the combined error bars;
/// a censored rate is a lower bound and passes against anything below it.
pub fn rates_monotone(rates: &[RateEstimate]) -> bool {
    let mut by_n: std::collections::BTreeMap<usize, Vec<&RateEstimate>> = std::collections::BTreeMap::new();
    for r in rates {
        by_n.entry(r.n).or_default().push(r);
    }
    by_n.values_mut().all(|v| {
        v.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        v.windows(2).all(|w| w[1].censored || w[1].rate + 2.0 * (w[0].error.unwrap_or(0.0) + w[1].error.unwrap_or(0.0)) >= w[0].rate)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observable_is_exact() {
        let m = MapModel::linear_cat();
        assert_eq!(birkhoff_average(&m, &Observable::Constant(2.5), 1000, 1).unwrap(), 2.5);
        let c = correlation(&m, &Observable::Constant(1.0), &Observable::Constant(1.0), &[1, 2], 1000, 1).unwrap();
        assert!(c.iter().all(|e| e.estimate.abs() < 1e-12));
        let r = clt_test(&m, &Observable::Constant(1.0), 10, 10_000, 1).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn jackknife_of_a_mean() {
        let blocks: Vec<(f64, f64, f64, f64)> = (0..4).map(|i| (0.0, i as f64, 0.0, 1.0)).collect();
        let (m, e) = jackknife(&blocks, |_, s, _, n| s / n);
        assert!((m - 1.5).abs() < 1e-15);
        let sd = (blocks.iter().map(|b| (b.1 - 1.5).powi(2)).sum::<f64>() / 3.0 / 4.0).sqrt();
        assert!((e - sd).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::standard();
        let v: Vec<f64> = (0..1000).map(|i| normal.inverse_cdf((i as f64 + 0.5) / 1000.0)).collect();
        assert!((ks_normal(&v) - 0.0005).abs() < 1e-9);
    }

    #[test]
    fn impossible_deviation_is_censored() {
        let m = MapModel::linear_cat();
        let phi = Observable::Cosine { axis: 0, k: 1.0 };
        let r = large_deviations(&m, &phi, &[2.5], &[10], 200, 3).unwrap();
        assert!(r[0].censored && r[0].count == 0);
        assert!(large_deviations(&m, &phi, &[0.0], &[10], 10, 3).is_err());
    }
}
