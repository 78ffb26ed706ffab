//! Recurrence-time tails: exact tail masses, log-linear fits, and the
//! compound geometric sum used to check exponential tails of random sums.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Result, YoungError};

/// Least-squares fit of `ln m = ln C + n ln θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub c: f64,
    pub theta: f64,
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

impl LogLinearFit {
    pub fn value(&self, n: f64) -> f64 {
        self.c * self.theta.powf(n)
    }
}

/// Fits over the points with positive mass; needs at least five.
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<LogLinearFit> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(n, m)| (n, m.ln())).collect();
    if pts.len() < 5 {
        return Err(YoungError::FitUndefined(format!("{} positive bins, need 5", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(YoungError::FitUndefined("all bins at one abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLinearFit {
        c: intercept.exp(),
        theta: slope.exp(),
        slope,
        r2,
        points: pts.len(),
    })
}

/// `m{τ > n}` for `n = 0..=n_max` and its log-linear fit over `[fit_lo, n_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub mass: Vec<f64>,
    pub total: f64,
    pub leftover: f64,
    pub fit_lo: usize,
    pub fit: LogLinearFit,
}

/// Tail from `(time, mass)` records; `leftover` is mass with time beyond `n_max`.
pub fn tail_from_times(times: impl IntoIterator<Item = (usize, f64)>, leftover: f64, n_max: usize, fit_lo: usize) -> Result<TailReport> {
    let mut at = vec![0.0; n_max + 2];
    for (t, m) in times {
        at[t.min(n_max + 1)] += m;
    }
    at[n_max + 1] += leftover;
    let total: f64 = at.iter().sum();
    let mut mass = vec![0.0; n_max + 1];
    let mut above = total;
    for n in 0..=n_max {
        above -= at[n];
        mass[n] = above.max(0.0);
    }
    let pts: Vec<(f64, f64)> = (fit_lo..=n_max).map(|n| (n as f64, mass[n])).collect();
    let fit = fit_log_linear(&pts)?;
    Ok(TailReport {
        mass,
        total,
        leftover,
        fit_lo,
        fit,
    })
}

impl TailReport {
    /// Columns n, mass, log_mass, fit_value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,mass,log_mass,fit_value\n");
        for (n, m) in self.mass.iter().enumerate() {
            s.push_str(&format!("{n},{m},{},{}\n", m.ln(), self.fit.value(n as f64)));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundTail {
    pub p_geom: f64,
    pub k_geom: f64,
    pub trials: usize,
    /// Empirical `P(S > n)`.
    pub tail: Vec<f64>,
    /// Convolution oracle `P(S > n)` for `n ≤ 50`.
    pub oracle: Vec<f64>,
    /// Largest |empirical − oracle| in Monte Carlo standard errors over `n ≤ 50`.
    pub max_z: f64,
    pub fit: LogLinearFit,
    /// Geometric rate of the exact sum, `p + k(1 − p)`.
    pub theta_exact: f64,
}

pub const ORACLE_RANGE: usize = 50;

/// Exact tail of `S = ξ₀ + … + ξ_K` by convolution, `K` geometric on
/// `{0, 1, …}` with `P(K ≥ j) = kʲ`, `ξᵢ` geometric on `{1, 2, …}` with
/// `P(ξ > n) = pⁿ`.
pub fn compound_tail_oracle(p: f64, k: f64, n_max: usize) -> Vec<f64> {
    let xi: Vec<f64> = (0..=n_max)
        .map(|n| if n == 0 { 0.0 } else { (1.0 - p) * p.powi(n as i32 - 1) })
        .collect();
    let mut conv = xi.clone();
    let mut pmf = vec![0.0; n_max + 1];
    let mut pk = 1.0 - k;
    for _ in 0..=n_max {
        for n in 0..=n_max {
            pmf[n] += pk * conv[n];
        }
        let mut next = vec![0.0; n_max + 1];
        for (a, &ca) in conv.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            for (b, &xb) in xi.iter().enumerate().take(n_max + 1 - a) {
                next[a + b] += ca * xb;
            }
        }
        conv = next;
        pk *= k;
    }
    let mut tail = Vec::with_capacity(n_max + 1);
    let mut cdf = 0.0;
    for q in pmf {
        cdf += q;
        tail.push(1.0 - cdf);
    }
    tail
}

/// Monte Carlo of the compound sum with a log-linear fit over the bins that
/// hold at least 100 samples.
pub fn compound_tail_mc(p_geom: f64, k_geom: f64, trials: usize, seed: u64) -> Result<CompoundTail> {
    if !(p_geom > 0.0 && p_geom < 1.0 && (0.0..1.0).contains(&k_geom)) {
        return Err(YoungError::Domain(format!("rates ({p_geom}, {k_geom}) outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count_k = Geometric::new(1.0 - k_geom).map_err(|e| YoungError::Domain(e.to_string()))?;
    let step = Geometric::new(1.0 - p_geom).map_err(|e| YoungError::Domain(e.to_string()))?;
    let mut hist: Vec<u64> = Vec::new();
    for _ in 0..trials {
        let k = count_k.sample(&mut rng);
        let mut s = 0u64;
        for _ in 0..=k {
            s += 1 + step.sample(&mut rng);
        }
        let s = s as usize;
        if s >= hist.len() {
            hist.resize(s + 1, 0);
        }
        hist[s] += 1;
    }
    let nt = trials as f64;
    let mut tail = Vec::with_capacity(hist.len());
    let mut above = trials as u64;
    for &h in &hist {
        above -= h;
        tail.push(above as f64 / nt);
    }
    let oracle = compound_tail_oracle(p_geom, k_geom, ORACLE_RANGE);
    let mut max_z: f64 = 0.0;
    for (n, &q) in oracle.iter().enumerate() {
        let emp = tail.get(n).copied().unwrap_or(0.0);
        let se = (q * (1.0 - q) / nt).sqrt();
        if se > 0.0 {
            max_z = max_z.max((emp - q).abs() / se);
        }
    }
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .take_while(|(_, &t)| t * nt >= 100.0)
        .map(|(n, &t)| (n as f64, t))
        .collect();
    let fit = fit_log_linear(&pts)?;
    Ok(CompoundTail {
        p_geom,
        k_geom,
        trials,
        tail,
        oracle,
        max_z,
        fit,
        theta_exact: p_geom + k_geom * (1.0 - p_geom),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_geometric() {
        let pts: Vec<(f64, f64)> = (0..20).map(|n| (n as f64, 3.0 * 0.8f64.powi(n))).collect();
        let f = fit_log_linear(&pts).unwrap();
        assert!((f.theta - 0.8).abs() < 1e-12 && (f.c - 3.0).abs() < 1e-10 && f.r2 > 1.0 - 1e-12);
        assert!(fit_log_linear(&pts[..4]).is_err());
    }

    #[test]
    fn tail_starts_at_total_and_is_monotone() {
        let times = (3..40).map(|t| (t, 0.5f64.powi(t as i32 - 2)));
        let r = tail_from_times(times, 1e-3, 50, 3).unwrap();
        assert!((r.mass[0] - r.total).abs() < 1e-15);
        assert!(r.mass.windows(2).all(|w| w[1] <= w[0]));
        assert!((r.mass[50] - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_geometric_in_the_combined_rate() {
        let (p, k) = (0.3, 0.5);
        let t = compound_tail_oracle(p, k, 30);
        let th = p + k * (1.0 - p);
        for (n, q) in t.iter().enumerate() {
            assert!((q - th.powi(n as i32)).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn single_summand_has_rate_p() {
        let r = compound_tail_mc(0.5, 0.0, 100_000, 3).unwrap();
        let se = (0.25f64 / 100_000.0).sqrt();
        assert!((r.tail[1] - 0.5).abs() < 3.0 * se);
        assert!((r.fit.theta - 0.5).abs() < 0.01);
    }
}
