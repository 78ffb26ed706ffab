//! u-filtrations: Case 1 pass-through and Case 2 slicing, the thresholds
//! a, b, n₀, and the interior radius δ₁.

use serde::{Deserialize, Serialize};

use crate::error::{Result, YoungError};
use crate::geometry::{z_from_profiles, ComponentSet, Profile, UnstableCurve};
use crate::leaf::LeafArc;
use crate::maps::MapModel;

const OFFSET_GRID: usize = 64;
/// Inflation of α and β for the recursion across re-based measures.
pub const CONSTANT_INFLATION: f64 = 1.0 + 1e-6;

/// A component image with uniform density: base interval on the originating
/// disk, the analytic image arc, and the mass it carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub base0: f64,
    pub base_len: f64,
    pub arc: LeafArc,
    pub mass: f64,
}

impl Piece {
    pub fn density(&self) -> f64 {
        self.mass / self.arc.len
    }

    pub fn profile(&self) -> Profile {
        vec![(self.arc.len, self.density())]
    }

    /// Sub-piece between arc offsets `a < b`.
    pub fn sub(&self, a: f64, b: f64) -> Piece {
        let f = self.base_len / self.arc.len;
        Piece {
            base0: self.base0 + a * f,
            base_len: (b - a) * f,
            arc: self.arc.sub(a, b),
            mass: self.mass * (b - a) / self.arc.len,
        }
    }

    pub fn forward(&self, map: &MapModel) -> Piece {
        Piece {
            arc: self.arc.forward(map),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiltrationConstants {
    pub alpha: f64,
    pub beta: f64,
    pub beta_bar: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub delta_prime: f64,
    pub a: f64,
    pub b: f64,
}

impl FiltrationConstants {
    pub fn for_map(map: &MapModel, delta0: f64) -> Self {
        let alpha = map.lambda * CONSTANT_INFLATION;
        let beta = 4.0 * (map.d_u as f64).powf(1.5) * CONSTANT_INFLATION;
        let beta_bar = 2.0 * beta / (1.0 - alpha);
        let (a, b) = threshold_coefficients(alpha, beta, delta0);
        FiltrationConstants {
            alpha,
            beta,
            beta_bar,
            delta0,
            delta1: delta1(delta0, alpha, beta),
            delta_prime: delta_prime(delta0, map.lambda_s(), map.d_u),
            a,
            b,
        }
    }

    pub fn n0(&self, z0: f64) -> Result<usize> {
        n0_threshold(z0, self.alpha, self.beta, self.delta0)
    }

    /// Recursion bound αⁿZ₀ + (β/δ₀)Σ_{j<n}αʲ.
    pub fn bound(&self, z0: f64, n: usize) -> f64 {
        let an = self.alpha.powi(n as i32);
        an * z0 + self.beta / self.delta0 * (1.0 - an) / (1.0 - self.alpha)
    }
}

pub fn delta_prime(delta0: f64, lambda: f64, d_u: usize) -> f64 {
    delta0 * lambda / (2.0 * d_u as f64).sqrt()
}

/// `(a, b)` with `a = −1/ln α` and `b = |ln(δ₀(1−α)/β)/ln α|`. The magnitude
/// keeps n₀ sufficient for the Z bound when δ₀ > β/(1−α).
pub fn threshold_coefficients(alpha: f64, beta: f64, delta0: f64) -> (f64, f64) {
    let a = -1.0 / alpha.ln();
    let b = ((delta0 * (1.0 - alpha) / beta).ln() / alpha.ln()).abs();
    (a, b)
}

/// n₀ = ⌈a·ln Z₀ + b⌉, clamped at 0.
pub fn n0_threshold(z0: f64, alpha: f64, beta: f64, delta0: f64) -> Result<usize> {
    if !(z0 > 0.0) {
        return Err(YoungError::Domain(format!("Z0 = {z0} must be positive")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(YoungError::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    let (a, b) = threshold_coefficients(alpha, beta, delta0);
    let v = a * z0.ln() + b;
    Ok(if v <= 0.0 { 0 } else { v.ceil() as usize })
}

/// δ₁ = δ₀/(2β̄) with β̄ = 2β/(1−α).
pub fn delta1(delta0: f64, alpha: f64, beta: f64) -> f64 {
    let beta_bar = 2.0 * beta / (1.0 - alpha);
    delta0 / (2.0 * beta_bar)
}

/// Cut positions in `(0, len)` for Case 2 slicing with spacing `dp`; the
/// offset is the grid candidate minimising the summed density at the cuts.
pub fn slice_positions(len: f64, dp: f64, density_at: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..OFFSET_GRID {
        let a = dp * j as f64 / OFFSET_GRID as f64;
        let mut cuts = Vec::new();
        let mut k = if a > 0.0 { 0 } else { 1 };
        loop {
            let c = a + k as f64 * dp;
            if c >= len {
                break;
            }
            cuts.push(c);
            k += 1;
        }
        let cost: f64 = cuts.iter().map(|&c| density_at(c)).sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, cuts));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// One slicing pass on uniform-density pieces: components of length at most
/// `δ₀λ` are kept whole, longer ones are cut at spacing `δ₀λ/√2`.
pub fn refine_step(pieces: &[Piece], delta0: f64, lambda: f64) -> Vec<Piece> {
    let keep = delta0 * lambda;
    let dp = delta_prime(delta0, lambda, 1);
    let mut out = Vec::with_capacity(pieces.len());
    for p in pieces {
        slice_piece(p, keep, dp, &mut out);
    }
    out
}

pub fn slice_piece(p: &Piece, keep: f64, dp: f64, out: &mut Vec<Piece>) {
    if p.arc.len <= keep {
        out.push(*p);
        return;
    }
    let rho = p.density();
    let cuts = slice_positions(p.arc.len, dp, |_| rho);
    let mut prev = 0.0;
    for c in cuts.into_iter().chain(std::iter::once(p.arc.len)) {
        out.push(p.sub(prev, c));
        prev = c;
    }
}

/// Slicing pass on a polyline curve with arbitrary per-segment densities;
/// returns the refined component set in base parameters.
pub fn refine_step_curve(curve: &UnstableCurve, components: &ComponentSet, delta0: f64, lambda: f64) -> ComponentSet {
    let keep = delta0 * lambda;
    let dp = delta_prime(delta0, lambda, 1);
    let lens = curve.segment_lengths();
    let mut cum = vec![0.0];
    for l in &lens {
        cum.push(cum.last().unwrap() + l);
    }
    let base_at = |pos: f64| -> f64 {
        let i = cum.partition_point(|&c| c <= pos).clamp(1, lens.len()) - 1;
        let f = if lens[i] > 0.0 { (pos - cum[i]) / lens[i] } else { 0.0 };
        curve.base_param[i] + f * (curve.base_param[i + 1] - curve.base_param[i])
    };
    let rho_at = |pos: f64| -> f64 {
        let i = cum.partition_point(|&c| c <= pos).clamp(1, lens.len()) - 1;
        let db = curve.base_param[i + 1] - curve.base_param[i];
        if lens[i] > 0.0 {
            curve.mass_density[i] * db / lens[i]
        } else {
            0.0
        }
    };
    let mut out = Vec::new();
    for &(a, b) in &components.intervals {
        let pa = curve.arc_position(a);
        let pb = curve.arc_position(b);
        if pb - pa <= keep {
            out.push((a, b));
            continue;
        }
        let cuts = slice_positions(pb - pa, dp, |c| rho_at(pa + c));
        let mut prev = a;
        for c in cuts {
            let s = base_at(pa + c);
            if s > prev {
                out.push((prev, s));
                prev = s;
            }
        }
        out.push((prev, b));
    }
    ComponentSet {
        intervals: out,
        depth: components.depth,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationLevel {
    pub n: usize,
    pub component_count: usize,
    pub z: f64,
    pub bound_rhs: f64,
    pub interior_fraction: f64,
    pub max_diameter: f64,
    pub mass: f64,
    pub pieces: Option<Vec<Piece>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filtration {
    pub base: Piece,
    pub levels: Vec<FiltrationLevel>,
    pub constants: FiltrationConstants,
    pub n0: usize,
}

/// Fraction of mass at arc distance greater than `delta1` from the boundary
/// of its component image.
pub fn pieces_interior_fraction(pieces: &[Piece], delta1: f64) -> f64 {
    let total: f64 = pieces.iter().map(|p| p.mass).sum();
    let inner: f64 = pieces
        .iter()
        .map(|p| p.mass * (1.0 - 2.0 * delta1 / p.arc.len).max(0.0))
        .sum();
    inner / total
}

pub fn pieces_z(pieces: &[Piece], reference_mass: f64) -> Result<f64> {
    let profiles: Vec<Profile> = pieces.iter().map(|p| p.profile()).collect();
    z_from_profiles(&profiles, reference_mass)
}

/// Alternates slicing (at scale `δ₀λ_s`) and pushforward up to depth
/// `n_max`, recording Z_n, the recursion bound and the interior fraction.
pub fn build_filtration(map: &MapModel, arc: &LeafArc, delta0: f64, n_max: usize, keep_pieces: bool) -> Result<Filtration> {
    const PIECE_BUDGET: usize = 4_000_000;
    let constants = FiltrationConstants::for_map(map, delta0);
    if arc.len > delta0 {
        return Err(YoungError::Precondition(format!(
            "initial curve of length {} is not admissible at δ₀ = {delta0}",
            arc.len
        )));
    }
    let base = Piece {
        base0: 0.0,
        base_len: arc.len,
        arc: *arc,
        mass: arc.len,
    };
    let mut pieces = vec![base];
    let z0 = pieces_z(&pieces, base.mass)?;
    let n0 = constants.n0(z0)?;
    let lambda_s = map.lambda_s();
    let mut levels = Vec::with_capacity(n_max + 1);
    let record = |n: usize, pieces: &Vec<Piece>, z: f64| FiltrationLevel {
        n,
        component_count: pieces.len(),
        z,
        bound_rhs: constants.bound(z0, n),
        interior_fraction: pieces_interior_fraction(pieces, constants.delta1),
        max_diameter: pieces.iter().map(|p| p.arc.len).fold(0.0, f64::max),
        mass: pieces.iter().map(|p| p.mass).sum(),
        pieces: keep_pieces.then(|| pieces.clone()),
    };
    levels.push(record(0, &pieces, z0));
    for n in 1..=n_max {
        pieces = refine_step(&pieces, delta0, lambda_s)
            .into_iter()
            .map(|p| p.forward(map))
            .collect();
        if pieces.len() > PIECE_BUDGET {
            return Err(YoungError::Resource(format!("filtration level {n} exceeds {PIECE_BUDGET} components")));
        }
        let z = pieces_z(&pieces, base.mass)?;
        levels.push(record(n, &pieces, z));
    }
    Ok(Filtration {
        base,
        levels,
        constants,
        n0,
    })
}

pub fn interior_fraction(filtration: &Filtration, n: usize) -> Result<f64> {
    filtration
        .levels
        .get(n)
        .map(|l| l.interior_fraction)
        .ok_or_else(|| YoungError::Precondition(format!("level {n} not recorded")))
}

impl Filtration {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,component_count,Z_n,bound_rhs,interior_fraction\n");
        for l in &self.levels {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                l.n, l.component_count, l.z, l.bound_rhs, l.interior_fraction
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf::Leaf;

    #[test]
    fn n0_example() {
        let (a, b) = threshold_coefficients(0.5, 4.0, 0.1);
        assert!((a - 1.442695).abs() < 1e-6);
        assert!((b - 6.321928).abs() < 1e-6);
        assert_eq!(n0_threshold(40.0, 0.5, 4.0, 0.1).unwrap(), 12);
        assert_eq!(n0_threshold((-b / a).exp() * 0.999, 0.5, 4.0, 0.1).unwrap(), 0);
        assert!(n0_threshold(0.0, 0.5, 4.0, 0.1).is_err());
        // large δ₀: αⁿZ₀ ≤ β/(δ₀(1−α)) still holds at n₀
        let (z0, d0) = (3.0, 80.0);
        let n = n0_threshold(z0, 0.5, 4.0, d0).unwrap();
        assert!(0.5f64.powi(n as i32) * z0 <= 4.0 / (d0 * 0.5));
    }

    #[test]
    fn delta1_example() {
        let d1 = delta1(0.1, 0.5, 4.0);
        assert!((d1 - 0.003125).abs() < 1e-15);
        let beta_bar = 2.0 * 4.0 / 0.5;
        assert!((beta_bar / 0.1 * d1 - 0.5).abs() < 1e-15);
        assert!(d1 < 0.1);
    }

    #[test]
    fn slicing_cut_counts() {
        let dp = delta_prime(0.1, 0.5, 1);
        assert!((dp - 0.035355).abs() < 1e-6);
        let counts: Vec<usize> = (0..OFFSET_GRID)
            .map(|j| {
                let a = dp * j as f64 / OFFSET_GRID as f64;
                (0..40).map(|k| a + k as f64 * dp).filter(|&c| c > 0.0 && c < 1.0).count()
            })
            .collect();
        assert!(counts.iter().all(|&c| c == 28 || c == 29));
        assert_eq!(slice_positions(1.0, dp, |_| 1.0).len(), 28);
    }

    #[test]
    fn short_component_unchanged() {
        let m = MapModel::linear_cat();
        let arc = LeafArc::new(Leaf::Line { anchor: [0.1, 0.2] }, 0.0, 0.004);
        let p = Piece { base0: 0.0, base_len: 0.004, arc, mass: 0.004 };
        let out = refine_step(&[p], 0.1, m.lambda);
        assert_eq!(out, vec![p]);
    }

    #[test]
    fn one_step_bound_uniform() {
        let m = MapModel::solenoid(0.25).unwrap();
        let arc = LeafArc::new(Leaf::Skew { history: 77 }, 0.3, 0.09);
        let f = build_filtration(&m, &arc, 0.1, 1, false).unwrap();
        let (z0, z1) = (f.levels[0].z, f.levels[1].z);
        assert!(z1 <= 0.5 * z0 + 4.0 / 0.1);
    }

    #[test]
    fn curve_slicing_matches_piece_slicing() {
        let c = UnstableCurve::straight([0.0; 3], [1.0, 0.0, 0.0], 0.0, 1.0, 1.0);
        let comps = refine_step_curve(&c, &ComponentSet::whole(0.0, 1.0), 0.1, 0.5);
        assert_eq!(comps.intervals.len(), 29);
        comps.validate().unwrap();
    }
}
