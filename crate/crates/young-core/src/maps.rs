//! Built-in partially hyperbolic maps: the linear cat map on T² and two
//! skew products over angle doubling on the solid torus S¹×D².
//!
//! Points are `[f64; 3]`. On the torus the layout is `(x, y, 0)`; on the
//! solid torus it is `(t, Re z, Im z)` with base coordinate `t ∈ [0, 1)`.
//! Along unstable leaves of the skew products, arc length is measured by
//! the base angle `θ = 2πt`, which makes the unstable expansion exactly 2.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Result, YoungError};

pub type Point = [f64; 3];
pub type Vector = [f64; 3];

pub const GOLDEN: f64 = 1.618_033_988_749_895;
/// Leading eigenvalue of the cat matrix, (3+√5)/2.
pub const CAT_MU: f64 = 2.618_033_988_749_895;
const DEFAULT_SKEW_LAMBDA: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapKind {
    LinearCat,
    Solenoid { lambda_c: f64 },
    MostlyContracting { lambda_c: f64, kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub kind: MapKind,
    pub name: String,
    pub dim: usize,
    pub d_u: usize,
    pub lambda: f64,
    pub curvature_bound_l: f64,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StableDisk {
    Point(Point),
    Segment {
        center: Point,
        direction: [f64; 2],
        half_length: f64,
    },
    FiberDisk {
        t: f64,
        center: [f64; 2],
        radius: f64,
    },
}

/// Unit unstable eigenvector of the cat matrix.
pub fn cat_unstable() -> [f64; 2] {
    let g = GOLDEN - 1.0;
    let n = (1.0 + g * g).sqrt();
    [1.0 / n, g / n]
}

/// Unit stable eigenvector of the cat matrix.
pub fn cat_stable() -> [f64; 2] {
    let n = (1.0 + GOLDEN * GOLDEN).sqrt();
    [1.0 / n, -GOLDEN / n]
}

pub fn wrap01(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed representative of `x` modulo 1 in `[-1/2, 1/2)`.
pub fn wrap_half(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

impl MapModel {
    pub fn linear_cat() -> Self {
        MapModel {
            kind: MapKind::LinearCat,
            name: "linear-cat".into(),
            dim: 2,
            d_u: 1,
            lambda: 1.0 / CAT_MU,
            curvature_bound_l: 0.0,
            domain: "T2".into(),
        }
    }

    pub fn solenoid(lambda_c: f64) -> Result<Self> {
        if !(lambda_c > 0.0 && lambda_c < 0.5) {
            return Err(YoungError::Config(format!(
                "solenoid fiber factor {lambda_c} outside (0, 1/2)"
            )));
        }
        let mut m = MapModel {
            kind: MapKind::Solenoid { lambda_c },
            name: "solenoid".into(),
            dim: 3,
            d_u: 1,
            lambda: DEFAULT_SKEW_LAMBDA,
            curvature_bound_l: 0.0,
            domain: "S1xD2".into(),
        };
        m.curvature_bound_l = m.skew_curvature_bound();
        Ok(m)
    }

    /// Variable fiber contraction `λ_c(1 + κ cos 2πt)`. Rejected unless the
    /// fiber stays inside the unit disk and sampled central exponents are
    /// negative.
    pub fn mostly_contracting(lambda_c: f64, kappa: f64) -> Result<Self> {
        if !(lambda_c > 0.0 && (0.0..1.0).contains(&kappa) && lambda_c * (1.0 + kappa) < 0.5) {
            return Err(YoungError::Config(format!(
                "mostly-contracting parameters (λ_c={lambda_c}, κ={kappa}) do not keep the fiber disk invariant"
            )));
        }
        let mut m = MapModel {
            kind: MapKind::MostlyContracting { lambda_c, kappa },
            name: "mostly-contracting".into(),
            dim: 3,
            d_u: 1,
            lambda: DEFAULT_SKEW_LAMBDA,
            curvature_bound_l: 0.0,
            domain: "S1xD2".into(),
        };
        m.curvature_bound_l = m.skew_curvature_bound();
        let worst = m.h3_test(64, 4000, 0x5eed)?;
        if worst >= 0.0 {
            return Err(YoungError::Config(format!(
                "central exponent estimate {worst} is not negative"
            )));
        }
        Ok(m)
    }

    pub fn by_name(name: &str, lambda_c: f64, kappa: f64) -> Result<Self> {
        match name {
            "linear-cat" => Ok(Self::linear_cat()),
            "solenoid" => Self::solenoid(lambda_c),
            "mostly-contracting" => Self::mostly_contracting(lambda_c, kappa),
            other => Err(YoungError::Config(format!("unknown map {other}"))),
        }
    }

    pub fn is_skew(&self) -> bool {
        !matches!(self.kind, MapKind::LinearCat)
    }

    fn skew_params(&self) -> (f64, f64) {
        match self.kind {
            MapKind::LinearCat => (0.0, 0.0),
            MapKind::Solenoid { lambda_c } => (lambda_c, 0.0),
            MapKind::MostlyContracting { lambda_c, kappa } => (lambda_c, kappa),
        }
    }

    /// Fiber contraction factor at base coordinate `t`.
    pub fn fiber_factor(&self, t: f64) -> f64 {
        let (lc, k) = self.skew_params();
        if k == 0.0 {
            lc
        } else {
            lc * (1.0 + k * (TAU * t).cos())
        }
    }

    /// Derivative of the fiber factor with respect to `t`.
    pub fn fiber_factor_dt(&self, t: f64) -> f64 {
        let (lc, k) = self.skew_params();
        -lc * k * TAU * (TAU * t).sin()
    }

    pub fn fiber_factor_max(&self) -> f64 {
        let (lc, k) = self.skew_params();
        lc * (1.0 + k)
    }

    /// Bound on the leaf slope |dz/dθ| of the skew attractor.
    pub fn leaf_slope_bound(&self) -> f64 {
        if !self.is_skew() {
            return 0.0;
        }
        let (lc, k) = self.skew_params();
        (0.5 + lc * k) / (2.0 - self.fiber_factor_max())
    }

    fn skew_curvature_bound(&self) -> f64 {
        let (lc, k) = self.skew_params();
        let d = self.leaf_slope_bound();
        (0.5 + lc * k * (1.0 + 2.0 * d)) / (4.0 - self.fiber_factor_max())
    }

    /// Expansion factor along unstable leaves (constant for every built-in).
    pub fn max_expansion(&self) -> f64 {
        if self.is_skew() {
            2.0
        } else {
            CAT_MU
        }
    }

    /// Slicing contraction `min(λ, 1/Λ)`: pieces cut at this scale map to
    /// admissible disks.
    pub fn lambda_s(&self) -> f64 {
        self.lambda.min(1.0 / self.max_expansion())
    }

    /// Per-step contraction bound along the central-stable direction.
    pub fn stable_contraction(&self) -> f64 {
        if self.is_skew() {
            self.fiber_factor_max()
        } else {
            1.0 / CAT_MU
        }
    }

    pub fn check_domain(&self, x: &Point) -> Result<()> {
        if x.iter().any(|c| !c.is_finite()) {
            return Err(YoungError::Domain(format!("non-finite point {x:?}")));
        }
        if self.is_skew() && x[1].hypot(x[2]) > 1.0 + 1e-12 {
            return Err(YoungError::Domain(format!("fiber coordinate of {x:?} leaves the unit disk")));
        }
        Ok(())
    }

    /// f(x) reduced to the fundamental domain.
    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        self.check_domain(x)?;
        let y = self.evaluate_lift(x);
        Ok(self.reduce(&y))
    }

    /// f on the universal cover of the base (no reduction mod 1).
    pub fn evaluate_lift(&self, x: &Point) -> Point {
        match self.kind {
            MapKind::LinearCat => [2.0 * x[0] + x[1], x[0] + x[1], 0.0],
            _ => {
                let l = self.fiber_factor(x[0]);
                let (s, c) = (TAU * x[0]).sin_cos();
                [2.0 * x[0], l * x[1] + 0.5 * c, l * x[2] + 0.5 * s]
            }
        }
    }

    /// Reduced map-native point of chart coordinates.
    pub fn chart_to_point(&self, c: &[f64; 3]) -> Point {
        if self.is_skew() {
            self.reduce(&[c[0] / TAU, c[1], c[2]])
        } else {
            self.reduce(c)
        }
    }

    pub fn reduce(&self, x: &Point) -> Point {
        match self.kind {
            MapKind::LinearCat => [wrap01(x[0]), wrap01(x[1]), 0.0],
            _ => [wrap01(x[0]), x[1], x[2]],
        }
    }

    /// Df(x)v.
    pub fn tangent_action(&self, x: &Point, v: &Vector) -> Result<Vector> {
        self.check_domain(x)?;
        Ok(match self.kind {
            MapKind::LinearCat => [2.0 * v[0] + v[1], v[0] + v[1], 0.0],
            _ => {
                let l = self.fiber_factor(x[0]);
                let dl = self.fiber_factor_dt(x[0]);
                let (s, c) = (TAU * x[0]).sin_cos();
                [
                    2.0 * v[0],
                    l * v[1] + (dl * x[1] - PI * s) * v[0],
                    l * v[2] + (dl * x[2] + PI * c) * v[0],
                ]
            }
        })
    }

    /// Expansion of Df(x) along E^{uu}_x.
    pub fn unstable_expansion(&self, x: &Point) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.max_expansion())
    }

    /// ‖Df|E^{cs}‖·‖Df^{-1}|E^{uu}‖ at x.
    pub fn domination(&self, x: &Point) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self.kind {
            MapKind::LinearCat => 1.0 / (CAT_MU * CAT_MU),
            _ => self.fiber_factor(x[0]) / 2.0,
        })
    }

    pub fn stable_disk(&self, x: &Point, radius: f64) -> Result<StableDisk> {
        self.check_domain(x)?;
        if !(radius >= 0.0) {
            return Err(YoungError::Precondition(format!("negative radius {radius}")));
        }
        if radius == 0.0 {
            return Ok(StableDisk::Point(*x));
        }
        Ok(match self.kind {
            MapKind::LinearCat => StableDisk::Segment {
                center: *x,
                direction: cat_stable(),
                half_length: radius,
            },
            _ => StableDisk::FiberDisk {
                t: x[0],
                center: [x[1], x[2]],
                radius,
            },
        })
    }

    /// (1/n)·log‖Dfⁿ|E^{cs}_x‖ accumulated as a running log-sum.
    pub fn cs_lyapunov_estimate(&self, x: &Point, n: usize) -> Result<f64> {
        self.check_domain(x)?;
        if n == 0 {
            return Err(YoungError::Precondition("n must be at least 1".into()));
        }
        if !self.is_skew() {
            return Ok(-CAT_MU.ln());
        }
        let mut base = BaseOrbit::from_point(x);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += self.fiber_factor(base.t()).ln();
            base.step();
        }
        Ok(acc / n as f64)
    }

    /// Largest central exponent estimate over Lebesgue-random base points.
    pub fn h3_test(&self, samples: usize, n: usize, seed: u64) -> Result<f64> {
        let mut s = seed;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let t = (splitmix(&mut s) >> 11) as f64 / (1u64 << 53) as f64;
            worst = worst.max(self.cs_lyapunov_estimate(&[t, 0.0, 0.0], n)?);
        }
        Ok(worst)
    }

    /// Chart distance: flat torus metric, or `sqrt((2πΔt)² + |Δz|²)` with Δt
    /// taken modulo 1.
    pub fn chart_distance(&self, p: &Point, q: &Point) -> f64 {
        match self.kind {
            MapKind::LinearCat => wrap_half(p[0] - q[0]).hypot(wrap_half(p[1] - q[1])),
            _ => {
                let dth = TAU * wrap_half(p[0] - q[0]);
                (dth * dth + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            }
        }
    }
}

pub fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Angle-doubling base orbit in 64-bit fixed point. Each step shifts in a
/// pseudo-random low bit so orbits do not collapse onto 0 the way repeated
/// f64 doubling does; the bit shifted out is the branch of the step.
#[derive(Debug, Clone)]
pub struct BaseOrbit {
    pub state: u64,
    pub history: u64,
    bits: u64,
}

impl BaseOrbit {
    pub fn new(state: u64, seed: u64) -> Self {
        BaseOrbit {
            state,
            history: 0,
            bits: seed,
        }
    }

    pub fn from_point(x: &Point) -> Self {
        let t = wrap01(x[0]);
        let state = (t * 18_446_744_073_709_551_616.0) as u64;
        let seed = x[0].to_bits() ^ x[1].to_bits().rotate_left(21) ^ x[2].to_bits().rotate_left(42);
        BaseOrbit::new(state, seed)
    }

    pub fn t(&self) -> f64 {
        (self.state >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Advances one doubling step and returns the branch bit.
    pub fn step(&mut self) -> u64 {
        let bit = self.state >> 63;
        let fresh = splitmix(&mut self.bits) & 1;
        self.state = (self.state << 1) | fresh;
        self.history = (self.history << 1) | bit;
        bit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol() -> MapModel {
        MapModel::solenoid(0.25).unwrap()
    }

    #[test]
    fn cat_fixed_point_and_quarter_point() {
        let m = MapModel::linear_cat();
        assert_eq!(m.evaluate(&[0.0, 0.0, 0.0]).unwrap(), [0.0, 0.0, 0.0]);
        let y = m.evaluate(&[0.25, 0.25, 0.0]).unwrap();
        assert!((y[0] - 0.75).abs() < 1e-15 && (y[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn solenoid_origin_maps_to_half() {
        let y = sol().evaluate(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, [0.0, 0.5, 0.0]);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(sol().evaluate(&[0.1, 1.5, 0.0]), Err(YoungError::Domain(_))));
        assert!(matches!(
            MapModel::linear_cat().evaluate(&[f64::NAN, 0.0, 0.0]),
            Err(YoungError::Domain(_))
        ));
    }

    #[test]
    fn cat_unstable_eigenpair() {
        let m = MapModel::linear_cat();
        let g = GOLDEN - 1.0;
        let v = [1.0, g, 0.0];
        let w = m.tangent_action(&[0.3, 0.7, 0.0], &v).unwrap();
        assert!((w[0] - CAT_MU).abs() < 1e-12 && (w[1] - CAT_MU * g).abs() < 1e-12);
        assert_eq!(m.tangent_action(&[0.3, 0.7, 0.0], &[0.0; 3]).unwrap(), [0.0; 3]);
        assert!((m.unstable_expansion(&[0.1, 0.2, 0.0]).unwrap() - 2.618034).abs() < 1e-6);
    }

    #[test]
    fn solenoid_base_vector_doubles() {
        let w = sol().tangent_action(&[0.3, 0.1, 0.2], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(w[0], 2.0);
        assert_eq!(sol().unstable_expansion(&[0.3, 0.1, 0.2]).unwrap(), 2.0);
    }

    #[test]
    fn stable_disks() {
        let m = MapModel::linear_cat();
        match m.stable_disk(&[0.0; 3], 0.1).unwrap() {
            StableDisk::Segment { direction, half_length, .. } => {
                assert!((direction[1] / direction[0] + GOLDEN).abs() < 1e-12);
                assert_eq!(half_length, 0.1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let x = [0.2, 0.1, -0.3];
        assert_eq!(
            sol().stable_disk(&x, 0.05).unwrap(),
            StableDisk::FiberDisk { t: 0.2, center: [0.1, -0.3], radius: 0.05 }
        );
        assert_eq!(sol().stable_disk(&x, 0.0).unwrap(), StableDisk::Point(x));
    }

    #[test]
    fn central_exponents() {
        let x = [0.37, 0.1, 0.0];
        assert!((sol().cs_lyapunov_estimate(&x, 500).unwrap() - 0.25f64.ln()).abs() < 1e-12);
        let cat = MapModel::linear_cat();
        assert!((cat.cs_lyapunov_estimate(&x, 7).unwrap() + 0.962424).abs() < 1e-6);
        let mc0 = MapModel::mostly_contracting(0.25, 0.0).unwrap();
        assert!((mc0.cs_lyapunov_estimate(&x, 300).unwrap() - 0.25f64.ln()).abs() < 1e-12);
        assert!(sol().cs_lyapunov_estimate(&x, 0).is_err());
    }

    #[test]
    fn default_mostly_contracting_is_accepted() {
        let m = MapModel::mostly_contracting(0.25, 0.15).unwrap();
        assert!(m.h3_test(16, 2000, 1).unwrap() < 0.0);
        assert!(MapModel::mostly_contracting(0.45, 0.5).is_err());
    }

    #[test]
    fn curvature_bound_closed_form() {
        assert!((sol().curvature_bound_l - 0.125 / (1.0 - 0.0625)).abs() < 1e-15);
        assert_eq!(MapModel::linear_cat().curvature_bound_l, 0.0);
    }
}
