//! Closed-form unstable leaves of the built-in maps.
//!
//! A cat leaf is the line `anchor + s·u`. A skew leaf is the graph
//! `θ ↦ z(θ)` over the unwrapped base angle, determined by its backward
//! branch bits (least significant bit = most recent branch):
//! `z(θ) = Σ_k P_k · ½e^{iθ_{-k}}` with `θ_{-k} = (θ_{-k+1} + 2πb_k)/2` and
//! `P_k` the product of fiber factors along the backward orbit.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::maps::{cat_stable, cat_unstable, wrap01, MapModel, Point, CAT_MU};

const SERIES_CUTOFF: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Leaf {
    Line { anchor: [f64; 2] },
    Skew { history: u64 },
}

/// Arc `[s0, s0 + len]` of a leaf, in leaf arc-length coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafArc {
    pub leaf: Leaf,
    pub s0: f64,
    pub len: f64,
}

/// Point and θ-derivative of a skew leaf.
pub fn skew_leaf_eval(map: &MapModel, history: u64, theta: f64) -> ([f64; 2], [f64; 2]) {
    let mut t = theta / TAU;
    let mut p = 1.0;
    let mut dp = 0.0;
    let mut scale = 1.0;
    let mut z = [0.0, 0.0];
    let mut dz = [0.0, 0.0];
    for k in 0..64 {
        let b = ((history >> k) & 1) as f64;
        t = 0.5 * (t + b);
        scale *= 0.5;
        let (s, c) = (TAU * t).sin_cos();
        z[0] += 0.5 * p * c;
        z[1] += 0.5 * p * s;
        // d/dθ of ½P e^{iθ_{-k}} with dθ_{-k}/dθ = 2^{-k}
        dz[0] += 0.5 * (dp * c - p * scale * s);
        dz[1] += 0.5 * (dp * s + p * scale * c);
        let l = map.fiber_factor(t);
        let dl = map.fiber_factor_dt(t) * scale / TAU;
        dp = dp * l + p * dl;
        p *= l;
        if p < SERIES_CUTOFF {
            break;
        }
    }
    (z, dz)
}

impl Leaf {
    /// Map-native point at leaf coordinate `s`, reduced to the fundamental domain.
    pub fn point(&self, map: &MapModel, s: f64) -> Point {
        map.reduce(&self.chart_to_point(&self.chart(map, s)))
    }

    /// Unreduced chart coordinates: `(x, y, 0)` on the torus, `(θ, Re z, Im z)`
    /// on the solid torus.
    pub fn chart(&self, map: &MapModel, s: f64) -> [f64; 3] {
        match *self {
            Leaf::Line { anchor } => {
                let u = cat_unstable();
                [anchor[0] + s * u[0], anchor[1] + s * u[1], 0.0]
            }
            Leaf::Skew { history } => {
                let (z, _) = skew_leaf_eval(map, history, s);
                [s, z[0], z[1]]
            }
        }
    }

    fn chart_to_point(&self, c: &[f64; 3]) -> Point {
        match self {
            Leaf::Line { .. } => *c,
            Leaf::Skew { .. } => [c[0] / TAU, c[1], c[2]],
        }
    }

    /// Unit-speed tangent in chart coordinates (skew: `(1, dz/dθ)`, not normalised).
    pub fn tangent(&self, map: &MapModel, s: f64) -> [f64; 3] {
        match *self {
            Leaf::Line { .. } => {
                let u = cat_unstable();
                [u[0], u[1], 0.0]
            }
            Leaf::Skew { history } => {
                let (_, dz) = skew_leaf_eval(map, history, s);
                [1.0, dz[0], dz[1]]
            }
        }
    }

    /// Shifts the leaf coordinate by an integer number of base turns so the
    /// returned coordinate lies in `[0, 2π)`; the point set is unchanged.
    pub fn normalize(&self, s: f64) -> (Leaf, f64) {
        match *self {
            Leaf::Line { anchor } => {
                let u = cat_unstable();
                let p = [anchor[0] + s * u[0], anchor[1] + s * u[1]];
                (
                    Leaf::Line {
                        anchor: [wrap01(p[0]), wrap01(p[1])],
                    },
                    0.0,
                )
            }
            Leaf::Skew { history } => {
                let k = (s / TAU).floor();
                let mut s2 = s - k * TAU;
                let mut k = k as i64;
                if s2 >= TAU {
                    s2 -= TAU;
                    k += 1;
                }
                (
                    Leaf::Skew {
                        history: history.wrapping_add(k as u64),
                    },
                    s2,
                )
            }
        }
    }
}

impl LeafArc {
    pub fn new(leaf: Leaf, s0: f64, len: f64) -> Self {
        let (leaf, s0) = leaf.normalize(s0);
        LeafArc { leaf, s0, len }
    }

    /// Sub-arc from offset `a` to offset `b` (measured from `s0`).
    pub fn sub(&self, a: f64, b: f64) -> LeafArc {
        LeafArc::new(self.leaf, self.s0 + a, b - a)
    }

    /// Image under one step of the map.
    pub fn forward(&self, map: &MapModel) -> LeafArc {
        match self.leaf {
            Leaf::Line { anchor } => {
                let u = cat_unstable();
                let p = [anchor[0] + self.s0 * u[0], anchor[1] + self.s0 * u[1]];
                let q = map.evaluate_lift(&[p[0], p[1], 0.0]);
                LeafArc {
                    leaf: Leaf::Line {
                        anchor: [wrap01(q[0]), wrap01(q[1])],
                    },
                    s0: 0.0,
                    len: self.len * CAT_MU,
                }
            }
            Leaf::Skew { history } => LeafArc::new(Leaf::Skew { history: history << 1 }, 2.0 * self.s0, 2.0 * self.len),
        }
    }

    pub fn point(&self, map: &MapModel, offset: f64) -> Point {
        self.leaf.point(map, self.s0 + offset)
    }

    /// Offset along this arc's leaf of the stable projection of `z`, together
    /// with the stable distance. Cat: intersection of the stable line through
    /// `z` with the leaf line, nearest lift. Skew: the leaf point over the
    /// base angle of `z`, with the lift chosen nearest to the arc.
    pub fn project(&self, map: &MapModel, z: &Point) -> (f64, f64) {
        match self.leaf {
            Leaf::Line { anchor } => {
                let u = cat_unstable();
                let v = cat_stable();
                let mid = self.s0 + 0.5 * self.len;
                let c = [anchor[0] + mid * u[0], anchor[1] + mid * u[1]];
                let w = [c[0] + (z[0] - c[0] - (z[0] - c[0]).round()), 0.0];
                let w = [w[0], c[1] + (z[1] - c[1] - (z[1] - c[1]).round())];
                let d = [w[0] - anchor[0], w[1] - anchor[1]];
                let s = d[0] * u[0] + d[1] * u[1];
                let r = d[0] * v[0] + d[1] * v[1];
                (s - self.s0, r.abs())
            }
            Leaf::Skew { history } => {
                let mid = self.s0 + 0.5 * self.len;
                let th = z[0] * TAU;
                let th = th + ((mid - th) / TAU).round() * TAU;
                let (p, _) = skew_leaf_eval(map, history, th);
                (th - self.s0, (p[0] - z[1]).hypot(p[1] - z[2]))
            }
        }
    }

    /// All lifts of `z` whose stable projection falls in `[lo, hi]` (offsets
    /// from `s0`) with stable distance below `tol`.
    pub fn projections_within(&self, map: &MapModel, z: &Point, lo: f64, hi: f64, tol: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        match self.leaf {
            Leaf::Line { anchor } => {
                let u = cat_unstable();
                let v = cat_stable();
                let a = [anchor[0] + (self.s0 + lo) * u[0], anchor[1] + (self.s0 + lo) * u[1]];
                let b = [anchor[0] + (self.s0 + hi) * u[0], anchor[1] + (self.s0 + hi) * u[1]];
                let (x0, x1) = (a[0].min(b[0]) - tol, a[0].max(b[0]) + tol);
                let (y0, y1) = (a[1].min(b[1]) - tol, a[1].max(b[1]) + tol);
                let kx0 = (x0 - z[0]).ceil() as i64;
                let kx1 = (x1 - z[0]).floor() as i64;
                let ky0 = (y0 - z[1]).ceil() as i64;
                let ky1 = (y1 - z[1]).floor() as i64;
                for kx in kx0..=kx1 {
                    for ky in ky0..=ky1 {
                        let d = [z[0] + kx as f64 - anchor[0], z[1] + ky as f64 - anchor[1]];
                        let r = d[0] * v[0] + d[1] * v[1];
                        if r.abs() >= tol {
                            continue;
                        }
                        let s = d[0] * u[0] + d[1] * u[1] - self.s0;
                        if s >= lo && s <= hi {
                            out.push((s, r.abs()));
                        }
                    }
                }
            }
            Leaf::Skew { history } => {
                let th = z[0] * TAU;
                let k0 = ((self.s0 + lo - th) / TAU).ceil() as i64;
                let k1 = ((self.s0 + hi - th) / TAU).floor() as i64;
                for k in k0..=k1 {
                    let thk = th + k as f64 * TAU;
                    let (p, _) = skew_leaf_eval(map, history, thk);
                    let d = (p[0] - z[1]).hypot(p[1] - z[2]);
                    if d < tol {
                        out.push((thk - self.s0, d));
                    }
                }
            }
        }
        out
    }
}

/// Recovers backward branch bits of an attractor point by greedy backward
/// branch choice: at each step keep the preimage whose fiber coordinate is
/// smallest. Reliable for roughly the first 26 bits; deeper bits only move
/// the leaf by the product of fiber factors, which is negligible.
pub fn infer_history(map: &MapModel, x: &Point, bits: usize) -> u64 {
    let mut t = wrap01(x[0]);
    let mut z = [x[1], x[2]];
    let mut h = 0u64;
    for k in 0..bits.min(64) {
        let mut best = (f64::INFINITY, 0u64, 0.0, [0.0, 0.0]);
        for b in 0..2u64 {
            let tp = 0.5 * (t + b as f64);
            let l = map.fiber_factor(tp);
            let (s, c) = (TAU * tp).sin_cos();
            let zp = [(z[0] - 0.5 * c) / l, (z[1] - 0.5 * s) / l];
            let r = zp[0].hypot(zp[1]);
            if r < best.0 {
                best = (r, b, tp, zp);
            }
        }
        h |= best.1 << k;
        t = best.2;
        z = best.3;
        if best.0 > 1e6 {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_leaf_is_invariant() {
        for m in [MapModel::solenoid(0.25).unwrap(), MapModel::mostly_contracting(0.25, 0.15).unwrap()] {
            let arc = LeafArc::new(Leaf::Skew { history: 0x9d3c_55aa_0f1e_7733 }, 1.3, 0.4);
            let img = arc.forward(&m);
            for k in 0..5 {
                let off = 0.1 * k as f64;
                let p = m.evaluate(&arc.point(&m, off)).unwrap();
                let q = img.point(&m, 2.0 * off);
                assert!(m.chart_distance(&p, &q) < 1e-14, "{p:?} {q:?}");
            }
        }
    }

    #[test]
    fn normalize_keeps_points() {
        let m = MapModel::mostly_contracting(0.25, 0.15).unwrap();
        let leaf = Leaf::Skew { history: 12345 };
        for s in [-3.0, 7.5, 13.0] {
            let (l2, s2) = leaf.normalize(s);
            assert!((0.0..TAU).contains(&s2));
            let d = m.chart_distance(&leaf.point(&m, s), &l2.point(&m, s2));
            assert!(d < 1e-14);
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let m = MapModel::mostly_contracting(0.25, 0.15).unwrap();
        let leaf = Leaf::Skew { history: 0xabcdef };
        let h = 1e-6;
        let t = leaf.tangent(&m, 2.0);
        let a = leaf.chart(&m, 2.0 - h);
        let b = leaf.chart(&m, 2.0 + h);
        assert!(((b[1] - a[1]) / (2.0 * h) - t[1]).abs() < 1e-7);
        assert!(((b[2] - a[2]) / (2.0 * h) - t[2]).abs() < 1e-7);
    }

    #[test]
    fn history_inference_recovers_leaf() {
        let m = MapModel::solenoid(0.25).unwrap();
        let leaf = Leaf::Skew { history: 0x1234_5678_9abc_def1 };
        let x = leaf.point(&m, 2.5);
        let h = infer_history(&m, &x, 64);
        let y = Leaf::Skew { history: h }.point(&m, 2.5);
        assert!(m.chart_distance(&x, &y) < 1e-12);
    }

    #[test]
    fn cat_projection_is_stable_intersection() {
        let m = MapModel::linear_cat();
        let arc = LeafArc::new(Leaf::Line { anchor: [0.02, 0.0] }, -0.1, 0.2);
        let (off, d) = arc.project(&m, &[0.0, 0.0, 0.0]);
        let p = arc.point(&m, off);
        assert!((p[0] - 0.0055279).abs() < 1e-6 && (p[1] - (1.0 - 0.0089443)).abs() < 1e-6);
        assert!((d - (p[0].powi(2) + (p[1] - 1.0).powi(2)).sqrt()).abs() < 1e-12);
    }
}
