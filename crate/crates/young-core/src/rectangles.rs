//! Product-structure rectangles: brackets, s-distances, overshadowing,
//! canonical rectangles over a net of centers, and the u-crossing test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;

use crate::error::{Result, YoungError};
use crate::filtration::{build_filtration, FiltrationConstants};
use crate::geometry::{ComponentSet, UnstableCurve};
use crate::leaf::{infer_history, Leaf, LeafArc};
use crate::maps::{cat_stable, cat_unstable, wrap_half, MapModel, Point};
use crate::orbit::OrbitSampler;

/// The length scales of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub c1: f64,
    pub eta_geom: f64,
}

impl Scales {
    /// δ₁ from the filtration constants, δ₂ = δ₁/4 unless overridden,
    /// δ₃ = min(c₁δ₂, δ₁/6). The cap keeps the returned element inside V^c.
    pub fn derive(map: &MapModel, delta0: f64, delta2: Option<f64>, c1: f64, eta_geom: f64) -> Result<Self> {
        if !(delta0 > 0.0 && eta_geom > 0.0) {
            return Err(YoungError::Config("δ₀ and η_geom must be positive".into()));
        }
        let delta1 = FiltrationConstants::for_map(map, delta0).delta1;
        let delta2 = delta2.unwrap_or(delta1 / 4.0);
        if !(delta2 > 0.0 && delta2 < delta1) {
            return Err(YoungError::Config(format!("δ₂ = {delta2} must lie in (0, δ₁ = {delta1})")));
        }
        if !(c1 > 0.0 && c1 <= 1.0) {
            return Err(YoungError::Config(format!("c₁ = {c1} outside (0, 1]")));
        }
        Ok(Scales {
            delta0,
            delta1,
            delta2,
            delta3: (c1 * delta2).min(delta1 / 6.0),
            c1,
            eta_geom,
        })
    }
}

/// Unstable leaf through an attractor point and the point's leaf coordinate.
pub fn leaf_through(map: &MapModel, z: &Point) -> (Leaf, f64) {
    if map.is_skew() {
        (
            Leaf::Skew {
                history: infer_history(map, z, 64),
            },
            TAU * z[0],
        )
    } else {
        (Leaf::Line { anchor: [z[0], z[1]] }, 0.0)
    }
}

/// [x, y]: the stable disk of `x` intersected with the unstable leaf of `y`.
pub fn bracket(map: &MapModel, x: &Point, y: &Point, eps: f64) -> Result<Point> {
    let (leaf, s) = leaf_through(map, y);
    bracket_on(map, x, &leaf, s, eps)
}

/// Bracket with the unstable leaf of `y` given as `(leaf, s_y)`.
pub fn bracket_on(map: &MapModel, x: &Point, leaf: &Leaf, s_y: f64, eps: f64) -> Result<Point> {
    let y = leaf.point(map, s_y);
    let (along_u, along_s, p) = if map.is_skew() {
        let th = TAU * x[0];
        let th = th + ((s_y - th) / TAU).round() * TAU;
        let p = leaf.point(map, th);
        (th - s_y, (p[1] - x[1]).hypot(p[2] - x[2]), p)
    } else {
        let (u, v) = (cat_unstable(), cat_stable());
        let d = [wrap_half(y[0] - x[0]), wrap_half(y[1] - x[1])];
        let r = d[0] * v[0] + d[1] * v[1];
        let s = d[0] * u[0] + d[1] * u[1];
        (s, r.abs(), map.reduce(&[x[0] + r * v[0], x[1] + r * v[1], 0.0]))
    };
    if along_u.abs() > eps || along_s > eps {
        return Err(YoungError::NoBracket(format!(
            "disks of radius {eps} miss (unstable offset {along_u}, stable offset {along_s})"
        )));
    }
    Ok(p)
}

/// Distance along the stable disk of `x` (radius δ₀) to the polyline `gamma`.
pub fn s_distance_point(map: &MapModel, x: &Point, gamma: &UnstableCurve, delta0: f64) -> Result<f64> {
    const T_TOL: f64 = 1e-12;
    let mut best = f64::INFINITY;
    for w in gamma.vertices.windows(2) {
        let (a, b) = (w[0], w[1]);
        if map.is_skew() {
            let th = TAU * x[0];
            let (lo, hi) = (a[0].min(b[0]), a[0].max(b[0]));
            let k0 = ((lo - th) / TAU).ceil() as i64;
            let k1 = ((hi - th) / TAU).floor() as i64;
            for k in k0..=k1 {
                let thk = th + k as f64 * TAU;
                let f = if b[0] != a[0] { (thk - a[0]) / (b[0] - a[0]) } else { 0.0 };
                let zi = [a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])];
                best = best.min((zi[0] - x[1]).hypot(zi[1] - x[2]));
            }
        } else {
            let v = cat_stable();
            let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let xl = [m[0] + wrap_half(x[0] - m[0]), m[1] + wrap_half(x[1] - m[1])];
            let e = [b[0] - a[0], b[1] - a[1]];
            let w = [xl[0] - a[0], xl[1] - a[1]];
            // a + t·e = xl + r·v
            let det = e[0] * (-v[1]) - (-v[0]) * e[1];
            if det.abs() < 1e-300 {
                continue;
            }
            let t = (w[0] * (-v[1]) - (-v[0]) * w[1]) / det;
            let r = (e[0] * w[1] - e[1] * w[0]) / det;
            if (-T_TOL..=1.0 + T_TOL).contains(&t) {
                best = best.min(r.abs());
            }
        }
    }
    if best <= delta0 {
        Ok(best)
    } else {
        Err(YoungError::NoIntersection(format!("stable disk of radius {delta0} misses the curve")))
    }
}

/// Whether `gamma_prime` overshadows `gamma`, and the sampled sup of the
/// s-distance. Samples are the vertices and segment midpoints of `gamma`.
pub fn overshadows(map: &MapModel, gamma: &UnstableCurve, gamma_prime: &UnstableCurve, delta0: f64) -> (bool, f64) {
    let mut samples = gamma.vertices.clone();
    for w in gamma.vertices.windows(2) {
        samples.push([0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1]), 0.5 * (w[0][2] + w[1][2])]);
    }
    let mut sup: f64 = 0.0;
    for c in &samples {
        match s_distance_point(map, &map.chart_to_point(c), gamma_prime, delta0) {
            Ok(d) => sup = sup.max(d),
            Err(_) => return (false, sup),
        }
    }
    (true, sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub id: usize,
    pub center: Point,
    pub leaf: Leaf,
    pub s_center: f64,
    /// Approximant of the Cantor base, as offsets along `w_arc`.
    pub base: ComponentSet,
    pub stable_radius: f64,
    pub cs_width: f64,
    pub depth: usize,
}

impl Rectangle {
    /// W(z): the leaf arc of radius δ₁/3 about the center.
    pub fn w_arc(&self) -> LeafArc {
        let r = self.stable_radius / 3.0;
        LeafArc::new(self.leaf, self.s_center - r, 2.0 * r)
    }

    pub fn base_mass(&self) -> f64 {
        self.base.total_length()
    }

    /// Membership: the stable projection onto W(z) lands in the base within
    /// stable distance δ₂.
    pub fn contains(&self, map: &MapModel, y: &Point) -> bool {
        let w = self.w_arc();
        w.projections_within(map, y, 0.0, w.len, self.cs_width)
            .iter()
            .any(|&(s, _)| self.base.find(s).is_some())
    }
}

pub fn canonical_rectangle(map: &MapModel, z: &Point, depth: usize, scales: &Scales) -> Result<Rectangle> {
    let (leaf, s) = leaf_through(map, z);
    canonical_rectangle_on(map, 0, *z, leaf, s, depth, scales)
}

/// Rectangle over W(z) with its base approximated by the depth-`depth`
/// filtration level of W(z).
pub fn canonical_rectangle_on(
    map: &MapModel,
    id: usize,
    center: Point,
    leaf: Leaf,
    s_center: f64,
    depth: usize,
    scales: &Scales,
) -> Result<Rectangle> {
    if depth == 0 {
        return Err(YoungError::Precondition("rectangle depth must be at least 1".into()));
    }
    let r = scales.delta1 / 3.0;
    let w = LeafArc::new(leaf, s_center - r, 2.0 * r);
    let filt = build_filtration(map, &w, scales.delta0, depth, true)?;
    let pieces = filt.levels[depth].pieces.as_ref().expect("pieces kept");
    let mut intervals: Vec<(f64, f64)> = pieces.iter().map(|p| (p.base0, p.base0 + p.base_len)).collect();
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Rectangle {
        id,
        center,
        leaf,
        s_center,
        base: ComponentSet { intervals, depth },
        stable_radius: scales.delta1,
        cs_width: scales.delta2,
        depth,
    })
}

/// R restricted to the stable leaves through the base subset `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubrectangleRef {
    pub rect: usize,
    pub base: ComponentSet,
}

pub fn s_subrectangle(rect: &Rectangle, v: &ComponentSet) -> Result<SubrectangleRef> {
    const TOL: f64 = 1e-12;
    for &(a, b) in &v.intervals {
        let inside = rect.base.intervals.iter().any(|&(lo, hi)| a >= lo - TOL && b <= hi + TOL);
        if !inside {
            return Err(YoungError::Containment(format!("[{a}, {b}] is not inside the base of rectangle {}", rect.id)));
        }
    }
    Ok(SubrectangleRef {
        rect: rect.id,
        base: v.clone(),
    })
}

/// Data certifying the hypotheses of the crossing proposition for a pushed
/// component image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Offset of fⁿ(x) along the image arc.
    pub offset: f64,
    /// r(x): arc distance from fⁿ(x) to the boundary of the image component.
    pub clearance: f64,
    /// d(fⁿ(x), z′).
    pub center_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushedImage {
    pub arc: LeafArc,
    pub steps: usize,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub crosses: bool,
    /// Sampled sup of the s-distance from W(z′) to the image.
    pub gap: f64,
    /// Image offsets of the projections of the two ends of W(z′).
    pub span: (f64, f64),
}

const CROSSING_SAMPLES: usize = 17;

pub fn u_crossing_test(map: &MapModel, image: &PushedImage, target: &Rectangle, delta3: f64) -> Result<bool> {
    Ok(u_crossing(map, image, target, delta3)?.crosses)
}

/// Checks that the image overshadows W(z′) with s-distance at most δ₂ and
/// extends past both ends of W(z′).
pub fn u_crossing(map: &MapModel, image: &PushedImage, target: &Rectangle, delta3: f64) -> Result<Crossing> {
    let wit = image
        .witness
        .ok_or_else(|| YoungError::Precondition("crossing test needs a witness point".into()))?;
    if !(wit.clearance > target.stable_radius) {
        return Err(YoungError::Precondition(format!(
            "witness clearance {} does not exceed δ₁ = {}",
            wit.clearance, target.stable_radius
        )));
    }
    if !(wit.center_distance < delta3) {
        return Err(YoungError::Precondition(format!(
            "witness is {} from the target center, not within δ₃ = {delta3}",
            wit.center_distance
        )));
    }
    let w = target.w_arc();
    let tol = target.cs_width * (1.0 + 1e-9);
    let mut gap: f64 = 0.0;
    let mut span = (f64::INFINITY, f64::NEG_INFINITY);
    let mut crosses = true;
    for i in 0..CROSSING_SAMPLES {
        let off = w.len * i as f64 / (CROSSING_SAMPLES - 1) as f64;
        let y = w.point(map, off);
        let expect = wit.offset + off - w.len / 2.0;
        let (lo, hi) = ((expect - w.len).max(0.0), (expect + w.len).min(image.arc.len));
        let hit = image
            .arc
            .projections_within(map, &y, lo, hi, tol)
            .into_iter()
            .min_by(|a, b| (a.0 - expect).abs().total_cmp(&(b.0 - expect).abs()));
        match hit {
            Some((s, d)) => {
                gap = gap.max(d);
                span = (span.0.min(s), span.1.max(s));
            }
            None => crosses = false,
        }
    }
    crosses = crosses && span.0 > 0.0 && span.1 < image.arc.len;
    Ok(Crossing { crosses, gap, span })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetCenter {
    pub point: Point,
    pub leaf: Leaf,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleNet {
    pub centers: Vec<NetCenter>,
    pub rectangles: Vec<Rectangle>,
    pub delta3: f64,
    pub spacing: f64,
    pub scales: Scales,
}

/// Uniform-cell spatial hash over chart coordinates with periodic base cells.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    skew: bool,
    cell: f64,
    periodic: i64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl SpatialHash {
    pub fn new(map: &MapModel, spacing: f64) -> Self {
        let period = if map.is_skew() { TAU } else { 1.0 };
        let periodic = ((period / spacing).floor() as i64).max(1);
        SpatialHash {
            skew: map.is_skew(),
            cell: spacing,
            periodic,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &Point) -> (i64, i64, i64) {
        let n = self.periodic;
        if self.skew {
            let i = ((p[0].rem_euclid(1.0) * n as f64).floor() as i64).min(n - 1);
            (i, (p[1] / self.cell).floor() as i64, (p[2] / self.cell).floor() as i64)
        } else {
            let i = ((p[0].rem_euclid(1.0) * n as f64).floor() as i64).min(n - 1);
            let j = ((p[1].rem_euclid(1.0) * n as f64).floor() as i64).min(n - 1);
            (i, j, 0)
        }
    }

    pub fn insert(&mut self, p: &Point, idx: usize) {
        self.cells.entry(self.key(p)).or_default().push(idx);
    }

    /// Indices stored in the cells neighbouring `p`.
    pub fn neighbors(&self, p: &Point) -> Vec<usize> {
        let (i, j, k) = self.key(p);
        let n = self.periodic;
        let mut keys = HashSet::new();
        for di in -1..=1 {
            for dj in -1..=1 {
                if self.skew {
                    for dk in -1..=1 {
                        keys.insert(((i + di).rem_euclid(n), j + dj, k + dk));
                    }
                } else {
                    keys.insert(((i + di).rem_euclid(n), (j + dj).rem_euclid(n), 0));
                }
            }
        }
        let mut out: Vec<usize> = keys.iter().filter_map(|k| self.cells.get(k)).flatten().copied().collect();
        out.sort_unstable();
        out
    }
}

pub const NET_BURN_IN: usize = 10_000;

/// Greedy net over one long orbit: a sample becomes a center when no
/// existing center lies within `spacing`. Builds R(z) at `depth` per center.
pub fn build_net(map: &MapModel, scales: &Scales, spacing: f64, budget: usize, depth: usize, seed: u64) -> Result<RectangleNet> {
    if budget == 0 {
        return Err(YoungError::Sampling("net budget must be at least 1".into()));
    }
    if !(spacing > 0.0) {
        return Err(YoungError::Config(format!("net spacing {spacing} must be positive")));
    }
    let mut orbit = OrbitSampler::new(map, seed);
    for _ in 0..NET_BURN_IN {
        orbit.step();
    }
    let mut hash = SpatialHash::new(map, spacing);
    let mut centers: Vec<NetCenter> = Vec::new();
    for _ in 0..budget {
        let p = orbit.step();
        let near = hash
            .neighbors(&p)
            .into_iter()
            .any(|i| map.chart_distance(&p, &centers[i].point) < spacing);
        if !near {
            let (leaf, s) = orbit.leaf();
            hash.insert(&p, centers.len());
            centers.push(NetCenter { point: p, leaf, s });
        }
    }
    let rectangles = centers
        .iter()
        .enumerate()
        .map(|(i, c)| canonical_rectangle_on(map, i, c.point, c.leaf, c.s, depth, scales))
        .collect::<Result<Vec<_>>>()?;
    Ok(RectangleNet {
        centers,
        rectangles,
        delta3: scales.delta3,
        spacing,
        scales: *scales,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetValidation {
    pub samples: usize,
    pub covered_fraction: f64,
    pub max_distance: f64,
}

impl RectangleNet {
    /// Nearest center by chart distance, ties broken by index.
    pub fn nearest(&self, map: &MapModel, p: &Point) -> Option<(usize, f64)> {
        self.centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, map.chart_distance(p, &c.point)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Distance from fresh orbit points to the nearest center.
    pub fn validate(&self, map: &MapModel, samples: usize, seed: u64) -> NetValidation {
        let mut hash = SpatialHash::new(map, self.spacing);
        for (i, c) in self.centers.iter().enumerate() {
            hash.insert(&c.point, i);
        }
        let mut orbit = OrbitSampler::new(map, seed);
        for _ in 0..NET_BURN_IN {
            orbit.step();
        }
        let mut covered = 0usize;
        let mut max_d: f64 = 0.0;
        for _ in 0..samples {
            let p = orbit.step();
            let local = hash
                .neighbors(&p)
                .into_iter()
                .map(|i| map.chart_distance(&p, &self.centers[i].point))
                .fold(f64::INFINITY, f64::min);
            let d = if local < self.spacing {
                covered += 1;
                local
            } else {
                self.nearest(map, &p).map(|x| x.1).unwrap_or(f64::INFINITY)
            };
            max_d = max_d.max(d);
        }
        NetValidation {
            samples,
            covered_fraction: covered as f64 / samples.max(1) as f64,
            max_distance: max_d,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Largest c₁ in {1, 1/2, 1/4, …} such that every sampled pair with
/// d(z, z′) < c₁δ₂ has W^u_{δ₁/2}(z′) overshadowed by W^u_{δ₁}(z) with
/// s-distance at most δ₂.
pub fn c1_probe(map: &MapModel, samples: usize, delta1: f64, delta2: f64, seed: u64) -> Result<f64> {
    const GRID: usize = 30;
    const LEAF_SAMPLES: usize = 11;
    if samples < 100 {
        return Err(YoungError::Precondition(format!("c₁ probe needs at least 100 samples, got {samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut orbit = OrbitSampler::new(map, rng.random());
    for _ in 0..1000 {
        orbit.step();
    }
    // (distance, conclusion holds)
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(samples);
    let mut attempts = 0usize;
    while pairs.len() < samples && attempts < 1000 * samples {
        attempts += 1;
        for _ in 0..7 {
            orbit.step();
        }
        let z = orbit.point;
        let (leaf, s) = orbit.leaf();
        let (leaf2, s2) = match leaf {
            Leaf::Line { .. } => {
                let r = delta2 * rng.random::<f64>().sqrt();
                let a = TAU * rng.random::<f64>();
                let q = [z[0] + r * a.cos(), z[1] + r * a.sin()];
                (Leaf::Line { anchor: q }, 0.0)
            }
            Leaf::Skew { history } => {
                let m = rng.random_range(1..=20);
                let mask: u64 = rng.random::<u64>() << m;
                (
                    Leaf::Skew {
                        history: history ^ mask,
                    },
                    s + delta2 * (2.0 * rng.random::<f64>() - 1.0),
                )
            }
        };
        let z2 = leaf2.point(map, s2);
        let d = map.chart_distance(&z, &z2);
        if d >= delta2 {
            continue;
        }
        let big = LeafArc::new(leaf, s - delta1, 2.0 * delta1);
        let ok = (0..LEAF_SAMPLES).all(|i| {
            let off = -0.5 * delta1 + delta1 * i as f64 / (LEAF_SAMPLES - 1) as f64;
            let y = leaf2.point(map, s2 + off);
            !big.projections_within(map, &y, 0.0, big.len, delta2).is_empty()
        });
        pairs.push((d, ok));
    }
    if pairs.len() < samples {
        return Err(YoungError::Sampling(format!("only {} close pairs found", pairs.len())));
    }
    let mut c = 1.0;
    for _ in 0..GRID {
        if pairs.iter().all(|&(d, ok)| ok || d >= c * delta2) {
            return Ok(c);
        }
        c *= 0.5;
    }
    Err(YoungError::Config(format!("no c₁ down to 2^-{GRID} verifies; δ₂ = {delta2} is too large")))
}
