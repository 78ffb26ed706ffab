//! Measured unstable curves (d_u = 1), component sets, boundary distances
//! and the Z statistic.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Result, YoungError};
use crate::leaf::LeafArc;
use crate::maps::MapModel;

/// How arc length is measured along a polyline in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcMetric {
    /// Euclidean chord length.
    Chart,
    /// Difference of the first chart coordinate (base angle of a skew leaf).
    BaseAngle,
}

impl ArcMetric {
    pub fn for_map(map: &MapModel) -> Self {
        if map.is_skew() {
            ArcMetric::BaseAngle
        } else {
            ArcMetric::Chart
        }
    }

    pub fn seg(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        match self {
            ArcMetric::Chart => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt(),
            ArcMetric::BaseAngle => (b[0] - a[0]).abs(),
        }
    }
}

/// Polyline in chart coordinates with a monotone base parameter per vertex
/// and, per segment, the density of tracked mass relative to the base
/// parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableCurve {
    pub vertices: Vec<[f64; 3]>,
    pub base_param: Vec<f64>,
    pub mass_density: Vec<f64>,
    pub depth: usize,
    pub metric: ArcMetric,
}

/// Disjoint open intervals of the base parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub intervals: Vec<(f64, f64)>,
    pub depth: usize,
}

/// Image of one component as consecutive `(arc length, mass per unit arc length)` pieces.
pub type Profile = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub diameter: f64,
    pub curvature: f64,
    pub violations: Vec<String>,
}

fn chart_step(map: &MapModel, c: &[f64; 3]) -> [f64; 3] {
    if map.is_skew() {
        let y = map.evaluate_lift(&[c[0] / TAU, c[1], c[2]]);
        [y[0] * TAU, y[1], y[2]]
    } else {
        map.evaluate_lift(c)
    }
}

fn mid(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl ComponentSet {
    pub fn whole(lo: f64, hi: f64) -> Self {
        ComponentSet {
            intervals: vec![(lo, hi)],
            depth: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.intervals.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(YoungError::Precondition(format!("intervals {:?} and {:?} overlap", w[0], w[1])));
            }
        }
        if let Some(iv) = self.intervals.iter().find(|iv| !(iv.1 > iv.0)) {
            return Err(YoungError::Precondition(format!("empty interval {iv:?}")));
        }
        Ok(())
    }

    pub fn find(&self, s: f64) -> Option<usize> {
        let i = self.intervals.partition_point(|iv| iv.1 < s);
        (i < self.intervals.len() && self.intervals[i].0 <= s).then_some(i)
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.1 - iv.0).sum()
    }
}

impl UnstableCurve {
    /// Samples a leaf arc with vertices refined until every chord is within
    /// `eta` (sagitta) of the leaf. Uniform base density `density` over
    /// `[base0, base0 + base_len]`.
    pub fn from_arc(map: &MapModel, arc: &LeafArc, base0: f64, base_len: f64, density: f64, eta: f64) -> Result<Self> {
        const MAX_VERTICES: usize = 1 << 20;
        let mut ss = vec![0.0, arc.len];
        let mut pts = vec![arc.leaf.chart(map, arc.s0), arc.leaf.chart(map, arc.s0 + arc.len)];
        let mut i = 0;
        while i + 1 < ss.len() {
            let sm = 0.5 * (ss[i] + ss[i + 1]);
            let pm = arc.leaf.chart(map, arc.s0 + sm);
            if dist(&pm, &mid(&pts[i], &pts[i + 1])) > eta && ss[i + 1] - ss[i] > 1e-12 {
                ss.insert(i + 1, sm);
                pts.insert(i + 1, pm);
                if ss.len() > MAX_VERTICES {
                    return Err(YoungError::Resource("leaf sampling exceeded the vertex budget".into()));
                }
            } else {
                i += 1;
            }
        }
        let n = ss.len();
        Ok(UnstableCurve {
            base_param: ss.iter().map(|s| base0 + base_len * s / arc.len).collect(),
            vertices: pts,
            mass_density: vec![density; n - 1],
            depth: 0,
            metric: ArcMetric::for_map(map),
        })
    }

    pub fn straight(a: [f64; 3], b: [f64; 3], base0: f64, base1: f64, density: f64) -> Self {
        UnstableCurve {
            vertices: vec![a, b],
            base_param: vec![base0, base1],
            mass_density: vec![density],
            depth: 0,
            metric: ArcMetric::Chart,
        }
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.vertices.windows(2).map(|w| self.metric.seg(&w[0], &w[1])).collect()
    }

    pub fn arc_length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_density
            .iter()
            .zip(self.base_param.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }

    /// Arc position (from the first vertex) of base parameter `s`.
    pub fn arc_position(&self, s: f64) -> f64 {
        let lens = self.segment_lengths();
        let mut acc = 0.0;
        for (i, w) in self.base_param.windows(2).enumerate() {
            if s <= w[1] || i + 1 == lens.len() {
                let f = ((s - w[0]) / (w[1] - w[0])).clamp(0.0, 1.0);
                return acc + f * lens[i];
            }
            acc += lens[i];
        }
        acc
    }

    /// Image profile of the base interval `[a, b]`.
    pub fn profile(&self, a: f64, b: f64) -> Profile {
        let lens = self.segment_lengths();
        let mut out = Vec::new();
        for (i, w) in self.base_param.windows(2).enumerate() {
            let lo = a.max(w[0]);
            let hi = b.min(w[1]);
            if hi > lo {
                let db = w[1] - w[0];
                let len = lens[i] * (hi - lo) / db;
                let rho = if lens[i] > 0.0 { self.mass_density[i] * db / lens[i] } else { 0.0 };
                out.push((len, rho));
            }
        }
        out
    }

    /// CSV rows: base_param, chart coordinates, density of the following segment.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("base_param,c0,c1,c2,density\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let d = self.mass_density.get(i).copied().unwrap_or(f64::NAN);
            s.push_str(&format!("{},{},{},{},{}\n", self.base_param[i], v[0], v[1], v[2], d));
        }
        s
    }
}

pub fn admissibility_check(curve: &UnstableCurve, delta0: f64, l: f64) -> Admissibility {
    let diameter = curve.arc_length();
    let curvature = curvature_estimate(curve);
    let mut violations = Vec::new();
    if curve.vertices.is_empty() {
        violations.push("empty curve".to_string());
    }
    if diameter > delta0 {
        violations.push(format!("diameter {diameter} exceeds {delta0}"));
    }
    if curvature > l + 1e-9 {
        violations.push(format!("curvature {curvature} exceeds {l}"));
    }
    Admissibility {
        admissible: violations.is_empty(),
        diameter,
        curvature,
        violations,
    }
}

/// Maximum inverse circumradius over consecutive vertex triples.
pub fn curvature_estimate(curve: &UnstableCurve) -> f64 {
    let mut k: f64 = 0.0;
    for w in curve.vertices.windows(3) {
        let a = dist(&w[0], &w[1]);
        let b = dist(&w[1], &w[2]);
        let c = dist(&w[0], &w[2]);
        let u = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
        let v = [w[2][0] - w[0][0], w[2][1] - w[0][1], w[2][2] - w[0][2]];
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let twice_area = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let denom = a * b * c;
        if denom > 0.0 {
            k = k.max(2.0 * twice_area / denom);
        }
    }
    k
}

/// Arc distance from the image of `s` to the nearer end of its component's image.
pub fn boundary_distance(curve: &UnstableCurve, components: &ComponentSet, s: f64) -> Result<f64> {
    let i = components.find(s).ok_or(YoungError::NotInComponent(s))?;
    let (a, b) = components.intervals[i];
    let p = curve.arc_position(s);
    Ok((p - curve.arc_position(a)).min(curve.arc_position(b) - p))
}

/// Z statistic of the component images of `curve`, normalised by the mass of
/// the whole curve.
pub fn z_statistic(curve: &UnstableCurve, components: &ComponentSet) -> Result<f64> {
    let profiles: Vec<Profile> = components.intervals.iter().map(|&(a, b)| curve.profile(a, b)).collect();
    z_from_profiles(&profiles, curve.total_mass())
}

/// Piecewise-linear mass function `M(ε) = m{r < ε}` as slope-change events.
fn slope_events(profiles: &[Profile]) -> (f64, Vec<(f64, f64)>) {
    let mut initial = 0.0;
    let mut events = Vec::new();
    for prof in profiles {
        let total: f64 = prof.iter().map(|p| p.0).sum();
        if total <= 0.0 {
            continue;
        }
        let half = 0.5 * total;
        for side in 0..2 {
            let it: Box<dyn Iterator<Item = &(f64, f64)>> = if side == 0 {
                Box::new(prof.iter())
            } else {
                Box::new(prof.iter().rev())
            };
            let mut pos = 0.0;
            let mut cur: Option<f64> = None;
            for &(len, rho) in it {
                if pos >= half {
                    break;
                }
                match cur {
                    None => initial += rho,
                    Some(prev) => events.push((pos, rho - prev)),
                }
                cur = Some(rho);
                pos += len;
            }
            if let Some(prev) = cur {
                events.push((half, -prev));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    (initial, events)
}

/// Mass of points at arc distance `< eps` from their component boundary.
pub fn mass_within(profiles: &[Profile], eps: f64) -> f64 {
    let (mut slope, events) = slope_events(profiles);
    let mut m = 0.0;
    let mut x = 0.0;
    for (pos, ds) in events {
        if pos >= eps {
            break;
        }
        m += slope * (pos - x);
        x = pos;
        slope += ds;
    }
    m + slope * (eps - x).max(0.0)
}

/// Exact `sup_ε m{r < ε}/(ε·m_ref)`: the ratio is monotone between
/// breakpoints, so the supremum is attained at a breakpoint or as ε → 0.
pub fn z_from_profiles(profiles: &[Profile], reference_mass: f64) -> Result<f64> {
    if !(reference_mass > 0.0) {
        return Err(YoungError::UndefinedStatistic("reference mass is zero".into()));
    }
    if profiles.is_empty() {
        return Err(YoungError::UndefinedStatistic("no components".into()));
    }
    let (mut slope, events) = slope_events(profiles);
    let mut best = slope;
    let mut m = 0.0;
    let mut x = 0.0;
    for (pos, ds) in events {
        m += slope * (pos - x);
        x = pos;
        slope += ds;
        if pos > 0.0 {
            best = best.max(m / pos);
        }
    }
    Ok(best / reference_mass)
}

/// Pushes every component forward `steps` times, re-sampling segments whose
/// image midpoint strays more than `eta` from the image chord. Base labels
/// and base densities are carried unchanged, so mass is conserved.
pub fn iterate_components(
    map: &MapModel,
    curve: &UnstableCurve,
    components: &ComponentSet,
    steps: usize,
    eta: f64,
    vertex_budget: usize,
) -> Result<(UnstableCurve, ComponentSet)> {
    let mut cur = curve.clone();
    for _ in 0..steps {
        let mut verts = vec![cur.vertices[0]];
        let mut images = vec![chart_step(map, &cur.vertices[0])];
        let mut base = vec![cur.base_param[0]];
        let mut dens = Vec::new();
        for i in 0..cur.vertices.len() - 1 {
            let mut stack = vec![(cur.vertices[i + 1], chart_step(map, &cur.vertices[i + 1]), cur.base_param[i + 1])];
            while let Some((b, fb, sb)) = stack.pop() {
                let a = *verts.last().unwrap();
                let fa = *images.last().unwrap();
                let sa = *base.last().unwrap();
                let m = mid(&a, &b);
                let fm = chart_step(map, &m);
                if dist(&fm, &mid(&fa, &fb)) > eta && dist(&a, &b) > 1e-13 {
                    stack.push((b, fb, sb));
                    stack.push((m, fm, 0.5 * (sa + sb)));
                } else {
                    verts.push(b);
                    images.push(fb);
                    base.push(sb);
                    dens.push(cur.mass_density[i]);
                }
                if images.len() > vertex_budget {
                    return Err(YoungError::Resource(format!(
                        "pushforward needs more than {vertex_budget} vertices"
                    )));
                }
            }
        }
        let shift = deck_shift(map, &images[0]);
        for p in images.iter_mut() {
            p[0] -= shift[0];
            p[1] -= shift[1];
        }
        cur = UnstableCurve {
            vertices: images,
            base_param: base,
            mass_density: dens,
            depth: cur.depth + 1,
            metric: cur.metric,
        };
    }
    let comps = ComponentSet {
        intervals: components.intervals.clone(),
        depth: components.depth + steps,
    };
    Ok((cur, comps))
}

fn deck_shift(map: &MapModel, p: &[f64; 3]) -> [f64; 2] {
    if map.is_skew() {
        [(p[0] / TAU).floor() * TAU, 0.0]
    } else {
        [p[0].floor(), p[1].floor()]
    }
}
