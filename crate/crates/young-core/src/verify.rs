//! Assembly of the Young structure on the base rectangle and numerical
//! checks of its axioms: Markov property, contraction along stable disks,
//! backward contraction along unstable leaves, bounded distortion of the
//! return map and absolute continuity of the stable holonomy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Result, YoungError};
use crate::leaf::LeafArc;
use crate::maps::{cat_stable, MapModel, Point, Vector};
use crate::rectangles::{bracket_on, RectangleNet};
use crate::refinement::{ChainStep, RectPartition, RefinedElement, Refinement};

/// Chart norm of a tangent vector in map-native coordinates.
pub fn chart_norm(map: &MapModel, v: &Vector) -> f64 {
    if map.is_skew() {
        (TAU * v[0]).hypot(v[1]).hypot(v[2])
    } else {
        v[0].hypot(v[1])
    }
}

/// Leaf tangent in map-native coordinates at arc offset `o`.
fn leaf_tangent(map: &MapModel, arc: &LeafArc, o: f64) -> Vector {
    let t = arc.leaf.tangent(map, arc.s0 + o);
    if map.is_skew() {
        [t[0] / TAU, t[1], t[2]]
    } else {
        t
    }
}

/// log of the unstable Jacobian |Df(x)v|/|v| along the leaf tangent `v`.
pub fn log_jacobian(map: &MapModel, x: &Point, v: &Vector) -> Result<f64> {
    let w = map.tangent_action(x, v)?;
    Ok((chart_norm(map, &w) / chart_norm(map, v)).ln())
}

const ORBIT_HALF_WIDTH: f64 = 1e-3;

/// f-orbit of the point at offset `o` of `arc`: points and leaf tangents
/// for `steps + 1` times. A short sub-arc around the point is carried
/// forward and re-cut every step.
pub fn leaf_orbit(map: &MapModel, arc: &LeafArc, o: f64, steps: usize) -> Vec<(Point, Vector)> {
    let mut a = arc.sub(o - ORBIT_HALF_WIDTH, o + ORBIT_HALF_WIDTH);
    let mut out = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let h = 0.5 * a.len;
        out.push((a.point(map, h), leaf_tangent(map, &a, h)));
        if j < steps {
            let f = a.forward(map);
            let h = 0.5 * f.len;
            a = f.sub(h - ORBIT_HALF_WIDTH, h + ORBIT_HALF_WIDTH);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YoungStructure {
    pub base_rect: usize,
    pub w: LeafArc,
    pub stable_radius: f64,
    pub cs_width: f64,
    pub eta_geom: f64,
    pub dim_s: usize,
    pub dim_u: usize,
    pub elements: Vec<RefinedElement>,
    /// Sampled unstable leaves of Γ^u (element images crossing R*).
    pub gamma_u: Vec<LeafArc>,
    /// Fraction of W(z*) covered by returning element bases.
    pub covered_fraction: f64,
    pub bracket_checks: usize,
    /// Sampled (γ^u, γ^s) pairs meeting in exactly one point of the manifold.
    pub single_intersections: usize,
}

fn partition_of<'p>(parts: &'p [RectPartition], rect: usize) -> &'p crate::partition::PartitionResult {
    &parts.iter().find(|p| p.rect == rect).expect("partition built").partition
}

/// Points of `gamma` on the stable disk of radius `r` at `x`, counted over
/// all lifts in the manifold.
fn intersections(map: &MapModel, gamma: &LeafArc, x: &Point, r: f64) -> usize {
    gamma.projections_within(map, x, 0.0, gamma.len, r).len()
}

pub fn assemble(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], refinement: &Refinement, samples: usize, seed: u64) -> Result<YoungStructure> {
    if refinement.samples.is_empty() {
        return Err(YoungError::Assembly("refined partition is empty".into()));
    }
    let rect = &net.rectangles[refinement.base_rect];
    let w = rect.w_arc();
    let base_part = partition_of(parts, refinement.base_rect);
    let covered_fraction = base_part.elements.iter().map(|e| e.base.1 - e.base.0).sum();
    let gamma_u: Vec<LeafArc> = refinement
        .samples
        .iter()
        .take(samples.max(1))
        .map(|e| {
            let last = e.path.last().unwrap();
            partition_of(parts, last.rect).elements[last.element].image
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bracket_checks = 0;
    let mut single = 0;
    for g in &gamma_u {
        let rel: f64 = rng.random();
        let x = w.point(map, rel * w.len);
        let expect = rel * g.len;
        let p = bracket_on(map, &x, &g.leaf, g.s0 + expect, rect.stable_radius)
            .map_err(|e| YoungError::Assembly(format!("sampled bracket failed: {e}")))?;
        map.check_domain(&p)?;
        bracket_checks += 1;
        if intersections(map, g, &x, rect.cs_width) == 1 {
            single += 1;
        }
    }
    Ok(YoungStructure {
        base_rect: refinement.base_rect,
        w,
        stable_radius: rect.stable_radius,
        cs_width: rect.cs_width,
        eta_geom: net.scales.eta_geom,
        dim_s: map.dim - map.d_u,
        dim_u: map.d_u,
        elements: refinement.samples.clone(),
        gamma_u,
        covered_fraction,
        bracket_checks,
        single_intersections: single,
    })
}

/// The element image covers `w` exactly: each sampled point of `w`
/// projects along its stable disk to the affine position on the image,
/// within `eta·|w|`.
pub fn image_matches(map: &MapModel, image: &LeafArc, w: &LeafArc, cs_width: f64, eta: f64) -> bool {
    const SAMPLES: usize = 17;
    let tol = eta * w.len;
    (0..SAMPLES).all(|i| {
        let rel = i as f64 / (SAMPLES - 1) as f64;
        let y = w.point(map, rel * w.len);
        let expect = rel * image.len;
        !image
            .projections_within(map, &y, expect - tol, expect + tol, cs_width * (1.0 + 1e-9))
            .is_empty()
    })
}

/// Image of the element after extending its base by `ext` (in units of
/// the source W(z)) on both sides; `log_factor` is the element's backward
/// contraction and `w_len` the source leaf length.
pub fn corrupt_image(image: &LeafArc, log_factor: f64, w_len: f64, ext: f64) -> LeafArc {
    let e = ext * w_len * (-log_factor).exp();
    image.sub(-e, image.len + e)
}

/// Unit stable vector at any point: the cat's stable line, or the fiber
/// direction at angle `phi` for skew products.
fn stable_vector(map: &MapModel, phi: f64) -> Vector {
    if map.is_skew() {
        [0.0, phi.cos(), phi.sin()]
    } else {
        [cat_stable()[0], cat_stable()[1], 0.0]
    }
}

/// Component of `w` transverse to the stable direction, relative to |w|.
fn stable_transverse(map: &MapModel, w: &Vector) -> f64 {
    let n = chart_norm(map, w);
    if map.is_skew() {
        (TAU * w[0]).abs() / n
    } else {
        let s = cat_stable();
        (w[0] * s[1] - w[1] * s[0]).abs() / n
    }
}

/// Largest step defect of the invariance Df E^s(x) = E^s(fx) along the orbit.
fn stable_defect(map: &MapModel, orbit: &[(Point, Vector)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, (x, _)) in orbit[..orbit.len() - 1].iter().enumerate() {
        let w = map.tangent_action(x, &stable_vector(map, k as f64))?;
        worst = worst.max(stable_transverse(map, &w));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub checked: usize,
    pub crossing_failures: usize,
    pub image_failures: usize,
    pub stable_failures: usize,
    pub max_stable_defect: f64,
    pub negative_controls: usize,
    pub negative_detected: usize,
    pub pass_rate: f64,
}

/// Every element along every sampled chain: recorded crossing, exact
/// covering of the target's W(z) (unstable containment), and invariance of
/// the stable direction along the orbit of its midpoint. Each element is
/// also re-checked with its base extended by 2η_geom, which must fail.
pub fn check_markov(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], s: &YoungStructure) -> Result<MarkovReport> {
    let mut r = MarkovReport {
        checked: 0,
        crossing_failures: 0,
        image_failures: 0,
        stable_failures: 0,
        max_stable_defect: 0.0,
        negative_controls: 0,
        negative_detected: 0,
        pass_rate: 0.0,
    };
    let mut failed = 0;
    let mut seen = std::collections::BTreeSet::new();
    for e in &s.elements {
        for step in &e.path {
            if !seen.insert((step.rect, step.element)) {
                continue;
            }
            let el = &partition_of(parts, step.rect).elements[step.element];
            let target = &net.rectangles[el.target];
            let w = target.w_arc();
            r.checked += 1;
            let mut ok = true;
            if !el.crossing_verified {
                r.crossing_failures += 1;
                ok = false;
            }
            if !image_matches(map, &el.image, &w, target.cs_width, s.eta_geom) {
                r.image_failures += 1;
                ok = false;
            }
            let src = net.rectangles[step.rect].w_arc();
            let mid = 0.5 * (el.base.0 + el.base.1) * src.len;
            let orbit = leaf_orbit(map, &src, mid, el.tau);
            let d = stable_defect(map, &orbit)?;
            r.max_stable_defect = r.max_stable_defect.max(d);
            if d > s.eta_geom {
                r.stable_failures += 1;
                ok = false;
            }
            if !ok {
                failed += 1;
            }
            r.negative_controls += 1;
            let (log_f, _) = element_factor(map, net, parts, step);
            let bad = corrupt_image(&el.image, log_f, src.len, 2.0 * s.eta_geom);
            if !image_matches(map, &bad, &w, target.cs_width, s.eta_geom) {
                r.negative_detected += 1;
            }
        }
    }
    r.pass_rate = if r.checked == 0 { 0.0 } else { (r.checked - failed) as f64 / r.checked as f64 };
    Ok(r)
}

/// A tracked point: its itinerary under the return map as refined elements.
pub type Itinerary = Vec<Vec<ChainStep>>;

pub const SEPARATION_INFINITE: usize = usize::MAX;

/// First n at which the itineraries lie in distinct elements; the sentinel
/// when they agree over the tracked depth.
pub fn separation_time(x: &Itinerary, y: &Itinerary) -> usize {
    x.iter()
        .zip(y.iter())
        .position(|(a, b)| a != b)
        .unwrap_or(SEPARATION_INFINITE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub pairs: usize,
    pub symmetric: bool,
    pub recursion_checked: usize,
    pub recursion_failures: usize,
    /// Histogram of s over the sampled pairs (index = s, last = sentinel).
    pub histogram: Vec<usize>,
}

/// Pairs of tracked points sharing `j` refined elements, `j` uniform in
/// `0..depth`, the remainders drawn independently from the sample pool.
pub fn sample_pairs(s: &YoungStructure, pairs: usize, depth: usize, seed: u64) -> Vec<(Itinerary, Itinerary, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = &s.elements;
    let draw = |rng: &mut ChaCha8Rng| pool[rng.random_range(0..pool.len())].path.clone();
    (0..pairs)
        .map(|_| {
            let j = rng.random_range(0..depth);
            let x: Itinerary = (0..depth).map(|_| draw(&mut rng)).collect();
            let mut y = x.clone();
            for item in y.iter_mut().skip(j) {
                *item = draw(&mut rng);
            }
            (x, y, j)
        })
        .collect()
}

pub fn check_separation(s: &YoungStructure, pairs: usize, depth: usize, seed: u64) -> SeparationReport {
    let sample = sample_pairs(s, pairs, depth, seed);
    let mut hist = vec![0; depth + 1];
    let mut symmetric = true;
    let (mut checked, mut failures) = (0, 0);
    for (x, y, _) in &sample {
        let st = separation_time(x, y);
        symmetric &= st == separation_time(y, x);
        hist[st.min(depth)] += 1;
        if !x.is_empty() && x[0] == y[0] {
            checked += 1;
            let shifted = separation_time(&x[1..].to_vec(), &y[1..].to_vec());
            let ok = if st == SEPARATION_INFINITE { shifted == SEPARATION_INFINITE } else { st == 1 + shifted };
            if !ok {
                failures += 1;
            }
        }
    }
    SeparationReport {
        pairs: sample.len(),
        symmetric,
        recursion_checked: checked,
        recursion_failures: failures,
        histogram: hist,
    }
}

/// Measured envelope `ratio ≤ Cβⁿ`: β = max ratio_n^{1/n}, C = max ratio_n/βⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c: f64,
    pub beta: f64,
    pub samples: usize,
}

pub fn fit_envelope(log_ratios: &[(f64, f64)]) -> Envelope {
    let lb = log_ratios
        .iter()
        .filter(|p| p.0 > 0.0)
        .map(|p| p.1 / p.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let lc = log_ratios.iter().map(|p| p.1 - lb * p.0).fold(f64::NEG_INFINITY, f64::max);
    Envelope {
        c: lc.exp(),
        beta: lb.exp(),
        samples: log_ratios.len(),
    }
}

/// Per-step positions on each source W(z) of a point whose final image sits
/// at relative position `a` of W(z*).
fn chain_positions(parts: &[RectPartition], path: &[ChainStep], a: f64) -> Vec<f64> {
    let mut p = vec![0.0; path.len()];
    let mut next = a;
    for (i, step) in path.iter().enumerate().rev() {
        let e = &partition_of(parts, step.rect).elements[step.element];
        next = e.base.0 + (e.base.1 - e.base.0) * next;
        p[i] = next;
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Per f-step envelope of stable distances.
    pub per_step: Envelope,
    /// Per return-map step envelope.
    pub per_return: Envelope,
    /// max d(f^j x, f^j y)/d(x, y) over 1 ≤ j ≤ τ.
    pub intermediate_c: f64,
    /// Largest transverse defect of Df on stable vectors.
    pub max_stable_defect: f64,
}

/// Stable pairs: the displacement along the stable disk is carried by the
/// derivative along the orbit. The stable direction field is invariant (see
/// [`check_markov`]) and the maps are linear along it, so the distance ratio
/// is the product of one-step contractions.
pub fn check_contraction(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], s: &YoungStructure, pairs: usize, depth: usize, seed: u64) -> Result<ContractionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut step_pts, mut ret_pts) = (Vec::new(), Vec::new());
    let mut intermediate: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for _ in 0..pairs {
        let phi = rng.random::<f64>() * TAU;
        let mut log_d = 0.0;
        let mut t = 0usize;
        for n in 1..=depth {
            let e = &s.elements[rng.random_range(0..s.elements.len())];
            let a: f64 = rng.random();
            let pos = chain_positions(parts, &e.path, a);
            let log_start = log_d;
            for (step, p) in e.path.iter().zip(pos) {
                let el = &partition_of(parts, step.rect).elements[step.element];
                let w = net.rectangles[step.rect].w_arc();
                let orbit = leaf_orbit(map, &w, p * w.len, el.tau);
                for (x, _) in &orbit[..orbit.len() - 1] {
                    let w = map.tangent_action(x, &stable_vector(map, phi))?;
                    defect = defect.max(stable_transverse(map, &w));
                    log_d += chart_norm(map, &w).ln();
                    t += 1;
                    step_pts.push((t as f64, log_d));
                    intermediate = intermediate.max((log_d - log_start).exp());
                }
            }
            ret_pts.push((n as f64, log_d));
        }
    }
    Ok(ContractionReport {
        per_step: fit_envelope(&step_pts),
        per_return: fit_envelope(&ret_pts),
        intermediate_c: intermediate,
        max_stable_defect: defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    /// Envelope of d(Fⁿx, Fⁿy)/d(F^s x, F^s y) against s − n.
    pub envelope: Envelope,
    /// Largest backward contraction of an f^τ element relative to λ^τ.
    pub max_factor_over_lambda_tau: f64,
    /// Elements whose stored base width is resolvable (above 1e-9).
    pub resolvable_widths: usize,
    /// Largest relative deviation of a resolvable stored width from the
    /// geometric backward factor.
    pub max_width_deviation: f64,
    /// max d(f^j x, f^j y)/d(f^τ x, f^τ y) over 1 ≤ j ≤ τ.
    pub intermediate_c: f64,
}

/// Backward contraction of one f^τ element, ln(base length / image length),
/// from the leaf lengths along its orbit, and the largest ratio of an
/// intermediate length to the final one.
fn element_factor(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], step: &ChainStep) -> (f64, f64) {
    let el = &partition_of(parts, step.rect).elements[step.element];
    let w = net.rectangles[step.rect].w_arc();
    let mid = 0.5 * (el.base.0 + el.base.1) * w.len;
    let mut a = w.sub(mid - ORBIT_HALF_WIDTH, mid + ORBIT_HALF_WIDTH);
    let mut log_f = 0.0;
    let mut logs = Vec::with_capacity(el.tau);
    for _ in 0..el.tau {
        let f = a.forward(map);
        log_f += (a.len / f.len).ln();
        logs.push(log_f);
        let h = 0.5 * f.len;
        a = f.sub(h - ORBIT_HALF_WIDTH, h + ORBIT_HALF_WIDTH);
    }
    let inter = logs.iter().map(|l| (log_f - l).exp()).fold(0.0, f64::max);
    (log_f, inter)
}

/// Unstable pairs separated at s: going back from F^s one return multiplies
/// distances by the backward contraction of the refined element.
pub fn check_expansion(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], s: &YoungStructure, pairs: usize, depth: usize, seed: u64) -> Result<ExpansionReport> {
    let mut cache: std::collections::HashMap<(usize, usize), (f64, f64)> = std::collections::HashMap::new();
    let mut factor = |step: &ChainStep| *cache.entry((step.rect, step.element)).or_insert_with(|| element_factor(map, net, parts, step));
    let mut r = ExpansionReport {
        envelope: fit_envelope(&[]),
        max_factor_over_lambda_tau: 0.0,
        resolvable_widths: 0,
        max_width_deviation: 0.0,
        intermediate_c: 0.0,
    };
    let mut pts = Vec::new();
    for (x, _, j) in &sample_pairs(s, pairs, depth, seed) {
        let mut log_d = 0.0;
        for m in (0..*j).rev() {
            log_d += x[m].iter().map(|st| factor(st).0).sum::<f64>();
            pts.push(((j - m) as f64, log_d));
        }
    }
    r.envelope = fit_envelope(&pts);
    let ln_lam = map.lambda.ln();
    for e in &s.elements {
        for step in &e.path {
            let (log_f, inter) = factor(step);
            let el = &partition_of(parts, step.rect).elements[step.element];
            r.max_factor_over_lambda_tau = r.max_factor_over_lambda_tau.max((log_f - el.tau as f64 * ln_lam).exp());
            r.intermediate_c = r.intermediate_c.max(inter);
            let width = el.base.1 - el.base.0;
            if width > 1e-9 {
                let w = net.rectangles[step.rect].w_arc();
                let geometric = log_f.exp() * el.image.len / w.len;
                r.resolvable_widths += 1;
                r.max_width_deviation = r.max_width_deviation.max((width / geometric - 1.0).abs());
            }
        }
    }
    Ok(r)
}

/// Leaf length in the chart metric between offsets `a < b` of `arc`.
pub fn leaf_length(map: &MapModel, arc: &LeafArc, a: f64, b: f64) -> f64 {
    const N: usize = 64;
    let h = (b - a) / N as f64;
    let f = |o: f64| chart_norm(map, &leaf_tangent(map, arc, o));
    let mut s = f(a) + f(b);
    for i in 1..N {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsReport {
    pub c_bound: f64,
    pub pairs: usize,
    pub max_abs_log_ratio: f64,
    /// max |log ratio| / d(F x, F y).
    pub max_ratio_over_distance: f64,
    pub violations: usize,
}

/// `L/(1 − λ)`.
pub fn gibbs_constant(map: &MapModel) -> f64 {
    map.curvature_bound_l / (1.0 - map.lambda)
}

/// Same-element unstable pairs: log ratio of the unstable Jacobians of the
/// return map against C·d(Fx, Fy).
pub fn check_gibbs(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], s: &YoungStructure, pairs: usize, seed: u64) -> Result<GibbsReport> {
    let c = gibbs_constant(map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = GibbsReport {
        c_bound: c,
        pairs,
        max_abs_log_ratio: 0.0,
        max_ratio_over_distance: 0.0,
        violations: 0,
    };
    for _ in 0..pairs {
        let e = &s.elements[rng.random_range(0..s.elements.len())];
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (a, b) = (a.min(b), a.max(b));
        let (px, py) = (chain_positions(parts, &e.path, a), chain_positions(parts, &e.path, b));
        let mut ratio = 0.0;
        for (k, step) in e.path.iter().enumerate() {
            let el = &partition_of(parts, step.rect).elements[step.element];
            let w = net.rectangles[step.rect].w_arc();
            let ox = leaf_orbit(map, &w, px[k] * w.len, el.tau);
            let oy = leaf_orbit(map, &w, py[k] * w.len, el.tau);
            for ((x, vx), (y, vy)) in ox[..el.tau].iter().zip(&oy[..el.tau]) {
                ratio += log_jacobian(map, x, vx)? - log_jacobian(map, y, vy)?;
            }
        }
        let d = leaf_length(map, &s.w, a * s.w.len, b * s.w.len);
        r.max_abs_log_ratio = r.max_abs_log_ratio.max(ratio.abs());
        if d > 0.0 {
            r.max_ratio_over_distance = r.max_ratio_over_distance.max(ratio.abs() / d);
        }
        if ratio.abs() > c * d * (1.0 + 1e-9) + 1e-12 {
            r.violations += 1;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyReport {
    pub leaves: usize,
    pub min_density: f64,
    pub max_density: f64,
    pub density_bound: f64,
    /// C′ = L·C/(1 − β) per unit initial stable distance, (C, β) the
    /// per-step stable contraction envelope.
    pub c_prime: f64,
    pub beta: f64,
    pub tail_checks: usize,
    pub tail_violations: usize,
    pub max_tail_over_bound: f64,
}

/// Orbit on the forward images of `g` matched to `xs` along stable disks:
/// the i-th point is the stable projection of `xs[i]` onto fⁱ(g).
pub fn matched_orbit(map: &MapModel, g: &LeafArc, og: f64, xs: &[(Point, Vector)]) -> Result<Vec<(Point, Vector)>> {
    let mut a = g.sub(og - ORBIT_HALF_WIDTH, og + ORBIT_HALF_WIDTH);
    let mut out = Vec::with_capacity(xs.len());
    for (i, (x, _)) in xs.iter().enumerate() {
        let c = 0.5 * a.len;
        let o = a
            .projections_within(map, x, c - 1.0, c + 1.0, 4.0)
            .into_iter()
            .min_by(|p, q| (p.0 - c).abs().total_cmp(&(q.0 - c).abs()))
            .ok_or_else(|| YoungError::NotComparable(format!("matched orbit lost at step {i}")))?
            .0;
        out.push((a.point(map, o), leaf_tangent(map, &a, o)));
        let f = a.forward(map);
        let o = o * f.len / a.len;
        a = f.sub(o - ORBIT_HALF_WIDTH, o + ORBIT_HALF_WIDTH);
    }
    Ok(out)
}

/// Holonomy from a sampled γ′ ∈ Γ^u to γ = W(z*) along stable disks: the
/// Jacobian of sampled intervals, and truncated sums of log-Jacobian
/// differences along matched orbits against C′βⁿ·d(x, x′). `contraction`
/// is the per-step stable envelope from [`check_contraction`].
pub fn check_holonomy(map: &MapModel, s: &YoungStructure, contraction: &Envelope, leaves: usize, horizon: usize) -> Result<HolonomyReport> {
    const POINTS: usize = 33;
    let c = gibbs_constant(map);
    let beta = contraction.beta;
    let c_prime = map.curvature_bound_l * contraction.c / (1.0 - beta);
    let mut r = HolonomyReport {
        leaves: 0,
        min_density: f64::INFINITY,
        max_density: 0.0,
        density_bound: c.max(1.0),
        c_prime,
        beta,
        tail_checks: 0,
        tail_violations: 0,
        max_tail_over_bound: 0.0,
    };
    let tol = s.cs_width * (1.0 + 1e-9);
    for g in s.gamma_u.iter().take(leaves) {
        let mut offs = Vec::with_capacity(POINTS);
        for i in 0..POINTS {
            let rel = i as f64 / (POINTS - 1) as f64;
            let y = g.point(map, rel * g.len);
            let expect = rel * s.w.len;
            let hit = s
                .w
                .projections_within(map, &y, expect - s.w.len, expect + s.w.len, tol)
                .into_iter()
                .min_by(|a, b| (a.0 - expect).abs().total_cmp(&(b.0 - expect).abs()))
                .ok_or_else(|| YoungError::NotComparable("leaf does not cross the base stable family".into()))?;
            offs.push((rel * g.len, hit.0, hit.1));
        }
        r.leaves += 1;
        for w in offs.windows(2) {
            let rho = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            r.min_density = r.min_density.min(rho);
            r.max_density = r.max_density.max(rho);
        }
        for &(og, ow, d0) in offs.iter().step_by(8) {
            let ox = leaf_orbit(map, &s.w, ow, horizon);
            let oy = matched_orbit(map, g, og, &ox)?;
            let terms: Vec<f64> = ox[..horizon]
                .iter()
                .zip(&oy[..horizon])
                .map(|((x, vx), (y, vy))| Ok(log_jacobian(map, x, vx)? - log_jacobian(map, y, vy)?))
                .collect::<Result<_>>()?;
            let mut tail = 0.0;
            for n in (0..horizon).rev() {
                tail += terms[n];
                let bound = c_prime * beta.powi(n as i32) * d0;
                r.tail_checks += 1;
                if bound > 0.0 {
                    r.max_tail_over_bound = r.max_tail_over_bound.max(tail.abs() / bound);
                }
                if tail.abs() > bound * (1.0 + 1e-9) + 1e-13 {
                    r.tail_violations += 1;
                }
            }
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub constant: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub checks: usize,
}

/// Lipschitz constant of the one-step log-Jacobian along unstable leaves
/// in the chart metric: `L(1 + Λ√(1 + D²))/2` with D the leaf slope bound.
pub fn distortion_constant(map: &MapModel) -> f64 {
    let d = map.leaf_slope_bound();
    0.5 * map.curvature_bound_l * (1.0 + map.max_expansion() * (1.0 + d * d).sqrt())
}

/// |log J(fⁿx) − log J(fⁿy)| ≤ C·d(fⁿx, fⁿy) for `pairs` pairs on `arc`.
pub fn distortion_check(map: &MapModel, arc: &LeafArc, n: usize, pairs: usize, seed: u64) -> Result<DistortionReport> {
    let c = distortion_constant(map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = DistortionReport {
        constant: c,
        max_ratio: 0.0,
        violations: 0,
        checks: 0,
    };
    let window = (arc.len * (1.0 / map.max_expansion()).powi(n as i32)).min(arc.len);
    for _ in 0..pairs {
        let a = rng.random::<f64>() * (arc.len - window);
        let (x, y) = (a + rng.random::<f64>() * window, a + rng.random::<f64>() * window);
        let (x, y) = (x.min(y), x.max(y));
        let ox = leaf_orbit(map, arc, x, n);
        let oy = leaf_orbit(map, arc, y, n);
        let diff = (log_jacobian(map, &ox[n].0, &ox[n].1)? - log_jacobian(map, &oy[n].0, &oy[n].1)?).abs();
        let mut img = *arc;
        for _ in 0..n {
            img = img.forward(map);
        }
        let scale = img.len / arc.len;
        let d = leaf_length(map, &img, x * scale, y * scale);
        r.checks += 1;
        if d > 0.0 {
            r.max_ratio = r.max_ratio.max(diff / d);
        }
        if diff > c * d * (1.0 + 1e-9) + 1e-13 {
            r.violations += 1;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub pairs: usize,
    /// Return-map iterates followed for (Y₂), (Y₃) and separation times.
    pub depth: usize,
    pub holonomy_leaves: usize,
    pub holonomy_horizon: usize,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            pairs: 1000,
            depth: 6,
            holonomy_leaves: 20,
            holonomy_horizon: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub map: String,
    pub markov: MarkovReport,
    pub separation: SeparationReport,
    pub contraction: ContractionReport,
    pub expansion: ExpansionReport,
    pub gibbs: GibbsReport,
    pub holonomy: HolonomyReport,
    pub distortion: DistortionReport,
    pub y1: bool,
    pub y2: bool,
    pub y3: bool,
    pub y4: bool,
    pub y5: bool,
}

pub fn verify_all(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], s: &YoungStructure, p: &VerifyParams) -> Result<AxiomReport> {
    let markov = check_markov(map, net, parts, s)?;
    let separation = check_separation(s, p.pairs, p.depth, p.seed);
    let contraction = check_contraction(map, net, parts, s, p.pairs / 10, p.depth.min(3), p.seed + 1)?;
    let expansion = check_expansion(map, net, parts, s, p.pairs, p.depth, p.seed + 2)?;
    let gibbs = check_gibbs(map, net, parts, s, p.pairs, p.seed + 3)?;
    let holonomy = check_holonomy(map, s, &contraction.per_step, p.holonomy_leaves, p.holonomy_horizon)?;
    let distortion = distortion_check(map, &s.w, 3, p.pairs, p.seed + 4)?;
    let tol = 1.0 + 1e-9;
    let y1 = markov.pass_rate == 1.0
        && markov.negative_detected == markov.negative_controls
        && separation.symmetric
        && separation.recursion_failures == 0;
    let y2 = contraction.per_step.beta < 1.0 && contraction.per_step.c <= tol && contraction.max_stable_defect <= s.eta_geom;
    let y3 = expansion.envelope.beta < 1.0 && expansion.max_factor_over_lambda_tau <= tol && expansion.intermediate_c <= tol;
    let y4 = gibbs.violations == 0 && distortion.violations == 0;
    let y5 = holonomy.tail_violations == 0
        && (holonomy.min_density - 1.0).abs() <= 1e-6
        && (holonomy.max_density - 1.0).abs() <= 1e-6;
    Ok(AxiomReport {
        map: map.name.clone(),
        markov,
        separation,
        contraction,
        expansion,
        gibbs,
        holonomy,
        distortion,
        y1,
        y2,
        y3,
        y4,
        y5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gibbs_constant_example() {
        let mut m = MapModel::linear_cat();
        m.curvature_bound_l = 2.0;
        m.lambda = 0.5;
        assert!((gibbs_constant(&m) - 4.0).abs() < 1e-15);
        assert_eq!(gibbs_constant(&MapModel::linear_cat()), 0.0);
    }

    #[test]
    fn separation_examples() {
        let s = |r, e| vec![ChainStep { rect: r, element: e }];
        let x: Itinerary = vec![s(0, 1), s(0, 2)];
        let y: Itinerary = vec![s(0, 3), s(0, 2)];
        assert_eq!(separation_time(&x, &y), 0);
        assert_eq!(separation_time(&x, &x), SEPARATION_INFINITE);
        let z: Itinerary = vec![s(0, 1), s(1, 2)];
        assert_eq!(separation_time(&x, &z), 1);
    }

    #[test]
    fn envelope_of_exact_geometric() {
        let pts: Vec<(f64, f64)> = (1..20).map(|n| (n as f64, n as f64 * 0.3f64.ln())).collect();
        let e = fit_envelope(&pts);
        assert!((e.beta - 0.3).abs() < 1e-12 && (e.c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cat_log_jacobian_is_constant() {
        let m = MapModel::linear_cat();
        let u = crate::maps::cat_unstable();
        let v = [u[0], u[1], 0.0];
        let a = log_jacobian(&m, &[0.1, 0.7, 0.0], &v).unwrap();
        let b = log_jacobian(&m, &[0.9, 0.2, 0.0], &v).unwrap();
        assert_eq!(a, b);
        assert!((a - crate::maps::CAT_MU.ln()).abs() < 1e-12);
    }
}
