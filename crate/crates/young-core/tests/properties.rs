use std::f64::consts::TAU;

use proptest::prelude::*;
use young_core::config::RunConfig;
use young_core::filtration::build_filtration;
use young_core::geometry::{boundary_distance, curvature_estimate, iterate_components, ComponentSet, UnstableCurve};
use young_core::leaf::{Leaf, LeafArc};
use young_core::maps::{cat_stable, cat_unstable, wrap_half, MapModel};
use young_core::orbit::OrbitSampler;
use young_core::pipeline::curve_corpus;
use young_core::rectangles::{bracket, canonical_rectangle, u_crossing, PushedImage, Scales, Witness};
use young_core::refinement::ChainStep;
use young_core::stats::{correlation, variance, Observable, TimeSeries};
use young_core::verify::{separation_time, Itinerary, SEPARATION_INFINITE};

fn maps() -> Vec<MapModel> {
    vec![
        MapModel::linear_cat(),
        MapModel::solenoid(0.25).unwrap(),
        MapModel::mostly_contracting(0.25, 0.5).unwrap(),
    ]
}

fn point(map: &MapModel, a: f64, b: f64, c: f64) -> [f64; 3] {
    if map.is_skew() {
        let r = b.sqrt();
        [a, r * (TAU * c).cos(), r * (TAU * c).sin()]
    } else {
        [a, b, 0.0]
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cat_scales(map: &MapModel) -> Scales {
    Scales::derive(map, 0.26, None, 0.5, 1e-6).unwrap()
}

fn torus_gap(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    wrap_half(p[0] - q[0]).hypot(wrap_half(p[1] - q[1]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn domination_is_below_lambda(m in 0usize..3, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
        let map = &maps()[m];
        let x = point(map, a, b, c);
        prop_assert!(map.domination(&x).unwrap() < map.lambda);
    }

    #[test]
    fn tangent_action_is_linear(
        m in 0usize..3, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64,
        v in prop::array::uniform3(-1.0..1.0f64), w in prop::array::uniform3(-1.0..1.0f64),
        s in -3.0..3.0f64, t in -3.0..3.0f64,
    ) {
        let map = &maps()[m];
        let x = point(map, a, b, c);
        let comb = [s * v[0] + t * w[0], s * v[1] + t * w[1], s * v[2] + t * w[2]];
        let lhs = map.tangent_action(&x, &comb).unwrap();
        let tv = map.tangent_action(&x, &v).unwrap();
        let tw = map.tangent_action(&x, &w).unwrap();
        let scale = s.abs() * norm(&tv) + t.abs() * norm(&tw) + 1.0;
        for i in 0..3 {
            prop_assert!((lhs[i] - (s * tv[i] + t * tw[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn tangent_action_matches_finite_differences(
        m in 0usize..3, a in 0.0..1.0f64, b in 0.0..0.9f64, c in 0.0..1.0f64,
        v in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let map = &maps()[m];
        let x = point(map, a, b, c);
        let v = if map.is_skew() { v } else { [v[0], v[1], 0.0] };
        let h = 1e-7;
        let fp = map.evaluate_lift(&[x[0] + h * v[0], x[1] + h * v[1], x[2] + h * v[2]]);
        let fm = map.evaluate_lift(&[x[0] - h * v[0], x[1] - h * v[1], x[2] - h * v[2]]);
        let dv = map.tangent_action(&x, &v).unwrap();
        for i in 0..3 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            prop_assert!((fd - dv[i]).abs() <= 1e-6 * (1.0 + norm(&dv)), "component {i}: {fd} vs {}", dv[i]);
        }
    }

    #[test]
    fn separation_recurses_on_equal_heads(
        head in (0usize..4, 0usize..50),
        xs in prop::collection::vec((0usize..4, 0usize..50), 0..8),
        ys in prop::collection::vec((0usize..4, 0usize..50), 0..8),
    ) {
        let step = |(rect, element): (usize, usize)| vec![ChainStep { rect, element }];
        let x: Itinerary = xs.iter().copied().map(step).collect();
        let y: Itinerary = ys.iter().copied().map(step).collect();
        prop_assert_eq!(separation_time(&x, &y), separation_time(&y, &x));
        let mut hx = vec![step(head)];
        hx.extend(x.iter().cloned());
        let mut hy = vec![step(head)];
        hy.extend(y.iter().cloned());
        let tail = separation_time(&x, &y);
        let expect = if tail == SEPARATION_INFINITE { tail } else { tail + 1 };
        prop_assert_eq!(separation_time(&hx, &hy), expect);
    }

    #[test]
    fn echo_round_trips(
        seed in any::<u64>(), m in 0usize..3, delta0 in 1.0..500.0f64, c1 in 0.05..1.0f64,
        curves in 1usize..500, n_max in 10usize..1000, eps in prop::collection::vec(0.01..0.5f64, 1..4),
    ) {
        let mut cfg = RunConfig::for_map(["linear-cat", "solenoid", "mostly-contracting"][m]);
        cfg.seed = seed;
        cfg.delta0 = delta0;
        cfg.c1 = c1;
        cfg.curves = curves;
        cfg.n_max = n_max;
        cfg.ld_epsilons = eps;
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        prop_assert_eq!(&back.echo(), &cfg.echo());
        prop_assert_eq!(back.seed, cfg.seed);
        prop_assert_eq!(back.delta0, cfg.delta0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn iteration_conserves_mass(seed in any::<u64>(), steps in 1usize..5, cuts in prop::collection::vec(0.0..1.0f64, 2..8)) {
        let map = MapModel::solenoid(0.25).unwrap();
        let mut orbit = OrbitSampler::new(&map, seed);
        orbit.step();
        let (leaf, s) = orbit.leaf();
        let arc = LeafArc::new(leaf, s, 1.0);
        let curve = UnstableCurve::from_arc(&map, &arc, 0.0, 1.0, 1.0, 1e-6).unwrap();
        let mut c = cuts.clone();
        c.sort_by(f64::total_cmp);
        let comps = ComponentSet {
            intervals: c.chunks_exact(2).filter(|p| p[1] > p[0]).map(|p| (p[0], p[1])).collect(),
            depth: 0,
        };
        let (img, out) = iterate_components(&map, &curve, &comps, steps, 1e-6, 1 << 20).unwrap();
        prop_assert!((img.total_mass() - curve.total_mass()).abs() <= 1e-12);
        prop_assert_eq!(out.depth, steps);
        for &(a, b) in &comps.intervals {
            let before: f64 = curve.profile(a, b).iter().map(|p| p.0 * p.1).sum();
            let after: f64 = img.profile(a, b).iter().map(|p| p.0 * p.1).sum();
            prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before));
        }
    }

    #[test]
    fn boundary_distance_is_one_lipschitz(seed in any::<u64>(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let map = MapModel::mostly_contracting(0.25, 0.5).unwrap();
        let mut orbit = OrbitSampler::new(&map, seed);
        orbit.step();
        let (leaf, s) = orbit.leaf();
        let curve = UnstableCurve::from_arc(&map, &LeafArc::new(leaf, s, 2.0), 0.0, 1.0, 1.0, 1e-6).unwrap();
        let comps = ComponentSet { intervals: vec![(0.1, 0.9)], depth: 0 };
        let (x, y) = (0.1 + 0.8 * u, 0.1 + 0.8 * v);
        if x > 0.1 && x < 0.9 && y > 0.1 && y < 0.9 {
            let dx = boundary_distance(&curve, &comps, x).unwrap();
            let dy = boundary_distance(&curve, &comps, y).unwrap();
            let gap = (curve.arc_position(x) - curve.arc_position(y)).abs();
            prop_assert!((dx - dy).abs() <= gap + 1e-12);
        }
    }

    #[test]
    fn leaf_curvature_is_bounded(m in 1usize..3, seed in any::<u64>(), len in 0.5..6.0f64) {
        let map = &maps()[m];
        let mut orbit = OrbitSampler::new(map, seed);
        orbit.step();
        let (leaf, s) = orbit.leaf();
        let curve = UnstableCurve::from_arc(map, &LeafArc::new(leaf, s, len), 0.0, len, 1.0, 1e-5).unwrap();
        let k = curvature_estimate(&curve);
        prop_assert!(k <= map.curvature_bound_l * 1.05 + 1e-6, "curvature {k} above {}", map.curvature_bound_l);
    }

    #[test]
    fn bracket_is_continuous(a in 0.0..1.0f64, b in 0.0..1.0f64, d in prop::array::uniform2(-1.0..1.0f64), e in prop::array::uniform2(-1.0..1.0f64)) {
        let map = MapModel::linear_cat();
        let sc = cat_scales(&map);
        let r = 0.2 * sc.delta1;
        let x = map.reduce(&[a, b, 0.0]);
        let y = map.reduce(&[a + r * d[0], b + r * d[1], 0.0]);
        let x2 = map.reduce(&[x[0] + 1e-3 * r * e[0], x[1] + 1e-3 * r * e[1], 0.0]);
        let p = bracket(&map, &x, &y, sc.delta1).unwrap();
        let p2 = bracket(&map, &x2, &y, sc.delta1).unwrap();
        prop_assert!(torus_gap(&p, &p2) <= torus_gap(&x, &x2) * (1.0 + 1e-9) + 1e-12);
        // [x, y] sits on the stable line of x and the unstable line of y
        let (u, v) = (cat_unstable(), cat_stable());
        let px = [wrap_half(p[0] - x[0]), wrap_half(p[1] - x[1])];
        let py = [wrap_half(p[0] - y[0]), wrap_half(p[1] - y[1])];
        prop_assert!((px[0] * u[0] + px[1] * u[1]).abs() < 1e-12);
        prop_assert!((py[0] * v[0] + py[1] * v[1]).abs() < 1e-12);
    }

    #[test]
    fn bracket_stays_in_rectangle(
        su in 0.0..1.0f64, sv in -1.0..1.0f64, tu in 0.0..1.0f64, tv in -1.0..1.0f64, cx in 0.0..1.0f64, cy in 0.0..1.0f64,
    ) {
        let map = MapModel::linear_cat();
        let sc = cat_scales(&map);
        let rect = canonical_rectangle(&map, &[cx, cy, 0.0], 1, &sc).unwrap();
        let w = rect.w_arc();
        let v = cat_stable();
        let base_point = |f: f64| {
            let (lo, hi) = rect.base.intervals[0];
            lo + f * (hi - lo)
        };
        let make = |f: f64, g: f64| {
            let p = w.point(&map, base_point(f));
            let r = 0.9 * g * sc.delta2;
            map.reduce(&[p[0] + r * v[0], p[1] + r * v[1], 0.0])
        };
        let (x, y) = (make(su, sv), make(tu, tv));
        prop_assert!(rect.contains(&map, &x) && rect.contains(&map, &y));
        let p = bracket(&map, &x, &y, sc.delta1).unwrap();
        prop_assert!(rect.contains(&map, &p));
    }

    #[test]
    fn crossing_is_monotone_in_the_witness(f in 0.0..0.95f64, extra in 0.0..1.0f64, shrink in 0.0..1.0f64) {
        let map = MapModel::linear_cat();
        let sc = cat_scales(&map);
        let target = canonical_rectangle(&map, &[0.3, 0.4, 0.0], 1, &sc).unwrap();
        let v = cat_stable();
        let off = f * sc.delta3;
        let anchor = [0.3 + off * v[0], 0.4 + off * v[1]];
        let arc = LeafArc::new(Leaf::Line { anchor }, -1.5 * sc.delta1, 3.0 * sc.delta1);
        let wit = Witness { offset: 1.5 * sc.delta1, clearance: 1.2 * sc.delta1, center_distance: off };
        let img = PushedImage { arc, steps: 3, witness: Some(wit) };
        let base = u_crossing(&map, &img, &target, sc.delta3).unwrap();
        prop_assert!(base.crosses);
        let stronger = Witness {
            clearance: wit.clearance + extra * sc.delta1,
            center_distance: wit.center_distance * shrink,
            ..wit
        };
        let c = u_crossing(&map, &PushedImage { witness: Some(stronger), ..img }, &target, sc.delta3).unwrap();
        prop_assert!(c.crosses);
    }

    #[test]
    fn filtration_obeys_recursion_and_keeps_mass(m in 0usize..3, seed in any::<u64>()) {
        let map = &maps()[m];
        let delta0 = if map.is_skew() { 30.0 } else { 8.0 };
        let arc = curve_corpus(map, 1, delta0, seed)[0];
        let f = build_filtration(map, &arc, delta0, 6, false).unwrap();
        for l in &f.levels {
            prop_assert!(l.z <= l.bound_rhs * (1.0 + 1e-9), "level {}: {} > {}", l.n, l.z, l.bound_rhs);
            prop_assert!((l.mass - arc.len).abs() <= 1e-9 * arc.len);
        }
    }

    #[test]
    fn coboundary_sums_stay_bounded(m in 0usize..3, seed in any::<u64>(), n in 100usize..3000) {
        let map = &maps()[m];
        let psi = Observable::Cosine { axis: if map.is_skew() { 2 } else { 1 }, k: 0.5 };
        let cob = Observable::Coboundary(Box::new(psi.clone()));
        let s = TimeSeries::generate(map, &cob, n, 100, seed);
        let mut acc = 0.0f64;
        for x in &s.values {
            acc += x;
            prop_assert!(acc.abs() <= 2.0 * psi.sup_bound(map) + 1e-9);
        }
    }
}

#[test]
fn cs_lyapunov_estimate_converges() {
    for map in maps() {
        let x = point(&map, 0.37, 0.2, 0.1);
        let a = map.cs_lyapunov_estimate(&x, 10_000).unwrap();
        let b = map.cs_lyapunov_estimate(&x, 20_000).unwrap();
        assert!((a - b).abs() < 1e-2, "{}: {a} vs {b}", map.name);
    }
}

#[test]
fn green_kubo_sum_matches_block_variance() {
    let map = MapModel::linear_cat();
    let phi = Observable::Cosine { axis: 0, k: 1.0 };
    let lags: Vec<usize> = (0..=5).collect();
    let c = correlation(&map, &phi, &phi, &lags, 200_000, 11).unwrap();
    let sigma2 = c[0].estimate + 2.0 * c[1..].iter().map(|e| e.estimate).sum::<f64>();
    let v = variance(&map, &phi, 1000, 1000, 12).unwrap();
    assert!((sigma2 - v.sigma2).abs() <= 0.1 * v.sigma2, "{sigma2} vs {}", v.sigma2);
}
