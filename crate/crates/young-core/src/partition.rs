//! Auxiliary partition of an unstable disk: initial growth, capture of
//! returned elements near net centers, release of the captured residual,
//! and growth back to small Z, repeated until every point has returned.
//!
//! Component images are tracked as analytic leaf arcs carrying mass. When
//! the number of live components exceeds the population cap, components are
//! resampled (capped systematic resampling within each phase stratum), which
//! keeps every stratum's mass exact and its distribution unbiased.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Result, YoungError};
use crate::filtration::{delta_prime, slice_positions, FiltrationConstants};
use crate::leaf::LeafArc;
use crate::maps::{MapModel, Point};
use crate::rectangles::{u_crossing, PushedImage, RectangleNet, Scales, SpatialHash, Witness};
use crate::tail::{tail_from_times, TailReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub n_max: usize,
    /// Cap on live free and residual components.
    pub population: usize,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            n_max: 400,
            population: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub s: usize,
    pub g: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    pub t0: usize,
    pub cycles: Vec<Cycle>,
}

impl Phases {
    /// From the event times capture, release, growth end, capture, …, capture.
    pub fn from_events(ev: &[u32]) -> Phases {
        let e = |i: usize| ev[i] as usize;
        let cycles = (0..(ev.len() - 1) / 3)
            .map(|i| Cycle {
                s: e(3 * i + 1) - e(3 * i),
                g: e(3 * i + 2) - e(3 * i + 1),
                t: e(3 * i + 3) - e(3 * i + 2),
            })
            .collect();
        Phases { t0: e(0), cycles }
    }

    /// t₀ + Σ(sᵢ + gᵢ + tᵢ).
    pub fn total(&self) -> usize {
        self.t0 + self.cycles.iter().map(|c| c.s + c.g + c.t).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionElement {
    /// Base interval on W (normalised base parameter).
    pub base: (f64, f64),
    pub mass: f64,
    pub tau: usize,
    pub target: usize,
    pub phases: Phases,
    pub depth_created: usize,
    /// Image of the element under f^τ.
    pub image: LeafArc,
    pub crossing_verified: bool,
    pub node: u32,
}

/// V^c and V^f for a capture at offset `x` of a component of length `len`.
pub fn capture_split(len: f64, x: f64, delta1: f64) -> ((f64, f64), Vec<(f64, f64)>) {
    let vc = ((x - 0.5 * delta1).max(0.0), (x + 0.5 * delta1).min(len));
    let mut vf = Vec::new();
    if vc.0 > 0.0 {
        vf.push((0.0, vc.0));
    }
    if vc.1 < len {
        vf.push((vc.1, len));
    }
    (vc, vf)
}

/// Angle constant of the splitting: cosine of the smallest angle between
/// unstable leaves and stable disks.
pub fn angle_constant(map: &MapModel) -> f64 {
    1.0 / (1.0 + map.leaf_slope_bound().powi(2)).sqrt()
}

/// Point release time: `log_{1/λ}(δ₀/ε)` when the holonomy image exists at
/// distance ε from W(z_c), else the constant `log_{1/λ}(2δ₀/(c′δ₂))`.
pub fn release_time_formula(eps: Option<f64>, lambda: f64, delta0: f64, c_prime: f64, delta2: f64) -> f64 {
    let base = (1.0 / lambda).ln();
    match eps {
        Some(e) => (delta0 / e).ln() / base,
        None => (2.0 * delta0 / (c_prime * delta2)).ln() / base,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPiece {
    pub arc: LeafArc,
    pub mass: f64,
    /// Arc distance to the returned element at the two ends.
    pub eps: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedDisk {
    pub capture_time: usize,
    pub center: Point,
    pub net_center: usize,
    pub center_distance: f64,
    /// V^c as offsets on the captured component.
    pub vc: (f64, f64),
    /// Returned element as offsets on the captured component.
    pub element: (f64, f64),
    pub residual: Vec<ResidualPiece>,
    pub crossing_verified: bool,
}

impl CapturedDisk {
    /// Release time of the point at component offset `x` in V^c.
    pub fn release_time(&self, x: f64, lambda: f64, delta0: f64) -> Result<f64> {
        if x < self.vc.0 || x > self.vc.1 {
            return Err(YoungError::NotApplicable(format!("offset {x} is outside V^c")));
        }
        if x > self.element.0 && x < self.element.1 {
            return Err(YoungError::NotApplicable(format!("offset {x} lies in the returned element")));
        }
        let eps = (self.element.0 - x).max(x - self.element.1);
        Ok(release_time_formula(Some(eps), lambda, delta0, 1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Free { ready_at: u32 },
    Residual { disk: u32, eps_a: f64, eps_b: f64, growth: f64 },
    Growing { batch: u32 },
}

#[derive(Debug, Clone)]
struct Live {
    arc: LeafArc,
    mass: f64,
    lo: f64,
    hi: f64,
    node: u32,
    events: Vec<u32>,
    state: State,
    round: Option<u32>,
}

impl Live {
    /// Captures not (yet) followed by a return.
    fn unreturned(&self) -> usize {
        self.events.len().div_ceil(3)
    }
}

/// Components released from one captured disk at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleasedBatch {
    pub disk: usize,
    pub capture_time: usize,
    pub released_at: usize,
    pub mass: f64,
    /// Z of the batch at release.
    pub z0: f64,
    /// n₀ threshold for `z0`.
    pub n0_bound: usize,
    /// Growth time g, once Z ≤ 1/(2δ₁).
    pub g: Option<usize>,
    pub returned_in_round: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub max_mass_error: f64,
    pub crossing_checks: usize,
    pub crossing_failures: usize,
    pub release_checks: usize,
    pub growth_bound_violations: usize,
    /// Mass released on the constant release-time branch.
    pub constant_branch_mass: f64,
    pub min_element_fraction_of_vc: f64,
    pub initial_mass: f64,
    pub initial_returned: f64,
    /// Per-step capture mass by time of first capture.
    pub t0_hist: Vec<f64>,
    /// By time from the end of growth to the next capture.
    pub t_hist: Vec<f64>,
    /// By release time s.
    pub s_hist: Vec<f64>,
    /// By s + g.
    pub sg_hist: Vec<f64>,
    pub resampling_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub elements: Vec<PartitionElement>,
    pub leftover: f64,
    pub leftover_free: f64,
    pub leftover_residual: f64,
    pub leftover_growing: f64,
    /// Unreturned mass by number of captures without return.
    pub leftover_by_n: Vec<f64>,
    pub total_mass: f64,
    pub n0: usize,
    pub n_max: usize,
    pub tracked_intervals: usize,
    pub captured_disks: usize,
    pub batches: Vec<ReleasedBatch>,
    pub diagnostics: BuildDiagnostics,
    /// Parent of every split-tree node (root = u32::MAX).
    pub parents: Vec<u32>,
}

pub struct Builder<'a> {
    map: &'a MapModel,
    net: Option<&'a RectangleNet>,
    hash: Option<SpatialHash>,
    consts: FiltrationConstants,
    scales: Scales,
    params: BuildParams,
    n: usize,
    n0: usize,
    live: Vec<Live>,
    elements: Vec<PartitionElement>,
    element_mass: f64,
    parents: Vec<u32>,
    batches: Vec<ReleasedBatch>,
    disks: usize,
    rng: ChaCha8Rng,
    diag: BuildDiagnostics,
    total_mass: f64,
}

impl<'a> Builder<'a> {
    fn empty(map: &'a MapModel, net: Option<&'a RectangleNet>, scales: &Scales, params: BuildParams) -> Self {
        let hash = net.map(|net| {
            let mut h = SpatialHash::new(map, net.spacing.max(scales.delta3));
            for (i, c) in net.centers.iter().enumerate() {
                h.insert(&c.point, i);
            }
            h
        });
        let hist = vec![0.0; params.n_max + 2];
        Builder {
            map,
            net,
            hash,
            consts: FiltrationConstants::for_map(map, scales.delta0),
            scales: *scales,
            params,
            n: 0,
            n0: 0,
            live: Vec::new(),
            elements: Vec::new(),
            element_mass: 0.0,
            parents: Vec::new(),
            batches: Vec::new(),
            disks: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            diag: BuildDiagnostics {
                min_element_fraction_of_vc: f64::INFINITY,
                t0_hist: hist.clone(),
                t_hist: hist.clone(),
                s_hist: hist.clone(),
                sg_hist: hist,
                ..Default::default()
            },
            total_mass: 0.0,
        }
    }

    fn node(&mut self, parent: u32) -> u32 {
        self.parents.push(parent);
        (self.parents.len() - 1) as u32
    }

    /// Builder on the admissible disk `w` with unit mass, ready at n₀.
    pub fn new(map: &'a MapModel, w: &LeafArc, net: &'a RectangleNet, params: BuildParams) -> Result<Self> {
        let scales = net.scales;
        if w.len > scales.delta0 {
            return Err(YoungError::Precondition(format!("W has length {} > δ₀ = {}", w.len, scales.delta0)));
        }
        let mut b = Builder::empty(map, Some(net), &scales, params);
        let z0 = 2.0 / w.len;
        b.n0 = b.consts.n0(z0)?;
        if params.n_max < b.n0 {
            return Err(YoungError::Precondition(format!("N_max = {} < n₀ = {}", params.n_max, b.n0)));
        }
        let node = b.node(u32::MAX);
        b.live.push(Live {
            arc: *w,
            mass: 1.0,
            lo: 0.0,
            hi: 1.0,
            node,
            events: Vec::new(),
            state: State::Free { ready_at: b.n0 as u32 },
            round: None,
        });
        b.total_mass = 1.0;
        b.diag.initial_mass = f64::NAN;
        Ok(b)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn elements(&self) -> &[PartitionElement] {
        &self.elements
    }

    pub fn live_mass(&self) -> f64 {
        self.live.iter().map(|l| l.mass).sum()
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    fn split(&mut self, l: &Live, cuts: &[f64]) -> Vec<Live> {
        let len = l.arc.len;
        let bounds: Vec<f64> = std::iter::once(0.0).chain(cuts.iter().copied()).chain(std::iter::once(len)).collect();
        let base: Vec<f64> = bounds
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if i == 0 {
                    l.lo
                } else if i + 1 == bounds.len() {
                    l.hi
                } else {
                    l.lo + (l.hi - l.lo) * c / len
                }
            })
            .collect();
        let mut out = Vec::with_capacity(cuts.len() + 1);
        for i in 0..bounds.len() - 1 {
            let (a, b) = (bounds[i], bounds[i + 1]);
            let state = match l.state {
                State::Residual { disk, eps_a, eps_b, growth } => State::Residual {
                    disk,
                    eps_a: eps_a + (eps_b - eps_a) * a / len,
                    eps_b: eps_a + (eps_b - eps_a) * b / len,
                    growth,
                },
                s => s,
            };
            let node = self.node(l.node);
            out.push(Live {
                arc: l.arc.sub(a, b),
                mass: l.mass * (b - a) / len,
                lo: base[i],
                hi: base[i + 1],
                node,
                events: l.events.clone(),
                state,
                round: l.round,
            });
        }
        out
    }

    /// One filtration step: slice at scale δ₀λ_s, then push forward.
    fn refine_and_forward(&mut self) {
        let lambda_s = self.map.lambda_s();
        let keep = self.scales.delta0 * lambda_s;
        let dp = delta_prime(self.scales.delta0, lambda_s, self.map.d_u);
        let old = std::mem::take(&mut self.live);
        let mut next = Vec::with_capacity(old.len() * 2);
        for l in old {
            let parts = if l.arc.len > keep {
                let cuts = slice_positions(l.arc.len, dp, |_| 1.0);
                self.split(&l, &cuts)
            } else {
                vec![l]
            };
            for mut p in parts {
                let new_arc = p.arc.forward(self.map);
                let factor = new_arc.len / p.arc.len;
                p.arc = new_arc;
                if let State::Residual { disk, eps_a, eps_b, growth } = p.state {
                    p.state = State::Residual {
                        disk,
                        eps_a: eps_a * factor,
                        eps_b: eps_b * factor,
                        growth: growth * factor,
                    };
                }
                next.push(p);
            }
        }
        self.live = next;
    }

    fn release(&mut self) -> Result<()> {
        let n = self.n as u32;
        let lambda = self.map.lambda;
        let delta0 = self.scales.delta0;
        let mut released: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.live.iter().enumerate() {
            if let State::Residual { disk, eps_a, eps_b, growth } = l.state {
                let captured_at = *l.events.last().expect("captured");
                let k = (n - captured_at) as f64;
                let eps_now = eps_a.max(eps_b);
                let l_x = release_time_formula(Some(eps_now / growth), lambda, delta0, 1.0, 1.0);
                if k >= l_x - 1e-9 {
                    self.diag.release_checks += 1;
                    if eps_now < delta0 * (1.0 - 1e-9) {
                        return Err(YoungError::Assembly(format!(
                            "released component is only {eps_now} from its element image at step {n}"
                        )));
                    }
                    released.entry(disk).or_default().push(i);
                }
            }
        }
        for (disk, idx) in released {
            let batch = self.batches.len() as u32;
            let mass: f64 = idx.iter().map(|&i| self.live[i].mass).sum();
            let zsum: f64 = idx.iter().map(|&i| 2.0 * self.live[i].mass / self.live[i].arc.len).sum();
            let z0 = zsum / mass;
            let captured_at = *self.live[idx[0]].events.last().expect("captured") as usize;
            let s = self.n - captured_at;
            self.diag.s_hist[s.min(self.params.n_max + 1)] += mass;
            self.batches.push(ReleasedBatch {
                disk: disk as usize,
                capture_time: captured_at,
                released_at: self.n,
                mass,
                z0,
                n0_bound: self.consts.n0(z0)?,
                g: None,
                returned_in_round: 0.0,
            });
            for i in idx {
                self.live[i].state = State::Growing { batch };
                self.live[i].events.push(n);
            }
        }
        Ok(())
    }

    fn grow(&mut self) {
        let threshold = 1.0 / (2.0 * self.scales.delta1);
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.live.iter().enumerate() {
            if let State::Growing { batch } = l.state {
                groups.entry(batch).or_default().push(i);
            }
        }
        let n = self.n as u32;
        for (batch, idx) in groups {
            let mass: f64 = idx.iter().map(|&i| self.live[i].mass).sum();
            let zsum: f64 = idx.iter().map(|&i| 2.0 * self.live[i].mass / self.live[i].arc.len).sum();
            if zsum / mass > threshold {
                continue;
            }
            let b = &mut self.batches[batch as usize];
            let g = self.n - b.released_at;
            b.g = Some(g);
            if g > b.n0_bound {
                self.diag.growth_bound_violations += 1;
            }
            let sg = self.n - b.capture_time;
            self.diag.sg_hist[sg.min(self.params.n_max + 1)] += mass;
            for i in idx {
                let l = &mut self.live[i];
                l.state = State::Free { ready_at: n };
                l.events.push(n);
                l.round = Some(batch);
            }
        }
    }

    fn nearest_center(&self, p: &Point) -> Option<(usize, f64)> {
        let net = self.net?;
        self.hash
            .as_ref()?
            .neighbors(p)
            .into_iter()
            .map(|i| (i, self.map.chart_distance(p, &net.centers[i].point)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    fn capture(&mut self) -> Result<()> {
        let Some(net) = self.net else {
            return Ok(());
        };
        let n = self.n;
        let d1 = self.scales.delta1;
        let d3 = self.scales.delta3;
        if n == self.n0 {
            self.diag.initial_mass = self.live_mass();
        }
        let old = std::mem::take(&mut self.live);
        let mut next = Vec::with_capacity(old.len() + old.len() / 2);
        for l in old {
            let ready = matches!(l.state, State::Free { ready_at } if ready_at as usize <= n);
            let len = l.arc.len;
            if !ready || len <= 2.0 * d1 {
                next.push(l);
                continue;
            }
            let x = 0.5 * len;
            let xp = l.arc.point(self.map, x);
            let (zi, dist) = match self.nearest_center(&xp) {
                Some(c) if c.1 < d3 => c,
                _ => {
                    return Err(YoungError::NetCoverage(format!(
                        "no net center within δ₃ = {d3} of the capture point {xp:?} at step {n}"
                    )))
                }
            };
            let center = net.centers[zi].point;
            let p = l
                .arc
                .projections_within(self.map, &center, x - d1 / 6.0, x + d1 / 6.0, self.scales.delta2)
                .into_iter()
                .min_by(|a, b| (a.0 - x).abs().total_cmp(&(b.0 - x).abs()))
                .map(|h| h.0)
                .ok_or_else(|| YoungError::NetCoverage(format!("center {zi} does not project into V^c at step {n}")))?;
            let crossing = u_crossing(
                self.map,
                &PushedImage {
                    arc: l.arc,
                    steps: n,
                    witness: Some(Witness {
                        offset: x,
                        clearance: x,
                        center_distance: dist,
                    }),
                },
                &net.rectangles[zi],
                d3,
            )?;
            self.diag.crossing_checks += 1;
            if !crossing.crosses {
                self.diag.crossing_failures += 1;
            }
            let (vc, _) = capture_split(len, x, d1);
            let (e0, e1) = (p - d1 / 3.0, p + d1 / 3.0);
            let cuts = [vc.0, e0, e1, vc.1];
            let mut parts = self.split(&l, &cuts);
            let vc_mass = l.mass * (vc.1 - vc.0) / len;
            let elem_mass = parts[2].mass;
            self.diag.min_element_fraction_of_vc = self.diag.min_element_fraction_of_vc.min(elem_mass / vc_mass);
            if l.events.is_empty() {
                self.diag.t0_hist[n.min(self.params.n_max + 1)] += vc_mass;
            } else {
                let t = n - *l.events.last().unwrap() as usize;
                self.diag.t_hist[t.min(self.params.n_max + 1)] += vc_mass;
            }
            if let Some(r) = l.round {
                self.batches[r as usize].returned_in_round += elem_mass;
            }
            if n == self.n0 && l.events.is_empty() {
                self.diag.initial_returned += elem_mass;
            }
            let zpost = (2.0 * parts[0].mass / parts[0].arc.len + 2.0 * parts[4].mass / parts[4].arc.len)
                / (parts[0].mass + parts[4].mass);
            let n2 = self.consts.n0(zpost)?.max(1);
            let disk = self.disks as u32;
            self.disks += 1;
            let n32 = n as u32;
            for (k, part) in parts.iter_mut().enumerate() {
                match k {
                    0 | 4 => part.state = State::Free { ready_at: n32 + n2 as u32 },
                    1 | 3 => {
                        part.events.push(n32);
                        let (ea, eb) = if k == 1 { (e0 - vc.0, 0.0) } else { (0.0, vc.1 - e1) };
                        part.state = State::Residual {
                            disk,
                            eps_a: ea,
                            eps_b: eb,
                            growth: 1.0,
                        };
                    }
                    _ => {}
                }
            }
            let elem = parts.remove(2);
            let mut ev = elem.events.clone();
            ev.push(n32);
            self.element_mass += elem.mass;
            self.elements.push(PartitionElement {
                base: (elem.lo, elem.hi),
                mass: elem.mass,
                tau: n,
                target: zi,
                phases: Phases::from_events(&ev),
                depth_created: n,
                image: elem.arc,
                crossing_verified: crossing.crosses,
                node: elem.node,
            });
            next.extend(parts);
        }
        for l in next.iter_mut() {
            l.round = None;
        }
        self.live = next;
        Ok(())
    }

    /// Capped systematic resampling of free and residual components within
    /// strata keyed by (phase, captures without return).
    fn control_population(&mut self) {
        let cap = self.params.population;
        let movable = self
            .live
            .iter()
            .filter(|l| !matches!(l.state, State::Growing { .. }))
            .count();
        if movable <= cap {
            return;
        }
        self.diag.resampling_events += 1;
        let mut strata: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
        let mut keep_always = Vec::new();
        let mut movable_mass = 0.0;
        for (i, l) in self.live.iter().enumerate() {
            let kind = match l.state {
                State::Free { .. } => 0u8,
                State::Residual { .. } => 1,
                State::Growing { .. } => {
                    keep_always.push(i);
                    continue;
                }
            };
            movable_mass += l.mass;
            strata.entry((kind, l.unreturned())).or_default().push(i);
        }
        let mut keep: Vec<usize> = keep_always;
        let mut new_mass: Vec<(usize, f64)> = Vec::new();
        for (_, idx) in strata {
            let w: Vec<f64> = idx.iter().map(|&i| self.live[i].mass).collect();
            let total: f64 = w.iter().sum();
            let share = 0.5 * (idx.len() as f64 / movable as f64 + total / movable_mass);
            let target = ((cap as f64 * share).floor() as usize).max(1);
            if idx.len() <= target {
                keep.extend(idx);
                continue;
            }
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
            // threshold c with #{w ≥ c} + Σ_{w<c} w/c = target
            let mut big = 0;
            let mut rest = total;
            let mut c = rest / target as f64;
            while big < target - 1 && w[order[big]] >= c {
                rest -= w[order[big]];
                big += 1;
                c = rest / (target - big) as f64;
            }
            for &o in &order[..big] {
                keep.push(idx[o]);
            }
            let small: Vec<usize> = order[big..].iter().map(|&o| o).collect();
            let mut small_sorted = small.clone();
            small_sorted.sort_unstable();
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut chosen = Vec::new();
            let mut next_mark = u;
            for &o in &small_sorted {
                acc += w[o] / c;
                while acc > next_mark {
                    chosen.push(o);
                    next_mark += 1.0;
                }
            }
            chosen.dedup();
            if chosen.is_empty() {
                chosen.push(small_sorted[0]);
            }
            let each = rest / chosen.len() as f64;
            for o in chosen {
                keep.push(idx[o]);
                new_mass.push((idx[o], each));
            }
        }
        for (i, m) in new_mass {
            self.live[i].mass = m;
        }
        keep.sort_unstable();
        let old = std::mem::take(&mut self.live);
        let mut it = keep.into_iter().peekable();
        for (i, l) in old.into_iter().enumerate() {
            if it.peek() == Some(&i) {
                it.next();
                self.live.push(l);
            }
        }
    }

    fn check_mass(&mut self) {
        let now = self.live_mass() + self.element_mass;
        let err = (now - self.total_mass).abs() / self.total_mass;
        self.diag.max_mass_error = self.diag.max_mass_error.max(err);
    }

    /// Runs the capture phase at the current step (n₀ for a fresh builder).
    pub fn capture_now(&mut self) -> Result<()> {
        self.capture()?;
        self.control_population();
        self.check_mass();
        Ok(())
    }

    /// Advances one step: filtration, release, growth, capture.
    pub fn step(&mut self) -> Result<()> {
        self.refine_and_forward();
        self.n += 1;
        self.release()?;
        self.grow();
        self.capture()?;
        self.control_population();
        self.check_mass();
        Ok(())
    }

    pub fn finish(self) -> PartitionResult {
        let mut leftover_by_n = Vec::new();
        let (mut free, mut residual, mut growing) = (0.0, 0.0, 0.0);
        for l in &self.live {
            let k = l.unreturned();
            if leftover_by_n.len() <= k {
                leftover_by_n.resize(k + 1, 0.0);
            }
            leftover_by_n[k] += l.mass;
            match l.state {
                State::Free { .. } => free += l.mass,
                State::Residual { .. } => residual += l.mass,
                State::Growing { .. } => growing += l.mass,
            }
        }
        PartitionResult {
            leftover: free + residual + growing,
            leftover_free: free,
            leftover_residual: residual,
            leftover_growing: growing,
            leftover_by_n,
            total_mass: self.total_mass,
            n0: self.n0,
            n_max: self.params.n_max,
            tracked_intervals: self.parents.len(),
            captured_disks: self.disks,
            batches: self.batches,
            diagnostics: self.diag,
            parents: self.parents,
            elements: self.elements,
        }
    }
}

/// Initial growth: iterates W to n₀ and defines the first elements.
pub fn initial_growth<'a>(map: &'a MapModel, w: &LeafArc, net: &'a RectangleNet, params: BuildParams) -> Result<Builder<'a>> {
    let mut b = Builder::new(map, w, net, params)?;
    for _ in 0..b.n0 {
        b.refine_and_forward();
        b.n += 1;
        b.control_population();
    }
    b.capture_now()?;
    Ok(b)
}

pub fn build_partition(map: &MapModel, w: &LeafArc, net: &RectangleNet, params: BuildParams) -> Result<PartitionResult> {
    let mut b = initial_growth(map, w, net, params)?;
    while b.n < params.n_max {
        b.step()?;
    }
    Ok(b.finish())
}

/// Evolves the residual of one captured disk without further captures and
/// returns its release batches with their growth times.
pub fn evolve_captured(map: &MapModel, disk: &CapturedDisk, scales: &Scales, max_steps: usize) -> Result<Vec<ReleasedBatch>> {
    let params = BuildParams {
        n_max: disk.capture_time + max_steps,
        population: usize::MAX,
        seed: 0,
    };
    let mut b = Builder::empty(map, None, scales, params);
    b.n = disk.capture_time;
    for r in &disk.residual {
        let node = b.node(u32::MAX);
        b.live.push(Live {
            arc: r.arc,
            mass: r.mass,
            lo: 0.0,
            hi: r.mass,
            node,
            events: vec![disk.capture_time as u32],
            state: State::Residual {
                disk: 0,
                eps_a: r.eps.0,
                eps_b: r.eps.1,
                growth: 1.0,
            },
            round: None,
        });
    }
    b.total_mass = b.live_mass();
    for _ in 0..max_steps {
        if b.live.iter().all(|l| matches!(l.state, State::Free { .. })) {
            break;
        }
        b.step()?;
    }
    Ok(b.batches)
}

/// Builds the captured disk for a capture at offset `x` of component `arc`
/// with the net center projecting to offset `p`.
pub fn captured_disk(arc: &LeafArc, mass: f64, capture_time: usize, x: f64, p: f64, delta1: f64) -> CapturedDisk {
    let (vc, _) = capture_split(arc.len, x, delta1);
    let element = (p - delta1 / 3.0, p + delta1 / 3.0);
    let rho = mass / arc.len;
    let residual = vec![
        ResidualPiece {
            arc: arc.sub(vc.0, element.0),
            mass: rho * (element.0 - vc.0),
            eps: (element.0 - vc.0, 0.0),
        },
        ResidualPiece {
            arc: arc.sub(element.1, vc.1),
            mass: rho * (vc.1 - element.1),
            eps: (0.0, vc.1 - element.1),
        },
    ];
    CapturedDisk {
        capture_time,
        center: [f64::NAN; 3],
        net_center: 0,
        center_distance: 0.0,
        vc,
        element,
        residual,
        crossing_verified: false,
    }
}

impl PartitionResult {
    /// Exact m{τ > n}, fitted over [n₀, N_max].
    pub fn tail(&self) -> Result<TailReport> {
        tail_histogram(&self.elements, self.leftover, self.n_max, self.n0)
    }

    /// Elements are leaves of the split tree and distinct, so their bases are
    /// pairwise disjoint.
    pub fn check_disjoint(&self) -> bool {
        let mut is_elem = vec![false; self.parents.len()];
        for e in &self.elements {
            if std::mem::replace(&mut is_elem[e.node as usize], true) {
                return false;
            }
        }
        if self.parents.iter().any(|&p| p != u32::MAX && is_elem[p as usize]) {
            return false;
        }
        let mut iv: Vec<(f64, f64)> = self.elements.iter().map(|e| e.base).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        iv.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    /// m{N ≥ k} for k = 0, 1, …, counting captures without return.
    pub fn n_tail(&self) -> Vec<f64> {
        let mut at: Vec<f64> = self.leftover_by_n.clone();
        for e in &self.elements {
            let k = e.phases.cycles.len();
            if at.len() <= k {
                at.resize(k + 1, 0.0);
            }
            at[k] += e.mass;
        }
        let mut out = vec![0.0; at.len()];
        let mut acc = 0.0;
        for k in (0..at.len()).rev() {
            acc += at[k];
            out[k] = acc;
        }
        out
    }

    /// Smallest fraction of a capture round's mass returned in that round:
    /// the initial round at n₀ and the first round after each growth.
    pub fn epsilon1(&self) -> f64 {
        let mut e = self.diagnostics.initial_returned / self.diagnostics.initial_mass;
        for b in &self.batches {
            if b.g.is_some() {
                e = e.min(b.returned_in_round / b.mass);
            }
        }
        e
    }
}

pub fn tail_histogram(elements: &[PartitionElement], leftover: f64, n_max: usize, fit_lo: usize) -> Result<TailReport> {
    tail_from_times(elements.iter().map(|e| (e.tau, e.mass)), leftover, n_max, fit_lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_telescope() {
        let p = Phases::from_events(&[5, 9, 12, 14, 20, 21, 30]);
        assert_eq!(p.t0, 5);
        assert_eq!(
            p.cycles,
            vec![Cycle { s: 4, g: 3, t: 2 }, Cycle { s: 6, g: 1, t: 9 }]
        );
        assert_eq!(p.total(), 30);
        assert_eq!(Phases::from_events(&[7]).total(), 7);
    }

    #[test]
    fn capture_split_examples() {
        let (vc, vf) = capture_split(1.0, 0.5, 0.2);
        assert!((vc.1 - vc.0 - 0.2).abs() < 1e-15);
        assert_eq!(vf, vec![(0.0, vc.0), (vc.1, 1.0)]);
        let total: f64 = vf.iter().map(|i| i.1 - i.0).sum::<f64>() + vc.1 - vc.0;
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn release_time_examples() {
        assert!((release_time_formula(Some(0.0125), 0.5, 0.1, 1.0, 1.0) - 3.0).abs() < 1e-12);
        assert!((release_time_formula(None, 0.5, 0.1, 1.0, 0.025) - 3.0).abs() < 1e-12);
        assert!(release_time_formula(Some(0.1), 0.5, 0.1, 1.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn release_time_rejects_element_points() {
        let m = MapModel::linear_cat();
        let arc = LeafArc::new(crate::leaf::Leaf::Line { anchor: [0.1, 0.2] }, 0.0, 1.0);
        let d = captured_disk(&arc, 1.0, 3, 0.5, 0.52, 0.12);
        assert!(d.release_time(0.52, m.lambda, 1.0).is_err());
        assert!(d.release_time(0.9, m.lambda, 1.0).is_err());
        let l = d.release_time(d.vc.0, m.lambda, 1.0).unwrap();
        assert!(l > 0.0 && l.is_finite());
    }
}
