//! Refinement of the auxiliary partition into a first-return scheme on a
//! single base rectangle.
//!
//! Each rectangle of the subfamily carries its own auxiliary partition of
//! W(z). An element's image covers the target's W(z) under the stable
//! holonomy, so the induced return map is a Markov chain on rectangles whose
//! step law is the target's partition. The τ* distribution is computed
//! exactly by dynamic programming over (time, rectangle, level); refined
//! elements themselves are sampled as chains.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, YoungError};
use crate::maps::MapModel;
use crate::partition::{build_partition, BuildParams, PartitionResult};
use crate::rectangles::RectangleNet;
use crate::tail::{tail_from_times, TailReport};

/// Auxiliary partition of the canonical disk of one rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectPartition {
    pub rect: usize,
    pub partition: PartitionResult,
}

/// One partition per listed rectangle, seeded by `params.seed + rect`.
pub fn build_rect_partitions(map: &MapModel, net: &RectangleNet, rects: &[usize], params: BuildParams) -> Result<Vec<RectPartition>> {
    rects
        .iter()
        .map(|&r| {
            let w = net.rectangles[r].w_arc();
            let p = BuildParams {
                seed: params.seed.wrapping_add(r as u64),
                ..params
            };
            Ok(RectPartition {
                rect: r,
                partition: build_partition(map, &w, net, p)?,
            })
        })
        .collect()
}

pub type TransitionGraph = BTreeMap<(usize, usize), f64>;

/// Serializes a transition graph as `[source, target, mass]` triples.
mod edge_list {
    use super::TransitionGraph;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(g: &TransitionGraph, s: S) -> Result<S::Ok, S::Error> {
        g.iter().map(|(&(a, b), &m)| (a, b, m)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TransitionGraph, D::Error> {
        Ok(Vec::<(usize, usize, f64)>::deserialize(d)?.into_iter().map(|(a, b, m)| ((a, b), m)).collect())
    }
}

/// Element mass from source rectangle to target rectangle.
pub fn transition_graph(parts: &[RectPartition]) -> TransitionGraph {
    let mut g = TransitionGraph::new();
    for p in parts {
        for e in &p.partition.elements {
            *g.entry((p.rect, e.target)).or_insert(0.0) += e.mass;
        }
    }
    g
}

/// Strongly connected components over the positive-mass edges, each sorted,
/// in order of their smallest member.
pub fn strongly_connected(nodes: &[usize], graph: &TransitionGraph) -> Vec<Vec<usize>> {
    let reach = |from: usize, forward: bool| {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            for (&(a, b), &m) in graph {
                let (src, dst) = if forward { (a, b) } else { (b, a) };
                if m > 0.0 && src == v && seen.insert(dst) {
                    stack.push(dst);
                }
            }
        }
        seen
    };
    let mut assigned = BTreeSet::new();
    let mut out = Vec::new();
    let mut all: BTreeSet<usize> = nodes.iter().copied().collect();
    all.extend(graph.keys().flat_map(|&(a, b)| [a, b]));
    for &v in &all {
        if assigned.contains(&v) {
            continue;
        }
        let fwd = reach(v, true);
        let bwd = reach(v, false);
        let comp: Vec<usize> = fwd.intersection(&bwd).copied().collect();
        assigned.extend(comp.iter().copied());
        out.push(comp);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSystem {
    pub rectangles: Vec<usize>,
    #[serde(with = "edge_list")]
    pub edges: TransitionGraph,
    /// Element mass in the subfamily's partitions targeting outside it.
    pub excluded_mass: f64,
    pub components: Vec<Vec<usize>>,
}

impl ReturnSystem {
    /// Every ordered pair of subfamily rectangles is joined by a path of
    /// positive-mass edges.
    pub fn connectivity_certificate(&self) -> bool {
        strongly_connected(&self.rectangles, &self.edges)
            .iter()
            .any(|c| c == &self.rectangles)
    }

    pub fn contains(&self, rect: usize) -> bool {
        self.rectangles.binary_search(&rect).is_ok()
    }
}

/// First closed strongly connected component (by smallest member) whose
/// rectangles all carry a partition with positive element mass.
pub fn select_subfamily(parts: &[RectPartition]) -> Result<ReturnSystem> {
    let graph = transition_graph(parts);
    let built: BTreeSet<usize> = parts.iter().map(|p| p.rect).collect();
    let nodes: Vec<usize> = built.iter().copied().collect();
    let components = strongly_connected(&nodes, &graph);
    for comp in &components {
        let set: BTreeSet<usize> = comp.iter().copied().collect();
        if !set.is_subset(&built) {
            continue;
        }
        let closed = graph
            .iter()
            .all(|(&(a, b), &m)| !(m > 0.0 && set.contains(&a) && !set.contains(&b)));
        let mass: f64 = graph.iter().filter(|((a, _), _)| set.contains(a)).map(|(_, m)| m).sum();
        if closed && mass > 0.0 {
            let edges: TransitionGraph = graph
                .iter()
                .filter(|((a, b), _)| set.contains(a) && set.contains(b))
                .map(|(&k, &m)| (k, m))
                .collect();
            let excluded_mass = graph
                .iter()
                .filter(|((a, b), _)| set.contains(a) && !set.contains(b))
                .map(|(_, m)| m)
                .sum();
            return Ok(ReturnSystem {
                rectangles: comp.clone(),
                edges,
                excluded_mass,
                components,
            });
        }
    }
    Err(YoungError::Degenerate("no closed strongly connected rectangle family with positive mass".into()))
}

/// Smallest-index subfamily rectangle with positive base mass.
pub fn choose_base(system: &ReturnSystem, net: &RectangleNet) -> Result<usize> {
    system
        .rectangles
        .iter()
        .copied()
        .find(|&r| net.rectangles[r].base_mass() > 0.0)
        .ok_or_else(|| YoungError::Degenerate("no subfamily rectangle has positive mass".into()))
}

/// Prefix sums of per-step return times.
pub fn stopping_times(taus: &[usize]) -> Vec<usize> {
    taus.iter()
        .scan(0, |s, &t| {
            *s += t;
            Some(*s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub rect: usize,
    pub element: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedElement {
    /// Base interval on the base rectangle's W(z).
    pub base: (f64, f64),
    /// Product of conditional element masses along the chain.
    pub mass: f64,
    pub k: usize,
    pub stopping_times: Vec<usize>,
    pub tau_star: usize,
    pub path: Vec<ChainStep>,
    pub crossing_verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub depth_max: usize,
    /// Time horizon of the τ* distribution.
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            depth_max: 100,
            horizon: 2500,
            samples: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub base_rect: usize,
    pub horizon: usize,
    pub depth_max: usize,
    /// m{τ* = n} for n ≤ horizon.
    pub star_mass: Vec<f64>,
    pub leftover: f64,
    pub leftover_horizon: f64,
    pub leftover_depth: f64,
    /// Unreturned mass of the per-rectangle partitions met along the way.
    pub leftover_partition: f64,
    /// Mass entering level j (before its return) and stopping at level j.
    pub level_alive: Vec<f64>,
    pub level_stop: Vec<f64>,
    pub samples: Vec<RefinedElement>,
    /// Sampled chains that ran into unreturned or over-depth mass.
    pub censored_samples: usize,
    pub tau_star_gcd: usize,
}

struct StepLaw {
    /// Aggregated (τ, target slot, mass).
    moves: Vec<(usize, usize, f64)>,
    leftover: f64,
    sampler: WeightedIndex<f64>,
}

fn step_laws(system: &ReturnSystem, parts: &[RectPartition]) -> Result<Vec<StepLaw>> {
    let slot = |r: usize| system.rectangles.binary_search(&r).ok();
    system
        .rectangles
        .iter()
        .map(|&r| {
            let p = &parts
                .iter()
                .find(|p| p.rect == r)
                .ok_or_else(|| YoungError::Degenerate(format!("rectangle {r} has no partition")))?
                .partition;
            let total = p.total_mass;
            let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            let mut weights: Vec<f64> = p.elements.iter().map(|e| e.mass).collect();
            let mut outside = 0.0;
            for (i, e) in p.elements.iter().enumerate() {
                match slot(e.target) {
                    Some(s) => *agg.entry((e.tau, s)).or_insert(0.0) += e.mass / total,
                    None => {
                        outside += e.mass;
                        weights[i] = 0.0;
                    }
                }
            }
            weights.push(p.leftover + outside);
            let sampler = WeightedIndex::new(&weights).map_err(|e| YoungError::Degenerate(e.to_string()))?;
            Ok(StepLaw {
                moves: agg.into_iter().map(|((t, s), m)| (t, s, m)).collect(),
                leftover: (p.leftover + outside) / total,
                sampler,
            })
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact τ* law by dynamic programming plus sampled refined elements.
pub fn refine(system: &ReturnSystem, parts: &[RectPartition], base: usize, params: RefineParams) -> Result<Refinement> {
    if params.depth_max == 0 {
        return Err(YoungError::Precondition("depth_max must be at least 1".into()));
    }
    let q = system.rectangles.len();
    let b = system
        .rectangles
        .binary_search(&base)
        .map_err(|_| YoungError::Precondition(format!("base {base} is not in the subfamily")))?;
    let laws = step_laws(system, parts)?;
    let (h, d) = (params.horizon, params.depth_max);
    let idx = |n: usize, r: usize| (n * q + r) * d;
    let mut alive = vec![0.0; (h + 1) * q * d];
    alive[idx(0, b)] = 1.0;
    let mut star_mass = vec![0.0; h + 1];
    let mut level_alive = vec![0.0; d + 1];
    let mut level_stop = vec![0.0; d + 1];
    let (mut lo_h, mut lo_d, mut lo_p) = (0.0, 0.0, 0.0);
    for n in 0..=h {
        for r in 0..q {
            let cell = &alive[idx(n, r)..idx(n, r) + d];
            let Some(j0) = cell.iter().position(|&a| a != 0.0) else {
                continue;
            };
            let j1 = d - cell.iter().rev().position(|&a| a != 0.0).unwrap();
            let a: Vec<f64> = cell[j0..j1].to_vec();
            let total: f64 = a.iter().sum();
            for (j, &x) in a.iter().enumerate() {
                level_alive[j0 + j + 1] += x;
            }
            lo_p += total * laws[r].leftover;
            for &(tau, t, m) in &laws[r].moves {
                let n2 = n + tau;
                if n2 > h {
                    lo_h += m * total;
                } else if t == b {
                    star_mass[n2] += m * total;
                    for (j, &x) in a.iter().enumerate() {
                        level_stop[j0 + j + 1] += m * x;
                    }
                } else {
                    let dst = idx(n2, t);
                    for (j, &x) in a.iter().enumerate() {
                        let lvl = j0 + j + 1;
                        if lvl >= d {
                            lo_d += m * x;
                        } else {
                            alive[dst + lvl] += m * x;
                        }
                    }
                }
            }
        }
    }
    let tau_star_gcd = star_mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .fold(0, |g, (n, _)| gcd(g, n));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut samples = Vec::with_capacity(params.samples);
    let mut censored = 0;
    for _ in 0..params.samples {
        match sample_chain(system, parts, &laws, b, d, &mut rng) {
            Some(e) => samples.push(e),
            None => censored += 1,
        }
    }
    Ok(Refinement {
        base_rect: base,
        horizon: h,
        depth_max: d,
        star_mass,
        leftover: lo_h + lo_d + lo_p,
        leftover_horizon: lo_h,
        leftover_depth: lo_d,
        leftover_partition: lo_p,
        level_alive,
        level_stop,
        samples,
        censored_samples: censored,
        tau_star_gcd,
    })
}

fn partition_of<'p>(parts: &'p [RectPartition], rect: usize) -> &'p PartitionResult {
    &parts.iter().find(|p| p.rect == rect).expect("partition built").partition
}

fn sample_chain(
    system: &ReturnSystem,
    parts: &[RectPartition],
    laws: &[StepLaw],
    b: usize,
    depth_max: usize,
    rng: &mut ChaCha8Rng,
) -> Option<RefinedElement> {
    let mut path = Vec::new();
    let mut slot = b;
    loop {
        let rect = system.rectangles[slot];
        let p = partition_of(parts, rect);
        let i = laws[slot].sampler.sample(rng);
        if i == p.elements.len() {
            return None;
        }
        path.push(ChainStep { rect, element: i });
        let t = p.elements[i].target;
        if t == system.rectangles[b] {
            return Some(refined_from_path(parts, path));
        }
        if path.len() >= depth_max {
            return None;
        }
        slot = system.rectangles.binary_search(&t).ok()?;
    }
}

/// Nested base interval, stopping times and mass of a chain.
pub fn refined_from_path(parts: &[RectPartition], path: Vec<ChainStep>) -> RefinedElement {
    let elems: Vec<_> = path
        .iter()
        .map(|s| {
            let p = partition_of(parts, s.rect);
            (&p.elements[s.element], p.total_mass)
        })
        .collect();
    let (mut a, mut bb) = (0.0, 1.0);
    for (e, _) in elems.iter().rev() {
        let w = e.base.1 - e.base.0;
        (a, bb) = (e.base.0 + w * a, e.base.0 + w * bb);
    }
    let taus: Vec<usize> = elems.iter().map(|(e, _)| e.tau).collect();
    let stopping_times = stopping_times(&taus);
    RefinedElement {
        base: (a, bb),
        mass: elems.iter().map(|(e, total)| e.mass / total).product(),
        k: path.len(),
        tau_star: *stopping_times.last().unwrap(),
        stopping_times,
        crossing_verified: elems.last().unwrap().0.crossing_verified,
        path,
    }
}

/// S_j(x) = S_{j−1}(f^τ x) + S₁(x) for every j, with the shifted chain's
/// stopping times recomputed from its own elements.
pub fn check_recursion(parts: &[RectPartition], e: &RefinedElement) -> bool {
    if e.k == 1 {
        return e.stopping_times == vec![e.tau_star];
    }
    let shifted = refined_from_path(parts, e.path[1..].to_vec());
    let s1 = e.stopping_times[0];
    (1..e.k).all(|j| e.stopping_times[j] == shifted.stopping_times[j - 1] + s1)
        && e.tau_star == *e.stopping_times.last().unwrap()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub points: usize,
    pub outside_target: usize,
    /// Largest |projected position − affine position| on the target's W(z).
    pub max_error: f64,
    /// Chains whose intermediate targets avoid the base and whose last one is the base.
    pub first_return_ok: bool,
}

/// Pushes `points` base points of every element of the chain to its image,
/// checks the image lies in the target rectangle and that its stable
/// projection onto the target's W(z) sits at the affine position.
pub fn check_transfer(map: &MapModel, net: &RectangleNet, parts: &[RectPartition], base: usize, e: &RefinedElement, points: usize) -> TransferCheck {
    let mut out = TransferCheck {
        first_return_ok: true,
        ..Default::default()
    };
    for (i, step) in e.path.iter().enumerate() {
        let el = &partition_of(parts, step.rect).elements[step.element];
        let last = i + 1 == e.path.len();
        if (el.target == base) != last {
            out.first_return_ok = false;
        }
        let target = &net.rectangles[el.target];
        let w = target.w_arc();
        for j in 0..points {
            let rel = (j as f64 + 0.5) / points as f64;
            let y = el.image.point(map, rel * el.image.len);
            out.points += 1;
            if !target.contains(map, &y) {
                out.outside_target += 1;
            }
            let hit = w
                .projections_within(map, &y, 0.0, w.len, target.cs_width * (1.0 + 1e-9))
                .into_iter()
                .map(|h| (h.0 / w.len - rel).abs())
                .min_by(f64::total_cmp);
            match hit {
                Some(err) => out.max_error = out.max_error.max(err),
                None => out.max_error = f64::INFINITY,
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConditions {
    /// Smallest per-rectangle stop fraction (τ* = S_j given the cylinder).
    pub epsilon2: f64,
    pub stop_fraction: Vec<(usize, f64)>,
    /// Per-rectangle increment tail fits (θ, R²).
    pub increment_fits: Vec<(usize, f64, f64)>,
    pub max_increment_theta: f64,
    pub min_increment_r2: f64,
    pub recursion_checked: usize,
    pub recursion_failures: usize,
    pub crossing_failures: usize,
    /// No sampled chain is a proper prefix of another.
    pub disjoint: bool,
    pub warnings: Vec<String>,
}

/// Chains that first differ at some step pass through distinct elements of
/// one partition there, so their nested bases are disjoint whenever no chain
/// extends another. Deep bases are narrower than f64 resolution, so the
/// check is made on the paths rather than on the endpoints.
pub fn paths_disjoint(samples: &[RefinedElement]) -> bool {
    let mut paths: Vec<Vec<(usize, usize)>> = samples
        .iter()
        .map(|e| e.path.iter().map(|s| (s.rect, s.element)).collect())
        .collect();
    paths.sort();
    paths.dedup();
    paths.windows(2).all(|w| !w[1].starts_with(&w[0]))
}

/// Stop fractions and increment tails depend only on the rectangle the
/// cylinder currently sits in, so they are measured per rectangle.
pub fn verify_tail_conditions(refinement: &Refinement, system: &ReturnSystem, parts: &[RectPartition]) -> Result<TailConditions> {
    let mut stop_fraction = Vec::new();
    let mut increment_fits = Vec::new();
    for &r in &system.rectangles {
        let p = partition_of(parts, r);
        let stop: f64 = p
            .elements
            .iter()
            .filter(|e| e.target == refinement.base_rect)
            .map(|e| e.mass)
            .sum();
        stop_fraction.push((r, stop / p.total_mass));
        let t = p.tail()?;
        increment_fits.push((r, t.fit.theta, t.fit.r2));
    }
    let epsilon2 = stop_fraction.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let recursion_failures = refinement
        .samples
        .iter()
        .filter(|e| !check_recursion(parts, e))
        .count();
    let crossing_failures = refinement.samples.iter().filter(|e| !e.crossing_verified).count();
    let disjoint = paths_disjoint(&refinement.samples);
    let mut warnings = Vec::new();
    let max_k = refinement.samples.iter().map(|e| e.k).max().unwrap_or(0);
    for j in 1..=max_k {
        let n = refinement.samples.iter().filter(|e| e.k >= j).count();
        if n < 10 {
            warnings.push(format!("only {n} sampled cylinders reach level {j}"));
            break;
        }
    }
    Ok(TailConditions {
        epsilon2,
        max_increment_theta: increment_fits.iter().map(|f| f.1).fold(0.0, f64::max),
        min_increment_r2: increment_fits.iter().map(|f| f.2).fold(1.0, f64::min),
        stop_fraction,
        increment_fits,
        recursion_checked: refinement.samples.len(),
        recursion_failures,
        crossing_failures,
        disjoint,
        warnings,
    })
}

/// Exact m{τ* > n} up to the horizon with its log-linear fit over `[fit_lo, fit_hi]`.
pub fn tail_fit_star(refinement: &Refinement, fit_lo: usize, fit_hi: usize) -> Result<TailReport> {
    let full = tail_from_times(
        refinement.star_mass.iter().copied().enumerate(),
        refinement.leftover,
        refinement.horizon,
        fit_lo,
    )?;
    let hi = fit_hi.min(refinement.horizon);
    let pts: Vec<(f64, f64)> = (fit_lo..=hi).map(|n| (n as f64, full.mass[n])).collect();
    Ok(TailReport {
        fit: crate::tail::fit_log_linear(&pts)?,
        ..full
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_times_telescope() {
        assert_eq!(stopping_times(&[5, 7, 11]), vec![5, 12, 23]);
        assert_eq!(stopping_times(&[9]), vec![9]);
    }

    #[test]
    fn scc_of_cycle_and_sink() {
        let mut g = TransitionGraph::new();
        g.insert((0, 1), 0.5);
        g.insert((1, 0), 0.5);
        g.insert((1, 2), 0.1);
        g.insert((3, 3), 0.0);
        let c = strongly_connected(&[0, 1, 2, 3], &g);
        assert_eq!(c, vec![vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn gcd_of_times() {
        assert_eq!(gcd(12, 18), 6);
        assert_eq!(gcd(0, 7), 7);
    }
}
