//! Stage orchestration: net → filtration → auxiliary partitions →
//! refinement → axiom verification → statistics.
//!
//! Each stage writes `stages/<name>.json` (a [`StageRecord`]) under the
//! output directory. A run over a later stage loads the records of earlier
//! stages it needs; records whose config echo differs are rejected. The
//! per-rectangle partitions are too large to persist and are rebuilt from
//! the config and stage seed, then checked against the recorded fingerprint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::config::{stage_seed, RunConfig, Stage};
use crate::error::{Result, YoungError};
use crate::filtration::{build_filtration, FiltrationConstants};
use crate::leaf::LeafArc;
use crate::maps::MapModel;
use crate::orbit::OrbitSampler;
use crate::partition::BuildParams;
use crate::rectangles::{build_net, NetValidation, RectangleNet, Scales};
use crate::refinement::{
    build_rect_partitions, choose_base, refine, select_subfamily, tail_fit_star, verify_tail_conditions, RectPartition, RefineParams,
    Refinement, ReturnSystem, TailConditions,
};
use crate::stats::{self, CltReport, Estimate, Observable, RateEstimate, VarianceReport};
use crate::tail::{fit_log_linear, LogLinearFit, TailReport};
use crate::verify::{assemble, verify_all, AxiomReport, VerifyParams};

pub const REPORT_SCHEMA: &str = "ystruct-report/1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative margin applied against a comparison before it is declared to
/// hold, covering accumulated rounding in Z and the interior fraction.
pub const ROUNDING_MARGIN: f64 = 1e-12;
/// Relative tolerance of the filtration recursion check.
pub const RECURSION_TOL: f64 = 1e-9;
const NET_VALIDATION_SAMPLES: usize = 20_000;
const BIRKHOFF_N: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub lambda: f64,
    pub curvature_l: f64,
    pub alpha: f64,
    pub beta: f64,
    pub beta_bar: f64,
    pub delta_prime: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub c1: f64,
    pub eta_geom: f64,
}

pub fn map_for(cfg: &RunConfig) -> Result<MapModel> {
    MapModel::by_name(&cfg.map, cfg.lambda_c, cfg.kappa)
}

pub fn scales_for(map: &MapModel, cfg: &RunConfig) -> Result<Scales> {
    let base = Scales::derive(map, cfg.delta0, None, cfg.c1, cfg.eta_geom)?;
    Scales::derive(map, cfg.delta0, Some(cfg.delta2_for(base.delta1)), cfg.c1, cfg.eta_geom)
}

pub fn constants_for(map: &MapModel, cfg: &RunConfig) -> Result<Constants> {
    let f = FiltrationConstants::for_map(map, cfg.delta0);
    let s = scales_for(map, cfg)?;
    Ok(Constants {
        lambda: map.lambda,
        curvature_l: map.curvature_bound_l,
        alpha: f.alpha,
        beta: f.beta,
        beta_bar: f.beta_bar,
        delta_prime: f.delta_prime,
        delta0: s.delta0,
        delta1: s.delta1,
        delta2: s.delta2,
        delta3: s.delta3,
        c1: s.c1,
        eta_geom: s.eta_geom,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetArtifact {
    pub net: RectangleNet,
    pub validation: NetValidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSummary {
    pub centers: usize,
    pub rectangles: usize,
    pub spacing: f64,
    pub validation: NetValidation,
}

pub fn stage_net(map: &MapModel, cfg: &RunConfig) -> Result<NetArtifact> {
    let scales = scales_for(map, cfg)?;
    let seed = stage_seed(cfg.seed, Stage::Net);
    let net = build_net(map, &scales, scales.delta3, cfg.net_budget, cfg.net_depth, seed)?;
    let validation = net.validate(map, NET_VALIDATION_SAMPLES, seed ^ 1);
    Ok(NetArtifact { net, validation })
}

/// Random admissible curves: unstable leaf arcs through points of a
/// Lebesgue-random orbit, centred on the point, with length uniform in
/// `[δ₀/10, δ₀]`.
pub fn curve_corpus(map: &MapModel, count: usize, delta0: f64, seed: u64) -> Vec<LeafArc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut orbit = OrbitSampler::new(map, stats::sample_seed(seed, i));
            for _ in 0..10 {
                orbit.step();
            }
            let (leaf, s) = orbit.leaf();
            let len = rng.random_range(0.1 * delta0..=delta0);
            LeafArc::new(leaf, s - 0.5 * len, len)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub length: f64,
    pub levels: usize,
    pub z0: f64,
    pub n0: usize,
    /// Largest Z_n / bound over levels.
    pub max_ratio: f64,
    pub recursion_failures: usize,
    /// Levels with n ≥ n₀.
    pub post_n0_levels: usize,
    pub z_bound_failures: usize,
    pub interior_failures: usize,
    pub min_interior_post_n0: Option<f64>,
    pub max_components: usize,
}

/// Filtration of one curve to `levels` steps (extended to n₀ + 1 when n₀
/// is later) with the recursion and post-n₀ checks.
pub fn filtrate_curve(map: &MapModel, arc: &LeafArc, delta0: f64, levels: usize) -> Result<CurveSummary> {
    let c = FiltrationConstants::for_map(map, delta0);
    let probe = build_filtration(map, arc, delta0, 0, false)?;
    let levels = levels.max(probe.n0 + 1);
    let f = build_filtration(map, arc, delta0, levels, false)?;
    let z0 = f.levels[0].z;
    let cap = c.beta_bar / delta0;
    let mut s = CurveSummary {
        length: arc.len,
        levels,
        z0,
        n0: f.n0,
        max_ratio: 0.0,
        recursion_failures: 0,
        post_n0_levels: 0,
        z_bound_failures: 0,
        interior_failures: 0,
        min_interior_post_n0: None,
        max_components: 0,
    };
    for l in &f.levels {
        let ratio = l.z / l.bound_rhs;
        s.max_ratio = s.max_ratio.max(ratio);
        s.max_components = s.max_components.max(l.component_count);
        if l.z > l.bound_rhs * (1.0 + RECURSION_TOL) {
            s.recursion_failures += 1;
        }
        if l.n >= f.n0 {
            s.post_n0_levels += 1;
            if !(l.z * (1.0 + ROUNDING_MARGIN) <= cap * (1.0 - ROUNDING_MARGIN)) {
                s.z_bound_failures += 1;
            }
            if !(l.interior_fraction * (1.0 - ROUNDING_MARGIN) >= 0.5) {
                s.interior_failures += 1;
            }
            let m = s.min_interior_post_n0.unwrap_or(f64::INFINITY).min(l.interior_fraction);
            s.min_interior_post_n0 = Some(m);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationSummary {
    pub delta0: f64,
    pub curves: usize,
    pub level_checks: usize,
    pub recursion_failures: usize,
    pub max_ratio: f64,
    pub post_n0_checks: usize,
    pub z_bound_failures: usize,
    pub interior_failures: usize,
    pub min_interior_post_n0: Option<f64>,
    pub per_curve: Vec<CurveSummary>,
}

pub fn stage_filtrate(map: &MapModel, cfg: &RunConfig) -> Result<FiltrationSummary> {
    let delta0 = cfg.filtration_delta0.unwrap_or(cfg.delta0);
    let corpus = curve_corpus(map, cfg.curves, delta0, stage_seed(cfg.seed, Stage::Filtrate));
    let per_curve = corpus
        .par_iter()
        .map(|arc| filtrate_curve(map, arc, delta0, cfg.filtration_levels))
        .collect::<Result<Vec<_>>>()?;
    Ok(FiltrationSummary {
        delta0,
        curves: per_curve.len(),
        level_checks: per_curve.iter().map(|c| c.levels + 1).sum(),
        recursion_failures: per_curve.iter().map(|c| c.recursion_failures).sum(),
        max_ratio: per_curve.iter().map(|c| c.max_ratio).fold(0.0, f64::max),
        post_n0_checks: per_curve.iter().map(|c| c.post_n0_levels).sum(),
        z_bound_failures: per_curve.iter().map(|c| c.z_bound_failures).sum(),
        interior_failures: per_curve.iter().map(|c| c.interior_failures).sum(),
        min_interior_post_n0: per_curve.iter().filter_map(|c| c.min_interior_post_n0).reduce(f64::min),
        per_curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectSummary {
    pub rect: usize,
    pub elements: usize,
    pub tracked_intervals: usize,
    pub leftover: f64,
    pub total_mass: f64,
    pub n0: usize,
    pub n_max: usize,
    pub tail: TailReport,
    pub epsilon1: f64,
    /// m{N ≥ k}, k = 0, 1, ….
    pub n_tail: Vec<f64>,
    /// Elements whose return time differs from t₀ + Σ(s + g + t).
    pub phase_failures: usize,
    pub disjoint: bool,
    pub max_mass_error: f64,
    pub crossing_checks: usize,
    pub crossing_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub rects: Vec<RectSummary>,
    pub fingerprint: String,
}

/// FNV-1a over every element's return time, target and mass bits.
pub fn partition_fingerprint(parts: &[RectPartition]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    };
    for p in parts {
        eat(p.rect as u64);
        eat(p.partition.elements.len() as u64);
        for e in &p.partition.elements {
            eat(e.tau as u64);
            eat(e.target as u64);
            eat(e.mass.to_bits());
        }
        eat(p.partition.leftover.to_bits());
    }
    format!("{h:016x}")
}

pub fn build_partitions(map: &MapModel, cfg: &RunConfig, net: &RectangleNet) -> Result<Vec<RectPartition>> {
    let params = BuildParams {
        n_max: cfg.n_max,
        population: cfg.population,
        seed: stage_seed(cfg.seed, Stage::Partition),
    };
    let built = (0..net.rectangles.len())
        .into_par_iter()
        .map(|r| build_rect_partitions(map, net, &[r], params))
        .collect::<Result<Vec<_>>>()?;
    Ok(built.into_iter().flatten().collect())
}

pub fn summarize_partitions(parts: &[RectPartition]) -> Result<PartitionArtifact> {
    let rects = parts
        .iter()
        .map(|rp| {
            let p = &rp.partition;
            Ok(RectSummary {
                rect: rp.rect,
                elements: p.elements.len(),
                tracked_intervals: p.tracked_intervals,
                leftover: p.leftover,
                total_mass: p.total_mass,
                n0: p.n0,
                n_max: p.n_max,
                tail: p.tail()?,
                epsilon1: p.epsilon1(),
                n_tail: p.n_tail(),
                phase_failures: p.elements.iter().filter(|e| e.phases.total() != e.tau).count(),
                disjoint: p.check_disjoint(),
                max_mass_error: p.diagnostics.max_mass_error,
                crossing_checks: p.diagnostics.crossing_checks,
                crossing_failures: p.diagnostics.crossing_failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionArtifact {
        rects,
        fingerprint: partition_fingerprint(parts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineArtifact {
    pub system: ReturnSystem,
    pub base: usize,
    pub certificate: bool,
    pub refinement: Refinement,
    pub tail_conditions: TailConditions,
    pub star_tail: TailReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub subfamily: Vec<usize>,
    pub edges: usize,
    pub excluded_mass: f64,
    pub base: usize,
    pub certificate: bool,
    pub leftover: f64,
    pub leftover_horizon: f64,
    pub leftover_depth: f64,
    pub leftover_partition: f64,
    pub tau_star_gcd: usize,
    pub sampled_elements: usize,
    pub tail_conditions: TailConditions,
    pub star_tail: TailReport,
}

impl RefineArtifact {
    pub fn summary(&self) -> RefineSummary {
        let r = &self.refinement;
        RefineSummary {
            subfamily: self.system.rectangles.clone(),
            edges: self.system.edges.len(),
            excluded_mass: self.system.excluded_mass,
            base: self.base,
            certificate: self.certificate,
            leftover: r.leftover,
            leftover_horizon: r.leftover_horizon,
            leftover_depth: r.leftover_depth,
            leftover_partition: r.leftover_partition,
            tau_star_gcd: r.tau_star_gcd,
            sampled_elements: r.samples.len(),
            tail_conditions: self.tail_conditions.clone(),
            star_tail: self.star_tail.clone(),
        }
    }
}

fn part_of(parts: &[RectPartition], rect: usize) -> Result<&RectPartition> {
    parts
        .iter()
        .find(|p| p.rect == rect)
        .ok_or_else(|| YoungError::Assembly(format!("no partition for rectangle {rect}")))
}

pub fn stage_refine(cfg: &RunConfig, net: &RectangleNet, parts: &[RectPartition]) -> Result<RefineArtifact> {
    let system = select_subfamily(parts)?;
    let base = choose_base(&system, net)?;
    let params = RefineParams {
        depth_max: cfg.depth_max,
        horizon: cfg.horizon,
        samples: cfg.refine_samples,
        seed: stage_seed(cfg.seed, Stage::Refine),
    };
    let refinement = refine(&system, parts, base, params)?;
    let tail_conditions = verify_tail_conditions(&refinement, &system, parts)?;
    let n0 = part_of(parts, base)?.partition.n0;
    let star_tail = tail_fit_star(&refinement, n0, cfg.n_max.min(cfg.horizon))?;
    Ok(RefineArtifact {
        certificate: system.connectivity_certificate(),
        system,
        base,
        refinement,
        tail_conditions,
        star_tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyArtifact {
    pub base_rect: usize,
    pub elements: usize,
    pub unstable_curves: usize,
    pub covered_fraction: f64,
    pub bracket_checks: usize,
    pub single_intersections: usize,
    pub axioms: AxiomReport,
}

pub fn stage_verify(map: &MapModel, cfg: &RunConfig, net: &RectangleNet, parts: &[RectPartition], refined: &RefineArtifact) -> Result<VerifyArtifact> {
    let seed = stage_seed(cfg.seed, Stage::Verify);
    let s = assemble(map, net, parts, &refined.refinement, (cfg.verify_pairs / 20).max(1), seed)?;
    let params = VerifyParams {
        pairs: cfg.verify_pairs,
        depth: cfg.verify_depth,
        seed: seed ^ 1,
        ..VerifyParams::default()
    };
    let axioms = verify_all(map, net, parts, &s, &params)?;
    Ok(VerifyArtifact {
        base_rect: s.base_rect,
        elements: s.elements.len(),
        unstable_curves: s.gamma_u.len(),
        covered_fraction: s.covered_fraction,
        bracket_checks: s.bracket_checks,
        single_intersections: s.single_intersections,
        axioms,
    })
}

/// Default observable φ and the ψ whose coboundary ψ∘f − ψ is tested.
pub fn default_observables(map: &MapModel) -> (Observable, Observable) {
    if map.is_skew() {
        (Observable::Cosine { axis: 1, k: 0.5 }, Observable::Cosine { axis: 2, k: 0.5 })
    } else {
        (Observable::Cosine { axis: 0, k: 1.0 }, Observable::Cosine { axis: 1, k: 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsArtifact {
    pub observable: String,
    pub coboundary: String,
    pub birkhoff_n: usize,
    /// Birkhoff averages from two independent seeds.
    pub birkhoff: (f64, f64),
    /// Autocorrelation of φ at lags 1..=corr_lags.
    pub correlation: Vec<Estimate>,
    /// Log-linear fit over lags resolved above 3 standard errors, if at
    /// least five are.
    pub correlation_fit: Option<LogLinearFit>,
    pub variance: VarianceReport,
    pub coboundary_variance: VarianceReport,
    pub clt: CltReport,
    pub large_deviations: Vec<RateEstimate>,
    pub ld_monotone: bool,
}

pub fn stage_stats(map: &MapModel, cfg: &RunConfig) -> Result<StatsArtifact> {
    let seed = stage_seed(cfg.seed, Stage::Stats);
    let sub = |i: u64| stats::sample_seed(seed, i as usize);
    let (phi, psi) = default_observables(map);
    let cob = Observable::Coboundary(Box::new(psi));
    let birkhoff = (
        stats::birkhoff_average(map, &phi, BIRKHOFF_N, sub(0))?,
        stats::birkhoff_average(map, &phi, BIRKHOFF_N, sub(1))?,
    );
    let lags: Vec<usize> = (1..=cfg.corr_lags).collect();
    let correlation = stats::correlation(map, &phi, &phi, &lags, cfg.corr_samples, sub(2))?;
    let resolved: Vec<(f64, f64)> = correlation
        .iter()
        .filter(|e| e.estimate.abs() > 3.0 * e.error)
        .map(|e| (e.n as f64, e.estimate.abs()))
        .collect();
    let correlation_fit = if resolved.len() >= 5 { Some(fit_log_linear(&resolved)?) } else { None };
    let variance = stats::variance(map, &phi, cfg.variance_n, cfg.variance_samples, sub(3))?;
    let coboundary_variance = stats::variance(map, &cob, cfg.variance_n, cfg.variance_samples, sub(4))?;
    let clt = stats::clt_test(map, &phi, cfg.clt_block, cfg.clt_samples, sub(5))?;
    let large_deviations = stats::large_deviations(map, &phi, &cfg.ld_epsilons, &cfg.ld_n, cfg.ld_samples, sub(6))?;
    let ld_monotone = stats::rates_monotone(&large_deviations);
    Ok(StatsArtifact {
        observable: phi.name(),
        coboundary: cob.name(),
        birkhoff_n: BIRKHOFF_N,
        birkhoff,
        correlation,
        correlation_fit,
        variance,
        coboundary_variance,
        clt,
        large_deviations,
        ld_monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub stage: Stage,
    pub config: String,
    pub seed: u64,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Option<Stage>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: String,
    pub map: String,
    pub seed: u64,
    pub config: String,
    pub constants: Constants,
    /// n₀ of the base rectangle's auxiliary partition.
    pub n0: Option<usize>,
    pub net: Option<NetSummary>,
    pub filtration: Option<FiltrationSummary>,
    pub partition: Option<PartitionArtifact>,
    pub refine: Option<RefineSummary>,
    pub verify: Option<VerifyArtifact>,
    pub stats: Option<StatsArtifact>,
}

impl RunReport {
    /// Report with every stage section empty.
    pub fn empty(cfg: &RunConfig) -> Result<Self> {
        let map = map_for(cfg)?;
        Ok(RunReport {
            schema: REPORT_SCHEMA.into(),
            version: VERSION.into(),
            map: cfg.map.clone(),
            seed: cfg.seed,
            config: cfg.echo(),
            constants: constants_for(&map, cfg)?,
            n0: None,
            net: None,
            filtration: None,
            partition: None,
            refine: None,
            verify: None,
            stats: None,
        })
    }

    /// Base-rectangle τ tail (the refinement's base, else rectangle 0).
    pub fn base_tail(&self) -> Option<&TailReport> {
        let p = self.partition.as_ref()?;
        let base = self.refine.as_ref().map_or(0, |r| r.base);
        p.rects.iter().find(|r| r.rect == base).map(|r| &r.tail)
    }
}

/// Wall-clock seconds per executed stage, kept apart from the report so
/// the report stays byte-reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(Stage, f64)>,
}

fn stage_path(out: &Path, stage: Stage) -> std::path::PathBuf {
    out.join("stages").join(format!("{}.json", stage.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn save_stage<T: Serialize>(cfg: &RunConfig, stage: Stage, data: &T) -> Result<()> {
    let rec = StageRecord {
        stage,
        config: cfg.echo(),
        seed: stage_seed(cfg.seed, stage),
        data,
    };
    write_json(&stage_path(&cfg.out, stage), &rec)
}

/// Loads a stage record; `Ok(None)` when absent, an error when it was
/// produced under a different configuration.
pub fn load_stage<T: DeserializeOwned>(cfg: &RunConfig, stage: Stage) -> Result<Option<T>> {
    let path = stage_path(&cfg.out, stage);
    if !path.exists() {
        return Ok(None);
    }
    let rec: StageRecord<T> = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if rec.stage != stage || rec.config != cfg.echo() {
        return Err(YoungError::Precondition(format!(
            "stale {} artifact at {}: produced under a different configuration",
            stage.name(),
            path.display()
        )));
    }
    Ok(Some(rec.data))
}

fn require<T: DeserializeOwned>(cfg: &RunConfig, stage: Stage, have: Option<T>) -> Result<T> {
    match have {
        Some(x) => Ok(x),
        None => load_stage(cfg, stage)?.ok_or_else(|| {
            YoungError::Precondition(format!("stage {} has not been run in {}", stage.name(), cfg.out.display()))
        }),
    }
}

struct StageError(Stage, YoungError);

#[derive(Default)]
struct State {
    net: Option<NetArtifact>,
    filtration: Option<FiltrationSummary>,
    partition: Option<PartitionArtifact>,
    parts: Option<Vec<RectPartition>>,
    refine: Option<RefineArtifact>,
    verify: Option<VerifyArtifact>,
    stats: Option<StatsArtifact>,
}

impl State {
    fn net(&mut self, cfg: &RunConfig) -> Result<&NetArtifact> {
        if self.net.is_none() {
            self.net = Some(require(cfg, Stage::Net, None)?);
        }
        Ok(self.net.as_ref().unwrap())
    }

    /// Partitions in memory, rebuilt and fingerprint-checked when resuming.
    fn parts(&mut self, map: &MapModel, cfg: &RunConfig) -> Result<()> {
        if self.parts.is_some() {
            return Ok(());
        }
        let art: PartitionArtifact = require(cfg, Stage::Partition, self.partition.take())?;
        let parts = build_partitions(map, cfg, &self.net(cfg)?.net)?;
        let fp = partition_fingerprint(&parts);
        if fp != art.fingerprint {
            return Err(YoungError::Precondition(format!(
                "rebuilt partitions have fingerprint {fp}, recorded {}",
                art.fingerprint
            )));
        }
        self.partition = Some(art);
        self.parts = Some(parts);
        Ok(())
    }

    fn run(&mut self, map: &MapModel, cfg: &RunConfig, stage: Stage) -> Result<()> {
        match stage {
            Stage::Net => {
                let a = stage_net(map, cfg)?;
                save_stage(cfg, stage, &a)?;
                self.net = Some(a);
            }
            Stage::Filtrate => {
                let a = stage_filtrate(map, cfg)?;
                save_stage(cfg, stage, &a)?;
                self.filtration = Some(a);
            }
            Stage::Partition => {
                let parts = build_partitions(map, cfg, &self.net(cfg)?.net)?;
                let a = summarize_partitions(&parts)?;
                save_stage(cfg, stage, &a)?;
                self.partition = Some(a);
                self.parts = Some(parts);
            }
            Stage::Refine => {
                self.parts(map, cfg)?;
                let a = stage_refine(cfg, &self.net.as_ref().unwrap().net, self.parts.as_ref().unwrap())?;
                save_stage(cfg, stage, &a)?;
                self.refine = Some(a);
            }
            Stage::Verify => {
                self.parts(map, cfg)?;
                let refined: RefineArtifact = require(cfg, Stage::Refine, self.refine.take())?;
                let a = stage_verify(map, cfg, &self.net.as_ref().unwrap().net, self.parts.as_ref().unwrap(), &refined)?;
                save_stage(cfg, stage, &a)?;
                self.refine = Some(refined);
                self.verify = Some(a);
            }
            Stage::Stats => {
                let a = stage_stats(map, cfg)?;
                save_stage(cfg, stage, &a)?;
                self.stats = Some(a);
            }
        }
        Ok(())
    }

    fn fill(&mut self, cfg: &RunConfig) -> Result<()> {
        fn fill_one<T: DeserializeOwned>(cfg: &RunConfig, stage: Stage, slot: &mut Option<T>) -> Result<()> {
            if slot.is_none() {
                *slot = match load_stage(cfg, stage) {
                    Err(YoungError::Precondition(_)) => None,
                    r => r?,
                };
            }
            Ok(())
        }
        fill_one(cfg, Stage::Net, &mut self.net)?;
        fill_one(cfg, Stage::Filtrate, &mut self.filtration)?;
        fill_one(cfg, Stage::Partition, &mut self.partition)?;
        fill_one(cfg, Stage::Refine, &mut self.refine)?;
        fill_one(cfg, Stage::Verify, &mut self.verify)?;
        fill_one(cfg, Stage::Stats, &mut self.stats)
    }

    fn report(self, cfg: &RunConfig) -> Result<RunReport> {
        let mut r = RunReport::empty(cfg)?;
        r.net = self.net.map(|a| NetSummary {
            centers: a.net.centers.len(),
            rectangles: a.net.rectangles.len(),
            spacing: a.net.spacing,
            validation: a.validation,
        });
        r.filtration = self.filtration;
        r.partition = self.partition;
        r.refine = self.refine.map(|a| a.summary());
        r.verify = self.verify;
        r.stats = self.stats;
        if let Some(p) = &r.partition {
            let base = r.refine.as_ref().map_or(0, |x| x.base);
            r.n0 = p.rects.iter().find(|x| x.rect == base).map(|x| x.n0);
        }
        Ok(r)
    }
}

/// Runs `cfg.stages` in pipeline order inside a pool of `cfg.workers`
/// threads, then assembles the report from every stage record in the
/// output directory produced under the same configuration. Does not write report files; see [`execute`].
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    run_timed(cfg).map(|(r, _)| r).map_err(|StageError(_, e)| e)
}

fn run_timed(cfg: &RunConfig) -> std::result::Result<(RunReport, Timings), StageError> {
    let first = cfg.stages.first().copied().unwrap_or(Stage::Net);
    cfg.validate().map_err(|e| StageError(first, e))?;
    let map = map_for(cfg).map_err(|e| StageError(first, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| StageError(first, YoungError::Io(e.to_string())))?;
    pool.install(|| {
        let mut state = State::default();
        let mut timings = Timings::default();
        let mut stages = cfg.stages.clone();
        stages.sort();
        for stage in stages {
            let t = Instant::now();
            state.run(&map, cfg, stage).map_err(|e| StageError(stage, e))?;
            timings.stages.push((stage, t.elapsed().as_secs_f64()));
        }
        let last = cfg.stages.last().copied().unwrap_or(Stage::Stats);
        state.fill(cfg).map_err(|e| StageError(last, e))?;
        let report = state.report(cfg).map_err(|e| StageError(last, e))?;
        Ok((report, timings))
    })
}

/// Runs the pipeline and writes reports to `cfg.out`; on failure writes
/// `error.json` naming the stage and cause, and returns the error.
pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    match run_timed(cfg) {
        Ok((report, timings)) => {
            emit_reports(&report, &cfg.out, cfg.plots)?;
            write_json(&cfg.out.join("timings.json"), &timings)?;
            let stale = cfg.out.join("error.json");
            if stale.exists() {
                std::fs::remove_file(stale)?;
            }
            Ok(report)
        }
        Err(StageError(stage, e)) => {
            let rec = ErrorRecord {
                stage: Some(stage),
                error: e.to_string(),
            };
            write_json(&cfg.out.join("error.json"), &rec)?;
            Err(e)
        }
    }
}

/// Writes report.json, tails.csv, tails_star.csv, axioms.json,
/// filtration.csv, stats/*.csv and, when `plots`, SVG plots. Files for
/// absent sections are not written.
pub fn emit_reports(report: &RunReport, dir: &Path, plots: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), report)?;
    if let Some(t) = report.base_tail() {
        std::fs::write(dir.join("tails.csv"), t.to_csv())?;
        if plots {
            std::fs::write(dir.join("tails.svg"), crate::plot::tail_plot("m{tau > n}", t))?;
        }
    }
    if let Some(r) = &report.refine {
        std::fs::write(dir.join("tails_star.csv"), r.star_tail.to_csv())?;
        if plots {
            std::fs::write(dir.join("tails_star.svg"), crate::plot::tail_plot("m{tau* > n}", &r.star_tail))?;
        }
    }
    if let Some(v) = &report.verify {
        write_json(&dir.join("axioms.json"), &v.axioms)?;
    }
    if let Some(f) = &report.filtration {
        let mut s = String::from("curve,length,levels,z0,n0,max_ratio,recursion_failures,post_n0_levels,z_bound_failures,interior_failures\n");
        for (i, c) in f.per_curve.iter().enumerate() {
            s += &format!(
                "{i},{},{},{},{},{},{},{},{},{}\n",
                c.length, c.levels, c.z0, c.n0, c.max_ratio, c.recursion_failures, c.post_n0_levels, c.z_bound_failures, c.interior_failures
            );
        }
        std::fs::write(dir.join("filtration.csv"), s)?;
    }
    if let Some(st) = &report.stats {
        let d = dir.join("stats");
        std::fs::create_dir_all(&d)?;
        let mut s = String::from("n,estimate,error\n");
        for e in &st.correlation {
            s += &format!("{},{},{}\n", e.n, e.estimate, e.error);
        }
        std::fs::write(d.join("correlation.csv"), s)?;
        let mut s = String::from("observable,n,samples,sigma2,error,sigma2_doubled,error_doubled,doubling_ratio\n");
        for (name, v) in [(&st.observable, &st.variance), (&st.coboundary, &st.coboundary_variance)] {
            s += &format!(
                "{name},{},{},{},{},{},{},{}\n",
                v.n, v.samples, v.sigma2, v.error, v.sigma2_doubled, v.error_doubled, v.doubling_ratio
            );
        }
        std::fs::write(d.join("variance.csv"), s)?;
        let mut s = String::from("z,density,normal_density\n");
        for (x, a, b) in &st.clt.histogram {
            s += &format!("{x},{a},{b}\n");
        }
        std::fs::write(d.join("clt_histogram.csv"), s)?;
        let mut s = String::from("n,epsilon,count,probability,rate,error,censored\n");
        for r in &st.large_deviations {
            let err = r.error.map_or(String::new(), |e| e.to_string());
            s += &format!("{},{},{},{},{},{err},{}\n", r.n, r.epsilon, r.count, r.probability, r.rate, r.censored);
        }
        std::fs::write(d.join("large_deviations.csv"), s)?;
        if plots {
            std::fs::write(dir.join("clt_histogram.svg"), crate::plot::histogram_plot(&st.clt.histogram))?;
            std::fs::write(dir.join("correlation.svg"), crate::plot::correlation_plot(&st.correlation))?;
        }
    }
    Ok(())
}
