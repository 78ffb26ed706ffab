//! Plain-text `key = value` run configuration.
//!
//! Keys (defaults in brackets):
//!
//! | key | meaning |
//! |---|---|
//! | `map` | `linear-cat`, `solenoid` or `mostly-contracting` [solenoid] |
//! | `lambda_c`, `kappa` | skew-product fiber parameters [0.25, 0.5] |
//! | `delta0` | largest admissible diameter [80 for linear-cat, 300 otherwise] |
//! | `delta2` | absolute δ₂ override [auto] |
//! | `delta2_fraction` | δ₂ = fraction·δ₁ (exclusive with `delta2`) [1/3] |
//! | `c1`, `eta_geom` | δ₃ = c₁δ₂ and geometric tolerance [0.5, 1e-6] |
//! | `net_budget`, `net_depth` | orbit samples for the net, rectangle base depth [200000, 1] |
//! | `curves`, `filtration_levels`, `filtration_delta0` | filtration corpus [100, 10, delta0] |
//! | `n_max`, `population` | auxiliary partition horizon and live cap [400, 1000] |
//! | `depth_max`, `horizon`, `refine_samples` | refinement [100, 2500, 2000] |
//! | `leftover_budget` | allowed unreturned mass [1e-4] |
//! | `verify_pairs`, `verify_depth` | axiom sampling [1000, 6] |
//! | `corr_samples`, `corr_lags` | correlation orbit length and largest lag [1000000, 10] |
//! | `variance_n`, `variance_samples` | [1000, 1000] |
//! | `clt_block`, `clt_samples` | [1000, 10000] |
//! | `ld_epsilons`, `ld_n`, `ld_samples` | comma lists and sample count [0.05,0.1,0.15; 50,100,200; 20000] |
//! | `seed`, `out`, `stages`, `workers`, `plots` | [0, out, all stages, 1, false] |
//!
//! Per-stage seeds are `splitmix64(seed ⊕ (i+1)·0x9e3779b97f4a7c15)` with
//! `i` the stage index in pipeline order.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Result, YoungError};
use crate::maps::splitmix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Net,
    Filtrate,
    Partition,
    Refine,
    Verify,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Net, Stage::Filtrate, Stage::Partition, Stage::Refine, Stage::Verify, Stage::Stats];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Net => "net",
            Stage::Filtrate => "filtrate",
            Stage::Partition => "partition",
            Stage::Refine => "refine",
            Stage::Verify => "verify",
            Stage::Stats => "stats",
        }
    }

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| YoungError::Config(format!("unknown stage '{s}'")))
    }
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut s = seed ^ ((stage.index() as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix(&mut s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub map: String,
    pub lambda_c: f64,
    pub kappa: f64,
    pub delta0: f64,
    pub delta2: Option<f64>,
    pub delta2_fraction: Option<f64>,
    pub c1: f64,
    pub eta_geom: f64,
    pub net_budget: usize,
    pub net_depth: usize,
    pub curves: usize,
    pub filtration_levels: usize,
    pub filtration_delta0: Option<f64>,
    pub n_max: usize,
    pub population: usize,
    pub depth_max: usize,
    pub horizon: usize,
    pub refine_samples: usize,
    pub leftover_budget: f64,
    pub verify_pairs: usize,
    pub verify_depth: usize,
    pub corr_samples: usize,
    pub corr_lags: usize,
    pub variance_n: usize,
    pub variance_samples: usize,
    pub clt_block: usize,
    pub clt_samples: usize,
    pub ld_epsilons: Vec<f64>,
    pub ld_n: Vec<usize>,
    pub ld_samples: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<Stage>,
    pub workers: usize,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: "solenoid".into(),
            lambda_c: 0.25,
            kappa: 0.5,
            delta0: 300.0,
            delta2: None,
            delta2_fraction: None,
            c1: 0.5,
            eta_geom: 1e-6,
            net_budget: 200_000,
            net_depth: 1,
            curves: 100,
            filtration_levels: 10,
            filtration_delta0: None,
            n_max: 400,
            population: 1000,
            depth_max: 100,
            horizon: 2500,
            refine_samples: 2000,
            leftover_budget: 1e-4,
            verify_pairs: 1000,
            verify_depth: 6,
            corr_samples: 1_000_000,
            corr_lags: 10,
            variance_n: 1000,
            variance_samples: 1000,
            clt_block: 1000,
            clt_samples: 10_000,
            ld_epsilons: vec![0.05, 0.1, 0.15],
            ld_n: vec![50, 100, 200],
            ld_samples: 20_000,
            seed: 0,
            out: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
            workers: 1,
            plots: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| YoungError::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults for a map, then the `key = value` lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut delta0_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| YoungError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "delta0" {
                delta0_set = true;
            }
            c.set(k, v)?;
        }
        if !delta0_set {
            c.delta0 = default_delta0(&c.map);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn for_map(map: &str) -> Self {
        RunConfig {
            map: map.into(),
            delta0: default_delta0(map),
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "map" => self.map = v.to_string(),
            "lambda_c" => self.lambda_c = parse_num(k, v)?,
            "kappa" => self.kappa = parse_num(k, v)?,
            "delta0" => self.delta0 = parse_num(k, v)?,
            "delta2" => self.delta2 = parse_auto(k, v)?,
            "delta2_fraction" => self.delta2_fraction = parse_auto(k, v)?,
            "c1" => self.c1 = parse_num(k, v)?,
            "eta_geom" => self.eta_geom = parse_num(k, v)?,
            "net_budget" => self.net_budget = parse_num(k, v)?,
            "net_depth" => self.net_depth = parse_num(k, v)?,
            "curves" => self.curves = parse_num(k, v)?,
            "filtration_levels" => self.filtration_levels = parse_num(k, v)?,
            "filtration_delta0" => self.filtration_delta0 = parse_auto(k, v)?,
            "n_max" => self.n_max = parse_num(k, v)?,
            "population" => self.population = parse_num(k, v)?,
            "depth_max" => self.depth_max = parse_num(k, v)?,
            "horizon" => self.horizon = parse_num(k, v)?,
            "refine_samples" => self.refine_samples = parse_num(k, v)?,
            "leftover_budget" => self.leftover_budget = parse_num(k, v)?,
            "verify_pairs" => self.verify_pairs = parse_num(k, v)?,
            "verify_depth" => self.verify_depth = parse_num(k, v)?,
            "corr_samples" => self.corr_samples = parse_num(k, v)?,
            "corr_lags" => self.corr_lags = parse_num(k, v)?,
            "variance_n" => self.variance_n = parse_num(k, v)?,
            "variance_samples" => self.variance_samples = parse_num(k, v)?,
            "clt_block" => self.clt_block = parse_num(k, v)?,
            "clt_samples" => self.clt_samples = parse_num(k, v)?,
            "ld_epsilons" => self.ld_epsilons = parse_list(k, v)?,
            "ld_n" => self.ld_n = parse_list(k, v)?,
            "ld_samples" => self.ld_samples = parse_num(k, v)?,
            "seed" => self.seed = parse_num(k, v)?,
            "out" => self.out = PathBuf::from(v),
            "stages" => self.stages = v.split(',').map(|s| Stage::parse(s.trim())).collect::<Result<_>>()?,
            "workers" => self.workers = parse_num(k, v)?,
            "plots" => self.plots = parse_num(k, v)?,
            _ => return Err(YoungError::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_c", self.lambda_c),
            ("delta0", self.delta0),
            ("c1", self.c1),
            ("eta_geom", self.eta_geom),
            ("leftover_budget", self.leftover_budget),
        ];
        if let Some((k, v)) = positive.iter().find(|p| !(p.1 > 0.0)) {
            return Err(YoungError::Config(format!("{k} = {v} must be positive")));
        }
        if self.delta2.is_some() && self.delta2_fraction.is_some() {
            return Err(YoungError::Config("delta2 and delta2_fraction are exclusive".into()));
        }
        if let Some(d) = self.delta2.or(self.filtration_delta0) {
            if !(d > 0.0) {
                return Err(YoungError::Config(format!("length {d} must be positive")));
            }
        }
        if let Some(f) = self.delta2_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(YoungError::Config(format!("delta2_fraction = {f} outside (0, 1)")));
            }
        }
        let first = self.stages.first().map_or(0, |s| s.index());
        if self.stages.iter().enumerate().any(|(i, s)| s.index() != first + i) {
            return Err(YoungError::Config("stages must be consecutive in pipeline order".into()));
        }
        if self.workers == 0 {
            return Err(YoungError::Config("workers must be at least 1".into()));
        }
        if self.ld_epsilons.is_empty() || self.ld_n.is_empty() {
            return Err(YoungError::Config("large-deviation lists must be nonempty".into()));
        }
        Ok(())
    }

    /// δ₂ as a fraction of δ₁ when no absolute override is given.
    pub fn delta2_for(&self, delta1: f64) -> f64 {
        self.delta2.unwrap_or(delta1 * self.delta2_fraction.unwrap_or(1.0 / 3.0))
    }

    /// Canonical text of the parameters that determine results (seed
    /// included; output location, stages, workers and plots excluded).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "map = {}", self.map);
        let _ = writeln!(s, "lambda_c = {}", self.lambda_c);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "delta0 = {}", self.delta0);
        let _ = writeln!(s, "delta2 = {}", opt(self.delta2));
        let _ = writeln!(s, "delta2_fraction = {}", opt(self.delta2_fraction));
        let _ = writeln!(s, "c1 = {}", self.c1);
        let _ = writeln!(s, "eta_geom = {}", self.eta_geom);
        let _ = writeln!(s, "net_budget = {}", self.net_budget);
        let _ = writeln!(s, "net_depth = {}", self.net_depth);
        let _ = writeln!(s, "curves = {}", self.curves);
        let _ = writeln!(s, "filtration_levels = {}", self.filtration_levels);
        let _ = writeln!(s, "filtration_delta0 = {}", opt(self.filtration_delta0));
        let _ = writeln!(s, "n_max = {}", self.n_max);
        let _ = writeln!(s, "population = {}", self.population);
        let _ = writeln!(s, "depth_max = {}", self.depth_max);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "refine_samples = {}", self.refine_samples);
        let _ = writeln!(s, "leftover_budget = {}", self.leftover_budget);
        let _ = writeln!(s, "verify_pairs = {}", self.verify_pairs);
        let _ = writeln!(s, "verify_depth = {}", self.verify_depth);
        let _ = writeln!(s, "corr_samples = {}", self.corr_samples);
        let _ = writeln!(s, "corr_lags = {}", self.corr_lags);
        let _ = writeln!(s, "variance_n = {}", self.variance_n);
        let _ = writeln!(s, "variance_samples = {}", self.variance_samples);
        let _ = writeln!(s, "clt_block = {}", self.clt_block);
        let _ = writeln!(s, "clt_samples = {}", self.clt_samples);
        let _ = writeln!(s, "ld_epsilons = {}", join(&self.ld_epsilons));
        let _ = writeln!(s, "ld_n = {}", join(&self.ld_n));
        let _ = writeln!(s, "ld_samples = {}", self.ld_samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

pub fn default_delta0(map: &str) -> f64 {
    if map == "linear-cat" {
        80.0
    } else {
        300.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::for_map("linear-cat");
        c.delta2_fraction = Some(0.25);
        c.ld_n = vec![10, 20];
        let back = RunConfig::parse(&c.echo()).unwrap();
        assert_eq!(back.echo(), c.echo());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("delta0 = -1").is_err());
        assert!(RunConfig::parse("stages = net,partition").is_err());
        assert!(RunConfig::parse("delta2 = 1\ndelta2_fraction = 0.3").is_err());
        assert!(RunConfig::parse("stages = partition,refine").is_ok());
    }

    #[test]
    fn map_default_delta0() {
        assert_eq!(RunConfig::parse("map = linear-cat").unwrap().delta0, 80.0);
        assert_eq!(RunConfig::parse("map = linear-cat\ndelta0 = 5").unwrap().delta0, 5.0);
    }

    #[test]
    fn stage_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = Stage::ALL.iter().map(|st| stage_seed(7, *st)).collect();
        assert_eq!(s.len(), Stage::ALL.len());
    }
}
