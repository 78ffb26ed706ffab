use std::path::Path;
use std::sync::OnceLock;

use young_core::config::{RunConfig, Stage};
use young_core::pipeline::{self, build_partitions, map_for, stage_net, stage_refine, RefineArtifact, RunReport};
use young_core::refinement::{check_recursion, refined_from_path, RectPartition};

struct Built {
    parts: Vec<RectPartition>,
    refined: RefineArtifact,
}

fn smoke() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf");
    RunConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn built() -> &'static Built {
    static B: OnceLock<Built> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = smoke();
        let map = map_for(&cfg).unwrap();
        let net = stage_net(&map, &cfg).unwrap().net;
        let parts = build_partitions(&map, &cfg, &net).unwrap();
        let refined = stage_refine(&cfg, &net, &parts).unwrap();
        Built { parts, refined }
    })
}

#[test]
fn partition_mass_is_conserved() {
    for p in &built().parts {
        let r = &p.partition;
        let elements: f64 = r.elements.iter().map(|e| e.mass).sum();
        assert!((elements + r.leftover - r.total_mass).abs() <= 1e-9 * r.total_mass, "rectangle {}", p.rect);
    }
}

#[test]
fn partition_elements_are_disjoint() {
    for p in &built().parts {
        assert!(p.partition.check_disjoint(), "rectangle {}", p.rect);
    }
}

#[test]
fn phases_telescope_to_the_return_time() {
    for p in &built().parts {
        for e in &p.partition.elements {
            assert_eq!(e.phases.total(), e.tau);
        }
    }
}

#[test]
fn capture_count_tail_decays_geometrically() {
    for p in &built().parts {
        let r = &p.partition;
        let eps = r.epsilon1();
        assert!(eps > 0.0 && eps <= 1.0);
        let nt = r.n_tail();
        for (k, m) in nt.iter().enumerate() {
            assert!(*m <= nt[0] * (1.0 - eps).powi(k as i32) * (1.0 + 1e-9), "rectangle {} k {k}", p.rect);
        }
    }
}

#[test]
fn refined_chains_satisfy_the_stopping_time_recursion() {
    let b = built();
    let samples = &b.refined.refinement.samples;
    assert!(!samples.is_empty());
    for e in samples {
        assert!(check_recursion(&b.parts, e));
        assert_eq!(e.stopping_times.len(), e.k);
        assert_eq!(*e.stopping_times.last().unwrap(), e.tau_star);
        assert!(e.stopping_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(&refined_from_path(&b.parts, e.path.clone()), e);
    }
}

#[test]
fn empty_report_serializes_with_null_sections() {
    let cfg = smoke();
    let r = RunReport::empty(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(v["schema"], pipeline::REPORT_SCHEMA);
    for k in ["net", "filtration", "partition", "refine", "verify", "stats"] {
        assert!(v[k].is_null(), "{k}");
    }
}

#[test]
fn net_only_run_writes_no_tails() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.out = dir.path().to_path_buf();
    cfg.stages = vec![Stage::Net];
    let r = pipeline::execute(&cfg).unwrap();
    assert!(r.net.is_some() && r.partition.is_none());
    assert!(dir.path().join("report.json").exists());
    assert!(!dir.path().join("tails.csv").exists());
}

#[test]
fn tails_csv_has_fixed_columns_and_plots_are_optional() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.out = dir.path().to_path_buf();
    cfg.stages = vec![Stage::Net, Stage::Filtrate, Stage::Partition];
    let r = pipeline::execute(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("tails.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("n,mass,log_mass,fit_value"));
    assert!(!dir.path().join("tails.svg").exists());
    let plotted = dir.path().join("plotted");
    pipeline::emit_reports(&r, &plotted, true).unwrap();
    assert!(plotted.join("tails.svg").exists());
}
