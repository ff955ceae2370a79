//! The bundled fixtures regenerate byte for byte and run through every stage.

use std::fs;
use std::path::{Path, PathBuf};

use seamforge::geometry::PointCloud;
use seamforge::pcio::{
    parse_path_csv, path_csv_string, ply_string, read_ply, read_session, write_ply, write_session, ScanSession,
};
use seamforge::pipeline::{self, PipelineConfig, Truth};
use seamforge::synth::{default_hand_eye, default_script, scan_session, Workpiece, WorkpieceKind};

fn fixture(kind: WorkpieceKind) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(kind.name())
}

fn fixture_config(kind: WorkpieceKind) -> PipelineConfig {
    PipelineConfig::from_json(&fs::read_to_string(fixture(kind).join("config.json")).unwrap()).unwrap()
}

fn regenerate(kind: WorkpieceKind, stored: &ScanSession) -> ScanSession {
    let density = stored.metadata["density"].as_f64().unwrap();
    let seed = stored.metadata["sample_seed"].as_u64().unwrap();
    scan_session(&Workpiece::new(kind), &default_script(kind, seed), density, seed, &default_hand_eye()).unwrap()
}

#[test]
fn fixtures_regenerate_byte_for_byte() {
    for kind in WorkpieceKind::ALL {
        let dir = fixture(kind);
        let stored = read_session(&dir).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_session(&regenerate(kind, &stored), tmp.path()).unwrap();
        let mut names: Vec<String> =
            fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert!(names.len() >= 2, "{kind:?}");
        for name in names {
            let fresh = fs::read(tmp.path().join(&name)).unwrap();
            let kept = fs::read(dir.join(&name)).unwrap_or_else(|e| panic!("{kind:?} {name}: {e}"));
            assert!(fresh == kept, "{kind:?} {name} differs from its regeneration");
        }
    }
}

#[test]
fn fixture_configs_are_the_bundled_ones() {
    for kind in WorkpieceKind::ALL {
        let cfg = fixture_config(kind);
        let mut bundled = PipelineConfig::for_workpiece(kind);
        bundled.path.normal_radius_factor = cfg.path.normal_radius_factor;
        assert_eq!(cfg, bundled, "{kind:?}");
    }
}

/// Each stage's output, written and read back, feeds the next one.
#[test]
fn stages_compose_through_files() {
    let kind = WorkpieceKind::VButtPlate;
    let cfg = fixture_config(kind);
    let session = read_session(&fixture(kind)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let round = |cloud: &PointCloud, name: &str| -> PointCloud {
        let file = tmp.path().join(name);
        write_ply(cloud, &file).unwrap();
        read_ply(&file).unwrap()
    };

    let rec = pipeline::reconstruct(&session, &cfg).unwrap();
    let model = round(&rec.model, "model.ply");
    let denoised = round(&pipeline::denoise(&model, &cfg).unwrap(), "denoised.ply");
    assert_eq!(denoised.len(), model.len());
    let detection = pipeline::detect(&denoised, &cfg).unwrap();
    let edges = round(&denoised.select(&detection.edges), "edges.ply");
    assert!(!edges.is_empty());
    let planned = pipeline::plan_path(&edges, &model, &cfg).unwrap();
    let path = parse_path_csv(&path_csv_string(&planned.poses).unwrap()).unwrap();
    assert_eq!(path.len(), planned.poses.len());
    assert!(path.iter().all(|p| p.frame_error() <= 1e-6));

    let truth = Truth::for_workpiece(kind, &cfg).unwrap();
    let report = pipeline::evaluate(Some(edges.points()), Some(&path), &truth, &cfg).unwrap();
    assert!(report.seam.unwrap().f1 >= 0.9);
    let rmse = report.path.unwrap();
    assert!(rmse.position_m <= 1e-3 && rmse.rotation_deg <= 2.0, "{rmse:?}");

    // the one-call pipeline builds the same model (later stages differ by the f32 file precision)
    let out = pipeline::run(&session, &cfg).unwrap();
    assert_eq!(ply_string(&out.model), ply_string(&rec.model));
}

#[test]
fn every_fixture_runs_end_to_end() {
    for kind in WorkpieceKind::ALL {
        let out = pipeline::run(&read_session(&fixture(kind)).unwrap(), &fixture_config(kind)).unwrap();
        assert!(out.path.poses.len() >= 2, "{kind:?}");
        assert!(out.path.poses.iter().all(|p| p.frame_error() <= 1e-9), "{kind:?}");
        assert!(out.report.eval.is_some(), "{kind:?}");
    }
}
