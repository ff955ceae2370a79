use super::*;
use crate::registration::compose_to_base;
use crate::transform::RigidTransform;
use nalgebra::Vector3;

fn unit_plate() -> Workpiece {
    Workpiece {
        kind: WorkpieceKind::Dihedral,
        patches: vec![Patch::rect(Point3::origin(), Vector3::x(), Vector3::y(), Vector3::z())],
        seam: SeamCurve::Line { a: Point3::origin(), b: Point3::new(1.0, 0.0, 0.0), normal: Vector3::z() },
    }
}

#[test]
fn unit_square_plate() {
    let c = sample_surface(&unit_plate(), 1e4, 1).unwrap();
    assert_eq!(c.len(), 10_000);
    assert!(c.points().iter().all(|p| p.z == 0.0 && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    assert!(c.normals().unwrap().iter().all(|n| *n == Vector3::z()));
}

#[test]
fn cylinder_wall_at_radius() {
    let w = Workpiece::new(WorkpieceKind::CylinderOnPlate);
    let c = sample_surface(&w, 2e5, 3).unwrap();
    let mut wall = 0;
    for (p, n) in c.points().iter().zip(c.normals().unwrap()) {
        if n.z == 0.0 && n.x.abs() + n.y.abs() > 0.0 && p.z > 0.0 {
            let r = (p.x * p.x + p.y * p.y).sqrt();
            if (r - dims::CYLINDER_RADIUS).abs() < 1e-3 {
                wall += 1;
                assert!((r - dims::CYLINDER_RADIUS).abs() < 1e-12);
            }
        }
    }
    let expected = 2.0 * PI * dims::CYLINDER_RADIUS * dims::CYLINDER_HEIGHT * 2e5;
    assert!((wall as f64 - expected).abs() / expected < 0.02, "{wall} vs {expected}");
}

#[test]
fn plate_has_hole_under_cylinder() {
    let w = Workpiece::new(WorkpieceKind::CylinderOnPlate);
    let c = sample_surface(&w, 1e5, 3).unwrap();
    let r = dims::CYLINDER_RADIUS;
    assert!(!c.points().iter().any(|p| p.z == 0.0 && p.x * p.x + p.y * p.y < r * r));
}

#[test]
fn v_butt_seam_is_groove_root() {
    let w = Workpiece::new(WorkpieceKind::VButtPlate);
    let pts = w.seam_points(0.01).unwrap();
    assert_eq!(pts.len(), 51);
    for p in &pts {
        assert_eq!(p.y, 0.0);
        assert_eq!(p.z, -dims::V_BUTT_THICKNESS);
    }
    // both bevel planes pass through the root line
    let c = sample_surface(&w, 1e5, 0).unwrap();
    let bevel = c.points().iter().zip(c.normals().unwrap()).filter(|(_, n)| n.z < 0.99).count();
    assert!(bevel > 0);
    for (p, n) in c.points().iter().zip(c.normals().unwrap()) {
        if n.z < 0.99 {
            let plane = (p - pts[0]).dot(n);
            assert!(plane.abs() < 1e-12);
        }
    }
}

#[test]
fn seam_points_lie_on_surfaces() {
    let s = 0.002;
    let cyl = Workpiece::new(WorkpieceKind::CylinderOnPlate).seam_points(s).unwrap();
    for p in &cyl {
        assert!(p.z.abs() < 1e-12);
        assert!(((p.x * p.x + p.y * p.y).sqrt() - dims::CYLINDER_RADIUS).abs() < 1e-12);
    }
    let y = Workpiece::new(WorkpieceKind::YShape);
    let SeamCurve::Saddle { axis, .. } = &y.seam else { panic!("expected saddle") };
    for p in y.seam_points(s).unwrap() {
        assert!(((p.y * p.y + p.z * p.z).sqrt() - dims::Y_MAIN_RADIUS).abs() < 1e-12);
        let along = p.coords.dot(axis);
        assert!(along > 0.0);
        assert!(((p.coords - axis * along).norm() - dims::Y_BRANCH_RADIUS).abs() < 1e-12);
    }
    for p in Workpiece::new(WorkpieceKind::Dihedral).seam_points(s).unwrap() {
        assert_eq!((p.y, p.z), (0.0, 0.0));
    }
}

#[test]
fn seam_resampling_keeps_chord_spacing() {
    for kind in WorkpieceKind::ALL {
        let w = Workpiece::new(kind);
        for s in [0.001, 0.004] {
            let pts = w.seam_points(s).unwrap();
            let n = if w.seam_is_closed() { pts.len() } else { pts.len() - 1 };
            for i in 0..n - 1 {
                let chord = (pts[i + 1] - pts[i]).norm();
                assert!((chord - s).abs() < 0.01 * s, "{kind:?} step {i}: {chord}");
            }
        }
    }
}

#[test]
fn truth_path_frames_are_valid() {
    for kind in WorkpieceKind::ALL {
        let w = Workpiece::new(kind);
        let path = w.truth_path(0.005, 0.005).unwrap();
        for p in &path {
            assert!(p.frame_error() < 1e-9);
        }
        let first = w.seam.point(0.0);
        assert!(((path[0].position - first).norm() - 0.005).abs() < 1e-12);
    }
}

#[test]
fn top_down_plate_scan_sees_everything() {
    let w = unit_plate();
    let samples = sample_surface(&w, 2500.0, 2).unwrap();
    let s = ScannerModel::looking_at(Point3::new(0.5, 0.5, 2.0), Point3::new(0.5, 0.5, 0.0), Vector3::y()).unwrap();
    let cap = virtual_scan(&samples, &s).unwrap();
    assert_eq!(cap.visible.len(), samples.len());
    assert_eq!(cap.reported_pose, cap.true_pose);
    for (i, p) in cap.visible.iter().zip(cap.cloud.points()) {
        assert!((cap.true_pose.apply_point(p) - samples.points()[*i]).norm() < 1e-12);
    }
}

#[test]
fn side_scan_misses_back_of_cylinder() {
    let full = Workpiece::new(WorkpieceKind::CylinderOnPlate);
    let wall: Vec<Patch> = full.patches.into_iter().filter(|p| matches!(p.surface, Surface::Tube { .. })).collect();
    let w = Workpiece { patches: wall, ..Workpiece::new(WorkpieceKind::CylinderOnPlate) };
    let samples = sample_surface(&w, 1e6, 5).unwrap();
    let s = ScannerModel::looking_at(Point3::new(0.6, 0.0, 0.05), Point3::new(0.0, 0.0, 0.05), Vector3::z()).unwrap();
    let cap = virtual_scan(&samples, &s).unwrap();
    let frac = cap.visible.len() as f64 / samples.len() as f64;
    assert!(frac <= 0.55 && frac > 0.3, "{frac}");
    assert!(cap.visible.iter().all(|&i| samples.points()[i].x > 0.0));
}

#[test]
fn pose_noise_is_exact() {
    let samples = sample_surface(&unit_plate(), 2500.0, 2).unwrap();
    let mut s = ScannerModel::looking_at(Point3::new(0.5, 0.5, 2.0), Point3::new(0.5, 0.5, 0.0), Vector3::y()).unwrap();
    s.pose_noise = (1.0, 0.002);
    s.seed = 9;
    let cap = virtual_scan(&samples, &s).unwrap();
    let delta = cap.reported_pose.compose(&cap.true_pose.inverse());
    let (angle, dist) = delta.magnitude();
    assert!((angle - 1f64.to_radians()).abs() < 1e-12, "{angle}");
    assert!((dist - 0.002).abs() < 1e-12, "{dist}");
}

#[test]
fn looking_away_is_empty_view() {
    let samples = sample_surface(&unit_plate(), 2500.0, 2).unwrap();
    let s = ScannerModel::looking_at(Point3::new(0.5, 0.5, 2.0), Point3::new(0.5, 0.5, 3.0), Vector3::y()).unwrap();
    assert!(matches!(virtual_scan(&samples, &s), Err(Error::EmptyView)));
}

#[test]
fn exact_session_reproduces_samples() {
    let w = Workpiece::new(WorkpieceKind::CylinderOnPlate);
    let density = 1e5;
    let mut script = default_script(w.kind, 4);
    for s in &mut script {
        s.depth_noise_sigma = 0.0;
        s.pose_noise = (0.0, 0.0);
    }
    let session = scan_session(&w, &script, density, 11, &default_hand_eye()).unwrap();
    let samples = sample_surface(&w, density, 11).unwrap();
    let index = crate::geometry::SpatialIndex::build(&samples).unwrap();
    for f in &session.frames {
        for p in compose_to_base(f).points() {
            assert!(index.nearest(p).dist_sq.sqrt() < 1e-9);
        }
    }
}

#[test]
fn default_scripts_cover_workpieces() {
    for kind in WorkpieceKind::ALL {
        let w = Workpiece::new(kind);
        let density = 2e5;
        let mut script = default_script(kind, 1);
        for s in &mut script {
            s.pose_noise = (0.0, 0.0);
        }
        let session = scan_session(&w, &script, density, 5, &default_hand_eye()).unwrap();
        let union = session.frames.iter().map(compose_to_base).reduce(|a, b| a.concat(&b)).unwrap();
        let full = sample_surface(&w, density, 5).unwrap();
        let cov = coverage(&full, &union, 0.002).unwrap();
        assert!(cov >= 0.95, "{kind:?}: {cov}");
    }
}

#[test]
fn single_pose_session() {
    let w = Workpiece::new(WorkpieceKind::Dihedral);
    let session = scan_session(&w, &default_script(w.kind, 0), 1e5, 0, &RigidTransform::identity()).unwrap();
    assert_eq!(session.frames.len(), 1);
    assert_eq!(session.metadata["workpiece"], "dihedral");
}

#[test]
fn sessions_are_reproducible() {
    let w = Workpiece::new(WorkpieceKind::YShape);
    let a = scan_session(&w, &default_script(w.kind, 3), 1e5, 3, &default_hand_eye()).unwrap();
    let b = scan_session(&w, &default_script(w.kind, 3), 1e5, 3, &default_hand_eye()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kind_names_round_trip() {
    for k in WorkpieceKind::ALL {
        assert_eq!(k.name().parse::<WorkpieceKind>().unwrap(), k);
    }
    assert!("cube".parse::<WorkpieceKind>().is_err());
}
