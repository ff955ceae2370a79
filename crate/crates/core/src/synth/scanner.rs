//! Posed pinhole depth scanner over a dense surface sampling.
//!
//! The camera looks along its +z axis. Visibility is a z-buffer on a square
//! pixel grid: a front-facing sample is kept when its depth is within a couple
//! of pixel footprints of the nearest depth seen in its pixel.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{deg, sample_surface, Workpiece, WorkpieceKind};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SpatialIndex};
use crate::pcio::{ScanFrame, ScanSession};
use crate::transform::RigidTransform;

/// Default dense sampling for scans: 1.5 mm spacing.
pub const SCAN_DENSITY: f64 = 1.0 / (0.0015 * 0.0015);

/// Depth slack, in pixel footprints at the nearest depth of the pixel.
const DEPTH_SLACK: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScannerModel {
    /// Camera to base; the camera looks along its +z axis.
    pub pose: RigidTransform,
    /// Full field of view of the square image, degrees.
    pub fov_deg: f64,
    /// Pixels per side.
    pub resolution: usize,
    pub depth_noise_sigma: f64,
    /// Reported pose error: (rotation degrees, translation meters).
    pub pose_noise: (f64, f64),
    pub seed: u64,
}

impl ScannerModel {
    /// Camera at `eye` looking at `target`, image y roughly opposite to `up`.
    pub fn looking_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-9 {
            return Err(Error::InvalidParameter("scanner eye and target coincide".into()));
        }
        let z = z.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidParameter("scanner up vector is parallel to the view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Ok(Self {
            pose: RigidTransform::from_rotation(rot, eye.coords),
            fov_deg: 60.0,
            resolution: 160,
            depth_noise_sigma: 0.0,
            pose_noise: (0.0, 0.0),
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (r, t) = self.pose_noise;
        if !(self.depth_noise_sigma >= 0.0 && r >= 0.0 && t >= 0.0) {
            return Err(Error::InvalidParameter("scanner noise parameters must be >= 0".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || self.resolution == 0 {
            return Err(Error::InvalidParameter(format!(
                "scanner fov {} / resolution {} out of range",
                self.fov_deg, self.resolution
            )));
        }
        Ok(())
    }
}

/// One simulated capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// Visible points in the true camera frame, depth noise applied.
    pub cloud: PointCloud,
    /// Indices of the visible samples.
    pub visible: Vec<usize>,
    pub true_pose: RigidTransform,
    /// Δ ∘ true, Δ of exactly the configured rotation angle and translation length.
    pub reported_pose: RigidTransform,
}

/// Visible subset of a dense sampling (with normals) seen from the scanner.
pub fn virtual_scan(samples: &PointCloud, scanner: &ScannerModel) -> Result<Capture> {
    scanner.validate()?;
    let normals =
        samples.normals().ok_or_else(|| Error::InvalidParameter("virtual scan needs sampled normals".into()))?;
    let to_cam = scanner.pose.inverse();
    let res = scanner.resolution;
    let tan_half = deg(scanner.fov_deg / 2.0).tan();

    let mut pixel_of = vec![usize::MAX; samples.len()];
    let mut cam_pts = Vec::with_capacity(samples.len());
    let mut zbuf = vec![f64::INFINITY; res * res];
    for (i, (p, n)) in samples.points().iter().zip(normals).enumerate() {
        let pc = to_cam.apply_point(p);
        cam_pts.push(pc);
        if pc.z <= 1e-6 || to_cam.apply_vector(n).dot(&pc.coords) >= 0.0 {
            continue;
        }
        let a = pc.x / (pc.z * tan_half);
        let b = pc.y / (pc.z * tan_half);
        if !(-1.0..1.0).contains(&a) || !(-1.0..1.0).contains(&b) {
            continue;
        }
        let px = (((a + 1.0) / 2.0 * res as f64) as usize).min(res - 1);
        let py = (((b + 1.0) / 2.0 * res as f64) as usize).min(res - 1);
        let k = py * res + px;
        pixel_of[i] = k;
        zbuf[k] = zbuf[k].min(pc.z);
    }
    let footprint = |z: f64| 2.0 * z * tan_half / res as f64;
    let visible: Vec<usize> = (0..samples.len())
        .filter(|&i| {
            let k = pixel_of[i];
            k != usize::MAX && cam_pts[i].z <= zbuf[k] + DEPTH_SLACK * footprint(zbuf[k])
        })
        .collect();
    if visible.is_empty() {
        return Err(Error::EmptyView);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scanner.seed);
    let delta = perturbation(&mut rng, scanner.pose_noise.0, scanner.pose_noise.1);
    let noise = (scanner.depth_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, scanner.depth_noise_sigma).expect("sigma validated"));
    let points = visible
        .iter()
        .map(|&i| {
            let p = cam_pts[i];
            match &noise {
                Some(dist) => p + p.coords.normalize() * dist.sample(&mut rng),
                None => p,
            }
        })
        .collect();
    Ok(Capture {
        cloud: PointCloud::new(points)?,
        visible,
        true_pose: scanner.pose,
        reported_pose: delta.compose(&scanner.pose),
    })
}

/// Rigid motion with rotation of exactly `angle_deg` about a random axis and
/// translation of exactly `dist` in a random direction.
fn perturbation(rng: &mut ChaCha8Rng, angle_deg: f64, dist: f64) -> RigidTransform {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let axis = Unit::new_normalize(Vector3::from(axis));
    RigidTransform::from_rotation(Rotation3::from_axis_angle(&axis, deg(angle_deg)), Vector3::from(dir) * dist)
}

/// Fixed flange-to-camera transform used by the bundled sessions.
pub fn default_hand_eye() -> RigidTransform {
    RigidTransform::from_rotation_vector(
        Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
        Vector3::new(0.03, 0.0, 0.08),
    )
}

/// Scans the workpiece from every scanner. Session metadata records the workpiece,
/// the sampling and the true camera poses.
pub fn scan_session(
    w: &Workpiece,
    scanners: &[ScannerModel],
    density: f64,
    sample_seed: u64,
    hand_eye: &RigidTransform,
) -> Result<ScanSession> {
    if scanners.is_empty() {
        return Err(Error::EmptyInput("scan session needs at least one scanner pose".into()));
    }
    let samples = sample_surface(w, density, sample_seed)?;
    let mut frames = Vec::with_capacity(scanners.len());
    let mut truth = Vec::with_capacity(scanners.len());
    for s in scanners {
        let cap = virtual_scan(&samples, s)?;
        truth.push(cap.true_pose.to_row_major().to_vec());
        frames.push(ScanFrame::from_camera_pose(cap.cloud, cap.reported_pose, hand_eye));
    }
    let mut session = ScanSession::new(frames, *hand_eye)?;
    let meta: BTreeMap<String, serde_json::Value> = [
        ("workpiece".to_string(), json!(w.kind.name())),
        ("density".to_string(), json!(density)),
        ("sample_seed".to_string(), json!(sample_seed)),
        ("true_camera_poses".to_string(), json!(truth)),
        ("scanners".to_string(), serde_json::to_value(scanners).expect("scanner models serialize")),
    ]
    .into_iter()
    .collect();
    session.metadata = meta;
    Ok(session)
}

/// Bundled pose script: six views around the multi-part workpieces, one view for the joints.
/// Noise is seeded from `seed`.
pub fn default_script(kind: WorkpieceKind, seed: u64) -> Vec<ScannerModel> {
    let z = Vector3::z();
    let views: Vec<(Point3<f64>, Point3<f64>, Vector3<f64>)> = match kind {
        WorkpieceKind::CylinderOnPlate | WorkpieceKind::YShape => {
            let target = match kind {
                WorkpieceKind::YShape => Point3::new(0.03, 0.0, 0.05),
                _ => Point3::new(0.0, 0.0, 0.03),
            };
            let mut v = vec![(Point3::new(0.0, 0.0, 0.6), target, Vector3::y())];
            for (az, el) in [(45.0, 35.0), (135.0, 35.0), (225.0, 35.0), (315.0, 35.0), (0.0, 60.0)] {
                let (az, el): (f64, f64) = (deg(az), deg(el));
                let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                v.push((target + dir * 0.55, target, z));
            }
            v
        }
        WorkpieceKind::Dihedral => {
            vec![(Point3::new(0.0, 0.4, 0.4), Point3::new(0.0, 0.03, 0.03), z)]
        }
        WorkpieceKind::VButtPlate => vec![(Point3::new(0.0, 0.0, 0.6), Point3::new(0.0, 0.0, 0.0), Vector3::y())],
    };
    let multi = views.len() > 1;
    views
        .into_iter()
        .enumerate()
        .map(|(i, (eye, target, up))| {
            let mut s = ScannerModel::looking_at(eye, target, up).expect("script views are well posed");
            s.resolution = 200;
            s.depth_noise_sigma = 0.0002;
            s.pose_noise = if multi { (0.5, 0.001) } else { (0.0, 0.0) };
            s.seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
            s
        })
        .collect()
}

/// Fraction of `full` points within `tol` of some point of `covered`.
pub fn coverage(full: &PointCloud, covered: &PointCloud, tol: f64) -> Result<f64> {
    if full.is_empty() {
        return Err(Error::EmptyInput("coverage reference is empty".into()));
    }
    let index = SpatialIndex::build(covered)?;
    let hit = full.points().iter().filter(|p| index.nearest(p).dist_sq <= tol * tol).count();
    Ok(hit as f64 / full.len() as f64)
}
