//! Synthetic workpieces with analytic seams, and a posed virtual depth scanner.
//!
//! Surfaces are unions of rectangles, disks and cylinder strips, optionally trimmed
//! by solids. Sampling is a jittered grid in each patch's isometric parameter
//! space, seeded per workpiece, so every scan of a workpiece draws from the same
//! dense sample set.

mod scanner;
mod shapes;

use std::f64::consts::PI;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::path::PathPoint;

pub use scanner::{
    coverage, default_hand_eye, default_script, scan_session, virtual_scan, Capture, ScannerModel, SCAN_DENSITY,
};
pub use shapes::{Patch, SeamCurve, Surface, Trim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkpieceKind {
    VButtPlate,
    CylinderOnPlate,
    YShape,
    Dihedral,
}

impl WorkpieceKind {
    pub const ALL: [WorkpieceKind; 4] =
        [WorkpieceKind::VButtPlate, WorkpieceKind::CylinderOnPlate, WorkpieceKind::YShape, WorkpieceKind::Dihedral];

    pub fn name(self) -> &'static str {
        match self {
            WorkpieceKind::VButtPlate => "v_butt_plate",
            WorkpieceKind::CylinderOnPlate => "cylinder_on_plate",
            WorkpieceKind::YShape => "y_shape",
            WorkpieceKind::Dihedral => "dihedral",
        }
    }
}

impl std::str::FromStr for WorkpieceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WorkpieceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown workpiece kind '{s}'")))
    }
}

/// Fixture dimensions in meters.
pub mod dims {
    pub const PLATE_SIZE: f64 = 0.300;
    pub const PLATE_THICKNESS: f64 = 0.010;
    pub const CYLINDER_RADIUS: f64 = 0.050;
    pub const CYLINDER_HEIGHT: f64 = 0.100;
    pub const V_BUTT_LENGTH: f64 = 0.500;
    pub const V_BUTT_HALF_WIDTH: f64 = 0.075;
    pub const V_BUTT_THICKNESS: f64 = 0.010;
    /// Included groove angle.
    pub const V_BUTT_GROOVE_DEG: f64 = 60.0;
    pub const DIHEDRAL_LENGTH: f64 = 0.300;
    pub const DIHEDRAL_WIDTH: f64 = 0.100;
    pub const Y_MAIN_RADIUS: f64 = 0.050;
    pub const Y_MAIN_LENGTH: f64 = 0.300;
    pub const Y_BRANCH_RADIUS: f64 = 0.035;
    pub const Y_BRANCH_LENGTH: f64 = 0.200;
    pub const Y_BRANCH_TILT_DEG: f64 = 45.0;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workpiece {
    pub kind: WorkpieceKind,
    pub patches: Vec<Patch>,
    pub seam: SeamCurve,
}

impl Workpiece {
    pub fn new(kind: WorkpieceKind) -> Self {
        match kind {
            WorkpieceKind::VButtPlate => shapes::v_butt(),
            WorkpieceKind::CylinderOnPlate => shapes::cylinder_on_plate(),
            WorkpieceKind::YShape => shapes::y_shape(),
            WorkpieceKind::Dihedral => shapes::dihedral(),
        }
    }

    /// Total untrimmed patch area in m².
    pub fn area(&self) -> f64 {
        self.patches.iter().map(Patch::area).sum()
    }

    pub fn seam_length(&self) -> f64 {
        self.seam.length()
    }

    /// Seam points spaced `spacing` apart by arc length (closed seams do not repeat the start).
    pub fn seam_points(&self, spacing: f64) -> Result<Vec<Point3<f64>>> {
        Ok(self.seam.resample(spacing)?.into_iter().map(|u| self.seam.point(u)).collect())
    }

    /// Torch poses along the seam: offset `torch_offset` along the crease bisector n,
    /// m the seam tangent, o = m × n.
    pub fn truth_path(&self, spacing: f64, torch_offset: f64) -> Result<Vec<PathPoint>> {
        self.seam
            .resample(spacing)?
            .into_iter()
            .map(|u| {
                let p = self.seam.point(u);
                let n = self.seam.bisector(u);
                let t = self.seam.tangent(u);
                let m = (t - n * t.dot(&n)).normalize();
                PathPoint::from_frame(p + n * torch_offset, m.cross(&n), m, n)
            })
            .collect()
    }

    pub fn seam_is_closed(&self) -> bool {
        self.seam.closed()
    }
}

/// Jittered-grid sampling at `density` points per m², with exact outward normals.
/// Deterministic in (workpiece, density, seed).
pub fn sample_surface(w: &Workpiece, density: f64, seed: u64) -> Result<PointCloud> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidParameter(format!("density {density} must be > 0")));
    }
    let step = 1.0 / density.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for patch in &w.patches {
        patch.sample(step, &mut rng, &mut pts, &mut nrm);
    }
    if pts.is_empty() {
        return Err(Error::EmptyInput("sampling produced no points".into()));
    }
    PointCloud::with_normals(pts, nrm)
}

fn jitter(rng: &mut ChaCha8Rng, i: usize, n: usize) -> f64 {
    (i as f64 + rng.gen::<f64>()) / n as f64
}

fn deg(v: f64) -> f64 {
    v * PI / 180.0
}

#[cfg(test)]
mod tests;
