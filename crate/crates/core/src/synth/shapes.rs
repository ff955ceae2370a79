//! Surface patches, trimming solids, seam curves and the four fixture workpieces.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Point3, Vector3};
use rand_chacha::ChaCha8Rng;

use super::{deg, dims, jitter, Workpiece, WorkpieceKind};
use crate::error::{Error, Result};

/// Solids that remove samples lying inside them.
#[derive(Debug, Clone, PartialEq)]
pub enum Trim {
    /// Distance to the axis line below `radius`, with axial coordinate ≥ `min_t`.
    InsideCylinder { point: Point3<f64>, axis: Vector3<f64>, radius: f64, min_t: f64 },
    /// Strictly behind the plane through `point` with normal `normal`.
    BelowPlane { point: Point3<f64>, normal: Vector3<f64> },
}

impl Trim {
    pub fn removes(&self, p: &Point3<f64>) -> bool {
        match self {
            Trim::InsideCylinder { point, axis, radius, min_t } => {
                let d = p - point;
                let t = d.dot(axis);
                t >= *min_t && (d - axis * t).norm() < *radius
            }
            Trim::BelowPlane { point, normal } => (p - point).dot(normal) < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// origin + a·u + b·v, a, b ∈ [0, 1], u ⊥ v, normal u × v.
    Rect { origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64> },
    /// Disk in the plane of unit e1, e2 with normal e1 × e2.
    Disk { center: Point3<f64>, e1: Vector3<f64>, e2: Vector3<f64>, radius: f64 },
    /// base + h·axis + R(cos θ e1 + sin θ e2), h ∈ [0, length], θ ∈ [θ0, θ1]; normal points away from the axis.
    Tube {
        base: Point3<f64>,
        axis: Vector3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        radius: f64,
        length: f64,
        theta: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub surface: Surface,
    pub trims: Vec<Trim>,
}

impl Patch {
    pub(super) fn new(surface: Surface) -> Self {
        Self { surface, trims: Vec::new() }
    }

    pub(super) fn trimmed(mut self, trim: Trim) -> Self {
        self.trims.push(trim);
        self
    }

    /// Rectangle whose normal has a positive component along `outward`.
    pub(super) fn rect(origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, outward: Vector3<f64>) -> Self {
        if u.cross(&v).dot(&outward) >= 0.0 {
            Self::new(Surface::Rect { origin, u, v })
        } else {
            Self::new(Surface::Rect { origin, u: v, v: u })
        }
    }

    pub fn area(&self) -> f64 {
        match &self.surface {
            Surface::Rect { u, v, .. } => u.norm() * v.norm(),
            Surface::Disk { radius, .. } => PI * radius * radius,
            Surface::Tube { radius, length, theta, .. } => radius * (theta.1 - theta.0) * length,
        }
    }

    pub(super) fn sample(
        &self,
        step: f64,
        rng: &mut ChaCha8Rng,
        pts: &mut Vec<Point3<f64>>,
        nrm: &mut Vec<Vector3<f64>>,
    ) {
        let cells = |len: f64| ((len / step).ceil() as usize).max(1);
        let mut push = |p: Point3<f64>, n: Vector3<f64>| {
            if !self.trims.iter().any(|t| t.removes(&p)) {
                pts.push(p);
                nrm.push(n);
            }
        };
        match &self.surface {
            Surface::Rect { origin, u, v } => {
                let n = u.cross(v).normalize();
                let (nu, nv) = (cells(u.norm()), cells(v.norm()));
                for i in 0..nu {
                    for j in 0..nv {
                        let (a, b) = (jitter(rng, i, nu), jitter(rng, j, nv));
                        push(origin + u * a + v * b, n);
                    }
                }
            }
            Surface::Disk { center, e1, e2, radius } => {
                let n = e1.cross(e2);
                let k = cells(2.0 * radius);
                for i in 0..k {
                    for j in 0..k {
                        let x = (2.0 * jitter(rng, i, k) - 1.0) * radius;
                        let y = (2.0 * jitter(rng, j, k) - 1.0) * radius;
                        if x * x + y * y <= radius * radius {
                            push(center + e1 * x + e2 * y, n);
                        }
                    }
                }
            }
            Surface::Tube { base, axis, e1, e2, radius, length, theta } => {
                let na = cells(radius * (theta.1 - theta.0));
                let nh = cells(*length);
                for i in 0..na {
                    for j in 0..nh {
                        let th = theta.0 + (theta.1 - theta.0) * jitter(rng, i, na);
                        let h = length * jitter(rng, j, nh);
                        let radial = e1 * th.cos() + e2 * th.sin();
                        push(base + axis * h + radial * *radius, radial);
                    }
                }
            }
        }
    }
}

/// Analytic seam curves, parameterized by u ∈ [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum SeamCurve {
    Line {
        a: Point3<f64>,
        b: Point3<f64>,
        normal: Vector3<f64>,
    },
    /// Circle where a cylinder wall (outward radial normal) meets a plane with normal `up`.
    Circle {
        center: Point3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        radius: f64,
        up: Vector3<f64>,
    },
    /// Intersection of a branch pipe (axis through the origin along `axis`) with a main pipe along x
    /// (axis through the origin), upper half.
    Saddle {
        main_radius: f64,
        branch_radius: f64,
        axis: Vector3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
    },
}

const ARC_TABLE: usize = 20_000;

impl SeamCurve {
    pub fn closed(&self) -> bool {
        !matches!(self, SeamCurve::Line { .. })
    }

    pub fn point(&self, u: f64) -> Point3<f64> {
        match self {
            SeamCurve::Line { a, b, .. } => a + (b - a) * u,
            SeamCurve::Circle { center, e1, e2, radius, .. } => {
                let th = 2.0 * PI * u;
                center + (e1 * th.cos() + e2 * th.sin()) * *radius
            }
            SeamCurve::Saddle { .. } => self.saddle(u).0,
        }
    }

    /// Unit bisector of the two face normals at the seam.
    pub fn bisector(&self, u: f64) -> Vector3<f64> {
        match self {
            SeamCurve::Line { normal, .. } => normal.normalize(),
            SeamCurve::Circle { e1, e2, up, .. } => {
                let th = 2.0 * PI * u;
                (e1 * th.cos() + e2 * th.sin() + up).normalize()
            }
            SeamCurve::Saddle { .. } => {
                let (p, radial_branch) = self.saddle(u);
                let radial_main = Vector3::new(0.0, p.y, p.z).normalize();
                (radial_main + radial_branch).normalize()
            }
        }
    }

    /// Unit tangent in the direction of increasing u.
    pub fn tangent(&self, u: f64) -> Vector3<f64> {
        let h = 1e-6;
        let (lo, hi) = if self.closed() { (u - h, u + h) } else { ((u - h).max(0.0), (u + h).min(1.0)) };
        (self.point(hi) - self.point(lo)).normalize()
    }

    /// Point and branch radial direction at u.
    fn saddle(&self, u: f64) -> (Point3<f64>, Vector3<f64>) {
        let SeamCurve::Saddle { main_radius, branch_radius, axis, e1, e2 } = self else {
            unreachable!("saddle parameters on a non-saddle curve")
        };
        let phi = 2.0 * PI * u;
        let radial = e1 * phi.cos() + e2 * phi.sin();
        // axis·t + R_b·radial has y² + z² = R_m² with z > 0; the axis lies in the xz plane
        let off = radial * *branch_radius;
        let y = off.y;
        let z = (main_radius * main_radius - y * y).max(0.0).sqrt();
        let t = (z - off.z) / axis.z;
        (Point3::from(axis * t + off), radial)
    }

    /// Cumulative chord length over a fine uniform table in u.
    fn arc_table(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(ARC_TABLE + 1);
        acc.push(0.0);
        let mut prev = self.point(0.0);
        for i in 1..=ARC_TABLE {
            let p = self.point(i as f64 / ARC_TABLE as f64);
            let last = *acc.last().expect("non-empty");
            acc.push(last + (p - prev).norm());
            prev = p;
        }
        acc
    }

    pub fn length(&self) -> f64 {
        *self.arc_table().last().expect("non-empty")
    }

    /// Parameters at arc lengths 0, s, 2s, … (open curves also end at the far end when it lies ≥ s/2 beyond).
    pub fn resample(&self, spacing: f64) -> Result<Vec<f64>> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!("seam spacing {spacing} must be > 0")));
        }
        let table = self.arc_table();
        let total = *table.last().expect("non-empty");
        let count = (total / spacing).floor() as usize;
        let mut out = Vec::with_capacity(count + 2);
        let mut seg = 0;
        for k in 0..=count {
            let s = k as f64 * spacing;
            if self.closed() && total - s < 0.5 * spacing {
                break;
            }
            while seg + 1 < ARC_TABLE && table[seg + 1] < s {
                seg += 1;
            }
            let span = table[seg + 1] - table[seg];
            let f = if span > 0.0 { ((s - table[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push((seg as f64 + f) / ARC_TABLE as f64);
        }
        if !self.closed() && total - count as f64 * spacing >= 0.5 * spacing {
            out.push(1.0);
        }
        Ok(out)
    }
}

pub(super) fn cylinder_on_plate() -> Workpiece {
    let s = dims::PLATE_SIZE;
    let h = s / 2.0;
    let t = dims::PLATE_THICKNESS;
    let r = dims::CYLINDER_RADIUS;
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let plate = Patch::rect(Point3::new(-h, -h, 0.0), x * s, y * s, z).trimmed(Trim::InsideCylinder {
        point: Point3::origin(),
        axis: z,
        radius: r,
        min_t: f64::NEG_INFINITY,
    });
    let sides = [
        Patch::rect(Point3::new(-h, -h, -t), x * s, z * t, -y),
        Patch::rect(Point3::new(-h, h, -t), x * s, z * t, y),
        Patch::rect(Point3::new(-h, -h, -t), y * s, z * t, -x),
        Patch::rect(Point3::new(h, -h, -t), y * s, z * t, x),
    ];
    let wall = Patch::new(Surface::Tube {
        base: Point3::origin(),
        axis: z,
        e1: x,
        e2: y,
        radius: r,
        length: dims::CYLINDER_HEIGHT,
        theta: (0.0, 2.0 * PI),
    });
    let top =
        Patch::new(Surface::Disk { center: Point3::new(0.0, 0.0, dims::CYLINDER_HEIGHT), e1: x, e2: y, radius: r });
    let mut patches = vec![plate];
    patches.extend(sides);
    patches.push(wall);
    patches.push(top);
    Workpiece {
        kind: WorkpieceKind::CylinderOnPlate,
        patches,
        seam: SeamCurve::Circle { center: Point3::origin(), e1: x, e2: y, radius: r, up: z },
    }
}

pub(super) fn dihedral() -> Workpiece {
    let l = dims::DIHEDRAL_LENGTH;
    let w = dims::DIHEDRAL_WIDTH;
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let o = Point3::new(-l / 2.0, 0.0, 0.0);
    Workpiece {
        kind: WorkpieceKind::Dihedral,
        patches: vec![Patch::rect(o, x * l, y * w, z), Patch::rect(o, x * l, z * w, y)],
        seam: SeamCurve::Line { a: o, b: o + x * l, normal: Vector3::new(0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2) },
    }
}

pub(super) fn v_butt() -> Workpiece {
    let l = dims::V_BUTT_LENGTH;
    let w = dims::V_BUTT_HALF_WIDTH;
    let t = dims::V_BUTT_THICKNESS;
    let h = t * deg(dims::V_BUTT_GROOVE_DEG / 2.0).tan();
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let x0 = -l / 2.0;
    let root = Point3::new(x0, 0.0, -t);
    let patches = vec![
        Patch::rect(Point3::new(x0, h, 0.0), x * l, y * (w - h), z),
        Patch::rect(Point3::new(x0, -w, 0.0), x * l, y * (w - h), z),
        Patch::rect(root, x * l, Vector3::new(0.0, h, t), Vector3::new(0.0, -t, h)),
        Patch::rect(root, x * l, Vector3::new(0.0, -h, t), Vector3::new(0.0, t, h)),
    ];
    Workpiece {
        kind: WorkpieceKind::VButtPlate,
        patches,
        seam: SeamCurve::Line { a: root, b: root + x * l, normal: z },
    }
}

pub(super) fn y_shape() -> Workpiece {
    let rm = dims::Y_MAIN_RADIUS;
    let rb = dims::Y_BRANCH_RADIUS;
    let lm = dims::Y_MAIN_LENGTH;
    let tilt = deg(dims::Y_BRANCH_TILT_DEG);
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let axis = Vector3::new(tilt.cos(), 0.0, tilt.sin());
    let e2 = axis.cross(&y);
    let main = Patch::new(Surface::Tube {
        base: Point3::new(-lm / 2.0, 0.0, 0.0),
        axis: x,
        e1: y,
        e2: z,
        radius: rm,
        length: lm,
        theta: (0.0, PI),
    })
    .trimmed(Trim::InsideCylinder { point: Point3::origin(), axis, radius: rb, min_t: 0.0 });
    let branch = Patch::new(Surface::Tube {
        base: Point3::origin(),
        axis,
        e1: y,
        e2,
        radius: rb,
        length: dims::Y_BRANCH_LENGTH,
        theta: (0.0, 2.0 * PI),
    })
    .trimmed(Trim::InsideCylinder { point: Point3::origin(), axis: x, radius: rm, min_t: f64::NEG_INFINITY })
    .trimmed(Trim::BelowPlane { point: Point3::origin(), normal: z });
    Workpiece {
        kind: WorkpieceKind::YShape,
        patches: vec![main, branch],
        seam: SeamCurve::Saddle { main_radius: rm, branch_radius: rb, axis, e1: y, e2 },
    }
}
