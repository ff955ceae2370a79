//! From unordered seam points to a dense 6-DOF torch path.
//!
//! Each path pose carries the frame (o, m, n): n is the surface normal the
//! torch points along, m the smoothed moving direction and o = m × n. The
//! frame matrix has columns (o, m, n) and is a proper rotation.

use nalgebra::{Matrix2, Matrix3, Point3, Rotation3, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SpatialIndex;

/// Frame invariants hold to this tolerance.
pub const FRAME_TOL: f64 = 1e-9;

/// A torch pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub position: Point3<f64>,
    frame: Matrix3<f64>,
}

impl PathPoint {
    /// Checks unit length, orthogonality and o = m × n.
    pub fn from_frame(position: Point3<f64>, o: Vector3<f64>, m: Vector3<f64>, n: Vector3<f64>) -> Result<Self> {
        let p = Self { position, frame: Matrix3::from_columns(&[o, m, n]) };
        let err = p.frame_error();
        if !(err <= FRAME_TOL) {
            return Err(Error::InvalidParameter(format!("frame is not right-handed orthonormal (error {err:e})")));
        }
        Ok(p)
    }

    pub fn from_quaternion(position: Point3<f64>, q: &UnitQuaternion<f64>) -> Self {
        Self { position, frame: q.to_rotation_matrix().into_inner() }
    }

    pub fn from_rotation_vector(position: Point3<f64>, v: Vector3<f64>) -> Self {
        Self { position, frame: Rotation3::new(v).into_inner() }
    }

    pub fn o(&self) -> Vector3<f64> {
        self.frame.column(0).into_owned()
    }

    pub fn m(&self) -> Vector3<f64> {
        self.frame.column(1).into_owned()
    }

    pub fn n(&self) -> Vector3<f64> {
        self.frame.column(2).into_owned()
    }

    /// Columns (o, m, n).
    pub fn frame(&self) -> &Matrix3<f64> {
        &self.frame
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.frame))
    }

    /// Axis × angle of the frame rotation.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.quaternion().scaled_axis()
    }

    /// Largest violation of unit length, orthogonality or o = m × n.
    pub fn frame_error(&self) -> f64 {
        let (o, m, n) = (self.o(), self.m(), self.n());
        [
            (o.norm() - 1.0).abs(),
            (m.norm() - 1.0).abs(),
            (n.norm() - 1.0).abs(),
            o.dot(&m).abs(),
            m.dot(&n).abs(),
            n.dot(&o).abs(),
            (o - m.cross(&n)).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Same pose travelling the other way: m and o flip, n stays.
    pub fn reversed(&self) -> Self {
        Self { position: self.position, frame: Matrix3::from_columns(&[-self.o(), -self.m(), self.n()]) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    /// Distance d from the seam along the normal, meters.
    pub torch_offset: f64,
    /// Odd number of moving vectors averaged into m.
    pub smoothing_window: usize,
    /// Subdivisions ρ per segment.
    pub interpolation_density: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { torch_offset: 0.005, smoothing_window: 5, interpolation_density: 4 }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.torch_offset.is_finite() && self.torch_offset >= 0.0) {
            return Err(Error::InvalidParameter(format!("torch_offset {} must be >= 0", self.torch_offset)));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_window {} must be odd and >= 1",
                self.smoothing_window
            )));
        }
        if self.interpolation_density == 0 {
            return Err(Error::InvalidParameter("interpolation_density must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of chaining unordered points.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamOrdering {
    /// Longest polyline (by arc length), as input indices.
    pub path: Vec<usize>,
    /// The remaining polylines after splitting at large gaps.
    pub others: Vec<Vec<usize>>,
    /// Median step of the greedy chain.
    pub median_spacing: f64,
    /// End points of `path` lie within 2 × median spacing of each other.
    pub cyclic: bool,
}

const GAP_FACTOR: f64 = 5.0;
const CLOSE_FACTOR: f64 = 2.0;

/// Greedy nearest-neighbor chain from an extreme point along the principal axis,
/// split where a step exceeds 5 × the median step.
pub fn order_seam_points(points: &[Point3<f64>]) -> Result<SeamOrdering> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: points.len() });
    }
    let start = principal_extreme(points);
    let index = SpatialIndex::from_points(points)?;
    let mut visited = vec![false; points.len()];
    let mut chain = Vec::with_capacity(points.len());
    let mut current = start;
    visited[start] = true;
    chain.push(start);
    while chain.len() < points.len() {
        let mut k = 8;
        let next = loop {
            let found = index.knn(&points[current], k).into_iter().find(|n| !visited[n.index]);
            if let Some(n) = found {
                break n.index;
            }
            k = (4 * k).min(points.len());
        };
        visited[next] = true;
        chain.push(next);
        current = next;
    }

    let steps: Vec<f64> = chain.windows(2).map(|w| (points[w[1]] - points[w[0]]).norm()).collect();
    let mut sorted = steps.clone();
    sorted.sort_by(f64::total_cmp);
    let median_spacing = sorted[sorted.len() / 2];
    let gap = GAP_FACTOR * median_spacing;

    let mut pieces: Vec<Vec<usize>> = vec![vec![chain[0]]];
    for (i, &s) in steps.iter().enumerate() {
        if s > gap {
            pieces.push(Vec::new());
        }
        pieces.last_mut().expect("non-empty").push(chain[i + 1]);
    }
    let length = |p: &Vec<usize>| p.windows(2).map(|w| (points[w[1]] - points[w[0]]).norm()).sum::<f64>();
    let best = (0..pieces.len())
        .max_by(|&a, &b| length(&pieces[a]).total_cmp(&length(&pieces[b])).then(b.cmp(&a)))
        .expect("at least one piece");
    let path = pieces.remove(best);
    let cyclic = path.len() > 2
        && (points[path[0]] - points[*path.last().expect("non-empty")]).norm() <= CLOSE_FACTOR * median_spacing;
    Ok(SeamOrdering { path, others: pieces, median_spacing, cyclic })
}

/// Of the two extremes along the principal axis, the one with the lower index.
fn principal_extreme(points: &[Point3<f64>]) -> usize {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let axis = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let proj = |i: usize| (points[i].coords - c).dot(&axis);
    let lo = (0..points.len()).min_by(|&a, &b| proj(a).total_cmp(&proj(b)).then(a.cmp(&b))).unwrap_or(0);
    let hi = (0..points.len()).max_by(|&a, &b| proj(a).total_cmp(&proj(b)).then(b.cmp(&a))).unwrap_or(0);
    lo.min(hi)
}

/// Single-linkage clusters: points closer than `link` share a cluster. Largest first,
/// ties by smallest member index; members ascending.
pub fn link_clusters(points: &[Point3<f64>], link: f64) -> Result<Vec<Vec<usize>>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::from_points(points)?;
    let mut label = vec![usize::MAX; points.len()];
    let mut clusters = Vec::new();
    for seed in 0..points.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        label[seed] = id;
        let mut members = vec![seed];
        let mut k = 0;
        while k < members.len() {
            for n in index.radius(&points[members[k]], link) {
                if label[n.index] == usize::MAX {
                    label[n.index] = id;
                    members.push(n.index);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(clusters)
}

/// Greedy thinning: visiting points by descending priority (ties by index), keeps a point
/// unless a kept point lies within `radius`. Returns kept indices ascending.
pub fn greedy_thin(points: &[Point3<f64>], priority: &[f64], radius: f64) -> Result<Vec<usize>> {
    if points.len() != priority.len() {
        return Err(Error::InvalidParameter("greedy_thin needs one priority per point".into()));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::from_points(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| priority[b].total_cmp(&priority[a]).then(a.cmp(&b)));
    let mut blocked = vec![false; points.len()];
    let mut kept = Vec::new();
    for i in order {
        if blocked[i] {
            continue;
        }
        kept.push(i);
        for n in index.radius(&points[i], radius) {
            blocked[n.index] = true;
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Local crease: the line where two fitted faces meet, seen from one anchor point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crease {
    /// Anchor projected onto the intersection line.
    pub point: Point3<f64>,
    /// Bisector of the two face normals, each oriented toward the other face.
    pub normal: Vector3<f64>,
    /// Angle between the face planes, degrees in [0, 90].
    pub plane_angle_deg: f64,
}

/// Passes of reassigning points to the nearer plane after the normal-based split.
const CREASE_PASSES: usize = 5;

/// Points closer than this fraction of the neighborhood radius to the fitted line are
/// left out of the plane fits; their normals and positions blend both faces.
const CREASE_BAND_FRACTION: f64 = 0.3;

/// Points farther than this fraction of the neighborhood radius along the line are left
/// out of the plane fits, limiting the bias from faces that curve along the seam.
const CREASE_STRIP_FRACTION: f64 = 0.5;

/// Splits the neighborhood into two faces by normal direction, refines the split by plane
/// distance, dropping a band around the current line, and intersects the fitted planes.
/// `None` when a face has fewer than `min_face` points or the planes meet at less than
/// `min_angle_deg`.
pub fn fit_crease(
    anchor: &Point3<f64>,
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    min_face: usize,
    min_angle_deg: f64,
) -> Option<Crease> {
    if points.len() != normals.len() || points.len() < 2 * min_face.max(3) {
        return None;
    }
    let scatter = normals.iter().fold(Matrix3::zeros(), |a, n| a + n * n.transpose());
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (e1, e2) = (eig.eigenvectors.column(order[0]).into_owned(), eig.eigenvectors.column(order[1]).into_owned());
    let mut side: Vec<Option<bool>> = normals.iter().map(|n| Some(n.dot(&e2) * n.dot(&e1).signum() >= 0.0)).collect();
    let reach = points.iter().map(|p| (p - anchor).norm()).fold(0.0, f64::max);
    let (band, strip) = (CREASE_BAND_FRACTION * reach, CREASE_STRIP_FRACTION * reach);

    let mut planes = None;
    for pass in 0..=CREASE_PASSES {
        let a = fit_plane(points, &side, true)?;
        let b = fit_plane(points, &side, false)?;
        if a.2 < min_face || b.2 < min_face {
            return None;
        }
        planes = Some((a, b));
        if pass == CREASE_PASSES {
            break;
        }
        let on_line = closest_on_both(anchor, &a.0, &a.1, &b.0, &b.1)?;
        let dir = a.1.cross(&b.1).try_normalize(1e-12)?;
        let next: Vec<Option<bool>> = points
            .iter()
            .map(|p| {
                let d = p - on_line;
                let along = d.dot(&dir);
                if (d - dir * along).norm() < band || (p - anchor).dot(&dir).abs() > strip {
                    None
                } else {
                    Some((p - a.0).dot(&a.1).abs() <= (p - b.0).dot(&b.1).abs())
                }
            })
            .collect();
        if next == side {
            break;
        }
        side = next;
    }
    let ((ca, na, _), (cb, nb, _)) = planes?;
    let cos = na.dot(&nb).abs().min(1.0);
    let angle = cos.acos().to_degrees();
    if angle < min_angle_deg {
        return None;
    }
    let na = if na.dot(&(cb - ca)) < 0.0 { -na } else { na };
    let nb = if nb.dot(&(ca - cb)) < 0.0 { -nb } else { nb };
    let point = closest_on_both(anchor, &ca, &na, &cb, &nb)?;
    let normal = (na + nb).try_normalize(1e-12)?;
    Some(Crease { point, normal, plane_angle_deg: angle })
}

/// Point of the line where planes (ca, na) and (cb, nb) meet that is closest to `q`.
fn closest_on_both(
    q: &Point3<f64>,
    ca: &Point3<f64>,
    na: &Vector3<f64>,
    cb: &Point3<f64>,
    nb: &Vector3<f64>,
) -> Option<Point3<f64>> {
    let g = Matrix2::new(1.0, na.dot(nb), na.dot(nb), 1.0);
    let r = Vector2::new((q - ca).dot(na), (q - cb).dot(nb));
    let lam = g.try_inverse()? * r;
    Some(q - na * lam.x - nb * lam.y)
}

/// Centroid, unit normal and size of the points on one side.
fn fit_plane(points: &[Point3<f64>], side: &[Option<bool>], which: bool) -> Option<(Point3<f64>, Vector3<f64>, usize)> {
    let sel: Vec<&Point3<f64>> = points.iter().zip(side).filter(|(_, &s)| s == Some(which)).map(|(p, _)| p).collect();
    if sel.len() < 3 {
        return None;
    }
    let c = sel.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / sel.len() as f64;
    let cov = sel.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - c;
        a + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    Some((Point3::from(c), eig.eigenvectors.column(eig.eigenvalues.imin()).normalize(), sel.len()))
}

/// p + d·n for each point.
pub fn offset_points(points: &[Point3<f64>], normals: &[Vector3<f64>], d: f64) -> Vec<Point3<f64>> {
    points.iter().zip(normals).map(|(p, n)| p + n * d).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramedPath {
    pub poses: Vec<PathPoint>,
    /// Input indices dropped because they repeated the previous point.
    pub skipped: Vec<usize>,
}

/// Orients each point: n from the surface, m from the windowed mean of moving
/// directions (made orthogonal to n), o = m × n.
pub fn build_frames(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    cfg: &PathConfig,
    cyclic: bool,
) -> Result<FramedPath> {
    cfg.validate()?;
    if points.len() != normals.len() {
        return Err(Error::InvalidParameter(format!("{} points but {} normals", points.len(), normals.len())));
    }
    let mut keep: Vec<usize> = Vec::with_capacity(points.len());
    let mut skipped = Vec::new();
    for i in 0..points.len() {
        match keep.last() {
            Some(&j) if (points[i] - points[j]).norm() <= 1e-12 => skipped.push(i),
            _ => keep.push(i),
        }
    }
    if keep.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: keep.len() });
    }
    let n = keep.len();
    let mut moves: Vec<Vector3<f64>> = keep.windows(2).map(|w| (points[w[1]] - points[w[0]]).normalize()).collect();
    let closing = points[keep[0]] - points[keep[n - 1]];
    moves.push(if cyclic && closing.norm() > 1e-12 { closing.normalize() } else { moves[n - 2] });

    let h = (cfg.smoothing_window / 2) as isize;
    let mut poses = Vec::with_capacity(n);
    for (i, &src) in keep.iter().enumerate() {
        let nrm = normals[src].normalize();
        let mut sum = Vector3::zeros();
        for off in -h..=h {
            let j = i as isize + off;
            let j = if cyclic {
                j.rem_euclid(n as isize) as usize
            } else if j < 0 || j >= n as isize {
                continue;
            } else {
                j as usize
            };
            sum += moves[j];
        }
        if sum.norm() < 1e-9 {
            sum = moves[i];
        }
        let tangent = sum - nrm * sum.dot(&nrm);
        if tangent.norm() < 1e-6 * sum.norm() {
            return Err(Error::DegenerateFrame { index: src });
        }
        let m = tangent.normalize();
        let m = (m - nrm * m.dot(&nrm)).normalize();
        let o = m.cross(&nrm);
        poses.push(PathPoint { position: points[src], frame: Matrix3::from_columns(&[o, m, nrm]) });
    }
    Ok(FramedPath { poses, skipped })
}

/// Spherical-linear interpolation of unit quaternions (sine-weighted form), shortest arc.
/// Returns `None` when the rotations are about 180° apart.
pub fn slerp(q1: &UnitQuaternion<f64>, q2: &UnitQuaternion<f64>, alpha: f64) -> Option<UnitQuaternion<f64>> {
    let a = q1.quaternion();
    let mut b = *q2.quaternion();
    let mut cos = a.dot(&b);
    if cos < 0.0 {
        b = -b;
        cos = -cos;
    }
    let half = cos.min(1.0).acos();
    if 2.0 * half > std::f64::consts::PI - 1e-6 {
        return None;
    }
    let s = half.sin();
    let q = if s < 1e-9 {
        a * (1.0 - alpha) + b * alpha
    } else {
        a * (((1.0 - alpha) * half).sin() / s) + b * ((alpha * half).sin() / s)
    };
    Some(UnitQuaternion::new_normalize(q))
}

/// Inserts ρ − 1 poses per segment: positions linearly, rotations by slerp.
/// Output length (n − 1)·ρ + 1; original poses are copied unchanged.
pub fn interpolate_path(path: &[PathPoint], rho: usize) -> Result<Vec<PathPoint>> {
    if rho == 0 {
        return Err(Error::InvalidParameter("interpolation density must be >= 1".into()));
    }
    if path.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: path.len() });
    }
    let mut out = Vec::with_capacity((path.len() - 1) * rho + 1);
    for (i, seg) in path.windows(2).enumerate() {
        let (a, b) = (&seg[0], &seg[1]);
        out.push(*a);
        let (qa, qb) = (a.quaternion(), b.quaternion());
        let step = (b.position - a.position) / rho as f64;
        for j in 1..rho {
            let alpha = j as f64 / rho as f64;
            let q = slerp(&qa, &qb, alpha).ok_or(Error::AmbiguousRotation { index: i })?;
            out.push(PathPoint::from_quaternion(a.position + step * j as f64, &q));
        }
    }
    out.push(*path.last().expect("len >= 2"));
    Ok(out)
}

/// Arc length of the pose positions.
pub fn path_length(path: &[PathPoint]) -> f64 {
    path.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
}
