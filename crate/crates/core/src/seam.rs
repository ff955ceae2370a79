//! Seam points by edge intensity, intensity gradients and a structure-matrix ratio test.
//!
//! 1. Intensity: distance from a point to its neighborhood centroid over the neighborhood radius.
//! 2. Gradient: per axis, the largest intensity change scaled by distance over axis offset.
//! 3. Structure matrix: Gaussian-weighted sum of neighbor gradient outer products.
//! 4. Ratio Tr³/Det against a threshold; rank-deficient matrices count as edges.
//!
//! Before the ratio test the structure matrix is divided by its total weight and an
//! isotropic floor (the cloud median of trace / 3) is added. Gradients of an intensity
//! field that lives on a surface have no component across the surface, so raw matrices
//! are nearly singular everywhere; the floor keeps flat regions near the isotropic
//! ratio of 27 while anisotropic gradient structure still drives the ratio up.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{adaptive_neighbors, Neighborhood, NeighborhoodSpec, PointCloud, SpatialIndex};

/// Det / Tr³ below this is treated as a singular structure matrix.
const SINGULAR_REL: f64 = 1e-12;
/// Absolute floor of the axis guard: offsets below this fraction of r never count.
const ABS_AXIS_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScore {
    pub intensity: f64,
    pub gradient: Vector3<f64>,
    /// Tr³/Det of the regularized structure matrix (∞ when singular, 0 when zero).
    pub ratio: f64,
    pub is_edge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamConfig {
    pub neighborhood: NeighborhoodSpec,
    /// Ratio threshold t; must exceed 27, the ratio of an isotropic matrix.
    pub threshold: f64,
    /// Gaussian-weighted neighborhood sum (true) or the single outer product at the point.
    pub smoothing: bool,
    /// A neighbor contributes to axis k only if |δk| ≥ axis_guard × its distance.
    pub axis_guard: f64,
    /// Multiplier of the isotropic floor; 0 disables it.
    pub floor_scale: f64,
}

impl SeamConfig {
    pub fn new(neighborhood: NeighborhoodSpec, threshold: f64) -> Self {
        Self { neighborhood, threshold, smoothing: true, axis_guard: 0.5, floor_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 27.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidParameter(format!("seam threshold {} must be > 27", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.axis_guard) {
            return Err(Error::InvalidParameter(format!("axis_guard {} must be in [0, 1)", self.axis_guard)));
        }
        if !(self.floor_scale >= 0.0 && self.floor_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("floor_scale {} must be >= 0", self.floor_scale)));
        }
        Ok(())
    }
}

fn centroid_of(index: &SpatialIndex, nb: &Neighborhood) -> Point3<f64> {
    let sum = nb.indices.iter().fold(Vector3::zeros(), |a, &i| a + index.point(i).coords);
    Point3::from(sum / nb.indices.len() as f64)
}

/// ‖p − centroid(neighbors)‖ / realized radius.
pub fn edge_intensity(index: &SpatialIndex, p: &Point3<f64>, spec: &NeighborhoodSpec) -> Result<f64> {
    let nb = adaptive_neighbors(index, p, spec)?;
    Ok(intensity_from(index, p, &nb))
}

fn intensity_from(index: &SpatialIndex, p: &Point3<f64>, nb: &Neighborhood) -> f64 {
    (p - centroid_of(index, nb)).norm() / nb.radius
}

/// Per-axis gradient; `empty_axes[k]` is set when no neighbor passed the guard on axis k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGradient {
    pub value: Vector3<f64>,
    pub empty_axes: [bool; 3],
}

/// Max over neighbors of (I_i − I_o)·d/δk per axis, δk signed.
pub fn intensity_gradient(
    index: &SpatialIndex,
    o: usize,
    intensities: &[f64],
    spec: &NeighborhoodSpec,
    axis_guard: f64,
) -> Result<AxisGradient> {
    let p = index.point(o);
    let nb = adaptive_neighbors(index, &p, spec)?;
    Ok(gradient_from(index, o, &nb, intensities, axis_guard))
}

fn gradient_from(
    index: &SpatialIndex,
    o: usize,
    nb: &Neighborhood,
    intensities: &[f64],
    axis_guard: f64,
) -> AxisGradient {
    let p = index.point(o);
    let mut best = [f64::NEG_INFINITY; 3];
    for &i in &nb.indices {
        let delta = index.point(i) - p;
        let d = delta.norm();
        let di = intensities[i] - intensities[o];
        for k in 0..3 {
            let dk = delta[k];
            if dk.abs() < ABS_AXIS_GUARD * nb.radius || dk.abs() < axis_guard * d {
                continue;
            }
            best[k] = best[k].max(di * d / dk);
        }
    }
    let empty_axes = [best[0].is_infinite(), best[1].is_infinite(), best[2].is_infinite()];
    let fix = |v: f64| if v.is_infinite() { 0.0 } else { v };
    AxisGradient { value: Vector3::new(fix(best[0]), fix(best[1]), fix(best[2])), empty_axes }
}

/// Gaussian weight of a neighbor at distance `d`, with δ the spread of neighbor distances.
pub fn gaussian_weight(d: f64, delta: f64) -> f64 {
    (-(d * d) / (2.0 * delta * delta)).exp() / (delta * (2.0 * std::f64::consts::PI).sqrt())
}

/// H = Σ G(o,i) g_i g_iᵀ over the neighborhood when smoothing, otherwise g_o g_oᵀ.
/// Also returns the weight total (1 without smoothing).
pub fn structure_matrix(
    index: &SpatialIndex,
    o: usize,
    gradients: &[Vector3<f64>],
    spec: &NeighborhoodSpec,
    smoothing: bool,
) -> Result<(Matrix3<f64>, f64)> {
    if !smoothing {
        let g = gradients[o];
        return Ok((g * g.transpose(), 1.0));
    }
    let p = index.point(o);
    let nb = adaptive_neighbors(index, &p, spec)?;
    Ok(structure_from(index, &p, &nb, gradients))
}

fn structure_from(
    index: &SpatialIndex,
    p: &Point3<f64>,
    nb: &Neighborhood,
    gradients: &[Vector3<f64>],
) -> (Matrix3<f64>, f64) {
    let dists: Vec<f64> = nb.indices.iter().map(|&i| (index.point(i) - p).norm()).collect();
    let n = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / n;
    let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let delta = var.sqrt();
    let mut h = Matrix3::zeros();
    let mut total = 0.0;
    for (&i, &d) in nb.indices.iter().zip(&dists) {
        let w = if delta > 0.0 { gaussian_weight(d, delta) } else { 1.0 };
        let g = gradients[i];
        h += g * g.transpose() * w;
        total += w;
    }
    (h, total)
}

/// (Tr³/Det, is_edge). Singular non-zero matrices are edges with ratio ∞; the zero matrix is not an edge.
pub fn ratio_test(h: &Matrix3<f64>, t: f64) -> (f64, bool) {
    let tr = h.trace();
    if !(tr > 0.0) {
        return (0.0, false);
    }
    let det = h.determinant();
    let tr3 = tr * tr * tr;
    if det <= SINGULAR_REL * tr3 {
        return (f64::INFINITY, true);
    }
    let ratio = tr3 / det;
    (ratio, ratio >= t)
}

/// Full per-point scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamScores {
    pub scores: Vec<EdgeScore>,
    /// Isotropic term added to every normalized structure matrix.
    pub floor: f64,
    /// Points whose gradient had an axis without usable neighbors.
    pub flagged_axes: usize,
}

impl SeamScores {
    /// Indices with ratio ≥ t (superlevel set of the ratio).
    pub fn edges_at(&self, t: f64) -> Vec<usize> {
        (0..self.scores.len()).filter(|&i| self.scores[i].ratio >= t).collect()
    }

    pub fn edges(&self) -> Vec<usize> {
        (0..self.scores.len()).filter(|&i| self.scores[i].is_edge).collect()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.intensity).collect()
    }
}

/// Intensity, gradient and ratio for every point of the cloud.
pub fn score_cloud(cloud: &PointCloud, cfg: &SeamConfig) -> Result<SeamScores> {
    cfg.validate()?;
    let index = SpatialIndex::build(cloud)?;
    let spec = cfg.neighborhood;
    let hoods: Vec<Neighborhood> =
        cloud.points().par_iter().map(|p| adaptive_neighbors(&index, p, &spec)).collect::<Result<_>>()?;
    let intensities: Vec<f64> =
        (0..cloud.len()).into_par_iter().map(|i| intensity_from(&index, &cloud.points()[i], &hoods[i])).collect();
    let grads: Vec<AxisGradient> = (0..cloud.len())
        .into_par_iter()
        .map(|i| gradient_from(&index, i, &hoods[i], &intensities, cfg.axis_guard))
        .collect();
    let gvec: Vec<Vector3<f64>> = grads.iter().map(|g| g.value).collect();
    let normalized: Vec<Matrix3<f64>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            if cfg.smoothing {
                let (h, total) = structure_from(&index, &cloud.points()[i], &hoods[i], &gvec);
                if total > 0.0 {
                    h / total
                } else {
                    h
                }
            } else {
                gvec[i] * gvec[i].transpose()
            }
        })
        .collect();
    let mut traces: Vec<f64> = normalized.iter().map(|h| h.trace()).collect();
    traces.sort_by(f64::total_cmp);
    let floor = cfg.floor_scale * traces[traces.len() / 2] / 3.0;
    let scores = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let (ratio, is_edge) = ratio_test(&(normalized[i] + Matrix3::identity() * floor), cfg.threshold);
            EdgeScore { intensity: intensities[i], gradient: gvec[i], ratio, is_edge }
        })
        .collect();
    let flagged_axes = grads.iter().filter(|g| g.empty_axes.iter().any(|&e| e)).count();
    Ok(SeamScores { scores, floor, flagged_axes })
}

/// Indices of edge points.
pub fn extract_seam(cloud: &PointCloud, cfg: &SeamConfig) -> Result<Vec<usize>> {
    Ok(score_cloud(cloud, cfg)?.edges())
}

/// Edge points that carry the highest intensity among edge points within `radius`
/// (ties to the lower index): a one-point-wide ridge through a detected band.
pub fn ridge_points(points: &[Point3<f64>], intensities: &[f64], radius: f64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::from_points(points)?;
    Ok((0..points.len())
        .into_par_iter()
        .filter(|&i| {
            index.radius(&points[i], radius).iter().all(|n| {
                let (a, b) = (intensities[n.index], intensities[i]);
                n.index == i || a < b || (a == b && n.index > i)
            })
        })
        .collect())
}

/// Debug dump: `index,intensity,ix,iy,iz,ratio,is_edge`.
pub fn scores_csv(scores: &[EdgeScore]) -> String {
    let mut s = String::from("index,intensity,ix,iy,iz,ratio,is_edge\n");
    for (i, e) in scores.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            e.intensity, e.gradient.x, e.gradient.y, e.gradient.z, e.ratio, e.is_edge as u8
        );
    }
    s
}
