//! Point clouds, exact spatial queries, PCA normals and voxel downsampling.

mod index;
mod normals;
mod voxel;

pub use index::{Neighbor, SpatialIndex};
pub use normals::{estimate_all_normals, estimate_normal, Orientation};
pub use voxel::voxel_downsample;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// Positions in meters with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self { points, normals: None })
    }

    pub fn with_normals(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        check_finite(&points)?;
        check_normals(&points, &normals)?;
        Ok(Self { points, normals: Some(normals) })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(points: Vec<Point3<f64>>, normals: Option<Vec<Vector3<f64>>>) -> Self {
        debug_assert!(normals.as_ref().is_none_or(|n| n.len() == points.len()));
        Self { points, normals }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn set_normals(&mut self, normals: Vec<Vector3<f64>>) -> Result<()> {
        check_normals(&self.points, &normals)?;
        self.normals = Some(normals);
        Ok(())
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn into_parts(self) -> (Vec<Point3<f64>>, Option<Vec<Vector3<f64>>>) {
        (self.points, self.normals)
    }

    /// Sub-cloud of the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect());
        Self { points, normals }
    }

    /// Concatenation; normals kept only if both sides have them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self { points, normals }
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }
}

fn check_finite(points: &[Point3<f64>]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::Data(format!("point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

fn check_normals(points: &[Point3<f64>], normals: &[Vector3<f64>]) -> Result<()> {
    if normals.len() != points.len() {
        return Err(Error::Data(format!("{} normals for {} points", normals.len(), points.len())));
    }
    for (i, n) in normals.iter().enumerate() {
        if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Data(format!("normal {i} is not a finite unit vector")));
        }
    }
    Ok(())
}

/// Axis-aligned box, used for seam regions of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points(points: &[Point3<f64>]) -> Option<Self> {
        let first = points.first()?;
        let mut b = Aabb { min: [first.x, first.y, first.z], max: [first.x, first.y, first.z] };
        for p in points {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (0..3).map(|k| (self.max[k] - self.min[k]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Radius and minimum count of a local neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodSpec {
    radius: f64,
    min_points: usize,
}

impl NeighborhoodSpec {
    pub fn new(radius: f64, min_points: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!("neighborhood radius {radius} must be > 0")));
        }
        if min_points < 3 {
            return Err(Error::InvalidParameter(format!("neighborhood min_points {min_points} must be >= 3")));
        }
        Ok(Self { radius, min_points })
    }

    /// r = 3 × mean spacing, m = 10.
    pub fn default_for(cloud: &PointCloud) -> Result<Self> {
        Self::new(3.0 * mean_point_spacing(cloud)?, 10)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn min_points(&self) -> usize {
        self.min_points
    }
}

/// Neighbor indices of a query point plus the radius actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    /// Sorted by distance, ties by index.
    pub indices: Vec<usize>,
    /// `spec.radius`, or the distance to the farthest neighbor when the count fallback fired.
    pub radius: f64,
}

/// Radius-r neighbors if there are at least m of them, otherwise the m nearest.
/// Points at zero distance from `p` are excluded.
pub fn adaptive_neighbors(index: &SpatialIndex, p: &Point3<f64>, spec: &NeighborhoodSpec) -> Result<Neighborhood> {
    let m = spec.min_points;
    if index.len() < m + 1 {
        return Err(Error::InsufficientPoints { needed: m + 1, got: index.len() });
    }
    let within: Vec<usize> =
        index.radius(p, spec.radius).into_iter().filter(|n| n.dist_sq > 0.0).map(|n| n.index).collect();
    if within.len() >= m {
        return Ok(Neighborhood { indices: within, radius: spec.radius });
    }
    let mut k = m + 1;
    loop {
        let near: Vec<Neighbor> = index.knn(p, k).into_iter().filter(|n| n.dist_sq > 0.0).take(m).collect();
        if near.len() == m || k >= index.len() {
            if near.is_empty() {
                return Err(Error::InsufficientPoints { needed: m + 1, got: 1 });
            }
            let radius = near.last().map(|n| n.dist_sq.sqrt()).unwrap_or(spec.radius);
            return Ok(Neighborhood { indices: near.iter().map(|n| n.index).collect(), radius });
        }
        k = (2 * k).min(index.len());
    }
}

/// Mean nearest-neighbor distance.
pub fn mean_point_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: cloud.len() });
    }
    let index = SpatialIndex::build(cloud)?;
    let nn: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            index.knn(&cloud.points[i], 2).into_iter().find(|n| n.index != i).map(|n| n.dist_sq.sqrt()).unwrap_or(0.0)
        })
        .collect();
    Ok(nn.iter().sum::<f64>() / nn.len() as f64)
}
