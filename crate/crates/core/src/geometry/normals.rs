//! PCA normals: smallest-eigenvalue eigenvector of the neighborhood covariance.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{adaptive_neighbors, NeighborhoodSpec, PointCloud, SpatialIndex};
use crate::error::{Error, Result};

/// Relative size of the middle eigenvalue below which points count as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

/// Sign convention for normals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Orientation {
    /// Point toward this location (typically the camera origin).
    Toward(Point3<f64>),
    /// n.z >= 0.
    #[default]
    PositiveZ,
}

impl Orientation {
    fn orient(&self, p: &Point3<f64>, n: Vector3<f64>) -> Vector3<f64> {
        let flip = match self {
            Orientation::Toward(v) => n.dot(&(v - p)) < 0.0,
            Orientation::PositiveZ => n.z < 0.0,
        };
        if flip {
            -n
        } else {
            n
        }
    }
}

pub(crate) fn covariance_normal(points: &[Point3<f64>]) -> Result<Vector3<f64>> {
    if points.len() < 3 {
        return Err(Error::DegenerateNeighborhood);
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid, large) = (order[0], order[1], order[2]);
    let lmax = eig.eigenvalues[large];
    if !(lmax > 0.0) || eig.eigenvalues[mid] <= COLLINEAR_TOL * lmax {
        return Err(Error::DegenerateNeighborhood);
    }
    Ok(eig.eigenvectors.column(small).normalize())
}

/// Unit normal at `p` from its adaptive neighborhood.
pub fn estimate_normal(
    index: &SpatialIndex,
    p: &Point3<f64>,
    spec: &NeighborhoodSpec,
    orientation: Orientation,
) -> Result<Vector3<f64>> {
    let nb = adaptive_neighbors(index, p, spec)?;
    let pts: Vec<Point3<f64>> = nb.indices.iter().map(|&i| index.point(i)).collect();
    Ok(orientation.orient(p, covariance_normal(&pts)?))
}

/// Normals for every point. Points with degenerate neighborhoods take the
/// normal of their nearest non-degenerate point; their indices are returned.
pub fn estimate_all_normals(
    cloud: &PointCloud,
    spec: &NeighborhoodSpec,
    orientation: Orientation,
) -> Result<(PointCloud, Vec<usize>)> {
    if cloud.len() < spec.min_points() + 1 {
        return Err(Error::InsufficientPoints { needed: spec.min_points() + 1, got: cloud.len() });
    }
    let index = SpatialIndex::build(cloud)?;
    let raw: Vec<Option<Vector3<f64>>> = cloud
        .points()
        .par_iter()
        .map(|p| match estimate_normal(&index, p, spec, orientation) {
            Ok(n) => Ok(Some(n)),
            Err(Error::DegenerateNeighborhood) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let flagged: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_none()).collect();
    if flagged.len() == raw.len() {
        return Err(Error::DegenerateNeighborhood);
    }
    let mut normals: Vec<Vector3<f64>> = raw.iter().map(|n| n.unwrap_or_else(Vector3::z)).collect();
    for &i in &flagged {
        let p = cloud.points()[i];
        let mut k = 8;
        let donor = loop {
            let found = index.knn(&p, k).into_iter().find(|nb| raw[nb.index].is_some());
            if let Some(nb) = found {
                break nb.index;
            }
            k = (k * 4).min(cloud.len());
        };
        normals[i] = orientation.orient(&p, normals[donor]);
    }
    let (points, _) = cloud.clone().into_parts();
    Ok((PointCloud::from_parts(points, Some(normals)), flagged))
}
