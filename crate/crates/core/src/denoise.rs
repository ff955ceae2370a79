//! Bilateral filter for point clouds: each point slides along its normal by a
//! weighted mean of its neighbors' offsets along that normal.
//!
//! Weights are Gaussians in the spatial distance (σ_m) and in the normal offset
//! (σ_n), both σ read as standard deviations: w(x) = exp(−x² / 2σ²).

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{estimate_all_normals, NeighborhoodSpec, Orientation, PointCloud, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralConfig {
    pub radius: f64,
    pub sigma_m: f64,
    pub sigma_n: f64,
    pub iterations: usize,
}

impl BilateralConfig {
    /// r = 3 × spacing, σ_m = r / 2, σ_n = spacing, one pass.
    pub fn for_spacing(spacing: f64) -> Self {
        let radius = 3.0 * spacing;
        Self { radius, sigma_m: radius / 2.0, sigma_n: spacing, iterations: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.radius) || !positive(self.sigma_m) || !positive(self.sigma_n) || self.iterations == 0 {
            return Err(Error::InvalidParameter(format!("bilateral parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn gauss(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp()
}

/// Signed displacement along `n` for a point with the given neighbors; 0 without neighbors.
pub fn bilateral_delta(p: &Point3<f64>, n: &Vector3<f64>, neighbors: &[Point3<f64>], cfg: &BilateralConfig) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for q in neighbors {
        let d = q - p;
        let h = n.dot(&d);
        let w = gauss(d.norm(), cfg.sigma_m) * gauss(h, cfg.sigma_n);
        num += w * h;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Jacobi-style passes: every displacement is computed from the cloud as it was at the
/// start of the pass. Normals are re-estimated (with `normal_spec`) before each pass after the first.
pub fn bilateral_filter(
    cloud: &PointCloud,
    cfg: &BilateralConfig,
    normal_spec: &NeighborhoodSpec,
) -> Result<PointCloud> {
    cfg.validate()?;
    if !cloud.has_normals() {
        return Err(Error::InvalidParameter("bilateral filter needs normals".into()));
    }
    let mut current = cloud.clone();
    for pass in 0..cfg.iterations {
        if pass > 0 {
            current = estimate_all_normals(&current, normal_spec, Orientation::PositiveZ)?.0;
        }
        let index = SpatialIndex::build(&current)?;
        let normals = current.normals().expect("normals present");
        let moved: Vec<Point3<f64>> = current
            .points()
            .par_iter()
            .zip(normals.par_iter())
            .enumerate()
            .map(|(i, (p, n))| {
                let nb: Vec<Point3<f64>> = index
                    .radius(p, cfg.radius)
                    .into_iter()
                    .filter(|nb| nb.index != i)
                    .map(|nb| current.points()[nb.index])
                    .collect();
                p + n * bilateral_delta(p, n, &nb, cfg)
            })
            .collect();
        current = PointCloud::from_parts(moved, Some(normals.to_vec()));
    }
    Ok(current)
}
