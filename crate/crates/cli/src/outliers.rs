//! Statistical outlier removal: a point is dropped when its mean distance to its
//! k nearest neighbors exceeds the cloud mean of that quantity by `std_ratio` deviations.

use seamforge::geometry::{PointCloud, SpatialIndex};
use seamforge::{Error, Result};

pub const NEIGHBORS: usize = 10;
pub const STD_RATIO: f64 = 2.0;

pub fn remove_statistical(cloud: &PointCloud, k: usize, std_ratio: f64) -> Result<PointCloud> {
    if cloud.len() <= k {
        return Err(Error::InsufficientPoints { needed: k + 1, got: cloud.len() });
    }
    let index = SpatialIndex::build(cloud)?;
    let mean_dist: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| {
            let nb = index.knn(p, k + 1);
            nb.iter().skip(1).map(|n| n.dist_sq.sqrt()).sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_dist.len() as f64;
    let mu = mean_dist.iter().sum::<f64>() / n;
    let sd = (mean_dist.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| mean_dist[i] <= mu + std_ratio * sd).collect();
    Ok(cloud.select(&keep))
}
