use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::PointCloud;
use crate::error::{Error, Result};

/// Voxel of a point on the grid whose cells are centred on multiples of `size`.
pub(crate) fn voxel_key(p: &Point3<f64>, size: f64) -> [i64; 3] {
    [(p.x / size).round() as i64, (p.y / size).round() as i64, (p.z / size).round() as i64]
}

/// One centroid per occupied voxel, in voxel-key order. Normals are averaged and renormalized.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::InvalidParameter(format!("voxel size {voxel_size} must be > 0")));
    }
    struct Acc {
        sum: Vector3<f64>,
        count: usize,
        normal: Vector3<f64>,
        first_normal: Vector3<f64>,
    }
    let normals = cloud.normals();
    let mut buckets: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let n = normals.map_or_else(Vector3::zeros, |n| n[i]);
        buckets
            .entry(voxel_key(p, voxel_size))
            .and_modify(|a| {
                a.sum += p.coords;
                a.count += 1;
                a.normal += n;
            })
            .or_insert(Acc { sum: p.coords, count: 1, normal: n, first_normal: n });
    }
    let mut points = Vec::with_capacity(buckets.len());
    let mut out_normals = Vec::with_capacity(buckets.len());
    for acc in buckets.values() {
        points.push(Point3::from(acc.sum / acc.count as f64));
        let norm = acc.normal.norm();
        // opposite normals can cancel; keep the first one then
        out_normals.push(if norm > 1e-9 { acc.normal / norm } else { acc.first_normal });
    }
    Ok(PointCloud::from_parts(points, normals.map(|_| out_normals)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_in_one_voxel_becomes_midpoint() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.3, 0.2, 0.1)]).unwrap();
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0] - Point3::new(0.2, 0.15, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn sparse_cloud_unchanged() {
        let pts: Vec<_> = (0..10).map(|i| Point3::new(i as f64 * 3.0, 0.0, -(i as f64))).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        let mut got: Vec<_> = out.points().to_vec();
        got.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(got, pts);
    }

    #[test]
    fn normals_averaged() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        let cloud = PointCloud::with_normals(vec![Point3::origin(), Point3::new(0.1, 0.0, 0.0)], vec![a, b]).unwrap();
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        let n = out.normals().unwrap()[0];
        assert!((n - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_size() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(voxel_downsample(&cloud, -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn plane_at_zero_stays_one_layer() {
        let pts: Vec<_> = (0..200)
            .map(|i| {
                Point3::new((i % 20) as f64 * 0.001, (i / 20) as f64 * 0.001, if i % 2 == 0 { 1e-4 } else { -1e-4 })
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let out = voxel_downsample(&cloud, 0.002).unwrap();
        assert!(out.points().iter().all(|p| p.z.abs() < 2e-4));
        assert_eq!(out.len(), 11 * 6);
    }
}
