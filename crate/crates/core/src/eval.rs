//! Scoring: rasterized seam coverage and its three-plane harmonic mean, pose
//! RMSE between paths matched by normalized arc length, and threshold sweeps.
//!
//! Plane accuracy is the fraction of ground-truth raster cells that also hold a
//! detected point. A plane with accuracy 0 makes the harmonic mean 0.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, SpatialIndex};
use crate::path::{slerp, PathPoint};
use crate::seam::SeamScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    fn axes(self) -> (usize, usize) {
        match self {
            Plane::Xy => (0, 1),
            Plane::Xz => (0, 2),
            Plane::Yz => (1, 2),
        }
    }
}

/// Occupied cells of a point set projected onto a coordinate plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub plane: Plane,
    pub cell_size: f64,
    pub cells: BTreeSet<(i64, i64)>,
}

impl RasterGrid {
    pub fn new(points: &[Point3<f64>], plane: Plane, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("cell size {cell_size} must be > 0")));
        }
        let (a, b) = plane.axes();
        let cells =
            points.iter().map(|p| ((p[a] / cell_size).floor() as i64, (p[b] / cell_size).floor() as i64)).collect();
        Ok(Self { plane, cell_size, cells })
    }

    pub fn shared(&self, other: &RasterGrid) -> usize {
        self.cells.intersection(&other.cells).count()
    }
}

/// |truth cells holding a detected point| / |truth cells|.
pub fn raster_accuracy(detected: &[Point3<f64>], truth: &[Point3<f64>], plane: Plane, cell_size: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("ground-truth seam is empty".into()));
    }
    let t = RasterGrid::new(truth, plane, cell_size)?;
    let d = RasterGrid::new(detected, plane, cell_size)?;
    Ok(t.shared(&d) as f64 / t.cells.len() as f64)
}

/// Harmonic mean of three accuracies; 0 if any is 0.
pub fn harmonic_f1(acc: [f64; 3]) -> f64 {
    if acc.iter().any(|&a| a <= 0.0) {
        return 0.0;
    }
    3.0 / acc.iter().map(|a| 1.0 / a).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub f1: f64,
    /// Accuracy on the xy, xz and yz planes.
    pub accuracy: [f64; 3],
    /// Fraction of detected cells that hold a truth point, per plane (informational).
    pub precision: [f64; 3],
}

pub fn f1_score(detected: &[Point3<f64>], truth: &[Point3<f64>], cell_size: f64) -> Result<F1Report> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("ground-truth seam is empty".into()));
    }
    let mut accuracy = [0.0; 3];
    let mut precision = [0.0; 3];
    for (k, plane) in Plane::ALL.into_iter().enumerate() {
        let t = RasterGrid::new(truth, plane, cell_size)?;
        let d = RasterGrid::new(detected, plane, cell_size)?;
        let shared = t.shared(&d) as f64;
        accuracy[k] = shared / t.cells.len() as f64;
        precision[k] = if d.cells.is_empty() { 0.0 } else { shared / d.cells.len() as f64 };
    }
    Ok(F1Report { f1: harmonic_f1(accuracy), accuracy, precision })
}

/// Pose at normalized arc length `s` ∈ [0, 1].
fn pose_at(path: &[PathPoint], cum: &[f64], s: f64) -> PathPoint {
    let total = *cum.last().expect("non-empty");
    if path.len() == 1 || total <= 0.0 {
        return path[0];
    }
    let target = s * total;
    let seg = cum.partition_point(|&c| c <= target).clamp(1, path.len() - 1) - 1;
    let span = cum[seg + 1] - cum[seg];
    let alpha = if span > 0.0 { ((target - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
    let (a, b) = (&path[seg], &path[seg + 1]);
    let pos = a.position + (b.position - a.position) * alpha;
    match slerp(&a.quaternion(), &b.quaternion(), alpha) {
        Some(q) => PathPoint::from_quaternion(pos, &q),
        None => PathPoint::from_quaternion(pos, &(if alpha < 0.5 { a } else { b }).quaternion()),
    }
}

fn cumulative(path: &[PathPoint]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(path.len());
    cum.push(0.0);
    for w in path.windows(2) {
        cum.push(cum.last().expect("non-empty") + (w[1].position - w[0].position).norm());
    }
    cum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRmse {
    pub position_m: f64,
    pub rotation_deg: f64,
    pub samples: usize,
}

/// Both paths resampled to max(len) poses at equal normalized arc length; position
/// RMSE in meters, geodesic rotation RMSE in degrees.
pub fn pose_rmse(model: &[PathPoint], truth: &[PathPoint]) -> Result<PoseRmse> {
    if model.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput("pose_rmse needs two non-empty paths".into()));
    }
    let n = model.len().max(truth.len());
    let (cm, ct) = (cumulative(model), cumulative(truth));
    let (mut sp, mut sr) = (0.0, 0.0);
    for k in 0..n {
        let s = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
        let a = pose_at(model, &cm, s);
        let b = pose_at(truth, &ct, s);
        sp += (a.position - b.position).norm_squared();
        sr += a.quaternion().angle_to(&b.quaternion()).powi(2);
    }
    Ok(PoseRmse { position_m: (sp / n as f64).sqrt(), rotation_deg: (sr / n as f64).sqrt().to_degrees(), samples: n })
}

/// Cuts a densely sampled truth path down to the stretch the model path covers and
/// orients it the same way: nearest truth poses to the model's ends delimit the
/// stretch; a closed truth loop starts at the model's start.
pub fn align_truth(model: &[PathPoint], truth: &[PathPoint], closed: bool) -> Result<Vec<PathPoint>> {
    if model.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput("align_truth needs two non-empty paths".into()));
    }
    let pts: Vec<Point3<f64>> = truth.iter().map(|p| p.position).collect();
    let index = SpatialIndex::from_points(&pts)?;
    let start = index.nearest(&model[0].position).index;
    let end_pos = model.last().expect("non-empty").position;
    if !closed {
        let end = index.nearest(&end_pos).index;
        return Ok(if start <= end {
            truth[start..=end].to_vec()
        } else {
            truth[end..=start].iter().rev().map(PathPoint::reversed).collect()
        });
    }
    let n = truth.len();
    // direction: compare the model's early progress with both ways round the loop
    let probe = model[(model.len() / 10).max(1).min(model.len() - 1)].position;
    let probe_idx = index.nearest(&probe).index;
    let fwd = (probe_idx + n - start) % n;
    let forward = fwd <= n / 2;
    // once round the loop, back to the start pose
    let ring: Vec<PathPoint> =
        (0..=n).map(|k| if forward { truth[(start + k) % n] } else { truth[(start + n - k) % n].reversed() }).collect();
    let cum = cumulative(&ring);
    let half = cum.last().expect("non-empty") / 2.0;
    let end = (0..=n)
        .filter(|&k| cum[k] >= half)
        .min_by(|&a, &b| {
            (ring[a].position - end_pos).norm().total_cmp(&(ring[b].position - end_pos).norm()).then(a.cmp(&b))
        })
        .unwrap_or(n);
    Ok(ring[..=end].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub threshold: f64,
    pub edges: usize,
    pub f1: f64,
    pub accuracy: [f64; 3],
    pub precision: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// First threshold with the highest F1.
    pub best_threshold: f64,
    pub best_f1: f64,
}

impl SweepReport {
    /// Whitespace-separated columns for plotting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# t\tf1\tedges\ta_xy\ta_xz\ta_yz\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}",
                e.threshold, e.f1, e.edges, e.accuracy[0], e.accuracy[1], e.accuracy[2]
            );
        }
        s
    }

    /// Peak strictly above both end points of the sweep.
    pub fn has_interior_maximum(&self) -> bool {
        let (first, last) = (self.entries[0].f1, self.entries[self.entries.len() - 1].f1);
        self.best_f1 > first && self.best_f1 > last
    }
}

/// F1 of the superlevel set {ratio ≥ t} (restricted to `roi`) for each threshold.
pub fn threshold_sweep(
    points: &[Point3<f64>],
    scores: &SeamScores,
    roi: Option<&Aabb>,
    truth: &[Point3<f64>],
    thresholds: &[f64],
    cell_size: f64,
) -> Result<SweepReport> {
    if thresholds.len() < 3 {
        return Err(Error::InvalidParameter(format!("sweep needs >= 3 thresholds, got {}", thresholds.len())));
    }
    if points.len() != scores.scores.len() {
        return Err(Error::InvalidParameter("scores do not match the cloud".into()));
    }
    let mut entries = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let detected: Vec<Point3<f64>> =
            scores.edges_at(t).into_iter().map(|i| points[i]).filter(|p| roi.is_none_or(|b| b.contains(p))).collect();
        let r = f1_score(&detected, truth, cell_size)?;
        entries.push(SweepEntry {
            threshold: t,
            edges: detected.len(),
            f1: r.f1,
            accuracy: r.accuracy,
            precision: r.precision,
        });
    }
    let best = entries
        .iter()
        .fold(None::<&SweepEntry>, |b, e| match b {
            Some(b) if b.f1 >= e.f1 => Some(b),
            _ => Some(e),
        })
        .expect("non-empty");
    Ok(SweepReport { best_threshold: best.threshold, best_f1: best.f1, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn line(n: usize, step: f64) -> Vec<Point3<f64>> {
        (0..n).map(|i| Point3::new(i as f64 * step, 0.3 * i as f64 * step, 0.01)).collect()
    }

    #[test]
    fn identical_sets_score_one() {
        let t = line(100, 0.001);
        assert_eq!(f1_score(&t, &t, 0.004).unwrap().f1, 1.0);
        assert_eq!(raster_accuracy(&[], &t, Plane::Xy, 0.004).unwrap(), 0.0);
        assert_eq!(f1_score(&[], &t, 0.004).unwrap().f1, 0.0);
        assert!(matches!(raster_accuracy(&t, &[], Plane::Xy, 0.004), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn harmonic_examples() {
        assert_eq!(harmonic_f1([1.0; 3]), 1.0);
        assert!((harmonic_f1([0.5; 3]) - 0.5).abs() < 1e-15);
        let want = 3.0 / (1.0 / 0.9 + 1.0 / 0.8 + 1.0 / 0.6);
        assert!((harmonic_f1([0.9, 0.8, 0.6]) - want).abs() < 1e-15);
        assert!((want - 0.744828).abs() < 1e-6);
        assert_eq!(harmonic_f1([0.9, 0.0, 0.6]), 0.0);
    }

    #[test]
    fn shifted_set_matches_cell_oracle() {
        let c = 0.004;
        let t = line(200, 0.0007);
        let d: Vec<_> = t.iter().map(|p| p + Vector3::new(1.5 * c, 0.0, 0.0)).collect();
        for plane in Plane::ALL {
            let (a, b) = plane.axes();
            let cell = |p: &Point3<f64>| ((p[a] / c).floor() as i64, (p[b] / c).floor() as i64);
            let tc: std::collections::HashSet<_> = t.iter().map(cell).collect();
            let dc: std::collections::HashSet<_> = d.iter().map(cell).collect();
            let want = tc.iter().filter(|x| dc.contains(x)).count() as f64 / tc.len() as f64;
            assert_eq!(raster_accuracy(&d, &t, plane, c).unwrap(), want);
        }
    }

    #[test]
    fn constant_offset_rmse() {
        let truth: Vec<PathPoint> = (0..50)
            .map(|i| {
                PathPoint::from_rotation_vector(Point3::new(i as f64 * 0.002, 0.0, 0.0), Vector3::new(0.0, 0.1, 0.0))
            })
            .collect();
        assert_eq!(pose_rmse(&truth, &truth).unwrap().position_m, 0.0);
        assert_eq!(pose_rmse(&truth, &truth).unwrap().rotation_deg, 0.0);
        let shifted: Vec<PathPoint> = truth
            .iter()
            .map(|p| {
                let mut q = *p;
                q.position += Vector3::new(0.0, 0.0, 0.001);
                q
            })
            .collect();
        let r = pose_rmse(&shifted, &truth).unwrap();
        assert!((r.position_m - 0.001).abs() < 1e-15);
        assert!(r.rotation_deg < 1e-6);
        assert!(matches!(pose_rmse(&[], &truth), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn different_lengths_compare_by_arc() {
        let mk = |n: usize| -> Vec<PathPoint> {
            (0..n)
                .map(|i| {
                    let x = i as f64 / (n - 1) as f64;
                    PathPoint::from_rotation_vector(Point3::new(x, 0.0, 0.0), Vector3::zeros())
                })
                .collect()
        };
        let r = pose_rmse(&mk(7), &mk(31)).unwrap();
        assert!(r.position_m < 1e-15);
        assert_eq!(r.samples, 31);
    }

    #[test]
    fn open_alignment_clips_and_reverses() {
        let truth: Vec<PathPoint> = (0..101)
            .map(|i| PathPoint::from_rotation_vector(Point3::new(i as f64 * 0.01, 0.0, 0.0), Vector3::zeros()))
            .collect();
        let model: Vec<PathPoint> = (20..=60).rev().map(|i| truth[i].reversed()).collect();
        let aligned = align_truth(&model, &truth, false).unwrap();
        assert_eq!(aligned.len(), 41);
        assert_eq!(aligned[0].position, truth[60].position);
        assert!(pose_rmse(&model, &aligned).unwrap().rotation_deg < 1e-9);
    }

    #[test]
    fn closed_alignment_follows_model_direction() {
        let n = 200;
        let circle = |k: usize| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Point3::new(a.cos(), a.sin(), 0.0)
        };
        let truth: Vec<PathPoint> =
            (0..n).map(|k| PathPoint::from_rotation_vector(circle(k), Vector3::new(0.0, 0.0, 0.1))).collect();
        // model runs backwards from k = 50 for three quarters of the loop
        let model: Vec<PathPoint> = (0..150).map(|j| truth[(50 + n - j) % n].reversed()).collect();
        let aligned = align_truth(&model, &truth, true).unwrap();
        assert_eq!(aligned.len(), 150);
        let r = pose_rmse(&model, &aligned).unwrap();
        assert!(r.position_m < 1e-12 && r.rotation_deg < 1e-6, "{r:?}");
    }

    #[test]
    fn sweep_reports_first_best() {
        let pts = line(50, 0.002);
        let scores = SeamScores {
            scores: (0..50)
                .map(|i| crate::seam::EdgeScore {
                    intensity: 0.0,
                    gradient: Vector3::zeros(),
                    ratio: if i < 25 { 100.0 } else { 40.0 },
                    is_edge: false,
                })
                .collect(),
            floor: 0.0,
            flagged_axes: 0,
        };
        let rep = threshold_sweep(&pts, &scores, None, &pts, &[10.0, 50.0, 200.0], 0.004).unwrap();
        assert_eq!(rep.best_threshold, 10.0);
        assert_eq!(rep.entries[0].f1, 1.0);
        assert!(rep.entries[1].f1 < 1.0 && rep.entries[1].f1 > 0.0);
        assert_eq!(rep.entries[2].f1, 0.0);
        assert!(!rep.has_interior_maximum());
        assert!(rep.to_tsv().lines().count() == 4);
        assert!(threshold_sweep(&pts, &scores, None, &pts, &[10.0, 50.0], 0.004).is_err());
    }
}
