//! Frame merging: pose pre-alignment followed by linearized point-to-plane ICP.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    estimate_all_normals, mean_point_spacing, voxel_downsample, NeighborhoodSpec, Orientation, PointCloud, SpatialIndex,
};
use crate::pcio::{ScanFrame, ScanSession};
use crate::transform::{nearest_rotation, RigidTransform};

/// Singular-value ratio below which the 6×6 system counts as rank-deficient.
const RANK_TOL: f64 = 1e-9;
/// Objective values below this are an exact fit.
const OBJECTIVE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Meters.
    pub max_correspondence_distance: f64,
    /// Relative change of the objective that ends the loop.
    pub convergence_delta: f64,
    /// Compared against squared distances (m²).
    pub fitness_distance: f64,
}

impl IcpConfig {
    /// Defaults derived from the data: correspondence radius 3 × spacing,
    /// fitness threshold (2 × voxel)².
    pub fn for_spacing(spacing: f64, voxel_size: f64) -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance: 3.0 * spacing,
            convergence_delta: 1e-6,
            fitness_distance: (2.0 * voxel_size).powi(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0
            || !positive(self.max_correspondence_distance)
            || !positive(self.convergence_delta)
            || !positive(self.fitness_distance)
        {
            return Err(Error::InvalidParameter(format!("ICP parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Fitness at the initial transform, then after each accepted iteration.
    pub fitness_history: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: Point3<f64>,
    pub target: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// Applies the frame's camera pose; normals are rotated only.
pub fn compose_to_base(frame: &ScanFrame) -> PointCloud {
    transform_cloud(frame.cloud(), frame.camera_pose())
}

pub fn transform_cloud(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud.normals().map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect());
    PointCloud::from_parts(points, normals)
}

/// Nearest target point (and its normal) of every transformed source point within `max_dist`.
pub fn find_correspondences(
    source: &PointCloud,
    target: &PointCloud,
    target_index: &SpatialIndex,
    current: &RigidTransform,
    max_dist: f64,
) -> Result<Vec<Correspondence>> {
    let normals = target.normals().ok_or_else(|| Error::InvalidParameter("ICP target needs normals".into()))?;
    let max_sq = max_dist * max_dist;
    let pairs: Vec<Correspondence> = source
        .points()
        .par_iter()
        .filter_map(|s| {
            let moved = current.apply_point(s);
            let nn = target_index.nearest(&moved);
            (nn.dist_sq <= max_sq).then(|| Correspondence {
                source: moved,
                target: target.points()[nn.index],
                normal: normals[nn.index],
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap { max_dist });
    }
    Ok(pairs)
}

/// Mean squared point-to-plane residual.
pub fn point_to_plane_objective(pairs: &[Correspondence], t: &RigidTransform) -> f64 {
    pairs.iter().map(|c| (t.apply_point(&c.source) - c.target).dot(&c.normal).powi(2)).sum::<f64>() / pairs.len() as f64
}

/// One linearized least-squares step in (α, β, γ, px, py, pz), projected back onto a rotation.
pub fn solve_linear_step(pairs: &[Correspondence]) -> Result<RigidTransform> {
    if pairs.len() < 6 {
        return Err(Error::InsufficientPoints { needed: 6, got: pairs.len() });
    }
    let mut a = DMatrix::<f64>::zeros(pairs.len(), 6);
    let mut b = DVector::<f64>::zeros(pairs.len());
    for (i, c) in pairs.iter().enumerate() {
        let s = c.source.coords;
        let cross = s.cross(&c.normal);
        a.row_mut(i).copy_from_slice(&[cross.x, cross.y, cross.z, c.normal.x, c.normal.y, c.normal.z]);
        b[i] = -(c.source - c.target).dot(&c.normal);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < RANK_TOL * smax {
        return Err(Error::DegenerateSystem { ratio: if smax > 0.0 { smin / smax } else { 0.0 } });
    }
    let x = svd.solve(&b, 0.0).map_err(|_| Error::DegenerateSystem { ratio: smin / smax })?;
    let (al, be, ga) = (x[0], x[1], x[2]);
    #[rustfmt::skip]
    let small_angle = Matrix3::new(
        1.0, -ga,  be,
        ga,  1.0, -al,
        -be, al,  1.0,
    );
    let rotation = nearest_rotation(&small_angle);
    RigidTransform::from_parts(rotation, Vector3::new(x[3], x[4], x[5]), 1e-9)
        .map_err(|_| Error::DegenerateSystem { ratio: smin / smax })
}

/// Fraction of source points whose squared distance to their nearest target point,
/// after applying `m`, is below `d`.
pub fn fitness(source: &PointCloud, target_index: &SpatialIndex, m: &RigidTransform, d: f64) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let hits = source.points().par_iter().filter(|s| target_index.nearest(&m.apply_point(s)).dist_sq < d).count();
    hits as f64 / source.len() as f64
}

/// Iterative closest point with the point-to-plane metric. The objective never increases
/// across accepted steps; a step that would increase it ends the loop.
pub fn icp(source: &PointCloud, target: &PointCloud, initial: &RigidTransform, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    if !target.has_normals() {
        return Err(Error::InvalidParameter("ICP target needs normals".into()));
    }
    let index = SpatialIndex::build(target)?;
    let mut current = *initial;
    let mut pairs = find_correspondences(source, target, &index, &current, cfg.max_correspondence_distance)?;
    let mut objective = point_to_plane_objective(&pairs, &RigidTransform::identity());
    let mut history = vec![fitness(source, &index, &current, cfg.fitness_distance)];
    let mut iterations_run = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iterations {
        let step = solve_linear_step(&pairs)?;
        let candidate = step.compose(&current);
        let new_pairs = match find_correspondences(source, target, &index, &candidate, cfg.max_correspondence_distance)
        {
            Ok(p) => p,
            Err(Error::NoOverlap { .. }) => {
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let new_objective = point_to_plane_objective(&new_pairs, &RigidTransform::identity());
        if new_objective > objective {
            converged = true;
            break;
        }
        current = candidate;
        pairs = new_pairs;
        iterations_run = it;
        history.push(fitness(source, &index, &current, cfg.fitness_distance));
        let change = objective - new_objective;
        let done = new_objective <= OBJECTIVE_FLOOR || change <= cfg.convergence_delta * objective;
        objective = new_objective;
        if done {
            converged = true;
            break;
        }
    }
    Ok(IcpResult { transform: current, fitness_history: history, iterations_run, converged })
}

/// Registration outcome of one frame against the model built so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub fitness_before: f64,
    pub fitness_after: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub model: PointCloud,
    /// One entry per frame after the first.
    pub frames: Vec<FrameReport>,
    /// Refined camera poses. Frame 0 keeps its reported pose unless consensus anchoring moved the model.
    pub poses: Vec<RigidTransform>,
}

/// Knobs of the merge that are not ICP parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    pub voxel_size: f64,
    pub normal_min_points: usize,
    /// Normal radius as a multiple of the model spacing.
    pub normal_radius_factor: f64,
    /// Place the merged model by the mean ICP correction over all frames instead of
    /// trusting frame 0's reported pose alone.
    pub consensus_anchor: bool,
}

impl MergeConfig {
    pub fn new(voxel_size: f64) -> Self {
        Self { voxel_size, normal_min_points: 10, normal_radius_factor: 3.0, consensus_anchor: false }
    }
}

/// Sequential merge: frame 0 is the reference, every later frame is pre-aligned with its
/// camera pose and refined by ICP against the union of the frames before it.
/// `icp_cfg` of `None` derives ICP parameters from the data.
pub fn merge_session(session: &ScanSession, merge: &MergeConfig, icp_cfg: Option<&IcpConfig>) -> Result<MergeResult> {
    let mut aligned = vec![compose_to_base(&session.frames[0])];
    let mut poses = vec![*session.frames[0].camera_pose()];
    let mut reports = Vec::new();
    for (fi, frame) in session.frames.iter().enumerate().skip(1) {
        let union = aligned.iter().skip(1).fold(aligned[0].clone(), |acc, c| acc.concat(c));
        let target = voxel_downsample(&union.without_normals(), merge.voxel_size)?;
        let spacing = mean_point_spacing(&target)?;
        let spec = NeighborhoodSpec::new(merge.normal_radius_factor * spacing, merge.normal_min_points)?;
        let (target, _) = estimate_all_normals(&target, &spec, Orientation::PositiveZ)?;
        let base = compose_to_base(frame);
        let source = voxel_downsample(&base.clone().without_normals(), merge.voxel_size)?;
        let cfg = icp_cfg.copied().unwrap_or_else(|| IcpConfig::for_spacing(spacing, merge.voxel_size));
        let result = icp(&source, &target, &RigidTransform::identity(), &cfg)?;
        reports.push(FrameReport {
            frame: fi,
            fitness_before: result.fitness_history[0],
            fitness_after: *result.fitness_history.last().expect("history has the initial entry"),
            iterations: result.iterations_run,
            converged: result.converged,
        });
        poses.push(result.transform.compose(frame.camera_pose()));
        aligned.push(transform_cloud(&base, &result.transform));
    }
    if merge.consensus_anchor && poses.len() > 1 {
        let corrections: Vec<RigidTransform> =
            poses.iter().zip(&session.frames).map(|(p, f)| p.compose(&f.camera_pose().inverse())).collect();
        let back = mean_transform(&corrections).inverse();
        for (cloud, pose) in aligned.iter_mut().zip(poses.iter_mut()) {
            *cloud = transform_cloud(cloud, &back);
            *pose = back.compose(pose);
        }
    }
    let union = aligned.iter().skip(1).fold(aligned[0].clone(), |acc, c| acc.concat(c));
    let model = voxel_downsample(&union.without_normals(), merge.voxel_size)?;
    Ok(MergeResult { model, frames: reports, poses })
}

/// Chordal mean: sign-aligned quaternion average and mean translation.
pub fn mean_transform(ts: &[RigidTransform]) -> RigidTransform {
    let Some(first) = ts.first() else {
        return RigidTransform::identity();
    };
    let q0 = first.quaternion().into_inner();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut t = Vector3::zeros();
    for x in ts {
        let qi = x.quaternion().into_inner();
        q += if qi.dot(&q0) < 0.0 { -qi } else { qi };
        t += x.translation();
    }
    let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    RigidTransform::from_rotation(rot, t / ts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three orthogonal planes (a box corner) with normals.
    fn corner(step: f64) -> PointCloud {
        let mut pts = Vec::new();
        let mut ns = Vec::new();
        let n = (0.1 / step) as usize;
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (i as f64 * step + 0.003, j as f64 * step + 0.002);
                pts.push(Point3::new(u, v, 0.0));
                ns.push(Vector3::z());
                pts.push(Point3::new(u, 0.0, v));
                ns.push(Vector3::y());
                pts.push(Point3::new(0.0, u, v));
                ns.push(Vector3::x());
            }
        }
        PointCloud::with_normals(pts, ns).unwrap()
    }

    #[test]
    fn identity_pose_leaves_cloud() {
        let c = corner(0.01);
        let id = RigidTransform::identity();
        let f = ScanFrame::new(c.clone(), id, &id);
        assert_eq!(compose_to_base(&f), c);
    }

    #[test]
    fn translation_pose_shifts_x() {
        let c = corner(0.02);
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let f = ScanFrame::new(c.clone(), t, &RigidTransform::identity());
        let out = compose_to_base(&f);
        for (a, b) in c.points().iter().zip(out.points()) {
            assert_eq!(b.x, a.x + 1.0);
            assert_eq!((b.y, b.z), (a.y, a.z));
        }
        assert_eq!(out.normals(), c.normals());
    }

    #[test]
    fn self_correspondences_and_disjoint() {
        let c = corner(0.02);
        let idx = SpatialIndex::build(&c).unwrap();
        let pairs = find_correspondences(&c, &c, &idx, &RigidTransform::identity(), 0.01).unwrap();
        assert_eq!(pairs.len(), c.len());
        assert!(pairs.iter().all(|p| p.source == p.target));
        let far = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(find_correspondences(&c, &c, &idx, &far, 0.1), Err(Error::NoOverlap { .. })));
    }

    #[test]
    fn aligned_pairs_give_identity() {
        let c = corner(0.02);
        let pairs: Vec<_> = c
            .points()
            .iter()
            .zip(c.normals().unwrap())
            .map(|(p, n)| Correspondence { source: *p, target: *p, normal: *n })
            .collect();
        let t = solve_linear_step(&pairs).unwrap();
        assert!(t.magnitude().0 < 1e-15 && t.magnitude().1 < 1e-15);
    }

    #[test]
    fn parallel_normals_are_degenerate() {
        let pairs: Vec<_> = (0..20)
            .map(|i| {
                let p = Point3::new(i as f64 * 0.01, (i % 3) as f64 * 0.01, 0.0);
                Correspondence { source: p, target: p, normal: Vector3::z() }
            })
            .collect();
        assert!(matches!(solve_linear_step(&pairs), Err(Error::DegenerateSystem { .. })));
    }

    #[test]
    fn translation_along_normal_recovered() {
        // x-facing plane shifted by 1 cm along x, plus two other planes fixing the rest
        let c = corner(0.01);
        let shift = Vector3::new(0.01, 0.0, 0.0);
        let pairs: Vec<_> = c
            .points()
            .iter()
            .zip(c.normals().unwrap())
            .map(|(p, n)| Correspondence { source: *p, target: p + shift, normal: *n })
            .collect();
        let t = solve_linear_step(&pairs).unwrap();
        assert!((t.translation() - shift).norm() < 1e-12);
        assert!(t.magnitude().0 < 1e-12);
    }

    #[test]
    fn one_degree_yaw_in_one_step() {
        let c = corner(0.005);
        let rot = RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.0, 1f64.to_radians()), Vector3::zeros());
        let pairs: Vec<_> = c
            .points()
            .iter()
            .zip(c.normals().unwrap())
            .map(|(p, n)| Correspondence { source: *p, target: rot.apply_point(p), normal: rot.apply_vector(n) })
            .collect();
        let t = solve_linear_step(&pairs).unwrap();
        let gamma = t.rotation_vector().z.to_degrees();
        assert!((gamma - 1.0).abs() < 0.05, "gamma {gamma}");
        let before = point_to_plane_objective(&pairs, &RigidTransform::identity());
        let after = point_to_plane_objective(&pairs, &t);
        assert!(after < 1e-3 * before);
    }

    #[test]
    fn linear_solution_beats_random_probes() {
        let c = corner(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = RigidTransform::from_rotation_vector(
            Vector3::new(0.003, -0.002, 0.004),
            Vector3::new(0.002, 0.001, -0.003),
        );
        let pairs: Vec<_> = c
            .points()
            .iter()
            .zip(c.normals().unwrap())
            .map(|(p, n)| Correspondence { source: *p, target: g.apply_point(p), normal: g.apply_vector(n) })
            .collect();
        let t = solve_linear_step(&pairs).unwrap();
        let base = point_to_plane_objective(&pairs, &t);
        for _ in 0..100 {
            let mut d = [0.0; 6];
            for v in d.iter_mut() {
                *v = rng.gen_range(-1e-3..1e-3);
            }
            let probe =
                RigidTransform::from_rotation_vector(Vector3::new(d[0], d[1], d[2]), Vector3::new(d[3], d[4], d[5]))
                    .compose(&t);
            assert!(point_to_plane_objective(&pairs, &probe) >= base);
        }
    }

    #[test]
    fn icp_on_itself_converges_immediately() {
        let c = corner(0.01);
        let cfg = IcpConfig {
            max_iterations: 20,
            max_correspondence_distance: 0.02,
            convergence_delta: 1e-6,
            fitness_distance: 1e-6,
        };
        let r = icp(&c, &c, &RigidTransform::identity(), &cfg).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert!(r.converged);
        assert_eq!(*r.fitness_history.last().unwrap(), 1.0);
    }

    #[test]
    fn icp_recovers_small_offset() {
        let target = corner(0.004);
        let g =
            RigidTransform::from_rotation_vector(Vector3::new(0.02, -0.01, 0.03), Vector3::new(0.004, -0.003, 0.002));
        let source = transform_cloud(&target, &g.inverse());
        let cfg = IcpConfig {
            max_iterations: 50,
            max_correspondence_distance: 0.03,
            convergence_delta: 1e-9,
            fitness_distance: 1e-8,
        };
        let r = icp(&source, &target, &RigidTransform::identity(), &cfg).unwrap();
        let err = r.transform.compose(&g.inverse());
        assert!(err.magnitude().0.to_degrees() < 0.05, "{:?}", err.magnitude());
        assert!(err.magnitude().1 < 1e-4);
        assert!(r.fitness_history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fitness_extremes() {
        let c = corner(0.02);
        let idx = SpatialIndex::build(&c).unwrap();
        assert_eq!(fitness(&c, &idx, &RigidTransform::identity(), 1e-6), 1.0);
        let far = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(fitness(&c, &idx, &far, 0.01), 0.0);
    }

    #[test]
    fn fitness_conjugation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = corner(0.01);
        let source = corner(0.013);
        let m = RigidTransform::from_rotation_vector(Vector3::new(0.01, 0.0, 0.02), Vector3::new(0.001, 0.0, 0.0));
        let g = RigidTransform::from_rotation_vector(
            Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            Vector3::new(rng.gen(), rng.gen(), rng.gen()),
        );
        let idx = SpatialIndex::build(&target).unwrap();
        let f0 = fitness(&source, &idx, &m, 2e-5);
        let gt = transform_cloud(&target, &g);
        let gs = transform_cloud(&source, &g);
        let gm = g.compose(&m).compose(&g.inverse());
        let f1 = fitness(&gs, &SpatialIndex::build(&gt).unwrap(), &gm, 2e-5);
        assert!((f0 - f1).abs() <= 2.0 / source.len() as f64, "{f0} vs {f1}");
    }

    #[test]
    fn mean_of_symmetric_rotations_is_identity() {
        let a = RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.0, 0.2), Vector3::new(0.001, 0.0, 0.0));
        let b = RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.0, -0.2), Vector3::new(-0.001, 0.0, 0.0));
        let (angle, dist) = mean_transform(&[a, b]).magnitude();
        assert!(angle < 1e-12 && dist < 1e-15, "{angle} {dist}");
        let (angle, dist) = mean_transform(&[a, a, a]).compose(&a.inverse()).magnitude();
        assert!(angle < 1e-12 && dist < 1e-15);
        assert_eq!(mean_transform(&[]), RigidTransform::identity());
    }

    #[test]
    fn consensus_anchor_spreads_first_frame_error() {
        let model = corner(0.004);
        let truth: Vec<RigidTransform> = (0..4)
            .map(|i| {
                RigidTransform::from_rotation_vector(
                    Vector3::new(0.1 * i as f64, -0.05, 0.02),
                    Vector3::new(0.0, 0.01 * i as f64, 0.5),
                )
            })
            .collect();
        let delta = RigidTransform::from_rotation_vector(
            Vector3::new(0.0, 0.5f64.to_radians(), 0.0),
            Vector3::new(0.001, 0.0, 0.0),
        );
        let hand_eye = RigidTransform::identity();
        let frames = truth
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let reported = if i == 0 { delta.compose(t) } else { *t };
                ScanFrame::from_camera_pose(
                    transform_cloud(&model, &t.inverse()).without_normals(),
                    reported,
                    &hand_eye,
                )
            })
            .collect();
        let session = ScanSession::new(frames, hand_eye).unwrap();
        let err = |anchor: bool| {
            let merge = MergeConfig { consensus_anchor: anchor, ..MergeConfig::new(0.004) };
            let r = merge_session(&session, &merge, None).unwrap();
            r.poses.iter().zip(&truth).map(|(p, t)| p.compose(&t.inverse()).magnitude().0).fold(0.0, f64::max)
        };
        let (plain, anchored) = (err(false), err(true));
        assert!(plain >= 0.5f64.to_radians() - 1e-9, "{}", plain.to_degrees());
        assert!(anchored < 0.4 * plain, "{} vs {}", anchored.to_degrees(), plain.to_degrees());
    }
}
