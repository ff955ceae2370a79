//! End-to-end configuration and stage functions: reconstruct, denoise, detect,
//! plan, evaluate. Radii are given as multiples of the measured point spacing
//! (or of the voxel size) so one config serves every workpiece scale.

use std::time::Instant;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::denoise::{bilateral_filter, BilateralConfig};
use crate::error::{Error, Result};
use crate::eval::{align_truth, f1_score, pose_rmse, F1Report, PoseRmse};
use crate::geometry::{
    adaptive_neighbors, estimate_all_normals, estimate_normal, mean_point_spacing, Aabb, NeighborhoodSpec, Orientation,
    PointCloud, SpatialIndex,
};
use crate::path::{
    build_frames, fit_crease, greedy_thin, interpolate_path, link_clusters, offset_points, order_seam_points,
    path_length, Crease, PathConfig, PathPoint,
};
use crate::pcio::ScanSession;
use crate::registration::{merge_session, FrameReport, IcpConfig, MergeConfig};
use crate::seam::{score_cloud, SeamConfig, SeamScores};
use crate::synth::{Workpiece, WorkpieceKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalSettings {
    pub radius_factor: f64,
    pub min_points: usize,
}

impl Default for NormalSettings {
    fn default() -> Self {
        Self { radius_factor: 3.0, min_points: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpSettings {
    pub max_iterations: usize,
    /// Meters; 3 × spacing when absent.
    pub max_correspondence_distance: Option<f64>,
    pub convergence_delta: f64,
    /// Squared meters; (2 × voxel)² when absent.
    pub fitness_distance: Option<f64>,
    /// Anchor the merged model on the mean correction of all frames rather than on frame 0.
    pub consensus_anchor: bool,
}

impl Default for IcpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance: None,
            convergence_delta: 1e-6,
            fitness_distance: None,
            consensus_anchor: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilateralSettings {
    pub enabled: bool,
    pub radius_factor: f64,
    pub sigma_m_factor: f64,
    pub sigma_n_factor: f64,
    pub iterations: usize,
}

impl Default for BilateralSettings {
    fn default() -> Self {
        Self { enabled: true, radius_factor: 3.0, sigma_m_factor: 1.5, sigma_n_factor: 1.0, iterations: 1 }
    }
}

/// Wider than the normal neighborhood: the centroid offset of flat regions shrinks
/// relative to creases, which keeps the detected seam continuous.
const SEAM_RADIUS_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeamSettings {
    pub radius_factor: f64,
    pub min_points: usize,
    pub threshold: f64,
    pub smoothing: bool,
    pub axis_guard: f64,
    pub floor_scale: f64,
    /// Edge points outside this box are dropped.
    pub roi: Option<Aabb>,
}

impl Default for SeamSettings {
    fn default() -> Self {
        Self {
            radius_factor: SEAM_RADIUS_FACTOR,
            min_points: 10,
            threshold: 50.0,
            smoothing: true,
            axis_guard: 0.5,
            floor_scale: 1.0,
            roi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSettings {
    pub torch_offset: f64,
    pub smoothing_window: usize,
    pub interpolation_density: usize,
    /// Thinning radius over seam candidates (strongest edge kept), and the resampling step, × point spacing.
    pub ridge_radius_factor: f64,
    /// Neighborhood radius of the crease fit at each candidate, × point spacing.
    pub normal_radius_factor: f64,
    /// Odd window of the moving average over ordered seam positions; 1 keeps them as detected.
    pub position_window: usize,
    /// Snap seam points onto the intersection of two faces fitted around them, with the
    /// face-normal bisector as torch axis. Off: plain local normal at the detected point.
    pub crease_fit: bool,
    /// Edges weaker than this fraction of the 90th-percentile edge intensity are not path candidates.
    pub min_intensity_fraction: f64,
}

const RIDGE_FACTOR: f64 = 2.0;
const PATH_NORMAL_FACTOR: f64 = 6.0;
const POSITION_WINDOW: usize = 1;
const MIN_INTENSITY_FRACTION: f64 = 0.6;
/// Faces meeting at a shallower angle are not a crease.
const CREASE_MIN_ANGLE_DEG: f64 = 20.0;
/// Candidates closer than this (× spacing) belong to one seam cluster.
const CLUSTER_LINK_FACTOR: f64 = 5.0;
/// Minimum crease-fit neighborhood, × the per-face minimum; sparse regions widen the radius.
const CREASE_NEIGHBOR_FACTOR: usize = 4;
/// Refits of the crease around the previous projection.
const CREASE_RECENTER_STEPS: usize = 2;

impl Default for PathSettings {
    fn default() -> Self {
        let p = PathConfig::default();
        Self {
            torch_offset: p.torch_offset,
            smoothing_window: p.smoothing_window,
            interpolation_density: p.interpolation_density,
            ridge_radius_factor: RIDGE_FACTOR,
            normal_radius_factor: PATH_NORMAL_FACTOR,
            position_window: POSITION_WINDOW,
            crease_fit: true,
            min_intensity_fraction: MIN_INTENSITY_FRACTION,
        }
    }
}

impl PathSettings {
    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            torch_offset: self.torch_offset,
            smoothing_window: self.smoothing_window,
            interpolation_density: self.interpolation_density,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Raster cell, meters; 2 × voxel when absent.
    pub cell_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seed for synthetic sessions.
    pub seed: u64,
    pub voxel_size: f64,
    pub normals: NormalSettings,
    pub icp: IcpSettings,
    pub bilateral: BilateralSettings,
    pub seam: SeamSettings,
    pub path: PathSettings,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            voxel_size: 0.002,
            normals: NormalSettings::default(),
            icp: IcpSettings::default(),
            bilateral: BilateralSettings::default(),
            seam: SeamSettings::default(),
            path: PathSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be a positive number")))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: format!("config: {e}") })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("voxel_size", self.voxel_size)?;
        positive("normals.radius_factor", self.normals.radius_factor)?;
        if self.normals.min_points < 3 || self.seam.min_points < 3 {
            return Err(Error::InvalidParameter("neighborhood min_points must be >= 3".into()));
        }
        if self.icp.max_iterations == 0 {
            return Err(Error::InvalidParameter("icp.max_iterations must be >= 1".into()));
        }
        positive("icp.convergence_delta", self.icp.convergence_delta)?;
        if let Some(v) = self.icp.max_correspondence_distance {
            positive("icp.max_correspondence_distance", v)?;
        }
        if let Some(v) = self.icp.fitness_distance {
            positive("icp.fitness_distance", v)?;
        }
        positive("bilateral.radius_factor", self.bilateral.radius_factor)?;
        positive("bilateral.sigma_m_factor", self.bilateral.sigma_m_factor)?;
        positive("bilateral.sigma_n_factor", self.bilateral.sigma_n_factor)?;
        if self.bilateral.iterations == 0 {
            return Err(Error::InvalidParameter("bilateral.iterations must be >= 1".into()));
        }
        positive("seam.radius_factor", self.seam.radius_factor)?;
        self.seam_config(1.0)?.validate()?;
        self.path.path_config().validate()?;
        positive("path.ridge_radius_factor", self.path.ridge_radius_factor)?;
        positive("path.normal_radius_factor", self.path.normal_radius_factor)?;
        if !(0.0..1.0).contains(&self.path.min_intensity_fraction) {
            return Err(Error::InvalidParameter("path.min_intensity_fraction must be in [0, 1)".into()));
        }
        if self.path.position_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter("path.position_window must be odd".into()));
        }
        positive("eval.cell_size", self.cell_size())?;
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.eval.cell_size.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn normal_spec(&self, spacing: f64) -> Result<NeighborhoodSpec> {
        NeighborhoodSpec::new(self.normals.radius_factor * spacing, self.normals.min_points)
    }

    pub fn icp_config(&self, spacing: f64) -> IcpConfig {
        let d = IcpConfig::for_spacing(spacing, self.voxel_size);
        IcpConfig {
            max_iterations: self.icp.max_iterations,
            max_correspondence_distance: self.icp.max_correspondence_distance.unwrap_or(d.max_correspondence_distance),
            convergence_delta: self.icp.convergence_delta,
            fitness_distance: self.icp.fitness_distance.unwrap_or(d.fitness_distance),
        }
    }

    pub fn bilateral_config(&self, spacing: f64) -> BilateralConfig {
        BilateralConfig {
            radius: self.bilateral.radius_factor * spacing,
            sigma_m: self.bilateral.sigma_m_factor * spacing,
            sigma_n: self.bilateral.sigma_n_factor * spacing,
            iterations: self.bilateral.iterations,
        }
    }

    pub fn seam_config(&self, spacing: f64) -> Result<SeamConfig> {
        let spec = NeighborhoodSpec::new(self.seam.radius_factor * spacing, self.seam.min_points)?;
        Ok(SeamConfig {
            neighborhood: spec,
            threshold: self.seam.threshold,
            smoothing: self.seam.smoothing,
            axis_guard: self.seam.axis_guard,
            floor_scale: self.seam.floor_scale,
        })
    }

    /// Bundled settings for a synthetic workpiece: the default config plus a seam ROI
    /// around the joint.
    pub fn for_workpiece(kind: WorkpieceKind) -> Self {
        let mut cfg = Self::default();
        cfg.seam.roi = Some(default_roi(kind));
        cfg
    }
}

/// Box around the analytic seam of a fixture, wide enough for the detected band.
pub fn default_roi(kind: WorkpieceKind) -> Aabb {
    use crate::synth::dims::*;
    match kind {
        WorkpieceKind::VButtPlate => Aabb {
            min: [-V_BUTT_LENGTH / 2.0 + 0.01, -0.004, -V_BUTT_THICKNESS - 0.004],
            max: [V_BUTT_LENGTH / 2.0 - 0.01, 0.004, -V_BUTT_THICKNESS + 0.004],
        },
        WorkpieceKind::Dihedral => Aabb {
            min: [-DIHEDRAL_LENGTH / 2.0 + 0.01, -0.004, -0.004],
            max: [DIHEDRAL_LENGTH / 2.0 - 0.01, 0.006, 0.006],
        },
        WorkpieceKind::CylinderOnPlate => {
            let r = CYLINDER_RADIUS + 0.01;
            Aabb { min: [-r, -r, -0.004], max: [r, r, 0.006] }
        }
        WorkpieceKind::YShape => Aabb { min: [-0.08, -0.045, 0.02], max: [0.12, 0.045, 0.08] },
    }
}

/// Merged model with estimated normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub model: PointCloud,
    pub frames: Vec<FrameReport>,
    pub spacing: f64,
}

pub fn reconstruct(session: &ScanSession, cfg: &PipelineConfig) -> Result<Reconstruction> {
    let merge = MergeConfig {
        voxel_size: cfg.voxel_size,
        normal_min_points: cfg.normals.min_points,
        normal_radius_factor: cfg.normals.radius_factor,
        consensus_anchor: cfg.icp.consensus_anchor,
    };
    let icp_cfg = if cfg.icp.max_correspondence_distance.is_some() && cfg.icp.fitness_distance.is_some() {
        Some(cfg.icp_config(0.0))
    } else {
        None
    };
    let merged = merge_session(session, &merge, icp_cfg.as_ref())?;
    let model = with_normals(&merged.model, cfg)?;
    let spacing = mean_point_spacing(&model)?;
    Ok(Reconstruction { model, frames: merged.frames, spacing })
}

/// Estimates normals with the configured neighborhood (radius × measured spacing).
pub fn with_normals(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<PointCloud> {
    let spacing = mean_point_spacing(cloud)?;
    Ok(estimate_all_normals(cloud, &cfg.normal_spec(spacing)?, Orientation::PositiveZ)?.0)
}

/// Bilateral pass(es) followed by fresh normals. Returns the input unchanged when disabled.
pub fn denoise(model: &PointCloud, cfg: &PipelineConfig) -> Result<PointCloud> {
    if !cfg.bilateral.enabled {
        return Ok(model.clone());
    }
    let model = if model.has_normals() { model.clone() } else { with_normals(model, cfg)? };
    let spacing = mean_point_spacing(&model)?;
    let filtered = bilateral_filter(&model, &cfg.bilateral_config(spacing), &cfg.normal_spec(spacing)?)?;
    with_normals(&filtered, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub scores: SeamScores,
    /// Edge indices inside the ROI.
    pub edges: Vec<usize>,
    pub spacing: f64,
}

pub fn detect(model: &PointCloud, cfg: &PipelineConfig) -> Result<Detection> {
    let spacing = mean_point_spacing(model)?;
    let scores = score_cloud(model, &cfg.seam_config(spacing)?)?;
    let edges = in_roi(model.points(), scores.edges(), cfg.seam.roi.as_ref());
    Ok(Detection { scores, edges, spacing })
}

pub fn in_roi(points: &[Point3<f64>], idx: Vec<usize>, roi: Option<&Aabb>) -> Vec<usize> {
    match roi {
        Some(b) => idx.into_iter().filter(|&i| b.contains(&points[i])).collect(),
        None => idx,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    /// Dense path after interpolation.
    pub poses: Vec<PathPoint>,
    /// Frames at the ridge points before interpolation.
    pub key_poses: Vec<PathPoint>,
    pub ridge_points: usize,
    pub cyclic: bool,
}

/// From edge points to a torch path. Strong edges are snapped onto the local crease of
/// `model`, the largest linked cluster is thinned by edge intensity and chained, then
/// smoothed, resampled evenly, offset along the crease bisector, framed and densified.
pub fn plan_path(edges: &PointCloud, model: &PointCloud, cfg: &PipelineConfig) -> Result<PlannedPath> {
    if edges.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: edges.len() });
    }
    let spacing = mean_point_spacing(model)?;
    let spec = cfg.seam_config(spacing)?.neighborhood;
    let index = SpatialIndex::build(model)?;
    let intensity: Vec<f64> = edges
        .points()
        .iter()
        .map(|p| {
            let nb = adaptive_neighbors(&index, p, &spec)?;
            let c =
                nb.indices.iter().fold(Vector3::zeros(), |a, &i| a + index.point(i).coords) / nb.indices.len() as f64;
            Ok((p.coords - c).norm() / nb.radius)
        })
        .collect::<Result<_>>()?;
    let mut sorted = intensity.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = cfg.path.min_intensity_fraction * sorted[(sorted.len() - 1) * 9 / 10];
    let normals = model.normals().ok_or_else(|| Error::InvalidParameter("path planning needs model normals".into()))?;
    let nspec = NeighborhoodSpec::new(
        cfg.path.normal_radius_factor * spacing,
        CREASE_NEIGHBOR_FACTOR * cfg.normals.min_points,
    )?;

    // seam candidates: strong edges, snapped onto their local crease when one is found
    let mut cand_pts = Vec::new();
    let mut cand_nrm = Vec::new();
    let mut cand_int = Vec::new();
    for (p, &i) in edges.points().iter().zip(&intensity) {
        if i < floor {
            continue;
        }
        if cfg.path.crease_fit {
            let fit_at = |q: &Point3<f64>| -> Result<Option<Crease>> {
                let nb = adaptive_neighbors(&index, q, &nspec)?;
                let near: Vec<Point3<f64>> = nb.indices.iter().map(|&k| index.point(k)).collect();
                let ns: Vec<Vector3<f64>> = nb.indices.iter().map(|&k| normals[k]).collect();
                Ok(fit_crease(q, &near, &ns, cfg.normals.min_points, CREASE_MIN_ANGLE_DEG))
            };
            // refit around the projection so anchors off the crease see both faces evenly
            let mut fit = fit_at(p)?;
            for _ in 0..CREASE_RECENTER_STEPS {
                let Some(c) = fit else { break };
                if (c.point - p).norm() > nspec.radius() {
                    fit = None;
                    break;
                }
                fit = fit_at(&c.point)?.or(Some(c));
            }
            if let Some(c) = fit {
                cand_pts.push(c.point);
                cand_nrm.push(c.normal);
                cand_int.push(i);
            }
        } else {
            let nb = adaptive_neighbors(&index, p, &nspec)?;
            let near: Vec<Point3<f64>> = nb.indices.iter().map(|&k| index.point(k)).collect();
            let centroid = near.iter().fold(Vector3::zeros(), |a, q| a + q.coords) / near.len() as f64;
            cand_pts.push(*p);
            cand_nrm.push(estimate_normal(&index, p, &nspec, Orientation::Toward(Point3::from(centroid)))?);
            cand_int.push(i);
        }
    }
    if cand_pts.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: cand_pts.len() });
    }
    let main = link_clusters(&cand_pts, CLUSTER_LINK_FACTOR * spacing)?.swap_remove(0);
    let main_int: Vec<f64> = main.iter().map(|&k| cand_int[k]).collect();
    let main_pts: Vec<Point3<f64>> = main.iter().map(|&k| cand_pts[k]).collect();
    let ridge: Vec<usize> = greedy_thin(&main_pts, &main_int, cfg.path.ridge_radius_factor * spacing)?
        .into_iter()
        .map(|k| main[k])
        .collect();
    let ridge_pts: Vec<Point3<f64>> = ridge.iter().map(|&k| cand_pts[k]).collect();
    let ordering = order_seam_points(&ridge_pts)?;
    let chain: Vec<Point3<f64>> = ordering.path.iter().map(|&k| ridge_pts[k]).collect();
    let chain_nrm: Vec<Point3<f64>> = ordering.path.iter().map(|&k| Point3::from(cand_nrm[ridge[k]])).collect();
    let pts = moving_average(&chain, cfg.path.position_window, ordering.cyclic);
    let nrm = moving_average(&chain_nrm, cfg.path.position_window, ordering.cyclic);
    let (pts, nrm) = resample_uniform(&pts, &nrm, cfg.path.ridge_radius_factor * spacing, ordering.cyclic);
    let pcfg = cfg.path.path_config();
    let offset = offset_points(&pts, &nrm, pcfg.torch_offset);
    let framed = build_frames(&offset, &nrm, &pcfg, ordering.cyclic)?;
    let mut key = framed.poses;
    if ordering.cyclic {
        key.push(key[0]);
    }
    let poses = interpolate_path(&key, pcfg.interpolation_density)?;
    Ok(PlannedPath { poses, key_poses: key, ridge_points: ridge.len(), cyclic: ordering.cyclic })
}

/// Polyline resampled at equal arc-length steps close to `step` (the closing segment
/// included when cyclic); directions interpolated linearly and renormalized.
fn resample_uniform(
    pts: &[Point3<f64>],
    dirs: &[Point3<f64>],
    step: f64,
    cyclic: bool,
) -> (Vec<Point3<f64>>, Vec<Vector3<f64>>) {
    let mut ring: Vec<usize> = (0..pts.len()).collect();
    if cyclic {
        ring.push(0);
    }
    let mut cum = vec![0.0];
    for w in ring.windows(2) {
        cum.push(cum.last().copied().unwrap_or(0.0) + (pts[w[1]] - pts[w[0]]).norm());
    }
    let total = cum.last().copied().unwrap_or(0.0);
    let segments = ((total / step).round() as usize).max(1);
    let count = if cyclic { segments } else { segments + 1 };
    let mut out_p = Vec::with_capacity(count);
    let mut out_n = Vec::with_capacity(count);
    for k in 0..count {
        let target = total * k as f64 / segments as f64;
        let seg = cum.partition_point(|&c| c <= target).clamp(1, ring.len().max(2) - 1) - 1;
        let span = cum.get(seg + 1).copied().unwrap_or(total) - cum[seg];
        let a = if span > 0.0 { ((target - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (i, j) = (ring[seg], ring[(seg + 1).min(ring.len() - 1)]);
        out_p.push(pts[i] + (pts[j] - pts[i]) * a);
        let d = dirs[i].coords * (1.0 - a) + dirs[j].coords * a;
        out_n.push(d.try_normalize(1e-12).unwrap_or(dirs[i].coords.normalize()));
    }
    (out_p, out_n)
}

/// Centered moving average, window clamped at the ends (wrapped when cyclic).
fn moving_average(pts: &[Point3<f64>], window: usize, cyclic: bool) -> Vec<Point3<f64>> {
    let h = (window / 2) as isize;
    let n = pts.len() as isize;
    (0..n)
        .map(|i| {
            let (mut sum, mut count) = (Vector3::zeros(), 0.0);
            for j in i - h..=i + h {
                let j = if cyclic { j.rem_euclid(n) } else { j.clamp(0, n - 1) };
                sum += pts[j as usize].coords;
                count += 1.0;
            }
            Point3::from(sum / count)
        })
        .collect()
}

/// Ground truth for a synthetic workpiece.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub seam_points: Vec<Point3<f64>>,
    pub path: Vec<PathPoint>,
    pub closed: bool,
}

impl Truth {
    pub fn for_workpiece(kind: WorkpieceKind, cfg: &PipelineConfig) -> Result<Self> {
        let w = Workpiece::new(kind);
        let fine = cfg.cell_size() / 4.0;
        Ok(Self {
            seam_points: w.seam_points(fine)?,
            path: w.truth_path(fine, cfg.path.torch_offset)?,
            closed: w.seam_is_closed(),
        })
    }

    /// Truth from a path file: its positions serve as seam points.
    pub fn from_path(path: Vec<PathPoint>) -> Self {
        Self { seam_points: path.iter().map(|p| p.position).collect(), path, closed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seam: Option<F1Report>,
    pub path: Option<PoseRmse>,
}

/// F1 of edge points (inside the seam ROI, if any) and pose RMSE of the path.
pub fn evaluate(
    edges: Option<&[Point3<f64>]>,
    path: Option<&[PathPoint]>,
    truth: &Truth,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let seam = edges.map(|e| f1_score(e, &truth.seam_points, cfg.cell_size())).transpose()?;
    let path = match path {
        Some(p) => {
            let aligned = align_truth(p, &truth.path, truth.closed)?;
            Some(pose_rmse(p, &aligned)?)
        }
        None => None,
    };
    Ok(EvalReport { seam, path })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub reconstruct_ms: f64,
    pub denoise_ms: f64,
    pub seam_ms: f64,
    pub path_ms: f64,
    pub total_ms: f64,
    pub seam_length_mm: f64,
    /// Seam length over total time.
    pub speed_mm_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub workpiece: Option<String>,
    pub frames: Vec<FrameReport>,
    pub model_points: usize,
    pub edge_points: usize,
    pub ridge_points: usize,
    pub flagged_gradient_axes: usize,
    pub ratio_floor: f64,
    pub path_poses: usize,
    pub path_length_m: f64,
    pub cyclic: bool,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub model: PointCloud,
    pub denoised: PointCloud,
    pub detection: Detection,
    pub edges: PointCloud,
    pub path: PlannedPath,
    pub report: PipelineReport,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// All stages in order. A `workpiece` entry in the session metadata enables evaluation
/// against the analytic seam.
pub fn run(session: &ScanSession, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let t = Instant::now();
    let rec = reconstruct(session, cfg)?;
    let reconstruct_ms = ms(t);
    let t = Instant::now();
    let denoised = denoise(&rec.model, cfg)?;
    let denoise_ms = ms(t);
    let t = Instant::now();
    let detection = detect(&denoised, cfg)?;
    let seam_ms = ms(t);
    let edges = denoised.select(&detection.edges);
    let t = Instant::now();
    let path = plan_path(&edges, &rec.model, cfg)?;
    let path_ms = ms(t);
    let total_ms = ms(start);

    let kind =
        session.metadata.get("workpiece").and_then(|v| v.as_str()).map(|s| s.parse::<WorkpieceKind>()).transpose()?;
    let eval = match kind {
        Some(k) => {
            let truth = Truth::for_workpiece(k, cfg)?;
            Some(evaluate(Some(edges.points()), Some(&path.poses), &truth, cfg)?)
        }
        None => None,
    };
    let length = path_length(&path.poses);
    let report = PipelineReport {
        workpiece: kind.map(|k| k.name().to_string()),
        frames: rec.frames.clone(),
        model_points: denoised.len(),
        edge_points: edges.len(),
        ridge_points: path.ridge_points,
        flagged_gradient_axes: detection.scores.flagged_axes,
        ratio_floor: detection.scores.floor,
        path_poses: path.poses.len(),
        path_length_m: length,
        cyclic: path.cyclic,
        eval,
    };
    let timings = StageTimings {
        reconstruct_ms,
        denoise_ms,
        seam_ms,
        path_ms,
        total_ms,
        seam_length_mm: length * 1e3,
        speed_mm_per_s: if total_ms > 0.0 { length * 1e3 / (total_ms / 1e3) } else { 0.0 },
    };
    Ok(PipelineOutput { model: rec.model, denoised, detection, edges, path, report, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = PipelineConfig::for_workpiece(WorkpieceKind::Dihedral);
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_json(r#"{"voxel": 0.002}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"seam": {"thresh": 50}}"#).is_err());
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_json(r#"{"voxel_size": -1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"seam": {"threshold": 20}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"path": {"smoothing_window": 4}}"#).is_err());
        assert!(matches!(PipelineConfig::from_json("{"), Err(Error::Parse { .. })));
    }
}
