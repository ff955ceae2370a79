//! Scan-session directories: `session.json` plus one PLY per frame.
//!
//! ```json
//! { "hand_eye": [16 floats],
//!   "frames": [{ "ply": "frame_000.ply", "end_effector_pose": [16 floats] }],
//!   "metadata": { ... } }
//! ```
//! Matrices are row-major. `metadata` is optional and free-form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, ply};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::transform::{RigidTransform, POSE_FILE_TOL};

pub const SESSION_FILE: &str = "session.json";

/// One capture: a camera-frame cloud and the pose that maps it to the robot base.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    cloud: PointCloud,
    end_effector_pose: RigidTransform,
    camera_pose: RigidTransform,
}

impl ScanFrame {
    /// `camera_pose = end_effector_pose ∘ hand_eye`.
    pub fn new(cloud: PointCloud, end_effector_pose: RigidTransform, hand_eye: &RigidTransform) -> Self {
        let camera_pose = end_effector_pose.compose(hand_eye);
        Self { cloud, end_effector_pose, camera_pose }
    }

    /// Derives the flange pose from a known camera pose.
    pub fn from_camera_pose(cloud: PointCloud, camera_pose: RigidTransform, hand_eye: &RigidTransform) -> Self {
        let end_effector_pose = camera_pose.compose(&hand_eye.inverse());
        Self { cloud, end_effector_pose, camera_pose }
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn camera_pose(&self) -> &RigidTransform {
        &self.camera_pose
    }

    pub fn end_effector_pose(&self) -> &RigidTransform {
        &self.end_effector_pose
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSession {
    pub frames: Vec<ScanFrame>,
    pub hand_eye: RigidTransform,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ScanSession {
    pub fn new(frames: Vec<ScanFrame>, hand_eye: RigidTransform) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("a session needs at least one frame".into()));
        }
        Ok(Self { frames, hand_eye, metadata: BTreeMap::new() })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    hand_eye: [f64; 16],
    frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    ply: String,
    end_effector_pose: [f64; 16],
}

pub fn read_session(dir: &Path) -> Result<ScanSession> {
    let path = dir.join(SESSION_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: SessionFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { line: e.line(), msg: format!("{SESSION_FILE}: {e}") })?;
    let hand_eye = RigidTransform::from_row_major(&file.hand_eye, POSE_FILE_TOL)
        .map_err(|e| Error::InvalidPose(format!("hand_eye: {e}")))?;
    let mut frames = Vec::with_capacity(file.frames.len());
    for (i, entry) in file.frames.iter().enumerate() {
        let pose = RigidTransform::from_row_major(&entry.end_effector_pose, POSE_FILE_TOL)
            .map_err(|e| Error::InvalidPose(format!("frame {i}: {e}")))?;
        let cloud = ply::read_ply(&dir.join(&entry.ply))?;
        frames.push(ScanFrame::new(cloud, pose, &hand_eye));
    }
    let mut session = ScanSession::new(frames, hand_eye)?;
    session.metadata = file.metadata;
    Ok(session)
}

pub fn write_session(session: &ScanSession, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(session.frames.len());
    for (i, frame) in session.frames.iter().enumerate() {
        let name = format!("frame_{i:03}.ply");
        ply::write_ply(&frame.cloud, &dir.join(&name))?;
        entries.push(FrameEntry { ply: name, end_effector_pose: frame.end_effector_pose.to_row_major() });
    }
    let file =
        SessionFile { hand_eye: session.hand_eye.to_row_major(), frames: entries, metadata: session.metadata.clone() };
    let mut json = serde_json::to_string_pretty(&file).expect("session serializes");
    json.push('\n');
    atomic_write(&dir.join(SESSION_FILE), json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    fn small_cloud() -> PointCloud {
        PointCloud::new(vec![Point3::new(0.5, 0.25, 1.0), Point3::new(-0.125, 0.0, 2.0)]).unwrap()
    }

    #[test]
    fn identity_session_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let id = RigidTransform::identity();
        let s = ScanSession::new(vec![ScanFrame::new(small_cloud(), id, &id)], id).unwrap();
        write_session(&s, dir.path()).unwrap();
        assert_eq!(read_session(dir.path()).unwrap(), s);
    }

    #[test]
    fn posed_session_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let he = RigidTransform::from_rotation_vector(Vector3::new(0.01, 0.2, -0.1), Vector3::new(0.0, 0.05, 0.1));
        let frames = (0..3)
            .map(|i| {
                let ee = RigidTransform::from_rotation_vector(
                    Vector3::new(0.3 * i as f64, -0.1, 0.7),
                    Vector3::new(0.4, -0.2 * i as f64, 0.6),
                );
                ScanFrame::new(small_cloud(), ee, &he)
            })
            .collect();
        let mut s = ScanSession::new(frames, he).unwrap();
        s.metadata.insert("kind".into(), serde_json::json!("cylinder_on_plate"));
        write_session(&s, dir.path()).unwrap();
        assert_eq!(read_session(dir.path()).unwrap(), s);
    }

    fn write_raw(dir: &Path, json: &str) {
        std::fs::write(dir.join(SESSION_FILE), json).unwrap();
        ply::write_ply(&small_cloud(), &dir.join("f.ply")).unwrap();
    }

    #[test]
    fn fifteen_numbers_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let id: Vec<String> = RigidTransform::identity().to_row_major().iter().map(|v| v.to_string()).collect();
        let short = id[..15].join(",");
        write_raw(
            dir.path(),
            &format!(
                "{{\n\"hand_eye\": [{}],\n\"frames\": [{{\"ply\": \"f.ply\", \"end_effector_pose\": [{short}]}}]\n}}",
                id.join(",")
            ),
        );
        assert!(matches!(read_session(dir.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn reflection_pose_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let id: Vec<String> = RigidTransform::identity().to_row_major().iter().map(|v| v.to_string()).collect();
        let mut flipped = id.clone();
        flipped[10] = "-1".into();
        write_raw(
            dir.path(),
            &format!(
                "{{\"hand_eye\": [{}], \"frames\": [{{\"ply\": \"f.ply\", \"end_effector_pose\": [{}]}}]}}",
                id.join(","),
                flipped.join(",")
            ),
        );
        assert!(matches!(read_session(dir.path()), Err(Error::InvalidPose(_))));
    }

    #[test]
    fn empty_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let id: Vec<String> = RigidTransform::identity().to_row_major().iter().map(|v| v.to_string()).collect();
        write_raw(dir.path(), &format!("{{\"hand_eye\": [{}], \"frames\": []}}", id.join(",")));
        assert!(matches!(read_session(dir.path()), Err(Error::EmptyInput(_))));
    }
}
