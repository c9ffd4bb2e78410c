//! Landing-pad perception: synthetic fiducial detection, joint bundle pose
//! solving, recursive smoothing of the pad estimate, bundle calibration, and
//! the alignment setpoint for precision landing.

mod calibrate;
mod detect;
mod pnp;
mod rls;
mod study;

pub use calibrate::{calibrate_bundle, mean_quaternion, weiszfeld_median, TagObservation};
pub use detect::{detect_tags, observe_tag_poses};
pub use pnp::{solve_bundle_pnp, PnpSolution};
pub use rls::{rls_update, PadPoseEstimate, RlsParams};
pub use study::{bundle_noise_study, study_to_csv, StudyCell};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{canonicalize, yaw_quat};
use crate::{Pose, Quat, RigidTransform, Vec3};

#[derive(Debug, Error)]
pub enum PadVisionError {
    #[error("invalid tag bundle layout: {0}")]
    InvalidLayout(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("no tags of the bundle were detected")]
    NoTagsDetected,
    #[error("pose solve diverged (reprojection rms {rms:.2} px)")]
    PnpDiverged { rms: f64 },
    #[error("measurement contains non-finite values")]
    NonFiniteMeasurement,
    #[error("pad estimate not initialized yet")]
    Uninitialized,
    #[error("master tag was never observed")]
    NoMasterObservations,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Ideal pinhole camera plus the synthetic-detector knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera frame expressed in the body frame (camera looks along its
    /// own +z; the default mount points it straight down).
    pub body_from_camera: RigidTransform,
    /// Corner pixel noise, 1-sigma per coordinate.
    pub sigma_px: f64,
    /// Minimum projected side length for a tag to be detected, px.
    pub min_side_px: f64,
    /// Reprojection RMS above this discards the pose solve, px.
    pub max_rms_px: f64,
}

/// Corner pixel noise fitted so a single 48 cm tag viewed from 4 m yields
/// a 4.5 cm two-sigma height estimation error.
pub const DEFAULT_SIGMA_PX: f64 = 0.265;

/// Detection threshold on the projected tag side. Set so the 15 cm tag
/// drops out near 4.5 m and a 48 cm tag survives to 14 m.
pub const DEFAULT_MIN_SIDE_PX: f64 = 10.5;

impl Default for CameraModel {
    fn default() -> Self {
        // 100 degree horizontal field of view over 752 px.
        let f = 376.0 / 50f64.to_radians().tan();
        Self {
            width: 752,
            height: 480,
            fx: f,
            fy: f,
            cx: 376.0,
            cy: 240.0,
            body_from_camera: RigidTransform::from_quat_translation(
                rot_x_pi(),
                Vec3::new(0.0, 0.0, -0.02),
            ),
            sigma_px: DEFAULT_SIGMA_PX,
            min_side_px: DEFAULT_MIN_SIDE_PX,
            max_rms_px: 3.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), PadVisionError> {
        let bad = |m: &str| Err(PadVisionError::InvalidCamera(m.into()));
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return bad("principal point must lie inside the image");
        }
        if self.sigma_px < 0.0 || self.min_side_px <= 0.0 || self.max_rms_px <= 0.0 {
            return bad("noise and threshold parameters must be non-negative");
        }
        Ok(())
    }

    /// Project a camera-frame point to pixels; `None` behind the camera.
    pub fn project(&self, p_cam: &Vec3) -> Option<[f64; 2]> {
        if p_cam.z < 1e-6 {
            return None;
        }
        Some([
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ])
    }

    pub fn inside_image(&self, px: &[f64; 2]) -> bool {
        (0.0..=self.width as f64).contains(&px[0]) && (0.0..=self.height as f64).contains(&px[1])
    }

    /// World pose of the camera frame given the body pose.
    pub fn camera_world_pose(&self, body: &Pose) -> Pose {
        let cam = self.body_from_camera.to_pose();
        Pose::new(
            body.position + body.attitude.transform_vector(&cam.position),
            canonicalize(body.attitude * cam.attitude),
        )
    }
}

/// 180 degrees about x: the straight-down look direction for a camera whose
/// own +z is its optical axis.
pub fn rot_x_pi() -> Quat {
    Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI)
}

/// One fiducial of a bundle: its size and its rigid placement in the pad
/// (landing) frame.
#[derive(Debug, Clone)]
pub struct TagSpec {
    pub id: u32,
    pub side: f64,
    pub pad_from_tag: RigidTransform,
}

impl TagSpec {
    /// Corner positions in the tag frame: CCW from the bottom-left, in the
    /// tag plane z = 0.
    pub fn corners_tag(&self) -> [Vec3; 4] {
        let h = self.side / 2.0;
        [
            Vec3::new(-h, -h, 0.0),
            Vec3::new(h, -h, 0.0),
            Vec3::new(h, h, 0.0),
            Vec3::new(-h, h, 0.0),
        ]
    }
}

/// Rigid arrangement of fiducials around the landing pad.
#[derive(Debug, Clone)]
pub struct TagBundleLayout {
    pub name: String,
    pub tags: Vec<TagSpec>,
}

impl TagBundleLayout {
    pub fn new(name: impl Into<String>, tags: Vec<TagSpec>) -> Result<Self, PadVisionError> {
        let layout = Self {
            name: name.into(),
            tags,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), PadVisionError> {
        let mut ids: Vec<u32> = self.tags.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.tags.len() {
            return Err(PadVisionError::InvalidLayout("duplicate tag ids".into()));
        }
        if self.tags.iter().any(|t| t.side <= 0.0) {
            return Err(PadVisionError::InvalidLayout(
                "tag side lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tag(&self, id: u32) -> Option<&TagSpec> {
        self.tags.iter().find(|t| t.id == id)
    }

    /// Layout with a single tag of this bundle, used for per-tag studies.
    pub fn single(&self, id: u32) -> Option<Self> {
        self.tag(id).map(|t| Self {
            name: format!("{}/tag{}", self.name, id),
            tags: vec![t.clone()],
        })
    }

    pub fn from_records(
        name: impl Into<String>,
        records: &[TagRecord],
    ) -> Result<Self, PadVisionError> {
        let tags = records
            .iter()
            .map(|r| TagSpec {
                id: r.id,
                side: r.side_m,
                pad_from_tag: RigidTransform::from_quat_translation(
                    yaw_quat(r.yaw_deg.to_radians()),
                    Vec3::new(r.position_m[0], r.position_m[1], r.position_m[2]),
                ),
            })
            .collect();
        Self::new(name, tags)
    }

    pub fn to_records(&self) -> Vec<TagRecord> {
        self.tags
            .iter()
            .map(|t| {
                let pose = t.pad_from_tag.to_pose();
                TagRecord {
                    id: t.id,
                    side_m: t.side,
                    position_m: [pose.position.x, pose.position.y, pose.position.z],
                    yaw_deg: crate::geom::yaw_of(&pose.attitude).to_degrees(),
                }
            })
            .collect()
    }
}

/// Flat config record for one tag (yaw-only placements, which covers every
/// shipped bundle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRecord {
    pub id: u32,
    pub side_m: f64,
    pub position_m: [f64; 3],
    pub yaw_deg: f64,
}

/// One synthetic fiducial detection: the four corner pixels of a tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDetection {
    pub id: u32,
    /// Corner pixels, same order as [`TagSpec::corners_tag`].
    pub corners_px: [[f64; 2]; 4],
    pub t: f64,
}

impl TagDetection {
    /// Mean projected edge length, px.
    pub fn side_px(&self) -> f64 {
        let c = &self.corners_px;
        (0..4)
            .map(|i| {
                let j = (i + 1) % 4;
                ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0
    }

    /// Convexity with consistent winding (shoelace cross products all one
    /// sign). Holds for every detection the synthetic detector emits.
    pub fn is_convex(&self) -> bool {
        let c = &self.corners_px;
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = c[i];
            let b = c[(i + 1) % 4];
            let d = c[(i + 2) % 4];
            let cross = (b[0] - a[0]) * (d[1] - b[1]) - (b[1] - a[1]) * (d[0] - b[0]);
            if cross.abs() < 1e-12 {
                return false;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

fn record(id: u32, side_m: f64, x: f64, y: f64) -> TagRecord {
    TagRecord {
        id,
        side_m,
        position_m: [x, y, 0.0],
        yaw_deg: 0.0,
    }
}

/// The bundle arrangements used by the noise study and the flight scenarios.
///
/// The flight bundle keeps all tags on one side of the charging surface
/// (practical, but it pays a lever-arm penalty); the improved bundle
/// distributes them symmetrically about the landing target.
pub fn builtin_bundles() -> Vec<TagBundleLayout> {
    let mut out = Vec::new();
    for side_cm in [10u32, 15, 20, 48, 60] {
        let side = side_cm as f64 / 100.0;
        out.push(
            TagBundleLayout::from_records(
                format!("single-{side_cm}"),
                &[record(0, side, 0.0, 0.0)],
            )
            .unwrap(),
        );
    }
    out.push(
        TagBundleLayout::from_records(
            "grid-3",
            &[
                record(0, 0.20, -0.30, 0.0),
                record(1, 0.20, 0.0, 0.0),
                record(2, 0.20, 0.30, 0.0),
            ],
        )
        .unwrap(),
    );
    out.push(
        TagBundleLayout::from_records(
            "grid-5",
            &[
                record(0, 0.20, -0.30, 0.0),
                record(1, 0.20, 0.0, 0.0),
                record(2, 0.20, 0.30, 0.0),
                record(3, 0.20, 0.0, -0.30),
                record(4, 0.20, 0.0, 0.30),
            ],
        )
        .unwrap(),
    );
    let mut grid9 = Vec::new();
    for (k, (ix, iy)) in (0..3)
        .flat_map(|ix| (0..3).map(move |iy| (ix, iy)))
        .enumerate()
    {
        grid9.push(record(
            k as u32,
            0.20,
            (ix as f64 - 1.0) * 0.30,
            (iy as f64 - 1.0) * 0.30,
        ));
    }
    out.push(TagBundleLayout::from_records("grid-9", &grid9).unwrap());
    out.push(flight_bundle());
    out.push(improved_bundle());
    out
}

/// The bundle flown on the vehicle: one 48 cm tag for long range plus three
/// 15 cm tags for the final descent, all mounted beside the charging
/// surface (offset along -y).
pub fn flight_bundle() -> TagBundleLayout {
    TagBundleLayout::from_records(
        "flight",
        &[
            record(0, 0.48, 0.0, -0.95),
            record(1, 0.15, -0.30, -0.70),
            record(2, 0.15, 0.30, -0.70),
            record(3, 0.15, 0.0, -0.58),
        ],
    )
    .unwrap()
}

/// Same tag sizes distributed symmetrically about the landing target, which
/// cancels the lever-arm error amplification.
pub fn improved_bundle() -> TagBundleLayout {
    TagBundleLayout::from_records(
        "improved",
        &[
            record(0, 0.48, 0.0, -0.95),
            record(1, 0.48, 0.0, 0.95),
            record(2, 0.15, -0.70, 0.0),
            record(3, 0.15, 0.70, 0.0),
        ],
    )
    .unwrap()
}

/// Body pose for the pre-descent alignment hover: centered over the filtered
/// pad estimate at absolute altitude `h_align`, yawed with the pad, camera
/// looking straight down.
pub fn landing_alignment(
    est: &PadPoseEstimate,
    cam: &CameraModel,
    h_align: f64,
    params: &RlsParams,
) -> Result<(Vec3, Quat), PadVisionError> {
    if !est.initialized(params) {
        return Err(PadVisionError::Uninitialized);
    }
    let p_align = Vec3::new(est.position.x, est.position.y, h_align);
    let cam_in_body = cam.body_from_camera.to_pose().attitude;
    let q_align = canonicalize(yaw_quat(est.yaw) * rot_x_pi() * cam_in_body.inverse());
    Ok((p_align, q_align))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_camera_focal_length_matches_fov() {
        let cam = CameraModel::default();
        assert_relative_eq!(cam.fx, 315.5, epsilon = 0.1);
        assert!(cam.validate().is_ok());
        // 100 degree FOV check: half-width / f = tan(50 deg).
        assert_relative_eq!((cam.width as f64 / 2.0) / cam.fx, 50f64.to_radians().tan(), epsilon = 1e-12);
    }

    #[test]
    fn layout_rejects_duplicate_ids_and_bad_sides() {
        let dup = TagBundleLayout::from_records(
            "dup",
            &[record(0, 0.1, 0.0, 0.0), record(0, 0.1, 0.5, 0.0)],
        );
        assert!(dup.is_err());
        let bad = TagBundleLayout::from_records("bad", &[record(0, 0.0, 0.0, 0.0)]);
        assert!(bad.is_err());
    }

    #[test]
    fn builtin_bundles_validate_and_round_trip_records() {
        let bundles = builtin_bundles();
        assert_eq!(bundles.len(), 10);
        for b in &bundles {
            b.validate().unwrap();
            let records = b.to_records();
            let rebuilt = TagBundleLayout::from_records(b.name.clone(), &records).unwrap();
            for (a, c) in b.tags.iter().zip(rebuilt.tags.iter()) {
                assert_eq!(a.id, c.id);
                assert!((a.side - c.side).abs() < 1e-12);
                let d = a.pad_from_tag.translation() - c.pad_from_tag.translation();
                assert!(d.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_with_identity_camera_flips_body_over() {
        // Camera axes equal to body axes means the lens points along body +z
        // (up), so looking down at the pad requires flipping the body.
        let cam = CameraModel {
            body_from_camera: RigidTransform::identity(),
            ..CameraModel::default()
        };
        let params = RlsParams::default();
        let mut est = PadPoseEstimate::default();
        est.samples = params.k_min;
        est.position = Vec3::zeros();
        est.yaw = 0.0;
        let (p, q) = landing_alignment(&est, &cam, 4.0, &params).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
        assert!(q.angle_to(&rot_x_pi()) < 1e-12);
    }

    #[test]
    fn alignment_follows_pad_position_and_yaw() {
        let cam = CameraModel::default(); // downfacing mount
        let params = RlsParams::default();
        let mut est = PadPoseEstimate::default();
        est.samples = params.k_min;
        est.position = Vec3::new(2.0, 3.0, 0.1);
        est.yaw = 0.0;
        let (p, q0) = landing_alignment(&est, &cam, 4.0, &params).unwrap();
        assert!((p - Vec3::new(2.0, 3.0, 4.0)).norm() < 1e-12);
        // With the standard downfacing mount the body simply takes the pad
        // yaw and stays level.
        assert!(q0.angle_to(&Quat::identity()) < 1e-12);

        est.yaw = std::f64::consts::FRAC_PI_2;
        let (_, q90) = landing_alignment(&est, &cam, 4.0, &params).unwrap();
        let rel = q0.inverse() * q90;
        assert_relative_eq!(
            crate::geom::yaw_of(&rel),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn alignment_requires_initialized_estimate() {
        let cam = CameraModel::default();
        let params = RlsParams::default();
        let est = PadPoseEstimate::default();
        assert!(matches!(
            landing_alignment(&est, &cam, 4.0, &params),
            Err(PadVisionError::Uninitialized)
        ));
    }
}
