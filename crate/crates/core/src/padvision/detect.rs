//! Synthetic fiducial detector: ideal pinhole projection of tag corners,
//! visibility gating, and seeded corner noise. Stands in for a real
//! marker-detection pipeline; visibility is decided on the noiseless
//! projection, so detectability is deterministic for a given geometry.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{CameraModel, PadVisionError, TagBundleLayout, TagDetection};
use crate::geom::canonicalize;
use crate::{Pose, RigidTransform, Vec3};

/// Project every tag of the bundle into the camera and return those fully
/// inside the image with a projected side of at least `min_side_px`.
/// Included corners get i.i.d. Gaussian pixel noise of `sigma_px`.
pub fn detect_tags(
    camera_pose: &Pose,
    pad_pose: &Pose,
    layout: &TagBundleLayout,
    cam: &CameraModel,
    t: f64,
    rng: &mut impl Rng,
) -> Vec<TagDetection> {
    let world_from_pad = pad_pose.to_transform();
    let cam_from_world = camera_pose.to_transform().inverse();
    let mut out = Vec::new();
    for tag in &layout.tags {
        let world_from_tag = world_from_pad.compose(&tag.pad_from_tag);
        // Cull tags facing away from the camera.
        let normal = world_from_tag.rotate_vector(&Vec3::z());
        let center = world_from_tag.translation();
        if normal.dot(&(camera_pose.position - center)) <= 0.0 {
            continue;
        }
        let mut corners = [[0.0f64; 2]; 4];
        let mut visible = true;
        for (slot, corner) in corners.iter_mut().zip(tag.corners_tag()) {
            let world = world_from_tag.transform_point(&corner);
            let in_cam = cam_from_world.transform_point(&world);
            match cam.project(&in_cam) {
                Some(px) if cam.inside_image(&px) => *slot = px,
                _ => {
                    visible = false;
                    break;
                }
            }
        }
        if !visible {
            continue;
        }
        let det = TagDetection {
            id: tag.id,
            corners_px: corners,
            t,
        };
        if det.side_px() < cam.min_side_px {
            continue;
        }
        let mut noisy = det;
        if cam.sigma_px > 0.0 {
            for c in noisy.corners_px.iter_mut() {
                c[0] += cam.sigma_px * rng.sample::<f64, _>(StandardNormal);
                c[1] += cam.sigma_px * rng.sample::<f64, _>(StandardNormal);
                c[0] = c[0].clamp(0.0, cam.width as f64);
                c[1] = c[1].clamp(0.0, cam.height as f64);
            }
        }
        out.push(noisy);
    }
    out
}

/// Detect tags and solve each one's camera-frame pose independently, the
/// per-frame input to bundle calibration.
pub fn observe_tag_poses(
    camera_pose: &Pose,
    pad_pose: &Pose,
    layout: &TagBundleLayout,
    cam: &CameraModel,
    t: f64,
    rng: &mut impl Rng,
) -> Result<Vec<super::TagObservation>, PadVisionError> {
    let detections = detect_tags(camera_pose, pad_pose, layout, cam, t, rng);
    let mut out = Vec::new();
    for det in &detections {
        let tag = layout.tag(det.id).expect("detection of unknown tag");
        // Solve in the tag's own frame: a single-tag layout with identity
        // placement makes the "pad" frame coincide with the tag frame.
        let single = TagBundleLayout::new(
            "single",
            vec![super::TagSpec {
                id: tag.id,
                side: tag.side,
                pad_from_tag: RigidTransform::identity(),
            }],
        )?;
        let sol = super::solve_bundle_pnp(
            std::slice::from_ref(det),
            &single,
            cam,
            camera_pose,
        )?;
        out.push(super::TagObservation {
            id: tag.id,
            side: tag.side,
            camera_from_tag: sol.camera_from_pad,
        });
    }
    Ok(out)
}

/// Straight-down camera pose at `distance` above a point, the geometry used
/// by the noise study and calibration captures.
pub fn overhead_camera(target: &Vec3, distance: f64) -> Pose {
    Pose::new(
        target + Vec3::new(0.0, 0.0, distance),
        canonicalize(super::rot_x_pi()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padvision::{builtin_bundles, flight_bundle};
    use crate::rng::stream;

    fn noiseless(cam: &CameraModel) -> CameraModel {
        CameraModel {
            sigma_px: 0.0,
            ..cam.clone()
        }
    }

    fn single(side_cm: u32) -> TagBundleLayout {
        builtin_bundles()
            .into_iter()
            .find(|b| b.name == format!("single-{side_cm}"))
            .unwrap()
    }

    #[test]
    fn kilometre_altitude_sees_nothing() {
        let cam = noiseless(&CameraModel::default());
        let mut rng = stream(0, "detect");
        for bundle in builtin_bundles() {
            let pose = overhead_camera(&Vec3::zeros(), 1000.0);
            let dets = detect_tags(&pose, &Pose::identity(), &bundle, &cam, 0.0, &mut rng);
            assert!(dets.is_empty(), "bundle {} visible at 1 km", bundle.name);
        }
    }

    #[test]
    fn small_tag_at_four_metres_sits_at_the_visibility_edge() {
        let cam = noiseless(&CameraModel::default());
        let mut rng = stream(0, "detect");
        let bundle = single(15);
        let mut at = |d: f64| {
            detect_tags(
                &overhead_camera(&Vec3::zeros(), d),
                &Pose::identity(),
                &bundle,
                &cam,
                0.0,
                &mut rng,
            )
        };
        let dets = at(4.0);
        assert_eq!(dets.len(), 1);
        let side = dets[0].side_px();
        assert!((side - 11.8).abs() < 0.1, "side {side:.2} px");
        assert!(at(4.6).is_empty(), "15 cm tag must drop out past 4.5 m");
    }

    #[test]
    fn large_offset_tag_leaves_frame_below_two_metres() {
        let cam = noiseless(&CameraModel::default());
        let mut rng = stream(0, "detect");
        let bundle = flight_bundle();
        let mut ids_at = |d: f64| -> Vec<u32> {
            detect_tags(
                &overhead_camera(&Vec3::zeros(), d),
                &Pose::identity(),
                &bundle,
                &cam,
                0.0,
                &mut rng,
            )
            .iter()
            .map(|det| det.id)
            .collect()
        };
        // Hovering over the pad center at 1.5 m: the 48 cm tag's far corners
        // fall outside the frame, but the small tags keep the bundle visible.
        let low = ids_at(1.5);
        assert!(!low.contains(&0), "48 cm tag should leave the frame");
        assert!(!low.is_empty(), "small tags must still be detected");
        // From 2 m up the whole bundle fits.
        let two = ids_at(2.0);
        assert!(two.contains(&0));
        // At 14 m only the 48 cm tag survives the side threshold.
        assert_eq!(ids_at(14.0), vec![0]);
        assert!(ids_at(15.5).is_empty());
    }

    #[test]
    fn corner_noise_has_configured_scale_and_detections_stay_convex() {
        let cam = CameraModel {
            sigma_px: 0.5,
            ..CameraModel::default()
        };
        let clean = noiseless(&cam);
        let bundle = single(48);
        let pose = overhead_camera(&Vec3::zeros(), 4.0);
        let mut rng = stream(7, "detect-noise");
        let reference = detect_tags(&pose, &Pose::identity(), &bundle, &clean, 0.0, &mut rng)
            .pop()
            .unwrap();
        let mut devs = Vec::new();
        for _ in 0..2000 {
            let det = detect_tags(&pose, &Pose::identity(), &bundle, &cam, 0.0, &mut rng)
                .pop()
                .unwrap();
            assert!(det.is_convex());
            for (n, r) in det.corners_px.iter().zip(reference.corners_px.iter()) {
                devs.push(n[0] - r[0]);
                devs.push(n[1] - r[1]);
            }
        }
        let n = devs.len() as f64;
        let var = devs.iter().map(|d| d * d).sum::<f64>() / n;
        assert!(
            (var.sqrt() - 0.5).abs() < 0.02,
            "pixel noise std {:.3}",
            var.sqrt()
        );
    }

    #[test]
    fn backfacing_tags_are_culled() {
        let cam = noiseless(&CameraModel::default());
        let mut rng = stream(0, "detect");
        let bundle = single(48);
        // Camera below the pad plane looking up at the tag's back.
        let pose = Pose::new(Vec3::new(0.0, 0.0, -3.0), crate::Quat::identity());
        let dets = detect_tags(&pose, &Pose::identity(), &bundle, &cam, 0.0, &mut rng);
        assert!(dets.is_empty());
    }
}
