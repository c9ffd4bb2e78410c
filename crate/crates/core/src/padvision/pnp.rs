//! Joint bundle pose solve: all detected tags' corners enter one
//! reprojection least-squares problem. A planar homography on the largest
//! detected tag seeds a Gauss-Newton refinement over the full bundle.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};

use super::{CameraModel, PadVisionError, TagBundleLayout, TagDetection};
use crate::geom::canonicalize;
use crate::{Mat3, Pose, Quat, RigidTransform, Vec3};

/// Result of a bundle pose solve.
#[derive(Debug, Clone)]
pub struct PnpSolution {
    /// Pad pose in the world frame (camera-frame solve composed with the
    /// supplied camera world pose).
    pub pad_pose: Pose,
    /// Raw camera-frame solve.
    pub camera_from_pad: RigidTransform,
    pub reprojection_rms: f64,
    pub tags_used: usize,
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Homography from four tag-plane points to pixels, decomposed with the
/// calibration matrix into the tag pose in the camera frame.
fn homography_pose(
    corners_tag: &[Vec3; 4],
    corners_px: &[[f64; 2]; 4],
    cam: &CameraModel,
) -> Result<RigidTransform, PadVisionError> {
    // Condition the DLT: center both point sets and scale their mean radius
    // to sqrt(2). Without this, a small tag far from the principal point
    // leaves the stacked system too ill-conditioned for a usable null vector.
    let norm_of = |pts: &[[f64; 2]]| -> (Matrix3<f64>, Vec<[f64; 2]>) {
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let mean_r = pts
            .iter()
            .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        let s = if mean_r > 1e-12 {
            std::f64::consts::SQRT_2 / mean_r
        } else {
            1.0
        };
        let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
        let mapped = pts
            .iter()
            .map(|p| [s * (p[0] - cx), s * (p[1] - cy)])
            .collect();
        (t, mapped)
    };
    let tag_xy: Vec<[f64; 2]> = corners_tag.iter().map(|p| [p.x, p.y]).collect();
    let (t_tag, tag_n) = norm_of(&tag_xy);
    let (t_px, px_n) = norm_of(corners_px);

    let mut a = DMatrix::<f64>::zeros(8, 9);
    for (i, (xt, px)) in tag_n.iter().zip(px_n.iter()).enumerate() {
        let (x, y) = (xt[0], xt[1]);
        let (u, v) = (px[0], px[1]);
        let row_u = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        let row_v = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v];
        for (col, (&ru, &rv)) in row_u.iter().zip(row_v.iter()).enumerate() {
            a[(2 * i, col)] = ru;
            a[(2 * i + 1, col)] = rv;
        }
    }
    // Null vector of A via the smallest eigenpair of A^T A (A is 8x9, so a
    // thin SVD would not expose the null direction).
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (mut idx, mut best) = (0usize, f64::INFINITY);
    for (i, &val) in eig.eigenvalues.iter().enumerate() {
        if val < best {
            best = val;
            idx = i;
        }
    }
    let h = eig.eigenvectors.column(idx);
    let h_hat = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_px_inv = t_px
        .try_inverse()
        .ok_or_else(|| PadVisionError::NumericalFailure("pixel normalizer singular".into()))?;
    let h_pix = t_px_inv * h_hat * t_tag;

    let k_inv = Matrix3::new(
        1.0 / cam.fx,
        0.0,
        -cam.cx / cam.fx,
        0.0,
        1.0 / cam.fy,
        -cam.cy / cam.fy,
        0.0,
        0.0,
        1.0,
    );
    let m = k_inv * h_pix;
    let (m1, m2, m3) = (m.column(0), m.column(1), m.column(2));
    let norm = (m1.norm() + m2.norm()) / 2.0;
    if norm < 1e-12 {
        return Err(PadVisionError::NumericalFailure(
            "degenerate homography".into(),
        ));
    }
    let mut lambda = 1.0 / norm;
    // The tag must sit in front of the camera.
    if (m3 * lambda).z < 0.0 {
        lambda = -lambda;
    }
    let r1: Vec3 = m1.into_owned() * lambda;
    let r2: Vec3 = m2.into_owned() * lambda;
    let r3 = r1.cross(&r2);
    let r_raw = Mat3::from_columns(&[r1, r2, r3]);
    let rotation = nearest_rotation(&r_raw)?;
    let translation: Vec3 = m3.into_owned() * lambda;
    Ok(RigidTransform::from_parts(
        nalgebra::Rotation3::from_matrix_unchecked(rotation),
        translation,
    ))
}

/// Orthogonal projection of a near-rotation matrix onto SO(3).
fn nearest_rotation(m: &Mat3) -> Result<Mat3, PadVisionError> {
    let svd = m.svd(true, true);
    let (u, v_t) = (
        svd.u
            .ok_or_else(|| PadVisionError::NumericalFailure("svd failed".into()))?,
        svd.v_t
            .ok_or_else(|| PadVisionError::NumericalFailure("svd failed".into()))?,
    );
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    Ok(r)
}

/// Pose of the pad in the world frame, solved jointly from every detected
/// tag's corners and composed with the camera world pose.
pub fn solve_bundle_pnp(
    detections: &[TagDetection],
    layout: &TagBundleLayout,
    cam: &CameraModel,
    camera_pose: &Pose,
) -> Result<PnpSolution, PadVisionError> {
    // Gather (pad-frame point, pixel) correspondences.
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    let mut tags_used = 0usize;
    let mut largest: Option<(&TagDetection, f64)> = None;
    for det in detections {
        let Some(tag) = layout.tag(det.id) else {
            continue;
        };
        tags_used += 1;
        let side = det.side_px();
        if largest.map(|(_, s)| side > s).unwrap_or(true) {
            largest = Some((det, side));
        }
        for (corner, px) in tag.corners_tag().iter().zip(det.corners_px.iter()) {
            points.push(tag.pad_from_tag.transform_point(corner));
            pixels.push(*px);
        }
    }
    let Some((seed_det, _)) = largest else {
        return Err(PadVisionError::NoTagsDetected);
    };

    // Seed: homography pose of the largest tag, mapped to the pad frame.
    let seed_tag = layout.tag(seed_det.id).expect("seed tag in layout");
    let cam_from_tag = homography_pose(&seed_tag.corners_tag(), &seed_det.corners_px, cam)?;
    let cam_from_pad0 = cam_from_tag.compose(&seed_tag.pad_from_tag.inverse());

    let mut q: Quat = cam_from_pad0.to_pose().attitude;
    let mut t: Vec3 = *cam_from_pad0.translation();

    // Gauss-Newton over (rotation, translation) of pad-in-camera.
    let n = points.len();
    let mut rms = f64::INFINITY;
    for _ in 0..40 {
        let r_mat = q.to_rotation_matrix().into_inner();
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        let mut sq_sum = 0.0;
        for (x_pad, px) in points.iter().zip(pixels.iter()) {
            let x_cam = r_mat * x_pad + t;
            let z = x_cam.z;
            if z < 1e-6 {
                return Err(PadVisionError::PnpDiverged { rms: f64::INFINITY });
            }
            let proj = [
                cam.fx * x_cam.x / z + cam.cx,
                cam.fy * x_cam.y / z + cam.cy,
            ];
            let res = nalgebra::Vector2::new(proj[0] - px[0], proj[1] - px[1]);
            sq_sum += res.norm_squared();
            let j_proj = nalgebra::Matrix2x3::new(
                cam.fx / z,
                0.0,
                -cam.fx * x_cam.x / (z * z),
                0.0,
                cam.fy / z,
                -cam.fy * x_cam.y / (z * z),
            );
            // Local (right) rotation perturbation: d(R x)/d(dtheta) = -R [x]x.
            let d_rot = -(r_mat * skew(x_pad));
            let mut j_row = nalgebra::Matrix2x6::zeros();
            j_row.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_proj * d_rot));
            j_row.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_proj);
            jtj += j_row.transpose() * j_row;
            jtr += j_row.transpose() * res;
        }
        rms = (sq_sum / (2.0 * n as f64)).sqrt();
        let delta = jtj
            .cholesky()
            .map(|c| c.solve(&(-jtr)))
            .or_else(|| (jtj + SMatrix::<f64, 6, 6>::identity() * 1e-9).lu().solve(&(-jtr)))
            .ok_or_else(|| PadVisionError::NumericalFailure("normal equations singular".into()))?;
        q = canonicalize(q * Quat::from_scaled_axis(delta.fixed_rows::<3>(0).into_owned()));
        t += delta.fixed_rows::<3>(3).into_owned();
        if delta.norm() < 1e-13 {
            break;
        }
    }
    // Final residual with the updated pose.
    let r_mat = q.to_rotation_matrix().into_inner();
    let mut sq_sum = 0.0;
    for (x_pad, px) in points.iter().zip(pixels.iter()) {
        let x_cam = r_mat * x_pad + t;
        if x_cam.z < 1e-6 {
            return Err(PadVisionError::PnpDiverged { rms: f64::INFINITY });
        }
        let du = cam.fx * x_cam.x / x_cam.z + cam.cx - px[0];
        let dv = cam.fy * x_cam.y / x_cam.z + cam.cy - px[1];
        sq_sum += du * du + dv * dv;
    }
    rms = rms.min((sq_sum / (2.0 * n as f64)).sqrt());
    if !rms.is_finite() || rms > cam.max_rms_px {
        return Err(PadVisionError::PnpDiverged { rms });
    }

    let camera_from_pad = RigidTransform::from_quat_translation(q, t);
    let world_from_cam = camera_pose.to_transform();
    let world_from_pad = world_from_cam.compose(&camera_from_pad);
    let pose = world_from_pad.to_pose();
    Ok(PnpSolution {
        pad_pose: Pose::new(pose.position, canonicalize(pose.attitude)),
        camera_from_pad,
        reprojection_rms: rms,
        tags_used,
    })
}
