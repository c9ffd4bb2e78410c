//! Bundle calibration: recover each tag's rigid placement in the pad frame
//! from repeated co-observations with a designated master tag. Per-frame
//! transform samples are combined robustly: median pose first, then a mean
//! over the samples the median does not reject as outliers.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Quaternion};

use super::{PadVisionError, TagBundleLayout, TagSpec};
use crate::geom::canonicalize;
use crate::{Quat, RigidTransform, Vec3};

/// One tag pose reported by the detector in a calibration frame.
#[derive(Debug, Clone)]
pub struct TagObservation {
    pub id: u32,
    pub side: f64,
    pub camera_from_tag: RigidTransform,
}

/// Geometric median via Weiszfeld iteration, started at the centroid.
pub fn weiszfeld_median(points: &[Vec3]) -> Vec3 {
    assert!(!points.is_empty());
    let mut y: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    for _ in 0..200 {
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for p in points {
            let d = (p - y).norm().max(1e-12);
            num += p / d;
            den += 1.0 / d;
        }
        let next = num / den;
        let step = (next - y).norm();
        y = next;
        if step < 1e-13 {
            break;
        }
    }
    y
}

/// Average rotation: principal eigenvector of the sample outer-product
/// matrix, which is insensitive to per-sample quaternion sign.
pub fn mean_quaternion(quats: &[Quat]) -> Result<Quat, PadVisionError> {
    if quats.is_empty() {
        return Err(PadVisionError::NumericalFailure(
            "no quaternions to average".into(),
        ));
    }
    let mut m = Matrix4::<f64>::zeros();
    for q in quats {
        let v = q.coords; // (x, y, z, w)
        m += v * v.transpose();
    }
    let eig = m.symmetric_eigen();
    let (mut idx, mut best) = (0usize, f64::NEG_INFINITY);
    for (i, &val) in eig.eigenvalues.iter().enumerate() {
        if val > best {
            best = val;
            idx = i;
        }
    }
    let v = eig.eigenvectors.column(idx);
    let q = Quaternion::new(v[3], v[0], v[1], v[2]);
    if q.norm() < 1e-12 {
        return Err(PadVisionError::NumericalFailure(
            "degenerate quaternion mean".into(),
        ));
    }
    Ok(canonicalize(Quat::from_quaternion(q)))
}

/// Chordal median rotation: Weiszfeld iteration over sign-aligned
/// quaternion 4-vectors, renormalized at the end. Resists the mirrored
/// solutions a near-frontal planar tag occasionally produces, which would
/// drag the eigenvector mean off by tenths of a degree.
fn quaternion_chordal_median(quats: &[Quat]) -> Result<Quat, PadVisionError> {
    let seed = mean_quaternion(quats)?;
    let sv = seed.coords;
    let vs: Vec<nalgebra::Vector4<f64>> = quats
        .iter()
        .map(|q| if q.coords.dot(&sv) < 0.0 { -q.coords } else { q.coords })
        .collect();
    let mut y = sv;
    for _ in 0..100 {
        let mut num = nalgebra::Vector4::<f64>::zeros();
        let mut den = 0.0;
        for v in &vs {
            let d = (v - y).norm().max(1e-12);
            num += v / d;
            den += 1.0 / d;
        }
        let next = num / den;
        let step = (next - y).norm();
        y = next;
        if step < 1e-13 {
            break;
        }
    }
    if y.norm() < 1e-12 {
        return Err(PadVisionError::NumericalFailure(
            "degenerate quaternion median".into(),
        ));
    }
    Ok(canonicalize(Quat::from_quaternion(Quaternion::new(
        y[3], y[0], y[1], y[2],
    ))))
}

fn median_scalar(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Combine per-frame transform samples into one rigid transform: median
/// pose first, then a mean over the samples that sit within six median
/// absolute deviations of it. The floors keep noise-free samples (distance
/// zero, MAD zero) inside the inlier set.
fn robust_transform(
    points: &[Vec3],
    quats: &[Quat],
) -> Result<RigidTransform, PadVisionError> {
    let t_med = weiszfeld_median(points);
    let q_med = quaternion_chordal_median(quats)?;
    let mut dts: Vec<f64> = points.iter().map(|p| (p - t_med).norm()).collect();
    let mut das: Vec<f64> = quats.iter().map(|q| q.angle_to(&q_med)).collect();
    let gate_t = (6.0 * median_scalar(&mut dts)).max(1e-9);
    let gate_a = (6.0 * median_scalar(&mut das)).max(1e-9);
    let inliers: Vec<usize> = (0..points.len())
        .filter(|&i| {
            (points[i] - t_med).norm() <= gate_t && quats[i].angle_to(&q_med) <= gate_a
        })
        .collect();
    if inliers.len() < points.len() / 2 {
        // Trimming removed too much; fall back to the plain medians.
        return Ok(RigidTransform::from_quat_translation(q_med, t_med));
    }
    let kept_points: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
    let kept_quats: Vec<Quat> = inliers.iter().map(|&i| quats[i]).collect();
    let translation =
        kept_points.iter().sum::<Vec3>() / kept_points.len() as f64;
    let rotation = mean_quaternion(&kept_quats)?;
    Ok(RigidTransform::from_quat_translation(rotation, translation))
}

/// Minimum co-observations with the master for a tag to enter the layout.
pub const MIN_COVISIBLE_FRAMES: usize = 10;

/// Solve every tag's pad-frame placement from calibration frames.
///
/// The master tag defines the pad frame: it is placed at the desired
/// touchdown position and yaw, so its own transform is the identity. Each
/// frame containing the master contributes one transform sample per
/// co-visible tag; tags seen together with the master in fewer than
/// [`MIN_COVISIBLE_FRAMES`] frames are left out of the layout with a
/// warning.
pub fn calibrate_bundle(
    frames: &[Vec<TagObservation>],
    master_id: u32,
) -> Result<TagBundleLayout, PadVisionError> {
    let mut translations: BTreeMap<u32, Vec<Vec3>> = BTreeMap::new();
    let mut rotations: BTreeMap<u32, Vec<Quat>> = BTreeMap::new();
    let mut sides: BTreeMap<u32, f64> = BTreeMap::new();
    let mut master_side = None;
    for frame in frames {
        let Some(master) = frame.iter().find(|o| o.id == master_id) else {
            continue;
        };
        master_side = Some(master.side);
        let pad_from_camera = master.camera_from_tag.inverse();
        for obs in frame.iter().filter(|o| o.id != master_id) {
            let sample = pad_from_camera.compose(&obs.camera_from_tag);
            let pose = sample.to_pose();
            translations.entry(obs.id).or_default().push(pose.position);
            rotations.entry(obs.id).or_default().push(pose.attitude);
            sides.insert(obs.id, obs.side);
        }
    }
    let Some(master_side) = master_side else {
        return Err(PadVisionError::NoMasterObservations);
    };

    let mut tags = vec![TagSpec {
        id: master_id,
        side: master_side,
        pad_from_tag: RigidTransform::identity(),
    }];
    for (id, points) in &translations {
        if points.len() < MIN_COVISIBLE_FRAMES {
            log::warn!(
                "tag {id}: only {} co-observations with master, excluded from layout",
                points.len()
            );
            continue;
        }
        let pad_from_tag = robust_transform(points, &rotations[id])?;
        tags.push(TagSpec {
            id: *id,
            side: sides[id],
            pad_from_tag,
        });
    }
    TagBundleLayout::new("calibrated", tags)
}
