//! Measurement-noise study over bundle geometry and camera distance: the
//! harness behind the tag-size / lever-arm comparisons. Each (bundle,
//! distance) cell gets its own named random stream, so cells are
//! independent and the study parallelizes trivially if ever needed.

use super::detect::{detect_tags, overhead_camera};
use super::{solve_bundle_pnp, CameraModel, TagBundleLayout};
use crate::rng::stream;
use crate::{Pose, Vec3};

/// One row of the study: a tag of a bundle (or the joint bundle solve) at
/// one camera distance.
#[derive(Debug, Clone)]
pub struct StudyCell {
    pub bundle: String,
    /// `Some(id)` for per-tag rows, `None` for the joint-bundle row.
    pub tag_id: Option<u32>,
    pub tag_side: f64,
    pub distance: f64,
    /// Fraction of trials in which the tag (or any tag) was detected.
    pub detect_rate: f64,
    /// Sample variance of the estimated pad height, m^2.
    pub var_height: f64,
    /// Trace of the pad position sample covariance, m^2.
    pub var_center: f64,
    /// Successful pose solves behind the variances.
    pub samples: usize,
}

fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Run the noise study: camera straight above the pad center, zero off-axis
/// angle, `trials` noisy captures per (bundle, distance) cell.
pub fn bundle_noise_study(
    bundles: &[TagBundleLayout],
    distances: &[f64],
    trials: usize,
    cam: &CameraModel,
    seed: u64,
) -> Vec<StudyCell> {
    let mut out = Vec::new();
    for bundle in bundles {
        let singles: Vec<(u32, f64, TagBundleLayout)> = bundle
            .tags
            .iter()
            .map(|t| (t.id, t.side, bundle.single(t.id).expect("tag id valid")))
            .collect();
        for &distance in distances {
            let label = format!("study/{}/{:.3}", bundle.name, distance);
            let mut rng = stream(seed, &label);
            let camera_pose = overhead_camera(&Vec3::zeros(), distance);
            let pad_pose = Pose::identity();

            let mut tag_heights: Vec<Vec<f64>> = vec![Vec::new(); singles.len()];
            let mut tag_detects = vec![0usize; singles.len()];
            let mut bundle_pos: Vec<Vec3> = Vec::new();
            let mut bundle_detects = 0usize;
            for _ in 0..trials {
                let detections =
                    detect_tags(&camera_pose, &pad_pose, bundle, cam, 0.0, &mut rng);
                if !detections.is_empty() {
                    bundle_detects += 1;
                    if let Ok(sol) = solve_bundle_pnp(&detections, bundle, cam, &camera_pose) {
                        bundle_pos.push(sol.pad_pose.position);
                    }
                }
                for det in &detections {
                    let Some(k) = singles.iter().position(|(id, _, _)| *id == det.id) else {
                        continue;
                    };
                    tag_detects[k] += 1;
                    if let Ok(sol) = solve_bundle_pnp(
                        std::slice::from_ref(det),
                        &singles[k].2,
                        cam,
                        &camera_pose,
                    ) {
                        tag_heights[k].push(sol.pad_pose.position.z);
                    }
                }
            }

            for (k, (id, side, _)) in singles.iter().enumerate() {
                out.push(StudyCell {
                    bundle: bundle.name.clone(),
                    tag_id: Some(*id),
                    tag_side: *side,
                    distance,
                    detect_rate: tag_detects[k] as f64 / trials as f64,
                    var_height: variance(&tag_heights[k]),
                    var_center: f64::NAN,
                    samples: tag_heights[k].len(),
                });
            }
            let (xs, ys, zs): (Vec<f64>, Vec<f64>, Vec<f64>) = (
                bundle_pos.iter().map(|p| p.x).collect(),
                bundle_pos.iter().map(|p| p.y).collect(),
                bundle_pos.iter().map(|p| p.z).collect(),
            );
            out.push(StudyCell {
                bundle: bundle.name.clone(),
                tag_id: None,
                tag_side: 0.0,
                distance,
                detect_rate: bundle_detects as f64 / trials as f64,
                var_height: variance(&zs),
                var_center: variance(&xs) + variance(&ys) + variance(&zs),
                samples: bundle_pos.len(),
            });
        }
    }
    out
}

/// Render study rows as CSV. Per-tag rows carry the tag id; the joint
/// bundle row uses `all`.
pub fn study_to_csv(cells: &[StudyCell]) -> String {
    let mut s = String::from("bundle,tag,distance_m,var_height_m2,var_center_m2,detect_rate,samples\n");
    for c in cells {
        let tag = c
            .tag_id
            .map(|id| id.to_string())
            .unwrap_or_else(|| "all".into());
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.bundle, tag, c.distance, c.var_height, c.var_center, c.detect_rate, c.samples
        ));
    }
    s
}
