//! Pseudo-label generation: pose confidence, per-pixel pose membership,
//! single-network uncertainty masks, pose merging, and mutual (two-network)
//! uncertainty masks.
//!
//! Masking model: every pose claims a square neighborhood (`near`) around each
//! of its keypoints and its center. A heatmap-mask pixel claimed by at least
//! one pose is the product of per-pose confidence gates (so one unconfident
//! claimant zeroes it); unclaimed pixels get a soft background weight. The
//! offset mask is nonzero only near pose centers and scales inversely with the
//! claiming instance's box diagonal.

use crate::error::{ensure, Result};
use crate::eval::Kappas;
use crate::pose::{
    encode_targets, extent_box, pose_nms_keep_indices, sample_bilinear, score_pose, DecodeParams,
    InstanceBox, Pose, PoseFieldSet, KEYPOINT_COUNT, OFFSET_DISK_RADIUS,
};
use crate::tensor::Tensor;

const MODULE: &str = "pseudo";

/// Masking knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    /// Confidence gate: poses below it are masked out of their neighborhoods.
    pub threshold: f64,
    /// Side of the square `near` neighborhood (see [`near_range`]).
    pub near_side: usize,
    /// Heatmap-mask value on pixels no pose claims.
    pub background_value: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            threshold: 0.1,
            near_side: 8,
            background_value: 0.1,
        }
    }
}

impl MaskParams {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.threshold > 0.0 && self.threshold < 1.0,
            MODULE,
            "threshold {} outside (0, 1)",
            self.threshold
        );
        ensure!(self.near_side >= 1, MODULE, "near_side must be >= 1");
        ensure!(
            (0.0..=1.0).contains(&self.background_value),
            MODULE,
            "background_value {} outside [0, 1]",
            self.background_value
        );
        Ok(())
    }
}

/// Loss-gating masks: one channel per heatmap (center first), one per
/// keypoint for the offsets (broadcast over the two displacement components).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    width: usize,
    height: usize,
    /// `(1 + K) * H * W`.
    heatmap: Vec<f64>,
    /// `K * H * W`.
    offset: Vec<f64>,
}

impl MaskSet {
    /// All-ones masks (no gating): the supervised-training case, and the
    /// "masks forced on" ablation.
    pub fn unit(width: usize, height: usize) -> Self {
        let plane = width * height;
        MaskSet {
            width,
            height,
            heatmap: vec![1.0; (1 + KEYPOINT_COUNT) * plane],
            offset: vec![1.0; KEYPOINT_COUNT * plane],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Heatmap mask channels, center first: `(1 + K) * H * W`.
    pub fn heatmap(&self) -> &[f64] {
        &self.heatmap
    }

    /// Offset mask channels: `K * H * W`.
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Heatmap mask value for channel `c` (0 = center, `1 + k` = keypoint k).
    pub fn heatmap_at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.heatmap[(c * self.height + y) * self.width + x]
    }

    /// Offset mask value for keypoint `k`.
    pub fn offset_at(&self, k: usize, x: usize, y: usize) -> f64 {
        self.offset[(k * self.height + y) * self.width + x]
    }

    /// Serializes as two tensors: `[1 + K, H, W]` and `[K, H, W]`.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        (
            Tensor::from_vec(
                &[1 + KEYPOINT_COUNT, self.height, self.width],
                self.heatmap.clone(),
            )
            .expect("mask dims are valid tensor dims"),
            Tensor::from_vec(&[KEYPOINT_COUNT, self.height, self.width], self.offset.clone())
                .expect("mask dims are valid tensor dims"),
        )
    }

    pub fn from_tensors(heatmap: &Tensor, offset: &Tensor) -> Result<Self> {
        let hd = heatmap.dims();
        let od = offset.dims();
        ensure!(
            hd.len() == 3 && hd[0] == 1 + KEYPOINT_COUNT,
            MODULE,
            "heatmap mask tensor dims {:?} != [{}, H, W]",
            hd,
            1 + KEYPOINT_COUNT
        );
        ensure!(
            od.len() == 3 && od[0] == KEYPOINT_COUNT && od[1] == hd[1] && od[2] == hd[2],
            MODULE,
            "offset mask tensor dims {:?} inconsistent with heatmap dims {:?}",
            od,
            hd
        );
        Ok(MaskSet {
            width: hd[2],
            height: hd[1],
            heatmap: heatmap.data().to_vec(),
            offset: offset.data().to_vec(),
        })
    }
}

/// Confidence of a pseudo pose: center heat at the pose center times the mean
/// keypoint heat at the keypoints, all sampled bilinearly.
///
/// Called with the producing network's fields this is the pose's own
/// confidence `C`; called with the partner network's fields it is the cross
/// confidence `C'`.
pub fn confidence(fields: &PoseFieldSet, pose: &Pose) -> f64 {
    let center_heat = sample_bilinear(
        fields.center(),
        fields.width(),
        fields.height(),
        pose.center[0],
        pose.center[1],
    );
    center_heat * score_pose(fields, pose)
}

/// Half-open integer pixel range `[lo, hi]` (inclusive) claimed on one axis by
/// a `near` square of the given side centered on the rounded coordinate. An
/// even side cannot be symmetric; the convention is offsets
/// `[-side/2, side - 1 - side/2]`, e.g. side 8 claims offsets -4..=3.
pub fn near_range(p: f64, side: usize) -> (i64, i64) {
    let r = p.round() as i64;
    let lo = r - (side as i64) / 2;
    (lo, lo + side as i64 - 1)
}

/// Whether pixel `(x, y)` lies in the `near` square of point `p`.
pub fn in_near_square(p: [f64; 2], side: usize, x: usize, y: usize) -> bool {
    let (lx, hx) = near_range(p[0], side);
    let (ly, hy) = near_range(p[1], side);
    let (x, y) = (x as i64, y as i64);
    x >= lx && x <= hx && y >= ly && y <= hy
}

/// Per-pixel, per-channel pose membership: channel 0 is built from pose
/// centers, channel `1 + k` from keypoint `k` (invisible keypoints claim
/// nothing). Each cell lists claiming pose indices in ascending order.
#[derive(Debug, Clone)]
pub struct PixelPoseIndex {
    width: usize,
    height: usize,
    /// `(1 + K) * H * W` cells.
    sets: Vec<Vec<u32>>,
}

impl PixelPoseIndex {
    /// Pose indices claiming channel `c` at `(x, y)`.
    pub fn claimants(&self, c: usize, x: usize, y: usize) -> &[u32] {
        &self.sets[(c * self.height + y) * self.width + x]
    }
}

/// Builds the membership index for all heatmap channels.
pub fn pixel_pose_index(
    poses: &[Pose],
    resolution: (usize, usize),
    near_side: usize,
) -> PixelPoseIndex {
    let (width, height) = resolution;
    let mut sets = vec![Vec::new(); (1 + KEYPOINT_COUNT) * width * height];
    let mut claim = |c: usize, p: [f64; 2], i: usize| {
        let (lx, hx) = near_range(p[0], near_side);
        let (ly, hy) = near_range(p[1], near_side);
        for y in ly.max(0)..=hy.min(height as i64 - 1) {
            for x in lx.max(0)..=hx.min(width as i64 - 1) {
                sets[(c * height + y as usize) * width + x as usize].push(i as u32);
            }
        }
    };
    for (i, pose) in poses.iter().enumerate() {
        claim(0, pose.center, i);
        for k in 0..KEYPOINT_COUNT {
            if pose.visibility[k] {
                claim(1 + k, pose.keypoints[k], i);
            }
        }
    }
    PixelPoseIndex {
        width,
        height,
        sets,
    }
}

/// Shared mask assembly: `gate[i]` says whether pose `i` passed its
/// confidence test. Heatmap channels take the product of claimant gates
/// (background value where unclaimed); the offset mask is the inverse minimal
/// box diagonal over poses whose *center* square claims the pixel, zero
/// elsewhere.
fn assemble_masks(
    poses: &[Pose],
    gate: &[bool],
    boxes: &[InstanceBox],
    params: &MaskParams,
    resolution: (usize, usize),
) -> Result<MaskSet> {
    params.validate()?;
    let (width, height) = resolution;
    ensure!(
        width > 0 && height > 0,
        MODULE,
        "resolution {width}x{height} must be positive"
    );
    ensure!(
        poses.len() == gate.len(),
        MODULE,
        "{} poses but {} confidence gates",
        poses.len(),
        gate.len()
    );
    ensure!(
        poses.len() == boxes.len(),
        MODULE,
        "{} poses but {} instance boxes",
        poses.len(),
        boxes.len()
    );

    let index = pixel_pose_index(poses, resolution, params.near_side);
    let plane = width * height;
    let mut heatmap = vec![0.0; (1 + KEYPOINT_COUNT) * plane];
    for c in 0..(1 + KEYPOINT_COUNT) {
        for y in 0..height {
            for x in 0..width {
                let claimants = index.claimants(c, x, y);
                heatmap[(c * height + y) * width + x] = if claimants.is_empty() {
                    params.background_value
                } else if claimants.iter().all(|&i| gate[i as usize]) {
                    1.0
                } else {
                    0.0
                };
            }
        }
    }

    // Offset mask: keypoint-independent (defined via centers), broadcast to K
    // channels for the loss layer's convenience.
    let mut offset_plane = vec![0.0; plane];
    for y in 0..height {
        for x in 0..width {
            let claimants = index.claimants(0, x, y);
            if !claimants.is_empty() {
                let min_diag = claimants
                    .iter()
                    .map(|&i| boxes[i as usize].diagonal())
                    .fold(f64::INFINITY, f64::min);
                offset_plane[y * width + x] = 1.0 / min_diag;
            }
        }
    }
    let mut offset = Vec::with_capacity(KEYPOINT_COUNT * plane);
    for _ in 0..KEYPOINT_COUNT {
        offset.extend_from_slice(&offset_plane);
    }

    Ok(MaskSet {
        width,
        height,
        heatmap,
        offset,
    })
}

/// Single-network uncertainty masks: pose `i` passes when
/// `confidences[i] >= params.threshold`.
pub fn build_single_masks(
    poses: &[Pose],
    confidences: &[f64],
    boxes: &[InstanceBox],
    params: &MaskParams,
    resolution: (usize, usize),
) -> Result<MaskSet> {
    ensure!(
        poses.len() == confidences.len(),
        MODULE,
        "{} poses but {} confidences",
        poses.len(),
        confidences.len()
    );
    let gate: Vec<bool> = confidences.iter().map(|&c| c >= params.threshold).collect();
    assemble_masks(poses, &gate, boxes, params, resolution)
}

/// Masks for fully-trusted ground-truth targets: heatmap channels are all
/// ones (no confidence gating — heat targets are defined at every pixel),
/// and the offset mask is one exactly where the encoded offset field is
/// defined — inside the nearest-center disk of an instance whose keypoint is
/// visible — and zero elsewhere, so the loss never pulls offsets toward the
/// zero fill outside their support.
pub fn ground_truth_masks(poses: &[Pose], resolution: (usize, usize)) -> Result<MaskSet> {
    let (width, height) = resolution;
    ensure!(
        width > 0 && height > 0,
        MODULE,
        "resolution {width}x{height} must be positive"
    );
    let plane = width * height;
    let heatmap = vec![1.0; (1 + KEYPOINT_COUNT) * plane];
    // Mirror target encoding: centers are clipped into the frame before the
    // disk ownership test.
    let centers: Vec<[f64; 2]> = poses
        .iter()
        .map(|p| {
            [
                p.center[0].clamp(0.0, (width - 1) as f64),
                p.center[1].clamp(0.0, (height - 1) as f64),
            ]
        })
        .collect();
    let mut offset = vec![0.0; KEYPOINT_COUNT * plane];
    for y in 0..height {
        for x in 0..width {
            let mut owner: Option<(usize, f64)> = None;
            for (i, c) in centers.iter().enumerate() {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
                if d2 <= OFFSET_DISK_RADIUS * OFFSET_DISK_RADIUS
                    && owner.map_or(true, |(_, best)| d2 < best)
                {
                    owner = Some((i, d2));
                }
            }
            if let Some((i, _)) = owner {
                for k in 0..KEYPOINT_COUNT {
                    if poses[i].visibility[k] {
                        offset[k * plane + y * width + x] = 1.0;
                    }
                }
            }
        }
    }
    Ok(MaskSet {
        width,
        height,
        heatmap,
        offset,
    })
}

/// Which network produced a merged pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    Teacher,
    Student,
}

/// A pose that remembers which network produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedPose {
    pub pose: Pose,
    pub source: PoseSource,
}

/// Concatenates teacher and student detections and runs greedy OKS NMS,
/// keeping each survivor's provenance.
pub fn merge_poses(
    teacher_poses: &[Pose],
    student_poses: &[Pose],
    oks_threshold: f64,
    kappas: &Kappas,
) -> Vec<SourcedPose> {
    let mut all: Vec<SourcedPose> = Vec::with_capacity(teacher_poses.len() + student_poses.len());
    for p in teacher_poses {
        all.push(SourcedPose {
            pose: p.clone(),
            source: PoseSource::Teacher,
        });
    }
    for p in student_poses {
        all.push(SourcedPose {
            pose: p.clone(),
            source: PoseSource::Student,
        });
    }
    let poses: Vec<Pose> = all.iter().map(|s| s.pose.clone()).collect();
    pose_nms_keep_indices(&poses, oks_threshold, kappas)
        .into_iter()
        .map(|i| all[i].clone())
        .collect()
}

/// Mutual uncertainty masks over a merged pose set: each pose's own
/// confidence `C` is evaluated on its producer's fields and the cross
/// confidence `C'` on the partner's; the pose passes when
/// `min(C, C') >= params.threshold`. Assembly (background, offset rule) is
/// identical to the single-network mask.
pub fn build_mutual_masks(
    merged: &[SourcedPose],
    teacher_fields: &PoseFieldSet,
    student_fields: &PoseFieldSet,
    boxes: &[InstanceBox],
    params: &MaskParams,
    resolution: (usize, usize),
) -> Result<MaskSet> {
    ensure!(
        teacher_fields.width() == student_fields.width()
            && teacher_fields.height() == student_fields.height(),
        MODULE,
        "teacher fields {}x{} and student fields {}x{} differ",
        teacher_fields.width(),
        teacher_fields.height(),
        student_fields.width(),
        student_fields.height()
    );
    let poses: Vec<Pose> = merged.iter().map(|s| s.pose.clone()).collect();
    let gate: Vec<bool> = merged
        .iter()
        .map(|s| {
            let (own, partner) = match s.source {
                PoseSource::Teacher => (teacher_fields, student_fields),
                PoseSource::Student => (student_fields, teacher_fields),
            };
            let c = confidence(own, &s.pose);
            let c_cross = confidence(partner, &s.pose);
            c.min(c_cross) >= params.threshold
        })
        .collect();
    assemble_masks(&poses, &gate, boxes, params, resolution)
}

/// Everything pseudo-label generation needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelConfig {
    pub decode: DecodeParams,
    pub mask: MaskParams,
    /// Gaussian std used when re-encoding surviving poses into targets.
    pub sigma: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            decode: DecodeParams::default(),
            mask: MaskParams::default(),
            sigma: 2.0,
        }
    }
}

/// Output of single-network pseudo-label generation.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    pub targets: PoseFieldSet,
    pub masks: MaskSet,
    pub poses: Vec<Pose>,
    pub confidences: Vec<f64>,
}

/// Decodes a network's own fields into poses, gates them by confidence, and
/// re-encodes the survivors as training targets with single-network masks.
/// Low-confidence poses stay in the targets; the masks zero their
/// neighborhoods instead.
pub fn generate_pseudo_labels(
    fields: &PoseFieldSet,
    cfg: &PseudoLabelConfig,
    kappas: &Kappas,
) -> Result<PseudoLabels> {
    let decoded = crate::pose::decode_poses(fields, &cfg.decode)?;
    let kept = crate::pose::pose_nms(&decoded, cfg.decode.nms_oks_threshold, kappas);
    let confidences: Vec<f64> = kept.iter().map(|p| confidence(fields, p)).collect();
    let boxes: Vec<InstanceBox> = kept.iter().map(extent_box).collect();
    let resolution = (fields.width(), fields.height());
    let masks = build_single_masks(&kept, &confidences, &boxes, &cfg.mask, resolution)?;
    let targets = encode_targets(&kept, resolution, cfg.sigma)?;
    Ok(PseudoLabels {
        targets,
        masks,
        poses: kept,
        confidences,
    })
}

/// Output of mutual pseudo-label generation.
#[derive(Debug, Clone)]
pub struct MutualPseudoLabels {
    pub targets: PoseFieldSet,
    pub masks: MaskSet,
    pub poses: Vec<SourcedPose>,
}

/// Decodes teacher and student fields, merges the detections through NMS, and
/// builds mutually-gated masks plus re-encoded targets from the merged set.
pub fn generate_mutual_pseudo_labels(
    teacher_fields: &PoseFieldSet,
    student_fields: &PoseFieldSet,
    cfg: &PseudoLabelConfig,
    kappas: &Kappas,
) -> Result<MutualPseudoLabels> {
    let teacher_poses = crate::pose::decode_poses(teacher_fields, &cfg.decode)?;
    let student_poses = crate::pose::decode_poses(student_fields, &cfg.decode)?;
    let merged = merge_poses(
        &teacher_poses,
        &student_poses,
        cfg.decode.nms_oks_threshold,
        kappas,
    );
    let poses: Vec<Pose> = merged.iter().map(|s| s.pose.clone()).collect();
    let boxes: Vec<InstanceBox> = poses.iter().map(extent_box).collect();
    let resolution = (teacher_fields.width(), teacher_fields.height());
    let masks = build_mutual_masks(
        &merged,
        teacher_fields,
        student_fields,
        &boxes,
        &cfg.mask,
        resolution,
    )?;
    let targets = encode_targets(&poses, resolution, cfg.sigma)?;
    Ok(MutualPseudoLabels {
        targets,
        masks,
        poses: merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::testkit::test_pose;
    use crate::pose::encode_targets;

    #[test]
    fn ground_truth_masks_cover_exactly_the_offset_support() {
        let (w, h) = (32, 32);
        let mut pose = test_pose(12.0, 10.0);
        pose.visibility[3] = false;
        let other = test_pose(24.0, 22.0);
        let poses = vec![pose.clone(), other.clone()];
        let masks = ground_truth_masks(&poses, (w, h)).unwrap();
        let targets = encode_targets(&poses, (w, h), 2.0).unwrap();

        assert!(masks.heatmap().iter().all(|&v| v == 1.0));
        for k in 0..KEYPOINT_COUNT {
            for y in 0..h {
                for x in 0..w {
                    let got = masks.offset_at(k, x, y);
                    // Nearest center within the disk radius, if any.
                    let owner = poses
                        .iter()
                        .map(|p| {
                            (x as f64 - p.center[0]).powi(2) + (y as f64 - p.center[1]).powi(2)
                        })
                        .enumerate()
                        .filter(|&(_, d2)| d2 <= OFFSET_DISK_RADIUS * OFFSET_DISK_RADIUS)
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                    let want = match owner {
                        Some((i, _)) if poses[i].visibility[k] => 1.0,
                        _ => 0.0,
                    };
                    assert_eq!(got, want, "k={k} ({x},{y})");
                    // Wherever the mask is one the encoded target is defined
                    // (nonzero for this articulated pose, both components
                    // never simultaneously zero).
                    if got == 1.0 {
                        let plane = w * h;
                        let ox = targets.offsets_raw()[2 * k * plane + y * w + x];
                        let oy = targets.offsets_raw()[(2 * k + 1) * plane + y * w + x];
                        assert!(
                            ox != 0.0 || oy != 0.0 || k == 1,
                            "masked-on pixel without target at k={k} ({x},{y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn confidence_examples() {
        let (w, h) = (16, 16);
        let mut fields = PoseFieldSet::zeros(w, h).unwrap();
        let pose = Pose::new([8.0, 8.0], [[4.0, 4.0]; KEYPOINT_COUNT]);

        // Everything saturated -> 1.
        for v in fields.center_mut() {
            *v = 1.0;
        }
        for v in fields.keypoints_raw_mut() {
            *v = 1.0;
        }
        assert_eq!(confidence(&fields, &pose), 1.0);

        // Center heat zero -> 0 regardless of keypoint heat.
        for v in fields.center_mut() {
            *v = 0.0;
        }
        assert_eq!(confidence(&fields, &pose), 0.0);
    }

    #[test]
    fn confidence_matches_brute_force_on_random_fields() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (20, 15);
        let mut fields = PoseFieldSet::zeros(w, h).unwrap();
        for v in fields.center_mut() {
            *v = rng.random::<f64>();
        }
        for v in fields.keypoints_raw_mut() {
            *v = rng.random::<f64>();
        }
        let mut kps = [[0.0; 2]; KEYPOINT_COUNT];
        for kp in kps.iter_mut() {
            *kp = [rng.random::<f64>() * (w - 1) as f64, rng.random::<f64>() * (h - 1) as f64];
        }
        let pose = Pose::new(
            [rng.random::<f64>() * (w - 1) as f64, rng.random::<f64>() * (h - 1) as f64],
            kps,
        );

        // Independent evaluation: explicit bilinear interpolation and the
        // sum/K * center product, written out longhand.
        let sample = |plane: &[f64], x: f64, y: f64| {
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let at = |xi: usize, yi: usize| {
                if xi < w && yi < h {
                    plane[yi * w + xi]
                } else {
                    0.0
                }
            };
            at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy
        };
        let mut kp_sum = 0.0;
        for k in 0..KEYPOINT_COUNT {
            kp_sum += sample(
                fields.keypoint_plane(k),
                pose.keypoints[k][0],
                pose.keypoints[k][1],
            );
        }
        let expect = sample(fields.center(), pose.center[0], pose.center[1]) * kp_sum
            / KEYPOINT_COUNT as f64;
        let got = confidence(&fields, &pose);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn empty_pose_index_is_empty_everywhere() {
        let index = pixel_pose_index(&[], (8, 8), 8);
        for c in 0..(1 + KEYPOINT_COUNT) {
            for y in 0..8 {
                for x in 0..8 {
                    assert!(index.claimants(c, x, y).is_empty());
                }
            }
        }
    }

    #[test]
    fn near_square_side_8_claims_offsets_minus4_to_3() {
        let mut pose = Pose::new([20.0, 20.0], [[20.0, 20.0]; KEYPOINT_COUNT]);
        pose.keypoints[0] = [20.0, 20.0];
        let index = pixel_pose_index(&[pose], (40, 40), 8);
        // Channel for keypoint 0: the square spans [16, 23] on both axes.
        for y in 0..40 {
            for x in 0..40 {
                let claimed = (16..=23).contains(&x) && (16..=23).contains(&y);
                let got = index.claimants(1, x, y);
                assert_eq!(
                    got,
                    if claimed { &[0u32][..] } else { &[][..] },
                    "pixel ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn overlapping_near_squares_hold_both_indices() {
        let a = Pose::new([10.0, 10.0], [[10.0, 10.0]; KEYPOINT_COUNT]);
        let b = Pose::new([13.0, 10.0], [[13.0, 10.0]; KEYPOINT_COUNT]);
        let index = pixel_pose_index(&[a, b], (32, 32), 8);
        // Overlap on x in [9, 13] (= [13-4, 10+3]), y in [6, 13].
        assert_eq!(index.claimants(0, 11, 10), &[0, 1]);
        assert_eq!(index.claimants(0, 7, 10), &[0]);
        assert_eq!(index.claimants(0, 16, 10), &[1]);
    }

    #[test]
    fn invisible_keypoints_claim_nothing() {
        let mut pose = Pose::new([10.0, 10.0], [[10.0, 10.0]; KEYPOINT_COUNT]);
        pose.visibility[2] = false;
        let index = pixel_pose_index(&[pose], (24, 24), 8);
        assert!(index.claimants(1 + 2, 10, 10).is_empty());
        assert_eq!(index.claimants(1 + 1, 10, 10), &[0]);
    }

    #[test]
    fn confident_pose_masks_one_on_squares_background_elsewhere() {
        let pose = test_pose(20.0, 14.0);
        let boxes = [extent_box(&pose)];
        let params = MaskParams::default();
        let masks =
            build_single_masks(&[pose.clone()], &[0.5], &boxes, &params, (48, 48)).unwrap();
        for c in 0..(1 + KEYPOINT_COUNT) {
            let p = if c == 0 {
                pose.center
            } else {
                pose.keypoints[c - 1]
            };
            for y in 0..48 {
                for x in 0..48 {
                    // Each channel only sees its own pose point's square, so
                    // it can be checked independently.
                    let expect = if in_near_square(p, 8, x, y) { 1.0 } else { 0.1 };
                    assert_eq!(masks.heatmap_at(c, x, y), expect, "c={c} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn unconfident_pose_masks_zero_on_squares() {
        let pose = test_pose(20.0, 14.0);
        let boxes = [extent_box(&pose)];
        let params = MaskParams::default();
        let masks = build_single_masks(&[pose.clone()], &[0.05], &boxes, &params, (48, 48)).unwrap();
        assert_eq!(masks.heatmap_at(0, 20, 14), 0.0);
        let (kx, ky) = (pose.keypoints[3][0] as usize, pose.keypoints[3][1] as usize);
        assert_eq!(masks.heatmap_at(1 + 3, kx, ky), 0.0);
        // Background untouched by the gate.
        assert_eq!(masks.heatmap_at(0, 2, 2), 0.1);
    }

    #[test]
    fn offset_mask_is_inverse_box_diagonal_near_center() {
        let pose = Pose::new([10.0, 10.0], [[10.0, 10.0]; KEYPOINT_COUNT]);
        let boxes = [InstanceBox::new(3.0, 4.0).unwrap()];
        let masks = build_single_masks(
            &[pose],
            &[0.9],
            &boxes,
            &MaskParams::default(),
            (24, 24),
        )
        .unwrap();
        for k in 0..KEYPOINT_COUNT {
            assert!((masks.offset_at(k, 10, 10) - 0.2).abs() < 1e-12);
            assert_eq!(masks.offset_at(k, 20, 20), 0.0);
        }
    }

    #[test]
    fn offset_mask_ignores_confidence_gate() {
        let pose = Pose::new([10.0, 10.0], [[10.0, 10.0]; KEYPOINT_COUNT]);
        let boxes = [InstanceBox::new(3.0, 4.0).unwrap()];
        let masks = build_single_masks(
            &[pose],
            &[0.0001],
            &boxes,
            &MaskParams::default(),
            (24, 24),
        )
        .unwrap();
        assert!((masks.offset_at(0, 10, 10) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn merge_prefers_higher_scored_duplicate_and_keeps_disjoint() {
        let mut t = test_pose(20.0, 20.0);
        let mut s = test_pose(20.0, 20.0);
        t.score = 0.9;
        s.score = 0.8;
        let merged = merge_poses(&[t.clone()], &[s], 0.8, &Kappas::default());
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].source, PoseSource::Teacher);
        assert_eq!(merged[0].pose.score, 0.9);

        let mut t = test_pose(12.0, 16.0);
        let mut s = test_pose(48.0, 40.0);
        t.score = 0.6;
        s.score = 0.7;
        let merged = merge_poses(&[t], &[s], 0.8, &Kappas::default());
        assert_eq!(merged.len(), 2);
        let sources: Vec<PoseSource> = merged.iter().map(|m| m.source).collect();
        assert!(sources.contains(&PoseSource::Teacher));
        assert!(sources.contains(&PoseSource::Student));
    }

    #[test]
    fn mutual_gate_uses_min_of_c_and_c_cross() {
        let (w, h) = (48, 48);
        let pose = test_pose(20.0, 20.0);
        // Teacher fields: encoding of the pose (C == 1 at the pose).
        let teacher = encode_targets(&[pose.clone()], (w, h), 2.0).unwrap();

        // Student fields nearly zero -> C' ~ 0 < th'.
        let student = PoseFieldSet::zeros(w, h).unwrap();
        let merged = vec![SourcedPose {
            pose: pose.clone(),
            source: PoseSource::Teacher,
        }];
        let boxes = [extent_box(&pose)];
        let params = MaskParams::default();
        let masks =
            build_mutual_masks(&merged, &teacher, &student, &boxes, &params, (w, h)).unwrap();
        assert_eq!(masks.heatmap_at(0, 20, 20), 0.0, "min(C, C') gate failed");

        // Student fields agreeing -> both confidences high -> m = 1.
        let student = encode_targets(&[pose.clone()], (w, h), 2.0).unwrap();
        let masks =
            build_mutual_masks(&merged, &teacher, &student, &boxes, &params, (w, h)).unwrap();
        assert_eq!(masks.heatmap_at(0, 20, 20), 1.0);
    }

    #[test]
    fn all_zero_fields_give_background_masks_and_zero_targets() {
        let fields = PoseFieldSet::zeros(32, 32).unwrap();
        let labels =
            generate_pseudo_labels(&fields, &PseudoLabelConfig::default(), &Kappas::default())
                .unwrap();
        assert!(labels.poses.is_empty());
        assert!(labels.targets.center().iter().all(|&v| v == 0.0));
        assert!(labels.masks.heatmap().iter().all(|&v| v == 0.1));
        assert!(labels.masks.offset().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn confident_pose_round_trips_through_pseudo_labels() {
        let pose = test_pose(22.0, 18.0);
        let fields = encode_targets(&[pose.clone()], (48, 48), 2.0).unwrap();
        let labels =
            generate_pseudo_labels(&fields, &PseudoLabelConfig::default(), &Kappas::default())
                .unwrap();
        assert_eq!(labels.poses.len(), 1);
        assert!(labels.confidences[0] > 0.9);
        // Targets are the re-encoding of the decoded pose; the decoded pose is
        // within a fraction of a pixel of the original, so the two encodings
        // agree closely.
        let reencoded = encode_targets(&labels.poses, (48, 48), 2.0).unwrap();
        assert_eq!(labels.targets, reencoded);
        // Mask is 1 around the (decoded) center.
        assert_eq!(labels.masks.heatmap_at(0, 22, 18), 1.0);
        assert_eq!(labels.masks.heatmap_at(0, 2, 40), 0.1);
    }

    #[test]
    fn weak_pose_is_in_targets_but_masked_out() {
        let strong = test_pose(14.0, 16.0);
        let weak = test_pose(46.0, 40.0);
        let mut fields = encode_targets(&[strong.clone(), weak.clone()], (64, 64), 2.0).unwrap();
        // Crush keypoint heat on the right half of the frame: the weak pose
        // still decodes (its center heat is intact) but its confidence drops
        // below the 0.1 threshold.
        let (w, h) = (64usize, 64usize);
        let plane = w * h;
        for k in 0..KEYPOINT_COUNT {
            for y in 0..h {
                for x in 32..w {
                    fields.keypoints_raw_mut()[(k * h + y) * w + x] *= 0.05;
                }
            }
        }
        let _ = plane;
        let labels =
            generate_pseudo_labels(&fields, &PseudoLabelConfig::default(), &Kappas::default())
                .unwrap();
        assert_eq!(labels.poses.len(), 2, "both poses should decode");
        // Identify the weak pose by location.
        let weak_idx = labels
            .poses
            .iter()
            .position(|p| p.center[0] > 32.0)
            .expect("weak pose decoded");
        assert!(labels.confidences[weak_idx] < 0.1);
        let strong_idx = 1 - weak_idx;
        assert!(labels.confidences[strong_idx] >= 0.1);
        // Weak neighborhoods masked to 0; strong ones to 1.
        let wc = labels.poses[weak_idx].center;
        let sc = labels.poses[strong_idx].center;
        assert_eq!(
            labels.masks.heatmap_at(0, wc[0].round() as usize, wc[1].round() as usize),
            0.0
        );
        assert_eq!(
            labels.masks.heatmap_at(0, sc[0].round() as usize, sc[1].round() as usize),
            1.0
        );
        // Both poses present in the re-encoded targets: center heat peaks at
        // both locations.
        assert!(labels.targets.center_at(46, 40) > 0.9);
        assert!(labels.targets.center_at(14, 16) > 0.9);
    }

    #[test]
    fn mask_tensor_round_trip() {
        let pose = test_pose(20.0, 14.0);
        let boxes = [extent_box(&pose)];
        let masks = build_single_masks(
            &[pose],
            &[0.5],
            &boxes,
            &MaskParams::default(),
            (48, 48),
        )
        .unwrap();
        let (th, to) = masks.to_tensors();
        assert_eq!(th.dims(), &[15, 48, 48]);
        assert_eq!(to.dims(), &[14, 48, 48]);
        let back = MaskSet::from_tensors(&th, &to).unwrap();
        // Heatmap lattice {0, 0.1, 1} survives f32 quantization closely.
        for (a, b) in masks.heatmap().iter().zip(back.heatmap()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let pose = test_pose(10.0, 10.0);
        let err = build_single_masks(
            &[pose.clone()],
            &[0.5],
            &[],
            &MaskParams::default(),
            (32, 32),
        )
        .unwrap_err();
        assert!(err.to_string().contains("instance boxes"));
        let err = build_single_masks(
            &[pose],
            &[],
            &[InstanceBox::new(1.0, 1.0).unwrap()],
            &MaskParams::default(),
            (32, 32),
        )
        .unwrap_err();
        assert!(err.to_string().contains("confidences"));
    }
}
