//! Bottom-up pose field codec: center/keypoint heatmaps plus center-to-keypoint
//! offset fields, decoding with sub-pixel center refinement, pose scoring, and
//! OKS-based pose NMS.
//!
//! Conventions:
//!
//! - A pose is a center location plus `K = 14` keypoints.
//! - Heatmaps are max-combined Gaussians (no truncation window, so brute-force
//!   per-pixel references match exactly).
//! - Offset channels store `p_c - p_k`, written as a constant in a disk of
//!   radius [`OFFSET_DISK_RADIUS`] around the instance *center* (nearest
//!   instance wins contested pixels). Decoding reads the offsets at the center,
//!   so the constant-disk-at-center layout is what makes the encode/decode
//!   round trip exact; it also matches the offset-mask support, which is
//!   defined around centers.
//! - Field resolution equals input resolution (no output stride).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::{oks, Kappas};
use crate::tensor::Tensor;

const MODULE: &str = "pose";

/// Keypoints per person.
pub const KEYPOINT_COUNT: usize = 14;

/// Keypoint identities: 0 head, 1 neck, then (right, left) pairs of shoulder,
/// elbow, wrist, hip, knee, ankle.
pub const FLIP_PAIRS: [(usize, usize); 6] = [(2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13)];

/// Bones as (parent joint, child joint) index pairs.
pub const SKELETON_EDGES: [(usize, usize); 13] = [
    (1, 0),  // neck -> head
    (1, 2),  // neck -> right shoulder
    (1, 3),  // neck -> left shoulder
    (2, 4),  // right shoulder -> elbow
    (3, 5),  // left shoulder -> elbow
    (4, 6),  // right elbow -> wrist
    (5, 7),  // left elbow -> wrist
    (1, 8),  // neck -> right hip
    (1, 9),  // neck -> left hip
    (8, 10), // right hip -> knee
    (9, 11), // left hip -> knee
    (10, 12), // right knee -> ankle
    (11, 13), // left knee -> ankle
];

/// Radius (pixels) of the offset-writing disk around each instance center.
pub const OFFSET_DISK_RADIUS: f64 = 4.0;

/// One person: center, keypoints, per-keypoint visibility, confidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub center: [f64; 2],
    pub keypoints: [[f64; 2]; KEYPOINT_COUNT],
    pub visibility: [bool; KEYPOINT_COUNT],
    pub score: f64,
}

impl Pose {
    /// A pose with all keypoints visible and score 0.
    pub fn new(center: [f64; 2], keypoints: [[f64; 2]; KEYPOINT_COUNT]) -> Self {
        Pose {
            center,
            keypoints,
            visibility: [true; KEYPOINT_COUNT],
            score: 0.0,
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }
}

/// Height/width of an instance bounding box, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceBox {
    pub height: f64,
    pub width: f64,
}

impl InstanceBox {
    pub fn new(height: f64, width: f64) -> Result<Self> {
        ensure!(
            height > 0.0 && width > 0.0 && height.is_finite() && width.is_finite(),
            MODULE,
            "instance box {height}x{width} must be strictly positive"
        );
        Ok(InstanceBox { height, width })
    }

    /// Box diagonal, the instance-size normalizer for offset masks.
    pub fn diagonal(&self) -> f64 {
        (self.height * self.height + self.width * self.width).sqrt()
    }

    /// Box area, the squared scale used by OKS.
    pub fn area(&self) -> f64 {
        self.height * self.width
    }
}

/// Padding added on each side of the keypoint extent when deriving a box.
pub const EXTENT_BOX_PAD: f64 = 4.0;

/// Derives an instance box from the min/max extents of the visible keypoints,
/// padded by [`EXTENT_BOX_PAD`] on each side. Poses without visible keypoints
/// (or degenerate single-point poses) still yield a valid box thanks to the
/// padding.
pub fn extent_box(pose: &Pose) -> InstanceBox {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for k in 0..KEYPOINT_COUNT {
        if pose.visibility[k] {
            min_x = min_x.min(pose.keypoints[k][0]);
            max_x = max_x.max(pose.keypoints[k][0]);
            min_y = min_y.min(pose.keypoints[k][1]);
            max_y = max_y.max(pose.keypoints[k][1]);
        }
    }
    let (ext_w, ext_h) = if min_x.is_finite() {
        (max_x - min_x, max_y - min_y)
    } else {
        (0.0, 0.0)
    };
    InstanceBox {
        width: ext_w + 2.0 * EXTENT_BOX_PAD,
        height: ext_h + 2.0 * EXTENT_BOX_PAD,
    }
}

/// Center heatmap + K keypoint heatmaps + 2K offset channels, all `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFieldSet {
    width: usize,
    height: usize,
    /// `H * W`, values in [0, 1].
    center: Vec<f64>,
    /// `K * H * W`, values in [0, 1].
    keypoint: Vec<f64>,
    /// `2K * H * W`; channel `2k` is the x displacement `c_x - k_x`, channel
    /// `2k + 1` the y displacement.
    offsets: Vec<f64>,
}

impl PoseFieldSet {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        ensure!(
            width > 0 && height > 0,
            MODULE,
            "resolution {width}x{height} must be positive"
        );
        let plane = width * height;
        Ok(PoseFieldSet {
            width,
            height,
            center: vec![0.0; plane],
            keypoint: vec![0.0; KEYPOINT_COUNT * plane],
            offsets: vec![0.0; 2 * KEYPOINT_COUNT * plane],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn center_mut(&mut self) -> &mut [f64] {
        &mut self.center
    }

    /// Keypoint heatmap plane for keypoint `k`.
    pub fn keypoint_plane(&self, k: usize) -> &[f64] {
        let p = self.plane();
        &self.keypoint[k * p..(k + 1) * p]
    }

    pub fn keypoints_raw(&self) -> &[f64] {
        &self.keypoint
    }

    pub fn keypoints_raw_mut(&mut self) -> &mut [f64] {
        &mut self.keypoint
    }

    pub fn offsets_raw(&self) -> &[f64] {
        &self.offsets
    }

    pub fn offsets_raw_mut(&mut self) -> &mut [f64] {
        &mut self.offsets
    }

    pub fn center_at(&self, x: usize, y: usize) -> f64 {
        self.center[y * self.width + x]
    }

    pub fn keypoint_at(&self, k: usize, x: usize, y: usize) -> f64 {
        self.keypoint[(k * self.height + y) * self.width + x]
    }

    /// Offset vector `(dx, dy) = p_c - p_k` stored for keypoint `k` at a pixel.
    pub fn offset_at(&self, k: usize, x: usize, y: usize) -> (f64, f64) {
        let p = self.plane();
        let i = y * self.width + x;
        (self.offsets[2 * k * p + i], self.offsets[(2 * k + 1) * p + i])
    }

    /// The concatenated `(1 + K) * H * W` heatmap buffer (center first), used
    /// by the loss layer.
    pub fn heatmaps_concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((1 + KEYPOINT_COUNT) * self.plane());
        out.extend_from_slice(&self.center);
        out.extend_from_slice(&self.keypoint);
        out
    }

    /// Overwrites heatmaps from a concatenated `(1 + K) * H * W` buffer.
    pub fn set_heatmaps_concat(&mut self, buf: &[f64]) -> Result<()> {
        let p = self.plane();
        ensure!(
            buf.len() == (1 + KEYPOINT_COUNT) * p,
            MODULE,
            "heatmap buffer length {} != {}",
            buf.len(),
            (1 + KEYPOINT_COUNT) * p
        );
        self.center.copy_from_slice(&buf[..p]);
        self.keypoint.copy_from_slice(&buf[p..]);
        Ok(())
    }

    /// Serializes as a `[1 + K + 2K, H, W]` tensor (center, keypoints, offsets).
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity((1 + 3 * KEYPOINT_COUNT) * self.plane());
        data.extend_from_slice(&self.center);
        data.extend_from_slice(&self.keypoint);
        data.extend_from_slice(&self.offsets);
        Tensor::from_vec(&[1 + 3 * KEYPOINT_COUNT, self.height, self.width], data)
            .expect("field dims are valid tensor dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        ensure!(
            dims.len() == 3 && dims[0] == 1 + 3 * KEYPOINT_COUNT,
            MODULE,
            "expected [{}, H, W] tensor, got dims {:?}",
            1 + 3 * KEYPOINT_COUNT,
            dims
        );
        let (h, w) = (dims[1], dims[2]);
        let plane = h * w;
        let data = t.data();
        for (i, &v) in data[..(1 + KEYPOINT_COUNT) * plane].iter().enumerate() {
            ensure!(
                (-1e-6..=1.0 + 1e-6).contains(&v) && v.is_finite(),
                MODULE,
                "heatmap value {v} at flat index {i} outside [0, 1]"
            );
        }
        let mut fields = PoseFieldSet::zeros(w, h)?;
        fields
            .center
            .copy_from_slice(&data[..plane]);
        fields
            .keypoint
            .copy_from_slice(&data[plane..(1 + KEYPOINT_COUNT) * plane]);
        fields
            .offsets
            .copy_from_slice(&data[(1 + KEYPOINT_COUNT) * plane..]);
        for v in fields.center.iter_mut().chain(fields.keypoint.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(fields)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor(&Tensor::load(path)?)
    }
}

/// Decoding knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    /// Max center candidates kept, strongest first.
    pub max_centers: usize,
    /// Centers with peak heat below this are dropped.
    pub center_threshold: f64,
    /// Greedy pose-NMS similarity cutoff (poses above are suppressed).
    pub nms_oks_threshold: f64,
    /// Odd side of the local-maximum test window.
    pub local_max_window: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            max_centers: 30,
            center_threshold: 0.03,
            nms_oks_threshold: 0.8,
            local_max_window: 3,
        }
    }
}

impl DecodeParams {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.center_threshold > 0.0 && self.center_threshold < 1.0,
            MODULE,
            "center_threshold {} outside (0, 1)",
            self.center_threshold
        );
        ensure!(
            self.local_max_window % 2 == 1 && self.local_max_window >= 1,
            MODULE,
            "local_max_window {} must be odd and >= 1",
            self.local_max_window
        );
        ensure!(self.max_centers > 0, MODULE, "max_centers must be positive");
        Ok(())
    }
}

/// Samples a `height x width` plane bilinearly at a real-valued location;
/// coordinates outside the grid contribute zero.
pub fn sample_bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xi = x0 as i64 + dx;
            let yi = y0 as i64 + dy;
            let w = wx * wy;
            if w != 0.0 && xi >= 0 && yi >= 0 && (xi as usize) < width && (yi as usize) < height {
                acc += w * plane[yi as usize * width + xi as usize];
            }
        }
    }
    acc
}

/// Encodes ground-truth poses into a field set with Gaussian heatmaps of
/// standard deviation `sigma`.
///
/// Poses falling outside the frame are clipped into it with a warning.
/// Invisible keypoints contribute neither heat nor offsets.
pub fn encode_targets(poses: &[Pose], resolution: (usize, usize), sigma: f64) -> Result<PoseFieldSet> {
    let (width, height) = resolution;
    ensure!(sigma > 0.0, MODULE, "sigma {sigma} must be positive");
    let mut fields = PoseFieldSet::zeros(width, height)?;

    // Clip pose coordinates into the frame.
    let clipped: Vec<Pose> = poses
        .iter()
        .map(|p| {
            let clip = |v: [f64; 2]| {
                [
                    v[0].clamp(0.0, (width - 1) as f64),
                    v[1].clamp(0.0, (height - 1) as f64),
                ]
            };
            let mut q = p.clone();
            q.center = clip(q.center);
            for k in 0..KEYPOINT_COUNT {
                q.keypoints[k] = clip(q.keypoints[k]);
            }
            if q != *p {
                log::warn!("pose clipped into {width}x{height} frame during encoding");
            }
            q
        })
        .collect();

    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let plane = width * height;
    let splat = |map: &mut [f64], px: f64, py: f64| {
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let v = (-d2 * inv_two_sigma_sq).exp();
                let cell = &mut map[y * width + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    };

    for pose in &clipped {
        splat(&mut fields.center, pose.center[0], pose.center[1]);
        for k in 0..KEYPOINT_COUNT {
            if pose.visibility[k] {
                let p = pose.keypoints[k];
                splat(
                    &mut fields.keypoint[k * plane..(k + 1) * plane],
                    p[0],
                    p[1],
                );
            }
        }
    }

    // Offsets: constant (p_c - p_k) per instance, written in a disk around the
    // instance center; contested pixels go to the nearest center.
    for y in 0..height {
        for x in 0..width {
            let mut owner: Option<(usize, f64)> = None;
            for (i, pose) in clipped.iter().enumerate() {
                let d2 = (x as f64 - pose.center[0]).powi(2) + (y as f64 - pose.center[1]).powi(2);
                if d2 <= OFFSET_DISK_RADIUS * OFFSET_DISK_RADIUS
                    && owner.map_or(true, |(_, best)| d2 < best)
                {
                    owner = Some((i, d2));
                }
            }
            if let Some((i, _)) = owner {
                let pose = &clipped[i];
                let idx = y * width + x;
                for k in 0..KEYPOINT_COUNT {
                    if pose.visibility[k] {
                        fields.offsets[2 * k * plane + idx] = pose.center[0] - pose.keypoints[k][0];
                        fields.offsets[(2 * k + 1) * plane + idx] =
                            pose.center[1] - pose.keypoints[k][1];
                    }
                }
            }
        }
    }

    Ok(fields)
}

/// Per-axis sub-pixel refinement of a heatmap peak by fitting a parabola to
/// the log heat (exact for an untruncated Gaussian). Falls back to the integer
/// location at borders, near-zero heats, or non-concave log profiles; the
/// correction is clamped to half a pixel.
fn refine_peak(plane: &[f64], width: usize, height: usize, x: usize, y: usize) -> (f64, f64) {
    const TINY: f64 = 1e-12;
    let value = |x: usize, y: usize| plane[y * width + x];
    let refine = |lo: f64, mid: f64, hi: f64| -> f64 {
        if lo <= TINY || mid <= TINY || hi <= TINY {
            return 0.0;
        }
        let (l0, l1, l2) = (lo.ln(), mid.ln(), hi.ln());
        let denom = l0 + l2 - 2.0 * l1;
        if denom >= -TINY {
            return 0.0;
        }
        ((l0 - l2) / (2.0 * denom)).clamp(-0.5, 0.5)
    };
    let dx = if x > 0 && x + 1 < width {
        refine(value(x - 1, y), value(x, y), value(x + 1, y))
    } else {
        0.0
    };
    let dy = if y > 0 && y + 1 < height {
        refine(value(x, y - 1), value(x, y), value(x, y + 1))
    } else {
        0.0
    };
    (x as f64 + dx, y as f64 + dy)
}

/// Decodes poses from a field set: local center-heat maxima ranked by heat,
/// top `max_centers` kept, sub-threshold peaks dropped, keypoints recovered as
/// `p_k = p_c - offset_k(p_c)` with offsets read bilinearly at the refined
/// center. Poses are scored by [`score_pose`] and returned strongest-first,
/// before any NMS.
pub fn decode_poses(fields: &PoseFieldSet, params: &DecodeParams) -> Result<Vec<Pose>> {
    params.validate()?;
    let (width, height) = (fields.width, fields.height);
    let radius = (params.local_max_window / 2) as i64;

    // Collect local maxima above threshold.
    let mut peaks: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..height {
        'pixel: for x in 0..width {
            let v = fields.center_at(x, y);
            if v < params.center_threshold || v <= 0.0 {
                continue;
            }
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                        if fields.center_at(nx as usize, ny as usize) > v {
                            continue 'pixel;
                        }
                    }
                }
            }
            peaks.push((v, x, y));
        }
    }

    // Strongest first; deterministic tie-break by scan position.
    peaks.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });
    peaks.truncate(params.max_centers);

    let mut poses = Vec::with_capacity(peaks.len());
    for &(_, x, y) in &peaks {
        let (cx, cy) = refine_peak(&fields.center, width, height, x, y);
        let plane = width * height;
        let mut keypoints = [[0.0; 2]; KEYPOINT_COUNT];
        for (k, kp) in keypoints.iter_mut().enumerate() {
            let ox = sample_bilinear(
                &fields.offsets[2 * k * plane..(2 * k + 1) * plane],
                width,
                height,
                cx,
                cy,
            );
            let oy = sample_bilinear(
                &fields.offsets[(2 * k + 1) * plane..(2 * k + 2) * plane],
                width,
                height,
                cx,
                cy,
            );
            *kp = [cx - ox, cy - oy];
        }
        let mut pose = Pose::new([cx, cy], keypoints);
        pose.score = score_pose(fields, &pose);
        poses.push(pose);
    }
    Ok(poses)
}

/// Mean keypoint heat of a pose: the average over keypoints of the keypoint
/// heatmap sampled bilinearly at each keypoint location.
pub fn score_pose(fields: &PoseFieldSet, pose: &Pose) -> f64 {
    let plane = fields.plane();
    let mut sum = 0.0;
    for k in 0..KEYPOINT_COUNT {
        sum += sample_bilinear(
            &fields.keypoint[k * plane..(k + 1) * plane],
            fields.width,
            fields.height,
            pose.keypoints[k][0],
            pose.keypoints[k][1],
        );
    }
    sum / KEYPOINT_COUNT as f64
}

/// Indices (into `poses`) surviving greedy descending-score OKS suppression:
/// a pose is dropped when its OKS against any already-kept pose exceeds
/// `oks_threshold`. The kept pose plays the reference role with a box derived
/// from its keypoint extents.
pub fn pose_nms_keep_indices(poses: &[Pose], oks_threshold: f64, kappas: &Kappas) -> Vec<usize> {
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| {
        poses[b]
            .score
            .partial_cmp(&poses[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let mut suppressed = false;
        for &j in &kept {
            let similarity =
                oks(&poses[i], &poses[j], &extent_box(&poses[j]), kappas).unwrap_or(0.0);
            if similarity > oks_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Greedy OKS pose NMS; returns surviving poses sorted by score descending.
pub fn pose_nms(poses: &[Pose], oks_threshold: f64, kappas: &Kappas) -> Vec<Pose> {
    pose_nms_keep_indices(poses, oks_threshold, kappas)
        .into_iter()
        .map(|i| poses[i].clone())
        .collect()
}

// ---------------------------------------------------------------------------
// JSON serialization: {"people": [{"center": [x, y], "keypoints":
// [[x, y, v] x 14], "score": s}]}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    center: [f64; 2],
    keypoints: Vec<[f64; 3]>,
    score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeopleJson {
    people: Vec<PoseJson>,
}

fn pose_to_json(pose: &Pose) -> PoseJson {
    PoseJson {
        center: pose.center,
        keypoints: (0..KEYPOINT_COUNT)
            .map(|k| {
                [
                    pose.keypoints[k][0],
                    pose.keypoints[k][1],
                    if pose.visibility[k] { 1.0 } else { 0.0 },
                ]
            })
            .collect(),
        score: pose.score,
    }
}

fn pose_from_json(raw: &PoseJson, origin: &Path) -> Result<Pose> {
    if raw.keypoints.len() != KEYPOINT_COUNT {
        return Err(Error::format(
            MODULE,
            origin,
            format!(
                "pose has {} keypoints, expected {KEYPOINT_COUNT}",
                raw.keypoints.len()
            ),
        ));
    }
    if !(raw.score >= 0.0) {
        return Err(Error::format(
            MODULE,
            origin,
            format!("pose score {} must be >= 0", raw.score),
        ));
    }
    let mut pose = Pose::new(raw.center, [[0.0; 2]; KEYPOINT_COUNT]);
    for (k, kp) in raw.keypoints.iter().enumerate() {
        pose.keypoints[k] = [kp[0], kp[1]];
        pose.visibility[k] = kp[2] != 0.0;
    }
    pose.score = raw.score;
    Ok(pose)
}

/// Writes a single frame's poses as JSON.
pub fn save_poses_json(poses: &[Pose], path: &Path) -> Result<()> {
    let doc = PeopleJson {
        people: poses.iter().map(pose_to_json).collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &doc)
        .map_err(|e| Error::json(MODULE, path, e))
}

/// Reads a single frame's poses from JSON.
pub fn load_poses_json(path: &Path) -> Result<Vec<Pose>> {
    let file = File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
    let doc: PeopleJson =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(MODULE, path, e))?;
    doc.people.iter().map(|p| pose_from_json(p, path)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSequenceJson {
    frames: Vec<PeopleJson>,
}

/// Writes a sequence's per-frame poses as one JSON document.
pub fn save_pose_frames_json(frames: &[Vec<Pose>], path: &Path) -> Result<()> {
    let doc = FrameSequenceJson {
        frames: frames
            .iter()
            .map(|poses| PeopleJson {
                people: poses.iter().map(pose_to_json).collect(),
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &doc)
        .map_err(|e| Error::json(MODULE, path, e))
}

/// Reads a sequence's per-frame poses written by [`save_pose_frames_json`].
pub fn load_pose_frames_json(path: &Path) -> Result<Vec<Vec<Pose>>> {
    let file = File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
    let doc: FrameSequenceJson =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(MODULE, path, e))?;
    doc.frames
        .iter()
        .map(|frame| {
            frame
                .people
                .iter()
                .map(|p| pose_from_json(p, path))
                .collect()
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::testkit::test_pose;
    use super::*;

    #[test]
    fn empty_pose_list_encodes_to_zero_fields() {
        let fields = encode_targets(&[], (32, 32), 2.0).unwrap();
        assert!(fields.center.iter().all(|&v| v == 0.0));
        assert!(fields.keypoint.iter().all(|&v| v == 0.0));
        assert!(fields.offsets.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offset_channel_reads_center_minus_keypoint() {
        let mut pose = test_pose(10.0, 10.0);
        pose.keypoints[2] = [7.0, 10.0];
        let fields = encode_targets(&[pose], (32, 32), 2.0).unwrap();
        // At (7, 10), distance 3 from the center, within the radius-4 disk.
        assert_eq!(fields.offset_at(2, 7, 10), (3.0, 0.0));
        // The same constant holds at the center pixel itself.
        assert_eq!(fields.offset_at(2, 10, 10), (3.0, 0.0));
        // Outside the disk the channel is zero.
        assert_eq!(fields.offset_at(2, 20, 20), (0.0, 0.0));
    }

    #[test]
    fn overlapping_heatmaps_take_pixelwise_max() {
        let a = test_pose(12.0, 14.0);
        let b = test_pose(18.0, 14.0);
        let fields = encode_targets(&[a.clone(), b.clone()], (40, 40), 2.0).unwrap();
        let gauss = |px: f64, py: f64, x: usize, y: usize| {
            let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
            (-d2 / 8.0).exp()
        };
        for y in 0..40 {
            for x in 0..40 {
                let expect = gauss(12.0, 14.0, x, y).max(gauss(18.0, 14.0, x, y));
                assert_eq!(fields.center_at(x, y), expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn single_pose_round_trip_is_subpixel_exact() {
        let pose = test_pose(15.3, 12.7);
        let fields = encode_targets(&[pose.clone()], (48, 48), 2.0).unwrap();
        let decoded = decode_poses(&fields, &DecodeParams::default()).unwrap();
        assert_eq!(decoded.len(), 1);
        let d = &decoded[0];
        assert!(
            (d.center[0] - 15.3).abs() < 0.5 && (d.center[1] - 12.7).abs() < 0.5,
            "center {:?}",
            d.center
        );
        for k in 0..KEYPOINT_COUNT {
            let dx = d.keypoints[k][0] - pose.keypoints[k][0];
            let dy = d.keypoints[k][1] - pose.keypoints[k][1];
            assert!(
                dx.abs() < 1.0 && dy.abs() < 1.0,
                "keypoint {k} off by ({dx}, {dy})"
            );
        }
    }

    #[test]
    fn sub_threshold_heat_decodes_to_nothing() {
        let mut fields = PoseFieldSet::zeros(16, 16).unwrap();
        for v in fields.center_mut() {
            *v = 0.01;
        }
        let decoded = decode_poses(&fields, &DecodeParams::default()).unwrap();
        assert!(decoded.is_empty());
    }

    #[test]
    fn two_separated_poses_decode_to_two() {
        let a = test_pose(14.0, 16.0);
        let b = test_pose(45.0, 40.0);
        let fields = encode_targets(&[a, b], (64, 64), 2.0).unwrap();
        let decoded = decode_poses(&fields, &DecodeParams::default()).unwrap();
        assert_eq!(decoded.len(), 2);
    }

    #[test]
    fn decode_respects_max_centers() {
        let poses: Vec<Pose> = (0..6).map(|i| test_pose(8.0 + 9.0 * i as f64, 30.0)).collect();
        let fields = encode_targets(&poses, (64, 64), 1.5).unwrap();
        let params = DecodeParams {
            max_centers: 3,
            ..DecodeParams::default()
        };
        let decoded = decode_poses(&fields, &params).unwrap();
        assert!(decoded.len() <= 3);
    }

    #[test]
    fn score_pose_is_mean_keypoint_heat() {
        let mut fields = PoseFieldSet::zeros(8, 8).unwrap();
        let pose = Pose::new([4.0, 4.0], [[2.0, 2.0]; KEYPOINT_COUNT]);

        // All heats 1 at every keypoint location -> score 1.
        for v in fields.keypoints_raw_mut() {
            *v = 1.0;
        }
        assert_eq!(score_pose(&fields, &pose), 1.0);

        // Heat 1 for keypoint 0 only -> 1/14.
        for v in fields.keypoints_raw_mut() {
            *v = 0.0;
        }
        let plane = 64;
        fields.keypoints_raw_mut()[2 * 8 + 2] = 1.0; // k=0 plane, pixel (2,2)
        let score = score_pose(&fields, &pose);
        assert!((score - 1.0 / 14.0).abs() < 1e-12, "score {score}");
        let _ = plane;
    }

    #[test]
    fn nms_drops_exact_duplicate() {
        let mut a = test_pose(20.0, 20.0);
        let mut b = test_pose(20.0, 20.0);
        a.score = 0.9;
        b.score = 0.8;
        let kept = pose_nms(&[a.clone(), b], 0.8, &Kappas::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_poses() {
        let mut a = test_pose(12.0, 16.0);
        let mut b = test_pose(50.0, 40.0);
        a.score = 0.9;
        b.score = 0.8;
        let kept = pose_nms(&[a, b], 0.8, &Kappas::default());
        assert_eq!(kept.len(), 2);
        assert!(kept[0].score >= kept[1].score);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        let mut a = test_pose(10.0, 12.0);
        a.score = 0.5;
        a.visibility[3] = false;
        let b = test_pose(30.0, 25.0);
        save_poses_json(&[a.clone(), b.clone()], &path).unwrap();
        let back = load_poses_json(&path).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn json_rejects_wrong_keypoint_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"people": [{"center": [1, 2], "keypoints": [[0, 0, 1]], "score": 0.1}]}"#,
        )
        .unwrap();
        let err = load_poses_json(&path).unwrap_err();
        assert!(err.to_string().contains("expected 14"));
    }

    #[test]
    fn fields_tensor_round_trip() {
        let pose = test_pose(20.0, 20.0);
        let fields = encode_targets(&[pose], (48, 48), 2.0).unwrap();
        let t = fields.to_tensor();
        assert_eq!(t.dims(), &[43, 48, 48]);
        let back = PoseFieldSet::from_tensor(&t).unwrap();
        // f32 quantization in the tensor payload; compare loosely.
        for (a, b) in fields.center.iter().zip(back.center.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn extent_box_pads_keypoint_extents() {
        let mut pose = Pose::new([5.0, 5.0], [[5.0, 5.0]; KEYPOINT_COUNT]);
        pose.keypoints[0] = [2.0, 4.0];
        pose.keypoints[1] = [8.0, 10.0];
        let b = extent_box(&pose);
        assert_eq!(b.width, (8.0 - 2.0) + 8.0);
        assert_eq!(b.height, (10.0 - 4.0) + 8.0);
    }
}
