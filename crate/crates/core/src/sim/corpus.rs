//! Two-domain corpus generation: sharp frames with labels (source), oracle
//! blur without exposed labels (target), and a held-out test split with both.
//!
//! Layout per sequence directory:
//! `frame_%04d.png` sharp frames, `blur_%04d.png` oracle blur, `events.evt1`
//! the full-sequence event stream, `poses.json` ground truth (for the target
//! split it lives in `sealed/poses.json`, reserved for evaluation), and
//! `meta.json` with the timing constants needed to slice events per frame.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::event::{save_events, EventFileFormat};
use crate::pose::{save_pose_frames_json, SKELETON_EDGES};

use super::{emit_events, oracle_blur, poses_at, render_sharp, Body, Figure, Scene, Track};

const MODULE: &str = "sim";

/// Split directory names in generation order.
pub const SPLIT_NAMES: [&str; 3] = ["train-source", "train-target", "test"];

/// Everything that shapes a generated corpus. All times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub resolution: (usize, usize),
    pub train_source_sequences: usize,
    pub train_target_sequences: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    pub frame_period_s: f64,
    pub exposure_s: f64,
    pub delta_tau_s: f64,
    pub n_e: usize,
    pub contrast_threshold: f64,
    pub oracle_blur_samples: usize,
    pub min_figures: usize,
    pub max_figures: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            resolution: (64, 64),
            train_source_sequences: 4,
            train_target_sequences: 4,
            test_sequences: 2,
            frames_per_sequence: 10,
            frame_period_s: 0.020,
            exposure_s: 0.010,
            delta_tau_s: 0.001,
            n_e: 5,
            contrast_threshold: 0.25,
            oracle_blur_samples: 64,
            min_figures: 1,
            max_figures: 3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.resolution.0 >= 32 && self.resolution.1 >= 32,
            MODULE,
            "corpus resolution {}x{} too small for articulated figures",
            self.resolution.0,
            self.resolution.1
        );
        ensure!(
            self.resolution.0 <= 512 && self.resolution.1 <= 512,
            MODULE,
            "corpus resolution {}x{} exceeds the supported 512x512",
            self.resolution.0,
            self.resolution.1
        );
        ensure!(
            self.frames_per_sequence >= 1,
            MODULE,
            "frames_per_sequence must be at least 1"
        );
        ensure!(
            self.frame_period_s > 0.0 && self.exposure_s > 0.0 && self.delta_tau_s > 0.0,
            MODULE,
            "frame period, exposure and delta tau must all be positive"
        );
        ensure!(
            self.exposure_s <= self.frame_period_s,
            MODULE,
            "exposure {} must not exceed the frame period {}",
            self.exposure_s,
            self.frame_period_s
        );
        ensure!(self.n_e >= 1, MODULE, "n_e must be at least 1");
        let slice_span = 2.0 * self.n_e as f64 * self.delta_tau_s;
        ensure!(
            (slice_span - self.exposure_s).abs() < 1e-9,
            MODULE,
            "exposure {} must equal 2 * n_e * delta_tau = {slice_span}",
            self.exposure_s
        );
        ensure!(
            self.contrast_threshold > 0.0,
            MODULE,
            "contrast_threshold must be positive"
        );
        ensure!(
            self.oracle_blur_samples >= 1,
            MODULE,
            "oracle_blur_samples must be at least 1"
        );
        ensure!(
            self.min_figures >= 1 && self.min_figures <= self.max_figures,
            MODULE,
            "figure count range [{}, {}] invalid",
            self.min_figures,
            self.max_figures
        );
        Ok(())
    }

    /// Scene length covering all frames.
    pub fn sequence_duration_s(&self) -> f64 {
        self.frames_per_sequence as f64 * self.frame_period_s
    }

    /// Capture time of frame `j`: the center of its frame interval.
    pub fn frame_center_s(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_period_s + self.frame_period_s / 2.0
    }
}

/// Per-sequence sidecar recording how the sequence was produced and how to
/// slice its event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub split: String,
    pub sequence_index: usize,
    pub seed: u64,
    pub resolution: [usize; 2],
    pub frames: usize,
    pub frame_period_us: i64,
    pub exposure_us: i64,
    pub delta_tau_us: i64,
    pub n_e: usize,
    pub contrast_threshold: f64,
    pub frame_centers_us: Vec<i64>,
}

pub fn load_sequence_meta(path: &Path) -> Result<SequenceMeta> {
    let file = fs::File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::json(MODULE, path, e))
}

/// Base bone angles (radians) and lengths (pixels at scale 1), ordered like
/// [`SKELETON_EDGES`]: an upright frontal figure.
const BASE_BONES: [(f64, f64); 13] = [
    (-FRAC_PI_2, 5.0),        // neck -> head
    (std::f64::consts::PI - 0.15, 4.0), // neck -> right shoulder
    (0.15, 4.0),              // neck -> left shoulder
    (FRAC_PI_2 + 0.35, 4.5),  // right upper arm
    (FRAC_PI_2 - 0.35, 4.5),  // left upper arm
    (FRAC_PI_2 + 0.15, 4.0),  // right forearm
    (FRAC_PI_2 - 0.15, 4.0),  // left forearm
    (FRAC_PI_2 + 0.18, 9.0),  // neck -> right hip
    (FRAC_PI_2 - 0.18, 9.0),  // neck -> left hip
    (FRAC_PI_2 + 0.10, 5.5),  // right thigh
    (FRAC_PI_2 - 0.10, 5.5),  // left thigh
    (FRAC_PI_2 + 0.05, 5.0),  // right shin
    (FRAC_PI_2 - 0.05, 5.0),  // left shin
];

/// An upright figure with constant tracks, used directly by tests and as the
/// skeleton template for randomized figures.
pub(crate) fn testkit_base_figure(root: [f64; 2], scale: f64, _duration: f64) -> Figure {
    let mut lengths = [0.0; SKELETON_EDGES.len()];
    let mut angles = Vec::with_capacity(SKELETON_EDGES.len());
    for (i, &(angle, len)) in BASE_BONES.iter().enumerate() {
        lengths[i] = len * scale;
        angles.push(Track::constant(angle));
    }
    Figure {
        root: [Track::constant(root[0]), Track::constant(root[1])],
        bone_angles: angles,
        bone_lengths: lengths,
        limb_radius: (1.6 * scale).max(1.0),
        intensity: 0.85,
    }
}

/// Draws one randomized figure whose keypoints provably stay inside the
/// frame: candidate trajectories are rejection-sampled against dense time
/// probes, falling back to a static centered figure if sampling fails.
fn random_figure(
    rng: &mut ChaCha8Rng,
    resolution: (usize, usize),
    duration: f64,
) -> Figure {
    let (w, h) = (resolution.0 as f64, resolution.1 as f64);
    let res_scale = w.min(h) / 64.0;

    for _attempt in 0..40 {
        let scale = res_scale * rng.random_range(0.62..0.85);
        let intensity = rng.random_range(0.70..0.95);
        let limb_radius = (1.6 * scale).max(1.0);

        // Keypoint reach from the root: legs down ~19.5, arms out ~12.5,
        // head up ~5 (all times scale), plus wiggle and spline-overshoot
        // slack.
        let slack = 4.0 * scale + 3.0;
        let margin_x = 12.5 * scale + slack;
        let margin_top = 5.0 * scale + slack;
        let margin_bottom = 19.5 * scale + slack;
        if margin_x * 2.0 + 4.0 >= w || margin_top + margin_bottom + 4.0 >= h {
            continue;
        }

        // Root trajectory: mostly linear (2 points), sometimes curved.
        let points = [2usize, 2, 2, 3, 4][rng.random_range(0..5)];
        let mut xs: Vec<f64> = Vec::with_capacity(points);
        let mut ys: Vec<f64> = Vec::with_capacity(points);
        for i in 0..points {
            // Prefer control points that actually move the figure; give up
            // after a few tries to keep sampling bounded.
            let mut x = rng.random_range(margin_x..w - 1.0 - margin_x);
            let mut y = rng.random_range(margin_top..h - 1.0 - margin_bottom);
            for _ in 0..20 {
                if i == 0 || (x - xs[i - 1]).hypot(y - ys[i - 1]) >= 5.0 * res_scale {
                    break;
                }
                x = rng.random_range(margin_x..w - 1.0 - margin_x);
                y = rng.random_range(margin_top..h - 1.0 - margin_bottom);
            }
            xs.push(x);
            ys.push(y);
        }
        let root = [
            Track::from_control_points(xs, duration).unwrap(),
            Track::from_control_points(ys, duration).unwrap(),
        ];

        // Joint angles: rigid figures keep the base pose; articulated ones
        // wiggle each bone with its own small spline.
        let rigid = rng.random::<f64>() < 0.4;
        let mut lengths = [0.0; SKELETON_EDGES.len()];
        let mut angles = Vec::with_capacity(SKELETON_EDGES.len());
        for (i, &(base_angle, len)) in BASE_BONES.iter().enumerate() {
            lengths[i] = len * scale;
            if rigid {
                angles.push(Track::constant(base_angle));
            } else {
                let amplitude = rng.random_range(0.05..0.22);
                let knots: Vec<f64> = (0..4)
                    .map(|_| base_angle + rng.random_range(-amplitude..amplitude))
                    .collect();
                angles.push(Track::from_control_points(knots, duration).unwrap());
            }
        }

        let figure = Figure {
            root,
            bone_angles: angles,
            bone_lengths: lengths,
            limb_radius,
            intensity,
        };

        // Verify the keypoints stay inside the frame at dense time probes.
        let probes = 32;
        let inside = (0..=probes).all(|p| {
            let t = duration * p as f64 / probes as f64;
            figure.joints_at(t).iter().all(|j| {
                j[0] >= 1.0 && j[0] <= w - 2.0 && j[1] >= 1.0 && j[1] <= h - 2.0
            })
        });
        if inside {
            return figure;
        }
    }
    log::warn!("figure sampling exhausted retries; using a static centered figure");
    testkit_base_figure([w / 2.0, h * 0.4], 0.6 * res_scale, duration)
}

/// Builds the animated scene of one sequence.
fn random_scene(config: &CorpusConfig, rng: &mut ChaCha8Rng) -> Scene {
    let duration = config.sequence_duration_s();
    let n_figures = rng.random_range(config.min_figures..=config.max_figures);
    let bodies = (0..n_figures)
        .map(|_| Body::Figure(random_figure(rng, config.resolution, duration)))
        .collect();
    Scene {
        resolution: config.resolution,
        duration,
        background: 0.12,
        contrast_threshold: config.contrast_threshold,
        emission_dt: config.delta_tau_s / 8.0,
        bodies,
    }
}

fn mix_seed(seed: u64, split: u64, sequence: u64) -> u64 {
    let mut z = seed
        ^ split.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ sequence.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn save_meta(meta: &SequenceMeta, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), meta)
        .map_err(|e| Error::json(MODULE, path, e))
}

fn to_us(seconds: f64) -> i64 {
    (seconds * 1e6).round() as i64
}

fn generate_sequence(
    config: &CorpusConfig,
    split: &str,
    sequence_index: usize,
    seq_seed: u64,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(MODULE, dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
    let scene = random_scene(config, &mut rng);

    let stream = emit_events(&scene, 0.0, scene.duration)?;
    save_events(&stream, &dir.join("events.evt1"), EventFileFormat::Binary)?;

    let want_sharp = split != "train-target";
    let want_blur = split != "train-source";
    let mut frames_poses = Vec::with_capacity(config.frames_per_sequence);
    for frame in 0..config.frames_per_sequence {
        let t = config.frame_center_s(frame);
        if want_sharp {
            let sharp = render_sharp(&scene, t)?;
            sharp.save_png(&dir.join(format!("frame_{frame:04}.png")))?;
        }
        if want_blur {
            let blur = oracle_blur(&scene, t, config.exposure_s, config.oracle_blur_samples)?;
            blur.save_png(&dir.join(format!("blur_{frame:04}.png")))?;
        }
        frames_poses.push(poses_at(&scene, t));
    }

    if split == "train-target" {
        let sealed = dir.join("sealed");
        fs::create_dir_all(&sealed).map_err(|e| Error::io(MODULE, &sealed, e))?;
        save_pose_frames_json(&frames_poses, &sealed.join("poses.json"))?;
    } else {
        save_pose_frames_json(&frames_poses, &dir.join("poses.json"))?;
    }

    let meta = SequenceMeta {
        split: split.to_string(),
        sequence_index,
        seed: seq_seed,
        resolution: [config.resolution.0, config.resolution.1],
        frames: config.frames_per_sequence,
        frame_period_us: to_us(config.frame_period_s),
        exposure_us: to_us(config.exposure_s),
        delta_tau_us: to_us(config.delta_tau_s),
        n_e: config.n_e,
        contrast_threshold: config.contrast_threshold,
        frame_centers_us: (0..config.frames_per_sequence)
            .map(|f| to_us(config.frame_center_s(f)))
            .collect(),
    };
    save_meta(&meta, &dir.join("meta.json"))
}

/// Generates the full three-split corpus under `root`. The output is a pure
/// function of `(config, seed)`: per-sequence seeds are derived, not drawn
/// sequentially, so regeneration is byte-identical.
pub fn generate_corpus(config: &CorpusConfig, root: &Path, seed: u64) -> Result<()> {
    config.validate()?;
    let counts = [
        config.train_source_sequences,
        config.train_target_sequences,
        config.test_sequences,
    ];
    for (split_id, (&split, &count)) in SPLIT_NAMES.iter().zip(counts.iter()).enumerate() {
        for seq in 0..count {
            let dir = root.join(split).join(format!("seq_{seq:03}"));
            let seq_seed = mix_seed(seed, split_id as u64, seq as u64);
            log::info!("generating {split}/seq_{seq:03} with seed {seq_seed}");
            generate_sequence(config, split, seq, seq_seed, &dir)?;
        }
    }
    Ok(())
}

/// Sequence directories of one split, sorted by name.
pub fn list_sequences(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(MODULE, &dir, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    ensure!(
        !out.is_empty(),
        MODULE,
        "split directory {} holds no sequences",
        dir.display()
    );
    Ok(out)
}
