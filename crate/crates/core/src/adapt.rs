//! Windowed-linear pose predictor and the four-stage sharp-to-blur
//! adaptation protocol built on top of it.
//!
//! The predictor scores every pixel of a three-channel input (blurred image,
//! positive event counts, negative event counts) with an independent linear
//! map over a square pixel neighborhood, squashing heatmap channels through a
//! sigmoid and leaving offset channels linear. It is deliberately the
//! smallest model that can localize bright articulated figures on the
//! synthetic corpus while keeping every gradient analytically checkable.
//!
//! The adaptation protocol trains, in order:
//! 1. two teacher variants (event-only and image+event) on labeled source
//!    frames whose image inputs are always synthesized blur, never the raw
//!    sharp frames;
//! 2. a student on unlabeled target frames supervised by confidence-masked
//!    teacher pseudo-labels, alternating one-for-one with labeled source
//!    batches;
//! 3. the teacher variants on target frames gated by mutual (teacher AND
//!    student) confidence masks, again alternating with source batches;
//! 4. the student once more, warm-started from stage 2, on pseudo-labels
//!    regenerated by the improved teacher.
//!
//! Every stage reads its upstream models from checkpoint files and writes
//! its own, so running stages individually and running the whole pipeline
//! produce bit-identical results for a fixed seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blur::{synthesize_blur, HoleFill};
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate, EvalResult, GtFrame, Kappas, PredFrame};
use crate::event::{
    accumulate, load_events, slice_events, AccumMode, EventFileFormat, EventSlice, EventStream,
};
use crate::flow::{estimate_flow, FlowField, FlowParams};
use crate::img::Image;
use crate::loss::{supervised_loss, LossReport, DEFAULT_LAMBDA_G};
use crate::pose::{
    decode_poses, encode_targets, extent_box, load_pose_frames_json, pose_nms, DecodeParams,
    Pose, PoseFieldSet, KEYPOINT_COUNT,
};
use crate::pseudo::{
    generate_mutual_pseudo_labels, generate_pseudo_labels, ground_truth_masks, MaskParams,
    MaskSet, PseudoLabelConfig,
};
use crate::sim::{list_sequences, load_sequence_meta, SequenceMeta, SPLIT_NAMES};
use crate::tensor::Tensor;

const MODULE: &str = "adapt";

/// Input channels fed to the predictor: image, positive event counts,
/// negative event counts.
pub const INPUT_CHANNELS: usize = 3;

/// Output channels: one center heatmap, `K` keypoint heatmaps, `2K` offset
/// planes.
pub const OUTPUT_CHANNELS: usize = 1 + KEYPOINT_COUNT + 2 * KEYPOINT_COUNT;

/// Leading output channels squashed through the sigmoid.
pub const HEATMAP_CHANNELS: usize = 1 + KEYPOINT_COUNT;

/// Default half-side of the square input window each output pixel sees.
pub const DEFAULT_WINDOW_RADIUS: usize = 3;

/// Event counts are divided by this and clamped to [0, 1] before entering
/// the predictor, putting them on the same scale as image intensities.
pub const EVENT_FEATURE_SCALE: f64 = 8.0;

/// Fixed linear gain on the offset output channels. Offsets span tens of
/// pixels while heatmaps live in [0, 1]; emitting `gain * z` lets one shared
/// learning rate move both output families at useful speeds (the gain
/// multiplies the weight gradients and divides the weight magnitudes the
/// model must reach).
pub const OFFSET_GAIN: f64 = 4.0;

/// Which input channels a model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    /// Reads only the two event-count channels.
    EventOnly,
    /// Reads the image channel and both event-count channels.
    ImageEvent,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::EventOnly => "event-only",
            Modality::ImageEvent => "image-event",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "event-only" => Ok(Modality::EventOnly),
            "image-event" => Ok(Modality::ImageEvent),
            other => Err(Error::validation(
                MODULE,
                format!("unknown modality {other:?} (expected event-only or image-event)"),
            )),
        }
    }

    /// First input channel this modality reads; event-only models skip the
    /// image channel entirely (its pixels never enter the feature vector).
    fn first_input_channel(self) -> usize {
        match self {
            Modality::EventOnly => 1,
            Modality::ImageEvent => 0,
        }
    }

    fn input_channels(self) -> usize {
        INPUT_CHANNELS - self.first_input_channel()
    }
}

/// Where a frame's image channel came from. Stage 1 training asserts that
/// every source input is synthesized blur, never a raw sharp frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputProvenance {
    /// Produced by forward-warp blur synthesis from a sharp frame.
    SynthesizedBlur,
    /// A blur frame read from the corpus (the target/deployment domain).
    CorpusBlur,
    /// A raw sharp frame (allowed only for evaluation).
    SharpFrame,
}

/// One frame's predictor input: a three-channel image (intensity, scaled
/// positive counts, scaled negative counts) plus the image's provenance.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    channels: Image,
    provenance: InputProvenance,
}

impl FrameInputs {
    pub fn channels(&self) -> &Image {
        &self.channels
    }

    pub fn provenance(&self) -> InputProvenance {
        self.provenance
    }

    pub fn width(&self) -> usize {
        self.channels.width()
    }

    pub fn height(&self) -> usize {
        self.channels.height()
    }
}

/// Builds predictor inputs from a single-channel image and the events inside
/// one exposure window. The image channel is rebased to foreground brightness
/// (value minus the frame median, clamped at zero) so that background pixels
/// read zero like the event channels do; positive and negative counts are
/// accumulated per pixel, divided by [`EVENT_FEATURE_SCALE`], and clamped to
/// [0, 1].
pub fn featurize(
    image: &Image,
    events: &EventSlice,
    provenance: InputProvenance,
) -> Result<FrameInputs> {
    ensure!(
        image.channels() == 1,
        MODULE,
        "featurize expects a single-channel image, got {} channels",
        image.channels()
    );
    let (w, h) = (image.width(), image.height());
    ensure!(
        w == events.width && h == events.height,
        MODULE,
        "image {w}x{h} does not match event stream {}x{}",
        events.width,
        events.height
    );
    let counts = accumulate(events, (w, h), AccumMode::Split)?;
    let plane = w * h;
    let mut data = Vec::with_capacity(3 * plane);
    let mut sorted = image.channel(0).to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("image values are finite"));
    let median = sorted[plane / 2];
    data.extend(
        image
            .channel(0)
            .iter()
            .map(|&v| (v - median).clamp(0.0, 1.0)),
    );
    data.extend(
        counts.data()[..plane]
            .iter()
            .map(|&c| (c / EVENT_FEATURE_SCALE).clamp(0.0, 1.0)),
    );
    data.extend(
        counts.data()[plane..]
            .iter()
            .map(|&c| (c / EVENT_FEATURE_SCALE).clamp(0.0, 1.0)),
    );
    Ok(FrameInputs {
        channels: Image::from_data(w, h, 3, data)?,
        provenance,
    })
}

/// Cuts the half-open window `[center - exposure/2, center + exposure/2)`
/// out of a stream. Times are microseconds.
pub fn exposure_slice<'a>(
    stream: &'a EventStream,
    center_us: i64,
    exposure_us: i64,
) -> Result<EventSlice<'a>> {
    ensure!(
        exposure_us > 0,
        MODULE,
        "exposure must be positive, got {exposure_us}"
    );
    let slices = slice_events(stream, center_us - exposure_us / 2, exposure_us, 1)?;
    Ok(slices[2])
}

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-40.0, 40.0);
    1.0 / (1.0 + (-z).exp())
}

/// `y += alpha * x`, element-wise.
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four independent accumulators; the fixed summation order
/// keeps results identical run-to-run.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// `out[y, x] = src[clamp(y + dy), clamp(x + dx)]`: a shifted copy with
/// replicated edges, so windows near the border see ordinary background
/// instead of a synthetic all-zero pattern the model could latch onto.
fn shifted_plane(src: &[f64], w: usize, h: usize, dx: i64, dy: i64, out: &mut [f64]) {
    for y in 0..h {
        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
        let row = &src[sy * w..(sy + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        let x_lo = (-dx).max(0).min(w as i64) as usize;
        let x_hi = (w as i64 - dx).clamp(0, w as i64) as usize;
        // Left of x_lo the source column clamps to 0; right of x_hi to w-1.
        dst[..x_lo].fill(row[0]);
        if x_lo < x_hi {
            let src_start = (x_lo as i64 + dx) as usize;
            dst[x_lo..x_hi].copy_from_slice(&row[src_start..src_start + (x_hi - x_lo)]);
        }
        dst[x_hi.max(x_lo)..].fill(row[w - 1]);
    }
}

/// Per-pixel linear model over a square window of the input channels.
///
/// Each of the [`OUTPUT_CHANNELS`] outputs has its own weight vector over
/// Initial bias on heatmap channels: pre-sigmoid logit of the heat planes'
/// prior mass (Gaussian blobs cover ~3% of a frame). Starting the sigmoid
/// already at the background level skips the long phase where the
/// background-dominated squared loss drags every output down in lockstep
/// before any spatial structure can form.
pub const HEAT_BIAS_INIT: f64 = -3.5;

/// `input_channels * (2r+1)^2` features plus a bias. Heatmap channels pass
/// through a sigmoid; offset channels stay linear. Weights start at zero and
/// heatmap biases at [`HEAT_BIAS_INIT`], so a fresh model predicts uniform
/// near-background heat and offset 0 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPredictor {
    modality: Modality,
    window_radius: usize,
    /// `input_channels * taps`; the per-output weight row length.
    features: usize,
    /// `OUTPUT_CHANNELS * features`, row-major by output channel.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyPredictor {
    pub fn new(modality: Modality, window_radius: usize) -> Result<Self> {
        ensure!(
            (1..=8).contains(&window_radius),
            MODULE,
            "window_radius {window_radius} outside the supported range 1..=8"
        );
        let side = 2 * window_radius + 1;
        let features = modality.input_channels() * side * side;
        let mut bias = vec![0.0; OUTPUT_CHANNELS];
        for b in &mut bias[..HEATMAP_CHANNELS] {
            *b = HEAT_BIAS_INIT;
        }
        Ok(ToyPredictor {
            modality,
            window_radius,
            features,
            weights: vec![0.0; OUTPUT_CHANNELS * features],
            bias,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn window_radius(&self) -> usize {
        self.window_radius
    }

    /// Per-output-channel weight rows, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Feature rows for one frame: for every input channel this modality
    /// reads and every tap `(dy, dx)` of the window, the input plane shifted
    /// by the tap (zero-padded). Row-major `features x plane`.
    fn feature_matrix(&self, inputs: &FrameInputs) -> Vec<f64> {
        let (w, h) = (inputs.width(), inputs.height());
        let plane = w * h;
        let r = self.window_radius as i64;
        let mut x = vec![0.0; self.features * plane];
        let mut row = 0;
        for ic in self.modality.first_input_channel()..INPUT_CHANNELS {
            let src = inputs.channels.channel(ic);
            for dy in -r..=r {
                for dx in -r..=r {
                    shifted_plane(src, w, h, dx, dy, &mut x[row * plane..(row + 1) * plane]);
                    row += 1;
                }
            }
        }
        debug_assert_eq!(row, self.features);
        x
    }

    fn validate_inputs(&self, inputs: &FrameInputs) -> Result<()> {
        ensure!(
            inputs.channels.channels() == INPUT_CHANNELS,
            MODULE,
            "predictor inputs must have {INPUT_CHANNELS} channels, got {}",
            inputs.channels.channels()
        );
        let side = 2 * self.window_radius + 1;
        ensure!(
            inputs.width() >= side && inputs.height() >= side,
            MODULE,
            "input {}x{} smaller than the {side}x{side} window",
            inputs.width(),
            inputs.height()
        );
        Ok(())
    }

    /// Forward pass returning the fields and the feature matrix (reused by
    /// the backward pass).
    fn forward(&self, inputs: &FrameInputs) -> Result<(PoseFieldSet, Vec<f64>)> {
        self.validate_inputs(inputs)?;
        let (w, h) = (inputs.width(), inputs.height());
        let plane = w * h;
        let x = self.feature_matrix(inputs);

        let mut z = vec![0.0_f64; OUTPUT_CHANNELS * plane];
        for oc in 0..OUTPUT_CHANNELS {
            let w_row = &self.weights[oc * self.features..(oc + 1) * self.features];
            let z_row = &mut z[oc * plane..(oc + 1) * plane];
            z_row.fill(self.bias[oc]);
            for (f, &wf) in w_row.iter().enumerate() {
                axpy(wf, &x[f * plane..(f + 1) * plane], z_row);
            }
        }

        let mut fields = PoseFieldSet::zeros(w, h)?;
        for (dst, &zv) in fields.center_mut().iter_mut().zip(&z[..plane]) {
            *dst = sigmoid(zv);
        }
        for (dst, &zv) in fields
            .keypoints_raw_mut()
            .iter_mut()
            .zip(&z[plane..HEATMAP_CHANNELS * plane])
        {
            *dst = sigmoid(zv);
        }
        for (dst, zv) in fields
            .offsets_raw_mut()
            .iter_mut()
            .zip(&z[HEATMAP_CHANNELS * plane..])
        {
            *dst = OFFSET_GAIN * zv;
        }
        Ok((fields, x))
    }

    /// Runs the model on one frame.
    pub fn predict(&self, inputs: &FrameInputs) -> Result<PoseFieldSet> {
        Ok(self.forward(inputs)?.0)
    }

    /// One gradient-descent update on a single frame. Returns the losses at
    /// the pre-update weights. `lr = 0` leaves the model unchanged; a
    /// non-finite loss aborts without touching the weights.
    pub fn train_step(
        &mut self,
        inputs: &FrameInputs,
        targets: &PoseFieldSet,
        masks: &MaskSet,
        lr: f64,
        lambda_g: f64,
    ) -> Result<LossReport> {
        ensure!(
            lr.is_finite() && lr >= 0.0,
            MODULE,
            "learning rate {lr} must be finite and non-negative"
        );
        let (pred, x) = self.forward(inputs)?;
        let (report, grad) = supervised_loss(&pred, targets, masks, lambda_g)?;
        ensure!(
            report.total.is_finite(),
            MODULE,
            "non-finite training loss (heatmap {}, offset {}); aborting before the update",
            report.heatmap_loss,
            report.offset_loss
        );

        let plane = inputs.width() * inputs.height();
        // Gradient w.r.t. the pre-activation z: sigmoid chain on heatmap
        // channels, the fixed output gain on offset channels (their loss
        // weighting is already folded into `grad.offsets`).
        let mut dz = vec![0.0_f64; OUTPUT_CHANNELS * plane];
        let heat_pred = pred.heatmaps_concat();
        for i in 0..HEATMAP_CHANNELS * plane {
            let s = heat_pred[i];
            dz[i] = grad.heatmaps[i] * s * (1.0 - s);
        }
        for (dst, g) in dz[HEATMAP_CHANNELS * plane..]
            .iter_mut()
            .zip(&grad.offsets)
        {
            *dst = OFFSET_GAIN * g;
        }

        for oc in 0..OUTPUT_CHANNELS {
            let dz_row = &dz[oc * plane..(oc + 1) * plane];
            let w_row = &mut self.weights[oc * self.features..(oc + 1) * self.features];
            for (f, wf) in w_row.iter_mut().enumerate() {
                *wf -= lr * dot(dz_row, &x[f * plane..(f + 1) * plane]);
            }
            self.bias[oc] -= lr * dz_row.iter().sum::<f64>();
        }
        Ok(report)
    }
}

/// Mean of the two sub-teachers' heatmaps; offsets come from the image+event
/// sub-teacher (the denser modality regresses them more reliably).
pub fn fuse_subteachers(
    fields_event: &PoseFieldSet,
    fields_image_event: &PoseFieldSet,
) -> Result<PoseFieldSet> {
    ensure!(
        fields_event.width() == fields_image_event.width()
            && fields_event.height() == fields_image_event.height(),
        MODULE,
        "sub-teacher field shapes differ: {}x{} vs {}x{}",
        fields_event.width(),
        fields_event.height(),
        fields_image_event.width(),
        fields_image_event.height()
    );
    let mut out = fields_image_event.clone();
    for (dst, &a) in out
        .center_mut()
        .iter_mut()
        .zip(fields_event.center().iter())
    {
        *dst = 0.5 * (a + *dst);
    }
    for (dst, &a) in out
        .keypoints_raw_mut()
        .iter_mut()
        .zip(fields_event.keypoints_raw().iter())
    {
        *dst = 0.5 * (a + *dst);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Sidecar metadata stored next to each checkpoint's weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub modality: String,
    pub window_radius: usize,
    pub stage: u8,
    pub seed: u64,
}

/// Writes `base.tnsr` (one row per output channel: weights then bias) and
/// `base.json` (the sidecar). Returns the tensor path.
pub fn save_checkpoint(
    model: &ToyPredictor,
    stage: u8,
    seed: u64,
    base: &Path,
) -> Result<PathBuf> {
    let cols = model.features + 1;
    let mut data = Vec::with_capacity(OUTPUT_CHANNELS * cols);
    for oc in 0..OUTPUT_CHANNELS {
        data.extend_from_slice(&model.weights[oc * model.features..(oc + 1) * model.features]);
        data.push(model.bias[oc]);
    }
    let tensor = Tensor::from_vec(&[OUTPUT_CHANNELS, cols], data)?;
    let tnsr_path = base.with_extension("tnsr");
    tensor.save(&tnsr_path)?;
    let meta = CheckpointMeta {
        modality: model.modality.as_str().to_string(),
        window_radius: model.window_radius,
        stage,
        seed,
    };
    let json_path = base.with_extension("json");
    let body = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(MODULE, &json_path, e))?;
    fs::write(&json_path, body).map_err(|e| Error::io(MODULE, &json_path, e))?;
    Ok(tnsr_path)
}

/// Loads a checkpoint written by [`save_checkpoint`]. `base` may carry
/// either extension or none.
pub fn load_checkpoint(base: &Path) -> Result<(ToyPredictor, CheckpointMeta)> {
    let tnsr_path = base.with_extension("tnsr");
    let json_path = base.with_extension("json");
    ensure!(
        tnsr_path.exists() && json_path.exists(),
        MODULE,
        "missing checkpoint {} (.tnsr/.json); run the producing stage first",
        base.display()
    );
    let body = fs::read_to_string(&json_path).map_err(|e| Error::io(MODULE, &json_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&body).map_err(|e| Error::json(MODULE, &json_path, e))?;
    let mut model = ToyPredictor::new(Modality::parse(&meta.modality)?, meta.window_radius)?;
    let tensor = Tensor::load(&tnsr_path)?;
    let cols = model.features + 1;
    ensure!(
        tensor.dims() == [OUTPUT_CHANNELS, cols],
        MODULE,
        "checkpoint {} has dims {:?}, expected [{OUTPUT_CHANNELS}, {cols}]",
        tnsr_path.display(),
        tensor.dims()
    );
    for oc in 0..OUTPUT_CHANNELS {
        let row = &tensor.data()[oc * cols..(oc + 1) * cols];
        model.weights[oc * model.features..(oc + 1) * model.features]
            .copy_from_slice(&row[..model.features]);
        model.bias[oc] = row[model.features];
    }
    Ok((model, meta))
}

// ---------------------------------------------------------------------------
// Stage configuration
// ---------------------------------------------------------------------------

/// Everything one training stage needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    /// Stage number, 1-4.
    pub stage: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Confidence gate for pseudo-label masks: stage 2 uses it for single
    /// masks, stages 3-4 for mutual masks. Unused in stage 1.
    pub threshold: f64,
    pub rng_seed: u64,
    pub corpus_root: PathBuf,
    /// Receives checkpoints, metrics CSVs, and the synthesized-blur cache.
    pub work_dir: PathBuf,
    pub lambda_g: f64,
    pub window_radius: usize,
    /// Gaussian std used when encoding poses into target fields.
    pub sigma: f64,
    /// Ablation switch: replace pseudo-label masks with all-ones masks.
    pub unmasked: bool,
}

impl StageConfig {
    /// Tuned defaults for one stage.
    pub fn defaults(
        stage: u8,
        corpus_root: impl Into<PathBuf>,
        work_dir: impl Into<PathBuf>,
        rng_seed: u64,
    ) -> Self {
        let (epochs, learning_rate) = match stage {
            1 => (18, 30.0),
            2 => (12, 30.0),
            3 => (8, 10.0),
            _ => (12, 30.0),
        };
        StageConfig {
            stage,
            epochs,
            learning_rate,
            threshold: 0.1,
            rng_seed,
            corpus_root: corpus_root.into(),
            work_dir: work_dir.into(),
            lambda_g: DEFAULT_LAMBDA_G,
            window_radius: DEFAULT_WINDOW_RADIUS,
            sigma: 3.0,
            unmasked: false,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            (1..=4).contains(&self.stage),
            MODULE,
            "stage {} outside 1..=4",
            self.stage
        );
        ensure!(self.epochs >= 1, MODULE, "epochs must be at least 1");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate >= 0.0,
            MODULE,
            "learning rate {} must be finite and non-negative",
            self.learning_rate
        );
        ensure!(
            self.threshold > 0.0 && self.threshold < 1.0,
            MODULE,
            "threshold {} outside (0, 1)",
            self.threshold
        );
        ensure!(
            self.lambda_g >= 0.0 && self.lambda_g.is_finite(),
            MODULE,
            "lambda_g {} must be finite and non-negative",
            self.lambda_g
        );
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            MODULE,
            "sigma {} must be positive",
            self.sigma
        );
        Ok(())
    }

    fn pseudo_config(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            decode: DecodeParams::default(),
            mask: MaskParams {
                threshold: self.threshold,
                ..MaskParams::default()
            },
            sigma: self.sigma,
        }
    }
}

/// Losses and validation score of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub heatmap_loss: f64,
    pub offset_loss: f64,
    pub map_val: f64,
}

/// What a finished stage hands back.
#[derive(Debug, Clone)]
pub struct StageOutput {
    /// Checkpoint bases (no extension) written by the stage.
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<EpochMetrics>,
    pub metrics_path: PathBuf,
    /// Validation mAP of the final epoch.
    pub final_map: f64,
}

// ---------------------------------------------------------------------------
// Corpus preparation
// ---------------------------------------------------------------------------

/// A labeled training frame (source domain). The masks carry no confidence
/// gating (heat all ones); they restrict offset supervision to the pixels
/// where the encoded offset field is defined.
struct LabeledFrame {
    inputs: FrameInputs,
    targets: PoseFieldSet,
    masks: MaskSet,
}

/// A held-out evaluation frame with inputs from both domains.
pub(crate) struct ValFrame {
    pub(crate) id: String,
    pub(crate) blur: FrameInputs,
    pub(crate) sharp: FrameInputs,
    pub(crate) gt: Vec<Pose>,
}

struct PreparedCorpus {
    source: Vec<LabeledFrame>,
    target: Vec<FrameInputs>,
    val: Vec<ValFrame>,
}

struct SequenceData {
    dir: PathBuf,
    meta: SequenceMeta,
    stream: EventStream,
}

fn load_sequences(corpus_root: &Path, split: &str) -> Result<Vec<SequenceData>> {
    ensure!(
        SPLIT_NAMES.contains(&split),
        MODULE,
        "unknown split {split:?}"
    );
    let mut out = Vec::new();
    for dir in list_sequences(corpus_root, split)? {
        let meta = load_sequence_meta(&dir.join("meta.json"))?;
        let stream = load_events(&dir.join("events.evt1"), EventFileFormat::Binary)?;
        out.push(SequenceData { dir, meta, stream });
    }
    Ok(out)
}

/// Synthesized blur for one source frame, cached on disk. The cache file is
/// the value of record: after a miss the freshly computed image is written
/// and re-read, so every consumer sees the same storage-precision pixels.
fn synthesized_blur(
    seq: &SequenceData,
    frame: usize,
    sharp: &Image,
    cache_dir: &Path,
) -> Result<Image> {
    let key = format!(
        "{}_seq{:03}_frame{:04}.tnsr",
        seq.meta.split, seq.meta.sequence_index, frame
    );
    let path = cache_dir.join(key);
    if !path.exists() {
        let center = seq.meta.frame_centers_us[frame];
        let slices = slice_events(&seq.stream, center, seq.meta.delta_tau_us, seq.meta.n_e)?;
        let params = FlowParams::default();
        let flows: Vec<FlowField> = slices
            .iter()
            .map(|s| estimate_flow(s, &params))
            .collect::<Result<_>>()?;
        let sample = synthesize_blur(sharp, &flows, 1e-6, HoleFill::Reference)?;
        fs::create_dir_all(cache_dir).map_err(|e| Error::io(MODULE, cache_dir, e))?;
        sample.blur.to_tensor().save(&path)?;
    }
    Image::from_tensor(&Tensor::load(&path)?)
}

fn frame_inputs_for(
    seq: &SequenceData,
    frame: usize,
    image: &Image,
    provenance: InputProvenance,
) -> Result<FrameInputs> {
    let center = seq.meta.frame_centers_us[frame];
    let slice = exposure_slice(&seq.stream, center, seq.meta.exposure_us)?;
    featurize(image, &slice, provenance)
}

fn load_source_frames(cfg: &StageConfig) -> Result<Vec<LabeledFrame>> {
    let cache_dir = cfg.work_dir.join("synth_cache");
    let mut out = Vec::new();
    for seq in load_sequences(&cfg.corpus_root, "train-source")? {
        let poses = load_pose_frames_json(&seq.dir.join("poses.json"))?;
        ensure!(
            poses.len() == seq.meta.frames,
            MODULE,
            "{}: poses.json has {} frames, meta says {}",
            seq.dir.display(),
            poses.len(),
            seq.meta.frames
        );
        for f in 0..seq.meta.frames {
            let sharp = Image::load_png(&seq.dir.join(format!("frame_{f:04}.png")))?;
            let blur = synthesized_blur(&seq, f, &sharp, &cache_dir)?;
            let inputs = frame_inputs_for(&seq, f, &blur, InputProvenance::SynthesizedBlur)?;
            let resolution = (inputs.width(), inputs.height());
            let targets = encode_targets(&poses[f], resolution, cfg.sigma)?;
            let masks = ground_truth_masks(&poses[f], resolution)?;
            out.push(LabeledFrame {
                inputs,
                targets,
                masks,
            });
        }
    }
    Ok(out)
}

fn load_target_frames(cfg: &StageConfig) -> Result<Vec<FrameInputs>> {
    let mut out = Vec::new();
    for seq in load_sequences(&cfg.corpus_root, "train-target")? {
        for f in 0..seq.meta.frames {
            let blur = Image::load_png(&seq.dir.join(format!("blur_{f:04}.png")))?;
            out.push(frame_inputs_for(&seq, f, &blur, InputProvenance::CorpusBlur)?);
        }
    }
    Ok(out)
}

pub(crate) fn load_test_frames(corpus_root: &Path) -> Result<Vec<ValFrame>> {
    let mut out = Vec::new();
    for seq in load_sequences(corpus_root, "test")? {
        let poses = load_pose_frames_json(&seq.dir.join("poses.json"))?;
        for f in 0..seq.meta.frames {
            let blur_img = Image::load_png(&seq.dir.join(format!("blur_{f:04}.png")))?;
            let sharp_img = Image::load_png(&seq.dir.join(format!("frame_{f:04}.png")))?;
            out.push(ValFrame {
                id: format!("test_seq{:03}_frame{f:04}", seq.meta.sequence_index),
                blur: frame_inputs_for(&seq, f, &blur_img, InputProvenance::CorpusBlur)?,
                sharp: frame_inputs_for(&seq, f, &sharp_img, InputProvenance::SharpFrame)?,
                gt: poses[f].clone(),
            });
        }
    }
    Ok(out)
}

fn prepare_corpus(cfg: &StageConfig) -> Result<PreparedCorpus> {
    Ok(PreparedCorpus {
        source: load_source_frames(cfg)?,
        target: if cfg.stage >= 2 {
            load_target_frames(cfg)?
        } else {
            Vec::new()
        },
        val: load_test_frames(&cfg.corpus_root)?,
    })
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

/// Which test-split image channel evaluation feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalDomain {
    Sharp,
    Blur,
}

/// A model under evaluation: a single network or the fused teacher pair.
pub enum EvalModel<'a> {
    Single(&'a ToyPredictor),
    Fused {
        event: &'a ToyPredictor,
        image_event: &'a ToyPredictor,
    },
}

impl EvalModel<'_> {
    pub fn predict(&self, inputs: &FrameInputs) -> Result<PoseFieldSet> {
        match self {
            EvalModel::Single(m) => m.predict(inputs),
            EvalModel::Fused { event, image_event } => fuse_subteachers(
                &event.predict(inputs)?,
                &image_event.predict(inputs)?,
            ),
        }
    }
}

fn eval_map(
    model: &EvalModel,
    frames: &[ValFrame],
    domain: EvalDomain,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<EvalResult> {
    let mut preds = Vec::with_capacity(frames.len());
    let mut gts = Vec::with_capacity(frames.len());
    for frame in frames {
        let inputs = match domain {
            EvalDomain::Sharp => &frame.sharp,
            EvalDomain::Blur => &frame.blur,
        };
        let fields = model.predict(inputs)?;
        let decoded = decode_poses(&fields, decode)?;
        let poses = pose_nms(&decoded, decode.nms_oks_threshold, kappas);
        preds.push(PredFrame {
            id: frame.id.clone(),
            poses,
        });
        gts.push(GtFrame {
            id: frame.id.clone(),
            boxes: frame.gt.iter().map(extent_box).collect(),
            poses: frame.gt.clone(),
        });
    }
    evaluate(&preds, &gts, kappas)
}

/// Decodes and scores a model on the held-out test split.
pub fn evaluate_on_test(
    model: &EvalModel,
    corpus_root: &Path,
    domain: EvalDomain,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<EvalResult> {
    let frames = load_test_frames(corpus_root)?;
    eval_map(model, &frames, domain, decode, kappas)
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// One training example: borrowed inputs, targets, and loss masks.
struct TrainItem<'a> {
    inputs: &'a FrameInputs,
    targets: &'a PoseFieldSet,
    masks: &'a MaskSet,
}

/// Runs the items in the given order; returns mean heatmap and offset loss.
fn run_epoch(
    model: &mut ToyPredictor,
    items: &[TrainItem],
    order: &[usize],
    lr: f64,
    lambda_g: f64,
) -> Result<(f64, f64)> {
    let mut heat = 0.0;
    let mut off = 0.0;
    for &i in order {
        let item = &items[i];
        let report = model.train_step(item.inputs, item.targets, item.masks, lr, lambda_g)?;
        heat += report.heatmap_loss;
        off += report.offset_loss;
    }
    let n = order.len().max(1) as f64;
    Ok((heat / n, off / n))
}

/// Shuffles target and source item indices separately and interleaves them
/// target-first, cycling the shorter list so every epoch sees both streams
/// one-for-one.
fn interleaved_order(
    n_target: usize,
    n_source: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    // Items are laid out target-first: indices [0, n_target) are target
    // frames, [n_target, n_target + n_source) are source frames.
    let mut t_order: Vec<usize> = (0..n_target).collect();
    let mut s_order: Vec<usize> = (n_target..n_target + n_source).collect();
    t_order.shuffle(rng);
    s_order.shuffle(rng);
    let rounds = t_order.len().max(s_order.len());
    let mut out = Vec::with_capacity(2 * rounds);
    for i in 0..rounds {
        if !t_order.is_empty() {
            out.push(t_order[i % t_order.len()]);
        }
        if !s_order.is_empty() {
            out.push(s_order[i % s_order.len()]);
        }
    }
    out
}

fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut body = String::from("epoch,heatmap_loss,offset_loss,mAP_val\n");
    for m in metrics {
        body.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.heatmap_loss, m.offset_loss, m.map_val
        ));
    }
    fs::write(path, body).map_err(|e| Error::io(MODULE, path, e))
}

fn checkpoint_base(cfg: &StageConfig, name: &str) -> PathBuf {
    cfg.work_dir.join(name)
}

fn metrics_path(cfg: &StageConfig) -> PathBuf {
    let suffix = if cfg.unmasked { "_unmasked" } else { "" };
    cfg.work_dir
        .join(format!("stage{}_metrics{suffix}.csv", cfg.stage))
}

/// Pseudo-labels for every target frame, generated once per stage from
/// frozen models and reused across epochs.
struct TargetLabels {
    targets: Vec<PoseFieldSet>,
    masks: Vec<MaskSet>,
}

fn single_target_labels(
    cfg: &StageConfig,
    teacher_event: &ToyPredictor,
    teacher_image_event: &ToyPredictor,
    target: &[FrameInputs],
    kappas: &Kappas,
) -> Result<TargetLabels> {
    let plcfg = cfg.pseudo_config();
    let mut targets = Vec::with_capacity(target.len());
    let mut masks = Vec::with_capacity(target.len());
    for inputs in target {
        let fused = fuse_subteachers(
            &teacher_event.predict(inputs)?,
            &teacher_image_event.predict(inputs)?,
        )?;
        let labels = generate_pseudo_labels(&fused, &plcfg, kappas)?;
        masks.push(if cfg.unmasked {
            MaskSet::unit(inputs.width(), inputs.height())
        } else {
            labels.masks
        });
        targets.push(labels.targets);
    }
    Ok(TargetLabels { targets, masks })
}

fn mutual_target_labels(
    cfg: &StageConfig,
    teacher_event: &ToyPredictor,
    teacher_image_event: &ToyPredictor,
    student: &ToyPredictor,
    target: &[FrameInputs],
    kappas: &Kappas,
) -> Result<TargetLabels> {
    let plcfg = cfg.pseudo_config();
    let mut targets = Vec::with_capacity(target.len());
    let mut masks = Vec::with_capacity(target.len());
    for inputs in target {
        let teacher_fields = fuse_subteachers(
            &teacher_event.predict(inputs)?,
            &teacher_image_event.predict(inputs)?,
        )?;
        let student_fields = student.predict(inputs)?;
        let labels =
            generate_mutual_pseudo_labels(&teacher_fields, &student_fields, &plcfg, kappas)?;
        masks.push(if cfg.unmasked {
            MaskSet::unit(inputs.width(), inputs.height())
        } else {
            labels.masks
        });
        targets.push(labels.targets);
    }
    Ok(TargetLabels { targets, masks })
}

/// Builds the interleaved item list for stages 2-4: target frames with their
/// pseudo-labels first, then the labeled source frames with their
/// ground-truth masks.
fn adaptation_items<'a>(
    target: &'a [FrameInputs],
    labels: &'a TargetLabels,
    source: &'a [LabeledFrame],
) -> Vec<TrainItem<'a>> {
    let mut items = Vec::with_capacity(target.len() + source.len());
    for (inputs, (targets, masks)) in target
        .iter()
        .zip(labels.targets.iter().zip(labels.masks.iter()))
    {
        items.push(TrainItem {
            inputs,
            targets,
            masks,
        });
    }
    for frame in source {
        items.push(TrainItem {
            inputs: &frame.inputs,
            targets: &frame.targets,
            masks: &frame.masks,
        });
    }
    items
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

const CKPT_S1_EVENT: &str = "stage1_teacher_event";
const CKPT_S1_IMAGE_EVENT: &str = "stage1_teacher_image_event";
const CKPT_S2_STUDENT: &str = "stage2_student";
const CKPT_S2_STUDENT_UNMASKED: &str = "stage2_student_unmasked";
const CKPT_S3_EVENT: &str = "stage3_teacher_event";
const CKPT_S3_IMAGE_EVENT: &str = "stage3_teacher_image_event";
const CKPT_S4_STUDENT: &str = "stage4_student";

fn stage2_student_name(cfg: &StageConfig) -> &'static str {
    if cfg.unmasked {
        CKPT_S2_STUDENT_UNMASKED
    } else {
        CKPT_S2_STUDENT
    }
}

fn load_stage_checkpoint(cfg: &StageConfig, name: &str) -> Result<ToyPredictor> {
    let (model, meta) = load_checkpoint(&checkpoint_base(cfg, name))?;
    ensure!(
        meta.window_radius == cfg.window_radius,
        MODULE,
        "checkpoint {name} was trained with window_radius {}, config says {}",
        meta.window_radius,
        cfg.window_radius
    );
    Ok(model)
}

/// Teacher pre-training on labeled source frames whose image inputs are all
/// synthesized blur. Trains both sub-teachers one epoch at a time and logs
/// the fused pair's validation mAP after each epoch.
fn stage1(
    cfg: &StageConfig,
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<StageOutput> {
    ensure!(
        !corpus.source.is_empty(),
        MODULE,
        "stage 1 found no source frames"
    );
    // Input audit: the teacher must never see a raw sharp frame.
    for frame in &corpus.source {
        ensure!(
            frame.inputs.provenance() == InputProvenance::SynthesizedBlur,
            MODULE,
            "stage 1 input is not synthesized blur (provenance {:?})",
            frame.inputs.provenance()
        );
    }
    let items: Vec<TrainItem> = corpus
        .source
        .iter()
        .map(|f| TrainItem {
            inputs: &f.inputs,
            targets: &f.targets,
            masks: &f.masks,
        })
        .collect();

    let mut teacher_event = ToyPredictor::new(Modality::EventOnly, cfg.window_radius)?;
    let mut teacher_image_event = ToyPredictor::new(Modality::ImageEvent, cfg.window_radius)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut heat = 0.0;
        let mut off = 0.0;
        for model in [&mut teacher_event, &mut teacher_image_event] {
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(rng);
            let (h_loss, o_loss) = run_epoch(model, &items, &order, cfg.learning_rate, cfg.lambda_g)?;
            heat += h_loss / 2.0;
            off += o_loss / 2.0;
        }
        let fused = EvalModel::Fused {
            event: &teacher_event,
            image_event: &teacher_image_event,
        };
        let map_val = eval_map(&fused, &corpus.val, EvalDomain::Blur, decode, kappas)?.map;
        log::info!(
            "stage 1 epoch {epoch}/{}: heatmap {heat:.6}, offset {off:.6}, val mAP {map_val:.4}",
            cfg.epochs
        );
        metrics.push(EpochMetrics {
            epoch,
            heatmap_loss: heat,
            offset_loss: off,
            map_val,
        });
    }

    let bases = [
        (&teacher_event, CKPT_S1_EVENT),
        (&teacher_image_event, CKPT_S1_IMAGE_EVENT),
    ];
    let mut checkpoints = Vec::new();
    for (model, name) in bases {
        let base = checkpoint_base(cfg, name);
        save_checkpoint(model, cfg.stage, cfg.rng_seed, &base)?;
        checkpoints.push(base);
    }
    finish_stage(cfg, checkpoints, metrics)
}

/// Shared tail: write the CSV and assemble the output.
fn finish_stage(
    cfg: &StageConfig,
    checkpoints: Vec<PathBuf>,
    metrics: Vec<EpochMetrics>,
) -> Result<StageOutput> {
    let path = metrics_path(cfg);
    write_metrics_csv(&path, &metrics)?;
    let final_map = metrics.last().map(|m| m.map_val).unwrap_or(0.0);
    Ok(StageOutput {
        checkpoints,
        metrics,
        metrics_path: path,
        final_map,
    })
}

/// Student training on teacher pseudo-labels (single-network confidence
/// masks) interleaved with labeled source frames.
fn stage2(
    cfg: &StageConfig,
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<StageOutput> {
    let teacher_event = load_stage_checkpoint(cfg, CKPT_S1_EVENT)?;
    let teacher_image_event = load_stage_checkpoint(cfg, CKPT_S1_IMAGE_EVENT)?;
    let labels = single_target_labels(
        cfg,
        &teacher_event,
        &teacher_image_event,
        &corpus.target,
        kappas,
    )?;
    let student = ToyPredictor::new(Modality::ImageEvent, cfg.window_radius)?;
    let (student, metrics) = train_on_targets(cfg, corpus, rng, decode, kappas, student, &labels)?;
    let base = checkpoint_base(cfg, stage2_student_name(cfg));
    save_checkpoint(&student, cfg.stage, cfg.rng_seed, &base)?;
    finish_stage(cfg, vec![base], metrics)
}

/// Teacher refinement on target frames gated by mutual confidence masks
/// (teacher AND the frozen stage-2 student must agree), interleaved with
/// labeled source frames.
fn stage3(
    cfg: &StageConfig,
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<StageOutput> {
    let mut teacher_event = load_stage_checkpoint(cfg, CKPT_S1_EVENT)?;
    let mut teacher_image_event = load_stage_checkpoint(cfg, CKPT_S1_IMAGE_EVENT)?;
    let student = load_stage_checkpoint(cfg, CKPT_S2_STUDENT)?;
    // Labels come from a frozen snapshot taken before any stage-3 update.
    let labels = mutual_target_labels(
        cfg,
        &teacher_event,
        &teacher_image_event,
        &student,
        &corpus.target,
        kappas,
    )?;
    let items = adaptation_items(&corpus.target, &labels, &corpus.source);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut heat = 0.0;
        let mut off = 0.0;
        for model in [&mut teacher_event, &mut teacher_image_event] {
            let order = interleaved_order(corpus.target.len(), corpus.source.len(), rng);
            let (h_loss, o_loss) = run_epoch(model, &items, &order, cfg.learning_rate, cfg.lambda_g)?;
            heat += h_loss / 2.0;
            off += o_loss / 2.0;
        }
        let fused = EvalModel::Fused {
            event: &teacher_event,
            image_event: &teacher_image_event,
        };
        let map_val = eval_map(&fused, &corpus.val, EvalDomain::Blur, decode, kappas)?.map;
        log::info!(
            "stage 3 epoch {epoch}/{}: heatmap {heat:.6}, offset {off:.6}, val mAP {map_val:.4}",
            cfg.epochs
        );
        metrics.push(EpochMetrics {
            epoch,
            heatmap_loss: heat,
            offset_loss: off,
            map_val,
        });
    }

    let bases = [
        (&teacher_event, CKPT_S3_EVENT),
        (&teacher_image_event, CKPT_S3_IMAGE_EVENT),
    ];
    let mut checkpoints = Vec::new();
    for (model, name) in bases {
        let base = checkpoint_base(cfg, name);
        save_checkpoint(model, cfg.stage, cfg.rng_seed, &base)?;
        checkpoints.push(base);
    }
    finish_stage(cfg, checkpoints, metrics)
}

/// Final student round: pseudo-labels regenerated by the stage-3 teacher
/// (still gated mutually with the frozen stage-2 student), student
/// warm-started from its stage-2 weights.
fn stage4(
    cfg: &StageConfig,
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    decode: &DecodeParams,
    kappas: &Kappas,
) -> Result<StageOutput> {
    let teacher_event = load_stage_checkpoint(cfg, CKPT_S3_EVENT)?;
    let teacher_image_event = load_stage_checkpoint(cfg, CKPT_S3_IMAGE_EVENT)?;
    let student = load_stage_checkpoint(cfg, CKPT_S2_STUDENT)?;
    let labels = mutual_target_labels(
        cfg,
        &teacher_event,
        &teacher_image_event,
        &student,
        &corpus.target,
        kappas,
    )?;
    let (student, metrics) = train_on_targets(cfg, corpus, rng, decode, kappas, student, &labels)?;
    let base = checkpoint_base(cfg, CKPT_S4_STUDENT);
    save_checkpoint(&student, cfg.stage, cfg.rng_seed, &base)?;
    finish_stage(cfg, vec![base], metrics)
}

/// Shared student loop for stages 2 and 4: interleave pseudo-labeled target
/// frames with labeled source frames, log student validation mAP per epoch.
fn train_on_targets(
    cfg: &StageConfig,
    corpus: &PreparedCorpus,
    rng: &mut ChaCha8Rng,
    decode: &DecodeParams,
    kappas: &Kappas,
    mut student: ToyPredictor,
    labels: &TargetLabels,
) -> Result<(ToyPredictor, Vec<EpochMetrics>)> {
    ensure!(
        !corpus.target.is_empty(),
        MODULE,
        "adaptation stage found no target frames"
    );
    let items = adaptation_items(&corpus.target, labels, &corpus.source);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = interleaved_order(corpus.target.len(), corpus.source.len(), rng);
        let (heat, off) = run_epoch(&mut student, &items, &order, cfg.learning_rate, cfg.lambda_g)?;
        let map_val = eval_map(
            &EvalModel::Single(&student),
            &corpus.val,
            EvalDomain::Blur,
            decode,
            kappas,
        )?
        .map;
        log::info!(
            "stage {} epoch {epoch}/{}: heatmap {heat:.6}, offset {off:.6}, val mAP {map_val:.4}",
            cfg.stage,
            cfg.epochs
        );
        metrics.push(EpochMetrics {
            epoch,
            heatmap_loss: heat,
            offset_loss: off,
            map_val,
        });
    }
    Ok((student, metrics))
}

/// Runs one training stage end to end: loads the corpus (and any upstream
/// checkpoints), trains, writes checkpoints plus a metrics CSV into the
/// work directory.
pub fn run_stage(cfg: &StageConfig) -> Result<StageOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(MODULE, &cfg.work_dir, e))?;
    let corpus = prepare_corpus(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let decode = DecodeParams::default();
    let kappas = Kappas::default();
    match cfg.stage {
        1 => stage1(cfg, &corpus, &mut rng, &decode, &kappas),
        2 => stage2(cfg, &corpus, &mut rng, &decode, &kappas),
        3 => stage3(cfg, &corpus, &mut rng, &decode, &kappas),
        _ => stage4(cfg, &corpus, &mut rng, &decode, &kappas),
    }
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Settings for a four-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub work_dir: PathBuf,
    pub rng_seed: u64,
    pub epochs: [usize; 4],
    pub learning_rates: [f64; 4],
    /// Single-mask confidence gate (stage 2).
    pub single_threshold: f64,
    /// Mutual-mask confidence gate (stages 3-4).
    pub mutual_threshold: f64,
    pub lambda_g: f64,
    pub window_radius: usize,
    pub sigma: f64,
}

impl PipelineConfig {
    pub fn new(
        corpus_root: impl Into<PathBuf>,
        work_dir: impl Into<PathBuf>,
        rng_seed: u64,
    ) -> Self {
        let corpus_root = corpus_root.into();
        let work_dir = work_dir.into();
        let defaults: Vec<StageConfig> = (1..=4)
            .map(|s| StageConfig::defaults(s, &corpus_root, &work_dir, rng_seed))
            .collect();
        PipelineConfig {
            corpus_root,
            work_dir,
            rng_seed,
            epochs: [
                defaults[0].epochs,
                defaults[1].epochs,
                defaults[2].epochs,
                defaults[3].epochs,
            ],
            learning_rates: [
                defaults[0].learning_rate,
                defaults[1].learning_rate,
                defaults[2].learning_rate,
                defaults[3].learning_rate,
            ],
            single_threshold: defaults[1].threshold,
            mutual_threshold: defaults[3].threshold,
            lambda_g: defaults[0].lambda_g,
            window_radius: defaults[0].window_radius,
            sigma: defaults[0].sigma,
        }
    }

    /// The per-stage configuration this pipeline run uses.
    pub fn stage_config(&self, stage: u8) -> StageConfig {
        let idx = (stage.clamp(1, 4) - 1) as usize;
        StageConfig {
            stage,
            epochs: self.epochs[idx],
            learning_rate: self.learning_rates[idx],
            threshold: if stage == 2 {
                self.single_threshold
            } else {
                self.mutual_threshold
            },
            rng_seed: self.rng_seed,
            corpus_root: self.corpus_root.clone(),
            work_dir: self.work_dir.clone(),
            lambda_g: self.lambda_g,
            window_radius: self.window_radius,
            sigma: self.sigma,
            unmasked: false,
        }
    }
}

/// Outcome of a four-stage run plus the final test evaluation.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub stages: Vec<StageOutput>,
    /// Final stage-4 student scored on the test split's sharp frames.
    pub sharp: EvalResult,
    /// Final stage-4 student scored on the test split's blur frames.
    pub blur: EvalResult,
}

impl PipelineResult {
    /// Validation mAP of the stage-2 student's final epoch.
    pub fn stage2_map(&self) -> f64 {
        self.stages[1].final_map
    }

    /// Validation mAP of the stage-4 student's final epoch.
    pub fn stage4_map(&self) -> f64 {
        self.stages[3].final_map
    }
}

/// Runs stages 1-4 and evaluates the final student on both test domains.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult> {
    let mut stages = Vec::with_capacity(4);
    for stage in 1..=4 {
        let stage_cfg = cfg.stage_config(stage);
        log::info!("running stage {stage} (seed {})", cfg.rng_seed);
        stages.push(run_stage(&stage_cfg)?);
    }
    let (student, _) = load_checkpoint(&cfg.work_dir.join(CKPT_S4_STUDENT))?;
    let decode = DecodeParams::default();
    let kappas = Kappas::default();
    let frames = load_test_frames(&cfg.corpus_root)?;
    let model = EvalModel::Single(&student);
    let sharp = eval_map(&model, &frames, EvalDomain::Sharp, &decode, &kappas)?;
    let blur = eval_map(&model, &frames, EvalDomain::Blur, &decode, &kappas)?;
    Ok(PipelineResult {
        stages,
        sharp,
        blur,
    })
}
