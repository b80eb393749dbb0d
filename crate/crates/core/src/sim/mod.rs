//! Synthetic event-camera scenes: articulated stick figures and simple
//! capsule props moving over a uniform background, rendered with anti-aliased
//! capsules. Provides sharp frames, threshold-crossing event streams, a
//! densely-sampled blur oracle, ground-truth poses and ground-truth flow —
//! the reference data every estimation stage is judged against.

mod corpus;
mod track;

pub use corpus::{
    generate_corpus, list_sequences, load_sequence_meta, CorpusConfig, SequenceMeta, SPLIT_NAMES,
};
pub use track::Track;

use crate::error::{ensure, Result};
use crate::event::{Event, EventStream};
use crate::flow::FlowField;
use crate::img::Image;
use crate::pose::{Pose, KEYPOINT_COUNT, SKELETON_EDGES};

const MODULE: &str = "sim";

/// Intensities below this are clamped before taking logs, mirroring a real
/// sensor's dark-current floor.
pub const LOG_INTENSITY_FLOOR: f64 = 0.01;

/// Width in pixels of the anti-aliased soft edge around each capsule.
const AA_WIDTH: f64 = 1.0;

/// An articulated 14-joint stick figure. The neck (joint 1) follows the root
/// tracks; every bone has an absolute world-frame angle track, so constant
/// angles plus a linear root track yield exact rigid translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    /// Neck position over time (x, y).
    pub root: [Track; 2],
    /// One absolute angle track (radians) per bone, ordered like
    /// [`SKELETON_EDGES`]; angle 0 points toward +x, pi/2 toward +y (down).
    pub bone_angles: Vec<Track>,
    /// Bone lengths in pixels, ordered like [`SKELETON_EDGES`].
    pub bone_lengths: [f64; SKELETON_EDGES.len()],
    /// Half-thickness of each rendered limb, in pixels.
    pub limb_radius: f64,
    /// Flat rendering intensity of the figure, in [0, 1].
    pub intensity: f64,
}

impl Figure {
    /// Forward kinematics at time `t`.
    pub fn joints_at(&self, t: f64) -> [[f64; 2]; KEYPOINT_COUNT] {
        let mut joints = [[0.0; 2]; KEYPOINT_COUNT];
        joints[1] = [self.root[0].at(t), self.root[1].at(t)];
        for (bone, &(parent, child)) in SKELETON_EDGES.iter().enumerate() {
            let angle = self.bone_angles[bone].at(t);
            let len = self.bone_lengths[bone];
            joints[child] = [
                joints[parent][0] + len * angle.cos(),
                joints[parent][1] + len * angle.sin(),
            ];
        }
        joints
    }
}

/// A renderable moving object.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Figure(Figure),
    /// A single free capsule (a bar when the radius is small relative to its
    /// length); useful for motion oracles with known geometry.
    Capsule {
        /// Endpoint tracks: `ends[i]` is (x, y) of endpoint `i`.
        ends: [[Track; 2]; 2],
        radius: f64,
        intensity: f64,
    },
}

/// A complete animated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub resolution: (usize, usize),
    /// Animation length in seconds.
    pub duration: f64,
    /// Uniform background intensity in [0, 1].
    pub background: f64,
    /// Log-intensity step that triggers one event.
    pub contrast_threshold: f64,
    /// Sampling step (seconds) of the event-emission time grid.
    pub emission_dt: f64,
    pub bodies: Vec<Body>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.resolution.0 > 0 && self.resolution.1 > 0,
            MODULE,
            "scene resolution {}x{} must be positive",
            self.resolution.0,
            self.resolution.1
        );
        ensure!(
            self.duration > 0.0 && self.duration.is_finite(),
            MODULE,
            "scene duration must be positive, got {}",
            self.duration
        );
        ensure!(
            (0.0..=1.0).contains(&self.background),
            MODULE,
            "background intensity must be in [0, 1], got {}",
            self.background
        );
        ensure!(
            self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite(),
            MODULE,
            "contrast_threshold must be positive, got {}",
            self.contrast_threshold
        );
        ensure!(
            self.emission_dt > 0.0 && self.emission_dt.is_finite(),
            MODULE,
            "emission_dt must be positive, got {}",
            self.emission_dt
        );
        for (i, body) in self.bodies.iter().enumerate() {
            let (radius, intensity) = match body {
                Body::Figure(f) => {
                    ensure!(
                        f.bone_angles.len() == SKELETON_EDGES.len(),
                        MODULE,
                        "body {i}: figure needs {} bone angle tracks, got {}",
                        SKELETON_EDGES.len(),
                        f.bone_angles.len()
                    );
                    ensure!(
                        f.bone_lengths.iter().all(|&l| l > 0.0 && l.is_finite()),
                        MODULE,
                        "body {i}: bone lengths must be positive"
                    );
                    (f.limb_radius, f.intensity)
                }
                Body::Capsule {
                    radius, intensity, ..
                } => (*radius, *intensity),
            };
            ensure!(
                radius > 0.0 && radius.is_finite(),
                MODULE,
                "body {i}: radius must be positive, got {radius}"
            );
            ensure!(
                (0.0..=1.0).contains(&intensity),
                MODULE,
                "body {i}: intensity must be in [0, 1], got {intensity}"
            );
        }
        Ok(())
    }
}

/// One concrete capsule at one instant, with a conservative pixel bounding
/// box outside of which its coverage is exactly zero.
#[derive(Debug, Clone)]
struct CapsuleShape {
    p0: [f64; 2],
    p1: [f64; 2],
    radius: f64,
    intensity: f64,
    bbox: [f64; 4], // x_min, y_min, x_max, y_max
}

impl CapsuleShape {
    fn new(p0: [f64; 2], p1: [f64; 2], radius: f64, intensity: f64) -> Self {
        let reach = radius + AA_WIDTH;
        CapsuleShape {
            p0,
            p1,
            radius,
            intensity,
            bbox: [
                p0[0].min(p1[0]) - reach,
                p0[1].min(p1[1]) - reach,
                p0[0].max(p1[0]) + reach,
                p0[1].max(p1[1]) + reach,
            ],
        }
    }

    /// Anti-aliased coverage in [0, 1] at a pixel center.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        if x < self.bbox[0] || y < self.bbox[1] || x > self.bbox[2] || y > self.bbox[3] {
            return 0.0;
        }
        let dx = self.p1[0] - self.p0[0];
        let dy = self.p1[1] - self.p0[1];
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq == 0.0 {
            0.0
        } else {
            (((x - self.p0[0]) * dx + (y - self.p0[1]) * dy) / len_sq).clamp(0.0, 1.0)
        };
        let px = self.p0[0] + t * dx;
        let py = self.p0[1] + t * dy;
        let dist = ((x - px) * (x - px) + (y - py) * (y - py)).sqrt();
        let signed = dist - self.radius;
        (0.5 - signed / AA_WIDTH).clamp(0.0, 1.0)
    }
}

/// Capsules of one body at time `t`, in compositing order.
fn body_capsules(body: &Body, t: f64, out: &mut Vec<CapsuleShape>) {
    match body {
        Body::Figure(figure) => {
            let joints = figure.joints_at(t);
            for &(parent, child) in SKELETON_EDGES.iter() {
                out.push(CapsuleShape::new(
                    joints[parent],
                    joints[child],
                    figure.limb_radius,
                    figure.intensity,
                ));
            }
        }
        Body::Capsule {
            ends,
            radius,
            intensity,
        } => {
            out.push(CapsuleShape::new(
                [ends[0][0].at(t), ends[0][1].at(t)],
                [ends[1][0].at(t), ends[1][1].at(t)],
                *radius,
                *intensity,
            ));
        }
    }
}

/// All capsules of the scene at time `t`, in compositing order.
fn capsules_at(scene: &Scene, t: f64) -> Vec<CapsuleShape> {
    let mut caps = Vec::new();
    for body in &scene.bodies {
        body_capsules(body, t, &mut caps);
    }
    caps
}

/// Intensity at one pixel center: background composited under each capsule in
/// order. Event sampling and frame rendering share this function, so the two
/// outputs are bit-identical views of the same scene.
fn intensity_at(caps: &[CapsuleShape], background: f64, x: f64, y: f64) -> f64 {
    let mut value = background;
    for cap in caps {
        let cov = cap.coverage(x, y);
        if cov > 0.0 {
            value = value * (1.0 - cov) + cap.intensity * cov;
        }
    }
    value
}

fn log_intensity(value: f64) -> f64 {
    value.max(LOG_INTENSITY_FLOOR).ln()
}

/// Renders the scene at time `t` as an anti-aliased grayscale image.
pub fn render_sharp(scene: &Scene, t: f64) -> Result<Image> {
    scene.validate()?;
    ensure!(
        (0.0..=scene.duration).contains(&t),
        MODULE,
        "render time {t} outside scene duration [0, {}]",
        scene.duration
    );
    let (w, h) = scene.resolution;
    let caps = capsules_at(scene, t);
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = intensity_at(&caps, scene.background, x as f64, y as f64);
        }
    }
    Image::from_data(w, h, 1, data)
}

/// Mean of `n_samples` sharp renders at midpoint-rule times spanning
/// `[t_center - exposure/2, t_center + exposure/2]`: the dense temporal
/// ground truth that discrete blur synthesis is compared against. A static
/// scene reproduces `render_sharp(t_center)` exactly; `n_samples = 1` samples
/// exactly at `t_center`.
pub fn oracle_blur(scene: &Scene, t_center: f64, exposure: f64, n_samples: usize) -> Result<Image> {
    scene.validate()?;
    ensure!(
        n_samples >= 1,
        MODULE,
        "oracle blur needs at least one sample"
    );
    ensure!(
        exposure >= 0.0 && exposure.is_finite(),
        MODULE,
        "exposure must be non-negative, got {exposure}"
    );
    let t_lo = t_center - exposure / 2.0;
    ensure!(
        t_lo >= 0.0 && t_center + exposure / 2.0 <= scene.duration,
        MODULE,
        "exposure window [{t_lo}, {}] outside scene duration [0, {}]",
        t_center + exposure / 2.0,
        scene.duration
    );
    let (w, h) = scene.resolution;
    // Running mean: update by (x - m) / k so a static scene (all samples
    // identical) reproduces the sharp render bit-for-bit.
    let mut mean = vec![0.0_f64; w * h];
    for i in 0..n_samples {
        let t = t_lo + (i as f64 + 0.5) * exposure / n_samples as f64;
        let frame = render_sharp(scene, t)?;
        let k = (i + 1) as f64;
        for (m, v) in mean.iter_mut().zip(frame.data()) {
            *m += (v - *m) / k;
        }
    }
    Image::from_data(w, h, 1, mean)
}

/// Ground-truth poses of every figure at time `t`. The instance center is the
/// mean of the 14 joints; all joints are visible; the score is 1.
pub fn poses_at(scene: &Scene, t: f64) -> Vec<Pose> {
    scene
        .bodies
        .iter()
        .filter_map(|body| match body {
            Body::Figure(figure) => {
                let joints = figure.joints_at(t);
                let mut cx = 0.0;
                let mut cy = 0.0;
                for j in &joints {
                    cx += j[0];
                    cy += j[1];
                }
                let n = KEYPOINT_COUNT as f64;
                let mut pose = Pose::new([cx / n, cy / n], joints);
                pose.score = 1.0;
                Some(pose)
            }
            Body::Capsule { .. } => None,
        })
        .collect()
}

/// Reference displacement of a body between two times: the motion of its
/// anchor point (figure root, or first capsule endpoint). Exact per-pixel
/// flow for rigidly translating bodies.
fn body_displacement(body: &Body, t_from: f64, t_to: f64) -> (f64, f64) {
    match body {
        Body::Figure(figure) => (
            figure.root[0].at(t_to) - figure.root[0].at(t_from),
            figure.root[1].at(t_to) - figure.root[1].at(t_from),
        ),
        Body::Capsule { ends, .. } => (
            ends[0][0].at(t_to) - ends[0][0].at(t_from),
            ends[0][1].at(t_to) - ends[0][1].at(t_from),
        ),
    }
}

/// Ground-truth displacement field from `t_from` to `t_to`: pixels within
/// `dilation_px` of a body's support at `t_from` carry that body's anchor
/// displacement (topmost body wins), remaining background pixels carry zero.
/// All pixels are valid. Exact for rigidly translating bodies, which is what
/// the motion oracles use.
pub fn ground_truth_flow(
    scene: &Scene,
    t_from: f64,
    t_to: f64,
    dilation_px: f64,
) -> Result<FlowField> {
    scene.validate()?;
    ensure!(
        (0.0..=scene.duration).contains(&t_from) && (0.0..=scene.duration).contains(&t_to),
        MODULE,
        "flow window [{t_from}, {t_to}] outside scene duration [0, {}]",
        scene.duration
    );
    ensure!(
        dilation_px >= 0.0 && dilation_px.is_finite(),
        MODULE,
        "dilation must be non-negative, got {dilation_px}"
    );
    let (w, h) = scene.resolution;
    let mut field = FlowField::zeros(w, h)?;
    // Coverage is evaluated per body so overlap resolves to the topmost one.
    // Dilation enlarges each capsule radius, which is an exact Euclidean
    // dilation of the body's support.
    let per_body: Vec<(Vec<CapsuleShape>, (f64, f64))> = scene
        .bodies
        .iter()
        .map(|body| {
            let mut caps = Vec::new();
            body_capsules(body, t_from, &mut caps);
            for cap in &mut caps {
                *cap = CapsuleShape::new(cap.p0, cap.p1, cap.radius + dilation_px, cap.intensity);
            }
            (caps, body_displacement(body, t_from, t_to))
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut disp = (0.0, 0.0);
            for (caps, body_disp) in &per_body {
                let covered = caps
                    .iter()
                    .any(|c| c.coverage(x as f64, y as f64) >= 0.5);
                if covered {
                    disp = *body_disp;
                }
            }
            field.set(x, y, disp.0, disp.1, true);
        }
    }
    Ok(field)
}

/// Ground-truth flow stack for blur synthesis around `t_ref`: one field per
/// slice index `-n_e..=n_e`, where field `t` maps reference pixels to their
/// position at `t_ref + t * delta_tau`. The center field is identically zero.
pub fn ground_truth_flows(
    scene: &Scene,
    t_ref: f64,
    delta_tau: f64,
    n_e: usize,
) -> Result<Vec<FlowField>> {
    ensure!(n_e > 0, MODULE, "n_e must be positive");
    ensure!(
        delta_tau > 0.0 && delta_tau.is_finite(),
        MODULE,
        "delta_tau must be positive, got {delta_tau}"
    );
    let n = n_e as i64;
    // Dilate every field's support by the largest body displacement in the
    // stack (plus a safety margin). A blur reconstructed by forward-warping
    // needs the flow to extend past the moving silhouette: pixels a body is
    // about to vacate must carry its motion so the neighbourhood slides in
    // behind it, otherwise the vacated pixels turn into coverage holes and
    // the reconstruction keeps the foreground value where the true blur
    // blends in background. Block-wise estimators have the same behaviour,
    // as one block velocity covers the full block around an edge.
    let mut max_disp = 0.0_f64;
    for body in &scene.bodies {
        for idx in -n..=n {
            let (dx, dy) = body_displacement(body, t_ref, t_ref + idx as f64 * delta_tau);
            max_disp = max_disp.max(dx.hypot(dy));
        }
    }
    let dilation = max_disp + 2.0;
    let mut flows = Vec::with_capacity(2 * n_e + 1);
    for idx in -n..=n {
        flows.push(ground_truth_flow(
            scene,
            t_ref,
            t_ref + idx as f64 * delta_tau,
            dilation,
        )?);
    }
    Ok(flows)
}

/// Simulates a threshold-crossing event sensor over `[t0, t1]`.
///
/// Per pixel, log intensity is sampled on a uniform grid no coarser than
/// `scene.emission_dt`; each crossing of the per-pixel reference level by
/// `contrast_threshold` emits one event at the linearly interpolated crossing
/// time and moves the reference by one step. Pixels far from every moving
/// body are skipped wholesale, which leaves static scenes eventless.
pub fn emit_events(scene: &Scene, t0: f64, t1: f64) -> Result<EventStream> {
    scene.validate()?;
    ensure!(
        t0 < t1,
        MODULE,
        "event window start {t0} must precede end {t1}"
    );
    ensure!(
        t0 >= 0.0 && t1 <= scene.duration,
        MODULE,
        "event window [{t0}, {t1}] outside scene duration [0, {}]",
        scene.duration
    );
    let (w, h) = scene.resolution;
    let steps = ((t1 - t0) / scene.emission_dt).ceil().max(1.0) as usize;

    // Reference and last-seen log intensity start from the first sample.
    let caps0 = capsules_at(scene, t0);
    let mut last_log = vec![0.0_f64; w * h];
    for y in 0..h {
        for x in 0..w {
            last_log[y * w + x] =
                log_intensity(intensity_at(&caps0, scene.background, x as f64, y as f64));
        }
    }
    let mut reference = last_log.clone();

    let c = scene.contrast_threshold;
    let mut events: Vec<Event> = Vec::new();
    let mut caps_prev = caps0;
    for step in 1..=steps {
        let t_a = t0 + (t1 - t0) * (step - 1) as f64 / steps as f64;
        let t_b = t0 + (t1 - t0) * step as f64 / steps as f64;
        let caps_next = capsules_at(scene, t_b);

        // Pixels whose intensity can change in this interval lie inside the
        // union of the capsule boxes at both ends (the boxes already carry
        // the anti-aliasing reach; one extra pixel absorbs mid-step motion).
        let mut x_min = f64::INFINITY;
        let mut y_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for cap in caps_prev.iter().chain(caps_next.iter()) {
            x_min = x_min.min(cap.bbox[0]);
            y_min = y_min.min(cap.bbox[1]);
            x_max = x_max.max(cap.bbox[2]);
            y_max = y_max.max(cap.bbox[3]);
        }
        if x_max >= x_min {
            let x_lo = (x_min - 1.0).floor().max(0.0) as usize;
            let y_lo = (y_min - 1.0).floor().max(0.0) as usize;
            let x_hi = ((x_max + 1.0).ceil() as usize).min(w.saturating_sub(1));
            let y_hi = ((y_max + 1.0).ceil() as usize).min(h.saturating_sub(1));
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let i = y * w + x;
                    let l_a = last_log[i];
                    let l_b = log_intensity(intensity_at(
                        &caps_next,
                        scene.background,
                        x as f64,
                        y as f64,
                    ));
                    let mut r = reference[i];
                    if l_b > l_a {
                        while l_b >= r + c {
                            let frac = (r + c - l_a) / (l_b - l_a);
                            let t_cross = t_a + frac * (t_b - t_a);
                            events.push(Event {
                                t: (t_cross * 1e6).round() as i64,
                                x: x as u16,
                                y: y as u16,
                                polarity: 1,
                            });
                            r += c;
                        }
                    } else if l_b < l_a {
                        while l_b <= r - c {
                            let frac = (r - c - l_a) / (l_b - l_a);
                            let t_cross = t_a + frac * (t_b - t_a);
                            events.push(Event {
                                t: (t_cross * 1e6).round() as i64,
                                x: x as u16,
                                y: y as u16,
                                polarity: -1,
                            });
                            r -= c;
                        }
                    }
                    reference[i] = r;
                    last_log[i] = l_b;
                }
            }
        }
        caps_prev = caps_next;
    }
    EventStream::new(w, h, events)
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;

    /// A rigidly translating single-capsule scene, the workhorse oracle
    /// geometry: known velocity, crisp edges in both axes.
    pub(crate) fn translating_bar_scene(velocity_px_per_s: (f64, f64)) -> Scene {
        let duration = 0.04;
        let travel = (
            velocity_px_per_s.0 * duration,
            velocity_px_per_s.1 * duration,
        );
        let bar = Body::Capsule {
            ends: [
                [
                    Track::linear(18.0, 18.0 + travel.0, duration).unwrap(),
                    Track::linear(18.0, 18.0 + travel.1, duration).unwrap(),
                ],
                [
                    Track::linear(30.0, 30.0 + travel.0, duration).unwrap(),
                    Track::linear(40.0, 40.0 + travel.1, duration).unwrap(),
                ],
            ],
            radius: 2.0,
            intensity: 0.85,
        };
        Scene {
            resolution: (64, 64),
            duration,
            background: 0.12,
            contrast_threshold: 0.25,
            emission_dt: 0.000125,
            bodies: vec![bar],
        }
    }

    /// A figure standing still: every track constant.
    pub(crate) fn static_figure_scene() -> Scene {
        let figure = corpus::testkit_base_figure([32.0, 28.0], 0.8, 1.0);
        Scene {
            resolution: (64, 64),
            duration: 1.0,
            background: 0.12,
            contrast_threshold: 0.25,
            emission_dt: 0.00025,
            bodies: vec![Body::Figure(figure)],
        }
    }
}
