//! Block-wise optical flow from events via contrast maximization.
//!
//! Events produced by a moving edge trace a slanted line through space-time.
//! Warping each event back along a candidate velocity and accumulating the
//! result collapses that trace into a sharp structure exactly when the
//! candidate matches the true motion, which maximizes the variance
//! ("contrast") of the accumulated image. We search integer velocities
//! exhaustively per block and refine each axis with a golden-section search.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::event::{AccumMode, Event, EventCountImage, EventSlice};
use crate::tensor::Tensor;

const MODULE: &str = "flow";

/// Dense per-pixel flow with a validity flag. Estimation writes one velocity
/// per block, replicated to every pixel of the block; pixels without enough
/// event support are invalid and carry zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    /// All-zero, all-invalid field.
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        ensure!(
            width > 0 && height > 0,
            MODULE,
            "flow field resolution {width}x{height} must be positive"
        );
        Ok(FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
            valid: vec![false; width * height],
        })
    }

    /// Uniform velocity everywhere, fully valid.
    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Result<Self> {
        ensure!(
            u.is_finite() && v.is_finite(),
            MODULE,
            "flow components must be finite, got ({u}, {v})"
        );
        let mut field = FlowField::zeros(width, height)?;
        field.u.fill(u);
        field.v.fill(v);
        field.valid.fill(true);
        Ok(field)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u_at(&self, x: usize, y: usize) -> f64 {
        self.u[y * self.width + x]
    }

    pub fn v_at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// True when every pixel carries zero displacement.
    pub fn is_zero(&self) -> bool {
        self.u.iter().all(|&c| c == 0.0) && self.v.iter().all(|&c| c == 0.0)
    }

    /// Flips the sign of every valid pixel's displacement.
    pub fn negate(&mut self) {
        for c in &mut self.u {
            *c = -*c;
        }
        for c in &mut self.v {
            *c = -*c;
        }
    }

    /// Writes one pixel. Marking a pixel invalid zeroes its displacement so
    /// the "invalid means no motion" invariant always holds.
    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64, valid: bool) {
        let i = y * self.width + x;
        if valid {
            self.u[i] = u;
            self.v[i] = v;
        } else {
            self.u[i] = 0.0;
            self.v[i] = 0.0;
        }
        self.valid[i] = valid;
    }

    fn set_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, u: f64, v: f64) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, u, v, true);
            }
        }
    }

    /// Packs the field as a rank-3 tensor `[3, H, W]` holding the u plane,
    /// the v plane, and the validity plane (0/1).
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.width * self.height);
        data.extend_from_slice(&self.u);
        data.extend_from_slice(&self.v);
        data.extend(self.valid.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        Tensor::from_vec(&[3, self.height, self.width], data)
            .expect("flow tensor dimensions are consistent by construction")
    }

    /// Inverse of [`FlowField::to_tensor`]. Rejects tensors whose validity
    /// plane is not 0/1 or whose invalid pixels carry nonzero displacement.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let dims = tensor.dims();
        ensure!(
            dims.len() == 3 && dims[0] == 3,
            MODULE,
            "flow tensor must have shape [3, H, W], got {dims:?}"
        );
        let (height, width) = (dims[1], dims[2]);
        let plane = width * height;
        let data = tensor.data();
        let mut field = FlowField::zeros(width, height)?;
        for i in 0..plane {
            let flag = data[2 * plane + i];
            ensure!(
                flag == 0.0 || flag == 1.0,
                MODULE,
                "validity plane must be 0 or 1, got {flag} at index {i}"
            );
            let (u, v) = (data[i], data[plane + i]);
            if flag == 0.0 {
                ensure!(
                    u == 0.0 && v == 0.0,
                    MODULE,
                    "invalid pixel {i} must carry zero flow, got ({u}, {v})"
                );
            }
            field.u[i] = u;
            field.v[i] = v;
            field.valid[i] = flag == 1.0;
        }
        Ok(field)
    }
}

/// Tuning knobs for block-wise estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowParams {
    /// Side of a square estimation block, in pixels.
    pub block_size: usize,
    /// Maximum integer displacement searched per axis, in pixels.
    pub search_radius: i32,
    /// Golden-section iterations per axis after the grid search.
    pub refine_steps: usize,
    /// Minimum events a block needs to produce a valid estimate.
    pub min_events: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            block_size: 16,
            search_radius: 12,
            refine_steps: 20,
            min_events: 8,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.block_size >= 4,
            MODULE,
            "block_size must be at least 4, got {}",
            self.block_size
        );
        ensure!(
            self.search_radius >= 1,
            MODULE,
            "search_radius must be at least 1, got {}",
            self.search_radius
        );
        ensure!(
            self.min_events >= 1,
            MODULE,
            "min_events must be at least 1, got {}",
            self.min_events
        );
        Ok(())
    }
}

/// Normalized event age within its slice window, in [0, 1).
fn alpha(t: i64, t_start: i64, t_end: i64) -> f64 {
    (t - t_start) as f64 / (t_end - t_start) as f64
}

/// Splats events displaced by `-velocity * alpha` into a window whose origin
/// is `(x0, y0)` in sensor coordinates. Mass is the event polarity and is
/// distributed bilinearly; mass falling outside the window is dropped.
fn splat_window(
    events: &[Event],
    t_start: i64,
    t_end: i64,
    velocity: (f64, f64),
    origin: (f64, f64),
    size: (usize, usize),
    out: &mut [f64],
) {
    let (w, h) = size;
    debug_assert_eq!(out.len(), w * h);
    for ev in events {
        let a = alpha(ev.t, t_start, t_end);
        let x = ev.x as f64 - velocity.0 * a - origin.0;
        let y = ev.y as f64 - velocity.1 * a - origin.1;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mass = ev.polarity as f64;
        let (x0, y0) = (x0 as i64, y0 as i64);
        for (dx, dy, weight) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (px, py) = (x0 + dx, y0 + dy);
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                out[py as usize * w + px as usize] += mass * weight;
            }
        }
    }
}

/// Accumulates the slice's events after motion compensation: each event is
/// moved to `(x - vx*alpha, y - vy*alpha)` with `alpha` its normalized age,
/// splatted bilinearly with polarity-signed mass. Velocity `(0, 0)`
/// reproduces plain signed accumulation.
pub fn warp_event_image(slice: &EventSlice, velocity: (f64, f64)) -> Result<EventCountImage> {
    ensure!(
        velocity.0.is_finite() && velocity.1.is_finite(),
        MODULE,
        "velocity must be finite, got ({}, {})",
        velocity.0,
        velocity.1
    );
    let mut img = EventCountImage::zeros(slice.width, slice.height, AccumMode::Signed);
    if slice.is_empty() {
        return Ok(img);
    }
    ensure!(
        slice.duration() != 0,
        MODULE,
        "cannot warp a zero-duration slice holding {} events",
        slice.len()
    );
    let (w, h) = (slice.width, slice.height);
    splat_window(
        slice.events,
        slice.t_start,
        slice.t_end,
        velocity,
        (0.0, 0.0),
        (w, h),
        img.data_mut(),
    );
    Ok(img)
}

fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Sharpness score of an event image: the population variance of its signed
/// per-pixel values.
pub fn contrast(image: &EventCountImage) -> f64 {
    match image.mode {
        AccumMode::Signed => population_variance(image.data()),
        AccumMode::Split => population_variance(&image.to_signed_vec()),
    }
}

/// One block's candidate evaluation state.
struct BlockEval<'a> {
    events: &'a [Event],
    t_start: i64,
    t_end: i64,
    /// Window origin in sensor coordinates (block minus padding).
    origin: (f64, f64),
    size: (usize, usize),
    scratch: Vec<f64>,
}

impl BlockEval<'_> {
    fn contrast_at(&mut self, vx: f64, vy: f64) -> f64 {
        self.scratch.fill(0.0);
        splat_window(
            self.events,
            self.t_start,
            self.t_end,
            (vx, vy),
            self.origin,
            self.size,
            &mut self.scratch,
        );
        population_variance(&self.scratch)
    }
}

/// Golden-section maximization of `f` on `[lo, hi]`; returns the midpoint of
/// the final bracket and its score. Ties keep the left sub-interval, so the
/// result is deterministic.
fn golden_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, steps: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..steps {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    (x, fx)
}

/// Estimates block-constant flow for one slice by contrast maximization.
///
/// Each `block_size` square with at least `min_events` events receives the
/// integer velocity in `[-search_radius, search_radius]^2` that maximizes the
/// contrast of its motion-compensated event image (ties prefer the smaller
/// displacement), refined per axis by golden-section search within one grid
/// step. Backward slices (direction -1) report the displacement needed to
/// reach their window, i.e. the negated scene velocity. Velocities are in
/// pixels per slice duration.
pub fn estimate_flow(slice: &EventSlice, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    let mut field = FlowField::zeros(slice.width, slice.height)?;
    if slice.is_empty() {
        return Ok(field);
    }
    ensure!(
        slice.duration() != 0,
        MODULE,
        "cannot estimate flow on a zero-duration slice holding {} events",
        slice.len()
    );

    // Partition events by block. Events are sparse, so a bucket pass beats
    // per-block range scans.
    let bs = params.block_size;
    let blocks_x = slice.width.div_ceil(bs);
    let blocks_y = slice.height.div_ceil(bs);
    let mut buckets: Vec<Vec<Event>> = vec![Vec::new(); blocks_x * blocks_y];
    for ev in slice.events {
        let bx = ev.x as usize / bs;
        let by = ev.y as usize / bs;
        buckets[by * blocks_x + bx].push(*ev);
    }

    let estimates: Vec<Option<(f64, f64)>> = buckets
        .par_iter()
        .map(|events| {
            if events.len() < params.min_events {
                return None;
            }
            Some(estimate_block(
                events,
                slice.t_start,
                slice.t_end,
                params,
                bs,
            ))
        })
        .collect();

    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            if let Some((mut u, mut v)) = estimates[by * blocks_x + bx] {
                if slice.direction < 0 {
                    u = -u;
                    v = -v;
                }
                let x0 = bx * bs;
                let y0 = by * bs;
                field.set_rect(
                    x0,
                    y0,
                    (x0 + bs).min(slice.width),
                    (y0 + bs).min(slice.height),
                    u,
                    v,
                );
            }
        }
    }
    Ok(field)
}

fn estimate_block(
    events: &[Event],
    t_start: i64,
    t_end: i64,
    params: &FlowParams,
    block_size: usize,
) -> (f64, f64) {
    let radius = params.search_radius;
    // Pad the evaluation window so no searched velocity (grid radius plus one
    // refinement step) pushes mass outside it; clipping would bias contrast.
    let pad = radius as usize + 2;
    let min_x = events.iter().map(|e| e.x).min().unwrap() as usize;
    let min_y = events.iter().map(|e| e.y).min().unwrap() as usize;
    let base_x = (min_x / block_size) * block_size;
    let base_y = (min_y / block_size) * block_size;
    let mut eval = BlockEval {
        events,
        t_start,
        t_end,
        origin: (base_x as f64 - pad as f64, base_y as f64 - pad as f64),
        size: (block_size + 2 * pad, block_size + 2 * pad),
        scratch: vec![0.0; (block_size + 2 * pad) * (block_size + 2 * pad)],
    };

    let mut best = (0.0_f64, 0.0_f64);
    let mut best_score = f64::NEG_INFINITY;
    for vy in -radius..=radius {
        for vx in -radius..=radius {
            let (vx, vy) = (vx as f64, vy as f64);
            let score = eval.contrast_at(vx, vy);
            let better = score > best_score
                || (score == best_score && {
                    let (nb, ob) = (vx * vx + vy * vy, best.0 * best.0 + best.1 * best.1);
                    nb < ob || (nb == ob && (vx, vy) < best)
                });
            if better {
                best = (vx, vy);
                best_score = score;
            }
        }
    }

    if params.refine_steps > 0 {
        let (x, score) = golden_max(
            |vx| eval.contrast_at(vx, best.1),
            best.0 - 1.0,
            best.0 + 1.0,
            params.refine_steps,
        );
        if score > best_score {
            best.0 = x;
            best_score = score;
        }
        let (y, score) = golden_max(
            |vy| eval.contrast_at(best.0, vy),
            best.1 - 1.0,
            best.1 + 1.0,
            params.refine_steps,
        );
        if score > best_score {
            best.1 = y;
        }
    }
    best
}


#[cfg(test)]
mod tests {
    use super::testkit::translating_dots;
    use super::*;
    use crate::event::{accumulate, slice_events, EventStream};

    fn ev(t: i64, x: u16, y: u16, polarity: i8) -> Event {
        Event { t, x, y, polarity }
    }

    fn slice_of(stream: &EventStream, t_start: i64, t_end: i64, direction: i8) -> EventSlice<'_> {
        let lo = stream.events().partition_point(|e| e.t < t_start);
        let hi = stream.events().partition_point(|e| e.t < t_end);
        EventSlice {
            t_start,
            t_end,
            direction,
            width: stream.width(),
            height: stream.height(),
            events: &stream.events()[lo..hi],
        }
    }

    #[test]
    fn zero_velocity_warp_matches_plain_accumulation() {
        let stream = EventStream::new(
            16,
            12,
            vec![ev(0, 3, 4, 1), ev(250, 3, 4, -1), ev(500, 9, 9, 1), ev(999, 15, 0, 1)],
        )
        .unwrap();
        let slice = slice_of(&stream, 0, 1000, 1);
        let warped = warp_event_image(&slice, (0.0, 0.0)).unwrap();
        let plain = accumulate(&slice, (16, 12), AccumMode::Signed).unwrap();
        assert_eq!(warped.data(), plain.data());
    }

    #[test]
    fn single_event_mass_is_conserved_over_four_pixels() {
        let stream = EventStream::new(16, 16, vec![ev(500, 8, 8, 1)]).unwrap();
        let slice = slice_of(&stream, 0, 1000, 1);
        let warped = warp_event_image(&slice, (1.5, 0.9)).unwrap();
        let total: f64 = warped.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let nonzero = warped.data().iter().filter(|&&m| m != 0.0).count();
        assert!(nonzero <= 4 && nonzero >= 1);
    }

    #[test]
    fn zero_duration_slice_is_rejected() {
        let stream = EventStream::new(8, 8, vec![ev(100, 1, 1, 1)]).unwrap();
        let mut slice = slice_of(&stream, 100, 101, 1);
        slice.t_end = slice.t_start;
        let err = warp_event_image(&slice, (0.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("zero-duration"));
    }

    #[test]
    fn contrast_closed_form_for_single_pixel() {
        let mut img = EventCountImage::zeros(5, 4, AccumMode::Signed);
        img.data_mut()[7] = 3.0;
        let n = 20.0_f64;
        let expected = (n - 1.0) * 9.0 / (n * n);
        assert!((contrast(&img) - expected).abs() < 1e-12);

        let zero = EventCountImage::zeros(5, 4, AccumMode::Signed);
        assert_eq!(contrast(&zero), 0.0);
    }

    #[test]
    fn true_velocity_warp_scores_higher_contrast() {
        let dots: Vec<(f64, f64)> = (0..12)
            .map(|i| (6.0 + (i * 7 % 20) as f64, 6.0 + (i * 11 % 20) as f64))
            .collect();
        let stream = translating_dots(&dots, (6.0, 0.0), (40, 40), 1000, 25);
        let slice = slice_of(&stream, 0, 1000, 1);
        let aligned = contrast(&warp_event_image(&slice, (6.0, 0.0)).unwrap());
        let unwarped = contrast(&warp_event_image(&slice, (0.0, 0.0)).unwrap());
        assert!(
            aligned > unwarped,
            "aligned {aligned} should beat unwarped {unwarped}"
        );
    }

    #[test]
    fn empty_slice_gives_all_invalid_zero_field() {
        let stream = EventStream::new(32, 32, vec![]).unwrap();
        let slice = slice_of(&stream, 0, 1000, 1);
        let field = estimate_flow(&slice, &FlowParams::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert!(!field.is_valid(x, y));
                assert_eq!(field.u_at(x, y), 0.0);
                assert_eq!(field.v_at(x, y), 0.0);
            }
        }
    }

    #[test]
    fn recovers_known_translation_within_ten_percent() {
        let dots: Vec<(f64, f64)> = (0..25)
            .map(|i| {
                (
                    8.0 + (i * 13 % 17) as f64,
                    8.0 + (i * 7 % 17) as f64,
                )
            })
            .collect();
        let stream = translating_dots(&dots, (5.0, 0.0), (32, 32), 1000, 30);
        let slice = slice_of(&stream, 0, 1000, 1);
        let params = FlowParams {
            block_size: 32,
            search_radius: 8,
            refine_steps: 20,
            min_events: 8,
        };
        let field = estimate_flow(&slice, &params).unwrap();
        assert!(field.is_valid(16, 16));
        let (u, v) = (field.u_at(16, 16), field.v_at(16, 16));
        assert!((u - 5.0).abs() <= 0.5, "u = {u}");
        assert!(v.abs() <= 0.5, "v = {v}");
    }

    #[test]
    fn backward_slice_negates_the_estimate() {
        let dots: Vec<(f64, f64)> = (0..25)
            .map(|i| (8.0 + (i * 13 % 17) as f64, 8.0 + (i * 7 % 17) as f64))
            .collect();
        let stream = translating_dots(&dots, (4.0, 2.0), (32, 32), 1000, 30);
        let forward = slice_of(&stream, 0, 1000, 1);
        let mut backward = forward.clone();
        backward.direction = -1;
        let params = FlowParams {
            block_size: 32,
            search_radius: 8,
            refine_steps: 20,
            min_events: 8,
        };
        let f = estimate_flow(&forward, &params).unwrap();
        let b = estimate_flow(&backward, &params).unwrap();
        assert!(f.is_valid(0, 0) && b.is_valid(0, 0));
        assert_eq!(f.u_at(0, 0), -b.u_at(0, 0));
        assert_eq!(f.v_at(0, 0), -b.v_at(0, 0));
        assert!(f.u_at(0, 0) > 0.0);
    }

    #[test]
    fn simultaneous_events_tie_break_to_zero_velocity() {
        // All events at the slice start have age 0; every candidate velocity
        // produces the same image, so the tie must resolve to (0, 0).
        let events: Vec<Event> = (0..20)
            .map(|i| ev(0, 4 + (i * 5 % 24) as u16, 4 + (i * 9 % 24) as u16, 1))
            .collect();
        let stream = EventStream::new(32, 32, events).unwrap();
        let slice = slice_of(&stream, 0, 1000, 1);
        let params = FlowParams {
            block_size: 32,
            search_radius: 5,
            refine_steps: 10,
            min_events: 4,
        };
        let field = estimate_flow(&slice, &params).unwrap();
        assert!(field.is_valid(10, 10));
        assert_eq!(field.u_at(10, 10), 0.0);
        assert_eq!(field.v_at(10, 10), 0.0);
    }

    #[test]
    fn sparse_blocks_are_invalid_while_dense_blocks_are_valid() {
        // Dense cluster in the top-left block, single event elsewhere.
        let mut events: Vec<Event> = (0..30)
            .map(|i| ev(i * 30, (i * 3 % 14) as u16, (i * 5 % 14) as u16, 1))
            .collect();
        events.push(ev(500, 30, 30, 1));
        let stream = EventStream::new(32, 32, events).unwrap();
        let slice = slice_of(&stream, 0, 1000, 1);
        let field = estimate_flow(
            &slice,
            &FlowParams {
                block_size: 16,
                search_radius: 3,
                refine_steps: 5,
                min_events: 8,
            },
        )
        .unwrap();
        assert!(field.is_valid(5, 5));
        assert!(!field.is_valid(30, 30));
        assert_eq!(field.u_at(30, 30), 0.0);
    }

    #[test]
    fn tensor_round_trip_and_invariant_checks() {
        let mut field = FlowField::zeros(6, 4).unwrap();
        field.set_rect(0, 0, 3, 2, 1.5, -2.25);
        let restored = FlowField::from_tensor(&field.to_tensor()).unwrap();
        assert_eq!(restored, field);

        // Invalid pixel with nonzero flow must be rejected.
        let mut tensor = field.to_tensor();
        let plane = 24;
        tensor.data_mut()[plane - 1] = 3.0; // u on an invalid pixel
        assert!(FlowField::from_tensor(&tensor).is_err());

        // Non-binary validity flag must be rejected.
        let mut tensor = field.to_tensor();
        tensor.data_mut()[2 * plane] = 0.5;
        assert!(FlowField::from_tensor(&tensor).is_err());
    }

    #[test]
    fn params_validation_bounds() {
        assert!(FlowParams::default().validate().is_ok());
        let bad = FlowParams {
            block_size: 3,
            ..FlowParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = FlowParams {
            search_radius: 0,
            ..FlowParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = FlowParams {
            min_events: 0,
            ..FlowParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cumulative_slices_share_the_reference_start() {
        // estimate_flow must work on slices produced by slice_events; check a
        // full set from a moving pattern and confirm longer slices see
        // proportionally larger displacement.
        let dots: Vec<(f64, f64)> = (0..25)
            .map(|i| (10.0 + (i * 13 % 13) as f64, 10.0 + (i * 7 % 13) as f64))
            .collect();
        // Timestamps span [0, 4000); use the center as the reference so both
        // directions have content.
        let stream = translating_dots(&dots, (8.0, 0.0), (40, 40), 4000, 80);
        let slices = slice_events(&stream, 2000, 1000, 2).unwrap();
        let params = FlowParams {
            block_size: 40,
            search_radius: 6,
            refine_steps: 20,
            min_events: 8,
        };
        // Slice +2 covers [2000, 4000): the pattern moves 4 px in that window
        // (8 px over the full 4000 us).
        let plus2 = estimate_flow(&slices[4], &params).unwrap();
        assert!(plus2.is_valid(20, 20));
        assert!((plus2.u_at(20, 20) - 4.0).abs() <= 0.5);
        // Slice -2 covers [0, 2000) with direction -1: same 4 px of scene
        // motion, reported negated.
        let minus2 = estimate_flow(&slices[0], &params).unwrap();
        assert!(minus2.is_valid(20, 20));
        assert!((minus2.u_at(20, 20) + 4.0).abs() <= 0.5);
    }
}
