//! Motion-aware blur synthesis and geometric augmentation.
//!
//! A sharp reference image is forward-warped along one flow field per time
//! slice; the blur is the per-pixel average of the warped frames, where
//! frames that left a hole at a pixel simply drop out of that pixel's
//! average. Geometric augmentation applies one sampled similarity transform
//! (rotation, flip, scale, translation) identically to an image and its pose
//! annotations.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::flow::FlowField;
use crate::img::Image;
use crate::pose::{sample_bilinear, Pose, FLIP_PAIRS};

const MODULE: &str = "blur";

/// Minimum accumulated splat weight for a forward-warped pixel to count as
/// covered; below this the pixel is a hole.
pub const COVERAGE_FLOOR: f64 = 0.25;

/// Default denominator guard for the blur average.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// A forward-warped image plus the per-pixel coverage flag.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFrame {
    pub image: Image,
    /// Row-major `width * height`; `false` marks a hole (no source coverage).
    hole_mask: Vec<bool>,
}

impl WarpedFrame {
    /// True where the warp deposited enough source mass.
    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        self.hole_mask[y * self.image.width() + x]
    }

    pub fn coverage(&self) -> &[bool] {
        &self.hole_mask
    }
}

/// Result of blur synthesis, carrying its inputs for provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurSample {
    pub blur: Image,
    pub source_sharp: Image,
    pub flows_used: usize,
    pub epsilon: f64,
}

/// What to write at pixels no warped frame covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HoleFill {
    /// Leave the literal average, which is 0 there.
    #[default]
    None,
    /// Fall back to the sharp reference value.
    Reference,
}

/// Splats every source pixel to `(x + u, y + v)` with bilinear weights, then
/// normalizes by accumulated weight. Pixels whose accumulated weight stays
/// below [`COVERAGE_FLOOR`] become holes: zero intensity, coverage false.
pub fn forward_warp(sharp: &Image, flow: &FlowField) -> Result<WarpedFrame> {
    ensure!(
        sharp.width() == flow.width() && sharp.height() == flow.height(),
        MODULE,
        "image {}x{} vs flow field {}x{}",
        sharp.width(),
        sharp.height(),
        flow.width(),
        flow.height()
    );
    let (w, h, ch) = (sharp.width(), sharp.height(), sharp.channels());
    let mut weight = vec![0.0_f64; w * h];
    let mut intensity = vec![0.0_f64; ch * w * h];
    for y in 0..h {
        for x in 0..w {
            let tx = x as f64 + flow.u_at(x, y);
            let ty = y as f64 + flow.v_at(x, y);
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (px, py) = (x0 + dx, y0 + dy);
                if wgt > 0.0 && px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    let i = py as usize * w + px as usize;
                    weight[i] += wgt;
                    for c in 0..ch {
                        intensity[c * w * h + i] += wgt * sharp.at(c, x, y);
                    }
                }
            }
        }
    }
    let mut out = vec![0.0_f64; ch * w * h];
    let mut hole_mask = vec![false; w * h];
    for i in 0..w * h {
        if weight[i] >= COVERAGE_FLOOR {
            hole_mask[i] = true;
            for c in 0..ch {
                out[c * w * h + i] = intensity[c * w * h + i] / weight[i];
            }
        }
    }
    Ok(WarpedFrame {
        image: Image::from_data(w, h, ch, out)?,
        hole_mask,
    })
}

/// Averages the forward-warped frames of `sharp` under each flow, skipping
/// holes: `blur = sum_t W_t * delta_t / (sum_t delta_t + epsilon)`.
///
/// `flows` must be ordered by slice index from `-N_E` to `N_E`; the center
/// entry is the identity frame and is expected to be all-zero (a violation is
/// logged, not rejected, since the formula stays well defined).
pub fn synthesize_blur(
    sharp: &Image,
    flows: &[FlowField],
    epsilon: f64,
    hole_fill: HoleFill,
) -> Result<BlurSample> {
    ensure!(!flows.is_empty(), MODULE, "empty flow sequence");
    ensure!(
        flows.len() % 2 == 1,
        MODULE,
        "flow sequence must have odd length (slices -N..=N), got {}",
        flows.len()
    );
    ensure!(
        epsilon > 0.0 && epsilon.is_finite(),
        MODULE,
        "epsilon must be a small positive real, got {epsilon}"
    );
    if !flows[flows.len() / 2].is_zero() {
        log::warn!("center flow of the blur stack is not identically zero");
    }
    let (w, h, ch) = (sharp.width(), sharp.height(), sharp.channels());
    let mut numerator = vec![0.0_f64; ch * w * h];
    let mut coverage_count = vec![0.0_f64; w * h];
    for flow in flows {
        let warped = forward_warp(sharp, flow)?;
        for i in 0..w * h {
            if warped.hole_mask[i] {
                coverage_count[i] += 1.0;
                for c in 0..ch {
                    numerator[c * w * h + i] += warped.image.data()[c * w * h + i];
                }
            }
        }
    }
    let mut blur = vec![0.0_f64; ch * w * h];
    for i in 0..w * h {
        if coverage_count[i] == 0.0 && hole_fill == HoleFill::Reference {
            for c in 0..ch {
                blur[c * w * h + i] = sharp.data()[c * w * h + i];
            }
        } else {
            for c in 0..ch {
                blur[c * w * h + i] = numerator[c * w * h + i] / (coverage_count[i] + epsilon);
            }
        }
    }
    Ok(BlurSample {
        blur: Image::from_data(w, h, ch, blur)?,
        source_sharp: sharp.clone(),
        flows_used: flows.len(),
        epsilon,
    })
}

/// Sampling ranges for geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Rotation is drawn uniformly from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
    pub flip_probability: f64,
    /// Scale is drawn uniformly from this inclusive range.
    pub scale_range: (f64, f64),
    /// Per-axis translation is drawn uniformly from `[-max_translation, max_translation]` pixels.
    pub max_translation: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_rotation_deg: 30.0,
            flip_probability: 0.5,
            scale_range: (0.75, 1.5),
            max_translation: 40.0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0,
            MODULE,
            "max_rotation_deg must be finite and non-negative, got {}",
            self.max_rotation_deg
        );
        ensure!(
            (0.0..=1.0).contains(&self.flip_probability),
            MODULE,
            "flip_probability must be in [0, 1], got {}",
            self.flip_probability
        );
        ensure!(
            self.scale_range.0 > 0.0
                && self.scale_range.0 <= self.scale_range.1
                && self.scale_range.1.is_finite(),
            MODULE,
            "scale_range must satisfy 0 < lo <= hi, got ({}, {})",
            self.scale_range.0,
            self.scale_range.1
        );
        ensure!(
            self.max_translation.is_finite() && self.max_translation >= 0.0,
            MODULE,
            "max_translation must be finite and non-negative, got {}",
            self.max_translation
        );
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedAugment {
    pub rotation_deg: f64,
    pub flip: bool,
    pub scale: f64,
    pub translation: (f64, f64),
}

impl AppliedAugment {
    pub fn identity() -> Self {
        AppliedAugment {
            rotation_deg: 0.0,
            flip: false,
            scale: 1.0,
            translation: (0.0, 0.0),
        }
    }
}

/// Draws rotation, flip, scale and translation from `params`.
pub fn sample_augment<R: Rng + ?Sized>(params: &AugmentParams, rng: &mut R) -> AppliedAugment {
    let rotation_deg = if params.max_rotation_deg > 0.0 {
        rng.random_range(-params.max_rotation_deg..=params.max_rotation_deg)
    } else {
        0.0
    };
    let flip = rng.random::<f64>() < params.flip_probability;
    let scale = if params.scale_range.0 < params.scale_range.1 {
        rng.random_range(params.scale_range.0..=params.scale_range.1)
    } else {
        params.scale_range.0
    };
    let translation = if params.max_translation > 0.0 {
        (
            rng.random_range(-params.max_translation..=params.max_translation),
            rng.random_range(-params.max_translation..=params.max_translation),
        )
    } else {
        (0.0, 0.0)
    };
    AppliedAugment {
        rotation_deg,
        flip,
        scale,
        translation,
    }
}

/// Maps a point through rotate -> scale -> flip -> translate, all about the
/// image center.
fn transform_point(p: [f64; 2], aug: &AppliedAugment, width: usize, height: usize) -> [f64; 2] {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (sin, cos) = aug.rotation_deg.to_radians().sin_cos();
    let qx = p[0] - cx;
    let qy = p[1] - cy;
    let rx = (cos * qx - sin * qy) * aug.scale;
    let ry = (sin * qx + cos * qy) * aug.scale;
    let fx = if aug.flip { -rx } else { rx };
    [fx + cx + aug.translation.0, ry + cy + aug.translation.1]
}

/// Inverse of [`transform_point`], used to resample the image.
fn inverse_point(q: [f64; 2], aug: &AppliedAugment, width: usize, height: usize) -> [f64; 2] {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (sin, cos) = aug.rotation_deg.to_radians().sin_cos();
    let gx = q[0] - cx - aug.translation.0;
    let gy = q[1] - cy - aug.translation.1;
    let fx = if aug.flip { -gx } else { gx };
    let sx = fx / aug.scale;
    let sy = gy / aug.scale;
    [cos * sx + sin * sy + cx, -sin * sx + cos * sy + cy]
}

/// Applies one concrete transform to an image and its pose annotations.
/// Keypoint coordinates are mapped through the same transform as pixels; a
/// horizontal flip additionally swaps the left/right keypoint channels.
/// Image content pulled from outside the source frame reads as 0.
pub fn apply_augment(
    image: &Image,
    poses: &[Pose],
    aug: &AppliedAugment,
) -> Result<(Image, Vec<Pose>)> {
    ensure!(
        aug.scale > 0.0 && aug.scale.is_finite(),
        MODULE,
        "augment scale must be positive, got {}",
        aug.scale
    );
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut data = vec![0.0_f64; ch * w * h];
    for y in 0..h {
        for x in 0..w {
            let src = inverse_point([x as f64, y as f64], aug, w, h);
            for c in 0..ch {
                data[c * w * h + y * w + x] =
                    sample_bilinear(image.channel(c), w, h, src[0], src[1]);
            }
        }
    }
    let out_image = Image::from_data(w, h, ch, data)?;

    let out_poses = poses
        .iter()
        .map(|pose| {
            let mut p = pose.clone();
            p.center = transform_point(p.center, aug, w, h);
            for k in &mut p.keypoints {
                *k = transform_point(*k, aug, w, h);
            }
            if aug.flip {
                for (a, b) in FLIP_PAIRS {
                    p.keypoints.swap(a, b);
                    p.visibility.swap(a, b);
                }
            }
            p
        })
        .collect();
    Ok((out_image, out_poses))
}

/// Samples a transform from `params` and applies it; returns the transformed
/// pair along with the draw that produced it.
pub fn geometric_augment<R: Rng + ?Sized>(
    image: &Image,
    poses: &[Pose],
    params: &AugmentParams,
    rng: &mut R,
) -> Result<(Image, Vec<Pose>, AppliedAugment)> {
    params.validate()?;
    let aug = sample_augment(params, rng);
    let (img, out_poses) = apply_augment(image, poses, &aug)?;
    Ok((img, out_poses, aug))
}
