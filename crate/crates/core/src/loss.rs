//! Masked heatmap and offset losses with analytic gradients.
//!
//! Both losses reduce by the mean over *all* elements (masked or not), which
//! keeps the heatmap/offset balance independent of resolution. Gradients are
//! returned alongside values; there is no autodiff framework anywhere in this
//! crate.

use crate::error::{ensure, Result};
use crate::pose::PoseFieldSet;
use crate::pseudo::MaskSet;

const MODULE: &str = "loss";

/// Default weighting of the offset loss against the heatmap loss.
pub const DEFAULT_LAMBDA_G: f64 = 0.03;

/// Scalar losses of one training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub heatmap_loss: f64,
    pub offset_loss: f64,
    /// `heatmap_loss + lambda_g * offset_loss`.
    pub total: f64,
    pub lambda_g: f64,
}

/// Gradients of the total loss with respect to the predicted fields; shapes
/// match [`PoseFieldSet::heatmaps_concat`] and the raw offset buffer. The
/// `lambda_g` weighting is already applied to the offset part.
#[derive(Debug, Clone)]
pub struct FieldGrad {
    pub heatmaps: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Mean of `mask * (pred - target)^2` with gradient `2 * mask * diff / N`.
pub fn masked_heatmap_loss(
    pred: &[f64],
    target: &[f64],
    mask: &[f64],
) -> Result<(f64, Vec<f64>)> {
    ensure!(
        pred.len() == target.len() && pred.len() == mask.len(),
        MODULE,
        "heatmap shapes differ: pred {}, target {}, mask {}",
        pred.len(),
        target.len(),
        mask.len()
    );
    ensure!(!pred.is_empty(), MODULE, "empty heatmap buffers");
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let d = pred[i] - target[i];
        loss += mask[i] * d * d;
        grad[i] = 2.0 * mask[i] * d / n;
    }
    Ok((loss / n, grad))
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Mean of `mask * smoothL1(pred - target)` over offset channels, with the
/// keypoint-level mask broadcast over each keypoint's two displacement
/// components: `pred`/`target` hold `2K` channels of `plane` pixels, `mask`
/// holds `K` channels.
pub fn masked_offset_loss(
    pred: &[f64],
    target: &[f64],
    mask: &[f64],
    plane: usize,
) -> Result<(f64, Vec<f64>)> {
    ensure!(
        pred.len() == target.len(),
        MODULE,
        "offset shapes differ: pred {}, target {}",
        pred.len(),
        target.len()
    );
    ensure!(
        pred.len() == 2 * mask.len(),
        MODULE,
        "offset buffer ({}) must be twice the mask buffer ({})",
        pred.len(),
        mask.len()
    );
    ensure!(
        plane > 0 && mask.len() % plane == 0,
        MODULE,
        "mask length {} is not a multiple of plane {}",
        mask.len(),
        plane
    );
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let channel = i / plane; // 0..2K
        let m = mask[(channel / 2) * plane + i % plane];
        let d = pred[i] - target[i];
        loss += m * smooth_l1(d);
        grad[i] = m * smooth_l1_grad(d) / n;
    }
    Ok((loss / n, grad))
}

/// Combined masked loss over full field sets:
/// `total = L_heatmap + lambda_g * L_offset`. Unit masks reproduce the plain
/// supervised loss; pseudo-label masks reproduce the masked training loss.
pub fn supervised_loss(
    pred: &PoseFieldSet,
    target: &PoseFieldSet,
    masks: &MaskSet,
    lambda_g: f64,
) -> Result<(LossReport, FieldGrad)> {
    ensure!(
        pred.width() == target.width() && pred.height() == target.height(),
        MODULE,
        "pred fields {}x{} vs target fields {}x{}",
        pred.width(),
        pred.height(),
        target.width(),
        target.height()
    );
    ensure!(
        masks.width() == pred.width() && masks.height() == pred.height(),
        MODULE,
        "mask resolution {}x{} vs fields {}x{}",
        masks.width(),
        masks.height(),
        pred.width(),
        pred.height()
    );
    ensure!(
        lambda_g >= 0.0 && lambda_g.is_finite(),
        MODULE,
        "lambda_g {lambda_g} must be finite and non-negative"
    );

    let pred_heat = pred.heatmaps_concat();
    let target_heat = target.heatmaps_concat();
    let (heatmap_loss, heat_grad) = masked_heatmap_loss(&pred_heat, &target_heat, masks.heatmap())?;

    let plane = pred.width() * pred.height();
    let (offset_loss, mut offset_grad) = masked_offset_loss(
        pred.offsets_raw(),
        target.offsets_raw(),
        masks.offset(),
        plane,
    )?;
    for g in &mut offset_grad {
        *g *= lambda_g;
    }

    Ok((
        LossReport {
            heatmap_loss,
            offset_loss,
            total: heatmap_loss + lambda_g * offset_loss,
            lambda_g,
        },
        FieldGrad {
            heatmaps: heat_grad,
            offsets: offset_grad,
        },
    ))
}
