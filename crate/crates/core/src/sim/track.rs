//! Piecewise-cubic scalar tracks for trajectories and joint angles.
//!
//! A track interpolates uniformly spaced control values over `[0, duration]`
//! with a Catmull-Rom spline (one-sided tangents at the ends). Two control
//! points degenerate to exact linear interpolation, which the motion oracles
//! rely on; one control point is a constant.

use crate::error::{ensure, Result};

const MODULE: &str = "sim";

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    values: Vec<f64>,
    duration: f64,
}

impl Track {
    pub fn constant(value: f64) -> Self {
        Track {
            values: vec![value],
            duration: 1.0,
        }
    }

    pub fn linear(from: f64, to: f64, duration: f64) -> Result<Self> {
        Track::from_control_points(vec![from, to], duration)
    }

    /// Control values spaced uniformly over `[0, duration]`.
    pub fn from_control_points(values: Vec<f64>, duration: f64) -> Result<Self> {
        ensure!(
            !values.is_empty(),
            MODULE,
            "track needs at least one control point"
        );
        ensure!(
            values.iter().all(|v| v.is_finite()),
            MODULE,
            "track control points must be finite"
        );
        ensure!(
            duration > 0.0 && duration.is_finite(),
            MODULE,
            "track duration must be positive, got {duration}"
        );
        Ok(Track { values, duration })
    }

    pub fn control_points(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value; `t` is clamped to `[0, duration]`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let s = (t / self.duration).clamp(0.0, 1.0) * (n - 1) as f64;
        let seg = (s.floor() as usize).min(n - 2);
        let u = s - seg as f64;

        let p1 = self.values[seg];
        let p2 = self.values[seg + 1];
        let m1 = if seg == 0 {
            p2 - p1
        } else {
            (p2 - self.values[seg - 1]) / 2.0
        };
        let m2 = if seg + 2 >= n {
            p2 - p1
        } else {
            (self.values[seg + 2] - p1) / 2.0
        };

        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * p1
            + (u3 - 2.0 * u2 + u) * m1
            + (-2.0 * u3 + 3.0 * u2) * p2
            + (u3 - u2) * m2
    }
}
