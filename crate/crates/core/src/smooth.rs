//! Test-time stabilisation in parameter space.
//!
//! Pose and hand channels are smoothed independently with a fixed-interval
//! Rauch-Tung-Striebel smoother over a constant-velocity model:
//!
//! ```text
//! x_t = [p_t, v_t]     x_t = F x_{t-1} + w_t,   F = [[1, 1], [0, 1]]
//! y_t = p_t + e_t      w_t ~ N(0, q [[1/3, 1/2], [1/2, 1]]),  e_t ~ N(0, r)
//! ```
//!
//! The filter starts at `(y_0, 0)` with covariance `diag(r, 1)`. Smoothing
//! never crosses a frame where the human is absent. Shape and skeleton are
//! not smoothed but locked to their first visible value.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MeshTrajectory, MhrParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmoothError {
    #[error("non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("empty series")]
    EmptySeries,
    #[error("invalid smoothing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Process noise intensity.
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
    pub enabled: bool,
    pub unwrap_rotations: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            q: 1e-3,
            r: 1e-2,
            enabled: true,
            unwrap_rotations: true,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), SmoothError> {
        for (name, v) in [("q", self.q), ("r", self.r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SmoothError::InvalidConfig(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Prior variance of the initial velocity.
const INITIAL_VELOCITY_VAR: f64 = 1.0;

/// Symmetric 2x2 covariance `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy)]
struct Cov {
    a: f64,
    b: f64,
    c: f64,
}

impl Cov {
    fn predict(self, q: f64) -> Self {
        // F P F^T + Q
        Cov {
            a: self.a + 2.0 * self.b + self.c + q / 3.0,
            b: self.b + self.c + q / 2.0,
            c: self.c + q,
        }
    }

    fn det(self) -> f64 {
        self.a * self.c - self.b * self.b
    }
}

pub fn kalman_smooth(series: &[f64], config: &SmoothingConfig) -> Result<Vec<f64>, SmoothError> {
    config.validate()?;
    if series.is_empty() {
        return Err(SmoothError::EmptySeries);
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(SmoothError::NonFiniteInput(i));
    }
    let n = series.len();
    let (q, r) = (config.q, config.r);

    // forward filter
    let mut filt_m = Vec::with_capacity(n);
    let mut filt_p = Vec::with_capacity(n);
    let mut pred_m = Vec::with_capacity(n);
    let mut pred_p = Vec::with_capacity(n);
    let mut m = [series[0], 0.0];
    let mut p = Cov {
        a: r,
        b: 0.0,
        c: INITIAL_VELOCITY_VAR,
    };
    filt_m.push(m);
    filt_p.push(p);
    pred_m.push(m);
    pred_p.push(p);
    for &y in &series[1..] {
        let mp = [m[0] + m[1], m[1]];
        let pp = p.predict(q);
        let s = pp.a + r;
        let (k0, k1) = (pp.a / s, pp.b / s);
        let innov = y - mp[0];
        m = [mp[0] + k0 * innov, mp[1] + k1 * innov];
        // (I - K H) P_pred, symmetric by construction
        p = Cov {
            a: (1.0 - k0) * pp.a,
            b: (1.0 - k0) * pp.b,
            c: pp.c - k1 * pp.b,
        };
        pred_m.push(mp);
        pred_p.push(pp);
        filt_m.push(m);
        filt_p.push(p);
    }

    // RTS backward pass
    let mut out = vec![0.0; n];
    let mut sm = filt_m[n - 1];
    out[n - 1] = sm[0];
    for t in (0..n - 1).rev() {
        let pf = filt_p[t];
        let pp = pred_p[t + 1];
        // G = P_f F^T P_pred^{-1}
        let pft = [[pf.a + pf.b, pf.b], [pf.b + pf.c, pf.c]];
        let det = pp.det();
        let inv = [[pp.c / det, -pp.b / det], [-pp.b / det, pp.a / det]];
        let g = [
            [
                pft[0][0] * inv[0][0] + pft[0][1] * inv[1][0],
                pft[0][0] * inv[0][1] + pft[0][1] * inv[1][1],
            ],
            [
                pft[1][0] * inv[0][0] + pft[1][1] * inv[1][0],
                pft[1][0] * inv[0][1] + pft[1][1] * inv[1][1],
            ],
        ];
        let d = [sm[0] - pred_m[t + 1][0], sm[1] - pred_m[t + 1][1]];
        sm = [
            filt_m[t][0] + g[0][0] * d[0] + g[0][1] * d[1],
            filt_m[t][1] + g[1][0] * d[0] + g[1][1] * d[1],
        ];
        out[t] = sm[0];
    }
    Ok(out)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Adds multiples of `2 pi` so consecutive samples differ by at most `pi`.
pub fn unwrap_angles(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut offset = 0.0;
    for (i, &x) in series.iter().enumerate() {
        if i > 0 {
            let prev = series[i - 1];
            offset += 2.0 * PI * ((prev - x) / (2.0 * PI)).round();
        }
        out.push(x + offset);
    }
    out
}

/// Maximal runs of present frames as half-open ranges.
pub(crate) fn segments(present: &[bool]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &p) in present.iter().chain(std::iter::once(&false)).enumerate() {
        match (p, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push(s..t);
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn smooth_channel(
    traj: &mut MeshTrajectory,
    range: std::ops::Range<usize>,
    get: fn(&mut MhrParams) -> &mut Vec<f64>,
    channel: usize,
    angular: bool,
    config: &SmoothingConfig,
) -> Result<(), SmoothError> {
    let raw: Vec<f64> = range
        .clone()
        .map(|t| get(traj.params[t].as_mut().unwrap())[channel])
        .collect();
    let series = if angular { unwrap_angles(&raw) } else { raw };
    let smoothed = kalman_smooth(&series, config)?;
    for (t, v) in range.zip(smoothed) {
        get(traj.params[t].as_mut().unwrap())[channel] = if angular { wrap_angle(v) } else { v };
    }
    Ok(())
}

/// Smooths pose and hand channels per contiguous visible segment. Camera,
/// shape and skeleton channels are left alone.
pub fn smooth_trajectory(traj: &MeshTrajectory, config: &SmoothingConfig) -> Result<MeshTrajectory, SmoothError> {
    let mut out = traj.clone();
    if !config.enabled {
        return Ok(out);
    }
    let layout = traj.layout.clone();
    for range in segments(&traj.presence()) {
        for c in 0..layout.pose {
            let angular = config.unwrap_rotations && layout.rotation_channels.contains(&c);
            smooth_channel(&mut out, range.clone(), |p| &mut p.pose, c, angular, config)?;
        }
        for c in 0..layout.hands {
            smooth_channel(&mut out, range.clone(), |p| &mut p.hands, c, false, config)?;
        }
    }
    Ok(out)
}

/// Copies the shape and skeleton of the first visible frame onto every
/// visible frame.
pub fn lock_shape(traj: &MeshTrajectory) -> MeshTrajectory {
    let mut out = traj.clone();
    let Some(first) = traj.first_present() else {
        return out;
    };
    for p in out.params.iter_mut().flatten() {
        p.shape.clone_from(&first.shape);
        p.skeleton.clone_from(&first.skeleton);
    }
    out
}
