//! Differentiable temporal masks.
//!
//! A mask is a vector of per-frame weights in `[0, 1]` produced by a kernel
//! parameterized by a temporal center and a width, both in normalized video
//! time. Frames sit at cell midpoints `(j + 0.5) / n_frames`.
//!
//! Three kernels are supported:
//! - Gaussian: `exp(-(t - c)^2 / (2 (w / tau)^2))`
//! - Cauchy: `1 / (1 + ((t - c) / (w / tau))^2)`
//! - hard binary: `1` when `|t - c| <= w / 2`, else `0`. It has no useful
//!   derivative, so its gradient path borrows the Gaussian's (straight-through).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 4.0;
pub const DEFAULT_WIDTH_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Gaussian,
    Cauchy,
    HardBinary,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Gaussian, MaskKind::Cauchy, MaskKind::HardBinary];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Gaussian => "gaussian",
            MaskKind::Cauchy => "cauchy",
            MaskKind::HardBinary => "hard_binary",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(MaskKind::Gaussian),
            "cauchy" => Ok(MaskKind::Cauchy),
            "hard_binary" | "hard-binary" => Ok(MaskKind::HardBinary),
            other => Err(Error::Config(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Temporal center and width of one event, in normalized video time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    center: f64,
    width: f64,
}

impl MaskParams {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(center > 0.0 && center < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "center {center} outside (0, 1)"
            )));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "width {width} must be > 0"
            )));
        }
        Ok(Self { center, width })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

/// Unconstrained optimization variables behind a [`MaskParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMaskParams {
    pub raw_center: f64,
    pub raw_width: f64,
}

impl RawMaskParams {
    pub fn new(raw_center: f64, raw_width: f64) -> Self {
        Self {
            raw_center,
            raw_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    temperature: f64,
    n_frames: usize,
    width_max: f64,
}

impl EngineConfig {
    pub fn new(temperature: f64, n_frames: usize, width_max: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        if n_frames < 2 {
            return Err(Error::Config(format!("n_frames {n_frames} must be >= 2")));
        }
        if !(width_max > 0.0 && width_max.is_finite()) {
            return Err(Error::Config(format!("width_max {width_max} must be > 0")));
        }
        Ok(Self {
            temperature,
            n_frames,
            width_max,
        })
    }

    pub fn with_frames(n_frames: usize) -> Result<Self> {
        Self::new(DEFAULT_TEMPERATURE, n_frames, DEFAULT_WIDTH_MAX)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn width_max(&self) -> f64 {
        self.width_max
    }

    /// Timestamp of frame `j`: the midpoint of its cell.
    pub fn frame_time(&self, j: usize) -> f64 {
        frame_time(j, self.n_frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub weights: Vec<f64>,
    pub kind: MaskKind,
}

impl Mask {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn frame_time(j: usize, n_frames: usize) -> f64 {
    (j as f64 + 0.5) / n_frames as f64
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps unconstrained variables onto a valid [`MaskParams`]:
/// `center = logistic(raw_center)`, `width = width_max * logistic(raw_width)`.
pub fn constrain(raw: RawMaskParams, cfg: &EngineConfig) -> Result<MaskParams> {
    if !raw.raw_center.is_finite() || !raw.raw_width.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite raw parameters ({}, {})",
            raw.raw_center, raw.raw_width
        )));
    }
    let center = logistic(raw.raw_center);
    let width = cfg.width_max * logistic(raw.raw_width);
    // Saturated logistics are still inside the open interval mathematically;
    // keep them there numerically as well.
    let center = center.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let width = width.max(f64::MIN_POSITIVE);
    MaskParams::new(center, width)
}

/// Derivatives of [`constrain`]: `(d center / d raw_center, d width / d raw_width)`.
pub fn constrain_jacobian(raw: RawMaskParams, cfg: &EngineConfig) -> (f64, f64) {
    let c = logistic(raw.raw_center);
    let s = logistic(raw.raw_width);
    (c * (1.0 - c), cfg.width_max * s * (1.0 - s))
}

/// Inverse of [`constrain`]. Fails when the params lie on or outside the
/// boundary of the constrained range.
pub fn unconstrain(params: MaskParams, cfg: &EngineConfig) -> Result<RawMaskParams> {
    let frac = params.width / cfg.width_max;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "width {} not strictly inside (0, {})",
            params.width, cfg.width_max
        )));
    }
    Ok(RawMaskParams::new(logit(params.center), logit(frac)))
}

/// A kernel value together with its partial derivatives with respect to the
/// center and the width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub d_center: f64,
    pub d_width: f64,
}

fn kernel_scale(width: f64, temperature: f64) -> Result<f64> {
    let scale = width / temperature;
    if !scale.is_normal() || scale <= 0.0 {
        return Err(Error::DegenerateWidth(scale));
    }
    Ok(scale)
}

fn gaussian_eval(t: f64, center: f64, scale: f64, temperature: f64) -> KernelEval {
    let d = t - center;
    let s2 = scale * scale;
    let value = (-(d * d) / (2.0 * s2)).exp();
    KernelEval {
        value,
        d_center: value * d / s2,
        // d/ds = value * d^2 / s^3, ds/dw = 1 / tau
        d_width: value * d * d / (s2 * scale) / temperature,
    }
}

fn cauchy_eval(t: f64, center: f64, scale: f64, temperature: f64) -> KernelEval {
    let u = (t - center) / scale;
    let value = 1.0 / (1.0 + u * u);
    let k2 = value * value;
    KernelEval {
        value,
        d_center: 2.0 * u * k2 / scale,
        d_width: 2.0 * u * u * k2 / scale / temperature,
    }
}

/// Evaluates the kernel at time `t`. For [`MaskKind::HardBinary`] the value is
/// the indicator and the derivatives are those of the Gaussian surrogate.
pub fn kernel_eval(
    kind: MaskKind,
    t: f64,
    center: f64,
    width: f64,
    temperature: f64,
) -> Result<KernelEval> {
    let scale = kernel_scale(width, temperature)?;
    Ok(match kind {
        MaskKind::Gaussian => gaussian_eval(t, center, scale, temperature),
        MaskKind::Cauchy => cauchy_eval(t, center, scale, temperature),
        MaskKind::HardBinary => {
            let surrogate = gaussian_eval(t, center, scale, temperature);
            KernelEval {
                value: hard_value(t, center, width),
                ..surrogate
            }
        }
    })
}

fn hard_value(t: f64, center: f64, width: f64) -> f64 {
    if (t - center).abs() <= width / 2.0 {
        1.0
    } else {
        0.0
    }
}

pub fn make_mask(kind: MaskKind, params: MaskParams, cfg: &EngineConfig) -> Result<Mask> {
    let scale = kernel_scale(params.width, cfg.temperature)?;
    let weights = (0..cfg.n_frames)
        .map(|j| {
            let t = cfg.frame_time(j);
            match kind {
                MaskKind::Gaussian => gaussian_eval(t, params.center, scale, cfg.temperature).value,
                MaskKind::Cauchy => cauchy_eval(t, params.center, scale, cfg.temperature).value,
                MaskKind::HardBinary => hard_value(t, params.center, params.width),
            }
        })
        .collect();
    Ok(Mask { weights, kind })
}

pub fn inverse_mask(m: &Mask) -> Mask {
    Mask {
        weights: m.weights.iter().map(|w| 1.0 - w).collect(),
        kind: m.kind,
    }
}

/// Parameters of the inter-mask between two events: the midpoint of their
/// centers with the fixed width `w_inter`.
pub fn inter_mask_params(a: MaskParams, b: MaskParams, w_inter: f64) -> Result<MaskParams> {
    MaskParams::new((a.center + b.center) / 2.0, w_inter)
}

/// Inter-mask parameters for each consecutive pair of events, in event order.
pub fn inter_params_for(events: &[MaskParams], w_inter: f64) -> Result<Vec<MaskParams>> {
    events
        .windows(2)
        .map(|pair| inter_mask_params(pair[0], pair[1], w_inter))
        .collect()
}

/// Equal-width masks tiled across the video: centers `(i + 0.5) / n`, width `1 / n`.
pub fn fixed_uniform_params(n_events: usize) -> Result<Vec<MaskParams>> {
    if n_events == 0 {
        return Err(Error::EmptyEvents);
    }
    let n = n_events as f64;
    (0..n_events)
        .map(|i| MaskParams::new((i as f64 + 0.5) / n, 1.0 / n))
        .collect()
}

pub fn fixed_uniform_masks(n_events: usize, cfg: &EngineConfig) -> Result<Vec<Mask>> {
    fixed_uniform_params(n_events)?
        .into_iter()
        .map(|p| make_mask(MaskKind::Gaussian, p, cfg))
        .collect()
}
