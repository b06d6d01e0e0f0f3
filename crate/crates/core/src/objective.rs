//! The training objective and its analytic gradient.
//!
//! For every video the chain is
//! raw params → (center, width) → per-frame mask weights → pooled features →
//! cosine similarities → hinge / `1 - cos` / pairwise-cosine terms,
//! and [`Objective::backward`] walks it in reverse. Inter-mask centers are
//! midpoints of consecutive event centers, so each of the two events receives
//! half of the inter-center gradient; the inter width is fixed.
//!
//! Hard-binary masks have no gradient of their own. Their backward pass uses
//! the Gaussian kernel's derivatives at the hard forward values.

use crate::dataset::VideoSample;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::loss::{
    complement_caption, cosine_grad, hard_negative, pool, pool_backward, total_loss, LossBreakdown,
    LossConfig, LossParts,
};
use crate::mask::{
    constrain, constrain_jacobian, fixed_uniform_params, kernel_eval, unconstrain, EngineConfig,
    MaskKind, MaskParams, RawMaskParams,
};

pub const DEFAULT_W_INTER: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub engine: EngineConfig,
    pub loss: LossConfig,
    pub kind: MaskKind,
    pub w_inter: f64,
}

impl ObjectiveConfig {
    pub fn new(engine: EngineConfig) -> Self {
        Self {
            engine,
            loss: LossConfig::default(),
            kind: MaskKind::Gaussian,
            w_inter: DEFAULT_W_INTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.w_inter > 0.0 && self.w_inter.is_finite()) {
            return Err(Error::Config(format!(
                "w_inter = {} must be > 0",
                self.w_inter
            )));
        }
        Ok(())
    }
}

/// Additional per-video loss supplied by the caller (e.g. captioning losses
/// computed elsewhere). Gradients are with respect to each event's
/// constrained `(center, width)`.
pub trait ExternalLoss: Sync {
    fn evaluate(&self, video: &VideoSample, params: &[MaskParams]) -> (f64, Vec<(f64, f64)>);
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamGrad {
    pub raw_center: f64,
    pub raw_width: f64,
}

/// Learnable mask parameters: one entry per annotated event of each video.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub videos: Vec<Vec<RawMaskParams>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub videos: Vec<Vec<ParamGrad>>,
}

impl ParamSet {
    /// Raw parameters whose constrained values tile the video with equal
    /// widths. Widths are capped just below `width_max` so that single-event
    /// videos stay inside the open constrained range.
    pub fn fixed_uniform(event_counts: &[usize], engine: &EngineConfig) -> Result<Self> {
        let cap = engine.width_max() * (1.0 - 1e-3);
        let videos = event_counts
            .iter()
            .map(|&k| {
                fixed_uniform_params(k)?
                    .into_iter()
                    .map(|p| unconstrain(MaskParams::new(p.center(), p.width().min(cap))?, engine))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { videos })
    }

    pub fn constrained(&self, engine: &EngineConfig) -> Result<Vec<Vec<MaskParams>>> {
        self.videos
            .iter()
            .map(|v| v.iter().map(|r| constrain(*r, engine)).collect())
            .collect()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.videos.iter().map(|v| 2 * v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalar parameter by flat index (video-major, then event, then
    /// center before width).
    pub fn get(&self, idx: usize) -> f64 {
        let (v, e, width) = self.locate(idx);
        let p = self.videos[v][e];
        if width {
            p.raw_width
        } else {
            p.raw_center
        }
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        let (v, e, width) = self.locate(idx);
        let p = &mut self.videos[v][e];
        if width {
            p.raw_width = value;
        } else {
            p.raw_center = value;
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize, bool) {
        for (v, events) in self.videos.iter().enumerate() {
            if idx < 2 * events.len() {
                return (v, idx / 2, idx % 2 == 1);
            }
            idx -= 2 * events.len();
        }
        panic!("parameter index out of range");
    }
}

impl GradientSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            videos: params
                .videos
                .iter()
                .map(|v| vec![ParamGrad::default(); v.len()])
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.videos
            .iter()
            .flatten()
            .flat_map(|g| [g.raw_center, g.raw_width])
            .collect()
    }

    pub fn from_flat(params: &ParamSet, flat: &[f64]) -> Self {
        let mut out = Self::zeros_like(params);
        let mut it = flat.iter().copied();
        for g in out.videos.iter_mut().flatten() {
            g.raw_center = it.next().expect("flat gradient too short");
            g.raw_width = it.next().expect("flat gradient too short");
        }
        out
    }
}

/// Per-frame weights of one mask and their derivatives.
struct MaskTrace {
    weights: Vec<f64>,
    d_center: Vec<f64>,
    d_width: Vec<f64>,
}

struct VideoEval {
    parts: LossParts,
    external: f64,
    grads: Vec<ParamGrad>,
}

fn ensure_finite(term: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::numerical(term, format!("non-finite value {v}"))),
        None => Ok(()),
    }
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, v)| *a += scale * v);
}

pub struct Objective<'a> {
    cfg: ObjectiveConfig,
    external: Option<&'a dyn ExternalLoss>,
}

impl<'a> Objective<'a> {
    pub fn new(cfg: ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            external: None,
        })
    }

    pub fn with_external(mut self, external: &'a dyn ExternalLoss) -> Self {
        self.external = Some(external);
        self
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn forward(&self, videos: &[&VideoSample], params: &ParamSet) -> Result<LossBreakdown> {
        self.run(videos, params, None).map(|(b, _)| b)
    }

    pub fn backward(
        &self,
        videos: &[&VideoSample],
        params: &ParamSet,
    ) -> Result<(LossBreakdown, GradientSet)> {
        self.run(videos, params, None)
    }

    /// Loss with hard-binary masks replaced by
    /// `hard(anchor) + gauss(params) - gauss(anchor)`: equal in value to the
    /// plain forward at `params == anchor`, with the Gaussian's derivative.
    /// Differentiating this numerically at the anchor checks the
    /// straight-through gradient. Other kinds ignore the anchor.
    pub fn forward_anchored(
        &self,
        videos: &[&VideoSample],
        params: &ParamSet,
        anchor: &ParamSet,
    ) -> Result<LossBreakdown> {
        self.run(videos, params, Some(anchor)).map(|(b, _)| b)
    }

    fn run(
        &self,
        videos: &[&VideoSample],
        params: &ParamSet,
        anchor: Option<&ParamSet>,
    ) -> Result<(LossBreakdown, GradientSet)> {
        if videos.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if params.videos.len() != videos.len() {
            return Err(Error::Shape(format!(
                "{} parameter sets for {} videos",
                params.videos.len(),
                videos.len()
            )));
        }
        let b = videos.len() as f64;
        let mut parts = LossParts::default();
        let mut external = 0.0;
        let mut grads = GradientSet::default();
        for (i, video) in videos.iter().enumerate() {
            let anchor_raw = anchor.map(|a| a.videos[i].as_slice());
            let ev = self.eval_video(video, &params.videos[i], anchor_raw)?;
            parts.sim += ev.parts.sim;
            parts.sim_inverse += ev.parts.sim_inverse;
            parts.aug += ev.parts.aug;
            parts.diversity += ev.parts.diversity;
            external += ev.external;
            grads.videos.push(
                ev.grads
                    .into_iter()
                    .map(|g| ParamGrad {
                        raw_center: g.raw_center / b,
                        raw_width: g.raw_width / b,
                    })
                    .collect(),
            );
        }
        parts.sim /= b;
        parts.sim_inverse /= b;
        parts.aug /= b;
        parts.diversity /= b;
        external /= b;
        let breakdown = total_loss(parts, &self.cfg.loss, external)?;
        Ok((breakdown, grads))
    }

    fn mask_trace(&self, center: f64, width: f64, anchor: Option<(f64, f64)>) -> Result<MaskTrace> {
        let engine = &self.cfg.engine;
        let tau = engine.temperature();
        let n = engine.n_frames();
        let mut trace = MaskTrace {
            weights: Vec::with_capacity(n),
            d_center: Vec::with_capacity(n),
            d_width: Vec::with_capacity(n),
        };
        for j in 0..n {
            let t = engine.frame_time(j);
            let k = kernel_eval(self.cfg.kind, t, center, width, tau)?;
            let value = match (self.cfg.kind, anchor) {
                (MaskKind::HardBinary, Some((c0, w0))) => {
                    let hard0 = kernel_eval(MaskKind::HardBinary, t, c0, w0, tau)?.value;
                    let g0 = kernel_eval(MaskKind::Gaussian, t, c0, w0, tau)?.value;
                    let g = kernel_eval(MaskKind::Gaussian, t, center, width, tau)?.value;
                    hard0 + (g - g0)
                }
                _ => k.value,
            };
            trace.weights.push(value);
            trace.d_center.push(k.d_center);
            trace.d_width.push(k.d_width);
        }
        Ok(trace)
    }

    fn eval_video(
        &self,
        video: &VideoSample,
        raw: &[RawMaskParams],
        anchor: Option<&[RawMaskParams]>,
    ) -> Result<VideoEval> {
        let cfg = &self.cfg;
        let engine = &cfg.engine;
        let lc = &cfg.loss;
        let (eps, mode, margin) = (lc.epsilon, lc.pooling, lc.margin);
        let frames = &video.frames;
        let captions = &video.captions;
        let k = captions.rows();

        if raw.len() != k {
            return Err(Error::Shape(format!(
                "video `{}`: {} parameter pairs for {k} events",
                video.id,
                raw.len()
            )));
        }
        if k == 0 {
            return Err(Error::EmptyEvents);
        }
        if frames.rows() != engine.n_frames() {
            return Err(Error::Shape(format!(
                "video `{}`: {} frames, engine expects {}",
                video.id,
                frames.rows(),
                engine.n_frames()
            )));
        }
        if frames.dim() != captions.dim() {
            return Err(Error::Shape(format!(
                "video `{}`: frame/caption dims differ",
                video.id
            )));
        }

        let params: Vec<MaskParams> = raw
            .iter()
            .map(|r| constrain(*r, engine))
            .collect::<Result<_>>()?;
        let anchor_params: Option<Vec<MaskParams>> = anchor
            .map(|a| {
                a.iter()
                    .map(|r| constrain(*r, engine))
                    .collect::<Result<_>>()
            })
            .transpose()?;
        let traces: Vec<MaskTrace> = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = anchor_params
                    .as_ref()
                    .map(|ap| (ap[i].center(), ap[i].width()));
                self.mask_trace(p.center(), p.width(), a)
            })
            .collect::<Result<_>>()?;

        let n = engine.n_frames();
        // dL/d(mask weight) per event, and direct dL/d(center), dL/d(width).
        let mut g_mask = vec![vec![0.0; n]; k];
        let mut g_center = vec![0.0; k];
        let mut g_width = vec![0.0; k];
        let mut parts = LossParts::default();
        let kf = k as f64;

        if lc.use_sim {
            let mut sum = 0.0;
            for i in 0..k {
                let p = pool(frames, &traces[i].weights, mode, eps)?;
                let (pos, g_pos) = cosine_grad(&p, captions.row(i), eps);
                let negative = hard_negative(&p, captions, i, eps);
                let neg = negative.map_or(0.0, |(_, s)| s);
                let hinge = margin - pos + neg;
                if hinge > 0.0 {
                    sum += hinge;
                    let mut up: Vec<f64> = g_pos.iter().map(|g| -g / kf).collect();
                    if let Some((j, _)) = negative {
                        let (_, g_neg) = cosine_grad(&p, captions.row(j), eps);
                        axpy(&mut up, 1.0 / kf, &g_neg);
                    }
                    let gm = pool_backward(frames, &traces[i].weights, &p, &up, mode, eps);
                    axpy(&mut g_mask[i], 1.0, &gm);
                }
            }
            parts.sim = sum / kf;
            ensure_finite("sim", &[parts.sim])?;
        }

        if lc.use_inverse && k >= 2 {
            let mut sum = 0.0;
            for i in 0..k {
                let inv: Vec<f64> = traces[i].weights.iter().map(|w| 1.0 - w).collect();
                let q = pool(frames, &inv, mode, eps)?;
                let target = complement_caption(captions, i).expect("k >= 2");
                let (pos, g_pos) = cosine_grad(&q, &target, eps);
                let (neg, g_neg) = cosine_grad(&q, captions.row(i), eps);
                let hinge = margin - pos + neg;
                if hinge > 0.0 {
                    sum += hinge;
                    let up: Vec<f64> = g_pos
                        .iter()
                        .zip(&g_neg)
                        .map(|(gp, gn)| (gn - gp) / kf)
                        .collect();
                    let gq = pool_backward(frames, &inv, &q, &up, mode, eps);
                    axpy(&mut g_mask[i], -1.0, &gq);
                }
            }
            parts.sim_inverse = sum / kf;
            ensure_finite("sim_inverse", &[parts.sim_inverse])?;
        }

        if let Some(syn) = video.synthetic.as_ref().filter(|_| k >= 2) {
            parts.aug = self.aug_term(
                frames,
                syn,
                &params,
                anchor_params.as_deref(),
                &mut g_center,
            )?;
            ensure_finite("aug", &[parts.aug])?;
        }

        if k >= 2 {
            let pairs = (k * (k - 1) / 2) as f64;
            let scale = lc.lambda_div / pairs;
            let mut sum = 0.0;
            for a in 0..k {
                for b in a + 1..k {
                    let (s, ga) = cosine_grad(&traces[a].weights, &traces[b].weights, eps);
                    let (_, gb) = cosine_grad(&traces[b].weights, &traces[a].weights, eps);
                    sum += s;
                    if scale != 0.0 {
                        axpy(&mut g_mask[a], scale, &ga);
                        axpy(&mut g_mask[b], scale, &gb);
                    }
                }
            }
            parts.diversity = sum / pairs;
            ensure_finite("diversity", &[parts.diversity])?;
        }

        let mut external = 0.0;
        if let Some(ext) = self.external {
            let (value, grads) = ext.evaluate(video, &params);
            if grads.len() != k {
                return Err(Error::Shape(format!(
                    "external loss returned {} gradients for {k} events",
                    grads.len()
                )));
            }
            ensure_finite("external", &[value])?;
            external = value;
            for (i, (gc, gw)) in grads.into_iter().enumerate() {
                g_center[i] += gc;
                g_width[i] += gw;
            }
        }

        let mut grads = Vec::with_capacity(k);
        for i in 0..k {
            ensure_finite("mask gradient", &g_mask[i])?;
            let dc: f64 = g_mask[i]
                .iter()
                .zip(&traces[i].d_center)
                .map(|(g, d)| g * d)
                .sum::<f64>()
                + g_center[i];
            let dw: f64 = g_mask[i]
                .iter()
                .zip(&traces[i].d_width)
                .map(|(g, d)| g * d)
                .sum::<f64>()
                + g_width[i];
            let (jc, jw) = constrain_jacobian(raw[i], engine);
            let g = ParamGrad {
                raw_center: dc * jc,
                raw_width: dw * jw,
            };
            ensure_finite("parameter gradient", &[g.raw_center, g.raw_width])?;
            grads.push(g);
        }

        Ok(VideoEval {
            parts,
            external,
            grads,
        })
    }

    /// Mean `1 - cos` over inter-masks; accumulates `alpha_aug`-weighted
    /// center gradients into `g_center`.
    fn aug_term(
        &self,
        frames: &EmbeddingMatrix,
        syn: &EmbeddingMatrix,
        params: &[MaskParams],
        anchor: Option<&[MaskParams]>,
        g_center: &mut [f64],
    ) -> Result<f64> {
        let lc = &self.cfg.loss;
        let (eps, mode) = (lc.epsilon, lc.pooling);
        let pairs = params.len() - 1;
        if syn.rows() != pairs {
            return Err(Error::Shape(format!(
                "{} synthetic captions for {} inter-masks",
                syn.rows(),
                pairs
            )));
        }
        let w_inter = self.cfg.w_inter;
        let scale = lc.alpha_aug / pairs as f64;
        let mut sum = 0.0;
        for i in 0..pairs {
            let center = (params[i].center() + params[i + 1].center()) / 2.0;
            let a = anchor.map(|ap| ((ap[i].center() + ap[i + 1].center()) / 2.0, w_inter));
            let trace = self.mask_trace(center, w_inter, a)?;
            let u = pool(frames, &trace.weights, mode, eps)?;
            let (s, g) = cosine_grad(&u, syn.row(i), eps);
            sum += 1.0 - s;
            if scale != 0.0 {
                let up: Vec<f64> = g.iter().map(|x| -x * scale).collect();
                let gr = pool_backward(frames, &trace.weights, &u, &up, mode, eps);
                let d_center: f64 = gr.iter().zip(&trace.d_center).map(|(g, d)| g * d).sum();
                g_center[i] += d_center / 2.0;
                g_center[i + 1] += d_center / 2.0;
            }
        }
        Ok(sum / pairs as f64)
    }
}
