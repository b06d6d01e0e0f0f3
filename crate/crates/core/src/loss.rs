//! Masked pooling, cosine similarity, and the alignment loss terms.
//!
//! - similarity loss: per-event margin ranking between the masked pooled
//!   feature, its own caption, and the hardest other caption of the video;
//! - inverse branch: the same ranking on inverse-masked features, with the
//!   mean of the other captions as the positive and the own caption as the
//!   negative;
//! - augmentation loss: `1 - cos` between inter-mask pooled features and
//!   synthetic transition captions;
//! - diversity loss: mean pairwise cosine between mask weight vectors.
//!
//! Batch terms are `1/B` means of per-video means. Sums run in index order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, norm, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::mask::{Mask, MaskKind};

pub const DEFAULT_MARGIN: f64 = 0.1;
pub const DEFAULT_ALPHA_AUG: f64 = 0.25;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    PlainMean,
    MaskWeighted,
}

impl PoolingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::PlainMean => "plain_mean",
            PoolingMode::MaskWeighted => "mask_weighted",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_mean" | "plain-mean" => Ok(PoolingMode::PlainMean),
            "mask_weighted" | "mask-weighted" => Ok(PoolingMode::MaskWeighted),
            other => Err(Error::Config(format!("unknown pooling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub vector: Vec<f64>,
    pub source_mask_kind: MaskKind,
}

/// Which terms enter the objective and with what weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub alpha_aug: f64,
    pub lambda_div: f64,
    pub pooling: PoolingMode,
    pub epsilon: f64,
    /// Include the similarity ranking term.
    pub use_sim: bool,
    /// Include the inverse-mask ranking term.
    pub use_inverse: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            alpha_aug: DEFAULT_ALPHA_AUG,
            lambda_div: 0.0,
            pooling: PoolingMode::PlainMean,
            epsilon: DEFAULT_EPSILON,
            use_sim: true,
            use_inverse: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} = {v} must be finite and >= 0"
                )))
            }
        };
        check("margin", self.margin)?;
        check("alpha_aug", self.alpha_aug)?;
        check("lambda_div", self.lambda_div)?;
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Config(format!(
                "epsilon = {} must lie in (0, 1e-3]",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Unweighted loss terms, each already averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub sim: f64,
    pub sim_inverse: f64,
    pub aug: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sim: f64,
    pub sim_inverse: f64,
    pub aug: f64,
    pub diversity: f64,
    pub external: f64,
    pub total: f64,
}

pub fn total_loss(parts: LossParts, cfg: &LossConfig, external: f64) -> Result<LossBreakdown> {
    for (name, v) in [
        ("sim", parts.sim),
        ("sim_inverse", parts.sim_inverse),
        ("aug", parts.aug),
        ("diversity", parts.diversity),
        ("external", external),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical(name, format!("value {v}")));
        }
    }
    let total = parts.sim
        + parts.sim_inverse
        + cfg.lambda_div * parts.diversity
        + cfg.alpha_aug * parts.aug
        + external;
    Ok(LossBreakdown {
        sim: parts.sim,
        sim_inverse: parts.sim_inverse,
        aug: parts.aug,
        diversity: parts.diversity,
        external,
        total,
    })
}

/// Pools frames under per-frame `weights` into a single vector.
pub fn pool(
    frames: &EmbeddingMatrix,
    weights: &[f64],
    mode: PoolingMode,
    eps: f64,
) -> Result<Vec<f64>> {
    if frames.rows() != weights.len() {
        return Err(Error::Shape(format!(
            "{} frames but mask of length {}",
            frames.rows(),
            weights.len()
        )));
    }
    let mut out = vec![0.0; frames.dim()];
    for (w, f) in weights.iter().zip(frames.iter_rows()) {
        for (o, x) in out.iter_mut().zip(f) {
            *o += w * x;
        }
    }
    let denom = match mode {
        PoolingMode::PlainMean => weights.len() as f64,
        PoolingMode::MaskWeighted => weights.iter().sum::<f64>().max(eps),
    };
    out.iter_mut().for_each(|o| *o /= denom);
    Ok(out)
}

pub fn masked_pool(
    frames: &EmbeddingMatrix,
    m: &Mask,
    mode: PoolingMode,
    eps: f64,
) -> Result<PooledEmbedding> {
    Ok(PooledEmbedding {
        vector: pool(frames, &m.weights, mode, eps)?,
        source_mask_kind: m.kind,
    })
}

/// Gradient of `upstream . pool(frames, weights)` with respect to `weights`.
pub fn pool_backward(
    frames: &EmbeddingMatrix,
    weights: &[f64],
    pooled: &[f64],
    upstream: &[f64],
    mode: PoolingMode,
    eps: f64,
) -> Vec<f64> {
    match mode {
        PoolingMode::PlainMean => {
            let n = weights.len() as f64;
            frames.iter_rows().map(|f| dot(upstream, f) / n).collect()
        }
        PoolingMode::MaskWeighted => {
            let mass: f64 = weights.iter().sum();
            if mass > eps {
                let shift = dot(upstream, pooled);
                frames
                    .iter_rows()
                    .map(|f| (dot(upstream, f) - shift) / mass)
                    .collect()
            } else {
                frames.iter_rows().map(|f| dot(upstream, f) / eps).collect()
            }
        }
    }
}

/// `a.b / (max(|a|, eps) * max(|b|, eps))`
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    dot(a, b) / (norm(a).max(eps) * norm(b).max(eps))
}

/// Cosine similarity and its gradient with respect to `a`.
pub fn cosine_grad(a: &[f64], b: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let na_raw = norm(a);
    let na = na_raw.max(eps);
    let nb = norm(b).max(eps);
    let cos = dot(a, b) / (na * nb);
    let grad = if na_raw > eps {
        let k = cos / (na_raw * na_raw);
        a.iter()
            .zip(b)
            .map(|(x, y)| y / (na * nb) - k * x)
            .collect()
    } else {
        b.iter().map(|y| y / (na * nb)).collect()
    };
    (cos, grad)
}

/// Most similar caption other than `own`, ties broken by lowest index.
pub fn hard_negative(
    pooled: &[f64],
    captions: &EmbeddingMatrix,
    own: usize,
    eps: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in captions.iter_rows().enumerate() {
        if j == own {
            continue;
        }
        let s = cosine(pooled, c, eps);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best
}

/// Mean of every caption except `own`; `None` for single-caption videos.
pub fn complement_caption(captions: &EmbeddingMatrix, own: usize) -> Option<Vec<f64>> {
    let k = captions.rows();
    if k < 2 {
        return None;
    }
    let mut out = vec![0.0; captions.dim()];
    for (j, c) in captions.iter_rows().enumerate() {
        if j != own {
            out.iter_mut().zip(c).for_each(|(o, x)| *o += x);
        }
    }
    let n = (k - 1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Some(out)
}

fn check_counts(
    pooled: &[PooledEmbedding],
    captions: &EmbeddingMatrix,
    video: usize,
) -> Result<()> {
    if pooled.is_empty() || pooled.len() != captions.rows() {
        return Err(Error::Shape(format!(
            "video {video}: {} pooled features for {} captions",
            pooled.len(),
            captions.rows()
        )));
    }
    if let Some(p) = pooled.iter().find(|p| p.vector.len() != captions.dim()) {
        return Err(Error::Shape(format!(
            "video {video}: pooled dim {} vs caption dim {}",
            p.vector.len(),
            captions.dim()
        )));
    }
    Ok(())
}

/// Margin ranking loss with in-video hard negatives. Single-event videos use
/// a negative similarity of 0.
pub fn sim_loss(
    pooled: &[Vec<PooledEmbedding>],
    captions: &[&EmbeddingMatrix],
    margin: f64,
    eps: f64,
) -> Result<f64> {
    batch_mean(pooled, captions, |b, p, c| {
        check_counts(p, c, b)?;
        let sum: f64 = p
            .iter()
            .enumerate()
            .map(|(i, pe)| {
                let pos = cosine(&pe.vector, c.row(i), eps);
                let neg = hard_negative(&pe.vector, c, i, eps).map_or(0.0, |(_, s)| s);
                (margin - pos + neg).max(0.0)
            })
            .sum();
        Ok(sum / p.len() as f64)
    })
}

/// Margin ranking on inverse-masked features: the positive is the mean of
/// the other captions and the negative is the event's own caption.
pub fn sim_loss_inverse(
    inverse_pooled: &[Vec<PooledEmbedding>],
    captions: &[&EmbeddingMatrix],
    margin: f64,
    eps: f64,
) -> Result<f64> {
    batch_mean(inverse_pooled, captions, |b, p, c| {
        check_counts(p, c, b)?;
        if c.rows() < 2 {
            return Ok(0.0);
        }
        let sum: f64 = p
            .iter()
            .enumerate()
            .map(|(i, pe)| {
                let target = complement_caption(c, i).expect("at least two captions");
                let pos = cosine(&pe.vector, &target, eps);
                let neg = cosine(&pe.vector, c.row(i), eps);
                (margin - pos + neg).max(0.0)
            })
            .sum();
        Ok(sum / p.len() as f64)
    })
}

/// `1 - cos` between inter-mask features and synthetic captions. Videos with
/// no inter-masks or no synthetic captions contribute 0 but still count in B.
pub fn aug_loss(
    inter_pooled: &[Vec<PooledEmbedding>],
    syn_captions: &[Option<&EmbeddingMatrix>],
    eps: f64,
) -> Result<f64> {
    if inter_pooled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if inter_pooled.len() != syn_captions.len() {
        return Err(Error::Shape(format!(
            "{} videos of inter features vs {} synthetic caption sets",
            inter_pooled.len(),
            syn_captions.len()
        )));
    }
    let mut total = 0.0;
    for (b, (p, syn)) in inter_pooled.iter().zip(syn_captions).enumerate() {
        let Some(syn) = syn else { continue };
        if p.len() != syn.rows() {
            return Err(Error::Shape(format!(
                "video {b}: {} inter features vs {} synthetic captions",
                p.len(),
                syn.rows()
            )));
        }
        if p.is_empty() {
            continue;
        }
        let sum: f64 = p
            .iter()
            .zip(syn.iter_rows())
            .map(|(pe, s)| 1.0 - cosine(&pe.vector, s, eps))
            .sum();
        total += sum / p.len() as f64;
    }
    Ok(total / inter_pooled.len() as f64)
}

/// Mean pairwise cosine between mask weight vectors of one video.
pub fn diversity_loss(masks: &[Mask], eps: f64) -> Result<f64> {
    if let Some(first) = masks.first() {
        if masks.iter().any(|m| m.len() != first.len()) {
            return Err(Error::Shape("masks of unequal length".into()));
        }
    }
    let k = masks.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            sum += cosine(&masks[a].weights, &masks[b].weights, eps);
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

fn batch_mean<F>(
    pooled: &[Vec<PooledEmbedding>],
    captions: &[&EmbeddingMatrix],
    mut per_video: F,
) -> Result<f64>
where
    F: FnMut(usize, &[PooledEmbedding], &EmbeddingMatrix) -> Result<f64>,
{
    if pooled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pooled.len() != captions.len() {
        return Err(Error::Shape(format!(
            "{} pooled videos vs {} caption sets",
            pooled.len(),
            captions.len()
        )));
    }
    let mut total = 0.0;
    for (b, (p, c)) in pooled.iter().zip(captions).enumerate() {
        total += per_video(b, p, c)?;
    }
    Ok(total / pooled.len() as f64)
}
