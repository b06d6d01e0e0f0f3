//! Central finite differences and a randomized analytic-vs-numeric gradient
//! suite covering each loss term on its own and all of them together.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::VideoSample;
use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::loss::{LossConfig, PoolingMode};
use crate::mask::{EngineConfig, MaskKind, RawMaskParams};
use crate::objective::{GradientSet, Objective, ObjectiveConfig, ParamGrad, ParamSet};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `(f(x + h) - f(x - h)) / 2h` for every scalar parameter, others held fixed.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ParamSet, h: f64) -> Result<GradientSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut flat = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let x = params.get(idx);
        probe.set(idx, x + h);
        let up = loss_fn(&probe)?;
        probe.set(idx, x - h);
        let down = loss_fn(&probe)?;
        probe.set(idx, x);
        flat.push((up - down) / (2.0 * h));
    }
    Ok(GradientSet::from_flat(params, &flat))
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Sim,
    SimInverse,
    Aug,
    Diversity,
    Total,
}

impl Term {
    pub const ALL: [Term; 5] = [
        Term::Sim,
        Term::SimInverse,
        Term::Aug,
        Term::Diversity,
        Term::Total,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Term::Sim => "sim",
            Term::SimInverse => "sim_inverse",
            Term::Aug => "aug",
            Term::Diversity => "diversity",
            Term::Total => "total",
        }
    }

    /// Loss settings that leave only this term in the objective.
    pub fn isolate(self, base: LossConfig) -> LossConfig {
        let none = LossConfig {
            use_sim: false,
            use_inverse: false,
            alpha_aug: 0.0,
            lambda_div: 0.0,
            ..base
        };
        match self {
            Term::Sim => LossConfig {
                use_sim: true,
                ..none
            },
            Term::SimInverse => LossConfig {
                use_inverse: true,
                ..none
            },
            Term::Aug => LossConfig {
                alpha_aug: 1.0,
                ..none
            },
            Term::Diversity => LossConfig {
                lambda_div: 1.0,
                ..none
            },
            Term::Total => LossConfig {
                use_sim: true,
                use_inverse: true,
                alpha_aug: 0.25,
                lambda_div: 1.0,
                ..base
            },
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub kind: MaskKind,
    pub h: f64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            kind: MaskKind::Gaussian,
            h: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TermResult {
    pub term: Term,
    pub max_rel_err: f64,
    pub worst_trial: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub kind: MaskKind,
    /// True when the checked gradient is the hard-binary straight-through
    /// surrogate rather than the derivative of the true forward.
    pub surrogate: bool,
    pub trials: usize,
    pub terms: Vec<TermResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.passed)
    }
}

/// A random small problem: up to 2 videos, up to 5 events, up to 32 frames,
/// up to 8 embedding dims, with synthetic captions on every multi-event video.
///
/// Widths are drawn in roughly `[0.27, 0.73]`. Much narrower masks put most
/// gradients near zero, where a relative error is dominated by the
/// finite-difference truncation term rather than by the analytic gradient.
pub struct Instance {
    pub videos: Vec<VideoSample>,
    pub params: ParamSet,
    pub config: ObjectiveConfig,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    EmbeddingMatrix::new(rows, dim, data).expect("finite normal samples")
}

pub fn random_instance(rng: &mut ChaCha8Rng, kind: MaskKind) -> Instance {
    let n_videos = rng.random_range(1..=2);
    let n_frames = rng.random_range(8..=32);
    let dim = rng.random_range(2..=8);
    let engine = EngineConfig::with_frames(n_frames).expect("valid engine");
    let mut videos = Vec::new();
    let mut params = ParamSet::default();
    for v in 0..n_videos {
        let k = rng.random_range(1..=5);
        let synthetic = (k >= 2).then(|| normal_matrix(rng, k - 1, dim));
        videos.push(VideoSample {
            id: format!("gc{v}"),
            frames: normal_matrix(rng, n_frames, dim),
            captions: normal_matrix(rng, k, dim),
            synthetic,
            segments: None,
            hidden_segments: Vec::new(),
        });
        params.videos.push(
            (0..k)
                .map(|_| {
                    RawMaskParams::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))
                })
                .collect(),
        );
    }
    let pooling = if rng.random_bool(0.5) {
        PoolingMode::PlainMean
    } else {
        PoolingMode::MaskWeighted
    };
    let mut config = ObjectiveConfig::new(engine);
    config.kind = kind;
    config.loss.pooling = pooling;
    config.w_inter = rng.random_range(0.2..0.8);
    Instance {
        videos,
        params,
        config,
    }
}

/// Central differences of the batch loss. The batch loss is the mean of
/// per-video losses and each video's parameters enter only its own term, so
/// every video is differenced in isolation and scaled by `1/B`. This keeps
/// the other videos' rounding noise out of each quotient.
pub fn numeric_gradient(
    objective: &Objective<'_>,
    videos: &[&VideoSample],
    params: &ParamSet,
    h: f64,
) -> Result<GradientSet> {
    let b = videos.len() as f64;
    let mut out = GradientSet::default();
    for (video, raw) in videos.iter().zip(&params.videos) {
        let single = ParamSet {
            videos: vec![raw.clone()],
        };
        let batch = [*video];
        let g = if objective.config().kind == MaskKind::HardBinary {
            finite_diff_grad(
                |p| Ok(objective.forward_anchored(&batch, p, &single)?.total),
                &single,
                h,
            )?
        } else {
            finite_diff_grad(|p| Ok(objective.forward(&batch, p)?.total), &single, h)?
        };
        out.videos.extend(g.videos.into_iter().map(|v| {
            v.into_iter()
                .map(|d| ParamGrad {
                    raw_center: d.raw_center / b,
                    raw_width: d.raw_width / b,
                })
                .collect::<Vec<_>>()
        }));
    }
    Ok(out)
}

/// Max relative error between analytic and numeric gradients for one term
/// on one instance.
pub fn check_instance(inst: &Instance, term: Term, h: f64) -> Result<f64> {
    let mut cfg = inst.config;
    cfg.loss = term.isolate(cfg.loss);
    let objective = Objective::new(cfg)?;
    let videos: Vec<&VideoSample> = inst.videos.iter().collect();
    let (_, analytic) = objective.backward(&videos, &inst.params)?;
    let numeric = numeric_gradient(&objective, &videos, &inst.params, h)?;
    Ok(analytic
        .flat()
        .iter()
        .zip(numeric.flat())
        .map(|(a, n)| relative_error(*a, n))
        .fold(0.0, f64::max))
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = vec![(0.0f64, 0usize); Term::ALL.len()];
    for trial in 0..opts.trials {
        let inst = random_instance(&mut rng, opts.kind);
        for (t, term) in Term::ALL.iter().enumerate() {
            let err = check_instance(&inst, *term, opts.h)?;
            if err > worst[t].0 {
                worst[t] = (err, trial);
            }
        }
    }
    Ok(GradcheckReport {
        kind: opts.kind,
        surrogate: opts.kind == MaskKind::HardBinary,
        trials: opts.trials,
        terms: Term::ALL
            .iter()
            .zip(worst)
            .map(|(term, (err, trial))| TermResult {
                term: *term,
                max_rel_err: err,
                worst_trial: trial,
                passed: err <= opts.tolerance,
            })
            .collect(),
    })
}
