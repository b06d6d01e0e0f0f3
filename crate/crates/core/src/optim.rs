//! AdamW and the mini-batch training loop.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::VideoSample;
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::mask::{constrain, MaskParams, RawMaskParams};
use crate::objective::{ExternalLoss, Objective, ObjectiveConfig, ParamGrad, ParamSet};

pub use crate::objective::GradientSet;

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_STEPS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr = {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(
                "moment decay rates must lie in [0, 1)".into(),
            ));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be > 0 and weight decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamW,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(hyper: AdamW, n_params: usize) -> Self {
        Self {
            hyper,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
        }
    }

    /// One bias-corrected AdamW update with decoupled weight decay.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        let h = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= h.lr * h.weight_decay * *p;
            *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub optimizer: AdamW,
    pub batch_size: usize,
    pub steps: usize,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveConfig) -> Self {
        Self {
            objective,
            optimizer: AdamW::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            steps: DEFAULT_STEPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub history: Vec<StepRecord>,
    pub final_raw: ParamSet,
    pub final_params: Vec<Vec<MaskParams>>,
    /// Full-dataset loss at the initial and final parameters.
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub wall_clock: Duration,
}

impl TrainReport {
    /// One JSON object per step. Wall-clock time is not recorded, so equal
    /// runs produce equal bytes.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.history {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn final_widths(&self) -> Vec<Vec<f64>> {
        self.final_params
            .iter()
            .map(|v| v.iter().map(|p| p.width()).collect())
            .collect()
    }
}

fn flatten(params: &[RawMaskParams]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| [p.raw_center, p.raw_width])
        .collect()
}

fn flatten_grads(grads: &[ParamGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| [g.raw_center, g.raw_width])
        .collect()
}

fn unflatten(flat: &[f64], out: &mut [RawMaskParams]) {
    for (p, pair) in out.iter_mut().zip(flat.chunks_exact(2)) {
        p.raw_center = pair[0];
        p.raw_width = pair[1];
    }
}

pub fn train(dataset: &[VideoSample], cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    train_with(dataset, cfg, seed, None)
}

/// Trains per-event mask parameters from the fixed-uniform initialization.
///
/// Each video owns its parameters and its own AdamW state, which advances
/// only on steps where the video is in the batch. Batches are drawn from a
/// seeded shuffle, reshuffled every epoch.
pub fn train_with(
    dataset: &[VideoSample],
    cfg: &TrainConfig,
    seed: u64,
    external: Option<&dyn ExternalLoss>,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let started = Instant::now();
    let engine = cfg.objective.engine;
    let mut objective = Objective::new(cfg.objective)?;
    if let Some(ext) = external {
        objective = objective.with_external(ext);
    }

    let counts: Vec<usize> = dataset.iter().map(VideoSample::n_events).collect();
    let mut params = ParamSet::fixed_uniform(&counts, &engine)?;
    let mut states: Vec<OptimizerState> = counts
        .iter()
        .map(|&k| OptimizerState::new(cfg.optimizer, 2 * k))
        .collect();

    let all: Vec<&VideoSample> = dataset.iter().collect();
    let initial_loss = objective.forward(&all, &params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch_idx = &order[cursor..end];
        cursor = end;

        let videos: Vec<&VideoSample> = batch_idx.iter().map(|&i| &dataset[i]).collect();
        let batch_params = ParamSet {
            videos: batch_idx
                .iter()
                .map(|&i| params.videos[i].clone())
                .collect(),
        };
        let (loss, grads) = objective
            .backward(&videos, &batch_params)
            .map_err(|e| match e {
                Error::Numerical { term, detail } => {
                    Error::numerical(term, format!("{detail} (step {step})"))
                }
                // Initial widths are validated, so a collapse here comes from the updates.
                Error::DegenerateWidth(r) => Error::numerical(
                    "mask",
                    format!("width/temperature collapsed to {r:e} (step {step})"),
                ),
                other => other,
            })?;
        history.push(StepRecord { step, loss });

        for (&vi, g) in batch_idx.iter().zip(&grads.videos) {
            let mut flat = flatten(&params.videos[vi]);
            states[vi].step(&mut flat, &flatten_grads(g))?;
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(Error::numerical(
                    "optimizer",
                    format!("non-finite parameter for video {vi} (step {step})"),
                ));
            }
            unflatten(&flat, &mut params.videos[vi]);
        }
    }

    let final_loss = objective.forward(&all, &params)?;
    let final_params = params
        .videos
        .iter()
        .map(|v| v.iter().map(|r| constrain(*r, &engine)).collect())
        .collect::<Result<Vec<_>>>()?;

    Ok(TrainReport {
        seed,
        history,
        final_raw: params,
        final_params,
        initial_loss,
        final_loss,
        wall_clock: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = OptimizerState::new(AdamW::default(), 3);
        let mut p = vec![0.5, -1.0, 2.0];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let hyper = AdamW {
            lr: 1e-2,
            ..Default::default()
        };
        let mut st = OptimizerState::new(hyper, 2);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[3.0, -0.2]).unwrap();
        assert!((p[0] + 1e-2).abs() < 1e-8);
        assert!((p[1] - 1e-2).abs() < 1e-7);
    }

    #[test]
    fn second_step_follows_moment_recurrence() {
        let hyper = AdamW {
            lr: 0.1,
            ..Default::default()
        };
        let g = 0.7;
        let mut st = OptimizerState::new(hyper, 1);
        let mut p = vec![1.0];
        st.step(&mut p, &[g]).unwrap();
        let after_one = p[0];
        st.step(&mut p, &[g]).unwrap();

        // Reference recurrence, written out by hand.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let update = lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((after_one - p[0] - update).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let hyper = AdamW {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut st = OptimizerState::new(hyper, 1);
        let mut p = vec![2.0];
        st.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut st = OptimizerState::new(AdamW::default(), 2);
        assert!(matches!(st.step(&mut [0.0], &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn config_rejects_zero_steps() {
        let engine = crate::mask::EngineConfig::with_frames(8).unwrap();
        let mut cfg = TrainConfig::new(ObjectiveConfig::new(engine));
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
    }
}
