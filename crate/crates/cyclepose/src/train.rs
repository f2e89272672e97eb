//! Adam optimizer, step learning-rate schedule, and the training loop.

use crate::autodiff::{real, Graph, Real};
use crate::data::{make_split, mix_seed, DataConfig, Dataset};
use crate::distill::{LossPlan, LossValues};
use crate::eval::{evaluate, EvalReport};
use crate::model::{Mode, Model, ModelConfig, Param};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Training budget and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs at which the learning rate is multiplied by the decay factor.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Seed for epoch shuffling and dropout streams.
    pub seed: u64,
    /// Evaluate every this many epochs (always once more at the end).
    pub eval_every: usize,
    /// Where the best checkpoint is written when training via the CLI.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Desk-scale budget; the decay points keep the 200/300 and 260/300
        // epoch ratios of the full-scale schedule.
        TrainConfig {
            epochs: 60,
            steps_per_epoch: 100,
            batch_size: 8,
            base_lr: 1e-3,
            lr_decay_epochs: vec![40, 52],
            lr_decay_factor: 0.1,
            seed: 0,
            eval_every: 10,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, steps_per_epoch, batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lr_decay_factor) || self.lr_decay_factor == 0.0 {
            return Err(Error::Config(format!(
                "lr_decay_factor {} must be in (0, 1)",
                self.lr_decay_factor
            )));
        }
        let mut prev: Option<usize> = None;
        for &e in &self.lr_decay_epochs {
            if e >= self.epochs {
                return Err(Error::Config(format!(
                    "decay epoch {e} not below epochs {}",
                    self.epochs
                )));
            }
            if let Some(p) = prev {
                if e <= p {
                    return Err(Error::Config("decay epochs must be strictly increasing".into()));
                }
            }
            prev = Some(e);
        }
        Ok(())
    }
}

/// Step schedule: the base rate decays by `lr_decay_factor` at each epoch in
/// `lr_decay_epochs` (inclusive).
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.base_lr * cfg.lr_decay_factor.powi(decays as i32)
}

/// Adam with bias correction. State tensors align with the model's parameter
/// order.
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: &[Param<T>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            t: 0,
        }
    }

    /// One bias-corrected update. `grads[i]` is `None` when parameter `i`
    /// received no gradient this step (treated as zero).
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Option<&[T]>], lr: f64) {
        self.t += 1;
        let b1 = real::<T>(self.beta1);
        let b2 = real::<T>(self.beta2);
        let one = T::one();
        let corr1 = real::<T>(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = real::<T>(1.0 - self.beta2.powi(self.t as i32));
        let lr_t = real::<T>(lr);
        let eps = real::<T>(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = grads[i] else {
                // Zero gradient still decays the moments.
                for (m, v) in self.m[i].iter_mut().zip(self.v[i].iter_mut()) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                }
                for (w, (m, v)) in p.data.iter_mut().zip(self.m[i].iter().zip(&self.v[i])) {
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps);
                }
                continue;
            };
            for (j, w) in p.data.iter_mut().enumerate() {
                let gj = grad[j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = b1 * *m + (one - b1) * gj;
                *v = b2 * *v + (one - b2) * gj * gj;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// One training-log line; serialized as JSON-lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_pose: f64,
    pub l_pose_cycles: Vec<f64>,
    pub l_kt: f64,
    pub l_vt: f64,
    pub total: f64,
    pub lr: f64,
}

impl StepRecord {
    fn new(step: usize, lr: f64, v: &LossValues) -> Self {
        StepRecord {
            step,
            l_pose: v.l_pose,
            l_pose_cycles: v.l_pose_cycles.clone(),
            l_kt: v.l_kt,
            l_vt: v.l_vt,
            total: v.total,
            lr,
        }
    }
}

/// Everything a finished run produces.
pub struct TrainResult<T: Real> {
    /// Model state after the final step.
    pub model: Model<T>,
    /// Serialized checkpoint of the best model by cycle-1 PCK@0.1.
    pub best_checkpoint: Vec<u8>,
    pub best_eval: EvalReport,
    pub final_eval: EvalReport,
    pub log: Vec<StepRecord>,
    pub evals: Vec<EvalReport>,
}

/// Train a model with the given loss plan. For each batch: cycled forward,
/// loss assembly, backward, Adam step. Periodically evaluates both cycle-1
/// (deployment) and cycle-N (teacher) predictions on the validation split and
/// tracks the best checkpoint by cycle-1 PCK@0.1. When `out_dir` is given,
/// writes `log.jsonl`, `evals.jsonl` and `checkpoint.bin` there.
pub fn train<T: Real>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data_cfg: &DataConfig,
    plan: &LossPlan,
    out_dir: Option<&Path>,
) -> Result<TrainResult<T>> {
    train_cfg.validate()?;
    let (train_set, val_set) = make_split(data_cfg)?;
    let mut model: Model<T> = Model::init(model_cfg.clone())?;
    train_with_data(&mut model, train_cfg, &train_set, &val_set, plan, out_dir).map(
        |(best_checkpoint, best_eval, final_eval, log, evals)| TrainResult {
            model,
            best_checkpoint,
            best_eval,
            final_eval,
            log,
            evals,
        },
    )
}

type LoopOutput = (Vec<u8>, EvalReport, EvalReport, Vec<StepRecord>, Vec<EvalReport>);

fn train_with_data<T: Real>(
    model: &mut Model<T>,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    plan: &LossPlan,
    out_dir: Option<&Path>,
) -> Result<LoopOutput> {
    let n_cycles = model.config.num_cycles;
    let batch = train_cfg.batch_size;
    let mut adam = Adam::new(model.params());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(train_cfg.seed, 0xD0));

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(
                dir.join("log.jsonl"),
            )?))
        }
        None => None,
    };
    let mut eval_file = match out_dir {
        Some(dir) => Some(std::io::BufWriter::new(std::fs::File::create(
            dir.join("evals.jsonl"),
        )?)),
        None => None,
    };

    let mut log = Vec::with_capacity(train_cfg.epochs * train_cfg.steps_per_epoch);
    let mut evals = Vec::new();
    let mut best: Option<(f64, Vec<u8>, EvalReport)> = None;
    let mut step = 0usize;

    let run_eval = |model: &Model<T>,
                    step: usize,
                    evals: &mut Vec<EvalReport>,
                    best: &mut Option<(f64, Vec<u8>, EvalReport)>,
                    eval_file: &mut Option<std::io::BufWriter<std::fs::File>>|
     -> Result<()> {
        let mut report = evaluate(model, val_set, n_cycles, batch)?;
        report.steps = step;
        if let Some(f) = eval_file {
            serde_json::to_writer(&mut *f, &report)?;
            f.write_all(b"\n")?;
        }
        let score = report.pck_01;
        let improved = best.as_ref().is_none_or(|(b, _, _)| score > *b);
        if improved {
            let bytes = crate::checkpoint::to_bytes(model)?;
            *best = Some((score, bytes, report.clone()));
        }
        evals.push(report);
        Ok(())
    };

    for epoch in 0..train_cfg.epochs {
        let lr = lr_schedule(epoch, train_cfg);
        let order = train_set.epoch_order(train_cfg.seed, epoch);
        for s in 0..train_cfg.steps_per_epoch {
            let indices: Vec<usize> = (0..batch)
                .map(|j| order[(s * batch + j) % order.len()])
                .collect();
            let (images, gt, _) = train_set.batch::<T>(&indices);

            let mut g: Graph<T> = Graph::unchecked();
            let binding = model.bind(&mut g, true);
            let mut mode = if model.config.dropout > 0.0 {
                Mode::Train(&mut dropout_rng)
            } else {
                Mode::Eval
            };
            let trace = model.forward_images(&mut g, &binding, &images, batch, n_cycles, &mut mode)?;
            let gt_id = g.constant(
                gt,
                &[
                    batch,
                    model.config.num_keypoints,
                    model.config.heatmap_size[0],
                    model.config.heatmap_size[1],
                ],
            )?;
            let breakdown = plan.assemble(
                &mut g,
                &trace,
                gt_id,
                model.config.alpha_kt,
                model.config.alpha_vt,
                model.config.detach_teacher,
            )?;
            let values = breakdown.values(&g);
            if !values.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    lr,
                    detail: format!(
                        "l_pose={} l_kt={} l_vt={} per_cycle={:?}",
                        values.l_pose, values.l_kt, values.l_vt, values.l_pose_cycles
                    ),
                });
            }
            g.backward(breakdown.total)?;

            let grads: Vec<Option<&[T]>> =
                binding.ids.iter().map(|&id| g.grad(id)).collect();
            adam.step(model.params_mut(), &grads, lr);

            let record = StepRecord::new(step, lr, &values);
            if let Some(f) = &mut log_file {
                serde_json::to_writer(&mut *f, &record)?;
                f.write_all(b"\n")?;
            }
            log.push(record);
            step += 1;
        }

        let is_last = epoch + 1 == train_cfg.epochs;
        if !is_last && train_cfg.eval_every > 0 && (epoch + 1) % train_cfg.eval_every == 0 {
            run_eval(model, step, &mut evals, &mut best, &mut eval_file)?;
        }
    }

    run_eval(model, step, &mut evals, &mut best, &mut eval_file)?;
    let final_eval = evals.last().cloned().expect("final eval always runs");
    let (_, best_checkpoint, best_eval) = best.expect("at least one eval ran");

    if let Some(f) = &mut log_file {
        f.flush()?;
    }
    if let Some(f) = &mut eval_file {
        f.flush()?;
    }
    if let Some(dir) = out_dir {
        let path = train_cfg
            .checkpoint_path
            .clone()
            .unwrap_or_else(|| dir.join("checkpoint.bin"));
        std::fs::write(path, &best_checkpoint)?;
    }
    Ok((best_checkpoint, best_eval, final_eval, log, evals))
}
