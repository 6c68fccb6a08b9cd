//! SGD with momentum, the stepped learning-rate schedule, and the epoch loop
//! with model selection by mean per-level accuracy.
//!
//! Determinism contract: with a fixed seed and single-threaded execution the
//! whole run is bit-reproducible. All randomness comes from named streams of
//! one seed, drawn in a fixed order — parameter init at build time, then per
//! epoch a `"shuffle"` stream indexed by epoch, then per step a `"dropout"`
//! stream indexed by (epoch, step).

use rand::seq::SliceRandom;

use crate::config::{fmt_f64, RunConfig};
use crate::data::Dataset;
use crate::error::AscError;
use crate::eval::evaluate;
use crate::loss::{total_loss, LossFlags, LossReport};
use crate::model::AscNet;
use crate::numerics::{Matrix2, ParamMap, Tape};
use crate::rng::stream_rng;
use crate::Result;

/// Optimization hyperparameters for one run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`
    /// (cumulative, strictly increasing).
    pub lr_milestones: Vec<usize>,
    pub momentum: f64,
    /// Evaluate on the test split every this many epochs (the final epoch is
    /// always evaluated).
    pub eval_every: usize,
    pub seed: u64,
    pub flags: LossFlags,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr_init: cfg.lr_init,
            lr_decay: cfg.lr_decay,
            lr_milestones: cfg.lr_milestones.clone(),
            momentum: 0.9,
            eval_every: cfg.eval_every,
            seed: cfg.seed,
            flags: LossFlags::from_run(cfg),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(AscError::Param("batch_size must be at least 1".into()));
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return Err(AscError::Param(format!(
                "lr_init must be positive and finite, got {}",
                self.lr_init
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(AscError::Param(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AscError::Param(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.eval_every == 0 {
            return Err(AscError::Param("eval_every must be at least 1".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AscError::Param(
                "lr_milestones must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate in force during `epoch` (0-based): the initial rate decayed
/// once per milestone already reached.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let hits = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr_init * cfg.lr_decay.powi(hits as i32)
}

/// Momentum buffers plus the step size currently in force.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    /// One buffer per parameter, shapes mirroring the parameters.
    pub velocity: ParamMap,
}

impl OptimizerState {
    /// Fresh state with zero velocity for every parameter.
    pub fn new(params: &ParamMap, lr: f64, momentum: f64) -> Self {
        let velocity = params
            .iter()
            .map(|(name, p)| (name.clone(), Matrix2::zeros(p.rows(), p.cols())))
            .collect();
        OptimizerState { lr, momentum, velocity }
    }

    /// State resuming from checkpointed velocity buffers.
    pub fn with_velocity(velocity: ParamMap, lr: f64, momentum: f64) -> Self {
        OptimizerState { lr, momentum, velocity }
    }
}

/// One heavy-ball update: `v ← momentum·v + g`, then `p ← p − lr·v`, for
/// every parameter. Every parameter must have a gradient and a velocity
/// buffer of its own shape.
pub fn sgd_step(params: &mut ParamMap, grads: &ParamMap, state: &mut OptimizerState) -> Result<()> {
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| AscError::Param(format!("missing gradient for parameter {name}")))?;
        let v = state
            .velocity
            .get_mut(name)
            .ok_or_else(|| AscError::Param(format!("missing velocity buffer for {name}")))?;
        if g.shape() != p.shape() || v.shape() != p.shape() {
            return Err(AscError::Shape {
                op: "sgd_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
        for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
            *vi = state.momentum * *vi + gi;
            *pi -= state.lr * *vi;
        }
    }
    Ok(())
}

/// One row of the training log: per-step means of the loss components over
/// the epoch, plus the test AUC when this epoch was evaluated.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub l_mse: f64,
    pub l_mmd: f64,
    pub l_ct: f64,
    pub l_cs: f64,
    pub total: f64,
    pub eval_auc: Option<f64>,
}

/// Renders the training log as CSV. `eval_auc` is empty on epochs without an
/// evaluation.
pub fn render_train_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,lr,l_mse,l_mmd,l_ct,l_cs,total,eval_auc\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            fmt_f64(r.lr),
            fmt_f64(r.l_mse),
            fmt_f64(r.l_mmd),
            fmt_f64(r.l_ct),
            fmt_f64(r.l_cs),
            fmt_f64(r.total),
            r.eval_auc.map(fmt_f64).unwrap_or_default(),
        ));
    }
    out
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model with the best test AUC seen at any evaluation (the initial
    /// model when `epochs` is 0).
    pub best: AscNet,
    pub best_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    /// The model after the last epoch.
    pub last: AscNet,
    /// Final momentum buffers, for resumable checkpoints.
    pub velocity: ParamMap,
    pub log: Vec<EpochRow>,
}

fn check_finite(report: &LossReport, epoch: usize, step: usize) -> Result<()> {
    for (component, v) in [
        ("l_mse", report.l_mse),
        ("l_mmd", report.l_mmd),
        ("l_ct", report.l_ct),
        ("l_cs", report.l_cs),
        ("total", report.total),
    ] {
        if !v.is_finite() {
            return Err(AscError::NonFinite {
                component: component.into(),
                epoch,
                step,
            });
        }
    }
    Ok(())
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch SGD over `train_set`,
/// evaluating on `test_set` every `eval_every` epochs (and on the final
/// epoch) and retaining the model with the best AUC. Aborts with a
/// diagnostic naming the offending component, epoch, and step if any loss
/// component becomes NaN or infinite.
pub fn train(
    mut model: AscNet,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(AscError::Param("training split is empty".into()));
    }
    if test_set.is_empty() {
        return Err(AscError::Param("test split is empty".into()));
    }
    for (ds, name) in [(train_set, "train"), (test_set, "test")] {
        if ds.n_levels != model.config.n_levels
            || ds.feat_dim != model.config.feat_dim
            || ds.n_classes != model.config.n_classes
        {
            return Err(AscError::Param(format!(
                "{name} split geometry (levels {}, dim {}, classes {}) does not match the model \
                 (levels {}, dim {}, classes {})",
                ds.n_levels,
                ds.feat_dim,
                ds.n_classes,
                model.config.n_levels,
                model.config.feat_dim,
                model.config.n_classes
            )));
        }
    }

    let mut opt = OptimizerState::new(&model.params, cfg.lr_init, cfg.momentum);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(AscNet, f64, usize)> = None;

    for epoch in 0..cfg.epochs {
        opt.lr = lr_at(epoch, cfg);
        let mut indices: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = stream_rng(cfg.seed, "shuffle", &[epoch as u64]);
        indices.shuffle(&mut shuffle_rng);

        let mut sums = LossReport { l_mse: 0.0, l_mmd: 0.0, l_ct: 0.0, l_cs: 0.0, total: 0.0 };
        let mut steps = 0usize;
        for (step, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Matrix2> =
                chunk.iter().map(|&i| &train_set.samples[i].features).collect();
            let labels: Vec<usize> =
                chunk.iter().map(|&i| train_set.samples[i].label).collect();
            let mut tape = Tape::new();
            let mut dropout_rng = stream_rng(cfg.seed, "dropout", &[epoch as u64, step as u64]);
            let trace = model.forward_train(&mut tape, &refs, &mut dropout_rng)?;
            let (root, report) = total_loss(&mut tape, &trace, &labels, &cfg.flags)?;
            check_finite(&report, epoch, step)?;
            let grads_all = tape.backward(root)?;
            let mut grads = ParamMap::new();
            for (name, &node) in &trace.param_nodes {
                grads.insert(name.clone(), grads_all.matrix_of(&tape, node));
            }
            sgd_step(&mut model.params, &grads, &mut opt)?;

            sums.l_mse += report.l_mse;
            sums.l_mmd += report.l_mmd;
            sums.l_ct += report.l_ct;
            sums.l_cs += report.l_cs;
            sums.total += report.total;
            steps += 1;
        }
        let inv = 1.0 / steps as f64;

        let eval_auc = if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let report = evaluate(&model, test_set)?;
            let improved = best.as_ref().map(|&(_, b, _)| report.auc > b).unwrap_or(true);
            if improved {
                best = Some((model.clone(), report.auc, epoch));
            }
            Some(report.auc)
        } else {
            None
        };

        log.push(EpochRow {
            epoch,
            lr: opt.lr,
            l_mse: sums.l_mse * inv,
            l_mmd: sums.l_mmd * inv,
            l_ct: sums.l_ct * inv,
            l_cs: sums.l_cs * inv,
            total: sums.total * inv,
            eval_auc,
        });
    }

    let (best_model, best_auc, best_epoch) = match best {
        Some((m, a, e)) => (m, Some(a), Some(e)),
        None => (model.clone(), None, None),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_auc,
        best_epoch,
        last: model,
        velocity: opt.velocity,
        log,
    })
}
