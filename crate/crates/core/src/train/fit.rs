use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{loss_bce_logits, loss_mse};
use crate::encoding::ActivationSpec;
use crate::error::{config_err, Error, Result};
use crate::grid::DecomposedGrid;
use crate::metrics::{build_iou_sets, iou, labels_from_logits, psnr, IouPointSets};
use crate::model::{count_fc_ops, Input, Model, ModelSpec};
use crate::rng::Rng;
use crate::sampler::{is_decomposable, product_indices, sample_iid, SamplePlan};
use crate::scalar::Scalar;
use crate::signal::{Signal, SignalKind};
use crate::tensor::Tensor;

/// How each epoch's training points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchMode {
    /// Every lattice point, every epoch.
    #[default]
    FullGrid,
    /// About `points` points per epoch. Split models draw decomposable
    /// batches, the baseline draws i.i.d. points.
    Sampled {
        points: usize,
        #[serde(default)]
        continuous: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to 1e-4 for sine networks and 1e-3 otherwise.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub batch: BatchMode,
    /// Defaults to BCE for occupancy and MSE for everything else.
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate every this many epochs; 0 only evaluates at the end.
    #[serde(default)]
    pub eval_every: usize,
    /// Points per IoU set.
    #[serde(default = "default_iou_points")]
    pub iou_points: usize,
    /// Surface band of the hard IoU set.
    #[serde(default = "default_iou_band")]
    pub iou_band: f64,
}

fn default_iou_points() -> usize {
    10_000
}
fn default_iou_band() -> f64 {
    0.05
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            learning_rate: None,
            adam: AdamConfig::default(),
            batch: BatchMode::FullGrid,
            loss: None,
            seed: 0,
            eval_every: 0,
            iou_points: default_iou_points(),
            iou_band: default_iou_band(),
        }
    }

    pub fn lr(mut self, lr: f64) -> Self {
        self.learning_rate = Some(lr);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn batch(mut self, batch: BatchMode) -> Self {
        self.batch = batch;
        self
    }

    pub fn resolved_lr(&self, spec: &ModelSpec) -> f64 {
        self.learning_rate.unwrap_or(match spec.activation {
            ActivationSpec::Sine { .. } => 1e-4,
            ActivationSpec::Relu => 1e-3,
        })
    }

    pub fn resolved_loss(&self, signal: &Signal) -> LossKind {
        self.loss.unwrap_or(match signal.kind() {
            SignalKind::Occupancy3d => LossKind::Bce,
            _ => LossKind::Mse,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(config_err!("learning_rate must be positive, got {lr}"));
            }
        }
        self.adam.validate()?;
        if let BatchMode::Sampled { points: 0, .. } = self.batch {
            return Err(config_err!("sampled batches need points > 0"));
        }
        if self.iou_points == 0 || !(self.iou_band > 0.0) {
            return Err(config_err!("iou_points and iou_band must be positive"));
        }
        Ok(())
    }
}

/// Quality of a model on its signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    /// Loss over the canonical lattice.
    pub loss: f64,
    pub psnr: Option<f64>,
    pub easy_iou: Option<f64>,
    pub hard_iou: Option<f64>,
}

impl EvalResult {
    /// PSNR for lattice signals, easy IoU for occupancy.
    pub fn metric(&self) -> f64 {
        self.psnr.or(self.easy_iou).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
    /// Training wall time since the start of the fit, evaluation excluded.
    pub seconds: f64,
}

/// Size and decomposability of one sampled batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub points: usize,
    pub decomposable: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Scalar = f64> {
    pub trace: Vec<TracePoint>,
    pub epoch_seconds: Vec<f64>,
    pub final_eval: EvalResult,
    pub learning_rate: f64,
    pub loss: LossKind,
    /// Mean forward FC multiply-adds per epoch.
    pub fc_ops_per_epoch: f64,
    /// Sampled split-model batches checked for decomposability, and how many
    /// passed.
    pub batches_checked: usize,
    pub batches_decomposable: usize,
    /// One entry per sampled split-model batch.
    pub batch_log: Vec<BatchLog>,
    pub model: Model<T>,
    /// Set by callers that write a checkpoint.
    pub checkpoint: Option<PathBuf>,
}

impl<T: Scalar> TrainReport<T> {
    /// Highest metric seen at any evaluation.
    pub fn best_metric(&self) -> f64 {
        self.trace.iter().map(|p| p.metric).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,metric,seconds")?;
        for p in &self.trace {
            writeln!(w, "{},{},{},{}", p.epoch, p.loss, p.metric, p.seconds)?;
        }
        Ok(())
    }
}

/// Trains a freshly initialized model.
pub fn fit<T: Scalar>(spec: &ModelSpec, signal: &Signal, config: &TrainConfig) -> Result<TrainReport<T>> {
    let model = Model::init(spec.clone(), &Rng::new(config.seed))?;
    fit_model(model, signal, config)
}

struct Context {
    kind: LossKind,
    iou_sets: Option<IouPointSets>,
    lattice: DecomposedGrid,
    points: Tensor,
    targets: Tensor,
}

/// Trains `model` in place of a fresh initialization.
pub fn fit_model<T: Scalar>(mut model: Model<T>, signal: &Signal, config: &TrainConfig) -> Result<TrainReport<T>> {
    config.validate()?;
    let spec = model.spec.clone();
    if spec.in_dim != signal.in_dim() || spec.out_dim != signal.out_dim() {
        return Err(config_err!(
            "model maps {} → {} but the signal is {} → {}",
            spec.in_dim,
            spec.out_dim,
            signal.in_dim(),
            signal.out_dim()
        ));
    }
    let root = Rng::new(config.seed);
    let mut rng = root.split(1 << 20);
    let ctx = context(signal, &spec, config, &root)?;
    let lr = config.resolved_lr(&spec);
    let targets_t: Tensor<T> = ctx.targets.cast();
    let extents = ctx.lattice.branch_extents();
    let dims = spec.branch_spec();

    let plan = match config.batch {
        BatchMode::Sampled { points, continuous } if spec.is_split() => {
            Some(SamplePlan::new(points, &extents, continuous)?)
        }
        _ => None,
    };

    let mut state = AdamState::new(&model.params);
    let mut report_trace = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut ops_total = 0u128;
    let mut batch_log = Vec::new();
    let mut elapsed = 0.0;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let (loss, grads, ops) = match config.batch {
            BatchMode::FullGrid => {
                let input = if spec.is_split() {
                    Input::Grid(&ctx.lattice)
                } else {
                    Input::Points(&ctx.points)
                };
                let ops = count_fc_ops(&spec, &if spec.is_split() { extents.clone() } else { vec![ctx.points.rows()] })?;
                let (l, g) = step(&model, input, &targets_t, ctx.kind)?;
                (l, g, ops)
            }
            BatchMode::Sampled { points, continuous } => {
                if let Some(plan) = &plan {
                    let batch = plan.sample(&ctx.lattice, &mut rng)?;
                    let pts = batch.grid.recompose();
                    batch_log.push(BatchLog {
                        epoch,
                        points: pts.rows(),
                        decomposable: is_decomposable(&pts, &dims),
                    });
                    let tgt: Tensor<T> = match &batch.indices {
                        Some(idx) => targets_t.gather_rows(&product_indices(idx, &extents))?,
                        None => signal.eval_points(&pts).cast(),
                    };
                    let ops = count_fc_ops(&spec, &batch.grid.branch_extents())?;
                    let (l, g) = step(&model, Input::Grid(&batch.grid), &tgt, ctx.kind)?;
                    (l, g, ops)
                } else {
                    let (pts, tgt) = if continuous {
                        let k = spec.in_dim;
                        let data = (0..points * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
                        let pts = Tensor::from_vec(vec![points, k], data)?;
                        let tgt = signal.eval_points(&pts).cast();
                        (pts, tgt)
                    } else {
                        let idx = sample_iid(ctx.points.rows(), points, &mut rng);
                        (ctx.points.gather_rows(&idx)?, targets_t.gather_rows(&idx)?)
                    };
                    let ops = count_fc_ops(&spec, &[pts.rows()])?;
                    let (l, g) = step(&model, Input::Points(&pts), &tgt, ctx.kind)?;
                    (l, g, ops)
                }
            }
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        adam_step(&mut model.params, &grads, &mut state, lr, &config.adam);
        ops_total += ops;
        let secs = start.elapsed().as_secs_f64();
        epoch_seconds.push(secs);
        elapsed += secs;
        if config.eval_every > 0 && epoch % config.eval_every == 0 && epoch != config.epochs {
            let e = eval_with(&model, signal, &ctx)?;
            report_trace.push(TracePoint {
                epoch,
                loss: e.loss,
                metric: e.metric(),
                seconds: elapsed,
            });
        }
    }
    let final_eval = eval_with(&model, signal, &ctx)?;
    report_trace.push(TracePoint {
        epoch: config.epochs,
        loss: final_eval.loss,
        metric: final_eval.metric(),
        seconds: elapsed,
    });
    Ok(TrainReport {
        trace: report_trace,
        epoch_seconds,
        final_eval,
        learning_rate: lr,
        loss: ctx.kind,
        fc_ops_per_epoch: if config.epochs == 0 {
            0.0
        } else {
            ops_total as f64 / config.epochs as f64
        },
        batches_checked: batch_log.len(),
        batches_decomposable: batch_log.iter().filter(|b| b.decomposable).count(),
        batch_log,
        model,
        checkpoint: None,
    })
}

fn context(signal: &Signal, spec: &ModelSpec, config: &TrainConfig, root: &Rng) -> Result<Context> {
    let grid = signal.canonical_grid().with_branches(&spec.branch_spec())?;
    let iou_sets = match signal.shape() {
        Some(shape) => Some(build_iou_sets(
            &shape,
            config.iou_points,
            config.iou_band,
            &mut root.split((1 << 20) + 1),
        )?),
        None => None,
    };
    Ok(Context {
        kind: config.resolved_loss(signal),
        iou_sets,
        lattice: grid.decompose(),
        points: grid.points(),
        targets: signal.lattice_values(),
    })
}

fn step<T: Scalar>(
    model: &Model<T>,
    input: Input<'_>,
    targets: &Tensor<T>,
    kind: LossKind,
) -> Result<(f64, crate::model::ModelParams<T>)> {
    let cache = model.forward_cached(input)?;
    let (loss, d_out) = match kind {
        LossKind::Mse => loss_mse(&cache.output, targets)?,
        LossKind::Bce => loss_bce_logits(&cache.output, targets)?,
    };
    Ok((loss, model.backward(&cache, &d_out)?))
}

fn eval_with<T: Scalar>(model: &Model<T>, signal: &Signal, ctx: &Context) -> Result<EvalResult> {
    let out: Tensor = if model.spec.is_split() {
        model.forward_coordx(&ctx.lattice)?.cast()
    } else {
        model.forward_points(&ctx.points)?.cast()
    };
    let out = out.reshape(ctx.targets.shape())?;
    let loss = match ctx.kind {
        LossKind::Mse => loss_mse(&out, &ctx.targets)?.0,
        LossKind::Bce => loss_bce_logits(&out, &ctx.targets)?.0,
    };
    let mut result = EvalResult {
        loss,
        psnr: None,
        easy_iou: None,
        hard_iou: None,
    };
    match &ctx.iou_sets {
        Some(sets) => {
            let score = |pts: &Tensor, truth: &[bool]| -> Result<f64> {
                let logits: Tensor = model.forward_points(pts)?.cast();
                iou(&labels_from_logits(logits.data()), truth)
            };
            result.easy_iou = Some(score(&sets.easy, &sets.easy_labels)?);
            result.hard_iou = Some(score(&sets.hard, &sets.hard_labels)?);
        }
        None if signal.kind() != SignalKind::Occupancy3d => {
            result.psnr = Some(psnr(out.data(), ctx.targets.data())?);
        }
        None => {}
    }
    Ok(result)
}

/// Evaluates `model` on `signal` with the metric sets `config` describes.
pub fn evaluate<T: Scalar>(model: &Model<T>, signal: &Signal, config: &TrainConfig) -> Result<EvalResult> {
    let ctx = context(signal, &model.spec, config, &Rng::new(config.seed))?;
    eval_with(model, signal, &ctx)
}
