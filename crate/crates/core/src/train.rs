//! Quantization-aware training with distillation.
//!
//! Each mini-batch: fake-quantize the student, compute the task loss, the
//! distillation loss against the (ensemble-averaged) frozen teachers, combine
//! them according to [`Mode`], back-propagate, take a momentum-SGD step on the
//! network and, for the learnable modes, a plain gradient step on both
//! balancing scalars computed from the same batch losses.

use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{self, GorTerms, KdConfig, LossBundle, StaticWeight};
use crate::model::{LayerVars, ModelParams, Role, TeacherEnsemble};
use crate::quant::{QuantConfig, QuantPlan};
use crate::regularizer::{gor_step, GorState, DEFAULT_ALPHA_LR};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// Full-precision training on the task loss, then one calibration and
    /// quantized evaluation.
    PtqEval,
    QatOnly,
    QatKdStatic { alpha: f64 },
    QatKdGor,
    QatEkdGor { teachers: usize },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::PtqEval => "ptq_eval",
            Mode::QatOnly => "qat_only",
            Mode::QatKdStatic { .. } => "qat_kd_static",
            Mode::QatKdGor => "qat_kd_gor",
            Mode::QatEkdGor { .. } => "qat_ekd_gor",
        }
    }

    /// Number of teachers the mode consumes.
    pub fn teachers(&self) -> usize {
        match self {
            Mode::PtqEval | Mode::QatOnly => 0,
            Mode::QatKdStatic { .. } | Mode::QatKdGor => 1,
            Mode::QatEkdGor { teachers } => *teachers,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Mode::QatKdGor | Mode::QatEkdGor { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Student layer widths, input first.
    pub widths: Vec<usize>,
    pub lr_theta: f64,
    pub momentum: f64,
    pub lr_alpha: f64,
    pub kd: KdConfig,
    pub quant: QuantConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::QatKdGor,
            widths: vec![2, 16, 2],
            lr_theta: 0.05,
            momentum: 0.9,
            lr_alpha: DEFAULT_ALPHA_LR,
            kd: KdConfig::default(),
            quant: QuantConfig::new(4, 4),
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr_theta > 0.0) || !(self.lr_alpha > 0.0) {
            return bad(format!(
                "learning rates must be positive (eta_theta={}, eta_alpha={})",
                self.lr_theta, self.lr_alpha
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        match self.mode {
            Mode::QatKdStatic { alpha } => {
                StaticWeight::new(alpha).map_err(|e| Error::Config(e.to_string()))?;
            }
            Mode::QatEkdGor { teachers: 0 } => return bad("qat_ekd_gor needs n >= 1".into()),
            _ => {}
        }
        if self.mode.teachers() > 0 {
            self.kd.validate()?;
        }
        self.quant.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss_task: f64,
    pub loss_kd: f64,
    pub loss_total: f64,
    pub w_task: f64,
    pub w_kd: f64,
    pub alpha_task: Option<f64>,
    pub alpha_kd: Option<f64>,
    pub eq_residual: Option<f64>,
    /// Filled on the last step of each epoch.
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,epoch,loss_task,loss_kd,loss_total,w_task,w_kd,\
alpha_task,alpha_kd,eq_residual,train_acc,test_acc";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(mut w: impl Write, records: &[MetricsRecord]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.loss_task,
            r.loss_kd,
            r.loss_total,
            r.w_task,
            r.w_kd,
            opt(r.alpha_task),
            opt(r.alpha_kd),
            opt(r.eq_residual),
            opt(r.train_acc),
            opt(r.test_acc),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub steps: u64,
    pub epochs: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Full-precision accuracy before quantization (post-training mode).
    pub fp_test_acc: Option<f64>,
    pub alpha_task: f64,
    pub alpha_kd: f64,
    pub teacher_digest: Option<String>,
    pub config: TrainConfig,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: ModelParams,
    pub quant: Option<QuantPlan>,
    pub gor: GorState,
    pub metrics: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.student.clone(),
            gor: Some(self.gor),
            quant: self.quant.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("training diverged at step {step}: {diagnostic}")]
    Diverged {
        step: u64,
        diagnostic: String,
        /// State before the offending update.
        last_good: Box<Checkpoint>,
    },
}

/// How the two losses are combined for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Task,
    Static(StaticWeight),
    Gor(GorState),
}

/// A recorded and back-propagated training step.
#[derive(Debug)]
pub struct StepGraph {
    pub tape: Tape,
    pub params: Vec<LayerVars>,
    pub loss_task: Var,
    pub loss_kd: Option<Var>,
    pub total: Var,
    pub gor: Option<GorTerms>,
    pub bundle: LossBundle,
}

impl StepGraph {
    /// `(weight, bias)` gradients per layer.
    pub fn param_grads(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.params
            .iter()
            .map(|v| {
                (
                    self.tape.grad(v.weight).unwrap_or_default().to_vec(),
                    self.tape.grad(v.bias).unwrap_or_default().to_vec(),
                )
            })
            .collect()
    }
}

/// Records the forward pass and objective for one batch and runs backward.
#[allow(clippy::too_many_arguments)]
pub fn build_step(
    student: &ModelParams,
    plan: Option<&mut QuantPlan>,
    observe_activations: bool,
    x: &Tensor,
    y: &[usize],
    teacher_logits: Option<&Tensor>,
    objective: Objective,
    kd: &KdConfig,
) -> Result<StepGraph> {
    let mut tape = Tape::new();
    let params = student.record(&mut tape);
    let xv = tape.constant(x.clone());
    let logits = student.forward_on_tape(&mut tape, &params, xv, plan, observe_activations)?;
    let loss_task = losses::task_loss(&mut tape, logits, y)?;
    let loss_kd = match (objective, teacher_logits) {
        (Objective::Task, _) => None,
        (_, Some(t)) => Some(losses::kd_loss(&mut tape, logits, t, kd)?),
        (_, None) => {
            return Err(Error::Config("distillation objective without teacher logits".into()))
        }
    };
    let mut gor = None;
    let (total, w_task, w_kd) = match (objective, loss_kd) {
        (Objective::Static(w), Some(lk)) => {
            let (wt, wk) = w.weights();
            (losses::static_joint(&mut tape, loss_task, lk, w)?, wt, wk)
        }
        (Objective::Gor(state), Some(lk)) => {
            let terms = losses::gor_joint(&mut tape, loss_task, lk, &state)?;
            gor = Some(terms);
            let (wt, wk) = state.weights();
            (terms.total, wt, wk)
        }
        _ => (loss_task, 1.0, 0.0),
    };
    let bundle = LossBundle {
        loss_task: tape.item(loss_task)?,
        loss_kd: match loss_kd {
            Some(v) => tape.item(v)?,
            None => 0.0,
        },
        loss_total: tape.item(total)?,
        w_task,
        w_kd,
    };
    bundle.check_finite()?;
    tape.backward(total)?;
    Ok(StepGraph {
        tape,
        params,
        loss_task,
        loss_kd,
        total,
        gor,
        bundle,
    })
}

/// Distillation targets for a batch: the single teacher's logits in
/// single-teacher modes, the ensemble mean otherwise.
pub fn teacher_targets(mode: Mode, teachers: &TeacherEnsemble, x: &Tensor) -> Result<Tensor> {
    let mut logits = teachers.logits(x)?;
    match mode {
        Mode::QatEkdGor { .. } => losses::ensemble_logits(&logits),
        _ => Ok(logits.swap_remove(0)),
    }
}

/// Fraction of argmax-correct predictions; ties go to the lowest class.
pub fn evaluate(model: &ModelParams, split: &Split, plan: Option<&QuantPlan>) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    const CHUNK: usize = 512;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, y) = split.batch(chunk);
        let pred = model.forward(&x, plan)?.argmax_rows();
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Runs up to `cfg.warmup_batches` batches (in data order) through the
/// student to initialise the activation ranges.
pub fn calibrate_activations(
    student: &ModelParams,
    plan: &mut QuantPlan,
    split: &Split,
    batch_size: usize,
    warmup: usize,
) -> Result<()> {
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch_size).take(warmup.max(1)) {
        let (x, _) = split.batch(chunk);
        let mut tape = Tape::new();
        let vars = student.record(&mut tape);
        let xv = tape.constant(x);
        student.forward_on_tape(&mut tape, &vars, xv, Some(plan), true)?;
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    teachers: Option<&TeacherEnsemble>,
) -> std::result::Result<TrainOutcome, TrainError> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.widths.first() != Some(&data.features()) || cfg.widths.last() != Some(&data.classes) {
        return Err(Error::Config(format!(
            "student widths {:?} do not match data ({} features, {} classes)",
            cfg.widths,
            data.features(),
            data.classes
        ))
        .into());
    }
    let need = cfg.mode.teachers();
    let teachers = match (need, teachers) {
        (0, _) => None,
        (n, Some(t)) if t.len() == n => Some(t),
        (n, Some(t)) => {
            return Err(Error::Config(format!(
                "{} expects {n} teacher(s), got {}",
                cfg.mode.name(),
                t.len()
            ))
            .into())
        }
        (_, None) => {
            return Err(Error::Config(format!("{} needs a teacher", cfg.mode.name())).into())
        }
    };
    if let Some(t) = teachers {
        if t.classes() != data.classes || t.teachers()[0].input_dim() != data.features() {
            return Err(Error::Config(format!(
                "teacher output has {} classes, data has {}",
                t.classes(),
                data.classes
            ))
            .into());
        }
    }
    let teacher_digest = teachers.map(TeacherEnsemble::digest);

    let mut student = ModelParams::build_mlp(&cfg.widths, cfg.seed, Role::Student)?;
    let quantize_during_training = cfg.mode != Mode::PtqEval && !cfg.quant.is_full_precision();
    let mut plan = if quantize_during_training {
        let mut p = QuantPlan::new(student.layers.len(), &cfg.quant)?;
        calibrate_activations(&student, &mut p, &data.train, cfg.batch_size, cfg.quant.warmup_batches)?;
        Some(p)
    } else {
        None
    };

    let mut gor = GorState::new(cfg.lr_alpha);
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = student
        .layers
        .iter()
        .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::new();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.train.batch(chunk);
            let targets = teachers.map(|t| teacher_targets(cfg.mode, t, &x)).transpose()?;
            let objective = match cfg.mode {
                Mode::PtqEval | Mode::QatOnly => Objective::Task,
                Mode::QatKdStatic { alpha } => Objective::Static(StaticWeight::new(alpha)?),
                Mode::QatKdGor | Mode::QatEkdGor { .. } => Objective::Gor(gor),
            };
            let plan_before = plan.clone();
            let graph = match build_step(
                &student,
                plan.as_mut(),
                true,
                &x,
                &y,
                targets.as_ref(),
                objective,
                &cfg.kd,
            ) {
                Ok(g) => g,
                Err(Error::NonFinite(diagnostic)) => {
                    return Err(TrainError::Diverged {
                        step,
                        diagnostic,
                        last_good: snapshot(&student, gor, &plan_before),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let grads = graph.param_grads();
            if grads.iter().flat_map(|(w, b)| w.iter().chain(b)).any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    step,
                    diagnostic: "non-finite parameter gradient".into(),
                    last_good: snapshot(&student, gor, &plan_before),
                });
            }
            let b = graph.bundle;
            // scalar gradients come from this batch's losses at the
            // pre-update values, before the network moves
            let next_gor = if cfg.mode.is_learnable() {
                match gor_step(&gor, b.loss_task, b.loss_kd) {
                    Ok(s) => Some(s.state),
                    Err(e) => {
                        return Err(TrainError::Diverged {
                            step,
                            diagnostic: e.to_string(),
                            last_good: snapshot(&student, gor, &plan_before),
                        })
                    }
                }
            } else {
                None
            };
            for ((layer, (gw, gb)), (vw, vb)) in
                student.layers.iter_mut().zip(&grads).zip(velocity.iter_mut())
            {
                sgd_momentum(layer.weight.data_mut(), gw, vw, cfg.lr_theta, cfg.momentum);
                sgd_momentum(layer.bias.data_mut(), gb, vb, cfg.lr_theta, cfg.momentum);
            }
            if let Some(s) = next_gor {
                gor = s;
            }
            metrics.push(MetricsRecord {
                step,
                epoch,
                loss_task: b.loss_task,
                loss_kd: b.loss_kd,
                loss_total: b.loss_total,
                w_task: b.w_task,
                w_kd: b.w_kd,
                alpha_task: next_gor.map(|s| s.alpha_task),
                alpha_kd: next_gor.map(|s| s.alpha_kd),
                eq_residual: next_gor.map(|s| s.equilibrium_residual(b.loss_task, b.loss_kd)),
                train_acc: None,
                test_acc: None,
            });
            step += 1;
        }
        let last = metrics.last_mut().expect("non-empty epoch");
        last.train_acc = Some(evaluate(&student, &data.train, plan.as_ref())?);
        last.test_acc = Some(evaluate(&student, &data.test, plan.as_ref())?);
        log::info!(
            "{} seed {} epoch {}: loss {:.4}, train {:.4}, test {:.4}",
            cfg.mode.name(),
            cfg.seed,
            epoch + 1,
            last.loss_total,
            last.train_acc.unwrap_or(f64::NAN),
            last.test_acc.unwrap_or(f64::NAN)
        );
    }

    let mut fp_test_acc = None;
    if cfg.mode == Mode::PtqEval && !cfg.quant.is_full_precision() {
        fp_test_acc = Some(evaluate(&student, &data.test, None)?);
        let mut p = QuantPlan::new(student.layers.len(), &cfg.quant)?;
        calibrate_activations(&student, &mut p, &data.train, cfg.batch_size, cfg.quant.warmup_batches)?;
        plan = Some(p);
    }
    if let (Some(t), Some(before)) = (teachers, teacher_digest) {
        if t.digest() != before {
            return Err(Error::Contract("teacher parameters changed during training".into()).into());
        }
    }
    let summary = RunSummary {
        mode: cfg.mode.name().to_string(),
        seed: cfg.seed,
        steps: step,
        epochs: cfg.epochs,
        train_acc: evaluate(&student, &data.train, plan.as_ref())?,
        test_acc: evaluate(&student, &data.test, plan.as_ref())?,
        fp_test_acc,
        alpha_task: gor.alpha_task,
        alpha_kd: gor.alpha_kd,
        teacher_digest: teacher_digest.map(|d| hex(&d)),
        config: cfg.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        student,
        quant: plan,
        gor,
        metrics,
        summary,
    })
}

fn snapshot(student: &ModelParams, gor: GorState, plan: &Option<QuantPlan>) -> Box<Checkpoint> {
    Box::new(Checkpoint {
        model: student.clone(),
        gor: Some(gor),
        quant: plan.clone(),
    })
}

fn sgd_momentum(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Trains a full-precision model on the task loss alone, e.g. a teacher.
pub fn train_full_precision(
    widths: &[usize],
    data: &Dataset,
    epochs: usize,
    seed: u64,
) -> std::result::Result<ModelParams, TrainError> {
    let cfg = TrainConfig {
        mode: Mode::QatOnly,
        widths: widths.to_vec(),
        quant: QuantConfig::new(32, 32),
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut model = train(&cfg, data, None)?.student;
    model.role = Role::Teacher;
    model.freeze();
    Ok(model)
}

/// Drops repeated grid values, keeping first occurrences.
pub fn dedup_grid(grid: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(grid.len());
    for &a in grid {
        if out.iter().any(|b| b.to_bits() == a.to_bits()) {
            log::warn!("duplicate alpha {a} removed from sweep grid");
        } else {
            out.push(a);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArm {
    pub label: String,
    pub alpha: Option<f64>,
    /// Test accuracy per seed, in seed order.
    pub accs: Vec<f64>,
}

impl SweepArm {
    pub fn mean(&self) -> f64 {
        self.accs.iter().sum::<f64>() / self.accs.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / self.accs.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub arms: Vec<SweepArm>,
}

impl SweepReport {
    pub fn best_static(&self) -> Option<&SweepArm> {
        self.arms
            .iter()
            .filter(|a| a.alpha.is_some())
            .max_by(|a, b| a.mean().total_cmp(&b.mean()))
    }

    pub fn arm(&self, label: &str) -> Option<&SweepArm> {
        self.arms.iter().find(|a| a.label == label)
    }

    /// Long format: one row per (arm, seed).
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "arm,alpha,seed,test_acc")?;
        for arm in &self.arms {
            for (seed, acc) in self.seeds.iter().zip(&arm.accs) {
                writeln!(w, "{},{},{},{}", arm.label, opt(arm.alpha), seed, acc)?;
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<16} {:>7} {:>10} {:>8}\n", "arm", "alpha", "mean_acc", "std");
        for arm in &self.arms {
            let alpha = arm.alpha.map_or("-".to_string(), |a| format!("{a:.2}"));
            s += &format!(
                "{:<16} {:>7} {:>9.2}% {:>7.2}%\n",
                arm.label,
                alpha,
                100.0 * arm.mean(),
                100.0 * arm.std()
            );
        }
        s
    }
}

/// Runs independent training jobs, `jobs` at a time, returning results in
/// input order.
pub fn run_parallel<T, F>(tasks: Vec<T>, jobs: usize, f: F) -> Result<Vec<std::result::Result<TrainOutcome, TrainError>>>
where
    T: Send,
    F: Fn(T) -> std::result::Result<TrainOutcome, TrainError> + Sync + Send,
{
    if jobs <= 1 {
        return Ok(tasks.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(|| tasks.into_par_iter().map(f).collect()))
}

/// Static-weight arms over `grid` plus, optionally, a learnable-weight arm,
/// each trained once per seed.
pub fn static_sweep(
    base: &TrainConfig,
    data: &Dataset,
    teacher: &TeacherEnsemble,
    grid: &[f64],
    seeds: &[u64],
    include_gor: bool,
    jobs: usize,
) -> std::result::Result<SweepReport, TrainError> {
    let grid = dedup_grid(grid);
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()).into());
    }
    let mut arms: Vec<(String, Option<f64>, Mode)> = grid
        .iter()
        .map(|&a| (format!("static_{a}"), Some(a), Mode::QatKdStatic { alpha: a }))
        .collect();
    if include_gor {
        arms.push(("gor".to_string(), None, Mode::QatKdGor));
    }
    let tasks: Vec<TrainConfig> = arms
        .iter()
        .flat_map(|(_, _, mode)| {
            seeds.iter().map(move |&seed| TrainConfig {
                mode: *mode,
                seed,
                ..base.clone()
            })
        })
        .collect();
    let results = run_parallel(tasks, jobs, |cfg| train(&cfg, data, Some(teacher)))?;
    let mut accs = results.into_iter().map(|r| r.map(|o| o.summary.test_acc));
    let mut out = Vec::with_capacity(arms.len());
    for (label, alpha, _) in arms {
        let per_seed = (&mut accs).take(seeds.len()).collect::<std::result::Result<Vec<_>, _>>()?;
        out.push(SweepArm {
            label,
            alpha,
            accs: per_seed,
        });
    }
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        arms: out,
    })
}
