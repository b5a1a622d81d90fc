//! Task and distillation objectives built on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::GorState;
use crate::tape::{softmax_row, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_TEMPERATURE: f64 = 4.0;

/// Distance between student and teacher outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `KL(softmax(z_T / τ) ‖ softmax(z_S / τ))`.
    #[default]
    KlOnSoftmax,
    MseOnLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub temperature: f64,
    pub distance: Distance,
    /// Multiply the KL term by `τ²`.
    pub tau_squared: bool,
    /// Reserved; no temperature update rule is defined, so enabling it is
    /// rejected by [`KdConfig::validate`].
    pub learnable_tau: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            distance: Distance::KlOnSoftmax,
            tau_squared: true,
            learnable_tau: false,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.learnable_tau {
            return Err(Error::Config(
                "learnable temperature is not supported: no update rule is defined for it".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed trade-off `(1 − α) · L_task + α · L_kd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticWeight {
    alpha: f64,
}

impl StaticWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("static alpha {alpha} outside [0, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weights(&self) -> (f64, f64) {
        (1.0 - self.alpha, self.alpha)
    }
}

/// Per-step loss values and the weights applied to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub loss_task: f64,
    pub loss_kd: f64,
    pub loss_total: f64,
    pub w_task: f64,
    pub w_kd: f64,
}

impl LossBundle {
    pub fn check_finite(&self) -> Result<()> {
        let vals = [self.loss_task, self.loss_kd, self.loss_total, self.w_task, self.w_kd];
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "non-finite loss (task {}, distillation {}, total {}, weights {}/{})",
                self.loss_task, self.loss_kd, self.loss_total, self.w_task, self.w_kd
            )))
        }
    }
}

/// Cross-entropy of the student logits against class targets.
pub fn task_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}

/// Distillation loss against fixed teacher logits. The teacher enters the
/// tape as a constant, so no gradient reaches it.
pub fn kd_loss(tape: &mut Tape, student: Var, teacher: &Tensor, cfg: &KdConfig) -> Result<Var> {
    cfg.validate()?;
    let s = tape.value(student);
    if s.shape() != teacher.shape() {
        return Err(Error::Dimension {
            op: "kd_loss",
            lhs: s.shape().to_vec(),
            rhs: teacher.shape().to_vec(),
        });
    }
    match cfg.distance {
        Distance::KlOnSoftmax => {
            let mut probs = Vec::with_capacity(teacher.len());
            for r in 0..teacher.rows() {
                probs.extend(softmax_row(teacher.row(r), cfg.temperature));
            }
            let pt = tape.constant(Tensor::new(teacher.shape().to_vec(), probs)?);
            let ps = tape.softmax(student, cfg.temperature)?;
            let kl = tape.kl_div(pt, ps)?;
            Ok(if cfg.tau_squared {
                tape.scale(kl, cfg.temperature * cfg.temperature)
            } else {
                kl
            })
        }
        Distance::MseOnLogits => {
            let t = tape.constant(teacher.clone());
            tape.mse(student, t)
        }
    }
}

pub fn static_joint(tape: &mut Tape, loss_task: Var, loss_kd: Var, cfg: StaticWeight) -> Result<Var> {
    let (wt, wk) = cfg.weights();
    let a = tape.scale(loss_task, wt);
    let b = tape.scale(loss_kd, wk);
    tape.add(a, b)
}

/// Handles to the nodes of a recorded learnable-weight objective.
#[derive(Debug, Clone, Copy)]
pub struct GorTerms {
    pub total: Var,
    pub alpha_task: Var,
    pub alpha_kd: Var,
    pub w_task: Var,
    pub w_kd: Var,
}

/// `(a_t / a_k) · L_task + (a_k / a_t) · L_kd` with both scalars recorded as
/// parameters, so one backward pass yields the network gradients and both
/// scalar gradients.
pub fn gor_joint(tape: &mut Tape, loss_task: Var, loss_kd: Var, state: &GorState) -> Result<GorTerms> {
    state.validate()?;
    let alpha_task = tape.scalar_param(state.alpha_task);
    let alpha_kd = tape.scalar_param(state.alpha_kd);
    let w_task = tape.div(alpha_task, alpha_kd)?;
    let w_kd = tape.div(alpha_kd, alpha_task)?;
    let a = tape.mul(w_task, loss_task)?;
    let b = tape.mul(w_kd, loss_kd)?;
    let total = tape.add(a, b)?;
    Ok(GorTerms {
        total,
        alpha_task,
        alpha_kd,
        w_task,
        w_kd,
    })
}

/// Elementwise mean of the teachers' logits.
pub fn ensemble_logits(teachers: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = teachers
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one teacher".into()))?;
    if let Some(bad) = rest.iter().find(|t| t.shape() != first.shape()) {
        return Err(Error::Dimension {
            op: "ensemble_logits",
            lhs: first.shape().to_vec(),
            rhs: bad.shape().to_vec(),
        });
    }
    if rest.is_empty() {
        return Tensor::new(first.shape().to_vec(), first.data().to_vec());
    }
    let n = teachers.len() as f64;
    let mut sum = first.data().to_vec();
    for t in rest {
        sum.iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
    }
    Tensor::new(first.shape().to_vec(), sum.into_iter().map(|v| v / n).collect())
}

/// Distillation against ensemble logits; same contract as [`kd_loss`].
pub fn ekd_loss(tape: &mut Tape, student: Var, z_ens: &Tensor, cfg: &KdConfig) -> Result<Var> {
    kd_loss(tape, student, z_ens, cfg)
}

/// [`gor_joint`] with the ensemble distillation loss in the second slot.
pub fn gor_ekd_joint(tape: &mut Tape, loss_task: Var, loss_ekd: Var, state: &GorState) -> Result<GorTerms> {
    gor_joint(tape, loss_task, loss_ekd, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn kd_value(student: &Tensor, teacher: &Tensor, cfg: &KdConfig) -> f64 {
        let mut tape = Tape::new();
        let s = tape.constant(student.clone());
        let l = kd_loss(&mut tape, s, teacher, cfg).unwrap();
        tape.item(l).unwrap()
    }

    #[test]
    fn task_loss_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(mat(&[&[0.0, 0.0], &[1.0, 1.0]]));
        let l = task_loss(&mut tape, z, &[0, 1]).unwrap();
        assert!((tape.item(l).unwrap() - LN_2).abs() < 1e-15);
        let z = tape.constant(mat(&[&[40.0, -40.0], &[-40.0, 40.0]]));
        let l = task_loss(&mut tape, z, &[0, 1]).unwrap();
        assert!(tape.item(l).unwrap() < 1e-30);
    }

    #[test]
    fn kd_zero_when_student_matches_teacher() {
        let z = mat(&[&[0.3, -1.2, 2.0], &[1.0, 0.0, 0.5]]);
        for distance in [Distance::KlOnSoftmax, Distance::MseOnLogits] {
            let cfg = KdConfig {
                distance,
                ..KdConfig::default()
            };
            assert_eq!(kd_value(&z, &z, &cfg), 0.0);
        }
    }

    #[test]
    fn kd_confident_teacher_uniform_student() {
        let cfg = KdConfig {
            temperature: 1.0,
            tau_squared: false,
            ..KdConfig::default()
        };
        let v = kd_value(&mat(&[&[0.0, 0.0]]), &mat(&[&[50.0, -50.0]]), &cfg);
        assert!((v - LN_2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn tau_squared_scaling() {
        let s = mat(&[&[0.1, 0.9, -0.4]]);
        let t = mat(&[&[1.5, -0.3, 0.2]]);
        let on = KdConfig::default();
        let off = KdConfig {
            tau_squared: false,
            ..on
        };
        let (a, b) = (kd_value(&s, &t, &on), kd_value(&s, &t, &off));
        assert!((a - 16.0 * b).abs() <= 1e-15 * a.abs().max(1.0));
    }

    #[test]
    fn kd_rejects_mismatch_and_learnable_tau() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = kd_loss(&mut tape, s, &Tensor::zeros(vec![2, 2]), &KdConfig::default());
        assert!(matches!(err, Err(Error::Dimension { .. })));
        let cfg = KdConfig {
            learnable_tau: true,
            ..KdConfig::default()
        };
        assert!(matches!(
            kd_loss(&mut tape, s, &Tensor::zeros(vec![2, 3]), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn static_joint_examples() {
        let mut tape = Tape::new();
        let lt = tape.constant(Tensor::scalar(2.0));
        let lk = tape.constant(Tensor::scalar(4.0));
        for (alpha, want) in [(0.0, 2.0), (1.0, 4.0), (0.5, 3.0)] {
            let l = static_joint(&mut tape, lt, lk, StaticWeight::new(alpha).unwrap()).unwrap();
            assert_eq!(tape.item(l).unwrap(), want);
        }
        assert!(StaticWeight::new(-0.1).is_err());
        assert!(StaticWeight::new(1.1).is_err());
    }

    fn gor_value(at: f64, ak: f64, lt: f64, lk: f64) -> (f64, f64, f64) {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(lt));
        let b = tape.param(Tensor::scalar(lk));
        let state = GorState::new(0.1).with_alphas(at, ak);
        let terms = gor_joint(&mut tape, a, b, &state).unwrap();
        tape.backward(terms.total).unwrap();
        (
            tape.item(terms.total).unwrap(),
            tape.grad(terms.alpha_task).unwrap()[0],
            tape.grad(terms.alpha_kd).unwrap()[0],
        )
    }

    #[test]
    fn gor_joint_examples() {
        assert_eq!(gor_value(1.0, 1.0, 2.0, 3.0).0, 5.0);
        assert_eq!(gor_value(2.0, 1.0, 1.0, 1.0).0, 2.5);
        let (_, g_task, _) = gor_value(1.0, 1.0, 2.0, 3.0);
        assert_eq!(g_task, -1.0);
        // finite differences on the scalar objective
        let h = 1e-6;
        let f = |at: f64| GorState::new(0.1).with_alphas(at, 1.0).objective(2.0, 3.0);
        assert!(((f(1.0 + h) - f(1.0 - h)) / (2.0 * h) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn gor_joint_rejects_corrupt_state() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0));
        let state = GorState::new(0.1).with_alphas(-1.0, 1.0);
        assert!(matches!(
            gor_joint(&mut tape, a, a, &state),
            Err(Error::StateCorruption(_))
        ));
    }

    #[test]
    fn ensemble_examples() {
        let t1 = mat(&[&[1.0, 3.0]]);
        let t2 = mat(&[&[3.0, 1.0]]);
        assert_eq!(ensemble_logits(&[t1.clone(), t2]).unwrap().data(), &[2.0, 2.0]);
        let single = ensemble_logits(std::slice::from_ref(&t1)).unwrap();
        assert!(single.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(matches!(ensemble_logits(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            ensemble_logits(&[t1, Tensor::zeros(vec![1, 3])]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn ensemble_matches_direct_mean() {
        let ts: Vec<Tensor> = (0..3)
            .map(|k| {
                let data = (0..6).map(|i| ((i * 7 + k * 13) % 11) as f64 * 0.37 - 1.5).collect();
                Tensor::new(vec![2, 3], data).unwrap()
            })
            .collect();
        let ens = ensemble_logits(&ts).unwrap();
        for i in 0..6 {
            let direct = (ts[0].data()[i] + ts[1].data()[i] + ts[2].data()[i]) / 3.0;
            assert!((ens.data()[i] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn ekd_single_teacher_equals_kd_and_zero_at_mean() {
        let s = mat(&[&[0.2, -0.7], &[1.1, 0.4]]);
        let t = mat(&[&[1.0, -1.0], &[0.0, 2.0]]);
        let cfg = KdConfig::default();
        let ens = ensemble_logits(std::slice::from_ref(&t)).unwrap();
        let mut tape = Tape::new();
        let sv = tape.constant(s.clone());
        let a = ekd_loss(&mut tape, sv, &ens, &cfg).unwrap();
        let b = kd_loss(&mut tape, sv, &t, &cfg).unwrap();
        assert_eq!(tape.item(a).unwrap().to_bits(), tape.item(b).unwrap().to_bits());

        let t2 = mat(&[&[-0.6, 0.2], &[2.2, -1.2]]);
        let ens = ensemble_logits(&[t.clone(), t2.clone()]).unwrap();
        let mean = ens.clone();
        let z = tape.constant(mean);
        let l = ekd_loss(&mut tape, z, &ens, &cfg).unwrap();
        assert_eq!(tape.item(l).unwrap(), 0.0);

        // two-teacher case against a hand computation
        let zbar: Vec<f64> = t.data().iter().zip(t2.data()).map(|(a, b)| (a + b) / 2.0).collect();
        let mut manual = 0.0;
        for r in 0..2 {
            let soft = |v: &[f64]| {
                let e: Vec<f64> = v.iter().map(|x| (x / 4.0).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect::<Vec<_>>()
            };
            let pt = soft(&zbar[r * 2..r * 2 + 2]);
            let ps = soft(s.row(r));
            manual += pt.iter().zip(&ps).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
        }
        manual = 16.0 * manual / 2.0;
        let l = ekd_loss(&mut tape, sv, &ens, &cfg).unwrap();
        assert!((tape.item(l).unwrap() - manual).abs() < 1e-12);
    }
}
