//! The two learnable balancing scalars.
//!
//! The joint objective `(a_t / a_k) · L_task + (a_k / a_t) · L_kd` has
//! partial derivatives
//!
//! ```text
//! ∂/∂a_t = L_task / a_k − a_k · L_kd / a_t²
//! ∂/∂a_k = L_kd / a_t − a_t · L_task / a_k²
//! ```
//!
//! which both vanish exactly when `a_t² · L_task = a_k² · L_kd`. Each scalar
//! is pushed up by its own loss and down by the competing one. Updates are
//! plain gradient descent evaluated at the pre-update values, followed by a
//! clip to `[clip_floor, +∞)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLIP_FLOOR: f64 = 1e-4;
pub const DEFAULT_ALPHA_LR: f64 = 1e-3;
const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GorState {
    pub alpha_task: f64,
    pub alpha_kd: f64,
    pub lr: f64,
    pub clip_floor: f64,
    pub step_count: u64,
}

impl Default for GorState {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA_LR)
    }
}

/// Result of one scalar update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GorStep {
    pub state: GorState,
    /// Gradients at the pre-update values.
    pub grad_task: f64,
    pub grad_kd: f64,
    /// Whether either scalar hit the floor.
    pub clipped: bool,
}

impl GorState {
    /// Both scalars start at 1.
    pub fn new(lr: f64) -> Self {
        Self {
            alpha_task: 1.0,
            alpha_kd: 1.0,
            lr,
            clip_floor: CLIP_FLOOR,
            step_count: 0,
        }
    }

    pub fn with_alphas(mut self, alpha_task: f64, alpha_kd: f64) -> Self {
        self.alpha_task = alpha_task;
        self.alpha_kd = alpha_kd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a.is_finite() && a >= self.clip_floor && a > 0.0;
        if !ok(self.alpha_task) || !ok(self.alpha_kd) {
            return Err(Error::StateCorruption(format!(
                "scalars must be finite and >= {}: alpha_task={}, alpha_kd={}",
                self.clip_floor, self.alpha_task, self.alpha_kd
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::StateCorruption(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    /// Effective weights `(a_t / a_k, a_k / a_t)`.
    pub fn weights(&self) -> (f64, f64) {
        (self.alpha_task / self.alpha_kd, self.alpha_kd / self.alpha_task)
    }

    pub fn objective(&self, loss_task: f64, loss_kd: f64) -> f64 {
        let (wt, wk) = self.weights();
        wt * loss_task + wk * loss_kd
    }

    /// Closed-form gradients of the objective with respect to both scalars.
    pub fn gradients(&self, loss_task: f64, loss_kd: f64) -> (f64, f64) {
        let (at, ak) = (self.alpha_task, self.alpha_kd);
        (
            loss_task / ak - ak * loss_kd / (at * at),
            loss_kd / at - at * loss_task / (ak * ak),
        )
    }

    pub fn step(&self, loss_task: f64, loss_kd: f64) -> Result<GorStep> {
        gor_step(self, loss_task, loss_kd)
    }

    pub fn equilibrium_residual(&self, loss_task: f64, loss_kd: f64) -> f64 {
        equilibrium_residual(self, loss_task, loss_kd)
    }
}

fn check_losses(loss_task: f64, loss_kd: f64) -> Result<()> {
    if !loss_task.is_finite() || !loss_kd.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss_task={loss_task}, loss_kd={loss_kd}"
        )));
    }
    if loss_task < 0.0 || loss_kd < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "losses must be non-negative: loss_task={loss_task}, loss_kd={loss_kd}"
        )));
    }
    Ok(())
}

/// One simultaneous descent step on both scalars, then clip.
pub fn gor_step(state: &GorState, loss_task: f64, loss_kd: f64) -> Result<GorStep> {
    check_losses(loss_task, loss_kd)?;
    state.validate()?;
    let (grad_task, grad_kd) = state.gradients(loss_task, loss_kd);
    let raw_task = state.alpha_task - state.lr * grad_task;
    let raw_kd = state.alpha_kd - state.lr * grad_kd;
    if !raw_task.is_finite() || !raw_kd.is_finite() {
        return Err(Error::NonFinite(format!(
            "scalar update overflowed at step {}: alpha_task={raw_task}, alpha_kd={raw_kd} \
             (loss_task={loss_task}, loss_kd={loss_kd})",
            state.step_count
        )));
    }
    let floor = state.clip_floor;
    let next = GorState {
        alpha_task: raw_task.max(floor),
        alpha_kd: raw_kd.max(floor),
        step_count: state.step_count + 1,
        ..*state
    };
    Ok(GorStep {
        state: next,
        grad_task,
        grad_kd,
        clipped: raw_task < floor || raw_kd < floor,
    })
}

/// Relative violation of `a_t² · L_task = a_k² · L_kd`; zero at equilibrium.
pub fn equilibrium_residual(state: &GorState, loss_task: f64, loss_kd: f64) -> f64 {
    let lhs = state.alpha_task.powi(2) * loss_task;
    let rhs = state.alpha_kd.powi(2) * loss_kd;
    (lhs - rhs).abs() / lhs.max(rhs).max(RESIDUAL_EPS)
}

/// Single-scalar weighting `(1 − β) · L_task + β · L_kd`, either fixed or
/// learned by gradient descent with the same floor clip and no ceiling.
///
/// The learnable form has `∂/∂β = L_kd − L_task`, which is constant in `β`,
/// so there is no interior stationary point: `β` drifts until it is clipped
/// or grows without bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingleScalarState {
    Static {
        beta: f64,
    },
    Learnable {
        beta: f64,
        lr: f64,
        clip_floor: f64,
        step_count: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleScalarStep {
    pub state: SingleScalarState,
    pub grad: f64,
    pub clipped: bool,
}

impl SingleScalarState {
    pub fn fixed(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("static beta {beta} outside [0, 1]")));
        }
        Ok(Self::Static { beta })
    }

    pub fn learnable(beta: f64, lr: f64) -> Self {
        Self::Learnable {
            beta,
            lr,
            clip_floor: CLIP_FLOOR,
            step_count: 0,
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            Self::Static { beta } | Self::Learnable { beta, .. } => beta,
        }
    }

    /// `(w_task, w_kd) = (1 − β, β)`.
    pub fn weights(&self) -> (f64, f64) {
        let b = self.beta();
        (1.0 - b, b)
    }

    pub fn objective(&self, loss_task: f64, loss_kd: f64) -> f64 {
        let (wt, wk) = self.weights();
        wt * loss_task + wk * loss_kd
    }
}

pub fn single_scalar_step(
    state: &SingleScalarState,
    loss_task: f64,
    loss_kd: f64,
) -> Result<SingleScalarStep> {
    check_losses(loss_task, loss_kd)?;
    let grad = loss_kd - loss_task;
    match *state {
        SingleScalarState::Static { .. } => Ok(SingleScalarStep {
            state: *state,
            grad,
            clipped: false,
        }),
        SingleScalarState::Learnable {
            beta,
            lr,
            clip_floor,
            step_count,
        } => {
            let raw = beta - lr * grad;
            if !raw.is_finite() {
                return Err(Error::NonFinite(format!("beta overflowed at step {step_count}")));
            }
            Ok(SingleScalarStep {
                state: SingleScalarState::Learnable {
                    beta: raw.max(clip_floor),
                    lr,
                    clip_floor,
                    step_count: step_count + 1,
                },
                grad,
                clipped: raw < clip_floor,
            })
        }
    }
}
