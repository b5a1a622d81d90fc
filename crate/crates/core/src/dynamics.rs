//! Network-free simulator for the two-scalar balancing game.
//!
//! A [`LossScript`] stands in for the per-batch losses; [`simulate`] iterates
//! the same step functions the trainer uses, so a trajectory here is exactly
//! what training would do to the scalars given those loss values.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::{gor_step, single_scalar_step, GorState, SingleScalarState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// First step at which these values apply.
    pub step: u64,
    pub loss_task: f64,
    pub loss_kd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossScript {
    Constant {
        loss_task: f64,
        loss_kd: f64,
    },
    /// Values switch at each segment's step; the first segment starts at 0.
    Piecewise { segments: Vec<Segment> },
    /// Base values plus i.i.d. Gaussian noise truncated at zero.
    Noisy {
        loss_task: f64,
        loss_kd: f64,
        sigma: f64,
        seed: u64,
    },
}

fn check_loss(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

impl LossScript {
    pub fn constant(loss_task: f64, loss_kd: f64) -> Self {
        Self::Constant { loss_task, loss_kd }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { loss_task, loss_kd } => {
                check_loss("loss_task", *loss_task)?;
                check_loss("loss_kd", *loss_kd)
            }
            Self::Piecewise { segments } => {
                match segments.first() {
                    None => return Err(Error::InvalidArgument("piecewise script is empty".into())),
                    Some(s) if s.step != 0 => {
                        return Err(Error::InvalidArgument(format!(
                            "first segment must start at step 0, got {}",
                            s.step
                        )))
                    }
                    _ => {}
                }
                for w in segments.windows(2) {
                    if w[1].step <= w[0].step {
                        return Err(Error::InvalidArgument(format!(
                            "segment steps must be strictly increasing ({} then {})",
                            w[0].step, w[1].step
                        )));
                    }
                }
                for s in segments {
                    check_loss("loss_task", s.loss_task)?;
                    check_loss("loss_kd", s.loss_kd)?;
                }
                Ok(())
            }
            Self::Noisy {
                loss_task,
                loss_kd,
                sigma,
                ..
            } => {
                check_loss("loss_task", *loss_task)?;
                check_loss("loss_kd", *loss_kd)?;
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
                }
                Ok(())
            }
        }
    }

    /// The loss pair fed to each of the first `steps` updates.
    pub fn losses(&self, steps: usize) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        Ok(match self {
            Self::Constant { loss_task, loss_kd } => vec![(*loss_task, *loss_kd); steps],
            Self::Piecewise { segments } => {
                let mut seg = 0;
                (0..steps as u64)
                    .map(|t| {
                        while seg + 1 < segments.len() && segments[seg + 1].step <= t {
                            seg += 1;
                        }
                        (segments[seg].loss_task, segments[seg].loss_kd)
                    })
                    .collect()
            }
            Self::Noisy {
                loss_task,
                loss_kd,
                sigma,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let noise = Normal::new(0.0, *sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let mut draw = |base: f64| loop {
                    let v = base + noise.sample(&mut rng);
                    if v >= 0.0 {
                        break v;
                    }
                };
                (0..steps).map(|_| (draw(*loss_task), draw(*loss_kd))).collect()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gor,
    /// One learnable weight `β` on the distillation loss, `1 − β` on the task.
    SingleScalar,
}

/// State after one update. For the single-scalar variant `alpha_kd` holds
/// `β`, `grad_kd` holds `∂/∂β`, and the task-side columns are empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub loss_task: f64,
    pub loss_kd: f64,
    pub alpha_task: Option<f64>,
    pub alpha_kd: f64,
    pub grad_task: Option<f64>,
    pub grad_kd: f64,
    pub eq_residual: Option<f64>,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub variant: Variant,
    pub initial: GorState,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectories have at least one step")
    }

    pub fn any_clipped(&self) -> bool {
        self.points.iter().any(|p| p.clipped)
    }

    /// Final `α_kd / α_task` (GoR variant only).
    pub fn final_ratio(&self) -> Option<f64> {
        let p = self.last();
        p.alpha_task.map(|a| p.alpha_kd / a)
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        fn o(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        writeln!(w, "step,loss_task,loss_kd,alpha_task,alpha_kd,grad_task,grad_kd,eq_residual,clipped")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                p.step,
                p.loss_task,
                p.loss_kd,
                o(p.alpha_task),
                p.alpha_kd,
                o(p.grad_task),
                p.grad_kd,
                o(p.eq_residual),
                p.clipped as u8
            )?;
        }
        Ok(())
    }
}

/// Iterates the scalar update `steps` times. The single-scalar variant starts
/// from `β = α_kd / (α_task + α_kd)` with the same learning rate and floor.
pub fn simulate(initial: &GorState, script: &LossScript, steps: usize, variant: Variant) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("simulate needs at least one step".into()));
    }
    initial.validate()?;
    let losses = script.losses(steps)?;
    let mut points = Vec::with_capacity(steps);
    match variant {
        Variant::Gor => {
            let mut state = *initial;
            for &(lt, lk) in &losses {
                let s = gor_step(&state, lt, lk)?;
                state = s.state;
                points.push(TrajectoryPoint {
                    step: state.step_count,
                    loss_task: lt,
                    loss_kd: lk,
                    alpha_task: Some(state.alpha_task),
                    alpha_kd: state.alpha_kd,
                    grad_task: Some(s.grad_task),
                    grad_kd: s.grad_kd,
                    eq_residual: Some(state.equilibrium_residual(lt, lk)),
                    clipped: s.clipped,
                });
            }
        }
        Variant::SingleScalar => {
            let beta = initial.alpha_kd / (initial.alpha_task + initial.alpha_kd);
            let mut state = SingleScalarState::Learnable {
                beta,
                lr: initial.lr,
                clip_floor: initial.clip_floor,
                step_count: 0,
            };
            for (i, &(lt, lk)) in losses.iter().enumerate() {
                let s = single_scalar_step(&state, lt, lk)?;
                state = s.state;
                points.push(TrajectoryPoint {
                    step: i as u64 + 1,
                    loss_task: lt,
                    loss_kd: lk,
                    alpha_task: None,
                    alpha_kd: state.beta(),
                    grad_task: None,
                    grad_kd: s.grad,
                    eq_residual: None,
                    clipped: s.clipped,
                });
            }
        }
    }
    Ok(Trajectory {
        variant,
        initial: *initial,
        points,
    })
}

/// `n` points spaced evenly in log space over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi >= lo) || n == 0 {
        return Err(Error::InvalidArgument(format!("bad log grid [{lo}, {hi}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinCell {
    pub alpha_task0: f64,
    pub alpha_kd0: f64,
    pub alpha_task: f64,
    pub alpha_kd: f64,
    pub residual: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinScan {
    pub task_axis: Vec<f64>,
    pub kd_axis: Vec<f64>,
    /// Row-major over `task_axis × kd_axis`.
    pub cells: Vec<BasinCell>,
}

impl BasinScan {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        self.cells.iter().filter(|c| c.residual <= tol).count() as f64 / self.cells.len() as f64
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "alpha_task0,alpha_kd0,alpha_task,alpha_kd,residual,clipped")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.alpha_task0, c.alpha_kd0, c.alpha_task, c.alpha_kd, c.residual, c.clipped as u8
            )?;
        }
        Ok(())
    }
}

/// Runs the GoR dynamics from every grid start and records the final
/// equilibrium residual. Cells are independent; `jobs > 1` runs them on a
/// dedicated thread pool with results in grid order.
pub fn basin_scan(
    task_axis: &[f64],
    kd_axis: &[f64],
    lr: f64,
    script: &LossScript,
    steps: usize,
    jobs: usize,
) -> Result<BasinScan> {
    let base = GorState::new(lr);
    let starts: Vec<(f64, f64)> = task_axis
        .iter()
        .flat_map(|&a| kd_axis.iter().map(move |&b| (a, b)))
        .collect();
    if starts.is_empty() {
        return Err(Error::InvalidArgument("basin grid is empty".into()));
    }
    if let Some(&(a, b)) = starts.iter().find(|(a, b)| !(*a > base.clip_floor && *b > base.clip_floor)) {
        return Err(Error::InvalidArgument(format!(
            "grid start ({a}, {b}) is not above the clip floor"
        )));
    }
    // the script is materialised once and shared by every cell
    let losses = script.losses(steps)?;
    let final_losses = *losses.last().ok_or_else(|| Error::InvalidArgument("steps must be >= 1".into()))?;
    let run = |&(a, b): &(f64, f64)| -> Result<BasinCell> {
        let mut state = base.with_alphas(a, b);
        let mut clipped = false;
        for &(lt, lk) in &losses {
            let s = gor_step(&state, lt, lk)?;
            clipped |= s.clipped;
            state = s.state;
        }
        Ok(BasinCell {
            alpha_task0: a,
            alpha_kd0: b,
            alpha_task: state.alpha_task,
            alpha_kd: state.alpha_kd,
            residual: state.equilibrium_residual(final_losses.0, final_losses.1),
            clipped,
        })
    };
    let cells: Result<Vec<BasinCell>> = if jobs <= 1 {
        starts.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| starts.par_iter().map(run).collect())
    };
    Ok(BasinScan {
        task_axis: task_axis.to_vec(),
        kd_axis: kd_axis.to_vec(),
        cells: cells?,
    })
}
