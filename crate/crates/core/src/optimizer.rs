//! Local trajectory optimization with fixed start and goal.
//!
//! Descent runs on the interior waypoints only, so the endpoint equality
//! constraints hold exactly at every iterate. Search directions are the
//! gradient preconditioned by the Hessian of the task term (the interior
//! second-difference matrix, one tridiagonal solve per joint), which makes a
//! unit step exact for the task term alone. A backtracking Armijo search
//! guarantees every accepted step decreases the objective.

use serde::{Deserialize, Serialize};

use crate::costs::{total_objective, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::kinematics::{ee_path, ArmModel, EePose};
use crate::trajectory::{
    linear_interpolation, solve_second_difference, ssd_gradient, time_trajectory, Task,
    TimedTrajectory, Trajectory,
};

const ARMIJO_C1: f64 = 1e-4;
const MAX_STEP: f64 = 1.0;
const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Central differences on the style term, analytic task term.
    FiniteDifference,
    /// Closed-form gradients of both terms (through forward kinematics).
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its value.
    pub convergence_tol: f64,
    /// First trial step length; later trials start from twice the last
    /// accepted step, capped at 1.
    pub initial_step: f64,
    pub shrink: f64,
    pub gradient_mode: GradientMode,
    pub fd_epsilon: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 300,
            convergence_tol: 1e-6,
            initial_step: 0.1,
            shrink: 0.5,
            gradient_mode: GradientMode::FiniteDifference,
            fd_epsilon: 1e-5,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0
            || !positive(self.convergence_tol)
            || !positive(self.initial_step)
            || !positive(self.fd_epsilon)
        {
            return Err(Error::invalid("optimizer settings must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid(
                "line-search shrink factor must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient of `f` over every entry of `x`.
pub fn numeric_gradient<F>(f: F, x: &Trajectory, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Trajectory) -> Result<f64>,
{
    fd_gradient(&f, x, eps, 0..x.len())
}

fn fd_gradient<F>(f: &F, x: &Trajectory, eps: f64, rows: std::ops::Range<usize>) -> Result<Vec<f64>>
where
    F: Fn(&Trajectory) -> Result<f64>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid("finite-difference epsilon must be positive"));
    }
    let dof = x.dof();
    let mut g = vec![0.0; x.as_slice().len()];
    let mut probe = x.clone();
    for i in rows.start * dof..rows.end * dof {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.as_mut_slice()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.as_mut_slice()[i] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite("objective near the evaluation point"));
        }
        g[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(g)
}

fn objective_gradient(
    cfg: &ObjectiveConfig,
    arm: &ArmModel,
    x: &Trajectory,
    settings: &OptimizerSettings,
) -> Result<Vec<f64>> {
    match settings.gradient_mode {
        GradientMode::Analytic => cfg.gradient(arm, x),
        GradientMode::FiniteDifference => {
            let mut g = ssd_gradient(x);
            g.iter_mut().for_each(|v| *v *= cfg.lambda);
            if cfg.style.is_some() {
                let style = |y: &Trajectory| cfg.style_term(arm, y);
                let gs = fd_gradient(&style, x, settings.fd_epsilon, 1..x.len() - 1)?;
                g.iter_mut().zip(gs).for_each(|(a, b)| *a += b);
            }
            Ok(g)
        }
    }
}

/// `-(2 lambda A)^-1 g` on the interior rows, zero on the endpoints.
fn descent_direction(g: &[f64], len: usize, dof: usize, lambda: f64) -> Vec<f64> {
    let scale = 2.0 * if lambda > 0.0 { lambda } else { 1.0 };
    let mut dir = vec![0.0; g.len()];
    let interior = len - 2;
    let mut col = vec![0.0; interior];
    for j in 0..dof {
        for (k, c) in col.iter_mut().enumerate() {
            *c = g[(k + 1) * dof + j];
        }
        let sol = solve_second_difference(&col);
        for (k, s) in sol.iter().enumerate() {
            dir[(k + 1) * dof + j] = -s / scale;
        }
    }
    dir
}

pub fn optimize(
    cfg: &ObjectiveConfig,
    arm: &ArmModel,
    task: &Task,
    len: usize,
    settings: &OptimizerSettings,
    init: Option<&Trajectory>,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    settings.validate()?;
    task.validate(arm)?;
    let mut x = match init {
        Some(x0) => {
            x0.check_arm(arm)?;
            if x0.len() != len {
                return Err(Error::dim("initial trajectory length", len, x0.len()));
            }
            if x0.start() != &task.start[..] || x0.goal() != &task.goal[..] {
                return Err(Error::invalid(
                    "initial trajectory endpoints differ from the task",
                ));
            }
            x0.clone()
        }
        None => linear_interpolation(task, len)?,
    };
    if let Some(style) = &cfg.style {
        style.check_compatible(arm, len)?;
    }

    let mut f = total_objective(cfg, arm, &x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the initial trajectory"));
    }
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let mut step = settings.initial_step;
    let mut first = true;

    if len <= 2 {
        return Ok(OptimizeResult {
            trajectory: x,
            objective_history: history,
            iterations: 0,
            converged: true,
        });
    }

    while iterations < settings.max_iterations {
        let g = objective_gradient(cfg, arm, &x, settings)?;
        let dir = descent_direction(&g, len, x.dof(), cfg.lambda);
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope >= 0.0 || -slope <= f64::EPSILON * f.abs().max(1e-300) {
            converged = true;
            break;
        }

        let mut alpha = if first {
            step
        } else {
            (2.0 * step).min(MAX_STEP)
        };
        first = false;
        let accepted = loop {
            let mut trial = x.clone();
            for (v, d) in trial.as_mut_slice().iter_mut().zip(&dir) {
                *v += alpha * d;
            }
            for t in 1..len - 1 {
                arm.clamp_to_limits(trial.waypoint_mut(t));
            }
            let ft = total_objective(cfg, arm, &trial)?;
            if ft.is_finite() && ft <= f + ARMIJO_C1 * alpha * slope && ft < f {
                break Some((trial, ft));
            }
            alpha *= settings.shrink;
            if alpha < MIN_STEP {
                break None;
            }
        };
        let Some((trial, ft)) = accepted else {
            // no descent along the preconditioned gradient: stationary
            converged = true;
            break;
        };
        iterations += 1;
        step = alpha;
        let decrease = (f - ft) / f.abs().max(1e-12);
        x = trial;
        f = ft;
        history.push(f);
        if decrease < settings.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(OptimizeResult {
        trajectory: x,
        objective_history: history,
        iterations,
        converged,
    })
}

/// An optimized, timed plan ready for preview or export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(flatten)]
    pub timed: TimedTrajectory,
    pub ee_path: Vec<EePose>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Optimizes `task` under `cfg` and times the result over `task.duration`.
pub fn plan(
    cfg: &ObjectiveConfig,
    arm: &ArmModel,
    task: &Task,
    len: usize,
    settings: &OptimizerSettings,
) -> Result<Plan> {
    let out = optimize(cfg, arm, task, len, settings, None)?;
    Ok(Plan {
        ee_path: ee_path(arm, &out.trajectory)?,
        timed: time_trajectory(&out.trajectory, task.duration)?,
        objective_history: out.objective_history,
        iterations: out.iterations,
        converged: out.converged,
    })
}
