//! Waypoint trajectories, the sum-of-squared-differences task cost, smooth
//! exploration perturbations, base rotation, and uniform timing.
//!
//! A trajectory stores `T` waypoints of `D` joint angles each, row per
//! waypoint. Indices are zero-based: waypoint 0 is the start, `T - 1` the goal.
//! Consecutive-waypoint differences are raw, except on the base yaw joint,
//! whose difference is wrapped into `(-pi, pi]`: base rotation wraps that joint,
//! and a rotated trajectory must keep identical segment lengths even when it
//! crosses the branch cut.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kinematics::{wrap_angle, ArmModel, JointConfig};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    dof: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    dof: usize,
    #[serde(rename = "T")]
    len: usize,
    waypoints: Vec<Vec<f64>>,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRepr) -> Result<Self> {
        if r.waypoints.len() != r.len {
            return Err(Error::dim("waypoint count", r.len, r.waypoints.len()));
        }
        if let Some(w) = r.waypoints.iter().find(|w| w.len() != r.dof) {
            return Err(Error::dim("waypoint dof", r.dof, w.len()));
        }
        Trajectory::new(r.dof, r.waypoints.concat())
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(x: Trajectory) -> Self {
        TrajectoryRepr {
            dof: x.dof,
            len: x.len(),
            waypoints: x.waypoints().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl Trajectory {
    /// Builds from row-major data (`T` rows of `dof` angles).
    pub fn new(dof: usize, data: Vec<f64>) -> Result<Self> {
        if dof == 0 {
            return Err(Error::invalid("trajectory dof must be positive"));
        }
        if !data.len().is_multiple_of(dof) {
            return Err(Error::invalid(format!(
                "{} values do not split into waypoints of {dof}",
                data.len()
            )));
        }
        if data.len() / dof < 2 {
            return Err(Error::invalid("trajectory needs at least 2 waypoints"));
        }
        ensure_finite(&data, "trajectory")?;
        Ok(Trajectory { dof, data })
    }

    pub fn from_waypoints<W: AsRef<[f64]>>(waypoints: &[W]) -> Result<Self> {
        let dof = waypoints.first().map_or(0, |w| w.as_ref().len());
        if let Some(w) = waypoints.iter().find(|w| w.as_ref().len() != dof) {
            return Err(Error::dim("waypoint dof", dof, w.as_ref().len()));
        }
        let data = waypoints
            .iter()
            .flat_map(|w| w.as_ref().iter().copied())
            .collect();
        Trajectory::new(dof, data)
    }

    pub fn constant(q: &[f64], len: usize) -> Result<Self> {
        Trajectory::new(q.len(), q.repeat(len))
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Number of waypoints `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dof
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn waypoint(&self, t: usize) -> &[f64] {
        &self.data[t * self.dof..(t + 1) * self.dof]
    }

    pub(crate) fn waypoint_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dof..(t + 1) * self.dof]
    }

    pub fn waypoints(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dof)
    }

    pub fn start(&self) -> &[f64] {
        self.waypoint(0)
    }

    pub fn goal(&self) -> &[f64] {
        self.waypoint(self.len() - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Joint-space difference `x[t+1] - x[t]` (base joint wrapped).
    pub fn segment(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        self.waypoint(t)
            .iter()
            .zip(self.waypoint(t + 1))
            .enumerate()
            .map(|(j, (&a, &b))| if j == 0 { wrap_angle(b - a) } else { b - a })
    }

    /// Joint-space length of each of the `T - 1` segments.
    pub fn segment_lengths(&self) -> Vec<f64> {
        (0..self.len() - 1)
            .map(|t| self.segment(t).map(|d| d * d).sum::<f64>().sqrt())
            .collect()
    }

    /// Largest absolute elementwise difference over interior waypoints.
    pub fn max_interior_deviation(&self, other: &Trajectory) -> f64 {
        let t = self.len();
        if t != other.len() || self.dof != other.dof {
            return f64::INFINITY;
        }
        (1..t - 1)
            .flat_map(|k| self.waypoint(k).iter().zip(other.waypoint(k)))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_arm(&self, arm: &ArmModel) -> Result<()> {
        if self.dof != arm.dof {
            return Err(Error::dim("trajectory dof", arm.dof, self.dof));
        }
        Ok(())
    }
}

/// Start/goal pair with an execution duration (used only for timing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub start: JointConfig,
    pub goal: JointConfig,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_duration() -> f64 {
    4.0
}

impl Task {
    pub fn new(start: impl Into<JointConfig>, goal: impl Into<JointConfig>) -> Self {
        Task {
            start: start.into(),
            goal: goal.into(),
            duration: default_duration(),
        }
    }

    pub fn validate(&self, arm: &ArmModel) -> Result<()> {
        arm.check_config(&self.start)?;
        arm.check_config(&self.goal)?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid("task duration must be positive"));
        }
        Ok(())
    }

    /// Start equals goal. Legal, but the only SSD-optimal plan is to stay put.
    pub fn is_degenerate(&self) -> bool {
        self.start == self.goal
    }
}

pub fn ssd_cost(x: &Trajectory) -> f64 {
    (0..x.len() - 1)
        .map(|t| x.segment(t).map(|d| d * d).sum::<f64>())
        .sum()
}

/// Analytic gradient of [`ssd_cost`], same layout as the trajectory.
pub fn ssd_gradient(x: &Trajectory) -> Vec<f64> {
    let (len, dof) = (x.len(), x.dof());
    let mut g = vec![0.0; len * dof];
    for t in 0..len - 1 {
        for (j, d) in x.segment(t).enumerate() {
            g[t * dof + j] -= 2.0 * d;
            g[(t + 1) * dof + j] += 2.0 * d;
        }
    }
    g
}

pub fn linear_interpolation(task: &Task, len: usize) -> Result<Trajectory> {
    if len < 2 {
        return Err(Error::invalid(format!("need T >= 2 waypoints, got {len}")));
    }
    if task.start.len() != task.goal.len() {
        return Err(Error::dim("task goal", task.start.len(), task.goal.len()));
    }
    let n = (len - 1) as f64;
    let mut data = Vec::with_capacity(len * task.start.len());
    for t in 0..len {
        if t == len - 1 {
            data.extend_from_slice(&task.goal);
            continue;
        }
        let s = t as f64 / n;
        data.extend(
            task.start
                .iter()
                .zip(task.goal.iter())
                .map(|(&a, &b)| a + s * (b - a)),
        );
    }
    Trajectory::new(task.start.len(), data)
}

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `sub[i]` couples row `i + 1` to column `i`, `sup[i]` couples row `i` to
/// column `i + 1`. Requires a diagonally dominant (or otherwise pivot-safe)
/// matrix.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n > 0 && rhs.len() == n && sub.len() + 1 == n && sup.len() + 1 == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { sup[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = sup[i] / m;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Solves `(tridiag(-1, 2, -1)) v = rhs`, the interior second-difference
/// operator with zero boundary values.
pub fn solve_second_difference(rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    solve_tridiagonal(&vec![-1.0; n - 1], &vec![2.0; n], &vec![-1.0; n - 1], rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Norm of the seed displacement, radians.
    pub delta_magnitude: f64,
    /// Variants generated per call.
    pub count: usize,
    pub rng_seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            delta_magnitude: 0.35,
            count: 7,
            rng_seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_magnitude.is_finite() && self.delta_magnitude > 0.0) {
            return Err(Error::invalid(
                "delta_magnitude must be positive and finite",
            ));
        }
        if self.count == 0 {
            return Err(Error::invalid("perturbation count must be >= 1"));
        }
        Ok(())
    }
}

/// One smooth variant together with the draw that produced it.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub trajectory: Trajectory,
    /// Waypoint that received the seed displacement.
    pub peak: usize,
    /// Seed displacement; its norm is the requested magnitude.
    pub delta: Vec<f64>,
}

/// Unit-peak smoothing profile over interior waypoints.
///
/// Returns `A^-1 e_peak / (A^-1 e_peak)[peak]` for the interior second
/// difference matrix `A`; `peak` indexes the interior (0-based).
pub fn smoothing_profile(interior: usize, peak: usize) -> Vec<f64> {
    let mut e = vec![0.0; interior];
    e[peak] = 1.0;
    let mut g = solve_second_difference(&e);
    let beta = 1.0 / g[peak];
    for v in &mut g {
        *v *= beta;
    }
    g
}

/// Draws one smooth variant of `x0`. Endpoints are never moved.
pub fn perturb_once(x0: &Trajectory, magnitude: f64, rng: &mut Rng) -> Result<Perturbation> {
    let len = x0.len();
    if len < 4 {
        return Err(Error::invalid(format!(
            "smooth perturbation needs T >= 4, got {len}"
        )));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::invalid(
            "delta_magnitude must be positive and finite",
        ));
    }
    let dof = x0.dof();
    let peak = rng.random_range(1..len - 1);
    let mut delta: Vec<f64> = loop {
        let v: Vec<f64> = (0..dof).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|c: &f64| *c != 0.0) {
            break v;
        }
    };
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut delta {
        *v *= magnitude / norm;
    }

    let profile = smoothing_profile(len - 2, peak - 1);
    let mut x = x0.clone();
    for (k, &s) in profile.iter().enumerate() {
        for (q, d) in x.waypoint_mut(k + 1).iter_mut().zip(&delta) {
            *q += s * d;
        }
    }
    Ok(Perturbation {
        trajectory: x,
        peak,
        delta,
    })
}

pub fn smooth_perturbation(x0: &Trajectory, spec: &PerturbationSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.rng_seed);
    (0..spec.count)
        .map(|_| perturb_once(x0, spec.delta_magnitude, &mut rng).map(|p| p.trajectory))
        .collect()
}

/// Yaws every waypoint by `theta` (base joint wrapped into `(-pi, pi]`).
pub fn rotate_trajectory(x: &Trajectory, theta: f64) -> Result<Trajectory> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("rotation angle"));
    }
    let mut out = x.clone();
    let dof = out.dof;
    for q in out.data.chunks_exact_mut(dof) {
        q[0] = wrap_angle(q[0] + theta);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedTrajectory {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub timestamps: Vec<f64>,
}

/// Spaces waypoints equally in time over `[0, duration]`.
pub fn time_trajectory(x: &Trajectory, duration: f64) -> Result<TimedTrajectory> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let n = x.len() - 1;
    let mut timestamps: Vec<f64> = (0..=n).map(|k| k as f64 * duration / n as f64).collect();
    timestamps[n] = duration;
    Ok(TimedTrajectory {
        trajectory: x.clone(),
        timestamps,
    })
}
