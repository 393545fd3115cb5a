//! Serial-arm model and closed-form forward kinematics.
//!
//! The arm is a yaw joint about the world z axis followed by `dof - 1` pitch
//! joints that all rotate about the local y axis, so every link after the base
//! lies in the vertical plane selected by the yaw angle. `link_lengths[0]` is
//! the vertical column carried by the yaw joint; `link_lengths[i]` (i >= 1) is
//! the link driven by pitch joint `i`. With all angles zero the arm points
//! straight up.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmModelRepr")]
pub struct ArmModel {
    pub dof: usize,
    pub link_lengths: Vec<f64>,
    pub joint_limits: Option<Vec<[f64; 2]>>,
    pub base_height: f64,
}

#[derive(Deserialize)]
struct ArmModelRepr {
    dof: usize,
    link_lengths: Vec<f64>,
    #[serde(default)]
    joint_limits: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    base_height: f64,
}

impl TryFrom<ArmModelRepr> for ArmModel {
    type Error = Error;

    fn try_from(r: ArmModelRepr) -> Result<Self> {
        let arm = ArmModel {
            dof: r.dof,
            link_lengths: r.link_lengths,
            joint_limits: r.joint_limits,
            base_height: r.base_height,
        };
        arm.validate()?;
        Ok(arm)
    }
}

impl Default for ArmModel {
    /// Yaw base plus two unit pitch links.
    fn default() -> Self {
        ArmModel {
            dof: 3,
            link_lengths: vec![0.0, 1.0, 1.0],
            joint_limits: None,
            base_height: 0.0,
        }
    }
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>) -> Result<Self> {
        let arm = ArmModel {
            dof: link_lengths.len(),
            link_lengths,
            joint_limits: None,
            base_height: 0.0,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn with_joint_limits(mut self, limits: Vec<[f64; 2]>) -> Result<Self> {
        self.joint_limits = Some(limits);
        self.validate()?;
        Ok(self)
    }

    pub fn with_base_height(mut self, h: f64) -> Result<Self> {
        self.base_height = h;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dof < 2 {
            return Err(Error::invalid(format!(
                "arm needs dof >= 2, got {}",
                self.dof
            )));
        }
        if self.link_lengths.len() != self.dof {
            return Err(Error::dim(
                "link_lengths",
                self.dof,
                self.link_lengths.len(),
            ));
        }
        ensure_finite(&self.link_lengths, "link_lengths")?;
        if self.link_lengths.iter().any(|&l| l < 0.0) {
            return Err(Error::invalid("link lengths must be non-negative"));
        }
        if self.link_lengths.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("total link length must be positive"));
        }
        if !self.base_height.is_finite() {
            return Err(Error::NonFinite("base_height"));
        }
        if let Some(limits) = &self.joint_limits {
            if limits.len() != self.dof {
                return Err(Error::dim("joint_limits", self.dof, limits.len()));
            }
            for &[lo, hi] in limits {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::invalid(format!("bad joint limit [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    /// Checks dimension, finiteness, and joint limits (when set) of `q`.
    pub fn check_config(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof {
            return Err(Error::dim("joint configuration", self.dof, q.len()));
        }
        ensure_finite(q, "joint configuration")?;
        if let Some(limits) = &self.joint_limits {
            for (i, (&v, &[lo, hi])) in q.iter().zip(limits).enumerate() {
                if v < lo || v > hi {
                    return Err(Error::invalid(format!(
                        "joint {i} value {v} outside limits [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clamps `q` into the joint limits in place. No-op without limits.
    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        if let Some(limits) = &self.joint_limits {
            for (v, &[lo, hi]) in q.iter_mut().zip(limits) {
                *v = v.clamp(lo, hi);
            }
        }
    }
}

/// A single waypoint: one angle per joint, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(dof: usize) -> Self {
        JointConfig(vec![0.0; dof])
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}

impl Deref for JointConfig {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointConfig {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// End-effector position (world frame, z up) and the unit direction of the
/// last link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub position: [f64; 3],
    pub pointing: [f64; 3],
}

impl EePose {
    /// Horizontal distance from the base axis.
    pub fn radius(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }

    pub fn height(&self) -> f64 {
        self.position[2]
    }

    /// Angle between +z and the pointing direction, in `[0, pi]`.
    pub fn tilt(&self) -> f64 {
        self.pointing[2].clamp(-1.0, 1.0).acos()
    }
}

pub fn forward_kinematics(arm: &ArmModel, q: &[f64]) -> Result<EePose> {
    if q.len() != arm.dof {
        return Err(Error::dim("joint configuration", arm.dof, q.len()));
    }
    ensure_finite(q, "joint configuration")?;
    Ok(fk_unchecked(arm, q))
}

/// Forward kinematics without input validation; callers guarantee shape.
pub(crate) fn fk_unchecked(arm: &ArmModel, q: &[f64]) -> EePose {
    let (sy, cy) = q[0].sin_cos();
    let mut pitch = 0.0;
    let mut radial = 0.0;
    let mut z = arm.base_height + arm.link_lengths[0];
    for (&angle, &len) in q[1..].iter().zip(&arm.link_lengths[1..]) {
        pitch += angle;
        let (sp, cp) = pitch.sin_cos();
        radial += len * sp;
        z += len * cp;
    }
    let (sp, cp) = pitch.sin_cos();
    EePose {
        position: [radial * cy, radial * sy, z],
        pointing: [sp * cy, sp * sy, cp],
    }
}

/// Pose plus derivatives of position and pointing with respect to each joint.
#[derive(Debug, Clone)]
pub(crate) struct PoseJacobian {
    pub pose: EePose,
    /// `d_position[j]` = d position / d q_j.
    pub d_position: Vec<[f64; 3]>,
    pub d_pointing: Vec<[f64; 3]>,
}

pub(crate) fn fk_jacobian(arm: &ArmModel, q: &[f64]) -> PoseJacobian {
    let dof = arm.dof;
    let (sy, cy) = q[0].sin_cos();
    // per-link (L sin, L cos) of the cumulative pitch
    let mut pitch = 0.0;
    let mut terms = Vec::with_capacity(dof - 1);
    for (&angle, &len) in q[1..].iter().zip(&arm.link_lengths[1..]) {
        pitch += angle;
        let (sp, cp) = pitch.sin_cos();
        terms.push((len * sp, len * cp));
    }
    let radial: f64 = terms.iter().map(|t| t.0).sum();
    let z = arm.base_height + arm.link_lengths[0] + terms.iter().map(|t| t.1).sum::<f64>();
    let (sp, cp) = pitch.sin_cos();
    let pose = EePose {
        position: [radial * cy, radial * sy, z],
        pointing: [sp * cy, sp * sy, cp],
    };

    let mut d_position = vec![[0.0; 3]; dof];
    let mut d_pointing = vec![[0.0; 3]; dof];
    d_position[0] = [-radial * sy, radial * cy, 0.0];
    d_pointing[0] = [-sp * sy, sp * cy, 0.0];
    // joint j (>= 1) moves every link from j on
    let mut d_radial = 0.0;
    let mut d_z = 0.0;
    for j in (1..dof).rev() {
        d_radial += terms[j - 1].1;
        d_z -= terms[j - 1].0;
        d_position[j] = [d_radial * cy, d_radial * sy, d_z];
        d_pointing[j] = [cp * cy, cp * sy, -sp];
    }
    PoseJacobian {
        pose,
        d_position,
        d_pointing,
    }
}

pub fn ee_path(arm: &ArmModel, x: &crate::trajectory::Trajectory) -> Result<Vec<EePose>> {
    if x.dof() != arm.dof {
        return Err(Error::dim("trajectory dof", arm.dof, x.dof()));
    }
    x.waypoints().map(|q| forward_kinematics(arm, q)).collect()
}

/// Yaws the whole arm by `theta` about world z. The base angle is wrapped into
/// `(-pi, pi]`.
pub fn rotate_base(q: &[f64], theta: f64) -> Result<JointConfig> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("rotation angle"));
    }
    ensure_finite(q, "joint configuration")?;
    if q.is_empty() {
        return Err(Error::dim("joint configuration", 1, 0));
    }
    let mut out = q.to_vec();
    out[0] = wrap_angle(out[0] + theta);
    Ok(JointConfig(out))
}
