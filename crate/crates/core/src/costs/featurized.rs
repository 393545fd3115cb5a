//! End-effector and velocity features, and the linear cost over them.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kinematics::{fk_jacobian, fk_unchecked, ArmModel};
use crate::trajectory::Trajectory;

/// Number of end-effector features (radius, height, orientation).
pub const EE_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Mean horizontal distance of the end effector from the base axis.
    pub radius: f64,
    /// Mean end-effector z.
    pub height: f64,
    /// Mean angle between +z and the end-effector pointing direction.
    pub orientation: f64,
    /// Joint-space length of each segment.
    pub velocity: Vec<f64>,
}

impl FeatureVector {
    /// Flattens to `[f_r, f_h, f_o]` or `[f_r, f_h, f_o, f_v...]`.
    pub fn to_vec(&self, uses_velocity: bool) -> Vec<f64> {
        let mut v = vec![self.radius, self.height, self.orientation];
        if uses_velocity {
            v.extend_from_slice(&self.velocity);
        }
        v
    }
}

pub fn extract_features(arm: &ArmModel, x: &Trajectory) -> Result<FeatureVector> {
    x.check_arm(arm)?;
    let n = x.len() as f64;
    let (mut radius, mut height, mut orientation) = (0.0, 0.0, 0.0);
    for q in x.waypoints() {
        let pose = fk_unchecked(arm, q);
        radius += pose.radius();
        height += pose.height();
        orientation += pose.tilt();
    }
    Ok(FeatureVector {
        radius: radius / n,
        height: height / n,
        orientation: orientation / n,
        velocity: x.segment_lengths(),
    })
}

/// Gradient of `w . phi(x)` with respect to every trajectory entry.
///
/// Kinks (zero radius, vertical pointing, zero-length segments) get a zero
/// subgradient.
pub(crate) fn feature_cost_gradient(
    cost: &FeaturizedCost,
    arm: &ArmModel,
    x: &Trajectory,
) -> Vec<f64> {
    let (len, dof) = (x.len(), x.dof());
    let n = len as f64;
    let (wr, wh, wo) = (cost.w[0], cost.w[1], cost.w[2]);
    let mut g = vec![0.0; len * dof];
    for (t, q) in x.waypoints().enumerate() {
        let jac = fk_jacobian(arm, q);
        let p = jac.pose.position;
        let d = jac.pose.pointing;
        let r = p[0].hypot(p[1]);
        let s = d[0].hypot(d[1]);
        for j in 0..dof {
            let dp = jac.d_position[j];
            let dd = jac.d_pointing[j];
            let mut v = wh * dp[2];
            if r > 1e-12 {
                v += wr * (p[0] * dp[0] + p[1] * dp[1]) / r;
            }
            if s > 1e-12 {
                v -= wo * dd[2] / s;
            }
            g[t * dof + j] = v / n;
        }
    }
    if cost.uses_velocity {
        for t in 0..len - 1 {
            let seg: Vec<f64> = x.segment(t).collect();
            let norm = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                continue;
            }
            let wv = cost.w[EE_FEATURES + t];
            for (j, s) in seg.iter().enumerate() {
                let c = wv * s / norm;
                g[(t + 1) * dof + j] += c;
                g[t * dof + j] -= c;
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedCost {
    pub style: String,
    pub uses_velocity: bool,
    pub w: Vec<f64>,
}

impl FeaturizedCost {
    pub fn new(style: impl Into<String>, uses_velocity: bool, w: Vec<f64>) -> Result<Self> {
        let c = FeaturizedCost {
            style: style.into(),
            uses_velocity,
            w,
        };
        c.validate()?;
        Ok(c)
    }

    /// All-zero weights for trajectories of `len` waypoints.
    pub fn zeros(style: impl Into<String>, uses_velocity: bool, len: usize) -> Self {
        let n = if uses_velocity {
            EE_FEATURES + len.saturating_sub(1)
        } else {
            EE_FEATURES
        };
        FeaturizedCost {
            style: style.into(),
            uses_velocity,
            w: vec![0.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.w, "featurized weights")?;
        if !self.uses_velocity && self.w.len() != EE_FEATURES {
            return Err(Error::dim("featurized weights", EE_FEATURES, self.w.len()));
        }
        if self.uses_velocity && self.w.len() < EE_FEATURES + 1 {
            return Err(Error::invalid(
                "velocity cost needs at least one velocity weight",
            ));
        }
        Ok(())
    }

    /// Trajectory length implied by the weights, if they include velocity terms.
    pub fn implied_len(&self) -> Option<usize> {
        self.uses_velocity.then(|| self.w.len() - EE_FEATURES + 1)
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        match self.implied_len() {
            Some(t) if t != len => {
                Err(Error::dim("trajectory length for velocity weights", t, len))
            }
            _ => Ok(()),
        }
    }

    /// Unit-norm copy of the weights (zero stays zero).
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            self.w.clone()
        } else {
            self.w.iter().map(|v| v / n).collect()
        }
    }
}

pub fn featurized_cost(c: &FeaturizedCost, phi: &FeatureVector) -> Result<f64> {
    let f = phi.to_vec(c.uses_velocity);
    if f.len() != c.w.len() {
        return Err(Error::dim("feature vector", c.w.len(), f.len()));
    }
    Ok(c.w.iter().zip(&f).map(|(w, f)| w * f).sum())
}
