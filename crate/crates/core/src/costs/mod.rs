//! Style costs and the planning objective `C_style(x) + lambda * C_ssd(x)`.

mod featurized;
mod mlp;

pub(crate) use featurized::feature_cost_gradient;
pub use featurized::{
    extract_features, featurized_cost, FeatureVector, FeaturizedCost, EE_FEATURES,
};
pub use mlp::{
    encode_inputs, input_width, mlp_cost, mlp_forward, mlp_param_gradient, Dense, MlpCost,
    MlpGradient, DEFAULT_DROPOUT, ENCODING, HIDDEN1, HIDDEN2, OUTPUT,
};
pub(crate) use mlp::{grouped_sq_norms, mlp_trajectory_gradient};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::ArmModel;
use crate::trajectory::{ssd_cost, ssd_gradient, Trajectory};

pub const DEFAULT_LAMBDA: f64 = 0.5;

/// A learned style cost of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StyleCost {
    Featurized(FeaturizedCost),
    Mlp(MlpCost),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Featurized,
    Mlp,
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "featurized" => Ok(CostKind::Featurized),
            "mlp" => Ok(CostKind::Mlp),
            other => Err(Error::invalid(format!("unknown cost type {other:?}"))),
        }
    }
}

impl StyleCost {
    pub fn kind(&self) -> CostKind {
        match self {
            StyleCost::Featurized(_) => CostKind::Featurized,
            StyleCost::Mlp(_) => CostKind::Mlp,
        }
    }

    pub fn style(&self) -> &str {
        match self {
            StyleCost::Featurized(c) => &c.style,
            StyleCost::Mlp(c) => &c.style,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StyleCost::Featurized(c) => c.validate(),
            StyleCost::Mlp(c) => c.validate(),
        }
    }

    /// Checks that the cost can be evaluated on trajectories of `len`
    /// waypoints for `arm`.
    pub fn check_compatible(&self, arm: &ArmModel, len: usize) -> Result<()> {
        match self {
            StyleCost::Featurized(c) => c.check_len(len),
            StyleCost::Mlp(c) => c.check_arm(arm),
        }
    }

    /// Deterministic cost (no dropout).
    pub fn evaluate(&self, arm: &ArmModel, x: &Trajectory) -> Result<f64> {
        match self {
            StyleCost::Featurized(c) => featurized_cost(c, &extract_features(arm, x)?),
            StyleCost::Mlp(c) => mlp_cost(c, arm, x),
        }
    }

    /// Analytic gradient of [`StyleCost::evaluate`] with respect to `x`.
    pub fn trajectory_gradient(&self, arm: &ArmModel, x: &Trajectory) -> Result<Vec<f64>> {
        x.check_arm(arm)?;
        self.check_compatible(arm, x.len())?;
        match self {
            StyleCost::Featurized(c) => Ok(feature_cost_gradient(c, arm, x)),
            StyleCost::Mlp(c) => mlp_trajectory_gradient(c, arm, x),
        }
    }

    /// Same family and shape, negated ordering (featurized only).
    pub fn negated(&self) -> Option<StyleCost> {
        match self {
            StyleCost::Featurized(c) => Some(StyleCost::Featurized(FeaturizedCost {
                style: c.style.clone(),
                uses_velocity: c.uses_velocity,
                w: c.w.iter().map(|w| -w).collect(),
            })),
            StyleCost::Mlp(_) => None,
        }
    }
}

impl From<FeaturizedCost> for StyleCost {
    fn from(c: FeaturizedCost) -> Self {
        StyleCost::Featurized(c)
    }
}

impl From<MlpCost> for StyleCost {
    fn from(c: MlpCost) -> Self {
        StyleCost::Mlp(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub style: Option<StyleCost>,
    pub lambda: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            style: None,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(style: Option<StyleCost>, lambda: f64) -> Result<Self> {
        let cfg = ObjectiveConfig { style, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ssd_only(lambda: f64) -> Self {
        ObjectiveConfig {
            style: None,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Some(s) = &self.style {
            s.validate()?;
        }
        Ok(())
    }

    pub fn style_term(&self, arm: &ArmModel, x: &Trajectory) -> Result<f64> {
        match &self.style {
            Some(s) => s.evaluate(arm, x),
            None => Ok(0.0),
        }
    }

    /// Analytic gradient of the full objective.
    pub fn gradient(&self, arm: &ArmModel, x: &Trajectory) -> Result<Vec<f64>> {
        let mut g = ssd_gradient(x);
        g.iter_mut().for_each(|v| *v *= self.lambda);
        if let Some(s) = &self.style {
            for (a, b) in g.iter_mut().zip(s.trajectory_gradient(arm, x)?) {
                *a += b;
            }
        }
        Ok(g)
    }
}

pub fn total_objective(cfg: &ObjectiveConfig, arm: &ArmModel, x: &Trajectory) -> Result<f64> {
    x.check_arm(arm)?;
    Ok(cfg.style_term(arm, x)? + cfg.lambda * ssd_cost(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn objective_examples() {
        let arm = ArmModel::default();
        let x = Trajectory::from_waypoints(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
            .unwrap();
        // style none, lambda 1: ssd of the base row [0,1,2] is 2
        assert_eq!(
            total_objective(&ObjectiveConfig::ssd_only(1.0), &arm, &x).unwrap(),
            2.0
        );

        let sad = StyleCost::Featurized(
            FeaturizedCost::new("sad", false, vec![0.97, 0.42, -0.5]).unwrap(),
        );
        let zero_cfg = ObjectiveConfig::new(Some(sad.clone()), 0.0).unwrap();
        assert_eq!(
            total_objective(&zero_cfg, &arm, &x).unwrap(),
            sad.evaluate(&arm, &x).unwrap()
        );
        let still = Trajectory::constant(&[0.0, 0.0, 0.0], 10).unwrap();
        let v = total_objective(&zero_cfg, &arm, &still).unwrap();
        assert!((v - 0.84).abs() < 1e-12);
    }

    #[test]
    fn lambda_validation() {
        assert!(ObjectiveConfig::new(None, -1.0).is_err());
        assert!(ObjectiveConfig::new(None, f64::NAN).is_err());
        assert!(ObjectiveConfig::new(None, 0.0).is_ok());
    }

    #[test]
    fn style_cost_json() {
        let c = StyleCost::Featurized(
            FeaturizedCost::new("sad", false, vec![0.97, 0.42, -0.5]).unwrap(),
        );
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"type": "featurized", "style": "sad", "uses_velocity": false, "w": [0.97, 0.42, -0.5]})
        );
        let m = StyleCost::Mlp(MlpCost::new("happy", 3, 0.1, &mut rng::seeded(0)).unwrap());
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "mlp");
        assert_eq!(v["style"], "happy");
        assert_eq!(v["dropout"], 0.1);
        let back: StyleCost = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn analytic_objective_gradient_matches_differences() {
        let arm = ArmModel::default();
        let x = Trajectory::from_waypoints(&[
            [0.1, 0.3, 0.4],
            [0.3, 0.5, 0.2],
            [0.2, 0.9, -0.3],
            [0.6, 0.7, 0.5],
        ])
        .unwrap();
        let styles = [
            StyleCost::Featurized(
                FeaturizedCost::new("sad", false, vec![0.97, 0.42, -0.5]).unwrap(),
            ),
            StyleCost::Mlp(MlpCost::new("m", 3, 0.1, &mut rng::seeded(8)).unwrap()),
        ];
        for s in styles {
            let cfg = ObjectiveConfig::new(Some(s), 0.7).unwrap();
            let g = cfg.gradient(&arm, &x).unwrap();
            let eps = 1e-6;
            for i in 0..x.as_slice().len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_mut_slice()[i] += eps;
                xm.as_mut_slice()[i] -= eps;
                let fd = (total_objective(&cfg, &arm, &xp).unwrap()
                    - total_objective(&cfg, &arm, &xm).unwrap())
                    / (2.0 * eps);
                assert!(
                    (fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0),
                    "{i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }
}
