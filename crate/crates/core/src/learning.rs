//! Bradley-Terry preference model and cost training.
//!
//! The probability of choosing `x_A` over `x_B` is
//! `exp(-C(x_A)) / (exp(-C(x_A)) + exp(-C(x_B)))`, evaluated as the logistic
//! `sigma(C(x_B) - C(x_A))`. Training minimizes the mean cross-entropy of the
//! observed choices with full-batch Adam.

use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::costs::{
    encode_inputs, extract_features, grouped_sq_norms, FeaturizedCost, MlpCost, StyleCost,
};
use crate::error::{Error, Result};
use crate::kinematics::ArmModel;
use crate::rng::{self, Rng};
use crate::trajectory::{rotate_trajectory, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn flipped(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Label::A),
            "B" | "b" => Ok(Label::B),
            other => Err(Error::invalid(format!(
                "label must be A or B, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOrigin {
    Query,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub x_a: Trajectory,
    pub x_b: Trajectory,
    pub label: Option<Label>,
    pub origin: PairOrigin,
}

impl PreferencePair {
    pub fn new(pair_id: impl Into<String>, x_a: Trajectory, x_b: Trajectory) -> Result<Self> {
        if x_a.dof() != x_b.dof() {
            return Err(Error::dim("pair dof", x_a.dof(), x_b.dof()));
        }
        if x_a.len() != x_b.len() {
            return Err(Error::dim("pair length", x_a.len(), x_b.len()));
        }
        Ok(PreferencePair {
            pair_id: pair_id.into(),
            x_a,
            x_b,
            label: None,
            origin: PairOrigin::Query,
        })
    }

    pub fn labeled(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// `(chosen, other)` for a labeled pair.
    pub fn ordered(&self) -> Result<(&Trajectory, &Trajectory)> {
        match self.label {
            Some(Label::A) => Ok((&self.x_a, &self.x_b)),
            Some(Label::B) => Ok((&self.x_b, &self.x_a)),
            None => Err(Error::invalid(format!(
                "pair {} is unlabeled",
                self.pair_id
            ))),
        }
    }

    /// Same preference expressed with the trajectories swapped.
    pub fn mirrored(&self) -> PreferencePair {
        PreferencePair {
            pair_id: self.pair_id.clone(),
            x_a: self.x_b.clone(),
            x_b: self.x_a.clone(),
            label: self.label.map(Label::flipped),
            origin: self.origin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSettings {
    /// `None` picks the family default (0.05 featurized, 1e-3 MLP).
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` picks the family default (200 featurized, 500 MLP).
    pub epochs_per_round: Option<usize>,
    /// Rotated copies per labeled pair (MLP only).
    pub augmentation_factor: usize,
    pub rng_seed: u64,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings {
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs_per_round: None,
            augmentation_factor: 8,
            rng_seed: 0,
        }
    }
}

impl TrainerSettings {
    pub fn epochs_for(&self, cost: &StyleCost) -> usize {
        self.epochs_per_round.unwrap_or(match cost {
            StyleCost::Featurized(_) => 200,
            StyleCost::Mlp(_) => 500,
        })
    }

    pub fn learning_rate_for(&self, cost: &StyleCost) -> f64 {
        self.learning_rate.unwrap_or(match cost {
            StyleCost::Featurized(_) => 0.05,
            StyleCost::Mlp(_) => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .learning_rate
            .is_none_or(|lr| lr.is_finite() && lr > 0.0)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon.is_finite()
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "trainer rates must be positive and betas in [0, 1)",
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub pairs_used: usize,
    pub augmented_pairs: usize,
}

/// Numerically stable `1 / (1 + exp(-z))`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + exp(z))`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `(P(A), P(B))` for costs `cost_a`, `cost_b`.
pub fn choice_probabilities(cost_a: f64, cost_b: f64) -> Result<(f64, f64)> {
    if !(cost_a.is_finite() && cost_b.is_finite()) {
        return Err(Error::NonFinite("style cost"));
    }
    let pa = logistic(cost_b - cost_a);
    Ok((pa, 1.0 - pa))
}

/// Probability that `x_a` is chosen over `x_b`.
pub fn preference_probability(
    cost: &StyleCost,
    arm: &ArmModel,
    x_a: &Trajectory,
    x_b: &Trajectory,
) -> Result<f64> {
    let (ca, cb) = (cost.evaluate(arm, x_a)?, cost.evaluate(arm, x_b)?);
    Ok(choice_probabilities(ca, cb)?.0)
}

/// `-ln P(chosen)` given the two costs.
pub fn loss_from_costs(cost_chosen: f64, cost_other: f64) -> f64 {
    softplus(cost_chosen - cost_other)
}

pub fn pair_loss(cost: &StyleCost, arm: &ArmModel, pair: &PreferencePair) -> Result<f64> {
    let (chosen, other) = pair.ordered()?;
    let (cc, co) = (cost.evaluate(arm, chosen)?, cost.evaluate(arm, other)?);
    if !(cc.is_finite() && co.is_finite()) {
        return Err(Error::NonFinite("style cost"));
    }
    Ok(loss_from_costs(cc, co))
}

pub fn mean_loss(cost: &StyleCost, arm: &ArmModel, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no labeled pairs"));
    }
    let total: f64 = pairs
        .iter()
        .map(|p| pair_loss(cost, arm, p))
        .sum::<Result<f64>>()?;
    Ok(total / pairs.len() as f64)
}

/// `k` copies of a labeled pair, each with both trajectories yawed by one
/// angle drawn uniformly from `(-pi, pi]`.
pub fn augment_rotations(
    pair: &PreferencePair,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<PreferencePair>> {
    if pair.label.is_none() {
        return Err(Error::invalid(format!(
            "pair {} is unlabeled",
            pair.pair_id
        )));
    }
    (0..k)
        .map(|i| {
            let theta =
                -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (1.0 - rng.random::<f64>());
            Ok(PreferencePair {
                pair_id: format!("{}~rot{i}", pair.pair_id),
                x_a: rotate_trajectory(&pair.x_a, theta)?,
                x_b: rotate_trajectory(&pair.x_b, theta)?,
                label: pair.label,
                origin: PairOrigin::Augmented,
            })
        })
        .collect()
}

/// Feature differences `phi(chosen) - phi(other)` per pair.
fn feature_differences(
    cost: &FeaturizedCost,
    arm: &ArmModel,
    pairs: &[PreferencePair],
) -> Result<Vec<Vec<f64>>> {
    pairs
        .iter()
        .map(|p| {
            let (chosen, other) = p.ordered()?;
            cost.check_len(chosen.len())?;
            let fc = extract_features(arm, chosen)?.to_vec(cost.uses_velocity);
            let fo = extract_features(arm, other)?.to_vec(cost.uses_velocity);
            if fc.len() != cost.w.len() {
                return Err(Error::dim("feature vector", cost.w.len(), fc.len()));
            }
            Ok(fc.iter().zip(&fo).map(|(a, b)| a - b).collect())
        })
        .collect()
}

fn featurized_loss_grad(w: &[f64], diffs: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n = diffs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    for d in diffs {
        let z: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
        loss += softplus(z);
        let s = logistic(z);
        for (g, di) in grad.iter_mut().zip(d) {
            *g += s * di;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean loss and its gradient with respect to the featurized weights.
pub fn featurized_batch_gradient(
    cost: &FeaturizedCost,
    arm: &ArmModel,
    pairs: &[PreferencePair],
) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no labeled pairs"));
    }
    let diffs = feature_differences(cost, arm, pairs)?;
    Ok(featurized_loss_grad(&cost.w, &diffs))
}

const PAIRS_PER_CHUNK: usize = 32;

/// Stacked network inputs: for each pair, the chosen trajectory's steps then
/// the other's.
struct MlpBatch {
    inputs: Array2<f64>,
    steps: usize,
    pairs: usize,
}

impl MlpBatch {
    fn build(cost: &MlpCost, arm: &ArmModel, pairs: &[PreferencePair]) -> Result<Self> {
        if input_mismatch(cost, arm) {
            return Err(Error::dim(
                "MLP input width",
                cost.input_width(),
                crate::costs::input_width(arm.dof),
            ));
        }
        let steps = pairs[0].x_a.len() - 1;
        let mut blocks = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            let (chosen, other) = p.ordered()?;
            for x in [chosen, other] {
                if x.len() - 1 != steps {
                    return Err(Error::dim("trajectory length in batch", steps + 1, x.len()));
                }
                blocks.push(encode_inputs(arm, x)?);
            }
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let inputs =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(MlpBatch {
            inputs,
            steps,
            pairs: pairs.len(),
        })
    }

    /// Mean loss and flat parameter gradient; dropout when `rng` is given.
    /// Works through cache-sized chunks of whole pairs.
    fn loss_grad(&self, cost: &MlpCost, mut rng: Option<&mut Rng>) -> (f64, Vec<f64>) {
        let n = self.pairs as f64;
        let rows_per_pair = 2 * self.steps;
        let mut loss = 0.0;
        let mut grad = vec![0.0; cost.param_count()];
        for chunk in self
            .inputs
            .axis_chunks_iter(Axis(0), PAIRS_PER_CHUNK * rows_per_pair)
        {
            let masks = rng
                .as_deref_mut()
                .map(|r| paired_masks(cost, chunk.nrows(), self.steps, r));
            let fwd = cost.forward(chunk, masks);
            let costs = grouped_sq_norms(&fwd.y, self.steps);
            // d loss / d cost per trajectory
            let mut dcost = vec![0.0; costs.len()];
            for (pc, d) in costs.chunks_exact(2).zip(dcost.chunks_exact_mut(2)) {
                let z = pc[0] - pc[1];
                loss += softplus(z);
                let s = logistic(z) / n;
                d[0] = s;
                d[1] = -s;
            }
            let mut dy = &fwd.y * 2.0;
            for (mut rows, &d) in dy.axis_chunks_iter_mut(Axis(0), self.steps).zip(&dcost) {
                rows *= d;
            }
            let (g, _) = cost.backward(chunk, &fwd, &dy, false);
            for (a, b) in grad.iter_mut().zip(g.flatten()) {
                *a += b;
            }
        }
        (loss / n, grad)
    }

    fn loss(&self, cost: &MlpCost) -> f64 {
        let fwd = cost.forward(self.inputs.view(), None);
        let costs = grouped_sq_norms(&fwd.y, self.steps);
        let total: f64 = (0..self.pairs)
            .map(|i| softplus(costs[2 * i] - costs[2 * i + 1]))
            .sum();
        total / self.pairs as f64
    }
}

/// Dropout masks where both trajectories of a pair see the same thinned
/// network at each step, so mask noise does not swamp the (usually small)
/// cost difference the loss depends on.
fn paired_masks(
    cost: &MlpCost,
    rows: usize,
    steps: usize,
    rng: &mut Rng,
) -> (Array2<f64>, Array2<f64>) {
    let (m1, m2) = cost.dropout_masks(rows / 2, rng);
    let dup = |m: Array2<f64>| {
        let blocks: Vec<_> = m
            .axis_chunks_iter(Axis(0), steps)
            .flat_map(|b| [b, b])
            .collect();
        ndarray::concatenate(Axis(0), &blocks).expect("mask blocks share a width")
    };
    (dup(m1), dup(m2))
}

fn input_mismatch(cost: &MlpCost, arm: &ArmModel) -> bool {
    cost.input_width() != crate::costs::input_width(arm.dof)
}

/// Mean loss (no dropout) and its gradient with respect to the flat MLP
/// parameters.
pub fn mlp_batch_gradient(
    cost: &MlpCost,
    arm: &ArmModel,
    pairs: &[PreferencePair],
) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no labeled pairs"));
    }
    Ok(MlpBatch::build(cost, arm, pairs)?.loss_grad(cost, None))
}

struct Adam {
    lr: f64,
    settings: TrainerSettings,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(lr: f64, settings: TrainerSettings, n: usize) -> Self {
        Adam {
            lr,
            settings,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.lr;
        let TrainerSettings {
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            ..
        } = self.settings;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!(
            "loss became {loss} at epoch {epoch}"
        )))
    }
}

/// Full-batch Adam on the mean pair loss. Returns a new parameter snapshot;
/// `cost` is left untouched.
pub fn update_weights(
    cost: &StyleCost,
    arm: &ArmModel,
    labeled_pairs: &[PreferencePair],
    settings: &TrainerSettings,
) -> Result<(StyleCost, TrainingReport)> {
    settings.validate()?;
    if labeled_pairs.is_empty() {
        return Err(Error::invalid(
            "update_weights needs at least one labeled pair",
        ));
    }
    if let Some(p) = labeled_pairs.iter().find(|p| p.label.is_none()) {
        return Err(Error::invalid(format!("pair {} is unlabeled", p.pair_id)));
    }
    let epochs = settings.epochs_for(cost);
    let lr = settings.learning_rate_for(cost);
    let mut rng = rng::seeded(settings.rng_seed);

    match cost {
        StyleCost::Featurized(c) => {
            let diffs = feature_differences(c, arm, labeled_pairs)?;
            let mut w = c.w.clone();
            let (initial_loss, _) = featurized_loss_grad(&w, &diffs);
            check_loss(initial_loss, 0)?;
            let mut adam = Adam::new(lr, *settings, w.len());
            for epoch in 0..epochs {
                let (loss, grad) = featurized_loss_grad(&w, &diffs);
                check_loss(loss, epoch)?;
                adam.step(&mut w, &grad);
            }
            let (final_loss, _) = featurized_loss_grad(&w, &diffs);
            check_loss(final_loss, epochs)?;
            let learned = FeaturizedCost {
                style: c.style.clone(),
                uses_velocity: c.uses_velocity,
                w,
            };
            Ok((
                StyleCost::Featurized(learned),
                TrainingReport {
                    epochs,
                    initial_loss,
                    final_loss,
                    pairs_used: labeled_pairs.len(),
                    augmented_pairs: 0,
                },
            ))
        }
        StyleCost::Mlp(c) => {
            let mut all = labeled_pairs.to_vec();
            for p in labeled_pairs {
                all.extend(augment_rotations(
                    p,
                    settings.augmentation_factor,
                    &mut rng,
                )?);
            }
            let originals = MlpBatch::build(c, arm, labeled_pairs)?;
            let batch = MlpBatch::build(c, arm, &all)?;
            let mut net = c.clone();
            let initial_loss = originals.loss(&net);
            check_loss(initial_loss, 0)?;
            let mut params = net.params();
            let mut adam = Adam::new(lr, *settings, params.len());
            let train_dropout = net.dropout > 0.0;
            for epoch in 0..epochs {
                let (loss, grad) = batch.loss_grad(&net, train_dropout.then_some(&mut rng));
                check_loss(loss, epoch)?;
                adam.step(&mut params, &grad);
                net.set_params(&params)?;
            }
            let final_loss = originals.loss(&net);
            check_loss(final_loss, epochs)?;
            net.validate()?;
            Ok((
                StyleCost::Mlp(net),
                TrainingReport {
                    epochs,
                    initial_loss,
                    final_loss,
                    pairs_used: labeled_pairs.len(),
                    augmented_pairs: all.len() - labeled_pairs.len(),
                },
            ))
        }
    }
}
