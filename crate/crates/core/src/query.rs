//! The active learning loop: optimize the current estimate, perturb it into
//! query pairs, collect labels, retrain.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::costs::{FeaturizedCost, ObjectiveConfig, StyleCost, EE_FEATURES};
use crate::error::{Error, Result};
use crate::kinematics::ArmModel;
use crate::learning::{
    choice_probabilities, update_weights, Label, PreferencePair, TrainerSettings, TrainingReport,
};
use crate::optimizer::optimize;
use crate::rng::{self, Rng, Stream};
use crate::store::{LogEvent, Session, SessionConfig};
use crate::trajectory::{linear_interpolation, perturb_once, Task};

/// Ground-truth `[radius, height, orientation]` weights for *sad*.
pub const SAD_WEIGHTS: [f64; 3] = [0.97, 0.42, -0.50];
/// Ground-truth `[radius, height, orientation]` weights for *happy*.
pub const HAPPY_WEIGHTS: [f64; 3] = [0.03, -0.79, 0.38];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub batch_id: String,
    pub round_index: usize,
    pub task_index: usize,
    pub pairs: Vec<PreferencePair>,
}

impl QueryBatch {
    pub fn unlabeled(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    #[default]
    Deterministic,
    BradleyTerrySampled,
}

/// Synthetic labeler defined by a ground-truth cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub ground_truth: StyleCost,
    #[serde(default)]
    pub mode: OracleMode,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Oracle {
    pub fn deterministic(ground_truth: StyleCost) -> Self {
        Oracle {
            ground_truth,
            mode: OracleMode::Deterministic,
            rng_seed: 0,
        }
    }

    pub fn sampled(ground_truth: StyleCost, rng_seed: u64) -> Self {
        Oracle {
            ground_truth,
            mode: OracleMode::BradleyTerrySampled,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ground_truth.validate()
    }
}

/// Labels from two ground-truth costs. Deterministic ties go to A.
pub fn label_from_costs(
    mode: OracleMode,
    cost_a: f64,
    cost_b: f64,
    rng: &mut Rng,
) -> Result<Label> {
    let (pa, _) = choice_probabilities(cost_a, cost_b)?;
    Ok(match mode {
        OracleMode::Deterministic if cost_a <= cost_b => Label::A,
        OracleMode::Deterministic => Label::B,
        OracleMode::BradleyTerrySampled if rng.random::<f64>() < pa => Label::A,
        OracleMode::BradleyTerrySampled => Label::B,
    })
}

/// `rng` is only consumed in sampled mode.
pub fn oracle_label(
    oracle: &Oracle,
    arm: &ArmModel,
    pair: &PreferencePair,
    rng: &mut Rng,
) -> Result<Label> {
    let ca = oracle.ground_truth.evaluate(arm, &pair.x_a)?;
    let cb = oracle.ground_truth.evaluate(arm, &pair.x_b)?;
    label_from_costs(oracle.mode, ca, cb, rng)
}

/// Featurized ground truth over the three end-effector features.
pub fn ee_oracle_cost(style: &str, weights: [f64; 3]) -> StyleCost {
    StyleCost::Featurized(FeaturizedCost {
        style: style.to_string(),
        uses_velocity: false,
        w: weights.to_vec(),
    })
}

/// Velocity-only ground truth: slower near the goal. The first
/// `ceil((T-1)/2)` segment weights are -1, the rest +1.
pub fn hesitant_oracle_cost(len: usize) -> Result<StyleCost> {
    if len < 2 {
        return Err(Error::invalid("hesitant oracle needs T >= 2"));
    }
    let segments = len - 1;
    let early = segments.div_ceil(2);
    let mut w = vec![0.0; EE_FEATURES];
    w.extend((0..segments).map(|i| if i < early { -1.0 } else { 1.0 }));
    Ok(StyleCost::Featurized(FeaturizedCost {
        style: "hesitant".into(),
        uses_velocity: true,
        w,
    }))
}

/// Query-generation tasks for the default three-joint arm.
pub fn default_training_tasks() -> Vec<Task> {
    vec![
        Task::new(vec![-1.2, 0.4, 0.6], vec![1.0, 0.8, 0.3]),
        Task::new(vec![0.3, -0.5, 1.0], vec![2.0, 0.6, 0.9]),
        Task::new(vec![-0.5, 1.0, -0.4], vec![0.6, -0.2, 0.8]),
        Task::new(vec![2.5, 0.2, 0.2], vec![-2.8, 0.9, 0.5]),
    ]
}

/// A task not among [`default_training_tasks`], used for evaluation.
pub fn default_heldout_task() -> Task {
    Task::new(vec![-0.8, 0.7, 0.5], vec![0.9, 0.3, 1.1])
}

/// Generates the next batch from the current cost estimate. Fails while a
/// previous batch still has unlabeled pairs.
pub fn next_batch(session: &mut Session, pairs_per_batch: usize) -> Result<QueryBatch> {
    if let Some(p) = &session.pending {
        return Err(Error::BatchPending(p.unlabeled()));
    }
    let batch = generate_batch(session, pairs_per_batch)?;
    session.pending = Some(batch.clone());
    session.push_log(LogEvent::Batch {
        batch: batch.clone(),
    });
    Ok(batch)
}

fn generate_batch(session: &Session, pairs_per_batch: usize) -> Result<QueryBatch> {
    let cfg = &session.config;
    if cfg.tasks.is_empty() {
        return Err(Error::NoTasks);
    }
    if pairs_per_batch == 0 {
        return Err(Error::invalid("pairs_per_batch must be >= 1"));
    }
    let s = &cfg.settings;
    let round = session.round_index;
    let task_index = round % cfg.tasks.len();
    let task = &cfg.tasks[task_index];
    let objective = ObjectiveConfig::new(Some(session.cost.clone()), s.lambda)?;
    let x0 = optimize(
        &objective,
        &cfg.arm,
        task,
        s.trajectory_len,
        &s.optimizer,
        None,
    )?
    .trajectory;

    let mut prng = rng::derived(s.seed, Stream::Perturbation, round as u64);
    let mut candidates = vec![x0.clone()];
    for _ in 0..s.perturbation.count {
        candidates.push(perturb_once(&x0, s.perturbation.delta_magnitude, &mut prng)?.trajectory);
    }
    let mut arng = rng::derived(s.seed, Stream::Pairing, round as u64);
    let picks = pair_indices(candidates.len(), pairs_per_batch, &mut arng)?;
    let pairs = picks
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            PreferencePair::new(
                format!("r{round}-p{i}"),
                candidates[a].clone(),
                candidates[b].clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryBatch {
        batch_id: format!("r{round}"),
        round_index: round,
        task_index,
        pairs,
    })
}

/// Index pairs into `n` candidates. Each candidate is used at most once
/// when `2 * pairs <= n`; otherwise each pair draws two distinct members.
fn pair_indices(n: usize, pairs: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::invalid("need at least two candidate trajectories"));
    }
    if 2 * pairs <= n {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Ok(order
            .chunks_exact(2)
            .take(pairs)
            .map(|c| (c[0], c[1]))
            .collect())
    } else {
        Ok((0..pairs)
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                (a, b)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub remaining_in_batch: usize,
    pub trained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainingReport>,
}

/// Records a label on the pending batch. Completing the batch moves its
/// pairs into the history and retrains on all labels so far.
pub fn record_label(session: &mut Session, pair_id: &str, label: Label) -> Result<LabelOutcome> {
    let batch = match session.pending.as_mut() {
        Some(b) => b,
        None => return Err(missing_pair(session, pair_id)),
    };
    let Some(pair) = batch.pairs.iter_mut().find(|p| p.pair_id == pair_id) else {
        return Err(missing_pair(session, pair_id));
    };
    if pair.label.is_some() {
        return Err(Error::AlreadyLabeled(pair_id.to_string()));
    }
    pair.label = Some(label);
    let remaining = batch.unlabeled();
    session.push_log(LogEvent::Label {
        pair_id: pair_id.to_string(),
        label,
    });
    if remaining > 0 {
        return Ok(LabelOutcome {
            remaining_in_batch: remaining,
            trained: false,
            report: None,
        });
    }
    let report = train_round(session)?;
    Ok(LabelOutcome {
        remaining_in_batch: 0,
        trained: true,
        report: Some(report),
    })
}

fn missing_pair(session: &Session, pair_id: &str) -> Error {
    if session.labels.iter().any(|p| p.pair_id == pair_id) {
        Error::AlreadyLabeled(pair_id.to_string())
    } else {
        Error::UnknownPair(pair_id.to_string())
    }
}

fn train_round(session: &mut Session) -> Result<TrainingReport> {
    let round = session.round_index;
    let settings = TrainerSettings {
        rng_seed: rng::derive_seed(session.config.settings.seed, Stream::Training, round as u64),
        ..session.config.settings.trainer
    };
    let mut history = session.labels.clone();
    if let Some(b) = &session.pending {
        history.extend(b.pairs.iter().cloned());
    }
    let (cost, report) = update_weights(&session.cost, &session.config.arm, &history, &settings)?;
    session.cost = cost;
    session.labels = history;
    session.pending = None;
    session.round_index += 1;
    session.last_report = Some(report.clone());
    session.push_log(LogEvent::TrainingRound {
        round_index: round,
        report: report.clone(),
    });
    Ok(report)
}

/// Random smooth perturbations of the SSD optimum on `task`, paired up.
pub fn heldout_pairs(
    arm: &ArmModel,
    task: &Task,
    len: usize,
    count: usize,
    magnitude: f64,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    task.validate(arm)?;
    let x0 = linear_interpolation(task, len)?;
    let mut r = rng::derived(seed, Stream::Evaluation, 0);
    (0..count)
        .map(|i| {
            let a = perturb_once(&x0, magnitude, &mut r)?.trajectory;
            let b = perturb_once(&x0, magnitude, &mut r)?.trajectory;
            PreferencePair::new(format!("eval-{i}"), a, b)
        })
        .collect()
}

/// Fraction of pairs both costs order the same way. A pair where either
/// cost ties counts as half.
pub fn pairwise_agreement(
    learned: &StyleCost,
    truth: &StyleCost,
    arm: &ArmModel,
    pairs: &[PreferencePair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("agreement needs at least one pair"));
    }
    let mut score = 0.0;
    for p in pairs {
        let dl = learned.evaluate(arm, &p.x_a)? - learned.evaluate(arm, &p.x_b)?;
        let dt = truth.evaluate(arm, &p.x_a)? - truth.evaluate(arm, &p.x_b)?;
        if !(dl.is_finite() && dt.is_finite()) {
            return Err(Error::NonFinite("cost difference"));
        }
        score += if dl == 0.0 || dt == 0.0 {
            0.5
        } else if (dl > 0.0) == (dt > 0.0) {
            1.0
        } else {
            0.0
        };
    }
    Ok(score / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub task: Task,
    pub pairs: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            task: default_heldout_task(),
            pairs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrainingConfig {
    pub session: SessionConfig,
    pub oracle: Oracle,
    pub rounds: usize,
    #[serde(default)]
    pub eval: EvalSettings,
}

/// One row of the learning curve. Row 0 is the untrained cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub labels_total: usize,
    pub mean_loss: Option<f64>,
    pub agreement: f64,
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub session: Session,
    pub rounds: Vec<RoundReport>,
    pub final_report: Option<TrainingReport>,
}

impl OracleRun {
    pub fn learned(&self) -> &StyleCost {
        &self.session.cost
    }

    pub fn final_agreement(&self) -> f64 {
        self.rounds.last().map_or(0.5, |r| r.agreement)
    }
}

/// Runs `rounds` iterations of batch, oracle labels, retrain.
pub fn run_oracle_training(session_id: &str, config: &OracleTrainingConfig) -> Result<OracleRun> {
    run_oracle_training_with(session_id, config, |_| {})
}

/// As [`run_oracle_training`], calling `on_round` after every row.
pub fn run_oracle_training_with(
    session_id: &str,
    config: &OracleTrainingConfig,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<OracleRun> {
    config.oracle.validate()?;
    let mut session = Session::new(session_id, config.session.clone())?;
    let s = &config.session.settings;
    let arm = config.session.arm.clone();
    config
        .oracle
        .ground_truth
        .check_compatible(&arm, s.trajectory_len)?;
    let eval = heldout_pairs(
        &arm,
        &config.eval.task,
        s.trajectory_len,
        config.eval.pairs,
        s.perturbation.delta_magnitude,
        config.eval.seed,
    )?;
    let mut oracle_rng = rng::derived(config.oracle.rng_seed, Stream::Oracle, 0);

    let row0 = RoundReport {
        round: 0,
        labels_total: 0,
        mean_loss: None,
        agreement: pairwise_agreement(&session.cost, &config.oracle.ground_truth, &arm, &eval)?,
    };
    on_round(&row0);
    let mut rows = vec![row0];
    let mut final_report = None;
    for round in 1..=config.rounds {
        let batch = next_batch(&mut session, s.pairs_per_batch)?;
        let mut report = None;
        for pair in &batch.pairs {
            let label = oracle_label(&config.oracle, &arm, pair, &mut oracle_rng)?;
            report = record_label(&mut session, &pair.pair_id, label)?.report;
        }
        let report =
            report.ok_or_else(|| Error::Training("batch completed without training".into()))?;
        let row = RoundReport {
            round,
            labels_total: session.labels.len(),
            mean_loss: Some(report.final_loss),
            agreement: pairwise_agreement(&session.cost, &config.oracle.ground_truth, &arm, &eval)?,
        };
        on_round(&row);
        rows.push(row);
        final_report = Some(report);
    }
    Ok(OracleRun {
        session,
        rounds: rows,
        final_report,
    })
}
