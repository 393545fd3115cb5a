//! Sessions, on-disk persistence, log replay and trajectory export.
//!
//! A session directory holds `session.json` (the current snapshot),
//! `log.jsonl` (append-only event log) and `exports/`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::costs::{CostKind, FeaturizedCost, MlpCost, StyleCost, DEFAULT_DROPOUT, DEFAULT_LAMBDA};
use crate::error::{Error, Result};
use crate::kinematics::ArmModel;
use crate::learning::{Label, PreferencePair, TrainerSettings, TrainingReport};
use crate::optimizer::OptimizerSettings;
use crate::query::{default_training_tasks, record_label, QueryBatch};
use crate::rng::{self, Stream};
use crate::trajectory::{PerturbationSpec, Task, TimedTrajectory, Trajectory};

pub const SESSION_FILE: &str = "session.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const EXPORTS_DIR: &str = "exports";

/// Tunables of one learning session. Per-round seeds for perturbation,
/// pairing, training and initialization all derive from `seed`; the
/// `rng_seed` fields of the nested settings are not used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub trajectory_len: usize,
    pub pairs_per_batch: usize,
    pub lambda: f64,
    pub uses_velocity: bool,
    pub dropout: f64,
    pub seed: u64,
    pub trainer: TrainerSettings,
    pub perturbation: PerturbationSpec,
    pub optimizer: OptimizerSettings,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            trajectory_len: 10,
            pairs_per_batch: 4,
            lambda: DEFAULT_LAMBDA,
            uses_velocity: false,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            trainer: TrainerSettings::default(),
            perturbation: PerturbationSpec::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub style: String,
    pub cost_type: CostKind,
    #[serde(default)]
    pub arm: ArmModel,
    #[serde(default = "default_training_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub settings: SessionSettings,
}

impl SessionConfig {
    /// Default arm, tasks and settings.
    pub fn new(style: impl Into<String>, cost_type: CostKind) -> Self {
        SessionConfig {
            style: style.into(),
            cost_type,
            arm: ArmModel::default(),
            tasks: default_training_tasks(),
            settings: SessionSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.style.trim().is_empty() {
            return Err(Error::invalid("style name is empty"));
        }
        self.arm.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::NoTasks);
        }
        for t in &self.tasks {
            t.validate(&self.arm)?;
        }
        let s = &self.settings;
        if s.trajectory_len < 4 {
            return Err(Error::invalid(format!(
                "trajectory_len must be >= 4 for smooth perturbations, got {}",
                s.trajectory_len
            )));
        }
        if s.pairs_per_batch == 0 {
            return Err(Error::invalid("pairs_per_batch must be >= 1"));
        }
        if !(s.lambda.is_finite() && s.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&s.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        s.trainer.validate()?;
        s.perturbation.validate()?;
        s.optimizer.validate()
    }

    /// Untrained cost: zero featurized weights, or a Glorot-initialized
    /// network seeded from `settings.seed`.
    pub fn initial_cost(&self) -> Result<StyleCost> {
        let s = &self.settings;
        Ok(match self.cost_type {
            CostKind::Featurized => StyleCost::Featurized(FeaturizedCost::zeros(
                self.style.clone(),
                s.uses_velocity,
                s.trajectory_len,
            )),
            CostKind::Mlp => {
                let mut r = rng::derived(s.seed, Stream::Init, 0);
                StyleCost::Mlp(MlpCost::new(
                    self.style.clone(),
                    self.arm.dof,
                    s.dropout,
                    &mut r,
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Config {
        session_id: String,
        config: SessionConfig,
        initial_cost: StyleCost,
    },
    Batch {
        batch: QueryBatch,
    },
    Label {
        pair_id: String,
        label: Label,
    },
    TrainingRound {
        round_index: usize,
        report: TrainingReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub config: SessionConfig,
    pub cost: StyleCost,
    /// Labeled pairs in the order they were completed.
    pub labels: Vec<PreferencePair>,
    pub pending: Option<QueryBatch>,
    pub round_index: usize,
    pub last_report: Option<TrainingReport>,
    #[serde(skip)]
    log: Vec<LogRecord>,
}

impl Session {
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let cost = config.initial_cost()?;
        Self::from_initial(session_id.into(), config, cost)
    }

    fn from_initial(session_id: String, config: SessionConfig, cost: StyleCost) -> Result<Self> {
        cost.check_compatible(&config.arm, config.settings.trajectory_len)?;
        let mut s = Session {
            session_id: session_id.clone(),
            config: config.clone(),
            cost: cost.clone(),
            labels: Vec::new(),
            pending: None,
            round_index: 0,
            last_report: None,
            log: Vec::new(),
        };
        s.push_log(LogEvent::Config {
            session_id,
            config,
            initial_cost: cost,
        });
        Ok(s)
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub(crate) fn push_log(&mut self, event: LogEvent) {
        self.log.push(LogRecord {
            at: Utc::now(),
            event,
        });
    }

    /// Labels received so far, including those in the pending batch.
    pub fn labels_total(&self) -> usize {
        let pending = self
            .pending
            .as_ref()
            .map_or(0, |b| b.pairs.iter().filter(|p| p.label.is_some()).count());
        self.labels.len() + pending
    }

    /// Structural checks applied on load and before save.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let arm = &self.config.arm;
        let len = self.config.settings.trajectory_len;
        self.cost.validate()?;
        self.cost.check_compatible(arm, len)?;
        let pending = self.pending.iter().flat_map(|b| b.pairs.iter());
        for p in self.labels.iter().chain(pending) {
            for x in [&p.x_a, &p.x_b] {
                x.check_arm(arm)?;
                if x.len() != len {
                    return Err(Error::dim("stored trajectory length", len, x.len()));
                }
                crate::error::ensure_finite(x.as_slice(), "stored trajectory")?;
            }
        }
        if self.labels.iter().any(|p| p.label.is_none()) {
            return Err(Error::invalid("label history contains an unlabeled pair"));
        }
        Ok(())
    }

    /// Session state without the log, for comparisons.
    pub fn same_state(&self, other: &Session) -> bool {
        self.session_id == other.session_id
            && self.config == other.config
            && self.cost == other.cost
            && self.labels == other.labels
            && self.pending == other.pending
            && self.round_index == other.round_index
            && self.last_report == other.last_report
    }
}

/// Rebuilds a session by re-running every logged event. Training rounds are
/// recomputed and must reproduce the logged reports exactly.
pub fn replay(log: &[LogRecord]) -> Result<Session> {
    let mut events = log.iter().map(|r| &r.event);
    let Some(LogEvent::Config {
        session_id,
        config,
        initial_cost,
    }) = events.next()
    else {
        return Err(Error::Replay(
            "log does not start with a config record".into(),
        ));
    };
    config.validate()?;
    let mut s = Session::from_initial(session_id.clone(), config.clone(), initial_cost.clone())?;
    let mut expected_reports = Vec::new();
    for event in events {
        match event {
            LogEvent::Config { .. } => return Err(Error::Replay("second config record".into())),
            LogEvent::Batch { batch } => {
                if s.pending.is_some() {
                    return Err(Error::Replay(format!(
                        "batch {} issued while one is pending",
                        batch.batch_id
                    )));
                }
                if batch.round_index != s.round_index {
                    return Err(Error::Replay(format!(
                        "batch {} is for round {}, session is at round {}",
                        batch.batch_id, batch.round_index, s.round_index
                    )));
                }
                let mut fresh = batch.clone();
                fresh.pairs.iter_mut().for_each(|p| p.label = None);
                s.pending = Some(fresh.clone());
                s.push_log(LogEvent::Batch { batch: fresh });
            }
            LogEvent::Label { pair_id, label } => {
                record_label(&mut s, pair_id, *label)?;
            }
            LogEvent::TrainingRound {
                round_index,
                report,
            } => {
                expected_reports.push((*round_index, report.clone()));
            }
        }
    }
    let produced: Vec<_> = s
        .log
        .iter()
        .filter_map(|r| match &r.event {
            LogEvent::TrainingRound {
                round_index,
                report,
            } => Some((*round_index, report.clone())),
            _ => None,
        })
        .collect();
    if produced != expected_reports {
        return Err(Error::Replay(
            "recomputed training rounds differ from the log".into(),
        ));
    }
    Ok(s)
}

/// Replays the session's own log and checks it lands on the same state,
/// bit for bit.
pub fn verify_replay(session: &Session) -> Result<()> {
    let replayed = replay(&session.log)?;
    if replayed.same_state(session) {
        Ok(())
    } else {
        Err(Error::Replay(format!(
            "session {} does not match its replayed log",
            session.session_id
        )))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes `session.json` and `log.jsonl` into `dir` (created if needed).
pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    session.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = serde_json::to_vec_pretty(session)?;
    let mut log = Vec::new();
    for record in &session.log {
        serde_json::to_writer(&mut log, record)?;
        log.push(b'\n');
    }
    write_atomic(&dir.join(LOG_FILE), &log)?;
    write_atomic(&dir.join(SESSION_FILE), &doc)
}

pub fn load_session(dir: &Path) -> Result<Session> {
    let path = dir.join(SESSION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut session: Session = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    session.validate()?;
    let log_path = dir.join(LOG_FILE);
    match fs::read_to_string(&log_path) {
        Ok(text) => {
            session.log = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l).map_err(|source| Error::Json {
                        path: log_path.clone(),
                        source,
                    })
                })
                .collect::<Result<_>>()?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::io(&log_path, e)),
    }
    Ok(session)
}

/// Sessions stored as `<root>/<session_id>/`.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, session_id: &str) -> Result<PathBuf> {
        let ok = !session_id.is_empty()
            && session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(Error::invalid(format!("bad session id {session_id:?}")));
        }
        Ok(self.root.join(session_id))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.dir(session_id)
            .map(|d| d.join(SESSION_FILE).is_file())
            .unwrap_or(false)
    }

    pub fn save(&self, session: &Session) -> Result<()> {
        save_session(session, &self.dir(&session.session_id)?)
    }

    pub fn load(&self, session_id: &str) -> Result<Session> {
        load_session(&self.dir(session_id)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

impl ExportFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::invalid(format!("{}: no file extension", path.display())))?
            .parse()
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(Error::invalid(format!("unknown export format {other:?}"))),
        }
    }
}

/// `time,q1..qD` with one row per waypoint.
pub fn trajectory_csv(x: &TimedTrajectory) -> String {
    let traj = &x.trajectory;
    let mut out = String::from("time");
    for j in 1..=traj.dof() {
        let _ = write!(out, ",q{j}");
    }
    out.push('\n');
    for (t, q) in x.timestamps.iter().zip(traj.waypoints()) {
        let _ = write!(out, "{t}");
        for v in q {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn export_trajectory(x: &TimedTrajectory, path: &Path, format: ExportFormat) -> Result<()> {
    validate_timed(x)?;
    let bytes = match format {
        ExportFormat::Json => serde_json::to_vec_pretty(x)?,
        ExportFormat::Csv => trajectory_csv(x).into_bytes(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(path, &bytes)
}

fn validate_timed(x: &TimedTrajectory) -> Result<()> {
    if x.timestamps.len() != x.trajectory.len() {
        return Err(Error::dim(
            "timestamps",
            x.trajectory.len(),
            x.timestamps.len(),
        ));
    }
    crate::error::ensure_finite(&x.timestamps, "timestamps")?;
    crate::error::ensure_finite(x.trajectory.as_slice(), "trajectory")
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
