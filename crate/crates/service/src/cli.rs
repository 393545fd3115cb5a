//! Command-line entry points: `train-oracle`, `serve`, `plan`, `eval`.
//!
//! Any subcommand accepts `--config FILE`, a JSON object whose keys are the
//! subcommand's long flag names in snake_case. Explicit flags win.

use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use style_opt::costs::{CostKind, ObjectiveConfig, StyleCost};
use style_opt::kinematics::{ArmModel, JointConfig};
use style_opt::optimizer::{plan, GradientMode};
use style_opt::query::{
    default_heldout_task, heldout_pairs, pairwise_agreement, run_oracle_training_with,
    EvalSettings, Oracle, OracleMode, OracleTrainingConfig, RoundReport,
};
use style_opt::store::{
    export_trajectory, load_session, save_session, ExportFormat, SessionConfig,
};
use style_opt::trajectory::{PerturbationSpec, Task};

use crate::api::{serve, AppState};

pub const DATA_DIR_ENV: &str = "STYLE_OPT_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "style-opt",
    version,
    about = "Learn motion-style costs from pairwise preferences"
)]
pub struct Cli {
    /// JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the query/label/train loop against a synthetic oracle.
    TrainOracle(TrainOracleArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Optimize a task with a session's learned cost and export it.
    Plan(PlanArgs),
    /// Held-out pairwise agreement of a learned cost against an oracle.
    Eval(EvalArgs),
}

macro_rules! overlay {
    ($t:ident { $($f:ident),* $(,)? }) => {
        impl $t {
            fn overlay(self, under: Self) -> Self {
                $t { $($f: self.$f.or(under.$f)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOracleArgs {
    /// Style name (defaults to the oracle's).
    #[arg(long)]
    pub style: Option<String>,
    /// Cost family to learn: featurized or mlp.
    #[arg(long)]
    pub cost: Option<CostKind>,
    /// Ground-truth cost snapshot (JSON).
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// deterministic or bradley-terry-sampled.
    #[arg(long)]
    pub oracle_mode: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub pairs_per_batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Session directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs_per_round: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub augmentation_factor: Option<usize>,
    #[arg(long)]
    pub uses_velocity: Option<bool>,
    /// finite-difference or analytic.
    #[arg(long)]
    pub gradient_mode: Option<String>,
    #[arg(long)]
    pub eval_pairs: Option<usize>,
}

overlay!(TrainOracleArgs {
    style,
    cost,
    oracle,
    oracle_mode,
    rounds,
    pairs_per_batch,
    seed,
    out,
    lambda,
    epochs_per_round,
    learning_rate,
    augmentation_factor,
    uses_velocity,
    gradient_mode,
    eval_pairs,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<IpAddr>,
    /// Session storage root (else $STYLE_OPT_DATA_DIR, else ./sessions).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

overlay!(ServeArgs {
    port,
    host,
    data_dir
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanArgs {
    /// Session directory.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Start configuration, e.g. "0.1,0.2,0.3".
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub goal: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Waypoint count (defaults to the session's).
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
    /// Output file; .json or .csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

overlay!(PlanArgs {
    session,
    start,
    goal,
    lambda,
    len,
    duration,
    out,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Session directory whose current cost is evaluated.
    #[arg(long, conflicts_with = "cost")]
    pub session: Option<PathBuf>,
    /// Cost snapshot file to evaluate instead of a session.
    #[arg(long)]
    pub cost: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub goal: Option<String>,
}

overlay!(EvalArgs {
    session,
    cost,
    oracle,
    pairs,
    seed,
    start,
    goal,
});

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<style_opt::Error> for CliError {
    fn from(e: style_opt::Error) -> Self {
        let code = match e {
            style_opt::Error::Training(_) => 1,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{what} {}: {e}", path.display())))
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::config(format!("missing required --{flag}")))
}

/// Parses "a,b,c" (commas and/or whitespace) into joint values.
pub fn parse_joints(s: &str) -> CliResult<JointConfig> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::config(format!("bad joint value {t:?} in {s:?}")))
        })
        .collect::<CliResult<Vec<f64>>>()
        .map(JointConfig)
}

fn parse_kebab<T: DeserializeOwned>(value: &str, what: &str) -> CliResult<T> {
    serde_json::from_value(json!(value))
        .map_err(|_| CliError::config(format!("unknown {what} {value:?}")))
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            i32::from(e.code)
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::TrainOracle(a) => train_oracle(a.overlay(read_config(config)?)),
        Command::Serve(a) => run_serve(a.overlay(read_config(config)?)),
        Command::Plan(a) => run_plan(a.overlay(read_config(config)?)),
        Command::Eval(a) => run_eval(a.overlay(read_config(config)?)),
    }
}

#[derive(Debug, Serialize)]
struct TrainOracleOutput<'a> {
    session_id: &'a str,
    rounds: &'a [RoundReport],
    final_report: Option<&'a style_opt::learning::TrainingReport>,
    final_agreement: f64,
}

fn train_oracle(a: TrainOracleArgs) -> CliResult<()> {
    let oracle_path = required(a.oracle, "oracle")?;
    let out = required(a.out, "out")?;
    let truth: StyleCost = read_json(&oracle_path, "oracle")?;
    truth.validate()?;
    let mode = match &a.oracle_mode {
        Some(m) => parse_kebab::<OracleMode>(m, "oracle mode")?,
        None => OracleMode::Deterministic,
    };
    let seed = a.seed.unwrap_or(0);
    let cost = a.cost.unwrap_or(CostKind::Featurized);
    let mut session =
        SessionConfig::new(a.style.unwrap_or_else(|| truth.style().to_string()), cost);
    let s = &mut session.settings;
    s.seed = seed;
    s.pairs_per_batch = a.pairs_per_batch.unwrap_or(s.pairs_per_batch);
    s.lambda = a.lambda.unwrap_or(s.lambda);
    s.uses_velocity = a.uses_velocity.unwrap_or(match &truth {
        StyleCost::Featurized(f) => cost == CostKind::Featurized && f.uses_velocity,
        StyleCost::Mlp(_) => false,
    });
    s.trainer.epochs_per_round = a.epochs_per_round.or(s.trainer.epochs_per_round);
    s.trainer.learning_rate = a.learning_rate.or(s.trainer.learning_rate);
    s.trainer.augmentation_factor = a
        .augmentation_factor
        .unwrap_or(s.trainer.augmentation_factor);
    if 2 * s.pairs_per_batch > s.perturbation.count + 1 {
        s.perturbation = PerturbationSpec {
            count: 2 * s.pairs_per_batch - 1,
            ..s.perturbation
        };
    }
    if let Some(m) = &a.gradient_mode {
        s.optimizer.gradient_mode = parse_kebab::<GradientMode>(m, "gradient mode")?;
    }
    session.validate()?;
    let cfg = OracleTrainingConfig {
        session,
        oracle: Oracle {
            ground_truth: truth,
            mode,
            rng_seed: seed,
        },
        rounds: a.rounds.unwrap_or(25),
        eval: EvalSettings {
            pairs: a.eval_pairs.unwrap_or(200),
            seed,
            ..EvalSettings::default()
        },
    };
    let session_id = out
        .file_name()
        .and_then(|n| n.to_str())
        .filter(|n| !n.is_empty())
        .unwrap_or("session")
        .to_string();

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let _ = writeln!(w, "round\tlabels\tloss\tagreement");
    let run = run_oracle_training_with(&session_id, &cfg, |r| {
        let loss = r.mean_loss.map_or("-".to_string(), |l| format!("{l:.6}"));
        let _ = writeln!(
            w,
            "{}\t{}\t{}\t{:.3}",
            r.round, r.labels_total, loss, r.agreement
        );
        let _ = w.flush();
    })?;
    drop(w);
    save_session(&run.session, &out)?;
    let report = TrainOracleOutput {
        session_id: &session_id,
        rounds: &run.rounds,
        final_report: run.final_report.as_ref(),
        final_agreement: run.final_agreement(),
    };
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::config(e.to_string()))?;
    let report_path = out.join("report.json");
    std::fs::write(&report_path, text).map_err(|e| CliError {
        code: 1,
        message: format!("{}: {e}", report_path.display()),
    })?;
    println!("final agreement {:.3}", run.final_agreement());
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run_serve(a: ServeArgs) -> CliResult<()> {
    let data_dir = a
        .data_dir
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sessions"));
    std::fs::create_dir_all(&data_dir)
        .map_err(|e| CliError::config(format!("{}: {e}", data_dir.display())))?;
    let addr = SocketAddr::new(
        a.host.unwrap_or(IpAddr::from([127, 0, 0, 1])),
        a.port.unwrap_or(8080),
    );
    let state = AppState::new(style_opt::store::SessionStore::new(data_dir.clone()));
    eprintln!("session data in {}", data_dir.display());
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError {
        code: 1,
        message: e.to_string(),
    })?;
    rt.block_on(serve(state, addr))
        .map_err(|e| CliError::config(format!("cannot serve on {addr}: {e}")))
}

fn run_plan(a: PlanArgs) -> CliResult<()> {
    let dir = required(a.session, "session")?;
    let out = required(a.out, "out")?;
    let format = ExportFormat::from_path(&out)?;
    let session = load_session(&dir)?;
    let settings = &session.config.settings;
    let mut task = Task::new(
        parse_joints(&required(a.start, "start")?)?,
        parse_joints(&required(a.goal, "goal")?)?,
    );
    if let Some(d) = a.duration {
        task.duration = d;
    }
    let len = a.len.unwrap_or(settings.trajectory_len);
    session.cost.check_compatible(&session.config.arm, len)?;
    let cfg = ObjectiveConfig::new(
        Some(session.cost.clone()),
        a.lambda.unwrap_or(settings.lambda),
    )?;
    let p = plan(&cfg, &session.config.arm, &task, len, &settings.optimizer)?;
    export_trajectory(&p.timed, &out, format)?;
    let summary = json!({
        "out": out,
        "waypoints": len,
        "objective_initial": p.objective_history.first(),
        "objective_final": p.objective_history.last(),
        "iterations": p.iterations,
        "converged": p.converged,
    });
    println!("{summary}");
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult<()> {
    let oracle: StyleCost = read_json(&required(a.oracle, "oracle")?, "oracle")?;
    oracle.validate()?;
    let (learned, arm, len, magnitude) = match (a.session, a.cost) {
        (Some(dir), _) => {
            let s = load_session(&dir)?;
            let st = &s.config.settings;
            (
                s.cost.clone(),
                s.config.arm.clone(),
                st.trajectory_len,
                st.perturbation.delta_magnitude,
            )
        }
        (None, Some(path)) => {
            let c: StyleCost = read_json(&path, "cost")?;
            c.validate()?;
            let len = match &c {
                StyleCost::Featurized(f) => f.implied_len().unwrap_or(10),
                StyleCost::Mlp(_) => 10,
            };
            (
                c,
                ArmModel::default(),
                len,
                PerturbationSpec::default().delta_magnitude,
            )
        }
        (None, None) => return Err(CliError::config("one of --session or --cost is required")),
    };
    let mut task = default_heldout_task();
    if let Some(s) = &a.start {
        task.start = parse_joints(s)?;
    }
    if let Some(g) = &a.goal {
        task.goal = parse_joints(g)?;
    }
    oracle.check_compatible(&arm, len)?;
    learned.check_compatible(&arm, len)?;
    let n = a.pairs.unwrap_or(200);
    let pairs = heldout_pairs(&arm, &task, len, n, magnitude, a.seed.unwrap_or(0))?;
    let agreement = pairwise_agreement(&learned, &oracle, &arm, &pairs)?;
    println!("{}", json!({"agreement": agreement, "pairs": n}));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joints_parse_with_commas_or_spaces() {
        assert_eq!(
            parse_joints("0.1,-0.2, 3").unwrap(),
            JointConfig(vec![0.1, -0.2, 3.0])
        );
        assert_eq!(parse_joints(" 1 2 ").unwrap(), JointConfig(vec![1.0, 2.0]));
        assert_eq!(parse_joints("1,,a").unwrap_err().code, 2);
    }

    #[test]
    fn flags_override_file_values() {
        let flags = PlanArgs {
            lambda: Some(2.0),
            ..Default::default()
        };
        let file = PlanArgs {
            lambda: Some(9.0),
            len: Some(7),
            ..Default::default()
        };
        let merged = flags.overlay(file);
        assert_eq!(merged.lambda, Some(2.0));
        assert_eq!(merged.len, Some(7));
        assert_eq!(merged.out, None);
    }

    #[test]
    fn training_errors_are_runtime_failures() {
        assert_eq!(
            CliError::from(style_opt::Error::Training("nan".into())).code,
            1
        );
        assert_eq!(CliError::from(style_opt::Error::NoTasks).code, 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory as _;
        Cli::command().debug_assert();
    }
}
