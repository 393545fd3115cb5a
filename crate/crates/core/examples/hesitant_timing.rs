//! Learns a velocity-aware cost against the hesitant oracle, which prefers
//! motion that starts fast and slows down near the goal, then plans a
//! held-out task with it.

use style_opt::costs::{CostKind, FeaturizedCost, ObjectiveConfig, StyleCost};
use style_opt::optimizer::plan;
use style_opt::query::{
    default_heldout_task, hesitant_oracle_cost, run_oracle_training, EvalSettings, Oracle,
    OracleTrainingConfig,
};
use style_opt::store::SessionConfig;

fn main() -> style_opt::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut session = SessionConfig::new("hesitant", CostKind::Featurized);
    session.settings.uses_velocity = true;
    session.settings.seed = seed;
    let len = session.settings.trajectory_len;
    let cfg = OracleTrainingConfig {
        session,
        oracle: Oracle::deterministic(hesitant_oracle_cost(len)?),
        rounds: 25,
        eval: EvalSettings {
            seed,
            ..EvalSettings::default()
        },
    };
    let run = run_oracle_training(&format!("hesitant-{seed}"), &cfg)?;
    println!("held-out agreement {:.3}", run.final_agreement());
    if let StyleCost::Featurized(f) = run.learned() {
        println!("velocity weights {:+.2?}", &f.normalized()[3..]);
    }

    // Separable labels let the weight scale grow without bound, so the
    // planner also gets the unit-norm direction for a readable magnitude.
    let s = &run.session;
    let lambda = s.config.settings.lambda;
    let unit = match &s.cost {
        StyleCost::Featurized(f) => {
            StyleCost::Featurized(FeaturizedCost::new("hesitant", true, f.normalized())?)
        }
        other => other.clone(),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (name, cost) in [("learned", &s.cost), ("unit-norm", &unit)] {
        let objective = ObjectiveConfig::new(Some(cost.clone()), lambda)?;
        let p = plan(
            &objective,
            &s.config.arm,
            &default_heldout_task(),
            len,
            &s.config.settings.optimizer,
        )?;
        let seg = p.timed.trajectory.segment_lengths();
        println!("{name:>9}: segments {seg:.3?}");
        println!(
            "{:>9}  first three {:.3}, last three {:.3}",
            "",
            mean(&seg[..3]),
            mean(&seg[seg.len() - 3..])
        );
    }
    Ok(())
}
