//! Learns a neural style cost against the sad oracle.
//!
//! Uses a short schedule (10 epochs per round, warm-started) and a stiffer
//! smoothness weight so queries stay near the held-out region.
//!
//! `cargo run --release --example learn_mlp_from_oracle -- [seed] [rounds]`

use style_opt::costs::CostKind;
use style_opt::optimizer::GradientMode;
use style_opt::query::{
    ee_oracle_cost, run_oracle_training_with, EvalSettings, Oracle, OracleTrainingConfig,
    SAD_WEIGHTS,
};
use style_opt::store::SessionConfig;

fn main() -> style_opt::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let rounds: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(75);

    let mut session = SessionConfig::new("sad", CostKind::Mlp);
    let s = &mut session.settings;
    s.seed = seed;
    s.lambda = 5.0;
    s.trainer.epochs_per_round = Some(10);
    s.optimizer.gradient_mode = GradientMode::Analytic;
    let cfg = OracleTrainingConfig {
        session,
        oracle: Oracle::deterministic(ee_oracle_cost("sad", SAD_WEIGHTS)),
        rounds,
        eval: EvalSettings {
            seed,
            ..EvalSettings::default()
        },
    };

    let started = std::time::Instant::now();
    let run = run_oracle_training_with("mlp-demo", &cfg, |r| {
        if r.round % 10 == 0 || r.round == rounds {
            println!(
                "round {:3}  labels {:3}  agreement {:.3}  ({:.1?})",
                r.round,
                r.labels_total,
                r.agreement,
                started.elapsed()
            );
        }
    })?;
    println!("final held-out agreement {:.3}", run.final_agreement());
    Ok(())
}
