//! Learns the featurized sad cost from 100 synthetic labels and compares the
//! learned direction with the ground truth.
//!
//! `cargo run --release --example learn_sad_from_oracle -- [seed]`

use style_opt::costs::{CostKind, StyleCost};
use style_opt::query::{
    ee_oracle_cost, run_oracle_training_with, EvalSettings, Oracle, OracleTrainingConfig,
    SAD_WEIGHTS,
};
use style_opt::store::SessionConfig;

fn main() -> style_opt::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut session = SessionConfig::new("sad", CostKind::Featurized);
    session.settings.seed = seed;
    let cfg = OracleTrainingConfig {
        session,
        oracle: Oracle::deterministic(ee_oracle_cost("sad", SAD_WEIGHTS)),
        rounds: 25,
        eval: EvalSettings {
            seed,
            ..EvalSettings::default()
        },
    };

    println!("round labels    loss agreement");
    let run = run_oracle_training_with("sad-demo", &cfg, |r| {
        if r.round % 5 == 0 {
            let loss = r.mean_loss.map_or("      -".into(), |l| format!("{l:7.4}"));
            println!(
                "{:5} {:6} {loss} {:9.3}",
                r.round, r.labels_total, r.agreement
            );
        }
    })?;

    let norm = SAD_WEIGHTS.iter().map(|w| w * w).sum::<f64>().sqrt();
    let truth: Vec<f64> = SAD_WEIGHTS.iter().map(|w| w / norm).collect();
    if let StyleCost::Featurized(f) = run.learned() {
        println!("learned direction {:+.3?}", f.normalized());
        println!("true direction    {truth:+.3?}");
    }
    Ok(())
}
