//! A labeling session driven by hand: fetch a batch, label it, persist,
//! reload, and rebuild the cost from the event log alone.

use style_opt::costs::CostKind;
use style_opt::query::{
    ee_oracle_cost, next_batch, oracle_label, record_label, Oracle, HAPPY_WEIGHTS,
};
use style_opt::rng::seeded;
use style_opt::store::{load_session, replay, save_session, LogEvent, Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut session = Session::new(
        "happy-demo",
        SessionConfig::new("happy", CostKind::Featurized),
    )?;
    let oracle = Oracle::deterministic(ee_oracle_cost("happy", HAPPY_WEIGHTS));
    let mut rng = seeded(1);

    for _ in 0..3 {
        let batch = next_batch(&mut session, 4)?;
        for pair in &batch.pairs {
            let label = oracle_label(&oracle, &session.config.arm, pair, &mut rng)?;
            let out = record_label(&mut session, &pair.pair_id, label)?;
            if let Some(report) = out.report {
                println!("{} trained: loss {:.4}", batch.batch_id, report.final_loss);
            }
        }
    }

    let dir = tempfile_dir()?;
    save_session(&session, &dir)?;
    let loaded = load_session(&dir)?;
    let kinds: Vec<&str> = loaded
        .log()
        .iter()
        .map(|r| match r.event {
            LogEvent::Config { .. } => "config",
            LogEvent::Batch { .. } => "batch",
            LogEvent::Label { .. } => "label",
            LogEvent::TrainingRound { .. } => "train",
        })
        .collect();
    println!("{} log records: {}", kinds.len(), kinds.join(" "));

    let rebuilt = replay(loaded.log())?;
    println!("replayed cost identical: {}", rebuilt.cost == session.cost);
    println!("saved under {}", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("style_opt_session_demo");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
