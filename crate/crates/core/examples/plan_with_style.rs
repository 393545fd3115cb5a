//! Plans one task with smoothness only and with the sad and happy oracle
//! costs, then exports the sad plan as CSV.

use style_opt::costs::{extract_features, ObjectiveConfig};
use style_opt::kinematics::ArmModel;
use style_opt::optimizer::{plan, GradientMode, OptimizerSettings};
use style_opt::query::{ee_oracle_cost, HAPPY_WEIGHTS, SAD_WEIGHTS};
use style_opt::store::{export_trajectory, ExportFormat};
use style_opt::trajectory::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arm = ArmModel::default();
    let task = Task::new(vec![-0.8, 0.7, 0.5], vec![0.9, 0.3, 1.1]);
    let settings = OptimizerSettings {
        gradient_mode: GradientMode::Analytic,
        ..OptimizerSettings::default()
    };
    let lambda = 2.0;

    let styles = [
        ("none", ObjectiveConfig::ssd_only(lambda)),
        (
            "sad",
            ObjectiveConfig::new(Some(ee_oracle_cost("sad", SAD_WEIGHTS)), lambda)?,
        ),
        (
            "happy",
            ObjectiveConfig::new(Some(ee_oracle_cost("happy", HAPPY_WEIGHTS)), lambda)?,
        ),
    ];
    println!(
        "{:>6} {:>7} {:>7} {:>7} {:>5}",
        "style", "radius", "height", "tilt", "iters"
    );
    let mut sad_plan = None;
    for (name, cfg) in &styles {
        let p = plan(cfg, &arm, &task, 10, &settings)?;
        let f = extract_features(&arm, &p.timed.trajectory)?;
        println!(
            "{name:>6} {:7.3} {:7.3} {:7.3} {:5}",
            f.radius, f.height, f.orientation, p.iterations
        );
        if *name == "sad" {
            sad_plan = Some(p);
        }
    }

    let out = std::env::temp_dir().join("style_opt_sad_plan.csv");
    export_trajectory(&sad_plan.unwrap().timed, &out, ExportFormat::Csv)?;
    println!("sad plan written to {}", out.display());
    Ok(())
}
