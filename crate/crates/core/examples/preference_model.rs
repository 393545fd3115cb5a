//! The Bradley-Terry choice model and one training step on hand-made pairs.

use style_opt::costs::{FeaturizedCost, StyleCost};
use style_opt::kinematics::ArmModel;
use style_opt::learning::{
    choice_probabilities, mean_loss, update_weights, Label, PreferencePair, TrainerSettings,
};
use style_opt::trajectory::{linear_interpolation, Task};

fn main() -> style_opt::Result<()> {
    for (ca, cb) in [(0.0, 0.0), (1.0, 0.0), (0.0, 2.0), (5.0, -5.0)] {
        let (pa, pb) = choice_probabilities(ca, cb)?;
        println!("C(A)={ca:+.1} C(B)={cb:+.1}  P(A)={pa:.4} P(B)={pb:.4}");
    }

    // A "low" style: prefer the trajectory whose goal is lower.
    let arm = ArmModel::default();
    let low = linear_interpolation(&Task::new(vec![0.0, 0.3, 0.3], vec![0.5, 1.2, 1.0]), 10)?;
    let high = linear_interpolation(&Task::new(vec![0.0, 0.3, 0.3], vec![0.5, 0.2, 0.2]), 10)?;
    let pairs = vec![
        PreferencePair::new("p0", low.clone(), high.clone())?.labeled(Label::A),
        PreferencePair::new("p1", high, low)?.labeled(Label::B),
    ];

    let cost = StyleCost::Featurized(FeaturizedCost::zeros("low", false, 10));
    println!("loss before {:.4}", mean_loss(&cost, &arm, &pairs)?);
    let (learned, report) = update_weights(&cost, &arm, &pairs, &TrainerSettings::default())?;
    println!(
        "loss after {:.4} ({} epochs over {} pairs)",
        report.final_loss, report.epochs, report.pairs_used
    );
    if let StyleCost::Featurized(f) = &learned {
        println!("learned w (radius, height, tilt) = {:.3?}", f.w);
    }
    Ok(())
}
