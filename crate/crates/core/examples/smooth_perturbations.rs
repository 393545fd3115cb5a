//! Query candidates: smooth variants of a straight-line trajectory that keep
//! both endpoints fixed.

use style_opt::rng::seeded;
use style_opt::trajectory::{linear_interpolation, perturb_once, Task};

fn main() -> style_opt::Result<()> {
    let task = Task::new(vec![-1.2, 0.4, 0.6], vec![1.0, 0.2, 0.5]);
    let x0 = linear_interpolation(&task, 10)?;
    let mut rng = seeded(7);

    for _ in 0..4 {
        let p = perturb_once(&x0, 0.35, &mut rng)?;
        let shift: Vec<f64> = (0..x0.len())
            .map(|t| {
                let d2: f64 = p
                    .trajectory
                    .waypoint(t)
                    .iter()
                    .zip(x0.waypoint(t))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                d2.sqrt()
            })
            .collect();
        let bar: String = shift.iter().map(|s| format!("{s:5.3} ")).collect();
        println!("peak at waypoint {}: {bar}", p.peak);
    }

    println!("endpoints are untouched and the displacement is largest at the peak;");
    println!("away from the peak the displacement varies linearly (zero second difference).");
    Ok(())
}
