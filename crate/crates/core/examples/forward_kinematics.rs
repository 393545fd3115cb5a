//! End-effector poses of the default three-joint arm, and why the style
//! features do not care about the base yaw.

use style_opt::kinematics::{forward_kinematics, rotate_base, ArmModel};

fn main() -> style_opt::Result<()> {
    let arm = ArmModel::default();
    println!("link lengths {:?}", arm.link_lengths);
    println!(
        "{:>22} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "q", "x", "y", "z", "radius", "tilt"
    );
    for q in [
        [0.0, 0.0, 0.0],
        [0.0, std::f64::consts::FRAC_PI_2, 0.0],
        [0.5, 0.6, -0.9],
        [2.0, 1.2, 0.8],
    ] {
        let p = forward_kinematics(&arm, &q)?;
        println!(
            "{:>22} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            format!("{q:.2?}"),
            p.position[0],
            p.position[1],
            p.position[2],
            p.radius(),
            p.tilt()
        );
    }

    let q = [0.5, 0.6, -0.9];
    let base = forward_kinematics(&arm, &q)?;
    for theta in [-2.0, 1.0, 3.0] {
        let r = forward_kinematics(&arm, &rotate_base(&q, theta)?)?;
        println!(
            "yaw {theta:+.1}: radius diff {:.1e}, height diff {:.1e}, tilt diff {:.1e}",
            r.radius() - base.radius(),
            r.height() - base.height(),
            r.tilt() - base.tilt()
        );
    }
    Ok(())
}
