//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::Rng as _;
use style_opt::costs::{
    extract_features, mlp_cost, mlp_param_gradient, CostKind, FeaturizedCost, MlpCost,
    ObjectiveConfig, StyleCost,
};
use style_opt::kinematics::ArmModel;
use style_opt::learning::{
    augment_rotations, choice_probabilities, featurized_batch_gradient, mean_loss,
    mlp_batch_gradient, Label, PreferencePair,
};
use style_opt::optimizer::{optimize, plan, GradientMode, OptimizerSettings};
use style_opt::query::{
    default_heldout_task, ee_oracle_cost, hesitant_oracle_cost, label_from_costs, next_batch,
    oracle_label, record_label, run_oracle_training, EvalSettings, Oracle, OracleMode, OracleRun,
    OracleTrainingConfig, SAD_WEIGHTS,
};
use style_opt::rng::{seeded, Rng};
use style_opt::store::{load_session, replay, save_session, Session, SessionConfig};
use style_opt::trajectory::{
    linear_interpolation, perturb_once, rotate_trajectory, Task, Trajectory,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_config(rng: &mut Rng, dof: usize) -> Vec<f64> {
    (0..dof).map(|_| rng.random_range(-PI..PI)).collect()
}

fn random_trajectory(rng: &mut Rng, dof: usize, len: usize) -> Trajectory {
    let data = (0..dof * len).map(|_| rng.random_range(-PI..PI)).collect();
    Trajectory::new(dof, data).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn labeled_pairs(
    arm: &ArmModel,
    truth: &StyleCost,
    n: usize,
    rng: &mut Rng,
) -> Vec<PreferencePair> {
    let task = default_heldout_task();
    let x0 = linear_interpolation(&task, 10).unwrap();
    (0..n)
        .map(|i| {
            let a = perturb_once(&x0, 0.35, rng).unwrap().trajectory;
            let b = perturb_once(&x0, 0.35, rng).unwrap().trajectory;
            let label = if truth.evaluate(arm, &a).unwrap() <= truth.evaluate(arm, &b).unwrap() {
                Label::A
            } else {
                Label::B
            };
            PreferencePair::new(format!("p{i}"), a, b)
                .unwrap()
                .labeled(label)
        })
        .collect()
}

fn a1_ssd_optimality() -> Outcome {
    let arm = ArmModel::default();
    let mut rng = seeded(1);
    let cfg = ObjectiveConfig::ssd_only(1.0);
    let settings = OptimizerSettings::default();
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for _ in 0..20 {
        let task = Task::new(random_config(&mut rng, 3), random_config(&mut rng, 3));
        let line = linear_interpolation(&task, 10).unwrap();
        let start = perturb_once(&line, 1.0, &mut rng).unwrap().trajectory;
        let out = optimize(&cfg, &arm, &task, 10, &settings, Some(&start)).unwrap();
        all_converged &= out.converged;
        worst = worst.max(out.trajectory.max_interior_deviation(&line));
    }
    outcome(
        worst < 1e-3 && all_converged,
        format!("max interior deviation {worst:.2e} rad over 20 tasks (< 1e-3)"),
    )
}

fn a2_gradients() -> Outcome {
    let arm = ArmModel::default();
    let mut rng = seeded(2);
    let truth = ee_oracle_cost("sad", SAD_WEIGHTS);
    let pairs = labeled_pairs(&arm, &truth, 12, &mut rng);

    // featurized: closed form sigma(w.d) d, averaged
    let w = vec![0.4, -0.3, 0.8];
    let feat = FeaturizedCost::new("t", false, w.clone()).unwrap();
    let (_, g) = featurized_batch_gradient(&feat, &arm, &pairs).unwrap();
    let diffs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| {
            let (c, o) = p.ordered().unwrap();
            let fc = extract_features(&arm, c).unwrap().to_vec(false);
            let fo = extract_features(&arm, o).unwrap().to_vec(false);
            fc.iter().zip(&fo).map(|(a, b)| a - b).collect()
        })
        .collect();
    let mut closed = vec![0.0; 3];
    for d in &diffs {
        let z: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
        let s = 1.0 / (1.0 + (-z).exp());
        for (c, di) in closed.iter_mut().zip(d) {
            *c += s * di / diffs.len() as f64;
        }
    }
    let feat_loss = |w: &[f64]| {
        let c = StyleCost::Featurized(FeaturizedCost::new("t", false, w.to_vec()).unwrap());
        mean_loss(&c, &arm, &pairs).unwrap()
    };
    let fd = central_diff(feat_loss, &w, 1e-6);
    let e_closed = rel_err(&g, &closed);
    let e_fd = rel_err(&g, &fd);

    // mlp: cost and loss gradients, no dropout
    let mlp = MlpCost::new("t", 3, 0.0, &mut seeded(3)).unwrap();
    let theta = mlp.params();
    let with = |p: &[f64]| {
        let mut m = mlp.clone();
        m.set_params(p).unwrap();
        m
    };
    let x = &pairs[0].x_a;
    let (_, gc) = mlp_param_gradient(&mlp, &arm, x).unwrap();
    let fd_c = central_diff(|p| mlp_cost(&with(p), &arm, x).unwrap(), &theta, 1e-5);
    let e_mlp_cost = rel_err(&gc.flatten(), &fd_c);
    let (_, gl) = mlp_batch_gradient(&mlp, &arm, &pairs[..4]).unwrap();
    let fd_l = central_diff(
        |p| mean_loss(&StyleCost::Mlp(with(p)), &arm, &pairs[..4]).unwrap(),
        &theta,
        1e-5,
    );
    let e_mlp_loss = rel_err(&gl, &fd_l);

    outcome(
        e_closed < 1e-6 && e_fd < 1e-6 && e_mlp_cost < 1e-3 && e_mlp_loss < 1e-3,
        format!(
            "featurized vs closed form {e_closed:.1e}, vs FD {e_fd:.1e} (< 1e-6); mlp cost {e_mlp_cost:.1e}, loss {e_mlp_loss:.1e} (< 1e-3)"
        ),
    )
}

/// Runs `f` for seeds 0..5, in parallel where cores allow.
fn per_seed<T: Send>(f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..5).map(|seed| scope.spawn(move || f(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn oracle_config(
    cost: CostKind,
    truth: StyleCost,
    rounds: usize,
    seed: u64,
) -> OracleTrainingConfig {
    let mut session = SessionConfig::new(truth.style().to_string(), cost);
    session.settings.seed = seed;
    OracleTrainingConfig {
        session,
        oracle: Oracle::deterministic(truth),
        rounds,
        eval: EvalSettings {
            seed,
            ..EvalSettings::default()
        },
    }
}

fn signs_match(run: &OracleRun) -> bool {
    match run.learned() {
        StyleCost::Featurized(f) => f
            .normalized()
            .iter()
            .zip(SAD_WEIGHTS)
            .all(|(a, b)| a.signum() == b.signum()),
        StyleCost::Mlp(_) => false,
    }
}

fn a3_featurized_recovery() -> Outcome {
    let results = per_seed(|seed| {
        let cfg = oracle_config(
            CostKind::Featurized,
            ee_oracle_cost("sad", SAD_WEIGHTS),
            25,
            seed,
        );
        let run = run_oracle_training(&format!("a3-{seed}"), &cfg).unwrap();
        (run.final_agreement(), signs_match(&run))
    });
    let good = results
        .iter()
        .filter(|(a, signs)| *a >= 0.90 && *signs)
        .count();
    let rows: Vec<String> = results
        .iter()
        .map(|(a, signs)| format!("{a:.3}{}", if *signs { "" } else { "(sign)" }))
        .collect();
    outcome(
        good >= 4,
        format!(
            "agreement {} at 100 labels; {good}/5 seeds ok (need 4)",
            rows.join("/")
        ),
    )
}

fn a4_mlp_recovery() -> Outcome {
    let results = per_seed(|seed| {
        let mut cfg = oracle_config(CostKind::Mlp, ee_oracle_cost("sad", SAD_WEIGHTS), 75, seed);
        let s = &mut cfg.session.settings;
        s.lambda = 5.0;
        s.trainer.epochs_per_round = Some(10);
        s.optimizer.gradient_mode = GradientMode::Analytic;
        run_oracle_training(&format!("a4-{seed}"), &cfg)
            .unwrap()
            .final_agreement()
    });
    let good = results.iter().filter(|a| **a >= 0.80).count();
    let rows: Vec<String> = results.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        good >= 4,
        format!(
            "agreement {} at 300 labels; {good}/5 seeds ok (need 4)",
            rows.join("/")
        ),
    )
}

fn a5_hesitant() -> Outcome {
    let results = per_seed(|seed| {
        let mut cfg = oracle_config(
            CostKind::Featurized,
            hesitant_oracle_cost(10).unwrap(),
            25,
            seed,
        );
        cfg.session.settings.uses_velocity = true;
        let run = run_oracle_training(&format!("a5-{seed}"), &cfg).unwrap();
        let s = &run.session;
        let objective =
            ObjectiveConfig::new(Some(s.cost.clone()), s.config.settings.lambda).unwrap();
        let p = plan(
            &objective,
            &s.config.arm,
            &default_heldout_task(),
            10,
            &s.config.settings.optimizer,
        )
        .unwrap();
        let seg = p.timed.trajectory.segment_lengths();
        let first = seg[..3].iter().sum::<f64>() / 3.0;
        let last = seg[seg.len() - 3..].iter().sum::<f64>() / 3.0;
        (last, first)
    });
    let good = results.iter().filter(|(last, first)| last < first).count();
    let rows: Vec<String> = results
        .iter()
        .map(|(last, first)| format!("{last:.2}<{first:.2}"))
        .collect();
    outcome(
        good >= 4,
        format!(
            "last-3 vs first-3 mean segment {}; {good}/5 seeds ok (need 4)",
            rows.join(" ")
        ),
    )
}

fn a6_perturbations() -> Outcome {
    let mut rng = seeded(6);
    let mut endpoint_ok = true;
    let mut peak_err = 0.0f64;
    let mut second_diff = 0.0f64;
    for _ in 0..1000 {
        let dof = rng.random_range(1..=4);
        let len = rng.random_range(4..=16);
        let x0 = random_trajectory(&mut rng, dof, len);
        let magnitude = rng.random_range(0.01..2.0);
        let p = perturb_once(&x0, magnitude, &mut rng).unwrap();
        let x = &p.trajectory;
        endpoint_ok &= x.start() == x0.start() && x.goal() == x0.goal();
        let delta: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                x.waypoint(t)
                    .iter()
                    .zip(x0.waypoint(t))
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        let peak_norm = delta[p.peak].iter().map(|v| v * v).sum::<f64>().sqrt();
        let seed_norm = p.delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        peak_err = peak_err
            .max((peak_norm - seed_norm).abs())
            .max((seed_norm - magnitude).abs());
        for t in (1..len - 1).filter(|&t| t != p.peak) {
            for j in 0..dof {
                second_diff =
                    second_diff.max((delta[t - 1][j] - 2.0 * delta[t][j] + delta[t + 1][j]).abs());
            }
        }
    }
    outcome(
        endpoint_ok && peak_err <= 1e-9 && second_diff <= 1e-9,
        format!(
            "1000 draws: endpoints bit-equal {endpoint_ok}, peak error {peak_err:.1e}, off-peak second difference {second_diff:.1e}"
        ),
    )
}

fn a7_rotation_invariance() -> Outcome {
    let arm = ArmModel::default();
    let mut rng = seeded(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = random_trajectory(&mut rng, 3, 10);
        let theta = rng.random_range(-PI..PI);
        let a = extract_features(&arm, &x).unwrap().to_vec(true);
        let b = extract_features(&arm, &rotate_trajectory(&x, theta).unwrap())
            .unwrap()
            .to_vec(true);
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    let truth = ee_oracle_cost("sad", SAD_WEIGHTS);
    let pairs = labeled_pairs(&arm, &truth, 20, &mut rng);
    let labels_kept = pairs.iter().all(|p| {
        augment_rotations(p, 8, &mut rng)
            .unwrap()
            .iter()
            .all(|q| q.label == p.label)
    });
    outcome(
        worst <= 1e-9 && labels_kept,
        format!("max feature change {worst:.1e} over 1000 rotations; augmented labels preserved {labels_kept}"),
    )
}

fn a8_calibration() -> Outcome {
    let mut rng = seeded(8);
    let mut worst = 0.0f64;
    for gap in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let (ca, cb) = (1.0, 1.0 + gap);
        let (pa, _) = choice_probabilities(ca, cb).unwrap();
        let hits = (0..10_000)
            .filter(|_| {
                label_from_costs(OracleMode::BradleyTerrySampled, ca, cb, &mut rng).unwrap()
                    == Label::A
            })
            .count();
        worst = worst.max((hits as f64 / 10_000.0 - pa).abs());
    }
    let mut sum_err = 0.0f64;
    for &a in &[
        -1e300, -745.0, -40.0, -1e-300, 0.0, 1e-300, 40.0, 745.0, 1e300,
    ] {
        for &b in &[-1e300, -709.0, -1.0, 0.0, 1.0, 709.0, 1e300] {
            let (pa, pb) = choice_probabilities(a, b).unwrap();
            sum_err = sum_err.max((pa + pb - 1.0).abs());
        }
    }
    outcome(
        worst <= 0.02 && sum_err <= 1e-12,
        format!(
            "max frequency error {worst:.4} at 5 gaps (<= 0.02); max |P(A)+P(B)-1| {sum_err:.1e}"
        ),
    )
}

fn three_round_session(kind: CostKind) -> Session {
    let mut cfg = SessionConfig::new("sad", kind);
    cfg.settings.seed = 9;
    cfg.settings.trainer.epochs_per_round = Some(20);
    let mut session = Session::new(format!("a9-{kind:?}"), cfg).unwrap();
    let oracle = Oracle::deterministic(ee_oracle_cost("sad", SAD_WEIGHTS));
    let mut rng = seeded(9);
    for _ in 0..3 {
        let batch = next_batch(&mut session, 4).unwrap();
        for p in &batch.pairs {
            let label = oracle_label(&oracle, &session.config.arm, p, &mut rng).unwrap();
            record_label(&mut session, &p.pair_id, label).unwrap();
        }
    }
    session
}

fn a9_replay() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for kind in [CostKind::Featurized, CostKind::Mlp] {
        let session = three_round_session(kind);
        let dir = tempfile::tempdir().unwrap();
        save_session(&session, dir.path()).unwrap();
        let loaded = load_session(dir.path()).unwrap();
        let rebuilt = replay(loaded.log()).unwrap();
        let same = match (&rebuilt.cost, &session.cost) {
            (StyleCost::Featurized(a), StyleCost::Featurized(b)) => {
                a.w.iter()
                    .zip(&b.w)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (StyleCost::Mlp(a), StyleCost::Mlp(b)) => a
                .params()
                .iter()
                .zip(b.params())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        };
        let same = same && rebuilt.round_index == 3 && loaded.cost == session.cost;
        pass &= same;
        details.push(format!("{kind:?} bit-identical {same}"));
    }
    outcome(
        pass,
        format!(
            "3 rounds saved, loaded and replayed: {}",
            details.join(", ")
        ),
    )
}

fn a10_small_budget() -> Outcome {
    let results = per_seed(|seed| {
        let cfg = oracle_config(
            CostKind::Featurized,
            ee_oracle_cost("sad", SAD_WEIGHTS),
            4,
            seed,
        );
        run_oracle_training(&format!("a10-{seed}"), &cfg)
            .unwrap()
            .final_agreement()
    });
    let good = results.iter().filter(|a| **a >= 0.75).count();
    let rows: Vec<String> = results.iter().map(|a| format!("{a:.3}")).collect();
    outcome(
        good >= 3,
        format!(
            "agreement {} at 16 labels; {good}/5 seeds ok (need 3)",
            rows.join("/")
        ),
    )
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1", Some(Duration::from_secs(5)), a1_ssd_optimality),
        ("A2", Some(Duration::from_secs(10)), a2_gradients),
        ("A3", Some(Duration::from_secs(120)), a3_featurized_recovery),
        ("A4", Some(Duration::from_secs(600)), a4_mlp_recovery),
        ("A5", None, a5_hesitant),
        ("A6", None, a6_perturbations),
        ("A7", None, a7_rotation_invariance),
        ("A8", None, a8_calibration),
        ("A9", None, a9_replay),
        ("A10", None, a10_small_budget),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f.eq_ignore_ascii_case(name)) {
            continue;
        }
        let started = Instant::now();
        let out = check();
        let elapsed = started.elapsed();
        let in_time = limit.is_none_or(|l| elapsed < l);
        let pass = out.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map_or(String::new(), |l| format!(" < {}s", l.as_secs()));
        println!(
            "{name:<3} {} {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
