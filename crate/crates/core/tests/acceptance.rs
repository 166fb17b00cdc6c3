//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::{fd_jacobian, random_6r};
use gcstiff::identification::{
    identify, random_excitation, simulate_calibration, ParameterLayout, SimulationOptions,
};
use gcstiff::workspace::compensate_pose;
use gcstiff::{
    cartesian_compliance, cartesian_stiffness, deflection_under_load, evaluate_map, forward_kinematics,
    inverse_kinematics, jacobian_theta, joint_stiffness, presets, Compensator, Config, JointStiffness,
};
use nalgebra::{DVector, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut outcome = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            outcome.pass = false;
            outcome.detail.push_str(&format!("; over the {limit:?} budget"));
        }
    }
    println!(
        "{} {name}: {} [{:.2?}]",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed
    );
    outcome.pass
}

fn compensator_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_stiffness, mut worst_energy) = (0.0f64, 0.0f64);
    let h = 1e-5;
    for _ in 0..1000 {
        let c = Compensator::new(
            rng.random_range(1e5..1e7),
            rng.random_range(0.1..0.8),
            rng.random_range(0.05..0.5),
            rng.random_range(0.2..1.0),
            rng.random_range(-0.3..0.3),
            1,
        )
        .unwrap();
        let q = rng.random_range(-3.0..3.0);
        // torques are bounded by K_c a L, which sets the scale near zeros
        let scale = c.stiffness() * c.a() * c.link_length();
        let fd_stiffness = (c.torque(q + h).unwrap() - c.torque(q - h).unwrap()) / (2.0 * h);
        let k = c.joint_stiffness_contribution(q).unwrap();
        worst_stiffness = worst_stiffness.max((k - fd_stiffness).abs() / k.abs().max(1e-4 * scale));

        let energy = |q: f64| 0.5 * c.stiffness() * (c.spring_length(q) - c.free_length()).powi(2);
        let fd_torque = -(energy(q + h) - energy(q - h)) / (2.0 * h);
        let m = c.torque(q).unwrap();
        worst_energy = worst_energy.max((m - fd_torque).abs() / m.abs().max(1e-4 * scale));
    }
    Outcome {
        pass: worst_stiffness < 1e-5 && worst_energy < 1e-6,
        detail: format!(
            "1000 draws, worst rel. error dM/dq {worst_stiffness:.1e} (< 1e-5), -dU/dq {worst_energy:.1e} (< 1e-6)"
        ),
    }
}

fn cartesian_stiffness_residual() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut residual, mut asym, mut raw_asym) = (0.0f64, 0.0f64, 0.0f64);
    let mut not_pd = 0;
    for _ in 0..100 {
        let (model, cfg) = random_6r(&mut rng, 1e8);
        let k = JointStiffness::classical(&model);
        let kc = cartesian_stiffness(&model, &k, &cfg).unwrap();
        let c = cartesian_compliance(&model, &k, &cfg).unwrap();
        let prod: Matrix6<f64> = kc.matrix * c;
        residual = residual.max((prod - Matrix6::identity()).amax());
        asym = asym.max((kc.matrix - kc.matrix.transpose()).norm() / kc.matrix.norm());
        raw_asym = raw_asym.max(kc.raw_asymmetry);
        if !kc.positive_definite || kc.matrix.symmetric_eigenvalues().min() <= 0.0 {
            not_pd += 1;
        }
    }
    Outcome {
        pass: residual < 1e-8 && asym < 1e-10 && raw_asym < 1e-8 && not_pd == 0,
        detail: format!(
            "100 models, |K_C C - I| {residual:.1e} (< 1e-8), asymmetry {asym:.1e} (< 1e-10), \
             raw {raw_asym:.1e} (< 1e-8), not positive definite {not_pd}"
        ),
    }
}

fn null_compensator() -> Outcome {
    let model = presets::heavy_6r();
    let null = presets::compensator().with_stiffness(0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bitwise = true;
    for _ in 0..1000 {
        let q = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
        let k = joint_stiffness(&model, &[null], &q).unwrap();
        bitwise &= k == JointStiffness::classical(&model);
    }
    let map = evaluate_map(
        &model,
        &[null],
        &presets::machining_area(21, 21),
        &presets::machining_wrench(),
        &presets::home(),
    )
    .unwrap();
    let nonzero = map.valid().filter(|n| n.difference() != 0.0).count();
    let valid = map.valid().count();
    Outcome {
        pass: bitwise && nonzero == 0 && valid > 0,
        detail: format!(
            "joint matrices bitwise equal: {bitwise}; map nodes with nonzero difference {nonzero} of {valid}"
        ),
    }
}

fn machining_pipeline() -> Outcome {
    let map = evaluate_map(
        &presets::heavy_6r(),
        &[presets::compensator()],
        &presets::machining_area(21, 21),
        &presets::machining_wrench(),
        &presets::home(),
    )
    .unwrap();
    let comp = map.compensated_stats();
    let classical = map.classical_stats();
    let diff = map.difference_stats();
    let (Some(comp), Some(classical), Some(diff)) = (comp, classical, diff) else {
        return Outcome {
            pass: false,
            detail: "no valid nodes".into(),
        };
    };
    let mm = 1e3;
    let in_band = |lo: f64, hi: f64| lo >= 0.1e-3 && hi <= 5e-3;
    Outcome {
        pass: in_band(comp.min, comp.max)
            && in_band(classical.min, classical.max)
            && (0.01e-3..=0.5e-3).contains(&diff.max),
        detail: format!(
            "21x21 grid, {} flagged; |dp| {:.3}..{:.3} mm compensated, {:.3}..{:.3} mm classical (0.1..5); \
             max difference {:.4} mm (0.01..0.5)",
            map.flagged_count(),
            comp.min * mm,
            comp.max * mm,
            classical.min * mm,
            classical.max * mm,
            diff.max * mm
        ),
    }
}

fn identification_round_trip() -> Outcome {
    let model = presets::heavy_6r_calibration();
    let comp = presets::compensator();
    let layout = ParameterLayout {
        joints: 6,
        compensator_joint: presets::COMPENSATOR_JOINT,
    };
    let truth = layout.pack(&model, &comp);
    let names = layout.names();

    // noiseless, guess perturbed by up to 20 %
    let (qs, fs) = random_excitation(&presets::CALIBRATION_JOINT_RANGES, 200, 2000.0, 500.0, 50).unwrap();
    let sim = simulate_calibration(&model, &[comp], &qs, &fs, &SimulationOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let guess = truth.map(|v| v * (1.0 + rng.random_range(-0.2..0.2)));
    let worst_rel = match identify(&model, layout.compensator_joint, &sim.samples, &guess) {
        Ok(est) => (0..layout.len())
            .map(|i| ((est.values[i] - truth[i]) / truth[i]).abs())
            .fold(0.0, f64::max),
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("noiseless fit failed: {e}"),
            }
        }
    };

    // 50 noisy repetitions
    let reps = 50;
    let mut covered = vec![0usize; layout.len()];
    let mut identifiable = vec![0usize; layout.len()];
    let mut failures = 0;
    for rep in 0..reps {
        let (qs, fs) =
            random_excitation(&presets::CALIBRATION_JOINT_RANGES, 500, 2000.0, 500.0, 1000 + rep).unwrap();
        let opts = SimulationOptions {
            noise_sigma: 0.05e-3,
            seed: 5000 + rep,
            measure_spring_length: true,
        };
        let sim = simulate_calibration(&model, &[comp], &qs, &fs, &opts).unwrap();
        match identify(&model, layout.compensator_joint, &sim.samples, &(&truth * 1.1)) {
            Ok(est) => {
                for i in 0..layout.len() {
                    covered[i] += usize::from((est.values[i] - truth[i]).abs() <= est.ci[i]);
                    identifiable[i] += usize::from(est.identifiable[i]);
                }
            }
            Err(_) => failures += 1,
        }
    }
    let reps = reps as usize;
    let mut coverage_ok = failures == 0;
    let mut report = Vec::new();
    for i in 0..layout.len() {
        let pct = 100.0 * covered[i] as f64 / reps as f64;
        // a parameter flagged in most repetitions is not held to the band
        if identifiable[i] * 2 > reps {
            let ok = (90.0..=99.0).contains(&pct);
            coverage_ok &= ok;
            report.push(format!("{}{} {pct:.0}%", if ok { "" } else { "!" }, names[i]));
        } else {
            report.push(format!("{} unidentifiable", names[i]));
        }
    }
    Outcome {
        pass: worst_rel < 1e-6 && coverage_ok,
        detail: format!(
            "noiseless worst rel. error {worst_rel:.1e} (< 1e-6); CI95 coverage over {reps} runs (90..99%): {}; \
             failed fits {failures}",
            report.join(", ")
        ),
    }
}

fn compensation_closure() -> Outcome {
    let model = presets::heavy_6r();
    let comps = [presets::compensator()];
    let wrench = presets::machining_wrench();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut failures, mut targets) = (0.0f64, Vec::new(), 0);
    while targets < 50 {
        let q = DVector::from_vec(vec![
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.8..1.0),
            rng.random_range(-0.5..1.5),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.3..2.0),
            rng.random_range(-3.0..3.0),
        ]);
        let cfg = Config::rigid(q.clone());
        if gcstiff::elastostatics::jacobian_condition(&jacobian_theta(&model, &cfg).unwrap()) > 1e3 {
            continue;
        }
        targets += 1;
        let target = forward_kinematics(&model, &cfg).unwrap();
        match compensate_pose(&model, &comps, &target, &wrench, &cfg) {
            Ok(c) => {
                // recomputed independently of the solver's own residual
                let k = joint_stiffness(&model, &comps, &c.q.q).unwrap();
                let d = deflection_under_load(&model, &k, &c.q, &wrench).unwrap();
                let landed = forward_kinematics(&model, &c.q).unwrap().position + d.d_position;
                worst = worst.max((landed - target.position).norm());
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    Outcome {
        pass: failures.is_empty() && worst < 1e-6,
        detail: format!(
            "{targets} targets, {} failed, worst |FK(q_cmd) + dp - target| {worst:.1e} m (< 1e-6)",
            failures.len()
        ),
    }
}

fn kinematics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut jac_err, mut ik_err, mut ik_fail) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let (model, cfg) = random_6r(&mut rng, f64::INFINITY);
        let jac = jacobian_theta(&model, &cfg).unwrap();
        jac_err = jac_err.max((jac - fd_jacobian(&model, &cfg, 1e-6)).amax());
    }
    for _ in 0..100 {
        let (model, cfg) = random_6r(&mut rng, 1e3);
        let target = forward_kinematics(&model, &cfg).unwrap();
        let seed = Config::rigid(&cfg.q + DVector::from_fn(6, |_, _| rng.random_range(-0.1..0.1)));
        match inverse_kinematics(&model, &target, &seed) {
            Ok(q) => {
                let p = forward_kinematics(&model, &q).unwrap().position;
                ik_err = ik_err.max((p - target.position).norm());
            }
            Err(_) => ik_fail += 1,
        }
    }
    Outcome {
        pass: jac_err < 1e-6 && ik_err < 1e-8 && ik_fail == 0,
        detail: format!(
            "100 cases each, Jacobian vs finite differences {jac_err:.1e} (< 1e-6), \
             IK/FK round trip {ik_err:.1e} m (< 1e-8), IK failures {ik_fail}"
        ),
    }
}

fn main() {
    let results = [
        check("1 compensator derivative and energy oracles", Some(Duration::from_secs(1)), compensator_derivatives),
        check("2 Cartesian stiffness residual and symmetry", None, cartesian_stiffness_residual),
        check("3 null compensator equivalence", None, null_compensator),
        check("4 machining-area deflections", Some(Duration::from_secs(10)), machining_pipeline),
        check("5 identification round trip and coverage", Some(Duration::from_secs(60)), identification_round_trip),
        check("6 compensation closure", None, compensation_closure),
        check("7 kinematics oracles", None, kinematics_oracles),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
