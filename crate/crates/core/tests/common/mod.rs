#![allow(dead_code)]

use gcstiff::elastostatics::jacobian_condition;
use gcstiff::kinematics::rotation_log;
use gcstiff::{forward_kinematics, jacobian_theta, Config, Joint, Robot};
use nalgebra::{DMatrix, DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;

pub fn random_vector<R: Rng>(rng: &mut R, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Random 6R chain and posture with `cond(J) < max_condition`.
pub fn random_6r<R: Rng>(rng: &mut R, max_condition: f64) -> (Robot, Config) {
    loop {
        let joints = (0..6)
            .map(|_| loop {
                if let Ok(j) = Joint::new(random_vector(rng, 0.8), random_vector(rng, 1.0)) {
                    break j;
                }
            })
            .collect();
        let k = (0..6).map(|_| rng.random_range(1e-7..5e-6)).collect();
        let model = Robot::new(joints, random_vector(rng, 0.3), k).unwrap();
        let cfg = Config::from_slice(&(0..6).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        if jacobian_condition(&jacobian_theta(&model, &cfg).unwrap()) < max_condition {
            return (model, cfg);
        }
    }
}

/// End-effector transform composed with nalgebra isometries.
pub fn composed_pose(model: &Robot, angles: &DVector<f64>) -> Isometry3<f64> {
    let mut t = Isometry3::identity();
    for (joint, a) in model.joints().iter().zip(angles.iter()) {
        t *= Translation3::from(*joint.offset());
        t *= UnitQuaternion::from_axis_angle(&Unit::new_normalize(joint.axis().into_inner()), *a);
    }
    t * Translation3::from(*model.tool_offset())
}

/// Central differences of the pose with respect to `theta`, as twists.
pub fn fd_jacobian(model: &Robot, cfg: &Config, h: f64) -> DMatrix<f64> {
    let n = model.dof();
    let mut jac = DMatrix::zeros(6, n);
    for i in 0..n {
        let mut plus = cfg.clone();
        plus.theta[i] += h;
        let mut minus = cfg.clone();
        minus.theta[i] -= h;
        let p = forward_kinematics(model, &plus).unwrap();
        let m = forward_kinematics(model, &minus).unwrap();
        let dp = (p.position - m.position) / (2.0 * h);
        let dr = rotation_log(&(p.orientation * m.orientation.inverse())) / (2.0 * h);
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&dp);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&dr);
    }
    jac
}
