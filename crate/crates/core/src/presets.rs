//! Heavy 6R stand-in for the studied machining robot.
//!
//! The link lengths are representative of a 270 kg-payload industrial arm
//! (they are not manufacturer data). The elastostatic values are the
//! identified joint compliances and compensator parameters of that robot.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DVector, Rotation3, Vector3};

use crate::compensator::CompensatorParams;
use crate::elastostatics::Wrench;
use crate::kinematics::{Configuration, JointDescriptor, RobotModel};
use crate::workspace::WorkspaceGrid;

/// Joint compliances `k1..k6` in rad/(N·m).
pub const JOINT_COMPLIANCES: [f64; 6] = [3.774e-6, 0.302e-6, 0.406e-6, 3.002e-6, 3.303e-6, 2.365e-6];

/// Compensator spring compliance `k_c` (m/N).
pub const COMPENSATOR_COMPLIANCE: f64 = 0.144e-6;
/// Unloaded spring length `s0` (m).
pub const COMPENSATOR_FREE_LENGTH: f64 = 0.458;
/// `L` (m).
pub const COMPENSATOR_LINK_LENGTH: f64 = 0.18472;
/// `a_x` (m).
pub const COMPENSATOR_AX: f64 = 0.68593;
/// `a_y` (m).
pub const COMPENSATOR_AY: f64 = 0.12030;
/// The compensator sits between the first and second links.
pub const COMPENSATOR_JOINT: usize = 2;

/// Machining wrench (N, N·m), constant over the area.
pub const MACHINING_WRENCH: [f64; 6] = [0.0, 360.0, 560.0, 0.0, 0.0, 0.0];

/// Base on the floor, shoulder 0.675 m up, upper arm 1.35 m, forearm 1.4 m
/// and a 0.3 m spindle behind a 0.215 m flange. At `q = 0` the upper arm
/// is vertical and the forearm and tool point along world x.
pub fn heavy_6r() -> RobotModel<f64> {
    heavy_6r_with_tool(Vector3::new(0.515, 0.0, 0.0))
}

/// Tool point of the calibration end-effector: a target 250 mm off the
/// spindle axis, so that rotation about the last joint moves it.
pub const CALIBRATION_TOOL: [f64; 3] = [0.515, 0.0, -0.25];

/// Joint ranges (rad) swept by the calibration postures.
pub const CALIBRATION_JOINT_RANGES: [(f64, f64); 6] = [
    (-3.0, 3.0),
    (-1.4, 1.4),
    (-0.6, 1.6),
    (-3.0, 3.0),
    (0.3, 2.0),
    (-3.0, 3.0),
];

/// The same arm carrying the calibration end-effector.
pub fn heavy_6r_calibration() -> RobotModel<f64> {
    heavy_6r_with_tool(Vector3::from(CALIBRATION_TOOL))
}

fn heavy_6r_with_tool(tool: Vector3<f64>) -> RobotModel<f64> {
    let j = |offset: [f64; 3], axis: Vector3<f64>| {
        JointDescriptor::new(Vector3::from(offset), axis).expect("valid joint")
    };
    RobotModel::new(
        vec![
            j([0.0, 0.0, 0.0], Vector3::z()),
            j([0.35, 0.0, 0.675], Vector3::y()),
            j([0.0, 0.0, 1.35], Vector3::y()),
            j([0.0, 0.0, 0.041], Vector3::x()),
            j([1.4, 0.0, 0.0], Vector3::y()),
            j([0.0, 0.0, 0.0], Vector3::x()),
        ],
        tool,
        JOINT_COMPLIANCES.to_vec(),
    )
    .expect("valid model")
}

pub fn compensator() -> CompensatorParams<f64> {
    CompensatorParams::from_compliance(
        COMPENSATOR_COMPLIANCE,
        COMPENSATOR_FREE_LENGTH,
        COMPENSATOR_LINK_LENGTH,
        COMPENSATOR_AX,
        COMPENSATOR_AY,
        COMPENSATOR_JOINT,
    )
    .expect("valid compensator")
}

/// Tool axis pointing down, robot facing world +y.
pub fn tool_down() -> Rotation3<f64> {
    Rotation3::from_euler_angles(0.0, FRAC_PI_2, FRAC_PI_2)
}

/// 2000 mm × 2000 mm area, 500 mm above the floor, in front of the robot.
pub fn machining_area(nu: usize, nv: usize) -> WorkspaceGrid<f64> {
    WorkspaceGrid::new(
        Vector3::new(-1.0, 0.6, 0.5),
        Vector3::x(),
        Vector3::y(),
        2.0,
        2.0,
        nu,
        nv,
        tool_down(),
    )
    .expect("valid grid")
}

/// Seed posture for the first grid node.
pub fn home() -> Configuration<f64> {
    Configuration::rigid(DVector::from_vec(vec![FRAC_PI_2, 0.3, 0.9, 0.0, 0.9, 0.0]))
}

pub fn machining_wrench() -> Wrench<f64> {
    Wrench::from_vector(&MACHINING_WRENCH.into())
}
