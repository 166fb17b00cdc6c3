//! Elastostatic modeling of serial manipulators equipped with spring-based
//! gravity compensators.
//!
//! The compensator is folded into the virtual-joint stiffness model as a
//! configuration-dependent extra stiffness on the joint it spans. On top of
//! that the crate evaluates Cartesian stiffness and load deflections,
//! sweeps planar machining areas, compensates commanded poses, and
//! identifies the elastostatic parameters from calibration data.
//!
//! The kinematic and elastostatic core is generic over [`Real`] (`f32` or
//! `f64`); the `f64` aliases below are what the rest of the toolkit uses.
//! Identification is `f64` only.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod compensator;
pub mod elastostatics;
pub mod error;
pub mod identification;
pub mod kinematics;
pub mod presets;
pub mod scalar;
pub mod workspace;

pub use compensator::CompensatorParams;
pub use elastostatics::{
    cartesian_compliance, cartesian_stiffness, deflection_under_load, joint_stiffness,
    CartesianStiffness, Deflection, JointStiffnessMatrix, Wrench,
};
pub use error::{Error, Result};
pub use identification::{
    identify, simulate_calibration, CalibrationSample, ParameterEstimate, ParameterLayout,
    SimulatedCalibration, SimulationOptions,
};
pub use kinematics::{
    forward_kinematics, inverse_kinematics, jacobian_theta, Configuration, JointDescriptor, Pose,
    RobotModel,
};
pub use scalar::Real;
pub use workspace::{
    compare_strategies, compensate_pose, evaluate_map, Compensation, DeflectionMap, NodeFlag,
    StrategyComparison, WorkspaceGrid,
};

pub type Robot = RobotModel<f64>;
pub type Joint = JointDescriptor<f64>;
pub type Config = Configuration<f64>;
pub type Pose64 = Pose<f64>;
pub type Compensator = CompensatorParams<f64>;
pub type Wrench64 = Wrench<f64>;
pub type JointStiffness = JointStiffnessMatrix<f64>;
pub type Deflection64 = Deflection<f64>;
pub type Grid = WorkspaceGrid<f64>;
pub type Map = DeflectionMap<f64>;

pub type Robot32 = RobotModel<f32>;
pub type Compensator32 = CompensatorParams<f32>;
