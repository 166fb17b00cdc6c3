//! Serial-chain geometry, forward kinematics, the virtual-joint Jacobian and
//! a damped least-squares inverse kinematics solver.
//!
//! Each revolute joint is described by a fixed offset from the previous
//! joint frame and a rotation axis in its own frame. One rotational virtual
//! spring is collocated with every actuated joint, so the end-effector pose
//! with virtual deflections `theta` is the rigid pose at `q + theta`.

use nalgebra::{DMatrix, DVector, Matrix6, Rotation3, Unit, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// One revolute joint of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDescriptor<T: Real> {
    offset: Vector3<T>,
    axis: Unit<Vector3<T>>,
}

impl<T: Real> JointDescriptor<T> {
    /// `offset` is the translation from the previous joint frame, `axis` the
    /// rotation axis in this joint's frame (normalized here).
    pub fn new(offset: Vector3<T>, axis: Vector3<T>) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > T::zero()) || !offset.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidModel(
                "joint axis must be a finite nonzero vector".into(),
            ));
        }
        Ok(Self {
            offset,
            axis: Unit::new_normalize(axis),
        })
    }

    pub fn offset(&self) -> &Vector3<T> {
        &self.offset
    }

    pub fn axis(&self) -> &Unit<Vector3<T>> {
        &self.axis
    }
}

/// Serial chain plus the compliance of each collocated virtual spring.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel<T: Real> {
    joints: Vec<JointDescriptor<T>>,
    tool_offset: Vector3<T>,
    joint_compliances: Vec<T>,
}

impl<T: Real> RobotModel<T> {
    pub fn new(
        joints: Vec<JointDescriptor<T>>,
        tool_offset: Vector3<T>,
        joint_compliances: Vec<T>,
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidModel("chain needs at least one joint".into()));
        }
        if joints.len() != joint_compliances.len() {
            return Err(Error::InvalidModel(format!(
                "{} joints but {} compliances",
                joints.len(),
                joint_compliances.len()
            )));
        }
        if let Some(i) = joint_compliances
            .iter()
            .position(|k| !(*k > T::zero()) || !k.is_finite())
        {
            return Err(Error::InvalidModel(format!(
                "compliance k{} must be positive and finite",
                i + 1
            )));
        }
        Ok(Self {
            joints,
            tool_offset,
            joint_compliances,
        })
    }

    /// Number of actuated joints.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointDescriptor<T>] {
        &self.joints
    }

    pub fn tool_offset(&self) -> &Vector3<T> {
        &self.tool_offset
    }

    pub fn joint_compliances(&self) -> &[T] {
        &self.joint_compliances
    }

    /// Same geometry with a different set of joint compliances.
    pub fn with_compliances(&self, joint_compliances: Vec<T>) -> Result<Self> {
        Self::new(self.joints.clone(), self.tool_offset, joint_compliances)
    }

    /// Upper bound on the distance between the first joint origin and the
    /// end-effector point.
    pub fn reach(&self) -> T {
        self.joints
            .iter()
            .skip(1)
            .fold(self.tool_offset.norm(), |acc, j| acc + j.offset.norm())
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dof() {
            return Err(Error::InvalidModel(format!(
                "{what} has length {len}, model has {} joints",
                self.dof()
            )));
        }
        Ok(())
    }
}

/// Actuated coordinates `q` and virtual-joint deflections `theta` (rad).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<T: Real> {
    pub q: DVector<T>,
    pub theta: DVector<T>,
}

impl<T: Real> Configuration<T> {
    pub fn new(q: DVector<T>, theta: DVector<T>) -> Result<Self> {
        if q.len() != theta.len() {
            return Err(Error::InvalidModel(format!(
                "q has length {} but theta has length {}",
                q.len(),
                theta.len()
            )));
        }
        Ok(Self { q, theta })
    }

    /// Undeflected configuration (`theta = 0`).
    pub fn rigid(q: DVector<T>) -> Self {
        let theta = DVector::zeros(q.len());
        Self { q, theta }
    }

    pub fn from_slice(q: &[T]) -> Self {
        Self::rigid(DVector::from_column_slice(q))
    }

    /// Joint angles actually seen by the chain, `q + theta`.
    pub fn effective(&self) -> DVector<T> {
        &self.q + &self.theta
    }

    fn check(&self, model: &RobotModel<T>) -> Result<()> {
        model.check_dim(self.q.len(), "q")?;
        model.check_dim(self.theta.len(), "theta")
    }
}

/// End-effector location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub position: Vector3<T>,
    pub orientation: Rotation3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vector3<T>, orientation: Rotation3<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Twist-style difference `(p_other - p_self, log(R_other R_selfᵀ))`,
    /// the orientation part expressed in the world frame.
    pub fn error_to(&self, other: &Pose<T>) -> Vector6<T> {
        let dp = other.position - self.position;
        let dr = rotation_log(&(other.orientation * self.orientation.inverse()));
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    /// Applies a small world-frame displacement `(dp, dphi)`.
    pub fn displaced(&self, dp: &Vector3<T>, dphi: &Vector3<T>) -> Pose<T> {
        Pose {
            position: self.position + dp,
            orientation: Rotation3::from_scaled_axis(*dphi) * self.orientation,
        }
    }
}

/// Rotation vector (axis times angle, angle in `[0, pi]`) of `r`, stable
/// near the identity and near half turns.
pub fn rotation_log<T: Real>(r: &Rotation3<T>) -> Vector3<T> {
    let m = r.matrix();
    let half = lit::<T>(0.5);
    let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * half;
    let sin = v.norm();
    let cos = ((m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) - T::one()) * half;
    let angle = sin.atan2(cos);
    if sin > lit(1e-6) || cos > T::zero() {
        // angle/sin -> 1 as angle -> 0
        let scale = if sin > lit(1e-12) { angle / sin } else { T::one() + sin * sin / lit(6.0) };
        return v * scale;
    }
    // near a half turn: axis from the symmetric part R + I ≈ 2 a aᵀ
    let b = (m + nalgebra::Matrix3::identity()) * half;
    let k = (0..3).max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap()).unwrap();
    let mut axis = b.column(k).into_owned() / b[(k, k)].max(T::zero()).sqrt();
    axis.normalize_mut();
    if axis.dot(&v) < T::zero() {
        axis = -axis;
    }
    axis * angle
}

/// World-frame origin and axis of every joint, plus the end-effector pose.
struct ChainState<T: Real> {
    origins: Vec<Vector3<T>>,
    axes: Vec<Vector3<T>>,
    ee: Pose<T>,
}

fn chain_state<T: Real>(model: &RobotModel<T>, angles: &DVector<T>) -> ChainState<T> {
    let n = model.dof();
    let mut origins = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    let mut p = Vector3::zeros();
    let mut r = Rotation3::identity();
    for (joint, &angle) in model.joints.iter().zip(angles.iter()) {
        p += r * joint.offset;
        // rotation about the joint's own axis leaves that axis fixed
        axes.push(r * joint.axis.into_inner());
        origins.push(p);
        r *= Rotation3::from_axis_angle(&joint.axis, angle);
    }
    let ee = Pose::new(p + r * model.tool_offset, r);
    ChainState { origins, axes, ee }
}

/// End-effector pose `g(q, theta)`.
pub fn forward_kinematics<T: Real>(model: &RobotModel<T>, cfg: &Configuration<T>) -> Result<Pose<T>> {
    cfg.check(model)?;
    Ok(chain_state(model, &cfg.effective()).ee)
}

fn jacobian_of<T: Real>(state: &ChainState<T>) -> DMatrix<T> {
    let n = state.axes.len();
    let mut jac = DMatrix::zeros(6, n);
    for (i, (w, p)) in state.axes.iter().zip(&state.origins).enumerate() {
        let lin = w.cross(&(state.ee.position - p));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(w);
    }
    jac
}

/// `∂g/∂theta` as a 6×n matrix: rows 1-3 translational (m/rad), rows 4-6
/// rotational, all in the world frame.
pub fn jacobian_theta<T: Real>(model: &RobotModel<T>, cfg: &Configuration<T>) -> Result<DMatrix<T>> {
    cfg.check(model)?;
    Ok(jacobian_of(&chain_state(model, &cfg.effective())))
}

/// Pose and Jacobian from a single chain sweep.
pub fn pose_and_jacobian<T: Real>(
    model: &RobotModel<T>,
    cfg: &Configuration<T>,
) -> Result<(Pose<T>, DMatrix<T>)> {
    cfg.check(model)?;
    let state = chain_state(model, &cfg.effective());
    let jac = jacobian_of(&state);
    Ok((state.ee, jac))
}

/// Tuning of the damped least-squares solver.
#[derive(Debug, Clone, Copy)]
pub struct IkOptions<T: Real> {
    pub damping: T,
    pub max_iterations: usize,
    pub position_tolerance: T,
    pub orientation_tolerance: T,
    /// Largest joint-space step per iteration (rad).
    pub max_step: T,
}

impl<T: Real> Default for IkOptions<T> {
    fn default() -> Self {
        Self {
            damping: lit(1e-3),
            max_iterations: 200,
            position_tolerance: lit(1e-9),
            orientation_tolerance: lit(1e-9),
            max_step: lit(0.5),
        }
    }
}

/// Damped least-squares inverse kinematics with default options.
pub fn inverse_kinematics<T: Real>(
    model: &RobotModel<T>,
    target: &Pose<T>,
    seed: &Configuration<T>,
) -> Result<Configuration<T>> {
    inverse_kinematics_with(model, target, seed, &IkOptions::default())
}

pub fn inverse_kinematics_with<T: Real>(
    model: &RobotModel<T>,
    target: &Pose<T>,
    seed: &Configuration<T>,
    opts: &IkOptions<T>,
) -> Result<Configuration<T>> {
    seed.check(model)?;
    let base = model.joints[0].offset;
    let distance = (target.position - base).norm();
    let reach = model.reach();
    if distance > reach * (T::one() + lit(1e-9)) {
        return Err(Error::UnreachableTarget {
            position_residual: to_f64(distance - reach),
            orientation_residual: f64::NAN,
        });
    }

    let lambda2 = opts.damping * opts.damping;
    let mut q = seed.q.clone();
    let mut last = (f64::INFINITY, f64::INFINITY);
    for _ in 0..=opts.max_iterations {
        let state = chain_state(model, &q);
        let err = state.ee.error_to(target);
        let pos_err = err.fixed_rows::<3>(0).norm();
        let rot_err = err.fixed_rows::<3>(3).norm();
        last = (to_f64(pos_err), to_f64(rot_err));
        if pos_err < opts.position_tolerance && rot_err < opts.orientation_tolerance {
            return Ok(Configuration::rigid(q));
        }
        let jac = jacobian_of(&state);
        let jjt: Matrix6<T> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned()
            + Matrix6::identity() * lambda2;
        let Some(chol) = jjt.cholesky() else {
            break;
        };
        let y = chol.solve(&err);
        let mut dq = jac.transpose() * DVector::from_column_slice(y.as_slice());
        let step = dq.norm();
        if step > opts.max_step {
            dq *= opts.max_step / step;
        }
        q += dq;
    }
    Err(Error::UnreachableTarget {
        position_residual: last.0,
        orientation_residual: last.1,
    })
}
