//! Joint-space and Cartesian stiffness of the virtual-joint model.
//!
//! The joint stiffness matrix is diagonal: the reciprocal joint compliances
//! plus, for each compensated joint, the configuration-dependent compensator
//! term. Cartesian compliance is `J K⁻¹ Jᵀ`, evaluated at `theta = 0`.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use crate::compensator::CompensatorParams;
use crate::error::{Error, Result};
use crate::kinematics::{jacobian_theta, Configuration, RobotModel};
use crate::scalar::{lit, to_f64, Real};

/// Jacobians with a larger condition number are treated as singular.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e8;

/// Diagonal joint stiffness `K_theta` (N·m/rad).
#[derive(Debug, Clone, PartialEq)]
pub struct JointStiffnessMatrix<T: Real> {
    diag: DVector<T>,
}

impl<T: Real> JointStiffnessMatrix<T> {
    pub fn from_diagonal(diag: DVector<T>) -> Self {
        Self { diag }
    }

    /// `diag(1/k_1, ..., 1/k_n)` without any compensator.
    pub fn classical(model: &RobotModel<T>) -> Self {
        Self {
            diag: DVector::from_iterator(
                model.dof(),
                model.joint_compliances().iter().map(|k| T::one() / *k),
            ),
        }
    }

    pub fn diag(&self) -> &DVector<T> {
        &self.diag
    }

    pub fn dof(&self) -> usize {
        self.diag.len()
    }

    /// Whether every joint stiffness is strictly positive.
    pub fn is_positive(&self) -> bool {
        self.diag.iter().all(|k| *k > T::zero())
    }

    /// Same matrix with every entry scaled by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            diag: &self.diag * factor,
        }
    }

    fn compliance(&self, model: &RobotModel<T>) -> Result<DVector<T>> {
        if self.dof() != model.dof() {
            return Err(Error::InvalidModel(format!(
                "joint stiffness has {} entries, model has {} joints",
                self.dof(),
                model.dof()
            )));
        }
        if let Some(i) = self.diag.iter().position(|k| *k == T::zero() || !k.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "joint {} has zero or non-finite stiffness",
                i + 1
            )));
        }
        Ok(self.diag.map(|k| T::one() / k))
    }
}

/// Assembles `K_theta(q) = K_theta⁰ + K_theta^GC(q)`.
pub fn joint_stiffness<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    q: &DVector<T>,
) -> Result<JointStiffnessMatrix<T>> {
    if q.len() != model.dof() {
        return Err(Error::InvalidModel(format!(
            "q has length {}, model has {} joints",
            q.len(),
            model.dof()
        )));
    }
    let mut k = JointStiffnessMatrix::classical(model);
    let mut seen = vec![false; model.dof()];
    for c in comps {
        let j = c.joint();
        if j == 0 || j > model.dof() {
            return Err(Error::InvalidConfiguration(format!(
                "compensator joint index {j} outside 1..={}",
                model.dof()
            )));
        }
        if std::mem::replace(&mut seen[j - 1], true) {
            return Err(Error::InvalidConfiguration(format!(
                "more than one compensator on joint {j}"
            )));
        }
        k.diag[j - 1] += c.joint_stiffness_contribution(q[j - 1])?;
    }
    Ok(k)
}

/// External load at the end-effector point, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench<T: Real> {
    pub force: Vector3<T>,
    pub moment: Vector3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn new(force: Vector3<T>, moment: Vector3<T>) -> Self {
        Self { force, moment }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|c| c.is_finite())
    }

    /// Re-expresses a wrench given in a frame with orientation `r` in the
    /// world frame.
    pub fn rotated(&self, r: &nalgebra::Rotation3<T>) -> Self {
        Self::new(r * self.force, r * self.moment)
    }
}

/// Cartesian stiffness `K_C` together with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianStiffness<T: Real> {
    pub matrix: Matrix6<T>,
    /// Relative asymmetry `|K - Kᵀ| / |K|` before symmetrization.
    pub raw_asymmetry: T,
    /// False when the joint stiffness made `K_C` indefinite.
    pub positive_definite: bool,
    pub jacobian_condition: T,
}

/// End-effector deflection twist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deflection<T: Real> {
    pub d_position: Vector3<T>,
    pub d_orientation: Vector3<T>,
}

impl<T: Real> Deflection<T> {
    pub fn zero() -> Self {
        Self {
            d_position: Vector3::zeros(),
            d_orientation: Vector3::zeros(),
        }
    }

    /// Translational magnitude `|dp|`.
    pub fn magnitude(&self) -> T {
        self.d_position.norm()
    }

    pub fn to_vector(&self) -> Vector6<T> {
        let (p, r) = (&self.d_position, &self.d_orientation);
        Vector6::new(p.x, p.y, p.z, r.x, r.y, r.z)
    }
}

/// Condition number of a 6×n Jacobian from its singular values.
pub fn jacobian_condition<T: Real>(jac: &DMatrix<T>) -> T {
    let sv = jac.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min > T::zero() {
        max / min
    } else {
        T::max_value().unwrap_or_else(|| lit(f64::MAX))
    }
}

fn checked_jacobian<T: Real>(model: &RobotModel<T>, cfg: &Configuration<T>) -> Result<(DMatrix<T>, T)> {
    let jac = jacobian_theta(model, &Configuration::rigid(cfg.q.clone()))?;
    let cond = jacobian_condition(&jac);
    if !(cond < lit(MAX_JACOBIAN_CONDITION)) {
        return Err(Error::SingularConfiguration {
            condition: to_f64(cond),
        });
    }
    Ok((jac, cond))
}

fn compliance_of<T: Real>(jac: &DMatrix<T>, c: &DVector<T>) -> Matrix6<T> {
    let mut scaled = jac.clone();
    for (mut col, ci) in scaled.column_iter_mut().zip(c.iter()) {
        col *= *ci;
    }
    let full = scaled * jac.transpose();
    full.fixed_view::<6, 6>(0, 0).into_owned()
}

/// Cartesian compliance `J K⁻¹ Jᵀ` at `theta = 0`; defined for any number
/// of joints.
pub fn cartesian_compliance<T: Real>(
    model: &RobotModel<T>,
    k: &JointStiffnessMatrix<T>,
    cfg: &Configuration<T>,
) -> Result<Matrix6<T>> {
    let c = k.compliance(model)?;
    let (jac, _) = checked_jacobian(model, cfg)?;
    Ok(compliance_of(&jac, &c))
}

/// `K_C = (J K⁻¹ Jᵀ)⁻¹` for a six-joint chain.
pub fn cartesian_stiffness<T: Real>(
    model: &RobotModel<T>,
    k: &JointStiffnessMatrix<T>,
    cfg: &Configuration<T>,
) -> Result<CartesianStiffness<T>> {
    if model.dof() != 6 {
        return Err(Error::UnderActuated { joints: model.dof() });
    }
    let c = k.compliance(model)?;
    let (jac, cond) = checked_jacobian(model, cfg)?;
    let compliance = compliance_of(&jac, &c);
    let raw = compliance
        .lu()
        .solve(&Matrix6::identity())
        .ok_or(Error::SingularConfiguration {
            condition: to_f64(cond),
        })?;
    let norm = raw.norm();
    let raw_asymmetry = if norm > T::zero() {
        (raw - raw.transpose()).norm() / norm
    } else {
        T::zero()
    };
    let matrix = (raw + raw.transpose()) * lit::<T>(0.5);
    let positive_definite = k.is_positive() && matrix.cholesky().is_some();
    Ok(CartesianStiffness {
        matrix,
        raw_asymmetry,
        positive_definite,
        jacobian_condition: cond,
    })
}

/// First-order deflection `J K⁻¹ Jᵀ F` under the wrench `F`.
pub fn deflection_under_load<T: Real>(
    model: &RobotModel<T>,
    k: &JointStiffnessMatrix<T>,
    cfg: &Configuration<T>,
    wrench: &Wrench<T>,
) -> Result<Deflection<T>> {
    let c = k.compliance(model)?;
    let (jac, _) = checked_jacobian(model, cfg)?;
    let f = wrench.to_vector();
    let joint_torque = jac.transpose() * DVector::from_column_slice(f.as_slice());
    let theta = joint_torque.component_mul(&c);
    let dt = jac * theta;
    Ok(Deflection {
        d_position: Vector3::new(dt[0], dt[1], dt[2]),
        d_orientation: Vector3::new(dt[3], dt[4], dt[5]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compensator::tests::reference;
    use crate::kinematics::JointDescriptor;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_link(k: f64) -> RobotModel<f64> {
        RobotModel::new(
            vec![JointDescriptor::new(Vector3::zeros(), Vector3::z()).unwrap()],
            Vector3::x(),
            vec![k],
        )
        .unwrap()
    }

    fn random_6r(rng: &mut ChaCha8Rng) -> (RobotModel<f64>, Configuration<f64>) {
        loop {
            let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let joints = (0..6)
                .map(|_| JointDescriptor::new(v() * 0.8, v()).unwrap())
                .collect();
            let tool = v() * 0.3;
            let k = (0..6).map(|_| rng.random_range(1e-7..5e-6)).collect();
            let model = RobotModel::new(joints, tool, k).unwrap();
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cfg = Configuration::from_slice(&q);
            let jac = jacobian_theta(&model, &cfg).unwrap();
            if jacobian_condition(&jac) < 1e4 {
                return (model, cfg);
            }
        }
    }

    #[test]
    fn classical_diagonal_is_reciprocal() {
        let model = one_link(4.0);
        let k = joint_stiffness(&model, &[], &DVector::from_element(1, 0.3)).unwrap();
        assert_eq!(k.diag()[0], 0.25);
    }

    #[test]
    fn null_compensator_matches_classical() {
        let model = RobotModel::new(
            vec![
                JointDescriptor::new(Vector3::zeros(), Vector3::z()).unwrap(),
                JointDescriptor::new(Vector3::x(), Vector3::y()).unwrap(),
            ],
            Vector3::x(),
            vec![3.774e-6, 0.302e-6],
        )
        .unwrap();
        let null = reference().with_stiffness(0.0).unwrap();
        let q = DVector::from_vec(vec![0.1, 0.4]);
        let a = joint_stiffness(&model, &[], &q).unwrap();
        let b = joint_stiffness(&model, &[null], &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compensated_entry_is_sum_of_terms() {
        let model = RobotModel::new(
            vec![
                JointDescriptor::new(Vector3::zeros(), Vector3::z()).unwrap(),
                JointDescriptor::new(Vector3::x(), Vector3::y()).unwrap(),
            ],
            Vector3::x(),
            vec![3.774e-6, 0.302e-6],
        )
        .unwrap();
        let r = reference();
        let k = joint_stiffness(&model, &[r], &DVector::zeros(2)).unwrap();
        let eta = 0.4691179072139591;
        let expected = 1.0 / 0.302e-6 + r.stiffness() * r.a() * r.link_length() * eta;
        assert_relative_eq!(k.diag()[1], expected, max_relative = 1e-12);
        assert_eq!(k.diag()[0], 1.0 / 3.774e-6);
    }

    #[test]
    fn compensator_index_errors() {
        let model = one_link(1.0);
        let q = DVector::zeros(1);
        let far = CompensatorParams::new(1.0, 0.1, 0.2, 0.5, 0.0, 2).unwrap();
        assert!(matches!(joint_stiffness(&model, &[far], &q), Err(Error::InvalidConfiguration(_))));
        let c = CompensatorParams::new(1.0, 0.1, 0.2, 0.5, 0.0, 1).unwrap();
        assert!(matches!(joint_stiffness(&model, &[c, c], &q), Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn singular_compensator_propagates() {
        let model = one_link(1.0);
        let c = CompensatorParams::new(1.0, 0.1, 0.5, 0.5, 0.0, 1).unwrap();
        let q = DVector::from_element(1, std::f64::consts::PI);
        assert!(matches!(joint_stiffness(&model, &[c], &q), Err(Error::SingularGeometry)));
    }

    #[test]
    fn one_link_compliance_form() {
        let model = one_link(1.0);
        let k = JointStiffnessMatrix::classical(&model);
        let c = cartesian_compliance(&model, &k, &Configuration::from_slice(&[0.0])).unwrap();
        // motion direction at the tip is y
        assert_relative_eq!(1.0 / c[(1, 1)], 1.0);
        assert_relative_eq!(c[(0, 0)], 0.0);
    }

    #[test]
    fn one_link_tip_deflection() {
        let model = one_link(1e-6);
        let k = JointStiffnessMatrix::classical(&model);
        let w = Wrench::new(Vector3::new(0.0, 100.0, 0.0), Vector3::zeros());
        let d = deflection_under_load(&model, &k, &Configuration::from_slice(&[0.0]), &w).unwrap();
        // theta = k L F, delta = L theta
        assert_relative_eq!(d.d_position, Vector3::new(0.0, 1e-4, 0.0), epsilon = 1e-15);
        assert_relative_eq!(d.d_orientation, Vector3::new(0.0, 0.0, 1e-4), epsilon = 1e-15);
    }

    #[test]
    fn zero_wrench_zero_deflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (model, cfg) = random_6r(&mut rng);
        let k = JointStiffnessMatrix::classical(&model);
        let d = deflection_under_load(&model, &k, &cfg, &Wrench::zero()).unwrap();
        assert_eq!(d, Deflection::zero());
    }

    #[test]
    fn under_actuated_rejected() {
        let model = one_link(1.0);
        let k = JointStiffnessMatrix::classical(&model);
        let err = cartesian_stiffness(&model, &k, &Configuration::from_slice(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::UnderActuated { joints: 1 }));
    }

    #[test]
    fn singular_configuration_rejected() {
        // wrist with three intersecting, two of them aligned
        let joints = vec![
            JointDescriptor::new(Vector3::zeros(), Vector3::z()).unwrap(),
            JointDescriptor::new(Vector3::new(0.0, 0.0, 0.5), Vector3::y()).unwrap(),
            JointDescriptor::new(Vector3::new(0.0, 0.0, 1.0), Vector3::y()).unwrap(),
            JointDescriptor::new(Vector3::new(1.0, 0.0, 0.0), Vector3::x()).unwrap(),
            JointDescriptor::new(Vector3::zeros(), Vector3::y()).unwrap(),
            JointDescriptor::new(Vector3::zeros(), Vector3::x()).unwrap(),
        ];
        let model = RobotModel::new(joints, Vector3::new(0.2, 0.0, 0.0), vec![1e-6; 6]).unwrap();
        let k = JointStiffnessMatrix::classical(&model);
        let cfg = Configuration::from_slice(&[0.0, 0.3, 0.4, 0.0, 0.0, 0.0]);
        let err = cartesian_stiffness(&model, &k, &cfg).unwrap_err();
        assert!(matches!(err, Error::SingularConfiguration { .. }));
        let err = deflection_under_load(&model, &k, &cfg, &Wrench::zero()).unwrap_err();
        assert!(matches!(err, Error::SingularConfiguration { .. }));
    }

    #[test]
    fn zero_joint_stiffness_rejected() {
        let model = one_link(1.0);
        let k = JointStiffnessMatrix::from_diagonal(DVector::zeros(1));
        let err = cartesian_compliance(&model, &k, &Configuration::from_slice(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::InvalidConfiguration(_)));
    }

    #[test]
    fn negative_joint_stiffness_flagged_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (model, cfg) = random_6r(&mut rng);
        let mut diag = JointStiffnessMatrix::classical(&model).diag().clone();
        diag[1] = -diag[1];
        let k = JointStiffnessMatrix::from_diagonal(diag);
        let kc = cartesian_stiffness(&model, &k, &cfg).unwrap();
        assert!(!kc.positive_definite);
    }

    #[test]
    fn stiffness_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (model, cfg) = random_6r(&mut rng);
        let k = JointStiffnessMatrix::classical(&model);
        let a = cartesian_stiffness(&model, &k, &cfg).unwrap().matrix;
        let b = cartesian_stiffness(&model, &k.scaled(7.5), &cfg).unwrap().matrix;
        assert_relative_eq!(b, a * 7.5, max_relative = 1e-8, epsilon = 1e-6 * a.norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stiffness_inverts_compliance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (model, cfg) = random_6r(&mut rng);
            let k = JointStiffnessMatrix::classical(&model);
            let kc = cartesian_stiffness(&model, &k, &cfg).unwrap();
            let c = cartesian_compliance(&model, &k, &cfg).unwrap();
            let residual = (kc.matrix * c - Matrix6::identity()).abs().max();
            prop_assert!(residual < 1e-8, "residual {residual}");
            prop_assert!(kc.raw_asymmetry < 1e-8);
            prop_assert!(kc.positive_definite);
            let sym = (kc.matrix - kc.matrix.transpose()).norm() / kc.matrix.norm();
            prop_assert!(sym < 1e-10);
        }

        #[test]
        fn deflection_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (model, cfg) = random_6r(&mut rng);
            let k = JointStiffnessMatrix::classical(&model);
            let f = Vector6::from_fn(|_, _| rng.random_range(-500.0..500.0));
            let d = deflection_under_load(&model, &k, &cfg, &Wrench::from_vector(&f)).unwrap();
            let kc = cartesian_stiffness(&model, &k, &cfg).unwrap();
            let back = kc.matrix * d.to_vector();
            prop_assert!((back - f).norm() <= 1e-8 * f.norm());
        }

        #[test]
        fn stiffer_joint_never_increases_compliance(seed in any::<u64>(), bump in 1e3..1e8f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (model, cfg) = random_6r(&mut rng);
            let k = JointStiffnessMatrix::classical(&model);
            let mut diag = k.diag().clone();
            diag[1] += bump;
            let stiffer = JointStiffnessMatrix::from_diagonal(diag);
            let a = cartesian_compliance(&model, &k, &cfg).unwrap();
            let b = cartesian_compliance(&model, &stiffer, &cfg).unwrap();
            for i in 0..6 {
                prop_assert!(b[(i, i)] <= a[(i, i)] * (1.0 + 1e-12));
            }
        }
    }
}
