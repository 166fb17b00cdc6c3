//! Identification of joint compliances and compensator parameters from
//! calibration experiments, plus a simulator for such experiments.
//!
//! The parameter vector is `(k_1..k_n, k_c, s0, L, a_x, a_y)`: joint
//! compliances (rad/(N·m)), spring compliance (m/N), free length and
//! compensator geometry (m). Positive quantities are estimated in log
//! coordinates; `a_x`, `a_y` directly.
//!
//! Translational deflections alone only fix the compensator up to a
//! similarity of its triangle (`a, L, s0` scaled by `λ`, `k_c` by `λ²`).
//! Samples may therefore carry a reading of the compensator spring length,
//! which pins the geometry.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::compensator::CompensatorParams;
use crate::elastostatics::{deflection_under_load, jacobian_condition, joint_stiffness, Wrench, MAX_JACOBIAN_CONDITION};
use crate::error::{Error, Result};
use crate::kinematics::{jacobian_theta, Configuration, RobotModel};

/// One calibration measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub q: DVector<f64>,
    pub wrench: Wrench<f64>,
    /// Translational deflection (m).
    pub measured_dp: Vector3<f64>,
    /// Compensator spring length (m), when instrumented.
    pub spring_length: Option<f64>,
}

/// Which joint carries the compensator and how many joints the chain has.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub joints: usize,
    pub compensator_joint: usize,
}

impl ParameterLayout {
    pub fn len(&self) -> usize {
        self.joints + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.joints).map(|i| format!("k{i}")).collect();
        names.extend(["kc", "s0", "L", "ax", "ay"].map(String::from));
        names
    }

    /// Whether parameter `i` is estimated in log coordinates.
    pub fn is_log(&self, i: usize) -> bool {
        i < self.joints + 3
    }

    /// Parameter vector of a model and its compensator.
    pub fn pack(&self, model: &RobotModel<f64>, comp: &CompensatorParams<f64>) -> DVector<f64> {
        let mut v: Vec<f64> = model.joint_compliances().to_vec();
        v.extend([comp.compliance(), comp.free_length(), comp.link_length(), comp.ax(), comp.ay()]);
        DVector::from_vec(v)
    }

    /// Model with the compliances of `values` and the compensator they describe.
    pub fn unpack(
        &self,
        geometry: &RobotModel<f64>,
        values: &DVector<f64>,
    ) -> Result<(RobotModel<f64>, CompensatorParams<f64>)> {
        let n = self.joints;
        let model = geometry.with_compliances(values.rows(0, n).iter().copied().collect())?;
        let comp = CompensatorParams::from_compliance(
            values[n],
            values[n + 1],
            values[n + 2],
            values[n + 3],
            values[n + 4],
            self.compensator_joint,
        )?;
        Ok((model, comp))
    }

    fn internal_of(&self, values: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            values.iter().enumerate().map(|(i, v)| if self.is_log(i) { v.ln() } else { *v }),
        )
    }

    fn values_of(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            x.iter().enumerate().map(|(i, v)| if self.is_log(i) { v.exp() } else { *v }),
        )
    }

    fn coordinate_label(&self, i: usize) -> String {
        let name = &self.names()[i];
        if self.is_log(i) {
            format!("ln({name})")
        } else {
            format!("{name}[m]")
        }
    }
}

/// Simulated experiment plus the indices of poses that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCalibration {
    pub samples: Vec<CalibrationSample>,
    /// Indices into the input poses rejected as singular.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Standard deviation of the additive Gaussian noise (m), per axis.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Also record the compensator spring length.
    pub measure_spring_length: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            measure_spring_length: true,
        }
    }
}

/// Deflection measurements predicted by the compensated model at each
/// `(poses[i], forces[i])`, with optional noise.
pub fn simulate_calibration(
    model: &RobotModel<f64>,
    comps: &[CompensatorParams<f64>],
    poses: &[DVector<f64>],
    forces: &[Wrench<f64>],
    opts: &SimulationOptions,
) -> Result<SimulatedCalibration> {
    if !(opts.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfiguration("noise sigma must be >= 0".into()));
    }
    if poses.len() != forces.len() {
        return Err(Error::InvalidConfiguration(format!(
            "{} poses but {} wrenches",
            poses.len(),
            forces.len()
        )));
    }
    if opts.measure_spring_length && comps.len() != 1 {
        return Err(Error::InvalidConfiguration(
            "spring-length readings need exactly one compensator".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_sigma).map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    let mut samples = Vec::with_capacity(poses.len());
    let mut excluded = Vec::new();
    for (i, (q, f)) in poses.iter().zip(forces).enumerate() {
        let cfg = Configuration::rigid(q.clone());
        let k = joint_stiffness(model, comps, q)?;
        let d = match deflection_under_load(model, &k, &cfg, f) {
            Ok(d) => d,
            Err(Error::SingularConfiguration { .. }) => {
                excluded.push(i);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut measured_dp = d.d_position;
        let mut spring_length = opts
            .measure_spring_length
            .then(|| comps[0].spring_length(q[comps[0].joint() - 1]));
        if opts.noise_sigma > 0.0 {
            measured_dp += Vector3::from_fn(|_, _| noise.sample(&mut rng));
            if let Some(s) = spring_length.as_mut() {
                *s += noise.sample(&mut rng);
            }
        }
        samples.push(CalibrationSample {
            q: q.clone(),
            wrench: *f,
            measured_dp,
            spring_length,
        });
    }
    Ok(SimulatedCalibration { samples, excluded })
}

/// Uniformly random postures within `ranges` (rad, one `(lo, hi)` per
/// joint) with forces and moments uniform in `±max_force`, `±max_moment`
/// per axis.
pub type Excitation = (Vec<DVector<f64>>, Vec<Wrench<f64>>);

pub fn random_excitation(
    ranges: &[(f64, f64)],
    count: usize,
    max_force: f64,
    max_moment: f64,
    seed: u64,
) -> Result<Excitation> {
    if let Some((lo, hi)) = ranges.iter().find(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidConfiguration(format!("joint range [{lo}, {hi}] is empty")));
    }
    if !(max_force >= 0.0 && max_moment >= 0.0) {
        return Err(Error::InvalidConfiguration("load bounds must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let mut qs = Vec::with_capacity(count);
    let mut fs = Vec::with_capacity(count);
    for _ in 0..count {
        qs.push(DVector::from_iterator(ranges.len(), ranges.iter().map(|&(lo, hi)| uniform(lo, hi))));
        let f = Vector3::from_fn(|_, _| uniform(-max_force, max_force));
        let m = Vector3::from_fn(|_, _| uniform(-max_moment, max_moment));
        fs.push(Wrench::new(f, m));
    }
    Ok((qs, fs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    pub max_iterations: usize,
    /// Relative finite-difference step of the parameter Jacobian.
    pub fd_step: f64,
    /// `JᵀJ` condition (column-scaled) above which the set is unidentifiable.
    pub max_condition: f64,
    /// Confidence level of the reported intervals.
    pub confidence: f64,
    /// A parameter whose interval half-width exceeds this multiple of its
    /// value is flagged unidentifiable.
    pub unidentifiable_ratio: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            fd_step: 1e-6,
            max_condition: 1e12,
            confidence: 0.95,
            unidentifiable_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub layout: ParameterLayout,
    pub values: DVector<f64>,
    /// Half-widths of the confidence intervals, same units as `values`.
    pub ci: DVector<f64>,
    pub confidence: f64,
    pub covariance: DMatrix<f64>,
    pub identifiable: Vec<bool>,
    /// Root-mean-square residual (m).
    pub residual_rms: f64,
    pub residual_count: usize,
    pub iterations: usize,
}

/// Per-sample quantities that do not depend on the parameters.
struct Prepared {
    /// Translational rows of the Jacobian, 3×n.
    jp: DMatrix<f64>,
    /// Joint torques `Jᵀ F`.
    tau: DVector<f64>,
    q_comp: f64,
    measured: Vector3<f64>,
    spring_length: Option<f64>,
}

struct Problem {
    layout: ParameterLayout,
    prepared: Vec<Prepared>,
    residual_count: usize,
}

impl Problem {
    fn new(geometry: &RobotModel<f64>, layout: ParameterLayout, samples: &[CalibrationSample]) -> Result<Self> {
        let mut prepared = Vec::with_capacity(samples.len());
        let mut residual_count = 0;
        for s in samples {
            let cfg = Configuration::rigid(s.q.clone());
            let jac = jacobian_theta(geometry, &cfg)?;
            if !(jacobian_condition(&jac) < MAX_JACOBIAN_CONDITION) {
                continue;
            }
            let f = s.wrench.to_vector();
            let tau = jac.transpose() * DVector::from_column_slice(f.as_slice());
            residual_count += 3 + usize::from(s.spring_length.is_some());
            prepared.push(Prepared {
                jp: jac.rows(0, 3).into_owned(),
                tau,
                q_comp: s.q[layout.compensator_joint - 1],
                measured: s.measured_dp,
                spring_length: s.spring_length,
            });
        }
        Ok(Self {
            layout,
            prepared,
            residual_count,
        })
    }

    /// `measured - predicted` stacked over all samples, or `None` outside
    /// the physical domain.
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let values = self.layout.values_of(x);
        if !values.iter().all(|v| v.is_finite()) {
            return None;
        }
        let n = self.layout.joints;
        let j = self.layout.compensator_joint - 1;
        let comp = CompensatorParams::from_compliance(
            values[n],
            values[n + 1],
            values[n + 2],
            values[n + 3],
            values[n + 4],
            self.layout.compensator_joint,
        )
        .ok()?;
        let base: Vec<f64> = values.rows(0, n).iter().map(|k| 1.0 / k).collect();
        let mut out = DVector::zeros(self.residual_count);
        let mut row = 0;
        let mut c = vec![0.0; n];
        for p in &self.prepared {
            for (i, ci) in c.iter_mut().enumerate() {
                *ci = 1.0 / base[i];
            }
            let kj = base[j] + comp.joint_stiffness_contribution(p.q_comp).ok()?;
            if kj == 0.0 {
                return None;
            }
            c[j] = 1.0 / kj;
            let mut pred = Vector3::zeros();
            for (i, ci) in c.iter().enumerate() {
                pred += p.jp.column(i) * (ci * p.tau[i]);
            }
            let r = p.measured - pred;
            out.rows_mut(row, 3).copy_from(&r);
            row += 3;
            if let Some(s) = p.spring_length {
                out[row] = s - comp.spring_length(p.q_comp);
                row += 1;
            }
        }
        Some(out)
    }

    fn jacobian(&self, x: &DVector<f64>, step: f64) -> Option<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.residual_count, x.len());
        for i in 0..x.len() {
            let h = if self.layout.is_log(i) {
                step
            } else {
                step * x[i].abs().max(1e-3)
            };
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let diff = (self.residuals(&xp)? - self.residuals(&xm)?) / (2.0 * h);
            jac.set_column(i, &diff);
        }
        Some(jac)
    }

    /// Fails when the column-scaled normal matrix is numerically singular.
    fn check_rank(&self, jac: &DMatrix<f64>, max_condition: f64) -> Result<()> {
        let norms: Vec<f64> = jac.column_iter().map(|c| c.norm()).collect();
        let mut scaled = jac.clone();
        for (mut col, n) in scaled.column_iter_mut().zip(&norms) {
            if *n > 0.0 {
                col /= *n;
            }
        }
        let svd = scaled.svd(false, true);
        let sv = &svd.singular_values;
        let smax = sv.max();
        let smin = if norms.contains(&0.0) { 0.0 } else { sv.min() };
        let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
        if condition <= max_condition {
            return Ok(());
        }
        let v_t = svd.v_t.expect("requested V");
        let mut combinations = Vec::new();
        for (k, s) in sv.iter().enumerate() {
            let cond_k = if *s > 0.0 { (smax / s).powi(2) } else { f64::INFINITY };
            if cond_k <= max_condition {
                continue;
            }
            // back to unscaled coordinates
            let mut dir: Vec<f64> = v_t
                .row(k)
                .iter()
                .zip(&norms)
                .map(|(v, n)| if *n > 0.0 { v / n } else { *v })
                .collect();
            let big = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            dir.iter_mut().for_each(|d| *d /= big);
            let terms: Vec<String> = dir
                .iter()
                .enumerate()
                .filter(|(_, d)| d.abs() > 1e-3)
                .map(|(i, d)| format!("{:+.3}*{}", d, self.layout.coordinate_label(i)))
                .collect();
            combinations.push(terms.join(" "));
        }
        Err(Error::Unidentifiable {
            condition,
            combinations,
        })
    }
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit of the compensated model
/// to the samples, starting from `initial` (parameter values, not log).
pub fn identify(
    geometry: &RobotModel<f64>,
    compensator_joint: usize,
    samples: &[CalibrationSample],
    initial: &DVector<f64>,
) -> Result<ParameterEstimate> {
    identify_with(geometry, compensator_joint, samples, initial, &IdentifyOptions::default())
}

pub fn identify_with(
    geometry: &RobotModel<f64>,
    compensator_joint: usize,
    samples: &[CalibrationSample],
    initial: &DVector<f64>,
    opts: &IdentifyOptions,
) -> Result<ParameterEstimate> {
    let layout = ParameterLayout {
        joints: geometry.dof(),
        compensator_joint,
    };
    if compensator_joint == 0 || compensator_joint > geometry.dof() {
        return Err(Error::InvalidConfiguration(format!(
            "compensator joint {compensator_joint} outside 1..={}",
            geometry.dof()
        )));
    }
    if initial.len() != layout.len() {
        return Err(Error::InvalidConfiguration(format!(
            "initial guess has {} values, expected {}",
            initial.len(),
            layout.len()
        )));
    }
    if let Some(i) = (0..layout.len()).find(|&i| layout.is_log(i) && !(initial[i] > 0.0)) {
        return Err(Error::InvalidConfiguration(format!(
            "initial {} must be positive",
            layout.names()[i]
        )));
    }
    let problem = Problem::new(geometry, layout, samples)?;
    let p = layout.len();
    if problem.residual_count < p {
        return Err(Error::InvalidConfiguration(format!(
            "{} residual equations for {p} parameters",
            problem.residual_count
        )));
    }

    let invalid = || Error::InvalidConfiguration("initial guess outside the model domain".into());
    let mut x = layout.internal_of(initial);
    let mut r = problem.residuals(&x).ok_or_else(invalid)?;
    let mut sse = r.norm_squared();
    let mut jac = problem.jacobian(&x, opts.fd_step).ok_or_else(invalid)?;
    problem.check_rank(&jac, opts.max_condition)?;

    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let diag = jtj.diagonal().map(|d| d.max(1e-300));
        let mut accepted = None;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * diag[i];
            }
            let step = a.cholesky().map(|c| -c.solve(&g));
            // at most a factor e per iteration on log parameters, 0.5 m on the others
            let bounded = |s: &DVector<f64>| {
                s.iter()
                    .enumerate()
                    .all(|(i, d)| d.abs() <= if layout.is_log(i) { 1.0 } else { 0.5 })
            };
            if let Some(step) = step.filter(bounded) {
                let x_new = &x + &step;
                if let Some(r_new) = problem.residuals(&x_new) {
                    let sse_new = r_new.norm_squared();
                    if sse_new < sse {
                        accepted = Some((x_new, r_new, sse_new, step));
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        let Some((x_new, r_new, sse_new, step)) = accepted else {
            // no descent direction left: at a minimum up to rounding
            converged = true;
            break;
        };
        lambda = (lambda / 10.0).max(1e-12);
        let small_step = step.amax() <= 1e-12 * (1.0 + x.amax());
        let small_gain = sse - sse_new <= 1e-14 * sse;
        x = x_new;
        r = r_new;
        sse = sse_new;
        jac = problem.jacobian(&x, opts.fd_step).ok_or_else(invalid)?;
        if small_step || small_gain || sse == 0.0 {
            converged = true;
            break;
        }
    }
    let m = problem.residual_count;
    let residual_rms = (sse / m as f64).sqrt();
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            rms: residual_rms,
        });
    }
    problem.check_rank(&jac, opts.max_condition)?;

    let values = layout.values_of(&x);
    let dof = (m - p).max(1) as f64;
    let sigma2 = sse / dof;
    let jtj = jac.transpose() * &jac;
    let inv = jtj
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| jtj.try_inverse())
        .ok_or(Error::Unidentifiable {
            condition: f64::INFINITY,
            combinations: vec![],
        })?;
    let mut covariance = inv * sigma2;
    // delta method back to parameter units
    for i in 0..p {
        let di = if layout.is_log(i) { values[i] } else { 1.0 };
        for j in 0..p {
            let dj = if layout.is_log(j) { values[j] } else { 1.0 };
            covariance[(i, j)] *= di * dj;
        }
    }
    covariance = (&covariance + covariance.transpose()) * 0.5;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidConfiguration(e.to_string()))?
        .inverse_cdf(0.5 + opts.confidence / 2.0);
    let ci = covariance.diagonal().map(|v| t * v.max(0.0).sqrt());
    let identifiable = ci
        .iter()
        .zip(values.iter())
        .map(|(c, v)| *c <= opts.unidentifiable_ratio * v.abs())
        .collect();
    Ok(ParameterEstimate {
        layout,
        values,
        ci,
        confidence: opts.confidence,
        covariance,
        identifiable,
        residual_rms,
        residual_count: m,
        iterations,
    })
}
