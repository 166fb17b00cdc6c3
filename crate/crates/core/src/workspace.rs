//! Deflection maps over a planar machining area and compliance-error
//! compensation of commanded poses.

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use rayon::prelude::*;

use crate::compensator::CompensatorParams;
use crate::elastostatics::{deflection_under_load, joint_stiffness, Deflection, JointStiffnessMatrix, Wrench};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, inverse_kinematics_with, Configuration, IkOptions, Pose, RobotModel};
use crate::scalar::{lit, to_f64, Real};

/// Rectangular planar area sampled on an `nu × nv` lattice with a fixed
/// tool orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceGrid<T: Real> {
    origin: Vector3<T>,
    u_axis: Unit<Vector3<T>>,
    v_axis: Unit<Vector3<T>>,
    width: T,
    height: T,
    nu: usize,
    nv: usize,
    tool_orientation: Rotation3<T>,
}

impl<T: Real> WorkspaceGrid<T> {
    /// `origin` is the corner at `(u, v) = (0, 0)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        origin: Vector3<T>,
        u_axis: Vector3<T>,
        v_axis: Vector3<T>,
        width: T,
        height: T,
        nu: usize,
        nv: usize,
        tool_orientation: Rotation3<T>,
    ) -> Result<Self> {
        if nu < 2 || nv < 2 {
            return Err(Error::InvalidConfiguration(format!(
                "grid needs at least 2x2 nodes, got {nu}x{nv}"
            )));
        }
        if !(width > T::zero()) || !(height > T::zero()) {
            return Err(Error::InvalidConfiguration("grid size must be positive".into()));
        }
        if !(u_axis.norm() > T::zero()) || !(v_axis.norm() > T::zero()) {
            return Err(Error::InvalidConfiguration("grid axes must be nonzero".into()));
        }
        let u_axis = Unit::new_normalize(u_axis);
        let v_axis = Unit::new_normalize(v_axis);
        if u_axis.dot(&v_axis).abs() > lit(1e-12) {
            return Err(Error::InvalidConfiguration("grid axes must be orthogonal".into()));
        }
        Ok(Self {
            origin,
            u_axis,
            v_axis,
            width,
            height,
            nu,
            nv,
            tool_orientation,
        })
    }

    pub fn origin(&self) -> &Vector3<T> {
        &self.origin
    }

    pub fn u_axis(&self) -> &Unit<Vector3<T>> {
        &self.u_axis
    }

    pub fn v_axis(&self) -> &Unit<Vector3<T>> {
        &self.v_axis
    }

    pub fn size(&self) -> (T, T) {
        (self.width, self.height)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nu, self.nv)
    }

    pub fn tool_orientation(&self) -> &Rotation3<T> {
        &self.tool_orientation
    }

    /// Same area at a different resolution.
    pub fn with_resolution(&self, nu: usize, nv: usize) -> Result<Self> {
        Self::new(
            self.origin,
            self.u_axis.into_inner(),
            self.v_axis.into_inner(),
            self.width,
            self.height,
            nu,
            nv,
            self.tool_orientation,
        )
    }

    /// In-plane coordinates of node `(i, j)`.
    pub fn node_uv(&self, i: usize, j: usize) -> (T, T) {
        let du = self.width / lit((self.nu - 1) as f64);
        let dv = self.height / lit((self.nv - 1) as f64);
        (du * lit(i as f64), dv * lit(j as f64))
    }

    pub fn node_pose(&self, i: usize, j: usize) -> Pose<T> {
        let (u, v) = self.node_uv(i, j);
        Pose::new(
            self.origin + self.u_axis.into_inner() * u + self.v_axis.into_inner() * v,
            self.tool_orientation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeFlag {
    Ok,
    Unreachable,
    Singular,
}

impl NodeFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeFlag::Ok => "ok",
            NodeFlag::Unreachable => "unreachable",
            NodeFlag::Singular => "singular",
        }
    }
}

/// Deflections of one node under both stiffness models.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDeflections<T: Real> {
    pub q: DVector<T>,
    /// With the compensator folded into the joint stiffness.
    pub compensated: Deflection<T>,
    /// Joint compliances only.
    pub classical: Deflection<T>,
}

impl<T: Real> NodeDeflections<T> {
    pub fn mag_compensated(&self) -> T {
        self.compensated.magnitude()
    }

    pub fn mag_classical(&self) -> T {
        self.classical.magnitude()
    }

    /// `|dp - dp0|`.
    pub fn difference(&self) -> T {
        (self.compensated.d_position - self.classical.d_position).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapNode<T: Real> {
    pub i: usize,
    pub j: usize,
    pub u: T,
    pub v: T,
    pub position: Vector3<T>,
    pub flag: NodeFlag,
    /// `None` exactly when the node is flagged.
    pub result: Option<NodeDeflections<T>>,
}

/// Row-major (`v` outer, `u` inner) node results.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionMap<T: Real> {
    pub nu: usize,
    pub nv: usize,
    pub nodes: Vec<MapNode<T>>,
    pub warnings: Vec<String>,
}

/// Min / max / mean of a nodal quantity over the valid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats<T: Real> {
    pub min: T,
    pub max: T,
    pub mean: T,
    pub count: usize,
}

impl<T: Real> Stats<T> {
    pub fn of<I: IntoIterator<Item = T>>(values: I) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (mut min, mut max, mut sum, mut count) = (first, first, first, 1usize);
        for v in it {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        Some(Self {
            min,
            max,
            mean: sum / lit(count as f64),
            count,
        })
    }
}

impl<T: Real> DeflectionMap<T> {
    pub fn node(&self, i: usize, j: usize) -> &MapNode<T> {
        &self.nodes[j * self.nu + i]
    }

    pub fn valid(&self) -> impl Iterator<Item = &NodeDeflections<T>> {
        self.nodes.iter().filter_map(|n| n.result.as_ref())
    }

    pub fn flagged_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.result.is_none()).count()
    }

    pub fn compensated_stats(&self) -> Option<Stats<T>> {
        Stats::of(self.valid().map(|r| r.mag_compensated()))
    }

    pub fn classical_stats(&self) -> Option<Stats<T>> {
        Stats::of(self.valid().map(|r| r.mag_classical()))
    }

    pub fn difference_stats(&self) -> Option<Stats<T>> {
        Stats::of(self.valid().map(|r| r.difference()))
    }
}

fn classify(err: &Error) -> Option<NodeFlag> {
    match err {
        Error::UnreachableTarget { .. } => Some(NodeFlag::Unreachable),
        Error::SingularConfiguration { .. } | Error::SingularGeometry => Some(NodeFlag::Singular),
        _ => None,
    }
}

fn node_deflections<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    cfg: &Configuration<T>,
    wrench: &Wrench<T>,
) -> Result<NodeDeflections<T>> {
    let classical_k = JointStiffnessMatrix::classical(model);
    let compensated_k = joint_stiffness(model, comps, &cfg.q)?;
    Ok(NodeDeflections {
        q: cfg.q.clone(),
        compensated: deflection_under_load(model, &compensated_k, cfg, wrench)?,
        classical: deflection_under_load(model, &classical_k, cfg, wrench)?,
    })
}

/// Sweeps the grid: node `(0, 0)` is seeded from `home`, the first node of
/// each following row from the first node of the row before, and every
/// other node from its left neighbour. Rows are then evaluated in parallel.
/// Unreachable or singular nodes are flagged instead of failing the sweep.
pub fn evaluate_map<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    grid: &WorkspaceGrid<T>,
    wrench: &Wrench<T>,
    home: &Configuration<T>,
) -> Result<DeflectionMap<T>> {
    evaluate_map_with(model, comps, grid, wrench, home, &IkOptions::default())
}

pub fn evaluate_map_with<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    grid: &WorkspaceGrid<T>,
    wrench: &Wrench<T>,
    home: &Configuration<T>,
    ik: &IkOptions<T>,
) -> Result<DeflectionMap<T>> {
    if !wrench.is_finite() {
        return Err(Error::InvalidConfiguration("wrench must be finite".into()));
    }
    if home.q.len() != model.dof() {
        return Err(Error::InvalidModel(format!(
            "home posture has {} joints, model has {}",
            home.q.len(),
            model.dof()
        )));
    }
    // surfaces bad compensator indices up front instead of flagging every node
    joint_stiffness(model, comps, &home.q).or_else(|e| match e {
        Error::SingularGeometry => Ok(JointStiffnessMatrix::classical(model)),
        other => Err(other),
    })?;

    let (nu, nv) = grid.resolution();
    let mut row_seeds = Vec::with_capacity(nv);
    let mut seed = Configuration::rigid(home.q.clone());
    for j in 0..nv {
        row_seeds.push(seed.clone());
        if let Ok(sol) = inverse_kinematics_with(model, &grid.node_pose(0, j), &seed, ik) {
            seed = sol;
        }
    }

    let rows: Vec<Result<Vec<MapNode<T>>>> = row_seeds
        .into_par_iter()
        .enumerate()
        .map(|(j, mut seed)| {
            let mut row = Vec::with_capacity(nu);
            for i in 0..nu {
                let target = grid.node_pose(i, j);
                let (u, v) = grid.node_uv(i, j);
                let outcome = inverse_kinematics_with(model, &target, &seed, ik).and_then(|cfg| {
                    seed = cfg.clone();
                    node_deflections(model, comps, &cfg, wrench)
                });
                let (flag, result) = match outcome {
                    Ok(r) => (NodeFlag::Ok, Some(r)),
                    Err(e) => match classify(&e) {
                        Some(flag) => (flag, None),
                        None => return Err(e),
                    },
                };
                row.push(MapNode {
                    i,
                    j,
                    u,
                    v,
                    position: target.position,
                    flag,
                    result,
                });
            }
            Ok(row)
        })
        .collect();

    let mut nodes = Vec::with_capacity(nu * nv);
    for row in rows {
        nodes.extend(row?);
    }
    let mut warnings = Vec::new();
    if nodes.iter().all(|n| n.result.is_none()) {
        warnings.push("empty map: every node is unreachable or singular".to_string());
    }
    Ok(DeflectionMap {
        nu,
        nv,
        nodes,
        warnings,
    })
}

/// Per-node over/under-compensation when the correction is computed with
/// the classical model while the robot behaves like the compensated one.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyComparison<T: Real> {
    pub map: DeflectionMap<T>,
    /// Row-major like `map.nodes`; `None` on flagged nodes.
    pub residuals: Vec<Option<T>>,
}

impl<T: Real> StrategyComparison<T> {
    pub fn stats(&self) -> Option<Stats<T>> {
        Stats::of(self.residuals.iter().flatten().copied())
    }
}

pub fn compare_strategies<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    grid: &WorkspaceGrid<T>,
    wrench: &Wrench<T>,
    home: &Configuration<T>,
) -> Result<StrategyComparison<T>> {
    let map = evaluate_map(model, comps, grid, wrench, home)?;
    // under the linear model the plant lands at target + dp - dp0
    let residuals = map
        .nodes
        .iter()
        .map(|n| n.result.as_ref().map(NodeDeflections::difference))
        .collect();
    Ok(StrategyComparison { map, residuals })
}

#[derive(Debug, Clone, Copy)]
pub struct CompensationOptions<T: Real> {
    pub max_iterations: usize,
    /// Closure tolerance on `|FK(q_cmd) + dp - p_target|` (m) and on the
    /// matching orientation residual (rad).
    pub tolerance: T,
    pub ik: IkOptions<T>,
}

impl<T: Real> Default for CompensationOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: lit(1e-8),
            ik: IkOptions::default(),
        }
    }
}

/// Command pose that makes the loaded robot land on the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Compensation<T: Real> {
    pub command: Pose<T>,
    /// Joint solution for `command`.
    pub q: Configuration<T>,
    /// Predicted deflection at `q`.
    pub deflection: Deflection<T>,
    /// `|FK(q) + dp - p_target|` (m).
    pub residual: T,
    pub iterations: usize,
}

pub fn compensate_pose<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    target: &Pose<T>,
    wrench: &Wrench<T>,
    seed: &Configuration<T>,
) -> Result<Compensation<T>> {
    compensate_pose_with(model, comps, target, wrench, seed, &CompensationOptions::default())
}

/// Fixed-point iteration `p_cmd <- target - dt(q(p_cmd), F)`.
pub fn compensate_pose_with<T: Real>(
    model: &RobotModel<T>,
    comps: &[CompensatorParams<T>],
    target: &Pose<T>,
    wrench: &Wrench<T>,
    seed: &Configuration<T>,
    opts: &CompensationOptions<T>,
) -> Result<Compensation<T>> {
    let mut command = *target;
    let mut q = Configuration::rigid(seed.q.clone());
    let mut residual = T::max_value().unwrap_or_else(T::one);
    for iteration in 1..=opts.max_iterations {
        q = inverse_kinematics_with(model, &command, &q, &opts.ik)?;
        let k = joint_stiffness(model, comps, &q.q)?;
        let d = deflection_under_load(model, &k, &q, wrench)?;
        let loaded = forward_kinematics(model, &q)?.displaced(&d.d_position, &d.d_orientation);
        let err = loaded.error_to(target);
        residual = err.fixed_rows::<3>(0).norm();
        let rot = err.fixed_rows::<3>(3).norm();
        if residual < opts.tolerance && rot < opts.tolerance {
            return Ok(Compensation {
                command,
                q,
                deflection: d,
                residual,
                iterations: iteration,
            });
        }
        command = target.displaced(&-d.d_position, &Vector3::zeros());
        command.orientation = Rotation3::from_scaled_axis(-d.d_orientation) * target.orientation;
    }
    Err(Error::CompensationFailure {
        iterations: opts.max_iterations,
        residual: to_f64(residual),
    })
}
