//! TOML run configuration. Lengths are given in mm and angles in degrees;
//! everything is converted to SI on load.

use std::path::Path;

use gcstiff::{Compensator, Config, Error, Grid, Joint, Result, Robot, Wrench64};
use nalgebra::{DVector, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub robot: RobotSection,
    pub compliance: ComplianceSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compensator: Vec<CompensatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<WorkspaceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ForceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    pub tool_offset_mm: [f64; 3],
    pub joints: Vec<JointSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSection {
    pub offset_mm: [f64; 3],
    pub axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceSection {
    pub k_rad_per_nm: Vec<f64>,
}

/// Exactly one of `kc_m_per_n` (compliance) and `kc_n_per_m` (stiffness)
/// must be given; only the stiffness form admits 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensatorSection {
    pub joint: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kc_m_per_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kc_n_per_m: Option<f64>,
    pub s0_mm: f64,
    pub l_mm: f64,
    pub ax_mm: f64,
    pub ay_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSection {
    pub origin_mm: [f64; 3],
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
    pub size_mm: [f64; 2],
    pub resolution: [usize; 2],
    /// Roll, pitch, yaw of the tool frame.
    pub tool_rpy_deg: [f64; 3],
    pub home_deg: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    World,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSection {
    /// `fx, fy, fz` in N, `mx, my, mz` in N·m.
    pub wrench: [f64; 6],
    #[serde(default)]
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Tool point of the calibration end-effector; defaults to the robot's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_offset_mm: Option<[f64; 3]>,
    pub joint_ranges_deg: Vec<[f64; 2]>,
    pub max_force_n: f64,
    pub max_moment_nm: f64,
}

/// A configuration converted to model objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub model: Robot,
    pub compensators: Vec<Compensator>,
    pub workspace: Option<WorkspaceSetup>,
    pub wrench: Wrench64,
    pub frame: Frame,
    pub calibration: Option<CalibrationSetup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceSetup {
    pub grid: Grid,
    pub home: Config,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSetup {
    pub model: Robot,
    pub joint_ranges: Vec<(f64, f64)>,
    pub max_force: f64,
    pub max_moment: f64,
}

fn mm(v: [f64; 3]) -> Vector3<f64> {
    Vector3::from(v) / 1000.0
}

fn section(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Parse(m) => Error::Parse(format!("[{name}]: {m}")),
        other => Error::Parse(format!("[{name}]: {other}")),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn setup(&self) -> Result<Setup> {
        let joints = self
            .robot
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                Joint::new(mm(j.offset_mm), Vector3::from(j.axis))
                    .map_err(section(&format!("robot.joints #{}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Robot::new(joints.clone(), mm(self.robot.tool_offset_mm), self.compliance.k_rad_per_nm.clone())
            .map_err(section("compliance"))?;

        let compensators = self
            .compensator
            .iter()
            .map(|c| c.build(model.dof()).map_err(section("compensator")))
            .collect::<Result<Vec<_>>>()?;

        let workspace = self
            .workspace
            .as_ref()
            .map(|w| w.build(model.dof()).map_err(section("workspace")))
            .transpose()?;

        let (wrench, frame) = match &self.force {
            Some(f) => (Wrench64::from_vector(&Vector6::from(f.wrench)), f.frame),
            None => (Wrench64::zero(), Frame::World),
        };
        if !wrench.is_finite() {
            return Err(Error::Parse("[force]: wrench must be finite".into()));
        }

        let calibration = self
            .calibration
            .as_ref()
            .map(|c| {
                let tool = c.tool_offset_mm.unwrap_or(self.robot.tool_offset_mm);
                let calib_model = Robot::new(joints.clone(), mm(tool), model.joint_compliances().to_vec())?;
                if c.joint_ranges_deg.len() != model.dof() {
                    return Err(Error::Parse(format!(
                        "{} joint ranges for {} joints",
                        c.joint_ranges_deg.len(),
                        model.dof()
                    )));
                }
                if !(c.max_force_n >= 0.0 && c.max_moment_nm >= 0.0) {
                    return Err(Error::Parse("load bounds must be >= 0".into()));
                }
                Ok(CalibrationSetup {
                    model: calib_model,
                    joint_ranges: c
                        .joint_ranges_deg
                        .iter()
                        .map(|[lo, hi]| (lo.to_radians(), hi.to_radians()))
                        .collect(),
                    max_force: c.max_force_n,
                    max_moment: c.max_moment_nm,
                })
            })
            .transpose()
            .map_err(section("calibration"))?;

        Ok(Setup {
            model,
            compensators,
            workspace,
            wrench,
            frame,
            calibration,
        })
    }
}

impl CompensatorSection {
    fn build(&self, dof: usize) -> Result<Compensator> {
        if self.joint == 0 || self.joint > dof {
            return Err(Error::Parse(format!("joint {} outside 1..={dof}", self.joint)));
        }
        let (s0, l, ax, ay) = (self.s0_mm / 1000.0, self.l_mm / 1000.0, self.ax_mm / 1000.0, self.ay_mm / 1000.0);
        match (self.kc_m_per_n, self.kc_n_per_m) {
            (Some(c), None) => Compensator::from_compliance(c, s0, l, ax, ay, self.joint),
            (None, Some(k)) => Compensator::new(k, s0, l, ax, ay, self.joint),
            _ => Err(Error::Parse("give exactly one of kc_m_per_n, kc_n_per_m".into())),
        }
    }
}

impl WorkspaceSection {
    fn build(&self, dof: usize) -> Result<WorkspaceSetup> {
        let [r, p, y] = self.tool_rpy_deg.map(f64::to_radians);
        let grid = Grid::new(
            mm(self.origin_mm),
            Vector3::from(self.u_axis),
            Vector3::from(self.v_axis),
            self.size_mm[0] / 1000.0,
            self.size_mm[1] / 1000.0,
            self.resolution[0],
            self.resolution[1],
            Rotation3::from_euler_angles(r, p, y),
        )?;
        if self.home_deg.len() != dof {
            return Err(Error::Parse(format!("home_deg has {} values for {dof} joints", self.home_deg.len())));
        }
        let home = Config::rigid(DVector::from_iterator(dof, self.home_deg.iter().map(|d| d.to_radians())));
        Ok(WorkspaceSetup { grid, home })
    }
}
