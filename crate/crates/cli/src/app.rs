use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gcstiff::identification::{identify, random_excitation, simulate_calibration, ParameterLayout, SimulationOptions};
use gcstiff::{
    cartesian_stiffness, compare_strategies, deflection_under_load, evaluate_map, forward_kinematics,
    joint_stiffness, Compensator, Config, Error, JointStiffness, Robot, Wrench64,
};
use nalgebra::{DVector, Vector6};

use crate::config::{ConfigFile, Frame, Setup};
use crate::output::{fmt_g, read_samples, stats_line, write_comparison, write_estimate, write_map, write_samples};

#[derive(Debug, Parser)]
#[command(name = "gcstiff", version, about = "Stiffness and deflection analysis for robots with spring gravity compensators")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Robot configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Wrench "fx,fy,fz,mx,my,mz" in N and N*m, replacing the configured one.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub force: Option<String>,
    /// Frame the wrench is expressed in.
    #[arg(long, global = true, value_enum)]
    pub frame: Option<FrameArg>,
    /// Grid resolution "NxM", replacing the configured one.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Ignore the compensators in the configuration.
    #[arg(long, global = true)]
    pub no_compensator: bool,
    /// Write the parsed configuration back out as TOML.
    #[arg(long, global = true)]
    pub dump_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FrameArg {
    World,
    Tool,
}

#[derive(Debug, Args)]
pub struct Posture {
    /// Joint angles "q1,...,qn".
    #[arg(long, allow_hyphen_values = true)]
    pub q: String,
    /// Read --q in degrees instead of radians.
    #[arg(long)]
    pub deg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// End-effector pose at a posture.
    Fk(Posture),
    /// Cartesian stiffness at a posture, with and without the compensator.
    Stiffness(Posture),
    /// End-effector deflection under the wrench at a posture.
    Deflect(Posture),
    /// Deflection map over the configured machining area (CSV).
    Map,
    /// Residual error of compensating with the classical model (CSV + summary).
    Compare,
    /// Fit joint and compensator parameters to a samples CSV.
    Identify {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Synthetic calibration samples from the configured model (CSV).
    SimulateCalib {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Measurement noise standard deviation in mm.
        #[arg(long, default_value_t = 0.0)]
        noise_mm: f64,
        /// Leave out the spring-length column.
        #[arg(long)]
        no_spring_length: bool,
    },
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    let path = common.config.as_deref().context("--config is required")?;
    let file = ConfigFile::load(path)?;
    if let Some(dump) = &common.dump_config {
        std::fs::write(dump, file.dump()).map_err(Error::from)?;
    }
    let mut setup = file.setup()?;
    if common.no_compensator {
        setup.compensators.clear();
    }
    if let Some(f) = &common.force {
        setup.wrench = parse_wrench(f)?;
    }
    if let Some(frame) = common.frame {
        setup.frame = match frame {
            FrameArg::World => Frame::World,
            FrameArg::Tool => Frame::Tool,
        };
    }
    if let (Some(g), Some(ws)) = (&common.grid, setup.workspace.as_mut()) {
        let (nu, nv) = parse_grid(g)?;
        ws.grid = ws.grid.with_resolution(nu, nv)?;
    } else if common.grid.is_some() {
        bail!(Error::Parse("--grid needs a [workspace] section".into()));
    }

    match &cli.command {
        Command::Fk(p) => fk(&setup, p, common),
        Command::Stiffness(p) => stiffness(&setup, p, common),
        Command::Deflect(p) => deflect(&setup, p, common),
        Command::Map => map(&setup, common),
        Command::Compare => compare(&setup, common),
        Command::Identify { samples } => fit(&setup, samples, common),
        Command::SimulateCalib {
            count,
            noise_mm,
            no_spring_length,
        } => simulate(&setup, *count, *noise_mm, !no_spring_length, common),
    }
}

fn numbers(text: &str, what: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("{what}: bad number {:?}", t.trim())))
        })
        .collect()
}

pub fn parse_wrench(text: &str) -> Result<Wrench64, Error> {
    let v = numbers(text, "--force")?;
    if v.len() != 6 {
        return Err(Error::Parse(format!("--force needs 6 components, got {}", v.len())));
    }
    Ok(Wrench64::from_vector(&Vector6::from_column_slice(&v)))
}

pub fn parse_grid(text: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Parse(format!("--grid: expected NxM, got {text:?}"));
    let (n, m) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

fn posture(model: &Robot, p: &Posture) -> Result<Config, Error> {
    let mut q = numbers(&p.q, "--q")?;
    if q.len() != model.dof() {
        return Err(Error::InvalidConfiguration(format!(
            "--q has {} angles, model has {} joints",
            q.len(),
            model.dof()
        )));
    }
    if p.deg {
        q.iter_mut().for_each(|a| *a = a.to_radians());
    }
    Ok(Config::rigid(DVector::from_vec(q)))
}

fn sink(common: &Common) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &common.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(Error::from).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn row<'a>(values: impl IntoIterator<Item = &'a f64>, scale: f64) -> String {
    values.into_iter().map(|v| fmt_g(v * scale)).collect::<Vec<_>>().join(", ")
}

fn fk(setup: &Setup, p: &Posture, common: &Common) -> anyhow::Result<()> {
    let cfg = posture(&setup.model, p)?;
    let pose = forward_kinematics(&setup.model, &cfg)?;
    let mut out = sink(common)?;
    writeln!(out, "position ({}) m", row(pose.position.iter(), 1.0))?;
    writeln!(out, "orientation")?;
    for r in pose.orientation.matrix().row_iter() {
        writeln!(out, "  {}", row(r.iter(), 1.0))?;
    }
    out.flush()?;
    Ok(())
}

/// Wrench in world coordinates at a posture.
fn world_wrench(setup: &Setup, cfg: &Config) -> anyhow::Result<Wrench64> {
    Ok(match setup.frame {
        Frame::World => setup.wrench,
        Frame::Tool => setup.wrench.rotated(&forward_kinematics(&setup.model, cfg)?.orientation),
    })
}

fn models(setup: &Setup, q: &DVector<f64>) -> anyhow::Result<[(&'static str, JointStiffness); 2]> {
    Ok([
        ("compensated", joint_stiffness(&setup.model, &setup.compensators, q)?),
        ("classical", JointStiffness::classical(&setup.model)),
    ])
}

fn stiffness(setup: &Setup, p: &Posture, common: &Common) -> anyhow::Result<()> {
    let cfg = posture(&setup.model, p)?;
    let mut out = sink(common)?;
    for (name, k) in models(setup, &cfg.q)? {
        let kc = cartesian_stiffness(&setup.model, &k, &cfg)?;
        writeln!(out, "{name} model")?;
        writeln!(out, "  joint stiffness [N*m/rad]: {}", row(k.diag().iter(), 1.0))?;
        writeln!(out, "  Cartesian stiffness [N/m, N/rad, N*m/m, N*m/rad]:")?;
        for r in kc.matrix.row_iter() {
            writeln!(out, "    {}", row(r.iter(), 1.0))?;
        }
        writeln!(out, "  positive definite: {}", kc.positive_definite)?;
        writeln!(out, "  Jacobian condition: {}", fmt_g(kc.jacobian_condition))?;
    }
    out.flush()?;
    Ok(())
}

fn deflect(setup: &Setup, p: &Posture, common: &Common) -> anyhow::Result<()> {
    let cfg = posture(&setup.model, p)?;
    let wrench = world_wrench(setup, &cfg)?;
    let mut out = sink(common)?;
    writeln!(out, "wrench (world) ({})", row(wrench.to_vector().iter(), 1.0))?;
    for (name, k) in models(setup, &cfg.q)? {
        let d = deflection_under_load(&setup.model, &k, &cfg, &wrench)?;
        writeln!(
            out,
            "{name}: dp ({}) mm, |dp| {} mm, dphi ({}) mrad",
            row(d.d_position.iter(), 1000.0),
            fmt_g(d.magnitude() * 1000.0),
            row(d.d_orientation.iter(), 1000.0)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn grid_setup(setup: &Setup) -> anyhow::Result<(&crate::config::WorkspaceSetup, Wrench64)> {
    let ws = setup
        .workspace
        .as_ref()
        .ok_or_else(|| Error::Parse("this command needs a [workspace] section".into()))?;
    // the tool orientation is fixed over the grid
    let wrench = match setup.frame {
        Frame::World => setup.wrench,
        Frame::Tool => setup.wrench.rotated(ws.grid.tool_orientation()),
    };
    Ok((ws, wrench))
}

fn map(setup: &Setup, common: &Common) -> anyhow::Result<()> {
    let (ws, wrench) = grid_setup(setup)?;
    let map = evaluate_map(&setup.model, &setup.compensators, &ws.grid, &wrench, &ws.home)?;
    let mut out = sink(common)?;
    write_map(&mut out, &map)?;
    out.flush()?;
    let mut err = io::stderr().lock();
    for w in &map.warnings {
        writeln!(err, "warning: {w}")?;
    }
    writeln!(err, "{}", stats_line("compensated", map.compensated_stats()))?;
    writeln!(err, "{}", stats_line("classical", map.classical_stats()))?;
    writeln!(err, "{}", stats_line("difference", map.difference_stats()))?;
    writeln!(err, "flagged nodes: {}", map.flagged_count())?;
    Ok(())
}

fn compare(setup: &Setup, common: &Common) -> anyhow::Result<()> {
    let (ws, wrench) = grid_setup(setup)?;
    let cmp = compare_strategies(&setup.model, &setup.compensators, &ws.grid, &wrench, &ws.home)?;
    let mut out = sink(common)?;
    write_comparison(&mut out, &cmp)?;
    out.flush()?;
    // keep the summary off stdout when the CSV goes there
    let mut summary: Box<dyn Write> = if common.output.is_some() {
        Box::new(io::stdout().lock())
    } else {
        Box::new(io::stderr().lock())
    };
    for w in &cmp.map.warnings {
        writeln!(summary, "warning: {w}")?;
    }
    writeln!(summary, "{}", stats_line("residual", cmp.stats()))?;
    writeln!(summary, "flagged nodes: {}", cmp.map.flagged_count())?;
    Ok(())
}

fn single_compensator(setup: &Setup) -> anyhow::Result<Compensator> {
    match setup.compensators.as_slice() {
        [c] => Ok(*c),
        other => bail!(Error::InvalidConfiguration(format!(
            "identification needs exactly one compensator, configuration has {}",
            other.len()
        ))),
    }
}

fn calibration_model(setup: &Setup) -> &Robot {
    setup.calibration.as_ref().map_or(&setup.model, |c| &c.model)
}

fn fit(setup: &Setup, samples: &Path, common: &Common) -> anyhow::Result<()> {
    let comp = single_compensator(setup)?;
    let model = calibration_model(setup);
    let file = File::open(samples)
        .map_err(Error::from)
        .with_context(|| format!("opening {}", samples.display()))?;
    let samples = read_samples(io::BufReader::new(file))?;
    let layout = ParameterLayout {
        joints: model.dof(),
        compensator_joint: comp.joint(),
    };
    let est = identify(model, comp.joint(), &samples, &layout.pack(model, &comp))?;
    let mut out = sink(common)?;
    write_estimate(&mut out, &est)?;
    out.flush()?;
    Ok(())
}

fn simulate(setup: &Setup, count: usize, noise_mm: f64, spring: bool, common: &Common) -> anyhow::Result<()> {
    let comp = single_compensator(setup)?;
    let calib = setup
        .calibration
        .as_ref()
        .ok_or_else(|| Error::Parse("simulate-calib needs a [calibration] section".into()))?;
    let seed = common.seed.unwrap_or(0);
    let (poses, forces) = random_excitation(&calib.joint_ranges, count, calib.max_force, calib.max_moment, seed)?;
    let opts = SimulationOptions {
        noise_sigma: noise_mm / 1000.0,
        seed: seed.wrapping_add(1),
        measure_spring_length: spring,
    };
    let sim = simulate_calibration(&calib.model, &[comp], &poses, &forces, &opts)?;
    let mut out = sink(common)?;
    write_samples(&mut out, &sim.samples)?;
    out.flush()?;
    if !sim.excluded.is_empty() {
        eprintln!("excluded {} singular postures", sim.excluded.len());
    }
    Ok(())
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.downcast_ref::<Error>().map_or(1, Error::exit_code)
}
