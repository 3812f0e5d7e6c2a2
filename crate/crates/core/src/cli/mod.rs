//! Scenario runner: binds a configuration to the module pipelines and writes
//! JSON ledgers and plot-ready CSV.

pub mod scenario;

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::blocks::{self, audit_prefix, block_motion, certify_divergence, glue, pack_balls, BlockError, Schedule};
use crate::energy::{self, scaled_energy, surface_report, tube_energy, tube_report, tubular_energy_check, ScalingMode};
use crate::fields::{euclidean_divergence, intrinsic_divergence, AmbientField, BandProfile, TangentField};
use crate::flow::{integrate_isotopy, low_discrepancy, never_stops, volume_defect, Integration};
use crate::geometry::{build_quadrature, TubeMesh, Vec3};
use crate::massflow::{cocycle_norm, flux_pairing, jensen_chain, mass_flow, AmbientCircleMap, CircleMap};
use crate::reference::{AngularProfile, AnnulusOracle};

pub use scenario::Scenario;

pub const REPORT_SCHEMA: &str = "sdiff-lab.report/1";

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit status 2.
    #[error("configuration violation: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Output(_) => 1,
        }
    }
}

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

impl From<BlockError> for CliError {
    fn from(e: BlockError) -> Self {
        match e {
            BlockError::InvalidParameter(m) => CliError::Config(m),
            other => compute(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sdiff-lab", version, about = "Stirring isotopies, tube energies, mass flow and divergence certificates")]
pub struct Cli {
    /// Scenario file (TOML); the built-in torus block when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Homothety exponent convention.
    #[arg(long, global = true, value_parser = ["derived", "paper"])]
    pub mode: Option<String>,
    /// Output directory for JSON and CSV artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of scheduled blocks.
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    /// Energy bound to certify (repeatable).
    #[arg(long = "bound", global = true)]
    pub bounds: Vec<f64>,
    /// Surface resolution R (R × 2R nodes).
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Divergence and support checks of the surface and tube fields.
    VerifyField,
    /// Surface and tube energy reports, tubular bound, homothety scaling.
    Energy,
    /// Mass flow of the integrated surface flow and its flux dual.
    Massflow,
    /// Single-block pipeline: extend, integrate, energy, mass flow, bounds.
    Block,
    /// Ball packing and turn counts.
    Schedule,
    /// Divergence certificate for the requested bounds.
    Certify,
    /// Closed-form annulus values.
    Oracle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::VerifyField => "verify-field",
            Command::Energy => "energy",
            Command::Massflow => "massflow",
            Command::Block => "block",
            Command::Schedule => "schedule",
            Command::Certify => "certify",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

/// Result of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub command: &'static str,
    pub checks: Vec<Check>,
    /// File name and contents.
    pub artifacts: Vec<(String, String)>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> u8 {
        if self.success() {
            0
        } else {
            1
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    command: &'static str,
    tool_version: &'static str,
    checks: &'a [Check],
    result: T,
}

fn json<T: Serialize>(command: &'static str, checks: &[Check], result: T) -> Result<String, CliError> {
    let env = Envelope { schema: REPORT_SCHEMA, command, tool_version: env!("CARGO_PKG_VERSION"), checks, result };
    serde_json::to_string_pretty(&env).map(|s| s + "\n").map_err(compute)
}

/// Applies command-line overrides to a scenario.
pub fn apply_overrides(mut s: Scenario, cli: &Cli) -> Result<Scenario, CliError> {
    if let Some(m) = &cli.mode {
        s.mode = m.parse::<ScalingMode>().map_err(CliError::Config)?;
    }
    if let Some(k) = cli.blocks {
        s.schedule.blocks = k;
    }
    if !cli.bounds.is_empty() {
        s.schedule.bounds = cli.bounds.clone();
    }
    if let Some(r) = cli.resolution {
        s.resolution.surface = [r, 2 * r];
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(out) = &cli.out {
        s.output_dir = Some(out.clone());
    }
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(cli: &Cli) -> Result<Scenario, CliError> {
    let base = match &cli.config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    apply_overrides(base, cli)
}

pub fn run(command: Command, s: &Scenario) -> Result<Outcome, CliError> {
    match command {
        Command::VerifyField => verify_field(s),
        Command::Energy => energy_cmd(s),
        Command::Massflow => massflow_cmd(s),
        Command::Block => block_cmd(s),
        Command::Schedule => schedule_cmd(s),
        Command::Certify => certify_cmd(s),
        Command::Oracle => oracle_cmd(s),
    }
}

/// Writes every artifact into `dir`.
pub fn write_artifacts(outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    for (name, body) in &outcome.artifacts {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

/// Entry point for the binary; returns the process exit status.
pub fn main_with(cli: Cli) -> u8 {
    let result = load_scenario(&cli).and_then(|s| {
        let outcome = run(cli.command, &s)?;
        match &s.output_dir {
            Some(dir) => write_artifacts(&outcome, dir)?,
            None => {
                if let Some((_, body)) = outcome.artifacts.first() {
                    print!("{body}");
                }
            }
        }
        Ok(outcome)
    });
    match result {
        Ok(o) => {
            for c in &o.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !o.success() {
                let failed: Vec<_> = o.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                eprintln!("{}: failing invariant(s): {}", o.command, failed.join(", "));
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Low-discrepancy tube points over the whole chart, `|s| < δ`.
fn tube_samples(field: &AmbientField, count: usize, seed: u64, s_fraction: f64) -> Result<Vec<Vec3>, CliError> {
    let chart = field.chart();
    let [a0, a1] = chart.surface().axes();
    low_discrepancy::<3>(count, seed)
        .into_iter()
        .map(|p| {
            let u = a0.start() + a0.extent() * p[0];
            let v = a1.start() + a1.extent() * p[1];
            chart.map(u, v, (2.0 * p[2] - 1.0) * s_fraction * chart.delta()).map_err(compute)
        })
        .collect()
}

#[derive(Serialize)]
struct VerifyField {
    mode: crate::fields::ExtensionMode,
    samples: usize,
    fd_step: f64,
    max_speed: f64,
    max_divergence: f64,
    relative_divergence: f64,
    surface_max_divergence: f64,
    surface_max_speed: f64,
    off_band_max_speed: f64,
    a_priori_bound: f64,
}

fn verify_field(s: &Scenario) -> Result<Outcome, CliError> {
    let field = s.ambient_field()?;
    let pts = tube_samples(&field, s.resolution.divergence_points, s.seed, 1.0)?;
    let h = s.tolerances.fd_step;
    let mut vmax = 0.0f64;
    let mut dmax = 0.0f64;
    for x in &pts {
        vmax = vmax.max(field.velocity(x).map_err(compute)?.norm());
        let d = euclidean_divergence(|y| field.velocity(y), x, h).map_err(compute)?;
        dmax = dmax.max(d.abs());
    }
    let tangent = field.tangent();
    let mesh = build_quadrature(tangent.surface(), s.resolution.surface).map_err(compute)?;
    let band = tangent.stream().band();
    let axes = tangent.surface().axes();
    let (mut smax, mut sdiv, mut off) = (0.0f64, 0.0f64, 0.0f64);
    for &[u, v] in &mesh.nodes {
        let speed = tangent.speed(u, v).map_err(compute)?;
        smax = smax.max(speed);
        sdiv = sdiv.max(intrinsic_divergence(tangent, u, v).map_err(compute)?.abs());
        let b = if band.axis == 0 { u } else { v };
        if band.weight(&axes[band.axis], b) == 0.0 {
            off = off.max(speed);
        }
    }
    let rel = if vmax > 0.0 { dmax / vmax } else { 0.0 };
    let result = VerifyField {
        mode: field.mode(),
        samples: pts.len(),
        fd_step: h,
        max_speed: vmax,
        max_divergence: dmax,
        relative_divergence: rel,
        surface_max_divergence: sdiv,
        surface_max_speed: smax,
        off_band_max_speed: off,
        a_priori_bound: field.divergence_bound(vmax),
    };
    let tol = s.tolerances.divergence;
    let checks = vec![
        check("divergence-free (tube)", rel <= tol, format!("max |div| / max |V| = {rel:.3e} (tol {tol:.1e})")),
        check(
            "divergence-free (surface)",
            sdiv <= tol * smax.max(f64::MIN_POSITIVE),
            format!("max |div_g V| = {sdiv:.3e}, max |V| = {smax:.3e}"),
        ),
        check("support in band", off == 0.0, format!("max speed off the band = {off:.3e}")),
    ];
    let body = json("verify-field", &checks, result)?;
    Ok(Outcome { command: "verify-field", checks, artifacts: vec![("verify_field.json".into(), body)] })
}

#[derive(Serialize)]
struct EnergyResult {
    surface: energy::EnergyReport,
    tube: energy::EnergyReport,
    tubular: energy::TubularCheck,
    scaling: ScalingResult,
}

#[derive(Serialize)]
struct ScalingResult {
    lambda: f64,
    direct: f64,
    derived: f64,
    doubled: f64,
    derived_relative_error: f64,
    doubled_over_derived: f64,
}

fn scaling_result(field: &AmbientField, s: &Scenario, j_tube: f64, lambda: f64) -> Result<ScalingResult, CliError> {
    let scaled = field.scaled(lambda).map_err(compute)?;
    let mesh = TubeMesh::new(*scaled.chart(), s.resolution.surface, s.resolution.normal_points).map_err(compute)?;
    let direct = tube_energy(&scaled, &mesh).map_err(compute)?.energy;
    let n = blocks::AMBIENT_DIM;
    let derived = scaled_energy(j_tube, lambda, ScalingMode::Derived, n).map_err(compute)?;
    let doubled = scaled_energy(j_tube, lambda, ScalingMode::Doubled, n).map_err(compute)?;
    Ok(ScalingResult {
        lambda,
        direct,
        derived,
        doubled,
        derived_relative_error: (direct - derived).abs() / derived,
        doubled_over_derived: doubled / derived,
    })
}

fn energy_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let field = s.ambient_field()?;
    let surface = surface_report(field.tangent(), s.resolution.surface).map_err(compute)?;
    let mut tube = tube_report(&field, s.resolution.surface, s.resolution.normal_points).map_err(compute)?;
    tube.mode = s.mode;
    let codim = blocks::AMBIENT_DIM - blocks::SURFACE_DIM;
    let tubular = tubular_energy_check(tube.energy, surface.energy, field.chart().delta(), codim).map_err(compute)?;
    let scaling = scaling_result(&field, s, tube.energy, 0.5)?;
    let mut scaled_report = tube.clone();
    scaled_report.lambda = scaling.lambda;
    scaled_report.energy = scaling.direct;
    scaled_report.energy_ideal_jacobian = None;
    scaled_report.delta = Some(field.chart().delta() * scaling.lambda);
    scaled_report.refinement_error = f64::NAN;
    let mut csv = Vec::new();
    energy::write_csv(&[surface.clone(), tube.clone(), scaled_report], &mut csv).map_err(compute)?;
    let checks = vec![
        check(
            "tubular lower bound",
            tubular.pass,
            format!("J_tube = {:.6e} >= {:.6e}; ratio {:.6e} (flat {:.6e})", tube.energy, tubular.bound, tubular.ratio, tubular.expected_ratio),
        ),
        check(
            "homothety exponent n+2",
            scaling.derived_relative_error <= 1e-3,
            format!("λ = 1/2 direct {:.6e} vs λ^5 J {:.6e}", scaling.direct, scaling.derived),
        ),
    ];
    let body = json("energy", &checks, EnergyResult { surface, tube, tubular, scaling })?;
    Ok(Outcome {
        command: "energy",
        checks,
        artifacts: vec![("energy.json".into(), body), ("energy.csv".into(), String::from_utf8(csv).map_err(compute)?)],
    })
}

#[derive(Serialize)]
struct MassflowResult {
    turns: u64,
    steps: usize,
    particles: usize,
    mass_flow: f64,
    measure: f64,
    flux_pairing: f64,
    relative_gap: f64,
    unit_turn_mass_flow: f64,
    linearity_error: f64,
    cocycle_norm: f64,
    jensen: crate::massflow::JensenCheck,
}

fn surface_mass_flow(t: &TangentField, s: &Scenario) -> Result<(f64, f64, usize), CliError> {
    let mesh = build_quadrature(t.surface(), s.resolution.surface).map_err(compute)?;
    let f = CircleMap::basis(t.surface(), t.stream().band().flow_axis()).map_err(compute)?;
    let cfg = Integration::for_turns(t.turns(), s.resolution.steps_per_turn).map_err(compute)?;
    let iso = integrate_isotopy(t, &mesh.nodes, &cfg).map_err(compute)?;
    let mf = mass_flow(&iso, &f, &mesh.weights).map_err(compute)?;
    Ok((mf.value, mf.measure, cfg.steps))
}

fn massflow_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let t = s.tangent_field()?;
    let mesh = build_quadrature(t.surface(), s.resolution.surface).map_err(compute)?;
    let f = CircleMap::basis(t.surface(), t.stream().band().flow_axis()).map_err(compute)?;
    let (value, measure, steps) = surface_mass_flow(&t, s)?;
    let (unit, _, _) = if t.turns() == 1 { (value, measure, steps) } else { surface_mass_flow(&t.with_turns(1), s)? };
    let pairing = flux_pairing(&t, &f, &mesh).map_err(compute)?;
    let gap = (value - pairing).abs() / pairing.abs().max(f64::MIN_POSITIVE);
    let lin = (value - t.turns() as f64 * unit).abs() / value.abs().max(f64::MIN_POSITIVE);
    let norm = cocycle_norm(t.surface(), &f, &mesh).map_err(compute)?;
    let j = crate::energy::surface_energy(&t, &mesh).map_err(compute)?;
    let theta_norm = (value / measure).abs() / norm;
    let jensen = jensen_chain(j, theta_norm, measure);
    let tol = s.tolerances.duality;
    let checks = vec![
        check("duality", gap <= tol, format!("|θ̃ − flux| / |flux| = {gap:.3e} (tol {tol:.1e})")),
        check("linearity in N", lin <= 1e-6, format!("relative error {lin:.3e} at N = {}", t.turns())),
        check("jensen chain", jensen.pass, format!("J = {:.6e} >= {:.6e} (slack {:.6})", jensen.energy, jensen.bound, jensen.slack)),
    ];
    let result = MassflowResult {
        turns: t.turns(),
        steps,
        particles: mesh.nodes.len(),
        mass_flow: value,
        measure,
        flux_pairing: pairing,
        relative_gap: gap,
        unit_turn_mass_flow: unit,
        linearity_error: lin,
        cocycle_norm: norm,
        jensen,
    };
    let body = json("massflow", &checks, result)?;
    Ok(Outcome { command: "massflow", checks, artifacts: vec![("massflow.json".into(), body)] })
}

#[derive(Serialize)]
struct BlockResult {
    turns: u64,
    steps: usize,
    particles: usize,
    volume_defect: f64,
    never_stops: crate::flow::NeverStops,
    surface_energy: f64,
    tube_energy: f64,
    tubular: energy::TubularCheck,
    mass_flow: f64,
    flux_pairing: f64,
}

fn block_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let field = s.ambient_field()?;
    let chart = *field.chart();
    let t = *field.tangent();
    let n = t.turns();
    let cfg = Integration::for_turns(n, s.resolution.steps_per_turn).map_err(compute)?.with_jacobian(1e-5);
    let pts: Vec<[f64; 3]> =
        tube_samples(&field, s.resolution.particles, s.seed, 0.7)?.iter().map(|x| [x.x, x.y, x.z]).collect();
    let iso = integrate_isotopy(&field, &pts, &cfg).map_err(compute)?;
    let defect = volume_defect(&iso).map_err(compute)?;

    let band = t.stream().band();
    let tracer = blocks::plateau_tracer(&blocks::CanonicalBlock {
        field,
        radius: s.schedule.radius,
        resolution: s.resolution.surface,
        normal_points: s.resolution.normal_points,
    });
    let x0 = chart.map(tracer[0], tracer[1], 0.0).map_err(compute)?;
    let fmap = AmbientCircleMap { chart, map: CircleMap::basis(chart.surface(), band.flow_axis()).map_err(compute)? };
    let tracer_iso = integrate_isotopy(&field, &[[x0.x, x0.y, x0.z]], &Integration { track_jacobian: false, ..cfg })
        .map_err(compute)?;
    let motion = never_stops(&tracer_iso, &fmap, 0).map_err(compute)?;

    let js = surface_report(&t, s.resolution.surface).map_err(compute)?.energy;
    let jt = tube_energy(&field, &TubeMesh::new(chart, s.resolution.surface, s.resolution.normal_points).map_err(compute)?)
        .map_err(compute)?
        .energy;
    let tubular = tubular_energy_check(jt, js, chart.delta(), blocks::AMBIENT_DIM - blocks::SURFACE_DIM).map_err(compute)?;
    let (mf, _, _) = surface_mass_flow(&t, s)?;
    let mesh = build_quadrature(t.surface(), s.resolution.surface).map_err(compute)?;
    let pairing = flux_pairing(&t, &fmap.map, &mesh).map_err(compute)?;
    let gap = (mf - pairing).abs() / pairing.abs().max(f64::MIN_POSITIVE);
    let vt = s.tolerances.volume;
    let checks = vec![
        check("volume preservation", defect <= vt, format!("max |det Dφ − 1| = {defect:.3e} (tol {vt:.1e})")),
        check("never stops", motion.never_stops, format!("lift-rate margin {:.6e}", motion.margin)),
        check("tubular lower bound", tubular.pass, format!("{jt:.6e} >= {:.6e}", tubular.bound)),
        check("duality", gap <= s.tolerances.duality, format!("relative gap {gap:.3e}")),
    ];
    let result = BlockResult {
        turns: n,
        steps: cfg.steps,
        particles: pts.len(),
        volume_defect: defect,
        never_stops: motion,
        surface_energy: js,
        tube_energy: jt,
        tubular,
        mass_flow: mf,
        flux_pairing: pairing,
    };
    let body = json("block", &checks, result)?;
    Ok(Outcome { command: "block", checks, artifacts: vec![("block.json".into(), body)] })
}

#[derive(Serialize)]
struct ScheduleResult {
    constants: blocks::BlockConstants,
    bound_constant: f64,
    exponent: u32,
    balls: Vec<BallRow>,
    blocks: Vec<blocks::BlockEntry>,
    partial_sums: Vec<f64>,
}

#[derive(Serialize)]
struct BallRow {
    index: usize,
    center: [String; 3],
    radius: String,
}

fn measured_schedule(s: &Scenario, count: usize) -> Result<(blocks::CanonicalBlock, Schedule), CliError> {
    let canonical = s.canonical_block()?;
    let constants = canonical.measure()?;
    let mut params = s.schedule_params()?;
    params.k_max = params.k_max.max(count);
    Ok((canonical, blocks::build_schedule(params, constants, count)?))
}

fn schedule_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let k = s.schedule.blocks;
    let params = s.schedule_params()?;
    let packing = pack_balls(k, &params.rho0, &params.decay);
    let (_, schedule) = measured_schedule(s, k)?;
    let mut checks = vec![check(
        "packing disjoint and contained",
        packing.is_ok(),
        match &packing {
            Ok(_) => format!("{k} balls verified in exact arithmetic"),
            Err(e) => e.to_string(),
        },
    )];
    let harmonic_ok = schedule.partial_sums.iter().enumerate().all(|(i, &v)| {
        let h: f64 = (1..=i + 1).map(|j| 1.0 / j as f64).sum();
        v >= h * (1.0 - 1e-12)
    });
    checks.push(check("S_K >= H_K", harmonic_ok, format!("{k} partial sums")));
    let balls = packing
        .as_ref()
        .map(|p| {
            p.balls
                .iter()
                .map(|b| BallRow {
                    index: b.index,
                    center: [b.center[0].to_string(), b.center[1].to_string(), b.center[2].to_string()],
                    radius: b.radius.to_string(),
                })
                .collect()
        })
        .unwrap_or_default();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["index", "log2_radius", "log2_delta", "log10_turns", "lower_bound", "partial_sum", "log10_literal_turns"])
        .map_err(compute)?;
    for (e, sum) in schedule.entries.iter().zip(&schedule.partial_sums) {
        csv.write_record([
            e.index.to_string(),
            e.log2_radius.to_string(),
            e.log2_delta.to_string(),
            e.log10_turns.to_string(),
            e.lower_bound.to_string(),
            sum.to_string(),
            e.log10_literal_turns.to_string(),
        ])
        .map_err(compute)?;
    }
    let csv = String::from_utf8(csv.into_inner().map_err(compute)?).map_err(compute)?;
    let result = ScheduleResult {
        constants: schedule.constants,
        bound_constant: schedule.constants.bound_constant(),
        exponent: schedule.exponent(),
        balls,
        blocks: schedule.entries.clone(),
        partial_sums: schedule.partial_sums.clone(),
    };
    let body = json("schedule", &checks, result)?;
    Ok(Outcome {
        command: "schedule",
        checks,
        artifacts: vec![("schedule.json".into(), body), ("schedule.csv".into(), csv)],
    })
}

/// Blocks glued into the cube for the support check.
const GLUED_BLOCKS: usize = 4;

fn certify_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let canonical = s.canonical_block()?;
    let constants = canonical.measure()?;
    let params = s.schedule_params()?;
    let (mut cert, schedule) = certify_divergence(params.clone(), constants, &s.schedule.bounds)?;
    cert.audit = audit_prefix(&canonical, &schedule, s.schedule.audit)?;
    cert.motion = Some(block_motion(&canonical, &schedule, s.resolution.steps_per_turn)?);
    let glued_count = GLUED_BLOCKS.min(schedule.len());
    let packing = pack_balls(glued_count, &params.rho0, &params.decay)?;
    let glued = glue(&canonical, &packing, &schedule, glued_count)?;
    let support = glued.check_support(2000, s.seed).map_err(compute)?;

    let mut checks: Vec<Check> = cert
        .witnesses
        .iter()
        .map(|w| {
            check(
                &format!("witness K({})", w.bound),
                w.partial_sum >= w.bound,
                format!("S_{} = {:.9} ({:?}, minimal: {})", w.k, w.partial_sum, w.verification, w.minimal),
            )
        })
        .collect();
    let harmonic_ok = cert.partial_sums.iter().scan(0.0, |h, p| {
        *h += 1.0 / p.k as f64;
        Some(p.sum >= *h * (1.0 - 1e-12))
    });
    let harmonic_ok = harmonic_ok.fold(true, |a, b| a && b);
    checks.push(check("S_K >= H_K", harmonic_ok, format!("{} partial sums", cert.partial_sums.len())));
    for a in &cert.audit {
        checks.push(check(
            &format!("audit block {}", a.index),
            a.pass,
            format!("L = {:.6e} <= J = {:.6e} <= 10 L (ratio {:.4})", a.lower_bound, a.direct_energy, a.ratio),
        ));
    }
    let motion = cert.motion.as_ref().expect("set above");
    checks.push(check(
        "never stops",
        motion.all_positive,
        format!("unit margin {:.6e}; {} scheduled blocks", motion.unit.margin, motion.log2_margins.len()),
    ));
    checks.push(check(
        "glued support",
        support.violations == 0,
        format!("{} samples, {} nonzero, {} outside the tubes", support.samples, support.nonzero, support.violations),
    ));
    let body = cert.to_json()? + "\n";
    Ok(Outcome { command: "certify", checks, artifacts: vec![("certificate.json".into(), body)] })
}

#[derive(Serialize)]
struct OracleResult {
    rigid: crate::reference::AnnulusValues,
    rigid_jensen_slack: f64,
    scenario_bump: Option<crate::reference::AnnulusValues>,
}

fn oracle_cmd(s: &Scenario) -> Result<Outcome, CliError> {
    let rigid = AnnulusOracle::rigid(1.0, 2.0);
    let v = rigid.values();
    let bump = match (s.surface, s.band.profile, s.band.axis) {
        (crate::geometry::SurfaceKind::FlatAnnulus { inner, outer }, BandProfile::Plateau { center, half_width, ramp }, 0) => {
            let p = AngularProfile::Bump {
                center,
                half_width,
                ramp,
                amplitude: s.band.amplitude * s.band.turns as f64,
            };
            Some(AnnulusOracle::new(inner, outer, p).map_err(CliError::Config)?.values())
        }
        _ => None,
    };
    let checks = vec![check(
        "rigid annulus triple",
        (v.area - 3.0 * PI).abs() < 1e-9 && (v.energy - 15.0 * PI / 4.0).abs() < 1e-9 && (v.mass_flow - 3.0 * PI).abs() < 1e-9,
        format!("area {:.10}, J {:.10}, θ̃ {:.10} (2π = {:.6})", v.area, v.energy, v.mass_flow, TAU),
    )];
    let body = json("oracle", &checks, OracleResult { rigid: v, rigid_jensen_slack: rigid.jensen_slack(), scenario_bump: bump })?;
    Ok(Outcome { command: "oracle", checks, artifacts: vec![("oracle.json".into(), body)] })
}

/// Deterministic one-line identifier for a command's artifact set.
pub fn artifact_names(command: Command) -> &'static [&'static str] {
    match command {
        Command::VerifyField => &["verify_field.json"],
        Command::Energy => &["energy.json", "energy.csv"],
        Command::Massflow => &["massflow.json"],
        Command::Block => &["block.json"],
        Command::Schedule => &["schedule.json", "schedule.csv"],
        Command::Certify => &["certificate.json"],
        Command::Oracle => &["oracle.json"],
    }
}

pub fn command_name(command: Command) -> &'static str {
    command.name()
}
