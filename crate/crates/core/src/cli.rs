//! Command-line front end: config files, single runs, sweeps, lattice
//! generation and SVG replays.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 internal error
//! or numeric divergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::actuation::{CableParams, RobotGeometry};
use crate::controller::ControllerConfig;
use crate::dynamics::{link_poses, ContactParams, HydroParams, PhysicsParams, RobotState};
use crate::environment::{build_perturbed_lattice, build_regular_lattice, Bounds, Lattice};
use crate::error::{Error, Result};
use crate::experiments::{
    run_sweep, run_trial_in, CellResult, ComplianceMode, LatticeSpec, Outcome, ParamAxis,
    StartPose, SweepParam, SweepSpec, Trajectory, TrialConfig, TrialResult,
};
use crate::gait::GaitParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

// ---------------------------------------------------------------------------
// Config file

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gait: GaitSection,
    pub compliance: ComplianceSection,
    pub robot: RobotSection,
    pub hydro: HydroSection,
    pub contact: ContactSection,
    pub lattice: LatticeSection,
    pub trial: TrialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitSection {
    #[serde(rename = "A_deg")]
    pub amplitude_deg: f64,
    pub xi: f64,
    pub omega_hz: f64,
    #[serde(rename = "N")]
    pub joints: usize,
}

impl Default for GaitSection {
    fn default() -> Self {
        GaitSection {
            amplitude_deg: 55.0,
            xi: 0.6,
            omega_hz: 0.05,
            joints: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplianceKind {
    Fixed,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplianceSection {
    pub mode: ComplianceKind,
    #[serde(rename = "G")]
    pub g: f64,
    pub controller: ControllerSection,
}

impl Default for ComplianceSection {
    fn default() -> Self {
        ComplianceSection {
            mode: ComplianceKind::Fixed,
            g: 1.0,
            controller: ControllerSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    #[serde(rename = "T_Nm")]
    pub stall_torque_nm: f64,
    pub thresholds: Vec<f64>,
    pub increment: f64,
    #[serde(rename = "base_G")]
    pub base_g: f64,
    pub hold_s: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::default();
        ControllerSection {
            stall_torque_nm: c.stall_torque,
            thresholds: c.thresholds,
            increment: c.increment,
            base_g: c.base_g,
            hold_s: c.hold_duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct RobotSection {
    pub link_length_m: f64,
    #[serde(rename = "Lc_m")]
    pub cable_offset_m: f64,
    #[serde(rename = "Lj_m")]
    pub anchor_half_span_m: f64,
    pub l0_m_per_deg: f64,
    pub pulley_radius_m: f64,
    pub mech_limit_deg: f64,
    pub link_mass_kg: f64,
    pub link_width_m: f64,
    pub draft_m: f64,
    pub cable_stiffness_Nm: f64,
    pub cable_damping_Nsm: f64,
    pub cable_max_tension_N: f64,
}

impl Default for RobotSection {
    fn default() -> Self {
        let g = RobotGeometry::default();
        let c = CableParams::default();
        RobotSection {
            link_length_m: g.link_length,
            cable_offset_m: g.cable_offset,
            anchor_half_span_m: g.anchor_half_span,
            l0_m_per_deg: g.relaxed_rate,
            pulley_radius_m: g.pulley_radius,
            mech_limit_deg: g.mech_limit.to_degrees(),
            link_mass_kg: g.link_mass,
            link_width_m: g.link_width,
            draft_m: g.draft,
            cable_stiffness_Nm: c.stiffness,
            cable_damping_Nsm: c.damping,
            cable_max_tension_N: c.max_tension,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct HydroSection {
    pub fluid_density_kgm3: f64,
    #[serde(rename = "Cn")]
    pub drag_normal: f64,
    #[serde(rename = "Ct")]
    pub drag_tangential: f64,
    #[serde(rename = "C_rot")]
    pub drag_rotational: f64,
    pub added_mass_normal: f64,
    pub linear_drag_Nsm2: f64,
}

impl Default for HydroSection {
    fn default() -> Self {
        let h = HydroParams::default();
        HydroSection {
            fluid_density_kgm3: h.fluid_density,
            drag_normal: h.drag_coef_normal,
            drag_tangential: h.drag_coef_tangential,
            drag_rotational: h.rotational_drag_coef,
            added_mass_normal: h.added_mass_coef_normal,
            linear_drag_Nsm2: h.linear_drag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct ContactSection {
    pub stiffness_Nm: f64,
    pub damping_Nsm: f64,
    pub mu: f64,
    pub slip_velocity_mps: f64,
}

impl Default for ContactSection {
    fn default() -> Self {
        let c = ContactParams::default();
        ContactSection {
            stiffness_Nm: c.normal_stiffness,
            damping_Nsm: c.normal_damping,
            mu: c.friction_mu,
            slip_velocity_mps: c.slip_velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Regular,
    Perturbed,
    File,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub mode: LatticeKind,
    pub spacing_m: f64,
    pub radius_m: f64,
    /// Width and height of the lattice area, centred on the origin.
    pub bounds_m: [f64; 2],
    pub sigma_m: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection {
            mode: LatticeKind::Regular,
            spacing_m: 0.25,
            radius_m: 0.045,
            bounds_m: [2.0, 2.0],
            sigma_m: 0.05,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSection {
    pub seed: u64,
    pub max_duration_s: f64,
    pub jam_window_periods: f64,
    pub jam_eps_m: f64,
    pub dt_s: f64,
    pub command_rate_hz: f64,
    pub log_rate_hz: f64,
    pub start_margin_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_commands_at_s: Option<f64>,
}

impl Default for TrialSection {
    fn default() -> Self {
        let t = TrialConfig::default();
        let margin = match t.start {
            StartPose::Random { margin } => margin,
            StartPose::Fixed(_) => 0.3,
        };
        TrialSection {
            seed: t.seed,
            max_duration_s: t.max_duration,
            jam_window_periods: t.jam_window_periods,
            jam_eps_m: t.jam_displacement_eps,
            dt_s: t.physics.dt,
            command_rate_hz: t.command_rate,
            log_rate_hz: t.log_rate,
            start_margin_m: margin,
            freeze_commands_at_s: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field"))
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            Error::Config { key, message: e.to_string().trim_end().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec> {
        let l = &self.lattice;
        let [w, h] = l.bounds_m;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::config("lattice.bounds_m", "width and height must be positive"));
        }
        let bounds = Bounds::centered(w, h);
        Ok(match l.mode {
            LatticeKind::Regular => LatticeSpec::Regular {
                spacing: l.spacing_m,
                radius: l.radius_m,
                bounds,
            },
            LatticeKind::Perturbed => LatticeSpec::Perturbed {
                spacing: l.spacing_m,
                radius: l.radius_m,
                bounds,
                sigma: l.sigma_m,
                seed: l.seed,
            },
            LatticeKind::Empty => LatticeSpec::Empty { bounds },
            LatticeKind::File => LatticeSpec::File {
                path: l
                    .path
                    .clone()
                    .ok_or_else(|| Error::config("lattice.path", "file mode needs a path"))?,
            },
        })
    }

    /// Resolves the document into a validated trial configuration.
    pub fn to_trial_config(&self) -> Result<TrialConfig> {
        let r = &self.robot;
        let geometry = RobotGeometry {
            joint_count: self.gait.joints,
            link_length: r.link_length_m,
            cable_offset: r.cable_offset_m,
            anchor_half_span: r.anchor_half_span_m,
            relaxed_rate: r.l0_m_per_deg,
            pulley_radius: r.pulley_radius_m,
            mech_limit: r.mech_limit_deg.to_radians(),
            link_mass: r.link_mass_kg,
            link_width: r.link_width_m,
            draft: r.draft_m,
            total_length: r.link_length_m * (self.gait.joints + 1) as f64,
        };
        let h = &self.hydro;
        let c = &self.contact;
        let physics = PhysicsParams {
            geometry,
            hydro: HydroParams {
                fluid_density: h.fluid_density_kgm3,
                drag_coef_normal: h.drag_normal,
                drag_coef_tangential: h.drag_tangential,
                rotational_drag_coef: h.drag_rotational,
                added_mass_coef_normal: h.added_mass_normal,
                linear_drag: h.linear_drag_Nsm2,
            },
            contact: ContactParams {
                normal_stiffness: c.stiffness_Nm,
                normal_damping: c.damping_Nsm,
                friction_mu: c.mu,
                slip_velocity: c.slip_velocity_mps,
            },
            cable: CableParams {
                stiffness: r.cable_stiffness_Nm,
                damping: r.cable_damping_Nsm,
                max_tension: r.cable_max_tension_N,
            },
            dt: self.trial.dt_s,
        };
        let gait = GaitParams::from_degrees(
            self.gait.amplitude_deg,
            self.gait.xi,
            self.gait.omega_hz,
            self.gait.joints,
            r.mech_limit_deg,
        )?;
        let compliance = match self.compliance.mode {
            ComplianceKind::Fixed => ComplianceMode::Fixed(self.compliance.g),
            ComplianceKind::Controller => {
                let s = &self.compliance.controller;
                ComplianceMode::Controller(ControllerConfig {
                    stall_torque: s.stall_torque_nm,
                    thresholds: s.thresholds.clone(),
                    increment: s.increment,
                    base_g: s.base_g,
                    hold_duration: s.hold_s,
                })
            }
        };
        let t = &self.trial;
        let cfg = TrialConfig {
            gait,
            compliance,
            lattice: self.lattice_spec()?,
            physics,
            seed: t.seed,
            max_duration: t.max_duration_s,
            jam_window_periods: t.jam_window_periods,
            jam_displacement_eps: t.jam_eps_m,
            command_rate: t.command_rate_hz,
            log_rate: t.log_rate_hz,
            start: StartPose::Random { margin: t.start_margin_m },
            freeze_commands_at: t.freeze_commands_at_s,
            record_trajectory: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Output files

/// `trial.json` contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    #[serde(flatten)]
    pub result: TrialResult,
}

pub fn trajectory_header(joints: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string(), "head_x_m".into(), "head_y_m".into(), "head_theta_rad".into()];
    h.extend((1..=joints).map(|i| format!("alpha_{i}_rad")));
    h.push("contact_count".into());
    h
}

pub fn controller_header(joints: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    h.extend((1..=joints).map(|i| format!("G_{i}")));
    h.extend((1..=joints).map(|i| format!("tau_{i}_Nm")));
    h
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_trajectory_csv(path: &Path, joints: usize, tr: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(trajectory_header(joints)).map_err(csv_error)?;
    for s in &tr.samples {
        let mut row = vec![s.t.to_string(), s.head[0].to_string(), s.head[1].to_string(), s.head[2].to_string()];
        row.extend(s.alpha.iter().map(f64::to_string));
        row.push(s.contact_count.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_controller_csv(path: &Path, joints: usize, tr: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(controller_header(joints)).map_err(csv_error)?;
    for s in &tr.controller {
        let mut row = vec![s.t.to_string()];
        row.extend(s.g.iter().map(f64::to_string));
        row.extend(s.tau.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed `trajectory.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub head: [f64; 3],
    pub alpha: Vec<f64>,
    pub contact_count: usize,
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number `{s}` in {what}")))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.len() < 5 || &headers[0] != "t_s" || &headers[headers.len() - 1] != "contact_count" {
        return Err(Error::Format(format!("{} is not a trajectory file", path.display())));
    }
    let joints = headers.len() - 5;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| parse_f64(&rec[i], "trajectory.csv");
        rows.push(TrajectoryRow {
            t: f(0)?,
            head: [f(1)?, f(2)?, f(3)?],
            alpha: (0..joints).map(|j| f(4 + j)).collect::<Result<_>>()?,
            contact_count: rec[4 + joints]
                .trim()
                .parse()
                .map_err(|_| Error::Format("bad contact count in trajectory.csv".into()))?,
        });
    }
    Ok(rows)
}

/// Parsed `controller.csv`: times, per-joint G and torques.
pub fn read_controller_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.len() < 3 || (headers.len() - 1) % 2 != 0 || &headers[0] != "t_s" {
        return Err(Error::Format(format!("{} is not a controller trace", path.display())));
    }
    let joints = (headers.len() - 1) / 2;
    let (mut t, mut g, mut tau) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| parse_f64(&rec[i], "controller.csv");
        t.push(f(0)?);
        g.push((0..joints).map(|j| f(1 + j)).collect::<Result<Vec<_>>>()?);
        tau.push((0..joints).map(|j| f(1 + joints + j)).collect::<Result<Vec<_>>>()?);
    }
    Ok((t, g, tau))
}

fn sweep_param_columns(cells: &[CellResult]) -> Vec<SweepParam> {
    cells
        .first()
        .map(|c| c.values.iter().map(|(p, _)| *p).collect())
        .unwrap_or_default()
}

pub fn write_sweep_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let params = sweep_param_columns(cells);
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    header.extend(
        ["trial_id", "seed", "outcome", "distance_m", "duration_s", "speed_mps"].map(String::from),
    );
    w.write_record(&header).map_err(csv_error)?;
    for cell in cells {
        for t in &cell.trials {
            let mut row: Vec<String> = cell.values.iter().map(|(_, v)| v.to_string()).collect();
            row.push(t.trial_id.to_string());
            row.push(t.seed.to_string());
            match &t.result {
                Ok(r) => {
                    row.push(r.outcome.as_str().to_string());
                    row.push(r.distance_traveled.to_string());
                    row.push(r.duration.to_string());
                    row.push(r.mean_speed.to_string());
                }
                Err(_) => row.extend(["error", "", "", ""].map(String::from)),
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let params = sweep_param_columns(cells);
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    header.extend(
        ["trials", "completed", "success_rate", "mean_speed_mps", "std_speed_mps", "errors"]
            .map(String::from),
    );
    w.write_record(&header).map_err(csv_error)?;
    for cell in cells {
        let mut row: Vec<String> = cell.values.iter().map(|(_, v)| v.to_string()).collect();
        let done = cell.completed();
        let errors = cell.trials.len() - done.len();
        row.push(cell.trials.len().to_string());
        row.push(done.len().to_string());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        row.push(opt(cell.success_rate()));
        let stats = cell.speed_stats();
        row.push(opt(stats.map(|s| s.0)));
        row.push(opt(stats.map(|s| s.1)));
        row.push(errors.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Distance grid shared by every cell of a survival table.
pub fn survival_grid(cells: &[CellResult], step: f64) -> Vec<f64> {
    let max = cells
        .iter()
        .flat_map(|c| c.completed())
        .map(|r| r.distance_traveled)
        .fold(0.0, f64::max);
    let n = (max / step).ceil() as usize + 1;
    (0..=n).map(|k| (k as f64 * step * 1e9).round() / 1e9).collect()
}

pub fn write_survival_csv(path: &Path, cells: &[CellResult], grid: &[f64]) -> Result<()> {
    let params = sweep_param_columns(cells);
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    header.extend(["distance_m", "survival"].map(String::from));
    w.write_record(&header).map_err(csv_error)?;
    for cell in cells {
        let Some(curve) = cell.survival(grid) else { continue };
        for (d, s) in grid.iter().zip(curve) {
            let mut row: Vec<String> = cell.values.iter().map(|(_, v)| v.to_string()).collect();
            row.push(d.to_string());
            row.push(s.to_string());
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SVG rendering

fn time_color(frac: f64) -> String {
    // Blue to red through purple.
    let f = frac.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * f) as u8;
    let b = (220.0 - 180.0 * f) as u8;
    format!("#{r:02x}30{b:02x}")
}

/// Renders the lattice, sampled body poses and the time-colored head path.
pub fn render_trajectory_svg(
    lattice: &Lattice,
    geometry: &RobotGeometry,
    rows: &[TrajectoryRow],
) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Format("trajectory is empty".into()));
    }
    let b = lattice.bounds;
    let reach = geometry.link_length * (geometry.joint_count + 1) as f64;
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (b.min_x, b.min_y, b.max_x, b.max_y);
    for r in rows {
        lo_x = lo_x.min(r.head[0] - reach);
        lo_y = lo_y.min(r.head[1] - reach);
        hi_x = hi_x.max(r.head[0] + reach);
        hi_y = hi_y.max(r.head[1] + reach);
    }
    let pad = 0.05;
    let (x0, y0) = (lo_x - pad, lo_y - pad);
    let (w, h) = (hi_x - lo_x + 2.0 * pad, hi_y - lo_y + 2.0 * pad);
    let scale = 500.0 / w.max(h);
    // World y up, SVG y down.
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y0 + h - y) * scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.1}" height="{:.1}" viewBox="0 0 {:.3} {:.3}">"#,
        w * scale,
        h * scale,
        w * scale,
        h * scale
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##,
        px(b.min_x),
        py(b.max_y),
        b.width() * scale,
        b.height() * scale
    );
    for p in &lattice.posts {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#bbb"/>"##,
            px(p[0]),
            py(p[1]),
            lattice.radius * scale
        );
    }
    let t_end = rows.last().map(|r| r.t).unwrap_or(0.0).max(1e-9);
    // Body outlines at about 12 instants.
    let every = (rows.len() / 12).max(1);
    for r in rows.iter().step_by(every) {
        let poses = link_poses(&RobotState::at_rest(r.head, &r.alpha), geometry);
        let color = time_color(r.t / t_end);
        for pose in poses {
            let (sn, cs) = pose.heading.sin_cos();
            let half = 0.5 * geometry.link_length;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.45" stroke-width="{:.2}" stroke-linecap="round"/>"#,
                px(pose.center[0] - half * cs),
                py(pose.center[1] - half * sn),
                px(pose.center[0] + half * cs),
                py(pose.center[1] + half * sn),
                geometry.link_width * scale
            );
        }
    }
    for pair in rows.windows(2) {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
            px(pair[0].head[0]),
            py(pair[0].head[1]),
            px(pair[1].head[0]),
            py(pair[1].head[1]),
            time_color(pair[1].t / t_end)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Simple line plot of one or more series sharing a time axis.
pub fn render_series_svg(title: &str, y_label: &str, t: &[f64], series: &[Vec<f64>]) -> String {
    let (w, h, m) = (600.0, 300.0, 50.0);
    let t_max = t.iter().copied().fold(0.0, f64::max).max(1e-9);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in series.iter().flatten() {
        y_lo = y_lo.min(*v);
        y_hi = y_hi.max(*v);
    }
    if !y_lo.is_finite() {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if y_hi - y_lo < 1e-9 {
        y_hi = y_lo + 1.0;
    }
    let px = |x: f64| m + x / t_max * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{m} {m},{} {},{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">t (s), 0 – {t_max:.1}</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {})" text-anchor="middle">{y_label}: {y_lo:.3} – {y_hi:.3}</text>"#,
        h / 2.0,
        h / 2.0
    );
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];
    for (k, ys) in series.iter().enumerate() {
        let pts: Vec<String> = t
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            palette[k % palette.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Head speed from a logged trajectory, smoothed over `window` seconds.
pub fn head_speed(rows: &[TrajectoryRow], window: f64) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut j = 0;
    for (i, r) in rows.iter().enumerate() {
        while rows[j].t < r.t - window {
            j += 1;
        }
        if i > j {
            let d = (r.head[0] - rows[j].head[0]).hypot(r.head[1] - rows[j].head[1]);
            t.push(r.t);
            v.push(d / (r.t - rows[j].t));
        }
    }
    (t, v)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "undulate", version, about = "Cable-driven undulatory swimmer in post lattices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial and write its outputs.
    Run {
        /// TOML config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `trial.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeded trials over a parameter grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `name=start:step:stop`; repeat for a cross product.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Overrides `trial.seed` as the sweep's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a lattice file.
    Lattice {
        #[arg(long, value_enum, default_value_t = LatticeKind::Regular)]
        mode: LatticeKind,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        spacing: f64,
        #[arg(long, default_value_t = 0.045)]
        radius: f64,
        #[arg(long, default_value_t = 2.0)]
        width: f64,
        #[arg(long, default_value_t = 2.0)]
        height: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a finished trial directory as SVG.
    Replay {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
    /// Print the default config document.
    Defaults,
}

pub fn parse_param(spec: &str) -> Result<ParamAxis> {
    let (name, range) = spec
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("expected name=start:step:stop, got `{spec}`")))?;
    let param = SweepParam::parse(name.trim()).ok_or_else(|| {
        Error::Argument(format!(
            "unknown sweep parameter `{name}` (expected G, A_deg, xi, omega_hz or sigma_m)"
        ))
    })?;
    let parts: Vec<&str> = range.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Argument(format!("bad number `{s}` in `{spec}`")))
    };
    match parts.as_slice() {
        [v] => Ok(ParamAxis { param, values: vec![num(v)?] }),
        [a, s, b] => ParamAxis::range(param, num(a)?, num(s)?, num(b)?),
        _ => Err(Error::Argument(format!("expected start:step:stop in `{spec}`"))),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_)
        | Error::Config { .. }
        | Error::Setup(_)
        | Error::InfeasibleLattice(_)
        | Error::InfeasiblePerturbation { .. }
        | Error::Format(_)
        | Error::Io(_)
        | Error::Query(_) => EXIT_USAGE,
        Error::Infeasible(_) | Error::Numeric(_) | Error::Diverged { .. } => EXIT_INTERNAL,
    }
}

fn load_or_default(config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<i32> {
    let mut doc = load_or_default(config)?;
    if let Some(s) = seed {
        doc.trial.seed = s;
    }
    let cfg = doc.to_trial_config()?;
    let lattice = cfg.lattice.build()?;
    let result = run_trial_in(&cfg, &lattice)?;
    fs::create_dir_all(out)?;
    let joints = cfg.gait.joint_count;
    let summary = TrialSummary { seed: cfg.seed, result };
    fs::write(
        out.join("trial.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))? + "\n",
    )?;
    fs::write(out.join("config.toml"), doc.to_toml())?;
    fs::write(out.join("lattice.txt"), lattice.to_text())?;
    let tr = summary.result.trajectory.clone().unwrap_or_default();
    write_trajectory_csv(&out.join("trajectory.csv"), joints, &tr)?;
    if matches!(cfg.compliance, ComplianceMode::Controller(_)) {
        write_controller_csv(&out.join("controller.csv"), joints, &tr)?;
    }
    let r = &summary.result;
    println!(
        "{}: distance {:.3} m in {:.1} s ({:.4} m/s)",
        r.outcome.as_str(),
        r.distance_traveled,
        r.duration,
        r.mean_speed
    );
    Ok(if r.outcome == Outcome::Diverged { EXIT_INTERNAL } else { EXIT_OK })
}

fn cmd_sweep(
    config: Option<&Path>,
    params: &[String],
    trials: usize,
    seed: Option<u64>,
    workers: usize,
    out: &Path,
) -> Result<i32> {
    let axes = params.iter().map(|p| parse_param(p)).collect::<Result<Vec<_>>>()?;
    let mut doc = load_or_default(config)?;
    if let Some(s) = seed {
        doc.trial.seed = s;
    }
    let base = doc.to_trial_config()?;
    let spec = SweepSpec {
        axes,
        trials_per_cell: trials,
        base,
    };
    let cells = run_sweep(&spec, workers)?;
    fs::create_dir_all(out)?;
    write_sweep_csv(&out.join("sweep.csv"), &cells)?;
    write_summary_csv(&out.join("summary.csv"), &cells)?;
    let grid = survival_grid(&cells, 0.05);
    write_survival_csv(&out.join("survival.csv"), &cells, &grid)?;
    for cell in &cells {
        let label: Vec<String> = cell.values.iter().map(|(p, v)| format!("{}={v}", p.name())).collect();
        if let Some(e) = &cell.error {
            eprintln!("warning: cell {}: {e}", label.join(","));
        } else if let Some(bad) = cell.trials.iter().find_map(|t| t.result.as_ref().err()) {
            eprintln!("warning: cell {}: {bad}", label.join(","));
        }
        match cell.success_rate() {
            Some(rate) => println!("{}: success {:.2}", label.join(" "), rate),
            None => println!("{}: no completed trials", label.join(" ")),
        }
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_lattice(
    mode: LatticeKind,
    sigma: f64,
    seed: u64,
    spacing: f64,
    radius: f64,
    width: f64,
    height: f64,
    out: &Path,
) -> Result<i32> {
    let bounds = Bounds::centered(width, height);
    let lattice = match mode {
        LatticeKind::Regular => build_regular_lattice(spacing, radius, bounds)?,
        LatticeKind::Perturbed => {
            build_perturbed_lattice(&build_regular_lattice(spacing, radius, bounds)?, sigma, seed)?
        }
        other => {
            return Err(Error::Argument(format!(
                "lattice mode {other:?} cannot be generated; use regular or perturbed"
            )))
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, lattice.to_text())?;
    Ok(EXIT_OK)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Argument(format!("missing {}", path.display())))
    }
}

fn cmd_replay(trial: &Path, svg: &Path) -> Result<i32> {
    if !trial.is_dir() {
        return Err(Error::Argument(format!("trial directory {} not found", trial.display())));
    }
    let rows = read_trajectory_csv(&require(trial.join("trajectory.csv"))?)?;
    if rows.is_empty() {
        return Err(Error::Format("trajectory.csv has no samples".into()));
    }
    let lattice = Lattice::from_text(&fs::read_to_string(require(trial.join("lattice.txt"))?)?)?;
    let doc_path = trial.join("config.toml");
    let doc = if doc_path.is_file() {
        RunConfig::load(&doc_path)?
    } else {
        RunConfig::default()
    };
    let geometry = doc.to_trial_config()?.physics.geometry;
    if rows[0].alpha.len() != geometry.joint_count {
        return Err(Error::Format("trajectory joint count does not match the config".into()));
    }
    let body = render_trajectory_svg(&lattice, &geometry, &rows)?;
    if let Some(dir) = svg.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(svg, body)?;

    let stem = svg.with_extension("");
    let (ts, vs) = head_speed(&rows, 1.0);
    fs::write(
        PathBuf::from(format!("{}_speed.svg", stem.display())),
        render_series_svg("Head speed", "m/s", &ts, &[vs]),
    )?;
    let ctrl = trial.join("controller.csv");
    if ctrl.is_file() {
        let (t, g, _) = read_controller_csv(&ctrl)?;
        let joints = g.first().map(Vec::len).unwrap_or(0);
        let mut series: Vec<Vec<f64>> = (0..joints).map(|j| g.iter().map(|row| row[j]).collect()).collect();
        series.push(g.iter().map(|row| row.iter().sum::<f64>() / joints.max(1) as f64).collect());
        fs::write(
            PathBuf::from(format!("{}_G.svg", stem.display())),
            render_series_svg("Joint compliance (last: mean)", "G", &t, &series),
        )?;
    }
    Ok(EXIT_OK)
}

/// Executes parsed arguments, returning the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(config.as_deref(), seed, &out),
        Command::Sweep { config, params, trials, seed, workers, out } => {
            cmd_sweep(config.as_deref(), &params, trials, seed, workers, &out)
        }
        Command::Lattice { mode, sigma, seed, spacing, radius, width, height, out } => {
            cmd_lattice(mode, sigma, seed, spacing, radius, width, height, &out)
        }
        Command::Replay { trial, svg } => cmd_replay(&trial, &svg),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml());
            Ok(EXIT_OK)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}
