//! Trial protocol, termination rules, metrics and seeded sweeps.
//!
//! A trial drops the robot at a random collision-free pose inside the
//! lattice, runs the gait until every link center has left the lattice
//! bounds (traversed), the head stops making progress (jammed), or the time
//! budget runs out. Distance is the straight-line head displacement and the
//! mean speed is distance over duration.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{cable_command, CableCommand};
use crate::controller::{estimate_motor_torque, ControllerConfig, ControllerState};
use crate::dynamics::{body_clearance, PhysicsParams, RobotState, Simulator, StepInfo};
use crate::environment::{build_perturbed_lattice, build_regular_lattice, Bounds, Lattice};
use crate::error::{Error, Result};
use crate::gait::GaitParams;

/// How joint compliance is chosen during a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComplianceMode {
    /// The same G on every joint for the whole trial.
    Fixed(f64),
    /// Per-joint G from torque feedback.
    Controller(ControllerConfig),
}

/// Obstacle field of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatticeSpec {
    Empty { bounds: Bounds },
    Regular { spacing: f64, radius: f64, bounds: Bounds },
    Perturbed { spacing: f64, radius: f64, bounds: Bounds, sigma: f64, seed: u64 },
    File { path: PathBuf },
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec::Regular {
            spacing: 0.25,
            radius: 0.045,
            bounds: Bounds::centered(2.0, 2.0),
        }
    }
}

impl LatticeSpec {
    pub fn build(&self) -> Result<Lattice> {
        match self {
            LatticeSpec::Empty { bounds } => Ok(Lattice::empty(*bounds)),
            LatticeSpec::Regular { spacing, radius, bounds } => {
                build_regular_lattice(*spacing, *radius, *bounds)
            }
            LatticeSpec::Perturbed { spacing, radius, bounds, sigma, seed } => {
                let base = build_regular_lattice(*spacing, *radius, *bounds)?;
                build_perturbed_lattice(&base, *sigma, *seed)
            }
            LatticeSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                Lattice::from_text(&text)
            }
        }
    }

    /// Replaces the perturbation magnitude, turning a regular spec into a perturbed one.
    pub fn with_sigma(&self, sigma: f64, seed: u64) -> Result<LatticeSpec> {
        match self {
            LatticeSpec::Regular { spacing, radius, bounds }
            | LatticeSpec::Perturbed { spacing, radius, bounds, .. } => Ok(LatticeSpec::Perturbed {
                spacing: *spacing,
                radius: *radius,
                bounds: *bounds,
                sigma,
                seed,
            }),
            _ => Err(Error::Argument("sigma sweeps need a regular or perturbed lattice".into())),
        }
    }
}

/// Where the robot starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartPose {
    /// Uniform position inside the bounds inset by the margin, uniform heading.
    Random { margin: f64 },
    /// Head link center and heading.
    Fixed([f64; 3]),
}

impl Default for StartPose {
    fn default() -> Self {
        StartPose::Random { margin: 0.3 }
    }
}

/// Everything that defines one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub gait: GaitParams,
    pub compliance: ComplianceMode,
    pub lattice: LatticeSpec,
    pub physics: PhysicsParams,
    pub seed: u64,
    pub max_duration: f64,
    /// Jam window in undulation periods.
    pub jam_window_periods: f64,
    /// Minimum head displacement over the jam window (m).
    pub jam_displacement_eps: f64,
    /// Cable command and controller rate (Hz).
    pub command_rate: f64,
    /// Trajectory sampling rate (Hz).
    pub log_rate: f64,
    pub start: StartPose,
    /// Holds the commands issued at this time for the rest of the trial.
    pub freeze_commands_at: Option<f64>,
    pub record_trajectory: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        let physics = PhysicsParams::default();
        TrialConfig {
            gait: GaitParams {
                amplitude: 55f64.to_radians(),
                spatial_freq: 0.6,
                temporal_freq: 0.05,
                joint_count: physics.geometry.joint_count,
            },
            compliance: ComplianceMode::Fixed(1.0),
            lattice: LatticeSpec::default(),
            physics,
            seed: 0,
            max_duration: 600.0,
            jam_window_periods: 3.0,
            jam_displacement_eps: 0.02,
            command_rate: 100.0,
            log_rate: 30.0,
            start: StartPose::default(),
            freeze_commands_at: None,
            record_trajectory: true,
        }
    }
}

impl TrialConfig {
    /// Jam window in seconds.
    pub fn jam_window(&self) -> f64 {
        self.jam_window_periods / self.gait.temporal_freq
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.gait.validate(self.physics.geometry.mech_limit)?;
        if self.gait.joint_count != self.physics.geometry.joint_count {
            return Err(Error::config(
                "gait.N",
                format!(
                    "gait has {} joints, robot has {}",
                    self.gait.joint_count, self.physics.geometry.joint_count
                ),
            ));
        }
        match &self.compliance {
            ComplianceMode::Fixed(g) if !(*g >= 0.0 && *g <= crate::actuation::G_MAX) => {
                return Err(Error::config(
                    "compliance.G",
                    format!("G must lie in [0, {}], got {g}", crate::actuation::G_MAX),
                ));
            }
            ComplianceMode::Controller(c) => c.validate()?,
            _ => {}
        }
        if !(self.max_duration > 0.0) {
            return Err(Error::config("trial.max_duration_s", "must be positive"));
        }
        if !(self.jam_window_periods > 0.0) {
            return Err(Error::config("trial.jam_window_periods", "must be positive"));
        }
        if !(self.jam_displacement_eps >= 0.0) {
            return Err(Error::config("trial.jam_eps_m", "must be non-negative"));
        }
        let steps = 1.0 / (self.command_rate * self.physics.dt);
        if !(self.command_rate > 0.0) || (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
            return Err(Error::config(
                "trial.command_rate_hz",
                "command period must be a whole number of physics steps",
            ));
        }
        if !(self.log_rate > 0.0) {
            return Err(Error::config("trial.log_rate_hz", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Traversed,
    Jammed,
    Timeout,
    Diverged,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Traversed => "traversed",
            Outcome::Jammed => "jammed",
            Outcome::Timeout => "timeout",
            Outcome::Diverged => "diverged",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        match s {
            "traversed" => Some(Outcome::Traversed),
            "jammed" => Some(Outcome::Jammed),
            "timeout" => Some(Outcome::Timeout),
            "diverged" => Some(Outcome::Diverged),
            _ => None,
        }
    }

    /// Outcomes that end the trial inside the lattice without escaping.
    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Jammed | Outcome::Diverged)
    }
}

/// 30 Hz body sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub head: [f64; 3],
    pub alpha: Vec<f64>,
    pub contact_count: usize,
}

/// Controller sample at the command rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSample {
    pub t: f64,
    pub g: Vec<f64>,
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub controller: Vec<ControllerSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    pub distance_traveled: f64,
    pub duration: f64,
    pub mean_speed: f64,
    pub start_pose: [f64; 3],
    pub end_pose: [f64; 3],
    /// Any post contact during the trial.
    pub contact_encountered: bool,
    pub max_penetration: f64,
    /// Largest drag power seen (W); never positive.
    pub max_drag_power: f64,
    /// Largest joint-angle magnitude seen (rad).
    pub max_joint_angle: f64,
    /// Largest per-joint G reached.
    pub max_g: f64,
    /// Largest estimated servo torque (N m).
    pub max_motor_torque: f64,
    /// Longest stretch any single servo spent at or above its stall torque (s).
    pub max_stall_duration: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// Deterministic 64-bit mixer (SplitMix64 finalizer).
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in sweep cell `cell`.
pub fn trial_seed(base_seed: u64, cell: u64, trial: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let a = mix64(base_seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ cell.wrapping_add(GOLDEN).wrapping_mul(3));
    mix64(b ^ trial.wrapping_add(GOLDEN).wrapping_mul(5))
}

const MAX_START_ATTEMPTS: usize = 10_000;
/// Free gap required around the body at the start (m).
const START_CLEARANCE: f64 = 0.005;

/// Samples a collision-free start state for `cfg`.
pub fn sample_start(cfg: &TrialConfig, lattice: &Lattice) -> Result<RobotState> {
    let profile = cfg.gait.suggested_profile(0.0);
    let geom = &cfg.physics.geometry;
    match cfg.start {
        StartPose::Fixed(pose) => {
            let s = RobotState::at_rest(pose, &profile);
            if !lattice.is_empty() && body_clearance(&s, geom, lattice) < 0.0 {
                return Err(Error::Setup("fixed start pose overlaps a post".into()));
            }
            Ok(s)
        }
        StartPose::Random { margin } => {
            let area = lattice.bounds.inset(margin);
            if !(area.max_x > area.min_x && area.max_y > area.min_y) {
                return Err(Error::Setup(format!("start margin {margin} m leaves no room")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..MAX_START_ATTEMPTS {
                let pose = [
                    rng.random_range(area.min_x..area.max_x),
                    rng.random_range(area.min_y..area.max_y),
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                ];
                let s = RobotState::at_rest(pose, &profile);
                if lattice.is_empty() || body_clearance(&s, geom, lattice) > START_CLEARANCE {
                    return Ok(s);
                }
            }
            Err(Error::Setup(format!(
                "no collision-free start pose after {MAX_START_ATTEMPTS} samples"
            )))
        }
    }
}

fn all_links_outside(sim: &Simulator<'_>) -> bool {
    let b = sim.lattice().bounds;
    sim.link_poses().iter().all(|p| !b.contains(p.center))
}

/// Runs one trial, building the lattice from `cfg.lattice`.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult> {
    let lattice = cfg.lattice.build()?;
    run_trial_in(cfg, &lattice)
}

/// Runs one trial in an already built lattice.
pub fn run_trial_in(cfg: &TrialConfig, lattice: &Lattice) -> Result<TrialResult> {
    cfg.validate()?;
    let start = sample_start(cfg, lattice)?;
    let start_pose = start.head_pose();
    let geom = cfg.physics.geometry;
    let joints = geom.joint_count;
    let dt = cfg.physics.dt;
    let steps_per_tick = (1.0 / (cfg.command_rate * dt)).round() as u64;
    let tick_dt = steps_per_tick as f64 * dt;
    let max_steps = (cfg.max_duration / dt).round() as u64;
    let jam_window = cfg.jam_window();

    let mut sim = Simulator::new(cfg.physics, lattice, start)?;
    let mut controller = match &cfg.compliance {
        ComplianceMode::Controller(c) => Some(ControllerState::new(c.clone(), joints)?),
        ComplianceMode::Fixed(_) => None,
    };
    let mut g_levels = match &cfg.compliance {
        ComplianceMode::Fixed(g) => vec![*g; joints],
        ComplianceMode::Controller(c) => vec![c.base_g; joints],
    };

    let mut result = TrialResult {
        outcome: Outcome::Timeout,
        distance_traveled: 0.0,
        duration: 0.0,
        mean_speed: 0.0,
        start_pose,
        end_pose: start_pose,
        contact_encountered: false,
        max_penetration: 0.0,
        max_drag_power: 0.0,
        max_joint_angle: 0.0,
        max_g: g_levels.iter().copied().fold(0.0, f64::max),
        max_motor_torque: 0.0,
        max_stall_duration: 0.0,
        trajectory: None,
    };
    let mut trajectory = cfg.record_trajectory.then(Trajectory::default);

    let mut profile = vec![0.0; joints];
    let mut cmds: Vec<CableCommand> = Vec::with_capacity(joints);
    let mut tension_sum = vec![[0.0f64; 2]; joints];
    let mut torques = vec![0.0; joints];
    let mut stall_time = vec![0.0; joints];
    let stall_torque = match &cfg.compliance {
        ComplianceMode::Controller(c) => c.stall_torque,
        ComplianceMode::Fixed(_) => crate::controller::DEFAULT_STALL_TORQUE,
    };
    let mut info = StepInfo::default();
    let mut history: VecDeque<(f64, [f64; 2])> = VecDeque::new();
    let mut tick_contacts = 0usize;
    let mut next_log = 0u64;
    let log_every = 1.0 / cfg.log_rate;

    let mut step_index = 0u64;
    let outcome = loop {
        let t = step_index as f64 * dt;

        if step_index % steps_per_tick == 0 {
            if all_links_outside(&sim) {
                break Outcome::Traversed;
            }
            let head = sim.state().head_pose();
            history.push_back((t, [head[0], head[1]]));
            while history.len() >= 2 && t - history[1].0 >= jam_window - 1e-9 {
                history.pop_front();
            }
            if let Some(&(t0, p0)) = history.front() {
                if t - t0 >= jam_window - 1e-9
                    && (head[0] - p0[0]).hypot(head[1] - p0[1]) < cfg.jam_displacement_eps
                {
                    break Outcome::Jammed;
                }
            }
            if step_index >= max_steps {
                break Outcome::Timeout;
            }

            // Servo load over the last command period.
            for (tau, sums) in torques.iter_mut().zip(&mut tension_sum) {
                let mean = [sums[0] / steps_per_tick as f64, sums[1] / steps_per_tick as f64];
                *tau = estimate_motor_torque(mean[0], mean[1], geom.pulley_radius);
                *sums = [0.0; 2];
                result.max_motor_torque = result.max_motor_torque.max(*tau);
            }
            if step_index > 0 {
                for (st, &tau) in stall_time.iter_mut().zip(&torques) {
                    *st = if tau >= stall_torque { *st + tick_dt } else { 0.0 };
                    result.max_stall_duration = result.max_stall_duration.max(*st);
                }
            }
            if let Some(ctrl) = controller.as_mut() {
                if step_index > 0 {
                    g_levels.copy_from_slice(ctrl.update(&torques, tick_dt)?);
                }
                result.max_g = g_levels.iter().copied().fold(result.max_g, f64::max);
            }

            let command_time = match cfg.freeze_commands_at {
                Some(tf) if t > tf => tf,
                _ => t,
            };
            cfg.gait.fill_profile(command_time, &mut profile);
            cmds.clear();
            cmds.extend(
                profile
                    .iter()
                    .zip(&g_levels)
                    .map(|(&a, &g)| cable_command(a, g, cfg.gait.amplitude, &geom)),
            );

            if let Some(tr) = trajectory.as_mut() {
                if controller.is_some() {
                    tr.controller.push(ControllerSample {
                        t,
                        g: g_levels.clone(),
                        tau: torques.clone(),
                    });
                }
            }
            tick_contacts = 0;
        }

        if let Some(tr) = trajectory.as_mut() {
            if t + 1e-9 >= next_log as f64 * log_every {
                let s = sim.state();
                tr.samples.push(TrajectorySample {
                    t,
                    head: s.head_pose(),
                    alpha: s.joint_angles().to_vec(),
                    contact_count: s.contact_flags.iter().filter(|&&c| c).count(),
                });
                next_log += 1;
            }
        }

        match sim.step_into(&cmds, &mut info) {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => break Outcome::Diverged,
            Err(e) => return Err(e),
        }
        step_index += 1;
        for (sums, load) in tension_sum.iter_mut().zip(&info.joint_loads) {
            sums[0] += load.tension_left;
            sums[1] += load.tension_right;
        }
        tick_contacts = tick_contacts.max(info.contact_count);
        if info.contact_count > 0 {
            result.contact_encountered = true;
        }
        result.max_penetration = result.max_penetration.max(info.max_penetration);
        result.max_drag_power = result.max_drag_power.max(info.drag_power);
        for a in sim.state().joint_angles() {
            result.max_joint_angle = result.max_joint_angle.max(a.abs());
        }
    };

    let end = sim.state();
    let end_pose = end.head_pose();
    result.outcome = outcome;
    result.end_pose = end_pose;
    result.duration = step_index as f64 * dt;
    result.distance_traveled = if end.is_finite() {
        (end_pose[0] - start_pose[0]).hypot(end_pose[1] - start_pose[1])
    } else {
        0.0
    };
    result.mean_speed = if result.duration > 0.0 {
        result.distance_traveled / result.duration
    } else {
        0.0
    };
    result.trajectory = trajectory;
    Ok(result)
}

/// Fraction of trials whose traveled distance reaches each distance in `grid`.
///
/// `jammed` must pair one flag with every distance; it is validated but the
/// curve itself counts every trial, escaped or not, by its distance alone.
pub fn survival_function(distances: &[f64], jammed: &[bool], grid: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::Argument("survival function needs at least one trial".into()));
    }
    if distances.len() != jammed.len() {
        return Err(Error::Argument(format!(
            "{} distances but {} jam flags",
            distances.len(),
            jammed.len()
        )));
    }
    if distances.iter().chain(grid).any(|d| d.is_nan()) {
        return Err(Error::Argument("survival function inputs must not be NaN".into()));
    }
    let total = distances.len() as f64;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(grid
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                return 1.0;
            }
            let short = sorted.partition_point(|&x| x < d);
            (total - short as f64) / total
        })
        .collect())
}

/// Fraction of results that traversed the lattice.
pub fn success_rate(results: &[TrialResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Argument("success rate of an empty set".into()));
    }
    let ok = results.iter().filter(|r| r.outcome == Outcome::Traversed).count();
    Ok(ok as f64 / results.len() as f64)
}

/// Sample mean and sample standard deviation of the trial mean speeds.
pub fn speed_stats(results: &[TrialResult]) -> Result<(f64, f64)> {
    let speeds: Vec<f64> = results.iter().map(|r| r.mean_speed).collect();
    mean_std(&speeds)
}

pub(crate) fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Argument("speed statistics of an empty set".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    G,
    AmplitudeDeg,
    Xi,
    OmegaHz,
    SigmaM,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::G => "G",
            SweepParam::AmplitudeDeg => "A_deg",
            SweepParam::Xi => "xi",
            SweepParam::OmegaHz => "omega_hz",
            SweepParam::SigmaM => "sigma_m",
        }
    }

    pub fn parse(name: &str) -> Option<SweepParam> {
        match name {
            "G" => Some(SweepParam::G),
            "A_deg" => Some(SweepParam::AmplitudeDeg),
            "xi" => Some(SweepParam::Xi),
            "omega_hz" => Some(SweepParam::OmegaHz),
            "sigma_m" => Some(SweepParam::SigmaM),
            _ => None,
        }
    }
}

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl ParamAxis {
    /// `start:step:stop`, inclusive of `stop` up to rounding.
    pub fn range(param: SweepParam, start: f64, step: f64, stop: f64) -> Result<Self> {
        if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::Argument(format!(
                "bad range {start}:{step}:{stop} for {}",
                param.name()
            )));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Round to kill accumulated binary noise (0.1 + 0.2 and friends).
        let values = (0..count)
            .map(|k| {
                let v = start + k as f64 * step;
                (v * 1e9).round() / 1e9
            })
            .collect();
        Ok(ParamAxis { param, values })
    }
}

/// Cross product of the axes, first axis varying slowest.
pub fn grid_cells(axes: &[ParamAxis]) -> Vec<Vec<(SweepParam, f64)>> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for &v in &axis.values {
                let mut c = cell.clone();
                c.push((axis.param, v));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

/// Applies one cell's parameter values to a base trial config.
pub fn apply_cell(base: &TrialConfig, cell: &[(SweepParam, f64)]) -> Result<TrialConfig> {
    let mut cfg = base.clone();
    for &(param, v) in cell {
        match param {
            SweepParam::G => cfg.compliance = ComplianceMode::Fixed(v),
            SweepParam::AmplitudeDeg => cfg.gait.amplitude = v.to_radians(),
            SweepParam::Xi => cfg.gait.spatial_freq = v,
            SweepParam::OmegaHz => cfg.gait.temporal_freq = v,
            SweepParam::SigmaM => {
                let seed = match &cfg.lattice {
                    LatticeSpec::Perturbed { seed, .. } => *seed,
                    _ => base.seed,
                };
                cfg.lattice = cfg.lattice.with_sigma(v, seed)?;
            }
        }
    }
    Ok(cfg)
}

/// One trial row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub result: std::result::Result<TrialResult, String>,
}

/// All trials of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub values: Vec<(SweepParam, f64)>,
    /// Setup problem shared by the whole cell (e.g. an infeasible lattice).
    pub error: Option<String>,
    pub trials: Vec<TrialRecord>,
}

impl CellResult {
    pub fn completed(&self) -> Vec<TrialResult> {
        self.trials
            .iter()
            .filter_map(|t| t.result.as_ref().ok().cloned())
            .collect()
    }

    pub fn success_rate(&self) -> Option<f64> {
        success_rate(&self.completed()).ok()
    }

    pub fn speed_stats(&self) -> Option<(f64, f64)> {
        speed_stats(&self.completed()).ok()
    }

    pub fn survival(&self, grid: &[f64]) -> Option<Vec<f64>> {
        let done = self.completed();
        let d: Vec<f64> = done.iter().map(|r| r.distance_traveled).collect();
        let j: Vec<bool> = done.iter().map(|r| r.outcome.is_failure()).collect();
        survival_function(&d, &j, grid).ok()
    }

    pub fn value(&self, param: SweepParam) -> Option<f64> {
        self.values.iter().find(|(p, _)| *p == param).map(|(_, v)| *v)
    }
}

/// A parameter sweep over a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<ParamAxis>,
    pub trials_per_cell: usize,
    pub base: TrialConfig,
}

/// Runs every trial of every cell on `workers` threads (0 = rayon default).
///
/// Results are ordered by cell and trial index whatever the thread count.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<CellResult>> {
    if spec.trials_per_cell == 0 {
        return Err(Error::Argument("trials per cell must be at least 1".into()));
    }
    if spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Argument("every sweep axis needs at least one value".into()));
    }
    let cells = grid_cells(&spec.axes);
    let prepared: Vec<(TrialConfig, std::result::Result<Lattice, String>)> = cells
        .iter()
        .map(|cell| match apply_cell(&spec.base, cell) {
            Ok(cfg) => {
                let lat = cfg.lattice.build().map_err(|e| e.to_string());
                (cfg, lat)
            }
            Err(e) => (spec.base.clone(), Err(e.to_string())),
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let run_job = |&(c, t): &(usize, usize)| -> TrialRecord {
        let seed = trial_seed(spec.base.seed, c as u64, t as u64);
        let (cfg, lat) = &prepared[c];
        let result = match lat {
            Ok(lattice) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                cfg.record_trajectory = false;
                run_trial_in(&cfg, lattice).map_err(|e| e.to_string())
            }
            Err(e) => Err(e.clone()),
        };
        TrialRecord {
            trial_id: t,
            seed,
            result,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Setup(e.to_string()))?;
    let records: Vec<TrialRecord> = pool.install(|| jobs.par_iter().map(run_job).collect());

    let mut out: Vec<CellResult> = cells
        .into_iter()
        .enumerate()
        .map(|(index, values)| CellResult {
            index,
            values,
            error: prepared[index].1.as_ref().err().cloned(),
            trials: Vec::with_capacity(spec.trials_per_cell),
        })
        .collect();
    for (rec, &(c, _)) in records.into_iter().zip(&jobs) {
        out[c].trials.push(rec);
    }
    Ok(out)
}

/// Mean head displacement per cycle of the rigid (G = 0) gait in open water,
/// averaged over `cycles` cycles that follow one discarded start-up cycle.
pub fn net_cycle_displacement(
    gait: &GaitParams,
    physics: &PhysicsParams,
    cycles: u32,
) -> Result<[f64; 2]> {
    if cycles == 0 || !(gait.temporal_freq > 0.0) {
        return Err(Error::Argument("need at least one cycle of a moving gait".into()));
    }
    let period = 1.0 / gait.temporal_freq;
    // The run is deterministic, so the shorter run is a prefix of the longer.
    let (_, settled) = open_water_run(gait, physics, period)?;
    let (_, end) = open_water_run(gait, physics, (cycles + 1) as f64 * period)?;
    let n = cycles as f64;
    Ok([(end[0] - settled[0]) / n, (end[1] - settled[1]) / n])
}

/// Runs the rigid gait in open water for `duration` seconds from a head-at-origin,
/// heading-zero start; returns start and end head poses.
pub fn open_water_run(
    gait: &GaitParams,
    physics: &PhysicsParams,
    duration: f64,
) -> Result<([f64; 3], [f64; 3])> {
    physics.validate()?;
    let geom = physics.geometry;
    let lattice = Lattice::empty(Bounds::centered(1e3, 1e3));
    let profile = gait.suggested_profile(0.0);
    let state = RobotState::at_rest([0.0, 0.0, 0.0], &profile);
    let start = state.head_pose();
    let mut sim = Simulator::new(*physics, &lattice, state)?;
    let steps_per_tick = ((0.01 / physics.dt).round() as u64).max(1);
    let steps = (duration / physics.dt).round() as u64;
    let mut cmds = Vec::with_capacity(geom.joint_count);
    let mut profile = vec![0.0; geom.joint_count];
    let mut info = StepInfo::default();
    for k in 0..steps {
        if k % steps_per_tick == 0 {
            gait.fill_profile(k as f64 * physics.dt, &mut profile);
            cmds.clear();
            cmds.extend(profile.iter().map(|&a| cable_command(a, 0.0, gait.amplitude, &geom)));
        }
        sim.step_into(&cmds, &mut info)?;
    }
    Ok((start, sim.state().head_pose()))
}
