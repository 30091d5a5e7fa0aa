//! Planar multibody dynamics of the swimmer.
//!
//! The chain of `N + 1` links is described in reduced coordinates
//! `q = (x, y, theta, alpha_1 .. alpha_N)`: the head link's center and
//! heading followed by the joint angles. Link `k` has heading
//! `phi_k = theta + alpha_1 + ... + alpha_k` and the links hang behind the
//! head, so joint `j` sits at the rear end of link `j - 1`.
//!
//! Each link carries its own mass plus a normal added mass, which only
//! augments the link's inertia: the entrained fluid adds no momentum flux
//! of its own, so thrust comes from drag anisotropy alone. Loads are
//! quadratic anisotropic drag, a weak isotropic linear drag, cable
//! penalty torques on the joints and penalty contact with the posts.
//! Integration is semi-implicit Euler.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actuation::{self, CableCommand, CableParams, JointLoad, RobotGeometry};
use crate::environment::Lattice;
use crate::error::{Error, Result};

/// Fluid model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroParams {
    pub fluid_density: f64,
    pub drag_coef_normal: f64,
    pub drag_coef_tangential: f64,
    pub rotational_drag_coef: f64,
    /// Normal added mass as a fraction of the displaced strip mass.
    pub added_mass_coef_normal: f64,
    /// Isotropic linear drag per unit link length (N s / m^2).
    pub linear_drag: f64,
}

impl Default for HydroParams {
    fn default() -> Self {
        HydroParams {
            fluid_density: 1000.0,
            drag_coef_normal: 2.0,
            drag_coef_tangential: 0.2,
            rotational_drag_coef: 2.0,
            added_mass_coef_normal: 1.0,
            // Viscous skin friction; without it quadratic drag alone lets a
            // coasting body creep on for minutes.
            linear_drag: 0.2,
        }
    }
}

impl HydroParams {
    /// Isotropic copy used by the anisotropy diagnostic.
    pub fn isotropic(&self) -> Self {
        HydroParams {
            drag_coef_normal: self.drag_coef_tangential,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fluid_density > 0.0) {
            return Err(Error::config("hydro.fluid_density_kgm3", "must be positive"));
        }
        if !(self.drag_coef_tangential > 0.0) {
            return Err(Error::config("hydro.Ct", "tangential drag coefficient must be positive"));
        }
        if !(self.drag_coef_normal >= self.drag_coef_tangential) {
            return Err(Error::config(
                "hydro.Cn",
                format!(
                    "anisotropy violated: normal drag {} is below tangential drag {}; \
                     undulatory thrust needs Cn > Ct",
                    self.drag_coef_normal, self.drag_coef_tangential
                ),
            ));
        }
        if !(self.rotational_drag_coef >= 0.0) {
            return Err(Error::config("hydro.C_rot", "must be non-negative"));
        }
        if !(self.added_mass_coef_normal >= 0.0) {
            return Err(Error::config("hydro.added_mass_normal", "must be non-negative"));
        }
        if !(self.linear_drag >= 0.0) {
            return Err(Error::config("hydro.linear_drag_Nsm2", "must be non-negative"));
        }
        Ok(())
    }
}

/// Post contact model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub normal_stiffness: f64,
    pub normal_damping: f64,
    pub friction_mu: f64,
    /// Velocity scale of the smoothed Coulomb law (m/s).
    pub slip_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            normal_stiffness: 2.0e5,
            normal_damping: 30.0,
            friction_mu: 0.1,
            slip_velocity: 1e-3,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.normal_stiffness > 0.0) {
            return Err(Error::config("contact.stiffness_Nm", "must be positive"));
        }
        if !(self.normal_damping >= 0.0) {
            return Err(Error::config("contact.damping_Nsm", "must be non-negative"));
        }
        if !(self.friction_mu >= 0.0) {
            return Err(Error::config("contact.mu", "must be non-negative"));
        }
        if !(self.slip_velocity > 0.0) {
            return Err(Error::config("contact.slip_velocity_mps", "must be positive"));
        }
        Ok(())
    }
}

/// Largest accepted physics step (s).
pub const DT_MAX: f64 = 2e-3;

/// Gauss-Seidel sweeps over the joint stops per step.
const STOP_ITERATIONS: usize = 8;

/// Overshoot past a stop left to the final clamp (rad).
const STOP_TOLERANCE: f64 = 1e-9;

/// Everything the integrator needs besides state and commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub geometry: RobotGeometry,
    pub hydro: HydroParams,
    pub contact: ContactParams,
    pub cable: CableParams,
    pub dt: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            geometry: RobotGeometry::default(),
            hydro: HydroParams::default(),
            contact: ContactParams::default(),
            cable: CableParams::default(),
            dt: 1e-3,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.hydro.validate()?;
        self.contact.validate()?;
        if !(self.cable.stiffness > 0.0 && self.cable.damping >= 0.0 && self.cable.max_tension > 0.0) {
            return Err(Error::config("robot.cable_stiffness_Nm", "cable penalty must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= DT_MAX) {
            return Err(Error::config(
                "trial.dt_s",
                format!("time step {} outside (0, {DT_MAX}]", self.dt),
            ));
        }
        Ok(())
    }
}

/// Configuration and velocities of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub time: f64,
    /// `(x, y, theta, alpha_1 .. alpha_N)`.
    pub q: Vec<f64>,
    /// Time derivative of `q`.
    pub qd: Vec<f64>,
    pub contact_flags: Vec<bool>,
}

impl RobotState {
    /// A chain at rest.
    pub fn at_rest(head: [f64; 3], joint_angles: &[f64]) -> Self {
        let mut q = Vec::with_capacity(3 + joint_angles.len());
        q.extend_from_slice(&head);
        q.extend_from_slice(joint_angles);
        let n = q.len();
        RobotState {
            time: 0.0,
            q,
            qd: vec![0.0; n],
            contact_flags: vec![false; joint_angles.len() + 1],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.q.len() - 3
    }

    pub fn head_pose(&self) -> [f64; 3] {
        [self.q[0], self.q[1], self.q[2]]
    }

    pub fn joint_angles(&self) -> &[f64] {
        &self.q[3..]
    }

    pub fn joint_rates(&self) -> &[f64] {
        &self.qd[3..]
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }

    pub fn validate(&self, geom: &RobotGeometry) -> Result<()> {
        if self.joint_count() != geom.joint_count || self.qd.len() != self.q.len() {
            return Err(Error::Argument(format!(
                "state has {} joints, geometry {}",
                self.joint_count(),
                geom.joint_count
            )));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("state contains non-finite values".into()));
        }
        if let Some(a) = self.joint_angles().iter().find(|a| a.abs() > geom.mech_limit + 1e-9) {
            return Err(Error::Argument(format!(
                "joint angle {:.3} deg beyond the mechanical limit",
                a.to_degrees()
            )));
        }
        Ok(())
    }
}

/// World pose of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose {
    pub center: [f64; 2],
    pub heading: f64,
}

/// Diagnostics of one integration step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Power of all drag loads (W), never positive.
    pub drag_power: f64,
    pub contact_count: usize,
    /// Deepest post penetration this step (m).
    pub max_penetration: f64,
    /// Smallest contact normal force this step (N); infinite without contact.
    pub min_normal_force: f64,
    pub joint_loads: Vec<JointLoad>,
}

/// Drag wrench on one link: force at the center and torque about it.
///
/// `tangent` is the unit link axis; `velocity` and `omega` are the link's
/// center velocity and angular rate; `length` and `draft` size the wetted strip.
pub fn drag_wrench(
    tangent: [f64; 2],
    velocity: [f64; 2],
    omega: f64,
    hydro: &HydroParams,
    length: f64,
    draft: f64,
) -> ([f64; 2], f64) {
    let normal = [-tangent[1], tangent[0]];
    let vt = velocity[0] * tangent[0] + velocity[1] * tangent[1];
    let vn = velocity[0] * normal[0] + velocity[1] * normal[1];
    let q = 0.5 * hydro.fluid_density * length * draft;
    let ft = -q * hydro.drag_coef_tangential * vt.abs() * vt;
    let fn_ = -q * hydro.drag_coef_normal * vn.abs() * vn;
    let lin = hydro.linear_drag * length;
    let force = [
        ft * tangent[0] + fn_ * normal[0] - lin * velocity[0],
        ft * tangent[1] + fn_ * normal[1] - lin * velocity[1],
    ];
    // Normal velocity s * omega along the strip, integrated over s in [-l/2, l/2].
    let rot_quad = 0.5 * hydro.fluid_density * hydro.rotational_drag_coef * draft * length.powi(4) / 32.0;
    let rot_lin = hydro.linear_drag * length.powi(3) / 12.0;
    let torque = -rot_quad * omega.abs() * omega - rot_lin * omega;
    (force, torque)
}

/// Load on one link from a single post contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostContact {
    pub link: usize,
    pub post: usize,
    pub penetration: f64,
    pub normal_force: f64,
    pub tangential_force: f64,
    /// World contact point on the link surface.
    pub point: [f64; 2],
    /// Unit normal from the post toward the link.
    pub normal: [f64; 2],
}

/// Penalty contact between a capsule link and a circular post.
///
/// Returns `None` when they do not overlap. `center`, `tangent`, `velocity`
/// and `omega` describe the link; `half_length` and `radius` its capsule.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn capsule_post_contact(
    center: [f64; 2],
    tangent: [f64; 2],
    velocity: [f64; 2],
    omega: f64,
    half_length: f64,
    radius: f64,
    post: [f64; 2],
    post_radius: f64,
    cp: &ContactParams,
) -> Option<([f64; 2], f64, f64, f64, [f64; 2], [f64; 2])> {
    let rel = [post[0] - center[0], post[1] - center[1]];
    let s = (rel[0] * tangent[0] + rel[1] * tangent[1]).clamp(-half_length, half_length);
    let axis = [center[0] + s * tangent[0], center[1] + s * tangent[1]];
    let d = [axis[0] - post[0], axis[1] - post[1]];
    let dist = d[0].hypot(d[1]);
    let depth = post_radius + radius - dist;
    if depth <= 0.0 || dist <= 1e-12 {
        return None;
    }
    let n = [d[0] / dist, d[1] / dist];
    let point = [axis[0] - radius * n[0], axis[1] - radius * n[1]];
    let arm = [point[0] - center[0], point[1] - center[1]];
    let v = [velocity[0] - omega * arm[1], velocity[1] + omega * arm[0]];
    let vn = v[0] * n[0] + v[1] * n[1];
    let t = [-n[1], n[0]];
    let vt = v[0] * t[0] + v[1] * t[1];
    let normal_force = cp.normal_stiffness * depth + cp.normal_damping * (-vn).max(0.0);
    let tangential = -cp.friction_mu * normal_force * vt / vt.hypot(cp.slip_velocity);
    let f = [
        normal_force * n[0] + tangential * t[0],
        normal_force * n[1] + tangential * t[1],
    ];
    let torque = arm[0] * f[1] - arm[1] * f[0];
    Some((f, torque, depth, normal_force, point, n))
}

/// Per-link kinematic quantities, recomputed every step.
#[derive(Debug, Clone)]
struct Kinematics {
    n: usize,
    centers: Vec<[f64; 2]>,
    headings: Vec<f64>,
    tangents: Vec<[f64; 2]>,
    velocities: Vec<[f64; 2]>,
    omegas: Vec<f64>,
    /// Centripetal part of each center's acceleration.
    bias: Vec<[f64; 2]>,
    /// `d center_k / d q_i`, flat `[k * n + i]`.
    jac: Vec<[f64; 2]>,
}

impl Kinematics {
    fn new(joints: usize) -> Self {
        let links = joints + 1;
        let n = joints + 3;
        Kinematics {
            n,
            centers: vec![[0.0; 2]; links],
            headings: vec![0.0; links],
            tangents: vec![[0.0; 2]; links],
            velocities: vec![[0.0; 2]; links],
            omegas: vec![0.0; links],
            bias: vec![[0.0; 2]; links],
            jac: vec![[0.0; 2]; links * n],
        }
    }

    /// `d phi_k / d q_i` is 1 for the heading and the first `k` joints.
    #[inline]
    fn angular_jac(k: usize, i: usize) -> f64 {
        if i >= 2 && i <= 2 + k {
            1.0
        } else {
            0.0
        }
    }

    fn update(&mut self, q: &[f64], qd: &[f64], link_length: f64) {
        let n = self.n;
        let links = self.centers.len();
        let half = 0.5 * link_length;
        let mut phi = q[2];
        let mut phid = qd[2];
        for k in 0..links {
            if k > 0 {
                phi += q[2 + k];
                phid += qd[2 + k];
            }
            self.headings[k] = phi;
            self.omegas[k] = phid;
            self.tangents[k] = [phi.cos(), phi.sin()];
        }
        self.centers[0] = [q[0], q[1]];
        self.velocities[0] = [qd[0], qd[1]];
        self.bias[0] = [0.0; 2];
        for i in 0..n {
            self.jac[i] = [0.0; 2];
        }
        self.jac[0] = [1.0, 0.0];
        self.jac[1] = [0.0, 1.0];
        for k in 1..links {
            let (ua, ub) = (self.tangents[k - 1], self.tangents[k]);
            let (wa, wb) = (self.omegas[k - 1], self.omegas[k]);
            let prev = self.centers[k - 1];
            self.centers[k] = [
                prev[0] - half * (ua[0] + ub[0]),
                prev[1] - half * (ua[1] + ub[1]),
            ];
            // d/dt of -h u = -h w u_perp, with u_perp = (-u_y, u_x).
            let pv = self.velocities[k - 1];
            self.velocities[k] = [
                pv[0] + half * (wa * ua[1] + wb * ub[1]),
                pv[1] - half * (wa * ua[0] + wb * ub[0]),
            ];
            let pb = self.bias[k - 1];
            self.bias[k] = [
                pb[0] + half * (wa * wa * ua[0] + wb * wb * ub[0]),
                pb[1] + half * (wa * wa * ua[1] + wb * wb * ub[1]),
            ];
            let (row_prev, row) = self.jac.split_at_mut(k * n);
            let row_prev = &row_prev[(k - 1) * n..];
            let row = &mut row[..n];
            row.copy_from_slice(row_prev);
            // dc/dphi contributions of the two half-links.
            let ea = [half * ua[1], -half * ua[0]];
            let eb = [half * ub[1], -half * ub[0]];
            for (i, col) in row.iter_mut().enumerate().skip(2) {
                let ja = Self::angular_jac(k - 1, i);
                let jb = Self::angular_jac(k, i);
                col[0] += ja * ea[0] + jb * eb[0];
                col[1] += ja * ea[1] + jb * eb[1];
            }
        }
    }
}

/// Reusable buffers for [`Simulator::step`].
#[derive(Debug, Clone)]
struct Workspace {
    kin: Kinematics,
    mass: DMatrix<f64>,
    rhs: DVector<f64>,
    forces: Vec<[f64; 2]>,
    torques: Vec<f64>,
    joint_torque: Vec<f64>,
    joint_stiffness: Vec<f64>,
    joint_damping: Vec<f64>,
    /// Active contacts this step: link, lever arm from its center, normal,
    /// normal force.
    contacts: Vec<(usize, [f64; 2], [f64; 2], f64)>,
    /// Mass matrix before the implicit terms, for the joint-stop impulses.
    plain_mass: DMatrix<f64>,
}

impl Workspace {
    fn new(joints: usize) -> Self {
        let n = joints + 3;
        Workspace {
            kin: Kinematics::new(joints),
            mass: DMatrix::zeros(n, n),
            rhs: DVector::zeros(n),
            forces: vec![[0.0; 2]; joints + 1],
            torques: vec![0.0; joints + 1],
            joint_torque: vec![0.0; joints],
            joint_stiffness: vec![0.0; joints],
            joint_damping: vec![0.0; joints],
            contacts: Vec::new(),
            plain_mass: DMatrix::zeros(n, n),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LinkInertia {
    /// Mass along the link axis.
    axial: f64,
    /// Mass across the link, including added mass.
    lateral: f64,
    rotational: f64,
}

impl LinkInertia {
    fn new(geom: &RobotGeometry, hydro: &HydroParams) -> Self {
        let m = geom.link_mass;
        // Surface-piercing strip: half of a 2 * draft wide plate's added mass.
        let added = hydro.added_mass_coef_normal
            * hydro.fluid_density
            * std::f64::consts::PI
            * geom.draft
            * geom.draft
            * 0.5
            * geom.link_length;
        let l2 = geom.link_length * geom.link_length;
        let w2 = geom.link_width * geom.link_width;
        LinkInertia {
            axial: m,
            lateral: m + added,
            rotational: m * (l2 + w2) / 12.0 + added * l2 / 12.0,
        }
    }
}

/// One running simulation over a borrowed lattice.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    params: PhysicsParams,
    lattice: &'a Lattice,
    state: RobotState,
    inertia: LinkInertia,
    ws: Workspace,
}

impl<'a> Simulator<'a> {
    pub fn new(params: PhysicsParams, lattice: &'a Lattice, state: RobotState) -> Result<Self> {
        params.validate()?;
        state.validate(&params.geometry)?;
        let joints = params.geometry.joint_count;
        Ok(Simulator {
            inertia: LinkInertia::new(&params.geometry, &params.hydro),
            params,
            lattice,
            state,
            ws: Workspace::new(joints),
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn lattice(&self) -> &Lattice {
        self.lattice
    }

    pub fn link_poses(&self) -> Vec<LinkPose> {
        link_poses(&self.state, &self.params.geometry)
    }

    /// Kinetic energy of body and entrained fluid (J).
    pub fn kinetic_energy(&mut self) -> f64 {
        let ws = &mut self.ws;
        ws.kin.update(&self.state.q, &self.state.qd, self.params.geometry.link_length);
        let inertia = self.inertia;
        let kin = &ws.kin;
        (0..kin.centers.len())
            .map(|k| {
                let t = kin.tangents[k];
                let v = kin.velocities[k];
                let u = v[0] * t[0] + v[1] * t[1];
                let w = -v[0] * t[1] + v[1] * t[0];
                0.5 * (inertia.axial * u * u
                    + inertia.lateral * w * w
                    + inertia.rotational * kin.omegas[k] * kin.omegas[k])
            })
            .sum()
    }

    /// Advances one step of `params.dt` under the given per-joint commands.
    pub fn step(&mut self, cmds: &[CableCommand]) -> Result<StepInfo> {
        let mut info = StepInfo {
            joint_loads: vec![JointLoad::default(); self.params.geometry.joint_count],
            ..StepInfo::default()
        };
        self.step_into(cmds, &mut info)?;
        Ok(info)
    }

    /// Like [`Simulator::step`] but reuses `info`'s buffers.
    pub fn step_into(&mut self, cmds: &[CableCommand], info: &mut StepInfo) -> Result<()> {
        let geom = self.params.geometry;
        let joints = geom.joint_count;
        if cmds.len() != joints {
            return Err(Error::Argument(format!(
                "{} cable commands for {joints} joints",
                cmds.len()
            )));
        }
        let hydro = self.params.hydro;
        let contact = self.params.contact;
        let dt = self.params.dt;
        let inertia = self.inertia;
        let links = joints + 1;
        let n = joints + 3;
        let half = 0.5 * geom.link_length;
        let body_radius = 0.5 * geom.link_width;

        let ws = &mut self.ws;
        ws.kin.update(&self.state.q, &self.state.qd, geom.link_length);
        let kin = &ws.kin;

        info.joint_loads.resize(joints, JointLoad::default());
        for j in 0..joints {
            let (load, stiffness, damping) = actuation::joint_load_linearized(
                self.state.q[3 + j],
                self.state.qd[3 + j],
                &cmds[j],
                &geom,
                &self.params.cable,
            );
            ws.joint_torque[j] = load.torque;
            ws.joint_stiffness[j] = stiffness;
            ws.joint_damping[j] = damping;
            info.joint_loads[j] = load;
        }

        info.drag_power = 0.0;
        info.contact_count = 0;
        info.max_penetration = 0.0;
        info.min_normal_force = f64::INFINITY;
        let reach = self.lattice.radius + body_radius + half;
        ws.contacts.clear();
        for k in 0..links {
            let t = kin.tangents[k];
            let v = kin.velocities[k];
            let w = kin.omegas[k];
            let (f, tau) = drag_wrench(t, v, w, &hydro, geom.link_length, geom.draft);
            info.drag_power += f[0] * v[0] + f[1] * v[1] + tau * w;
            let mut force = f;
            let mut torque = tau;

            let c = kin.centers[k];
            let mut touching = false;
            let posts = &self.lattice.posts;
            let post_radius = self.lattice.radius;
            self.lattice.for_posts_near(c, c, reach, |pi| {
                if let Some((fc, tc, depth, fnorm, point, normal)) = capsule_post_contact(
                    c, t, v, w, half, body_radius, posts[pi], post_radius, &contact,
                ) {
                    ws.contacts.push((k, [point[0] - c[0], point[1] - c[1]], normal, fnorm));
                    force[0] += fc[0];
                    force[1] += fc[1];
                    torque += tc;
                    touching = true;
                    info.contact_count += 1;
                    info.max_penetration = info.max_penetration.max(depth);
                    info.min_normal_force = info.min_normal_force.min(fnorm);
                }
            });
            self.state.contact_flags[k] = touching;
            ws.forces[k] = force;
            ws.torques[k] = torque;
        }

        // Assemble M qdd = Q.
        ws.mass.fill(0.0);
        ws.rhs.fill(0.0);
        for k in 0..links {
            let t = kin.tangents[k];
            let nrm = [-t[1], t[0]];
            let (ma, ml) = (inertia.axial, inertia.lateral);
            // World mass tensor ma t t^T + ml n n^T.
            let mt = [
                [ma * t[0] * t[0] + ml * nrm[0] * nrm[0], ma * t[0] * t[1] + ml * nrm[0] * nrm[1]],
                [ma * t[1] * t[0] + ml * nrm[1] * nrm[0], ma * t[1] * t[1] + ml * nrm[1] * nrm[1]],
            ];
            let apply = |m: &[[f64; 2]; 2], x: [f64; 2]| {
                [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
            };
            let mb = apply(&mt, kin.bias[k]);
            let f_eff = [ws.forces[k][0] - mb[0], ws.forces[k][1] - mb[1]];
            let tau_eff = ws.torques[k];

            let row = &kin.jac[k * n..(k + 1) * n];
            for i in 0..n {
                let ji = row[i];
                let ai = Kinematics::angular_jac(k, i);
                ws.rhs[i] += ji[0] * f_eff[0] + ji[1] * f_eff[1] + ai * tau_eff;
                let mji = apply(&mt, ji);
                for jj in i..n {
                    let jj_v = row[jj];
                    let aj = Kinematics::angular_jac(k, jj);
                    ws.mass[(jj, i)] += mji[0] * jj_v[0] + mji[1] * jj_v[1] + inertia.rotational * ai * aj;
                }
            }
        }
        for i in 0..n {
            for jj in i + 1..n {
                ws.mass[(i, jj)] = ws.mass[(jj, i)];
            }
        }
        ws.plain_mass.copy_from(&ws.mass);
        // Cable forces are taken implicitly so stiff, well-damped cables stay stable.
        for j in 0..joints {
            let (k, c) = (ws.joint_stiffness[j], ws.joint_damping[j]);
            ws.mass[(3 + j, 3 + j)] += dt * c + dt * dt * k;
            ws.rhs[3 + j] += ws.joint_torque[j] - dt * k * self.state.qd[3 + j];
        }

        // Contacts likewise: the penalty spring and damper along each contact's
        // generalized normal direction g, and the regularized friction (a
        // velocity-dependent damper) along the tangent direction h.
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for &(k, arm, nrm, fnorm) in &ws.contacts {
            let row = &kin.jac[k * n..(k + 1) * n];
            for i in 0..n {
                let ai = Kinematics::angular_jac(k, i);
                let p = [row[i][0] - ai * arm[1], row[i][1] + ai * arm[0]];
                g[i] = nrm[0] * p[0] + nrm[1] * p[1];
                h[i] = -nrm[1] * p[0] + nrm[0] * p[1];
            }
            let vn: f64 = g.iter().zip(self.state.qd.iter()).map(|(a, b)| a * b).sum();
            let vt: f64 = h.iter().zip(self.state.qd.iter()).map(|(a, b)| a * b).sum();
            let cn = if vn < 0.0 { contact.normal_damping } else { 0.0 };
            let kc = contact.normal_stiffness;
            let coef_n = dt * cn + dt * dt * kc;
            let coef_t = dt * contact.friction_mu * fnorm / vt.hypot(contact.slip_velocity);
            for i in 0..n {
                ws.rhs[i] -= dt * kc * vn * g[i];
                for jj in 0..n {
                    ws.mass[(i, jj)] += coef_n * g[i] * g[jj] + coef_t * h[i] * h[jj];
                }
            }
        }

        let chol = ws
            .mass
            .clone()
            .cholesky()
            .ok_or(Error::Diverged { time: self.state.time })?;
        chol.solve_mut(&mut ws.rhs);

        let state = &mut self.state;
        for i in 0..n {
            state.qd[i] += dt * ws.rhs[i];
            state.q[i] += dt * state.qd[i];
        }

        // Mechanical stops: inelastic, momentum-preserving joint impulses.
        // Both the overshoot and the velocity are projected out along
        // M^-1 e_j in the true inertia metric, so a stop turns both sides of
        // the joint instead of swinging the tail about a fixed head. Sweeps
        // repeat so that neighbouring joints on their stops settle together.
        let limit = geom.mech_limit;
        let mut stop_chol = None;
        let mut e = DVector::zeros(n);
        for _ in 0..STOP_ITERATIONS {
            let mut active = false;
            for j in 0..joints {
                let idx = 3 + j;
                let a = state.q[idx];
                let over = a.abs() > limit + STOP_TOLERANCE;
                let outward = a.abs() >= limit && state.qd[idx] * a > 0.0;
                if !over && !outward {
                    continue;
                }
                active = true;
                let chol = match &stop_chol {
                    Some(c) => c,
                    None => stop_chol.insert(
                        ws.plain_mass
                            .clone()
                            .cholesky()
                            .ok_or(Error::Diverged { time: state.time })?,
                    ),
                };
                e.fill(0.0);
                e[idx] = 1.0;
                let minv_e = chol.solve(&e);
                let shift = (limit.copysign(a) - a) / minv_e[idx];
                let rate = state.qd[idx];
                let impulse = if rate * a > 0.0 { -rate / minv_e[idx] } else { 0.0 };
                for i in 0..n {
                    state.q[i] += shift * minv_e[i];
                    state.qd[i] += impulse * minv_e[i];
                }
                state.q[idx] = limit.copysign(a);
                if impulse != 0.0 {
                    state.qd[idx] = 0.0;
                }
            }
            if !active {
                break;
            }
        }
        for j in 0..joints {
            state.q[3 + j] = state.q[3 + j].clamp(-limit, limit);
        }
        state.time += dt;
        if !state.is_finite() {
            return Err(Error::Diverged { time: state.time });
        }
        Ok(())
    }
}

/// World poses of every link of a state, head first.
pub fn link_poses(state: &RobotState, geom: &RobotGeometry) -> Vec<LinkPose> {
    let half = 0.5 * geom.link_length;
    let mut out = Vec::with_capacity(geom.joint_count + 1);
    let mut phi = state.q[2];
    let mut c = [state.q[0], state.q[1]];
    out.push(LinkPose { center: c, heading: phi });
    for j in 0..state.joint_count() {
        let prev = phi;
        phi += state.q[3 + j];
        c = [
            c[0] - half * (prev.cos() + phi.cos()),
            c[1] - half * (prev.sin() + phi.sin()),
        ];
        out.push(LinkPose { center: c, heading: phi });
    }
    out
}

/// Smallest distance between any link capsule and any post surface.
pub fn body_clearance(state: &RobotState, geom: &RobotGeometry, lattice: &Lattice) -> f64 {
    let half = 0.5 * geom.link_length;
    let mut best = f64::INFINITY;
    for pose in link_poses(state, geom) {
        let t = [pose.heading.cos(), pose.heading.sin()];
        for p in &lattice.posts {
            let rel = [p[0] - pose.center[0], p[1] - pose.center[1]];
            let s = (rel[0] * t[0] + rel[1] * t[1]).clamp(-half, half);
            let d = (rel[0] - s * t[0]).hypot(rel[1] - s * t[1]);
            best = best.min(d - lattice.radius - 0.5 * geom.link_width);
        }
    }
    best
}

/// One functional step: clones the state and advances it by `params.dt`.
pub fn step(
    state: &RobotState,
    cmds: &[CableCommand],
    lattice: &Lattice,
    params: &PhysicsParams,
) -> Result<(RobotState, StepInfo)> {
    let mut sim = Simulator::new(*params, lattice, state.clone())?;
    let info = sim.step(cmds)?;
    Ok((sim.state, info))
}
