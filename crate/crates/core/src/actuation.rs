//! Bilateral cable actuation.
//!
//! Each joint carries a left and a right cable anchored at lateral offset
//! `L_c` and longitudinal distance `L_j` from the pivot on both neighbouring
//! links. The anchor chord lengths are
//!
//! ```text
//! left(a)  = 2 sqrt(Lc^2 + Lj^2) cos(-a/2 + atan(Lc/Lj))
//! right(a) = 2 sqrt(Lc^2 + Lj^2) cos( a/2 + atan(Lc/Lj))
//! ```
//!
//! A positive angle lengthens the left cable and shortens the right one, so
//! the left cable bounds the joint from above and the right cable from below.
//!
//! The compliance policy lengthens each cable past its exact length by a
//! relaxed rate `l0` (length per degree) on one side of a switch angle
//! `gamma = (2G - 1) A`. Cables are inextensible in principle; here they are
//! one-sided penalty springs so that the tension is available as a signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Link and cable geometry of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    pub joint_count: usize,
    /// Length of each of the `joint_count + 1` links (m).
    pub link_length: f64,
    /// Lateral anchor offset `L_c` (m).
    pub cable_offset: f64,
    /// Longitudinal anchor distance from the pivot `L_j` (m).
    pub anchor_half_span: f64,
    /// Relaxed cable rate `l0` (m per degree).
    pub relaxed_rate: f64,
    pub pulley_radius: f64,
    /// Mechanical joint limit (rad).
    pub mech_limit: f64,
    pub link_mass: f64,
    /// In-plane body width (m); links are capsules of radius `link_width / 2`.
    pub link_width: f64,
    /// Immersed depth of the body (m), used for drag area and added mass.
    pub draft: f64,
    pub total_length: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        RobotGeometry {
            joint_count: 5,
            link_length: 0.11,
            cable_offset: 0.0304,
            anchor_half_span: 0.0304,
            relaxed_rate: 0.73e-3,
            pulley_radius: 0.01,
            mech_limit: 90f64.to_radians(),
            link_mass: 1.0 / 6.0,
            link_width: 0.05,
            draft: 0.03,
            total_length: 0.66,
        }
    }
}

impl RobotGeometry {
    pub fn link_count(&self) -> usize {
        self.joint_count + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cable_offset", self.cable_offset),
            ("anchor_half_span", self.anchor_half_span),
            ("relaxed_rate", self.relaxed_rate),
            ("link_length", self.link_length),
            ("pulley_radius", self.pulley_radius),
            ("link_mass", self.link_mass),
            ("link_width", self.link_width),
            ("draft", self.draft),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("robot.{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.joint_count == 0 {
            return Err(Error::config("robot.N", "joint count must be at least 1"));
        }
        if !(self.mech_limit > 0.0 && self.mech_limit <= std::f64::consts::FRAC_PI_2 + 1e-12) {
            return Err(Error::config(
                "robot.mech_limit_deg",
                "mechanical limit must lie in (0, 90] degrees",
            ));
        }
        let built = self.link_count() as f64 * self.link_length;
        if ((built - self.total_length) / self.total_length).abs() > 0.01 {
            return Err(Error::config(
                "robot.total_length_m",
                format!(
                    "{} links x {} m = {built} m disagrees with total length {} m",
                    self.link_count(),
                    self.link_length,
                    self.total_length
                ),
            ));
        }
        Ok(())
    }

    /// `sqrt(Lc^2 + Lj^2)`.
    pub fn anchor_radius(&self) -> f64 {
        self.cable_offset.hypot(self.anchor_half_span)
    }

    /// `atan(Lc / Lj)`.
    pub fn anchor_angle(&self) -> f64 {
        (self.cable_offset / self.anchor_half_span).atan()
    }

    /// Chord lengths without the range check.
    #[inline]
    pub(crate) fn chord_lengths(&self, alpha: f64) -> (f64, f64) {
        let r2 = 2.0 * self.anchor_radius();
        let beta = self.anchor_angle();
        (
            r2 * (-0.5 * alpha + beta).cos(),
            r2 * (0.5 * alpha + beta).cos(),
        )
    }

    /// Analytic derivatives of the chord lengths with respect to the angle.
    #[inline]
    pub fn cable_length_derivatives(&self, alpha: f64) -> (f64, f64) {
        let r = self.anchor_radius();
        let beta = self.anchor_angle();
        (r * (beta - 0.5 * alpha).sin(), -r * (beta + 0.5 * alpha).sin())
    }

    /// Exact left and right cable lengths for a joint angle.
    pub fn exact_cable_lengths(&self, alpha: f64) -> Result<(f64, f64)> {
        if !alpha.is_finite() || alpha.abs() > self.mech_limit + 1e-12 {
            return Err(Error::Argument(format!(
                "joint angle {:.4} deg beyond mechanical limit {:.4} deg",
                alpha.to_degrees(),
                self.mech_limit.to_degrees()
            )));
        }
        Ok(self.chord_lengths(alpha))
    }
}

/// Default upper bound on the generalized compliance.
pub const G_MAX: f64 = 1.75;

/// Per-joint generalized compliance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceState {
    pub g: Vec<f64>,
    pub g_max: f64,
}

impl ComplianceState {
    pub fn uniform(joint_count: usize, g: f64) -> Result<Self> {
        Self::from_values(vec![g; joint_count], G_MAX)
    }

    pub fn from_values(g: Vec<f64>, g_max: f64) -> Result<Self> {
        if let Some((i, v)) = g
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= g_max))
        {
            return Err(Error::Argument(format!(
                "G of joint {} is {v}, outside [0, {g_max}]",
                i + 1
            )));
        }
        Ok(ComplianceState { g, g_max })
    }
}

/// Set lengths for one joint's cable pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableCommand {
    pub set_length_left: f64,
    pub set_length_right: f64,
    /// The suggested angle the command was generated for; marks the operating branch.
    pub suggested: f64,
}

/// Switch angle `gamma = (2G - 1) A`.
#[inline]
pub fn switch_angle(g: f64, amplitude: f64) -> f64 {
    (2.0 * g - 1.0) * amplitude
}

/// Cable set lengths for a suggested angle under compliance `g`.
///
/// `amplitude` is the gait amplitude `A` in radians. The slack terms use the
/// relaxed rate per degree, so angles are converted to degrees there only.
pub fn cable_command(alpha: f64, g: f64, amplitude: f64, geom: &RobotGeometry) -> CableCommand {
    let gamma = switch_angle(g, amplitude);
    let pivot = amplitude.min(gamma);
    let (exact_l, exact_r) = geom.chord_lengths(alpha);

    let left = if alpha <= -gamma {
        exact_l
    } else {
        geom.chord_lengths(-pivot).0 + geom.relaxed_rate * (gamma + alpha).to_degrees()
    };
    let right = if alpha >= gamma {
        exact_r
    } else {
        geom.chord_lengths(pivot).1 + geom.relaxed_rate * (gamma - alpha).to_degrees()
    };
    CableCommand {
        set_length_left: left,
        set_length_right: right,
        suggested: alpha,
    }
}

/// Coarse scan step used to bracket constraint crossings.
const SCAN_STEP: f64 = 0.25 * std::f64::consts::PI / 180.0;
const BISECT_TOL: f64 = 1e-10;

/// Joint angles reachable without stretching either cable.
///
/// Returns the maximal interval inside the mechanical range that contains the
/// command's suggested angle and on which both cables are slack or just taut.
pub fn permitted_interval(cmd: &CableCommand, geom: &RobotGeometry) -> Result<(f64, f64)> {
    let anchor = cmd.suggested;
    let feasible = |a: f64| {
        let (l, r) = geom.chord_lengths(a);
        l <= cmd.set_length_left && r <= cmd.set_length_right
    };
    if anchor.abs() > geom.mech_limit || !feasible(anchor) {
        let (l, r) = geom.chord_lengths(anchor);
        return Err(Error::Infeasible(format!(
            "cables over-tight at {:.4} deg (left excess {:.3e} m, right excess {:.3e} m)",
            anchor.to_degrees(),
            l - cmd.set_length_left,
            r - cmd.set_length_right
        )));
    }
    let hi = boundary(anchor, geom.mech_limit, &feasible);
    let lo = boundary(anchor, -geom.mech_limit, &feasible);
    Ok((lo, hi))
}

/// Walks from a feasible `start` toward `end` and returns the last feasible angle.
fn boundary(start: f64, end: f64, feasible: &impl Fn(f64) -> bool) -> f64 {
    let dir = (end - start).signum();
    let mut ok = start;
    loop {
        let next = ok + dir * SCAN_STEP;
        let next = if (end - next) * dir <= 0.0 { end } else { next };
        if !feasible(next) {
            let mut bad = next;
            while (bad - ok).abs() > BISECT_TOL {
                let mid = 0.5 * (ok + bad);
                if feasible(mid) {
                    ok = mid;
                } else {
                    bad = mid;
                }
            }
            return ok;
        }
        if next == end {
            return end;
        }
        ok = next;
    }
}

/// Penalty parameters of the cables and the motor saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableParams {
    /// Penalty stiffness (N/m).
    pub stiffness: f64,
    /// Damping on cable stretching rate (N s/m).
    pub damping: f64,
    /// Largest tension the servo can hold before it is back-driven (N).
    pub max_tension: f64,
}

impl Default for CableParams {
    fn default() -> Self {
        CableParams {
            stiffness: 2.0e4,
            damping: 50.0,
            // 1.4 N m stall torque on a 10 mm pulley.
            max_tension: 140.0,
        }
    }
}

/// Joint torque and cable tensions produced by the cable pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JointLoad {
    pub torque: f64,
    pub tension_left: f64,
    pub tension_right: f64,
}

#[inline]
fn tension(excess: f64, stretch_rate: f64, cp: &CableParams) -> f64 {
    if excess > 0.0 {
        (cp.stiffness * excess + cp.damping * stretch_rate.max(0.0)).min(cp.max_tension)
    } else {
        0.0
    }
}

/// Cable penalty torque on a joint.
///
/// Each cable stretched past its set length pulls with `k e + c max(0, dL/dt)`;
/// the torque is the negative tension-weighted length gradient.
pub fn joint_constraint(
    alpha: f64,
    alpha_rate: f64,
    cmd: &CableCommand,
    geom: &RobotGeometry,
    cp: &CableParams,
) -> Result<JointLoad> {
    if !(alpha.is_finite()
        && alpha_rate.is_finite()
        && cmd.set_length_left.is_finite()
        && cmd.set_length_right.is_finite())
    {
        return Err(Error::Numeric(format!(
            "non-finite joint input (alpha {alpha}, rate {alpha_rate})"
        )));
    }
    Ok(joint_load(alpha, alpha_rate, cmd, geom, cp))
}

/// Unchecked form of [`joint_constraint`] for the integrator.
#[inline]
pub(crate) fn joint_load(
    alpha: f64,
    alpha_rate: f64,
    cmd: &CableCommand,
    geom: &RobotGeometry,
    cp: &CableParams,
) -> JointLoad {
    let (len_l, len_r) = geom.chord_lengths(alpha);
    let (d_l, d_r) = geom.cable_length_derivatives(alpha);
    let t_l = tension(len_l - cmd.set_length_left, d_l * alpha_rate, cp);
    let t_r = tension(len_r - cmd.set_length_right, d_r * alpha_rate, cp);
    JointLoad {
        torque: -(t_l * d_l + t_r * d_r),
        tension_left: t_l,
        tension_right: t_r,
    }
}

/// Joint load plus its stiffness `-dtau/dalpha` and damping `-dtau/d(rate)`
/// from the taut cables, for implicit integration.
#[inline]
pub(crate) fn joint_load_linearized(
    alpha: f64,
    alpha_rate: f64,
    cmd: &CableCommand,
    geom: &RobotGeometry,
    cp: &CableParams,
) -> (JointLoad, f64, f64) {
    let load = joint_load(alpha, alpha_rate, cmd, geom, cp);
    let (d_l, d_r) = geom.cable_length_derivatives(alpha);
    let mut stiffness = 0.0;
    let mut damping = 0.0;
    for (t, d) in [(load.tension_left, d_l), (load.tension_right, d_r)] {
        if t > 0.0 && t < cp.max_tension {
            stiffness += cp.stiffness * d * d;
            if d * alpha_rate > 0.0 {
                damping += cp.damping * d * d;
            }
        }
    }
    (load, stiffness, damping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_geom() -> RobotGeometry {
        RobotGeometry {
            cable_offset: 0.015,
            anchor_half_span: 0.040,
            ..RobotGeometry::default()
        }
    }

    /// Places the anchors of a single joint in the plane and measures the chord.
    fn chord_oracle(alpha: f64, lc: f64, lj: f64) -> (f64, f64) {
        // Anterior link along -x, posterior link rotated by alpha about the pivot.
        let (s, c) = alpha.sin_cos();
        let rot = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
        let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let right = dist((-lj, lc), rot(lj, lc));
        let left = dist((-lj, -lc), rot(lj, -lc));
        (left, right)
    }

    #[test]
    fn straight_joint_lengths() {
        let g = spec_geom();
        let (l, r) = g.exact_cable_lengths(0.0).unwrap();
        assert!((l - 0.080).abs() < 1e-15);
        assert!((r - 0.080).abs() < 1e-15);
    }

    #[test]
    fn thirty_degree_fold_matches_oracle() {
        let g = spec_geom();
        let a = 30f64.to_radians();
        let (l, r) = g.exact_cable_lengths(a).unwrap();
        let (ol, or) = chord_oracle(a, 0.015, 0.040);
        assert!((l - ol).abs() < 1e-9);
        assert!((r - or).abs() < 1e-9);
        // Frozen from the oracle.
        assert!((l - 0.085_038_6).abs() < 1e-6, "{l}");
        assert!((r - 0.069_509_5).abs() < 1e-6, "{r}");
    }

    #[test]
    fn mirror_symmetry() {
        let g = spec_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = rng.random_range(-g.mech_limit..g.mech_limit);
            let (l, _) = g.exact_cable_lengths(a).unwrap();
            let (_, r) = g.exact_cable_lengths(-a).unwrap();
            assert!((l - r).abs() < 1e-15);
        }
    }

    #[test]
    fn beyond_limit_is_rejected() {
        let g = spec_geom();
        assert!(g.exact_cable_lengths(91f64.to_radians()).is_err());
        assert!(g.exact_cable_lengths(f64::NAN).is_err());
    }

    #[test]
    fn rigid_policy_tracks_exactly() {
        let g = spec_geom();
        let amp = 55f64.to_radians();
        for k in -20..=20 {
            let a = amp * k as f64 / 20.0;
            let cmd = cable_command(a, 0.0, amp, &g);
            let (l, r) = g.chord_lengths(a);
            assert_eq!(cmd.set_length_left, l);
            assert_eq!(cmd.set_length_right, r);
        }
    }

    #[test]
    fn directional_policy_continuous_at_zero() {
        let g = spec_geom();
        let amp = 55f64.to_radians();
        let cmd = cable_command(0.0, 0.5, amp, &g);
        assert!((cmd.set_length_left - g.chord_lengths(0.0).0).abs() < 1e-15);
        assert!((cmd.set_length_right - g.chord_lengths(0.0).1).abs() < 1e-15);
    }

    #[test]
    fn bidirectional_policy_value() {
        let g = spec_geom();
        let amp = 55f64.to_radians();
        let cmd = cable_command(0.0, 1.0, amp, &g);
        let (oracle_l, _) = chord_oracle(-amp, 0.015, 0.040);
        let expected = oracle_l + 0.73e-3 * 55.0;
        assert!((cmd.set_length_left - expected).abs() < 1e-9);
        // 0.0571084 + 0.04015
        assert!((cmd.set_length_left - 0.097_258_4).abs() < 1e-6, "{}", cmd.set_length_left);
    }

    #[test]
    fn rigid_interval_is_degenerate() {
        let g = RobotGeometry::default();
        let amp = 55f64.to_radians();
        for a_deg in [-50.0, -20.0, 0.0, 13.0, 40.0, 55.0] {
            let a = f64::to_radians(a_deg);
            let cmd = cable_command(a, 0.0, amp, &g);
            let (lo, hi) = permitted_interval(&cmd, &g).unwrap();
            assert!(hi - lo < 1e-6, "{a_deg}: [{lo}, {hi}]");
            assert!(lo <= a + 1e-9 && hi >= a - 1e-9);
        }
    }

    #[test]
    fn passive_interval_is_full_range() {
        let g = RobotGeometry::default();
        let amp = 55f64.to_radians();
        for k in -10..=10 {
            let a = amp * k as f64 / 10.0;
            let cmd = cable_command(a, G_MAX, amp, &g);
            let (lo, hi) = permitted_interval(&cmd, &g).unwrap();
            assert_eq!((lo, hi), (-g.mech_limit, g.mech_limit), "alpha {a}");
        }
    }

    #[test]
    fn intervals_nest_in_g() {
        let g = RobotGeometry::default();
        let amp = 55f64.to_radians();
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75];
        for k in -11..=11 {
            let a = amp * k as f64 / 11.0;
            let mut prev: Option<(f64, f64)> = None;
            for &gv in &levels {
                let iv = permitted_interval(&cable_command(a, gv, amp, &g), &g).unwrap();
                if let Some(p) = prev {
                    assert!(iv.0 <= p.0 + 1e-9 && iv.1 >= p.1 - 1e-9, "G={gv} a={a}");
                }
                prev = Some(iv);
            }
        }
    }

    #[test]
    fn over_tight_command_is_infeasible() {
        let g = RobotGeometry::default();
        let (l, r) = g.chord_lengths(0.0);
        let cmd = CableCommand {
            set_length_left: l - 1e-3,
            set_length_right: r - 1e-3,
            suggested: 0.0,
        };
        assert!(matches!(permitted_interval(&cmd, &g), Err(Error::Infeasible(_))));
    }

    #[test]
    fn slack_joint_carries_no_load() {
        let g = RobotGeometry::default();
        let cp = CableParams::default();
        let amp = 55f64.to_radians();
        let cmd = cable_command(0.2, 1.0, amp, &g);
        let (lo, hi) = permitted_interval(&cmd, &g).unwrap();
        let mid = 0.5 * (lo + hi);
        let load = joint_constraint(mid, 0.3, &cmd, &g, &cp).unwrap();
        assert_eq!(load, JointLoad::default());
    }

    #[test]
    fn load_restores_toward_interval() {
        let g = RobotGeometry::default();
        let cp = CableParams::default();
        let amp = 55f64.to_radians();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 1000 {
            let a = rng.random_range(-amp..amp);
            let gv = rng.random_range(0.0..1.5);
            let cmd = cable_command(a, gv, amp, &g);
            let (lo, hi) = permitted_interval(&cmd, &g).unwrap();
            let x = rng.random_range(-g.mech_limit..g.mech_limit);
            if x > lo && x < hi {
                continue;
            }
            let load = joint_constraint(x, 0.0, &cmd, &g, &cp).unwrap();
            if x >= hi + 1e-9 {
                assert!(load.torque < 0.0, "x {x} hi {hi} {load:?}");
            } else if x <= lo - 1e-9 {
                assert!(load.torque > 0.0, "x {x} lo {lo} {load:?}");
            } else {
                continue;
            }
            checked += 1;
        }
    }

    #[test]
    fn rigid_joint_holds_against_load() {
        // Static balance of an external torque against the rigid cable pair:
        // the deflection solving torque(alpha) = -tau_ext stays tiny.
        let g = RobotGeometry::default();
        let cp = CableParams::default();
        let amp = 55f64.to_radians();
        let target = 0.4;
        let cmd = cable_command(target, 0.0, amp, &g);
        let tau_ext = 0.05;
        let (mut lo, mut hi) = (target, target + 0.2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let t = joint_constraint(mid, 0.0, &cmd, &g, &cp).unwrap().torque;
            if t + tau_ext > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let deflection = (0.5 * (lo + hi) - target).to_degrees();
        assert!(deflection > 0.0 && deflection < 0.5, "{deflection}");
    }

    #[test]
    fn rejects_non_finite() {
        let g = RobotGeometry::default();
        let cmd = cable_command(0.0, 0.0, 1.0, &g);
        assert!(joint_constraint(f64::NAN, 0.0, &cmd, &g, &CableParams::default()).is_err());
    }

    #[test]
    fn default_geometry_is_consistent() {
        RobotGeometry::default().validate().unwrap();
        let bad = RobotGeometry {
            total_length: 0.8,
            ..RobotGeometry::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn chord_oracle_equivalence(
            a in -std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2,
            lc in 0.005f64..0.05,
            lj in 0.005f64..0.08,
        ) {
            let g = RobotGeometry { cable_offset: lc, anchor_half_span: lj, ..RobotGeometry::default() };
            // Past this the anchor lines cross each other and the chord form no longer applies.
            prop_assume!(a.abs() / 2.0 + g.anchor_angle() < std::f64::consts::FRAC_PI_2);
            let (l, r) = g.exact_cable_lengths(a).unwrap();
            let (ol, or) = chord_oracle(a, lc, lj);
            prop_assert!((l - ol).abs() < 1e-9);
            prop_assert!((r - or).abs() < 1e-9);
        }

        #[test]
        fn derivative_matches_central_difference(a in -1.5f64..1.5) {
            let g = RobotGeometry::default();
            let h = 1e-6;
            let (lp, rp) = g.chord_lengths(a + h);
            let (lm, rm) = g.chord_lengths(a - h);
            let (dl, dr) = g.cable_length_derivatives(a);
            let fl = (lp - lm) / (2.0 * h);
            let fr = (rp - rm) / (2.0 * h);
            prop_assert!((dl - fl).abs() <= 1e-6 * dl.abs().max(1e-3));
            prop_assert!((dr - fr).abs() <= 1e-6 * dr.abs().max(1e-3));
        }

        #[test]
        fn policy_continuous_at_switch(gv in 0.0f64..=1.0, a_deg in 20.0f64..80.0) {
            let g = RobotGeometry::default();
            let amp = a_deg.to_radians();
            let gamma = switch_angle(gv, amp);
            let eps = 1e-13;
            let below = cable_command(-gamma - eps, gv, amp, &g);
            let at = cable_command(-gamma, gv, amp, &g);
            let above = cable_command(-gamma + eps, gv, amp, &g);
            prop_assert!((below.set_length_left - at.set_length_left).abs() < 1e-12);
            prop_assert!((above.set_length_left - at.set_length_left).abs() < 1e-12);
            let below = cable_command(gamma - eps, gv, amp, &g);
            let at = cable_command(gamma, gv, amp, &g);
            let above = cable_command(gamma + eps, gv, amp, &g);
            prop_assert!((below.set_length_right - at.set_length_right).abs() < 1e-12);
            prop_assert!((above.set_length_right - at.set_length_right).abs() < 1e-12);
        }
    }
}
