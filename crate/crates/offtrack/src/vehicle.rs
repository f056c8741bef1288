//! Vehicle forward simulation.
//!
//! Two plants share one command interface: the ideal differential-drive
//! kinematics used for policy training, and a surrogate "real vehicle" whose
//! hidden gain / lag / delay / slip / noise parameters stand in for the
//! unmodeled dynamics of a physical platform.

use std::collections::VecDeque;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::wrap_angle;

/// Commanded linear velocity range, m/s.
pub const V_CMD_MIN: f64 = 0.0;
pub const V_CMD_MAX: f64 = 5.0;
/// Commanded angular velocity range, rad/s.
pub const OMEGA_CMD_MAX: f64 = 2.0;

/// Pose plus realized velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, wrapped to `(-pi, pi]`.
    pub phi: f64,
    /// Realized linear velocity, m/s.
    pub v: f64,
    /// Realized angular velocity, rad/s.
    pub omega: f64,
}

impl VehicleState {
    /// A vehicle at rest at the given pose.
    pub fn at_pose(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi: wrap_angle(phi), v: 0.0, omega: 0.0 }
    }
}

/// A velocity command, clamped to the actuation box on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v_cmd: f64,
    pub omega_cmd: f64,
}

impl Action {
    pub const ZERO: Action = Action { v_cmd: 0.0, omega_cmd: 0.0 };

    /// Clamp to `[0, 5] x [-2, 2]`; commands outside the box are saturated,
    /// not rejected, matching real velocity controllers.
    pub fn new(v_cmd: f64, omega_cmd: f64) -> Self {
        Self {
            v_cmd: v_cmd.clamp(V_CMD_MIN, V_CMD_MAX),
            omega_cmd: omega_cmd.clamp(-OMEGA_CMD_MAX, OMEGA_CMD_MAX),
        }
    }
}

/// One Euler step of the ideal unicycle: commands take effect instantly.
pub fn step_kinematic(s: &VehicleState, a: Action, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0);
    VehicleState {
        x: s.x + a.v_cmd * s.phi.cos() * dt,
        y: s.y + a.v_cmd * s.phi.sin() * dt,
        phi: wrap_angle(s.phi + a.omega_cmd * dt),
        v: a.v_cmd,
        omega: a.omega_cmd,
    }
}

/// Hidden dynamics of the surrogate vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    /// Command-to-realized linear velocity gain.
    pub gain_v: f64,
    /// Command-to-realized angular velocity gain.
    pub gain_w: f64,
    /// First-order linear velocity lag, seconds.
    pub tau_v: f64,
    /// First-order angular velocity lag, seconds.
    pub tau_w: f64,
    /// Actuation dead time, in control ticks.
    pub delay_steps: usize,
    /// Lateral slip displacement per tick is `slip_gain * v * omega * dt`.
    pub slip_gain: f64,
    /// Additive Gaussian command noise, linear.
    pub noise_std_v: f64,
    /// Additive Gaussian command noise, angular.
    pub noise_std_w: f64,
}

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("unknown surrogate preset `{0}` (known: warthog-like, moose-like)")]
    UnknownPreset(String),
    #[error("invalid surrogate parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter file error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SurrogateParams {
    /// Named parameter sets mirroring two platforms of very different mass:
    /// the moose-like preset has larger lags and dead time than the
    /// warthog-like one.
    pub fn preset(name: &str) -> Result<Self, VehicleError> {
        match name {
            "warthog-like" => Ok(Self {
                gain_v: 0.9,
                gain_w: 0.85,
                tau_v: 0.35,
                tau_w: 0.25,
                delay_steps: 2,
                slip_gain: 0.03,
                noise_std_v: 0.02,
                noise_std_w: 0.02,
            }),
            "moose-like" => Ok(Self {
                gain_v: 0.85,
                gain_w: 0.75,
                tau_v: 0.6,
                tau_w: 0.45,
                delay_steps: 4,
                slip_gain: 0.05,
                noise_std_v: 0.03,
                noise_std_w: 0.03,
            }),
            other => Err(VehicleError::UnknownPreset(other.to_string())),
        }
    }

    /// Degenerate parameters that make the surrogate reproduce the ideal
    /// kinematics exactly: unit gains, lag equal to one tick, no delay,
    /// no slip, no noise.
    pub fn identity(dt: f64) -> Self {
        Self {
            gain_v: 1.0,
            gain_w: 1.0,
            tau_v: dt,
            tau_w: dt,
            delay_steps: 0,
            slip_gain: 0.0,
            noise_std_v: 0.0,
            noise_std_w: 0.0,
        }
    }

    /// Load parameters from a JSON file whose keys match the field names,
    /// so experiments can define new "vehicles".
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, VehicleError> {
        let file = File::open(path.as_ref())?;
        let params: SurrogateParams = serde_json::from_reader(BufReader::new(file))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        if !(self.tau_v > 0.0 && self.tau_w > 0.0) {
            return Err(VehicleError::InvalidParams("lags must be > 0".into()));
        }
        if !(self.gain_v > 0.0 && self.gain_w > 0.0) {
            return Err(VehicleError::InvalidParams("gains must be > 0".into()));
        }
        if self.noise_std_v < 0.0 || self.noise_std_w < 0.0 {
            return Err(VehicleError::InvalidParams("noise std must be >= 0".into()));
        }
        if self.slip_gain < 0.0 {
            return Err(VehicleError::InvalidParams("slip gain must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fresh dead-time buffer for a surrogate: `delay_steps` zero commands.
pub fn new_command_queue(params: &SurrogateParams) -> VecDeque<Action> {
    VecDeque::from(vec![Action::ZERO; params.delay_steps])
}

/// One step of the surrogate vehicle.
///
/// The command applied this tick is the one enqueued `delay_steps` ticks ago,
/// perturbed by Gaussian noise. Realized velocities follow a first-order lag
/// toward `gain * command` and are clamped to 1.5x the gain-scaled actuation
/// limit. The pose integrates the realized velocities plus a lateral slip
/// displacement proportional to `v * omega` (outward in a turn).
pub fn step_surrogate(
    s: &VehicleState,
    params: &SurrogateParams,
    queue: &mut VecDeque<Action>,
    a: Action,
    dt: f64,
    rng: &mut impl Rng,
) -> VehicleState {
    debug_assert!(dt > 0.0);
    debug_assert_eq!(queue.len(), params.delay_steps);

    queue.push_back(a);
    // With zero delay the queue stays empty and the new command applies now.
    let applied = queue.pop_front().unwrap_or(a);

    let (mut cmd_v, mut cmd_w) = (applied.v_cmd, applied.omega_cmd);
    if params.noise_std_v > 0.0 {
        cmd_v += Normal::new(0.0, params.noise_std_v).unwrap().sample(rng);
    }
    if params.noise_std_w > 0.0 {
        cmd_w += Normal::new(0.0, params.noise_std_w).unwrap().sample(rng);
    }

    let alpha_v = (dt / params.tau_v).min(1.0);
    let alpha_w = (dt / params.tau_w).min(1.0);
    let v_limit = params.gain_v * V_CMD_MAX * 1.5;
    let w_limit = params.gain_w * OMEGA_CMD_MAX * 1.5;
    let v = (s.v + (params.gain_v * cmd_v - s.v) * alpha_v).clamp(-v_limit, v_limit);
    let omega = (s.omega + (params.gain_w * cmd_w - s.omega) * alpha_w).clamp(-w_limit, w_limit);

    // Slip pushes the vehicle outward: to the right in a left turn and vice
    // versa, growing with speed and turn rate.
    let slip = params.slip_gain * v * omega * dt;
    let (sin_phi, cos_phi) = s.phi.sin_cos();
    VehicleState {
        x: s.x + v * cos_phi * dt + slip * sin_phi,
        y: s.y + v * sin_phi * dt - slip * cos_phi,
        phi: wrap_angle(s.phi + omega * dt),
        v,
        omega,
    }
}

/// A plant that advances a vehicle state by one control tick.
///
/// Stepping is deterministic given the construction seed; each instance owns
/// its transient state (dead-time buffer, noise stream), so independent
/// simulations never share mutable state.
pub trait Stepper {
    fn step(&mut self, s: &VehicleState, a: Action, dt: f64) -> VehicleState;
    /// Clear transient actuation state (dead-time buffer). Does not rewind
    /// the noise stream, so successive episodes see fresh noise.
    fn reset_transients(&mut self);
}

/// The ideal kinematic plant.
#[derive(Debug, Clone, Default)]
pub struct KinematicStepper;

impl Stepper for KinematicStepper {
    fn step(&mut self, s: &VehicleState, a: Action, dt: f64) -> VehicleState {
        step_kinematic(s, a, dt)
    }

    fn reset_transients(&mut self) {}
}

/// The surrogate plant with hidden dynamics.
#[derive(Debug, Clone)]
pub struct SurrogateStepper {
    params: SurrogateParams,
    queue: VecDeque<Action>,
    rng: ChaCha8Rng,
}

impl SurrogateStepper {
    pub fn new(params: SurrogateParams, seed: u64) -> Self {
        let queue = new_command_queue(&params);
        Self { params, queue, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }
}

impl Stepper for SurrogateStepper {
    fn step(&mut self, s: &VehicleState, a: Action, dt: f64) -> VehicleState {
        step_surrogate(s, &self.params, &mut self.queue, a, dt, &mut self.rng)
    }

    fn reset_transients(&mut self) {
        self.queue = new_command_queue(&self.params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DT: f64 = 0.05;

    #[test]
    fn straight_line_step() {
        let s = VehicleState::at_pose(0.0, 0.0, 0.0);
        let s1 = step_kinematic(&s, Action::new(1.0, 0.0), DT);
        assert_abs_diff_eq!(s1.x, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.y, 0.0);
        assert_abs_diff_eq!(s1.phi, 0.0);
        assert_eq!(s1.v, 1.0);
        assert_eq!(s1.omega, 0.0);
    }

    #[test]
    fn pure_rotation_step() {
        let s = VehicleState::at_pose(0.0, 0.0, 0.0);
        let s1 = step_kinematic(&s, Action::new(0.0, 1.0), DT);
        assert_abs_diff_eq!(s1.x, 0.0);
        assert_abs_diff_eq!(s1.y, 0.0);
        assert_abs_diff_eq!(s1.phi, 0.05, epsilon = 1e-15);
    }

    /// Closed-form oracle: constant twist (v, w) traces the circle
    /// x = R sin(wt), y = R (1 - cos(wt)) with R = v / w.
    #[test]
    fn constant_twist_follows_circle() {
        let mut s = VehicleState::at_pose(0.0, 0.0, 0.0);
        let a = Action::new(1.0, 0.5);
        let steps = 80;
        for _ in 0..steps {
            s = step_kinematic(&s, a, DT);
        }
        let t = steps as f64 * DT; // 4 s
        assert_abs_diff_eq!(s.phi, wrap_angle(0.5 * t), epsilon = 1e-12); // 2.0 rad
        let r = 1.0 / 0.5;
        let exact_x = r * (0.5 * t).sin();
        let exact_y = r * (1.0 - (0.5 * t).cos());
        // Euler integration error is O(dt) over a fixed horizon.
        assert_abs_diff_eq!(s.x, exact_x, epsilon = 4.0 * DT);
        assert_abs_diff_eq!(s.y, exact_y, epsilon = 4.0 * DT);
    }

    #[test]
    fn identity_surrogate_matches_kinematics() {
        let params = SurrogateParams::identity(DT);
        let mut queue = new_command_queue(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sk = VehicleState::at_pose(0.3, -0.2, 0.4);
        let mut ss = sk;
        for i in 0..200 {
            let a = Action::new(1.0 + (i as f64 * 0.11).sin(), (i as f64 * 0.07).cos());
            sk = step_kinematic(&sk, a, DT);
            ss = step_surrogate(&ss, &params, &mut queue, a, DT, &mut rng);
            assert_abs_diff_eq!(sk.x, ss.x, epsilon = 1e-9);
            assert_abs_diff_eq!(sk.y, ss.y, epsilon = 1e-9);
            assert_abs_diff_eq!(sk.phi, ss.phi, epsilon = 1e-9);
            assert_abs_diff_eq!(sk.v, ss.v, epsilon = 1e-9);
            assert_abs_diff_eq!(sk.omega, ss.omega, epsilon = 1e-9);
        }
    }

    /// Scalar-recurrence oracle for the first-order lag.
    #[test]
    fn lag_matches_scalar_recurrence() {
        let params = SurrogateParams {
            gain_v: 0.8,
            gain_w: 1.0,
            tau_v: 0.5,
            tau_w: 0.5,
            delay_steps: 0,
            slip_gain: 0.0,
            noise_std_v: 0.0,
            noise_std_w: 0.0,
        };
        let mut queue = new_command_queue(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = VehicleState::at_pose(0.0, 0.0, 0.0);
        let a = Action::new(2.0, 0.0);
        let mut v_expected = 0.0;
        for _ in 0..100 {
            s = step_surrogate(&s, &params, &mut queue, a, DT, &mut rng);
            v_expected += (1.6 - v_expected) * 0.1;
            assert_abs_diff_eq!(s.v, v_expected, epsilon = 1e-12);
        }
        // Converges to gain * command = 1.6 m/s.
        assert_abs_diff_eq!(s.v, 1.6, epsilon = 1e-4);
    }

    #[test]
    fn dead_time_holds_old_command() {
        let params = SurrogateParams {
            delay_steps: 3,
            noise_std_v: 0.0,
            noise_std_w: 0.0,
            slip_gain: 0.0,
            ..SurrogateParams::preset("warthog-like").unwrap()
        };
        let mut queue = new_command_queue(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = VehicleState::at_pose(0.0, 0.0, 0.0);
        let a = Action::new(1.0, 0.0);
        for tick in 1..=6 {
            s = step_surrogate(&s, &params, &mut queue, a, DT, &mut rng);
            if tick <= 3 {
                assert_eq!(s.v, 0.0, "tick {tick}: command leaked through dead time");
            } else {
                assert!(s.v > 0.0, "tick {tick}: delayed command never arrived");
            }
        }
    }

    #[test]
    fn presets_and_unknown() {
        let w = SurrogateParams::preset("warthog-like").unwrap();
        let m = SurrogateParams::preset("moose-like").unwrap();
        assert!(m.tau_v > w.tau_v);
        assert!(m.tau_w > w.tau_w);
        assert!(m.delay_steps > w.delay_steps);
        assert!(matches!(
            SurrogateParams::preset("polaris"),
            Err(VehicleError::UnknownPreset(_))
        ));
    }

    #[test]
    fn params_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vehicle.json");
        let p = SurrogateParams::preset("moose-like").unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&p).unwrap()).unwrap();
        let q = SurrogateParams::from_json_file(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn surrogate_without_noise_is_deterministic() {
        let params = SurrogateParams {
            noise_std_v: 0.0,
            noise_std_w: 0.0,
            ..SurrogateParams::preset("warthog-like").unwrap()
        };
        let run = || {
            let mut queue = new_command_queue(&params);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut s = VehicleState::at_pose(0.0, 0.0, 0.0);
            let mut trace = Vec::new();
            for i in 0..50 {
                let a = Action::new(2.0, (i as f64 * 0.3).sin());
                s = step_surrogate(&s, &params, &mut queue, a, DT, &mut rng);
                trace.push((s.x.to_bits(), s.y.to_bits(), s.phi.to_bits()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn zero_action_is_pose_identity(x in -5.0f64..5.0, y in -5.0f64..5.0, phi in -3.0f64..3.0) {
            let s = VehicleState::at_pose(x, y, phi);
            let s1 = step_kinematic(&s, Action::ZERO, DT);
            prop_assert_eq!(s1.x, x);
            prop_assert_eq!(s1.y, y);
            prop_assert_eq!(s1.phi, s.phi);
        }

        #[test]
        fn heading_stays_wrapped(phi in -3.2f64..3.2, w in -2.0f64..2.0, steps in 1usize..200) {
            let mut s = VehicleState::at_pose(0.0, 0.0, phi);
            for _ in 0..steps {
                s = step_kinematic(&s, Action::new(1.0, w), DT);
                prop_assert!(s.phi > -std::f64::consts::PI && s.phi <= std::f64::consts::PI);
            }
        }

        #[test]
        fn distance_per_step_is_v_dt(v in 0.0f64..5.0, phi in -3.0f64..3.0) {
            let s = VehicleState::at_pose(1.0, -2.0, phi);
            let s1 = step_kinematic(&s, Action::new(v, 0.7), DT);
            let d = ((s1.x - s.x).powi(2) + (s1.y - s.y).powi(2)).sqrt();
            prop_assert!((d - v * DT).abs() < 1e-12);
        }

        #[test]
        fn surrogate_velocity_bounded(seed in 0u64..1000) {
            let params = SurrogateParams::preset("warthog-like").unwrap();
            let mut queue = new_command_queue(&params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = VehicleState::at_pose(0.0, 0.0, 0.0);
            for _ in 0..300 {
                s = step_surrogate(&s, &params, &mut queue, Action::new(5.0, 2.0), DT, &mut rng);
                prop_assert!(s.v.abs() <= params.gain_v * V_CMD_MAX * 1.5 + 1e-12);
                prop_assert!(s.omega.abs() <= params.gain_w * OMEGA_CMD_MAX * 1.5 + 1e-12);
            }
        }
    }
}
