//! Deterministic policy evaluation: roll the mean action out on a scenario
//! and score the run with crosstrack metrics.

use thiserror::Error;

use crate::env::{EnvConfig, TrackingEnv};
use crate::metrics::{compute_metrics, Metrics, MetricsError, Tick, TrajectoryLog};
use crate::net::{NetError, PolicyNet};
use crate::trajectory::Trajectory;
use crate::vehicle::VehicleState;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A named evaluation setting: a track plus the environment (plant,
/// episode shape) to run it under.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub traj: Trajectory,
    pub env: EnvConfig,
}

/// Result of one evaluation rollout.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub log: TrajectoryLog,
    pub metrics: Metrics,
    /// The episode ended by exceeding the divergence cutoff.
    pub diverged: bool,
}

/// Roll out the policy's mean action (no sampling) from the first waypoint
/// at rest until the episode ends, and score the resulting log.
///
/// `seed` drives only the plant (surrogate noise); the policy itself is
/// deterministic here.
pub fn evaluate_policy(
    policy: &PolicyNet,
    traj: &Trajectory,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<EvalOutcome, EvalError> {
    let mut env = TrackingEnv::new(traj.clone(), cfg.clone(), seed);
    let w0 = traj.waypoints()[0];
    let mut obs = env.reset_to(VehicleState::at_pose(w0.x, w0.y, w0.theta));

    let dt = cfg.episode.dt;
    let mut log = TrajectoryLog::default();
    let mut diverged = false;
    for k in 0..cfg.episode.max_steps {
        let a = policy.act_mean(&obs)?;
        let step = env.step(a).expect("stepped a finished episode");
        log.ticks.push(Tick::new((k + 1) as f64 * dt, env.state(), a));
        if step.done {
            diverged = step.info.diverged;
            break;
        }
        obs = step.obs;
    }
    let metrics = compute_metrics(&log, traj, cfg.divergence_cutoff)?;
    Ok(EvalOutcome { log, metrics, diverged })
}
