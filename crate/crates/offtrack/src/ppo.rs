//! Proximal Policy Optimization on the ideal kinematic simulator.
//!
//! Rollouts are collected round-robin from a set of independently seeded
//! environments, advantages come from generalized advantage estimation, and
//! the update maximizes the clipped surrogate objective with exact analytic
//! gradients through the policy network.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, Observation, TrackingEnv};
use crate::eval::evaluate_policy;
use crate::net::{
    gaussian_entropy, squashed_log_prob, Adam, NetError, OutputGrads, PolicyNet, ACTION_DIM,
};
use crate::trajectory::Trajectory;

/// PPO hyperparameters. The paper-facing quantities (episode shape, reward)
/// live in [`EnvConfig`]; everything here is standard optimizer machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub steps_per_iter: usize,
    pub minibatch_size: usize,
    pub epochs_per_iter: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub total_iters: usize,
    pub n_envs: usize,
    /// Evaluate the deterministic policy on the held-out track every this
    /// many iterations (0 disables evaluation and early stopping).
    pub eval_every: usize,
    /// Stop once an evaluation completes the held-out track with mean |d_e|
    /// below this target.
    pub eval_target_mean_abs_de: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            steps_per_iter: 4096,
            minibatch_size: 256,
            epochs_per_iter: 10,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            total_iters: 488, // ~2M environment steps at 4096 per iteration
            n_envs: 8,
            eval_every: 10,
            eval_target_mean_abs_de: Some(0.35),
        }
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("non-finite loss or gradient during update")]
    NonFiniteLoss,
    #[error("non-finite loss persisted for {0} consecutive iterations")]
    RepeatedNonFiniteLoss(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One stored transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    /// Pre-squash Gaussian sample of the action taken.
    pub presquash: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Transitions of a single environment, in time order.
#[derive(Debug, Clone, Default)]
pub struct EnvLane {
    pub transitions: Vec<Transition>,
    /// Value estimate of the state after the last transition (bootstrap).
    pub last_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Rollout storage: one lane per environment so episode boundaries and the
/// GAE recursion stay per-env.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub lanes: Vec<EnvLane>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.lanes.iter().map(|l| l.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collection statistics for the metrics log.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutStats {
    /// Mean return of episodes that finished during collection; falls back
    /// to the mean partial return when none finished.
    pub mean_episode_reward: f64,
    pub mean_abs_de: f64,
    pub episodes_finished: usize,
}

/// Collect exactly `steps` transitions, stepping the environments
/// round-robin and resetting each one as it finishes an episode.
pub fn collect_rollouts(
    policy: &PolicyNet,
    envs: &mut [TrackingEnv],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutBuffer, RolloutStats), PpoError> {
    let n_envs = envs.len();
    assert!(n_envs > 0, "need at least one environment");
    let mut buffer = RolloutBuffer { lanes: vec![EnvLane::default(); n_envs] };

    let mut episode_returns = vec![0.0f64; n_envs];
    let mut finished_returns = Vec::new();
    let mut abs_de_sum = 0.0;

    for t in 0..steps {
        let e = t % n_envs;
        let env = &mut envs[e];
        if env.is_done() {
            env.reset();
            episode_returns[e] = 0.0;
        }
        let obs = env.observation();
        let sampled = policy.sample_action(&obs, rng)?;
        let step = env.step(sampled.action).expect("stepped a finished episode");

        episode_returns[e] += step.reward;
        abs_de_sum += step.info.d_e.abs();
        if step.done {
            finished_returns.push(episode_returns[e]);
        }

        buffer.lanes[e].transitions.push(Transition {
            obs,
            presquash: sampled.presquash,
            log_prob: sampled.log_prob,
            reward: step.reward,
            value: sampled.value,
            done: step.done,
        });
    }

    for (e, lane) in buffer.lanes.iter_mut().enumerate() {
        // Harmless when the lane ended an episode: the done flag zeroes the
        // bootstrap term in GAE.
        let obs = envs[e].observation();
        lane.last_value = policy.forward_cached(&obs)?.value;
    }

    let episodes_finished = finished_returns.len();
    let mean_episode_reward = if episodes_finished > 0 {
        finished_returns.iter().sum::<f64>() / episodes_finished as f64
    } else {
        episode_returns.iter().sum::<f64>() / n_envs as f64
    };
    Ok((
        buffer,
        RolloutStats {
            mean_episode_reward,
            mean_abs_de: abs_de_sum / steps as f64,
            episodes_finished,
        },
    ))
}

/// Raw GAE recursion over a single lane:
/// `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`,
/// returns are `A_t + V_t`.
pub fn gae_kernel(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let non_terminal = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * non_terminal - values[t];
        acc = delta + gamma * lambda * non_terminal * acc;
        advantages[t] = acc;
        returns[t] = acc + values[t];
    }
    (advantages, returns)
}

/// Fill advantages and returns for every lane, then normalize the advantages
/// to zero mean and unit standard deviation across the whole batch.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    for lane in &mut buffer.lanes {
        let rewards: Vec<f64> = lane.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = lane.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = lane.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = gae_kernel(&rewards, &values, &dones, lane.last_value, gamma, lambda);
        lane.advantages = adv;
        lane.returns = ret;
    }

    let n = buffer.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean: f64 = buffer.lanes.iter().flat_map(|l| &l.advantages).sum::<f64>() / n;
    let var: f64 =
        buffer.lanes.iter().flat_map(|l| &l.advantages).map(|a| (a - mean).powi(2)).sum::<f64>()
            / n;
    let std = var.sqrt().max(1e-8);
    for lane in &mut buffer.lanes {
        for a in &mut lane.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Per-update statistics.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// A minibatch sample viewed through indices into the buffer.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef {
    pub lane: usize,
    pub idx: usize,
}

/// Mean PPO loss over the given samples with the current parameters:
/// `-surrogate + value_coef (V - R)^2 - entropy_coef H`. Exposed so the
/// analytic gradient can be validated against finite differences.
pub fn ppo_minibatch_loss(
    policy: &PolicyNet,
    buffer: &RolloutBuffer,
    samples: &[SampleRef],
    cfg: &PpoConfig,
) -> Result<f64, PpoError> {
    let mut total = 0.0;
    for s in samples {
        let lane = &buffer.lanes[s.lane];
        let tr = &lane.transitions[s.idx];
        let cache = policy.forward_cached(&tr.obs)?;
        let lp_new = squashed_log_prob(&cache.mean_pre, &cache.log_std, &tr.presquash);
        let ratio = (lp_new - tr.log_prob).exp();
        let adv = lane.advantages[s.idx];
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        let value_err = cache.value - lane.returns[s.idx];
        total += -surr1.min(surr2) + cfg.value_coef * value_err * value_err
            - cfg.entropy_coef * gaussian_entropy(&cache.log_std);
    }
    Ok(total / samples.len() as f64)
}

/// Mean analytic gradient of [`ppo_minibatch_loss`] plus the scalar stats.
pub fn ppo_minibatch_grad(
    policy: &PolicyNet,
    buffer: &RolloutBuffer,
    samples: &[SampleRef],
    cfg: &PpoConfig,
) -> Result<(Vec<f64>, UpdateStats), PpoError> {
    let mut grads = vec![0.0; policy.n_params()];
    let mut stats = UpdateStats::default();
    for s in samples {
        let lane = &buffer.lanes[s.lane];
        let tr = &lane.transitions[s.idx];
        let cache = policy.forward_cached(&tr.obs)?;
        let lp_new = squashed_log_prob(&cache.mean_pre, &cache.log_std, &tr.presquash);
        let ratio = (lp_new - tr.log_prob).exp();
        let adv = lane.advantages[s.idx];
        let surr1 = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surr2 = clipped * adv;

        // d(-min)/d(log pi): the unclipped branch carries the gradient when
        // it is the active minimum; a clipped active branch is flat in theta.
        let d_lp = if surr1 <= surr2 { -adv * ratio } else { 0.0 };

        let value_err = cache.value - lane.returns[s.idx];

        let mut up = OutputGrads { value: 2.0 * cfg.value_coef * value_err, ..Default::default() };
        for k in 0..ACTION_DIM {
            let sigma = cache.log_std[k].exp();
            let u = (tr.presquash[k] - cache.mean_pre[k]) / sigma;
            // d log pi / d mean and d log pi / d log_std of the Gaussian:
            // the squash correction term does not depend on the parameters.
            up.mean_pre[k] = d_lp * (u / sigma);
            up.log_std[k] = d_lp * (u * u - 1.0) - cfg.entropy_coef;
        }
        policy.backward(&cache, &up, &mut grads);

        stats.policy_loss += -surr1.min(surr2);
        stats.value_loss += value_err * value_err;
        stats.entropy += gaussian_entropy(&cache.log_std);
        if (ratio - 1.0).abs() > cfg.clip_eps {
            stats.clip_fraction += 1.0;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.clip_fraction *= inv;
    if !grads.iter().all(|g| g.is_finite())
        || !stats.policy_loss.is_finite()
        || !stats.value_loss.is_finite()
    {
        return Err(PpoError::NonFiniteLoss);
    }
    Ok((grads, stats))
}

/// One PPO update: `epochs_per_iter` passes over shuffled minibatches.
pub fn ppo_update(
    policy: &mut PolicyNet,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PpoError> {
    let mut samples: Vec<SampleRef> = Vec::with_capacity(buffer.len());
    for (lane, l) in buffer.lanes.iter().enumerate() {
        for idx in 0..l.transitions.len() {
            samples.push(SampleRef { lane, idx });
        }
    }

    let mut agg = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs_per_iter {
        samples.shuffle(rng);
        for chunk in samples.chunks(cfg.minibatch_size) {
            let (grads, stats) = ppo_minibatch_grad(policy, buffer, chunk, cfg)?;
            let mut flat = policy.to_flat();
            let n = flat.len();
            opt.step(&mut flat, &grads, n);
            policy.set_from_flat(&flat);
            agg.policy_loss += stats.policy_loss;
            agg.value_loss += stats.value_loss;
            agg.entropy += stats.entropy;
            agg.clip_fraction += stats.clip_fraction;
            batches += 1;
        }
    }
    let inv = 1.0 / batches.max(1) as f64;
    agg.policy_loss *= inv;
    agg.value_loss *= inv;
    agg.entropy *= inv;
    agg.clip_fraction *= inv;
    Ok(agg)
}

/// One row of the training metrics log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_abs_de: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Output of a training run.
pub struct TrainOutput {
    pub policy: PolicyNet,
    pub metrics: Vec<IterMetrics>,
    pub env_steps: usize,
}

/// Train a fresh policy on the given tracks (assigned round-robin to the
/// parallel environments). Fully deterministic for a fixed seed.
///
/// `eval_track` is the held-out scenario used for periodic deterministic
/// evaluation and early stopping; metrics rows are appended to
/// `metrics_path` when given.
pub fn train(
    cfg: &PpoConfig,
    env_cfg: &EnvConfig,
    tracks: &[Trajectory],
    eval_track: Option<&Trajectory>,
    seed: u64,
    metrics_path: Option<&Path>,
) -> Result<TrainOutput, PpoError> {
    assert!(!tracks.is_empty(), "need at least one training track");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = PolicyNet::init(&mut rng);
    let mut opt = Adam::new(cfg.lr, policy.n_params());

    let mut envs: Vec<TrackingEnv> = (0..cfg.n_envs)
        .map(|e| {
            TrackingEnv::new(
                tracks[e % tracks.len()].clone(),
                env_cfg.clone(),
                seed ^ (0xE0E0_0D1E + e as u64 * 0x9E37_79B9),
            )
        })
        .collect();

    let mut writer = match metrics_path {
        Some(p) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(
                w,
                "iter,steps,mean_reward,mean_abs_de,policy_loss,value_loss,entropy,clip_fraction"
            )?;
            Some(w)
        }
        None => None,
    };

    let mut metrics = Vec::new();
    let mut env_steps = 0usize;
    let mut consecutive_failures = 0usize;
    for iter in 1..=cfg.total_iters {
        let (mut buffer, roll_stats) = collect_rollouts(&policy, &mut envs, cfg.steps_per_iter, &mut rng)?;
        env_steps += cfg.steps_per_iter;
        compute_gae(&mut buffer, cfg.gamma, cfg.gae_lambda);

        let stats = match ppo_update(&mut policy, &buffer, cfg, &mut opt, &mut rng) {
            Ok(s) => {
                consecutive_failures = 0;
                s
            }
            Err(PpoError::NonFiniteLoss) => {
                consecutive_failures += 1;
                if consecutive_failures >= 3 {
                    return Err(PpoError::RepeatedNonFiniteLoss(consecutive_failures));
                }
                UpdateStats::default()
            }
            Err(e) => return Err(e),
        };

        let row = IterMetrics {
            iter,
            steps: env_steps,
            mean_reward: roll_stats.mean_episode_reward,
            mean_abs_de: roll_stats.mean_abs_de,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        };
        if let Some(w) = writer.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                row.iter,
                row.steps,
                row.mean_reward,
                row.mean_abs_de,
                row.policy_loss,
                row.value_loss,
                row.entropy,
                row.clip_fraction
            )?;
        }
        metrics.push(row);

        if let (Some(track), Some(target), true) = (
            eval_track,
            cfg.eval_target_mean_abs_de,
            cfg.eval_every > 0 && iter % cfg.eval_every == 0,
        ) {
            let eval_cfg = EnvConfig {
                episode: crate::env::EpisodeConfig { max_steps: 2000, ..env_cfg.episode },
                ..env_cfg.clone()
            };
            if let Ok(out) = evaluate_policy(&policy, track, &eval_cfg, seed ^ 0x0E7A_15EE) {
                if out.metrics.completed && out.metrics.mean_abs_de < target {
                    break;
                }
            }
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(TrainOutput { policy, metrics, env_steps })
}
