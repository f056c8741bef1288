//! Supervised sim-to-real adaptation of a trained tracking policy.
//!
//! Drive data is collected on the target vehicle over a grid of constant
//! velocity commands; each record's own future path becomes the waypoint
//! observation it is paired with, so `(observation, command)` pairs are
//! self-consistent by construction. Fine-tuning minimizes the squared error
//! between the policy's mean action and the recorded command, updating only
//! the trunk and mean head. The fine-tuning epoch is then selected by
//! evaluating each per-epoch checkpoint on held-out scenarios and taking the
//! one with the smallest maximum absolute crosstrack error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{observe, Observation};
use crate::eval::{evaluate_policy, EvalError, Scenario};
use crate::net::{Adam, NetError, OutputGrads, PolicyNet};
use crate::trajectory::{wrap_angle, Trajectory, Waypoint};
use crate::vehicle::{Action, Stepper, VehicleState};

/// Constant-command grid for drive-data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub v_values: Vec<f64>,
    pub w_values: Vec<f64>,
    /// How long each command is held, seconds.
    pub hold_duration: f64,
}

impl GridSpec {
    pub fn cell_count(&self) -> usize {
        self.v_values.len() * self.w_values.len()
    }
}

/// The reference grid: linear velocity 0..=5 m/s in 1 m/s steps, angular
/// velocity -2..=2 rad/s in 0.2 rad/s steps, 5 s per cell (126 cells,
/// 630 s of driving per sweep).
pub fn default_grid() -> GridSpec {
    GridSpec {
        v_values: (0..=5).map(|i| i as f64).collect(),
        // i/5 keeps every value exactly representable at 0.2 steps.
        w_values: (-10..=10).map(|i| i as f64 / 5.0).collect(),
        hold_duration: 5.0,
    }
}

/// One drive-log record: timestamp within its segment, realized state, and
/// the command being executed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveRecord {
    pub t: f64,
    pub state: VehicleState,
    pub a_star: Action,
    pub segment_id: usize,
}

/// Time-ordered drive data, one segment per constant-command hold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriveLog {
    pub records: Vec<DriveRecord>,
}

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("non-finite loss during fine-tuning")]
    NonFiniteLoss,
    #[error("drive log has no usable segments")]
    NoUsableSegments,
    #[error("need at least {0} checkpoints for epoch selection")]
    TooFewCheckpoints(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("drive log line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
}

impl DriveLog {
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.segment_id).collect();
        ids.dedup();
        ids
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), AdaptError> {
        let file = File::create(path.as_ref())?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["t", "x", "y", "phi", "v", "omega", "v_cmd", "omega_cmd", "segment_id"])?;
        for r in &self.records {
            w.write_record([
                format!("{}", r.t),
                format!("{}", r.state.x),
                format!("{}", r.state.y),
                format!("{}", r.state.phi),
                format!("{}", r.state.v),
                format!("{}", r.state.omega),
                format!("{}", r.a_star.v_cmd),
                format!("{}", r.a_star.omega_cmd),
                format!("{}", r.segment_id),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, AdaptError> {
        let file = File::open(path.as_ref())?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 9 {
                return Err(AdaptError::MalformedRecord {
                    line,
                    reason: format!("expected 9 fields, found {}", rec.len()),
                });
            }
            let num = |i: usize| -> Result<f64, AdaptError> {
                rec[i].parse::<f64>().map_err(|_| AdaptError::MalformedRecord {
                    line,
                    reason: format!("field {i} is not a number: `{}`", &rec[i]),
                })
            };
            records.push(DriveRecord {
                t: num(0)?,
                state: VehicleState {
                    x: num(1)?,
                    y: num(2)?,
                    phi: num(3)?,
                    v: num(4)?,
                    omega: num(5)?,
                },
                a_star: Action::new(num(6)?, num(7)?),
                segment_id: rec[8].parse::<usize>().map_err(|_| AdaptError::MalformedRecord {
                    line,
                    reason: format!("segment_id is not an integer: `{}`", &rec[8]),
                })?,
            });
        }
        Ok(Self { records })
    }
}

/// Drive every grid cell for `hold_duration`, `repeats` times over, recording
/// the realized state at each control tick. Realized velocities and the
/// plant's dead-time buffer are reset at the start of every segment; each
/// segment starts from the origin pose (observations are relative, so the
/// absolute frame is irrelevant).
pub fn collect_grid_data(
    stepper: &mut dyn Stepper,
    grid: &GridSpec,
    dt: f64,
    repeats: usize,
) -> DriveLog {
    let ticks = (grid.hold_duration / dt).round() as usize;
    let mut records = Vec::with_capacity(repeats * grid.cell_count() * ticks);
    let mut segment_id = 0;
    for _ in 0..repeats {
        for &v in &grid.v_values {
            for &w in &grid.w_values {
                let cmd = Action::new(v, w);
                let mut state = VehicleState::at_pose(0.0, 0.0, 0.0);
                stepper.reset_transients();
                for k in 0..ticks {
                    state = stepper.step(&state, cmd, dt);
                    records.push(DriveRecord {
                        t: (k + 1) as f64 * dt,
                        state,
                        a_star: cmd,
                        segment_id,
                    });
                }
                segment_id += 1;
            }
        }
    }
    DriveLog { records }
}

/// How the future path is turned into waypoints for supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookaheadSpec {
    /// Number of waypoints ahead (matches the observation).
    pub count: usize,
    /// Arc-length spacing between resampled waypoints, m.
    pub spacing: f64,
}

impl Default for LookaheadSpec {
    fn default() -> Self {
        Self { count: crate::env::LOOKAHEAD, spacing: 0.5 }
    }
}

/// One supervision pair.
#[derive(Debug, Clone)]
pub struct AdaptPair {
    pub obs: Observation,
    pub a_star: Action,
    /// Grid cell this pair came from, for leak-free splitting.
    pub cell: (u64, u64),
}

/// Supervision pairs split train/validation at grid-cell granularity, so
/// adjacent ticks of one arc never straddle the split.
#[derive(Debug, Clone, Default)]
pub struct AdaptDataset {
    pub train: Vec<AdaptPair>,
    pub val: Vec<AdaptPair>,
    /// Segments skipped because their future path was shorter than the
    /// lookahead window.
    pub skipped_segments: Vec<usize>,
}

impl AdaptDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cell_key(a: Action) -> (u64, u64) {
    (a.v_cmd.to_bits(), a.omega_cmd.to_bits())
}

/// Build `(observation, command)` pairs from a drive log.
///
/// Within each segment the recorded future states act as the waypoint
/// sequence: for record `r` the waypoints are the positions at arc offsets
/// `spacing, 2*spacing, ..., count*spacing` along the recorded path,
/// linearly interpolated, with each waypoint's heading and speed taken from
/// the records around it. Records whose remaining path is shorter than the
/// window are dropped; segments yielding no pairs are reported as skipped.
///
/// `val_fraction` of the grid cells (by seeded shuffle) go to validation.
pub fn build_dataset(
    log: &DriveLog,
    lookahead: &LookaheadSpec,
    val_fraction: f64,
    seed: u64,
) -> Result<AdaptDataset, AdaptError> {
    let mut pairs: Vec<AdaptPair> = Vec::new();
    let mut skipped = Vec::new();

    let mut start = 0;
    while start < log.records.len() {
        let seg_id = log.records[start].segment_id;
        let mut end = start;
        while end < log.records.len() && log.records[end].segment_id == seg_id {
            end += 1;
        }
        let segment = &log.records[start..end];
        let produced = pairs_from_segment(segment, lookahead, &mut pairs);
        if produced == 0 {
            skipped.push(seg_id);
        }
        start = end;
    }

    if pairs.is_empty() {
        return Err(AdaptError::NoUsableSegments);
    }

    // Cell-level split: collect distinct cells in first-seen order, shuffle
    // deterministically, send the tail fraction to validation.
    let mut cells: Vec<(u64, u64)> = Vec::new();
    let mut seen = BTreeMap::new();
    for p in &pairs {
        if seen.insert(p.cell, ()).is_none() {
            cells.push(p.cell);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let n_val = ((cells.len() as f64 * val_fraction).round() as usize)
        .clamp(usize::from(cells.len() > 1), cells.len().saturating_sub(1));
    let val_cells: BTreeMap<(u64, u64), ()> =
        cells[cells.len() - n_val..].iter().map(|c| (*c, ())).collect();

    let mut dataset = AdaptDataset { skipped_segments: skipped, ..Default::default() };
    for p in pairs {
        if val_cells.contains_key(&p.cell) {
            dataset.val.push(p);
        } else {
            dataset.train.push(p);
        }
    }
    Ok(dataset)
}

/// Resample one segment's future path and emit pairs. Returns how many
/// records were usable.
fn pairs_from_segment(
    segment: &[DriveRecord],
    lookahead: &LookaheadSpec,
    out: &mut Vec<AdaptPair>,
) -> usize {
    let n = segment.len();
    if n < lookahead.count + 1 {
        return 0;
    }
    // Cumulative arc length along the recorded polyline.
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    for i in 1..n {
        let a = &segment[i - 1].state;
        let b = &segment[i].state;
        cum.push(cum[i - 1] + ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt());
    }
    let total = *cum.last().unwrap();
    let window = lookahead.count as f64 * lookahead.spacing;

    let mut produced = 0;
    for r in 0..n {
        if total - cum[r] < window {
            break; // arc length is monotone; later records have even less
        }
        let mut waypoints = Vec::with_capacity(lookahead.count + 1);
        let s_r = &segment[r].state;
        waypoints.push(Waypoint { x: s_r.x, y: s_r.y, theta: s_r.phi, v: s_r.v });
        let mut k = r;
        let mut ok = true;
        for j in 1..=lookahead.count {
            let target = cum[r] + j as f64 * lookahead.spacing;
            while k + 1 < n && cum[k + 1] < target {
                k += 1;
            }
            if k + 1 >= n {
                ok = false;
                break;
            }
            let seg_len = cum[k + 1] - cum[k];
            let frac = if seg_len > 0.0 { (target - cum[k]) / seg_len } else { 0.0 };
            let a = &segment[k].state;
            let b = &segment[k + 1].state;
            waypoints.push(Waypoint {
                x: a.x + frac * (b.x - a.x),
                y: a.y + frac * (b.y - a.y),
                theta: wrap_angle(a.phi + frac * wrap_angle(b.phi - a.phi)),
                v: a.v + frac * (b.v - a.v),
            });
        }
        if !ok {
            break;
        }
        // The mini-track is only a vehicle-relative lookahead; waypoint 0 is
        // the vehicle itself so index 0 observes waypoints 1..=count.
        let mini = match Trajectory::from_waypoints(waypoints) {
            Ok(t) => t,
            Err(_) => continue, // degenerate geometry (e.g. spin in place)
        };
        let obs = observe(&mini, s_r, 0);
        out.push(AdaptPair {
            obs,
            a_star: segment[r].a_star,
            cell: cell_key(segment[r].a_star),
        });
        produced += 1;
    }
    produced
}

/// Mean squared error between the policy's mean action and the recorded
/// commands.
pub fn dataset_mse(policy: &PolicyNet, pairs: &[AdaptPair]) -> Result<f64, AdaptError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pairs {
        let a = policy.act_mean(&p.obs)?;
        total += (a.v_cmd - p.a_star.v_cmd).powi(2) + (a.omega_cmd - p.a_star.omega_cmd).powi(2);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean analytic gradient of [`dataset_mse`] over `pairs`, chained through
/// the squash. Only used with the frozen-suffix optimizer, but the returned
/// vector covers all parameters (the frozen entries are exactly zero because
/// the loss never touches the value head or log-std).
pub fn mse_gradient(policy: &PolicyNet, pairs: &[AdaptPair]) -> Result<Vec<f64>, AdaptError> {
    let mut grads = vec![0.0; policy.n_params()];
    let inv = 1.0 / pairs.len().max(1) as f64;
    for p in pairs {
        let cache = policy.forward_cached(&p.obs)?;
        let a = cache.mean_action();
        let d = [
            2.0 * (a.v_cmd - p.a_star.v_cmd) * inv,
            2.0 * (a.omega_cmd - p.a_star.omega_cmd) * inv,
        ];
        let up = OutputGrads::from_squashed_mean(&cache, d);
        policy.backward(&cache, &up, &mut grads);
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(AdaptError::NonFiniteLoss);
    }
    Ok(grads)
}

/// Fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Epochs at which checkpoints are kept for epoch selection.
    pub epochs: Vec<usize>,
    pub lr: f64,
    pub minibatch_size: usize,
    /// Fraction of grid cells held out for validation MSE.
    pub val_fraction: f64,
    /// Times the command grid is swept during collection.
    pub grid_repeats: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: vec![10, 20, 30, 40, 50],
            lr: 1e-4,
            minibatch_size: 64,
            val_fraction: 0.1,
            grid_repeats: 3,
        }
    }
}

/// Per-epoch losses.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Result of a fine-tuning run: one checkpoint per epoch (epoch 0 is the
/// input policy) and the loss curve.
pub struct FinetuneOutput {
    pub checkpoints: Vec<(usize, PolicyNet)>,
    pub losses: Vec<EpochLoss>,
}

/// Minimize `|a* - policy_mean(o)|^2` over the training pairs for
/// `max(epochs)` epochs, snapshotting the policy after every epoch. Only the
/// trunk and mean head are updated; the value head and log-std stay
/// bit-identical to the input.
pub fn finetune(
    policy: &PolicyNet,
    data: &AdaptDataset,
    epochs: usize,
    lr: f64,
    minibatch_size: usize,
    seed: u64,
) -> Result<FinetuneOutput, AdaptError> {
    let mut current = policy.clone();
    let layout = current.layout();
    let mut opt = Adam::new(lr, current.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut checkpoints = vec![(0, current.clone())];
    let mut losses = vec![EpochLoss {
        epoch: 0,
        train_mse: dataset_mse(&current, &data.train)?,
        val_mse: dataset_mse(&current, &data.val)?,
    }];

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut batch = Vec::with_capacity(minibatch_size);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(minibatch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.train[i].clone()));
            let grads = mse_gradient(&current, &batch)?;
            let mut flat = current.to_flat();
            opt.step(&mut flat, &grads, layout.frozen_from);
            current.set_from_flat(&flat);
        }
        let train_mse = dataset_mse(&current, &data.train)?;
        let val_mse = dataset_mse(&current, &data.val)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(AdaptError::NonFiniteLoss);
        }
        losses.push(EpochLoss { epoch, train_mse, val_mse });
        checkpoints.push((epoch, current.clone()));
    }
    Ok(FinetuneOutput { checkpoints, losses })
}

/// One row of the epoch-selection report.
#[derive(Debug, Clone, Serialize)]
pub struct EpochScenarioRow {
    pub epoch: usize,
    pub scenario: String,
    pub max_pos_de: f64,
    pub max_neg_de: f64,
    pub mean_abs_de: f64,
    pub max_abs_de: f64,
    pub diverged: bool,
}

/// Epoch-selection report: per-epoch, per-scenario crosstrack statistics
/// plus the per-epoch score (max |d_e| averaged over scenarios).
#[derive(Debug, Clone, Default)]
pub struct EpochReport {
    pub rows: Vec<EpochScenarioRow>,
    pub scores: Vec<(usize, f64)>,
}

impl EpochReport {
    /// CSV with header `epoch,scenario,max_pos_de,max_neg_de,mean_abs_de`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), AdaptError> {
        let file = File::create(path.as_ref())?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["epoch", "scenario", "max_pos_de", "max_neg_de", "mean_abs_de"])?;
        for r in &self.rows {
            w.write_record([
                format!("{}", r.epoch),
                r.scenario.clone(),
                format!("{}", r.max_pos_de),
                format!("{}", r.max_neg_de),
                format!("{}", r.mean_abs_de),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate every checkpoint deterministically (mean action) on every
/// scenario and return the epoch minimizing max |d_e| averaged over
/// scenarios. A diverged rollout scores as the scenario's divergence cutoff
/// rather than aborting selection.
pub fn select_epoch(
    checkpoints: &[(usize, PolicyNet)],
    scenarios: &[Scenario],
    seed: u64,
) -> Result<(usize, EpochReport), AdaptError> {
    if checkpoints.is_empty() {
        return Err(AdaptError::TooFewCheckpoints(1));
    }
    let mut report = EpochReport::default();
    let mut best: Option<(usize, f64)> = None;
    for (epoch, policy) in checkpoints {
        let mut score_sum = 0.0;
        for (si, sc) in scenarios.iter().enumerate() {
            // Same plant seed for every checkpoint: fair comparison under
            // identical noise realizations.
            let out = evaluate_policy(policy, &sc.traj, &sc.env, seed ^ (si as u64) << 8)?;
            let score =
                if out.diverged { sc.env.divergence_cutoff } else { out.metrics.max_abs_de };
            score_sum += score;
            report.rows.push(EpochScenarioRow {
                epoch: *epoch,
                scenario: sc.name.clone(),
                max_pos_de: out.metrics.max_pos_de,
                max_neg_de: out.metrics.max_neg_de,
                mean_abs_de: out.metrics.mean_abs_de,
                max_abs_de: out.metrics.max_abs_de,
                diverged: out.diverged,
            });
        }
        let score = score_sum / scenarios.len().max(1) as f64;
        report.scores.push((*epoch, score));
        if best.map_or(true, |(_, b)| score < b) {
            best = Some((*epoch, score));
        }
    }
    Ok((best.unwrap().0, report))
}
