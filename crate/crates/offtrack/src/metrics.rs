//! Trajectory logs and crosstrack summary metrics.
//!
//! Every controller run (policy rollout or ILQR) produces the same per-tick
//! log, persisted as CSV, and is scored by the same crosstrack statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{closest_waypoint, crosstrack_error, Trajectory};
use crate::vehicle::{Action, VehicleState};

/// One control tick of a run: time, realized state, and the command applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
    pub omega: f64,
    pub v_cmd: f64,
    pub omega_cmd: f64,
}

impl Tick {
    pub fn new(t: f64, s: &VehicleState, a: Action) -> Self {
        Self {
            t,
            x: s.x,
            y: s.y,
            phi: s.phi,
            v: s.v,
            omega: s.omega,
            v_cmd: a.v_cmd,
            omega_cmd: a.omega_cmd,
        }
    }
}

/// A time-ordered controller run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub ticks: Vec<Tick>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory log is empty")]
    EmptyLog,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl TrajectoryLog {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let file = File::create(path.as_ref())?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for tick in &self.ticks {
            w.serialize(tick)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let file = File::open(path.as_ref())?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let mut ticks = Vec::new();
        for rec in r.deserialize() {
            ticks.push(rec?);
        }
        Ok(Self { ticks })
    }
}

/// Crosstrack summary of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Largest excursion to the left of the track, m (>= 0).
    pub max_pos_de: f64,
    /// Largest excursion to the right of the track, m (<= 0).
    pub max_neg_de: f64,
    /// max(max_pos_de, -max_neg_de).
    pub max_abs_de: f64,
    pub mean_abs_de: f64,
    /// Mean |v_waypoint - v_realized|, m/s.
    pub mean_vel_err: f64,
    /// Reached the final waypoint without exceeding the divergence cutoff.
    pub completed: bool,
}

/// Score a run against a track. The closest-waypoint index starts from an
/// exhaustive search at the first tick and then advances monotonically, so
/// self-intersecting tracks (figure-eight) are scored consistently.
pub fn compute_metrics(
    log: &TrajectoryLog,
    traj: &Trajectory,
    divergence_cutoff: f64,
) -> Result<Metrics, MetricsError> {
    let first = log.ticks.first().ok_or(MetricsError::EmptyLog)?;
    let n = traj.len();
    let mut idx = closest_waypoint(traj, first.x, first.y, 0, n);

    let mut max_pos = 0.0f64;
    let mut max_neg = 0.0f64;
    let mut abs_sum = 0.0;
    let mut vel_sum = 0.0;
    for tick in &log.ticks {
        idx = closest_waypoint(traj, tick.x, tick.y, idx, crate::trajectory::DEFAULT_SEARCH_WINDOW);
        let d_e = crosstrack_error(traj, tick.x, tick.y, idx);
        max_pos = max_pos.max(d_e);
        max_neg = max_neg.min(d_e);
        abs_sum += d_e.abs();
        vel_sum += (traj.waypoints()[idx].v - tick.v).abs();
    }
    let count = log.ticks.len() as f64;
    let max_abs = max_pos.max(-max_neg);
    Ok(Metrics {
        max_pos_de: max_pos,
        max_neg_de: max_neg,
        max_abs_de: max_abs,
        mean_abs_de: abs_sum / count,
        mean_vel_err: vel_sum / count,
        completed: idx == n - 1 && max_abs <= divergence_cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{generate_track, TrackKind};
    use approx::assert_abs_diff_eq;

    fn straight() -> Trajectory {
        generate_track(TrackKind::Straight, 10.0, 0.5, 2.0).unwrap()
    }

    fn tick_at(t: f64, x: f64, y: f64) -> Tick {
        Tick { t, x, y, phi: 0.0, v: 2.0, omega: 0.0, v_cmd: 2.0, omega_cmd: 0.0 }
    }

    #[test]
    fn empty_log_is_error() {
        let log = TrajectoryLog::default();
        assert!(matches!(compute_metrics(&log, &straight(), 4.0), Err(MetricsError::EmptyLog)));
    }

    #[test]
    fn on_track_log_is_all_zero_and_completed() {
        let traj = straight();
        let ticks: Vec<Tick> =
            (0..=20).map(|i| tick_at(i as f64 * 0.25, i as f64 * 0.5, 0.0)).collect();
        let m = compute_metrics(&TrajectoryLog { ticks }, &traj, 4.0).unwrap();
        assert_eq!(m.max_pos_de, 0.0);
        assert_eq!(m.max_neg_de, 0.0);
        assert_eq!(m.max_abs_de, 0.0);
        assert_eq!(m.mean_abs_de, 0.0);
        assert_eq!(m.mean_vel_err, 0.0);
        assert!(m.completed);
    }

    #[test]
    fn single_positive_excursion() {
        let traj = straight();
        let mut ticks: Vec<Tick> =
            (0..=20).map(|i| tick_at(i as f64 * 0.25, i as f64 * 0.5, 0.0)).collect();
        ticks[10].y = 0.7;
        let m = compute_metrics(&TrajectoryLog { ticks }, &traj, 4.0).unwrap();
        assert_abs_diff_eq!(m.max_pos_de, 0.7, epsilon = 1e-12);
        assert_eq!(m.max_neg_de, 0.0);
        assert_abs_diff_eq!(m.max_abs_de, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn incomplete_run_is_flagged() {
        let traj = straight();
        let ticks: Vec<Tick> =
            (0..=5).map(|i| tick_at(i as f64 * 0.25, i as f64 * 0.5, 0.0)).collect();
        let m = compute_metrics(&TrajectoryLog { ticks }, &traj, 4.0).unwrap();
        assert!(!m.completed);
    }

    /// Brute-force oracle: extrema over per-tick crosstrack values computed
    /// with a fully exhaustive closest-waypoint scan.
    #[test]
    fn extrema_match_exhaustive_scan() {
        let traj = generate_track(TrackKind::Circle, 10.0, 0.5, 4.0).unwrap();
        let mut rng = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        // A noisy walk around the circle.
        let mut ticks = Vec::new();
        for i in 0..200 {
            let a = i as f64 * 0.01 * std::f64::consts::PI;
            let r = 10.0 + (next() - 0.5) * 1.5;
            ticks.push(tick_at(i as f64 * 0.05, r * a.cos(), r * a.sin()));
        }
        let log = TrajectoryLog { ticks };
        let m = compute_metrics(&log, &traj, 4.0).unwrap();

        let mut max_pos = 0.0f64;
        let mut max_neg = 0.0f64;
        for tick in &log.ticks {
            let idx = closest_waypoint(&traj, tick.x, tick.y, 0, traj.len());
            let d = crosstrack_error(&traj, tick.x, tick.y, idx);
            max_pos = max_pos.max(d);
            max_neg = max_neg.min(d);
        }
        assert_abs_diff_eq!(m.max_pos_de, max_pos, epsilon = 1e-12);
        assert_abs_diff_eq!(m.max_neg_de, max_neg, epsilon = 1e-12);
    }

    #[test]
    fn log_csv_roundtrip() {
        let ticks: Vec<Tick> = (0..30)
            .map(|i| Tick {
                t: i as f64 * 0.05,
                x: (i as f64 * 0.37).sin() * 3.0,
                y: (i as f64 * 0.21).cos(),
                phi: (i as f64 * 0.11).sin(),
                v: 2.0 + 0.1 * i as f64,
                omega: -0.3,
                v_cmd: 2.5,
                omega_cmd: 0.1,
            })
            .collect();
        let log = TrajectoryLog { ticks };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.save_csv(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,x,y,phi,v,omega,v_cmd,omega_cmd"));
        let log2 = TrajectoryLog::load_csv(&path).unwrap();
        assert_eq!(log, log2);
    }
}
