//! Waypoint tracks: representation, CSV I/O, nearest-waypoint search,
//! signed crosstrack error, and synthetic track generation.
//!
//! A track is an ordered list of waypoints `(x, y, theta, v)`. All angles are
//! radians wrapped to `(-pi, pi]`, all distances are meters, speeds are m/s.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    // rem_euclid maps -pi to +pi already; keep the boundary on +pi.
    if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// A single track sample: position, desired orientation, desired speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Desired vehicle orientation, wrapped to `(-pi, pi]`.
    pub theta: f64,
    /// Desired speed, >= 0.
    pub v: f64,
}

/// An ordered waypoint track (at least two, no coincident neighbors).
#[derive(Debug, Clone)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    spacing_hint: f64,
}

/// Default forward-search window for [`closest_waypoint`].
pub const DEFAULT_SEARCH_WINDOW: usize = 20;

/// Two waypoints closer than this are considered coincident.
const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
    #[error("track has {0} waypoint(s), need at least 2")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} are coincident")]
    CoincidentWaypoints(usize, usize),
    #[error("invalid track parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Trajectory {
    /// Build a track from raw waypoints, validating the invariants.
    /// Headings are wrapped into `(-pi, pi]`.
    pub fn from_waypoints(mut waypoints: Vec<Waypoint>) -> Result<Self, TrajectoryError> {
        if waypoints.len() < 2 {
            return Err(TrajectoryError::TooFewWaypoints(waypoints.len()));
        }
        for w in &mut waypoints {
            w.theta = wrap_angle(w.theta);
        }
        let mut total = 0.0;
        for i in 1..waypoints.len() {
            let d = dist(&waypoints[i - 1], &waypoints[i]);
            if d <= COINCIDENT_EPS {
                return Err(TrajectoryError::CoincidentWaypoints(i - 1, i));
            }
            total += d;
        }
        let spacing_hint = total / (waypoints.len() - 1) as f64;
        Ok(Self { waypoints, spacing_hint })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Nominal inter-waypoint distance (mean over consecutive pairs).
    pub fn spacing_hint(&self) -> f64 {
        self.spacing_hint
    }

    /// Cumulative arc length from waypoint 0 to waypoint `i` along the polyline.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.waypoints.len());
        let mut s = 0.0;
        out.push(0.0);
        for i in 1..self.waypoints.len() {
            s += dist(&self.waypoints[i - 1], &self.waypoints[i]);
            out.push(s);
        }
        out
    }
}

fn dist(a: &Waypoint, b: &Waypoint) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Load a track from a CSV file with header `x,y,theta,v`.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, TrajectoryError> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let expected = ["x", "y", "theta", "v"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(TrajectoryError::MalformedRecord {
            line: 1,
            reason: format!("expected header `x,y,theta,v`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut waypoints = Vec::new();
    for result in reader.records() {
        let record = result?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(TrajectoryError::MalformedRecord {
                line,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let mut vals = [0.0f64; 4];
        for (k, field) in record.iter().enumerate() {
            vals[k] = field.parse::<f64>().map_err(|_| TrajectoryError::MalformedRecord {
                line,
                reason: format!("field `{}` is not a number: `{}`", expected[k], field),
            })?;
            if !vals[k].is_finite() {
                return Err(TrajectoryError::MalformedRecord {
                    line,
                    reason: format!("field `{}` is not finite", expected[k]),
                });
            }
        }
        if vals[3] < 0.0 {
            return Err(TrajectoryError::MalformedRecord {
                line,
                reason: format!("speed must be >= 0, found {}", vals[3]),
            });
        }
        waypoints.push(Waypoint { x: vals[0], y: vals[1], theta: vals[2], v: vals[3] });
    }
    Trajectory::from_waypoints(waypoints)
}

/// Write a track as CSV with header `x,y,theta,v`. Floats are written in
/// shortest round-trip form, so `load_trajectory(save(t))` is value-exact.
pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(["x", "y", "theta", "v"])?;
    for w in traj.waypoints() {
        writer.write_record([
            format!("{}", w.x),
            format!("{}", w.y),
            format!("{}", w.theta),
            format!("{}", w.v),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Index of the waypoint nearest to `(x, y)`, searched in the forward window
/// `[prev_index, prev_index + window]` (clamped at the end of the track).
/// Ties break toward the larger index, which keeps tracking monotone at
/// midpoints between waypoints.
pub fn closest_waypoint(
    traj: &Trajectory,
    x: f64,
    y: f64,
    prev_index: usize,
    window: usize,
) -> usize {
    let n = traj.len();
    let lo = prev_index.min(n - 1);
    let hi = prev_index.saturating_add(window).min(n - 1);
    let mut best = lo;
    let mut best_d2 = f64::INFINITY;
    for (i, w) in traj.waypoints[lo..=hi].iter().enumerate() {
        let d2 = (w.x - x).powi(2) + (w.y - y).powi(2);
        if d2 <= best_d2 {
            best_d2 = d2;
            best = lo + i;
        }
    }
    best
}

/// Signed perpendicular distance from `(x, y)` to the track direction at
/// waypoint `i`: positive when the point lies to the LEFT of the direction of
/// travel, negative to the right.
///
/// The direction is `w[i+1] - w[i]`, or `w[i] - w[i-1]` at the last waypoint.
pub fn crosstrack_error(traj: &Trajectory, x: f64, y: f64, i: usize) -> f64 {
    let n = traj.len();
    debug_assert!(i < n);
    let (a, b) = if i + 1 < n {
        (&traj.waypoints[i], &traj.waypoints[i + 1])
    } else {
        (&traj.waypoints[i - 1], &traj.waypoints[i])
    };
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len = (dx * dx + dy * dy).sqrt();
    let (tx, ty) = (dx / len, dy / len);
    let w = &traj.waypoints[i];
    let ex = x - w.x;
    let ey = y - w.y;
    // z-component of tangent x error: positive iff the point is left of travel.
    tx * ey - ty * ex
}

/// Synthetic track family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackKind {
    Circle,
    FigureEight,
    Straight,
}

/// Generate a synthetic track sampled at `spacing` arc-length intervals, with
/// headings along the path tangent and constant desired speed.
///
/// * `Circle`: counter-clockwise circle of radius `size`, starting at the
///   rightmost point heading +y.
/// * `FigureEight`: a left lobe followed by a right lobe, both of radius
///   `size`, crossing at the origin with a continuous tangent.
/// * `Straight`: a segment of length `size` along +x.
pub fn generate_track(
    kind: TrackKind,
    size: f64,
    spacing: f64,
    speed: f64,
) -> Result<Trajectory, TrajectoryError> {
    if !(spacing > 0.0) {
        return Err(TrajectoryError::InvalidParams(format!("spacing must be > 0, got {spacing}")));
    }
    if !(size > spacing) {
        return Err(TrajectoryError::InvalidParams(format!(
            "radius/length ({size}) must exceed spacing ({spacing})"
        )));
    }
    if !(speed >= 0.0) {
        return Err(TrajectoryError::InvalidParams(format!("speed must be >= 0, got {speed}")));
    }

    let waypoints = match kind {
        TrackKind::Circle => {
            let circumference = 2.0 * std::f64::consts::PI * size;
            let n = (circumference / spacing).round().max(3.0) as usize;
            (0..n)
                .map(|i| {
                    let alpha = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    Waypoint {
                        x: size * alpha.cos(),
                        y: size * alpha.sin(),
                        theta: wrap_angle(alpha + std::f64::consts::FRAC_PI_2),
                        v: speed,
                    }
                })
                .collect()
        }
        TrackKind::FigureEight => {
            // Left lobe: center (0, R), heading t; right lobe: center (0, -R),
            // heading -t. Both start and end at the origin heading +x, so the
            // tangent is continuous across the crossover.
            let circumference = 2.0 * std::f64::consts::PI * size;
            let n_lobe = (circumference / spacing).round().max(3.0) as usize;
            let mut pts = Vec::with_capacity(2 * n_lobe);
            for i in 0..n_lobe {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n_lobe as f64;
                pts.push(Waypoint {
                    x: size * t.sin(),
                    y: size * (1.0 - t.cos()),
                    theta: wrap_angle(t),
                    v: speed,
                });
            }
            for i in 0..n_lobe {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n_lobe as f64;
                pts.push(Waypoint {
                    x: size * t.sin(),
                    y: -size * (1.0 - t.cos()),
                    theta: wrap_angle(-t),
                    v: speed,
                });
            }
            pts
        }
        TrackKind::Straight => {
            let n = (size / spacing).round() as usize + 1;
            (0..n)
                .map(|i| Waypoint { x: i as f64 * spacing, y: 0.0, theta: 0.0, v: speed })
                .collect()
        }
    };
    Trajectory::from_waypoints(waypoints)
}
