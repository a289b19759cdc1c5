//! Leg tracking over time and gait parameter estimation.

use serde::{Deserialize, Serialize};

use crate::blob::LegObservation;
use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Maximum plausible foot speed used by the association gate.
pub const MAX_FOOT_SPEED: f64 = 3.0;
/// Observation gaps longer than this start a new track segment.
pub const MAX_GAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub p: Point3,
    /// False when this point starts a new segment after a long gap or an
    /// implausible jump.
    pub continuous: bool,
}

/// One foot's time series in a fixed frame.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LegTrack {
    pub points: Vec<TrackPoint>,
}

impl LegTrack {
    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Greedy nearest-neighbor association of leg observations onto two
/// tracks, with the left/right swap hypothesis resolved by minimum total
/// displacement.
#[derive(Debug, Default)]
pub struct LegTracker {
    tracks: [LegTrack; 2],
    last_t: Option<f64>,
}

impl LegTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: &LegObservation) -> Result<()> {
        if let Some(last) = self.last_t {
            if obs.timestamp <= last {
                return Err(Error::InvalidArgument(format!(
                    "timestamps must increase: {} after {last}",
                    obs.timestamp
                )));
            }
        }
        if !obs.valid {
            return Ok(());
        }
        let t = obs.timestamp;
        let (heads, dt) = match (self.tracks[0].points.last(), self.tracks[1].points.last()) {
            (Some(a), Some(b)) => ((a.p, b.p), t - a.t.max(b.t)),
            _ => {
                // first valid observation seeds both tracks
                for (track, p) in self.tracks.iter_mut().zip([obs.left, obs.right]) {
                    track.points.push(TrackPoint { t, p, continuous: false });
                }
                self.last_t = Some(t);
                return Ok(());
            }
        };
        let direct = heads.0.distance(&obs.left) + heads.1.distance(&obs.right);
        let swapped = heads.0.distance(&obs.right) + heads.1.distance(&obs.left);
        let (p0, p1) = if direct <= swapped {
            (obs.left, obs.right)
        } else {
            (obs.right, obs.left)
        };
        let gap_break = dt > MAX_GAP;
        for (track, p) in self.tracks.iter_mut().zip([p0, p1]) {
            let head = track.points.last().unwrap().p;
            let jump_break = head.distance(&p) > MAX_FOOT_SPEED * dt;
            track.points.push(TrackPoint { t, p, continuous: !(gap_break || jump_break) });
        }
        self.last_t = Some(t);
        Ok(())
    }

    pub fn finish(self) -> [LegTrack; 2] {
        self.tracks
    }
}

/// Consumes a whole observation stream.
pub fn track_legs<'a>(stream: impl IntoIterator<Item = &'a LegObservation>) -> Result<[LegTrack; 2]> {
    let mut tracker = LegTracker::new();
    for obs in stream {
        tracker.push(obs)?;
    }
    Ok(tracker.finish())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaitConfig {
    /// Stance events are speed minima below this (m/s).
    pub stance_speed_threshold: f64,
    /// Minimum spacing between stance events (s).
    pub stance_min_spacing: f64,
    /// Moving-average window (samples) applied to positions before
    /// differentiating; counters centroid jitter.
    pub smooth_window: usize,
    /// Successive stance positions closer than this are not a stride
    /// (rejects a standing foot re-detected in place).
    pub min_stride_length: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            stance_speed_threshold: 0.1,
            stance_min_spacing: 0.2,
            smooth_window: 5,
            min_stride_length: 0.15,
        }
    }
}

/// Stride parameters recovered from two foot tracks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaitReport {
    pub stride_length: f64,
    pub stride_duration: f64,
    pub stride_velocity: f64,
    pub walking_direction: f64,
    pub cadence: f64,
    pub strides_observed: usize,
}

fn smooth(points: &[TrackPoint], window: usize) -> Vec<TrackPoint> {
    if window <= 1 {
        return points.to_vec();
    }
    let half = window / 2;
    let n = points.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let m = (hi - lo) as f64;
            let (mut x, mut y) = (0.0, 0.0);
            for p in &points[lo..hi] {
                x += p.p.x;
                y += p.p.y;
            }
            TrackPoint {
                t: points[i].t,
                p: Point3::new(x / m, y / m, 0.0),
                continuous: points[i].continuous,
            }
        })
        .collect()
}

/// Stance positions of one foot: local speed minima below the threshold,
/// separated by at least the configured spacing.
fn stance_positions(track: &LegTrack, cfg: &GaitConfig) -> Vec<(f64, Point3)> {
    let pts = smooth(&track.points, cfg.smooth_window);
    if pts.len() < 3 {
        return Vec::new();
    }
    // central-difference speed
    let mut speed = vec![0.0; pts.len()];
    for i in 1..pts.len() - 1 {
        let dt = pts[i + 1].t - pts[i - 1].t;
        if dt > 0.0 {
            speed[i] = pts[i + 1].p.distance(&pts[i - 1].p) / dt;
        }
    }
    speed[0] = speed[1];
    let last = pts.len() - 1;
    speed[last] = speed[last - 1];

    let mut events: Vec<(f64, Point3, f64)> = Vec::new();
    for i in 1..last {
        if speed[i] > cfg.stance_speed_threshold {
            continue;
        }
        if speed[i] <= speed[i - 1] && speed[i] <= speed[i + 1] {
            match events.last() {
                Some(&(t_prev, _, s_prev)) if pts[i].t - t_prev < cfg.stance_min_spacing => {
                    if speed[i] < s_prev {
                        *events.last_mut().unwrap() = (pts[i].t, pts[i].p, speed[i]);
                    }
                }
                _ => events.push((pts[i].t, pts[i].p, speed[i])),
            }
        }
    }
    events.into_iter().map(|(t, p, _)| (t, p)).collect()
}

/// Recovers stride length, duration, velocity, cadence, and walking
/// direction from a pair of foot tracks spanning at least two gait cycles.
pub fn estimate_gait(tracks: &[LegTrack; 2]) -> Result<GaitReport> {
    estimate_gait_with(tracks, &GaitConfig::default())
}

pub fn estimate_gait_with(tracks: &[LegTrack; 2], cfg: &GaitConfig) -> Result<GaitReport> {
    let mut lengths = Vec::new();
    let mut durations = Vec::new();
    for track in tracks {
        let stances = stance_positions(track, cfg);
        for pair in stances.windows(2) {
            let length = pair[1].1.distance(&pair[0].1);
            if length < cfg.min_stride_length {
                continue;
            }
            durations.push(pair[1].0 - pair[0].0);
            lengths.push(length);
        }
    }
    if lengths.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "found {} strides, need at least 2",
            lengths.len()
        )));
    }
    let stride_length = lengths.iter().sum::<f64>() / lengths.len() as f64;
    let stride_duration = durations.iter().sum::<f64>() / durations.len() as f64;
    let stride_velocity = stride_length / stride_duration;

    // walking direction: net displacement of the two-foot midpoint
    let n = tracks[0].points.len().min(tracks[1].points.len());
    let mid = |i: usize| {
        let a = tracks[0].points[i].p;
        let b = tracks[1].points[i].p;
        Point3::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0, 0.0)
    };
    let walking_direction = if n >= 2 {
        let d = (mid(n - 1).x - mid(0).x, mid(n - 1).y - mid(0).y);
        d.1.atan2(d.0)
    } else {
        0.0
    };

    Ok(GaitReport {
        stride_length,
        stride_duration,
        stride_velocity,
        walking_direction,
        cadence: 1.0 / stride_duration,
        strides_observed: lengths.len(),
    })
}
