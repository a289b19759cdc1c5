//! Standing-protocol evaluation: runs a segmenter over the 18 protocol
//! trials and scores leg detection and false positives against ground
//! truth. Percentages are displayed with one truncated decimal.

use serde::{Deserialize, Serialize};

use crate::blob::{connected_components, leg_sized, Blob, LegFilter};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::nn::SegmentationMask;
use crate::raster::{deproject_subpixel, rasterize, GridSpec, OccupancyGrid};
use crate::scan::LaserScan;
use crate::sim::{cast_scan, GroundTruth, LaserSpec, Scene};

/// A blob counts as a detected leg when its centroid lands within this
/// distance (m) of a ground-truth leg center.
pub const DETECT_THRESHOLD: f64 = 0.05;
/// A leg-sized blob farther than this (m) from both true legs is a false
/// positive.
pub const FALSE_POSITIVE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    /// 1 = sparse clutter, 2 = heavy clutter.
    pub scenario: usize,
    /// Location index 0..9 within the scenario.
    pub location: usize,
    pub legs_detected: bool,
    pub false_positive: bool,
    /// Laser-frame centroids of every leg-sized blob.
    pub centroids: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: usize,
    pub trials: usize,
    pub detected: usize,
    pub false_positives: usize,
}

/// Aggregate counts and rates. JSON keeps full-precision percentages;
/// table display truncates to one decimal (see [`percent_truncated`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Total trials.
    pub n_t: usize,
    /// Trials with both legs detected.
    pub n_s: usize,
    /// Trials with a false positive.
    pub n_f: usize,
    /// Detection accuracy percent, full precision.
    pub acc: f64,
    /// False-positive rate percent, full precision.
    pub fp: f64,
    /// Extra per-scenario breakdown (not part of the aggregate table).
    pub per_scenario: Vec<ScenarioSummary>,
}

/// Full machine-readable report for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub trials: Vec<TrialResult>,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    pub detect: f64,
    pub false_positive: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { detect: DETECT_THRESHOLD, false_positive: FALSE_POSITIVE_THRESHOLD }
    }
}

/// Ratio as a percentage with exactly one decimal digit, truncated (not
/// rounded): 14/18 -> "77.7", 17/18 -> "94.4".
pub fn percent_truncated(numerator: usize, denominator: usize) -> String {
    let v = numerator * 1000 / denominator;
    format!("{}.{}", v / 10, v % 10)
}

/// Detection accuracy in percent: n_s / n_t * 100, full precision.
pub fn accuracy(n_s: usize, n_t: usize) -> Result<f64> {
    if n_t == 0 {
        return Err(Error::InvalidArgument("accuracy: n_t must be > 0".into()));
    }
    Ok(n_s as f64 / n_t as f64 * 100.0)
}

/// False-positive rate in percent: n_f / n_t * 100, full precision.
pub fn fp_rate(n_f: usize, n_t: usize) -> Result<f64> {
    if n_t == 0 {
        return Err(Error::InvalidArgument("fp_rate: n_t must be > 0".into()));
    }
    Ok(n_f as f64 / n_t as f64 * 100.0)
}

/// A laser only sees the near surface of a leg, so a blob's centroid sits
/// in front of the disk center. For beams spread uniformly across the
/// silhouette of a disk of radius R the mean depth of the visible arc is
/// (pi/4)*R; push the centroid that far away from the laser to estimate
/// the center.
const ARC_CENTER_OFFSET: f64 = std::f64::consts::FRAC_PI_4 * crate::sim::DEFAULT_LEG_RADIUS;

fn blob_centroids_laser(blobs: &[&Blob], spec: &GridSpec) -> Vec<Point3> {
    blobs
        .iter()
        .map(|b| {
            let p = deproject_subpixel(b.centroid.0, b.centroid.1, spec);
            let d = p.x.hypot(p.y);
            if d > 1e-9 {
                Point3::new(
                    p.x * (d + ARC_CENTER_OFFSET) / d,
                    p.y * (d + ARC_CENTER_OFFSET) / d,
                    0.0,
                )
            } else {
                p
            }
        })
        .collect()
}

/// Scores one segmentation against the true leg centers.
///
/// Detection requires exactly two leg-sized blobs whose centroids match the
/// two true legs one-to-one within `thresholds.detect`. Any leg-sized blob
/// at least `thresholds.false_positive` from both true legs is a false
/// positive regardless of how many blobs there are.
pub fn classify_trial(
    mask: &SegmentationMask,
    truth: &GroundTruth,
    spec: &GridSpec,
    filter: &LegFilter,
    thresholds: &Thresholds,
    scenario: usize,
    location: usize,
) -> TrialResult {
    let blobs = connected_components(mask, mask.threshold);
    let candidates = leg_sized(&blobs, filter);
    let centroids = blob_centroids_laser(&candidates, spec);
    let [t0, t1] = &truth.leg_centers_laser;

    let legs_detected = centroids.len() == 2 && {
        let d = |a: &Point3, b: &Point3| a.distance(b);
        (d(&centroids[0], t0) <= thresholds.detect && d(&centroids[1], t1) <= thresholds.detect)
            || (d(&centroids[0], t1) <= thresholds.detect
                && d(&centroids[1], t0) <= thresholds.detect)
    };
    let false_positive = centroids
        .iter()
        .any(|c| c.distance(t0) >= thresholds.false_positive && c.distance(t1) >= thresholds.false_positive);

    TrialResult {
        scenario,
        location,
        legs_detected,
        false_positive,
        centroids: centroids.iter().map(|c| [c.x, c.y]).collect(),
    }
}

/// Aggregates trial results; errors on an empty set.
pub fn summarize(results: &[TrialResult]) -> Result<EvalSummary> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no trials to summarize".into()));
    }
    let mut per_scenario: Vec<ScenarioSummary> = Vec::new();
    for r in results {
        let entry = match per_scenario.iter_mut().find(|s| s.scenario == r.scenario) {
            Some(e) => e,
            None => {
                per_scenario.push(ScenarioSummary {
                    scenario: r.scenario,
                    trials: 0,
                    detected: 0,
                    false_positives: 0,
                });
                per_scenario.last_mut().unwrap()
            }
        };
        entry.trials += 1;
        entry.detected += r.legs_detected as usize;
        entry.false_positives += r.false_positive as usize;
    }
    let detected = results.iter().filter(|r| r.legs_detected).count();
    let false_positives = results.iter().filter(|r| r.false_positive).count();
    Ok(EvalSummary {
        n_t: results.len(),
        n_s: detected,
        n_f: false_positives,
        acc: accuracy(detected, results.len())?,
        fp: fp_rate(false_positives, results.len())?,
        per_scenario,
    })
}

/// Clutter-naive baseline: every occupied pixel is treated as person, so
/// clutter blobs in the leg-size band survive and confuse the pairing.
pub fn baseline_segment(grid: &OccupancyGrid) -> SegmentationMask {
    SegmentationMask::from_binary_grid(grid, 0.5)
}

/// Runs a segmenter over protocol trials. The segmenter maps an occupancy
/// grid to a probability mask; scans are re-cast from each scene's own
/// seed so results depend only on the trial set and the segmenter.
pub fn run_protocol(
    trials: &[(Scene, GroundTruth)],
    thresholds: &Thresholds,
    mut segment: impl FnMut(&OccupancyGrid) -> Result<SegmentationMask>,
) -> Result<Vec<TrialResult>> {
    let spec = GridSpec::default();
    let laser = LaserSpec::default();
    let filter = LegFilter::default();
    let mut results = Vec::with_capacity(trials.len());
    for (idx, (scene, truth)) in trials.iter().enumerate() {
        let scan: LaserScan = cast_scan(scene, &laser, scene.seed);
        let grid = rasterize(&scan, &spec);
        let mask = segment(&grid)?;
        results.push(classify_trial(
            &mask,
            truth,
            &spec,
            &filter,
            thresholds,
            idx / 9 + 1,
            idx % 9,
        ));
    }
    Ok(results)
}

/// Human-readable results table.
pub fn format_table(summary: &EvalSummary) -> String {
    let mut out = String::new();
    out.push_str("Scenario   Legs detected   False positives\n");
    for s in &summary.per_scenario {
        out.push_str(&format!(
            "{:<10} {:>6}/{:<8} {:>8}/{}\n",
            s.scenario, s.detected, s.trials, s.false_positives, s.trials
        ));
    }
    out.push_str(&format!(
        "overall    {:>6}/{:<2} ({}%) {:>4}/{} ({}%)\n",
        summary.n_s,
        summary.n_t,
        percent_truncated(summary.n_s, summary.n_t),
        summary.n_f,
        summary.n_t,
        percent_truncated(summary.n_f, summary.n_t)
    ));
    out
}
