//! Leg blob extraction from segmentation masks and conversion of blob
//! midpoints into metric leg observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_point, FrameId, Point3, RigidTransform};
use crate::nn::SegmentationMask;
use crate::raster::{deproject_subpixel, GridSpec};

/// An 8-connected component of above-threshold mask pixels.
#[derive(Debug, Clone)]
pub struct Blob {
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// Physically plausible leg blob and pairing bounds (grid pixels are 1 cm).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LegFilter {
    pub area_min: usize,
    pub area_max: usize,
    pub separation_min: f64,
    pub separation_max: f64,
}

impl Default for LegFilter {
    fn default() -> Self {
        LegFilter { area_min: 4, area_max: 400, separation_min: 0.05, separation_max: 0.60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    NoLegSizedBlobs,
    AmbiguousCount(usize),
    SeparationOutOfRange,
}

/// Left/right leg midpoints at one instant. Invalidity is data, not an
/// error; `reason` says why a frame was rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LegObservation {
    pub left: Point3,
    pub right: Point3,
    pub frame: FrameId,
    pub timestamp: f64,
    pub valid: bool,
    pub reason: Option<InvalidReason>,
}

/// 8-connectivity components of `{p >= tau}`, largest first; ties broken
/// by the smallest (pixel_x, pixel_y) member.
pub fn connected_components(mask: &SegmentationMask, tau: f64) -> Vec<Blob> {
    let (h, w) = mask.probabilities.dim();
    let above = |x: usize, y: usize| mask.probabilities[(x, y)] as f64 >= tau;
    let mut visited = vec![false; h * w];
    let mut blobs = Vec::new();
    for sx in 0..h {
        for sy in 0..w {
            if visited[sx * w + sy] || !above(sx, sy) {
                continue;
            }
            let mut pixels = Vec::new();
            let mut stack = vec![(sx, sy)];
            visited[sx * w + sy] = true;
            while let Some((x, y)) = stack.pop() {
                pixels.push((x, y));
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= h as i64 || ny >= w as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !visited[nx * w + ny] && above(nx, ny) {
                            visited[nx * w + ny] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            pixels.sort_unstable();
            let area = pixels.len();
            let (sx_sum, sy_sum) = pixels
                .iter()
                .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
            blobs.push(Blob {
                centroid: (sx_sum / area as f64, sy_sum / area as f64),
                area,
                pixels,
            });
        }
    }
    blobs.sort_by(|a, b| b.area.cmp(&a.area).then(a.pixels[0].cmp(&b.pixels[0])));
    blobs
}

/// Keeps blobs inside the leg area band.
pub fn leg_sized<'a>(blobs: &'a [Blob], filter: &LegFilter) -> Vec<&'a Blob> {
    blobs
        .iter()
        .filter(|b| b.area >= filter.area_min && b.area <= filter.area_max)
        .collect()
}

/// Turns one frame's blobs into a laser-frame leg observation.
///
/// Exactly two leg-sized blobs whose deprojected centroids sit within the
/// separation band make a valid observation; left/right is assigned by the
/// sign of y in the laser frame (left has the larger y).
pub fn extract_leg_midpoints(
    blobs: &[Blob],
    spec: &GridSpec,
    filter: &LegFilter,
    timestamp: f64,
) -> LegObservation {
    let candidates = leg_sized(blobs, filter);
    let invalid = |reason: InvalidReason| LegObservation {
        left: Point3::new(0.0, 0.0, 0.0),
        right: Point3::new(0.0, 0.0, 0.0),
        frame: FrameId::Laser,
        timestamp,
        valid: false,
        reason: Some(reason),
    };
    if candidates.is_empty() {
        return invalid(InvalidReason::NoLegSizedBlobs);
    }
    if candidates.len() != 2 {
        return invalid(InvalidReason::AmbiguousCount(candidates.len()));
    }
    let p0 = deproject_subpixel(candidates[0].centroid.0, candidates[0].centroid.1, spec);
    let p1 = deproject_subpixel(candidates[1].centroid.0, candidates[1].centroid.1, spec);
    let sep = p0.distance(&p1);
    // closed interval; the slack keeps exact-boundary separations valid
    if sep < filter.separation_min - 1e-9 || sep > filter.separation_max + 1e-9 {
        return invalid(InvalidReason::SeparationOutOfRange);
    }
    let (left, right) = if p0.y >= p1.y { (p0, p1) } else { (p1, p0) };
    LegObservation {
        left,
        right,
        frame: FrameId::Laser,
        timestamp,
        valid: true,
        reason: None,
    }
}

/// Expresses a valid observation in the transform's target frame.
pub fn to_robot_frame(obs: &LegObservation, m: &RigidTransform) -> Result<LegObservation> {
    if m.source != obs.frame {
        return Err(Error::FrameMismatch { expected: obs.frame, got: m.source });
    }
    Ok(LegObservation {
        left: transform_point(&obs.left, m)?,
        right: transform_point(&obs.right, m)?,
        frame: m.target,
        ..obs.clone()
    })
}

/// Optional camera-branch gate: upper-body keypoints confirm a person is
/// present; without confirmation the laser observation is demoted to
/// invalid.
pub fn gate_by_upper_body(obs: &LegObservation, confirmed: bool) -> LegObservation {
    if confirmed || !obs.valid {
        obs.clone()
    } else {
        LegObservation {
            valid: false,
            reason: Some(InvalidReason::NoLegSizedBlobs),
            ..obs.clone()
        }
    }
}
