//! Laser ranges to occupancy-grid pixels and back.
//!
//! The forward map places each beam endpoint `(d cos i, d sin i)` at pixel
//! `(round(x*100) + l, round(y*100) + l)` on a 256x256 grid, 1 cm per pixel,
//! origin at the grid center. `deproject_cell` is its exact algebraic
//! inverse. Rows of the grid are indexed by `pixel_x`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::scan::LaserScan;

pub const PIXELS_PER_METER: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub matrix_length: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { matrix_length: 256 }
    }
}

impl GridSpec {
    pub fn new(matrix_length: usize) -> Result<Self> {
        if matrix_length < 64 || matrix_length % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix_length {matrix_length} must be even and >= 64"
            )));
        }
        Ok(GridSpec { matrix_length })
    }

    /// Half the grid side, the pixel coordinate of the laser origin.
    pub fn half(&self) -> usize {
        self.matrix_length / 2
    }
}

/// Binary grayscale occupancy image; pixels are exactly 0 or 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pixels: Vec<u8>,
}

impl OccupancyGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        OccupancyGrid {
            spec,
            pixels: vec![0; spec.matrix_length * spec.matrix_length],
        }
    }

    pub fn from_pixels(spec: GridSpec, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != spec.matrix_length * spec.matrix_length {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} does not match {0}x{0} grid",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|&p| p != 0 && p != 255) {
            return Err(Error::Format {
                offset: bad,
                message: format!("pixel value {} is not 0 or 255", pixels[bad]),
            });
        }
        Ok(OccupancyGrid { spec, pixels })
    }

    #[inline]
    pub fn get(&self, pixel_x: usize, pixel_y: usize) -> u8 {
        self.pixels[pixel_x * self.spec.matrix_length + pixel_y]
    }

    #[inline]
    pub fn set(&mut self, pixel_x: usize, pixel_y: usize, value: u8) {
        debug_assert!(value == 0 || value == 255);
        self.pixels[pixel_x * self.spec.matrix_length + pixel_y] = value;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.spec.matrix_length;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == 255)
            .map(move |(i, _)| (i / n, i % n))
    }

    pub fn count_occupied(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 255).count()
    }
}

/// Maps a metric laser-frame coordinate to a grid index; `None` when the
/// rounded pixel falls outside `[0, matrix_length)`.
pub fn meters_to_pixel(coord: f64, spec: &GridSpec) -> Option<usize> {
    let p = (coord * PIXELS_PER_METER).round() + spec.half() as f64;
    if p >= 0.0 && p < spec.matrix_length as f64 {
        Some(p as usize)
    } else {
        None
    }
}

/// Rasterizes beam endpoints into an occupancy grid. Beams at or beyond
/// `range_max` are treated as no-return and skipped.
pub fn rasterize(scan: &LaserScan, spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::zeros(*spec);
    for (i, &d) in scan.ranges.iter().enumerate() {
        if d >= scan.range_max {
            continue;
        }
        let angle = scan.angle(i);
        let x = d * angle.cos();
        let y = d * angle.sin();
        if let (Some(px), Some(py)) = (meters_to_pixel(x, spec), meters_to_pixel(y, spec)) {
            grid.set(px, py, 255);
        }
    }
    grid
}

/// Inverse of the rasterization map: grid pixel to laser-frame meters.
/// z is 0 because the scan plane is horizontal.
pub fn deproject_cell(pixel_x: usize, pixel_y: usize, spec: &GridSpec) -> Result<Point3> {
    if pixel_x >= spec.matrix_length || pixel_y >= spec.matrix_length {
        return Err(Error::InvalidArgument(format!(
            "pixel ({pixel_x}, {pixel_y}) outside {0}x{0} grid",
            spec.matrix_length
        )));
    }
    let l = spec.half() as f64;
    Ok(Point3::new(
        (pixel_x as f64 - l) / PIXELS_PER_METER,
        (pixel_y as f64 - l) / PIXELS_PER_METER,
        0.0,
    ))
}

/// Fractional-pixel variant of [`deproject_cell`] for blob centroids.
pub fn deproject_subpixel(pixel_x: f64, pixel_y: f64, spec: &GridSpec) -> Point3 {
    let l = spec.half() as f64;
    Point3::new(
        (pixel_x - l) / PIXELS_PER_METER,
        (pixel_y - l) / PIXELS_PER_METER,
        0.0,
    )
}

/// Writes the grid as binary PGM: `P5\n<W> <H>\n255\n` + raw bytes,
/// rows indexed by `pixel_x`.
pub fn write_grid<W: Write>(mut w: W, grid: &OccupancyGrid) -> Result<()> {
    let n = grid.spec.matrix_length;
    write!(w, "P5\n{n} {n}\n255\n")?;
    w.write_all(&grid.pixels)?;
    Ok(())
}

pub fn write_grid_file(path: &std::path::Path, grid: &OccupancyGrid) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_grid(&mut f, grid)
}

/// Reads and validates a binary-PGM occupancy grid. Reports the byte offset
/// of the first malformed header field or pixel value.
pub fn read_grid<R: Read>(mut r: R) -> Result<OccupancyGrid> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    read_grid_bytes(&data)
}

pub fn read_grid_file(path: &std::path::Path) -> Result<OccupancyGrid> {
    read_grid(std::fs::File::open(path)?)
}

pub fn read_grid_bytes(data: &[u8]) -> Result<OccupancyGrid> {
    if data.len() < 2 || &data[0..2] != b"P5" {
        return Err(Error::Format { offset: 0, message: "not a P5 PGM file".into() });
    }
    // header: exactly three whitespace-separated tokens after the magic
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format { offset: start, message: "truncated PGM header".into() });
        }
        let tok = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Format {
                offset: start,
                message: "non-numeric PGM header field".into(),
            })?;
        tokens.push((tok, start));
    }
    let (w, woff) = tokens[0];
    let (h, _) = tokens[1];
    let (maxval, moff) = tokens[2];
    if w != h {
        return Err(Error::Format { offset: woff, message: format!("grid must be square, got {w}x{h}") });
    }
    let spec = GridSpec::new(w).map_err(|e| Error::Format { offset: woff, message: e.to_string() })?;
    if maxval != 255 {
        return Err(Error::Format { offset: moff, message: format!("maxval {maxval} is not 255") });
    }
    // exactly one whitespace byte separates the header from pixel data
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Format { offset: pos, message: "missing header terminator".into() });
    }
    pos += 1;
    let expected = w * h;
    let body = &data[pos..];
    if body.len() != expected {
        return Err(Error::Format {
            offset: pos + body.len().min(expected),
            message: format!("expected {expected} pixel bytes, found {}", body.len()),
        });
    }
    if let Some(bad) = body.iter().position(|&p| p != 0 && p != 255) {
        return Err(Error::Format {
            offset: pos + bad,
            message: format!("pixel value {} is not 0 or 255", body[bad]),
        });
    }
    OccupancyGrid::from_pixels(spec, body.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_beam(angle: f64, d: f64) -> LaserScan {
        LaserScan {
            timestamp: 0.0,
            angle_min: angle,
            angle_increment: 1.0,
            range_max: 20.0,
            ranges: vec![d],
        }
    }

    #[test]
    fn hand_trace_forward_beam() {
        let grid = rasterize(&single_beam(0.0, 0.5), &GridSpec::default());
        assert_eq!(grid.get(178, 128), 255);
        assert_eq!(grid.count_occupied(), 1);
    }

    #[test]
    fn hand_trace_lateral_beam() {
        let grid = rasterize(&single_beam(std::f64::consts::FRAC_PI_2, 0.3), &GridSpec::default());
        assert_eq!(grid.get(128, 158), 255);
        assert_eq!(grid.count_occupied(), 1);
    }

    #[test]
    fn out_of_grid_beam_dropped() {
        let grid = rasterize(&single_beam(0.0, 5.0), &GridSpec::default());
        assert_eq!(grid.count_occupied(), 0);
    }

    fn protocol_scan() -> LaserScan {
        let trials = crate::sim::gen_protocol_trials(13);
        crate::sim::cast_scan(&trials[10].0, &crate::sim::LaserSpec::default(), 13)
    }

    /// Every 255 pixel lies within half a cell diagonal of a beam endpoint,
    /// and every in-grid endpoint is marked.
    #[test]
    fn occupied_pixel_soundness() {
        let spec = GridSpec::default();
        let scan = protocol_scan();
        let grid = rasterize(&scan, &spec);
        let endpoints: Vec<(f64, f64)> = scan
            .ranges
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < scan.range_max)
            .map(|(i, &d)| {
                let a = scan.angle(i);
                (d * a.cos(), d * a.sin())
            })
            .collect();
        assert!(grid.count_occupied() > 0);
        let half_diag = std::f64::consts::SQRT_2 / 2.0 / PIXELS_PER_METER + 1e-12;
        for (px, py) in grid.occupied() {
            let c = deproject_cell(px, py, &spec).unwrap();
            let near = endpoints
                .iter()
                .any(|&(x, y)| (c.x - x).hypot(c.y - y) <= half_diag);
            assert!(near, "pixel ({px},{py}) has no endpoint within {half_diag} m");
        }
        for &(x, y) in &endpoints {
            if let (Some(px), Some(py)) = (meters_to_pixel(x, &spec), meters_to_pixel(y, &spec)) {
                assert_eq!(grid.get(px, py), 255, "in-grid endpoint ({x},{y}) not marked");
            }
        }
    }

    /// Rotating all scan angles by 90 degrees equals rotating the grid by
    /// 90 degrees about its center (pixel-lattice-preserving).
    #[test]
    fn rotation_equivariance_90_degrees() {
        let spec = GridSpec::default();
        let scan = protocol_scan();
        let base = rasterize(&scan, &spec);
        let mut rotated_scan = scan.clone();
        rotated_scan.angle_min += std::f64::consts::FRAC_PI_2;
        let rotated = rasterize(&rotated_scan, &spec);
        // (x, y) -> (-y, x) in meters is (px, py) -> (2*half - py, px) on
        // the lattice; pixels rotating out of range must be absent
        let n = spec.matrix_length;
        let expect: std::collections::BTreeSet<(usize, usize)> = base
            .occupied()
            .filter(|&(_, py)| py >= 1 && n - py < n)
            .map(|(px, py)| (n - py, px))
            .filter(|&(qx, _)| qx < n)
            .collect();
        let got: std::collections::BTreeSet<(usize, usize)> = rotated.occupied().collect();
        assert_eq!(expect, got);
    }

    /// Re-rasterizing a scan synthesized from the occupied cell centers
    /// reproduces the grid exactly.
    #[test]
    fn rasterization_idempotent_on_cell_centers() {
        let spec = GridSpec::default();
        let grid = rasterize(&protocol_scan(), &spec);
        let mut angles = Vec::new();
        let mut dists = Vec::new();
        for (px, py) in grid.occupied() {
            let c = deproject_cell(px, py, &spec).unwrap();
            angles.push(c.y.atan2(c.x));
            dists.push(c.x.hypot(c.y));
        }
        // synthesize a one-beam-per-cell scan; angle_increment is unused
        // because each beam's angle is supplied through angle_min shifts
        let mut again = OccupancyGrid::zeros(spec);
        for (&a, &d) in angles.iter().zip(&dists) {
            if d < 1e-12 {
                again.set(spec.half(), spec.half(), 255);
                continue;
            }
            let one = rasterize(&single_beam(a, d), &spec);
            for (px, py) in one.occupied() {
                again.set(px, py, 255);
            }
        }
        assert_eq!(grid, again);
    }

    #[test]
    fn range_max_is_no_return() {
        let mut scan = single_beam(0.0, 0.5);
        scan.ranges[0] = scan.range_max;
        let grid = rasterize(&scan, &GridSpec::default());
        assert_eq!(grid.count_occupied(), 0);
    }

    #[test]
    fn deproject_center_and_forward_cell() {
        let spec = GridSpec::default();
        assert_eq!(deproject_cell(128, 128, &spec).unwrap(), Point3::new(0.0, 0.0, 0.0));
        let p = deproject_cell(178, 128, &spec).unwrap();
        assert!((p.x - 0.50).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn deproject_rejects_out_of_range() {
        assert!(deproject_cell(256, 0, &GridSpec::default()).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let mut grid = OccupancyGrid::zeros(GridSpec::default());
        grid.set(10, 20, 255);
        grid.set(255, 255, 255);
        let mut buf = Vec::new();
        write_grid(&mut buf, &grid).unwrap();
        let back = read_grid_bytes(&buf).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn bad_pixel_value_cites_offset() {
        let grid = OccupancyGrid::zeros(GridSpec::default());
        let mut buf = Vec::new();
        write_grid(&mut buf, &grid).unwrap();
        let header_len = buf.len() - 256 * 256;
        let k = 1234;
        buf[header_len + k] = 7;
        match read_grid_bytes(&buf) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, header_len + k);
                assert!(message.contains('7'));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_pgm_rejected() {
        let grid = OccupancyGrid::zeros(GridSpec::default());
        let mut buf = Vec::new();
        write_grid(&mut buf, &grid).unwrap();
        buf.truncate(buf.len() - 100);
        assert!(matches!(read_grid_bytes(&buf), Err(Error::Format { .. })));
    }
}
