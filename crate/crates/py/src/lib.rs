//! Python bindings for the walkaid pipeline: frames and transforms,
//! scan rasterization, leg segmentation with a trained model, protocol
//! evaluation, and the closed-loop follower simulation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use walkaid::blob::{connected_components, extract_leg_midpoints, LegFilter};
use walkaid::control::{run_follow, ControllerConfig};
use walkaid::eval::{run_protocol, summarize, EvalReport, Thresholds};
use walkaid::geometry::{compose, invert, transform_point, FrameId, Point3, RigidTransform};
use walkaid::nn::{load_model, unet_forward, SegmentationMask, UNet};
use walkaid::raster::{
    deproject_cell, rasterize, read_grid_bytes, write_grid, GridSpec, OccupancyGrid,
};
use walkaid::scan::LaserScan;
use walkaid::sim::{
    cast_scan, default_laser_in_robot, gen_protocol_trials, sample_clutter_boxes, standing_legs,
    LaserSpec, Scene, DEFAULT_LEG_RADIUS,
};

fn err(e: walkaid::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_frame(s: &str) -> PyResult<FrameId> {
    match s {
        "C" => Ok(FrameId::Camera),
        "L" => Ok(FrameId::Laser),
        "R" => Ok(FrameId::RobotBase),
        other => Err(PyValueError::new_err(format!(
            "unknown frame {other:?}; expected \"C\", \"L\" or \"R\""
        ))),
    }
}

fn frame_str(f: FrameId) -> &'static str {
    match f {
        FrameId::Camera => "C",
        FrameId::Laser => "L",
        FrameId::RobotBase => "R",
    }
}

/// A rigid transform between named frames ("C", "L", "R").
#[pyclass(name = "RigidTransform", skip_from_py_object)]
#[derive(Clone)]
struct PyRigidTransform {
    inner: RigidTransform,
}

#[pymethods]
impl PyRigidTransform {
    #[staticmethod]
    fn identity(source: &str, target: &str) -> PyResult<Self> {
        Ok(PyRigidTransform {
            inner: RigidTransform::identity(parse_frame(source)?, parse_frame(target)?),
        })
    }

    #[staticmethod]
    fn planar(source: &str, target: &str, x: f64, y: f64, theta: f64) -> PyResult<Self> {
        Ok(PyRigidTransform {
            inner: RigidTransform::planar(parse_frame(source)?, parse_frame(target)?, x, y, theta),
        })
    }

    #[getter]
    fn source(&self) -> &'static str {
        frame_str(self.inner.source)
    }

    #[getter]
    fn target(&self) -> &'static str {
        frame_str(self.inner.target)
    }

    fn transform_point(&self, x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
        let p = transform_point(&Point3::new(x, y, z), &self.inner).map_err(err)?;
        Ok((p.x, p.y, p.z))
    }

    fn compose(&self, other: &PyRigidTransform) -> PyResult<Self> {
        Ok(PyRigidTransform { inner: compose(&self.inner, &other.inner).map_err(err)? })
    }

    fn invert(&self) -> Self {
        PyRigidTransform { inner: invert(&self.inner) }
    }

    fn __repr__(&self) -> String {
        format!(
            "RigidTransform({} -> {})",
            frame_str(self.inner.source),
            frame_str(self.inner.target)
        )
    }
}

/// A square occupancy grid (1 cm/pixel, laser at the center).
#[pyclass(name = "OccupancyGrid", skip_from_py_object)]
#[derive(Clone)]
struct PyOccupancyGrid {
    inner: OccupancyGrid,
}

#[pymethods]
impl PyOccupancyGrid {
    /// Rasterizes scan ranges (Algorithm-1 convention) into a grid.
    #[staticmethod]
    #[pyo3(signature = (ranges, angle_min, angle_increment, range_max, matrix_length = 256))]
    fn from_scan(
        ranges: Vec<f64>,
        angle_min: f64,
        angle_increment: f64,
        range_max: f64,
        matrix_length: usize,
    ) -> PyResult<Self> {
        let spec = GridSpec::new(matrix_length).map_err(err)?;
        let scan = LaserScan { timestamp: 0.0, angle_min, angle_increment, range_max, ranges };
        scan.validate().map_err(err)?;
        Ok(PyOccupancyGrid { inner: rasterize(&scan, &spec) })
    }

    /// Parses a binary PGM ("P5") grid.
    #[staticmethod]
    fn from_pgm(data: &[u8]) -> PyResult<Self> {
        Ok(PyOccupancyGrid { inner: read_grid_bytes(data).map_err(err)? })
    }

    fn to_pgm(&self) -> PyResult<Vec<u8>> {
        let mut buf = Vec::new();
        write_grid(&mut buf, &self.inner).map_err(err)?;
        Ok(buf)
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.spec.matrix_length
    }

    fn get(&self, pixel_x: usize, pixel_y: usize) -> PyResult<u8> {
        let n = self.inner.spec.matrix_length;
        if pixel_x >= n || pixel_y >= n {
            return Err(PyValueError::new_err(format!(
                "pixel ({pixel_x}, {pixel_y}) outside {n}x{n} grid"
            )));
        }
        Ok(self.inner.get(pixel_x, pixel_y))
    }

    /// All occupied pixels as (pixel_x, pixel_y) tuples.
    fn occupied(&self) -> Vec<(usize, usize)> {
        self.inner.occupied().collect()
    }

    /// Metric laser-frame coordinates of a pixel center.
    fn deproject(&self, pixel_x: usize, pixel_y: usize) -> PyResult<(f64, f64)> {
        let p = deproject_cell(pixel_x, pixel_y, &self.inner.spec).map_err(err)?;
        Ok((p.x, p.y))
    }

    fn __repr__(&self) -> String {
        format!(
            "OccupancyGrid({0}x{0}, {1} occupied)",
            self.inner.spec.matrix_length,
            self.inner.count_occupied()
        )
    }
}

/// A trained leg-segmentation model.
#[pyclass(name = "Segmenter")]
struct PySegmenter {
    model: UNet<f32>,
    /// Explicit binarization threshold; None uses the model's stored value.
    threshold: Option<f64>,
}

#[pymethods]
impl PySegmenter {
    #[new]
    #[pyo3(signature = (model_path, threshold = None))]
    fn new(model_path: &str, threshold: Option<f64>) -> PyResult<Self> {
        let model = load_model(std::path::Path::new(model_path)).map_err(err)?;
        Ok(PySegmenter { model, threshold })
    }

    /// Per-pixel leg probabilities, row-major by pixel_x.
    fn probabilities(&self, grid: &PyOccupancyGrid) -> PyResult<Vec<f32>> {
        let mask = unet_forward(&grid.inner, &self.model).map_err(err)?;
        Ok(mask.probabilities.iter().cloned().collect())
    }

    /// Thresholded leg mask as a new occupancy grid.
    fn segment(&self, grid: &PyOccupancyGrid) -> PyResult<PyOccupancyGrid> {
        let mask = self.masked(grid)?;
        let mut out = OccupancyGrid::zeros(grid.inner.spec);
        let (h, w) = mask.probabilities.dim();
        for x in 0..h {
            for y in 0..w {
                if (mask.probabilities[(x, y)] as f64) >= mask.threshold {
                    out.set(x, y, 255);
                }
            }
        }
        Ok(PyOccupancyGrid { inner: out })
    }

    /// Laser-frame leg midpoints ((left, right) metres) or None when the
    /// frame does not contain exactly two plausible legs.
    fn leg_midpoints(
        &self,
        grid: &PyOccupancyGrid,
        timestamp: f64,
    ) -> PyResult<Option<((f64, f64), (f64, f64))>> {
        let mask = self.masked(grid)?;
        let blobs = connected_components(&mask, mask.threshold);
        let obs =
            extract_leg_midpoints(&blobs, &grid.inner.spec, &LegFilter::default(), timestamp);
        Ok(if obs.valid {
            Some(((obs.left.x, obs.left.y), (obs.right.x, obs.right.y)))
        } else {
            None
        })
    }
}

impl PySegmenter {
    fn masked(&self, grid: &PyOccupancyGrid) -> PyResult<SegmentationMask> {
        let mut mask = unet_forward(&grid.inner, &self.model).map_err(err)?;
        if let Some(t) = self.threshold {
            mask.threshold = t;
        }
        Ok(mask)
    }
}

/// Simulates one rear-laser scan of a standing person with optional box
/// clutter. Returns (ranges, angle_min, angle_increment, range_max).
#[pyfunction]
#[pyo3(signature = (seed, distance = 0.8, lateral = 0.0, clutter_count = 0))]
fn simulate_scan(
    seed: u64,
    distance: f64,
    lateral: f64,
    clutter_count: usize,
) -> PyResult<(Vec<f64>, f64, f64, f64)> {
    let legs = standing_legs(distance, lateral, 0.10, DEFAULT_LEG_RADIUS);
    let clutter = sample_clutter_boxes(seed, clutter_count, &legs, true);
    let scene = Scene { legs, clutter, laser_in_robot: default_laser_in_robot(), seed };
    let spec = LaserSpec::default();
    scene.validate(spec.range_max).map_err(err)?;
    let scan = cast_scan(&scene, &spec, seed);
    Ok((scan.ranges, scan.angle_min, scan.angle_increment, scan.range_max))
}

/// Runs the 18-trial standing protocol with a trained model and returns
/// the JSON report.
#[pyfunction]
fn evaluate_protocol(model_path: &str, seed: u64) -> PyResult<String> {
    let model = load_model(std::path::Path::new(model_path)).map_err(err)?;
    let trials = gen_protocol_trials(seed);
    let results = run_protocol(&trials, &Thresholds::default(), |g| unet_forward(g, &model))
        .map_err(err)?;
    let summary = summarize(&results).map_err(err)?;
    let report = EvalReport {
        model: model_path.to_string(),
        seed,
        thresholds: Thresholds::default(),
        trials: results,
        summary,
    };
    serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Closed-loop follower simulation; returns the trajectory as a list of
/// (t, base_x, base_y, base_yaw, person_x, person_y, vx, vy, omega).
#[pyfunction]
#[pyo3(signature = (speed = 0.5, stride = 1.0, duration = 20.0, dt = 0.05))]
fn follow_trajectory(
    speed: f64,
    stride: f64,
    duration: f64,
    dt: f64,
) -> PyResult<Vec<(f64, f64, f64, f64, f64, f64, f64, f64, f64)>> {
    let log = run_follow(&ControllerConfig::default(), speed, stride, duration, dt).map_err(err)?;
    Ok(log
        .into_iter()
        .map(|r| {
            (
                r.t, r.base[0], r.base[1], r.base[2], r.person[0], r.person[1], r.cmd[0],
                r.cmd[1], r.cmd[2],
            )
        })
        .collect())
}

#[pymodule]
fn walkaid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyOccupancyGrid>()?;
    m.add_class::<PySegmenter>()?;
    m.add_function(wrap_pyfunction!(simulate_scan, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(follow_trajectory, m)?)?;
    Ok(())
}
