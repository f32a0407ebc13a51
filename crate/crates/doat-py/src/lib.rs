//! Python bindings: delay-space helpers, the ring mapping, Bloom
//! filters and the scenario runner, exposed as the `doat_py` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use doat::bloom::{BloomFilter, BloomParams, GroupId};
use doat::delay_space::{self, BoundingBox, DelayPoint};
use doat::experiments::{
    self, DatasetSpec, Mode, RunMetrics, Scenario,
};
use doat::sfc::{self, CurveKind, CurveParams, Direction, RingCoord};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn point(coords: Vec<f64>) -> PyResult<DelayPoint> {
    DelayPoint::new(coords).map_err(value_err)
}

fn points(raw: Vec<Vec<f64>>) -> PyResult<Vec<DelayPoint>> {
    raw.into_iter().map(point).collect()
}

fn curve_kind(name: &str) -> PyResult<CurveKind> {
    match name {
        "moore" => Ok(CurveKind::Moore),
        "hilbert" => Ok(CurveKind::Hilbert),
        other => Err(value_err(format!("unknown curve kind {other:?}"))),
    }
}

fn direction(name: &str) -> PyResult<Direction> {
    match name {
        "cw" | "clockwise" => Ok(Direction::Clockwise),
        "acw" | "anticlockwise" => Ok(Direction::Anticlockwise),
        other => Err(value_err(format!("unknown direction {other:?}"))),
    }
}

/// Uniform host coordinates inside a square box; identical arguments
/// always return the identical list.
#[pyfunction]
#[pyo3(signature = (n, seed, low=-100.0, high=100.0, dim=2))]
fn generate_uniform(
    n: usize,
    seed: u64,
    low: f64,
    high: f64,
    dim: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let bounds = BoundingBox::square(low, high, dim).map_err(value_err)?;
    let pts = delay_space::generate_uniform(n, &bounds, seed).map_err(value_err)?;
    Ok(pts.into_iter().map(|p| p.coords().to_vec()).collect())
}

#[pyfunction]
fn load_coordinates(path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
    let pts = delay_space::load_coordinates(&path)
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(pts.into_iter().map(|p| p.coords().to_vec()).collect())
}

#[pyfunction]
fn save_coordinates(coords: Vec<Vec<f64>>, path: PathBuf) -> PyResult<()> {
    let pts = points(coords)?;
    delay_space::save_coordinates(&pts, &path).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Euclidean delay between two positions, in milliseconds.
#[pyfunction]
fn delay(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    delay_space::delay(&point(a)?, &point(b)?).map_err(value_err)
}

#[pyfunction]
fn average_pairwise_delay(coords: Vec<Vec<f64>>) -> PyResult<f64> {
    delay_space::average_pairwise_delay(&points(coords)?).map_err(value_err)
}

/// Shortest arc between two ring coordinates.
#[pyfunction]
fn ring_distance(a: f64, b: f64) -> f64 {
    sfc::ring_distance(RingCoord::new(a), RingCoord::new(b))
}

/// Coordinate at `dist` from `a` in the given direction ("cw"/"acw").
#[pyfunction]
fn ring_target(a: f64, dist: f64, dir: &str) -> PyResult<f64> {
    Ok(sfc::ring_target(RingCoord::new(a), dist, direction(dir)?).value())
}

/// Ring coordinate of a unit-square point under the selected curve.
#[pyfunction]
#[pyo3(signature = (u, order=16, kind="moore"))]
fn curve_index(u: Vec<f64>, order: u8, kind: &str) -> PyResult<f64> {
    let params = CurveParams::new(curve_kind(kind)?, order).map_err(value_err)?;
    let bounds = BoundingBox::square(0.0, 1.0, u.len()).map_err(value_err)?;
    let unit = sfc::to_unit_square(&point(u)?, &bounds).map_err(value_err)?;
    Ok(sfc::curve_index(&unit, params).map_err(value_err)?.value())
}

/// Ring coordinate of a delay-space position within a square box.
#[pyfunction]
#[pyo3(signature = (coords, low=-100.0, high=100.0, order=16, kind="moore"))]
fn ring_of(coords: Vec<f64>, low: f64, high: f64, order: u8, kind: &str) -> PyResult<f64> {
    let params = CurveParams::new(curve_kind(kind)?, order).map_err(value_err)?;
    let p = point(coords)?;
    let bounds = BoundingBox::square(low, high, p.dim()).map_err(value_err)?;
    Ok(sfc::ring_of(&p, &bounds, params).map_err(value_err)?.value())
}

/// `(discovered - closest) / mean_pairwise`.
#[pyfunction]
fn accuracy_error(discovered_ms: f64, closest_ms: f64, mean_pairwise_ms: f64) -> PyResult<f64> {
    experiments::accuracy_error(discovered_ms, closest_ms, mean_pairwise_ms).map_err(value_err)
}

/// Least-squares line fit: returns `(slope, intercept, r_squared)`.
#[pyfunction]
fn linear_fit(pts: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    experiments::linear_fit(&pts)
        .ok_or_else(|| value_err("need at least two points with distinct x"))
}

/// Fixed-geometry Bloom filter over group identifiers.
#[pyclass(name = "BloomFilter")]
#[derive(Clone)]
struct PyBloomFilter {
    inner: BloomFilter,
}

fn group(id: &str) -> PyResult<GroupId> {
    GroupId::new(id.as_bytes().to_vec()).map_err(value_err)
}

#[pymethods]
impl PyBloomFilter {
    #[new]
    #[pyo3(signature = (bits=1024, hashes=7))]
    fn new(bits: u32, hashes: u32) -> PyResult<Self> {
        let params = BloomParams::new(bits, hashes).map_err(value_err)?;
        Ok(Self {
            inner: BloomFilter::empty(params),
        })
    }

    fn insert(&mut self, group_id: &str) -> PyResult<()> {
        self.inner.insert(&group(group_id)?);
        Ok(())
    }

    fn contains(&self, group_id: &str) -> PyResult<bool> {
        Ok(self.inner.contains(&group(group_id)?))
    }

    fn union(&self, other: &PyBloomFilter) -> PyResult<PyBloomFilter> {
        let mut merged = self.inner.clone();
        merged.union_with(&other.inner).map_err(value_err)?;
        Ok(PyBloomFilter { inner: merged })
    }

    fn fill_ratio(&self) -> f64 {
        self.inner.fill_ratio()
    }

    fn popcount(&self) -> u32 {
        self.inner.popcount()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<PyBloomFilter> {
        Ok(PyBloomFilter {
            inner: BloomFilter::from_bytes(data).map_err(value_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// An experiment description; `run()` executes it.
#[pyclass(name = "Scenario")]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (
        seed,
        n=None,
        dataset_path=None,
        dataset_seed=None,
        low=-100.0,
        high=100.0,
        dim=2,
        density_pct=10.0,
        groups=1,
        mode="synchronous",
        update_interval=0.0,
        query_fraction=0.1,
        offsets_ms=None,
        use_original_d=false,
        bloom_bits=1024,
        bloom_hashes=7,
        curve="moore",
        curve_order=16,
        scenario_id="py",
        trace=false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        n: Option<usize>,
        dataset_path: Option<PathBuf>,
        dataset_seed: Option<u64>,
        low: f64,
        high: f64,
        dim: usize,
        density_pct: f64,
        groups: u32,
        mode: &str,
        update_interval: f64,
        query_fraction: f64,
        offsets_ms: Option<Vec<f64>>,
        use_original_d: bool,
        bloom_bits: u32,
        bloom_hashes: u32,
        curve: &str,
        curve_order: u8,
        scenario_id: &str,
        trace: bool,
    ) -> PyResult<Self> {
        let dataset = match (n, dataset_path) {
            (Some(n), None) => DatasetSpec::Generated {
                n,
                low,
                high,
                dim,
                seed: dataset_seed.unwrap_or(seed),
            },
            (None, Some(path)) => DatasetSpec::File { path },
            _ => {
                return Err(value_err(
                    "give exactly one of n= (generated) or dataset_path=",
                ))
            }
        };
        let mut s = Scenario::new(scenario_id, dataset, seed);
        s.density_pct = density_pct;
        s.groups = groups;
        s.mode = match mode {
            "synchronous" => Mode::Synchronous,
            "asynchronous" => Mode::Asynchronous,
            "offset_sweep" => Mode::OffsetSweep,
            other => return Err(value_err(format!("unknown mode {other:?}"))),
        };
        s.update_interval = update_interval;
        s.query_fraction = query_fraction;
        if let Some(offsets) = offsets_ms {
            s.offsets_ms = offsets;
        }
        s.use_original_d = use_original_d;
        s.bloom_bits = bloom_bits;
        s.bloom_hashes = bloom_hashes;
        s.curve_kind = curve_kind(curve)?;
        s.curve_order = curve_order;
        s.trace = trace;
        s.validate().map_err(value_err)?;
        Ok(Self { inner: s })
    }

    fn run(&self) -> PyResult<PyRunMetrics> {
        let metrics = experiments::run_scenario(&self.inner).map_err(value_err)?;
        Ok(PyRunMetrics { inner: metrics })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(id={:?}, mode={}, seed={})",
            self.inner.scenario_id,
            self.inner.mode.as_str(),
            self.inner.seed
        )
    }
}

/// A finished run: per-query rows plus run-level measurements.
#[pyclass(name = "RunMetrics")]
struct PyRunMetrics {
    inner: RunMetrics,
}

#[pymethods]
impl PyRunMetrics {
    #[getter]
    fn overhead(&self) -> f64 {
        self.inner.overhead
    }

    #[getter]
    fn mean_pairwise_ms(&self) -> f64 {
        self.inner.mean_pairwise_ms
    }

    #[getter]
    fn quiescent(&self) -> bool {
        self.inner.quiescent
    }

    #[getter]
    fn false_positive_events(&self) -> u64 {
        self.inner.false_positive_events
    }

    fn success_rate(&self) -> f64 {
        self.inner.success_rate()
    }

    #[pyo3(signature = (offset_ms=None))]
    fn mean_error(&self, offset_ms: Option<f64>) -> Option<f64> {
        self.inner.mean_error_at(offset_ms)
    }

    fn mean_query_time(&self) -> Option<f64> {
        self.inner.mean_query_time()
    }

    fn mean_hops(&self) -> Option<f64> {
        self.inner.mean_hops()
    }

    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("query_origin", r.query_origin)?;
                d.set_item("group", &r.group)?;
                d.set_item("offset_ms", r.offset_ms)?;
                d.set_item("hops", r.hops)?;
                d.set_item("query_time_ms", r.query_time_ms)?;
                d.set_item("R_ms", r.discovered_ms)?;
                d.set_item("C_ms", r.closest_ms)?;
                d.set_item("error", r.error)?;
                d.set_item("success", r.success)?;
                Ok(d)
            })
            .collect()
    }

    fn csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        experiments::write_results(&[&self.inner], &mut buf)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        experiments::write_results_to_path(&[&self.inner], &path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn trace(&self) -> Option<String> {
        self.inner
            .trace
            .as_ref()
            .map(|t| String::from_utf8_lossy(t).into_owned())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunMetrics(id={:?}, rows={}, overhead={:.3}, quiescent={})",
            self.inner.scenario_id,
            self.inner.rows.len(),
            self.inner.overhead,
            self.inner.quiescent
        )
    }
}

#[pymodule]
fn doat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(load_coordinates, m)?)?;
    m.add_function(wrap_pyfunction!(save_coordinates, m)?)?;
    m.add_function(wrap_pyfunction!(delay, m)?)?;
    m.add_function(wrap_pyfunction!(average_pairwise_delay, m)?)?;
    m.add_function(wrap_pyfunction!(ring_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ring_target, m)?)?;
    m.add_function(wrap_pyfunction!(curve_index, m)?)?;
    m.add_function(wrap_pyfunction!(ring_of, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_error, m)?)?;
    m.add_function(wrap_pyfunction!(linear_fit, m)?)?;
    m.add_class::<PyBloomFilter>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunMetrics>()?;
    Ok(())
}
