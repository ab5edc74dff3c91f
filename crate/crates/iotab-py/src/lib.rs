//! Python bindings: the table container, the balancing solver, the error
//! metrics, the synthetic-economy generator and the full pipeline runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use iotab::balance::{balance_with_report, SolverConfig};
use iotab::error::Error;
use iotab::metrics::{compute_metrics, MetricSet, Scope};
use iotab::pipeline::{load_config, run_pipeline as run_pipeline_impl};
use iotab::synth::{generate, write_economy, SynthConfig};
use iotab::table::{infer_table_dims, load_io_table, write_io_table, IOTable};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A regional input-output table: intermediate purchases, final demand,
/// value added and the gross-output row, with absent cells kept distinct
/// from zeros.
#[pyclass(name = "IOTable")]
#[derive(Clone)]
struct PyIOTable {
    inner: IOTable,
}

#[pymethods]
impl PyIOTable {
    /// Reads a table from the grid CSV layout; dimensions are recovered
    /// from the row and column labels.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let dims = infer_table_dims(&path).map_err(to_py_err)?;
        let inner = load_io_table(&path, dims).map_err(to_py_err)?;
        Ok(PyIOTable { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_io_table(&path, &self.inner).map_err(to_py_err)
    }

    #[getter]
    fn industries(&self) -> usize {
        self.inner.dims.industries
    }

    #[getter]
    fn gva_rows(&self) -> usize {
        self.inner.dims.gva_rows
    }

    #[getter]
    fn fd_cols(&self) -> usize {
        self.inner.dims.fd_cols
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total
    }

    #[getter]
    fn gross_outputs(&self) -> Vec<Option<f64>> {
        self.inner.gross_outputs.clone()
    }

    /// The linked (final-demand column, value-added row) pair, 0-based, or
    /// None when the table carries no link.
    #[getter]
    fn phi(&self) -> Option<(usize, usize)> {
        match (self.inner.dims.phi_fd, self.inner.dims.phi_gva) {
            (Some(c), Some(r)) => Some((c, r)),
            _ => None,
        }
    }

    /// Declares the linked column/row pair (0-based). The grid file format
    /// does not store it, so it must be reattached after `load`.
    fn set_phi(&mut self, fd_col: usize, gva_row: usize) -> PyResult<()> {
        if fd_col >= self.inner.dims.fd_cols || gva_row >= self.inner.dims.gva_rows {
            return Err(PyValueError::new_err(format!(
                "linked pair ({fd_col}, {gva_row}) is outside a {}x{} margin block",
                self.inner.dims.gva_rows, self.inner.dims.fd_cols
            )));
        }
        self.inner.dims = self.inner.dims.with_phi(fd_col, gva_row);
        Ok(())
    }

    /// One cell by section code: "a" intermediate, "d" final demand, "v"
    /// value added. Returns None for an absent cell.
    fn cell(&self, section: &str, row: usize, col: usize) -> PyResult<Option<f64>> {
        let (grid, rows, cols) = match section {
            "a" | "intermediate" => {
                (&self.inner.intermediate, self.inner.dims.industries, self.inner.dims.industries)
            }
            "d" | "final_demand" => {
                (&self.inner.final_demand, self.inner.dims.industries, self.inner.dims.fd_cols)
            }
            "v" | "value_added" => {
                (&self.inner.value_added, self.inner.dims.gva_rows, self.inner.dims.industries)
            }
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown section {other:?}; use \"a\", \"d\" or \"v\""
                )))
            }
        };
        if row >= rows || col >= cols {
            return Err(PyValueError::new_err(format!(
                "cell ({row}, {col}) is outside the {rows}x{cols} section"
            )));
        }
        Ok(grid.get(row, col))
    }

    /// The combined frame as nested lists, `(K+L) x (K+M)`, with None for
    /// absent cells and the lower-right corner.
    fn frame(&self) -> Vec<Vec<Option<f64>>> {
        let k = self.inner.dims.industries;
        let rows = k + self.inner.dims.gva_rows;
        let cols = k + self.inner.dims.fd_cols;
        (0..rows).map(|i| (0..cols).map(|j| self.inner.frame_cell(i, j)).collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "IOTable(industries={}, gva_rows={}, fd_cols={}, total={})",
            self.inner.dims.industries,
            self.inner.dims.gva_rows,
            self.inner.dims.fd_cols,
            self.inner.total
        )
    }
}

/// Balances a prior table to the given gross outputs and total under the
/// row, column and (optionally) linked-pair identities, preserving the
/// prior's signs and zeros. Returns the balanced table and a report dict.
#[pyfunction]
#[pyo3(signature = (prior, gross_outputs, total, use_phi=true, tolerance=1e-10, max_iterations=200))]
fn balance(
    py: Python<'_>,
    prior: &PyIOTable,
    gross_outputs: Vec<f64>,
    total: f64,
    use_phi: bool,
    tolerance: f64,
    max_iterations: usize,
) -> PyResult<(PyIOTable, Py<PyDict>)> {
    let cfg = SolverConfig { tolerance, max_iterations, ..SolverConfig::default() };
    let (balanced, report) =
        balance_with_report(&prior.inner, &gross_outputs, total, use_phi, &cfg).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("iterations", report.iterations)?;
    dict.set_item("max_residual", report.max_residual)?;
    dict.set_item("converged", report.converged)?;
    dict.set_item("objective", report.objective)?;
    Ok((PyIOTable { inner: balanced }, dict.into()))
}

fn metric_dict(py: Python<'_>, set: &MetricSet) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("stpe", set.stpe)?;
    dict.set_item("mad", set.mad)?;
    dict.set_item("u2", set.u2)?;
    dict.set_item("rmse", set.rmse)?;
    dict.set_item("mape", set.mape)?;
    dict.set_item("n_cells", set.n_cells)?;
    Ok(dict.into())
}

/// Error metrics of an estimated table against the actual one, as a dict
/// keyed by scope ("all", "intermediate", ...), each holding the five
/// metrics plus the cell count. Undefined metrics come back as None.
#[pyfunction]
fn evaluate(py: Python<'_>, estimate: &PyIOTable, actual: &PyIOTable) -> PyResult<Py<PyDict>> {
    let (e, a) = (estimate.inner.dims, actual.inner.dims);
    if (e.industries, e.gva_rows, e.fd_cols) != (a.industries, a.gva_rows, a.fd_cols) {
        return Err(PyValueError::new_err(format!(
            "table shapes differ: {}x{}x{} vs {}x{}x{}",
            e.industries, e.gva_rows, e.fd_cols, a.industries, a.gva_rows, a.fd_cols
        )));
    }
    let report = compute_metrics(&estimate.inner, &actual.inner);
    let dict = PyDict::new(py);
    for scope in Scope::ALL {
        dict.set_item(scope.label(), metric_dict(py, report.get(scope))?)?;
    }
    Ok(dict.into())
}

/// Generates a synthetic multi-region economy and writes it under `dir`:
/// `dataset/`, `target_variables.csv`, `actual_table.csv` and `recipe.csv`.
/// Returns a dict with the target region's total output and population.
#[pyfunction]
#[pyo3(signature = (dir, industries=4, gva_rows=2, fd_cols=3, use_phi=true, regions=45, noise=0.05, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize_economy(
    py: Python<'_>,
    dir: PathBuf,
    industries: usize,
    gva_rows: usize,
    fd_cols: usize,
    use_phi: bool,
    regions: usize,
    noise: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let cfg = SynthConfig {
        industries,
        gva_rows,
        fd_cols,
        use_phi,
        n_regions: regions,
        noise,
        seed,
        ..SynthConfig::default()
    };
    let econ = generate(&cfg).map_err(to_py_err)?;
    write_economy(&dir, &econ).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("regions", regions)?;
    dict.set_item("target_total", econ.target_total)?;
    dict.set_item("target_population", econ.target_pop15)?;
    Ok(dict.into())
}

/// Runs the full estimation pipeline described by a flat `key = value`
/// config file and returns a summary dict: per-stage statuses, the balance
/// report, and the evaluation metrics when an actual table was given.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf) -> PyResult<Py<PyDict>> {
    let cfg = load_config(&config).map_err(to_py_err)?;
    let manifest = run_pipeline_impl(&cfg).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("seed", manifest.seed)?;
    dict.set_item("stages", manifest.stages.clone())?;
    dict.set_item("items", manifest.items.len())?;
    match &manifest.balance {
        Some(b) => {
            let report = PyDict::new(py);
            report.set_item("iterations", b.iterations)?;
            report.set_item("max_residual", b.max_residual)?;
            report.set_item("converged", b.converged)?;
            report.set_item("objective", b.objective)?;
            dict.set_item("balance", report)?;
        }
        None => dict.set_item("balance", py.None())?,
    }
    match &manifest.metrics {
        Some(m) => {
            let metrics = PyDict::new(py);
            for scope in Scope::ALL {
                metrics.set_item(scope.label(), metric_dict(py, m.get(scope))?)?;
            }
            dict.set_item("metrics", metrics)?;
        }
        None => dict.set_item("metrics", py.None())?,
    }
    dict.set_item("output_dir", cfg.output_dir)?;
    Ok(dict.into())
}

#[pymodule]
fn iotab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIOTable>()?;
    m.add_function(wrap_pyfunction!(balance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_economy, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
