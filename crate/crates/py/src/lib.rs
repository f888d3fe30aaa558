//! Python bindings for the groundwater workbench: conductivity-field
//! sampling, the steady-state solver, dataset generation and I/O, and the
//! surrogate models (training, inference, MC-dropout uncertainty).
//!
//! Images cross the boundary as flat row-major lists plus explicit
//! dimensions, which keeps the module free of binary-array dependencies;
//! `numpy.asarray(...).reshape(h, w)` on the Python side restores 2-D views.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use gwnet_core::datagen::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig};
use gwnet_core::fdsolver::solve_steady_state;
use gwnet_core::grf::{class_values_linspace, quantize_field, GrfSampler};
use gwnet_core::grid::{ConductivityField, GridSpec, ScenarioSpec, Well};
use gwnet_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use gwnet_core::model::{build_model, Model, ModelConfig, Variant};
use gwnet_core::nn::Tensor4;
use gwnet_core::train::analysis::mc_dropout_predict;
use gwnet_core::train::{evaluate_metrics, train, TrainConfig};

fn py_err(err: gwnet_core::Error) -> PyErr {
    match err {
        gwnet_core::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn image_tensor(input: Vec<f32>, height: usize, width: usize) -> PyResult<Tensor4<f32>> {
    let expected = 3 * height * width;
    if input.len() != expected {
        return Err(PyValueError::new_err(format!(
            "input must hold 3x{height}x{width} = {expected} values, got {}",
            input.len()
        )));
    }
    Tensor4::from_vec(1, 3, height, width, input).map_err(py_err)
}

/// Draw a quantized log-conductivity field: a Gaussian random field with
/// squared-exponential covariance, thresholded into `n_classes` equally
/// probable classes with values evenly spaced in [0.1, 1].
#[pyfunction]
#[pyo3(signature = (height, width, seed, correlation_length = 8.0, n_classes = 5))]
fn sample_conductivity(
    height: usize,
    width: usize,
    seed: u64,
    correlation_length: f64,
    n_classes: usize,
) -> PyResult<Vec<f64>> {
    let grid = GridSpec::new(height, width).map_err(py_err)?;
    if n_classes < 2 {
        return Err(PyValueError::new_err("n_classes must be >= 2"));
    }
    let sampler = GrfSampler::new(grid, correlation_length).map_err(py_err)?;
    let field = sampler.sample(seed);
    let classes = class_values_linspace(n_classes);
    Ok(quantize_field(grid, &field, &classes).map_err(py_err)?.values)
}

/// Steady-state hydraulic head for one scenario. `conductivity` is a flat
/// row-major field, `wells` a list of `(row, col, head)` triples placed
/// strictly inside the fixed-head boundary ring.
#[pyfunction]
#[pyo3(signature = (height, width, conductivity, wells, boundary_head = 1.0, tol = 1e-10))]
fn solve_head(
    height: usize,
    width: usize,
    conductivity: Vec<f64>,
    wells: Vec<(usize, usize, f64)>,
    boundary_head: f64,
    tol: f64,
) -> PyResult<Vec<f64>> {
    let grid = GridSpec::new(height, width).map_err(py_err)?;
    let k = ConductivityField::new(grid, conductivity).map_err(py_err)?;
    let wells = wells
        .into_iter()
        .map(|(row, col, head)| Well { row, col, head })
        .collect();
    let scenario = ScenarioSpec::new(grid, boundary_head, wells).map_err(py_err)?;
    Ok(solve_steady_state(&k, &scenario, tol).map_err(py_err)?.values)
}

/// A generated dataset: solver ground truth plus encoded model inputs.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Generate `n_samples` scenarios on a `height` x `width` grid and
    /// solve each with the finite-difference solver.
    #[staticmethod]
    #[pyo3(signature = (height, width, n_samples, seed, wells_min = 1, wells_max = 3))]
    fn generate(
        height: usize,
        width: usize,
        n_samples: usize,
        seed: u64,
        wells_min: usize,
        wells_max: usize,
    ) -> PyResult<Self> {
        let grid = GridSpec::new(height, width).map_err(py_err)?;
        let mut config = DatasetConfig::new(grid, n_samples, seed);
        config.well_count_range = (wells_min, wells_max);
        Ok(PyDataset {
            inner: generate_dataset(&config).map_err(py_err)?,
        })
    }

    /// Read a `.gwds` file written by `save` or the CLI.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: read_dataset(std::path::Path::new(path)).map_err(py_err)?,
        })
    }

    /// Write the dataset (and its sidecar `.manifest`) to `path`.
    fn save(&self, path: &str) -> PyResult<()> {
        write_dataset(&self.inner, std::path::Path::new(path)).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Grid dimensions as `(height, width)`.
    fn grid(&self) -> (usize, usize) {
        let g = self.inner.config.grid;
        (g.height, g.width)
    }

    /// Flat 3-channel model input (fixed heads, fixed mask, conductivity).
    fn input(&self, index: usize) -> PyResult<Vec<f32>> {
        self.sample_ref(index).map(|s| s.input.clone())
    }

    /// Flat solved head field.
    fn target(&self, index: usize) -> PyResult<Vec<f32>> {
        self.sample_ref(index).map(|s| s.target.clone())
    }

    /// The reproducibility manifest describing the generating configuration.
    fn manifest(&self) -> String {
        gwnet_core::datagen::manifest_string(&self.inner.config)
    }
}

impl PyDataset {
    fn sample_ref(&self, index: usize) -> PyResult<&gwnet_core::grid::Sample> {
        self.inner.samples.get(index).ok_or_else(|| {
            PyValueError::new_err(format!(
                "index {index} outside dataset of {}",
                self.inner.samples.len()
            ))
        })
    }
}

/// A U-Net or attention U-Net surrogate for the steady-state solver.
#[pyclass(name = "Surrogate")]
struct PySurrogate {
    model: Model<f32>,
}

#[pymethods]
impl PySurrogate {
    /// Build a freshly initialized model. `variant` is `"unet"` or
    /// `"attention-unet"`; `width_divisor` shrinks every encoder width by
    /// a power of two.
    #[new]
    #[pyo3(signature = (variant = "attention-unet", height = 64, width = 64, seed = 0, width_divisor = 1))]
    fn new(
        variant: &str,
        height: usize,
        width: usize,
        seed: u64,
        width_divisor: usize,
    ) -> PyResult<Self> {
        let grid = GridSpec::new(height, width).map_err(py_err)?;
        let config = ModelConfig::new(Variant::parse(variant).map_err(py_err)?)
            .with_width_divisor(width_divisor)
            .map_err(py_err)?;
        Ok(PySurrogate {
            model: build_model(&config, &grid, seed).map_err(py_err)?,
        })
    }

    /// Load a `.gwck` checkpoint written by `save` or the CLI.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PySurrogate {
            model: load_checkpoint(std::path::Path::new(path)).map_err(py_err)?,
        })
    }

    /// Write a `.gwck` checkpoint.
    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(std::path::Path::new(path), &self.model).map_err(py_err)
    }

    fn variant(&self) -> &'static str {
        self.model.config.variant.as_str()
    }

    fn num_parameters(&self) -> usize {
        self.model.count_parameters().0
    }

    /// Human-readable per-block parameter-count table.
    fn parameter_table(&self) -> String {
        self.model.parameter_table()
    }

    /// Predicted head field for one flat 3-channel input.
    fn predict(&self, input: Vec<f32>, height: usize, width: usize) -> PyResult<Vec<f32>> {
        let x = image_tensor(input, height, width)?;
        Ok(self.model.forward_eval(&x).map_err(py_err)?.data)
    }

    /// Monte-Carlo-dropout mean and standard deviation over `passes`
    /// stochastic forward passes.
    #[pyo3(signature = (input, height, width, passes = 100, seed = 0))]
    fn mc_dropout(
        &self,
        input: Vec<f32>,
        height: usize,
        width: usize,
        passes: usize,
        seed: u64,
    ) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let x = image_tensor(input, height, width)?;
        let (mean, std) = mc_dropout_predict(&self.model, &x, passes, seed, true).map_err(py_err)?;
        Ok((mean.data, std.data))
    }

    /// Train in place with Adam and seeded shuffling/dropout. The learning
    /// rate starts at `learning_rate`, holds for `lr_hold_frac` of the
    /// epochs, then cosine-anneals to `lr_final`. Returns the loss history
    /// as `(epoch, train_loss, val_loss)` tuples; epoch 0 is the untrained
    /// baseline.
    #[pyo3(signature = (train_set, val_set, epochs, batch_size = 32, learning_rate = 8e-4, lr_final = 0.0, lr_hold_frac = 0.75, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        train_set: &PyDataset,
        val_set: &PyDataset,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        lr_final: f64,
        lr_hold_frac: f64,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let mut config = TrainConfig::new(seed);
        config.epochs = epochs;
        config.batch_size = batch_size;
        config.learning_rate = learning_rate;
        config.lr_final = lr_final;
        config.lr_hold_frac = lr_hold_frac;
        let report =
            train(&mut self.model, &train_set.inner, &val_set.inner, &config).map_err(py_err)?;
        Ok(report
            .history
            .into_iter()
            .map(|r| (r.epoch, r.train_loss, r.val_loss))
            .collect())
    }

    /// `(rmse, r2)` of the model over a dataset.
    #[pyo3(signature = (data, batch_size = 32))]
    fn evaluate(&self, data: &PyDataset, batch_size: usize) -> PyResult<(f64, f64)> {
        let metrics = evaluate_metrics(&self.model, &data.inner, batch_size).map_err(py_err)?;
        Ok((metrics.rmse, metrics.r2))
    }
}

#[pymodule]
fn gwnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySurrogate>()?;
    m.add_function(wrap_pyfunction!(sample_conductivity, m)?)?;
    m.add_function(wrap_pyfunction!(solve_head, m)?)?;
    Ok(())
}
