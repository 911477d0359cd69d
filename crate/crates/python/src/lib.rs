//! Python bindings: molecules, configuration, the score network, training,
//! sampling, metrics and the selftest battery.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mjae_core::autodiff::Tensor;
use mjae_core::molgraph::{element_index, parse_molecule, MoleculeGraph};
use mjae_core::sampling::{self, SamplerConfig};
use mjae_core::{evalsuite, loss, rng, selftest, toy, training, trajectory, Config, ScoreNetwork};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "Molecule", module = "mjae", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMolecule {
    inner: MoleculeGraph,
}

#[pymethods]
impl PyMolecule {
    /// `elements` are symbols (H, C, N, O, F); `bonds` are `(i, j, order)` with
    /// order 1–3 or 4 for aromatic.
    #[new]
    #[pyo3(signature = (elements, bonds, positions, charges=None))]
    fn new(elements: Vec<String>, bonds: Vec<(usize, usize, u8)>, positions: Vec<[f64; 3]>, charges: Option<Vec<i8>>) -> PyResult<Self> {
        let n = elements.len();
        let types = elements
            .iter()
            .map(|e| element_index(e).ok_or_else(|| value_err(format!("unknown element {e:?}"))))
            .collect::<PyResult<Vec<u8>>>()?;
        let mut matrix = vec![0u8; n * n];
        for &(i, j, b) in &bonds {
            if i >= n || j >= n {
                return Err(value_err(format!("bond ({i}, {j}) out of range for {n} atoms")));
            }
            matrix[i * n + j] = b;
            matrix[j * n + i] = b;
        }
        let charges = charges.unwrap_or_else(|| vec![0; n]);
        MoleculeGraph::new(types, charges, matrix, positions).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(record: &str) -> PyResult<Self> {
        parse_molecule(record).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_record_line()
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn elements(&self) -> Vec<&'static str> {
        (0..self.inner.n()).map(|i| self.inner.element(i)).collect()
    }

    #[getter]
    fn charges(&self) -> Vec<i8> {
        self.inner.charges().to_vec()
    }

    #[getter]
    fn bonds(&self) -> Vec<(usize, usize, u8)> {
        self.inner.bond_list()
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions().to_vec()
    }

    fn radius_of_gyration(&self) -> f64 {
        self.inner.radius_of_gyration()
    }

    /// `(P, H, E)` one-hot relaxation as nested lists: n×3, n×9, n×n×5.
    fn dense(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let d = self.inner.to_dense();
        let n = self.inner.n();
        let e = rows(&d.e);
        (rows(&d.p), rows(&d.h), e.chunks(n).map(<[Vec<f64>]>::to_vec).collect())
    }

    fn canonical_hash(&self) -> String {
        evalsuite::canonical_hash(&self.inner)
    }

    fn isomorphic(&self, other: &PyMolecule) -> bool {
        evalsuite::isomorphic(&self.inner, &other.inner)
    }

    fn is_valid(&self) -> bool {
        self.inner.validate_valence().stable
    }

    fn __repr__(&self) -> String {
        format!("Molecule({} atoms, {} bonds)", self.inner.n(), self.inner.bond_list().len())
    }
}

#[pyclass(name = "Config", module = "mjae", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Defaults, overridden by flat `section.key = value` text.
    #[new]
    #[pyo3(signature = (text=""))]
    fn new(text: &str) -> PyResult<Self> {
        Config::parse(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(value_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .entries()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| value_err(format!("unknown config key {key:?}")))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

#[pyclass(name = "ScoreNetwork", module = "mjae", frozen)]
struct PyNetwork {
    inner: ScoreNetwork,
}

#[pymethods]
impl PyNetwork {
    /// Fresh random initialisation from a config.
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        training::build_network(&config.inner).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        training::load_checkpoint(&path).map(|c| Self { inner: c.network }).map_err(runtime_err)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        training::save_checkpoint(&path, &self.inner, None).map_err(runtime_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Pooled clean-data representation used by the linear probe.
    fn representation(&self, molecule: &PyMolecule) -> PyResult<Vec<f64>> {
        Ok(self.inner.representation(&molecule.inner.to_dense()).map_err(runtime_err)?.into_data())
    }

    /// Contrastive embedding of the clean state at time `t`.
    #[pyo3(signature = (molecule, t=0.0))]
    fn embedding(&self, molecule: &PyMolecule, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.embedding(&molecule.inner.to_dense(), t).map_err(runtime_err)?.into_data())
    }

    /// Perturbs `molecule` to time `t` and returns the score-matching loss
    /// of the network's prediction (β²-weighted, P/H/E components).
    #[pyo3(signature = (molecule, t, seed=0))]
    fn denoising_loss(&self, molecule: &PyMolecule, t: f64, seed: u64) -> PyResult<(f64, [f64; 3])> {
        let x0 = molecule.inner.to_dense();
        let s = trajectory::perturb_continuous(&x0, t, &mut rng::stream(seed, &[]), &self.inner.schedules).map_err(value_err)?;
        let pred = self.inner.scores(&s.xt, &s.xt, t).map_err(runtime_err)?;
        let b = self.inner.noise_scales(t).map_err(value_err)?;
        loss::score_matching_value(&pred, &s.score_target, b.map(|x| x * x)).map_err(runtime_err)
    }
}

fn graphs(ms: &[PyRef<'_, PyMolecule>]) -> Vec<MoleculeGraph> {
    ms.iter().map(|m| m.inner.clone()).collect()
}

/// The 20-molecule toy corpus.
#[pyfunction]
fn toy_corpus() -> Vec<PyMolecule> {
    toy::corpus().into_iter().map(|inner| PyMolecule { inner }).collect()
}

#[pyfunction]
fn toy_molecule(name: &str) -> PyResult<PyMolecule> {
    toy::molecule(name).map(|inner| PyMolecule { inner }).ok_or_else(|| value_err(format!("no toy molecule {name:?}")))
}

/// Trains a fresh network; returns it with the per-epoch `(total, l_sc, l_co)` history.
#[pyfunction]
fn pretrain(py: Python<'_>, molecules: Vec<PyRef<'_, PyMolecule>>, config: &PyConfig) -> PyResult<(PyNetwork, Vec<(f64, f64, f64)>)> {
    let data = graphs(&molecules);
    let cfg = config.inner.clone();
    let out = py.detach(|| training::train(&data, &cfg)).map_err(runtime_err)?;
    let history = out.history.iter().map(|s| (s.total, s.l_sc, s.l_co)).collect();
    Ok((PyNetwork { inner: out.network }, history))
}

/// Reverse-time generation: `lambda_ = 1` is the reverse SDE, `0` the ODE.
#[pyfunction]
#[pyo3(signature = (network, n, n_atoms, lambda_=1.0, steps=1000, seed=0))]
fn sample(py: Python<'_>, network: &PyNetwork, n: usize, n_atoms: usize, lambda_: f64, steps: usize, seed: u64) -> PyResult<Vec<PyMolecule>> {
    let cfg = SamplerConfig { steps, lambda: lambda_, n_atoms, num_samples: n, seed, threads: 1, ..Default::default() };
    let gs = py.detach(|| sampling::generate(&network.inner, &cfg)).map_err(runtime_err)?;
    Ok(gs.into_iter().map(|inner| PyMolecule { inner }).collect())
}

#[pyfunction]
fn generation_metrics<'py>(
    py: Python<'py>,
    samples: Vec<PyRef<'py, PyMolecule>>,
    reference: Vec<PyRef<'py, PyMolecule>>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = evalsuite::generation_metrics(&graphs(&samples), &graphs(&reference)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("count", m.count)?;
    d.set_item("validity", m.validity)?;
    d.set_item("atom_stability", m.atom_stability)?;
    d.set_item("unique", m.unique)?;
    d.set_item("atom_tv", m.atom_tv)?;
    d.set_item("bond_tv", m.bond_tv)?;
    Ok(d)
}

/// Ridge probe on frozen representations; returns `(pretrained_mse, random_mse)`.
#[pyfunction]
fn linear_probe(
    pretrained: &PyNetwork,
    random_init: &PyNetwork,
    molecules: Vec<PyRef<'_, PyMolecule>>,
    labels: Vec<f64>,
    seeds: Vec<u64>,
) -> PyResult<(f64, f64)> {
    let r = evalsuite::linear_probe(&pretrained.inner, &random_init.inner, &graphs(&molecules), &labels, &seeds).map_err(value_err)?;
    Ok((r.pretrained_mse, r.random_mse))
}

/// Max residual of the joint-likelihood gradient decomposition on a square logit table.
#[pyfunction]
fn verify_decomposition(table: Vec<Vec<f64>>) -> PyResult<f64> {
    let k = table.len();
    if table.iter().any(|r| r.len() != k) {
        return Err(value_err("table must be square"));
    }
    let t = Tensor::new(vec![k, k], table.concat()).map_err(value_err)?;
    loss::verify_decomposition(&t).map_err(value_err)
}

/// `(name, passed, detail)` for each selftest check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn run_selftest(py: Python<'_>, seed: u64) -> Vec<(String, bool, String)> {
    py.detach(|| selftest::run(seed)).into_iter().map(|c| (c.name, c.pass, c.detail)).collect()
}

#[pymodule]
fn mjae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMolecule>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(toy_molecule, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(generation_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(linear_probe, m)?)?;
    m.add_function(wrap_pyfunction!(verify_decomposition, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    Ok(())
}
