//! Python bindings: integrals, FCI, the forged ground state, the subspace
//! expansion and its spectra and charges.

use std::path::PathBuf;
use std::sync::Arc;

use efqse::config::{MitigationSpec, RunConfig, RunMode};
use efqse::fci::fci_solve;
use efqse::forging::EFAnsatz;
use efqse::integrals::{read_fcidump, MolecularIntegrals};
use efqse::pipeline::{self, GroundOutcome, QseOutcome, Settings as CoreSettings, System as CoreSystem};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(pyefqse, EfqseError, PyException);

fn err(e: efqse::Error) -> PyErr {
    EfqseError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| EfqseError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Active-space integrals read from an FCIDUMP file.
#[pyclass(frozen)]
struct Integrals {
    inner: MolecularIntegrals,
}

#[pymethods]
impl Integrals {
    #[staticmethod]
    fn from_fcidump(path: PathBuf) -> PyResult<Self> {
        read_fcidump(&path).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn n_up(&self) -> usize {
        self.inner.n_up
    }

    #[getter]
    fn n_dn(&self) -> usize {
        self.inner.n_dn
    }

    #[getter]
    fn e0(&self) -> f64 {
        self.inner.e0
    }

    #[getter]
    fn h(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.h)
    }

    fn eri(&self, p: usize, r: usize, q: usize, s: usize) -> PyResult<f64> {
        let m = self.inner.m;
        if [p, r, q, s].iter().any(|&i| i >= m) {
            return Err(EfqseError::new_err(format!("orbital index out of range for m = {m}")));
        }
        Ok(self.inner.eri(p, r, q, s))
    }

    /// Energy of the closed-shell reference determinant.
    fn reference_energy(&self) -> f64 {
        self.inner.reference_energy()
    }

    /// Lowest `n_roots` FCI energies and their `<S^2>` in the `S_z = 0` sector.
    #[pyo3(signature = (n_roots = 1))]
    fn fci(&self, py: Python<'_>, n_roots: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let r = py.detach(|| fci_solve(&self.inner, n_roots)).map_err(err)?;
        Ok((r.energies.clone(), r.s2.clone()))
    }
}

/// Integrals plus optional AO data, after freezing and truncation.
#[pyclass(frozen)]
struct System {
    inner: Arc<CoreSystem>,
}

#[pymethods]
impl System {
    #[staticmethod]
    #[pyo3(signature = (fcidump, aux = None, frozen = 0, active = None))]
    fn load(fcidump: PathBuf, aux: Option<PathBuf>, frozen: usize, active: Option<usize>) -> PyResult<Self> {
        pipeline::load_system(&fcidump, aux.as_deref(), frozen, active).map(|s| Self { inner: Arc::new(s) }).map_err(err)
    }

    #[getter]
    fn integrals(&self) -> Integrals {
        Integrals { inner: self.inner.ints.clone() }
    }

    #[getter]
    fn has_aux(&self) -> bool {
        self.inner.aux.is_some()
    }

    /// FCI reference with peaks and charges when AO data is present.
    #[pyo3(signature = (settings, n_roots = 400, charge_states = 3))]
    fn oracle(&self, py: Python<'_>, settings: &Settings, n_roots: usize, charge_states: usize) -> PyResult<Py<PyAny>> {
        let sys = self.inner.clone();
        let st = settings.inner.clone();
        let o = py.detach(move || pipeline::run_oracle(&sys, n_roots, charge_states, &st)).map_err(err)?;
        to_py(py, &o)
    }
}

/// Run mode, mitigation preset, shots, seed and the remaining run options.
#[pyclass(frozen)]
struct Settings {
    inner: CoreSettings,
}

#[pymethods]
impl Settings {
    /// `config_json` is a run-configuration document; keyword arguments override it.
    #[new]
    #[pyo3(signature = (config_json = None, mode = None, seed = None, shots = None, mitigation = None))]
    fn new(
        config_json: Option<&str>,
        mode: Option<&str>,
        seed: Option<u64>,
        shots: Option<u64>,
        mitigation: Option<String>,
    ) -> PyResult<Self> {
        let mut cfg = match config_json {
            Some(t) => RunConfig::from_json(t, &std::env::current_dir()?).map_err(err)?,
            None => RunConfig::default(),
        };
        if let Some(m) = mode {
            cfg.mode = RunMode::from_label(m).map_err(err)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(s) = shots {
            cfg.shots = s;
        }
        if let Some(l) = mitigation {
            cfg.mitigation = MitigationSpec::Label(l);
        }
        cfg.validate().map_err(err)?;
        CoreSettings::new(&cfg).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.label()
    }

    #[getter]
    fn mitigation(&self) -> &'static str {
        self.inner.mitigation_label()
    }
}

/// Forged ansatz parameters.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Ansatz {
    inner: EFAnsatz,
}

#[pymethods]
impl Ansatz {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: EFAnsatz = serde_json::from_str(text).map_err(|e| EfqseError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("ansatz serializes")
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambda.clone()
    }

    #[getter]
    fn basis_states(&self) -> Vec<usize> {
        self.inner.basis_states.clone()
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }
}

/// Optimized or fixed ansatz evaluated under the run settings.
#[pyclass(frozen)]
struct Ground {
    system: Arc<CoreSystem>,
    settings: CoreSettings,
    inner: Arc<GroundOutcome>,
}

#[pymethods]
impl Ground {
    #[getter]
    fn energy(&self) -> (f64, f64) {
        (self.inner.energy.value, self.inner.energy.sigma)
    }

    #[getter]
    fn exact_energy(&self) -> f64 {
        self.inner.exact_energy
    }

    #[getter]
    fn hf_energy(&self) -> f64 {
        self.inner.hf_energy
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn ansatz(&self) -> Ansatz {
        Ansatz { inner: self.inner.ansatz.clone() }
    }

    /// Subspace expansion on top of this state; densities of the lowest
    /// `n_diagonal` states are kept for charge analysis.
    #[pyo3(signature = (n_diagonal = 5))]
    fn qse(&self, py: Python<'_>, n_diagonal: usize) -> PyResult<Qse> {
        let (sys, st, g) = (self.system.clone(), self.settings.clone(), self.inner.clone());
        let q = py.detach(move || pipeline::run_qse_stage(&sys, &g, &st, n_diagonal)).map_err(err)?;
        Ok(Qse { system: self.system.clone(), settings: self.settings.clone(), ground: self.inner.clone(), inner: q })
    }
}

/// Optimize (or evaluate a given ansatz) and measure under `settings`.
#[pyfunction]
#[pyo3(signature = (system, settings, ansatz = None))]
fn ground(py: Python<'_>, system: &System, settings: &Settings, ansatz: Option<Ansatz>) -> PyResult<Ground> {
    let (sys, st) = (system.inner.clone(), settings.inner.clone());
    let a = ansatz.map(|a| a.inner);
    let g = py.detach(move || pipeline::run_ground(&sys, &st, a)).map_err(err)?;
    Ok(Ground { system: system.inner.clone(), settings: settings.inner.clone(), inner: Arc::new(g) })
}

#[derive(Serialize)]
struct StateRow<'a> {
    label: &'a str,
    energy: f64,
    sigma: f64,
    s2: f64,
    spin: Option<f64>,
    unstable: bool,
}

/// Subspace-expansion eigenstates with spectra and charges.
#[pyclass(frozen)]
struct Qse {
    system: Arc<CoreSystem>,
    settings: CoreSettings,
    ground: Arc<GroundOutcome>,
    inner: QseOutcome,
}

#[pymethods]
impl Qse {
    /// One dict per state in energy order.
    fn states(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let rows: Vec<StateRow> = self
            .inner
            .result
            .states
            .iter()
            .zip(&self.inner.labels)
            .map(|(s, l)| StateRow { label: l, energy: s.energy.value, sigma: s.energy.sigma, s2: s.s2.value, spin: s.spin, unstable: s.unstable })
            .collect();
        to_py(py, &rows)
    }

    fn energies(&self) -> Vec<f64> {
        self.inner.result.energies()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    /// Dipole peaks relative to the ground state; needs AO data.
    fn peaks(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let p = pipeline::qse_peaks(&self.system, &self.ground, &self.inner).map_err(err)?;
        to_py(py, &p.peaks)
    }

    /// Broadened inelastic spectrum as `(omega, intensity)` in Hartree.
    fn spectrum(&self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = pipeline::qse_peaks(&self.system, &self.ground, &self.inner).map_err(err)?;
        let s = pipeline::spectrum(&p, &self.settings).map_err(err)?;
        Ok((s.omega, s.intensity))
    }

    /// Partial charges of the forged state and the lowest expansion states.
    fn charges(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let c = pipeline::qse_charges(&self.system, &self.ground, &self.inner, &self.settings).map_err(err)?;
        to_py(py, &c)
    }
}

#[pymodule]
fn pyefqse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EfqseError", m.py().get_type::<EfqseError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Integrals>()?;
    m.add_class::<System>()?;
    m.add_class::<Settings>()?;
    m.add_class::<Ansatz>()?;
    m.add_class::<Ground>()?;
    m.add_class::<Qse>()?;
    m.add_function(wrap_pyfunction!(ground, m)?)?;
    Ok(())
}
