//! One-body reduced density matrices, dipole structure factor and partial
//! atomic charges.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::integrals::givens;
use crate::qse::{OpTables, SandwichEngine};
use crate::tensor_op::build_one_body_tensor;
use crate::tomography::task_rng;

pub const HARTREE_TO_EV: f64 = 27.211386245988;
/// Default Gaussian width of a spectral line, in Hartree.
pub const MIN_BROADENING: f64 = 2e-4;
/// Resamples used for charge uncertainties.
pub const CHARGE_SAMPLES: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RDM {
    /// Spin-summed `rho_pr = <A|sum_sigma a_p^+ a_r|B>`.
    pub rho: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub states: (usize, usize),
}

impl RDM {
    pub fn exact(rho: DMatrix<f64>, states: (usize, usize)) -> Self {
        let n = rho.nrows();
        Self { rho, sigma: DMatrix::zeros(n, n), states }
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace()
    }
}

/// Sandwich tables of every `E_pr`, reused across state pairs.
pub struct RdmTables {
    m: usize,
    tables: Vec<OpTables>,
    values: Vec<DMatrix<f64>>,
}

impl RdmTables {
    pub fn new(engine: &SandwichEngine<'_>, m: usize) -> Result<Self> {
        let mut tables = Vec::with_capacity(m * m);
        let mut values = Vec::with_capacity(m * m);
        for p in 0..m {
            for r in 0..m {
                let mut e = DMatrix::zeros(m, m);
                e[(p, r)] = 1.0;
                let t = engine.tables(&build_one_body_tensor(&e)?)?;
                values.push(engine.values(&t).map(|z| z.re));
                tables.push(t);
            }
        }
        Ok(Self { m, tables, values })
    }
}

/// `rho^{AB}` for states with excitation-basis coefficients `c_a`, `c_b`.
/// Diagonal RDMs are rescaled to trace `n_electrons` when given; transition
/// RDMs get the phase that makes their largest-magnitude element positive.
pub fn compute_rdm(
    engine: &SandwichEngine<'_>,
    tabs: &RdmTables,
    c_a: &[f64],
    c_b: &[f64],
    states: (usize, usize),
    n_electrons: Option<f64>,
    with_sigma: bool,
) -> Result<RDM> {
    let n = engine.len();
    if c_a.len() != n || c_b.len() != n {
        return Err(Error::Dimension(format!("coefficients of length {} / {} for {n} excitations", c_a.len(), c_b.len())));
    }
    let m = tabs.m;
    let mut rho = DMatrix::zeros(m, m);
    let mut sig = DMatrix::zeros(m, m);
    for p in 0..m {
        for r in 0..m {
            let v = &tabs.values[p * m + r];
            let cb = DMatrix::from_column_slice(n, 1, c_b);
            let ca = DMatrix::from_column_slice(n, 1, c_a);
            rho[(p, r)] = (ca.transpose() * v * cb)[(0, 0)];
            if with_sigma && engine.is_noisy() {
                let coeffs: Vec<(usize, usize, f64)> = (0..n)
                    .flat_map(|mu| (0..n).map(move |nu| (mu, nu)))
                    .filter_map(|(mu, nu)| {
                        let w = c_a[mu] * c_b[nu];
                        (w != 0.0).then_some((mu, nu, w))
                    })
                    .collect();
                sig[(p, r)] = engine.sigma(&tabs.tables[p * m + r], &coeffs)?.0;
            }
        }
    }
    if states.0 == states.1 {
        if let Some(ne) = n_electrons {
            let tr = rho.trace();
            if tr.abs() < 1e-12 {
                return Err(Error::DegenerateState);
            }
            rho *= ne / tr;
            sig *= (ne / tr).abs();
        }
    } else {
        let big = rho.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if big < 0.0 {
            rho = -rho;
        }
    }
    Ok(RDM { rho, sigma: sig, states })
}

/// Dipole matrices in the active-space orbital basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DipoleMatrices {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl DipoleMatrices {
    pub fn zeros(m: usize) -> Self {
        Self { x: DMatrix::zeros(m, m), y: DMatrix::zeros(m, m), z: DMatrix::zeros(m, m) }
    }

    pub fn components(&self) -> [&DMatrix<f64>; 3] {
        [&self.x, &self.y, &self.z]
    }

    /// `R d R^T`, matching the integral transformation `psi'_m = sum_l R_ml psi_l`.
    pub fn transform(&self, rot: &DMatrix<f64>) -> Self {
        let t = |d: &DMatrix<f64>| rot * d * rot.transpose();
        Self { x: t(&self.x), y: t(&self.y), z: t(&self.z) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Peak {
    pub state: usize,
    /// Excitation energy in Hartree.
    pub energy: Estimate,
    /// `|<A|mu|0>|^2` in atomic units.
    pub weight: f64,
    pub spin: Option<f64>,
    pub label: String,
    /// The `A = 0` line at zero frequency.
    pub elastic: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumPeaks {
    pub peaks: Vec<Peak>,
}

impl SpectrumPeaks {
    pub fn inelastic(&self) -> impl Iterator<Item = &Peak> {
        self.peaks.iter().filter(|p| !p.elastic)
    }

    pub fn elastic(&self) -> Option<&Peak> {
        self.peaks.iter().find(|p| p.elastic)
    }

    pub fn total_weight(&self) -> f64 {
        self.peaks.iter().map(|p| p.weight).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("energy_Ha,energy_eV,sigma_Ha,weight,spin,label,elastic\n");
        for p in &self.peaks {
            let spin = p.spin.map_or(String::new(), |s| format!("{s}"));
            out.push_str(&format!(
                "{:.10},{:.8},{:.3e},{:.10e},{},{},{}\n",
                p.energy.value,
                p.energy.value * HARTREE_TO_EV,
                p.energy.sigma,
                p.weight,
                spin,
                p.label,
                p.elastic
            ));
        }
        out
    }
}

/// Input per state: transition RDM `rho^{A0}`, energy and spin. Entry `0`
/// is the ground state and its RDM is the ground-state density.
pub struct PeakInput<'a> {
    pub rdm: &'a RDM,
    pub energy: Estimate,
    pub spin: Option<f64>,
    pub label: String,
}

/// `mu_A0 = sum_xyz |sum_pr d_pr rho^{A0}_pr|^2` with `Delta eps_A0 = eps_A - eps_0`.
pub fn dsf_peaks(states: &[PeakInput<'_>], dipole: &DipoleMatrices) -> Result<SpectrumPeaks> {
    let Some(ground) = states.first() else {
        return Err(Error::Invalid("no states".into()));
    };
    let m = ground.rdm.rho.nrows();
    if dipole.x.shape() != (m, m) || dipole.y.shape() != (m, m) || dipole.z.shape() != (m, m) {
        return Err(Error::Dimension(format!("dipole matrices must be {m}x{m}")));
    }
    let e0 = ground.energy;
    let peaks = states
        .iter()
        .enumerate()
        .map(|(a, s)| {
            let weight = dipole.components().iter().map(|d| d.component_mul(&s.rdm.rho).sum().powi(2)).sum();
            let energy = if a == 0 {
                Estimate::exact(0.0)
            } else {
                Estimate::new(s.energy.value - e0.value, s.energy.sigma.hypot(e0.sigma))
            };
            Peak { state: a, energy, weight, spin: s.spin, label: s.label.clone(), elastic: a == 0 }
        })
        .collect();
    Ok(SpectrumPeaks { peaks })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(Error::Invalid(format!("invalid grid {:?}", self)));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.start + i as f64 * self.step).collect())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.start && x <= self.stop
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub intensity: Vec<f64>,
    /// States whose line falls outside the grid.
    pub outside: Vec<usize>,
}

impl Spectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_Ha,omega_eV,intensity\n");
        for (w, i) in self.omega.iter().zip(&self.intensity) {
            out.push_str(&format!("{w:.8},{:.6},{i:.10e}\n", w * HARTREE_TO_EV));
        }
        out
    }
}

/// Sum of unit-area Gaussians with width `max(floor, sigma_A)`, weighted by
/// `mu_A0`. The elastic line is included only when `include_elastic`.
pub fn broaden(peaks: &SpectrumPeaks, grid: &Grid, floor: f64, include_elastic: bool) -> Result<Spectrum> {
    if !(floor > 0.0) {
        return Err(Error::Invalid("broadening width must be positive".into()));
    }
    let omega = grid.points()?;
    let mut intensity = vec![0.0; omega.len()];
    let mut outside = Vec::new();
    for p in &peaks.peaks {
        if p.elastic && !include_elastic {
            continue;
        }
        if !grid.contains(p.energy.value) {
            outside.push(p.state);
        }
        let w = floor.max(p.energy.sigma);
        let norm = p.weight / (w * (2.0 * std::f64::consts::PI).sqrt());
        for (o, i) in omega.iter().zip(intensity.iter_mut()) {
            let x = (o - p.energy.value) / w;
            *i += norm * (-0.5 * x * x).exp();
        }
    }
    Ok(Spectrum { omega, intensity, outside })
}

/// Matrix in row-major nested form for JSON files.
fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Data(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuxFile {
    atoms: Vec<String>,
    nuclear_charges: Vec<f64>,
    ao_atom: Vec<usize>,
    overlap: Vec<Vec<f64>>,
    mo_coeff: Vec<Vec<f64>>,
    frozen: Vec<usize>,
    active: Vec<usize>,
    #[serde(default)]
    total_charge: f64,
    #[serde(default)]
    orthogonalizer: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    dipole_mo: Option<[Vec<Vec<f64>>; 3]>,
}

/// AO-basis data for population analysis and transition dipoles.
#[derive(Clone, Debug)]
pub struct AuxiliaryMatrices {
    pub atoms: Vec<String>,
    pub nuclear_charges: Vec<f64>,
    /// Atom index of every AO.
    pub ao_atom: Vec<usize>,
    pub overlap: DMatrix<f64>,
    /// `n_ao x n_mo`.
    pub mo_coeff: DMatrix<f64>,
    /// MO indices folded into the core, doubly occupied.
    pub frozen: Vec<usize>,
    /// MO indices of the active space, in active-orbital order.
    pub active: Vec<usize>,
    pub total_charge: f64,
    /// Columns are orthonormal local orbitals in the AO basis; each is
    /// assigned to the atom of the AO with the same index.
    pub orthogonalizer: Option<DMatrix<f64>>,
    /// Electronic dipole integrals over the active MOs.
    pub dipole_mo: Option<DipoleMatrices>,
}

impl AuxiliaryMatrices {
    pub fn n_ao(&self) -> usize {
        self.overlap.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_ao();
        if self.overlap.ncols() != n || self.mo_coeff.nrows() != n {
            return Err(Error::Dimension(format!("overlap {:?} and MO coefficients {:?}", self.overlap.shape(), self.mo_coeff.shape())));
        }
        if self.ao_atom.len() != n || self.ao_atom.iter().any(|&a| a >= self.atoms.len()) {
            return Err(Error::Dimension("AO-to-atom map inconsistent with the atom list".into()));
        }
        if self.nuclear_charges.len() != self.atoms.len() {
            return Err(Error::Dimension("one nuclear charge per atom required".into()));
        }
        let n_mo = self.mo_coeff.ncols();
        if self.frozen.iter().chain(&self.active).any(|&i| i >= n_mo) {
            return Err(Error::Dimension("MO index out of range".into()));
        }
        if self.frozen.iter().any(|i| self.active.contains(i)) {
            return Err(Error::Invalid("frozen and active orbitals overlap".into()));
        }
        if (&self.overlap - self.overlap.transpose()).abs().max() > 1e-10 {
            return Err(Error::Invalid("overlap matrix is not symmetric".into()));
        }
        let min = SymmetricEigen::new(self.overlap.clone()).eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::Invalid(format!("overlap matrix not positive definite (min eigenvalue {min:e})")));
        }
        if let Some(x) = &self.orthogonalizer {
            if x.shape() != (n, n) {
                return Err(Error::Dimension("orthogonalizer must be n_ao x n_ao".into()));
            }
        }
        if let Some(d) = &self.dipole_mo {
            let m = self.active.len();
            if d.x.shape() != (m, m) || d.y.shape() != (m, m) || d.z.shape() != (m, m) {
                return Err(Error::Dimension(format!("dipole matrices must be {m}x{m}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: AuxFile = serde_json::from_str(text)?;
        let dipole_mo = match &f.dipole_mo {
            Some([x, y, z]) => Some(DipoleMatrices { x: from_rows(x, "dipole x")?, y: from_rows(y, "dipole y")?, z: from_rows(z, "dipole z")? }),
            None => None,
        };
        let aux = Self {
            atoms: f.atoms,
            nuclear_charges: f.nuclear_charges,
            ao_atom: f.ao_atom,
            overlap: from_rows(&f.overlap, "overlap")?,
            mo_coeff: from_rows(&f.mo_coeff, "mo_coeff")?,
            frozen: f.frozen,
            active: f.active,
            total_charge: f.total_charge,
            orthogonalizer: f.orthogonalizer.as_deref().map(|r| from_rows(r, "orthogonalizer")).transpose()?,
            dipole_mo,
        };
        aux.validate()?;
        Ok(aux)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f = AuxFile {
            atoms: self.atoms.clone(),
            nuclear_charges: self.nuclear_charges.clone(),
            ao_atom: self.ao_atom.clone(),
            overlap: to_rows(&self.overlap),
            mo_coeff: to_rows(&self.mo_coeff),
            frozen: self.frozen.clone(),
            active: self.active.clone(),
            total_charge: self.total_charge,
            orthogonalizer: self.orthogonalizer.as_ref().map(to_rows),
            dipole_mo: self.dipole_mo.as_ref().map(|d| [to_rows(&d.x), to_rows(&d.y), to_rows(&d.z)]),
        };
        serde_json::to_value(f).expect("serializable")
    }

    /// Active RDM in the rotated basis back to the MO basis, padded with
    /// doubly occupied frozen orbitals, as an `n_mo x n_mo` MO density.
    pub fn padded_mo_density(&self, rho_active: &DMatrix<f64>, phi: f64, homo_lumo: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
        let m = self.active.len();
        if rho_active.shape() != (m, m) {
            return Err(Error::Dimension(format!("{:?} RDM for {m} active orbitals", rho_active.shape())));
        }
        let rho = match homo_lumo {
            Some((h, l)) => {
                let r = givens(m, phi, h, l);
                r.transpose() * rho_active * &r
            }
            None => rho_active.clone(),
        };
        let n_mo = self.mo_coeff.ncols();
        let mut p = DMatrix::zeros(n_mo, n_mo);
        for &i in &self.frozen {
            p[(i, i)] = 2.0;
        }
        for (a, &i) in self.active.iter().enumerate() {
            for (b, &j) in self.active.iter().enumerate() {
                p[(i, j)] = rho[(a, b)];
            }
        }
        Ok(p)
    }

    /// AO density `C P C^T`.
    pub fn ao_density(&self, p_mo: &DMatrix<f64>) -> DMatrix<f64> {
        &self.mo_coeff * p_mo * self.mo_coeff.transpose()
    }

    fn orbital_populations(&self, p_ao: &DMatrix<f64>, method: ChargeMethod) -> Result<Vec<f64>> {
        let pop = match method {
            ChargeMethod::Mulliken => (p_ao * &self.overlap).diagonal(),
            ChargeMethod::Lowdin => {
                let x = match &self.orthogonalizer {
                    // local-orbital density C_lo^{-1} P C_lo^{-T} with C_lo^{-1} = C_lo^T S
                    Some(c) => c.transpose() * &self.overlap,
                    None => sqrt_spd(&self.overlap)?,
                };
                (&x * p_ao * x.transpose()).diagonal()
            }
        };
        Ok(pop.iter().copied().collect())
    }

    /// `q_A = Z_A - sum_{alpha in A} population_alpha`.
    pub fn charges_from_ao(&self, p_ao: &DMatrix<f64>, method: ChargeMethod) -> Result<Vec<f64>> {
        let pop = self.orbital_populations(p_ao, method)?;
        let mut q = self.nuclear_charges.clone();
        for (alpha, &a) in self.ao_atom.iter().enumerate() {
            q[a] -= pop[alpha];
        }
        Ok(q)
    }
}

fn sqrt_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
        return Err(Error::Invalid("overlap matrix not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeMethod {
    Mulliken,
    #[default]
    Lowdin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Charges {
    pub atoms: Vec<String>,
    pub charges: Vec<Estimate>,
    pub method: ChargeMethod,
    /// Trace of the padded MO density.
    pub electrons: f64,
}

impl Charges {
    pub fn total(&self) -> f64 {
        self.charges.iter().map(|c| c.value).sum()
    }
}

/// Partial charges from an active-space RDM. Uncertainties come from
/// [`CHARGE_SAMPLES`] Gaussian resamples of the RDM entries, symmetrized.
pub fn atomic_charges(
    rdm: &RDM,
    aux: &AuxiliaryMatrices,
    method: ChargeMethod,
    phi: f64,
    homo_lumo: Option<(usize, usize)>,
    seed: u64,
) -> Result<Charges> {
    aux.validate()?;
    let p = aux.padded_mo_density(&rdm.rho, phi, homo_lumo)?;
    let electrons = p.trace();
    let mean = aux.charges_from_ao(&aux.ao_density(&p), method)?;
    let n_atoms = mean.len();
    let mut sig = vec![0.0; n_atoms];
    if rdm.sigma.iter().any(|&s| s > 0.0) {
        let mut rng = task_rng(seed, &[0xC4A6, rdm.states.0 as u64, rdm.states.1 as u64]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut samples = Vec::with_capacity(CHARGE_SAMPLES);
        for _ in 0..CHARGE_SAMPLES {
            let noisy = DMatrix::from_fn(rdm.rho.nrows(), rdm.rho.ncols(), |i, j| {
                rdm.rho[(i, j)] + rdm.sigma[(i, j)] * normal.sample(&mut rng)
            });
            let sym = (&noisy + noisy.transpose()) * 0.5;
            let ps = aux.padded_mo_density(&sym, phi, homo_lumo)?;
            samples.push(aux.charges_from_ao(&aux.ao_density(&ps), method)?);
        }
        for (a, s) in sig.iter_mut().enumerate() {
            let mu = samples.iter().map(|q| q[a]).sum::<f64>() / CHARGE_SAMPLES as f64;
            let var = samples.iter().map(|q| (q[a] - mu).powi(2)).sum::<f64>() / (CHARGE_SAMPLES - 1) as f64;
            *s = var.sqrt();
        }
    }
    Ok(Charges {
        atoms: aux.atoms.clone(),
        charges: mean.iter().zip(&sig).map(|(&v, &s)| Estimate::new(v, s)).collect(),
        method,
        electrons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fci::fci_solve;
    use crate::forging::{optimize_ground_state, EFAnsatz, MeasurementSet, OptimizerConfig};
    use crate::integrals::testing::random_integrals;
    use crate::integrals::{cholesky_eri, rotate_homo_lumo, CHOLESKY_TOL};
    use crate::qse::{assemble_qse_matrices, run_qse, SPIN_TOL};
    use crate::tensor_op::{build_excitations, build_hamiltonian_tensor, build_s2_tensor, Excitation, HalfOp};

    fn full_dipole_square(fci: &crate::fci::FCIResult, d: &DipoleMatrices) -> f64 {
        // sum_x <0|D_x D_x|0> = sum_x sum_A |<A|D_x|0>|^2 over the full sector
        let n = fci.n_states();
        d.components()
            .iter()
            .map(|dx| (0..n).map(|a| dx.component_mul(&fci.rdm(a, 0)).sum().powi(2)).sum::<f64>())
            .sum()
    }

    #[test]
    fn hf_pair_density() {
        let mut a = EFAnsatz::default_for(6, 3).unwrap();
        a.lambda = vec![1.0, 0.0];
        let ms = MeasurementSet::exact(&a).unwrap();
        let id = vec![Excitation { up: HalfOp::Identity, dn: HalfOp::Identity }];
        let eng = SandwichEngine::new(&id, &ms, &a.lambda).unwrap();
        let tabs = RdmTables::new(&eng, 6).unwrap();
        let r = compute_rdm(&eng, &tabs, &[1.0], &[1.0], (0, 0), None, false).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0, 2.0, 0.0, 0.0, 0.0]));
        assert!((r.rho - want).abs().max() < 1e-12);
    }

    struct Complete {
        ints: crate::integrals::MolecularIntegrals,
        phi: f64,
        q: crate::qse::QSEResult,
        rdms: Vec<RDM>,
    }

    fn complete_two_orbital(seed: u64) -> Complete {
        let ints = random_integrals(2, 1, 1, 300 + seed);
        let res = optimize_ground_state(&ints, &EFAnsatz::default_for(2, 1).unwrap(), &OptimizerConfig { restarts: 2, ..Default::default() }).unwrap();
        let rot = rotate_homo_lumo(&ints, res.ansatz.phi, 0, 1).unwrap();
        let h = build_hamiltonian_tensor(&rot, &cholesky_eri(&rot, CHOLESKY_TOL).unwrap()).unwrap();
        let ms = MeasurementSet::exact(&res.ansatz).unwrap();
        let ex = build_excitations(2, &[0], &[1]).unwrap();
        let mats = assemble_qse_matrices(&ex, &h, &build_s2_tensor(2).unwrap(), &ms, &res.ansatz.lambda).unwrap().with_energy_shift(ints.e0);
        let q = run_qse(&mats, SPIN_TOL).unwrap();
        let eng = SandwichEngine::new(&ex, &ms, &res.ansatz.lambda).unwrap();
        let tabs = RdmTables::new(&eng, 2).unwrap();
        let c0 = &q.states[0].coefficients;
        let rdms = q
            .states
            .iter()
            .enumerate()
            .map(|(a, s)| compute_rdm(&eng, &tabs, &s.coefficients, c0, (a, 0), None, false).unwrap())
            .collect();
        Complete { ints, phi: res.ansatz.phi, q, rdms }
    }

    #[test]
    fn rdms_match_fci_and_sum_rule_holds() {
        for seed in 0..3 {
            let c = complete_two_orbital(seed);
            let fci = fci_solve(&c.ints, 4).unwrap();
            let r = givens(2, c.phi, 0, 1);
            for (a, rdm) in c.rdms.iter().enumerate() {
                let back = r.transpose() * &rdm.rho * &r;
                let want = fci.rdm(a, 0);
                let err = (&back - &want).abs().max().min((&back + &want).abs().max());
                assert!(err < 1e-8, "state {a}: {err}");
            }
            let mut rng = task_rng(seed, &[1]);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut d = DipoleMatrices::zeros(2);
            for comp in [&mut d.x, &mut d.y, &mut d.z] {
                let g = DMatrix::from_fn(2, 2, |_, _| normal.sample(&mut rng));
                *comp = &g + g.transpose();
            }
            let d_rot = d.transform(&r);
            let inputs: Vec<PeakInput> = c
                .rdms
                .iter()
                .zip(&c.q.states)
                .map(|(rdm, s)| PeakInput { rdm, energy: s.energy, spin: s.spin, label: String::new() })
                .collect();
            let peaks = dsf_peaks(&inputs, &d_rot).unwrap();
            assert!((peaks.total_weight() - full_dipole_square(&fci, &d)).abs() < 1e-8);
            assert!(peaks.elastic().unwrap().energy.value == 0.0);
            assert_eq!(peaks.inelastic().count(), 3);
            let zero = dsf_peaks(&inputs, &DipoleMatrices::zeros(2)).unwrap();
            assert_eq!(zero.total_weight(), 0.0);
        }
    }

    #[test]
    fn broadening_contract() {
        let mk = |sigma: f64| SpectrumPeaks {
            peaks: vec![Peak { state: 1, energy: Estimate::new(0.5, sigma), weight: 1.0, spin: Some(0.0), label: "S1".into(), elastic: false }],
        };
        let grid = Grid { start: 0.4, stop: 0.6, step: 1e-5 };
        let s = broaden(&mk(0.0), &grid, MIN_BROADENING, false).unwrap();
        let area: f64 = s.intensity.iter().sum::<f64>() * grid.step;
        assert!((area - 1.0).abs() < 1e-3);
        let peak = s.intensity.iter().copied().fold(0.0, f64::max);
        assert!((peak - 1.0 / (MIN_BROADENING * (2.0 * std::f64::consts::PI).sqrt())).abs() / peak < 1e-3);
        let s1 = broaden(&mk(0.002), &grid, MIN_BROADENING, false).unwrap();
        let s2 = broaden(&mk(0.004), &grid, MIN_BROADENING, false).unwrap();
        let p1 = s1.intensity.iter().copied().fold(0.0, f64::max);
        let p2 = s2.intensity.iter().copied().fold(0.0, f64::max);
        assert!((p1 / p2 - 2.0).abs() < 1e-3);
        assert!(broaden(&mk(0.0), &Grid { start: 0.0, stop: 1.0, step: 0.0 }, MIN_BROADENING, false).is_err());
        let out = broaden(&mk(0.0), &Grid { start: 0.0, stop: 0.1, step: 0.01 }, MIN_BROADENING, false).unwrap();
        assert_eq!(out.outside, vec![1]);
    }

    fn orthonormal_aux(n_mo: usize, frozen: usize) -> AuxiliaryMatrices {
        AuxiliaryMatrices {
            atoms: (0..n_mo).map(|i| format!("X{i}")).collect(),
            nuclear_charges: vec![2.0; n_mo],
            ao_atom: (0..n_mo).collect(),
            overlap: DMatrix::identity(n_mo, n_mo),
            mo_coeff: DMatrix::identity(n_mo, n_mo),
            frozen: (0..frozen).collect(),
            active: (frozen..n_mo).collect(),
            total_charge: 0.0,
            orthogonalizer: None,
            dipole_mo: None,
        }
    }

    #[test]
    fn neutral_closed_shell_and_sum_rule() {
        let aux = orthonormal_aux(5, 2);
        let rdm = RDM::exact(DMatrix::identity(3, 3) * 2.0, (0, 0));
        for method in [ChargeMethod::Mulliken, ChargeMethod::Lowdin] {
            let q = atomic_charges(&rdm, &aux, method, 0.0, None, 0).unwrap();
            assert!(q.charges.iter().all(|c| c.value.abs() < 1e-12));
            assert_eq!(q.electrons, 10.0);
        }
        // non-orthogonal AOs, random density with fixed trace
        let mut rng = task_rng(3, &[2]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g = DMatrix::from_fn(4, 4, |_, _| normal.sample(&mut rng));
        let s = DMatrix::identity(4, 4) + (&g * g.transpose()) * 0.05;
        let sinv = sqrt_spd(&s).unwrap().try_inverse().unwrap();
        let aux = AuxiliaryMatrices {
            atoms: vec!["A".into(), "B".into()],
            nuclear_charges: vec![3.0, 2.0],
            ao_atom: vec![0, 0, 1, 1],
            overlap: s,
            mo_coeff: sinv,
            frozen: vec![0],
            active: vec![1, 2, 3],
            total_charge: 1.0,
            orthogonalizer: None,
            dipole_mo: None,
        };
        let h = DMatrix::from_fn(3, 3, |_, _| normal.sample(&mut rng));
        let eig = SymmetricEigen::new(&h + h.transpose());
        let occ = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, 0.3, 0.2]));
        let rho = &eig.eigenvectors * occ * eig.eigenvectors.transpose();
        for method in [ChargeMethod::Mulliken, ChargeMethod::Lowdin] {
            let q = atomic_charges(&RDM::exact(rho.clone(), (0, 0)), &aux, method, 0.3, Some((0, 1)), 0).unwrap();
            assert!((q.total() - 1.0).abs() < 1e-10);
            assert!((q.electrons - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resampled_uncertainty_scales() {
        let aux = orthonormal_aux(3, 0);
        let mut rdm = RDM::exact(DMatrix::identity(3, 3) * 2.0, (0, 0));
        rdm.sigma = DMatrix::from_element(3, 3, 0.01);
        let q = atomic_charges(&rdm, &aux, ChargeMethod::Mulliken, 0.0, None, 1).unwrap();
        for c in &q.charges {
            assert!(c.sigma > 0.006 && c.sigma < 0.014, "{}", c.sigma);
        }
    }

    #[test]
    fn aux_roundtrip() {
        let mut aux = orthonormal_aux(3, 1);
        aux.dipole_mo = Some(DipoleMatrices::zeros(2));
        let text = aux.to_json().to_string();
        let back = AuxiliaryMatrices::from_json(&text).unwrap();
        assert_eq!(back.overlap, aux.overlap);
        assert!(back.dipole_mo.is_some());
        let mut bad = aux.clone();
        bad.ao_atom.pop();
        assert!(bad.validate().is_err());
        assert!(AuxiliaryMatrices::from_json(r#"{"atoms": [], "bogus": 1}"#).is_err());
    }
}
