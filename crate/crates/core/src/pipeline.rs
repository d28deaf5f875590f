//! End-to-end drivers: ground state, QSE, spectra, charges, scans and the
//! exact reference.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunMode, ScanGeometry, ScanManifest};
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::fci::{fci_solve, FCIResult};
use crate::forging::{ef_energy, optimize_ground_state, EFAnsatz, OptimizationResult};
use crate::integrals::{
    cholesky_eri, freeze_orbitals, givens, read_fcidump, rotate_homo_lumo, truncate_orbitals, MolecularIntegrals,
    CHOLESKY_TOL,
};
use crate::measurement::{measure_ansatz, MitigatedSets};
use crate::mitigation::MitigationFlags;
use crate::observables::{
    atomic_charges, broaden, compute_rdm, dsf_peaks, AuxiliaryMatrices, Charges, DipoleMatrices, PeakInput,
    RdmTables, Spectrum, SpectrumPeaks, RDM,
};
use crate::qse::{assemble_qse_matrices, run_qse, QSEMatrices, QSEResult, SandwichEngine};
use crate::tensor_op::{build_excitations, build_hamiltonian_tensor, build_s2_tensor, Excitation, TensorFactorOp};

/// Active-space Hamiltonian plus optional AO data.
#[derive(Clone, Debug)]
pub struct System {
    pub ints: MolecularIntegrals,
    pub aux: Option<AuxiliaryMatrices>,
}

impl System {
    pub fn n_occ(&self) -> usize {
        self.ints.n_up
    }

    pub fn homo_lumo(&self) -> (usize, usize) {
        (self.n_occ() - 1, self.n_occ())
    }

    pub fn dipole(&self) -> Option<&DipoleMatrices> {
        self.aux.as_ref().and_then(|a| a.dipole_mo.as_ref())
    }
}

/// Reads an FCIDUMP, freezes the lowest `frozen` MOs and keeps `active` orbitals.
pub fn load_system(fcidump: &Path, aux: Option<&Path>, frozen: usize, active: Option<usize>) -> Result<System> {
    let full = read_fcidump(fcidump).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", fcidump.display())),
        other => other,
    })?;
    let mut ints = if frozen > 0 { freeze_orbitals(&full, &(0..frozen).collect::<Vec<_>>())? } else { full };
    if let Some(n) = active {
        if n < ints.m {
            ints = truncate_orbitals(&ints, n)?;
        } else if n > ints.m {
            return Err(Error::Data(format!("{n} active orbitals requested, {} available", ints.m)));
        }
    }
    if ints.n_up != ints.n_dn {
        return Err(Error::Data(format!("forging needs a closed shell, got {} up and {} down electrons", ints.n_up, ints.n_dn)));
    }
    if ints.n_up == 0 || ints.n_up >= ints.m {
        return Err(Error::Data(format!("{} electrons per spin in {} orbitals leaves no excitations", ints.n_up, ints.m)));
    }
    let aux = match aux {
        Some(p) => {
            let a = AuxiliaryMatrices::read(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            let expect_active: Vec<usize> = (frozen..frozen + ints.m).collect();
            if a.frozen != (0..frozen).collect::<Vec<_>>() || a.active != expect_active {
                return Err(Error::Data(format!("{}: frozen/active orbital lists disagree with the run settings", p.display())));
            }
            Some(a)
        }
        None => None,
    };
    Ok(System { ints, aux })
}

pub fn load_from_config(cfg: &RunConfig) -> Result<System> {
    let fcidump = cfg.fcidump.as_deref().ok_or_else(|| Error::Config("no fcidump given".into()))?;
    load_system(fcidump, cfg.auxiliary.as_deref(), cfg.frozen, cfg.active)
}

/// Measurement settings resolved from a run configuration.
#[derive(Clone, Debug)]
pub struct Settings {
    pub mode: RunMode,
    pub flags: MitigationFlags,
    pub cfg: RunConfig,
}

impl Settings {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let flags = if cfg.mode == RunMode::Exact { MitigationFlags::RAW } else { cfg.flags()? };
        Ok(Self { mode: cfg.mode, flags, cfg: cfg.clone() })
    }

    /// Label written to output metadata: `exact` or the mitigation preset.
    pub fn mitigation_label(&self) -> &'static str {
        if self.mode == RunMode::Exact {
            "exact"
        } else {
            self.flags.label()
        }
    }
}

pub struct GroundOutcome {
    pub optimization: Option<OptimizationResult>,
    pub ansatz: EFAnsatz,
    pub sets: MitigatedSets,
    /// Energy evaluated from the measurement records of the run mode.
    pub energy: Estimate,
    /// Exact energy of the same ansatz.
    pub exact_energy: f64,
    pub hf_energy: f64,
    /// Integrals in the orbital basis rotated by the ansatz angle.
    pub rotated: MolecularIntegrals,
    pub h_op: TensorFactorOp,
}

impl GroundOutcome {
    pub fn converged(&self) -> bool {
        self.optimization.as_ref().is_none_or(|o| o.converged)
    }
}

pub fn measure(ansatz: &EFAnsatz, st: &Settings) -> Result<MitigatedSets> {
    match st.mode {
        RunMode::Exact => MitigatedSets::exact(ansatz),
        _ => measure_ansatz(ansatz, &st.cfg.noise_model(), st.flags, st.cfg.clifford_mode, None, st.cfg.audit),
    }
}

/// Exact EF optimization, then evaluation with the configured measurements.
/// With `ansatz` given the optimization is skipped.
pub fn run_ground(sys: &System, st: &Settings, ansatz: Option<EFAnsatz>) -> Result<GroundOutcome> {
    let (optimization, ansatz) = match ansatz {
        Some(a) => {
            a.validate()?;
            if a.m != sys.ints.m {
                return Err(Error::Data(format!("ansatz on {} orbitals for a {}-orbital system", a.m, sys.ints.m)));
            }
            (None, a)
        }
        None => {
            let template = EFAnsatz::default_for(sys.ints.m, sys.n_occ())?;
            let r = optimize_ground_state(&sys.ints, &template, &st.cfg.optimizer)?;
            let a = r.ansatz.clone();
            (Some(r), a)
        }
    };
    let (h, l) = sys.homo_lumo();
    let rotated = rotate_homo_lumo(&sys.ints, ansatz.phi, h, l)?;
    let h_op = build_hamiltonian_tensor(&rotated, &cholesky_eri(&rotated, CHOLESKY_TOL)?)?;
    let exact_sets = MitigatedSets::exact(&ansatz)?;
    let exact_energy = ef_energy(&h_op, &exact_sets.main, &ansatz.lambda, rotated.e0)?.value;
    let sets = if st.mode == RunMode::Exact { exact_sets } else { measure(&ansatz, st)? };
    let energy = {
        let e = sets.expectation(&h_op, &ansatz.lambda)?;
        Estimate::new(e.value + rotated.e0, e.sigma)
    };
    Ok(GroundOutcome { optimization, ansatz, sets, energy, exact_energy, hf_energy: sys.ints.reference_energy(), rotated, h_op })
}

/// `hw + ideal_ref - hw_ref` entrywise, uncertainties in quadrature.
fn clifford_combine(hw: &DMatrix<f64>, hw_s: &DMatrix<f64>, r: &DMatrix<f64>, r_s: &DMatrix<f64>, ideal: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let val = hw + ideal - r;
    let sig = hw_s.zip_map(r_s, |a, b| a.hypot(b));
    (val, sig)
}

fn corrected_matrices(
    ex: &[Excitation],
    g: &GroundOutcome,
    s2: &TensorFactorOp,
) -> Result<QSEMatrices> {
    let lambda = &g.ansatz.lambda;
    let mut mats = assemble_qse_matrices(ex, &g.h_op, s2, &g.sets.main, lambda)?;
    if let Some((hw, ideal)) = &g.sets.references {
        let r = assemble_qse_matrices(ex, &g.h_op, s2, hw, lambda)?;
        let i = assemble_qse_matrices(ex, &g.h_op, s2, ideal, lambda)?;
        (mats.h, mats.h_sigma) = clifford_combine(&mats.h, &mats.h_sigma, &r.h, &r.h_sigma, &i.h);
        (mats.m, mats.m_sigma) = clifford_combine(&mats.m, &mats.m_sigma, &r.m, &r.m_sigma, &i.m);
        (mats.s, mats.s_sigma) = clifford_combine(&mats.s, &mats.s_sigma, &r.s, &r.s_sigma, &i.s);
        mats.asymmetry = mats.asymmetry.max(r.asymmetry);
    }
    Ok(mats.with_energy_shift(g.rotated.e0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateLabel {
    pub index: usize,
    pub label: String,
}

/// `S0, S1, ...` for singlets, `T1, T2, ...` for triplets, `Q1, ...` for
/// quintets, `X<n>` otherwise; counted in energy order.
pub fn spin_labels(spins: &[Option<f64>]) -> Vec<String> {
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    let mut unassigned = 0;
    spins
        .iter()
        .map(|s| match s {
            Some(s) => {
                let key = (2.0 * s).round() as i64;
                let c = counts.entry(key).or_insert(0);
                let idx = *c + usize::from(key != 0);
                *c += 1;
                let letter = match key {
                    0 => "S",
                    2 => "T",
                    4 => "Q",
                    _ => "M",
                };
                format!("{letter}{idx}")
            }
            None => {
                unassigned += 1;
                format!("X{unassigned}")
            }
        })
        .collect()
}

pub struct QseOutcome {
    pub excitations: Vec<Excitation>,
    pub matrices: QSEMatrices,
    pub result: QSEResult,
    pub labels: Vec<String>,
    /// `rho^{A0}` for every state `A`; entry 0 is the rescaled ground density.
    pub transition: Vec<RDM>,
    /// `rho^{AA}` for the lowest states, rescaled to the electron count.
    pub diagonal: Vec<RDM>,
    /// `rho` of the EF state itself.
    pub ef_density: RDM,
}

fn rdm_with_references(
    ex: &[Excitation],
    g: &GroundOutcome,
    m: usize,
    pairs: &[(Vec<f64>, Vec<f64>, (usize, usize))],
    n_el: f64,
    with_sigma: bool,
) -> Result<Vec<RDM>> {
    let lambda = &g.ansatz.lambda;
    let eng = SandwichEngine::new(ex, &g.sets.main, lambda)?;
    let tabs = RdmTables::new(&eng, m)?;
    let main: Vec<RDM> = pairs
        .par_iter()
        .map(|(a, b, st)| compute_rdm(&eng, &tabs, a, b, *st, None, with_sigma))
        .collect::<Result<_>>()?;
    let mut out = main;
    if let Some((hw, ideal)) = &g.sets.references {
        let e_hw = SandwichEngine::new(ex, hw, lambda)?;
        let t_hw = RdmTables::new(&e_hw, m)?;
        let e_id = SandwichEngine::new(ex, ideal, lambda)?;
        let t_id = RdmTables::new(&e_id, m)?;
        for (r, (a, b, st)) in out.iter_mut().zip(pairs) {
            let h = compute_rdm(&e_hw, &t_hw, a, b, *st, None, with_sigma)?;
            let i = compute_rdm(&e_id, &t_id, a, b, *st, None, false)?;
            (r.rho, r.sigma) = clifford_combine(&r.rho, &r.sigma, &h.rho, &h.sigma, &i.rho);
        }
    }
    for r in out.iter_mut() {
        if r.states.0 == r.states.1 {
            let tr = r.rho.trace();
            if tr.abs() < 1e-12 {
                return Err(Error::DegenerateState);
            }
            r.rho *= n_el / tr;
            r.sigma *= (n_el / tr).abs();
        } else {
            let big = r.rho.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if big < 0.0 {
                r.rho = -&r.rho;
            }
        }
    }
    Ok(out)
}

/// QSE with identity, singles and doubles on top of the ground outcome.
pub fn run_qse_stage(sys: &System, g: &GroundOutcome, st: &Settings, n_diagonal: usize) -> Result<QseOutcome> {
    let m = sys.ints.m;
    let n_occ = sys.n_occ();
    let ex = build_excitations(m, &(0..n_occ).collect::<Vec<_>>(), &(n_occ..m).collect::<Vec<_>>())?;
    let s2 = build_s2_tensor(m)?;
    let matrices = corrected_matrices(&ex, g, &s2)?;
    let result = run_qse(&matrices, st.cfg.qse.spin_tol)?;
    let labels = spin_labels(&result.states.iter().map(|s| s.spin).collect::<Vec<_>>());
    let n_el = sys.ints.n_electrons() as f64;
    let c0 = result.states[0].coefficients.clone();
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, (usize, usize))> =
        result.states.iter().enumerate().map(|(a, s)| (s.coefficients.clone(), c0.clone(), (a, 0))).collect();
    let transition = rdm_with_references(&ex, g, m, &pairs, n_el, false)?;
    pairs.clear();
    let mut id = vec![0.0; ex.len()];
    id[0] = 1.0;
    pairs.push((id.clone(), id, (usize::MAX, usize::MAX)));
    for (a, s) in result.states.iter().enumerate().take(n_diagonal) {
        pairs.push((s.coefficients.clone(), s.coefficients.clone(), (a, a)));
    }
    let mut diag = rdm_with_references(&ex, g, m, &pairs, n_el, st.mode != RunMode::Exact)?;
    let ef_density = diag.remove(0);
    Ok(QseOutcome { excitations: ex, matrices, result, labels, transition, diagonal: diag, ef_density })
}

/// Dipole peaks of the QSE states. Dipoles are rotated into the ansatz
/// orbital basis.
pub fn qse_peaks(sys: &System, g: &GroundOutcome, q: &QseOutcome) -> Result<SpectrumPeaks> {
    let dip = sys.dipole().ok_or_else(|| Error::Data("auxiliary file with dipole matrices required".into()))?;
    let (h, l) = sys.homo_lumo();
    let d = dip.transform(&givens(sys.ints.m, g.ansatz.phi, h, l));
    let inputs: Vec<PeakInput> = q
        .transition
        .iter()
        .zip(&q.result.states)
        .zip(&q.labels)
        .map(|((rdm, s), lab)| PeakInput { rdm, energy: s.energy, spin: s.spin, label: lab.clone() })
        .collect();
    dsf_peaks(&inputs, &d)
}

pub fn spectrum(peaks: &SpectrumPeaks, st: &Settings) -> Result<Spectrum> {
    let sc = &st.cfg.spectrum;
    broaden(peaks, &sc.grid, sc.broadening, sc.include_elastic)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateCharges {
    pub state: String,
    pub energy: Estimate,
    pub charges: Charges,
}

/// Charges of the EF state and of the lowest QSE states.
pub fn qse_charges(sys: &System, g: &GroundOutcome, q: &QseOutcome, st: &Settings) -> Result<Vec<StateCharges>> {
    let aux = sys.aux.as_ref().ok_or_else(|| Error::Data("auxiliary file required for charges".into()))?;
    let method = st.cfg.charges.method;
    let hl = Some(sys.homo_lumo());
    let phi = g.ansatz.phi;
    let mut out = vec![StateCharges {
        state: "EF".into(),
        energy: g.energy,
        charges: atomic_charges(&q.ef_density, aux, method, phi, hl, st.cfg.seed)?,
    }];
    for (a, rdm) in q.diagonal.iter().enumerate() {
        out.push(StateCharges {
            state: q.labels[a].clone(),
            energy: q.result.states[a].energy,
            charges: atomic_charges(rdm, aux, method, phi, hl, st.cfg.seed)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleOutcome {
    pub fci: FCIResult,
    pub labels: Vec<String>,
    pub peaks: Option<SpectrumPeaks>,
    pub charges: Option<Vec<StateCharges>>,
}

/// Exact diagonalization with spectra and charges when AO data is present.
pub fn run_oracle(sys: &System, n_roots: usize, charge_states: usize, st: &Settings) -> Result<OracleOutcome> {
    let fci = fci_solve(&sys.ints, n_roots)?;
    let spins: Vec<Option<f64>> =
        fci.s2.iter().map(|&s2| crate::qse::assign_spin(s2, st.cfg.qse.spin_tol)).collect();
    let labels = spin_labels(&spins);
    let n = fci.n_states();
    let rdms: Vec<RDM> = (0..n).map(|a| RDM::exact(fci.rdm(a, 0), (a, 0))).collect();
    let peaks = match sys.dipole() {
        Some(d) => {
            let inputs: Vec<PeakInput> = rdms
                .iter()
                .enumerate()
                .map(|(a, r)| PeakInput { rdm: r, energy: Estimate::exact(fci.energies[a]), spin: spins[a], label: labels[a].clone() })
                .collect();
            Some(dsf_peaks(&inputs, d)?)
        }
        None => None,
    };
    let charges = match (&sys.aux, st.cfg.charges.enabled) {
        (Some(aux), true) => Some(
            (0..n.min(charge_states))
                .map(|a| {
                    Ok(StateCharges {
                        state: labels[a].clone(),
                        energy: Estimate::exact(fci.energies[a]),
                        charges: atomic_charges(&RDM::exact(fci.rdm(a, a), (a, a)), aux, st.cfg.charges.method, 0.0, None, 0)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    Ok(OracleOutcome { fci, labels, peaks, charges })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanRow {
    pub label: String,
    pub r_angstrom: f64,
    pub e_hf: f64,
    pub e_fci: f64,
    pub e_ef: Estimate,
    pub e_qse: Option<Estimate>,
    pub converged: bool,
    /// Charge on the departing atom for the EF and QSE ground states.
    pub q_departing_ef: Option<f64>,
    pub q_departing_qse: Option<f64>,
    pub ansatz: EFAnsatz,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveStats {
    /// `max_R |dE(R) - <dE>|` with `dE = E - E_FCI`.
    pub npe: f64,
    /// `E(R_max) - min_R E(R)`.
    pub binding: f64,
    pub mean_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanSummary {
    pub fci: CurveStats,
    pub ef: CurveStats,
    pub qse: Option<CurveStats>,
}

/// Non-parallelity error and binding energy of a curve against FCI.
pub fn curve_stats(r: &[f64], e: &[f64], e_fci: &[f64]) -> Result<CurveStats> {
    if r.is_empty() || r.len() != e.len() || e.len() != e_fci.len() {
        return Err(Error::Dimension("curve arrays must be non-empty and of equal length".into()));
    }
    let de: Vec<f64> = e.iter().zip(e_fci).map(|(a, b)| a - b).collect();
    let mean = de.iter().sum::<f64>() / de.len() as f64;
    let npe = de.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);
    let i_max = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).expect("non-empty");
    let e_min = e.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CurveStats { npe, binding: e[i_max] - e_min, mean_error: mean })
}

pub fn scan_geometry(g: &ScanGeometry, man: &ScanManifest, st: &Settings, with_qse: bool) -> Result<ScanRow> {
    let frozen = man.frozen.unwrap_or(st.cfg.frozen);
    let active = man.active.or(st.cfg.active);
    let aux = if st.cfg.charges.enabled { g.aux.as_deref() } else { None };
    let sys = load_system(&g.fcidump, aux, frozen, active)?;
    let e_fci = fci_solve(&sys.ints, 1)?.ground_energy();
    let ground = run_ground(&sys, st, None)?;
    let departing = man.departing_atom;
    let (e_qse, q_ef, q_qse) = if with_qse {
        let q = run_qse_stage(&sys, &ground, st, 1)?;
        let (qe, qq) = match (sys.aux.is_some(), departing) {
            (true, Some(dep)) => {
                let ch = qse_charges(&sys, &ground, &q, st)?;
                (Some(ch[0].charges.charges[dep].value), ch.get(1).map(|c| c.charges.charges[dep].value))
            }
            _ => (None, None),
        };
        (Some(q.result.states[0].energy), qe, qq)
    } else {
        (None, None, None)
    };
    Ok(ScanRow {
        label: g.label.clone(),
        r_angstrom: g.r_angstrom,
        e_hf: ground.hf_energy,
        e_fci,
        e_ef: ground.energy,
        e_qse,
        converged: ground.converged(),
        q_departing_ef: q_ef,
        q_departing_qse: q_qse,
        ansatz: ground.ansatz,
    })
}

pub fn scan_summary(rows: &[ScanRow]) -> Result<ScanSummary> {
    let r: Vec<f64> = rows.iter().map(|x| x.r_angstrom).collect();
    let fci: Vec<f64> = rows.iter().map(|x| x.e_fci).collect();
    let ef: Vec<f64> = rows.iter().map(|x| x.e_ef.value).collect();
    let qse = if rows.iter().all(|x| x.e_qse.is_some()) {
        let q: Vec<f64> = rows.iter().map(|x| x.e_qse.expect("checked").value).collect();
        Some(curve_stats(&r, &q, &fci)?)
    } else {
        None
    };
    Ok(ScanSummary { fci: curve_stats(&r, &fci, &fci)?, ef: curve_stats(&r, &ef, &fci)?, qse })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_spin_order() {
        let l = spin_labels(&[Some(0.0), Some(1.0), Some(0.0), Some(1.0), None, Some(2.0)]);
        assert_eq!(l, vec!["S0", "T1", "S1", "T2", "X1", "Q1"]);
    }

    #[test]
    fn curve_statistics() {
        let s = curve_stats(&[1.0], &[-1.0], &[-1.1]).unwrap();
        assert_eq!(s.npe, 0.0);
        let s = curve_stats(&[1.0, 2.0, 3.0], &[-0.9, -1.2, -1.0], &[-1.0, -1.3, -1.1]).unwrap();
        assert!(s.npe.abs() < 1e-12);
        assert!((s.binding - 0.2).abs() < 1e-12);
        assert!((s.mean_error - 0.1).abs() < 1e-12);
        let s = curve_stats(&[3.0, 1.0], &[-1.0, -2.0], &[-1.0, -2.2]).unwrap();
        assert!((s.npe - 0.1).abs() < 1e-12);
        assert!((s.binding - 1.0).abs() < 1e-12);
    }
}
