//! Entanglement forging: `|Psi> = sum_k lambda_k U|x_k> (x) U|x_k>`.
//!
//! Off-diagonal matrix elements `X_kl = <x_k|U^+ X U|x_l>` come from the four
//! superposition records `(k, l, p)` with
//! `X_kl = sum_p (-i)^p / 2 <phi^p_kl|X|phi^p_kl>`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State as _, TerminationReason, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{ComplexEstimate, Estimate};
use crate::fermion::{apply_hop, dense_spin_operator};
use crate::integrals::{rotate_homo_lumo, MolecularIntegrals};
use crate::mitigation::BlochVector;
use crate::pauli::{i_pow, PauliString, PauliSum};
use crate::sim::{bitstring_label, brickwork_pairs, Circuit, CircuitTag, Gate, Prep, State};
use crate::tensor_op::{modified_one_body, TensorFactorOp};
use crate::tomography::{circuit_bloch, task_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EFAnsatz {
    pub m: usize,
    /// Basis bitstrings `x_k` as integers (bit `q` = qubit `q`).
    pub basis_states: Vec<usize>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub phi: f64,
    /// Hop-gate qubit pairs in application order; gate `g` uses `theta[g]`.
    pub pairs: Vec<(usize, usize)>,
}

impl EFAnsatz {
    /// Two basis states (reference determinant and its HOMO-to-LUMO single)
    /// and three brickwork layers, all angles zero.
    pub fn default_for(m: usize, n_occ: usize) -> Result<Self> {
        if n_occ == 0 || n_occ >= m {
            return Err(Error::Invalid(format!("need 0 < n_occ < m, got n_occ = {n_occ}, m = {m}")));
        }
        let x0 = (1usize << n_occ) - 1;
        let x1 = x0 ^ (1 << (n_occ - 1)) ^ (1 << n_occ);
        let pairs = brickwork_pairs(m, n_occ, 3);
        let a = Self { m, basis_states: vec![x0, x1], theta: vec![0.0; pairs.len()], lambda: vec![1.0, 0.0], phi: 0.0, pairs };
        a.validate()?;
        Ok(a)
    }

    pub fn k_count(&self) -> usize {
        self.basis_states.len()
    }

    pub fn n_sigma(&self) -> u32 {
        self.basis_states.first().map_or(0, |x| x.count_ones())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 || m > 16 {
            return Err(Error::Invalid(format!("m = {m} not supported")));
        }
        let k = self.basis_states.len();
        if k == 0 || self.lambda.len() != k {
            return Err(Error::Invalid(format!("{} Schmidt coefficients for {k} basis states", self.lambda.len())));
        }
        let nrm: f64 = self.lambda.iter().map(|l| l * l).sum();
        if (nrm - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("sum lambda^2 = {nrm}")));
        }
        let w = self.basis_states[0].count_ones();
        for (i, &x) in self.basis_states.iter().enumerate() {
            if x >> m != 0 {
                return Err(Error::Invalid(format!("basis state {x:b} wider than {m} qubits")));
            }
            if x.count_ones() != w {
                return Err(Error::Invalid("basis states differ in Hamming weight".into()));
            }
            if self.basis_states[..i].contains(&x) {
                return Err(Error::Invalid(format!("duplicate basis state {}", bitstring_label(x, m))));
            }
        }
        if self.theta.len() != self.pairs.len() {
            return Err(Error::Invalid(format!("{} angles for {} hop gates", self.theta.len(), self.pairs.len())));
        }
        for &(a, b) in &self.pairs {
            if a >= m || b >= m || a.abs_diff(b) != 1 {
                return Err(Error::Invalid(format!("hop pair ({a}, {b}) not adjacent in the linear topology")));
            }
        }
        Ok(())
    }

    /// The hop-gate unitary alone.
    pub fn unitary_gates(&self) -> Vec<Gate> {
        self.pairs.iter().zip(&self.theta).map(|(&(q1, q2), &theta)| Gate::Hop { q1, q2, theta }).collect()
    }

    /// `U|x_k>`.
    pub fn schmidt_state(&self, k: usize) -> Result<State> {
        let mut s = State::basis(self.m, self.basis_states[k]);
        for g in self.unitary_gates() {
            s.apply(&g)?;
        }
        Ok(s)
    }

    /// The assembled `2m`-qubit state, index `up | dn << m`.
    pub fn full_state(&self) -> Result<Vec<Complex64>> {
        let d = 1usize << self.m;
        let mut out = vec![Complex64::default(); d * d];
        for (k, &l) in self.lambda.iter().enumerate() {
            let e = self.schmidt_state(k)?;
            let a = e.amplitudes();
            for u in 0..d {
                for dn in 0..d {
                    out[u | dn << self.m] += l * a[u] * a[dn];
                }
            }
        }
        Ok(out)
    }
}

/// Forging circuit for record `(k, l, p)`: superposition preparation followed
/// by the hop-gate brickwork. `k = l` prepares `|x_k>`.
pub fn build_ef_circuit(ansatz: &EFAnsatz, k: usize, l: usize, p: u8) -> Result<Circuit> {
    ansatz.validate()?;
    let kc = ansatz.k_count();
    if k >= kc || l >= kc {
        return Err(Error::Invalid(format!("record ({k}, {l}) out of range for K = {kc}")));
    }
    let mut c = Circuit::new(ansatz.m);
    c.prep = Prep::Phi { xk: ansatz.basis_states[k], xl: ansatz.basis_states[l], p: if k == l { 0 } else { p } };
    for g in ansatz.unitary_gates() {
        c.push(g)?;
    }
    c.tag = Some(CircuitTag { k, l, p });
    Ok(c)
}

/// All record keys for `k_count` basis states: `(k, k, 0)` and `(k, l, p)`
/// for `k < l`, `p` in `0..4`.
pub fn record_keys(k_count: usize) -> Vec<(usize, usize, u8)> {
    let mut out = Vec::new();
    for k in 0..k_count {
        out.push((k, k, 0));
        for l in k + 1..k_count {
            for p in 0..4 {
                out.push((k, l, p));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    Exact,
    Sampled,
    Mitigated,
}

#[derive(Clone, Debug)]
pub struct MeasurementSet {
    pub m: usize,
    pub k_count: usize,
    pub mode: MeasurementMode,
    pub records: BTreeMap<(usize, usize, u8), BlochVector>,
}

/// Weight of record `(k', l', p)` in the matrix element `(k, l)`.
fn record_weight(k: usize, l: usize, p: u8) -> Complex64 {
    if k == l {
        Complex64::new(1.0, 0.0)
    } else if k < l {
        i_pow((4 - p as u32 % 4) % 4) * 0.5
    } else {
        i_pow(p as u32) * 0.5
    }
}

impl MeasurementSet {
    pub fn new(
        m: usize,
        k_count: usize,
        mode: MeasurementMode,
        records: BTreeMap<(usize, usize, u8), BlochVector>,
    ) -> Result<Self> {
        let ms = Self { m, k_count, mode, records };
        let missing: Vec<_> = record_keys(k_count).into_iter().filter(|key| !ms.records.contains_key(key)).collect();
        if !missing.is_empty() {
            return Err(Error::MissingRecords(missing));
        }
        if ms.records.values().any(|b| b.n != m) {
            return Err(Error::Dimension(format!("records must act on {m} qubits")));
        }
        Ok(ms)
    }

    /// Noiseless Bloch vectors of every forging circuit.
    pub fn exact(ansatz: &EFAnsatz) -> Result<Self> {
        let mut records = BTreeMap::new();
        for (k, l, p) in record_keys(ansatz.k_count()) {
            let c = build_ef_circuit(ansatz, k, l, p)?;
            records.insert((k, l, p), circuit_bloch(&c, None, 0)?);
        }
        Self::new(ansatz.m, ansatz.k_count(), MeasurementMode::Exact, records)
    }

    /// Records feeding matrix element `(k, l)` with their weights.
    pub fn sources(&self, k: usize, l: usize) -> Vec<((usize, usize, u8), Complex64)> {
        if k == l {
            vec![((k, k, 0), Complex64::new(1.0, 0.0))]
        } else {
            let (a, b) = (k.min(l), k.max(l));
            (0..4).map(|p| ((a, b, p), record_weight(k, l, p))).collect()
        }
    }

    /// `tau_kl[i]` with `X_kl = sum_i x_i tau_kl[i]`.
    pub fn tau(&self, k: usize, l: usize) -> Vec<Complex64> {
        let len = 1usize << (2 * self.m);
        let mut out = vec![Complex64::default(); len];
        for (key, w) in self.sources(k, l) {
            let b = &self.records[&key];
            for (o, &a) in out.iter_mut().zip(&b.a) {
                *o += w * a;
            }
        }
        out
    }

    /// Dense `T_kl = U|x_l><x_k|U^+` reconstructed from the records, so that
    /// `X_kl = Tr(X T_kl)`.
    pub fn transition_operator(&self, k: usize, l: usize) -> Vec<Complex64> {
        let tau = self.tau(k, l);
        let n = self.m;
        let dim = 1usize << n;
        let mut t = vec![Complex64::default(); dim * dim];
        for (idx, &v) in tau.iter().enumerate() {
            if v.norm_sqr() == 0.0 {
                continue;
            }
            let p = PauliString::from_index(n, idx);
            for c in 0..dim {
                let (ph, r) = p.apply_basis(c);
                t[r * dim + c] += ph * v / dim as f64;
            }
        }
        t
    }

    fn check_coverage(&self, k: usize, l: usize, op: &PauliSum) -> Result<()> {
        let mut missing = Vec::new();
        for (key, _) in self.sources(k, l) {
            let b = &self.records[&key];
            if b.covered.is_none() {
                continue;
            }
            for (p, _) in op.terms() {
                if !b.is_covered(p.index()) {
                    missing.push(p.to_string());
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            missing.dedup();
            Err(Error::Coverage(missing))
        }
    }

    fn check_dims(&self, k: usize, l: usize, n: usize) -> Result<()> {
        if n != self.m {
            return Err(Error::Dimension(format!("{n}-qubit operator for {}-qubit records", self.m)));
        }
        if k >= self.k_count || l >= self.k_count {
            return Err(Error::MissingRecords(vec![(k, l, 0)]));
        }
        Ok(())
    }
}

/// `X_kl` with uncertainties of its real and imaginary parts from
/// `var = sum_i |w x_i|^2 sigma_i^2` over independent Bloch entries.
pub fn ef_matrix_element(op: &PauliSum, ms: &MeasurementSet, k: usize, l: usize) -> Result<ComplexEstimate> {
    ms.check_dims(k, l, op.n())?;
    ms.check_coverage(k, l, op)?;
    let mut value = Complex64::default();
    let (mut vr, mut vi) = (0.0, 0.0);
    for (key, w) in ms.sources(k, l) {
        let b = &ms.records[&key];
        for (p, c) in op.terms() {
            let i = p.index();
            let d = w * c;
            value += d * b.a[i];
            let s2 = b.sigma[i] * b.sigma[i];
            vr += d.re * d.re * s2;
            vi += d.im * d.im * s2;
        }
    }
    Ok(ComplexEstimate { value, sigma_re: vr.sqrt(), sigma_im: vi.sqrt() })
}

/// `sum_mu sum_kl w_kl A^mu_kl B^mu_kl`, with uncertainty propagated to first
/// order through the bilinear dependence on the shared records.
pub fn weighted_bilinear(op: &TensorFactorOp, ms: &MeasurementSet, w: &DMatrix<f64>) -> Result<ComplexEstimate> {
    let kc = ms.k_count;
    if w.nrows() != kc || w.ncols() != kc {
        return Err(Error::Dimension(format!("weights {}x{} for K = {kc}", w.nrows(), w.ncols())));
    }
    if op.m() != ms.m {
        return Err(Error::Dimension(format!("operator on {} qubits, records on {}", op.m(), ms.m)));
    }
    // A and B elements for every factor and kl
    let mut ab: Vec<Vec<(Complex64, Complex64)>> = Vec::with_capacity(op.factors().len());
    let mut value = Complex64::default();
    for (a, b) in op.factors() {
        let mut row = Vec::with_capacity(kc * kc);
        for k in 0..kc {
            for l in 0..kc {
                if w[(k, l)] == 0.0 {
                    row.push((Complex64::default(), Complex64::default()));
                    continue;
                }
                let ak = ef_matrix_element(a, ms, k, l)?.value;
                let bk = ef_matrix_element(b, ms, k, l)?.value;
                value += w[(k, l)] * ak * bk;
                row.push((ak, bk));
            }
        }
        ab.push(row);
    }
    // gradient per record and Pauli index
    let (mut vr, mut vi) = (0.0, 0.0);
    for (key, b) in &ms.records {
        let users: Vec<(usize, usize, Complex64)> = if key.0 == key.1 {
            vec![(key.0, key.0, Complex64::new(1.0, 0.0))]
        } else {
            vec![(key.0, key.1, record_weight(key.0, key.1, key.2)), (key.1, key.0, record_weight(key.1, key.0, key.2))]
        };
        let mut grad: BTreeMap<usize, Complex64> = BTreeMap::new();
        for (mu, (fa, fb)) in op.factors().iter().enumerate() {
            for &(k, l, c) in &users {
                let wk = w[(k, l)];
                if wk == 0.0 {
                    continue;
                }
                let (ak, bk) = ab[mu][k * kc + l];
                for (p, x) in fa.terms() {
                    *grad.entry(p.index()).or_default() += wk * c * x * bk;
                }
                for (p, x) in fb.terms() {
                    *grad.entry(p.index()).or_default() += wk * c * x * ak;
                }
            }
        }
        for (i, g) in grad {
            let s2 = b.sigma[i] * b.sigma[i];
            vr += g.re * g.re * s2;
            vi += g.im * g.im * s2;
        }
    }
    Ok(ComplexEstimate { value, sigma_re: vr.sqrt(), sigma_im: vi.sqrt() })
}

/// `<Psi|op|Psi> = sum_kl lambda_k lambda_l sum_mu A^mu_kl B^mu_kl`.
pub fn ef_expectation(op: &TensorFactorOp, ms: &MeasurementSet, lambda: &[f64]) -> Result<ComplexEstimate> {
    if lambda.len() != ms.k_count {
        return Err(Error::Dimension(format!("{} Schmidt coefficients for K = {}", lambda.len(), ms.k_count)));
    }
    let nrm: f64 = lambda.iter().map(|x| x * x).sum();
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::Invalid(format!("sum lambda^2 = {nrm}")));
    }
    let kc = ms.k_count;
    let w = DMatrix::from_fn(kc, kc, |k, l| lambda[k] * lambda[l]);
    weighted_bilinear(op, ms, &w)
}

/// Schmidt matrix `h_kl = <e_k e_k|H|e_l e_l>` (without `e0`), with
/// uncertainties. `classical` fixes one diagonal entry `(k, value)` with zero
/// uncertainty when `U|x_k> = |x_k>` up to sign.
pub fn schmidt_matrix(
    h: &TensorFactorOp,
    ms: &MeasurementSet,
    classical: Option<(usize, f64)>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let kc = ms.k_count;
    let mut val = DMatrix::zeros(kc, kc);
    let mut sig = DMatrix::zeros(kc, kc);
    for k in 0..kc {
        for l in k..kc {
            let mut w = DMatrix::zeros(kc, kc);
            w[(k, l)] = 1.0;
            let e = weighted_bilinear(h, ms, &w)?;
            val[(k, l)] = e.value.re;
            val[(l, k)] = e.value.re;
            sig[(k, l)] = e.sigma_re;
            sig[(l, k)] = e.sigma_re;
        }
    }
    if let Some((k, v)) = classical {
        if k >= kc {
            return Err(Error::Invalid(format!("classical entry {k} out of range")));
        }
        val[(k, k)] = v;
        sig[(k, k)] = 0.0;
    }
    Ok((val, sig))
}

/// Lowest eigenpair of a symmetric matrix; the first non-negligible
/// component of `lambda` is positive.
pub fn optimal_lambda(h: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::Dimension(format!("{}x{} Schmidt matrix", h.nrows(), h.ncols())));
    }
    if (h - h.transpose()).abs().max() > 1e-8 {
        return Err(Error::Invalid("Schmidt matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(h.clone());
    let (i, eps) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &e)| (i, e))
        .expect("nonempty");
    let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((v, eps))
}

/// `<x x|H|x x>` without `e0` for a closed-shell pair of determinant `x`.
pub fn classical_pair_energy(ints: &MolecularIntegrals, x: usize) -> f64 {
    let occ: Vec<usize> = (0..ints.m).filter(|q| x >> q & 1 == 1).collect();
    let mut e = 0.0;
    for &i in &occ {
        e += 2.0 * ints.h[(i, i)];
        for &j in &occ {
            e += 2.0 * ints.eri(i, i, j, j) - ints.eri(i, j, j, i);
        }
    }
    e
}

/// Fast exact energy of a forged ansatz at fixed orbitals: dense one-spin
/// operator `A` and direct one-body transition elements.
#[derive(Clone, Debug)]
pub struct ExactEvaluator {
    pub ints: MolecularIntegrals,
    a_dense: Vec<f64>,
}

impl ExactEvaluator {
    pub fn new(ints: &MolecularIntegrals) -> Self {
        let a_dense = dense_spin_operator(&modified_one_body(ints), Some((ints.eri_slice(), 0.5)));
        Self { ints: ints.clone(), a_dense }
    }

    /// Schmidt matrix (without `e0`) for real Schmidt states `e_k`.
    pub fn schmidt_matrix(&self, states: &[Vec<f64>]) -> DMatrix<f64> {
        let m = self.ints.m;
        let dim = 1usize << m;
        let kc = states.len();
        let mut h = DMatrix::zeros(kc, kc);
        for k in 0..kc {
            let e = &states[k];
            let mut ae = 0.0;
            for r in 0..dim {
                if e[r] == 0.0 {
                    continue;
                }
                let row = &self.a_dense[r * dim..(r + 1) * dim];
                ae += e[r] * row.iter().zip(e).map(|(x, y)| x * y).sum::<f64>();
            }
            h[(k, k)] += 2.0 * ae;
            for l in k..kc {
                let d = self.one_body_transition(&states[k], &states[l]);
                let mut v = 0.0;
                for pr in 0..m * m {
                    if d[pr] == 0.0 {
                        continue;
                    }
                    for qs in 0..m * m {
                        v += self.ints.eri_slice()[pr * m * m + qs] * d[pr] * d[qs];
                    }
                }
                h[(k, l)] += v;
                if l != k {
                    h[(l, k)] += v;
                }
            }
        }
        h
    }

    /// `D_pr = <a|E_pr|b>`.
    fn one_body_transition(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let m = self.ints.m;
        let mut d = vec![0.0; m * m];
        for (col, &bv) in b.iter().enumerate() {
            if bv == 0.0 {
                continue;
            }
            for p in 0..m {
                for r in 0..m {
                    if let Some((s, row)) = apply_hop(col, p, r) {
                        d[p * m + r] += a[row] * s * bv;
                    }
                }
            }
        }
        d
    }
}

fn real_states(ansatz: &EFAnsatz) -> Result<Vec<Vec<f64>>> {
    (0..ansatz.k_count())
        .map(|k| Ok(ansatz.schmidt_state(k)?.amplitudes().iter().map(|a| a.re).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iter: u64,
    pub restarts: usize,
    pub fd_step: f64,
    pub tol_grad: f64,
    pub seed: u64,
    pub optimize_phi: bool,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iter: 200, restarts: 8, fd_step: 1e-4, tol_grad: 1e-7, seed: 0, optimize_phi: true, memory: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub start: usize,
    pub iteration: u64,
    pub energy: f64,
    pub grad_norm: f64,
    pub theta: Vec<f64>,
    pub phi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub ansatz: EFAnsatz,
    /// Total energy including `e0`.
    pub energy: f64,
    pub initial_energy: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl OptimizationResult {
    pub fn trace_csv(&self) -> String {
        let nt = self.ansatz.theta.len();
        let mut out = String::from("start,iteration,energy,grad_norm");
        for g in 0..nt {
            out.push_str(&format!(",theta{g}"));
        }
        out.push_str(",phi\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{:.12},{:.6e}", r.start, r.iteration, r.energy, r.grad_norm));
            for t in &r.theta {
                out.push_str(&format!(",{t:.10}"));
            }
            out.push_str(&format!(",{:.10}\n", r.phi));
        }
        out
    }
}

/// Exact EF energy as a function of `(theta..., phi)` with `lambda` solved
/// per evaluation.
#[derive(Clone, Debug)]
pub struct EfObjective {
    base: MolecularIntegrals,
    template: EFAnsatz,
    homo: usize,
    lumo: usize,
    optimize_phi: bool,
    fd_step: f64,
    fixed: Option<ExactEvaluator>,
}

impl EfObjective {
    pub fn new(ints: &MolecularIntegrals, template: &EFAnsatz, optimize_phi: bool, fd_step: f64) -> Result<Self> {
        template.validate()?;
        if ints.m != template.m {
            return Err(Error::Dimension(format!("integrals with m = {}, ansatz with m = {}", ints.m, template.m)));
        }
        if ints.n_up != ints.n_dn || ints.n_up != template.n_sigma() as usize {
            return Err(Error::Invalid("forging needs N_up = N_dn = basis-state weight".into()));
        }
        let homo = ints.n_up.saturating_sub(1);
        let lumo = ints.n_up;
        let can_rotate = ints.n_up > 0 && lumo < ints.m;
        let optimize_phi = optimize_phi && can_rotate;
        let fixed = if optimize_phi {
            None
        } else {
            let rotated = if can_rotate { rotate_homo_lumo(ints, template.phi, homo, lumo)? } else { ints.clone() };
            Some(ExactEvaluator::new(&rotated))
        };
        Ok(Self { base: ints.clone(), template: template.clone(), homo, lumo, optimize_phi, fd_step, fixed })
    }

    pub fn dim(&self) -> usize {
        self.template.theta.len() + usize::from(self.optimize_phi)
    }

    pub fn params_of(&self, a: &EFAnsatz) -> Vec<f64> {
        let mut p = a.theta.clone();
        if self.optimize_phi {
            p.push(a.phi);
        }
        p
    }

    pub fn rotated_integrals(&self, phi: f64) -> Result<MolecularIntegrals> {
        if self.lumo < self.base.m && self.base.n_up > 0 {
            rotate_homo_lumo(&self.base, phi, self.homo, self.lumo)
        } else {
            Ok(self.base.clone())
        }
    }

    /// Ansatz at `params` with optimal `lambda`, and its total energy.
    pub fn evaluate(&self, params: &[f64]) -> Result<(EFAnsatz, f64)> {
        let mut a = self.template.clone();
        let nt = a.theta.len();
        a.theta.copy_from_slice(&params[..nt]);
        let owned;
        let ev = match &self.fixed {
            Some(ev) => ev,
            None => {
                a.phi = params[nt];
                owned = ExactEvaluator::new(&self.rotated_integrals(a.phi)?);
                &owned
            }
        };
        let h = ev.schmidt_matrix(&real_states(&a)?);
        let (lambda, eps) = optimal_lambda(&h)?;
        a.lambda = lambda;
        Ok((a, eps + self.base.e0))
    }

    pub fn energy(&self, params: &[f64]) -> Result<f64> {
        Ok(self.evaluate(params)?.1)
    }

    /// Central finite differences.
    pub fn fd_gradient(&self, params: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; params.len()];
        let mut p = params.to_vec();
        for i in 0..params.len() {
            p[i] = params[i] + step;
            let ep = self.energy(&p)?;
            p[i] = params[i] - step;
            let em = self.energy(&p)?;
            p[i] = params[i];
            g[i] = (ep - em) / (2.0 * step);
        }
        Ok(g)
    }
}

fn to_argmin(e: Error) -> argmin::core::Error {
    argmin::core::Error::msg(e.to_string())
}

impl CostFunction for EfObjective {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.energy(p).map_err(to_argmin)
    }
}

impl Gradient for EfObjective {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.fd_gradient(p, self.fd_step).map_err(to_argmin)
    }
}

type LbfgsState = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

struct TraceObserver {
    start: usize,
    n_theta: usize,
    rows: Arc<Mutex<Vec<TraceRow>>>,
}

impl Observe<LbfgsState> for TraceObserver {
    fn observe_iter(&mut self, state: &LbfgsState, _kv: &KV) -> std::result::Result<(), argmin::core::Error> {
        let Some(p) = state.get_param() else { return Ok(()) };
        let gn = state.get_gradient().map_or(f64::NAN, |g| g.iter().map(|x| x * x).sum::<f64>().sqrt());
        let row = TraceRow {
            start: self.start,
            iteration: state.get_iter(),
            energy: state.get_cost(),
            grad_norm: gn,
            theta: p[..self.n_theta].to_vec(),
            phi: p.get(self.n_theta).copied().unwrap_or(f64::NAN),
        };
        self.rows.lock().expect("trace lock").push(row);
        Ok(())
    }
}

struct StartOutcome {
    params: Vec<f64>,
    energy: f64,
    converged: bool,
    trace: Vec<TraceRow>,
}

fn run_start(obj: &EfObjective, start: usize, init: Vec<f64>, cfg: &OptimizerConfig) -> Result<StartOutcome> {
    let e_init = obj.energy(&init)?;
    let n_theta = obj.template.theta.len();
    let mut trace = vec![TraceRow {
        start,
        iteration: 0,
        energy: e_init,
        grad_norm: f64::NAN,
        theta: init[..n_theta].to_vec(),
        phi: init.get(n_theta).copied().unwrap_or(obj.template.phi),
    }];
    if init.is_empty() {
        return Ok(StartOutcome { params: init, energy: e_init, converged: true, trace });
    }
    let rows = Arc::new(Mutex::new(Vec::new()));
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), cfg.memory)
        .with_tolerance_grad(cfg.tol_grad)
        .and_then(|s| s.with_tolerance_cost(1e-14))
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let observer = TraceObserver { start, n_theta, rows: rows.clone() };
    let run = Executor::new(obj.clone(), solver)
        .configure(|s| s.param(init.clone()).max_iters(cfg.max_iter))
        .add_observer(observer, ObserverMode::Always)
        .run();
    trace.extend(rows.lock().expect("trace lock").drain(..));
    match run {
        Ok(res) => {
            let st = res.state();
            let best = st.get_best_param().cloned().unwrap_or_else(|| init.clone());
            let e = obj.energy(&best)?;
            let converged = !matches!(st.get_termination_reason(), Some(TerminationReason::MaxItersReached));
            if e <= e_init {
                Ok(StartOutcome { params: best, energy: e, converged, trace })
            } else {
                Ok(StartOutcome { params: init, energy: e_init, converged: false, trace })
            }
        }
        // line-search breakdown: keep the best point seen along the trace
        Err(_) => {
            let best = trace
                .iter()
                .min_by(|a, b| a.energy.total_cmp(&b.energy))
                .map(|r| {
                    let mut p = r.theta.clone();
                    if obj.optimize_phi {
                        p.push(r.phi);
                    }
                    p
                })
                .unwrap_or(init);
            let e = obj.energy(&best)?;
            Ok(StartOutcome { params: best, energy: e, converged: false, trace })
        }
    }
}

/// Multi-start quasi-Newton minimization of the exact EF energy over the hop
/// angles and the orbital angle, with `lambda` re-solved per evaluation.
/// Start 0 is the supplied template; further starts draw
/// `theta ~ U[-pi/2, pi/2]`.
pub fn optimize_ground_state(
    ints: &MolecularIntegrals,
    template: &EFAnsatz,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    let obj = EfObjective::new(ints, template, cfg.optimize_phi, cfg.fd_step)?;
    let n_theta = template.theta.len();
    let base = obj.params_of(template);
    let mut starts = vec![base.clone()];
    for s in 1..=cfg.restarts {
        let mut rng = task_rng(cfg.seed, &[0x0B7, s as u64]);
        let mut p = base.clone();
        for t in p.iter_mut().take(n_theta) {
            *t = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        }
        starts.push(p);
    }
    let outcomes: Vec<Result<StartOutcome>> =
        starts.into_par_iter().enumerate().map(|(i, p)| run_start(&obj, i, p, cfg)).collect();
    let mut outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let initial_energy = outcomes[0].trace[0].energy;
    let best_idx = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one start");
    let trace: Vec<TraceRow> = outcomes.iter_mut().flat_map(|o| std::mem::take(&mut o.trace)).collect();
    let best = &outcomes[best_idx];
    let (ansatz, energy) = obj.evaluate(&best.params)?;
    Ok(OptimizationResult { ansatz, energy, initial_energy, converged: best.converged, trace })
}

/// Reference entry for [`schmidt_matrix`]: `(k, <x_k x_k|H|x_k x_k>)` for the
/// first basis state that the hop gates map to itself up to sign.
pub fn preserved_reference(ansatz: &EFAnsatz, ints: &MolecularIntegrals) -> Result<Option<(usize, f64)>> {
    for k in 0..ansatz.k_count() {
        let s = ansatz.schmidt_state(k)?;
        let x = ansatz.basis_states[k];
        if (s.amplitudes()[x].norm() - 1.0).abs() < 1e-12 {
            return Ok(Some((k, classical_pair_energy(ints, x))));
        }
    }
    Ok(None)
}

/// Real-valued estimate of a Hermitian expectation.
pub fn ef_energy(h: &TensorFactorOp, ms: &MeasurementSet, lambda: &[f64], e0: f64) -> Result<Estimate> {
    let e = ef_expectation(h, ms, lambda)?;
    Ok(Estimate::new(e.value.re + e0, e.sigma_re))
}
