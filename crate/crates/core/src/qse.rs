//! Quantum subspace expansion on a forged reference state.
//!
//! Matrix elements `<Psi|E_mu^+ O E_nu|Psi>` are evaluated from the
//! reconstructed transition operators `T_kl` of the measurement set:
//! for `O = sum_f A_f (x) B_f` and `E = u (x) d`,
//! `O_mu,nu = sum_kl lambda_k lambda_l sum_f Tr(T_kl u_mu^+ A_f u_nu) Tr(T_kl d_mu^+ B_f d_nu)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::fermion::apply_ladder_string;
use crate::forging::MeasurementSet;
use crate::pauli::{pauli_coefficients, PauliString};
use crate::tensor_op::{Excitation, HalfOp, TensorFactorOp};

/// Smallest admissible eigenvalue of the metric.
pub const METRIC_THRESHOLD: f64 = 1e-8;
/// Default spin-grouping tolerance in units of `s(s+1)`.
pub const SPIN_TOL: f64 = 0.3;

struct HalfMap {
    fwd: Vec<Option<(f64, usize)>>,
    inv: Vec<Option<(f64, usize)>>,
}

impl HalfMap {
    fn new(h: &HalfOp, m: usize) -> Self {
        let dim = 1usize << m;
        let ladder = h.ladder();
        let fwd: Vec<_> = (0..dim).map(|j| apply_ladder_string(j, &ladder)).collect();
        let mut inv = vec![None; dim];
        for (j, f) in fwd.iter().enumerate() {
            if let Some((s, row)) = *f {
                inv[row] = Some((s, j));
            }
        }
        Self { fwd, inv }
    }
}

/// Column-sparse dense operator: `cols[c]` lists `(row, value)`.
#[derive(Clone, Debug)]
struct SparseCols {
    cols: Vec<Vec<(usize, Complex64)>>,
}

impl SparseCols {
    fn from_dense(dim: usize, d: &[Complex64]) -> Self {
        let cols = (0..dim)
            .map(|c| (0..dim).filter_map(|r| { let v = d[r * dim + c]; (v.norm_sqr() > 0.0).then_some((r, v)) }).collect())
            .collect();
        Self { cols }
    }
}

/// Per-operator tables of half-register sandwiches.
pub struct OpTables {
    fa: Vec<SparseCols>,
    fb: Vec<SparseCols>,
    /// `[kl][f][alpha * H + beta]`.
    wa: Vec<Vec<Vec<Complex64>>>,
    wb: Vec<Vec<Vec<Complex64>>>,
}

/// Evaluates sandwiched operators on a forged reference.
pub struct SandwichEngine<'a> {
    ms: &'a MeasurementSet,
    lambda: Vec<f64>,
    halves: Vec<HalfOp>,
    maps: Vec<HalfMap>,
    exc: Vec<(usize, usize)>,
    labels: Vec<String>,
    t: Vec<Vec<Complex64>>,
    noisy: bool,
    restricted: bool,
}

impl<'a> SandwichEngine<'a> {
    pub fn new(excitations: &[Excitation], ms: &'a MeasurementSet, lambda: &[f64]) -> Result<Self> {
        if excitations.is_empty() {
            return Err(Error::Invalid("empty excitation set".into()));
        }
        if lambda.len() != ms.k_count {
            return Err(Error::Dimension(format!("{} Schmidt coefficients for K = {}", lambda.len(), ms.k_count)));
        }
        let nrm: f64 = lambda.iter().map(|x| x * x).sum();
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("sum lambda^2 = {nrm}")));
        }
        let m = ms.m;
        let mut halves: Vec<HalfOp> = Vec::new();
        let idx = |h: HalfOp, halves: &mut Vec<HalfOp>| match halves.iter().position(|x| *x == h) {
            Some(i) => i,
            None => {
                halves.push(h);
                halves.len() - 1
            }
        };
        let exc: Vec<(usize, usize)> = excitations.iter().map(|e| (idx(e.up, &mut halves), idx(e.dn, &mut halves))).collect();
        let maps = halves.iter().map(|h| HalfMap::new(h, m)).collect();
        let kc = ms.k_count;
        let mut t = Vec::with_capacity(kc * kc);
        for k in 0..kc {
            for l in 0..kc {
                t.push(ms.transition_operator(k, l));
            }
        }
        let noisy = ms.records.values().any(|b| b.sigma.iter().any(|&s| s > 0.0));
        let restricted = ms.records.values().any(|b| b.covered.is_some());
        Ok(Self {
            ms,
            lambda: lambda.to_vec(),
            halves,
            maps,
            exc,
            labels: excitations.iter().map(Excitation::label).collect(),
            t,
            noisy,
            restricted,
        })
    }

    pub fn len(&self) -> usize {
        self.exc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exc.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Whether any record carries a nonzero uncertainty.
    pub fn is_noisy(&self) -> bool {
        self.noisy
    }

    fn dim(&self) -> usize {
        1usize << self.ms.m
    }

    /// `Tr(T alpha^+ F beta)`.
    fn sandwich(&self, t: &[Complex64], a: usize, b: usize, f: &SparseCols) -> Complex64 {
        let dim = self.dim();
        let (ma, mb) = (&self.maps[a], &self.maps[b]);
        let mut acc = Complex64::default();
        for (i, fb) in mb.fwd.iter().enumerate() {
            let Some((sb, c)) = *fb else { continue };
            for &(row, v) in &f.cols[c] {
                if let Some((sa, j)) = ma.inv[row] {
                    acc += t[i * dim + j] * (sa * sb) * v;
                }
            }
        }
        acc
    }

    /// `g += w alpha^+ F beta` as a dense matrix.
    fn scatter(&self, g: &mut [Complex64], w: Complex64, a: usize, b: usize, f: &SparseCols) {
        let dim = self.dim();
        let (ma, mb) = (&self.maps[a], &self.maps[b]);
        for (i, fb) in mb.fwd.iter().enumerate() {
            let Some((sb, c)) = *fb else { continue };
            for &(row, v) in &f.cols[c] {
                if let Some((sa, j)) = ma.inv[row] {
                    g[j * dim + i] += w * (sa * sb) * v;
                }
            }
        }
    }

    pub fn tables(&self, op: &TensorFactorOp) -> Result<OpTables> {
        if op.m() != self.ms.m {
            return Err(Error::Dimension(format!("operator on {} qubits, records on {}", op.m(), self.ms.m)));
        }
        let dim = self.dim();
        let nh = self.halves.len();
        let fa: Vec<SparseCols> = op.factors().iter().map(|(a, _)| SparseCols::from_dense(dim, &a.dense())).collect();
        let fb: Vec<SparseCols> = op.factors().iter().map(|(_, b)| SparseCols::from_dense(dim, &b.dense())).collect();
        let used = self.used_pairs();
        let build = |fs: &[SparseCols], t: &[Complex64], lam: f64, side: usize| -> Vec<Vec<Complex64>> {
            fs.iter()
                .map(|f| {
                    let mut w = vec![Complex64::default(); nh * nh];
                    if lam != 0.0 {
                        for &(a, b) in &used[side] {
                            w[a * nh + b] = self.sandwich(t, a, b, f);
                        }
                    }
                    w
                })
                .collect()
        };
        let kc = self.ms.k_count;
        let mut wa = Vec::with_capacity(kc * kc);
        let mut wb = Vec::with_capacity(kc * kc);
        for k in 0..kc {
            for l in 0..kc {
                let lam = self.lambda[k] * self.lambda[l];
                let t = &self.t[k * kc + l];
                wa.push(build(&fa, t, lam, 0));
                wb.push(build(&fb, t, lam, 1));
            }
        }
        Ok(OpTables { fa, fb, wa, wb })
    }

    /// Half-op pairs `(alpha, beta)` occurring on the up and down side.
    fn used_pairs(&self) -> [Vec<(usize, usize)>; 2] {
        let mut up = BTreeSet::new();
        let mut dn = BTreeSet::new();
        for &(au, ad) in &self.exc {
            for &(bu, bd) in &self.exc {
                up.insert((au, bu));
                dn.insert((ad, bd));
            }
        }
        [up.into_iter().collect(), dn.into_iter().collect()]
    }

    /// Full matrix `O_mu,nu`.
    pub fn values(&self, tabs: &OpTables) -> DMatrix<Complex64> {
        let n = self.len();
        let nh = self.halves.len();
        let kc = self.ms.k_count;
        let mut out = DMatrix::from_element(n, n, Complex64::default());
        for k in 0..kc {
            for l in 0..kc {
                let lam = self.lambda[k] * self.lambda[l];
                if lam == 0.0 {
                    continue;
                }
                let kl = k * kc + l;
                for f in 0..tabs.fa.len() {
                    let (wa, wb) = (&tabs.wa[kl][f], &tabs.wb[kl][f]);
                    for (mu, &(au, ad)) in self.exc.iter().enumerate() {
                        for (nu, &(bu, bd)) in self.exc.iter().enumerate() {
                            out[(mu, nu)] += lam * wa[au * nh + bu] * wb[ad * nh + bd];
                        }
                    }
                }
            }
        }
        out
    }

    /// Uncertainty of `sum c O_mu,nu` over `coeffs = [(mu, nu, c)]`, to first
    /// order in the records. Also enforces tomographic coverage.
    pub fn sigma(&self, tabs: &OpTables, coeffs: &[(usize, usize, f64)]) -> Result<(f64, f64)> {
        if !self.noisy && !self.restricted {
            return Ok((0.0, 0.0));
        }
        let dim = self.dim();
        let m = self.ms.m;
        let nh = self.halves.len();
        let kc = self.ms.k_count;
        let mut grads: BTreeMap<(usize, usize, u8), Vec<Complex64>> = BTreeMap::new();
        for k in 0..kc {
            for l in 0..kc {
                let lam = self.lambda[k] * self.lambda[l];
                if lam == 0.0 {
                    continue;
                }
                let kl = k * kc + l;
                let mut g = vec![Complex64::default(); dim * dim];
                for f in 0..tabs.fa.len() {
                    let mut wu = vec![Complex64::default(); nh * nh];
                    let mut wd = vec![Complex64::default(); nh * nh];
                    for &(mu, nu, c) in coeffs {
                        let (au, ad) = self.exc[mu];
                        let (bu, bd) = self.exc[nu];
                        wu[au * nh + bu] += c * tabs.wb[kl][f][ad * nh + bd];
                        wd[ad * nh + bd] += c * tabs.wa[kl][f][au * nh + bu];
                    }
                    for a in 0..nh {
                        for b in 0..nh {
                            let w = wu[a * nh + b];
                            if w.norm_sqr() > 0.0 {
                                self.scatter(&mut g, lam * w, a, b, &tabs.fa[f]);
                            }
                            let w = wd[a * nh + b];
                            if w.norm_sqr() > 0.0 {
                                self.scatter(&mut g, lam * w, a, b, &tabs.fb[f]);
                            }
                        }
                    }
                }
                let pc = pauli_coefficients(m, &g);
                for (key, c) in self.ms.sources(k, l) {
                    let acc = grads.entry(key).or_insert_with(|| vec![Complex64::default(); dim * dim]);
                    for (x, p) in acc.iter_mut().zip(&pc) {
                        *x += c * p;
                    }
                }
            }
        }
        let (mut vr, mut vi) = (0.0, 0.0);
        let mut missing = BTreeSet::new();
        for (key, g) in &grads {
            let b = &self.ms.records[key];
            for (i, d) in g.iter().enumerate() {
                if d.norm() < 1e-12 {
                    continue;
                }
                if !b.is_covered(i) {
                    missing.insert(PauliString::from_index(m, i).to_string());
                }
                let s2 = b.sigma[i] * b.sigma[i];
                vr += d.re * d.re * s2;
                vi += d.im * d.im * s2;
            }
        }
        if !missing.is_empty() {
            return Err(Error::Coverage(missing.into_iter().collect()));
        }
        Ok((vr.sqrt(), vi.sqrt()))
    }

    /// Real symmetric matrix of `op` with per-entry uncertainties and the
    /// largest asymmetry removed by symmetrization.
    pub fn symmetric_matrix(&self, op: &TensorFactorOp) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let tabs = self.tables(op)?;
        let v = self.values(&tabs);
        let n = self.len();
        let mut val = DMatrix::zeros(n, n);
        let mut sig = DMatrix::zeros(n, n);
        let mut asym: f64 = 0.0;
        for mu in 0..n {
            for nu in mu..n {
                let x = 0.5 * (v[(mu, nu)].re + v[(nu, mu)].re);
                asym = asym.max((v[(mu, nu)] - v[(nu, mu)].conj()).norm());
                val[(mu, nu)] = x;
                val[(nu, mu)] = x;
                let (s, _) = self.sigma(&tabs, &[(mu, nu, 1.0)])?;
                sig[(mu, nu)] = s;
                sig[(nu, mu)] = s;
            }
        }
        Ok((val, sig, asym))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QSEMatrices {
    pub labels: Vec<String>,
    pub h: DMatrix<f64>,
    pub h_sigma: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub m_sigma: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_sigma: DMatrix<f64>,
    /// Largest `|X_mu,nu - conj(X_nu,mu)|` over the three matrices before symmetrization.
    pub asymmetry: f64,
}

impl QSEMatrices {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Adds `e0 * M` to `H`, turning electronic entries into total energies.
    pub fn with_energy_shift(mut self, e0: f64) -> Self {
        self.h += &self.m * e0;
        self.h_sigma = DMatrix::from_fn(self.len(), self.len(), |i, j| {
            (self.h_sigma[(i, j)].powi(2) + (e0 * self.m_sigma[(i, j)]).powi(2)).sqrt()
        });
        self
    }
}

/// `H`, `M` and `S` over the excitation basis (electronic `H`, without `e0`).
pub fn assemble_qse_matrices(
    excitations: &[Excitation],
    h_op: &TensorFactorOp,
    s2_op: &TensorFactorOp,
    ms: &MeasurementSet,
    lambda: &[f64],
) -> Result<QSEMatrices> {
    let eng = SandwichEngine::new(excitations, ms, lambda)?;
    let (h, h_sigma, a1) = eng.symmetric_matrix(h_op)?;
    let (m, m_sigma, a2) = eng.symmetric_matrix(&TensorFactorOp::identity(ms.m))?;
    let (s, s_sigma, a3) = eng.symmetric_matrix(s2_op)?;
    Ok(QSEMatrices { labels: eng.labels().to_vec(), h, h_sigma, m, m_sigma, s, s_sigma, asymmetry: a1.max(a2).max(a3) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpinBlock {
    /// Spin quantum number, or `None` for the unassigned block.
    pub spin: Option<f64>,
    pub s2: Vec<f64>,
    /// `K x d` columns, `M`-orthonormal.
    pub f: DMatrix<f64>,
    /// `f^T H f`.
    pub h: DMatrix<f64>,
}

/// Nearest integer `s` with `|sigma - s(s+1)| <= tol` (forged states have `S_z = 0`).
pub fn assign_spin(sigma: f64, tol: f64) -> Option<f64> {
    let s = (-1.0 + (1.0 + 4.0 * sigma.max(0.0)).sqrt()) / 2.0;
    let cands = [s.floor(), s.ceil()];
    cands
        .iter()
        .map(|&c| (c, (sigma - c * (c + 1.0)).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|x| x.1 <= tol)
        .map(|x| x.0)
}

fn metric_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < METRIC_THRESHOLD {
        return Err(Error::IllConditioned { min_eigenvalue: min });
    }
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::IllConditioned { min_eigenvalue: min })?;
    Ok(chol.l())
}

/// Generalized eigensolve of `(S, M)` and grouping by total spin.
pub fn spin_project(mats: &QSEMatrices, tol: f64) -> Result<Vec<SpinBlock>> {
    let l = metric_factor(&mats.m)?;
    let linv = l.clone().try_inverse().ok_or(Error::IllConditioned { min_eigenvalue: 0.0 })?;
    let sp = &linv * &mats.s * linv.transpose();
    let sp = (&sp + sp.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sp);
    let f_all = linv.transpose() * &eig.eigenvectors;
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut unassigned = Vec::new();
    for (t, &sigma) in eig.eigenvalues.iter().enumerate() {
        match assign_spin(sigma, tol) {
            Some(s) => groups.entry(s.round() as i64).or_default().push(t),
            None => unassigned.push(t),
        }
    }
    let mut out = Vec::new();
    let mut push = |spin: Option<f64>, idx: &[usize]| {
        if idx.is_empty() {
            return;
        }
        let f = DMatrix::from_columns(&idx.iter().map(|&t| f_all.column(t).into_owned()).collect::<Vec<_>>());
        let h = f.transpose() * &mats.h * &f;
        let h = (&h + h.transpose()) * 0.5;
        out.push(SpinBlock { spin, s2: idx.iter().map(|&t| eig.eigenvalues[t]).collect(), f, h });
    };
    for (s, idx) in &groups {
        push(Some(*s as f64), idx);
    }
    push(None, &unassigned);
    Ok(out)
}

/// Ascending eigenpairs; each eigenvector has its largest-magnitude
/// component positive.
pub fn solve_qse(h: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if h.nrows() != h.ncols() {
        return Err(Error::Dimension(format!("{}x{} block", h.nrows(), h.ncols())));
    }
    if (h - h.transpose()).abs().max() > 1e-8 * h.abs().max().max(1.0) {
        return Err(Error::Invalid("block Hamiltonian is not symmetric".into()));
    }
    let n = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let big = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        // ties in magnitude resolve to the first index
        let first = v.iter().copied().find(|x| (x.abs() - big.abs()).abs() < 1e-12).unwrap_or(big);
        if first < 0.0 {
            v = -v;
        }
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

/// First-order Rayleigh-quotient propagation treating matrix entries as
/// independent (upper triangle). Returns `(estimate, denominator estimate)`.
pub fn rayleigh_quotient(x: &DMatrix<f64>, xs: &DMatrix<f64>, m: &DMatrix<f64>, ms: &DMatrix<f64>, c: &[f64]) -> (Estimate, Estimate) {
    let n = c.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            num += c[i] * x[(i, j)] * c[j];
            den += c[i] * m[(i, j)] * c[j];
        }
    }
    let (mut vn, mut vd, mut vq) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i..n {
            let w = if i == j { c[i] * c[i] } else { 2.0 * c[i] * c[j] };
            let dn = w * xs[(i, j)];
            let dd = w * ms[(i, j)];
            vn += dn * dn;
            vd += dd * dd;
            vq += (dn / den).powi(2) + (num * dd / (den * den)).powi(2);
        }
    }
    let _ = vn;
    (Estimate::new(num / den, vq.sqrt()), Estimate::new(den, vd.sqrt()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QSEState {
    pub energy: Estimate,
    pub s2: Estimate,
    /// Spin quantum number of the block, if assigned.
    pub spin: Option<f64>,
    pub block: usize,
    /// Coefficients over the excitation basis.
    pub coefficients: Vec<f64>,
    /// Denominator `c^T M c` consistent with zero within three standard errors.
    pub unstable: bool,
}

/// `(epsilon, sigma, unstable)` for coefficients `c` of the mean-matrix solve.
pub fn estimate_with_uncertainty(mats: &QSEMatrices, c: &[f64]) -> (Estimate, Estimate, bool) {
    let (e, den) = rayleigh_quotient(&mats.h, &mats.h_sigma, &mats.m, &mats.m_sigma, c);
    let (s, _) = rayleigh_quotient(&mats.s, &mats.s_sigma, &mats.m, &mats.m_sigma, c);
    let unstable = den.value.abs() <= 3.0 * den.sigma;
    (e, s, unstable)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QSEResult {
    /// Ascending in energy.
    pub states: Vec<QSEState>,
    pub block_spins: Vec<Option<f64>>,
    pub block_sizes: Vec<usize>,
    pub spin_tol: f64,
    pub asymmetry: f64,
}

impl QSEResult {
    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.energy.value).collect()
    }

    /// States of one spin block, ascending.
    pub fn with_spin(&self, spin: f64) -> Vec<&QSEState> {
        self.states.iter().filter(|s| s.spin == Some(spin)).collect()
    }
}

/// Spin projection, block solves and uncertainty estimates.
pub fn run_qse(mats: &QSEMatrices, tol: f64) -> Result<QSEResult> {
    let blocks = spin_project(mats, tol)?;
    let mut states = Vec::new();
    for (bi, b) in blocks.iter().enumerate() {
        let (_, y) = solve_qse(&b.h)?;
        for a in 0..y.ncols() {
            let c: Vec<f64> = (&b.f * y.column(a)).iter().copied().collect();
            let (energy, s2, unstable) = estimate_with_uncertainty(mats, &c);
            states.push(QSEState { energy, s2, spin: b.spin, block: bi, coefficients: c, unstable });
        }
    }
    states.sort_by(|a, b| a.energy.value.total_cmp(&b.energy.value).then(a.block.cmp(&b.block)));
    Ok(QSEResult {
        states,
        block_spins: blocks.iter().map(|b| b.spin).collect(),
        block_sizes: blocks.iter().map(|b| b.f.ncols()).collect(),
        spin_tol: tol,
        asymmetry: mats.asymmetry,
    })
}
