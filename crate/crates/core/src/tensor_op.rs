//! Operators in forged form `sum_mu A_mu (x) B_mu`, with `A` acting on the
//! spin-up register (qubits `0..m`) and `B` on the spin-down register.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fermion::{jw_double_excitation, jw_excitation, jw_one_body};
use crate::integrals::{CholeskyFactors, MolecularIntegrals};
use crate::pauli::{PauliSum, MERGE_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFactorOp {
    m: usize,
    factors: Vec<(PauliSum, PauliSum)>,
}

impl TensorFactorOp {
    pub fn new(m: usize, factors: Vec<(PauliSum, PauliSum)>) -> Result<Self> {
        if factors.iter().any(|(a, b)| a.n() != m || b.n() != m) {
            return Err(Error::Dimension(format!("factor halves must act on {m} qubits")));
        }
        Ok(Self { m, factors })
    }

    pub fn identity(m: usize) -> Self {
        Self { m, factors: vec![(PauliSum::identity(m), PauliSum::identity(m))] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn factors(&self) -> &[(PauliSum, PauliSum)] {
        &self.factors
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m,
            factors: self.factors.iter().map(|(a, b)| (a.adjoint(), b.adjoint())).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let c = Complex64::new(c, 0.0);
        Self { m: self.m, factors: self.factors.iter().map(|(a, b)| (a.scale(c), b.clone())).collect() }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        if self.m != other.m {
            return Err(Error::Dimension(format!("m = {} vs {}", self.m, other.m)));
        }
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        Ok(Self { m: self.m, factors }.merged())
    }

    /// Combines factors sharing an identical second half and drops factors
    /// whose halves vanish.
    fn merged(self) -> Self {
        let mut out: Vec<(PauliSum, PauliSum)> = Vec::with_capacity(self.factors.len());
        for (a, b) in self.factors {
            if a.is_empty() || b.is_empty() {
                continue;
            }
            if let Some(slot) = out.iter_mut().find(|(_, ob)| *ob == b) {
                slot.0 = &slot.0 + &a;
            } else {
                out.push((a, b));
            }
        }
        out.retain(|(a, b)| !a.is_empty() && !b.is_empty());
        Self { m: self.m, factors: out }
    }

    /// Dense `4^m x 4^m` matrix on the joint register. Joint basis index is
    /// `up | dn << m`.
    pub fn dense(&self) -> Vec<Complex64> {
        let d = 1usize << self.m;
        let big = d * d;
        let mut out = vec![Complex64::default(); big * big];
        for (a, b) in &self.factors {
            let da = a.dense();
            let db = b.dense();
            for ru in 0..d {
                for cu in 0..d {
                    let va = da[ru * d + cu];
                    if va.norm_sqr() == 0.0 {
                        continue;
                    }
                    for rd in 0..d {
                        for cd in 0..d {
                            let vb = db[rd * d + cd];
                            if vb.norm_sqr() == 0.0 {
                                continue;
                            }
                            out[(ru | rd << self.m) * big + (cu | cd << self.m)] += va * vb;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn term_count(&self) -> usize {
        self.factors.iter().map(|(a, b)| a.len() * b.len()).sum()
    }
}

/// `X Y = sum_{mu nu} A_mu C_nu (x) B_mu D_nu`.
pub fn op_product(x: &TensorFactorOp, y: &TensorFactorOp) -> Result<TensorFactorOp> {
    if x.m != y.m {
        return Err(Error::Dimension(format!("m = {} vs {}", x.m, y.m)));
    }
    let mut factors = Vec::with_capacity(x.factors.len() * y.factors.len());
    for (a, b) in &x.factors {
        for (c, d) in &y.factors {
            let ac = a * c;
            let bd = b * d;
            if !ac.is_empty() && !bd.is_empty() {
                factors.push((ac, bd));
            }
        }
    }
    Ok(TensorFactorOp { m: x.m, factors }.merged())
}

/// One-body coefficients of the same-spin operator `A`:
/// `h_pr - 1/2 sum_q (pq|qr)`.
pub fn modified_one_body(ints: &MolecularIntegrals) -> DMatrix<f64> {
    let m = ints.m;
    DMatrix::from_fn(m, m, |p, r| {
        ints.h[(p, r)] - 0.5 * (0..m).map(|q| ints.eri(p, q, q, r)).sum::<f64>()
    })
}

/// JW image of the same-spin part `A_sigma`.
pub fn same_spin_operator(ints: &MolecularIntegrals) -> PauliSum {
    let m = ints.m;
    let mut a = jw_one_body(&modified_one_body(ints));
    let e: Vec<PauliSum> =
        (0..m * m).map(|k| jw_excitation(m, k / m, k % m)).collect();
    let mut two = PauliSum::zero(m);
    for pr in 0..m * m {
        for qs in 0..m * m {
            let v = ints.eri_slice()[pr * m * m + qs];
            if v.abs() < MERGE_TOL {
                continue;
            }
            two = &two + &(&e[pr] * &e[qs]).scale(Complex64::new(0.5 * v, 0.0));
        }
    }
    a = &a + &two;
    a.normalize();
    a
}

/// `H - e0 = A (x) 1 + 1 (x) A + sum_g L^g (x) L^g`.
pub fn build_hamiltonian_tensor(
    ints: &MolecularIntegrals,
    chol: &CholeskyFactors,
) -> Result<TensorFactorOp> {
    let m = ints.m;
    if chol.m().is_some_and(|cm| cm != m) {
        return Err(Error::Dimension(format!(
            "Cholesky factors are {}x{} but integrals have m = {m}",
            chol.m().unwrap_or(0),
            chol.m().unwrap_or(0)
        )));
    }
    let a = same_spin_operator(ints);
    let id = PauliSum::identity(m);
    let mut factors = vec![(a.clone(), id.clone()), (id, a)];
    for l in &chol.factors {
        let jl = jw_one_body(l);
        if !jl.is_empty() {
            factors.push((jl.clone(), jl));
        }
    }
    TensorFactorOp::new(m, factors)
}

/// Spin-summed one-body operator `B (x) 1 + 1 (x) B`.
pub fn build_one_body_tensor(x: &DMatrix<f64>) -> Result<TensorFactorOp> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!("{}x{} coefficient matrix", x.nrows(), x.ncols())));
    }
    let m = x.nrows();
    let b = jw_one_body(x);
    let id = PauliSum::identity(m);
    TensorFactorOp::new(m, vec![(b.clone(), id.clone()), (id, b)])
}

/// Total spin on the `S_z = 0` sector:
/// `S^2 = 1 (x) N_dn - sum_pq E_pq (x) E_qp`.
pub fn build_s2_tensor(m: usize) -> Result<TensorFactorOp> {
    if m == 0 {
        return Err(Error::Invalid("m must be at least 1".into()));
    }
    let id = PauliSum::identity(m);
    let number = jw_one_body(&DMatrix::identity(m, m));
    let mut factors = vec![(id, number)];
    for p in 0..m {
        for q in 0..m {
            let up = jw_excitation(m, p, q).scale(Complex64::new(-1.0, 0.0));
            factors.push((up, jw_excitation(m, q, p)));
        }
    }
    TensorFactorOp::new(m, factors)
}

/// Excitation acting on one spin register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HalfOp {
    Identity,
    /// `a_a^+ a_i`
    Single { a: usize, i: usize },
    /// `a_a^+ a_b^+ a_j a_i`
    Double { a: usize, i: usize, b: usize, j: usize },
}

impl HalfOp {
    pub fn pauli(&self, m: usize) -> PauliSum {
        match *self {
            HalfOp::Identity => PauliSum::identity(m),
            HalfOp::Single { a, i } => jw_excitation(m, a, i),
            HalfOp::Double { a, i, b, j } => jw_double_excitation(m, a, i, b, j),
        }
    }

    /// The ladder string, rightmost applied first.
    pub fn ladder(&self) -> Vec<(usize, bool)> {
        match *self {
            HalfOp::Identity => vec![],
            HalfOp::Single { a, i } => vec![(a, true), (i, false)],
            HalfOp::Double { a, i, b, j } => vec![(a, true), (b, true), (j, false), (i, false)],
        }
    }

    fn label(&self) -> String {
        match *self {
            HalfOp::Identity => String::new(),
            HalfOp::Single { a, i } => format!("{a}<-{i}"),
            HalfOp::Double { a, i, b, j } => format!("{a}{b}<-{i}{j}"),
        }
    }
}

/// QSE excitation `E_mu = up (x) dn`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Excitation {
    pub up: HalfOp,
    pub dn: HalfOp,
}

impl Excitation {
    pub fn tensor(&self, m: usize) -> TensorFactorOp {
        TensorFactorOp { m, factors: vec![(self.up.pauli(m), self.dn.pauli(m))] }
    }

    pub fn label(&self) -> String {
        match (self.up, self.dn) {
            (HalfOp::Identity, HalfOp::Identity) => "I".into(),
            (u, HalfOp::Identity) => format!("up[{}]", u.label()),
            (HalfOp::Identity, d) => format!("dn[{}]", d.label()),
            (u, d) => format!("up[{}]dn[{}]", u.label(), d.label()),
        }
    }
}

/// Identity, singles and doubles in the fixed order
/// identity, up singles, down singles, up-up, down-down, up-down.
pub fn build_excitations(m: usize, occ: &[usize], virt: &[usize]) -> Result<Vec<Excitation>> {
    if occ.iter().chain(virt).any(|&k| k >= m) {
        return Err(Error::Invalid(format!("orbital index out of range for m = {m}")));
    }
    if occ.iter().any(|o| virt.contains(o)) {
        return Err(Error::Invalid("occupied and virtual sets overlap".into()));
    }
    let id = HalfOp::Identity;
    let singles: Vec<HalfOp> = occ
        .iter()
        .flat_map(|&i| virt.iter().map(move |&a| HalfOp::Single { a, i }))
        .collect();
    let mut doubles = Vec::new();
    for (ii, &i) in occ.iter().enumerate() {
        for &j in &occ[ii + 1..] {
            for (ai, &a) in virt.iter().enumerate() {
                for &b in &virt[ai + 1..] {
                    doubles.push(HalfOp::Double { a, i, b, j });
                }
            }
        }
    }
    let mut out = vec![Excitation { up: id, dn: id }];
    out.extend(singles.iter().map(|&s| Excitation { up: s, dn: id }));
    out.extend(singles.iter().map(|&s| Excitation { up: id, dn: s }));
    out.extend(doubles.iter().map(|&d| Excitation { up: d, dn: id }));
    out.extend(doubles.iter().map(|&d| Excitation { up: id, dn: d }));
    for &s in &singles {
        for &t in &singles {
            out.push(Excitation { up: s, dn: t });
        }
    }
    Ok(out)
}
