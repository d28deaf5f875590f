//! Jordan-Wigner images of fermionic operators on the `m` spin-orbitals of
//! one spin species, plus direct action of excitation operators on occupation
//! bitstrings.
//!
//! Mode `j` maps to qubit `j`; `a_j^+ = (X_j - iY_j)/2 Z_0 ... Z_{j-1}` and a
//! set bit means the mode is occupied.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::{PauliString, PauliSum};

pub fn creation(n: usize, j: usize) -> PauliSum {
    ladder(n, j, true)
}

pub fn annihilation(n: usize, j: usize) -> PauliSum {
    ladder(n, j, false)
}

fn ladder(n: usize, j: usize, create: bool) -> PauliSum {
    assert!(j < n, "mode {j} out of range for {n} qubits");
    let below = (1u32 << j) - 1;
    let bit = 1u32 << j;
    let mut s = PauliSum::zero(n);
    s.add_term(PauliString::from_masks(n, bit, below), Complex64::new(0.5, 0.0));
    let yc = if create { -0.5 } else { 0.5 };
    s.add_term(PauliString::from_masks(n, bit, below | bit), Complex64::new(0.0, yc));
    s
}

/// `a_p^+ a_r`.
pub fn jw_excitation(n: usize, p: usize, r: usize) -> PauliSum {
    &creation(n, p) * &annihilation(n, r)
}

/// `a_a^+ a_b^+ a_j a_i`.
pub fn jw_double_excitation(n: usize, a: usize, i: usize, b: usize, j: usize) -> PauliSum {
    let left = &creation(n, a) * &creation(n, b);
    let right = &annihilation(n, j) * &annihilation(n, i);
    &left * &right
}

/// Which fermionic operator [`jw_map`] produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JwKind {
    /// `sum_pr x_pr a_p^+ a_r` for the supplied coefficient matrix.
    OneBody,
    /// `a_a^+ a_i`, scaled by the matrix entry `x[a][i]`.
    Excitation { a: usize, i: usize },
    /// `a_a^+ a_b^+ a_j a_i`, scaled by `x[a][i] * x[b][j]`.
    ExcitationPair { a: usize, i: usize, b: usize, j: usize },
}

pub fn jw_map(x: &DMatrix<f64>, kind: JwKind) -> Result<PauliSum> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!("{}x{} coefficient matrix", x.nrows(), x.ncols())));
    }
    let m = x.nrows();
    if m == 0 {
        return Err(Error::Invalid("empty coefficient matrix".into()));
    }
    let check = |idx: &[usize]| {
        if idx.iter().any(|&k| k >= m) {
            Err(Error::Invalid(format!("index out of range for m = {m}")))
        } else {
            Ok(())
        }
    };
    match kind {
        JwKind::OneBody => Ok(jw_one_body(x)),
        JwKind::Excitation { a, i } => {
            check(&[a, i])?;
            Ok(jw_excitation(m, a, i).scale(Complex64::new(x[(a, i)], 0.0)))
        }
        JwKind::ExcitationPair { a, i, b, j } => {
            check(&[a, i, b, j])?;
            let c = x[(a, i)] * x[(b, j)];
            Ok(jw_double_excitation(m, a, i, b, j).scale(Complex64::new(c, 0.0)))
        }
    }
}

pub fn jw_one_body(x: &DMatrix<f64>) -> PauliSum {
    let m = x.nrows();
    let mut out = PauliSum::zero(m);
    for p in 0..m {
        for r in 0..m {
            let v = x[(p, r)];
            if v != 0.0 {
                out = &out + &jw_excitation(m, p, r).scale(Complex64::new(v, 0.0));
            }
        }
    }
    out
}

/// `a_p^+ a_r |bits>` as `(sign, bits')`, or `None` when it annihilates.
#[inline]
pub fn apply_hop(bits: usize, p: usize, r: usize) -> Option<(f64, usize)> {
    if bits >> r & 1 == 0 {
        return None;
    }
    let mut sign = parity_below(bits, r);
    let b = bits & !(1 << r);
    if b >> p & 1 == 1 {
        return None;
    }
    sign *= parity_below(b, p);
    Some((sign, b | (1 << p)))
}

#[inline]
pub fn parity_below(bits: usize, j: usize) -> f64 {
    if (bits & ((1usize << j) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Applies a string of ladder operators, rightmost first. Each entry is
/// `(mode, is_creation)`.
pub fn apply_ladder_string(bits: usize, ops: &[(usize, bool)]) -> Option<(f64, usize)> {
    let mut sign = 1.0;
    let mut b = bits;
    for &(j, create) in ops.iter().rev() {
        let occ = b >> j & 1 == 1;
        if occ == create {
            return None;
        }
        sign *= parity_below(b, j);
        b ^= 1 << j;
    }
    Some((sign, b))
}

/// Dense real matrix of `sum_pr x_pr a_p^+ a_r + 1/2 sum (pr|qs) a_p^+ a_r a_q^+ a_s`
/// on one spin species (`2^m x 2^m`, row-major).
pub fn dense_spin_operator(one: &DMatrix<f64>, two: Option<(&[f64], f64)>) -> Vec<f64> {
    let m = one.nrows();
    let dim = 1usize << m;
    let mut out = vec![0.0; dim * dim];
    for col in 0..dim {
        for p in 0..m {
            for r in 0..m {
                let v = one[(p, r)];
                if v == 0.0 {
                    continue;
                }
                if let Some((s, row)) = apply_hop(col, p, r) {
                    out[row * dim + col] += v * s;
                }
            }
        }
        if let Some((eri, scale)) = two {
            for q in 0..m {
                for s in 0..m {
                    let Some((s1, mid)) = apply_hop(col, q, s) else { continue };
                    for p in 0..m {
                        for r in 0..m {
                            let v = eri[((p * m + r) * m + q) * m + s];
                            if v == 0.0 {
                                continue;
                            }
                            if let Some((s2, row)) = apply_hop(mid, p, r) {
                                out[row * dim + col] += scale * v * s1 * s2;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
