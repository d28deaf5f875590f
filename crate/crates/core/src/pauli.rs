//! Pauli strings and sums of Pauli strings with complex coefficients.
//!
//! A string on `n` qubits is stored as two bit masks. Qubit `q` carries
//! `X` when only bit `q` of `x` is set, `Z` when only bit `q` of `z` is set
//! and `Y` when both are set. The operator is `i^{|x&z|} X^x Z^z`, so that
//! `Y = iXZ` on every qubit.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients below this magnitude are dropped when sums are normalized.
pub const MERGE_TOL: f64 = 1e-14;

const I1: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub(crate) fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    I,
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n: u8,
    x: u32,
    z: u32,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        assert!(n <= 32, "at most 32 qubits");
        Self { n: n as u8, x: 0, z: 0 }
    }

    pub fn from_masks(n: usize, x: u32, z: u32) -> Self {
        let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        assert!(x & !full == 0 && z & !full == 0, "mask wider than {n} qubits");
        Self { n: n as u8, x, z }
    }

    pub fn from_axes(axes: &[Axis]) -> Self {
        let mut s = Self::identity(axes.len());
        for (q, a) in axes.iter().enumerate() {
            s = s.with(q, *a);
        }
        s
    }

    /// Bloch-vector index: `x | z << n`, in `[0, 4^n)`.
    pub fn index(&self) -> usize {
        (self.x as usize) | ((self.z as usize) << self.n)
    }

    pub fn from_index(n: usize, idx: usize) -> Self {
        let mask = (1usize << n) - 1;
        Self::from_masks(n, (idx & mask) as u32, ((idx >> n) & mask) as u32)
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }
    pub fn x_mask(&self) -> u32 {
        self.x
    }
    pub fn z_mask(&self) -> u32 {
        self.z
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn axis(&self, q: usize) -> Axis {
        match ((self.x >> q) & 1, (self.z >> q) & 1) {
            (0, 0) => Axis::I,
            (1, 0) => Axis::X,
            (1, 1) => Axis::Y,
            _ => Axis::Z,
        }
    }

    pub fn with(mut self, q: usize, a: Axis) -> Self {
        assert!(q < self.n(), "qubit {q} out of range");
        let bit = 1u32 << q;
        self.x &= !bit;
        self.z &= !bit;
        match a {
            Axis::I => {}
            Axis::X => self.x |= bit,
            Axis::Y => {
                self.x |= bit;
                self.z |= bit
            }
            Axis::Z => self.z |= bit,
        }
        self
    }

    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    pub fn weight(&self) -> u32 {
        (self.x | self.z).count_ones()
    }

    /// `self * other = phase * result`.
    pub fn mul(&self, other: &Self) -> (Complex64, Self) {
        debug_assert_eq!(self.n, other.n);
        // i^{y1} X^x1 Z^z1 i^{y2} X^x2 Z^z2 = i^{y1+y2} (-1)^{|z1&x2|} X^{x1^x2} Z^{z1^z2}
        let y1 = (self.x & self.z).count_ones();
        let y2 = (other.x & other.z).count_ones();
        let swap = (self.z & other.x).count_ones();
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let y = (x & z).count_ones();
        // result string carries i^{y}; divide it out
        let k = (y1 + y2 + 2 * swap + 4 * 8 - y) % 4;
        (i_pow(k), Self { n: self.n, x, z })
    }

    /// Action on a computational basis state: `P|r> = phase |r ^ x>`.
    #[inline]
    pub fn apply_basis(&self, r: usize) -> (Complex64, usize) {
        let sign = ((self.z as usize & r).count_ones() & 1) as u32;
        (i_pow(self.y_count() + 2 * sign), r ^ self.x as usize)
    }

    pub fn commutes_with(&self, other: &Self) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()) % 2 == 0
    }

    pub fn parse(s: &str) -> Result<Self> {
        let axes = s
            .chars()
            .map(|c| match c {
                'I' => Ok(Axis::I),
                'X' => Ok(Axis::X),
                'Y' => Ok(Axis::Y),
                'Z' => Ok(Axis::Z),
                _ => Err(Error::Invalid(format!("bad Pauli label {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_axes(&axes))
    }
}

impl fmt::Display for PauliString {
    /// Character `q` of the label is the axis on qubit `q`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n() {
            let c = match self.axis(q) {
                Axis::I => 'I',
                Axis::X => 'X',
                Axis::Y => 'Y',
                Axis::Z => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Linear combination of Pauli strings on `n` qubits, kept in canonical
/// (sorted) order.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: BTreeMap<PauliString, Complex64>,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    pauli: String,
    re: f64,
    im: f64,
}

impl PauliSum {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_term(n, PauliString::identity(n), I1)
    }

    pub fn from_term(n: usize, p: PauliString, c: Complex64) -> Self {
        let mut s = Self::zero(n);
        s.add_term(p, c);
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, &Complex64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, p: &PauliString) -> Complex64 {
        self.terms.get(p).copied().unwrap_or_default()
    }

    pub fn add_term(&mut self, p: PauliString, c: Complex64) {
        assert_eq!(p.n(), self.n, "qubit count mismatch");
        let e = self.terms.entry(p).or_default();
        *e += c;
        if e.norm() < MERGE_TOL {
            self.terms.remove(&p);
        }
    }

    /// Drops coefficients below [`MERGE_TOL`].
    pub fn normalize(&mut self) {
        self.terms.retain(|_, c| c.norm() >= MERGE_TOL);
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.n);
        for (p, v) in &self.terms {
            out.add_term(*p, v * c);
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|c| *c = c.conj());
        out
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.terms.values().all(|c| c.im.abs() <= tol)
    }

    pub fn is_anti_hermitian(&self, tol: f64) -> bool {
        self.terms.values().all(|c| c.re.abs() <= tol)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!("{} vs {} qubits", self.n, other.n)));
        }
        let mut acc: BTreeMap<PauliString, Complex64> = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let (ph, p) = a.mul(b);
                *acc.entry(p).or_default() += ph * ca * cb;
            }
        }
        acc.retain(|_, c| c.norm() >= MERGE_TOL);
        Ok(Self { n: self.n, terms: acc })
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!("{} vs {} qubits", self.n, other.n)));
        }
        let mut out = self.clone();
        for (p, c) in &other.terms {
            out.add_term(*p, *c);
        }
        Ok(out)
    }

    /// Dense `2^n x 2^n` matrix, row-major, basis index bit `q` = qubit `q`.
    pub fn dense(&self) -> Vec<Complex64> {
        let dim = 1usize << self.n;
        let mut m = vec![Complex64::default(); dim * dim];
        for (p, c) in &self.terms {
            for col in 0..dim {
                let (ph, row) = p.apply_basis(col);
                m[row * dim + col] += ph * c;
            }
        }
        m
    }

    /// `sum_r conj(psi'_r) psi_r` with `psi' = self |psi>`, i.e. `<psi|self|psi>`.
    pub fn expectation(&self, amps: &[Complex64]) -> Result<Complex64> {
        if amps.len() != 1usize << self.n {
            return Err(Error::Dimension(format!(
                "state of length {} for {}-qubit operator",
                amps.len(),
                self.n
            )));
        }
        let mut acc = Complex64::default();
        for (p, c) in &self.terms {
            let mut e = Complex64::default();
            for (r, a) in amps.iter().enumerate() {
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                let (ph, row) = p.apply_basis(r);
                e += amps[row].conj() * ph * a;
            }
            acc += c * e;
        }
        Ok(acc)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let terms: Vec<TermJson> = self
            .terms
            .iter()
            .map(|(p, c)| TermJson { pauli: p.to_string(), re: c.re, im: c.im })
            .collect();
        serde_json::to_value(terms).expect("serializable terms")
    }

    pub fn from_json(n: usize, value: &serde_json::Value) -> Result<Self> {
        let terms: Vec<TermJson> = serde_json::from_value(value.clone())?;
        let mut out = Self::zero(n);
        for t in terms {
            let p = PauliString::parse(&t.pauli)?;
            if p.n() != n {
                return Err(Error::Dimension(format!("label {} for {n} qubits", t.pauli)));
            }
            out.add_term(p, Complex64::new(t.re, t.im));
        }
        Ok(out)
    }
}

impl Add for &PauliSum {
    type Output = PauliSum;
    fn add(self, rhs: &PauliSum) -> PauliSum {
        self.checked_add(rhs).expect("matching qubit counts")
    }
}

impl Mul for &PauliSum {
    type Output = PauliSum;
    fn mul(self, rhs: &PauliSum) -> PauliSum {
        self.checked_mul(rhs).expect("matching qubit counts")
    }
}

/// Pauli decomposition of a dense `2^n x 2^n` row-major matrix: entry `i` of
/// the result is `Tr(P_i^dagger M) / 2^n` for the string with index `i`.
pub fn pauli_coefficients(n: usize, m: &[Complex64]) -> Vec<Complex64> {
    let dim = 1usize << n;
    assert_eq!(m.len(), dim * dim);
    let mut out = vec![Complex64::default(); dim * dim];
    let mut buf = vec![Complex64::default(); dim];
    for x in 0..dim {
        // Tr(P^dag M) = sum_r conj(<r^x|P|r>) M[r^x, r] ; P|r> = i^y (-1)^{z.r} |r^x>
        for (r, b) in buf.iter_mut().enumerate() {
            *b = m[(r ^ x) * dim + r];
        }
        walsh_hadamard(&mut buf);
        // buf[z] = sum_r (-1)^{z.r} M[r^x, r]
        for (z, b) in buf.iter().enumerate() {
            let y = (x & z).count_ones();
            // conj(i^y) = i^{-y}
            out[x | (z << n)] = i_pow(4 - y % 4) * b / dim as f64;
        }
    }
    out
}

/// In-place unnormalized Walsh-Hadamard transform.
pub fn walsh_hadamard<T>(v: &mut [T])
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let n = v.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(a: Axis) -> [Complex64; 4] {
        let z = Complex64::default();
        let o = I1;
        let i = Complex64::new(0.0, 1.0);
        match a {
            Axis::I => [o, z, z, o],
            Axis::X => [z, o, o, z],
            Axis::Y => [z, -i, i, z],
            Axis::Z => [o, z, z, -o],
        }
    }

    fn matmul2(a: &[Complex64; 4], b: &[Complex64; 4]) -> [Complex64; 4] {
        [
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ]
    }

    #[test]
    fn multiplication_table_exhaustive() {
        let axes = [Axis::I, Axis::X, Axis::Y, Axis::Z];
        for a in axes {
            for b in axes {
                let pa = PauliString::from_axes(&[a]);
                let pb = PauliString::from_axes(&[b]);
                let (ph, pc) = pa.mul(&pb);
                let lhs = matmul2(&single(a), &single(b));
                let rhs = single(pc.axis(0)).map(|v| v * ph);
                for k in 0..4 {
                    assert!((lhs[k] - rhs[k]).norm() < 1e-15, "{a:?}{b:?}");
                }
            }
        }
        // epsilon_abc structure
        let x = PauliString::from_axes(&[Axis::X]);
        let y = PauliString::from_axes(&[Axis::Y]);
        let (ph, z) = x.mul(&y);
        assert_eq!(z.axis(0), Axis::Z);
        assert_eq!(ph, Complex64::new(0.0, 1.0));
        let (ph, _) = y.mul(&x);
        assert_eq!(ph, Complex64::new(0.0, -1.0));
    }

    #[test]
    fn labels_round_trip_and_json() {
        let p = PauliString::parse("XYZIZI").unwrap();
        assert_eq!(p.to_string(), "XYZIZI");
        assert_eq!(PauliString::from_index(6, p.index()), p);
        let mut s = PauliSum::zero(6);
        s.add_term(p, Complex64::new(0.5, -0.25));
        let back = PauliSum::from_json(6, &s.to_json()).unwrap();
        assert_eq!(back, s);
        assert!(PauliString::parse("XQ").is_err());
    }

    #[test]
    fn z_on_occupied_qubit() {
        let z0 = PauliSum::from_term(6, PauliString::parse("ZIIIII").unwrap(), I1);
        let mut amps = vec![Complex64::default(); 64];
        amps[0b000111] = I1;
        assert_eq!(z0.expectation(&amps).unwrap(), Complex64::new(-1.0, 0.0));
        assert_eq!(PauliSum::identity(6).expectation(&amps).unwrap(), I1);
        assert!(z0.expectation(&amps[..32]).is_err());
    }

    fn arb_string(n: usize) -> impl Strategy<Value = PauliString> {
        (0..(1usize << (2 * n))).prop_map(move |i| PauliString::from_index(n, i))
    }

    fn arb_sum(n: usize) -> impl Strategy<Value = PauliSum> {
        proptest::collection::vec((arb_string(n), -1.0..1.0f64, -1.0..1.0f64), 1..6).prop_map(
            move |ts| {
                let mut s = PauliSum::zero(n);
                for (p, a, b) in ts {
                    s.add_term(p, Complex64::new(a, b));
                }
                s
            },
        )
    }

    fn dense_mul(a: &[Complex64], b: &[Complex64], dim: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); dim * dim];
        for i in 0..dim {
            for k in 0..dim {
                let v = a[i * dim + k];
                if v.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    out[i * dim + j] += v * b[k * dim + j];
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn product_matches_dense(a in arb_sum(3), b in arb_sum(3)) {
            let lhs = (&a * &b).dense();
            let rhs = dense_mul(&a.dense(), &b.dense(), 8);
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn decomposition_inverts_dense(a in arb_sum(3)) {
            let coeffs = pauli_coefficients(3, &a.dense());
            for (i, c) in coeffs.iter().enumerate() {
                let p = PauliString::from_index(3, i);
                prop_assert!((c - a.coeff(&p)).norm() < 1e-12);
            }
        }

        #[test]
        fn commutation_matches_products(a in arb_string(4), b in arb_string(4)) {
            let (p1, s1) = a.mul(&b);
            let (p2, s2) = b.mul(&a);
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(a.commutes_with(&b), (p1 - p2).norm() < 1e-15);
        }
    }
}
