//! Bloch vectors and the error-mitigation stages: readout inversion,
//! post-selection, removal of imaginary Pauli entries, Clifford
//! add-and-subtract correction and purification.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::pauli::{pauli_coefficients, PauliString};
use crate::sim::{CircuitTag, State};

/// `rho = 2^-n sum_i a_i P_i`, indexed by [`PauliString::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlochVector {
    pub n: usize,
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tag: Option<CircuitTag>,
    /// Entries actually determined by the measured bases; `None` means all.
    pub covered: Option<Vec<bool>>,
}

impl BlochVector {
    pub fn new(n: usize, a: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if a.len() != 1 << (2 * n) || sigma.len() != a.len() {
            return Err(Error::Dimension(format!("Bloch vector of {n} qubits needs {} entries", 1usize << (2 * n))));
        }
        Ok(Self { n, a, sigma, tag: None, covered: None })
    }

    pub fn from_state(state: &State) -> Self {
        let n = state.n();
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut rho = vec![Complex64::default(); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                rho[r * dim + c] = amps[r] * amps[c].conj();
            }
        }
        Self::from_density(n, &rho)
    }

    /// Bloch vector of a dense Hermitian `rho` with unit trace.
    pub fn from_density(n: usize, rho: &[Complex64]) -> Self {
        let scale = (1usize << n) as f64;
        let mut a: Vec<f64> = pauli_coefficients(n, rho).iter().map(|c| c.re * scale).collect();
        a[0] = 1.0;
        let len = a.len();
        Self { n, a, sigma: vec![0.0; len], tag: None, covered: None }
    }

    pub fn with_tag(mut self, tag: Option<CircuitTag>) -> Self {
        self.tag = tag;
        self
    }

    pub fn entry(&self, p: &PauliString) -> f64 {
        self.a[p.index()]
    }

    pub fn is_covered(&self, idx: usize) -> bool {
        self.covered.as_ref().is_none_or(|c| c[idx])
    }

    /// `sum_{i != 0} a_i^2`.
    pub fn norm_sq(&self) -> f64 {
        self.a[1..].iter().map(|v| v * v).sum()
    }

    /// `Tr rho^2 = 2^-n (1 + |a|^2)`.
    pub fn purity(&self) -> f64 {
        (1.0 + self.norm_sq()) / (1usize << self.n) as f64
    }

    /// Dense `rho`.
    pub fn density(&self) -> Vec<Complex64> {
        let dim = 1usize << self.n;
        let mut rho = vec![Complex64::default(); dim * dim];
        for (idx, &v) in self.a.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let p = PauliString::from_index(self.n, idx);
            for c in 0..dim {
                let (ph, r) = p.apply_basis(c);
                rho[r * dim + c] += ph * (v / dim as f64);
            }
        }
        rho
    }
}

/// Per-qubit assignment matrices `A_q[read][prepared]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCalibration {
    pub matrices: Vec<[[f64; 2]; 2]>,
}

impl ReadoutCalibration {
    pub fn identity(n: usize) -> Self {
        Self { matrices: vec![[[1.0, 0.0], [0.0, 1.0]]; n] }
    }

    /// `p01 = P(read 1 | prepared 0)`, `p10 = P(read 0 | prepared 1)`.
    pub fn from_flip_probabilities(n: usize, p01: f64, p10: f64) -> Self {
        Self { matrices: vec![[[1.0 - p01, p10], [p01, 1.0 - p10]]; n] }
    }

    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    pub fn inverses(&self) -> Result<Vec<[[f64; 2]; 2]>> {
        self.matrices
            .iter()
            .enumerate()
            .map(|(q, m)| {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if det.abs() < 1e-12 {
                    return Err(Error::SingularAssignment(q));
                }
                Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
            })
            .collect()
    }
}

/// Applies `(x)_q M_q` to a dense distribution over `n` bits. With
/// `transpose`, applies `(x)_q M_q^T`.
pub fn apply_tensored(mats: &[[[f64; 2]; 2]], v: &mut [f64], transpose: bool) {
    for (q, m) in mats.iter().enumerate() {
        let bit = 1usize << q;
        for i in 0..v.len() {
            if i & bit == 0 {
                let (x0, x1) = (v[i], v[i | bit]);
                if transpose {
                    v[i] = m[0][0] * x0 + m[1][0] * x1;
                    v[i | bit] = m[0][1] * x0 + m[1][1] * x1;
                } else {
                    v[i] = m[0][0] * x0 + m[0][1] * x1;
                    v[i | bit] = m[1][0] * x0 + m[1][1] * x1;
                }
            }
        }
    }
}

/// Quasi-probabilities `(x)_q A_q^-1 p`, kept on the observed support and its
/// Hamming-distance-1 neighbourhood and renormalized to unit sum. Negative
/// values are retained.
pub fn mitigate_readout(
    counts: &BTreeMap<usize, f64>,
    cal: &ReadoutCalibration,
) -> Result<BTreeMap<usize, f64>> {
    let n = cal.n();
    if n > 24 {
        return Err(Error::Invalid(format!("{n} qubits exceed the readout inversion limit")));
    }
    let inv = cal.inverses()?;
    let total: f64 = counts.values().sum();
    if total <= 0.0 {
        return Err(Error::Invalid("empty histogram".into()));
    }
    let mut v = vec![0.0; 1 << n];
    for (&b, &c) in counts {
        if b >> n != 0 {
            return Err(Error::Dimension(format!("outcome {b:b} wider than {n} bits")));
        }
        v[b] += c / total;
    }
    apply_tensored(&inv, &mut v, false);
    let mut keep: BTreeMap<usize, f64> = BTreeMap::new();
    for &b in counts.keys() {
        keep.insert(b, v[b]);
        for q in 0..n {
            let nb = b ^ (1 << q);
            keep.insert(nb, v[nb]);
        }
    }
    let s: f64 = keep.values().sum();
    if s.abs() < 1e-300 {
        return Err(Error::Data("quasi-probabilities sum to zero".into()));
    }
    keep.values_mut().for_each(|x| *x /= s);
    Ok(keep)
}

/// Keeps outcomes of Hamming weight `weight`. Renormalization is left to the
/// consumer.
pub fn postselect<T: Copy>(counts: &BTreeMap<usize, T>, weight: u32) -> Result<BTreeMap<usize, T>> {
    let out: BTreeMap<usize, T> =
        counts.iter().filter(|(b, _)| b.count_ones() == weight).map(|(b, c)| (*b, *c)).collect();
    if out.is_empty() {
        return Err(Error::EmptyPostselection);
    }
    Ok(out)
}

/// For `p` in `{0, 2}` the prepared state is real, so entries with an odd
/// number of `Y` factors vanish.
pub fn zero_imaginary_paulis(bloch: &BlochVector, p: u8) -> BlochVector {
    let mut out = bloch.clone();
    if p % 2 == 1 {
        return out;
    }
    for idx in 0..out.a.len() {
        if PauliString::from_index(out.n, idx).y_count() % 2 == 1 {
            out.a[idx] = 0.0;
            out.sigma[idx] = 0.0;
        }
    }
    out
}

/// `X_hw(theta) + X_ideal(theta*) - X_hw(theta*)`.
pub fn clifford_correct(hw: Estimate, hw_ref: Estimate, ideal_ref: f64) -> Estimate {
    Estimate {
        value: ideal_ref + (hw.value - hw_ref.value),
        sigma: hw.sigma.hypot(hw_ref.sigma),
    }
}

/// Entry-wise [`clifford_correct`] of a Bloch vector.
pub fn clifford_correct_bloch(
    hw: &BlochVector,
    hw_ref: &BlochVector,
    ideal_ref: &BlochVector,
) -> Result<BlochVector> {
    if hw.n != hw_ref.n || hw.n != ideal_ref.n {
        return Err(Error::Dimension("Bloch vectors of different sizes".into()));
    }
    let mut out = hw.clone();
    for i in 1..out.a.len() {
        let e = clifford_correct(
            Estimate::new(hw.a[i], hw.sigma[i]),
            Estimate::new(hw_ref.a[i], hw_ref.sigma[i]),
            ideal_ref.a[i],
        );
        out.a[i] = e.value;
        out.sigma[i] = e.sigma;
    }
    Ok(out)
}

/// Rescales the non-identity entries so that `Tr rho^2 = 1`.
pub fn purify(bloch: &BlochVector) -> Result<BlochVector> {
    let nsq = bloch.norm_sq();
    if nsq <= 0.0 {
        return Err(Error::DegenerateState);
    }
    let target = ((1usize << bloch.n) - 1) as f64;
    let f = (target / nsq).sqrt();
    let mut out = bloch.clone();
    out.a[0] = 1.0;
    out.sigma[0] = 0.0;
    for i in 1..out.a.len() {
        out.a[i] *= f;
        out.sigma[i] *= f;
    }
    Ok(out)
}

/// Mitigation stage toggles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationFlags {
    pub postselect: bool,
    pub roem: bool,
    pub zero_imaginary: bool,
    pub clifford: bool,
    pub purify: bool,
}

impl MitigationFlags {
    pub const RAW: Self =
        Self { postselect: false, roem: false, zero_imaginary: false, clifford: false, purify: false };
    pub const ROEM: Self = Self { roem: true, ..Self::RAW };
    pub const EM: Self =
        Self { postselect: true, roem: true, zero_imaginary: true, clifford: true, purify: true };

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "raw" => Ok(Self::RAW),
            "roem" => Ok(Self::ROEM),
            "em" => Ok(Self::EM),
            other => Err(Error::Invalid(format!("unknown mitigation label {other:?}"))),
        }
    }

    /// `raw`, `roem`, `em`, or `custom` for any other combination.
    pub fn label(&self) -> &'static str {
        if *self == Self::RAW {
            "raw"
        } else if *self == Self::ROEM {
            "roem"
        } else if *self == Self::EM {
            "em"
        } else {
            "custom"
        }
    }
}
