//! Active-space molecular integrals: FCIDUMP ingestion, frozen-core folding,
//! orbital rotations and Cholesky factorization of the electron repulsion
//! integrals.
//!
//! Two-electron integrals are stored in chemist ordering, `(pr|qs)`, as a flat
//! `m^4` array with 8-fold permutational symmetry completed on load.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const SYM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MolecularIntegrals {
    pub m: usize,
    pub n_up: usize,
    pub n_dn: usize,
    /// Scalar offset (nuclear repulsion plus any folded core energy), Hartree.
    pub e0: f64,
    pub h: DMatrix<f64>,
    eri: Vec<f64>,
}

impl MolecularIntegrals {
    /// Empty integrals (all coefficients zero) for `m` orbitals.
    pub fn zeros(m: usize, n_up: usize, n_dn: usize) -> Self {
        Self { m, n_up, n_dn, e0: 0.0, h: DMatrix::zeros(m, m), eri: vec![0.0; m.pow(4)] }
    }

    pub fn new(
        m: usize,
        n_up: usize,
        n_dn: usize,
        e0: f64,
        h: DMatrix<f64>,
        eri: Vec<f64>,
    ) -> Result<Self> {
        if h.nrows() != m || h.ncols() != m || eri.len() != m.pow(4) {
            return Err(Error::Dimension(format!(
                "expected {m}x{m} one-body and {} two-body entries",
                m.pow(4)
            )));
        }
        let ints = Self { m, n_up, n_dn, e0, h, eri };
        ints.validate()?;
        Ok(ints)
    }

    #[inline]
    fn idx(&self, p: usize, r: usize, q: usize, s: usize) -> usize {
        ((p * self.m + r) * self.m + q) * self.m + s
    }

    #[inline]
    pub fn eri(&self, p: usize, r: usize, q: usize, s: usize) -> f64 {
        self.eri[self.idx(p, r, q, s)]
    }

    pub fn eri_slice(&self) -> &[f64] {
        &self.eri
    }

    /// Sets `(pr|qs)` and all of its 8-fold symmetric images.
    pub fn set_eri(&mut self, p: usize, r: usize, q: usize, s: usize, v: f64) {
        for (a, b, c, d) in eight_fold(p, r, q, s) {
            let i = self.idx(a, b, c, d);
            self.eri[i] = v;
        }
    }

    pub fn n_electrons(&self) -> usize {
        self.n_up + self.n_dn
    }

    /// Checks the structural invariants: symmetric `h`, 8-fold symmetric
    /// `eri`, finite values and admissible electron counts.
    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(Error::Data("orbital count must be at least 1".into()));
        }
        if self.n_up > m || self.n_dn > m {
            return Err(Error::Data(format!(
                "electron counts ({}, {}) exceed orbital count {m}",
                self.n_up, self.n_dn
            )));
        }
        if !self.e0.is_finite() || self.h.iter().chain(self.eri.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite integral value".into()));
        }
        for p in 0..m {
            for r in 0..m {
                if (self.h[(p, r)] - self.h[(r, p)]).abs() > SYM_TOL {
                    return Err(Error::Data(format!("h not symmetric at ({p},{r})")));
                }
            }
        }
        for p in 0..m {
            for r in 0..m {
                for q in 0..m {
                    for s in 0..m {
                        let v = self.eri(p, r, q, s);
                        for (a, b, c, d) in eight_fold(p, r, q, s) {
                            if (self.eri(a, b, c, d) - v).abs() > SYM_TOL {
                                return Err(Error::Data(format!(
                                    "eri lacks 8-fold symmetry at ({p}{r}|{q}{s})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Restricted closed-shell determinant energy with the lowest `n_up`/`n_dn`
    /// orbitals occupied, including `e0`.
    pub fn reference_energy(&self) -> f64 {
        let mut e = self.e0;
        for (n, other) in [(self.n_up, self.n_dn), (self.n_dn, self.n_up)] {
            for i in 0..n {
                e += self.h[(i, i)];
                for j in 0..n {
                    e += 0.5 * (self.eri(i, i, j, j) - self.eri(i, j, j, i));
                }
                for j in 0..other {
                    e += 0.5 * self.eri(i, i, j, j);
                }
            }
        }
        e
    }

    /// Applies the orthogonal orbital transformation `psi'_m = sum_l R_ml psi_l`
    /// to every coefficient: `h -> R h R^T` and the matching 4-index transform.
    pub fn transform(&self, rot: &DMatrix<f64>) -> Result<Self> {
        let m = self.m;
        if rot.nrows() != m || rot.ncols() != m {
            return Err(Error::Dimension(format!("rotation must be {m}x{m}")));
        }
        let h = rot * &self.h * rot.transpose();
        let eri = transform_eri(&self.eri, m, rot);
        let mut out = Self { m, n_up: self.n_up, n_dn: self.n_dn, e0: self.e0, h, eri };
        // remove rounding asymmetry from the transform
        out.h = (&out.h + out.h.transpose()) * 0.5;
        Ok(out)
    }
}

fn eight_fold(p: usize, r: usize, q: usize, s: usize) -> [(usize, usize, usize, usize); 8] {
    [
        (p, r, q, s),
        (r, p, q, s),
        (p, r, s, q),
        (r, p, s, q),
        (q, s, p, r),
        (s, q, p, r),
        (q, s, r, p),
        (s, q, r, p),
    ]
}

fn transform_eri(eri: &[f64], m: usize, rot: &DMatrix<f64>) -> Vec<f64> {
    // four successive quarter transformations, each contracting one index
    let mut cur = eri.to_vec();
    let mut next = vec![0.0; eri.len()];
    for axis in 0..4 {
        next.iter_mut().for_each(|v| *v = 0.0);
        let stride = m.pow(3 - axis as u32);
        for idx in 0..cur.len() {
            let v = cur[idx];
            if v == 0.0 {
                continue;
            }
            let old = (idx / stride) % m;
            let base = idx - old * stride;
            for new in 0..m {
                let c = rot[(new, old)];
                if c != 0.0 {
                    next[base + new * stride] += c * v;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Givens rotation on the (`homo`, `lumo`) orbital pair embedded in the identity.
pub fn givens(m: usize, phi: f64, homo: usize, lumo: usize) -> DMatrix<f64> {
    let mut r = DMatrix::identity(m, m);
    let (s, c) = phi.sin_cos();
    r[(homo, homo)] = c;
    r[(homo, lumo)] = -s;
    r[(lumo, homo)] = s;
    r[(lumo, lumo)] = c;
    r
}

/// Rotates the HOMO/LUMO pair by `phi`; `e0` is unchanged.
pub fn rotate_homo_lumo(
    ints: &MolecularIntegrals,
    phi: f64,
    homo: usize,
    lumo: usize,
) -> Result<MolecularIntegrals> {
    if homo >= ints.m || lumo >= ints.m {
        return Err(Error::Invalid(format!(
            "orbital indices ({homo}, {lumo}) out of range for m = {}",
            ints.m
        )));
    }
    if homo == lumo {
        return Err(Error::Invalid("HOMO and LUMO indices must differ".into()));
    }
    ints.transform(&givens(ints.m, phi, homo, lumo))
}

/// Folds the lowest `n_core` doubly occupied orbitals into `e0` and `h`.
pub fn freeze_core(full: &MolecularIntegrals, n_core: usize) -> Result<MolecularIntegrals> {
    let core: Vec<usize> = (0..n_core).collect();
    freeze_orbitals(full, &core)
}

/// Frozen-core reduction over an explicit list of core orbitals. The active
/// orbitals keep their relative order.
pub fn freeze_orbitals(full: &MolecularIntegrals, core: &[usize]) -> Result<MolecularIntegrals> {
    let m = full.m;
    let n_core = core.len();
    if n_core >= m {
        return Err(Error::Invalid(format!("cannot freeze {n_core} of {m} orbitals")));
    }
    if core.iter().any(|&i| i >= m) {
        return Err(Error::Invalid("core orbital index out of range".into()));
    }
    let mut seen = vec![false; m];
    for &i in core {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid(format!("core orbital {i} listed twice")));
        }
    }
    if full.n_up < n_core || full.n_dn < n_core {
        return Err(Error::Invalid("electron counts would become negative".into()));
    }
    let active: Vec<usize> = (0..m).filter(|i| !seen[*i]).collect();
    let ma = active.len();

    let mut e0 = full.e0;
    for &i in core {
        e0 += 2.0 * full.h[(i, i)];
        for &j in core {
            e0 += 2.0 * full.eri(i, i, j, j) - full.eri(i, j, j, i);
        }
    }
    let mut h = DMatrix::zeros(ma, ma);
    for (a, &p) in active.iter().enumerate() {
        for (b, &r) in active.iter().enumerate() {
            let mut v = full.h[(p, r)];
            for &i in core {
                v += 2.0 * full.eri(p, r, i, i) - full.eri(p, i, i, r);
            }
            h[(a, b)] = v;
        }
    }
    let mut eri = vec![0.0; ma.pow(4)];
    for (a, &p) in active.iter().enumerate() {
        for (b, &r) in active.iter().enumerate() {
            for (c, &q) in active.iter().enumerate() {
                for (d, &s) in active.iter().enumerate() {
                    eri[((a * ma + b) * ma + c) * ma + d] = full.eri(p, r, q, s);
                }
            }
        }
    }
    Ok(MolecularIntegrals {
        m: ma,
        n_up: full.n_up - n_core,
        n_dn: full.n_dn - n_core,
        e0,
        h,
        eri,
    })
}

/// Keeps the first `n` orbitals and drops the rest.
pub fn truncate_orbitals(ints: &MolecularIntegrals, n: usize) -> Result<MolecularIntegrals> {
    if n == 0 || n > ints.m {
        return Err(Error::Invalid(format!("cannot keep {n} of {} orbitals", ints.m)));
    }
    if ints.n_up > n || ints.n_dn > n {
        return Err(Error::Invalid(format!("{} + {} electrons do not fit in {n} orbitals", ints.n_up, ints.n_dn)));
    }
    let mut out = MolecularIntegrals::zeros(n, ints.n_up, ints.n_dn);
    out.e0 = ints.e0;
    out.h = ints.h.view((0, 0), (n, n)).into_owned();
    for p in 0..n {
        for r in 0..n {
            for q in 0..n {
                for s in 0..n {
                    out.set_eri(p, r, q, s, ints.eri(p, r, q, s));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CholeskyFactors {
    /// Symmetric `m x m` factors with `(pr|qs) = sum_g L^g_pr L^g_qs`.
    pub factors: Vec<DMatrix<f64>>,
}

impl CholeskyFactors {
    pub fn gamma_count(&self) -> usize {
        self.factors.len()
    }

    pub fn m(&self) -> Option<usize> {
        self.factors.first().map(|f| f.nrows())
    }

    /// Reconstructed `(pr|qs)` from the first `count` factors.
    pub fn reconstruct(&self, m: usize, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; m.pow(4)];
        for l in self.factors.iter().take(count) {
            for p in 0..m {
                for r in 0..m {
                    let a = l[(p, r)];
                    if a == 0.0 {
                        continue;
                    }
                    for q in 0..m {
                        for s in 0..m {
                            out[((p * m + r) * m + q) * m + s] += a * l[(q, s)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Same orbital rotation as [`MolecularIntegrals::transform`], applied to
    /// each factor: `L -> R L R^T`.
    pub fn transform(&self, rot: &DMatrix<f64>) -> Self {
        Self { factors: self.factors.iter().map(|l| rot * l * rot.transpose()).collect() }
    }
}

/// Default stopping tolerance of the pivoted factorization, Hartree.
pub const CHOLESKY_TOL: f64 = 1e-10;

/// Fully pivoted incomplete Cholesky factorization of the `m^2 x m^2`
/// supermatrix `V[(pr),(qs)] = (pr|qs)`, stopped once every residual diagonal
/// falls below `tol`.
pub fn cholesky_eri(ints: &MolecularIntegrals, tol: f64) -> Result<CholeskyFactors> {
    let m = ints.m;
    let n = m * m;
    let v = DMatrix::from_fn(n, n, |a, b| ints.eri[a * n + b]);

    let min_eig = SymmetricEigen::new(v.clone()).eigenvalues.min();
    if min_eig < -1e-8 {
        return Err(Error::Data(format!(
            "eri supermatrix is not positive semidefinite (eigenvalue {min_eig:.3e})"
        )));
    }

    let mut diag: Vec<f64> = (0..n).map(|a| v[(a, a)]).collect();
    let mut vecs: Vec<Vec<f64>> = Vec::new();
    while vecs.len() < n {
        let (piv, &dmax) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty diagonal");
        if dmax <= tol {
            break;
        }
        let root = dmax.sqrt();
        let mut col: Vec<f64> = (0..n).map(|a| v[(a, piv)]).collect();
        for prev in &vecs {
            let w = prev[piv];
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= w * p;
            }
        }
        col.iter_mut().for_each(|c| *c /= root);
        for (d, c) in diag.iter_mut().zip(&col) {
            *d -= c * c;
            if *d < -1e-8 {
                return Err(Error::Data("negative residual diagonal in Cholesky step".into()));
            }
        }
        diag[piv] = 0.0;
        vecs.push(col);
    }

    let factors = vecs
        .into_iter()
        .map(|c| {
            let l = DMatrix::from_fn(m, m, |p, r| c[p * m + r]);
            (&l + l.transpose()) * 0.5
        })
        .collect();
    Ok(CholeskyFactors { factors })
}

// ---------------------------------------------------------------------------
// FCIDUMP

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .replace(['D', 'd'], "E")
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad number {tok:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite value {tok:?}") });
    }
    Ok(v)
}

/// Parses an FCIDUMP stream (Fortran namelist header, then `value i j k l`
/// records with 1-based indices).
pub fn parse_fcidump(text: &str) -> Result<MolecularIntegrals> {
    let mut lines = text.lines().enumerate();
    let mut header = String::new();
    let mut body_start = None;
    for (no, line) in lines.by_ref() {
        let trimmed = line.trim();
        let upper = trimmed.to_ascii_uppercase();
        header.push_str(trimmed);
        header.push(' ');
        if upper.ends_with("&END") || upper == "/" || upper.ends_with(" /") || upper.ends_with(",/") {
            body_start = Some(no + 1);
            break;
        }
    }
    let Some(body_start) = body_start else {
        return Err(Error::Parse { line: 1, msg: "unterminated FCIDUMP header".into() });
    };

    let fields = parse_namelist(&header);
    let get = |key: &str| -> Result<i64> {
        let raw = fields
            .get(key)
            .and_then(|v| v.first())
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("header missing {key}") })?;
        raw.parse::<i64>()
            .map_err(|_| Error::Parse { line: 1, msg: format!("bad {key} value {raw:?}") })
    };
    let norb = get("NORB")?;
    let nelec = get("NELEC")?;
    let ms2 = fields.get("MS2").and_then(|v| v.first()).map_or(Ok(0), |s| {
        s.parse::<i64>().map_err(|_| Error::Parse { line: 1, msg: "bad MS2".into() })
    })?;
    if norb < 1 || nelec < 0 || (nelec + ms2) % 2 != 0 || ms2.abs() > nelec {
        return Err(Error::Parse { line: 1, msg: "inconsistent NORB/NELEC/MS2".into() });
    }
    let m = norb as usize;
    let n_up = ((nelec + ms2) / 2) as usize;
    let n_dn = ((nelec - ms2) / 2) as usize;
    if n_up > m || n_dn > m {
        return Err(Error::Parse { line: 1, msg: "more electrons per spin than orbitals".into() });
    }

    let mut ints = MolecularIntegrals::zeros(m, n_up, n_dn);
    let mut seen: HashMap<(usize, usize, usize, usize), f64> = HashMap::new();
    let mut seen_e0: Option<f64> = None;
    for (no, line) in text.lines().enumerate().skip(body_start) {
        let line_no = no + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 5 {
            return Err(Error::Parse { line: line_no, msg: "expected `value i j k l`".into() });
        }
        let v = parse_value(toks[0], line_no)?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&toks[1..]) {
            let i: i64 = tok
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad index {tok:?}") })?;
            if i < 0 || i > norb {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("index {i} outside [1, {norb}]"),
                });
            }
            *slot = i as usize;
        }
        let [i, j, k, l] = idx;
        let conflict = |old: f64| (old - v).abs() > SYM_TOL;
        match (i, j, k, l) {
            (0, 0, 0, 0) => {
                if seen_e0.is_some_and(conflict) {
                    return Err(Error::Parse { line: line_no, msg: "conflicting core energy".into() });
                }
                seen_e0 = Some(v);
                ints.e0 = v;
            }
            (i, j, 0, 0) if i > 0 && j > 0 => {
                let key = (i.max(j), i.min(j), 0, 0);
                if seen.get(&key).copied().is_some_and(conflict) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("conflicting duplicate h({i},{j})"),
                    });
                }
                seen.insert(key, v);
                ints.h[(i - 1, j - 1)] = v;
                ints.h[(j - 1, i - 1)] = v;
            }
            (i, j, k, l) if i > 0 && j > 0 && k > 0 && l > 0 => {
                let key = canonical(i, j, k, l);
                if seen.get(&key).copied().is_some_and(conflict) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("conflicting duplicate ({i}{j}|{k}{l})"),
                    });
                }
                seen.insert(key, v);
                ints.set_eri(i - 1, j - 1, k - 1, l - 1, v);
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("invalid index pattern {i} {j} {k} {l}"),
                });
            }
        }
    }
    Ok(ints)
}

fn canonical(i: usize, j: usize, k: usize, l: usize) -> (usize, usize, usize, usize) {
    let (a, b) = (i.max(j), i.min(j));
    let (c, d) = (k.max(l), k.min(l));
    if (a, b) >= (c, d) {
        (a, b, c, d)
    } else {
        (c, d, a, b)
    }
}

fn parse_namelist(header: &str) -> HashMap<String, Vec<String>> {
    let body = header
        .trim()
        .trim_start_matches(|c: char| c == '&' || c.is_ascii_alphabetic())
        .replace("&END", "")
        .replace("&end", "");
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    let mut current: Option<String> = None;
    for tok in body.split([',', ' ', '\t']).filter(|t| !t.is_empty() && *t != "/") {
        if let Some((k, v)) = tok.split_once('=') {
            let key = k.trim().to_ascii_uppercase();
            let entry = out.entry(key.clone()).or_default();
            if !v.trim().is_empty() {
                entry.push(v.trim().to_string());
            }
            current = Some(key);
        } else if let Some(key) = &current {
            out.entry(key.clone()).or_default().push(tok.trim().to_string());
        }
    }
    out
}

/// Emits an FCIDUMP with unique two-body entries, one-body entries (`i >= j`)
/// and the scalar offset; values use the shortest round-trip representation.
pub fn write_fcidump(ints: &MolecularIntegrals) -> String {
    let m = ints.m;
    let mut out = String::new();
    let orbsym = vec!["1"; m].join(",");
    let _ = writeln!(
        out,
        " &FCI NORB={m},NELEC={},MS2={},\n  ORBSYM={orbsym},\n  ISYM=1,\n &END",
        ints.n_up + ints.n_dn,
        ints.n_up as i64 - ints.n_dn as i64
    );
    for i in 0..m {
        for j in 0..=i {
            for k in 0..m {
                for l in 0..=k {
                    if i * (i + 1) / 2 + j < k * (k + 1) / 2 + l {
                        continue;
                    }
                    let v = ints.eri(i, j, k, l);
                    if v != 0.0 {
                        let _ = writeln!(out, "{v:e} {} {} {} {}", i + 1, j + 1, k + 1, l + 1);
                    }
                }
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = ints.h[(i, j)];
            if v != 0.0 {
                let _ = writeln!(out, "{v:e} {} {} 0 0", i + 1, j + 1);
            }
        }
    }
    let _ = writeln!(out, "{:e} 0 0 0 0", ints.e0);
    out
}

pub fn read_fcidump(path: &std::path::Path) -> Result<MolecularIntegrals> {
    parse_fcidump(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random integrals with a physically shaped spectrum: increasing diagonal
    /// one-body energies and a PSD electron repulsion built from random
    /// symmetric factors.
    pub fn random_integrals(m: usize, n_up: usize, n_dn: usize, seed: u64) -> MolecularIntegrals {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = DMatrix::zeros(m, m);
        for p in 0..m {
            h[(p, p)] = -2.0 + 0.6 * p as f64 + 0.1 * rng.random::<f64>();
            for r in 0..p {
                let v = 0.2 * (rng.random::<f64>() - 0.5);
                h[(p, r)] = v;
                h[(r, p)] = v;
            }
        }
        let mut ints = MolecularIntegrals::zeros(m, n_up, n_dn);
        ints.h = h;
        ints.e0 = rng.random::<f64>();
        let n_fac = m + 2;
        for g in 0..n_fac {
            let mut l = DMatrix::zeros(m, m);
            for p in 0..m {
                for r in 0..=p {
                    let scale = if g == 0 { 0.5 } else { 0.15 };
                    let v = scale * (rng.random::<f64>() - 0.3);
                    l[(p, r)] = v;
                    l[(r, p)] = v;
                }
            }
            for p in 0..m {
                for r in 0..m {
                    for q in 0..m {
                        for s in 0..m {
                            let i = ints.idx(p, r, q, s);
                            ints.eri[i] += l[(p, r)] * l[(q, s)];
                        }
                    }
                }
            }
        }
        ints
    }
}

#[cfg(test)]
mod tests {
    use super::testing::random_integrals;
    use super::*;

    const H2: &str = " &FCI NORB=2,NELEC=2,MS2=0,\n  ORBSYM=1,1,\n  ISYM=1,\n &END\n\
        0.5 1 1 1 1\n -1.25 1 1 0 0\n -0.47 2 2 0 0\n 0.7 0 0 0 0\n";

    #[test]
    fn header_echo() {
        let ints = parse_fcidump(H2).unwrap();
        assert_eq!(ints.m, 2);
        assert_eq!((ints.n_up, ints.n_dn), (1, 1));
        assert_eq!(ints.e0, 0.7);
    }

    #[test]
    fn single_entry_symmetry() {
        let ints = parse_fcidump(H2).unwrap();
        assert_eq!(ints.eri(0, 0, 0, 0), 0.5);
        let nonzero = ints.eri_slice().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn round_trip_random_instance() {
        let ints = random_integrals(4, 2, 2, 11);
        let back = parse_fcidump(&write_fcidump(&ints)).unwrap();
        assert_eq!(back.m, 4);
        assert!((back.e0 - ints.e0).abs() < 1e-12);
        assert!((&back.h - &ints.h).abs().max() < 1e-12);
        for (a, b) in back.eri_slice().iter().zip(ints.eri_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_idx = H2.replace("0.5 1 1 1 1", "0.5 1 3 1 1");
        match parse_fcidump(&bad_idx) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        let dup = format!("{H2}0.6 1 1 1 1\n");
        assert!(matches!(parse_fcidump(&dup), Err(Error::Parse { line: 9, .. })));
        let nan = H2.replace("0.5 1 1 1 1", "NaN 1 1 1 1");
        assert!(matches!(parse_fcidump(&nan), Err(Error::Parse { .. })));
        let inf = H2.replace("0.5 1 1 1 1", "inf 1 1 1 1");
        assert!(parse_fcidump(&inf).is_err());
        assert!(parse_fcidump("&FCI NORB=2,\n").is_err());
        assert!(parse_fcidump("&FCI NELEC=2 &END\n").is_err());
    }

    #[test]
    fn fortran_exponents_and_slash_terminator() {
        let text = "&FCI NORB=1, NELEC=2, MS2=0 /\n 1.5D-01 1 1 1 1\n-1.0d0 1 1 0 0\n";
        let ints = parse_fcidump(text).unwrap();
        assert!((ints.eri(0, 0, 0, 0) - 0.15).abs() < 1e-15);
        assert_eq!(ints.h[(0, 0)], -1.0);
    }

    #[test]
    fn freeze_core_one_body_limit() {
        let mut ints = random_integrals(3, 2, 2, 3);
        ints.eri.iter_mut().for_each(|v| *v = 0.0);
        let red = freeze_core(&ints, 1).unwrap();
        assert!((red.e0 - (ints.e0 + 2.0 * ints.h[(0, 0)])).abs() < 1e-14);
        assert_eq!(red.h, ints.h.view((1, 1), (2, 2)).into_owned());
        assert_eq!((red.n_up, red.n_dn, red.m), (1, 1, 2));
    }

    #[test]
    fn freeze_core_zero_is_identity() {
        let ints = random_integrals(3, 1, 1, 4);
        assert_eq!(freeze_core(&ints, 0).unwrap(), ints);
    }

    #[test]
    fn freeze_core_errors() {
        let ints = random_integrals(3, 1, 1, 4);
        assert!(freeze_core(&ints, 3).is_err());
        assert!(freeze_core(&ints, 2).is_err());
        assert!(freeze_orbitals(&ints, &[1, 1]).is_err());
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let ints = random_integrals(3, 1, 1, 5);
        let same = rotate_homo_lumo(&ints, 0.0, 0, 1).unwrap();
        assert!((&same.h - &ints.h).abs().max() < 1e-14);
        let q = rotate_homo_lumo(&ints, std::f64::consts::FRAC_PI_2, 0, 1).unwrap();
        assert!((q.h[(0, 0)] - ints.h[(1, 1)]).abs() < 1e-12);
        assert!((q.h[(1, 1)] - ints.h[(0, 0)]).abs() < 1e-12);
        assert!((q.h[(0, 2)].abs() - ints.h[(1, 2)].abs()).abs() < 1e-12);
        assert!((q.eri(0, 0, 0, 0) - ints.eri(1, 1, 1, 1)).abs() < 1e-12);
        assert_eq!(q.e0, ints.e0);
        q.validate().unwrap();
        assert!(rotate_homo_lumo(&ints, 0.1, 0, 0).is_err());
        assert!(rotate_homo_lumo(&ints, 0.1, 0, 3).is_err());
    }

    #[test]
    fn cholesky_zero_and_rank_one() {
        let zero = MolecularIntegrals::zeros(3, 1, 1);
        assert_eq!(cholesky_eri(&zero, CHOLESKY_TOL).unwrap().gamma_count(), 0);

        let mut ints = MolecularIntegrals::zeros(3, 1, 1);
        for p in 0..3 {
            for q in 0..3 {
                let i = ints.idx(p, p, q, q);
                ints.eri[i] = 1.0;
            }
        }
        let chol = cholesky_eri(&ints, CHOLESKY_TOL).unwrap();
        assert_eq!(chol.gamma_count(), 1);
        let l = &chol.factors[0];
        let sign = l[(0, 0)].signum();
        assert!((l * sign - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut ints = MolecularIntegrals::zeros(2, 1, 1);
        ints.set_eri(0, 0, 1, 1, 1.0);
        assert!(matches!(cholesky_eri(&ints, CHOLESKY_TOL), Err(Error::Data(_))));
    }

    #[test]
    fn cholesky_reconstruction_and_monotonicity() {
        let ints = random_integrals(4, 2, 2, 8);
        let chol = cholesky_eri(&ints, 1e-10).unwrap();
        assert!(chol.gamma_count() <= 16);
        let mut prev = f64::INFINITY;
        for count in 0..=chol.gamma_count() {
            let rec = chol.reconstruct(4, count);
            let err = rec
                .iter()
                .zip(ints.eri_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= prev + 1e-14, "error increased at {count}");
            prev = err;
        }
        assert!(prev <= 1e-10);
        for l in &chol.factors {
            assert!((l - l.transpose()).abs().max() < 1e-15);
        }
    }
}
