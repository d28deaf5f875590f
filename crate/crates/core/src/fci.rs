//! Full configuration interaction in a fixed `(N_up, N_dn)` sector.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fermion::{apply_hop, apply_ladder_string};
use crate::integrals::MolecularIntegrals;
use crate::tensor_op::modified_one_body;

/// Sector size accepted by [`fci_solve`].
pub const MAX_SECTOR: usize = 200_000;
/// Dense eigensolver ceiling.
pub const MAX_DENSE_SECTOR: usize = 4_000;

const DEGENERACY_TOL: f64 = 1e-8;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Strings of `n` set bits within `m`, ascending.
pub fn strings(m: usize, n: usize) -> Vec<usize> {
    (0..1usize << m).filter(|b| b.count_ones() as usize == n).collect()
}

/// Determinants as joint indices `up | dn << m`, up string fastest.
pub fn determinants(m: usize, n_up: usize, n_dn: usize) -> Vec<usize> {
    let ups = strings(m, n_up);
    let dns = strings(m, n_dn);
    dns.iter().flat_map(|&d| ups.iter().map(move |&u| u | d << m)).collect()
}

/// `E_pr = sum_sigma a_p,sigma^+ a_r,sigma` on a joint determinant.
fn apply_e(det: usize, m: usize, p: usize, r: usize) -> [Option<(f64, usize)>; 2] {
    let mask = (1usize << m) - 1;
    let (u, d) = (det & mask, det >> m);
    [
        apply_hop(u, p, r).map(|(s, u2)| (s, u2 | d << m)),
        apply_hop(d, p, r).map(|(s, d2)| (s, u | d2 << m)),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct FCIResult {
    pub m: usize,
    pub n_up: usize,
    pub n_dn: usize,
    pub e0: f64,
    pub determinants: Vec<usize>,
    /// Total energies including `e0`, ascending.
    pub energies: Vec<f64>,
    /// Column `a` holds state `a` in the determinant basis.
    #[serde(skip)]
    pub vectors: DMatrix<f64>,
    pub s2: Vec<f64>,
    #[serde(skip)]
    index: HashMap<usize, usize>,
}

/// Sparse columns of `H - e0` on the determinant list.
fn hamiltonian_columns(ints: &MolecularIntegrals, dets: &[usize], index: &HashMap<usize, usize>) -> Vec<Vec<(usize, f64)>> {
    let m = ints.m;
    let hm = modified_one_body(ints);
    let eri = ints.eri_slice();
    dets.iter()
        .map(|&col| {
            let mut acc: HashMap<usize, f64> = HashMap::new();
            for p in 0..m {
                for r in 0..m {
                    let v = hm[(p, r)];
                    if v != 0.0 {
                        for (s, row) in apply_e(col, m, p, r).into_iter().flatten() {
                            *acc.entry(row).or_default() += v * s;
                        }
                    }
                }
            }
            for q in 0..m {
                for s in 0..m {
                    for (s1, mid) in apply_e(col, m, q, s).into_iter().flatten() {
                        for p in 0..m {
                            for r in 0..m {
                                let v = eri[((p * m + r) * m + q) * m + s];
                                if v == 0.0 {
                                    continue;
                                }
                                for (s2, row) in apply_e(mid, m, p, r).into_iter().flatten() {
                                    *acc.entry(row).or_default() += 0.5 * v * s1 * s2;
                                }
                            }
                        }
                    }
                }
            }
            let mut out: Vec<(usize, f64)> = acc.into_iter().map(|(row, v)| (index[&row], v)).collect();
            out.sort_unstable_by_key(|e| e.0);
            out
        })
        .collect()
}

fn columns_to_dense(cols: &[Vec<(usize, f64)>], shift: f64) -> DMatrix<f64> {
    let n = cols.len();
    let mut h = DMatrix::zeros(n, n);
    for (c, col) in cols.iter().enumerate() {
        for &(r, v) in col {
            h[(r, c)] += v;
        }
        h[(c, c)] += shift;
    }
    h
}

/// Dense `H` (including `e0`) on the sector determinants.
pub fn sector_hamiltonian(ints: &MolecularIntegrals) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let dets = check_sector(ints)?;
    let index: HashMap<usize, usize> = dets.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let cols = hamiltonian_columns(ints, &dets, &index);
    Ok((dets, columns_to_dense(&cols, ints.e0)))
}

/// Dense `S^2 = S_- S_+ + S_z (S_z + 1)` on the sector determinants.
pub fn sector_s2(m: usize, dets: &[usize]) -> DMatrix<f64> {
    let index: HashMap<usize, usize> = dets.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let n = dets.len();
    let mut s2 = DMatrix::zeros(n, n);
    for (c, &col) in dets.iter().enumerate() {
        let nu = (col & ((1 << m) - 1)).count_ones() as f64;
        let nd = (col >> m).count_ones() as f64;
        let sz = 0.5 * (nu - nd);
        s2[(c, c)] += sz * (sz + 1.0);
        for p in 0..m {
            for q in 0..m {
                let ops = [(p + m, true), (p, false), (q, true), (q + m, false)];
                if let Some((s, row)) = apply_ladder_string(col, &ops) {
                    s2[(index[&row], c)] += s;
                }
            }
        }
    }
    s2
}

fn check_sector(ints: &MolecularIntegrals) -> Result<Vec<usize>> {
    let dim = binomial(ints.m, ints.n_up) * binomial(ints.m, ints.n_dn);
    if dim > MAX_SECTOR || dim > MAX_DENSE_SECTOR || 2 * ints.m > usize::BITS as usize - 1 {
        return Err(Error::SectorTooLarge(dim));
    }
    if dim == 0 {
        return Err(Error::Invalid("empty determinant sector".into()));
    }
    Ok(determinants(ints.m, ints.n_up, ints.n_dn))
}

/// Basis of `span(v)` with deterministic orientation: Gram-Schmidt on the
/// projected determinant unit vectors taken in index order.
fn canonical_basis(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = v.shape();
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(d);
    for i in 0..n {
        if kept.len() == d {
            break;
        }
        let mut x = v * v.row(i).transpose();
        for k in &kept {
            let c = k.dot(&x);
            x -= k * c;
        }
        let nrm = x.norm();
        if nrm > 1e-6 {
            kept.push(x / nrm);
        }
    }
    DMatrix::from_columns(&kept)
}

/// Lowest `n_roots` eigenstates. Degenerate levels are split by `S^2`, then
/// oriented by [`canonical_basis`].
pub fn fci_solve(ints: &MolecularIntegrals, n_roots: usize) -> Result<FCIResult> {
    ints.validate()?;
    let (dets, h) = sector_hamiltonian(ints)?;
    let s2op = sector_s2(ints.m, &dets);
    let n = dets.len();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut energies = Vec::with_capacity(n);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let e = eig.eigenvalues[order[i]];
        let mut j = i + 1;
        while j < n && eig.eigenvalues[order[j]] - e < DEGENERACY_TOL * e.abs().max(1.0) {
            j += 1;
        }
        let block = DMatrix::from_columns(&order[i..j].iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
        let es: Vec<f64> = order[i..j].iter().map(|&k| eig.eigenvalues[k]).collect();
        let proj = block.transpose() * &s2op * &block;
        let se = SymmetricEigen::new(proj);
        let mut so: Vec<usize> = (0..j - i).collect();
        so.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let mut a = 0;
        while a < so.len() {
            let sv = se.eigenvalues[so[a]];
            let mut b = a + 1;
            while b < so.len() && se.eigenvalues[so[b]] - sv < 1e-6 {
                b += 1;
            }
            let sub = DMatrix::from_columns(&so[a..b].iter().map(|&k| &block * se.eigenvectors.column(k)).collect::<Vec<_>>());
            let canon = canonical_basis(&sub);
            for c in canon.column_iter() {
                let c = c.into_owned();
                let hv = (c.transpose() * &s2op * &c)[(0, 0)];
                s2.push(hv);
                cols.push(c);
                energies.push(0.0);
            }
            a = b;
        }
        // energies inside a degenerate group are equal to tolerance; keep them ascending
        let start = energies.len() - (j - i);
        for (slot, e) in energies[start..].iter_mut().zip(es) {
            *slot = e;
        }
        i = j;
    }
    let keep = n_roots.clamp(1, n);
    cols.truncate(keep);
    energies.truncate(keep);
    s2.truncate(keep);
    let vectors = DMatrix::from_columns(&cols);
    let index = dets.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    Ok(FCIResult { m: ints.m, n_up: ints.n_up, n_dn: ints.n_dn, e0: ints.e0, determinants: dets, energies, vectors, s2, index })
}

impl FCIResult {
    pub fn n_states(&self) -> usize {
        self.energies.len()
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn state(&self, a: usize) -> DVector<f64> {
        self.vectors.column(a).into_owned()
    }

    /// Amplitude of state `a` on the joint determinant `det`.
    pub fn amplitude(&self, a: usize, det: usize) -> f64 {
        self.index.get(&det).map_or(0.0, |&i| self.vectors[(i, a)])
    }

    /// Amplitudes of state `a` on the full `2^(2m)` joint space.
    pub fn full_vector(&self, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; 1usize << (2 * self.m)];
        for (i, &d) in self.determinants.iter().enumerate() {
            out[d] = self.vectors[(i, a)];
        }
        out
    }

    /// Spin-summed `rho_pr = <a| sum_sigma a_p^+ a_r |b>`.
    pub fn rdm(&self, a: usize, b: usize) -> DMatrix<f64> {
        let m = self.m;
        let mut rho = DMatrix::zeros(m, m);
        for (ci, &col) in self.determinants.iter().enumerate() {
            let vb = self.vectors[(ci, b)];
            if vb == 0.0 {
                continue;
            }
            for p in 0..m {
                for r in 0..m {
                    for (s, row) in apply_e(col, m, p, r).into_iter().flatten() {
                        rho[(p, r)] += self.vectors[(self.index[&row], a)] * s * vb;
                    }
                }
            }
        }
        rho
    }

    /// States whose `S^2` is within `tol` of `s(s+1)`.
    pub fn sector(&self, s: f64, tol: f64) -> Vec<usize> {
        (0..self.n_states()).filter(|&a| (self.s2[a] - s * (s + 1.0)).abs() < tol).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrals::testing::random_integrals;
    use crate::integrals::{cholesky_eri, rotate_homo_lumo, CHOLESKY_TOL};
    use crate::tensor_op::{build_hamiltonian_tensor, build_s2_tensor};

    fn hubbard(t: f64, u: f64) -> MolecularIntegrals {
        let mut ints = MolecularIntegrals::zeros(2, 1, 1);
        ints.h[(0, 1)] = -t;
        ints.h[(1, 0)] = -t;
        ints.set_eri(0, 0, 0, 0, u);
        ints.set_eri(1, 1, 1, 1, u);
        ints
    }

    #[test]
    fn one_orbital_pair() {
        let mut ints = MolecularIntegrals::zeros(1, 1, 1);
        ints.e0 = 0.3;
        ints.h[(0, 0)] = -1.1;
        ints.set_eri(0, 0, 0, 0, 0.7);
        let r = fci_solve(&ints, 1).unwrap();
        assert!((r.ground_energy() - (0.3 - 2.2 + 0.7)).abs() < 1e-14);
    }

    #[test]
    fn hubbard_dimer_closed_form() {
        for (t, u) in [(1.0, 0.0), (1.0, 2.0), (0.5, 4.0), (1.3, 0.7)] {
            let r = fci_solve(&hubbard(t, u), 4).unwrap();
            let want = 0.5 * (u - (u * u + 16.0 * t * t).sqrt());
            assert!((r.ground_energy() - want).abs() < 1e-12);
            assert!(r.s2[0].abs() < 1e-9);
            // remaining levels: triplet at 0, ionic singlets at U and (U + sqrt(U^2 + 16 t^2)) / 2
            let mut rest = vec![0.0, u, 0.5 * (u + (u * u + 16.0 * t * t).sqrt())];
            rest.sort_by(f64::total_cmp);
            for (e, w) in r.energies[1..].iter().zip(&rest) {
                assert!((e - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_jordan_wigner_dense_matrix() {
        for (m, nu, nd, seed) in [(2, 1, 1, 1), (3, 1, 1, 2), (3, 2, 1, 3), (3, 2, 2, 4)] {
            let ints = random_integrals(m, nu, nd, seed);
            let chol = cholesky_eri(&ints, CHOLESKY_TOL).unwrap();
            let dense = build_hamiltonian_tensor(&ints, &chol).unwrap().dense();
            let dim = 1usize << (2 * m);
            let (dets, h) = sector_hamiltonian(&ints).unwrap();
            for (i, &di) in dets.iter().enumerate() {
                for (j, &dj) in dets.iter().enumerate() {
                    let want = dense[di * dim + dj].re + if i == j { ints.e0 } else { 0.0 };
                    assert!((h[(i, j)] - want).abs() < 1e-10);
                }
            }
            let s2s = sector_s2(m, &dets);
            // the tensor form of S^2 holds on S_z = 0 only
            if nu == nd {
                let s2 = build_s2_tensor(m).unwrap().dense();
                for (i, &di) in dets.iter().enumerate() {
                    for (j, &dj) in dets.iter().enumerate() {
                        assert!((s2s[(i, j)] - s2[di * dim + dj].re).abs() < 1e-10);
                    }
                }
            }
            assert!((&h - h.transpose()).abs().max() < 1e-12);
            assert!((&h * &s2s - &s2s * &h).abs().max() < 1e-10);
        }
    }

    #[test]
    fn invariants_on_random_instances() {
        for seed in 0..5 {
            let ints = random_integrals(4, 2, 2, 30 + seed);
            let r = fci_solve(&ints, 36).unwrap();
            assert!(r.energies.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            for a in 0..r.n_states() {
                let s2 = r.s2[a];
                let s = (-1.0 + (1.0 + 4.0 * s2).sqrt()) / 2.0;
                assert!((s - s.round()).abs() < 1e-6 && (s2 - s.round() * (s.round() + 1.0)).abs() < 1e-9);
                assert!((r.rdm(a, a).trace() - 4.0).abs() < 1e-10);
            }
            let rot = rotate_homo_lumo(&ints, 0.37, 1, 2).unwrap();
            let r2 = fci_solve(&rot, 36).unwrap();
            for (x, y) in r.energies.iter().zip(&r2.energies) {
                assert!((x - y).abs() < 1e-9);
            }
            let t = r.rdm(1, 0);
            let t2 = r.rdm(0, 1);
            assert!((t - t2.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn deterministic_degenerate_orientation() {
        // symmetric three-site ring carries degenerate levels
        let mut ints = MolecularIntegrals::zeros(3, 1, 1);
        for (p, q) in [(0, 1), (1, 2), (0, 2)] {
            ints.h[(p, q)] = -1.0;
            ints.h[(q, p)] = -1.0;
        }
        for p in 0..3 {
            ints.set_eri(p, p, p, p, 1.5);
        }
        let a = fci_solve(&ints, 9).unwrap();
        let b = fci_solve(&ints, 9).unwrap();
        assert_eq!(a.vectors, b.vectors);
        let has_degenerate = a.energies.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-8);
        assert!(has_degenerate);
        let overlap = a.vectors.transpose() * &a.vectors;
        assert!((overlap - DMatrix::identity(9, 9)).abs().max() < 1e-10);
    }

    #[test]
    fn sector_limits() {
        let ints = MolecularIntegrals::zeros(14, 7, 7);
        assert!(matches!(fci_solve(&ints, 1), Err(Error::SectorTooLarge(_))));
        assert_eq!(determinants(6, 3, 3).len(), 400);
    }
}
