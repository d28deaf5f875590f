//! Shared helpers for integration tests: random Hamiltonians and a direct
//! second-quantized evaluator on `2m`-qubit statevectors.
#![allow(dead_code)]

use std::path::PathBuf;

use efqse::integrals::MolecularIntegrals;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Random symmetric `h` and a positive semidefinite ERI tensor
/// `(pr|qs) = sum_L B^L_pr B^L_qs`.
pub fn random_ints(m: usize, n_occ: usize, seed: u64) -> MolecularIntegrals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACCE);
    let mut h = DMatrix::zeros(m, m);
    for p in 0..m {
        h[(p, p)] = -1.5 + 0.5 * p as f64 + 0.2 * rng.random::<f64>();
        for r in 0..p {
            let v = 0.3 * (rng.random::<f64>() - 0.5);
            h[(p, r)] = v;
            h[(r, p)] = v;
        }
    }
    let mut eri = vec![0.0; m.pow(4)];
    for g in 0..m + 1 {
        let mut b = DMatrix::zeros(m, m);
        for p in 0..m {
            for r in 0..=p {
                let v = if g == 0 { 0.4 } else { 0.2 } * (rng.random::<f64>() - 0.25);
                b[(p, r)] = v;
                b[(r, p)] = v;
            }
        }
        for p in 0..m {
            for r in 0..m {
                for q in 0..m {
                    for s in 0..m {
                        eri[((p * m + r) * m + q) * m + s] += b[(p, r)] * b[(q, s)];
                    }
                }
            }
        }
    }
    let e0 = rng.random::<f64>();
    MolecularIntegrals::new(m, n_occ, n_occ, e0, h, eri).expect("valid random integrals")
}

pub fn random_symmetric(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B0);
    let g = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
    &g + g.transpose()
}

/// Mode index of orbital `p` with spin `s` (0 up, 1 down).
fn mode(m: usize, p: usize, s: usize) -> usize {
    p + s * m
}

/// `a_j psi` with the sign `(-1)^(occupied modes below j)`.
pub fn annihilate(psi: &[Complex64], j: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); psi.len()];
    for (b, &a) in psi.iter().enumerate() {
        if a == Complex64::default() || b >> j & 1 == 0 {
            continue;
        }
        let sign = if (b & ((1 << j) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        out[b ^ (1 << j)] += a * sign;
    }
    out
}

pub fn create(psi: &[Complex64], j: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); psi.len()];
    for (b, &a) in psi.iter().enumerate() {
        if a == Complex64::default() || b >> j & 1 == 1 {
            continue;
        }
        let sign = if (b & ((1 << j) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        out[b | (1 << j)] += a * sign;
    }
    out
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(acc: &mut [Complex64], c: f64, v: &[Complex64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x * c;
    }
}

/// `sum_pr x_pr sum_sigma a^+_{p sigma} a_{r sigma} psi`.
pub fn apply_one_body(psi: &[Complex64], m: usize, x: &DMatrix<f64>) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); psi.len()];
    for s in 0..2 {
        for r in 0..m {
            let ar = annihilate(psi, mode(m, r, s));
            for p in 0..m {
                if x[(p, r)] != 0.0 {
                    axpy(&mut out, x[(p, r)], &create(&ar, mode(m, p, s)));
                }
            }
        }
    }
    out
}

/// `<psi| e0 + h_pr E_pr + 1/2 (pr|qs) a+_p a+_q a_s a_r |psi>`.
pub fn energy(psi: &[Complex64], ints: &MolecularIntegrals) -> f64 {
    let m = ints.m;
    let norm = dot(psi, psi).re;
    let mut e = ints.e0 * norm + dot(psi, &apply_one_body(psi, m, &ints.h)).re;
    // 1/2 (pr|qs) <a_q a_p psi | a_s a_r psi> over spins sigma (p, r) and tau (q, s)
    let mut pairs = std::collections::HashMap::new();
    for sg in 0..2 {
        for tu in 0..2 {
            for a in 0..m {
                for b in 0..m {
                    let ja = mode(m, a, sg);
                    let jb = mode(m, b, tu);
                    if ja == jb {
                        continue;
                    }
                    pairs.insert((a, sg, b, tu), annihilate(&annihilate(psi, ja), jb));
                }
            }
        }
    }
    for sg in 0..2 {
        for tu in 0..2 {
            for p in 0..m {
                for q in 0..m {
                    let Some(left) = pairs.get(&(p, sg, q, tu)) else { continue };
                    for r in 0..m {
                        for s in 0..m {
                            let Some(right) = pairs.get(&(r, sg, s, tu)) else { continue };
                            let v = ints.eri(p, r, q, s);
                            if v != 0.0 {
                                e += 0.5 * v * dot(left, right).re;
                            }
                        }
                    }
                }
            }
        }
    }
    e
}

/// `<S^2> = <S_- S_+> + <S_z (S_z + 1)>`.
pub fn s_squared(psi: &[Complex64], m: usize) -> f64 {
    let mut sp = vec![Complex64::default(); psi.len()];
    for p in 0..m {
        axpy(&mut sp, 1.0, &create(&annihilate(psi, mode(m, p, 1)), mode(m, p, 0)));
    }
    let mut szsz = 0.0;
    for (b, a) in psi.iter().enumerate() {
        let up = (b & ((1 << m) - 1)).count_ones() as f64;
        let dn = (b >> m).count_ones() as f64;
        let sz = 0.5 * (up - dn);
        szsz += a.norm_sqr() * sz * (sz + 1.0);
    }
    dot(&sp, &sp).re + szsz
}

pub fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}
