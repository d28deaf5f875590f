//! Synthetic noise, shot sampling and Pauli-basis state tomography.
//!
//! Measurement basis `t` in `0..3^n` uses base-3 digit `q` of `t` as the
//! axis of qubit `q` (`0 = X`, `1 = Y`, `2 = Z`). Pauli `P` is estimated from
//! the unique basis that agrees with `P` on its `X`/`Y` qubits and is `Z`
//! elsewhere.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mitigation::{apply_tensored, mitigate_readout, BlochVector, ReadoutCalibration};
use crate::pauli::{walsh_hadamard, Axis, PauliString};
use crate::sim::{Circuit, CircuitTag, Gate};

pub const MAX_TOMOGRAPHY_QUBITS: usize = 8;

pub type Counts = BTreeMap<usize, u64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// `P(read 1 | prepared 0)` on every qubit.
    pub readout_p01: f64,
    /// `P(read 0 | prepared 1)` on every qubit.
    pub readout_p10: f64,
    /// Two-qubit depolarizing probability after each CX.
    pub depol2: f64,
    pub seed: u64,
    pub shots: u64,
    /// Monte-Carlo trajectories per circuit for the depolarizing channel.
    pub trajectories: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { readout_p01: 0.0, readout_p10: 0.0, depol2: 0.0, seed: 0, shots: 100_000, trajectories: 20_000 }
    }
}

impl NoiseModel {
    pub fn noiseless(shots: u64, seed: u64) -> Self {
        Self { shots, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("readout_p01", self.readout_p01), ("readout_p10", self.readout_p10), ("depol2", self.depol2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.shots == 0 {
            return Err(Error::Invalid("shot count must be positive".into()));
        }
        if self.depol2 > 0.0 && self.trajectories == 0 {
            return Err(Error::Invalid("depolarizing noise needs at least one trajectory".into()));
        }
        Ok(())
    }

    pub fn calibration(&self, n: usize) -> ReadoutCalibration {
        ReadoutCalibration::from_flip_probabilities(n, self.readout_p01, self.readout_p10)
    }
}

/// RNG stream for one task, independent of scheduling order.
pub fn task_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &k in key {
        h ^= k.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn tag_key(tag: Option<CircuitTag>) -> u64 {
    tag.map_or(u64::MAX, |t| ((t.k as u64) << 40) | ((t.l as u64) << 8) | t.p as u64)
}

pub fn basis_count(n: usize) -> usize {
    3usize.pow(n as u32)
}

pub fn basis_axes(n: usize, t: usize) -> Vec<Axis> {
    let mut t = t;
    (0..n)
        .map(|_| {
            let a = [Axis::X, Axis::Y, Axis::Z][t % 3];
            t /= 3;
            a
        })
        .collect()
}

pub fn basis_index(axes: &[Axis]) -> Result<usize> {
    let mut t = 0;
    for a in axes.iter().rev() {
        t = t * 3
            + match a {
                Axis::X => 0,
                Axis::Y => 1,
                Axis::Z => 2,
                Axis::I => return Err(Error::Invalid("measurement basis cannot contain I".into())),
            };
    }
    Ok(t)
}

/// Basis used to estimate Pauli `p`.
pub fn basis_for(p: &PauliString) -> usize {
    let axes: Vec<Axis> =
        (0..p.n()).map(|q| if p.axis(q) == Axis::I { Axis::Z } else { p.axis(q) }).collect();
    basis_index(&axes).expect("no identity axes")
}

/// Masks `(xm, zm)` of the basis axes: `X` sets `xm`, `Z` sets `zm`, `Y`
/// sets both.
fn basis_masks(axes: &[Axis]) -> (u32, u32) {
    let (mut xm, mut zm) = (0u32, 0u32);
    for (q, a) in axes.iter().enumerate() {
        match a {
            Axis::X => xm |= 1 << q,
            Axis::Y => {
                xm |= 1 << q;
                zm |= 1 << q
            }
            Axis::Z => zm |= 1 << q,
            Axis::I => {}
        }
    }
    (xm, zm)
}

/// Outcome distribution in basis `t` implied by a Bloch vector.
pub fn basis_distribution(bloch: &BlochVector, t: usize) -> Vec<f64> {
    let n = bloch.n;
    let (xm, zm) = basis_masks(&basis_axes(n, t));
    let dim = 1usize << n;
    let mut v: Vec<f64> = (0..dim)
        .map(|s| {
            let s = s as u32;
            bloch.a[PauliString::from_masks(n, xm & s, zm & s).index()]
        })
        .collect();
    walsh_hadamard(&mut v);
    v.iter_mut().for_each(|x| *x /= dim as f64);
    v
}

/// Exact (infinite-shot) Bloch vector of the circuit output. Depolarizing
/// noise is averaged over sampled Pauli-insertion trajectories on the compiled
/// circuit; identical insertion patterns are simulated once.
pub fn circuit_bloch(circuit: &Circuit, noise: Option<&NoiseModel>, key: u64) -> Result<BlochVector> {
    let n = circuit.n;
    if n > MAX_TOMOGRAPHY_QUBITS {
        return Err(Error::Invalid(format!("tomography limited to {MAX_TOMOGRAPHY_QUBITS} qubits")));
    }
    let noise = noise.filter(|nm| nm.depol2 > 0.0);
    let Some(nm) = noise else {
        return Ok(BlochVector::from_state(&circuit.run()?).with_tag(circuit.tag));
    };
    nm.validate()?;
    let compiled = circuit.compile();
    let positions = compiled.two_qubit_positions();
    let mut rng = task_rng(nm.seed, &[key, 0xD3]);
    let mut patterns: BTreeMap<Vec<(usize, u8)>, u64> = BTreeMap::new();
    for _ in 0..nm.trajectories {
        let mut pat = Vec::new();
        for &pos in &positions {
            if rng.random::<f64>() < nm.depol2 {
                pat.push((pos, rng.random_range(1..16u8)));
            }
        }
        *patterns.entry(pat).or_default() += 1;
    }
    let dim = 1usize << n;
    let mut rho = vec![Complex64::default(); dim * dim];
    for (pat, count) in &patterns {
        let ins: Vec<(usize, PauliString)> = pat
            .iter()
            .map(|&(pos, code)| {
                let qs = compiled.gates[pos].qubits();
                let ax = [Axis::I, Axis::X, Axis::Y, Axis::Z];
                let p = PauliString::identity(n)
                    .with(qs[0], ax[(code % 4) as usize])
                    .with(qs[1], ax[(code / 4) as usize]);
                (pos, p)
            })
            .collect();
        let s = compiled.run_with_insertions(&ins)?;
        let w = *count as f64 / nm.trajectories as f64;
        let amps = s.amplitudes();
        for r in 0..dim {
            let ar = amps[r] * w;
            for c in 0..dim {
                rho[r * dim + c] += ar * amps[c].conj();
            }
        }
    }
    Ok(BlochVector::from_density(n, &rho).with_tag(circuit.tag))
}

/// Multinomial sample of `shots` outcomes from `probs`.
fn sample_multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Counts {
    let mut out = Counts::new();
    let mut left = shots;
    let mut mass = 1.0f64;
    for (b, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let p = p.max(0.0);
        let frac = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if b + 1 == probs.len() {
            left
        } else {
            Binomial::new(left, frac).expect("valid binomial").sample(rng)
        };
        if k > 0 {
            out.insert(b, k);
        }
        left -= k;
        mass -= p;
    }
    out
}

/// Counts for all measured bases of one circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyData {
    pub n: usize,
    pub shots: u64,
    pub tag: Option<CircuitTag>,
    /// Basis index to histogram.
    pub counts: BTreeMap<usize, Counts>,
}

impl TomographyData {
    pub fn histogram_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .counts
            .iter()
            .map(|(t, c)| {
                let label: String = basis_axes(self.n, *t)
                    .iter()
                    .map(|a| match a {
                        Axis::X => 'X',
                        Axis::Y => 'Y',
                        _ => 'Z',
                    })
                    .collect();
                (label, crate::sim::histogram_json(self.n, c))
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Samples `noise.shots` outcomes in each listed basis (all `3^n` when
/// `bases` is `None`), with readout flips applied to every shot.
pub fn measure(
    circuit: &Circuit,
    noise: &NoiseModel,
    key: u64,
    bases: Option<&[usize]>,
) -> Result<TomographyData> {
    noise.validate()?;
    let n = circuit.n;
    let bloch = circuit_bloch(circuit, Some(noise), key)?;
    let cal = noise.calibration(n);
    let all: Vec<usize> = (0..basis_count(n)).collect();
    let bases = bases.unwrap_or(&all);
    let mut counts = BTreeMap::new();
    for &t in bases {
        if t >= basis_count(n) {
            return Err(Error::Invalid(format!("basis index {t} out of range")));
        }
        let mut p = basis_distribution(&bloch, t);
        apply_tensored(&cal.matrices, &mut p, false);
        let mut rng = task_rng(noise.seed, &[key, 0xB5, t as u64]);
        counts.insert(t, sample_multinomial(&p, noise.shots, &mut rng));
    }
    Ok(TomographyData { n, shots: noise.shots, tag: circuit.tag, counts })
}

/// Histogram in one measurement basis (axes `X`, `Y` or `Z` per qubit).
pub fn sample_counts(circuit: &Circuit, basis: &[Axis], noise: &NoiseModel) -> Result<Counts> {
    if basis.len() != circuit.n {
        return Err(Error::Dimension(format!("{}-qubit basis for {}-qubit circuit", basis.len(), circuit.n)));
    }
    let t = basis_index(basis)?;
    let key = tag_key(circuit.tag);
    let mut data = measure(circuit, noise, key, Some(&[t]))?;
    Ok(data.counts.remove(&t).unwrap_or_default())
}

/// Full-basis tomography. Without noise the exact Bloch vector is returned
/// with zero uncertainties; otherwise the raw shot estimate.
pub fn tomography(circuit: &Circuit, noise: Option<&NoiseModel>) -> Result<BlochVector> {
    match noise {
        None => circuit_bloch(circuit, None, 0),
        Some(nm) => {
            let data = measure(circuit, nm, tag_key(circuit.tag), None)?;
            estimate_bloch(&data, None, None)
        }
    }
}

/// Estimates Pauli expectations from counts. With `cal`, outcome
/// distributions are first corrected by the tensored inverse assignment
/// matrix. With `postselect_weight`, the all-`Z` basis distribution is
/// restricted to that Hamming weight and renormalized; entries without `X`/`Y`
/// factors then come from the restricted distribution. Standard errors follow
/// from the per-shot influence function of each estimator.
pub fn estimate_bloch(
    data: &TomographyData,
    cal: Option<&ReadoutCalibration>,
    postselect_weight: Option<u32>,
) -> Result<BlochVector> {
    let n = data.n;
    let dim = 1usize << n;
    let len = dim * dim;
    let inv = match cal {
        Some(c) => {
            if c.n() != n {
                return Err(Error::Dimension(format!("calibration for {} qubits, data for {n}", c.n())));
            }
            Some(c.inverses()?)
        }
        None => None,
    };
    let mut a = vec![0.0; len];
    let mut sigma = vec![0.0; len];
    let mut covered = vec![false; len];
    a[0] = 1.0;
    covered[0] = true;
    let shots = data.shots as f64;
    for (&t, counts) in &data.counts {
        let axes = basis_axes(n, t);
        let (xm, zm) = basis_masks(&axes);
        let nonz = xm as usize; // qubits measured in X or Y
        let total: f64 = counts.values().map(|&c| c as f64).sum();
        if total <= 0.0 {
            return Err(Error::Data(format!("basis {t} has no shots")));
        }
        let mut p_hat = vec![0.0; dim];
        for (&b, &c) in counts {
            p_hat[b] = c as f64 / total;
        }
        let q: Vec<f64> = match cal {
            Some(c) => {
                let weights: BTreeMap<usize, f64> = counts.iter().map(|(&b, &c)| (b, c as f64)).collect();
                let m = mitigate_readout(&weights, c)?;
                let mut v = vec![0.0; dim];
                for (b, x) in m {
                    v[b] = x;
                }
                v
            }
            None => p_hat.clone(),
        };
        let ps = postselect_weight.filter(|_| nonz == 0);
        let in_w = |b: usize| ps.is_none_or(|w| b.count_ones() == w);
        let den: f64 = (0..dim).filter(|&b| in_w(b)).map(|b| q[b]).sum();
        if ps.is_some() && den <= 0.0 {
            return Err(Error::EmptyPostselection);
        }
        let den_infl = ps.map(|_| {
            let mut f: Vec<f64> = (0..dim).map(|b| if in_w(b) { 1.0 } else { 0.0 }).collect();
            if let Some(inv) = &inv {
                apply_tensored(inv, &mut f, true);
            }
            f
        });
        let zq = (zm as usize) & !nonz; // qubits measured in Z
        // served Paulis: supp = nonz | sub, sub over subsets of zq
        let mut sub = 0usize;
        loop {
            let supp = nonz | sub;
            if supp != 0 {
                let s32 = supp as u32;
                let idx = PauliString::from_masks(n, xm & s32, zm & s32).index();
                let sign = |b: usize| if (b & supp).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                let num: f64 = (0..dim).filter(|&b| in_w(b)).map(|b| q[b] * sign(b)).sum();
                let est = if ps.is_some() { num / den } else { num };
                let mut h: Vec<f64> = (0..dim).map(|b| if in_w(b) { sign(b) } else { 0.0 }).collect();
                if let Some(inv) = &inv {
                    apply_tensored(inv, &mut h, true);
                }
                if let Some(di) = &den_infl {
                    for (hb, db) in h.iter_mut().zip(di) {
                        *hb = (*hb - est * db) / den;
                    }
                }
                let m1: f64 = (0..dim).map(|b| p_hat[b] * h[b]).sum();
                let m2: f64 = (0..dim).map(|b| p_hat[b] * h[b] * h[b]).sum();
                a[idx] = est;
                sigma[idx] = ((m2 - m1 * m1).max(0.0) / shots).sqrt();
                covered[idx] = true;
            }
            if sub == zq {
                break;
            }
            sub = (sub.wrapping_sub(zq)) & zq;
        }
    }
    let full = covered.iter().all(|&c| c);
    Ok(BlochVector {
        n,
        a,
        sigma,
        tag: data.tag,
        covered: if full { None } else { Some(covered) },
    })
}

/// Estimates the per-qubit assignment matrices by preparing `|0...0>` and
/// `|1...1>` under the noise model.
pub fn calibrate_readout(n: usize, noise: &NoiseModel, shots: u64) -> Result<ReadoutCalibration> {
    if shots == 0 {
        return Err(Error::Invalid("calibration needs shots".into()));
    }
    let mut matrices = Vec::with_capacity(n);
    for q in 0..n {
        let mut rng = task_rng(noise.seed, &[0xCA11, q as u64]);
        let f01 = Binomial::new(shots, noise.readout_p01).expect("probability").sample(&mut rng) as f64;
        let f10 = Binomial::new(shots, noise.readout_p10).expect("probability").sample(&mut rng) as f64;
        let s = shots as f64;
        matrices.push([[1.0 - f01 / s, f10 / s], [f01 / s, 1.0 - f10 / s]]);
    }
    Ok(ReadoutCalibration { matrices })
}

/// Gate list of `circuit` with single-qubit basis-change rotations appended
/// for measuring in basis `t`.
pub fn with_basis_rotation(circuit: &Circuit, t: usize) -> Circuit {
    let mut c = circuit.clone();
    for (q, a) in basis_axes(circuit.n, t).iter().enumerate() {
        match a {
            Axis::X => c.gates.push(Gate::H(q)),
            Axis::Y => {
                c.gates.push(Gate::S { q, power: 3 });
                c.gates.push(Gate::H(q));
            }
            _ => {}
        }
    }
    c
}
