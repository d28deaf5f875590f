//! Statevector simulation of the forging circuits.
//!
//! Basis index bit `q` is qubit `q`. Bitstring labels list qubit 0 first, so
//! `"111000"` is the state with qubits 0, 1 and 2 set.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::{PauliString, PauliSum};

const NORM_TOL: f64 = 1e-12;
const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

pub fn parse_bitstring(s: &str) -> Result<usize> {
    if s.is_empty() || s.len() > 32 {
        return Err(Error::Invalid(format!("bad bitstring length in {s:?}")));
    }
    let mut bits = 0usize;
    for (q, ch) in s.chars().enumerate() {
        match ch {
            '0' => {}
            '1' => bits |= 1 << q,
            _ => return Err(Error::Invalid(format!("bad bitstring {s:?}"))),
        }
    }
    Ok(bits)
}

pub fn bitstring_label(bits: usize, n: usize) -> String {
    (0..n).map(|q| if bits >> q & 1 == 1 { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    n: usize,
    amps: Vec<Complex64>,
}

impl State {
    pub fn basis(n: usize, bits: usize) -> Self {
        let mut amps = vec![C0; 1 << n];
        amps[bits] = C1;
        Self { n, amps }
    }

    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::Dimension(format!("{} amplitudes for {n} qubits", amps.len())));
        }
        let s = Self { n, amps };
        if (s.norm() - 1.0).abs() > NORM_TOL {
            return Err(Error::Invalid(format!("state norm {} is not 1", s.norm())));
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &State) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn hamming_weight_expectation(&self) -> f64 {
        self.amps.iter().enumerate().map(|(i, a)| a.norm_sqr() * i.count_ones() as f64).sum()
    }

    pub fn expval_pauli(&self, op: &PauliSum) -> Result<Complex64> {
        if op.n() != self.n {
            return Err(Error::Dimension(format!("{}-qubit operator on {}-qubit state", op.n(), self.n)));
        }
        op.expectation(&self.amps)
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.n {
            Err(Error::Invalid(format!("qubit {q} out of range for {} qubits", self.n)))
        } else {
            Ok(())
        }
    }

    fn apply_1q(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        for q in gate.qubits() {
            self.check(q)?;
        }
        match *gate {
            Gate::X(q) => self.apply_1q(q, [[C0, C1], [C1, C0]]),
            Gate::H(q) => {
                let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                self.apply_1q(q, [[h, h], [h, -h]])
            }
            Gate::S { q, power } => {
                let ph = crate::pauli::i_pow(power as u32);
                self.apply_1q(q, [[C1, C0], [C0, ph]])
            }
            Gate::Rz { q, theta } => {
                let e = Complex64::from_polar(1.0, theta / 2.0);
                self.apply_1q(q, [[e.conj(), C0], [C0, e]])
            }
            Gate::Ry { q, theta } => {
                let (s, c) = (theta / 2.0).sin_cos();
                let (s, c) = (Complex64::new(s, 0.0), Complex64::new(c, 0.0));
                self.apply_1q(q, [[c, -s], [s, c]])
            }
            Gate::Cx { control, target } => {
                if control == target {
                    return Err(Error::Invalid("CX control equals target".into()));
                }
                let (cb, tb) = (1usize << control, 1usize << target);
                for i in 0..self.amps.len() {
                    if i & cb != 0 && i & tb == 0 {
                        self.amps.swap(i, i | tb);
                    }
                }
            }
            Gate::Hop { q1, q2, theta } => apply_hop_gate(self, q1, q2, theta)?,
        }
        Ok(())
    }

    /// Applies `P` (including its `i^y` phase).
    pub fn apply_pauli(&mut self, p: &PauliString) {
        let mut out = vec![C0; self.amps.len()];
        for (r, a) in self.amps.iter().enumerate() {
            let (ph, row) = p.apply_basis(r);
            out[row] = ph * a;
        }
        self.amps = out;
    }
}

/// Identity on `|00>`, `|01> -> cos t |01> + sin t |10>`,
/// `|10> -> -sin t |01> + cos t |10>`, `-1` on `|11>`, where `|ab>` lists the
/// bits of `q1` and `q2`.
pub fn apply_hop_gate(state: &mut State, q1: usize, q2: usize, theta: f64) -> Result<()> {
    state.check(q1)?;
    state.check(q2)?;
    if q1 == q2 {
        return Err(Error::Invalid("hop gate needs two distinct qubits".into()));
    }
    let (b1, b2) = (1usize << q1, 1usize << q2);
    let (s, c) = theta.sin_cos();
    for i in 0..state.amps.len() {
        if i & (b1 | b2) != 0 {
            continue;
        }
        let i01 = i | b2;
        let i10 = i | b1;
        let i11 = i | b1 | b2;
        let (a01, a10) = (state.amps[i01], state.amps[i10]);
        state.amps[i01] = a01 * c - a10 * s;
        state.amps[i10] = a01 * s + a10 * c;
        state.amps[i11] = -state.amps[i11];
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    X(usize),
    H(usize),
    /// `S^power`, `power` in `0..4`.
    S { q: usize, power: u8 },
    Rz { q: usize, theta: f64 },
    Ry { q: usize, theta: f64 },
    Cx { control: usize, target: usize },
    Hop { q1: usize, q2: usize, theta: f64 },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::H(q) | Gate::S { q, .. } | Gate::Rz { q, .. } | Gate::Ry { q, .. } => {
                vec![q]
            }
            Gate::Cx { control, target } => vec![control, target],
            Gate::Hop { q1, q2, .. } => vec![q1, q2],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cx { .. } | Gate::Hop { .. })
    }

    fn qasm(&self) -> String {
        match *self {
            Gate::X(q) => format!("x q[{q}];"),
            Gate::H(q) => format!("h q[{q}];"),
            Gate::S { q, power } => match power % 4 {
                0 => format!("id q[{q}];"),
                1 => format!("s q[{q}];"),
                2 => format!("z q[{q}];"),
                _ => format!("sdg q[{q}];"),
            },
            Gate::Rz { q, theta } => format!("rz({theta:.12}) q[{q}];"),
            Gate::Ry { q, theta } => format!("ry({theta:.12}) q[{q}];"),
            Gate::Cx { control, target } => format!("cx q[{control}],q[{target}];"),
            Gate::Hop { q1, q2, theta } => format!("hop({theta:.12}) q[{q1}],q[{q2}];"),
        }
    }
}

/// Hop gate as 3 CX plus single-qubit rotations, equal to [`apply_hop_gate`]
/// up to a global phase.
pub fn compile_hop(q1: usize, q2: usize, theta: f64) -> [Gate; 9] {
    [
        Gate::S { q: q1, power: 1 },
        Gate::Rz { q: q2, theta: FRAC_PI_2 },
        Gate::Cx { control: q2, target: q1 },
        Gate::Ry { q: q2, theta: FRAC_PI_2 - theta },
        Gate::Cx { control: q1, target: q2 },
        Gate::Ry { q: q2, theta: theta - FRAC_PI_2 },
        Gate::Cx { control: q2, target: q1 },
        Gate::Rz { q: q1, theta: -FRAC_PI_2 },
        Gate::S { q: q2, power: 1 },
    ]
}

/// `(k, l, p)` identity of a forging circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CircuitTag {
    pub k: usize,
    pub l: usize,
    pub p: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prep {
    /// `|0...0>`.
    Zero,
    /// `(|x_k> + i^p |x_l>)/sqrt2`, or `|x_k>` when the strings coincide.
    Phi { xk: usize, xl: usize, p: u8 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub n: usize,
    pub prep: Prep,
    pub gates: Vec<Gate>,
    pub tag: Option<CircuitTag>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateCounts {
    pub one_qubit: usize,
    pub cx: usize,
    pub hop: usize,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Self { n, prep: Prep::Zero, gates: Vec::new(), tag: None }
    }

    pub fn push(&mut self, g: Gate) -> Result<()> {
        if g.qubits().iter().any(|&q| q >= self.n) {
            return Err(Error::Invalid(format!("gate {g:?} out of range for {} qubits", self.n)));
        }
        self.gates.push(g);
        Ok(())
    }

    pub fn initial_state(&self) -> Result<State> {
        match self.prep {
            Prep::Zero => Ok(State::basis(self.n, 0)),
            Prep::Phi { xk, xl, p } => prepare_phi(self.n, xk, xl, p),
        }
    }

    pub fn run(&self) -> Result<State> {
        let mut s = self.initial_state()?;
        for g in &self.gates {
            s.apply(g)?;
        }
        Ok(s)
    }

    /// Runs the circuit inserting Pauli `P` right after gate `i` for each
    /// `(i, P)` (sorted by `i`).
    pub fn run_with_insertions(&self, insertions: &[(usize, PauliString)]) -> Result<State> {
        let mut s = self.initial_state()?;
        let mut next = insertions.iter().peekable();
        for (i, g) in self.gates.iter().enumerate() {
            s.apply(g)?;
            while let Some((j, p)) = next.peek() {
                if *j != i {
                    break;
                }
                s.apply_pauli(p);
                next.next();
            }
        }
        Ok(s)
    }

    /// Gate-based state preparation and hop gates lowered to CX form.
    pub fn compile(&self) -> Circuit {
        let mut gates = match self.prep {
            Prep::Zero => Vec::new(),
            Prep::Phi { xk, xl, p } => prep_gates(self.n, xk, xl, p),
        };
        for g in &self.gates {
            match *g {
                Gate::Hop { q1, q2, theta } => gates.extend(compile_hop(q1, q2, theta)),
                other => gates.push(other),
            }
        }
        Circuit { n: self.n, prep: Prep::Zero, gates, tag: self.tag }
    }

    pub fn gate_counts(&self) -> GateCounts {
        let mut c = GateCounts::default();
        for g in &self.gates {
            match g {
                Gate::Cx { .. } => c.cx += 1,
                Gate::Hop { .. } => c.hop += 1,
                _ => c.one_qubit += 1,
            }
        }
        c
    }

    /// Indices of two-qubit gates.
    pub fn two_qubit_positions(&self) -> Vec<usize> {
        self.gates.iter().enumerate().filter(|(_, g)| g.is_two_qubit()).map(|(i, _)| i).collect()
    }

    pub fn to_qasm(&self) -> String {
        let mut out = String::from("OPENQASM 2.0;\n");
        if let Some(t) = self.tag {
            let _ = writeln!(out, "// k={} l={} p={}", t.k, t.l, t.p);
        }
        let _ = writeln!(out, "qreg q[{}];", self.n);
        if let Prep::Phi { xk, xl, p } = self.prep {
            let _ = writeln!(
                out,
                "// prepare ({} + i^{p} {})/sqrt2",
                bitstring_label(xk, self.n),
                bitstring_label(xl, self.n)
            );
        }
        for g in &self.gates {
            out.push_str(&g.qasm());
            out.push('\n');
        }
        out
    }
}

pub fn prepare_phi(n: usize, xk: usize, xl: usize, p: u8) -> Result<State> {
    check_pair(n, xk, xl, p)?;
    if xk == xl {
        return Ok(State::basis(n, xk));
    }
    let mut amps = vec![C0; 1 << n];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    amps[xk] = Complex64::new(h, 0.0);
    amps[xl] = crate::pauli::i_pow(p as u32) * h;
    Ok(State { n, amps })
}

fn check_pair(n: usize, xk: usize, xl: usize, p: u8) -> Result<()> {
    if n == 0 || n > 30 || xk >> n != 0 || xl >> n != 0 {
        return Err(Error::Invalid(format!("bitstrings do not fit {n} qubits")));
    }
    if xk.count_ones() != xl.count_ones() {
        return Err(Error::Invalid(format!(
            "Hamming weights differ: {} vs {}",
            xk.count_ones(),
            xl.count_ones()
        )));
    }
    if p > 3 {
        return Err(Error::Invalid(format!("phase index {p} not in 0..4")));
    }
    Ok(())
}

/// X on the common occupied qubits; H, `S^p` and a conditional X on the first
/// differing qubit `c`; then CX from `c` to every other differing qubit.
pub fn prep_gates(n: usize, xk: usize, xl: usize, p: u8) -> Vec<Gate> {
    let common = xk & xl;
    let mut gates: Vec<Gate> = (0..n).filter(|q| common >> q & 1 == 1).map(Gate::X).collect();
    let diff = xk ^ xl;
    if diff == 0 {
        return gates;
    }
    let c = diff.trailing_zeros() as usize;
    gates.push(Gate::H(c));
    if p % 4 != 0 {
        gates.push(Gate::S { q: c, power: p % 4 });
    }
    // qubit c reads 0 on the x_k branch and 1 on the x_l branch before the flip
    if xk >> c & 1 == 1 {
        gates.push(Gate::X(c));
    }
    let kc = xk >> c & 1;
    for d in (c + 1..n).filter(|d| diff >> d & 1 == 1) {
        gates.push(Gate::Cx { control: c, target: d });
        if xk >> d & 1 != kc {
            gates.push(Gate::X(d));
        }
    }
    gates
}

/// Hop-gate pairs for `layers` brickwork layers inside the occupied block
/// `0..n_occ` and the virtual block `n_occ..m`.
pub fn brickwork_pairs(m: usize, n_occ: usize, layers: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for layer in 0..layers {
        for (start, end) in [(0, n_occ), (n_occ, m)] {
            let size = end.saturating_sub(start);
            let mut j = layer % 2;
            while j + 1 < size {
                out.push((start + j, start + j + 1));
                j += 2;
            }
        }
    }
    out
}

/// Histogram as `{bitstring: count}` JSON.
pub fn histogram_json(n: usize, counts: &BTreeMap<usize, u64>) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = counts
        .iter()
        .map(|(b, c)| (bitstring_label(*b, n), serde_json::Value::from(*c)))
        .collect();
    serde_json::Value::Object(map)
}
