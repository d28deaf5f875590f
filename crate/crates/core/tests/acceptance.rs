//! Acceptance suite: one PASS/FAIL/SKIPPED line per criterion.
//!
//! Criterion 8 reads H3S+ integrals from `EFQSE_H3SP_DIR` when set, otherwise
//! from the bundled `data/h3sp` directory, and is skipped when neither exists.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use efqse::config::{RunConfig, RunMode, ScanManifest};
use efqse::fci::fci_solve;
use efqse::forging::{ef_expectation, EFAnsatz, MeasurementSet};
use efqse::measurement::{measure_ansatz, CliffordMode, MitigatedSets};
use efqse::mitigation::{clifford_correct_bloch, postselect, MitigationFlags};
use efqse::observables::{atomic_charges, ChargeMethod, DipoleMatrices, RDM};
use efqse::pipeline::{
    load_system, qse_charges, qse_peaks, run_ground, run_oracle, run_qse_stage, scan_geometry, scan_summary, Settings,
    System,
};
use efqse::qse::{run_qse, QSEMatrices};
use efqse::tensor_op::{build_hamiltonian_tensor, build_one_body_tensor, build_s2_tensor};
use efqse::tomography::{basis_index, estimate_bloch, measure, NoiseModel};
use efqse::integrals::{cholesky_eri, CHOLESKY_TOL};
use efqse::pauli::Axis;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::*;

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn exact_settings() -> Settings {
    Settings::new(&RunConfig::default()).expect("default settings")
}

fn random_system(m: usize, n_occ: usize, seed: u64) -> System {
    System { ints: random_ints(m, n_occ, seed), aux: None }
}

fn h2() -> System {
    let d = data_dir().join("h2");
    load_system(&d.join("h2.fcidump"), Some(&d.join("h2_aux.json")), 0, None).expect("bundled H2 sample")
}

fn random_ansatz(m: usize, n_occ: usize, rng: &mut ChaCha8Rng) -> EFAnsatz {
    let mut a = EFAnsatz::default_for(m, n_occ).unwrap();
    for t in a.theta.iter_mut() {
        *t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    let extra: Vec<usize> = (0..1usize << m).filter(|x| x.count_ones() as usize == n_occ && !a.basis_states.contains(x)).collect();
    if !extra.is_empty() && rng.random::<bool>() {
        a.basis_states.push(extra[rng.random_range(0..extra.len())]);
    }
    let mut l: Vec<f64> = (0..a.basis_states.len()).map(|_| rng.random::<f64>() - 0.3).collect();
    let n = l.iter().map(|x| x * x).sum::<f64>().sqrt();
    l.iter_mut().for_each(|x| *x /= n);
    a.lambda = l;
    a.validate().unwrap();
    a
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst = 0.0f64;
    for inst in 0..50 {
        let m = if inst % 2 == 0 { 2 } else { 3 };
        let ints = random_ints(m, 1, 1000 + inst);
        let a = random_ansatz(m, 1, &mut rng);
        let ms = MeasurementSet::exact(&a).unwrap();
        let psi = a.full_state().unwrap();
        let d = random_symmetric(m, inst);
        let h = build_hamiltonian_tensor(&ints, &cholesky_eri(&ints, CHOLESKY_TOL).unwrap()).unwrap();
        let pairs = [
            (ef_expectation(&h, &ms, &a.lambda).unwrap().value.re + ints.e0, energy(&psi, &ints)),
            (
                ef_expectation(&build_one_body_tensor(&DMatrix::identity(m, m)).unwrap(), &ms, &a.lambda).unwrap().value.re,
                dot(&psi, &apply_one_body(&psi, m, &DMatrix::identity(m, m))).re,
            ),
            (ef_expectation(&build_s2_tensor(m).unwrap(), &ms, &a.lambda).unwrap().value.re, s_squared(&psi, m)),
            (
                ef_expectation(&build_one_body_tensor(&d).unwrap(), &ms, &a.lambda).unwrap().value.re,
                dot(&psi, &apply_one_body(&psi, m, &d)).re,
            ),
        ];
        for (ef, sv) in pairs {
            worst = worst.max((ef - sv).abs());
        }
    }
    check(worst < 1e-10, format!("50 instances at m = 2, 3; max |EF - statevector| = {worst:.2e} over H, N, S^2, dipole"))
}

fn criterion_2() -> Verdict {
    let st = exact_settings();
    let mut systems: Vec<(String, System)> = (0..8).map(|i| (format!("random m={}", 2 + i % 3), random_system(2 + i % 3, 1 + (i % 3) / 2, 2000 + i as u64))).collect();
    systems.push(("H2 sample".into(), h2()));
    let mut violations = Vec::new();
    let mut min_gap = f64::INFINITY;
    for (name, sys) in &systems {
        let g = run_ground(sys, &st, None).unwrap();
        let q = run_qse_stage(sys, &g, &st, 0).unwrap();
        let e_fci = fci_solve(&sys.ints, 1).unwrap().ground_energy();
        let e_qse = q.result.states[0].energy.value;
        let chain = [e_fci, e_qse, g.energy.value, g.hf_energy];
        let tol = 1e-9;
        if !(chain[0] <= chain[1] + tol && chain[1] <= chain[2] + tol && chain[2] <= chain[3] + tol) {
            violations.push(format!("{name}: FCI {:.10} QSE {:.10} EF {:.10} HF {:.10}", chain[0], chain[1], chain[2], chain[3]));
        }
        min_gap = min_gap.min(e_qse - e_fci);
    }
    check(
        violations.is_empty(),
        format!("{} systems, FCI <= QSE <= EF <= HF; min(QSE - FCI) = {min_gap:.2e}{}", systems.len(), if violations.is_empty() { String::new() } else { format!("; violations: {}", violations.join(" | ")) }),
    )
}

fn criterion_3() -> Verdict {
    let st = exact_settings();
    let mut systems: Vec<System> = (0..5).map(|i| random_system(2, 1, 3000 + i)).collect();
    systems.push(h2());
    let (mut de, mut ds) = (0.0f64, 0.0f64);
    let mut sizes_ok = true;
    for sys in &systems {
        let g = run_ground(sys, &st, None).unwrap();
        let q = run_qse_stage(sys, &g, &st, 0).unwrap();
        let fci = fci_solve(&sys.ints, usize::MAX).unwrap();
        sizes_ok &= q.result.states.len() == fci.n_states();
        for (s, e) in q.result.states.iter().zip(&fci.energies) {
            de = de.max((s.energy.value - e).abs());
            match s.spin {
                Some(sp) => ds = ds.max((s.s2.value - sp * (sp + 1.0)).abs()),
                None => ds = f64::INFINITY,
            }
        }
    }
    check(sizes_ok && de < 1e-8 && ds < 1e-6, format!("{} systems at m = 2; max |QSE - FCI| = {de:.2e}, max |<S^2> - s(s+1)| = {ds:.2e}", systems.len()))
}

fn criterion_4() -> Verdict {
    let st = exact_settings();
    let mut cases: Vec<(System, DipoleMatrices)> = Vec::new();
    let h = h2();
    let d = h.dipole().unwrap().clone();
    cases.push((h, d));
    for i in 0..4 {
        let sys = random_system(2, 1, 4000 + i);
        let d = DipoleMatrices { x: random_symmetric(2, 10 * i), y: random_symmetric(2, 10 * i + 1), z: random_symmetric(2, 10 * i + 2) };
        cases.push((sys, d));
    }
    let mut worst = 0.0f64;
    let mut elastic_ok = true;
    for (mut sys, d) in cases {
        let m = sys.ints.m;
        sys.aux = Some(dipole_only_aux(m, d.clone()));
        let g = run_ground(&sys, &st, None).unwrap();
        let q = run_qse_stage(&sys, &g, &st, 0).unwrap();
        let peaks = qse_peaks(&sys, &g, &q).unwrap();
        let fci = fci_solve(&sys.ints, 1).unwrap();
        let phi0 = to_complex(&fci.full_vector(0));
        let mut mumu = 0.0;
        let mut elastic = 0.0;
        for c in d.components() {
            let v = apply_one_body(&phi0, m, c);
            mumu += dot(&v, &v).re;
            elastic += dot(&phi0, &v).re.powi(2);
        }
        worst = worst.max((peaks.total_weight() - mumu).abs());
        let e = peaks.elastic().unwrap();
        elastic_ok &= e.state == 0 && e.energy.value == 0.0 && (e.weight - elastic).abs() < 1e-8;
        elastic_ok &= peaks.inelastic().count() == peaks.peaks.len() - 1 && peaks.inelastic().all(|p| p.energy.value > 0.0);
    }
    check(worst < 1e-8 && elastic_ok, format!("5 complete-basis systems; max |sum_A mu_A0 - <mu.mu>| = {worst:.2e}; elastic line separated: {elastic_ok}"))
}

/// Auxiliary data carrying only dipole matrices on an orthonormal AO basis.
fn dipole_only_aux(m: usize, d: DipoleMatrices) -> efqse::observables::AuxiliaryMatrices {
    efqse::observables::AuxiliaryMatrices {
        atoms: vec!["X".into()],
        nuclear_charges: vec![0.0],
        ao_atom: vec![0; m],
        overlap: DMatrix::identity(m, m),
        mo_coeff: DMatrix::identity(m, m),
        frozen: vec![],
        active: (0..m).collect(),
        total_charge: 0.0,
        orthogonalizer: None,
        dipole_mo: Some(d),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_5() -> Verdict {
    let sys = h2();
    let exact = exact_settings();
    let ansatz = run_ground(&sys, &exact, None).unwrap().ansatz;
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    let labels = ["raw", "roem", "em"];
    let mut purity_dev = 0.0f64;
    for seed in 0..10u64 {
        for (i, l) in labels.iter().enumerate() {
            let cfg = RunConfig { mode: RunMode::Noisy, seed, shots: 100_000, mitigation: efqse::config::MitigationSpec::Label(l.to_string()), ..Default::default() };
            let st = Settings::new(&cfg).unwrap();
            let g = run_ground(&sys, &st, Some(ansatz.clone())).unwrap();
            errs[i].push((g.energy.value - g.exact_energy).abs());
            if *l == "em" {
                for b in g.sets.main.records.values() {
                    purity_dev = purity_dev.max((b.purity() - 1.0).abs());
                }
            }
        }
    }
    let med: Vec<f64> = errs.iter().map(|e| median(e.clone())).collect();
    let ordered = med[2] < med[1] && med[1] < med[0];

    // post-selection keeps only weight-N_sigma outcomes
    let noise = NoiseModel { readout_p01: 0.02, readout_p10: 0.05, depol2: 0.01, seed: 7, shots: 100_000, trajectories: 20_000 };
    let n_sigma = ansatz.n_sigma();
    let mut ps_ok = true;
    for (k, l, p) in efqse::forging::record_keys(ansatz.k_count()) {
        let c = efqse::forging::build_ef_circuit(&ansatz, k, l, p).unwrap();
        let t = basis_index(&vec![Axis::Z; c.n]).unwrap();
        let data = measure(&c, &noise, efqse::tomography::tag_key(c.tag), Some(&[t])).unwrap();
        let kept = postselect(&data.counts[&t], n_sigma).unwrap();
        ps_ok &= kept.keys().all(|b| b.count_ones() == n_sigma);
        ps_ok &= kept.len() < data.counts[&t].len();
        let b = estimate_bloch(&data, None, Some(n_sigma)).unwrap();
        let zsum: f64 = (0..c.n).map(|q| b.entry(&efqse::pauli::PauliString::identity(c.n).with(q, Axis::Z))).sum();
        ps_ok &= (zsum - (c.n as f64 - 2.0 * n_sigma as f64)).abs() < 1e-12;
    }

    // Clifford correction at theta = theta* with identical hardware and reference data
    let mut z = ansatz.clone();
    z.theta.iter_mut().for_each(|t| *t = 0.0);
    let raw = measure_ansatz(&z, &noise, MitigationFlags::RAW, CliffordMode::PerEntry, None, false).unwrap();
    let ideal = MeasurementSet::exact(&z).unwrap();
    let mut cliff = 0.0f64;
    for (key, b) in &raw.main.records {
        let corr = clifford_correct_bloch(b, b, &ideal.records[key]).unwrap();
        cliff = cliff.max(corr.a.iter().zip(&ideal.records[key].a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    let g = run_ground(&sys, &exact, Some(z.clone())).unwrap();
    let sets = MitigatedSets { references: Some((raw.main.clone(), ideal)), ..raw };
    let e = sets.expectation(&g.h_op, &z.lambda).unwrap().value + g.rotated.e0;
    cliff = cliff.max((e - g.exact_energy).abs());

    check(
        ordered && purity_dev < 1e-12 && ps_ok && cliff < 1e-12,
        format!(
            "median |E - E_exact| over 10 seeds: em {:.2e} < roem {:.2e} < raw {:.2e}: {ordered}; purity dev {purity_dev:.1e}; post-selection ok: {ps_ok}; Clifford at theta* dev {cliff:.1e}",
            med[2], med[1], med[0]
        ),
    )
}

fn h3sp_dir() -> Option<PathBuf> {
    let dir = match std::env::var("EFQSE_H3SP_DIR") {
        Ok(d) => PathBuf::from(d),
        Err(_) => data_dir().join("h3sp"),
    };
    dir.join("manifest.json").exists().then_some(dir)
}

fn h3sp_system(dir: &Path, label: &str) -> System {
    let man = ScanManifest::read(&dir.join("manifest.json")).unwrap();
    let g = man.geometry(label).unwrap_or_else(|| panic!("geometry {label} missing from manifest"));
    load_system(&g.fcidump, g.aux.as_deref(), man.frozen.unwrap_or(0), man.active).unwrap()
}

fn criterion_6() -> Verdict {
    let st = exact_settings();
    let mut worst_sum = 0.0f64;
    let mut worst_trace = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut notes = Vec::new();

    // bundled H2: symmetric homonuclear system, exact mode
    let sys = h2();
    let g = run_ground(&sys, &st, None).unwrap();
    let q = run_qse_stage(&sys, &g, &st, 2).unwrap();
    for c in qse_charges(&sys, &g, &q, &st).unwrap() {
        worst_sum = worst_sum.max((c.charges.total() - 0.0).abs());
        worst_trace = worst_trace.max((c.charges.electrons - 2.0).abs());
        worst_sym = worst_sym.max((c.charges.charges[0].value - c.charges.charges[1].value).abs());
    }

    // synthetic C2v-like system: one centre and two mirror-equivalent ligands
    let mut aux = dipole_only_aux(3, DipoleMatrices::zeros(2));
    aux.atoms = vec!["A".into(), "B".into(), "B".into()];
    aux.nuclear_charges = vec![2.0, 1.0, 1.0];
    aux.ao_atom = vec![0, 1, 2];
    aux.total_charge = 0.0;
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.2, 0.2, 1.0, 0.05, 0.2, 0.05, 1.0]);
    aux.overlap = s.clone();
    let eig = nalgebra::SymmetricEigen::new(s);
    aux.mo_coeff = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt())) * eig.eigenvectors.transpose();
    aux.frozen = vec![0];
    aux.active = vec![1, 2];
    let rho = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.5]);
    for method in [ChargeMethod::Mulliken, ChargeMethod::Lowdin] {
        let c = atomic_charges(&RDM::exact(rho.clone(), (0, 0)), &aux, method, 0.0, None, 0).unwrap();
        worst_sum = worst_sum.max(c.total().abs());
        worst_trace = worst_trace.max((c.electrons - 4.0).abs());
    }

    // H3S+: departing H1, spectators H2 and H3 mirror images
    let mut cross = None;
    if let Some(dir) = h3sp_dir() {
        for label in ["1.357", "2.057"] {
            let sys = h3sp_system(&dir, label);
            let o = run_oracle(&sys, 400, 3, &st).unwrap();
            for c in o.charges.as_ref().unwrap().iter().take(1) {
                let q: Vec<f64> = c.charges.charges.iter().map(|x| x.value).collect();
                worst_sum = worst_sum.max((c.charges.total() - 1.0).abs());
                worst_trace = worst_trace.max((c.charges.electrons - 18.0).abs());
                worst_sym = worst_sym.max((q[2] - (1.0 - q[0] - q[1]) / 2.0).abs()).max((q[3] - q[2]).abs());
            }
            let g = run_ground(&sys, &st, None).unwrap();
            let qo = run_qse_stage(&sys, &g, &st, 1).unwrap();
            for c in qse_charges(&sys, &g, &qo, &st).unwrap() {
                worst_sum = worst_sum.max((c.charges.total() - 1.0).abs());
                worst_trace = worst_trace.max((c.charges.electrons - 18.0).abs());
                let q: Vec<f64> = c.charges.charges.iter().map(|x| x.value).collect();
                notes.push(format!("{} {}: |q_H2 - q_H3| = {:.1e}", label, c.state, (q[2] - q[3]).abs()));
            }
            if label == "1.357" {
                let reference: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("reference.json")).unwrap()).unwrap();
                if let Some(row) = reference["scan"].as_array().and_then(|a| a.iter().find(|r| (r["r_angstrom"].as_f64().unwrap() - 1.357).abs() < 1e-9)) {
                    let want: Vec<f64> = row["meta_lowdin_charges"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
                    let got = &o.charges.as_ref().unwrap()[0].charges.charges;
                    cross = Some(want.iter().zip(got).map(|(w, g)| (w - g.value).abs()).fold(0.0, f64::max));
                }
            }
        }
    } else {
        notes.push("H3S+ data absent; symmetric-system check uses H2 and the synthetic system only".into());
    }
    let cross_ok = cross.is_none_or(|c| c < 1e-6);
    check(
        worst_sum < 1e-8 && worst_trace < 1e-10 && worst_sym < 1e-8 && cross_ok,
        format!(
            "max |sum q - Q| = {worst_sum:.1e}; max |tr P - N| = {worst_trace:.1e}; exact symmetric-atom deviation = {worst_sym:.1e}{}; {}",
            cross.map_or(String::new(), |c| format!("; FCI vs PySCF meta-Lowdin charges {c:.1e}")),
            notes.join(", ")
        ),
    )
}

fn criterion_7() -> Verdict {
    // (a) Rayleigh-quotient propagation against Monte-Carlo re-solves
    let st = exact_settings();
    let sys = random_system(3, 1, 7000);
    let g = run_ground(&sys, &st, None).unwrap();
    let q = run_qse_stage(&sys, &g, &st, 0).unwrap();
    let n = q.matrices.len();
    let sig = 2e-4;
    let mut noisy = q.matrices.clone();
    noisy.h_sigma = DMatrix::from_element(n, n, sig);
    noisy.m_sigma = DMatrix::from_element(n, n, sig);
    noisy.s_sigma = DMatrix::zeros(n, n);
    let base = run_qse(&noisy, st.cfg.qse.spin_tol).unwrap();
    let tracked = [0usize, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(0x77);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut samples = vec![Vec::new(); tracked.len()];
    for _ in 0..200 {
        let mut pert: QSEMatrices = q.matrices.clone();
        for i in 0..n {
            for j in i..n {
                let dh = sig * normal.sample(&mut rng);
                let dm = sig * normal.sample(&mut rng);
                pert.h[(i, j)] += dh;
                pert.m[(i, j)] += dm;
                if i != j {
                    pert.h[(j, i)] += dh;
                    pert.m[(j, i)] += dm;
                }
            }
        }
        let r = run_qse(&pert, st.cfg.qse.spin_tol).unwrap();
        for (t, &a) in tracked.iter().enumerate() {
            samples[t].push(r.states[a].energy.value);
        }
    }
    let mut ratios = Vec::new();
    for (t, &a) in tracked.iter().enumerate() {
        let s = &samples[t];
        let mu = s.iter().sum::<f64>() / s.len() as f64;
        let sd = (s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt();
        ratios.push(base.states[a].energy.sigma / sd);
    }
    let ratio_ok = ratios.iter().all(|r| (0.7..=1.3).contains(r));

    // (b) empirical spread of tomography entries against shot count
    let mut a = EFAnsatz::default_for(3, 1).unwrap();
    a.theta = vec![0.4, -0.7, 0.9, 0.3, -0.2, 0.5][..a.theta.len()].to_vec();
    let c = efqse::forging::build_ef_circuit(&a, 0, 1, 1).unwrap();
    let shots = [1_000u64, 4_000, 16_000, 64_000];
    let reps = 40;
    let mut logs = Vec::new();
    for &ns in &shots {
        let per_seed: Vec<Vec<f64>> = (0..reps)
            .map(|seed| {
                let noise = NoiseModel { readout_p01: 0.02, readout_p10: 0.05, depol2: 0.0, seed, shots: ns, trajectories: 1 };
                estimate_bloch(&measure(&c, &noise, 11, None).unwrap(), None, None).unwrap().a
            })
            .collect();
        let dim = per_seed[0].len();
        let mut var = 0.0;
        for e in 1..dim {
            let mu = per_seed.iter().map(|v| v[e]).sum::<f64>() / reps as f64;
            var += per_seed.iter().map(|v| (v[e] - mu).powi(2)).sum::<f64>() / (reps - 1) as f64;
        }
        logs.push(((ns as f64).ln(), (var / (dim - 1) as f64).sqrt().ln()));
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / logs.len() as f64;
    let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let slope_ok = (slope + 0.5).abs() <= 0.05;
    check(
        ratio_ok && slope_ok,
        format!(
            "propagated / Monte-Carlo sigma for states {tracked:?}: {}; tomography log-log slope {slope:.3}",
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_8() -> Verdict {
    let Some(dir) = h3sp_dir() else {
        return Verdict::Skipped("no H3S+ integrals (set EFQSE_H3SP_DIR or bundle data/h3sp)".into());
    };
    let st = exact_settings();
    let man = ScanManifest::read(&dir.join("manifest.json")).unwrap();
    let eq = man.equilibrium.clone().unwrap_or_else(|| "1.357".into());
    let sys = h3sp_system(&dir, &eq);
    let fci = fci_solve(&sys.ints, usize::MAX).unwrap();
    let singlets: Vec<f64> = (0..fci.n_states()).filter(|&a| fci.s2[a].abs() < 0.3).map(|a| fci.energies[a]).collect();
    let gap_fci = singlets[1] - singlets[0];
    let g = run_ground(&sys, &st, None).unwrap();
    let q = run_qse_stage(&sys, &g, &st, 0).unwrap();
    let s = q.result.with_spin(0.0);
    let gap_qse = s[1].energy.value - s[0].energy.value;

    let mut st_scan = st.clone();
    st_scan.cfg.charges.enabled = false;
    let rows: Vec<_> = man.geometries.iter().map(|geo| scan_geometry(geo, &man, &st_scan, true).unwrap()).collect();
    let sum = scan_summary(&rows).unwrap();
    let qse = sum.qse.as_ref().unwrap();
    let ok_gap_fci = (gap_fci - 0.484).abs() <= 0.003;
    let ok_gap_qse = (gap_qse - 0.493).abs() <= 0.003;
    let ok_npe = (sum.ef.npe * 1e3 - 10.2).abs() <= 2.0;
    let ok_bind = (sum.ef.binding * 1e3 - 163.0).abs() <= 2.0;
    let detail = format!(
        "S1-S0 FCI {gap_fci:.4} (0.484) {}, EF+QSE {gap_qse:.4} (0.493) {}; EF npe {:.1} mHa (10.2) {}, binding {:.1} mHa (163) {}; EF+QSE npe {:.1} mHa, binding {:.1} mHa; FCI binding {:.1} mHa; {} geometries",
        ok_gap_fci,
        ok_gap_qse,
        sum.ef.npe * 1e3,
        ok_npe,
        sum.ef.binding * 1e3,
        ok_bind,
        qse.npe * 1e3,
        qse.binding * 1e3,
        sum.fci.binding * 1e3,
        rows.len()
    );
    check(ok_gap_fci && ok_gap_qse && ok_npe && ok_bind, detail)
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 8] = [
        ("1 EF-oracle equivalence", criterion_1, Duration::from_secs(60)),
        ("2 variational chain", criterion_2, Duration::from_secs(60)),
        ("3 QSE completeness", criterion_3, Duration::from_secs(60)),
        ("4 DSF sum rule", criterion_4, Duration::from_secs(60)),
        ("5 mitigation stack", criterion_5, Duration::from_secs(600)),
        ("6 charge sum rules", criterion_6, Duration::from_secs(600)),
        ("7 uncertainty calibration", criterion_7, Duration::from_secs(600)),
        ("8 H3S+ paper values", criterion_8, Duration::from_secs(3600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.starts_with(x.as_str())) {
            continue;
        }
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let dt = t.elapsed();
        let verdict = match verdict {
            Verdict::Pass(d) if dt > budget => Verdict::Fail(format!("{d}; runtime {dt:.1?} over budget {budget:?}")),
            v => v,
        };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {name}: {tag} ({detail}; {dt:.1?})");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
