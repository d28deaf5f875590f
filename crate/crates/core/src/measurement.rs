//! Sampled and mitigated measurement sets for a fixed forged ansatz.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::forging::{build_ef_circuit, ef_expectation, record_keys, EFAnsatz, MeasurementMode, MeasurementSet};
use crate::mitigation::{
    clifford_correct, clifford_correct_bloch, purify, zero_imaginary_paulis, BlochVector, MitigationFlags,
    ReadoutCalibration,
};
use crate::tensor_op::TensorFactorOp;
use crate::tomography::{calibrate_readout, circuit_bloch, estimate_bloch, measure, tag_key, NoiseModel};

/// Where the Clifford add-and-subtract correction is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CliffordMode {
    /// Every Bloch-vector entry of every record.
    #[default]
    PerEntry,
    /// Each derived observable, from separately evaluated reference sets.
    PerObservable,
}

impl CliffordMode {
    pub fn label(&self) -> &'static str {
        match self {
            CliffordMode::PerEntry => "per_entry",
            CliffordMode::PerObservable => "per_observable",
        }
    }
}

const REFERENCE_KEY: u64 = 1 << 62;

/// Bloch vectors after each pipeline stage for one record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageDump {
    pub record: (usize, usize, u8),
    pub stage: String,
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MitigatedSets {
    pub main: MeasurementSet,
    /// `(hardware, ideal)` reference sets at the Clifford point when the
    /// correction is applied per observable.
    pub references: Option<(MeasurementSet, MeasurementSet)>,
    pub flags: MitigationFlags,
    pub clifford_mode: CliffordMode,
    pub calibration: Option<ReadoutCalibration>,
    pub audit: Vec<StageDump>,
}

impl MitigatedSets {
    /// Exact records, no mitigation.
    pub fn exact(ansatz: &EFAnsatz) -> Result<Self> {
        Ok(Self {
            main: MeasurementSet::exact(ansatz)?,
            references: None,
            flags: MitigationFlags::RAW,
            clifford_mode: CliffordMode::PerEntry,
            calibration: None,
            audit: Vec::new(),
        })
    }

    /// `<Psi|op|Psi>`, including the per-observable Clifford correction.
    pub fn expectation(&self, op: &TensorFactorOp, lambda: &[f64]) -> Result<Estimate> {
        let hw = ef_expectation(op, &self.main, lambda)?.re();
        match &self.references {
            None => Ok(hw),
            Some((hw_ref, ideal)) => {
                let r = ef_expectation(op, hw_ref, lambda)?.re();
                let i = ef_expectation(op, ideal, lambda)?.re();
                Ok(clifford_correct(hw, r, i.value))
            }
        }
    }
}

struct RecordOut {
    key: (usize, usize, u8),
    main: BlochVector,
    refs: Option<(BlochVector, BlochVector)>,
    audit: Vec<StageDump>,
}

fn dump(key: (usize, usize, u8), stage: &str, b: &BlochVector) -> StageDump {
    StageDump { record: key, stage: stage.into(), a: b.a.clone(), sigma: b.sigma.clone() }
}

/// Tomography of every forging circuit under `noise`, then the enabled
/// mitigation stages: readout inversion and post-selection per basis,
/// odd-`Y` zeroing, Clifford correction against the `theta = 0` circuits,
/// and purification.
pub fn measure_ansatz(
    ansatz: &EFAnsatz,
    noise: &NoiseModel,
    flags: MitigationFlags,
    clifford_mode: CliffordMode,
    calibration: Option<&ReadoutCalibration>,
    audit: bool,
) -> Result<MitigatedSets> {
    noise.validate()?;
    ansatz.validate()?;
    let m = ansatz.m;
    let cal = if flags.roem {
        Some(match calibration {
            Some(c) => c.clone(),
            None => calibrate_readout(m, noise, noise.shots)?,
        })
    } else {
        None
    };
    if let Some(c) = &cal {
        if c.n() != m {
            return Err(Error::Dimension(format!("calibration for {} qubits, ansatz on {m}", c.n())));
        }
    }
    let weight = flags.postselect.then(|| ansatz.n_sigma());
    let mut reference = ansatz.clone();
    reference.theta.iter_mut().for_each(|t| *t = 0.0);

    let estimate = |circuit: &crate::sim::Circuit, key: u64, p: u8| -> Result<BlochVector> {
        let data = measure(circuit, noise, key, None)?;
        let mut b = estimate_bloch(&data, cal.as_ref(), weight)?;
        if flags.zero_imaginary {
            b = zero_imaginary_paulis(&b, p);
        }
        Ok(b)
    };

    let keys = record_keys(ansatz.k_count());
    let outs: Vec<Result<RecordOut>> = keys
        .par_iter()
        .map(|&(k, l, p)| {
            let key = (k, l, p);
            let mut log = Vec::new();
            let c = build_ef_circuit(ansatz, k, l, p)?;
            let mut b = estimate(&c, tag_key(c.tag), p)?;
            if audit {
                log.push(dump(key, "estimated", &b));
            }
            let mut refs = None;
            if flags.clifford {
                let cr = build_ef_circuit(&reference, k, l, p)?;
                let mut br = estimate(&cr, tag_key(cr.tag) | REFERENCE_KEY, p)?;
                let ideal = circuit_bloch(&cr, None, 0)?;
                match clifford_mode {
                    CliffordMode::PerEntry => {
                        b = clifford_correct_bloch(&b, &br, &ideal)?;
                        if audit {
                            log.push(dump(key, "clifford", &b));
                        }
                    }
                    CliffordMode::PerObservable => {
                        if flags.purify {
                            br = purify(&br)?;
                        }
                        refs = Some((br, ideal));
                    }
                }
            }
            if flags.purify {
                b = purify(&b)?;
                if audit {
                    log.push(dump(key, "purified", &b));
                }
            }
            Ok(RecordOut { key, main: b, refs, audit: log })
        })
        .collect();

    let mut main = BTreeMap::new();
    let mut hw_ref = BTreeMap::new();
    let mut ideal_ref = BTreeMap::new();
    let mut audit_log = Vec::new();
    for o in outs {
        let o = o?;
        main.insert(o.key, o.main);
        if let Some((h, i)) = o.refs {
            hw_ref.insert(o.key, h);
            ideal_ref.insert(o.key, i);
        }
        audit_log.extend(o.audit);
    }
    let mode = if flags == MitigationFlags::RAW { MeasurementMode::Sampled } else { MeasurementMode::Mitigated };
    let kc = ansatz.k_count();
    let references = if hw_ref.is_empty() {
        None
    } else {
        Some((
            MeasurementSet::new(m, kc, mode, hw_ref)?,
            MeasurementSet::new(m, kc, MeasurementMode::Exact, ideal_ref)?,
        ))
    };
    Ok(MitigatedSets {
        main: MeasurementSet::new(m, kc, mode, main)?,
        references,
        flags,
        clifford_mode,
        calibration: cal,
        audit: audit_log,
    })
}
