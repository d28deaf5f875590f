//! Run configuration and scan manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forging::OptimizerConfig;
use crate::measurement::CliffordMode;
use crate::mitigation::MitigationFlags;
use crate::observables::{ChargeMethod, Grid, MIN_BROADENING};
use crate::qse::SPIN_TOL;
use crate::tomography::NoiseModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Exact Bloch vectors from the statevector.
    #[default]
    Exact,
    /// Finite shots, no hardware noise.
    Sampled,
    /// Finite shots with readout and two-qubit depolarizing noise.
    Noisy,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            RunMode::Exact => "exact",
            RunMode::Sampled => "sampled",
            RunMode::Noisy => "noisy",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RunMode::Exact),
            "sampled" => Ok(RunMode::Sampled),
            "noisy" => Ok(RunMode::Noisy),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected exact, sampled or noisy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub readout_p01: f64,
    pub readout_p10: f64,
    pub depol2: f64,
    pub trajectories: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { readout_p01: 0.02, readout_p10: 0.05, depol2: 0.01, trajectories: 20_000 }
    }
}

/// Either a preset label (`raw`, `roem`, `em`) or explicit stage toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MitigationSpec {
    Label(String),
    Flags(MitigationFlags),
}

impl Default for MitigationSpec {
    fn default() -> Self {
        MitigationSpec::Label("em".into())
    }
}

impl MitigationSpec {
    pub fn flags(&self) -> Result<MitigationFlags> {
        match self {
            MitigationSpec::Label(l) => MitigationFlags::from_label(l).map_err(|e| Error::Config(e.to_string())),
            MitigationSpec::Flags(f) => Ok(*f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QseConfig {
    pub spin_tol: f64,
}

impl Default for QseConfig {
    fn default() -> Self {
        Self { spin_tol: SPIN_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Energy grid in Hartree.
    pub grid: Grid,
    /// Minimum Gaussian width in Hartree.
    pub broadening: f64,
    pub include_elastic: bool,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { grid: Grid { start: 0.0, stop: 1.5, step: 1e-4 }, broadening: MIN_BROADENING, include_elastic: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChargeConfig {
    pub enabled: bool,
    pub method: ChargeMethod,
    /// Number of lowest QSE states to analyse.
    pub states: usize,
}

impl Default for ChargeConfig {
    fn default() -> Self {
        Self { enabled: true, method: ChargeMethod::Lowdin, states: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fcidump: Option<PathBuf>,
    pub auxiliary: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Lowest MOs folded into the core.
    pub frozen: usize,
    /// Active orbitals kept above the frozen core; all remaining when absent.
    pub active: Option<usize>,
    pub mode: RunMode,
    pub noise: NoiseConfig,
    pub mitigation: MitigationSpec,
    pub clifford_mode: CliffordMode,
    pub optimizer: OptimizerConfig,
    pub shots: u64,
    /// Seed of every measurement stream.
    pub seed: u64,
    pub qse: QseConfig,
    pub spectrum: SpectrumConfig,
    pub charges: ChargeConfig,
    /// Geometry manifest for `scan`.
    pub scan: Option<PathBuf>,
    /// Previously written ansatz; skips the optimization when set.
    pub ansatz: Option<PathBuf>,
    /// Record per-stage Bloch vectors of the mitigation pipeline.
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fcidump: None,
            auxiliary: None,
            output_dir: PathBuf::from("out"),
            frozen: 0,
            active: None,
            mode: RunMode::Exact,
            noise: NoiseConfig::default(),
            mitigation: MitigationSpec::default(),
            clifford_mode: CliffordMode::PerEntry,
            optimizer: OptimizerConfig::default(),
            shots: 100_000,
            seed: 0,
            qse: QseConfig::default(),
            spectrum: SpectrumConfig::default(),
            charges: ChargeConfig::default(),
            scan: None,
            ansatz: None,
            audit: false,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.fcidump, &mut cfg.auxiliary, &mut cfg.scan, &mut cfg.ansatz] {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.flags()?;
        if self.shots == 0 {
            return bad("shots must be positive".into());
        }
        if let Err(e) = self.noise_model().validate() {
            return bad(e.to_string());
        }
        if self.active == Some(0) {
            return bad("active space must contain at least one orbital".into());
        }
        let o = &self.optimizer;
        if !(o.fd_step > 0.0) || !(o.tol_grad > 0.0) || o.memory == 0 {
            return bad("optimizer fd_step, tol_grad and memory must be positive".into());
        }
        if !(self.qse.spin_tol > 0.0 && self.qse.spin_tol < 0.5) {
            return bad(format!("spin_tol {} outside (0, 0.5)", self.qse.spin_tol));
        }
        if let Err(e) = self.spectrum.grid.points() {
            return bad(e.to_string());
        }
        if !(self.spectrum.broadening > 0.0) {
            return bad("broadening must be positive".into());
        }
        Ok(())
    }

    pub fn flags(&self) -> Result<MitigationFlags> {
        self.mitigation.flags()
    }

    /// Noise model of the configured mode.
    pub fn noise_model(&self) -> NoiseModel {
        match self.mode {
            RunMode::Noisy => NoiseModel {
                readout_p01: self.noise.readout_p01,
                readout_p10: self.noise.readout_p10,
                depol2: self.noise.depol2,
                seed: self.seed,
                shots: self.shots,
                trajectories: self.noise.trajectories,
            },
            _ => NoiseModel::noiseless(self.shots, self.seed),
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output_dir: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&canonical).expect("serializable config");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGeometry {
    pub label: String,
    /// Stretched bond length in Angstrom.
    pub r_angstrom: f64,
    pub fcidump: PathBuf,
    #[serde(default)]
    pub aux: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanManifest {
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub basis: Option<String>,
    /// Overrides the run configuration when present.
    #[serde(default)]
    pub frozen: Option<usize>,
    #[serde(default)]
    pub active: Option<usize>,
    /// Label of the equilibrium geometry.
    #[serde(default)]
    pub equilibrium: Option<String>,
    /// Atom index of the departing fragment.
    #[serde(default)]
    pub departing_atom: Option<usize>,
    pub geometries: Vec<ScanGeometry>,
}

impl ScanManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut man: ScanManifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for g in &mut man.geometries {
            if g.fcidump.is_relative() {
                g.fcidump = base.join(&g.fcidump);
            }
            resolve(base, &mut g.aux);
        }
        if man.geometries.is_empty() {
            return Err(Error::Data("scan manifest lists no geometries".into()));
        }
        Ok(man)
    }

    pub fn geometry(&self, label: &str) -> Option<&ScanGeometry> {
        self.geometries.iter().find(|g| g.label == label)
    }
}
