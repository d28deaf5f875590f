//! Batch driver for entanglement-forging ground states, QSE excited states,
//! spectra, charges, bond-stretching scans and the exact reference.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use efqse::config::{MitigationSpec, RunConfig, RunMode, ScanManifest};
use efqse::forging::EFAnsatz;
use efqse::pipeline::{
    load_from_config, qse_charges, qse_peaks, run_ground, run_oracle, run_qse_stage, scan_geometry, scan_summary,
    spectrum, GroundOutcome, QseOutcome, ScanRow, Settings, System,
};
use efqse::Error;

#[derive(Parser)]
#[command(name = "efqse", version, about = "Entanglement forging and quantum subspace expansion driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// exact, sampled or noisy.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    shots: Option<u64>,
    /// raw, roem or em.
    #[arg(long, global = true)]
    mitigation: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// FCIDUMP file, overriding the configuration.
    #[arg(long, global = true)]
    fcidump: Option<PathBuf>,
    /// Auxiliary matrices JSON, overriding the configuration.
    #[arg(long, global = true)]
    aux: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the forged ansatz and evaluate its energy.
    Ground,
    /// Ground state followed by the subspace expansion.
    Qse,
    /// Dipole peaks and the broadened spectrum.
    Spectrum,
    /// Partial atomic charges of the EF and lowest QSE states.
    Charges,
    /// Ground (and optionally QSE) energies over a geometry manifest.
    Scan {
        /// Skip the subspace expansion.
        #[arg(long)]
        no_qse: bool,
    },
    /// Full configuration interaction reference.
    Oracle {
        /// Number of roots; all sector states when absent.
        #[arg(long)]
        roots: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ground => "ground",
            Command::Qse => "qse",
            Command::Spectrum => "spectrum",
            Command::Charges => "charges",
            Command::Scan { .. } => "scan",
            Command::Oracle { .. } => "oracle",
        }
    }
}

enum Failure {
    Config(String),
    Data(String),
    NotConverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::NotConverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn build_config(c: &Common) -> Outcome<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &c.mode {
        cfg.mode = RunMode::from_label(m)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.shots {
        cfg.shots = s;
    }
    if let Some(m) = &c.mitigation {
        cfg.mitigation = MitigationSpec::Label(m.clone());
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(f) = &c.fcidump {
        cfg.fcidump = Some(f.clone());
    }
    if let Some(a) = &c.aux {
        cfg.auxiliary = Some(a.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Writer {
    dir: PathBuf,
    meta: Value,
    csv_header: String,
}

impl Writer {
    fn new(cfg: &RunConfig, st: &Settings, command: &str) -> Outcome<Self> {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure::Data(format!("{}: {e}", cfg.output_dir.display())))?;
        let meta = json!({
            "code_version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": cfg.hash(),
            "mode": st.mode.label(),
            "mitigation": st.mitigation_label(),
            "mitigation_flags": st.flags,
            "clifford_mode": cfg.clifford_mode.label(),
            "seed": cfg.seed,
            "shots": cfg.shots,
        });
        let csv_header = format!(
            "# efqse {} command={} config_hash={} mode={} mitigation={} clifford_mode={} seed={}\n",
            env!("CARGO_PKG_VERSION"),
            command,
            cfg.hash(),
            st.mode.label(),
            st.mitigation_label(),
            cfg.clifford_mode.label(),
            cfg.seed
        );
        Ok(Self { dir: cfg.output_dir.clone(), meta, csv_header })
    }

    fn write_raw(&self, name: &str, content: &str) -> Outcome<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, content)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Outcome<()> {
        let doc = json!({ "metadata": self.meta, "result": value });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Data(e.to_string()))?;
        self.write_raw(name, &(text + "\n"))
    }

    fn csv(&self, name: &str, body: &str) -> Outcome<()> {
        self.write_raw(name, &format!("{}{body}", self.csv_header))
    }
}

fn read_ansatz(path: &Path) -> Outcome<EFAnsatz> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let inner = v.get("result").and_then(|r| r.get("ansatz")).cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn ground_stage(sys: &System, st: &Settings, w: &Writer) -> Outcome<GroundOutcome> {
    let ansatz = st.cfg.ansatz.as_deref().map(read_ansatz).transpose()?;
    let g = run_ground(sys, st, ansatz)?;
    w.json("ansatz.json", &json!({ "ansatz": g.ansatz }))?;
    w.json(
        "ground.json",
        &json!({
            "energy": g.energy,
            "exact_energy": g.exact_energy,
            "hf_energy": g.hf_energy,
            "converged": g.converged(),
            "initial_energy": g.optimization.as_ref().map(|o| o.initial_energy),
            "orbitals": sys.ints.m,
            "electrons": sys.ints.n_electrons(),
        }),
    )?;
    if let Some(o) = &g.optimization {
        w.csv("trace.csv", &o.trace_csv())?;
    }
    if st.cfg.audit {
        w.json("audit.json", &g.sets.audit)?;
    }
    Ok(g)
}

fn qse_stage(sys: &System, g: &GroundOutcome, st: &Settings, w: &Writer) -> Outcome<QseOutcome> {
    let n_diag = if st.cfg.charges.enabled && sys.aux.is_some() { st.cfg.charges.states } else { 0 };
    let q = run_qse_stage(sys, g, st, n_diag)?;
    w.json("qse_matrices.json", &q.matrices)?;
    let states: Vec<Value> = q
        .result
        .states
        .iter()
        .zip(&q.labels)
        .map(|(s, l)| {
            json!({
                "label": l,
                "energy": s.energy,
                "excitation_energy": s.energy.value - q.result.states[0].energy.value,
                "s2": s.s2,
                "spin": s.spin,
                "block": s.block,
                "unstable": s.unstable,
            })
        })
        .collect();
    w.json(
        "qse_states.json",
        &json!({
            "states": states,
            "block_spins": q.result.block_spins,
            "block_sizes": q.result.block_sizes,
            "spin_tol": q.result.spin_tol,
            "asymmetry": q.result.asymmetry,
        }),
    )?;
    w.json("qse_rdms.json", &json!({ "ef": q.ef_density, "states": q.diagonal, "labels": q.labels }))?;
    Ok(q)
}

fn converged_or(g: &GroundOutcome) -> Outcome<()> {
    if g.converged() {
        Ok(())
    } else {
        Err(Failure::NotConverged("ground-state optimization did not converge; outputs written".into()))
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    let cfg = build_config(&cli.common)?;
    let st = Settings::new(&cfg)?;
    let w = Writer::new(&cfg, &st, cli.command.name())?;
    match &cli.command {
        Command::Ground => {
            let sys = load_from_config(&cfg)?;
            let g = ground_stage(&sys, &st, &w)?;
            converged_or(&g)
        }
        Command::Qse => {
            let sys = load_from_config(&cfg)?;
            let g = ground_stage(&sys, &st, &w)?;
            qse_stage(&sys, &g, &st, &w)?;
            converged_or(&g)
        }
        Command::Spectrum => {
            let sys = load_from_config(&cfg)?;
            if sys.dipole().is_none() {
                return Err(Failure::Data("spectrum needs an auxiliary file with dipole matrices".into()));
            }
            let g = ground_stage(&sys, &st, &w)?;
            let q = qse_stage(&sys, &g, &st, &w)?;
            let peaks = qse_peaks(&sys, &g, &q)?;
            let spec = spectrum(&peaks, &st)?;
            w.csv("peaks.csv", &peaks.to_csv())?;
            w.csv("spectrum.csv", &spec.to_csv())?;
            w.json("peaks.json", &json!({ "peaks": peaks.peaks, "outside_grid": spec.outside, "grid": cfg.spectrum.grid, "broadening": cfg.spectrum.broadening }))?;
            converged_or(&g)
        }
        Command::Charges => {
            let sys = load_from_config(&cfg)?;
            if sys.aux.is_none() {
                return Err(Failure::Data("charges need an auxiliary file".into()));
            }
            let g = ground_stage(&sys, &st, &w)?;
            let q = qse_stage(&sys, &g, &st, &w)?;
            w.json("charges.json", &qse_charges(&sys, &g, &q, &st)?)?;
            converged_or(&g)
        }
        Command::Scan { no_qse } => {
            let path = cfg.scan.as_deref().ok_or_else(|| Failure::Config("scan needs a manifest".into()))?;
            let man = ScanManifest::read(path)?;
            let rows: Vec<Outcome<ScanRow>> = man
                .geometries
                .par_iter()
                .map(|g| {
                    let row = scan_geometry(g, &man, &st, !no_qse)?;
                    w.json(&format!("scan/{}.json", row.label), &row)?;
                    Ok(row)
                })
                .collect();
            let rows = rows.into_iter().collect::<Outcome<Vec<_>>>()?;
            let summary = scan_summary(&rows)?;
            let mut csv = String::from("label,r_angstrom,e_hf,e_fci,e_ef,e_ef_sigma,e_qse,e_qse_sigma,d_ef,d_qse,q_departing_ef,q_departing_qse,converged\n");
            for r in &rows {
                let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.10}"));
                csv.push_str(&format!(
                    "{},{},{:.10},{:.10},{:.10},{:.3e},{},{},{:.10},{},{},{},{}\n",
                    r.label,
                    r.r_angstrom,
                    r.e_hf,
                    r.e_fci,
                    r.e_ef.value,
                    r.e_ef.sigma,
                    opt(r.e_qse.map(|e| e.value)),
                    r.e_qse.map_or(String::new(), |e| format!("{:.3e}", e.sigma)),
                    r.e_ef.value - r.e_fci,
                    opt(r.e_qse.map(|e| e.value - r.e_fci)),
                    opt(r.q_departing_ef),
                    opt(r.q_departing_qse),
                    r.converged
                ));
            }
            w.csv("scan.csv", &csv)?;
            w.json("scan.json", &json!({ "system": man.system, "rows": rows, "summary": summary }))?;
            if rows.iter().all(|r| r.converged) {
                Ok(())
            } else {
                Err(Failure::NotConverged("at least one geometry did not converge; outputs written".into()))
            }
        }
        Command::Oracle { roots } => {
            let sys = load_from_config(&cfg)?;
            let n = roots.unwrap_or(usize::MAX);
            let o = run_oracle(&sys, n, cfg.charges.states, &st)?;
            let states: Vec<Value> = (0..o.fci.n_states())
                .map(|a| json!({ "label": o.labels[a], "energy": o.fci.energies[a], "s2": o.fci.s2[a] }))
                .collect();
            w.json("fci.json", &json!({ "states": states, "orbitals": sys.ints.m, "electrons": sys.ints.n_electrons() }))?;
            if let Some(p) = &o.peaks {
                w.csv("fci_peaks.csv", &p.to_csv())?;
                let spec = spectrum(p, &st)?;
                w.csv("fci_spectrum.csv", &spec.to_csv())?;
            }
            if let Some(c) = &o.charges {
                w.json("fci_charges.json", c)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("EFQSE_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("efqse: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
