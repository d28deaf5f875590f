"""Generate the bundled integral files with PySCF.

Writes, under crates/core/data/:

* h2/      H2 / STO-3G at 0.74 A: FCIDUMP and auxiliary matrices (2 orbitals).
* h3sp/    H3S+ / STO-6G scan stretching one SH bond: full-MO FCIDUMPs, auxiliary
           matrices, a manifest and PySCF reference values.

Usage: python python/generate_data.py [--out crates/core/data] [--step 0.1]
"""

import argparse
import json
from pathlib import Path

import numpy as np
from pyscf import gto, lo, mcscf, scf
from pyscf.fci import addons, direct_spin1
from pyscf.tools import fcidump
from scipy.optimize import brentq

SH_EQ = 1.357
HSH_DEG = 95.0
N_FROZEN = 6
N_ACTIVE = 6


def h3sp_geometry(r_stretch):
    """S at the origin, three H on a C3v cone; H1 moved to r_stretch along its bond."""
    hsh = np.deg2rad(HSH_DEG)
    beta = brentq(lambda b: np.cos(b) ** 2 + np.sin(b) ** 2 * np.cos(2 * np.pi / 3) - np.cos(hsh), 0.1, 1.5)
    atoms = [("S", (0.0, 0.0, 0.0))]
    for k in range(3):
        ph = 2 * np.pi * k / 3
        v = np.array([np.sin(beta) * np.cos(ph), np.sin(beta) * np.sin(ph), -np.cos(beta)])
        atoms.append(("H", tuple(v * (r_stretch if k == 0 else SH_EQ))))
    return atoms


def rows(a):
    return [[float(x) for x in r] for r in np.asarray(a)]


def aux_matrices(mol, mf, frozen, active):
    c = mf.mo_coeff
    ca = c[:, active]
    # electronic dipole operator -r, origin at the S nucleus, atomic units
    r = mol.intor("int1e_r")
    dip = [rows(-(ca.T @ r[x] @ ca)) for x in range(3)]
    c_lo = lo.orth_ao(mol, "meta_lowdin")
    ao_atom = [int(mol.bas_atom(b)) for b in range(mol.nbas) for _ in range(mol.bas_len_cart(b) if mol.cart else 2 * mol.bas_angular(b) + 1)]
    assert len(ao_atom) == mol.nao
    return {
        "atoms": [mol.atom_symbol(i) for i in range(mol.natm)],
        "nuclear_charges": [float(z) for z in mol.atom_charges()],
        "ao_atom": ao_atom,
        "overlap": rows(mol.intor("int1e_ovlp")),
        "mo_coeff": rows(c),
        "frozen": list(frozen),
        "active": list(active),
        "total_charge": float(mol.charge),
        "orthogonalizer": rows(c_lo),
        "dipole_mo": dip,
    }


def run_rhf(mol):
    mf = scf.RHF(mol)
    mf.conv_tol = 1e-12
    mf.kernel()
    if not mf.converged:
        raise RuntimeError("RHF did not converge")
    return mf


def write_h2(out):
    d = out / "h2"
    d.mkdir(parents=True, exist_ok=True)
    mol = gto.M(atom="H 0 0 0; H 0 0 0.74", basis="sto-3g", verbose=0, symmetry=False)
    mf = run_rhf(mol)
    fcidump.from_scf(mf, str(d / "h2.fcidump"), tol=1e-14)
    (d / "h2_aux.json").write_text(json.dumps(aux_matrices(mol, mf, [], [0, 1])))
    mc = mcscf.CASCI(mf, 2, 2)
    mc.fcisolver.nroots = 4
    e = mc.kernel()[0]
    (d / "reference.json").write_text(json.dumps({"rhf": mf.e_tot, "fci": [float(x) for x in e]}, indent=1))


def casci_singlets(mf, nroots):
    mc = mcscf.CASCI(mf, N_ACTIVE, N_ACTIVE)
    mc.fcisolver = addons.fix_spin_(direct_spin1.FCI(mf.mol), ss=0)
    mc.fcisolver.nroots = nroots
    mc.fcisolver.conv_tol = 1e-12
    e = mc.kernel()[0]
    return mc, np.atleast_1d(e)


def write_h3sp(out, step):
    d = out / "h3sp"
    d.mkdir(parents=True, exist_ok=True)
    n = int(round((3.957 - 0.757) / step)) + 1
    grid = [round(0.757 + i * step, 3) for i in range(n)]
    frozen = list(range(N_FROZEN))
    active = list(range(N_FROZEN, N_FROZEN + N_ACTIVE))
    geometries = []
    reference = []
    for r in grid:
        mol = gto.M(atom=h3sp_geometry(r), basis="sto-6g", charge=1, verbose=0, symmetry=False)
        mf = run_rhf(mol)
        tag = f"R{r:.3f}"
        fcidump.from_scf(mf, str(d / f"{tag}.fcidump"), tol=1e-14)
        (d / f"{tag}_aux.json").write_text(json.dumps(aux_matrices(mol, mf, frozen, active)))
        mc, e = casci_singlets(mf, 1)
        dm = mc.make_rdm1()
        _, chg = scf.hf.mulliken_meta(mol, dm, verbose=0, pre_orth_method="ANO")
        reference.append({"r_angstrom": r, "rhf": mf.e_tot, "fci_ground": float(e[0]), "meta_lowdin_charges": [float(q) for q in chg]})
        geometries.append({"label": f"{r:.3f}", "r_angstrom": r, "fcidump": f"{tag}.fcidump", "aux": f"{tag}_aux.json"})
        print(f"{tag}: E_RHF={mf.e_tot:.8f} E_CASCI={e[0]:.8f}", flush=True)

    mol = gto.M(atom=h3sp_geometry(SH_EQ), basis="sto-6g", charge=1, verbose=0, symmetry=False)
    mf = run_rhf(mol)
    _, singlets = casci_singlets(mf, 3)
    mc = mcscf.CASCI(mf, N_ACTIVE, N_ACTIVE)
    mc.fcisolver.nroots = 12
    mc.fcisolver.conv_tol = 1e-12
    e_all = mc.kernel()[0]
    manifest = {
        "system": "H3S+",
        "basis": "STO-6G",
        "frozen": N_FROZEN,
        "active": N_ACTIVE,
        "equilibrium": f"{SH_EQ:.3f}",
        "departing_atom": 1,
        "geometries": geometries,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (d / "reference.json").write_text(
        json.dumps(
            {
                "scan": reference,
                "equilibrium": {"singlets": [float(x) for x in singlets], "roots": [float(x) for x in e_all]},
            },
            indent=1,
        )
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "crates" / "core" / "data"))
    ap.add_argument("--step", type=float, default=0.1)
    args = ap.parse_args()
    out = Path(args.out)
    write_h2(out)
    write_h3sp(out, args.step)


if __name__ == "__main__":
    main()
