"""Appendix-E-style dataset statistics over a directory of converted files.

The report is CSV with a section column: histograms of ligand atom counts
and protein residue counts, plus the per-snapshot energy gap E_t - E_0 for
every complex that carries an interaction-energy series.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

from bindmd.data import ComplexFormatError, load_complex


def collect(out_dir):
    """Load every converted complex in the directory, sorted by filename."""
    paths = sorted(Path(out_dir).glob("*.json"))
    records = []
    for p in paths:
        if p.name == "manifest.json":
            continue
        try:
            records.append(load_complex(p))
        except ComplexFormatError:
            continue
    if not records:
        raise FileNotFoundError(f"no converted complex files in {out_dir}")
    return records


def stats_report(out_dir) -> str:
    records = collect(out_dir)
    atom_hist = Counter(r.ligand.n_atoms for r in records)
    res_hist = Counter(r.protein.n_residues for r in records)

    lines = ["section,key,value"]
    for n in sorted(atom_hist):
        lines.append(f"ligand_atoms,{n},{atom_hist[n]}")
    for n in sorted(res_hist):
        lines.append(f"protein_residues,{n},{res_hist[n]}")
    for r in records:
        energies = r.metadata.get("interaction_energy")
        if not energies:
            continue
        e0 = energies[0]
        for t, e in enumerate(energies):
            lines.append(f"energy_gap,{r.id}:{t},{e - e0!r}")
    return "\n".join(lines) + "\n"
