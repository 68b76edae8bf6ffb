"""MISATO HDF5 -> bindmd complex files, with a conversion manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import h5py
import numpy as np

from bindmd.chem import RESIDUE_UNKNOWN
from bindmd.data import ComplexRecord, save_complex
from bindmd.forcenet import LigandState, ProteinStructure

from . import layout


class ConversionError(ValueError):
    """A complex that cannot be converted; recorded as a skip reason."""


@dataclass
class ConversionManifest:
    source: str
    out_dir: str
    converted: List[str] = field(default_factory=list)
    skipped: List[dict] = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.converted) + len(self.skipped)

    def to_dict(self) -> dict:
        return {"source": self.source, "out_dir": self.out_dir,
                "converted": self.converted, "skipped": self.skipped,
                "counts": self.counts, "total": self.total}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _dataset(group: h5py.Group, key: str) -> np.ndarray:
    name = layout.KEYS[key]
    if name not in group:
        raise ConversionError(f"missing dataset key {name!r}")
    return np.asarray(group[name])


def _is_peptide(group: h5py.Group, lig_residues: np.ndarray) -> bool:
    if bool(group.attrs.get(layout.PEPTIDE_ATTR, False)):
        return True
    # chain-style annotation: ligand atoms spanning several residue ids
    return len(np.unique(lig_residues)) > 1


def _extract_protein(z, residues, roles, coords0):
    """Backbone N/Ca/C per protein residue from the first snapshot."""
    res_ids = np.unique(residues)
    x_n, x_ca, x_c = [], [], []
    for rid in res_ids:
        pos = {}
        for role_name, code in layout.ROLE.items():
            if role_name == "other":
                continue
            hit = np.nonzero((residues == rid) & (roles == code))[0]
            if len(hit) != 1:
                raise ConversionError(
                    f"residue {int(rid)} missing backbone atom "
                    f"{role_name}")
            pos[role_name] = coords0[hit[0]]
        x_n.append(pos["N"])
        x_ca.append(pos["CA"])
        x_c.append(pos["C"])
    return res_ids, np.array(x_n), np.array(x_ca), np.array(x_c)


def convert_one(group: h5py.Group, cid: str, out_dir: Path) -> dict:
    """Convert one complex group; returns count info for the manifest."""
    for key in layout.REQUIRED:
        if layout.KEYS[key] not in group:
            raise ConversionError(
                f"missing dataset key {layout.KEYS[key]!r}")
    coords = _dataset(group, "coordinates").astype(np.float64)
    z = _dataset(group, "atomic_numbers").astype(int)
    residues = _dataset(group, "atom_residue").astype(int)
    roles = _dataset(group, "atom_role").astype(int)
    starts = _dataset(group, "molecule_starts").astype(int)
    if coords.ndim != 3 or coords.shape[1] != len(z):
        raise ConversionError(
            f"coordinate shape {coords.shape} does not match "
            f"{len(z)} atoms")

    lig_start = int(starts[-1])
    lig_slice = slice(lig_start, len(z))
    if _is_peptide(group, residues[lig_slice]):
        raise ConversionError("peptide ligand")

    heavy = np.nonzero(z[lig_slice] != 1)[0] + lig_start
    if len(heavy) == 0:
        raise ConversionError("ligand has no heavy atoms")

    prot_idx = np.arange(lig_start)
    res_ids, x_n, x_ca, x_c = _extract_protein(
        z[prot_idx], residues[prot_idx], roles[prot_idx], coords[0])
    if layout.KEYS["residue_types"] in group:
        res_types = _dataset(group, "residue_types").astype(int)
        if len(res_types) != len(res_ids):
            raise ConversionError(
                f"{len(res_types)} residue types for {len(res_ids)} "
                "residues")
    else:
        res_types = np.full(len(res_ids), RESIDUE_UNKNOWN)

    protein = ProteinStructure(residue_types=res_types, x_n=x_n, x_ca=x_ca,
                               x_c=x_c)
    ligand = LigandState(atomic_numbers=z[heavy], positions=coords[0, heavy])
    trajectory = coords[:, heavy]
    velocities = None
    if layout.KEYS["velocities"] in group:
        velocities = _dataset(group, "velocities")[:, heavy]

    metadata = {"source": "misato", "complex_id": cid,
                "hydrogens_dropped": int((z[lig_slice] == 1).sum()),
                "timestep": "1 snapshot interval"}
    if layout.KEYS["energy"] in group:
        metadata["interaction_energy"] = [
            float(e) for e in _dataset(group, "energy")]

    record = ComplexRecord(id=cid, ligand=ligand, protein=protein,
                           trajectory=trajectory, velocities=velocities,
                           metadata=metadata)
    save_complex(record, out_dir / f"{cid}.json")
    return {"atoms": ligand.n_atoms, "residues": protein.n_residues,
            "snapshots": record.n_snapshots}


def convert(source, out_dir, ids: Optional[Sequence[str]] = None
            ) -> ConversionManifest:
    """Convert every requested complex; skips record their reason."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ConversionManifest(source=str(source), out_dir=str(out_dir))
    with h5py.File(source, "r") as fh:
        wanted = list(ids) if ids is not None else sorted(fh.keys())
        for cid in wanted:
            if cid not in fh:
                manifest.skipped.append(
                    {"id": cid, "reason": "not present in source"})
                continue
            try:
                info = convert_one(fh[cid], cid, out_dir)
            except ConversionError as exc:
                manifest.skipped.append({"id": cid, "reason": str(exc)})
                continue
            manifest.converted.append(cid)
            manifest.counts[cid] = info
    manifest.save(out_dir / "manifest.json")
    return manifest
