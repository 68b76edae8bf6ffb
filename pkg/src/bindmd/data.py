"""Complex/trajectory file format and synthetic ground-truth generators.

Files are structured JSON text: a header with format version, id, counts and
units (angstrom coordinates, snapshot-interval time), then the ligand,
protein, and per-snapshot coordinate blocks. JSON float serialization uses
the shortest round-trip representation, so numeric fields survive a
save/load cycle exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import chem
from . import dynamics as dyn
from .autodiff import Tensor
from .forcenet import LigandState, ProteinStructure

FORMAT_VERSION = 1


class ComplexFormatError(ValueError):
    """Raised for malformed or unsupported complex files."""


@dataclass
class ComplexRecord:
    """One protein-ligand complex with its ligand trajectory."""

    id: str
    ligand: LigandState
    protein: ProteinStructure
    trajectory: np.ndarray
    velocities: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
        if self.trajectory.ndim != 3 or \
                self.trajectory.shape[1:] != (self.ligand.n_atoms, 3):
            raise ComplexFormatError(
                f"trajectory shape {self.trajectory.shape} does not match "
                f"{self.ligand.n_atoms} ligand atoms")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=np.float64)
            if self.velocities.shape != self.trajectory.shape:
                raise ComplexFormatError(
                    "velocity block shape differs from trajectory")

    @property
    def n_snapshots(self) -> int:
        return len(self.trajectory)


def save_complex(record: ComplexRecord, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "id": record.id,
        "units": {"length": "angstrom", "time": "snapshot-interval"},
        "counts": {
            "atoms": record.ligand.n_atoms,
            "residues": record.protein.n_residues,
            "snapshots": record.n_snapshots,
        },
        "ligand": {
            "atomic_numbers": record.ligand.atomic_numbers.tolist(),
            "positions": record.ligand.positions.tolist(),
            "masses": record.ligand.masses.tolist(),
        },
        "protein": {
            "residue_types": record.protein.residue_types.tolist(),
            "x_n": record.protein.x_n.tolist(),
            "x_ca": record.protein.x_ca.tolist(),
            "x_c": record.protein.x_c.tolist(),
        },
        "trajectory": record.trajectory.tolist(),
        "metadata": record.metadata,
    }
    if record.velocities is not None:
        doc["velocities"] = record.velocities.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_complex(path) -> ComplexRecord:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ComplexFormatError(
            f"{path}: malformed complex file at offset {exc.pos}: "
            f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ComplexFormatError(f"{path}: top-level value is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ComplexFormatError(
            f"{path}: unsupported format version {version!r} "
            f"(expected {FORMAT_VERSION})")
    try:
        lig = doc["ligand"]
        prot = doc["protein"]
        ligand = LigandState(atomic_numbers=lig["atomic_numbers"],
                             positions=lig["positions"],
                             masses=lig.get("masses"))
        protein = ProteinStructure(residue_types=prot["residue_types"],
                                   x_n=prot["x_n"], x_ca=prot["x_ca"],
                                   x_c=prot["x_c"])
        record = ComplexRecord(
            id=doc["id"], ligand=ligand, protein=protein,
            trajectory=doc["trajectory"],
            velocities=doc.get("velocities"),
            metadata=doc.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ComplexFormatError(f"{path}: bad field: {exc}") from exc
    counts = doc.get("counts", {})
    for key, actual in (("atoms", ligand.n_atoms),
                        ("residues", protein.n_residues),
                        ("snapshots", record.n_snapshots)):
        if key in counts and counts[key] != actual:
            raise ComplexFormatError(
                f"{path}: header count {key}={counts[key]} but body has "
                f"{actual}")
    return record


# -- synthetic generators ---------------------------------------------------

@dataclass
class SyntheticSpec:
    """Desk-scale stand-in for converted MD data: an analytic force field
    integrated with fine velocity Verlet, sampled every ``stride`` steps so
    dt_fine * stride equals one snapshot interval."""

    kind: str = "harmonic-tether"
    n_atoms: int = 2
    n_sites: int = 4
    stiffness: float = 1.0
    epsilon: float = 0.5
    sigma: float = 1.5
    dt_fine: float = 0.05
    stride: int = 20
    n_snapshots: int = 100
    seed: int = 0
    mass: Optional[float] = None
    offset_scale: float = 0.5
    velocity_scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("harmonic-tether", "lennard-jones-binding"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if abs(self.dt_fine * self.stride - 1.0) > 1e-9:
            raise ValueError("dt_fine * stride must equal one snapshot "
                             "interval")
        if self.n_atoms < 1 or self.n_sites < 2 or self.n_snapshots < 2:
            raise ValueError("need >= 1 atom, >= 2 sites, >= 2 snapshots")
        if min(self.stiffness, self.epsilon, self.sigma, self.dt_fine) <= 0:
            raise ValueError("force-field parameters must be positive")


# fixed backbone offsets so every synthetic residue has a nondegenerate frame
_BB_N = np.array([1.46, 0.0, 0.0])
_BB_C = np.array([-0.55, 1.40, 0.0])
_LIGAND_ELEMENTS = np.array([6, 7, 8, 16])


def _site_layout(spec: SyntheticSpec) -> np.ndarray:
    """Protein anchor sites on a coarse ring, spacing a few angstrom."""
    rng = np.random.default_rng(spec.seed)
    angles = np.linspace(0.0, 2.0 * np.pi, spec.n_sites, endpoint=False)
    # radius 2 keeps adjacent sites well inside the default 5 A cutoff
    ring = np.stack([2.0 * np.cos(angles), 2.0 * np.sin(angles),
                     np.zeros_like(angles)], axis=1)
    return ring + rng.normal(scale=0.2, size=ring.shape)


def _synthetic_protein(spec: SyntheticSpec, sites: np.ndarray
                       ) -> ProteinStructure:
    types = np.arange(spec.n_sites) % 20
    return ProteinStructure(residue_types=types, x_n=sites + _BB_N,
                            x_ca=sites, x_c=sites + _BB_C)


def _tether_targets(spec: SyntheticSpec, sites: np.ndarray) -> np.ndarray:
    return sites[np.arange(spec.n_atoms) % spec.n_sites]


def synthetic_force_fn(spec: SyntheticSpec, sites: np.ndarray):
    """Analytic ligand force field over plain arrays (wrapped for Tensor)."""
    if spec.kind == "harmonic-tether":
        anchors = _tether_targets(spec, sites)

        def force(x):
            xv = x.data if isinstance(x, Tensor) else np.asarray(x)
            return Tensor(-spec.stiffness * (xv - anchors))

        def energy(x):
            return 0.5 * spec.stiffness * np.sum((x - anchors) ** 2)

        return force, energy

    def force(x):
        xv = x.data if isinstance(x, Tensor) else np.asarray(x)
        diff = xv[:, None, :] - sites[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        s6 = (spec.sigma ** 2 / r2) ** 3
        mag = 24.0 * spec.epsilon * (2.0 * s6 * s6 - s6) / r2
        return Tensor(np.sum(mag[:, :, None] * diff, axis=1))

    def energy(x):
        diff = x[:, None, :] - sites[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        s6 = (spec.sigma ** 2 / r2) ** 3
        return float(np.sum(4.0 * spec.epsilon * (s6 * s6 - s6)))

    return force, energy


def generate_synthetic(spec: SyntheticSpec) -> ComplexRecord:
    rng = np.random.default_rng(spec.seed)
    sites = _site_layout(spec)
    protein = _synthetic_protein(spec, sites)
    force, energy = synthetic_force_fn(spec, sites)

    elements = _LIGAND_ELEMENTS[np.arange(spec.n_atoms)
                                % len(_LIGAND_ELEMENTS)]
    if spec.kind == "harmonic-tether":
        x0 = _tether_targets(spec, sites) + \
            rng.normal(scale=spec.offset_scale, size=(spec.n_atoms, 3))
    else:
        # start near the LJ well radius of the first sites
        anchors = _tether_targets(spec, sites)
        x0 = anchors + 2.0 ** (1.0 / 6.0) * spec.sigma * np.array(
            [0.0, 0.0, 1.0]) + rng.normal(scale=0.05 * spec.offset_scale,
                                          size=(spec.n_atoms, 3))
    if spec.mass is not None:
        masses = np.full(spec.n_atoms, float(spec.mass))
    else:
        masses = chem.element_masses(elements)
    ligand = LigandState(atomic_numbers=elements, positions=x0,
                         masses=masses)

    v = spec.velocity_scale * rng.normal(size=(spec.n_atoms, 3))
    x = x0.copy()
    traj = [x.copy()]
    vels = [v.copy()]
    kin0 = 0.5 * np.sum(masses[:, None] * v * v)
    e0 = kin0 + energy(x)
    e_scale = max(abs(e0), 1.0)
    worst_drift = 0.0
    for _ in range(spec.n_snapshots - 1):
        for _ in range(spec.stride):
            try:
                x, v = dyn.velocity_verlet_step(x, v, force, masses,
                                                spec.dt_fine)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"synthetic integration blew up ({exc}); "
                    "use a smaller dt_fine") from exc
        e = 0.5 * np.sum(masses[:, None] * v * v) + energy(x)
        worst_drift = max(worst_drift, abs(e - e0) / e_scale)
        traj.append(x.copy())
        vels.append(v.copy())

    meta = {
        "source": "synthetic",
        "kind": spec.kind,
        "stiffness": spec.stiffness,
        "epsilon": spec.epsilon,
        "sigma": spec.sigma,
        "dt_fine": spec.dt_fine,
        "stride": spec.stride,
        "seed": spec.seed,
        "sites": sites.tolist(),
        "masses": masses.tolist(),
        "energy_drift": worst_drift,
        "timestep": "1 snapshot interval",
    }
    return ComplexRecord(id=f"SYN-{spec.kind}-{spec.seed}", ligand=ligand,
                         protein=protein, trajectory=np.array(traj),
                         velocities=np.array(vels), metadata=meta)
