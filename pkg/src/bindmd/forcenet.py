"""Multi-grained SE(3)-equivariant force model for protein-ligand binding.

Three towers share one parameter set:

* ligand tower: atom-pair frames, invariant edge features, gated vector
  message passing producing per-atom invariants h and equivariant vectors;
* protein tower: backbone-atom message passing scalarized on per-residue
  backbone frames, producing invariant per-residue representations;
* complex tower: ligand-atom/pocket-residue interaction edges scalarized on
  residue-pair frames, assembling the per-atom force as internal vector plus
  aggregated interaction vectors.

All vector outputs rotate with the input geometry; all h representations
are invariant under rigid motions. Mirroring the geometry does not mirror
the force (the pair frames contain a pseudo-vector axis).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import chem, geometry as geo
from .autodiff import ParamSet, Tensor, as_tensor

log = logging.getLogger(__name__)


@dataclass
class LigandState:
    """Ligand atoms: atomic numbers, positions (A), velocities (A per
    snapshot interval), per-atom masses (u)."""

    atomic_numbers: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None

    def __post_init__(self):
        self.atomic_numbers = chem.check_atomic_numbers(self.atomic_numbers)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.masses is None:
            self.masses = chem.element_masses(self.atomic_numbers)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=np.float64)
        n = len(self.atomic_numbers)
        if len(self.positions) != n or len(self.masses) != n or (
                self.velocities is not None and len(self.velocities) != n):
            raise ValueError("ligand field lengths disagree")
        if np.any(self.masses <= 0):
            raise ValueError("ligand masses must be positive")

    @property
    def n_atoms(self) -> int:
        return len(self.atomic_numbers)


@dataclass
class ProteinStructure:
    """Rigid protein: residue type indices (0..20) and backbone N/Ca/C
    coordinates per residue."""

    residue_types: np.ndarray
    x_n: np.ndarray
    x_ca: np.ndarray
    x_c: np.ndarray

    def __post_init__(self):
        self.residue_types = np.asarray(self.residue_types, dtype=int)
        if np.any((self.residue_types < 0) |
                  (self.residue_types > chem.RESIDUE_UNKNOWN)):
            raise ValueError("residue type index outside 0..20")
        self.x_n = np.asarray(self.x_n, dtype=np.float64)
        self.x_ca = np.asarray(self.x_ca, dtype=np.float64)
        self.x_c = np.asarray(self.x_c, dtype=np.float64)
        r = len(self.residue_types)
        if not (len(self.x_n) == len(self.x_ca) == len(self.x_c) == r):
            raise ValueError("protein field lengths disagree")

    @property
    def n_residues(self) -> int:
        return len(self.residue_types)

    def backbone_positions(self) -> np.ndarray:
        """Interleaved (3R, 3) backbone coordinates: N, Ca, C per residue."""
        out = np.empty((3 * self.n_residues, 3))
        out[0::3] = self.x_n
        out[1::3] = self.x_ca
        out[2::3] = self.x_c
        return out

    def backbone_masses(self) -> np.ndarray:
        return np.tile(chem.BACKBONE_ATOM_MASSES, self.n_residues)

    def shifted(self, delta: np.ndarray) -> "ProteinStructure":
        return ProteinStructure(self.residue_types, self.x_n + delta,
                                self.x_ca + delta, self.x_c + delta)


@dataclass
class TowerOutput:
    """Per-node invariant representation h and equivariant vector."""

    h: Tensor
    vec: Tensor


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    layers: int = 5
    cutoff: float = 5.0
    n_rbf: int = 16
    orthogonalize_frames: bool = False
    seed: int = 0


def rbf_expand(dist: Tensor, cutoff: float, n_rbf: int) -> Tensor:
    """Gaussian radial basis of distances; centers uniform on [0, cutoff],
    shared width sigma = cutoff / n_rbf."""
    centers = np.linspace(0.0, cutoff, n_rbf)
    sigma = cutoff / n_rbf
    d = ad.reshape(dist, (-1, 1))
    diff = d - Tensor(centers.reshape(1, -1))
    return ad.exp(diff * diff * (-1.0 / (2.0 * sigma * sigma)))


def _filter_pair_degeneracies(x: np.ndarray, pairs: np.ndarray,
                              label: str) -> np.ndarray:
    """Drop pairs whose frame would be degenerate (coincident or collinear
    with the origin); callers log how many were skipped."""
    if len(pairs) == 0:
        return pairs
    xi, xj = x[pairs[:, 0]], x[pairs[:, 1]]
    diff_ok = np.linalg.norm(xi - xj, axis=1) >= geo.DEGENERACY_TOL
    cross_ok = np.linalg.norm(np.cross(xi, xj), axis=1) >= geo.DEGENERACY_TOL
    keep = diff_ok & cross_ok
    dropped = int((~keep).sum())
    if dropped:
        log.warning("%s: skipped %d degenerate pair(s)", label, dropped)
    return pairs[keep]


class BindingForceModel:
    """Force and energy heads over the three-tower equivariant backbone."""

    def __init__(self, config: ModelConfig = None):
        self.config = config or ModelConfig()

    # -- parameters ----------------------------------------------------------
    def init_params(self, seed: Optional[int] = None) -> ParamSet:
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        params = ParamSet(seed=seed)
        d, nb = cfg.hidden_dim, cfg.n_rbf
        bound = np.sqrt(1.0 / nb)

        params.new_param("ligand.embed", rng.uniform(
            -1.0, 1.0, size=(chem.MAX_ATOMIC_NUMBER, d)))
        params.new_param("ligand.rbf_mix.w",
                         rng.uniform(-bound, bound, size=(nb, d)))
        ad.init_mlp(params, "ligand.edge_mlp", [6 * d, d, d], rng)
        for layer in range(cfg.layers):
            ad.init_mlp(params, f"ligand.gate_vec{layer}", [d, d, 1], rng,
                        zero_last=True)
            ad.init_mlp(params, f"ligand.gate_disp{layer}", [d, d, 1], rng,
                        zero_last=True)
            ad.init_mlp(params, f"ligand.upd_h{layer}", [d, d], rng)

        params.new_param("protein.embed", rng.uniform(-1.0, 1.0, size=(3, d)))
        params.new_param("protein.rbf_mix.w",
                         rng.uniform(-bound, bound, size=(nb, d)))
        params.new_param("protein.res_embed", rng.uniform(
            -1.0, 1.0, size=(chem.N_RESIDUE_TYPES, d)))
        ad.init_mlp(params, "protein.pair_mlp", [6 * d, d, d], rng)

        ad.init_mlp(params, "complex.edge_mlp", [3 * d, d, d], rng)
        ad.init_mlp(params, "complex.gate_vec", [d, d, 1], rng,
                    zero_last=True)
        ad.init_mlp(params, "complex.gate_disp", [d, d, 1], rng,
                    zero_last=True)
        ad.init_mlp(params, "energy.head", [d, d, 1], rng)
        return params

    # -- shared pieces ---------------------------------------------------
    def embed_atoms(self, atomic_numbers, params: ParamSet) -> Tensor:
        """Embedding-table row per atom; unknown elements are rejected."""
        z = chem.check_atomic_numbers(atomic_numbers)
        return params["ligand.embed"][z - 1]

    def rbf_weight(self, z: Tensor, positions: Tensor, pairs: np.ndarray,
                   params: ParamSet, prefix: str) -> Tensor:
        """Scale embeddings by a learned mix of summed neighbor RBFs;
        isolated atoms keep their embedding unchanged (scale = 1)."""
        n = z.shape[0]
        if len(pairs) == 0:
            return z
        diff = positions[pairs[:, 0]] - positions[pairs[:, 1]]
        dist = geo.norm_rows(diff)
        basis = rbf_expand(dist, self.config.cutoff, self.config.n_rbf)
        summed = ad.scatter(basis, pairs[:, 0], (n, self.config.n_rbf))
        scale = 1.0 + ad.matmul(summed, params[f"{prefix}.rbf_mix.w"])
        return z * scale

    # -- towers ------------------------------------------------------------
    def ligand_tower(self, ligand: LigandState, params: ParamSet,
                     positions: Optional[Tensor] = None) -> TowerOutput:
        cfg = self.config
        x = positions if positions is not None else Tensor(ligand.positions)
        n = ligand.n_atoms
        if n < 2:
            raise ValueError("ligand tower needs at least 2 atoms")
        pairs = geo.neighbor_pairs(x.data, cfg.cutoff)
        pairs = _filter_pair_degeneracies(x.data, pairs, "ligand frames")
        if len(pairs) == 0:
            raise ValueError(
                "ligand tower: no nondegenerate atom pairs within cutoff "
                f"{cfg.cutoff}")
        src, dst = pairs[:, 0], pairs[:, 1]

        z = self.embed_atoms(ligand.atomic_numbers, params)
        z = self.rbf_weight(z, x, pairs, params, "ligand")

        disp = x[src] - x[dst]
        mean_disp = ad.segment_mean(disp, src, n)
        d = cfg.hidden_dim
        h_eq = ad.reshape(z, (n, d, 1)) * ad.reshape(mean_disp, (n, 1, 3))

        frames = geo.pair_frames(x[src], x[dst],
                                 orthogonalize=cfg.orthogonalize_frames)
        pair_block = ad.concat([h_eq[src], h_eq[dst]], axis=1)
        scal = geo.scalarize_batch(pair_block, frames)
        flat = ad.reshape(scal, (len(pairs), 6 * d))
        h_edge = ad.mlp(params, "ligand.edge_mlp", flat)

        h = z
        vec = Tensor(np.zeros((n, 3)))
        for layer in range(cfg.layers):
            gate_v = ad.mlp(params, f"ligand.gate_vec{layer}", h_edge)
            gate_d = ad.mlp(params, f"ligand.gate_disp{layer}", h_edge)
            msg = vec[src] * gate_v + disp * gate_d
            vec = vec + ad.segment_mean(msg, src, n)
            h = h + ad.segment_mean(
                ad.mlp(params, f"ligand.upd_h{layer}", h_edge), src, n)
        return TowerOutput(h=h, vec=vec)

    def protein_tower(self, protein: ProteinStructure,
                      params: ParamSet) -> Tensor:
        """Invariant per-residue representation; residues with degenerate
        backbone frames keep only their type-embedding term."""
        cfg = self.config
        if protein.n_residues < 1:
            raise ValueError("protein tower needs at least one residue")
        bb = protein.backbone_positions()
        nb = len(bb)
        x = Tensor(bb)
        types = np.tile(np.arange(3), protein.n_residues)

        z = params["protein.embed"][types]
        pairs = geo.neighbor_pairs(bb, cfg.cutoff)
        z = self.rbf_weight(z, x, pairs, params, "protein")

        d = cfg.hidden_dim
        if len(pairs):
            disp = x[pairs[:, 0]] - x[pairs[:, 1]]
            mean_disp = ad.segment_mean(disp, pairs[:, 0], nb)
        else:
            mean_disp = Tensor(np.zeros((nb, 3)))
        h_eq = ad.reshape(z, (nb, d, 1)) * ad.reshape(mean_disp, (nb, 1, 3))

        e1n = np.linalg.norm(protein.x_n - protein.x_ca, axis=1)
        e2n = np.linalg.norm(protein.x_ca - protein.x_c, axis=1)
        cn = np.linalg.norm(np.cross(protein.x_n - protein.x_ca,
                                     protein.x_ca - protein.x_c), axis=1)
        valid = (e1n >= geo.DEGENERACY_TOL) & (e2n >= geo.DEGENERACY_TOL) \
            & (cn >= geo.DEGENERACY_TOL)
        if not np.any(valid):
            raise ValueError("protein tower: every backbone is degenerate")
        if not np.all(valid):
            log.warning("protein tower: skipped %d degenerate residue(s)",
                        int((~valid).sum()))
        vidx = np.nonzero(valid)[0]
        frames = geo.backbone_frames(protein.x_n[vidx], protein.x_ca[vidx],
                                     protein.x_c[vidx])

        n_idx, ca_idx, c_idx = 3 * vidx, 3 * vidx + 1, 3 * vidx + 2
        pair_terms = []
        for a_idx, b_idx in ((n_idx, ca_idx), (ca_idx, c_idx)):
            block = ad.concat([h_eq[a_idx], h_eq[b_idx]], axis=1)
            scal = geo.scalarize_batch(block, frames)
            flat = ad.reshape(scal, (len(vidx), 6 * d))
            pair_terms.append(ad.mlp(params, "protein.pair_mlp", flat))
        pair_mean = (pair_terms[0] + pair_terms[1]) * 0.5
        pair_full = ad.scatter(pair_mean, vidx,
                               (protein.n_residues, d))
        return params["protein.res_embed"][protein.residue_types] + pair_full

    def complex_tower(self, ligand_out: TowerOutput, protein_h: Tensor,
                      ligand_positions: Tensor,
                      protein: ProteinStructure, params: ParamSet):
        """Per-atom forces; returns (force, interaction features or None)."""
        cfg = self.config
        n = ligand_out.vec.shape[0]
        cas = protein.x_ca
        pocket = geo.pocket_residues(ligand_positions.data, cas, cfg.cutoff)
        partner = geo.pocket_partner(pocket)

        # residues usable for interaction need a nondegenerate pair frame
        usable = []
        for r in pocket:
            p = partner.get(int(r))
            if p is None:
                continue
            if np.linalg.norm(cas[r] - cas[p]) < geo.DEGENERACY_TOL:
                continue
            if np.linalg.norm(np.cross(cas[r], cas[p])) < geo.DEGENERACY_TOL:
                continue
            usable.append(int(r))
        if usable:
            pairs = geo.cross_pairs(ligand_positions.data, cas[usable],
                                    cfg.cutoff)
        else:
            pairs = np.zeros((0, 2), dtype=int)
        if len(pairs) == 0:
            return ligand_out.vec, None

        li = pairs[:, 0]
        rj = np.asarray(usable)[pairs[:, 1]]
        pj = np.array([partner[int(r)] for r in rj])
        frames = geo.pair_frames(Tensor(cas[rj]), Tensor(cas[pj]),
                                 orthogonalize=cfg.orthogonalize_frames)

        d = cfg.hidden_dim
        disp = ligand_positions[li] - Tensor(cas)[rj]
        mixed = ligand_out.h[li] + protein_h[rj]
        h_vec = ad.reshape(mixed, (len(pairs), d, 1)) * \
            ad.reshape(disp, (len(pairs), 1, 3))
        scal = geo.scalarize_batch(h_vec, frames)
        flat = ad.reshape(scal, (len(pairs), 3 * d))
        h_int = ad.mlp(params, "complex.edge_mlp", flat)

        gate_v = ad.mlp(params, "complex.gate_vec", h_int)
        gate_d = ad.mlp(params, "complex.gate_disp", h_int)
        vec_pl = ligand_out.vec[li] * gate_v + disp * gate_d
        force = ligand_out.vec + ad.segment_mean(vec_pl, li, n)
        return force, h_int

    # -- heads -------------------------------------------------------------
    def _check_centered(self, ligand: LigandState,
                        protein: ProteinStructure,
                        positions: np.ndarray) -> None:
        all_pos = np.concatenate([positions, protein.backbone_positions()])
        all_m = np.concatenate([ligand.masses, protein.backbone_masses()])
        center = (all_pos * all_m[:, None]).sum(0) / all_m.sum()
        if np.linalg.norm(center) >= 1e-6:
            raise ValueError(
                f"inputs are not centralized (|centroid| = "
                f"{np.linalg.norm(center):.3e}); call centralize_complex "
                "first")

    def predict_force(self, ligand: LigandState, protein: ProteinStructure,
                      params: ParamSet, positions: Optional[Tensor] = None,
                      protein_h: Optional[Tensor] = None,
                      check_centered: bool = True) -> Tensor:
        x = positions if positions is not None else Tensor(ligand.positions)
        if check_centered:
            self._check_centered(ligand, protein, x.data)
        lig = self.ligand_tower(ligand, params, positions=x)
        if protein_h is None:
            protein_h = self.protein_tower(protein, params)
        force, _ = self.complex_tower(lig, protein_h, x, protein, params)
        return force

    def predict_energy(self, ligand: LigandState, protein: ProteinStructure,
                       params: ParamSet, positions: Optional[Tensor] = None,
                       protein_h: Optional[Tensor] = None,
                       check_centered: bool = True) -> Tensor:
        x = positions if positions is not None else Tensor(ligand.positions)
        if check_centered:
            self._check_centered(ligand, protein, x.data)
        lig = self.ligand_tower(ligand, params, positions=x)
        if protein_h is None:
            protein_h = self.protein_tower(protein, params)
        _, h_int = self.complex_tower(lig, protein_h, x, protein, params)
        pooled = ad.tsum(lig.h, axis=0)
        if h_int is not None:
            pooled = pooled + ad.tsum(h_int, axis=0)
        out = ad.mlp(params, "energy.head",
                     ad.reshape(pooled, (1, self.config.hidden_dim)))
        return ad.reshape(out, ())

    def energy_force(self, ligand: LigandState, protein: ProteinStructure,
                     params: ParamSet, positions: Optional[Tensor] = None,
                     check_centered: bool = True,
                     create_graph: bool = False) -> Tensor:
        """Conservative force -dE/dx from the energy head."""
        x = positions if positions is not None else \
            Tensor(ligand.positions, requires_grad=True)
        if not x.in_graph:
            x = Tensor(x.data, requires_grad=True)
        energy = self.predict_energy(ligand, protein, params, positions=x,
                                     check_centered=check_centered)
        (gx,) = ad.grad(energy, [x], create_graph=create_graph)
        return ad.neg(gx)


def centralize_complex(ligand_positions: np.ndarray,
                       ligand_masses: np.ndarray,
                       protein: ProteinStructure):
    """Remove the mass-weighted center of the whole complex; returns the
    shifted ligand positions, the shifted protein, and the center."""
    all_pos = np.concatenate([ligand_positions,
                              protein.backbone_positions()])
    all_m = np.concatenate([ligand_masses, protein.backbone_masses()])
    _, center = geo.centralize(all_pos, all_m)
    return ligand_positions - center, protein.shifted(-center), center
