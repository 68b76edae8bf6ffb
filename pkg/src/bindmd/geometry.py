"""Vector frames, scalarization, and neighbor geometry.

Frames come in three granularities: per atom pair for the ligand, per
residue backbone for the protein, and per consecutive pocket-residue pair
for the complex. All constructors are differentiable through the autodiff
tensors so that forces built on frames carry gradients w.r.t. coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

DEGENERACY_TOL = 1e-10


class DegenerateFrameError(ValueError):
    """Frame construction hit a near-zero norm (collinear/coincident input)."""


# --------------------------------------------------------------------------
# vector helpers (rows of (n, 3) tensors)

def cross_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cross product of two (n, 3) tensors."""
    a, b = as_tensor(a), as_tensor(b)
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    return ad.stack([ay * bz - az * by,
                     az * bx - ax * bz,
                     ax * by - ay * bx], axis=1)


def norm_rows(a: Tensor) -> Tensor:
    """Row-wise Euclidean norm, shape (n, 1)."""
    a = as_tensor(a)
    return ad.sqrt(ad.tsum(a * a, axis=1, keepdims=True))


def normalize_rows(a: Tensor, what: str = "vector") -> Tensor:
    n = norm_rows(a)
    if np.any(n.data < DEGENERACY_TOL):
        bad = int(np.argmin(n.data))
        raise DegenerateFrameError(
            f"{what}: row {bad} has norm {n.data.ravel()[bad]:.3e} below "
            f"{DEGENERACY_TOL}")
    return a / n


@dataclass
class FrameBasis:
    """Ordered orthogonal-direction triple; ``matrix`` rows are e1, e2, e3.

    For batched use ``matrix`` has shape (n, 3, 3); single frames are (3, 3).
    """

    matrix: Tensor

    @property
    def e1(self) -> np.ndarray:
        return self.matrix.data[..., 0, :]

    @property
    def e2(self) -> np.ndarray:
        return self.matrix.data[..., 1, :]

    @property
    def e3(self) -> np.ndarray:
        return self.matrix.data[..., 2, :]


# --------------------------------------------------------------------------
# centering and neighbor lists

def centralize(positions, masses):
    """Shift so the mass-weighted centroid sits at the origin.

    Returns (shifted positions, subtracted center). Accepts and returns
    plain arrays; this runs on data, not through the graph.
    """
    positions = np.asarray(positions, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    if positions.size == 0:
        raise ValueError("centralize: empty position list")
    if np.any(masses <= 0):
        raise ValueError("centralize: masses must be positive")
    center = (positions * masses[:, None]).sum(axis=0) / masses.sum()
    return positions - center, center


def neighbor_pairs(positions, cutoff: float):
    """All directed index pairs (i, j), i != j, with ||xi - xj|| <= cutoff."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if n < 2:
        return np.zeros((0, 2), dtype=int)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    mask = (dist <= cutoff) & ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(mask)
    return np.stack([ii, jj], axis=1)


def cross_pairs(pos_a, pos_b, cutoff: float):
    """Directed pairs (i in a, j in b) within the cutoff distance."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    pos_a = np.asarray(pos_a, dtype=np.float64)
    pos_b = np.asarray(pos_b, dtype=np.float64)
    if len(pos_a) == 0 or len(pos_b) == 0:
        return np.zeros((0, 2), dtype=int)
    diff = pos_a[:, None, :] - pos_b[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    ii, jj = np.nonzero(dist <= cutoff)
    return np.stack([ii, jj], axis=1)


# --------------------------------------------------------------------------
# frame constructors

def gram_schmidt(v1, v2, v3) -> FrameBasis:
    """Orthonormalize three vectors in order; raises on near-dependence."""
    v1 = as_tensor(np.asarray(v1, dtype=float) if not isinstance(v1, Tensor)
                   else v1)
    v2, v3 = as_tensor(v2), as_tensor(v3)
    u1 = ad.reshape(v1, (1, 3))
    e1 = normalize_rows(u1, "gram_schmidt e1")
    v2r = ad.reshape(v2, (1, 3))
    u2 = v2r - e1 * ad.tsum(e1 * v2r, axis=1, keepdims=True)
    if norm_rows(u2).data.item() < DEGENERACY_TOL:
        raise DegenerateFrameError("gram_schmidt: v2 is collinear with v1")
    e2 = normalize_rows(u2, "gram_schmidt e2")
    v3r = ad.reshape(v3, (1, 3))
    u3 = v3r - e1 * ad.tsum(e1 * v3r, axis=1, keepdims=True) \
        - e2 * ad.tsum(e2 * v3r, axis=1, keepdims=True)
    if norm_rows(u3).data.item() < DEGENERACY_TOL:
        raise DegenerateFrameError(
            "gram_schmidt: v3 lies in the span of v1, v2")
    e3 = normalize_rows(u3, "gram_schmidt e3")
    return FrameBasis(ad.concat([e1, e2, e3], axis=0))


def pair_frames(xi: Tensor, xj: Tensor, orthogonalize: bool = False
                ) -> FrameBasis:
    """Batched frame from absolute positions: e1 = (xi-xj)^, e2 = (xi x xj)^,
    e3 = e1 x e2. Inputs are (n, 3); used for both the ligand atom-pair
    frames and the complex residue-pair frames.
    """
    xi, xj = as_tensor(xi), as_tensor(xj)
    e1 = normalize_rows(xi - xj, "pair frame e1 (coincident points)")
    e2 = normalize_rows(cross_rows(xi, xj),
                        "pair frame e2 (collinear with origin)")
    e3 = cross_rows(e1, e2)
    mats = ad.stack([e1, e2, e3], axis=1)
    if orthogonalize:
        fixed = [gram_schmidt(e1.data[k], e2.data[k], e3.data[k]).matrix
                 for k in range(mats.shape[0])]
        mats = ad.stack(fixed, axis=0)
    return FrameBasis(mats)


def atom_frame(xi, xj) -> FrameBasis:
    """Frame for one (already centralized) atom pair."""
    f = pair_frames(ad.reshape(as_tensor(np.asarray(xi, dtype=float)
                                         if not isinstance(xi, Tensor)
                                         else xi), (1, 3)),
                    ad.reshape(as_tensor(np.asarray(xj, dtype=float)
                                         if not isinstance(xj, Tensor)
                                         else xj), (1, 3)))
    return FrameBasis(ad.reshape(f.matrix, (3, 3)))


def backbone_frames(x_n: Tensor, x_ca: Tensor, x_c: Tensor) -> FrameBasis:
    """Batched residue frames: e1 = (N-Ca)^, e2 = (Ca-C)^, e3 = (e1 x e2)^.

    e1 and e2 are deliberately not orthogonalized against each other; the
    construction follows the literal defining equations.
    """
    e1 = normalize_rows(as_tensor(x_n) - as_tensor(x_ca),
                        "backbone frame e1 (N == Ca)")
    e2 = normalize_rows(as_tensor(x_ca) - as_tensor(x_c),
                        "backbone frame e2 (Ca == C)")
    e3 = normalize_rows(cross_rows(e1, e2),
                        "backbone frame e3 (collinear backbone)")
    return FrameBasis(ad.stack([e1, e2, e3], axis=1))


def backbone_frame(x_n, x_ca, x_c) -> FrameBasis:
    f = backbone_frames(np.asarray(x_n, dtype=float).reshape(1, 3),
                        np.asarray(x_ca, dtype=float).reshape(1, 3),
                        np.asarray(x_c, dtype=float).reshape(1, 3))
    return FrameBasis(ad.reshape(f.matrix, (3, 3)))


def complex_frame(xp_i, xp_i1) -> FrameBasis:
    """Frame on a consecutive pocket-residue pair; same construction shape
    as the atom-pair frame, applied to residue-level coordinates."""
    return atom_frame(xp_i, xp_i1)


def pocket_residues(ligand_positions, ca_positions, cutoff: float
                    ) -> np.ndarray:
    """Indices of residues whose Ca lies within cutoff of any ligand atom."""
    pairs = cross_pairs(ca_positions, ligand_positions, cutoff)
    return np.unique(pairs[:, 0])


def pocket_partner(pocket: np.ndarray) -> dict:
    """Successor pocket residue for each pocket residue (sequence order);
    the last pocket residue pairs with its predecessor."""
    partner = {}
    members = list(pocket)
    for k, r in enumerate(members):
        if k + 1 < len(members):
            partner[int(r)] = int(members[k + 1])
        elif k > 0:
            partner[int(r)] = int(members[k - 1])
    return partner


# --------------------------------------------------------------------------
# scalarization / vectorization

def scalarize(v, frame: FrameBasis) -> Tensor:
    """Project onto the frame axes: component k = v . e_k.

    Accepts a single 3-vector or a (d, 3) block; returns the matching shape
    of invariant scalars.
    """
    v = as_tensor(np.asarray(v, dtype=float) if not isinstance(v, Tensor)
                  else v)
    if v.shape == (3,):
        return ad.matmul(frame.matrix, v)
    return ad.matmul(v, ad.transpose(frame.matrix))


def scalarize_batch(v: Tensor, frames: FrameBasis) -> Tensor:
    """Batched scalarization: v is (n, d, 3), frames.matrix is (n, 3, 3);
    output (n, d, 3) where [..., k] = row . e_k."""
    return ad.matmul(v, ad.transpose(frames.matrix, (0, 2, 1)))


def vectorize(s, frame: FrameBasis) -> Tensor:
    """Recombine scalars with the frame: s1*e1 + s2*e2 + s3*e3."""
    s = as_tensor(np.asarray(s, dtype=float) if not isinstance(s, Tensor)
                  else s)
    return ad.reshape(ad.matmul(ad.reshape(s, (1, 3)), frame.matrix), (3,))
