"""Comparison methods sharing the equivariant force network as backbone.

* VerletMD: energy head trained by force matching against finite-difference
  accelerations, rolled out with velocity Verlet.
* GNN-MD: the force output reinterpreted as a displacement head, trained on
  next-snapshot coordinates and rolled out autoregressively.
* DenoisingLD: denoising score matching conditioned on the previous
  snapshot, rolled out with annealed Langevin sampling.

All rollouts reuse the dynamics Rollout container so the evaluation
harness stays method-agnostic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn
from . import forcenet as fn
from .autodiff import ParamSet, Tensor

log = logging.getLogger(__name__)


@dataclass
class NoiseSchedule:
    """Annealed Langevin schedule: descending sigma levels, fixed step count
    per level, step size eps = eps_scale * sigma^2."""

    sigmas: np.ndarray = None
    steps_per_level: int = 5
    eps_scale: float = 2e-3

    def __post_init__(self):
        if self.sigmas is None:
            self.sigmas = np.geomspace(1.0, 0.01, 10)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if np.any(self.sigmas <= 0):
            raise ValueError("noise levels must be positive")
        if np.any(np.diff(self.sigmas) >= 0):
            raise ValueError("noise levels must be strictly descending")
        if self.steps_per_level < 1:
            raise ValueError("steps_per_level must be >= 1")

    def eps(self, level: int) -> float:
        return self.eps_scale * float(self.sigmas[level]) ** 2

    @property
    def n_levels(self) -> int:
        return len(self.sigmas)


def prepare_centered(ligand: fn.LigandState, protein: fn.ProteinStructure,
                     trajectory: np.ndarray):
    """Shift one trajectory and its protein by the snapshot-0 complex
    center; a single constant shift keeps snapshot differences intact."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    _, prot_c, center = fn.centralize_complex(trajectory[0], ligand.masses,
                                              protein)
    return trajectory - center, prot_c


def _ligand_at(ligand: fn.LigandState, positions: np.ndarray
               ) -> fn.LigandState:
    return fn.LigandState(atomic_numbers=ligand.atomic_numbers,
                          positions=positions, masses=ligand.masses)


def _mae(pred: Tensor, target: np.ndarray) -> Tensor:
    return ad.tmean(ad.tabs(pred - Tensor(target)))


# -- VerletMD ------------------------------------------------------------

def verletmd_train(model: fn.BindingForceModel, ligand: fn.LigandState,
                   protein: fn.ProteinStructure, trajectory: np.ndarray,
                   params: ParamSet, epochs: int = 200, lr: float = 1e-3,
                   optimizer: str = "adam") -> List[float]:
    """Force matching: -dE/dx against m * (x_{t+1} - 2 x_t + x_{t-1})."""
    traj, prot = prepare_centered(ligand, protein, trajectory)
    if len(traj) < 3:
        raise ValueError("VerletMD training needs >= 3 snapshots")
    accel = traj[2:] - 2.0 * traj[1:-1] + traj[:-2]
    targets = accel * ligand.masses[:, None]
    losses = []
    opt = ad.make_optimizer(optimizer, lr)
    for _ in range(epochs):
        total = None
        for t in range(len(targets)):
            lig_t = _ligand_at(ligand, traj[t + 1])
            force = model.energy_force(lig_t, prot, params,
                                       check_centered=False,
                                       create_graph=True)
            term = _mae(force, targets[t])
            total = term if total is None else total + term
        loss = total * (1.0 / len(targets))
        params.zero_grad()
        ad.backward(loss)
        opt.step(params)
        losses.append(loss.item())
    return losses


def verletmd_rollout(model: fn.BindingForceModel, ligand: fn.LigandState,
                     protein: fn.ProteinStructure, params: ParamSet,
                     state0: dyn.PhaseState, t_list,
                     substeps: int = 1) -> dyn.Rollout:
    """Velocity Verlet under the conservative force -dE/dx; blow-ups
    truncate the rollout (expected failure mode for this method)."""
    def force(x: Tensor) -> Tensor:
        lig = _ligand_at(ligand, x.data)
        return model.energy_force(lig, protein, params, positions=x,
                                  check_centered=False)

    times = [float(t) for t in t_list]
    x, v = state0.positions.copy(), state0.velocities.copy()
    prev = state0.t
    emitted, emitted_v, emitted_times = [], [], []
    for t in times:
        n = max(1, int(round(substeps * (t - prev))))
        h = (t - prev) / n
        try:
            for _ in range(n):
                x, v = dyn.velocity_verlet_step(x, v, force, ligand.masses,
                                                h)
        except FloatingPointError:
            log.warning("VerletMD rollout diverged after t = %s", prev)
            return dyn.Rollout(emitted, emitted_times,
                               dyn.PhaseState(x, v, prev), aborted=True,
                               abort_time=prev, velocities=emitted_v)
        prev = t
        emitted.append(Tensor(x.copy()))
        emitted_v.append(Tensor(v.copy()))
        emitted_times.append(t)
    return dyn.Rollout(emitted, emitted_times, dyn.PhaseState(x, v, prev),
                       velocities=emitted_v)


# -- GNN-MD --------------------------------------------------------------

def gnnmd_train(model: fn.BindingForceModel, ligand: fn.LigandState,
                protein: fn.ProteinStructure, trajectory: np.ndarray,
                params: ParamSet, epochs: int = 200, lr: float = 1e-3,
                optimizer: str = "adam") -> List[float]:
    """Displacement supervision: x_t + F(x_t) should match x_{t+1}."""
    traj, prot = prepare_centered(ligand, protein, trajectory)
    if len(traj) < 2:
        raise ValueError("GNN-MD training needs >= 2 snapshots")
    deltas = traj[1:] - traj[:-1]
    losses = []
    opt = ad.make_optimizer(optimizer, lr)
    for _ in range(epochs):
        total = None
        for t in range(len(deltas)):
            lig_t = _ligand_at(ligand, traj[t])
            disp = model.predict_force(lig_t, prot, params,
                                       check_centered=False)
            term = _mae(disp, deltas[t])
            total = term if total is None else total + term
        loss = total * (1.0 / len(deltas))
        params.zero_grad()
        ad.backward(loss)
        opt.step(params)
        losses.append(loss.item())
    return losses


def gnnmd_rollout(model: fn.BindingForceModel, ligand: fn.LigandState,
                  protein: fn.ProteinStructure, params: ParamSet,
                  state0: dyn.PhaseState, t_list) -> dyn.Rollout:
    """Autoregressive next-coordinate prediction, one hop per snapshot."""
    x = state0.positions.copy()
    prev = state0.t
    emitted, emitted_times = [], []
    for t in [float(t) for t in t_list]:
        lig = _ligand_at(ligand, x)
        with ad.no_grad():
            disp = model.predict_force(lig, protein, params,
                                       check_centered=False).data
        x_new = x + disp
        if not np.all(np.isfinite(x_new)):
            log.warning("GNN-MD rollout diverged after t = %s", prev)
            return dyn.Rollout(emitted, emitted_times,
                               dyn.PhaseState(x, np.zeros_like(x), prev),
                               aborted=True, abort_time=prev)
        x = x_new
        prev = t
        emitted.append(Tensor(x.copy()))
        emitted_times.append(t)
    return dyn.Rollout(emitted, emitted_times,
                       dyn.PhaseState(x, np.zeros_like(x), prev))


# -- DenoisingLD ------------------------------------------------------------

def _ensure_gates(params: ParamSet, sched: NoiseSchedule) -> Tensor:
    # per-level conditioning gates on (x_t - corrupted x); zero start keeps
    # the initial score equal to the raw force output
    if "denoise.gates" not in params:
        params.new_param("denoise.gates", np.zeros(sched.n_levels))
    return params["denoise.gates"]


def denoising_score(model: fn.BindingForceModel, ligand: fn.LigandState,
                    protein: fn.ProteinStructure, params: ParamSet,
                    x_noisy: Tensor, x_cond: np.ndarray,
                    sched: NoiseSchedule, level: int) -> Tensor:
    """Score estimate at one noise level: the force-network output plus a
    learned gate times the displacement back toward the conditioning
    snapshot. The gate is scaled by 1/sigma^2 so its optimum is O(1) at
    every level."""
    gates = _ensure_gates(params, sched)
    lig = _ligand_at(ligand, x_noisy.data)
    f = model.predict_force(lig, protein, params, positions=x_noisy,
                            check_centered=False)
    sigma2 = float(sched.sigmas[level]) ** 2
    pull = (Tensor(x_cond) - x_noisy) * (gates[level] * (1.0 / sigma2))
    return f + pull


def dsm_level_loss(score_fn: Callable[[Tensor], Tensor], x_clean: np.ndarray,
                   sigma: float, rng: np.random.Generator) -> Tensor:
    """Denoising score-matching objective at one sigma: the optimal score
    of the corrupted sample is -(x_noisy - x_clean) / sigma^2; the loss is
    the sigma^2-weighted squared residual."""
    eps = rng.standard_normal(size=x_clean.shape)
    x_noisy = Tensor(x_clean + sigma * eps)
    s = score_fn(x_noisy)
    resid = s * sigma + Tensor(eps)
    return ad.tmean(resid * resid)


def denoisingld_train(model: fn.BindingForceModel, ligand: fn.LigandState,
                      protein: fn.ProteinStructure, trajectory: np.ndarray,
                      params: ParamSet, sched: NoiseSchedule = None,
                      epochs: int = 200, lr: float = 1e-3,
                      optimizer: str = "adam", seed: int = 0) -> List[float]:
    sched = sched or NoiseSchedule()
    _ensure_gates(params, sched)
    traj, prot = prepare_centered(ligand, protein, trajectory)
    if len(traj) < 2:
        raise ValueError("DenoisingLD training needs >= 2 snapshots")
    rng = np.random.default_rng(seed)
    losses = []
    opt = ad.make_optimizer(optimizer, lr)
    for _ in range(epochs):
        t = int(rng.integers(0, len(traj) - 1))
        level = int(rng.integers(0, sched.n_levels))
        sigma = float(sched.sigmas[level])

        def score(x_noisy):
            return denoising_score(model, ligand, prot, params, x_noisy,
                                   traj[t], sched, level)

        loss = dsm_level_loss(score, traj[t + 1], sigma, rng)
        params.zero_grad()
        ad.backward(loss)
        opt.step(params)
        losses.append(loss.item())
    return losses


def denoisingld_rollout(model: fn.BindingForceModel, ligand: fn.LigandState,
                        protein: fn.ProteinStructure, params: ParamSet,
                        state0: dyn.PhaseState, t_list,
                        sched: NoiseSchedule = None,
                        seed: int = 0) -> dyn.Rollout:
    """Per transition, annealed Langevin sampling from the previous
    snapshot down the noise schedule."""
    sched = sched or NoiseSchedule()
    _ensure_gates(params, sched)
    rng = np.random.default_rng(seed)
    x = state0.positions.copy()
    prev = state0.t
    emitted, emitted_times = [], []
    for t in [float(t) for t in t_list]:
        x_cond = x.copy()
        cur = x.copy()
        for level in range(sched.n_levels):
            eps = sched.eps(level)
            for _ in range(sched.steps_per_level):
                with ad.no_grad():
                    s = denoising_score(model, ligand, protein, params,
                                        Tensor(cur), x_cond, sched,
                                        level).data
                cur = cur + 0.5 * eps * s + \
                    np.sqrt(eps) * rng.standard_normal(size=cur.shape)
                if not np.all(np.isfinite(cur)):
                    log.warning("DenoisingLD rollout diverged after t = %s",
                                prev)
                    return dyn.Rollout(emitted, emitted_times,
                                       dyn.PhaseState(x, np.zeros_like(x),
                                                      prev),
                                       aborted=True, abort_time=prev)
        x = cur
        prev = t
        emitted.append(Tensor(x.copy()))
        emitted_times.append(t)
    return dyn.Rollout(emitted, emitted_times,
                       dyn.PhaseState(x, np.zeros_like(x), prev))
