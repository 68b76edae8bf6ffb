"""Second-order ODE/SDE trajectory solvers over the augmented state [x; v].

The learned force acts through Newton's second law; rollouts integrate

    dx/dt = v,    dv/dt = F(x)/m                      (ODE)
    dv/dt = F(x)/m - gamma v + sqrt(2 gamma k_B T / m) dW/dt   (SDE)

with explicit Euler / Euler-Maruyama substeps between requested snapshot
times. Gradients flow either by backprop through the solver graph or by a
discrete adjoint sweep whose memory does not grow with the step count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradientError, ParamSet, Tensor


@dataclass
class PhaseState:
    """Positions (A), velocities (A per snapshot interval), time."""

    positions: np.ndarray
    velocities: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("position/velocity shapes disagree")


@dataclass
class LangevinConfig:
    """Damping and thermal-noise parameters; k_B defaults to reduced units."""

    gamma: float = 0.0
    temperature: float = 0.0
    k_b: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0 or self.temperature < 0:
            raise ValueError("gamma and temperature must be nonnegative")


@dataclass
class SolverConfig:
    method: str = "euler"
    substeps: int = 4
    grad_mode: str = "backprop"

    def __post_init__(self):
        if self.method not in ("euler", "euler-maruyama"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.grad_mode not in ("backprop", "adjoint"):
            raise ValueError(f"unknown gradient mode {self.grad_mode!r}")


@dataclass
class Rollout:
    """Positions emitted at the requested times; ``aborted`` marks a
    non-finite blow-up, in which case ``times`` holds only the snapshots
    that stayed finite and ``abort_time`` names the last valid time."""

    positions: List[Tensor]
    times: List[float]
    final_state: PhaseState
    aborted: bool = False
    abort_time: Optional[float] = None
    velocities: List[Tensor] = field(default_factory=list)


ForceFn = Callable[[Tensor], Tensor]


def _check_finite_force(f: Tensor) -> None:
    bad = ~np.isfinite(f.data)
    if np.any(bad):
        atom = int(np.nonzero(bad.reshape(len(f.data), -1).any(axis=1))[0][0])
        raise FloatingPointError(f"non-finite force at atom {atom}")


def derivative(state: PhaseState, force_fn: ForceFn, masses):
    """(dx/dt, dv/dt) = (v, F(x)/m) for the augmented second-order system."""
    masses = np.asarray(masses, dtype=np.float64).reshape(-1, 1)
    f = ad.as_tensor(force_fn(Tensor(state.positions)))
    _check_finite_force(f)
    return Tensor(state.velocities.copy()), f * Tensor(1.0 / masses)


def _segment_steps(t0: float, t_list: Sequence[float], substeps: int):
    """Per-segment (n_steps, h) between consecutive requested times."""
    times = [float(t) for t in t_list]
    if any(b <= a for a, b in zip([t0] + times, times)):
        raise ValueError("t_list must be strictly increasing after state0.t")
    out = []
    prev = t0
    for t in times:
        span = t - prev
        n = max(1, int(round(substeps * span)))
        out.append((n, span / n))
        prev = t
    return times, out


def _integrate(state0: PhaseState, t_list, force_fn: ForceFn, masses,
               cfg: SolverConfig, lang: Optional[LangevinConfig]) -> Rollout:
    return integrate_from(ad.as_tensor(state0.positions),
                          ad.as_tensor(state0.velocities), state0.t,
                          t_list, force_fn, masses, cfg, lang)


def integrate_from(x: Tensor, v: Tensor, t0: float, t_list,
                   force_fn: ForceFn, masses, cfg: SolverConfig,
                   lang: Optional[LangevinConfig] = None) -> Rollout:
    """Integration entry point that keeps in-graph initial conditions, so
    gradients can flow into a learned initial velocity."""
    masses = np.asarray(masses, dtype=np.float64).reshape(-1, 1)
    inv_m = Tensor(1.0 / masses)
    times, segments = _segment_steps(t0, t_list, cfg.substeps)
    rng = None
    noise_scale = None
    if lang is not None and lang.gamma > 0:
        rng = np.random.default_rng(lang.seed)
        sigma2 = 2.0 * lang.gamma * lang.k_b * lang.temperature / masses
        noise_scale = np.sqrt(sigma2)

    emitted: List[Tensor] = []
    emitted_v: List[Tensor] = []
    emitted_times: List[float] = []
    last_ok = t0

    for (n_steps, h), t in zip(segments, times):
        for _ in range(n_steps):
            if not (np.all(np.isfinite(x.data)) and
                    np.all(np.isfinite(v.data))):
                return Rollout(emitted, emitted_times,
                               PhaseState(x.data, v.data, last_ok),
                               aborted=True, abort_time=last_ok,
                               velocities=emitted_v)
            f = ad.as_tensor(force_fn(x))
            x_new = x + v * h
            v_new = v + f * inv_m * h
            if lang is not None and lang.gamma > 0:
                v_new = v_new - v * (lang.gamma * h)
                # noise only when it can be nonzero, so gamma=0 or T=0
                # reduces to the ODE bitwise
                if lang.temperature > 0:
                    dw = rng.standard_normal(size=x.shape) * np.sqrt(h)
                    v_new = v_new + Tensor(noise_scale * dw)
            x, v = x_new, v_new
        if not (np.all(np.isfinite(x.data)) and np.all(np.isfinite(v.data))):
            return Rollout(emitted, emitted_times,
                           PhaseState(x.data, v.data, last_ok),
                           aborted=True, abort_time=last_ok,
                           velocities=emitted_v)
        last_ok = t
        emitted.append(x)
        emitted_v.append(v)
        emitted_times.append(t)
    return Rollout(emitted, emitted_times,
                   PhaseState(x.data, v.data, times[-1]),
                   velocities=emitted_v)


def integrate_ode(state0: PhaseState, t_list, force_fn: ForceFn, masses,
                  cfg: SolverConfig = None) -> Rollout:
    """Explicit-Euler rollout; differentiable through the emitted positions
    when force_fn builds a graph."""
    cfg = cfg or SolverConfig()
    return _integrate(state0, t_list, force_fn, masses, cfg, None)


def integrate_sde(state0: PhaseState, t_list, force_fn: ForceFn, masses,
                  cfg: SolverConfig = None,
                  lang: LangevinConfig = None) -> Rollout:
    """Euler-Maruyama rollout of the Langevin SDE; seeded and reproducible."""
    cfg = cfg or SolverConfig(method="euler-maruyama")
    lang = lang or LangevinConfig()
    return _integrate(state0, t_list, force_fn, masses, cfg, lang)


def velocity_verlet_step(x: np.ndarray, v: np.ndarray, force_fn: ForceFn,
                         masses, dt: float):
    """One symplectic velocity-Verlet step on plain arrays."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    masses = np.asarray(masses, dtype=np.float64).reshape(-1, 1)
    with ad.no_grad():
        f0 = ad.as_tensor(force_fn(Tensor(np.asarray(x, dtype=np.float64))))
        _check_finite_force(f0)
        a0 = f0.data / masses
        x_new = x + v * dt + 0.5 * a0 * dt * dt
        f1 = ad.as_tensor(force_fn(Tensor(x_new)))
        _check_finite_force(f1)
        a1 = f1.data / masses
        v_new = v + 0.5 * (a0 + a1) * dt
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise FloatingPointError("velocity Verlet step produced non-finite state")
    return x_new, v_new


def surrogate_velocity(model, ligand, params: ParamSet, x_next: np.ndarray,
                       positions: Optional[Tensor] = None) -> Tensor:
    """Learned velocity estimate at a snapshot: the equivariant ligand-tower
    vector plus the forward displacement to the next snapshot."""
    x = positions if positions is not None else Tensor(ligand.positions)
    vec = model.ligand_tower(ligand, params, positions=x).vec
    return vec + (ad.as_tensor(x_next) - x)


# -- adjoint gradients ---------------------------------------------------

def _reconstruct_prev(x_next: np.ndarray, v_next: np.ndarray,
                      force_fn: ForceFn, inv_m: np.ndarray, h: float,
                      tol: float = 1e-13, max_iter: int = 50):
    """Invert one explicit-Euler step by fixed-point iteration.

    Forward: x' = x + h v, v' = v + h F(x)/m. Backward, x solves the
    implicit relation x = x' - h v' + h^2 F(x)/m.
    """
    x = x_next - h * v_next
    for _ in range(max_iter):
        with ad.no_grad():
            f = ad.as_tensor(force_fn(Tensor(x))).data
        x_new = x_next - h * v_next + h * h * f * inv_m
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    return x, v_next - h * f * inv_m


def adjoint_gradients(state0: PhaseState, t_list, force_fn: ForceFn, masses,
                      cfg: SolverConfig, params: ParamSet,
                      loss_fn: Callable[[List[Tensor]], Tensor]):
    """Parameter gradients of loss_fn(emitted positions) via a backward
    adjoint sweep; accumulates into params[...].grad like backward() and
    returns {name: gradient array}. Memory stays bounded because only one
    step's graph is alive at a time."""
    if cfg.method != "euler":
        raise GradientError("adjoint gradients support the ODE (euler) "
                            "method only")
    masses = np.asarray(masses, dtype=np.float64).reshape(-1, 1)
    inv_m = 1.0 / masses
    times, segments = _segment_steps(state0.t, t_list, cfg.substeps)

    # forward pass without a graph: keep only the emitted snapshots
    with ad.no_grad():
        roll = _integrate(state0, t_list, force_fn, masses, cfg, None)
    if roll.aborted:
        raise FloatingPointError(
            f"rollout became non-finite after t = {roll.abort_time}")

    # loss seeds per emitted snapshot
    probes = [Tensor(p.data.copy(), requires_grad=True)
              for p in roll.positions]
    loss = loss_fn(probes)
    seeds = [g.data if g is not None else np.zeros_like(p.data)
             for g, p in zip(ad.grad(loss, probes), probes)]

    names = params.names()
    ptensors = [params[n] for n in names]
    accum = {n: np.zeros(params[n].shape) for n in names}
    lam_x = np.zeros_like(state0.positions)
    lam_v = np.zeros_like(state0.velocities)

    x_cur = roll.final_state.positions.copy()
    v_cur = roll.final_state.velocities.copy()
    for seg in range(len(times) - 1, -1, -1):
        lam_x = lam_x + seeds[seg]
        n_steps, h = segments[seg]
        for _ in range(n_steps):
            x_prev, v_prev = _reconstruct_prev(x_cur, v_cur, force_fn,
                                               inv_m, h)
            xt = Tensor(x_prev, requires_grad=True)
            vt = Tensor(v_prev, requires_grad=True)
            f = ad.as_tensor(force_fn(xt))
            x_next = xt + vt * h
            v_next = vt + f * Tensor(inv_m) * h
            surr = ad.tsum(x_next * Tensor(lam_x)) + \
                ad.tsum(v_next * Tensor(lam_v))
            grads = ad.grad(surr, [xt, vt] + ptensors)
            lam_x = grads[0].data if grads[0] is not None \
                else np.zeros_like(lam_x)
            lam_v = grads[1].data if grads[1] is not None \
                else np.zeros_like(lam_v)
            for name, g in zip(names, grads[2:]):
                if g is not None:
                    accum[name] += g.data
            x_cur, v_cur = x_prev, v_prev

    for name in names:
        t = params[name]
        if t.grad is None:
            t.grad = accum[name].copy()
        else:
            t.grad = np.asarray(t.grad) + accum[name]
    return accum
