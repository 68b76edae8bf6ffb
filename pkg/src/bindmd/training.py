"""Training loop, dataset splits, and the evaluation metric suite.

Training follows the windowed scheme: pick a window of consecutive
snapshots, centralize the complex on the window-start geometry, roll the
solver out over the window, and minimize the per-coordinate MAE between
emitted and ground-truth positions. Checkpoint selection: optimal train
loss for single-trajectory splits, optimal validation loss for
multi-trajectory splits.

Stability counts violations: the percentage of (atom-pair, snapshot) events
whose predicted pair distance deviates from the ground-truth pair distance
at that snapshot by more than delta. Lower is better.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import baselines as bl
from . import dynamics as dyn
from . import forcenet as fn
from .autodiff import ParamSet, Tensor
from .data import ComplexRecord

log = logging.getLogger(__name__)

METHODS = ("neuralmd-ode", "neuralmd-sde", "verletmd", "gnnmd",
           "denoisingld")


@dataclass
class Split:
    """Train/val/test index sets over snapshots (single) or trajectories
    (multi)."""

    kind: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=int)
        self.val = np.asarray(self.val, dtype=int)
        self.test = np.asarray(self.test, dtype=int)
        sets = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(s) for s in sets)
        if len(set().union(*sets)) != total:
            raise ValueError("split index sets overlap")


def split_single(n_snapshots: int, train_fraction: float = 0.8) -> Split:
    """Temporal prefix/suffix split of one trajectory; no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    cut = int(round(n_snapshots * train_fraction))
    if cut < 2 or n_snapshots - cut < 2:
        raise ValueError(
            f"split {cut}/{n_snapshots - cut} leaves fewer than 2 "
            "snapshots on one side")
    return Split(kind="single", train=np.arange(cut), val=np.array([], int),
                 test=np.arange(cut, n_snapshots))


def split_multi(n_trajectories: int, fractions=(0.8, 0.1, 0.1),
                seed: int = 0) -> Split:
    """Seeded shuffle of trajectory ids, then contiguous slices."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} do not sum to 1")
    perm = np.random.default_rng(seed).permutation(n_trajectories)
    n_train = int(round(n_trajectories * fractions[0]))
    n_val = int(round(n_trajectories * fractions[1]))
    return Split(kind="multi", train=perm[:n_train],
                 val=perm[n_train:n_train + n_val],
                 test=perm[n_train + n_val:])


# -- metrics ----------------------------------------------------------------

def _as_array(pred) -> np.ndarray:
    if isinstance(pred, Tensor):
        return pred.data
    if isinstance(pred, (list, tuple)):
        return np.array([_as_array(p) for p in pred])
    return np.asarray(pred, dtype=np.float64)


def loss_trajectory_mae(pred: Sequence[Tensor], truth) -> Tensor:
    """Mean over snapshots, atoms, and coordinates of |pred - truth|."""
    truth = np.asarray(truth, dtype=np.float64)
    if len(pred) != len(truth):
        raise ad.ShapeError(
            f"{len(pred)} predicted snapshots vs {len(truth)} truth")
    total = None
    for p, t in zip(pred, truth):
        if p.shape != t.shape:
            raise ad.ShapeError(
                f"snapshot shape {p.shape} vs truth {t.shape}")
        term = ad.tmean(ad.tabs(p - Tensor(t)))
        total = term if total is None else total + term
    return total * (1.0 / len(truth))


def metric_recovery(pred, truth):
    """(MAE, MSE) per coordinate between matched trajectories."""
    pred, truth = _as_array(pred), _as_array(truth)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"shape mismatch {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return float(np.mean(np.abs(diff))), float(np.mean(diff * diff))


def metric_stability(pred, truth, delta: float = 0.5,
                     pairs: Optional[Sequence] = None) -> float:
    """Percentage of (pair, snapshot) events with
    | ||x^_i - x^_j|| - b_ij | > delta, b_ij from ground truth per snapshot.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pred, truth = _as_array(pred), _as_array(truth)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"shape mismatch {pred.shape} vs {truth.shape}")
    n = pred.shape[1]
    if n < 2:
        log.warning("stability: fewer than 2 atoms, reporting 0%%")
        return 0.0
    if pairs is None:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs = np.asarray(pairs, dtype=int)
    di = np.linalg.norm(pred[:, pairs[:, 0]] - pred[:, pairs[:, 1]], axis=2)
    bi = np.linalg.norm(truth[:, pairs[:, 0]] - truth[:, pairs[:, 1]],
                        axis=2)
    violations = np.abs(di - bi) > delta
    return float(100.0 * np.mean(violations))


def metric_fps(rollout_fn: Callable[[], Sequence], timer=time.perf_counter
               ) -> float:
    """Snapshots emitted per wall-clock second of one full rollout."""
    start = timer()
    out = rollout_fn()
    elapsed = timer() - start
    n = len(out.positions) if isinstance(out, dyn.Rollout) else len(out)
    return float(n / max(elapsed, 1e-12))


@dataclass
class MetricReport:
    method: str
    mae: float
    mse: float
    stability: float
    fps: float
    per_trajectory: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.stability <= 100.0):
            raise ValueError("stability must lie in [0, 100]")
        if self.mae < 0 or self.mse < 0:
            raise ValueError("mae and mse must be nonnegative")

    def to_dict(self) -> dict:
        return {"method": self.method, "mae": self.mae, "mse": self.mse,
                "stability": self.stability, "fps": self.fps,
                "per_trajectory": self.per_trajectory}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(**doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def summary(self) -> str:
        return (f"{self.method}: MAE {self.mae:.4f} A, MSE {self.mse:.4f}, "
                f"stability {self.stability:.2f}%, FPS {self.fps:.1f}")


# -- training ------------------------------------------------------------

@dataclass
class TrainConfig:
    method: str = "neuralmd-ode"
    epochs: int = 500
    lr: float = 1e-4
    optimizer: str = "adam"
    window: int = 3
    substeps: int = 4
    windows_per_epoch: int = 8
    seed: int = 0
    langevin: dyn.LangevinConfig = None
    noise_in_training: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one "
                             f"of {METHODS}")
        if self.window < 1 or self.epochs < 0:
            raise ValueError("window >= 1 and epochs >= 0 required")
        if self.langevin is None:
            self.langevin = dyn.LangevinConfig(gamma=0.1, temperature=0.1)


def select_checkpoint(losses: Sequence[float]) -> int:
    """Index of the optimal (lowest) loss; first occurrence wins."""
    finite = [x if np.isfinite(x) else np.inf for x in losses]
    if not finite:
        raise ValueError("empty loss curve")
    return int(np.argmin(finite))


def _window_state(record: ComplexRecord, model, params, t0: int,
                  traj: np.ndarray, in_graph: bool):
    """Initial phase state for a window starting at snapshot t0, using
    stored velocities when present and the surrogate otherwise."""
    x0 = traj[t0]
    if record.velocities is not None:
        return Tensor(x0), Tensor(record.velocities[t0].copy())
    lig = fn.LigandState(atomic_numbers=record.ligand.atomic_numbers,
                         positions=x0, masses=record.ligand.masses)
    if t0 + 1 < len(traj):
        x_next = traj[t0 + 1]
    else:
        # trailing snapshot: reuse the previous displacement
        x_next = x0 + (traj[t0] - traj[t0 - 1])
    v = dyn.surrogate_velocity(model, lig, params, x_next)
    if not in_graph:
        v = Tensor(v.data.copy())
    return Tensor(x0), v


def _window_loss(model, record: ComplexRecord, params: ParamSet, t0: int,
                 cfg: TrainConfig, epoch_seed: int,
                 build_graph: bool) -> Tensor:
    """Rollout loss over one window starting at snapshot t0."""
    window = min(cfg.window, record.n_snapshots - 1 - t0)
    if not np.all(np.isfinite(record.trajectory[t0:t0 + window + 1])):
        return Tensor(np.nan)  # poisoned data: surfaces as a diverged loss
    traj_c, prot_c = _centered_window(record, t0)
    x0, v0 = _window_state(record, model, params, t0, traj_c,
                           in_graph=build_graph)
    protein_h = model.protein_tower(prot_c, params)

    def force(x):
        lig = fn.LigandState(atomic_numbers=record.ligand.atomic_numbers,
                             positions=x.data, masses=record.ligand.masses)
        lig_out = model.ligand_tower(lig, params, positions=x)
        f, _ = model.complex_tower(lig_out, protein_h, x, prot_c, params)
        return f

    t_list = [float(t0 + k) for k in range(1, window + 1)]
    solver = dyn.SolverConfig(method="euler" if cfg.method != "neuralmd-sde"
                              else "euler-maruyama", substeps=cfg.substeps)
    lang = None
    if cfg.method == "neuralmd-sde" and cfg.noise_in_training:
        lang = dyn.LangevinConfig(gamma=cfg.langevin.gamma,
                                  temperature=cfg.langevin.temperature,
                                  k_b=cfg.langevin.k_b, seed=epoch_seed)
    ctx = _nullcontext() if build_graph else ad.no_grad()
    with ctx:
        roll = dyn.integrate_from(x0, v0, float(t0), t_list, force,
                                  record.ligand.masses, solver, lang)
        if roll.aborted or len(roll.positions) != window:
            return None
        return loss_trajectory_mae(roll.positions,
                                   traj_c[t0 + 1:t0 + 1 + window])


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _centered_window(record: ComplexRecord, t0: int):
    """Centralize the whole trajectory by the window-start complex center;
    the protein is rigid, so one shift serves the full window."""
    _, prot_c, center = fn.centralize_complex(record.trajectory[t0],
                                              record.ligand.masses,
                                              record.protein)
    return record.trajectory - center, prot_c


@dataclass
class TrainResult:
    params: ParamSet
    best_params: ParamSet
    best_epoch: int
    train_curve: List[float]
    val_curve: List[float]
    aborted: bool = False


def train_neuralmd(model, records: Sequence[ComplexRecord], split: Split,
                   cfg: TrainConfig, params: ParamSet = None) -> TrainResult:
    """Windowed trajectory training over one or many complexes."""
    if params is None:
        params = model.init_params(seed=cfg.seed)
    if split.kind == "single":
        if len(records) != 1:
            raise ValueError("single-trajectory split needs exactly one "
                             "record")
        train_records = [(records[0], split.train)]
        val_records = []
    else:
        train_records = [(records[i], None) for i in split.train]
        val_records = [(records[i], None) for i in split.val]
    if not train_records:
        raise ValueError("empty training split")

    def window_starts(record, idx):
        if idx is None:
            hi = record.n_snapshots - cfg.window
        else:
            hi = int(idx.max()) + 1 - cfg.window
        return np.arange(0, max(hi, 1))

    opt = ad.make_optimizer(cfg.optimizer, cfg.lr)
    train_curve, val_curve = [], []
    best = (np.inf, 0, params.clone())
    aborted = False
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng((cfg.seed, epoch))
        epoch_losses = []
        for record, idx in train_records:
            starts = window_starts(record, idx)
            if len(starts) > cfg.windows_per_epoch:
                starts = np.sort(rng.choice(starts, cfg.windows_per_epoch,
                                            replace=False))
            total, count = None, 0
            for t0 in starts:
                term = _window_loss(model, record, params, int(t0), cfg,
                                    epoch_seed=int(
                                        rng.integers(0, 2 ** 31)),
                                    build_graph=True)
                if term is None:
                    continue
                total = term if total is None else total + term
                count += 1
            if total is None:
                continue
            loss = total * (1.0 / count)
            if not np.isfinite(loss.data):
                log.error("training loss non-finite at epoch %d; aborting "
                          "with best checkpoint", epoch)
                aborted = True
                break
            epoch_losses.append(loss.item())
            if cfg.lr > 0:
                params.zero_grad()
                ad.backward(loss)
                opt.step(params)
        if aborted:
            break
        train_loss = float(np.mean(epoch_losses)) if epoch_losses \
            else np.inf
        train_curve.append(train_loss)

        if val_records:
            vloss = []
            for record, idx in val_records:
                for t0 in window_starts(record, idx):
                    term = _window_loss(model, record, params, int(t0), cfg,
                                        epoch_seed=0, build_graph=False)
                    if term is not None:
                        vloss.append(term.item())
            val_curve.append(float(np.mean(vloss)) if vloss else np.inf)
            criterion = val_curve[-1]
        else:
            criterion = train_loss
        if criterion < best[0]:
            best = (criterion, epoch, params.clone())

    return TrainResult(params=params, best_params=best[2],
                       best_epoch=best[1], train_curve=train_curve,
                       val_curve=val_curve, aborted=aborted)


# -- evaluation harness --------------------------------------------------

def _model_force_fn(model, record: ComplexRecord, params: ParamSet,
                    prot_c: fn.ProteinStructure):
    protein_h = model.protein_tower(prot_c, params)

    def force(x):
        lig = fn.LigandState(atomic_numbers=record.ligand.atomic_numbers,
                             positions=x.data, masses=record.ligand.masses)
        lig_out = model.ligand_tower(lig, params, positions=x)
        f, _ = model.complex_tower(lig_out, protein_h, x, prot_c, params)
        return f

    return force


def _start_state(record: ComplexRecord, traj_c: np.ndarray, t0: int
                 ) -> dyn.PhaseState:
    if record.velocities is not None:
        v = record.velocities[t0].copy()
    elif t0 > 0:
        v = traj_c[t0] - traj_c[t0 - 1]
    else:
        v = np.zeros_like(traj_c[t0])
    return dyn.PhaseState(traj_c[t0].copy(), v, t=float(t0))


def rollout_method(method: str, model, record: ComplexRecord,
                   params: ParamSet, t0: int, t_list,
                   substeps: int = 4, seed: int = 0,
                   langevin: dyn.LangevinConfig = None,
                   sched: bl.NoiseSchedule = None) -> dyn.Rollout:
    """Method-agnostic rollout from snapshot t0 to the requested times."""
    traj_c, prot_c = _centered_window(record, t0)
    state0 = _start_state(record, traj_c, t0)
    ligand = fn.LigandState(atomic_numbers=record.ligand.atomic_numbers,
                            positions=traj_c[t0],
                            masses=record.ligand.masses)
    t_list = [float(t) for t in t_list]
    if method == "neuralmd-ode":
        force = _model_force_fn(model, record, params, prot_c)
        with ad.no_grad():
            return dyn.integrate_ode(state0, t_list, force,
                                     record.ligand.masses,
                                     dyn.SolverConfig(substeps=substeps))
    if method == "neuralmd-sde":
        force = _model_force_fn(model, record, params, prot_c)
        lang = langevin or dyn.LangevinConfig(gamma=0.1, temperature=0.1,
                                              seed=seed)
        with ad.no_grad():
            return dyn.integrate_sde(
                state0, t_list, force, record.ligand.masses,
                dyn.SolverConfig(method="euler-maruyama",
                                 substeps=substeps), lang)
    if method == "verletmd":
        return bl.verletmd_rollout(model, ligand, prot_c, params, state0,
                                   t_list, substeps=substeps)
    if method == "gnnmd":
        return bl.gnnmd_rollout(model, ligand, prot_c, params, state0,
                                t_list)
    if method == "denoisingld":
        return bl.denoisingld_rollout(model, ligand, prot_c, params, state0,
                                      t_list, sched=sched, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def ballistic_rollout(record: ComplexRecord, t0: int, t_list) -> np.ndarray:
    """Constant-velocity extrapolation from the rollout start."""
    traj_c, _ = _centered_window(record, t0)
    state0 = _start_state(record, traj_c, t0)
    return np.array([state0.positions + state0.velocities * (t - t0)
                     for t in t_list])


def train_method(method: str, model, records: Sequence[ComplexRecord],
                 split: Split, cfg: TrainConfig,
                 params: ParamSet = None) -> TrainResult:
    """Dispatch training for any of the five methods, returning the same
    TrainResult shape so the harness stays uniform."""
    if method in ("neuralmd-ode", "neuralmd-sde"):
        cfg.method = method
        return train_neuralmd(model, records, split, cfg, params=params)
    if split.kind == "single":
        train_records = [(records[0],
                          records[0].trajectory[split.train])]
    else:
        train_records = [(records[i], records[i].trajectory)
                         for i in split.train]
    if params is None:
        params = model.init_params(seed=cfg.seed)
    curves = []
    for record, traj in train_records:
        if method == "verletmd":
            curve = bl.verletmd_train(model, record.ligand, record.protein,
                                      traj, params, epochs=cfg.epochs,
                                      lr=cfg.lr, optimizer=cfg.optimizer)
        elif method == "gnnmd":
            curve = bl.gnnmd_train(model, record.ligand, record.protein,
                                   traj, params, epochs=cfg.epochs,
                                   lr=cfg.lr, optimizer=cfg.optimizer)
        elif method == "denoisingld":
            curve = bl.denoisingld_train(model, record.ligand,
                                         record.protein, traj, params,
                                         epochs=cfg.epochs, lr=cfg.lr,
                                         optimizer=cfg.optimizer,
                                         seed=cfg.seed)
        else:
            raise ValueError(f"unknown method {method!r}")
        curves.append(curve)
    curve = list(np.mean(curves, axis=0)) if curves else []
    best = select_checkpoint(curve) if curve else 0
    return TrainResult(params=params, best_params=params.clone(),
                       best_epoch=best, train_curve=curve, val_curve=[])


def evaluate(method: str, model, records: Sequence[ComplexRecord],
             split: Split, params: ParamSet, substeps: int = 4,
             seed: int = 0, delta: float = 0.5) -> MetricReport:
    """Test-window metrics for a trained parameter set."""
    if split.kind == "single":
        record = records[0]
        t0 = int(split.train.max())
        t_list = [float(t) for t in split.test]
        jobs = [(record, t0, t_list)]
    else:
        jobs = []
        for i in split.test:
            record = records[i]
            jobs.append((record, 0,
                         [float(t) for t in range(1, record.n_snapshots)]))
    per_traj = []
    maes, mses, stabs, fpss = [], [], [], []
    for record, t0, t_list in jobs:
        start = time.perf_counter()
        roll = rollout_method(method, model, record, params, t0, t_list,
                              substeps=substeps, seed=seed)
        elapsed = max(time.perf_counter() - start, 1e-12)
        traj_c, _ = _centered_window(record, t0)
        n_emitted = len(roll.positions)
        truth = traj_c[[int(t) for t in t_list[:n_emitted]]]
        if n_emitted == 0:
            log.warning("%s rollout for %s emitted nothing", method,
                        record.id)
            continue
        pred = _as_array(roll.positions)
        mae, mse = metric_recovery(pred, truth)
        stab = metric_stability(pred, truth, delta=delta)
        fps = n_emitted / elapsed
        per_traj.append({"id": record.id, "mae": mae, "mse": mse,
                         "stability": stab, "fps": fps,
                         "emitted": n_emitted, "requested": len(t_list),
                         "aborted": bool(roll.aborted)})
        maes.append(mae)
        mses.append(mse)
        stabs.append(stab)
        fpss.append(fps)
    if not maes:
        raise ValueError("no trajectory produced any snapshots to score")
    return MetricReport(method=method, mae=float(np.mean(maes)),
                        mse=float(np.mean(mses)),
                        stability=float(np.mean(stabs)),
                        fps=float(np.mean(fpss)), per_trajectory=per_traj)
