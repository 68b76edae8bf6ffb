"""Acceptance criteria, one test per criterion.

Each test prints exactly one PASS/FAIL verdict line (bypassing capture) so
a run of ``pytest -v`` doubles as the acceptance report. Headline-scale
results need the full dataset and GPU training; everything here is
property-based or a scaled-down synthetic reproduction.
"""

import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from bindmd import autodiff as ad
from bindmd import baselines as bl
from bindmd import data
from bindmd import dynamics as dyn
from bindmd import forcenet as fn
from bindmd import geometry as geo
from bindmd import training as tr
from bindmd.autodiff import Tensor

from test_forcenet import randomize, rotated, small_model, toy_complex


_REPORTER = None


@pytest.fixture(autouse=True)
def _reporter(request):
    # route verdict lines through pytest's terminal writer so they stay
    # visible even when output capture is active
    global _REPORTER
    _REPORTER = request.config.pluginmanager.get_plugin("terminalreporter")
    yield


def _emit(line: str) -> None:
    if _REPORTER is not None:
        _REPORTER.ensure_newline()
        _REPORTER.write_line(line)
    else:
        print(line, file=sys.__stdout__, flush=True)


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    _emit(f"[{tag}] {name}{suffix}")
    assert ok, f"{name}{suffix}"


def _soft(name: str, ok: bool, detail: str = "") -> None:
    tag = "HOLDS" if ok else "VIOLATED"
    _emit(f"[SOFT-{tag}] {name} ({detail})")


# -- equivariance suite ----------------------------------------------------

def test_equivariance_suite():
    start = time.time()
    model = small_model(d=8, layers=2)
    params = randomize(model.init_params(), seed=4, scale=0.1)
    ligand, prot = toy_complex(seed=5, n_atoms=4, n_res=4)
    rng = np.random.default_rng(0)
    x = Tensor(ligand.positions)
    pairs = geo.neighbor_pairs(ligand.positions, 6.0)
    worst_frame, worst_tower = 0.0, 0.0
    for k in range(20):
        R = Rotation.random(random_state=rng).as_matrix()
        lig_r, prot_r = rotated(ligand, prot, R)
        xr = Tensor(lig_r.positions)

        # frame constructors: every axis rotates with the input
        fr = geo.pair_frames(x[pairs[:, 0]], x[pairs[:, 1]])
        fr_r = geo.pair_frames(xr[pairs[:, 0]], xr[pairs[:, 1]])
        worst_frame = max(worst_frame, np.max(np.abs(
            fr_r.matrix.data - fr.matrix.data @ R.T)))
        bb = geo.backbone_frames(Tensor(prot.x_n), Tensor(prot.x_ca),
                                 Tensor(prot.x_c))
        bb_r = geo.backbone_frames(Tensor(prot_r.x_n), Tensor(prot_r.x_ca),
                                   Tensor(prot_r.x_c))
        worst_frame = max(worst_frame, np.max(np.abs(
            bb_r.matrix.data - bb.matrix.data @ R.T)))

        # towers: invariant features, equivariant vectors and forces
        lt = model.ligand_tower(ligand, params)
        lt_r = model.ligand_tower(lig_r, params)
        worst_tower = max(worst_tower,
                          np.max(np.abs(lt_r.h.data - lt.h.data)),
                          np.max(np.abs(lt_r.vec.data - lt.vec.data @ R.T)))
        pt = model.protein_tower(prot, params)
        pt_r = model.protein_tower(prot_r, params)
        worst_tower = max(worst_tower, np.max(np.abs(pt_r.data - pt.data)))
        f = model.predict_force(ligand, prot, params).data
        f_r = model.predict_force(lig_r, prot_r, params).data
        worst_tower = max(worst_tower, np.max(np.abs(f_r - f @ R.T)))
        e = model.predict_energy(ligand, prot, params).item()
        e_r = model.predict_energy(lig_r, prot_r, params).item()
        worst_tower = max(worst_tower, abs(e_r - e))
    elapsed = time.time() - start
    ok = worst_frame < 1e-9 and worst_tower < 1e-6 and elapsed < 60
    _verdict("equivariance suite (20 rigid motions, frames<1e-9, "
             "model<1e-6, <1min)", ok,
             f"frame {worst_frame:.2e}, model {worst_tower:.2e}, "
             f"{elapsed:.1f}s")


def test_reflection_antisymmetry():
    model = small_model(d=8, layers=2)
    params = randomize(model.init_params(), seed=11, scale=0.2)
    ligand, prot = toy_complex(seed=7, n_atoms=4, n_res=4)
    M = np.diag([1.0, 1.0, -1.0])
    lig_m, prot_m = rotated(ligand, prot, M)
    f = model.predict_force(ligand, prot, params).data
    f_m = model.predict_force(lig_m, prot_m, params).data
    gap = float(np.max(np.abs(f_m - f @ M.T)))
    _verdict("reflection antisymmetry (mirror force gap > 1e-3)",
             gap > 1e-3, f"gap {gap:.2e}")


# -- gradients -------------------------------------------------------------

def test_gradient_correctness():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 3)) + 0.7  # keep |x| away from kinks
    w = Tensor(rng.normal(size=(3, 3)))
    cond = rng.normal(size=(4, 3)) > 0
    ops = {
        "add": lambda t: ad.tsum(t + Tensor(x0)),
        "sub": lambda t: ad.tsum(t - 0.3 * t),
        "mul": lambda t: ad.tsum(t * t),
        "div": lambda t: ad.tsum(t / Tensor(x0 + 2.0)),
        "neg": lambda t: ad.tsum(-t),
        "abs": lambda t: ad.tsum(ad.tabs(t)),
        "power": lambda t: ad.tsum(ad.power(t * t + 1.0, 1.7)),
        "exp": lambda t: ad.tsum(ad.exp(0.3 * t)),
        "sqrt": lambda t: ad.tsum(ad.sqrt(t * t + 1.0)),
        "sigmoid": lambda t: ad.tsum(ad.sigmoid(t)),
        "silu": lambda t: ad.tsum(ad.silu(t)),
        "matmul": lambda t: ad.tsum(ad.matmul(t, w)),
        "transpose": lambda t: ad.tsum(ad.transpose(t) * Tensor(x0.T)),
        "reshape": lambda t: ad.tsum(ad.reshape(t, (2, 6)) *
                                     ad.reshape(Tensor(x0), (2, 6))),
        "sum-axis": lambda t: ad.tsum(ad.tsum(t, axis=0) ** 2),
        "mean": lambda t: ad.tmean(t * t),
        "concat": lambda t: ad.tsum(ad.concat([t, t * 2.0], axis=0)
                                    * Tensor(np.vstack([x0, x0]))),
        "stack": lambda t: ad.tsum(ad.stack([t, t * 2.0], axis=1) * 1.5),
        "take": lambda t: ad.tsum(t[np.array([0, 2, 2])] * Tensor(x0[:3])),
        "scatter": lambda t: ad.tsum(
            ad.scatter(t[np.array([1, 3])], np.array([0, 5]), (6, 3))
            * 2.0),
        "where": lambda t: ad.tsum(ad.where_const(cond, t, t * 3.0)),
        "segment-mean": lambda t: ad.tsum(
            ad.segment_mean(t, np.array([0, 0, 1, 1]), 2) ** 2),
    }
    worst = {}
    for name, f in ops.items():
        worst[name] = ad.grad_check(f, Tensor(x0), h=1e-5)
    model = small_model(d=8, layers=1)
    params = randomize(model.init_params(), seed=9, scale=0.1)
    ligand, prot = toy_complex(seed=2, n_atoms=3, n_res=3)

    def end_to_end(t):
        lig = fn.LigandState(atomic_numbers=ligand.atomic_numbers,
                             positions=t.data, masses=ligand.masses)
        return model.predict_energy(lig, prot, params, positions=t,
                                    check_centered=False)

    worst["end-to-end"] = ad.grad_check(end_to_end,
                                        Tensor(ligand.positions), h=1e-5)
    peak = max(worst.values())
    bad = [k for k, v in worst.items() if v >= 1e-4]
    _verdict("gradient correctness (all ops + d=8 end-to-end < 1e-4)",
             not bad, f"worst {peak:.2e}" +
             (f", failing {bad}" if bad else ""))


def test_adjoint_equivalence():
    model = small_model(d=8, layers=1)
    params = randomize(model.init_params(), seed=21, scale=0.05)
    ligand, prot = toy_complex(seed=0, n_atoms=3, n_res=3)
    protein_h = model.protein_tower(prot, params)

    def force(x):
        lig_out = model.ligand_tower(ligand, params, positions=x)
        f, _ = model.complex_tower(lig_out, protein_h, x, prot, params)
        return f

    def loss_fn(positions):
        total = None
        for p in positions:
            term = ad.tsum(p * p)
            total = term if total is None else total + term
        return total

    s0 = dyn.PhaseState(ligand.positions, np.zeros_like(ligand.positions))
    cfg = dyn.SolverConfig(method="euler", substeps=1)
    t_list = [0.1 * k for k in range(1, 6)]

    roll = dyn.integrate_ode(s0, t_list, force, ligand.masses, cfg)
    ad.backward(loss_fn(roll.positions))
    ref = {n: np.asarray(params[n].grad).copy() for n in params.names()
           if params[n].grad is not None}
    params.zero_grad()
    got = dyn.adjoint_gradients(s0, t_list, force, ligand.masses, cfg,
                                params, loss_fn)
    worst = 0.0
    for name, r in ref.items():
        scale = max(np.max(np.abs(r)), 1e-8)
        worst = max(worst, float(np.max(np.abs(got[name] - r)) / scale))
    del roll  # free the backprop graph so it cannot mask the peak counter

    # memory: peak graph nodes must not grow with rollout length
    k = Tensor(np.array([[0.8, 0.0, 0.0], [0.0, 1.2, 0.0]]))
    lin_params = ad.ParamSet(0)
    lin_k = lin_params.new_param("k", k.data)

    def lin_force(x):
        return -(lin_k * x)

    lin_s0 = dyn.PhaseState(np.ones((2, 3)), np.zeros((2, 3)))

    def peak(substeps):
        lin_params.zero_grad()
        ad.reset_graph_counters()
        dyn.adjoint_gradients(lin_s0, [1.0, 2.0, 3.0], lin_force,
                              [1.0, 1.0],
                              dyn.SolverConfig(substeps=substeps),
                              lin_params, loss_fn)
        return ad.peak_graph_nodes()

    # delta is immune to live nodes leaked by unrelated tests
    p3, p30 = peak(4), peak(40)
    ok = worst < 1e-3 and p30 - p3 <= 36
    _verdict("adjoint equivalence (<1e-3 vs backprop, O(1) memory)", ok,
             f"grad gap {worst:.2e}, peak nodes {p3}->{p30}")


# -- integrators -----------------------------------------------------------

def test_integrator_orders():
    def force(x):
        return -x  # unit harmonic oscillator

    ratios = []
    errs = []
    for substeps in (10, 20, 40):
        s0 = dyn.PhaseState(np.array([[1.0, 0.0, 0.0]]),
                            np.zeros((1, 3)))
        roll = dyn.integrate_ode(s0, [1.0], force, [1.0],
                                 dyn.SolverConfig(substeps=substeps))
        errs.append(abs(roll.positions[-1].data[0, 0] - np.cos(1.0)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    euler_ok = all(1.7 <= r <= 2.3 for r in ratios)

    x = np.array([[1.0, 0.0, 0.0]])
    v = np.zeros((1, 3))
    masses = np.array([1.0])
    e0 = 0.5 * np.sum(v ** 2) + 0.5 * np.sum(x ** 2)
    drift = 0.0
    for _ in range(10_000):
        x, v = dyn.velocity_verlet_step(x, v, lambda q: Tensor(-np.asarray(
            q.data if isinstance(q, Tensor) else q)), masses, 0.05)
        e = 0.5 * np.sum(v ** 2) + 0.5 * np.sum(x ** 2)
        drift = max(drift, abs(e - e0) / e0)
    verlet_ok = drift < 1e-3
    _verdict("integrator orders (Euler ratio in [1.7,2.3], Verlet drift "
             "<1e-3 over 1e4 steps)", euler_ok and verlet_ok,
             f"ratios {[round(r, 2) for r in ratios]}, drift {drift:.2e}")


def test_langevin_physics():
    start = time.time()

    def force(x):
        return Tensor(-np.asarray(x.data) * np.array([1.0, 0.0, 0.0]))

    s0 = dyn.PhaseState(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3)))
    t_list = [float(k) for k in range(1, 51)]
    ode = dyn.integrate_ode(s0, t_list, force, [1.0],
                            dyn.SolverConfig(substeps=4))
    sde = dyn.integrate_sde(s0, t_list, force, [1.0],
                            dyn.SolverConfig(method="euler-maruyama",
                                             substeps=4),
                            dyn.LangevinConfig(gamma=0.0, temperature=0.0,
                                               seed=0))
    bitwise = all(np.array_equal(a.data, b.data)
                  for a, b in zip(ode.positions, sde.positions))

    # equipartition: var(v_x) -> k_B T / m for the thermostatted oscillator
    m, temp = 2.0, 0.5
    lang = dyn.LangevinConfig(gamma=1.0, temperature=temp, seed=4)
    t_long = [float(k) for k in range(1, 2001)]
    roll = dyn.integrate_sde(dyn.PhaseState(np.array([[0.5, 0.0, 0.0]]),
                                            np.zeros((1, 3))),
                             t_long, force, [m],
                             dyn.SolverConfig(method="euler-maruyama",
                                              substeps=10), lang)
    vx = np.array([v.data[0, 0] for v in roll.velocities])
    var = float(np.var(vx[len(vx) // 10:]))
    target = temp / m
    elapsed = time.time() - start
    ok = bitwise and abs(var - target) / target < 0.10 and elapsed < 120
    _verdict("Langevin physics (gamma=0 bitwise ODE, velocity variance "
             "within 10% of kT/m, <2min)", ok,
             f"var {var:.4f} vs {target}, {elapsed:.1f}s")


# -- metrics ---------------------------------------------------------------

def test_metric_oracles():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(4, 3, 3))
    perfect = tr.metric_stability(truth.copy(), truth) == 0.0

    single = np.zeros((1, 2, 3))
    single[:, 1, 0] = 2.0
    pred = single.copy()
    pred[:, 1, 0] = 2.6  # 0.6 A deviation > 0.5 A threshold
    hundred = tr.metric_stability(pred, single) == 100.0

    two = np.zeros((2, 3, 3))
    two[:, 1, 0] = 2.0
    two[:, 2, 0] = 4.0
    pred2 = two.copy()
    pred2[1, 2, 0] = 6.0
    quarter = tr.metric_stability(pred2, two, pairs=[(0, 1), (1, 2)]) \
        == pytest.approx(25.0)

    off = truth.copy()
    off[:, :, 0] += 1.0
    mae, mse = tr.metric_recovery(off, truth)
    recov = abs(mae - 1.0 / 3.0) < 1e-12 and abs(mse - 1.0 / 3.0) < 1e-12
    ok = perfect and hundred and quarter and recov
    _verdict("metric oracles (0%/100%/25% stability, MAE/MSE to 1e-12)",
             ok, f"mae {mae:.12f}")


# -- learning --------------------------------------------------------------

TOY = dict(kind="harmonic-tether", n_atoms=2, n_sites=4, velocity_scale=0.15)


def _toy_record(n_snapshots=100, seed=0):
    return data.generate_synthetic(
        data.SyntheticSpec(n_snapshots=n_snapshots, seed=seed, **TOY))


def _toy_model(seed=0):
    return fn.BindingForceModel(fn.ModelConfig(hidden_dim=16, layers=2,
                                               cutoff=10.0, seed=seed))


def test_end_to_end_learning():
    start = time.time()
    rec = _toy_record()
    split = tr.split_single(100, 0.8)
    model = _toy_model()
    cfg = tr.TrainConfig(method="neuralmd-ode", epochs=500, lr=3e-3,
                         window=3, substeps=2, windows_per_epoch=4, seed=0)
    res = tr.train_neuralmd(model, [rec], split, cfg)
    drop = 1.0 - min(res.train_curve) / res.train_curve[0]
    rep = tr.evaluate("neuralmd-ode", model, [rec], split, res.best_params,
                      substeps=2)
    t0 = int(split.train.max())
    ball = tr.ballistic_rollout(rec, t0, [float(t) for t in split.test])
    ball_mae, _ = tr.metric_recovery(
        ball, tr._centered_window(rec, t0)[0][split.test])
    elapsed = time.time() - start
    ok = drop >= 0.5 and rep.mae < ball_mae and elapsed < 600
    _verdict("end-to-end learning (500 epochs, loss drop >=50%, test MAE "
             "< ballistic, <10min)", ok,
             f"drop {100 * drop:.0f}%, MAE {rep.mae:.3f} vs ballistic "
             f"{ball_mae:.3f}, {elapsed:.0f}s")


def test_method_harness_parity():
    rec = _toy_record(n_snapshots=20, seed=3)
    split = tr.split_single(20, 0.8)
    model = _toy_model()
    budgets = {"neuralmd-ode": 25, "neuralmd-sde": 25, "verletmd": 40,
               "gnnmd": 40, "denoisingld": 120}
    reports = {}
    for method in tr.METHODS:
        cfg = tr.TrainConfig(method=method, epochs=budgets[method],
                             lr=2e-3, window=2, substeps=2,
                             windows_per_epoch=3, seed=0)
        res = tr.train_method(method, model, [rec], split, cfg)
        reports[method] = tr.evaluate(method, model, [rec], split,
                                      res.best_params, substeps=2, seed=0)
    fields_ok = all(
        np.isfinite([r.mae, r.mse, r.stability, r.fps]).all()
        for r in reports.values())
    for r in reports.values():
        _emit(f"  {r.summary()}")
    # Table-1 trend, soft check only: report, never fail
    nmd = min(reports["neuralmd-ode"].stability,
              reports["neuralmd-sde"].stability)
    _soft("stability ordering NeuralMD <= GNN-MD",
          nmd <= reports["gnnmd"].stability,
          f"NeuralMD {nmd:.1f}% vs GNN-MD "
          f"{reports['gnnmd'].stability:.1f}%")
    _verdict("method harness parity (5 methods train+evaluate, comparable "
             "reports)", len(reports) == 5 and fields_ok)


def test_determinism():
    rec = _toy_record(n_snapshots=14, seed=5)
    split = tr.split_single(14, 0.8)

    def one_run():
        model = _toy_model()
        cfg = tr.TrainConfig(method="neuralmd-sde", epochs=3, lr=1e-3,
                             window=2, substeps=2, windows_per_epoch=2,
                             seed=11)
        res = tr.train_neuralmd(model, [rec], split, cfg)
        rep = tr.evaluate("neuralmd-sde", model, [rec], split,
                          res.best_params, substeps=2, seed=11)
        blobs = tuple(res.params[n].data.tobytes()
                      for n in res.params.names())
        doc = rep.to_dict()
        doc.pop("fps")  # wall-clock timing is the one nondeterministic field
        for p in doc["per_trajectory"]:
            p.pop("fps")
        return tuple(res.train_curve), blobs, doc

    a, b = one_run(), one_run()
    _verdict("determinism (bit-reproducible training and evaluation "
             "under fixed seed)", a == b)
