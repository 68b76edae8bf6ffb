"""Splits, metrics, the windowed training loop, and the method harness."""

import numpy as np
import pytest

from bindmd import data, dynamics as dyn, training as tr
from bindmd.forcenet import BindingForceModel, ModelConfig


def toy_record(n_snapshots=24, seed=1, **kw):
    spec = data.SyntheticSpec(kind="harmonic-tether", n_atoms=2, n_sites=4,
                              n_snapshots=n_snapshots, seed=seed, **kw)
    return data.generate_synthetic(spec)


def small_model(hidden_dim=8, layers=1, seed=0, cutoff=9.0):
    # generous cutoff so untrained rollout drift cannot empty the pair list
    return BindingForceModel(ModelConfig(hidden_dim=hidden_dim,
                                         layers=layers, seed=seed,
                                         cutoff=cutoff))


def quick_cfg(**kw):
    base = dict(method="neuralmd-ode", epochs=3, lr=1e-3, window=2,
                substeps=2, windows_per_epoch=2, seed=0)
    base.update(kw)
    return tr.TrainConfig(**base)


# -- splits ---------------------------------------------------------------

def test_split_single_is_temporal_prefix():
    s = tr.split_single(10, 0.8)
    np.testing.assert_array_equal(s.train, np.arange(8))
    np.testing.assert_array_equal(s.test, np.arange(8, 10))
    assert s.val.size == 0


def test_split_single_rejects_tiny_sides():
    with pytest.raises(ValueError, match="fewer than 2"):
        tr.split_single(4, 0.9)
    with pytest.raises(ValueError, match="fewer than 2"):
        tr.split_single(4, 0.1)


def test_split_multi_partitions_and_is_seeded():
    a = tr.split_multi(20, (0.8, 0.1, 0.1), seed=5)
    b = tr.split_multi(20, (0.8, 0.1, 0.1), seed=5)
    c = tr.split_multi(20, (0.8, 0.1, 0.1), seed=6)
    np.testing.assert_array_equal(a.train, b.train)
    assert not np.array_equal(a.train, c.train)
    combined = np.sort(np.concatenate([a.train, a.val, a.test]))
    np.testing.assert_array_equal(combined, np.arange(20))
    assert len(a.train) == 16 and len(a.val) == 2 and len(a.test) == 2


def test_split_multi_rejects_bad_fractions():
    with pytest.raises(ValueError, match="sum to 1"):
        tr.split_multi(10, (0.5, 0.2, 0.2))


# -- metrics --------------------------------------------------------------

def test_recovery_exact_match_is_zero():
    x = np.random.default_rng(0).normal(size=(4, 3, 3))
    mae, mse = tr.metric_recovery(x, x.copy())
    assert mae < 1e-12 and mse < 1e-12


def test_recovery_uniform_offset_oracle():
    # [DERIVED] +1 A on x only: per-coordinate MAE = MSE = 1/3
    truth = np.random.default_rng(1).normal(size=(5, 4, 3))
    pred = truth.copy()
    pred[:, :, 0] += 1.0
    mae, mse = tr.metric_recovery(pred, truth)
    assert mae == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert mse == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_stability_zero_when_distances_preserved():
    truth = np.random.default_rng(2).normal(size=(6, 3, 3))
    pred = truth + np.array([5.0, -2.0, 1.0])  # rigid shift keeps distances
    assert tr.metric_stability(pred, truth) == 0.0


def test_stability_all_violations():
    truth = np.zeros((3, 2, 3))
    truth[:, 1, 0] = 2.0
    pred = truth.copy()
    pred[:, 1, 0] = 4.0  # every pair distance off by 2 > delta
    assert tr.metric_stability(pred, truth, delta=0.5) == 100.0


def test_stability_partial_violations():
    # [DERIVED] 2 pairs x 2 snapshots, exactly one event violated -> 25%
    truth = np.zeros((2, 3, 3))
    truth[:, 1, 0] = 2.0
    truth[:, 2, 0] = 4.0
    pred = truth.copy()
    pred[1, 2, 0] = 6.0
    pairs = [(0, 1), (1, 2)]
    assert tr.metric_stability(pred, truth, delta=0.5,
                               pairs=pairs) == pytest.approx(25.0)


def test_stability_threshold_is_strict():
    truth = np.zeros((1, 2, 3))
    truth[:, 1, 0] = 2.0
    pred = truth.copy()
    pred[:, 1, 0] = 2.5  # deviation exactly delta: not a violation
    assert tr.metric_stability(pred, truth, delta=0.5) == 0.0


def test_stability_single_atom_warns(caplog):
    with caplog.at_level("WARNING"):
        out = tr.metric_stability(np.zeros((3, 1, 3)), np.zeros((3, 1, 3)))
    assert out == 0.0
    assert any("fewer than 2" in r.message for r in caplog.records)


def test_fps_with_injected_timer():
    ticks = iter([0.0, 2.0])

    def rollout():
        return [None] * 20

    # [TRIVIAL] 20 snapshots in 2 s -> 10 FPS
    assert tr.metric_fps(rollout, timer=lambda: next(ticks)) == 10.0


def test_metric_report_round_trip(tmp_path):
    rep = tr.MetricReport(method="gnnmd", mae=0.125, mse=0.015625,
                          stability=12.5, fps=100.0,
                          per_trajectory=[{"id": "a", "mae": 0.125}])
    path = tmp_path / "report.json"
    rep.save(path)
    back = tr.MetricReport.load(path)
    assert back.to_dict() == rep.to_dict()
    assert "gnnmd" in back.summary()


def test_metric_report_validates():
    with pytest.raises(ValueError):
        tr.MetricReport(method="x", mae=-1.0, mse=0.0, stability=0.0,
                        fps=1.0)
    with pytest.raises(ValueError):
        tr.MetricReport(method="x", mae=0.0, mse=0.0, stability=150.0,
                        fps=1.0)


def test_select_checkpoint_non_monotone_curve():
    # [TRIVIAL] planted minimum at index 3; NaN entries never win
    assert tr.select_checkpoint([0.9, 0.4, 0.6, 0.1, 0.3, np.nan]) == 3
    assert tr.select_checkpoint([0.5, 0.5]) == 0


# -- training loop --------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError, match="unknown method"):
        quick_cfg(method="alchemy")
    with pytest.raises(ValueError):
        quick_cfg(window=0)


def test_zero_lr_leaves_params_unchanged():
    rec = toy_record(n_snapshots=10)
    model = small_model()
    params = model.init_params(seed=0)
    before = {n: params[n].data.copy() for n in params.names()}
    res = tr.train_neuralmd(model, [rec], tr.split_single(10, 0.8),
                            quick_cfg(lr=0.0, epochs=2), params=params)
    for n in params.names():
        np.testing.assert_array_equal(params[n].data, before[n])
    assert len(res.train_curve) == 2


def test_training_is_seed_deterministic():
    rec = toy_record(n_snapshots=10)
    curves = []
    for _ in range(2):
        model = small_model()
        res = tr.train_neuralmd(model, [rec], tr.split_single(10, 0.8),
                                quick_cfg(epochs=3))
        curves.append(res.train_curve)
    assert curves[0] == curves[1]


def test_training_reduces_loss_on_harmonic_toy():
    rec = toy_record(n_snapshots=24, seed=2)
    model = small_model(hidden_dim=16, layers=2)
    cfg = quick_cfg(epochs=40, lr=3e-3, windows_per_epoch=4)
    res = tr.train_neuralmd(model, [rec], tr.split_single(24, 0.8), cfg)
    assert res.train_curve[-1] < 0.8 * res.train_curve[0]
    assert res.best_epoch == tr.select_checkpoint(res.train_curve)


def test_non_finite_loss_aborts_with_checkpoint():
    rec = toy_record(n_snapshots=10)
    rec.trajectory[3:] = np.nan  # poisoned truth inside the train range
    model = small_model()
    res = tr.train_neuralmd(model, [rec], tr.split_single(10, 0.8),
                            quick_cfg(epochs=4))
    assert res.aborted
    assert isinstance(res.best_params, type(res.params))


def test_multi_split_checkpoints_on_validation():
    records = [toy_record(n_snapshots=8, seed=s) for s in range(4)]
    split = tr.Split(kind="multi", train=np.array([0, 1]),
                     val=np.array([2]), test=np.array([3]))
    model = small_model()
    res = tr.train_neuralmd(model, records, split, quick_cfg(epochs=3))
    assert len(res.val_curve) == 3
    assert res.best_epoch == tr.select_checkpoint(res.val_curve)


def test_single_split_requires_one_record():
    recs = [toy_record(n_snapshots=8, seed=s) for s in range(2)]
    with pytest.raises(ValueError, match="exactly one"):
        tr.train_neuralmd(small_model(), recs, tr.split_single(8, 0.75),
                          quick_cfg())


# -- harness --------------------------------------------------------------

def test_ballistic_rollout_is_linear():
    rec = toy_record(n_snapshots=10)
    out = tr.ballistic_rollout(rec, 5, [6.0, 7.0, 9.0])
    step = out[1] - out[0]
    np.testing.assert_allclose(out[2] - out[1], 2.0 * step, atol=1e-12)


@pytest.mark.parametrize("method", tr.METHODS)
def test_rollout_method_smoke(method):
    rec = toy_record(n_snapshots=12)
    model = small_model()
    params = model.init_params(seed=0)
    roll = tr.rollout_method(method, model, rec, params, 5,
                             [6.0, 7.0, 8.0], substeps=2, seed=0)
    assert isinstance(roll, dyn.Rollout)
    assert len(roll.positions) == 3
    assert roll.positions[0].data.shape == (2, 3)


@pytest.mark.parametrize("method", tr.METHODS)
def test_evaluate_produces_report(method):
    rec = toy_record(n_snapshots=12)
    model = small_model()
    params = model.init_params(seed=0)
    rep = tr.evaluate(method, model, [rec], tr.split_single(12, 0.75),
                      params, substeps=2)
    assert rep.method == method
    assert rep.mae >= 0 and rep.fps > 0
    assert rep.per_trajectory[0]["emitted"] == 3


def test_train_method_dispatches_baselines():
    rec = toy_record(n_snapshots=8)
    model = small_model()
    split = tr.split_single(8, 0.75)
    for method in ("verletmd", "gnnmd", "denoisingld"):
        res = tr.train_method(method, model, [rec], split,
                              quick_cfg(method=method, epochs=2, lr=1e-3))
        assert len(res.train_curve) == 2
        assert np.all(np.isfinite(res.train_curve))


def test_evaluate_multi_split_averages_trajectories():
    records = [toy_record(n_snapshots=6, seed=s) for s in range(3)]
    split = tr.Split(kind="multi", train=np.array([0]), val=np.array([]),
                     test=np.array([1, 2]))
    model = small_model()
    params = model.init_params(seed=0)
    rep = tr.evaluate("gnnmd", model, records, split, params)
    assert len(rep.per_trajectory) == 2
    assert rep.mae == pytest.approx(
        np.mean([p["mae"] for p in rep.per_trajectory]))
