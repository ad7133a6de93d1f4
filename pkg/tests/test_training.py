import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mobiusgcn import autodiff as ad
from mobiusgcn.data import bone_lengths, generate_synthetic
from mobiusgcn.mobius import init_network, block_widths
from mobiusgcn.training import (
    AdamState,
    DegeneratePoseError,
    NormalizationStats,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    calibrate_bone_scale,
    center_on_root,
    mse_loss,
    mse_loss_var,
    plateau_scheduler,
    train,
)


# ------------------------------------------------------------------ loss

def test_mse_examples():
    y = np.random.default_rng(0).normal(size=(16, 3))
    assert mse_loss(y, y) == 0.0
    p = y.copy()
    p[3] += [1.0, 2.0, 2.0]
    assert mse_loss(p, y) == pytest.approx(9.0, abs=1e-12)


def test_mse_matches_scalar_loop():
    rng = np.random.default_rng(1)
    p, y = rng.normal(size=(7, 16, 3)), rng.normal(size=(7, 16, 3))
    total = 0.0
    for b in range(7):
        for j in range(16):
            for k in range(3):
                total += (p[b, j, k] - y[b, j, k]) ** 2
    assert abs(mse_loss(p, y) - total / 7) < 1e-12
    tape = ad.Tape()
    assert abs(mse_loss_var(tape.constant(p), y).value - total / 7) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)))
def test_mse_nonnegative_and_zero_iff_equal(p, y):
    loss = mse_loss(p, y)
    assert loss >= 0
    assert (loss == 0) == bool(np.all(p == y))


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse_loss(np.zeros((16, 3)), np.zeros((16, 2)))


# ------------------------------------------------------------------ adam

def test_adam_first_step():
    p = [np.zeros(1)]
    state = AdamState.fresh(p)
    adam_step(p, [np.ones(1)], state, 0.001)
    assert p[0][0] == pytest.approx(-0.001, rel=1e-6)
    assert state.t == 1


def test_adam_zero_gradient():
    p = [np.array([1.5, -2.0])]
    state = AdamState.fresh(p)
    adam_step(p, [np.zeros(2)], state, 0.001)
    np.testing.assert_array_equal(p[0], [1.5, -2.0])
    assert state.t == 1


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = [rng.normal(size=(3, 4)), rng.normal(size=5)]
        state = AdamState.fresh(p)
        for _ in range(100):
            adam_step(p, [np.sin(x) + rng.normal(size=x.shape) for x in p], state, 0.001)
        return p
    a, b = run(), run()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(4)], AdamState.fresh(p), 0.001)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-6, 1e-3))
def test_adam_step_decreases_quadratic(seed, lr):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 2.0, 6)
    target = rng.normal(size=6)
    p = [target + rng.choice([-1, 1], 6) * rng.uniform(0.1, 1.0, 6)]
    loss = lambda x: float(np.sum(a * (x - target) ** 2))
    before = loss(p[0])
    adam_step(p, [2 * a * (p[0] - target)], AdamState.fresh(p), lr)
    assert loss(p[0]) < before


# ------------------------------------------------------------------ schedule

def test_plateau_examples():
    cfg = TrainConfig()
    assert plateau_scheduler([1.0 - 0.01 * k for k in range(30)], cfg) == 0.001
    # the first epoch sets the reference; five more without improvement trigger one decay
    assert plateau_scheduler([1.0] * 6, cfg) == 0.0005
    assert plateau_scheduler([1.0] * 5, cfg) == 0.001
    assert plateau_scheduler([1.0] * 11, cfg) == 0.00025
    assert plateau_scheduler([1.0] * 50, cfg, lr=cfg.min_lr) == cfg.min_lr


def test_plateau_threshold_is_relative():
    s = PlateauScheduler(1.0, patience=2, threshold=1e-3)
    for loss in [1.0, 0.9995, 0.9992]:  # improvements smaller than 0.1 %
        s.step(loss)
    assert s.lr == 0.5
    s = PlateauScheduler(1.0, patience=2, threshold=1e-3)
    for loss in [1.0, 0.998, 0.996]:
        s.step(loss)
    assert s.lr == 1.0


def test_plateau_needs_history():
    with pytest.raises(ValueError):
        plateau_scheduler([], TrainConfig())


def test_config_validation():
    for bad in [dict(decay_factor=1.0), dict(decay_factor=0.0), dict(batch_size=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# ------------------------------------------------------------------ geometry

def test_center_on_root():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 16, 3))
    c = center_on_root(x, 0)
    assert np.all(c[:, 0] == 0)
    np.testing.assert_array_equal(center_on_root(c, 0), c)
    t = rng.normal(size=3)
    np.testing.assert_allclose(center_on_root(x + t, 0), c, atol=1e-12)


def test_calibration_doubles(topo):
    canon = np.full(len(topo.edges), 120.0)
    pose = center_on_root(generate_synthetic(1, topo, seed=0)[0].joints3d, 0)
    pose *= 900.0 / bone_lengths(pose, topo).sum()
    out = calibrate_bone_scale(pose, canon, topo)
    np.testing.assert_allclose(out, 2 * pose, rtol=1e-12)
    np.testing.assert_allclose(calibrate_bone_scale(out, canon, topo), out, rtol=1e-12)


def test_calibration_total_and_idempotence(topo):
    rng = np.random.default_rng(1)
    canon = rng.uniform(50, 500, len(topo.edges))
    for _ in range(100):
        pose = rng.normal(size=(16, 3)) * rng.uniform(1, 1000)
        once = calibrate_bone_scale(pose, canon, topo)
        assert abs(bone_lengths(once, topo).sum() - canon.sum()) < 1e-9
        np.testing.assert_allclose(calibrate_bone_scale(once, canon, topo), once, rtol=1e-12, atol=1e-12)
        k = rng.uniform(0.1, 10)
        np.testing.assert_allclose(calibrate_bone_scale(k * pose, canon, topo), once, rtol=1e-10, atol=1e-9)


def test_calibration_rejects_collapsed_pose(topo):
    with pytest.raises(DegeneratePoseError):
        calibrate_bone_scale(np.zeros((16, 3)), np.ones(15), topo)


def test_normalization_stats(topo):
    samples = generate_synthetic(50, topo, seed=0)
    stats = NormalizationStats.fit(samples, topo)
    x = stats.normalize_input(np.stack([s.joints2d for s in samples]))
    assert np.min(x) == pytest.approx(-1.0) or np.max(x) == pytest.approx(1.0)
    assert np.min(x) >= -1 - 1e-12 and np.max(x) <= 1 + 1e-12
    np.testing.assert_allclose(stats.denormalize_input(x), [s.joints2d for s in samples], atol=1e-9)
    y = stats.normalize_target(samples[0].joints3d, 0)
    np.testing.assert_allclose(y * 1000, center_on_root(samples[0].joints3d, 0), atol=1e-12)
    assert np.all(stats.bone_lengths > 0)


# ------------------------------------------------------------------ loop

def tiny_run(topo, epochs, seed=0):
    samples = generate_synthetic(24, topo, seed=seed)
    net = init_network(block_widths(8), topo, seed)
    log = io.StringIO()
    result = train(net, samples, TrainConfig(max_epochs=epochs, batch_size=8, seed=seed), log=log)
    return net, result, log.getvalue()


def test_zero_epochs_keeps_init(topo):
    net, result, log = tiny_run(topo, 0)
    fresh = init_network(block_widths(8), topo, 0)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.parameters(), fresh.parameters()))
    assert result.history == [] and log == "epoch,train_loss,val_loss,lr\n"


def test_training_is_deterministic_and_learns(topo):
    net_a, res_a, log_a = tiny_run(topo, 6)
    net_b, res_b, log_b = tiny_run(topo, 6)
    assert log_a == log_b
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net_a.parameters(), net_b.parameters()))
    assert res_a.history[-1].train_loss < res_a.history[0].train_loss
    rows = log_a.splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,lr" and len(rows) == 7
    assert res_a.metrics_csv() == log_a
    assert set(res_a.train_indices).isdisjoint(res_a.val_indices)
