import csv
import math

import numpy as np
import pytest

from stripformer import tensor as T
from stripformer import training
from stripformer.data import synthetic_pairs
from stripformer.errors import ConfigurationError, OptimizerError, TrainingDiverged, UsageError
from stripformer.losses import LossWeights
from stripformer.model import StripformerConfig, load_params
from stripformer.training import (
    LOG_COLUMNS,
    OptimState,
    Schedule,
    TrainConfig,
    adam_step,
    cosine_lr,
    train_loop,
)

TINY = StripformerConfig(base_channels=4, blocks_per_scale=1, heads=1, mlp_ratio=2)


def tiny_run(**kw):
    cfg = dict(steps=4, batch_size=1, crop=16, eval_every=2)
    cfg.update(kw)
    return TrainConfig(**cfg)


@pytest.fixture(scope="module")
def pairs():
    return synthetic_pairs(2, 24, np.random.default_rng(0))


def test_schedule_endpoints_and_midpoint():
    s = Schedule(1e-4, 1e-7, 1000)
    assert math.isclose(cosine_lr(0, s), 1e-4, rel_tol=1e-12)
    assert math.isclose(cosine_lr(1000, s), 1e-7, rel_tol=1e-12)
    assert math.isclose(cosine_lr(500, s), (1e-4 + 1e-7) / 2, rel_tol=1e-12)
    lrs = [cosine_lr(t, s) for t in range(1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_schedule_errors():
    s = Schedule(total_steps=10)
    for bad in (-1, 11):
        with pytest.raises(UsageError):
            cosine_lr(bad, s)
    with pytest.raises(ConfigurationError):
        Schedule(1e-4, 1e-3, 10)
    with pytest.raises(ConfigurationError):
        Schedule(total_steps=0)


def test_first_adam_step_moves_by_lr():
    w0, g = np.array([1.0, -2.0, 3.0]), np.array([0.5, -7.0, 1e-3])
    p = {"w": T.Tensor(w0.copy())}
    adam_step(p, OptimState(), 1e-4, grads={"w": g})
    # bias correction makes the first update lr * g / (|g| + eps), about lr * sign(g)
    np.testing.assert_allclose(p["w"].data, w0 - 1e-4 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)
    np.testing.assert_allclose(p["w"].data - w0, -1e-4 * np.sign(g), rtol=1e-4)


def test_zero_gradient_is_no_op():
    w0 = np.array([0.3, 0.4])
    p = {"w": T.Tensor(w0.copy())}
    state = OptimState()
    adam_step(p, state, 1e-2, grads={"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].data, w0)
    assert state.step == 1


def test_adam_minimizes_quadratic():
    w = T.Tensor(np.array([1.0, -0.5, 2.0]), requires_grad=True)
    state = OptimState()
    sched = Schedule(0.05, 1e-6, 500)
    for t in range(500):
        w.grad = None
        loss = (w * w).sum()
        loss.backward()
        adam_step({"w": w}, state, cosine_lr(t, sched))
    assert np.abs(w.data).max() < 1e-3


def test_missing_or_misshapen_gradient():
    p = {"w": T.Tensor(np.ones(3))}
    with pytest.raises(OptimizerError, match="'w'"):
        adam_step(p, OptimState(), 1e-3)
    with pytest.raises(OptimizerError, match="shape"):
        adam_step(p, OptimState(), 1e-3, grads={"w": np.ones(2)})


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(dtype="float16")
    assert TrainConfig().schedule() == Schedule(1e-4, 1e-7, 200)


def test_loop_is_deterministic_and_logs(pairs, tmp_path):
    a = train_loop(pairs, TINY, tiny_run(), checkpoint_path=tmp_path / "a.spf", log_path=tmp_path / "a.csv")
    b = train_loop(pairs, TINY, tiny_run(), checkpoint_path=tmp_path / "b.spf", log_path=tmp_path / "b.csv")
    assert a.log == b.log
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.spf").read_bytes() == (tmp_path / "b.spf").read_bytes()
    assert [r["step"] for r in a.log] == [0, 1, 2, 3]
    assert [r["psnr_val"] is None for r in a.log] == [True, False, True, False]
    assert math.isclose(a.log[0]["lr"], 1e-4)
    loaded = load_params(tmp_path / "a.spf", TINY)
    for k in a.params:
        np.testing.assert_array_equal(loaded[k].data, a.params[k].data)
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 5
    assert rows[1][-1] == "" and float(rows[2][-1]) == a.log[1]["psnr_val"]
    assert float(rows[3][5]) == a.log[2]["total"]


def test_different_seed_changes_run(pairs):
    a = train_loop(pairs, TINY, tiny_run(steps=2))
    b = train_loop(pairs, TINY, tiny_run(steps=2, seed=1))
    assert a.log[0]["total"] != b.log[0]["total"]


def test_lambda2_zero_disables_contrastive(pairs):
    res = train_loop(pairs, TINY, tiny_run(steps=3), LossWeights(lambda2=0.0))
    assert all(r["l_con"] == 0.0 for r in res.log)
    for r in res.log:
        assert math.isclose(r["total"], r["l_char"] + 0.05 * r["l_edge"], rel_tol=1e-6)


def test_loss_decreases_over_short_run(pairs):
    res = train_loop(pairs[:1], TINY, tiny_run(steps=30, crop=None, augment=False, lr_init=2e-3))
    assert res.log[-1]["total"] < res.log[0]["total"]


def test_nan_loss_aborts_with_checkpoint(pairs, tmp_path, monkeypatch):
    real = training.loss_terms
    calls = {"n": 0}

    def flaky(*args, **kw):
        total, parts = real(*args, **kw)
        calls["n"] += 1
        if calls["n"] == 3:
            total = total * float("nan")
        return total, parts

    monkeypatch.setattr(training, "loss_terms", flaky)
    ckpt = tmp_path / "last.spf"
    with pytest.raises(TrainingDiverged) as info:
        train_loop(pairs, TINY, tiny_run(), checkpoint_path=ckpt)
    assert info.value.step == 2
    params = load_params(ckpt, TINY)
    assert all(np.isfinite(params[k].data).all() for k in params)


def test_empty_dataset():
    with pytest.raises(ConfigurationError):
        train_loop([], TINY, tiny_run())


def test_float64_training(pairs):
    res = train_loop(pairs, TINY, tiny_run(steps=2, dtype="float64"))
    assert res.params["out.weight"].dtype == np.float64
