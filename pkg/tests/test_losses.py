import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stripformer.errors import CheckpointError, ConfigurationError, DimensionError
from stripformer.gradsuite import LOSS_TOLERANCE, run_block
from stripformer.losses import (
    FeatureExtractor,
    LossWeights,
    charbonnier,
    contrastive,
    edge_loss,
    laplacian,
    loss_terms,
    total_loss,
)
from stripformer.tensor import Tensor

F64 = np.float64


def t64(a):
    return Tensor(np.asarray(a, dtype=F64), dtype=F64)


@pytest.fixture(scope="module")
def psi():
    return FeatureExtractor(seed=0, dtype=F64)


def images(rng, n=3, shape=(1, 3, 8, 8)):
    return [t64(rng.uniform(0, 1, shape)) for _ in range(n)]


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.charbonnier_eps) == (0.05, 0.0005, 1e-3)
    with pytest.raises(ConfigurationError):
        LossWeights(lambda1=-1.0)
    with pytest.raises(ConfigurationError):
        LossWeights(charbonnier_eps=0.0)


def test_charbonnier_identities(rng):
    r, s, _ = images(rng)
    assert float(charbonnier(r, r).data) == 1e-3
    assert abs(float(charbonnier(t64(s.data + 3.0), s, eps=1e-9).data) - 3.0) < 1e-12
    assert float(charbonnier(r, s).data) == pytest.approx(float(charbonnier(s, r).data), abs=1e-16)
    assert float(charbonnier(r, s).data) > 1e-3
    with pytest.raises(DimensionError):
        charbonnier(r, t64(np.zeros((1, 3, 8, 7))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-4, 1e-1))
def test_charbonnier_lower_bound(seed, eps):
    rng = np.random.default_rng(seed)
    r, s = t64(rng.normal(size=(2, 5))), t64(rng.normal(size=(2, 5)))
    assert float(charbonnier(r, s, eps).data) >= eps


def test_laplacian_kernel(rng):
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    lap = laplacian(t64(x)).data[0, 0]
    np.testing.assert_array_equal(lap[1:4, 1:4], [[0, 1, 0], [1, -4, 1], [0, 1, 0]])
    assert not laplacian(t64(np.full((1, 3, 4, 6), 0.7))).data.any()


def test_edge_loss_identities(rng):
    r, s, _ = images(rng)
    assert float(edge_loss(r, r).data) == 1e-3
    assert float(edge_loss(t64(s.data + 0.25), s).data) == pytest.approx(1e-3, abs=1e-15)
    assert float(edge_loss(t64(r.data + 0.3), t64(s.data + 0.3)).data) == pytest.approx(
        float(edge_loss(r, s).data), abs=1e-14)
    with pytest.raises(DimensionError):
        edge_loss(t64(np.zeros((1, 3, 2, 5))), t64(np.zeros((1, 3, 2, 5))))


def test_feature_extractor_is_frozen_and_seeded(rng, tmp_path):
    a, b = FeatureExtractor(seed=3, dtype=F64), FeatureExtractor(seed=3, dtype=F64)
    x = t64(rng.uniform(0, 1, (1, 3, 16, 16)))
    assert a(x).data.tobytes() == b(x).data.tobytes()
    assert a(x).shape == (1, 64, 4, 4)
    with pytest.raises(ValueError):
        a._weights["stage0.conv0.weight"].data[...] = 0.0
    path = tmp_path / "psi.spf"
    a.save(path)
    c = FeatureExtractor.from_file(path, dtype=F64)
    assert c(x).data.tobytes() == a(x).data.tobytes()


def test_feature_extractor_file_errors(tmp_path):
    from stripformer.model import init_params, save_params, StripformerConfig
    path = tmp_path / "model.spf"
    save_params(path, init_params(StripformerConfig(base_channels=4, blocks_per_scale=1, heads=1)))
    with pytest.raises(CheckpointError):
        FeatureExtractor.from_file(path)


def test_feature_extractor_passes_gradient_to_input(rng):
    psi = FeatureExtractor(seed=1, widths=(4, 8), dtype=F64)
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)), requires_grad=True, dtype=F64)
    psi(x).sum().backward()
    assert x.grad is not None and np.any(x.grad)
    assert all(w.grad is None for w in psi._weights.values())


def test_contrastive_identities(rng, psi):
    x, s, _ = images(rng)
    assert float(contrastive(x, s, s, psi).data) == 0.0
    degenerate = float(contrastive(x, x, s, psi).data)
    ref = np.abs(psi(s).data - psi(x).data).mean() / 1e-7
    assert degenerate == pytest.approx(ref, rel=1e-12)


def test_contrastive_scale_invariance(rng, psi):
    x, s, r = images(rng)
    c = 7.5

    def scaled(t):
        return psi(t) * c

    num = np.abs(psi(s).data - psi(r).data).mean()
    den = np.abs(psi(x).data - psi(r).data).mean()
    # without the guard the ratio is exactly scale free
    assert abs(float(contrastive(x, r, s, scaled, delta=0.0).data) - num / den) < 1e-12
    assert abs(float(contrastive(x, r, s, psi, delta=0.0).data) - num / den) < 1e-12
    # with it, the only change is the guard's relative weight
    assert float(contrastive(x, r, s, scaled).data) == pytest.approx(c * num / (c * den + 1e-7), rel=1e-12)
    assert float(contrastive(x, r, s, psi).data) == pytest.approx(num / (den + 1e-7), rel=1e-12)


def test_contrastive_decreases_toward_sharp(rng, psi):
    x, s, _ = images(rng)
    values = []
    for a in np.linspace(0.0, 1.0, 11):
        r = t64((1 - a) * x.data + a * s.data)
        values.append(float(contrastive(x, r, s, psi).data))
    assert all(b < a for a, b in zip(values[1:], values[2:]))
    assert values[-1] == 0.0


def test_total_loss_composition(rng, psi):
    x, s, r = images(rng)
    w = LossWeights()
    hand = (float(charbonnier(r, s).data) + 0.05 * float(edge_loss(r, s).data)
            + 0.0005 * float(contrastive(x, r, s, psi).data))
    assert float(total_loss(x, r, s, w, psi).data) == pytest.approx(hand, rel=1e-15)
    same = float(total_loss(x, s, s, w, psi).data)
    assert same == 1e-3 + 0.05 * 1e-3
    only_char = total_loss(x, r, s, LossWeights(lambda1=0.0, lambda2=0.0))
    assert float(only_char.data) == float(charbonnier(r, s).data)


def test_loss_terms_reports_parts(rng, psi):
    x, s, r = images(rng)
    total, parts = loss_terms(x, r, s, LossWeights(), psi)
    assert set(parts) == {"l_char", "l_edge", "l_con"}
    assert parts["l_con"] > 0
    _, ablated = loss_terms(x, r, s, LossWeights(lambda2=0.0))
    assert ablated["l_con"] == 0.0
    with pytest.raises(ConfigurationError):
        loss_terms(x, r, s, LossWeights())


def test_loss_gradients_match_finite_differences():
    report = run_block("losses")
    assert max(report.values()) < LOSS_TOLERANCE, report
