import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdda.classifier import AdaptiveLeNet, cross_entropy, resample_array, resample_matrix, spectral_resample
from spdda.gradcheck import directional_check, gradcheck
from spdda.tensor import ShapeError, Tensor


def interp_oracle(values, c_ref):
    """Scalar linear interpolation on uniform grids over [0, 1]."""
    k = len(values)
    out = []
    for c in range(c_ref):
        pos = c / (c_ref - 1) * (k - 1)
        lo = min(int(math.floor(pos)), k - 2)
        f = pos - lo
        out.append(values[lo] * (1 - f) + values[lo + 1] * f)
    return out


def test_resample_examples(rng):
    x = rng.uniform(size=(2, 6, 3, 3))
    np.testing.assert_allclose(spectral_resample(Tensor(x), 6).data, x, atol=1e-12)
    two = np.array([0.0, 1.0]).reshape(1, 2, 1, 1)
    np.testing.assert_allclose(spectral_resample(Tensor(two), 3).data.ravel(), [0.0, 0.5, 1.0], atol=1e-15)
    with pytest.raises(ValueError):
        resample_matrix(1, 4)


def test_resample_brute_force(rng):
    x = rng.uniform(size=(2, 7, 3, 2))
    out = spectral_resample(Tensor(x), 5).data
    for b in range(2):
        for r in range(3):
            for c in range(2):
                np.testing.assert_allclose(out[b, :, r, c], interp_oracle(list(x[b, :, r, c]), 5), rtol=0, atol=1e-12)


@given(st.integers(2, 40), st.integers(2, 40), st.floats(-5, 5), st.floats(-1, 1))
def test_resample_constants_and_linear_spectra(k, c_ref, a, slope):
    const = np.full((1, k, 1, 1), a)
    np.testing.assert_allclose(spectral_resample(Tensor(const), c_ref).data, a, atol=1e-10)
    lin = (a + slope * np.linspace(0, 1, k)).reshape(1, k, 1, 1)
    expected = a + slope * np.linspace(0, 1, c_ref)
    np.testing.assert_allclose(spectral_resample(Tensor(lin), c_ref).data.ravel(), expected, atol=1e-10)
    m = resample_matrix(k, c_ref)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_resample_array_matches_tensor_path(rng):
    v = rng.uniform(size=(5, 4, 9))
    out = resample_array(v, 12, axis=2)
    ref = spectral_resample(Tensor(v.transpose(0, 2, 1)[..., None]), 12).data[..., 0].transpose(0, 2, 1)
    np.testing.assert_allclose(out, ref, atol=1e-14)


def test_output_shapes_for_every_channel_count():
    rng = np.random.default_rng(0)
    net = AdaptiveLeNet(8, 7, rng)
    for k in range(2, 17):
        logits, emb = net(Tensor(rng.uniform(size=(3, k, 13, 13))))
        assert logits.shape == (3, 7) and emb.shape == (3, 128)
        np.testing.assert_allclose(np.linalg.norm(emb.data, axis=1), 1.0, atol=1e-10)


def test_classifier_rejects_bad_input(rng):
    net = AdaptiveLeNet(4, 3, rng)
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 4, 11, 11))))
    with pytest.raises(ValueError):
        AdaptiveLeNet(4, 3, rng, patch_size=7)


def test_other_patch_sizes(rng):
    for size in (9, 10, 15):
        net = AdaptiveLeNet(4, 2, rng, patch_size=size)
        assert net(Tensor(rng.uniform(size=(1, 5, size, size))))[0].shape == (1, 2)


def test_predict_batches_consistently(rng):
    net = AdaptiveLeNet(4, 3, rng)
    x = rng.uniform(size=(7, 4, 13, 13))
    np.testing.assert_array_equal(net.predict(x, batch_size=3), net(Tensor(x))[0].data.argmax(axis=1))
    assert net.predict(np.zeros((0, 4, 13, 13))).size == 0


def test_cross_entropy_examples():
    assert cross_entropy(Tensor(np.zeros((4, 5))), [0, 1, 2, 4]).item() == pytest.approx(math.log(5), abs=1e-15)
    confident = np.array([[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]])
    assert cross_entropy(Tensor(confident), [0, 2]).item() < 1e-20
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0])
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0])


def test_cross_entropy_brute_force(rng):
    logits = rng.normal(scale=3, size=(6, 4))
    labels = rng.integers(0, 4, 6)
    ref = -sum(math.log(math.exp(logits[i, labels[i]]) / sum(math.exp(v) for v in logits[i])) for i in range(6)) / 6
    assert abs(cross_entropy(Tensor(logits), labels).item() - ref) < 1e-12


def test_cross_entropy_stable_for_large_logits():
    v = cross_entropy(Tensor(np.array([[1000.0, 0.0]])), [1]).item()
    assert v == pytest.approx(1000.0, rel=1e-12)


def test_full_network_gradcheck():
    rng = np.random.default_rng(5)
    net = AdaptiveLeNet(6, 3, rng, hidden=16, filters=(4, 6))
    x = Tensor(rng.uniform(size=(2, 5, 13, 13)))
    labels = np.array([0, 2])

    def loss(x):
        return cross_entropy(net(x)[0], labels)

    assert gradcheck(loss, [x]) < 1e-3
    params = list(net.parameters().values())
    check_rng = np.random.default_rng(1)
    for _ in range(3):
        assert directional_check(lambda: loss(x), params, check_rng) < 1e-3
