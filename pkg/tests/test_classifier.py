import math

import numpy as np
import pytest

from protomatch.classifier import (
    FusionConfig,
    HeadTrainConfig,
    LinearHead,
    argmax_lowest,
    predict_fused,
    predict_linear,
    predict_prototype,
    train_linear,
)
from protomatch.exceptions import DimensionMismatchError
from protomatch.prototypes import PrototypeBank

from .conftest import random_unit

E = math.e
TWO = [E / (E + 1), 1 / (E + 1)]


def test_zero_head_uniform():
    np.testing.assert_allclose(predict_linear(LinearHead.zeros(5, 3), [1.0, 0, 0]), [0.2] * 5, atol=1e-15)


def test_linear_two_class():
    head = LinearHead(np.eye(2), np.zeros(2))
    np.testing.assert_allclose(predict_linear(head, [1.0, 0.0]), TWO, atol=1e-15)


def test_linear_bias_shift_invariance(rng):
    head = LinearHead(rng.standard_normal((4, 3)), rng.standard_normal(4))
    z = random_unit(rng, 10, 3)
    shifted = LinearHead(head.weights, head.biases + 7.5)
    np.testing.assert_allclose(predict_linear(shifted, z), predict_linear(head, z), atol=1e-12)


def test_prototype_two_class():
    bank = PrototypeBank(np.eye(2), [1, 1])
    np.testing.assert_allclose(predict_prototype(bank, [1.0, 0.0]), TWO, atol=1e-15)


def test_prototype_equidistant_uniform():
    bank = PrototypeBank(np.eye(3), [1, 1, 1])
    np.testing.assert_allclose(predict_prototype(bank, np.ones(3) / math.sqrt(3)), [1 / 3] * 3, atol=1e-15)


def test_prototype_argmax_is_nearest(rng):
    bank = PrototypeBank(random_unit(rng, 7, 5), np.ones(7))
    z = random_unit(rng, 2000, 5)
    pred = argmax_lowest(predict_prototype(bank, z))
    for zi, p in zip(z, pred):
        sims = [float(np.dot(zi, c)) for c in bank.prototypes]
        assert p == sims.index(max(sims))


def test_fused_endpoints_and_blend(rng):
    head = LinearHead(rng.standard_normal((3, 4)), rng.standard_normal(3))
    bank = PrototypeBank(random_unit(rng, 3, 4), [1, 1, 1])
    z = random_unit(rng, 6, 4)
    assert np.array_equal(predict_fused(head, bank, FusionConfig(0.0), z), predict_linear(head, z))
    assert np.array_equal(predict_fused(head, bank, FusionConfig(1.0), z), predict_prototype(bank, z))
    p1, p0 = predict_prototype(bank, z), predict_linear(head, z)
    for a in np.linspace(0, 1, 11):
        np.testing.assert_allclose(predict_fused(head, bank, a, z), a * p1 + (1 - a) * p0, atol=1e-12)


def test_fused_hand_blend():
    # build heads whose outputs are exactly (0.6, 0.4) and (0.2, 0.8)
    head = LinearHead(np.zeros((2, 2)), [0.0, math.log(4.0)])
    lp = predict_linear(head, [1.0, 0.0])
    np.testing.assert_allclose(lp, [0.2, 0.8], atol=1e-15)
    # z.c1 - z.c2 = ln(1.5) with z = (1, 0): c1 = (x, y1), c2 = (x', y2)
    t = math.log(1.5)
    c1 = np.array([1.0, 0.0])
    cos2 = 1.0 - t
    c2 = np.array([cos2, math.sqrt(1 - cos2 ** 2)])
    bank = PrototypeBank(np.vstack([c1, c2]), [1, 1])
    np.testing.assert_allclose(predict_prototype(bank, [1.0, 0.0]), [0.6, 0.4], atol=1e-12)
    np.testing.assert_allclose(predict_fused(head, bank, 0.8, [1.0, 0.0]), [0.52, 0.48], atol=1e-12)


def test_probability_vectors(rng):
    head = LinearHead(rng.standard_normal((6, 4)) * 3, rng.standard_normal(6))
    bank = PrototypeBank(random_unit(rng, 6, 4), np.ones(6))
    z = random_unit(rng, 500, 4)
    for p in (predict_linear(head, z), predict_prototype(bank, z), predict_fused(head, bank, 0.8, z)):
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_fusion_preserves_agreement(rng):
    head = LinearHead(rng.standard_normal((5, 4)) * 2, np.zeros(5))
    bank = PrototypeBank(random_unit(rng, 5, 4), np.ones(5))
    z = random_unit(rng, 500, 4)
    pl, pp = predict_linear(head, z), predict_prototype(bank, z)
    agree = np.argmax(pl, 1) == np.argmax(pp, 1)
    for a in np.linspace(0, 1, 6):
        pf = predict_fused(head, bank, a, z)
        assert np.array_equal(np.argmax(pf[agree], 1), np.argmax(pl[agree], 1))


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(1.2)
    with pytest.raises(DimensionMismatchError):
        predict_linear(LinearHead.zeros(2, 3), [1.0, 0.0])


def test_train_separable_reaches_full_accuracy(rng):
    n = 200
    y = rng.integers(0, 2, n)
    X = np.where(y[:, None] == 0, [1.0, 0.0], [0.0, 1.0]) + 0.1 * rng.standard_normal((n, 2))
    head, loss = train_linear(X, y, HeadTrainConfig(epochs=50, learning_rate=1.0, batch_size=16))
    assert (argmax_lowest(predict_linear(head, X)) == y).mean() == 1.0
    assert loss < 0.2


def test_train_zero_epochs_and_determinism(rng):
    X = rng.standard_normal((40, 3))
    y = rng.integers(0, 3, 40)
    head, _ = train_linear(X, y, HeadTrainConfig(epochs=0))
    assert not head.weights.any() and not head.biases.any()
    a, _ = train_linear(X, y, HeadTrainConfig(epochs=5, seed=9))
    b, _ = train_linear(X, y, HeadTrainConfig(epochs=5, seed=9))
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)


def test_argmax_ties_go_low():
    assert argmax_lowest(np.array([0.25, 0.5, 0.5, 0.25])) == 1
