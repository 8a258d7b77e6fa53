from dataclasses import fields, replace

import numpy as np
import pytest

from protomatch.synth import (
    RELEVANT_MAX_ANGLE,
    LongTailSpec,
    class_counts_profile,
    distractor_mask,
    generate,
)

SMALL = LongTailSpec(classes=8, n_max=40, imbalance=8, n_test=5, seed=2)


def _oracle_counts(K, n_max, imb):
    # Python's round() is also round-half-to-even
    return [max(1, round(n_max * imb ** (-k / (K - 1)))) for k in range(K)]


def test_profile_examples():
    assert class_counts_profile(2, 100, 10).tolist() == [100, 10]
    assert class_counts_profile(6, 37, 1).tolist() == [37] * 6
    assert class_counts_profile(5, 100, 20).tolist() == [100, 47, 22, 11, 5]
    assert class_counts_profile(5, 100, 20).tolist() == _oracle_counts(5, 100, 20)


@pytest.mark.parametrize("K,n_max,imb", [(20, 200, 20), (10, 500, 100), (7, 3, 50), (3, 11, 2.5)])
def test_profile_matches_formula_and_is_monotone(K, n_max, imb):
    c = class_counts_profile(K, n_max, imb)
    assert c.tolist() == _oracle_counts(K, n_max, imb)
    assert np.all(np.diff(c) <= 0) and c.min() >= 1


def test_profile_rejects_bad_imbalance():
    with pytest.raises(ValueError):
        class_counts_profile(4, 10, 0.5)


def test_generate_deterministic():
    a, b = generate(SMALL), generate(SMALL)
    for f in fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray):
            assert np.array_equal(va, vb), f.name
    assert not np.array_equal(a.train_images, generate(replace(SMALL, seed=3)).train_images)


def test_generate_shapes_and_counts():
    d = generate(SMALL)
    K, M = SMALL.classes, SMALL.text_candidates
    assert d.train_images.shape == (d.class_counts.sum(), SMALL.dim_raw)
    assert d.train_text.shape == (d.class_counts.sum(), M, SMALL.dim_raw)
    assert np.array_equal(np.bincount(d.train_labels), d.class_counts)
    assert np.array_equal(np.bincount(d.test_labels), np.full(K, SMALL.n_test))
    assert d.class_counts.tolist() == _oracle_counts(K, SMALL.n_max, SMALL.imbalance)
    np.testing.assert_allclose(np.linalg.norm(d.anchors, axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(d.train_text, axis=2), 1, atol=1e-12)
    m = d.manifest()
    assert m["class_counts"] == d.class_counts.tolist() and m["n_train"] == d.class_counts.sum()


def test_noise_free_candidates_near_center():
    d = generate(replace(SMALL, noise_fraction=0.0))
    cos = np.einsum("nmd,nd->nm", d.train_text, d.text_centers[d.train_labels])
    assert np.all(cos >= np.cos(RELEVANT_MAX_ANGLE) - 1e-12)
    assert not distractor_mask(d).any()


def test_distractors_less_similar():
    d = generate(replace(SMALL, n_max=300, noise_fraction=0.5))
    mask = distractor_mask(d)
    assert mask.sum(axis=1).tolist() == [2] * mask.shape[0]
    assert mask.sum() >= 1000 and (~mask).sum() >= 1000
    for ref in (d.text_centers, d.anchors @ d.text_encoder_init):
        cos = np.einsum("nmd,nd->nm", d.train_text, ref[d.train_labels])
        assert cos[mask].mean() < cos[~mask].mean()


def test_zero_spread_images_collinear():
    d = generate(replace(SMALL, spread=0.0))
    for k in range(SMALL.classes):
        rows = d.train_images[d.train_labels == k]
        # all rows of one class are the same vector
        assert np.allclose(rows, rows[0], atol=1e-12)
        assert np.linalg.matrix_rank(rows, tol=1e-9) == 1


def test_anchor_text_encodes_to_anchor():
    d = generate(SMALL)
    np.testing.assert_allclose((d.anchors @ d.text_encoder_init) @ d.text_encoder_init.T, d.anchors,
                               atol=1e-12)


def test_tail_classes_start_crowded():
    d = generate(LongTailSpec())
    Z = d.image_directions
    tail = np.arange(LongTailSpec().classes - LongTailSpec().n_tail, LongTailSpec().classes)
    head = np.setdiff1d(np.arange(LongTailSpec().classes), tail)
    assert (Z[tail] @ Z[tail].T).mean() > (Z[head] @ Z[head].T).mean() + 0.5


def test_spec_validation():
    for bad in ({"imbalance": 0.5}, {"classes": 1}, {"dim": 80}, {"noise_fraction": 1.0},
                {"tail_clustering": 1.0}, {"n_test": 0}, {"spread": -1.0}):
        with pytest.raises(ValueError):
            LongTailSpec(**bad)
