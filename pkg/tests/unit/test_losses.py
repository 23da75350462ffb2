"""Tests for the loss terms."""
import math

import numpy as np
import pytest

from twohead.core.exceptions import (
    EmptyNegativesError,
    InvalidLabelError,
    NotADistributionError,
    ShapeMismatchError,
    ZeroDivergenceError,
)
from twohead.core.losses import (
    contrastive_loss,
    cross_entropy,
    kl_contributions,
    kl_divergence,
    kl_tail_share,
    kl_term,
    nce_loss,
    normalized_logits,
    one_hot,
)
from twohead.numerics import Tensor, finite_diff_check, l2_normalize, stable_softmax


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.zeros((1, 2)), 0).item() == pytest.approx(math.log(2))

    def test_per_row(self):
        out = cross_entropy(np.array([[2.0, 0.0], [0.0, 2.0]]), np.array([0, 0]), reduction="none")
        np.testing.assert_allclose(out.numpy(), [math.log(1 + math.exp(-2)), math.log(1 + math.exp(2))])

    @pytest.mark.parametrize("labels", [np.array([2]), np.array([-1]), np.array([0.0])])
    def test_invalid_labels(self, labels):
        with pytest.raises(InvalidLabelError):
            cross_entropy(np.zeros((1, 2)), labels)

    def test_label_count_must_match(self):
        with pytest.raises(ShapeMismatchError):
            cross_entropy(np.zeros((2, 3)), np.array([0]))

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot([1, 0], 3), [[0, 1, 0], [1, 0, 0]])


class TestContrastive:
    def test_single_negative(self):
        loss = contrastive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([[0.0, 1.0]]), 1.0)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)))

    def test_temperature_sharpens(self):
        args = (np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([[0.0, 1.0]]))
        assert contrastive_loss(*args, 0.2).item() == pytest.approx(math.log(1 + math.exp(-5)))

    def test_masked_negative_drops_out(self):
        loss = contrastive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]),
                                1.0, mask=np.array([[True, False]]))
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)))

    def test_empty_negatives(self):
        with pytest.raises(EmptyNegativesError):
            contrastive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.zeros((0, 2)), 0.2)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            contrastive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.ones((3, 4)), 0.2)


class TestNormalizedCrossEntropy:
    def test_value(self):
        loss = nce_loss(np.array([1.0, 0.0]), np.eye(2), 0, 0.5)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-2)))

    def test_invariant_to_rescaling(self):
        rng = np.random.default_rng(0)
        e, w, y = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), np.array([0, 1, 2, 1])
        base = nce_loss(e, w, y, 1 / 30).item()
        scaled = nce_loss(e * np.array([[3.0], [0.1], [7.0], [1.0]]), w * np.array([2.0, 0.5, 9.0]), y, 1 / 30).item()
        assert scaled == pytest.approx(base, rel=1e-10)

    def test_logits_bounded_by_eta(self):
        rng = np.random.default_rng(1)
        z = normalized_logits(rng.normal(size=(6, 5)), rng.normal(size=(5, 4)), 0.25).numpy()
        assert np.all(np.abs(z) <= 4.0 + 1e-12)


class TestKL:
    def test_example(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected)

    def test_zero_for_equal(self):
        assert kl_divergence([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0

    def test_zero_probability_terms_vanish(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_q_is_floored(self):
        value = kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert math.isfinite(value)
        assert value == pytest.approx(0.5 * math.log(0.5) + 0.5 * math.log(0.5 / 1e-12))

    def test_not_a_distribution(self):
        with pytest.raises(NotADistributionError):
            kl_divergence([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(NotADistributionError):
            kl_divergence([1.5, -0.5], [0.5, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            kl_contributions([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_tape_version_matches(self):
        p, q = np.array([[0.1, 0.6, 0.3]]), np.array([[0.3, 0.3, 0.4]])
        assert kl_term(Tensor(p), Tensor(q)).item() == pytest.approx(kl_divergence(p[0], q[0]))

    def test_tail_share(self):
        p, q = np.array([0.7, 0.2, 0.1]), np.full(3, 1 / 3)
        contrib = np.abs(p * np.log(p / q))
        assert kl_tail_share(p, q, top_m=1) == pytest.approx(contrib[1:].sum() / contrib.sum())
        assert kl_tail_share(p, q, top_m=3) == pytest.approx(0.0)

    def test_tail_share_undefined_for_equal(self):
        with pytest.raises(ZeroDivergenceError):
            kl_tail_share([0.5, 0.5], [0.5, 0.5], top_m=1)


def _unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _contrastive_by_summation(u, v, negatives, tau):
    pos = math.exp(float(u @ v) / tau)
    return -math.log(pos / (pos + sum(math.exp(float(u @ n) / tau) for n in negatives)))


def _nce_by_summation(e, w, y, eta):
    e_hat = e / math.sqrt(sum(x * x for x in e))
    scores = []
    for i in range(w.shape[1]):
        col = w[:, i] / math.sqrt(sum(x * x for x in w[:, i]))
        scores.append(math.exp(sum(a * b for a, b in zip(e_hat, col)) / eta))
    return -math.log(scores[y] / sum(scores))


class TestLossOracles:
    @pytest.mark.parametrize("n, tau", [(1, 0.2), (7, 1.0), (100, 0.05)])
    def test_equal_similarities_give_log_n_plus_one(self, n, tau):
        v = np.array([0.6, 0.8, 0.0])
        loss = contrastive_loss(v, v, np.tile(v, (n, 1)), tau)
        assert loss.item() == pytest.approx(math.log(n + 1), rel=1e-12)

    def test_contrastive_decreases_as_u_approaches_v(self):
        v = np.array([1.0, 0.0, 0.0, 0.0])
        negatives = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]])
        angles = np.linspace(math.pi, 0.0, 25)
        losses = [contrastive_loss(np.array([math.cos(a), math.sin(a), 0.0, 0.0]), v, negatives, 0.2).item()
                  for a in angles]
        assert np.all(np.diff(losses) < 0)
        assert min(losses) >= 0.0

    def test_contrastive_matches_direct_summation(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            d, n, tau = int(rng.integers(2, 9)), int(rng.integers(1, 33)), float(rng.uniform(0.1, 1.0))
            u, v, negatives = _unit(rng, d), _unit(rng, d), _unit(rng, n, d)
            expected = _contrastive_by_summation(u, v, negatives, tau)
            assert contrastive_loss(u, v, negatives, tau).item() == pytest.approx(expected, abs=1e-6)

    def test_nce_matches_direct_summation(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            d, c, eta = int(rng.integers(2, 9)), int(rng.integers(2, 11)), float(rng.uniform(1 / 30, 1.0))
            e, w, y = rng.normal(size=d), rng.normal(size=(d, c)), int(rng.integers(0, c))
            expected = _nce_by_summation(e, w, y, eta)
            assert nce_loss(e, w, y, eta).item() == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("eta", [1 / 30, 0.5, 2.0])
    def test_nce_uniform_scores_give_log_c(self, eta):
        w = np.tile(np.array([[0.3], [-1.2], [0.5]]), (1, 10))
        loss = nce_loss(np.array([1.0, 2.0, -0.5]), w, 4, eta)
        assert loss.item() == pytest.approx(2.302585, abs=1e-6)

    def test_kl_non_negative_on_random_pairs(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            c = int(rng.integers(2, 21))
            p, q = rng.dirichlet(np.ones(c)), rng.dirichlet(np.ones(c))
            assert kl_divergence(p, q) >= 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_long_tail_instance_is_tail_dominated(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=1000)
        head = rng.choice(1000, size=5, replace=False)
        logits[head] = 6.0
        p = np.exp(logits - logits.max())
        p /= p.sum()
        q = p.copy()
        tail = np.setdiff1d(np.arange(1000), head)
        q[tail] /= 10.0
        q /= q.sum()
        assert kl_tail_share(p, q, top_m=5) > 0.5


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(100))
    def test_terms_match_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        negatives = _unit(rng, 6, 5)
        y = rng.integers(0, 4, size=3)

        def contrastive(a, b):
            return contrastive_loss(l2_normalize(a), l2_normalize(b), negatives, 0.2)

        def nce(e, w):
            return nce_loss(e, w, y, 0.25)

        def kl(a, b):
            return kl_term(stable_softmax(a), stable_softmax(b))

        cases = {
            "contrastive": (contrastive, [rng.normal(size=(3, 5)), rng.normal(size=(3, 5))]),
            "nce": (nce, [rng.normal(size=(3, 5)), rng.normal(size=(5, 4))]),
            "kl": (kl, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        }
        for name, (f, arrays) in cases.items():
            report = finite_diff_check(f, arrays, h=1e-5, tol=1e-4)
            assert report.passed, (name, report.to_frame())
