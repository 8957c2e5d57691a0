import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cfedssl.errors import ConfigError
from cfedssl.losses import (ContrastiveConfig, LatentBatch, cosine_sim,
                            cr_consistency, cross_entropy, fedprox_term,
                            fixmatch_loss, ntxent_batch, ntxent_pair, one_hot,
                            uda_consistency)
from cfedssl.model import ParameterSet

import oracles


def batch_from(za, zb):
    return LatentBatch(torch.tensor(za, dtype=torch.float64),
                       torch.tensor(zb, dtype=torch.float64))


class TestCosine:
    def test_self_similarity(self):
        v = torch.tensor([3.0, -1.0, 2.0])
        assert cosine_sim(v, v).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_sim(torch.tensor([1.0, 0.0]),
                          torch.tensor([0.0, 1.0])).item() == pytest.approx(0.0)

    def test_analytic_45_degrees(self):
        s = cosine_sim(torch.tensor([1.0, 1.0]), torch.tensor([1.0, 0.0]))
        assert s.item() == pytest.approx(1 / math.sqrt(2), abs=1e-6)

    def test_zero_vector_rejected(self):
        with pytest.raises(ConfigError):
            cosine_sim(torch.zeros(3), torch.ones(3))


class TestNTXent:
    def test_lone_positive_self_excluded(self):
        batch = batch_from([[1.0, 0.0]], [[1.0, 0.0]])
        cfg = ContrastiveConfig(temperature=1.0, include_self_term=False)
        assert ntxent_pair(1, batch, cfg).item() == pytest.approx(0.0, abs=1e-7)

    def test_lone_positive_self_included(self):
        # -log(e / (e + e)) = ln 2
        batch = batch_from([[1.0, 0.0]], [[1.0, 0.0]])
        cfg = ContrastiveConfig(temperature=1.0, include_self_term=True)
        assert ntxent_pair(1, batch, cfg).item() == pytest.approx(
            math.log(2.0), abs=1e-7)

    def test_orthogonal_pair_case(self):
        # identical positives, orthogonal negatives: -log(e / (e + 2))
        za = [[1.0, 0.0], [0.0, 1.0]]
        batch = batch_from(za, za)
        cfg = ContrastiveConfig(temperature=1.0, include_self_term=False)
        expected = -math.log(math.e / (math.e + 2.0))
        assert ntxent_pair(1, batch, cfg).item() == pytest.approx(expected, abs=1e-7)
        assert expected == pytest.approx(0.5514, abs=5e-5)
        value = ntxent_batch(batch, cfg)
        assert value.total.item() == pytest.approx(4 * expected, abs=1e-6)
        assert value.mean.item() == pytest.approx(expected, abs=1e-7)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            b = int(rng.integers(1, 9))
            d = int(rng.integers(2, 9))
            za = rng.normal(size=(b, d)) + 0.1
            zb = rng.normal(size=(b, d)) + 0.1
            for include in (False, True):
                cfg = ContrastiveConfig(temperature=float(rng.uniform(0.05, 2.0)),
                                        include_self_term=include)
                got = ntxent_batch(batch_from(za, zb), cfg).total.item()
                want = oracles.ntxent_total(za.tolist(), zb.tolist(),
                                            cfg.temperature, include)
                assert got == pytest.approx(want, abs=1e-6)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(3)
        za, zb = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        cfg = ContrastiveConfig(temperature=0.5)
        base = ntxent_batch(batch_from(za, zb), cfg).total.item()
        perm = rng.permutation(6)
        shuffled = ntxent_batch(batch_from(za[perm], zb[perm]), cfg).total.item()
        assert shuffled == pytest.approx(base, rel=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        za, zb = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        cfg = ContrastiveConfig(temperature=0.3)
        base = ntxent_batch(batch_from(za, zb), cfg).total.item()
        scaled = ntxent_batch(batch_from(10 * za, 10 * zb), cfg).total.item()
        assert scaled == pytest.approx(base, rel=1e-6)

    def test_positive_loss_with_negatives_and_monotonicity(self):
        # rotating the positive toward its anchor decreases the loss
        cfg = ContrastiveConfig(temperature=0.5)
        anchor = np.array([1.0, 0.0])
        negatives = np.array([[0.6, 0.8]])
        previous = None
        for angle in (0.9, 0.6, 0.3, 0.0):
            zb = np.array([[math.cos(angle), math.sin(angle)]])
            batch = batch_from([anchor.tolist()], zb.tolist())
            # add a second sample acting as the negative
            batch = batch_from([anchor.tolist(), negatives[0].tolist()],
                               [zb[0].tolist(), negatives[0].tolist()])
            loss = ntxent_pair(1, batch, cfg).item()
            assert loss > 0.0
            if previous is not None:
                assert loss < previous
            previous = loss

    def test_lower_temperature_emphasizes_hard_negatives(self):
        # positive less similar than a negative: lowering tau raises the loss
        za = [[1.0, 0.0], [0.95, math.sqrt(1 - 0.95 ** 2)]]
        zb = [[0.6, 0.8], [0.5, math.sqrt(0.75)]]
        losses = []
        for tau in (1.0, 0.5, 0.1):
            cfg = ContrastiveConfig(temperature=tau)
            losses.append(ntxent_pair(1, batch_from(za, zb), cfg).item())
        assert losses[0] < losses[1] < losses[2]

    def test_bad_index(self):
        batch = batch_from([[1.0, 0.0]], [[1.0, 0.0]])
        with pytest.raises(ConfigError):
            ntxent_pair(2, batch, ContrastiveConfig())


class TestCrossEntropy:
    def test_confident_correct_is_zero(self):
        logits = torch.tensor([[30.0, 0.0, 0.0]])
        labels = one_hot(torch.tensor([0]), 3)
        assert cross_entropy(logits, labels).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits(self):
        logits = torch.zeros((4, 5))
        labels = one_hot(torch.tensor([0, 1, 2, 3]), 5)
        assert cross_entropy(logits, labels).item() == pytest.approx(
            math.log(5.0), abs=1e-6)

    def test_two_sample_mean_against_oracle(self):
        logits = torch.tensor([[2.0, -1.0, 0.5], [0.0, 1.0, -2.0]])
        labels = one_hot(torch.tensor([0, 2]), 3)
        probs = [oracles.softmax(row) for row in logits.tolist()]
        want = oracles.cross_entropy(probs, labels.tolist())
        assert cross_entropy(logits, labels).item() == pytest.approx(want, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            cross_entropy(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        logits = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
        labels = one_hot(torch.tensor([1, 0, 3]), 4).double()
        loss = cross_entropy(logits, labels)
        loss.backward()
        eps = 1e-6
        for i in range(3):
            for j in range(4):
                with torch.no_grad():
                    bump = torch.zeros_like(logits)
                    bump[i, j] = eps
                    up = cross_entropy(logits + bump, labels).item()
                    down = cross_entropy(logits - bump, labels).item()
                numeric = (up - down) / (2 * eps)
                assert numeric == pytest.approx(logits.grad[i, j].item(),
                                                rel=1e-4, abs=1e-8)


class TestFixmatch:
    def test_impossible_threshold_gives_zero(self):
        weak = torch.randn(5, 4)
        strong = torch.randn(5, 4)
        assert fixmatch_loss(weak, strong, threshold=1.01).item() == 0.0

    def test_identical_confident_logits(self):
        logits = torch.tensor([[8.0, 0.0, 0.0], [0.0, 9.0, 0.0]])
        loss = fixmatch_loss(logits, logits, threshold=0.9)
        # CE of a distribution against its own argmax
        probs = [oracles.softmax(r) for r in logits.tolist()]
        want = -(math.log(probs[0][0]) + math.log(probs[1][1])) / 2
        assert loss.item() == pytest.approx(want, abs=1e-6)

    def test_zero_threshold_unmasked(self):
        torch.manual_seed(1)
        weak = torch.randn(6, 3)
        strong = torch.randn(6, 3)
        loss = fixmatch_loss(weak, strong, threshold=0.0)
        pseudo = weak.argmax(dim=1)
        want = torch.nn.functional.cross_entropy(strong, pseudo).item()
        assert loss.item() == pytest.approx(want, abs=1e-6)


class TestUDA:
    def test_identical_distributions(self):
        logits = torch.randn(4, 5)
        assert uda_consistency(logits, logits, temperature=1.0).item() == \
            pytest.approx(0.0, abs=1e-6)

    def test_onehot_vs_uniform(self):
        weak = torch.tensor([[50.0, 0.0, 0.0, 0.0, 0.0]])
        strong = torch.zeros((1, 5))
        assert uda_consistency(weak, strong, temperature=1.0).item() == \
            pytest.approx(math.log(5.0), abs=1e-4)

    def test_random_case_against_oracle(self):
        torch.manual_seed(2)
        weak = torch.randn(5, 4, dtype=torch.float64)
        strong = torch.randn(5, 4, dtype=torch.float64)
        temperature = 0.4
        want = np.mean([
            oracles.kl(oracles.softmax([x / temperature for x in w]),
                       oracles.softmax(s))
            for w, s in zip(weak.tolist(), strong.tolist())
        ])
        got = uda_consistency(weak, strong, temperature).item()
        assert got == pytest.approx(want, abs=1e-9)


class TestCR:
    def test_identical_representations(self):
        r = torch.randn(4, 6) + 0.1
        assert cr_consistency(r, r).item() == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_unit_vectors(self):
        a = torch.tensor([[1.0, 0.0]])
        b = torch.tensor([[0.0, 1.0]])
        # cosine term contributes 1, mse contributes mean((1,−1)^2 over 2) = 1
        assert cr_consistency(a, b).item() == pytest.approx(2.0, abs=1e-6)

    def test_scale_mismatch_same_direction(self):
        a = torch.tensor([[2.0, 0.0]])
        b = torch.tensor([[1.0, 0.0]])
        # cosine similarity 1 -> only the MSE term remains
        assert cr_consistency(a, b).item() == pytest.approx(0.5, abs=1e-6)


class TestFedProx:
    def _pset(self, value):
        return ParameterSet({"encoder.w": np.array([value], dtype=np.float32)})

    def test_identical_sets(self):
        p = self._pset(1.5)
        assert fedprox_term(p, self._pset(1.5), mu=3.0) == pytest.approx(0.0)

    def test_zero_mu(self):
        assert fedprox_term(self._pset(0.0), self._pset(5.0), mu=0.0) == 0.0

    def test_unit_difference(self):
        assert fedprox_term(self._pset(1.0), self._pset(0.0), mu=2.0) == \
            pytest.approx(1.0)

    def test_shape_mismatch(self):
        a = ParameterSet({"encoder.w": np.zeros(2, dtype=np.float32)})
        with pytest.raises(ConfigError):
            fedprox_term(a, self._pset(0.0), mu=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(2, 6), st.booleans(),
       st.floats(0.05, 2.0), st.integers(0, 2 ** 31 - 1))
def test_ntxent_oracle_property(b, d, include_self, tau, seed):
    rng = np.random.default_rng(seed)
    za = rng.normal(size=(b, d)) + 0.05
    zb = rng.normal(size=(b, d)) + 0.05
    cfg = ContrastiveConfig(temperature=tau, include_self_term=include_self)
    got = ntxent_batch(batch_from(za, zb), cfg).total.item()
    want = oracles.ntxent_total(za.tolist(), zb.tolist(), tau, include_self)
    assert got == pytest.approx(want, abs=1e-6)
