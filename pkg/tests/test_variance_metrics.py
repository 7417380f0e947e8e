import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emais.variance_metrics import (
    NemsSmoother,
    TraceEstimates,
    adjusted_learning_rate,
    effective_minibatch_size,
    efficiency_score,
    estimate_traces,
    nems_ratio,
)


def _est(phi_is, phi_unif, phi_ideal=0.0):
    return TraceEstimates(phi_is, phi_unif, phi_ideal, 0.0)


class TestEstimateTraces:
    def test_zero_variance(self):
        est = estimate_traces(np.tile([0.3, -1.2, 2.0], (5, 1)), np.ones(5))
        for v in (est.phi_is, est.phi_unif, est.phi_ideal):
            assert abs(v) <= 1e-12

    def test_two_point_population(self):
        est = estimate_traces([[3.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
        assert est.mu_norm_sq == pytest.approx(2.5, abs=1e-15)
        np.testing.assert_allclose([est.phi_is, est.phi_unif, est.phi_ideal], [2.5, 2.5, 1.5],
                                   atol=1e-14)

    def test_weighted_example(self):
        est = estimate_traces([[1.0, 0.0], [0.0, 1.0]], [2.0, 0.5])
        np.testing.assert_allclose([est.phi_is, est.phi_unif, est.phi_ideal],
                                   [1.0625, 0.1875, 0.5], atol=1e-14)

    def test_matches_loop_transcription(self, rng):
        G = rng.normal(size=(7, 4))
        r = rng.uniform(0.2, 3, size=7)
        mu = sum(r[k] * G[k] for k in range(7)) / 7
        m2 = float(mu @ mu)
        phi_is = sum(r[k] ** 2 * (G[k] @ G[k]) for k in range(7)) / 7 - m2
        phi_unif = sum(r[k] * (G[k] @ G[k]) for k in range(7)) / 7 - m2
        phi_ideal = (sum(r[k] * np.sqrt(G[k] @ G[k]) for k in range(7)) / 7) ** 2 - m2
        est = estimate_traces(G, r)
        np.testing.assert_allclose([est.phi_is, est.phi_unif, est.phi_ideal],
                                   [phi_is, phi_unif, phi_ideal], rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
    def test_scale_equivariance(self, seed, c):
        rng = np.random.default_rng(seed)
        G = rng.normal(size=(6, 3))
        r = rng.uniform(0.1, 5, size=6)
        a, b = estimate_traces(G, r), estimate_traces(c * G, r)
        for x, y in ((a.phi_is, b.phi_is), (a.phi_unif, b.phi_unif), (a.phi_ideal, b.phi_ideal)):
            assert y == pytest.approx(c * c * x, rel=1e-9, abs=1e-9 * c * c)
        sa, sb = efficiency_score(a), efficiency_score(b)
        if sa is not None and sb is not None and abs(a.phi_unif - a.phi_ideal) > 1e-6:
            assert sb == pytest.approx(sa, rel=1e-7, abs=1e-9)

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            estimate_traces([[1.0, 2.0]], [1.0])

    def test_nonpositive_coefficient(self):
        with pytest.raises(ValueError):
            estimate_traces([[1.0], [2.0]], [1.0, 0.0])


class TestNems:
    @pytest.mark.parametrize("ratio, expected", [(1.0, 128), (2.0, 256), (0.5, 64)])
    def test_examples(self, ratio, expected):
        assert effective_minibatch_size(_est(1.0, ratio), 128) == pytest.approx(expected, abs=1e-12)

    def test_clamp(self):
        assert effective_minibatch_size(_est(1.0, 100.0), 128) == 128 * 16
        assert effective_minibatch_size(_est(1.0, 100.0), 128, clamp=None) == pytest.approx(12800)
        assert effective_minibatch_size(_est(1.0, 1e-4), 128) == 128 / 16

    def test_degenerate_phi_is(self, caplog):
        with caplog.at_level(logging.DEBUG, logger="emais.variance_metrics"):
            ratio, flagged = nems_ratio(_est(0.0, 1.0))
        assert ratio == 16.0 and flagged
        assert caplog.records

    def test_smoother(self):
        s = NemsSmoother(128.0, 0.9)
        assert s.update(228.0) == pytest.approx(138.0)
        assert NemsSmoother(128.0, None).update(7.0) == 7.0


class TestLearningRate:
    def test_sgd(self):
        assert adjusted_learning_rate(_est(1, 2), 128, 0.1, "sgd") == pytest.approx(0.2, abs=1e-15)

    def test_adam(self):
        assert adjusted_learning_rate(_est(1, 4), 128, 0.001, "adam") == pytest.approx(0.002, abs=1e-15)

    @pytest.mark.parametrize("opt", ["sgd", "adam"])
    def test_identity(self, opt):
        assert adjusted_learning_rate(_est(3, 3), 64, 0.05, opt) == 0.05


class TestScore:
    def test_endpoints(self):
        assert efficiency_score(_est(0.5, 2.0, 0.5)) == 0.0
        assert efficiency_score(_est(2.0, 2.0, 0.5)) == 1.0

    def test_uniform_two_point(self):
        assert efficiency_score(estimate_traces([[3.0, 0.0], [0.0, 1.0]], [1.0, 1.0])) == pytest.approx(1.0)

    def test_undefined_is_none(self, caplog):
        with caplog.at_level(logging.DEBUG, logger="emais.variance_metrics"):
            assert efficiency_score(_est(1.0, 1.0, 1.0)) is None
        assert caplog.records
