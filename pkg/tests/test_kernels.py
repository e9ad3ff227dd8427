"""Numerical parity between the compiled kernel lane and the reference lane."""

import numpy as np
import pytest

from bayescat import _kernels
from bayescat._kernels import numpy_impl

try:
    from bayescat._kernels import _cyk
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

compiled = pytest.mark.skipif(not HAVE_COMPILED, reason="compiled lane not built")

KERNELS = ["norm_cdf", "clamp_prob", "probit_clamped", "predictive_matrix",
           "eap_kl_scores", "max_pos_scores", "mi_scores_weighted",
           "mi_scores_pooled", "max_var_scores"]


def _inputs(rng, name):
    m, j, k = 257, 19, 3
    theta = rng.standard_normal((m, k))
    loadings = rng.uniform(-2.5, 2.5, size=(j, k))
    intercepts = rng.uniform(-1.5, 1.5, size=j)
    p = numpy_impl.predictive_matrix(theta, loadings, intercepts)
    if name == "norm_cdf":
        return (rng.uniform(-40, 40, size=400),)
    if name == "clamp_prob":
        return (rng.uniform(-0.1, 1.1, size=400),)
    if name == "probit_clamped":
        return (rng.uniform(-40, 40, size=400),)
    if name == "predictive_matrix":
        return (theta, loadings, intercepts)
    if name == "eap_kl_scores":
        p_hat = numpy_impl.predictive_matrix(theta[:1].mean(0, keepdims=True),
                                             loadings, intercepts)[0]
        return (p, p_hat)
    return (p,)


class TestLaneParity:
    @compiled
    @pytest.mark.parametrize("name", KERNELS)
    def test_compiled_matches_reference(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        args = _inputs(rng, name)
        ref = getattr(numpy_impl, name)(*args)
        got = getattr(_cyk, name)(*args)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)

    def test_active_lane_matches_reference(self):
        rng = np.random.default_rng(12)
        for name in KERNELS:
            args = _inputs(rng, name)
            ref = getattr(numpy_impl, name)(*args)
            got = getattr(_kernels, name)(*args)
            np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


class TestClamping:
    def test_probabilities_bounded_away_from_edges(self):
        z = np.array([-1e6, -50.0, 0.0, 50.0, 1e6])
        p = _kernels.probit_clamped(z)
        assert p.min() >= _kernels.PROB_EPS
        assert p.max() <= 1.0 - _kernels.PROB_EPS

    def test_scores_finite_under_extreme_inputs(self):
        # raw kernels may dip a few ulp below zero; the selection layer clamps
        rng = np.random.default_rng(7)
        p = _kernels.clamp_prob(rng.uniform(0, 1, size=(64, 9)))
        p[:, 0] = _kernels.PROB_EPS
        p[:, 1] = 1.0 - _kernels.PROB_EPS
        for fn in (_kernels.max_pos_scores, _kernels.mi_scores_weighted,
                   _kernels.mi_scores_pooled):
            s = fn(p)
            assert np.isfinite(s).all()
            assert s.min() >= -1e-18

    def test_backend_label(self):
        assert _kernels.BACKEND in ("numpy", "cython")
