"""Numeric kernel backend selection.

The compiled Cython lane is used when its extension module importable; the
pure numpy lane is the fallback and the correctness reference.  Set
BAYESCAT_KERNELS=numpy (or =cython) to force a lane.
"""

from __future__ import annotations

import os

from . import numpy_impl

_choice = os.environ.get("BAYESCAT_KERNELS", "auto").lower()

if _choice == "numpy":
    _impl = numpy_impl
elif _choice == "cython":
    from . import _cyk as _impl  # noqa: F401  (raises if the extension is absent)
else:
    try:
        from . import _cyk as _impl
    except ImportError:
        _impl = numpy_impl

BACKEND: str = _impl.BACKEND_NAME
PROB_EPS: float = numpy_impl.PROB_EPS

norm_cdf = _impl.norm_cdf
clamp_prob = _impl.clamp_prob
probit_clamped = _impl.probit_clamped
predictive_matrix = _impl.predictive_matrix
eap_kl_scores = _impl.eap_kl_scores
max_pos_scores = _impl.max_pos_scores
mi_scores_weighted = _impl.mi_scores_weighted
mi_scores_pooled = _impl.mi_scores_pooled
max_var_scores = _impl.max_var_scores

__all__ = [
    "BACKEND",
    "PROB_EPS",
    "norm_cdf",
    "clamp_prob",
    "probit_clamped",
    "predictive_matrix",
    "eap_kl_scores",
    "max_pos_scores",
    "mi_scores_weighted",
    "mi_scores_pooled",
    "max_var_scores",
    "numpy_impl",
]
