"""Exact posterior state for the probit MIRT model.

Under a N(0, I_K) prior on theta and conditionally independent probit
responses, the posterior after T items is unified skew-normal with
parameters built from three per-item pieces: row t of C1 is
(2y_t - 1) B_{j_t}, entry t of C2 is (2y_t - 1) D_{j_t}, and entry t of the
diagonal scaling C3 is sqrt(||B_{j_t}||^2 + 1).  Posteriors are immutable;
updates append and return a new value.  Sampling uses the stochastic
representation: a correlated normal plus a linear map of a truncated normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._kernels import norm_cdf
from .bank import ItemBank
from .tmvn import tmvn_sample


class PosteriorError(ValueError):
    """Invalid posterior construction or use."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SunPosterior:
    """Posterior state after T administered items (T=0 is the prior)."""

    num_factors: int
    c1: np.ndarray                      # T x K, rows (2y-1) B_j
    c2: np.ndarray                      # T, entries (2y-1) D_j
    c3: np.ndarray                      # T, entries sqrt(||B_j||^2 + 1)
    history: tuple[tuple[int, int], ...] = ()
    # cached lower Cholesky factor of C1 C1' + I_T, extended row by row on
    # update; None until first needed.  Not part of the value.
    _chol: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "c1", _readonly(np.asarray(self.c1).reshape(-1, self.num_factors)))
        object.__setattr__(self, "c2", _readonly(np.atleast_1d(self.c2)))
        object.__setattr__(self, "c3", _readonly(np.atleast_1d(self.c3)))
        t = self.c1.shape[0]
        if self.c2.shape != (t,) or self.c3.shape != (t,):
            raise PosteriorError("C1, C2, c3 must agree on T")
        if len(self.history) != t:
            raise PosteriorError("history length must equal T")
        # equality holds when a row of C1 is all zero, which is legal
        if t and np.any(self.c3 < 1.0):
            raise PosteriorError("c3 entries must be at least 1")

    @classmethod
    def prior(cls, num_factors: int) -> "SunPosterior":
        if num_factors < 1:
            raise PosteriorError("need at least one factor")
        return cls(num_factors, np.zeros((0, num_factors)), np.zeros(0), np.zeros(0))

    @property
    def num_items(self) -> int:
        return self.c1.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of C1 C1' + I_T, cached across updates."""
        if self._chol is None:
            a = self.c1 @ self.c1.T + np.eye(self.num_items)
            object.__setattr__(self, "_chol", np.linalg.cholesky(a))
        return self._chol

    def to_snapshot(self) -> dict:
        return {
            "K": self.num_factors,
            "T": self.num_items,
            "C1": self.c1.tolist(),
            "C2": self.c2.tolist(),
            "c3": self.c3.tolist(),
            "history": [[int(i), int(y)] for i, y in self.history],
        }

    @classmethod
    def from_snapshot(cls, doc: dict) -> "SunPosterior":
        post = cls(
            num_factors=int(doc["K"]),
            c1=np.asarray(doc["C1"], dtype=np.float64).reshape(int(doc["T"]), int(doc["K"])),
            c2=np.asarray(doc["C2"], dtype=np.float64),
            c3=np.asarray(doc["c3"], dtype=np.float64),
            history=tuple((int(i), int(y)) for i, y in doc["history"]),
        )
        return post


def update(post: SunPosterior, b_j: Sequence[float] | np.ndarray, d_j: float, y: int,
           item: int = -1) -> SunPosterior:
    """Append one response; the input posterior is left untouched."""
    if y not in (0, 1):
        raise PosteriorError(f"response must be 0 or 1, got {y!r}")
    b_j = np.asarray(b_j, dtype=np.float64)
    if b_j.shape != (post.num_factors,):
        raise PosteriorError(f"loading vector must have length {post.num_factors}")
    if not (np.all(np.isfinite(b_j)) and np.isfinite(d_j)):
        raise PosteriorError("item parameters must be finite")
    sign = 2.0 * y - 1.0
    row = sign * b_j
    c1 = np.vstack([post.c1, row[None, :]])
    c2 = np.append(post.c2, sign * float(d_j))
    c3 = np.append(post.c3, math.sqrt(float(b_j @ b_j) + 1.0))
    child = SunPosterior(post.num_factors, c1, c2, c3,
                         history=post.history + ((int(item), int(y)),))
    if post._chol is not None:
        # bordered extension: solve L w = C1_parent row', corner from the new row
        t = post.num_items
        ext = np.zeros((t + 1, t + 1))
        ext[:t, :t] = post._chol
        if t:
            w = solve_triangular(post._chol, post.c1 @ row, lower=True)
            ext[t, :t] = w
            corner = float(row @ row) + 1.0 - float(w @ w)
        else:
            corner = float(row @ row) + 1.0
        ext[t, t] = math.sqrt(max(corner, 1e-12))
        object.__setattr__(child, "_chol", ext)
    return child


@dataclass(frozen=True)
class SunParams:
    """Unified skew-normal parameters (mu, Omega, Delta, gamma, Gamma)."""

    mu: np.ndarray            # K
    omega: np.ndarray         # K x K
    delta: np.ndarray         # K x T
    gamma: np.ndarray         # T
    gamma_mat: np.ndarray     # T x T


def sun_params(post: SunPosterior) -> SunParams:
    """Posterior parameters: mu=0, Omega=I, Delta=C1'C3^-1, gamma=C3^-1 C2,
    Gamma=C3^-1 (C1 C1' + I) C3^-1.  The prior (T=0) has no such form."""
    t = post.num_items
    if t == 0:
        raise PosteriorError("the prior has no skew-normal parameters; branch on T=0")
    inv_c3 = 1.0 / post.c3
    a = post.c1 @ post.c1.T + np.eye(t)
    return SunParams(
        mu=np.zeros(post.num_factors),
        omega=np.eye(post.num_factors),
        delta=post.c1.T * inv_c3[None, :],
        gamma=post.c2 * inv_c3,
        gamma_mat=a * inv_c3[:, None] * inv_c3[None, :],
    )


@dataclass(frozen=True)
class PosteriorSamples:
    draws: np.ndarray         # M x K
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "draws", _readonly(np.atleast_2d(self.draws)))
        if self.draws.shape[0] < 1 or not np.all(np.isfinite(self.draws)):
            raise PosteriorError("draws must be a non-empty finite matrix")

    @property
    def m(self) -> int:
        return self.draws.shape[0]


def sample(post: SunPosterior, m: int, rng: np.random.Generator) -> PosteriorSamples:
    """M independent draws from the posterior.

    For T >= 1: V0 ~ N(0, I - C1'(C1C1'+I)^-1 C1), V1 a truncated normal with
    covariance C3^-1 (C1C1'+I) C3^-1 bounded below by -C3^-1 C2, and
    theta = V0 + C1'(C1C1'+I)^-1 C3 V1.  The SPD factorization of C1C1'+I is
    computed once per call (and cached on the posterior across updates).
    """
    if m < 1:
        raise PosteriorError("need at least one draw")
    k = post.num_factors
    t = post.num_items
    if t == 0:
        return PosteriorSamples(rng.standard_normal((m, k)), source=f"prior-K{k}")

    chol = post.cholesky()
    y = solve_triangular(chol, post.c1, lower=True)            # L^-1 C1, T x K
    v0_cov = np.eye(k) - y.T @ y
    try:
        v0_chol = np.linalg.cholesky(v0_cov)
    except np.linalg.LinAlgError:
        v0_chol = np.linalg.cholesky(v0_cov + 1e-12 * np.eye(k))
    v0 = rng.standard_normal((m, k)) @ v0_chol.T

    inv_c3 = 1.0 / post.c3
    gamma_mat = (post.c1 @ post.c1.T + np.eye(t)) * inv_c3[:, None] * inv_c3[None, :]
    lower = -post.c2 * inv_c3
    v1 = tmvn_sample(gamma_mat, lower, m, rng)

    q = cho_solve((chol, True), post.c1)                       # (C1C1'+I)^-1 C1, T x K
    lin = q * post.c3[:, None]                                 # rows scaled, so theta = V0 + V1 @ lin
    draws = v0 + v1 @ lin
    return PosteriorSamples(draws, source=f"sun-T{t}-K{k}")


def posterior_predictive(post: SunPosterior, b_j: np.ndarray, d_j: float,
                         samples: PosteriorSamples) -> float:
    """Monte Carlo estimate of P(y = 1 | history) for a candidate item."""
    b_j = np.asarray(b_j, dtype=np.float64)
    if b_j.shape != (post.num_factors,):
        raise PosteriorError(f"loading vector must have length {post.num_factors}")
    return float(np.mean(norm_cdf(samples.draws @ b_j + float(d_j))))


def moments(samples: PosteriorSamples, quantile_levels: Sequence[float] | None = None):
    """Sample mean, variance (1/(M-1)), and optional interpolated quantiles."""
    if samples.m < 2:
        raise PosteriorError("moments need at least two draws")
    mean = samples.draws.mean(axis=0)
    var = samples.draws.var(axis=0, ddof=1)
    if quantile_levels is None:
        return mean, var
    qs = np.quantile(samples.draws, np.asarray(quantile_levels, dtype=np.float64), axis=0)
    return mean, var, qs


@dataclass(frozen=True)
class PredictionQuantiles:
    """Per-item summary of predictive probability draws: columns are mean,
    variance, and the nine deciles from 10% to 90%."""

    psi: np.ndarray           # J x 11

    def __post_init__(self):
        object.__setattr__(self, "psi", _readonly(np.atleast_2d(self.psi)))
        if self.psi.shape[1] != 11:
            raise PosteriorError("prediction summary must have 11 columns")


DECILES = np.arange(0.1, 0.91, 0.1)


def prediction_quantiles(post: SunPosterior, bank: ItemBank,
                         samples: PosteriorSamples) -> PredictionQuantiles:
    """Summarize Phi(B_j' theta_i + D_j) over draws for every bank item.

    Administered items keep their rows; any masking is the policy's concern.
    """
    p = norm_cdf(samples.draws @ bank.loadings.T + bank.intercepts[None, :])
    psi = np.empty((bank.num_items, 11))
    psi[:, 0] = p.mean(axis=0)
    psi[:, 1] = p.var(axis=0)
    psi[:, 2:] = np.quantile(p, DECILES, axis=0).T
    return PredictionQuantiles(psi)
