"""Truncated multivariate normal sampling via minimax exponential tilting.

Draws from N(0, Gamma) conditioned componentwise on x >= lower.  The main
path is accept-reject with an exponentially tilted sequential proposal after
a variable-reordering Cholesky; when the estimated acceptance probability is
hopeless the sampler falls back to coordinate-wise conditional (Gibbs) sweeps
and flags the result as approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve
from scipy.special import erfc, erfcinv, erfcx

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_LOG_UNDERFLOW = math.log(1e-300)
_TINY = 1e-15


class RegionProbabilityUnderflow(ValueError):
    """The truncation region has probability below 1e-300."""


@dataclass(frozen=True)
class TmvnDiagnostics:
    method: str                  # "tilting", "tilting-1d", or "gibbs"
    acceptance_rate: float
    proposals: int
    accepted: int
    approximate: bool
    log_prob_bound: float        # upper bound on log P(x >= lower)


def _ln_phi_tail(x: np.ndarray) -> np.ndarray:
    """log of the upper tail P(Z > x), stable for large positive x."""
    return -0.5 * x * x - math.log(2.0) + np.log(erfcx(x / _SQRT2) + _TINY)


def _ln_normal_prob(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log P(a < Z < b) for standard normal Z, accurate in all tail cases."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    p = np.zeros(np.broadcast(a, b).shape)
    a, b = np.broadcast_arrays(a, b)
    pos = a > 0
    if np.any(pos):
        pa = _ln_phi_tail(a[pos])
        pb = _ln_phi_tail(b[pos])
        p[pos] = pa + np.log1p(-np.exp(pb - pa))
    neg = b < 0
    if np.any(neg):
        pa = _ln_phi_tail(-a[neg])
        pb = _ln_phi_tail(-b[neg])
        p[neg] = pb + np.log1p(-np.exp(pa - pb))
    mid = ~(pos | neg)
    if np.any(mid):
        pa = erfc(-a[mid] / _SQRT2) / 2.0
        pb = erfc(b[mid] / _SQRT2) / 2.0
        p[mid] = np.log1p(-pa - pb)
    return p


def _ntail(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # Rayleigh accept-reject for the upper tail, lb > 0.
    c = lb * lb / 2.0
    f = np.expm1(c - ub * ub / 2.0)
    x = c - np.log1p(rng.random(lb.shape[0]) * f)
    bad = np.flatnonzero(rng.random(lb.shape[0]) ** 2 * x > c)
    while bad.size > 0:
        cy = c[bad]
        y = cy - np.log1p(rng.random(bad.size) * f[bad])
        ok = rng.random(bad.size) ** 2 * y < cy
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return np.sqrt(2.0 * x)


def _trnd(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # plain accept-reject from the untruncated normal
    x = rng.standard_normal(lb.shape[0])
    bad = np.flatnonzero((x < lb) | (x > ub))
    while bad.size > 0:
        y = rng.standard_normal(bad.size)
        ok = (y > lb[bad]) & (y < ub[bad])
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return x


def _tn(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # central region: accept-reject for wide intervals, inverse CDF for narrow
    x = np.empty_like(lb)
    wide = np.abs(ub - lb) > 2.0
    if np.any(wide):
        x[wide] = _trnd(rng, lb[wide], ub[wide])
    if np.any(~wide):
        tl, tu = lb[~wide], ub[~wide]
        pl = erfc(tl / _SQRT2) / 2.0
        pu = erfc(tu / _SQRT2) / 2.0
        u = rng.random(tl.shape[0])
        x[~wide] = _SQRT2 * erfcinv(2.0 * (pl - (pl - pu) * u))
    return x


def trandn(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Exact draws from the standard normal truncated to [lb, ub], vectorized."""
    lb = np.asarray(lb, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    if lb.shape != ub.shape:
        raise ValueError("bounds must share a shape")
    x = np.empty_like(lb)
    hi = lb > 0.66
    if np.any(hi):
        x[hi] = _ntail(rng, lb[hi], ub[hi])
    lo = ub < -0.66
    if np.any(lo):
        x[lo] = -_ntail(rng, -ub[lo], -lb[lo])
    mid = ~(hi | lo)
    if np.any(mid):
        x[mid] = _tn(rng, lb[mid], ub[mid])
    return x


def _colperm(cov: np.ndarray, lb: np.ndarray, ub: np.ndarray):
    """Cholesky with greedy variable reordering (smallest conditional
    probability first).  Returns (L, permuted lb, permuted ub, perm)."""
    d = cov.shape[0]
    cov = cov.copy()
    lb = lb.copy()
    ub = ub.copy()
    perm = np.arange(d)
    L = np.zeros((d, d))
    z = np.zeros(d)

    for j in range(d):
        pr = np.full(d, np.inf)
        rest = np.arange(j, d)
        s = np.diag(cov)[rest] - np.sum(L[rest, :j] ** 2, axis=1)
        s = np.sqrt(np.maximum(s, _TINY))
        tl = (lb[rest] - L[rest, :j] @ z[:j]) / s
        tu = (ub[rest] - L[rest, :j] @ z[:j]) / s
        pr[rest] = _ln_normal_prob(tl, tu)
        k = int(np.argmin(pr))

        jk, kj = [j, k], [k, j]
        cov[jk, :] = cov[kj, :]
        cov[:, jk] = cov[:, kj]
        L[jk, :] = L[kj, :]
        lb[jk] = lb[kj]
        ub[jk] = ub[kj]
        perm[jk] = perm[kj]

        s = cov[j, j] - L[j, :j] @ L[j, :j]
        if s < -0.01:
            raise np.linalg.LinAlgError("covariance is not positive semi-definite")
        L[j, j] = math.sqrt(max(s, _TINY))
        if j + 1 < d:
            L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]

        tl = (lb[j] - L[j, :j] @ z[:j]) / L[j, j]
        tu = (ub[j] - L[j, :j] @ z[:j]) / L[j, j]
        w = _ln_normal_prob(tl, tu)
        z[j] = (math.exp(-0.5 * tl * tl - w) - math.exp(-0.5 * tu * tu - w)) / _SQRT_2PI
    return L, lb, ub, perm


def _gradpsi(y: np.ndarray, L: np.ndarray, l: np.ndarray, u: np.ndarray):
    """Gradient and Jacobian of the tilting objective; L scaled, zero diagonal."""
    d = u.shape[0]
    c = np.zeros(d)
    mu = np.zeros(d)
    x = np.zeros(d)
    x[: d - 1] = y[: d - 1]
    mu[: d - 1] = y[d - 1:]

    c[1:] = L[1:, :] @ x
    lt = l - mu - c
    ut = u - mu - c

    w = _ln_normal_prob(lt, ut)
    pl = np.exp(-0.5 * lt ** 2 - w) / _SQRT_2PI
    pu = np.exp(-0.5 * ut ** 2 - w) / _SQRT_2PI
    P = pl - pu

    dfdx = -mu[: d - 1] + (P @ L[:, : d - 1])
    dfdm = mu - x + P
    grad = np.concatenate((dfdx, dfdm[:-1]))

    lt = np.where(np.isinf(lt), 0.0, lt)
    ut = np.where(np.isinf(ut), 0.0, ut)
    dP = -(P ** 2) + lt * pl - ut * pu
    DL = dP[:, None] * L
    mx = DL - np.eye(d)
    xx = L.T @ DL
    mx = mx[:-1, :-1]
    xx = xx[:-1, :-1]
    jac = np.block([[xx, mx.T], [mx, np.diag(1.0 + dP[:-1])]])
    return grad, jac


def _psy(x: np.ndarray, mu: np.ndarray, L: np.ndarray, l: np.ndarray, u: np.ndarray) -> float:
    x = np.append(x, 0.0)
    mu = np.append(mu, 0.0)
    c = L @ x
    lt = l - mu - c
    ut = u - mu - c
    return float(np.sum(_ln_normal_prob(lt, ut) + 0.5 * mu ** 2 - x * mu))


def _tilted_proposals(rng, n, L, lb, ub, mu):
    """n proposals Z (n x d) and their log-likelihood ratios."""
    d = lb.shape[0]
    mu_ext = np.append(mu, 0.0)
    Z = np.zeros((d, n))
    logpr = np.zeros(n)
    for k in range(d):
        col = L[k, :k] @ Z[:k, :]
        tl = lb[k] - mu_ext[k] - col
        tu = ub[k] - mu_ext[k] - col
        Z[k, :] = mu_ext[k] + trandn(rng, tl, tu)
        logpr += _ln_normal_prob(tl, tu) + 0.5 * mu_ext[k] ** 2 - mu_ext[k] * Z[k, :]
    return Z.T, logpr


def _gibbs_sample(gamma, lower, m, rng, sweeps=50):
    """Coordinate-wise conditional sampler: m parallel chains, fixed burn-in,
    final states returned.  Approximate by construction."""
    d = gamma.shape[0]
    lam = cho_solve(cho_factor(gamma, lower=True), np.eye(d))
    sd = 1.0 / np.sqrt(np.diag(lam))
    x = np.where(np.isfinite(lower), lower + 0.5, 0.0)
    x = np.tile(np.maximum(x, np.where(np.isfinite(lower), lower, -np.inf)), (m, 1))
    inf_up = np.full(m, np.inf)
    for _ in range(sweeps):
        for k in range(d):
            cond_mean = -(x @ lam[:, k] - x[:, k] * lam[k, k]) / lam[k, k]
            tl = (lower[k] - cond_mean) / sd[k]
            x[:, k] = cond_mean + sd[k] * trandn(rng, tl, inf_up)
    return x


def tmvn_sample(
    gamma: np.ndarray,
    lower: np.ndarray,
    m: int,
    rng: np.random.Generator,
    *,
    return_diagnostics: bool = False,
    fallback_acceptance: float = 1e-6,
):
    """Sample m draws from N(0, gamma) subject to x >= lower componentwise.

    gamma must be symmetric positive definite; entries of lower may be -inf.
    Returns an (m, T) array, or (draws, TmvnDiagnostics) when
    return_diagnostics is set.  Raises RegionProbabilityUnderflow when the
    region probability is below 1e-300.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    d = lower.shape[0]
    if gamma.shape != (d, d):
        raise ValueError("gamma must be T x T with T = len(lower)")
    if m < 1:
        raise ValueError("need at least one draw")
    if np.any(np.isnan(lower)) or np.any(lower == np.inf):
        raise ValueError("lower bounds must be < +inf and not NaN")
    upper = np.full(d, np.inf)

    if d == 1:
        sd = math.sqrt(gamma[0, 0])
        tl = lower / sd
        log_prob = float(_ln_normal_prob(tl, np.array([np.inf]))[0])
        if log_prob < _LOG_UNDERFLOW:
            raise RegionProbabilityUnderflow(f"log region probability {log_prob:.1f}")
        draws = (sd * trandn(rng, np.repeat(tl, m), np.full(m, np.inf)))[:, None]
        diag = TmvnDiagnostics("tilting-1d", 1.0, m, m, False, log_prob)
        return (draws, diag) if return_diagnostics else draws

    L_full, lb, ub, perm = _colperm(gamma, lower, upper)
    diag_L = np.diag(L_full).copy()
    L = L_full / diag_L[:, None]
    lb = lb / diag_L
    ub = ub / diag_L
    L = L - np.eye(d)

    sol = optimize.root(_gradpsi, np.zeros(2 * (d - 1)), args=(L, lb, ub), method="hybr", jac=True)
    x_star = sol.x[: d - 1]
    mu_star = sol.x[d - 1:]
    if not np.all(np.isfinite(sol.x)):
        x_star = np.zeros(d - 1)
        mu_star = np.zeros(d - 1)
    psistar = _psy(x_star, mu_star, L, lb, ub)

    if psistar < _LOG_UNDERFLOW:
        raise RegionProbabilityUnderflow(f"log region probability bound {psistar:.1f}")

    accepted = np.empty((0, d))
    proposals = 0
    n_accept = 0
    rounds = 0
    use_gibbs = False
    rate_est = 1.0
    while accepted.shape[0] < m:
        Z, logpr = _tilted_proposals(rng, m, L, lb, ub, mu_star)
        keep = -np.log(rng.random(m)) > (psistar - logpr)
        accepted = np.vstack([accepted, Z[keep]])
        proposals += m
        n_accept += int(keep.sum())
        rounds += 1
        if rounds == 1:
            # per-proposal acceptance probability is min(1, exp(logpr - psi*)),
            # so the first round doubles as a smooth pilot estimate
            rate_est = float(np.mean(np.exp(np.minimum(0.0, logpr - psistar))))
            if rate_est < fallback_acceptance:
                use_gibbs = True
                break
        if rounds > 1000:
            use_gibbs = True
            break

    if use_gibbs:
        draws = _gibbs_sample(gamma, lower, m, rng)
        rate = n_accept / proposals if proposals else 0.0
        diag = TmvnDiagnostics("gibbs", rate, proposals, n_accept, True, psistar)
        return (draws, diag) if return_diagnostics else draws

    # accepted rows are the whitened sequential variables; map back through the
    # unscaled Cholesky factor and undo the variable reordering
    x_perm = accepted[:m] @ L_full.T
    draws = np.empty((m, d))
    draws[:, perm] = x_perm
    diag = TmvnDiagnostics("tilting", n_accept / proposals, proposals, n_accept, False, psistar)
    return (draws, diag) if return_diagnostics else draws
