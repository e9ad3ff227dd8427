"""Online item-selection rules.

All rules score every available candidate from one shared set of posterior
draws per step and return the argmax with lowest-index tie-breaking.  Rules
that integrate over the latent trait (EAP-KL, max-posterior-shift, mutual
information) can be restricted to a prioritized factor subset by
marginalizing the draws to those coordinates inside the integrands; the
predictive-variance rule acts in prediction space and is unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as kern
from .bank import ItemBank
from .posterior import PosteriorSamples, SunPosterior, sample, update

RULE_NAMES = ("eap_kl", "max_pos", "mi", "max_var", "random")

# score gaps below this are treated as ties and resolved to the lowest index
TIE_EPS = 1e-12


class SelectionError(ValueError):
    """Invalid selection request."""


@dataclass(frozen=True)
class SelectionContext:
    bank: ItemBank
    post: SunPosterior
    available: tuple[int, ...]
    samples: PosteriorSamples
    rng: np.random.Generator
    factors: tuple[int, ...] | None = None   # prioritized subset, None = all

    def __post_init__(self):
        avail = tuple(sorted(set(int(i) for i in self.available)))
        if not avail:
            raise SelectionError("no available items to select from")
        if avail[0] < 0 or avail[-1] >= self.bank.num_items:
            raise SelectionError("available items out of bank bounds")
        object.__setattr__(self, "available", avail)
        if self.factors is not None:
            f = tuple(sorted(set(int(k) for k in self.factors)))
            if not f or f[0] < 0 or f[-1] >= self.bank.num_factors:
                raise SelectionError("prioritized factors out of bounds")
            object.__setattr__(self, "factors", f)


@dataclass(frozen=True)
class CriterionScore:
    item: int
    score: float


@dataclass(frozen=True)
class ImportanceWeights:
    """Self-normalized weights over posterior draws for one (item, response)."""

    w: np.ndarray
    q: np.ndarray

    @property
    def effective_sample_size(self) -> float:
        s = float(self.w.sum())
        if s == 0.0:
            return 0.0
        return s * s / float(self.w @ self.w)


def importance_weights(p_item: np.ndarray, y: int) -> ImportanceWeights:
    """Weights w_i = P_i^y (1-P_i)^(1-y) over draws, normalized to q."""
    if y not in (0, 1):
        raise SelectionError("response must be 0 or 1")
    w = np.asarray(p_item, dtype=np.float64) if y == 1 else 1.0 - np.asarray(p_item, dtype=np.float64)
    s = w.sum()
    q = w / s if s > 0.0 else np.zeros_like(w)
    return ImportanceWeights(w=w, q=q)


def _argmax_lowest(items: Sequence[int], scores: np.ndarray) -> int:
    best = float(np.max(scores))
    for item, score in zip(items, scores):
        if score >= best - TIE_EPS:
            return int(item)
    return int(items[int(np.argmax(scores))])


def _marginal_parts(ctx: SelectionContext):
    """Draws and candidate loadings restricted to the prioritized factors."""
    avail = np.asarray(ctx.available, dtype=np.intp)
    loadings = ctx.bank.loadings[avail]
    intercepts = ctx.bank.intercepts[avail]
    theta = ctx.samples.draws
    if ctx.factors is not None:
        cols = np.asarray(ctx.factors, dtype=np.intp)
        loadings = loadings[:, cols]
        theta = theta[:, cols]
    return theta, loadings, intercepts


def _full_parts(ctx: SelectionContext):
    avail = np.asarray(ctx.available, dtype=np.intp)
    return ctx.samples.draws, ctx.bank.loadings[avail], ctx.bank.intercepts[avail]


def score_eap_kl(ctx: SelectionContext) -> np.ndarray:
    if ctx.samples.m < 2:
        raise SelectionError("EAP-KL needs at least two draws")
    theta, loadings, intercepts = _marginal_parts(ctx)
    p = kern.predictive_matrix(theta, loadings, intercepts)
    theta_hat = theta.mean(axis=0)
    p_hat = kern.probit_clamped(loadings @ theta_hat + intercepts)
    return np.maximum(kern.eap_kl_scores(p, p_hat), 0.0)


def score_max_pos(ctx: SelectionContext) -> np.ndarray:
    theta, loadings, intercepts = _marginal_parts(ctx)
    p = kern.predictive_matrix(theta, loadings, intercepts)
    return np.maximum(kern.max_pos_scores(p), 0.0)


def score_mi(ctx: SelectionContext, *, resample: bool = False) -> np.ndarray:
    theta, loadings, intercepts = _marginal_parts(ctx)
    p = kern.predictive_matrix(theta, loadings, intercepts)
    if not resample:
        return np.maximum(kern.mi_scores_weighted(p), 0.0)
    # multinomial resampling variant: draw indices from q and average the
    # log-ratio over the resampled set
    m = p.shape[0]
    c = kern.clamp_prob(p.mean(axis=0))
    scores = np.empty(p.shape[1])
    for j in range(p.shape[1]):
        total = 0.0
        for y in (0, 1):
            iw = importance_weights(p[:, j], y)
            if iw.q.sum() == 0.0:
                continue
            idx = ctx.rng.choice(m, size=m, p=iw.q)
            cy = c[j] if y == 1 else 1.0 - c[j]
            log_ratio = np.log(p[idx, j] if y == 1 else 1.0 - p[idx, j]) - np.log(cy)
            total += cy * float(log_ratio.mean())
        scores[j] = total
    return np.maximum(scores, 0.0)


def score_max_var(ctx: SelectionContext) -> np.ndarray:
    theta, loadings, intercepts = _full_parts(ctx)
    p = kern.predictive_matrix(theta, loadings, intercepts)
    return np.maximum(kern.max_var_scores(p), 0.0)


def select_eap_kl(ctx: SelectionContext) -> int:
    return _argmax_lowest(ctx.available, score_eap_kl(ctx))


def select_max_pos(ctx: SelectionContext) -> int:
    return _argmax_lowest(ctx.available, score_max_pos(ctx))


def select_mi(ctx: SelectionContext, *, resample: bool = False) -> int:
    return _argmax_lowest(ctx.available, score_mi(ctx, resample=resample))


def select_max_var(ctx: SelectionContext) -> int:
    return _argmax_lowest(ctx.available, score_max_var(ctx))


def select_random(ctx: SelectionContext) -> int:
    return int(ctx.rng.choice(np.asarray(ctx.available)))


_SCORERS = {
    "eap_kl": score_eap_kl,
    "max_pos": score_max_pos,
    "mi": score_mi,
    "max_var": score_max_var,
}


def criterion_scores(ctx: SelectionContext, rule: str) -> list[CriterionScore]:
    if rule not in _SCORERS:
        raise SelectionError(f"unknown scored rule {rule!r}")
    scores = _SCORERS[rule](ctx)
    return [CriterionScore(item=i, score=float(s)) for i, s in zip(ctx.available, scores)]


@dataclass(frozen=True)
class ParamEnsemble:
    """Item-parameter draws (loadings, intercepts) sharing one bank shape."""

    members: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if not self.members:
            raise SelectionError("ensemble must have at least one member")
        frozen = []
        shape = None
        for loadings, intercepts in self.members:
            bank = ItemBank(loadings, intercepts)   # reuse bank validation
            if shape is None:
                shape = (bank.num_items, bank.num_factors)
            elif (bank.num_items, bank.num_factors) != shape:
                raise SelectionError("ensemble members must share (J, K)")
            frozen.append((bank.loadings, bank.intercepts))
        object.__setattr__(self, "members", tuple(frozen))

    @property
    def size(self) -> int:
        return len(self.members)


def member_posterior(history: Sequence[tuple[int, int]], loadings: np.ndarray,
                     intercepts: np.ndarray, num_factors: int) -> SunPosterior:
    """The posterior the shared history induces under one member's parameters."""
    post = SunPosterior.prior(num_factors)
    for item, y in history:
        if item < 0:
            raise SelectionError("history lacks item indices; cannot replay under a member")
        post = update(post, loadings[item], float(intercepts[item]), int(y), item=item)
    return post


def fully_bayesian_scores(bank: ItemBank, ensemble: ParamEnsemble,
                          member_samples: Sequence[PosteriorSamples],
                          available: Sequence[int], rule: str,
                          factors: tuple[int, ...] | None = None,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Equal-weight average of the rule's score vector across members.

    Each member's criterion is evaluated on that member's own posterior
    draws; a degenerate ensemble therefore reproduces the fixed-parameter
    scores, and the tie guard keeps the argmax identical.
    """
    if rule not in _SCORERS:
        raise SelectionError(f"unknown scored rule {rule!r}")
    if len(member_samples) != ensemble.size:
        raise SelectionError("need one sample set per ensemble member")
    rng = rng if rng is not None else np.random.default_rng(0)
    total = np.zeros(len(tuple(available)))
    dummy_post = SunPosterior.prior(bank.num_factors)
    for (loadings, intercepts), samples in zip(ensemble.members, member_samples):
        member_bank = ItemBank(loadings, intercepts, names=None)
        ctx = SelectionContext(member_bank, dummy_post, tuple(available), samples, rng, factors)
        total += _SCORERS[rule](ctx)
    return total / ensemble.size


def _same_posterior(a: SunPosterior, b: SunPosterior) -> bool:
    return (np.array_equal(a.c1, b.c1) and np.array_equal(a.c2, b.c2)
            and np.array_equal(a.c3, b.c3))


def select_fully_bayesian(ctx: SelectionContext, ensemble: ParamEnsemble, rule: str) -> int:
    """Ensemble-averaged selection: one posterior per member (same history,
    member parameters), criterion averaged with equal member weights.

    A member whose replayed posterior coincides with the context's reuses the
    context draws, so a degenerate ensemble scores identically to the fixed
    rule and the tie guard keeps the argmax equal.
    """
    member_samples = []
    for child, (loadings, intercepts) in zip(ctx.rng.spawn(ensemble.size), ensemble.members):
        post_m = member_posterior(ctx.post.history, loadings, intercepts, ctx.bank.num_factors)
        if _same_posterior(post_m, ctx.post):
            member_samples.append(ctx.samples)
        else:
            member_samples.append(sample(post_m, ctx.samples.m, child))
    scores = fully_bayesian_scores(ctx.bank, ensemble, member_samples,
                                   ctx.available, rule, ctx.factors, ctx.rng)
    return _argmax_lowest(ctx.available, scores)
