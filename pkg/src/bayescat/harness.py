"""Simulation harness: single sessions, paired cohorts, and report metrics.

A session administers items until the posterior variance of every prioritized
factor reaches tau^2 or the horizon is hit.  Cohorts run several selectors
head-to-head on common random numbers: the same simulated examinees, and the
same response for a given (examinee, item) pair no matter which selector asks.

Reproducibility scheme: every random stream is derived from an explicit seed
tuple.  Step t of examinee e uses SeedSequence((seed, e, t)); the cohort's
trait and response draws use (seed, 1) and (seed, 2); summary draws use
four-part keys so they never collide with step streams.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import _kernels as kern
from .bank import ItemBank
from .posterior import PosteriorSamples, SunPosterior, moments, sample, update
from .rl.network import QNetwork, act
from .rl.train import build_state
from .selection import (
    RULE_NAMES,
    ParamEnsemble,
    SelectionContext,
    SelectionError,
    TIE_EPS,
    _argmax_lowest,
    _same_posterior,
    fully_bayesian_scores,
    member_posterior,
    select_random,
    _SCORERS,
)

SCHEMA_VERSION = 1


class HarnessError(ValueError):
    """Invalid session or cohort configuration."""


class ResponderAbort(RuntimeError):
    """Raised by a responder to abandon the session."""


@dataclass(frozen=True)
class SessionConfig:
    selector: str
    tau2: float
    factors: tuple[int, ...]
    horizon: int
    sample_count: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.tau2 <= 0.0:
            raise HarnessError("tau2 must be positive")
        if self.horizon < 1:
            raise HarnessError("horizon must be positive")
        if self.sample_count < 2:
            raise HarnessError("sample_count must be at least 2")
        if not self.factors:
            raise HarnessError("need at least one prioritized factor")
        object.__setattr__(self, "factors", tuple(sorted(set(int(k) for k in self.factors))))


@dataclass(frozen=True)
class SessionRecord:
    examinee_id: int
    selector: str
    true_theta: np.ndarray | None
    items: tuple[int, ...]
    responses: tuple[int, ...]
    means: np.ndarray             # one row per administered item
    variances: np.ndarray
    termination_step: int         # T', first step meeting the variance target
    reason: str                   # "variance" | "horizon" | "aborted"
    select_seconds: tuple[float, ...]
    incomplete: bool = False

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise HarnessError("administered items must be distinct")
        if self.termination_step > len(self.items):
            raise HarnessError("termination step beyond recorded steps")


class Selector(Protocol):
    name: str

    def choose(self, bank: ItemBank, post: SunPosterior, available: np.ndarray,
               samples: PosteriorSamples, rng: np.random.Generator,
               step_key: tuple[int, ...], factors: tuple[int, ...] | None) -> int:
        ...


@dataclass(frozen=True)
class HeuristicSelector:
    """One of the sampling-based rules, restricted to the prioritized factors
    (the predictive-variance rule ignores the restriction by design).

    label lets a cohort carry two instances of the same rule under
    distinct names."""

    rule: str
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.rule

    def choose(self, bank, post, available, samples, rng, step_key, factors):
        ctx = SelectionContext(bank, post, tuple(np.flatnonzero(available)),
                               samples, rng, factors)
        if self.rule == "random":
            return select_random(ctx)
        return _argmax_lowest(ctx.available, _SCORERS[self.rule](ctx))


@dataclass(frozen=True)
class PolicySelector:
    """Greedy choice of a trained Q-network."""

    network: QNetwork
    name: str = "qlearning"

    def choose(self, bank, post, available, samples, rng, step_key, factors):
        state = build_state(post, bank, samples, available)
        return act(self.network, state)


@dataclass(frozen=True)
class FullyBayesianSelector:
    """Ensemble-averaged criterion under item-parameter uncertainty.

    Every member replays the shared history under its own parameters and
    draws from its own posterior with a generator rebuilt from the step key,
    so a degenerate ensemble reproduces the fixed-parameter draws exactly.
    """

    rule: str
    ensemble: ParamEnsemble

    def __post_init__(self):
        if self.rule not in _SCORERS:
            raise SelectionError(f"unknown scored rule {self.rule!r}")

    @property
    def name(self) -> str:
        return f"{self.rule}_fb"

    def choose(self, bank, post, available, samples, rng, step_key, factors):
        avail = tuple(np.flatnonzero(available))
        member_samples = []
        for loadings, intercepts in self.ensemble.members:
            post_m = member_posterior(post.history, loadings, intercepts,
                                      bank.num_factors)
            if _same_posterior(post_m, post):
                member_samples.append(samples)
                continue
            member_rng = np.random.default_rng(np.random.SeedSequence(step_key))
            member_samples.append(sample(post_m, samples.m, member_rng))
        scores = fully_bayesian_scores(bank, self.ensemble, member_samples,
                                       avail, self.rule, factors, rng)
        return _argmax_lowest(avail, scores)


def make_selector(spec: str, *, network: QNetwork | None = None,
                  ensemble: ParamEnsemble | None = None) -> Selector:
    """Build a selector from its id: a heuristic rule name, "qlearning"
    (requires a network), or a rule suffixed "_fb" (requires an ensemble)."""
    if spec in RULE_NAMES:
        return HeuristicSelector(spec)
    if spec == "qlearning":
        if network is None:
            raise HarnessError("qlearning selector needs a policy network")
        return PolicySelector(network)
    if spec.endswith("_fb"):
        if ensemble is None:
            raise HarnessError("fully Bayesian selector needs a parameter ensemble")
        return FullyBayesianSelector(spec[: -len("_fb")], ensemble)
    raise HarnessError(f"unknown selector {spec!r}")


@dataclass(frozen=True)
class SimulatedResponder:
    """Answers from a fixed 0/1 response vector indexed by item."""

    responses: np.ndarray

    def __call__(self, item: int) -> int:
        return int(self.responses[item])


def simulate_responses(bank: ItemBank, theta: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """One response per bank item for a fixed latent trait."""
    p = kern.norm_cdf(bank.loadings @ np.asarray(theta, dtype=np.float64)
                      + bank.intercepts)
    return (rng.random(bank.num_items) < p).astype(np.int64)


def _step_rng(seed: int, examinee: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, examinee, step)))


def run_session(bank: ItemBank, selector: Selector, responder: Callable[[int], int],
                cfg: SessionConfig, *, examinee_id: int = 0,
                true_theta: np.ndarray | None = None,
                continue_past_termination: bool = False) -> SessionRecord:
    """Administer one adaptive test session and record every step.

    Termination is checked after each update: the session ends once the
    posterior variance of every prioritized factor is at most tau^2, or at
    the horizon.  With continue_past_termination the loop keeps
    administering to the horizon and only T' marks the crossing.
    """
    if cfg.horizon > bank.num_items:
        raise HarnessError("horizon exceeds bank size")
    if max(cfg.factors) >= bank.num_factors:
        raise HarnessError("prioritized factors out of range")

    post = SunPosterior.prior(bank.num_factors)
    available = np.ones(bank.num_items, dtype=bool)
    items: list[int] = []
    responses: list[int] = []
    means: list[np.ndarray] = []
    variances: list[np.ndarray] = []
    seconds: list[float] = []
    factors = list(cfg.factors)
    term_step: int | None = None
    reason = "horizon"
    incomplete = False

    # the prior is N(0, I): its variances are known exactly, so a threshold
    # of 1 or more stops the session before any item is selected
    if 1.0 <= cfg.tau2:
        term_step, reason = 0, "variance"
    if term_step is None or continue_past_termination:
        rng_t = _step_rng(cfg.seed, examinee_id, 0)
        draws = sample(post, cfg.sample_count, rng_t)
        for step in range(cfg.horizon):
            t0 = time.perf_counter()
            item = selector.choose(bank, post, available, draws, rng_t,
                                   (cfg.seed, examinee_id, step), cfg.factors)
            seconds.append(time.perf_counter() - t0)
            if not available[item]:
                raise HarnessError(f"selector returned administered item {item}")
            try:
                y = int(responder(item))
            except ResponderAbort:
                incomplete = True
                reason = "aborted"
                seconds.pop()
                break
            if y not in (0, 1):
                raise HarnessError("responses must be 0 or 1")
            post = update(post, bank.loadings[item], float(bank.intercepts[item]),
                          y, item=item)
            available[item] = False
            items.append(item)
            responses.append(y)
            rng_t = _step_rng(cfg.seed, examinee_id, step + 1)
            draws = sample(post, cfg.sample_count, rng_t)
            mean, var = moments(draws)
            means.append(mean)
            variances.append(var)
            if term_step is None and float(np.max(var[factors])) <= cfg.tau2:
                term_step = step + 1
                reason = "variance"
                if not continue_past_termination:
                    break
    if term_step is None:
        term_step = len(items)
        if not incomplete:
            reason = "horizon"

    k = bank.num_factors
    return SessionRecord(
        examinee_id=examinee_id,
        selector=selector.name,
        true_theta=None if true_theta is None else np.asarray(true_theta, dtype=np.float64),
        items=tuple(items),
        responses=tuple(responses),
        means=np.asarray(means, dtype=np.float64).reshape(len(items), k),
        variances=np.asarray(variances, dtype=np.float64).reshape(len(items), k),
        termination_step=int(term_step),
        reason=reason,
        select_seconds=tuple(seconds),
        incomplete=incomplete,
    )


def oracle_posterior(bank: ItemBank, responses: Sequence[int]) -> SunPosterior:
    """Posterior after answering every item in the bank, in bank order."""
    responses = np.asarray(responses)
    if responses.shape != (bank.num_items,):
        raise HarnessError("need one response per bank item")
    post = SunPosterior.prior(bank.num_factors)
    for j in range(bank.num_items):
        post = update(post, bank.loadings[j], float(bank.intercepts[j]),
                      int(responses[j]), item=j)
    return post


@dataclass(frozen=True)
class CohortConfig:
    tau2: float
    factors: tuple[int, ...]
    horizon: int
    sample_count: int = 2000
    seed: int = 0
    reference_length: int = 20
    mse_lengths: tuple[int, ...] = (10, 20, 30, 40, 50)
    continue_past_termination: bool = True
    oracle_comparison: bool = True
    workers: int = 1

    def session_config(self, selector_name: str) -> SessionConfig:
        return SessionConfig(selector=selector_name, tau2=self.tau2,
                             factors=self.factors, horizon=self.horizon,
                             sample_count=self.sample_count, seed=self.seed)


@dataclass(frozen=True)
class SelectorStats:
    name: str
    avg_termination: float
    completion_curve: np.ndarray      # index t: fraction of sessions with T' <= t
    mse_by_length: dict[int, float]
    win_share: np.ndarray             # per factor, at the reference length
    exposure: np.ndarray              # per item, fraction of real tests containing it
    avg_seconds_per_item: float
    oracle_mse: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CohortReport:
    selectors: tuple[SelectorStats, ...]
    num_examinees: int
    horizon: int
    reference_length: int
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "num_examinees": self.num_examinees,
            "horizon": self.horizon,
            "reference_length": self.reference_length,
            "selectors": [
                {
                    "name": s.name,
                    "avg_termination": s.avg_termination,
                    "completion_curve": s.completion_curve.tolist(),
                    "mse_by_length": {str(k): v for k, v in s.mse_by_length.items()},
                    "win_share": s.win_share.tolist(),
                    "exposure": s.exposure.tolist(),
                    "avg_seconds_per_item": s.avg_seconds_per_item,
                    "oracle_mse": dict(s.oracle_mse),
                }
                for s in self.selectors
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write(self, out_dir: str | Path) -> None:
        """JSON summary plus CSV tables for curves, MSE, and exposure."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(self.to_json())
        with open(out / "completion_curves.csv", "w") as fh:
            fh.write("schema_version,selector,step,completed_fraction\n")
            for s in self.selectors:
                for t, frac in enumerate(s.completion_curve):
                    fh.write(f"{self.schema_version},{s.name},{t},{frac:.6f}\n")
        with open(out / "mse_by_length.csv", "w") as fh:
            fh.write("schema_version,selector,length,mse\n")
            for s in self.selectors:
                for length in sorted(s.mse_by_length):
                    fh.write(f"{self.schema_version},{s.name},{length},"
                             f"{s.mse_by_length[length]:.8f}\n")
        with open(out / "exposure.csv", "w") as fh:
            fh.write("schema_version,selector,item,exposure_rate\n")
            for s in self.selectors:
                for j, rate in enumerate(s.exposure):
                    fh.write(f"{self.schema_version},{s.name},{j},{rate:.6f}\n")


def _run_cohort_sessions(bank, selector, y_matrix, theta, cfg: CohortConfig):
    session_cfg = cfg.session_config(selector.name)

    def one(i: int) -> SessionRecord:
        return run_session(bank, selector, SimulatedResponder(y_matrix[i]),
                           session_cfg, examinee_id=i, true_theta=theta[i],
                           continue_past_termination=cfg.continue_past_termination)

    n = y_matrix.shape[0]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


def _posterior_summary(post: SunPosterior, m: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    draws = sample(post, m, rng).draws
    return {
        "mean": draws.mean(axis=0),
        "median": np.quantile(draws, 0.5, axis=0),
        "q25": np.quantile(draws, 0.25, axis=0),
        "q75": np.quantile(draws, 0.75, axis=0),
    }


def run_cohort(bank: ItemBank, selectors: Sequence[Selector], n: int,
               cfg: CohortConfig, *, return_records: bool = False):
    """Paired comparison of selectors over one simulated cohort.

    All selectors see the same examinees: trait vectors and per-item
    responses are drawn once, so two selectors administering the same item
    to the same examinee observe the same answer.  With return_records the
    per-session records come back alongside the report, one list per
    selector in input order.
    """
    if n < 1:
        raise HarnessError("need at least one examinee")
    if len(selectors) < 1:
        raise HarnessError("need at least one selector")
    names = [s.name for s in selectors]
    if len(set(names)) != len(names):
        raise HarnessError("selector names must be unique within a cohort")

    theta = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1))) \
        .standard_normal((n, bank.num_factors))
    u = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2))) \
        .random((n, bank.num_items))
    p = kern.norm_cdf(theta @ bank.loadings.T + bank.intercepts[None, :])
    y_matrix = (u < p).astype(np.int64)

    all_records: list[list[SessionRecord]] = [
        _run_cohort_sessions(bank, sel, y_matrix, theta, cfg) for sel in selectors
    ]

    oracle_summaries: list[dict[str, np.ndarray]] | None = None
    if cfg.oracle_comparison:
        oracle_summaries = []
        for i in range(n):
            o_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, i, 0, 0)))
            oracle_summaries.append(_posterior_summary(
                oracle_posterior(bank, y_matrix[i]), cfg.sample_count, o_rng))

    lengths = [L for L in cfg.mse_lengths if L <= cfg.horizon]
    # paired comparison: a length or the reference length only counts
    # examinees whose sessions reached it under every selector
    min_steps = np.array([[len(r.items) for r in recs] for recs in all_records]).min(axis=0)

    ref = cfg.reference_length
    ref_ok = np.flatnonzero(min_steps >= ref)
    err_ref = np.full((len(selectors), n, bank.num_factors), np.nan)
    for s_idx, recs in enumerate(all_records):
        for i in ref_ok:
            err_ref[s_idx, i] = (recs[i].means[ref - 1] - theta[i]) ** 2

    win = np.zeros((len(selectors), bank.num_factors))
    for i in ref_ok:
        for k in range(bank.num_factors):
            errs = err_ref[:, i, k]
            winners = np.flatnonzero(errs <= errs.min() + TIE_EPS)
            win[winners, k] += 1.0 / winners.size
    if ref_ok.size:
        win /= ref_ok.size

    stats: list[SelectorStats] = []
    for s_idx, (sel, recs) in enumerate(zip(selectors, all_records)):
        terms = np.array([r.termination_step for r in recs], dtype=np.float64)
        curve = np.array([(terms <= t).mean() for t in range(cfg.horizon + 1)])
        mse_by_length: dict[int, float] = {}
        for length in lengths:
            ok = np.flatnonzero(min_steps >= length)
            if ok.size == 0:
                continue
            sq = [(recs[i].means[length - 1] - theta[i]) ** 2 for i in ok]
            mse_by_length[length] = float(np.mean(sq))
        exposure = np.zeros(bank.num_items)
        for r in recs:
            real = r.items[: r.termination_step]
            exposure[list(real)] += 1.0
        exposure /= n
        per_item_seconds = [
            float(np.mean(r.select_seconds[: r.termination_step]))
            for r in recs if r.termination_step >= 1
        ]
        avg_seconds = float(np.mean(per_item_seconds)) if per_item_seconds else 0.0

        oracle_mse: dict[str, float] = {}
        if oracle_summaries is not None:
            acc = {key: [] for key in ("mean", "median", "q25", "q75")}
            for i, rec in enumerate(recs):
                post = SunPosterior.prior(bank.num_factors)
                for item, y in zip(rec.items[: rec.termination_step],
                                   rec.responses[: rec.termination_step]):
                    post = update(post, bank.loadings[item],
                                  float(bank.intercepts[item]), y, item=item)
                s_rng = np.random.default_rng(
                    np.random.SeedSequence((cfg.seed, i, 0, 1 + s_idx)))
                summary = _posterior_summary(post, cfg.sample_count, s_rng)
                for key in acc:
                    acc[key].append((summary[key] - oracle_summaries[i][key]) ** 2)
            oracle_mse = {key: float(np.mean(vals)) for key, vals in acc.items()}

        stats.append(SelectorStats(
            name=sel.name,
            avg_termination=float(terms.mean()),
            completion_curve=curve,
            mse_by_length=mse_by_length,
            win_share=win[s_idx].copy(),
            exposure=exposure,
            avg_seconds_per_item=avg_seconds,
            oracle_mse=oracle_mse,
        ))

    report = CohortReport(
        selectors=tuple(stats),
        num_examinees=n,
        horizon=cfg.horizon,
        reference_length=ref,
    )
    if return_records:
        return report, all_records
    return report


def save_ensemble(path: str | Path, ensemble: ParamEnsemble) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "members": [
            {"loadings": loadings.tolist(), "intercepts": intercepts.tolist()}
            for loadings, intercepts in ensemble.members
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_ensemble(path: str | Path) -> ParamEnsemble:
    doc = json.loads(Path(path).read_text())
    members = tuple(
        (np.asarray(m["loadings"], dtype=np.float64),
         np.asarray(m["intercepts"], dtype=np.float64))
        for m in doc["members"]
    )
    return ParamEnsemble(members)
