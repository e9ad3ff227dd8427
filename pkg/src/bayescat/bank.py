"""Item bank, probit response model, response simulation, synthetic banks.

The response model is two-parameter multidimensional item response theory
with a probit link: an examinee with latent trait theta in R^K answers item j
correctly with probability Phi(B_j' theta + D_j), where B_j is the item's
loading row and D_j its intercept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import norm_cdf


class BankError(ValueError):
    """Invalid item bank construction or access."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ItemBank:
    """Loadings B (J x K), intercepts D (J,), optional item names."""

    loadings: np.ndarray
    intercepts: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "loadings", _as_readonly(np.atleast_2d(self.loadings)))
        object.__setattr__(self, "intercepts", _as_readonly(np.atleast_1d(self.intercepts)))
        if self.loadings.ndim != 2:
            raise BankError("loadings must be a J x K matrix")
        j, k = self.loadings.shape
        if j < 1 or k < 1:
            raise BankError("bank needs J >= 1 items and K >= 1 factors")
        if self.intercepts.shape != (j,):
            raise BankError(f"intercepts must have length {j}")
        if not (np.all(np.isfinite(self.loadings)) and np.all(np.isfinite(self.intercepts))):
            raise BankError("bank parameters must be finite")
        if not np.all(np.any(self.loadings != 0.0, axis=1)):
            raise BankError("every item must load on at least one factor")
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != j:
                raise BankError(f"names must have length {j}")
            if len(set(names)) != j:
                raise BankError("item names must be unique")
            object.__setattr__(self, "names", names)

    @property
    def num_items(self) -> int:
        return self.loadings.shape[0]

    @property
    def num_factors(self) -> int:
        return self.loadings.shape[1]

    def item_name(self, item: int) -> str:
        return self.names[item] if self.names is not None else f"item_{item}"

    def to_dict(self) -> dict:
        return {
            "loadings": self.loadings.tolist(),
            "intercepts": self.intercepts.tolist(),
            "names": list(self.names) if self.names is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ItemBank":
        names = doc.get("names")
        return cls(
            loadings=np.asarray(doc["loadings"], dtype=np.float64),
            intercepts=np.asarray(doc["intercepts"], dtype=np.float64),
            names=tuple(names) if names else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ItemBank":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ItemBank":
        return cls.from_json(Path(path).read_text())


def probit_prob(bank: ItemBank, item: int, theta: Sequence[float] | np.ndarray) -> float:
    """Success probability Phi(B_j' theta + D_j) for one item."""
    if not 0 <= item < bank.num_items:
        raise BankError(f"item {item} out of bounds for bank of size {bank.num_items}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (bank.num_factors,):
        raise BankError(f"theta must have length {bank.num_factors}")
    if not np.all(np.isfinite(theta)):
        raise BankError("theta must be finite")
    z = float(bank.loadings[item] @ theta + bank.intercepts[item])
    return float(norm_cdf(np.array([z]))[0])


def all_success_probs(bank: ItemBank, theta: np.ndarray) -> np.ndarray:
    """Phi(B theta + D) for every item at once."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.asarray(norm_cdf(bank.loadings @ theta + bank.intercepts))


def simulate_response(rng: np.random.Generator, p: float) -> int:
    """Draw a Bernoulli(p) response."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    return int(rng.random() < p)


@dataclass(frozen=True)
class BankGenConfig:
    """Synthetic bank recipe: permuted equally spaced loading magnitudes,
    uniform intercepts, sparse loading pattern with a lower-triangular
    identifiability mask on the first K rows."""

    num_items: int
    num_factors: int
    magnitude_range: tuple[float, float] = (0.3, 3.0)
    intercept_range: tuple[float, float] = (-1.5, 1.5)
    max_extra_loadings: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_items < 1 or self.num_factors < 1:
            raise BankError("need at least one item and one factor")
        if self.magnitude_range[0] > self.magnitude_range[1] or self.intercept_range[0] > self.intercept_range[1]:
            raise BankError("ranges must be non-empty")
        if self.magnitude_range[0] < 0:
            raise BankError("loading magnitudes must be non-negative")
        if not 0 <= self.max_extra_loadings <= self.num_factors - 1:
            raise BankError("max extra loadings must lie in [0, K-1]")


def generate_bank(cfg: BankGenConfig) -> ItemBank:
    """Generate a synthetic bank.

    Column k of the magnitude table holds J equally spaced values in the
    magnitude range, randomly permuted.  Item j always loads on factor 1 and
    on a uniformly chosen subset of at most max_extra_loadings other factors;
    the first K rows have their upper-triangle entries zeroed so the leading
    block is lower-triangular.  Factor-1 loadings keep positive sign; extra
    loadings get independent random signs.  Intercepts are uniform.
    """
    rng = np.random.default_rng(cfg.seed)
    j, k = cfg.num_items, cfg.num_factors
    lo, hi = cfg.magnitude_range
    base = np.linspace(lo, hi, j) if j > 1 else np.array([(lo + hi) / 2.0])

    magnitudes = np.column_stack([rng.permutation(base) for _ in range(k)])
    signs = np.where(rng.random((j, k)) < 0.5, -1.0, 1.0)
    signs[:, 0] = 1.0

    mask = np.zeros((j, k), dtype=bool)
    mask[:, 0] = True
    if k > 1:
        for row in range(j):
            n_extra = int(rng.integers(0, cfg.max_extra_loadings + 1))
            if n_extra > 0:
                extras = rng.choice(np.arange(1, k), size=n_extra, replace=False)
                mask[row, extras] = True
    for row in range(min(j, k)):
        mask[row, row + 1:] = False

    loadings = magnitudes * signs * mask
    intercepts = rng.uniform(cfg.intercept_range[0], cfg.intercept_range[1], size=j)
    return ItemBank(loadings=loadings, intercepts=intercepts)
