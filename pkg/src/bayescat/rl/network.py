"""Permutation-invariant Q-network with manual reverse-mode gradients.

Architecture: a shared tuple encoder phi1 applied to each posterior tuple
(C1 row, C2 entry, c3 entry) and summed into g1; a rowwise encoder mapping
each item's 11 prediction-quantile features to a scalar; a small encoder
phi2 over the resulting J-vector; a combiner merging the two branches; and a
classifier head rho emitting one action value per item.  All math is plain
numpy in float64, gradients are exact reverse-mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class NetworkError(ValueError):
    """Invalid network configuration or input shapes."""


@dataclass(frozen=True)
class NetworkConfig:
    num_factors: int
    num_items: int
    l1: int = 256                  # tuple-encoder width
    l2: int = 256                  # prediction-branch width
    combiner_width: int = 256
    seed: int = 0

    QUANTILE_COLUMNS = 11

    def __post_init__(self):
        if min(self.num_factors, self.num_items, self.l1, self.l2, self.combiner_width) < 1:
            raise NetworkError("all dimensions must be positive")

    @property
    def tuple_width(self) -> int:
        return self.num_factors + 2

    def to_dict(self) -> dict:
        return {
            "num_factors": self.num_factors,
            "num_items": self.num_items,
            "l1": self.l1,
            "l2": self.l2,
            "combiner_width": self.combiner_width,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        return cls(**{k: int(v) for k, v in doc.items()})


@dataclass(frozen=True)
class StateSnapshot:
    """Policy input: posterior tuples (T x (K+2)), prediction quantiles
    (J x 11), and the availability mask (False = administered)."""

    tuples: np.ndarray
    psi: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        t = np.array(self.tuples, dtype=np.float64)
        if t.ndim == 1:
            t = t.reshape(0, 0) if t.size == 0 else t.reshape(1, -1)
        p = np.array(self.psi, dtype=np.float64)
        a = np.array(self.available, dtype=bool)
        for arr in (t, p):
            arr.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "tuples", t)
        object.__setattr__(self, "psi", p)
        object.__setattr__(self, "available", a)
        if self.psi.ndim != 2 or self.psi.shape[1] != NetworkConfig.QUANTILE_COLUMNS:
            raise NetworkError("psi must be J x 11")
        if self.available.shape != (self.psi.shape[0],):
            raise NetworkError("available mask must have one entry per item")


# (name, fan_in attr, fan_out attr) per layer; weights live in a flat dict
_LAYER_SPECS = (
    ("phi1_0", "tuple_width", "l1"),
    ("phi1_1", "l1", "l1"),
    ("phi1_2", "l1", "l1"),
    ("row_0", "QUANTILE_COLUMNS", "l2"),
    ("row_1", "l2", "l2"),
    ("row_2", "l2", 1),
    ("phi2_0", "num_items", "l2"),
    ("phi2_1", "l2", "l2"),
    ("phi2_2", "l2", "l2"),
    ("comb_0", "l1+l2", "combiner_width"),
    ("rho_0", "combiner_width", "num_items"),
    ("rho_1", "num_items", "num_items"),
)


def _dim(cfg: NetworkConfig, expr) -> int:
    if isinstance(expr, int):
        return expr
    if expr == "l1+l2":
        return cfg.l1 + cfg.l2
    return int(getattr(cfg, expr))


def layer_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, int]]:
    return {name: (_dim(cfg, fi), _dim(cfg, fo)) for name, fi, fo in _LAYER_SPECS}


@dataclass
class QNetwork:
    config: NetworkConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "QNetwork":
        return QNetwork(self.config, {k: v.copy() for k, v in self.params.items()})


def init_network(cfg: NetworkConfig) -> QNetwork:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for name, (fan_in, fan_out) in layer_shapes(cfg).items():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}_w"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{name}_b"] = np.zeros(fan_out)
    return QNetwork(cfg, params)


def _affine(p: dict, name: str, x: np.ndarray) -> np.ndarray:
    return x @ p[f"{name}_w"] + p[f"{name}_b"]


def forward_batch(net: QNetwork, states: Sequence[StateSnapshot]):
    """Q-values (B x J) plus the cache needed for the backward pass."""
    cfg = net.config
    p = net.params
    b = len(states)
    if b == 0:
        raise NetworkError("empty batch")
    counts = np.array([s.tuples.shape[0] for s in states], dtype=np.intp)
    width = cfg.tuple_width
    rows = [s.tuples.reshape(-1, width) for s in states if s.tuples.shape[0]]
    x1 = np.vstack(rows) if rows else np.zeros((0, width))
    if x1.shape[0] and x1.shape[1] != width:
        raise NetworkError(f"tuples must have width {width}")

    z1a = _affine(p, "phi1_0", x1); h1a = np.maximum(z1a, 0.0)
    z1b = _affine(p, "phi1_1", h1a); h1b = np.maximum(z1b, 0.0)
    z1c = _affine(p, "phi1_2", h1b); h1c = np.maximum(z1c, 0.0)
    g1 = np.zeros((b, cfg.l1))
    ends = np.cumsum(counts)
    starts = ends - counts
    for i in range(b):
        if counts[i]:
            g1[i] = h1c[starts[i]:ends[i]].sum(axis=0)

    psi = np.stack([s.psi for s in states])                # B x J x 11
    if psi.shape[1] != cfg.num_items:
        raise NetworkError(f"psi must have {cfg.num_items} rows")
    r_in = psi.reshape(b * cfg.num_items, cfg.QUANTILE_COLUMNS)
    zr0 = _affine(p, "row_0", r_in); hr0 = np.maximum(zr0, 0.0)
    zr1 = _affine(p, "row_1", hr0); hr1 = np.maximum(zr1, 0.0)
    v = _affine(p, "row_2", hr1).reshape(b, cfg.num_items)

    zp0 = _affine(p, "phi2_0", v); hp0 = np.maximum(zp0, 0.0)
    zp1 = _affine(p, "phi2_1", hp0); hp1 = np.maximum(zp1, 0.0)
    g2 = _affine(p, "phi2_2", hp1)                         # linear output

    u = np.concatenate([g1, g2], axis=1)
    zc = _affine(p, "comb_0", u); hc = np.maximum(zc, 0.0)
    zq0 = _affine(p, "rho_0", hc); hq0 = np.maximum(zq0, 0.0)
    q = _affine(p, "rho_1", hq0)

    cache = {
        "counts": counts, "x1": x1, "z1a": z1a, "h1a": h1a, "z1b": z1b, "h1b": h1b,
        "z1c": z1c, "r_in": r_in, "zr0": zr0, "hr0": hr0, "zr1": zr1, "hr1": hr1,
        "v": v, "zp0": zp0, "hp0": hp0, "zp1": zp1, "hp1": hp1, "u": u, "zc": zc,
        "hc": hc, "zq0": zq0, "hq0": hq0,
    }
    return q, cache


def forward(net: QNetwork, state: StateSnapshot) -> np.ndarray:
    """Action values for one state; raw (unmasked) J-vector."""
    q, _ = forward_batch(net, [state])
    return q[0]


def act(net: QNetwork, state: StateSnapshot) -> int:
    """Masked argmax over available items, lowest index on exact ties."""
    if not np.any(state.available):
        raise NetworkError("no available actions")
    q = forward(net, state)
    masked = np.where(state.available, q, -np.inf)
    return int(np.argmax(masked))


def backward_batch(net: QNetwork, cache: dict, dq: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given dLoss/dQ."""
    cfg = net.config
    p = net.params
    grads: dict[str, np.ndarray] = {}
    b = dq.shape[0]

    grads["rho_1_w"] = cache["hq0"].T @ dq
    grads["rho_1_b"] = dq.sum(axis=0)
    d = dq @ p["rho_1_w"].T
    d *= cache["zq0"] > 0
    grads["rho_0_w"] = cache["hc"].T @ d
    grads["rho_0_b"] = d.sum(axis=0)
    d = d @ p["rho_0_w"].T
    d *= cache["zc"] > 0
    grads["comb_0_w"] = cache["u"].T @ d
    grads["comb_0_b"] = d.sum(axis=0)
    du = d @ p["comb_0_w"].T
    dg1 = du[:, : cfg.l1]
    dg2 = du[:, cfg.l1:]

    grads["phi2_2_w"] = cache["hp1"].T @ dg2
    grads["phi2_2_b"] = dg2.sum(axis=0)
    d = dg2 @ p["phi2_2_w"].T
    d *= cache["zp1"] > 0
    grads["phi2_1_w"] = cache["hp0"].T @ d
    grads["phi2_1_b"] = d.sum(axis=0)
    d = d @ p["phi2_1_w"].T
    d *= cache["zp0"] > 0
    grads["phi2_0_w"] = cache["v"].T @ d
    grads["phi2_0_b"] = d.sum(axis=0)
    dv = d @ p["phi2_0_w"].T                               # B x J

    dr = dv.reshape(b * cfg.num_items, 1)
    grads["row_2_w"] = cache["hr1"].T @ dr
    grads["row_2_b"] = dr.sum(axis=0)
    d = dr @ p["row_2_w"].T
    d *= cache["zr1"] > 0
    grads["row_1_w"] = cache["hr0"].T @ d
    grads["row_1_b"] = d.sum(axis=0)
    d = d @ p["row_1_w"].T
    d *= cache["zr0"] > 0
    grads["row_0_w"] = cache["r_in"].T @ d
    grads["row_0_b"] = d.sum(axis=0)

    dh1c = np.repeat(dg1, cache["counts"], axis=0)
    dh1c = dh1c * (cache["z1c"] > 0)
    grads["phi1_2_w"] = cache["h1b"].T @ dh1c
    grads["phi1_2_b"] = dh1c.sum(axis=0)
    d = dh1c @ p["phi1_2_w"].T
    d *= cache["z1b"] > 0
    grads["phi1_1_w"] = cache["h1a"].T @ d
    grads["phi1_1_b"] = d.sum(axis=0)
    d = d @ p["phi1_1_w"].T
    d *= cache["z1a"] > 0
    grads["phi1_0_w"] = cache["x1"].T @ d
    grads["phi1_0_b"] = d.sum(axis=0)
    return grads


def td_loss_and_grads(net: QNetwork, states: Sequence[StateSnapshot],
                      actions: np.ndarray, targets: np.ndarray):
    """Mean squared TD loss over taken actions, with exact gradients."""
    if len(states) == 0:
        raise NetworkError("empty batch")
    q, cache = forward_batch(net, states)
    b = len(states)
    taken = q[np.arange(b), actions]
    err = taken - targets
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite TD loss; training diverged")
    dq = np.zeros_like(q)
    dq[np.arange(b), actions] = 2.0 * err / b
    grads = backward_batch(net, cache, dq)
    return loss, grads


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 10.0) -> float:
    """Scale gradients in place to a global norm cap; returns the norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def apply(self, net: QNetwork, grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        b1c = 1.0 - self.beta1 ** self.step
        b2c = 1.0 - self.beta2 ** self.step
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            net.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def save_checkpoint_dict(net: QNetwork, episode: int, mean_reward: float) -> dict:
    return {
        "version": 1,
        "config": net.config.to_dict(),
        "weights": {k: v.ravel().tolist() for k, v in net.params.items()},
        "episode": int(episode),
        "mean_reward": float(mean_reward),
    }


def load_checkpoint_dict(doc: dict) -> tuple[QNetwork, dict]:
    if int(doc.get("version", -1)) != 1:
        raise NetworkError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = NetworkConfig.from_dict(doc["config"])
    shapes = layer_shapes(cfg)
    params = {}
    for name, (fan_in, fan_out) in shapes.items():
        w = np.asarray(doc["weights"][f"{name}_w"], dtype=np.float64)
        b = np.asarray(doc["weights"][f"{name}_b"], dtype=np.float64)
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise NetworkError(f"weight size mismatch for layer {name}")
        params[f"{name}_w"] = w.reshape(fan_in, fan_out)
        params[f"{name}_b"] = b
    net = QNetwork(cfg, params)
    meta = {"episode": int(doc["episode"]), "mean_reward": float(doc["mean_reward"])}
    return net, meta
