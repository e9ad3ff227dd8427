"""Experience replay for Q-learning item selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import StateSnapshot


@dataclass(frozen=True)
class Transition:
    state: StateSnapshot
    action: int
    reward: float
    next_state: StateSnapshot
    next_available: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer; oldest transitions are overwritten at capacity."""

    def __init__(self, capacity: int = 200_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if batch_size > len(self._items):
            raise ValueError("not enough transitions to sample")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]
