"""Joint discrete cwnd adjustments over M subflows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ActionSpace:
    """Each subflow picks ``delta`` in ``[-n, n]``; its cwnd moves by ``k * delta`` packets.

    Joint actions are indexed row-major with subflow 0 as the most
    significant digit in base ``2n + 1``.
    """

    n_subflows: int = 2
    n: int = 2
    k: int = 2

    def __post_init__(self):
        if self.n_subflows < 1 or self.n < 1 or self.k < 1:
            raise ValueError("n_subflows, n and k must all be >= 1")

    @property
    def base(self) -> int:
        return 2 * self.n + 1

    @property
    def size(self) -> int:
        return self.base ** self.n_subflows

    def index(self, deltas: Sequence[int]) -> int:
        if len(deltas) != self.n_subflows:
            raise ValueError(f"expected {self.n_subflows} deltas, got {len(deltas)}")
        idx = 0
        for d in deltas:
            if not -self.n <= d <= self.n:
                raise ValueError(f"delta {d} outside [-{self.n}, {self.n}]")
            idx = idx * self.base + (d + self.n)
        return idx

    def deltas(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise ValueError(f"action index {index} outside [0, {self.size})")
        out = []
        for _ in range(self.n_subflows):
            index, r = divmod(index, self.base)
            out.append(r - self.n)
        return tuple(reversed(out))

    def noop(self) -> int:
        return self.index([0] * self.n_subflows)

    def apply(self, targets: Sequence[int], index: int, cwnd_min: Sequence[int], cwnd_max: Sequence[int]) -> list[int]:
        """New per-subflow targets, clamped to each subflow's bounds."""
        return [
            int(min(max(t + self.k * d, lo), hi))
            for t, d, lo, hi in zip(targets, self.deltas(index), cwnd_min, cwnd_max)
        ]
