"""Intervention queries and their masked one-hot matrix encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class InterventionQuery:
    """A query ``do(V_t = v_i)``.

    ``value_index`` is 1-based and refers to the i-th entry of the corpus-level
    list of intervention values. ``targets`` is a binary selector over the d
    variables.
    """

    value_index: int
    targets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if any(t not in (0, 1) for t in self.targets):
            raise ValueError(f"targets must be binary, got {self.targets}")
        if self.value_index < 1:
            raise ValueError(f"value_index is 1-based, got {self.value_index}")

    @classmethod
    def single(cls, d: int, target: int, value_index: int = 1) -> "InterventionQuery":
        if not 0 <= target < d:
            raise ValueError(f"target {target} out of range for d={d}")
        t = [0] * d
        t[target] = 1
        return cls(value_index, tuple(t))

    @classmethod
    def from_bitmask(cls, value_index: int, bitmask: int, d: int) -> "InterventionQuery":
        return cls(value_index, tuple((bitmask >> j) & 1 for j in range(d)))

    @property
    def d(self) -> int:
        return len(self.targets)

    @property
    def target_indices(self) -> tuple[int, ...]:
        return tuple(j for j, t in enumerate(self.targets) if t)

    @property
    def bitmask(self) -> int:
        return sum(1 << j for j, t in enumerate(self.targets) if t)

    def permuted(self, perm) -> "InterventionQuery":
        """Query for data whose column ``j`` is the old column ``perm[j]``."""
        return InterventionQuery(self.value_index, tuple(self.targets[p] for p in perm))


def encode_intervention(q: InterventionQuery, num_values: int, d: int) -> np.ndarray:
    """Return the ``d x num_values`` matrix with row j one-hot at ``i - 1`` iff ``t_j = 1``."""
    if not 1 <= q.value_index <= num_values:
        raise ValueError(f"value_index {q.value_index} outside [1, {num_values}]")
    if len(q.targets) != d:
        raise ValueError(f"target vector has length {len(q.targets)}, expected {d}")
    rep = np.zeros((d, num_values))
    rep[:, q.value_index - 1] = q.targets
    return rep
