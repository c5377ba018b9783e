"""Token state spaces and exact probability tables.

A state is a length-``dims`` tuple of symbols from a vocabulary of size
``vocab_size``.  States are flattened lexicographically with position 0
most significant, so ``index = sum(x[i] * V**(dims-1-i))``.  In masked
mode the mask symbol is always the last vocabulary index.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ModeMismatchError, SpaceMismatchError

# Dense tables only; larger spaces are out of scope by design.
MAX_STATES = 10**6

SUM_TOL = 1e-12
NEG_TOL = -1e-12


class Mode(Enum):
    MASKED = "masked"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class StateSpace:
    """Finite product space of tokens with a fixed flattening order."""

    vocab_size: int
    dims: int
    mode: Mode

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.dims < 1:
            raise ValueError("dims must be at least 1")
        if self.vocab_size**self.dims > MAX_STATES:
            raise ValueError(
                f"state count {self.vocab_size}^{self.dims} exceeds cap {MAX_STATES}"
            )

    @property
    def n_states(self) -> int:
        return self.vocab_size**self.dims

    @property
    def mask_index(self) -> int:
        if self.mode is not Mode.MASKED:
            raise ModeMismatchError("mask_index is only defined in masked mode")
        return self.vocab_size - 1

    @property
    def all_mask_state(self) -> int:
        return self.flatten([self.mask_index] * self.dims)

    def flatten(self, state: Sequence[int]) -> int:
        if len(state) != self.dims:
            raise ValueError(f"state has {len(state)} positions, expected {self.dims}")
        idx = 0
        for s in state:
            if not 0 <= s < self.vocab_size:
                raise ValueError(f"symbol {s} outside vocabulary [0, {self.vocab_size})")
            idx = idx * self.vocab_size + s
        return idx

    def unflatten(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_states:
            raise ValueError(f"index {index} outside [0, {self.n_states})")
        out = []
        for _ in range(self.dims):
            out.append(index % self.vocab_size)
            index //= self.vocab_size
        return tuple(reversed(out))

    def states(self) -> Iterable[tuple[int, ...]]:
        for i in range(self.n_states):
            yield self.unflatten(i)

    @property
    def strides(self) -> np.ndarray:
        """Per-position weights of the flattening: index = digits @ strides."""
        return self.vocab_size ** np.arange(self.dims - 1, -1, -1, dtype=np.int64)


@lru_cache(maxsize=64)
def state_table(space: StateSpace) -> np.ndarray:
    """All states as a read-only (n_states, dims) digit array in index order."""
    n, d, v = space.n_states, space.dims, space.vocab_size
    idx = np.arange(n, dtype=np.int64)
    table = np.empty((n, d), dtype=np.int64)
    for pos in range(d - 1, -1, -1):
        table[:, pos] = idx % v
        idx //= v
    table.flags.writeable = False
    return table


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Exact probability vector over the flattened state space.

    The constructor normalizes (sum forced to 1) and rejects entries
    below -1e-12; smaller negative round-off is clipped to zero.
    """

    space: StateSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != (self.space.n_states,):
            raise ValueError(
                f"values have shape {vals.shape}, expected ({self.space.n_states},)"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("probabilities must be finite")
        if vals.min(initial=0.0) < NEG_TOL:
            raise ValueError(f"negative probability {vals.min()} below tolerance")
        np.clip(vals, 0.0, None, out=vals)
        total = vals.sum()
        if total <= 0.0:
            raise ValueError("probabilities sum to zero")
        if abs(total - 1.0) > SUM_TOL:
            vals /= total
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def point_mass(cls, space: StateSpace, index: int) -> "DiscreteDistribution":
        vals = np.zeros(space.n_states)
        vals[index] = 1.0
        return cls(space, vals)

    @classmethod
    def uniform(cls, space: StateSpace) -> "DiscreteDistribution":
        return cls(space, np.full(space.n_states, 1.0 / space.n_states))

    def prob(self, state: int | Sequence[int]) -> float:
        idx = state if isinstance(state, (int, np.integer)) else self.space.flatten(state)
        return float(self.values[idx])


def check_same_space(a: "DiscreteDistribution", b: "DiscreteDistribution") -> None:
    if a.space != b.space:
        raise SpaceMismatchError(f"spaces differ: {a.space} vs {b.space}")
