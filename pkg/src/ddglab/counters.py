"""Warning counters shared by numerically guarded operations.

Operations never fail on recoverable numerical events (mass drift,
clipped Euler steps, unreachable states); they repair the value and
record the event here so callers can inspect or threshold them.
"""

from collections import Counter


# canonical counter keys
MASS_RENORMALIZED = "mass_renormalized"
ZERO_COLUMN = "zero_probability_column"
EXCLUDED_STATE = "excluded_state"
EULER_CLIP = "euler_clip"
KL_SUPPORT = "kl_support_violation"


class WarningCounters:
    """Mutable tally of recoverable numerical events."""

    def __init__(self) -> None:
        self._counts: Counter[str] = Counter()

    def bump(self, key: str, n: int = 1) -> None:
        self._counts[key] += n

    def get(self, key: str) -> int:
        return self._counts[key]

    def total(self) -> int:
        return sum(self._counts.values())

    def merge(self, other: "WarningCounters") -> None:
        self._counts.update(other._counts)

    def as_dict(self) -> dict[str, int]:
        return dict(self._counts)

    def __repr__(self) -> str:
        return f"WarningCounters({dict(self._counts)!r})"
