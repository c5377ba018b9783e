"""Noise schedules: the token corruption rate and its running integral.

A schedule provides sigma(t) and sigma_bar(t) = integral of sigma over
[0, t] on the horizon [0, T].  ``masked_fraction(t) = 1 - exp(-sigma_bar(t))``
is the probability that a single token has been absorbed by time t in
masked mode; it is kept as a dedicated method because the log-linear
schedule admits the exact closed form ``delta * t`` that the analytic
evaluators rely on.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

from .errors import ScheduleDomainError

_TIME_SLACK = 1e-12


class NoiseSchedule(ABC):
    horizon: float

    @abstractmethod
    def sigma(self, t: float) -> float: ...

    @abstractmethod
    def sigma_bar(self, t: float) -> float: ...

    def masked_fraction(self, t: float) -> float:
        """1 - exp(-sigma_bar(t)), the single-token absorption probability."""
        return -math.expm1(-self.sigma_bar(t))

    @abstractmethod
    def time_from_masked_fraction(self, f: float) -> float:
        """Inverse of masked_fraction on [0, horizon]."""

    def check_time(self, t: float) -> None:
        if not -_TIME_SLACK <= t <= self.horizon + _TIME_SLACK:
            raise ScheduleDomainError(
                f"time {t} outside schedule domain [0, {self.horizon}]"
            )


@dataclass(frozen=True)
class LogLinear(NoiseSchedule):
    """sigma_bar(t) = -log(1 - delta t); defined for t < 1/delta."""

    delta: float
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.horizon <= 0.0 or self.horizon >= 1.0 / self.delta:
            raise ValueError("horizon must satisfy 0 < T < 1/delta")

    def sigma(self, t: float) -> float:
        self.check_time(t)
        return self.delta / (1.0 - self.delta * t)

    def sigma_bar(self, t: float) -> float:
        self.check_time(t)
        return -math.log1p(-self.delta * t)

    def masked_fraction(self, t: float) -> float:
        self.check_time(t)
        return self.delta * t

    def time_from_masked_fraction(self, f: float) -> float:
        return f / self.delta


@dataclass(frozen=True)
class ConstantRate(NoiseSchedule):
    """Constant sigma; sigma_bar(t) = sigma * t."""

    sigma_value: float
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma_value <= 0.0:
            raise ValueError("sigma must be positive")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    def sigma(self, t: float) -> float:
        self.check_time(t)
        return self.sigma_value

    def sigma_bar(self, t: float) -> float:
        self.check_time(t)
        return self.sigma_value * t

    def time_from_masked_fraction(self, f: float) -> float:
        return -math.log1p(-f) / self.sigma_value


def unmask_prefactor(sched: NoiseSchedule, t: float) -> float:
    """exp(-sigma_bar(t)) / (1 - exp(-sigma_bar(t))), the reverse-rate scale."""
    frac = sched.masked_fraction(t)
    if frac <= 0.0:
        raise ScheduleDomainError("unmask prefactor diverges at sigma_bar = 0")
    return (1.0 - frac) / frac
