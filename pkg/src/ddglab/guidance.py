"""Guidance mechanisms: tilted distributions, guided generators, schedules.

Three mechanisms are provided.  "Unlocking" exponentiates the score
ratios directly, which rescales every column's total jump rate by the
tilt normalizer.  "Normalized" rescales each single-position jump group
so the total jump rate matches the unguided reverse process; in masked
mode this is identical to interpolating the conditional logits.
"Simple" geometrically interpolates one-step transition kernels instead
of rates.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import counters as ct
from .counters import WarningCounters
from .core import PROB_FLOOR, RateMatrix, conditional_given_unmasked
from .errors import (
    DegenerateColumnError,
    DegenerateTiltError,
    ModeMismatchError,
)
from .schedules import NoiseSchedule, unmask_prefactor
from .space import DiscreteDistribution, Mode, StateSpace, check_same_space, state_table

# ---------------------------------------------------------------------------
# tilted distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TiltedDistribution:
    """Normalized geometric interpolation p^w q^(1-w) with its normalizer."""

    values: DiscreteDistribution
    z_w: float


def zero_aware_pow(values: np.ndarray, exponent: float) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise powers with 0^e resolved by convention.

    0^0 = 1 and 0^e = 0 for e > 0; a zero base with negative exponent is
    excluded from the support (returned mask) rather than made infinite.
    """
    values = np.asarray(values, dtype=np.float64)
    zero = values == 0.0
    excluded = zero if exponent < 0.0 else np.zeros_like(zero)
    safe = np.where(zero, 1.0, values)
    out = safe**exponent
    out = np.where(zero, 1.0 if exponent == 0.0 else 0.0, out)
    return out, excluded


def tilt_weights(p: np.ndarray, q: np.ndarray, w: float) -> np.ndarray:
    """Unnormalized tilt p^w q^(1-w) with excluded states contributing zero."""
    if w == 1.0:
        return np.array(p, dtype=np.float64)
    if w == 0.0:
        return np.array(q, dtype=np.float64)
    pw, excl_p = zero_aware_pow(p, w)
    qw, excl_q = zero_aware_pow(q, 1.0 - w)
    out = pw * qw
    out[excl_p | excl_q] = 0.0
    return out


def tilt(p: DiscreteDistribution, q: DiscreteDistribution, w: float) -> TiltedDistribution:
    """Tilted distribution p^(w) and its partition value Z_w."""
    check_same_space(p, q)
    weights = tilt_weights(p.values, q.values, w)
    z_w = float(weights.sum())
    if z_w < 1e-300:
        raise DegenerateTiltError(f"tilt normalizer underflowed at w={w}")
    return TiltedDistribution(DiscreteDistribution(p.space, weights), z_w)


# ---------------------------------------------------------------------------
# guided generators
# ---------------------------------------------------------------------------


def _unlocking_offdiag(
    p_t: DiscreteDistribution,
    q_t: DiscreteDistribution,
    base: RateMatrix,
    w: float,
    sigma_t: float,
    warnings: WarningCounters | None,
) -> np.ndarray:
    """Off-diagonal part of the unlocking generator; diagonal left at zero."""
    p, q = p_t.values, q_t.values
    pw, excl_p = zero_aware_pow(p, w)
    qw, excl_q = zero_aware_pow(q, 1.0 - w)
    num = pw * qw
    num[excl_p | excl_q] = 0.0
    if np.any(excl_p | excl_q) and warnings is not None:
        warnings.bump(ct.EXCLUDED_STATE, int(np.count_nonzero(excl_p | excl_q)))
    ok = (p > PROB_FLOOR) & (q > PROB_FLOOR) & (num > PROB_FLOOR)
    if not np.all(ok) and warnings is not None:
        warnings.bump(ct.ZERO_COLUMN, int(np.count_nonzero(~ok)))
    denom = np.where(ok, num, 1.0)
    rates = sigma_t * base.entries.T * num[:, None] / denom[None, :]
    rates[:, ~ok] = 0.0
    np.fill_diagonal(rates, 0.0)
    np.clip(rates, 0.0, None, out=rates)
    return rates


def _finish(space: StateSpace, offdiag: np.ndarray) -> RateMatrix:
    np.fill_diagonal(offdiag, -offdiag.sum(axis=0))
    return RateMatrix(space, offdiag)


def guided_rate_unlocking(
    p_t: DiscreteDistribution,
    q_t: DiscreteDistribution,
    base: RateMatrix,
    w: float,
    sigma_t: float,
    warnings: WarningCounters | None = None,
) -> RateMatrix:
    """Reverse generator with exponentiated score ratios.

    rate(y <- x) = sigma_t B(x, y) (p_t(y)/p_t(x))^w (q_t(y)/q_t(x))^(1-w).
    At w = 1 this is exactly the time reversal of the forward chain.
    """
    check_same_space(p_t, q_t)
    off = _unlocking_offdiag(p_t, q_t, base, w, sigma_t, warnings)
    return _finish(p_t.space, off)


def reachable_from(base: RateMatrix, x: int) -> np.ndarray:
    """Destination states of one reverse jump out of x (forward jumps into x)."""
    dests = np.flatnonzero(base.entries[x, :] > 0.0)
    return dests[dests != x]


def column_normalization_factor(
    p_t: DiscreteDistribution,
    q_t: DiscreteDistribution,
    w: float,
    x: int,
    base: RateMatrix,
) -> float:
    """Rescaling that restores the unguided total jump rate of column x.

    (sum_i p_t(i))^w (sum_i q_t(i))^(1-w) / sum_i p_t(i)^w q_t(i)^(1-w)
    over the states i reachable from x in one reverse jump.
    """
    check_same_space(p_t, q_t)
    dests = reachable_from(base, x)
    if dests.size == 0:
        raise DegenerateColumnError(f"state {x} has no reachable destinations")
    return _group_factor(p_t.values[dests], q_t.values[dests], w)


def _group_factor(p: np.ndarray, q: np.ndarray, w: float) -> float:
    sp, sq = p.sum(), q.sum()
    denom = float(tilt_weights(p, q, w).sum())
    if sp <= 0.0 or sq <= 0.0 or denom <= 0.0:
        raise DegenerateColumnError("normalization sums vanish on the reachable set")
    return float(sp**w * sq ** (1.0 - w) / denom)


def _jump_position(space: StateSpace, x: int, y: int) -> int:
    digits = state_table(space)
    diff = np.flatnonzero(digits[x] != digits[y])
    if diff.size != 1:
        raise ValueError(f"states {x} and {y} are not a single-position jump")
    return int(diff[0])


def guided_rate_normalized(
    p_t: DiscreteDistribution,
    q_t: DiscreteDistribution,
    base: RateMatrix,
    w: float,
    sigma_t: float,
    warnings: WarningCounters | None = None,
) -> RateMatrix:
    """Unlocking generator with per-jump-group column normalization.

    Each column's destinations are grouped by the position the jump
    changes; every group is rescaled by its normalization factor so the
    group's total rate matches the unguided reverse process.  Groups whose
    interpolated rates vanish entirely are zeroed and flagged.
    """
    check_same_space(p_t, q_t)
    space = p_t.space
    off = _unlocking_offdiag(p_t, q_t, base, w, sigma_t, warnings)
    digits = state_table(space)
    for x in range(space.n_states):
        dests = reachable_from(base, x)
        if dests.size == 0 or not off[:, x].any():
            continue
        changed = np.array([_jump_position_fast(digits, x, y) for y in dests])
        for pos in np.unique(changed):
            group = dests[changed == pos]
            try:
                factor = _group_factor(p_t.values[group], q_t.values[group], w)
            except DegenerateColumnError:
                off[group, x] = 0.0
                if warnings is not None:
                    warnings.bump(ct.ZERO_COLUMN)
                continue
            off[group, x] *= factor
    return _finish(space, off)


def _jump_position_fast(digits: np.ndarray, x: int, y: int) -> int:
    row_x, row_y = digits[x], digits[y]
    return int(np.flatnonzero(row_x != row_y)[0])


def guided_rate_normalized_softmax(
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    sched: NoiseSchedule,
    t: float,
    w: float,
) -> RateMatrix:
    """Masked-mode normalized generator built by interpolating logits.

    Independent construction path: for every masked position the unmask
    rates are sigma_t e^{-sb}/(1-e^{-sb}) times
    softmax(w log p0(. | unmasked) + (1-w) log q0(. | unmasked)).
    Must agree entrywise with guided_rate_normalized.
    """
    space = p0.space
    if space.mode is not Mode.MASKED:
        raise ModeMismatchError("the softmax construction requires masked mode")
    check_same_space(p0, q0)
    scale = sched.sigma(t) * unmask_prefactor(sched, t)
    digits = state_table(space)
    m = space.mask_index
    n = space.n_states
    rates = np.zeros((n, n))
    for x in range(n):
        masked_pos = np.flatnonzero(digits[x] == m)
        for pos in masked_pos:
            cp = conditional_given_unmasked(p0, x, int(pos))
            cq = conditional_given_unmasked(q0, x, int(pos))
            weights = tilt_weights(cp, cq, w)
            total = weights.sum()
            if total <= 0.0:
                raise DegenerateColumnError(
                    f"interpolated conditional vanished at state {x}, position {pos}"
                )
            tilted = weights / total
            y = digits[x].copy()
            for a in range(space.vocab_size - 1):
                y[pos] = a
                rates[int(y @ space.strides), x] = scale * tilted[a]
            y[pos] = m
    np.fill_diagonal(rates, -rates.sum(axis=0))
    return RateMatrix(space, rates)


def simple_guidance_transition(k_p: np.ndarray, k_q: np.ndarray, w: float) -> np.ndarray:
    """Per-column geometric interpolation of two column-stochastic kernels.

    Each column becomes k_p^w * k_q^(1-w) renormalized to sum one; the
    per-column normalizer plays the role of Z_simple.
    """
    k_p = np.asarray(k_p, dtype=np.float64)
    k_q = np.asarray(k_q, dtype=np.float64)
    if k_p.shape != k_q.shape or k_p.ndim != 2:
        raise ValueError("kernels must share a 2D shape")
    out = tilt_weights(k_p, k_q, w)
    sums = out.sum(axis=0)
    dead = sums <= 0.0
    if np.any(dead):
        raise DegenerateColumnError(
            f"columns {np.flatnonzero(dead).tolist()} interpolated to zero"
        )
    return out / sums


# ---------------------------------------------------------------------------
# two-token tilt tables and combined distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TiltTables2D:
    """Joint tilt over two tokens with its marginals and conditionals.

    Arrays are (V, V) / (V,) over the full vocabulary; mask entries are
    zero.  Conditionals are zero where the conditioning marginal is zero.
    """

    joint: np.ndarray
    marg_first: np.ndarray
    marg_second: np.ndarray
    cond_second_given_first: np.ndarray  # [j, i] = P(X2 = j | X1 = i)
    cond_first_given_second: np.ndarray  # [i, j] = P(X1 = i | X2 = j)


def tilt_tables_2d(
    p: DiscreteDistribution, q: DiscreteDistribution, w: float
) -> TiltTables2D:
    space = p.space
    if space.dims != 2:
        raise ValueError("two-token tables require dims = 2")
    v = space.vocab_size
    joint = tilt(p, q, w).values.values.reshape(v, v)
    marg1 = joint.sum(axis=1)
    marg2 = joint.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond21 = np.where(marg1[None, :] > 0.0, joint.T / marg1[None, :], 0.0)
        cond12 = np.where(marg2[None, :] > 0.0, joint / marg2[None, :], 0.0)
    return TiltTables2D(joint, marg1, marg2, cond21, cond12)


def combined_distribution(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    w: float,
    gamma: float,
) -> np.ndarray:
    """Cross-term table mixing conditionals at strength w with marginals at gamma.

    table(i, j) = p^(w)(i, j | X1 = i) p^(gamma)(X1 = i)
                + p^(w)(i, j | X2 = j) p^(gamma)(X2 = j).
    Not a probability distribution: each term telescopes to one, so the
    total mass is exactly 2.  Returned as a raw (V, V) array.
    """
    check_same_space(p, q)
    tw = tilt_tables_2d(p, q, w)
    tg = tilt_tables_2d(p, q, gamma)
    # cond[j, i] * marg[i] summed as (i, j) tables
    term1 = tw.cond_second_given_first.T * tg.marg_first[:, None]
    term2 = tw.cond_first_given_second * tg.marg_second[None, :]
    return term1 + term2


# ---------------------------------------------------------------------------
# guidance schedules (generation-progress coordinate u in [0, 1])
# ---------------------------------------------------------------------------


class GuidanceSchedule:
    """Guidance strength as a function of generation progress."""

    def eval(self, u: float) -> float:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(GuidanceSchedule):
    w: float

    def eval(self, u: float) -> float:
        _check_progress(u)
        return self.w

    def describe(self) -> str:
        return f"const:{self.w:g}"


@dataclass(frozen=True)
class PiecewiseConstant(GuidanceSchedule):
    breakpoints: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        b = self.breakpoints
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.weights) != len(b) - 1:
            raise ValueError("need one weight per segment")

    def eval(self, u: float) -> float:
        _check_progress(u)
        i = int(np.searchsorted(self.breakpoints, u, side="right")) - 1
        return self.weights[min(max(i, 0), len(self.weights) - 1)]

    def describe(self) -> str:
        inner = ",".join(f"{b:g}" for b in self.breakpoints[1:-1])
        ws = ",".join(f"{w:g}" for w in self.weights)
        return f"piecewise:{inner};{ws}"


@dataclass(frozen=True)
class LeftInterval(GuidanceSchedule):
    w: float
    r: float

    def eval(self, u: float) -> float:
        _check_progress(u)
        return self.w if u <= self.r else 0.0

    def describe(self) -> str:
        return f"left:{self.w:g},{self.r:g}"


@dataclass(frozen=True)
class RightInterval(GuidanceSchedule):
    w: float
    l: float

    def eval(self, u: float) -> float:
        _check_progress(u)
        return self.w if u >= self.l else 0.0

    def describe(self) -> str:
        return f"right:{self.w:g},{self.l:g}"


@dataclass(frozen=True)
class RampUp(GuidanceSchedule):
    w: float
    r: float

    def eval(self, u: float) -> float:
        _check_progress(u)
        return min(self.w, self.w * u / self.r)

    def describe(self) -> str:
        return f"rampup:{self.w:g},{self.r:g}"


@dataclass(frozen=True)
class RampDown(GuidanceSchedule):
    w: float
    l: float

    def eval(self, u: float) -> float:
        _check_progress(u)
        return min(self.w, self.w * (1.0 - u) / (1.0 - self.l))

    def describe(self) -> str:
        return f"rampdown:{self.w:g},{self.l:g}"


def _check_progress(u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"progress {u} outside [0, 1]")


def schedule_eval(schedule: GuidanceSchedule, u: float) -> float:
    return schedule.eval(u)


def progress_from_time(t: float, horizon: float) -> float:
    """Generation progress: u = 0 at the fully-masked start t = T, u = 1 at t = 0."""
    return 1.0 - t / horizon


def time_from_progress(u: float, horizon: float) -> float:
    return horizon * (1.0 - u)
