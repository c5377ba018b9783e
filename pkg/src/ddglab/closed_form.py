"""Analytic evaluators for the guided reverse dynamics on one and two tokens.

These are the oracles the Monte-Carlo samplers and raw matrix
exponentials are validated against.  All of them rest on the same
structure: under masked diffusion the guided generator factorizes into a
scalar unmasking intensity times a constant jump matrix, so the mask
mass obeys a scalar recursion and the unmasked mass lands on tilted
distributions.

For the unlocking mechanism the tilt normalizer Z_w enters the mask-mass
recursion as an exponent; the normalized mechanism removes it.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, QuadratureError, ScheduleDomainError
from .guidance import tilt, tilt_tables_2d, combined_distribution
from .schedules import LogLinear, NoiseSchedule, unmask_prefactor
from .space import DiscreteDistribution, Mode, StateSpace, check_same_space

LOG_LINEAR_TIME_FLOOR = 1e-4
QUAD_MAX_EVALS = 10**6
_QUAD_MAX_DEPTH = 48


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PiecewiseResult:
    """Distribution from a piecewise-constant guidance run.

    ``per_segment_weights[i]`` is the probability mass unmasked during
    segment i and assigned to that segment's tilted distribution; together
    with the residual mask mass the weights sum to one.
    """

    distribution: DiscreteDistribution
    mask_mass_trace: tuple[tuple[float, float], ...]
    per_segment_weights: tuple[float, ...]


@dataclass(frozen=True)
class ThreePieceCoefficients:
    """Mixture coefficients of the three-piece two-token closed form."""

    early: float  # tilt at w0
    mid: float  # tilt at w1
    late: float  # tilt at w2
    mid_late: float  # combined (w1, w2)
    early_late: float  # combined (w0, w2)
    early_mid: float  # combined (w0, w1)

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.early,
            self.mid,
            self.late,
            self.mid_late,
            self.early_late,
            self.early_mid,
        )


@dataclass(frozen=True, eq=False)
class UnmaskingCurve:
    times: np.ndarray
    zw_values: tuple[float, ...]
    masses: np.ndarray  # shape (len(zw_values), len(times))


# ---------------------------------------------------------------------------
# shared validation
# ---------------------------------------------------------------------------


def _require_masked_1d(space: StateSpace) -> None:
    if space.mode is not Mode.MASKED or space.dims != 1:
        raise ValueError("one-token closed forms require a masked 1D space")


def _require_masked_2d(space: StateSpace) -> None:
    if space.mode is not Mode.MASKED or space.dims != 2:
        raise ValueError("two-token closed forms require a masked 2D space")


# ---------------------------------------------------------------------------
# piecewise-constant guidance, one token
# ---------------------------------------------------------------------------


def piecewise_mixture_1d(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    partition: Sequence[float],
    weights: Sequence[float],
    sched: NoiseSchedule,
    normalized: bool,
) -> PiecewiseResult:
    """Exact sampled distribution for piecewise-constant guidance from all-mask.

    On segment (t_i, t_{i+1}] with strength w_i, the mask mass contracts by
    the factor (mf(t_i)/mf(t_{i+1}))**e with mf(t) = 1 - exp(-sigma_bar(t))
    and e = Z_{w_i} for the unlocking mechanism, e = 1 for the normalized
    one; the released mass lands on the tilt p^(w_i).
    """
    space = p.space
    _require_masked_1d(space)
    check_same_space(p, q)
    times = np.asarray(partition, dtype=np.float64)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("partition needs at least two times")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("partition must be strictly increasing")
    if len(weights) != times.size - 1:
        raise ValueError("need one weight per segment")
    if isinstance(sched, LogLinear) and times[0] <= 0.0:
        raise ScheduleDomainError("delta must be positive under the log-linear schedule")
    sched.check_time(float(times[0]))
    sched.check_time(float(times[-1]))

    mask = space.mask_index
    vals = np.zeros(space.n_states)
    mass = 1.0
    trace = [(float(times[-1]), 1.0)]
    seg_weights: list[float] = []
    for i in range(times.size - 2, -1, -1):
        tilted = tilt(p, q, weights[i])
        ratio = sched.masked_fraction(float(times[i])) / sched.masked_fraction(
            float(times[i + 1])
        )
        exponent = 1.0 if normalized else tilted.z_w
        mass_next = mass * ratio**exponent
        released = mass - mass_next
        vals += released * tilted.values.values
        seg_weights.append(released)
        trace.append((float(times[i]), mass_next))
        mass = mass_next
    vals[mask] = mass
    return PiecewiseResult(
        DiscreteDistribution(space, vals),
        tuple(reversed(trace)),
        tuple(reversed(seg_weights)),
    )


def piecewise_unlocking_1d(p, q, partition, weights, sched) -> PiecewiseResult:
    """Piecewise closed form for the unlocking mechanism (Z_w in the exponent)."""
    return piecewise_mixture_1d(p, q, partition, weights, sched, normalized=False)


def piecewise_normalized_1d(p, q, partition, weights, sched) -> PiecewiseResult:
    """Piecewise closed form for the normalized mechanism (exponent one)."""
    return piecewise_mixture_1d(p, q, partition, weights, sched, normalized=True)


def resolve_residual_mask(
    result: PiecewiseResult, p: DiscreteDistribution, q: DiscreteDistribution, w_end: float
) -> DiscreteDistribution:
    """Move the residual mask mass onto the tilt at the terminal strength.

    Matches a sampler that forces one exact tilted draw for every token
    still masked when the grid ends.
    """
    space = result.distribution.space
    vals = result.distribution.values.copy()
    residual = vals[space.mask_index]
    vals[space.mask_index] = 0.0
    vals += residual * tilt(p, q, w_end).values.values
    return DiscreteDistribution(space, vals)


def constant_step_1d(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    w: float,
    sched: NoiseSchedule,
    t: float,
    s: float,
    p_t: DiscreteDistribution,
) -> DiscreteDistribution:
    """One constant-strength unlocking step from time t down to s < t."""
    space = p_t.space
    _require_masked_1d(space)
    check_same_space(p, q)
    if not 0.0 < s < t:
        raise ValueError("need 0 < s < t")
    sched.check_time(t)
    tilted = tilt(p, q, w)
    ratio = sched.masked_fraction(s) / sched.masked_fraction(t)
    mask = space.mask_index
    mass_t = p_t.values[mask]
    mass_s = mass_t * ratio**tilted.z_w
    vals = p_t.values + (mass_t - mass_s) * tilted.values.values
    vals[mask] = mass_s
    return DiscreteDistribution(space, vals)


# ---------------------------------------------------------------------------
# arbitrary schedules, one token (adaptive quadrature)
# ---------------------------------------------------------------------------


class _EvalBudget:
    def __init__(self, limit: int):
        self.remaining = limit

    def spend(self, n: int = 1) -> None:
        self.remaining -= n
        if self.remaining < 0:
            raise QuadratureError(
                f"quadrature exceeded {QUAD_MAX_EVALS} integrand evaluations"
            )


def _adaptive_simpson(
    f: Callable[[float], np.ndarray],
    a: float,
    b: float,
    tol: float,
    budget: _EvalBudget,
) -> np.ndarray:
    fa, fm, fb = f(a), f((a + b) / 2.0), f(b)
    budget.spend(3)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, budget, 0)


# Below this absolute error the Richardson correction is double-precision
# noise; refining further cannot improve the estimate.
_QUAD_NOISE_FLOOR = 1e-15


def _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, budget, depth) -> np.ndarray:
    m = (a + b) / 2.0
    lm, rm = (a + m) / 2.0, (m + b) / 2.0
    flm, frm = f(lm), f(rm)
    budget.spend(2)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = np.max(np.abs(left + right - whole))
    if err <= max(15.0 * tol, _QUAD_NOISE_FLOOR) or depth >= _QUAD_MAX_DEPTH:
        if depth >= _QUAD_MAX_DEPTH and err > max(15.0 * tol, _QUAD_NOISE_FLOOR):
            raise QuadratureError(f"quadrature stalled at depth {depth} (err={err})")
        return left + right + (left + right - whole) / 15.0
    half = tol / 2.0
    return _simpson_recurse(
        f, a, m, fa, flm, fm, left, half, budget, depth + 1
    ) + _simpson_recurse(f, m, b, fm, frm, fb, right, half, budget, depth + 1)


# Integrating in x = log(masked_fraction(s)) removes the 1/s endpoint
# singularity of the unmask intensity: g(s) ds = Z_{w(s)} dx exactly, so
# every integrand below is bounded wherever the schedule is.
_LOG_RANGE_CAP = 400.0


def schedule_mixture_1d(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    w_of_t: Callable[[float], float],
    sched: NoiseSchedule,
    t: float,
    quad_tol: float = 1e-8,
    p_top: DiscreteDistribution | None = None,
    breakpoints: Sequence[float] | None = None,
) -> DiscreteDistribution:
    """Distribution at time t under an arbitrary guidance schedule (unlocking).

    The result is a weighted average of tilted distributions: with
    intensity g(s) = sigma_s e^{-sb_s}/(1-e^{-sb_s}) Z_{w(s)}, each time s
    contributes mass g(s) exp(-int_s^T g) on the tilt at strength w(s).
    Evaluated by adaptive Simpson quadrature with absolute tolerance
    ``quad_tol`` per component, after substituting x = log mf(s).
    ``breakpoints`` are optional interior discontinuity hints for
    staircase schedules.
    """
    space = p.space
    _require_masked_1d(space)
    check_same_space(p, q)
    horizon = sched.horizon
    if isinstance(sched, LogLinear) and t < LOG_LINEAR_TIME_FLOOR:
        raise ScheduleDomainError(
            f"t={t} below the log-linear quadrature floor {LOG_LINEAR_TIME_FLOOR}"
        )
    if not 0.0 <= t < horizon:
        raise ValueError(f"need 0 <= t < horizon={horizon}")
    if p_top is None:
        p_top = DiscreteDistribution.point_mass(space, space.mask_index)

    tilt_cache: dict[float, tuple[float, np.ndarray]] = {}

    def tilted_at(w: float) -> tuple[float, np.ndarray]:
        got = tilt_cache.get(w)
        if got is None:
            tl = tilt(p, q, w)
            got = (tl.z_w, tl.values.values)
            tilt_cache[w] = got
        return got

    def time_at(x: float) -> float:
        s = sched.time_from_masked_fraction(math.exp(x))
        return min(max(s, 0.0), horizon)

    x_top = math.log(sched.masked_fraction(horizon))
    mf_t = sched.masked_fraction(t)
    x_bot = math.log(mf_t) if mf_t > 0.0 else -math.inf
    truncated = x_bot < x_top - _LOG_RANGE_CAP
    x_bot = max(x_bot, x_top - _LOG_RANGE_CAP)

    edges = [x_bot, x_top]
    if breakpoints is not None:
        for b in breakpoints:
            mf_b = sched.masked_fraction(float(b)) if 0.0 < b < horizon else 0.0
            if mf_b > 0.0:
                xb = math.log(mf_b)
                if x_bot < xb < x_top:
                    edges.append(xb)
    edges = sorted(set(edges))
    n_pieces = len(edges) - 1

    budget = _EvalBudget(QUAD_MAX_EVALS)

    def z_vec(x: float) -> np.ndarray:
        z_w, _ = tilted_at(w_of_t(time_at(x)))
        return np.array([z_w])

    # evaluation points are inset a hair inside each piece so the
    # x -> time -> schedule-branch roundtrip never straddles a breakpoint
    def inset(f, lo: float, hi: float):
        pad = 1e-9 * (hi - lo)
        a, b = lo + pad, hi - pad
        return lambda x: f(min(max(x, a), b))

    piece_tol = max(quad_tol, 1e-14) / max(n_pieces, 1)
    inner_tol = max(quad_tol, 1e-14) * 0.1
    piece_integrals = [
        float(
            _adaptive_simpson(
                inset(z_vec, edges[j], edges[j + 1]),
                edges[j],
                edges[j + 1],
                inner_tol / max(n_pieces, 1),
                budget,
            )[0]
        )
        for j in range(n_pieces)
    ]
    suffix = np.concatenate([np.cumsum(piece_integrals[::-1])[::-1], [0.0]])

    def exponent_to_top(x: float) -> float:
        j = int(np.searchsorted(edges, x, side="right")) - 1
        j = min(max(j, 0), n_pieces - 1)
        partial = float(
            _adaptive_simpson(
                inset(z_vec, edges[j], edges[j + 1]), x, edges[j + 1], inner_tol, budget
            )[0]
        )
        return partial + float(suffix[j + 1])

    def integrand(x: float) -> np.ndarray:
        z_w, tilt_vals = tilted_at(w_of_t(time_at(x)))
        return z_w * math.exp(-exponent_to_top(x)) * tilt_vals

    added = np.zeros(space.n_states)
    for j in range(n_pieces):
        added += _adaptive_simpson(
            inset(integrand, edges[j], edges[j + 1]), edges[j], edges[j + 1], piece_tol, budget
        )

    mask = space.mask_index
    mass_top = p_top.values[mask]
    vals = p_top.values + mass_top * added
    residual = 0.0 if truncated else mass_top * math.exp(-float(suffix[0]))
    vals[mask] = residual
    return DiscreteDistribution(space, vals)


# ---------------------------------------------------------------------------
# two tokens
# ---------------------------------------------------------------------------


def constant_step_2d(
    p_t: DiscreteDistribution,
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    w: float,
    sched: NoiseSchedule,
    t: float,
    s: float,
) -> DiscreteDistribution:
    """One constant-strength normalized step on two tokens, t down to s.

    Four cases by the mask pattern of the target state, driven by
    beta = mf(s)/mf(t): still-masked positions survive with probability
    beta; unmasked mass lands on the joint tilt, its conditionals, or its
    marginals depending on how many positions resolve during the step.
    """
    space = p_t.space
    _require_masked_2d(space)
    check_same_space(p, q)
    if not 0.0 <= s < t:
        raise ValueError("need 0 <= s < t")
    sched.check_time(t)
    v = space.vocab_size
    k = v - 1  # token count per position
    beta = sched.masked_fraction(s) / sched.masked_fraction(t)
    tables = tilt_tables_2d(p, q, w)
    cur = p_t.values.reshape(v, v)
    out = np.zeros((v, v))
    mm = cur[k, k]
    ramp = 1.0 - beta
    out[:k, :k] = (
        cur[:k, :k]
        + ramp**2 * tables.joint[:k, :k] * mm
        + ramp
        * (
            tables.cond_second_given_first[:k, :k].T * cur[:k, k][:, None]
            + tables.cond_first_given_second[:k, :k] * cur[k, :k][None, :]
        )
    )
    out[:k, k] = beta * cur[:k, k] + beta * ramp * tables.marg_first[:k] * mm
    out[k, :k] = beta * cur[k, :k] + beta * ramp * tables.marg_second[:k] * mm
    out[k, k] = beta**2 * mm
    return DiscreteDistribution(space, out.reshape(-1))


def two_token_generator(
    p: DiscreteDistribution, q: DiscreteDistribution, w: float
) -> np.ndarray:
    """Time-constant jump matrix of the normalized two-token dynamics.

    Unmask rates come from the joint tilt: conditionals where one position
    is already unmasked, marginals out of the all-mask state.  The full
    generator is sigma_t e^{-sb}/(1-e^{-sb}) times this matrix, so exact
    evolution over [s, t] is expm(log(mf(t)/mf(s)) * G).
    """
    space = p.space
    _require_masked_2d(space)
    check_same_space(p, q)
    v = space.vocab_size
    m = space.mask_index
    tables = tilt_tables_2d(p, q, w)
    n = space.n_states
    gen = np.zeros((n, n))

    def flat(i: int, j: int) -> int:
        return i * v + j

    for i in range(v - 1):
        col = flat(i, m)
        for j in range(v - 1):
            gen[flat(i, j), col] = tables.cond_second_given_first[j, i]
        gen[col, col] = -1.0
    for j in range(v - 1):
        col = flat(m, j)
        for i in range(v - 1):
            gen[flat(i, j), col] = tables.cond_first_given_second[i, j]
        gen[col, col] = -1.0
    col = flat(m, m)
    for i in range(v - 1):
        gen[flat(i, m), col] = tables.marg_first[i]
        gen[flat(m, i), col] = tables.marg_second[i]
    gen[col, col] = -2.0
    return gen


def three_piece_2d(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    w0: float,
    w1: float,
    w2: float,
    t1: float,
    t2: float,
    sched: NoiseSchedule,
) -> tuple[DiscreteDistribution, ThreePieceCoefficients]:
    """Fully-unmasked distribution after a three-segment schedule on two tokens.

    Segments [0, t1), [t1, t2), [t2, T] carry strengths w0, w1, w2 and the
    run starts from the all-mask state.  The output is a six-term mixture
    of the three tilts and the three pairwise combined distributions; the
    coefficients depend only on phi_i = mf(t_i)/mf(T) (equal to t_i/T under
    the log-linear schedule).
    """
    space = p.space
    _require_masked_2d(space)
    check_same_space(p, q)
    horizon = sched.horizon
    if not 0.0 < t1 < t2 < horizon:
        raise ValueError("need 0 < t1 < t2 < horizon")
    mf_total = sched.masked_fraction(horizon)
    phi1 = sched.masked_fraction(t1) / mf_total
    phi2 = sched.masked_fraction(t2) / mf_total
    coeffs = ThreePieceCoefficients(
        early=phi1**2,
        mid=(phi2 - phi1) ** 2,
        late=(1.0 - phi2) ** 2,
        mid_late=(1.0 - phi2) * (phi2 - phi1),
        early_late=(1.0 - phi2) * phi1,
        early_mid=(phi2 - phi1) * phi1,
    )
    v = space.vocab_size
    table = (
        coeffs.late * tilt_tables_2d(p, q, w2).joint
        + coeffs.mid * tilt_tables_2d(p, q, w1).joint
        + coeffs.early * tilt_tables_2d(p, q, w0).joint
        + coeffs.mid_late * combined_distribution(p, q, w1, w2)
        + coeffs.early_late * combined_distribution(p, q, w0, w2)
        + coeffs.early_mid * combined_distribution(p, q, w0, w1)
    )
    return DiscreteDistribution(space, table.reshape(-1)), coeffs


# ---------------------------------------------------------------------------
# unmasking curves
# ---------------------------------------------------------------------------


def unmasking_curve(
    zw_values: Sequence[float],
    sched: NoiseSchedule,
    horizon: float | None = None,
    n_samples: int = 101,
) -> UnmaskingCurve:
    """Mask probability over time for constant guidance, one curve per Z_w.

    p_t(M) = (mf(t)/mf(T))**Z_w, which reduces to (t/T)**Z_w under the
    log-linear schedule.
    """
    T = sched.horizon if horizon is None else horizon
    sched.check_time(T)
    times = np.linspace(0.0, T, n_samples)
    mf_total = sched.masked_fraction(T)
    ratios = np.array([sched.masked_fraction(float(t)) / mf_total for t in times])
    masses = np.stack([ratios**z for z in zw_values])
    return UnmaskingCurve(times, tuple(float(z) for z in zw_values), masses)
