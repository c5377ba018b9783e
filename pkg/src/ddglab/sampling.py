"""Monte-Carlo simulation of the guided reverse dynamics.

Trajectories advance together on a uniform time grid from the horizon
down to ``t_end``; per-step jump tables are shared across trajectories
and the per-trajectory randomness comes from counter-based (Philox)
streams keyed by (seed, chunk index), so results are reproducible and
independent of how chunks are scheduled across workers.

Rates are evaluated at each step's midpoint time.  In masked mode the
guided generator factorizes into a time scalar times tables built from
the exact conditionals of p0 and q0, so the per-step work is a handful
of vectorized array operations.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import counters as ct
from .counters import WarningCounters
from .core import (
    build_base,
    conditional_given_unmasked,
    forward_evolve,
    reverse_rate_matrix,
)
from .errors import ZeroProbabilityError
from .guidance import (
    GuidanceSchedule,
    guided_rate_normalized,
    guided_rate_unlocking,
    progress_from_time,
    tilt_weights,
)
from .schedules import NoiseSchedule, unmask_prefactor
from .space import DiscreteDistribution, Mode, StateSpace, check_same_space, state_table

CHUNK_SIZE = 8192


class Mechanism(Enum):
    UNLOCKING = "unlocking"
    SIMPLE = "simple"
    NORMALIZED = "normalized"


class SamplerKind(Enum):
    EULER = "euler"
    TAU_LEAPING = "tau"


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind = SamplerKind.EULER
    steps: int = 50
    trajectories: int = 1000
    seed: int = 0
    t_end: float = 1e-3

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    space: StateSpace
    counts: np.ndarray
    total: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.space.n_states,):
            raise ValueError("counts shape must match the state count")
        if counts.sum() != self.total:
            raise ValueError("counts must sum to total")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)


def empirical_to_distribution(emp: EmpiricalDistribution) -> DiscreteDistribution:
    if emp.total <= 0:
        raise ValueError("empirical distribution is empty")
    return DiscreteDistribution(emp.space, emp.counts / emp.total)


# ---------------------------------------------------------------------------
# single-state reference steps
# ---------------------------------------------------------------------------


def euler_step(
    state: int,
    rates: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    warnings: WarningCounters | None = None,
) -> int:
    """One Euler transition: probability dt * rate to each destination.

    If the total jump probability exceeds one it is renormalized
    proportionally and the clip counter bumps; the remainder is the stay
    probability.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if rates.min(initial=0.0) < 0.0:
        raise ValueError("rates must be nonnegative")
    probs = dt * rates
    probs[state] = 0.0
    total = probs.sum()
    if total > 1.0:
        probs /= total
        total = 1.0
        if warnings is not None:
            warnings.bump(ct.EULER_CLIP)
    u = rng.random()
    if u >= total:
        return state
    return int(np.searchsorted(np.cumsum(probs), u, side="right"))


def tau_leap_step(
    state: int,
    position_rates: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    space: StateSpace,
    warnings: WarningCounters | None = None,
) -> int:
    """One tau-leaping transition with independent per-position events.

    ``position_rates[i, a]`` is the jump rate of position i to symbol a.
    Each position fires Poisson(dt * total rate) events; any position with
    at least one event applies a single categorical jump, so repeat events
    collapse and cross-position conflicts cannot occur.
    """
    position_rates = np.asarray(position_rates, dtype=np.float64)
    if position_rates.shape != (space.dims, space.vocab_size):
        raise ValueError("position_rates must have shape (dims, vocab_size)")
    if position_rates.min(initial=0.0) < 0.0:
        raise ValueError("rates must be nonnegative")
    digits = np.array(state_table(space)[state])
    for pos in range(space.dims):
        lam = position_rates[pos].sum()
        if lam <= 0.0:
            continue
        if rng.poisson(dt * lam) >= 1:
            cum = np.cumsum(position_rates[pos] / lam)
            digits[pos] = int(np.searchsorted(cum, rng.random(), side="right"))
    return int(digits @ space.strides)


# ---------------------------------------------------------------------------
# masked-mode tables: conditionals of p0/q0 per (state, masked position)
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _MaskedTables:
    cond_p: np.ndarray  # (n, d, V-1); zero rows at unmasked positions
    cond_q: np.ndarray
    dest: np.ndarray  # (n, d*(V-1)) flat destination indices
    masked_count: np.ndarray  # (n,)
    pos_masked: np.ndarray  # (n, d) bool


def _build_masked_tables(
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    warnings: WarningCounters | None,
) -> _MaskedTables:
    space = p0.space
    n, d, v = space.n_states, space.dims, space.vocab_size
    m = space.mask_index
    digits = state_table(space)
    tokens = v - 1
    cond_p = np.zeros((n, d, tokens))
    cond_q = np.zeros((n, d, tokens))
    dest = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, d * tokens))
    pos_masked = digits == m
    for x in range(n):
        for pos in range(d):
            if not pos_masked[x, pos]:
                continue
            for dist, out in ((p0, cond_p), (q0, cond_q)):
                try:
                    out[x, pos] = conditional_given_unmasked(dist, x, pos)
                except ZeroProbabilityError:
                    # context outside the data support; uniform fallback
                    out[x, pos] = 1.0 / tokens
                    if warnings is not None:
                        warnings.bump(ct.ZERO_COLUMN)
            stride = int(space.strides[pos])
            for a in range(tokens):
                dest[x, pos * tokens + a] = x + (a - m) * stride
    return _MaskedTables(cond_p, cond_q, dest, pos_masked.sum(axis=1), pos_masked)


def _masked_jump_weights(tables: _MaskedTables, w: float) -> np.ndarray:
    """Per-(state, position, symbol) interpolated weights; zero when unmasked."""
    return tilt_weights(tables.cond_p, tables.cond_q, w)


def _normalize_groups(weights: np.ndarray, pos_masked: np.ndarray) -> np.ndarray:
    """Normalize each (state, position) group to a conditional distribution."""
    sums = weights.sum(axis=2, keepdims=True)
    out = np.divide(weights, sums, out=np.zeros_like(weights), where=sums > 0.0)
    # degenerate interpolation on a masked position: uniform over tokens
    dead = (sums[:, :, 0] <= 0.0) & pos_masked
    if np.any(dead):
        out[dead] = 1.0 / weights.shape[2]
    return out


# ---------------------------------------------------------------------------
# per-step jump plans
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _CategoricalPlan:
    """Column categorical: cumulative move probabilities plus a stay remainder."""

    cum: np.ndarray  # (n, slots) cumulative move probabilities
    total: np.ndarray  # (n,) total move probability
    dest: np.ndarray  # (n, slots)


@dataclass(eq=False)
class _TauPlan:
    lam: np.ndarray  # (n, d) per-position total rates
    cum_sym: np.ndarray  # (n, d, V) per-position symbol cumulative


def _euler_plan_from_rates(
    rates: np.ndarray,
    dest: np.ndarray,
    dt: float,
    warnings: WarningCounters | None = None,
) -> _CategoricalPlan:
    probs = dt * rates
    total = probs.sum(axis=1)
    clipped = total > 1.0
    # a clipped column means dt is too coarse for this state's total rate;
    # counted per (step, column) so the tally is trajectory-independent
    if np.any(clipped) and warnings is not None:
        warnings.bump(ct.EULER_CLIP, int(np.count_nonzero(clipped)))
    scale = np.where(clipped, total, 1.0)
    probs = probs / scale[:, None]
    total = np.minimum(total, 1.0)
    return _CategoricalPlan(np.cumsum(probs, axis=1), total, dest)


def _uniform_generator(mechanism, p_t, q_t, base, w, sigma, warnings):
    if mechanism is Mechanism.UNLOCKING:
        return guided_rate_unlocking(p_t, q_t, base, w, sigma, warnings).entries
    return guided_rate_normalized(p_t, q_t, base, w, sigma, warnings).entries


def _column_exp_kernel(gen: np.ndarray, dt: float) -> np.ndarray:
    """Column-stochastic one-step kernel from per-column exponentials.

    Each column of dt * gen is exponentiated as if it were the only
    nonzero column, which keeps at most one jump per step and is exact for
    the frozen column.
    """
    v_diag = dt * np.diag(gen)
    factor = np.where(np.abs(v_diag) > 1e-12, np.expm1(v_diag) / np.where(v_diag == 0, 1.0, v_diag), 1.0)
    kernel = dt * gen * factor[None, :]
    np.fill_diagonal(kernel, np.exp(v_diag))
    return kernel


class _StepPlanner:
    """Builds the per-step jump plan for one (mechanism, sampler) setting."""

    def __init__(
        self,
        space: StateSpace,
        p0: DiscreteDistribution,
        q0: DiscreteDistribution,
        mechanism: Mechanism,
        kind: SamplerKind,
        noise: NoiseSchedule,
        warnings: WarningCounters,
    ):
        self.space = space
        self.p0 = p0
        self.q0 = q0
        self.mechanism = mechanism
        self.kind = kind
        self.noise = noise
        self.warnings = warnings
        self.masked = space.mode is Mode.MASKED
        self.base = build_base(space)
        if self.masked:
            self.tables = _build_masked_tables(p0, q0, warnings)
        self._w_cache: dict[float, np.ndarray] = {}

    def _weights_at(self, w: float) -> np.ndarray:
        got = self._w_cache.get(w)
        if got is None:
            got = _masked_jump_weights(self.tables, w)
            self._w_cache[w] = got
        return got

    # -- masked-mode plans ---------------------------------------------------

    def _masked_plan(self, t_hi: float, t_lo: float, w: float):
        t_mid = 0.5 * (t_hi + t_lo)
        dt = t_hi - t_lo
        scale = self.noise.sigma(t_mid) * unmask_prefactor(self.noise, t_mid)
        n, d, tokens = (
            self.space.n_states,
            self.space.dims,
            self.space.vocab_size - 1,
        )
        weights = self._weights_at(w)
        if self.mechanism is Mechanism.SIMPLE:
            beta = self.noise.masked_fraction(t_lo) / self.noise.masked_fraction(t_hi)
            m_cnt = self.tables.masked_count.astype(np.float64)
            stay = beta**m_cnt
            move_scale = np.divide(
                1.0 - stay, m_cnt, out=np.zeros(n), where=m_cnt > 0
            )
            raw = weights.reshape(n, d * tokens) * move_scale[:, None]
            z_col = stay + raw.sum(axis=1)
            probs = raw / z_col[:, None]
            total = 1.0 - stay / z_col
            return _CategoricalPlan(np.cumsum(probs, axis=1), total, self.tables.dest)
        if self.mechanism is Mechanism.NORMALIZED:
            rates3 = scale * _normalize_groups(weights, self.tables.pos_masked)
        else:
            rates3 = scale * weights
        if self.kind is SamplerKind.TAU_LEAPING:
            lam = rates3.sum(axis=2)
            cum_sym = np.zeros((n, d, self.space.vocab_size))
            norm = _normalize_groups(weights, self.tables.pos_masked)
            cum_sym[:, :, :tokens] = np.cumsum(norm, axis=2)
            cum_sym[:, :, tokens:] = cum_sym[:, :, tokens - 1 : tokens]
            return _TauPlan(lam, cum_sym)
        return _euler_plan_from_rates(
            rates3.reshape(n, d * tokens), self.tables.dest, dt, self.warnings
        )

    # -- uniform-mode plans --------------------------------------------------

    def _uniform_plan(self, t_hi: float, t_lo: float, w: float):
        t_mid = 0.5 * (t_hi + t_lo)
        dt = t_hi - t_lo
        sigma = self.noise.sigma(t_mid)
        n, d, v = self.space.n_states, self.space.dims, self.space.vocab_size
        p_t = forward_evolve(self.p0, self.base, self.noise, 0.0, t_mid)
        q_t = forward_evolve(self.q0, self.base, self.noise, 0.0, t_mid)
        dest = np.broadcast_to(np.arange(n, dtype=np.int64), (n, n))
        if self.mechanism is Mechanism.SIMPLE:
            gen_p = reverse_rate_matrix(p_t, self.base, sigma, self.warnings).entries
            gen_q = reverse_rate_matrix(q_t, self.base, sigma, self.warnings).entries
            from .guidance import simple_guidance_transition

            kernel = simple_guidance_transition(
                _column_exp_kernel(gen_p, dt), _column_exp_kernel(gen_q, dt), w
            )
            probs = kernel.T.copy()  # rows = source states
            diag = np.diag(probs).copy()
            probs[np.arange(n), np.arange(n)] = 0.0
            return _CategoricalPlan(np.cumsum(probs, axis=1), 1.0 - diag, dest)
        gen = _uniform_generator(
            self.mechanism, p_t, q_t, self.base, w, sigma, self.warnings
        )
        if self.kind is SamplerKind.TAU_LEAPING:
            digits = state_table(self.space)
            lam = np.zeros((n, d))
            cum_sym = np.zeros((n, d, v))
            for x in range(n):
                for pos in range(d):
                    stride = int(self.space.strides[pos])
                    cur = digits[x, pos]
                    rates = np.zeros(v)
                    for a in range(v):
                        if a == cur:
                            continue
                        rates[a] = gen[x + (a - cur) * stride, x]
                    s = rates.sum()
                    lam[x, pos] = s
                    cum_sym[x, pos] = np.cumsum(rates / s) if s > 0 else 1.0
            return _TauPlan(lam, cum_sym)
        rates = gen.T.copy()
        rates[np.arange(n), np.arange(n)] = 0.0
        return _euler_plan_from_rates(rates, dest, dt, self.warnings)

    def plan(self, t_hi: float, t_lo: float, w: float):
        if self.masked:
            return self._masked_plan(t_hi, t_lo, w)
        return self._uniform_plan(t_hi, t_lo, w)

    def final_unmask_tables(self, w_end: float) -> np.ndarray:
        """(n, d, V-1) tilted conditional per state and position."""
        return _normalize_groups(self._weights_at(w_end), self.tables.pos_masked)


# ---------------------------------------------------------------------------
# the simulator
# ---------------------------------------------------------------------------


def _apply_categorical(
    plan: _CategoricalPlan, states: np.ndarray, u: np.ndarray
) -> np.ndarray:
    rows_cum = plan.cum[states]
    total = plan.total if np.ndim(plan.total) == 0 else plan.total[states]
    move = u < total
    if not np.any(move):
        return states
    slots = (u[:, None] < rows_cum).argmax(axis=1)
    dest = plan.dest[states, slots]
    return np.where(move, dest, states)


def _apply_tau(
    plan: _TauPlan,
    states: np.ndarray,
    digits: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    space: StateSpace,
) -> np.ndarray:
    for pos in range(space.dims):
        lam = plan.lam[states, pos]
        events = rng.poisson(dt * lam)
        u = rng.random(states.shape[0])
        fire = events >= 1
        if not np.any(fire):
            continue
        cum_rows = plan.cum_sym[states, pos]
        syms = (u[:, None] < cum_rows).argmax(axis=1)
        old = digits[:, pos].copy()
        stride = int(space.strides[pos])
        new_digits = np.where(fire, syms, old)
        digits[:, pos] = new_digits
        states = states + (new_digits - old) * stride
    return states


def simulate_reverse(
    space: StateSpace,
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    mechanism: Mechanism,
    schedule: GuidanceSchedule,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    resolve_final: bool = True,
    max_workers: int = 1,
) -> EmpiricalDistribution:
    """Simulate the guided reverse chain and tally final states.

    Masked runs start from the all-mask state, uniform runs from a uniform
    draw.  The grid walks from the horizon down to cfg.t_end with rates
    evaluated at step midpoints.  In masked mode, positions still masked
    at the end are resolved by exact draws from the tilted conditional at
    the terminal strength (one position at a time, so later draws condition
    on earlier ones); pass resolve_final=False to inspect the raw state.

    The simple mechanism steps with geometric interpolation of the exact
    one-step column-exponential kernels and ignores cfg.kind.
    """
    if p0.space != space or q0.space != space:
        raise ValueError("distributions must live on the given space")
    check_same_space(p0, q0)
    horizon = sched.horizon
    if not cfg.t_end < horizon:
        raise ValueError("t_end must lie below the horizon")
    warnings = WarningCounters()
    planner = _StepPlanner(space, p0, q0, mechanism, cfg.kind, sched, warnings)
    grid = np.linspace(horizon, cfg.t_end, cfg.steps + 1)
    w_values = [
        schedule.eval(min(max(progress_from_time(0.5 * (grid[k] + grid[k + 1]), horizon), 0.0), 1.0))
        for k in range(cfg.steps)
    ]

    n_traj = cfg.trajectories
    n_chunks = (n_traj + CHUNK_SIZE - 1) // CHUNK_SIZE
    rngs = [
        np.random.Generator(np.random.Philox(seed=np.random.SeedSequence((cfg.seed, c))))
        for c in range(n_chunks)
    ]
    sizes = [min(CHUNK_SIZE, n_traj - c * CHUNK_SIZE) for c in range(n_chunks)]

    digits0 = state_table(space)
    if space.mode is Mode.MASKED:
        start = space.all_mask_state
        states = [np.full(s, start, dtype=np.int64) for s in sizes]
    else:
        states = [
            rngs[c].integers(0, space.n_states, size=sizes[c], dtype=np.int64)
            for c in range(n_chunks)
        ]
    digits = [np.array(digits0[s]) for s in states]

    use_tau = cfg.kind is SamplerKind.TAU_LEAPING and mechanism is not Mechanism.SIMPLE

    def run_step_chunk(c: int, plan, dt: float) -> None:
        if use_tau:
            states[c] = _apply_tau(plan, states[c], digits[c], dt, rngs[c], space)
        else:
            u = rngs[c].random(sizes[c])
            states[c] = _apply_categorical(plan, states[c], u)
            digits[c] = np.array(digits0[states[c]])

    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        for k in range(cfg.steps):
            plan = planner.plan(float(grid[k]), float(grid[k + 1]), w_values[k])
            dt = float(grid[k] - grid[k + 1])
            if pool is None:
                for c in range(n_chunks):
                    run_step_chunk(c, plan, dt)
            else:
                list(pool.map(lambda c: run_step_chunk(c, plan, dt), range(n_chunks)))
        if resolve_final and space.mode is Mode.MASKED:
            w_end = schedule.eval(1.0)
            tilted = planner.final_unmask_tables(w_end)
            cum = np.cumsum(tilted, axis=2)
            m = space.mask_index
            for pos in range(space.dims):
                stride = int(space.strides[pos])
                for c in range(n_chunks):
                    need = digits[c][:, pos] == m
                    u = rngs[c].random(sizes[c])
                    if not np.any(need):
                        continue
                    rows = cum[states[c][need], pos]
                    syms = (u[need][:, None] < rows).argmax(axis=1)
                    states[c][need] += (syms - m) * stride
                    digits[c][need, pos] = syms
    finally:
        if pool is not None:
            pool.shutdown()

    counts = np.zeros(space.n_states, dtype=np.int64)
    for c in range(n_chunks):
        counts += np.bincount(states[c], minlength=space.n_states)
    return EmpiricalDistribution(
        space, counts, n_traj, meta=warnings.as_dict()
    )
