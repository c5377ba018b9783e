"""Forward and reverse CTMC machinery over small token spaces.

Rate matrices store the jump rate into state x from state y at entry
(x, y), so columns are source states and must sum to zero.  Multi-token
generators are Kronecker sums of the 1D base acting on each position.
"""

import itertools
import math

import numpy as np

from . import counters as ct
from .counters import WarningCounters
from .errors import ModeMismatchError, ZeroProbabilityError
from .matexp import matrix_exp
from .schedules import NoiseSchedule, unmask_prefactor
from .space import DiscreteDistribution, Mode, StateSpace, state_table

COLUMN_SUM_TOL = 1e-10
OFFDIAG_NEG_TOL = -1e-12
MASS_DRIFT_TOL = 1e-10
PROB_FLOOR = 1e-300


class RateMatrix:
    """Column-sum-zero generator with nonnegative off-diagonal entries."""

    def __init__(self, space: StateSpace, entries: np.ndarray):
        entries = np.array(entries, dtype=np.float64)
        n = space.n_states
        if entries.shape != (n, n):
            raise ValueError(f"entries have shape {entries.shape}, expected ({n}, {n})")
        off = entries.copy()
        np.fill_diagonal(off, 0.0)
        worst = off.min(initial=0.0)
        if worst < OFFDIAG_NEG_TOL:
            raise ValueError(f"off-diagonal entry {worst} below tolerance")
        col_drift = np.abs(entries.sum(axis=0)).max()
        if col_drift > COLUMN_SUM_TOL:
            raise ValueError(f"column sums drift by {col_drift}")
        entries.flags.writeable = False
        self.space = space
        self.entries = entries

    def __repr__(self) -> str:
        return f"RateMatrix(space={self.space}, side={self.space.n_states})"


def _kron_sum(one_d: np.ndarray, space: StateSpace) -> np.ndarray:
    """Sum over positions of the 1D base acting on that position."""
    v, d = space.vocab_size, space.dims
    total = np.zeros((space.n_states, space.n_states))
    for pos in range(d):
        block = np.kron(np.eye(v**pos), np.kron(one_d, np.eye(v ** (d - 1 - pos))))
        total += block
    return total


def build_masked_base(space: StateSpace) -> RateMatrix:
    """Time-independent absorbing base: every token jumps to the mask.

    Each non-mask column has -1 on the diagonal and +1 in the mask row;
    the mask column is zero.  The forward generator is sigma_t times this.
    """
    if space.mode is not Mode.MASKED:
        raise ModeMismatchError("masked base requires a masked-mode space")
    v = space.vocab_size
    one_d = np.zeros((v, v))
    m = space.mask_index
    for j in range(v - 1):
        one_d[j, j] = -1.0
        one_d[m, j] = 1.0
    return RateMatrix(space, _kron_sum(one_d, space))


def build_uniform_base(space: StateSpace) -> RateMatrix:
    """Base whose stationary law is uniform: per position, (1/V) J - I."""
    if space.mode is not Mode.UNIFORM:
        raise ModeMismatchError("uniform base requires a uniform-mode space")
    v = space.vocab_size
    one_d = np.full((v, v), 1.0 / v) - np.eye(v)
    return RateMatrix(space, _kron_sum(one_d, space))


def build_base(space: StateSpace) -> RateMatrix:
    return build_masked_base(space) if space.mode is Mode.MASKED else build_uniform_base(space)


def forward_evolve(
    p: DiscreteDistribution,
    base: RateMatrix,
    sched: NoiseSchedule,
    t0: float,
    t1: float,
    warnings: WarningCounters | None = None,
) -> DiscreteDistribution:
    """Evolve p by exp((sigma_bar(t1) - sigma_bar(t0)) * base).

    Exact because the base is constant in time.  Mass is renormalized only
    if round-off drift exceeds 1e-10, which bumps the warning counter.
    """
    if t1 < t0:
        raise ValueError(f"t1={t1} earlier than t0={t0}")
    span = sched.sigma_bar(t1) - sched.sigma_bar(t0)
    out = matrix_exp(span * base.entries) @ p.values
    drift = abs(out.sum() - 1.0)
    if drift > MASS_DRIFT_TOL and warnings is not None:
        warnings.bump(ct.MASS_RENORMALIZED)
    return DiscreteDistribution(p.space, out)


def masked_forward_marginal(
    p0: DiscreteDistribution, sched: NoiseSchedule, t: float
) -> DiscreteDistribution:
    """Exact law at time t under independent per-token masking.

    Computed directly from per-token absorption probabilities and marginal
    sums of p0, independently of any matrix exponential:
    p_t(x) = e^{-sb * #unmasked(x)} * (1 - e^{-sb})^{#newly masked} summed
    over all completions of x's masked coordinates.
    """
    space = p0.space
    if space.mode is not Mode.MASKED:
        raise ModeMismatchError("masked forward marginal requires masked mode")
    stay = 1.0 - sched.masked_fraction(t)
    move = sched.masked_fraction(t)
    v, m = space.vocab_size, space.mask_index
    digits = state_table(space)
    out = np.zeros(space.n_states)
    for idx in range(space.n_states):
        x = digits[idx]
        masked_pos = np.flatnonzero(x == m)
        n_unmasked = space.dims - masked_pos.size
        base_w = stay**n_unmasked
        if masked_pos.size == 0:
            out[idx] = p0.values[idx] * base_w
            continue
        acc = 0.0
        y = x.copy()
        for combo in itertools.product(range(v), repeat=masked_pos.size):
            w = base_w
            for c in combo:
                if c != m:
                    w *= move
            y[masked_pos] = combo
            acc += p0.values[int(y @ space.strides)] * w
        out[idx] = acc
    return DiscreteDistribution(space, out)


def reverse_rate_matrix(
    p_t: DiscreteDistribution,
    base: RateMatrix,
    sigma_t: float,
    warnings: WarningCounters | None = None,
) -> RateMatrix:
    """Time-reversed generator: rate(y <- x) = sigma_t B(x, y) p_t(y) / p_t(x).

    Columns at states with p_t below the probability floor are zeroed and
    flagged; the reverse chain never visits them in exact arithmetic.
    """
    p = p_t.values
    b = base.entries
    n = p_t.space.n_states
    reachable = p > PROB_FLOOR
    if not np.all(reachable) and warnings is not None:
        warnings.bump(ct.ZERO_COLUMN, int(np.count_nonzero(~reachable)))
    safe_p = np.where(reachable, p, 1.0)
    rates = sigma_t * b.T * p[:, None] / safe_p[None, :]
    rates[:, ~reachable] = 0.0
    np.fill_diagonal(rates, 0.0)
    np.clip(rates, 0.0, None, out=rates)
    np.fill_diagonal(rates, -rates.sum(axis=0))
    return RateMatrix(p_t.space, rates)


def conditional_given_unmasked(
    p0: DiscreteDistribution, x: int, position: int
) -> np.ndarray:
    """Bayes conditional over non-mask symbols at a masked position.

    Conditions on the unmasked coordinates of state x; every other masked
    coordinate is marginalized out.  Returns a length V-1 vector summing
    to one.
    """
    space = p0.space
    if space.mode is not Mode.MASKED:
        raise ModeMismatchError("conditionals require masked mode")
    digits = state_table(space)
    xd = digits[x]
    m = space.mask_index
    if xd[position] != m:
        raise ValueError(f"position {position} of state {x} is not masked")
    unmasked = np.flatnonzero(xd != m)
    match = np.ones(space.n_states, dtype=bool)
    for j in unmasked:
        match &= digits[:, j] == xd[j]
    sym = digits[:, position]
    num = np.array(
        [p0.values[match & (sym == a)].sum() for a in range(space.vocab_size - 1)]
    )
    total = num.sum()
    if total <= 0.0:
        raise ZeroProbabilityError(
            f"conditioning event for state {x} has probability zero"
        )
    return num / total


def score_ratio_masked(
    p0: DiscreteDistribution,
    sched: NoiseSchedule,
    t: float,
    x: int,
    x_hat: int,
    position: int,
) -> float:
    """Exact score p_t(x_hat)/p_t(x) for a single unmasking move.

    The ratio factorizes as the time prefactor e^{-sb}/(1 - e^{-sb}) times
    the time-independent conditional of p0 at the unmasked position.
    """
    space = p0.space
    digits = state_table(space)
    xd, hd = digits[x], digits[x_hat]
    m = space.mask_index
    diff = np.flatnonzero(xd != hd)
    if diff.size != 1 or diff[0] != position or xd[position] != m or hd[position] == m:
        raise ValueError("states must differ by one unmasking at the given position")
    cond = conditional_given_unmasked(p0, x, position)
    return unmask_prefactor(sched, t) * float(cond[hd[position]])
