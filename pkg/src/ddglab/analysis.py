"""Metrics, the two-class toy dataset, and desk-scale experiment sweeps."""

import math
from dataclasses import dataclass

import numpy as np

from . import counters as ct
from .closed_form import (
    PiecewiseResult,
    piecewise_mixture_1d,
    resolve_residual_mask,
    three_piece_2d,
)
from .counters import WarningCounters
from .errors import SpaceMismatchError
from .guidance import (
    Constant,
    GuidanceSchedule,
    PiecewiseConstant,
    LeftInterval,
    RightInterval,
    combined_distribution,
    tilt,
    time_from_progress,
)
from .sampling import (
    EmpiricalDistribution,
    Mechanism,
    SamplerConfig,
    empirical_to_distribution,
    simulate_reverse,
)
from .schedules import NoiseSchedule
from .space import DiscreteDistribution, Mode, StateSpace, check_same_space

# ---------------------------------------------------------------------------
# toy dataset: two overlapping classes of bumps on a 27 x 27 grid
# ---------------------------------------------------------------------------

# 9 x 9 intensity bump shared by all clusters
BUMP = np.array(
    [
        [0.1, 0.2, 0.3, 0.4, 0.5, 0.4, 0.3, 0.2, 0.1],
        [0.2, 0.4, 0.6, 0.7, 0.8, 0.7, 0.6, 0.4, 0.2],
        [0.3, 0.6, 0.8, 0.9, 1.0, 0.9, 0.8, 0.6, 0.3],
        [0.4, 0.7, 0.9, 1.0, 1.0, 1.0, 0.9, 0.7, 0.4],
        [0.5, 0.8, 1.0, 1.0, 1.0, 1.0, 1.0, 0.8, 0.5],
        [0.4, 0.7, 0.9, 1.0, 1.0, 1.0, 0.9, 0.7, 0.4],
        [0.3, 0.6, 0.8, 0.9, 1.0, 0.9, 0.8, 0.6, 0.3],
        [0.2, 0.4, 0.6, 0.7, 0.8, 0.7, 0.6, 0.4, 0.2],
        [0.1, 0.2, 0.3, 0.4, 0.5, 0.4, 0.3, 0.2, 0.1],
    ]
)

GRID_SIDE = 27


@dataclass(frozen=True, eq=False)
class ToyDataset:
    """Two classes on a 27 x 27 grid of two tokens, plus their mixture.

    Each class shares the center bump and owns one corner bump: class one
    the top-left, class two the bottom-right.  Vocabulary is the 27 grid
    symbols plus the mask.
    """

    space: StateSpace
    class_one: DiscreteDistribution
    class_two: DiscreteDistribution
    mixture: DiscreteDistribution

    @property
    def grid_side(self) -> int:
        return GRID_SIDE


def build_toy_dataset(grid_side: int = GRID_SIDE) -> ToyDataset:
    if grid_side % BUMP.shape[0] != 0:
        raise ValueError("grid side must be a multiple of the bump side")
    tile = BUMP.shape[0]
    space = StateSpace(vocab_size=grid_side + 1, dims=2, mode=Mode.MASKED)

    def class_table(corner_row: int, corner_col: int) -> DiscreteDistribution:
        grid = np.zeros((grid_side + 1, grid_side + 1))
        center = (grid_side - tile) // 2
        grid[center : center + tile, center : center + tile] += BUMP
        grid[corner_row : corner_row + tile, corner_col : corner_col + tile] += BUMP
        return DiscreteDistribution(space, grid.reshape(-1))

    one = class_table(0, 0)
    two = class_table(grid_side - tile, grid_side - tile)
    mixture = DiscreteDistribution(space, 0.5 * (one.values + two.values))
    return ToyDataset(space, one, two, mixture)


def toy_marginal(table: DiscreteDistribution, axis: int = 0) -> DiscreteDistribution:
    """One-token marginal of a two-token toy table, mask slot kept at zero."""
    space = table.space
    v = space.vocab_size
    joint = table.values.reshape(v, v)
    marg = joint.sum(axis=1 - axis)
    out_space = StateSpace(vocab_size=v, dims=1, mode=Mode.MASKED)
    return DiscreteDistribution(out_space, marg)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def tv_distance(a: DiscreteDistribution, b: DiscreteDistribution) -> float:
    """Total variation distance, half the L1 difference."""
    check_same_space(a, b)
    return 0.5 * float(np.abs(a.values - b.values).sum())


def kl_divergence(
    a: DiscreteDistribution,
    b: DiscreteDistribution,
    warnings: WarningCounters | None = None,
) -> float:
    """KL(a || b) with 0 log 0 = 0; support violations return infinity."""
    check_same_space(a, b)
    av, bv = a.values, b.values
    violated = (av > 0.0) & (bv <= 0.0)
    if np.any(violated):
        if warnings is not None:
            warnings.bump(ct.KL_SUPPORT)
        return math.inf
    pos = av > 0.0
    return float(np.sum(av[pos] * np.log(av[pos] / bv[pos])))


# ---------------------------------------------------------------------------
# mechanism comparison (masked, one token)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MechanismRow:
    mechanism: str
    w: float
    tv_closed_form: float
    tv_tilt: float
    mask_mass_mid: float
    euler_clips: int


def _closed_form_reference(
    mechanism: Mechanism,
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    w: float,
    sched: NoiseSchedule,
    t_end: float,
) -> DiscreteDistribution | None:
    if mechanism is Mechanism.SIMPLE:
        return None
    result = piecewise_mixture_1d(
        p0,
        q0,
        [t_end, sched.horizon],
        [w],
        sched,
        normalized=mechanism is Mechanism.NORMALIZED,
    )
    return resolve_residual_mask(result, p0, q0, w)


def mechanism_compare(
    space: StateSpace,
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    w_grid: list[float],
    sched: NoiseSchedule,
    cfg: SamplerConfig,
) -> list[MechanismRow]:
    """One row per mechanism and strength on a masked one-token space.

    TV is measured against the matching piecewise closed form (unlocking
    and normalized) or against an independent second simulation (simple,
    which has no closed form here); the mask mass column reports the
    still-masked fraction at the midpoint of the run.
    """
    if space.mode is not Mode.MASKED or space.dims != 1:
        raise ValueError("mechanism comparison runs on masked one-token spaces")
    rows = []
    t_mid = sched.horizon / 2.0
    mid_cfg = SamplerConfig(
        kind=cfg.kind,
        steps=max(cfg.steps // 2, 1),
        trajectories=cfg.trajectories,
        seed=cfg.seed,
        t_end=t_mid,
    )
    for mechanism in Mechanism:
        for w in w_grid:
            schedule = Constant(w)
            emp = simulate_reverse(space, p0, q0, mechanism, schedule, sched, cfg)
            emp_dist = empirical_to_distribution(emp)
            reference = _closed_form_reference(mechanism, p0, q0, w, sched, cfg.t_end)
            if reference is None:
                twin = simulate_reverse(
                    space,
                    p0,
                    q0,
                    mechanism,
                    schedule,
                    sched,
                    SamplerConfig(
                        kind=cfg.kind,
                        steps=cfg.steps,
                        trajectories=cfg.trajectories,
                        seed=cfg.seed + 1,
                        t_end=cfg.t_end,
                    ),
                )
                reference = empirical_to_distribution(twin)
            mid = simulate_reverse(
                space, p0, q0, mechanism, schedule, sched, mid_cfg, resolve_final=False
            )
            mask_mid = mid.counts[space.mask_index] / mid.total
            rows.append(
                MechanismRow(
                    mechanism=mechanism.value,
                    w=w,
                    tv_closed_form=tv_distance(emp_dist, reference),
                    tv_tilt=tv_distance(emp_dist, tilt(p0, q0, w).values),
                    mask_mass_mid=float(mask_mid),
                    euler_clips=emp.meta.get(ct.EULER_CLIP, 0),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# schedule sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleRow:
    schedule: str
    mechanism: str
    tv_reference: float
    coefficients: tuple[float, ...] | None


def schedule_to_staircase(
    schedule: GuidanceSchedule, n_segments: int = 64
) -> tuple[list[float], list[float]]:
    """Progress-coordinate staircase (breakpoints, weights) for any schedule.

    Interval-style schedules convert exactly; ramps are sampled at segment
    midpoints.
    """
    if isinstance(schedule, Constant):
        return [0.0, 1.0], [schedule.w]
    if isinstance(schedule, PiecewiseConstant):
        return list(schedule.breakpoints), list(schedule.weights)
    if isinstance(schedule, LeftInterval) and 0.0 < schedule.r < 1.0:
        return [0.0, schedule.r, 1.0], [schedule.w, 0.0]
    if isinstance(schedule, RightInterval) and 0.0 < schedule.l < 1.0:
        return [0.0, schedule.l, 1.0], [0.0, schedule.w]
    grid = np.linspace(0.0, 1.0, n_segments + 1)
    weights = [schedule.eval(float(0.5 * (a + b))) for a, b in zip(grid[:-1], grid[1:])]
    return [float(g) for g in grid], weights


def _progress_staircase_to_times(
    breakpoints: list[float], weights: list[float], horizon: float, t_end: float
) -> tuple[list[float], list[float]]:
    """Map progress segments to a diffusion-time partition on [t_end, horizon].

    Progress ascends while diffusion time descends, so segment order
    reverses; segments squeezed entirely below t_end are dropped.
    """
    segments = []
    for i, w in enumerate(weights):
        t_hi = time_from_progress(breakpoints[i], horizon)
        t_lo = max(time_from_progress(breakpoints[i + 1], horizon), t_end)
        if t_lo < t_hi:
            segments.append((t_lo, t_hi, w))
    segments.sort()
    partition = [segments[0][0]] + [s[1] for s in segments]
    return partition, [s[2] for s in segments]


def schedule_sweep(
    space: StateSpace,
    p0: DiscreteDistribution,
    q0: DiscreteDistribution,
    schedules: list[GuidanceSchedule],
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    mechanism: Mechanism = Mechanism.NORMALIZED,
) -> list[ScheduleRow]:
    """Simulate each schedule and score it against the analytic reference.

    On one token the reference is the piecewise closed form of the staircase
    conversion; on two tokens a three-segment piecewise schedule is compared
    against the three-piece closed form, whose coefficient record is
    attached to the row.
    """
    rows = []
    for schedule in schedules:
        coeffs = None
        if space.dims == 1:
            breakpoints, weights = schedule_to_staircase(schedule)
            partition, seg_weights = _progress_staircase_to_times(
                breakpoints, weights, sched.horizon, cfg.t_end
            )
            result = piecewise_mixture_1d(
                p0,
                q0,
                partition,
                seg_weights,
                sched,
                normalized=mechanism is Mechanism.NORMALIZED,
            )
            reference = resolve_residual_mask(
                result, p0, q0, schedule.eval(1.0)
            )
        elif space.dims == 2 and isinstance(schedule, PiecewiseConstant) and len(
            schedule.weights
        ) == 3:
            t1 = time_from_progress(schedule.breakpoints[2], sched.horizon)
            t2 = time_from_progress(schedule.breakpoints[1], sched.horizon)
            w2, w1, w0 = schedule.weights  # progress order -> time order
            reference, coeff_rec = three_piece_2d(p0, q0, w0, w1, w2, t1, t2, sched)
            coeffs = coeff_rec.as_tuple()
        else:
            raise ValueError(
                "two-token sweeps support three-segment piecewise schedules only"
            )
        emp = simulate_reverse(space, p0, q0, mechanism, schedule, sched, cfg)
        rows.append(
            ScheduleRow(
                schedule=schedule.describe(),
                mechanism=mechanism.value,
                tv_reference=tv_distance(empirical_to_distribution(emp), reference),
                coefficients=coeffs,
            )
        )
    return rows


@dataclass(frozen=True)
class CoefficientPoint:
    t2: float
    t1: float
    coefficients: tuple[float, float, float, float, float, float]


def three_piece_coefficient_curves(
    t2_values: tuple[float, ...] = (1.0, 0.75, 0.5),
    n_points: int = 49,
    horizon: float = 1.0,
) -> list[CoefficientPoint]:
    """Mixture coefficients as functions of t1 for fixed t2 (log-linear form).

    Uses the closed-form coefficients phi = t / horizon directly; no
    simulation involved.
    """
    rows = []
    for t2 in t2_values:
        for t1 in np.linspace(0.0, t2, n_points):
            phi1, phi2 = t1 / horizon, t2 / horizon
            rows.append(
                CoefficientPoint(
                    t2=float(t2),
                    t1=float(t1),
                    coefficients=(
                        phi1**2,
                        (phi2 - phi1) ** 2,
                        (1.0 - phi2) ** 2,
                        (1.0 - phi2) * (phi2 - phi1),
                        (1.0 - phi2) * phi1,
                        (phi2 - phi1) * phi1,
                    ),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# toy-dataset panels: tilted and combined tables as data
# ---------------------------------------------------------------------------


def toy_tilt_panels(
    dataset: ToyDataset, w_values: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
) -> dict[float, DiscreteDistribution]:
    """Tilted class-one-vs-mixture tables for a range of strengths."""
    return {
        w: tilt(dataset.class_one, dataset.mixture, w).values for w in w_values
    }


def toy_combined_panels(
    dataset: ToyDataset,
    wg_pairs: tuple[tuple[float, float], ...] = ((4.0, 1.0), (8.0, 1.0), (8.0, 2.0)),
) -> dict[tuple[float, float], np.ndarray]:
    """Raw combined tables (mass two) for (w, gamma) pairs on the toy data."""
    return {
        (w, g): combined_distribution(dataset.class_one, dataset.mixture, w, g)
        for (w, g) in wg_pairs
    }


def normalize_table(space: StateSpace, table: np.ndarray) -> DiscreteDistribution:
    """Normalize a raw nonnegative table into a distribution on the space."""
    return DiscreteDistribution(space, np.asarray(table, dtype=np.float64).reshape(-1))
