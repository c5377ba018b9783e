"""Exact desk-scale laboratory for classifier-free guidance in discrete diffusion.

Forward/reverse continuous-time Markov chains over small token spaces,
three guidance mechanisms, dynamic guidance schedules, analytic
evaluators for the resulting distributions, and Monte-Carlo samplers
cross-validated against them.
"""

__version__ = "0.1.0"

from .analysis import (
    ToyDataset,
    build_toy_dataset,
    kl_divergence,
    mechanism_compare,
    schedule_sweep,
    tv_distance,
)
from .closed_form import (
    PiecewiseResult,
    ThreePieceCoefficients,
    constant_step_1d,
    constant_step_2d,
    piecewise_normalized_1d,
    piecewise_unlocking_1d,
    schedule_mixture_1d,
    three_piece_2d,
    two_token_generator,
    unmasking_curve,
)
from .core import (
    RateMatrix,
    build_masked_base,
    build_uniform_base,
    conditional_given_unmasked,
    forward_evolve,
    masked_forward_marginal,
    reverse_rate_matrix,
    score_ratio_masked,
)
from .counters import WarningCounters
from .guidance import (
    Constant,
    GuidanceSchedule,
    LeftInterval,
    PiecewiseConstant,
    RampDown,
    RampUp,
    RightInterval,
    TiltedDistribution,
    column_normalization_factor,
    combined_distribution,
    guided_rate_normalized,
    guided_rate_normalized_softmax,
    guided_rate_unlocking,
    schedule_eval,
    simple_guidance_transition,
    tilt,
)
from .matexp import matrix_exp, matrix_exp_block4, matrix_exp_rank_one
from .sampling import (
    EmpiricalDistribution,
    Mechanism,
    SamplerConfig,
    SamplerKind,
    empirical_to_distribution,
    euler_step,
    simulate_reverse,
    tau_leap_step,
)
from .schedules import ConstantRate, LogLinear, NoiseSchedule
from .space import DiscreteDistribution, Mode, StateSpace
