"""Confidence-aware human occupancy prediction with safe grid planners."""

from .agents import (
    ControlAction,
    ControlSet,
    GoalSet,
    HumanState,
    QFunction,
    RationalitySet,
    RobotControl,
    RobotLimits,
    RobotState,
    boltzmann_policy,
    human_step,
    q_default,
    q_goal_progress,
    recover_control,
    robot_step,
)
from .belief import (
    HypothesisSpace,
    JointBelief,
    init_belief,
    mask_stationary,
    reset_belief,
    update_belief,
)
from .occupancy import (
    GridSpec,
    OccupancyGrid,
    collision_probability,
    emplace,
    gaussian_smooth,
    union_max,
)
from .prediction import (
    ParticleBatch,
    PredictionConfig,
    PredictionStack,
    exact_predict,
    predict,
    predict_multi,
    propagate_step,
    sample_hypotheses,
)

__version__ = "0.1.0"
