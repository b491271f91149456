"""Robust sum-MSE multiuser MIMO downlink precoding with optimal pilot energy."""

from .channel import ChannelRealization, SystemConfig, draw_channel, reference_scenario, user_block
from .energy import (
    AllocationPolicy,
    EnergySplit,
    grid_search_optimum,
    optimal_training_energy,
    policy_split,
    smse_derivative,
    smse_of_training_power,
    threshold_snr,
)
from .errors import ConfigurationError, DomainError, FramingError, NumericalError, PilotRankError
from .montecarlo import SweepReport, run_sweep, run_trial, snr_at_ber
from .precoder import DownlinkSolution, VirtualUplinkSolution, duality_transform, solve_min_smse
from .training import PilotKind, build_training_matrix, mmse_estimate, simulate_training

__version__ = "0.1.0"
