"""Cell-free massive MIMO URLLC simulator and power-control optimizer.

Core pipeline: scenario geometry -> channel realizations -> pilot-based
LMMSE channel estimation -> beamforming -> finite-blocklength rates ->
successive-convex power control -> Monte-Carlo harness with CDF reporting.

The ``service`` subpackage wraps the pipeline in a FastAPI app; ``cli``
is a thin client that runs the same requests locally or against a server.
"""

__version__ = "0.1.0"

from .scenario import AreaConfig, Scenario, generate_scenario, associate, wrap_distance
from .channel import (
    GuChannelConfig,
    UavChannelConfig,
    LinkParams,
    ChannelState,
    gu_large_scale_db,
    correlated_shadowing,
    uav_link_params,
    steering_vector,
    draw_channel,
    build_channel_state,
)
from .estimation import PilotBook, assign_pilots, estimate_channels
from .beamforming import BeamformerSet, build_beamformers
from .rate import UrllcParams, LinkCoefficients, link_coefficients, sinr_vector, urllc_rate
from .sco import FeasibleSet, ProblemSpec, SolveReport, initialize_alpha, run_sco
from .harness import RunConfig, SweepTuple, run_experiment, write_outputs, likely_rate_95

__all__ = [
    "AreaConfig",
    "Scenario",
    "generate_scenario",
    "associate",
    "wrap_distance",
    "GuChannelConfig",
    "UavChannelConfig",
    "LinkParams",
    "ChannelState",
    "gu_large_scale_db",
    "correlated_shadowing",
    "uav_link_params",
    "steering_vector",
    "draw_channel",
    "build_channel_state",
    "PilotBook",
    "assign_pilots",
    "estimate_channels",
    "BeamformerSet",
    "build_beamformers",
    "UrllcParams",
    "LinkCoefficients",
    "link_coefficients",
    "sinr_vector",
    "urllc_rate",
    "FeasibleSet",
    "ProblemSpec",
    "SolveReport",
    "initialize_alpha",
    "run_sco",
    "RunConfig",
    "SweepTuple",
    "run_experiment",
    "write_outputs",
    "likely_rate_95",
]
