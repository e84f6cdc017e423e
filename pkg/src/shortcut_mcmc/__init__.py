"""Diffusion models trained with a shortcut-MCMC fidelity loss for few-step sampling."""

from .data import PointSet, generate_swirl, load_points, save_points
from .diffusion import (
    ChainSpec,
    ChainState,
    LossReport,
    ancestral_step,
    chain_backward,
    eps_loss,
    fidelity_loss,
    forward_noise,
    inference_spec,
    posterior_mean,
    predict_x0,
    prior_kl,
    run_chain,
    sample_full,
    sample_shortcut,
    shortcut_step,
)
from .errors import ConfigError, NumericError, ParseError
from .evaluation import MetricReport, chamfer, energy_distance
from .net import AdamState, DenoiserNet, NetConfig, adam_step, featurize
from .schedule import NoiseSchedule, ScheduleConfig, build_schedule, posterior_variance, transition_coeffs

__version__ = "0.1.0"
