"""Link-level simulator and optimizer for a window-mounted refracting
surface serving in-carriage users from a trackside base station, with
finite-blocklength reliability targets."""

__version__ = "0.1.0"

from .baselines import RunResult, SchemeId, run_scheme
from .channel import ArraySpec, ChannelSet, FadingParams, synthesize
from .experiments import (ExperimentConfig, SweepResult, SystemConfig, emit,
                          load_config, load_result, run_sweep)
from .geometry import LinkGeometry, SceneConfig, advance, derive_geometry
from .rate import (LinkState, PhaseConfig, RateParams, dispersion, fbl_rate,
                   fbl_rate_high_snr, q_inv, sum_rate)
from .solver import (SolverConfig, SolverState, alternating_optimize,
                     complexity_counters, fix_pep, phase_local_search,
                     power_allocation, zf_beamformer)

__all__ = [
    "ArraySpec", "ChannelSet", "ExperimentConfig", "FadingParams",
    "LinkGeometry", "LinkState", "PhaseConfig", "RateParams", "RunResult",
    "SceneConfig", "SchemeId", "SolverConfig", "SolverState", "SweepResult",
    "SystemConfig", "advance", "alternating_optimize", "complexity_counters",
    "derive_geometry", "dispersion", "emit", "fbl_rate", "fbl_rate_high_snr",
    "fix_pep", "load_config", "load_result", "phase_local_search",
    "power_allocation", "q_inv", "run_scheme", "run_sweep", "sum_rate",
    "synthesize", "zf_beamformer",
]
