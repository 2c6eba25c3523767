"""Comparison schemes, each producing the same result record as the
optimized pipeline on an identical channel realization."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet
from .rate import PhaseConfig, RateParams, combined_channel_matrix, sum_rate
from .solver import (SolverConfig, allocate_power_bisect, alternating_optimize,
                     beamforming_costs, zf_pseudoinverse)


class SchemeId(enum.Enum):
    PROPOSED = "Proposed"
    IDEAL_PHASE = "IdealPhase"
    SHANNON_RATE = "ShannonRate"
    SHANNON_IDEAL_PHASE = "ShannonIdealPhase"
    BINARY_SEARCH = "BinarySearch"
    RANDOM_PHASE = "RandomPhase"
    WITHOUT_RIS = "WithoutRIS"

    @staticmethod
    def parse(label: str) -> "SchemeId":
        wanted = label.replace("_", "").replace("-", "").lower()
        for scheme in SchemeId:
            if scheme.value.lower() == wanted:
                return scheme
        raise ValueError(f"unknown scheme {label!r}")


@dataclass(frozen=True)
class RunResult:
    """Outcome of one scheme on one channel realization."""

    scheme: SchemeId
    sum_rate: float               # clamped per-user sum, as reported
    user_rates: np.ndarray        # unclamped
    sinr: np.ndarray
    powers: np.ndarray
    mu: float
    theta: PhaseConfig
    trace: np.ndarray
    converged: bool
    outer_iterations: int
    inner_iterations: int
    phase_evaluations: int


def reference_user(ch: ChannelSet) -> int:
    """User with the strongest direct channel; the co-phasing target."""
    return int(np.argmax(np.sum(np.abs(ch.direct) ** 2, axis=1)))


def ideal_phase(ch: ChannelSet, beamformer: np.ndarray,
                user: int | None = None) -> PhaseConfig:
    """Continuous phases aligning every surface term with the direct term of
    the reference user.

    Each element's phase cancels its own term's rotation so all contributions
    add coherently with the direct path; zero-magnitude terms contribute a
    zero angle.
    """
    m = reference_user(ch) if user is None else user
    w_m = beamformer[:, m]
    direct_term = ch.direct[m].conj() @ w_m
    via_bs = ch.bs_ris @ w_m                    # (F,)
    weights = ch.ris_user[m].conj()             # (F,)
    phases = np.angle(direct_term) - np.angle(weights) - np.angle(via_bs)
    return PhaseConfig(phases=phases, bits=None)


def random_phase(num_elements: int, rng: np.random.Generator) -> PhaseConfig:
    """Uniform continuous phases in [0, 2 pi), kept fixed afterwards."""
    return PhaseConfig(phases=rng.uniform(0.0, 2.0 * np.pi, num_elements),
                       bits=None)


def strip_ris(ch: ChannelSet) -> ChannelSet:
    """Channel set with the surface path removed."""
    return ChannelSet(direct=ch.direct, bs_ris=np.zeros_like(ch.bs_ris),
                      ris_user=ch.ris_user)


def binary_search_allocation(ch: ChannelSet, theta: PhaseConfig,
                             cfg: SolverConfig, params: RateParams):
    """Bisection-based power allocation on the current combined channel."""
    w_tilde = zf_pseudoinverse(combined_channel_matrix(ch, theta), cfg.cond_limit)
    return allocate_power_bisect(beamforming_costs(w_tilde), cfg)


def run_scheme(scheme: SchemeId, ch: ChannelSet, cfg: SolverConfig,
               params: RateParams, phase_bits: int,
               theta0: PhaseConfig | None = None,
               fixed_random_phases: PhaseConfig | None = None,
               rng: np.random.Generator | None = None) -> RunResult:
    """Run one scheme and report its final operating point.

    All schemes share the channel realization; trajectory randomness enters
    only through ``theta0`` (optimized schemes) and ``fixed_random_phases``.
    """
    shannon = scheme in (SchemeId.SHANNON_RATE, SchemeId.SHANNON_IDEAL_PHASE)
    kwargs = dict(shannon=shannon, theta0=theta0)

    if scheme in (SchemeId.PROPOSED, SchemeId.SHANNON_RATE):
        state = alternating_optimize(ch, cfg, params, phase_bits, rng, **kwargs)
    elif scheme == SchemeId.BINARY_SEARCH:
        state = alternating_optimize(ch, cfg, params, phase_bits, rng,
                                     allocator=allocate_power_bisect, **kwargs)
    elif scheme in (SchemeId.IDEAL_PHASE, SchemeId.SHANNON_IDEAL_PHASE):
        state = alternating_optimize(ch, cfg, params, phase_bits, rng,
                                     phase_step=ideal_phase, **kwargs)
    elif scheme == SchemeId.RANDOM_PHASE:
        if fixed_random_phases is None:
            if rng is None:
                raise ValueError("random-phase scheme needs phases or a generator")
            fixed_random_phases = random_phase(ch.num_elements, rng)
        state = alternating_optimize(ch, cfg, params, phase_bits, None,
                                     shannon=shannon, theta0=fixed_random_phases,
                                     phase_step="fixed")
    elif scheme == SchemeId.WITHOUT_RIS:
        bare = strip_ris(ch)
        zero_theta = PhaseConfig(phases=np.zeros(ch.num_elements), bits=phase_bits)
        state = alternating_optimize(bare, cfg, params, phase_bits, None,
                                     shannon=shannon, theta0=zero_theta,
                                     phase_step="fixed")
        ch = bare
    else:
        raise ValueError(f"unhandled scheme {scheme}")

    params = replace(params, pep=state.pep)
    total, rates, gammas = sum_rate(ch, state.theta, state.beamformer, params,
                                    shannon=shannon)
    return RunResult(
        scheme=scheme,
        sum_rate=total,
        user_rates=rates,
        sinr=gammas,
        powers=state.powers,
        mu=state.mu,
        theta=state.theta,
        trace=state.trace,
        converged=state.converged,
        outer_iterations=state.op_counts["outer_iterations"],
        inner_iterations=state.op_counts["inner_iterations"],
        phase_evaluations=state.op_counts["phase_evaluations"],
    )
