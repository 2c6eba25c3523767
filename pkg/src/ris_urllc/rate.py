"""Rate kernels: combined channel, SINR, inverse Q-function and the
finite-blocklength achievable rate with its high-SINR approximation.

Rates are in bits per channel use.  The finite-blocklength expression can go
negative at low SINR; optimizers use it unclamped and reported sums clamp
per-user terms at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, ndtri

from .channel import ChannelSet

LOG2E = math.log2(math.e)
DISPERSION_SUP = LOG2E ** 2


@dataclass(frozen=True)
class PhaseConfig:
    """Per-element phase shifts with their quantization grid.

    ``bits=None`` marks a continuous configuration (ideal-phase baseline);
    otherwise every phase must sit on the grid {0, step, ..., step*(2^bits-1)}
    with step = 2 pi / 2^bits.
    """

    phases: np.ndarray
    bits: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float))
        if self.bits is not None:
            if self.bits < 1:
                raise ValueError("quantization needs at least one bit")
            on_grid = np.isclose(np.mod(self.phases / self.step, 1.0), 0.0, atol=1e-9)
            wrapped = np.isclose(np.mod(self.phases / self.step, 1.0), 1.0, atol=1e-9)
            if not np.all(on_grid | wrapped):
                raise ValueError("phases are not on the quantization grid")

    @property
    def size(self) -> int:
        return len(self.phases)

    @property
    def levels(self) -> int:
        if self.bits is None:
            raise ValueError("continuous configuration has no grid")
        return 2 ** self.bits

    @property
    def step(self) -> float:
        return 2.0 * np.pi / self.levels

    def grid(self) -> np.ndarray:
        return self.step * np.arange(self.levels)

    @staticmethod
    def zeros(size: int, bits: int) -> "PhaseConfig":
        return PhaseConfig(phases=np.zeros(size), bits=bits)

    @staticmethod
    def random_on_grid(size: int, bits: int, rng: np.random.Generator) -> "PhaseConfig":
        step = 2.0 * np.pi / 2 ** bits
        return PhaseConfig(phases=step * rng.integers(0, 2 ** bits, size=size), bits=bits)


@dataclass(frozen=True)
class RateParams:
    """Blocklength, per-user error probabilities and noise power."""

    blocklength: float
    pep: np.ndarray
    pep_max: float
    noise_power: float

    def __post_init__(self):
        object.__setattr__(self, "pep", np.asarray(self.pep, dtype=float))
        if self.blocklength < 1:
            raise ValueError("blocklength must be at least 1")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")
        if not (0.0 < self.pep_max < 1.0):
            raise ValueError("maximum PEP must lie in (0, 1)")
        if np.any(self.pep <= 0.0) or np.any(self.pep > self.pep_max):
            raise ValueError("per-user PEPs must lie in (0, pep_max]")


@dataclass(frozen=True)
class LinkState:
    """Operating point of one scheme: beamformer, SINRs and rates."""

    beamformer: np.ndarray        # (N_B, M)
    sinr: np.ndarray              # (M,)
    user_rates: np.ndarray        # (M,), unclamped
    sum_rate: float               # clamped per-user sum

    num_users: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_users", len(self.sinr))
        if np.any(self.sinr < 0):
            raise ValueError("SINRs must be nonnegative")


def phase_rotations(theta: PhaseConfig) -> np.ndarray:
    return np.exp(1j * theta.phases)


def equivalent_channel(ch: ChannelSet, theta: PhaseConfig, m: int) -> np.ndarray:
    """Combined row h_m = h_direct^H + h_ris_user^H diag(e^{j theta}) H_bs_ris."""
    rot = phase_rotations(theta)
    return ch.direct[m].conj() + (ch.ris_user[m].conj() * rot) @ ch.bs_ris


def combined_channel_matrix(ch: ChannelSet, theta: PhaseConfig) -> np.ndarray:
    """All combined rows stacked, (M, N_B)."""
    rot = phase_rotations(theta)
    return ch.direct.conj() + (ch.ris_user.conj() * rot) @ ch.bs_ris


def sinr(ch: ChannelSet, theta: PhaseConfig, beamformer: np.ndarray, m: int,
         noise_power: float) -> float:
    """|h_m w_m|^2 over interference from the other columns plus noise."""
    h_m = equivalent_channel(ch, theta, m)
    gains = np.abs(h_m @ beamformer) ** 2
    signal = gains[m]
    interference = float(np.sum(gains) - signal)
    return float(signal / (interference + noise_power))


def q_function(x) -> np.ndarray | float:
    """Upper tail of the standard normal."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_inv(eps):
    """Inverse of the Gaussian Q-function.

    Rational approximation of the normal quantile refined with one Newton
    step on the tail integral.
    """
    eps_arr = np.asarray(eps, dtype=float)
    if np.any(eps_arr <= 0.0) or np.any(eps_arr >= 1.0):
        raise ValueError("Q-function argument must lie in (0, 1)")
    x = -ndtri(eps_arr)
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    residual = q_function(x) - eps_arr
    x = np.where(pdf > 0.0, x + residual / np.maximum(pdf, np.finfo(float).tiny), x)
    return float(x) if np.isscalar(eps) or np.ndim(eps) == 0 else x


def dispersion(gamma):
    """Channel dispersion (log2 e)^2 (1 - (1 + gamma)^-2), in [0, (log2 e)^2)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be nonnegative")
    v = DISPERSION_SUP * (1.0 - (1.0 + g) ** -2)
    return float(v) if np.ndim(gamma) == 0 else v


def fbl_rate(gamma, blocklength: float, eps, *, shannon: bool = False):
    """Normal-approximation achievable rate
    log2(1 + gamma) - sqrt(V/L) Qinv(eps); may be negative.

    ``shannon=True`` forces the dispersion term to zero.
    """
    g = np.asarray(gamma, dtype=float)
    cap = np.log2(1.0 + g)
    if shannon:
        return float(cap) if np.ndim(gamma) == 0 else cap
    penalty = np.sqrt(dispersion(g) / blocklength) * q_inv(eps)
    out = cap - penalty
    return float(out) if np.ndim(gamma) == 0 else out


def fbl_rate_high_snr(gamma, blocklength: float, eps):
    """High-SINR form log2(gamma) - Qinv(eps) log2(e) / sqrt(L)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g <= 0):
        raise ValueError("high-SINR rate requires a positive SINR")
    out = np.log2(g) - q_inv(eps) * LOG2E / np.sqrt(blocklength)
    return float(out) if np.ndim(gamma) == 0 else out


def user_sinrs(ch: ChannelSet, theta: PhaseConfig, beamformer: np.ndarray,
               noise_power: float) -> np.ndarray:
    """All users' SINRs at one operating point."""
    h = combined_channel_matrix(ch, theta)
    gains = np.abs(h @ beamformer) ** 2          # (M, M)
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)


def sum_rate(ch: ChannelSet, theta: PhaseConfig, beamformer: np.ndarray,
             params: RateParams, *, shannon: bool = False):
    """Clamped sum rate plus the unclamped per-user breakdown."""
    gammas = user_sinrs(ch, theta, beamformer, params.noise_power)
    rates = fbl_rate(gammas, params.blocklength, params.pep, shannon=shannon)
    return float(np.sum(np.maximum(rates, 0.0))), rates, gammas
