"""Joint beamforming, power and phase optimizer.

Blocks: worst-case error probabilities are fixed at their cap (raising any of
them only raises the rate), the beamformer is channel-inverting with a power
diagonal, powers come from a projected-subgradient dual loop with a calibrated
diminishing step, phases from a one-pass coordinate search over the
quantization grid, and an outer loop alternates the two until the sum rate
settles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet
from .rate import (PhaseConfig, RateParams, combined_channel_matrix, fbl_rate,
                   q_inv, user_sinrs, DISPERSION_SUP)

LN2 = math.log(2.0)


class SingularChannelError(RuntimeError):
    """Combined channel matrix too ill-conditioned for inversion."""


class BracketError(RuntimeError):
    """Bisection bracket for the multiplier could not be established."""


@dataclass(frozen=True)
class SolverConfig:
    """Budget, iteration caps and convergence thresholds."""

    p_max: float
    inner_max: int = 500          # multiplier iterations per power allocation
    eps_p: float = 1e-7           # multiplier convergence threshold
    xi: float = 1e-5              # outer sum-rate convergence threshold
    outer_max: int = 100
    mu0: float | None = None      # default: 0.8x the closed-form multiplier
    omega0: float | None = None   # default: calibrated, first move <= 50%
    cond_limit: float = 1e6

    def __post_init__(self):
        if self.p_max <= 0:
            raise ValueError("power budget must be positive")
        if min(self.eps_p, self.xi) <= 0:
            raise ValueError("convergence thresholds must be positive")
        if self.inner_max < 1 or self.outer_max < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    mu: float
    iterations: int
    converged: bool
    residual: float   # |consumed - budget| / budget at the returned powers


@dataclass(frozen=True)
class SolverState:
    """Final iterate of one optimizer run plus its operation counters."""

    beamformer: np.ndarray
    powers: np.ndarray
    mu: float
    theta: PhaseConfig
    pep: np.ndarray
    trace: np.ndarray
    converged: bool
    op_counts: dict

    @property
    def outer_iterations(self) -> int:
        return int(self.op_counts["outer_iterations"])


def fix_pep(pep_max: float, num_users: int) -> np.ndarray:
    """Worst-case-optimal error probabilities: every user at the cap."""
    if not (0.0 < pep_max < 1.0):
        raise ValueError("maximum PEP must lie in (0, 1)")
    return np.full(num_users, pep_max, dtype=float)


def zf_pseudoinverse(h_matrix: np.ndarray, cond_limit: float = 1e6) -> np.ndarray:
    """Right pseudo-inverse H^H (H H^H)^-1 of the stacked channel rows."""
    h_matrix = np.asarray(h_matrix, dtype=complex)
    m, n = h_matrix.shape
    if n < m:
        raise SingularChannelError(
            f"need at least as many antennas as users ({n} < {m})")
    cond = np.linalg.cond(h_matrix)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularChannelError(
            f"combined channel condition number {cond:.3e} exceeds the "
            f"{cond_limit:.0e} limit")
    gram = h_matrix @ h_matrix.conj().T
    return h_matrix.conj().T @ np.linalg.inv(gram)


def beamforming_costs(w_tilde: np.ndarray) -> np.ndarray:
    """Per-user squared column norms of the pseudo-inverse."""
    return np.sum(np.abs(w_tilde) ** 2, axis=0).real


def zf_beamformer(ch: ChannelSet, theta: PhaseConfig, powers: np.ndarray,
                  cond_limit: float = 1e6) -> np.ndarray:
    """Channel-inverting beamformer scaled to the allocated powers."""
    w_tilde = zf_pseudoinverse(combined_channel_matrix(ch, theta), cond_limit)
    return w_tilde * np.sqrt(np.asarray(powers, dtype=float))


def allocate_power_dual(costs: np.ndarray, cfg: SolverConfig) -> PowerAllocation:
    """Projected-subgradient loop on the power-budget multiplier.

    Powers follow the stationarity rule p_m = 1 / (mu c_m ln 2); the
    multiplier moves against the budget residual with a diminishing step
    omega0 / sqrt(t + 1).  omega0 defaults to the inverse curvature of the
    consumed power at the start, capped so the first move changes mu by at
    most 50%.
    """
    costs = np.asarray(costs, dtype=float)
    if np.any(costs <= 0):
        raise ValueError("beamforming costs must be positive")
    m = len(costs)
    mu = cfg.mu0 if cfg.mu0 is not None else 0.8 * m / (cfg.p_max * LN2)
    if mu <= 0:
        raise ValueError("initial multiplier must be positive")

    omega0 = cfg.omega0
    if omega0 is None:
        omega0 = mu * mu * LN2 / m
        first_grad = cfg.p_max - m / (mu * LN2)
        if omega0 * abs(first_grad) > 0.5 * mu and first_grad != 0.0:
            omega0 = 0.5 * mu / abs(first_grad)

    powers = np.maximum(1.0 / (mu * costs * LN2), 0.0)
    converged = False
    iterations = 0
    for t in range(cfg.inner_max):
        powers = np.maximum(1.0 / (mu * costs * LN2), 0.0)
        consumed = float(powers @ costs)
        step = omega0 / math.sqrt(t + 1.0)
        mu_next = mu - step * (cfg.p_max - consumed)
        if mu_next <= 0.0:
            mu_next = 0.5 * mu
        iterations = t + 1
        if abs(mu_next - mu) < cfg.eps_p:
            converged = True
            break
        mu = mu_next

    residual = abs(float(powers @ costs) - cfg.p_max) / cfg.p_max
    return PowerAllocation(powers=powers, mu=mu, iterations=iterations,
                           converged=converged, residual=residual)


def allocate_power_bisect(costs: np.ndarray, cfg: SolverConfig,
                          max_doublings: int = 60) -> PowerAllocation:
    """Bisection on the multiplier until the budget residual is below eps_p.

    Consumed power is strictly decreasing in the multiplier, so a bracket
    [mu_lo, mu_hi] with overspend on the left and underspend on the right
    pins the root.  mu_hi starts at the closed-form estimate and doubles until
    the underspend side is found.
    """
    costs = np.asarray(costs, dtype=float)
    if np.any(costs <= 0):
        raise ValueError("beamforming costs must be positive")
    m = len(costs)

    def consumed(mu: float) -> float:
        return float(np.maximum(1.0 / (mu * costs * LN2), 0.0) @ costs)

    mu_hat = m / (cfg.p_max * LN2)
    mu_lo = 1e-12 * mu_hat
    mu_hi = mu_hat
    for _ in range(max_doublings):
        if consumed(mu_hi) < cfg.p_max:
            break
        mu_hi *= 2.0
    else:
        raise BracketError("could not bracket the power-budget multiplier")

    mu = 0.5 * (mu_lo + mu_hi)
    iterations = 0
    converged = False
    for _ in range(200):
        mu = 0.5 * (mu_lo + mu_hi)
        iterations += 1
        c = consumed(mu)
        if abs(c - cfg.p_max) / cfg.p_max < cfg.eps_p:
            converged = True
            break
        if c > cfg.p_max:
            mu_lo = mu
        else:
            mu_hi = mu

    powers = np.maximum(1.0 / (mu * costs * LN2), 0.0)
    residual = abs(float(powers @ costs) - cfg.p_max) / cfg.p_max
    return PowerAllocation(powers=powers, mu=mu, iterations=iterations,
                           converged=converged, residual=residual)


def power_allocation(ch: ChannelSet, theta: PhaseConfig, cfg: SolverConfig,
                     params: RateParams) -> PowerAllocation:
    """Dual-loop power allocation on the current combined channel."""
    w_tilde = zf_pseudoinverse(combined_channel_matrix(ch, theta), cfg.cond_limit)
    return allocate_power_dual(beamforming_costs(w_tilde), cfg)


def _phase_search_terms(ch: ChannelSet, beamformer: np.ndarray):
    """Base matrix and per-element additive terms of h_m w_j as functions of
    the element phases."""
    base = ch.direct.conj() @ beamformer                      # (M, M)
    via_bs = ch.bs_ris @ beamformer                           # (F, M)
    weights = ch.ris_user.conj().T                            # (F, M)
    per_element = weights[:, :, None] * via_bs[:, None, :]    # (F, M, M)
    return base, per_element


def _batched_sum_rate(s_batch: np.ndarray, params: RateParams,
                      qinv_pep: np.ndarray, shannon: bool) -> np.ndarray:
    """Unclamped sum rate for a batch of effective-gain matrices (..., M, M)."""
    gains = np.abs(s_batch) ** 2
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    gamma = signal / (interference + params.noise_power)
    rates = np.log2(1.0 + gamma)
    if not shannon:
        v = DISPERSION_SUP * (1.0 - (1.0 + gamma) ** -2)
        rates = rates - np.sqrt(v / params.blocklength) * qinv_pep
    return rates.sum(axis=-1)


def phase_local_search(ch: ChannelSet, beamformer: np.ndarray,
                       params: RateParams, phase0: PhaseConfig, *,
                       shannon: bool = False) -> tuple[PhaseConfig, int]:
    """One full coordinate pass over the grid.

    Every element in turn tries all grid levels with the others held fixed
    and keeps the sum-rate maximizer (first grid index wins exact ties), for
    exactly F * E objective evaluations.  Returns the new configuration and
    the evaluation count.
    """
    if phase0.bits is None:
        raise ValueError("local search needs a quantized phase configuration")
    grid = phase0.grid()
    phases = phase0.phases.copy()
    num_elements = phase0.size
    qinv_pep = q_inv(params.pep)

    base, per_element = _phase_search_terms(ch, beamformer)
    rotations = np.exp(1j * phases)
    current = base + np.tensordot(rotations, per_element, axes=(0, 0))

    candidates = np.exp(1j * grid)                            # (E,)
    evaluations = 0
    for f in range(num_elements):
        delta = candidates - np.exp(1j * phases[f])           # (E,)
        trials = current[None, :, :] + delta[:, None, None] * per_element[f]
        objective = _batched_sum_rate(trials, params, qinv_pep, shannon)
        best = int(np.argmax(objective))
        current = trials[best]
        phases[f] = grid[best]
        evaluations += len(grid)

    return PhaseConfig(phases=phases, bits=phase0.bits), evaluations


def unclamped_objective(ch: ChannelSet, theta: PhaseConfig,
                        beamformer: np.ndarray, params: RateParams,
                        shannon: bool = False) -> float:
    """Optimizer objective: per-user rates summed without clamping."""
    gammas = user_sinrs(ch, theta, beamformer, params.noise_power)
    rates = fbl_rate(gammas, params.blocklength, params.pep, shannon=shannon)
    return float(np.sum(rates))


def alternating_optimize(ch: ChannelSet, cfg: SolverConfig, params: RateParams,
                         phase_bits: int, rng: np.random.Generator | None = None,
                         *, shannon: bool = False, theta0: PhaseConfig | None = None,
                         phase_step=None, allocator=allocate_power_dual) -> SolverState:
    """Alternate power/beamforming and phase updates until the sum rate
    settles.

    One outer iteration recomputes the beamformer for the current phases and
    then runs one phase update given that beamformer.  The loop stops when
    consecutive objectives differ by less than xi, or immediately when a phase
    update returns the configuration unchanged (the next iterate would then
    repeat exactly).  ``phase_step=None`` with ``phase_bits`` selects the grid
    search; pass a callable ``(ch, beamformer) -> PhaseConfig`` to substitute
    e.g. the co-phasing rule, or ``"fixed"`` to keep the initial phases.
    """
    num_elements = ch.num_elements
    pep = fix_pep(params.pep_max, ch.num_users)
    params = replace(params, pep=pep)

    if theta0 is not None:
        theta = theta0
    elif num_elements == 0:
        theta = PhaseConfig(phases=np.zeros(0), bits=phase_bits)
    else:
        if rng is None:
            raise ValueError("random initial phases need a generator")
        theta = PhaseConfig.random_on_grid(num_elements, phase_bits, rng)

    trace: list[float] = []
    inner_total = 0
    phase_evaluations = 0
    converged = False
    beamformer = None
    alloc = None

    for outer in range(1, cfg.outer_max + 1):
        w_tilde = zf_pseudoinverse(combined_channel_matrix(ch, theta),
                                   cfg.cond_limit)
        alloc = allocator(beamforming_costs(w_tilde), cfg)
        beamformer = w_tilde * np.sqrt(alloc.powers)
        inner_total += alloc.iterations

        if phase_step == "fixed" or num_elements == 0:
            theta_next = theta
        elif phase_step is None:
            theta_next, evals = phase_local_search(ch, beamformer, params,
                                                   theta, shannon=shannon)
            phase_evaluations += evals
        else:
            theta_next = phase_step(ch, beamformer)

        trace.append(unclamped_objective(ch, theta_next, beamformer, params,
                                         shannon=shannon))

        phases_stable = (theta_next.size == theta.size
                         and np.array_equal(theta_next.phases, theta.phases))
        theta = theta_next
        if phases_stable:
            converged = True
            break
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < cfg.xi:
            converged = True
            break

    return SolverState(
        beamformer=beamformer,
        powers=alloc.powers,
        mu=alloc.mu,
        theta=theta,
        pep=pep,
        trace=np.asarray(trace),
        converged=converged,
        op_counts={
            "inner_iterations": inner_total,
            "phase_evaluations": phase_evaluations,
            "outer_iterations": len(trace),
        },
    )


def complexity_counters(state: SolverState) -> dict:
    """Measured work of a completed run."""
    return dict(state.op_counts)
