"""Per-slot joint decision: alternate closed-form power control and phase design.

The per-slot cost is  -sum_k weight_k * rate_k + V * (transmit + element power).
Each outer round runs the phase design at the committed powers, then refreshes
the powers in closed form at the new phases, so every evaluated pair is
feasible (the rate never exceeds the per-slot backlog).  The loop stops when
the squared objective change falls below the tolerance.  A descent safeguard
rejects the rare non-improving round and keeps the incumbent instead, so the
recorded objective trace is non-increasing by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSlot
from .config import ScenarioConfig
from .phase_design import PhaseVector, design_phases
from .power_control import PowerDecision, optimal_power, rate


class EnumerationBudgetError(ValueError):
    """Exhaustive search requested beyond the configured enumeration budget."""


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-4
    max_outer: int = 30
    max_inner: int = 30

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be >= 1")

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "SolverSettings":
        return cls(tolerance=config.solver_tolerance,
                   max_outer=config.solver_max_outer,
                   max_inner=config.solver_max_inner)


@dataclass
class SlotDecision:
    power_w: np.ndarray
    rate_bps: np.ndarray
    phases: PhaseVector
    objective: float
    iterations: int
    converged: bool
    stop_reason: str = "tolerance"      # tolerance | safeguard | max_iterations
    objective_trace: list[float] = field(default_factory=list)
    evaluated: int | None = None        # candidate count (exhaustive search only)


def slot_objective(power_w, phases: PhaseVector, weights, slot: ChannelSlot,
                   config: ScenarioConfig) -> float:
    """-sum weight * rate + V * (sum power + static element power)."""
    h = slot.effective(phases.values)
    rates = rate(power_w, h, config.noise_power_w, config.bandwidth_hz)
    total = float(np.sum(power_w)) + config.static_power_w
    return float(-np.sum(np.asarray(weights) * rates) + config.control_param * total)


def solve_slot(weights, queue_bits, arrival_bits, slot: ChannelSlot,
               settings: SolverSettings, config: ScenarioConfig,
               warm_start: PhaseVector | None = None) -> SlotDecision:
    """Two-step alternating optimization of powers and discrete phases."""
    phases = warm_start.copy() if warm_start is not None \
        else PhaseVector.zeros(slot.num_elements, config.phase_bits)
    decision = optimal_power(weights, queue_bits, arrival_bits,
                             slot.effective(phases.values), config)
    objective = slot_objective(decision.power_w, phases, weights, slot, config)
    trace = [objective]
    converged = False
    reason = "max_iterations"
    iterations = 0
    for iterations in range(1, settings.max_outer + 1):
        result = design_phases(decision.power_w, weights, slot, phases, config,
                               tolerance=settings.tolerance, max_inner=settings.max_inner)
        new_phases = result.phases
        new_decision = optimal_power(weights, queue_bits, arrival_bits,
                                     slot.effective(new_phases.values), config)
        new_objective = slot_objective(new_decision.power_w, new_phases, weights, slot, config)
        if new_objective > objective:
            # no descent available from here; keep the incumbent
            converged = True
            reason = "safeguard"
            break
        phases, decision, objective = new_phases, new_decision, new_objective
        trace.append(objective)
        if (trace[-1] - trace[-2]) ** 2 < settings.tolerance:
            converged = True
            reason = "tolerance"
            break
    return SlotDecision(power_w=decision.power_w, rate_bps=decision.rate_bps,
                        phases=phases, objective=objective, iterations=iterations,
                        converged=converged, stop_reason=reason, objective_trace=trace)


def _closed_form_power_grid(weights, queue_bits, arrival_bits, gains,
                            config: ScenarioConfig):
    """Vectorized power optimum for a (candidates, devices) gain matrix.

    Mirrors the arithmetic of :func:`iovtsim.power_control.optimal_power` and
    :func:`iovtsim.power_control.rate` operation for operation, so objective
    values agree bit-for-bit when both paths land on the same phase vector.
    """
    noise = config.noise_power_w
    with np.errstate(invalid="ignore", over="ignore"):
        stat = weights[None, :] * config.bandwidth_hz / (config.control_param * math.log(2.0))
        inv_gain = np.where(gains > 0, noise / np.where(gains > 0, gains, 1.0), np.inf)
        exponent = (queue_bits + arrival_bits)[None, :] / (config.bandwidth_hz * config.slot_duration_s)
        cap = inv_gain * (np.exp2(np.minimum(exponent, 60.0)) - 1.0)
        cap = np.where(exponent > 60.0, np.inf, cap)
        power = np.minimum(np.minimum(np.maximum(stat - inv_gain, 0.0), cap), config.max_power_w)
        power = np.where(gains > 0, power, 0.0)
        rates = config.bandwidth_hz * np.log2(1.0 + power * gains / noise)
    return power, rates


def exhaustive_slot(weights, queue_bits, arrival_bits, slot: ChannelSlot,
                    config: ScenarioConfig, budget: int = 2 ** 20,
                    chunk: int = 4096) -> SlotDecision:
    """Global per-slot optimum by enumerating every discrete phase vector.

    Powers are closed-form per candidate (exactly optimal at fixed phases), so
    the enumeration covers the whole joint space.  Ties resolve to the first
    candidate in lexicographic index order.  Desk-scale only: refuses when the
    candidate count exceeds the budget.
    """
    levels = config.phase_levels
    count = slot.num_elements
    total = levels ** count
    if total > budget:
        raise EnumerationBudgetError(
            f"{levels}^{count} = {total} phase vectors exceed the budget of {budget}")

    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    queue_bits = np.atleast_1d(np.asarray(queue_bits, dtype=float))
    arrival_bits = np.atleast_1d(np.asarray(arrival_bits, dtype=float))
    delta = 2.0 * np.pi / levels
    place = levels ** np.arange(count - 1, -1, -1, dtype=np.int64)

    best_objective = np.inf
    best_index = 0
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        combo = (np.arange(start, stop, dtype=np.int64)[:, None] // place[None, :]) % levels
        values = np.exp(1j * delta * combo)
        if count:
            h = slot.direct[None, :] + values.conj() @ slot.cascaded
        else:
            h = np.broadcast_to(slot.direct, (stop - start, slot.num_devices))
        gains = np.abs(h) ** 2
        power, rates = _closed_form_power_grid(weights, queue_bits, arrival_bits, gains, config)
        objectives = -np.sum(weights[None, :] * rates, axis=1) \
            + config.control_param * (np.sum(power, axis=1) + config.static_power_w)
        local = int(np.argmin(objectives))
        if objectives[local] < best_objective:
            best_objective = float(objectives[local])
            best_index = start + local
    indices = ((best_index // place) % levels).astype(np.int64)
    phases = PhaseVector(indices=indices, bits=config.phase_bits)
    decision = optimal_power(weights, queue_bits, arrival_bits,
                             slot.effective(phases.values), config)
    objective = slot_objective(decision.power_w, phases, weights, slot, config)
    return SlotDecision(power_w=decision.power_w, rate_bps=decision.rate_bps,
                        phases=phases, objective=objective, iterations=1,
                        converged=True, stop_reason="exhaustive",
                        objective_trace=[objective], evaluated=total)
