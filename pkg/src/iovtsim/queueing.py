"""Traffic arrivals, queue dynamics, and delay accounting.

Queues hold bits; delays are seconds.  The per-slot delay proxy is Little's
law, queue over running-average arrival rate, scaled by the slot length.  The
virtual delay queue accumulates threshold excess in seconds.  Inside the
per-slot weight the delay backlog re-enters in slot units (seconds / slot
length), which keeps the weight commensurate with the queue terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


class UndefinedDelayError(ValueError):
    """Backlogged queue with no recorded arrival rate; delay is undefined."""


@dataclass
class NetworkState:
    """Mutable per-run queue state, one entry per device."""

    queue_bits: np.ndarray         # real queue Q at the start of the slot
    delay_backlog_s: np.ndarray    # virtual delay queue D
    avg_arrival_bits: np.ndarray   # running mean arrival per slot
    last_arrival_bits: np.ndarray  # arrivals revealed this slot
    current_delay_s: np.ndarray    # Little's-law delay of this slot
    slot: int = 0

    @property
    def num_devices(self) -> int:
        return self.queue_bits.shape[0]


def initial_state(num_devices: int) -> NetworkState:
    """Empty system: queues, backlogs, and averages all zero."""
    zeros = lambda: np.zeros(num_devices)
    return NetworkState(queue_bits=zeros(), delay_backlog_s=zeros(),
                        avg_arrival_bits=zeros(), last_arrival_bits=zeros(),
                        current_delay_s=zeros(), slot=0)


def sample_arrivals(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Integer bit arrivals, i.i.d. uniform on [min, max] per device."""
    return rng.integers(config.arrival_min_bits, config.arrival_max_bits + 1,
                        size=config.num_devices).astype(np.float64)


def queue_update(queue_bits, arrival_bits, rate_bps, slot_s: float):
    """max{Q + A - R*tau, 0}."""
    return np.maximum(np.asarray(queue_bits, dtype=float) + arrival_bits - np.asarray(rate_bps) * slot_s, 0.0)


def slot_delay(queue_bits, avg_arrival_bits, slot_s: float):
    """Little's-law delay in seconds: (Q / avg-arrivals) * tau; zero for empty queues."""
    queue = np.atleast_1d(np.asarray(queue_bits, dtype=float))
    avg = np.atleast_1d(np.asarray(avg_arrival_bits, dtype=float))
    bad = (queue > 0) & (avg <= 0)
    if np.any(bad):
        raise UndefinedDelayError("positive backlog with zero average arrival rate")
    out = np.zeros_like(queue)
    busy = queue > 0
    out[busy] = queue[busy] / avg[busy] * slot_s
    return out if np.ndim(queue_bits) else float(out[0])


def virtual_queue_update(backlog_s, threshold_s: float, next_delay_s):
    """max{D - d_th + d', 0}."""
    return np.maximum(np.asarray(backlog_s, dtype=float) - threshold_s + next_delay_s, 0.0)


def running_average_update(avg, new_value, slot: int):
    """Incremental mean over slots 1..t."""
    if slot < 1:
        raise ValueError(f"slot index must be >= 1, got {slot}")
    avg = np.asarray(avg, dtype=float)
    return avg + (np.asarray(new_value) - avg) / slot


def slot_weight(state: NetworkState, slot_s: float) -> np.ndarray:
    """Per-device queue-pressure weight of the per-slot objective.

    weight = avg^-2 * (Q + A + avg * D/tau) * tau.  The delay backlog enters
    in slot units (D/tau) so the three pressure terms all count bits.  Devices
    that have never seen traffic carry zero weight; a zero average with
    nonzero pressure is an error.
    """
    avg = state.avg_arrival_bits
    pressure = state.queue_bits + state.last_arrival_bits \
        + avg * (state.delay_backlog_s / slot_s)
    out = np.zeros_like(pressure)
    live = avg > 0
    if np.any(~live & (pressure > 0)):
        raise UndefinedDelayError("nonzero queue pressure with zero average arrival rate")
    out[live] = pressure[live] / avg[live] ** 2 * slot_s
    return out


def advance_arrivals(state: NetworkState, arrivals_bits: np.ndarray) -> None:
    """Reveal this slot's arrivals: bump the slot index and the running mean."""
    state.slot += 1
    state.avg_arrival_bits = running_average_update(state.avg_arrival_bits, arrivals_bits, state.slot)
    state.last_arrival_bits = np.asarray(arrivals_bits, dtype=float)


def apply_service(state: NetworkState, rate_bps: np.ndarray, config: ScenarioConfig) -> None:
    """Serve the committed rates, then roll Q, d, and D to the next slot."""
    tau = config.slot_duration_s
    next_queue = queue_update(state.queue_bits, state.last_arrival_bits, rate_bps, tau)
    next_delay = slot_delay(next_queue, state.avg_arrival_bits, tau)
    state.delay_backlog_s = virtual_queue_update(state.delay_backlog_s,
                                                 config.delay_threshold_s, next_delay)
    state.queue_bits = next_queue
    state.current_delay_s = np.atleast_1d(np.asarray(next_delay))
