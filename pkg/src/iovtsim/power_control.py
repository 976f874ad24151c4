"""Closed-form uplink power control for fixed reflection phases.

The per-device cost  -weight * rate(p) + V * p  is convex in p, so the
optimum is the stationary point clipped by three caps: non-negativity, the
power that exactly drains the backlog within one slot, and the hardware
maximum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

LN2 = math.log(2.0)

# beyond this exponent 2**x overflows any realistic power; the drain cap can
# never bind, so it is treated as +inf
_EXPONENT_GUARD = 60.0


class DeadChannelError(ValueError):
    """Channel gain is exactly zero; transmit power has no effect."""


@dataclass(frozen=True)
class PowerDecision:
    """Committed transmit powers and the rates they achieve."""

    power_w: np.ndarray
    rate_bps: np.ndarray

    @property
    def total_power_w(self) -> float:
        return float(np.sum(self.power_w))


def rate(power_w, channel, noise_w: float, bandwidth_hz: float):
    """Shannon rate B * log2(1 + p|h|^2 / sigma^2) in bits/s."""
    gain = np.abs(np.asarray(channel)) ** 2
    return bandwidth_hz * np.log2(1.0 + np.asarray(power_w) * gain / noise_w)


def unconstrained_minimizer(weight, bandwidth_hz: float, control_v: float,
                            channel, noise_w: float):
    """Stationary point of the per-device cost; may be negative."""
    gain = np.abs(np.asarray(channel)) ** 2
    if np.any(gain <= 0):
        raise DeadChannelError("zero channel gain")
    return np.asarray(weight) * bandwidth_hz / (control_v * LN2) - noise_w / gain


def rate_cap_power(queue_bits, arrival_bits, bandwidth_hz: float, slot_s: float,
                   channel, noise_w: float):
    """Power at which the slot rate exactly drains Q + A; +inf when that overflows."""
    gain = np.abs(np.asarray(channel)) ** 2
    if np.any(gain <= 0):
        raise DeadChannelError("zero channel gain")
    exponent = (np.asarray(queue_bits, dtype=float) + arrival_bits) / (bandwidth_hz * slot_s)
    capped = np.minimum(exponent, _EXPONENT_GUARD)
    out = noise_w / gain * (np.exp2(capped) - 1.0)
    return np.where(exponent > _EXPONENT_GUARD, np.inf, out)


def optimal_power(weight, queue_bits, arrival_bits, channel,
                  config: ScenarioConfig) -> PowerDecision:
    """min{max{0, stationary point}, drain cap, hardware max}, vectorized over devices.

    Devices with zero channel gain transmit nothing.
    """
    weight = np.atleast_1d(np.asarray(weight, dtype=float))
    queue_bits = np.atleast_1d(np.asarray(queue_bits, dtype=float))
    arrival_bits = np.atleast_1d(np.asarray(arrival_bits, dtype=float))
    channel = np.atleast_1d(np.asarray(channel, dtype=np.complex128))

    gain = np.abs(channel) ** 2
    noise = config.noise_power_w
    power = np.zeros_like(weight)
    alive = gain > 0
    if np.any(alive):
        p_stat = weight[alive] * config.bandwidth_hz / (config.control_param * LN2) \
            - noise / gain[alive]
        exponent = (queue_bits[alive] + arrival_bits[alive]) / (config.bandwidth_hz * config.slot_duration_s)
        p_cap = np.where(exponent > _EXPONENT_GUARD, np.inf,
                         noise / gain[alive] * (np.exp2(np.minimum(exponent, _EXPONENT_GUARD)) - 1.0))
        power[alive] = np.minimum(np.minimum(np.maximum(p_stat, 0.0), p_cap), config.max_power_w)
    rate_bps = np.zeros_like(power)
    rate_bps[alive] = rate(power[alive], channel[alive], noise, config.bandwidth_hz)
    return PowerDecision(power_w=power, rate_bps=rate_bps)
