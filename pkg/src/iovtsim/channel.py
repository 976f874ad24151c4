"""Per-slot Rician fading channels.

Large-scale loss is a power-domain quantity; fading draws apply its square
root in the amplitude domain so that E|h|^2 tracks the link budget.

Cascade convention: the reflected path of device k through all surfaces is the
vector ``h_c[:, k]`` with entries ``conj(f) * g`` (incident leg conjugated),
so the effective scalar channel is ``h_d + v^H h_c`` for a unit-modulus phase
vector ``v``.  Equivalently, element n applies the physical reflection
coefficient ``conj(v_n)``; the discrete phase set is closed under conjugation,
so the optimizer sees no difference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ChannelParams, Geometry, InvalidGeometryError, ScenarioConfig

SQRT_HALF = 1.0 / math.sqrt(2.0)


def pathloss(params: ChannelParams, distance: float) -> float:
    """Power-domain large-scale gain L0 * (d / D0)^(-exponent)."""
    if distance <= 0:
        raise InvalidGeometryError(f"link distance must be > 0, got {distance}")
    return params.reference_loss * (distance / params.reference_distance) ** (-params.pathloss_exponent)


def amplitude_gain(params: ChannelParams, distance: float) -> float:
    return math.sqrt(pathloss(params, distance))


def los_steering(n_x: int, n_y: int, azimuth: float, elevation: float,
                 spacing_over_wavelength: float = 0.5) -> np.ndarray:
    """Planar-array response a_x(elevation) kron a_y(azimuth, elevation).

    Half-wavelength spacing by default, so the per-element phase increments
    are psi = 2*pi*s*cos(elevation) along x and chi = 2*pi*s*sin(elevation)*
    cos(azimuth) along y.  Every entry has unit modulus.
    """
    psi = 2.0 * math.pi * spacing_over_wavelength * math.cos(elevation)
    chi = 2.0 * math.pi * spacing_over_wavelength * math.sin(elevation) * math.cos(azimuth)
    a_x = np.exp(1j * psi * np.arange(n_x))
    a_y = np.exp(1j * chi * np.arange(n_y))
    return np.kron(a_x, a_y)


def panel_angles(axes: np.ndarray, direction: np.ndarray) -> tuple[float, float]:
    """(azimuth, elevation) of a unit direction w.r.t. a panel's element axes."""
    u_a = float(np.clip(direction @ axes[0], -1.0, 1.0))
    u_b = float(np.clip(direction @ axes[1], -1.0, 1.0))
    elevation = math.acos(u_a)
    sin_el = math.sin(elevation)
    if sin_el < 1e-12:
        return 0.0, elevation
    azimuth = math.acos(max(-1.0, min(1.0, u_b / sin_el)))
    return azimuth, elevation


def draw_link(params: ChannelParams, distance: float, los: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """One Rician fading draw: amplitude loss times (LOS + scattered) mixture."""
    los = np.atleast_1d(np.asarray(los, dtype=np.complex128))
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) * SQRT_HALF
    eps = params.rician_factor
    mix = math.sqrt(eps / (eps + 1.0)) * los + math.sqrt(1.0 / (eps + 1.0)) * nlos
    return amplitude_gain(params, distance) * mix


@dataclass
class ChannelSlot:
    """Channels of one slot: direct scalars and the stacked cascade matrix."""

    slot: int
    direct: np.ndarray     # (K,) complex
    cascaded: np.ndarray   # (M*N, K) complex

    def effective(self, phase_values: np.ndarray) -> np.ndarray:
        """Scalar channel per device for unit-modulus phase values: h_d + v^H h_c."""
        if self.cascaded.shape[0] == 0:
            return self.direct.copy()
        return self.direct + phase_values.conj() @ self.cascaded

    @property
    def num_devices(self) -> int:
        return self.direct.shape[0]

    @property
    def num_elements(self) -> int:
        return self.cascaded.shape[0]


class ChannelModel:
    """Draws per-slot channels for a fixed deployment.

    LOS components depend only on the static geometry and are precomputed;
    scattered components are redrawn each slot from the supplied generator.
    """

    def __init__(self, config: ScenarioConfig, geometry: Geometry):
        if geometry.num_irs != config.num_irs or geometry.num_devices != config.num_devices:
            raise InvalidGeometryError("geometry does not match the configured system sizes")
        self.config = config
        self.geometry = geometry
        n = config.elements_per_irs
        m_count, k_count = config.num_irs, config.num_devices

        self.dist_bs_irs = np.zeros(m_count)
        self.dist_irs_dev = np.zeros((m_count, k_count))
        self.dist_bs_dev = np.linalg.norm(geometry.device_positions - geometry.bs_position, axis=1)
        if np.any(self.dist_bs_dev <= 0):
            raise InvalidGeometryError("zero-length direct link")

        self.los_bs_irs = np.zeros((m_count, n), dtype=np.complex128)
        self.los_irs_dev = np.zeros((m_count, k_count, n), dtype=np.complex128)
        for m in range(m_count):
            pos = geometry.irs_positions[m]
            axes = geometry.irs_axes[m]
            to_bs = geometry.bs_position - pos
            self.dist_bs_irs[m] = np.linalg.norm(to_bs)
            if self.dist_bs_irs[m] <= 0:
                raise InvalidGeometryError("zero-length feeder link")
            az, el = panel_angles(axes, to_bs / self.dist_bs_irs[m])
            self.los_bs_irs[m] = los_steering(config.elements_x, config.elements_y, az, el)
            for k in range(k_count):
                to_dev = geometry.device_positions[k] - pos
                self.dist_irs_dev[m, k] = np.linalg.norm(to_dev)
                if self.dist_irs_dev[m, k] <= 0:
                    raise InvalidGeometryError("zero-length reflected link")
                az, el = panel_angles(axes, to_dev / self.dist_irs_dev[m, k])
                self.los_irs_dev[m, k] = los_steering(config.elements_x, config.elements_y, az, el)

    def draw_components(self, rng: np.random.Generator, slot: int):
        """Raw per-link draws: feeder f (M,N), reflected g (M,K,N), direct (K,)."""
        cfg = self.config
        n = cfg.elements_per_irs
        m_count, k_count = cfg.num_irs, cfg.num_devices
        feeder = np.zeros((m_count, n), dtype=np.complex128)
        reflected = np.zeros((m_count, k_count, n), dtype=np.complex128)
        for m in range(m_count):
            feeder[m] = draw_link(cfg.bs_irs, self.dist_bs_irs[m], self.los_bs_irs[m], rng)
        for m in range(m_count):
            for k in range(k_count):
                reflected[m, k] = draw_link(cfg.irs_device, self.dist_irs_dev[m, k],
                                            self.los_irs_dev[m, k], rng)
        direct = np.zeros(k_count, dtype=np.complex128)
        for k in range(k_count):
            direct[k] = draw_link(cfg.bs_device, self.dist_bs_dev[k], np.ones(1), rng)[0]
        return feeder, reflected, direct

    def draw_slot(self, rng: np.random.Generator, slot: int) -> ChannelSlot:
        feeder, reflected, direct = self.draw_components(rng, slot)
        return ChannelSlot(slot=slot, direct=direct,
                           cascaded=assemble_cascade(feeder, reflected))


def assemble_cascade(feeder: np.ndarray, reflected: np.ndarray) -> np.ndarray:
    """Stack conj(f_m) * g_{m,k} over surfaces into the (M*N, K) cascade matrix."""
    m_count, n = feeder.shape
    k_count = reflected.shape[1]
    cascade = np.zeros((m_count * n, k_count), dtype=np.complex128)
    for m in range(m_count):
        block = feeder[m].conj()[None, :] * reflected[m]          # (K, N)
        cascade[m * n:(m + 1) * n, :] = block.T
    return cascade


def generate_slot(config: ScenarioConfig, geometry: Geometry,
                  rng: np.random.Generator, slot: int) -> ChannelSlot:
    """Convenience wrapper: build the model and draw a single slot."""
    return ChannelModel(config, geometry).draw_slot(rng, slot)


# ---------------------------------------------------------------------------
# Trace dump / replay (binary, bit-exact)
# ---------------------------------------------------------------------------

def save_channel_trace(path: str | Path, slots: list[ChannelSlot]) -> None:
    np.savez(
        path,
        slot=np.array([s.slot for s in slots], dtype=np.int64),
        direct=np.stack([s.direct for s in slots]),
        cascaded=np.stack([s.cascaded for s in slots]),
    )


def load_channel_trace(path: str | Path) -> list[ChannelSlot]:
    with np.load(path) as data:
        return [
            ChannelSlot(slot=int(t), direct=d, cascaded=c)
            for t, d, c in zip(data["slot"], data["direct"], data["cascaded"])
        ]
