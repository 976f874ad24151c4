"""Scenario definition and deployment geometry.

Every quantity is stored in linear SI units (watts, Hz, seconds, bits, meters).
dB / dBm values are accepted only at the config-file boundary and converted on
load; reports convert back at the output boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration input."""


class InvalidGeometryError(ValueError):
    """Deployment geometry that cannot produce a valid channel (e.g. zero link distance)."""


# ---------------------------------------------------------------------------
# Unit conversions (config/report boundary only)
# ---------------------------------------------------------------------------

def dbm_to_watts(dbm: float) -> float:
    return 1e-3 * 10.0 ** (dbm / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ConfigError(f"cannot express non-positive power {watts} W in dBm")
    return 10.0 * math.log10(watts / 1e-3)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        raise ConfigError(f"cannot express non-positive gain {value} in dB")
    return 10.0 * math.log10(value)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelParams:
    """Large-scale parameters of one link class.

    ``reference_loss`` is the linear *power* gain at ``reference_distance``;
    fading draws apply its square root in the amplitude domain.
    """

    rician_factor: float
    pathloss_exponent: float
    reference_loss: float
    reference_distance: float = 1.0

    def __post_init__(self) -> None:
        if self.rician_factor < 0:
            raise ConfigError(f"rician_factor must be >= 0, got {self.rician_factor}")
        if self.pathloss_exponent <= 0:
            raise ConfigError(f"pathloss_exponent must be > 0, got {self.pathloss_exponent}")
        if self.reference_loss <= 0:
            raise ConfigError(f"reference_loss must be > 0, got {self.reference_loss}")
        if self.reference_distance <= 0:
            raise ConfigError(f"reference_distance must be > 0, got {self.reference_distance}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full scenario: system sizes, radio parameters, traffic, geometry, solver knobs."""

    # system sizes
    num_irs: int
    num_devices: int
    elements_x: int
    elements_y: int
    phase_bits: int
    bandwidth_hz: float
    slot_duration_s: float
    horizon_slots: int
    control_param: float
    # power / noise
    max_power_w: float
    element_power_w: float
    noise_density_w_per_hz: float
    # delay and traffic
    delay_threshold_s: float
    arrival_min: int
    arrival_max: int
    arrival_unit: str  # "bytes" or "bits"
    # deployment geometry
    bs_position: tuple[float, float, float]
    irs_arc_diameter_m: float
    device_disk_center: tuple[float, float]  # (x, z) in the x-z plane
    device_disk_radius_m: float
    # per-link-class channel parameters
    bs_irs: ChannelParams
    irs_device: ChannelParams
    bs_device: ChannelParams
    # per-slot solver
    solver_tolerance: float
    solver_max_outer: int
    solver_max_inner: int
    # reproducibility
    rng_seed: int

    def __post_init__(self) -> None:
        # num_irs == 0 is the degenerate no-IRS scenario and is allowed.
        if self.num_irs < 0:
            raise ConfigError(f"system.num_irs must be >= 0, got {self.num_irs}")
        for name, value in (
            ("system.num_devices", self.num_devices),
            ("system.elements_x", self.elements_x),
            ("system.elements_y", self.elements_y),
            ("system.horizon_slots", self.horizon_slots),
            ("solver.max_outer", self.solver_max_outer),
            ("solver.max_inner", self.solver_max_inner),
        ):
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not 1 <= self.phase_bits <= 16:
            raise ConfigError(f"system.phase_bits must be in [1, 16], got {self.phase_bits}")
        for name, value in (
            ("system.bandwidth_hz", self.bandwidth_hz),
            ("system.slot_duration_s", self.slot_duration_s),
            ("system.control_param", self.control_param),
            ("power.max", self.max_power_w),
            ("power.element", self.element_power_w),
            ("power.noise_density", self.noise_density_w_per_hz),
            ("delay.threshold", self.delay_threshold_s),
            ("geometry.irs_arc_diameter_m", self.irs_arc_diameter_m),
            ("geometry.device_disk_radius_m", self.device_disk_radius_m),
            ("solver.tolerance", self.solver_tolerance),
        ):
            if value <= 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if self.arrival_min < 0:
            raise ConfigError(f"arrivals.min must be >= 0, got {self.arrival_min}")
        if self.arrival_min > self.arrival_max:
            raise ConfigError(
                f"arrivals.min ({self.arrival_min}) must not exceed arrivals.max ({self.arrival_max})"
            )
        if self.arrival_unit not in ("bytes", "bits"):
            raise ConfigError(f"arrivals.unit must be 'bytes' or 'bits', got {self.arrival_unit!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.rng_seed}")

    # -- derived quantities ------------------------------------------------

    @property
    def noise_power_w(self) -> float:
        return self.noise_density_w_per_hz * self.bandwidth_hz

    @property
    def elements_per_irs(self) -> int:
        return self.elements_x * self.elements_y

    @property
    def total_elements(self) -> int:
        return self.num_irs * self.elements_per_irs

    @property
    def phase_levels(self) -> int:
        return 2 ** self.phase_bits

    @property
    def static_power_w(self) -> float:
        """Hardware power of all reflecting elements together."""
        return self.total_elements * self.element_power_w

    @property
    def arrival_min_bits(self) -> int:
        return self.arrival_min * 8 if self.arrival_unit == "bytes" else self.arrival_min

    @property
    def arrival_max_bits(self) -> int:
        return self.arrival_max * 8 if self.arrival_unit == "bytes" else self.arrival_max

    def with_updates(self, **kwargs: Any) -> "ScenarioConfig":
        return replace(self, **kwargs)


def default_scenario() -> ScenarioConfig:
    """Baseline scenario: 2 surfaces of 4x4 elements serving 10 devices.

    Reference losses at 1 m: -30 dB on the surface legs (clear placement) and
    -60 dB on the direct BS-device leg (severely blocked, on top of its
    steeper exponent).  The gap between the two is what motivates deploying
    surfaces at all; both are plain config fields.
    """
    return ScenarioConfig(
        num_irs=2,
        num_devices=10,
        elements_x=4,
        elements_y=4,
        phase_bits=3,
        bandwidth_hz=15e3,
        slot_duration_s=0.01,
        horizon_slots=1000,
        control_param=50.0,
        max_power_w=dbm_to_watts(20.0),
        element_power_w=dbm_to_watts(2.0),
        noise_density_w_per_hz=dbm_to_watts(-170.0),
        delay_threshold_s=0.05,
        arrival_min=1,
        arrival_max=150,
        arrival_unit="bits",
        bs_position=(-200.0, 0.0, 0.0),
        irs_arc_diameter_m=10.0,
        device_disk_center=(0.0, 200.0),
        device_disk_radius_m=100.0,
        bs_irs=ChannelParams(1.0, 2.2, db_to_linear(-30.0)),
        irs_device=ChannelParams(1.0, 2.2, db_to_linear(-30.0)),
        bs_device=ChannelParams(0.5, 3.5, db_to_linear(-60.0)),
        solver_tolerance=1e-4,
        solver_max_outer=30,
        solver_max_inner=30,
        rng_seed=1729,
    )


def tiny_scenario() -> ScenarioConfig:
    """Desk-scale scenario small enough for exhaustive phase enumeration."""
    return default_scenario().with_updates(
        num_irs=1,
        num_devices=2,
        elements_x=2,
        elements_y=1,
        phase_bits=1,
        horizon_slots=50,
    )


# ---------------------------------------------------------------------------
# Deployment geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Geometry:
    """Static positions for one simulation run."""

    bs_position: np.ndarray        # (3,)
    irs_positions: np.ndarray      # (M, 3)
    irs_axes: np.ndarray           # (M, 2, 3) in-panel element axes
    device_positions: np.ndarray   # (K, 3)

    @property
    def num_irs(self) -> int:
        return self.irs_positions.shape[0]

    @property
    def num_devices(self) -> int:
        return self.device_positions.shape[0]


def irs_positions(config: ScenarioConfig) -> np.ndarray:
    """Surface centers, equally spaced over a half circle in the y-z plane.

    The arc has the configured diameter, sits at x = 0, and every point faces
    the coordinate origin.  Angles theta_m = pi * m / (M + 1), m = 1..M keep
    the spacing equal without piling up at the endpoints.
    """
    m_count = config.num_irs
    radius = config.irs_arc_diameter_m / 2.0
    out = np.zeros((m_count, 3))
    for m in range(1, m_count + 1):
        theta = math.pi * m / (m_count + 1)
        out[m - 1] = (0.0, radius * math.cos(theta), radius * math.sin(theta))
    return out


def irs_panel_axes(positions: np.ndarray) -> np.ndarray:
    """Two orthonormal in-panel axes per surface, with the normal facing the origin."""
    axes = np.zeros((positions.shape[0], 2, 3))
    z_hat = np.array([0.0, 0.0, 1.0])
    for m, pos in enumerate(positions):
        norm = np.linalg.norm(pos)
        if norm == 0:
            raise InvalidGeometryError("surface placed at the coordinate origin")
        normal = -pos / norm
        e_a = np.cross(z_hat, normal)
        if np.linalg.norm(e_a) < 1e-12:
            e_a = np.array([1.0, 0.0, 0.0])
        else:
            e_a = e_a / np.linalg.norm(e_a)
        e_b = np.cross(normal, e_a)
        axes[m, 0] = e_a
        axes[m, 1] = e_b
    return axes


def sample_device_positions(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over the device disk in the x-z plane (y = 0)."""
    k_count = config.num_devices
    cx, cz = config.device_disk_center
    u = rng.random((k_count, 2))
    radii = config.device_disk_radius_m * np.sqrt(u[:, 0])
    angles = 2.0 * math.pi * u[:, 1]
    out = np.zeros((k_count, 3))
    out[:, 0] = cx + radii * np.cos(angles)
    out[:, 2] = cz + radii * np.sin(angles)
    return out


def build_geometry(config: ScenarioConfig, rng: np.random.Generator) -> Geometry:
    positions = irs_positions(config)
    axes = irs_panel_axes(positions)
    devices = sample_device_positions(config, rng)
    bs = np.asarray(config.bs_position, dtype=float)
    if np.linalg.norm(devices - bs, axis=1).min(initial=np.inf) <= 0:
        raise InvalidGeometryError("device placed on top of the base station")
    return Geometry(bs_position=bs, irs_positions=positions, irs_axes=axes, device_positions=devices)


# ---------------------------------------------------------------------------
# Config file tree (YAML) <-> ScenarioConfig
# ---------------------------------------------------------------------------
#
# The file is a nested key/value tree.  Unknown keys are rejected.  Power-like
# fields accept either a dBm/dB key or its linear twin, never both.

_UNIT_ALTERNATES = {
    ("power", "max_dbm"): ("power", "max_w"),
    ("power", "element_dbm"): ("power", "element_w"),
    ("power", "noise_density_dbm_per_hz"): ("power", "noise_density_w_per_hz"),
    ("delay", "threshold_ms"): ("delay", "threshold_s"),
}

_SCHEMA: dict[str, Any] = {
    "system": {
        "num_irs", "num_devices", "elements_x", "elements_y", "phase_bits",
        "bandwidth_hz", "slot_duration_s", "horizon_slots", "control_param",
    },
    "power": {
        "max_dbm", "max_w", "element_dbm", "element_w",
        "noise_density_dbm_per_hz", "noise_density_w_per_hz",
    },
    "delay": {"threshold_s", "threshold_ms"},
    "arrivals": {"min", "max", "unit"},
    "geometry": {
        "bs_position", "irs_arc_diameter_m", "device_disk_center", "device_disk_radius_m",
    },
    "channels": {
        "bs_irs": {"rician_factor", "pathloss_exponent", "reference_loss_db", "reference_loss", "reference_distance_m"},
        "irs_device": {"rician_factor", "pathloss_exponent", "reference_loss_db", "reference_loss", "reference_distance_m"},
        "bs_device": {"rician_factor", "pathloss_exponent", "reference_loss_db", "reference_loss", "reference_distance_m"},
    },
    "solver": {"tolerance", "max_outer", "max_inner"},
    "seed": None,
}


def _check_unknown_keys(tree: dict, schema: dict | set | None, prefix: str = "") -> None:
    if schema is None:
        return
    if not isinstance(tree, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(tree).__name__}")
    allowed = set(schema.keys()) if isinstance(schema, dict) else set(schema)
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(schema, dict) and isinstance(schema.get(key), (dict, set)):
            _check_unknown_keys(value, schema[key], path)


def _get_number(group: dict, group_name: str, key: str, default: float, *, integer: bool = False):
    if key not in group:
        return default
    value = group[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{group_name}.{key}: expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{group_name}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _pick_unit_value(group: dict, group_name: str, convert_key: str, raw_key: str,
                     converter, default: float) -> float:
    if convert_key in group and raw_key in group:
        raise ConfigError(f"{group_name}: give only one of {convert_key} / {raw_key}")
    if convert_key in group:
        return converter(_get_number(group, group_name, convert_key, None))
    if raw_key in group:
        value = _get_number(group, group_name, raw_key, None)
        if value <= 0:
            raise ConfigError(f"{group_name}.{raw_key} must be > 0, got {value}")
        return value
    return default


def _parse_channel_group(tree: dict, name: str, default: ChannelParams) -> ChannelParams:
    group = tree.get(name, {})
    if not isinstance(group, dict):
        raise ConfigError(f"channels.{name}: expected a mapping")
    loss = _pick_unit_value(group, f"channels.{name}", "reference_loss_db", "reference_loss",
                            db_to_linear, default.reference_loss)
    try:
        return ChannelParams(
            rician_factor=_get_number(group, f"channels.{name}", "rician_factor", default.rician_factor),
            pathloss_exponent=_get_number(group, f"channels.{name}", "pathloss_exponent", default.pathloss_exponent),
            reference_loss=loss,
            reference_distance=_get_number(group, f"channels.{name}", "reference_distance_m", default.reference_distance),
        )
    except ConfigError as exc:
        raise ConfigError(f"channels.{name}: {exc}") from exc


def _parse_position(group: dict, key: str, default: tuple, length: int) -> tuple:
    if key not in group:
        return default
    value = group[key]
    if not isinstance(value, (list, tuple)) or len(value) != length or \
            any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"geometry.{key}: expected {length} numbers")
    return tuple(float(v) for v in value)


def config_from_tree(tree: dict | None) -> ScenarioConfig:
    """Build a validated scenario from a (possibly partial) config tree.

    Missing keys fall back to the defaults of :func:`default_scenario`;
    unknown keys are rejected with their dotted path.
    """
    tree = {} if tree is None else tree
    _check_unknown_keys(tree, _SCHEMA)
    base = default_scenario()

    system = tree.get("system", {})
    power = tree.get("power", {})
    delay = tree.get("delay", {})
    arrivals = tree.get("arrivals", {})
    geometry = tree.get("geometry", {})
    channels = tree.get("channels", {})
    solver = tree.get("solver", {})
    for name, group in (("system", system), ("power", power), ("delay", delay),
                        ("arrivals", arrivals), ("geometry", geometry),
                        ("channels", channels), ("solver", solver)):
        if not isinstance(group, dict):
            raise ConfigError(f"{name}: expected a mapping")

    arrival_unit = arrivals.get("unit", base.arrival_unit)
    if not isinstance(arrival_unit, str):
        raise ConfigError(f"arrivals.unit: expected a string, got {arrival_unit!r}")

    threshold_s = _pick_unit_value(delay, "delay", "threshold_ms", "threshold_s",
                                   lambda ms: ms / 1000.0, base.delay_threshold_s)

    seed = tree.get("seed", base.rng_seed)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")

    return ScenarioConfig(
        num_irs=_get_number(system, "system", "num_irs", base.num_irs, integer=True),
        num_devices=_get_number(system, "system", "num_devices", base.num_devices, integer=True),
        elements_x=_get_number(system, "system", "elements_x", base.elements_x, integer=True),
        elements_y=_get_number(system, "system", "elements_y", base.elements_y, integer=True),
        phase_bits=_get_number(system, "system", "phase_bits", base.phase_bits, integer=True),
        bandwidth_hz=_get_number(system, "system", "bandwidth_hz", base.bandwidth_hz),
        slot_duration_s=_get_number(system, "system", "slot_duration_s", base.slot_duration_s),
        horizon_slots=_get_number(system, "system", "horizon_slots", base.horizon_slots, integer=True),
        control_param=_get_number(system, "system", "control_param", base.control_param),
        max_power_w=_pick_unit_value(power, "power", "max_dbm", "max_w", dbm_to_watts, base.max_power_w),
        element_power_w=_pick_unit_value(power, "power", "element_dbm", "element_w",
                                         dbm_to_watts, base.element_power_w),
        noise_density_w_per_hz=_pick_unit_value(power, "power", "noise_density_dbm_per_hz",
                                                "noise_density_w_per_hz", dbm_to_watts,
                                                base.noise_density_w_per_hz),
        delay_threshold_s=threshold_s,
        arrival_min=_get_number(arrivals, "arrivals", "min", base.arrival_min, integer=True),
        arrival_max=_get_number(arrivals, "arrivals", "max", base.arrival_max, integer=True),
        arrival_unit=arrival_unit,
        bs_position=_parse_position(geometry, "bs_position", base.bs_position, 3),
        irs_arc_diameter_m=_get_number(geometry, "geometry", "irs_arc_diameter_m", base.irs_arc_diameter_m),
        device_disk_center=_parse_position(geometry, "device_disk_center", base.device_disk_center, 2),
        device_disk_radius_m=_get_number(geometry, "geometry", "device_disk_radius_m", base.device_disk_radius_m),
        bs_irs=_parse_channel_group(channels, "bs_irs", base.bs_irs),
        irs_device=_parse_channel_group(channels, "irs_device", base.irs_device),
        bs_device=_parse_channel_group(channels, "bs_device", base.bs_device),
        solver_tolerance=_get_number(solver, "solver", "tolerance", base.solver_tolerance),
        solver_max_outer=_get_number(solver, "solver", "max_outer", base.solver_max_outer, integer=True),
        solver_max_inner=_get_number(solver, "solver", "max_inner", base.solver_max_inner, integer=True),
        rng_seed=seed,
    )


def _channel_tree(params: ChannelParams) -> dict:
    return {
        "rician_factor": params.rician_factor,
        "pathloss_exponent": params.pathloss_exponent,
        "reference_loss_db": linear_to_db(params.reference_loss),
        "reference_distance_m": params.reference_distance,
    }


def config_to_tree(config: ScenarioConfig) -> dict:
    """Canonical config tree (dB/dBm forms for the power-like fields)."""
    return {
        "system": {
            "num_irs": config.num_irs,
            "num_devices": config.num_devices,
            "elements_x": config.elements_x,
            "elements_y": config.elements_y,
            "phase_bits": config.phase_bits,
            "bandwidth_hz": config.bandwidth_hz,
            "slot_duration_s": config.slot_duration_s,
            "horizon_slots": config.horizon_slots,
            "control_param": config.control_param,
        },
        "power": {
            "max_dbm": watts_to_dbm(config.max_power_w),
            "element_dbm": watts_to_dbm(config.element_power_w),
            "noise_density_dbm_per_hz": watts_to_dbm(config.noise_density_w_per_hz),
        },
        "delay": {"threshold_s": config.delay_threshold_s},
        "arrivals": {
            "min": config.arrival_min,
            "max": config.arrival_max,
            "unit": config.arrival_unit,
        },
        "geometry": {
            "bs_position": list(config.bs_position),
            "irs_arc_diameter_m": config.irs_arc_diameter_m,
            "device_disk_center": list(config.device_disk_center),
            "device_disk_radius_m": config.device_disk_radius_m,
        },
        "channels": {
            "bs_irs": _channel_tree(config.bs_irs),
            "irs_device": _channel_tree(config.irs_device),
            "bs_device": _channel_tree(config.bs_device),
        },
        "solver": {
            "tolerance": config.solver_tolerance,
            "max_outer": config.solver_max_outer,
            "max_inner": config.solver_max_inner,
        },
        "seed": config.rng_seed,
    }


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text()
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def save_config_file(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_tree(config), sort_keys=False))


def _schema_paths(schema: dict | set | None = None, prefix: str = "") -> set[str]:
    schema = _SCHEMA if schema is None else schema
    out: set[str] = set()
    items = schema.items() if isinstance(schema, dict) else ((k, None) for k in schema)
    for key, sub in items:
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(sub, (dict, set)):
            out |= _schema_paths(sub, path)
        else:
            out.add(path)
    return out


def apply_overrides(tree: dict, overrides: Sequence[str]) -> dict:
    """Apply dotted ``key=value`` overrides on top of a config tree.

    Keys must exist in the schema; values are parsed as YAML scalars.  Setting
    one key of a unit pair drops its twin so the pair cannot conflict.
    """
    import copy

    valid = _schema_paths()
    out = copy.deepcopy(tree)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw_value = item.split("=", 1)
        dotted = dotted.strip()
        if dotted not in valid:
            raise ConfigError(f"override references unknown config key: {dotted}")
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: cannot parse value: {exc}") from exc
        parts = dotted.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted}: {part} is not a mapping")
        leaf = parts[-1]
        # drop the unit twin if one exists
        key_tuple = tuple(parts)
        for a, b in _UNIT_ALTERNATES.items():
            if key_tuple == a:
                node.pop(b[-1], None)
            elif key_tuple == b:
                node.pop(a[-1], None)
        node[leaf] = value
    return out
