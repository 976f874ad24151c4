"""Slot-loop driver: controllers, episodes, Monte Carlo batches, and sweeps.

Each episode draws its own device placement (fixed within the run), then
steps the slot loop: reveal arrivals, refresh the queue-pressure weights,
draw the fading, let the controller commit powers and phases, serve, and roll
the queues.  Episodes are deterministic given (config, controller, seed); the
environment streams are shared across controllers at equal seeds so baseline
comparisons are paired.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel
from .config import ConfigError, ScenarioConfig, build_geometry, watts_to_dbm
from .phase_design import PhaseVector
from .power_control import optimal_power
from .queueing import (advance_arrivals, apply_service, initial_state,
                       sample_arrivals, slot_weight)
from .slot_solver import SolverSettings, exhaustive_slot, solve_slot

CONTROLLER_VARIANTS = ("proposed", "random_phase", "without_irs", "exhaustive")

DEFAULT_BURN_IN = 0.2


class SimulationError(RuntimeError):
    """Episode aborted; message carries the failing slot index."""


@dataclass(frozen=True)
class Controller:
    """Per-slot decision policy plus its solver settings."""

    variant: str
    settings: SolverSettings = SolverSettings()
    exhaustive_budget: int = 2 ** 20

    def __post_init__(self) -> None:
        if self.variant not in CONTROLLER_VARIANTS:
            raise ConfigError(
                f"unknown controller {self.variant!r}; valid variants: "
                + ", ".join(CONTROLLER_VARIANTS))


@dataclass
class RunMetrics:
    """Per-slot traces of one episode (device-indexed arrays are (T, K))."""

    controller: str
    seed: int
    total_power_w: np.ndarray
    transmit_power_w: np.ndarray
    queue_bits: np.ndarray
    virtual_queue_s: np.ndarray
    delay_s: np.ndarray
    avg_arrival_bits: np.ndarray
    arrival_bits: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    wallclock_s: np.ndarray

    @property
    def horizon(self) -> int:
        return self.total_power_w.shape[0]

    def _start(self, burn_in: float) -> int:
        return int(self.horizon * burn_in)

    def mean_total_power_w(self, burn_in: float = DEFAULT_BURN_IN) -> float:
        return float(np.mean(self.total_power_w[self._start(burn_in):]))

    def mean_transmit_power_w(self, burn_in: float = DEFAULT_BURN_IN) -> float:
        return float(np.mean(self.transmit_power_w[self._start(burn_in):]))

    def mean_virtual_queue_s(self, burn_in: float = DEFAULT_BURN_IN) -> float:
        return float(np.mean(self.virtual_queue_s[self._start(burn_in):]))

    def mean_delay_s(self, burn_in: float = DEFAULT_BURN_IN) -> float:
        return float(np.mean(self.delay_s[self._start(burn_in):]))

    def mean_queue_bits(self, burn_in: float = DEFAULT_BURN_IN) -> float:
        return float(np.mean(self.queue_bits[self._start(burn_in):]))

    def same_trajectory(self, other: "RunMetrics") -> bool:
        """Bit-identical traces, wall-clock excluded (it is never deterministic)."""
        deterministic = ("total_power_w", "transmit_power_w", "queue_bits",
                         "virtual_queue_s", "delay_s", "avg_arrival_bits",
                         "arrival_bits", "iterations", "converged")
        return all(np.array_equal(getattr(self, name), getattr(other, name))
                   for name in deterministic)


def episode_seed(base_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=[int(base_seed), int(run_index)])


def run_episode(config: ScenarioConfig, controller: Controller,
                rng_seed) -> RunMetrics:
    """Simulate one episode of ``config.horizon_slots`` slots.

    ``rng_seed`` may be an integer or a SeedSequence.  Four independent
    streams are derived: placement, arrivals, fading, and controller noise, so
    the environment is identical across controller variants at equal seeds.
    """
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) \
        else np.random.SeedSequence(int(rng_seed))
    pos_rng, arrival_rng, fading_rng, controller_rng = \
        (np.random.default_rng(child) for child in seq.spawn(4))

    geometry = build_geometry(config, pos_rng)
    model = ChannelModel(config, geometry)
    state = initial_state(config.num_devices)
    warm = PhaseVector.zeros(config.total_elements, config.phase_bits)
    settings = controller.settings
    horizon, devices = config.horizon_slots, config.num_devices

    total_power = np.zeros(horizon)
    transmit_power = np.zeros(horizon)
    queue = np.zeros((horizon, devices))
    virtual = np.zeros((horizon, devices))
    delay = np.zeros((horizon, devices))
    avg_arrival = np.zeros((horizon, devices))
    arrivals_trace = np.zeros((horizon, devices))
    iterations = np.zeros(horizon, dtype=np.int64)
    converged = np.ones(horizon, dtype=np.int64)
    wallclock = np.zeros(horizon)

    for t in range(1, horizon + 1):
        arrivals = sample_arrivals(config, arrival_rng)
        advance_arrivals(state, arrivals)
        weights = slot_weight(state, config.slot_duration_s)
        slot = model.draw_slot(fading_rng, t)
        row = t - 1
        queue[row] = state.queue_bits
        virtual[row] = state.delay_backlog_s
        delay[row] = state.current_delay_s
        avg_arrival[row] = state.avg_arrival_bits
        arrivals_trace[row] = arrivals

        started = time.perf_counter()
        try:
            if controller.variant == "proposed":
                decision = solve_slot(weights, state.queue_bits, arrivals, slot,
                                      settings, config, warm_start=warm)
                warm = decision.phases
                rates = decision.rate_bps
                transmit = float(np.sum(decision.power_w))
                total = transmit + config.static_power_w
                iterations[row] = decision.iterations
                converged[row] = int(decision.converged)
            elif controller.variant == "exhaustive":
                decision = exhaustive_slot(weights, state.queue_bits, arrivals, slot,
                                           config, budget=controller.exhaustive_budget)
                rates = decision.rate_bps
                transmit = float(np.sum(decision.power_w))
                total = transmit + config.static_power_w
            elif controller.variant == "random_phase":
                phases = PhaseVector.random(config.total_elements, config.phase_bits,
                                            controller_rng)
                power = optimal_power(weights, state.queue_bits, arrivals,
                                      slot.effective(phases.values), config)
                rates = power.rate_bps
                transmit = power.total_power_w
                total = transmit + config.static_power_w
            elif controller.variant == "without_irs":
                power = optimal_power(weights, state.queue_bits, arrivals,
                                      slot.direct, config)
                rates = power.rate_bps
                transmit = power.total_power_w
                # a system with no surfaces deployed pays no element power
                total = transmit
            else:  # pragma: no cover - Controller validates the variant
                raise ConfigError(f"unknown controller {controller.variant!r}")
        except Exception as exc:
            raise SimulationError(f"slot {t}: {exc}") from exc
        wallclock[row] = time.perf_counter() - started

        transmit_power[row] = transmit
        total_power[row] = total
        apply_service(state, rates, config)

    return RunMetrics(controller=controller.variant, seed=_seed_label(seq),
                      total_power_w=total_power, transmit_power_w=transmit_power,
                      queue_bits=queue, virtual_queue_s=virtual, delay_s=delay,
                      avg_arrival_bits=avg_arrival, arrival_bits=arrivals_trace,
                      iterations=iterations, converged=converged, wallclock_s=wallclock)


def _seed_label(seq: np.random.SeedSequence) -> int:
    entropy = seq.entropy
    if isinstance(entropy, (list, tuple)):
        return int(entropy[0])
    return int(entropy)


def make_controllers(variants, config: ScenarioConfig) -> list[Controller]:
    settings = SolverSettings.from_config(config)
    return [Controller(variant=v, settings=settings) if isinstance(v, str) else v
            for v in variants]


def run_batch(config: ScenarioConfig, controllers, num_runs: int,
              base_seed: int | None = None) -> dict[str, list[RunMetrics]]:
    """Independent episodes per controller with paired environment seeds."""
    if num_runs < 1:
        raise ConfigError(f"runs must be >= 1, got {num_runs}")
    base = config.rng_seed if base_seed is None else base_seed
    controllers = make_controllers(controllers, config)
    out: dict[str, list[RunMetrics]] = {}
    for controller in controllers:
        out[controller.variant] = [
            run_episode(config, controller, episode_seed(base, run))
            for run in range(num_runs)
        ]
    return out


@dataclass(frozen=True)
class BatchSummary:
    controller: str
    runs: int
    mean_power_w: float
    std_power_w: float
    mean_power_dbm: float
    mean_transmit_power_w: float
    mean_dqueue_s: float
    mean_delay_s: float
    mean_queue_bits: float


def summarize(batches: dict[str, list[RunMetrics]],
              burn_in: float = DEFAULT_BURN_IN) -> list[BatchSummary]:
    out = []
    for controller, runs in batches.items():
        powers = np.array([m.mean_total_power_w(burn_in) for m in runs])
        out.append(BatchSummary(
            controller=controller,
            runs=len(runs),
            mean_power_w=float(np.mean(powers)),
            std_power_w=float(np.std(powers, ddof=1)) if len(runs) > 1 else 0.0,
            mean_power_dbm=watts_to_dbm(float(np.mean(powers))),
            mean_transmit_power_w=float(np.mean(
                [m.mean_transmit_power_w(burn_in) for m in runs])),
            mean_dqueue_s=float(np.mean([m.mean_virtual_queue_s(burn_in) for m in runs])),
            mean_delay_s=float(np.mean([m.mean_delay_s(burn_in) for m in runs])),
            mean_queue_bits=float(np.mean([m.mean_queue_bits(burn_in) for m in runs])),
        ))
    return out


SWEEP_AXES = ("V", "K", "M", "N", "d_th", "A_max")


def apply_axis(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Scenario with one swept parameter replaced."""
    if axis == "V":
        return config.with_updates(control_param=float(value))
    if axis == "K":
        return config.with_updates(num_devices=_as_int(axis, value))
    if axis == "M":
        return config.with_updates(num_irs=_as_int(axis, value))
    if axis == "N":
        total = _as_int(axis, value)
        n_y = config.elements_y
        if total % n_y != 0:
            raise ConfigError(
                f"N={total} with elements_y={n_y} gives non-integer elements_x "
                f"({total / n_y}); pick N divisible by {n_y}")
        return config.with_updates(elements_x=total // n_y)
    if axis == "d_th":
        return config.with_updates(delay_threshold_s=float(value))
    if axis == "A_max":
        return config.with_updates(arrival_max=_as_int(axis, value))
    raise ConfigError(f"unknown sweep axis {axis!r}; valid axes: " + ", ".join(SWEEP_AXES))


def _as_int(axis: str, value) -> int:
    if int(value) != value:
        raise ConfigError(f"axis {axis} needs an integer value, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class SweepRow:
    axis_value: float
    controller: str
    mean_power_w: float
    std_power_w: float
    mean_dqueue_s: float
    mean_delay_s: float
    runs: int


def sweep(config: ScenarioConfig, axis: str, values, controllers,
          num_runs: int, base_seed: int | None = None) -> list[SweepRow]:
    """One aggregated row per (axis value, controller)."""
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    rows: list[SweepRow] = []
    for value in values:
        point = apply_axis(config, axis, value)
        batches = run_batch(point, controllers, num_runs, base_seed)
        for summary in summarize(batches):
            rows.append(SweepRow(axis_value=float(value), controller=summary.controller,
                                 mean_power_w=summary.mean_power_w,
                                 std_power_w=summary.std_power_w,
                                 mean_dqueue_s=summary.mean_dqueue_s,
                                 mean_delay_s=summary.mean_delay_s, runs=summary.runs))
    return rows


# ---------------------------------------------------------------------------
# Row builders for CSV / wire output
# ---------------------------------------------------------------------------

def summary_rows(batches: dict[str, list[RunMetrics]],
                 burn_in: float = DEFAULT_BURN_IN) -> list[dict]:
    return [
        {
            "controller": s.controller,
            "runs": s.runs,
            "mean_power_w": s.mean_power_w,
            "std_power_w": s.std_power_w,
            "mean_power_dbm": s.mean_power_dbm,
            "mean_transmit_power_w": s.mean_transmit_power_w,
            "mean_Dqueue": s.mean_dqueue_s,
            "mean_delay_s": s.mean_delay_s,
            "mean_queue_bits": s.mean_queue_bits,
        }
        for s in summarize(batches, burn_in)
    ]


def queue_trace_rows(batches: dict[str, list[RunMetrics]]) -> list[dict]:
    rows = []
    for controller, runs in batches.items():
        for run_index, metrics in enumerate(runs):
            horizon, devices = metrics.queue_bits.shape
            for t in range(horizon):
                for k in range(devices):
                    rows.append({
                        "controller": controller,
                        "run": run_index,
                        "t": t + 1,
                        "device": k,
                        "queue_bits": float(metrics.queue_bits[t, k]),
                        "virtual_queue_s": float(metrics.virtual_queue_s[t, k]),
                        "avg_arrival_bits": float(metrics.avg_arrival_bits[t, k]),
                        "delay_s": float(metrics.delay_s[t, k]),
                    })
    return rows


def power_trace_rows(batches: dict[str, list[RunMetrics]]) -> list[dict]:
    rows = []
    for controller, runs in batches.items():
        for run_index, metrics in enumerate(runs):
            for t in range(metrics.horizon):
                rows.append({
                    "controller": controller,
                    "run": run_index,
                    "t": t + 1,
                    "total_power_w": float(metrics.total_power_w[t]),
                    "transmit_power_w": float(metrics.transmit_power_w[t]),
                    "iterations": int(metrics.iterations[t]),
                    "converged": int(metrics.converged[t]),
                })
    return rows


def sweep_table_rows(rows: list[SweepRow]) -> list[dict]:
    """Fixed column order: axis, controller, mean_power_W, std_power_W, mean_Dqueue, mean_delay_s, runs."""
    return [
        {
            "axis": r.axis_value,
            "controller": r.controller,
            "mean_power_W": r.mean_power_w,
            "std_power_W": r.std_power_w,
            "mean_Dqueue": r.mean_dqueue_s,
            "mean_delay_s": r.mean_delay_s,
            "runs": r.runs,
        }
        for r in rows
    ]


def sweep_plot_series(rows: list[SweepRow]) -> dict:
    """Plot-ready series: x values plus one mean-power column per controller."""
    values: list[float] = []
    for r in rows:
        if r.axis_value not in values:
            values.append(r.axis_value)
    controllers: list[str] = []
    for r in rows:
        if r.controller not in controllers:
            controllers.append(r.controller)
    series = {c: [float("nan")] * len(values) for c in controllers}
    for r in rows:
        series[r.controller][values.index(r.axis_value)] = r.mean_power_w
    return {"x": values, "series": series}
