"""Discrete reflection-phase design with fixed transmit powers.

The weighted sum-rate target is peeled open in two transform steps: a dual
decoupling of each log term through an auxiliary eta (optimal value: the
device's SINR), then a quadratic rewrite of the remaining sum of ratios
through an auxiliary zeta with a closed-form optimum.  What is left is a
quadratic form in the phase vector, maximized by cyclic per-element updates
over the discrete phase set.  Each full pass costs Theta((M*N)^2).

Note on the dual identity: for log base 2 the eta-dependent terms carry a
1/ln2 factor; without it the closed-form optimum eta = SINR would not be the
maximizer.  The factor is a global positive constant in the phase subproblem,
so the W / q / C assembly below stays in unscaled form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .channel import ChannelSlot
from .config import ScenarioConfig

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PhaseVector:
    """Discrete reflection phases: integer level per element, 2**bits levels."""

    indices: np.ndarray  # int64, shape (M*N,)
    bits: int

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise ValueError(f"phase resolution must be >= 1 bit, got {self.bits}")
        if np.any(self.indices < 0) or np.any(self.indices >= 2 ** self.bits):
            raise ValueError("phase index out of range")

    @property
    def delta_theta(self) -> float:
        return 2.0 * math.pi / (2 ** self.bits)

    @property
    def values(self) -> np.ndarray:
        """Unit-modulus complex values exp(j * index * delta_theta)."""
        return np.exp(1j * self.delta_theta * self.indices)

    def copy(self) -> "PhaseVector":
        return PhaseVector(indices=self.indices.copy(), bits=self.bits)

    @classmethod
    def zeros(cls, count: int, bits: int) -> "PhaseVector":
        return cls(indices=np.zeros(count, dtype=np.int64), bits=bits)

    @classmethod
    def random(cls, count: int, bits: int, rng: np.random.Generator) -> "PhaseVector":
        return cls(indices=rng.integers(0, 2 ** bits, size=count).astype(np.int64), bits=bits)


@dataclass
class FpState:
    """Quadratic-form data of one inner iteration (W Hermitian, eta >= 0)."""

    w_matrix: np.ndarray   # (MN, MN) complex Hermitian
    q_vector: np.ndarray   # (MN,) complex
    constant: float
    eta: np.ndarray | None = None
    zeta: np.ndarray | None = None


@dataclass
class PhaseDesignResult:
    phases: PhaseVector
    objective_trace: list[float]   # weighted sum-rate before/after each pass
    iterations: int


@lru_cache(maxsize=32)
def _level_table(bits: int) -> np.ndarray:
    table = np.exp(1j * (2.0 * math.pi / (2 ** bits)) * np.arange(2 ** bits))
    table.setflags(write=False)
    return table


# ---------------------------------------------------------------------------
# Objectives and auxiliary updates
# ---------------------------------------------------------------------------

def sinr(power_w, direct, cascaded, phase_values, noise_w: float) -> np.ndarray:
    """Per-device SINR p|h_d + v^H h_c|^2 / sigma^2."""
    if cascaded.shape[0]:
        h = direct + phase_values.conj() @ cascaded
    else:
        h = np.asarray(direct)
    return np.asarray(power_w) * np.abs(h) ** 2 / noise_w


def weighted_rate_objective(weights_bw, gamma) -> float:
    """Weighted sum rate: sum of w_bw * log2(1 + SINR)."""
    return float(np.sum(np.asarray(weights_bw) * np.log2(1.0 + np.asarray(gamma))))


def update_eta(gamma: np.ndarray) -> np.ndarray:
    """Closed-form dual auxiliary: eta equals the current SINR."""
    return np.asarray(gamma, dtype=float).copy()


def dual_fixed_terms(weights_bw, eta) -> float:
    """Eta-only part of the dual surrogate: sum w_bw * (log2(1+eta) - eta/ln2)."""
    w = np.asarray(weights_bw)
    eta = np.asarray(eta)
    return float(np.sum(w * (np.log2(1.0 + eta) - eta / LN2)))


def dual_surrogate_objective(weights_bw, eta, gamma) -> float:
    """Dual decoupling of the weighted sum rate; maximized over eta at eta = SINR."""
    w = np.asarray(weights_bw)
    eta = np.asarray(eta)
    gamma = np.asarray(gamma)
    ratio = (1.0 + eta) * gamma / ((1.0 + gamma) * LN2)
    return dual_fixed_terms(w, eta) + float(np.sum(w * ratio))


def update_zeta(power_w, eta_tilde, direct, cascaded, phase_values, noise_w: float) -> np.ndarray:
    """Closed-form quadratic-transform auxiliary for the current phases."""
    p = np.asarray(power_w)
    if cascaded.shape[0]:
        h = direct + phase_values.conj() @ cascaded
    else:
        h = np.asarray(direct)
    return np.sqrt(np.asarray(eta_tilde) * p) * h / (p * np.abs(h) ** 2 + noise_w)


def ratio_objective(power_w, eta_tilde, direct, cascaded, phase_values, noise_w: float) -> float:
    """Sum-of-ratios target with fixed eta: sum eta_tilde * p|h|^2 / (p|h|^2 + sigma^2)."""
    p = np.asarray(power_w)
    if cascaded.shape[0]:
        h = direct + phase_values.conj() @ cascaded
    else:
        h = np.asarray(direct)
    signal = p * np.abs(h) ** 2
    return float(np.sum(np.asarray(eta_tilde) * signal / (signal + noise_w)))


def quadratic_objective(power_w, eta_tilde, zeta, direct, cascaded, phase_values,
                        noise_w: float) -> float:
    """Quadratic-transform surrogate evaluated directly from the channels."""
    p = np.asarray(power_w)
    if cascaded.shape[0]:
        h = direct + phase_values.conj() @ cascaded
    else:
        h = np.asarray(direct)
    cross = 2.0 * np.sqrt(np.asarray(eta_tilde) * p) * (np.conj(zeta) * h).real
    square = np.abs(zeta) ** 2 * (p * np.abs(h) ** 2 + noise_w)
    return float(np.sum(cross - square))


def assemble_quadratic(power_w, eta_tilde, zeta, direct, cascaded,
                       noise_w: float) -> FpState:
    """Collect the surrogate into -v^H W v + 2 Re{v^H q} + C.

    W sums |zeta|^2 p h_c h_c^H over devices and is Hermitian by construction;
    residual asymmetry from the matmul is checked and projected out.
    """
    p = np.asarray(power_w, dtype=float)
    zeta = np.asarray(zeta, dtype=np.complex128)
    eta_tilde = np.asarray(eta_tilde, dtype=float)
    coeff = np.abs(zeta) ** 2 * p
    w_matrix = (cascaded * coeff) @ cascaded.conj().T
    asym = np.max(np.abs(w_matrix - w_matrix.conj().T), initial=0.0)
    if asym > 1e-12 * max(1.0, np.max(np.abs(w_matrix), initial=0.0)):
        raise AssertionError(f"quadratic form lost Hermitian symmetry: {asym:g}")
    w_matrix = 0.5 * (w_matrix + w_matrix.conj().T)
    q_vector = cascaded @ (np.sqrt(eta_tilde * p) * zeta.conj() - coeff * direct.conj())
    constant = float(np.sum(
        2.0 * np.sqrt(eta_tilde * p) * (zeta.conj() * direct).real
        - np.abs(zeta) ** 2 * (p * np.abs(direct) ** 2 + noise_w)
    ))
    return FpState(w_matrix=w_matrix, q_vector=q_vector, constant=constant)


def quadratic_value(state: FpState, phase_values: np.ndarray) -> float:
    """Evaluate -v^H W v + 2 Re{v^H q} + C."""
    v = phase_values
    quad = (v.conj() @ state.w_matrix @ v).real
    lin = 2.0 * (v.conj() @ state.q_vector).real
    return float(-quad + lin + state.constant)


# ---------------------------------------------------------------------------
# Discrete per-element updates
# ---------------------------------------------------------------------------

def best_discrete_phase(d: complex, bits: int, keep: int = 0) -> int:
    """Level maximizing cos(angle(d) - level * delta); ties go to the smaller index.

    A zero coupling leaves the objective flat, so the incumbent level is kept.
    """
    if d == 0:
        return keep
    levels = _level_table(bits)
    return int(np.argmax((levels.conj() * d).real))


@njit(cache=True)
def _sweep_kernel(w, q, values, indices, levels):  # pragma: no cover - compiled
    count = values.shape[0]
    n_levels = levels.shape[0]
    for n in range(count):
        acc = 0j
        for j in range(count):
            acc += w[n, j] * values[j]
        d = q[n] - acc + w[n, n] * values[n]
        if d.real != 0.0 or d.imag != 0.0:
            best = 0
            best_val = (levels[0].conjugate() * d).real
            for l in range(1, n_levels):
                val = (levels[l].conjugate() * d).real
                if val > best_val:
                    best_val = val
                    best = l
            if best != indices[n]:
                values[n] = levels[best]
                indices[n] = best


def coordinate_sweep(state: FpState, phases: PhaseVector) -> PhaseVector:
    """One cyclic pass of per-element discrete updates; never decreases the form."""
    indices = phases.indices.copy()
    values = phases.values
    if indices.shape[0]:
        _sweep_kernel(state.w_matrix, state.q_vector, values, indices,
                      np.asarray(_level_table(phases.bits)))
    return PhaseVector(indices=indices, bits=phases.bits)


def design_phases(power_w, weights, slot: ChannelSlot, initial: PhaseVector,
                  config: ScenarioConfig, *, tolerance: float | None = None,
                  max_inner: int | None = None) -> PhaseDesignResult:
    """Alternate auxiliary refreshes with coordinate passes until the phases settle.

    Both auxiliaries are refreshed from the current phases before each pass
    (eta first, since zeta depends on it); that keeps the surrogate tangent to
    the true weighted sum rate, which therefore never decreases across passes.
    Stops when the squared phase-vector change drops below the tolerance.
    """
    tol = config.solver_tolerance if tolerance is None else tolerance
    limit = config.solver_max_inner if max_inner is None else max_inner
    noise = config.noise_power_w
    weights_bw = np.asarray(weights) * config.bandwidth_hz
    power_w = np.asarray(power_w, dtype=float)
    direct, cascaded = slot.direct, slot.cascaded

    phases = initial.copy()
    values = phases.values
    trace: list[float] = []
    iterations = 0
    for iterations in range(1, limit + 1):
        gamma = sinr(power_w, direct, cascaded, values, noise)
        trace.append(weighted_rate_objective(weights_bw, gamma))
        eta = update_eta(gamma)
        eta_tilde = weights_bw * (1.0 + eta)
        zeta = update_zeta(power_w, eta_tilde, direct, cascaded, values, noise)
        state = assemble_quadratic(power_w, eta_tilde, zeta, direct, cascaded, noise)
        new_phases = coordinate_sweep(state, phases)
        new_values = new_phases.values
        change = float(np.sum(np.abs(new_values - values) ** 2))
        phases, values = new_phases, new_values
        if change < tol:
            break
    trace.append(weighted_rate_objective(
        weights_bw, sinr(power_w, direct, cascaded, values, noise)))
    return PhaseDesignResult(phases=phases, objective_trace=trace, iterations=iterations)
