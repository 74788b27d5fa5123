"""Independent reference solvers for small instances.

* fixed-step RK4 Lindblad integration for the two-atom Markovian master equation and
  single-atom Bloch equations,
* the effective Bloch steady state of an atom in front of a mirror in the Markov limit,
* a dense state-vector evolver applying the step unitary in the full product space.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .model import (
    ID2,
    SIGMA_MINUS,
    ExperimentConfig,
    Setup,
    atom_operator,
    build_step_unitary,
    build_system_hamiltonian,
)

DENSE_BUDGET = 1_000_000

Liouvillian = Callable[[np.ndarray], np.ndarray]


def dissipator(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``c rho c^+ - {c^+ c, rho} / 2``."""
    cd = c.conj().T
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def lindblad(h: np.ndarray, jumps: Sequence[np.ndarray]) -> Liouvillian:
    def rhs(rho: np.ndarray) -> np.ndarray:
        out = -1j * (h @ rho - rho @ h)
        for c in jumps:
            out += dissipator(c, rho)
        return out

    return rhs


def rk4_integrate(rhs: Liouvillian, rho0: np.ndarray, t_grid: Sequence[float], step: float) -> np.ndarray:
    """Classical RK4 with sub-steps no longer than ``step`` between grid points.

    Returns one density matrix per entry of ``t_grid``; ``t_grid[0]`` is the initial time.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if step <= 0:
        raise ValueError("integration step must be positive")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be non-decreasing")
    rho = np.array(rho0, dtype=np.complex128)
    out = np.empty((t_grid.size,) + rho.shape, dtype=np.complex128)
    if t_grid.size == 0:
        return out
    out[0] = rho
    for i in range(1, t_grid.size):
        span = t_grid[i] - t_grid[i - 1]
        n_sub = max(1, int(math.ceil(span / step - 1e-9)))
        h = span / n_sub
        for _ in range(n_sub):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * h * k1)
            k3 = rhs(rho + 0.5 * h * k2)
            k4 = rhs(rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = rho
    return out


def two_atom_markov_channels(cfg: ExperimentConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    """Effective Hamiltonian and jump operators of the two-atom map in the limit tau -> 0+.

    Each waveguide mode is a cascade: the atom that meets a bin first (source) feeds the
    other (destination), which sees the bin with phase ``e^{i phi}``. ``L`` runs from atom
    1 to atom 2 and ``R`` from atom 2 to atom 1. A cascade with jump operators ``a`` then
    ``b`` contributes the collective jump ``a + b`` and the Hamiltonian
    ``(i/2)(a^+ b - b^+ a)``.
    """
    c1 = atom_operator(SIGMA_MINUS, 0, 2)
    c2 = atom_operator(SIGMA_MINUS, 1, 2)
    phase = np.exp(1j * cfg.phi)
    h = build_system_hamiltonian(cfg).copy()
    jumps = []
    for rate, src, dst in ((cfg.gamma_L, c1, c2), (cfg.gamma_R, c2, c1)):
        a = math.sqrt(rate) * src
        b = math.sqrt(rate) * phase * dst
        jumps.append(a + b)
        h += 0.5j * (a.conj().T @ b - b.conj().T @ a)
    return h, jumps


def integrate_two_atom_master_eq(
    cfg: ExperimentConfig,
    t_grid: Sequence[float],
    rho0: np.ndarray | None = None,
    step: float | None = None,
) -> np.ndarray:
    """Markovian two-atom master equation (delay treated as zero), RK4 with step <= dt/10."""
    if cfg.setup is not Setup.TWO_ATOMS:
        raise ValueError("integrate_two_atom_master_eq needs a two_atoms configuration")
    limit = cfg.dt / 10
    step = limit if step is None else step
    if step > limit * (1 + 1e-12):
        raise ValueError(f"integration step {step} exceeds dt/10 = {limit}")
    if rho0 is None:
        psi = cfg.system_state()
        rho0 = np.outer(psi, psi.conj())
    h, jumps = two_atom_markov_channels(cfg)
    return rk4_integrate(lindblad(h, jumps), rho0, t_grid, step)


def bloch_hamiltonian(omega: complex, delta: float) -> np.ndarray:
    return -delta * np.diag([0.0, 1.0]).astype(np.complex128) - 0.5 * (
        omega * SIGMA_MINUS + np.conj(omega) * SIGMA_MINUS.T
    )


def integrate_single_atom_bloch(
    gamma: float,
    omega: complex,
    delta: float,
    t_grid: Sequence[float],
    rho0: np.ndarray | None = None,
    step: float | None = None,
) -> np.ndarray:
    """Driven, damped two-level atom; ``rho0`` defaults to the ground state."""
    t_grid = np.asarray(t_grid, dtype=float)
    if step is None:
        spacing = np.min(np.diff(t_grid)) if t_grid.size > 1 else 1.0
        rate = max(gamma, abs(omega), abs(delta), 1e-12)
        step = min(spacing / 10, 0.01 / rate)
    if rho0 is None:
        rho0 = np.diag([1.0, 0.0]).astype(np.complex128)
    rhs = lindblad(bloch_hamiltonian(omega, delta), [math.sqrt(gamma) * SIGMA_MINUS])
    return rk4_integrate(rhs, rho0, t_grid, step)


def bloch_steady_state(gamma: float, omega: complex, delta: float) -> np.ndarray:
    """Stationary density matrix of the Bloch equations (requires ``gamma > 0``)."""
    if gamma <= 0:
        raise ValueError("steady state is not unique without decay")
    w2 = abs(omega) ** 2
    pe = (w2 / 4) / (delta**2 + gamma**2 / 4 + w2 / 2)
    # d rho_eg/dt = (i delta - gamma/2) rho_eg + (i conj(omega)/2)(1 - 2 pe)
    rho_eg = -(0.5j * np.conj(omega) * (1 - 2 * pe)) / (1j * delta - gamma / 2)
    return np.array([[1 - pe, np.conj(rho_eg)], [rho_eg, pe]], dtype=np.complex128)


def effective_mirror_rates(cfg: ExperimentConfig) -> tuple[float, float]:
    """``(gamma_eff, Delta_eff) = (2 gamma cos^2(phi/2), Delta - (gamma/2) sin(phi))``.

    Here ``gamma = gamma_L + gamma_R`` with ``gamma_L = gamma_R``.
    """
    if cfg.setup is not Setup.MIRROR:
        raise ValueError("effective mirror rates need a mirror configuration")
    if not math.isclose(cfg.gamma_L, cfg.gamma_R, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError("effective Bloch limit requires gamma_L == gamma_R")
    g = cfg.gamma
    return 2 * g * math.cos(cfg.phi / 2) ** 2, cfg.delta1 - 0.5 * g * math.sin(cfg.phi)


def mirror_effective_bloch(cfg: ExperimentConfig) -> np.ndarray:
    """Bloch steady state with the mirror's effective decay rate and detuning."""
    gamma_eff, delta_eff = effective_mirror_rates(cfg)
    return bloch_steady_state(gamma_eff, cfg.omegas[0], delta_eff)


def brute_force_evolve(
    cfg: ExperimentConfig, n_steps: int, system_state: np.ndarray | None = None
) -> np.ndarray:
    """Dense evolution of system and bins ``-ell .. n_steps-1`` by the step unitary.

    The returned vector is ordered ``system (x) bin[-ell] (x) ... (x) bin[n_steps-1]``.
    """
    ell = cfg.ell
    n_bins = n_steps + ell
    dim = cfg.system_dim * cfg.bin_dim**n_bins
    if dim > DENSE_BUDGET:
        raise ValueError(f"dense dimension {dim} exceeds budget {DENSE_BUDGET}")
    psi_s = cfg.system_state() if system_state is None else np.asarray(system_state, complex)
    vac = np.zeros(cfg.bin_dim, dtype=np.complex128)
    vac[0] = 1.0
    psi = psi_s
    for _ in range(n_bins):
        psi = np.kron(psi, vac)
    psi = psi.reshape((cfg.system_dim,) + (cfg.bin_dim,) * n_bins)
    u = build_step_unitary(cfg).as_tensor()
    for k in range(n_steps):
        ax_new, ax_old = 1 + k + ell, 1 + k
        psi = np.tensordot(u, psi, axes=([3, 4, 5], [0, ax_new, ax_old]))
        # result axes: (s, new, old, remaining axes in original order without 0/new/old)
        rest = [ax for ax in range(1 + n_bins) if ax not in (0, ax_new, ax_old)]
        order = [0] + [None] * n_bins
        order[ax_new] = 1
        order[ax_old] = 2
        for j, ax in enumerate(rest):
            order[ax] = 3 + j
        psi = psi.transpose(order)
    return psi.reshape(-1)


def chain_state_vector(state) -> np.ndarray:
    """Dense vector of an :class:`~qdelay.engine.EvolutionState` in brute-force ordering.

    The trailing fresh vacuum bin is projected out; the system axis is moved to the front.
    """
    chain = state.chain
    psi = chain.to_dense().reshape(chain.physical_dims)
    psi = psi[..., 0]
    s = state.system_position
    return np.moveaxis(psi, s, 0).reshape(-1)


__all__ = [
    "ID2",
    "bloch_steady_state",
    "brute_force_evolve",
    "chain_state_vector",
    "effective_mirror_rates",
    "integrate_single_atom_bloch",
    "integrate_two_atom_master_eq",
    "mirror_effective_bloch",
    "rk4_integrate",
    "two_atom_markov_channels",
]
