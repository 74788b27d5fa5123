"""Stroboscopic time-bin evolution on a Vidal chain.

Chain layout at step ``k`` (left to right)::

    bin[-ell] ... bin[k-ell-1] | bin[k-ell] ... bin[k-1] | S | bin[k]
          output field               delay line         sys  fresh input

so bin ``p`` sits at position ``p + ell``, the system at ``k + ell`` and the Schmidt
vector to the left of bin ``p`` is the cut separating bins ``< p`` from the rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .model import ExperimentConfig, StepUnitary, build_step_unitary
from .mps import SiteLabel, VidalChain, new_product_state

log = logging.getLogger(__name__)


class TruncationBudgetExceeded(RuntimeError):
    """Cumulative discarded weight went above the configured budget."""


@dataclass
class EvolutionState:
    chain: VidalChain
    ell: int
    k: int = 0
    cumulative_discarded_weight: float = 0.0

    @property
    def system_position(self) -> int:
        return self.k + self.ell

    @property
    def delay_window(self) -> list[int]:
        """Positions of bins ``k-1, k-2, ..., k-ell``."""
        s = self.system_position
        return [s - j for j in range(1, self.ell + 1)]

    def bin_position(self, p: int) -> int:
        return p + self.ell

    def circuit_bond(self) -> int:
        """Bond separating the circuit (system + delay line) from the output field."""
        return self.k

    def system_bond(self) -> int:
        return self.system_position


def initial_state(cfg: ExperimentConfig, system_state: np.ndarray | None = None) -> EvolutionState:
    """Product state: vacuum bins ``-ell..-1``, the system, and vacuum bin 0."""
    psi = cfg.system_state() if system_state is None else system_state
    chain = new_product_state(
        psi,
        cfg.bin_dim,
        cfg.ell + 1,
        system_position=cfg.ell,
        first_bin=-cfg.ell,
        d_max=cfg.d_max,
        cutoff=cfg.svd_cutoff,
    )
    return EvolutionState(chain, cfg.ell)


def chain_gate(u: StepUnitary) -> np.ndarray:
    """Reorder the step unitary from ``(S, new, old)`` to chain order ``(old, S, new)``."""
    t = u.as_tensor().transpose(2, 0, 1, 5, 3, 4)
    dim = u.matrix.shape[0]
    return np.ascontiguousarray(t.reshape(dim, dim))


def step(state: EvolutionState, u: StepUnitary, gate: np.ndarray | None = None) -> EvolutionState:
    """Advance ``state`` from ``k`` to ``k + 1`` in place.

    Routing swaps bring bin ``k-ell`` next to the system, the step unitary acts on
    ``(bin[k-ell], S, bin[k])``, the swaps are undone, the system is swapped past bin
    ``k`` and a fresh vacuum bin ``k+1`` is appended.
    """
    chain, k, ell = state.chain, state.k, state.ell
    s = state.system_position
    if s + 1 >= len(chain) or chain.labels[s + 1] != SiteLabel.time_bin(k):
        raise RuntimeError(f"missing vacuum input bin {k} to the right of the system")
    if not chain.labels[s].is_system:
        raise RuntimeError("system site is not where the step expects it")
    gate = chain_gate(u) if gate is None else gate
    disc = 0.0
    # route bin k-ell next to the system
    for pos in range(s - ell, s - 1):
        disc += chain.swap(pos)
    disc += sum(chain.apply_gate(s - 1, gate, check_unitary=False))
    for pos in range(s - 2, s - ell - 1, -1):
        disc += chain.swap(pos)
    disc += chain.swap(s)
    vac = np.zeros(chain.physical_dims[s], dtype=np.complex128)
    vac[0] = 1.0
    chain.append_site(vac, SiteLabel.time_bin(k + 1))
    state.k = k + 1
    state.cumulative_discarded_weight += disc
    return state


@dataclass
class Recorder:
    """Observable hook fired after every step whose index is a multiple of ``stride``."""

    name: str
    fn: Callable[[EvolutionState], Any]
    stride: int = 1


@dataclass
class ObservableSeries:
    """Time-stamped records produced by :func:`run`, keyed by recorder name."""

    dt: float
    records: dict[str, list[tuple[float, Any]]] = field(default_factory=dict)

    def add(self, name: str, t: float, value: Any) -> None:
        self.records.setdefault(name, []).append((t, value))

    def times(self, name: str) -> np.ndarray:
        return np.array([t for t, _ in self.records.get(name, [])])

    def values(self, name: str) -> list[Any]:
        return [v for _, v in self.records.get(name, [])]

    def __len__(self) -> int:
        return sum(len(v) for v in self.records.values())


def run(
    cfg: ExperimentConfig,
    recorders: Iterable[Recorder] | None = None,
    state: EvolutionState | None = None,
    n_steps: int | None = None,
    u: StepUnitary | None = None,
) -> tuple[EvolutionState, ObservableSeries]:
    """Evolve from the initial product state to ``t_max`` (or for ``n_steps`` steps).

    Recorders fire after every step whose index is a multiple of their stride. With
    ``t_max = 0`` nothing fires and the initial state is returned.
    """
    if recorders is None:
        from .observables import default_recorders

        recorders = default_recorders(cfg)
    recorders = list(recorders)
    state = initial_state(cfg) if state is None else state
    u = build_step_unitary(cfg) if u is None else u
    gate = chain_gate(u)
    series = ObservableSeries(cfg.dt)
    total = cfg.n_steps if n_steps is None else n_steps
    for _ in range(total):
        step(state, u, gate)
        if state.cumulative_discarded_weight > cfg.trunc_budget:
            raise TruncationBudgetExceeded(
                f"cumulative discarded weight {state.cumulative_discarded_weight:.3e} exceeds "
                f"budget {cfg.trunc_budget:.3e} at t={state.k * cfg.dt:.4g}; "
                f"increase d_max (currently {cfg.d_max})"
            )
        t = state.k * cfg.dt
        for rec in recorders:
            if state.k % rec.stride == 0:
                series.add(rec.name, t, rec.fn(state))
    log.debug("finished %d steps, discarded weight %.3e", total, state.cumulative_discarded_weight)
    return state, series
