"""Read-only physics outputs computed from a Vidal chain.

All routines rely on the chain being right-canonical (``B`` tensors) so that the part of
the chain right of a window contracts to the identity and the part left of it to
``diag(lambda**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .model import PROJ_E, ExperimentConfig, BinOperators, atom_operator
from .mps import VidalChain, entropy_bits

if TYPE_CHECKING:
    from .engine import EvolutionState, Recorder

SPECTRUM_CONVENTION = (
    "S(nu) = 2 Re[(1/dt) sum_{p=0}^{M-1} w_p C(p) exp(i nu p dt)], "
    "C(p) = <dB^+(t_q) dB(t_{q-p})>, w_0 = 1/2, w_p = 1 otherwise (one-sided transform)"
)


class NoOutputFluxError(ValueError):
    pass


@dataclass(frozen=True)
class EntropyProfile:
    """Entropies ``S(rho_A)`` for ``A`` = system plus bins in ``[t - t_A, t)``.

    ``s_sys`` is the value at ``t_A = 0``; ``s_circuit`` the value at ``t_A = tau``
    (``None`` when the profile is shorter than the delay).
    """

    t: float
    t_A: np.ndarray
    values: np.ndarray
    s_sys: float
    s_circuit: float | None


@dataclass(frozen=True)
class PhotonDistribution:
    p: np.ndarray
    tail_mass: float

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.p.size), self.p))


def _bin_positions(chain: VidalChain) -> dict[int, int]:
    return {lab.bin_index: i for i, lab in enumerate(chain.labels) if not lab.is_system}


def entropy_profile(
    chain: VidalChain, k: int, p_max: int, dt: float, ell: int | None = None
) -> EntropyProfile:
    """Entropy at ``t_A = p_A dt`` for ``p_A = 0..p_max``.

    The cut for ``p_A`` lies left of bin ``k - p_A`` (left of the system for ``p_A = 0``).
    Cuts beyond the oldest bin in the chain are omitted.
    """
    where = _bin_positions(chain)
    bonds = [chain.system_position]
    for pa in range(1, p_max + 1):
        pos = where.get(k - pa)
        if pos is None:
            break
        bonds.append(pos)
    values = np.array([entropy_bits(chain.lams[b] ** 2) for b in bonds])
    t_a = np.arange(values.size) * dt
    s_circ = float(values[ell]) if ell is not None and ell < values.size else None
    return EntropyProfile(k * dt, t_a, values, float(values[0]), s_circ)


def circuit_entropy(chain: VidalChain, k: int, ell: int) -> float:
    """``S(rho_circuit)``: system plus delay line against the output field."""
    return entropy_bits(chain.lams[_bin_positions(chain)[k - ell]] ** 2)


def delay_photon_distribution(
    chain: VidalChain, window: list[int], photon_counts: np.ndarray, n_max: int
) -> PhotonDistribution:
    """Distribution of the total photon number held in the contiguous sites ``window``.

    A transfer contraction carries a counting register of ``n_max + 1`` slots plus one
    overflow slot; each site shifts the register by the photon number of its basis state.
    """
    if not window:
        p = np.zeros(n_max + 1)
        p[0] = 1.0
        return PhotonDistribution(p, 0.0)
    first, last = min(window), max(window)
    if sorted(window) != list(range(first, last + 1)):
        raise ValueError("delay window must be contiguous")
    counts = np.asarray(photon_counts, dtype=int)
    slots = n_max + 2
    lam = chain.lams[first]
    env = np.zeros((lam.size, lam.size, slots), dtype=np.complex128)
    env[:, :, 0] = np.diag(lam**2)
    levels = sorted(set(counts.tolist()))
    for pos in range(first, last + 1):
        b = chain.tensors[pos]
        new = np.zeros((b.shape[2], b.shape[2], slots), dtype=np.complex128)
        for m in levels:
            bm = b[:, counts == m, :]
            moved = np.einsum("acn,asb,csd->bdn", env, bm, bm.conj(), optimize=True)
            if m == 0:
                new += moved
            else:
                new[:, :, m:-1] += moved[:, :, : slots - 1 - m]
                new[:, :, -1] += moved[:, :, slots - 1 - m :].sum(axis=2)
        env = new
    p = np.real(np.einsum("bbn->n", env))[: n_max + 1]
    p = np.clip(p, 0.0, 1.0)
    return PhotonDistribution(p, float(1.0 - p.sum()))


def mean_photons(chain: VidalChain, window: list[int], number: np.ndarray) -> float:
    return float(sum(np.real(chain.local_expectation(pos, number)) for pos in window))


def _correlation_sweep(
    chain: VidalChain, pos_q: int, op_q: np.ndarray, op_far: np.ndarray, count: int
) -> np.ndarray:
    """``<op_q(pos_q) op_far(pos_q - p)>`` for ``p = 1..count`` by one right-to-left sweep."""
    b = chain.tensors[pos_q]
    env = np.einsum("bsc,ts,dtc->bd", b, op_q, b.conj(), optimize=True)
    out = np.empty(count, dtype=np.complex128)
    for p in range(1, count + 1):
        j = pos_q - p
        bj = chain.tensors[j]
        lam2 = chain.lams[j] ** 2
        out[p - 1] = np.einsum(
            "a,asb,ts,bc,atc->", lam2, bj, op_far, env, bj.conj(), optimize=True
        )
        env = np.einsum("asb,bc,dsc->ad", bj, env, bj.conj(), optimize=True)
    return out


def _output_bin(chain: VidalChain, k_max: int, ell: int) -> tuple[int, int]:
    q = k_max - ell - 1
    return q, _bin_positions(chain)[q]


def output_correlations(
    chain: VidalChain, k_max: int, ell: int, M: int, annihilate: np.ndarray, incoherent: bool = False
) -> np.ndarray:
    """``C(p) = <dB^+(t_q) dB(t_{q-p})>`` for ``p = 0..M-1`` with ``q = k_max - ell - 1``.

    With ``incoherent`` the product of mean fields is subtracted from each term.
    """
    q, pos_q = _output_bin(chain, k_max, ell)
    if M < 1 or M > q:
        raise ValueError(f"M={M} must lie in 1..q={q} (not enough output bins)")
    a = np.asarray(annihilate)
    a_dag = a.conj().T
    corr = np.empty(M, dtype=np.complex128)
    corr[0] = chain.local_expectation(pos_q, a_dag @ a)
    if M > 1:
        corr[1:] = _correlation_sweep(chain, pos_q, a_dag, a, M - 1)
    if incoherent:
        mean_q = np.conj(chain.local_expectation(pos_q, a))
        means = np.array([chain.local_expectation(pos_q - p, a) for p in range(M)])
        corr = corr - mean_q * means
    return corr


def output_spectrum(
    chain: VidalChain,
    k_max: int,
    ell: int,
    nu_grid: np.ndarray,
    dt: float,
    annihilate: np.ndarray,
    M: int | None = None,
    incoherent: bool = False,
) -> tuple[np.ndarray, dict]:
    """Steady-state output spectrum on ``nu_grid`` from the most recent output bins.

    Returns the spectrum and a metadata dict recording ``M``, ``q`` and the transform
    convention.
    """
    q = k_max - ell - 1
    M = int(np.floor(0.8 * q)) if M is None else int(M)
    corr = output_correlations(chain, k_max, ell, M, annihilate, incoherent)
    weights = np.ones(M)
    weights[0] = 0.5
    p = np.arange(M)
    phases = np.exp(1j * np.outer(np.asarray(nu_grid, dtype=float), p * dt))
    spec = 2.0 * np.real(phases @ (weights * corr)) / dt
    meta = {"M": M, "q": q, "incoherent": bool(incoherent), "convention": SPECTRUM_CONVENTION}
    return spec, meta


def output_flux(chain: VidalChain, k_max: int, ell: int, annihilate: np.ndarray, dt: float) -> float:
    """Photon flux ``<dB^+ dB> / dt**2`` of the most recent output bin, per unit time."""
    _, pos_q = _output_bin(chain, k_max, ell)
    a = np.asarray(annihilate)
    return float(np.real(chain.local_expectation(pos_q, a.conj().T @ a))) / dt**2


def g2_function(
    chain: VidalChain,
    k_max: int,
    ell: int,
    p_max: int,
    annihilate: np.ndarray,
    dt: float,
    flux_floor: float = 1e-12,
) -> np.ndarray:
    """Normalized intensity correlation ``g2(p dt)`` for ``p = 0..p_max`` of the output.

    ``g2(0)`` uses the normally ordered ``<dB^+ dB^+ dB dB>`` on bin ``q``; for ``p > 0`` the
    operators sit on different bins and reduce to a number-number correlation. The
    denominator is ``<dB^+ dB>_q**2`` so that a coherent field gives exactly 1.
    """
    q, pos_q = _output_bin(chain, k_max, ell)
    if p_max >= q + ell:
        raise ValueError(f"p_max={p_max} reaches beyond the oldest bin")
    a = np.asarray(annihilate)
    a_dag = a.conj().T
    num = a_dag @ a
    n_q = float(np.real(chain.local_expectation(pos_q, num)))
    if n_q / dt**2 <= flux_floor:
        raise NoOutputFluxError("no output flux; g2 undefined")
    vals = np.empty(p_max + 1)
    vals[0] = np.real(chain.local_expectation(pos_q, a_dag @ a_dag @ a @ a))
    if p_max > 0:
        vals[1:] = np.real(_correlation_sweep(chain, pos_q, num, num, p_max))
    return np.clip(vals / n_q**2, 0.0, None)


def system_populations(chain: VidalChain) -> np.ndarray:
    """Excited-state probability of each atom from the reduced system density matrix."""
    s = chain.system_position
    rho = chain.contract_window_density(s, s)
    n_atoms = int(round(np.log2(rho.shape[0])))
    return np.array(
        [float(np.real(np.trace(rho @ atom_operator(PROJ_E, a, n_atoms)))) for a in range(n_atoms)]
    )


def system_density(chain: VidalChain) -> np.ndarray:
    s = chain.system_position
    return chain.contract_window_density(s, s)


def local_norm(chain: VidalChain) -> float:
    """``sum Lambda**2`` at the system site; 1 whenever the Schmidt vectors are normalized."""
    s = chain.system_position
    theta = chain.lams[s][:, None, None] * chain.tensors[s]
    return float(np.real(np.vdot(theta, theta)))


class NormTracker:
    """Full transfer-matrix ``<psi|psi>`` with the frozen output bins cached.

    Bins left of position ``k`` never change once emitted, so their transfer product is
    extended by one site per step and only the active part is recontracted.
    """

    def __init__(self) -> None:
        self._env = np.ones((1, 1), dtype=np.complex128)
        self._frozen = 0

    def __call__(self, state: "EvolutionState") -> float:
        chain = state.chain
        while self._frozen < state.k:
            self._env = VidalChain._transfer(self._env, chain.tensors[self._frozen])
            self._frozen += 1
        env = self._env
        for b in chain.tensors[self._frozen :]:
            env = VidalChain._transfer(env, b)
        return float(np.real(np.trace(env)))


def default_recorders(cfg: ExperimentConfig) -> list["Recorder"]:
    """Time series (populations, delay photons, norm, discarded weight) and entropy profiles."""
    from .engine import Recorder

    ops = BinOperators.for_config(cfg)
    total_number = sum(ops.number)
    norm = NormTracker()

    def timeseries(state: "EvolutionState") -> dict:
        pe = system_populations(state.chain)
        return {
            "pe1": float(pe[0]),
            "pe2": float(pe[1]) if pe.size > 1 else 0.0,
            "n_delay": mean_photons(state.chain, state.delay_window, total_number),
            "norm": norm(state),
            "disc_weight": state.cumulative_discarded_weight,
        }

    def entropy(state: "EvolutionState") -> EntropyProfile:
        return entropy_profile(state.chain, state.k, 2 * cfg.ell, cfg.dt, cfg.ell)

    stride = cfg.record_stride
    return [Recorder("timeseries", timeseries, stride), Recorder("entropy", entropy, stride)]
