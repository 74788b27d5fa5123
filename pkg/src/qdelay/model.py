"""Physical operator content for the two shipped setups.

Code units: hbar = 1 and rates in units of a reference decay rate (``gamma_L + gamma_R``
is 1 for the defaults). Basis conventions:

* atom: ``|g> = 0``, ``|e> = 1``; two atoms are ordered ``atom1 (x) atom2``;
* a time bin holds one bosonic mode (mirror) or two, ordered ``(L, R)``, each truncated
  at ``d_ph`` photons;
* the step unitary acts on ``system (x) bin_k (x) bin_{k-ell}``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .tensor import matrix_exponential


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class Setup(str, enum.Enum):
    TWO_ATOMS = "two_atoms"
    MIRROR = "mirror"


SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=np.complex128)  # |g><e|
PROJ_E = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=np.complex128)
ID2 = np.eye(2, dtype=np.complex128)

_ATOM_STATES = {
    "g": np.array([1.0, 0.0], dtype=np.complex128),
    "e": np.array([0.0, 1.0], dtype=np.complex128),
    "+": np.array([1.0, 1.0], dtype=np.complex128) / math.sqrt(2.0),
    "-": np.array([1.0, -1.0], dtype=np.complex128) / math.sqrt(2.0),
}


@dataclass(frozen=True)
class SpectrumSettings:
    nu_min: float = -6.0
    nu_max: float = 6.0
    n_nu: int = 601
    M: int | None = None
    incoherent: bool = True


@dataclass(frozen=True)
class G2Settings:
    p_max: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Physical and numerical parameters of one run.

    If ``chi`` is given, the couplings are ``gamma_{L/R} = gamma (1 +- chi) / 2`` with
    ``gamma = gamma_L + gamma_R`` taken from the supplied (or default) rates.
    ``omega*`` are Rabi moduli and ``omega*_phase`` their phases; for the mirror setup
    only atom 1 is used.
    """

    setup: Setup
    tau: float
    dt: float
    gamma_L: float = 0.5
    gamma_R: float = 0.5
    chi: float | None = None
    omega1: float = 0.0
    omega1_phase: float = 0.0
    omega2: float | None = None
    omega2_phase: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    phi: float = 0.0
    d_ph: int = 2
    d_max: int = 64
    svd_cutoff: float = 1e-8
    t_max: float = 10.0
    trunc_budget: float = 1e-3
    initial_system: Any = None
    record_stride: int = 1
    spectrum: SpectrumSettings = field(default_factory=SpectrumSettings)
    g2: G2Settings = field(default_factory=G2Settings)

    def __post_init__(self) -> None:
        try:
            setup = Setup(self.setup)
        except ValueError as exc:
            raise ConfigError(f"unknown setup {self.setup!r}") from exc
        object.__setattr__(self, "setup", setup)
        if isinstance(self.spectrum, dict):
            object.__setattr__(self, "spectrum", SpectrumSettings(**self.spectrum))
        if isinstance(self.g2, dict):
            object.__setattr__(self, "g2", G2Settings(**self.g2))
        if self.chi is not None:
            if not -1.0 <= self.chi <= 1.0:
                raise ConfigError("chi must lie in [-1, 1]")
            total = self.gamma_L + self.gamma_R
            object.__setattr__(self, "gamma_L", total * (1 + self.chi) / 2)
            object.__setattr__(self, "gamma_R", total * (1 - self.chi) / 2)
        if self.omega2 is None:
            object.__setattr__(self, "omega2", self.omega1)
        if self.gamma_L < 0 or self.gamma_R < 0:
            raise ConfigError("rule violated: gamma_L, gamma_R >= 0")
        if self.d_ph < 1:
            raise ConfigError("rule violated: d_ph >= 1")
        if self.d_max < 1:
            raise ConfigError("rule violated: d_max >= 1")
        if self.dt <= 0 or self.tau <= 0:
            raise ConfigError("rule violated: dt > 0 and tau > 0")
        if self.t_max < 0:
            raise ConfigError("rule violated: t_max >= 0")
        if self.svd_cutoff < 0 or self.trunc_budget < 0:
            raise ConfigError("rule violated: svd_cutoff >= 0 and trunc_budget >= 0")
        if self.record_stride < 1:
            raise ConfigError("rule violated: record_stride >= 1")
        ratio = self.tau / self.dt
        ell = round(ratio)
        if ell < 1 or abs(ratio - ell) > 1e-9 * max(1.0, ratio):
            suggestion = self.tau / max(1, round(ratio))
            raise ConfigError(
                f"tau/dt not integral (tau={self.tau}, dt={self.dt}); "
                f"nearest admissible dt is {suggestion:.6g}"
            )
        rate = max(self.gamma, *(abs(o) for o in self.omegas), *(abs(d) for d in self.deltas))
        if self.dt * rate > 0.2:
            raise ConfigError(
                f"rule violated: dt * max(gamma, |Omega|, |Delta|) <= 0.2 (got {self.dt * rate:.3g})"
            )
        if self.dt * rate > 0.1:
            warnings.warn(
                f"dt * max rate = {self.dt * rate:.3g} exceeds 0.1; discretization error may be visible",
                stacklevel=3,
            )
        self.system_state()  # validates initial_system

    # ------------------------------------------------------------------ derived

    @property
    def gamma(self) -> float:
        return self.gamma_L + self.gamma_R

    @property
    def n_atoms(self) -> int:
        return 2 if self.setup is Setup.TWO_ATOMS else 1

    @property
    def omegas(self) -> tuple[complex, ...]:
        o1 = self.omega1 * np.exp(1j * self.omega1_phase)
        if self.n_atoms == 1:
            return (complex(o1),)
        return (complex(o1), complex(self.omega2 * np.exp(1j * self.omega2_phase)))

    @property
    def deltas(self) -> tuple[float, ...]:
        return (self.delta1,) if self.n_atoms == 1 else (self.delta1, self.delta2)

    @property
    def ell(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def system_dim(self) -> int:
        return 2**self.n_atoms

    @property
    def n_modes(self) -> int:
        return 2 if self.setup is Setup.TWO_ATOMS else 1

    @property
    def bin_dim(self) -> int:
        return (self.d_ph + 1) ** self.n_modes

    def system_state(self) -> np.ndarray:
        """Normalized initial system vector from ``initial_system``.

        Accepts ``None`` (all ground), a string with one of ``g e + -`` per atom, or an
        explicit amplitude list whose entries are numbers or ``[re, im]`` pairs.
        """
        spec = self.initial_system
        if spec is None:
            spec = "g" * self.n_atoms
        if isinstance(spec, str):
            if len(spec) != self.n_atoms or any(ch not in _ATOM_STATES for ch in spec):
                raise ConfigError(
                    f"initial_system {spec!r} must give one of 'g','e','+','-' per atom"
                )
            vec = np.ones(1, dtype=np.complex128)
            for ch in spec:
                vec = np.kron(vec, _ATOM_STATES[ch])
            return vec
        amps = []
        for a in spec:
            if isinstance(a, (list, tuple)):
                if len(a) != 2:
                    raise ConfigError("complex amplitudes must be [re, im] pairs")
                amps.append(complex(a[0], a[1]))
            else:
                amps.append(complex(a))
        vec = np.array(amps, dtype=np.complex128)
        if vec.size != self.system_dim:
            raise ConfigError(f"initial_system needs {self.system_dim} amplitudes")
        if abs(np.linalg.norm(vec) - 1.0) > 1e-10:
            raise ConfigError("initial_system amplitudes must be normalized")
        return vec

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with fields changed (re-applying ``chi`` to split rates is idempotent)."""
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Setup):
                value = value.value
            elif dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return cls(**data)


@dataclass(frozen=True)
class BinOperators:
    """Noise increments ``Delta B`` and photon numbers on one time bin.

    ``annihilate[m]`` is ``Delta B`` for mode ``m`` (matrix elements ``sqrt(n dt)``);
    ``number[m]`` the photon number of mode ``m``.
    """

    annihilate: tuple[np.ndarray, ...]
    number: tuple[np.ndarray, ...]
    dt: float
    d_ph: int

    @property
    def dim(self) -> int:
        return self.annihilate[0].shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.annihilate)

    @property
    def photon_counts(self) -> np.ndarray:
        """Total photon number of each basis state of the bin."""
        return np.real(np.diag(sum(self.number))).round().astype(int)

    @classmethod
    def build(cls, n_modes: int, d_ph: int, dt: float) -> "BinOperators":
        levels = d_ph + 1
        a = np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(np.complex128)
        n = np.diag(np.arange(levels, dtype=float)).astype(np.complex128)
        eye = np.eye(levels, dtype=np.complex128)
        ann, num = [], []
        for m in range(n_modes):
            ops_a = [eye] * n_modes
            ops_n = [eye] * n_modes
            ops_a[m] = a
            ops_n[m] = n
            ann.append(math.sqrt(dt) * _kron_all(ops_a))
            num.append(_kron_all(ops_n))
        return cls(tuple(ann), tuple(num), float(dt), int(d_ph))

    @classmethod
    def for_config(cls, cfg: ExperimentConfig) -> "BinOperators":
        return cls.build(cfg.n_modes, cfg.d_ph, cfg.dt)


def _kron_all(ops: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for op in ops:
        out = np.kron(out, op)
    return out


def atom_operator(op: np.ndarray, atom: int, n_atoms: int) -> np.ndarray:
    """Embed a single-atom operator acting on ``atom`` (0-based)."""
    ops = [ID2] * n_atoms
    ops[atom] = op
    return _kron_all(ops)


def build_system_hamiltonian(cfg: ExperimentConfig) -> np.ndarray:
    """``sum_n [-Delta_n |e_n><e_n| - (Omega_n |g_n><e_n| + h.c.) / 2]``."""
    n = cfg.n_atoms
    h = np.zeros((cfg.system_dim, cfg.system_dim), dtype=np.complex128)
    for atom, (omega, delta) in enumerate(zip(cfg.omegas, cfg.deltas)):
        local = -delta * PROJ_E - 0.5 * (omega * SIGMA_MINUS + np.conj(omega) * SIGMA_MINUS.T)
        h += atom_operator(local, atom, n)
    return h


def build_step_generator(cfg: ExperimentConfig, ops: BinOperators | None = None) -> np.ndarray:
    """Exponent ``-i H dt + O_k`` on ``system (x) bin_k (x) bin_{k-ell}``.

    Mirror: ``O_k = (sqrt(gR) dB^+(t_k) + sqrt(gL) dB^+(t_{k-ell}) e^{i phi}) c - h.c.``.
    Two atoms: atom 1 couples to ``L`` of bin k and ``R`` of bin k-ell (phase ``e^{i phi}``
    on the delayed bin), atom 2 to ``L`` of bin k-ell (with phase) and ``R`` of bin k.
    """
    ops = ops if ops is not None else BinOperators.for_config(cfg)
    ds, db = cfg.system_dim, ops.dim
    eye_s = np.eye(ds, dtype=np.complex128)
    eye_b = np.eye(db, dtype=np.complex128)
    h = build_system_hamiltonian(cfg)
    gen = -1j * cfg.dt * _kron_all([h, eye_b, eye_b])
    phase = np.exp(1j * cfg.phi)

    def new(op):
        return _kron_all([eye_s, op, eye_b])

    def old(op):
        return _kron_all([eye_s, eye_b, op])

    def sys(op):
        return _kron_all([op, eye_b, eye_b])

    sg_l, sg_r = math.sqrt(cfg.gamma_L), math.sqrt(cfg.gamma_R)
    if cfg.setup is Setup.MIRROR:
        db_dag = ops.annihilate[0].conj().T
        emit = (sg_r * new(db_dag) + sg_l * phase * old(db_dag)) @ sys(SIGMA_MINUS)
        gen += emit - emit.conj().T
    else:
        bl_dag = ops.annihilate[0].conj().T
        br_dag = ops.annihilate[1].conj().T
        c1 = sys(atom_operator(SIGMA_MINUS, 0, 2))
        c2 = sys(atom_operator(SIGMA_MINUS, 1, 2))
        emit1 = (sg_l * new(bl_dag) + sg_r * phase * old(br_dag)) @ c1
        emit2 = (sg_l * phase * old(bl_dag) + sg_r * new(br_dag)) @ c2
        gen += emit1 - emit1.conj().T + emit2 - emit2.conj().T
    return gen


@dataclass(frozen=True)
class StepUnitary:
    """Dense ``exp(generator)`` with the dimensions of its three tensor factors."""

    matrix: np.ndarray
    system_dim: int
    bin_dim: int

    def as_tensor(self) -> np.ndarray:
        """Six-index view ``(s, new, old, s', new', old')``."""
        d = (self.system_dim, self.bin_dim, self.bin_dim)
        return self.matrix.reshape(d + d)

    def unitarity_residual(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def build_step_unitary(cfg: ExperimentConfig, ops: BinOperators | None = None) -> StepUnitary:
    ops = ops if ops is not None else BinOperators.for_config(cfg)
    u = matrix_exponential(build_step_generator(cfg, ops))
    return StepUnitary(u, cfg.system_dim, ops.dim)
