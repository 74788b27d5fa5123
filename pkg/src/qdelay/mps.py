"""Canonical (Vidal) matrix product state over one system site and a chain of time bins.

Each site ``i`` holds ``B[i] = Gamma[i] * Lambda[i+1]`` with index order
``(left bond, physical, right bond)``; ``lams[i]`` is the Schmidt vector of the cut to the
left of site ``i``, so ``lams[0]`` and ``lams[n]`` are the trivial ``[1.0]``. Keeping
``B`` rather than ``Gamma`` lets gate updates avoid dividing by small Schmidt values;
``gamma(i)`` reconstructs the Vidal tensor on demand.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .tensor import svd_truncate

SCHMIDT_FLOOR = 1e-12
DEFAULT_DENSE_LIMIT = 4096
SNAPSHOT_MAGIC = b"VMPS"
SNAPSHOT_VERSION = 1


class SiteKind(enum.IntEnum):
    SYSTEM = 0
    TIME_BIN = 1


@dataclass(frozen=True)
class SiteLabel:
    kind: SiteKind
    bin_index: int | None = None

    @classmethod
    def system(cls) -> "SiteLabel":
        return cls(SiteKind.SYSTEM, None)

    @classmethod
    def time_bin(cls, p: int) -> "SiteLabel":
        return cls(SiteKind.TIME_BIN, int(p))

    @property
    def is_system(self) -> bool:
        return self.kind is SiteKind.SYSTEM

    def __str__(self) -> str:
        return "S" if self.is_system else f"bin[{self.bin_index}]"


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Squared Schmidt coefficients at one bond, descending."""

    weights: np.ndarray
    bond_position: int

    def entropy(self) -> float:
        """Von Neumann entropy in bits, with ``0 log 0 = 0``."""
        return entropy_bits(self.weights)


def entropy_bits(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]
    return float(max(0.0, -np.sum(w * np.log2(w))))


class VidalChain:
    """Matrix product state in Vidal canonical form.

    Args:
        tensors: Right-canonical site tensors ``B[i]`` of shape ``(Dl, d, Dr)``.
        lams: ``len(tensors) + 1`` Schmidt vectors.
        labels: One :class:`SiteLabel` per site; exactly one must be the system.
        d_max: Bond dimension cap applied by gate updates.
        cutoff: Relative singular value cutoff applied by gate updates.
        dense_limit: Largest physical dimension allowed for dense window contraction.
    """

    def __init__(
        self,
        tensors: Sequence[np.ndarray],
        lams: Sequence[np.ndarray],
        labels: Sequence[SiteLabel],
        d_max: int = 64,
        cutoff: float = 0.0,
        dense_limit: int = DEFAULT_DENSE_LIMIT,
    ):
        if len(lams) != len(tensors) + 1 or len(labels) != len(tensors):
            raise ValueError("need one label per site and one Schmidt vector per bond")
        if sum(lab.is_system for lab in labels) != 1:
            raise ValueError("a chain must contain exactly one system site")
        if d_max < 1:
            raise ValueError("d_max must be >= 1")
        self.tensors = [np.asarray(t, dtype=np.complex128) for t in tensors]
        self.lams = [np.asarray(lam, dtype=float) for lam in lams]
        self.labels = list(labels)
        self.d_max = int(d_max)
        self.cutoff = float(cutoff)
        self.dense_limit = int(dense_limit)
        for i, t in enumerate(self.tensors):
            if t.ndim != 3:
                raise ValueError(f"site {i} tensor must be rank 3, got shape {t.shape}")
            if t.shape[0] != self.lams[i].size or t.shape[2] != self.lams[i + 1].size:
                raise ValueError(f"site {i} tensor shape {t.shape} disagrees with bond sizes")

    # ------------------------------------------------------------------ construction

    @classmethod
    def product_state(
        cls,
        site_states: Sequence[np.ndarray],
        labels: Sequence[SiteLabel],
        **kwargs,
    ) -> "VidalChain":
        tensors = []
        for vec in site_states:
            vec = np.asarray(vec, dtype=np.complex128)
            tensors.append(vec.reshape(1, -1, 1).copy())
        lams = [np.ones(1) for _ in range(len(tensors) + 1)]
        return cls(tensors, lams, labels, **kwargs)

    def copy(self) -> "VidalChain":
        return VidalChain(
            [t.copy() for t in self.tensors],
            [lam.copy() for lam in self.lams],
            list(self.labels),
            d_max=self.d_max,
            cutoff=self.cutoff,
            dense_limit=self.dense_limit,
        )

    # ------------------------------------------------------------------ structure

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def physical_dims(self) -> list[int]:
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list[int]:
        return [lam.size for lam in self.lams]

    @property
    def system_position(self) -> int:
        for i, lab in enumerate(self.labels):
            if lab.is_system:
                return i
        raise RuntimeError("chain has no system site")  # pragma: no cover

    def position_of_bin(self, p: int) -> int:
        for i, lab in enumerate(self.labels):
            if not lab.is_system and lab.bin_index == p:
                return i
        raise KeyError(f"time bin {p} is not in the chain")

    def append_site(self, state: np.ndarray, label: SiteLabel) -> None:
        """Append an unentangled site on the right end."""
        if label.is_system:
            raise ValueError("cannot append a second system site")
        vec = np.asarray(state, dtype=np.complex128)
        nrm = np.linalg.norm(vec)
        if abs(nrm - 1.0) > 1e-10:
            raise ValueError("appended site state must be normalized")
        self.tensors.append(vec.reshape(1, -1, 1).copy())
        self.lams.append(np.ones(1))
        self.labels.append(label)

    def gamma(self, i: int) -> np.ndarray:
        """Vidal tensor ``Gamma[i]``; inverses of Schmidt values below the floor are zero."""
        lam = self.lams[i + 1]
        inv = np.where(lam > SCHMIDT_FLOOR, 1.0 / np.where(lam > SCHMIDT_FLOOR, lam, 1.0), 0.0)
        return self.tensors[i] * inv[None, None, :]

    def _check_window(self, first: int, width: int) -> None:
        if first < 0 or first + width > len(self):
            raise IndexError(
                f"window [{first}, {first + width}) is off the chain of length {len(self)}"
            )

    # ------------------------------------------------------------------ updates

    def _truncate(self, m: np.ndarray):
        res = svd_truncate(m, self.d_max, self.cutoff, floor=SCHMIDT_FLOOR)
        total = float(np.sum(res.singular_values**2)) + res.discarded_weight
        kept_norm = float(np.sqrt(np.sum(res.singular_values**2)))
        return res, kept_norm, res.discarded_weight / total

    def _split_two(self, i: int, theta0: np.ndarray) -> float:
        """Restore canonical form over sites ``i, i+1`` from the gated block ``theta0``.

        ``theta0`` has shape ``(Dl, d1, d2, Dr)`` and excludes the left Schmidt vector.
        """
        dl, d1, d2, dr = theta0.shape
        theta = self.lams[i][:, None, None, None] * theta0
        res, kept_norm, disc = self._truncate(theta.reshape(dl * d1, d2 * dr))
        chi = res.rank
        right = res.right_isometry.reshape(chi, d2, dr)
        left = np.tensordot(theta0, right.conj(), axes=([2, 3], [1, 2])) / kept_norm
        self.tensors[i] = left
        self.tensors[i + 1] = right
        self.lams[i + 1] = res.singular_values / kept_norm
        return disc

    def _split_three(self, i: int, theta0: np.ndarray) -> list[float]:
        """Two successive SVDs over sites ``i, i+1, i+2``; ``theta0`` is ``(Dl,d1,d2,d3,Dr)``."""
        dl, d1, d2, d3, dr = theta0.shape
        theta = self.lams[i][:, None, None, None, None] * theta0
        res1, norm1, disc1 = self._truncate(theta.reshape(dl * d1, d2 * d3 * dr))
        chi1 = res1.rank
        y1 = res1.right_isometry.reshape(chi1, d2, d3, dr)
        left = np.tensordot(theta0, y1.conj(), axes=([2, 3, 4], [1, 2, 3])) / norm1
        lam1 = res1.singular_values / norm1
        rest = lam1[:, None, None, None] * y1
        res2, norm2, disc2 = self._truncate(rest.reshape(chi1 * d2, d3 * dr))
        chi2 = res2.rank
        y2 = res2.right_isometry.reshape(chi2, d3, dr)
        middle = np.tensordot(y1, y2.conj(), axes=([2, 3], [1, 2])) / norm2
        self.tensors[i] = left
        self.tensors[i + 1] = middle
        self.tensors[i + 2] = y2
        self.lams[i + 1] = lam1
        self.lams[i + 2] = res2.singular_values / norm2
        return [disc1, disc2]

    def apply_gate(self, first: int, u: np.ndarray, check_unitary: bool = True) -> list[float]:
        """Apply a unitary acting on 2 or 3 adjacent sites starting at ``first``.

        ``u`` is a square matrix over the product of the window's physical spaces, in
        chain order. Returns the discarded weight for each bond inside the window.
        """
        u = np.asarray(u, dtype=np.complex128)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError(f"gate must be a square matrix, got shape {u.shape}")
        width = None
        for w in (2, 3):
            if first + w <= len(self) and first >= 0:
                if int(np.prod(self.physical_dims[first : first + w])) == u.shape[0]:
                    width = w
                    break
        if width is None:
            self._check_window(first, 2)
            raise ValueError(
                f"gate of dimension {u.shape[0]} does not match a 2- or 3-site window at {first}"
            )
        if check_unitary:
            resid = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
            if resid > 1e-8:
                raise ValueError(f"gate is not unitary (residual {resid:.3e})")
        dims = self.physical_dims[first : first + width]
        theta0 = self.tensors[first]
        for j in range(1, width):
            theta0 = np.tensordot(theta0, self.tensors[first + j], axes=(theta0.ndim - 1, 0))
        dl, dr = theta0.shape[0], theta0.shape[-1]
        p = int(np.prod(dims))
        flat = theta0.reshape(dl, p, dr)
        gated = np.einsum("xs,asb->axb", u, flat, optimize=True).reshape(dl, *dims, dr)
        if width == 2:
            return [self._split_two(first, gated)]
        return self._split_three(first, gated)

    def swap(self, left: int) -> float:
        """Exchange the sites at ``left`` and ``left + 1`` (states and labels)."""
        self._check_window(left, 2)
        theta0 = np.tensordot(self.tensors[left], self.tensors[left + 1], axes=(2, 0))
        theta0 = theta0.transpose(0, 2, 1, 3)
        disc = self._split_two(left, theta0)
        self.labels[left], self.labels[left + 1] = self.labels[left + 1], self.labels[left]
        return disc

    # ------------------------------------------------------------------ measurements

    def schmidt_spectrum(self, bond: int) -> SchmidtSpectrum:
        if not 0 <= bond <= len(self):
            raise IndexError(f"bond {bond} out of range 0..{len(self)}")
        return SchmidtSpectrum(self.lams[bond] ** 2, bond)

    def entropy(self, bond: int) -> float:
        return self.schmidt_spectrum(bond).entropy()

    def _local_theta(self, site: int) -> np.ndarray:
        return self.lams[site][:, None, None] * self.tensors[site]

    def local_expectation(self, site: int, op: np.ndarray) -> complex:
        """``<psi| op_site |psi>`` using the canonical form around ``site``."""
        self._check_window(site, 1)
        op = np.asarray(op)
        d = self.physical_dims[site]
        if op.shape != (d, d):
            raise ValueError(f"operator shape {op.shape} does not match physical dimension {d}")
        theta = self._local_theta(site)
        return complex(np.einsum("atb,ts,asb->", theta.conj(), op, theta, optimize=True))

    def _left_env(self, site: int, op: np.ndarray | None) -> np.ndarray:
        theta = self._local_theta(site)
        if op is None:
            return np.einsum("asb,asc->bc", theta, theta.conj(), optimize=True)
        return np.einsum("asb,ts,atc->bc", theta, op, theta.conj(), optimize=True)

    @staticmethod
    def _transfer(env: np.ndarray, b: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
        if op is None:
            return np.einsum("ac,asb,csd->bd", env, b, b.conj(), optimize=True)
        return np.einsum("ac,asb,ts,ctd->bd", env, b, op, b.conj(), optimize=True)

    def two_point_correlation(
        self, site_a: int, op_a: np.ndarray, site_b: int, op_b: np.ndarray
    ) -> complex:
        """``<psi| op_a(site_a) op_b(site_b) |psi>`` for distinct sites."""
        if site_a == site_b:
            raise ValueError("two_point_correlation needs distinct sites")
        for site, op in ((site_a, op_a), (site_b, op_b)):
            self._check_window(site, 1)
            d = self.physical_dims[site]
            if np.shape(op) != (d, d):
                raise ValueError(f"operator shape {np.shape(op)} does not match dimension {d}")
        (i, op_i), (j, op_j) = sorted(((site_a, op_a), (site_b, op_b)), key=lambda x: x[0])
        env = self._left_env(i, np.asarray(op_i))
        for s in range(i + 1, j):
            env = self._transfer(env, self.tensors[s])
        env = self._transfer(env, self.tensors[j], np.asarray(op_j))
        return complex(np.trace(env))

    def window_theta(self, first: int, last: int) -> np.ndarray:
        """Block ``Lambda[first] B[first] ... B[last]`` reshaped to ``(Dl, P, Dr)``."""
        self._check_window(first, last - first + 1)
        if last < first:
            raise ValueError("last must be >= first")
        dims = self.physical_dims[first : last + 1]
        p = int(np.prod(dims))
        if p > self.dense_limit:
            raise ValueError(
                f"window physical dimension {p} exceeds dense limit {self.dense_limit}"
            )
        theta = self._local_theta(first)
        for s in range(first + 1, last + 1):
            theta = np.tensordot(theta, self.tensors[s], axes=(theta.ndim - 1, 0))
        return theta.reshape(theta.shape[0], p, theta.shape[-1])

    def contract_window_density(self, first: int, last: int) -> np.ndarray:
        """Reduced density matrix of sites ``first..last`` (inclusive)."""
        theta = self.window_theta(first, last)
        rho = np.einsum("apb,aqb->pq", theta, theta.conj(), optimize=True)
        return 0.5 * (rho + rho.conj().T)

    def norm_squared(self) -> float:
        """``<psi|psi>`` by a full left-to-right transfer contraction."""
        env = np.ones((1, 1), dtype=np.complex128)
        for b in self.tensors:
            env = self._transfer(env, b)
        return float(np.real(np.trace(env)))

    def to_dense(self) -> np.ndarray:
        """Full state vector in chain order (only for small chains)."""
        total = int(np.prod(self.physical_dims))
        if total > 1 << 22:
            raise ValueError(f"dense state of dimension {total} is too large")
        psi = self.tensors[0]
        for b in self.tensors[1:]:
            psi = np.tensordot(psi, b, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)

    def canonical_residuals(self) -> tuple[float, float]:
        """Largest deviation from right- and left-canonical conditions over all sites.

        Right: ``sum_{s,b} B B^* = 1`` on the left bond. Left: ``sum_{a,s} lam_a^2 B^* B =
        diag(lam_right^2)``, which is the Vidal left condition multiplied through by the
        right Schmidt values so that no inverse is needed.
        """
        right = left = 0.0
        for i, b in enumerate(self.tensors):
            rr = np.einsum("asb,csb->ac", b, b.conj(), optimize=True)
            right = max(right, float(np.max(np.abs(rr - np.eye(b.shape[0])))))
            lam = self.lams[i]
            ll = np.einsum("a,asb,asc->bc", lam**2, b.conj(), b, optimize=True)
            target = np.diag(self.lams[i + 1] ** 2)
            left = max(left, float(np.max(np.abs(ll - target))))
        return right, left

    # ------------------------------------------------------------------ snapshots

    def save(self, fh: BinaryIO | str | Path) -> None:
        """Write a versioned little-endian binary snapshot."""
        if isinstance(fh, (str, Path)):
            with open(fh, "wb") as f:
                self.save(f)
            return
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<B", SNAPSHOT_VERSION))
        fh.write(struct.pack("<IId", len(self), self.d_max, self.cutoff))
        for lab, t in zip(self.labels, self.tensors):
            idx = 0 if lab.bin_index is None else lab.bin_index
            fh.write(struct.pack("<Bq", int(lab.kind), idx))
            fh.write(struct.pack("<III", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<c16").tobytes())
        for lam in self.lams:
            fh.write(struct.pack("<I", lam.size))
            fh.write(np.ascontiguousarray(lam, dtype="<f8").tobytes())

    @classmethod
    def load(cls, fh: BinaryIO | str | Path) -> "VidalChain":
        if isinstance(fh, (str, Path)):
            with open(fh, "rb") as f:
                return cls.load(f)
        data = fh.read()
        buf = io.BytesIO(data)
        if buf.read(4) != SNAPSHOT_MAGIC:
            raise ValueError("not a chain snapshot (bad magic)")
        (version,) = struct.unpack("<B", buf.read(1))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        n, d_max, cutoff = struct.unpack("<IId", buf.read(16))
        labels, tensors, lams = [], [], []
        for _ in range(n):
            kind, idx = struct.unpack("<Bq", buf.read(9))
            kind = SiteKind(kind)
            labels.append(SiteLabel(kind, None if kind is SiteKind.SYSTEM else idx))
            shape = struct.unpack("<III", buf.read(12))
            count = int(np.prod(shape))
            arr = np.frombuffer(buf.read(16 * count), dtype="<c16").reshape(shape)
            tensors.append(arr.astype(np.complex128))
        for _ in range(n + 1):
            (size,) = struct.unpack("<I", buf.read(4))
            lams.append(np.frombuffer(buf.read(8 * size), dtype="<f8").astype(float))
        return cls(tensors, lams, labels, d_max=d_max, cutoff=cutoff)


def new_product_state(
    system_state: np.ndarray,
    bin_dim: int,
    n_bins: int,
    system_position: int = 0,
    first_bin: int = 0,
    **kwargs,
) -> VidalChain:
    """Factorized chain: ``n_bins`` vacuum time bins with the system at ``system_position``.

    Bins are labelled ``first_bin, first_bin + 1, ...`` from left to right, skipping the
    system site.
    """
    system_state = np.asarray(system_state, dtype=np.complex128)
    if abs(np.linalg.norm(system_state) - 1.0) > 1e-10:
        raise ValueError("system_state must be normalized")
    if bin_dim < 1 or n_bins < 0:
        raise ValueError("bin_dim must be >= 1 and n_bins >= 0")
    if not 0 <= system_position <= n_bins:
        raise ValueError("system_position out of range")
    vac = np.zeros(bin_dim, dtype=np.complex128)
    vac[0] = 1.0
    states, labels = [], []
    p = first_bin
    for i in range(n_bins + 1):
        if i == system_position:
            states.append(system_state)
            labels.append(SiteLabel.system())
        else:
            states.append(vac)
            labels.append(SiteLabel.time_bin(p))
            p += 1
    return VidalChain.product_state(states, labels, **kwargs)
