"""Dense complex tensor primitives: pairwise contraction, truncated SVD, matrix exponential.

Tensors are plain ``numpy`` arrays of dtype ``complex128`` stored in row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg


class ZeroMatrixError(ValueError):
    """Raised when a truncated SVD is requested for an all-zero matrix."""


@dataclass(frozen=True)
class SvdResult:
    """Truncated singular value decomposition ``m ~ left @ diag(s) @ right``.

    Attributes:
        left_isometry: Matrix with orthonormal columns, shape ``(m, chi)``.
        singular_values: Kept singular values, descending, shape ``(chi,)``.
        right_isometry: Matrix with orthonormal rows, shape ``(chi, n)``.
        discarded_weight: Sum of squares of the dropped singular values.
    """

    left_isometry: np.ndarray
    singular_values: np.ndarray
    right_isometry: np.ndarray
    discarded_weight: float

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])


def as_tensor(data) -> np.ndarray:
    """Return ``data`` as a finite complex128 array."""
    arr = np.asarray(data, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf amplitudes")
    return arr


def contract_pair(
    a: np.ndarray, a_axes: Sequence[int], b: np.ndarray, b_axes: Sequence[int]
) -> np.ndarray:
    """Contract ``a`` and ``b`` over paired axes.

    The result carries the free axes of ``a`` followed by the free axes of ``b``,
    each in their original order.
    """
    a_axes = [int(ax) % a.ndim for ax in a_axes] if a.ndim else list(a_axes)
    b_axes = [int(ax) % b.ndim for ax in b_axes] if b.ndim else list(b_axes)
    if len(a_axes) != len(b_axes):
        raise ValueError(
            f"cannot contract shapes {a.shape} and {b.shape}: "
            f"{len(a_axes)} axes paired with {len(b_axes)}"
        )
    for ia, ib in zip(a_axes, b_axes):
        if a.shape[ia] != b.shape[ib]:
            raise ValueError(
                f"cannot contract shapes {a.shape} and {b.shape}: "
                f"axis {ia} (dim {a.shape[ia]}) vs axis {ib} (dim {b.shape[ib]})"
            )
    return np.tensordot(a, b, axes=(a_axes, b_axes))


def _svd(m: np.ndarray):
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def svd_truncate(m: np.ndarray, d_max: int, cutoff: float = 0.0, floor: float = 0.0) -> SvdResult:
    """Singular value decomposition keeping at most ``d_max`` values.

    Trailing singular values with ``s_i / s_0 < cutoff`` are dropped as well. Values with
    ``s_i / s_0 < floor`` are treated as exact zeros: dropped and not counted in the
    discarded weight. The kept values are *not* renormalized.

    Raises:
        ZeroMatrixError: if ``m`` has no nonzero singular value.
    """
    if m.ndim != 2:
        raise ValueError(f"svd_truncate expects a matrix, got shape {m.shape}")
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    u, s, vh = _svd(m)
    if s.size == 0 or s[0] == 0.0:
        raise ZeroMatrixError("zero matrix at bond")
    keep = min(int(d_max), s.size)
    if cutoff > 0 or floor > 0:
        keep = min(keep, int(np.count_nonzero(s >= max(cutoff, floor) * s[0])))
    keep = max(keep, 1)
    dropped = s[keep:]
    discarded = float(np.sum(dropped[dropped >= floor * s[0]] ** 2))
    return SvdResult(u[:, :keep], s[:keep], vh[:keep, :], discarded)


def matrix_exponential(g: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """``exp(g)`` by scaling and squaring with a Taylor series.

    ``g`` is scaled by ``2**-s`` so that its 1-norm is at most 1/2, the series is summed
    until a term drops three orders of magnitude below ``tol * 2**-s`` in 1-norm, and the
    result is squared ``s`` times.
    """
    g = np.asarray(g, dtype=np.complex128)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"matrix_exponential expects a square matrix, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("matrix contains NaN or Inf")
    n = g.shape[0]
    norm = np.linalg.norm(g, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    a = g / (2.0**squarings)
    term_tol = tol / (2.0**squarings)
    result = np.eye(n, dtype=np.complex128)
    term = np.eye(n, dtype=np.complex128)
    for j in range(1, 60):
        term = term @ a / j
        result += term
        if np.linalg.norm(term, 1) < term_tol * 1e-3:
            break
    for _ in range(squarings):
        result = result @ result
    return result
