"""Deterministic numerical substrate shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Randomness flows
exclusively through :class:`RngState`, a thin wrapper around numpy's
counter-based Philox4x64-10 bit generator keyed by a 64-bit seed, so a stream
is fully described by (seed, counter) and reproduces across platforms.
"""
from __future__ import annotations

import hashlib
from typing import Any, Callable

import numpy as np

from src.config.config import AppConfig
from src.core.errors import DegenerateVector, NonFiniteError, ShapeError

_SEED_MASK = (1 << 64) - 1


class RngState:
    """Seeded random stream backed by Philox4x64-10.

    The key of the Philox generator is the seed itself; the stream position is
    the generator's 256-bit block counter. Child streams derived with
    :meth:`spawn` are keyed by the SHA-256 of the parent seed and the path, so
    independent subsystems never share draws.

    Args:
        seed (int): Any integer; reduced modulo 2**64.
    """
    def __init__(self, seed: int):
        self.seed = int(seed) & _SEED_MASK
        self._generator = np.random.Generator(np.random.Philox(key=self.seed))

    @property
    def position(self) -> int:
        """Low word of the Philox block counter (number of 4x64-bit blocks drawn)."""
        return int(self._generator.bit_generator.state["state"]["counter"][0])

    def spawn(self, *path: Any) -> "RngState":
        """Derives an independent child stream for the given path components."""
        material = f"{self.seed:016x}/" + "/".join(str(p) for p in path)
        digest = hashlib.sha256(material.encode()).hexdigest()[:16]
        return RngState(int(digest, 16))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, population, size=None, replace: bool = True):
        return self._generator.choice(population, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, position={self.position})"


def ensure_finite(array: np.ndarray, name: str = "array") -> np.ndarray:
    """Returns ``array`` as float64, raising NonFiniteError on NaN/Inf entries."""
    array = np.asarray(array, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        bad = int(np.flatnonzero(~np.isfinite(array))[0])
        raise NonFiniteError(f"{name} contains a non-finite entry at flat index {bad}", coordinate=bad)
    return array


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validates a 2-D finite float64 matrix."""
    matrix = ensure_finite(data, name)
    if matrix.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {matrix.shape}")
    return matrix


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax of a K×N logit matrix with max subtraction.

    Raises:
        NonFiniteError: If any logit is NaN or infinite.
    """
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=0, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=0, keepdims=True)


def softmax(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` for arrays of any rank."""
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=axis, keepdims=True)


def l2_normalize(v: np.ndarray, eps: float = AppConfig.NORMALIZE_EPS) -> np.ndarray:
    """Scales ``v`` to unit Euclidean norm.

    Raises:
        DegenerateVector: If ``‖v‖ <= eps``; the caller decides the fallback.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > eps:
        raise DegenerateVector(f"cannot normalize vector with norm {norm:.3e} <= {eps:.1e}")
    return v / norm


def normalize_rows(matrix: np.ndarray, eps: float = AppConfig.NORMALIZE_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Normalizes every row, returning (rows, degenerate_mask).

    Degenerate rows (norm <= eps) are left as zeros and flagged in the mask.
    Works on the last axis, so batched (B, K, D) inputs are accepted.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    degenerate = norms[..., 0] <= eps
    safe = np.where(norms > eps, norms, 1.0)
    rows = np.where(degenerate[..., None], 0.0, matrix / safe)
    return rows, degenerate


def orthogonal_projector(v: np.ndarray) -> np.ndarray:
    """Π⊥_v = I − v vᵀ for a unit vector v."""
    v = np.asarray(v, dtype=np.float64)
    return np.eye(v.shape[0]) - np.outer(v, v)


def sym_eig(A: np.ndarray, symmetry_tol: float = 1e-9,
            max_sweeps: int = AppConfig.JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Args:
        A (np.ndarray): D×D symmetric matrix.
        symmetry_tol (float): Largest tolerated entry of ``A − Aᵀ``.
        max_sweeps (int): Upper bound on full sweeps over the (p, q) pairs.

    Returns:
        tuple[np.ndarray, np.ndarray]: Eigenvalues in descending order and the
            orthogonal matrix whose columns are the matching eigenvectors, so
            that ``A = V diag(λ) Vᵀ``.

    Raises:
        ShapeError: If ``A`` is not square.
        ValueError: If ``A`` is not symmetric within ``symmetry_tol``.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError(f"sym_eig needs a square matrix, got {A.shape}")
    asymmetry = float(np.max(np.abs(A - A.T))) if n else 0.0
    if asymmetry > symmetry_tol:
        raise ValueError(f"sym_eig input is not symmetric (max |A - A^T| = {asymmetry:.3e})")

    a = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = float(np.linalg.norm(a))
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum(a[off_mask] ** 2)))
        if off <= 1e-15 * scale or scale == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p, vec_q = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vec_p - s * vec_q
                V[:, q] = s * vec_p + c * vec_q

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], V[:, order]


def random_orthogonal(D: int, rng: RngState) -> np.ndarray:
    """Haar-distributed D×D orthogonal matrix (QR of a Gaussian with sign fix)."""
    if D < 1:
        raise ValueError(f"random_orthogonal needs D >= 1, got {D}")
    gaussian = rng.normal(size=(D, D))
    Q, R = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs[None, :]


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = AppConfig.FINITE_DIFF_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Args:
        f (Callable): Scalar function of a flat M-vector.
        x (np.ndarray): Evaluation point (M-vector).
        h (float): Step size, must be positive.

    Returns:
        np.ndarray: ``(f(x + h e_i) − f(x − h e_i)) / 2h`` for every coordinate.

    Raises:
        ValueError: If ``h <= 0``.
        NonFiniteError: If ``f`` returns a non-finite value; ``coordinate``
            names the perturbed coordinate.
    """
    if not h > 0:
        raise ValueError(f"finite difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64).ravel()
    grad = np.zeros_like(x)
    for i in range(x.size):
        probe = x.copy()
        probe[i] = x[i] + h
        f_plus = float(f(probe))
        probe[i] = x[i] - h
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"function is not finite around coordinate {i}", coordinate=i)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-12) -> float:
    """‖actual − expected‖ / max(‖actual‖, ‖expected‖, floor)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = max(float(np.linalg.norm(actual)), float(np.linalg.norm(expected)), floor)
    return float(np.linalg.norm(actual - expected)) / denom
