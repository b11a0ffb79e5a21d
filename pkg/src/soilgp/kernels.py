"""Spatial and inter-task covariance functions.

Two joint-covariance constructions are supported for n correlated tasks
observed at planar locations:

* ``ICM`` — intrinsic coregionalization: a single shared Matérn 3/2
  spatial kernel, scaled per task pair by a free-form task covariance
  ``Kc = L @ L.T``. For homotopic, task-major-ordered data the joint
  matrix is exactly the Kronecker product ``Kc ⊗ Ks``.
* ``CONVOLVED`` — each task keeps its own Matérn 3/2 length-scale and
  cross-task covariances are the analytic convolution of the per-task
  basis functions, which preserves positive semidefiniteness for any
  combination of length-scales.

All hyperparameters live in one packed unconstrained vector (see
:func:`pack_theta`); positivity is enforced by log-parameterization, so
the optimizer never needs box constraints.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky
from scipy.spatial.distance import cdist

__all__ = [
    "KernelMode",
    "NumericFailure",
    "NOISE_FLOOR",
    "JITTER_LADDER",
    "matern32",
    "matern32_dl",
    "cross_matern32",
    "cross_matern32_dli",
    "TaskCholesky",
    "task_cov",
    "theta_dim",
    "pack_theta",
    "unpack_theta",
    "assemble_training_cov",
    "assemble_cross_cov",
    "chol_with_jitter",
]

SQRT3 = np.sqrt(3.0)

# Default floor on per-task noise variance (normalized units squared).
NOISE_FLOOR = 1e-8

# Escalation sequence tried before a covariance is declared non-PSD.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8)

# Relative length-scale difference below which the cross kernel switches
# to its equal-length-scale limit (the plain Matérn at the smaller
# length-scale); avoids the 0/0 in the closed form.
_EQ_TOL = 1e-4


class KernelMode(enum.Enum):
    ICM = "icm"
    CONVOLVED = "convolved"

    @classmethod
    def parse(cls, name: str) -> "KernelMode":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown kernel mode {name!r} (expected icm|convolved)")


class NumericFailure(RuntimeError):
    """Covariance factorization failed after the full jitter ladder."""


def _check_lengthscale(l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    if np.any(l <= 0) or not np.all(np.isfinite(l)):
        raise ValueError("length-scale must be positive and finite")
    return l


def matern32(r, lengthscale):
    """Unit-amplitude Matérn 3/2 correlation, k(r) = (1 + √3 r/l) e^(−√3 r/l)."""
    l = _check_lengthscale(lengthscale)
    z = SQRT3 * np.asarray(r, dtype=float) / l
    return (1.0 + z) * np.exp(-z)


def matern32_dl(r, lengthscale):
    """d matern32 / d lengthscale = 3 r² / l³ · e^(−√3 r/l)."""
    l = _check_lengthscale(lengthscale)
    r = np.asarray(r, dtype=float)
    return 3.0 * r**2 / l**3 * np.exp(-SQRT3 * r / l)


def cross_matern32(r, l_i, l_j):
    """Unit-amplitude cross-covariance of two Matérn 3/2 kernels.

    For distinct length-scales the convolution of the two underlying
    basis functions has the closed form

        k(r) = 2 √(l_i l_j) / (l_i² − l_j²) · (l_i e^(−√3 r/l_i) − l_j e^(−√3 r/l_j)),

    which tends to the ordinary Matérn 3/2 as l_j → l_i and satisfies
    k(0) = 2 √(l_i l_j) / (l_i + l_j) ≤ 1. Length-scales within 1e-4
    relative of each other use the limit form at the smaller of the two
    (argument-order symmetric, exact on the task diagonal).
    """
    li = _check_lengthscale(l_i)
    lj = _check_lengthscale(l_j)
    r = np.asarray(r, dtype=float)
    li, lj, r = np.broadcast_arrays(li, lj, r)
    near = np.abs(li - lj) <= _EQ_TOL * np.maximum(li, lj)
    denom = np.where(near, 1.0, li**2 - lj**2)
    amp = 2.0 * np.sqrt(li * lj) / denom
    exact = amp * (li * np.exp(-SQRT3 * r / li) - lj * np.exp(-SQRT3 * r / lj))
    zmin = SQRT3 * r / np.minimum(li, lj)
    limit = (1.0 + zmin) * np.exp(-zmin)
    out = np.where(near, limit, exact)
    return out if out.ndim else float(out)


def cross_matern32_dli(r, l_i, l_j):
    """Partial derivative of :func:`cross_matern32` with respect to ``l_i``.

    Inside the equal-length-scale switch this differentiates the value
    actually computed there (the Matérn at min(l_i, l_j)): the full
    d matern32/dl goes to the smaller argument, zero to the larger, and
    half to each when they coincide bitwise (the task diagonal, where
    row and column contributions add back to the full derivative).
    """
    li = _check_lengthscale(l_i)
    lj = _check_lengthscale(l_j)
    r = np.asarray(r, dtype=float)
    li, lj, r = np.broadcast_arrays(li, lj, r)
    near = np.abs(li - lj) <= _EQ_TOL * np.maximum(li, lj)
    denom = np.where(near, 1.0, li**2 - lj**2)
    amp = 2.0 * np.sqrt(li * lj) / denom
    ei = np.exp(-SQRT3 * r / li)
    ej = np.exp(-SQRT3 * r / lj)
    bracket = (0.5 / li - 2.0 * li / denom) * (li * ei - lj * ej) + ei * (
        1.0 + SQRT3 * r / li
    )
    exact = amp * bracket
    lmin = np.minimum(li, lj)
    weight = np.where(li == lj, 0.5, np.where(li < lj, 1.0, 0.0))
    limit = weight * 3.0 * r**2 / lmin**3 * np.exp(-SQRT3 * r / lmin)
    out = np.where(near, limit, exact)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TaskCholesky:
    """Packed free-form factor of the task covariance, Kc = L Lᵀ.

    ``packed`` holds the n(n+1)/2 lower-triangular entries row-major
    with the diagonal in log-space, so every packed vector materializes
    to a factor with strictly positive diagonal.
    """

    n: int
    packed: np.ndarray

    def __post_init__(self):
        expected = self.n * (self.n + 1) // 2
        if self.packed.shape != (expected,):
            raise ValueError(
                f"expected {expected} packed entries for n={self.n}, "
                f"got {self.packed.shape}"
            )

    @classmethod
    def from_matrix(cls, L: np.ndarray) -> "TaskCholesky":
        L = np.asarray(L, dtype=float)
        n = L.shape[0]
        if L.shape != (n, n):
            raise ValueError("factor must be square")
        if np.any(np.diag(L) <= 0):
            raise ValueError("factor diagonal must be strictly positive")
        packed = []
        for a in range(n):
            for b in range(a + 1):
                packed.append(np.log(L[a, a]) if a == b else L[a, b])
        return cls(n, np.array(packed))

    def matrix(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        k = 0
        for a in range(self.n):
            for b in range(a + 1):
                L[a, b] = np.exp(self.packed[k]) if a == b else self.packed[k]
                k += 1
        return L


def task_cov(chol: TaskCholesky) -> np.ndarray:
    """Materialize the free-form task covariance Kc = L Lᵀ (symmetric PSD)."""
    L = chol.matrix()
    return L @ L.T


# ---------------------------------------------------------------------------
# Hyperparameter packing
#
# theta = [ vech(L) row-major, log-diagonal |
#           log l_1..l_n  (single entry in ICM mode) |
#           log sigma^2_1..sigma^2_n ]
# ---------------------------------------------------------------------------


def theta_dim(n_tasks: int, mode: KernelMode) -> int:
    n_ls = 1 if mode is KernelMode.ICM else n_tasks
    return n_tasks * (n_tasks + 1) // 2 + n_ls + n_tasks


def pack_theta(L: np.ndarray, lengthscales, noise_vars, mode: KernelMode) -> np.ndarray:
    """Pack materialized hyperparameters into the unconstrained vector."""
    chol = TaskCholesky.from_matrix(L)
    ls = _check_lengthscale(np.atleast_1d(lengthscales))
    nv = np.atleast_1d(np.asarray(noise_vars, dtype=float))
    n = chol.n
    n_ls = 1 if mode is KernelMode.ICM else n
    if ls.shape != (n_ls,):
        raise ValueError(f"expected {n_ls} length-scale(s) for mode {mode.value}")
    if nv.shape != (n,) or np.any(nv <= 0):
        raise ValueError(f"expected {n} positive noise variances")
    return np.concatenate([chol.packed, np.log(ls), np.log(nv)])


def unpack_theta(
    theta: np.ndarray,
    n_tasks: int,
    mode: KernelMode,
    noise_floor: float = NOISE_FLOOR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split packed theta into (L, lengthscales, noise variances).

    Noise variances are floored at ``noise_floor``. Raises ValueError on
    a dimension mismatch between theta and n_tasks/mode.
    """
    theta = np.asarray(theta, dtype=float)
    expected = theta_dim(n_tasks, mode)
    if theta.shape != (expected,):
        raise ValueError(
            f"theta dimension mismatch: got {theta.shape}, expected ({expected},) "
            f"for n_tasks={n_tasks}, mode={mode.value}"
        )
    n_tri = n_tasks * (n_tasks + 1) // 2
    n_ls = 1 if mode is KernelMode.ICM else n_tasks
    L = TaskCholesky(n_tasks, theta[:n_tri]).matrix()
    ls = np.exp(theta[n_tri : n_tri + n_ls])
    noise = np.maximum(np.exp(theta[n_tri + n_ls :]), noise_floor)
    return L, ls, noise


# ---------------------------------------------------------------------------
# Joint covariance assembly
# ---------------------------------------------------------------------------


def _spatial_block(r, tasks_row, tasks_col, lengthscales, mode: KernelMode):
    """Unit-amplitude spatial correlation for every (row, col) pair."""
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    if mode is KernelMode.ICM:
        if ls.shape != (1,):
            raise ValueError("ICM mode takes a single shared length-scale")
        return matern32(r, ls[0])
    li = ls[tasks_row][:, None]
    lj = ls[tasks_col][None, :]
    return cross_matern32(r, li, lj)


def _validate_tasks(tasks, n: int) -> np.ndarray:
    tasks = np.asarray(tasks, dtype=np.intp)
    if tasks.size and (tasks.min() < 0 or tasks.max() >= n):
        raise ValueError(f"task index out of range for {n} tasks")
    return tasks


def assemble_training_cov(
    tasks,
    xy,
    task_cov_matrix: np.ndarray,
    lengthscales,
    noise_vars,
    mode: KernelMode,
) -> np.ndarray:
    """Full M×M training covariance with per-task noise on the diagonal.

    Entry [(i,p),(j,q)] = Kc[i,j] · k_ij(‖x_p − x_q‖), where k_ij is the
    shared Matérn 3/2 in ICM mode and the convolved cross kernel in
    CONVOLVED mode; σ²_task(p) is added on the diagonal only.
    """
    n = task_cov_matrix.shape[0]
    tasks = _validate_tasks(tasks, n)
    xy = np.asarray(xy, dtype=float)
    if xy.shape != (tasks.size, 2):
        raise ValueError(f"xy must be ({tasks.size}, 2), got {xy.shape}")
    noise = np.asarray(noise_vars, dtype=float)
    if noise.shape != (n,):
        raise ValueError(f"expected {n} noise variances, got {noise.shape}")
    r = cdist(xy, xy)
    K = task_cov_matrix[np.ix_(tasks, tasks)] * _spatial_block(
        r, tasks, tasks, lengthscales, mode
    )
    K[np.diag_indices_from(K)] += noise[tasks]
    return K


def assemble_cross_cov(
    query_tasks,
    query_xy,
    tasks,
    xy,
    task_cov_matrix: np.ndarray,
    lengthscales,
    mode: KernelMode,
) -> np.ndarray:
    """Q×M covariance between query points and observations (no noise)."""
    n = task_cov_matrix.shape[0]
    q_tasks = _validate_tasks(query_tasks, n)
    tasks = _validate_tasks(tasks, n)
    q_xy = np.asarray(query_xy, dtype=float)
    xy = np.asarray(xy, dtype=float)
    if q_xy.shape != (q_tasks.size, 2) or xy.shape != (tasks.size, 2):
        raise ValueError("coordinate array shape does not match task count")
    r = cdist(q_xy, xy)
    return task_cov_matrix[np.ix_(q_tasks, tasks)] * _spatial_block(
        r, q_tasks, tasks, lengthscales, mode
    )


def chol_with_jitter(
    K: np.ndarray, ladder: tuple[float, ...] = JITTER_LADDER
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, escalating diagonal jitter on failure.

    Returns (L, jitter_used). Raises :class:`NumericFailure` once the
    ladder is exhausted or the matrix is not finite; callers inside the
    optimizer treat that as a rejected hyperparameter draw, not a crash.
    """
    if not np.all(np.isfinite(K)):
        raise NumericFailure("covariance contains non-finite entries")
    for jitter in ladder:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(K.shape[0])
            return cholesky(Kj, lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericFailure(
        f"covariance not positive definite after jitter {ladder[-1]:g}"
    )
