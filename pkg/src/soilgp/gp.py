"""Multi-task Gaussian-process training, prediction and diagnostics.

Hyperparameters are selected by maximizing the log marginal likelihood

    log p(y | X, θ) = −½ yᵀ(K+Σ)⁻¹y − ½ log det(K+Σ) − (M/2) log 2π

with a multi-start quasi-Newton ascent (L-BFGS-B) in the unconstrained
packed space. Fitting operates on per-task z-scored values; predictions
can be returned in normalized or original units.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky as scipy_cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .data import Dataset, Location, NormStats, Observation, make_dataset, normalize
from .kernels import (
    JITTER_LADDER,
    NOISE_FLOOR,
    KernelMode,
    NumericFailure,
    assemble_training_cov,
    chol_with_jitter,
    cross_matern32,
    cross_matern32_dli,
    matern32,
    matern32_dl,
    pack_theta,
    theta_dim,
    unpack_theta,
)

__all__ = [
    "GradientMethod",
    "HyperParams",
    "FitConfig",
    "FittedModel",
    "PredictionResult",
    "log_marginal_likelihood",
    "lml_gradient",
    "fit",
    "condition",
    "predict",
    "task_correlations",
    "fit_stgp",
    "sample_prior",
    "theta_from_moments",
]

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

REJECTED = -np.inf  # sentinel for hyperparameters whose covariance is not PSD


class GradientMethod(enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True)
class HyperParams:
    """Packed unconstrained hyperparameter vector.

    Layout (see kernels.pack_theta): task-factor entries with
    log-diagonal, then log length-scale(s), then log noise variances.
    """

    values: np.ndarray
    n_tasks: int
    mode: KernelMode

    def __post_init__(self):
        v = np.array(self.values, dtype=float)  # own copy; frozen below
        if v.shape != (theta_dim(self.n_tasks, self.mode),):
            raise ValueError(
                f"theta dimension mismatch: {v.shape} for n_tasks={self.n_tasks}, "
                f"mode={self.mode.value}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "values", v)
        v.flags.writeable = False

    def unpack(self, noise_floor: float = NOISE_FLOOR):
        """(L, lengthscales, noise_variances) with the floor applied."""
        return unpack_theta(self.values, self.n_tasks, self.mode, noise_floor)

    def task_cov(self) -> np.ndarray:
        L, _, _ = self.unpack()
        return L @ L.T


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 8
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    mode: KernelMode = KernelMode.CONVOLVED
    gradient: GradientMethod = GradientMethod.ANALYTIC
    noise_floor: float = NOISE_FLOOR

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be positive")
        if self.tol <= 0 or self.noise_floor <= 0:
            raise ValueError("tol and noise_floor must be positive")


@dataclass(frozen=True)
class FittedModel:
    """Trained state: hyperparameters plus the cached training solve.

    Immutable after construction; safe for concurrent read-only
    prediction.
    """

    theta: HyperParams
    dataset: Dataset  # values in normalized units
    stats: NormStats
    chol_factor: np.ndarray  # lower Cholesky of K + Σ (+ jitter)
    alpha: np.ndarray  # (K + Σ)⁻¹ y
    lml: float
    jitter: float
    noise_floor: float
    restart_lmls: tuple[float, ...] = field(default=())

    @property
    def n_tasks(self) -> int:
        return self.theta.n_tasks

    @property
    def mode(self) -> KernelMode:
        return self.theta.mode


@dataclass(frozen=True)
class PredictionResult:
    tasks: np.ndarray
    xy: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    normalized: bool


# ---------------------------------------------------------------------------
# Marginal likelihood and gradient
# ---------------------------------------------------------------------------


class _Problem:
    """Per-dataset quantities reused across optimizer iterations."""

    def __init__(self, dataset: Dataset):
        self.n_tasks = dataset.n_tasks
        self.tasks = dataset.task_index
        self.xy = dataset.xy
        self.y = dataset.values
        self.r = cdist(self.xy, self.xy)
        self.m = len(self.y)


# Magnitude bound on packed entries: keeps exp() and the Kc = L Lᵀ
# products finite, so extreme line-search proposals reject cleanly
# instead of overflowing.
_THETA_CAP = 250.0


def _covariance(prob: _Problem, theta_vec, mode, noise_floor):
    if not np.all(np.isfinite(theta_vec)) or np.max(np.abs(theta_vec)) > _THETA_CAP:
        raise NumericFailure("hyperparameter vector out of numeric range")
    L, ls, noise = unpack_theta(theta_vec, prob.n_tasks, mode, noise_floor)
    Kc = L @ L.T
    t = prob.tasks
    if mode is KernelMode.ICM:
        S = matern32(prob.r, ls[0])
    else:
        S = cross_matern32(prob.r, ls[t][:, None], ls[t][None, :])
    K = Kc[np.ix_(t, t)] * S
    K[np.diag_indices_from(K)] += noise[t]
    return K, S, L, Kc, ls, noise


def _lml_core(prob: _Problem, theta_vec, mode, noise_floor):
    """Returns (lml, chol, jitter, alpha, parts) or (REJECTED, None, ...)."""
    try:
        K, S, L, Kc, ls, noise = _covariance(prob, theta_vec, mode, noise_floor)
        Lf, jitter = chol_with_jitter(K, JITTER_LADDER)
    except NumericFailure:
        return REJECTED, None, 0.0, None, None
    alpha = cho_solve((Lf, True), prob.y)
    lml = (
        -0.5 * prob.y @ alpha
        - np.log(np.diag(Lf)).sum()
        - 0.5 * prob.m * LOG_2PI
    )
    return lml, Lf, jitter, alpha, (S, L, Kc, ls, noise)


def _analytic_gradient(prob: _Problem, mode, Lf, alpha, parts, theta_vec, noise_floor):
    S, L, Kc, ls, noise = parts
    n = prob.n_tasks
    t = prob.tasks
    m = prob.m
    Kinv = cho_solve((Lf, True), np.eye(m))
    W = np.outer(alpha, alpha) - Kinv

    # Task factor: dK/dL_ab = (δ_ia L_jb + δ_ja L_ib) S  →  grad = (A L)_ab
    WS = W * S
    A = np.bincount(
        (t[:, None] * n + t[None, :]).ravel(), weights=WS.ravel(), minlength=n * n
    ).reshape(n, n)
    GL = A @ L
    g_chol = []
    for a in range(n):
        for b in range(a + 1):
            g = GL[a, b]
            if a == b:
                g *= L[a, a]  # chain through the log-diagonal
            g_chol.append(g)

    # Length-scales
    Kce = Kc[np.ix_(t, t)]
    if mode is KernelMode.ICM:
        dS = matern32_dl(prob.r, ls[0])
        g_ls = np.array([0.5 * np.sum(W * Kce * dS) * ls[0]])
    else:
        DU = cross_matern32_dli(prob.r, ls[t][:, None], ls[t][None, :])
        row = np.sum(W * Kce * DU, axis=1)
        g_ls = np.bincount(t, weights=row, minlength=n) * ls

    # Noise variances (zero below the floor, where the value is clamped)
    n_tri = n * (n + 1) // 2
    n_ls = len(ls)
    raw = np.exp(theta_vec[n_tri + n_ls :])
    active = raw > noise_floor
    g_noise = 0.5 * np.bincount(t, weights=np.diag(W), minlength=n) * raw * active

    return np.concatenate([np.array(g_chol), g_ls, g_noise])


def _fd_gradient(prob: _Problem, theta_vec, mode, noise_floor, step=1e-5):
    g = np.empty_like(theta_vec)
    for i in range(len(theta_vec)):
        tp = theta_vec.copy()
        tp[i] += step
        fp = _lml_core(prob, tp, mode, noise_floor)[0]
        tp[i] -= 2 * step
        fm = _lml_core(prob, tp, mode, noise_floor)[0]
        g[i] = (fp - fm) / (2 * step)
    return g


def log_marginal_likelihood(theta: HyperParams, dataset: Dataset) -> float:
    """Log evidence of the data under theta; −inf when the covariance is
    rejected (Cholesky fails after the full jitter ladder)."""
    if theta.n_tasks != dataset.n_tasks:
        raise ValueError(
            f"theta is for {theta.n_tasks} tasks, dataset has {dataset.n_tasks}"
        )
    prob = _Problem(dataset)
    return _lml_core(prob, theta.values, theta.mode, NOISE_FLOOR)[0]


def lml_gradient(
    theta: HyperParams,
    dataset: Dataset,
    method: GradientMethod = GradientMethod.ANALYTIC,
    fd_step: float = 1e-5,
) -> np.ndarray:
    """Gradient of the log marginal likelihood in the packed space."""
    if theta.n_tasks != dataset.n_tasks:
        raise ValueError(
            f"theta is for {theta.n_tasks} tasks, dataset has {dataset.n_tasks}"
        )
    prob = _Problem(dataset)
    if method is GradientMethod.FINITE_DIFFERENCE:
        return _fd_gradient(prob, theta.values.copy(), theta.mode, NOISE_FLOOR, fd_step)
    lml, Lf, _, alpha, parts = _lml_core(prob, theta.values, theta.mode, NOISE_FLOOR)
    if lml == REJECTED:
        raise NumericFailure("cannot differentiate a rejected hyperparameter point")
    return _analytic_gradient(
        prob, theta.mode, Lf, alpha, parts, theta.values, NOISE_FLOOR
    )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _initial_theta(rng: np.random.Generator, n: int, mode: KernelMode, extent: float):
    # near-identity factor: 0.1-scale noise on the log-diagonal and
    # off-diagonal entries (one scalar draw per packed entry, in order)
    tri = [0.1 * rng.standard_normal() for _ in range(n * (n + 1) // 2)]
    n_ls = 1 if mode is KernelMode.ICM else n
    lo, hi = np.log(extent / 20.0), np.log(extent)
    log_ls = rng.uniform(lo, hi, size=n_ls)
    log_noise = np.full(n, np.log(0.05))
    return np.concatenate([tri, log_ls, log_noise])


def _data_extent(dataset: Dataset) -> float:
    b = dataset.field_bounds
    extent = max(b.width, b.height)
    return extent if extent > 0 else 1.0


def _optimize(prob: _Problem, config: FitConfig, x0: np.ndarray):
    mode, floor = config.mode, config.noise_floor
    use_fd = config.gradient is GradientMethod.FINITE_DIFFERENCE

    def objective(x):
        lml, Lf, _, alpha, parts = _lml_core(prob, x, mode, floor)
        if lml == REJECTED:
            return np.inf, np.zeros_like(x)
        if use_fd:
            g = _fd_gradient(prob, x.copy(), mode, floor)
        else:
            g = _analytic_gradient(prob, mode, Lf, alpha, parts, x, floor)
        return -lml, -g

    res = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iters, "ftol": config.tol, "gtol": 1e-6},
    )
    final_lml = -res.fun if np.isfinite(res.fun) else REJECTED
    return res.x, final_lml


def fit(dataset: Dataset, config: FitConfig) -> FittedModel:
    """Maximum-marginal-likelihood fit with seeded multi-start.

    Deterministic for a given (dataset, config): restarts are drawn from
    one seeded generator and the best restart is chosen by strict
    maximum (earliest restart wins ties).
    """
    counts = dataset.counts_per_task()
    if np.any(counts == 0):
        missing = [dataset.labels[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"every task needs at least one observation; missing {missing}")
    norm_ds, stats = normalize(dataset)
    prob = _Problem(norm_ds)
    extent = _data_extent(norm_ds)
    rng = np.random.default_rng(config.seed)

    best = None
    restart_lmls = []
    for _ in range(config.restarts):
        x0 = _initial_theta(rng, dataset.n_tasks, config.mode, extent)
        x, final_lml = _optimize(prob, config, x0)
        restart_lmls.append(final_lml)
        if final_lml != REJECTED and (best is None or final_lml > best[1]):
            best = (x, final_lml)
    if best is None:
        raise NumericFailure("all restarts rejected; hyperparameter search failed")

    theta = HyperParams(best[0], dataset.n_tasks, config.mode)
    return _build_model(
        norm_ds, stats, theta, config.noise_floor, tuple(restart_lmls)
    )


def condition(
    dataset: Dataset,
    theta: HyperParams,
    noise_floor: float = NOISE_FLOOR,
) -> FittedModel:
    """Model at fixed hyperparameters (no optimization); data is
    normalized exactly as in :func:`fit`."""
    norm_ds, stats = normalize(dataset)
    return _build_model(norm_ds, stats, theta, noise_floor, ())


def _build_model(norm_ds, stats, theta, noise_floor, restart_lmls) -> FittedModel:
    prob = _Problem(norm_ds)
    lml, Lf, jitter, alpha, _ = _lml_core(prob, theta.values, theta.mode, noise_floor)
    if lml == REJECTED:
        raise NumericFailure("covariance rejected at the selected hyperparameters")
    Lf.flags.writeable = False
    alpha.flags.writeable = False
    return FittedModel(
        theta=theta,
        dataset=norm_ds,
        stats=stats,
        chol_factor=Lf,
        alpha=alpha,
        lml=lml,
        jitter=jitter,
        noise_floor=noise_floor,
        restart_lmls=restart_lmls,
    )


# ---------------------------------------------------------------------------
# Prediction and diagnostics
# ---------------------------------------------------------------------------


def predict(
    model: FittedModel,
    queries,
    denormalize: bool = False,
    include_noise: bool = False,
) -> PredictionResult:
    """Posterior mean and variance at (task, location) queries.

    Variance is the latent-function uncertainty; ``include_noise`` adds
    the per-task observation noise for held-out-value intervals.
    Negative variances produced by floating-point cancellation are
    clamped at zero (the clamp magnitude is logged).
    """
    q_tasks = np.array([q[0] for q in queries], dtype=np.intp)
    q_xy = np.array(
        [(q[1].x, q[1].y) if isinstance(q[1], Location) else tuple(q[1]) for q in queries],
        dtype=float,
    ).reshape(len(queries), 2)
    return predict_arrays(model, q_tasks, q_xy, denormalize, include_noise)


def predict_arrays(
    model: FittedModel,
    q_tasks: np.ndarray,
    q_xy: np.ndarray,
    denormalize: bool = False,
    include_noise: bool = False,
) -> PredictionResult:
    """Array-based prediction core (used for grids)."""
    n = model.n_tasks
    q_tasks = np.asarray(q_tasks, dtype=np.intp)
    if q_tasks.size and (q_tasks.min() < 0 or q_tasks.max() >= n):
        raise ValueError(f"unknown task id in queries (model has {n} tasks)")
    q_xy = np.asarray(q_xy, dtype=float)

    L_task, ls, noise = model.theta.unpack(model.noise_floor)
    Kc = L_task @ L_task.T
    t = model.dataset.task_index
    r = cdist(q_xy, model.dataset.xy)
    if model.mode is KernelMode.ICM:
        S = matern32(r, ls[0])
    else:
        S = cross_matern32(r, ls[q_tasks][:, None], ls[t][None, :])
    Ks = Kc[np.ix_(q_tasks, t)] * S

    mean = Ks @ model.alpha
    v = solve_triangular(model.chol_factor, Ks.T, lower=True)
    prior_var = Kc[q_tasks, q_tasks]
    var = prior_var - np.einsum("ij,ij->j", v, v)
    neg = var < 0
    if np.any(neg):
        logger.debug(
            "clamped %d negative predictive variances (max magnitude %.3e)",
            int(neg.sum()),
            float(-var[neg].min()),
        )
        var = np.where(neg, 0.0, var)
    if include_noise:
        var = var + noise[q_tasks]

    if denormalize:
        mean = mean * model.stats.stds[q_tasks] + model.stats.means[q_tasks]
        var = var * model.stats.stds[q_tasks] ** 2
    return PredictionResult(q_tasks, q_xy, mean, var, normalized=not denormalize)


def task_correlations(model: FittedModel) -> np.ndarray:
    """Inter-task correlation matrix r_ij = Kc_ij / √(Kc_ii Kc_jj)."""
    Kc = model.theta.task_cov()
    d = np.sqrt(np.diag(Kc))
    corr = Kc / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)  # i = j is exactly 1 by definition
    return corr


def fit_stgp(dataset: Dataset, config: FitConfig) -> list[FittedModel]:
    """Independent single-task fits, one per task (the baseline method).

    Each model sees only its own task's observations, re-indexed to a
    one-task dataset, so other tasks cannot influence it.
    """
    models = []
    for i in range(dataset.n_tasks):
        obs = tuple(
            Observation(o.sample_id, o.location, 0, o.value)
            for o in dataset.observations
            if o.task == i
        )
        if not obs:
            raise ValueError(
                f"every task needs at least one observation; missing {dataset.labels[i]!r}"
            )
        sub = make_dataset(obs, 1, (dataset.labels[i],))
        models.append(fit(sub, config))
    return models


def sample_prior(
    theta: HyperParams,
    locations,
    seed: int,
    labels=None,
    sample_ids=None,
) -> Dataset:
    """One homotopic draw y ~ N(0, K+Σ) materialized as a Dataset.

    Observations are ordered sample-major (all tasks of location j
    before location j+1), defining the sequential-replay order.
    """
    locs = [loc if isinstance(loc, Location) else Location(*loc) for loc in locations]
    m, n = len(locs), theta.n_tasks
    if m == 0:
        raise ValueError("at least one location required")
    if sample_ids is None:
        width = max(2, len(str(m)))
        sample_ids = [f"S{j + 1:0{width}d}" for j in range(m)]

    tasks = np.tile(np.arange(n, dtype=np.intp), m)
    xy = np.repeat(np.array([(p.x, p.y) for p in locs]), n, axis=0)
    L_task, ls, noise = theta.unpack()
    Kc = L_task @ L_task.T
    K = assemble_training_cov(tasks, xy, Kc, ls, noise, theta.mode)
    Lf, _ = chol_with_jitter(K)
    rng = np.random.default_rng(seed)
    y = Lf @ rng.standard_normal(m * n)

    obs = []
    k = 0
    for j, loc in enumerate(locs):
        for i in range(n):
            obs.append(Observation(sample_ids[j], loc, i, float(y[k])))
            k += 1
    return make_dataset(obs, n, labels)


def theta_from_moments(
    variances,
    correlations: np.ndarray,
    lengthscales,
    noise_vars,
    mode: KernelMode,
) -> HyperParams:
    """Packed theta from interpretable pieces: per-task variances, an
    inter-task correlation matrix, length-scales, noise variances."""
    var = np.atleast_1d(np.asarray(variances, dtype=float))
    corr = np.asarray(correlations, dtype=float)
    n = len(var)
    if corr.shape != (n, n):
        raise ValueError(f"correlation matrix must be {n}x{n}")
    d = np.sqrt(var)
    Kc = corr * np.outer(d, d)
    L = scipy_cholesky(Kc + 1e-12 * np.eye(n), lower=True)
    packed = pack_theta(L, lengthscales, noise_vars, mode)
    return HyperParams(packed, n, mode)
