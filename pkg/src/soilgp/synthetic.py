"""Synthetic correlated fields with known hyperparameters.

Stands in for real campaign data: a latent multi-task surface is drawn
once from a specified prior, observed with noise at the sample
locations, and kept noise-free at held-out truth points so evaluation
curves have an exact reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Location, Observation, make_dataset
from .gp import HyperParams, theta_from_moments
from .kernels import KernelMode, assemble_training_cov, chol_with_jitter
from .mapping import GroundTruth

__all__ = [
    "SyntheticField",
    "correlation_matrix",
    "prior_theta",
    "random_locations",
    "draw_field",
]


@dataclass(frozen=True)
class SyntheticField:
    """Generator settings for one synthetic campaign."""

    n_tasks: int = 4
    labels: tuple[str, ...] = ("pH", "N", "P", "K")
    variances: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    # (i, j, r) entries; unlisted pairs are uncorrelated
    correlations: tuple[tuple[int, int, float], ...] = ((0, 1, 0.9),)
    lengthscales: tuple[float, ...] = (40.0, 40.0, 60.0, 80.0)
    noise_vars: tuple[float, ...] = (0.05, 0.05, 0.05, 0.05)
    width: float = 300.0
    height: float = 170.0
    n_samples: int = 30
    mode: KernelMode = field(default=KernelMode.CONVOLVED)

    def __post_init__(self):
        n = self.n_tasks
        if not (
            len(self.labels) == len(self.variances) == len(self.noise_vars) == n
        ):
            raise ValueError("per-task settings must all have n_tasks entries")
        n_ls = 1 if self.mode is KernelMode.ICM else n
        if len(self.lengthscales) != n_ls:
            raise ValueError(f"expected {n_ls} length-scale(s)")


def correlation_matrix(cfg: SyntheticField) -> np.ndarray:
    corr = np.eye(cfg.n_tasks)
    for i, j, r in cfg.correlations:
        corr[i, j] = corr[j, i] = r
    return corr


def prior_theta(cfg: SyntheticField) -> HyperParams:
    return theta_from_moments(
        cfg.variances, correlation_matrix(cfg), cfg.lengthscales, cfg.noise_vars,
        cfg.mode,
    )


def random_locations(rng: np.random.Generator, n: int, width: float, height: float):
    pts = rng.uniform((0.0, 0.0), (width, height), size=(n, 2))
    return [Location(float(x), float(y)) for x, y in pts]


def grid_locations(cfg: SyntheticField) -> list[Location]:
    """Evenly covering layout: centers of a partition of the field into
    n_samples cells, using the most-square exact factorization when one
    exists (30 samples on 300×170 m gives the 6×5 grid)."""
    n = cfg.n_samples
    best = None
    for nx in range(1, n + 1):
        if n % nx:
            continue
        ny = n // nx
        badness = abs(cfg.width / nx - cfg.height / ny)
        if best is None or badness < best[0]:
            best = (badness, nx, ny)
    _, nx, ny = best
    sx, sy = cfg.width / nx, cfg.height / ny
    return [
        Location((ix + 0.5) * sx, (iy + 0.5) * sy)
        for iy in range(ny)
        for ix in range(nx)
    ]


def draw_field(
    cfg: SyntheticField,
    seed: int,
    truth_xy: np.ndarray | None = None,
    observed: np.ndarray | None = None,
    locations=None,
) -> tuple[Dataset, GroundTruth | None]:
    """One campaign draw: noisy training set plus noise-free truth.

    A single latent vector is drawn jointly over the sample locations
    and the optional truth points, so training values and reference
    values come from the same surface. ``observed`` is an optional
    (n_samples, n_tasks) boolean mask for heterotopic layouts; masked
    observations are dropped from the training set only. Explicit
    ``locations`` override the default uniform-random placement.
    """
    rng = np.random.default_rng(seed)
    if locations is None:
        locs = random_locations(rng, cfg.n_samples, cfg.width, cfg.height)
    else:
        locs = [p if isinstance(p, Location) else Location(*p) for p in locations]
        if len(locs) != cfg.n_samples:
            raise ValueError(
                f"expected {cfg.n_samples} locations, got {len(locs)}"
            )
    theta = prior_theta(cfg)
    L_task, ls, _ = theta.unpack()
    Kc = L_task @ L_task.T
    n = cfg.n_tasks
    m = cfg.n_samples

    # sample-major training block, then task-major truth block
    train_tasks = np.tile(np.arange(n, dtype=np.intp), m)
    train_xy = np.repeat(np.array([(p.x, p.y) for p in locs]), n, axis=0)
    if truth_xy is not None:
        truth_xy = np.asarray(truth_xy, dtype=float)
        g = truth_xy.shape[0]
        all_tasks = np.concatenate([train_tasks, np.repeat(np.arange(n, dtype=np.intp), g)])
        all_xy = np.vstack([train_xy, np.tile(truth_xy, (n, 1))])
    else:
        g = 0
        all_tasks, all_xy = train_tasks, train_xy

    K = assemble_training_cov(
        all_tasks, all_xy, Kc, ls, np.zeros(n), cfg.mode
    )
    Lf, _ = chol_with_jitter(K, (1e-10, 1e-9, 1e-8))
    latent = Lf @ rng.standard_normal(len(all_tasks))

    noise_std = np.sqrt(np.asarray(cfg.noise_vars))
    eps = rng.standard_normal(m * n) * noise_std[train_tasks]
    y_train = latent[: m * n] + eps

    width = max(2, len(str(m)))
    obs = []
    k = 0
    for j, loc in enumerate(locs):
        sid = f"S{j + 1:0{width}d}"
        for i in range(n):
            if observed is None or observed[j, i]:
                obs.append(Observation(sid, loc, i, float(y_train[k])))
            k += 1
    dataset = make_dataset(obs, n, cfg.labels)

    truth = None
    if truth_xy is not None:
        truth = GroundTruth(truth_xy, latent[m * n :].reshape(n, g).copy())
    return dataset, truth
