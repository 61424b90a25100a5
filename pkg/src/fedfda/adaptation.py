"""Local-global interpolation of feature-distribution estimates.

A client fuses its own Gaussian estimate with the server's through convex
coefficients beta (1 = pure local, 0 = pure global), chosen to minimize
k-fold cross-validated NLL on the client's logged features. The search is
derivative-free: a coarse grid plus golden-section refinement, with ties
resolved toward smaller beta (prefer global knowledge).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .classifier import PRIOR_FLOOR, build_classifier, mean_nll
from .gaussian import (
    ClassGaussian,
    CovOptions,
    center_features,
    estimate_class_means,
    estimate_shared_covariance,
    regularize_covariance,
)
from .mlp import FeatureLog

GRID_POINTS = 21
GOLDEN_TOL = 1e-4
TIE_TOL = 1e-9
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class BetaMode(enum.Enum):
    NONE = "none"  # beta fixed at 1: local estimates only
    SINGLE = "single"  # one beta shared by means and covariance
    MULTI = "multi"  # separate betas for means and covariance


@dataclass(frozen=True)
class BetaResult:
    beta_mu: float
    beta_sigma: float
    objective: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta_mu <= 1.0 and 0.0 <= self.beta_sigma <= 1.0):
            raise ValueError("beta coefficients must lie in [0, 1]")


def kfold_split(log: FeatureLog, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Stratified k-fold partition of the log's indices.

    Each class's shuffled indices are dealt cyclically, with the dealing
    cursor carried across classes so fold sizes differ by at most one both
    per class and overall.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(log)
    if n < k:
        raise ValueError("need at least k samples to form k folds")
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for c in np.unique(log.labels):
        idx = np.flatnonzero(log.labels == c)
        idx = idx[rng.permutation(idx.size)]
        for j, sample in enumerate(idx):
            folds[(cursor + j) % k].append(int(sample))
        cursor = (cursor + idx.size) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass(eq=False)
class FoldStats:
    """Fold-complement estimates plus the fold's held-out validation pairs."""

    means: np.ndarray  # (C, d), absent classes already filled with global means
    cov: np.ndarray  # (d, d), regularized (or the global cov when < 2 train samples)
    val_features: np.ndarray
    val_labels: np.ndarray


def local_estimate(
    features: np.ndarray,
    labels: np.ndarray,
    global_g: ClassGaussian,
    opts: CovOptions,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean/covariance estimate with global fallbacks for starved statistics.

    Classes with zero samples inherit the global mean; a covariance needs
    at least two samples, otherwise the global covariance is used as-is.
    """
    means, counts = estimate_class_means(features, labels, global_g.num_classes)
    means = np.where(counts[:, None] > 0, means, global_g.means)
    if features.shape[0] >= 2:
        centered = center_features(features, labels, means)
        cov = regularize_covariance(estimate_shared_covariance(centered), opts)
    else:
        cov = global_g.cov.copy()
    return means, cov


def prepare_fold_stats(
    log: FeatureLog,
    folds: list[np.ndarray],
    global_g: ClassGaussian,
    opts: CovOptions | None = None,
) -> list[FoldStats]:
    """Estimate each fold-complement's Gaussian once, ahead of the beta search."""
    if opts is None:
        opts = CovOptions()
    stats = []
    for t, fold in enumerate(folds):
        train_idx = np.array(sorted(set(range(len(log))) - set(fold.tolist())), dtype=np.int64)
        if train_idx.size == 0 or fold.size == 0:
            raise ValueError("folds must leave both training and validation samples")
        means, cov = local_estimate(log.features[train_idx], log.labels[train_idx], global_g, opts)
        stats.append(FoldStats(means, cov, log.features[fold], log.labels[fold]))
    return stats


def cv_objective(
    beta_mu: float,
    beta_sigma: float,
    fold_stats: list[FoldStats],
    global_g: ClassGaussian,
    priors_local: np.ndarray,
    prior_floor: float = PRIOR_FLOOR,
) -> float:
    """Mean held-out NLL of the interpolated classifier across folds."""
    total = 0.0
    for fs in fold_stats:
        means = beta_mu * fs.means + (1.0 - beta_mu) * global_g.means
        cov = beta_sigma * fs.cov + (1.0 - beta_sigma) * global_g.cov
        clf = build_classifier(ClassGaussian(means, cov, priors_local), prior_floor)
        total += mean_nll(clf, fs.val_features, fs.val_labels)
    return total / len(fold_stats)


def _search_1d(objective, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
    """Coarse grid + golden-section refinement; ties go to the smallest beta.

    `objective` maps a scalar beta in [lo, hi] to a loss. Returns the
    chosen beta and its objective value.
    """
    cache: dict[float, float] = {}

    def f(b: float) -> float:
        b = min(max(b, lo), hi)
        if b not in cache:
            cache[b] = objective(b)
        return cache[b]

    grid = np.linspace(lo, hi, GRID_POINTS)
    values = [f(float(b)) for b in grid]
    best_idx = int(np.argmin(values))
    step = (hi - lo) / (GRID_POINTS - 1)
    a = max(lo, float(grid[best_idx]) - step)
    b = min(hi, float(grid[best_idx]) + step)
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > GOLDEN_TOL:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
    f((a + b) / 2.0)
    best_val = min(cache.values())
    best_beta = min(bb for bb, vv in cache.items() if vv <= best_val + TIE_TOL)
    return best_beta, cache[best_beta]


def optimize_beta(
    fold_stats: list[FoldStats],
    global_g: ClassGaussian,
    priors_local: np.ndarray,
    mode: BetaMode,
    prior_floor: float = PRIOR_FLOOR,
) -> BetaResult:
    """Minimize the cross-validation objective over beta.

    Single mode searches one shared coefficient; multi mode runs two
    rounds of coordinate descent, applying the same 1-D search to beta_mu
    and then beta_sigma (beta_sigma starts at 0.5).
    """
    if mode is BetaMode.NONE:
        raise ValueError("mode 'none' fixes beta at 1; nothing to optimize")
    if mode is BetaMode.SINGLE:
        beta, value = _search_1d(lambda b: cv_objective(b, b, fold_stats, global_g, priors_local, prior_floor))
        return BetaResult(beta, beta, value)
    beta_mu, beta_sigma = 0.5, 0.5
    value = math.inf
    for _ in range(2):
        beta_mu, _v = _search_1d(
            lambda b: cv_objective(b, beta_sigma, fold_stats, global_g, priors_local, prior_floor)
        )
        beta_sigma, value = _search_1d(
            lambda b: cv_objective(beta_mu, b, fold_stats, global_g, priors_local, prior_floor)
        )
    return BetaResult(beta_mu, beta_sigma, value)


def interpolate(local: ClassGaussian, global_g: ClassGaussian, r: BetaResult) -> ClassGaussian:
    """Convex combination of local and global estimates; priors stay local."""
    if local.means.shape != global_g.means.shape or local.cov.shape != global_g.cov.shape:
        raise ValueError("local and global estimates must share shapes")
    means = r.beta_mu * local.means + (1.0 - r.beta_mu) * global_g.means
    cov = r.beta_sigma * local.cov + (1.0 - r.beta_sigma) * global_g.cov
    return ClassGaussian(means, (cov + cov.T) / 2, local.priors)
