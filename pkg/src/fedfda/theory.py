"""Monte Carlo lab for the interpolated-mean estimation-error bound.

Single-class setting: client i's features are N(theta_i, Sigma_i), the
interpolated estimate is beta*mu_i + (1-beta)*mu_g, and the closed-form
high-probability bound is

    (1-beta)^2 ||theta_g - theta_i||^2
      + [1 + 4(sqrt(L) + L)] * (2 beta / n_i * tr(Sigma_i)
                                + (1-beta)^2 / N * tr(Sigma_g))

with L = log(1/delta) / c. The Monte Carlo side draws every sample in the
federation per trial, forms the local and global sample means, and checks
the bound's coverage empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_HW_CONSTANT = 0.125  # concentration constant; coverage claims are calibration-dependent

_CHUNK_BUDGET = 4_000_000  # max standard-normal draws held at once


@dataclass(frozen=True, eq=False)
class TheoremScenario:
    """True client distributions plus the interpolation and confidence knobs."""

    means: np.ndarray  # (M, d) true client means
    covs: np.ndarray  # (M, d, d) true client covariances, PD
    counts: np.ndarray  # (M,) per-client sample counts
    beta: float = 0.5
    delta: float = 0.1
    c: float = DEFAULT_HW_CONSTANT

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covs, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        m, d = means.shape
        if covs.shape != (m, d, d) or counts.shape != (m,):
            raise ValueError("means (M,d), covs (M,d,d), counts (M,) must align")
        if counts.min() < 1:
            raise ValueError("every client needs at least one sample")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "counts", counts)

    @property
    def num_clients(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def theta_global(self) -> np.ndarray:
        return (self.counts[:, None] * self.means).sum(axis=0) / self.total

    @property
    def sigma_global(self) -> np.ndarray:
        return (self.counts[:, None, None] ** 2 * self.covs).sum(axis=0) / self.total**2


def theorem_bound(s: TheoremScenario, i: int, beta: float | None = None) -> float:
    """Closed-form estimation-error bound for client i."""
    if beta is None:
        beta = s.beta
    bias = (1.0 - beta) ** 2 * float(np.sum((s.theta_global - s.means[i]) ** 2))
    ratio = math.log(1.0 / s.delta) / s.c
    factor = 1.0 + 4.0 * (math.sqrt(ratio) + ratio)
    variance = (2.0 * beta / s.counts[i]) * float(np.trace(s.covs[i])) + (1.0 - beta) ** 2 / s.total * float(
        np.trace(s.sigma_global)
    )
    return bias + factor * variance


def _sample_mean_components(
    s: TheoremScenario, i: int, trials: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial (mu_i - mu_g, mu_g - theta_i).

    Every one of the N samples is drawn from its client's true Gaussian;
    trials are chunked so peak memory stays bounded.
    """
    chols = [np.linalg.cholesky(s.covs[j]) for j in range(s.num_clients)]
    a = np.empty((trials, s.dim))
    b = np.empty((trials, s.dim))
    max_n = int(s.counts.max())
    chunk = max(1, _CHUNK_BUDGET // (max_n * s.dim))
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        client_means = np.empty((size, s.num_clients, s.dim))
        for j in range(s.num_clients):
            draws = rng.standard_normal((size, int(s.counts[j]), s.dim)) @ chols[j].T + s.means[j]
            client_means[:, j, :] = draws.mean(axis=1)
        mu_g = (s.counts[None, :, None] * client_means).sum(axis=1) / s.total
        mu_i = client_means[:, i, :]
        a[done : done + size] = mu_i - mu_g
        b[done : done + size] = mu_g - s.means[i]
        done += size
    return a, b


def simulate_estimation_error(s: TheoremScenario, i: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Squared interpolated-estimate errors ||beta mu_i + (1-beta) mu_g - theta_i||^2, one per trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    a, b = _sample_mean_components(s, i, trials, rng)
    diff = s.beta * a + b
    return np.einsum("td,td->t", diff, diff)


def coverage_check(s: TheoremScenario, i: int, trials: int, rng: np.random.Generator) -> float:
    """Fraction of trials whose error stays below the closed-form bound."""
    errors = simulate_estimation_error(s, i, trials, rng)
    return float((errors <= theorem_bound(s, i)).mean())


def sweep_beta(
    s: TheoremScenario, i: int, trials: int, beta_grid: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean error, bound, and coverage per grid beta, sharing draws across the grid.

    For fixed draws the error is a quadratic in beta:
    ||beta a + b||^2 = beta^2 |a|^2 + 2 beta a.b + |b|^2.
    """
    beta_grid = np.asarray(beta_grid, dtype=np.float64)
    a, b = _sample_mean_components(s, i, trials, rng)
    aa = np.einsum("td,td->t", a, a)
    ab = np.einsum("td,td->t", a, b)
    bb = np.einsum("td,td->t", b, b)
    mean_errors = np.empty(beta_grid.size)
    coverages = np.empty(beta_grid.size)
    bounds = np.empty(beta_grid.size)
    for k, beta in enumerate(beta_grid):
        errors = beta * beta * aa + 2.0 * beta * ab + bb
        bounds[k] = theorem_bound(s, i, beta=float(beta))
        mean_errors[k] = float(errors.mean())
        coverages[k] = float((errors <= bounds[k]).mean())
    return mean_errors, bounds, coverages


def empirical_optimal_beta(
    s: TheoremScenario, i: int, trials: int, beta_grid: np.ndarray, rng: np.random.Generator
) -> float:
    """Grid argmin of the Monte Carlo mean error (first/lowest beta on ties)."""
    mean_errors, _, _ = sweep_beta(s, i, trials, np.asarray(beta_grid), rng)
    return float(np.asarray(beta_grid)[int(np.argmin(mean_errors))])
