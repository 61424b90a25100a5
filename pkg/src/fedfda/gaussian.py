"""Class-conditional Gaussian estimation with low-sample covariance repair.

Features are modeled per class as N(mu_c, Sigma) with a single tied
covariance. Estimation follows the classical maximum-likelihood mean /
unbiased covariance pair; degenerate covariances (common when a client
holds far fewer samples than feature dimensions) are repaired by diagonal
loading plus eigenvalue clipping in correlation space, which keeps the
loaded variances untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class CovOptions:
    """Covariance repair knobs: diagonal loading and the correlation-space eigenvalue floor."""

    epsilon: float = 1e-4
    min_corr_eig: float = 1e-6

    def __post_init__(self) -> None:
        if not (self.epsilon > 0 and self.min_corr_eig > 0):
            raise ValueError("epsilon and min_corr_eig must be strictly positive")


@dataclass(frozen=True, eq=False)
class ClassGaussian:
    """Per-class means, one shared covariance, and class priors."""

    means: np.ndarray  # (C, d)
    cov: np.ndarray  # (d, d)
    priors: np.ndarray  # (C,)

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        priors = np.asarray(self.priors, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be a (C, d) matrix")
        if cov.shape != (means.shape[1], means.shape[1]):
            raise ValueError("cov must be (d, d) matching the mean dimension")
        if priors.shape != (means.shape[0],):
            raise ValueError("priors must have one entry per class")
        if not (np.isfinite(means).all() and np.isfinite(cov).all() and np.isfinite(priors).all()):
            raise ValueError("ClassGaussian entries must be finite")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ValueError("cov must be symmetric within 1e-10")
        if priors.min(initial=0.0) < 0 or abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "priors", priors)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _check_batch(features: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must align with feature rows")
    if features.shape[0] == 0:
        raise ValueError("no samples")
    if not np.isfinite(features).all():
        raise ValueError("features must be finite")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("labels out of range")
    return features, labels.astype(np.int64)


def estimate_class_means(features: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class feature averages.

    Classes with no samples get a zero row and count 0. Summation runs in
    ascending sample-index order for cross-run determinism.
    """
    features, labels = _check_batch(features, labels, num_classes)
    d = features.shape[1]
    means = np.zeros((num_classes, d))
    counts = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        mask = labels == c
        n_c = int(mask.sum())
        counts[c] = n_c
        if n_c:
            means[c] = features[mask].sum(axis=0) / n_c
    return means, counts


def center_features(features: np.ndarray, labels: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Subtract each row's class mean."""
    means = np.asarray(means, dtype=np.float64)
    features, labels = _check_batch(features, labels, means.shape[0])
    if features.shape[1] != means.shape[1]:
        raise ValueError("feature dimension does not match means")
    return features - means[labels]


def estimate_shared_covariance(centered: np.ndarray, n: int | None = None) -> np.ndarray:
    """Unbiased tied covariance from centered features: Z'Z / (n - 1)."""
    centered = np.asarray(centered, dtype=np.float64)
    if centered.ndim != 2:
        raise ValueError("centered must be a 2-D matrix")
    if n is None:
        n = centered.shape[0]
    if n < 2:
        raise ValueError("insufficient samples")
    cov = centered.T @ centered / (n - 1)
    return (cov + cov.T) / 2


def estimate_priors(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Empirical class frequencies."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("no samples")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels out of range")
    counts = np.bincount(labels.astype(np.int64), minlength=num_classes)
    return counts / labels.size


def jacobi_eigh(a: np.ndarray, tol_scale: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    tol_scale * ||A||_F. Returns (eigenvalues, eigenvectors) with
    eigenvalues ascending and A == V diag(w) V^T.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError("matrix must be square")
    v = np.eye(d)
    fro = np.linalg.norm(a)
    if fro == 0.0 or d == 1:
        w = np.diag(a).copy()
        order = np.argsort(w, kind="stable")
        return w[order], v[:, order]
    tol = tol_scale * fro
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _is_min_eig_above(mat: np.ndarray, floor: float) -> bool:
    # Cholesky of (mat - floor*I) succeeds exactly when min eig > floor.
    try:
        np.linalg.cholesky(mat - floor * np.eye(mat.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False


def regularize_covariance(cov: np.ndarray, opts: CovOptions | None = None) -> np.ndarray:
    """Diagonal loading plus nearest-PD repair with identical variance.

    Adds epsilon*I, then, if the loaded matrix is not safely positive
    definite, clips eigenvalues of its correlation matrix at
    opts.min_corr_eig, renormalizes the correlation diagonal to one, and
    rescales by the original standard deviations. The output diagonal
    equals the input diagonal plus epsilon.
    """
    if opts is None:
        opts = CovOptions()
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    if cov.shape != (d, d):
        raise ValueError("covariance must be square")
    scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("covariance must be symmetric")
    loaded = (cov + cov.T) / 2 + opts.epsilon * np.eye(d)
    var = np.diag(loaded).copy()
    std = np.sqrt(np.where(var > 0, var, opts.epsilon))
    corr = loaded / np.outer(std, std)
    corr = (corr + corr.T) / 2
    if _is_min_eig_above(corr, opts.min_corr_eig):
        return loaded
    evals, evecs = jacobi_eigh(corr)
    clipped = np.maximum(evals, opts.min_corr_eig)
    fixed = (evecs * clipped) @ evecs.T
    norm = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(norm, norm)
    np.fill_diagonal(fixed, 1.0)
    out = fixed * np.outer(std, std)
    out = (out + out.T) / 2
    np.fill_diagonal(out, var)
    return out
