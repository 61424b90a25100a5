"""Bayes-optimal linear classifier for tied-covariance Gaussian features.

For p(z|y=c) = N(mu_c, Sigma) with priors pi, the posterior argmax is
linear in z: score_c(z) = z'w_c - mu_c'w_c/2 + log pi_c with
w_c = Sigma^{-1} mu_c. The inverse is never formed; w_c comes from a
Cholesky solve with one step of iterative refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .gaussian import ClassGaussian

PRIOR_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GenerativeClassifier:
    """Immutable linear scores: row c of weights holds Sigma^{-1} mu_c."""

    weights: np.ndarray  # (C, d)
    biases: np.ndarray  # (C,)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        biases = np.asarray(self.biases, dtype=np.float64)
        if weights.ndim != 2 or biases.shape != (weights.shape[0],):
            raise ValueError("weights must be (C, d) with one bias per class")
        if not (np.isfinite(weights).all() and np.isfinite(biases).all()):
            raise ValueError("classifier parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def _cholesky_pd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite; call regularize_covariance first") from exc


def _solve_refined(cov: np.ndarray, chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    x = cho_solve((chol, True), rhs)
    residual = rhs - cov @ x
    return x + cho_solve((chol, True), residual)


def solve_sigma_inv_mu(cov: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Solve Sigma w = mu for PD Sigma."""
    cov = np.asarray(cov, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if cov.shape != (mu.shape[0], mu.shape[0]):
        raise ValueError("cov must be (d, d) matching mu")
    chol = _cholesky_pd(cov)
    return _solve_refined(cov, chol, mu)


def build_classifier(g: ClassGaussian, prior_floor: float = PRIOR_FLOOR) -> GenerativeClassifier:
    """Classifier weights/biases from a ClassGaussian.

    Zero-count classes get log(prior_floor) in place of log 0, which keeps
    losses finite while making those classes effectively unpredictable.
    """
    chol = _cholesky_pd(g.cov)
    weights = _solve_refined(g.cov, chol, g.means.T).T
    biases = -0.5 * np.einsum("cd,cd->c", g.means, weights) + np.log(np.maximum(g.priors, prior_floor))
    return GenerativeClassifier(weights=weights, biases=biases)


def scores(clf: GenerativeClassifier, z: np.ndarray) -> np.ndarray:
    return clf.weights @ np.asarray(z, dtype=np.float64) + clf.biases


def log_posterior(clf: GenerativeClassifier, z: np.ndarray) -> np.ndarray:
    """Log-softmax of the class scores, stabilized by max subtraction."""
    s = scores(clf, z)
    shifted = s - s.max()
    return shifted - np.log(np.exp(shifted).sum())


def nll_loss(clf: GenerativeClassifier, z: np.ndarray, y: int) -> float:
    """Negative log posterior probability of the true class."""
    if not 0 <= y < clf.num_classes:
        raise ValueError("label out of range")
    return float(-log_posterior(clf, z)[y])


def predict(clf: GenerativeClassifier, z: np.ndarray) -> int:
    """Argmax class; exact ties break toward the lowest class id."""
    return int(np.argmax(scores(clf, z)))


def scores_batch(clf: GenerativeClassifier, features: np.ndarray) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) @ clf.weights.T + clf.biases


def log_posterior_batch(clf: GenerativeClassifier, features: np.ndarray) -> np.ndarray:
    s = scores_batch(clf, features)
    shifted = s - s.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_batch(clf: GenerativeClassifier, features: np.ndarray) -> np.ndarray:
    return np.argmax(scores_batch(clf, features), axis=1)


def mean_nll(clf: GenerativeClassifier, features: np.ndarray, labels: np.ndarray) -> float:
    lp = log_posterior_batch(clf, features)
    return float(-lp[np.arange(len(labels)), labels].mean())
