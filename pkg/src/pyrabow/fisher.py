"""Diagonal-covariance Gaussian mixtures and Fisher-vector encoding."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import KMeansConfig, nearest_centroids, train_codebook

SCHEMA_VERSION = 1
VARIANCE_FLOOR = 1e-4
LOG_2PI = np.log(2.0 * np.pi)

log = logging.getLogger(__name__)


class FisherError(ValueError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    log_likelihood: list[float] = field(default_factory=list, repr=False)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.ravel().tolist(),
            "variances": self.variances.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GmmModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise FisherError(f"unsupported GMM schema {doc.get('schema_version')!r}")
        K, d = doc["K"], doc["dim"]
        return cls(np.asarray(doc["weights"], dtype=np.float64),
                   np.asarray(doc["means"], dtype=np.float64).reshape(K, d),
                   np.asarray(doc["variances"], dtype=np.float64).reshape(K, d))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))


def _log_joint(X, gmm: GmmModel) -> np.ndarray:
    """log w_k + log N(x_n | mu_k, diag var_k), shape (N, K)."""
    inv = 1.0 / gmm.variances
    # sum_d (x - mu)^2 / var expanded to keep memory at N x K
    quad = ((X * X) @ inv.T - 2.0 * X @ (gmm.means * inv).T
            + ((gmm.means ** 2) * inv).sum(axis=1)[None, :])
    quad = np.maximum(quad, 0.0)
    log_det = np.log(gmm.variances).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    return log_w[None, :] - 0.5 * (X.shape[1] * LOG_2PI + log_det[None, :] + quad)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def posteriors(gmm: GmmModel, X) -> np.ndarray:
    """Responsibilities gamma_n(k); rows sum to one."""
    lj = _log_joint(np.asarray(X, dtype=np.float64), gmm)
    return np.exp(lj - _logsumexp(lj)[:, None])


def mean_log_likelihood(gmm: GmmModel, X) -> float:
    return float(_logsumexp(_log_joint(np.asarray(X, dtype=np.float64), gmm)).mean())


def train_gmm(descriptors, K: int, max_iter: int = 100, tol: float = 1e-6, seed: int = 0,
              variance_floor: float = VARIANCE_FLOOR) -> GmmModel:
    """Fit a K-component diagonal GMM by EM, initialised from k-means.

    Stops when the relative improvement of the mean log-likelihood drops
    below ``tol`` or after ``max_iter`` EM steps. The log-likelihood is
    checked to be non-decreasing at every step.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < K or K < 1:
        raise FisherError(f"need at least K={K} descriptors, got {X.shape[0] if X.ndim == 2 else 0}")
    n, d = X.shape

    cb = train_codebook(X, KMeansConfig(k=K, max_iter=max_iter, tol=1e-4, seed=seed))
    labels = nearest_centroids(X, cb.centroids)
    means = cb.centroids.copy()
    variances = np.empty((K, d))
    for k in range(K):
        members = X[labels == k]
        variances[k] = members.var(axis=0) if len(members) else X.var(axis=0)
    gmm = GmmModel(np.full(K, 1.0 / K), means, np.maximum(variances, variance_floor))

    history = [mean_log_likelihood(gmm, X)]
    for it in range(max_iter):
        gamma = posteriors(gmm, X)
        Nk = gamma.sum(axis=0)
        live = Nk > 1e-10 * n
        weights = Nk / n
        new_means = gmm.means.copy()
        new_vars = gmm.variances.copy()
        if live.any():
            S1 = gamma[:, live].T @ X
            S2 = gamma[:, live].T @ (X * X)
            mu = S1 / Nk[live, None]
            new_means[live] = mu
            new_vars[live] = np.maximum(S2 / Nk[live, None] - mu * mu, variance_floor)
        gmm = GmmModel(weights, new_means, new_vars)
        ll = mean_log_likelihood(gmm, X)
        if ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(f"GMM log-likelihood decreased at EM step {it}: {history[-1]} -> {ll}")
        prev = history[-1]
        history.append(ll)
        if abs(ll - prev) < tol * max(abs(prev), 1e-12):
            break
    gmm.log_likelihood = history
    log.debug("GMM K=%d: %d EM steps, mean log-likelihood %.6g", K, len(history) - 1, history[-1])
    return gmm


def fisher_statistics(gmm: GmmModel, descs, include_weight_block: bool = False) -> np.ndarray:
    """Un-normalized Fisher vector: [weight block,] mean block, variance block.

    Blocks are component-major (all dimensions of component 0 first).
    """
    X = np.asarray(descs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FisherError("cannot encode an empty descriptor set")
    if X.shape[1] != gmm.dim:
        raise FisherError(f"descriptor dimension {X.shape[1]} does not match GMM {gmm.dim}")
    N = X.shape[0]
    gamma = posteriors(gmm, X)
    sigma = np.sqrt(gmm.variances)
    w = gmm.weights
    with np.errstate(divide="ignore"):
        inv_sw = np.where(w > 0, 1.0 / np.sqrt(w), 0.0)
    Gk = gamma.sum(axis=0)
    S1 = gamma.T @ X
    S2 = gamma.T @ (X * X)
    # sum_n gamma (x - mu) / sigma  and  sum_n gamma [((x - mu) / sigma)^2 - 1]
    first = (S1 - Gk[:, None] * gmm.means) / sigma
    second = (S2 - 2.0 * gmm.means * S1 + Gk[:, None] * gmm.means ** 2) / gmm.variances - Gk[:, None]
    mean_block = first * (inv_sw / N)[:, None]
    var_block = second * (inv_sw / (N * np.sqrt(2.0)))[:, None]
    parts = [mean_block.ravel(), var_block.ravel()]
    if include_weight_block:
        parts.insert(0, (Gk - N * w) * inv_sw / N)
    return np.concatenate(parts)


def fisher_encode(gmm: GmmModel, descs, include_weight_block: bool = False) -> np.ndarray:
    """Improved Fisher vector: signed square root, then global L2 normalization."""
    v = fisher_statistics(gmm, descs, include_weight_block)
    v = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def fisher_dim(K: int, dim: int, include_weight_block: bool = False) -> int:
    return 2 * K * dim + (K if include_weight_block else 0)
