"""Squared-exponential GP regression on latent coordinates.

Kernel hyperparameters live in log space so the optimizer moves through
unconstrained values.  Every Gram factorization adds a fixed jitter of
1e-6 to the diagonal and retries once with 1e-4 before giving up; the
jitter is part of the contract, so closed-form oracles must fold it into
the effective noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import FactorizationError, Tensor

JITTER = 1e-6
RETRY_JITTER = 1e-4


@dataclass
class KernelParams:
    """Log-space kernel hyperparameters (signal variance, lengthscale, noise variance)."""

    log_alpha2: Tensor
    log_lengthscale: Tensor
    log_noise: Tensor

    @classmethod
    def create(cls, alpha2=1.0, lengthscale=1.0, noise=0.01) -> "KernelParams":
        return cls(
            nm.parameter(np.log(alpha2)),
            nm.parameter(np.log(lengthscale)),
            nm.parameter(np.log(noise)),
        )

    def tensors(self) -> list[Tensor]:
        return [self.log_alpha2, self.log_lengthscale, self.log_noise]


@dataclass
class GPPrediction:
    """Posterior mean (M, D) and noise-free posterior variance (M, 1)."""

    mean: Tensor
    variance: Tensor


def _sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between row sets."""
    a2 = nm.square(a).sum(axis=1, keepdims=True)
    b2 = nm.square(b).sum(axis=1, keepdims=True)
    # Rounding can push exact zeros a hair negative; those entries carry no
    # true gradient, so masking them in the clamp is harmless.
    return nm.clamp(a2 + b2.T - 2.0 * (a @ b.T), lo=0.0)


def _kernel_of(d2: Tensor, params: KernelParams) -> Tensor:
    ell2 = nm.exp(params.log_lengthscale * 2.0)
    return nm.exp(params.log_alpha2 - d2 / (2.0 * ell2))


def se_kernel(x: Tensor, x2: Tensor, params: KernelParams) -> Tensor:
    """Kernel value between two single points given as (1, Q) rows."""
    return _kernel_of(_sqdist(x, x2), params)


def cross_gram(q: Tensor, xs: Tensor, params: KernelParams) -> Tensor:
    """Kernel block between query rows (M, Q) and training rows (N, Q)."""
    return _kernel_of(_sqdist(q, xs), params)


def gram(xs: Tensor, params: KernelParams, with_noise: bool = True) -> Tensor:
    """Training Gram matrix, optionally with the noise variance on the diagonal."""
    k = _kernel_of(_sqdist(xs, xs), params)
    if with_noise:
        n = k.value.shape[0]
        k = k + nm.exp(params.log_noise) * nm.constant(np.eye(n))
    return k


def gram_factor(k: Tensor) -> Tensor:
    """Cholesky factor of a Gram matrix under the fixed jitter policy."""
    try:
        return nm.cholesky(k, jitter=JITTER)
    except FactorizationError:
        return nm.cholesky(k, jitter=RETRY_JITTER)


@dataclass
class GPPosterior:
    """One factorized posterior reused across any number of queries."""

    xs: Tensor
    h: Tensor
    params: KernelParams
    chol: Tensor
    kinv_h: Tensor

    def predict(self, q: Tensor) -> GPPrediction:
        kq = cross_gram(q, self.xs, self.params)
        mean = kq @ self.kinv_h
        v = nm.chol_solve(self.chol, kq.T)
        quad = (kq.T * v).sum(axis=0, keepdims=True).T
        raw = nm.exp(self.params.log_alpha2) - quad
        if np.min(raw.value) < -1e-8:
            raise nm.NumericsError(
                f"predictive variance fell below zero by {-np.min(raw.value):.3e}"
            )
        return GPPrediction(mean, nm.clamp(raw, lo=0.0))


def posterior(xs: Tensor, h: Tensor, params: KernelParams) -> GPPosterior:
    l = gram_factor(gram(xs, params, with_noise=True))
    return GPPosterior(xs, h, params, l, nm.chol_solve(l, h))


def predict(xs: Tensor, h: Tensor, params: KernelParams, q: Tensor) -> GPPrediction:
    """Posterior at query rows; factorizes once and shares it across the batch."""
    return posterior(xs, h, params).predict(q)
