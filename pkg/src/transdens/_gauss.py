"""Batched Gaussian densities and their derivatives.

All functions broadcast over leading axes: points have shape ``(..., d)`` and
covariances ``(..., d, d)``.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a batch of positive semi-definite matrices."""
    w, v = np.linalg.eigh(mat)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def inv_and_logdet(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = cov.shape[-1]
    if d == 1:
        var = cov[..., 0, 0]
        return (1.0 / var)[..., None, None], np.log(var)
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise np.linalg.LinAlgError("covariance is not positive definite")
    return np.linalg.inv(cov), logdet


def pdf(w: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Centered normal density with covariance ``cov`` evaluated at ``w``."""
    w = np.asarray(w, dtype=float)
    d = w.shape[-1]
    if d == 1:
        var = np.asarray(cov)[..., 0, 0]
        return np.exp(-0.5 * w[..., 0] ** 2 / var) / np.sqrt(2.0 * math.pi * var)
    prec, logdet = inv_and_logdet(cov)
    quad = np.einsum("...i,...ij,...j->...", w, prec, w)
    return np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * d * math.log(2.0 * math.pi))


def _pairings(items: tuple[int, ...]):
    """Yield (pairs, singles) over all partial matchings of ``items``."""
    if not items:
        yield (), ()
        return
    first, rest = items[0], items[1:]
    for pairs, singles in _pairings(rest):
        yield pairs, (first,) + singles
    for k in range(len(rest)):
        partner = rest[k]
        remaining = rest[:k] + rest[k + 1:]
        for pairs, singles in _pairings(remaining):
            yield ((first, partner),) + pairs, singles


def multi_index_to_axes(nu) -> tuple[int, ...]:
    return tuple(itertools.chain.from_iterable([i] * int(k) for i, k in enumerate(nu)))


def pdf_derivative(w: np.ndarray, cov: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Derivative of ``pdf(w, cov)`` with respect to ``w`` along ``axes``.

    Uses the multivariate Hermite form: with ``P = cov^-1`` and ``v = P w``,
    ``D_{i1..ik} phi = (-1)^k phi * sum over partial matchings of
    prod(-P_ab for matched pairs) * prod(v_c for unmatched)``.
    """
    w = np.asarray(w, dtype=float)
    base = pdf(w, cov)
    if not axes:
        return base
    prec, _ = inv_and_logdet(np.asarray(cov, dtype=float))
    v = np.einsum("...ij,...j->...i", prec, w)
    total = np.zeros_like(base)
    for pairs, singles in _pairings(tuple(range(len(axes)))):
        term = np.ones_like(base)
        for a, b in pairs:
            term = term * -prec[..., axes[a], axes[b]]
        for c in singles:
            term = term * v[..., axes[c]]
        total = total + term
    return (-1.0) ** len(axes) * base * total


def grad_hess(w: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Density, gradient and Hessian of the centered normal at ``w``."""
    w = np.asarray(w, dtype=float)
    prec, _ = inv_and_logdet(np.asarray(cov, dtype=float))
    phi = pdf(w, cov)
    v = np.einsum("...ij,...j->...i", prec, w)
    grad = -v * phi[..., None]
    hess = (v[..., :, None] * v[..., None, :] - prec) * phi[..., None, None]
    return phi, grad, hess
