"""Parametrix kernel, space-time convolution and the truncated density series.

The transition density is expanded as ``p = sum_r p~ (x) H^(x)r`` where
``H = (L - L~) p~`` is the defect between the true generator and the generator
frozen along the backward flow, and ``(f (x) g)(t,s,x,y)`` integrates
``f(t,u,x,z) g(u,s,z,y)`` over ``u in (t,s)`` and ``z``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from . import _gauss
from .flow import flow_map, flow_with_covariance
from .frozen import frozen_density, frozen_params
from .model import DiffusionModel

MAX_ORDER = 4


class QuadratureError(ArithmeticError):
    """Raised when a quadrature window holds no mass at all."""


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature settings.

    ``time_nodes`` is the number of time slices (or Gauss nodes for
    :func:`convolve`); ``grading`` is the exponent ``p`` of the graded map
    ``u = s - (s-t) rho^p`` used by :func:`convolve` (``None`` means
    ``2/gamma``);
    ``space_nodes`` the per-slice grid size; ``inner_nodes`` the local
    quadrature size for each spatial integral; ``radius`` the truncation
    radius in local standard deviations.
    """

    time_nodes: int = 40
    grading: float | None = None
    space_nodes: int = 61
    inner_nodes: int = 40
    radius: float = 9.0

    def __post_init__(self):
        if self.time_nodes < 2 or self.space_nodes < 5 or self.inner_nodes < 2:
            raise ValueError("quadrature node counts are too small")
        if not ((self.grading is None or self.grading >= 1.0) and self.radius > 0):
            raise ValueError("grading must be >= 1 and radius positive")

    def refined(self, factor: int = 2) -> "QuadSpec":
        return QuadSpec(self.time_nodes * factor, self.grading,
                        (self.space_nodes - 1) * factor + 1, self.inner_nodes * factor, self.radius)


# -- kernel H --------------------------------------------------------------------

def _h_values(model: DiffusionModel, u: float, z, theta, cov) -> np.ndarray:
    """``H`` from precomputed frozen parameters; all inputs broadcast."""
    z = np.asarray(z, dtype=float)
    z, theta = np.broadcast_arrays(z, theta)
    _, grad, hess = _gauss.grad_hess(z - theta, cov)
    db = model.b(u, z) - model.b(u, theta)
    da = model.a(u, z) - model.a(u, theta)
    return np.einsum("...i,...i->...", db, grad) + 0.5 * np.einsum("...ij,...ij->...", da, hess)


def kernel_H(model: DiffusionModel, t: float, s: float, x, y, quad_nodes: int | None = None):
    """Parametrix kernel ``H(t, s, x, y)``; ``x`` may be a batch."""
    fg = frozen_params(model, t, s, np.zeros(model.dim), y, quad_nodes)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = _h_values(model, t, x, fg.theta, fg.cov)
    return float(out) if np.ndim(out) == 0 else out


# -- space-time kernels and the generic convolution ------------------------------

class Kernel:
    """A space-time kernel ``k(t0, t1, left, right)``.

    ``window_right(t0, t1, left)`` and ``window_left(t0, t1, right)`` return
    ``(centre, scale)`` describing where the kernel lives as a function of
    the free argument, or ``None`` when it is not localised.
    """

    def __call__(self, t0: float, t1: float, left, right) -> np.ndarray:
        raise NotImplementedError

    def window_right(self, t0, t1, left):
        return None

    def window_left(self, t0, t1, right):
        return None


class ConstantKernel(Kernel):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, t0, t1, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        return np.full(left.shape[:-1], self.value)


class _FrozenBased(Kernel):
    def __init__(self, model: DiffusionModel):
        self.model = model

    def _params(self, t0, t1, right):
        right = np.asarray(right, dtype=float)
        flat = right.reshape(-1, self.model.dim)
        th, cv = flow_with_covariance(self.model, t1, flat, [t0])
        d = self.model.dim
        return th[0].reshape(right.shape), cv[0].reshape(right.shape[:-1] + (d, d))

    def _scale(self, t0, t1):
        return math.sqrt(self.model.regularity.Lambda * (t1 - t0))

    def window_right(self, t0, t1, left):
        centre = flow_map(self.model, t0, t1, left, forward=True).reshape(-1)
        # in the right argument the width is divided by the Jacobian of the backward flow
        d = self.model.dim
        eps = 1e-4 * max(1.0, float(np.max(np.abs(centre))))
        probe = centre[None, :] + eps * np.concatenate([np.eye(d), -np.eye(d)])
        img = flow_map(self.model, t0, t1, probe)
        jac = (img[:d] - img[d:]).T / (2 * eps)
        smin = float(np.linalg.svd(jac, compute_uv=False).min())
        return centre, self._scale(t0, t1) / max(smin, 1e-12)

    def window_left(self, t0, t1, right):
        return flow_map(self.model, t0, t1, right).reshape(-1), self._scale(t0, t1)


class FrozenKernel(_FrozenBased):
    """``p~(t0, t1, left, right)``."""

    def __call__(self, t0, t1, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        theta, cov = self._params(t0, t1, right)
        return _gauss.pdf(left - theta, cov)


class HKernel(_FrozenBased):
    """``H(t0, t1, left, right)``."""

    def __call__(self, t0, t1, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        theta, cov = self._params(t0, t1, right)
        return _h_values(self.model, t0, left, theta, cov)


def _box(windows, radius):
    lo, hi = None, None
    for win in windows:
        if win is None:
            continue
        c, sc = win
        a, b = np.asarray(c) - radius * sc, np.asarray(c) + radius * sc
        lo = a if lo is None else np.maximum(lo, a)
        hi = b if hi is None else np.minimum(hi, b)
    return lo, hi


def convolve(f: Kernel, g: Kernel, t: float, s: float, x, y, quad: QuadSpec | None = None,
             gamma: float = 1.0) -> float:
    """``(f (x) g)(t, s, x, y)`` by graded time quadrature and local spatial rules.

    Time uses Gauss-Legendre nodes in ``rho`` with ``u = s - (s-t) rho^(2/gamma)``,
    which absorbs an ``(s-u)^(gamma/2 - 1)`` endpoint singularity.  At each
    ``u`` the ``z`` integral runs over the intersection of the windows of the
    two kernels, using a tensor Gauss-Legendre rule.
    """
    if not t < s:
        raise ValueError("convolution needs t < s")
    quad = quad or QuadSpec()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = x.shape[-1]
    rho, wr = np.polynomial.legendre.leggauss(quad.time_nodes)
    rho, wr = 0.5 * (rho + 1.0), 0.5 * wr
    zn, zw = np.polynomial.legendre.leggauss(quad.inner_nodes)
    zn, zw = 0.5 * (zn + 1.0), 0.5 * zw
    total, live = 0.0, False
    p = quad.grading or 2.0 / gamma
    for r, w in zip(rho, wr):
        u = s - (s - t) * r ** p
        du = (s - t) * p * r ** (p - 1.0)
        lo, hi = _box([f.window_right(t, u, x), g.window_left(u, s, y)], quad.radius)
        if lo is None:
            raise ValueError("at least one kernel must be spatially localised")
        if np.any(hi <= lo):
            continue
        live = True
        axes = [lo[k] + (hi[k] - lo[k]) * zn for k in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        z = np.stack([m.ravel() for m in mesh], axis=-1)
        wz = np.ones(())
        for k in range(d):
            wz = np.multiply.outer(wz, zw * (hi[k] - lo[k]))
        vals = f(t, u, x[None], z) * g(u, s, z, y[None])
        total += w * du * float(np.sum(vals * wz.ravel()))
    if not live:
        raise QuadratureError("all quadrature windows are empty")
    return total


# -- series ------------------------------------------------------------------------

@dataclass
class SeriesApprox:
    t: float
    s: float
    x: list[float]
    y: list[float]
    R: int
    terms: list[float]
    partial_sums: list[float]
    tail_estimate: float
    c_fit: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.partial_sums[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SeriesApprox":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SeriesApprox":
        return cls.from_dict(json.loads(text))


def _log_tail_terms(gamma: float, dt: float, c: float, r: np.ndarray) -> np.ndarray:
    return ((r + 1) * math.log(c) + r * special.gammaln(gamma / 2.0)
            - special.gammaln(1.0 + r * gamma / 2.0) + r * (gamma / 2.0) * math.log(dt))


def tail_bound(R: int, gamma: float, dt: float, c_fit: float, max_terms: int = 100_000) -> float:
    """``sum_{r>R} C^(r+1) Gamma(gamma/2)^r / Gamma(1 + r gamma/2) dt^(r gamma/2)``.

    Summation stops once increments drop below ``1e-16``; the terms
    eventually decay super-geometrically, so only a numerically unbounded
    sum is reported as divergent.
    """
    if not c_fit > 0:
        raise ValueError("C_fit must be positive")
    if not 0 < gamma <= 2:
        raise ValueError("gamma must lie in (0, 2]")
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return 0.0
    total, r = 0.0, R + 1
    chunk = 256
    while r < R + 1 + max_terms:
        logs = _log_tail_terms(gamma, dt, c_fit, np.arange(r, r + chunk, dtype=float))
        if np.any(logs > 700):
            raise OverflowError("tail series is numerically divergent for these parameters")
        vals = np.exp(logs)
        total += float(vals.sum())
        # past the peak and below tolerance
        if vals[-1] < 1e-16 and vals[-1] <= vals[-2]:
            return total
        r += chunk
    raise OverflowError("tail series did not converge within the term budget")


def fit_constant(term_r: float, term_next: float, gamma: float, dt: float, r: int = 1) -> float:
    """``C`` such that the envelope ratio at order ``r`` equals ``|term_next / term_r|``."""
    if term_r == 0 or dt <= 0:
        return 0.0
    unit = envelope_ratio(r, gamma, dt, 1.0)
    return abs(term_next / term_r) / unit


def envelope_ratio(r: int, gamma: float, dt: float, c_fit: float) -> float:
    """Bound on ``|terms[r+1]| / |terms[r]|`` implied by the Gamma-ratio envelope."""
    return (c_fit * math.gamma(gamma / 2) * dt ** (gamma / 2)
            * math.exp(special.gammaln(1 + r * gamma / 2) - special.gammaln(1 + (r + 1) * gamma / 2)))


def _trapezoid_to_zero(rho: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Integrate ``G(rho)`` over ``[0, rho[0]]`` from nodes with decreasing ``rho``.

    The missing value at ``rho = 0`` is extrapolated linearly from the two
    nearest nodes.
    """
    if len(rho) == 1:
        return G[0] * rho[0]
    total = np.sum(0.5 * (G[:-1] + G[1:]) * (rho[:-1] - rho[1:])[:, None, None], axis=0)
    r1, r2 = rho[-1], rho[-2]
    g0 = G[-1] + (G[-1] - G[-2]) * r1 / (r2 - r1)
    return total + 0.5 * (G[-1] + g0) * r1


def _picard_terms(model: DiffusionModel, t: float, s: float, x: np.ndarray, y: np.ndarray,
                  R: int, quad: QuadSpec) -> list[float]:
    """``(p~ (x) H^r)(t, s, x, y)`` for ``r = 1..R`` in one sweep over time slices.

    Slice ``k`` at ``v_k`` stores ``F_r(v_k, .) = (p~ (x) H^(r-1))(t, v_k, x, .)``
    on a grid around the forward flow of ``x``; the next level follows from
    ``F_{r+1}(v, w) = int_t^v du int F_r(u, z) H(u, v, z, w) dz`` with the
    earlier slices as ``u`` nodes.
    """
    gamma = model.regularity.gamma
    lam = model.regularity.Lambda
    M, rad = quad.time_nodes, quad.radius
    # clustered at both ends: fine near t for the narrow first slices and
    # fine near s where the last kernel factor is singular
    v = t + (s - t) * 0.5 * (1.0 - np.cos(np.pi * np.arange(M + 1) / M))
    v[-1] = s
    centres = [x.copy()]
    for k in range(1, M + 1):
        centres.append(flow_map(model, v[k - 1], v[k], centres[-1], forward=True))
    half = [rad * math.sqrt(lam * (vk - t)) for vk in v]
    zn, zw = np.polynomial.legendre.leggauss(quad.inner_nodes)
    zn, zw = 0.5 * (zn + 1.0), 0.5 * zw
    splines: list[list[CubicSpline]] = [[]]  # splines[m][r-1] for slice m >= 1
    for k in range(1, M + 1):
        if k < M:
            W = centres[k][0] + np.linspace(-half[k], half[k], quad.space_nodes)
        else:
            W = y.copy()
        W = W[:, None]
        thetas, covs = flow_with_covariance(model, v[k], W, v[k - 1::-1])
        thetas, covs = thetas[::-1], covs[::-1]  # index m = source slice
        F_new = np.zeros((R + 1, W.shape[0]))    # levels 2..R+1 at rows 1..R
        F_new[0] = _gauss.pdf(x - thetas[0], covs[0])
        rho = (v[k] - v[:k]) ** (gamma / 2.0)
        jac = (2.0 / gamma) * rho ** (2.0 / gamma - 1.0)
        I = np.zeros((k, R, W.shape[0]))
        I[0, 0] = _h_values(model, t, x, thetas[0], covs[0])
        for m in range(1, k):
            u = v[m]
            sig_h = math.sqrt(lam * (v[k] - u))
            lo = np.maximum(thetas[m][:, 0] - rad * sig_h, centres[m][0] - half[m])
            hi = np.minimum(thetas[m][:, 0] + rad * sig_h, centres[m][0] + half[m])
            span = np.clip(hi - lo, 0.0, None)
            z = lo[:, None] + span[:, None] * zn[None, :]
            h = _h_values(model, u, z[..., None], thetas[m][:, None, :], covs[m][:, None, :, :])
            wts = span[:, None] * zw[None, :] * h
            for r in range(R):
                Fz = np.nan_to_num(splines[m][r](z))
                I[m, r] = np.sum(Fz * wts, axis=1)
        G = I * jac[:, None, None]
        F_new[1:] = _trapezoid_to_zero(rho, G)
        if k < M:
            splines.append([CubicSpline(W[:, 0], F_new[r], extrapolate=False) for r in range(R)])
        else:
            return [float(F_new[r + 1, 0]) for r in range(R)]
    raise AssertionError("unreachable")


def series(model: DiffusionModel, t: float, s: float, x, y, R: int = 3,
           quad: QuadSpec | None = None) -> SeriesApprox:
    """Truncated expansion ``sum_{r <= R} (p~ (x) H^r)(t, s, x, y)``."""
    if not t < s:
        raise ValueError("series needs t < s")
    if R < 0:
        raise ValueError("truncation order must be nonnegative")
    if R > MAX_ORDER:
        raise ValueError(f"truncation order above {MAX_ORDER} is not supported")
    quad = quad or QuadSpec()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    terms = [float(frozen_density(model, t, s, x, y))]
    if R > 0:
        if model.dim != 1:
            raise NotImplementedError("series terms beyond the frozen density need d = 1")
        terms += _picard_terms(model, t, s, x, y, R, quad)
    gamma, dt = model.regularity.gamma, s - t
    partial = list(np.cumsum(terms).astype(float))
    c_fit, tail = 0.0, 0.0
    if R >= 2:
        c_fit = fit_constant(terms[1], terms[2], gamma, dt, r=1)
    elif R == 1:
        c_fit = fit_constant(terms[0], terms[1], gamma, dt, r=0)
    if c_fit > 0:
        # anchor the envelope at the last computed term
        anchor = math.exp(float(_log_tail_terms(gamma, dt, c_fit, np.array([float(R)]))[0]))
        tail = abs(terms[R]) * tail_bound(R, gamma, dt, c_fit) / anchor
    return SeriesApprox(float(t), float(s), x.tolist(), y.tolist(), R, terms, partial, tail, c_fit,
                        {"quad": asdict(quad), "model": model.name})
