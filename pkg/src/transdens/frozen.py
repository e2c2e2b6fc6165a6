"""Frozen (flow-anchored) Gaussian densities and the frozen chain density.

The frozen diffusion anchored at ``(s, y)`` has Gaussian transitions with
mean ``x + y - theta_{t,s}(y)`` and covariance
``int_t^s a(u, theta_{u,s}(y)) du``, so ``p~(t,s,x,y)`` is the centred normal
density of covariance ``C~`` evaluated at ``x - theta_{t,s}(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from . import _gauss
from .flow import backward_flow, default_steps, discrete_backward_nodes
from .grid import Grid, GridDensity
from .model import ChainModel, DiffusionModel


class EllipticityError(ValueError):
    """A covariance that should be positive definite is not."""


@dataclass(frozen=True)
class FrozenGaussian:
    t: float
    s: float
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray  # backward flow theta_{t,s}(y)
    cov: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.x + self.y - self.theta


def _simpson_weights(m: int, h: float) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def frozen_params(model: DiffusionModel, t: float, s: float, x, y,
                  quad_nodes: int | None = None) -> FrozenGaussian:
    """Mean and covariance of the frozen diffusion.

    The covariance integral uses composite Simpson weights on the nodes of
    the stored backward flow path, so ``quad_nodes`` is rounded up to even.
    """
    if not t < s:
        raise ValueError("frozen parameters need t < s")
    m = quad_nodes or default_steps(t, s)
    m += m % 2
    path = backward_flow(model, t, s, y, m)
    a_vals = np.stack([model.a(u, p[None])[0] for u, p in zip(path.times, path.points)])
    w = _simpson_weights(m, (s - t) / m)
    cov = np.einsum("k,kij->ij", w, a_vals)
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise EllipticityError("frozen covariance is not positive definite")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return FrozenGaussian(t, s, x, path.anchor_point, path.endpoint, cov)


def frozen_density(model: DiffusionModel, t: float, s: float, x, y,
                   quad_nodes: int | None = None) -> np.ndarray | float:
    """``p~(t, s, x, y)``; ``x`` may be a batch of points for a single ``y``."""
    fg = frozen_params(model, t, s, np.zeros(model.dim), y, quad_nodes)
    x = np.asarray(x, dtype=float)
    out = _gauss.pdf(np.atleast_1d(x) - fg.theta, fg.cov)
    return float(out) if np.ndim(out) == 0 else out


def frozen_derivative(model: DiffusionModel, t: float, s: float, x, y, nu,
                      quad_nodes: int | None = None):
    """Analytic ``D_x^nu p~(t, s, x, y)`` for a multi-index with ``|nu| <= 4``."""
    nu = tuple(int(k) for k in np.atleast_1d(nu))
    if len(nu) != model.dim or any(k < 0 for k in nu):
        raise ValueError(f"multi-index must have {model.dim} nonnegative entries")
    if sum(nu) > 4:
        raise ValueError("derivatives are supported up to total order 4")
    fg = frozen_params(model, t, s, np.zeros(model.dim), y, quad_nodes)
    x = np.asarray(x, dtype=float)
    out = _gauss.pdf_derivative(np.atleast_1d(x) - fg.theta, fg.cov, _gauss.multi_index_to_axes(nu))
    return float(out) if np.ndim(out) == 0 else out


# -- frozen chain ---------------------------------------------------------------

def frozen_chain_steps(chain: ChainModel, i: int, j: int, y) -> tuple[np.ndarray, np.ndarray]:
    """Discrete flow ``theta^n_{t_i,t_j}(y)`` and the step covariances.

    Returns ``theta`` with shape of ``y`` and ``covs`` with shape
    ``(j - i,) + y.shape + (d,)`` holding ``a^n(t_k, theta^n_{t_k,t_j}(y))``.
    """
    nodes = discrete_backward_nodes(chain, i, j, y)
    covs = np.stack([chain.a(chain.time(k), nodes[k - i]) for k in range(i, j)])
    return nodes[0], covs


def _noise_sum_grid_1d(fam, step_covs: tuple[float, ...], n: int, h: float):
    """Density of ``sum xi_k / sqrt(n)`` on the symmetric lattice ``k h``."""
    total = sum(step_covs) / n
    big = max(step_covs) / n
    radius = 12.0 * math.sqrt(total) + 12.0 * math.sqrt(big)
    k_tot = int(math.ceil(radius / h))
    k_one = min(k_tot, int(math.ceil(14.0 * math.sqrt(big) / h)))
    w1 = (np.arange(-k_one, k_one + 1) * h)[:, None]
    dens = None
    for c in step_covs:
        step = math.sqrt(n) * fam.density_with_cov(math.sqrt(n) * w1, np.array([[c]]))
        dens = step if dens is None else np.convolve(dens, step) * h
        if dens.size > 2 * k_tot + 1:
            cut = (dens.size - (2 * k_tot + 1)) // 2
            dens = dens[cut:dens.size - cut]
    offsets = (np.arange(dens.size) - dens.size // 2) * h
    return offsets, dens


@lru_cache(maxsize=256)
def _noise_sum_spline(fam, step_covs: tuple[float, ...], n: int):
    h = min(0.25, 0.125 * math.sqrt(min(step_covs))) / math.sqrt(n)
    offsets, dens = _noise_sum_grid_1d(fam, step_covs, n, h)
    return CubicSpline(offsets, dens, extrapolate=False), float(offsets[-1])


class FrozenChainKernel:
    """Pointwise evaluator of ``p~_n(t_i, t_j, x, y)`` for a batch of anchors ``y``.

    For Gaussian innovations the noise sum is Gaussian with the summed
    covariance.  Otherwise its density is built by numerical convolution
    (``d = 1``) and interpolated.
    """

    def __init__(self, chain: ChainModel, i: int, j: int, y):
        if not 0 <= i < j <= chain.n:
            raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}")
        y = np.atleast_2d(np.asarray(y, dtype=float))
        self.chain, self.i, self.j, self.y = chain, i, j, y
        self.theta, covs = frozen_chain_steps(chain, i, j, y)
        self.step_covs = covs
        self.cov = covs.sum(axis=0) / chain.n
        fam = chain.innovations
        self._splines = None
        if not fam.is_gaussian:
            if chain.dim != 1:
                raise NotImplementedError("non-Gaussian frozen chains are pointwise only in d = 1")
            keys = [tuple(np.round(covs[:, m, 0, 0], 12)) for m in range(y.shape[0])]
            self._splines = [_noise_sum_spline(fam, key, chain.n) for key in keys]

    def __call__(self, x) -> np.ndarray:
        """``x`` has shape ``(M, ..., d)`` aligned with the ``M`` anchors."""
        x = np.asarray(x, dtype=float)
        extra = x.ndim - 2
        theta = self.theta.reshape(self.theta.shape[:1] + (1,) * extra + self.theta.shape[1:])
        w = theta - x
        if self._splines is None:
            cov = self.cov.reshape(self.cov.shape[:1] + (1,) * extra + self.cov.shape[1:])
            return _gauss.pdf(w, cov)
        out = np.empty(w.shape[:-1])
        for m, (spline, edge) in enumerate(self._splines):
            wm = w[m, ..., 0]
            val = spline(np.clip(wm, -edge, edge))
            out[m] = np.where(np.abs(wm) < edge, np.nan_to_num(val), 0.0)
        return out


def frozen_chain_density(chain: ChainModel, i: int, j: int, x, y) -> np.ndarray:
    """``p~_n(t_i, t_j, x, y)`` for a batch of ``x`` and a single anchor ``y``."""
    kern = FrozenChainKernel(chain, i, j, np.atleast_1d(np.asarray(y, dtype=float))[None])
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return kern(x[None] if x.ndim > 1 else x[None, None])[0]


def check_resolution(chain: ChainModel, grid: Grid):
    limit = 0.25 / math.sqrt(chain.n)
    if max(grid.spacing) > limit * (1 + 1e-12):
        raise ValueError(f"grid spacing {max(grid.spacing):.4g} exceeds 0.25/sqrt(n) = {limit:.4g}")
    if grid.dim > 2:
        raise ValueError("grid densities are supported for d <= 2 only")
    if grid.dim != chain.dim:
        raise ValueError("grid dimension does not match the chain")


def frozen_chain_density_grid(chain: ChainModel, i: int, j: int, y_anchor, grid: Grid) -> GridDensity:
    """``x -> p~_n(t_i, t_j, x, y_anchor)`` on ``grid`` by repeated convolution.

    The one-step innovation densities along the discrete flow are convolved
    on a lattice aligned with ``grid`` (trapezoid weights), truncated at
    radius ``max(8 sqrt(t_j - t_i), 8/sqrt(n))`` scaled by the largest step
    standard deviation.
    """
    if j - i < 1:
        raise ValueError("need at least one step")
    check_resolution(chain, grid)
    d, n, h = chain.dim, chain.n, grid.spacing[0]
    if len(set(grid.spacing)) != 1:
        raise ValueError("frozen chain grids need equal spacing on all axes")
    y = np.atleast_1d(np.asarray(y_anchor, dtype=float))
    theta, covs = frozen_chain_steps(chain, i, j, y)
    scale = math.sqrt(max(np.linalg.eigvalsh(c).max() for c in covs))
    radius = scale * max(8.0 * math.sqrt((j - i) / n), 8.0 / math.sqrt(n))
    k_tot = int(math.ceil(radius / h))
    fam = chain.innovations
    # offset so that theta - x lands on lattice nodes
    x0 = np.asarray(grid.origin)
    phase = (theta - x0) - np.round((theta - x0) / h) * h

    def lattice(k, shift):
        ax = [np.arange(-k, k + 1) * h + shift[a] for a in range(d)]
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack([m_.ravel() for m_ in mesh], axis=-1), (2 * k + 1,) * d

    k_one = min(k_tot, int(math.ceil(14.0 * math.sqrt(np.linalg.eigvalsh(covs).max() / n) / h)))
    pts, shape = lattice(k_tot if j - i == 1 else k_one, phase)
    dens = (n ** (d / 2.0) * fam.density_with_cov(math.sqrt(n) * pts, covs[0])).reshape(shape)
    if j - i == 1:
        dens_full = dens
    else:
        dens_full = dens
        pts0, shape0 = lattice(k_one, np.zeros(d))
        for c in covs[1:]:
            step = (n ** (d / 2.0) * fam.density_with_cov(math.sqrt(n) * pts0, c)).reshape(shape0)
            dens_full = signal.convolve(dens_full, step, mode="full", method="direct") * h ** d
            excess = (dens_full.shape[0] - (2 * k_tot + 1)) // 2
            if excess > 0:
                sl = tuple(slice(excess, dens_full.shape[a] - excess) for a in range(d))
                dens_full = dens_full[sl]
    k_have = dens_full.shape[0] // 2
    # x on grid -> w = theta - x -> lattice index
    xs = grid.points()
    idx = np.round((theta - xs - phase) / h).astype(int) + k_have
    inside = np.all((idx >= 0) & (idx < dens_full.shape[0]), axis=-1)
    values = np.zeros(xs.shape[0])
    values[inside] = dens_full[tuple(idx[inside].T)]
    lattice_mass = float(dens_full.sum() * h ** d)
    out = GridDensity(grid, values, {"kind": "frozen_chain", "i": i, "j": j, "n": n,
                                     "y_anchor": y.tolist(), "theta": theta.tolist(),
                                     "lattice_mass": lattice_mass,
                                     "mass_deficit": 1.0 - lattice_mass})
    return out
