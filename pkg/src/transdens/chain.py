"""The Markov chain: simulation, exact transition density on grids, and the
discrete parametrix expansion.

Everything on grids uses trapezoid weights.  The discrete kernel is

    H^n(t_i, t_j, x, y) = n (E_x - E~_x) p~_n(t_{i+1}, t_j, ., y)

where ``E_x`` integrates against one true chain step from ``x`` and ``E~_x``
against one step of the chain frozen along the discrete backward flow of
``y``.  With the convention that ``p~_n(t_j, t_j, ., y)`` is a point mass at
``y`` this also covers ``j = i + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import discrete_backward_nodes, discrete_flow_map
from .frozen import FrozenChainKernel, check_resolution, frozen_chain_density
from .grid import Grid, GridDensity
from .model import ChainModel
from .parametrix import SeriesApprox, envelope_ratio, fit_constant


class MassLossError(RuntimeError):
    """The grid recursion lost more mass than allowed."""


# -- simulation ----------------------------------------------------------------

@dataclass
class ChainPath:
    times: np.ndarray
    states: np.ndarray  # shape (steps + 1, d) or (steps + 1, paths, d)
    seed: int
    start_index: int = 0

    def increments_noise(self, chain: ChainModel) -> np.ndarray:
        """``sqrt(n) (X_{k+1} - X_k - b^n(t_k, X_k)/n)``, the innovations used."""
        out = []
        for k in range(len(self.times) - 1):
            x = self.states[k]
            step = self.states[k + 1] - x - chain.b(self.times[k], x) / chain.n
            out.append(math.sqrt(chain.n) * step)
        return np.stack(out)

    def to_csv(self, path) -> Path:
        path = Path(path)
        states = self.states if self.states.ndim == 2 else self.states[:, 0, :]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "t"] + [f"x{m + 1}" for m in range(states.shape[-1])])
            for k, (t, x) in enumerate(zip(self.times, states)):
                writer.writerow([self.start_index + k, repr(float(t))] + [repr(float(c)) for c in x])
        return path


def simulate(chain: ChainModel, x0, j: int, seed: int, paths: int | None = None, i: int = 0) -> ChainPath:
    """Run the chain from ``x0`` at ``t_i`` up to ``t_j``.

    With ``paths`` set, that many independent paths are advanced together and
    ``states`` gains a path axis.  The stream is ``numpy.random.default_rng(seed)``.
    """
    if not 0 <= i <= j <= chain.n:
        raise IndexError(f"need 0 <= i <= j <= n, got i={i}, j={j}")
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.shape != (chain.dim,):
        raise ValueError("x0 must be a single point")
    if paths is not None:
        x = np.broadcast_to(x, (paths, chain.dim)).copy()
    states = [x.copy()]
    sq = math.sqrt(chain.n)
    for k in range(i, j):
        t = chain.time(k)
        xi = chain.innovations.sample(t, x, rng)
        x = x + chain.b(t, x) / chain.n + xi / sq
        states.append(x.copy())
    return ChainPath(np.arange(i, j + 1) / chain.n, np.stack(states), int(seed), i)


# -- densities -----------------------------------------------------------------

def one_step_density(chain: ChainModel, i: int, x, y) -> np.ndarray:
    """Density of ``X_{t_{i+1}}`` at ``y`` given ``X_{t_i} = x`` (broadcasts)."""
    if not 0 <= i < chain.n:
        raise IndexError(f"need 0 <= i < n, got {i}")
    t, n, d = chain.time(i), chain.n, chain.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = math.sqrt(n) * (y - x - chain.b(t, x) / n)
    cov = chain.innovations.cov(t, x)
    return n ** (d / 2.0) * chain.innovations.density_with_cov(z, cov)


def _frozen_step_density(chain: ChainModel, i: int, theta, x, y) -> np.ndarray:
    """One step of the chain frozen at ``theta``, from ``x`` to ``y``."""
    t, n, d = chain.time(i), chain.n, chain.dim
    z = math.sqrt(n) * (y - x - chain.b(t, theta) / n)
    cov = chain.innovations.cov(t, theta)
    return n ** (d / 2.0) * chain.innovations.density_with_cov(z, cov)


def default_grid(chain: ChainModel, i: int, j: int, x0, radius: float = 8.0, h: float | None = None) -> Grid:
    """Grid around the forward discrete flow of ``x0`` wide enough for ``p_n``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    centre = discrete_flow_map(chain, i, j, x0, forward=True)
    lam = chain.regularity.Lambda
    width = math.sqrt(lam * (j - i) / chain.n)
    if h is None:
        h = min(0.25 / math.sqrt(chain.n), width / 8.0)
    half = radius * width + 4.0 * math.sqrt(lam / chain.n)
    return Grid.around(0.5 * (centre + x0), half + 0.5 * float(np.max(np.abs(centre - x0))), h)


def _transition_matrix(chain: ChainModel, k: int, pts: np.ndarray) -> np.ndarray:
    """``T[a, b] = one_step_density(k, pts[a], pts[b])``."""
    return one_step_density(chain, k, pts[:, None, :], pts[None, :, :])


def chain_density_grid(chain: ChainModel, i: int, j: int, x0, grid: Grid,
                       max_deficit: float = 0.02) -> GridDensity:
    """``p_n(t_i, t_j, x0, .)`` on ``grid`` by the Chapman-Kolmogorov recursion."""
    if j - i < 1:
        raise ValueError("need j - i >= 1")
    if not 0 <= i < j <= chain.n:
        raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}")
    check_resolution(chain, grid)
    pts, wts = grid.points(), grid.weights()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dens = one_step_density(chain, i, x0[None], pts)
    masses = [float(dens @ wts)]
    for k in range(i + 1, j):
        dens = (dens * wts) @ _transition_matrix(chain, k, pts)
        masses.append(float(dens @ wts))
        if 1.0 - masses[-1] > max_deficit:
            raise MassLossError(f"mass deficit {1.0 - masses[-1]:.4f} after step {k + 1} "
                                f"exceeds {max_deficit}; widen the grid")
    if 1.0 - masses[0] > max_deficit:
        raise MassLossError(f"mass deficit {1.0 - masses[0]:.4f} after the first step; widen the grid")
    return GridDensity(grid, dens, {"kind": "chain", "i": i, "j": j, "n": chain.n,
                                    "x0": x0.tolist(), "masses": masses,
                                    "mass_deficit": 1.0 - masses[-1]})


def chain_density(chain: ChainModel, i: int, j: int, x0, y, grid: Grid | None = None) -> np.ndarray:
    """``p_n(t_i, t_j, x0, y)`` at arbitrary points: recursion on a grid up to
    step ``j-1`` and an exact final step to each ``y``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if j - i == 1:
        return one_step_density(chain, i, x0[None], y)
    grid = grid or default_grid(chain, i, j, x0)
    prev = chain_density_grid(chain, i, j - 1, x0, grid)
    pts, wts = grid.points(), grid.weights()
    last = one_step_density(chain, j - 1, pts[:, None, :], y[None, :, :])
    return (prev.values.ravel() * wts) @ last


# -- discrete parametrix -------------------------------------------------------

def _hn_grid(chain: ChainModel, i: int, x, thetas, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Local trapezoid nodes covering one true and one frozen step from ``x``."""
    t, n = chain.time(i), chain.n
    lam = chain.regularity.Lambda
    tail = 12.0 if chain.innovations.is_gaussian else 40.0
    reach = tail * math.sqrt(lam / n)
    c = np.concatenate([x + chain.b(t, x) / n, thetas * 0 + x + chain.b(t, thetas) / n])
    lo, hi = c.min(axis=0) - reach, c.max(axis=0) + reach
    if chain.dim != 1:
        raise NotImplementedError("discrete kernel quadrature is implemented for d = 1")
    m = int(math.ceil((hi[0] - lo[0]) / h))
    z = lo[0] + h * np.arange(m + 1)
    w = np.full(m + 1, h)
    w[[0, -1]] *= 0.5
    return z[:, None], w


def discrete_kernel_Hn(chain: ChainModel, i: int, j: int, x, y, grid: Grid | None = None) -> float:
    """``H^n(t_i, t_j, x, y)``; both one-step expectations use the same nodes.

    ``grid`` only fixes the quadrature spacing (default ``0.125/sqrt(n)``).
    """
    if not 0 <= i < j <= chain.n:
        raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}")
    n = chain.n
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = grid.spacing[0] if grid is not None else 0.125 / math.sqrt(n)
    if h > 0.25 / math.sqrt(n) * (1 + 1e-12):
        raise ValueError("quadrature spacing exceeds 0.25/sqrt(n)")
    theta = discrete_flow_map(chain, i, j, y[None])[0]
    if j - i == 1:
        true = one_step_density(chain, i, x, y)
        frozen = _frozen_step_density(chain, i, theta, x, y)
        return float(n * (true - frozen))
    z, w = _hn_grid(chain, i, x[None], theta[None], h)
    pt = frozen_chain_density(chain, i + 1, j, z, y)
    true = one_step_density(chain, i, x[None], z)
    frozen = _frozen_step_density(chain, i, theta[None], x[None], z)
    return float(n * np.sum((true - frozen) * pt * w))


class DiscreteKernel:
    """A lattice kernel ``k(l, m, left, right)`` for ``l < m``; ``left`` and
    ``right`` broadcast as point arrays."""

    def __call__(self, l: int, m: int, left, right) -> np.ndarray:
        raise NotImplementedError


class ConstantDiscreteKernel(DiscreteKernel):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, l, m, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        return np.full(left.shape[:-1], self.value)


class FrozenChainDiscreteKernel(DiscreteKernel):
    """``p~_n(t_l, t_m, left, right)`` for a single ``right`` point or a batch
    of ``left`` against a batch of ``right`` with matching leading shape."""

    def __init__(self, chain: ChainModel):
        self.chain = chain

    def __call__(self, l, m, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        flat_r = right.reshape(-1, self.chain.dim)
        flat_l = left.reshape(-1, 1, self.chain.dim)
        kern = FrozenChainKernel(self.chain, l, m, flat_r)
        return kern(flat_l)[:, 0].reshape(left.shape[:-1])


class HnDiscreteKernel(DiscreteKernel):
    def __init__(self, chain: ChainModel, grid: Grid | None = None):
        self.chain, self.grid = chain, grid

    def __call__(self, l, m, left, right):
        left, right = np.broadcast_arrays(np.asarray(left, float), np.asarray(right, float))
        flat_l = left.reshape(-1, self.chain.dim)
        flat_r = right.reshape(-1, self.chain.dim)
        out = [discrete_kernel_Hn(self.chain, l, m, a, b, self.grid) for a, b in zip(flat_l, flat_r)]
        return np.asarray(out).reshape(left.shape[:-1])


def discrete_convolve(f: DiscreteKernel, g: DiscreteKernel, n: int, i: int, j: int, x, y, grid: Grid,
                      f_diagonal: str = "identity") -> float:
    """``(f (x)_n g)(t_i, t_j, x, y) = sum_k (1/n) int f(t_i, t_{i+k}, x, z) g(t_{i+k}, t_j, z, y) dz``.

    The ``k = 0`` term treats ``f(t_i, t_i, ., .)`` as a point mass at ``x``
    (``f_diagonal="identity"``) or as zero (``"zero"``).  The ``z`` integral
    is a trapezoid sum over ``grid``.
    """
    if not i < j:
        raise ValueError("discrete convolution needs i < j")
    if f_diagonal not in ("identity", "zero"):
        raise ValueError("f_diagonal must be 'identity' or 'zero'")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    pts, wts = grid.points(), grid.weights()
    total = float(g(i, j, x, y)) / n if f_diagonal == "identity" else 0.0
    for k in range(i + 1, j):
        fz = f(i, k, x[None], pts)
        gz = g(k, j, pts, y[None])
        total += float(np.sum(fz * gz * wts)) / n
    return total


def _frozen_matrix(chain: ChainModel, l: int, m: int, Z: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``P[a, b] = p~_n(t_l, t_m, Z[a], W[b])``."""
    kern = FrozenChainKernel(chain, l, m, W)
    return kern(np.broadcast_to(Z[None], (W.shape[0],) + Z.shape)).T


def discrete_terms(chain: ChainModel, i: int, j: int, x, y, R: int, grid: Grid) -> list[float]:
    """All ``(p~_n (x)_n H^n^(r))(t_i, t_j, x, y)`` for ``r = 0..R``.

    Left objects ``L_r(k, .) = (p~_n (x)_n H^n^(r))(t_i, t_k, x, .)`` are kept on
    ``grid`` for every lattice time; ``H^n(t_l, t_k)`` is assembled as a
    matrix from the one-step transition matrix and frozen densities.
    """
    n, d = chain.n, chain.dim
    if d != 1:
        raise NotImplementedError("discrete series is implemented for d = 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Z, wz = grid.points(), grid.weights()
    N = Z.shape[0]
    steps = {l: _transition_matrix(chain, l, Z) for l in range(i + 1, j)}
    # L[k][r] on the grid for i < k < j
    L: dict[int, np.ndarray] = {}
    terms = None
    for k in range(i + 1, j + 1):
        W = Z if k < j else y[None]
        cur = np.zeros((R + 1, W.shape[0]))
        cur[0] = FrozenChainKernel(chain, i, k, W)(np.broadcast_to(x, (W.shape[0], 1, d)))[:, 0]
        # frozen densities p~_n(t_l, t_k, ., W) for l = i+1..k-1 and the row from x
        P = {l: _frozen_matrix(chain, l, k, Z, W) for l in range(i + 1, k)}
        for l in range(i, k):
            # H^n(t_l, t_k, z, W): n [T_l (p~_n(t_{l+1}, t_k)) - p~_n(t_l, t_k)]
            if l == i:
                src = x[None]
                true_step = one_step_density(chain, i, x[None], Z)[None, :]
                frozen_now = cur[0][None, :]
            else:
                src = None
                true_step = steps[l]
                frozen_now = P[l]
            if l + 1 < k:
                ahead = (true_step * wz) @ P[l + 1]
            else:
                origin = src if src is not None else Z
                ahead = one_step_density(chain, l, origin[:, None, :], W[None, :, :])
            if l + 1 == k:
                theta = discrete_backward_nodes(chain, l, k, W)[0]
                origin = src if src is not None else Z
                frozen_now = _frozen_step_density(chain, l, theta[None, :, :],
                                                  origin[:, None, :], W[None, :, :])
            Hn = n * (ahead - frozen_now)
            if l == i:
                cur[1] += Hn[0] / n
            else:
                cur[1:] += ((L[l][:R] * wz) @ Hn) / n
        if k < j:
            L[k] = cur
        else:
            terms = [float(v) for v in cur[:, 0]]
    return terms


def discrete_series(chain: ChainModel, i: int, j: int, x, y, R: int, grid: Grid | None = None) -> SeriesApprox:
    """Partial sums of ``p_n = sum_{r <= j-i} p~_n (x)_n H^n^(r)``."""
    if not 0 <= i < j <= chain.n:
        raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}")
    if R < 0:
        raise ValueError("truncation order must be nonnegative")
    if R > j - i:
        raise ValueError(f"the discrete series has only {j - i} nonzero orders; R={R} rejected")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    grid = grid or default_grid(chain, i, j, x)
    check_resolution(chain, grid)
    terms = discrete_terms(chain, i, j, x, y, R, grid)
    partial = [float(v) for v in np.cumsum(terms)]
    gamma, dt = chain.regularity.gamma, (j - i) / chain.n
    c_fit = 0.0
    if R >= 2:
        c_fit = fit_constant(terms[1], terms[2], gamma, dt, r=1)
    elif R == 1:
        c_fit = fit_constant(terms[0], terms[1], gamma, dt, r=0)
    # the remaining orders are finitely many; bound them by the envelope ratios
    tail, last = 0.0, abs(terms[R])
    if c_fit > 0:
        for r in range(R, j - i):
            last *= envelope_ratio(r, gamma, dt, c_fit)
            tail += last
    return SeriesApprox(chain.time(i), chain.time(j), x.tolist(), y.tolist(), R, terms, partial,
                        tail, c_fit, {"n": chain.n, "i": i, "j": j, "model": chain.name})
