"""Deterministic transport flows of the drift.

The backward flow ``theta_{t,s}(y)`` solves ``d theta/du = b(u, theta)`` with
``theta(s) = y`` and is reported at ``u = t``.  The discrete flow solves the
difference equation ``theta_{k+1} = theta_k + b^n(t_k, theta_k)/n`` downward
from ``theta_j = y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChainModel, DiffusionModel


class FlowError(FloatingPointError):
    """Raised when a trajectory leaves the finite reals or fails to converge."""


@dataclass(frozen=True)
class FlowPath:
    anchor_time: float
    anchor_point: np.ndarray
    direction: str
    times: np.ndarray
    points: np.ndarray
    steps: int

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def to_rows(self) -> list[list[float]]:
        return [[float(u), *map(float, p)] for u, p in zip(self.times, self.points)]


def default_steps(t: float, s: float) -> int:
    m = max(64, math.ceil(abs(s - t) * 512))
    return m + (m % 2)


def _check(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise FlowError("non-finite drift value along trajectory")


def _rk4(b, u0: float, u1: float, y0: np.ndarray, m: int, keep: bool):
    h = (u1 - u0) / m
    y = np.array(y0, dtype=float)
    path = [y.copy()] if keep else None
    u = u0
    with np.errstate(all="ignore"):
        for k in range(m):
            k1 = b(u, y)
            k2 = b(u + 0.5 * h, y + 0.5 * h * k1)
            k3 = b(u + 0.5 * h, y + 0.5 * h * k2)
            k4 = b(u + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            u = u0 + (k + 1) * h
            _check(y)
            if keep:
                path.append(y.copy())
    return (np.stack(path) if keep else y), np.linspace(u0, u1, m + 1)


def _points(y, dim):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y[None]
    if y.shape[-1] != dim:
        raise ValueError(f"point dimension mismatch: expected {dim}, got {y.shape}")
    return y


def flow_map(model: DiffusionModel, t: float, s: float, y, m: int | None = None,
             forward: bool = False) -> np.ndarray:
    """Vectorised flow endpoint.

    Backward (default): ``theta_{t,s}(y)``.  Forward: the solution started at
    ``y`` at time ``t`` and read off at ``s``.
    """
    y = _points(y, model.dim)
    if t == s:
        return y.copy()
    m = m or default_steps(t, s)
    if forward:
        out, _ = _rk4(model.b, t, s, y, m, keep=False)
    else:
        out, _ = _rk4(model.b, s, t, y, m, keep=False)
    return out


def backward_flow(model: DiffusionModel, t: float, s: float, y, m: int | None = None) -> FlowPath:
    if not 0.0 <= t < s <= 1.0:
        raise ValueError(f"backward flow needs 0 <= t < s <= 1, got t={t}, s={s}")
    m = m or default_steps(t, s)
    if m < 1:
        raise ValueError("need at least one step")
    y = _points(y, model.dim)
    pts, times = _rk4(model.b, s, t, y, m, keep=True)
    times[-1] = t
    return FlowPath(s, y, "backward", times, pts, m)


def forward_flow(model: DiffusionModel, t: float, s: float, x, m: int | None = None) -> FlowPath:
    if not 0.0 <= t < s <= 1.0:
        raise ValueError(f"forward flow needs 0 <= t < s <= 1, got t={t}, s={s}")
    m = m or default_steps(t, s)
    if m < 1:
        raise ValueError("need at least one step")
    x = _points(x, model.dim)
    pts, times = _rk4(model.b, t, s, x, m, keep=True)
    times[-1] = s
    return FlowPath(t, x, "forward", times, pts, m)


def flow_with_covariance(model: DiffusionModel, s: float, y, u_nodes, max_step: float = 1.0 / 512):
    """Backward flow from ``(s, y)`` together with ``int_u^s a(r, theta_{r,s}(y)) dr``.

    ``u_nodes`` must be decreasing and ``<= s``.  Returns arrays of shape
    ``(len(u_nodes),) + y.shape`` and ``(len(u_nodes),) + y.shape + (d,)``.
    The covariance integral is carried as an extra RK4 component.
    """
    y = _points(y, model.dim)
    d = model.dim
    u_nodes = np.asarray(u_nodes, dtype=float)
    thetas = np.empty((len(u_nodes),) + y.shape)
    covs = np.empty((len(u_nodes),) + y.shape + (d,))
    theta = y.copy()
    cov = np.zeros(y.shape + (d,))
    u = float(s)

    def rhs(r, th):
        return model.b(r, th), -model.a(r, th)

    with np.errstate(all="ignore"):
        for idx, target in enumerate(u_nodes):
            span = target - u
            if span > 1e-15:
                raise ValueError("u_nodes must be decreasing and not exceed s")
            m = max(1, math.ceil(abs(span) / max_step)) if span != 0 else 0
            h = span / m if m else 0.0
            for k in range(m):
                k1b, k1a = rhs(u, theta)
                k2b, k2a = rhs(u + 0.5 * h, theta + 0.5 * h * k1b)
                k3b, k3a = rhs(u + 0.5 * h, theta + 0.5 * h * k2b)
                k4b, k4a = rhs(u + h, theta + h * k3b)
                theta = theta + (h / 6.0) * (k1b + 2 * k2b + 2 * k3b + k4b)
                cov = cov + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
                u = u + h
                _check(theta)
            u = float(target)
            thetas[idx] = theta
            covs[idx] = cov
    return thetas, covs


# -- discrete flows -------------------------------------------------------------

def _implicit_step(chain: ChainModel, k: int, upper: np.ndarray) -> np.ndarray:
    """Solve ``theta + b^n(t_k, theta)/n = upper`` by fixed-point iteration.

    The map is a contraction with factor ``B/n`` which is why ``B < n`` is
    required of the chain.
    """
    t = chain.time(k)
    theta = upper - chain.b(t, upper) / chain.n
    for _ in range(500):
        nxt = upper - chain.b(t, theta) / chain.n
        _check(nxt)
        if np.all(np.abs(nxt - theta) <= 1e-15 * (1.0 + np.abs(nxt))):
            return nxt
        theta = nxt
    raise FlowError(f"discrete backward flow did not converge at step {k} (is B < n?)")


def discrete_flow_map(chain: ChainModel, i: int, j: int, y, forward: bool = False) -> np.ndarray:
    """Vectorised discrete flow: backward ``theta^n_{t_i,t_j}(y)`` or forward Euler from ``t_i``."""
    if not 0 <= i <= j <= chain.n:
        raise IndexError(f"need 0 <= i <= j <= n, got i={i}, j={j}, n={chain.n}")
    theta = _points(y, chain.dim).copy()
    with np.errstate(all="ignore"):
        if forward:
            for k in range(i, j):
                theta = theta + chain.b(chain.time(k), theta) / chain.n
                _check(theta)
        else:
            for k in range(j - 1, i - 1, -1):
                theta = _implicit_step(chain, k, theta)
    return theta


def discrete_backward_flow(chain: ChainModel, i: int, j: int, y) -> FlowPath:
    if not 0 <= i < j <= chain.n:
        raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}, n={chain.n}")
    y = _points(y, chain.dim)
    pts = [y.copy()]
    theta = y.copy()
    for k in range(j - 1, i - 1, -1):
        theta = _implicit_step(chain, k, theta)
        pts.append(theta.copy())
    times = np.arange(j, i - 1, -1) / chain.n
    return FlowPath(chain.time(j), y, "backward", times, np.stack(pts), j - i)


def discrete_backward_nodes(chain: ChainModel, i: int, j: int, y) -> np.ndarray:
    """All nodes ``theta^n_{t_k,t_j}(y)`` for ``k = i..j`` (index ``k - i``)."""
    y = _points(y, chain.dim)
    out = np.empty((j - i + 1,) + y.shape)
    out[j - i] = y
    theta = y.copy()
    for k in range(j - 1, i - 1, -1):
        theta = _implicit_step(chain, k, theta)
        out[k - i] = theta
    return out


def discrete_forward_flow(chain: ChainModel, i: int, j: int, x) -> FlowPath:
    if not 0 <= i < j <= chain.n:
        raise IndexError(f"need 0 <= i < j <= n, got i={i}, j={j}, n={chain.n}")
    x = _points(x, chain.dim)
    pts = [x.copy()]
    theta = x.copy()
    for k in range(i, j):
        theta = theta + chain.b(chain.time(k), theta) / chain.n
        _check(theta)
        pts.append(theta.copy())
    return FlowPath(chain.time(i), x, "forward", np.arange(i, j + 1) / chain.n, np.stack(pts), j - i)


def flow_discrepancy(model: DiffusionModel, chain: ChainModel, i: int, j: int, y,
                     m: int | None = None) -> float:
    """``|theta_{t_i,t_j}(y) - theta^n_{t_i,t_j}(y)|`` with an accurate continuous reference."""
    if model.dim != chain.dim:
        raise ValueError("dimension mismatch between model and chain")
    ti, tj = chain.time(i), chain.time(j)
    m = m or 4 * default_steps(ti, tj)
    cont = flow_map(model, ti, tj, y, m)
    disc = discrete_flow_map(chain, i, j, y)
    return float(np.linalg.norm(cont - disc))
