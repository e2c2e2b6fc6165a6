"""Polynomial envelope kernels ``Q_S(z) = C_S / (1 + |z|)^S`` and the two
kernel inequalities used to compare chain and diffusion densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .flow import flow_map, discrete_flow_map
from .model import ChainModel, DiffusionModel


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def normalization(S: float, d: int) -> float:
    """``C_S`` such that ``Q_S`` integrates to one over ``R^d``."""
    if not S > d:
        raise ValueError(f"Q_S is integrable only for S > d (S={S}, d={d})")
    if d == 1:
        return (S - 1.0) / 2.0
    # radial quadrature: the substitution r = u/(1-u) maps [0, inf) to [0, 1)
    val, _ = integrate.quad(lambda u: (u / (1 - u)) ** (d - 1) * (1 - u) ** S / (1 - u) ** 2,
                            0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return 1.0 / (_sphere_area(d) * val)


@dataclass(frozen=True)
class PolyKernel:
    S: float
    d: int = 1
    C_S: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "C_S", normalization(self.S, self.d))

    def q_eval(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r = np.abs(z[..., 0]) if self.d == 1 else np.linalg.norm(z, axis=-1)
        return self.C_S / (1.0 + r) ** self.S

    def scaled_eval(self, t: float, z) -> np.ndarray:
        """``t^{-d/2} Q_S(z / sqrt(t))``, a probability density in ``z``."""
        if not t > 0:
            raise ValueError("scale t must be positive")
        z = np.asarray(z, dtype=float)
        return t ** (-self.d / 2.0) * self.q_eval(z / math.sqrt(t))


def q_eval(kernel: PolyKernel, z) -> np.ndarray:
    return kernel.q_eval(z)


def scaled_eval(kernel: PolyKernel, t: float, z) -> np.ndarray:
    return kernel.scaled_eval(t, z)


def radial_mass(kernel: PolyKernel, nodes: int = 4000) -> float:
    """Total mass of ``Q_S`` by a radial trapezoid rule in log-radius.

    The substitution ``r = exp(s)`` turns the algebraic tail into an
    exponential one, so a plain trapezoid rule in ``s`` converges fast.
    """
    s = np.linspace(-40.0, 5.0 + 35.0 / (kernel.S - kernel.d), nodes)
    r = np.exp(s)
    f = kernel.C_S * r ** kernel.d / (1.0 + r) ** kernel.S
    if kernel.d == 1:
        return float(2.0 * integrate.trapezoid(f, s))
    return float(_sphere_area(kernel.d) * integrate.trapezoid(f, s))


# -- kernel inequalities -------------------------------------------------------

@dataclass
class KernelInequalityReport:
    constant: float
    ratios: list[float]
    orientation: str
    nodes: int

    def to_dict(self) -> dict:
        return {"constant": self.constant, "orientation": self.orientation,
                "nodes": self.nodes, "ratios": list(self.ratios)}


def _panel_edges(a: float, b: float, width: float, far: float) -> np.ndarray:
    """Panel edges on ``[a - far, b + far]`` growing geometrically away from ``a`` and ``b``.

    Both kernels have a cusp at their centre, so ``a`` and ``b`` must be
    panel edges for the Gauss rule to converge quickly.
    """
    def ladder(length):
        steps = [0.0]
        h = width / 4.0
        while steps[-1] < length:
            steps.append(min(length, steps[-1] + h))
            h *= 1.5
        return np.array(steps)

    left = a - ladder(far)[::-1]
    right = b + ladder(far)
    if b - a > 0:
        half = 0.5 * (b - a)
        up = a + ladder(half)
        down = b - ladder(half)[::-1]
        middle = np.concatenate([up, down[1:]])
    else:
        middle = np.array([a])
    return np.unique(np.concatenate([left, middle, right]))


def _panel_rule(edges: np.ndarray, order: int):
    g, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    z = 0.5 * (hi + lo) + 0.5 * (hi - lo) * g[None, :]
    wt = 0.5 * (hi - lo) * w[None, :]
    return z.ravel(), wt.ravel()


def _ck_ratio(kernel: PolyKernel, model: DiffusionModel, ti, tk, tj, x, y, orientation, refine):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if orientation == "printed":
        c1 = flow_map(model, ti, tk, x)           # backward flow of x, as printed
    else:
        c1 = flow_map(model, ti, tk, x, forward=True)
    w1, w2 = math.sqrt(tk - ti), math.sqrt(tj - tk)
    # the second factor peaks where theta_{tk,tj}(z) = y, i.e. at the forward image of y
    c2 = flow_map(model, tk, tj, y, forward=True)
    # the second factor has width w2 / |d theta/dz| in z
    eps = 1e-4 * max(1.0, abs(float(c2[0])))
    jac = abs(float(flow_map(model, tk, tj, c2 + eps)[0] - flow_map(model, tk, tj, c2 - eps)[0])) / (2 * eps)
    width = min(w1, w2 / max(jac, 1e-12))
    a, b = sorted((float(c1[0]), float(c2[0])))
    edges = _panel_edges(a, b, width, 1e6 * max(1.0, b - a))
    z, jw = _panel_rule(edges, 8 * refine)
    z = z[:, None]
    f1 = kernel.scaled_eval(tk - ti, z - c1)
    f2 = kernel.scaled_eval(tj - tk, y - flow_map(model, tk, tj, z))
    lhs = float(np.sum(f1 * f2 * jw))
    rhs = float(kernel.scaled_eval(tj - ti, (x - flow_map(model, ti, tj, y))[None])[0])
    return lhs / rhs, z.shape[0]


def ck_inequality_constant(kernel: PolyKernel, model: DiffusionModel, samples,
                           orientation: str = "printed", refine: int = 1) -> KernelInequalityReport:
    """Empirical constant of the Chapman-Kolmogorov-type inequality.

    For each sample ``(t_i, t_k, t_j, x, y)`` the integral over ``z`` of the
    product of the two scaled kernels is divided by the direct kernel; the
    maximum ratio is returned.  ``orientation="printed"`` centres the first
    kernel at the backward flow ``theta_{t_i,t_k}(x)``; ``"forward"`` uses the
    forward flow of ``x`` from ``t_i`` to ``t_k``.  ``refine`` multiplies the
    node density.  Only ``d = 1`` is supported.
    """
    if kernel.d != 1 or model.dim != 1:
        raise ValueError("ck_inequality_constant supports d = 1 only")
    if orientation not in ("printed", "forward"):
        raise ValueError("orientation must be 'printed' or 'forward'")
    ratios, nodes = [], 0
    for ti, tk, tj, x, y in samples:
        if not ti < tk < tj:
            raise ValueError("samples need t_i < t_k < t_j")
        r, m = _ck_ratio(kernel, model, ti, tk, tj, x, y, orientation, refine)
        if not math.isfinite(r):
            raise FloatingPointError("quadrature truncation failure")
        ratios.append(r)
        nodes = max(nodes, m)
    return KernelInequalityReport(max(ratios), ratios, orientation, nodes)


@dataclass
class SwapReport:
    constant: float
    reverse_constant: float
    raw_ratio_max: float
    violations: int
    ratios: list[float]

    def to_dict(self) -> dict:
        return {"constant": self.constant, "reverse_constant": self.reverse_constant,
                "raw_ratio_max": self.raw_ratio_max, "violations": self.violations,
                "ratios": list(self.ratios)}


def swap_inequality_check(kernel: PolyKernel, model: DiffusionModel, chain: ChainModel, samples,
                          bound: float | None = None) -> SwapReport:
    """Compare ``Q_S`` centred at the discrete and continuous flows.

    ``samples`` are ``(i, j, x, y)`` lattice indices and points.  The
    constant is ``max Q(x-theta^n) / ((1+|x|^S) Q(x-theta))``; the reverse
    direction swaps the two flows.  When ``bound`` is given, samples whose
    ratio exceeds it are counted as violations.
    """
    fwd, rev, raw = [], [], []
    for i, j, x, y in samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ti, tj = chain.time(i), chain.time(j)
        dt = tj - ti
        th = flow_map(model, ti, tj, y)
        thn = discrete_flow_map(chain, i, j, y)
        weight = 1.0 + float(np.linalg.norm(x)) ** kernel.S
        qn = float(kernel.scaled_eval(dt, (x - thn)[None])[0])
        qc = float(kernel.scaled_eval(dt, (x - th)[None])[0])
        fwd.append(qn / (weight * qc))
        rev.append(qc / (weight * qn))
        raw.append(max(qn / qc, qc / qn))
    violations = sum(r > bound for r in fwd) if bound is not None else 0
    return SwapReport(max(fwd), max(rev), max(raw), violations, fwd)
