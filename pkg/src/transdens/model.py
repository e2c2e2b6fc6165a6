"""Diffusion and Markov-chain models, innovation laws and assumption checks.

Coefficients are plain callables ``f(t, x)`` where ``t`` is a float and ``x``
an array of shape ``(..., d)``.  Drifts return ``(..., d)``, diffusion
matrices ``(..., d, d)``.  Models are frozen dataclasses and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import special, stats

from . import _gauss

Drift = Callable[[float, np.ndarray], np.ndarray]
Diffusion = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RegularityMeta:
    """Declared constants of the regularity assumptions."""

    Lambda: float = 1.0
    A: float = 0.0
    B: float = 0.0
    K: float = 0.0
    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.Lambda >= 1.0:
            raise ValueError(f"Lambda must be >= 1, got {self.Lambda}")
        for name in ("A", "B", "K"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite nonnegative real, got {value}")
        for name in ("gamma", "alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"Hoelder exponent {name} must lie in (0, 1], got {value}")

    @property
    def rate_exponent(self) -> float:
        return min(self.gamma / 2.0, self.alpha, self.beta)


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points with trailing dimension {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class DiffusionModel:
    dim: int
    drift: Drift
    diffusion: Diffusion
    regularity: RegularityMeta = field(default_factory=RegularityMeta)
    name: str = "custom"

    def b(self, t: float, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.broadcast_to(np.asarray(self.drift(float(t), x), dtype=float), x.shape)

    def a(self, t: float, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        out = np.asarray(self.diffusion(float(t), x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.dim, self.dim))

    def sigma(self, t: float, x) -> np.ndarray:
        return _gauss.sym_sqrt(self.a(t, x))


class InnovationFamily:
    """Zero-mean innovation law ``q_{t,x}`` whose covariance is ``cov(t, x)``."""

    name = "abstract"
    is_gaussian = False

    def __init__(self, dim: int, covariance: Diffusion):
        self.dim = dim
        self.covariance = covariance

    def cov(self, t: float, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        out = np.asarray(self.covariance(float(t), x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.dim, self.dim))

    def density(self, t: float, x, z) -> np.ndarray:
        raise NotImplementedError

    def density_with_cov(self, z, cov) -> np.ndarray:
        """Density at ``z`` given the covariance matrix directly."""
        raise NotImplementedError

    def sample(self, t: float, x, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    @property
    def tail_exponent(self) -> float:
        return math.inf


class GaussianInnovations(InnovationFamily):
    name = "gaussian"
    is_gaussian = True

    def density_with_cov(self, z, cov):
        return _gauss.pdf(np.asarray(z, dtype=float), cov)

    def density(self, t, x, z):
        return self.density_with_cov(z, self.cov(t, x))

    def sample(self, t, x, rng):
        x = _as_points(x, self.dim)
        root = _gauss.sym_sqrt(self.cov(t, x))
        g = rng.standard_normal(x.shape)
        return np.einsum("...ij,...j->...i", root, g)


class StudentInnovations(InnovationFamily):
    """Multivariate Student-type law with density tail ``|z|^-S``.

    Degrees of freedom ``nu = S - d``; the scale matrix is rescaled so that
    the covariance equals ``cov(t, x)`` exactly.
    """

    name = "student"

    def __init__(self, dim: int, covariance: Diffusion, S: float | None = None):
        super().__init__(dim, covariance)
        S = float(2 * dim + 8 if S is None else S)
        if not S > 2 * dim + 6:
            raise ValueError(f"tail exponent S must exceed 2d+6={2 * dim + 6}, got {S}")
        self.S = S
        self.nu = S - dim
        d, nu = dim, self.nu
        self._log_norm = (special.gammaln((nu + d) / 2.0) - special.gammaln(nu / 2.0)
                          - 0.5 * d * math.log(nu * math.pi))

    @property
    def tail_exponent(self):
        return self.S

    def density_with_cov(self, z, cov):
        z = np.asarray(z, dtype=float)
        scale = np.asarray(cov) * (self.nu - 2.0) / self.nu
        prec, logdet = _gauss.inv_and_logdet(scale)
        quad = np.einsum("...i,...ij,...j->...", z, prec, z)
        return np.exp(self._log_norm - 0.5 * logdet
                      - 0.5 * (self.nu + self.dim) * np.log1p(quad / self.nu))

    def density(self, t, x, z):
        return self.density_with_cov(z, self.cov(t, x))

    def sample(self, t, x, rng):
        # radial inverse transform: |T|^2 / d ~ F(d, nu) for a standard t vector
        x = _as_points(x, self.dim)
        shape = x.shape[:-1]
        g = rng.standard_normal(shape + (self.dim,))
        direction = g / np.linalg.norm(g, axis=-1, keepdims=True)
        u = rng.random(shape)
        radius = np.sqrt(self.dim * stats.f.ppf(u, self.dim, self.nu))
        scale = self.cov(t, x) * (self.nu - 2.0) / self.nu
        root = _gauss.sym_sqrt(scale)
        return np.einsum("...ij,...j->...i", root, radius[..., None] * direction)


@dataclass(frozen=True)
class ChainModel:
    """Euler-type inhomogeneous chain on the lattice ``t_k = k/n``."""

    n: int
    dim: int
    drift: Drift
    diffusion: Diffusion
    innovations: InnovationFamily
    regularity: RegularityMeta = field(default_factory=RegularityMeta)
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("step count n must be positive")
        if self.innovations.dim != self.dim:
            raise ValueError("innovation family dimension mismatch")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def time(self, k: int) -> float:
        return k / self.n

    def b(self, t: float, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.broadcast_to(np.asarray(self.drift(float(t), x), dtype=float), x.shape)

    def a(self, t: float, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        out = np.asarray(self.diffusion(float(t), x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.dim, self.dim))

    def with_n(self, n: int) -> "ChainModel":
        return ChainModel(n, self.dim, self.drift, self.diffusion, self.innovations,
                          self.regularity, self.name)


def make_innovations(kind: str, dim: int, covariance: Diffusion, S: float | None = None):
    if kind == "gaussian":
        return GaussianInnovations(dim, covariance)
    if kind == "student":
        return StudentInnovations(dim, covariance, S)
    raise ValueError(f"unknown innovation family {kind!r}")


# -- built-in models -------------------------------------------------------

BUILTIN_NAMES = ("constant", "ou", "holder_drift", "perturbed_pair")


def _scalar_matrix(value: float, dim: int) -> Diffusion:
    mat = value * np.eye(dim)

    def diffusion(t, x):
        return np.broadcast_to(mat, x.shape[:-1] + (dim, dim))

    return diffusion


def _linear_drift(kappa: float) -> Drift:
    def drift(t, x):
        return -kappa * x

    return drift


def _zero_drift(t, x):
    return np.zeros_like(x)


def builtin(name: str, params: Mapping[str, Any] | None = None) -> tuple[DiffusionModel, ChainModel]:
    """Return a matched ``(diffusion, chain)`` pair of a named reference model.

    Common parameters: ``d`` (dimension, default 1), ``n`` (chain steps,
    default 16), ``innovations`` (``"gaussian"`` or ``"student"``), ``S``
    (Student tail exponent, default ``2d+8``), ``sigma`` (noise level),
    ``Lambda`` (declared ellipticity bound).

    ``ou`` and ``perturbed_pair`` take ``kappa``; ``holder_drift`` takes
    ``gamma`` and ``kappa``; ``perturbed_pair`` takes ``delta_b`` and
    ``delta_a`` which are realised as exact sup-norm offsets of the chain
    coefficients.
    """
    p = dict(params or {})
    d = int(p.pop("d", 1))
    n = int(p.pop("n", 16))
    kind = str(p.pop("innovations", "gaussian"))
    S = p.pop("S", None)
    sigma = float(p.pop("sigma", 1.0))
    if d < 1:
        raise ValueError("dimension must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive (ellipticity)")
    var = sigma ** 2

    if name == "constant":
        lam = float(p.pop("Lambda", max(var, 1.0 / var)))
        meta = RegularityMeta(Lambda=lam)
        drift, diffusion = _zero_drift, _scalar_matrix(var, d)
        chain_drift, chain_diffusion = drift, diffusion
    elif name == "ou":
        kappa = float(p.pop("kappa", 1.0))
        lam = float(p.pop("Lambda", max(var, 1.0 / var)))
        meta = RegularityMeta(Lambda=lam, B=2.0 * abs(kappa), K=0.0)
        drift, diffusion = _linear_drift(kappa), _scalar_matrix(var, d)
        chain_drift, chain_diffusion = drift, diffusion
    elif name == "holder_drift":
        gamma = float(p.pop("gamma", 0.5))
        kappa = float(p.pop("kappa", 0.5))
        lam = float(p.pop("Lambda", 2.0))
        amp = 0.5 * (1.0 + 1.0 / lam) / 2.0
        meta = RegularityMeta(Lambda=lam, A=2.0 * amp, B=2.0 * abs(kappa), gamma=gamma)
        if 1.0 + amp > lam or 1.0 < 1.0 / lam:
            raise ValueError(f"holder_drift needs Lambda >= {1.0 + amp:.4f} for ellipticity")
        eye = np.eye(d)

        def diffusion(t, x, _g=gamma, _amp=amp):
            r = np.linalg.norm(x, axis=-1)
            level = 1.0 + _amp * np.minimum(1.0, r ** _g)
            return level[..., None, None] * eye

        drift = _linear_drift(kappa)
        chain_drift, chain_diffusion = drift, diffusion
    elif name == "perturbed_pair":
        kappa = float(p.pop("kappa", 1.0))
        delta_b = float(p.pop("delta_b", 0.0))
        delta_a = float(p.pop("delta_a", 0.0))
        if delta_b < 0 or delta_a < 0:
            raise ValueError("discrepancies must be nonnegative")
        lo, hi = min(var, var + delta_a), max(var, var + delta_a)
        lam = float(p.pop("Lambda", max(hi, 1.0 / lo)))
        meta = RegularityMeta(Lambda=lam, B=2.0 * abs(kappa), K=delta_b)
        drift, diffusion = _linear_drift(kappa), _scalar_matrix(var, d)
        shift = np.zeros(d)
        shift[0] = delta_b

        def chain_drift(t, x, _k=kappa, _s=shift):
            return -_k * x + _s

        chain_diffusion = _scalar_matrix(var + delta_a, d)
    else:
        raise ValueError(f"unknown built-in model {name!r}; expected one of {BUILTIN_NAMES}")
    if p:
        raise ValueError(f"unused parameters for {name!r}: {sorted(p)}")

    for label, diff in (("diffusion", diffusion), ("chain diffusion", chain_diffusion)):
        probe = np.linspace(-3.0, 3.0, 61)[:, None] * np.ones(d)
        eig = np.linalg.eigvalsh(diff(0.0, probe))
        if eig.min() < 1.0 / meta.Lambda - 1e-12 or eig.max() > meta.Lambda + 1e-12:
            raise ValueError(f"{name}: {label} violates ellipticity with Lambda={meta.Lambda}")

    model = DiffusionModel(d, drift, diffusion, meta, name)
    innovations = make_innovations(kind, d, chain_diffusion, S)
    chain = ChainModel(n, d, chain_drift, chain_diffusion, innovations, meta, name)
    return model, chain


# -- assumption checks -------------------------------------------------------

@dataclass(frozen=True)
class SamplePlan:
    """Where and how densely to probe coefficients."""

    lo: float = -3.0
    hi: float = 3.0
    points: int = 1000
    seed: int = 0
    fd_step: float = 1e-3


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    observed: float
    declared: float | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[AssumptionCheck]
    empirical: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _spectral_norm(mat: np.ndarray) -> np.ndarray:
    sym = 0.5 * (mat + np.swapaxes(mat, -1, -2))
    return np.abs(np.linalg.eigvalsh(sym)).max(axis=-1)


def _safe_max(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    if not np.all(np.isfinite(values)):
        return math.inf
    return float(values.max())


def _coefficient_checks(b, a, dim, meta, plan, rng, prefix=""):
    checks, emp = [], {}
    lo, hi, m = plan.lo, plan.hi, plan.points
    t = rng.random(m)
    x = rng.uniform(lo, hi, size=(m, dim))
    # second endpoint: half far pairs, half close pairs to probe local moduli
    s = np.where(np.arange(m) % 2 == 0, rng.random(m), np.clip(t + rng.normal(0, 1e-2, m), 0, 1))
    close = x + rng.normal(0.0, 1e-2, size=(m, dim))
    y = np.where((np.arange(m) % 2 == 0)[:, None], rng.uniform(lo, hi, size=(m, dim)), close)

    with np.errstate(all="ignore"):
        try:
            bx = np.stack([b(ti, xi[None])[0] for ti, xi in zip(t, x)])
            by = np.stack([b(si, yi[None])[0] for si, yi in zip(s, y)])
            ax = np.stack([a(ti, xi[None])[0] for ti, xi in zip(t, x)])
            ay = np.stack([a(si, yi[None])[0] for si, yi in zip(s, y)])
            b0 = np.stack([b(ti, np.zeros((1, dim)))[0] for ti in t])
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            return [AssumptionCheck(prefix + "finite", False, math.inf, None, repr(exc))], emp

    finite = all(np.all(np.isfinite(v)) for v in (bx, by, ax, ay, b0))
    checks.append(AssumptionCheck(prefix + "finite", finite, 0.0 if finite else math.inf,
                                  None, "" if finite else "non-finite coefficient value"))
    if not finite:
        return checks, emp

    asym = float(np.abs(ax - np.swapaxes(ax, -1, -2)).max())
    eig = np.linalg.eigvalsh(0.5 * (ax + np.swapaxes(ax, -1, -2)))
    if eig.min() <= 0:
        lam_emp = math.inf
    else:
        lam_emp = float(max(eig.max(), 1.0 / eig.min()))
    emp[prefix + "Lambda"] = lam_emp
    checks.append(AssumptionCheck(prefix + "A1_ellipticity",
                                  lam_emp <= meta.Lambda * (1 + 1e-9) and asym <= 1e-10,
                                  lam_emp, meta.Lambda,
                                  f"min eig {eig.min():.4g}, max eig {eig.max():.4g}, asym {asym:.2g}"))

    dx = np.linalg.norm(x - y, axis=-1)
    dt = np.abs(t - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        a_den = dx ** meta.gamma + dt ** meta.alpha
        a_ratio = np.where(a_den > 0, _spectral_norm(ax - ay) / a_den, 0.0)
        b_den = dx + dt ** meta.beta
        b_ratio = np.where(b_den > 0, np.linalg.norm(bx - by, axis=-1) / b_den, 0.0)
        # pure spatial Lipschitz quotient at equal times drives linear growth
        b_space = np.stack([b(ti, yi[None])[0] for ti, yi in zip(t, y)])
        lip = np.where(dx > 0, np.linalg.norm(bx - b_space, axis=-1) / dx, 0.0)
    A_emp, B_emp, lip_emp = _safe_max(a_ratio), _safe_max(b_ratio), _safe_max(lip)
    emp[prefix + "A"] = A_emp
    emp[prefix + "B"] = B_emp
    checks.append(AssumptionCheck(prefix + "A2_diffusion_hoelder", A_emp <= meta.A * (1 + 1e-9) + 1e-12,
                                  A_emp, meta.A))
    checks.append(AssumptionCheck(prefix + "A2_drift_regularity", B_emp <= meta.B * (1 + 1e-9) + 1e-12,
                                  B_emp, meta.B))

    K_emp = _safe_max(np.linalg.norm(b0, axis=-1))
    growth = _safe_max(np.linalg.norm(bx, axis=-1) / (1.0 + np.linalg.norm(x, axis=-1)))
    emp[prefix + "K"] = K_emp
    emp[prefix + "growth"] = growth
    lin_ok = K_emp <= meta.K * (1 + 1e-9) + 1e-12 and lip_emp <= meta.B * (1 + 1e-9) + 1e-12
    checks.append(AssumptionCheck(prefix + "A3_linear_growth", lin_ok, max(K_emp, lip_emp),
                                  meta.K, f"|b(t,0)| max {K_emp:.4g}, spatial quotient max {lip_emp:.4g}"
                                          f" (B={meta.B:.4g}), |b|/(1+|x|) max {growth:.4g}"))

    # finite-difference smoothness probe; informational unless non-finite
    h = plan.fd_step
    e = np.zeros(dim)
    e[0] = h
    with np.errstate(all="ignore"):
        b2 = np.stack([(b(ti, (xi + e)[None]) - 2 * b(ti, xi[None]) + b(ti, (xi - e)[None]))[0]
                       for ti, xi in zip(t[:200], x[:200])]) / h ** 2
        a2 = np.stack([(a(ti, (xi + e)[None]) - 2 * a(ti, xi[None]) + a(ti, (xi - e)[None]))[0]
                       for ti, xi in zip(t[:200], x[:200])]) / h ** 2
    smooth = _safe_max(np.concatenate([np.abs(b2).ravel(), np.abs(a2).ravel()]))
    emp[prefix + "second_difference"] = smooth
    checks.append(AssumptionCheck(prefix + "A3_smoothness_probe", math.isfinite(smooth), smooth, None,
                                  "max finite-difference second derivative"))
    return checks, emp


def _moment_checks(chain: ChainModel, plan: SamplePlan, rng) -> tuple[list[AssumptionCheck], dict]:
    fam, dim = chain.innovations, chain.dim
    checks, emp = [], {}
    probes = 8
    t = rng.random(probes)
    x = rng.uniform(plan.lo, plan.hi, size=(probes, dim))
    mass_err = mean_err = cov_err = tail_c = 0.0
    from .polykernel import PolyKernel

    S_env = fam.tail_exponent if math.isfinite(fam.tail_exponent) else 2 * dim + 8
    env = PolyKernel(S_env, dim)
    for ti, xi in zip(t, x):
        cov = chain.a(ti, xi[None])[0]
        if dim == 1:
            scale = math.sqrt(cov[0, 0])
            z = np.linspace(-80 * scale, 80 * scale, 64001)[:, None]
            q = fam.density(ti, xi[None], z)
            w = np.full(z.shape[0], z[1, 0] - z[0, 0])
            w[[0, -1]] *= 0.5
            mass = float(np.sum(w * q))
            mean = np.array([np.sum(w * q * z[:, 0])])
            second = np.array([[np.sum(w * q * z[:, 0] ** 2)]])
        else:
            zs = fam.sample(ti, np.broadcast_to(xi, (200000, dim)), rng)
            mass = 1.0
            mean = zs.mean(axis=0)
            second = zs.T @ zs / zs.shape[0]
            z = zs[:2000]
            q = fam.density(ti, xi[None], z)
        mass_err = max(mass_err, abs(mass - 1.0))
        mean_err = max(mean_err, float(np.abs(mean).max()) / math.sqrt(cov.max()))
        cov_err = max(cov_err, float(np.abs(second - cov).max() / np.abs(cov).max()))
        tail_c = max(tail_c, float(np.max(q / env.q_eval(z))))
    tol = 1e-6 if dim == 1 else 2e-2
    emp.update(innovation_mass_error=mass_err, innovation_mean_error=mean_err,
               innovation_cov_error=cov_err, innovation_tail_constant=tail_c)
    checks.append(AssumptionCheck("A4_moments", mass_err <= tol and mean_err <= tol and cov_err <= tol,
                                  max(mass_err, mean_err, cov_err), tol,
                                  "innovation mass/mean/covariance against a^n"))
    checks.append(AssumptionCheck("A4_polynomial_tail", math.isfinite(tail_c), tail_c, None,
                                  f"sup q/Q_S with S={S_env:g}"))

    # regularity of the family in the state variable, scaled by sqrt(n)
    xa = rng.uniform(plan.lo, plan.hi, size=(probes, dim))
    xb = xa + rng.normal(0.0, 0.1, size=(probes, dim))
    z = rng.normal(0.0, 2.0, size=(probes, dim))
    num = np.abs(np.array([fam.density(ti, u[None], zz[None])[0] - fam.density(ti, v[None], zz[None])[0]
                           for ti, u, v, zz in zip(t, xa, xb, z)]))
    reg = _safe_max(num * math.sqrt(chain.n) / (np.linalg.norm(xa - xb, axis=-1) * env.q_eval(z)))
    emp["innovation_state_regularity"] = reg
    checks.append(AssumptionCheck("A4_state_regularity", math.isfinite(reg), reg, None,
                                  "sup sqrt(n)|q_x - q_y| / (|x-y| Q_S)"))
    return checks, emp


def validate(model: DiffusionModel | ChainModel, plan: SamplePlan | None = None,
             reference: DiffusionModel | None = None) -> ValidationReport:
    """Probe the regularity assumptions by sampling on ``plan``'s box.

    Failures, including non-finite coefficient values, are reported as
    failed checks rather than raised.  Passing a ``reference`` diffusion
    together with a chain adds the sup-discrepancy estimates.
    """
    plan = plan or SamplePlan()
    rng = np.random.default_rng(plan.seed)
    checks, emp = _coefficient_checks(model.b, model.a, model.dim, model.regularity, plan, rng)
    if isinstance(model, ChainModel):
        checks.append(AssumptionCheck("A2_B_below_n", model.regularity.B < model.n,
                                      model.regularity.B, float(model.n),
                                      "declared Lipschitz constant must stay below n"))
        if all(c.passed for c in checks if c.name in ("finite", "A1_ellipticity")):
            more, memp = _moment_checks(model, plan, rng)
            checks += more
            emp.update(memp)
        if reference is not None:
            db, da = discrepancies(reference, model, plan)
            emp["Delta_b"], emp["Delta_a"] = db, da
            checks.append(AssumptionCheck("A5_discrepancy", math.isfinite(db) and math.isfinite(da),
                                          max(db, da), None, f"Delta_b={db:.4g}, Delta_a={da:.4g}"))
    return ValidationReport(checks, emp)


def discrepancies(model: DiffusionModel, chain: ChainModel, plan: SamplePlan | None = None,
                  points: int | None = None) -> tuple[float, float]:
    """Sampled sup-norm distances ``sup|b - b^n|`` and ``sup|a - a^n|``."""
    plan = plan or SamplePlan()
    m = points or max(plan.points, 10_000)
    rng = np.random.default_rng(plan.seed + 1)
    ts = rng.random(m)
    xs = rng.uniform(plan.lo, plan.hi, size=(m, model.dim))
    # coefficients are vectorised in x for fixed t; bucket times to keep calls cheap
    db = da = 0.0
    for chunk_t, chunk_x in zip(np.array_split(ts, 50), np.array_split(xs, 50)):
        t0 = float(chunk_t[0])
        db = max(db, _safe_max(np.linalg.norm(model.b(t0, chunk_x) - chain.b(t0, chunk_x), axis=-1)))
        da = max(da, _safe_max(_spectral_norm(model.a(t0, chunk_x) - chain.a(t0, chunk_x))))
    return db, da
