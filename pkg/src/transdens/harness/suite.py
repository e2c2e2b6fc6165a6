"""Invariant checks for every module, collected into one report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import chain as chain_mod
from ..flow import discrete_flow_map, flow_discrepancy, flow_map
from ..frozen import frozen_density, frozen_derivative, frozen_params
from ..model import BUILTIN_NAMES, SamplePlan, builtin, discrepancies, validate
from ..parametrix import QuadSpec, kernel_H, series
from ..polykernel import PolyKernel, ck_inequality_constant, radial_mass, swap_inequality_check
from .experiments import exact_density, fit_slope

MODULES = ("model", "flow", "frozen", "parametrix", "chain", "polykernel")


@dataclass
class CheckResult:
    module: str
    name: str
    passed: bool
    measured: float
    threshold: float | None = None
    detail: str = ""


@dataclass
class SuiteReport:
    seed: int
    scope: list[str]
    model: str
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteReport":
        data = dict(data)
        data.pop("passed", None)
        data["results"] = [CheckResult(**r) for r in data["results"]]
        return cls(**data)


def _res(module, name, ok, measured, threshold=None, detail=""):
    return CheckResult(module, name, bool(ok), float(measured),
                       None if threshold is None else float(threshold), detail)


# -- model -------------------------------------------------------------------------

def _model_checks(name, params, rng):
    out = []
    plan = SamplePlan(points=1000, seed=int(rng.integers(2 ** 31)))
    for pair in BUILTIN_NAMES:
        model, chain = builtin(pair, {"n": 16})
        rep_m = validate(model, plan)
        rep_c = validate(chain, plan, reference=model)
        bad = [c.name for c in rep_m.checks + rep_c.checks if not c.passed]
        out.append(_res("model", f"validate_{pair}", not bad, len(bad), 0, ", ".join(bad)))
    target_b, target_a = 0.05, 0.1
    model, chain = builtin("perturbed_pair", {"delta_b": target_b, "delta_a": target_a})
    db, da = discrepancies(model, chain, points=10_000)
    err = max(abs(db / target_b - 1), abs(da / target_a - 1))
    out.append(_res("model", "perturbed_discrepancy", err <= 0.05, err, 0.05,
                    f"Delta_b={db:.6g}, Delta_a={da:.6g}"))
    return out


# -- flow --------------------------------------------------------------------------

def _flow_checks(name, params, rng):
    model, chain = builtin(name, {**params, "n": 64})
    out = []
    worst_c = worst_d = 0.0
    for _ in range(20):
        ti, tk, tj = np.sort(rng.choice(65, 3, replace=False)) / 64.0
        y = rng.uniform(-2, 2, size=(1, model.dim))
        direct = flow_map(model, ti, tj, y)
        composed = flow_map(model, ti, tk, flow_map(model, tk, tj, y))
        worst_c = max(worst_c, float(np.abs(direct - composed).max()))
        i, k, j = (round(v * 64) for v in (ti, tk, tj))
        dd = discrete_flow_map(chain, i, j, y)
        dc = discrete_flow_map(chain, i, k, discrete_flow_map(chain, k, j, y))
        worst_d = max(worst_d, float(np.abs(dd - dc).max()))
    out.append(_res("flow", "semigroup_continuous", worst_c <= 1e-7, worst_c, 1e-7))
    out.append(_res("flow", "semigroup_discrete", worst_d <= 1e-7, worst_d, 1e-7))

    m = 1000
    ts = np.sort(rng.uniform(0, 1, size=(m, 2)), axis=1)
    y1 = rng.uniform(-3, 3, size=(m, model.dim))
    y2 = y1 + rng.normal(scale=0.5, size=y1.shape)
    lip = grow_lo = grow_hi = inv = 0.0
    bound = math.exp(model.regularity.B)
    for (t, s), a, b in zip(ts, y1, y2):
        if s - t < 1e-3:
            continue
        fa, fb = flow_map(model, t, s, np.stack([a, b]))
        lip = max(lip, float(np.linalg.norm(fa - fb) / np.linalg.norm(a - b)))
        scale = max(float(np.linalg.norm(b)), s - t)
        if np.linalg.norm(b) >= (s - t) / 10:
            grow_hi = max(grow_hi, float(np.linalg.norm(fb)) / scale)
            grow_lo = max(grow_lo, scale / max(float(np.linalg.norm(fb)), 1e-300))
        # near-inverse comparability of forward and backward flows
        num = float(np.linalg.norm(flow_map(model, t, s, a[None], forward=True)[0] - b))
        den = float(np.linalg.norm(flow_map(model, t, s, b[None])[0] - a))
        if num > 0 and den > 0:
            inv = max(inv, num / den, den / num)
    out.append(_res("flow", "lipschitz", lip <= bound * (1 + 1e-9), lip, bound))
    grow = max(grow_lo, grow_hi)
    out.append(_res("flow", "linear_growth", math.isfinite(grow), grow, None,
                    f"upper={grow_hi:.4g}, lower={grow_lo:.4g}"))
    out.append(_res("flow", "forward_backward_comparability", math.isfinite(inv), inv))

    if name == "ou" or (name == "perturbed_pair" and params.get("delta_b", 0) == 0):
        ns = [10, 20, 40, 80]
        disc = []
        for n in ns:
            _, ch = builtin(name, {**params, "n": n})
            disc.append(flow_discrepancy(model, ch, 0, n, [1.0]))
        slope = fit_slope(ns, disc)
        out.append(_res("flow", "discrepancy_slope", slope is not None and abs(slope + 1) <= 0.15,
                        slope if slope is not None else math.nan, -1.0))
    return out


# -- frozen ------------------------------------------------------------------------

def _frozen_checks(name, params, rng):
    out = []
    for pair in BUILTIN_NAMES:
        model, _ = builtin(pair)
        worst = 0.0
        for t, s in ((0.0, 1.0), (0.25, 0.5)):
            y = rng.uniform(-1.5, 1.5)
            th = frozen_params(model, t, s, [0.0], [y]).theta[0]
            width = math.sqrt(model.regularity.Lambda * (s - t))
            xs = np.linspace(th - 12 * width, th + 12 * width, 4001)[:, None]
            mass = float(np.trapezoid(frozen_density(model, t, s, xs, [y]), xs[:, 0]))
            worst = max(worst, abs(mass - 1.0))
        out.append(_res("frozen", f"normalization_in_x_{pair}", worst <= 1e-3, worst, 1e-3))
    # in the anchor variable the mass is 1/|det D theta|, equal to exp(-kappa dt) for OU
    model, _ = builtin("ou")
    ys = np.linspace(-8, 8, 4001)
    vals = np.array([frozen_density(model, 0.0, 1.0, [0.3], [y]) for y in ys[::10]])
    mass = float(np.trapezoid(vals, ys[::10]))
    err = abs(mass - math.exp(-1.0))
    out.append(_res("frozen", "anchor_mass_ou", err <= 1e-3, err, 1e-3, f"mass={mass:.6f}"))

    model, _ = builtin(name, params)
    worst_fd, c_poly, c_gauss = 0.0, 0.0, 0.0
    kern = {k: PolyKernel(10 - 1 - 1 - k, 1) for k in range(5)}
    # 25 anchors x orders 1..4 = 100 finite-difference comparisons
    for _ in range(25):
        t = rng.uniform(0, 0.5)
        s = t + rng.uniform(0.2, 0.5)
        y = rng.uniform(-1.5, 1.5)
        fg = frozen_params(model, t, s, [0.0], [y])
        sd = math.sqrt(fg.cov[0, 0])
        x = fg.theta[0] + rng.uniform(-2, 2) * sd
        h = 1e-3 * sd
        for k in range(5):
            exact = frozen_derivative(model, t, s, [x], [y], [k])
            if k:
                lo = frozen_derivative(model, t, s, [x - h], [y], [k - 1])
                hi = frozen_derivative(model, t, s, [x + h], [y], [k - 1])
                fd = (hi - lo) / (2 * h)
                scale = max(abs(exact), frozen_density(model, t, s, [x], [y]) / sd ** k)
                worst_fd = max(worst_fd, abs(fd - exact) / scale)
            dt = s - t
            z = (x - fg.theta[0]) / math.sqrt(dt)
            c_poly = max(c_poly, abs(exact) * dt ** (k / 2) / float(kern[k].scaled_eval(dt, [[x - fg.theta[0]]])[0]))
            g = dt ** (-(k + 1) / 2) * math.exp(-z * z / 4.0)
            c_gauss = max(c_gauss, abs(exact) / g)
    out.append(_res("frozen", "derivative_vs_fd", worst_fd <= 1e-5, worst_fd, 1e-5))
    out.append(_res("frozen", "derivative_poly_envelope", math.isfinite(c_poly), c_poly))
    out.append(_res("frozen", "gaussian_majorant", math.isfinite(c_gauss), c_gauss))
    return out


# -- parametrix --------------------------------------------------------------------

def _parametrix_checks(name, params, rng, quick):
    out = []
    model, _ = builtin(name, params)
    if name == "constant":
        sa = series(model, 0.0, 1.0, [0.2], [-0.4], 3)
        worst = max(abs(v) for v in sa.terms[1:])
        out.append(_res("parametrix", "constant_terms_zero", worst == 0.0, worst, 0.0))

    # mass of H in the anchor variable: 0 for constant coefficients, exp(-dt) for OU
    for pair, expect in (("constant", lambda dt: 0.0), ("ou", lambda dt: math.exp(-dt))):
        m, _ = builtin(pair)
        worst = 0.0
        for t, s, x in ((0.0, 1.0, 0.3), (0.2, 0.6, -0.5)):
            ys = np.linspace(-10, 10, 1201)
            vals = np.array([kernel_H(m, t, s, [x], [y], 64) for y in ys])
            worst = max(worst, abs(float(np.trapezoid(vals, ys)) - expect(s - t)))
        out.append(_res("parametrix", f"H_anchor_mass_{pair}", worst <= 1e-3, worst, 1e-3))

    gamma, lam = model.regularity.gamma, model.regularity.Lambda
    c_env = 0.0
    for _ in range(30):
        t = rng.uniform(0, 0.7)
        s = t + rng.uniform(0.05, 0.3)
        y = rng.uniform(-1.5, 1.5)
        fg = frozen_params(model, t, s, [0.0], [y], 64)
        x = fg.theta[0] + rng.uniform(-3, 3) * math.sqrt(s - t)
        hv = abs(kernel_H(model, t, s, [x], [y], 64))
        majorant = math.exp(-(x - fg.theta[0]) ** 2 / (4 * lam * (s - t))) / math.sqrt(4 * math.pi * lam * (s - t))
        c_env = max(c_env, hv * (s - t) ** (1 - gamma / 2) / majorant)
    out.append(_res("parametrix", "kernel_envelope", math.isfinite(c_env), c_env))

    q = QuadSpec(time_nodes=20, space_nodes=41, inner_nodes=24) if quick else QuadSpec()
    a = series(model, 0.0, 0.5, [0.1], [0.2], 2, q).value
    b = series(model, 0.0, 0.5, [0.1], [0.2], 2, q.refined(2)).value
    rel = abs(a - b) / abs(b)
    out.append(_res("parametrix", "self_consistency", rel < 5e-3, rel, 5e-3))

    for pair in ("ou", "constant"):
        m, _ = builtin(pair)
        probes = [(0.0, 0.0)] if quick else [(x, y) for x in (-1, 0, 1) for y in (-1, 0, 1)]
        worst, ok = 0.0, True
        for x, y in probes:
            sa = series(m, 0.0, 1.0, [x], [y], 3, q)
            ex = exact_density(m, 0.0, 1.0, x, y)
            rel = abs(sa.value - ex) / ex
            tol = max(2 * sa.tail_estimate / ex, 5e-3)
            ok &= rel <= tol
            worst = max(worst, rel / tol)
        out.append(_res("parametrix", f"oracle_{pair}", ok, worst, 1.0, "relative error over tolerance"))
    return out


# -- chain -------------------------------------------------------------------------

def _chain_checks(name, params, rng, quick):
    out = []
    n = 16
    model, ch = builtin(name, {**params, "n": n})
    x0 = np.array([0.2])
    grid = chain_mod.default_grid(ch, 0, n, x0, radius=10.0)
    dens = chain_mod.chain_density_grid(ch, 0, n, x0, grid)
    masses = dens.meta["masses"]
    ok = all(0.98 <= mval <= 1.001 for mval in masses)
    out.append(_res("chain", "mass_conservation", ok, min(masses), 0.98))

    k = n // 2
    mid = chain_mod.chain_density_grid(ch, 0, k, x0, grid)
    pts, wts = grid.points(), grid.weights()
    # second leg from every other node, composed with a trapezoid rule of spacing 2h
    starts = pts[::2]
    leg = chain_mod.one_step_density(ch, k, starts[:, None, :], pts[None, :, :])
    for step in range(k + 1, n):
        leg = (leg * wts) @ chain_mod._transition_matrix(ch, step, pts)
    coarse = np.full(len(starts), 2 * grid.spacing[0])
    coarse[[0, -1]] *= 0.5
    comp = (mid.values.ravel()[::2] * coarse) @ leg
    direct = dens.values.ravel()
    peak = direct > 0.05
    rel = float(np.max(np.abs(comp[peak] - direct[peak]) / direct[peak]))
    out.append(_res("chain", "markov_consistency", rel <= 1e-3, rel, 1e-3))

    paths = 200_000 if quick else 1_000_000
    sim = chain_mod.simulate(ch, x0, n, seed=int(rng.integers(2 ** 63)), paths=paths)
    ends = sim.states[-1][:, 0]
    bw = 0.1
    probes = np.linspace(-1.5, 1.5, 9) + float(np.median(ends))
    kde = np.array([np.mean(np.exp(-0.5 * ((p - ends) / bw) ** 2)) / (bw * math.sqrt(2 * math.pi))
                    for p in probes])
    # compare with the exact density smoothed by the same kernel
    smooth = np.array([np.sum(direct * wts * np.exp(-0.5 * ((p - pts[:, 0]) / bw) ** 2))
                       / (bw * math.sqrt(2 * math.pi)) for p in probes])
    second_moment = np.array([np.mean(np.exp(-((p - ends) / bw) ** 2)) / (2 * math.pi * bw ** 2)
                              for p in probes])
    se = np.sqrt(np.maximum(second_moment - kde ** 2, 0) / paths)
    z = float(np.max(np.abs(kde - smooth) / se))
    out.append(_res("chain", "monte_carlo_agreement", z <= 3.0, z, 3.0, f"{paths} paths"))

    nn = 8 if quick else 16
    _, ch2 = builtin(name, {**params, "n": nn})
    g2 = chain_mod.default_grid(ch2, 0, nn, x0)
    worst = 0.0
    for y in (-0.5, 0.2, 0.8):
        sa = chain_mod.discrete_series(ch2, 0, nn, x0, [y], nn, g2)
        ref = float(chain_mod.chain_density(ch2, 0, nn, x0, [[y]], g2)[0])
        if ref > 0.05:
            worst = max(worst, abs(sa.value - ref) / ref)
    out.append(_res("chain", "discrete_series_identity", worst <= 0.01, worst, 0.01))
    return out


# -- polykernel --------------------------------------------------------------------

def _polykernel_checks(name, params, rng, quick):
    out = []
    worst = 0.0
    for S, d in ((9.0, 1), (10.0, 1), (12.0, 2), (13.0, 3)):
        worst = max(worst, abs(radial_mass(PolyKernel(S, d)) - 1.0))
    out.append(_res("polykernel", "mass", worst <= 1e-6, worst, 1e-6))
    k9 = PolyKernel(9.0, 1)
    r = np.linspace(0, 50, 2001)[:, None]
    mono = bool(np.all(np.diff(k9.q_eval(r)) < 0))
    raw = np.all((1 + r[1:, 0]) ** -10.0 <= (1 + r[1:, 0]) ** -9.0)
    out.append(_res("polykernel", "monotonicity", mono and raw, float(mono and raw), 1.0))

    model, chain = builtin(name, {**params, "n": 64})
    count = 20 if quick else 100
    samples = []
    for _ in range(count):
        ti, tk, tj = np.sort(rng.uniform(0, 1, 3))
        if tk - ti < 0.02 or tj - tk < 0.02:
            ti, tk, tj = 0.1, 0.5, 0.9
        samples.append((ti, tk, tj, rng.uniform(-2, 2), rng.uniform(-2, 2)))
    for orient in ("printed", "forward"):
        c1 = ck_inequality_constant(k9, model, samples, orient, refine=1)
        c2 = ck_inequality_constant(k9, model, samples, orient, refine=2)
        drift = max(abs(a / b - 1) for a, b in zip(c1.ratios, c2.ratios))
        ok = math.isfinite(c1.constant) and c1.constant >= 1.0 and drift < 0.01
        out.append(_res("polykernel", f"ck_constant_{orient}", ok, c1.constant, None,
                        f"node-doubling drift {drift:.2e}"))

    raws = []
    for n in (16, 64, 256):
        _, ch = builtin(name, {**params, "n": n})
        smp = [(0, n, rng.uniform(-2, 2), rng.uniform(-2, 2)) for _ in range(20)]
        raws.append(swap_inequality_check(k9, model, ch, smp).raw_ratio_max)
    ok = all(b <= a + 1e-12 for a, b in zip(raws, raws[1:])) and abs(raws[-1] - 1) < 0.05
    out.append(_res("polykernel", "swap_constant_to_one", ok, raws[-1], 1.0,
                    ", ".join(f"{v:.4f}" for v in raws)))
    return out


def run_invariant_suite(scope=("all",), seed: int = 0, model: str = "ou", params: dict | None = None,
                        quick: bool = False) -> SuiteReport:
    """Run the invariant checks of the selected modules on the chosen built-in model."""
    scope = list(scope)
    if "all" in scope:
        scope = list(MODULES)
    unknown = set(scope) - set(MODULES)
    if unknown:
        raise ValueError(f"unknown modules in scope: {sorted(unknown)}")
    params = dict(params or {})
    report = SuiteReport(seed, scope, model)
    for module in scope:
        rng = np.random.default_rng([seed, MODULES.index(module)])
        if module == "model":
            res = _model_checks(model, params, rng)
        elif module == "flow":
            res = _flow_checks(model, params, rng)
        elif module == "frozen":
            res = _frozen_checks(model, params, rng)
        elif module == "parametrix":
            res = _parametrix_checks(model, params, rng, quick)
        elif module == "chain":
            res = _chain_checks(model, params, rng, quick)
        else:
            res = _polykernel_checks(model, params, rng, quick)
        report.results.extend(res)
    return report
