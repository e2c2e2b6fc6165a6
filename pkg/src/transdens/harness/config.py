"""Experiment configuration loaded from TOML.

Schema (every key optional; defaults shown)::

    [model]
    name = "ou"                       # constant | ou | holder_drift | perturbed_pair
    params = { innovations = "student", S = 10.0 }

    [rate]
    n = [8, 16, 32, 64, 128]          # strictly increasing
    t_i = 0.0                         # must be a lattice time for every n
    t_j = 1.0
    probe_x = [-1.0, 0.0, 1.0]
    probe_y = [-1.0, 0.0, 1.0]
    box = [-3.0, 3.0]                 # validation box; probes must lie inside

    [series]
    R = 3
    time_nodes = 40
    space_nodes = 61
    inner_nodes = 40
    radius = 9.0
    tail_tolerance = 0.05             # relative tail above which a reference is inconclusive

    [run]
    seed = 0
    out = "out"
    threads = 1
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..model import BUILTIN_NAMES, builtin
from ..parametrix import QuadSpec


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model_name: str = "ou"
    model_params: dict = field(default_factory=lambda: {"innovations": "student", "S": 10.0})
    n_values: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    t_i: float = 0.0
    t_j: float = 1.0
    probe_x: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    probe_y: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    box: tuple[float, float] = (-3.0, 3.0)
    R: int = 3
    quad: QuadSpec = field(default_factory=QuadSpec)
    tail_tolerance: float = 0.05
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model_name not in BUILTIN_NAMES:
            raise ConfigError(f"unknown model {self.model_name!r}")
        ns = list(self.n_values)
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 1:
            raise ConfigError("n list must be positive and strictly increasing")
        if not 0.0 <= self.t_i < self.t_j <= 1.0:
            raise ConfigError("need 0 <= t_i < t_j <= 1")
        for n in ns:
            for t in (self.t_i, self.t_j):
                if abs(t * n - round(t * n)) > 1e-9:
                    raise ConfigError(f"time {t} is not on the lattice for n={n}")
        lo, hi = self.box
        if not lo < hi:
            raise ConfigError("validation box must have lo < hi")
        for p in list(self.probe_x) + list(self.probe_y):
            if not lo <= p <= hi:
                raise ConfigError(f"probe point {p} lies outside the validation box {self.box}")
        if not 0 <= self.R <= 4:
            raise ConfigError("series order R must be in 0..4")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            builtin(self.model_name, {**self.model_params, "n": ns[0]})
        except ValueError as exc:
            raise ConfigError(f"model parameters rejected: {exc}") from exc

    def pair(self, n: int):
        return builtin(self.model_name, {**self.model_params, "n": n})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["box"] = list(self.box)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data["quad"] = QuadSpec(**data.get("quad", {}))
        data["box"] = tuple(data.get("box", (-3.0, 3.0)))
        return cls(**data)


def _pop_section(doc: dict, name: str) -> dict:
    sec = doc.pop(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(sec)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML file (or defaults when ``path`` is None) and apply overrides."""
    doc: dict = {}
    if path is not None:
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    kw: dict = {}
    model = _pop_section(doc, "model")
    if "name" in model:
        kw["model_name"] = str(model.pop("name"))
    if "params" in model:
        kw["model_params"] = dict(model.pop("params"))
    rate = _pop_section(doc, "rate")
    for key, dest in (("n", "n_values"), ("t_i", "t_i"), ("t_j", "t_j"), ("probe_x", "probe_x"),
                      ("probe_y", "probe_y"), ("box", "box")):
        if key in rate:
            kw[dest] = rate.pop(key)
    if "box" in kw:
        kw["box"] = tuple(float(v) for v in kw["box"])
    series = _pop_section(doc, "series")
    if "R" in series:
        kw["R"] = int(series.pop("R"))
    if "tail_tolerance" in series:
        kw["tail_tolerance"] = float(series.pop("tail_tolerance"))
    quad_keys = {k: series.pop(k) for k in ("time_nodes", "space_nodes", "inner_nodes", "radius", "grading")
                 if k in series}
    run = _pop_section(doc, "run")
    for key, dest in (("seed", "seed"), ("out", "out_dir"), ("threads", "threads")):
        if key in run:
            kw[dest] = run.pop(key)
    leftovers = {f"[{name}] {k}" for name, sec in (("model", model), ("rate", rate), ("series", series),
                                                    ("run", run)) for k in sec}
    leftovers |= {f"[{k}]" for k in doc}
    if leftovers:
        raise ConfigError(f"unknown config keys: {sorted(leftovers)}")
    for key, value in (overrides or {}).items():
        if value is not None:
            kw[key] = value
    try:
        if quad_keys:
            kw["quad"] = QuadSpec(**quad_keys)
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
