"""Run configuration: INI-style files with dotted section names.

Example::

    [grid]
    dim = 1
    cells = 64
    lengths = 1.0

    [scheme]
    mu = 0.1
    nu = 0.1
    eps = 0.05
    tau = auto        # tau0 / 2
    T = 1.0

    [initial.eta]
    profile = cosine
    offset = 0.5
    amplitude = 0.4

Every key has a default, so an empty file is a valid configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ModelError
from .grid import ScalarField, make_grid
from .model import (
    DEFAULT_COEFFICIENTS,
    ModelFns,
    SchemeParams,
    choose_truncation_level,
    polynomial_model,
)
from .problem import Problem
from .profiles import make_forcing, make_profile
from .stepper import max_stable_tau

__all__ = [
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "config_to_mapping",
    "config_from_mapping",
    "override",
    "build_problem",
    "validate",
]


@dataclass(frozen=True)
class GridSpec:
    dim: int = 1
    cells: tuple = (64,)
    lengths: tuple = (1.0,)


@dataclass(frozen=True)
class ModelSpec:
    name: str = "default"
    g: tuple = DEFAULT_COEFFICIENTS[0]
    alpha: tuple = DEFAULT_COEFFICIENTS[1]
    alpha0: tuple = DEFAULT_COEFFICIENTS[2]
    M: float | None = None


@dataclass(frozen=True)
class SchemeSpec:
    mu: float = 0.1
    nu: float = 0.1
    eps: float = 0.05
    tau: float | None = None
    T: float = 1.0
    tol_newton: float = 1e-9
    tol_fixed_point: float = 1e-10
    max_newton_iters: int = 50
    max_fp_iters: int = 500


@dataclass(frozen=True)
class ProfileSpec:
    profile: str = "cosine"
    value: float = 0.0
    offset: float = 0.0
    amplitude: float = 1.0
    mode: int = 1
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class ForcingSpec:
    profile: str = "zero"
    value: float = 0.0
    amplitude: float = 1.0
    frequency: float = 1.0
    shape: str = "uniform"


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "output"
    snapshot_every: int = 10
    ledger: bool = True


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    eta: ProfileSpec = field(default_factory=lambda: ProfileSpec(offset=0.5, amplitude=0.4))
    theta: ProfileSpec = field(default_factory=ProfileSpec)
    u: ForcingSpec = field(default_factory=ForcingSpec)
    v: ForcingSpec = field(default_factory=ForcingSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    run: RunSpec = field(default_factory=RunSpec)

    @property
    def seed(self) -> int:
        return self.run.seed


SECTIONS = {
    "grid": "grid",
    "model": "model",
    "scheme": "scheme",
    "initial.eta": "eta",
    "initial.theta": "theta",
    "forcing.u": "u",
    "forcing.v": "v",
    "output": "output",
    "run": "run",
}
_AUTO = {("model", "M"), ("scheme", "tau")}
_CHOICES = {
    ("model", "name"): ("default", "polynomial"),
    ("initial.eta", "profile"): ("constant", "cosine", "random"),
    ("initial.theta", "profile"): ("constant", "cosine", "random"),
    ("forcing.u", "profile"): ("zero", "constant", "sine", "ramp"),
    ("forcing.v", "profile"): ("zero", "constant", "sine", "ramp"),
    ("forcing.u", "shape"): ("uniform", "cosine"),
    ("forcing.v", "shape"): ("uniform", "cosine"),
}


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(section: str, key: str, raw: str, default):
    raw = raw.strip()
    if (section, key) in _AUTO and raw.lower() == "auto":
        return None
    if (section, key) in _AUTO or isinstance(default, float):
        return float(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, tuple):
        parts = [p for p in re.split(r"[,\s]+", raw) if p]
        elem = type(default[0]) if default else float
        return tuple(elem(p) for p in parts)
    choices = _CHOICES.get((section, key))
    if choices and raw not in choices:
        raise ValueError(f"must be one of {', '.join(choices)}")
    return raw


def config_to_mapping(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for section, attr in SECTIONS.items():
        spec = getattr(cfg, attr)
        for f in dataclasses.fields(spec):
            out[f"{section}.{f.name}"] = _fmt(getattr(spec, f.name))
    return out


def config_from_mapping(mapping: dict[str, str], lines: dict[str, int] | None = None) -> RunConfig:
    """Typed config from ``{"section.key": "raw value"}``; collects every conversion error."""
    base = RunConfig()
    lines = lines or {}
    problems = []
    updates: dict[str, dict] = {attr: {} for attr in SECTIONS.values()}
    for dotted, raw in mapping.items():
        section, _, key = dotted.rpartition(".")
        where = f"line {lines[dotted]}: " if dotted in lines else ""
        attr = SECTIONS.get(section)
        if attr is None:
            problems.append(f"{where}unknown section [{section}]")
            continue
        spec = getattr(base, attr)
        names = {f.name for f in dataclasses.fields(spec)}
        if key not in names:
            problems.append(f"{where}unknown key {dotted!r}")
            continue
        try:
            updates[attr][key] = _convert(section, key, raw, getattr(spec, key))
        except ValueError as exc:
            problems.append(f"{where}{dotted}: cannot use {raw!r} ({exc})")
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    return RunConfig(**{
        attr: dataclasses.replace(getattr(base, attr), **vals) for attr, vals in updates.items()
    })


def _line_numbers(text: str) -> dict[str, int]:
    out, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
        elif section and s and s[0] not in "#;":
            m = re.match(r"([^=:]+?)\s*[=:]", s)
            if m:
                out[f"{section}.{m.group(1).strip()}"] = n
    return out


def parse_config_text(text: str, validate_model: bool = True) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        msg = f"line {lineno}: {exc.message}" if lineno else str(exc)
        raise ConfigurationError(f"parse error: {msg}", [msg]) from exc
    mapping = {f"{s}.{k}": v for s in cp.sections() for k, v in cp.items(s)}
    cfg = config_from_mapping(mapping, _line_numbers(text))
    if validate_model:
        validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    """Read, type-check and validate a config file (all violations reported together)."""
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: RunConfig) -> str:
    out = []
    for section, attr in SECTIONS.items():
        spec = getattr(cfg, attr)
        out.append(f"[{section}]")
        for f in dataclasses.fields(spec):
            out.append(f"{f.name} = {_fmt(getattr(spec, f.name))}")
        out.append("")
    return "\n".join(out)


def override(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    """Set one dotted key from its textual value and re-validate."""
    mapping = config_to_mapping(cfg)
    if key not in mapping:
        raise ConfigurationError(f"unknown key {key!r}")
    mapping[key] = raw
    new = config_from_mapping(mapping)
    validate(new)
    return new


# -- turning a config into a Problem ------------------------------------------------


@dataclass(frozen=True)
class BuildInfo:
    M: float
    tau: float
    tau1: float
    tau0: float
    u_sup: float


def _model(spec: ModelSpec, M: float) -> ModelFns:
    if spec.name == "default":
        return polynomial_model(*DEFAULT_COEFFICIENTS, M=M, name="default")
    if len(spec.g) != 2 or len(spec.alpha) != 3 or len(spec.alpha0) != 3:
        raise ModelError("polynomial model needs 2 coefficients for g and 3 each for alpha, alpha0")
    return polynomial_model(spec.g, spec.alpha, spec.alpha0, M=M, name="polynomial")


def _profile(grid, spec: ProfileSpec, seed: int) -> ScalarField:
    return make_profile(grid, spec.profile, value=spec.value, offset=spec.offset,
                        amplitude=spec.amplitude, mode=spec.mode, low=spec.low,
                        high=spec.high, seed=seed)


def _forcing(grid, spec: ForcingSpec):
    return make_forcing(grid, spec.profile, value=spec.value, amplitude=spec.amplitude,
                        frequency=spec.frequency, shape=spec.shape)


def build_problem(cfg: RunConfig) -> tuple[Problem, BuildInfo]:
    """Resolve ``auto`` entries and assemble the :class:`Problem`.

    Raises :class:`ConfigurationError` listing every violated constraint.
    """
    problems: list[str] = []

    def attempt(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ConfigurationError,) as exc:
            problems.extend(exc.violations)
        except (ModelError, ValueError) as exc:
            problems.append(str(exc))
        return None

    grid = attempt(make_grid, cfg.grid.dim, cfg.grid.cells, cfg.grid.lengths)
    s = cfg.scheme
    probe_tau = s.tau if s.tau is not None else 0.5
    params = attempt(SchemeParams, s.mu, s.nu, s.eps, probe_tau, s.T, s.tol_newton,
                     s.tol_fixed_point, s.max_newton_iters, s.max_fp_iters)
    fns = attempt(_model, cfg.model, 1.0 if cfg.model.M is None else cfg.model.M)
    if cfg.output.snapshot_every < 1:
        problems.append("output.snapshot_every must be at least 1")
    if grid is None or fns is None or params is None:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)

    eta0 = attempt(_profile, grid, cfg.eta, cfg.seed)
    theta0 = attempt(_profile, grid, cfg.theta, cfg.seed + 1)
    u_fn = attempt(_forcing, grid, cfg.u)
    v_fn = attempt(_forcing, grid, cfg.v)
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)

    # lip g is M-independent for the built-in family, so tau can be fixed before M
    tau1, tau0 = max_stable_tau(fns, s.mu)
    tau = s.tau if s.tau is not None else tau0 / 2
    if s.tau is None and not 0 < tau < 1:
        tau = 0.5
    problem = Problem(grid, fns, params.replace(tau=tau), eta0, theta0, u_fn, v_fn)
    u_sup = problem.forcing().u_sup
    if cfg.model.M is None:
        M = attempt(choose_truncation_level, eta0, u_sup, fns)
        if M is None:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)
        fns = fns.with_truncation(M)
    else:
        M = fns.M
        sup0 = float(np.max(np.abs(eta0.values)))
        if sup0 > M:
            problems.append(f"truncation rule: M = {M:g} must be >= |eta0|_inf = {sup0:.6g}")
        if not (fns.g(np.array(M)) >= u_sup and fns.g(np.array(-M)) <= -u_sup):
            problems.append(f"truncation rule: need g(M) >= |u|_inf and g(-M) <= -|u|_inf (|u|_inf = {u_sup:.6g})")
    tau1, tau0 = max_stable_tau(fns, s.mu)
    if not tau < tau0:
        problems.append(
            f"step-size guard: tau = {tau:.6g} must be below tau0 = {tau0:.6g} "
            f"(min of the fixed-point contraction limit tau1 = {tau1:.6g} and 1/(6|g'|_M))"
        )
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    problem = problem.replace(fns=fns)
    return problem, BuildInfo(M=M, tau=tau, tau1=tau1, tau0=tau0, u_sup=u_sup)


def validate(cfg: RunConfig) -> None:
    build_problem(cfg)
