"""Run configuration files (TOML).

A config has a ``[system]`` table naming either a builtin or an inline set
of deformation functions, optional ``[parameters]``, ``[integrator]``,
``[verify]``, ``[sweep]`` and ``[output]`` tables, and a top-level
``seed``.  Validation errors carry the line of the offending key::

    seed = 7

    [system]
    builtin = "cube_root_deform"
    initial_state = [1.0, 2.0, 3.0]

    [parameters]
    g = 1.0

    [integrator]
    method = "adaptive"
    t_span = [0.0, 0.5]
    atol = 1e-10
    rtol = 1e-10
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import expr as ex
from .field import BUILTINS, DeformationSpec, VectorField, builtin, closed_form_field, synthesize
from .integrate import IntegratorConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "dump_config"]


class ConfigError(ValueError):
    """Invalid configuration; `line` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


_ALLOWED = {
    "": {"seed", "system", "parameters", "integrator", "verify", "sweep", "output"},
    "system": {"builtin", "dimension", "deformations", "closed_form", "initial_state",
               "reparametrization"},
    "integrator": {"method", "t_span", "h", "atol", "rtol", "project", "max_steps",
                   "guard_radius", "blowup_norm", "output_times"},
    "verify": {"samples", "box", "sample_guard", "orthogonality_tol", "divergence_tol",
               "drift_tol", "scaled_divergence", "closed_form_tol"},
    "sweep": {"parameter", "values", "workers"},
    "output": {"directory", "trajectory", "report"},
}


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """Line of `key` inside `[section]` (or of the header when key is None)."""
    current = ""
    header = re.compile(r"^\s*\[([^\]]+)\]\s*(#.*)?$")
    for no, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


@dataclass
class RunConfig:
    """Fully resolved settings of one run."""

    builtin: str | None = None
    dimension: int = 3
    deformations: tuple[str, ...] | None = None
    closed_form_sources: tuple[str, ...] | None = None
    parameters: dict[str, float] = dc_field(default_factory=dict)
    initial_state: tuple[float, ...] | None = None
    reparametrization: str | None = None
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)
    output_times: tuple[float, ...] = ()
    seed: int = 0
    # verify
    samples: int = 1000
    box: tuple[float, float] = (-2.0, 2.0)
    sample_guard: float = 0.1
    orthogonality_tol: float = 1e-12
    divergence_tol: float = 1e-10
    scaled_divergence: bool = False
    drift_tol: float = 1e-8
    closed_form_tol: float = 1e-12
    # sweep
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()
    workers: int = 1
    # output
    out_dir: str = "out"
    trajectory_file: str = "trajectory.csv"
    report_file: str = "report.json"
    source: str | None = None

    # -- building the system ------------------------------------------------

    def spec(self, **overrides: float) -> DeformationSpec:
        bindings = {**self.parameters, **overrides}
        if self.builtin is not None:
            spec, _ = builtin(self.builtin, self.dimension, bindings.get("g", 1.0))
            return spec.with_bindings(**bindings) if bindings else spec
        return DeformationSpec.from_text(self.dimension, self.deformations, bindings, "inline")

    def closed_form(self, **overrides: float) -> VectorField | None:
        bindings = {**self.parameters, **overrides}
        if self.closed_form_sources is not None:
            return closed_form_field(self.closed_form_sources, bindings, "user-closed-form")
        if self.builtin is not None:
            _, cf = builtin(self.builtin, self.dimension, bindings.get("g", 1.0))
            if cf is not None and bindings:
                cf = cf.with_bindings(**bindings)
            return cf
        return None

    def field(self, **overrides: float) -> VectorField:
        return synthesize(self.spec(**overrides))

    def integrator_config(self) -> IntegratorConfig:
        return self.integrator.with_(t_eval=self.output_times) if self.output_times else self.integrator

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        system: dict[str, Any] = {}
        if self.builtin is not None:
            system["builtin"] = self.builtin
        else:
            system["deformations"] = list(self.deformations)
        system["dimension"] = self.dimension
        if self.closed_form_sources is not None:
            system["closed_form"] = list(self.closed_form_sources)
        if self.initial_state is not None:
            system["initial_state"] = list(self.initial_state)
        if self.reparametrization is not None:
            system["reparametrization"] = self.reparametrization
        ic = self.integrator
        integ = {
            "method": ic.method, "t_span": list(ic.t_span), "h": ic.h, "atol": ic.atol,
            "rtol": ic.rtol, "project": ic.project, "max_steps": ic.max_steps,
            "guard_radius": ic.guard_radius, "blowup_norm": ic.blowup_norm,
        }
        if self.output_times:
            integ["output_times"] = list(self.output_times)
        out = {
            "seed": self.seed,
            "system": system,
            "parameters": dict(self.parameters),
            "integrator": integ,
            "verify": {
                "samples": self.samples, "box": list(self.box), "sample_guard": self.sample_guard,
                "orthogonality_tol": self.orthogonality_tol, "divergence_tol": self.divergence_tol,
                "scaled_divergence": self.scaled_divergence, "drift_tol": self.drift_tol,
                "closed_form_tol": self.closed_form_tol,
            },
            "output": {"directory": self.out_dir, "trajectory": self.trajectory_file,
                       "report": self.report_file},
        }
        if self.sweep_parameter is not None or self.sweep_values:
            sweep: dict[str, Any] = {"values": list(self.sweep_values), "workers": self.workers}
            if self.sweep_parameter is not None:
                sweep["parameter"] = self.sweep_parameter
            out["sweep"] = sweep
        return out


def _num(value, what: str, line, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}", line, path)
    return float(value)


def _num_list(value, what: str, line, path) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{what} must be an array of numbers", line, path)
    return tuple(_num(v, what, line, path) for v in value)


def _str_list(value, what: str, line, path) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{what} must be an array of strings", line, path)
    return tuple(value)


def parse_config(text: str, path: str | None = None) -> RunConfig:
    """Validate TOML `text` into a `RunConfig`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, path) from None

    def loc(section, key=None):
        return _locate(text, section, key)

    for key in data:
        if key not in _ALLOWED[""]:
            raise ConfigError(f"unknown top-level key {key!r}", loc("", key), path)
    for section, allowed in _ALLOWED.items():
        if not section or section not in data:
            continue
        table = data[section]
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table", loc("", section), path)
        for key in table:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]", loc(section, key), path)

    cfg = RunConfig(source=path)
    if "seed" in data:
        seed = data["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer", loc("", "seed"), path)
        cfg.seed = seed

    params = data.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("[parameters] must be a table", loc("parameters"), path)
    for name, value in params.items():
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name) or re.fullmatch(r"x\d+", name) \
                or name in ex.FUNCTIONS:
            raise ConfigError(f"invalid parameter name {name!r}", loc("parameters", name), path)
        cfg.parameters[name] = _num(value, f"parameter {name}", loc("parameters", name), path)

    system = data.get("system")
    if system is None:
        raise ConfigError("missing [system] table", None, path)
    has_builtin = "builtin" in system
    has_inline = "deformations" in system
    if has_builtin == has_inline:
        raise ConfigError("[system] needs exactly one of 'builtin' or 'deformations'",
                          loc("system"), path)
    if "dimension" in system:
        dim = system["dimension"]
        if isinstance(dim, bool) or not isinstance(dim, int) or dim < 3:
            raise ConfigError("dimension must be an integer >= 3", loc("system", "dimension"), path)
        cfg.dimension = dim
    if has_builtin:
        name = system["builtin"]
        if name not in BUILTINS:
            raise ConfigError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}",
                              loc("system", "builtin"), path)
        cfg.builtin = name
        if name in ("euler3", "quartic_deform") and cfg.dimension != 3:
            raise ConfigError(f"{name} requires dimension 3", loc("system", "dimension"), path)
        if name in ("cube_root_deform", "quartic_deform"):
            cfg.parameters.setdefault("g", 1.0)
    else:
        line = loc("system", "deformations")
        cfg.deformations = _str_list(system["deformations"], "deformations", line, path)
        if "dimension" not in system:
            cfg.dimension = len(cfg.deformations) + 1
        if len(cfg.deformations) != cfg.dimension - 1:
            raise ConfigError(
                f"dimension mismatch: {len(cfg.deformations)} deformations for dimension {cfg.dimension}"
                f" (need {cfg.dimension - 1})", line, path)
        for i, src in enumerate(cfg.deformations):
            try:
                ex.parse(src, cfg.dimension, cfg.parameters)
            except ex.ParseError as err:
                raise ConfigError(f"deformations[{i}]: {err}", line, path) from None
    if "closed_form" in system:
        line = loc("system", "closed_form")
        cfg.closed_form_sources = _str_list(system["closed_form"], "closed_form", line, path)
        if len(cfg.closed_form_sources) != cfg.dimension:
            raise ConfigError(f"dimension mismatch: closed_form needs {cfg.dimension} components",
                              line, path)
        for i, src in enumerate(cfg.closed_form_sources):
            try:
                ex.parse(src, cfg.dimension, cfg.parameters)
            except ex.ParseError as err:
                raise ConfigError(f"closed_form[{i}]: {err}", line, path) from None
    if "initial_state" in system:
        line = loc("system", "initial_state")
        cfg.initial_state = _num_list(system["initial_state"], "initial_state", line, path)
        if len(cfg.initial_state) != cfg.dimension:
            raise ConfigError(
                f"dimension mismatch: initial_state has {len(cfg.initial_state)} coordinates"
                f" but the system has dimension {cfg.dimension}", line, path)
    if "reparametrization" in system:
        line = loc("system", "reparametrization")
        src = system["reparametrization"]
        if not isinstance(src, str):
            raise ConfigError("reparametrization must be an expression string", line, path)
        try:
            ex.parse(src, cfg.dimension, cfg.parameters)
        except ex.ParseError as err:
            raise ConfigError(f"reparametrization: {err}", line, path) from None
        cfg.reparametrization = src

    integ = dict(data.get("integrator", {}))
    kwargs: dict[str, Any] = {}
    for key in ("h", "atol", "rtol", "guard_radius", "blowup_norm"):
        if key in integ:
            kwargs[key] = _num(integ[key], key, loc("integrator", key), path)
    if "method" in integ:
        kwargs["method"] = integ["method"]
    if "t_span" in integ:
        span = _num_list(integ["t_span"], "t_span", loc("integrator", "t_span"), path)
        if len(span) != 2:
            raise ConfigError("t_span must have two entries", loc("integrator", "t_span"), path)
        kwargs["t_span"] = span
    if "project" in integ:
        if not isinstance(integ["project"], bool):
            raise ConfigError("project must be true or false", loc("integrator", "project"), path)
        kwargs["project"] = integ["project"]
    if "max_steps" in integ:
        ms = integ["max_steps"]
        if isinstance(ms, bool) or not isinstance(ms, int):
            raise ConfigError("max_steps must be an integer", loc("integrator", "max_steps"), path)
        kwargs["max_steps"] = ms
    try:
        cfg.integrator = IntegratorConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(f"[integrator]: {err}", loc("integrator"), path) from None
    if "output_times" in integ:
        line = loc("integrator", "output_times")
        times = _num_list(integ["output_times"], "output_times", line, path)
        t0, t1 = cfg.integrator.t_span
        if any(t < t0 or t > t1 for t in times):
            raise ConfigError("output_times must lie inside t_span", line, path)
        cfg.output_times = tuple(sorted(times))

    ver = data.get("verify", {})
    for key in ("sample_guard", "orthogonality_tol", "divergence_tol", "drift_tol", "closed_form_tol"):
        if key in ver:
            setattr(cfg, key, _num(ver[key], key, loc("verify", key), path))
    if "samples" in ver:
        n = ver["samples"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("samples must be a positive integer", loc("verify", "samples"), path)
        cfg.samples = n
    if "box" in ver:
        box = _num_list(ver["box"], "box", loc("verify", "box"), path)
        if len(box) != 2 or not box[1] > box[0]:
            raise ConfigError("box must be [lo, hi] with hi > lo", loc("verify", "box"), path)
        cfg.box = box
    if "scaled_divergence" in ver:
        cfg.scaled_divergence = bool(ver["scaled_divergence"])

    sweep = data.get("sweep", {})
    if "parameter" in sweep:
        cfg.sweep_parameter = str(sweep["parameter"])
    if "values" in sweep:
        cfg.sweep_values = _num_list(sweep["values"], "values", loc("sweep", "values"), path)
    if "workers" in sweep:
        w = sweep["workers"]
        if isinstance(w, bool) or not isinstance(w, int) or w < 1:
            raise ConfigError("workers must be a positive integer", loc("sweep", "workers"), path)
        cfg.workers = w

    out = data.get("output", {})
    if "directory" in out:
        cfg.out_dir = str(out["directory"])
    if "trajectory" in out:
        cfg.trajectory_file = str(out["trajectory"])
    if "report" in out:
        cfg.report_file = str(out["report"])

    # referenced parameters must be bound
    try:
        cfg.spec()
        if cfg.closed_form_sources is not None:
            cfg.closed_form()
    except ValueError as err:
        raise ConfigError(str(err), loc("parameters") or loc("system"), path) from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
