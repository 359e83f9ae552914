"""Flat ``key = value`` experiment configs with dotted sections.

Example::

    # d = 3 weakly singular repulsive run
    kernel.dim = 3
    kernel.alpha = 0.5
    kernel.strength = 1.0
    density.kind = uniform_ball
    density.dim = 6
    n_list = 250, 500, 1000
    gamma = 0.9

Values are ints, floats, booleans (``true``/``false``), bare strings, or
comma-separated lists of those. A one-element list is written with a
trailing comma (``n_list = 64,``). Lines starting with ``#`` are comments.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from .experiments import MonitorConfig, StudyConfig
from .kernels import Cutoff, KernelSpec
from .sampling import DensitySpec, KINDS

_FLOAT = "float"
_INT = "int"
_STR = "str"
_BOOL = "bool"
_LIST_INT = "list[int]"
_LIST_FLOAT = "list[float]"

SCHEMA: Dict[str, str] = {
    "kernel.dim": _INT, "kernel.alpha": _FLOAT, "kernel.strength": _FLOAT,
    "kernel.cutoff.m_bar": _FLOAT, "kernel.cutoff.profile": _STR,
    "density.kind": _STR, "density.dim": _INT, "density.radius": _FLOAT, "density.sigma": _FLOAT,
    "seed": _INT, "threads": _INT,
    "gamma": _FLOAT, "r": _FLOAT, "r_prime": _FLOAT,
    "n_list": _LIST_INT, "replicas": _INT, "t_end": _FLOAT, "dt": _FLOAT,
    "n_samples": _INT, "reference": _STR, "n_ref": _INT, "init": _STR,
    "m_bar_list": _LIST_FLOAT, "l_grid": _LIST_FLOAT, "level": _FLOAT,
    "n_per_axis": _INT, "box": _FLOAT, "k_per_blob": _INT, "record_every": _INT,
    "n_checks": _INT, "n_diag": _INT, "diag_rows": _INT,
    "simulate.mode": _STR, "simulate.n": _INT,
    "grid.nx": _INT, "grid.nv": _INT, "grid.power": _INT, "grid.rx": _FLOAT, "grid.rv": _FLOAT,
    "grid.x_max": _FLOAT, "grid.v_max": _FLOAT,
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_scalar(p.strip()) for p in text.split(",") if p.strip()]
    return _scalar(text)


def format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        body = ", ".join(format_value(v) for v in value)
        return body + "," if len(value) == 1 else body
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse(text: str) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        out[key] = parse_value(value)
    return out


def dumps(cfg: Dict[str, Any]) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))


def load(path) -> Dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    return validate(parse(text))


def _coerce(key: str, kind: str, value):
    def num(v, typ):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected {typ}, got {v!r}")
        if typ == "int":
            if float(v) != int(v):
                raise ConfigError(key, f"expected an integer, got {v!r}")
            return int(v)
        return float(v)

    if kind == _INT:
        return num(value, "int")
    if kind == _FLOAT:
        return num(value, "float")
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a name, got {value!r}")
        return value
    items = value if isinstance(value, list) else [value]
    return [num(v, "int" if kind == _LIST_INT else "float") for v in items]


def validate(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Type-check every key and the cross-key invariants."""
    out = {}
    for key, value in cfg.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        out[key] = _coerce(key, SCHEMA[key], value)
    init = out.get("init", "iid")
    if init not in ("iid", "mesh"):
        raise ConfigError("init", f"must be iid or mesh, got {init!r}")
    if "gamma" in out:
        g = out["gamma"]
        ok = 0 < g <= 1 if init == "mesh" else 0 < g < 1
        if not ok:
            rng = "(0, 1]" if init == "mesh" else "(0, 1)"
            raise ConfigError("gamma", f"must lie in {rng} for {init} runs, got {g}")
    for key in ("dt", "t_end", "kernel.cutoff.m_bar", "density.radius", "density.sigma"):
        if key in out and not out[key] > 0 and not (key == "t_end" and out[key] == 0):
            raise ConfigError(key, f"must be positive, got {out[key]}")
    for key in ("replicas", "n_samples", "simulate.n", "n_per_axis", "k_per_blob",
                "record_every", "kernel.dim", "density.dim", "grid.nx", "grid.nv"):
        if key in out and out[key] < 1:
            raise ConfigError(key, f"must be >= 1, got {out[key]}")
    if "n_list" in out and (not out["n_list"] or min(out["n_list"]) < 1):
        raise ConfigError("n_list", "sizes must be >= 1")
    if "density.kind" in out and out["density.kind"] not in KINDS:
        raise ConfigError("density.kind", f"must be one of {KINDS}")
    if "kernel.alpha" in out and out["kernel.alpha"] < 0:
        raise ConfigError("kernel.alpha", "must be >= 0")
    if out.get("simulate.mode", "particles") not in ("particles", "grid"):
        raise ConfigError("simulate.mode", "must be particles or grid")
    if "kernel.dim" in out and "density.dim" in out and out["density.dim"] != 2 * out["kernel.dim"]:
        raise ConfigError("density.dim", "must be twice kernel.dim (phase space)")
    return out


# ---------------------------------------------------------------------------
# typed views

def _need(cfg, key):
    if key not in cfg:
        raise ConfigError(key, "required key is missing")
    return cfg[key]


def kernel_from(cfg) -> KernelSpec:
    cut = None
    if "kernel.cutoff.m_bar" in cfg:
        cut = Cutoff(cfg["kernel.cutoff.m_bar"], 1.0, cfg.get("kernel.cutoff.profile", "exact"))
    try:
        return KernelSpec(_need(cfg, "kernel.dim"), _need(cfg, "kernel.alpha"),
                          cfg.get("kernel.strength", 1.0), cut)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("kernel.alpha", str(exc)) from exc


def density_from(cfg) -> DensitySpec:
    dim = cfg.get("density.dim", 2 * _need(cfg, "kernel.dim"))
    return DensitySpec(cfg.get("density.kind", "uniform_ball"), dim,
                       cfg.get("density.radius", 1.0), cfg.get("density.sigma", 1.0))


_STUDY_KEYS = ("gamma", "r", "r_prime", "n_list", "replicas", "seed", "t_end", "dt",
               "n_samples", "reference", "n_ref", "init", "threads")


def study_config_from(cfg) -> StudyConfig:
    kw = {k: cfg[k] for k in _STUDY_KEYS if k in cfg}
    try:
        return StudyConfig(density_from(cfg), kernel_from(cfg), **kw)
    except ConfigError:
        raise
    except ValueError as exc:
        key = next((k for k in _STUDY_KEYS if k in str(exc)), "config")
        raise ConfigError(key, str(exc)) from exc


_MONITOR_KEYS = ("n_per_axis", "box", "gamma", "r", "r_prime", "t_end", "dt", "record_every",
                 "k_per_blob", "n_checks", "n_diag", "diag_rows", "threads")


def monitor_config_from(cfg) -> MonitorConfig:
    mc = MonitorConfig(kernel_from(cfg), **{k: cfg[k] for k in _MONITOR_KEYS if k in cfg})
    try:
        mc.validate()
    except ValueError as exc:
        key = "r_prime" if "r_prime" in str(exc) else "gamma" if "gamma" in str(exc) else "kernel"
        raise ConfigError(key, str(exc)) from exc
    return mc


__all__ = ["ConfigError", "SCHEMA", "parse", "dumps", "load", "validate", "kernel_from",
           "density_from", "study_config_from", "monitor_config_from"]
