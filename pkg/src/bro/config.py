"""YAML experiment configuration: loading, scale presets and validation.

A config is a nested mapping.  An optional ``scales`` section maps a scale
name (``small``, ``paper``) to overrides that are deep-merged on top of the
base before validation.  Builders turn sections into package objects and
report the first bad field as a :class:`ConfigError` with its dotted path.
"""

from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DomainError
from .estimators import CVAR, MEAN_VARIANCE, RISK_KINDS, VAR, RiskSpec
from .models import MarketModel, QuadraticModel
from .optimizer import BudgetSchedule, StepSchedule
from .posterior import GaussianPosterior, MCMCConfig, PointPosterior

COMMANDS = ("mcmc", "optimize", "benchmark", "sweep", "oracle")
TRUE_MARKET_THETA = (0.1, 0.05)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path, scale: str | None = None, seed: int | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    with path.open() as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    scales = raw.pop("scales", {}) or {}
    if scale is not None:
        if scale not in scales:
            raise ConfigError("scale", f"no preset {scale!r} in {path.name}; available: {sorted(scales)}")
        raw = deep_merge(raw, scales[scale])
    if seed is not None:
        raw["seed"] = int(seed)
    raw.setdefault("seed", 0)
    raw["_dir"] = str(path.parent.resolve())
    return raw


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(name, "missing section")
    return sec


def _wrap(field: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as err:
        raise ConfigError(f"{field}.{err.field}", str(err).split(": ", 1)[-1]) from err
    except (DomainError, TypeError, ValueError) as err:
        raise ConfigError(field, str(err)) from err


def require_int(cfg: dict, field: str, minimum: int = 1) -> int:
    v = cfg.get(field)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(field, f"must be an integer >= {minimum}, got {v!r}")
    return v


def build_model(cfg: dict):
    sec = _section(cfg, "model")
    name = sec.get("name")
    params = dict(sec.get("params") or {})
    box = sec.get("box")
    if box is not None:
        if not (isinstance(box, list) and len(box) == 2):
            raise ConfigError("model.box", "must be [lo, hi]")
        params["lo"], params["hi"] = box
    if name == "quadratic":
        return _wrap("model.params", QuadraticModel, **params)
    if name == "market":
        return _wrap("model.params", MarketModel, **params)
    raise ConfigError("model.name", f"unknown model {name!r}; expected quadratic or market")


def build_risk(sec) -> RiskSpec:
    if not isinstance(sec, dict):
        raise ConfigError("risk", "missing section")
    kind = sec.get("kind")
    if kind not in RISK_KINDS:
        raise ConfigError("risk.kind", f"unknown risk kind {kind!r}; expected one of {RISK_KINDS}")
    if kind in (VAR, CVAR):
        alpha = sec.get("alpha")
        if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
            raise ConfigError("risk.alpha", f"{kind} level must lie in (0, 1), got {alpha!r}")
    if kind == MEAN_VARIANCE and not isinstance(sec.get("weight"), (int, float)):
        raise ConfigError("risk.weight", f"MeanVariance needs a numeric weight, got {sec.get('weight')!r}")
    return _wrap("risk", RiskSpec, kind, sec.get("alpha"), sec.get("weight"))


def build_steps(cfg: dict) -> StepSchedule:
    return _wrap("steps", StepSchedule, **_section(cfg, "steps"))


def build_budget(cfg: dict) -> BudgetSchedule:
    return _wrap("budget", BudgetSchedule, **_section(cfg, "budget"))


def build_mcmc(sec: dict | None, seed: int = 0) -> MCMCConfig:
    sec = dict(sec or {})
    sec.setdefault("seed", seed)
    for key in ("chain_length", "burn_in"):
        if key in sec:
            sec[key] = int(sec[key])
    return _wrap("mcmc", MCMCConfig, **sec)


def fixture_path() -> Path:
    return Path(str(resources.files("bro") / "data" / "market_fixture.csv"))


def read_interarrivals(path) -> tuple[np.ndarray, np.ndarray]:
    """Customer and provider interarrival samples from a ``side,interarrival`` CSV."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("data", f"file not found: {path}")
    cust, prov = [], []
    with path.open() as fh:
        next(fh)
        for line in fh:
            side, value = line.strip().split(",")
            (cust if side == "customer" else prov).append(float(value))
    if not cust or not prov:
        raise ConfigError("data", f"{path} needs both customer and provider rows")
    return np.array(cust), np.array(prov)


def resolve_data_path(cfg: dict, value) -> Path:
    if value in (None, "fixture"):
        return fixture_path()
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_dir", ".")) / p


def build_static_posterior(sec: dict):
    kind = sec.get("kind")
    if kind == "gaussian":
        if "variance" in sec:
            return _wrap("posterior", GaussianPosterior.from_variance, sec.get("mean"), sec.get("variance"))
        return _wrap("posterior", GaussianPosterior, sec.get("mean"), sec.get("std"))
    if kind == "point":
        return _wrap("posterior", PointPosterior, sec.get("theta"))
    return None


def validate(cfg: dict, command: str) -> None:
    """Check every field a command will use before any simulation starts."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    require_int(cfg, "seed", 0)
    if command == "mcmc":
        build_mcmc(cfg.get("mcmc"), cfg["seed"])
        resolve_data_path(cfg, cfg.get("data"))
        require_int(cfg, "subset_size")
        return
    if command == "benchmark":
        for name in cfg.get("algorithms", []):
            if name not in ("SA", "NelderMead"):
                raise ConfigError("algorithms", f"unknown algorithm {name!r}; expected SA or NelderMead")
        for b in cfg.get("budgets", []):
            if not isinstance(b, int) or b < 2:
                raise ConfigError("budgets", f"evaluation budgets must be integers >= 2, got {b!r}")
        require_int(cfg, "replications")
        build_risk(cfg.get("risk"))
        build_steps(cfg)
        return
    if command == "oracle":
        build_model(cfg)
        for i, r in enumerate(cfg.get("risks", [])):
            _wrap(f"risks[{i}]", build_risk, r)
        return
    build_model(cfg)
    build_steps(cfg)
    build_budget(cfg)
    require_int(cfg, "T")
    require_int(cfg, "replications" if command == "optimize" else "datasets")
    if command == "optimize":
        build_risk(cfg.get("risk"))
        post = _section(cfg, "posterior")
        if post.get("kind") not in ("gaussian", "point", "mcmc"):
            raise ConfigError("posterior.kind", "expected gaussian, point or mcmc")
        build_static_posterior(post)
        if post.get("kind") == "mcmc":
            build_mcmc(post.get("mcmc"), cfg["seed"])
    else:
        for i, r in enumerate(cfg.get("risks", [])):
            if r.get("kind") != "MLE":
                _wrap(f"risks[{i}]", build_risk, r)
        build_mcmc(cfg.get("mcmc"), cfg["seed"])
