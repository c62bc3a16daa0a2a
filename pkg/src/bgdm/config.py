"""Experiment configuration: INI-style sections of ``key = value`` lines.

Example::

    [task]
    kind = mri
    image_size = 64
    accelerations = 4, 8
    sigma_y = 0.05

    [prior]
    source = phantom_gmm

    [guidance]
    schemes = ddnm, bgdm
    zeta = 0.5, 1

    [run]
    nfe = 100
    seeds = 0-4
    inputs = prior_sample

Text after ``;`` or ``#`` is a comment. List-valued keys take
comma-separated values; ``seeds`` also accepts ranges such as ``0-19``. Any
hyper-parameter key set to ``grid`` takes the default search grid.
"""
import configparser
from dataclasses import dataclass
import itertools
import os

from .errors import ConfigError, ParameterError
from .guidance import GuidanceConfig
from .linops import CT, MASK_PATTERNS, MRI, SR

TASKS = {"mri": MRI, "ct": CT, "sr": SR}
PRIOR_SOURCES = ("phantom_gmm", "gmm", "external_command", "external_dir", "none")

DEFAULT_GRID = {
    "zeta": (0.0, 0.5, 1.0, 2.0),
    "gamma": (0.0, 1.0, 4.5),
    "lam": (1e-3, 1e-4),
    "eta": (0.85, 0.95, 1.0),
}

# hyper-parameters each scheme actually reads
SCHEME_PARAMS = {
    "none": ("eta",),
    "dps": ("zeta", "eta"),
    "ddnm": ("eta",),
    "scoremed": ("eta",),
    "bgdm": ("zeta", "lam", "eta"),
    "r_bgdm": ("zeta", "lam", "gamma", "eta"),
}


@dataclass(frozen=True)
class SchemeSetting:
    label: str
    guidance: GuidanceConfig


@dataclass
class ExperimentConfig:
    path: str
    task: str
    image_size: int
    sigma_y: float
    accelerations: tuple
    mask_pattern: str
    center_fraction: float
    mask_seed: int
    detector_count: int
    prior_source: str
    prior_path: str
    prior_command: str
    prior_components: int
    prior_seed: int
    prior_complex: bool
    prior_timeout: float
    schedule_steps: int
    beta_min: float
    beta_max: float
    schemes: tuple
    nfe: tuple
    seeds: tuple
    inputs: tuple
    trace: bool
    output: str
    workers: int = None


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _floats(section, key, value):
    if value.strip() == "grid":
        if key not in DEFAULT_GRID:
            raise ConfigError(f"[{section}] {key}: no default grid for this key")
        return DEFAULT_GRID[key]
    try:
        return tuple(float(v) for v in _split(value))
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {value!r}") from None


def _ints(section, key, value):
    out = []
    for part in _split(value):
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected integers, got {value!r}") from None
    return tuple(out)


def _get(cp, section, key, default=None, required=False):
    if cp.has_option(section, key):
        return cp.get(section, key)
    if required:
        raise ConfigError(f"missing required key [{section}] {key}")
    return default


def _number(cp, section, key, default, kind=float):
    value = _get(cp, section, key)
    if value is None:
        return default
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {value!r}") from None


def _bool(cp, section, key, default=False):
    if not cp.has_option(section, key):
        return default
    try:
        return cp.getboolean(section, key)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a boolean") from None


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def _fmt(v):
    return f"{v:g}"


def expand_schemes(cp):
    """Cartesian product of every listed hyper-parameter value, per scheme."""
    sec = "guidance"
    names = _split(_get(cp, sec, "schemes", "bgdm"))
    if not names:
        raise ConfigError("[guidance] schemes is empty")
    values = {}
    for key in ("zeta", "lam", "gamma", "eta"):
        raw = _get(cp, sec, key)
        values[key] = _floats(sec, key, raw) if raw is not None else (
            getattr(GuidanceConfig(), key),)
    fixed = {}
    for key in ("jacobian_mode", "dps_transport", "refinement_variant"):
        raw = _get(cp, sec, key)
        if raw is not None:
            fixed[key] = raw.strip()
    for key in ("fd_step", "cg_tol"):
        if cp.has_option(sec, key):
            fixed[key] = _number(cp, sec, key, None)
    if cp.has_option(sec, "cg_maxiter"):
        fixed["cg_maxiter"] = _number(cp, sec, "cg_maxiter", None, int)

    settings = []
    for name in names:
        if name not in SCHEME_PARAMS:
            raise ConfigError(f"[guidance] unknown scheme {name!r}")
        keys = SCHEME_PARAMS[name]
        varying = [k for k in keys if len(values[k]) > 1]
        for combo in itertools.product(*(values[k] for k in keys)):
            params = dict(zip(keys, combo))
            try:
                g = GuidanceConfig(scheme=name, **params, **fixed)
            except ParameterError as exc:
                raise ConfigError(f"[guidance] {exc}") from None
            label = name
            if varying:
                label += "(" + ",".join(f"{k}={_fmt(params[k])}" for k in varying) + ")"
            settings.append(SchemeSetting(label, g))
    return tuple(settings)


def load_config(path):
    """Parse and validate an experiment file; every problem raises ConfigError."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))

    task = _get(cp, "task", "kind", required=True).strip()
    if task not in TASKS:
        raise ConfigError(f"[task] kind must be one of {sorted(TASKS)}, got {task!r}")
    size = _number(cp, "task", "image_size", 64, int)
    if size < 4:
        raise ConfigError(f"[task] image_size too small: {size}")
    sigma_y = _number(cp, "task", "sigma_y", 0.0)
    if sigma_y < 0:
        raise ConfigError("[task] sigma_y must be non-negative")
    accel_key = {"mri": "accelerations", "ct": "num_angles", "sr": "factors"}[task]
    default_accel = {"mri": "4", "ct": "30", "sr": "2"}[task]
    accels = _floats("task", accel_key, _get(cp, "task", accel_key, default_accel))
    if not accels:
        raise ConfigError(f"[task] {accel_key} is empty")
    if task != "mri" and any(a != int(a) or a < 1 for a in accels):
        raise ConfigError(f"[task] {accel_key} must be positive integers")
    pattern = _get(cp, "task", "mask_pattern", "cartesian_equispaced").strip()
    if pattern not in MASK_PATTERNS:
        raise ConfigError(f"[task] mask_pattern must be one of {MASK_PATTERNS}")

    source = _get(cp, "prior", "source", "phantom_gmm").strip()
    if source not in PRIOR_SOURCES:
        raise ConfigError(f"[prior] source must be one of {PRIOR_SOURCES}, got {source!r}")
    prior_path = _get(cp, "prior", "path")
    prior_command = _get(cp, "prior", "command")
    if source in ("gmm", "external_dir"):
        if prior_path is None:
            raise ConfigError(f"[prior] source={source} needs a path")
        prior_path = _resolve(base, prior_path.strip())
        exists = os.path.isfile if source == "gmm" else os.path.isdir
        if not exists(prior_path):
            raise ConfigError(f"[prior] path not found: {prior_path} (config {path})")
    if source == "external_command" and not prior_command:
        raise ConfigError("[prior] source=external_command needs a command")

    steps = _number(cp, "schedule", "num_steps", 1000, int)
    nfe = _ints("run", "nfe", _get(cp, "run", "nfe", "100"))
    if not nfe or any(n < 1 or n > steps for n in nfe):
        raise ConfigError(f"[run] nfe values must lie in [1, {steps}]")
    seeds = _ints("run", "seeds", _get(cp, "run", "seeds", "0"))
    if not seeds:
        raise ConfigError("[run] at least one seed is required")

    inputs = _split(_get(cp, "run", "inputs", "phantom"))
    resolved = []
    for item in inputs:
        if item in ("phantom", "prior_sample"):
            resolved.append(item)
            continue
        p = _resolve(base, item)
        if not os.path.isfile(p):
            raise ConfigError(f"[run] input image not found: {p} (config {path})")
        resolved.append(p)
    if not resolved:
        raise ConfigError("[run] inputs is empty")

    workers = _get(cp, "run", "workers")
    return ExperimentConfig(
        path=os.path.abspath(path),
        task=task,
        image_size=size,
        sigma_y=sigma_y,
        accelerations=accels,
        mask_pattern=pattern,
        center_fraction=_number(cp, "task", "center_fraction", 0.08),
        mask_seed=_number(cp, "task", "mask_seed", 0, int),
        detector_count=_number(cp, "task", "detector_count", None, int),
        prior_source=source,
        prior_path=prior_path,
        prior_command=prior_command,
        prior_components=_number(cp, "prior", "num_components", 4, int),
        prior_seed=_number(cp, "prior", "seed", 0, int),
        prior_complex=_bool(cp, "prior", "complex"),
        prior_timeout=_number(cp, "prior", "timeout", 30.0),
        schedule_steps=steps,
        beta_min=_number(cp, "schedule", "beta_min", 1e-4),
        beta_max=_number(cp, "schedule", "beta_max", 0.02),
        schemes=expand_schemes(cp),
        nfe=nfe,
        seeds=seeds,
        inputs=tuple(resolved),
        trace=_bool(cp, "run", "trace"),
        output=_get(cp, "run", "output", "results").strip(),
        workers=int(workers) if workers else None,
    )
