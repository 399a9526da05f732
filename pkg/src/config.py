"""
Run configuration for the command line.

A RunConfig merges, from lowest to highest precedence: built-in defaults,
environment variables (CURVCONE_THREADS, CURVCONE_SEED), a flat
``key = value`` file and command line flags.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

from src.errors import InputError

logger = logging.getLogger(__name__)

COMMANDS = ("check", "bend", "conformal", "rescale", "average", "oracle")
FORMATS = ("json", "csv")
SUBMERSION_DATA = ("hopf", "product", "torus")


def _float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """
    Settings of one CLI run.

    Fields left at None fall back to the defaults of the library call they
    feed (for instance target radii and grids).
    """

    command: str
    condition: str = "scal"
    # check / average
    operator: Optional[str] = None
    d: int = 2
    samples: int = 100000
    residual_tol: float = 1e-2
    # bend
    model: str = "sphere-point"
    n: int = 4
    a: float = 1.0
    k: int = 0
    rbar: float = 0.5
    r_target: Optional[float] = None
    target_fraction: float = 0.5
    # conformal
    chart: str = "sphere"
    gamma: Optional[float] = None
    gamma_fraction: Optional[float] = None
    directions: int = 1
    # rescale
    data: str = "hopf"
    fiber_curvature: float = 1.0
    base_curvature: float = 1.0
    fiber_dim: int = 2
    tgrid: Optional[list] = None
    strict: bool = True
    # shared
    grid: Optional[int] = None
    seed: int = 0
    tol: float = 1e-6
    threads: int = 1
    oracle_samples: int = 2
    out: Optional[str] = None
    format: str = "json"
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if self.format not in FORMATS:
            raise InputError(f"format must be one of {', '.join(FORMATS)}, got {self.format!r}")
        if self.threads < 1:
            raise InputError(f"threads must be at least 1, got {self.threads}")
        if self.grid is not None and self.grid < 2:
            raise InputError(f"grid must be at least 2, got {self.grid}")
        if not self.tol > 0:
            raise InputError(f"tol must be positive, got {self.tol}")
        if self.data not in SUBMERSION_DATA:
            raise InputError(f"data must be one of {', '.join(SUBMERSION_DATA)}, got {self.data!r}")
        if self.samples < 1 or self.oracle_samples < 0 or self.directions < 1:
            raise InputError("samples and directions must be positive, oracle_samples non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("source")
        return out


# key → type coercion; "command" and "source" are not settable from files
_COERCE = {
    "condition": str, "operator": str, "model": str, "chart": str, "data": str, "out": str, "format": str,
    "d": int, "samples": int, "n": int, "k": int, "directions": int, "fiber_dim": int, "grid": int,
    "seed": int, "threads": int, "oracle_samples": int,
    "residual_tol": float, "a": float, "rbar": float, "r_target": float, "target_fraction": float,
    "gamma": float, "gamma_fraction": float, "fiber_curvature": float, "base_curvature": float, "tol": float,
    "tgrid": _float_list, "strict": _bool,
}

ENV_KEYS = {"CURVCONE_THREADS": "threads", "CURVCONE_SEED": "seed"}


def coerce(key: str, value):
    """Convert a raw value for key; unknown keys and bad values raise InputError."""
    if key not in _COERCE:
        raise InputError(f"unknown config key {key!r}")
    if value is None:
        return None
    try:
        return _COERCE[key](value)
    except (TypeError, ValueError) as e:
        raise InputError(f"bad value for {key}: {value!r} ({e})") from e


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """
    Parse flat ``key = value`` lines; ``#`` starts a comment.

    Examples:
        "grid = 17  # nodes" → {"grid": 17}
        "colour = red" → InputError
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{origin}:{number}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip().lower().replace("-", "_")
        values[key] = coerce(key, value.strip())
    return values


def load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(f"cannot read config file {path}: {e}") from e
    logger.info(f"Loaded config file {path}")
    return parse_config_text(text, origin=path)


def env_values(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for var, key in ENV_KEYS.items():
        raw = environ.get(var)
        if raw not in (None, ""):
            values[key] = coerce(key, raw)
    return values


def build_config(command: str, config_path: Optional[str] = None, flags: Optional[dict] = None,
                 environ=None) -> RunConfig:
    """
    Merge defaults < environment < config file < flags into a RunConfig.

    Flags set to None are treated as absent. The origin of every
    non-default value is kept in ``source``.
    """
    merged, source = {}, {}
    layers = [("env", env_values(environ))]
    if config_path:
        layers.append(("file", load_config_file(config_path)))
    layers.append(("flag", {k: coerce(k, v) for k, v in (flags or {}).items() if v is not None}))
    for origin, values in layers:
        for key, value in values.items():
            merged[key] = value
            source[key] = origin
    return RunConfig(command=command, source=source, **merged)
