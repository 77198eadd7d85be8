"""``key=value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .cell import CONVENTIONS
from .geometry import CellGeometry, GeometryError, parse_geometry
from .initial import InitialError, parse_initial
from .macro import ORIENTATIONS

__all__ = ["COMMANDS", "ConfigError", "ExperimentConfig", "parse_config", "parse_eps"]

COMMANDS = ("cell", "micro", "macro", "unfold", "sweep")


class ConfigError(ValueError):
    pass


def _float(v: str) -> float:
    if "/" in v:
        return float(Fraction(v))
    return float(v)


def _bool(v: str) -> bool:
    s = v.lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _choice(options):
    def conv(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return conv


def _positive(conv):
    def check(v: str):
        x = conv(v)
        if not x > 0:
            raise ValueError(f"must be positive, got {v}")
        return x
    return check


def _nonneg(conv):
    def check(v: str):
        x = conv(v)
        if x < 0:
            raise ValueError(f"must be nonnegative, got {v}")
        return x
    return check


def parse_eps(text: str) -> tuple[float, ...]:
    """``1/2,1/4,1/8`` or decimals; every entry must be ``1/k``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            raise ValueError("empty entry in eps list")
        frac = Fraction(part) if "/" in part else Fraction(part).limit_denominator(10**6)
        if frac <= 0 or frac.numerator != 1:
            raise ValueError(f"eps entries must be reciprocals of integers, got {part}")
        out.append(float(frac))
    return tuple(out)


def _seed(v: str) -> int:
    s = int(v, 0)
    if not 0 <= s < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {v}")
    return s


def _check_geometry(v: str) -> str:
    parse_geometry(v)
    return v


def _check_initial(v: str) -> str:
    parse_initial(v)
    return v


_KEYS = {
    "command": _choice(COMMANDS),
    "geometry": _check_geometry,
    "eps": parse_eps,
    "N_cell": _positive(int),
    "N": _positive(int),
    "lambda": _positive(_float),
    "mu": _positive(_float),
    "S": _nonneg(_float),
    "dt": _positive(_float),
    "T": _nonneg(_float),
    "steps": _nonneg(int),
    "snapshot_stride": _positive(int),
    "dual_stride": _positive(int),
    "convention": _choice(CONVENTIONS),
    "orientation": _choice(ORIENTATIONS),
    "sigma_bar_override": _float,
    "conserve_mass": _bool,
    "seed": _seed,
    "init": _check_initial,
    "flow": _bool,
    "stokes_solver": _choice(("minres", "uzawa", "richardson")),
    "stokes_tol": _positive(_float),
    "uzawa_step": _positive(_float),
    "ch_solver": _choice(("cg", "minres")),
    "ch_tol": _positive(_float),
    "alpha": int,
    "beta": int,
    "gamma": int,
    "exponent_override": _bool,
    "growth_limit": _positive(_float),
    "coefficients": str,
    "snapshot": str,
    "limit": _choice(("cell_average", "zero", "manufactured")),
    "test_function": _choice(("one", "cos_y1", "cos_y2")),
    "extension": _choice(("zero", "cell_average")),
    "manufactured": _bool,
    "out": str,
}

_REQUIRED = {
    "cell": ("geometry",),
    "micro": ("geometry", "eps", "N_cell"),
    "macro": (),
    "unfold": ("snapshot",),
    "sweep": ("eps", "N_cell"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    geometry: str = "disc:0.25"
    eps: tuple[float, ...] = (1.0,)
    N_cell: int = 16
    N: int = 64
    lam: float = 1.0
    mu: float = 1.0
    S: float = 2.0
    dt: float = 1e-3
    T: float = 0.0
    snapshot_stride: int = 1
    dual_stride: int = 1
    convention: str = "FluxBalance"
    orientation: str = "GradientFlow"
    sigma_bar_override: float | None = None
    conserve_mass: bool = True
    seed: int = 0
    init: str = "random"
    flow: bool = True
    stokes_solver: str = "minres"
    stokes_tol: float = 1e-9
    uzawa_step: float | None = None
    ch_solver: str = "cg"
    ch_tol: float = 1e-10
    alpha: int = 2
    beta: int = 1
    gamma: int = 0
    exponent_override: bool = False
    growth_limit: float = 10.0
    coefficients: str | None = None
    snapshot: str | None = None
    limit: str = "cell_average"
    test_function: str = "one"
    extension: str = "zero"
    manufactured: bool = False
    out: str | None = None
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def cell_geometry(self) -> CellGeometry:
        return parse_geometry(self.geometry)

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    def echo(self) -> dict:
        """Every resolved setting (defaults included), JSON friendly."""
        out = {}
        for k in self.__dataclass_fields__:
            if k == "raw":
                continue
            v = getattr(self, k)
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


_RENAME = {"lambda": "lam"}


def parse_config(text: str, command: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Parse ``key=value`` lines (``#`` starts a comment).

    ``command`` and ``seed`` come from the command line and take precedence;
    a ``command`` key in the file must agree with the subcommand.
    """
    values: dict = {}
    raw: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {body!r}")
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key: {key}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key: {key} (first set on line {lines[key]})")
        try:
            values[key] = _KEYS[key](val)
        except (ValueError, GeometryError, InitialError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: malformed value for {key}: {exc}") from None
        raw[key] = val
        lines[key] = lineno

    if command is not None:
        if "command" in values and values["command"] != command:
            raise ConfigError(
                f"line {lines['command']}: command={values['command']} conflicts with subcommand {command}"
            )
        values["command"] = command
    if "command" not in values:
        raise ConfigError("missing required key: command")
    cmd = values["command"]
    if seed is not None:
        values["seed"] = _seed(str(seed))
    for key in _REQUIRED[cmd]:
        if key not in values:
            raise ConfigError(f"missing required key: {key} (needed by {cmd})")
    if cmd == "macro" and "coefficients" not in values and "geometry" not in values:
        raise ConfigError("missing required key: coefficients or geometry (needed by macro)")
    if cmd == "sweep" and not values.get("manufactured", False) and "geometry" not in values:
        raise ConfigError("missing required key: geometry (needed by sweep)")

    # time: any two of T, dt, steps determine the third
    dt = values.get("dt", 1e-3)
    if "steps" in values:
        T_from_steps = values["steps"] * dt
        if "T" in values and abs(values["T"] - T_from_steps) > 1e-9 * max(dt, values["T"]):
            raise ConfigError(
                f"line {lines['steps']}: steps={values['steps']} with dt={dt} gives T={T_from_steps:g}, "
                f"but line {lines['T']} sets T={values['T']:g}"
            )
        values["T"] = T_from_steps
        del values["steps"]
    T = values.get("T", 0.0)
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(dt, T):
        where = f"line {lines['T']}: " if "T" in lines else ""
        raise ConfigError(f"{where}T={T:g} is not an integer multiple of dt={dt:g}")

    if cmd == "micro" and len(values["eps"]) != 1:
        raise ConfigError(f"line {lines['eps']}: micro takes a single eps")
    if cmd == "sweep" and len(values["eps"]) < 3:
        raise ConfigError(f"line {lines['eps']}: sweep needs ≥ 3 levels")
    if ("geometry" in values and parse_geometry(values["geometry"]).kind == "empty"
            and values.get("convention", "FluxBalance") == "FluxBalance" and cmd in ("cell", "sweep", "macro")):
        where = f"line {lines['convention']}: " if "convention" in lines else ""
        raise ConfigError(f"{where}FluxBalance needs a solid interface; set convention=MeanProject for geometry=empty")
    N = values.get("N_cell")
    if N is not None and N < 4:
        raise ConfigError(f"line {lines['N_cell']}: N_cell must be >= 4")

    values = {_RENAME.get(k, k): v for k, v in values.items()}
    return ExperimentConfig(raw=raw, **values)
