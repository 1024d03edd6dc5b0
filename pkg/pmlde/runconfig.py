"""Run configuration: sectioned key-value files parsed into frozen dataclasses.

Numbers may be written as simple arithmetic expressions (``10*pi``, ``2/25``).
Points are ``x, y``; polygon vertices are points separated by ``;``.
"""

import ast
import configparser
import logging
import math
import operator
import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

from . import config
from .amr import SensorThresholds
from .exceptions import ConfigError, ConfigParseError, ConfigValidationError, UnsupportedMotion
from .geometry import STATIC, Circle, Polygon, RigidMotion, Star, sweep_clearance
from .grid import StaggeredGrid
from .integrators import HARD, SOFT, ModelParams
from .pml import PmlLayout
from .solver import SolverOptions
from .sources import SourceSpec

logger = logging.getLogger(__name__)

SECTIONS = {
    "run": ("name",),
    "domain": ("a1", "a2", "l1", "l2"),
    "grid": ("nx", "ny"),
    "time": ("tau", "t_end"),
    "model": ("c", "bc", "eta_d", "alpha", "beta", "psi_hat", "eta_n"),
    "pml": ("xibar1", "xibar2", "reflection"),
    "embedding": ("shape", "center", "radius", "r0", "r1", "lobes", "vertices", "velocity", "acceleration", "eps"),
    "source": ("center", "eta", "w", "sigma", "t0"),
    "initial": ("kind", "center", "width"),
    "amr": ("enabled", "max_level", "workers", "tau_emb", "tau_pml", "tau_sol", "buffer_cells",
            "regrid_interval", "tile", "efficiency"),
    "solver": ("tol", "maxiter_factor", "method", "restart"),
    "output": ("directory", "snapshot_interval", "energy_interval", "checkpoint_interval", "async"),
}
INITIAL_KINDS = ("zero", "gaussian")


# ── Config dataclasses ───────────────────────────────────────


@dataclass(frozen=True)
class DomainConfig:
    """Physical half-widths and layer thicknesses."""

    a1: float
    a2: float
    l1: float
    l2: float


@dataclass(frozen=True)
class GridConfig:
    nx: int
    ny: int


@dataclass(frozen=True)
class TimeConfig:
    tau: float
    t_end: float

    @property
    def steps(self):
        return int(round(self.t_end / self.tau))


@dataclass(frozen=True)
class PmlConfig:
    """Peak damping per direction; ``None`` derives it from ``reflection``."""

    xibar1: Optional[float] = None
    xibar2: Optional[float] = None
    reflection: float = config.DEFAULT_REFLECTION


@dataclass(frozen=True)
class EmbeddingConfig:
    shape: object = None
    motion: RigidMotion = STATIC
    eps: float = 0.05


@dataclass(frozen=True)
class InitialConfig:
    """Initial pressure ``exp(-width |x - center|^2)`` or zero; ``p_t(0) = 0``."""

    kind: str = "zero"
    center: Tuple[float, float] = (0.0, 0.0)
    width: float = 1.0


@dataclass(frozen=True)
class AmrConfig:
    enabled: bool = False
    max_level: int = config.DEFAULT_MAX_LEVEL
    thresholds: SensorThresholds = field(default_factory=SensorThresholds)
    workers: int = 1


@dataclass(frozen=True)
class OutputConfig:
    """Snapshot cadence in simulated time, energy and checkpoint cadence in steps (0 disables)."""

    directory: str = config.DEFAULT_OUTPUT_DIR
    snapshot_interval: float = 0.0
    energy_interval: int = 1
    checkpoint_interval: int = 0
    async_writes: bool = True


@dataclass(frozen=True)
class RunConfig:
    name: str
    domain: DomainConfig
    grid: GridConfig
    time: TimeConfig
    model: ModelParams
    pml: PmlConfig = field(default_factory=PmlConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    source: Optional[SourceSpec] = None
    initial: InitialConfig = field(default_factory=InitialConfig)
    amr: AmrConfig = field(default_factory=AmrConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: OutputConfig = field(default_factory=OutputConfig)

    def layout(self):
        d, p = self.domain, self.pml
        default = PmlLayout.with_default_strength(d.a1, d.a2, d.l1, d.l2, self.model.c, p.reflection)
        return PmlLayout(
            d.a1,
            d.a2,
            d.l1,
            d.l2,
            default.xibar1 if p.xibar1 is None else p.xibar1,
            default.xibar2 if p.xibar2 is None else p.xibar2,
        )

    def base_grid(self):
        return StaggeredGrid.covering(*self.layout().domain, self.grid.nx, self.grid.ny)

    @property
    def has_object(self):
        return self.embedding.shape is not None


# ── Value parsing ────────────────────────────────────────────

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}


def parse_number(text):
    """Evaluate a numeric literal or arithmetic expression over ``pi``, ``e`` and ``inf``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ValueError(f"not a number: '{text}'") from None

    def evaluate(node):
        if isinstance(node, ast.Expression):
            return evaluate(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(
            node.value, bool
        ):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            return _BINARY[type(node.op)](evaluate(node.left), evaluate(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](evaluate(node.operand))
        raise ValueError(f"not a number: '{text}'")

    try:
        return evaluate(tree)
    except ZeroDivisionError:
        raise ValueError(f"division by zero in '{text}'") from None
    except OverflowError:
        raise ValueError(f"out of range: '{text}'") from None


def parse_int(text):
    value = parse_number(text)
    if not math.isfinite(value):
        raise ValueError(f"not a finite integer: '{text}'")
    if value != int(value):
        raise ValueError(f"not an integer: '{text}'")
    return int(value)


def parse_point(text):
    parts = [p for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'x, y', got '{text}'")
    return (parse_number(parts[0]), parse_number(parts[1]))


def parse_points(text):
    return tuple(parse_point(chunk) for chunk in text.split(";") if chunk.strip())


def parse_bool(text):
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _format_number(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def _format_point(point):
    return f"{_format_number(point[0])}, {_format_number(point[1])}"


# ── Parsing ──────────────────────────────────────────────────

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    """Line number of every ``(section, key)`` and section header."""
    index = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            index[(section, None)] = number
            continue
        match = _KEY_RE.match(line)
        if match and section is not None and not line[:1].isspace():
            index[(section, match.group(1).strip().lower())] = number
    return index


class _Reader:
    """Typed access to a parsed config that reports line numbers on bad values."""

    def __init__(self, parser, lines):
        self.parser = parser
        self.lines = lines

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def get(self, section, key, cast=str, default=None, required=False):
        if not self.has(section, key):
            if required:
                raise ConfigValidationError(f"[{section}] {key} is required", invariant=f"{section}.{key}")
            return default
        raw = self.parser.get(section, key)
        try:
            return cast(raw)
        except ValueError as exc:
            line = self.lines.get((section, key), self.lines.get((section, None)))
            raise ConfigParseError(f"[{section}] {key}: {exc}", line=line) from None


def parse_config(text, environ=None, overrides=None):
    """Parse and validate run configuration text.

    ``overrides`` maps ``"section.key"`` to replacement values and wins over
    the text. Solver and output settings missing from both fall back to the
    ``PMLDE_*`` environment variables, then to the module defaults.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key before any [section]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigParseError("malformed line", line=line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigParseError("duplicate section or key", line=exc.lineno) from None
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigParseError(f"override '{dotted}' must look like section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.lower(), str(value))

    lines = _line_index(text)
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigParseError(f"unknown section [{section}]", line=lines.get((section, None)))
        for key in parser[section]:
            if key not in SECTIONS[section]:
                raise ConfigParseError(f"unknown key '{key}' in [{section}]", line=lines.get((section, key)))
    env = config.load_env_overrides(environ)
    r = _Reader(parser, lines)
    num, integer = parse_number, parse_int

    domain = DomainConfig(*(r.get("domain", key, num, required=True) for key in ("a1", "a2", "l1", "l2")))
    grid = GridConfig(r.get("grid", "nx", integer, required=True), r.get("grid", "ny", integer, required=True))
    time = TimeConfig(r.get("time", "tau", num, required=True), r.get("time", "t_end", num, required=True))
    if not (time.tau > 0 and time.t_end > 0):
        raise ConfigValidationError("time.tau and time.t_end must be positive", invariant="time>0")
    if grid.nx < 4 or grid.ny < 4:
        raise ConfigValidationError("grid needs at least 4x4 cells", invariant="grid.size")

    model = ModelParams(
        c=r.get("model", "c", num, required=True),
        tau=time.tau,
        eta_d=r.get("model", "eta_d", num, 1e-2),
        alpha=r.get("model", "alpha", num, 10.0),
        beta=r.get("model", "beta", num, required=True),
        psi_hat=r.get("model", "psi_hat", num, 0.05),
        eta_n=r.get("model", "eta_n", num, 1e-2),
        bc=r.get("model", "bc", str, SOFT).strip().lower(),
    )
    pml = PmlConfig(
        r.get("pml", "xibar1", num),
        r.get("pml", "xibar2", num),
        r.get("pml", "reflection", num, config.DEFAULT_REFLECTION),
    )
    if not 0 < pml.reflection < 1:
        raise ConfigValidationError("pml.reflection must lie in (0, 1)", invariant="pml.reflection")

    cfg = RunConfig(
        name=r.get("run", "name", str, "custom"),
        domain=domain,
        grid=grid,
        time=time,
        model=model,
        pml=pml,
        embedding=_parse_embedding(r),
        source=_parse_source(r),
        initial=_parse_initial(r),
        amr=_parse_amr(r),
        solver=SolverOptions(
            tol=r.get("solver", "tol", num, env.get("solver_tol", config.DEFAULT_SOLVER_TOL)),
            maxiter_factor=r.get("solver", "maxiter_factor", num,
                                 env.get("maxiter_factor", config.DEFAULT_MAXITER_FACTOR)),
            method=r.get("solver", "method", str),
            restart=r.get("solver", "restart", integer, config.GMRES_RESTART),
        ),
        output=OutputConfig(
            directory=r.get("output", "directory", str, env.get("output_dir", config.DEFAULT_OUTPUT_DIR)),
            snapshot_interval=r.get("output", "snapshot_interval", num, 0.0),
            energy_interval=r.get("output", "energy_interval", integer, 1),
            checkpoint_interval=r.get("output", "checkpoint_interval", integer, 0),
            async_writes=r.get("output", "async", parse_bool, True),
        ),
    )
    validate(cfg)
    return cfg


def _parse_embedding(r):
    kind = r.get("embedding", "shape", str, "none").strip().lower()
    num = parse_number
    if kind == "none":
        return EmbeddingConfig()
    if kind == "circle":
        shape = Circle(r.get("embedding", "center", parse_point, required=True),
                       r.get("embedding", "radius", num, required=True))
    elif kind == "star":
        shape = Star(
            r.get("embedding", "center", parse_point, required=True),
            r.get("embedding", "r0", num, required=True),
            r.get("embedding", "r1", num, required=True),
            r.get("embedding", "lobes", parse_int, required=True),
        )
    elif kind == "polygon":
        shape = Polygon(r.get("embedding", "vertices", parse_points, required=True))
    else:
        raise ConfigValidationError(f"unknown embedding shape '{kind}'", invariant="embedding.shape")
    motion = RigidMotion(
        r.get("embedding", "velocity", parse_point, (0.0, 0.0)),
        r.get("embedding", "acceleration", parse_point, (0.0, 0.0)),
    )
    return EmbeddingConfig(shape, motion, r.get("embedding", "eps", num, required=True))


def _parse_source(r):
    if not r.parser.has_section("source"):
        return None
    return SourceSpec(
        center=r.get("source", "center", parse_point, required=True),
        eta=r.get("source", "eta", parse_number, required=True),
        w=r.get("source", "w", parse_number, required=True),
        sigma=r.get("source", "sigma", parse_number, required=True),
        t0=r.get("source", "t0", parse_number, 0.0),
    )


def _parse_initial(r):
    kind = r.get("initial", "kind", str, "zero").strip().lower()
    if kind not in INITIAL_KINDS:
        raise ConfigValidationError(f"initial.kind must be one of {INITIAL_KINDS}", invariant="initial.kind")
    initial = InitialConfig(
        kind,
        r.get("initial", "center", parse_point, (0.0, 0.0)),
        r.get("initial", "width", parse_number, 1.0),
    )
    if not initial.width > 0:
        raise ConfigValidationError("initial.width must be positive", invariant="initial.width>0")
    return initial


def _parse_amr(r):
    num, integer = parse_number, parse_int
    thresholds = SensorThresholds(
        tau_emb=r.get("amr", "tau_emb", num, config.DEFAULT_TAU_EMB),
        tau_pml=r.get("amr", "tau_pml", num, config.DEFAULT_TAU_PML),
        tau_sol=r.get("amr", "tau_sol", num, config.DEFAULT_TAU_SOL),
        buffer_cells=r.get("amr", "buffer_cells", integer, config.DEFAULT_BUFFER_CELLS),
        regrid_interval=r.get("amr", "regrid_interval", integer, config.DEFAULT_REGRID_INTERVAL),
        tile=r.get("amr", "tile", integer, config.DEFAULT_TILE),
        efficiency=r.get("amr", "efficiency", num, config.DEFAULT_GRID_EFFICIENCY),
    )
    max_level = r.get("amr", "max_level", integer, config.DEFAULT_MAX_LEVEL)
    if not 0 <= max_level <= config.MAX_LEVEL_LIMIT:
        raise ConfigValidationError(
            f"amr.max_level must lie in [0, {config.MAX_LEVEL_LIMIT}]", invariant="amr.max_level"
        )
    return AmrConfig(
        enabled=r.get("amr", "enabled", parse_bool, False),
        max_level=max_level,
        thresholds=thresholds,
        workers=r.get("amr", "workers", integer, 1),
    )


# ── Validation ───────────────────────────────────────────────


def validate(cfg):
    """Check cross-section invariants; warns when the step is large for the grid."""
    layout = cfg.layout()
    grid = cfg.base_grid()
    emb = cfg.embedding
    if cfg.has_object:
        emb.motion.check_subsonic(cfg.model.c)
        if cfg.model.bc == HARD and emb.motion.is_accelerated:
            raise UnsupportedMotion("the hard boundary treatment needs zero acceleration")
        if not emb.eps > 0:
            raise ConfigValidationError("embedding.eps must be positive", invariant="eps>0")
        sweep_clearance(emb.shape, emb.motion, cfg.time.t_end, emb.eps, layout)
    if not cfg.solver.tol > 0:
        raise ConfigValidationError("solver.tol must be positive", invariant="solver.tol>0")
    if cfg.solver.method not in (None, "cg", "bicgstab", "gmres"):
        raise ConfigValidationError(f"unknown solver.method '{cfg.solver.method}'", invariant="solver.method")
    if cfg.amr.workers < 1:
        raise ConfigValidationError("amr.workers must be >= 1", invariant="amr.workers>=1")
    if cfg.output.energy_interval < 0 or cfg.output.checkpoint_interval < 0 or cfg.output.snapshot_interval < 0:
        raise ConfigValidationError("output intervals must be nonnegative", invariant="output.interval>=0")
    courant = cfg.model.c * cfg.time.tau / min(grid.hx, grid.hy)
    if courant > 1.0:
        logger.warning("c*tau/h = %.3g > 1: the scheme stays stable but accuracy degrades", courant)
    return cfg


# ── Serialization ────────────────────────────────────────────


def serialize_config(cfg):
    """Config text that parses back to an equal ``RunConfig``."""
    parser = configparser.ConfigParser(interpolation=None)
    f, pt = _format_number, _format_point
    d, m = cfg.domain, cfg.model
    parser["run"] = {"name": cfg.name}
    parser["domain"] = {"a1": f(d.a1), "a2": f(d.a2), "l1": f(d.l1), "l2": f(d.l2)}
    parser["grid"] = {"nx": f(cfg.grid.nx), "ny": f(cfg.grid.ny)}
    parser["time"] = {"tau": f(cfg.time.tau), "t_end": f(cfg.time.t_end)}
    parser["model"] = {
        "c": f(m.c), "bc": m.bc, "eta_d": f(m.eta_d), "alpha": f(m.alpha), "beta": f(m.beta),
        "psi_hat": f(m.psi_hat), "eta_n": f(m.eta_n),
    }
    pml = {"reflection": f(cfg.pml.reflection)}
    if cfg.pml.xibar1 is not None:
        pml["xibar1"] = f(cfg.pml.xibar1)
    if cfg.pml.xibar2 is not None:
        pml["xibar2"] = f(cfg.pml.xibar2)
    parser["pml"] = pml

    shape = cfg.embedding.shape
    if shape is None:
        parser["embedding"] = {"shape": "none"}
    else:
        section = {"shape": shape.kind, "eps": f(cfg.embedding.eps),
                   "velocity": pt(cfg.embedding.motion.velocity),
                   "acceleration": pt(cfg.embedding.motion.acceleration)}
        if isinstance(shape, Circle):
            section.update(center=pt(shape.center), radius=f(shape.radius))
        elif isinstance(shape, Star):
            section.update(center=pt(shape.center), r0=f(shape.r0), r1=f(shape.r1), lobes=f(int(shape.lobes)))
        else:
            section["vertices"] = "; ".join(pt(v) for v in shape.vertices)
        parser["embedding"] = section

    if cfg.source is not None:
        s = cfg.source
        parser["source"] = {"center": pt(s.center), "eta": f(s.eta), "w": f(s.w), "sigma": f(s.sigma),
                            "t0": f(s.t0)}
    i = cfg.initial
    parser["initial"] = {"kind": i.kind, "center": pt(i.center), "width": f(i.width)}
    a, th = cfg.amr, cfg.amr.thresholds
    parser["amr"] = {
        "enabled": f(a.enabled), "max_level": f(a.max_level), "workers": f(a.workers),
        "tau_emb": f(th.tau_emb), "tau_pml": f(th.tau_pml), "tau_sol": f(th.tau_sol),
        "buffer_cells": f(th.buffer_cells), "regrid_interval": f(th.regrid_interval), "tile": f(th.tile),
        "efficiency": f(th.efficiency),
    }
    solver = {"tol": f(cfg.solver.tol), "maxiter_factor": f(cfg.solver.maxiter_factor),
              "restart": f(cfg.solver.restart)}
    if cfg.solver.method:
        solver["method"] = cfg.solver.method
    parser["solver"] = solver
    o = cfg.output
    parser["output"] = {
        "directory": o.directory, "snapshot_interval": f(o.snapshot_interval),
        "energy_interval": f(o.energy_interval), "checkpoint_interval": f(o.checkpoint_interval),
        "async": f(o.async_writes),
    }

    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in parser[section].items())
        lines.append("")
    return "\n".join(lines)


def load_config(path, environ=None, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, environ, overrides)
