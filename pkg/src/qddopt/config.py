"""Sectioned key-value run configuration with parse-time validation."""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .adjoint import CostConfig
from .errors import ConfigError
from .mesh import ContactSpec, DeviceGeometry
from .optimize import ArmijoConfig
from .state import EnthalpyModel, SolverConfig


@dataclass(frozen=True)
class GeometrySection:
    width: float = 1.0
    height: float = 1.0
    source: tuple[float, float] = (0.0, 0.15)
    gate: tuple[float, float] = (0.425, 0.575)
    drain: tuple[float, float] = (0.85, 1.0)
    contact_edge: str = "top"
    nplus_regions: tuple[tuple[float, float, float, float], ...] = ((0.0, 0.25, 0.8, 1.0), (0.75, 1.0, 0.8, 1.0))
    channel_doping: float = 0.01
    nplus_doping: float = 1.0
    smoothing_length: float = 2.0
    nx: int = 80
    ny: int = 80


@dataclass(frozen=True)
class PhysicsSection:
    lam2: float = 0.0017
    eps2: float = 1.88e-4
    delta_c: float = 1.0
    gate_schottky: float = 0.1
    voltage_scale: float = 0.1
    u_source: float = 0.0375
    u_gate: float = 0.075
    u_drain: float = 0.15
    v_ext: float = 0.0


@dataclass(frozen=True)
class CostSection:
    kind: str = "current_tracking"
    gamma: float = 1.0
    target_factor: float = 2.0
    target_current: float | None = None
    tracking_weight: float = 1.0


@dataclass(frozen=True)
class SweepSection:
    n_max: int = 5
    grid: int = 40
    warm_start: bool = True


@dataclass(frozen=True)
class GradcheckSection:
    grid: int = 20
    directions: int = 5
    seed: int = 0


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    solver: SolverConfig = field(default_factory=SolverConfig)
    cost: CostSection = field(default_factory=CostSection)
    optimizer: ArmijoConfig = field(default_factory=ArmijoConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    output: OutputSection = field(default_factory=OutputSection)
    source: str = "<defaults>"

    def device_geometry(self) -> DeviceGeometry:
        g, p = self.geometry, self.physics
        contacts = (
            ContactSpec("source", g.contact_edge, g.source, p.voltage_scale * p.u_source, 1.0),
            ContactSpec("gate", g.contact_edge, g.gate, p.voltage_scale * p.u_gate, p.gate_schottky),
            ContactSpec("drain", g.contact_edge, g.drain, p.voltage_scale * p.u_drain, 1.0),
        )
        return DeviceGeometry(g.width, g.height, contacts, g.nplus_regions, g.channel_doping, g.nplus_doping)

    def cost_config(self, I_ref: float) -> CostConfig:
        c = self.cost
        I_d = c.target_current if c.target_current is not None else c.target_factor * I_ref
        return CostConfig(kind="current_tracking", gamma=c.gamma, I_d=I_d, tracking_weight=c.tracking_weight)

    def echo(self) -> list[str]:
        """``section.key = value`` lines for every setting, in a fixed order."""
        out = []
        for name in ("geometry", "physics", "solver", "cost", "optimizer", "sweep", "gradcheck", "output"):
            section = getattr(self, name)
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, EnthalpyModel):
                    out.append(f"{name}.enthalpy_cap = {value.cap!r}")
                else:
                    out.append(f"{name}.{f.name} = {value!r}")
        return out


# keys accepted in each section; solver.enthalpy_cap maps onto the enthalpy model
_SECTIONS = {
    "geometry": GeometrySection,
    "physics": PhysicsSection,
    "solver": SolverConfig,
    "cost": CostSection,
    "optimizer": ArmijoConfig,
    "sweep": SweepSection,
    "gradcheck": GradcheckSection,
    "output": OutputSection,
}

_POSITIVE = {
    "geometry": ("width", "height", "channel_doping", "nplus_doping"),
    "physics": ("lam2", "delta_c", "gate_schottky", "voltage_scale"),
    "cost": ("gamma", "tracking_weight"),
    "solver": ("nonlinear_tol", "newton_tol", "max_gummel", "max_newton", "damping", "min_damping"),
}


def _keys(cls) -> dict[str, object]:
    keys = {f.name: f for f in fields(cls) if f.name != "enthalpy"}
    if cls is SolverConfig:
        keys["enthalpy_cap"] = None
    return keys


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip().lower()
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            where.setdefault((section, key), lineno)
    return where


def _floats(raw: str, count: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in raw.replace(",", " ").split())
    if count is not None and len(vals) != count:
        raise ValueError(f"expected {count} numbers, got {len(vals)}")
    return vals


def _convert(section: str, key: str, raw: str, default):
    raw = raw.strip()
    if key in ("source", "gate", "drain"):
        return _floats(raw, 2)
    if key == "nplus_regions":
        return tuple(_floats(part, 4) for part in raw.split(";") if part.strip())
    if key == "target_current":
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _defaults(cls) -> dict[str, object]:
    inst = cls()
    out = {k: getattr(inst, k) for k in _keys(cls) if k != "enthalpy_cap"}
    if cls is SolverConfig:
        out["enthalpy_cap"] = inst.enthalpy.cap
    return out


def _validate(name: str, values: dict, where) -> None:
    for key in _POSITIVE.get(name, ()):
        if not values[key] > 0:
            raise ConfigError(f"{name}.{key} must be > 0{where(key)}")
    if name == "physics":
        if values["eps2"] < 0:
            raise ConfigError(f"physics.eps2 must be >= 0{where('eps2')}")
    if name == "geometry":
        for key in ("nx", "ny"):
            if values[key] < 3:
                raise ConfigError(f"geometry.{key} must be >= 3{where(key)}")
        if values["smoothing_length"] < 0:
            raise ConfigError(f"geometry.smoothing_length must be >= 0{where('smoothing_length')}")
    if name == "cost":
        if values["kind"] != "current_tracking":
            raise ConfigError(f"cost.kind must be current_tracking{where('kind')}")
        if values["target_current"] is None and not values["target_factor"] > 0:
            raise ConfigError(f"cost.target_factor must be > 0{where('target_factor')}")
    if name == "sweep":
        if values["n_max"] < 0:
            raise ConfigError(f"sweep.n_max must be >= 0{where('n_max')}")
        if values["grid"] < 3:
            raise ConfigError(f"sweep.grid must be >= 3{where('grid')}")
    if name == "gradcheck":
        if values["grid"] < 3 or values["directions"] < 1:
            raise ConfigError(f"gradcheck.grid must be >= 3 and gradcheck.directions >= 1{where('grid')}")


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: syntax error: {exc}") from exc
    lines = _line_numbers(text)

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        allowed = _keys(_SECTIONS[section])
        for key in parser[section]:
            if key not in allowed:
                line = lines.get((section, key))
                at = f" (line {line})" if line else ""
                raise ConfigError(f"{source}{at}: unknown key {section}.{key}")

    built = {}
    for name, cls in _SECTIONS.items():
        values = _defaults(cls)
        if parser.has_section(name):
            for key, raw in parser[name].items():
                line = lines.get((name, key))
                try:
                    values[key] = _convert(name, key, raw, values[key])
                except ValueError as exc:
                    at = f" (line {line})" if line else ""
                    raise ConfigError(f"{source}{at}: {name}.{key}: {exc}") from exc

        def where(key, name=name):
            line = lines.get((name, key))
            return f" ({source}, line {line})" if line else ""

        _validate(name, values, where)
        if cls is SolverConfig:
            cap = values.pop("enthalpy_cap")
            values["enthalpy"] = EnthalpyModel(cap=cap)
        try:
            built[name] = cls(**values)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    cfg = RunConfig(**built, source=source)
    try:
        cfg.device_geometry()
    except Exception as exc:
        raise ConfigError(f"{source}: invalid geometry: {exc}") from exc
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def with_overrides(cfg: RunConfig, grid: int | None = None, eps2: float | None = None,
                   directory: str | None = None) -> RunConfig:
    from dataclasses import replace

    if grid is not None:
        if grid < 3:
            raise ConfigError("--grid must be >= 3")
        cfg = replace(cfg, geometry=replace(cfg.geometry, nx=grid, ny=grid), sweep=replace(cfg.sweep, grid=grid))
    if eps2 is not None:
        if eps2 < 0:
            raise ConfigError("--epsilon2 must be >= 0")
        cfg = replace(cfg, physics=replace(cfg.physics, eps2=eps2))
    if directory is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=directory))
    return cfg
