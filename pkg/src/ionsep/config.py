"""YAML run configuration: parsing, validation and the bundled examples.

Every section is optional and falls back to the package defaults.  Unknown
keys and badly typed values are reported with their line and column.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from .crystal import CrystalConfig, IonSpecies
from .protocols import OnTheFlyParams, PrecompensatedParams, ProtocolConfig
from .studies import OptimizationProblem
from .waveforms import SEGMENT_NAMES

BUNDLED = ("bmb_section3", "bmb_section4")

_ION = {"mass": float, "name": str, "charge": int}
_SEGMENT = {"a": list, "b": list}
SCHEMA = {
    "crystal": {
        "data_ion": _ION,
        "helper_ion": _ION,
        "omega0": float,
        "omega_ip": float,
        "coulomb_constant": float,
        "hbar": float,
    },
    "protocol": {
        "mode": str,
        "dt": float,
        "record_every": int,
        "n_max": int,
        "reversed": bool,
    },
    "precompensated": {
        "tau": float,
        "tau0": float,
        "tau_up": float,
        "eta": float,
        "ramp_applies_to": str,
    },
    "onthefly": {
        "tau1": float,
        "tau2": float,
        "floor_ratio": float,
        "eta": float,
        "catch_threshold": float,
        "enforce_boundary_conditions": bool,
        "hold_before": float,
        "hold_after": float,
        "segments": {name: _SEGMENT for name in SEGMENT_NAMES},
    },
    "montecarlo": {
        "max_fractions": list,
        "n_samples": int,
        "seed": int,
    },
    "optimize": {
        "max_evals": int,
        "target_total": float,
        "initial_step": float,
        "staged": bool,
        "start": str,
    },
}


class ConfigError(ValueError):
    """Unreadable, malformed or invalid configuration."""


@dataclass(frozen=True)
class MonteCarloSettings:
    max_fractions: tuple = (1e-5, 5e-5)
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.max_fractions:
            raise ValueError("max_fractions must not be empty")
        if any(not f >= 0 for f in self.max_fractions):
            raise ValueError("max_fractions must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)
    optimize: OptimizationProblem = field(default_factory=OptimizationProblem)
    source: str = None

    def to_dict(self):
        return {
            "protocol": self.protocol.to_dict(),
            "montecarlo": asdict(self.montecarlo),
            "optimize": asdict(self.optimize),
            "source": self.source,
        }

    def with_seed(self, seed):
        return replace(self, montecarlo=replace(self.montecarlo, seed=int(seed)))

    def with_dt(self, dt):
        return replace(self, protocol=replace(self.protocol, dt=float(dt)))


def _where(node):
    m = node.start_mark
    return f"line {m.line + 1}, column {m.column + 1}"


def _scalar(node, kind, path):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{path}: expected a {kind.__name__} at {_where(node)}")
    value = node.value
    tag = node.tag.rsplit(":", 1)[-1]
    if kind is bool:
        if tag != "bool":
            raise ConfigError(f"{path}: expected true/false at {_where(node)}")
        return value.lower() in ("true", "yes", "on")
    if kind is int:
        if tag != "int":
            raise ConfigError(f"{path}: expected an integer at {_where(node)}")
        return int(value, 0)
    if kind is float:
        try:
            # fractions such as 1/30 are accepted for readability
            out = float(Fraction(value)) if "/" in value else float(value)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path}: expected a number at {_where(node)}") from None
        if not math.isfinite(out):
            raise ConfigError(f"{path}: value must be finite at {_where(node)}")
        return out
    return str(value)


def _convert(node, schema, path):
    if isinstance(schema, dict):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError(f"{path or 'config'}: expected a mapping at {_where(node)}")
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown key {sub!r} at {_where(key_node)}")
            if key in out:
                raise ConfigError(f"duplicate key {sub!r} at {_where(key_node)}")
            out[key] = _convert(value_node, schema[key], sub)
        return out
    if schema is list:
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError(f"{path}: expected a list at {_where(node)}")
        return [_scalar(item, float, f"{path}[{i}]") for i, item in enumerate(node.value)]
    return _scalar(node, schema, path)


def _build(section, cls, kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _crystal(d):
    kwargs = {}
    for role in ("data_ion", "helper_ion"):
        if role in d:
            ion = d[role]
            if "mass" not in ion:
                raise ConfigError(f"crystal.{role}: 'mass' is required")
            kwargs[role] = _build(f"crystal.{role}", IonSpecies, ion)
    for key in ("coulomb_constant", "hbar"):
        if key in d:
            kwargs[key] = d[key]
    if "omega0" in d and "omega_ip" in d:
        raise ConfigError("crystal: give either omega0 or omega_ip, not both")
    try:
        if "omega_ip" in d:
            return CrystalConfig.from_in_phase_frequency(d["omega_ip"], **kwargs)
        if "omega0" in d:
            kwargs["omega0"] = d["omega0"]
        return CrystalConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"crystal: {exc}") from None


def _onthefly(d):
    d = dict(d)
    segments = d.pop("segments", None)
    if segments is not None:
        missing = [n for n in SEGMENT_NAMES if n not in segments]
        if missing:
            raise ConfigError(f"onthefly.segments: missing {missing}")
        coeffs = {}
        for name in SEGMENT_NAMES:
            seg = segments[name]
            if set(seg) != {"a", "b"}:
                raise ConfigError(f"onthefly.segments.{name}: needs both 'a' and 'b'")
            if len(seg["a"]) != 5 or len(seg["b"]) != 4:
                raise ConfigError(f"onthefly.segments.{name}: 'a' needs 5 and 'b' needs 4 values")
            coeffs[name] = (seg["a"], seg["b"])
        d["coefficients"] = coeffs
    return _build("onthefly", OnTheFlyParams, d)


def _read_text(source):
    name = str(source)
    if name in BUNDLED:
        return resources.files("ionsep.configs").joinpath(f"{name}.yaml").read_text(), name
    path = Path(source)
    try:
        return path.read_text(), str(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {name!r}: {exc.strerror}") from None


def parse_config_text(text, source="<string>"):
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        m = exc.problem_mark
        where = f"line {m.line + 1}, column {m.column + 1}" if m else "unknown position"
        raise ConfigError(f"{source}: YAML parse error at {where}: {exc.problem}") from None
    if root is None:
        raise ConfigError(f"{source}: config file is empty")
    d = _convert(root, SCHEMA, "")

    crystal = _crystal(d.get("crystal", {}))
    pre = _build("precompensated", PrecompensatedParams, d.get("precompensated", {}))
    otf = _onthefly(d.get("onthefly", {}))
    protocol = _build("protocol", ProtocolConfig,
                      dict(d.get("protocol", {}), crystal=crystal, precompensated=pre,
                           onthefly=otf))
    mc = dict(d.get("montecarlo", {}))
    if "max_fractions" in mc:
        mc["max_fractions"] = tuple(mc["max_fractions"])
    montecarlo = _build("montecarlo", MonteCarloSettings, mc)
    optimize = _build("optimize", OptimizationProblem, d.get("optimize", {}))
    return RunConfig(protocol, montecarlo, optimize, source)


def parse_config(source):
    """Load a :class:`RunConfig` from a YAML file path or a bundled config name."""
    text, name = _read_text(source)
    return parse_config_text(text, name)


def dump_config(run_config):
    """YAML text that parses back to ``run_config``."""
    p = run_config.protocol
    c = p.crystal
    ion = lambda s: {"mass": s.mass, "name": s.name, "charge": s.charge}  # noqa: E731
    doc = {
        "crystal": {
            "data_ion": ion(c.data_ion),
            "helper_ion": ion(c.helper_ion),
            "omega0": c.omega0,
            "coulomb_constant": c.coulomb_constant,
            "hbar": c.hbar,
        },
        "protocol": {"mode": p.mode, "dt": p.dt, "record_every": p.record_every,
                     "n_max": p.n_max, "reversed": p.reversed},
        "precompensated": asdict(p.precompensated),
        "onthefly": {
            **{k: v for k, v in asdict(p.onthefly).items() if k != "coefficients"},
            "segments": {n: {"a": list(a), "b": list(b)}
                         for n, (a, b) in p.onthefly.coefficients.items()},
        },
        "montecarlo": {**asdict(run_config.montecarlo),
                       "max_fractions": list(run_config.montecarlo.max_fractions)},
        "optimize": asdict(run_config.optimize),
    }
    return yaml.safe_dump(doc, sort_keys=False)


__all__ = [
    "BUNDLED",
    "ConfigError",
    "MonteCarloSettings",
    "RunConfig",
    "dump_config",
    "parse_config",
    "parse_config_text",
]
