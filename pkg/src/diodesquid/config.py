"""Run configuration read from YAML.

Physical values carry a unit suffix in the file (``_hz``, ``_a``, ``_h``,
``_f``, ``_t``, ``_rad``, ``_m``, ``_w``, ``_wb``).  Entries ending in
``_hz`` are ordinary frequencies and are converted to angular frequency
here, once.  Unknown keys are rejected with their line number.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .constants import PhysicalConstants
from .cpr import DEFAULT_GRID, CprTable, ScanGrid, cpr_diode, homogeneous_table
from .errors import ConfigError, ValidationError
from .params import PUMP_REFERENCE_OMEGA, CircuitParams, DiodeModelParams
from .squid import FoldPoint, proportional_switching

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------- YAML with line numbers

class _Mapping(dict):
    """Dict that remembers the 1-based line of each key."""

    lines: dict
    line: int


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Mapping()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"line {key_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
# plain YAML 1.1 reads 1e10 or 1.0e10 (no exponent sign) as a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _where(source: str, mapping, key=None) -> str:
    line = getattr(mapping, "lines", {}).get(key) if key is not None else getattr(mapping, "line", None)
    return f"{source}:{line}" if line else source


# ---------------------------------------------------------------- field schema

# longest suffix first: a coefficient per hertz becomes one per rad/s
_UNIT_SCALE = {"_per_hz": 1.0 / TWO_PI, "_hz": TWO_PI}


def _number(value, where, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where}: {key} must be finite")
    scale = next((s for suffix, s in _UNIT_SCALE.items() if key.endswith(suffix)), 1.0)
    return value * scale


def _numbers(value, where, key):
    if not isinstance(value, list):
        raise ConfigError(f"{where}: {key} must be a list of numbers")
    return tuple(_number(v, where, key) for v in value)


def _integer(value, where, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: {key} must be an integer, got {value!r}")
    return value


def _flag(value, where, key):
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: {key} must be true or false")
    return value


def _text(value, where, key):
    if not isinstance(value, str):
        raise ConfigError(f"{where}: {key} must be a string")
    return value


def _texts(value, where, key):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where}: {key} must be a list of strings")
    return tuple(value)


def _optional_number(value, where, key):
    return None if value is None else _number(value, where, key)


def _read_section(data, schema: dict, source: str, section: str) -> dict:
    """Convert the keys of one section; ``schema`` maps file key to (attribute, converter)."""
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(source, data)}: section {section!r} must be a mapping")
    out = {}
    for key, value in data.items():
        where = _where(source, data, key)
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r} in section {section!r}")
        attr, conv = schema[key]
        out[attr] = conv(value, where, key)
    return out


# ---------------------------------------------------------------- sections

_CIRCUIT_KEYS = {
    "omega_0b_hz": ("omega_0b", _number),
    "L_b_h": ("L_b", _number),
    "L_loop_h": ("L_loop", _number),
    "C_tot_f": ("C_tot", _number),
    "kappa_hz": ("kappa", _number),
    "kappa_ext_hz": ("kappa_ext", _number),
    "kappa_nl_hz": ("kappa_nl", _number),
}


@dataclass(frozen=True)
class CircuitConfig:
    """Default circuit plus per-field overrides (keyed by field in tesla)."""

    default: CircuitParams = CircuitParams(omega_0b=TWO_PI * 10.380e9, L_b=397e-12, L_loop=44e-12)
    per_field: dict = field(default_factory=dict)

    def at(self, field_value: float) -> CircuitParams:
        changes = {}
        for B, values in self.per_field.items():
            if math.isclose(B, field_value, rel_tol=0.0, abs_tol=1e-9):
                changes = values
        return self.default.replace(field=float(field_value), **changes)


@dataclass(frozen=True)
class DiodeModelConfig:
    """CPR model: ``kind`` is ``diode`` or ``homogeneous`` (sine plus linear inductance)."""

    kind: str = "diode"
    I00: float = 35e-6
    epsilon: float = 0.78
    b: float = 1.0
    deltaB_per_tesla: float = TWO_PI / 0.305
    delta_ell: float = 1.276
    delta_ell_per_field: dict = field(default_factory=dict)
    I0: float = 30e-6
    L_lin: float = 12e-12
    grid: ScanGrid = DEFAULT_GRID

    def delta_ell_at(self, field_value: float) -> float:
        for B, value in self.delta_ell_per_field.items():
            if math.isclose(B, field_value, rel_tol=0.0, abs_tol=1e-9):
                return value
        return self.delta_ell

    def params(self, field_value: float) -> DiodeModelParams:
        return DiodeModelParams(I00=self.I00, epsilon=self.epsilon, b=self.b,
                                delta_B=self.deltaB_per_tesla * field_value,
                                delta_ell=self.delta_ell_at(field_value))

    def table(self, field_value: float) -> CprTable:
        if self.kind == "homogeneous":
            return homogeneous_table(self.I0, self.L_lin)
        return cpr_diode(self.params(field_value), self.grid)


@dataclass(frozen=True)
class PumpConfig:
    zeta0: float = 4e-5
    zeta1: float = 0.0
    omega_ref: float = PUMP_REFERENCE_OMEGA
    detuning: float = TWO_PI * 22e6
    powers: tuple = (1e-8, 2e-8, 4e-8, 6e-8, 8e-8, 1e-7)


@dataclass(frozen=True)
class SweepConfig:
    """Flux sweeps: window in flux quanta around the sweetspot and the switching rule."""

    fields: tuple = (0.0,)
    flux_window: tuple = (-1.5, 1.5)
    points: int = 601
    switching_fraction: float | None = 0.6

    def rule(self, table: CprTable):
        if self.switching_fraction is None:
            return FoldPoint()
        return proportional_switching(table, self.switching_fraction)


@dataclass(frozen=True)
class FitConfig:
    jump_threshold: float = 5.0
    jump_confirm: float = 10.0
    jump_half_window: int = 10
    sweetspot_window: float = 0.15
    initial: dict = field(default_factory=dict)
    fixed: tuple = ()
    share_delta_ell: bool = False
    bounds: dict = field(default_factory=dict)
    max_nfev: int = 60
    arc_weight: float = 1e-4
    correction_cap: float = 100e-9
    kerr_max_nfev: int = 200
    s21_excise: float = 3.0


@dataclass(frozen=True)
class SyntheticConfig:
    I_b0: float = 1e-3
    delta_phi_b: float = 0.1
    arc_noise: float = TWO_PI * 0.2e6
    s21_sigma: float = 0.003
    s21_points: int = 2001
    kerr_points: int = 12
    kerr_rel_sigma: float = 0.02
    stark_noise: float = 0.0
    reference_freq: float = TWO_PI * 8e9
    reference_L_geo: float = 300e-12
    reference_L_star: float = 6e-4
    squid_L_geo: float = 317e-12
    squid_L_star: float = 4e-4
    B_star: float = 0.45


@dataclass(frozen=True)
class InductanceConfig:
    lambda0: float = 130e-9
    film_thickness: float = 100e-9
    omega_0b0: float | None = None


@dataclass(frozen=True)
class IoConfig:
    arcs: str | None = None
    overrides: str | None = None
    traces: tuple = ()
    kerr_points: str | None = None
    stark_points: str | None = None
    arc_report: str | None = None
    inductance_tables: dict = field(default_factory=dict)
    reference_freqs: str | None = None


@dataclass(frozen=True)
class RunConfig:
    constants: PhysicalConstants = PhysicalConstants()
    circuit: CircuitConfig = CircuitConfig()
    diode_model: DiodeModelConfig = DiodeModelConfig()
    pump: PumpConfig = PumpConfig()
    sweep: SweepConfig = SweepConfig()
    fit: FitConfig = FitConfig()
    synthetic: SyntheticConfig = SyntheticConfig()
    inductance: InductanceConfig = InductanceConfig()
    io: IoConfig = IoConfig()
    source: str = "<defaults>"

    def as_dict(self) -> dict:
        """All settings in internal (SI, angular) units, for reports."""
        out = {}
        for f in fields(self):
            if f.name == "source":
                continue
            value = getattr(self, f.name)
            out[f.name] = _as_plain(value)
        return out


def _as_plain(value):
    if hasattr(value, "__dataclass_fields__"):
        return {k: _as_plain(v) for k, v in asdict(value).items()}
    if isinstance(value, dict):
        return {k: _as_plain(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [_as_plain(v) for v in value]
    return value


# ---------------------------------------------------------------- loading

def _constants(data, source):
    schema = {
        "flux_quantum_wb": ("flux_quantum", _number),
        "elementary_charge_c": ("elementary_charge", _number),
        "hbar_js": ("hbar", _number),
    }
    return PhysicalConstants(**_read_section(data, schema, source, "constants"))


def _circuit(data, source):
    schema = dict(_CIRCUIT_KEYS)
    schema["fields"] = ("fields", lambda v, w, k: v)
    values = _read_section(data, schema, source, "circuit")
    raw_fields = values.pop("fields", None) or []
    base = CircuitConfig().default
    try:
        default = base.replace(**values)
    except ValidationError as exc:
        raise ConfigError(f"{_where(source, data)}: circuit: {exc}") from None
    per_field = {}
    if not isinstance(raw_fields, list):
        raise ConfigError(f"{_where(source, data, 'fields')}: circuit.fields must be a list")
    for entry in raw_fields:
        if not isinstance(entry, dict) or "field_t" not in entry:
            raise ConfigError(f"{_where(source, data, 'fields')}: each circuit.fields entry needs field_t")
        entry_schema = dict(_CIRCUIT_KEYS)
        entry_schema["field_t"] = ("field", _number)
        v = _read_section(entry, entry_schema, source, "circuit.fields")
        B = v.pop("field")
        try:
            default.replace(**v)
        except ValidationError as exc:
            raise ConfigError(f"{_where(source, entry)}: circuit at {B:g} T: {exc}") from None
        per_field[B] = v
    return CircuitConfig(default=default, per_field=per_field)


def _grid(value, where, key):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: {key} must be a mapping")
    schema = {
        "z_step": ("z_step", _number),
        "delta_step_rad": ("delta_step", _number),
        "z_overscan": ("z_overscan", _number),
        "delta_overscan_rad": ("delta_overscan", _number),
        "discard_tol": ("discard_tol", _number),
        "residual_tol": ("residual_tol", _number),
        "bracket_width": ("bracket_width", _number),
        "max_refine": ("max_refine", _integer),
    }
    try:
        return ScanGrid(**_read_section(value, schema, where.rsplit(":", 1)[0], key))
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _per_field_values(value, where, key):
    if not isinstance(value, list):
        raise ConfigError(f"{where}: {key} must be a list of {{field_t, delta_ell}} entries")
    out = {}
    for entry in value:
        if not isinstance(entry, dict) or set(entry) != {"field_t", "delta_ell"}:
            raise ConfigError(f"{where}: each {key} entry needs exactly field_t and delta_ell")
        out[_number(entry["field_t"], where, "field_t")] = _number(entry["delta_ell"], where, "delta_ell")
    return out


def _diode_model(data, source):
    schema = {
        "kind": ("kind", _text),
        "I00_a": ("I00", _number),
        "epsilon": ("epsilon", _number),
        "b": ("b", _number),
        "deltaB_per_tesla_rad": ("deltaB_per_tesla", _number),
        "delta_ell": ("delta_ell", _number),
        "delta_ell_per_field": ("delta_ell_per_field", _per_field_values),
        "I0_a": ("I0", _number),
        "L_lin_h": ("L_lin", _number),
        "grid": ("grid", _grid),
    }
    values = _read_section(data, schema, source, "diode_model")
    if values.get("kind", "diode") not in ("diode", "homogeneous"):
        raise ConfigError(f"{_where(source, data, 'kind')}: kind must be 'diode' or 'homogeneous'")
    cfg = DiodeModelConfig(**values)
    try:
        cfg.params(0.0)
    except ValidationError as exc:
        raise ConfigError(f"{_where(source, data)}: diode_model: {exc}") from None
    return cfg


def _pump(data, source):
    schema = {
        "zeta0": ("zeta0", _number),
        "zeta1_per_hz": ("zeta1", _number),
        "reference_freq_hz": ("omega_ref", _number),
        "detuning_hz": ("detuning", _number),
        "powers_w": ("powers", _numbers),
    }
    return PumpConfig(**_read_section(data, schema, source, "pump"))


def _sweep(data, source):
    schema = {
        "fields_t": ("fields", _numbers),
        "flux_window_phi0": ("flux_window", _numbers),
        "points": ("points", _integer),
        "switching_fraction": ("switching_fraction", _optional_number),
    }
    values = _read_section(data, schema, source, "sweep")
    if "flux_window" in values and len(values["flux_window"]) != 2:
        raise ConfigError(f"{_where(source, data, 'flux_window_phi0')}: flux window needs two values")
    return SweepConfig(**values)


def _initial(value, where, key):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: {key} must be a mapping")
    schema = {
        "I00_a": ("I00", _number),
        "epsilon": ("epsilon", _number),
        "b": ("b", _number),
        "deltaB_per_tesla_rad": ("deltaB_per_tesla", _number),
        "delta_ell": ("delta_ell", _number),
    }
    return _read_section(value, schema, where.rsplit(":", 1)[0], key)


def _bounds(value, where, key):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: {key} must be a mapping")
    names = {"I00_a": "I00", "epsilon": "epsilon", "b": "b", "deltaB_per_tesla_rad": "deltaB_per_tesla",
             "delta_phi_b_wb": "delta_phi_b", "delta_ell": "delta_ell"}
    out = {}
    for k, v in value.items():
        if k not in names:
            raise ConfigError(f"{_where(where.rsplit(':', 1)[0], value, k)}: unknown bound {k!r}")
        pair = _numbers(v, where, k)
        if len(pair) != 2 or not pair[0] < pair[1]:
            raise ConfigError(f"{where}: bound {k} must be [low, high] with low < high")
        out[names[k]] = pair
    return out


def _fixed(value, where, key):
    names = _texts(value, where, key)
    allowed = {"I00", "epsilon", "b", "deltaB_per_tesla", "delta_phi_b", "delta_ell"}
    bad = [n for n in names if n not in allowed]
    if bad:
        raise ConfigError(f"{where}: cannot fix unknown parameters {bad}")
    return names


def _fit(data, source):
    schema = {
        "jump_threshold": ("jump_threshold", _number),
        "jump_confirm": ("jump_confirm", _number),
        "jump_half_window": ("jump_half_window", _integer),
        "sweetspot_window": ("sweetspot_window", _number),
        "initial": ("initial", _initial),
        "fixed": ("fixed", _fixed),
        "share_delta_ell": ("share_delta_ell", _flag),
        "bounds": ("bounds", _bounds),
        "max_nfev": ("max_nfev", _integer),
        "arc_weight": ("arc_weight", _number),
        "correction_cap_a": ("correction_cap", _number),
        "kerr_max_nfev": ("kerr_max_nfev", _integer),
        "s21_excise": ("s21_excise", _number),
    }
    return FitConfig(**_read_section(data, schema, source, "fit"))


def _synthetic(data, source):
    schema = {
        "I_b0_a": ("I_b0", _number),
        "delta_phi_b_phi0": ("delta_phi_b", _number),
        "arc_noise_hz": ("arc_noise", _number),
        "s21_sigma": ("s21_sigma", _number),
        "s21_points": ("s21_points", _integer),
        "kerr_points": ("kerr_points", _integer),
        "kerr_rel_sigma": ("kerr_rel_sigma", _number),
        "stark_noise_hz": ("stark_noise", _number),
        "reference_freq_hz": ("reference_freq", _number),
        "reference_L_geo_h": ("reference_L_geo", _number),
        "reference_L_star_h_per_m": ("reference_L_star", _number),
        "squid_L_geo_h": ("squid_L_geo", _number),
        "squid_L_star_h_per_m": ("squid_L_star", _number),
        "B_star_t": ("B_star", _number),
    }
    return SyntheticConfig(**_read_section(data, schema, source, "synthetic"))


def _inductance(data, source):
    schema = {
        "lambda0_m": ("lambda0", _number),
        "film_thickness_m": ("film_thickness", _number),
        "omega_0b0_hz": ("omega_0b0", _optional_number),
    }
    return InductanceConfig(**_read_section(data, schema, source, "inductance"))


def _io(data, source):
    def tables(value, where, key):
        if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
            raise ConfigError(f"{where}: {key} must map table names to paths")
        bad = set(value) - {"reference", "squid", "loop"}
        if bad:
            raise ConfigError(f"{where}: unknown inductance tables {sorted(bad)}")
        return dict(value)

    schema = {
        "arcs": ("arcs", _text),
        "overrides": ("overrides", _text),
        "traces": ("traces", _texts),
        "kerr_points": ("kerr_points", _text),
        "stark_points": ("stark_points", _text),
        "arc_report": ("arc_report", _text),
        "inductance_tables": ("inductance_tables", tables),
        "reference_freqs": ("reference_freqs", _text),
    }
    values = _read_section(data, schema, source, "io")
    base = os.path.dirname(source) if source not in ("<string>", "<defaults>") else ""

    def resolve(p):
        return p if os.path.isabs(p) or not base else os.path.join(base, p)

    for k, v in list(values.items()):
        if isinstance(v, str):
            values[k] = resolve(v)
        elif isinstance(v, tuple):
            values[k] = tuple(resolve(p) for p in v)
        elif isinstance(v, dict):
            values[k] = {n: resolve(p) for n, p in v.items()}
    return IoConfig(**values)


_SECTIONS = {
    "constants": _constants,
    "circuit": _circuit,
    "diode_model": _diode_model,
    "pump": _pump,
    "sweep": _sweep,
    "fit": _fit,
    "synthetic": _synthetic,
    "inductance": _inductance,
    "io": _io,
}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if data is None:
        return RunConfig(source=source)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: the configuration must be a mapping of sections")
    built = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{_where(source, data, key)}: unknown section {key!r}")
        built[key] = _SECTIONS[key](value, source)
    return replace(RunConfig(), source=source, **built)


def load_config(path=None) -> RunConfig:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    source = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source)
