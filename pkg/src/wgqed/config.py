"""INI experiment configuration and run manifests.

Rates and detunings are written in GHz (ordinary frequency) and converted to
angular units on use; times are in ns, angles in degrees unless the key
says ``_rad``.  Every key is optional; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .instrument import InstrumentModel
from .model import DriveConfig, EmitterParams, Pulse, SystemParams, ghz

SWEEP_AXES = (
    "none",
    "detuning_split",
    "beta2",
    "theta",
    "delta1",
    "delta2",
    "laser_detuning",
    "power_mw",
    "qwp_deg",
    "hwp_deg",
)
LASER_MODES = ("symmetric", "emitter1", "emitter2")
FORMATS = ("csv", "svg", "both")
POLARIZATIONS = {
    "H": (1.0, 0.0),
    "V": (0.0, 1.0),
    "D": (1.0, 1.0),
    "A": (1.0, -1.0),
    "R": (1.0, -1j),
    "L": (1.0, 1j),
}


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text):
    return int(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _choice(options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return parse


def _complex_pair(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated complex numbers")
    vals = tuple(complex(p.replace(" ", "")) for p in parts)
    if not all(math.isfinite(v.real) and math.isfinite(v.imag) for v in vals):
        raise ValueError("must be finite")
    return vals


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(complex(v)).strip("()") for v in value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "gamma1_ghz": (_float, 0.73),
        "gamma2_ghz": (_float, 0.79),
        "beta1": (_float, 0.95),
        "beta2": (_float, 0.95),
        "dephasing1_ghz": (_float, 0.0),
        "dephasing2_ghz": (_float, 0.0),
        "delta1_ghz": (_float, 0.0),
        "delta2_ghz": (_float, 0.0),
        "coupling_phase_rad": (_float, 0.0),
    },
    "drive": {
        "mode": (_choice(("cw", "pulsed")), "cw"),
        "route": (_choice(("direct", "polarization")), "direct"),
        "omega1_ghz": (_float, 0.0),
        "omega2_ghz": (_float, 0.0),
        "theta1_rad": (_float, 0.0),
        "theta2_rad": (_float, 0.0),
        "weight1": (_float, 1.0),
        "weight2": (_float, 1.0),
        "area_rad": (_float, math.pi),
        "center_ns": (_float, 0.5),
        "fwhm_ns": (_float, 0.05),
        "area_per_sqrt_mw": (_float, 1.0),
    },
    "polarization": {
        "input": (_choice(tuple(POLARIZATIONS)), "H"),
        "qwp_deg": (_float, 0.0),
        "hwp_deg": (_float, 0.0),
        "qwp_offset_deg": (_float, 0.0),
        "hwp_offset_deg": (_float, 0.0),
        "dipole1": (_complex_pair, (1 + 0j, 1j)),
        "dipole2": (_complex_pair, (1 + 0j, -1j)),
        "scale_ghz": (_float, 0.0),
    },
    "instrument": {
        "enabled": (_bool, True),
        "jitter_fwhm_ns": (_float, 0.35),
        "jitter_center_ns": (_float, 0.0),
        "sd1_ghz": (_float, 0.1),
        "sd2_ghz": (_float, 0.1),
        "sd_correlation": (_float, 0.0),
        "quadrature_order": (_int, 9),
    },
    "sweep": {
        "axis": (_choice(SWEEP_AXES), "none"),
        "start": (_float, 0.0),
        "stop": (_float, 0.0),
        "steps": (_int, 1),
        "axis2": (_choice(SWEEP_AXES), "none"),
        "start2": (_float, 0.0),
        "stop2": (_float, 0.0),
        "steps2": (_int, 1),
        "laser": (_choice(LASER_MODES), "symmetric"),
    },
    "grid": {
        "tau_max_ns": (_float, 5.0),
        "tau_step_ns": (_float, 0.005),
        "t_start_ns": (_float, 0.0),
        "t_stop_ns": (_float, 5.0),
        "t_step_ns": (_float, 0.005),
    },
    "output": {
        "directory": (str, "out"),
        "prefix": (str, ""),
        "format": (_choice(FORMATS), "both"),
        "bloch": (_bool, False),
        "fit": (_bool, True),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration: every schema key has a value."""

    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __post_init__(self):
        full = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for sec, kv in self.values.items():
            full[sec].update(kv)
        object.__setattr__(self, "values", full)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def __getitem__(self, section):
        return self.values[section]

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        unknown = set(changes) - set(SCHEMA[section])
        if unknown:
            raise ConfigError(f"[{section}] unknown key(s): {', '.join(sorted(unknown))}")
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals[section].update(changes)
        return ExperimentConfig(vals, self.source)

    # physics objects -------------------------------------------------

    def system(self) -> SystemParams:
        s = self["system"]
        try:
            return SystemParams(
                (
                    EmitterParams(ghz(s["gamma1_ghz"]), s["beta1"], ghz(s["dephasing1_ghz"]), ghz(s["delta1_ghz"])),
                    EmitterParams(ghz(s["gamma2_ghz"]), s["beta2"], ghz(s["dephasing2_ghz"]), ghz(s["delta2_ghz"])),
                ),
                s["coupling_phase_rad"],
            )
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [system] {exc}") from exc

    def pulse(self, area: float | None = None) -> Pulse:
        d = self["drive"]
        try:
            return Pulse(d["center_ns"], d["fwhm_ns"], d["area_rad"] if area is None else area)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [drive] {exc}") from exc

    def polarization_amplitudes(self) -> np.ndarray:
        from .polarization import DipoleConfig, dipole_amplitudes, jones, waveplate_output

        p = self["polarization"]
        eps = waveplate_output(
            p["qwp_deg"], p["hwp_deg"], jones(*POLARIZATIONS[p["input"]]), (p["qwp_offset_deg"], p["hwp_offset_deg"])
        )
        return dipole_amplitudes(eps, self.dipoles())

    def dipoles(self):
        from .polarization import DipoleConfig

        p = self["polarization"]
        try:
            return DipoleConfig(p["dipole1"], p["dipole2"])
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [polarization] {exc}") from exc

    def drive(self, area: float | None = None) -> DriveConfig:
        """The configured drive; ``area`` overrides the pulse area."""
        d = self["drive"]
        try:
            if d["route"] == "polarization":
                a = self.polarization_amplitudes()
                if d["mode"] == "cw":
                    s = ghz(self["polarization"]["scale_ghz"])
                    return DriveConfig((complex(s * a[0]), complex(s * a[1])))
                return DriveConfig((complex(a[0]), complex(a[1])), self.pulse(area))
            if d["mode"] == "cw":
                return DriveConfig.cw(ghz(d["omega1_ghz"]), ghz(d["omega2_ghz"]), d["theta1_rad"], d["theta2_rad"])
            r1 = d["weight1"] * complex(math.cos(d["theta1_rad"]), math.sin(d["theta1_rad"]))
            r2 = d["weight2"] * complex(math.cos(d["theta2_rad"]), math.sin(d["theta2_rad"]))
            return DriveConfig((r1, r2), self.pulse(area))
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [drive] {exc}") from exc

    def instrument(self) -> InstrumentModel | None:
        i = self["instrument"]
        if not i["enabled"]:
            return None
        try:
            return InstrumentModel(
                i["jitter_fwhm_ns"],
                (ghz(i["sd1_ghz"]), ghz(i["sd2_ghz"])),
                i["quadrature_order"],
                i["sd_correlation"],
                i["jitter_center_ns"],
            )
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [instrument] {exc}") from exc

    def sweep_values(self, which: int = 1) -> tuple[str, np.ndarray]:
        s = self["sweep"]
        sfx = "" if which == 1 else "2"
        axis, n = s["axis" + sfx], s["steps" + sfx]
        if axis == "none":
            return axis, np.array([])
        if n < 1:
            raise ConfigError(f"{self.source}: [sweep] steps{sfx} must be >= 1")
        return axis, np.linspace(s["start" + sfx], s["stop" + sfx], n)

    def tau_grid(self) -> np.ndarray:
        g = self["grid"]
        n = int(round(g["tau_max_ns"] / g["tau_step_ns"]))
        if n < 1 or g["tau_step_ns"] <= 0:
            raise ConfigError(f"{self.source}: [grid] tau_max_ns must exceed a positive tau_step_ns")
        return np.round(np.arange(-n, n + 1) * g["tau_step_ns"], 12)

    def time_grid(self) -> np.ndarray:
        g = self["grid"]
        step = g["t_step_ns"]
        n = int(round((g["t_stop_ns"] - g["t_start_ns"]) / step)) if step > 0 else 0
        if n < 1:
            raise ConfigError(f"{self.source}: [grid] need t_stop_ns > t_start_ns and t_step_ns > 0")
        return np.round(g["t_start_ns"] + np.arange(n + 1) * step, 12)

    # serialization ----------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _locate(text: str) -> dict:
    """Map (section, key) to 1-based line numbers."""
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(" ".join(str(exc).split())) from exc
    where = _locate(text)
    values = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(
                f"{source}:{where.get((sec, None), '?')}: unknown section [{sec}] "
                f"(expected one of {', '.join(SCHEMA)})"
            )
        values[sec] = {}
        for key, raw in parser.items(sec):
            line = where.get((sec, key), "?")
            if key not in SCHEMA[sec]:
                raise ConfigError(
                    f"{source}:{line}: unknown key '{key}' in [{sec}] (allowed: {', '.join(SCHEMA[sec])})"
                )
            conv = SCHEMA[sec][key][0]
            try:
                values[sec][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: [{sec}] {key} = {raw!r}: {exc}") from exc
    cfg = ExperimentConfig(values, source)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Check physical invariants early so errors name the config file."""
    cfg.system()
    cfg.drive()
    cfg.instrument()
    cfg.dipoles()
    for which in (1, 2):
        cfg.sweep_values(which)


def bundled_configs() -> list[str]:
    root = resources.files("wgqed") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_config(path_or_name: str) -> ExperimentConfig:
    """Load a config file, or a bundled config by name (e.g. ``fig1e_resonant``)."""
    p = Path(path_or_name)
    if p.is_file():
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from exc
        return parse_config(text, str(p))
    res = resources.files("wgqed") / "configs" / f"{path_or_name}.ini"
    if res.is_file():
        return parse_config(res.read_text(encoding="utf-8"), f"bundled:{path_or_name}")
    raise ConfigError(f"no config file or bundled config named {path_or_name!r} (bundled: {', '.join(bundled_configs())})")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: ExperimentConfig
    version: str
    duration_s: float = 0.0
    outputs: list = field(default_factory=list)

    def add(self, path) -> None:
        p = Path(path)
        self.outputs.append({"file": p.name, "bytes": p.stat().st_size, "sha256": sha256_file(p)})

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "duration_s": round(self.duration_s, 3),
            "config_source": self.config.source,
            "config": self.config.to_ini(),
            "outputs": sorted(self.outputs, key=lambda o: o["file"]),
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @staticmethod
    def read_config(path) -> ExperimentConfig:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return parse_config(data["config"], f"{path}#config")


__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "SCHEMA",
    "bundled_configs",
    "load_config",
    "parse_config",
    "sha256_file",
]
