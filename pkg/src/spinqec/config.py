"""Run configuration: TOML files with dotted command-line overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .code import ShuttleConfig
from .experiments import MemoryConfig, s0_from_t2, s0_from_tj
from .gates import HardwareConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config_text"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_SECTIONS = ("hardware", "noise", "code", "sparse", "ramsey", "sweep", "run")
_NOT_HASHED = ("workers", "out", "cache")


def default_config_text() -> str:
    return resources.files("spinqec").joinpath("data/defaults.toml").read_text()


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _merge(base: dict, extra: dict, where: str = "") -> None:
    for k, v in extra.items():
        path = f"{where}{k}"
        if isinstance(v, dict):
            if k not in base or not isinstance(base[k], dict):
                raise ConfigError(f"{path}: unknown section")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration tree (plain dict sections)."""

    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def digest(self) -> str:
        """Hash of the settings that affect results (not workers or paths)."""
        d = copy.deepcopy(self.data)
        for k in _NOT_HASHED:
            d["run"].pop(k, None)
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_toml(self) -> str:
        lines = []
        for sec in _SECTIONS:
            lines.append(f"[{sec}]")
            for k, v in self.data[sec].items():
                lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        return "\n".join(lines)

    # -- derived objects -------------------------------------------------
    def hardware(self) -> HardwareConfig:
        h = dict(self.data["hardware"])
        if h.get("b0") == "calibrate":
            h["b0"] = None
        return HardwareConfig(**h)

    def s0_omega(self) -> float:
        n = self.data["noise"]
        if "s0_omega" in n:
            return float(n["s0_omega"])
        return s0_from_t2(n["t2"], n["tm"]) if n["t2"] > 0 else 0.0

    def s0_ve(self) -> float:
        n = self.data["noise"]
        if "s0_ve" in n:
            return float(n["s0_ve"])
        return s0_from_tj(n["tj"], n["tm"]) if n["tj"] > 0 else 0.0

    def workers(self) -> int:
        """Worker processes; 0 means one per available core."""
        w = self.data["run"]["workers"]
        return w if w > 0 else max(1, len(os.sched_getaffinity(0)))

    def shuttle(self) -> ShuttleConfig:
        s = self.data["sparse"]
        return ShuttleConfig(int(s["n_qd"]), float(s["tau"]), float(s["gamma"]))

    def memory(self) -> MemoryConfig:
        n, c, r = self.data["noise"], self.data["code"], self.data["run"]
        return MemoryConfig(
            variant=c["variant"], p_gate=c["p_gate"], s0_omega=self.s0_omega(),
            s0_ve=self.s0_ve(), tm=float(n["tm"]), ts=float(n["ts"]), mode=n["mode"],
            rounds=int(c["rounds"]), trials=int(r["trials"]), initial=c["initial"],
            shuttle=self.shuttle(), hw=self.hardware())


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _positive(sec: dict, name: str, where: str):
    v = sec.get(name)
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{where}.{name}: must be a positive number, got {v!r}")


def _non_negative(sec: dict, name: str, where: str):
    v = sec.get(name)
    if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
        raise ConfigError(f"{where}.{name}: must be a number >= 0, got {v!r}")


def _choice(sec: dict, name: str, where: str, options):
    if sec.get(name) not in options:
        raise ConfigError(f"{where}.{name}: must be one of {list(options)}, got {sec.get(name)!r}")


def _validate(d: dict) -> None:
    h, n, c, s, r = (d[k] for k in ("hardware", "noise", "code", "sparse", "run"))
    for k in ("tp_pi", "floor_b", "omega0", "delta_e_rz", "j0", "tp_2q", "t_meas", "dt"):
        _positive(h, k, "hardware")
    if h["b0"] != "calibrate":
        _positive(h, "b0", "hardware")
    _choice(h, "j_pulse", "hardware", ("cosine", "gaussian", "square"))
    _choice(h, "order", "hardware", (2, 4))
    for k in ("tm", "ts"):
        _positive(n, k, "noise")
    for k in ("t2", "tj", "s0_omega", "s0_ve"):
        if k in n:
            _non_negative(n, k, "noise")
    _choice(n, "mode", "noise", ("uncorrelated", "correlated"))
    if n["tm"] <= n["ts"]:
        raise ConfigError("noise.tm: must exceed noise.ts")
    _choice(c, "variant", "code", ("standard", "xzzx"))
    _choice(c, "p_gate", "code", ("pi", "sym"))
    _choice(c, "initial", "code", ("zero", "plus"))
    if not isinstance(c["rounds"], int) or c["rounds"] < 3:
        raise ConfigError(f"code.rounds: must be an integer >= 3, got {c['rounds']!r}")
    _non_negative(s, "n_qd", "sparse")
    _positive(s, "tau", "sparse")
    _positive(s, "gamma", "sparse")
    if not isinstance(r["trials"], int) or r["trials"] < 1:
        raise ConfigError(f"run.trials: must be an integer >= 1, got {r['trials']!r}")
    if not isinstance(r["workers"], int) or r["workers"] < 0:
        raise ConfigError(f"run.workers: must be an integer >= 0, got {r['workers']!r}")
    if not isinstance(r["seed"], int) or r["seed"] < 0:
        raise ConfigError(f"run.seed: must be a non-negative integer, got {r['seed']!r}")
    _choice(d["sweep"], "axis", "sweep", ("t2", "tj", "joint", "shuttle"))
    sw, ra = d["sweep"], d["ramsey"]
    if not isinstance(sw["grid"], list) or not sw["grid"]:
        raise ConfigError("sweep.grid: must be a non-empty list")
    if any(not isinstance(x, (int, float)) or x < 0 for x in sw["grid"]):
        raise ConfigError(f"sweep.grid: values must be numbers >= 0, got {sw['grid']!r}")
    rounds = sw["rounds"] if isinstance(sw["rounds"], list) else [sw["rounds"]]
    if len(rounds) not in (1, len(sw["grid"])) or any(
            not isinstance(x, int) or x < 3 for x in rounds):
        raise ConfigError("sweep.rounds: one integer >= 3, or one per grid point")
    _positive(sw, "ratio", "sweep")
    if not isinstance(ra["points"], int) or ra["points"] < 3:
        raise ConfigError(f"ramsey.points: must be an integer >= 3, got {ra['points']!r}")
    _positive(ra, "t_max", "ramsey")
    # the sampling step has to divide every gate and measurement duration
    try:
        hw = RunConfig(d).hardware()
    except ValueError as exc:
        raise ConfigError(f"hardware: {exc}") from exc
    ts = n["ts"]
    for g in ("X", "K0", "Z", "S", "P_sym", "P_pi"):
        dur = hw.duration(g)
        if abs(dur / ts - round(dur / ts)) > 1e-6:
            raise ConfigError(f"noise.ts: {ts} us does not divide the {g} duration {dur:.6g} us")
    if abs(h["t_meas"] / ts - round(h["t_meas"] / ts)) > 1e-6:
        raise ConfigError(f"noise.ts: {ts} us does not divide hardware.t_meas")
    if not math.isfinite(n["tm"] / ts):
        raise ConfigError("noise.tm: not finite")


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    data = tomllib.loads(default_config_text())
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            _merge(data, tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        sec, name = key.split(".", 1)
        if sec not in data:
            raise ConfigError(f"{key}: unknown section {sec!r}")
        data[sec][name] = _parse_value(value)
    for sec in _SECTIONS:
        if sec not in data:
            raise ConfigError(f"{sec}: missing section")
    _validate(data)
    return RunConfig(data)
