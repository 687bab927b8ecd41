"""Run configuration: JSON parsing, validation, normalization and digest."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .constraints import RegularizationParams
from .errors import BundleError
from .geometry import BundleState
from .integrator import IntegratorConfig
from .poisson import MixingModel
from .systems import SystemEntry, build_system

TOP_KEYS = ("system", "integrator", "constraint", "mixing", "output")
OUTPUT_DEFAULTS = {"trajectory": "trajectory.csv", "diagnostics": "diagnostics.jsonl", "report": None}

_INTEGRATOR_FIELDS = [f.name for f in dataclasses.fields(IntegratorConfig) if f.name != "regularization"]
_REG_FIELDS = [f.name for f in dataclasses.fields(RegularizationParams)]


class ConfigError(BundleError, ValueError):
    """Invalid or unreadable run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration; every default is filled in by ``parse_config``."""

    system: str
    params: dict
    initial: dict
    integrator: dict
    constraint: dict
    mixing: str
    output: dict

    def to_dict(self) -> dict:
        return {
            "system": {"name": self.system, "params": copy.deepcopy(self.params),
                       "initial": copy.deepcopy(self.initial)},
            "integrator": dict(self.integrator),
            "constraint": dict(self.constraint),
            "mixing": {"mode": self.mixing},
            "output": dict(self.output),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # builders

    def regularization(self) -> RegularizationParams:
        return RegularizationParams(**self.constraint)

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(regularization=self.regularization(), **self.integrator)

    def build(self) -> tuple[SystemEntry, BundleState]:
        entry = build_system(self.system, self.params)
        if self.mixing == "curvature":
            entry.spec.mixing = MixingModel("curvature")
        init = self.initial
        state = BundleState(0.0, init["x"], init["xi"], init["pi"])
        return entry, state


def _check_keys(block: Any, allowed, where: str) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")
    return block


def _floats(values, length: int, where: str) -> list:
    if not isinstance(values, list) or len(values) != length:
        raise ConfigError(f"{where} must be a list of {length} numbers")
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must contain numbers") from None
    return out


def parse_config(doc: dict) -> RunConfig:
    """Validate ``doc`` and resolve every default."""
    _check_keys(doc, TOP_KEYS, "config")
    if "system" not in doc:
        raise ConfigError("config needs a 'system' block")
    sysblock = _check_keys(doc["system"], ("name", "params", "initial"), "system")
    name = sysblock.get("name")
    if not isinstance(name, str):
        raise ConfigError("system.name must be a string")
    params = sysblock.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("system.params must be an object")
    try:
        entry = build_system(name, params)
    except BundleError as exc:
        raise ConfigError(str(exc)) from None
    spec = entry.spec

    init_block = _check_keys(sysblock.get("initial", {}) or {}, ("x", "xi", "pi"), "system.initial")
    init = {
        "x": _floats(init_block.get("x", entry.initial.x.tolist()), 2 * spec.n, "system.initial.x"),
        "xi": _floats(init_block.get("xi", entry.initial.xi.tolist()), spec.k, "system.initial.xi"),
        "pi": _floats(init_block.get("pi", entry.initial.pi.tolist()), spec.k, "system.initial.pi"),
    }

    integ_in = _check_keys(doc.get("integrator", {}) or {}, _INTEGRATOR_FIELDS, "integrator")
    defaults = IntegratorConfig()
    integ = {f: getattr(defaults, f) for f in _INTEGRATOR_FIELDS}
    integ.update(entry.integrator)
    integ.update(integ_in)

    reg_in = _check_keys(doc.get("constraint", {}) or {}, _REG_FIELDS, "constraint")
    reg_defaults = RegularizationParams()
    reg = {f: getattr(reg_defaults, f) for f in _REG_FIELDS}
    reg.update(entry.constraint)
    reg.update(reg_in)

    mix_block = _check_keys(doc.get("mixing", {}) or {}, ("mode",), "mixing")
    mixing = mix_block.get("mode", "zero")
    if mixing not in ("zero", "curvature"):
        raise ConfigError(f"mixing.mode must be 'zero' or 'curvature', got {mixing!r}")

    out_block = _check_keys(doc.get("output", {}) or {}, tuple(OUTPUT_DEFAULTS), "output")
    output = dict(OUTPUT_DEFAULTS)
    output.update(out_block)

    cfg = RunConfig(name, dict(params), init, integ, reg, mixing, output)
    try:
        cfg.integrator_config()
        state = BundleState(0.0, init["x"], init["xi"], init["pi"])
    except BundleError as exc:
        raise ConfigError(str(exc)) from None
    except TypeError as exc:
        raise ConfigError(f"bad integrator or constraint field: {exc}") from None
    if not state.is_finite():
        raise ConfigError("initial state must be finite")
    if not integ["t_final"] > 0.0:
        raise ConfigError("integrator.t_final must be > 0")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc)

