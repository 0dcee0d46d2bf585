"""Experiment configuration: YAML documents validated into :class:`ExperimentConfig`.

Schema version 1.  Top-level keys::

    schema_version: 1                 # required
    model: {type: custom | spin_env | lattice | chain | probe, ...}
    times: [t0, t1, ...]              # strictly increasing; optional for chain, unused by probe
    sample_spaces: <space> | [<space> per history time]    # custom model only
    prune_below: 0.0
    consistency_epsilon: 1.0e-3
    causal: {measure: I3, threshold: 1.0e-3}
    seed: 0
    caps: {max_records: 1048576, max_entries: 67108864, max_dim: 4096, max_matrix: 2048}
    output: {dir: out}
    additivity: {time: 1, groups: {coarse: [fine, ...]}}   # optional; default merges each slice in turn

A ``<space>`` is ``{type: cells, partition: [[i, ...], ...], labels: [...]}``
or ``{type: pointer, lattice: L, sigma: s, partition: [[...]], labels: [...]}``.
Complex entries may be numbers, ``[re, im]`` pairs or strings such as
``"0.5-0.5j"``.  Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import yaml

from causalhist.interference import DEFAULT_MEASURE, DEFAULT_THRESHOLD, MEASURES
from causalhist.histories import DEFAULT_MAX_ENTRIES, DEFAULT_MAX_RECORDS

SCHEMA_VERSION = 1
DEFAULT_EPSILON = 1e-3


class ConfigError(ValueError):
    """Malformed configuration; ``field`` is a dotted path, ``line`` 1-based or None."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}, " if line else ""
        super().__init__(f"{where}field '{field}': {message}")


_MODEL_KEYS = {
    "custom": {"type", "hamiltonian", "initial_state"},
    "spin_env": {"type", "n_env", "couplings", "coupling_range", "with_env_coarse", "readout", "system_state"},
    "lattice": {"type", "sites", "hopping", "cells", "n_cells", "pointer_sigma", "packet_width", "initial_cell"},
    "chain": {"type", "d", "amplitudes", "stages", "device_dim", "observer_dim"},
    "probe": {"type", "epsilon", "device_overlap"},
}
_TOP_KEYS = {
    "schema_version",
    "model",
    "times",
    "sample_spaces",
    "prune_below",
    "consistency_epsilon",
    "causal",
    "seed",
    "caps",
    "output",
    "additivity",
}
_CAP_DEFAULTS = {
    "max_records": DEFAULT_MAX_RECORDS,
    "max_entries": DEFAULT_MAX_ENTRIES,
    "max_dim": 4096,
    "max_matrix": 2048,
}


def _line_map(node, path="", out=None) -> dict[str, int]:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = f"{path}.{k.value}" if path else str(k.value)
            out[sub] = k.start_mark.line + 1
            _line_map(v, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, f"{path}[{i}]", out)
    return out


def parse_complex(value, field: str) -> complex:
    if isinstance(value, bool):
        raise ConfigError(field, "expected a number")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
    ):
        return complex(value[0], value[1])
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", ""))
        except ValueError:
            pass
    raise ConfigError(field, f"cannot read {value!r} as a complex number")


def _complex_to_json(z: complex):
    return float(z.real) if z.imag == 0 else [float(z.real), float(z.imag)]


class _Validator:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines

    def error(self, field: str, message: str):
        line = self.lines.get(field)
        while line is None and field:
            field_up = field.rsplit(".", 1)[0] if "." in field else ""
            line = self.lines.get(field_up)
            if field_up == field:
                break
            field = field_up
        return ConfigError(field or "<root>", message, line)

    def keys(self, d, allowed, field):
        if not isinstance(d, dict):
            raise self.error(field, "expected a mapping")
        unknown = sorted(set(d) - set(allowed))
        if unknown:
            sub = f"{field}.{unknown[0]}" if field else unknown[0]
            raise self.error(sub, f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")

    def require(self, d, key, field):
        if key not in d:
            raise self.error(field, f"missing required key '{key}'")
        return d[key]

    def number(self, value, field, lo=None, integer=False, allow_inf=False) -> float:
        if isinstance(value, str) and allow_inf and value.strip().lower() in ("inf", "+inf", "infinity"):
            value = math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(field, f"expected a number, got {value!r}")
        if integer and (not isinstance(value, int)):
            raise self.error(field, f"expected an integer, got {value!r}")
        if math.isnan(value) or (math.isinf(value) and not allow_inf):
            raise self.error(field, f"expected a finite number, got {value!r}")
        if lo is not None and value < lo:
            raise self.error(field, f"must be >= {lo}, got {value!r}")
        return int(value) if integer else float(value)

    def boolean(self, value, field) -> bool:
        if not isinstance(value, bool):
            raise self.error(field, f"expected true/false, got {value!r}")
        return value

    def cells(self, value, field) -> list[list[int]]:
        if not isinstance(value, list) or not value:
            raise self.error(field, "expected a nonempty list of index lists")
        out = []
        for i, cell in enumerate(value):
            if not isinstance(cell, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in cell):
                raise self.error(f"{field}[{i}]", "expected a list of integer basis indices")
            out.append(list(cell))
        return out

    def complex_list(self, value, field) -> list:
        if not isinstance(value, list) or not value:
            raise self.error(field, "expected a nonempty list")
        try:
            return [_complex_to_json(parse_complex(x, f"{field}[{i}]")) for i, x in enumerate(value)]
        except ConfigError as exc:
            raise self.error(exc.field, str(exc).split(": ", 1)[-1]) from None

    def matrix(self, value, field) -> list:
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            raise self.error(field, "expected a square matrix (list of rows)")
        rows = [self.complex_list(r, f"{field}[{i}]") for i, r in enumerate(value)]
        if any(len(r) != len(rows) for r in rows):
            raise self.error(field, "matrix must be square")
        return rows


@dataclass
class ExperimentConfig:
    """Validated configuration.  ``data`` is the normalized document."""

    data: dict[str, Any]

    @property
    def model(self) -> dict:
        return self.data["model"]

    @property
    def model_type(self) -> str:
        return self.data["model"]["type"]

    @property
    def times(self) -> list[float] | None:
        return self.data.get("times")

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def caps(self) -> dict:
        return self.data["caps"]

    @property
    def prune_below(self) -> float:
        return self.data["prune_below"]

    @property
    def epsilon(self) -> float:
        return self.data["consistency_epsilon"]

    @property
    def measure(self) -> str:
        return self.data["causal"]["measure"]

    @property
    def threshold(self) -> float:
        return self.data["causal"]["threshold"]

    @property
    def out_dir(self) -> str:
        return self.data["output"]["dir"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"), allow_nan=True)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def with_value(self, path: str, value) -> "ExperimentConfig":
        """Copy with the dotted ``path`` set to ``value``, revalidated."""
        doc = self.to_dict()
        parent = doc
        parts = path.split(".")
        for p in parts[:-1]:
            if not isinstance(parent, dict) or p not in parent:
                raise ConfigError(path, "parameter is not addressable in this config")
            parent = parent[p]
        if not isinstance(parent, dict):
            raise ConfigError(path, "parameter is not addressable in this config")
        leaf = parts[-1]
        if leaf not in parent and not _settable(doc, parts):
            raise ConfigError(path, "parameter is not addressable in this config")
        parent[leaf] = value
        # explicit couplings would pin n_env; drop drawn ones so they are redrawn
        if path == "model.n_env":
            parent.pop("couplings", None)
        return validate(doc)


def _settable(doc, parts) -> bool:
    if parts[0] == "model" and len(parts) == 2:
        return parts[1] in _MODEL_KEYS.get(doc["model"]["type"], set())
    if parts[0] in ("causal",) and len(parts) == 2:
        return parts[1] in ("measure", "threshold")
    if parts[0] == "caps" and len(parts) == 2:
        return parts[1] in _CAP_DEFAULTS
    return len(parts) == 1 and parts[0] in _TOP_KEYS


def _validate_space(v: _Validator, spec, field) -> dict:
    if not isinstance(spec, dict):
        raise v.error(field, "expected a sample space mapping")
    kind = v.require(spec, "type", field)
    if kind == "cells":
        v.keys(spec, {"type", "partition", "labels"}, field)
        out = {"type": "cells", "partition": v.cells(v.require(spec, "partition", field), f"{field}.partition")}
    elif kind == "pointer":
        v.keys(spec, {"type", "lattice", "sigma", "partition", "labels"}, field)
        out = {
            "type": "pointer",
            "lattice": v.number(v.require(spec, "lattice", field), f"{field}.lattice", lo=4, integer=True),
            "sigma": v.number(v.require(spec, "sigma", field), f"{field}.sigma", lo=0),
            "partition": v.cells(v.require(spec, "partition", field), f"{field}.partition"),
        }
        if out["sigma"] == 0:
            raise v.error(f"{field}.sigma", "must be > 0")
    else:
        raise v.error(f"{field}.type", f"unknown sample space type {kind!r}; use 'cells' or 'pointer'")
    if "labels" in spec:
        labels = spec["labels"]
        if not isinstance(labels, list) or len(labels) != len(out["partition"]):
            raise v.error(f"{field}.labels", "need one label per cell")
        out["labels"] = [str(x) for x in labels]
    return out


def _validate_model(v: _Validator, m) -> dict:
    if not isinstance(m, dict):
        raise v.error("model", "expected a mapping")
    kind = v.require(m, "type", "model")
    if kind not in _MODEL_KEYS:
        raise v.error("model.type", f"unknown model type {kind!r}; choose from {sorted(_MODEL_KEYS)}")
    v.keys(m, _MODEL_KEYS[kind], "model")
    out: dict[str, Any] = {"type": kind}
    if kind == "custom":
        out["hamiltonian"] = v.matrix(v.require(m, "hamiltonian", "model"), "model.hamiltonian")
        out["initial_state"] = v.complex_list(v.require(m, "initial_state", "model"), "model.initial_state")
        if len(out["initial_state"]) != len(out["hamiltonian"]):
            raise v.error("model.initial_state", "length must match the Hamiltonian dimension")
    elif kind == "spin_env":
        if "couplings" in m:
            g = m["couplings"]
            if not isinstance(g, list) or not g:
                raise v.error("model.couplings", "expected a nonempty list of numbers")
            out["couplings"] = [v.number(x, f"model.couplings[{i}]") for i, x in enumerate(g)]
            if "n_env" in m and m["n_env"] != len(g):
                raise v.error("model.n_env", "does not match the number of couplings")
            out["n_env"] = len(g)
        else:
            out["n_env"] = v.number(v.require(m, "n_env", "model"), "model.n_env", lo=1, integer=True)
        rng = m.get("coupling_range", [0.2, 1.0])
        if not isinstance(rng, list) or len(rng) != 2:
            raise v.error("model.coupling_range", "expected [low, high]")
        lo, hi = (v.number(x, f"model.coupling_range[{i}]") for i, x in enumerate(rng))
        if hi < lo:
            raise v.error("model.coupling_range", "low must not exceed high")
        out["coupling_range"] = [lo, hi]
        out["with_env_coarse"] = v.boolean(m.get("with_env_coarse", True), "model.with_env_coarse")
        out["readout"] = v.boolean(m.get("readout", True), "model.readout")
        out["system_state"] = v.complex_list(m.get("system_state", [2**-0.5, 2**-0.5]), "model.system_state")
        if len(out["system_state"]) != 2:
            raise v.error("model.system_state", "expected two amplitudes")
    elif kind == "lattice":
        out["sites"] = v.number(v.require(m, "sites", "model"), "model.sites", lo=4, integer=True)
        out["hopping"] = v.number(m.get("hopping", 1.0), "model.hopping")
        if "cells" in m:
            out["cells"] = v.cells(m["cells"], "model.cells")
        else:
            out["n_cells"] = v.number(m.get("n_cells", 2), "model.n_cells", lo=1, integer=True)
        if m.get("pointer_sigma") is not None:
            out["pointer_sigma"] = v.number(m["pointer_sigma"], "model.pointer_sigma", lo=0)
            if out["pointer_sigma"] == 0:
                raise v.error("model.pointer_sigma", "must be > 0")
        out["packet_width"] = v.number(m.get("packet_width", 1.0), "model.packet_width", lo=0)
        out["initial_cell"] = v.number(m.get("initial_cell", 0), "model.initial_cell", lo=0, integer=True)
    elif kind == "chain":
        out["d"] = v.number(v.require(m, "d", "model"), "model.d", lo=1, integer=True)
        out["amplitudes"] = v.complex_list(v.require(m, "amplitudes", "model"), "model.amplitudes")
        if len(out["amplitudes"]) != out["d"]:
            raise v.error("model.amplitudes", f"expected {out['d']} amplitudes")
        stages = m.get("stages", ["device"])
        if stages not in (["device"], ["device", "observer"]):
            raise v.error("model.stages", "expected [device] or [device, observer]")
        out["stages"] = list(stages)
        for key in ("device_dim", "observer_dim"):
            if key in m:
                out[key] = v.number(m[key], f"model.{key}", lo=out["d"] + 1, integer=True)
    elif kind == "probe":
        out["epsilon"] = v.number(v.require(m, "epsilon", "model"), "model.epsilon", lo=0)
        if not 0 < out["epsilon"] < 1:
            raise v.error("model.epsilon", "must lie in (0, 1)")
        try:
            z = parse_complex(v.require(m, "device_overlap", "model"), "model.device_overlap")
        except ConfigError as exc:
            raise v.error("model.device_overlap", str(exc).split(": ", 1)[-1]) from None
        if abs(z) > 1:
            raise v.error("model.device_overlap", "magnitude must be <= 1")
        out["device_overlap"] = _complex_to_json(z)
    return out


def validate(doc, lines: dict[str, int] | None = None) -> ExperimentConfig:
    """Validate a parsed document and fill defaults."""
    v = _Validator(lines or {})
    if not isinstance(doc, dict):
        raise v.error("", "config must be a mapping")
    v.keys(doc, _TOP_KEYS, "")
    version = v.require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise v.error("schema_version", f"unsupported schema version {version!r}; expected {SCHEMA_VERSION}")
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    out["model"] = _validate_model(v, v.require(doc, "model", ""))
    kind = out["model"]["type"]

    times = doc.get("times")
    if times is None:
        if kind in ("custom", "spin_env", "lattice"):
            raise v.error("", "missing required key 'times'")
    else:
        if not isinstance(times, list) or len(times) < 2:
            raise v.error("times", "expected a list of at least two times")
        times = [v.number(t, f"times[{i}]") for i, t in enumerate(times)]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise v.error("times", "times must be strictly increasing")
        if kind == "chain" and len(times) != len(out["model"]["stages"]) + 1:
            raise v.error("times", "chain model needs one time per stage plus t0")
        out["times"] = times

    if "sample_spaces" in doc:
        if kind != "custom":
            raise v.error("sample_spaces", f"model '{kind}' defines its own sample spaces")
        ss = doc["sample_spaces"]
        if isinstance(ss, list):
            if len(ss) != len(out["times"]) - 1:
                raise v.error("sample_spaces", "need one sample space per history time")
            out["sample_spaces"] = [_validate_space(v, s, f"sample_spaces[{i}]") for i, s in enumerate(ss)]
        else:
            out["sample_spaces"] = _validate_space(v, ss, "sample_spaces")
    elif kind == "custom":
        raise v.error("", "missing required key 'sample_spaces' for a custom model")

    out["prune_below"] = v.number(doc.get("prune_below", 0.0), "prune_below", lo=0)
    out["consistency_epsilon"] = v.number(doc.get("consistency_epsilon", DEFAULT_EPSILON), "consistency_epsilon", lo=0)
    causal = doc.get("causal", {})
    v.keys(causal, {"measure", "threshold"}, "causal")
    measure = str(causal.get("measure", DEFAULT_MEASURE)).upper()
    if measure not in MEASURES:
        raise v.error("causal.measure", f"unknown measure {causal.get('measure')!r}; choose from {MEASURES}")
    out["causal"] = {
        "measure": measure,
        "threshold": v.number(causal.get("threshold", DEFAULT_THRESHOLD), "causal.threshold", lo=0, allow_inf=True),
    }
    out["seed"] = v.number(doc.get("seed", 0), "seed", lo=0, integer=True)
    caps = doc.get("caps", {})
    v.keys(caps, set(_CAP_DEFAULTS), "caps")
    out["caps"] = {}
    for key, default in _CAP_DEFAULTS.items():
        out["caps"][key] = v.number(caps.get(key, default), f"caps.{key}", lo=1, integer=True)
    output = doc.get("output", {})
    v.keys(output, {"dir"}, "output")
    out["output"] = {"dir": str(output.get("dir", "out"))}
    if "additivity" in doc:
        add = doc["additivity"]
        v.keys(add, {"time", "groups"}, "additivity")
        t = v.number(v.require(add, "time", "additivity"), "additivity.time", lo=1, integer=True)
        groups = v.require(add, "groups", "additivity")
        if not isinstance(groups, dict) or not groups:
            raise v.error("additivity.groups", "expected a mapping coarse label -> [fine labels]")
        out["additivity"] = {"time": t, "groups": {str(k): [str(x) for x in g] for k, g in groups.items()}}
    return ExperimentConfig(out)


def loads(text: str) -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<document>", f"YAML syntax error: {exc}", mark.line + 1 if mark else None) from None
    lines = _line_map(node) if node is not None else {}
    return validate(doc, lines)


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def as_complex_array(values) -> np.ndarray:
    return np.array([parse_complex(x, "") for x in values], dtype=np.complex128)
