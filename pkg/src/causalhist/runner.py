"""Build models from configs, run the full analysis and write output tables.

Every run writes into its output directory:

``histories.csv``
    ``history, weight, i1, i2, i3, i4, status, measure, threshold`` --
    one row per enumerated history, labels joined with ``|``.
``decoherence.csv``
    ``row, col, real, imag`` -- upper triangle (``row <= col``) of the
    decoherence matrix, indices into ``histories.csv``.
``summary.json``
    check results, pruning audit and metadata (config hash, versions,
    timing).
``probe.csv``
    probe model only, replacing the two history tables.

Floats in tables use 17 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from causalhist import __version__
from causalhist.config import ExperimentConfig, as_complex_array
from causalhist.errors import NumericalCheckError, ResourceLimitError
from causalhist.event_algebra import CellPartition, CoarseningMap, cell_projectors, pointer_projectors
from causalhist.histories import (
    HistorySpace,
    additivity_check,
    branching_structure_check,
    consistency_check,
    decoherence_matrix,
    enumerate_histories,
    telescoping_residual,
    weight_sum_identity,
)
from causalhist.interference import classify_causal, inequality_audit, slice_identity_residual, stepwise_causality
from causalhist.models import (
    LatticeModel,
    MeasurementChainModel,
    SpinEnvModel,
    lattice_history_space,
    measurement_chain_space,
    nonorthogonal_probe,
    spin_env_history_space,
)

log = logging.getLogger(__name__)

CHECK_TOL = 1e-9
HISTORY_COLUMNS = ("history", "weight", "i1", "i2", "i3", "i4", "status", "measure", "threshold")
DECOHERENCE_COLUMNS = ("row", "col", "real", "imag")
PROBE_COLUMNS = (
    "epsilon",
    "device_overlap_real",
    "device_overlap_imag",
    "basis_overlap",
    "required_overlap",
    "feasible",
    "residual",
)
DEFAULTS_NOTE = (
    "measure, threshold and consistency_epsilon are user choices; "
    "the defaults (I3, 1e-3, 1e-3) are not endorsed by any physical argument"
)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunReport:
    rows: list[dict[str, Any]]
    checks: dict[str, Any]
    metadata: dict[str, Any]
    out_dir: Path | None = None
    decoherence_path: Path | None = None
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _space_from_spec(spec: dict, dim: int):
    partition = CellPartition(tuple(tuple(c) for c in spec["partition"]), tuple(spec["labels"]) if "labels" in spec else None)
    if spec["type"] == "cells":
        return cell_projectors(partition)
    return pointer_projectors(spec["lattice"], spec["sigma"], partition)


def _check_dim(dim: int, config: ExperimentConfig):
    if dim > config.caps["max_dim"]:
        raise ResourceLimitError(f"Hilbert space dimension {dim} exceeds max_dim={config.caps['max_dim']}", cap="max_dim")


def build_space(config: ExperimentConfig) -> HistorySpace:
    """Instantiate the configured model as a :class:`HistorySpace`."""
    m = config.model
    kind = m["type"]
    if kind == "custom":
        h = np.array([as_complex_array(r) for r in m["hamiltonian"]])
        _check_dim(h.shape[0], config)
        psi0 = as_complex_array(m["initial_state"])
        specs = config.data["sample_spaces"]
        n = len(config.times) - 1
        if isinstance(specs, dict):
            spaces = (_space_from_spec(specs, h.shape[0]),) * n
        else:
            spaces = tuple(_space_from_spec(s, h.shape[0]) for s in specs)
        return HistorySpace(times=tuple(config.times), spaces=spaces, initial_state=psi0, hamiltonian=h)
    if kind == "spin_env":
        _check_dim(2 ** (m["n_env"] + 1), config)
        if "couplings" in m:
            model = SpinEnvModel(tuple(m["couplings"]))
        else:
            rng = np.random.default_rng(config.seed)
            lo, hi = m["coupling_range"]
            model = SpinEnvModel.random(m["n_env"], rng, lo, hi)
        return spin_env_history_space(
            model,
            config.times,
            with_env_coarse=m["with_env_coarse"],
            readout=m["readout"],
            system_state=as_complex_array(m["system_state"]),
        )
    if kind == "lattice":
        _check_dim(m["sites"], config)
        if "cells" in m:
            partition = CellPartition(tuple(tuple(c) for c in m["cells"]))
        else:
            partition = CellPartition.blocks(m["sites"], m["n_cells"])
        model = LatticeModel(
            m["sites"], m["hopping"], partition, m.get("pointer_sigma"), m["packet_width"]
        )
        return lattice_history_space(model, config.times, initial_cell=m["initial_cell"])
    if kind == "chain":
        model = MeasurementChainModel(
            m["d"],
            observer="observer" in m["stages"],
            device_dim=m.get("device_dim"),
            observer_dim=m.get("observer_dim"),
        )
        _check_dim(model.dim, config)
        space = measurement_chain_space(model, as_complex_array(m["amplitudes"]), m["stages"])
        if config.times is not None:
            kw = dict(times=tuple(config.times), spaces=space.spaces, initial_state=space.initial_state)
            space = HistorySpace(step_unitaries=space.step_unitaries, **kw)
        return space
    raise ValueError(f"model type {kind!r} does not define a history space")


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _versions() -> dict[str, str]:
    return {"causalhist": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _run_probe(config: ExperimentConfig, out: Path | None, started: float, threads: int) -> RunReport:
    m = config.model
    dov = complex(*m["device_overlap"]) if isinstance(m["device_overlap"], list) else complex(m["device_overlap"])
    res = nonorthogonal_probe(m["epsilon"], dov)
    row = {
        "epsilon": res.epsilon,
        "device_overlap_real": res.device_overlap.real,
        "device_overlap_imag": res.device_overlap.imag,
        "basis_overlap": res.basis_overlap,
        "required_overlap": res.required_overlap,
        "feasible": res.feasible,
        "residual": res.consistency_constraint_residual,
    }
    checks = {"probe": {**row, "expansion_magnitudes": list(res.expansion_magnitudes)}}
    meta = _metadata(config, started, threads)
    report = RunReport([row], checks, meta, out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "probe.csv",
            PROBE_COLUMNS,
            [[fmt(row[c]) if c != "feasible" else str(row[c]).lower() for c in PROBE_COLUMNS]],
        )
        _write_summary(out, report)
    return report


def _metadata(config: ExperimentConfig, started: float, threads: int) -> dict[str, Any]:
    return {
        "schema_version": config.data["schema_version"],
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "seed": config.seed,
        "threads": threads,
        "versions": _versions(),
        "elapsed_seconds": time.perf_counter() - started,
        "non_endorsed_defaults": {
            "measure": config.measure,
            "threshold": config.threshold,
            "consistency_epsilon": config.epsilon,
            "note": DEFAULTS_NOTE,
        },
    }


def _write_summary(out: Path, report: RunReport):
    doc = {"checks": report.checks, "metadata": report.metadata, "failures": report.failures}
    (out / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _additivity_maps(config: ExperimentConfig, space: HistorySpace):
    if "additivity" in config.data:
        spec = config.data["additivity"]
        if spec["time"] > space.n:
            raise ValueError(f"additivity.time {spec['time']} exceeds the {space.n} history times")
        return [{spec["time"]: CoarseningMap({k: tuple(v) for k, v in spec["groups"].items()})}]
    return [{k: CoarseningMap.merge_all(s.labels)} for k, s in enumerate(space.spaces, start=1)]


def run(config: ExperimentConfig, out_dir=None, threads: int = 1, write: bool = True) -> RunReport:
    """Enumerate, check and classify; write tables when ``write``."""
    started = time.perf_counter()
    out = Path(out_dir if out_dir is not None else config.out_dir) if write else None
    if config.model_type == "probe":
        return _run_probe(config, out, started, threads)

    space = build_space(config)
    enum = enumerate_histories(
        space,
        prune_below=config.prune_below,
        max_records=config.caps["max_records"],
        max_entries=config.caps["max_entries"],
        threads=threads,
    )
    complete = enum.complete
    report_ci = classify_causal(enum, config.measure, config.threshold)
    stepwise = stepwise_causality(enum, config.measure, config.threshold)
    audit = inequality_audit(report_ci)
    failures: list[str] = []

    checks: dict[str, Any] = {
        "records": len(enum),
        "complete": complete,
        "exact_spaces": space.exact,
        "pruning": {
            "prune_below": enum.prune_below,
            "pruned_count": enum.pruned_count,
            "pruned_weight": enum.pruned_weight,
            "pruned_bound": enum.pruned_bound,
            "respected": enum.pruned_weight <= enum.pruned_bound,
        },
        "classification": {
            "measure": report_ci.measure,
            "threshold": report_ci.threshold,
            "causal": len(report_ci.causal),
            "noncausal": len(report_ci.noncausal),
            "undefined": len(report_ci.undefined),
            "step_causal": len(stepwise.step_causal),
            "recovering": ["|".join(h) for h in stepwise.recovers()],
        },
        "inequality_audit": {
            "passed": audit.passed,
            "worst_slack": audit.worst_slack,
            "worst_history": "|".join(audit.worst_history) if audit.worst_history else None,
            "worst_inequality": audit.worst_inequality,
        },
    }
    if not audit.passed:
        failures.append("inequality_audit")
    if not enum.pruned_weight <= enum.pruned_bound:
        failures.append("pruning_bound")

    d = None
    if 0 < len(enum) <= config.caps["max_matrix"]:
        d = decoherence_matrix(enum)
        cons = consistency_check(d, config.epsilon)
        min_eig = d.min_eigenvalue()
        ws = weight_sum_identity(enum, d)
        checks["consistency"] = {
            "consistent": cons.consistent,
            "epsilon": cons.epsilon,
            "max_offdiag": cons.max_offdiag,
            "max_normalized_offdiag": cons.max_normalized_offdiag,
            "worst_pair": ["|".join(p) for p in cons.worst_pair] if cons.worst_pair else None,
        }
        checks["gram_min_eigenvalue"] = min_eig
        checks["weight_sum"] = {
            "weight_sum": ws.weight_sum,
            "offdiag_sum": ws.offdiag_sum,
            "total_norm_sq": ws.total_norm_sq,
            "residual": ws.residual,
            "gram_residual": ws.gram_residual,
        }
        if min_eig < -CHECK_TOL:
            failures.append("gram_psd")
        if ws.gram_residual > CHECK_TOL:
            failures.append("gram_expansion")
        if complete and space.exact and ws.residual > CHECK_TOL:
            failures.append("weight_sum_identity")
    else:
        checks["consistency"] = None
        checks["decoherence_matrix_skipped"] = (
            f"{len(enum)} histories exceed caps.max_matrix" if len(enum) else "every history was pruned"
        )

    br = branching_structure_check(enum)
    checks["branching"] = {
        "branching": br.branching,
        "violations": len(br.violations),
        "first_violation": (
            ["|".join(br.violations[0][0]), "|".join(br.violations[0][1]), br.violations[0][2], br.violations[0][3]]
            if br.violations
            else None
        ),
    }
    if complete:
        tel = telescoping_residual(enum)
        sl = slice_identity_residual(enum)
        add_results = [additivity_check(space, maps, enum) for maps in _additivity_maps(config, space)]
        checks["telescoping_residual"] = tel
        checks["slice_identity_residual"] = sl
        checks["additivity"] = {
            "max_weight_residual": max(a.max_weight_residual for a in add_results),
            "max_vector_residual": max(a.max_vector_residual for a in add_results),
        }
        if space.exact:
            for name, val in (("telescoping", tel), ("slice_identity", sl)):
                if val > CHECK_TOL:
                    failures.append(name)
        if checks["additivity"]["max_vector_residual"] > CHECK_TOL:
            failures.append("additivity_vector")
    else:
        checks["telescoping_residual"] = None
        checks["slice_identity_residual"] = None
        checks["additivity"] = None

    rows = []
    for rec in enum.records:
        m = report_ci.values[rec.labels]
        vals = m.as_tuple() if m is not None else (math.nan,) * 4
        rows.append(
            {
                "history": "|".join(rec.labels),
                "weight": rec.weight,
                "i1": vals[0],
                "i2": vals[1],
                "i3": vals[2],
                "i4": vals[3],
                "status": report_ci.status(rec.labels),
                "measure": report_ci.measure,
                "threshold": report_ci.threshold,
            }
        )
    report = RunReport(rows, checks, {}, out, failures=failures)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "histories.csv",
            HISTORY_COLUMNS,
            [
                [r["history"], fmt(r["weight"]), fmt(r["i1"]), fmt(r["i2"]), fmt(r["i3"]), fmt(r["i4"]),
                 r["status"], r["measure"], fmt(r["threshold"])]
                for r in rows
            ],
        )
        if d is not None:
            ent = d.entries
            iu, ju = np.triu_indices(len(d))
            _write_csv(
                out / "decoherence.csv",
                DECOHERENCE_COLUMNS,
                ([int(i), int(j), fmt(ent[i, j].real), fmt(ent[i, j].imag)] for i, j in zip(iu, ju)),
            )
            report.decoherence_path = out / "decoherence.csv"
    report.metadata = _metadata(config, started, threads)
    if out is not None:
        _write_summary(out, report)
    return report


def _value_tag(value) -> str:
    return str(value).replace("/", "_").replace(" ", "")


AGGREGATE_COLUMNS = (
    "value",
    "runs",
    "median_records",
    "median_max_offdiag",
    "median_max_normalized_offdiag",
    "consistent_fraction",
    "branching_fraction",
    "median_causal",
    "median_noncausal",
    "median_undefined",
    "median_weight_sum",
    "max_pruned_weight",
)


def _median(xs):
    xs = [x for x in xs if x is not None]
    return statistics.median(xs) if xs else math.nan


def sweep(
    config: ExperimentConfig,
    parameter: str,
    values,
    out_dir=None,
    threads: int = 1,
    repeats: int = 1,
    write: bool = True,
) -> tuple[list[RunReport], list[dict[str, Any]]]:
    """One run per value (and per seed when ``repeats > 1``) plus an aggregate table."""
    base = Path(out_dir if out_dir is not None else config.out_dir)
    reports: list[RunReport] = []
    aggregate = []
    for i, value in enumerate(values):
        cfg = config.with_value(parameter, value)
        group = []
        for r in range(repeats):
            run_cfg = cfg.with_value("seed", cfg.seed + r) if repeats > 1 else cfg
            sub = base / f"{i:03d}_{_value_tag(value)}" / (f"seed_{run_cfg.seed}" if repeats > 1 else "")
            group.append(run(run_cfg, sub, threads=threads, write=write))
        reports.extend(group)

        def pick(key, sub=None):
            out = []
            for rep in group:
                c = rep.checks.get(key)
                out.append(c if sub is None or c is None else c.get(sub))
            return out

        cons = pick("consistency")
        aggregate.append(
            {
                "value": value,
                "runs": len(group),
                "median_records": _median(pick("records")),
                "median_max_offdiag": _median(pick("consistency", "max_offdiag")),
                "median_max_normalized_offdiag": _median(pick("consistency", "max_normalized_offdiag")),
                "consistent_fraction": (
                    sum(bool(c and c["consistent"]) for c in cons) / len(group) if group[0].checks.get("consistency") is not None else math.nan
                ),
                "branching_fraction": (
                    sum(bool(b["branching"]) for b in pick("branching")) / len(group) if "branching" in group[0].checks else math.nan
                ),
                "median_causal": _median(pick("classification", "causal")),
                "median_noncausal": _median(pick("classification", "noncausal")),
                "median_undefined": _median(pick("classification", "undefined")),
                "median_weight_sum": _median(pick("weight_sum", "weight_sum")),
                "max_pruned_weight": max((p or {}).get("pruned_weight", 0.0) for p in pick("pruning")) if "pruning" in group[0].checks else math.nan,
            }
        )
    if write:
        base.mkdir(parents=True, exist_ok=True)
        _write_csv(
            base / "aggregate.csv",
            AGGREGATE_COLUMNS,
            [[a["value"] if isinstance(a["value"], str) else fmt(a["value"])] + [fmt(a[c]) for c in AGGREGATE_COLUMNS[1:]] for a in aggregate],
        )
    return reports, aggregate


def raise_on_failures(report: RunReport):
    if report.failures:
        raise NumericalCheckError(f"numerical checks failed: {', '.join(report.failures)}")
