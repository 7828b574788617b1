"""File formats: trace CSV plus JSON sidecar, plans, reports, configs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .bottleneck import BottleneckPlan, BottleneckReport
from .engine import Trace
from .errors import SchemaError
from .model import ArrivalDecision, ModelParams

SCHEMA = "tangleproof/v1"
CSV_HEADER = ["n", "L", "F", "W", "delta", "completions", "theta", "eps", "parents"]

_int = {"type": "integer"}
_nonneg = {"type": "integer", "minimum": 0}
_int_list = {"type": "array", "items": _int}
_prob_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}

PARAMS_SCHEMA = {
    "type": "object",
    "required": ["h", "p_theta", "eps_support", "p_eps", "k_parents", "b"],
    "properties": {
        "h": {**_int_list, "minItems": 1},
        "p_theta": _prob_list,
        "eps_support": {**_int_list, "minItems": 1},
        "p_eps": _prob_list,
        "k_parents": _int,
        "b": _int,
        "k_support": _int_list,
        "p_k": _prob_list,
    },
    "additionalProperties": False,
}

TRACE_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "params", "seed", "steps", "strict", "final", "csv"],
    "properties": {
        "schema": {"const": SCHEMA},
        "kind": {"const": "trace"},
        "params": PARAMS_SCHEMA,
        "seed": _nonneg,
        "steps": {"type": "integer", "minimum": 1},
        "strict": {"type": "boolean"},
        "final": {
            "type": "object",
            "required": ["L", "F", "W"],
            "properties": {"L": _nonneg, "F": _nonneg, "W": _nonneg},
        },
        "csv": {"type": "string"},
    },
}

_plan_body = {
    "type": "object",
    "required": ["i", "kappa_A", "kappa_B", "kappa_C", "column1", "fb_set", "overrides"],
    "properties": {
        "i": {"type": "integer", "minimum": 1},
        "kappa_A": _nonneg,
        "kappa_B": _nonneg,
        "kappa_C": _nonneg,
        "c_i": _nonneg,
        "column1": _int_list,
        "fb_set": _int_list,
        "overrides": {
            "type": "object",
            "required": ["n", "theta", "eps", "parents"],
            "properties": {
                "n": _int_list,
                "theta": _int_list,
                "eps": _int_list,
                "parents": {"type": "array", "items": _int_list},
            },
        },
    },
}

PLAN_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "params", "plans"],
    "properties": {
        "schema": {"const": SCHEMA},
        "kind": {"const": "plan"},
        "params": PARAMS_SCHEMA,
        "plans": {"type": "array", "items": _plan_body, "minItems": 1},
    },
}

_report_body = {
    "type": "object",
    "required": ["i", "c_i", "kappa_A", "kappa_B", "kappa_C", "rho", "horizon", "mode", "events",
                 "temp2", "temp3", "temp4", "cauchy1", "witnesses"],
    "properties": {
        "rho": {"type": "string", "pattern": "^[0-9]\\.[0-9]+E[-+][0-9]+$"},
        "temp2": {"type": "boolean"},
        "temp3": {"type": "boolean"},
        "temp4": {"type": "boolean"},
        "cauchy1": {"type": "boolean"},
        "events": {"type": "object"},
        "witnesses": {"type": "object"},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "reports"],
    "properties": {
        "schema": {"const": SCHEMA},
        "kind": {"const": "report"},
        "reports": {"type": "array", "items": _report_body},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema"],
    "properties": {
        "schema": {"const": SCHEMA},
        "h": {**_int_list, "minItems": 1},
        "p_theta": _prob_list,
        "eps_support": {**_int_list, "minItems": 1},
        "p_eps": _prob_list,
        "k_parents": _int,
        "b": _int,
        "k_support": _int_list,
        "p_k": _prob_list,
        "steps": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": _nonneg, "minItems": 1},
        "threads": {"type": "integer", "minimum": 1},
        "anchor": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 1},
                             {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
        "bottlenecks": {"type": "integer", "minimum": 1},
        "margin": _nonneg,
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def validate(doc: Any, schema: Mapping) -> None:
    """Raise SchemaError naming the first offending field."""
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc),
                    key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise SchemaError(errors[0].message, _path(errors[0]))


def read_json(path: str | Path, schema: Mapping | None = None) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} at line {exc.lineno}", str(path)) from exc
    if schema is not None:
        validate(doc, schema)
    return doc


def write_json(path: str | Path, doc: Mapping) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Traces


def trace_rows(trace: Trace):
    for n in range(1, trace.T + 1):
        ps = ";".join(str(int(p)) for p in trace.parents[n, : trace.npar[n]])
        yield (n, int(trace.L[n - 1]), int(trace.F[n - 1]), int(trace.W[n - 1]), int(trace.delta[n]),
               int(trace.completions[n]), int(trace.theta[n]), int(trace.eps[n]), ps)


def write_trace(trace: Trace, directory: str | Path, stem: str = "trace") -> Path:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the JSON path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        fh.writelines(",".join(map(str, row)) + "\n" for row in trace_rows(trace))
    meta = {
        "schema": SCHEMA,
        "kind": "trace",
        "params": trace.params.to_dict(),
        "seed": trace.seed,
        "steps": trace.T,
        "strict": trace.strict,
        "final": {"L": int(trace.L[-1]), "F": int(trace.F[-1]), "W": int(trace.W[-1])},
        "csv": csv_path.name,
    }
    json_path = directory / f"{stem}.json"
    write_json(json_path, meta)
    return json_path


def read_trace(path: str | Path) -> Trace:
    """Load a trace from its JSON sidecar (or from a directory holding trace.json)."""
    path = Path(path)
    if path.is_dir():
        path = path / "trace.json"
    meta = read_json(path, TRACE_SCHEMA)
    params = ModelParams.from_dict(meta["params"])
    T = meta["steps"]
    k_max = params.k_max
    theta = np.zeros(T + 1, dtype=np.int64)
    eps = np.zeros(T + 1, dtype=np.int64)
    npar = np.zeros(T + 1, dtype=np.int64)
    par = np.full((T + 1, k_max), -1, dtype=np.int64)
    delta = np.zeros(T + 1, dtype=np.int64)
    comp = np.zeros(T + 1, dtype=np.int64)
    L = np.zeros(T + 1, dtype=np.int64)
    F = np.zeros(T + 1, dtype=np.int64)
    W = np.zeros(T + 1, dtype=np.int64)
    csv_path = path.parent / meta["csv"]
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise SchemaError(f"unexpected CSV header {header}", f"{csv_path.name}:1")
        count = 0
        for lineno, row in enumerate(reader, start=2):
            where = f"{csv_path.name}:{lineno}"
            if len(row) != len(CSV_HEADER):
                raise SchemaError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", where)
            try:
                n, l_, f_, w_, d_, c_, th, ep = (int(x) for x in row[:8])
                ps = [int(x) for x in row[8].split(";")] if row[8] else []
            except ValueError as exc:
                raise SchemaError(f"non-integer field: {exc}", where) from exc
            if n != count + 1 or n > T:
                raise SchemaError(f"row numbered {n}, expected {count + 1}", where)
            if not 1 <= len(ps) <= k_max:
                raise SchemaError(f"{len(ps)} parents, expected 1..{k_max}", f"{where}.parents")
            count = n
            L[n - 1], F[n - 1], W[n - 1] = l_, f_, w_
            delta[n], comp[n], theta[n], eps[n] = d_, c_, th, ep
            npar[n] = len(ps)
            par[n, : len(ps)] = ps
    if count != T:
        raise SchemaError(f"CSV has {count} rows, metadata says {T}", f"{csv_path.name}")
    fin = meta["final"]
    L[T], F[T], W[T] = fin["L"], fin["F"], fin["W"]
    return Trace(params=params, seed=meta["seed"], T=T, theta=theta, eps=eps, npar=npar,
                 parents=par, delta=delta, completions=comp, L=L, F=F, W=W, strict=meta["strict"])


# ---------------------------------------------------------------------------
# Plans and reports


def plan_to_dict(plan: BottleneckPlan) -> dict:
    ns = sorted(plan.overrides)
    return {
        "i": plan.i,
        "kappa_A": plan.kappa_A,
        "kappa_B": plan.kappa_B,
        "kappa_C": plan.kappa_C,
        "c_i": plan.c_i,
        "column1": list(plan.column1),
        "fb_set": list(plan.fb_set),
        "overrides": {
            "n": ns,
            "theta": [plan.overrides[n].theta for n in ns],
            "eps": [plan.overrides[n].eps for n in ns],
            "parents": [list(plan.overrides[n].parents) for n in ns],
        },
    }


def plan_from_dict(d: Mapping, params: ModelParams | None = None) -> BottleneckPlan:
    ov = d["overrides"]
    if not len(ov["n"]) == len(ov["theta"]) == len(ov["eps"]) == len(ov["parents"]):
        raise SchemaError("override columns have different lengths", "$.overrides")
    overrides = {n: ArrivalDecision(t, e, tuple(p))
                 for n, t, e, p in zip(ov["n"], ov["theta"], ov["eps"], ov["parents"])}
    return BottleneckPlan(d["i"], d["kappa_A"], d["kappa_B"], d["kappa_C"], tuple(d["column1"]),
                          tuple(d["fb_set"]), overrides, params)


def write_plans(path: str | Path, plans: list[BottleneckPlan], params: ModelParams) -> None:
    write_json(path, {"schema": SCHEMA, "kind": "plan", "params": params.to_dict(),
                      "plans": [plan_to_dict(p) for p in plans]})


def read_plans(path: str | Path) -> list[BottleneckPlan]:
    doc = read_json(path, PLAN_SCHEMA)
    params = ModelParams.from_dict(doc["params"])
    return [plan_from_dict(d, params) for d in doc["plans"]]


def write_reports(path: str | Path, reports: list[BottleneckReport], extra: Mapping | None = None) -> None:
    doc = {"schema": SCHEMA, "kind": "report", "reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    write_json(path, doc)


def read_reports(path: str | Path) -> list[BottleneckReport]:
    doc = read_json(path, REPORT_SCHEMA)
    return [BottleneckReport.from_dict(r) for r in doc["reports"]]
