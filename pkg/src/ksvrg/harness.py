"""Run method/k/seed grids and write trace CSVs and run manifests."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .objective import FiniteSumObjective
from .optim import Method, OptimizerConfig, run
from .records import StallSpan, TraceRow

CSV_HEADER = TraceRow.columns()


@dataclass(frozen=True, order=True)
class CellKey:
    method: str
    k: int
    seed: int


@dataclass
class ExperimentGrid:
    """Cartesian product of methods, k values and seeds.

    ``eta`` is a number or ``"theory"``. Baselines ignore ``k`` and run once
    per seed with ``k = 1``.
    """

    methods: list
    ks: list = field(default_factory=lambda: [1])
    seeds: list = field(default_factory=lambda: [0])
    eta: float | str = "theory"
    outer_loops: int = 10
    q: int | None = None

    def cells(self) -> list[CellKey]:
        keys = set()
        for m in self.methods:
            m = Method.parse(m)
            for k in self.ks if m.is_k_variant else [1]:
                for s in self.seeds:
                    keys.add(CellKey(m.value, int(k), int(s)))
        return sorted(keys)


@dataclass
class ExperimentResult:
    rows: list[TraceRow]
    spans: dict
    errors: dict

    @property
    def all_spans(self) -> list[StallSpan]:
        return [s for key in sorted(self.spans) for s in self.spans[key]]


def resolve_eta(eta, method: Method | str, obj: FiniteSumObjective, k: int, q: int | None = None) -> float:
    """Numeric ``eta`` passes through; ``"theory"`` asks the theory module."""
    if eta != "theory":
        return float(eta)
    from .theory import theoretical_stepsize

    cfg = OptimizerConfig(method, eta=1.0, k=k, q=q)
    ell = cfg.inner_length(obj.n)
    q_eff = cfg.subset_size(obj.n) if cfg.method is Method.KSVRG_V2 else None
    return theoretical_stepsize(cfg.method, obj.mu, obj.smoothness, obj.n, ell, q_eff)


def _run_cell(key: CellKey, grid: ExperimentGrid, obj, reference, record_wall):
    eta = resolve_eta(grid.eta, key.method, obj, key.k, grid.q)
    cfg = OptimizerConfig(key.method, eta=eta, k=key.k, q=grid.q, outer_loops=grid.outer_loops, seed=key.seed)
    res = run(cfg, obj, reference=reference, record_wall=record_wall)
    return res.rows, res.stall_spans


def _safe_cell(args):
    key = args[0]
    try:
        return key, _run_cell(*args), None
    except Exception as exc:  # a failing cell must not sink the grid
        return key, None, f"{type(exc).__name__}: {exc}"


def run_experiment(grid: ExperimentGrid, obj: FiniteSumObjective, reference=None, *, jobs: int = 1, record_wall: bool = False) -> ExperimentResult:
    """Run every cell; rows come back sorted by cell key, then outer loop."""
    tasks = [(key, grid, obj, reference, record_wall) for key in grid.cells()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_safe_cell, tasks))
    else:
        outcomes = [_safe_cell(t) for t in tasks]
    rows, spans, errors = [], {}, {}
    for key, out, err in sorted(outcomes, key=lambda o: o[0]):
        if err is not None:
            errors[key] = err
            continue
        cell_rows, cell_spans = out
        rows.extend(cell_rows)
        spans[key] = cell_spans
    return ExperimentResult(rows, spans, errors)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows) -> str:
    lines = [",".join(CSV_HEADER)]
    lines.extend(",".join(_fmt(v) for v in r.values()) for r in rows)
    return "\n".join(lines) + "\n"


def write_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(format_csv(rows))


def read_csv(path) -> list[TraceRow]:
    types = {f: int for f in ("k", "q", "seed", "outer_loop", "gc_total", "er_total", "live_snapshots")}
    types["method"] = str
    out = []
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header}")
        for rec in reader:
            out.append(TraceRow(**{name: types.get(name, float)(val) for name, val in zip(header, rec)}))
    return out


def write_manifest(path, entries: dict) -> None:
    """One ``key = value`` line per entry, in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in entries.items():
            if isinstance(val, (list, tuple)):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            fh.write(f"{key} = {val}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.strip():
                key, _, val = line.partition(" = ")
                out[key] = val
    return out


def manifest_entries(dataset_name: str, obj: FiniteSumObjective, grid: ExperimentGrid, report_path=None) -> dict:
    kappa = obj.smoothness / obj.mu if obj.mu > 0 else math.inf
    entries = {
        "dataset": dataset_name,
        "n": obj.n,
        "d": obj.dim,
        "loss": obj.loss.value,
        "L": obj.smoothness,
        "lambda": obj.lam,
        "mu": obj.mu,
        "kappa": kappa,
        "methods": [Method.parse(m).value for m in grid.methods],
        "k": list(grid.ks),
        "eta": grid.eta,
        "outer_loops": grid.outer_loops,
        "q": "default" if grid.q is None else grid.q,
        "seeds": list(grid.seeds),
        "cells": len(grid.cells()),
    }
    if report_path is not None:
        entries["verification_report"] = os.fspath(report_path)
    return entries
