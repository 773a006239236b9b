"""Scenario generation, Monte-Carlo campaigns and plot-ready result files.

Randomness comes from NumPy's PCG64 bit generator. Every replication seed is
derived through ``SeedSequence`` from (base seed, sweep value, replication,
attempt), so a campaign is reproducible on any platform and independent of
the order in which replications finish.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assoc import AssociationInfeasible
from .channel import build_gain_tables
from .iaspo import ALGORITHMS, RunResult, initial_power
from .model import AlgoConfig, Scenario, SystemParams, dbm_to_watt

log = logging.getLogger(__name__)

ALGO_ORDER = ("iaspo", "asoo", "iaspo_fdma")
R_LOW, R_UP = 250.0, 500.0
RMIN_LOW, RMIN_UP = 1e6, 2e6
C_MAX = 100e6
P_CIRCUIT_DBM, P_MAX_DBM = 20.0, 24.0


class CampaignError(RuntimeError):
    """A persisted run failed its audit or a solver broke down."""


def _annulus(rng: np.random.Generator, k: int) -> list[tuple[float, float]]:
    r = np.sqrt(rng.uniform(R_LOW ** 2, R_UP ** 2, k))
    phi = rng.uniform(0.0, 2.0 * math.pi, k)
    return [(float(a * math.cos(b)), float(a * math.sin(b))) for a, b in zip(r, phi)]


def generate_scenario(n_ues: int, n_ubs: int, seed: int, n_sc: int | None = None) -> Scenario:
    """Random instance with UBSs and UEs area-uniform on the 250-500 m annulus.

    ``n_sc`` overrides the subchannel count (small instances for exhaustive checks).
    """
    if n_ues < 1 or n_ubs < 1:
        raise ValueError(f"need at least one UE and one UBS, got n_ues={n_ues}, n_ubs={n_ubs}")
    rng = np.random.Generator(np.random.PCG64(seed))
    ubs = _annulus(rng, n_ubs)
    ues = _annulus(rng, n_ues)
    r_min = rng.uniform(RMIN_LOW, RMIN_UP, n_ues)
    return Scenario(
        mbs_pos=(0.0, 0.0), ubs_pos=ubs, ue_pos=ues, r_min=[float(v) for v in r_min],
        c_max=[C_MAX] * n_ubs, p_circuit=[dbm_to_watt(P_CIRCUIT_DBM)] * n_ubs,
        p_max=[dbm_to_watt(P_MAX_DBM)] * n_ubs, seed=seed,
        system=SystemParams() if n_sc is None else SystemParams(n_subchannels=n_sc),
    )


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def audit_result(algo: str, res: RunResult, scenario: Scenario, cfg: AlgoConfig) -> list:
    """Constraint violations of a finished run.

    The uniform starting power puts p2 > 0 on every subchannel, so a run that
    never left it (ASOO, or a loop that kept P^(0)) is exempt from C3 only.
    """
    mode = "fdma" if algo == "iaspo_fdma" else "noma"
    ignore = ("C3",) if res.power == initial_power(scenario, mode) else ()
    return res.report.violated(ignore)


@dataclass
class CampaignSpec:
    sweep: str = "n_ues"
    values: list[int] = field(default_factory=lambda: [4, 6, 8, 10, 12])
    fixed: int = 4
    replications: int = 30
    algorithms: list[str] = field(default_factory=lambda: list(ALGO_ORDER))
    base_seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    fig1: bool = True
    fig1_n_ues: int = 10
    fig1_n_ubs: int = 4

    def __post_init__(self) -> None:
        if self.sweep not in ("n_ues", "n_ubs"):
            raise ValueError(f"sweep must be 'n_ues' or 'n_ubs', got {self.sweep!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.values or any(int(v) != v or v < 1 for v in self.values):
            raise ValueError(f"sweep values must be positive integers, got {self.values!r}")
        if int(self.fixed) != self.fixed or self.fixed < 1:
            raise ValueError(f"fixed must be a positive integer, got {self.fixed!r}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ValueError(f"unknown algorithms {bad}; choose from {list(ALGO_ORDER)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.values = [int(v) for v in self.values]
        # fixed column order regardless of how the user listed them
        self.algorithms = [a for a in ALGO_ORDER if a in self.algorithms]

    def counts(self, x: int) -> tuple[int, int]:
        return (x, self.fixed) if self.sweep == "n_ues" else (self.fixed, x)

    @property
    def figure(self) -> str:
        return "fig2" if self.sweep == "n_ues" else "fig3"

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class SeedRun:
    x: int
    k: int
    attempt: int
    seed: int
    algo: str
    f_ee: float
    eta_ee: float
    status: str
    iterations: int
    record: dict
    seconds: float = 0.0  # wall time, kept out of the written files


@dataclass
class CellStats:
    x: int
    algo: str
    mean: float
    std: float
    n: int
    resamples: int
    aborted: bool = False


@dataclass
class CampaignTable:
    spec: CampaignSpec
    cells: list[CellStats]
    runs: list[SeedRun]
    fig1: dict[str, list[float]] = field(default_factory=dict)
    dominance_violations: list[tuple[int, int]] = field(default_factory=list)

    def mean(self, x: int, algo: str) -> float:
        for c in self.cells:
            if c.x == x and c.algo == algo:
                return c.mean
        raise KeyError((x, algo))


def _solve_all(scenario: Scenario, algos: list[str], cfg: AlgoConfig
               ) -> dict[str, tuple[RunResult, float]] | None:
    """Run every algorithm on one instance with its wall time; ``None`` if the instance is infeasible."""
    G = build_gain_tables(scenario)
    out = {}
    for algo in algos:
        t0 = time.perf_counter()
        try:
            res = ALGORITHMS[algo](scenario, cfg, G)
        except AssociationInfeasible:
            return None
        except Exception as exc:
            raise CampaignError(f"{algo} failed on scenario seed {scenario.seed}: {exc}") from exc
        bad = audit_result(algo, res, scenario, cfg)
        if bad:
            raise CampaignError(f"{algo} on scenario seed {scenario.seed} violates {bad}")
        out[algo] = (res, time.perf_counter() - t0)
    return out


def _replication(args) -> tuple[int, int, int, list[SeedRun] | None]:
    """One (x, k) cell entry with resampling; returns (x, k, resamples, runs)."""
    spec, cfg, x, k = args
    n_u, n_d = spec.counts(x)
    cap = 10 * spec.replications
    for attempt in range(cap):
        seed = derive_seed(spec.base_seed, x, k, attempt)
        results = _solve_all(generate_scenario(n_u, n_d, seed), spec.algorithms, cfg)
        if results is None:
            log.info("x=%d rep=%d attempt=%d seed=%d infeasible, resampling", x, k, attempt, seed)
            continue
        runs = [SeedRun(x, k, attempt, seed, a, r.report.f_ee, r.report.eta_ee, r.record.status.value,
                        len(r.record.entries) - 1, r.record.to_dict(timing=False), dt)
                for a, (r, dt) in results.items()]
        return x, k, attempt, runs
    return x, k, cap, None


def _fig1(spec: CampaignSpec, cfg: AlgoConfig) -> dict[str, list[float]]:
    for attempt in range(10 * spec.replications):
        seed = derive_seed(spec.base_seed, 0xF1, attempt)
        results = _solve_all(generate_scenario(spec.fig1_n_ues, spec.fig1_n_ubs, seed), spec.algorithms, cfg)
        if results is not None:
            return {a: [e.f_ee for e in r.record.entries] for a, (r, _) in results.items()}
    log.warning("no feasible instance found for the iteration trace")
    return {}


def run_campaign(spec: CampaignSpec, cfg: AlgoConfig | None = None) -> CampaignTable:
    cfg = cfg or AlgoConfig()
    tasks = [(spec, cfg, x, k) for x in spec.values for k in range(spec.replications)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            done = list(pool.map(_replication, tasks))
    else:
        done = [_replication(t) for t in tasks]
    done.sort(key=lambda d: (d[0], d[1]))

    runs: list[SeedRun] = []
    cells: list[CellStats] = []
    dominance: list[tuple[int, int]] = []
    for x in spec.values:
        mine = [d for d in done if d[0] == x]
        resamples = sum(d[2] for d in mine)
        aborted = any(d[3] is None for d in mine)
        if aborted:
            log.warning("cell x=%d aborted after %d consecutive infeasible samples", x, 10 * spec.replications)
        for d in mine:
            runs.extend(d[3] or [])
        for algo in spec.algorithms:
            vals = [r.f_ee for r in runs if r.x == x and r.algo == algo]
            if aborted or not vals:
                cells.append(CellStats(x, algo, math.nan, math.nan, len(vals), resamples, True))
                continue
            std = statistics.stdev(vals) if len(vals) > 1 else math.nan
            cells.append(CellStats(x, algo, statistics.fmean(vals), std, len(vals), resamples))
        if {"iaspo", "asoo"} <= set(spec.algorithms):
            for d in mine:
                by = {r.algo: r.f_ee for r in d[3] or []}
                if by and by["iaspo"] < by["asoo"] - cfg.feas_tol:
                    dominance.append((x, d[1]))
    if dominance:
        log.warning("IASPO below ASOO on %d replications: %s", len(dominance), dominance)
    fig1 = _fig1(spec, cfg) if spec.fig1 else {}
    return CampaignTable(spec, cells, runs, fig1, dominance)


def _fmt(v: float) -> str:
    return "" if v is None or math.isnan(v) else f"{v:.9g}"


def _num(s: str) -> float | None:
    return float(s) if s else None


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _csv_text(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_results(table: CampaignTable, out_dir: str | Path | None = None,
                 formats: tuple[str, ...] = ("csv", "json")) -> list[Path]:
    """Write the sweep table, the iteration trace and the raw runs.

    Numbers are formatted once to 9 significant digits and both the CSV and
    the JSON files are filled from those strings.
    """
    if not table.cells:
        raise ValueError("empty campaign table")
    bad = set(formats) - {"csv", "json"}
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}")
    out = Path(out_dir if out_dir is not None else table.spec.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    spec = table.spec
    written: list[Path] = []

    sweep_rows = [[str(x)] + [_fmt(table.mean(x, a)) if a in spec.algorithms else "" for a in ALGO_ORDER]
                  for x in spec.values]
    trace_rows: list[list[str]] = []
    if table.fig1:
        length = max(len(s) for s in table.fig1.values())
        for r in range(length):
            row = [str(r)]
            for a in ALGO_ORDER:
                s = table.fig1.get(a)
                # shorter traces hold their final value
                row.append(_fmt(s[min(r, len(s) - 1)]) if s else "")
            trace_rows.append(row)

    if "csv" in formats:
        p = out / f"{spec.figure}.csv"
        _write(p, _csv_text(["x", *ALGO_ORDER], sweep_rows))
        written.append(p)
        if trace_rows:
            p = out / "fig1.csv"
            _write(p, _csv_text(["iteration", *ALGO_ORDER], trace_rows))
            written.append(p)

    if "json" in formats:
        cells = []
        for c in table.cells:
            cells.append({"x": c.x, "algo": c.algo, "mean": _num(_fmt(c.mean)), "std": _num(_fmt(c.std)),
                          "n": c.n, "resamples": c.resamples, "aborted": c.aborted})
        doc = {
            "spec": {k: v for k, v in asdict(spec).items() if k != "out_dir"},
            spec.figure: {"x": [int(r[0]) for r in sweep_rows],
                          **{a: [_num(r[1 + i]) for r in sweep_rows] for i, a in enumerate(ALGO_ORDER)}},
            "fig1": {"iteration": [int(r[0]) for r in trace_rows],
                     **{a: [_num(r[1 + i]) for r in trace_rows] for i, a in enumerate(ALGO_ORDER)}},
            "cells": cells,
            "dominance_violations": [list(d) for d in table.dominance_violations],
        }
        p = out / "results.json"
        _write(p, json.dumps(doc, indent=2) + "\n")
        written.append(p)
        p = out / "runs.json"
        raw = [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in table.runs]
        _write(p, json.dumps(raw, indent=1) + "\n")
        written.append(p)
    return written
