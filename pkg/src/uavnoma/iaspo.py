"""Alternating association / power optimisation and its two baselines."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .assoc import AssociationInfeasible, run_two_stage
from .channel import GainTables, build_gain_tables
from .model import AlgoConfig, Scenario
from .rates import Assignment, EvalReport, PowerAlloc, evaluate
from .scapower import FeasibilityRestorationFailed, sca_power_step

_EPS = 1e-12


class RunStatus(str, Enum):
    CONVERGED = "Converged"
    ITERATION_CAP = "IterationCap"
    INFEASIBLE = "Infeasible"


@dataclass
class IterationEntry:
    r: int
    eta_r: float  # bit/s
    eta_p: float  # W
    eta_ee: float  # bit/s per W
    f_ee: float
    assignment_hash: str
    power_checksum: str
    guard_triggered: bool
    wallclock: float  # s since the run started
    eta_ee_param: float = float("nan")  # parameter used by the power step that produced this entry
    event: str = ""


@dataclass
class RunRecord:
    algo: str
    entries: list[IterationEntry] = field(default_factory=list)
    status: RunStatus = RunStatus.CONVERGED

    @property
    def eta_ee_series(self) -> list[float]:
        return [e.eta_ee for e in self.entries]

    @property
    def final(self) -> IterationEntry:
        return self.entries[-1]

    def to_dict(self, timing: bool = True) -> dict:
        """Plain-data form; ``timing=False`` drops wallclock so output is reproducible."""
        entries = [asdict(e) for e in self.entries]
        if not timing:
            for e in entries:
                del e["wallclock"]
        return {"algo": self.algo, "status": self.status.value, "entries": entries}

    def to_json(self, indent: int | None = 2, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=indent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "eta_R_mbps", "eta_P_w", "f_ee", "guard"])
        for e in self.entries:
            w.writerow([e.r, f"{e.eta_r / 1e6:.9g}", f"{e.eta_p:.9g}", f"{e.f_ee:.9g}", int(e.guard_triggered)])
        return buf.getvalue()


@dataclass
class RunResult:
    assignment: Assignment
    power: PowerAlloc
    record: RunRecord
    report: EvalReport

    def __iter__(self):
        # allows  A, P, rec = run_iaspo(...)
        return iter((self.assignment, self.power, self.record))


def eta_ee(A: Assignment, P: PowerAlloc, G: GainTables, scenario: Scenario) -> float:
    return evaluate(A, P, G, scenario).eta_ee


def initial_power(scenario: Scenario, mode: str = "noma") -> PowerAlloc:
    n_d, n_s = scenario.n_ubs, scenario.n_sc
    budget = np.asarray(scenario.budget, float)[:, None]
    if mode == "noma":
        p = np.repeat(budget / (4 * n_s), n_s, axis=1)
        return PowerAlloc(p, p.copy())
    if mode == "fdma":
        return PowerAlloc(np.repeat(budget / (2 * n_s), n_s, axis=1), np.zeros((n_d, n_s)))
    raise ValueError(f"mode must be 'noma' or 'fdma', got {mode!r}")


def _entry(r: int, A: Assignment, P: PowerAlloc, rep: EvalReport, t0: float, guard: bool = False,
           param: float = float("nan"), event: str = "") -> IterationEntry:
    return IterationEntry(r=r, eta_r=rep.eta_r, eta_p=rep.eta_p, eta_ee=rep.eta_ee, f_ee=rep.f_ee,
                          assignment_hash=A.digest(), power_checksum=P.checksum(),
                          guard_triggered=guard, wallclock=time.perf_counter() - t0,
                          eta_ee_param=param, event=event)


def _alternate(scenario: Scenario, cfg: AlgoConfig, G: GainTables, fdma: bool, algo: str) -> RunResult:
    t0 = time.perf_counter()
    P = initial_power(scenario, "fdma" if fdma else "noma")
    A, _ = run_two_stage(P, G, scenario, cfg, fdma=fdma)  # AssociationInfeasible propagates
    rep = evaluate(A, P, G, scenario, cfg.feas_tol)
    rec = RunRecord(algo=algo)
    rec.entries.append(_entry(0, A, P, rep, t0))
    clean = (A, P, rep)  # last point produced by a power step (or the start)
    guard = False
    event = ""
    rec.status = RunStatus.ITERATION_CAP
    for r in range(1, cfg.r_max + 1):
        param = rep.eta_ee
        try:
            P_new = sca_power_step(A, P, param, G, scenario, cfg)
        except FeasibilityRestorationFailed as exc:
            if exc.fallback is not None:
                P_new = exc.fallback
                event = (event + ";" if event else "") + "power-fallback"
            else:
                A, P, rep = clean
                rec.entries.append(_entry(r, A, P, rep, t0, guard, param, "power-failed"))
                rec.status = RunStatus.CONVERGED
                break
        P = P_new
        rep = evaluate(A, P, G, scenario, cfg.feas_tol)
        clean = (A, P, rep)
        prev = rec.entries[-1].eta_ee
        rec.entries.append(_entry(r, A, P, rep, t0, guard, param, event))
        if abs(rep.eta_ee - prev) / max(prev, _EPS) <= cfg.ee_rel_tol:
            rec.status = RunStatus.CONVERGED
            break
        if r == cfg.r_max:
            break

        # association at the new power, reverting if the bottleneck rate drops
        guard, event = False, ""
        try:
            A_new, _ = run_two_stage(P, G, scenario, cfg, fdma=fdma)
            rep_new = evaluate(A_new, P, G, scenario, cfg.feas_tol)
            if rep_new.eta_r < rep.eta_r:
                guard = True
            else:
                A, rep = A_new, rep_new
        except AssociationInfeasible:
            event = "association-infeasible"
    return RunResult(A, P, rec, rep)


def run_iaspo(scenario: Scenario, cfg: AlgoConfig | None = None, G: GainTables | None = None) -> RunResult:
    cfg = cfg or AlgoConfig()
    G = G or build_gain_tables(scenario)
    return _alternate(scenario, cfg, G, fdma=False, algo="iaspo")


def run_iaspo_fdma(scenario: Scenario, cfg: AlgoConfig | None = None, G: GainTables | None = None) -> RunResult:
    cfg = cfg or AlgoConfig()
    G = G or build_gain_tables(scenario)
    return _alternate(scenario, cfg, G, fdma=True, algo="iaspo_fdma")


def run_asoo(scenario: Scenario, cfg: AlgoConfig | None = None, G: GainTables | None = None) -> RunResult:
    cfg = cfg or AlgoConfig()
    G = G or build_gain_tables(scenario)
    t0 = time.perf_counter()
    P = initial_power(scenario, "noma")
    A, _ = run_two_stage(P, G, scenario, cfg)
    rep = evaluate(A, P, G, scenario, cfg.feas_tol)
    rec = RunRecord(algo="asoo", entries=[_entry(0, A, P, rep, t0)], status=RunStatus.CONVERGED)
    return RunResult(A, P, rec, rep)


ALGORITHMS = {"iaspo": run_iaspo, "asoo": run_asoo, "iaspo_fdma": run_iaspo_fdma}
