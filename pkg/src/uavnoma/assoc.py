"""Two-stage user association / subchannel allocation at fixed power.

The primary stage places at most one UE per subchannel. The secondary stage
may add one more UE per subchannel, with the rate change of a displaced
primary booked linearly so the second problem stays an ILP.

Inside the ILPs rates are in Mb/s to keep the simplex well conditioned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import GainTables
from .milp import EQ, GE, LE, MilpProblem, MilpSolution, Status, solve_milp
from .model import AlgoConfig, Scenario
from .rates import Assignment, PowerAlloc, evaluate, rate_tables, resolve_roles

MBPS = 1e6


class AssociationInfeasible(RuntimeError):
    """No association satisfies the QoS/capacity rows at the given power."""


class AssociationSolverError(RuntimeError):
    """The MILP solver stopped without a usable answer."""


def _stronger(G: GainTables, i: int, k: int, j: int, n: int) -> bool:
    """True when UE i would decode before UE k on (j, n)."""
    hi, hk = G.h[i, j, n], G.h[k, j, n]
    return hi > hk or (hi == hk and i < k)


def build_primary_ilp(P: PowerAlloc, G: GainTables, scenario: Scenario) -> MilpProblem:
    r_p, _ = rate_tables(P, G, scenario.system)
    return primary_ilp_from_rates(r_p, scenario.r_min, scenario.c_max)


def primary_ilp_from_rates(r_p: np.ndarray, r_min, c_max) -> MilpProblem:
    """Primary-stage ILP for a given primary-rate table ``r_p[i, j, n]`` in bit/s."""
    n_u, n_d, n_s = r_p.shape
    r_p = np.asarray(r_p, float) / MBPS
    prob = MilpProblem()
    a = {}
    for i in range(n_u):
        for j in range(n_d):
            for n in range(n_s):
                # a subchannel with no primary power gives nothing; keep it out
                usable = r_p[i, j, n] > 0
                a[i, j, n] = prob.add_var(f"a_{i}_{j}_{n}", 0.0, 1.0 if usable else 0.0, binary=True)
    eta = [prob.add_var(f"eta_{i}", r_min[i] / MBPS) for i in range(n_u)]
    eta_r = prob.add_var("eta_R", 0.0, obj=1.0)

    for j in range(n_d):
        for n in range(n_s):
            prob.add_row({a[i, j, n]: 1.0 for i in range(n_u)}, LE, 1.0)
    for i in range(n_u):
        row = {a[i, j, n]: -r_p[i, j, n] for j in range(n_d) for n in range(n_s)}
        row[eta[i]] = 1.0
        prob.add_row(row, EQ, 0.0)
        prob.add_row({eta[i]: 1.0, eta_r: -1.0}, GE, 0.0)
    for j in range(n_d):
        prob.add_row({a[i, j, n]: r_p[i, j, n] for i in range(n_u) for n in range(n_s)}, LE,
                     c_max[j] / MBPS)
    return prob


@dataclass
class CandidateSets:
    """Primary-stage outcome plus everything the secondary ILP needs (rates in bit/s)."""

    s_p_star: set[tuple[int, int, int]]
    r_p: np.ndarray
    R_p: np.ndarray
    C_p: np.ndarray
    s_u: set[tuple[int, int, int]] = field(default_factory=set)
    s_o1: set[tuple[int, int, int]] = field(default_factory=set)
    s_o2: set[tuple[int, int, int]] = field(default_factory=set)
    r_s: dict[tuple[int, int, int], float] = field(default_factory=dict)
    delta_r: dict[tuple[int, int], float] = field(default_factory=dict)
    holder: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def s_2(self) -> set[tuple[int, int, int]]:
        return self.s_u | self.s_o1 | self.s_o2


def primary_tensor(sol: MilpSolution, prob: MilpProblem, shape) -> np.ndarray:
    a = np.zeros(shape, dtype=np.int8)
    for i in range(shape[0]):
        for j in range(shape[1]):
            for n in range(shape[2]):
                a[i, j, n] = int(round(sol.values[prob.var(f"a_{i}_{j}_{n}")]))
    return a


def build_candidate_sets(a_p: np.ndarray, P: PowerAlloc, G: GainTables, scenario: Scenario,
                         fdma: bool = False) -> CandidateSets:
    """Split the secondary-stage candidates into S_u, S_o1 and S_o2.

    ``a_p`` is the primary-stage tensor. Pairing candidates are only offered
    on subchannels whose current power already respects p1 <= p2 with p2 > 0.
    """
    n_u, n_d, n_s = G.h.shape
    r_p, r_sec = rate_tables(P, G, scenario.system)
    a_p = np.asarray(a_p)
    cs = CandidateSets(
        s_p_star={(int(i), int(j), int(n)) for i, j, n in zip(*np.nonzero(a_p))},
        r_p=r_p,
        R_p=(a_p * r_p).sum(axis=(1, 2)),
        C_p=(a_p * r_p).sum(axis=(0, 2)),
    )
    for j in range(n_d):
        for n in range(n_s):
            occ = np.flatnonzero(a_p[:, j, n])
            if len(occ) == 0:
                for i in range(n_u):
                    if r_p[i, j, n] > 0:
                        cs.s_u.add((i, j, n))
                        cs.r_s[i, j, n] = float(r_p[i, j, n])
                continue
            if fdma:
                continue
            ip = int(occ[0])
            cs.holder[j, n] = ip
            if not (P.p2[j, n] > 0 and P.p1[j, n] <= P.p2[j, n]):
                continue
            for i in range(n_u):
                if i == ip:
                    continue
                if _stronger(G, i, ip, j, n):
                    cs.s_o1.add((i, j, n))
                    cs.r_s[i, j, n] = float(r_p[i, j, n])
                    cs.delta_r[j, n] = float(r_sec[ip, j, n] - r_p[ip, j, n])
                elif r_sec[i, j, n] > 0:
                    cs.s_o2.add((i, j, n))
                    cs.r_s[i, j, n] = float(r_sec[i, j, n])
    return cs


def build_secondary_ilp(cs: CandidateSets, scenario: Scenario) -> MilpProblem:
    n_u, n_d = scenario.n_ues, scenario.n_ubs
    prob = MilpProblem()
    cand = sorted(cs.s_2)
    a = {c: prob.add_var(f"a_{c[0]}_{c[1]}_{c[2]}", binary=True) for c in cand}
    eta = [prob.add_var(f"eta_{i}", scenario.r_min[i] / MBPS) for i in range(n_u)]
    eta_r = prob.add_var("eta_R", 0.0, obj=1.0)

    by_sc: dict[tuple[int, int], list[int]] = {}
    for (i, j, n), k in a.items():
        by_sc.setdefault((j, n), []).append(k)
    for key in sorted(by_sc):
        prob.add_row({k: 1.0 for k in by_sc[key]}, LE, 1.0)

    ue_rows = [{eta[i]: 1.0} for i in range(n_u)]
    cap_rows: list[dict[int, float]] = [{} for _ in range(n_d)]
    for (i, j, n), k in a.items():
        r = cs.r_s[i, j, n] / MBPS
        ue_rows[i][k] = ue_rows[i].get(k, 0.0) - r
        cap_rows[j][k] = cap_rows[j].get(k, 0.0) + r
        if (i, j, n) in cs.s_o1:
            # the incumbent primary on (j, n) drops to the secondary role
            ip = cs.holder[j, n]
            dr = cs.delta_r[j, n] / MBPS
            ue_rows[ip][k] = ue_rows[ip].get(k, 0.0) - dr
            cap_rows[j][k] = cap_rows[j].get(k, 0.0) + dr
    for i in range(n_u):
        prob.add_row(ue_rows[i], EQ, cs.R_p[i] / MBPS)
        prob.add_row({eta[i]: 1.0, eta_r: -1.0}, GE, 0.0)
    for j in range(n_d):
        prob.add_row(cap_rows[j], LE, (scenario.c_max[j] - cs.C_p[j]) / MBPS)
    return prob


def secondary_tensor(sol: MilpSolution, prob: MilpProblem, cs: CandidateSets, shape) -> np.ndarray:
    a = np.zeros(shape, dtype=np.int8)
    for c in cs.s_2:
        if round(sol.values[prob.var(f"a_{c[0]}_{c[1]}_{c[2]}")]) == 1:
            a[c] = 1
    return a


@dataclass
class TwoStageResult:
    assignment: Assignment
    eta_r: float
    primary_eta_r: float
    primary: MilpProblem
    secondary: MilpProblem
    candidates: CandidateSets


def run_two_stage_full(P: PowerAlloc, G: GainTables, scenario: Scenario, cfg: AlgoConfig | None = None,
                       fdma: bool = False) -> TwoStageResult:
    cfg = cfg or AlgoConfig()
    shape = G.h.shape
    prim = build_primary_ilp(P, G, scenario)
    sol_p = solve_milp(prim, cfg)
    if sol_p.status is Status.INFEASIBLE:
        raise AssociationInfeasible("primary association stage is infeasible at the given power")
    if sol_p.values is None or not math.isfinite(sol_p.objective):
        raise AssociationSolverError(f"primary stage ended with status {sol_p.status.value}")
    a_p = primary_tensor(sol_p, prim, shape)

    cs = build_candidate_sets(a_p, P, G, scenario, fdma=fdma)
    sec = build_secondary_ilp(cs, scenario)
    sol_s = solve_milp(sec, cfg)
    if math.isfinite(sol_s.objective) and sol_s.objective >= sol_p.objective - cfg.feas_tol:
        a_s = secondary_tensor(sol_s, sec, cs, shape)
    else:
        # the all-zero secondary vector is always feasible; fall back to it
        a_s = np.zeros(shape, dtype=np.int8)
    A = resolve_roles(a_p + a_s, G)
    rep = evaluate(A, P, G, scenario, cfg.feas_tol)
    return TwoStageResult(A, rep.eta_r, sol_p.objective * MBPS, prim, sec, cs)


def run_two_stage(P: PowerAlloc, G: GainTables, scenario: Scenario, cfg: AlgoConfig | None = None,
                  fdma: bool = False) -> tuple[Assignment, float]:
    res = run_two_stage_full(P, G, scenario, cfg, fdma=fdma)
    return res.assignment, res.eta_r
