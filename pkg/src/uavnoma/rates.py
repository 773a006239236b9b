"""SINR, rates, energy efficiency and the C1-C9 constraint auditor."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .channel import GainTables
from .model import Scenario, SystemParams, per_sc_bandwidth

Roles = dict[tuple[int, int], tuple[int, ...]]


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Assignment:
    """Binary association tensor ``a[i, j, n]`` with resolved SIC roles.

    ``roles[(j, n)]`` is ``()`` for an idle subchannel, ``(i,)`` for a single
    UE and ``(primary, secondary)`` for a NOMA pair.
    """

    a: np.ndarray
    roles: Roles

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _frozen(self.a, dtype=np.int8))

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.roles.items() if len(v) == 2)

    @property
    def active(self) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.roles.items() if len(v) >= 1)

    def role_of(self, i: int, j: int, n: int) -> str | None:
        r = self.roles.get((j, n), ())
        if not r or i not in r:
            return None
        return "primary" if r[0] == i else "secondary"

    def digest(self) -> str:
        return hashlib.sha256(self.a.tobytes() + str(self.a.shape).encode()).hexdigest()[:16]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Assignment) and np.array_equal(self.a, other.a) and self.roles == other.roles


@dataclass(frozen=True, eq=False)
class PowerAlloc:
    p1: np.ndarray  # [N_d, N_s] W, primary share
    p2: np.ndarray  # [N_d, N_s] W, secondary share

    def __post_init__(self) -> None:
        object.__setattr__(self, "p1", _frozen(self.p1))
        object.__setattr__(self, "p2", _frozen(self.p2))
        if self.p1.shape != self.p2.shape or self.p1.ndim != 2:
            raise ValueError(f"p1/p2 must be matching 2-D arrays, got {self.p1.shape} and {self.p2.shape}")

    @classmethod
    def zeros(cls, n_d: int, n_s: int) -> "PowerAlloc":
        return cls(np.zeros((n_d, n_s)), np.zeros((n_d, n_s)))

    @property
    def total(self) -> np.ndarray:
        return self.p1 + self.p2

    @property
    def per_ubs(self) -> np.ndarray:
        return self.total.sum(axis=1)

    def checksum(self) -> str:
        return hashlib.sha256(self.p1.tobytes() + self.p2.tobytes()).hexdigest()[:16]

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, PowerAlloc) and np.array_equal(self.p1, other.p1)
                and np.array_equal(self.p2, other.p2))

    def to_dict(self) -> dict:
        return {"p1": self.p1.tolist(), "p2": self.p2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PowerAlloc":
        return cls(np.asarray(d["p1"], float), np.asarray(d["p2"], float))


def resolve_roles(a, G: GainTables) -> Assignment:
    a = np.asarray(a)
    if a.shape != G.h.shape:
        raise ValueError(f"assignment shape {a.shape} does not match gain tables {G.h.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ValueError("assignment entries must be 0 or 1 (C2)")
    _, n_d, n_s = a.shape
    roles: Roles = {}
    for j in range(n_d):
        for n in range(n_s):
            ues = np.flatnonzero(a[:, j, n])
            if len(ues) > 2:
                raise ValueError(f"subchannel (j={j}, n={n}) carries {len(ues)} UEs; C1 allows at most 2")
            # stronger channel decodes first; equal gains fall back to lower index
            roles[(j, n)] = tuple(sorted((int(i) for i in ues), key=lambda i: (-G.h[i, j, n], i)))
    return Assignment(a=a, roles=roles)


def interference_plus_noise(P: PowerAlloc, G: GainTables, sys: SystemParams) -> np.ndarray:
    """Out-of-cell interference + MBS + noise seen by UE i on subchannel (j, n).

    Every other UBS contributes its full (p1 + p2) on n, served or not.
    """
    tot = P.total  # [N_d, N_s]
    rx = G.h * tot[None, :, :]  # [N_u, N_d, N_s]
    others = rx.sum(axis=1, keepdims=True) - rx
    return others + sys.mbs_power_per_sc * G.h_m[:, None, :] + sys.noise_per_sc


def sinr_primary(i: int, j: int, n: int, P: PowerAlloc, G: GainTables, sys: SystemParams) -> float:
    interf = sum((P.p1[k, n] + P.p2[k, n]) * G.h[i, k, n] for k in range(G.h.shape[1]) if k != j)
    den = interf + sys.mbs_power_per_sc * G.h_m[i, n] + sys.noise_per_sc
    return float(P.p1[j, n] * G.h[i, j, n] / den)


def sinr_secondary(i: int, j: int, n: int, P: PowerAlloc, G: GainTables, sys: SystemParams) -> float:
    interf = sum((P.p1[k, n] + P.p2[k, n]) * G.h[i, k, n] for k in range(G.h.shape[1]) if k != j)
    den = P.p1[j, n] * G.h[i, j, n] + interf + sys.mbs_power_per_sc * G.h_m[i, n] + sys.noise_per_sc
    return float(P.p2[j, n] * G.h[i, j, n] / den)


def rate(sinr, sys: SystemParams):
    out = per_sc_bandwidth(sys) * np.log2(1.0 + np.asarray(sinr, dtype=float))
    return float(out) if out.ndim == 0 else out


def rate_tables(P: PowerAlloc, G: GainTables, sys: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-(i, j, n) rates if UE i were primary / secondary on (j, n)."""
    base = interference_plus_noise(P, G, sys)
    sig1 = G.h * P.p1[None, :, :]
    sig2 = G.h * P.p2[None, :, :]
    bw = per_sc_bandwidth(sys)
    r_primary = bw * np.log2(1.0 + sig1 / base)
    r_secondary = bw * np.log2(1.0 + sig2 / (sig1 + base))
    return r_primary, r_secondary


def ue_rates(A: Assignment, P: PowerAlloc, G: GainTables, sys: SystemParams) -> np.ndarray:
    """Per-(i, j, n) realised rate given the roles in ``A`` (zero where unassigned)."""
    r_p, r_s = rate_tables(P, G, sys)
    r = np.zeros_like(r_p)
    for (j, n), ues in A.roles.items():
        if ues:
            r[ues[0], j, n] = r_p[ues[0], j, n]
        if len(ues) == 2:
            r[ues[1], j, n] = r_s[ues[1], j, n]
    return r


@dataclass(frozen=True, eq=False)
class EvalReport:
    rate_per_ue: np.ndarray
    load_per_ubs: np.ndarray
    power_per_ubs: np.ndarray
    eta_r: float
    eta_p: float
    eta_ee: float
    f_ee: float
    violations: list[tuple[str, int | tuple, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def violated(self, ignore: tuple[str, ...] = ()) -> list[tuple[str, int | tuple, float]]:
        return [v for v in self.violations if v[0] not in ignore]

    def to_dict(self) -> dict:
        return {
            "rate_per_ue": self.rate_per_ue.tolist(),
            "load_per_ubs": self.load_per_ubs.tolist(),
            "power_per_ubs": self.power_per_ubs.tolist(),
            "eta_r": self.eta_r,
            "eta_p": self.eta_p,
            "eta_ee": self.eta_ee,
            "f_ee": self.f_ee,
            "violations": [
                {"constraint": c, "index": list(idx) if isinstance(idx, tuple) else idx, "magnitude": m}
                for c, idx, m in self.violations
            ],
        }


def audit_power(A: Assignment, P: PowerAlloc, scenario: Scenario, feas_tol: float = 1e-6
                ) -> list[tuple[str, int | tuple, float]]:
    """C3, C4, C8 and C9 checks; tolerances are relative to each UBS's budget."""
    out = []
    budget = np.asarray(scenario.budget)
    n_d, n_s = P.p1.shape
    for j in range(n_d):
        tol = feas_tol * budget[j]
        for n in range(n_s):
            ues = A.roles.get((j, n), ())
            if len(ues) < 2 and P.p2[j, n] > tol:
                out.append(("C3", (j, n), float(P.p2[j, n])))
            if len(ues) == 2 and P.p1[j, n] - P.p2[j, n] > tol:
                out.append(("C4", (j, n), float(P.p1[j, n] - P.p2[j, n])))
            for p in (P.p1[j, n], P.p2[j, n]):
                if p < -tol:
                    out.append(("C9", (j, n), float(-p)))
        over = P.p1[j].sum() + P.p2[j].sum() + scenario.p_circuit[j] - scenario.p_max[j]
        if over > feas_tol * scenario.p_max[j]:
            out.append(("C8", j, float(over)))
    return out


def evaluate(A: Assignment, P: PowerAlloc, G: GainTables, scenario: Scenario,
             feas_tol: float = 1e-6) -> EvalReport:
    sys = scenario.system
    r = ue_rates(A, P, G, sys)
    R = r.sum(axis=(1, 2))
    load = r.sum(axis=(0, 2))
    cons = P.per_ubs + np.asarray(scenario.p_circuit)
    eta_r = float(R.min())
    eta_p = float(cons.max())
    eta_ee = eta_r / eta_p
    f_ee = scenario.n_ues / scenario.n_ubs * eta_ee

    viol: list[tuple[str, int | tuple, float]] = []
    per_sc = A.a.sum(axis=0)
    for j, n in zip(*np.nonzero(per_sc > 2)):
        viol.append(("C1", (int(j), int(n)), float(per_sc[j, n] - 2)))
    if not np.isin(A.a, (0, 1)).all():
        viol.append(("C2", -1, float(np.abs(A.a - np.clip(np.round(A.a), 0, 1)).max())))
    viol.extend(audit_power(A, P, scenario, feas_tol))
    for i, (Ri, rm) in enumerate(zip(R, scenario.r_min)):
        if rm - Ri > feas_tol * rm:
            viol.append(("C5", i, float(rm - Ri)))
    for j, (Lj, cm) in enumerate(zip(load, scenario.c_max)):
        if Lj - cm > feas_tol * cm:
            viol.append(("C6", j, float(Lj - cm)))
    viol.sort(key=lambda v: (int(v[0][1:]), str(v[1])))
    return EvalReport(
        rate_per_ue=_frozen(R), load_per_ubs=_frozen(load), power_per_ubs=_frozen(cons),
        eta_r=eta_r, eta_p=eta_p, eta_ee=eta_ee, f_ee=f_ee, violations=viol,
    )
