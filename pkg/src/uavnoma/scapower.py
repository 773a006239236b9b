"""Power control by successive convex approximation.

Each rate is a difference of two concave log terms. Replacing the subtracted
term by its first-order Taylor expansion gives a concave lower bound on a
rate, and replacing the added term gives a convex upper bound on it. The
resulting convex problem is solved by a small log-barrier Newton method.

Inside the solver powers are measured in units of the largest transmit budget
and rates in Mb/s.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import GainTables
from .model import AlgoConfig, Scenario, SystemParams, per_sc_bandwidth
from .rates import Assignment, PowerAlloc, evaluate

LOG2E = 1.0 / math.log(2.0)
MBPS = 1e6


class FeasibilityRestorationFailed(RuntimeError):
    """No strictly feasible point of the convex approximation was found.

    ``fallback`` is a power allocation that is still safe to use (feasible
    and no worse than the expansion point), or ``None`` when there is none.
    """

    def __init__(self, msg: str, fallback: PowerAlloc | None = None) -> None:
        super().__init__(msg)
        self.fallback = fallback


# ---------------------------------------------------------------- Taylor data

def _log_args(P: PowerAlloc, G: GainTables, sys: SystemParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arguments of the three log terms, each shaped [N_u, N_d, N_s] in watts.

    Returns (interference-only, with own primary signal, with everything).
    """
    n_d = G.h.shape[1]
    rx = G.h * P.total[None, :, :]
    others = np.empty_like(rx)
    for j in range(n_d):
        others[:, j, :] = rx[:, np.arange(n_d) != j, :].sum(axis=1)
    arg_e = others + (sys.mbs_power_per_sc * G.h_m[:, None, :] + sys.noise_per_sc)
    arg_b = arg_e + G.h * P.p1[None, :, :]
    arg_g = arg_e + rx
    return arg_e, arg_b, arg_g


@dataclass(frozen=True, eq=False)
class TaylorCoeffs:
    """Expansion values (bit/s) and slopes (bit/s per W) at ``P_r``, indexed [i, j, n]."""

    B: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    P_r: PowerAlloc


def taylor_coeffs(P_r: PowerAlloc, G: GainTables, scenario: Scenario) -> TaylorCoeffs:
    bw = per_sc_bandwidth(scenario.system)
    arg_e, arg_b, arg_g = _log_args(P_r, G, scenario.system)
    return TaylorCoeffs(
        B=bw * np.log2(arg_b), D=LOG2E * bw / arg_b,
        E=bw * np.log2(arg_e), F=LOG2E * bw / arg_e,
        G=bw * np.log2(arg_g), H=LOG2E * bw / arg_g,
        P_r=P_r,
    )


@dataclass(frozen=True)
class BoundReport:
    """Worst bound violation (function minus bound) and worst mismatch at the
    expansion point, both in Mb/s, for each of the four bounded log terms."""

    violation: dict[str, float]
    tightness: dict[str, float]

    @property
    def max_violation(self) -> float:
        return max(self.violation.values())

    @property
    def max_tightness(self) -> float:
        return max(self.tightness.values())


def bound_check(P: PowerAlloc, P_r: PowerAlloc, tc: TaylorCoeffs, G: GainTables,
                scenario: Scenario) -> BoundReport:
    sys = scenario.system
    bw = per_sc_bandwidth(sys)
    n_d = G.h.shape[1]
    d1 = P.p1 - P_r.p1
    dt = (P.p1 + P.p2) - (P_r.p1 + P_r.p2)
    rx_d = G.h * dt[None, :, :]
    lin_other = np.empty_like(rx_d)
    for j in range(n_d):
        lin_other[:, j, :] = rx_d[:, np.arange(n_d) != j, :].sum(axis=1)
    lin_own1 = G.h * d1[None, :, :]
    lin_b = lin_own1 + lin_other
    lin_g = lin_other + rx_d

    arg_e, arg_b, arg_g = _log_args(P, G, sys)
    are, arb, arg_ = _log_args(P_r, G, sys)
    pieces = {
        # name: (function at P, bound at P, function at P_r, value at P_r)
        "rhat_p": (bw * np.log2(arg_b), tc.B + tc.D * lin_b, bw * np.log2(arb), tc.B),
        "rcheck_p": (bw * np.log2(arg_e), tc.E + tc.F * lin_other, bw * np.log2(are), tc.E),
        "rhat_s": (bw * np.log2(arg_g), tc.G + tc.H * lin_g, bw * np.log2(arg_), tc.G),
        "rcheck_s": (bw * np.log2(arg_b), tc.B + tc.D * lin_b, bw * np.log2(arb), tc.B),
    }
    viol, tight = {}, {}
    for name, (f, bnd, f_r, b_r) in pieces.items():
        viol[name] = float(((f - bnd) / MBPS).max())
        tight[name] = float(np.abs((b_r - f_r) / MBPS).max())
    return BoundReport(viol, tight)


# ------------------------------------------------------------ convex problem

@dataclass(eq=False)
class ConvexProblem:
    """Convex approximation in normalised variables; every row reads f_k(x) <= 0.

    f_k(x) = sum_{t owned by k} coef_t * ln(1 + U_t . x) + L_k . x + l0_k,
    with coef_t <= 0 and U_t >= 0, so each row is convex. Equality rows
    ``A_eq x = b_eq`` define the per-UBS power totals.
    """

    assignment: Assignment
    names: list[str]
    p1_idx: dict[tuple[int, int], int]
    p2_idx: dict[tuple[int, int], int]
    eta_idx: list[int]
    eta_r_idx: int
    eta_p_idx: int
    pj_idx: list[int]
    U: np.ndarray
    coef: np.ndarray
    owner: np.ndarray
    L: np.ndarray
    l0: np.ndarray
    kinds: list[str]
    A_eq: np.ndarray
    b_eq: np.ndarray
    c0: np.ndarray  # minimise c0 . x
    x_ref: np.ndarray
    scale_p: float
    eta_ee: float
    fixings: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_x(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.kinds)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for k in self.kinds:
            out[k] = out.get(k, 0) + 1
        out["def"] = self.A_eq.shape[0]
        out["fix"] = len(self.fixings)
        return out

    @property
    def n_core_constraints(self) -> int:
        """Concave rows + convex rows + power definition/peak/budget rows + C4 rows + fixings."""
        c = self.counts()
        return (c.get("rate", 0) + c.get("load", 0) + c["def"] + c.get("peak", 0)
                + c.get("budget", 0) + c.get("c4", 0) + c["fix"])

    def _selector(self) -> np.ndarray:
        S = getattr(self, "_S", None)
        if S is None:
            S = np.zeros((self.n_rows, len(self.coef)))
            S[self.owner, np.arange(len(self.coef))] = 1.0
            self._S = S
        return S

    def values(self, x: np.ndarray) -> np.ndarray:
        z = 1.0 + self.U @ x
        if np.any(z <= 0):
            return np.full(self.n_rows, np.inf)
        out = self.L @ x + self.l0
        np.add.at(out, self.owner, self.coef * np.log(z))
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        z = 1.0 + self.U @ x
        return self.L + self._selector() @ ((self.coef / z)[:, None] * self.U)

    def weighted_hessian(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_k w_k * Hessian(f_k)."""
        z = 1.0 + self.U @ x
        d = -self.coef / z ** 2 * w[self.owner]
        return (self.U.T * d) @ self.U

    def objective(self, x: np.ndarray) -> float:
        """Maximised objective eta_R - eta_EE * eta_P in normalised units."""
        return float(-self.c0 @ x)

    def to_power(self, x: np.ndarray) -> PowerAlloc:
        n_d, n_s = self.assignment.a.shape[1:]
        p1 = np.zeros((n_d, n_s))
        p2 = np.zeros((n_d, n_s))
        for (j, n), k in self.p1_idx.items():
            p1[j, n] = x[k] * self.scale_p
        for (j, n), k in self.p2_idx.items():
            p2[j, n] = x[k] * self.scale_p
        return PowerAlloc(np.maximum(p1, 0.0), np.maximum(p2, 0.0))

    def power_vector(self, P: PowerAlloc) -> np.ndarray:
        x = np.zeros(self.n_x)
        for (j, n), k in self.p1_idx.items():
            x[k] = P.p1[j, n] / self.scale_p
        for (j, n), k in self.p2_idx.items():
            x[k] = P.p2[j, n] / self.scale_p
        for j, k in enumerate(self.pj_idx):
            x[k] = sum(x[self.p1_idx[jn]] for jn in self.p1_idx if jn[0] == j) + \
                sum(x[self.p2_idx[jn]] for jn in self.p2_idx if jn[0] == j)
        return x


def build_p7(A: Assignment, P_r: PowerAlloc, tc: TaylorCoeffs, eta_ee: float, G: GainTables,
             scenario: Scenario) -> ConvexProblem:
    """Convex approximation around ``P_r`` for the fixed association ``A``.

    ``eta_ee`` is the fixed efficiency parameter in bit/s per W.
    """
    sys = scenario.system
    n_u, n_d, n_s = G.h.shape
    S_p = max(scenario.budget)
    K = per_sc_bandwidth(sys) / MBPS * LOG2E  # Mb/s per natural-log unit
    noise = sys.mbs_power_per_sc * G.h_m + sys.noise_per_sc  # [N_u, N_s]

    names: list[str] = []

    def new(name: str) -> int:
        names.append(name)
        return len(names) - 1

    active = A.active
    p1_idx = {jn: new(f"p1_{jn[0]}_{jn[1]}") for jn in active}
    p2_idx = {jn: new(f"p2_{jn[0]}_{jn[1]}") for jn in active if len(A.roles[jn]) == 2}
    fixings = [jn for jn in active if len(A.roles[jn]) == 1]
    eta_idx = [new(f"eta_{i}") for i in range(n_u)]
    eta_r = new("eta_R")
    eta_p = new("eta_P")
    pj_idx = [new(f"p_{j}") for j in range(n_d)]
    nx = len(names)

    def arg_vec(i: int, j: int, n: int, kind: str) -> np.ndarray:
        """Gain-weighted power coefficients (W per normalised unit) of a log argument."""
        u = np.zeros(nx)
        for k in range(n_d):
            if k == j and kind == "E":
                continue
            if k == j and kind == "B":
                if (k, n) in p1_idx:
                    u[p1_idx[k, n]] += G.h[i, k, n] * S_p
                continue
            if (k, n) in p1_idx:
                u[p1_idx[k, n]] += G.h[i, k, n] * S_p
            if (k, n) in p2_idx:
                u[p2_idx[k, n]] += G.h[i, k, n] * S_p
        return u

    x_ref = np.zeros(nx)
    for jn, k in p1_idx.items():
        x_ref[k] = P_r.p1[jn] / S_p
    for jn, k in p2_idx.items():
        x_ref[k] = P_r.p2[jn] / S_p

    U_rows: list[np.ndarray] = []
    coefs: list[float] = []
    owners: list[int] = []
    L_rows: list[np.ndarray] = []
    l0: list[float] = []
    kinds: list[str] = []

    def new_row(kind: str) -> int:
        kinds.append(kind)
        L_rows.append(np.zeros(nx))
        l0.append(0.0)
        return len(kinds) - 1

    def add_log(row: int, i: int, n: int, u: np.ndarray) -> None:
        """Adds -K * ln(noise + u.x) to ``row``."""
        c = noise[i, n]
        U_rows.append(u / c)
        coefs.append(-K)
        owners.append(row)
        l0[row] += -K * math.log(c)

    def add_taylor(row: int, value: float, slope: float, u: np.ndarray) -> None:
        """Adds value + slope * u.(x - x_ref), with value/slope given in bit/s units."""
        L_rows[row] += slope / MBPS * u
        l0[row] += value / MBPS - slope / MBPS * float(u @ x_ref)

    # concave lower bound on each UE's rate must stay above eta_i
    for i in range(n_u):
        row = new_row("rate")
        L_rows[row][eta_idx[i]] = 1.0
        for (j, n), ues in A.roles.items():
            if i not in ues:
                continue
            if ues[0] == i:
                add_log(row, i, n, arg_vec(i, j, n, "B"))
                add_taylor(row, tc.E[i, j, n], tc.F[i, j, n], arg_vec(i, j, n, "E"))
            else:
                add_log(row, i, n, arg_vec(i, j, n, "G"))
                add_taylor(row, tc.B[i, j, n], tc.D[i, j, n], arg_vec(i, j, n, "B"))
    # convex upper bound on each UBS's load must stay below its capacity
    for j in range(n_d):
        row = new_row("load")
        l0[row] -= scenario.c_max[j] / MBPS
        for n in range(n_s):
            ues = A.roles.get((j, n), ())
            if not ues:
                continue
            i = ues[0]
            add_taylor(row, tc.B[i, j, n], tc.D[i, j, n], arg_vec(i, j, n, "B"))
            add_log(row, i, n, arg_vec(i, j, n, "E"))
            if len(ues) == 2:
                i2 = ues[1]
                add_taylor(row, tc.G[i2, j, n], tc.H[i2, j, n], arg_vec(i2, j, n, "G"))
                add_log(row, i2, n, arg_vec(i2, j, n, "B"))
    for i in range(n_u):
        row = new_row("qos")
        L_rows[row][eta_idx[i]] = -1.0
        l0[row] = scenario.r_min[i] / MBPS
    for i in range(n_u):
        row = new_row("maxmin")
        L_rows[row][eta_r] = 1.0
        L_rows[row][eta_idx[i]] = -1.0
    for j in range(n_d):
        row = new_row("peak")
        L_rows[row][pj_idx[j]] = 1.0
        L_rows[row][eta_p] = -1.0
        l0[row] = scenario.p_circuit[j] / S_p
    for j in range(n_d):
        row = new_row("budget")
        L_rows[row][pj_idx[j]] = 1.0
        l0[row] = (scenario.p_circuit[j] - scenario.p_max[j]) / S_p
    for jn in sorted(p2_idx):
        row = new_row("c4")
        L_rows[row][p1_idx[jn]] = 1.0
        L_rows[row][p2_idx[jn]] = -1.0
    for k in sorted(list(p1_idx.values()) + list(p2_idx.values())):
        row = new_row("nonneg")
        L_rows[row][k] = -1.0
    # never-binding box rows; without them the barrier is unbounded below
    row = new_row("box")
    L_rows[row][eta_r] = -1.0
    row = new_row("box")
    L_rows[row][eta_p] = 1.0
    l0[row] = -2.0 * max(scenario.p_max) / S_p

    A_eq = np.zeros((n_d, nx))
    for j in range(n_d):
        A_eq[j, pj_idx[j]] = 1.0
        for (jj, n), k in p1_idx.items():
            if jj == j:
                A_eq[j, k] = -1.0
        for (jj, n), k in p2_idx.items():
            if jj == j:
                A_eq[j, k] = -1.0

    eta_n = eta_ee * S_p / MBPS
    c0 = np.zeros(nx)
    c0[eta_r] = -1.0
    c0[eta_p] = eta_n
    T = len(coefs)
    return ConvexProblem(
        assignment=A, names=names, p1_idx=p1_idx, p2_idx=p2_idx, eta_idx=eta_idx,
        eta_r_idx=eta_r, eta_p_idx=eta_p, pj_idx=pj_idx,
        U=np.array(U_rows) if T else np.zeros((0, nx)),
        coef=np.array(coefs, float), owner=np.array(owners, int),
        L=np.array(L_rows), l0=np.array(l0, float), kinds=kinds,
        A_eq=A_eq, b_eq=np.zeros(n_d), c0=c0, x_ref=x_ref, scale_p=S_p, eta_ee=eta_n,
        fixings=fixings,
    )


# ------------------------------------------------------------ barrier solver

@dataclass
class OptAux:
    eta_r: float  # bit/s
    eta_p: float  # W
    eta: np.ndarray  # bit/s per UE
    p_ubs: np.ndarray  # W per UBS, transmit only
    objective: float  # normalised maximised objective
    kkt_residual: float
    duality_gap: float
    newton_steps: int
    phase1: bool
    x: np.ndarray


class _InteriorPoint:
    """Primal-dual log-barrier path following for  min c.x  s.t.  f(x) < 0,  A x = b.

    The barrier weight t is held fixed until the iterate is centred and then
    raised tenfold. Iterates stay strictly inside f < 0; the equality rows are
    kept exact by stepping only in their null space.
    """

    def __init__(self, values, jacobian, hessian, c: np.ndarray, A: np.ndarray, tol: float,
                 mu: float = 10.0, max_iter: int = 500, trace: list | None = None,
                 kappa: float = 100.0) -> None:
        self.values, self.jacobian, self.hessian = values, jacobian, hessian
        self.kappa = kappa
        self.c, self.A, self.tol, self.mu = c, A, tol, mu
        self.max_iter = max_iter
        self.trace = trace
        if A.shape[0]:
            _, sv, Vt = np.linalg.svd(A)
            rank = int((sv > 1e-12 * sv.max()).sum())
            self.Z = Vt[rank:].T
        else:
            self.Z = np.eye(len(c))
        self.steps = 0
        self.t = 1.0

    def _residual(self, x: np.ndarray, lam: np.ndarray, t: float, f=None, J=None):
        f = self.values(x) if f is None else f
        J = self.jacobian(x) if J is None else J
        r_dual = self.Z.T @ (self.c + J.T @ lam)
        r_cent = lam * (-f) - 1.0 / t
        return r_dual, r_cent, f, J

    def kkt_residual(self, x: np.ndarray, lam: np.ndarray) -> float:
        r = self.c + self.jacobian(x).T @ lam
        if self.A.shape[0]:
            nu = np.linalg.lstsq(self.A.T, -r, rcond=None)[0]
            r = r + self.A.T @ nu
        return float(np.abs(r).max())

    def solve(self, x: np.ndarray, stop=None, lam_cap: float = 1e6) -> tuple[np.ndarray, np.ndarray]:
        f = self.values(x)
        m = len(f)
        lam = np.minimum(1.0 / (-f), lam_cap)
        Z = self.Z
        t = self.mu * m / float(lam @ (-f))
        # a start far from optimal in objective terms is better centred at a
        # smaller t; take the t whose centring residual is smallest
        cz, gz = Z.T @ self.c, Z.T @ (self.jacobian(x).T @ lam)
        if cz @ cz > 0:
            t_ls = -float(cz @ gz) / float(cz @ cz)
            t = min(t, max(t_ls, 1e-3 * m * self.tol))
        for _ in range(self.max_iter):
            self.t = t
            r_dual, r_cent, f, J = self._residual(x, lam, t, f)
            rd = float(np.abs(r_dual).max())
            if self.trace is not None:
                self.trace.append((self.steps, t, rd, float(self.c @ x)))
            if stop is not None and stop(x):
                break
            # approximately centred for this t: finish or tighten the barrier
            centred = rd <= max(self.tol, m / t) and float(np.abs(r_cent).max()) <= 0.5 / t
            if centred:
                if m / t <= self.tol and rd <= self.tol:
                    break
                t *= self.mu
                continue
            H = self.hessian(x, lam) + (J.T * (lam / (-f))) @ J
            Hy = Z.T @ H @ Z
            rhs = -(r_dual + Z.T @ (J.T @ (r_cent / f)))
            sc = 1.0 / np.sqrt(np.maximum(np.diag(Hy), 1e-300))
            Hs = Hy * sc[:, None] * sc[None, :]
            try:
                Lc = np.linalg.cholesky(Hs)
                w = np.linalg.solve(Lc.T, np.linalg.solve(Lc, rhs * sc))
            except np.linalg.LinAlgError:
                ev, V = np.linalg.eigh(Hs)
                ev = np.maximum(ev, 1e-14 * max(ev.max(), 1e-300))
                w = V @ ((V.T @ (rhs * sc)) / ev)
            dx = Z @ (w * sc)
            dlam = (r_cent - lam * (J @ dx)) / f
            neg = dlam < 0
            s = min(1.0, float((-lam[neg] / dlam[neg]).min())) if neg.any() else 1.0
            s *= 0.99
            norm0 = math.hypot(float(np.linalg.norm(r_dual)), float(np.linalg.norm(r_cent)))
            while s > 1e-14:
                fn = self.values(x + s * dx)
                if np.all(fn < 0):
                    break
                s *= 0.5
            while s > 1e-14:
                xn, ln = x + s * dx, lam + s * dlam
                rdn, rcn, fn, _ = self._residual(xn, ln, t)
                if math.hypot(float(np.linalg.norm(rdn)), float(np.linalg.norm(rcn))) <= (1 - 0.01 * s) * norm0:
                    break
                s *= 0.5
            if s <= 1e-14:
                break
            x, f = xn, fn
            # keep each dual within a factor of its centred value so that a
            # nearly active curved row is not underweighted in the Hessian
            cen = 1.0 / (t * (-f))
            lam = np.clip(ln, cen / self.kappa, cen * self.kappa)
            self.steps += 1
        return x, lam


def _start_point(cp: ConvexProblem, P: PowerAlloc, margin: float) -> np.ndarray:
    """Power block from ``P`` plus auxiliaries set just inside their rows."""
    x = cp.power_vector(P)
    f = cp.values(x)
    n_u = len(cp.eta_idx)
    # at eta_i = 0 the rate row holds -(concave bound); shift eta_i up to it
    rates = -f[:n_u]
    for i, k in enumerate(cp.eta_idx):
        x[k] = rates[i] - margin
    x[cp.eta_r_idx] = min(x[k] for k in cp.eta_idx) - margin
    peaks = [x[k] for k in cp.pj_idx]
    pc = [cp.l0[r] for r, kind in enumerate(cp.kinds) if kind == "peak"]
    x[cp.eta_p_idx] = max(p + c for p, c in zip(peaks, pc)) + margin
    return x


def solve_convex(cp: ConvexProblem, start: PowerAlloc, cfg: AlgoConfig | None = None,
                 trace_path: str | Path | None = None) -> tuple[PowerAlloc, OptAux]:
    """Solve the approximation from ``start``, running a phase I first when needed."""
    cfg = cfg or AlgoConfig()
    margin = cfg.strict_margin
    x = _start_point(cp, start, margin)
    hard = np.array([k == "nonneg" for k in cp.kinds])
    f0 = cp.values(x)
    if np.any(f0[hard] >= 0):
        raise FeasibilityRestorationFailed("start point has a non-positive power on an active subchannel")
    trace: list | None = [] if trace_path is not None else None
    used_phase1 = False
    steps = 0

    if np.any(f0[~hard] > -margin):
        used_phase1 = True
        shift = (~hard).astype(float)
        n = cp.n_x
        c1 = np.zeros(n + 1)
        c1[-1] = 1.0
        A1 = np.hstack([cp.A_eq, np.zeros((cp.A_eq.shape[0], 1))])

        def vals1(z):
            return cp.values(z[:-1]) - shift * z[-1]

        def jac1(z):
            return np.hstack([cp.jacobian(z[:-1]), -shift[:, None]])

        def hess1(z, w):
            H = np.zeros((n + 1, n + 1))
            H[:n, :n] = cp.weighted_hessian(z[:-1], w)
            return H

        z = np.concatenate([x, [max(0.0, float(f0[~hard].max())) + 1.0]])
        ph1 = _InteriorPoint(vals1, jac1, hess1, c1, A1, tol=margin * 1e-3, trace=trace)
        z, _ = ph1.solve(z, stop=lambda z: z[-1] < -margin)
        steps = ph1.steps
        x = z[:-1]
        if not np.all(cp.values(x) < 0) or z[-1] >= 0:
            raise FeasibilityRestorationFailed(
                f"phase I could not reach a strictly feasible point (best shift {z[-1]:.3g})")

    ipm = _InteriorPoint(cp.values, cp.jacobian, cp.weighted_hessian, cp.c0, cp.A_eq,
                         tol=cfg.newton_tol, trace=trace)
    x, lam = ipm.solve(x)
    res = ipm.kkt_residual(x, lam)
    gap = float(lam @ (-cp.values(x)))
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "t", "residual", "objective"])
            for it, tt, rr, obj in trace:
                w.writerow([it, repr(tt), repr(rr), repr(-obj)])
    P = cp.to_power(x)
    aux = OptAux(
        eta_r=float(x[cp.eta_r_idx] * MBPS),
        eta_p=float(x[cp.eta_p_idx] * cp.scale_p),
        eta=np.array([x[k] * MBPS for k in cp.eta_idx]),
        p_ubs=np.array([x[k] * cp.scale_p for k in cp.pj_idx]),
        objective=cp.objective(x),
        kkt_residual=res,
        duality_gap=gap,
        newton_steps=steps + ipm.steps,
        phase1=used_phase1,
        x=x,
    )
    return P, aux


# ---------------------------------------------------------------- power step

def project_power(A: Assignment, P: PowerAlloc) -> PowerAlloc:
    """Zero power on idle subchannels and the secondary share on single-UE ones."""
    p1 = np.array(P.p1)
    p2 = np.array(P.p2)
    for (j, n), ues in A.roles.items():
        if not ues:
            p1[j, n] = 0.0
        if len(ues) < 2:
            p2[j, n] = 0.0
    return PowerAlloc(p1, p2)


def dinkelbach_value(A: Assignment, P: PowerAlloc, eta_ee: float, G: GainTables, scenario: Scenario) -> float:
    rep = evaluate(A, P, G, scenario)
    return rep.eta_r - eta_ee * rep.eta_p


def sca_power_step(A: Assignment, P_r: PowerAlloc, eta_ee: float, G: GainTables, scenario: Scenario,
                   cfg: AlgoConfig | None = None) -> PowerAlloc:
    """One power update for the fixed association ``A``.

    The expansion point is ``P_r`` with idle powers removed. The solver output
    is kept only if it passes the full audit and does not lower
    eta_R - eta_EE * eta_P below the reference point; otherwise the reference
    is returned.
    """
    cfg = cfg or AlgoConfig()
    P_bar = project_power(A, P_r)
    bar_rep = evaluate(A, P_bar, G, scenario, cfg.feas_tol)
    bar_ok = bar_rep.feasible
    if bar_ok:
        ref, ref_val = P_bar, bar_rep.eta_r - eta_ee * bar_rep.eta_p
    else:
        ref, ref_val = None, dinkelbach_value(A, P_r, eta_ee, G, scenario)

    P = P_bar
    best, best_val = ref, ref_val
    for rep_k in range(cfg.sca_repeats):
        tc = taylor_coeffs(P, G, scenario)
        cp = build_p7(A, P, tc, eta_ee, G, scenario)
        try:
            P_new, _ = solve_convex(cp, P, cfg)
        except (FeasibilityRestorationFailed, np.linalg.LinAlgError) as exc:
            if rep_k > 0:
                break
            raise FeasibilityRestorationFailed(str(exc), fallback=ref) from exc
        rep = evaluate(A, P_new, G, scenario, cfg.feas_tol)
        if not rep.feasible:
            break
        val = rep.eta_r - eta_ee * rep.eta_p
        if val < best_val:
            break
        best, best_val = P_new, val
        P = P_new
    if best is None:
        raise FeasibilityRestorationFailed("no feasible power point improves on the expansion point")
    return best
