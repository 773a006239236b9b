"""Small self-contained MILP solver.

LP relaxations go through a dense-tableau, bounded-variable, two-phase primal
simplex (Dantzig pricing, switching to Bland's rule once a run of degenerate
pivots suggests cycling). Binaries are handled by best-bound branch and bound
with most-fractional branching.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import AlgoConfig

LE, EQ, GE = "<=", "=", ">="

_PIV_TOL = 1e-9
_COST_TOL = 1e-9
_FEAS_TOL = 1e-7
_INT_TOL = 1e-6
_DEGENERATE_RUN = 50
_REFACTOR_EVERY = 100


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


class DualCheckError(AssertionError):
    """Raised in debug mode when an LP optimum has a wrong-signed reduced cost."""


class MilpProblem:
    """Maximisation problem ``max c.x`` over linear rows, bounds and binaries."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self.obj: list[float] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.binary: list[bool] = []
        self.rows: list[tuple[dict[int, float], str, float]] = []
        self._index: dict[str, int] = {}
        self._dense: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lo: float = 0.0, hi: float = math.inf, binary: bool = False,
                obj: float = 0.0) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable name {name!r}")
        if binary:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if not lo <= hi:
            raise ValueError(f"variable {name!r}: empty bounds [{lo}, {hi}]")
        k = len(self.names)
        self.names.append(name)
        self.obj.append(float(obj))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.binary.append(bool(binary))
        self._index[name] = k
        self._dense = None
        return k

    def var(self, name: str) -> int:
        return self._index[name]

    def add_row(self, coeffs: dict[int, float], rel: str, rhs: float) -> int:
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        row = {int(k): float(v) for k, v in coeffs.items() if v != 0.0}
        for k, v in row.items():
            if not 0 <= k < self.n_vars:
                raise ValueError(f"row references variable {k} outside 0..{self.n_vars - 1}")
            if not math.isfinite(v):
                raise ValueError(f"non-finite coefficient on {self.names[k]!r}")
        if not math.isfinite(rhs):
            raise ValueError("non-finite right-hand side")
        self.rows.append((row, rel, float(rhs)))
        self._dense = None
        return len(self.rows) - 1

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.obj = [0.0] * self.n_vars
        for k, v in coeffs.items():
            self.obj[k] = float(v)

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(A, sense, rhs) with sense -1/0/+1 for <=, =, >=."""
        if self._dense is None:
            A = np.zeros((len(self.rows), self.n_vars))
            sense = np.empty(len(self.rows))
            rhs = np.empty(len(self.rows))
            for r, (row, rel, b) in enumerate(self.rows):
                for k, v in row.items():
                    A[r, k] = v
                sense[r] = {LE: -1, EQ: 0, GE: 1}[rel]
                rhs[r] = b
            self._dense = (A, sense, rhs)
        return self._dense

    def objective_value(self, x) -> float:
        return float(np.dot(self.obj, x))

    def max_violation(self, x) -> float:
        """Largest row or bound violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, float)
        worst = 0.0
        if self.rows:
            A, sense, rhs = self.dense()
            act = A @ x
            worst = max(worst, float(np.max(np.where(sense <= 0, act - rhs, 0.0))))
            worst = max(worst, float(np.max(np.where(sense >= 0, rhs - act, 0.0))))
        worst = max(worst, float(np.max(np.asarray(self.lo) - x, initial=0.0)))
        worst = max(worst, float(np.max(x - np.asarray(self.hi), initial=0.0)))
        return worst

    def to_lp_text(self) -> str:
        def term(c: float, k: int) -> str:
            return f"{'+' if c >= 0 else '-'} {abs(c):.12g} {self.names[k]}"

        out = ["maximize", "  obj: " + (" ".join(term(c, k) for k, c in enumerate(self.obj) if c) or "0")]
        out.append("subject to")
        for r, (row, rel, b) in enumerate(self.rows):
            lhs = " ".join(term(c, k) for k, c in sorted(row.items())) or "0"
            out.append(f"  r{r}: {lhs} {rel} {b:.12g}")
        out.append("bounds")
        for k, name in enumerate(self.names):
            out.append(f"  {self.lo[k]:.12g} <= {name} <= {self.hi[k]:.12g}")
        bins = [self.names[k] for k in range(self.n_vars) if self.binary[k]]
        if bins:
            out.append("binary")
            out.extend(f"  {b}" for b in bins)
        out.append("end")
        return "\n".join(out) + "\n"


@dataclass
class MilpSolution:
    status: Status
    values: np.ndarray
    objective: float
    gap: float = 0.0
    node_count: int = 0
    pivots: int = 0
    dual_feasible: bool | None = None
    incumbents: list[float] = field(default_factory=list)  # objective each time the incumbent improved

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# --------------------------------------------------------------------------
# bounded-variable simplex on  max c.y  s.t.  A y = b,  0 <= y <= u,  b >= 0
# --------------------------------------------------------------------------

@dataclass
class _Tableau:
    A: np.ndarray  # original columns
    b: np.ndarray
    u: np.ndarray
    T: np.ndarray = field(init=False)  # B^-1 A
    xb: np.ndarray = field(init=False)
    basis: np.ndarray = field(init=False)
    at_upper: np.ndarray = field(init=False)
    pivots: int = 0

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        self.T = np.linalg.solve(B, self.A)
        rhs = self.b - self.A[:, self.at_upper] @ self.u[self.at_upper]
        self.xb = np.linalg.solve(B, rhs)


def _reduced_costs(tab: _Tableau, c: np.ndarray) -> np.ndarray:
    return c - c[tab.basis] @ tab.T


def _run_simplex(tab: _Tableau, c: np.ndarray, allowed: np.ndarray, max_pivots: int) -> Status:
    m, N = tab.T.shape
    d = _reduced_costs(tab, c)
    bland = False
    degenerate_run = 0
    since_refactor = 0
    is_basic = np.zeros(N, bool)
    is_basic[tab.basis] = True
    while True:
        if tab.pivots >= max_pivots:
            return Status.ITERATION_LIMIT
        movable = allowed & ~is_basic & (tab.u > 0)
        gain = np.where(tab.at_upper, -d, d)
        cand = movable & (gain > _COST_TOL)
        if not cand.any():
            return Status.OPTIMAL
        if bland:
            j = int(np.flatnonzero(cand)[0])
        else:
            j = int(np.argmax(np.where(cand, gain, -np.inf)))
        sigma = -1.0 if tab.at_upper[j] else 1.0
        alpha = sigma * tab.T[:, j]

        theta = tab.u[j]
        leave, leave_to_upper = -1, False
        ub = tab.u[tab.basis]
        with np.errstate(divide="ignore", invalid="ignore"):
            lim_lo = np.where(alpha > _PIV_TOL, tab.xb / alpha, np.inf)
            lim_hi = np.where((alpha < -_PIV_TOL) & np.isfinite(ub), (ub - tab.xb) / -alpha, np.inf)
        lim_lo = np.maximum(lim_lo, 0.0)
        lim_hi = np.maximum(lim_hi, 0.0)
        lim = np.minimum(lim_lo, lim_hi)
        best = float(lim.min()) if m else math.inf
        if best < theta:
            theta = best
            ties = np.flatnonzero(lim <= best + 1e-12)
            if bland:
                r = int(ties[np.argmin(tab.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leave, leave_to_upper = r, bool(lim_hi[r] < lim_lo[r])
        if not math.isfinite(theta):
            return Status.UNBOUNDED

        degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
        if degenerate_run > _DEGENERATE_RUN:
            bland = True

        tab.xb -= theta * alpha
        tab.pivots += 1
        if leave < 0:
            # entering variable hits its own opposite bound
            tab.at_upper[j] = not tab.at_upper[j]
            continue

        entering_value = tab.u[j] - theta if tab.at_upper[j] else theta
        out = tab.basis[leave]
        tab.at_upper[j] = False
        tab.at_upper[out] = leave_to_upper
        is_basic[out] = False
        is_basic[j] = True
        tab.basis[leave] = j
        tab.xb[leave] = entering_value

        piv = tab.T[leave, j]
        tab.T[leave] /= piv
        col = tab.T[:, j].copy()
        col[leave] = 0.0
        tab.T -= np.outer(col, tab.T[leave])
        d = d - d[j] * tab.T[leave]

        since_refactor += 1
        if since_refactor >= _REFACTOR_EVERY:
            tab.refactor()
            d = _reduced_costs(tab, c)
            since_refactor = 0


def _standard_form(A, sense, rhs, c, lo, hi):
    """Shift/split variables and add slacks. Returns data plus a map back to x."""
    n = len(c)
    fixed = lo == hi
    cols, col_scale, col_var, u_list = [], [], [], []
    offset = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    offset = np.where(fixed, lo, offset)
    for k in range(n):
        if fixed[k]:
            continue
        if np.isfinite(lo[k]):
            col_var.append(k); col_scale.append(1.0); u_list.append(hi[k] - lo[k])
        elif np.isfinite(hi[k]):
            col_var.append(k); col_scale.append(-1.0); u_list.append(math.inf)
        else:
            col_var.append(k); col_scale.append(1.0); u_list.append(math.inf)
            col_var.append(k); col_scale.append(-1.0); u_list.append(math.inf)
    col_var = np.asarray(col_var, int)
    col_scale = np.asarray(col_scale)
    nstruct = len(col_var)
    Ast = A[:, col_var] * col_scale if nstruct else np.zeros((A.shape[0], 0))
    b = rhs - A @ offset
    cst = c[col_var] * col_scale
    const_obj = float(c @ offset)

    m = A.shape[0]
    flip = b < 0
    Ast = np.where(flip[:, None], -Ast, Ast)
    b = np.abs(b)
    sense = np.where(flip, -sense, sense)

    n_slack = int(np.sum(sense != 0))
    A_full = np.zeros((m, nstruct + n_slack))
    A_full[:, :nstruct] = Ast
    basis = np.full(m, -1)
    s = nstruct
    for r in range(m):
        if sense[r] < 0:
            A_full[r, s] = 1.0
            basis[r] = s
        elif sense[r] > 0:
            A_full[r, s] = -1.0
        if sense[r] != 0:
            s += 1
    u = np.concatenate([np.asarray(u_list, float), np.full(n_slack, math.inf)])
    c_full = np.concatenate([cst, np.zeros(n_slack)])
    return A_full, b, u, c_full, basis, (col_var, col_scale, offset, nstruct, const_obj)


def _lp_core(A, sense, rhs, c, lo, hi, debug=False, max_pivots=50_000) -> MilpSolution:
    A_full, b, u, c_full, basis, back = _standard_form(A, sense, rhs, c, lo, hi)
    col_var, col_scale, offset, nstruct, const_obj = back
    m, N = A_full.shape

    def recover(y):
        x = offset.copy()
        np.add.at(x, col_var, col_scale * y[:nstruct])
        return x

    if m == 0:
        # no rows: each variable sits at whichever bound its cost prefers
        if np.any((c_full > 0) & ~np.isfinite(u)):
            return MilpSolution(Status.UNBOUNDED, recover(np.zeros(N)), math.nan)
        y = np.where(c_full > 0, u, 0.0)
        x = recover(y)
        return MilpSolution(Status.OPTIMAL, x, float(c @ x), dual_feasible=True if debug else None)

    # phase I: artificials on rows without a ready slack
    need = np.flatnonzero(basis < 0)
    n_art = len(need)
    A_ph = np.hstack([A_full, np.zeros((m, n_art))])
    for t, r in enumerate(need):
        A_ph[r, N + t] = 1.0
        basis[r] = N + t
    u_ph = np.concatenate([u, np.full(n_art, math.inf)])
    tab = _Tableau(A_ph, b, u_ph)
    tab.basis = basis.copy()
    tab.at_upper = np.zeros(N + n_art, bool)
    tab.T = A_ph.copy()  # basis columns are identity
    tab.xb = b.copy()
    allowed = np.ones(N + n_art, bool)

    if n_art:
        c_ph = np.concatenate([np.zeros(N), -np.ones(n_art)])
        st = _run_simplex(tab, c_ph, allowed, max_pivots)
        if st is Status.ITERATION_LIMIT:
            return MilpSolution(st, recover(np.zeros(N)), math.nan, pivots=tab.pivots)
        tab.refactor()
        infeas = float(tab.xb[tab.basis >= N].sum()) if np.any(tab.basis >= N) else 0.0
        if infeas > _FEAS_TOL * max(1.0, float(np.abs(b).max())):
            return MilpSolution(Status.INFEASIBLE, recover(np.zeros(N)), math.nan, pivots=tab.pivots)
        # drive zero-level artificials out of the basis, dropping redundant rows
        keep = np.ones(m, bool)
        for r in range(m):
            if tab.basis[r] < N:
                continue
            row = np.abs(tab.T[r, :N])
            row[tab.basis[tab.basis < N]] = 0.0
            k = int(np.argmax(row))
            if row[k] > 1e-7:
                piv = tab.T[r, k]
                tab.T[r] /= piv
                col = tab.T[:, k].copy()
                col[r] = 0.0
                tab.T -= np.outer(col, tab.T[r])
                tab.basis[r] = k
                tab.at_upper[k] = False
            else:
                keep[r] = False
        basis_p2 = tab.basis[keep]
        at_upper = tab.at_upper[:N].copy()
        done = tab.pivots
        tab = _Tableau(A_full[keep], b[keep], u)
        tab.basis = basis_p2
        tab.at_upper = at_upper
        tab.pivots = done
        tab.refactor()
        allowed = np.ones(N, bool)
    st = _run_simplex(tab, c_full, allowed, max_pivots)
    return _finish(tab, st, c_full, c, recover, debug)


def _finish(tab: _Tableau, st: Status, c_full, c, recover, debug) -> MilpSolution:
    N = tab.A.shape[1]
    if st is not Status.OPTIMAL:
        return MilpSolution(st, recover(np.zeros(N)), math.nan, pivots=tab.pivots)
    tab.refactor()
    y = np.where(tab.at_upper, tab.u, 0.0)
    y[~np.isfinite(y)] = 0.0
    y[tab.basis] = tab.xb
    y = np.maximum(y, 0.0)
    x = recover(y)
    dual_ok = None
    if debug:
        dual_ok = _dual_check(tab, c_full)
        if not dual_ok:
            raise DualCheckError("LP optimum has a reduced cost of the wrong sign")
    return MilpSolution(Status.OPTIMAL, x, float(c @ x), pivots=tab.pivots, dual_feasible=dual_ok)


def _dual_check(tab: _Tableau, c_full: np.ndarray, tol: float = 1e-7) -> bool:
    """Recompute duals from the basis columns and check reduced-cost signs."""
    B = tab.A[:, tab.basis]
    y = np.linalg.solve(B.T, c_full[tab.basis])
    d = c_full - tab.A.T @ y
    scale = max(1.0, float(np.abs(c_full).max()))
    nonbasic = np.ones(len(d), bool)
    nonbasic[tab.basis] = False
    movable = nonbasic & (tab.u > 0)
    bad_lower = movable & ~tab.at_upper & (d > tol * scale)
    bad_upper = movable & tab.at_upper & (d < -tol * scale)
    return not (bad_lower.any() or bad_upper.any())


def solve_lp(p: MilpProblem, debug: bool = False, lo=None, hi=None,
             max_pivots: int = 50_000) -> MilpSolution:
    """Solve the continuous relaxation of ``p`` (integrality ignored).

    ``lo``/``hi`` override the problem bounds, which is how branch and bound
    fixes variables without copying the problem.
    """
    lo = np.asarray(p.lo if lo is None else lo, float)
    hi = np.asarray(p.hi if hi is None else hi, float)
    if np.any(lo > hi):
        return MilpSolution(Status.INFEASIBLE, lo.copy(), math.nan)
    if p.rows:
        A, sense, rhs = p.dense()
    else:
        A, sense, rhs = np.zeros((0, p.n_vars)), np.zeros(0), np.zeros(0)
    return _lp_core(A, sense, rhs, np.asarray(p.obj, float), lo, hi, debug=debug, max_pivots=max_pivots)


def _most_fractional(x: np.ndarray, binary: np.ndarray) -> int:
    frac = np.where(binary, np.abs(x - np.round(x)), 0.0)
    k = int(np.argmax(frac))
    return k if frac[k] > _INT_TOL else -1


def solve_milp(p: MilpProblem, cfg: AlgoConfig | None = None, debug: bool = False) -> MilpSolution:
    """Solve ``p`` with the engine selected by ``cfg.milp_backend``.

    ``"bnb"`` always uses the built-in branch and bound, ``"highs"`` always
    hands the problem to HiGHS, and ``"auto"`` keeps the built-in engine while
    the number of free binaries is at most ``cfg.bnb_max_binaries``.
    """
    cfg = cfg or AlgoConfig()
    backend = cfg.milp_backend
    if backend == "auto":
        free = sum(1 for b, lo, hi in zip(p.binary, p.lo, p.hi) if b and hi > lo)
        backend = "bnb" if free <= cfg.bnb_max_binaries or debug else "highs"
    if backend == "highs":
        return solve_milp_highs(p, cfg)
    return solve_milp_bnb(p, cfg, debug)


def solve_milp_highs(p: MilpProblem, cfg: AlgoConfig | None = None) -> MilpSolution:
    """Solve ``p`` with the HiGHS branch and cut code shipped in SciPy."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    cfg = cfg or AlgoConfig()
    A, sense, rhs = p.dense()
    c = np.asarray(p.obj, float)
    lb = np.where(sense >= 0, rhs, -np.inf)
    ub = np.where(sense <= 0, rhs, np.inf)
    cons = [LinearConstraint(A, lb, ub)] if len(rhs) else []
    res = milp(-c, constraints=cons, integrality=np.asarray(p.binary, int),
               bounds=Bounds(np.asarray(p.lo, float), np.asarray(p.hi, float)),
               options={"node_limit": cfg.bnb_node_limit, "mip_rel_gap": 1e-9})
    if res.status == 2:
        return MilpSolution(Status.INFEASIBLE, np.asarray(p.lo, float), math.nan, math.inf)
    if res.status == 3:
        return MilpSolution(Status.UNBOUNDED, np.asarray(p.lo, float), math.nan, math.inf)
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.x is None:
        return MilpSolution(Status.ITERATION_LIMIT, np.asarray(p.lo, float), math.nan, math.inf, nodes)
    x = np.asarray(res.x, float).copy()
    binary = np.asarray(p.binary, bool)
    x[binary] = np.round(x[binary])
    obj = p.objective_value(x)
    bound = -float(res.mip_dual_bound) if getattr(res, "mip_dual_bound", None) is not None else obj
    gap = max(0.0, bound - obj)
    status = Status.OPTIMAL if res.status == 0 and gap <= max(cfg.bnb_gap, 1e-6) else Status.ITERATION_LIMIT
    return MilpSolution(status, x, obj, gap, nodes)


def solve_milp_bnb(p: MilpProblem, cfg: AlgoConfig | None = None, debug: bool = False) -> MilpSolution:
    """Best-bound branch and bound over the binary variables of ``p``."""
    cfg = cfg or AlgoConfig()
    binary = np.asarray(p.binary, bool)
    lo0 = np.asarray(p.lo, float)
    hi0 = np.asarray(p.hi, float)
    gap_tol = cfg.bnb_gap
    tie = itertools.count()

    root = solve_lp(p, debug=debug, lo=lo0, hi=hi0)
    pivots = root.pivots
    if root.status is not Status.OPTIMAL:
        return MilpSolution(root.status, root.values, math.nan, math.inf, 1, pivots, root.dual_feasible)

    best_x, best_obj = None, -math.inf
    history: list[float] = []
    pruned_bound = -math.inf
    # heap entries: (-bound, -depth, tie, lo, hi, lp solution)
    heap = [(-root.objective, 0, next(tie), lo0, hi0, root)]
    nodes = 1
    while heap:
        neg_bound, neg_depth, _, lo, hi, sol = heapq.heappop(heap)
        bound = -neg_bound
        if bound <= best_obj + gap_tol:
            pruned_bound = bound
            heap.clear()
            break
        k = _most_fractional(sol.values, binary)
        if k < 0:
            best_x, best_obj = sol.values, sol.objective
            history.append(best_obj)
            continue
        if nodes >= cfg.bnb_node_limit:
            heapq.heappush(heap, (neg_bound, neg_depth, next(tie), lo, hi, sol))
            break
        for fix in (1.0, 0.0):
            clo, chi = lo.copy(), hi.copy()
            clo[k] = chi[k] = fix
            child = solve_lp(p, debug=debug, lo=clo, hi=chi)
            nodes += 1
            pivots += child.pivots
            if child.status is Status.UNBOUNDED:
                return MilpSolution(Status.UNBOUNDED, child.values, math.nan, math.inf, nodes, pivots)
            if child.status is not Status.OPTIMAL or child.objective <= best_obj + gap_tol:
                continue
            if _most_fractional(child.values, binary) < 0:
                best_x, best_obj = child.values, child.objective
                history.append(best_obj)
                continue
            heapq.heappush(heap, (-child.objective, neg_depth - 1, next(tie), clo, chi, child))

    open_bound = max(max((-h[0] for h in heap), default=-math.inf), pruned_bound)
    if best_x is None:
        status = Status.ITERATION_LIMIT if heap else Status.INFEASIBLE
        return MilpSolution(status, lo0.copy(), math.nan, math.inf, nodes, pivots)
    x = best_x.copy()
    x[binary] = np.round(x[binary])
    gap = max(0.0, open_bound - best_obj)
    status = Status.ITERATION_LIMIT if heap and gap > gap_tol else Status.OPTIMAL
    return MilpSolution(status, x, p.objective_value(x), gap, nodes, pivots, incumbents=history)
