import itertools

import numpy as np
import pytest

from uavnoma.assoc import build_primary_ilp
from uavnoma.milp import EQ, GE, LE, MilpProblem, Status, solve_lp, solve_milp
from uavnoma.model import AlgoConfig
from uavnoma.rates import PowerAlloc

BNB = AlgoConfig(milp_backend="bnb")


def lp(obj, rows, bounds, binary=()):
    p = MilpProblem()
    for k, (lo, hi) in enumerate(bounds):
        p.add_var(f"x{k}", lo, hi, binary=k in binary, obj=obj[k])
    for coeffs, rel, rhs in rows:
        p.add_row(dict(enumerate(coeffs)), rel, rhs)
    return p


def test_lp_simple():
    sol = solve_lp(lp([1, 1], [([1, 1], LE, 1)], [(0, 1), (0, 1)]), debug=True)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(1.0)


def test_lp_infeasible():
    p = lp([1], [([1], GE, 2), ([1], LE, 1)], [(0, np.inf)])
    assert solve_lp(p).status is Status.INFEASIBLE


def test_lp_unbounded_is_reported():
    p = lp([1, 0], [([1, -1], LE, 1)], [(0, np.inf), (0, np.inf)])
    assert solve_lp(p).status is Status.UNBOUNDED
    assert solve_milp(p, BNB).status is Status.UNBOUNDED


def test_lp_equality_and_free_lower():
    p = lp([1, 2], [([1, 1], EQ, 3), ([1, -1], GE, -5)], [(-2, 10), (-np.inf, 2.5)])
    sol = solve_lp(p, debug=True)
    assert sol.objective == pytest.approx(0.5 + 5.0)
    assert p.max_violation(sol.values) < 1e-9


def test_beale_cycling_example_terminates():
    # classic instance on which Dantzig pricing without safeguards cycles
    p = lp([0.75, -20, 0.5, -6],
           [([0.25, -8, -1, 9], LE, 0), ([0.5, -12, -0.5, 3], LE, 0), ([0, 0, 1, 0], LE, 1)],
           [(0, np.inf)] * 4)
    sol = solve_lp(p, debug=True)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(1.25)


def vertex_oracle(A, b, c):
    """max c.x over {A x <= b, x >= 0} by enumerating every basis of the active set."""
    m, n = A.shape
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(m + n), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, float(c @ x))
    return best


@pytest.mark.parametrize("seed", range(12))
def test_random_dense_lp_vs_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 10 if seed < 2 else 6
    m = n
    A = rng.uniform(-1, 2, (m, n))
    A[0] = 1.0  # keeps the polytope bounded
    b = rng.uniform(1, 5, m)
    c = rng.normal(size=n)
    p = lp(c, [(row, LE, bi) for row, bi in zip(A, b)], [(0, np.inf)] * n)
    sol = solve_lp(p, debug=True)
    assert sol.status is Status.OPTIMAL
    assert sol.dual_feasible
    assert sol.objective == pytest.approx(vertex_oracle(A, b, c), abs=1e-7)


def test_milp_knapsack_example():
    p = lp([5, 4], [([3, 2], LE, 3)], [(0, 1), (0, 1)], binary=(0, 1))
    sol = solve_milp(p, BNB, debug=True)
    assert sol.status is Status.OPTIMAL
    assert sol.values.tolist() == [1.0, 0.0]
    assert sol.objective == 5.0


def test_milp_without_binaries_equals_lp():
    p = lp([1, 2], [([1, 1], LE, 4), ([1, -1], GE, -1)], [(0, 3), (0, 3)])
    a, b = solve_lp(p), solve_milp(p, BNB)
    assert b.objective == pytest.approx(a.objective, abs=1e-12)
    np.testing.assert_allclose(a.values, b.values)


def test_milp_infeasible_binary():
    p = lp([1, 1], [([1, 1], GE, 3)], [(0, 1), (0, 1)], binary=(0, 1))
    assert solve_milp(p, BNB).status is Status.INFEASIBLE


def brute_force_primary(r, rmin, cmax):
    """Max-min rate of problem (23) by enumerating all tensors with <= 1 UE per (j, n)."""
    n_u, n_d, n_s = r.shape
    best = -np.inf
    for choice in itertools.product(range(n_u + 1), repeat=n_d * n_s):
        a = np.zeros_like(r)
        for sc, i in enumerate(choice):
            if i < n_u:
                a[i, sc // n_s, sc % n_s] = 1
        R = (a * r).sum(axis=(1, 2))
        if np.all(R >= rmin - 1e-12) and np.all((a * r).sum(axis=(0, 2)) <= cmax + 1e-12):
            best = max(best, R.min())
    return best


def test_primary_problem_vs_enumeration(tiny_instance):
    sc, G, _, P = tiny_instance
    p = build_primary_ilp(P, G, sc)
    sol = solve_milp(p, BNB, debug=True)
    from uavnoma.rates import rate_tables
    r = rate_tables(P, G, sc.system)[0] / 1e6
    oracle = brute_force_primary(r, np.array(sc.r_min) / 1e6, np.array(sc.c_max) / 1e6)
    assert sol.objective == pytest.approx(oracle, abs=1e-7)
    assert sol.gap <= BNB.bnb_gap
    assert p.max_violation(sol.values) <= BNB.feas_tol
    assert all(b >= a for a, b in zip(sol.incumbents, sol.incumbents[1:]))


def test_highs_backend_agrees_with_bnb(tiny_instance):
    sc, G, _, P = tiny_instance
    rng = np.random.default_rng(3)
    for _ in range(5):
        Q = PowerAlloc(P.p1 * rng.uniform(0.5, 1.5, P.p1.shape), P.p2)
        p = build_primary_ilp(Q, G, sc)
        a = solve_milp(p, BNB)
        b = solve_milp(p, AlgoConfig(milp_backend="highs"))
        assert a.status == b.status
        if a.optimal:
            assert b.objective == pytest.approx(a.objective, abs=1e-6)


def test_lp_text_dump_names_variables(tiny_instance):
    sc, G, _, P = tiny_instance
    text = build_primary_ilp(P, G, sc).to_lp_text()
    assert text.startswith("maximize")
    for name in ("a_0_0_0", "eta_0", "eta_R", "binary", "subject to"):
        assert name in text


def test_problem_rejects_bad_rows():
    p = MilpProblem()
    p.add_var("x")
    with pytest.raises(ValueError):
        p.add_row({3: 1.0}, LE, 1)
    with pytest.raises(ValueError):
        p.add_row({0: float("nan")}, LE, 1)
    with pytest.raises(ValueError):
        p.add_var("x")
