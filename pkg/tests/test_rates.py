import math

import numpy as np
import pytest

from uavnoma.channel import GainTables, build_gain_tables
from uavnoma.experiment import generate_scenario
from uavnoma.model import Scenario, SystemParams
from uavnoma.rates import Assignment, PowerAlloc, evaluate, rate, rate_tables, resolve_roles, \
    sinr_primary, sinr_secondary

H1, HM, PM, SIG = 8.911e-9, 5.836e-12, 0.2512, 3.162e-12
SYS1 = SystemParams(bandwidth_w=10e6, n_subchannels=1, noise_per_sc=SIG, mbs_power_per_sc=PM)


def tables(h, hm):
    return GainTables(h=np.array(h, float), h_m=np.array(hm, float))


def test_sinr_primary_examples():
    G = tables([[[H1]]], [[HM]])
    assert sinr_primary(0, 0, 0, PowerAlloc([[0.0]], [[0.0]]), G, SYS1) == 0.0
    s = sinr_primary(0, 0, 0, PowerAlloc([[0.0378]], [[0.0]]), G, SYS1)
    assert s == pytest.approx(0.0378 * H1 / (PM * HM + SIG), rel=1e-12)
    assert s == pytest.approx(72.78, abs=5e-3)


def test_sinr_primary_symmetric_ubs():
    G = tables([[[2e-9], [2e-9]]], [[HM]])
    P = PowerAlloc([[0.02], [0.02]], [[0.01], [0.01]])
    sys = SystemParams(n_subchannels=1)
    assert sinr_primary(0, 0, 0, P, G, sys) == sinr_primary(0, 1, 0, P, G, sys)


def test_sinr_secondary_examples():
    G = tables([[[H1]]], [[HM]])
    P = PowerAlloc([[0.0378]], [[0.0378]])
    assert sinr_secondary(0, 0, 0, PowerAlloc([[0.0378]], [[0.0]]), G, SYS1) == 0.0
    # external interference + noise of 4.628e-12 W
    s = sinr_secondary(0, 0, 0, P, G, SYS1)
    assert PM * HM + SIG == pytest.approx(4.628e-12, rel=2e-4)
    assert s == pytest.approx(0.98644, abs=5e-5)
    assert sinr_secondary(0, 0, 0, PowerAlloc([[0.0]], [[0.0378]]), G, SYS1) == \
        pytest.approx(sinr_primary(0, 0, 0, PowerAlloc([[0.0378]], [[0.0]]), G, SYS1), rel=1e-15)


def test_rate_examples():
    assert rate(0.0, SYS1) == 0.0
    assert rate(1.0, SYS1) == 10e6
    assert rate(72.78, SYS1) == pytest.approx(1e7 * math.log2(73.78), rel=1e-14)
    assert rate(72.78, SYS1) / 1e6 == pytest.approx(62.06, abs=1e-2)  # 62.0516 exactly


def _single():
    sc = Scenario(mbs_pos=(0, 0), ubs_pos=[(0, 0)], ue_pos=[(300, 0)], r_min=[1e6], c_max=[1e8],
                  p_circuit=[0.1], p_max=[0.25], system=SYS1)
    return sc, tables([[[H1]]], [[HM]])


def test_evaluate_single_link():
    sc, G = _single()
    A = resolve_roles([[[1]]], G)
    rep = evaluate(A, PowerAlloc([[0.0378]], [[0.0]]), G, sc)
    assert rep.rate_per_ue[0] / 1e6 == pytest.approx(62.06, abs=1e-2)
    assert rep.eta_p == pytest.approx(0.1 + 0.0378, rel=1e-14)
    assert rep.feasible


def test_evaluate_empty_assignment_flags_every_ue():
    sc = generate_scenario(4, 2, 0)
    G = build_gain_tables(sc)
    A = resolve_roles(np.zeros((4, 2, 4), int), G)
    rep = evaluate(A, PowerAlloc.zeros(2, 4), G, sc)
    assert np.all(rep.rate_per_ue == 0)
    assert sorted(v[1] for v in rep.violations if v[0] == "C5") == [0, 1, 2, 3]


def _random_state(rng, n_u=5, n_d=3, seed=0):
    sc = generate_scenario(n_u, n_d, seed)
    G = build_gain_tables(sc)
    a = np.zeros((n_u, n_d, 4), int)
    for j in range(n_d):
        for n in range(4):
            k = rng.integers(0, 3)
            a[rng.choice(n_u, k, replace=False), j, n] = 1
    A = resolve_roles(a, G)
    p1 = rng.uniform(0, 0.02, (n_d, 4))
    p2 = p1 + rng.uniform(0, 0.02, (n_d, 4))
    return sc, G, A, PowerAlloc(p1, p2)


def test_evaluate_invariants(rng):
    for seed in range(10):
        sc, G, A, P = _random_state(rng, seed=seed)
        rep = evaluate(A, P, G, sc)
        assert rep.eta_r == rep.rate_per_ue.min()
        assert rep.eta_p == rep.power_per_ubs.max()
        assert rep.f_ee == sc.n_ues / sc.n_ubs * rep.eta_ee
        assert rep.eta_ee == rep.eta_r / rep.eta_p


def test_evaluate_matches_scalar_formulas(rng):
    sc, G, A, P = _random_state(rng, seed=3)
    rep = evaluate(A, P, G, sc)
    R = np.zeros(sc.n_ues)
    for (j, n), ues in A.roles.items():
        if ues:
            R[ues[0]] += rate(sinr_primary(ues[0], j, n, P, G, sc.system), sc.system)
        if len(ues) == 2:
            R[ues[1]] += rate(sinr_secondary(ues[1], j, n, P, G, sc.system), sc.system)
    np.testing.assert_allclose(rep.rate_per_ue, R, rtol=1e-12)


def test_secondary_sinr_bounded_by_power_ratio(rng):
    for seed in range(20):
        sc, G, A, P = _random_state(rng, seed=seed)
        for (j, n) in A.pairs:
            i2 = A.roles[j, n][1]
            s = sinr_secondary(i2, j, n, P, G, sc.system)
            assert s <= P.p2[j, n] / P.p1[j, n] * (1 + 1e-12)


def test_evaluate_invariant_under_subchannel_permutation(rng):
    sc, G, A, P = _random_state(rng, seed=5)
    perm = np.array([2, 0, 3, 1])
    G2 = GainTables(h=np.array(G.h[:, :, perm]), h_m=np.array(G.h_m[:, perm]))
    A2 = resolve_roles(A.a[:, :, perm], G2)
    P2 = PowerAlloc(P.p1[:, perm], P.p2[:, perm])
    r1, r2 = evaluate(A, P, G, sc), evaluate(A2, P2, G2, sc)
    np.testing.assert_allclose(r1.rate_per_ue, r2.rate_per_ue, rtol=1e-13)
    np.testing.assert_allclose(r1.power_per_ubs, r2.power_per_ubs, rtol=1e-13)


def test_resolve_roles_cases():
    G = tables([[[3e-9]], [[5e-9]], [[5e-9]]], [[HM], [HM], [HM]])
    assert resolve_roles([[[1]], [[0]], [[0]]], G).roles[0, 0] == (0,)
    assert resolve_roles([[[1]], [[1]], [[0]]], G).roles[0, 0] == (1, 0)
    assert resolve_roles([[[0]], [[1]], [[1]]], G).roles[0, 0] == (1, 2)
    assert resolve_roles([[[0]], [[0]], [[0]]], G).roles[0, 0] == ()
    with pytest.raises(ValueError, match="C1"):
        resolve_roles([[[1]], [[1]], [[1]]], G)
    with pytest.raises(ValueError, match="C2"):
        resolve_roles([[[2]], [[0]], [[0]]], G)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_audit_power_constraint_ids():
    sc, G = _single()
    A = resolve_roles([[[1]]], G)
    rep = evaluate(A, PowerAlloc([[0.2]], [[0.05]]), G, sc)
    ids = {v[0] for v in rep.violations}
    assert {"C3", "C8"} <= ids
    rep = evaluate(A, PowerAlloc([[-0.01]], [[0.0]]), G, sc)
    assert "C9" in {v[0] for v in rep.violations}
    d = rep.to_dict()
    assert all(v["constraint"].startswith("C") for v in d["violations"])


def test_audit_c4_and_c6():
    sc = Scenario(mbs_pos=(0, 0), ubs_pos=[(0, 0)], ue_pos=[(300, 0), (310, 0)], r_min=[1.0, 1.0],
                  c_max=[1.0], p_circuit=[0.1], p_max=[0.25], system=SYS1)
    G = tables([[[H1]], [[H1 / 2]]], [[HM], [HM]])
    A = resolve_roles([[[1]], [[1]]], G)
    rep = evaluate(A, PowerAlloc([[0.05]], [[0.01]]), G, sc)
    ids = {v[0] for v in rep.violations}
    assert {"C4", "C6"} <= ids


def test_power_alloc_serialisation():
    P = PowerAlloc([[0.1, 0.2]], [[0.0, 0.3]])
    assert PowerAlloc.from_dict(P.to_dict()) == P
    assert P.per_ubs[0] == pytest.approx(0.6)
    with pytest.raises(ValueError):
        PowerAlloc([[0.1]], [[0.1, 0.2]])
    assert isinstance(Assignment(a=np.zeros((1, 1, 1)), roles={}).digest(), str)
