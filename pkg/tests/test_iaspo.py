import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest

from uavnoma.assoc import AssociationInfeasible
from uavnoma.iaspo import RunStatus, eta_ee, initial_power, run_asoo, run_iaspo, run_iaspo_fdma
from uavnoma.model import AlgoConfig
from uavnoma.rates import evaluate


@pytest.fixture(scope="module")
def iaspo_run(table1_instance):
    sc, G, _, _ = table1_instance
    return run_iaspo(sc, AlgoConfig(), G)


@pytest.fixture(scope="module")
def fdma_run(table1_instance):
    sc, G, _, _ = table1_instance
    try:
        return run_iaspo_fdma(sc, AlgoConfig(), G)
    except AssociationInfeasible:
        pytest.skip("FDMA association infeasible on this instance")


def test_eta_ee_is_ratio_and_zeroes_transformed_objective(table1_instance):
    sc, G, A, P = table1_instance
    rep = evaluate(A, P, G, sc)
    value = eta_ee(A, P, G, sc)
    assert value == rep.eta_ee
    assert value == pytest.approx(rep.eta_r / rep.eta_p, rel=1e-15)
    assert rep.eta_r - value * rep.eta_p == pytest.approx(0.0, abs=1e-6)
    assert 10e6 / 0.25 == 40e6


def test_eta_ee_homogeneous_in_rates(table1_instance):
    # doubling the bandwidth at fixed per-subchannel noise doubles every rate
    sc, G, A, P = table1_instance
    wide = sc.with_(system=replace(sc.system, bandwidth_w=2 * sc.system.bandwidth_w))
    assert eta_ee(A, P, G, wide) == pytest.approx(2 * eta_ee(A, P, G, sc), rel=1e-12)


def test_initial_power_values(table1_instance):
    sc = table1_instance[0]
    noma, fdma = initial_power(sc, "noma"), initial_power(sc, "fdma")
    assert noma.p1[0, 0] == pytest.approx(9.449e-3, rel=1e-3)
    assert noma.p2[0, 0] == noma.p1[0, 0]
    assert fdma.p1[0, 0] == pytest.approx(1.890e-2, rel=1e-3)
    assert (fdma.p2 == 0).all()
    np.testing.assert_allclose(noma.per_ubs, np.asarray(sc.budget) / 2, rtol=1e-12)
    with pytest.raises(ValueError):
        initial_power(sc, "ofdm")


def test_asoo_matches_iaspo_start(table1_instance, iaspo_run):
    sc, G, _, _ = table1_instance
    asoo = run_asoo(sc, AlgoConfig(), G)
    first = iaspo_run.record.entries[0]
    assert len(asoo.record.entries) == 1
    assert asoo.record.entries[0].assignment_hash == first.assignment_hash
    assert asoo.record.entries[0].eta_ee == first.eta_ee
    assert asoo.power.checksum() == initial_power(sc).checksum()
    assert iaspo_run.report.f_ee >= asoo.report.f_ee - 1e-6


def test_iaspo_monotone_and_converged(iaspo_run):
    rec = iaspo_run.record
    assert rec.status is RunStatus.CONVERGED
    series = rec.eta_ee_series
    for a, b in zip(series, series[1:]):
        assert b >= a * (1 - 1e-9)
    assert len(rec.entries) - 1 <= 50
    assert [e.r for e in rec.entries] == list(range(len(rec.entries)))


def test_iaspo_final_point_is_feasible(table1_instance, iaspo_run):
    sc, G, _, _ = table1_instance
    rep = evaluate(iaspo_run.assignment, iaspo_run.power, G, sc, 1e-6)
    assert rep.feasible, rep.violations
    assert rep.f_ee == iaspo_run.report.f_ee
    assert iaspo_run.record.final.power_checksum == iaspo_run.power.checksum()


def test_lemma1_stationarity(iaspo_run):
    final = iaspo_run.record.final
    param = final.eta_ee_param
    assert abs(final.eta_r - param * final.eta_p) / (param * final.eta_p) <= 10 * AlgoConfig().ee_rel_tol


def test_guard_keeps_assignment(iaspo_run):
    entries = iaspo_run.record.entries
    assert not entries[0].guard_triggered
    for prev, cur in zip(entries, entries[1:]):
        if cur.guard_triggered:
            assert cur.assignment_hash == prev.assignment_hash


def test_iteration_cap(table1_instance):
    sc, G, _, _ = table1_instance
    res = run_iaspo(sc, AlgoConfig(r_max=2, ee_rel_tol=1e-15), G)
    assert res.record.status is RunStatus.ITERATION_CAP
    assert len(res.record.entries) == 3


def test_deterministic_record(table1_instance, iaspo_run):
    sc, G, _, _ = table1_instance
    again = run_iaspo(sc, AlgoConfig(), G)
    assert again.record.to_dict(timing=False) == iaspo_run.record.to_dict(timing=False)


def test_record_serialisation(iaspo_run):
    rec = iaspo_run.record
    rows = list(csv.reader(io.StringIO(rec.to_csv())))
    assert rows[0] == ["r", "eta_R_mbps", "eta_P_w", "f_ee", "guard"]
    assert len(rows) == len(rec.entries) + 1
    assert float(rows[-1][3]) == pytest.approx(rec.final.f_ee, rel=1e-8)
    d = json.loads(rec.to_json())
    assert d["status"] == "Converged" and len(d["entries"]) == len(rec.entries)
    assert "wallclock" in d["entries"][0]
    assert "wallclock" not in rec.to_dict(timing=False)["entries"][0]
    a, p, r = iaspo_run
    assert r is rec and a is iaspo_run.assignment and p is iaspo_run.power


def test_fdma_never_pairs(table1_instance, fdma_run):
    sc = table1_instance[0]
    assert not fdma_run.assignment.pairs
    assert (fdma_run.power.p2 == 0).all()
    assert fdma_run.record.entries[0].power_checksum == initial_power(sc, "fdma").checksum()
    series = fdma_run.record.eta_ee_series
    for a, b in zip(series, series[1:]):
        assert b >= a * (1 - 1e-9)


def test_first_stage_infeasible_is_an_error(table1_instance):
    sc, G, _, _ = table1_instance
    greedy = sc.with_(r_min=tuple(1e9 for _ in sc.r_min))
    for algo in (run_iaspo, run_asoo, run_iaspo_fdma):
        with pytest.raises(AssociationInfeasible):
            algo(greedy, AlgoConfig(), G)
