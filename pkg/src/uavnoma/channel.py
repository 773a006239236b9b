"""Deterministic path-loss models and the precomputed gain tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChannelParams, Point, Scenario


def elevation_deg(H: float, d_h: float) -> float:
    if d_h == 0:
        return 90.0
    return math.degrees(math.atan(H / d_h))


def p_los(H: float, d_h: float, params: ChannelParams) -> float:
    """LoS probability of a UBS at altitude ``H`` seen from horizontal range ``d_h``."""
    theta = elevation_deg(H, d_h)
    return 1.0 / (1.0 + params.alpha1 * math.exp(-params.alpha2 * (theta - params.alpha1)))


def _free_space(d: float, g: float, exp: float, params: ChannelParams) -> float:
    return g * params.wavelength ** 2 / (16.0 * math.pi ** 2 * (d / params.d0) ** exp)


def gain_atg(ue: Point, ubs: Point, H: float, params: ChannelParams) -> float:
    d_h = math.hypot(ue[0] - ubs[0], ue[1] - ubs[1])
    d = math.sqrt(d_h ** 2 + H ** 2)
    pl = p_los(H, d_h, params)
    excess_db = pl * params.eta_los_db + (1.0 - pl) * params.eta_nlos_db
    return _free_space(d, params.g_tx * params.g_rx, 2.0, params) * 10.0 ** (-excess_db / 10.0)


def gain_mbs(ue: Point, mbs: Point, params: ChannelParams) -> float:
    d = math.hypot(ue[0] - mbs[0], ue[1] - mbs[1])
    if d < params.d0:
        raise ValueError(
            f"UE at {ue} is {d:.6g} m from the MBS, inside the far-field reference distance d0={params.d0}"
        )
    return _free_space(d, params.g_mtx * params.g_mrx, params.path_loss_exp, params)


@dataclass(frozen=True, eq=False)
class GainTables:
    h: np.ndarray  # [N_u, N_d, N_s]
    h_m: np.ndarray  # [N_u, N_s]

    def __post_init__(self) -> None:
        self.h.setflags(write=False)
        self.h_m.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.h.shape

    def to_csv(self, path: str | Path) -> None:
        n_u, n_d, n_s = self.h.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "n", "h"])
            for i in range(n_u):
                for j in range(n_d):
                    for n in range(n_s):
                        w.writerow([i, j, n, repr(float(self.h[i, j, n]))])
            for i in range(n_u):
                for n in range(n_s):
                    w.writerow([i, "M", n, repr(float(self.h_m[i, n]))])


def build_gain_tables(scenario: Scenario) -> GainTables:
    n_u, n_d, n_s = scenario.n_ues, scenario.n_ubs, scenario.n_sc
    H = scenario.system.ubs_altitude
    ch = scenario.channel
    h = np.empty((n_u, n_d, n_s))
    h_m = np.empty((n_u, n_s))
    for i, ue in enumerate(scenario.ue_pos):
        gm = gain_mbs(ue, scenario.mbs_pos, ch)
        h_m[i, :] = gm
        for j, ubs in enumerate(scenario.ubs_pos):
            # antenna gains carry no subchannel index, so the channel is flat in n
            h[i, j, :] = gain_atg(ue, ubs, H, ch)
    return GainTables(h=h, h_m=h_m)
