"""Parameter containers and unit helpers.

Everything inside the library is SI: watts, hertz, bit/s, metres. dBm and
Mb/s only show up when reading configuration or writing reports.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

Point = tuple[float, float]


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(w: float) -> float:
    if w <= 0:
        raise ValueError(f"power must be positive to express in dBm, got {w!r}")
    return 10.0 * math.log10(w) + 30.0


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ValueError(f"{name}: {msg}")


@dataclass(frozen=True)
class ChannelParams:
    """Propagation constants for the UBS->UE (air-to-ground) and MBS->UE links."""

    alpha1: float = 4.88
    alpha2: float = 0.43
    eta_los_db: float = 0.1
    eta_nlos_db: float = 21.0
    path_loss_exp: float = 3.0
    f_c: float = 2.5e9
    c: float = 3.0e8
    d0: float = 1.0
    g_tx: float = 1.0
    g_rx: float = 1.0
    g_mtx: float = 1.0
    g_mrx: float = 1.0

    def __post_init__(self) -> None:
        _require(self.alpha1 > 0, "alpha1", "must be > 0")
        _require(self.alpha2 > 0, "alpha2", "must be > 0")
        _require(2.0 <= self.path_loss_exp <= 6.0, "path_loss_exp", "must lie in [2, 6]")
        _require(self.f_c > 0, "f_c", "must be > 0")
        _require(self.c > 0, "c", "must be > 0")
        _require(self.d0 > 0, "d0", "must be > 0")
        for name in ("g_tx", "g_rx", "g_mtx", "g_mrx"):
            _require(getattr(self, name) > 0, name, "antenna gain must be > 0")

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c


@dataclass(frozen=True)
class SystemParams:
    bandwidth_w: float = 40e6
    n_subchannels: int = 4
    noise_per_sc: float = dbm_to_watt(-85.0)
    mbs_power_per_sc: float = dbm_to_watt(24.0)
    ubs_altitude: float = 100.0

    def __post_init__(self) -> None:
        _require(self.bandwidth_w > 0, "bandwidth_w", "must be > 0")
        _require(int(self.n_subchannels) == self.n_subchannels and self.n_subchannels >= 1,
                 "n_subchannels", "must be an integer >= 1")
        _require(self.noise_per_sc > 0, "noise_per_sc", "must be > 0")
        _require(self.mbs_power_per_sc >= 0, "mbs_power_per_sc", "must be >= 0")
        _require(self.ubs_altitude > 0, "ubs_altitude", "must be > 0")


def per_sc_bandwidth(system: SystemParams) -> float:
    return system.bandwidth_w / system.n_subchannels


def _points(seq: Sequence[Sequence[float]], name: str) -> tuple[Point, ...]:
    out = []
    for k, p in enumerate(seq):
        _require(len(p) == 2, name, f"entry {k} is not a 2-D point")
        x, y = float(p[0]), float(p[1])
        _require(math.isfinite(x) and math.isfinite(y), name, f"entry {k} is not finite")
        out.append((x, y))
    return tuple(out)


@dataclass(frozen=True)
class Scenario:
    """One problem instance: geometry, QoS demands and per-UBS limits."""

    mbs_pos: Point
    ubs_pos: tuple[Point, ...]
    ue_pos: tuple[Point, ...]
    r_min: tuple[float, ...]
    c_max: tuple[float, ...]
    p_circuit: tuple[float, ...]
    p_max: tuple[float, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    system: SystemParams = field(default_factory=SystemParams)
    seed: int = 0

    def __post_init__(self) -> None:
        # normalise containers so equality and hashing are structural
        object.__setattr__(self, "mbs_pos", _points([self.mbs_pos], "mbs_pos")[0])
        object.__setattr__(self, "ubs_pos", _points(self.ubs_pos, "ubs_pos"))
        object.__setattr__(self, "ue_pos", _points(self.ue_pos, "ue_pos"))
        for name in ("r_min", "c_max", "p_circuit", "p_max"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "seed", int(self.seed))

        n_u, n_d = len(self.ue_pos), len(self.ubs_pos)
        _require(n_u >= 1, "ue_pos", "need at least one UE")
        _require(n_d >= 1, "ubs_pos", "need at least one UBS")
        _require(len(self.r_min) == n_u, "r_min", f"expected {n_u} entries, got {len(self.r_min)}")
        for name in ("c_max", "p_circuit", "p_max"):
            vals = getattr(self, name)
            _require(len(vals) == n_d, name, f"expected {n_d} entries, got {len(vals)}")
        _require(all(v > 0 for v in self.r_min), "r_min", "all entries must be > 0")
        _require(all(v > 0 for v in self.c_max), "c_max", "all entries must be > 0")
        _require(all(v >= 0 for v in self.p_circuit), "p_circuit", "all entries must be >= 0")
        for j, (pc, pm) in enumerate(zip(self.p_circuit, self.p_max)):
            _require(pm > pc, "p_max", f"UBS {j}: p_max ({pm}) must exceed p_circuit ({pc})")

    @property
    def n_ues(self) -> int:
        return len(self.ue_pos)

    @property
    def n_ubs(self) -> int:
        return len(self.ubs_pos)

    @property
    def n_sc(self) -> int:
        return self.system.n_subchannels

    @property
    def budget(self) -> tuple[float, ...]:
        """Transmit budget p_max - p_circuit per UBS, in watts."""
        return tuple(pm - pc for pm, pc in zip(self.p_max, self.p_circuit))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mbs_pos"] = list(self.mbs_pos)
        d["ubs_pos"] = [list(p) for p in self.ubs_pos]
        d["ue_pos"] = [list(p) for p in self.ue_pos]
        for name in ("r_min", "c_max", "p_circuit", "p_max"):
            d[name] = list(getattr(self, name))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["channel"] = ChannelParams(**d.get("channel", {}))
        d["system"] = SystemParams(**d.get("system", {}))
        return cls(**d)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class AlgoConfig:
    r_max: int = 1000
    ee_rel_tol: float = 1e-4
    feas_tol: float = 1e-6
    strict_margin: float = 1e-6
    bnb_gap: float = 1e-7
    newton_tol: float = 1e-8
    mc_replications: int = 30
    sca_repeats: int = 1
    bnb_node_limit: int = 200_000
    milp_backend: str = "auto"
    bnb_max_binaries: int = 24

    def __post_init__(self) -> None:
        _require(self.r_max >= 1, "r_max", "must be >= 1")
        _require(self.sca_repeats >= 1, "sca_repeats", "must be >= 1")
        _require(self.mc_replications >= 1, "mc_replications", "must be >= 1")
        _require(self.bnb_node_limit >= 1, "bnb_node_limit", "must be >= 1")
        _require(self.milp_backend in ("auto", "bnb", "highs"), "milp_backend",
                 "must be one of auto, bnb, highs")
        _require(self.bnb_max_binaries >= 0, "bnb_max_binaries", "must be >= 0")
        for name in ("ee_rel_tol", "feas_tol", "strict_margin", "bnb_gap", "newton_tol"):
            _require(getattr(self, name) > 0, name, "must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown AlgoConfig keys: {sorted(unknown)}")
        return cls(**known)
