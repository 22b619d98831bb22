"""Propagation and per-slot reception.

Two reception models are available.  PROTOCOL treats the sensing range as a
hard disc: a packet fails at a receiver when any other co-slot transmission on
an overlapping subchannel is also within range of that receiver.  SINR decodes
when the linear signal to noise-plus-interference ratio clears a threshold.
A vehicle never receives during a slot in which it transmits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Sequence

import numpy as np

from .grid import SingleSlotResource
from .mobility import Vehicle, distance


class ReceptionModel(str, Enum):
    PROTOCOL = "protocol"
    SINR = "sinr"


class FailureCause(IntEnum):
    HALF_DUPLEX = 1
    COLLISION = 2
    OUT_OF_RANGE = 3
    BELOW_SINR = 4


SUCCESS = 0


@dataclass
class ChannelConfig:
    tx_power: float = 23.0  # dBm
    sensing_range: float = 300.0  # m
    model: ReceptionModel = ReceptionModel.PROTOCOL
    pathloss_exponent: float = 2.75
    pathloss_ref_db: float = 47.0  # dB at 1 m
    sinr_threshold: float = 3.0  # dB
    noise_floor: float = -98.0  # dBm over the BSM bandwidth

    def __post_init__(self):
        self.model = ReceptionModel(self.model)

    def validate(self) -> list[str]:
        errs = []
        if not self.sensing_range > 0:
            errs.append("channel.sensing_range must be > 0")
        if not np.isfinite(self.sinr_threshold):
            errs.append("channel.sinr_threshold must be finite")
        if not self.pathloss_exponent > 0:
            errs.append("channel.pathloss_exponent must be > 0")
        return errs


@dataclass(frozen=True)
class TransmissionEvent:
    tx_id: int
    resource: SingleSlotResource
    t_gen: float  # ms
    x: float
    y: float
    subchannels: tuple[int, ...] = (0, 1)
    rri: int = 0
    size: int = 190  # bytes

    def __post_init__(self):
        if self.t_gen > self.resource.slot:
            raise ValueError("packet generated after its transmission slot")


@dataclass(frozen=True)
class ReceptionOutcome:
    rx_id: int
    tx_id: int
    success: bool
    failure_cause: FailureCause | None
    rsrp_at_rx: float


def rsrp_at(distance_m, cfg: ChannelConfig):
    """Received power (dBm) under a log-distance law, clamped at 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    out = cfg.tx_power - (cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * np.log10(d))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SlotResolution:
    """Vectorised result for K transmitters and N candidate receivers."""

    success: np.ndarray  # (K, N) bool
    cause: np.ndarray  # (K, N) int8, 0 on success
    rsrp: np.ndarray  # (K, N) dBm
    in_range: np.ndarray  # (K, N) bool, excluding the transmitter itself
    extra: dict = field(default_factory=dict)


def resolve_arrays(dist: np.ndarray, tx_rows: np.ndarray, sub_mask: np.ndarray,
                   cfg: ChannelConfig) -> SlotResolution:
    """Decide every (transmitter, receiver) link of one slot.

    ``dist`` is (K, N) transmitter-to-vehicle distance, ``tx_rows[k]`` is the
    column of transmitter k among the N vehicles, ``sub_mask`` is (K, J).
    """
    k_tx, n = dist.shape
    rows = np.arange(k_tx)

    rsrp = rsrp_at(dist, cfg)
    rsrp = np.asarray(rsrp, dtype=float).reshape(k_tx, n)
    in_range = dist <= cfg.sensing_range
    in_range[rows, tx_rows] = False
    sub_f = sub_mask.astype(float)
    overlap = (sub_f @ sub_f.T) > 0
    np.fill_diagonal(overlap, False)

    cause = np.zeros((k_tx, n), dtype=np.int8)
    if cfg.model is ReceptionModel.PROTOCOL:
        # float products go through BLAS; the counts are small exact integers
        clash = (overlap.astype(float) @ in_range.astype(float)) > 0.5
        bad = clash
        bad_code = FailureCause.COLLISION
    else:
        p_lin = 10.0 ** (rsrp / 10.0)
        interference = overlap.astype(float) @ p_lin
        sinr_db = 10.0 * np.log10(p_lin / (10.0 ** (cfg.noise_floor / 10.0) + interference))
        bad = sinr_db < cfg.sinr_threshold
        bad_code = FailureCause.BELOW_SINR
    cause[bad] = bad_code
    cause[~in_range] = FailureCause.OUT_OF_RANGE
    # covers each transmitter's own column as well
    cause[:, tx_rows] = FailureCause.HALF_DUPLEX
    success = cause == SUCCESS
    return SlotResolution(success, cause, rsrp, in_range)


def resolve_slot(transmissions: Sequence[TransmissionEvent], vehicles: Sequence[Vehicle],
                 cfg: ChannelConfig, road_length: float, n_subchannels: int = 2) -> list[ReceptionOutcome]:
    """Reception outcome for every (transmitter, other vehicle) pair in one slot.

    Vehicle positions are taken from ``vehicles``; the transmitter's position is
    the one it carries in its event.  Outcomes are ordered by (rx_id, tx_id).
    """
    if not transmissions:
        return []
    slots = {t.resource.slot for t in transmissions}
    if len(slots) > 1:
        raise ValueError(f"transmissions span several slots: {sorted(slots)}")
    ids = [veh.id for veh in vehicles]
    col = {vid: c for c, vid in enumerate(ids)}
    tx_rows = np.array([col[t.tx_id] for t in transmissions])
    vx = np.array([veh.x for veh in vehicles])
    vy = np.array([veh.y for veh in vehicles])
    tx_x = np.array([t.x for t in transmissions])
    tx_y = np.array([t.y for t in transmissions])
    dist = distance(tx_x[:, None], tx_y[:, None], vx[None, :], vy[None, :], road_length)
    sub_mask = np.zeros((len(transmissions), n_subchannels), dtype=bool)
    for k, t in enumerate(transmissions):
        sub_mask[k, list(t.subchannels)] = True
    res = resolve_arrays(dist, tx_rows, sub_mask, cfg)

    out = []
    for c in np.argsort(ids, kind="stable"):
        for k in np.argsort([t.tx_id for t in transmissions], kind="stable"):
            if tx_rows[k] == c:
                continue
            code = int(res.cause[k, c])
            out.append(ReceptionOutcome(
                rx_id=ids[c], tx_id=transmissions[k].tx_id, success=code == SUCCESS,
                failure_cause=None if code == SUCCESS else FailureCause(code),
                rsrp_at_rx=float(res.rsrp[k, c])))
    return out


def strongest_per_subchannel(rsrp: np.ndarray, in_range: np.ndarray, sub_mask: np.ndarray,
                             rri: np.ndarray):
    """Sensing view of one slot at every vehicle.

    Returns (N, J) arrays with the strongest in-range RSRP on each subchannel
    (``-inf`` when idle) and the reservation interval of that transmitter.
    """
    k_tx, n = rsrp.shape
    n_sub = sub_mask.shape[1]
    best = np.full((n, n_sub), -np.inf)
    best_rri = np.zeros((n, n_sub), dtype=np.int64)
    heard = np.where(in_range, rsrp, -np.inf)
    if sub_mask.all():
        # every transmitter spans the whole slot: one pass serves all subchannels
        arg = heard.argmax(axis=0)
        top = heard[arg, np.arange(n)]
        best[:] = top[:, None]
        best_rri[:] = np.where(np.isfinite(top), rri[arg], 0)[:, None]
        return best, best_rri
    for j in range(n_sub):
        on_j = sub_mask[:, j]
        if not on_j.any():
            continue
        sub = heard[on_j]
        arg = sub.argmax(axis=0)
        best[:, j] = sub[arg, np.arange(n)]
        best_rri[:, j] = np.where(np.isfinite(best[:, j]), rri[on_j][arg], 0)
    return best, best_rri
