"""Sensing-based semi-persistent scheduling (NR-V2X Mode 2, Release 16).

Resource selection raises the RSRP threshold in 3 dB steps from ``p_min`` until
at least ``x_percent`` of the selection window survives exclusion, then picks
uniformly among the survivors.  The reservation is kept for a random number
of transmissions (the resource counter) spanning 0.5 s to 1.5 s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .grid import SelectionWindow, SensingWindow, available_mask, projection_levels

ALLOWED_X = (20, 35, 50)


class Phase(str, Enum):
    UNINITIALIZED = "uninitialized"
    RESERVED = "reserved"


class Decision(str, Enum):
    KEEP = "keep"
    RESELECT = "reselect"


@dataclass
class SpsConfig:
    x_percent: int = 20
    p_keep: float = 0.4
    p_min: float = -90.0  # dBm
    p_max: float = -30.0  # dBm
    t1: int = 1
    step_db: float = 3.0
    subchannels_per_bsm: int | None = None  # None: every subchannel

    def validate(self) -> list[str]:
        errs = []
        if self.x_percent not in ALLOWED_X:
            errs.append(f"sps.x_percent must be one of {ALLOWED_X}")
        if not 0.0 <= self.p_keep <= 1.0:
            errs.append("sps.p_keep must lie in [0, 1]")
        if self.p_max < self.p_min:
            errs.append("sps.p_max must be >= sps.p_min")
        if not 1 <= self.t1 <= 4:
            errs.append("sps.t1 must lie in [1, 4]")
        if not self.step_db > 0:
            errs.append("sps.step_db must be > 0")
        if self.subchannels_per_bsm is not None and self.subchannels_per_bsm < 1:
            errs.append("sps.subchannels_per_bsm must be >= 1")
        return errs


@dataclass
class SpsState:
    phase: Phase = Phase.UNINITIALIZED
    slot: int = -1  # next transmission slot
    subchannels: tuple[int, ...] = ()
    rri: int = 0
    rc: int = 0
    p_th: float = float("nan")
    escalations: int = 0
    fallback: bool = False

    @property
    def offset(self) -> int:
        """Position of the reservation inside its period."""
        return self.slot % self.rri


def rc_bounds(rri: int) -> tuple[int, int]:
    lo = math.ceil(500 / rri)
    hi = max(lo, math.floor(1500 / rri))
    return lo, hi


def draw_rc(rri: int, rng: np.random.Generator) -> int:
    """Resource counter keeping a reservation alive for 0.5 s to 1.5 s."""
    lo, hi = rc_bounds(rri)
    return int(rng.integers(lo, hi + 1))


def escalate_threshold(levels: np.ndarray, blocked: np.ndarray, p_min: float, p_max: float,
                       x_percent: float, step_db: float = 3.0):
    """Walk the threshold up from ``p_min`` until enough candidates pass.

    Returns ``(p_th, mask, steps)``; ``mask`` is None when ``p_max`` was
    exceeded before the retention target was met.
    """
    total = levels.size
    need = x_percent / 100.0 * total
    p_th = p_min
    steps = 0
    while True:
        mask = available_mask(levels, blocked, p_th)
        if np.count_nonzero(mask) >= need:
            return p_th, mask, steps
        if p_th + step_db > p_max:
            return p_th, None, steps
        p_th += step_db
        steps += 1


def pick_resource(cand: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                  n_sub: int, per_bsm: int | None):
    """Uniform draw over the surviving (slot, subchannel) resources."""
    ci, cj = np.nonzero(mask)
    k = int(rng.integers(ci.size))
    width = n_sub if per_bsm is None else min(per_bsm, n_sub)
    start = min(int(cj[k]), n_sub - width)
    return int(cand[ci[k]]), tuple(range(start, start + width))


def select_resource(window: SensingWindow, cfg: SpsConfig, rri: int, rng: np.random.Generator,
                    t1: int | None = None) -> SpsState:
    """Fresh reservation with period ``rri`` chosen from the sensing history."""
    sel = SelectionWindow(cfg.t1 if t1 is None else t1, rri)
    cand, levels, blocked = projection_levels(window, sel, rri)
    p_th, mask, steps = escalate_threshold(levels, blocked, cfg.p_min, cfg.p_max,
                                           cfg.x_percent, cfg.step_db)
    fallback = mask is None
    if fallback:
        # threshold ceiling reached: any resource in the window will do
        mask = np.ones_like(levels, dtype=bool)
    slot, subs = pick_resource(cand, mask, rng, window.subchannels, cfg.subchannels_per_bsm)
    return SpsState(Phase.RESERVED, slot, subs, rri, draw_rc(rri, rng), p_th, steps, fallback)


def on_transmit(state: SpsState, cfg: SpsConfig, rng: np.random.Generator,
                p_keep: float | None = None) -> tuple[Decision, SpsState]:
    """Count one transmission off the reservation.

    When the counter runs out the reservation is kept (with a fresh counter)
    with probability ``p_keep``; otherwise the caller must reselect.
    """
    if state.phase is not Phase.RESERVED:
        raise RuntimeError("on_transmit called before any resource was reserved")
    keep_p = cfg.p_keep if p_keep is None else p_keep
    rc = state.rc - 1
    if rc > 0:
        return Decision.KEEP, replace(state, rc=rc, slot=state.slot + state.rri)
    if rng.random() < keep_p:
        return Decision.KEEP, replace(state, rc=draw_rc(state.rri, rng), slot=state.slot + state.rri)
    return Decision.RESELECT, replace(state, rc=0)
