"""AoI-aware RRI selection.

At each reselection a vehicle first checks whether the channel became
congested at its previous interval and threshold (congestion forces an
increase).  Otherwise it compares its locally measured average age with the
previous measurement: a significant worsening reverses the last action, a
significant improvement repeats it, anything else holds the interval.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import SensingWindow

log = logging.getLogger(__name__)


class Action(str, Enum):
    INCR = "INCR"
    DECR = "DECR"
    SAME = "SAME"


def inverse(action: Action) -> Action:
    # holding steady and still getting worse: probe a shorter interval
    return {Action.INCR: Action.DECR, Action.DECR: Action.INCR, Action.SAME: Action.DECR}[action]


@dataclass
class AoiRriConfig:
    beta: float = 1.1
    sigma_t: float = 2.0  # ms
    rri_min: int = 20
    rri_max: int = 100
    congestion_fraction: float = 0.2
    initial_rri: int = 50
    cold_start_aoi: float | None = None  # None: use the current RRI

    def validate(self) -> list[str]:
        errs = []
        if not self.beta > 1:
            errs.append("aoi_rri.beta must be > 1")
        if self.sigma_t < 0:
            errs.append("aoi_rri.sigma_t must be >= 0")
        if self.rri_min < 1 or self.rri_max < self.rri_min:
            errs.append("aoi_rri.rri_min/rri_max must satisfy 1 <= rri_min <= rri_max")
        if not 0 < self.congestion_fraction <= 1:
            errs.append("aoi_rri.congestion_fraction must lie in (0, 1]")
        if not self.rri_min <= self.initial_rri <= self.rri_max:
            errs.append("aoi_rri.initial_rri must lie in [rri_min, rri_max]")
        return errs


@dataclass
class AoiRriState:
    prev_rri: int = 50
    prev_aoi: float | None = None
    prev_action: Action = Action.SAME
    prev_threshold: float = -90.0


def _linear_mw(dbm):
    with np.errstate(over="ignore"):
        return np.where(np.isneginf(dbm), 0.0, 10.0 ** (np.asarray(dbm) / 10.0))


def periodic_average(window: SensingWindow, rri: int) -> np.ndarray:
    """Average sensed power (dBm) at each offset of an ``rri``-slot period.

    The window is cut into ``floor(N / rri - 1) + 1`` whole periods ending at
    the newest record; each offset averages its recurrences in linear units.
    Unsensed records are skipped, and an offset with no sensed recurrence
    comes back as NaN.  Shape (rri, J).
    """
    slots, rsrp, _rri, unsensed = window.history()
    n_sensing = slots.size
    n_periods = math.floor(n_sensing / rri - 1) + 1
    start = n_sensing - n_periods * rri
    idx = start + np.arange(rri)[:, None] + rri * np.arange(n_periods)[None, :]
    lin = _linear_mw(np.where(unsensed[:, None], -np.inf, rsrp))
    num = lin[idx].sum(axis=1)  # (rri, J)
    cnt = (~unsensed)[idx].sum(axis=1)
    out = np.full(num.shape, np.nan)
    has = cnt > 0
    with np.errstate(divide="ignore"):
        out[has] = 10.0 * np.log10(num[has] / cnt[has, None])
    return out


def channel_congested(window: SensingWindow, p_th_prev: float, rri_prev: int,
                      fraction: float = 0.2) -> bool:
    """True when fewer than ``fraction`` of the periodic resources are below ``p_th_prev``."""
    if rri_prev < 1:
        raise ValueError("rri_prev must be >= 1")
    if rri_prev > len(window):
        log.warning("sensing window (%d slots) shorter than RRI %d; congestion unknown",
                    len(window), rri_prev)
        return False
    avg = periodic_average(window, rri_prev)
    avail = np.count_nonzero(avg < p_th_prev)  # NaN compares False
    return avail / avg.size < fraction


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def step_rri(prev_rri: int, action: Action, cfg: AoiRriConfig) -> int:
    if action is Action.INCR:
        if prev_rri >= cfg.rri_max:
            return prev_rri
        new = max(_round_half_up(cfg.beta * prev_rri), prev_rri + 1)
    elif action is Action.DECR:
        if prev_rri <= cfg.rri_min:
            return prev_rri
        new = min(_round_half_up(prev_rri / cfg.beta), prev_rri - 1)
    else:
        return prev_rri
    return int(min(max(new, cfg.rri_min), cfg.rri_max))


def choose_action(state: AoiRriState, aoi_now: float, congested: bool, cfg: AoiRriConfig) -> Action:
    if congested:
        return Action.INCR
    prev = aoi_now if state.prev_aoi is None else state.prev_aoi
    if aoi_now > prev + cfg.sigma_t:
        return inverse(state.prev_action)
    if aoi_now < prev - cfg.sigma_t:
        return state.prev_action
    return Action.SAME


def aoi_rri_update(state: AoiRriState, aoi_now: float, congested: bool,
                   cfg: AoiRriConfig) -> tuple[int, Action]:
    """New interval and the action that produced it."""
    if aoi_now < 0:
        raise ValueError("aoi_now must be >= 0")
    action = choose_action(state, aoi_now, congested, cfg)
    return step_rri(state.prev_rri, action, cfg), action


def local_aoi(last_gen: np.ndarray, now: float, neighbours: np.ndarray, cold_start: float) -> float:
    """Mean of ``now - t_gen`` over the flagged neighbours (or ``cold_start``)."""
    sel = neighbours & ~np.isnan(last_gen)
    if not sel.any():
        return float(cold_start)
    return float(np.mean(now - last_gen[sel]))


def measure_local_aoi(tracker, now: float, cold_start: float) -> float:
    """Average time since the last packet from each currently tracked neighbour."""
    ages = tracker.ages(now)
    if not ages:
        return float(cold_start)
    return float(np.mean(list(ages.values())))
