"""Channel-aware RRI selection.

Starting from ``rri_min`` the candidate interval grows by ``delta`` until at
least ``x_percent`` of its selection window is free; only once ``rri_max`` is
reached does the RSRP threshold climb.  Reservations are never renewed, so a
new interval is chosen at every counter expiry.

Also provides the ideal-allocation oracle for isolated fully-connected
clusters, used to show how fixed intervals over- or under-provision slots.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import (SelectionWindow, SensingWindow, available_mask, has_unknown_period,
                   projection_levels, self_blocked)
from .sps import Phase, SpsState, draw_rc, pick_resource


@dataclass
class ChRriConfig:
    rri_min: int = 20
    rri_max: int = 100
    delta: int = 10
    x_percent: float = 20.0
    t1: int = 1

    def validate(self) -> list[str]:
        errs = []
        if self.rri_min < 1:
            errs.append("ch_rri.rri_min must be >= 1")
        if self.rri_max < self.rri_min:
            errs.append("ch_rri.rri_max must be >= ch_rri.rri_min")
        if self.delta < 1:
            errs.append("ch_rri.delta must be >= 1")
        if not 0 < self.x_percent <= 100:
            errs.append("ch_rri.x_percent must lie in (0, 100]")
        return errs

    def grid(self) -> list[int]:
        """Intervals the search can visit; always ends at ``rri_max``."""
        vals = list(range(self.rri_min, self.rri_max, self.delta))
        vals.append(self.rri_max)
        return vals


def _projector(window: SensingWindow, cfg: ChRriConfig):
    """Return ``f(rri_hat) -> (cand, levels, blocked)`` for the search loop.

    Once every busy record announces its own interval the projected levels
    depend only on the candidate slot, so a single projection over the widest
    window is sliced for each ``rri_hat``.
    """
    if has_unknown_period(window):
        return lambda r: projection_levels(window, SelectionWindow(cfg.t1, r), r)
    cand, levels, _ = projection_levels(window, SelectionWindow(cfg.t1, cfg.rri_max), cfg.rri_max)
    slots, _rsrp, _rri, unsensed = window.history()
    own = slots[unsensed]

    def view(r):
        w = r - cfg.t1 + 1
        return cand[:w], levels[:w], self_blocked(cand[:w], own, r)
    return view


def ch_rri_select(window: SensingWindow, cfg: ChRriConfig, p_min: float, p_max: float,
                  rng: np.random.Generator, step_db: float = 3.0,
                  subchannels_per_bsm: int | None = None) -> tuple[int, SpsState]:
    """Pick the smallest interval whose window keeps enough free resources."""
    project = _projector(window, cfg)
    p_th = p_min
    steps = 0
    rri_hat = cfg.rri_min
    cand, levels, blocked = project(rri_hat)
    while True:
        mask = available_mask(levels, blocked, p_th)
        if np.count_nonzero(mask) >= cfg.x_percent / 100.0 * levels.size:
            fallback = False
            break
        if rri_hat < cfg.rri_max:
            rri_hat = min(rri_hat + cfg.delta, cfg.rri_max)
            cand, levels, blocked = project(rri_hat)
            continue
        if p_th + step_db > p_max:
            mask = np.ones_like(levels, dtype=bool)
            fallback = True
            break
        p_th += step_db
        steps += 1
    slot, subs = pick_resource(cand, mask, rng, window.subchannels, subchannels_per_bsm)
    state = SpsState(Phase.RESERVED, slot, subs, rri_hat, draw_rc(rri_hat, rng), p_th, steps, fallback)
    return rri_hat, state


def ideal_allocation(cluster_sizes: Sequence[int], rri, slots_per_ms: float = 1.0) -> tuple[float, float]:
    """Vehicle-weighted occupancy (%) and success probability for isolated clusters.

    ``rri`` is either one interval shared by every cluster or one per cluster.
    A cluster of n vehicles sharing s slots evenly has occupancy n/s and a
    per-vehicle success probability min(1, s/n).
    """
    sizes = np.asarray(cluster_sizes, dtype=float)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("cluster sizes must be positive")
    rris = np.broadcast_to(np.asarray(rri, dtype=float), sizes.shape)
    slots = rris * slots_per_ms
    occ = sizes / slots * 100.0
    p_suc = np.minimum(1.0, slots / sizes)
    w = sizes / sizes.sum()
    return float(np.dot(w, occ)), float(np.dot(w, p_suc))


def adaptive_choice(n: int, rri_options: Iterable[int], slots_per_ms: float = 1.0) -> int:
    """Smallest interval offering every vehicle of the cluster its own slot."""
    opts = sorted(rri_options)
    for r in opts:
        if r * slots_per_ms >= n:
            return r
    return opts[-1]


def ideal_allocation_oracle(cluster_sizes: Sequence[int], slots_per_ms: float = 1.0,
                            rri_options: Sequence[int] = (20, 50, 100)):
    """Rows ``(label, occupancy %, P_suc)`` for each fixed interval plus the adaptive ideal."""
    rows = []
    for r in rri_options:
        occ, ps = ideal_allocation(cluster_sizes, r, slots_per_ms)
        rows.append((f"{r} ms", occ, ps))
    chosen = [adaptive_choice(n, rri_options, slots_per_ms) for n in cluster_sizes]
    occ, ps = ideal_allocation(cluster_sizes, chosen, slots_per_ms)
    rows.append(("adaptive", occ, ps))
    return rows
