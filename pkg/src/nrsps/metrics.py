"""Cooperative-awareness metrics: tracking error, age of information, PDR.

Ages are in milliseconds and distances in metres.  The age of a (sender u,
receiver v) pair is ``t - t_gen`` of the newest packet v holds from u; its
time average is the area under that sawtooth divided by the observed span.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mobility import wrap_delta

FLOAT_FMT = "{:.9g}"


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return FLOAT_FMT.format(x)


def tracking_error(true_pos, est_pos, road_length: float | None = None):
    """Distance between where a sender is and where a receiver believes it is.

    With ``road_length`` the longitudinal gap is measured around the ring so a
    wrap across the road end does not count as a jump.
    """
    (xt, yt), (xe, ye) = true_pos, est_pos
    dx = np.asarray(xt, dtype=float) - np.asarray(xe, dtype=float)
    if road_length is not None:
        dx = wrap_delta(dx, road_length)
    out = np.hypot(dx, np.asarray(yt, dtype=float) - np.asarray(ye, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


class ClockError(ValueError):
    pass


def aoi_instant(now: float, t_gen: float) -> float:
    if now < t_gen:
        raise ClockError(f"age requested at {now} for a packet generated at {t_gen}")
    return now - t_gen


def sawtooth_area(t0, t1, t_gen):
    """Integral of ``t - t_gen`` over ``[t0, t1)``."""
    return (t1 - t0) * ((t0 + t1) / 2.0 - t_gen)


def pairwise_avg_aoi(receptions: Sequence[tuple[float, float]], t_obs: float,
                     initial_age: float = 0.0, t_start: float = 0.0) -> float:
    """Time-averaged age over ``[t_start, t_start + t_obs]``.

    ``receptions`` holds ``(t_rx, t_gen)`` pairs; the age at ``t_start`` is
    ``initial_age``.
    """
    if not t_obs > 0:
        raise ValueError("t_obs must be > 0")
    t_end = t_start + t_obs
    g = t_start - initial_age
    t = t_start
    area = 0.0
    for t_rx, t_gen in sorted(receptions):
        if t_rx > t_end:
            break
        if t_rx < t:
            continue
        area += sawtooth_area(t, t_rx, g)
        t, g = t_rx, max(g, t_gen)
    area += sawtooth_area(t, t_end, g)
    return area / t_obs


def replay_aoi_recursion(opportunities: Sequence[float], received,
                         delay: float = 0.0) -> np.ndarray:
    """Age just after each transmission opportunity of one sender.

    Resets to ``delay`` when the packet gets through and otherwise grows by
    the time since the previous opportunity.  Entries before the first
    successful reception are NaN.  ``received`` is (K,) or (K, N) for N
    receivers at once.
    """
    t = np.asarray(opportunities, dtype=float)
    ok = np.asarray(received, dtype=bool)
    out = np.full(ok.shape, np.nan)
    age = np.full(ok.shape[1:], np.nan)
    for k in range(t.size):
        if k:
            age = age + (t[k] - t[k - 1])  # NaN stays NaN until a first success
        age = np.where(ok[k], delay, age)
        out[k] = age
    return out


def replay_reception_log(log: dict) -> tuple[int, int]:
    """Check logged per-receiver ages against the recursion, sender by sender.

    ``log`` is the ``reception_log`` of a trial: events ``(slot, sender,
    success row, age row)`` with ages taken at the end of the slot.  Returns
    ``(matched, total)`` counts of compared entries; NaN matches NaN.
    """
    by_sender: dict[int, list] = {}
    for s, u, ok, ages in log["events"]:
        by_sender.setdefault(u, []).append((s, ok, ages))
    matched = total = 0
    for u, evs in by_sender.items():
        slots = [s for s, _, _ in evs]
        ok = np.array([e[1] for e in evs])
        want = np.array([e[2] for e in evs])
        got = replay_aoi_recursion(slots, ok, log["delay"])
        same = (got == want) | (np.isnan(got) & np.isnan(want))
        same[:, u] = True  # a sender holds no age of itself
        matched += int(same.sum())
        total += same.size
    return matched, total


class RecursionReplay:
    """Streaming form of :func:`replay_reception_log` for long runs.

    ``feed`` takes one slot's senders with their success and age rows and
    advances each sender's replayed ages by the recursion alone, so memory
    stays at one (n, n) table.
    """

    def __init__(self, n: int, delay: float = 1.0):
        self.delay = delay
        self.age = np.full((n, n), np.nan)
        self.last = np.full(n, np.nan)
        self.matched = 0
        self.total = 0

    def feed(self, s: int, senders: np.ndarray, ok: np.ndarray, ages: np.ndarray) -> None:
        gap = s - self.last[senders]  # NaN on a sender's first opportunity
        pred = self.age[senders] + gap[:, None]
        pred = np.where(ok, self.delay, pred)
        same = (pred == ages) | (np.isnan(pred) & np.isnan(ages))
        same[np.arange(senders.size), senders] = True
        self.matched += int(same.sum())
        self.total += same.size
        self.age[senders] = pred
        self.last[senders] = s

    @property
    def result(self) -> tuple[int, int]:
        return self.matched, self.total


def system_aoi(pair_averages: Iterable[float]) -> float | None:
    """Mean of the pairwise averages; None without any pair."""
    vals = [float(a) for a in pair_averages]
    return float(np.mean(vals)) if vals else None


def per_vehicle_aoi(pair_averages: Mapping[tuple[int, int], float]) -> dict[int, float]:
    """Receiver-side average over its senders, keyed by receiver id."""
    acc: dict[int, list[float]] = {}
    for (_tx, rx), a in pair_averages.items():
        acc.setdefault(rx, []).append(a)
    return {rx: float(np.mean(v)) for rx, v in sorted(acc.items())}


def pdr(received: int, exposure: int) -> float | None:
    """Successful neighbour receptions over neighbour-weighted transmissions."""
    if received < 0 or exposure < 0:
        raise ValueError("counts must be non-negative")
    if exposure == 0:
        return None
    return received / exposure


@dataclass
class _PairRecord:
    t_gen: float
    x: float
    y: float
    v: float
    mark: float
    area: float = 0.0
    t_obs: float = 0.0


class AoiTracker:
    """Receiver-side table of the newest packet from every sender.

    ``advance`` integrates each pair's sawtooth up to ``now`` while the pair is
    flagged in range; the integral is never reset, only the age is.
    """

    def __init__(self, rx_id: int, sensing_range: float = 300.0, road_length: float | None = None):
        self.rx_id = rx_id
        self.sensing_range = sensing_range
        self.road_length = road_length
        self.entries: dict[int, _PairRecord] = {}
        self._in_range: dict[int, bool] = {}

    def set_in_range(self, tx_id: int, flag: bool) -> None:
        self._in_range[tx_id] = flag

    def advance(self, now: float) -> None:
        for tx, rec in self.entries.items():
            if now < rec.mark:
                raise ClockError("tracker advanced backwards")
            if self._in_range.get(tx, True):
                rec.area += sawtooth_area(rec.mark, now, rec.t_gen)
                rec.t_obs += now - rec.mark
            rec.mark = now

    def on_receive(self, tx_id: int, t_gen: float, t_rx: float, pos=(0.0, 0.0), v: float = 0.0) -> None:
        rec = self.entries.get(tx_id)
        if rec is None:
            self.entries[tx_id] = _PairRecord(t_gen, float(pos[0]), float(pos[1]), v, t_rx)
            return
        self.advance(t_rx)
        if t_gen >= rec.t_gen:
            rec.t_gen, rec.x, rec.y, rec.v = t_gen, float(pos[0]), float(pos[1]), v

    def age(self, tx_id: int, now: float) -> float:
        return aoi_instant(now, self.entries[tx_id].t_gen)

    def estimated_position(self, tx_id: int, now: float) -> tuple[float, float]:
        rec = self.entries[tx_id]
        x = rec.x + rec.v * (now - rec.t_gen) * 1e-3
        if self.road_length is not None:
            x %= self.road_length
        return x, rec.y

    def ages(self, now: float, rx_pos=None) -> dict[int, float]:
        """Ages of tracked senders; with ``rx_pos`` only those whose
        dead-reckoned position is within sensing range."""
        out = {}
        for tx, rec in self.entries.items():
            if rx_pos is not None:
                ex, ey = self.estimated_position(tx, now)
                if tracking_error((ex, ey), rx_pos, self.road_length) > self.sensing_range:
                    continue
            out[tx] = now - rec.t_gen
        return out

    def pairwise_average(self, tx_id: int) -> float | None:
        rec = self.entries[tx_id]
        return rec.area / rec.t_obs if rec.t_obs > 0 else None


@dataclass
class RriHistogram:
    """Counts of chosen RRIs in 1 ms bins."""

    counts: Counter = field(default_factory=Counter)

    def add(self, rri: int, n: int = 1) -> None:
        self.counts[int(rri)] += n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def fraction(self, pred) -> float:
        tot = self.total
        return sum(c for r, c in self.counts.items() if pred(r)) / tot if tot else float("nan")

    def mean(self) -> float:
        tot = self.total
        return sum(r * c for r, c in self.counts.items()) / tot if tot else float("nan")

    def merge(self, other: "RriHistogram") -> "RriHistogram":
        return RriHistogram(self.counts + other.counts)


@dataclass
class TrialMetrics:
    n_vehicles: int
    mean_te_m: float | None
    mean_aoi_ms: float | None
    mean_pdr: float | None
    startup_aoi_ms: float | None
    pair_count: int
    tx_count: int
    rx_count: int
    exposure: int
    per_vehicle_aoi: dict[int, float]
    per_vehicle_pdr: dict[int, float]
    series_t_ms: np.ndarray
    series_aoi_ms: np.ndarray
    series_aoi_startup_ms: np.ndarray
    series_te_m: np.ndarray
    rri_hist: RriHistogram
    mean_rri_ms: float | None = None
    controller_trace: list = field(default_factory=list)
    reception_log: dict | None = None
    recursion_check: tuple[int, int] | None = None  # (matched, compared) ages

    SUMMARY_FIELDS = ("n_vehicles", "mean_te_m", "mean_aoi_ms", "mean_pdr", "startup_aoi_ms",
                      "pair_count", "tx_count", "rx_count", "exposure", "mean_rri_ms")

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in self.SUMMARY_FIELDS}

    def summary_line(self) -> str:
        return ("mean_te_m={} mean_aoi_ms={} mean_pdr={}".format(
            fmt(self.mean_te_m) or "NA", fmt(self.mean_aoi_ms) or "NA", fmt(self.mean_pdr) or "NA"))


def write_series_csv(path: str | Path, m: TrialMetrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ms", "aoi_ms", "aoi_startup_ms", "te_m"])
        for row in zip(m.series_t_ms, m.series_aoi_ms, m.series_aoi_startup_ms, m.series_te_m):
            w.writerow([fmt(v) for v in row])


def write_hist_csv(path: str | Path, hists: Mapping[str, RriHistogram]) -> None:
    bins = sorted(set().union(*[h.counts.keys() for h in hists.values()])) if hists else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rri_ms", *hists.keys()])
        for b in bins:
            w.writerow([b, *[h.counts.get(b, 0) for h in hists.values()]])


def write_controller_csv(path: str | Path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ms", "vehicle_id", "aoi_ms", "action", "rri_ms", "congested"])
        for t, vid, aoi, action, rri, cong in rows:
            w.writerow([fmt(t), vid, fmt(aoi), action, rri, int(bool(cong))])
