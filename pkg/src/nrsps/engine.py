"""Slot-stepped trial orchestration and density/scheduler sweeps.

Within a slot the order is fixed: mobility, transmit, resolve, sense,
counter handling and reselection, metrics.  Metrics sampled "at slot s" are
therefore taken at the start of s, before any of its transmissions.

A packet transmitted in slot s is generated at the slot start (t_gen = s)
and delivered at its end (s + 1), i.e. a 1 ms delay.  When a reservation
runs out at transmission s, the new resource is chosen when the next packet
arrives (end of slot s + rri - 1) from a fresh sensing window.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .aoi_rri import AoiRriConfig, AoiRriState, aoi_rri_update, channel_congested, local_aoi
from .ch_rri import ChRriConfig, ch_rri_select
from .channel import ChannelConfig, resolve_arrays, strongest_per_subchannel
from .grid import SensingWindow
from .metrics import (RecursionReplay, RriHistogram, TrialMetrics, fmt, write_controller_csv, write_hist_csv,
                      write_series_csv)
from .mobility import Fleet, HighwayConfig, Vehicle, spawn_vehicles, wrap_delta
from .sps import Decision, Phase, SpsConfig, SpsState, on_transmit, select_resource

log = logging.getLogger(__name__)

SCHEDULER_KINDS = ("static", "ch_rri", "aoi_rri")


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = "static"
    rri: int | None = 100  # only for static

    @property
    def label(self) -> str:
        return f"static{self.rri}" if self.kind == "static" else self.kind

    @property
    def adaptive(self) -> bool:
        return self.kind != "static"

    @classmethod
    def parse(cls, text: str) -> "SchedulerSpec":
        t = text.strip().lower().replace("-", "_").replace("(", "").replace(")", "")
        if t in ("ch_rri", "chrri"):
            return cls("ch_rri", None)
        if t in ("aoi_rri", "aoirri"):
            return cls("aoi_rri", None)
        if t.startswith("static"):
            num = t[len("static"):].strip("_ ")
            if num.isdigit() and int(num) > 0:
                return cls("static", int(num))
        raise ValueError(f"unknown scheduler {text!r}; use staticN, ch_rri or aoi_rri")

    def validate(self) -> list[str]:
        if self.kind not in SCHEDULER_KINDS:
            return [f"scheduler.kind must be one of {SCHEDULER_KINDS}"]
        if self.kind == "static" and (self.rri is None or self.rri < 1):
            return ["scheduler.rri must be >= 1 for a static scheduler"]
        return []


DEFAULT_SCHEDULERS = (SchedulerSpec("static", 20), SchedulerSpec("static", 50),
                      SchedulerSpec("static", 100), SchedulerSpec("ch_rri", None),
                      SchedulerSpec("aoi_rri", None))
DEFAULT_DENSITIES = (20, 40, 60, 80, 100, 120, 140, 160)


@dataclass
class SimConfig:
    highway: HighwayConfig = field(default_factory=HighwayConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    sps: SpsConfig = field(default_factory=SpsConfig)
    ch_rri: ChRriConfig = field(default_factory=ChRriConfig)
    aoi_rri: AoiRriConfig = field(default_factory=AoiRriConfig)
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    sim_time: float = 25.0  # s
    warmup: float = 5.0  # s, adaptive schedulers held at warmup_rri before this
    warmup_rri: int = 50  # ms
    trials: int = 10
    master_seed: int = 1
    packet_size: int = 190  # bytes
    subchannels: int = 2
    n_sensing: int = 100  # slots
    metrics_start: float = 0.0  # s, statistics accumulate from here on
    hist_window: float = 5.0  # s, RRI histogram covers the closing window
    series_step_ms: int = 100
    range_update_ms: int = 10
    record_log: bool = False
    check_recursion: bool = False  # replay every age through the recursion while running
    vehicles: tuple[Vehicle, ...] | None = None  # fixed population instead of spawning

    def validate(self) -> list[str]:
        errs = []
        for sub in (self.highway, self.channel, self.sps, self.ch_rri, self.aoi_rri, self.scheduler):
            errs.extend(sub.validate())
        if not self.sim_time > self.warmup:
            errs.append("sim.sim_time must be > sim.warmup")
        if self.warmup < 0:
            errs.append("sim.warmup must be >= 0")
        if self.trials < 1:
            errs.append("sim.trials must be >= 1")
        if self.subchannels < 1:
            errs.append("sim.subchannels must be >= 1")
        if not 1 <= self.n_sensing <= 1000:
            errs.append("sim.n_sensing must lie in [1, 1000]")
        if self.packet_size < 1:
            errs.append("sim.packet_size must be >= 1")
        if not 0 <= self.metrics_start < self.sim_time:
            errs.append("sim.metrics_start must lie in [0, sim_time)")
        if not self.hist_window > 0:
            errs.append("sim.hist_window must be > 0")
        if self.series_step_ms < 1 or self.range_update_ms < 1:
            errs.append("sim.series_step_ms and sim.range_update_ms must be >= 1")
        if self.warmup_rri < 1:
            errs.append("sim.warmup_rri must be >= 1")
        rri_need = max(self.ch_rri.rri_max, self.aoi_rri.rri_max, self.warmup_rri,
                       self.scheduler.rri or 0)
        if self.sim_time * 1000 <= self.n_sensing + rri_need:
            errs.append("sim.sim_time too short for the first reservation")
        if self.sps.subchannels_per_bsm is not None and self.sps.subchannels_per_bsm > self.subchannels:
            errs.append("sps.subchannels_per_bsm exceeds sim.subchannels")
        return errs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicles"] = None if self.vehicles is None else [asdict(v) for v in self.vehicles]
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=_json_default)
        return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, Enum):
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


@dataclass
class TrialResult:
    fingerprint: str
    seed: tuple[int, int]  # (master seed, trial index)
    metrics: TrialMetrics
    runtime: float  # s, wall clock; not part of any output file


def density_code(density: float) -> int:
    return int(round(density * 1000))


def mobility_seed(cfg: SimConfig, trial: int) -> np.random.SeedSequence:
    """Depends on (density, trial) only, so every scheduler sees the same traffic."""
    return np.random.SeedSequence([cfg.master_seed, density_code(cfg.highway.density), trial])


def scheduler_seed(cfg: SimConfig, trial: int) -> np.random.SeedSequence:
    code = zlib.crc32(cfg.scheduler.label.encode())
    return np.random.SeedSequence([cfg.master_seed, density_code(cfg.highway.density), trial, code])


class _Trial:
    def __init__(self, cfg: SimConfig, trial: int):
        self.cfg = cfg
        hw = cfg.highway
        if cfg.vehicles is not None:
            vehicles = list(cfg.vehicles)
        else:
            vehicles = spawn_vehicles(hw, mobility_seed(cfg, trial))
        self.fleet = Fleet(vehicles, hw.road_length)
        n = self.n = len(self.fleet)
        self.J = cfg.subchannels
        self.Ns = cfg.n_sensing
        self.T = int(round(cfg.sim_time * 1000))
        self.warmup_ms = int(round(cfg.warmup * 1000))
        self.metrics_start_ms = int(round(cfg.metrics_start * 1000))
        self.hist_start_ms = max(0, self.T - int(round(cfg.hist_window * 1000)))
        self.R = cfg.channel.sensing_range
        self.rngs = [np.random.default_rng(s) for s in scheduler_seed(cfg, trial).spawn(n)]
        spec = cfg.scheduler
        self.p_keep = cfg.sps.p_keep if spec.kind == "static" else 0.0

        self.rri = np.zeros(n, dtype=np.int64)
        self.rc = np.zeros(n, dtype=np.int64)
        self.subs = [() for _ in range(n)]
        self.submask = np.zeros((n, self.J), dtype=bool)
        self.tx_bucket: dict[int, list[int]] = defaultdict(list)
        self.resel_bucket: dict[int, list[int]] = defaultdict(list)
        if n:
            self.resel_bucket[self.Ns - 1] = list(range(n))
        self.ctrl = [AoiRriState(prev_rri=cfg.warmup_rri, prev_threshold=cfg.sps.p_min) for _ in range(n)]

        self.bank_rsrp = np.full((n, self.Ns, self.J), -np.inf)
        self.bank_rri = np.zeros((n, self.Ns, self.J), dtype=np.int64)
        self.bank_uns = np.zeros((n, self.Ns), dtype=bool)

        # pair ledger, indexed [sender u, receiver v]
        self.tg = np.full((n, n), np.nan)
        self.acc = np.zeros((n, n))
        self.acc_t = np.zeros((n, n))
        self.mark = np.zeros((n, n))
        self.in_range = np.zeros((n, n), dtype=bool)
        self.in_range0 = None
        y = self.fleet.y
        self._dy2 = (y[:, None] - y[None, :]) ** 2
        # longest ring gap at which a pair is within range (-1 never, e.g. on the diagonal)
        with np.errstate(invalid="ignore"):
            self._gap_limit = np.sqrt(self.R ** 2 - self._dy2)
        self._gap_limit[np.isnan(self._gap_limit)] = -1.0
        np.fill_diagonal(self._gap_limit, -1.0)
        self.first_tx = np.full(n, np.nan)

        self.exposure = np.zeros(n, dtype=np.int64)
        self.received = np.zeros(n, dtype=np.int64)
        self.tx_count = 0
        self.rx_count = 0
        self.hist = RriHistogram()
        self.trace: list[tuple] = []
        self.series: list[tuple] = []
        self.log_events: list[tuple] = [] if cfg.record_log else None
        self.replay = RecursionReplay(n, 1.0) if cfg.check_recursion else None

    # -- geometry -------------------------------------------------------
    def _pair_dist(self, t_ms: float, rows=None) -> np.ndarray:
        x = self.fleet.x_at(t_ms)
        if rows is None:
            rows = slice(None)
        # positions lie in [0, L), so the ring gap is min(|dx|, L - |dx|)
        dx = np.abs(x[None, :] - x[rows, None])
        np.minimum(dx, self.fleet.road_length - dx, out=dx)
        return np.sqrt(dx * dx + self._dy2[rows])

    # -- metrics ledger -------------------------------------------------
    # Each pair's in-range flag is constant over [mark, now); integrals are
    # brought up to date whenever a pair is received or its flag changes.
    def _flush(self, t: float) -> None:
        live = self.in_range & ~np.isnan(self.tg)
        dt = t - self.mark
        np.add(self.acc, dt * ((t + self.mark) / 2.0 - self.tg), out=self.acc, where=live)
        np.add(self.acc_t, dt, out=self.acc_t, where=live)
        self.mark.fill(t)

    def _flush_pairs(self, u: np.ndarray, v: np.ndarray, t: float) -> None:
        g = self.tg[u, v]
        live = ~np.isnan(g) & self.in_range[u, v]
        if live.any():
            ul, vl = u[live], v[live]
            m = self.mark[ul, vl]
            self.acc[ul, vl] += (t - m) * ((t + m) / 2.0 - g[live])
            self.acc_t[ul, vl] += t - m
        self.mark[u, v] = t

    def _refresh_range(self, t: float) -> None:
        if not self.n:
            self.in_range0 = self.in_range
            return
        x = self.fleet.x_at(t)
        gap = np.subtract.outer(x, x)
        np.abs(gap, out=gap)
        np.minimum(gap, self.fleet.road_length - gap, out=gap)
        new = gap <= self._gap_limit
        if self.in_range0 is None:
            self.in_range0 = new.copy()
        else:
            changed = new != self.in_range
            if changed.any():
                self._flush_pairs(*np.nonzero(changed), t)
        self.in_range = new

    def _sample_series(self, t: float) -> None:
        heard = ~np.isnan(self.tg)
        m = self.in_range & heard
        if m.any():
            age = t - self.tg[m]
            aoi = float(age.mean())
            u = np.nonzero(m)[0]
            tg = self.tg[m]
            x_now = self.fleet.x_at(t, u)
            x_then = (self.fleet.x0[u] + self.fleet.v[u] * (tg * 1e-3)) % self.fleet.road_length
            te = float(np.abs(wrap_delta(x_now - x_then, self.fleet.road_length)).mean())
        else:
            aoi = te = math.nan
        if self.in_range.any():
            ages = np.where(heard, t - self.tg, t)[self.in_range]
            aoi_s = float(ages.mean())
        else:
            aoi_s = math.nan
        self.series.append((t, aoi, aoi_s, te))

    def _deliver(self, u: np.ndarray, v: np.ndarray, s: int) -> None:
        self._flush_pairs(u, v, s + 1.0)
        self.tg[u, v] = float(s)

    def _reset_statistics(self, t: float) -> None:
        self._flush(t)
        self.acc.fill(0.0)
        self.acc_t.fill(0.0)
        self.exposure.fill(0)
        self.received.fill(0)
        self.tx_count = self.rx_count = 0

    # -- per-slot steps -------------------------------------------------
    def _transmit(self, s: int, tx: np.ndarray, pos: int) -> None:
        cfg = self.cfg
        dist = self._pair_dist(s, tx)
        sub = self.submask[tx]
        res = resolve_arrays(dist, tx, sub, cfg.channel)
        n_in = res.in_range.sum(axis=1)
        n_ok = res.success.sum(axis=1)
        self.exposure[tx] += n_in
        self.received[tx] += n_ok
        self.tx_count += tx.size
        self.rx_count += int(n_ok.sum())
        fresh = np.isnan(self.first_tx[tx])
        if fresh.any():
            self.first_tx[tx[fresh]] = s

        best, best_rri = strongest_per_subchannel(res.rsrp, res.in_range, sub, self.rri[tx])
        self.bank_rsrp[:, pos] = best
        self.bank_rri[:, pos] = best_rri
        self.bank_uns[:, pos] = False
        self.bank_uns[tx, pos] = True
        self.bank_rsrp[tx, pos] = np.nan
        self.bank_rri[tx, pos] = 0

        k, v = np.nonzero(res.success)
        if k.size:
            self._deliver(tx[k], v, s)
        if self.log_events is not None or self.replay is not None:
            ages = (s + 1.0) - self.tg[tx]
            if self.replay is not None:
                self.replay.feed(s, tx, res.success, ages)
            if self.log_events is not None:
                for i, u in enumerate(tx):
                    self.log_events.append((s, int(u), res.success[i].copy(), ages[i].copy()))

        for u in tx.tolist():
            self.rc[u] -= 1
            if self.rc[u] > 0:
                self.tx_bucket[s + int(self.rri[u])].append(u)
                continue
            state = SpsState(Phase.RESERVED, s, self.subs[u], int(self.rri[u]), 1)
            decision, state = on_transmit(state, cfg.sps, self.rngs[u], p_keep=self.p_keep)
            if decision is Decision.KEEP:
                self.rc[u] = state.rc
                self.tx_bucket[state.slot].append(u)
                if s >= self.hist_start_ms:
                    self.hist.add(state.rri)
            else:
                self.resel_bucket[s + int(self.rri[u]) - 1].append(u)

    def _window(self, u: int, s: int) -> SensingWindow:
        idx = np.arange(s + 1 - self.Ns, s + 1) % self.Ns
        return SensingWindow.from_history(s + 1, self.bank_rsrp[u, idx], self.bank_rri[u, idx],
                                          self.bank_uns[u, idx])

    def _local_aoi(self, v: int, t: float, cold: float) -> float:
        # under constant-velocity motion the dead-reckoned neighbour position
        # coincides with its true one
        d = self._pair_dist(t, np.array([v]))[0]
        nb = d <= self.R
        nb[v] = False
        return local_aoi(self.tg[:, v], t, nb, cold)

    def _reselect(self, u: int, s: int) -> None:
        cfg = self.cfg
        spec = cfg.scheduler
        rng = self.rngs[u]
        win = self._window(u, s)
        t_now = s + 1
        locked = spec.adaptive and t_now < self.warmup_ms
        if spec.kind == "static":
            state = select_resource(win, cfg.sps, spec.rri, rng)
        elif locked:
            state = select_resource(win, cfg.sps, cfg.warmup_rri, rng)
            ctrl = self.ctrl[u]
            ctrl.prev_rri, ctrl.prev_threshold = cfg.warmup_rri, state.p_th
        elif spec.kind == "ch_rri":
            _, state = ch_rri_select(win, cfg.ch_rri, cfg.sps.p_min, cfg.sps.p_max, rng,
                                     cfg.sps.step_db, cfg.sps.subchannels_per_bsm)
        else:
            ac = cfg.aoi_rri
            ctrl = self.ctrl[u]
            cold = ac.cold_start_aoi if ac.cold_start_aoi is not None else float(ctrl.prev_rri)
            aoi_now = self._local_aoi(u, float(t_now), cold)
            congested = channel_congested(win, ctrl.prev_threshold, ctrl.prev_rri, ac.congestion_fraction)
            rri_new, action = aoi_rri_update(ctrl, aoi_now, congested, ac)
            state = select_resource(win, cfg.sps, rri_new, rng)
            ctrl.prev_aoi, ctrl.prev_action = aoi_now, action
            ctrl.prev_rri, ctrl.prev_threshold = rri_new, state.p_th
            self.trace.append((t_now, u, aoi_now, action.value, rri_new, congested))
        self.rri[u] = state.rri
        self.rc[u] = state.rc
        self.subs[u] = state.subchannels
        self.submask[u] = False
        self.submask[u, list(state.subchannels)] = True
        self.tx_bucket[state.slot].append(u)
        if s >= self.hist_start_ms:
            self.hist.add(state.rri)

    # -- main loop ------------------------------------------------------
    def run(self) -> TrialMetrics:
        cfg = self.cfg
        step_r, step_s = cfg.range_update_ms, cfg.series_step_ms
        for s in range(self.T):
            if s % step_r == 0:
                self._refresh_range(float(s))
            if s == self.metrics_start_ms and s > 0:
                self._reset_statistics(float(s))
            if s % step_s == 0:
                self._sample_series(float(s))
            pos = s % self.Ns
            ids = self.tx_bucket.pop(s, None)
            if ids:
                self._transmit(s, np.array(sorted(ids), dtype=np.int64), pos)
            else:
                self.bank_rsrp[:, pos] = -np.inf
                self.bank_rri[:, pos] = 0
                self.bank_uns[:, pos] = False
            for u in sorted(self.resel_bucket.pop(s, ())):
                self._reselect(u, s)
        self._flush(float(self.T))
        return self._finish()

    def _finish(self) -> TrialMetrics:
        valid = self.acc_t > 0
        pair_avg = np.where(valid, self.acc / np.where(valid, self.acc_t, 1.0), np.nan)
        if valid.any():
            mean_aoi = float(pair_avg[valid].mean())
            te = (self.fleet.speed[:, None] * pair_avg * 1e-3)[valid]
            mean_te = float(te.mean())
        else:
            mean_aoi = mean_te = None
        per_v_aoi = {}
        for v in range(self.n):
            col = valid[:, v]
            if col.any():
                per_v_aoi[int(self.fleet.ids[v])] = float(pair_avg[col, v].mean())
        has = self.exposure > 0
        per_v_pdr = {int(self.fleet.ids[u]): float(self.received[u] / self.exposure[u])
                     for u in np.flatnonzero(has)}
        mean_pdr = float(np.mean(list(per_v_pdr.values()))) if per_v_pdr else None
        # age at each sender's first opportunity (end of slot), counted from t = 0,
        # over the pairs in range at the start
        if self.in_range0 is not None and self.n:
            fp = np.broadcast_to((self.first_tx + 1.0)[:, None], self.in_range0.shape)[self.in_range0]
            fp = fp[~np.isnan(fp)]
        else:
            fp = np.array([])
        series = np.array(self.series, dtype=float).reshape(-1, 4)
        reception_log = None
        if self.log_events is not None:
            reception_log = {"ids": self.fleet.ids.copy(), "events": self.log_events, "delay": 1.0}
        hist_mean = self.hist.mean()
        return TrialMetrics(
            n_vehicles=self.n, mean_te_m=mean_te, mean_aoi_ms=mean_aoi, mean_pdr=mean_pdr,
            startup_aoi_ms=float(fp.mean()) if fp.size else None,
            pair_count=int(valid.sum()), tx_count=self.tx_count, rx_count=self.rx_count,
            exposure=int(self.exposure.sum()), per_vehicle_aoi=per_v_aoi, per_vehicle_pdr=per_v_pdr,
            series_t_ms=series[:, 0], series_aoi_ms=series[:, 1],
            series_aoi_startup_ms=series[:, 2], series_te_m=series[:, 3],
            rri_hist=self.hist, mean_rri_ms=None if math.isnan(hist_mean) else hist_mean,
            controller_trace=self.trace, reception_log=reception_log,
            recursion_check=None if self.replay is None else self.replay.result)


def run_trial(cfg: SimConfig, trial: int = 0) -> TrialResult:
    """Run one seeded trial; identical (cfg, trial) give identical metrics."""
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    t0 = time.perf_counter()
    metrics = _Trial(cfg, trial).run()
    return TrialResult(cfg.fingerprint(), (cfg.master_seed, trial), metrics, time.perf_counter() - t0)


# -- sweeps -------------------------------------------------------------

@dataclass
class CellResult:
    density: float
    scheduler: str
    trials: list[TrialResult] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def stat(self, name: str) -> tuple[float | None, float | None]:
        vals = [getattr(t.metrics, name) for t in self.trials]
        vals = [v for v in vals if v is not None]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def values(self, name: str) -> list[float | None]:
        return [getattr(t.metrics, name) for t in sorted(self.trials, key=lambda r: r.seed)]

    def merged_hist(self) -> RriHistogram:
        out = RriHistogram()
        for t in self.trials:
            out = out.merge(t.metrics.rri_hist)
        return out


@dataclass
class ExperimentResult:
    cells: dict[tuple[float, str], CellResult]
    densities: list[float]
    schedulers: list[str]
    n_trials: int = 0

    def cell(self, density: float, scheduler: str) -> CellResult:
        return self.cells[(float(density), scheduler)]

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells.values() if c.errors]


def _run_job(args):
    cfg, trial = args
    try:
        return run_trial(cfg, trial), None
    except Exception as exc:  # isolate the failing cell
        return None, f"trial {trial}: {type(exc).__name__}: {exc}"


def default_workers() -> int:
    env = os.environ.get("SIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer SIM_THREADS=%r", env)
    return os.cpu_count() or 1


def cell_config(cfg: SimConfig, density: float, scheduler: SchedulerSpec) -> SimConfig:
    return replace(cfg, highway=replace(cfg.highway, density=float(density)), scheduler=scheduler)


def run_experiment(cfg: SimConfig, densities: Sequence[float], schedulers: Sequence[SchedulerSpec],
                   trials: int | None = None, workers: int | None = None,
                   progress=None) -> ExperimentResult:
    """Run every (density, scheduler, trial) cell; one failing cell does not stop the rest."""
    errs = []
    if not densities:
        errs.append("sweep needs at least one density")
    if not schedulers:
        errs.append("sweep needs at least one scheduler")
    n_trials = cfg.trials if trials is None else trials
    if n_trials < 1:
        errs.append("sweep needs at least one trial")
    if errs:
        raise ConfigError(errs)
    jobs, cells = [], {}
    for d in densities:
        for sch in schedulers:
            ccfg = cell_config(cfg, d, sch)
            cells[(float(d), sch.label)] = CellResult(float(d), sch.label)
            cell_errs = ccfg.validate()
            if cell_errs:
                cells[(float(d), sch.label)].errors.extend(cell_errs)
                continue
            jobs.extend(((ccfg, k), (float(d), sch.label)) for k in range(n_trials))
    workers = default_workers() if workers is None else max(1, workers)
    args = [j for j, _ in jobs]
    if workers == 1 or len(jobs) <= 1:
        outcomes = map(_run_job, args)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        outcomes = pool.map(_run_job, args, chunksize=1)
    try:
        for (_, key), (res, err) in zip(jobs, outcomes):
            if err is not None:
                cells[key].errors.append(err)
                log.error("cell %s failed: %s", key, err)
            else:
                cells[key].trials.append(res)
            if progress is not None:
                progress(key, res, err)
    finally:
        if workers > 1 and len(jobs) > 1:
            pool.shutdown()
    return ExperimentResult(cells, [float(d) for d in densities], [s.label for s in schedulers], n_trials)


SUMMARY_COLUMNS = ("density", "scheduler", "mean_te_m", "mean_aoi_ms", "mean_pdr")


def cell_dirname(density: float, scheduler: str) -> str:
    return f"{density:g}_{scheduler}"


def write_experiment(exp: ExperimentResult, out_dir: str | Path) -> Path:
    """Write ``<out>/<density>_<scheduler>/trial_<k>.csv`` and the summaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"densities": exp.densities, "schedulers": exp.schedulers, "trials": exp.n_trials,
                "failed": sorted(cell_dirname(c.density, c.scheduler) for c in exp.failed)}
    (out / "experiment.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh, \
            open(out / "summary_std.csv", "w", newline="") as fh_sd:
        w, w_sd = csv.writer(fh), csv.writer(fh_sd)
        w.writerow(SUMMARY_COLUMNS)
        w_sd.writerow(("density", "scheduler", "std_te_m", "std_aoi_ms", "std_pdr", "n_trials"))
        for d in exp.densities:
            for lab in exp.schedulers:
                c = exp.cell(d, lab)
                if not c.trials:
                    continue
                stats = [c.stat(k) for k in ("mean_te_m", "mean_aoi_ms", "mean_pdr")]
                w.writerow([fmt(d), lab, *[fmt(m) for m, _ in stats]])
                w_sd.writerow([fmt(d), lab, *[fmt(s) for _, s in stats], len(c.trials)])
    for c in exp.cells.values():
        cdir = out / cell_dirname(c.density, c.scheduler)
        cdir.mkdir(exist_ok=True)
        rows = sorted(c.trials, key=lambda r: r.seed)
        with open(cdir / "trials.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", *TrialMetrics.SUMMARY_FIELDS])
            for r in rows:
                w.writerow([r.seed[1], *[fmt(v) for v in r.metrics.summary().values()]])
        for r in rows:
            write_series_csv(cdir / f"trial_{r.seed[1]}.csv", r.metrics)
            if r.metrics.controller_trace:
                write_controller_csv(cdir / f"controller_trial_{r.seed[1]}.csv", r.metrics.controller_trace)
        write_hist_csv(cdir / "rri_hist.csv", {c.scheduler: c.merged_hist()})
        if c.errors:
            (cdir / "errors.txt").write_text("\n".join(c.errors) + "\n")
    return out
