"""Six-lane highway with Poisson placement and constant-speed lane keeping.

Lanes ``0 .. lanes/2 - 1`` drive in +x, the rest in -x.  A vehicle that runs
off one end re-enters at the other (toroidal road), so every vehicle keeps a
constant speed and lane for the whole run.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass
class HighwayConfig:
    road_length: float = 2000.0  # m
    lanes: int = 6
    lane_width: float = 4.0  # m
    density: float = 20.0  # veh/km, all lanes together
    v_mean: float = 19.44  # m/s
    v_std: float = 3.0  # m/s
    truncate_sigma: float = 3.0

    def validate(self) -> list[str]:
        errs = []
        if not self.road_length > 0:
            errs.append("highway.road_length must be > 0")
        if self.lanes < 1:
            errs.append("highway.lanes must be >= 1")
        if not self.lane_width > 0:
            errs.append("highway.lane_width must be > 0")
        if not self.density > 0:
            errs.append("highway.density must be > 0")
        if not self.v_mean > 0:
            errs.append("highway.v_mean must be > 0")
        if self.v_std < 0:
            errs.append("highway.v_std must be >= 0")
        if self.truncate_sigma <= 0:
            errs.append("highway.truncate_sigma must be > 0")
        if self.v_std > 0 and self.v_mean - self.truncate_sigma * self.v_std <= 0:
            errs.append("highway speed distribution reaches zero; reduce v_std or truncate_sigma")
        return errs

    @property
    def expected_count(self) -> float:
        return self.density * self.road_length / 1000.0


@dataclass(frozen=True)
class Vehicle:
    id: int
    lane: int
    x: float  # m along the road
    y: float  # m, lane centre
    v: float  # m/s, signed


def lane_center(lane: int, lane_width: float) -> float:
    return lane * lane_width + lane_width / 2


def lane_direction(lane, lanes: int):
    """+1 for the first half of the lanes, -1 for the rest."""
    return np.where(np.asarray(lane) < lanes // 2 if lanes > 1 else True, 1.0, -1.0)


def truncated_normal(rng: np.random.Generator, mean: float, std: float, n: int, k: float = 3.0) -> np.ndarray:
    """Draw ``n`` samples of N(mean, std) restricted to mean +- k*std by rejection."""
    if std == 0:
        return np.full(n, float(mean))
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(mean, std, size=2 * (n - filled) + 8)
        draw = draw[np.abs(draw - mean) <= k * std]
        take = min(draw.size, n - filled)
        out[filled:filled + take] = draw[:take]
        filled += take
    return out


def spawn_vehicles(cfg: HighwayConfig, rng_seed) -> list[Vehicle]:
    """Place vehicles as a pooled Poisson process, then assign lanes uniformly.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = int(rng.poisson(cfg.expected_count))
    x = rng.uniform(0.0, cfg.road_length, size=n)
    lanes = rng.integers(0, cfg.lanes, size=n)
    speed = truncated_normal(rng, cfg.v_mean, cfg.v_std, n, cfg.truncate_sigma)
    v = speed * lane_direction(lanes, cfg.lanes)
    order = np.lexsort((x, lanes))
    return [
        Vehicle(i, int(lanes[k]), float(x[k]), lane_center(int(lanes[k]), cfg.lane_width), float(v[k]))
        for i, k in enumerate(order)
    ]


def wrap_position(x, road_length: float):
    """``x mod road_length`` kept strictly below ``road_length``.

    A tiny negative ``x`` rounds to exactly ``road_length`` under ``%``.
    """
    r = np.asarray(x, dtype=float) % road_length
    r = np.where(r >= road_length, 0.0, r)
    return float(r) if r.ndim == 0 else r


def step(vehicles: Sequence[Vehicle], dt: float, road_length: float) -> list[Vehicle]:
    """Advance every vehicle by ``dt`` seconds along its lane, wrapping at the ends."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return [replace(veh, x=wrap_position(veh.x + veh.v * dt, road_length)) for veh in vehicles]


def wrap_delta(dx, road_length: float):
    """Signed shortest displacement on a ring of length ``road_length``."""
    half = road_length / 2
    return (np.asarray(dx) + half) % road_length - half


def distance(x1, y1, x2, y2, road_length: float):
    """Euclidean distance using the wrap-aware longitudinal gap."""
    return np.hypot(wrap_delta(np.asarray(x2) - np.asarray(x1), road_length),
                    np.asarray(y2) - np.asarray(y1))


class Fleet:
    """Array view of a vehicle population; positions are closed-form in time."""

    def __init__(self, vehicles: Sequence[Vehicle], road_length: float):
        self.road_length = float(road_length)
        self.ids = np.array([veh.id for veh in vehicles], dtype=np.int64)
        self.lane = np.array([veh.lane for veh in vehicles], dtype=np.int64)
        self.x0 = np.array([veh.x for veh in vehicles], dtype=float)
        self.y = np.array([veh.y for veh in vehicles], dtype=float)
        self.v = np.array([veh.v for veh in vehicles], dtype=float)
        self.speed = np.abs(self.v)

    def __len__(self) -> int:
        return self.ids.size

    def x_at(self, t_ms: float, idx=None) -> np.ndarray:
        """Longitudinal positions at time ``t_ms`` milliseconds."""
        if idx is None:
            return wrap_position(self.x0 + self.v * (t_ms * 1e-3), self.road_length)
        return wrap_position(self.x0[idx] + self.v[idx] * (t_ms * 1e-3), self.road_length)

    def vehicles_at(self, t_ms: float) -> list[Vehicle]:
        x = self.x_at(t_ms)
        return [Vehicle(int(i), int(l), float(xx), float(yy), float(vv))
                for i, l, xx, yy, vv in zip(self.ids, self.lane, x, self.y, self.v)]

    def pair_distances(self, t_ms: float) -> np.ndarray:
        x = self.x_at(t_ms)
        return distance(x[:, None], self.y[:, None], x[None, :], self.y[None, :], self.road_length)


def write_trace(path: str | Path, fleet: Fleet, times_ms: Iterable[float]) -> None:
    """Dump positions as CSV rows ``time_ms, id, lane, x_m, y_m, v_mps``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ms", "id", "lane", "x_m", "y_m", "v_mps"])
        for t in times_ms:
            x = fleet.x_at(t)
            for k in range(len(fleet)):
                w.writerow([f"{t:g}", int(fleet.ids[k]), int(fleet.lane[k]),
                            f"{x[k]:.6f}", f"{fleet.y[k]:.6f}", f"{fleet.v[k]:.6f}"])
