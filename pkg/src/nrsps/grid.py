"""Time-frequency resource grid and per-vehicle sensing history.

Slots are 1 ms long (15 kHz subcarrier spacing).  A vehicle keeps the last
``capacity`` slots of RSRP measurements on every subchannel; slots in which it
transmitted itself are kept as UNSENSED (half-duplex).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SlotIndex = int


class _Unsensed:
    """Marker for a slot the owning vehicle could not monitor."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNSENSED"

    def __reduce__(self):
        return (_Unsensed, ())


UNSENSED = _Unsensed()

# empty slot / nothing received
IDLE_DBM = -np.inf


class SequencingError(RuntimeError):
    """An observation arrived for a slot other than the current one."""


@dataclass(frozen=True, order=True)
class SingleSlotResource:
    slot: SlotIndex
    subchannel: int

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError(f"negative slot {self.slot}")
        if self.subchannel < 0:
            raise ValueError(f"negative subchannel {self.subchannel}")


@dataclass(frozen=True)
class SelectionWindow:
    """Candidate range ``[s_n + t1, s_n + t2]`` relative to the first slot
    after the sensing window."""

    t1: int
    t2: int

    def __post_init__(self):
        if self.t1 < 0 or self.t2 < self.t1:
            raise ValueError(f"invalid selection window [{self.t1}, {self.t2}]")

    @property
    def size(self) -> int:
        return self.t2 - self.t1 + 1

    def offsets(self) -> np.ndarray:
        return np.arange(self.t1, self.t2 + 1)


class SensingWindow:
    """Ring buffer holding the last ``capacity`` slots of observations.

    Each (slot, subchannel) record carries the strongest RSRP sensed (dBm,
    ``-inf`` for an idle slot) and the reservation interval announced by that
    transmitter in its control information (0 when unknown).
    """

    def __init__(self, capacity: int = 100, subchannels: int = 2):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if subchannels < 1:
            raise ValueError("need at least one subchannel")
        self.capacity = capacity
        self.subchannels = subchannels
        self._rsrp = np.full((capacity, subchannels), IDLE_DBM)
        self._rri = np.zeros((capacity, subchannels), dtype=np.int64)
        self._unsensed = np.zeros(capacity, dtype=bool)
        self._slots = np.full(capacity, -1, dtype=np.int64)
        self._current: int | None = None

    # -- construction -------------------------------------------------
    @classmethod
    def from_history(cls, next_slot: int, rsrp, rri=None, unsensed=None) -> "SensingWindow":
        """Build a full window whose newest record is ``next_slot - 1``.

        ``rsrp`` has shape (capacity, J), oldest row first.
        """
        rsrp = np.asarray(rsrp, dtype=float)
        cap, n_sub = rsrp.shape
        if next_slot < cap:
            raise ValueError("history would start before slot 0")
        w = cls(cap, n_sub)
        slots = np.arange(next_slot - cap, next_slot)
        pos = slots % cap  # ring position of slot s is s % capacity
        w._slots[pos] = slots
        w._rsrp[pos] = rsrp
        if rri is not None:
            w._rri[pos] = np.asarray(rri, dtype=np.int64)
        if unsensed is not None:
            w._unsensed[pos] = np.asarray(unsensed, dtype=bool)
        w._rsrp[w._unsensed] = np.nan
        w._current = next_slot - 1
        return w

    # -- recording ----------------------------------------------------
    def _advance_to(self, slot: int) -> int:
        if self._current is None:
            if slot < 0:
                raise SequencingError(f"negative slot {slot}")
        elif slot == self._current:
            return slot % self.capacity
        elif slot != self._current + 1:
            raise SequencingError(
                f"observation for slot {slot} while current slot is {self._current}")
        pos = slot % self.capacity
        self._rsrp[pos] = IDLE_DBM
        self._rri[pos] = 0
        self._unsensed[pos] = False
        self._slots[pos] = slot
        self._current = slot
        return pos

    def record_observation(self, slot: SlotIndex, subchannel: int, rsrp, rri: int = 0) -> None:
        """Store one measurement for the current slot.

        Passing ``UNSENSED`` marks the whole slot as not monitored.  Moving to
        slot ``current + 1`` evicts the oldest record once the buffer is full.
        """
        if not 0 <= subchannel < self.subchannels:
            raise ValueError(f"subchannel {subchannel} out of range")
        pos = self._advance_to(slot)
        if rsrp is UNSENSED:
            self._unsensed[pos] = True
            self._rsrp[pos] = np.nan
            self._rri[pos] = 0
            return
        if self._unsensed[pos]:
            return
        rsrp = float(rsrp)
        if rsrp > self._rsrp[pos, subchannel]:
            self._rsrp[pos, subchannel] = rsrp
            self._rri[pos, subchannel] = int(rri)

    def record_slot(self, slot: SlotIndex, rsrp_row=None, rri_row=None, transmitted: bool = False) -> None:
        """Record all subchannels of one slot at once."""
        pos = self._advance_to(slot)
        if transmitted:
            self._unsensed[pos] = True
            self._rsrp[pos] = np.nan
            self._rri[pos] = 0
            return
        if rsrp_row is not None:
            self._rsrp[pos] = rsrp_row
        if rri_row is not None:
            self._rri[pos] = rri_row

    # -- queries ------------------------------------------------------
    @property
    def current_slot(self) -> int | None:
        return self._current

    @property
    def next_slot(self) -> int:
        """First slot after the sensing window (``s_n``)."""
        return 0 if self._current is None else self._current + 1

    def __len__(self) -> int:
        return int(np.count_nonzero(self._slots >= 0))

    @property
    def oldest_slot(self) -> int | None:
        held = self._slots[self._slots >= 0]
        return int(held.min()) if held.size else None

    def history(self):
        """Return ``(slots, rsrp, rri, unsensed)`` ordered oldest first."""
        held = np.flatnonzero(self._slots >= 0)
        order = held[np.argsort(self._slots[held])]
        return (self._slots[order].copy(), self._rsrp[order].copy(),
                self._rri[order].copy(), self._unsensed[order].copy())

    def record(self, slot: SlotIndex, subchannel: int):
        """RSRP of one held record, or UNSENSED."""
        pos = slot % self.capacity
        if self._slots[pos] != slot:
            raise KeyError(f"slot {slot} not in window")
        if self._unsensed[pos]:
            return UNSENSED
        return float(self._rsrp[pos, subchannel])


def projection_levels(window: SensingWindow, sel: SelectionWindow, rri: int):
    """Project sensed reservations onto the selection window.

    Returns ``(slots, levels, blocked)``: candidate slot numbers, the highest
    RSRP of any sensed record whose periodic reservation lands on each
    candidate (shape (W, J), ``-inf`` when none does), and a per-slot flag for
    candidates that coincide with one of the vehicle's own past transmissions
    repeated at ``rri``.
    """
    s_n = window.next_slot
    slots, rsrp, rec_rri, unsensed = window.history()
    cand = s_n + sel.offsets()
    n_sub = window.subchannels
    levels = np.full((cand.size, n_sub), IDLE_DBM)
    blocked = np.zeros(cand.size, dtype=bool)
    if slots.size == 0:
        return cand, levels, blocked

    blocked = self_blocked(cand, slots[unsensed], rri)

    sensed = ~unsensed
    rows, cols = np.nonzero(np.isfinite(rsrp) & sensed[:, None])
    if rows.size:
        period = rec_rri[rows, cols]
        period = np.where(period > 0, period, rri)
        hit = (cand[:, None] - slots[rows][None, :]) % period[None, :] == 0
        vals = np.where(hit, rsrp[rows, cols][None, :], IDLE_DBM)
        for j in range(n_sub):
            on_j = cols == j
            if on_j.any():
                levels[:, j] = vals[:, on_j].max(axis=1)
    return cand, levels, blocked


def self_blocked(cand: np.ndarray, own_slots: np.ndarray, rri: int) -> np.ndarray:
    """Candidates that repeat one of the vehicle's own unmonitored slots at ``rri``."""
    if own_slots.size == 0:
        return np.zeros(cand.size, dtype=bool)
    return ((cand[:, None] - own_slots[None, :]) % rri == 0).any(axis=1)


def has_unknown_period(window: SensingWindow) -> bool:
    """True when a sensed, non-idle record carries no announced interval."""
    _slots, rsrp, rec_rri, unsensed = window.history()
    busy = np.isfinite(rsrp) & ~unsensed[:, None]
    return bool(np.any(busy & (rec_rri <= 0)))


def available_mask(levels: np.ndarray, blocked: np.ndarray, p_th: float) -> np.ndarray:
    """(W, J) mask of candidates passing the RSRP test at ``p_th``."""
    return (levels < p_th) & ~blocked[:, None]


def candidate_slots(window: SensingWindow, sel: SelectionWindow, rri: int, p_th: float) -> set[SingleSlotResource]:
    """Resources in the selection window that survive exclusion at ``p_th``.

    A candidate is dropped when the vehicle did not monitor a slot that maps
    onto it at period ``rri``, or when a sensed reservation landing on it was
    received with RSRP at or above ``p_th``.
    """
    cand, levels, blocked = projection_levels(window, sel, rri)
    ok = available_mask(levels, blocked, p_th)
    ci, cj = np.nonzero(ok)
    return {SingleSlotResource(int(cand[i]), int(j)) for i, j in zip(ci, cj)}
