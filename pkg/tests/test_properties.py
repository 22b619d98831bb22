"""Randomised invariant checks, 1000 cases each."""
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from nrsps.aoi_rri import (Action, AoiRriConfig, AoiRriState, channel_congested, choose_action,
                           step_rri)
from nrsps.ch_rri import ChRriConfig, ch_rri_select, ideal_allocation_oracle
from nrsps.channel import ChannelConfig, ReceptionModel, resolve_arrays
from nrsps.grid import UNSENSED, SelectionWindow, SensingWindow, candidate_slots
from nrsps.metrics import pdr, tracking_error
from nrsps.mobility import HighwayConfig, Vehicle, spawn_vehicles, step
from nrsps.sps import SpsConfig, draw_rc, escalate_threshold, select_resource

PROP = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2**32 - 1)


def _random_window(seed, n_sub=2, busy=0.4, uns=0.05, cap=100, periods=(0, 20, 50, 100)):
    rng = np.random.default_rng(seed)
    rsrp = np.where(rng.random((cap, n_sub)) < busy, rng.uniform(-110, -40, (cap, n_sub)), -np.inf)
    rri = rng.choice(periods, size=(cap, n_sub))
    u = rng.random(cap) < uns
    return SensingWindow.from_history(cap + int(rng.integers(0, 1000)), rsrp, rri, u), rng


# -- grid -------------------------------------------------------------------

@PROP
@given(st.lists(st.one_of(st.none(), st.floats(-120, -30)), min_size=1, max_size=300),
       st.integers(1, 50))
def test_window_never_older_than_capacity(obs, cap):
    w = SensingWindow(cap, 2)
    for s, o in enumerate(obs):
        w.record_observation(s, s % 2, UNSENSED if o is None else o)
        assert w.oldest_slot >= w.current_slot - cap + 1
        assert len(w) == min(s + 1, cap)


@PROP
@given(seeds, st.floats(-110, -40), st.floats(0, 30), st.sampled_from([20, 50, 100]))
def test_candidates_monotone_in_threshold(seed, p_lo, dp, rri):
    w, _ = _random_window(seed)
    sel = SelectionWindow(1, rri)
    assert candidate_slots(w, sel, rri, p_lo) <= candidate_slots(w, sel, rri, p_lo + dp)


@PROP
@given(seeds, st.sampled_from([20, 50, 100]))
def test_candidates_at_infinite_thresholds(seed, rri):
    w, _ = _random_window(seed)
    sel = SelectionWindow(1, rri)
    assert candidate_slots(w, sel, rri, -math.inf) == set()
    slots, _, _, uns = w.history()
    own = slots[uns]
    got = candidate_slots(w, sel, rri, math.inf)
    want = {(c, j) for c in range(w.next_slot + 1, w.next_slot + rri + 1)
            if not np.any((c - own) % rri == 0) for j in range(2)}
    assert {(r.slot, r.subchannel) for r in got} == want


# -- mobility -----------------------------------------------------------------

@PROP
@given(st.floats(0, 1999.999), st.floats(-60, 60), st.floats(0.001, 100))
def test_step_stays_on_road_and_moves_v_dt(x, v, dt):
    out = step([Vehicle(0, 0, x, 2.0, v)], dt, 2000.0)[0]
    assert 0 <= out.x < 2000.0
    assert abs(((out.x - x) - v * dt + 1000) % 2000 - 1000) < 1e-6


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([20, 80, 160]))
def test_spawn_is_reproducible(seed, density):
    cfg = HighwayConfig(density=density)
    assert spawn_vehicles(cfg, seed) == spawn_vehicles(cfg, seed)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([20.0, 60.0, 160.0]))
def test_spawn_mean_within_five_percent(seed, density):
    # batch mean of 50 independent highways
    cfg = HighwayConfig(density=density)
    ss = np.random.SeedSequence(seed).spawn(50)
    mean = np.mean([len(spawn_vehicles(cfg, s)) for s in ss])
    se = math.sqrt(cfg.expected_count / 50)
    # the 5 % band exceeds 4 standard errors for every density used here
    assert abs(mean - cfg.expected_count) <= max(0.05 * cfg.expected_count, 4 * se)


# -- channel ------------------------------------------------------------------

def _links(seed, k_max=8, n_max=30, model=ReceptionModel.PROTOCOL):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max))
    x = rng.uniform(0, 2000, n)
    y = rng.integers(0, 6, n) * 4 + 2.0
    k = int(rng.integers(1, min(n, k_max) + 1))
    tx = rng.choice(n, size=k, replace=False)
    dx = np.abs(x[tx, None] - x[None, :])
    dx = np.minimum(dx, 2000 - dx)
    dist = np.hypot(dx, y[tx, None] - y[None, :])
    sub = rng.random((k, 2)) < 0.7
    sub[~sub.any(1), 0] = True
    return dist, tx, sub, ChannelConfig(model=model)


@PROP
@given(seeds, st.sampled_from(list(ReceptionModel)))
def test_half_duplex_never_receives(seed, model):
    dist, tx, sub, cfg = _links(seed, model=model)
    res = resolve_arrays(dist, tx, sub, cfg)
    assert not res.success[:, tx].any()


@PROP
@given(seeds)
def test_single_transmitter_reaches_all_in_range(seed):
    dist, tx, sub, cfg = _links(seed, k_max=1)
    res = resolve_arrays(dist, tx, sub, cfg)
    want = dist <= cfg.sensing_range
    want[0, tx[0]] = False
    assert np.array_equal(res.success, want)


@PROP
@given(seeds)
def test_mutually_in_range_transmitters_jam_the_slot(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 20))
    x = rng.uniform(0, 140, n)  # everything within 150 m of everything
    dist = np.abs(x[:, None] - x[None, :])
    k = int(rng.integers(2, n))
    tx = rng.choice(n, size=k, replace=False)
    res = resolve_arrays(dist[tx], tx, np.ones((k, 2), dtype=bool), ChannelConfig())
    assert not res.success.any()


@PROP
@given(seeds)
def test_sinr_removing_interferer_never_hurts(seed):
    dist, tx, sub, cfg = _links(seed, model=ReceptionModel.SINR)
    if tx.size < 2:
        return
    full = resolve_arrays(dist, tx, sub, cfg)
    drop = int(np.random.default_rng(seed + 1).integers(tx.size))
    keep = np.delete(np.arange(tx.size), drop)
    part = resolve_arrays(dist[keep], tx[keep], sub[keep], cfg)
    # the dropped transmitter becomes a receiver, compare the other columns
    cols = np.setdiff1d(np.arange(dist.shape[1]), tx[drop])
    assert not (full.success[keep][:, cols] & ~part.success[:, cols]).any()


# -- sps ----------------------------------------------------------------------

@PROP
@given(seeds, st.integers(1, 1000))
def test_rc_spans_half_to_one_and_a_half_seconds(seed, rri):
    rc = draw_rc(rri, np.random.default_rng(seed))
    lo, hi = math.ceil(500 / rri), max(math.ceil(500 / rri), math.floor(1500 / rri))
    assert lo <= rc <= hi
    if rri <= 500:
        assert 500 <= rc * rri <= 1500 + rri


@PROP
@given(seeds, st.floats(-100, -60), st.floats(0, 60), st.sampled_from([20, 35, 50]))
def test_escalation_terminates(seed, p_min, span, x):
    rng = np.random.default_rng(seed)
    levels = np.where(rng.random((50, 2)) < 0.8, rng.uniform(-100, 0, (50, 2)), -np.inf)
    blocked = rng.random(50) < 0.1
    p, mask, steps = escalate_threshold(levels, blocked, p_min, p_min + span, x)
    assert steps <= math.ceil(span / 3)
    assert p <= p_min + span
    if mask is not None:
        assert mask.sum() >= x / 100 * levels.size


@PROP
@given(seeds, st.sampled_from([20, 50, 100]), st.integers(1, 4))
def test_selection_inside_window(seed, rri, t1):
    w, rng = _random_window(seed)
    st_ = select_resource(w, SpsConfig(t1=t1), rri, rng)
    assert w.next_slot + t1 <= st_.slot <= w.next_slot + rri
    assert st_.rri == rri


def test_idle_channel_offsets_uniform():
    from scipy.stats import chisquare
    w = SensingWindow.from_history(100, np.full((100, 2), -np.inf))
    rng = np.random.default_rng(12)
    offs = [select_resource(w, SpsConfig(), 100, rng).slot - 101 for _ in range(20000)]
    counts = np.bincount(offs, minlength=100)
    assert counts.size == 100
    assert chisquare(counts).pvalue > 0.001


# -- ch_rri -------------------------------------------------------------------

@PROP
@given(seeds, st.floats(0.0, 1.0))
def test_ch_rri_returns_grid_value(seed, busy):
    w, _ = _random_window(seed, busy=busy)
    cfg = ChRriConfig()
    r, state = ch_rri_select(w, cfg, -90.0, -30.0, np.random.default_rng(seed))
    assert r in cfg.grid() and state.rri == r
    assert w.next_slot + 1 <= state.slot <= w.next_slot + r


@PROP
@given(seeds, st.floats(0, 30))
def test_ch_rri_monotone_in_interference(seed, bump):
    w, _ = _random_window(seed, busy=0.6, periods=(20, 50, 100))
    slots, rsrp, rri, uns = w.history()
    rng = np.random.default_rng(seed)
    louder = rsrp.copy()
    hit = rng.random(rsrp.shape) < 0.3
    louder[hit] = np.where(np.isneginf(louder[hit]), -100.0, louder[hit]) + bump
    rri2 = np.where(hit & (rri == 0), 100, rri)
    w2 = SensingWindow.from_history(w.next_slot, louder, rri2, uns)
    # idle records that become busy need a period; keep the original ones consistent
    w1 = SensingWindow.from_history(w.next_slot, rsrp, rri2, uns)
    cfg = ChRriConfig()
    r1, _ = ch_rri_select(w1, cfg, -90.0, -30.0, np.random.default_rng(0))
    r2, _ = ch_rri_select(w2, cfg, -90.0, -30.0, np.random.default_rng(0))
    assert r2 >= r1


@PROP
@given(st.integers(1, 100), st.integers(1, 100))
def test_single_cluster_within_capacity(n, rri):
    if n > rri:
        n = rri
    rows = ideal_allocation_oracle([n], rri_options=[rri])
    for _, occ, ps in rows:
        assert occ <= 100.0 + 1e-9 and ps == 1.0


# -- aoi_rri ------------------------------------------------------------------

@PROP
@given(st.integers(1, 200), st.sampled_from(list(Action)), st.floats(1.01, 2.0),
       st.integers(1, 60), st.integers(0, 150))
def test_rri_clamped_and_stepped(prev, action, beta, lo, span):
    cfg = AoiRriConfig(beta=beta, rri_min=lo, rri_max=lo + span, initial_rri=lo)
    new = step_rri(prev, action, cfg)
    if cfg.rri_min <= prev <= cfg.rri_max:
        assert cfg.rri_min <= new <= cfg.rri_max
        target = {Action.INCR: prev * beta, Action.DECR: prev / beta, Action.SAME: prev}[action]
        if new not in (cfg.rri_min, cfg.rri_max, prev):
            # rounding moves at most half a slot, or the forced one-slot step
            assert abs(new - target) <= 0.5 or abs(new - prev) == 1
        if action is Action.SAME:
            assert new == prev


@PROP
@given(st.floats(0, 500), st.one_of(st.none(), st.floats(0, 500)), st.sampled_from(list(Action)),
       st.floats(0, 20))
def test_congestion_override(aoi, prev_aoi, prev_action, sigma):
    cfg = AoiRriConfig(sigma_t=sigma)
    state = AoiRriState(prev_rri=50, prev_aoi=prev_aoi, prev_action=prev_action)
    assert choose_action(state, aoi, True, cfg) is Action.INCR


@PROP
@given(seeds, st.floats(-110, -40), st.floats(0, 40), st.integers(1, 100), st.floats(0.05, 1.0))
def test_congestion_monotone_in_threshold(seed, p, dp, rri, frac):
    w, _ = _random_window(seed, busy=0.7, uns=0.1)
    if channel_congested(w, p + dp, rri, frac):
        assert channel_congested(w, p, rri, frac)


@PROP
@given(st.integers(20, 100), st.floats(0.5, 5.0), st.floats(0, 8.0), st.integers(20, 100),
       st.floats(0.1, 3.0))
def test_no_three_consecutive_inversions(opt, curv, sigma, start, scale):
    cfg = AoiRriConfig(sigma_t=sigma)

    def f(r):  # unimodal, minimum at ``opt``
        return 20.0 + scale * abs(r - opt) ** (1 + curv / 5)

    state = AoiRriState(prev_rri=start, prev_aoi=None, prev_action=Action.SAME)
    run = longest = 0
    for _ in range(60):
        aoi = f(state.prev_rri)
        worse = state.prev_aoi is not None and aoi > state.prev_aoi + sigma
        action = choose_action(state, aoi, False, cfg)
        run = run + 1 if worse else 0
        longest = max(longest, run)
        state = AoiRriState(prev_rri=step_rri(state.prev_rri, action, cfg), prev_aoi=aoi,
                            prev_action=action)
    assert longest < 3


# -- metrics ------------------------------------------------------------------

@PROP
@given(st.floats(0, 2000), st.floats(0, 24), st.floats(0, 10000))
def test_stationary_sender_has_no_tracking_error(x, y, dt):
    # a parked sender is where its last packet said it was
    assert tracking_error((x, y), (x + 0.0 * dt, y), 2000.0) == 0.0


@PROP
@given(st.floats(1, 60), st.floats(0, 300))
def test_tracking_error_is_speed_times_age(v, age):
    assert math.isclose(tracking_error((v * age * 1e-3, 0.0), (0.0, 0.0)), v * age * 1e-3,
                        rel_tol=1e-12, abs_tol=1e-12)


@PROP
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 50)), min_size=1, max_size=30), seeds)
def test_pdr_relabel_invariant(counts, seed):
    counts = [(min(r, e), e) for r, e in counts]
    ids = list(range(len(counts)))
    perm = np.random.default_rng(seed).permutation(len(counts))
    a = {i: pdr(*counts[i]) for i in ids}
    b = {int(perm[i]): pdr(*counts[i]) for i in ids}
    assert math.isclose(np.mean(list(a.values())), np.mean(list(b.values())), rel_tol=1e-12)
    assert sorted(a.values()) == sorted(b.values())
