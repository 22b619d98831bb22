import numpy as np
import pytest

from nrsps.ch_rri import (ChRriConfig, adaptive_choice, ch_rri_select, ideal_allocation,
                          ideal_allocation_oracle)
from nrsps.grid import SelectionWindow, SensingWindow, available_mask, projection_levels

import oracles


def _idle(n_sub=2):
    return SensingWindow.from_history(100, np.full((100, n_sub), -np.inf))


def test_idle_channel_picks_minimum():
    rri, st = ch_rri_select(_idle(), ChRriConfig(), -90.0, -30.0, np.random.default_rng(0))
    assert rri == 20 and st.rri == 20 and st.p_th == -90.0
    assert 101 <= st.slot <= 120
    assert 25 <= st.rc <= 75


def test_busy_prefix_pushes_interval_up():
    # the first 45 slots after s_n are reserved at 100 ms; 20 % of a window first
    # fits once rri_hat reaches 60 (16 free slots of 60 -> 26.7 %)
    rsrp = np.full((100, 2), -np.inf)
    rri = np.zeros((100, 2), dtype=int)
    rsrp[1:46] = -70.0
    rri[1:46] = 100
    w = SensingWindow.from_history(100, rsrp, rri)
    r, st = ch_rri_select(w, ChRriConfig(), -90.0, -30.0, np.random.default_rng(0))
    assert r == 60 and st.p_th == -90.0
    assert st.slot >= 146


def test_threshold_escalates_only_at_maximum():
    w = SensingWindow.from_history(100, np.full((100, 2), -75.0), np.full((100, 2), 100))
    r, st = ch_rri_select(w, ChRriConfig(), -90.0, -30.0, np.random.default_rng(0))
    # strict RSRP < p_th: -75 dBm first passes at -72
    assert r == 100 and st.p_th == -72.0 and st.escalations == 6


def test_fallback_when_everything_is_loud():
    w = SensingWindow.from_history(100, np.full((100, 2), -10.0), np.full((100, 2), 100))
    r, st = ch_rri_select(w, ChRriConfig(), -90.0, -30.0, np.random.default_rng(0))
    assert r == 100 and st.fallback


def test_matches_loop_oracle():
    rng = np.random.default_rng(9)
    cfg = ChRriConfig()
    for _ in range(60):
        rsrp = np.where(rng.random((100, 2)) < rng.uniform(0.2, 1.0),
                        rng.uniform(-100, -40, (100, 2)), -np.inf)
        per = rng.choice([0, 20, 50, 100] if rng.random() < 0.3 else [20, 50, 100], size=(100, 2))
        uns = rng.random(100) < 0.03
        w = SensingWindow.from_history(100, rsrp, per, uns)

        def free(r, p):
            cand, lev, blk = projection_levels(w, SelectionWindow(1, r), r)
            return int(available_mask(lev, blk, p).sum()), lev.size
        want = oracles.ch_rri_loop(free, 20, 100, 10, 20, -90.0, -30.0)
        r, st = ch_rri_select(w, cfg, -90.0, -30.0, np.random.default_rng(0))
        assert (r, st.p_th, st.fallback) == want


def test_grid():
    assert ChRriConfig().grid() == [20, 30, 40, 50, 60, 70, 80, 90, 100]
    assert ChRriConfig(rri_min=20, rri_max=95, delta=20).grid() == [20, 40, 60, 80, 95]
    assert ChRriConfig(rri_max=10).validate()


def test_ideal_allocation_example():
    # 10 vehicles on 20 slots
    assert ideal_allocation([10], 20) == (50.0, 1.0)
    rows = ideal_allocation_oracle([10], rri_options=[20])
    assert rows[-1][0] == "adaptive" and rows[-1][1:] == (50.0, 1.0)


def test_ideal_allocation_against_oracle():
    for clusters in ([20, 50, 100], [7], [3, 200, 41]):
        for rri in (20, 50, 100):
            got = ideal_allocation(clusters, rri)
            assert got == pytest.approx(oracles.ideal_table(clusters, rri))


def test_adaptive_choice():
    assert [adaptive_choice(n, [20, 50, 100]) for n in (20, 50, 100, 150)] == [20, 50, 100, 100]


def test_bad_clusters():
    with pytest.raises(ValueError):
        ideal_allocation([0, 3], 20)
