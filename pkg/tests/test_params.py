from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pracsim.params import (
    ConfigError, CounterWidth, DramTimings, PracParams, act_budget_per_window, acts_per_trefi,
    build, known_keys, load_config, parse_config_text, refs_per_window,
)
from pracsim.security import AnalysisConfig, secure_trh


def test_defaults():
    p = PracParams()
    assert (p.n_bo, p.n_mit, p.abo_act, p.abo_delay, p.blast_radius) == (32, 1, 3, 1, 2)
    assert p.alert_period == 4
    assert PracParams(n_mit=4).abo_delay == 4
    assert PracParams(n_mit=2, abo_delay=0).abo_delay == 0


def test_replace_keeps_delay_tied_to_n_mit():
    assert PracParams().replace(n_mit=4).abo_delay == 4
    assert PracParams().replace(n_mit=4, abo_delay=1).abo_delay == 1


@pytest.mark.parametrize("kw", [{"n_mit": 3}, {"n_bo": 0}, {"abo_act": -1}, {"blast_radius": 0}])
def test_invalid_params(kw):
    with pytest.raises(ConfigError):
        PracParams(**kw)


@pytest.mark.parametrize("kw", [{"t_rc": 0}, {"t_refi": 400}, {"rows_per_bank": 1000},
                                {"t_rfc": -1}])
def test_invalid_timings(kw):
    with pytest.raises(ConfigError):
        DramTimings(**kw)


def test_default_budgets():
    t = DramTimings()
    assert acts_per_trefi(t) == 67
    assert refs_per_window(t) == 8205
    assert act_budget_per_window(t) == 550_691


def test_budget_edge_cases():
    t = DramTimings(t_refw=3900, t_rfc=0)
    assert act_budget_per_window(t) == 3900 // 52
    # every refresh window spent refreshing
    t = DramTimings(t_refi=1000, t_rfc=999, t_refw=10_000)
    assert act_budget_per_window(t) == (10_000 - 10 * 999) // 52


timing_st = st.builds(
    lambda rc, refi, rfc, refw: DramTimings(t_rc=rc, t_refi=refi, t_rfc=rfc, t_refw=refw),
    st.integers(20, 100), st.integers(1000, 8000), st.integers(0, 900),
    st.integers(100_000, 64_000_000))


@given(timing_st)
def test_budget_consistency(t):
    assert acts_per_trefi(t) * (t.t_refw // t.t_refi) <= act_budget_per_window(t) + acts_per_trefi(t)


@given(timing_st, st.integers(1, 1_000_000))
def test_budget_monotone_in_refw(t, extra):
    longer = t.replace(t_refw=t.t_refw + extra)
    assert act_budget_per_window(longer) >= act_budget_per_window(t)


@given(timing_st, st.integers(1, 50))
def test_budget_monotone_in_trc(t, extra):
    slower = t.replace(t_rc=t.t_rc + extra)
    assert act_budget_per_window(slower) <= act_budget_per_window(t)
    assert acts_per_trefi(slower) <= acts_per_trefi(t)


def test_counter_width_covers_bounded_counts():
    w = CounterWidth()
    assert w.max_value == 127
    for n_mit in (1, 2, 4):
        assert w.fits(secure_trh(32, AnalysisConfig(PracParams(n_mit=n_mit))))
    assert not w.fits(128)


def test_parse_config_text():
    text = "# comment\nn_bo = 64\n\nt_refw = 32_000_000  # trailing\nt_rc=5.2e1\n"
    assert parse_config_text(text) == {"n_bo": 64, "t_refw": 32_000_000, "t_rc": 52}


@pytest.mark.parametrize("text", ["n_bo 64", "bogus = 1", "n_bo = 1.5", "n_bo = x"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("n_bo = 64\nn_mit = 2\n")
    p, t = load_config(path, {"n_bo": 16})
    assert (p.n_bo, p.n_mit, p.abo_delay) == (16, 2, 2)
    assert t == DramTimings()


def test_build_rejects_unknown():
    with pytest.raises(ConfigError):
        build({"nope": 1})
    assert "n_bo" in known_keys() and "t_refi" in known_keys()
