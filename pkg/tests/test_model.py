import numpy as np
import pytest

from foglat.model import (
    GenerationParams,
    Scenario,
    ScenarioSizing,
    Task,
    draw_channel,
    generate_scenario,
    pathloss_variance,
    scenario_from_json,
    scenario_to_json,
    validate_scenario,
)


def default_scenario(seed=0, **over):
    sizing = ScenarioSizing(K=over.pop("K", 10), L=over.pop("L", 4), **over)
    return generate_scenario(GenerationParams(seed=seed), sizing)


def test_defaults_match_headline_setting():
    s = default_scenario()
    assert s.K == 10 and s.L == 4
    assert s.N == (4,) * 10 and s.M == (8,) * 4
    assert s.W == 20e6
    assert s.P == (1.0,) * 10  # 30 dBm on the normalized noise scale
    assert all(h.shape == (4, 8) for row in s.H for h in row)
    assert validate_scenario(s) == []


def test_generation_is_deterministic():
    a = default_scenario(seed=123)
    b = default_scenario(seed=123)
    assert scenario_to_json(a) == scenario_to_json(b)
    for ra, rb in zip(a.H, b.H):
        for ha, hb in zip(ra, rb):
            assert np.array_equal(ha, hb)


def test_different_seeds_differ():
    a = default_scenario(seed=1)
    b = default_scenario(seed=2)
    assert not np.array_equal(a.H[0][0], b.H[0][0])


def test_zero_shadowing_equal_distance_gives_equal_variance():
    # With shadowing off, per-entry variance only depends on distance.
    var1 = pathloss_variance(500.0)
    var2 = pathloss_variance(500.0)
    assert var1 == var2
    assert var1 == pytest.approx((2000.0 / 500.0) ** 3)


def test_channel_variance_matches_pathloss_model():
    # >= 1e4 draws at fixed distance, zero shadowing: empirical per-real-dim
    # variance within 5% of (2000/d)^3.
    rng = np.random.default_rng(7)
    d = 400.0
    want = pathloss_variance(d)
    h = draw_channel(rng, 100, 100, want)  # 1e4 entries
    emp_re = float(np.var(h.real))
    emp_im = float(np.var(h.imag))
    assert abs(emp_re - want) / want < 0.05
    assert abs(emp_im - want) / want < 0.05


def test_sizing_mismatch_raises():
    with pytest.raises(ValueError, match="sizing.P"):
        generate_scenario(GenerationParams(seed=0),
                          ScenarioSizing(K=3, L=2, P=(1.0, 1.0)))


def test_validate_flags_bad_task():
    s = default_scenario(K=3, L=2)
    tasks = list(s.tasks)
    tasks[1] = Task(bits=0, flops=tasks[1].flops)
    bad = Scenario(**{**s.__dict__, "tasks": tuple(tasks)})
    msgs = validate_scenario(bad)
    assert any("tasks[1].bits" in m for m in msgs)


def test_validate_flags_channel_shape():
    s = default_scenario(K=2, L=2)
    H = [list(row) for row in s.H]
    H[0][0] = np.zeros((3, 8), dtype=complex)  # N is 4
    bad = Scenario(**{**s.__dict__, "H": tuple(tuple(r) for r in H)})
    msgs = validate_scenario(bad)
    assert any("H[0][0]" in m and "shape" in m for m in msgs)


def test_json_round_trip():
    s = default_scenario(K=3, L=2, N=2, M=3)
    t = scenario_from_json(scenario_to_json(s))
    assert t.K == s.K and t.tasks == s.tasks
    for row_s, row_t in zip(s.H, t.H):
        for hs, ht in zip(row_s, row_t):
            assert np.allclose(hs, ht, rtol=0, atol=0)
    assert scenario_to_json(t) == scenario_to_json(s)


def test_scenario_arrays_are_read_only():
    s = default_scenario(K=2, L=2)
    with pytest.raises(ValueError):
        s.H[0][0][0, 0] = 0
    with pytest.raises(ValueError):
        s.ue_pos[0, 0] = 0
