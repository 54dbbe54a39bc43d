import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimelab.market_sim import (
    PriceSeries,
    RegimePath,
    RegimeSchedule,
    RegimeSpec,
    draw_shocks,
    inject_regime_shift,
    price_series_from_csv,
    price_series_to_csv,
    regime_path_from_csv,
    regime_path_to_csv,
    returns_to_ohlcv,
    sample_regime_path,
    simulate_market,
    simulate_returns,
    stationary_distribution,
)


def two_state_spec(p_stay=0.9, mu=(0.5, -0.5), phi=(0.2, 0.1), sigma=(0.3, 0.4)):
    return RegimeSpec(
        mu=np.array(mu),
        phi=np.array(phi),
        sigma=np.array(sigma),
        transition=np.array([[p_stay, 1 - p_stay], [1 - p_stay, p_stay]]),
        initial_dist=np.array([0.5, 0.5]),
    )


# ---------------------------------------------------------------- validation


def test_rejects_non_stochastic_transition():
    with pytest.raises(ValueError):
        RegimeSpec(
            mu=[0.0, 0.0],
            phi=[0.0, 0.0],
            sigma=[1.0, 1.0],
            transition=[[0.9, 0.2], [0.1, 0.9]],
            initial_dist=[1.0, 0.0],
        )


def test_rejects_explosive_phi_and_negative_sigma():
    with pytest.raises(ValueError):
        RegimeSpec(mu=[0.0], phi=[1.0], sigma=[1.0], transition=[[1.0]], initial_dist=[1.0])
    with pytest.raises(ValueError):
        RegimeSpec(mu=[0.0], phi=[0.0], sigma=[-0.1], transition=[[1.0]], initial_dist=[1.0])


@given(st.floats(min_value=-0.2, max_value=0.2, allow_nan=False))
def test_row_sum_tolerance_is_tight(eps):
    # rows must sum to 1 within 1e-12; any visible perturbation is rejected
    if abs(eps) < 1e-9:
        return
    with pytest.raises(ValueError):
        RegimeSpec(
            mu=[0.0],
            phi=[0.0],
            sigma=[1.0],
            transition=[[1.0 + eps]],
            initial_dist=[1.0],
        )


def test_schedule_requires_increasing_starts():
    spec = two_state_spec()
    with pytest.raises(ValueError):
        RegimeSchedule(segments=[(0, spec), (5, spec), (5, spec)])
    with pytest.raises(ValueError):
        RegimeSchedule(segments=[(3, spec)])


# ---------------------------------------------------------------- chain behaviour


def test_absorbing_chain_never_leaves_start_regime():
    spec = RegimeSpec(
        mu=[0.1, 0.2],
        phi=[0.0, 0.0],
        sigma=[1.0, 1.0],
        transition=np.eye(2),
        initial_dist=[0.0, 1.0],
    )
    path = sample_regime_path(spec, 500, seed=7)
    assert path.occupancy()[1] == 1.0


def test_sticky_two_state_occupancy_near_half():
    spec = two_state_spec(p_stay=0.9)
    path = sample_regime_path(spec, 10_000, seed=11)
    occ = path.occupancy()
    target = stationary_distribution(spec.transition)
    np.testing.assert_allclose(target, [0.5, 0.5], atol=1e-12)
    assert abs(occ[0] - 0.5) < 0.03


def test_path_determinism_per_seed():
    spec = two_state_spec()
    a = sample_regime_path(spec, 200, seed=3).states
    b = sample_regime_path(spec, 200, seed=3).states
    c = sample_regime_path(spec, 200, seed=4).states
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- return recursion


def test_pure_ar_decay_closed_form():
    # mu=0, phi=0.5, sigma=0, o_init=1: o_t = 0.5^(t+1), a closed-form oracle
    spec = RegimeSpec(mu=[0.0], phi=[0.5], sigma=[0.0], transition=[[1.0]], initial_dist=[1.0])
    path = RegimePath(states=np.zeros(12, dtype=np.int64), n_regimes=1)
    out = simulate_returns(spec, path, seed=0, o_init=1.0)
    expected = 0.5 ** np.arange(1, 13)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_shock_recovery_exact():
    # re-deriving shocks from the recursion must reproduce the drawn stream
    rng = np.random.default_rng(42)
    spec = RegimeSpec(
        mu=rng.normal(0, 1, 3),
        phi=rng.uniform(-0.8, 0.8, 3),
        sigma=rng.uniform(0.1, 2.0, 3),
        transition=np.full((3, 3), 1 / 3),
        initial_dist=[1 / 3, 1 / 3, 1 / 3],
    )
    path = sample_regime_path(spec, 400, seed=5)
    shocks = draw_shocks(spec, 400, seed=5)
    out = simulate_returns(spec, path, seed=5)
    prev = np.concatenate([[0.0], out[:-1]])
    s = path.states
    recovered = (out - spec.mu[s] - spec.phi[s] * prev) / spec.sigma[s]
    np.testing.assert_allclose(recovered, shocks, rtol=0, atol=1e-12)


def test_identical_shift_params_bit_identical():
    spec = two_state_spec()
    schedule = inject_regime_shift(spec, at_step=50, mu=spec.mu.copy())
    plain = simulate_market(spec, 120, seed=9)
    shifted = simulate_market(schedule, 120, seed=9)
    assert np.array_equal(plain.path.states, shifted.path.states)
    assert np.array_equal(plain.returns, shifted.returns)
    assert np.array_equal(plain.series.close, shifted.series.close)


def test_shift_equals_manual_concatenation():
    # segment 2 rerun standalone with the boundary o_{t-1} and the same shock
    # tail must agree exactly with the scheduled run
    spec = two_state_spec()
    at = 40
    schedule = inject_regime_shift(spec, at_step=at, mu=-spec.mu, sigma=spec.sigma * 2)
    horizon = 100
    path = sample_regime_path(schedule, horizon, seed=21)
    shocks = draw_shocks(schedule, horizon, seed=21)
    full = simulate_returns(schedule, path, shocks=shocks)

    spec2 = schedule.segments[1][1]
    head = simulate_returns(
        spec, RegimePath(path.states[:at], 2), shocks=shocks[:at]
    )
    tail = simulate_returns(
        spec2, RegimePath(path.states[at:], 2), shocks=shocks[at:], o_init=head[-1]
    )
    np.testing.assert_array_equal(full, np.concatenate([head, tail]))


@given(st.sampled_from(["normal", "uniform", "laplace"]), st.integers(0, 2**32 - 1))
@settings(max_examples=15)
def test_shock_families_have_unit_variance(dist, seed):
    spec = RegimeSpec(
        mu=[0.0], phi=[0.0], sigma=[1.0], transition=[[1.0]], initial_dist=[1.0],
        shock_dist=dist,
    )
    shocks = draw_shocks(spec, 40_000, seed=seed)
    assert abs(shocks.mean()) < 0.05
    assert abs(shocks.var() - 1.0) < 0.05


# ---------------------------------------------------------------- OHLCV wrapping


def test_flat_returns_give_flat_prices():
    series = returns_to_ohlcv(np.zeros(50), init_price=100.0, seed=1)
    np.testing.assert_allclose(series.close, 100.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(series.high, 100.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(series.low, 100.0, rtol=0, atol=1e-12)


def test_pct_change_round_trip_precision():
    rng = np.random.default_rng(2)
    returns = rng.normal(0, 1.5, 300)
    series = returns_to_ohlcv(returns, init_price=250.0, seed=2)
    implied = (series.close[1:] / series.close[:-1] - 1.0) * 100.0
    np.testing.assert_allclose(implied, returns[1:], rtol=1e-9, atol=1e-9)
    first = (series.close[0] / 250.0 - 1.0) * 100.0
    assert abs(first - returns[0]) < 1e-9


@given(st.integers(0, 2**31 - 1), st.floats(10.0, 1000.0))
@settings(max_examples=30)
def test_bar_ordering_invariant(seed, init_price):
    rng = np.random.default_rng(seed)
    returns = rng.normal(0, 2.0, 60)
    s = returns_to_ohlcv(returns, init_price=init_price, seed=seed)
    assert np.all(s.low <= np.minimum(s.open, s.close) + 1e-12)
    assert np.all(s.high >= np.maximum(s.open, s.close) - 1e-12)
    assert np.all(s.volume >= 0)


def test_rejects_ruinous_return():
    with pytest.raises(ValueError):
        returns_to_ohlcv(np.array([-100.0]), init_price=10.0)


# ---------------------------------------------------------------- CSV formats


def test_price_csv_round_trip():
    res = simulate_market(two_state_spec(), 80, seed=13)
    text = price_series_to_csv(res.series)
    back = price_series_from_csv(text)
    assert price_series_to_csv(back) == text
    np.testing.assert_allclose(back.close, res.series.close, atol=5e-7)


def test_price_csv_rejects_bad_header_and_fields():
    with pytest.raises(ValueError):
        price_series_from_csv("nope\n1,2,3\n")
    good = price_series_to_csv(simulate_market(two_state_spec(), 5, seed=0).series)
    broken = good.replace("\n4,", "\n4,xx,", 1)
    with pytest.raises(ValueError):
        price_series_from_csv(broken)


def test_regime_csv_round_trip():
    path = sample_regime_path(two_state_spec(), 30, seed=6)
    text = regime_path_to_csv(path)
    back = regime_path_from_csv(text, n_regimes=2)
    assert np.array_equal(back.states, path.states)
