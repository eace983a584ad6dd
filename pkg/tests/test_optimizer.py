import json

import numpy as np
import pytest

from splitwell.adiabatic import CouplingTable, transition_amplitude
from splitwell.constants import TWO_PI
from splitwell.errors import GapClosedError, OptimizerError
from splitwell.optimizer import (
    SHOOTING_TOL,
    compose_ramp,
    optimize_ramp,
    predict_amplitude_fourier,
    solve_shape,
    solve_timemap,
)
from splitwell.ramps import PulseShape, blackman_shape, cosine_series_shape, linear_ramp


def _scaled_blackman(k):
    b = blackman_shape()
    return PulseShape("blackman_x%g" % k, lambda t: k * b(t), None,
                      lambda t: k * b.cumulative(t))


# --- shape ODE --------------------------------------------------------------


def test_constant_coupling_separates():
    a0 = 0.8
    sol = solve_shape(CouplingTable.constant(a0, 1000.0))
    assert sol.A == pytest.approx(a0, rel=1e-8)
    np.testing.assert_allclose(sol.s_tau, blackman_shape().cumulative(sol.tau), atol=1e-8)


def test_shooting_converges_on_computed_table(optimized):
    assert abs(optimized.solution.residual) <= SHOOTING_TOL
    s = optimized.solution.s_tau
    assert s[0] == 0.0 and s[-1] == 1.0 and np.all(np.diff(s) > 0)


def test_amplitude_normalization_invariance(t02):
    one = solve_shape(t02)
    two = solve_shape(t02, _scaled_blackman(2.0))
    assert two.A * 2.0 == pytest.approx(one.A, rel=1e-7)
    np.testing.assert_allclose(two.s_tau, one.s_tau, atol=1e-7)


def test_shooting_bracket_failure(monkeypatch):
    import splitwell.optimizer as opt
    monkeypatch.setattr(opt, "BRACKET_SPAN", 1.0)
    # a wrong antiderivative puts the initial estimate a factor 100 too low
    b = blackman_shape()
    liar = PulseShape("liar", b.func, None, lambda t: 100.0 * b.cumulative(t))
    with pytest.raises(OptimizerError):
        solve_shape(CouplingTable.constant(1.0, 1.0), liar)


def test_zero_coupling_rejected():
    with pytest.raises(OptimizerError):
        solve_shape(CouplingTable.constant(0.0, 1.0))


def test_generalized_coupling_identity(optimized):
    rep = optimized.report()
    assert rep["residuals"]["coupling_reconstruction"] < 0.01


# --- time map ---------------------------------------------------------------


def test_constant_gap_time_map():
    Om = TWO_PI * 300.0
    tab = CouplingTable.constant(1.0, Om)
    sol = solve_shape(tab)
    tm = solve_timemap(tab, sol)
    assert tm.T0 == pytest.approx(1.0 / Om, rel=1e-10)
    t = np.linspace(0.0, tm.T0, 9)
    np.testing.assert_allclose(tm.tau_of_t(t), Om * t, atol=1e-9)


def test_time_map_on_computed_table(optimized, t02):
    tm = optimized.timemap
    assert 1e-4 < tm.T0 < 1e-2
    # independent quadrature of ∫ dτ / Δω(s_τ(τ))
    tau = optimized.solution.tau
    ref = np.trapezoid(1.0 / t02.domega_at(optimized.solution.s_tau), tau)
    assert tm.T0 == pytest.approx(ref, rel=1e-6)
    assert np.all(np.diff(tm.t) > 0)
    assert tm.tau_of_t(tm.T0) == pytest.approx(1.0, abs=1e-8)


def test_gap_closed_error(t02):
    bad = CouplingTable(0, 1, t02.s, t02.a, np.where(t02.s > 0.9, 0.0, t02.domega))
    with pytest.raises(GapClosedError):
        optimize_ramp(bad)


# --- composition ------------------------------------------------------------


def test_compose_at_T0_is_identity(optimized):
    T0 = optimized.T0
    r = optimized.ramp(T0)
    t = np.linspace(0.0, T0, 50)
    expected = optimized.solution.s_at(optimized.timemap.tau_of_t(t))
    np.testing.assert_allclose(r.s(t), expected, atol=1e-6)


@pytest.mark.parametrize("T", [0.005, 0.03, 0.1])
def test_ramp_endpoints_and_monotone(optimized, T):
    r = optimized.ramp(T)
    assert r.s(0.0) == 0.0 and r.s(T) == 1.0
    assert np.all(np.diff(r.s_u) > 0)
    assert abs(r.rate(0.0)) < 1e-6 / T and abs(r.rate(T)) < 1e-6 / T


def test_rescaling_law(optimized):
    a, b = optimized.ramp(0.02), optimized.ramp(0.05)
    u = np.linspace(0.0, 1.0, 31)
    np.testing.assert_allclose(a.s(u * 0.02), b.s(u * 0.05), atol=1e-14)


def test_fourier_zero_frequency(optimized):
    c = predict_amplitude_fourier(optimized.solution, optimized.timemap, 0.0)
    assert abs(c) == pytest.approx(optimized.A, rel=1e-3)


@pytest.mark.parametrize("T", [0.005, 0.01, 0.02, 0.03])
def test_fourier_route_matches_time_domain(optimized, t02, T):
    direct = transition_amplitude(t02, optimized.ramp(T)).probability
    fourier = abs(optimized.predict(T)) ** 2
    if direct < 1e-2:
        assert fourier == pytest.approx(direct, rel=0.1)


def test_blackman_beats_rectangle_in_sidebands():
    tab = CouplingTable.constant(1.0, TWO_PI * 100.0)
    bl = optimize_ramp(tab)
    rect = cosine_series_shape("rect", (1.0,))
    # the rectangle solution has nonzero end speeds; evaluate its Fourier tail directly
    sol = solve_shape(tab, rect, floor_rel=1e-3)
    tm = solve_timemap(tab, sol)
    ratios = [abs(bl.predict(k * bl.T0)) for k in (60.0, 120.0, 240.0)]
    rect_vals = [abs(predict_amplitude_fourier(sol, tm, k * tm.T0)) for k in (60.0, 120.0, 240.0)]
    assert all(b < r for b, r in zip(ratios, rect_vals))
    assert ratios[-1] / ratios[0] < rect_vals[-1] / rect_vals[0]


# --- paper potential --------------------------------------------------------


def test_improvement_over_linear(optimized, t02):
    T = np.linspace(0.02, 0.1, 17)
    lin = np.array([transition_amplitude(t02, linear_ramp(x)).probability for x in T])
    opt = np.array([transition_amplitude(t02, optimized.ramp(x)).probability for x in T])
    assert np.all(opt <= lin)
    assert np.min(opt / lin) <= 0.1


def test_optimized_30ms_total(optimized, t02, t13):
    r = optimized.ramp(0.03)
    total = (transition_amplitude(t02, r).probability
             + transition_amplitude(t13, r).probability)
    assert total < 1e-2


def test_report(optimized, tmp_path):
    optimized.write_report(tmp_path / "r.json")
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["pair"] == [0, 2] and rep["shape"] == "blackman"
    assert rep["A"] == optimized.A and rep["T0_s"] == optimized.T0
    assert rep["floor_rel"] == 1e-3 and rep["floor"] > 0


def test_compose_rejects_bad_T(optimized):
    with pytest.raises(ValueError):
        compose_ramp(optimized.solution, optimized.timemap, 0.0)
