import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import splitwell.spectrum as spectrum
from splitwell.constants import RB87_MASS, TWO_PI, kinetic_coefficient
from splitwell.errors import GridTooSmallError, ParityError, SGridTooCoarseError
from splitwell.spectrum import (
    EigenBundle,
    gauge_fix,
    level_spacings,
    parity_of,
    solve_stationary,
    sweep_spectrum,
)
from splitwell.trap import PotentialCurve, potential_curve, symmetric_grid

C = kinetic_coefficient(RB87_MASS)  # ħ/2m in µm² rad/s


def harmonic_curve(omega, half_width=8.0, n=2048, s=0.0):
    x = symmetric_grid(half_width, n)
    return PotentialCurve(s=s, x=x, U=omega**2 * x**2 / (4 * C), mass=RB87_MASS)


# --- oracles ----------------------------------------------------------------


def test_harmonic_oscillator_levels():
    w = TWO_PI * 190.0
    es = solve_stationary(harmonic_curve(w), 4)
    exact = w * (np.arange(4) + 0.5)
    np.testing.assert_allclose(es.energies, exact, rtol=1e-3)


def test_square_well_levels():
    x = symmetric_grid(5.0, 2048)
    curve = PotentialCurve(s=0.0, x=x, U=np.zeros_like(x), mass=RB87_MASS)
    es = solve_stationary(curve, 6, check_boundary=False)
    a = (x.size + 1) * (x[1] - x[0])  # walls one step outside the grid
    exact = C * (np.pi * (np.arange(6) + 1) / a) ** 2
    np.testing.assert_allclose(es.energies, exact, rtol=1e-2)
    # the (n+1)² law itself, independent of the wall position
    np.testing.assert_allclose(es.energies / es.energies[0], (np.arange(6) + 1) ** 2, rtol=1e-2)


def test_boundary_amplitude_is_enforced():
    with pytest.raises(GridTooSmallError):
        solve_stationary(harmonic_curve(TWO_PI * 190.0, half_width=2.0, n=512), 4)


def test_state_count_limit():
    with pytest.raises(ValueError):
        solve_stationary(harmonic_curve(TWO_PI * 190.0), 13)


# --- eigenset invariants ----------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(s=st.floats(0.0, 1.0))
def test_orthonormality_and_parity(s):
    from conftest import calibrated_config
    es = solve_stationary(potential_curve(calibrated_config(), s, symmetric_grid(8.0, 768)), 6)
    np.testing.assert_allclose(es.overlap_matrix(), np.eye(6), atol=1e-8)
    for k, phi in enumerate(es.states):
        sign = 1.0 if es.parity[k] == "even" else -1.0
        assert np.max(np.abs(phi - sign * phi[::-1])) < 1e-6
    assert es.parity == ["even", "odd"] * 3
    assert np.all(np.diff(es.energies) >= 0) and es.energies[0] < es.energies[1]


def test_parity_of_examples():
    x = symmetric_grid(8.0, 401)
    g = np.exp(-x**2)
    assert parity_of(g, x) == "even"
    assert parity_of(x * g, x) == "odd"
    with pytest.raises(ParityError):
        parity_of(np.exp(-(x - 3.0) ** 2), x)


def test_sign_convention(bundle):
    es = bundle.sets[0]
    c = es.x.size // 2
    for k, phi in enumerate(es.states):
        if es.parity[k] == "even":
            assert phi[c] > 0
        else:
            assert phi[c + 1] - phi[c] > 0


# --- paper potential ----------------------------------------------------------


def test_s0_levels_nearly_equally_spaced(bundle):
    E = bundle.sets[0].energies[:4]
    d = np.diff(E)
    assert np.max(np.abs(d / d.mean() - 1.0)) < 0.10


def test_s1_degenerate_pairs(bundle):
    E = bundle.sets[-1].energies
    gap = E[2] - E[0]
    assert E[1] - E[0] < 0.02 * gap
    assert E[3] - E[2] < 0.02 * gap
    w1 = level_spacings(bundle.sets[-1])["pair"]
    assert w1 == pytest.approx(TWO_PI * 240.0, rel=0.15)
    # E_2k ≈ E_2k+1 ≈ ħ ω (k + ½)
    assert E[0] == pytest.approx(0.5 * w1, rel=0.15)
    assert E[2] == pytest.approx(1.5 * w1, rel=0.15)


def test_parity_labels_constant_along_s(bundle):
    for es in bundle.sets:
        assert es.parity[:4] == ["even", "odd", "even", "odd"]


def test_gauge_continuity(bundle):
    assert np.all(bundle.adjacent_overlaps() > 0)


def test_gauge_fix_idempotent(bundle):
    sets = [spectrum.EigenSet(es.s, es.x, es.energies, es.states.copy(), es.parity, es.U, es.U_min)
            for es in bundle.sets]
    sets[5].states[2] *= -1
    assert gauge_fix(sets) != []
    assert gauge_fix(sets) == []


def test_pair_gap_closes_monotonically(bundle):
    s = bundle.s_grid
    E = bundle.energies
    sel = s >= 0.5
    gap = (E[:, 1] - E[:, 0])[sel]
    assert np.all(np.diff(gap) <= 1e-9 * gap[0])


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_discretization_convergence(cfg, s):
    # default grid versus twice as many points
    curve = potential_curve(cfg, s)
    assert curve.x.size == 4096 and curve.x[-1] == 15.0
    e1 = solve_stationary(curve, 6).energies
    e2 = solve_stationary(potential_curve(cfg, s, symmetric_grid(15.0, 8192)), 6).energies
    assert np.max(np.abs(e2 / e1 - 1.0)) < 1e-4


def test_richardson_consistent_convergence(cfg):
    E = [solve_stationary(potential_curve(cfg, 0.0, symmetric_grid(15.0, n)), 1).energies[0]
         for n in (512, 1024, 2048)]
    assert abs(E[0] - E[1]) > abs(E[1] - E[2])


# --- sweep machinery ----------------------------------------------------------


def test_coarse_grid_is_refined(cfg, caplog):
    with caplog.at_level(logging.INFO, logger="splitwell.spectrum"):
        b = sweep_spectrum(cfg, [0.0, 0.5, 1.0], 4, symmetric_grid(8.0, 384))
    assert b.refinements
    assert any("refining" in r.message for r in caplog.records)
    assert np.all(np.abs(b.adjacent_overlaps()) >= 0.9)


def test_refinement_cap_raises(cfg, monkeypatch):
    monkeypatch.setattr(spectrum, "MAX_REFINE_DEPTH", 0)
    with pytest.raises(SGridTooCoarseError):
        sweep_spectrum(cfg, [0.0, 0.5, 1.0], 4, symmetric_grid(8.0, 384))


def test_parallel_sweep_matches_serial(cfg):
    s = np.linspace(0.0, 1.0, 11)
    x = symmetric_grid(8.0, 256)
    a = sweep_spectrum(cfg, s, 4, x, workers=1)
    b = sweep_spectrum(cfg, s, 4, x, workers=3)
    np.testing.assert_array_equal(a.energies, b.energies)
    for ea, eb in zip(a.sets, b.sets):
        np.testing.assert_array_equal(ea.states, eb.states)


def test_bundle_roundtrip(cfg, tmp_path):
    b = sweep_spectrum(cfg, np.linspace(0.0, 1.0, 6), 3, symmetric_grid(8.0, 128))
    b.save(tmp_path / "bundle")
    text = (tmp_path / "bundle" / "eigs_s0.csv").read_text().splitlines()
    assert text[0].startswith("# E_over_hbar_rad_s: ")
    assert text[1].startswith("x_um,phi0,phi1,phi2")
    c = EigenBundle.load(tmp_path / "bundle")
    np.testing.assert_array_equal(c.s_grid, b.s_grid)
    np.testing.assert_array_equal(c.energies, b.energies)
    for ea, eb in zip(c.sets, b.sets):
        np.testing.assert_array_equal(ea.states, eb.states)
