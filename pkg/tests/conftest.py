"""Shared fixtures: the calibrated trap, its eigenbundle and the derived tables."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import pytest

from splitwell.adiabatic import build_coupling_table
from splitwell.optimizer import optimize_ramp
from splitwell.spectrum import sweep_spectrum
from splitwell.tdse import PotentialTable, tdse_grid
from splitwell.trap import MajoranaWarning, TrapConfig

ROOT = Path(__file__).resolve().parents[1]
CALIBRATED = ROOT / "configs" / "calibrated.yaml"
PAPER = ROOT / "configs" / "paper.yaml"

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def calibrated_config() -> TrapConfig:
    from splitwell.trap import load_config
    return load_config(CALIBRATED)


@pytest.fixture(scope="session")
def cfg() -> TrapConfig:
    return calibrated_config()


@pytest.fixture(scope="session")
def bundle(cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MajoranaWarning)
        return sweep_spectrum(cfg, np.linspace(0.0, 1.0, 201), 6, tdse_grid())


@pytest.fixture(scope="session")
def t02(bundle):
    return build_coupling_table(bundle, 0, 2)


@pytest.fixture(scope="session")
def t13(bundle):
    return build_coupling_table(bundle, 1, 3)


@pytest.fixture(scope="session")
def t01(bundle):
    return build_coupling_table(bundle, 0, 1, cross_check=False)


@pytest.fixture(scope="session")
def optimized(t02):
    return optimize_ramp(t02)


@pytest.fixture(scope="session")
def potential_table(bundle, cfg):
    return PotentialTable.from_bundle(bundle, cfg.atom_mass)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


# --- long propagations shared by the TDSE tests and the acceptance suite -----

ORACLE_LINEAR_T = (0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10)
ORACLE_OPTIMIZED_T = (0.02, 0.03)
FRINGE_PHASES = np.linspace(0.0, 2.0 * np.pi, 9)


@pytest.fixture(scope="session")
def oracle_comparisons(bundle, potential_table, t02, t13, optimized):
    """Exact populations against first-order probabilities on a fixed set of ramps.

    Even and odd states never mix in the symmetric trap, so a single run
    from (φ₀ + φ₁)/√2 gives both transitions: P₀₂ = 2|<φ₂|ψ>|² and
    P₁₃ = 2|<φ₃|ψ>|².
    """
    from splitwell.adiabatic import transition_amplitude
    from splitwell.ramps import linear_ramp
    from splitwell.tdse import WavefunctionState, propagate

    s0, s1 = bundle.sets[0], bundle.sets[-1]
    psi0 = WavefunctionState.from_real((s0.states[0] + s0.states[1]) / np.sqrt(2.0), s0.x)
    ramps = [("linear", T, linear_ramp(T)) for T in ORACLE_LINEAR_T]
    ramps += [("optimized", T, optimized.ramp(T)) for T in ORACLE_OPTIMIZED_T]
    rows = []
    for kind, T, ramp in ramps:
        out = propagate(potential_table, ramp, psi0)
        amps = s1.states @ out.psi * s1.dx
        for table, f in ((t02, 2), (t13, 3)):
            rows.append({
                "ramp": kind, "T": T, "pair": table.pair,
                "tdse": float(2.0 * abs(amps[f]) ** 2),
                "first_order": transition_amplitude(table, ramp).probability,
                "norm": out.norm,
            })
    return rows


@pytest.fixture(scope="session")
def fringe_scan(potential_table, optimized):
    """Full interferometer cycles with the optimized 30 ms ramps over nine phases."""
    from splitwell.tdse import interferometer_scan
    return interferometer_scan(potential_table, optimized.ramp(0.03), FRINGE_PHASES)
