"""Non-adiabatic couplings and first-order transition amplitudes.

For a ramp s(t) on [0, T] the first-order amplitude to leave state i for
state f is

    c_f(T) = ∫₀ᵀ exp(i ∫₀ᵗ Δω dt') a(s(t)) ṡ(t) dt,

with a(s) = <φ_f|d/ds|φ_i> and Δω = ω_f - ω_i. Couplings come from finite
differences on a gauge-fixed :class:`~splitwell.spectrum.EigenBundle`; a
Hellmann–Feynman estimate serves as an independent cross-check.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .constants import TWO_PI
from .errors import AccuracyError, GaugeError
from .quadrature import cumulative_phase, phase_integral
from .ramps import Ramp
from .spectrum import MIN_ADJACENT_OVERLAP, EigenBundle

log = logging.getLogger(__name__)

CROSS_CHECK_MIN_GAP = TWO_PI * 5.0  # rad/s
CROSS_CHECK_TOLERANCE = 0.2
COUPLING_ZERO = 1e-12  # below this both estimators are roundoff (parity-forbidden pairs)
PERTURBATIVE_LIMIT = 0.1


class CouplingMismatchWarning(UserWarning):
    """Finite-difference and Hellmann–Feynman couplings disagree."""


# --- couplings --------------------------------------------------------------


def _check_gauge(bundle: EigenBundle, states, js) -> None:
    ov = bundle.adjacent_overlaps()
    for j in js:
        for k in states:
            for m in (j - 1, j):
                if 0 <= m < ov.shape[0] and ov[m, k] < MIN_ADJACENT_OVERLAP:
                    raise GaugeError(
                        f"state {k} overlaps its neighbour by {ov[m, k]:.3f} between "
                        f"s={bundle.s_grid[m]:.6g} and s={bundle.s_grid[m + 1]:.6g}",
                        diagnostics={"state": k, "s_index": m})


def _derivative_weights(s: np.ndarray, j: int) -> tuple[list[int], np.ndarray]:
    """Three-point, second-order d/ds weights at grid index j (one-sided at the ends)."""
    n = s.size
    if n < 3:
        raise ValueError("need at least three s-points for derivatives")
    if j == 0:
        idx = [0, 1, 2]
    elif j == n - 1:
        idx = [n - 3, n - 2, n - 1]
    else:
        idx = [j - 1, j, j + 1]
    x0, x1, x2 = s[idx]
    t = s[j]
    # derivative of the Lagrange basis polynomials at t
    w = np.array([
        ((t - x1) + (t - x2)) / ((x0 - x1) * (x0 - x2)),
        ((t - x0) + (t - x2)) / ((x1 - x0) * (x1 - x2)),
        ((t - x0) + (t - x1)) / ((x2 - x0) * (x2 - x1)),
    ])
    return idx, w


def _fd_coupling(bundle: EigenBundle, i: int, f: int, j: int) -> float:
    idx, w = _derivative_weights(bundle.s_grid, j)
    dphi = sum(wk * bundle.sets[m].states[i] for m, wk in zip(idx, w))
    es = bundle.sets[j]
    return float(np.sum(es.states[f] * dphi) * es.dx)


def hellmann_feynman_coupling(bundle: EigenBundle, i: int, f: int, j: int) -> float:
    """<φ_f|∂U/∂s|φ_i> / (ω_i - ω_f) at grid index j."""
    idx, w = _derivative_weights(bundle.s_grid, j)
    dU = sum(wk * bundle.sets[m].U for m, wk in zip(idx, w))
    es = bundle.sets[j]
    num = np.sum(es.states[f] * dU * es.states[i]) * es.dx
    return float(num / (es.energies[i] - es.energies[f]))


def coupling_coefficient(bundle: EigenBundle, i: int, f: int, s: float) -> float:
    """a_if(s) = <φ_f(s)|d/ds φ_i(s)> on a grid point ``s`` of the bundle.

    Uses the three-point derivative on the local (possibly non-uniform)
    spacing. When the gap exceeds 2π·5 Hz the value is compared with the
    Hellmann–Feynman estimate and a :class:`CouplingMismatchWarning` is
    issued if they differ by more than 20 %.
    """
    j = bundle.index_of(s)
    _check_gauge(bundle, (i, f), [j])
    a = _fd_coupling(bundle, i, f, j)
    es = bundle.sets[j]
    gap = es.energies[f] - es.energies[i]
    if abs(gap) > CROSS_CHECK_MIN_GAP:
        hf = hellmann_feynman_coupling(bundle, i, f, j)
        scale = max(abs(a), abs(hf))
        if scale > COUPLING_ZERO and abs(a - hf) > CROSS_CHECK_TOLERANCE * scale:
            warnings.warn(
                f"coupling a_{i}{f}(s={s:.4g}): finite difference {a:.6g} vs "
                f"Hellmann-Feynman {hf:.6g}", CouplingMismatchWarning, stacklevel=2)
    return a


@dataclass(frozen=True)
class CouplingTable:
    """a_if(s) and Δω_if(s) = ω_f - ω_i (rad/s) on an s-grid."""

    i: int
    f: int
    s: np.ndarray
    a: np.ndarray
    domega: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.s, float)
        if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0):
            raise ValueError("coupling table needs a strictly increasing s-grid")
        if np.asarray(self.a).shape != s.shape or np.asarray(self.domega).shape != s.shape:
            raise ValueError("a and domega must match the s-grid")
        if s.size >= 3:
            object.__setattr__(self, "_a", CubicSpline(s, self.a))
            object.__setattr__(self, "_w", CubicSpline(s, self.domega))
        else:
            object.__setattr__(self, "_a", lambda v: np.interp(v, s, self.a))
            object.__setattr__(self, "_w", lambda v: np.interp(v, s, self.domega))

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.f)

    def a_at(self, s):
        return self._a(np.clip(s, self.s[0], self.s[-1]))

    def domega_at(self, s):
        return self._w(np.clip(s, self.s[0], self.s[-1]))

    def reversed_pair(self) -> "CouplingTable":
        """Table for (f, i): a_fi = -a_if and Δω_fi = -Δω_if."""
        return CouplingTable(self.f, self.i, self.s, -np.asarray(self.a), -np.asarray(self.domega),
                             dict(self.meta))

    @classmethod
    def constant(cls, a: float, domega: float, i: int = 0, f: int = 2, n: int = 11):
        s = np.linspace(0.0, 1.0, n)
        return cls(i, f, s, np.full(n, float(a)), np.full(n, float(domega)))


def build_coupling_table(bundle: EigenBundle, i: int, f: int,
                         cross_check: bool = True) -> CouplingTable:
    """Tabulate a_if and Δω_if over the bundle's s-grid."""
    n = bundle.n_states
    if not (0 <= i < n and 0 <= f < n) or i == f:
        raise ValueError(f"invalid transition ({i}, {f}) for {n} states")
    _check_gauge(bundle, (i, f), range(len(bundle.s_grid)))
    js = range(len(bundle.s_grid))
    a = np.array([_fd_coupling(bundle, i, f, j) for j in js])
    E = bundle.energies
    dw = E[:, f] - E[:, i]
    meta = {}
    if cross_check:
        worst = 0.0
        worst_s = None
        for j in js:
            if abs(dw[j]) <= CROSS_CHECK_MIN_GAP:
                continue
            hf = hellmann_feynman_coupling(bundle, i, f, j)
            scale = max(abs(a[j]), abs(hf))
            if scale < max(1e-9 * np.max(np.abs(a)), COUPLING_ZERO):
                continue
            rel = abs(a[j] - hf) / scale
            if rel > worst:
                worst, worst_s = rel, bundle.s_grid[j]
        meta["max_cross_check_deviation"] = float(worst)
        if worst > CROSS_CHECK_TOLERANCE:
            warnings.warn(
                f"a_{i}{f}: finite-difference and Hellmann-Feynman couplings differ by "
                f"{worst:.0%} at s={worst_s:.4g}", CouplingMismatchWarning, stacklevel=2)
    return CouplingTable(i, f, np.array(bundle.s_grid, float), a, dw, meta)


def write_coupling_csv(path, tables: list[CouplingTable]) -> None:
    """Columns ``s, a_if..., dOmega_if_rad_s...`` for tables on a common s-grid."""
    s = tables[0].s
    for t in tables[1:]:
        if not np.array_equal(t.s, s):
            raise ValueError("tables must share the s-grid")
    header = (["s"] + [f"a_{t.i}{t.f}" for t in tables]
              + [f"dOmega_{t.i}{t.f}_rad_s" for t in tables])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, sj in enumerate(s):
            row = [sj] + [t.a[j] for t in tables] + [t.domega[j] for t in tables]
            w.writerow([repr(float(v)) for v in row])


# --- transition amplitudes --------------------------------------------------


@dataclass(frozen=True)
class TransitionResult:
    """First-order amplitude c_f(T) for one ramp duration."""

    i: int
    f: int
    T: float
    amplitude: complex
    ramp_kind: str
    samples: int
    samples_per_period: float
    refinements: int
    meta: dict = field(default_factory=dict)

    @property
    def probability(self) -> float:
        return abs(self.amplitude) ** 2

    @property
    def perturbative(self) -> bool:
        """False when P exceeds 0.1 and first order is no longer trustworthy."""
        return self.probability <= PERTURBATIVE_LIMIT


def _amplitude_on_grid(table: CouplingTable, ramp: Ramp, n: int) -> complex:
    u = np.linspace(0.0, 1.0, n + 1)
    s = ramp.s_of_u(u)
    g = table.a_at(s) * ramp.dsdu_of_u(u)
    phi = ramp.T * cumulative_phase(u, table.domega_at(s))
    return phase_integral(u, g, phi)


def _initial_samples(table: CouplingTable, ramp: Ramp, per_period: int, per_cell: int) -> int:
    # resolve both the accumulated phase and the s-grid cells the ramp crosses
    probe = np.linspace(0.0, 1.0, 4001)
    s = ramp.s_of_u(probe)
    wmax = float(np.max(np.abs(table.domega_at(s))))
    n_phase = per_period * wmax * ramp.T / TWO_PI
    cell = float(np.min(np.diff(table.s)))
    vmax = float(np.max(np.abs(ramp.dsdu_of_u(probe))))
    n_cells = per_cell * vmax / cell
    return int(max(64, np.ceil(n_phase), np.ceil(n_cells)))


def transition_amplitude(table: CouplingTable, ramp: Ramp, *, rtol: float = 1e-7,
                         atol: float = 1e-12, per_period: int = 20, per_cell: int = 10,
                         max_refinements: int = 12) -> TransitionResult:
    """First-order amplitude c_f(T) for ``ramp``.

    The normalized-time grid starts with at least ``per_period`` samples per
    2π of accumulated phase and ``per_cell`` samples per s-grid cell, then is
    halved until |Δc| <= max(rtol·|c|, atol). Raises :class:`AccuracyError`
    if that takes more than ``max_refinements`` halvings.
    """
    if not ramp.rising:
        raise ValueError("transition amplitudes need a ramp rising from s = 0 to s = 1")
    n = _initial_samples(table, ramp, per_period, per_cell)
    c = _amplitude_on_grid(table, ramp, n)
    for k in range(1, max_refinements + 1):
        n *= 2
        c_new = _amplitude_on_grid(table, ramp, n)
        done = abs(c_new - c) <= max(rtol * abs(c_new), atol)
        c = c_new
        if done:
            break
    else:
        raise AccuracyError(
            f"amplitude not converged after {max_refinements} refinements",
            diagnostics={"T": ramp.T, "samples": n, "last_change": abs(c_new - c)})
    total_phase = ramp.T * float(np.trapezoid(
        np.abs(table.domega_at(ramp.s_of_u(np.linspace(0, 1, 2001)))), dx=1 / 2000))
    per = n / max(total_phase / TWO_PI, 1e-300)
    res = TransitionResult(table.i, table.f, ramp.T, complex(c), ramp.kind, n, per, k)
    if not res.perturbative:
        log.info("P_%d%d(T=%.4g s) = %.3g is outside first-order validity",
                 table.i, table.f, ramp.T, res.probability)
    return res


def sweep_duration(table: CouplingTable, ramp_family, T_list, **kwargs) -> list[TransitionResult]:
    """Transition results for each duration in ``T_list`` (seconds).

    ``ramp_family`` is either a :class:`Ramp`, stretched to each T, or a
    callable returning the ramp for a given T.
    """
    T_list = [float(T) for T in T_list]
    if not T_list or any(T <= 0 for T in T_list) or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be positive and strictly ascending")
    make = ramp_family.rescaled if isinstance(ramp_family, Ramp) else ramp_family
    return [transition_amplitude(table, make(T), **kwargs) for T in T_list]


def write_excitation_csv(path, T_list, results: dict) -> None:
    """Write ``T_ms, P_i_f..., flag_perturbative`` rows.

    ``results`` maps (i, f) to the list returned by :func:`sweep_duration`.
    The flag is 1 when any listed probability exceeds the first-order limit.
    """
    pairs = list(results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T_ms"] + [f"P_{i}_{f}" for i, f in pairs] + ["flag_perturbative"])
        for k, T in enumerate(T_list):
            rs = [results[p][k] for p in pairs]
            flag = int(any(not r.perturbative for r in rs))
            w.writerow([repr(float(T) * 1e3)] + [repr(r.probability) for r in rs] + [str(flag)])


# --- stray-gradient dephasing -----------------------------------------------


def gradient_dephasing(separation_um: float, gradient_G_per_cm: float, T_sense: float,
                       scale_hz_per_G: float = 1.4e6) -> float:
    """Relative phase (rad) from a field gradient across separated wells.

    ΔΦ = 2π·scale·b_x·d·T with the energy scale given as U/h per gauss.
    """
    vals = (separation_um, gradient_G_per_cm, T_sense, scale_hz_per_G)
    if any(not np.isfinite(v) or v < 0 for v in vals):
        raise ValueError("dephasing inputs must be finite and non-negative")
    gradient_G_per_um = gradient_G_per_cm * 1e-4
    return TWO_PI * scale_hz_per_G * gradient_G_per_um * separation_um * T_sense
