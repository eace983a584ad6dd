"""Time-dependent Schrödinger propagation in U(x; s(t)).

Crank–Nicolson on the same central-difference grid as the eigensolver:
unconditionally stable, second order in dt and unitary up to round-off.
The potential is shifted by its instantaneous minimum at every step, which
changes only the global phase but keeps the propagated energies small.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import get_lapack_funcs

from .constants import kinetic_coefficient
from .errors import PropagatorError
from .ramps import Ramp
from .spectrum import EigenBundle, EigenSet, solve_stationary
from .trap import PotentialCurve, TrapConfig, potential_curve, symmetric_grid

log = logging.getLogger(__name__)

NORM_TOL = 1e-10
DRIFT_TOL = 1e-8  # per 1000 steps
DRIFT_WINDOW = 1000
STABILITY_FACTOR = 50.0
BASIS_RESIDUAL_LIMIT = 0.01


class BasisWarning(UserWarning):
    """Projection leaves more than 1 % of the norm outside the basis."""


def tdse_grid(half_width: float = 8.0, n: int = 768) -> np.ndarray:
    """Default grid for propagation and its projection bases."""
    return symmetric_grid(half_width, n)


# --- potential on an s-grid -------------------------------------------------


@dataclass
class PotentialTable:
    """U(x; s) on a fixed grid, interpolated in s by cubic splines.

    Stored as the shape ``V = U - min_x U`` and the offset ``U_min(s)``;
    energies in rad/s.
    """

    x: np.ndarray
    s_grid: np.ndarray
    V: np.ndarray  # (n_s, n_x)
    U_min: np.ndarray  # (n_s,)
    mass: float

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, float)
        if self.s_grid.size >= 2:
            self._V = CubicSpline(self.s_grid, self.V, axis=0)
        else:
            self._V = None

    @classmethod
    def from_curves(cls, curves: list[PotentialCurve]) -> "PotentialTable":
        U = np.array([c.U for c in curves])
        Umin = U.min(axis=1)
        return cls(curves[0].x, np.array([c.s for c in curves]), U - Umin[:, None], Umin,
                   curves[0].mass)

    @classmethod
    def from_config(cls, cfg: TrapConfig, x_grid=None, s_grid=None) -> "PotentialTable":
        x = tdse_grid() if x_grid is None else np.asarray(x_grid, float)
        s = np.linspace(0.0, 1.0, 201) if s_grid is None else np.asarray(s_grid, float)
        return cls.from_curves([potential_curve(cfg, float(sj), x) for sj in s])

    @classmethod
    def from_bundle(cls, bundle: EigenBundle, mass: float | None = None) -> "PotentialTable":
        from .constants import RB87_MASS
        U = np.array([es.U for es in bundle.sets])
        Umin = U.min(axis=1)
        return cls(bundle.x, bundle.s_grid, U - Umin[:, None], Umin, mass or RB87_MASS)

    @classmethod
    def static(cls, x, U, mass: float, s: float = 0.0) -> "PotentialTable":
        U = np.asarray(U, float)
        return cls(np.asarray(x, float), np.array([s]), (U - U.min())[None, :],
                   np.array([U.min()]), mass)

    def shape_at(self, s: float) -> np.ndarray:
        """U(x; s) - min_x U(x; s)."""
        if self._V is None:
            return self.V[0]
        # Horner on the spline's piecewise coefficients; cheaper than __call__
        # for the single-s evaluations made at every time step
        knots, c = self._V.x, self._V.c
        s = min(max(float(s), knots[0]), knots[-1])
        i = min(max(int(np.searchsorted(knots, s)) - 1, 0), knots.size - 2)
        z = s - knots[i]
        return ((c[0, i] * z + c[1, i]) * z + c[2, i]) * z + c[3, i]

    def curve(self, s: float) -> PotentialCurve:
        if self._V is None:
            return PotentialCurve(s=s, x=self.x, U=self.V[0] + self.U_min[0], mass=self.mass)
        Umin = float(np.interp(s, self.s_grid, self.U_min))
        return PotentialCurve(s=s, x=self.x, U=self.shape_at(s) + Umin, mass=self.mass)

    def eigenset(self, s: float, n_states: int = 6) -> EigenSet:
        return solve_stationary(self.curve(s), n_states)

    @property
    def max_shape(self) -> float:
        return float(np.max(self.V))

    def stability_dt(self) -> float:
        """Largest admissible step, 1 / (50 · max(U - U_min)) in s."""
        return 1.0 / (STABILITY_FACTOR * self.max_shape)


# --- states -----------------------------------------------------------------


@dataclass
class WavefunctionState:
    x: np.ndarray
    psi: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def norm(self) -> float:
        return float(np.vdot(self.psi, self.psi).real * self.dx)

    @classmethod
    def from_real(cls, phi, x, t: float = 0.0) -> "WavefunctionState":
        return cls(np.asarray(x, float), np.asarray(phi, complex).copy(), t)

    def overlap(self, other) -> complex:
        other = other.psi if isinstance(other, WavefunctionState) else np.asarray(other)
        return complex(np.vdot(self.psi, other) * self.dx)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_um", "re_psi", "im_psi"])
            for xi, p in zip(self.x, self.psi):
                w.writerow([repr(float(xi)), repr(float(p.real)), repr(float(p.imag))])


# --- propagation ------------------------------------------------------------


class _CrankNicolson:
    def __init__(self, x: np.ndarray, mass: float, dt: float):
        dx = float(x[1] - x[0])
        n = x.size
        self.hk = 0.5j * dt * kinetic_coefficient(mass) / dx**2
        self.h = 0.5j * dt
        (self.gtsv,) = get_lapack_funcs(("gtsv",), (np.zeros(1, complex),))
        self.off = np.full(n - 1, -self.hk)
        self._dl = np.empty(n - 1, complex)
        self._du = np.empty(n - 1, complex)
        self._d = np.empty(n, complex)
        self._b = np.empty(n, complex)

    def step(self, psi: np.ndarray, V: np.ndarray) -> np.ndarray:
        d, b, hk = self._d, self._b, self.hk
        np.multiply(V, self.h, out=d)
        np.add(d, 2.0 * hk, out=d)
        # (1 - i dt/2 H) psi
        rhs = psi - d * psi
        rhs[1:] += hk * psi[:-1]
        rhs[:-1] += hk * psi[1:]
        np.add(d, 1.0, out=b)
        self._dl[:] = self.off
        self._du[:] = self.off
        _, _, _, out, info = self.gtsv(self._dl, b, self._du, rhs, overwrite_dl=True,
                                       overwrite_d=True, overwrite_du=True, overwrite_b=True)
        if info != 0:
            raise PropagatorError(f"tridiagonal solve failed (info={info})")
        return out


def _evolve(table: PotentialTable, psi0: WavefunctionState, duration: float, dt: float,
            s_of_t, extra=None, snapshot_every: int | None = None):
    if not np.allclose(psi0.x, table.x, rtol=0, atol=1e-9 * abs(table.x[1] - table.x[0])):
        raise ValueError("state and potential must share the grid")
    n_steps = max(1, math.ceil(duration / dt - 1e-9))
    h = duration / n_steps
    cn = _CrankNicolson(table.x, table.mass, h)
    psi = psi0.psi.astype(complex).copy()
    dx = psi0.dx
    norm0 = np.vdot(psi, psi).real * dx
    last = norm0
    snaps = []
    s_chunk = None
    for k in range(n_steps):
        j = k % DRIFT_WINDOW
        if j == 0:
            # midpoint s for the next window of steps in one vectorized call
            mids = psi0.t + (np.arange(k, min(k + DRIFT_WINDOW, n_steps)) + 0.5) * h
            s_chunk = np.broadcast_to(np.asarray(s_of_t(mids), float), mids.shape)
        V = table.shape_at(s_chunk[j])
        if extra is not None:
            V = V + extra
        psi = cn.step(psi, V)
        if (k + 1) % DRIFT_WINDOW == 0 or k == n_steps - 1:
            nrm = np.vdot(psi, psi).real * dx
            if abs(nrm - last) > DRIFT_TOL:
                raise PropagatorError(
                    f"norm drift {nrm - last:.2e} over {DRIFT_WINDOW} steps",
                    diagnostics={"step": k + 1, "norm": nrm})
            last = nrm
        if snapshot_every and (k + 1) % snapshot_every == 0:
            snaps.append(WavefunctionState(table.x, psi.copy(), psi0.t + (k + 1) * h))
    out = WavefunctionState(table.x, psi, psi0.t + duration,
                            {"steps": n_steps, "dt": h, "norm_change": float(last - norm0)})
    return out, snaps


def _resolve_table(potential, x) -> PotentialTable:
    if isinstance(potential, PotentialTable):
        return potential
    if isinstance(potential, EigenBundle):
        return PotentialTable.from_bundle(potential)
    if isinstance(potential, TrapConfig):
        return PotentialTable.from_config(potential, x)
    raise TypeError("potential must be a PotentialTable, EigenBundle or TrapConfig")


def _check_dt(table: PotentialTable, dt):
    bound = table.stability_dt()
    if dt is None:
        return bound
    if not (dt > 0):
        raise ValueError("dt must be positive")
    if dt > bound * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} s exceeds the step bound {bound:.3g} s")
    return float(dt)


def propagate(potential, ramp: Ramp, psi0: WavefunctionState, dt: float | None = None,
              snapshot_every: int | None = None):
    """Propagate ``psi0`` through ``ramp``; the potential follows s(t) at step midpoints.

    ``potential`` is a :class:`PotentialTable` (or an EigenBundle / TrapConfig
    from which one is built on ``psi0``'s grid). ``dt`` defaults to the step
    bound 1/(50 max(U - U_min)). Returns the final state, or ``(state,
    snapshots)`` when ``snapshot_every`` is given.
    """
    table = _resolve_table(potential, psi0.x)
    if abs(psi0.norm - 1.0) > NORM_TOL:
        raise ValueError(f"initial state not normalized (norm = {psi0.norm:.12f})")
    h = _check_dt(table, dt)
    start = psi0.t

    def s_of_t(t):
        return ramp.s(t - start)

    out, snaps = _evolve(table, psi0, ramp.T, h, s_of_t, snapshot_every=snapshot_every)
    return (out, snaps) if snapshot_every else out


def propagate_static(potential, s: float, psi0: WavefunctionState, duration: float,
                     dt: float | None = None, extra=None) -> WavefunctionState:
    """Propagate for ``duration`` at fixed s, optionally adding ``extra`` (rad/s) to U."""
    table = _resolve_table(potential, psi0.x)
    h = _check_dt(table, dt)
    if duration <= 0:
        return WavefunctionState(psi0.x, psi0.psi.copy(), psi0.t)
    return _evolve(table, psi0, duration, h, lambda t: s, extra=extra)[0]


# --- projections ------------------------------------------------------------


@dataclass
class Populations:
    P: np.ndarray
    residual: float

    def __getitem__(self, k):
        return self.P[k]

    def __len__(self):
        return len(self.P)


def project_populations(psi: WavefunctionState, eigenset: EigenSet) -> Populations:
    """P_k = |<φ_k|ψ>|² and the residual 1 - Σ P_k."""
    if psi.x.shape != eigenset.x.shape or not np.allclose(psi.x, eigenset.x):
        raise ValueError("state and eigenset must share the grid")
    amps = eigenset.states @ psi.psi * eigenset.dx
    P = np.abs(amps) ** 2
    residual = float(psi.norm - P.sum())
    if residual > BASIS_RESIDUAL_LIMIT:
        warnings.warn(f"{residual:.3f} of the norm lies outside the {eigenset.n_states}-state basis",
                      BasisWarning, stacklevel=2)
    return Populations(P, residual)


# --- interferometer ---------------------------------------------------------


@dataclass(frozen=True)
class Hold:
    """Hold stage at s = 1 with a relative phase Δφ on the x > 0 well.

    ``mode="imprint"`` multiplies ψ(x > 0) by e^{iΔφ} (e^{iΔφ/2} at x = 0)
    at the start of the hold; ``mode="offset"`` instead lowers U on x > 0 by
    Δφ/duration for the whole hold, which accumulates the same phase.
    """

    dphi: float = 0.0
    duration: float = 0.0
    mode: str = "imprint"

    def __post_init__(self):
        if self.mode not in ("imprint", "offset"):
            raise ValueError("hold mode must be 'imprint' or 'offset'")
        if self.duration < 0:
            raise ValueError("hold duration must be non-negative")
        if self.mode == "offset" and self.duration <= 0:
            raise ValueError("offset mode needs a positive hold duration")


def _right_well_mask(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.where(x == 0, 0.5, 0.0))


@dataclass
class CycleResult:
    dphi: float
    populations: np.ndarray
    residual: float
    final: WavefunctionState = field(repr=False)

    @property
    def leakage(self) -> float:
        """Population outside the two interferometer modes, 1 - P0 - P1."""
        return float(1.0 - self.populations[0] - self.populations[1])


def interferometer_cycle(potential, split_ramp: Ramp, hold: Hold, merge_ramp: Ramp | None = None,
                         psi0: WavefunctionState | None = None, basis: EigenSet | None = None,
                         dt: float | None = None, n_states: int = 6) -> CycleResult:
    """Split, imprint a relative phase, merge, and project on the s = 0 basis.

    ``merge_ramp`` defaults to the time-reversed ``split_ramp``; ``psi0`` to
    the s = 0 ground state.
    """
    table = _resolve_table(potential, psi0.x if psi0 is not None else tdse_grid())
    basis = basis or table.eigenset(0.0, n_states)
    if psi0 is None:
        psi0 = WavefunctionState.from_real(basis.states[0], basis.x)
    merge_ramp = merge_ramp or split_ramp.reversed()
    if not split_ramp.rising or merge_ramp.rising:
        raise ValueError("split must rise from s = 0 and merge must fall back to s = 0")

    psi = propagate(table, split_ramp, psi0, dt)
    return _merge_and_project((table, psi, hold, merge_ramp, basis, dt))


def _merge_and_project(args):
    table, psi, hold, merge_ramp, basis, dt = args
    mask = _right_well_mask(table.x)
    if hold.mode == "imprint":
        psi = WavefunctionState(psi.x, psi.psi * np.exp(1j * hold.dphi * mask), psi.t)
        psi = propagate_static(table, 1.0, psi, hold.duration, dt)
    else:
        # e^{-i δ t} with δ = -Δφ / duration on the right well
        extra = -(hold.dphi / hold.duration) * mask
        psi = propagate_static(table, 1.0, psi, hold.duration, dt, extra=extra)
    psi = propagate(table, merge_ramp, psi, dt)
    pops = project_populations(psi, basis)
    return CycleResult(float(hold.dphi), pops.P, pops.residual, psi)


def interferometer_scan(potential, split_ramp: Ramp, dphis, hold_duration: float = 0.0,
                        mode: str = "imprint", merge_ramp: Ramp | None = None,
                        psi0: WavefunctionState | None = None, basis: EigenSet | None = None,
                        dt: float | None = None, n_states: int = 6,
                        workers: int = 1) -> list[CycleResult]:
    """:func:`interferometer_cycle` for several phases, sharing one splitting run.

    The split does not depend on Δφ, so it is propagated once; the hold and
    merge stages of different phases are independent and run on ``workers``
    processes.
    """
    table = _resolve_table(potential, psi0.x if psi0 is not None else tdse_grid())
    basis = basis or table.eigenset(0.0, n_states)
    if psi0 is None:
        psi0 = WavefunctionState.from_real(basis.states[0], basis.x)
    merge_ramp = merge_ramp or split_ramp.reversed()
    if not split_ramp.rising or merge_ramp.rising:
        raise ValueError("split must rise from s = 0 and merge must fall back to s = 0")
    split = propagate(table, split_ramp, psi0, dt)
    jobs = [(table, split, Hold(float(p), hold_duration, mode), merge_ramp, basis, dt)
            for p in dphis]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_merge_and_project, jobs))
    return [_merge_and_project(job) for job in jobs]


def write_cycle_csv(path, results: list[CycleResult]) -> None:
    """Columns ``dphi_rad, P0, P1, P2, P3, leakage``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dphi_rad", "P0", "P1", "P2", "P3", "leakage"])
        for r in results:
            P = list(r.populations[:4]) + [0.0] * max(0, 4 - len(r.populations))
            w.writerow([repr(float(v)) for v in [r.dphi, *P, r.leakage]])
