"""Ramp shaping by reparametrizing the coupling as a chosen pulse.

In the transformed time τ ∈ [0, 1] the generalized coupling
u(τ) = a(s_τ(τ)) ds_τ/dτ is prescribed as A·û(τ), which fixes the path
s_τ(τ) (shape ODE). A second ODE, dτ/dt = Δω(s_τ(τ)), maps τ to physical
time and defines the intrinsic timescale T₀. The ramp of duration T is the
composition s(t) = s_τ(τ(t T₀ / T)); its first-order amplitude is the
Fourier integral ∫₀¹ e^{i(T/T₀)τ} u(τ) dτ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .adiabatic import CouplingTable
from .errors import GapClosedError, OptimizerError
from .quadrature import phase_integral
from .ramps import PulseShape, Ramp, blackman_shape

DEFAULT_FLOOR = 1e-3  # |a| floor relative to max |a|, shape ODE only
SHOOTING_TOL = 1e-8
MAX_SHOOTING_ITER = 200
BRACKET_SPAN = 1e6
_OVERSHOOT = 1.5
_ODE_TOL = dict(rtol=1e-11, atol=1e-13)


def _regularized(table: CouplingTable, floor_rel: float):
    amax = float(np.max(np.abs(table.a)))
    if amax == 0:
        raise OptimizerError("coupling vanishes identically; nothing to optimize")
    floor = floor_rel * amax

    def a_reg(s):
        return np.maximum(np.abs(table.a_at(s)), floor)

    return a_reg, floor


@dataclass
class ShapeSolution:
    """Solved path s_τ(τ) with its shooting amplitude A."""

    shape: PulseShape
    A: float
    tau: np.ndarray
    s_tau: np.ndarray
    dsdtau: np.ndarray
    floor: float  # absolute |a| floor used in the ODE
    floor_rel: float
    residual: float  # s_τ(1) - 1 before the final rescaling
    iterations: int
    table: CouplingTable = field(repr=False)

    def __post_init__(self):
        self._interp = CubicHermiteSpline(self.tau, self.s_tau, self.dsdtau)

    def s_at(self, tau):
        return self._interp(tau)

    def generalized_coupling(self, tau) -> np.ndarray:
        """u(τ) = a(s_τ) ds_τ/dτ with the unregularized coupling."""
        tau = np.asarray(tau, dtype=float)
        s = self._interp(tau)
        return self.table.a_at(s) * self._interp(tau, 1)


def _integrate_shape(shape, a_reg, A, dense=False):
    def rhs(tau, y):
        return [A * shape(tau) / a_reg(y[0])]

    def overshoot(tau, y):
        return y[0] - _OVERSHOOT
    overshoot.terminal = True
    overshoot.direction = 1

    sol = solve_ivp(rhs, (0.0, 1.0), [0.0], method="DOP853", events=overshoot,
                    dense_output=dense, **_ODE_TOL)
    if not sol.success:
        raise OptimizerError(f"shape ODE failed: {sol.message}")
    if sol.status == 1:  # overshoot event fired
        return _OVERSHOOT, sol
    return float(sol.y[0, -1]), sol


def solve_shape(table: CouplingTable, shape: PulseShape | None = None,
                floor_rel: float = DEFAULT_FLOOR, tol: float = SHOOTING_TOL,
                max_iter: int = MAX_SHOOTING_ITER, n_tau: int = 4001) -> ShapeSolution:
    """Shoot ds_τ/dτ = A û(τ) / |a_reg(s_τ)| so that s_τ(1) = 1.

    ``|a|`` is floored at ``floor_rel · max|a|``. A is found by bisection on
    log A, starting from the bracket around the separable estimate
    ∫|a_reg| ds / ∫û dτ.
    """
    shape = shape or blackman_shape()
    a_reg, floor = _regularized(table, floor_rel)
    s_fine = np.linspace(0.0, 1.0, 4001)
    A0 = float(np.trapezoid(a_reg(s_fine), s_fine)) / shape.integral()

    def miss(A):
        return _integrate_shape(shape, a_reg, A)[0] - 1.0

    lo, hi = A0 / 2.0, A0 * 2.0
    f_lo, f_hi = miss(lo), miss(hi)
    while f_lo > 0 and lo > A0 / BRACKET_SPAN:
        lo /= 2.0
        f_lo = miss(lo)
    while f_hi < 0 and hi < A0 * BRACKET_SPAN:
        hi *= 2.0
        f_hi = miss(hi)
    if not (f_lo <= 0 <= f_hi):
        raise OptimizerError("could not bracket the shooting amplitude",
                             diagnostics={"A0": A0, "lo": lo, "hi": hi})

    A, f_mid = lo, f_lo
    for it in range(1, max_iter + 1):
        A = float(np.sqrt(lo * hi))
        f_mid = miss(A)
        if abs(f_mid) <= tol:
            break
        if f_mid < 0:
            lo = A
        else:
            hi = A
    else:
        raise OptimizerError(f"shooting did not converge in {max_iter} iterations",
                             diagnostics={"A": A, "residual": f_mid})

    end, sol = _integrate_shape(shape, a_reg, A, dense=True)
    tau = np.linspace(0.0, 1.0, n_tau)
    s_tau = sol.sol(tau)[0]
    if np.any(np.diff(s_tau) <= 0):
        raise OptimizerError("regularized path is not strictly increasing")
    # absorb the remaining shooting residual (≤ tol) so the ends are exact
    scale = 1.0 / end
    s_tau = s_tau * scale
    s_tau[0], s_tau[-1] = 0.0, 1.0
    dsdtau = scale * A * shape(tau) / a_reg(s_tau)
    return ShapeSolution(shape, A, tau, s_tau, dsdtau, floor, floor_rel, end - 1.0, it, table)


@dataclass
class TimeMap:
    """Physical time t(τ) at T = T₀ and its inverse."""

    tau: np.ndarray
    t: np.ndarray
    T0: float

    def __post_init__(self):
        self._inverse = PchipInterpolator(self.t, self.tau)

    def tau_of_t(self, t):
        return self._inverse(np.clip(t, 0.0, self.T0))


def solve_timemap(table: CouplingTable, solution: ShapeSolution) -> TimeMap:
    """Integrate dt/dτ = 1 / Δω(s_τ(τ)); T₀ is the time at which τ reaches 1."""
    if np.any(np.asarray(table.domega) <= 0):
        bad = np.asarray(table.s)[np.asarray(table.domega) <= 0]
        raise GapClosedError(
            f"gap of pair {table.pair} is not positive on [0, 1]",
            diagnostics={"s": bad.tolist()[:10]})

    def rhs(tau, y):
        return [1.0 / table.domega_at(solution.s_at(tau))]

    sol = solve_ivp(rhs, (0.0, 1.0), [0.0], method="DOP853", dense_output=True, **_ODE_TOL)
    if not sol.success:
        raise OptimizerError(f"time-map ODE failed: {sol.message}")
    t = sol.sol(solution.tau)[0]
    t[0] = 0.0
    return TimeMap(solution.tau.copy(), t, float(t[-1]))


def compose_ramp(solution: ShapeSolution, timemap: TimeMap, T: float) -> Ramp:
    """s(t) = s_τ(τ(t T₀ / T)), tabulated on the τ-grid of the solution."""
    if not (np.isfinite(T) and T > 0):
        raise ValueError("T must be positive")
    u = timemap.t / timemap.T0
    u[0], u[-1] = 0.0, 1.0
    # ds/du = ds_τ/dτ · dτ/dt · T₀ with dτ/dt = Δω(s_τ)
    dsdu = solution.dsdtau * solution.table.domega_at(solution.s_tau) * timemap.T0
    meta = {
        "shape": solution.shape.name,
        "A": solution.A,
        "T0_s": timemap.T0,
        "floor": solution.floor,
        "floor_rel": solution.floor_rel,
        "pair": list(solution.table.pair),
    }
    return Ramp(float(T), u, solution.s_tau.copy(), dsdu, "optimized", meta)


def predict_amplitude_fourier(solution: ShapeSolution, timemap: TimeMap, T: float,
                              n: int = 8001) -> complex:
    """c_f(T) = ∫₀¹ e^{i(T/T₀)τ} u(τ) dτ with the unregularized u(τ)."""
    tau = np.linspace(0.0, 1.0, n)
    u = solution.generalized_coupling(tau)
    return phase_integral(tau, u, (T / timemap.T0) * tau)


@dataclass
class OptimizedRamp:
    """Solved shape and time map for one transition pair."""

    solution: ShapeSolution
    timemap: TimeMap

    @property
    def T0(self) -> float:
        return self.timemap.T0

    @property
    def A(self) -> float:
        return self.solution.A

    def ramp(self, T: float) -> Ramp:
        return compose_ramp(self.solution, self.timemap, T)

    def predict(self, T: float) -> complex:
        return predict_amplitude_fourier(self.solution, self.timemap, T)

    def report(self) -> dict:
        sol = self.solution
        tau = sol.tau
        u = np.abs(sol.generalized_coupling(tau))
        target = sol.A * sol.shape(tau)
        active = np.abs(sol.table.a_at(sol.s_tau)) > sol.floor
        peak = float(np.max(target))
        recon = float(np.max(np.abs(u - target)[active]) / peak) if np.any(active) else 0.0
        return {
            "pair": list(sol.table.pair),
            "shape": sol.shape.name,
            "A": sol.A,
            "T0_s": self.T0,
            "floor": sol.floor,
            "floor_rel": sol.floor_rel,
            "residuals": {
                "shooting": sol.residual,
                "shooting_iterations": sol.iterations,
                "coupling_reconstruction": recon,
            },
        }

    def write_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.report(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def optimize_ramp(table: CouplingTable, shape: PulseShape | None = None,
                  floor_rel: float = DEFAULT_FLOOR) -> OptimizedRamp:
    """Solve the shape and time-map ODEs for ``table``."""
    solution = solve_shape(table, shape, floor_rel)
    return OptimizedRamp(solution, solve_timemap(table, solution))
