"""Fit the unpublished chip geometry to the published trap characteristics.

The currents and bias fields are fixed; the free parameters are the outer
wire spacing ``d_ext`` and the heights of the crossing wires. The fit is
nested: for given heights, ``d_ext`` is root-found so that the s = 0 level
spacing hits its target exactly, and an outer least-squares adjusts the
heights against the remaining targets.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares

from .constants import TWO_PI
from .errors import ConfigError, SplitwellError
from .spectrum import level_spacings, solve_stationary
from .trap import MajoranaWarning, TrapConfig, potential_curve, symmetric_grid

log = logging.getLogger(__name__)

FREE_PARAMETERS = ("d_ext", "ext_height", "ic_height")
DEGENERACY_LIMIT = 0.01  # (E1 - E0) / (E2 - E0) at s = 1


@dataclass(frozen=True)
class CalibrationTargets:
    omega_s0: float = TWO_PI * 190.0  # rad/s
    omega_s1: float = TWO_PI * 240.0  # rad/s
    trap_height: float | None = 35.0  # µm above the chip surface
    separation: float | None = 6.0  # µm between the s = 1 minima
    weights: dict = field(default_factory=lambda: {
        "omega_s0": 1.0, "omega_s1": 1.0, "trap_height": 0.25, "separation": 0.25})
    # targets without a tolerance are fitted and reported but never fail the run
    tolerances: dict = field(default_factory=lambda: {
        "omega_s0": 0.15, "omega_s1": 0.15, "trap_height": None, "separation": None})

    def active(self) -> list[str]:
        return [k for k in ("omega_s0", "omega_s1", "trap_height", "separation")
                if getattr(self, k) is not None]


@dataclass
class CalibrationResult:
    config: TrapConfig
    achieved: dict
    residuals: dict  # relative, (achieved - target) / target
    success: bool
    message: str
    evaluations: int = 0

    def report(self) -> dict:
        return {
            "success": self.success,
            "message": self.message,
            "config": self.config.to_dict(),
            "achieved": self.achieved,
            "residuals": self.residuals,
            "evaluations": self.evaluations,
        }


def trap_characteristics(cfg: TrapConfig, x_grid=None) -> dict:
    """Level spacings, height, separation and pair degeneracy of a configuration."""
    x = symmetric_grid(14.0, 512) if x_grid is None else x_grid
    c0 = potential_curve(cfg, 0.0, x)
    c1 = potential_curve(cfg, 1.0, x)
    e0 = solve_stationary(c0, 4)
    e1 = solve_stationary(c1, 4)
    E1 = e1.energies
    return {
        "omega_s0": level_spacings(e0)["single"],
        "omega_s1": level_spacings(e1)["pair"],
        "trap_height": c0.trap_height,
        "separation": c1.well_separation,
        "degeneracy": float((E1[1] - E1[0]) / (E1[2] - E1[0])),
    }


class _Evaluator:
    def __init__(self, base: TrapConfig, x_grid):
        self.base = base
        self.x = x_grid
        self.count = 0

    def omega_s0(self, cfg: TrapConfig) -> float:
        self.count += 1
        try:
            # trial geometries may pass near field zeros; only the result matters
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MajoranaWarning)
                c0 = potential_curve(cfg, 0.0, self.x)
            return level_spacings(solve_stationary(c0, 2))["single"]
        except (SplitwellError, ValueError):
            return np.nan

    def full(self, cfg: TrapConfig) -> dict | None:
        self.count += 1
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MajoranaWarning)
                return trap_characteristics(cfg, self.x)
        except (SplitwellError, ValueError):
            return None


def _solve_d_ext(ev: _Evaluator, cfg: TrapConfig, target: float, hint=None):
    """Smallest d_ext (single-well branch) with omega_s0 == target, or None."""
    Z = cfg.guide_height - cfg.ext_height

    def f(d):
        try:
            w = ev.omega_s0(cfg.replace(d_ext=d))
        except ConfigError:
            return np.nan
        return w - target

    if hint is not None:
        lo, hi = hint * 0.995, hint * 1.005
        flo, fhi = f(lo), f(hi)
        if np.isfinite(flo) and np.isfinite(fhi) and flo > 0 >= fhi:
            return brentq(f, lo, hi, xtol=1e-7)
    ds = np.linspace(0.2 * Z, 0.8 * Z, 25)
    vals = [f(d) for d in ds]
    for i in range(len(ds) - 1):
        a, b = vals[i], vals[i + 1]
        if np.isfinite(a) and a > 0 and (not np.isfinite(b) or b <= 0):
            lo, hi = ds[i], ds[i + 1]
            if not np.isfinite(b):
                # the upper end broke down (e.g. wells left the grid); shrink it
                for _ in range(40):
                    mid = 0.5 * (lo + hi)
                    fm = f(mid)
                    if np.isfinite(fm) and fm <= 0:
                        hi = mid
                        break
                    if np.isfinite(fm):
                        lo = mid
                    else:
                        hi = mid
                else:
                    return None
            return brentq(f, lo, hi, xtol=1e-7)
    return None


def _residuals(achieved: dict, targets: CalibrationTargets) -> dict:
    return {k: (achieved[k] - getattr(targets, k)) / getattr(targets, k) for k in targets.active()}


def calibrate_geometry(cfg: TrapConfig, targets: CalibrationTargets | None = None,
                       free=FREE_PARAMETERS, x_grid=None, seeds=None) -> CalibrationResult:
    """Adjust the free geometry of ``cfg`` to the target trap characteristics.

    Returns a :class:`CalibrationResult`; an unreachable target yields
    ``success=False`` with the best configuration found rather than raising.
    ``cfg`` itself is never modified.
    """
    targets = targets or CalibrationTargets()
    free = tuple(free)
    unknown = set(free) - set(FREE_PARAMETERS)
    if unknown:
        raise ValueError(f"cannot calibrate {sorted(unknown)}; choose from {FREE_PARAMETERS}")
    x = symmetric_grid(14.0, 512) if x_grid is None else np.asarray(x_grid, float)
    ev = _Evaluator(cfg, x)

    start = ev.full(cfg)
    if start is not None:
        res0 = _residuals(start, targets)
        if max(abs(r) for r in res0.values()) <= 1e-9:
            return CalibrationResult(cfg, start, res0, True, "targets already met", ev.count)

    heights = [p for p in free if p != "d_ext"]
    weights = targets.weights
    best = {"cost": np.inf, "cfg": cfg, "achieved": start}
    d_hint = [None]

    def evaluate(hvals):
        c = cfg.replace(**dict(zip(heights, hvals)))
        if "d_ext" in free and targets.omega_s0 is not None:
            d = _solve_d_ext(ev, c, targets.omega_s0, d_hint[0])
            if d is None:
                return None, None
            d_hint[0] = d
            c = c.replace(d_ext=d)
        return c, ev.full(c)

    def vector(hvals):
        try:
            c, ach = evaluate(hvals)
        except ConfigError:
            c, ach = None, None
        if ach is None:
            return np.full(len(targets.active()) + 1, 10.0)
        r = _residuals(ach, targets)
        vec = [weights.get(k, 1.0) * r[k] for k in targets.active()]
        vec.append(max(0.0, ach["degeneracy"] - DEGENERACY_LIMIT) / DEGENERACY_LIMIT)
        vec = np.array(vec)
        cost = float(vec @ vec)
        if cost < best["cost"]:
            best.update(cost=cost, cfg=c, achieved=ach)
        return vec

    if heights:
        if seeds is None:
            he = cfg.ext_height
            seeds = [{"ext_height": he + dh, "ic_height": he + dh + dc}
                     for dh in (0.0, 8.0, 16.0) for dc in (8.0,)]
        for seed in seeds:
            h0 = np.array([seed.get(h, getattr(cfg, h)) for h in heights], float)
            lo = np.full(len(heights), -40.0)
            hi = np.full(len(heights), cfg.guide_height - 10.0)
            h0 = np.clip(h0, lo + 1e-6, hi - 1e-6)
            d_hint[0] = None
            try:
                least_squares(vector, h0, bounds=(lo, hi), diff_step=1e-3,
                              xtol=1e-8, ftol=1e-10, max_nfev=60)
            except (SplitwellError, ValueError) as exc:
                log.info("calibration seed %s failed: %s", seed, exc)
    else:
        vector(np.empty(0))

    achieved = best["achieved"]
    if achieved is None:
        return CalibrationResult(cfg, {}, {}, False,
                                 "no admissible geometry found for the targets", ev.count)
    residuals = _residuals(achieved, targets)
    failed = [k for k, tol in targets.tolerances.items()
              if tol is not None and k in residuals and abs(residuals[k]) > tol]
    if achieved["degeneracy"] > DEGENERACY_LIMIT:
        failed.append("degeneracy")
    ok = not failed
    msg = "calibrated" if ok else "calibration failed: " + ", ".join(failed)
    return CalibrationResult(best["cfg"], achieved, residuals, ok, msg, ev.count)
