"""Magnetic field of the five-wire splitting chip and its 1D longitudinal potential.

Geometry (positions in µm, z pointing away from the chip):

* central wire along +x through (y, z) = (0, 0), current ``I0``;
* three crossing wires along y at ``x = -d_ext, 0, +d_ext``. The outer two
  lie at ``z = ext_height`` and carry ``Iext(s)`` along -y; the central one
  lies at ``z = ic_height`` and carries ``Ic(s)`` along +y (opposite to the
  outer ones);
* homogeneous bias ``(B0x, B0y, 0)``.

Two reductions to the longitudinal potential are available. ``minimize``
minimizes |B| over the transverse plane at every x, so the trap centre may
sag towards the chip where the crossing-wire fields pull it. ``stiff`` is
the limit of an infinitely stiff guide: the atoms stay on the guide axis
``(y, z) = (0, µ0 I0 / 2π B0y)`` and the transverse field components are
nulled by an infinitesimal displacement, leaving ``Bmin = |B_x|`` there.

The central wire and ``B0y`` form a side guide at height ``µ0 I0 / 2π B0y``
above the central wire. The outer crossing wires cancel most of ``B0x`` and
close the guide along x; ``Ic`` raises a bump in the middle that splits the
trap as ``s`` goes from 0 to 1.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from .constants import (
    RB87_MASS,
    POTENTIAL_SCALE_HZ_PER_G,
    TWO_PI,
    WIRE_CONSTANT,
    kinetic_coefficient,
)
from .errors import ConfigError, NumericalError, SingularityError

TRANSVERSE_MODELS = ("minimize", "stiff")
MIN_WIRE_DISTANCE = 0.1  # µm
MAJORANA_FIELD = 0.1  # G
REFERENCE_OMEGA = TWO_PI * 190.0  # rad/s, sets the boundary-energy requirement
BOUNDARY_ENERGY_FACTOR = 50.0


class MajoranaWarning(UserWarning):
    """Field minimum low enough that spin-flip losses would matter."""


@dataclass(frozen=True)
class Wire:
    point: np.ndarray  # a point on the wire axis (µm)
    direction: np.ndarray  # unit vector along the current
    current: float  # mA


@dataclass(frozen=True)
class TrapConfig:
    """Currents, bias fields and geometry of the splitting trap.

    Currents follow ``Iext(s) = Iext_base + Iext_slope * s`` and
    ``Ic(s) = Ic_base + Ic_slope * s``.
    """

    I0: float = 525.0  # mA
    B0y: float = 20.0  # G
    B0x: float = 16.0  # G
    Iext_base: float = 140.0  # mA
    Iext_slope: float = 2.91  # mA per unit s
    Ic_base: float = 0.25  # mA
    Ic_slope: float = 4.4  # mA per unit s
    d_ext: float = 10.0  # µm, outer crossing wires at x = ±d_ext
    ext_height: float = 0.0  # µm, z of the outer crossing wires
    ic_height: float = 0.0  # µm, z of the central crossing wire
    potential_scale: float = POTENTIAL_SCALE_HZ_PER_G  # (U/h) per gauss
    atom_mass: float = RB87_MASS  # kg
    transverse: str = "stiff"  # or "minimize", see module docstring

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name != "transverse":
                object.__setattr__(self, f.name, float(getattr(self, f.name)))
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name != "transverse" and not np.isfinite(v):
                raise ConfigError(f"{f.name} must be finite, got {v!r}")
        if self.transverse not in TRANSVERSE_MODELS:
            raise ConfigError(f"transverse must be one of {TRANSVERSE_MODELS}")
        if self.B0y <= 0:
            raise ConfigError("B0y must be positive (no side guide otherwise)")
        if self.I0 <= 0:
            raise ConfigError("I0 must be positive")
        for s in (0.0, 1.0):
            if self.Iext(s) <= 0 or self.Ic(s) <= 0:
                raise ConfigError(f"Iext(s) and Ic(s) must be positive on [0, 1] (s={s})")
        if self.d_ext <= 0:
            raise ConfigError("d_ext must be positive")
        if self.potential_scale <= 0 or self.atom_mass <= 0:
            raise ConfigError("potential_scale and atom_mass must be positive")
        if self.guide_height - max(self.ext_height, self.ic_height) <= MIN_WIRE_DISTANCE:
            raise ConfigError("crossing wires must lie below the side guide")

    def Iext(self, s):
        return self.Iext_base + self.Iext_slope * s

    def Ic(self, s):
        return self.Ic_base + self.Ic_slope * s

    @property
    def guide_height(self) -> float:
        """Analytic side-guide height above the central wire, µ0 I0 / 2π B0y (µm)."""
        return WIRE_CONSTANT * self.I0 / self.B0y

    @property
    def surface_height(self) -> float:
        """z of the chip surface, taken as the topmost wire plane."""
        return max(0.0, self.ext_height, self.ic_height)

    @property
    def omega_per_gauss(self) -> float:
        """Potential energy per gauss, in rad/s."""
        return TWO_PI * self.potential_scale

    @property
    def kinetic(self) -> float:
        return kinetic_coefficient(self.atom_mass)

    def wires(self, s: float) -> list[Wire]:
        ex = np.array([1.0, 0.0, 0.0])
        ey = np.array([0.0, 1.0, 0.0])
        h = self.ext_height
        return [
            Wire(np.zeros(3), ex, self.I0),
            Wire(np.array([-self.d_ext, 0.0, h]), -ey, self.Iext(s)),
            Wire(np.array([self.d_ext, 0.0, h]), -ey, self.Iext(s)),
            Wire(np.array([0.0, 0.0, self.ic_height]), ey, self.Ic(s)),
        ]

    @property
    def bias(self) -> np.ndarray:
        return np.array([self.B0x, self.B0y, 0.0])

    def replace(self, **changes) -> "TrapConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrapConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown trap parameters: {sorted(unknown)}")
        try:
            return cls(**{k: (str(v) if k == "transverse" else float(v)) for k, v in data.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def load_config(path) -> TrapConfig:
    """Read a trap config from YAML or JSON.

    The trap parameters may sit at top level or under a ``trap`` section.
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if "trap" in data:
        data = data["trap"]
    return TrapConfig.from_dict(data or {})


def save_config(cfg: TrapConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


# --- field evaluation -------------------------------------------------------


def _wire_field(wire: Wire, r: np.ndarray, with_jacobian: bool = False):
    e = wire.direction
    d = r - wire.point
    rho = d - np.einsum("...i,i->...", d, e)[..., None] * e
    rho2 = np.einsum("...i,...i->...", rho, rho)
    k = WIRE_CONSTANT * wire.current
    cross = np.cross(e, rho)
    B = k * cross / rho2[..., None]
    if not with_jacobian:
        return B, rho2
    # dB_i/dr_j = k [ (e x P_j)_i / rho^2 - 2 (e x rho)_i rho_j / rho^4 ]
    P = np.eye(3) - np.outer(e, e)
    eP = np.cross(e, P.T).T  # column j is e x P e_j
    J = k * (eP / rho2[..., None, None]
             - 2.0 * cross[..., :, None] * rho[..., None, :] / (rho2**2)[..., None, None])
    return B, rho2, J


def _total_field(cfg: TrapConfig, s: float, r: np.ndarray, with_jacobian: bool = False):
    B = np.broadcast_to(cfg.bias, r.shape).copy()
    J = np.zeros(r.shape + (3,)) if with_jacobian else None
    min_rho2 = np.full(r.shape[:-1], np.inf)
    for w in cfg.wires(s):
        # points on a wire give inf/nan here; callers reject them via min_rho2
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _wire_field(w, r, with_jacobian)
        B += out[0]
        min_rho2 = np.minimum(min_rho2, out[1])
        if with_jacobian:
            J += out[2]
    return B, J, min_rho2


def field_at(cfg: TrapConfig, s: float, r) -> np.ndarray:
    """Magnetic field (G) at position(s) ``r`` (µm, shape ``(..., 3)``)."""
    r = np.asarray(r, dtype=float)
    if r.shape[-1:] != (3,):
        raise ValueError("r must have a trailing dimension of 3")
    if not (np.all(np.isfinite(r)) and np.isfinite(s)):
        raise ValueError("non-finite position or control parameter")
    B, _, min_rho2 = _total_field(cfg, s, r)
    if np.any(min_rho2 <= MIN_WIRE_DISTANCE**2):
        raise SingularityError(
            f"position within {MIN_WIRE_DISTANCE} µm of a wire axis")
    return B


# --- transverse minimization ------------------------------------------------


class TransverseMinimum(NamedTuple):
    y: np.ndarray  # µm
    z: np.ndarray  # µm
    Bmin: np.ndarray  # G


def _objective(cfg, s, x, y, z):
    r = np.stack([x, y, z], axis=-1)
    B, J, _ = _total_field(cfg, s, r, with_jacobian=True)
    f = 0.5 * np.einsum("...i,...i->...", B, B)
    grad = np.einsum("...ij,...i->...j", J[..., 1:], B)
    return f, grad, J[..., 1:]


def _newton(cfg, s, x, y, z, tol=1e-7, maxiter=60):
    # Bmin is stationary in (y, z), so a position error δ shifts it only by O(δ²);
    # tol (µm) sits well above the finite-difference Hessian noise floor
    fd = 1e-3
    converged = np.zeros(x.shape, dtype=bool)
    for _ in range(maxiter):
        f, g, _ = _objective(cfg, s, x, y, z)
        # Hessian by central differences of the analytic gradient
        gyp = _objective(cfg, s, x, y + fd, z)[1]
        gym = _objective(cfg, s, x, y - fd, z)[1]
        gzp = _objective(cfg, s, x, y, z + fd)[1]
        gzm = _objective(cfg, s, x, y, z - fd)[1]
        hyy = (gyp[..., 0] - gym[..., 0]) / (2 * fd)
        hzz = (gzp[..., 1] - gzm[..., 1]) / (2 * fd)
        hyz = 0.25 * ((gyp[..., 1] - gym[..., 1]) + (gzp[..., 0] - gzm[..., 0])) / fd
        det = hyy * hzz - hyz**2
        ok = (det > 0) & (hyy > 0)
        safe = np.where(ok, det, 1.0)
        dy = np.where(ok, -(hzz * g[..., 0] - hyz * g[..., 1]) / safe, -g[..., 0])
        dz = np.where(ok, -(hyy * g[..., 1] - hyz * g[..., 0]) / safe, -g[..., 1])
        # cap the step to a few µm so a bad Hessian cannot throw us into a wire
        scale = np.minimum(1.0, 2.0 / np.maximum(np.hypot(dy, dz), 1e-300))
        dy, dz = dy * scale, dz * scale
        t = np.ones_like(x)
        for _ in range(30):
            f_new = _objective(cfg, s, x, y + t * dy, z + t * dz)[0]
            small = np.hypot(t * dy, t * dz) < tol
            bad = (f_new > f + 1e-15 * np.abs(f)) & ~small
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        y = y + t * dy
        z = z + t * dz
        converged = np.hypot(t * dy, t * dz) < tol
        if np.all(converged):
            break
    return y, z, converged


def transverse_minimum(cfg: TrapConfig, s: float, x, seed=None) -> TransverseMinimum:
    """Minimize |B| over (y, z) at each longitudinal position ``x``.

    Seeds default to the analytic side-guide point ``(0, µ0 I0/2π B0y)``;
    positions that fail from that seed are retried from their converged
    neighbours.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(x)) and np.isfinite(s)):
        raise ValueError("non-finite position or control parameter")
    if seed is None:
        y0 = np.zeros_like(x)
        z0 = np.full_like(x, cfg.guide_height)
    else:
        y0 = np.broadcast_to(np.asarray(seed[0], float), x.shape).copy()
        z0 = np.broadcast_to(np.asarray(seed[1], float), x.shape).copy()
    y, z, ok = _newton(cfg, s, x, y0, z0)
    if not np.all(ok):
        # seed chaining: walk outward from converged points
        order = np.argsort(np.abs(x))
        for idx in order:
            if ok[idx]:
                continue
            done = np.flatnonzero(ok)
            if done.size == 0:
                break
            nb = done[np.argmin(np.abs(x[done] - x[idx]))]
            yi, zi, oki = _newton(cfg, s, x[idx:idx + 1], y[nb:nb + 1], z[nb:nb + 1])
            y[idx], z[idx], ok[idx] = yi[0], zi[0], oki[0]
    if not np.all(ok):
        bad = x[~ok]
        raise NumericalError(
            f"transverse minimization did not converge at {bad.size} positions",
            diagnostics={"s": s, "x_failed": bad.tolist()[:20]},
        )
    r = np.stack([x, y, z], axis=-1)
    B, _, min_rho2 = _total_field(cfg, s, r)
    if np.any(min_rho2 <= MIN_WIRE_DISTANCE**2):
        raise NumericalError("transverse minimum collapsed onto a wire",
                             diagnostics={"s": s})
    Bmin = np.sqrt(np.einsum("...i,...i->...", B, B))
    if np.any(Bmin < MAJORANA_FIELD):
        warnings.warn(
            f"field minimum {Bmin.min():.3g} G below {MAJORANA_FIELD} G at s={s}",
            MajoranaWarning, stacklevel=2)
    return TransverseMinimum(y, z, Bmin)


def guide_axis_field(cfg: TrapConfig, s: float, x) -> TransverseMinimum:
    """Stiff-guide limit: |B_x| on the guide axis (0, µ0 I0 / 2π B0y)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(x)) and np.isfinite(s)):
        raise ValueError("non-finite position or control parameter")
    y = np.zeros_like(x)
    z = np.full_like(x, cfg.guide_height)
    B, _, min_rho2 = _total_field(cfg, s, np.stack([x, y, z], axis=-1))
    if np.any(min_rho2 <= MIN_WIRE_DISTANCE**2):
        raise SingularityError("guide axis passes through a wire")
    Bmin = np.abs(B[..., 0])
    if np.any(Bmin < MAJORANA_FIELD):
        warnings.warn(
            f"field minimum {Bmin.min():.3g} G below {MAJORANA_FIELD} G at s={s}",
            MajoranaWarning, stacklevel=2)
    return TransverseMinimum(y, z, Bmin)


# --- longitudinal potential -------------------------------------------------


def symmetric_grid(half_width: float, n: int) -> np.ndarray:
    """Uniform grid on [-half_width, half_width] with x[i] == -x[n-1-i] exactly."""
    if n < 3:
        raise ValueError("need at least 3 grid points")
    dx = 2.0 * half_width / (n - 1)
    return (np.arange(n) - 0.5 * (n - 1)) * dx


def _check_symmetric_uniform(x: np.ndarray) -> None:
    if x.ndim != 1 or x.size < 3:
        raise ValueError("x_grid must be a 1D array with at least 3 points")
    dx = np.diff(x)
    if np.any(dx <= 0) or np.max(np.abs(dx - dx.mean())) > 1e-9 * dx.mean():
        raise ValueError("x_grid must be uniform and increasing")
    if np.max(np.abs(x + x[::-1])) > 1e-9 * dx.mean():
        raise ValueError("x_grid must be symmetric about 0")


@dataclass
class PotentialCurve:
    """Effective longitudinal potential U(x; s) at the transverse field minimum.

    ``U`` is stored as an angular frequency (U/ħ in rad/s) on the uniform,
    symmetric grid ``x`` (µm).
    """

    s: float
    x: np.ndarray
    U: np.ndarray
    mass: float = RB87_MASS
    Bmin: np.ndarray | None = None
    y_min: np.ndarray | None = None
    z_min: np.ndarray | None = None
    surface_height: float = 0.0
    units: str = "rad/s"
    meta: dict = field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def U_over_h_hz(self) -> np.ndarray:
        return self.U / TWO_PI

    @property
    def min_locations(self) -> np.ndarray:
        """Positions of the local minima of U (interior points only)."""
        U = self.U
        i = np.flatnonzero((U[1:-1] < U[:-2]) & (U[1:-1] <= U[2:])) + 1
        # a flat bottom straddling x = 0 on an even grid shows up twice
        locs = self.x[i]
        if locs.size == 2 and np.isclose(locs[0], -locs[1]) and abs(locs[0]) < self.dx:
            return np.array([0.0])
        return locs

    @property
    def well_separation(self) -> float:
        locs = self.min_locations
        if locs.size < 2:
            return 0.0
        return float(locs.max() - locs.min())

    @property
    def trap_height(self) -> float:
        """Height of the trap centre above the chip surface (µm), NaN if unknown."""
        if self.z_min is None:
            return float("nan")
        c = self.x.size // 2
        return float(self.z_min[c] - self.surface_height)

    @property
    def barrier(self) -> float:
        """U(0) - min U in rad/s (zero for a single well)."""
        c = self.x.size // 2
        U0 = self.U[c] if self.x.size % 2 else 0.5 * (self.U[c - 1] + self.U[c])
        return float(U0 - self.U.min())

    def harmonic_omega(self, window: float = 0.5) -> float:
        """Trap frequency (rad/s) of a parabola fitted within ``window`` µm of a minimum."""
        i = int(np.argmin(self.U))
        sel = np.abs(self.x - self.x[i]) <= window
        c2 = np.polyfit(self.x[sel] - self.x[i], self.U[sel], 2)[0]
        if c2 <= 0:
            return 0.0
        return 2.0 * np.sqrt(kinetic_coefficient(self.mass) * c2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_um", "U_over_h_Hz"])
            for xi, ui in zip(self.x, self.U_over_h_hz):
                w.writerow([repr(float(xi)), repr(float(ui))])


def read_potential_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x_um, U_over_h_Hz)`` from a file written by :meth:`PotentialCurve.to_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["x_um", "U_over_h_Hz"]:
        raise ValueError(f"unexpected header {rows[0]}")
    data = np.array(rows[1:], dtype=float)
    return data[:, 0], data[:, 1]


def potential_curve(cfg: TrapConfig, s: float, x_grid=None) -> PotentialCurve:
    """Effective potential U(x; s) = potential_scale * Bmin(x).

    Only the x >= 0 half is minimized; the other half is mirrored, which is
    exact for the symmetric layout. Without ``x_grid`` the default
    [-15, 15] µm / 4096-point grid is used and widened until the potential at
    the edges exceeds its minimum by 50 ħω (ω = 2π·190 Hz).
    """
    if x_grid is None:
        return _auto_curve(cfg, s)
    x = np.asarray(x_grid, dtype=float)
    _check_symmetric_uniform(x)
    n = x.size
    half = slice(n // 2, n)
    if cfg.transverse == "stiff":
        tm = guide_axis_field(cfg, s, x[half])
    else:
        tm = transverse_minimum(cfg, s, x[half])
    Bmin = _mirror(tm.Bmin, n)
    y_min = _mirror(tm.y, n, sign=-1.0)
    z_min = _mirror(tm.z, n)
    U = cfg.omega_per_gauss * Bmin
    curve = PotentialCurve(
        s=float(s), x=x, U=U, Bmin=Bmin, y_min=y_min, z_min=z_min,
        mass=cfg.atom_mass, surface_height=cfg.surface_height,
    )
    curve.meta = {
        "s": float(s),
        "units": curve.units,
        "well_separation_um": curve.well_separation,
        "trap_height_um": curve.trap_height,
    }
    return curve


def _mirror(half_values: np.ndarray, n: int, sign: float = 1.0) -> np.ndarray:
    out = np.empty(n)
    out[n // 2:] = half_values
    k = n // 2
    # for odd n the centre point belongs to the right half
    out[:k] = sign * (half_values[::-1] if n % 2 == 0 else half_values[:0:-1])
    return out


def _auto_curve(cfg: TrapConfig, s: float, half_width=15.0, n=4096, max_widen=8):
    dx = 2.0 * half_width / (n - 1)
    for _ in range(max_widen):
        curve = potential_curve(cfg, s, symmetric_grid(half_width, n))
        edge = min(curve.U[0], curve.U[-1]) - curve.U.min()
        if edge >= BOUNDARY_ENERGY_FACTOR * REFERENCE_OMEGA:
            return curve
        half_width *= 1.25
        n = 2 * int(round(half_width / dx)) + 2
    raise NumericalError(
        "could not find a grid wide enough to confine the potential",
        diagnostics={"s": s, "half_width": half_width})


def default_curve_grid(cfg: TrapConfig) -> np.ndarray:
    """Grid chosen by the automatic widening at s = 0 and s = 1 (the wider one)."""
    grids = [_auto_curve(cfg, s).x for s in (0.0, 1.0)]
    return max(grids, key=lambda g: g[-1])
