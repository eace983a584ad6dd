"""Control schedules s(t) and the pulse shapes used to design them.

A :class:`Ramp` is stored on normalized time ``u = t / T`` so that the same
schedule can be stretched to any duration, ``s(t, T) = s(t / T, 1)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .constants import TWO_PI
from .quadrature import fourier_integral


# --- pulse shapes -----------------------------------------------------------


@dataclass(frozen=True)
class PulseShape:
    """A non-negative shape û(τ) on [0, 1].

    The catalogue shapes are unit-normalized and vanish at both ends, so the
    ramps built from them start and stop with zero speed.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    spectrum: Callable[[np.ndarray], np.ndarray] | None = None  # closed-form ∫û e^{iωτ}
    antiderivative: Callable[[np.ndarray], np.ndarray] | None = None  # ∫₀^τ û

    def __call__(self, tau):
        return self.func(np.asarray(tau, dtype=float))

    def cumulative(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.antiderivative is not None:
            return self.antiderivative(tau)
        fine = np.linspace(0.0, 1.0, 20001)
        v = self(fine)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(fine))])
        return np.interp(tau, fine, cum)

    def integral(self) -> float:
        return float(self.cumulative(1.0))

    def fourier(self, omega: float, n: int = 4096) -> complex:
        """∫₀¹ û(τ) e^{iωτ} dτ, closed form when available."""
        if self.spectrum is not None:
            return complex(self.spectrum(np.asarray(omega, dtype=float)))
        return fourier_integral(self, omega, n)

    def validate(self, n: int = 2001) -> None:
        tau = np.linspace(0.0, 1.0, n)
        v = self(tau)
        if np.any(v < -1e-12):
            raise ValueError(f"shape {self.name!r} is negative somewhere")
        if abs(v[0]) > 1e-12 or abs(v[-1]) > 1e-12:
            raise ValueError(f"shape {self.name!r} must vanish at both ends")


def _cos_moment(k: int, w: np.ndarray) -> np.ndarray:
    """∫₀¹ e^{iωτ} cos(2πkτ) dτ."""
    b = TWO_PI * k
    e = np.exp(1j * w)
    d = w**2 - b**2
    near = np.abs(d) < 1e-8 * max(b * b, 1.0)
    safe = np.where(near, 1.0, d)
    out = (e - 1.0) * w / (1j * safe)
    if np.any(near):
        # limits: 1 at ω = 0 (k = 0), and 1/2 at ω = ±2πk (k > 0)
        out = np.where(near, 1.0 if k == 0 else 0.5, out)
    return out


def cosine_series_shape(name: str, coeffs) -> PulseShape:
    """û(τ) = Σ_k c_k cos(2πkτ) with exact integral and spectrum."""
    coeffs = tuple(float(c) for c in coeffs)

    def func(t):
        return sum(c * np.cos(TWO_PI * k * t) for k, c in enumerate(coeffs))

    def antiderivative(t):
        out = coeffs[0] * t
        for k, c in enumerate(coeffs[1:], start=1):
            out = out + c * np.sin(TWO_PI * k * t) / (TWO_PI * k)
        return out

    def spectrum(omega):
        w = np.asarray(omega, dtype=float)
        return sum(c * _cos_moment(k, w) for k, c in enumerate(coeffs))

    return PulseShape(name, func, spectrum, antiderivative)


BLACKMAN_COEFFS = (1.0, -25.0 / 21.0, 4.0 / 21.0)


def blackman_shape() -> PulseShape:
    """û(τ) = 1 - (25/21) cos 2πτ + (4/21) cos 4πτ."""
    return cosine_series_shape("blackman", BLACKMAN_COEFFS)


def blackman_spectrum(omega):
    """Closed-form ∫₀¹ û_Blackman(τ) e^{iωτ} dτ."""
    return blackman_shape().spectrum(omega)


def hann_shape() -> PulseShape:
    """û(τ) = 1 - cos 2πτ."""
    return cosine_series_shape("hann", (1.0, -1.0))


def raised_cosine_squared_shape() -> PulseShape:
    """û(τ) = (2/3)(1 - cos 2πτ)², which also starts and ends with zero slope."""
    return cosine_series_shape("raised_cosine_squared", (1.0, -4.0 / 3.0, 1.0 / 3.0))


SHAPES = {
    "blackman": blackman_shape,
    "hann": hann_shape,
    "raised_cosine_squared": raised_cosine_squared_shape,
}


def get_shape(name: str) -> PulseShape:
    try:
        return SHAPES[name]()
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; choose from {sorted(SHAPES)}") from None


# --- ramps ------------------------------------------------------------------


@dataclass(frozen=True)
class Ramp:
    """Tabulated schedule s(t) on [0, T].

    ``u`` is normalized time t/T, ``s_u`` the schedule and ``dsdu`` its
    derivative with respect to ``u``; values between samples come from a
    cubic Hermite interpolant. A ramp either rises from 0 to 1 or, for the
    merging stage, falls from 1 to 0.
    """

    T: float
    u: np.ndarray
    s_u: np.ndarray
    dsdu: np.ndarray
    kind: str = "linear"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError("ramp duration T must be positive")
        u = np.asarray(self.u, float)
        if u[0] != 0.0 or u[-1] != 1.0 or np.any(np.diff(u) <= 0):
            raise ValueError("normalized time must increase from 0 to 1")
        s = np.asarray(self.s_u, float)
        ends = (s[0], s[-1])
        if ends not in ((0.0, 1.0), (1.0, 0.0)):
            raise ValueError(f"ramp must run between s = 0 and s = 1, got {ends}")
        step = np.diff(s) * (1.0 if ends[0] == 0.0 else -1.0)
        if np.any(step < 0):
            raise ValueError("ramp is not monotone")
        object.__setattr__(self, "_spline", CubicHermiteSpline(u, s, np.asarray(self.dsdu, float)))

    @property
    def rising(self) -> bool:
        return self.s_u[0] == 0.0

    @property
    def t(self) -> np.ndarray:
        return self.u * self.T

    def s(self, t):
        """s at physical time(s) ``t`` (s)."""
        u = np.clip(np.asarray(t, dtype=float) / self.T, 0.0, 1.0)
        return self._spline(u)

    def rate(self, t):
        """ds/dt at physical time(s) ``t`` (1/s)."""
        u = np.clip(np.asarray(t, dtype=float) / self.T, 0.0, 1.0)
        return self._spline(u, 1) / self.T

    def s_of_u(self, u):
        return self._spline(np.asarray(u, dtype=float))

    def dsdu_of_u(self, u):
        return self._spline(np.asarray(u, dtype=float), 1)

    def rescaled(self, T: float) -> "Ramp":
        """The same schedule stretched to duration ``T``."""
        return Ramp(float(T), self.u, self.s_u, self.dsdu, self.kind, dict(self.meta))

    def reversed(self) -> "Ramp":
        """The time-reversed schedule, s_rev(t) = s(T - t)."""
        return Ramp(self.T, 1.0 - self.u[::-1], self.s_u[::-1].copy(), -self.dsdu[::-1],
                    self.kind, {**self.meta, "reversed": not self.meta.get("reversed", False)})

    def to_csv(self, path, n: int | None = None) -> None:
        """Write columns ``t_s, s``; ``n`` resamples uniformly in time."""
        if n is None:
            t, s = self.t, self.s_u
        else:
            t = np.linspace(0.0, self.T, n)
            s = self.s(t)
            s[0], s[-1] = self.s_u[0], self.s_u[-1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "s"])
            for ti, si in zip(t, s):
                w.writerow([repr(float(ti)), repr(float(si))])


def linear_ramp(T: float) -> Ramp:
    """s(t) = t / T."""
    return Ramp(float(T), np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]),
                "linear")


def shape_ramp(T: float, shape: PulseShape, n: int = 4001) -> Ramp:
    """Ramp whose speed follows ``shape``: s(u) = ∫₀ᵘ û / ∫₀¹ û."""
    u = np.linspace(0.0, 1.0, n)
    total = shape.integral()
    s = shape.cumulative(u) / total
    s[0], s[-1] = 0.0, 1.0
    return Ramp(float(T), u, s, shape(u) / total, f"shape:{shape.name}")
