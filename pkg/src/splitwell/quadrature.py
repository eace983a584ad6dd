"""Oscillatory quadrature with a cumulative phase.

Integrals of the form ``∫ g(u) exp(i φ(u)) du`` are evaluated panel by
panel with ``g`` and ``φ`` both linear inside each panel. The exponential is
integrated exactly, so accuracy is limited only by how well ``g`` and ``φ``
are resolved, not by the number of samples per oscillation.
"""

from __future__ import annotations

import numpy as np

_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 10


def _panel_moments(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """I0 = ∫₀¹ e^{iθv} dv and I1 = ∫₀¹ v e^{iθv} dv, elementwise."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < _SERIES_CUTOFF
    t = np.where(small, 1.0, theta)
    e = np.exp(1j * t)
    I0 = (e - 1.0) / (1j * t)
    I1 = -1j * e / t + (e - 1.0) / t**2
    if np.any(small):
        z = 1j * theta[small]
        s0 = np.zeros(z.shape, complex)
        s1 = np.zeros(z.shape, complex)
        term = np.ones(z.shape, complex)  # z^k / k!
        for k in range(_SERIES_TERMS):
            s0 += term / (k + 1)
            s1 += term / (k + 2)
            term = term * z / (k + 1)
        I0[small] = s0
        I1[small] = s1
    return I0, I1


def cumulative_phase(u: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """Trapezoidal running integral of ``rate`` over ``u``, starting at 0."""
    u = np.asarray(u, dtype=float)
    rate = np.asarray(rate, dtype=float)
    out = np.zeros_like(u)
    out[1:] = np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(u))
    return out


def phase_integral(u: np.ndarray, g: np.ndarray, phi: np.ndarray) -> complex:
    """∫ g(u) e^{iφ(u)} du with g and φ piecewise linear between the samples."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(g)
    phi = np.asarray(phi, dtype=float)
    h = np.diff(u)
    theta = np.diff(phi)
    I0, I1 = _panel_moments(theta)
    # g_k (I0 - I1) + g_{k+1} I1 on each panel
    panel = h * np.exp(1j * phi[:-1]) * (g[:-1] * (I0 - I1) + g[1:] * I1)
    return complex(np.sum(panel))


def fourier_integral(func, omega: float, n: int = 4096) -> complex:
    """∫₀¹ f(τ) e^{iωτ} dτ for a smooth callable ``f``."""
    tau = np.linspace(0.0, 1.0, n + 1)
    return phase_integral(tau, func(tau), omega * tau)
