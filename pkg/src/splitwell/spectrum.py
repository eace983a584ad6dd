"""Stationary 1D Schrödinger problem on the trap potential and its sweep over s."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .constants import kinetic_coefficient
from .errors import GridTooSmallError, NumericalError, ParityError, SGridTooCoarseError
from .trap import PotentialCurve, TrapConfig, default_curve_grid, potential_curve

log = logging.getLogger(__name__)

MAX_STATES = 12
BOUNDARY_TOL = 1e-8
PARITY_THRESHOLD = 0.99
MIN_ADJACENT_OVERLAP = 0.9
MAX_REFINE_DEPTH = 6

EVEN, ODD = "even", "odd"


@dataclass
class EigenSet:
    """Lowest eigenpairs at one value of s.

    ``energies`` are E/ħ in rad/s measured from ``U_min``; ``states[k]`` is
    the real wavefunction of state k normalized to ``sum(phi**2) * dx == 1``.
    """

    s: float
    x: np.ndarray
    energies: np.ndarray
    states: np.ndarray
    parity: list
    U: np.ndarray
    U_min: float

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def n_states(self) -> int:
        return len(self.energies)

    def inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return np.vdot(a, b) * self.dx

    def overlap_matrix(self) -> np.ndarray:
        return self.states @ self.states.T * self.dx


def parity_of(phi, x) -> str:
    """Return ``"even"`` or ``"odd"`` from the sign of <phi(x)|phi(-x)>.

    Raises :class:`ParityError` when the normalized overlap is below 0.99 in
    magnitude.
    """
    phi = np.asarray(phi)
    x = np.asarray(x, dtype=float)
    if np.max(np.abs(x + x[::-1])) > 1e-9 * abs(x[1] - x[0]):
        raise ValueError("parity needs a grid symmetric about 0")
    norm = np.vdot(phi, phi).real
    if norm == 0:
        raise ParityError("zero wavefunction has no parity")
    p = np.vdot(phi, phi[::-1]).real / norm
    if p > PARITY_THRESHOLD:
        return EVEN
    if p < -PARITY_THRESHOLD:
        return ODD
    raise ParityError(f"no well-defined parity (<phi(x)|phi(-x)> = {p:.4f})")


def _fix_sign(phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    # x -> 0+ convention: first appreciable sample right of the origin is positive
    right = np.flatnonzero(x > 0)
    vals = phi[right]
    big = np.flatnonzero(np.abs(vals) > 1e-6 * np.max(np.abs(phi)))
    if big.size and vals[big[0]] < 0:
        return -phi
    return phi


def _lowest(diag, off, n):
    if n <= 0:
        return np.empty(0), np.empty((diag.size, 0))
    try:
        return eigh_tridiagonal(diag, off, select="i", select_range=(0, n - 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"tridiagonal eigensolve failed: {exc}") from exc


def _is_symmetric(U: np.ndarray) -> bool:
    scale = max(np.max(np.abs(U)), 1e-300)
    return np.max(np.abs(U - U[::-1])) <= 1e-12 * scale


def solve_stationary(curve: PotentialCurve, n_states: int = 6,
                     check_boundary: bool = True) -> EigenSet:
    """Lowest ``n_states`` eigenpairs of -ħ/2m ∂² + U on the curve's grid.

    Second-order central differences with hard walls just outside the grid.
    Symmetric potentials on even-sized grids are solved separately in the
    even and odd sectors, which keeps parity exact through near-degeneracies.
    ``check_boundary=False`` accepts states that reach the walls, for
    problems where the walls are physical (a box).
    """
    if not 1 <= n_states <= MAX_STATES:
        raise ValueError(f"n_states must be in [1, {MAX_STATES}]")
    x = np.asarray(curve.x, dtype=float)
    U = np.asarray(curve.U, dtype=float)
    n = x.size
    if n < 2 * n_states + 4:
        raise ValueError("grid too coarse for the requested number of states")
    dx = float(x[1] - x[0])
    kin = kinetic_coefficient(curve.mass) / dx**2
    U_min = float(U.min())
    V = U - U_min

    symmetric = n % 2 == 0 and _is_symmetric(U) and np.allclose(x, -x[::-1], atol=1e-9 * dx)
    if symmetric:
        m = n // 2
        Vh = V[m:]
        off = np.full(m - 1, -kin)
        d_even = Vh + 2 * kin
        d_even[0] -= kin
        d_odd = Vh + 2 * kin
        d_odd[0] += kin
        n_even = (n_states + 1) // 2
        Ee, Ve = _lowest(d_even, off, n_even)
        Eo, Vo = _lowest(d_odd, off, n_states - n_even)
        energies = np.empty(n_states)
        states = np.empty((n_states, n))
        parity = []
        for k in range(n_states):
            if k % 2 == 0:
                e, h, sgn = Ee[k // 2], Ve[:, k // 2], 1.0
            else:
                e, h, sgn = Eo[k // 2], Vo[:, k // 2], -1.0
            energies[k] = e
            states[k] = np.concatenate([sgn * h[::-1], h]) / np.sqrt(2.0 * dx)
            parity.append(EVEN if sgn > 0 else ODD)
        if np.any(np.diff(energies) < 0):
            raise NumericalError("even/odd levels do not interleave")
    else:
        energies, vecs = _lowest(V + 2 * kin, np.full(n - 1, -kin), n_states)
        states = vecs.T / np.sqrt(dx)
        parity = []
        for phi in states:
            try:
                parity.append(parity_of(phi, x))
            except (ParityError, ValueError):
                parity.append(None)

    for k in range(n_states):
        states[k] = _fix_sign(states[k], x)
        edge = max(abs(states[k, 0]), abs(states[k, -1]))
        if check_boundary and edge >= BOUNDARY_TOL * np.max(np.abs(states[k])):
            raise GridTooSmallError(
                f"state {k} reaches the grid boundary (relative amplitude {edge / np.max(np.abs(states[k])):.2e})",
                diagnostics={"s": curve.s, "state": k, "half_width": float(x[-1])},
            )
    return EigenSet(curve.s, x, energies, states, parity, U.copy(), U_min)


# --- sweeps -----------------------------------------------------------------


@dataclass
class EigenBundle:
    """Gauge-fixed eigensets along an ordered s-grid.

    State ``n`` is tracked by parity and rank within its parity class, so
    members of a degenerate pair never swap. ``gauge_flips`` lists the
    ``(s_index, state)`` pairs whose sign was flipped for continuity.
    """

    s_grid: np.ndarray
    sets: list
    gauge_flips: list = field(default_factory=list)
    refinements: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return self.sets[0].x

    @property
    def n_states(self) -> int:
        return self.sets[0].n_states

    @property
    def labels(self) -> list:
        return list(self.sets[0].parity)

    @property
    def quantum_numbers(self) -> list:
        return list(range(self.n_states))

    @property
    def energies(self) -> np.ndarray:
        """Array (n_s, n_states) of E/ħ in rad/s."""
        return np.array([es.energies for es in self.sets])

    def states_of(self, k: int) -> np.ndarray:
        """Array (n_s, n_x) with state k along the s-grid."""
        return np.array([es.states[k] for es in self.sets])

    def adjacent_overlaps(self) -> np.ndarray:
        dx = self.sets[0].dx
        return np.array([
            np.sum(a.states * b.states, axis=1) * dx
            for a, b in zip(self.sets[:-1], self.sets[1:])
        ])

    def index_of(self, s: float) -> int:
        j = int(np.argmin(np.abs(self.s_grid - s)))
        if not np.isclose(self.s_grid[j], s, atol=1e-12):
            raise KeyError(f"s={s} is not on the grid")
        return j

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "s_grid": [float(s) for s in self.s_grid],
            "labels": self.labels,
            "quantum_numbers": self.quantum_numbers,
            "gauge_flips": [list(map(int, f)) for f in self.gauge_flips],
            "refinements": [float(s) for s in self.refinements],
            "U_min_rad_s": [es.U_min for es in self.sets],
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        for j, es in enumerate(self.sets):
            with open(d / f"eigs_s{j}.csv", "w", newline="", encoding="utf-8") as fh:
                fh.write("# E_over_hbar_rad_s: " + ",".join(repr(float(e)) for e in es.energies) + "\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x_um"] + [f"phi{k}" for k in range(es.n_states)] + ["U_rad_s"])
                for i, xi in enumerate(es.x):
                    w.writerow([repr(float(xi))] + [repr(float(v)) for v in es.states[:, i]]
                               + [repr(float(es.U[i]))])

    @classmethod
    def load(cls, directory) -> "EigenBundle":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        sets = []
        for j, s in enumerate(meta["s_grid"]):
            with open(d / f"eigs_s{j}.csv", encoding="utf-8") as fh:
                first = fh.readline()
                energies = np.array(first.split(":", 1)[1].split(","), dtype=float)
                rows = list(csv.reader(fh))
            data = np.array(rows[1:], dtype=float)
            x = data[:, 0]
            states = data[:, 1:-1].T
            U = data[:, -1]
            sets.append(EigenSet(s, x, energies, states, list(meta["labels"]), U,
                                 float(meta["U_min_rad_s"][j])))
        return cls(np.array(meta["s_grid"]), sets,
                   [tuple(f) for f in meta["gauge_flips"]], meta.get("refinements", []))


def gauge_fix(sets: list) -> list:
    """Flip signs so that adjacent same-label states overlap positively.

    Returns the list of ``(index, state)`` flips applied; ``sets`` is modified
    in place. Applying it a second time flips nothing.
    """
    flips = []
    for j in range(1, len(sets)):
        prev, cur = sets[j - 1], sets[j]
        ov = np.sum(prev.states * cur.states, axis=1) * cur.dx
        for k in np.flatnonzero(ov < 0):
            cur.states[k] = -cur.states[k]
            flips.append((j, int(k)))
    return flips


def _min_overlap(a: EigenSet, b: EigenSet) -> float:
    return float(np.min(np.abs(np.sum(a.states * b.states, axis=1) * a.dx)))


def sweep_spectrum(cfg: TrapConfig, s_grid=None, n_states: int = 6, x_grid=None,
                   workers: int = 1) -> EigenBundle:
    """Eigensets over ``s_grid`` with continuous gauge.

    Where adjacent states overlap by less than 0.9 the interval is bisected
    (logged as a refinement); if that does not help within a few levels an
    :class:`SGridTooCoarseError` is raised.
    """
    s_grid = np.linspace(0.0, 1.0, 201) if s_grid is None else np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size < 2 or np.any(np.diff(s_grid) <= 0):
        raise ValueError("s_grid must be strictly increasing with at least 2 points")
    if np.max(np.diff(s_grid)) > 0.01 + 1e-12:
        log.warning("s-grid spacing %.3g exceeds 0.01; gauge continuity may force refinement",
                    np.max(np.diff(s_grid)))
    x = default_curve_grid(cfg) if x_grid is None else np.asarray(x_grid, dtype=float)

    def solve(s):
        return solve_stationary(potential_curve(cfg, float(s), x), n_states)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sets = list(pool.map(solve, s_grid))
    else:
        sets = [solve(s) for s in s_grid]

    s_list = list(s_grid)
    refinements = []
    j = 1
    depth = {}
    while j < len(sets):
        if _min_overlap(sets[j - 1], sets[j]) < MIN_ADJACENT_OVERLAP:
            lvl = max(depth.get(s_list[j - 1], 0), depth.get(s_list[j], 0)) + 1
            if lvl > MAX_REFINE_DEPTH:
                raise SGridTooCoarseError(
                    f"adjacent-state overlap below {MIN_ADJACENT_OVERLAP} between "
                    f"s={s_list[j - 1]:.6g} and s={s_list[j]:.6g}",
                    diagnostics={"s_left": s_list[j - 1], "s_right": s_list[j]})
            s_mid = 0.5 * (s_list[j - 1] + s_list[j])
            log.info("refining s-grid: inserting s=%.6g (gauge continuity)", s_mid)
            refinements.append(s_mid)
            depth[s_mid] = lvl
            s_list.insert(j, s_mid)
            sets.insert(j, solve(s_mid))
            continue
        j += 1
    flips = gauge_fix(sets)
    return EigenBundle(np.array(s_list), sets, flips, refinements)


def level_spacings(es: EigenSet) -> dict:
    """Characteristic angular frequencies of an eigenset (rad/s).

    ``single`` is E1 - E0 (harmonic spacing of a single well); ``pair`` is the
    mean spacing between the first two doublets, ((E2+E3) - (E0+E1)) / 2.
    """
    E = es.energies
    out = {"single": float(E[1] - E[0])}
    if len(E) >= 4:
        out["pair"] = float(((E[2] + E[3]) - (E[0] + E[1])) / 2.0)
    return out
