"""Command-line front end: ``splitwell {potential,spectrum,sweep,optimize,cycle}``.

A run config (YAML or JSON) holds a ``trap`` section with the
:class:`~splitwell.trap.TrapConfig` fields and an optional ``run`` section
with defaults for the flags below. Flags override the file.

Exit codes: 0 success, 2 config or usage error, 3 numerical failure,
4 threshold violation in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .adiabatic import build_coupling_table, sweep_duration, write_coupling_csv, write_excitation_csv
from .calibration import CalibrationTargets, calibrate_geometry
from .constants import TWO_PI
from .errors import ConfigError, NumericalError
from .optimizer import DEFAULT_FLOOR, optimize_ramp
from .ramps import SHAPES, get_shape, linear_ramp
from .spectrum import level_spacings, sweep_spectrum
from .tdse import PotentialTable, interferometer_scan, tdse_grid, write_cycle_csv
from .trap import TrapConfig, potential_curve

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

DEFAULT_T_LIST_MS = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
RAMP_KINDS = ("linear", "optimized")

# thresholds enforced by --check
OMEGA_TOL = 0.15
DEGENERACY_TOL = 0.02
PARITY_RATIO = 1e-6
LINEAR_P_MAX_60MS = 0.02
OPTIMIZED_TOTAL_MAX_30MS = 1e-2
OPTIMIZED_TOTAL_TARGET_30MS = 1e-3
GAIN_RATIO = 0.1
FRINGE_TOL = 0.01


def _parse_pairs(text) -> list[tuple[int, int]]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    pairs = []
    for item in items:
        try:
            i, f = (int(v) for v in str(item).split(":"))
        except ValueError:
            raise ConfigError(f"bad transition pair {item!r}; expected i:f") from None
        pairs.append((i, f))
    if not pairs:
        raise ConfigError("no transition pairs given")
    return pairs


def _parse_floats(text, what: str) -> list[float]:
    items = text if isinstance(text, (list, tuple)) else str(text).replace(",", " ").split()
    try:
        return [float(v) for v in items]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


@dataclass
class RunConfig:
    """Everything a command needs; built from the config file plus flags."""

    trap: TrapConfig
    out: Path = Path("out")
    calibrate: bool = True
    s_points: int = 201
    n_states: int = 6
    half_width_um: float = 8.0
    grid_points: int = 768
    pairs: list = field(default_factory=lambda: [(0, 2), (1, 3)])
    target_pair: tuple = (0, 2)
    ramps: list = field(default_factory=lambda: ["linear"])
    shape: str = "blackman"
    floor_rel: float = DEFAULT_FLOOR
    T_list_ms: list = field(default_factory=lambda: list(DEFAULT_T_LIST_MS))
    potential_s: list = field(default_factory=lambda: [0.0, 0.5, 1.0])
    ramp_T_ms: float = 30.0
    phases: int = 9
    hold_ms: float = 0.0
    hold_mode: str = "imprint"
    allow_cross_parity: bool = False
    threads: int = 1

    def validate(self) -> None:
        if self.s_points < 3:
            raise ConfigError("s_points must be at least 3")
        if not 1 <= self.n_states <= 12:
            raise ConfigError("n_states must lie in [1, 12]")
        if self.half_width_um <= 0 or self.grid_points < 16:
            raise ConfigError("grid must have a positive half width and at least 16 points")
        for i, f in self.pairs + [tuple(self.target_pair)]:
            if not (0 <= i < self.n_states and 0 <= f < self.n_states) or i == f:
                raise ConfigError(f"pair ({i}, {f}) outside the {self.n_states} tracked states")
            if (f - i) % 2 and not self.allow_cross_parity:
                raise ConfigError(f"pair ({i}, {f}) couples opposite parities; "
                                  "pass --allow-cross-parity for diagnostics")
        bad = [r for r in self.ramps if r not in RAMP_KINDS]
        if bad or not self.ramps:
            raise ConfigError(f"ramp must be one of {RAMP_KINDS}")
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}; choose from {sorted(SHAPES)}")
        T = self.T_list_ms
        if not T or any(not np.isfinite(t) or t <= 0 for t in T):
            raise ConfigError("T values must be positive")
        if any(b <= a for a, b in zip(T, T[1:])):
            raise ConfigError("T values must be strictly ascending")
        if not self.ramp_T_ms > 0:
            raise ConfigError("ramp duration must be positive")
        if self.phases < 1 or self.hold_ms < 0:
            raise ConfigError("cycle needs at least one phase and a non-negative hold")
        if self.hold_mode not in ("imprint", "offset"):
            raise ConfigError("hold mode must be 'imprint' or 'offset'")
        if not 0 < self.floor_rel < 1:
            raise ConfigError("floor_rel must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    @property
    def x_grid(self) -> np.ndarray:
        return tdse_grid(self.half_width_um, self.grid_points)

    @property
    def s_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.s_points)


_RUN_KEYS = {
    "calibrate": bool, "s_points": int, "n_states": int, "half_width_um": float,
    "grid_points": int, "pairs": _parse_pairs, "target_pair": lambda v: _parse_pairs(v)[0],
    "ramp": None, "shape": str, "floor_rel": float,
    "T_list_ms": lambda v: _parse_floats(v, "T_list_ms"),
    "potential_s": lambda v: _parse_floats(v, "potential_s"),
    "ramp_T_ms": float, "phases": int, "hold_ms": float, "hold_mode": str,
    "allow_cross_parity": bool, "threads": int, "out": Path,
}


def _read_mapping(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a file (``trap`` and ``run`` sections) and overrides."""
    data = _read_mapping(Path(path)) if path is not None else {}
    unknown = set(data) - {"trap", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    trap = TrapConfig.from_dict(data.get("trap") or {})
    run = dict(data.get("run") or {})
    run.update({k: v for k, v in (overrides or {}).items() if v is not None})
    bad = set(run) - set(_RUN_KEYS)
    if bad:
        raise ConfigError(f"unknown run settings: {sorted(bad)}")
    kw = {}
    for key, value in run.items():
        if key == "ramp":
            kw["ramps"] = [r.strip() for r in (value if isinstance(value, list)
                                               else str(value).split(","))]
            continue
        conv = _RUN_KEYS[key]
        try:
            kw[key] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"run setting {key}: {exc}") from None
    cfg = RunConfig(trap=trap, **kw)
    cfg.validate()
    return cfg


# --- shared pipeline ----------------------------------------------------------


def resolve_trap(run: RunConfig) -> tuple[TrapConfig, dict | None]:
    """The trap to simulate, calibrated first when the run asks for it."""
    if not run.calibrate:
        return run.trap, None
    result = calibrate_geometry(run.trap, CalibrationTargets())
    report = result.report()
    if not result.success:
        log.warning("%s", result.message)
    for k, r in result.residuals.items():
        log.info("calibration residual %s: %+.3g", k, r)
    return result.config, report


def _build(run: RunConfig, trap: TrapConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sweep_spectrum(trap, run.s_grid, run.n_states, run.x_grid, workers=run.threads)


def _tables(run: RunConfig, bundle, pairs):
    return {p: build_coupling_table(bundle, *p) for p in pairs}


def _optimized(run: RunConfig, bundle, tables=None):
    pair = tuple(run.target_pair)
    table = (tables or {}).get(pair) or build_coupling_table(bundle, *pair)
    return optimize_ramp(table, get_shape(run.shape), run.floor_rel)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt_s(s: float) -> str:
    return f"{s:.4f}".rstrip("0").rstrip(".").replace(".", "p") or "0"


# --- commands -----------------------------------------------------------------


def cmd_potential(run: RunConfig, check: bool = False) -> list[str]:
    if not run.potential_s:
        raise ConfigError("empty s-list")
    if any(not 0.0 <= s <= 1.0 for s in run.potential_s):
        raise ConfigError("s values must lie in [0, 1]")
    trap, _ = resolve_trap(run)
    failures = []
    for s in run.potential_s:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            curve = potential_curve(trap, s)
        curve.to_csv(run.out / f"potential_s{_fmt_s(s)}.csv")
        n_min = curve.min_locations.size
        log.info("s=%g: %d minimum/minima, separation %.3f um", s, n_min, curve.well_separation)
        if check and s == 0.0 and n_min != 1:
            failures.append(f"s=0 potential has {n_min} minima, expected 1")
        if check and s == 1.0 and n_min != 2:
            failures.append(f"s=1 potential has {n_min} minima, expected 2")
    return failures


def cmd_spectrum(run: RunConfig, check: bool = False) -> list[str]:
    trap, cal = resolve_trap(run)
    bundle = _build(run, trap)
    if bundle.refinements:
        log.info("s-grid refined at %d points for gauge continuity", len(bundle.refinements))
    E = bundle.energies
    with open(run.out / "levels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s"] + [f"E{k}_over_hbar" for k in range(bundle.n_states)])
        for s, row in zip(bundle.s_grid, E):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
    if cal is not None:
        _write_json(run.out / "calibration.json", cal)
    if not check:
        return []
    failures = []
    w0 = level_spacings(bundle.sets[0])["single"]
    w1 = level_spacings(bundle.sets[-1]).get("pair", np.nan)
    for name, got, want in (("omega_s0", w0, 190.0), ("omega_s1", w1, 240.0)):
        rel = got / (TWO_PI * want) - 1.0
        log.info("%s = 2pi x %.2f Hz (%+.1f%%)", name, got / TWO_PI, 100 * rel)
        if not abs(rel) <= OMEGA_TOL:
            failures.append(f"{name} = 2pi x {got / TWO_PI:.1f} Hz outside ±15% of {want} Hz")
    E1 = E[-1]
    if bundle.n_states >= 4:
        gap = E1[2] - E1[0]
        for a, b in ((0, 1), (2, 3)):
            if not abs(E1[b] - E1[a]) < DEGENERACY_TOL * gap:
                failures.append(f"states {a},{b} not degenerate at s=1")
    if bundle.n_states >= 3:
        t01 = build_coupling_table(bundle, 0, 1, cross_check=False)
        t02 = build_coupling_table(bundle, 0, 2, cross_check=False)
        ratio = np.max(np.abs(t01.a)) / np.max(np.abs(t02.a))
        log.info("max|a01| / max|a02| = %.2e", ratio)
        if not ratio < PARITY_RATIO:
            failures.append(f"parity selection rule violated: ratio {ratio:.2e}")
    return failures


def _envelope_decreasing(T, P) -> bool:
    """Maxima of P over successive octaves of T decrease strictly."""
    T, P = np.asarray(T), np.asarray(P)
    edges = [T[0]]
    while edges[-1] * 2 < T[-1]:
        edges.append(edges[-1] * 2)
    edges.append(T[-1] * (1 + 1e-12))
    maxima = [P[(T >= a) & (T < b)].max() for a, b in zip(edges[:-1], edges[1:])
              if np.any((T >= a) & (T < b))]
    return len(maxima) >= 2 and all(b < a for a, b in zip(maxima, maxima[1:]))


def cmd_sweep(run: RunConfig, check: bool = False) -> list[str]:
    trap, _ = resolve_trap(run)
    bundle = _build(run, trap)
    tables = _tables(run, bundle, run.pairs)
    T_list = [t * 1e-3 for t in run.T_list_ms]
    results = {}
    opt = None
    for kind in run.ramps:
        if kind == "linear":
            family = linear_ramp(1.0)
        else:
            opt = opt or _optimized(run, bundle, tables)
            family = opt.ramp
        results[kind] = {p: sweep_duration(tables[p], family, T_list) for p in run.pairs}
        write_excitation_csv(run.out / f"excitation_{kind}.csv", T_list, results[kind])
    write_coupling_csv(run.out / "couplings.csv", list(tables.values()))
    return _sweep_checks(run, bundle, tables, results, opt) if check else []


def _sweep_checks(run, bundle, tables, results, opt) -> list[str]:
    failures = []
    target = tuple(run.target_pair)
    if target not in tables:
        tables = {**tables, target: build_coupling_table(bundle, *target)}
    t_target = tables[target]
    if "linear" in results:
        # dense scan for the threshold and the envelope
        T = np.arange(10.0, 100.0 + 0.5, 1.0) * 1e-3
        P = np.array([r.probability for r in sweep_duration(t_target, linear_ramp(1.0), T)])
        p60 = P[np.argmin(np.abs(T - 0.06))]
        log.info("linear P%d%d(60 ms) = %.3g", *target, p60)
        if not p60 < LINEAR_P_MAX_60MS:
            failures.append(f"linear P(60 ms) = {p60:.3g} not below {LINEAR_P_MAX_60MS}")
        if not _envelope_decreasing(T, P):
            failures.append("linear excitation envelope does not decrease over 10-100 ms")
    if "optimized" in results:
        opt = opt or _optimized(run, bundle, tables)
        r30 = opt.ramp(0.03)
        total = 0.0
        for p in ((0, 2), (1, 3)):
            if max(p) < bundle.n_states:
                t = tables.get(p) or build_coupling_table(bundle, *p)
                total += sweep_duration(t, r30, [0.03])[0].probability
        log.info("optimized P02 + P13 (30 ms) = %.3g (target %.0e)", total,
                 OPTIMIZED_TOTAL_TARGET_30MS)
        if not total < OPTIMIZED_TOTAL_MAX_30MS:
            failures.append(f"optimized P02 + P13 (30 ms) = {total:.3g} above {OPTIMIZED_TOTAL_MAX_30MS}")
        T = np.arange(20.0, 100.0 + 0.5, 5.0) * 1e-3
        lin = np.array([r.probability for r in sweep_duration(t_target, linear_ramp(1.0), T)])
        opt_p = np.array([r.probability for r in sweep_duration(t_target, opt.ramp, T)])
        best = float(np.min(opt_p / lin))
        log.info("best optimized/linear ratio over 20-100 ms = %.3g", best)
        if not best <= GAIN_RATIO:
            failures.append(f"optimizer gain ratio {best:.3g} never reaches {GAIN_RATIO}")
    return failures


def cmd_optimize(run: RunConfig, check: bool = False) -> list[str]:
    trap, _ = resolve_trap(run)
    bundle = _build(run, trap)
    opt = _optimized(run, bundle)
    T = run.ramp_T_ms * 1e-3
    ramp = opt.ramp(T)
    ramp.to_csv(run.out / "ramp_optimized.csv")
    report = opt.report()
    report["T_s"] = T
    _write_json(run.out / "optimizer_report.json", report)
    log.info("A = %.6g, T0 = %.6g s", opt.A, opt.T0)
    if not check:
        return []
    failures = []
    if ramp.s(0.0) != 0.0 or ramp.s(T) != 1.0:
        failures.append("optimized ramp endpoints are not exact")
    speed = float(np.max(np.abs(ramp.rate(np.linspace(0.0, T, 2001)))))
    ends = max(abs(float(ramp.rate(0.0))), abs(float(ramp.rate(T))))
    if not ends <= 1e-6 * speed:
        failures.append(f"end speeds {ends:.3g} /s are not zero")
    if not abs(report["residuals"]["shooting"]) <= 1e-8:
        failures.append("shooting residual above 1e-8")
    if not report["residuals"]["coupling_reconstruction"] <= 0.01:
        failures.append("generalized coupling deviates from A u(tau) by more than 1%")
    return failures


def cmd_cycle(run: RunConfig, check: bool = False) -> list[str]:
    trap, _ = resolve_trap(run)
    bundle = _build(run, trap)
    table = PotentialTable.from_bundle(bundle, trap.atom_mass)
    T = run.ramp_T_ms * 1e-3
    if "optimized" in run.ramps:
        split = _optimized(run, bundle).ramp(T)
    else:
        split = linear_ramp(T)
    dphis = np.linspace(0.0, TWO_PI, run.phases) if run.phases > 1 else np.array([0.0])
    results = interferometer_scan(table, split, dphis, run.hold_ms * 1e-3, run.hold_mode,
                                  basis=bundle.sets[0], workers=run.threads)
    write_cycle_csv(run.out / "cycle.csv", results)
    if not check:
        return []
    P1 = np.array([r.populations[1] for r in results])
    resid = float(np.max(np.abs(P1 - np.sin(dphis / 2) ** 2)))
    log.info("fringe residual max|P1 - sin^2(dphi/2)| = %.3g", resid)
    return [] if resid < FRINGE_TOL else [f"fringe residual {resid:.3g} not below {FRINGE_TOL}"]


COMMANDS = {
    "potential": cmd_potential,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "cycle": cmd_cycle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (YAML or JSON) with trap/run sections")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--pairs", help="transition pairs, e.g. 0:2,1:3")
    common.add_argument("--target-pair", help="pair the optimizer suppresses (default 0:2)")
    common.add_argument("--ramp", help="linear, optimized or both (comma separated)")
    common.add_argument("--shape", choices=sorted(SHAPES), help="pulse shape of the optimizer")
    common.add_argument("--T-list", dest="T_list_ms", nargs="+", help="ramp durations in ms")
    common.add_argument("--s-list", dest="potential_s", nargs="*", help="s values (potential)")
    common.add_argument("--calibrate", action=argparse.BooleanOptionalAction, default=None,
                        help="fit the free geometry to the trap targets first (default on)")
    common.add_argument("--ramp-T-ms", dest="ramp_T_ms", type=float,
                        help="duration of the written ramp and of the cycle ramps (default 30)")
    common.add_argument("--phases", type=int, help="number of phases in [0, 2pi] (cycle)")
    common.add_argument("--hold-ms", type=float, help="hold duration at s = 1 (cycle)")
    common.add_argument("--allow-cross-parity", action="store_true", default=None,
                        help="permit opposite-parity pairs (diagnostics)")
    common.add_argument("--check", action="store_true",
                        help="verify the command's thresholds; exit 4 on violation")
    common.add_argument("--threads", type=int, help="parallel workers")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="splitwell", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "potential": "write U(x; s) curves",
        "spectrum": "write the level diagram levels.csv",
        "sweep": "write excitation probabilities versus ramp duration",
        "optimize": "write the optimized ramp and the optimizer report",
        "cycle": "simulate the interferometer over a phase scan",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.check:
        # the check summaries are the point of --check; library chatter stays quiet
        log.setLevel(min(logging.INFO, logging.getLogger().level))
    overrides = {
        "out": args.out, "pairs": args.pairs, "target_pair": args.target_pair,
        "ramp": args.ramp, "shape": args.shape, "T_list_ms": args.T_list_ms,
        "potential_s": args.potential_s, "calibrate": args.calibrate,
        "ramp_T_ms": args.ramp_T_ms, "phases": args.phases,
        "hold_ms": args.hold_ms, "allow_cross_parity": args.allow_cross_parity,
        "threads": args.threads,
    }
    try:
        run = load_run_config(args.config, overrides)
        run.out.mkdir(parents=True, exist_ok=True)
        failures = COMMANDS[args.command](run, check=args.check)
    except (ConfigError, OSError) as exc:
        print(f"splitwell: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"splitwell: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if failures:
        for f in failures:
            print(f"CHECK FAILED: {f}", file=sys.stderr)
        return EXIT_CHECK
    if args.check:
        print(f"splitwell {args.command}: all checks passed", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
