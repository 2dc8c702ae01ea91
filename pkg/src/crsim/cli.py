"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``), applies
``--set key=value`` overrides, writes its outputs plus ``manifest.json`` under
``--out`` and exits with 0 on success, 2 on configuration errors and 3 on a
numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .cr_dynamics import (
    e1_closed_form,
    e1_family_state,
    integrate_cr,
    integrate_e1,
)
from .cr_operator import (
    HermiteState,
    check_identities,
    cr_T_hermite,
    cr_T_oscillator,
    hamiltonian_gradient,
    hamiltonian_hermite,
    hermite_tensor,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    profile_values,
    resonant_clock,
    run_scaling_study,
    run_theorem1,
    write_scaling_csv,
)
from .lattice_core import (
    LatticeField,
    LatticeSpec,
    brute_force_resonances,
    build_resonant_index,
    enumerate_resonances,
)
from .vnls_sim import Mode, NonlinearityKind, NumericalAbort, SimState, integrate_lattice

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
CACHE_ENV = "CR_RESONANT_CACHE"
SUBCOMMANDS = ("resonances", "vnls", "cr", "eigen", "theorem1", "scaling", "validate")


def _cache_dir() -> Path | None:
    v = os.environ.get(CACHE_ENV)
    return Path(v) if v else None


def load_config(path, overrides=(), seed: int | None = None) -> ExperimentConfig:
    """Config file (JSON; TOML when the interpreter ships tomllib) plus overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        try:
            if p.suffix == ".toml":
                try:
                    import tomllib
                except ImportError:
                    raise ConfigError(f"{p}: TOML configs need Python >= 3.11; use JSON") from None
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except (json.JSONDecodeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{p}: cannot parse config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: config must be a mapping")
    cfg = ExperimentConfig.from_dict(data).with_overrides(list(overrides))
    if seed is not None:
        cfg = cfg.with_overrides([f"seed={int(seed)}"])
    return cfg


def _versions() -> dict:
    return {
        "crsim": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_manifest(out: Path, sub: str, cfg: ExperimentConfig, threads: int, outputs, wall: float, code: int) -> Path:
    man = {
        "subcommand": sub,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "threads": threads,
        "versions": _versions(),
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
        "exit_code": code,
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_seconds": wall,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=1, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def cmd_resonances(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    path = out / "resonances.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "kmax", "muL2", "modes", "triples", "min_per_mode", "max_per_mode", "seconds"])
        for L in cfg.L:
            spec = LatticeSpec(cfg.n, int(L), max(1, int(round(cfg.kbox * L))))
            for mu in cfg.scaling_mus:
                t0 = time.perf_counter()
                idx = build_resonant_index(spec, int(mu), _cache_dir())
                counts = idx.counts()
                w.writerow([L, spec.kmax, mu, spec.npoints, len(idx), counts.min(), counts.max(), repr(time.perf_counter() - t0)])
    return [path]


def cmd_vnls(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    paths = []
    for L in cfg.L:
        spec = LatticeSpec(cfg.n, int(L), max(1, int(round(cfg.kbox * L))))
        g0 = profile_values(cfg.profile, cfg.profile_params, spec.momenta(), cfg.d)
        clock = resonant_clock(cfg, L)
        TR = clock["T_R"]
        for mode in cfg.modes:
            per_unit = cfg.resonant_steps if mode == "resonant" else math.ceil(TR / cfg.dt)
            steps = max(cfg.outputs, math.ceil(per_unit * cfg.horizon))
            st = SimState(LatticeField(spec, g0), 0.0, clock["eps"], Mode(mode), NonlinearityKind(cfg.kind))
            _, traj = integrate_lattice(st, None, dt=cfg.horizon * TR / steps, steps=steps, stride=max(1, steps // cfg.outputs))
            paths.append(traj.write_csv(out / f"vnls_L{L}_{mode}.csv"))
    return paths


def cmd_cr(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    rng = np.random.default_rng(cfg.seed)
    st = HermiteState.random(rng, cfg.d, args.lmax)
    st = HermiteState(st.coeffs / math.sqrt(st.mass()), args.lmax)
    tensor = hermite_tensor(args.lmax, cache_dir=_cache_dir())
    steps = max(1, round(args.t / args.dt))
    traj = integrate_cr(st, tensor, dt=args.dt, steps=steps, stride=max(1, steps // 50), keep_states=True)
    st.dump_json(out / "initial_state.json")
    traj.states[-1].dump_json(out / "final_state.json")
    return [traj.write_csv(out / "conserved.csv"), out / "initial_state.json", out / "final_state.json"]


def cmd_eigen(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    rng = np.random.default_rng(cfg.seed)
    try:
        c0, kw = e1_family_state(args.family, args.d, rng)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    steps = max(1, round(args.t / args.dt))
    stride = max(1, steps // 200)
    ts, ys = integrate_e1(c0, args.dt, steps, stride=stride)
    closed = [s.c for s in e1_closed_form(args.family, c0, ts, **kw)]
    path = out / f"e1_family{args.family}_d{args.d}.csv"
    cols = [f"{part}_{j}_{s}" for j in range(args.d) for s in ("p", "m") for part in ("re", "im")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"closed_{c}" for c in cols] + [f"rk4_{c}" for c in cols] + ["abs_diff"])
        for t, y, c in zip(ts, ys, closed):
            flat = lambda a: [repr(float(v)) for z in a.ravel() for v in (z.real, z.imag)]  # noqa: E731
            w.writerow([repr(float(t))] + flat(c) + flat(y) + [repr(float(np.abs(y - c).max()))])
    return [path]


def cmd_theorem1(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    report = run_theorem1(cfg, jobs=args.threads)
    return emit_report(report, out)


def cmd_scaling(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    rows = run_scaling_study(cfg)
    return [write_scaling_csv(rows, out / "scaling.csv")]


def validation_suite(cfg: ExperimentConfig) -> list[dict]:
    """Fast invariant checks; each entry carries the measured value and its tolerance."""
    rng = np.random.default_rng(cfg.seed)
    checks = []

    def add(name, value, tol):
        checks.append({"check": name, "value": float(value), "tol": float(tol), "passed": bool(value <= tol)})

    for n, kmax in ((2, 2), (3, 1)):
        spec = LatticeSpec(n, 1, kmax)
        bad = 0
        for k in spec.indices()[:: max(1, spec.npoints // 7)]:
            for mu in (0, 2, -4):
                bad += set(enumerate_resonances(spec, k, mu)) != set(brute_force_resonances(spec, k, mu))
        add(f"resonance oracle n={n}", bad, 0)

    tensor = hermite_tensor(3)
    worst = 0.0
    for _ in range(3):
        st = HermiteState.random(rng, cfg.d, 3)
        a, b = cr_T_hermite(st, tensor).coeffs, cr_T_oscillator(st).coeffs
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(a))
    add("hermite vs oscillator", worst, 1e-10)

    g = HermiteState.from_dict({(0, 0, 0): 1.0}, 1, 3)
    add("gaussian eigenvalue", abs(cr_T_hermite(g, tensor).get(0, 0, 0) - math.pi / 2), 1e-8)

    st = HermiteState.random(rng, 2, 3)
    st = HermiteState(st.coeffs / math.sqrt(st.mass()), 3)
    traj = integrate_cr(st, tensor, dt=1e-3, steps=500, stride=500, keep_states=False)
    r0, r1 = traj.conserved[0].as_row(), traj.conserved[-1].as_row()
    for key in ("M", "L_0", "E"):
        add(f"hermite flow drift {key}", abs(r1[key] - r0[key]) / abs(r0[key]), 1e-10)

    worst = 0.0
    for fam in range(1, 7):
        c0, kw = e1_family_state(fam, 2, rng)
        ts, ys = integrate_e1(c0, 1e-3, 2000, stride=200)
        cf = np.array([s.c for s in e1_closed_form(fam, c0, ts, **kw)])
        worst = max(worst, float(np.abs(ys - cf).max()))
    add("E1 closed forms", worst, 1e-6)

    st = HermiteState.random(rng, 2, 3)
    grad = hamiltonian_gradient(st, tensor)
    h = 1e-6
    fd = np.zeros_like(st.coeffs)
    for idx in np.ndindex(st.coeffs.shape):
        for unit, part in ((1.0, 0.5), (1j, 0.5j)):
            cp, cm = st.coeffs.copy(), st.coeffs.copy()
            cp[idx] += h * unit
            cm[idx] -= h * unit
            fd[idx] += part * (hamiltonian_hermite(HermiteState(cp, 3), tensor) - hamiltonian_hermite(HermiteState(cm, 3), tensor)) / (2 * h)
    add("energy gradient", np.linalg.norm(fd - grad) / np.linalg.norm(grad), 1e-6)

    # mu from the eigen-equation, independent of the energy identity
    mu = float(cr_T_hermite(g, tensor).get(0, 0, 0).real)
    res = check_identities(g, lam=0.0, mu=mu, tensor=tensor)
    add("energy identity", abs(res["energy_residual"]), 1e-8)
    add("pohozaev identity", abs(res["pohozaev_residual"]), 1e-8)
    return checks


def cmd_validate(cfg: ExperimentConfig, args, out: Path) -> list[Path]:
    checks = validation_suite(cfg)
    path = out / "validate.json"
    path.write_text(json.dumps(checks, indent=1))
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}: {c['value']:.3e} (tol {c['tol']:.0e})")
    if not all(c["passed"] for c in checks):
        raise NumericalAbort(-1, "validation suite failed")
    return [path]


COMMANDS = {
    "resonances": cmd_resonances,
    "vnls": cmd_vnls,
    "cr": cmd_cr,
    "eigen": cmd_eigen,
    "theorem1": cmd_theorem1,
    "scaling": cmd_scaling,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    common.add_argument("--out", help="output directory (default: crsim-runs/<subcommand>)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p = argparse.ArgumentParser(prog="crsim", description="Continuous resonant equation experiments")
    p.add_argument("--version", action="version", version=f"crsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("resonances", parents=[common], help="build resonant indices and write per-level counts")
    sub.add_parser("vnls", parents=[common], help="integrate the lattice system and write mass/momentum series")
    s = sub.add_parser("cr", parents=[common], help="integrate the CR flow in the Hermite basis")
    s.add_argument("--lmax", type=int, default=3)
    s.add_argument("--t", type=float, default=5.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s = sub.add_parser("eigen", parents=[common], help="closed form vs RK4 on the first eigenspace")
    s.add_argument("--family", type=int, required=True, choices=range(1, 7))
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--t", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=1e-3)
    sub.add_parser("theorem1", parents=[common], help="lattice flows against the CR reference over the L sweep")
    sub.add_parser("scaling", parents=[common], help="resonant-sum scaling S(L)/Z_n(L)")
    sub.add_parser("validate", parents=[common], help="fast invariant suite")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    out = Path(args.out or Path("crsim-runs") / args.command)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = max(1, int(args.threads))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, outputs = EXIT_OK, []
    try:
        outputs = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    write_manifest(out, args.command, cfg, threads, outputs, time.perf_counter() - started, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
