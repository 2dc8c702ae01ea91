"""Reproduction harness: lattice-versus-CR comparison and resonant-sum scaling.

The comparison samples g0 on Z_L^n, evolves the interaction-picture lattice
system for t in [0, horizon * T_R] and measures

    e(L, t) = || a(t) - g(2 t / T_R) ||_{X^l}

against a CR reference. The factor 2 converts the resonant clock: with the
counting normalisation Z_n(L) the lattice resonant sum approaches 2 T.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cr_dynamics import integrate_cr
from .cr_operator import HermiteState, evaluate_hermite, hermite_modes, hermite_tensor
from .lattice_core import (
    LatticeField,
    LatticeSpec,
    bracket,
    delta_L,
    resonance_count_profile,
    xl_norm,
    zn,
)
from .vnls_sim import Mode, NonlinearityKind, SimState, integrate_lattice

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ComparisonReport",
    "PROFILES",
    "profile_values",
    "resonant_clock",
    "run_theorem1",
    "run_scaling_study",
    "emit_report",
    "load_report",
    "write_scaling_csv",
]

RESONANT_CLOCK = 2.0
PROFILES = ("gaussian", "gaussian_k", "hermite")
REPORT_COLUMNS = ("L", "mode", "t", "t_over_TR", "error", "T_R", "delta", "eps2_Lgamma", "eps", "kmax")


class ConfigError(ValueError):
    """Invalid or unsafe experiment configuration."""


@dataclass
class ExperimentConfig:
    """Settings for a comparison run or scaling sweep.

    eps^2 = c * L^(-eps_exponent); eps_exponent defaults to gamma, which keeps
    eps^2 L^gamma = c fixed across the sweep. kmax = round(kbox * L).
    """

    n: int = 2
    d: int = 1
    kind: str = "coupled"
    L: list = field(default_factory=lambda: [8, 16, 32])
    c: float = 1.0
    gamma: float = 0.5
    eps_exponent: float | None = None
    smallness: float = 1.0
    l: float = 5.0
    kbox: float = 2.0
    profile: str = "gaussian"
    profile_params: dict = field(default_factory=lambda: {"sigma": 0.35, "amplitude": 1.0})
    horizon: float = 1.0
    outputs: int = 4
    dt: float = 0.2
    resonant_steps: int = 10
    modes: list = field(default_factory=lambda: ["resonant", "full"])
    reference: str = "exact"
    reference_steps: int = 20
    reference_lmax: int = 8
    tail_tol: float = 1e-3
    seed: int = 0
    scaling_L: list = field(default_factory=lambda: [4, 8, 16, 32])
    scaling_l: float = 9.0
    scaling_kbox: float = 2.0
    scaling_mus: list = field(default_factory=lambda: [0])

    # -- schema ---------------------------------------------------------------

    @classmethod
    def field_types(cls) -> dict:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls()
        for key, value in data.items():
            setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``key=value`` strings; dotted keys reach into ``profile_params``."""
        data = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            key = key.strip()
            value = _parse_value(raw)
            if "." in key:
                head, sub = key.split(".", 1)
                if head != "profile_params":
                    raise ConfigError(f"unknown config key: {key}")
                data[head] = dict(data[head])
                data[head][sub] = value
            else:
                if key not in data:
                    raise ConfigError(f"unknown config key: {key}")
                data[key] = value
        return ExperimentConfig.from_dict(data)

    # -- checks ---------------------------------------------------------------

    @property
    def eps_power(self) -> float:
        return self.gamma if self.eps_exponent is None else float(self.eps_exponent)

    def eps2(self, L: float) -> float:
        return self.c * float(L) ** (-self.eps_power)

    def smallness_value(self, L: float) -> float:
        return self.c * float(L) ** (self.gamma - self.eps_power)

    def validate(self) -> None:
        if self.n not in (2, 3, 4):
            raise ConfigError(f"n={self.n} must be 2, 3 or 4")
        if self.d < 1:
            raise ConfigError("d must be positive")
        try:
            NonlinearityKind(self.kind)
        except ValueError:
            raise ConfigError(f"unknown nonlinearity kind {self.kind!r}") from None
        if not self.L or any(int(x) != x or x < 2 for x in self.L):
            raise ConfigError("L must be a non-empty list of integers >= 2")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.eps_exponent is not None and self.eps_exponent < self.gamma:
            raise ConfigError("eps_exponent must be >= gamma")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        for m in self.modes:
            if m not in ("resonant", "full"):
                raise ConfigError(f"unknown mode {m!r}")
        if self.reference not in ("exact", "hermite", "lattice"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.horizon <= 0 or self.dt <= 0 or self.outputs < 1 or self.resonant_steps < 1:
            raise ConfigError("horizon, dt, outputs and resonant_steps must be positive")
        if self.kbox <= 0 or self.c < 0:
            raise ConfigError("kbox must be positive and c non-negative")

    def check_theorem1(self) -> None:
        """Refuse runs outside the comparison regime."""
        self.validate()
        if self.l <= 2 * self.n:
            raise ConfigError(f"comparison norm exponent l={self.l} must exceed 2n={2 * self.n}")
        for L in self.L:
            s = self.smallness_value(L)
            if s > self.smallness:
                raise ConfigError(f"eps^2 L^gamma = {s:.3g} at L={L} exceeds the smallness threshold {self.smallness:g}")
        if self.kind == NonlinearityKind.VECTOR_PROJECTED.value:
            if self.profile != "gaussian_k" or self.d != self.n:
                raise ConfigError("the vector nonlinearity needs the irrotational profile gaussian_k with d = n")
        if self.reference == "exact" and not (self.profile == "gaussian" and self.n == 2 and self.kind == "coupled"):
            raise ConfigError("the exact reference is available for the coupled n=2 gaussian profile only")
        if self.reference == "hermite" and self.n != 2:
            raise ConfigError("the Hermite reference needs n=2")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce(key: str, value, default):
    if key == "eps_exponent":
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number or null, got {value!r}")
    if isinstance(default, bool) or isinstance(value, bool):
        if type(value) is not type(default):
            raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, int) or (isinstance(value, float) and value.is_integer()):
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, list):
            return list(value)
        if isinstance(value, (int, float)):
            return [value]
    elif isinstance(default, dict):
        if isinstance(value, dict):
            return dict(value)
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def profile_values(name: str, params: dict, K: np.ndarray, d: int) -> np.ndarray:
    """Named analytic profile evaluated at momenta K (shape (n, ...)); returns (d, ...)."""
    params = dict(params)
    amp = float(params.pop("amplitude", 1.0))
    n = K.shape[0]
    r2 = np.sum(K**2, axis=0)
    if name == "gaussian":
        sigma = float(params.pop("sigma", 1.0 / math.sqrt(2.0)))
        weights = params.pop("weights", [1.0] * d)
        base = amp * np.exp(-r2 / (2 * sigma**2))
        out = np.array([w * base for w in weights], dtype=np.complex128)
    elif name == "gaussian_k":
        sigma = float(params.pop("sigma", 1.0 / math.sqrt(2.0)))
        if d != n:
            raise ConfigError("gaussian_k needs d = n")
        base = amp * np.exp(-r2 / (2 * sigma**2))
        out = (K * base).astype(np.complex128)
    elif name == "hermite":
        if n != 2:
            raise ConfigError("the hermite profile needs n = 2")
        l, m = int(params.pop("l", 0)), int(params.pop("m", 0))
        if (l, m) not in hermite_modes(max(l, 0)):
            raise ConfigError(f"no Hermite function with l={l}, m={m}")
        base = amp * evaluate_hermite(l, m, K[0], K[1])
        out = np.array([base] * d, dtype=np.complex128)
    else:
        raise ConfigError(f"unknown profile {name!r}")
    if params:
        raise ConfigError(f"unknown parameters for profile {name}: {', '.join(sorted(params))}")
    if out.shape[0] != d:
        raise ConfigError(f"profile produced {out.shape[0]} components, expected {d}")
    return out


def _profile_mass(cfg: ExperimentConfig) -> float:
    """Continuum mass of the gaussian profile."""
    p = cfg.profile_params
    amp = float(p.get("amplitude", 1.0))
    sigma = float(p.get("sigma", 1.0 / math.sqrt(2.0)))
    weights = p.get("weights", [1.0] * cfg.d)
    return amp**2 * (math.pi * sigma**2) ** (cfg.n / 2) * float(sum(w * w for w in weights))


def _check_tail(cfg: ExperimentConfig, spec: LatticeSpec, g0: np.ndarray) -> None:
    """X^(l+n+2) weight of g0 on the outer shell of the box must be below tail_tol."""
    K = spec.momenta()
    shell = np.max(np.abs(K), axis=0) >= spec.kmax / spec.L - 0.5 / spec.L
    w = bracket(K) ** (cfg.l + cfg.n + 2)
    tail = float(np.max(w[shell] * np.max(np.abs(g0), axis=0)[shell]))
    if tail > cfg.tail_tol:
        raise ConfigError(
            f"initial data not resolved at L={spec.L}, kmax={spec.kmax}: X^(l+n+2) tail {tail:.2e} > {cfg.tail_tol:.1e}"
        )


def resonant_clock(cfg: ExperimentConfig, L: int) -> dict:
    eps2 = cfg.eps2(L)
    TR = float(L) ** (2 * cfg.n) / (eps2 * zn(cfg.n, L))
    return {"eps": math.sqrt(eps2), "T_R": TR, "delta": delta_L(cfg.n, L), "eps2_Lgamma": cfg.smallness_value(L)}


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    config: dict
    rows: list = field(default_factory=list)
    trend: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def errors(self, mode: str, t_over_TR: float | None = None) -> list[tuple[int, float]]:
        """(L, error) pairs for a mode at a given output time (default: last)."""
        sel = [r for r in self.rows if r["mode"] == mode]
        if not sel:
            return []
        if t_over_TR is None:
            t_over_TR = max(r["t_over_TR"] for r in sel)
        return [(r["L"], r["error"]) for r in sel if math.isclose(r["t_over_TR"], t_over_TR)]


def _reference(cfg: ExperimentConfig, spec: LatticeSpec, g0: np.ndarray, fractions: list[float]) -> list[np.ndarray]:
    """CR solution at s = RESONANT_CLOCK * horizon * f for each output fraction f."""
    s_out = [RESONANT_CLOCK * cfg.horizon * f for f in fractions]
    if cfg.reference == "exact":
        # isotropic gaussians satisfy T(g) = (pi/2) M g in the plane
        rate = 0.5 * math.pi * _profile_mass(cfg)
        return [g0 * np.exp(1j * rate * s) for s in s_out]
    if cfg.reference == "hermite":
        return _hermite_reference(cfg, spec, s_out)
    return _lattice_reference(cfg, spec, s_out)


def _hermite_reference(cfg: ExperimentConfig, spec: LatticeSpec, s_out: list[float]) -> list[np.ndarray]:
    lmax = cfg.reference_lmax
    modes = hermite_modes(lmax)
    # Gauss-Hermite projection of the analytic profile
    x, w = np.polynomial.hermite.hermgauss(2 * lmax + 24)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) * np.exp(X**2 + Y**2)
    vals = profile_values(cfg.profile, cfg.profile_params, np.stack([X, Y]), cfg.d)
    basis = np.array([evaluate_hermite(l, m, X, Y) for l, m in modes])
    coeffs = np.einsum("jxy,sxy,xy->js", vals, basis.conj(), W)
    state = HermiteState(coeffs, lmax)
    tensor = hermite_tensor(lmax)
    K = spec.momenta()
    out = []
    prev = 0.0
    for s in s_out:
        steps = max(1, math.ceil(cfg.reference_steps * (s - prev)))
        if s > prev:
            tr = integrate_cr(state, tensor, dt=(s - prev) / steps, steps=steps, stride=steps, monitor=False)
            state = tr.states[-1]
        prev = s
        out.append(state.sample(K))
    return out


def _lattice_reference(cfg: ExperimentConfig, spec: LatticeSpec, s_out: list[float]) -> list[np.ndarray]:
    fine = LatticeSpec(spec.n, 2 * spec.L, 2 * spec.kmax)
    g = LatticeField(fine, profile_values(cfg.profile, cfg.profile_params, fine.momenta(), cfg.d))
    coarse = tuple([slice(None)] + [slice(None, None, 2)] * spec.n)
    out = []
    prev = 0.0
    for s in s_out:
        steps = max(1, math.ceil(cfg.reference_steps * (s - prev)))
        if s > prev:
            tr = integrate_cr(g, None, dt=(s - prev) / steps, steps=steps, stride=steps, kind=cfg.kind, monitor=False)
            g = tr.states[-1]
        prev = s
        out.append(g.values[coarse].copy())
    return out


def _compare(a: LatticeField, ref: np.ndarray, spec: LatticeSpec, l: float) -> float:
    if a.spec != spec or ref.shape != a.values.shape:
        raise AssertionError("comparison on mismatched lattices")
    return xl_norm(LatticeField(spec, a.values - ref), l)


def _run_one(cfg_dict: dict, L: int) -> tuple[list[dict], dict]:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    spec = LatticeSpec(cfg.n, int(L), max(1, int(round(cfg.kbox * L))))
    g0 = profile_values(cfg.profile, cfg.profile_params, spec.momenta(), cfg.d)
    _check_tail(cfg, spec, g0)
    clock = resonant_clock(cfg, L)
    TR = clock["T_R"]
    fractions = [(i + 1) / cfg.outputs for i in range(cfg.outputs)]
    t0 = time.perf_counter()
    refs = _reference(cfg, spec, g0, fractions)
    timing = {"reference": time.perf_counter() - t0}
    rows = []
    for mode in cfg.modes:
        t0 = time.perf_counter()
        per_unit = cfg.resonant_steps if mode == "resonant" else math.ceil(TR / cfg.dt)
        seg = max(1, math.ceil(per_unit * cfg.horizon / cfg.outputs))
        state = SimState(LatticeField(spec, g0.copy()), 0.0, clock["eps"], Mode(mode), NonlinearityKind(cfg.kind))
        dt = cfg.horizon * TR / (seg * cfg.outputs)
        for i, frac in enumerate(fractions):
            state, _ = integrate_lattice(state, None, dt=dt, steps=seg, stride=seg)
            rows.append(
                {
                    "L": int(L),
                    "mode": mode,
                    "t": state.t,
                    "t_over_TR": cfg.horizon * frac,
                    "error": _compare(state.a, refs[i], spec, cfg.l),
                    "T_R": TR,
                    "delta": clock["delta"],
                    "eps2_Lgamma": clock["eps2_Lgamma"],
                    "eps": clock["eps"],
                    "kmax": spec.kmax,
                }
            )
        timing[mode] = time.perf_counter() - t0
    return rows, timing


def _trend(rows: list[dict], modes) -> dict:
    out = {}
    for mode in modes:
        sel = [r for r in rows if r["mode"] == mode]
        if not sel:
            continue
        last = max(r["t_over_TR"] for r in sel)
        pts = sorted((r["L"], r["error"], r["delta"]) for r in sel if math.isclose(r["t_over_TR"], last))
        Ls = np.array([p[0] for p in pts], dtype=float)
        es = np.array([p[1] for p in pts])
        ds = np.array([p[2] for p in pts])
        entry = {"monotone": bool(np.all(np.diff(es) < 0)), "loglog_slope": None, "delta_slope": None}
        if len(pts) >= 2 and np.all(es > 0):
            entry["loglog_slope"] = float(np.polyfit(np.log(Ls), np.log(es), 1)[0])
            entry["delta_slope"] = float(np.polyfit(ds, es, 1)[0])
        out[mode] = entry
    return out


def run_theorem1(cfg: ExperimentConfig, jobs: int = 1) -> ComparisonReport:
    """Lattice flows against the CR reference over the L sweep."""
    cfg.check_theorem1()
    data = cfg.to_dict()
    Ls = [int(x) for x in cfg.L]
    if jobs > 1 and len(Ls) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(Ls))) as pool:
            results = list(pool.map(_run_one, [data] * len(Ls), Ls))
    else:
        results = [_run_one(data, L) for L in Ls]
    rows = [r for res, _ in results for r in res]
    timing = {str(L): t for L, (_, t) in zip(Ls, results)}
    return ComparisonReport(config=data, rows=rows, trend=_trend(rows, cfg.modes), timing=timing)


# ---------------------------------------------------------------------------
# scaling study
# ---------------------------------------------------------------------------


def run_scaling_study(cfg: ExperimentConfig) -> list[dict]:
    """S(L)/Z_n(L) over cfg.scaling_L with per-L wall-clock seconds."""
    if cfg.scaling_l <= 3 * cfg.n + 2:
        raise ConfigError(f"scaling_l={cfg.scaling_l} must exceed 3n+2={3 * cfg.n + 2}")
    rows = []
    for L in cfg.scaling_L:
        t0 = time.perf_counter()
        (row,) = resonance_count_profile([int(L)], cfg.n, cfg.scaling_l, cfg.scaling_kbox, tuple(cfg.scaling_mus))
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def write_scaling_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "kmax", "Z_n", "S", "ratio", "seconds"])
        for r in rows:
            w.writerow([r["L"], r["kmax"], repr(r["Z_n"]), repr(r["S"]), repr(r["ratio"]), repr(r["seconds"])])
    return path


# ---------------------------------------------------------------------------
# report IO
# ---------------------------------------------------------------------------


def _report_csv(report: ComparisonReport) -> str:
    """One gnuplot data block per L, blocks separated by a blank line."""
    buf = io.StringIO()
    buf.write(",".join(REPORT_COLUMNS) + "\n")
    Ls = []
    for r in report.rows:
        if r["L"] not in Ls:
            Ls.append(r["L"])
    for i, L in enumerate(Ls):
        if i:
            buf.write("\n")
        for r in report.rows:
            if r["L"] == L:
                buf.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in REPORT_COLUMNS) + "\n")
    return buf.getvalue()


def emit_report(report: ComparisonReport, out_dir, fmt: str = "both") -> list[Path]:
    """Write report.csv and/or report.json (config echo, rows, trend, timing)."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"unknown report format {fmt!r}")
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            p = out_dir / "report.csv"
            p.write_text(_report_csv(report))
            written.append(p)
        if fmt in ("json", "both"):
            p = out_dir / "report.json"
            p.write_text(json.dumps(dataclasses.asdict(report), indent=1, sort_keys=True))
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return written


def load_report(path) -> ComparisonReport:
    """Read report.json (or a directory containing it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    data = json.loads(path.read_text())
    return ComparisonReport(data["config"], data["rows"], data["trend"], data["timing"])
