"""Interaction-picture integrator for the rescaled cubic lattice system.

Amplitudes a_K(t) = e(-|K|^2 t) u_K(t), with e(x) = exp(2 pi i x), obey

    d/dt a_K = i (eps^2 / L^(2n)) P(K) sum_{S3=0} (sum_l a_l(K1) conj a_l(K2)) a(K3) e(Omega3 t)

where P(K) is the irrotational projector (vector case) or the identity
(coupled case). ResonantOnly keeps only Omega3 = 0 and drops the phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numba as nb
import numpy as np
from scipy import fft as sfft

from .lattice_core import (
    LatticeField,
    LatticeSpec,
    ResonantIndex,
    _project,
    build_resonant_index,
    resonance_levels,
    resonant_sum_2d,
)

__all__ = [
    "NonlinearityKind",
    "Mode",
    "SimState",
    "NumericalAbort",
    "Trajectory",
    "trilinear_resonant",
    "trilinear_full",
    "vnls_rhs",
    "integrate_lattice",
    "nonresonant_h3_sum",
    "normal_form_h3",
]


class NonlinearityKind(str, Enum):
    VECTOR_PROJECTED = "vector"
    COUPLED_CUBIC = "coupled"


class Mode(str, Enum):
    FULL = "full"
    RESONANT = "resonant"


class NumericalAbort(RuntimeError):
    """Raised when the state stops being finite; ``step`` is the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


@dataclass
class SimState:
    a: LatticeField
    t: float = 0.0
    eps: float = 1.0
    mode: Mode = Mode.RESONANT
    kind: NonlinearityKind = NonlinearityKind.COUPLED_CUBIC

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.kind = NonlinearityKind(self.kind)
        if self.kind is NonlinearityKind.VECTOR_PROJECTED and self.a.d != self.a.spec.n:
            raise ValueError("VectorProjected requires d = n")
        if not np.all(np.isfinite(self.a.values)):
            raise ValueError("amplitudes must be finite")


def _indexed_sum(values: np.ndarray, idx: ResonantIndex, phase: complex = 1.0) -> np.ndarray:
    d = values.shape[0]
    af = values.reshape(d, -1)
    pair = np.einsum("lr,lr->r", af[:, idx.k1], af[:, idx.k2].conj()) * phase
    terms = pair[None] * af[:, idx.k3]
    npts = idx.spec.npoints
    out = np.empty((d, npts), dtype=np.complex128)
    for m in range(d):
        out[m] = np.bincount(idx.out, weights=terms[m].real, minlength=npts) + 1j * np.bincount(
            idx.out, weights=terms[m].imag, minlength=npts
        )
    return out.reshape(values.shape)


def trilinear_resonant(values: np.ndarray, spec: LatticeSpec, res: ResonantIndex | None = None) -> np.ndarray:
    """Sum over the resonant set R_0(K) of (sum_l a_l(K1) conj a_l(K2)) a(K3), unnormalised."""
    if res is not None:
        if res.spec != spec or res.muL2 != 0:
            raise ValueError("resonant index does not match the lattice or level 0")
        return _indexed_sum(values, res)
    if spec.n == 2:
        return resonant_sum_2d(values, 0)
    return _indexed_sum(values, build_resonant_index(spec, 0))


def _pad_index(spec: LatticeSpec, M: int):
    idx = spec.axis() % M
    return np.ix_(*([idx] * spec.n))


def trilinear_full(values: np.ndarray, spec: LatticeSpec, t: float, workers: int | None = None) -> np.ndarray:
    """Sum over all triples in the cutoff with phase e(Omega3 t), via zero-padded FFT.

    Padding to M >= 4 kmax + 1 keeps wrap-around away from the output box.
    """
    d = values.shape[0]
    M = sfft.next_fast_len(4 * spec.kmax + 1)
    lin = np.exp(2j * np.pi * spec.k2() * (t / spec.L**2))
    sel = _pad_index(spec, M)
    axes = tuple(range(1, spec.n + 1))
    buf = np.zeros((d,) + (M,) * spec.n, dtype=np.complex128)
    for m in range(d):
        buf[m][sel] = values[m] * lin
    psi = sfft.ifftn(buf, axes=axes, norm="forward", workers=workers)
    rho = np.sum(np.abs(psi) ** 2, axis=0)
    out_full = sfft.fftn(rho[None] * psi, axes=axes, norm="forward", workers=workers)
    out = np.empty_like(values)
    for m in range(d):
        out[m] = out_full[m][sel] * lin.conj()
    return out


def _full_indexed(values, spec, levels: dict, t: float) -> np.ndarray:
    need = set(int(m) for m in resonance_levels(spec))
    missing = sorted(need - set(levels))
    if missing:
        raise ValueError(f"missing resonance levels muL2 = {missing}")
    out = np.zeros_like(values)
    for mu, idx in levels.items():
        if idx.spec != spec:
            raise ValueError("resonant index built for a different lattice")
        out += _indexed_sum(values, idx, np.exp(2j * np.pi * mu * t / spec.L**2))
    return out


def vnls_rhs(state: SimState, res=None, workers: int | None = None) -> LatticeField:
    """da/dt for the interaction-picture system.

    ``res`` may be None (matrix-free kernels), a level-0 ResonantIndex
    (ResonantOnly) or a mapping muL2 -> ResonantIndex covering every level in
    the cutoff (FullOscillatory).
    """
    vals = _rhs_values(state.a.values, state.a.spec, state.t, state.eps, state.mode, state.kind, res, workers)
    return LatticeField(state.a.spec, vals)


def _rhs_values(vals, spec, t, eps, mode, kind, res, workers):
    if mode is Mode.RESONANT:
        if isinstance(res, dict):
            res = res.get(0)
            if res is None:
                raise ValueError("missing resonance levels muL2 = [0]")
        s = trilinear_resonant(vals, spec, res)
    else:
        if isinstance(res, dict):
            s = _full_indexed(vals, spec, res, t)
        elif res is None:
            s = trilinear_full(vals, spec, t, workers)
        else:
            raise ValueError("FullOscillatory needs every resonance level; got a single-level index")
    if kind is NonlinearityKind.VECTOR_PROJECTED:
        s = _project(spec.momenta(), s)
    return (1j * eps**2 / spec.L ** (2 * spec.n)) * s


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    momentum: list = field(default_factory=list)

    def record(self, st: SimState, keep_state: bool):
        v = st.a.values
        K = st.a.spec.momenta()
        dens = np.sum(np.abs(v) ** 2, axis=0)
        self.times.append(st.t)
        self.mass.append(float(dens.sum()))
        self.momentum.append([float(np.sum(K[i] * dens)) for i in range(K.shape[0])])
        if keep_state:
            self.states.append(v.copy())

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = len(self.momentum[0]) if self.momentum else 0
        with open(path, "w") as fh:
            fh.write("t,mass," + ",".join(f"P_{i}" for i in range(n)) + "\n")
            for t, m, p in zip(self.times, self.mass, self.momentum):
                fh.write(f"{t!r},{m!r}," + ",".join(repr(x) for x in p) + "\n")
        return path


def _max_frequency(spec: LatticeSpec) -> float:
    """Largest |2 pi Omega3| inside the cutoff."""
    # |z1_i| + |z2_i| <= 2 kmax bounds each |z1_i z2_i| by kmax^2
    return 2 * math.pi * 2 * spec.n * spec.kmax**2 / spec.L**2


def integrate_lattice(
    state: SimState,
    res=None,
    dt: float = 1e-3,
    steps: int = 1000,
    scheme: str = "rk4",
    stride: int = 1,
    keep_states: bool = False,
    phase_resolution: float = 0.5,
    workers: int | None = None,
) -> tuple[SimState, Trajectory]:
    """Fixed-step RK4; oscillatory phases are evaluated at each stage time.

    ``scheme='rk4-phase'`` subdivides each step so that the fastest phase in
    the cutoff turns by at most ``phase_resolution`` radians per substep.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in ("rk4", "rk4-phase"):
        raise ValueError(f"unknown scheme {scheme!r}")
    sub = 1
    if scheme == "rk4-phase" and state.mode is Mode.FULL:
        sub = max(1, math.ceil(dt * _max_frequency(state.a.spec) / phase_resolution))
    h = dt / sub
    spec = state.a.spec
    traj = Trajectory()
    traj.record(state, keep_states)

    def f(v, t):
        return _rhs_values(v, spec, t, state.eps, state.mode, state.kind, res, workers)

    a = state.a.values.copy()
    t = state.t
    for step in range(steps):
        for _ in range(sub):
            k1 = f(a, t)
            k2 = f(a + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(a + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(a + h * k3, t + h)
            a = a + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        if not np.all(np.isfinite(a)):
            raise NumericalAbort(step)
        if (step + 1) % stride == 0 or step == steps - 1:
            cur = replace(state, a=LatticeField(spec, a.copy()), t=t)
            traj.record(cur, keep_states)
    return replace(state, a=LatticeField(spec, a), t=t), traj


# ---------------------------------------------------------------------------
# first-order normal form
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _h3_sum_2d(a, L2):
    d, N = a.shape[0], a.shape[1]
    out = np.zeros_like(a)
    lim = N - 1
    for z1x in range(-lim, lim + 1):
        for z1y in range(-lim, lim + 1):
            if z1x == 0 and z1y == 0:
                continue
            lx = lim - abs(z1x)
            ly = lim - abs(z1y)
            for z2x in range(-lx, lx + 1):
                for z2y in range(-ly, ly + 1):
                    c = z1x * z2x + z1y * z2y
                    if c == 0:
                        continue
                    w = L2 / (2.0 * np.pi * (-2.0 * c))
                    i0 = max(0, -z1x, -z2x, -z1x - z2x)
                    i1 = min(N, N - z1x, N - z2x, N - z1x - z2x)
                    j0 = max(0, -z1y, -z2y, -z1y - z2y)
                    j1 = min(N, N - z1y, N - z2y, N - z1y - z2y)
                    for i in range(i0, i1):
                        for j in range(j0, j1):
                            s = 0j
                            for l in range(d):
                                s += a[l, i + z1x, j + z1y] * np.conj(a[l, i + z1x + z2x, j + z1y + z2y])
                            s *= w
                            for m in range(d):
                                out[m, i, j] += s * a[m, i + z2x, j + z2y]
    return out


def nonresonant_h3_sum(values: np.ndarray, spec: LatticeSpec, levels: dict | None = None) -> np.ndarray:
    """sum over S3=0, Omega3 != 0 of (1/(2 pi Omega3)) (sum_l u_l(K1) conj u_l(K2)) u(K3)."""
    if spec.n == 2 and levels is None:
        return _h3_sum_2d(np.ascontiguousarray(values, dtype=np.complex128), float(spec.L**2))
    if levels is None:
        levels = {int(m): build_resonant_index(spec, int(m)) for m in resonance_levels(spec) if m != 0}
    out = np.zeros_like(values)
    for mu, idx in levels.items():
        if mu == 0:
            continue
        out += _indexed_sum(values, idx) * (spec.L**2 / (2 * np.pi * mu))
    return out


def normal_form_h3(
    u: LatticeField, eps: float, kind: NonlinearityKind = NonlinearityKind.COUPLED_CUBIC, levels: dict | None = None
) -> LatticeField:
    """v = u - (eps^2 / L^(2n)) P(K) sum_{Omega3 != 0} (1/(2 pi Omega3)) [...]."""
    spec = u.spec
    kind = NonlinearityKind(kind)
    s = nonresonant_h3_sum(u.values, spec, levels)
    if kind is NonlinearityKind.VECTOR_PROJECTED:
        if u.d != spec.n:
            raise ValueError("VectorProjected requires d = n")
        s = _project(spec.momenta(), s)
    return LatticeField(spec, u.values - (eps**2 / spec.L ** (2 * spec.n)) * s)
