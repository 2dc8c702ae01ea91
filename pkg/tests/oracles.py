"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def box(n: int, kmax: int):
    return list(itertools.product(range(-kmax, kmax + 1), repeat=n))


def sq(k) -> int:
    return sum(x * x for x in k)


def resonances(n: int, kmax: int, k, muL2: int) -> set:
    """Exhaustive double loop over (k1, k2) with no pruning."""
    k = tuple(k)
    out = set()
    for k1 in box(n, kmax):
        for k2 in box(n, kmax):
            k3 = tuple(k[i] + k2[i] - k1[i] for i in range(n))
            if max(abs(x) for x in k3) > kmax:
                continue
            if sq(k1) - sq(k2) + sq(k3) - sq(k) == muL2:
                out.add((k1, k2))
    return out


def trilinear(values: np.ndarray, n: int, L: int, kmax: int, t: float | None) -> np.ndarray:
    """Triple loop over K1 - K2 + K3 = K in the box.

    t=None keeps only Omega3 = 0 triples; otherwise every triple carries
    exp(2 pi i Omega3 t) with Omega3 = (|k1|^2 - |k2|^2 + |k3|^2 - |k|^2) / L^2.
    """
    pts = box(n, kmax)
    pos = {p: i for i, p in enumerate(pts)}
    d = values.shape[0]
    flat = values.reshape(d, -1)
    out = np.zeros_like(flat)
    for k in pts:
        acc = np.zeros(d, dtype=complex)
        for k1 in pts:
            for k2 in pts:
                k3 = tuple(k[i] + k2[i] - k1[i] for i in range(n))
                if k3 not in pos:
                    continue
                om = sq(k1) - sq(k2) + sq(k3) - sq(k)
                if t is None:
                    if om:
                        continue
                    ph = 1.0
                else:
                    ph = np.exp(2j * np.pi * om * t / L**2)
                rho = np.sum(flat[:, pos[k1]] * np.conj(flat[:, pos[k2]]))
                acc += ph * rho * flat[:, pos[k3]]
        out[:, pos[k]] = acc
    return out.reshape(values.shape)


def h3(values: np.ndarray, n: int, L: int, kmax: int) -> np.ndarray:
    """Triple loop for the non-resonant sum weighted by 1 / (2 pi Omega3)."""
    pts = box(n, kmax)
    pos = {p: i for i, p in enumerate(pts)}
    d = values.shape[0]
    flat = values.reshape(d, -1)
    out = np.zeros_like(flat)
    for k in pts:
        for k1 in pts:
            for k2 in pts:
                k3 = tuple(k[i] + k2[i] - k1[i] for i in range(n))
                if k3 not in pos:
                    continue
                om = sq(k1) - sq(k2) + sq(k3) - sq(k)
                if om == 0:
                    continue
                rho = np.sum(flat[:, pos[k1]] * np.conj(flat[:, pos[k2]]))
                out[:, pos[k]] += rho * flat[:, pos[k3]] * L**2 / (2 * np.pi * om)
    return out.reshape(values.shape)


def wirtinger_gradient(fun, c: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Centred differences of d fun / d conj(c) = (d/dx + i d/dy) / 2."""
    g = np.zeros_like(c)
    for idx in np.ndindex(c.shape):
        for unit, weight in ((1.0, 0.5), (1j, 0.5j)):
            cp, cm = c.copy(), c.copy()
            cp[idx] += h * unit
            cm[idx] -= h * unit
            g[idx] += weight * (fun(cp) - fun(cm)) / (2 * h)
    return g


def hermite_function(p: int, q: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """psi_{p,q} from the Laguerre closed form, independent of the ladder construction.

    psi_{p,q} = (-1)^min * sqrt(min!/(pi max!)) * zeta^(p-q) L_min^(|p-q|)(r^2) e^{-r^2/2},
    with zeta = z for p >= q and conj(z) otherwise.
    """
    from scipy.special import eval_genlaguerre

    z = x + 1j * y
    r2 = x * x + y * y
    lo, hi = min(p, q), max(p, q)
    zeta = z if p >= q else np.conj(z)
    norm = math.sqrt(math.factorial(lo) / (math.pi * math.factorial(hi)))
    return (-1) ** lo * norm * zeta ** (hi - lo) * eval_genlaguerre(lo, hi - lo, r2) * np.exp(-r2 / 2)


def phi(l: int, m: int, x, y):
    return hermite_function((l + m) // 2, (l - m) // 2, x, y)



def resonance_codes(n: int, kmax: int, k, muL2: int) -> np.ndarray:
    """Exhaustive search over (k1, k2), returned as sorted codes f(k1) * N + f(k2).

    f is the row-major index of k + kmax in the box and N the number of box points.
    """
    side = 2 * kmax + 1
    N = side**n
    pts = np.array(box(n, kmax), dtype=np.int64)
    k = np.asarray(k, dtype=np.int64)
    i1 = np.repeat(np.arange(N), N)
    i2 = np.tile(np.arange(N), N)
    k1, k2 = pts[i1], pts[i2]
    k3 = k[None] + k2 - k1
    ok = np.all(np.abs(k3) <= kmax, axis=1)
    om = np.sum(k1 * k1, 1) - np.sum(k2 * k2, 1) + np.sum(k3 * k3, 1) - int(k @ k)
    ok &= om == muL2
    return np.sort(i1[ok] * N + i2[ok])
