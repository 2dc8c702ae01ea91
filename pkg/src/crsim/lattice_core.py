"""Frequency lattice, exact resonance enumeration, counting normalisation and X^l norms.

Lattice points are integer vectors k with |k|_inf <= kmax; the physical
frequency is K = k / L. All resonance arithmetic is done in integers:
a triple (k1, k2, k3) is resonant at level muL2 for the output k when

    k1 - k2 + k3 = k   and   |k1|^2 - |k2|^2 + |k3|^2 - |k|^2 = muL2.

Writing k1 = k + z1, k3 = k + z2 gives k2 = k + z1 + z2 and the level
reduces to -2 z1.z2, so only even levels are ever populated.
"""

from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import zeta

__all__ = [
    "LatticeSpec",
    "LatticeField",
    "WeightedNorm",
    "GridField",
    "ResonantIndex",
    "bracket",
    "zn",
    "delta_L",
    "enumerate_resonances",
    "brute_force_resonances",
    "build_resonant_index",
    "resonance_levels",
    "resonant_sum_2d",
    "resonance_count_profile",
    "write_profile_csv",
    "xl_norm",
    "project_irrotational",
    "irrotational_residual",
]

INDEX_MAGIC = b"CRRIDX"
INDEX_VERSION = 1


@dataclass(frozen=True)
class LatticeSpec:
    """Truncated lattice Z_L^n with sup-norm cutoff ``kmax`` on integer indices."""

    n: int
    L: int
    kmax: int | None = None

    def __post_init__(self):
        if self.n not in (2, 3, 4):
            raise ValueError(f"n must be 2, 3 or 4, got {self.n}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.kmax is None:
            object.__setattr__(self, "kmax", 2 * self.L)
        if self.kmax < 1:
            raise ValueError(f"kmax must be >= 1, got {self.kmax}")

    @property
    def side(self) -> int:
        return 2 * self.kmax + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.n

    @property
    def npoints(self) -> int:
        return self.side**self.n

    def axis(self) -> np.ndarray:
        return np.arange(-self.kmax, self.kmax + 1)

    def indices(self) -> np.ndarray:
        """All integer points, shape (npoints, n), in C order of ``shape``."""
        grids = np.meshgrid(*([self.axis()] * self.n), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def momenta(self) -> np.ndarray:
        """Frequencies K = k/L as an array of shape (n, *shape)."""
        grids = np.meshgrid(*([self.axis() / self.L] * self.n), indexing="ij")
        return np.stack(grids)

    def k2(self) -> np.ndarray:
        """Integer |k|^2 on the lattice, shape ``shape``."""
        ax = self.axis()
        out = np.zeros(self.shape, dtype=np.int64)
        for i in range(self.n):
            sh = [1] * self.n
            sh[i] = -1
            out = out + (ax**2).reshape(sh)
        return out

    def flat(self, k) -> int:
        k = np.asarray(k) + self.kmax
        return int(np.ravel_multi_index(tuple(k), self.shape))

    def contains(self, k) -> bool:
        return bool(np.all(np.abs(np.asarray(k)) <= self.kmax))


@dataclass
class LatticeField:
    """d-component complex amplitudes on a truncated lattice; ``values`` has shape (d, *spec.shape)."""

    spec: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim == self.spec.n:
            self.values = self.values[None]
        if self.values.shape[1:] != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} does not match lattice {self.spec.shape}")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, spec: LatticeSpec, d: int = 1) -> "LatticeField":
        return cls(spec, np.zeros((d, *spec.shape), dtype=np.complex128))

    @classmethod
    def from_function(cls, spec: LatticeSpec, fn) -> "LatticeField":
        """Sample ``fn(K)`` where K has shape (n, ...); fn returns (d, ...) or (...)."""
        return cls(spec, np.asarray(fn(spec.momenta()), dtype=np.complex128))

    def mass(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))

    def copy(self) -> "LatticeField":
        return LatticeField(self.spec, self.values.copy())


@dataclass(frozen=True)
class WeightedNorm:
    l: float = 0.0
    N: int = 0

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("weight exponent l must be >= 0")
        if self.N < 0:
            raise ValueError("derivative order N must be >= 0")


@dataclass
class GridField:
    """Samples g_j(K) on a uniform grid over [-kbox, kbox]^n with m points per axis."""

    n: int
    kbox: float
    m: int
    values: np.ndarray
    norm: WeightedNorm = field(default_factory=WeightedNorm)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim == self.n:
            self.values = self.values[None]
        if self.m < 4:
            raise ValueError("grid needs at least 4 points per axis")
        if self.values.shape[1:] != (self.m,) * self.n:
            raise ValueError("values shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid samples must be finite")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2 * self.kbox / (self.m - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.kbox, self.kbox, self.m)

    def momenta(self) -> np.ndarray:
        return np.stack(np.meshgrid(*([self.axis()] * self.n), indexing="ij"))

    @classmethod
    def from_function(cls, n: int, kbox: float, m: int, fn, norm: WeightedNorm | None = None) -> "GridField":
        ax = np.linspace(-kbox, kbox, m)
        K = np.stack(np.meshgrid(*([ax] * n), indexing="ij"))
        return cls(n, kbox, m, fn(K), norm or WeightedNorm())


def bracket(K: np.ndarray) -> np.ndarray:
    """Japanese bracket (1 + |K|^2)^(1/2) for K of shape (n, ...)."""
    return np.sqrt(1.0 + np.sum(np.asarray(K) ** 2, axis=0))


def zn(n: int, L: float) -> float:
    """Resonance counting normalisation Z_n(L)."""
    if n == 2:
        return L * L * math.log(L) / float(zeta(2))
    if n >= 3:
        return float(zeta(n - 1) / zeta(n)) * L ** (2 * n - 2)
    raise ValueError("n must be >= 2")


def delta_L(n: int, L: float) -> float:
    """Lattice-to-continuum discrepancy scale: 1/log L for n=2, 1/L for n>=3."""
    return 1.0 / math.log(L) if n == 2 else 1.0 / L


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _enum_one(k, kmax, c, out):
    """Write all (z1, z2) with z1.z2 = c and k+z1, k+z2, k+z1+z2 in the box.

    Returns the number of rows written to ``out`` (shape (cap, 2n)); -1 if ``out`` is too small.
    """
    n = k.shape[0]
    lo = np.empty(n, np.int64)
    hi = np.empty(n, np.int64)
    for i in range(n):
        lo[i] = -kmax - k[i]
        hi[i] = kmax - k[i]
    z1 = lo.copy()
    z2 = np.empty(n, np.int64)
    zlo = np.empty(n, np.int64)
    zhi = np.empty(n, np.int64)
    cnt = 0
    cap = out.shape[0]
    while True:
        # admissible z2 per coordinate given z1
        for i in range(n):
            zlo[i] = max(lo[i], lo[i] - z1[i])
            zhi[i] = min(hi[i], hi[i] - z1[i])
        r = -1
        for i in range(n):
            if z1[i] != 0:
                r = i
                break
        if r < 0:
            if c == 0:
                for i in range(n):
                    z2[i] = zlo[i]
                while True:
                    if cnt >= cap:
                        return -1
                    for i in range(n):
                        out[cnt, i] = z1[i]
                        out[cnt, n + i] = z2[i]
                    cnt += 1
                    j = n - 1
                    while j >= 0:
                        z2[j] += 1
                        if z2[j] <= zhi[j]:
                            break
                        z2[j] = zlo[j]
                        j -= 1
                    if j < 0:
                        break
        else:
            # loop over the free coordinates of z2, solve for coordinate r
            for i in range(n):
                z2[i] = zlo[i]
            while True:
                s = 0
                for i in range(n):
                    if i != r:
                        s += z1[i] * z2[i]
                num = c - s
                if num % z1[r] == 0:
                    v = num // z1[r]
                    if zlo[r] <= v <= zhi[r]:
                        if cnt >= cap:
                            return -1
                        for i in range(n):
                            out[cnt, i] = z1[i]
                            out[cnt, n + i] = z2[i]
                        out[cnt, n + r] = v
                        cnt += 1
                j = n - 1
                while j >= 0:
                    if j == r:
                        j -= 1
                        continue
                    z2[j] += 1
                    if z2[j] <= zhi[j]:
                        break
                    z2[j] = zlo[j]
                    j -= 1
                if j < 0:
                    break
        j = n - 1
        while j >= 0:
            z1[j] += 1
            if z1[j] <= hi[j]:
                break
            z1[j] = lo[j]
            j -= 1
        if j < 0:
            break
    return cnt


def _enum_pairs(k: np.ndarray, kmax: int, muL2: int) -> np.ndarray:
    """Rows (k1, k2) sorted lexicographically, shape (count, 2n)."""
    k = np.asarray(k, dtype=np.int64)
    n = k.shape[0]
    if muL2 % 2:
        return np.zeros((0, 2 * n), dtype=np.int64)
    c = -(muL2 // 2)
    cap = 1024
    while True:
        buf = np.empty((cap, 2 * n), dtype=np.int64)
        cnt = _enum_one(k, kmax, c, buf)
        if cnt >= 0:
            break
        cap *= 4
    z = buf[:cnt]
    k1 = k + z[:, :n]
    k2 = k + z[:, :n] + z[:, n:]
    pairs = np.concatenate([k1, k2], axis=1)
    order = np.lexsort(pairs.T[::-1])
    return pairs[order]


def enumerate_resonances(spec: LatticeSpec, k, muL2: int = 0) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All (k1, k2) with k3 = k + k2 - k1 in the cutoff and integer level ``muL2``.

    Lexicographic order in (k1, k2).
    """
    k = np.asarray(k, dtype=np.int64)
    if k.shape != (spec.n,):
        raise ValueError(f"k must have {spec.n} components")
    if not spec.contains(k):
        raise ValueError(f"k={tuple(k)} lies outside |k|_inf <= {spec.kmax}")
    n = spec.n
    return [(tuple(int(x) for x in p[:n]), tuple(int(x) for x in p[n:])) for p in _enum_pairs(k, spec.kmax, int(muL2))]


def brute_force_resonances(spec: LatticeSpec, k, muL2: int = 0) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Exhaustive scan over every (k1, k2) in the box, no pruning. Test oracle."""
    k = np.asarray(k, dtype=np.int64)
    pts = spec.indices()
    k1 = pts[:, None, :]
    k2 = pts[None, :, :]
    k3 = k + k2 - k1
    inside = np.all(np.abs(k3) <= spec.kmax, axis=-1)
    lev = np.sum(k1**2, -1) - np.sum(k2**2, -1) + np.sum(k3**2, -1) - int(np.sum(k**2))
    i, j = np.nonzero(inside & (lev == muL2))
    return sorted((tuple(int(x) for x in pts[a]), tuple(int(x) for x in pts[b])) for a, b in zip(i, j))


class ResonantIndex:
    """Adjacency lists of resonant pairs per output mode at one level muL2.

    Stored in compressed form: rows ``offsets[f]:offsets[f+1]`` of ``k1``, ``k2``,
    ``k3`` hold flat lattice indices for the output with flat index f.
    """

    def __init__(self, spec: LatticeSpec, muL2: int, offsets, k1, k2, k3):
        self.spec = spec
        self.muL2 = int(muL2)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.k1 = np.asarray(k1, dtype=np.int64)
        self.k2 = np.asarray(k2, dtype=np.int64)
        self.k3 = np.asarray(k3, dtype=np.int64)
        self.out = np.repeat(np.arange(spec.npoints), np.diff(self.offsets))

    def __len__(self) -> int:
        return int(self.offsets[-1])

    @property
    def mu(self) -> float:
        return self.muL2 / self.spec.L**2

    def entry(self, k) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        f = self.spec.flat(k)
        a, b = self.offsets[f], self.offsets[f + 1]
        pts = self.spec.indices()
        return [(tuple(int(x) for x in pts[i]), tuple(int(x) for x in pts[j])) for i, j in zip(self.k1[a:b], self.k2[a:b])]

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets).reshape(self.spec.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResonantIndex):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.muL2 == other.muL2
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.k1, other.k1)
            and np.array_equal(self.k2, other.k2)
        )

    def save(self, path) -> Path:
        """Binary cache: magic, version, (n, L, kmax, muL2, count), then int64 arrays."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        s = self.spec
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<I", INDEX_VERSION))
            fh.write(struct.pack("<5q", s.n, s.L, s.kmax, self.muL2, len(self)))
            fh.write(self.offsets.astype("<i8").tobytes())
            fh.write(self.k1.astype("<i8").tobytes())
            fh.write(self.k2.astype("<i8").tobytes())
        return path

    @classmethod
    def load(cls, path, spec: LatticeSpec | None = None, muL2: int | None = None) -> "ResonantIndex":
        raw = Path(path).read_bytes()
        buf = io.BytesIO(raw)
        if buf.read(len(INDEX_MAGIC)) != INDEX_MAGIC:
            raise ValueError(f"{path}: not a resonant index file")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != INDEX_VERSION:
            raise ValueError(f"{path}: index version {version}, expected {INDEX_VERSION}")
        n, L, kmax, mu, count = struct.unpack("<5q", buf.read(40))
        stored = LatticeSpec(n, L, kmax)
        if spec is not None and spec != stored:
            raise ValueError(f"{path}: cached for {stored}, requested {spec}")
        if muL2 is not None and muL2 != mu:
            raise ValueError(f"{path}: cached for muL2={mu}, requested {muL2}")
        offsets = np.frombuffer(buf.read(8 * (stored.npoints + 1)), dtype="<i8").astype(np.int64)
        k1 = np.frombuffer(buf.read(8 * count), dtype="<i8").astype(np.int64)
        k2 = np.frombuffer(buf.read(8 * count), dtype="<i8").astype(np.int64)
        return cls(stored, mu, offsets, k1, k2, _third(stored, k1, k2, offsets))


def _third(spec: LatticeSpec, k1, k2, offsets) -> np.ndarray:
    pts = spec.indices()
    out_idx = np.repeat(np.arange(spec.npoints), np.diff(offsets))
    k3 = pts[out_idx] + pts[k2] - pts[k1]
    return np.ravel_multi_index(tuple((k3 + spec.kmax).T), spec.shape).astype(np.int64)


def cache_path(cache_dir, spec: LatticeSpec, muL2: int) -> Path:
    return Path(cache_dir) / f"res_n{spec.n}_L{spec.L}_k{spec.kmax}_mu{muL2}.bin"


def build_resonant_index(spec: LatticeSpec, muL2: int = 0, cache_dir=None) -> ResonantIndex:
    """Resonant index for every output mode; optionally cached on disk."""
    if cache_dir is not None:
        p = cache_path(cache_dir, spec, muL2)
        if p.exists():
            return ResonantIndex.load(p, spec, muL2)
    pts = spec.indices()
    n = spec.n
    chunks1, chunks2, counts = [], [], np.zeros(spec.npoints, dtype=np.int64)
    for f, k in enumerate(pts):
        pairs = _enum_pairs(k, spec.kmax, muL2)
        counts[f] = len(pairs)
        if len(pairs):
            chunks1.append(np.ravel_multi_index(tuple((pairs[:, :n] + spec.kmax).T), spec.shape))
            chunks2.append(np.ravel_multi_index(tuple((pairs[:, n:] + spec.kmax).T), spec.shape))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    k1 = np.concatenate(chunks1) if chunks1 else np.zeros(0, np.int64)
    k2 = np.concatenate(chunks2) if chunks2 else np.zeros(0, np.int64)
    idx = ResonantIndex(spec, muL2, offsets, k1, k2, _third(spec, k1, k2, offsets))
    if cache_dir is not None:
        idx.save(cache_path(cache_dir, spec, muL2))
    return idx


def resonance_levels(spec: LatticeSpec) -> np.ndarray:
    """Every level muL2 attained by some triple inside the cutoff (sorted)."""
    span = 2 * spec.kmax
    ax = np.arange(-span, span + 1)
    # the box condition on (z1, z2) is |z1_i| + |z2_i| <= 2 kmax per coordinate
    a1, a2 = np.meshgrid(ax, ax, indexing="ij")
    ok = np.abs(a1) + np.abs(a2) <= span
    prods = np.unique((a1 * a2)[ok])
    cur = prods
    for _ in range(spec.n - 1):
        cur = np.unique(np.add.outer(cur, prods))
    return np.sort(-2 * cur)


# ---------------------------------------------------------------------------
# matrix-free resonant sum in two dimensions
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _extgcd(a, b):
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b != 0:
        q = a // b
        a, b = b, a - q * b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


@nb.njit(cache=True)
def _tbounds(p, q, lim):
    """Integer t range with |p + t q| <= lim; returns (lo, hi), empty if lo > hi."""
    if q == 0:
        if abs(p) <= lim:
            return -(1 << 40), 1 << 40
        return 1, 0
    a = (-lim - p) / q
    b = (lim - p) / q
    if a > b:
        a, b = b, a
    return int(math.ceil(a - 1e-9)), int(math.floor(b + 1e-9))


@nb.njit(cache=True)
def _add_term(a, out, z1x, z1y, z2x, z2y, w):
    d, N = a.shape[0], a.shape[1]
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


@nb.njit(cache=True)
def _add_term_scalar(a, out, z1x, z1y, z2x, z2y, w):
    N = a.shape[1]
    i0 = max(0, -z1x, -z2x, -z1x - z2x)
    i1 = min(N, N - z1x, N - z2x, N - z1x - z2x)
    j0 = max(0, -z1y, -z2y, -z1y - z2y)
    j1 = min(N, N - z1y, N - z2y, N - z1y - z2y)
    for i in range(i0, i1):
        for j in range(j0, j1):
            out[0, i, j] += w * a[0, i + z1x, j + z1y] * np.conj(a[0, i + z1x + z2x, j + z1y + z2y]) * a[0, i + z2x, j + z2y]


@nb.njit(cache=True)
def _resonant_sum_2d(a, c):
    """sum over z1.z2 = c of (sum_l a_l(K+z1) conj a_l(K+z1+z2)) a_m(K+z2)."""
    d, N = a.shape[0], a.shape[1]
    out = np.zeros_like(a)
    lim = N - 1
    if c == 0:
        # z1 = 0 or z2 = 0 in closed form
        gram = np.zeros((d, d), np.complex128)
        mass = 0.0
        for l in range(d):
            for m in range(d):
                s = 0j
                for i in range(N):
                    for j in range(N):
                        s += np.conj(a[l, i, j]) * a[m, i, j]
                gram[l, m] = s
            mass += gram[l, l].real
        for i in range(N):
            for j in range(N):
                loc = 0.0
                for l in range(d):
                    loc += a[l, i, j].real ** 2 + a[l, i, j].imag ** 2
                for m in range(d):
                    s = 0j
                    for l in range(d):
                        s += a[l, i, j] * gram[l, m]
                    out[m, i, j] = s + (mass - loc) * a[m, i, j]
    for z1x in range(-lim, lim + 1):
        for z1y in range(-lim, lim + 1):
            if z1x == 0 and z1y == 0:
                continue
            g, u, v = _extgcd(abs(z1x), abs(z1y))
            if c % g != 0:
                continue
            # particular solution of z1x*x + z1y*y = c
            px = u * (c // g) * (1 if z1x >= 0 else -1)
            py = v * (c // g) * (1 if z1y >= 0 else -1)
            qx = -z1y // g
            qy = z1x // g
            lx = lim - abs(z1x)
            ly = lim - abs(z1y)
            if lx < 0 or ly < 0:
                continue
            ax, bx = _tbounds(px, qx, lx)
            ay, by = _tbounds(py, qy, ly)
            t0 = max(ax, ay)
            t1 = min(bx, by)
            for t in range(t0, t1 + 1):
                z2x = px + t * qx
                z2y = py + t * qy
                if z2x == 0 and z2y == 0:
                    continue
                if d == 1:
                    # the scalar summand is symmetric in z1 <-> z2
                    if z1x < z2x or (z1x == z2x and z1y < z2y):
                        _add_term_scalar(a, out, z1x, z1y, z2x, z2y, 2.0)
                    elif z1x == z2x and z1y == z2y:
                        _add_term_scalar(a, out, z1x, z1y, z2x, z2y, 1.0)
                else:
                    _add_term(a, out, z1x, z1y, z2x, z2y, 1.0)
    return out


def resonant_sum_2d(values: np.ndarray, muL2: int = 0) -> np.ndarray:
    """Matrix-free resonant sum at level ``muL2`` for n=2 fields of shape (d, N, N).

    Equals, for every output K, the sum over R_mu(K) of
    (sum_l a_l(K1) conj a_l(K2)) a_m(K3).
    """
    a = np.ascontiguousarray(values, dtype=np.complex128)
    if a.ndim == 2:
        a = a[None]
    if muL2 % 2:
        return np.zeros_like(a)
    return _resonant_sum_2d(a, -(muL2 // 2))


# ---------------------------------------------------------------------------
# counting profile
# ---------------------------------------------------------------------------


def resonance_count_profile(
    Ls, n: int = 2, l: float = 9.0, kmax_factor: float = 2.0, mus=(0,), l_min_check: bool = True
) -> list[dict]:
    """Weighted resonant sums S(L) and S(L)/Z_n(L) over a sweep of L.

    S(L) = sup_K <K>^l sum_{R_mu(K)} <K1>^-l <K2>^-l <K3>^-l, maximised over the
    sampled levels ``mus`` (integers muL2). Rows carry a ``warning`` flag when the cutoff
    leaves modes without any non-trivial resonance.
    """
    if l_min_check and l <= 3 * n + 2:
        warnings.warn(f"l={l} <= 3n+2: the resonant-sum bound is not expected to hold")
    rows = []
    for L in Ls:
        spec = LatticeSpec(n, int(L), max(1, int(round(kmax_factor * L))))
        w = bracket(spec.momenta()) ** (-l)
        best = 0.0
        for mu in mus:
            if n == 2:
                s = resonant_sum_2d(w.astype(np.complex128), int(mu))[0].real
            else:
                s = _indexed_weight_sum(spec, w, int(mu))
            best = max(best, float(np.max(s / w)))
        z = zn(n, L)
        trivial_only = spec.kmax < 1
        rows.append({"L": int(L), "Z_n": z, "S": best, "ratio": best / z, "kmax": spec.kmax, "warning": trivial_only})
    return rows


def _indexed_weight_sum(spec: LatticeSpec, w: np.ndarray, muL2: int) -> np.ndarray:
    idx = build_resonant_index(spec, muL2)
    wf = w.ravel()
    terms = wf[idx.k1] * wf[idx.k2] * wf[idx.k3]
    return np.bincount(idx.out, weights=terms, minlength=spec.npoints).reshape(spec.shape)


def write_profile_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("L,Z_n,S,ratio\n")
        for r in rows:
            fh.write(f"{r['L']},{r['Z_n']!r},{r['S']!r},{r['ratio']!r}\n")
    return path


# ---------------------------------------------------------------------------
# norms and projection
# ---------------------------------------------------------------------------


def xl_norm(f, norm: WeightedNorm | float = 0.0) -> float:
    """Weighted sup norm: max over components of sup <K>^l |f|, plus derivative terms on grids."""
    if not isinstance(norm, WeightedNorm):
        norm = WeightedNorm(float(norm))
    if isinstance(f, LatticeField):
        vals, K = f.values, f.spec.momenta()
        h = None
    elif isinstance(f, GridField):
        vals, K = f.values, f.momenta()
        h = f.h
    else:
        raise TypeError("xl_norm expects a LatticeField or GridField")
    if vals.size == 0:
        raise ValueError("empty field")
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is not finite")
    w = bracket(K) ** norm.l
    total = float(np.max(w * np.abs(vals)))
    if norm.N > 0:
        if h is None:
            raise ValueError("derivative norms are only defined on grid fields")
        n = K.shape[0]
        derivs = [vals]
        for _ in range(norm.N):
            nxt = []
            for g in derivs:
                for ax in range(n):
                    nxt.append(np.gradient(g, h, axis=ax + 1))
            derivs = nxt
            total += max(float(np.max(w * np.abs(g))) for g in derivs)
    return total


def project_irrotational(field: LatticeField) -> LatticeField:
    """Apply K K^T / |K|^2 pointwise; zero at K = 0."""
    spec = field.spec
    if field.d != spec.n:
        raise ValueError(f"irrotational projection needs d = n = {spec.n}, got d = {field.d}")
    K = spec.momenta()
    return LatticeField(spec, _project(K, field.values))


def _project(K: np.ndarray, vals: np.ndarray) -> np.ndarray:
    k2 = np.sum(K**2, axis=0)
    safe = np.where(k2 > 0, k2, 1.0)
    dot = np.sum(K * vals, axis=0)
    return np.where(k2 > 0, K * dot / safe, 0.0)


def irrotational_residual(field: LatticeField) -> float:
    """Sup of |f - P f|; zero when f(K) = K G(K) for some scalar G."""
    return float(np.max(np.abs(field.values - project_irrotational(field).values)))
