"""The continuous resonant operator T and Hamiltonian E, by three independent routes.

* Special Hermite route (n = 2, coupled case): exact matrix elements
  M(s1, s2, s3, s4) = pi^2 int phi_s1 phi_s2 conj(phi_s3) conj(phi_s4) dx.
* Oscillator route (n = 2): quadrature of the time integral over [-pi/4, pi/4]
  with exp(-itH) applied diagonally in the Hermite basis.
* Lattice route (any n): normalised resonant sums on Z_L^n.

Multi-component convention: T_j(g) = sum M(s1, s2, s3, s4) (sum_a c_{a,s1} conj c_{a,s3}) c_{j,s2}
with output s4, so that E(g) = <T(g), g> and T = (1/2) dE/d conj(c).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .lattice_core import GridField, LatticeField, ResonantIndex, _project, zn
from .vnls_sim import NonlinearityKind, trilinear_resonant

__all__ = [
    "HermiteBasis",
    "HermiteState",
    "HermiteTensor",
    "hermite_modes",
    "ladder_polynomial",
    "hermite_basis",
    "evaluate_hermite",
    "hermite_tensor",
    "cr_T_hermite",
    "cr_T_hermite_dense",
    "cr_T_oscillator",
    "cr_T_lattice",
    "project_to_hermite",
    "hamiltonian",
    "hamiltonian_gradient",
    "moment_matrices",
    "check_identities",
]

TENSOR_MAGIC = b"CRHTEN"
TENSOR_VERSION = 1


@lru_cache(maxsize=None)
def hermite_modes(lmax: int) -> tuple[tuple[int, int], ...]:
    """Admissible (l, m) pairs with l <= lmax, |m| <= l, l + m even, ordered by l then m."""
    return tuple((l, m) for l in range(lmax + 1) for m in range(-l, l + 1, 2))


@lru_cache(maxsize=None)
def ladder_polynomial(p: int, q: int) -> dict:
    """Integer coefficients {(a, b): c} of P with (a_d*)^p (a_g*)^q e^{-|z|^2/2} = P(z, zbar) e^{-|z|^2/2}.

    On the polynomial factor a_d* acts as P -> z P - dP/dzbar and a_g* as P -> zbar P - dP/dz.
    """
    if p == 0 and q == 0:
        return {(0, 0): 1}
    if p > 0:
        prev = ladder_polynomial(p - 1, q)
        out: dict = {}
        for (a, b), c in prev.items():
            out[(a + 1, b)] = out.get((a + 1, b), 0) + c
            if b > 0:
                out[(a, b - 1)] = out.get((a, b - 1), 0) - b * c
    else:
        prev = ladder_polynomial(0, q - 1)
        out = {}
        for (a, b), c in prev.items():
            out[(a, b + 1)] = out.get((a, b + 1), 0) + c
            if a > 0:
                out[(a - 1, b)] = out.get((a - 1, b), 0) - a * c
    return {k: v for k, v in out.items() if v != 0}


def _poly_values(l: int, m: int, z: np.ndarray) -> np.ndarray:
    """Normalised polynomial factor of phi_{l,m} at complex points z."""
    p, q = (l + m) // 2, (l - m) // 2
    poly = ladder_polynomial(p, q)
    zb = np.conj(z)
    val = np.zeros_like(z, dtype=np.complex128)
    for (a, b), c in poly.items():
        val += c * z**a * zb**b
    return val / math.sqrt(math.pi * math.factorial(p) * math.factorial(q))


def evaluate_hermite(l: int, m: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """phi_{l,m}(x, y)."""
    if (l + m) % 2 or abs(m) > l:
        raise ValueError(f"(l, m) = ({l}, {m}) is not admissible")
    z = np.asarray(x) + 1j * np.asarray(y)
    return _poly_values(l, m, z) * np.exp(-0.5 * np.abs(z) ** 2)


@dataclass
class HermiteBasis:
    """Basis tabulated on a tensor Gauss-Hermite rule for the weight exp(-alpha |x|^2).

    ``poly[s, i]`` is the polynomial factor of mode s at node i, so that
    sum_i weights[i] * (product of k polynomial factors) integrates a product of
    k basis functions exactly when alpha = k / 2 and the order is large enough.
    """

    lmax: int
    order: int
    alpha: float
    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    poly: np.ndarray

    @property
    def modes(self):
        return hermite_modes(self.lmax)

    def values(self) -> np.ndarray:
        """Basis function values phi_s(x_i)."""
        return self.poly * np.exp(-0.5 * (self.x**2 + self.y**2))[None]

    def gram(self) -> np.ndarray:
        """Overlap matrix, exact when alpha = 1."""
        g = np.exp((self.alpha - 1.0) * (self.x**2 + self.y**2))
        return (self.poly * (self.weights * g)[None]) @ self.poly.conj().T


def hermite_basis(lmax: int, order: int | None = None, alpha: float = 1.0, tol: float = 1e-10) -> HermiteBasis:
    """Tabulate phi_{l,m}, l <= lmax, on an order x order Gauss-Hermite grid.

    Raises if the Gram residual on the alpha = 1 rule exceeds ``tol``.
    """
    if lmax < 0:
        raise ValueError("lmax must be >= 0")
    if order is None:
        order = 2 * lmax + 4
    t, w = np.polynomial.hermite.hermgauss(order)
    s = 1.0 / math.sqrt(alpha)
    xs, ws = t * s, w * s
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    W = np.outer(ws, ws)
    x, y, wt = X.ravel(), Y.ravel(), W.ravel()
    z = x + 1j * y
    poly = np.array([_poly_values(l, m, z) for l, m in hermite_modes(lmax)])
    basis = HermiteBasis(lmax, order, alpha, x, y, wt, poly)
    check = basis if alpha == 1.0 else hermite_basis(lmax, order, 1.0, tol=np.inf)
    resid = float(np.max(np.abs(check.gram() - np.eye(len(basis.modes)))))
    if resid > tol:
        raise ValueError(f"quadrature order {order} too small for lmax={lmax}: Gram residual {resid:.3e}")
    return basis


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


class HermiteState:
    """Coefficients c[j, s] of a d-component field in the special Hermite basis, s over hermite_modes(lmax)."""

    def __init__(self, coeffs, lmax: int):
        self.lmax = int(lmax)
        c = np.asarray(coeffs, dtype=np.complex128)
        if c.ndim == 1:
            c = c[None]
        if c.shape[1] != len(hermite_modes(self.lmax)):
            raise ValueError(f"expected {len(hermite_modes(self.lmax))} modes for lmax={lmax}, got {c.shape[1]}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        self.coeffs = c

    @property
    def d(self) -> int:
        return self.coeffs.shape[0]

    @property
    def modes(self):
        return hermite_modes(self.lmax)

    @classmethod
    def zeros(cls, d: int, lmax: int) -> "HermiteState":
        return cls(np.zeros((d, len(hermite_modes(lmax)))), lmax)

    @classmethod
    def from_dict(cls, entries: dict, d: int, lmax: int) -> "HermiteState":
        """Build from {(j, l, m): value}; raises on l + m odd."""
        st = cls.zeros(d, lmax)
        pos = {lm: i for i, lm in enumerate(hermite_modes(lmax))}
        for (j, l, m), v in entries.items():
            if (l, m) not in pos:
                raise ValueError(f"(l, m) = ({l}, {m}) is not admissible for lmax={lmax}")
            st.coeffs[j, pos[(l, m)]] = v
        return st

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, lmax: int, scale: float = 1.0) -> "HermiteState":
        n = len(hermite_modes(lmax))
        return cls(scale * (rng.normal(size=(d, n)) + 1j * rng.normal(size=(d, n))) / math.sqrt(2 * n * d), lmax)

    def index(self, l: int, m: int) -> int:
        return self.modes.index((l, m))

    def get(self, j: int, l: int, m: int) -> complex:
        if (l + m) % 2 or abs(m) > l or l > self.lmax:
            return 0j
        return complex(self.coeffs[j, self.index(l, m)])

    def levels(self) -> np.ndarray:
        return np.array([l for l, _ in self.modes])

    def angular(self) -> np.ndarray:
        return np.array([m for _, m in self.modes])

    def mass(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def resize(self, lmax: int) -> "HermiteState":
        """Zero-extend or truncate to another cutoff."""
        out = HermiteState.zeros(self.d, lmax)
        for i, (l, m) in enumerate(self.modes):
            if l <= lmax:
                out.coeffs[:, out.index(l, m)] = self.coeffs[:, i]
        return out

    def copy(self) -> "HermiteState":
        return HermiteState(self.coeffs.copy(), self.lmax)

    def to_rows(self) -> list[dict]:
        return [
            {"j": j, "l": l, "m": m, "re": float(self.coeffs[j, i].real), "im": float(self.coeffs[j, i].imag)}
            for j in range(self.d)
            for i, (l, m) in enumerate(self.modes)
        ]

    def dump_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"d": self.d, "lmax": self.lmax, "rows": self.to_rows()}, indent=1))
        return path

    @classmethod
    def load_json(cls, path) -> "HermiteState":
        doc = json.loads(Path(path).read_text())
        entries = {(r["j"], r["l"], r["m"]): complex(r["re"], r["im"]) for r in doc["rows"]}
        return cls.from_dict(entries, doc["d"], doc["lmax"])

    def sample(self, K: np.ndarray) -> np.ndarray:
        """Field values g_j(K) at points K of shape (2, ...)."""
        vals = np.array([evaluate_hermite(l, m, K[0], K[1]) for l, m in self.modes])
        return np.tensordot(self.coeffs, vals, axes=(1, 0))

    def __eq__(self, other) -> bool:
        return isinstance(other, HermiteState) and self.lmax == other.lmax and np.array_equal(self.coeffs, other.coeffs)


# ---------------------------------------------------------------------------
# tensor
# ---------------------------------------------------------------------------


@dataclass
class HermiteTensor:
    """Dense table M[s1, s2, s3, s4]; zero unless l1 + l2 = l3 + l4 and m1 + m2 = m3 + m4."""

    lmax: int
    dense: np.ndarray

    def __post_init__(self):
        self._sparse = {}

    @property
    def modes(self):
        return hermite_modes(self.lmax)

    def sparse(self, ns: int | None = None):
        """Nonzero entries of the leading ns-mode block as (p, q, r, s, value) arrays."""
        ns = len(self.modes) if ns is None else ns
        if ns not in self._sparse:
            block = self.dense[:ns, :ns, :ns, :ns]
            idx = np.nonzero(block)
            self._sparse[ns] = (*idx, block[idx])
        return self._sparse[ns]

    def entry(self, l1, m1, l2, m2, l3, m3) -> float:
        """M with l4 = l1 + l2 - l3, m4 = m1 + m2 - m3; zero if slot 4 is not admissible."""
        l4, m4 = l1 + l2 - l3, m1 + m2 - m3
        pos = {lm: i for i, lm in enumerate(self.modes)}
        keys = [(l1, m1), (l2, m2), (l3, m3), (l4, m4)]
        if any(k not in pos for k in keys):
            return 0.0
        return float(self.dense[tuple(pos[k] for k in keys)])

    def nonzero(self) -> list[tuple]:
        idx = np.argwhere(np.abs(self.dense) > 0)
        return [tuple(self.modes[i] for i in row) + (float(self.dense[tuple(row)]),) for row in idx]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(TENSOR_MAGIC)
            fh.write(struct.pack("<II", TENSOR_VERSION, self.lmax))
            fh.write(self.dense.astype("<f8").tobytes())
        return path

    @classmethod
    def load(cls, path, lmax: int | None = None) -> "HermiteTensor":
        raw = Path(path).read_bytes()
        if raw[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a Hermite tensor file")
        version, lm = struct.unpack("<II", raw[len(TENSOR_MAGIC) : len(TENSOR_MAGIC) + 8])
        if version != TENSOR_VERSION:
            raise ValueError(f"{path}: tensor version {version}, expected {TENSOR_VERSION}")
        if lmax is not None and lm != lmax:
            raise ValueError(f"{path}: cached for lmax={lm}, requested {lmax}")
        ns = len(hermite_modes(lm))
        dense = np.frombuffer(raw[len(TENSOR_MAGIC) + 8 :], dtype="<f8").reshape((ns,) * 4).copy()
        return cls(lm, dense)


def hermite_tensor(lmax: int, basis: HermiteBasis | None = None, cache_dir=None) -> HermiteTensor:
    """Matrix elements by a quadrature that is exact for the quartic products."""
    if cache_dir is not None:
        p = Path(cache_dir) / f"hermite_tensor_l{lmax}.bin"
        if p.exists():
            return HermiteTensor.load(p, lmax)
    if basis is None or basis.alpha != 2.0 or basis.lmax < lmax:
        # degree <= 4 lmax per axis, exact with order >= 2 lmax + 1
        basis = hermite_basis(lmax, order=2 * lmax + 4, alpha=2.0)
    modes = hermite_modes(lmax)
    ns = len(modes)
    P = basis.poly[:ns]
    w = basis.weights
    ls = np.array([l for l, _ in modes])
    ms = np.array([m for _, m in modes])
    pair = np.einsum("ai,bi->abi", P, P)
    dense = math.pi**2 * np.einsum("abi,cdi->abcd", pair * w[None, None], pair.conj()).real
    sel = (ls[:, None, None, None] + ls[None, :, None, None] == ls[None, None, :, None] + ls[None, None, None, :]) & (
        ms[:, None, None, None] + ms[None, :, None, None] == ms[None, None, :, None] + ms[None, None, None, :]
    )
    dense = np.where(sel, dense, 0.0)
    t = HermiteTensor(lmax, dense)
    if cache_dir is not None:
        t.save(Path(cache_dir) / f"hermite_tensor_l{lmax}.bin")
    return t


# ---------------------------------------------------------------------------
# operator evaluations
# ---------------------------------------------------------------------------


def cr_T_hermite(state: HermiteState, tensor: HermiteTensor) -> HermiteState:
    """T(g) in the Hermite basis via the sparse tensor contraction."""
    if state.lmax > tensor.lmax:
        raise ValueError(f"state lmax {state.lmax} exceeds tensor lmax {tensor.lmax}")
    return HermiteState(_contract(state.coeffs, tensor), state.lmax)


def _contract(c: np.ndarray, tensor: HermiteTensor) -> np.ndarray:
    ns = c.shape[1]
    # modes are ordered by l, so the leading block is the lower cutoff
    p, q, r, s, v = tensor.sparse(ns)
    pair = np.einsum("ap,ar->pr", c, c.conj())
    terms = (v * pair[p, r])[None] * c[:, q]
    out = np.empty_like(c)
    for j in range(c.shape[0]):
        out[j] = np.bincount(s, weights=terms[j].real, minlength=ns) + 1j * np.bincount(s, weights=terms[j].imag, minlength=ns)
    return out


def cr_T_hermite_dense(state: HermiteState, tensor: HermiteTensor) -> HermiteState:
    """Unoptimised six-index contraction over the full dense table."""
    ns = len(state.modes)
    M = tensor.dense[:ns, :ns, :ns, :ns]
    c = state.coeffs
    out = np.zeros_like(c)
    for j in range(c.shape[0]):
        for a in range(c.shape[0]):
            out[j] += np.einsum("pqrs,p,r,q->s", M, c[a], c[a].conj(), c[j])
    return HermiteState(out, state.lmax)


def hamiltonian_hermite(state: HermiteState, tensor: HermiteTensor) -> float:
    return float(np.real(np.vdot(state.coeffs, cr_T_hermite(state, tensor).coeffs)))


def hamiltonian_gradient(state: HermiteState, tensor: HermiteTensor) -> np.ndarray:
    """Wirtinger derivative dE/d conj(c); equals 2 T(g)."""
    return 2.0 * cr_T_hermite(state, tensor).coeffs


def cr_T_oscillator(g, nodes: int = 64, lmax: int | None = None, tail_tol: float = 1e-10, basis: HermiteBasis | None = None):
    """T(g) from the time integral over [-pi/4, pi/4] with exp(-itH) diagonal in the Hermite basis.

    Trapezoid rule on the periodic integrand (``nodes`` points). Accepts a
    HermiteState (returns a HermiteState) or a GridField (expanded to ``lmax``,
    returns a GridField on the same grid).
    """
    if isinstance(g, GridField):
        if lmax is None:
            raise ValueError("lmax is required for grid input")
        st = project_to_hermite(g, lmax, tail_tol)
        out = cr_T_oscillator(st, nodes, basis=basis)
        return GridField(g.n, g.kbox, g.m, out.sample(g.momenta()), g.norm)
    st = g
    if basis is None or basis.alpha != 2.0 or basis.lmax < st.lmax:
        basis = hermite_basis(st.lmax, order=2 * st.lmax + 4, alpha=2.0)
    ns = len(st.modes)
    P = basis.poly[:ns]
    w = basis.weights
    lev = st.levels()
    out = np.zeros_like(st.coeffs)
    h = (math.pi / 2) / nodes
    for t in -math.pi / 4 + h * np.arange(nodes):
        ct = st.coeffs * np.exp(-2j * (lev + 1) * t)[None]
        F = ct @ P  # polynomial factors of exp(-itH) g at the nodes
        rho = np.sum(np.abs(F) ** 2, axis=0)
        proj = (rho[None] * F * w[None]) @ P.conj().T
        out += proj * np.exp(2j * (lev + 1) * t)[None]
    return HermiteState(2 * math.pi * h * out, st.lmax)


def project_to_hermite(g: GridField, lmax: int, tail_tol: float = 1e-10) -> HermiteState:
    """Expand grid samples in phi_{l,m}, l <= lmax (Riemann sum); raise if the L2 tail exceeds tail_tol."""
    if g.n != 2:
        raise ValueError("the Hermite expansion is defined for n = 2")
    K = g.momenta()
    cell = g.h**2
    vals = np.array([evaluate_hermite(l, m, K[0], K[1]) for l, m in hermite_modes(lmax)])
    c = np.tensordot(g.values, vals.conj(), axes=([1, 2], [1, 2])) * cell
    total = float(np.sum(np.abs(g.values) ** 2) * cell)
    tail = total - float(np.sum(np.abs(c) ** 2))
    if tail > tail_tol * max(total, 1.0):
        raise ValueError(f"Hermite tail mass {tail:.3e} exceeds tolerance {tail_tol:.1e} at lmax={lmax}")
    return HermiteState(c, lmax)


def cr_T_lattice(
    g: LatticeField,
    res: ResonantIndex | None = None,
    kind: NonlinearityKind = NonlinearityKind.COUPLED_CUBIC,
) -> LatticeField:
    """Normalised resonant sum (1 / (2 Z_n(L))) P(K) sum_{R_0(K)} (sum_l g_l(K1) conj g_l(K2)) g(K3).

    The factor 1/2 converts the counting normalisation into the delta(omega)
    measure with omega = 2 z1.z2, so the sum converges to T itself.
    """
    spec = g.spec
    kind = NonlinearityKind(kind)
    s = trilinear_resonant(g.values, spec, res)
    if kind is NonlinearityKind.VECTOR_PROJECTED:
        if g.d != spec.n:
            raise ValueError("VectorProjected requires d = n")
        s = _project(spec.momenta(), s)
    return LatticeField(spec, s / (2.0 * zn(spec.n, spec.L)))


def hamiltonian(g, strategy: str = "hermite", tensor: HermiteTensor | None = None, res=None, kind=NonlinearityKind.COUPLED_CUBIC) -> float:
    """E(g) = <T(g), g> (real)."""
    if strategy == "hermite":
        if not isinstance(g, HermiteState):
            raise TypeError("hermite strategy expects a HermiteState")
        return hamiltonian_hermite(g, tensor if tensor is not None else hermite_tensor(g.lmax))
    if strategy == "lattice":
        if not isinstance(g, LatticeField):
            raise TypeError("lattice strategy expects a LatticeField")
        T = cr_T_lattice(g, res, kind)
        return float(np.real(np.vdot(g.values, T.values))) / g.spec.L**g.spec.n
    raise ValueError(f"unknown strategy {strategy!r}")


@lru_cache(maxsize=16)
def moment_matrices(lmax: int) -> dict:
    """Exact quadratic-form matrices <phi_s, Q phi_t> for Q in {x, y, |x|^2, |grad|^2 terms}."""
    basis = hermite_basis(lmax + 2, order=2 * lmax + 8, alpha=1.0)
    ns = len(hermite_modes(lmax))
    P = basis.poly[:ns]
    w = basis.weights
    x, y = basis.x, basis.y

    def form(f):
        return (P.conj() * (w * f)[None]) @ P.T

    lev = np.array([l for l, _ in hermite_modes(lmax)])
    R2 = form(x**2 + y**2)
    H = np.diag(2.0 * (lev + 1))
    return {"x": form(x), "y": form(y), "r2": R2, "grad2": H - R2}


def check_identities(phi, lam: float = 0.0, mu: float | None = None, tensor: HermiteTensor | None = None, n: int = 2) -> dict:
    """Residuals of the energy and Pohozaev identities for a stationary wave (mu + lam |K|^2) phi = T(phi).

    When ``mu`` is None it is extracted from the energy identity.
    """
    if isinstance(phi, GridField):
        lmax = 8
        phi = project_to_hermite(phi, lmax, tail_tol=1e-6)
    if not isinstance(phi, HermiteState):
        raise TypeError("check_identities expects a HermiteState or GridField")
    tensor = tensor if tensor is not None else hermite_tensor(phi.lmax)
    mats = moment_matrices(phi.lmax)
    c = phi.coeffs
    A = float(np.real(np.einsum("js,st,jt->", c.conj(), mats["r2"], c)))
    B = float(np.sum(np.abs(c) ** 2))
    T = cr_T_hermite(phi, tensor).coeffs
    Hval = float(np.real(np.vdot(c, T)))
    if mu is None:
        mu = (Hval - lam * A) / B if B > 0 else 0.0
    stat = T - mu * c - lam * (c @ mats["r2"].T)
    return {
        "n": n,
        "lambda": lam,
        "mu": mu,
        "K2_norm": A,
        "mass": B,
        "H": Hval,
        "energy_residual": lam * A + mu * B - Hval,
        "pohozaev_residual": lam * (n / 2 - 1) * A + mu * (n / 2) * B - (0.5 + n / 4) * Hval,
        "lambda_relation_residual": lam * A - (n - 2) / 4 * Hval,
        "mu_relation_residual": mu * B - (6 - n) / 4 * Hval,
        "stationary_residual": float(np.max(np.abs(stat))) if stat.size else 0.0,
        "sign_conditions": (lam == 0 and mu > 0) if n == 2 else None,
    }
