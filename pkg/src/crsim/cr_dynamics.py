"""Time integration of the CR equation -i dg/dt = T(g), conserved quantities and E_1 eigenspace dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cr_operator import (
    HermiteState,
    HermiteTensor,
    _contract,
    cr_T_hermite,
    cr_T_lattice,
    hermite_tensor,
    moment_matrices,
)
from .lattice_core import GridField, LatticeField, ResonantIndex
from .vnls_sim import NonlinearityKind, NumericalAbort

__all__ = [
    "ConservedSet",
    "CRTrajectory",
    "conserved_set",
    "integrate_cr",
    "E1State",
    "e1_rhs",
    "e1_energy",
    "e1_closed_form",
    "e1_rates",
    "e1_family_state",
    "integrate_e1",
    "e1_from_hermite",
    "e1_to_hermite",
]

QPI = math.pi / 4


@dataclass
class ConservedSet:
    mass: float
    component_mass: list
    momentum: list
    second_moment: float
    angular_momentum: list
    cross: list
    energy: float

    def as_row(self) -> dict:
        row = {"M": self.mass}
        row.update({f"M_{j}": v for j, v in enumerate(self.component_mass)})
        row.update({f"P_{i}": v for i, v in enumerate(self.momentum)})
        row["K2"] = self.second_moment
        row.update({f"L_{i}": v for i, v in enumerate(self.angular_momentum)})
        for j, k, re, im in self.cross:
            row[f"X_{j}{k}_re"] = re
            row[f"X_{j}{k}_im"] = im
        row["E"] = self.energy
        return row


def conserved_set(g, tensor: HermiteTensor | None = None, res: ResonantIndex | None = None) -> ConservedSet:
    """Mass, per-component mass, momentum, |K|^2 moment, angular momenta, cross terms and E.

    Hermite states use exact quadratic forms (angular momentum = sum m |c|^2);
    grid and lattice fields use Riemann sums with centred differences.
    """
    if isinstance(g, HermiteState):
        return _conserved_hermite(g, tensor)
    if isinstance(g, LatticeField):
        K = g.spec.momenta()
        cell = g.spec.L ** (-g.spec.n)
        vals = g.values
        h = 1.0 / g.spec.L
        energy = float(np.real(np.vdot(vals, cr_T_lattice(g, res).values))) * cell
    elif isinstance(g, GridField):
        K = g.momenta()
        cell = g.h**g.n
        vals = g.values
        h = g.h
        energy = float("nan")
        if g.n == 2:
            from .cr_operator import project_to_hermite

            st = project_to_hermite(g, 8, tail_tol=1e-6)
            energy = _conserved_hermite(st, tensor if tensor is not None and tensor.lmax >= 8 else None).energy
    else:
        raise TypeError("unsupported field type")
    n = K.shape[0]
    dens = np.abs(vals) ** 2
    comp = [float(np.sum(dj) * cell) for dj in dens]
    tot = np.sum(dens, axis=0)
    mom = [float(np.sum(K[i] * tot) * cell) for i in range(n)]
    k2 = float(np.sum(np.sum(K**2, axis=0) * tot) * cell)
    grads = [np.gradient(vals, h, axis=i + 1, edge_order=2) for i in range(n)]
    ang = []
    for a in range(n):
        for b in range(a + 1, n):
            op = K[a] * grads[b] - K[b] * grads[a]
            ang.append(float(np.imag(np.sum(op * vals.conj())) * cell))
    d = vals.shape[0]
    cross = []
    for j in range(d):
        for k in range(j + 1, d):
            x = np.sum(vals[j] * vals[k].conj()) * cell
            cross.append((j, k, float(x.real), float(x.imag)))
    return ConservedSet(sum(comp), comp, mom, k2, ang, cross, energy)


def _conserved_hermite(st: HermiteState, tensor: HermiteTensor | None) -> ConservedSet:
    c = st.coeffs
    mats = moment_matrices(st.lmax)
    comp = [float(np.sum(np.abs(cj) ** 2)) for cj in c]
    mom = [float(np.real(np.einsum("js,st,jt->", c.conj(), mats[q], c))) for q in ("x", "y")]
    k2 = float(np.real(np.einsum("js,st,jt->", c.conj(), mats["r2"], c)))
    ang = [float(np.sum(st.angular()[None] * np.abs(c) ** 2))]
    cross = []
    for j in range(st.d):
        for k in range(j + 1, st.d):
            x = np.vdot(c[k], c[j])
            cross.append((j, k, float(x.real), float(x.imag)))
    tensor = tensor if tensor is not None else hermite_tensor(st.lmax)
    energy = float(np.real(np.vdot(c, cr_T_hermite(st, tensor).coeffs)))
    return ConservedSet(sum(comp), comp, mom, k2, ang, cross, energy)


@dataclass
class CRTrajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    conserved: list = field(default_factory=list)

    def series(self, key: str) -> np.ndarray:
        return np.array([c.as_row()[key] for c in self.conserved])

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = [c.as_row() for c in self.conserved]
        keys = list(rows[0]) if rows else ["M", "E"]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(keys) + "\n")
            for t, r in zip(self.times, rows):
                fh.write(f"{t!r}," + ",".join(repr(r[k]) for k in keys) + "\n")
        return path


def integrate_cr(
    state,
    backend=None,
    dt: float = 1e-3,
    steps: int = 1000,
    stride: int = 100,
    kind: NonlinearityKind = NonlinearityKind.COUPLED_CUBIC,
    keep_states: bool = True,
    monitor: bool = True,
) -> CRTrajectory:
    """RK4 for dg/dt = i T(g).

    HermiteState uses a HermiteTensor backend (built if None); LatticeField
    uses cr_T_lattice with an optional level-0 ResonantIndex.
    """
    if isinstance(state, HermiteState):
        tensor = backend if backend is not None else hermite_tensor(state.lmax)
        lmax = state.lmax

        if lmax > tensor.lmax:
            raise ValueError(f"state lmax {lmax} exceeds tensor lmax {tensor.lmax}")

        def f(c):
            return 1j * _contract(c, tensor)

        wrap = lambda c: HermiteState(c, lmax)  # noqa: E731
        cons = lambda s: conserved_set(s, tensor)  # noqa: E731
        y = state.coeffs.copy()
    elif isinstance(state, LatticeField):
        spec = state.spec

        def f(v):
            return 1j * cr_T_lattice(LatticeField(spec, v), backend, kind).values

        wrap = lambda v: LatticeField(spec, v)  # noqa: E731
        cons = lambda s: conserved_set(s, res=backend)  # noqa: E731
        y = state.values.copy()
    else:
        raise TypeError("integrate_cr expects a HermiteState or LatticeField")
    traj = CRTrajectory()

    def record(t, y):
        traj.times.append(t)
        s = wrap(y.copy())
        if keep_states:
            traj.states.append(s)
        if monitor:
            traj.conserved.append(cons(s))

    record(0.0, y)
    for step in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalAbort(step)
        if (step + 1) % stride == 0 or step == steps - 1:
            record((step + 1) * dt, y)
    return traj


# ---------------------------------------------------------------------------
# E_1 dynamics
# ---------------------------------------------------------------------------


@dataclass
class E1State:
    """Coefficients c[j, 0] = c_{j,1} and c[j, 1] = c_{j,-1}."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.complex128).reshape(-1, 2)

    @property
    def d(self) -> int:
        return self.c.shape[0]

    @property
    def plus(self) -> np.ndarray:
        return self.c[:, 0]

    @property
    def minus(self) -> np.ndarray:
        return self.c[:, 1]


def e1_from_hermite(st: HermiteState) -> E1State:
    return E1State(np.array([[st.get(j, 1, 1), st.get(j, 1, -1)] for j in range(st.d)]))


def e1_to_hermite(s: E1State, lmax: int = 1) -> HermiteState:
    entries = {}
    for j in range(s.d):
        entries[(j, 1, 1)] = s.c[j, 0]
        entries[(j, 1, -1)] = s.c[j, 1]
    return HermiteState.from_dict(entries, s.d, lmax)


def e1_rhs(state: E1State, form: str = "printed") -> E1State:
    """dc/dt on E_1.

    ``form='printed'``: i dc_{j,1}/dt = -{pi/4 |c_{j,1}|^2 c_{j,1} + pi/2 |c_{j,-1}|^2 c_{j,1}
    + pi/4 sum_{k!=j} |c_{k,-1}|^2 c_{j,1} + pi/4 sum_{k!=j} c_{k,1} c_{k,-1} conj c_{j,-1}} and its mirror.
    ``form='derived'``: dc/dt = i T(c) restricted to E_1, derived from the E_1 Hamiltonian
    pi/4 (A + B)^2 + pi/2 |X|^2. Both coincide for d = 1.
    """
    p, m = state.plus, state.minus
    if form == "printed":
        ap, am = np.abs(p) ** 2, np.abs(m) ** 2
        q = p * m
        Sq, Sam, Sap = q.sum(), am.sum(), ap.sum()
        bp = QPI * ap * p + 2 * QPI * am * p + QPI * (Sam - am) * p + QPI * (Sq - q) * m.conj()
        bm = QPI * am * m + 2 * QPI * ap * m + QPI * (Sap - ap) * m + QPI * (Sq - q) * p.conj()
        return E1State(np.stack([1j * bp, 1j * bm], axis=1))
    if form == "derived":
        A = np.sum(np.abs(p) ** 2)
        B = np.sum(np.abs(m) ** 2)
        X = np.sum(p * m.conj())
        tp = QPI * (A + B) * p + QPI * X * m
        tm = QPI * (A + B) * m + QPI * np.conj(X) * p
        return E1State(np.stack([1j * tp, 1j * tm], axis=1))
    raise ValueError(f"unknown form {form!r}")


def e1_energy(state: E1State) -> float:
    """E on E_1: pi/4 (A + B)^2 + pi/2 |sum_j c_{j,1} conj c_{j,-1}|^2."""
    A = np.sum(np.abs(state.plus) ** 2)
    B = np.sum(np.abs(state.minus) ** 2)
    X = np.sum(state.plus * state.minus.conj())
    return float(QPI * (A + B) ** 2 + 2 * QPI * abs(X) ** 2)


def integrate_e1(state: E1State, dt: float, steps: int, form: str = "printed", stride: int = 1):
    """RK4 on the E_1 system; returns (times, array of shape (k, d, 2))."""
    y = state.c.copy()
    f = lambda c: e1_rhs(E1State(c), form).c  # noqa: E731
    ts, ys = [0.0], [y.copy()]
    for step in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalAbort(step)
        if (step + 1) % stride == 0 or step == steps - 1:
            ts.append((step + 1) * dt)
            ys.append(y.copy())
    return np.array(ts), np.array(ys)


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(f"family constraint violated: {msg}")


def e1_rates(family: int, c0: E1State, lam=None, mu=None, pair=(0, 1), tol: float = 1e-12) -> np.ndarray:
    """Constant phase rates (omega_{j,1}, omega_{j,-1}) of the quasi-periodic family solutions.

    The solution is c(t) = c0 exp(i omega t). Constraints are checked to ``tol``.
    Rates follow from substituting the family ansatz into the printed E_1 system.
    """
    p, m = c0.plus, c0.minus
    ap, am = np.abs(p) ** 2, np.abs(m) ** 2
    d = c0.d
    w = np.zeros((d, 2))
    if family == 1:
        _require(np.all(np.abs(m) <= tol), "c_{j,-1} = 0 for all j")
        w[:, 0] = QPI * ap
    elif family == 2:
        _require(np.all(np.abs(p) <= tol), "c_{j,1} = 0 for all j")
        w[:, 1] = QPI * am
    elif family == 3:
        active = np.nonzero(np.abs(c0.c).sum(axis=1) > tol)[0]
        _require(len(active) <= 1, "a single component is active")
        w[:, 0] = QPI * ap + 2 * QPI * am
        w[:, 1] = QPI * am + 2 * QPI * ap
    elif family == 4:
        lam = np.ones(d, dtype=complex) if lam is None else np.asarray(lam, dtype=complex)
        _require(np.all(np.abs(np.abs(lam) - 1) <= tol), "|lambda_j| = 1")
        _require(np.all(np.abs(m.conj() - lam * p) <= tol), "conj c_{j,-1} = lambda_j c_{j,1}")
        # cross couplings conj(lambda_k) lambda_j must be real and all active rates equal
        coup = np.conj(lam)[None, :] * lam[:, None]
        rate = np.array(
            [3 * QPI * ap[j] + QPI * sum(ap[k] * (1 + coup[j, k].real) for k in range(d) if k != j) for j in range(d)]
        )
        act = ap > tol
        for j in range(d):
            for k in range(d):
                if j != k and act[j] and act[k]:
                    _require(abs(coup[j, k].imag) <= tol, "conj(lambda_k) lambda_j real")
                    _require(abs(rate[j] - rate[k]) <= 1e3 * tol * max(1.0, rate[j]), "equal rates across active components")
        w[:, 0] = rate
        w[:, 1] = rate
    elif family in (5, 6):
        j, k = pair
        _require(j != k, "j != k")
        others = [q for q in range(d) if q not in (j, k)]
        _require(all(np.abs(c0.c[q]).max() <= tol for q in others), "other components vanish")
        lam = complex(lam)
        mu = complex(mu)
        _require(abs(abs(lam) - 1) <= tol and abs(abs(mu) - 1) <= tol, "|lambda| = |mu| = 1")
        _require(abs(lam - np.conj(mu)) <= tol, "lambda = conj(mu)")
        if family == 5:
            _require(abs(p[j] - lam * p[k]) <= tol, "c_{j,1} = lambda c_{k,1}")
            _require(abs(m[j] - mu * m[k]) <= tol, "c_{j,-1} = mu c_{k,-1}")
            a2, b2 = ap[k], am[k]
            w[[j, k], 0] = QPI * a2 + 4 * QPI * b2
            w[[j, k], 1] = QPI * b2 + 4 * QPI * a2
        else:
            _require(abs(m[j] - lam * p[k]) <= tol, "c_{j,-1} = lambda c_{k,1}")
            _require(abs(p[j] - mu * m[k]) <= tol, "c_{j,1} = mu c_{k,-1}")
            # |c_{j,-1}| = |c_{k,1}| = a, |c_{j,1}| = |c_{k,-1}| = b
            a2, b2 = ap[k], am[k]
            w[j, 0] = 2 * QPI * b2 + 3 * QPI * a2
            w[k, 1] = w[j, 0]
            w[k, 0] = 2 * QPI * a2 + 3 * QPI * b2
            w[j, 1] = w[k, 0]
    else:
        raise ValueError(f"family must be 1..6, got {family}")
    return w


def e1_closed_form(family: int, c0: E1State, t, lam=None, mu=None, pair=(0, 1)) -> E1State | list:
    """Closed-form quasi-periodic solution of family ``family`` at time(s) t."""
    w = e1_rates(family, c0, lam, mu, pair)
    if np.ndim(t) == 0:
        return E1State(c0.c * np.exp(1j * w * t))
    return [E1State(c0.c * np.exp(1j * w * s)) for s in np.asarray(t)]


def e1_family_state(family: int, d: int, rng: np.random.Generator, mass: float = 1.0) -> tuple[E1State, dict]:
    """Random initial data satisfying a family's constraint, scaled to total mass ``mass``.

    Returns the state and the keyword arguments (lam, mu, pair) for e1_closed_form.
    """

    def cz():
        return complex(rng.normal(), rng.normal())

    c = np.zeros((d, 2), dtype=complex)
    kw: dict = {}
    if family == 1:
        c[:, 0] = [cz() for _ in range(d)]
    elif family == 2:
        c[:, 1] = [cz() for _ in range(d)]
    elif family == 3:
        c[0] = [cz(), cz()]
    elif family == 4:
        # equal moduli keep the rates equal; alternating signs would not for d >= 3
        lam = np.array([(-1.0) ** j for j in range(d)] if d <= 2 else [1.0] * d, dtype=complex)
        p = np.exp(1j * rng.uniform(0, 2 * np.pi, d))
        c[:, 0] = p
        c[:, 1] = np.conj(lam * p)
        kw = {"lam": lam}
    elif family in (5, 6):
        if d < 2:
            raise ValueError(f"family {family} couples two components and needs d >= 2")
        lam = np.exp(1j * rng.uniform(0, 2 * np.pi))
        mu = np.conj(lam)
        ck = np.array([cz(), cz()])
        c[1] = ck
        c[0] = [lam * ck[0], mu * ck[1]] if family == 5 else [mu * ck[1], lam * ck[0]]
        kw = {"lam": lam, "mu": mu, "pair": (0, 1)}
    else:
        raise ValueError(f"family must be 1..6, got {family}")
    c *= math.sqrt(mass / float(np.sum(np.abs(c) ** 2)))
    return E1State(c), kw
