import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from crsim.lattice_core import (
    LatticeField,
    LatticeSpec,
    ResonantIndex,
    WeightedNorm,
    GridField,
    build_resonant_index,
    cache_path,
    enumerate_resonances,
    irrotational_residual,
    project_irrotational,
    resonance_count_profile,
    resonance_levels,
    resonant_sum_2d,
    write_profile_csv,
    xl_norm,
    zn,
    delta_L,
)


def test_spec_defaults_and_shape():
    s = LatticeSpec(2, 3)
    assert s.kmax == 6
    assert s.npoints == 13**2
    assert s.momenta().shape == (2, 13, 13)
    assert s.flat((0, 0)) == 6 * 13 + 6
    with pytest.raises(ValueError):
        LatticeSpec(5, 2)


def test_zn_closed_forms():
    assert zn(2, 10) == pytest.approx(100 * math.log(10) / (math.pi**2 / 6), rel=1e-14)
    from scipy.special import zeta

    assert zn(3, 4) == pytest.approx(zeta(2) / zeta(3) * 4**4, rel=1e-14)
    assert delta_L(2, math.e) == pytest.approx(1.0)
    assert delta_L(3, 8) == 1 / 8


def test_trivial_resonances_present():
    spec = LatticeSpec(2, 1, 3)
    for k in [(0, 0), (2, -1), (3, 3)]:
        pairs = set(enumerate_resonances(spec, k, 0))
        for q in oracles.box(2, 3):
            assert (q, q) in pairs
        # k1 = k forces k3 = k2
        for q in oracles.box(2, 3):
            assert (tuple(k), q) in pairs


def test_origin_kmax1_matches_double_loop():
    spec = LatticeSpec(2, 1, 1)
    got = enumerate_resonances(spec, (0, 0), 0)
    assert set(got) == oracles.resonances(2, 1, (0, 0), 0)
    # the condition reduces to k1 . (k1 - k2) = 0
    for k1, k2 in got:
        assert sum(a * (a - b) for a, b in zip(k1, k2)) == 0


def test_nonzero_level_matches_double_loop():
    spec = LatticeSpec(2, 1, 3)
    assert set(enumerate_resonances(spec, (1, 0), 5)) == oracles.resonances(2, 3, (1, 0), 5)


def test_enumeration_order_is_lexicographic():
    spec = LatticeSpec(2, 1, 3)
    got = enumerate_resonances(spec, (1, -2), 0)
    assert got == sorted(got)


@settings(max_examples=40, deadline=None)
@given(
    n=st.sampled_from([2, 3]),
    kmax=st.integers(1, 2),
    data=st.data(),
)
def test_enumerator_equals_oracle(n, kmax, data):
    k = tuple(data.draw(st.integers(-kmax, kmax)) for _ in range(n))
    mu = data.draw(st.integers(-2 * n * kmax * kmax, 2 * n * kmax * kmax))
    spec = LatticeSpec(n, 1, kmax)
    got = enumerate_resonances(spec, k, mu)
    assert len(got) == len(set(got))
    assert set(got) == oracles.resonances(n, kmax, k, mu)


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_resonance_exactness_and_symmetry(data):
    kmax = 3
    spec = LatticeSpec(2, 1, kmax)
    k = tuple(data.draw(st.integers(-kmax, kmax)) for _ in range(2))
    for k1, k2 in enumerate_resonances(spec, k, 0):
        k3 = tuple(k[i] + k2[i] - k1[i] for i in range(2))
        assert tuple(k1[i] - k2[i] + k3[i] - k[i] for i in range(2)) == (0, 0)
        assert oracles.sq(k1) - oracles.sq(k2) + oracles.sq(k3) - oracles.sq(k) == 0
        # (k1, k2, k3, k) -> (k2, k1, k, k3) is a resonance for output k3
        assert (k2, k1) in set(enumerate_resonances(spec, k3, 0))


def test_resonant_index_roundtrip(tmp_path):
    spec = LatticeSpec(2, 2, 3)
    idx = build_resonant_index(spec, 0, tmp_path)
    assert cache_path(tmp_path, spec, 0).exists()
    again = build_resonant_index(spec, 0, tmp_path)
    assert again == idx
    for k in [(0, 0), (3, -3), (1, 2)]:
        assert set(idx.entry(k)) == oracles.resonances(2, 3, k, 0)
    loaded = ResonantIndex.load(cache_path(tmp_path, spec, 0))
    assert loaded == idx
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"junk")
    with pytest.raises(ValueError):
        ResonantIndex.load(bad)


def test_resonance_levels_cover_all_triples():
    spec = LatticeSpec(2, 2, 2)
    levels = set(int(m) for m in resonance_levels(spec))
    seen = set()
    for k in oracles.box(2, 2):
        for mu in range(-20, 21):
            if oracles.resonances(2, 2, k, mu):
                seen.add(mu)
    assert seen <= levels
    assert all(m % 2 == 0 for m in levels)


def test_resonant_sum_kernel_matches_index(rng):
    spec = LatticeSpec(2, 2, 4)
    vals = rng.normal(size=(2,) + spec.shape) + 1j * rng.normal(size=(2,) + spec.shape)
    idx = build_resonant_index(spec, 0)
    from crsim.vnls_sim import trilinear_resonant

    a = resonant_sum_2d(vals, 0)
    b = trilinear_resonant(vals, spec, idx)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_count_profile_rows(tmp_path):
    rows = resonance_count_profile([2, 4], n=2, l=9)
    assert [r["L"] for r in rows] == [2, 4]
    for r in rows:
        assert r["S"] > 0 and r["ratio"] == pytest.approx(r["S"] / r["Z_n"])
        assert not r["warning"]
    p = write_profile_csv(rows, tmp_path / "p.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "L,Z_n,S,ratio" and len(lines) == 3
    with pytest.warns(UserWarning):
        resonance_count_profile([2], n=2, l=5)


def test_count_profile_n3_uses_index():
    (row,) = resonance_count_profile([2], n=3, l=12, kmax_factor=1)
    assert row["S"] > 0


def test_xl_norm_examples():
    spec = LatticeSpec(2, 1, 4)
    f = LatticeField.zeros(spec)
    assert xl_norm(f, 3) == 0.0
    f.values[0, spec.flat((3, 0)) // spec.side, spec.flat((3, 0)) % spec.side] = 2 - 1j
    assert xl_norm(f, 2) == pytest.approx(10 * abs(2 - 1j), rel=1e-14)


def test_xl_norm_gaussian_grid_max():
    g = GridField.from_function(2, 4.0, 401, lambda K: np.exp(-np.sum(K**2, axis=0)))
    # d/dr of (1+r^2)^2 e^{-r^2} vanishes at r^2 = 1; 1-D oracle
    r2 = np.linspace(0, 16, 160001)
    best = np.max((1 + r2) ** 2 * np.exp(-r2))
    assert best == pytest.approx(4 / math.e, rel=1e-9)
    assert xl_norm(g, WeightedNorm(4.0)) == pytest.approx(best, rel=1e-3)


def test_xl_norm_errors_and_derivatives():
    g = GridField.from_function(2, 3.0, 61, lambda K: np.exp(-np.sum(K**2, axis=0) / 2))
    assert xl_norm(g, WeightedNorm(0, 1)) > xl_norm(g, WeightedNorm(0, 0))
    with pytest.raises(ValueError):
        xl_norm(LatticeField(LatticeSpec(2, 1, 1), np.full((1, 3, 3), np.nan)), 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lam=st.floats(-5, 5), l=st.floats(0, 6))
def test_xl_norm_is_a_norm(seed, lam, l):
    r = np.random.default_rng(seed)
    spec = LatticeSpec(2, 2, 3)
    f = LatticeField(spec, r.normal(size=(2,) + spec.shape) + 1j * r.normal(size=(2,) + spec.shape))
    g = LatticeField(spec, r.normal(size=(2,) + spec.shape) + 0j)
    nf, ng = xl_norm(f, l), xl_norm(g, l)
    assert xl_norm(LatticeField(spec, lam * f.values), l) == pytest.approx(abs(lam) * nf, rel=1e-12, abs=1e-300)
    assert xl_norm(LatticeField(spec, f.values + g.values), l) <= (nf + ng) * (1 + 1e-12)


def test_projection_examples(rng):
    spec = LatticeSpec(2, 1, 2)
    K = spec.momenta()
    G = rng.normal(size=spec.shape)
    grad = LatticeField(spec, (K * G).astype(complex))
    assert np.max(np.abs(project_irrotational(grad).values - grad.values)) <= 1e-14
    assert irrotational_residual(grad) <= 1e-14
    f = LatticeField.zeros(spec, 2)
    i, j = spec.kmax, spec.kmax + 1  # K = (0, 1)
    f.values[0, i, j] = 1.0
    out = project_irrotational(f)
    assert np.all(out.values[:, i, j] == 0)
    with pytest.raises(ValueError):
        project_irrotational(LatticeField.zeros(spec, 1))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_projection_idempotent(seed):
    r = np.random.default_rng(seed)
    spec = LatticeSpec(3, 1, 1)
    f = LatticeField(spec, r.normal(size=(3,) + spec.shape) + 1j * r.normal(size=(3,) + spec.shape))
    p1 = project_irrotational(f)
    p2 = project_irrotational(p1)
    assert np.max(np.abs(p2.values - p1.values)) <= 1e-14 * max(1.0, np.max(np.abs(p1.values)))
