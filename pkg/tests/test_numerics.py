import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckstab.linstab import margins_along
from ckstab.model import DriveSpec, SystemParams, selfconsistency_poly
from ckstab.numerics import (
    ROOT_TOL,
    BracketError,
    Polynomial,
    bisect,
    bisect_predicate,
    integrate_fixed_step,
    merge_close,
    poly_roots,
    poly_roots_batch,
    quartic_roots,
    quartic_roots_batch,
    real_nonneg_roots,
)


def grid_sign_changes(p: Polynomial, hi: float, points: int = 200001) -> int:
    x = np.linspace(0.0, hi, points)
    y = np.real(p(x))
    s = np.sign(y)
    return int(np.sum(s[1:] * s[:-1] < 0)) + int(y[0] == 0)


def test_polynomial_trims_trailing_zeros():
    p = Polynomial((1.0, 2.0, 0.0, 0.0))
    assert p.coeffs == (1.0, 2.0)
    assert p.degree == 1


def test_polynomial_rejects_nonfinite_and_high_degree():
    with pytest.raises(ValueError):
        Polynomial((1.0, math.nan))
    with pytest.raises(ValueError):
        Polynomial(tuple([1.0] * 10))
    with pytest.raises(ValueError):
        poly_roots(Polynomial((3.0,)))


def test_roots_of_factorable_polynomials():
    r = poly_roots(Polynomial((-1.0, 0.0, 1.0)))
    assert np.allclose(r.roots, [-1, 1])
    r = poly_roots(Polynomial((-6.0, 11.0, -6.0, 1.0)))
    assert np.allclose(r.roots, [1, 2, 3], atol=1e-12)
    assert r.converged and max(r.residuals) <= ROOT_TOL


def test_exact_zero_roots_are_split_off():
    r = poly_roots(Polynomial((0.0, 0.0, -1.0, 0.0, 1.0)))
    assert sum(z == 0 for z in r.roots) == 2
    assert np.allclose(sorted(z.real for z in r.roots), [-1, 0, 0, 1])


def test_quintic_at_drive_030_has_three_physical_roots(fig2):
    p = selfconsistency_poly(fig2.with_gck_scaled(0.1), DriveSpec(0.3))
    assert p.degree == 5
    roots = real_nonneg_roots(p)
    assert len(roots) == 3
    assert grid_sign_changes(p, 5.0) == 3


def test_real_nonneg_roots_examples(fig2):
    assert real_nonneg_roots(Polynomial((1.0, 0.0, 1.0))) == []
    assert np.allclose(real_nonneg_roots(Polynomial((0.0, -2.0, 1.0))), [0.0, 2.0])
    p = selfconsistency_poly(fig2.with_gck_scaled(0.1), DriveSpec(0.2))
    assert len(real_nonneg_roots(p)) == 1 == grid_sign_changes(p, 5.0)


def test_quartic_examples():
    r = quartic_roots(0.0, 5.0, 0.0, 4.0)
    assert np.allclose(sorted(r, key=lambda z: z.imag), [-2j, -1j, 1j, 2j], atol=1e-12)
    r = quartic_roots(4.0, 6.0, 4.0, 1.0)
    # a quadruple root is only resolved to ~eps**0.25
    assert np.allclose(r, -1.0, atol=1e-3)
    assert max(abs(np.polyval([1, 4, 6, 4, 1], z)) for z in r) < 1e-12


def test_quartic_of_uncoupled_matrix():
    # (l^2 + 0.6 l + 0.09 + 1)(l^2 + 0.12 l + 0.0036 + 1)
    c = np.polymul([1, 0.6, 1.09], [1, 0.12, 1.0036])
    r = quartic_roots(*c[1:])
    expect = [-0.3 - 1j, -0.3 + 1j, -0.06 - 1j, -0.06 + 1j]
    assert np.allclose(sorted(r, key=lambda z: (z.real, z.imag)), expect, atol=1e-12)


@st.composite
def root_sets(draw):
    deg = draw(st.integers(1, 8))
    roots = []
    while len(roots) < deg:
        re = draw(st.floats(-3, 3))
        if deg - len(roots) >= 2 and draw(st.booleans()):
            im = draw(st.floats(0.1, 3))
            roots += [complex(re, im), complex(re, -im)]
        else:
            roots.append(complex(re, 0))
    # keep roots separated so that the comparison is well conditioned
    for i, a in enumerate(roots):
        for b in roots[i + 1 :]:
            if abs(a - b) < 0.05:
                roots = roots[: i + 1]
                break
    return roots


@given(root_sets())
def test_poly_roots_matches_numpy_oracle(roots):
    desc = np.real(np.poly(roots))
    p = Polynomial(tuple(desc[::-1]))
    got = poly_roots(p)
    assert got.converged
    oracle = np.roots(desc)
    assert len(got.roots) == p.degree
    for z in oracle:
        assert min(abs(z - w) for w in got.roots) < 1e-6 * max(1.0, abs(z))
    # residual bound
    for z in got.roots:
        bound = ROOT_TOL * max(abs(c) for c in p.coeffs) * max(1.0, abs(z)) ** p.degree
        assert abs(p(z)) <= bound
    # conjugate pairing
    for z in got.roots:
        assert min(abs(np.conj(z) - w) for w in got.roots) < 1e-6 * max(1.0, abs(z))


@given(root_sets())
def test_real_nonneg_roots_is_sorted_subset(roots):
    p = Polynomial(tuple(np.real(np.poly(roots))[::-1]))
    out = real_nonneg_roots(p)
    assert out == sorted(out)
    assert all(x >= 0 for x in out)
    all_roots = poly_roots(p).roots
    for x in out:
        assert min(abs(x - z) for z in all_roots) < 1e-7


def test_batch_roots_agree_with_scalar():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(50, 5))
    c[:, -1] = 1.0
    batch, conv = poly_roots_batch(c)
    assert conv.all()
    for row, zs in zip(c, batch):
        ref = poly_roots(Polynomial(tuple(row))).roots
        for z in zs:
            assert min(abs(z - w) for w in ref) < 1e-9
    q = quartic_roots_batch(c[:, 3::-1])
    assert np.allclose(np.sort_complex(q), np.sort_complex(batch))


def test_rk4_exponential_decay():
    res = integrate_fixed_step(lambda t, y: -y, np.array([1.0]), 1.0, 1e-3)
    assert abs(res.states[-1][0] - math.exp(-1)) < 1e-8
    assert res.times[-1] == 1.0


def test_rk4_harmonic_oscillator_energy():
    period = 2 * math.pi
    f = lambda t, y: np.array([y[1], -y[0]])  # noqa: E731
    res = integrate_fixed_step(f, np.array([1.0, 0.0]), 100 * period, period / 1000, stride=1000)
    energy = 0.5 * (res.states[:, 0] ** 2 + res.states[:, 1] ** 2)
    assert np.max(np.abs(energy - 0.5)) < 1e-6
    assert np.allclose(np.diff(res.times), period)


@given(st.floats(-2.0, -0.01), st.floats(-3.0, 3.0), st.sampled_from([0.05, 0.02, 0.01]))
def test_rk4_error_bound_on_linear_flow(re, im, dt):
    lam = complex(re, im)
    t_end = 2.0
    res = integrate_fixed_step(lambda t, y: lam * y, np.array([1.0 + 0j]), t_end, dt)
    exact = np.exp(lam * res.times)
    rel = np.abs(res.states[:, 0] - exact) / np.abs(exact)
    assert np.all(rel <= 10 * abs(lam * dt) ** 4 * np.maximum(res.times, 1e-300) + 1e-14)


def test_rk4_divergence_guard_and_stop():
    res = integrate_fixed_step(lambda t, y: 5 * y, np.array([1.0]), 100.0, 0.01)
    assert res.diverged and res.times[-1] < 100
    assert np.all(np.isfinite(res.states))
    res = integrate_fixed_step(lambda t, y: -y, np.array([1.0]), 10.0, 0.01, stop=lambda t, y: y[0] < 0.5)
    assert res.stopped and abs(res.times[-1] - math.log(2)) < 0.011
    with pytest.raises(ValueError):
        integrate_fixed_step(lambda t, y: y, np.array([1.0]), -1.0, 0.1)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        integrate_fixed_step(lambda t, y: y / 0.0, np.array([1.0]), 1.0, 0.1)


def test_rk4_stable_linearization_decays(fig2_full):
    from ckstab.linstab import jacobian
    from ckstab.model import state_from_occupation

    ss, _ = state_from_occupation(fig2_full, 0.1)
    J = jacobian(fig2_full, ss)
    x0 = np.array([1, 1, 1, 1], dtype=complex)
    res = integrate_fixed_step(lambda t, x: J @ x, x0, 60.0, 0.01, stride=10)
    norm = np.linalg.norm(res.states, axis=1)
    # envelope (max over consecutive 2 pi windows) decreases monotonically
    win = int(round(2 * math.pi / 0.1))
    env = [norm[i : i + win].max() for i in range(0, len(norm) - win, win)]
    assert all(b < a for a, b in zip(env, env[1:]))
    max_re = max(np.linalg.eigvals(J).real)
    assert max_re < 0


def test_bisect_examples(fig2):
    assert abs(bisect(lambda x: x - 0.5, 0.0, 1.0) - 0.5) < 1e-12
    assert abs(bisect(math.cos, 1.0, 2.0) - math.pi / 2) < 1e-12
    nb = bisect(lambda n: float(margins_along(fig2, n)[0]), 0.1, 0.3)
    assert abs(nb - 0.1909) < 1e-3
    with pytest.raises(BracketError):
        bisect(lambda x: x * x + 1, -1.0, 1.0)


def test_bisect_predicate_and_merge():
    x = bisect_predicate(lambda v: v > 0.3, 0.0, 1.0, 1e-6)
    assert abs(x - 0.3) < 1e-6
    with pytest.raises(BracketError):
        bisect_predicate(lambda v: True, 0.0, 1.0, 1e-3)
    vals, flags = merge_close([0.1, 0.1000000001, 0.5], 1e-6)
    assert len(vals) == 2 and flags == [True, False]
