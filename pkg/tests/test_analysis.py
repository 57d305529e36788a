import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstree import analysis, cascade, charpoly, streams
from mstree.errors import DegenerateBounds, DomainError, InsufficientTail, Unreachable

LAM27 = charpoly.lambda2_value(27)


def const_pool(c, n=1000):
    return cascade.SamplePool(np.full(n, c, dtype=complex), 27, LAM27)


def synthetic(moduli, seed):
    rng = streams.derive_stream(seed, (0,))
    return moduli * np.exp(2j * np.pi * rng.random(moduli.size))


# ---------------------------------------------------------------- density


def test_constant_pool_density():
    g = analysis.estimate_density(const_pool(1.0), (-1.5, 2.5, -2, 2), (8, 8))
    assert np.count_nonzero(g.counts) == 1
    xs, ys = g.cell_centers()
    i, j = np.argwhere(g.counts)[0]
    assert abs(xs[i] - 1) <= 0.25 and abs(ys[j]) <= 0.25
    assert g.in_bounds_fraction == 1
    assert (g.density() * g.cell_area).sum() == pytest.approx(1)


@given(st.lists(st.complex_numbers(max_magnitude=5, allow_nan=False), min_size=1, max_size=60))
def test_density_bookkeeping(zs):
    g = analysis.estimate_density(np.array(zs), (-1, 1, -1, 1), (3, 4))
    assert g.in_bounds + g.out_of_bounds == len(zs)
    assert g.counts.shape == (3, 4)


def test_degenerate_bounds():
    with pytest.raises(DegenerateBounds):
        analysis.estimate_density(const_pool(1.0), (0, 0, -1, 1), (4, 4))
    with pytest.raises(DegenerateBounds):
        analysis.support_coverage(const_pool(1.0), 1, 0.5, 3, 3)


def test_constant_pool_coverage():
    inside = analysis.support_coverage(const_pool(1.0), 0.1, 2.5, 6, 12)
    assert inside.coverage == pytest.approx(1 / 72)
    outside = analysis.support_coverage(const_pool(5.0), 0.1, 2.5, 6, 12)
    assert outside.coverage == 0


def test_coverage_grows_with_prefix(pool27_small):
    z = pool27_small.samples
    covs = [analysis.support_coverage(z[:n], 0.1, 2.5, 6, 12).coverage
            for n in (100, 1000, 10000, 100000)]
    assert covs == sorted(covs)


# ---------------------------------------------------------------- ECF


def test_ecf_basics():
    z = synthetic(np.ones(500), 1)
    assert analysis.ecf(z, [0])[0] == 1
    c = 0.7 - 1.2j
    t = 1.3 + 0.4j
    val = analysis.empirical_cf(const_pool(c), t).phi_hat
    assert val == pytest.approx(cmath.exp(1j * (t.real * c.real + t.imag * c.imag)))
    assert abs(val) == pytest.approx(1)


@given(st.complex_numbers(max_magnitude=20, allow_nan=False))
@settings(max_examples=50)
def test_ecf_conjugate_symmetry(t):
    z = synthetic(np.linspace(0.1, 3, 200), 2)
    a, b = analysis.ecf(z, [t, -t])
    assert b == np.conj(a)


def test_cf_residual_at_zero(pool27_small):
    r = analysis.check_cf_fixed_point(pool27_small, 0, 1000)
    assert r.residual == 0 and r.lhs == 1 and r.rhs == 1


def test_cf_methods_agree(pool27_small):
    t = 0.8 + 0.3j
    a = analysis.check_cf_fixed_point(pool27_small, t, 20000, seed=1, method="resample")
    b = analysis.check_cf_fixed_point(pool27_small, t, 2000, seed=1, method="product")
    assert abs(a.rhs - b.rhs) < 5 * math.hypot(a.bound, b.bound)


def test_cf_fixed_point_grid(pool27_small):
    for t in analysis.probe_grid(20, 5):
        r = analysis.check_cf_fixed_point(pool27_small, t, 10**4, seed=3)
        assert r.residual < 5 * r.bound


def test_cf_scaled_pool_still_fixed(pool27_small):
    # the equation is linear, so a scaled pool is again a solution
    doubled = pool27_small.replace(2 * pool27_small.samples)
    worst = max(analysis.check_cf_fixed_point(doubled, t, 10**4, seed=3).ratio
                for t in analysis.probe_grid(20, 5))
    assert worst < 5


def test_cf_shifted_pool_rejected(pool27_small):
    # a shift of 2 stands out of the noise of a 10^5 pool; see the acceptance
    # suite for the unit shift on the 10^6 pool
    shifted = pool27_small.replace(pool27_small.samples + 2)
    worst = max(analysis.check_cf_fixed_point(shifted, t, 10**5, seed=3).ratio
                for t in analysis.probe_grid(20, 5))
    assert worst > 10


def test_probe_grid():
    g = analysis.probe_grid(20, 5)
    assert g.size == 20 and np.all(np.abs(g) <= 5 + 1e-12) and np.all(np.abs(g) > 0)


def test_psi_near_zero(pool27_small):
    (r, v), = analysis.psi_profile(pool27_small, [1e-6])
    assert v == pytest.approx(1, abs=1e-5)


def test_psi_decay(pool27_small):
    n = len(pool27_small)
    prof = analysis.psi_profile(pool27_small, np.arange(1, 11))
    vals = np.array([v for _, v in prof])
    assert np.all(vals < 1 - 3 / math.sqrt(n))
    assert np.max(np.abs(vals - analysis.isotonic_decreasing(vals))) < 5 / math.sqrt(n)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40))
def test_isotonic_is_nonincreasing(y):
    fit = analysis.isotonic_decreasing(y)
    assert np.all(np.diff(fit) <= 1e-12)
    assert fit.mean() == pytest.approx(np.mean(y), abs=1e-9)


# ---------------------------------------------------------------- tails


def test_exponential_control():
    rng = streams.derive_stream(8, (1,))
    fit = analysis.tail_exponent(synthetic(rng.exponential(1.0, 10**6), 9), seed=1)
    assert fit.ci[0] <= 1 <= fit.ci[1]
    assert not fit.heavier_than_exponential


def test_pareto_flagged():
    rng = streams.derive_stream(8, (2,))
    fit = analysis.tail_exponent(synthetic(rng.pareto(3.0, 10**6) + 1, 9), seed=1)
    assert fit.heavier_than_exponential


def test_too_few_tail_samples():
    with pytest.raises(InsufficientTail):
        analysis.tail_exponent(np.arange(1, 500, dtype=complex))


# ---------------------------------------------------------------- lemma


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_f_real_one(s, t):
    assert analysis.lemma_f(s, t, 1.0) == pytest.approx(1)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
@settings(max_examples=40)
def test_grad_vs_fd(s, t):
    fs, ft = analysis.lemma_grad(s, t, LAM27)
    h = 1e-6
    fd_s = (analysis.lemma_f(s + h, t, LAM27) - analysis.lemma_f(s - h, t, LAM27)) / (2 * h)
    fd_t = (analysis.lemma_f(s, t + h, LAM27) - analysis.lemma_f(s, t - h, LAM27)) / (2 * h)
    assert fs == pytest.approx(fd_s, rel=1e-5, abs=1e-6)
    assert ft == pytest.approx(fd_t, rel=1e-5, abs=1e-6)


def test_domain():
    with pytest.raises(DomainError):
        analysis.lemma_f(0, 0.5, LAM27)
    with pytest.raises(DomainError):
        analysis.lemma_points(2.0)


def test_lemma_points_structure():
    pts = analysis.lemma_points(LAM27, 10)
    sigma = LAM27.real
    prim = [p for p in pts if p.kind == "primary"]
    shift = [p for p in pts if p.kind == "shifted"]
    us = [p.u for p in prim]
    assert all(0 < u < 1 for u in us) and all(np.diff(us) < 0)
    for p in prim:
        ul = cmath.exp(LAM27 * math.log(p.u))
        assert abs(ul.imag) < 1e-12 * abs(ul) and ul.real > 0
        # |f| = 1 + u^sigma + O(u)
        assert abs(abs(p.f_value) - 1 - p.u ** sigma) < 10 * p.u
    for p in shift:
        ul = cmath.exp(LAM27 * math.log(p.u))
        assert abs(ul.imag) < 1e-12 * abs(ul) and ul.real < 0
    big, small = analysis.pick_support_centres(pts)
    assert abs(big.f_value) > 1 and 0 < abs(small.f_value) < 1
    assert big.jacobian_ok and small.jacobian_ok


def test_jacobian_closed_form():
    for p in analysis.lemma_points(LAM27, 4):
        fs, ft = analysis.lemma_grad(p.s, p.t, LAM27)
        assert fs * np.conj(ft) == pytest.approx(p.closed_form, rel=1e-9)
        det = fs.real * ft.imag - ft.real * fs.imag
        assert abs(p.jacobian_det - det) < 1e-6 * p.jacobian_scale
        if p.jacobian_ok:
            assert p.jacobian_det == pytest.approx(det, rel=0.1)


# ---------------------------------------------------------------- reach


def centres():
    big, small = analysis.pick_support_centres(analysis.lemma_points(LAM27, 10))
    return big.f_value, small.f_value


def test_reach_trivial():
    c, cs = centres()
    one = analysis.monoid_reach(c, c, cs, 0.05)
    assert (one.count_c, one.count_shift) == (1, 0)
    assert one.factors[0] == pytest.approx(c)
    two = analysis.monoid_reach(c * cs, c, cs, 0.05)
    assert (two.count_c, two.count_shift) == (1, 1)


@pytest.mark.parametrize("target", [-1, 10j, 0.01, 3 + 4j, 1e-4 - 2e-4j])
def test_reach_targets(target):
    cert = analysis.reach_from_lemma(target, LAM27, 0.05, 1e-6)
    assert cert.verify()
    assert cert.product == pytest.approx(target, rel=1e-6)
    for name, pre in cert.preimages.items():
        base = cert.c if name == "c" else cert.c_shift
        assert pre is not None
        assert analysis.lemma_f(*pre, LAM27) == pytest.approx(base * cmath.exp(cert.delta),
                                                             rel=1e-10)


def test_reach_zero():
    c, cs = centres()
    with pytest.raises(Unreachable):
        analysis.monoid_reach(0, c, cs, 0.05)


@pytest.mark.slow
def test_cf_unit_shift_rejected_big_pool(pool27_big):
    shifted = pool27_big.replace(pool27_big.samples + 1)
    worst = max(analysis.check_cf_fixed_point(shifted, t, 10**6, seed=3).ratio
                for t in analysis.probe_grid(20, 5))
    assert worst > 10
