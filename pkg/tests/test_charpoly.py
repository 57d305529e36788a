import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstree import charpoly
from mstree.errors import InvalidBranchingFactor, NoSecondRoot


def oracle_roots(m):
    # independent oracle: mpmath on the expanded polynomial at high precision
    coeffs = charpoly.build_charpoly(m).coefficients
    with mpmath.workdps(60):
        rts = mpmath.polyroots(coeffs, maxsteps=400, extraprec=400)
    return np.array([complex(r) for r in rts])


def test_small_polynomials():
    assert charpoly.build_charpoly(2).coefficients == (1, -1)
    assert charpoly.build_charpoly(3).coefficients == (1, 3, -4)
    assert charpoly.eval_charpoly(4, 0) == -18


def test_eval_points():
    assert charpoly.eval_charpoly(27, 1) == 0
    assert charpoly.eval_charpoly(3, -4) == 0
    z = (1 + 1j) * (2 + 1j) * (3 + 1j) - 24
    assert charpoly.eval_charpoly(4, 1j) == pytest.approx(z)


@given(st.integers(2, 12), st.complex_numbers(max_magnitude=10, allow_nan=False))
def test_factored_matches_expanded(m, z):
    p = charpoly.build_charpoly(m)
    a = charpoly.eval_charpoly(p, z)
    b = charpoly.eval_expanded(p, z)
    scale = math.factorial(m) + abs(z) ** (m - 1) * math.factorial(m)
    assert abs(a - b) <= 1e-12 * scale


def test_root_sets_small():
    assert charpoly.find_roots(2).values.tolist() == [1]
    vals = sorted(charpoly.find_roots(3).values.real)
    assert vals == pytest.approx([-4, 1], abs=1e-12)


@pytest.mark.parametrize("m", [5, 14, 27, 33])
def test_roots_match_mpmath(m):
    ours = charpoly.find_roots(m).values
    ref = oracle_roots(m)
    assert len(ours) == m - 1
    for r in ref:
        assert np.min(np.abs(ours - r)) < 1e-9 * max(1, abs(r))


@pytest.mark.parametrize("m", range(2, 41))
def test_conjugate_closed(m):
    rs = charpoly.find_roots(m)
    v = rs.values
    for z in v:
        assert np.min(np.abs(v - np.conj(z))) < 1e-12 * max(1, abs(z))
    assert max(r.residual for r in rs.roots) < 1e-8


def test_lambda2_thresholds():
    assert charpoly.find_lambda2(13).sigma <= 0 < charpoly.find_lambda2(14).sigma
    assert charpoly.find_lambda2(26).sigma < 0.5 < charpoly.find_lambda2(27).sigma


def test_lambda2_known_value():
    l2 = charpoly.find_lambda2(27)
    assert l2.value.imag > 0
    assert l2.value == pytest.approx(0.51697012 + 2.17886535j, abs=1e-7)


def test_lambda2_m3_is_real():
    assert charpoly.find_lambda2(3).value == pytest.approx(-4)


def test_errors():
    with pytest.raises(InvalidBranchingFactor):
        charpoly.find_roots(1)
    with pytest.raises(NoSecondRoot):
        charpoly.find_lambda2(2)


@pytest.mark.parametrize("m", range(4, 41))
def test_lambda2_nonreal_from_four(m):
    assert charpoly.find_lambda2(m).value.imag > 1e-3
