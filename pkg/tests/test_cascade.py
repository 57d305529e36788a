import math

import numpy as np
import pytest

from mstree import cascade, charpoly, spacings, streams
from mstree.errors import NonContracting, WorkBudgetExceeded

LAM27 = charpoly.lambda2_value(27)


def se_of_var(z):
    d = np.abs(z - z.mean()) ** 2
    return d.std(ddof=1) / math.sqrt(d.size)


def test_config_validation():
    with pytest.raises(ValueError):
        cascade.CascadeConfig(27, LAM27, 0)
    with pytest.raises(ValueError):
        cascade.CascadeConfig(5, charpoly.lambda2_value(5), 1)


def test_depth_one_is_A():
    pool = cascade.sample_cascade(cascade.CascadeConfig(27, LAM27, 1, seed=3), 10**6)
    z = pool.samples
    se = math.sqrt(z.real.var() + z.imag.var()) / 1e3
    assert abs(pool.mean() - 1) < 4 * se
    target = spacings.analytic_EA2(27, LAM27) - 1
    assert abs(pool.variance() - target) < 4 * se_of_var(z)


def test_depth_two_variance():
    pool = cascade.sample_cascade(cascade.CascadeConfig(27, LAM27, 2, seed=4), 10**4)
    target = cascade.variance_recursion(27, LAM27, 2)[-1]
    assert abs(pool.variance() - target) < 5 * se_of_var(pool.samples)


def test_single_draw_and_budget(monkeypatch):
    rng = streams.derive_stream(0, (1,))
    assert isinstance(cascade.sample_Yn(cascade.CascadeConfig(4, 1.0, 3), rng), complex)
    monkeypatch.setenv("MST_WORK_BUDGET", "1000")
    with pytest.raises(WorkBudgetExceeded):
        cascade.sample_cascade(cascade.CascadeConfig(27, LAM27, 3), 10)


def test_real_lambda_one_is_degenerate():
    # lambda = 1 gives A = sum V = 1 identically
    pool = cascade.sample_cascade(cascade.CascadeConfig(6, 1.0, 3, seed=1), 100)
    assert np.allclose(pool.samples, 1)


def test_limit_variance():
    v = cascade.limit_variance(27, LAM27)
    assert 0 < v < np.inf
    assert cascade.variance_recursion(27, LAM27, 400)[-1] == pytest.approx(v, rel=1e-12)
    assert cascade.limit_variance(9, 1.0) == pytest.approx(0, abs=1e-12)
    with pytest.raises(NonContracting):
        cascade.limit_variance(26, charpoly.lambda2_value(26))


def test_one_round_from_ones_is_A():
    pool = cascade.iterate_pool(cascade.initial_pool(27, LAM27, 10**5), 1, seed=8,
                                normalize=False)
    target = spacings.analytic_EA2(27, LAM27) - 1
    assert abs(pool.variance() - target) < 4 * se_of_var(pool.samples)


def test_unnormalized_mean_stays_near_one():
    pool = cascade.initial_pool(27, LAM27, 20000)
    for r in range(4):
        pool = cascade.iterate_pool(pool, 1, seed=2, normalize=False)
        z = pool.samples
        se = math.sqrt(z.real.var() + z.imag.var()) / math.sqrt(z.size)
        # successive generations are dependent; allow the accumulated walk
        assert abs(pool.mean() - 1) < 4 * se * math.sqrt(r + 1)


def test_resume_equals_straight_run():
    p0 = cascade.initial_pool(27, LAM27, 5000)
    a = cascade.iterate_pool(cascade.iterate_pool(p0, 3, seed=6), 1, seed=6)
    b = cascade.iterate_pool(p0, 4, seed=6)
    assert a.generation == b.generation == 4
    assert np.array_equal(a.samples, b.samples)


def test_worker_invariance():
    p0 = cascade.initial_pool(27, LAM27, 10000)
    a = cascade.iterate_pool(p0, 2, seed=1, workers=1, chunk=1000)
    b = cascade.iterate_pool(p0, 2, seed=1, workers=4, chunk=1000)
    assert np.array_equal(a.samples, b.samples)
    cfg = cascade.CascadeConfig(27, LAM27, 2, seed=1)
    assert np.array_equal(cascade.sample_cascade(cfg, 2000, 1).samples,
                          cascade.sample_cascade(cfg, 2000, 3).samples)


def test_rounds_to_converge():
    r = cascade.rounds_to_converge(27, LAM27)
    c = spacings.contraction_constant(27, LAM27.real)
    assert c ** r <= 1e-3 < c ** (r - 1)


def test_pool_is_readonly():
    pool = cascade.initial_pool(3, 1.0, 4)
    with pytest.raises(ValueError):
        pool.samples[0] = 2
    with pytest.raises(ValueError):
        cascade.SamplePool(np.array([np.nan]), 3, 1.0)


def test_energy_identical_and_shifted():
    z = cascade.sample_cascade(cascade.CascadeConfig(27, LAM27, 1, seed=9), 3000).samples
    same = cascade.pool_energy_distance(z, z)
    assert same.statistic == 0 and same.p_value == 1
    assert cascade.pool_energy_distance(z, z + 1).p_value < 0.01


def test_energy_calibration():
    rejects = 0
    for rep in range(100):
        cfg_a = cascade.CascadeConfig(27, LAM27, 1, seed=1000 + 2 * rep)
        cfg_b = cascade.CascadeConfig(27, LAM27, 1, seed=1001 + 2 * rep)
        a = cascade.sample_cascade(cfg_a, 200).samples
        b = cascade.sample_cascade(cfg_b, 200).samples
        rejects += cascade.pool_energy_distance(a, b, permutations=199, seed=rep).p_value < 0.05
    # Binomial(100, 0.05): 0..12 covers 99.9%
    assert rejects <= 12


def test_pool_variance_tracks_recursion():
    # independent seeds give the spread of the pool statistic; a single pool's
    # i.i.d. standard error understates it because generations share ancestors
    v30 = cascade.variance_recursion(27, LAM27, 30)[-1]
    vals = np.array([cascade.iterate_pool(cascade.initial_pool(27, LAM27, 20000), 30,
                                          seed=500 + s).variance() for s in range(8)])
    assert abs(vals.mean() - v30) < 3 * vals.std(ddof=1) / math.sqrt(vals.size)
