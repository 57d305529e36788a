"""Mandelbrot cascade ``Y_n`` and population dynamics for the smoothing equation.

``Y_1 = A`` and ``Y_{n+1} = sum_k V_k**lam * Y_{n,k}`` with independent
children.  Exact sampling costs ``m**n`` spacing draws, so deep laws are
approximated instead by iterating the random map over a finite pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import NonContracting, WorkBudgetExceeded
from .parallel import DEFAULT_CHUNK, chunk_bounds, map_chunks, work_budget
from .spacings import analytic_EA2, contraction_constant, multipliers, powers, \
    sample_spacings_batch

PROVENANCES = ("cascade-depth-n", "pool-iterated", "tree-derived", "external")


@dataclass(frozen=True)
class CascadeConfig:
    m: int
    lam: complex
    depth: int
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if complex(self.lam).real <= 0:
            raise ValueError("the cascade needs Re(lambda) > 0")


@dataclass(frozen=True, eq=False)
class SamplePool:
    samples: np.ndarray
    m: int
    lam: complex
    generation: int = 0
    provenance: str = "external"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=complex)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("a pool needs a nonempty 1-d sample array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("pool contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    def mean(self) -> complex:
        return complex(self.samples.mean())

    def variance(self) -> float:
        """``E|Z - EZ|^2`` (sum of the real and imaginary variances)."""
        return float(np.mean(np.abs(self.samples - self.samples.mean()) ** 2))

    def replace(self, samples, **changes) -> "SamplePool":
        kw = dict(m=self.m, lam=self.lam, generation=self.generation,
                  provenance=self.provenance, meta=dict(self.meta))
        kw.update(changes)
        return SamplePool(samples, **kw)


def _check_budget(m, depth):
    leaves = m ** depth
    budget = work_budget()
    if leaves > budget:
        raise WorkBudgetExceeded(
            f"m**depth = {leaves} leaf evaluations exceeds the budget {budget}; "
            "use iterate_pool for deep laws")


def _cascade_batch(m, lam, depth, count, rng):
    if depth == 1:
        return multipliers(sample_spacings_batch(m, count, rng), lam)
    children = _cascade_batch(m, lam, depth - 1, count * m, rng).reshape(count, m)
    weights = powers(sample_spacings_batch(m, count, rng), lam)
    return (weights * children).sum(axis=1)


def sample_Yn(config: CascadeConfig, rng: np.random.Generator) -> complex:
    """One realisation of ``Y_depth``."""
    _check_budget(config.m, config.depth)
    return complex(_cascade_batch(config.m, complex(config.lam), config.depth, 1, rng)[0])


def cascade_chunk(m: int, depth: int) -> int:
    # keeps the bottom level near 2**18 spacing vectors per chunk
    return max(1, 2**18 // m ** (depth - 1))


def sample_cascade(config: CascadeConfig, count: int, workers: int = 1) -> SamplePool:
    """``count`` independent copies of ``Y_depth`` as a pool."""
    _check_budget(config.m, config.depth)
    stream = streams.SeedStream(config.seed).child(streams.TAG_CASCADE, config.depth)
    lam = complex(config.lam)
    bounds = chunk_bounds(count, cascade_chunk(config.m, config.depth))

    def run(i):
        lo, hi = bounds[i]
        rng = stream.child(i).generator()
        return _cascade_batch(config.m, lam, config.depth, hi - lo, rng)

    parts = map_chunks(run, range(len(bounds)), workers)
    return SamplePool(np.concatenate(parts), config.m, lam, config.depth,
                      "cascade-depth-n", {"seed": config.seed})


def variance_recursion(m: int, lam: complex, depth: int, v0: float = 0.0):
    """``[Var Y_1, ..., Var Y_depth]`` from ``v -> (E|A|^2 - 1) + c v``."""
    lam = complex(lam)
    a = analytic_EA2(m, lam) - 1.0
    c = contraction_constant(m, lam.real)
    out, v = [], v0
    for _ in range(depth):
        v = a + c * v
        out.append(v)
    return out


def limit_variance(m: int, lam: complex) -> float:
    lam = complex(lam)
    c = contraction_constant(m, lam.real)
    if c >= 1:
        raise NonContracting(f"m E V^(2 sigma) = {c:.6g} >= 1 for m={m}, lambda={lam}")
    return (analytic_EA2(m, lam) - 1.0) / (1.0 - c)


def rounds_to_converge(m: int, lam: complex, rel_tol: float = 1e-3, minimum: int = 30) -> int:
    """Rounds after which the variance deficit of an all-ones start is below
    ``rel_tol`` of the limit."""
    c = contraction_constant(m, complex(lam).real)
    if c >= 1:
        raise NonContracting(f"m E V^(2 sigma) = {c:.6g} >= 1")
    return max(minimum, math.ceil(math.log(rel_tol) / math.log(c)))


def initial_pool(m: int, lam: complex, size: int) -> SamplePool:
    return SamplePool(np.ones(size, dtype=complex), m, complex(lam), 0, "pool-iterated")


def _pool_round(prev, m, lam, lo, hi, rng):
    n = hi - lo
    idx = rng.integers(0, prev.size, size=(n, m))
    weights = powers(sample_spacings_batch(m, n, rng), lam)
    return (weights * prev[idx]).sum(axis=1)


def iterate_pool(pool: SamplePool, rounds: int, seed, workers: int = 1,
                 chunk: int = DEFAULT_CHUNK, normalize: bool = True) -> SamplePool:
    """Apply ``Z -> sum V_k**lam Z_k`` to the pool ``rounds`` times.

    The ``Z_k`` are drawn uniformly with replacement from the previous
    generation, with fresh spacings per sample.  Chunk streams are keyed by
    the absolute generation number, so 30 rounds followed by 1 equals 31.

    Every multiple ``mu * Y`` of a fixed point is again a fixed point, so the
    pool mean of an unnormalized run performs a random walk of step size
    ``sd / sqrt(N)``.  With ``normalize`` each generation is divided by its
    empirical mean, pinning the mean-1 solution.
    """
    stream = streams.as_stream(seed).child(streams.TAG_POOL)
    lam = complex(pool.lam)
    m = pool.m
    current = pool.samples
    bounds = chunk_bounds(current.size, chunk)
    for r in range(rounds):
        gen = pool.generation + r + 1
        prev = current

        def run(i, prev=prev, gen=gen):
            lo, hi = bounds[i]
            return _pool_round(prev, m, lam, lo, hi, stream.child(gen, i).generator())

        current = np.concatenate(map_chunks(run, range(len(bounds)), workers))
        if normalize:
            current = current / _ordered_mean(current, chunk)
    meta = dict(pool.meta)
    meta.setdefault("seed", streams.as_stream(seed).master)
    return pool.replace(current, generation=pool.generation + rounds,
                        provenance="pool-iterated", meta=meta)


def _ordered_mean(x, chunk):
    # fixed-order partial sums, independent of worker count
    total = sum(x[lo:hi].sum() for lo, hi in chunk_bounds(x.size, chunk))
    return total / x.size


def converged_pool(m: int, lam: complex, size: int, seed, rounds=None,
                   workers: int = 1) -> SamplePool:
    if rounds is None:
        rounds = rounds_to_converge(m, lam)
    return iterate_pool(initial_pool(m, lam, size), rounds, seed, workers)


@dataclass(frozen=True)
class EnergyTest:
    statistic: float
    p_value: float
    n_x: int
    n_y: int
    permutations: int


def _subsample(x, k, seed):
    if x.size <= k:
        return x
    rng = streams.derive_stream(seed, (streams.TAG_ENERGY, 0))
    return x[np.sort(rng.choice(x.size, size=k, replace=False))]


def pool_energy_distance(p, q, max_points: int = 1000, permutations: int = 499,
                         seed: int = 0) -> EnergyTest:
    """Two-sample energy distance on complex samples with a permutation p-value.

    Each pool is subsampled to at most ``max_points`` (same index stream for
    both, so a pool tested against itself scores exactly 0).  The pairwise
    distance matrix is formed once and the permutation statistics come from
    matrix products with label indicators.
    """
    x = np.asarray(p.samples if isinstance(p, SamplePool) else p, dtype=complex)
    y = np.asarray(q.samples if isinstance(q, SamplePool) else q, dtype=complex)
    x = _subsample(x, max_points, seed)
    y = _subsample(y, max_points, seed)
    nx, ny = x.size, y.size
    z = np.concatenate([x, y])
    d = np.abs(z[:, None] - z[None, :])
    labels = np.zeros((z.size, permutations + 1))
    labels[:nx, 0] = 1.0
    rng = streams.derive_stream(seed, (streams.TAG_ENERGY, 1))
    for b in range(1, permutations + 1):
        labels[rng.permutation(z.size)[:nx], b] = 1.0
    dl = d @ labels
    total = d.sum()
    s_xx = (labels * dl).sum(axis=0)
    s_x_all = dl.sum(axis=0)
    s_xy = s_x_all - s_xx
    s_yy = total - s_xx - 2.0 * s_xy
    stats = (2.0 * s_xy / (nx * ny) - s_xx / nx**2 - s_yy / ny**2) * (nx * ny / (nx + ny))
    observed = stats[0]
    # an exact zero from identical samples must not count permutations
    # that land on rounding noise as "more extreme"
    if observed <= 1e-12 * max(1.0, total / z.size**2):
        observed = 0.0
        p_value = 1.0
    else:
        p_value = (1.0 + np.sum(stats[1:] >= observed)) / (permutations + 1.0)
    return EnergyTest(float(observed), float(p_value), nx, ny, permutations)
