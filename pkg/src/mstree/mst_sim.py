"""Random m-ary search trees, their composition vector and the W martingale.

A node stores up to m-1 sorted keys.  It stays external while it has free
room; the insertion that fills it to m-1 keys turns it internal and hangs m
empty children below it.  A node of *type i* is an external node holding
i-1 keys (i gaps), and ``X^(i)`` counts them.

Bulk simulation goes through a numba kernel over flat arrays; ``SearchTree``
is the readable reference used for single trees and traces.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numba
import numpy as np

from . import streams
from .charpoly import find_lambda2
from .errors import DuplicateKey, InvalidBranchingFactor, NotAnEigenvalue
from .parallel import map_chunks

EXAMPLE_KEYS = (0.3, 0.1, 0.4, 0.15, 0.9, 0.2, 0.6, 0.5, 0.35, 0.8, 0.97, 0.93,
               0.23, 0.84, 0.62, 0.64, 0.33, 0.83)


def _check_m(m):
    if int(m) != m or m < 2:
        raise InvalidBranchingFactor(f"branching factor must be an integer >= 2, got {m!r}")
    return int(m)


@dataclass(frozen=True)
class CompositionVector:
    m: int
    n: int
    counts: tuple  # X^(1) .. X^(m-1)

    def gaps(self) -> int:
        return sum((i + 1) * c for i, c in enumerate(self.counts))


class SearchTree:
    """Index-based arena: node ``j`` has a sorted key list and either no
    children or the m consecutive children starting at ``first_child[j]``."""

    def __init__(self, m: int):
        self.m = _check_m(m)
        self.keys = [[]]
        self.first_child = [-1]
        self.counts = [0] * (self.m - 1)
        self.counts[0] = 1
        self.n = 0

    def __len__(self):
        return self.n

    def locate(self, key: float) -> int:
        """Index of the external node whose interval contains ``key``."""
        node = 0
        while True:
            ks = self.keys[node]
            j = bisect.bisect_left(ks, key)
            if j < len(ks) and ks[j] == key:
                raise DuplicateKey(f"key {key!r} is already stored")
            if self.first_child[node] < 0:
                return node
            node = self.first_child[node] + j

    def insert(self, key: float) -> None:
        if not 0.0 < key < 1.0:
            raise ValueError("keys live in the open interval (0, 1)")
        node = self.locate(key)
        ks = self.keys[node]
        held = len(ks)
        bisect.insort(ks, key)
        self.counts[held] -= 1
        if held + 1 == self.m - 1:
            self.first_child[node] = len(self.keys)
            self.keys.extend([] for _ in range(self.m))
            self.first_child.extend([-1] * self.m)
            self.counts[0] += self.m
        else:
            self.counts[held + 1] += 1
        self.n += 1
        assert sum((i + 1) * c for i, c in enumerate(self.counts)) == self.n + 1

    def composition_vector(self) -> CompositionVector:
        return CompositionVector(self.m, self.n, tuple(self.counts))

    def inorder_keys(self):
        out = []

        def walk(node):
            ks = self.keys[node]
            c = self.first_child[node]
            if c < 0:
                out.extend(ks)
                return
            for j in range(self.m):
                walk(c + j)
                if j < len(ks):
                    out.append(ks[j])

        walk(0)
        return out


def insert(tree: SearchTree, key: float) -> SearchTree:
    tree.insert(key)
    return tree


def composition_vector(tree: SearchTree) -> CompositionVector:
    """Recount external nodes by type (independent of the running counters)."""
    counts = [0] * (tree.m - 1)
    for ks, c in zip(tree.keys, tree.first_child):
        if c < 0:
            counts[len(ks)] += 1
    return CompositionVector(tree.m, tree.n, tuple(counts))


def composition_trace(m: int, keys):
    """Composition vectors after 0, 1, ..., len(keys) insertions."""
    tree = SearchTree(m)
    trace = [tree.composition_vector()]
    for k in keys:
        tree.insert(float(k))
        trace.append(tree.composition_vector())
    return trace


@numba.njit(nogil=True, cache=True)
def _grow_kernel(m, keys, checkpoints):
    n = keys.size
    width = m - 1
    cap = 1 + m * (n // width + 1)
    node_keys = np.empty((cap, width))
    nkeys = np.zeros(cap, np.int64)
    child = np.full(cap, -1, np.int64)
    counts = np.zeros(width, np.int64)
    counts[0] = 1
    nnodes = 1
    out = np.zeros((checkpoints.size, width), np.int64)
    ci = 0
    while ci < checkpoints.size and checkpoints[ci] == 0:
        out[ci, :] = counts
        ci += 1
    for step in range(n):
        x = keys[step]
        node = 0
        while True:
            k = nkeys[node]
            lo = 0
            hi = k
            while lo < hi:
                mid = (lo + hi) // 2
                if node_keys[node, mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            if lo < k and node_keys[node, lo] == x:
                return step, out
            if child[node] >= 0:
                node = child[node] + lo
                continue
            for j in range(k, lo, -1):
                node_keys[node, j] = node_keys[node, j - 1]
            node_keys[node, lo] = x
            nkeys[node] = k + 1
            counts[k] -= 1
            if k + 1 == width:
                child[node] = nnodes
                nnodes += m
                counts[0] += m
            else:
                counts[k + 1] += 1
            break
        while ci < checkpoints.size and checkpoints[ci] == step + 1:
            out[ci, :] = counts
            ci += 1
    return -1, out


def grow_counts(m: int, keys, checkpoints=None) -> np.ndarray:
    """Composition vectors at the given insertion counts (default: the end).

    Raises DuplicateKey with the offending position on a repeated key.
    """
    m = _check_m(m)
    keys = np.ascontiguousarray(keys, dtype=float)
    if checkpoints is None:
        checkpoints = [keys.size]
    cps = np.asarray(checkpoints, dtype=np.int64)
    if np.any(np.diff(cps) < 0) or (cps.size and (cps[0] < 0 or cps[-1] > keys.size)):
        raise ValueError("checkpoints must be sorted within 0..len(keys)")
    dup, out = _grow_kernel(m, keys, cps)
    if dup >= 0:
        err = DuplicateKey(f"duplicate key at position {dup}")
        err.position = int(dup)
        raise err
    return out


def random_keys(n: int, rng: np.random.Generator) -> np.ndarray:
    keys = rng.random(n)
    zero = np.flatnonzero(keys == 0.0)
    while zero.size:
        keys[zero] = rng.random(zero.size)
        zero = zero[keys[zero] == 0.0]
    return keys


def grow_random_counts(m: int, n: int, rng: np.random.Generator, checkpoints=None):
    keys = random_keys(n, rng)
    while True:
        try:
            return grow_counts(m, keys, checkpoints)
        except DuplicateKey as err:
            # ties have probability zero under a diffusive key law: redraw
            keys[err.position] = random_keys(1, rng)[0]


@dataclass(frozen=True)
class UrnEigenvector:
    m: int
    lam: complex
    u: np.ndarray

    def closure_residual(self) -> float:
        return _closure_residual(self.m, self.lam, self.u)


def _closure_residual(m, lam, u):
    lhs = (m - 1) * (m * u[0] - u[-1])
    return abs(lhs - lam * u[-1]) / (m * (m - 1))


def urn_eigenvector(m: int, lam: complex, tol: float = 1e-6) -> UrnEigenvector:
    """``u_1 = 1, u_{i+1} = u_i (lam + i) / i``: the linear functional whose
    one-step conditional drift is ``lam / (n + 1)`` exactly when lam is a
    characteristic root."""
    m = _check_m(m)
    lam = complex(lam)
    u = np.ones(m - 1, dtype=complex)
    for i in range(1, m - 1):
        u[i] = u[i - 1] * (lam + i) / i
    res = _closure_residual(m, lam, u)
    if res > tol:
        raise NotAnEigenvalue(f"closure residual {res:.3g} for lambda={lam}, m={m}")
    u.setflags(write=False)
    return UrnEigenvector(m, lam, u)


def log_pi(lam: complex, n: int) -> complex:
    """``log prod_{k=1}^n (1 + lam/k)`` accumulated term by term."""
    if n == 0:
        return 0j
    k = np.arange(1, n + 1, dtype=float)
    return complex(np.log1p(complex(lam) / k).sum())


def martingale_value(counts, u, lam, n) -> complex:
    return complex(np.dot(u, counts) * np.exp(-log_pi(lam, n)))


def _resolve_lambda(m, lam):
    return complex(find_lambda2(m).value) if lam is None else complex(lam)


def extract_W_sample(m: int, n: int = 10**6, seed=0, run: int = 0, lam=None) -> complex:
    """``M_n = <u, X_n> / pi_n`` for one random tree with n uniform keys.

    ``M_0 = 1`` and ``(M_n)`` is a martingale whose limit is proportional to W.
    """
    lam = _resolve_lambda(m, lam)
    u = urn_eigenvector(m, lam).u
    rng = streams.as_stream(seed).child(streams.TAG_TREE, int(n), run).generator()
    counts = grow_random_counts(m, n, rng)[-1]
    return martingale_value(counts, u, lam, n)


def tree_martingale_samples(m: int, n: int, runs: int, seed=0, workers: int = 1,
                            lam=None) -> np.ndarray:
    lam = _resolve_lambda(m, lam)
    return np.array(map_chunks(lambda r: extract_W_sample(m, n, seed, r, lam),
                               range(runs), workers), dtype=complex)


def sample_tree_pool(m: int, n: int, runs: int, seed=0, workers: int = 1):
    from .cascade import SamplePool

    lam = _resolve_lambda(m, None)
    samples = tree_martingale_samples(m, n, runs, seed, workers, lam)
    return SamplePool(samples, m, lam, n, "tree-derived",
                      {"seed": streams.as_stream(seed).master, "runs": runs})


@dataclass(frozen=True)
class FluctuationProfile:
    m: int
    n_grid: tuple
    sd: tuple
    slope: float | None
    sigma2: float | None


def fluctuation_profile(m: int, n_grid, runs: int, seed=0, workers: int = 1) -> FluctuationProfile:
    """Spread of ``<u, X_n>`` across independent runs, and its log-log slope."""
    m = _check_m(m)
    grid = np.array(sorted(int(n) for n in n_grid), dtype=np.int64)
    if m == 2:
        lam = 1.0 + 0j
        sigma2 = None
    else:
        lam = complex(find_lambda2(m).value)
        sigma2 = lam.real
    u = urn_eigenvector(m, lam).u
    stream = streams.as_stream(seed).child(streams.TAG_TREE, 0)

    def run(r):
        rng = stream.child(r).generator()
        return grow_random_counts(m, int(grid[-1]), rng, grid) @ u

    values = np.array(map_chunks(run, range(runs), workers))  # runs x len(grid)
    centred = values - values.mean(axis=0)
    sd = np.sqrt(np.mean(np.abs(centred) ** 2, axis=0))
    slope = None
    if m > 2 and np.all(sd > 0) and grid.size >= 2:
        slope = float(np.polyfit(np.log(grid), np.log(sd), 1)[0])
    return FluctuationProfile(m, tuple(int(g) for g in grid), tuple(float(s) for s in sd),
                              slope, sigma2)


def gap_identity_holds(cv: CompositionVector) -> bool:
    return cv.gaps() == cv.n + 1


def expected_one_step_factor(lam: complex, n: int) -> complex:
    return 1 + complex(lam) / (n + 1)


def pi_closed_form(lam: complex, n: int) -> complex:
    """``Gamma(n+1+lam) / (Gamma(1+lam) n!)``; reference for ``log_pi``."""
    from scipy.special import loggamma

    lam = complex(lam)
    return complex(np.exp(loggamma(n + 1 + lam) - loggamma(1 + lam) - math.lgamma(n + 1)))
