"""Uniform spacings, the random multiplier ``A = sum V_k**lam`` and its moments.

The closed forms come from the Dirichlet(1, ..., 1) law of the spacings:

    E V^s            = G(1+s) G(m) / G(m+s)
    E V_1^a V_2^b    = G(1+a) G(1+b) G(m) / G(m+a+b)

with G the Gamma function, evaluated through ``scipy.special.loggamma`` so
complex exponents are fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import loggamma

from .errors import DivergentMoment, InvalidBranchingFactor


@dataclass(frozen=True)
class SpacingVector:
    m: int
    values: np.ndarray


@dataclass(frozen=True)
class Multiplier:
    value: complex
    sigma_mass: float


def _check_m(m):
    if int(m) != m or m < 2:
        raise InvalidBranchingFactor(f"branching factor must be an integer >= 2, got {m!r}")
    return int(m)


def sample_spacings_batch(m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` spacing vectors as a ``(size, m)`` array.

    Each row sorts m-1 uniforms and takes consecutive differences including
    both end gaps.  Rows with a zero spacing (floating point ties, or a
    uniform equal to 0) are redrawn.
    """
    m = _check_m(m)
    u = rng.random((size, m - 1))
    out = _spacings_from_uniforms(u)
    bad = np.flatnonzero((out <= 0.0).any(axis=1))
    while bad.size:
        out[bad] = _spacings_from_uniforms(rng.random((bad.size, m - 1)))
        bad = bad[(out[bad] <= 0.0).any(axis=1)]
    return out


def _spacings_from_uniforms(u):
    u = np.sort(u, axis=1)
    n = u.shape[0]
    padded = np.concatenate([np.zeros((n, 1)), u, np.ones((n, 1))], axis=1)
    return np.diff(padded, axis=1)


def sample_spacings(m: int, rng: np.random.Generator) -> SpacingVector:
    values = sample_spacings_batch(m, 1, rng)[0]
    values.setflags(write=False)
    return SpacingVector(int(m), values)


def spacing_moment(s, m: int):
    """``E V^s`` for a single spacing V ~ Beta(1, m-1)."""
    m = _check_m(m)
    if np.real(s) <= -1:
        raise DivergentMoment(f"E V^s diverges for Re s <= -1 (s={s})")
    val = np.exp(loggamma(1 + complex(s)) + loggamma(m) - loggamma(m + complex(s)))
    if isinstance(s, (complex, np.complexfloating)):
        return complex(val)
    return float(val.real)


def powers(v: np.ndarray, lam: complex) -> np.ndarray:
    """``v**lam`` for positive reals via the real logarithm."""
    return np.exp(complex(lam) * np.log(v))


def compute_A(v, lam: complex) -> Multiplier:
    values = v.values if isinstance(v, SpacingVector) else np.asarray(v, dtype=float)
    lam = complex(lam)
    logv = np.log(values)
    return Multiplier(complex(np.exp(lam * logv).sum()),
                      float(np.exp(lam.real * logv).sum()))


def multipliers(v: np.ndarray, lam: complex) -> np.ndarray:
    """Row sums of ``v**lam`` for a ``(n, m)`` batch of spacings."""
    return powers(v, lam).sum(axis=1)


def analytic_EA2(m: int, lam: complex) -> float:
    """``E|A|^2`` from the diagonal and off-diagonal Dirichlet moments."""
    m = _check_m(m)
    lam = complex(lam)
    sigma = lam.real
    diag = m * spacing_moment(2 * sigma, m)
    cross = np.exp(2 * loggamma(1 + lam).real + loggamma(m) - loggamma(m + 2 * sigma)).real
    return float(diag + m * (m - 1) * cross)


def contraction_constant(m: int, sigma: float) -> float:
    """``m E V^(2 sigma)``; below 1 exactly when the cascade is an L2 contraction."""
    m = _check_m(m)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return float(m * spacing_moment(2.0 * float(sigma), m))


def expected_A(m: int, lam: complex) -> complex:
    """``E A = m E V^lam``; equals 1 iff lam is a characteristic root."""
    return m * spacing_moment(complex(lam), m)
