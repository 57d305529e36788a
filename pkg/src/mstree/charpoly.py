"""Characteristic polynomial ``prod_{k=1}^{m-1} (z + k) - m!`` of the m-ary search tree.

Roots are found by Aberth-Ehrlich simultaneous iteration on the factored form,
followed by Newton polishing.  The expanded integer coefficients exist only as
an exact reference; numerical evaluation always goes through the product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBranchingFactor, NoSecondRoot, NonConvergence

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class CharPoly:
    m: int
    coefficients: tuple  # exact ints, highest degree first

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


@dataclass(frozen=True)
class Root:
    value: complex
    residual: float


@dataclass(frozen=True)
class RootSet:
    m: int
    roots: tuple  # of Root, sorted by real part descending

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.roots], dtype=complex)

    def __len__(self):
        return len(self.roots)


@dataclass(frozen=True)
class Lambda2:
    value: complex
    m: int
    residual: float

    @property
    def sigma(self) -> float:
        return self.value.real

    @property
    def tau(self) -> float:
        return self.value.imag


def _check_m(m):
    if int(m) != m or m < 2:
        raise InvalidBranchingFactor(f"branching factor must be an integer >= 2, got {m!r}")
    return int(m)


def build_charpoly(m: int) -> CharPoly:
    """Expand ``prod (z+k) - m!`` with exact integer arithmetic."""
    m = _check_m(m)
    coeffs = [1]
    for k in range(1, m):
        # multiply by (z + k)
        coeffs = [a + k * b for a, b in zip(coeffs + [0], [0] + coeffs)]
    coeffs[-1] -= math.factorial(m)
    return CharPoly(m, tuple(coeffs))


def eval_charpoly(p, z):
    """Evaluate through the factored form.  ``p`` may be a CharPoly or m.

    Works elementwise on arrays.  Integer ``z`` gives an exact integer result.
    """
    m = p.m if isinstance(p, CharPoly) else _check_m(p)
    if isinstance(z, (int, np.integer)):
        prod = 1
        for k in range(1, m):
            prod *= int(z) + k
        return prod - math.factorial(m)
    z = np.asarray(z, dtype=complex)
    prod = np.ones_like(z)
    for k in range(1, m):
        prod = prod * (z + k)
    out = prod - math.factorial(m)
    return out[()] if out.ndim == 0 else out


def eval_expanded(p: CharPoly, z):
    """Horner evaluation of the exact coefficients (reference only)."""
    z = np.asarray(z, dtype=complex)
    acc = np.zeros_like(z)
    for c in p.coefficients:
        acc = acc * z + float(c)
    return acc


def relative_residual(m: int, z: complex) -> float:
    return abs(complex(eval_charpoly(m, complex(z)))) / math.factorial(m)


def _newton_ratio(m, z):
    """p/p' for p = P - m!, P = prod(z+k), computed without overflow.

    p/p' = (1 - m!/P) / S with S = sum 1/(z+k), and m!/P formed in log space.
    """
    shifts = np.arange(1, m, dtype=float)
    w = z[:, None] + shifts[None, :]
    log_p = np.log(w).sum(axis=1)
    ratio = np.exp(math.lgamma(m + 1) - log_p)
    s = (1.0 / w).sum(axis=1)
    return (1.0 - ratio) / s


def _aberth(m, max_iter=500, tol=1e-15):
    n = m - 1
    # roots of prod(z+k) = m! cluster around -m/2 within a few times m
    center = -(m - 1) / 2.0
    radius = max(1.0, float(m))
    z = center + radius * np.exp(1j * (2 * np.pi * np.arange(n) / n + 0.4))
    for _ in range(max_iter):
        ratio = _newton_ratio(m, z)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        inv = 1.0 / diff
        np.fill_diagonal(inv, 0.0)
        step = ratio / (1.0 - ratio * inv.sum(axis=1))
        z = z - step
        if np.all(np.abs(step) <= tol * (1.0 + np.abs(z))):
            break
    return z


def _polish(m, z, steps=6):
    for _ in range(steps):
        z = z - _newton_ratio(m, z)
    return z


def _symmetrize(z, scale):
    """Snap near-real roots to the axis and pair the rest as exact conjugates."""
    z = np.array(z, dtype=complex)
    tol = 1e-7 * scale
    real_mask = np.abs(z.imag) <= tol
    z[real_mask] = z[real_mask].real
    upper = [i for i in range(len(z)) if not real_mask[i] and z[i].imag > 0]
    lower = [i for i in range(len(z)) if not real_mask[i] and z[i].imag < 0]
    if len(upper) != len(lower):
        return None
    out = list(z[real_mask].real.astype(complex))
    remaining = set(lower)
    for i in upper:
        j = min(remaining, key=lambda j: abs(z[i] - np.conj(z[j])))
        remaining.discard(j)
        mid = 0.5 * (z[i] + np.conj(z[j]))
        out.extend([mid, np.conj(mid)])
    return np.array(out, dtype=complex)


def find_roots(m: int) -> RootSet:
    """All m-1 roots, sorted by real part descending (then imaginary part)."""
    m = _check_m(m)
    if m == 2:
        return RootSet(2, (Root(1 + 0j, 0.0),))
    z = _polish(m, _aberth(m))
    z = _symmetrize(z, scale=float(m))
    if z is None:
        raise NonConvergence(f"roots for m={m} are not conjugation closed")
    residuals = np.array([relative_residual(m, r) for r in z])
    if not np.all(residuals < RESIDUAL_TOL):
        raise NonConvergence(f"root finding for m={m} did not reach tolerance",
                             best_residuals=residuals.tolist())
    order = np.lexsort((-z.imag, -z.real))
    roots = tuple(Root(complex(z[i]), float(residuals[i])) for i in order)
    return RootSet(m, roots)


def _conjugate_groups(roots):
    groups = []
    used = set()
    vals = [r.value for r in roots]
    for i, v in enumerate(vals):
        if i in used:
            continue
        used.add(i)
        group = [i]
        if v.imag != 0:
            j = min((j for j in range(len(vals)) if j not in used),
                    key=lambda j: abs(vals[j] - v.conjugate()), default=None)
            if j is not None:
                used.add(j)
                group.append(j)
        groups.append(group)
    return groups


def find_lambda2(m: int) -> Lambda2:
    """Root with the second largest real part; positive imaginary part if complex."""
    m = _check_m(m)
    if m == 2:
        raise NoSecondRoot("for m=2 the characteristic polynomial has the single root 1")
    rs = find_roots(m)
    groups = _conjugate_groups(rs.roots)
    groups.sort(key=lambda g: -max(rs.roots[i].value.real for i in g))
    chosen = [rs.roots[i] for i in groups[1]]
    best = max(chosen, key=lambda r: r.value.imag)
    return Lambda2(best.value, m, best.residual)


def lambda2_value(m: int) -> complex:
    return find_lambda2(m).value

