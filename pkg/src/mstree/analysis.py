"""Statistical and constructive checks on laws of the smoothing equation.

Monte Carlo side: histogram densities, polar support coverage, empirical
characteristic functions, the characteristic-function fixed point, the
``psi(r) = max_{|t|=r} |phi(t)|`` profile and exponential tail fits.

Deterministic side: the map ``f(s,t) = (st)^lam + (s(1-t))^lam + (1-s)^lam``
whose image lies in the support of A, the points ``(s_k, t_k)`` built from
``u_k = exp(-2 k pi / tau)`` where f is a local diffeomorphism, and an explicit
product construction reaching any nonzero complex number from two small
disks around values of f.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .cascade import SamplePool
from .errors import DegenerateBounds, DomainError, InsufficientTail, Unreachable
from .spacings import powers, sample_spacings_batch

ECF_CHUNK = 1 << 16


def _samples(pool):
    return pool.samples if isinstance(pool, SamplePool) else np.asarray(pool, dtype=complex)


# --------------------------------------------------------------------- density


@dataclass(frozen=True)
class HistogramGrid2D:
    bounds: tuple  # (x0, x1, y0, y1)
    bins: tuple  # (nx, ny)
    counts: np.ndarray  # shape (nx, ny)
    total: int

    @property
    def cell_area(self) -> float:
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) * (y1 - y0) / (self.bins[0] * self.bins[1])

    @property
    def in_bounds(self) -> int:
        return int(self.counts.sum())

    @property
    def out_of_bounds(self) -> int:
        return self.total - self.in_bounds

    @property
    def in_bounds_fraction(self) -> float:
        return self.in_bounds / self.total

    def density(self) -> np.ndarray:
        return self.counts / (self.total * self.cell_area)

    def l2_norm(self) -> float:
        """Plug-in squared L2 norm, sum of density**2 * cell area."""
        return float((self.density() ** 2).sum() * self.cell_area)

    def cell_centers(self):
        x0, x1, y0, y1 = self.bounds
        nx, ny = self.bins
        xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        return xs, ys


def estimate_density(pool, bounds, bins) -> HistogramGrid2D:
    x0, x1, y0, y1 = (float(b) for b in bounds)
    nx, ny = (int(b) for b in bins)
    if not (x1 > x0 and y1 > y0) or nx < 1 or ny < 1:
        raise DegenerateBounds(f"rectangle {bounds} with bins {bins} has no area")
    z = _samples(pool)
    counts, _, _ = np.histogram2d(z.real, z.imag, bins=(nx, ny), range=((x0, x1), (y0, y1)))
    return HistogramGrid2D((x0, x1, y0, y1), (nx, ny), counts.astype(np.int64), int(z.size))


@dataclass(frozen=True)
class CoverageReport:
    r_min: float
    r_max: float
    hits: np.ndarray  # (n_radial, n_angular)

    @property
    def coverage(self) -> float:
        return float(np.count_nonzero(self.hits) / self.hits.size)


def support_coverage(pool, r_min, r_max, n_radial, n_angular, center=0j) -> CoverageReport:
    """Hit counts on a polar grid over the annulus ``r_min <= |z - center| <= r_max``."""
    if not 0 < r_min < r_max:
        raise DegenerateBounds("need 0 < r_min < r_max")
    z = _samples(pool) - complex(center)
    r = np.abs(z)
    theta = np.mod(np.angle(z), 2 * np.pi)
    keep = (r >= r_min) & (r <= r_max)
    hits, _, _ = np.histogram2d(r[keep], theta[keep], bins=(n_radial, n_angular),
                                range=((r_min, r_max), (0.0, 2 * np.pi)))
    return CoverageReport(float(r_min), float(r_max), hits.astype(np.int64))


# --------------------------------------------------------- characteristic fns


@dataclass(frozen=True)
class ECFProbe:
    t: complex
    phi_hat: complex
    n: int

    @property
    def se(self) -> float:
        return 1.0 / math.sqrt(self.n)


def ecf(samples, ts) -> np.ndarray:
    """``mean exp(i Re(conj(t) Z))`` for every t, summed in fixed-size chunks."""
    z = np.asarray(samples, dtype=complex)
    ts = np.atleast_1d(np.asarray(ts, dtype=complex))
    re = np.zeros(ts.size)
    im = np.zeros(ts.size)
    a = ts.real[:, None]
    b = ts.imag[:, None]
    for lo in range(0, z.size, ECF_CHUNK):
        zc = z[lo:lo + ECF_CHUNK]
        ang = a * zc.real[None, :] + b * zc.imag[None, :]
        re += np.cos(ang).sum(axis=1)
        im += np.sin(ang).sum(axis=1)
    return (re + 1j * im) / z.size


def empirical_cf(pool, t) -> ECFProbe:
    z = _samples(pool)
    t = complex(t)
    value = 1 + 0j if t == 0 else complex(ecf(z, [t])[0])
    return ECFProbe(t, value, int(z.size))


@dataclass(frozen=True)
class CFResidual:
    t: complex
    lhs: complex
    rhs: complex
    residual: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.residual / self.bound if self.bound > 0 else (0.0 if self.residual == 0 else math.inf)


def check_cf_fixed_point(pool: SamplePool, t, mc_rounds: int, seed=0, batches: int = 10,
                         method: str = "resample") -> CFResidual:
    """Compare ``phi_hat(t)`` with ``E prod_k phi_hat(t V_k^conj(lam))``.

    The pool is split into ``batches`` contiguous batches, and each batch
    gets its own left side and its own Monte Carlo right side (with
    ``mc_rounds // batches`` spacing draws).  Both sides average over the
    batches, and the error bound is the standard error of the batch
    differences.

    ``method="product"`` evaluates each round's product of empirical
    characteristic functions literally.  ``method="resample"`` draws the m
    factors ``Z_k`` from the batch instead.  Given the spacings, its
    conditional mean is that same product, and its cost does not grow with
    the pool size.
    """
    t = complex(t)
    z = pool.samples
    lam = complex(pool.lam)
    m = pool.m
    if t == 0:
        return CFResidual(t, 1 + 0j, 1 + 0j, 0.0, 0.0)
    if method not in ("resample", "product"):
        raise ValueError(f"unknown method {method!r}")
    batches = max(2, min(batches, z.size // 2))
    per_batch = max(1, mc_rounds // batches)
    edges = np.linspace(0, z.size, batches + 1).astype(int)
    stream = streams.as_stream(seed).child(streams.TAG_CF)
    diffs, lhs_all, rhs_all = [], [], []
    for b in range(batches):
        zb = z[edges[b]:edges[b + 1]]
        rng = stream.child(b).generator()
        lhs = ecf(zb, [t])[0]
        v = sample_spacings_batch(m, per_batch, rng)
        points = t * powers(v, lam.conjugate())  # (rounds, m)
        if method == "resample":
            idx = rng.integers(0, zb.size, size=(per_batch, m))
            s = (powers(v, lam) * zb[idx]).sum(axis=1)
            vals = np.exp(1j * (t.real * s.real + t.imag * s.imag))
        else:
            vals = ecf(zb, points.ravel()).reshape(points.shape).prod(axis=1)
        rhs = vals.mean()
        lhs_all.append(lhs)
        rhs_all.append(rhs)
        diffs.append(lhs - rhs)
    d = np.array(diffs)
    bound = math.sqrt((d.real.var(ddof=1) + d.imag.var(ddof=1)) / batches)
    return CFResidual(t, complex(np.mean(lhs_all)), complex(np.mean(rhs_all)),
                      float(abs(d.mean())), float(bound))


def probe_grid(n: int = 20, r_max: float = 5.0) -> np.ndarray:
    """``n`` probe points with ``0 < |t| <= r_max`` on a few rings."""
    rings = 4
    per = n // rings
    pts = []
    for j in range(rings):
        r = r_max * (j + 1) / rings
        k = per if j < rings - 1 else n - per * (rings - 1)
        offset = 0.3 * (j + 1)
        pts.extend(r * np.exp(1j * (offset + 2 * np.pi * np.arange(k) / k)))
    return np.array(pts, dtype=complex)


def psi_profile(pool, radii, n_angles: int = 64):
    """``[(r, max_theta |phi_hat(r e^{i theta})|)]``."""
    z = _samples(pool)
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    theta = 2 * np.pi * np.arange(n_angles) / n_angles
    ts = (radii[:, None] * np.exp(1j * theta)[None, :]).ravel()
    mods = np.abs(ecf(z, ts)).reshape(radii.size, n_angles)
    return [(float(r), float(v)) for r, v in zip(radii, mods.max(axis=1))]


def isotonic_decreasing(y) -> np.ndarray:
    """Least-squares nonincreasing fit (pool adjacent violators)."""
    blocks = []  # [mean, weight]
    for v in np.asarray(y, dtype=float):
        blocks.append([v, 1.0])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            v2, w2 = blocks.pop()
            v1, w1 = blocks.pop()
            blocks.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    return np.concatenate([np.full(int(w), v) for v, w in blocks])


# ----------------------------------------------------------------------- tails


@dataclass(frozen=True)
class TailFit:
    thresholds: np.ndarray
    log_survival: np.ndarray
    delta_hat: float
    ci: tuple
    curvature: float
    curvature_ci: tuple
    n_tail: int

    @property
    def heavier_than_exponential(self) -> bool:
        """Log-survival convex in t beyond bootstrap noise."""
        return self.curvature_ci[0] > 0


def _fit(thresholds, surv):
    ok = surv > 0
    x, y = thresholds[ok], np.log(surv[ok])
    slope = np.polyfit(x, y, 1)[0]
    span = thresholds[-1] - thresholds[0]
    quad = np.polyfit((x - thresholds[0]) / span, y, 2)[0]
    return -slope, quad


def tail_exponent(pool, quantile_lo: float = 0.95, quantile_hi: float = 0.999,
                  n_thresholds: int = 25, n_boot: int = 200, seed=0,
                  level: float = 0.95) -> TailFit:
    """Slope of ``log P(|Z| > t)`` between two empirical quantiles of |Z|.

    The curvature is the quadratic coefficient of the same fit on the
    rescaled window [0, 1].  It is zero for an exact exponential tail and
    positive for tails heavier than exponential.
    """
    if not 0.9 <= quantile_lo < quantile_hi <= 0.9999:
        raise ValueError("need 0.9 <= quantile_lo < quantile_hi <= 0.9999")
    r = np.abs(_samples(pool))
    n = r.size
    t_lo, t_hi = np.quantile(r, [quantile_lo, quantile_hi])
    tail = np.sort(r[r > t_lo])
    if tail.size < 100:
        raise InsufficientTail(f"only {tail.size} samples beyond the {quantile_lo} quantile")
    thresholds = np.linspace(t_lo, t_hi, n_thresholds)

    def survival(sorted_tail):
        return (sorted_tail.size - np.searchsorted(sorted_tail, thresholds, side="right")) / n

    surv = survival(tail)
    delta, curv = _fit(thresholds, surv)
    rng = streams.as_stream(seed).child(streams.TAG_TAILS).generator()
    boots = []
    p_tail = tail.size / n
    for _ in range(n_boot):
        k = rng.binomial(n, p_tail)
        bt = np.sort(tail[rng.integers(0, tail.size, size=k)])
        boots.append(_fit(thresholds, survival(bt)))
    boots = np.array(boots)
    a = (1 - level) / 2
    ci = tuple(float(v) for v in np.quantile(boots[:, 0], [a, 1 - a]))
    cci = tuple(float(v) for v in np.quantile(boots[:, 1], [a, 1 - a]))
    return TailFit(thresholds, np.log(np.where(surv > 0, surv, np.nan)), float(delta), ci,
                   float(curv), cci, int(tail.size))


# --------------------------------------------------------- support lemma maps


def lemma_f(s: float, t: float, lam: complex) -> complex:
    if not (0 < s < 1 and 0 < t < 1):
        raise DomainError(f"(s, t) = ({s}, {t}) must lie in the open unit square")
    lam = complex(lam)
    return (cmath.exp(lam * math.log(s * t)) + cmath.exp(lam * math.log(s * (1 - t)))
            + cmath.exp(lam * math.log(1 - s)))


def lemma_grad(s: float, t: float, lam: complex):
    """Analytic ``(df/ds, df/dt)``."""
    lam = complex(lam)
    a = cmath.exp(lam * math.log(s * t))
    b = cmath.exp(lam * math.log(s * (1 - t)))
    c1 = cmath.exp((lam - 1) * math.log(1 - s))
    fs = lam / s * (a + b - s * c1)
    ft = lam * (a / t - b / (1 - t))
    return fs, ft


def jacobian_product_closed_form(u: float, lam: complex) -> complex:
    """``df/ds * conj(df/dt)`` at ``s = u + u^2, t = 1/(1+u)`` in factored form."""
    lam = complex(lam)
    s = u + u * u
    ul = cmath.exp(lam * math.log(u))
    ulc = ul.conjugate()
    first = ul * (1 + ul) - s * cmath.exp((lam - 1) * math.log(1 - s))
    second = ulc * u - ulc * ulc
    return abs(lam) ** 2 * (1 + u) / (s * u) * first * second


@dataclass(frozen=True)
class LemmaPoint:
    k: int
    kind: str  # "primary" (u_k) or "shifted" (u'_k)
    u: float
    s: float
    t: float
    f_value: complex
    jacobian_det: float
    jacobian_scale: float
    jacobian_ok: bool
    closed_form: complex


def _fd_jacobian(s, t, lam, rel_step):
    hs = rel_step * min(s, 1 - s)
    ht = rel_step * min(t, 1 - t)
    fs = (lemma_f(s + hs, t, lam) - lemma_f(s - hs, t, lam)) / (2 * hs)
    ft = (lemma_f(s, t + ht, lam) - lemma_f(s, t - ht, lam)) / (2 * ht)
    det = fs.real * ft.imag - ft.real * fs.imag
    return fs, ft, det


def lemma_points(lam: complex, k_max: int = 10, rel_step: float = 1e-6,
                 det_tol: float = 1e-12):
    """Both point sequences for k = 1..k_max with a finite-difference Jacobian test.

    ``tau = |Im lam|``; a negative imaginary part is handled by conjugation.
    """
    lam = complex(lam)
    if lam.imag == 0:
        raise DomainError("lambda must be non-real")
    if lam.imag < 0:
        lam = lam.conjugate()
    tau = lam.imag
    out = []
    for k in range(1, k_max + 1):
        for kind, u in (("primary", math.exp(-2 * k * math.pi / tau)),
                        ("shifted", math.exp((math.pi - 2 * k * math.pi) / tau))):
            s = u + u * u
            t = 1 / (1 + u)
            if not (0 < s < 1 and 0 < t < 1):
                continue
            fval = lemma_f(s, t, lam)
            fs, ft, det = _fd_jacobian(s, t, lam, rel_step)
            # the same difference at a 4x step bounds the truncation and roundoff error
            err = abs(det - _fd_jacobian(s, t, lam, 4 * rel_step)[2])
            scale = abs(fs) * abs(ft)
            ok = abs(det) > max(det_tol * scale, 10 * err)
            out.append(LemmaPoint(k, kind, u, s, t, fval, float(det), float(scale), bool(ok),
                                  jacobian_product_closed_form(u, lam)))
    return out


def pick_support_centres(points):
    """First primary point with |f| > 1 and first shifted with 0 < |f| < 1,
    both with a nonvanishing Jacobian."""
    big = next((p for p in points if p.kind == "primary" and abs(p.f_value) > 1
                and p.jacobian_ok), None)
    small = next((p for p in points if p.kind == "shifted" and 0 < abs(p.f_value) < 1
                  and p.jacobian_ok), None)
    return big, small


def invert_f(target: complex, s0: float, t0: float, lam: complex, tol: float = 1e-13,
             max_iter: int = 100):
    """Damped Newton solve of ``f(s, t) = target`` from ``(s0, t0)``.

    Steps are halved until they stay inside the open square and reduce the
    residual.  Returns None if no preimage is found.
    """
    s, t = s0, t0
    r = lemma_f(s, t, lam) - target
    for _ in range(max_iter):
        if abs(r) <= tol * abs(target):
            return s, t
        fs, ft = lemma_grad(s, t, lam)
        det = fs.real * ft.imag - ft.real * fs.imag
        if det == 0:
            return None
        ds = (ft.imag * r.real - ft.real * r.imag) / det
        dt = (-fs.imag * r.real + fs.real * r.imag) / det
        step = 1.0
        while step > 1e-12:
            s1, t1 = s - step * ds, t - step * dt
            if 0 < s1 < 1 and 0 < t1 < 1:
                r1 = lemma_f(s1, t1, lam) - target
                if abs(r1) < abs(r):
                    break
            step /= 2
        else:
            return None
        s, t, r = s1, t1, r1
    return (s, t) if abs(r) <= tol * abs(target) else None


def find_preimage(target: complex, lam: complex, start=None, grid: int = 60, starts: int = 8):
    """Any ``(s, t)`` in the open square with ``f(s, t) = target``.

    Tries ``start`` first, then the best points of a ``grid x grid`` scan.
    Any hit proves ``target`` lies in the support of A.
    """
    lam = complex(lam)
    if start is not None:
        hit = invert_f(target, start[0], start[1], lam)
        if hit is not None:
            return hit
    g = (np.arange(grid) + 0.5) / grid
    ss, tt = np.meshgrid(g, g, indexing="ij")
    vals = (np.exp(lam * np.log(ss * tt)) + np.exp(lam * np.log(ss * (1 - tt)))
            + np.exp(lam * np.log(1 - ss)))
    order = np.argsort(np.abs(vals - target), axis=None)[:starts]
    for flat in order:
        i, j = np.unravel_index(flat, ss.shape)
        hit = invert_f(target, float(ss[i, j]), float(tt[i, j]), lam)
        if hit is not None:
            return hit
    return None


# ------------------------------------------------------------------ monoid reach


@dataclass(frozen=True)
class ProductCertificate:
    target: complex
    c: complex
    c_shift: complex
    radius: float
    eps: float
    factors: tuple
    count_c: int
    count_shift: int
    branch: int
    delta: complex
    product: complex
    rel_error: float
    preimages: dict = field(default_factory=dict)

    def verify(self) -> bool:
        prod = complex(np.prod(np.array(self.factors, dtype=complex)))
        if abs(prod - self.target) > self.eps * abs(self.target):
            return False
        if not (abs(self.c) > 1 and 0 < abs(self.c_shift) < 1):
            return False
        for v in self.factors:
            near_c = abs(v - self.c) <= self.radius
            near_s = abs(v - self.c_shift) <= self.radius
            if not (near_c or near_s):
                return False
        return True


def monoid_reach(target, c, c_shift, radius: float, eps: float = 1e-6,
                 max_branch: int = 100000) -> ProductCertificate:
    """Write ``target`` as a product of factors from the disks B(c, radius)
    and B(c_shift, radius).

    Logarithms turn the problem into hitting ``log target + 2 pi i q`` with
    ``a log c + b log c_shift`` for nonnegative integers a and b.  Because
    ``Re log c > 0 > Re log c_shift``, the real solution (alpha, beta) moves
    into the positive quadrant as the branch index q grows.  The rounding
    residual r is then spread evenly, with every factor multiplied by
    ``exp(r / (a + b))``, and |q| grows until the per-factor correction fits
    inside the disks.
    """
    target, c, c_shift = complex(target), complex(c), complex(c_shift)
    if target == 0:
        raise Unreachable("0 is not a finite product of nonzero factors")
    if not (abs(c) > 1 and 0 < abs(c_shift) < 1):
        raise ValueError("need |c| > 1 and 0 < |c_shift| < 1")
    if radius <= 0 or radius >= min(abs(c) - 1, 1 - abs(c_shift), abs(c_shift)):
        raise ValueError("radius must keep both disks away from 0 and from the unit circle")
    ell, ell2 = cmath.log(c), cmath.log(c_shift)
    w = cmath.log(target)
    mat = np.array([[ell.real, ell2.real], [ell.imag, ell2.imag]])
    if abs(np.linalg.det(mat)) < 1e-14:
        raise Unreachable("log c and log c_shift are collinear")
    inv = np.linalg.inv(mat)
    big = max(abs(c), abs(c_shift))
    # keeps |v - base| <= radius, since |e^d - 1| <= e^|d| - 1
    d_max = math.log1p(radius / big)
    order = [0]
    for q in range(1, max_branch + 1):
        order.extend((q, -q))
    for q in order:
        alpha, beta = inv @ np.array([w.real, w.imag + 2 * math.pi * q])
        a, b = int(round(alpha)), int(round(beta))
        if a < 0 or b < 0 or a + b == 0:
            continue
        r = w + 2j * math.pi * q - a * ell - b * ell2
        if abs(r) > (a + b) * d_max:
            continue
        delta = r / (a + b)
        scale = cmath.exp(delta)
        factors = tuple([c * scale] * a + [c_shift * scale] * b)
        prod = complex(np.prod(np.array(factors, dtype=complex)))
        rel = abs(prod - target) / abs(target)
        cert = ProductCertificate(target, c, c_shift, float(radius), float(eps), factors,
                                  a, b, q, delta, prod, float(rel))
        if not cert.verify():
            raise Unreachable(f"certificate for {target} failed verification (rel={rel:.3g})")
        return cert
    raise Unreachable(f"no branch up to |q| = {max_branch} reaches {target}")


def reach_from_lemma(target, lam: complex, radius: float = 0.05, eps: float = 1e-6,
                     k_max: int = 10) -> ProductCertificate:
    """``monoid_reach`` with centres taken from ``lemma_points``; the two
    distinct factor values are also pulled back to preimages (s, t) under f."""
    lam = complex(lam)
    if lam.imag < 0:
        lam = lam.conjugate()
    big, small = pick_support_centres(lemma_points(lam, k_max))
    if big is None or small is None:
        raise Unreachable("no admissible lemma points up to k_max")
    cert = monoid_reach(target, big.f_value, small.f_value, radius, eps)
    pre = {}
    scale = cmath.exp(cert.delta)
    for name, point, count in (("c", big, cert.count_c), ("c_shift", small, cert.count_shift)):
        if count:
            pre[name] = find_preimage(point.f_value * scale, lam, (point.s, point.t))
    return ProductCertificate(**{**cert.__dict__, "preimages": pre})
