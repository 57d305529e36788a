"""Command line entry point: ``mstree <command> [options]``.

Every command is deterministic in ``(config, --seed)`` and independent of
``--workers``.  Each written artifact gets a ``<artifact>.manifest.json``
with the config echo, library versions, seed and wall time.  The manifest
is metadata only, and the artifact bytes do not depend on it.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__, analysis, cascade, charpoly, mst_sim, poolio, spacings, streams
from .errors import ConfigError, MstError, VerificationFailed

NESTED = {"sample", "verify"}


# ------------------------------------------------------------------ helpers


def _complex_arg(text: str) -> complex:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) == 1:
        return complex(float(parts[0]), 0.0)
    if len(parts) == 2:
        return complex(float(parts[0]), float(parts[1]))
    raise argparse.ArgumentTypeError(f"expected 're' or 're,im', got {text!r}")


def _floats(n):
    def parse(text):
        vals = [float(p) for p in text.split(",")]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma separated numbers")
        return vals
    return parse


def _ints(n):
    def parse(text):
        vals = [int(p) for p in text.split(",")]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma separated integers")
        return vals
    return parse


def _int(text):
    # accepts 1e5 style counts
    val = float(text)
    if val != int(val):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    return int(val)


def _cjson(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _lambda2(m):
    return complex(charpoly.find_lambda2(m).value)


def _check_writable(path):
    if path is None:
        return
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK):
        raise ConfigError(f"output directory for {path} is not writable")


class Run:
    """Collects artifacts so they are written only after the command succeeds."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.started = time.time()
        self.pending = []

    def artifact(self, path, text):
        if path is not None:
            self.pending.append((path, text))

    def commit(self):
        written = []
        try:
            for path, text in self.pending:
                poolio.atomic_write(path, text)
                written.append(path)
                poolio.atomic_write(path + ".manifest.json", dumps(self.manifest(path)))
                written.append(path + ".manifest.json")
        except BaseException:
            for p in written:
                if os.path.exists(p):
                    os.remove(p)
            raise

    def manifest(self, path):
        import numba
        import scipy

        config = {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v))
                  for k, v in sorted(vars(self.args).items()) if k != "func"}
        return {
            "artifact": os.path.basename(path),
            "argv": self.argv,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "workers": getattr(self.args, "workers", None),
            "versions": {"mstree": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "numba": numba.__version__},
            "wall_time_s": round(time.time() - self.started, 3),
        }


def _emit(run, payload, out=None):
    text = dumps(payload)
    sys.stdout.write(text)
    run.artifact(out, text)


# ----------------------------------------------------------------- commands


def cmd_roots(args, run):
    rs = charpoly.find_roots(args.m)
    payload = {"m": args.m,
               "roots": [{"re": r.value.real, "im": r.value.imag, "residual": r.residual}
                         for r in rs.roots]}
    if args.m >= 3:
        payload["lambda2"] = _cjson(charpoly.find_lambda2(args.m).value)
    _emit(run, payload, args.out)


def cmd_lambda2(args, run):
    l2 = charpoly.find_lambda2(args.m)
    _emit(run, {"m": args.m, "lambda2": _cjson(l2.value), "residual": l2.residual,
                "sigma": l2.sigma, "tau": l2.tau,
                "regime": "non-gaussian" if l2.sigma > 0.5 else "gaussian"}, args.out)


def cmd_moments(args, run):
    lam = _lambda2(args.m)
    s = lam if args.s is None else args.s
    payload = {"m": args.m, "s": _cjson(s), "lambda2": _cjson(lam),
               "spacing_moment": _cjson(spacings.spacing_moment(complex(s), args.m)),
               "expected_A": _cjson(spacings.expected_A(args.m, lam)),
               "analytic_EA2": spacings.analytic_EA2(args.m, lam),
               "contraction_constant": spacings.contraction_constant(args.m, lam.real)}
    if lam.real > 0 and payload["contraction_constant"] < 1:
        payload["limit_variance"] = cascade.limit_variance(args.m, lam)
    _emit(run, payload, args.out)


def _pool_result(run, args, pool, extra=None):
    run.artifact(args.out, poolio.format_pool(pool))
    summary = {"provenance": pool.provenance, "m": pool.m, "n": len(pool),
               "generation": pool.generation, "mean": _cjson(pool.mean()),
               "variance": pool.variance(), "out": args.out}
    summary.update(extra or {})
    sys.stdout.write(dumps(summary))


def cmd_sample_cascade(args, run):
    lam = _lambda2(args.m)
    pool = cascade.sample_cascade(cascade.CascadeConfig(args.m, lam, args.depth, args.seed),
                                  args.count, args.workers)
    _pool_result(run, args, pool, {"formula_variance":
                                   cascade.variance_recursion(args.m, lam, args.depth)[-1]})


def cmd_sample_pool(args, run):
    lam = _lambda2(args.m)
    extra = {}
    if lam.real <= 0.5:
        extra["warning"] = ("Re(lambda2) <= 1/2: pool iteration runs but L2 convergence "
                            "is not covered by the theory")
    pool = cascade.iterate_pool(cascade.initial_pool(args.m, lam, args.size), args.rounds,
                                args.seed, args.workers)
    try:
        extra["formula_variance"] = cascade.limit_variance(args.m, lam)
    except MstError:
        pass
    _pool_result(run, args, pool, extra)


def _read_keys(path):
    with open(path) as fh:
        text = fh.read().replace(",", " ")
    return [float(x) for x in text.split()]


def _trace_rows(m, keys, every):
    trace = mst_sim.composition_trace(m, keys)
    rows = [(cv.n, cv.counts) for cv in trace if cv.n % every == 0 or cv.n == len(keys)]
    for cv in trace:
        if not mst_sim.gap_identity_holds(cv):
            raise VerificationFailed(f"gap identity broken at n={cv.n}")
    return trace, rows


def cmd_sample_tree(args, run):
    if args.keys_file:
        keys = _read_keys(args.keys_file)
        trace, rows = _trace_rows(args.m, keys, 1)
        run.artifact(args.out, poolio.format_trace(args.m, rows))
        sys.stdout.write(dumps({"m": args.m, "n": len(keys),
                                "composition": list(trace[-1].counts), "out": args.out}))
        return
    pool = mst_sim.sample_tree_pool(args.m, args.n, args.runs, args.seed, args.workers)
    _pool_result(run, args, pool, {"runs": args.runs, "keys_per_tree": args.n})


def cmd_simulate(args, run):
    if args.keys_file:
        keys = _read_keys(args.keys_file)
    else:
        rng = streams.SeedStream(args.seed).child(streams.TAG_TREE, args.n, 0).generator()
        keys = mst_sim.random_keys(args.n, rng).tolist()
    n = len(keys)
    every = max(1, args.trace_every)
    grid = sorted(set(range(0, n + 1, every)) | {n})
    counts = mst_sim.grow_counts(args.m, keys, grid)
    gaps = counts @ np.arange(1, args.m)
    if not np.array_equal(gaps, np.array(grid) + 1):
        raise VerificationFailed("gap identity broken")
    run.artifact(args.out, poolio.format_trace(args.m, zip(grid, counts)))
    sys.stdout.write(dumps({"m": args.m, "n": n, "composition": counts[-1].tolist(),
                            "out": args.out}))


def variance_check(m, seed, depth=3, count=10000, workers=1):
    lam = _lambda2(m)
    formula = cascade.variance_recursion(m, lam, depth)
    rows = []
    for d in range(1, depth + 1):
        pool = cascade.sample_cascade(cascade.CascadeConfig(m, lam, d, seed), count, workers)
        dev = np.abs(pool.samples - pool.samples.mean()) ** 2
        emp = float(dev.mean())
        se = float(dev.std(ddof=1) / math.sqrt(dev.size))
        rows.append({"depth": d, "empirical_var": emp, "formula_var": formula[d - 1],
                     "se": se, "pass": abs(emp - formula[d - 1]) <= 5 * se})
    return rows


def cmd_verify_variance(args, run):
    rows = variance_check(args.m, args.seed, args.depth, args.count, args.workers)
    last = rows[-1]
    payload = {"m": args.m, "seed": args.seed, "depths": rows,
               "empirical_var": last["empirical_var"], "formula_var": last["formula_var"],
               "se": last["se"], "pass": all(r["pass"] for r in rows)}
    _emit(run, payload, args.out)
    if not payload["pass"]:
        raise VerificationFailed("variance recursion check failed")


def cmd_verify_cf(args, run):
    pool = poolio.read_pool(args.input)
    if args.m is not None and args.m != pool.m:
        raise ConfigError(f"--m {args.m} does not match the pool (m={pool.m})")
    out = []
    for t in analysis.probe_grid(args.grid, args.tmax):
        r = analysis.check_cf_fixed_point(pool, t, args.rounds, args.seed)
        out.append({"t": _cjson(t), "residual": r.residual, "bound": r.bound,
                    "ratio": r.ratio, "pass": r.residual <= 5 * r.bound})
    payload = {"m": pool.m, "n": len(pool), "probes": out,
               "pass": all(p["pass"] for p in out)}
    _emit(run, payload, args.out)
    if not payload["pass"]:
        raise VerificationFailed("characteristic function fixed point check failed")


def tree_vs_cascade(m, seed, n, runs, pool_size, workers=1):
    lam = _lambda2(m)
    tree = mst_sim.tree_martingale_samples(m, n, runs, seed, workers, lam)
    pool = cascade.converged_pool(m, lam, pool_size, seed, workers=workers)
    a = tree / tree.mean()
    b = pool.samples / pool.samples.mean()
    test = cascade.pool_energy_distance(a, b, seed=seed)
    return {"m": m, "n": n, "runs": runs, "pool_size": pool_size,
            "statistic": test.statistic, "p_value": test.p_value,
            "tree_variance": float(np.mean(np.abs(a - 1) ** 2)),
            "cascade_variance": float(np.mean(np.abs(b - 1) ** 2)),
            "pass": test.p_value > 0.01}


def cmd_verify_tree(args, run):
    payload = tree_vs_cascade(args.m, args.seed, args.n, args.runs, args.pool_size, args.workers)
    _emit(run, payload, args.out)
    if not payload["pass"]:
        raise VerificationFailed("tree and cascade laws differ at the 1% level")


def cmd_density(args, run):
    pool = poolio.read_pool(args.input)
    grid = analysis.estimate_density(pool, args.bounds, args.bins)
    run.artifact(args.out, poolio.format_grid(grid))
    sys.stdout.write(dumps({"n": grid.total, "in_bounds_fraction": grid.in_bounds_fraction,
                            "l2_norm": grid.l2_norm(), "empty_cells": int((grid.counts == 0).sum()),
                            "out": args.out}))


def cmd_tails(args, run):
    pool = poolio.read_pool(args.input)
    fit = analysis.tail_exponent(pool, args.quantile_lo, args.quantile_hi, seed=args.seed)
    _emit(run, {"delta_hat": fit.delta_hat, "ci": list(fit.ci), "curvature": fit.curvature,
                "curvature_ci": list(fit.curvature_ci), "n_tail": fit.n_tail,
                "thresholds": fit.thresholds.tolist(),
                "log_survival": fit.log_survival.tolist(),
                "heavier_than_exponential": fit.heavier_than_exponential,
                "excludes_zero": fit.ci[0] > 0}, args.out)


def cmd_lemma(args, run):
    lam = _lambda2(args.m)
    pts = analysis.lemma_points(lam, args.kmax)
    big, small = analysis.pick_support_centres(pts)
    _emit(run, {"m": args.m, "lambda2": _cjson(lam), "points": [
        {"k": p.k, "kind": p.kind, "u": p.u, "s": p.s, "t": p.t, "f": _cjson(p.f_value),
         "abs_f": abs(p.f_value), "jacobian_det": p.jacobian_det,
         "jacobian_ok": p.jacobian_ok, "closed_form_product": _cjson(p.closed_form)}
        for p in pts],
        "c": None if big is None else {"k": big.k, "value": _cjson(big.f_value)},
        "c_shift": None if small is None else {"k": small.k, "value": _cjson(small.f_value)}},
        args.out)


def cmd_reach(args, run):
    lam = _lambda2(args.m)
    cert = analysis.reach_from_lemma(args.target, lam, args.radius, args.eps, args.kmax)
    _emit(run, {"m": args.m, "target": _cjson(cert.target), "c": _cjson(cert.c),
                "c_shift": _cjson(cert.c_shift), "radius": cert.radius, "eps": cert.eps,
                "count_c": cert.count_c, "count_shift": cert.count_shift,
                "branch": cert.branch, "delta": _cjson(cert.delta),
                "factors": [_cjson(v) for v in cert.factors],
                "product": _cjson(cert.product), "rel_error": cert.rel_error,
                "preimages": {k: (None if v is None else list(v))
                              for k, v in sorted(cert.preimages.items())},
                "verified": cert.verify()}, args.out)


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_int, default=0, help="master seed")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default=None)
    common.add_argument("--config", default=None, help="flat key=value file; flags win")
    common.add_argument("--work-budget", type=_int, default=None,
                        help="cap on m**depth leaf evaluations (else MST_WORK_BUDGET)")

    p = argparse.ArgumentParser(prog="mstree", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(parent, name, func, **kw):
        sp = parent.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    sp = add(sub, "roots", cmd_roots, help="all roots of the characteristic polynomial")
    sp.add_argument("--m", type=int, required=True)
    sp = add(sub, "lambda2", cmd_lambda2, help="the root lambda2")
    sp.add_argument("--m", type=int, required=True)
    sp = add(sub, "moments", cmd_moments, help="spacing moments and cascade constants")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--s", type=_complex_arg, default=None)

    sample = sub.add_parser("sample", help="write a sample pool").add_subparsers(
        dest="kind", required=True)
    sp = add(sample, "cascade", cmd_sample_cascade)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--count", type=_int, default=10000)
    sp = add(sample, "pool", cmd_sample_pool)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--size", type=_int, default=10**5)
    sp.add_argument("--rounds", type=int, default=30)
    sp = add(sample, "tree", cmd_sample_tree)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--n", type=_int, default=10**5)
    sp.add_argument("--runs", type=_int, default=100)
    sp.add_argument("--keys-file", default=None)

    sp = add(sub, "simulate", cmd_simulate, help="composition vector trace of one tree")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--n", type=_int, default=10**4)
    sp.add_argument("--trace-every", type=_int, default=1)
    sp.add_argument("--keys-file", default=None)

    verify = sub.add_parser("verify", help="statistical verifications").add_subparsers(
        dest="kind", required=True)
    sp = add(verify, "variance", cmd_verify_variance)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--count", type=_int, default=10000)
    sp = add(verify, "cf", cmd_verify_cf)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--m", type=int, default=None)
    sp.add_argument("--grid", type=int, default=20)
    sp.add_argument("--tmax", type=float, default=5.0)
    sp.add_argument("--rounds", type=_int, default=10**5)
    sp = add(verify, "tree-vs-cascade", cmd_verify_tree)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--n", type=_int, default=10**5)
    sp.add_argument("--runs", type=_int, default=1000)
    sp.add_argument("--pool-size", type=_int, default=10**5)

    sp = add(sub, "density", cmd_density, help="2-d histogram of a pool")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--bounds", type=_floats(4), default=[-1.5, 2.5, -2.0, 2.0])
    sp.add_argument("--bins", type=_ints(2), default=[8, 8])
    sp = add(sub, "tails", cmd_tails, help="exponential tail fit of |Z|")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--quantile-lo", type=float, default=0.95)
    sp.add_argument("--quantile-hi", type=float, default=0.999)
    sp = add(sub, "lemma", cmd_lemma, help="points where f is a local diffeomorphism")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--kmax", type=int, default=10)
    sp = add(sub, "reach", cmd_reach, help="product certificate for a target")
    sp.add_argument("--target", type=_complex_arg, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--radius", type=float, default=0.05)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--kmax", type=int, default=10)
    return p


def read_config(path) -> list:
    """``key=value`` lines as flag tokens; ``#`` starts a comment."""
    tokens = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: bad config line {raw.strip()!r}")
            key, value = (x.strip() for x in line.split("=", 1))
            tokens.extend([f"--{key.replace('_', '-')}", value])
    return tokens


def expand_config(argv: list) -> list:
    """Splice config-file flags in before the user's flags so the latter win."""
    if "--config" not in argv:
        return argv
    path = argv[argv.index("--config") + 1]
    head = 2 if argv and argv[0] in NESTED else 1
    return argv[:head] + read_config(path) + argv[head:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        expanded = expand_config(argv)
    except (OSError, MstError) as err:
        sys.stderr.write(dumps({"error": type(err).__name__, "message": str(err)}))
        return 2
    args = build_parser().parse_args(expanded)
    run = Run(args, argv)
    try:
        if getattr(args, "m", None) is not None and args.m < 2:
            raise ConfigError(f"--m must be >= 2, got {args.m}")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.work_budget is not None:
            if args.work_budget < 1:
                raise ConfigError("--work-budget must be >= 1")
            os.environ["MST_WORK_BUDGET"] = str(args.work_budget)
        _check_writable(args.out)
        args.func(args, run)
    except VerificationFailed as err:
        run.commit()  # the failing report is itself the artifact
        sys.stderr.write(dumps({"error": type(err).__name__, "message": str(err)}))
        return err.exit_code
    except MstError as err:
        sys.stderr.write(dumps({"error": type(err).__name__, "message": str(err)}))
        return err.exit_code
    except (OSError, ValueError) as err:
        sys.stderr.write(dumps({"error": type(err).__name__, "message": str(err)}))
        return 2
    run.commit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
