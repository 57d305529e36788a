"""Self-describing CSV files for sample pools and composition traces.

Pool files look like::

    # provenance=pool-iterated, m=27, lambda_re=..., lambda_im=..., seed=1, n=100000
    re,im
    1.0312,-0.2210
    ...

Floats are written with ``repr`` so a round trip is exact and reruns are
byte identical.
"""

from __future__ import annotations

import io
import os
import tempfile

import numpy as np

from .cascade import SamplePool


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _rows(a, b):
    return "".join(f"{x!r},{y!r}\n" for x, y in zip(a.tolist(), b.tolist()))


def format_pool(pool: SamplePool) -> str:
    lam = complex(pool.lam)
    header = (f"# provenance={pool.provenance}, m={pool.m}, lambda_re={lam.real!r}, "
              f"lambda_im={lam.imag!r}, seed={pool.meta.get('seed', '')}, n={len(pool)}, "
              f"generation={pool.generation}\n")
    return header + "re,im\n" + _rows(pool.samples.real, pool.samples.imag)


def write_pool(path, pool: SamplePool) -> None:
    atomic_write(path, format_pool(pool))


def parse_header(line: str) -> dict:
    out = {}
    for part in line.lstrip("#").split(","):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_pool(path) -> SamplePool:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing pool header line")
        meta = parse_header(first)
        body = fh.read()
    data = np.loadtxt(io.StringIO(body), delimiter=",", skiprows=1, ndmin=2)
    samples = data[:, 0] + 1j * data[:, 1]
    lam = complex(float(meta.get("lambda_re", "nan")), float(meta.get("lambda_im", "nan")))
    extra = {"seed": meta["seed"]} if meta.get("seed") else {}
    return SamplePool(samples, int(meta["m"]), lam, int(meta.get("generation", 0)),
                      meta.get("provenance", "external"), extra)


def format_trace(m: int, rows) -> str:
    """``n,X1,...,X_{m-1}`` rows from ``(n, counts)`` pairs."""
    cols = ",".join(f"X{i}" for i in range(1, m))
    lines = [f"n,{cols}\n"]
    lines.extend(f"{n}," + ",".join(str(int(c)) for c in counts) + "\n" for n, counts in rows)
    return "".join(lines)


def format_grid(grid) -> str:
    xs, ys = grid.cell_centers()
    dens = grid.density()
    lines = ["x,y,density\n"]
    for i, x in enumerate(xs.tolist()):
        for j, y in enumerate(ys.tolist()):
            lines.append(f"{x!r},{y!r},{float(dens[i, j])!r}\n")
    return "".join(lines)
