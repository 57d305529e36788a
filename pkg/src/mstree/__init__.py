"""Random m-ary search trees beyond the phase transition at m = 27.

Modules: ``charpoly`` (roots of the characteristic polynomial),
``spacings`` (uniform spacings and their moments), ``cascade`` (the
Mandelbrot cascade and pool iteration), ``mst_sim`` (tree growth and the
urn martingale), ``analysis`` (density, characteristic function, tails,
support witnesses) and ``cli``.
"""

__version__ = "0.1.0"
