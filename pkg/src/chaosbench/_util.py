"""Small shared helpers: seed derivation and quadrature rules."""

from __future__ import annotations

import numpy as np

#: Default number of quadrature points for inner products on [0, 1].
DEFAULT_QUAD_POINTS = 10_000


def derive_seed(master: int, *key: int) -> int:
    """Derive an independent child seed from a master seed and an index key.

    Uses ``numpy.random.SeedSequence`` with ``key`` as the spawn key, so the
    mapping is deterministic, documented, and collision-resistant.  Tasks that
    run in parallel each receive their own derived seed.
    """
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def midpoints(n: int) -> np.ndarray:
    """Midpoint nodes (j + 1/2)/n, j = 0..n-1, of the uniform partition of [0, 1]."""
    return (np.arange(n) + 0.5) / n


def gauss_legendre_panels(lo: float, hi: float, panels: int, nodes: int = 8):
    """Composite Gauss-Legendre rule on [lo, hi].

    Returns (points, weights).  Exact for polynomials up to degree
    ``2 * nodes - 1`` on each panel, so polynomial integrands are integrated
    to float precision.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts
