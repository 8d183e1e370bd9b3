"""Multiple Wiener integrals against discretized Brownian paths.

Two independent evaluation routes are provided on purpose:

* ``tensor_chaos`` reduces a product integrand to single Ito integrals and
  L2 inner products through the product-formula recursion

      I_{p+1}(g_1 x ... x g_{p+1})
          = I_p(g_1 x ... x g_p) I_1(g_{p+1})
            - sum_{j<=p} <g_j, g_{p+1}> I_{p-1}(x_{i!=j} g_i),

  with I_0 = 1.  For equal factors this collapses to the Hermite identity
  implemented in ``hermite_chaos``.

* ``brute_multiple_integral`` sums the gridded integrand over multi-indices
  with pairwise-distinct coordinates against coarse-cell increments.  It is
  the slow off-diagonal Riemann discretization and serves as the oracle for
  the recursion.

Monte Carlo validators check the Ito isometry, orthogonality of distinct
orders, hypercontractive moment growth, and the second-moment bound
(E xi^2r)^(1/r) <= c_l^2(2r) 2^l l! ||k||^2l h^-l for the estimator kernel.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e

from ._util import DEFAULT_QUAD_POINTS, midpoints
from .errors import AlignmentError, DegenerateIntegrandError, UnsupportedOrderError
from .kernelkit import BandwidthedKernel, MomentKernel, kernel_slices
from .pathlab import BrownianPath


@dataclass(frozen=True)
class GriddedFunction:
    """A function on [0,1]^dim tabulated at the midpoint grid, G points per axis."""

    dim: int
    grid_size: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if values.shape != (self.grid_size,) * self.dim:
            raise ValueError(
                f"values must have shape {(self.grid_size,) * self.dim}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")

    @property
    def centers(self) -> np.ndarray:
        return midpoints(self.grid_size)

    def l2_norm_sq(self) -> float:
        """Midpoint tensor quadrature of the squared function (weight G^-dim)."""
        return float(np.mean(self.values**2))

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        for perm in itertools.permutations(range(self.dim)):
            if np.max(np.abs(self.values - np.transpose(self.values, perm))) > tol:
                return False
        return True

    @classmethod
    def from_callable(cls, dim: int, grid_size: int, f: Callable) -> "GriddedFunction":
        c = midpoints(grid_size)
        grids = np.meshgrid(*([c] * dim), indexing="ij", sparse=True)
        values = np.broadcast_to(
            np.asarray(f(*grids), dtype=float), (grid_size,) * dim
        ).copy()
        return cls(dim, grid_size, values)


def chaos_constant(order: int, q: float) -> float:
    """Hypercontractivity constant (q - 1)^(order/2); requires q >= 2."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    return float((q - 1.0) ** (order / 2.0))


def ito_integral_1(g: Callable, path: BrownianPath) -> float:
    """Left-point Ito sum sum_j g(t_j) (W_{j+1} - W_j)."""
    t_left = path.grid.points[:-1]
    return float(np.dot(np.asarray(g(t_left), dtype=float), path.increments))


def l2_inner(g: Callable, g2: Callable, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """Composite midpoint quadrature of int_0^1 g g2."""
    if quad_points < 2:
        raise ValueError("quad_points must be >= 2")
    x = midpoints(quad_points)
    return float(np.mean(np.asarray(g(x), dtype=float) * np.asarray(g2(x), dtype=float)))


def _chaos_from_parts(xi: Sequence, gram: np.ndarray):
    """Multiple integral value from single integrals and the inner-product matrix.

    ``xi`` entries may be scalars or aligned arrays (vectorized across paths);
    the recursion only uses + and *, so it broadcasts.
    """
    n = len(xi)
    memo: dict[tuple[int, ...], object] = {(): 1.0}

    def rec(indices: tuple[int, ...]):
        if indices in memo:
            return memo[indices]
        *rest_l, last = indices
        rest = tuple(rest_l)
        value = rec(rest) * xi[last]
        for pos, j in enumerate(rest):
            reduced = rest[:pos] + rest[pos + 1 :]
            value = value - gram[j, last] * rec(reduced)
        memo[indices] = value
        return value

    return rec(tuple(range(n)))


def tensor_chaos(
    gs: Sequence[Callable], path: BrownianPath, quad_points: int = DEFAULT_QUAD_POINTS
) -> float:
    """Multiple Wiener integral of the (implicitly symmetrized) product g_1 x ... x g_l.

    Built from single Ito integrals and pairwise inner products only, via the
    product-formula recursion.
    """
    if len(gs) < 1:
        raise ValueError("need at least one factor")
    xi = [ito_integral_1(g, path) for g in gs]
    gram = np.empty((len(gs), len(gs)))
    for i, gi in enumerate(gs):
        for j in range(i, len(gs)):
            gram[i, j] = gram[j, i] = l2_inner(gi, gs[j], quad_points)
    return float(_chaos_from_parts(xi, gram))


def hermite_chaos(
    g: Callable, order: int, path: BrownianPath, quad_points: int = DEFAULT_QUAD_POINTS
) -> float:
    """Equal-factor fast path: ||g||^l He_l(I_1(g)/||g||), He_l probabilists' Hermite."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    norm_sq = l2_inner(g, g, quad_points)
    if norm_sq <= 0.0:
        raise DegenerateIntegrandError("hermite_chaos requires ||g|| > 0")
    norm = np.sqrt(norm_sq)
    xi = ito_integral_1(g, path)
    coeffs = np.zeros(order + 1)
    coeffs[order] = 1.0
    return float(norm**order * hermite_e.hermeval(xi / norm, coeffs))


def _coarse_increments(path: BrownianPath, grid_size: int) -> np.ndarray:
    n = path.grid.n_steps
    if n % grid_size != 0:
        raise AlignmentError(f"grid_size {grid_size} does not divide path resolution {n}")
    edges = np.arange(grid_size + 1) * (n // grid_size)
    return path.values[edges[1:]] - path.values[edges[:-1]]


def brute_multiple_integral(f: GriddedFunction, path: BrownianPath) -> float:
    """Off-diagonal Riemann-Ito sum of the gridded integrand (independent oracle).

    Sums f at cell centers times products of coarse-cell increments over
    multi-indices with pairwise-distinct coordinates.  Supports dim <= 3;
    exact diagonals are excluded and no Ito-correction terms are added.
    """
    if f.dim > 3:
        raise UnsupportedOrderError(f"brute force supports order <= 3, got {f.dim}")
    v = _coarse_increments(path, f.grid_size)
    fv = f.values
    if f.dim == 1:
        return float(fv @ v)
    if f.dim == 2:
        full = float(v @ fv @ v)
        diag = float(np.einsum("jj,j->", fv, v**2))
        return full - diag
    full = float(np.einsum("abc,a,b,c->", fv, v, v, v, optimize=True))
    v2 = v**2
    a12 = float(np.einsum("jjk,j,k->", fv, v2, v))
    a13 = float(np.einsum("jkj,j,k->", fv, v2, v))
    a23 = float(np.einsum("kjj,j,k->", fv, v2, v))
    triple = float(np.einsum("jjj,j->", fv, v**3))
    return full - a12 - a13 - a23 + 2.0 * triple


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo moment vs. its theoretical value, with the CLT error bar."""

    empirical: float
    theoretical: float
    mc_stderr: float
    n_mc: int
    seed: int

    def within(self, n_sigma: float = 3.0) -> bool:
        return abs(self.empirical - self.theoretical) <= n_sigma * self.mc_stderr

    def to_json(self) -> str:
        return json.dumps(
            {
                "empirical": self.empirical,
                "theoretical": self.theoretical,
                "mc_stderr": self.mc_stderr,
                "n_mc": self.n_mc,
                "seed": self.seed,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class BoundReport:
    """Empirical moment against a theoretical upper bound."""

    empirical: float
    bound: float
    within_bound: bool
    mc_stderr: float
    n_mc: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "empirical": self.empirical,
                "theoretical": self.bound,
                "within_bound": self.within_bound,
                "mc_stderr": self.mc_stderr,
                "n_mc": self.n_mc,
                "seed": self.seed,
            },
            sort_keys=True,
        )


_MC_BATCH = 20_000


def _increment_batches(n_mc: int, n_steps: int, seed: int, batch: int = _MC_BATCH):
    """Batched N(0, 1/N) increment matrices from one seeded generator."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    remaining = n_mc
    scale = np.sqrt(1.0 / n_steps)
    while remaining > 0:
        size = min(batch, remaining)
        yield rng.normal(0.0, scale, (size, n_steps))
        remaining -= size


def _chaos_samples(gs, dw: np.ndarray, t_left: np.ndarray, quad_points: int) -> np.ndarray:
    """Vectorized multiple-integral values across a batch of increment rows."""
    g_at_left = np.stack([np.asarray(g(t_left), dtype=float) for g in gs])
    xi = g_at_left @ dw.T  # (len(gs), batch)
    gram = np.empty((len(gs), len(gs)))
    for i in range(len(gs)):
        for j in range(i, len(gs)):
            gram[i, j] = gram[j, i] = l2_inner(gs[i], gs[j], quad_points)
    return np.asarray(_chaos_from_parts(list(xi), gram))


def _sym_product_inner(gs, gs_prime, quad_points: int) -> float:
    """l! <sym tensor, sym tensor'> = permanent of the cross inner-product matrix."""
    cross = np.array([[l2_inner(g, gp, quad_points) for gp in gs_prime] for g in gs])
    total = 0.0
    for perm in itertools.permutations(range(len(gs))):
        total += float(np.prod(cross[np.arange(len(gs)), perm]))
    return total


def isometry_report(
    gs: Sequence[Callable],
    gs_prime: Sequence[Callable],
    n_mc: int,
    seed: int,
    n_steps: int = 512,
    quad_points: int = DEFAULT_QUAD_POINTS,
) -> MomentReport:
    """Monte Carlo estimate of E[I_l I_l'] against the isometry target.

    The target is 0 for distinct orders and l! times the inner product of the
    symmetrized tensors otherwise (for equal-factor tensors, l! <g, g'>^l).
    """
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    if not gs or not gs_prime:
        raise ValueError("both tensors need at least one factor")
    t_left = np.arange(n_steps) / n_steps
    total = 0.0
    total_sq = 0.0
    for dw in _increment_batches(n_mc, n_steps, seed):
        a = _chaos_samples(gs, dw, t_left, quad_points)
        b = _chaos_samples(gs_prime, dw, t_left, quad_points)
        prod = a * b
        total += float(np.sum(prod))
        total_sq += float(np.sum(prod**2))
    mean = total / n_mc
    var = max(total_sq / n_mc - mean**2, 0.0)
    stderr = float(np.sqrt(var / n_mc))
    if len(gs) != len(gs_prime):
        theoretical = 0.0
    else:
        theoretical = _sym_product_inner(gs, gs_prime, quad_points)
    return MomentReport(mean, theoretical, stderr, n_mc, seed)


def estimator_kernel_variate(
    kernel: MomentKernel, order: int, h: float, t: Sequence[float]
) -> list:
    """The slice factorization of K_h(t, .), the integrand of the xi variates."""
    return kernel_slices(BandwidthedKernel(kernel, h, order), t)


def moment_bound_report(
    order: int,
    h: float,
    r: int,
    n_mc: int,
    seed: int,
    kernel: MomentKernel,
    t: Sequence[float] | None = None,
    n_steps: int = 512,
    quad_points: int = DEFAULT_QUAD_POINTS,
) -> BoundReport:
    """Check (E xi^2r)^(1/r) <= c_l^2(2r) 2^l l! ||k||^2l h^-l at an interior point.

    xi is the multiple integral of K_h(t, .) for a fixed t whose coordinates
    must lie in [h, 1-h]; the default is t = (0.45, ..., 0.45).
    """
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    if t is None:
        t = [0.45] * order
    t = np.asarray(t, dtype=float)
    if np.any(t < h) or np.any(t > 1.0 - h):
        raise ValueError("t must be interior: all coordinates in [h, 1-h]")
    gs = estimator_kernel_variate(kernel, order, h, t)
    t_left = np.arange(n_steps) / n_steps
    total = 0.0
    total_sq = 0.0
    for dw in _increment_batches(n_mc, n_steps, seed):
        xi = _chaos_samples(gs, dw, t_left, quad_points)
        powed = xi ** (2 * r)
        total += float(np.sum(powed))
        total_sq += float(np.sum(powed**2))
    mean = total / n_mc
    var = max(total_sq / n_mc - mean**2, 0.0)
    # delta method for x -> x^(1/r)
    stderr_mean = np.sqrt(var / n_mc)
    empirical = mean ** (1.0 / r)
    stderr = float(stderr_mean / r * mean ** (1.0 / r - 1.0)) if mean > 0 else 0.0
    b_lr = chaos_constant(order, 2 * r) ** 2 * 2.0**order
    b_lr *= float(math.factorial(order)) * kernel.l2_norm ** (2 * order)
    bound = b_lr * h ** (-order)
    return BoundReport(empirical, bound, empirical <= bound, stderr, n_mc, seed)
