"""Ground-truth mappings: finite-chaos specs, synthesis, class checks, bumps.

A mapping is represented as a constant plus per-order components f_l,

    m(W) = a + sum_l I_l(f_l)(W) / l!,

with each component stored as a constant, an equal-factor product g x ... x g
of a univariate g, or a gridded symmetric tensor.  Evaluation dispatches to
the Hermite identity for the first two representations and to the gridded
off-diagonal sum for the third.

The bump family implements the disjoint-support construction used for hard
instances: scaled copies of psi(u) = exp(-1/(1-u^2)) centered at
x_i = (2 r_i + 1) h, combined by a 0/1 selector and an amplitude rho.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from ._util import DEFAULT_QUAD_POINTS, derive_seed, midpoints
from .chaoscalc import (
    GriddedFunction,
    brute_multiple_integral,
    hermite_chaos,
    l2_inner,
)
from .chaosreg import Sample
from .pathlab import BrownianPath, TimeGrid, sample_brownian


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def mu4(self) -> float:
        """Fourth-moment proxy (E eps^4)^(1/4)."""
        return self.sigma * 3.0**0.25

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(0.0, self.sigma, n) if self.sigma > 0 else np.zeros(n)


@dataclass(frozen=True)
class UniformNoise:
    half_width: float

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    @property
    def mu4(self) -> float:
        return self.half_width / 5.0**0.25

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.half_width == 0:
            return np.zeros(n)
        return rng.uniform(-self.half_width, self.half_width, n)


NoiseSpec = Union[GaussianNoise, UniformNoise]


@dataclass(frozen=True)
class ConstantComponent:
    """f_l identically equal to ``value`` on [0,1]^l."""

    order: int
    value: float

    def l2_norm_sq(self, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
        return self.value**2

    def gridded(self, grid_size: int) -> np.ndarray:
        return np.full((grid_size,) * self.order, self.value)

    def chaos_value(self, path: BrownianPath, quad_points: int) -> float:
        if self.value == 0.0:
            return 0.0
        return self.value * hermite_chaos(lambda u: np.ones_like(u), self.order, path, quad_points)


@dataclass(frozen=True)
class EqualFactorComponent:
    """f_l = g x ... x g for a univariate g (vectorized callable)."""

    order: int
    g: Callable = field(compare=False)

    def l2_norm_sq(self, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
        return l2_inner(self.g, self.g, quad_points) ** self.order

    def gridded(self, grid_size: int) -> np.ndarray:
        row = np.asarray(self.g(midpoints(grid_size)), dtype=float)
        values = row
        for _ in range(self.order - 1):
            values = np.multiply.outer(values, row)
        return values

    def chaos_value(self, path: BrownianPath, quad_points: int) -> float:
        return hermite_chaos(self.g, self.order, path, quad_points)


@dataclass(frozen=True)
class GriddedComponent:
    """f_l tabulated as a symmetric tensor on the midpoint grid."""

    order: int
    gridded_function: GriddedFunction

    def __post_init__(self):
        if self.gridded_function.dim != self.order:
            raise ValueError("tensor dimension must equal the component order")
        if not self.gridded_function.is_symmetric():
            raise ValueError("gridded components must be symmetric")

    def l2_norm_sq(self, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
        return self.gridded_function.l2_norm_sq()

    def gridded(self, grid_size: int) -> np.ndarray:
        if grid_size != self.gridded_function.grid_size:
            raise ValueError(
                f"component tabulated at G={self.gridded_function.grid_size}, "
                f"requested G={grid_size}"
            )
        return self.gridded_function.values

    def chaos_value(self, path: BrownianPath, quad_points: int) -> float:
        return brute_multiple_integral(self.gridded_function, path)


Component = Union[ConstantComponent, EqualFactorComponent, GriddedComponent]


@dataclass(frozen=True)
class ClassParams:
    """Declared smoothness/size parameters of the mapping."""

    s: tuple[float, ...] = ()
    lam: tuple[float, ...] = ()
    max_order: int = 0
    class_bound: float = 1.0
    gamma: float | None = None


@dataclass(frozen=True)
class MappingSpec:
    """Constant term, per-order components, noise law, and declared class."""

    a: float
    components: tuple[Component, ...]
    noise: NoiseSpec
    declared: ClassParams = ClassParams()

    def __post_init__(self):
        orders = [c.order for c in self.components]
        if len(set(orders)) != len(orders):
            raise ValueError("at most one component per order")
        if any(o < 1 for o in orders):
            raise ValueError("component orders must be >= 1")

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(c.order for c in self.components)

    def component_for(self, order: int) -> Component | None:
        for c in self.components:
            if c.order == order:
                return c
        return None

    def component_values(self, order: int, grid_size: int) -> np.ndarray | None:
        c = self.component_for(order)
        return None if c is None else c.gridded(grid_size)

    def evaluate(self, path: BrownianPath, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
        return evaluate_mapping(self, path, quad_points)


def quadratic_terminal(noise: NoiseSpec | None = None) -> MappingSpec:
    """The benchmark truth with a unit order-2 component.

    a = 1 and f_2 = 1, i.e. m(W) = 1 + I_2(1)(W)/2! = (1 + W(1)^2)/2: an
    affine function of the squared terminal value, discontinuous in the
    sup-norm sense yet of finite chaos order.  Its fitted order-2 surface
    converges to 1, and it sits in the order-2 mapping class with unit bound
    (||f_2||^2 = 1 <= 2! M^2 at M = 1).
    """
    return MappingSpec(
        a=1.0,
        components=(ConstantComponent(2, 1.0),),
        noise=noise if noise is not None else GaussianNoise(0.5),
        declared=ClassParams(s=(1.0, 1.0), lam=(1.0, 1.0), max_order=2, class_bound=1.0),
    )


def evaluate_mapping(
    spec: MappingSpec, path: BrownianPath, quad_points: int = DEFAULT_QUAD_POINTS
) -> float:
    """a + sum_l I_l(f_l)(W) / l!, dispatching on the component representation."""
    value = spec.a
    for comp in spec.components:
        value += comp.chaos_value(path, quad_points) / math.factorial(comp.order)
    return float(value)


def _evaluate_batch(spec: MappingSpec, grid: TimeGrid, increments: np.ndarray,
                    quad_points: int) -> np.ndarray:
    """Vectorized ``evaluate_mapping`` across rows of an increment matrix."""
    n = increments.shape[0]
    values = np.full(n, spec.a)
    t_left = grid.points[:-1]
    cum = None
    for comp in spec.components:
        fact = math.factorial(comp.order)
        if isinstance(comp, (ConstantComponent, EqualFactorComponent)):
            if isinstance(comp, ConstantComponent):
                if comp.value == 0.0:
                    continue
                g_left = np.ones_like(t_left)
                norm_sq = 1.0
                scale = comp.value
            else:
                g_left = np.asarray(comp.g(t_left), dtype=float)
                norm_sq = l2_inner(comp.g, comp.g, quad_points)
                scale = 1.0
            norm = math.sqrt(norm_sq)
            xi = increments @ g_left
            coeffs = np.zeros(comp.order + 1)
            coeffs[comp.order] = 1.0
            herm = np.polynomial.hermite_e.hermeval(xi / norm, coeffs)
            values += scale * norm**comp.order * herm / fact
        else:
            if cum is None:
                cum = np.concatenate(
                    [np.zeros((n, 1)), np.cumsum(increments, axis=1)], axis=1
                )
            for i in range(n):
                path = BrownianPath(grid, cum[i])
                values[i] += comp.chaos_value(path, quad_points) / fact
    return values


def synthesize(spec: MappingSpec, n: int, grid: TimeGrid, seed: int,
               quad_points: int = DEFAULT_QUAD_POINTS) -> Sample:
    """Draw n independent (W_i, Y_i = m(W_i) + eps_i) pairs, deterministic given seed.

    Path i uses the derived seed (seed, 0, i); the noise vector uses
    (seed, 1).  Noise is independent of the paths.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rows = np.empty((n, grid.n_steps + 1))
    for i in range(n):
        rows[i] = sample_brownian(grid, derive_seed(seed, 0, i)).values
    increments = np.diff(rows, axis=1)
    m_values = _evaluate_batch(spec, grid, increments, quad_points)
    noise_rng = np.random.default_rng(derive_seed(seed, 1))
    responses = m_values + spec.noise.sample(noise_rng, n)
    return Sample(grid, responses, rows)


@dataclass(frozen=True)
class ClassCheckEntry:
    order: int
    norm_sq: float
    norm_bound: float | None
    norm_ok: bool | None
    holder_checked: bool


@dataclass(frozen=True)
class ClassCheckReport:
    kind: str
    entries: tuple[ClassCheckEntry, ...]
    growth_sum: float | None
    growth_bound: float | None
    passed: bool


def class_check(
    spec: MappingSpec,
    kind: str,
    s: Sequence[float] | None = None,
    lam: Sequence[float] | None = None,
    max_order: int | None = None,
    class_bound: float | None = None,
    gamma: float | None = None,
    quad_points: int = DEFAULT_QUAD_POINTS,
) -> ClassCheckReport:
    """Check membership conditions for the finite-order or growth-controlled class.

    ``kind`` is "finite" (per-order bound ||f_l||^2 <= M^2 l!, orders <= L) or
    "growth" (sum_l e^(2 gamma l) ||f_l||^2 / l! <= M^2).  Smoothness is only
    certified for representations with closed-form Hoelder constants
    (constants are C-infinity); other components are reported as unchecked.
    """
    if kind not in ("finite", "growth"):
        raise ValueError("kind must be 'finite' or 'growth'")
    d = spec.declared
    m_bound = class_bound if class_bound is not None else d.class_bound
    l_max = max_order if max_order is not None else d.max_order
    entries = []
    ok = True
    if kind == "finite":
        for comp in spec.components:
            norm_sq = comp.l2_norm_sq(quad_points)
            bound = m_bound**2 * math.factorial(comp.order)
            norm_ok = norm_sq <= bound and comp.order <= l_max
            ok = ok and norm_ok
            entries.append(
                ClassCheckEntry(
                    comp.order, norm_sq, bound, norm_ok,
                    holder_checked=isinstance(comp, ConstantComponent),
                )
            )
        return ClassCheckReport(kind, tuple(entries), None, None, ok)
    g = gamma if gamma is not None else (d.gamma if d.gamma is not None else 0.0)
    total = 0.0
    for comp in spec.components:
        norm_sq = comp.l2_norm_sq(quad_points)
        total += math.exp(2.0 * g * comp.order) * norm_sq / math.factorial(comp.order)
        entries.append(
            ClassCheckEntry(comp.order, norm_sq, None, None,
                            holder_checked=isinstance(comp, ConstantComponent))
        )
    ok = total <= m_bound**2
    return ClassCheckReport(kind, tuple(entries), total, m_bound**2, ok)


def spec_to_config_doc(spec: MappingSpec) -> dict:
    """Serialize a mapping spec to the experiment-config truth format.

    Constants and polynomial equal-factor components round-trip exactly;
    gridded components are stored flat in row-major order.  Equal-factor
    components with non-polynomial callables cannot be serialized.
    """
    components = []
    for comp in spec.components:
        if isinstance(comp, ConstantComponent):
            components.append({"order": comp.order, "kind": "constant", "value": comp.value})
        elif isinstance(comp, EqualFactorComponent):
            if not isinstance(comp.g, np.polynomial.Polynomial):
                raise ValueError(
                    "only polynomial equal-factor components are serializable"
                )
            components.append(
                {"order": comp.order, "kind": "poly", "coeffs": comp.g.coef.tolist()}
            )
        else:
            gf = comp.gridded_function
            components.append(
                {
                    "order": comp.order,
                    "kind": "gridded",
                    "grid_size": gf.grid_size,
                    "values": gf.values.ravel(order="C").tolist(),
                }
            )
    if isinstance(spec.noise, GaussianNoise):
        noise = {"kind": "gaussian", "sigma": spec.noise.sigma}
    else:
        noise = {"kind": "uniform", "half_width": spec.noise.half_width}
    d = spec.declared
    cls: dict = {"max_order": d.max_order, "class_bound": d.class_bound}
    if d.s:
        cls["s"] = list(d.s)
    if d.lam:
        cls["lam"] = list(d.lam)
    if d.gamma is not None:
        cls["gamma"] = d.gamma
    return {"a": spec.a, "components": components, "noise": noise, "class": cls}


def bump_psi(u):
    """The smooth compactly supported bump exp(-1/(1-u^2)) on (-1, 1), 0 outside."""
    arr = np.asarray(u, dtype=float)
    out = np.zeros_like(arr)
    inside = np.abs(arr) < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - arr[inside] ** 2))
    if np.isscalar(u) or arr.ndim == 0:
        return float(out)
    return out


def _selector_is_permutation_closed(selector: Iterable[tuple[int, ...]]) -> bool:
    cells = set(tuple(r) for r in selector)
    return all(tuple(p) in cells for r in cells for p in itertools.permutations(r))


def bump_instance(
    order: int,
    h: float,
    selector: Iterable[tuple[int, ...]],
    rho: float,
    grid_size: int,
    noise: NoiseSpec | None = None,
    s: float | None = None,
    lam: float | None = None,
) -> tuple[GriddedFunction, MappingSpec]:
    """Gridded bump combination g_w = rho sum_{r in w} prod_i psi((y_i - x_i^r)/h).

    1/(2h) must be an integer R; bump centers x_i = (2 r_i + 1) h are spaced
    2h apart so supports are disjoint.  The selector must be closed under
    coordinate permutations so the tensor is symmetric.  Returns the gridded
    tensor and a MappingSpec wrapping it as the single order-l component.
    """
    r_cells = 1.0 / (2.0 * h)
    n_cells = round(r_cells)
    if abs(r_cells - n_cells) > 1e-9 or n_cells < 1:
        raise ValueError(f"1/(2h) must be a positive integer, got {r_cells}")
    cells = [tuple(int(i) for i in r) for r in selector]
    if any(len(r) != order for r in cells):
        raise ValueError("selector cells must have one index per coordinate")
    if any(min(r) < 0 or max(r) >= n_cells for r in cells):
        raise ValueError(f"selector indices must lie in 0..{n_cells - 1}")
    if not _selector_is_permutation_closed(cells):
        raise ValueError("selector must be permutation-closed so the bump tensor is symmetric")
    y = midpoints(grid_size)
    # per-axis profile of each 1d cell index: psi((y - x_r)/h)
    profiles = np.stack([bump_psi((y - (2 * r + 1) * h) / h) for r in range(n_cells)])
    values = np.zeros((grid_size,) * order)
    for r in set(cells):
        term = profiles[r[0]]
        for i in r[1:]:
            term = np.multiply.outer(term, profiles[i])
        values += term
    values *= rho
    gridded = GriddedFunction(order, grid_size, values)
    declared = ClassParams(
        s=(float(s),) * order if s is not None else (),
        lam=(float(lam),) * order if lam is not None else (),
        max_order=order,
        class_bound=1.0,
    )
    spec = MappingSpec(
        a=0.0,
        components=(GriddedComponent(order, gridded),),
        noise=noise if noise is not None else GaussianNoise(0.0),
        declared=declared,
    )
    return gridded, spec
