"""Deformed Euler-top vector fields.

A deformation attaches functions ``alpha_k`` to the quadratic first
integrals of the normalized Euler top,

    I_k = x1^2 - x_{k+1}^2 + 2 alpha_k,      k = 1 .. n-1,

and the vector field is rebuilt from the integrals alone.  In three
dimensions this is the explicit formula `build_deformed_3d`; in general it
is the generalized cross product of the n-1 gradients, `build_deformed_nd`.
Both are orthogonal to every gradient by construction, so each ``I_k`` is
conserved along the flow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import BinOp, Coord, Const, Neg, Node, Pow

__all__ = [
    "COORDINATE_PLANES", "COINCIDENCE_PLANES", "BUILTINS",
    "DeformationSpec", "VectorField", "ScalingCoefficients", "NoRealScalingError",
    "build_deformed_3d", "build_deformed_nd", "synthesize", "builtin",
    "normalize_rigid_body", "rigid_body_field", "equilibria_scan",
    "infer_guards", "singular_distance", "closed_form_field",
]

COORDINATE_PLANES = "coordinate-planes"
COINCIDENCE_PLANES = "coincidence-planes"

#: dimensions above this use numeric cofactor evaluation
SYMBOLIC_MAX_DIMENSION = 5


# ---------------------------------------------------------------------------
# singular sets


def infer_guards(exprs: Sequence[Node]) -> tuple[str, ...]:
    """Detect denominators of the form ``xi`` or ``xi - xj``.

    Only these two pole families are recognised; anything else still
    surfaces as an evaluation error at run time.
    """
    found = set()

    def denominators(e):
        for node in ex._walk(e):
            if isinstance(node, BinOp) and node.op == "/":
                yield node.right
            elif isinstance(node, Pow) and node.exponent < 0:
                yield node.base

    def classify(d):
        if isinstance(d, Coord):
            found.add(COORDINATE_PLANES)
        elif isinstance(d, BinOp) and d.op == "-" and isinstance(d.left, Coord) \
                and isinstance(d.right, Coord) and d.left.index != d.right.index:
            found.add(COINCIDENCE_PLANES)
        elif isinstance(d, BinOp) and d.op == "*":
            classify(d.left)
            classify(d.right)
        elif isinstance(d, Pow):
            classify(d.base)
        elif isinstance(d, Neg):
            classify(d.arg)

    for e in exprs:
        for d in denominators(e):
            classify(d)
    return tuple(sorted(found))


def singular_distance(guards: Sequence[str], x: Sequence[float]) -> float:
    """Distance-like measure to the nearest guarded pole set (inf if none)."""
    x = np.asarray(x, dtype=float)
    dist = math.inf
    if COORDINATE_PLANES in guards:
        dist = min(dist, float(np.min(np.abs(x))))
    if COINCIDENCE_PLANES in guards and x.size > 1:
        diffs = np.abs(x[:, None] - x[None, :])[np.triu_indices(x.size, 1)]
        dist = min(dist, float(np.min(diffs)))
    return dist


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class DeformationSpec:
    """Dimension plus the n-1 deformation functions ``alpha_k``.

    For n = 3, ``deformations[0]`` is alpha and ``deformations[1]`` is beta.
    """

    dimension: int
    deformations: tuple[Node, ...]
    bindings: Mapping[str, float] = dc_field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "deformations", tuple(self.deformations))
        object.__setattr__(self, "bindings", {k: float(v) for k, v in self.bindings.items()})
        if self.dimension < 3:
            raise ValueError("dimension must be at least 3")
        if len(self.deformations) != self.dimension - 1:
            raise ValueError(
                f"expected {self.dimension - 1} deformation functions, got {len(self.deformations)}")
        for a in self.deformations:
            bad = [i for i in ex.coordinates(a) if i > self.dimension]
            if bad:
                raise ValueError(f"deformation references x{bad[0]} beyond dimension {self.dimension}")
        unbound = set().union(*(ex.parameters(a) for a in self.deformations)) - set(self.bindings)
        if unbound:
            raise ValueError(f"unbound parameters: {sorted(unbound)}")

    @classmethod
    def from_text(cls, dimension: int, sources: Sequence[str],
                  bindings: Mapping[str, float] | None = None, name: str | None = None):
        bindings = dict(bindings or {})
        deformations = tuple(ex.parse(s, dimension, bindings) for s in sources)
        return cls(dimension, deformations, bindings, name)

    @classmethod
    def zero(cls, dimension: int) -> "DeformationSpec":
        return cls(dimension, (ex.ZERO,) * (dimension - 1))

    def with_bindings(self, **values: float) -> "DeformationSpec":
        return DeformationSpec(self.dimension, self.deformations,
                               {**self.bindings, **values}, self.name)

    @cached_property
    def integrals(self) -> tuple[Node, ...]:
        """``I_k = x1^2 - x_{k+1}^2 + 2 alpha_k`` as simplified expressions."""
        out = []
        for k, alpha in enumerate(self.deformations, start=1):
            base = BinOp("-", Pow(Coord(1), 2), Pow(Coord(k + 1), 2))
            out.append(ex.simplify(BinOp("+", base, BinOp("*", Const(2.0), alpha))))
        return tuple(out)

    @cached_property
    def gradient_expressions(self) -> tuple[tuple[Node, ...], ...]:
        return tuple(
            tuple(ex.simplify(ex.differentiate(I, j)) for j in range(1, self.dimension + 1))
            for I in self.integrals
        )

    @cached_property
    def guards(self) -> tuple[str, ...]:
        return infer_guards(self.deformations)

    @cached_property
    def _integral_fn(self):
        return ex.compile_expressions(self.integrals, self.dimension, self.bindings)

    @cached_property
    def _gradient_fn(self):
        flat = [g for row in self.gradient_expressions for g in row]
        return ex.compile_expressions(flat, self.dimension, self.bindings)

    def invariants(self, x: Sequence[float]) -> np.ndarray:
        """Values of all deformed integrals at `x`."""
        return np.array(self._integral_fn(x))

    def gradients(self, x: Sequence[float]) -> np.ndarray:
        """The (n-1) x n gradient matrix at `x`."""
        n = self.dimension
        return np.array(self._gradient_fn(x)).reshape(n - 1, n)


@dataclass(frozen=True, eq=False)
class VectorField:
    """n components plus the parameter bindings they are evaluated with.

    `components` is None for numerically evaluated fields (large n); those
    carry an `evaluator` instead.
    """

    dimension: int
    components: tuple[Node, ...] | None
    bindings: Mapping[str, float] = dc_field(default_factory=dict)
    provenance: str = "synthesized"
    guards: tuple[str, ...] = ()
    evaluator: Callable[[Sequence[float]], Sequence[float]] | None = None

    def __post_init__(self):
        if self.components is not None:
            object.__setattr__(self, "components", tuple(self.components))
            if len(self.components) != self.dimension:
                raise ValueError("number of components must equal the dimension")
        elif self.evaluator is None:
            raise ValueError("a field needs components or an evaluator")
        object.__setattr__(self, "bindings", {k: float(v) for k, v in self.bindings.items()})
        object.__setattr__(self, "guards", tuple(self.guards))

    @property
    def symbolic(self) -> bool:
        return self.components is not None

    @cached_property
    def _fn(self):
        if self.components is None:
            return self.evaluator
        return ex.compile_expressions(self.components, self.dimension, self.bindings)

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return np.array(self._fn(x), dtype=float)

    def rhs(self, t: float, x: Sequence[float]) -> np.ndarray:
        return self(x)

    @cached_property
    def jacobian_expressions(self) -> tuple[tuple[Node, ...], ...]:
        if self.components is None:
            raise TypeError("numeric field has no symbolic Jacobian")
        return tuple(
            tuple(ex.simplify(ex.differentiate(c, j)) for j in range(1, self.dimension + 1))
            for c in self.components
        )

    @cached_property
    def _jac_fn(self):
        flat = [d for row in self.jacobian_expressions for d in row]
        return ex.compile_expressions(flat, self.dimension, self.bindings)

    def jacobian(self, x: Sequence[float], h: float = 1e-6) -> np.ndarray:
        """Symbolic Jacobian if available, central differences otherwise."""
        n = self.dimension
        if self.components is not None:
            return np.array(self._jac_fn(x)).reshape(n, n)
        x = np.asarray(x, dtype=float)
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            J[:, j] = (self(x + e) - self(x - e)) / (2 * h)
        return J

    @cached_property
    def divergence_terms(self) -> tuple[Node, ...]:
        """``d V_i / d x_i`` for each i (unsimplified)."""
        if self.components is None:
            raise TypeError("numeric field has no symbolic divergence")
        return tuple(ex.differentiate(c, i) for i, c in enumerate(self.components, start=1))

    @cached_property
    def divergence_expression(self) -> Node:
        """Symbolic sum of the `divergence_terms`."""
        terms = self.divergence_terms
        total = terms[0]
        for t in terms[1:]:
            total = BinOp("+", total, t)
        return total

    @cached_property
    def _div_fn(self):
        return ex.compile_expressions(self.divergence_terms + (self.divergence_expression,),
                                      self.dimension, self.bindings)

    def divergence(self, x: Sequence[float]) -> float:
        return self._div_fn(x)[-1]

    def divergence_with_scale(self, x: Sequence[float]) -> tuple[float, float]:
        """Divergence and the sum of the magnitudes of its terms."""
        out = self._div_fn(x)
        return out[-1], float(sum(abs(t) for t in out[:-1]))

    def with_bindings(self, **values: float) -> "VectorField":
        return VectorField(self.dimension, self.components, {**self.bindings, **values},
                           self.provenance, self.guards, self.evaluator)

    def text(self) -> list[str]:
        if self.components is None:
            raise TypeError("numeric field has no text form")
        return [f"dx{i}/dt = {ex.to_text(c)}" for i, c in enumerate(self.components, start=1)]


# ---------------------------------------------------------------------------
# synthesis


def _sum(terms: Sequence[tuple[int, Node]]) -> Node:
    """Left-to-right signed sum of ``(sign, term)`` pairs."""
    total: Node | None = None
    for sign, term in terms:
        if total is None:
            total = term if sign > 0 else Neg(term)
        else:
            total = BinOp("+" if sign > 0 else "-", total, term)
    return total if total is not None else ex.ZERO


def build_deformed_3d(spec: DeformationSpec) -> VectorField:
    """Closed-form three-dimensional deformed field for integrals
    ``x1^2 - x2^2 + 2 alpha`` and ``x1^2 - x3^2 + 2 beta``."""
    if spec.dimension != 3:
        raise ValueError("build_deformed_3d requires dimension 3")
    alpha, beta = spec.deformations
    a = {i: ex.simplify(ex.differentiate(alpha, i)) for i in (1, 2, 3)}
    b = {i: ex.simplify(ex.differentiate(beta, i)) for i in (1, 2, 3)}
    x1, x2, x3 = Coord(1), Coord(2), Coord(3)

    v1 = _sum([(1, x2 * x3), (1, a[2] * b[3]), (-1, a[3] * b[2]),
               (-1, x3 * a[2]), (-1, x2 * b[3])])
    v2 = _sum([(1, x1 * x3), (1, a[3] * b[1]), (-1, a[1] * b[3]),
               (1, x1 * (a[3] - b[3])), (1, x3 * a[1])])
    v3 = _sum([(1, x1 * x2), (1, a[1] * b[2]), (-1, a[2] * b[1]),
               (-1, x1 * (a[2] - b[2])), (1, x2 * b[1])])
    comps = tuple(ex.simplify(v) for v in (v1, v2, v3))
    return VectorField(3, comps, spec.bindings, "synthesized", spec.guards)


def _perm_sign(seq: Sequence[int]) -> int:
    sign = 1
    seq = list(seq)
    for i in range(len(seq)):
        while seq[i] != i:
            j = seq[i]
            seq[i], seq[j] = seq[j], seq[i]
            sign = -sign
    return sign


def normalization_constant(n: int) -> float:
    """``(-1)^(n-1) / 2^(n-1)``; makes zero deformation give the product field."""
    return (-1) ** (n - 1) / 2 ** (n - 1)


def build_deformed_nd(spec: DeformationSpec,
                      symbolic_max_dimension: int = SYMBOLIC_MAX_DIMENSION) -> VectorField:
    """Generalized cross product of the n-1 integral gradients.

    ``G_i = eps_{i j1 .. j(n-1)} d_{j1} I_1 ... d_{j(n-1)} I_(n-1)`` with
    ``eps_{12..n} = +1``, scaled by `normalization_constant`.  Up to
    `symbolic_max_dimension` the cofactors are expanded symbolically
    (Leibniz sum, zero entries pruned); beyond it each cofactor is a
    numerical determinant of the evaluated gradient matrix.
    """
    n = spec.dimension
    c = normalization_constant(n)
    if n > symbolic_max_dimension:
        signs = np.array([(-1.0) ** i for i in range(n)])
        keep = [np.array([j for j in range(n) if j != i]) for i in range(n)]

        def evaluator(x):
            M = spec.gradients(x)
            return c * signs * np.array([np.linalg.det(M[:, k]) for k in keep])

        return VectorField(n, None, spec.bindings, "synthesized", spec.guards, evaluator)

    grad = spec.gradient_expressions
    comps = []
    for i in range(n):
        cols = [j for j in range(n) if j != i]
        terms = []
        for perm in itertools.permutations(cols):
            factors = [grad[row][col] for row, col in enumerate(perm)]
            if any(isinstance(f, Const) and f.value == 0.0 for f in factors):
                continue
            prod = factors[0]
            for f in factors[1:]:
                prod = BinOp("*", prod, f)
            terms.append((_perm_sign((i,) + perm), prod))
        comps.append(ex.simplify(BinOp("*", Const(c), _sum(terms))))
    return VectorField(n, tuple(comps), spec.bindings, "synthesized", spec.guards)


def synthesize(spec: DeformationSpec) -> VectorField:
    """Explicit 3D formula for n = 3, generalized cross product otherwise."""
    if spec.dimension == 3:
        return build_deformed_3d(spec)
    return build_deformed_nd(spec)


# ---------------------------------------------------------------------------
# built-in systems

BUILTINS = ("euler3", "euler_nd", "cube_root_deform", "quartic_deform")

_CUBE_ROOT_3D = (
    "x2*x3 - g*(x2^3 + x3^3)/(x2*x3)^2 + g^2/(x2*x3)^2",
    "x1*x3 - g*(x1^3 + x3^3)/(x1*x3)^2 + g^2/(x1*x3)^2",
    "x1*x2 - g*(x1^3 + x2^3)/(x1*x2)^2 + g^2/(x1*x2)^2",
)

_QUARTIC_3D = (
    "x2*x3 + g*(x1*(x2 + x3) - 2*x2*x3)/(2*(x1 - x2)*(x1 - x3)*(x2 - x3)^2)"
    " + g*(x2^2 + x3^2 - x1*(x2 + x3))/((x1 - x2)^2*(x1 - x3)^2)"
    " - 3*g^2/(2*(x1 - x2)^2*(x1 - x3)^2*(x2 - x3)^2)",
    "x1*x3 + g*(x2*(x1 + x3) - 2*x1*x3)/(2*(x2 - x1)*(x2 - x3)*(x1 - x3)^2)"
    " + g*(x1^2 + x3^2 - x2*(x1 + x3))/((x1 - x2)^2*(x2 - x3)^2)"
    " - 3*g^2/(2*(x1 - x2)^2*(x1 - x3)^2*(x2 - x3)^2)",
    "x1*x2 + g*(x3*(x1 + x2) - 2*x1*x2)/(2*(x3 - x2)*(x3 - x1)*(x1 - x2)^2)"
    " + g*(x1^2 + x2^2 - x3*(x1 + x2))/((x2 - x3)^2*(x1 - x3)^2)"
    " - 3*g^2/(2*(x1 - x2)^2*(x1 - x3)^2*(x2 - x3)^2)",
)


def closed_form_field(sources: Sequence[str], bindings: Mapping[str, float] | None = None,
                      provenance: str = "closed-form") -> VectorField:
    """Hand-written field from one expression text per component."""
    bindings = dict(bindings or {})
    n = len(sources)
    comps = tuple(ex.parse(s, n, bindings) for s in sources)
    return VectorField(n, comps, bindings, provenance, infer_guards(comps))


def _product_sources(n: int) -> list[str]:
    return ["*".join(f"x{j}" for j in range(1, n + 1) if j != i) for i in range(1, n + 1)]


def builtin(name: str, dimension: int = 3, coupling: float = 1.0
            ) -> tuple[DeformationSpec, VectorField | None]:
    """Deformation spec of a named system and its hand-written closed form.

    The closed form is None where no hand-written field exists
    (cube_root_deform for n > 3).
    """
    n = dimension
    g = {"g": float(coupling)}
    if name == "euler3":
        if n != 3:
            raise ValueError("euler3 is three-dimensional; use euler_nd")
        spec = DeformationSpec(3, (ex.ZERO, ex.ZERO), {}, name)
        return spec, closed_form_field(_product_sources(3))
    if name == "euler_nd":
        if n < 3:
            raise ValueError("euler_nd needs dimension >= 3")
        spec = DeformationSpec(n, (ex.ZERO,) * (n - 1), {}, name)
        return spec, closed_form_field(_product_sources(n))
    if name == "cube_root_deform":
        if n < 3:
            raise ValueError("cube_root_deform needs dimension >= 3")
        sources = [f"g/x1 - g/x{k + 1}" for k in range(1, n)]
        spec = DeformationSpec.from_text(n, sources, g, name)
        return spec, (closed_form_field(_CUBE_ROOT_3D, g) if n == 3 else None)
    if name == "quartic_deform":
        if n != 3:
            raise ValueError("quartic_deform is only defined for dimension 3")
        sources = [
            "(g/2)*(1/((x1 - x2)*(x1 - x3)) - 1/((x2 - x1)*(x2 - x3)))",
            "(g/2)*(1/((x1 - x2)*(x1 - x3)) - 1/((x3 - x1)*(x3 - x2)))",
        ]
        spec = DeformationSpec.from_text(3, sources, g, name)
        return spec, closed_form_field(_QUARTIC_3D, g)
    raise ValueError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")


# ---------------------------------------------------------------------------
# scaling to the normalized top


class NoRealScalingError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingCoefficients:
    a1: float
    a2: float
    a3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])


def normalize_rigid_body(k1: float, k2: float, k3: float) -> ScalingCoefficients:
    """Scaling ``x_i -> a_i x_i`` mapping ``x_i' = k_i x_j x_l`` to the
    normalized top ``x_i' = x_j x_l``.

    ``a_i = 1/sqrt(k_j k_l)``; when all k_i are negative every a_i is
    negated, which keeps the products and fixes the overall sign.
    Raises `NoRealScalingError` if some ``k_j k_l <= 0``.
    """
    k = (float(k1), float(k2), float(k3))
    prods = (k[1] * k[2], k[0] * k[2], k[0] * k[1])
    for i, p in enumerate(prods):
        if not p > 0:
            j, l = [m + 1 for m in range(3) if m != i]
            raise NoRealScalingError(
                f"k{j}*k{l} = {p:g} is not positive; no real scaling exists")
    sign = -1.0 if k[0] < 0 else 1.0
    return ScalingCoefficients(*(sign / math.sqrt(p) for p in prods))


def rigid_body_field(k1: float, k2: float, k3: float) -> VectorField:
    """The general quadratic system ``x_i' = k_i x_j x_l``."""
    return closed_form_field([f"{k1!r}*x2*x3", f"{k2!r}*x1*x3", f"{k3!r}*x1*x2"])


# ---------------------------------------------------------------------------
# equilibria


def equilibria_scan(v: VectorField, box: Sequence[tuple[float, float]], grid: int | Sequence[int] = 9,
                    tol: float = 1e-10, guard_radius: float = 0.0, max_seeds: int = 200,
                    max_iter: int = 60) -> list[np.ndarray]:
    """Approximate zeros of `v` inside `box`.

    Grid points are ranked by ``|V|`` and the best ones refined with a
    damped Gauss-Newton iteration (least-squares steps, so non-isolated
    zeros are fine).  Only points with ``|V| <= tol`` are returned.
    """
    n = v.dimension
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != n or any(not hi > lo for lo, hi in box):
        raise ValueError("box must give a non-degenerate (lo, hi) per coordinate")
    sizes = [grid] * n if isinstance(grid, int) else list(grid)
    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(box, sizes)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)

    def norm_at(p):
        if guard_radius > 0 and singular_distance(v.guards, p) < guard_radius:
            return math.inf
        try:
            r = float(np.linalg.norm(v(p)))
        except ArithmeticError:
            return math.inf
        return r if math.isfinite(r) else math.inf

    norms = np.array([norm_at(p) for p in pts])
    finite = np.isfinite(norms)
    order = np.argsort(norms, kind="stable")
    seeds = [i for i in order[:max_seeds] if finite[i]]
    seeds += [i for i in np.flatnonzero(norms <= tol) if i not in set(seeds)]

    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    slack = 1e-9 * (hi - lo)
    found: list[np.ndarray] = []
    for i in seeds:
        p = pts[i].copy()
        r = norms[i]
        for _ in range(max_iter):
            if r <= tol * 1e-3:
                break
            try:
                step = np.linalg.lstsq(v.jacobian(p), -v(p), rcond=None)[0]
            except (ArithmeticError, np.linalg.LinAlgError):
                break
            lam = 1.0
            while lam > 1e-6:
                q = p + lam * step
                rq = norm_at(q)
                if rq < r:
                    p, r = q, rq
                    break
                lam *= 0.5
            else:
                break
        if r <= tol and np.all(p >= lo - slack) and np.all(p <= hi + slack):
            if not any(np.linalg.norm(p - z) < 1e-6 for z in found):
                found.append(p)
    return found
