"""Discrete H1_0 spaces on uniform interval and rectangle meshes.

The stiffness operator K realizes the gradient inner product
``<u, v> = integral grad(u) . grad(v)`` for piecewise-linear nodal fields
with homogeneous Dirichlet boundary values, so ``u^T K u`` is the squared
energy norm.  Weighted L^p integrals use lumped (nodal) quadrature, which
keeps first variations of the energy nodewise and exactly consistent with
the discrete functional.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor mesh of interior nodes with stiffness and quadrature.

    Attributes
    ----------
    bounds : per-axis ``(lo, hi)`` of the domain.
    n : interior nodes per axis.
    axes : per-axis interior node coordinates.
    h : per-axis mesh size, ``(hi - lo) / (n + 1)``.
    stiffness : sparse SPD operator K with ``u^T K u ~ int |grad u|^2``.
    quad_weights : lumped nodal quadrature weights (h in 1D, hx*hy in 2D).
    component_masks : interior-node index sets of the weight components,
        attached by :func:`nehari.problem.build_weight`; empty until then.
    component_families : family label per mask ("tilde", "hat", "bar").
    """

    bounds: tuple[tuple[float, float], ...]
    n: int
    axes: tuple[np.ndarray, ...]
    h: tuple[float, ...]
    stiffness: sp.csr_matrix
    quad_weights: np.ndarray
    component_masks: tuple[np.ndarray, ...] = ()
    component_families: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def n_nodes(self) -> int:
        return self.n ** self.dim

    def key(self) -> tuple:
        """Structural identity used for grid-mismatch checks."""
        return (self.dim, self.n, self.bounds)

    def coords(self) -> np.ndarray:
        """Interior node coordinates, shape (n_nodes, dim), C-ordered."""
        if self.dim == 1:
            return self.axes[0][:, None]
        x, y = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([x.ravel(), y.ravel()])

    def field(self, values: np.ndarray) -> "Field":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise ValueError(
                f"field length {values.shape} does not match grid with {self.n_nodes} nodes"
            )
        return Field(values, self)

    def zero_field(self) -> "Field":
        return Field(np.zeros(self.n_nodes), self)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficient array on the interior nodes of one grid.

    Boundary values are implicitly zero.  Arithmetic is elementwise and
    requires structurally identical grids.
    """

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("field/grid size mismatch")

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.values + other.values, self.grid)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.values - other.values, self.grid)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.values * float(scalar), self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(-self.values, self.grid)

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.grid)


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a is not b and a.key() != b.key():
        raise ValueError("grid mismatch: fields live on different grids")


def _laplacian_1d(n: int) -> sp.csr_matrix:
    """Unscaled Dirichlet second-difference matrix tridiag(-1, 2, -1)."""
    main = 2.0 * np.ones(n)
    off = -1.0 * np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def build_grid(geometry: tuple[tuple[float, float], ...], n: int) -> Grid:
    """Assemble the uniform grid, stiffness operator and quadrature weights.

    Parameters
    ----------
    geometry : per-axis ``(lo, hi)`` bounds; one entry for an interval,
        two for a rectangle.
    n : number of interior nodes per axis, at least 3.

    In 1D the stiffness is tridiag(-1, 2, -1)/h.  In 2D with per-axis
    sizes hx, hy it is ``(hy/hx) T(x) + (hx/hy) T(y)`` in Kronecker form,
    which reduces to the dimensionless 5-point stencil (-1,-1,4,-1,-1) on
    square cells; both scalings make ``u^T K u`` the squared gradient
    seminorm of the piecewise-(bi)linear interpolant up to quadrature.
    """
    bounds = tuple((float(lo), float(hi)) for lo, hi in geometry)
    dim = len(bounds)
    if dim not in (1, 2):
        raise ValueError(f"only 1D and 2D grids are supported, got dim={dim}")
    if n < 3:
        raise ValueError(f"need at least 3 interior nodes per axis, got n={n}")
    for lo, hi in bounds:
        if not hi > lo:
            raise ValueError(f"empty axis ({lo}, {hi})")

    h = tuple((hi - lo) / (n + 1) for lo, hi in bounds)
    axes = tuple(
        lo + (hi - lo) * np.arange(1, n + 1) / (n + 1) for lo, hi in bounds
    )

    t = _laplacian_1d(n)
    if dim == 1:
        stiffness = (t / h[0]).tocsr()
        quad = np.full(n, h[0])
    else:
        hx, hy = h
        eye = sp.identity(n, format="csr")
        stiffness = ((hy / hx) * sp.kron(t, eye) + (hx / hy) * sp.kron(eye, t)).tocsr()
        quad = np.full(n * n, hx * hy)

    stiffness.sum_duplicates()
    return Grid(bounds=bounds, n=n, axes=axes, h=h, stiffness=stiffness, quad_weights=quad)


def attach_masks(
    grid: Grid,
    masks: tuple[np.ndarray, ...],
    families: tuple[str, ...],
) -> Grid:
    """Return a copy of the grid carrying component node masks."""
    if len(masks) != len(families):
        raise ValueError("one family label per mask required")
    return replace(grid, component_masks=masks, component_families=families)


def inner_product(u: Field, v: Field) -> float:
    """Energy inner product ``u^T K v``."""
    _check_same_grid(u.grid, v.grid)
    return float(u.values @ (u.grid.stiffness @ v.values))


def norm(u: Field) -> float:
    """Energy norm ``sqrt(<u, u>)``."""
    return float(np.sqrt(max(inner_product(u, u), 0.0)))


def weighted_p_integral(grid: Grid, weight: np.ndarray, u: Field, p: float) -> float:
    """Lumped quadrature of ``integral weight * |u|^p``.

    ``weight`` is a nodal array on the same grid; ``p`` must be positive.
    """
    _check_same_grid(grid, u.grid)
    if p <= 0:
        raise ValueError(f"exponent p must be positive, got {p}")
    weight = np.asarray(weight, dtype=float)
    if weight.shape != (grid.n_nodes,):
        raise ValueError("weight array does not match grid")
    return float(np.sum(grid.quad_weights * weight * np.abs(u.values) ** p))


# Masked submatrices are reused heavily by the projections; cache them per
# grid instance (weakly, so grids can be garbage collected).
_submatrix_cache: "weakref.WeakKeyDictionary[Grid, dict]" = weakref.WeakKeyDictionary()


def _masked_matrix(grid: Grid, mask: np.ndarray) -> sp.csr_matrix:
    cache = _submatrix_cache.setdefault(grid, {})
    key = mask.tobytes()
    sub = cache.get(key)
    if sub is None:
        sub = grid.stiffness[mask][:, mask].tocsr()
        cache[key] = sub
    return sub


def solve_spd(
    grid: Grid,
    mask: np.ndarray | None,
    rhs: Field,
    x0: np.ndarray | None = None,
) -> Field:
    """Solve ``(K w)|mask = rhs|mask`` with w supported on the mask.

    Conjugate gradients to relative residual 1e-12; ``mask=None`` means all
    interior nodes.  ``x0`` is an optional warm-start guess (full-length
    nodal array).  Raises :class:`SolverError` if CG exceeds 10x the number
    of unknowns without converging.
    """
    _check_same_grid(grid, rhs.grid)
    full = mask is None or len(mask) == grid.n_nodes
    if mask is not None and len(mask) == 0:
        return grid.zero_field()

    if full:
        mat = grid.stiffness
        b = rhs.values
    else:
        mat = _masked_matrix(grid, mask)
        b = rhs.values[mask]

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return grid.zero_field()

    guess = None
    if x0 is not None:
        guess = x0 if full else x0[mask]

    n_unknowns = mat.shape[0]
    sol, info = spla.cg(mat, b, x0=guess, rtol=1e-12, atol=0.0, maxiter=10 * n_unknowns)
    residual = float(np.linalg.norm(mat @ sol - b)) / b_norm
    if info != 0 or residual > 1e-12:
        # CG stagnated short of the target; polish with a direct solve so the
        # contract (relative residual <= 1e-12) still holds.
        try:
            sol = spla.splu(mat.tocsc()).solve(b)
            residual = float(np.linalg.norm(mat @ sol - b)) / b_norm
        except RuntimeError:
            pass
        if residual > 1e-12:
            raise SolverError(
                f"SPD solve did not converge: relative residual {residual:.3e} "
                f"after cap {10 * n_unknowns} iterations",
                residual=residual,
            )

    if full:
        return grid.field(sol)
    out = np.zeros(grid.n_nodes)
    out[mask] = sol
    return grid.field(out)


def _lp_ratio(grid: Grid, v: np.ndarray, p: float) -> float:
    """Ratio (sum q|v|^p)^(1/p) / ||v||_K for a nodal array."""
    energy = float(v @ (grid.stiffness @ v))
    if energy <= 0.0:
        return 0.0
    lp = float(np.sum(grid.quad_weights * np.abs(v) ** p)) ** (1.0 / p)
    return lp / np.sqrt(energy)


def sobolev_constant(
    grid: Grid,
    p: float,
    seed: int = 0,
    starts: int = 8,
    maxiter: int = 500,
) -> float:
    """Upper estimate c of the discrete embedding constant.

    Bounds ``(sum q |v|^p)^(1/p) <= c ||v||`` over nonzero nodal fields by
    running the normalized ascent ``v <- K^{-1}(q |v|^{p-2} v)`` (the
    ideal-step projected gradient ascent on the ratio) from ``starts``
    random starts and returning 1.05x the largest ratio visited.  If no
    start converges the 1D analytic bound is returned instead; it dominates
    every visited ratio up to lumping error, which the safety factor
    absorbs.
    """
    if p <= 0:
        raise ValueError(f"exponent p must be positive, got {p}")
    rng = np.random.default_rng(seed)
    best = 0.0
    converged = False
    for _ in range(starts):
        v = rng.standard_normal(grid.n_nodes)
        ratio = _lp_ratio(grid, v, p)
        best = max(best, ratio)
        for _ in range(maxiter):
            load = grid.quad_weights * np.abs(v) ** (p - 2) * v
            w = solve_spd(grid, None, grid.field(load), x0=v).values
            scale = float(np.sqrt(w @ (grid.stiffness @ w)))
            if scale == 0.0:
                break
            v = w / scale
            new_ratio = _lp_ratio(grid, v, p)
            best = max(best, new_ratio)
            if abs(new_ratio - ratio) <= 1e-11 * max(ratio, 1e-30):
                converged = True
                break
            ratio = new_ratio
    if not converged:
        if grid.dim == 1:
            (lo, hi), = grid.bounds
            length = hi - lo
            # |v|_inf <= (sqrt(L)/2)||v|| and (int |v|^p)^(1/p) <= |v|_inf L^(1/p)
            fallback = 0.5 * np.sqrt(length) * length ** (1.0 / p)
            return max(fallback, 1.05 * best)
        return 1.05 * best
    return 1.05 * best
