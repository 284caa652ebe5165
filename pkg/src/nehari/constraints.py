"""Membership constraints, rescaling, and surface/degree diagnostics.

The constraint set couples five conditions on the signed parts of a field:
nontriviality of the nodal sign pattern (i), vanishing derivative of the
energy along the three signed scaling directions (ii), an energy cap (iii),
a norm chain (iv), and smallness of the parts that vanish in the large-mu
limit (v).  Minimizing the energy subject to these produces the multibump
sign-changing solutions; the auxiliary surfaces and the degree certificate
verify the geometry that makes a constrained minimizer an actual critical
point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decompose import Decomposition, SignedParts, decompose, signed_parts
from .energy import EnergyContext, dir_derivative, energy
from .grid import Field, inner_product, norm, sobolev_constant, weighted_p_integral


class SignPatternLost(RuntimeError):
    """A signed scaling direction degenerated (nonpositive pairing)."""


def kappa(p: float, a_inf: float, c: float) -> float:
    """Mu-independent lower bound (2^(p-1) a_inf c^p)^(-1/(p-2)).

    Every member of the constraint set has its three signed-part norms
    bounded below by this value.
    """
    if p <= 2:
        raise ValueError(f"p must exceed 2, got {p}")
    if a_inf <= 0 or c <= 0:
        raise ValueError("a_inf and c must be positive")
    return (2.0 ** (p - 1) * a_inf * c**p) ** (-1.0 / (p - 2))


@dataclass(frozen=True)
class NehariParams:
    """Fixed constants of the constraint set for one problem.

    rho0 defaults to half of (a_inf c^p)^(-1/(p-2)), which makes the
    closed-form lower bound of :func:`c_rho_lower_bound` rigorous; R and
    the energy cap come from the reference field.
    """

    rho0: float
    R: float
    energy_cap: float
    kappa: float
    c: float
    p: float
    a_inf: float

    def __post_init__(self):
        limit = 0.5 * (self.a_inf * self.c**self.p) ** (-1.0 / (self.p - 2))
        if self.rho0 > limit * (1 + 1e-12):
            raise ValueError(f"rho0={self.rho0} exceeds the admissible bound {limit}")


def make_params(
    ctx: EnergyContext,
    v_ref: Field,
    c: float | None = None,
    seed: int = 0,
) -> NehariParams:
    """Derive the constraint constants from a reference member v_ref.

    The energy cap is ``E(v_ref) + 1``; since v_ref is supported inside the
    component regions it is independent of mu.
    """
    if c is None:
        c = sobolev_constant(ctx.grid, ctx.p, seed=seed)
    a_inf = ctx.weight.a_inf
    v_norm = norm(v_ref)
    return NehariParams(
        rho0=0.5 * (a_inf * c**ctx.p) ** (-1.0 / (ctx.p - 2)),
        R=2.0 * v_norm,
        energy_cap=energy(ctx, v_ref) + 1.0,
        kappa=kappa(ctx.p, a_inf, c),
        c=c,
        p=ctx.p,
        a_inf=a_inf,
    )


@dataclass(frozen=True)
class ConstraintReport:
    """Residuals and verdicts of the five membership constraints."""

    tilde_plus_norm: float
    tilde_minus_norm: float
    hat_plus_norm: float
    nontrivial: tuple[bool, bool, bool]
    nehari_residuals: tuple[float, float, float]
    residuals_ok: bool
    energy: float
    energy_ok: bool
    remainder_norm: float
    min_three_norms: float
    tilde_hat_plus_norm: float
    radius: float
    norm_chain_ok: bool
    hat_minus_norm: float
    bar_low_norm: float
    rho0: float
    smallness_ok: bool

    @property
    def passed(self) -> bool:
        return (
            all(self.nontrivial)
            and self.residuals_ok
            and self.energy_ok
            and self.norm_chain_ok
            and self.smallness_ok
        )


def signed_pairings(ctx: EnergyContext, u: Field, parts: SignedParts) -> np.ndarray:
    """The three weighted pairings int a_plus |u|^(p-2) u d for the signed
    directions d = tilde_plus, -tilde_minus, hat_plus (all positive on the
    constraint set)."""
    base = (
        ctx.grid.quad_weights
        * ctx.a_plus
        * np.abs(u.values) ** (ctx.p - 2)
        * u.values
    )
    return np.array(
        [
            float(base @ parts.tilde_plus.values),
            -float(base @ parts.tilde_minus.values),
            float(base @ parts.hat_plus.values),
        ]
    )


def nehari_residuals(ctx: EnergyContext, u: Field, parts: SignedParts) -> tuple[float, float, float]:
    """First variations of the energy along tilde_plus, tilde_minus, hat_plus."""
    return (
        dir_derivative(ctx, u, parts.tilde_plus),
        dir_derivative(ctx, u, parts.tilde_minus),
        dir_derivative(ctx, u, parts.hat_plus),
    )


def check_membership(
    ctx: EnergyContext,
    params: NehariParams,
    u: Field,
    tol_residual: float = 1e-8,
    tol_nontrivial: float = 1e-6,
    dec: Decomposition | None = None,
) -> ConstraintReport:
    """Evaluate all five membership constraints; failures land in the report."""
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)

    ntp = norm(parts.tilde_plus)
    ntm = norm(parts.tilde_minus)
    nhp = norm(parts.hat_plus)
    residuals = nehari_residuals(ctx, u, parts)
    scale = 1.0 + norm(u)

    min_three = min(ntp, ntm, nhp)
    n_rem = norm(parts.remainder)
    n_th = norm(dec.tilde + parts.hat_plus)
    e = energy(ctx, u)

    return ConstraintReport(
        tilde_plus_norm=ntp,
        tilde_minus_norm=ntm,
        hat_plus_norm=nhp,
        nontrivial=(ntp >= tol_nontrivial, ntm >= tol_nontrivial, nhp >= tol_nontrivial),
        nehari_residuals=residuals,
        residuals_ok=all(abs(r) <= tol_residual * scale for r in residuals),
        energy=e,
        energy_ok=e <= params.energy_cap,
        remainder_norm=n_rem,
        min_three_norms=min_three,
        tilde_hat_plus_norm=n_th,
        radius=params.R,
        norm_chain_ok=(n_rem <= min_three) and (min_three < n_th) and (n_th <= params.R),
        hat_minus_norm=norm(parts.hat_minus),
        bar_low_norm=norm(parts.bar_low),
        rho0=params.rho0,
        smallness_ok=max(norm(parts.hat_minus), norm(parts.bar_low)) <= params.rho0,
    )


def rescale_to_nehari(
    ctx: EnergyContext,
    u: Field,
    dec: Decomposition | None = None,
) -> tuple[Field, tuple[float, float, float]]:
    """Scale the three signed parts so the derivative conditions (ii) hold.

    The scale factors are ``(pairing of u with the direction / weighted
    p-pairing)^(1/(p-2))`` per direction; the triple is (1,1,1) exactly when
    the three residuals vanish, and the map is a contraction toward the
    constraint in the neighborhood of members.  Raises
    :class:`SignPatternLost` when any pairing is nonpositive, meaning the
    iterate left the sign-pattern basin.
    """
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)

    numerators = np.array(
        [
            inner_product(u, parts.tilde_plus),
            -inner_product(u, parts.tilde_minus),
            inner_product(u, parts.hat_plus),
        ]
    )
    denominators = signed_pairings(ctx, u, parts)
    if np.any(numerators <= 0.0) or np.any(denominators <= 0.0):
        raise SignPatternLost(
            f"sign-pattern lost: pairings num={numerators}, den={denominators}"
        )
    triple = (numerators / denominators) ** (1.0 / (ctx.p - 2))
    r, s, t = (float(v) for v in triple)

    w = (
        r * parts.tilde_plus
        - s * parts.tilde_minus
        + t * parts.hat_plus
        - parts.hat_minus
        + parts.bar_low
        + parts.remainder
    )
    return w, (r, s, t)


def sigma(parts: SignedParts, r: float, s: float, t: float) -> Field:
    """Three-parameter rescaling of the signed parts over the cube [0,2]^3."""
    for name, val in (("r", r), ("s", s), ("t", t)):
        if not 0.0 <= val <= 2.0:
            raise ValueError(f"parameter {name}={val} outside the cube [0, 2]^3")
    return (
        r * parts.tilde_plus
        - s * parts.tilde_minus
        + t * parts.hat_plus
        - parts.hat_minus
        + parts.bar_low
        + parts.remainder
    )


def cube_axis(m: int = 21, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """Log-uniform axis of m points on [lo, hi].

    Log spacing matches the multiplicative action of the parameters and,
    for the default symmetric range, contains the distinguished value 1
    exactly (a linearly spaced 21-point axis on [1/2, 2] does not).
    """
    axis = np.geomspace(lo, hi, m)
    if m % 2 == 1 and abs(lo * hi - 1.0) < 1e-12:
        axis[m // 2] = 1.0
    return axis


def cube_lattice(m: int = 21, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """Tensor lattice of cube_axis, shape (m^3, 3), C-ordered."""
    ax = cube_axis(m, lo, hi)
    r, s, t = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.column_stack([r.ravel(), s.ravel(), t.ravel()])


@dataclass(frozen=True, eq=False)
class SurfaceScan:
    """Energy values of the rescaling family over a parameter sample."""

    points: np.ndarray
    values: np.ndarray
    argmax: int

    @property
    def argmax_point(self) -> tuple[float, float, float]:
        return tuple(self.points[self.argmax])

    def value_at(self, point: tuple[float, float, float]) -> float:
        hit = np.flatnonzero(np.all(self.points == np.asarray(point), axis=1))
        if hit.size == 0:
            raise KeyError(f"{point} not in the sampled lattice")
        return float(self.values[hit[0]])

    def separation(self, theta: float = 0.5) -> float:
        """f(1,1,1) minus the best value at distance >= theta from (1,1,1)."""
        center = self.value_at((1.0, 1.0, 1.0))
        dist = np.linalg.norm(self.points - 1.0, axis=1)
        away = self.values[dist >= theta]
        if away.size == 0:
            raise ValueError(f"no sample at distance >= {theta} from (1,1,1)")
        return center - float(away.max())


def f_surface(
    ctx: EnergyContext,
    u: Field,
    points: np.ndarray | None = None,
    m: int = 21,
    dec: Decomposition | None = None,
) -> SurfaceScan:
    """Evaluate f = energy of the rescaled field over a parameter sample."""
    if points is None:
        points = cube_lattice(m)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if np.any(points < 0.0) or np.any(points > 2.0):
        raise ValueError("sample points must lie in [0, 2]^3")
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)

    values = np.empty(points.shape[0])
    for i, (r, s, t) in enumerate(points):
        values[i] = energy(ctx, sigma(parts, r, s, t))
    return SurfaceScan(points=points, values=values, argmax=int(np.argmax(values)))


def g_constant(ctx: EnergyContext, parts: SignedParts) -> float:
    """The parameter-independent block of the auxiliary surface."""
    p, mu = ctx.p, ctx.mu
    rem, hm, bl = parts.remainder, parts.hat_minus, parts.bar_low
    return (
        0.5 * inner_product(hm, hm)
        + 0.5 * inner_product(bl, bl)
        + 0.5 * inner_product(rem, rem)
        - weighted_p_integral(ctx.grid, ctx.a_plus, rem - hm, p) / p
        - weighted_p_integral(ctx.grid, ctx.a_plus, bl + rem, p) / p
        + mu * weighted_p_integral(ctx.grid, ctx.weight.a_minus, rem, p) / p
    )


def g_aux(parts: SignedParts, r: float, s: float, t: float, k_const: float, p: float) -> float:
    """Closed-form auxiliary surface approximating f for large mu.

    ``(r^2/2 - r^p/p)||tilde_plus||^2 + ... + k_const``; its gradient at
    (1,1,1) vanishes identically and its Hessian there is negative definite
    for p > 2.
    """
    def coeff(x: float) -> float:
        return x**2 / 2.0 - x**p / p

    return (
        coeff(r) * inner_product(parts.tilde_plus, parts.tilde_plus)
        + coeff(s) * inner_product(parts.tilde_minus, parts.tilde_minus)
        + coeff(t) * inner_product(parts.hat_plus, parts.hat_plus)
        + k_const
    )


@dataclass(frozen=True)
class MapValues:
    """The six ratio maps evaluated at one field."""

    phi_tilde_plus: float
    phi_tilde_minus: float
    phi_hat: float
    psi_tilde_plus: float
    psi_tilde_minus: float
    psi_hat: float

    @property
    def phi_triple(self) -> tuple[float, float, float]:
        return (self.phi_tilde_plus, self.phi_tilde_minus, self.phi_hat)

    @property
    def psi_triple(self) -> tuple[float, float, float]:
        return (self.psi_tilde_plus, self.psi_tilde_minus, self.psi_hat)


def psi_phi_maps(ctx: EnergyContext, u: Field, dec: Decomposition | None = None) -> MapValues:
    """Evaluate the six normalized pairing/power ratios at u.

    phi ratios pair the full nonlinearity with each signed direction and
    equal (1,1,1) exactly on the constraint set; psi ratios are the
    weighted p-powers of the directions themselves and scale with degree
    p-2 under the rescaling family.
    """
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)
    sq = np.array(
        [
            inner_product(parts.tilde_plus, parts.tilde_plus),
            inner_product(parts.tilde_minus, parts.tilde_minus),
            inner_product(parts.hat_plus, parts.hat_plus),
        ]
    )
    if np.any(sq <= 0.0):
        raise ValueError("maps undefined: a signed part vanishes identically")

    pairings = signed_pairings(ctx, u, parts)
    powers = np.array(
        [
            weighted_p_integral(ctx.grid, ctx.a_plus, parts.tilde_plus, ctx.p),
            weighted_p_integral(ctx.grid, ctx.a_plus, parts.tilde_minus, ctx.p),
            weighted_p_integral(ctx.grid, ctx.a_plus, parts.hat_plus, ctx.p),
        ]
    )
    phi = pairings / sq
    psi = powers / sq
    return MapValues(
        phi_tilde_plus=float(phi[0]),
        phi_tilde_minus=float(phi[1]),
        phi_hat=float(phi[2]),
        psi_tilde_plus=float(psi[0]),
        psi_tilde_minus=float(psi[1]),
        psi_hat=float(psi[2]),
    )


@dataclass(frozen=True)
class DegreeReport:
    """Testable skeleton of the winding-number argument on [1/2,2]^3."""

    psi_triple: tuple[float, float, float]
    psi_box: tuple[float, float]
    certificate: bool
    boundary_distance: float
    samples_per_edge: int


def _cube_boundary(m: int) -> np.ndarray:
    ax = cube_axis(m)
    pts = cube_lattice(m)
    on_face = (
        np.isin(pts[:, 0], (ax[0], ax[-1]))
        | np.isin(pts[:, 1], (ax[0], ax[-1]))
        | np.isin(pts[:, 2], (ax[0], ax[-1]))
    )
    return pts[on_face]


def degree_check(
    ctx: EnergyContext,
    u: Field,
    samples_per_edge: int = 5,
    dec: Decomposition | None = None,
) -> DegreeReport:
    """Certify the degree identity through its two exact ingredients.

    (i) the psi-map of the rescaling family, evaluated honestly on a sample
    of the cube boundary, keeps a positive distance from (1,1,1); (ii) the
    exact product form (r,s,t) -> (r^{p-2} psi1, s^{p-2} psi2, t^{p-2} psi3)
    is a coordinatewise strictly increasing homeomorphism of the cube onto a
    box, which contains (1,1,1) iff every psi value lies within
    [2^(2-p), 2^(p-2)]; that containment is the winding certificate.
    """
    if samples_per_edge < 5:
        raise ValueError("boundary sample too coarse: need >= 5 points per edge")
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)
    maps = psi_phi_maps(ctx, u, dec=dec)

    lo, hi = 2.0 ** (2 - ctx.p), 2.0 ** (ctx.p - 2)
    certificate = all(lo <= v <= hi for v in maps.psi_triple)

    best = np.inf
    for r, s, t in _cube_boundary(samples_per_edge):
        w = sigma(parts, r, s, t)
        psi = np.array(psi_phi_maps(ctx, w).psi_triple)
        best = min(best, float(np.linalg.norm(psi - 1.0)))

    return DegreeReport(
        psi_triple=maps.psi_triple,
        psi_box=(lo, hi),
        certificate=certificate,
        boundary_distance=best,
        samples_per_edge=samples_per_edge,
    )


def c_rho_lower_bound(params: NehariParams, rho: float) -> float:
    """Closed-form positive lower bound for the small-sphere energy level.

    ``h(rho) = rho^2/2 - (a_inf c^p / p) rho^p`` bounds the energy of any
    field in the hat+bar subspace whose largest part norm lies in
    [rho, rho0]; h is increasing there because rho0 is capped at half the
    critical scale.
    """
    if not 0.0 < rho <= params.rho0:
        raise ValueError(f"rho must lie in (0, rho0={params.rho0}], got {rho}")
    return rho**2 / 2.0 - (params.a_inf * params.c**params.p / params.p) * rho**params.p
