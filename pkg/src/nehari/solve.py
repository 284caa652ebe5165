"""Seed construction, constrained gradient-flow minimization, mu sweeps.

The minimizer follows the explicit Euler discretization of the negative
gradient flow in the energy metric, reprojecting onto the constraint set
after every step by rescaling the three signed parts.  Backtracking line
search replaces the cut-off that localizes the flow in the continuous
argument: a step is accepted only if the post-rescale energy does not
increase (within rounding slack), which confines iterates to the basin.

Decompositions are propagated through the linear flow steps analytically
(the projections are linear and the rescale acts on known parts), so one
iteration costs a single full stiffness solve plus one decomposition of the
gradient; the running decomposition is refreshed periodically to stop
round-off drift.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import (
    ConstraintReport,
    NehariParams,
    SignPatternLost,
    check_membership,
    make_params,
    nehari_residuals,
)
from .decompose import Decomposition, SignedParts, decompose, signed_parts, split_signs
from .energy import EnergyContext, energy, nodal_residual, pde_residual, riesz_gradient
from .grid import Field, Grid, inner_product, norm, solve_spd, weighted_p_integral
from .problem import ProblemSpec, SpecError

log = logging.getLogger("nehari")


@dataclass(frozen=True)
class SolveOptions:
    """Step control and tolerances of the constrained descent."""

    dtau0: float = 0.1
    shrink: float = 0.5
    grow: float = 1.3
    dtau_max: float = 5.0
    max_iters: int = 50_000
    tol_grad: float | None = None  # default 1e-8 * (1 + ||u0||)
    tol_residual: float | None = None  # default: same as tol_grad
    max_backtracks: int = 45
    refresh_every: int = 100
    seed_amp: float = 1.0

    def __post_init__(self):
        if self.dtau0 <= 0:
            raise ValueError("dtau0 must be positive")
        if not 0 < self.shrink < 1 or self.grow < 1:
            raise ValueError("need 0 < shrink < 1 <= grow")
        if self.tol_grad is not None and self.tol_grad <= 0:
            raise ValueError("tol_grad must be positive")
        if self.tol_residual is not None and self.tol_residual <= 0:
            raise ValueError("tol_residual must be positive")


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Converged (or best) iterate with its traces and final report."""

    u: Field
    energy_trace: np.ndarray
    pde_residual: float
    report: ConstraintReport
    iterations: int
    triple_history: np.ndarray
    converged: bool
    message: str = ""


@dataclass(frozen=True)
class Diagnostics:
    """Concentration quantities tracked along minimization and sweeps."""

    hat_minus_norm: float
    bar_low_norm: float
    remainder_norm: float
    mu_remainder_term: float  # (mu/p) int a_minus |remainder|^p
    energy: float
    tilde_hat_plus_norm: float
    min_three_norms: float
    negative_region_integral: float  # int a_minus |u|^p


@dataclass(frozen=True, eq=False)
class ContinuationReport:
    """Per-mu solves, diagnostics, and trend verdicts of a sweep."""

    mus: tuple[float, ...]
    results: tuple[SolveResult, ...]
    diagnostics: tuple[Diagnostics, ...]
    verdicts: dict
    kappa: float
    completed: bool


# ---------------------------------------------------------------------------
# Seed construction.
# ---------------------------------------------------------------------------


def _axis_bump(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return 4.0 * (x - lo) * (hi - x) / (hi - lo) ** 2


def _piece(grid: Grid, region, x_range) -> np.ndarray:
    """Parabolic bump on x_range (sub-interval of the region's first axis)
    times full-width parabolas along the remaining axes; nodal array."""
    coords = grid.coords()
    lo, hi = x_range
    vals = np.ones(grid.n_nodes)
    x = coords[:, 0]
    inside = (x > lo) & (x < hi)
    vals *= np.where(inside, _axis_bump(x, lo, hi), 0.0)
    for axis in range(1, grid.dim):
        y = coords[:, axis]
        ylo, yhi = region[axis]
        inside = (y > ylo) & (y < yhi)
        vals *= np.where(inside, _axis_bump(y, ylo, yhi), 0.0)
    return vals


def _nehari_scale(ctx: EnergyContext, w: Field) -> float:
    """Closed-form factor putting a one-signed piece on the constraint."""
    denom = weighted_p_integral(ctx.grid, ctx.a_plus, w, ctx.p)
    if denom <= 0:
        raise SpecError("seed piece has no overlap with the positive weight")
    return float((inner_product(w, w) / denom) ** (1.0 / (ctx.p - 2)))


def seed_initial(ctx: EnergyContext, spec: ProblemSpec, amp: float = 1.0) -> Field:
    """Sign-patterned seed satisfying the derivative constraints exactly.

    Each tilde component gets a positive and a negative parabolic bump on
    its two halves, split at the node line nearest the component midpoint
    (the split line itself is zero, so the signed pieces share no stencil
    edge); each hat component gets one positive bump.  Every signed piece
    is then scaled by its own closed-form factor, which makes the three
    derivative conditions hold exactly with zero remainder, independently
    of mu, and absorbs the seed amplitude.
    """
    grid = ctx.grid
    total = np.zeros(grid.n_nodes)
    have_tilde = have_hat = False

    for comp in spec.components:
        if comp.family == "bar":
            continue
        (lo, hi) = comp.region[0]
        if comp.family == "tilde":
            have_tilde = True
            mid = 0.5 * (lo + hi)
            x_nodes = grid.axes[0]
            inside = np.flatnonzero((x_nodes > lo) & (x_nodes < hi))
            split = inside[np.argmin(np.abs(x_nodes[inside] - mid))]
            x_split = float(x_nodes[split])
            halves = [(lo, x_split, +1.0), (x_split, hi, -1.0)]
            for a, b, sign in halves:
                if not np.any((x_nodes > a) & (x_nodes < b)):
                    raise SpecError(
                        f"component ({lo}, {hi}) under-resolved: no node strictly "
                        f"inside the half ({a}, {b})"
                    )
                piece = grid.field(sign * amp * _piece(grid, comp.region, (a, b)))
                total += _nehari_scale(ctx, piece) * piece.values
        else:
            have_hat = True
            piece = grid.field(amp * _piece(grid, comp.region, (lo, hi)))
            total += _nehari_scale(ctx, piece) * piece.values

    if not (have_tilde and have_hat):
        raise SpecError("seed needs at least one tilde and one hat component")
    return grid.field(total)


def reference_field(ctx: EnergyContext, spec: ProblemSpec) -> Field:
    """The fixed member used to anchor the energy cap and radius."""
    return seed_initial(ctx, spec, amp=1.0)


def default_params(ctx: EnergyContext, spec: ProblemSpec, seed: int = 0) -> NehariParams:
    return make_params(ctx, reference_field(ctx, spec), seed=seed)


# ---------------------------------------------------------------------------
# Flow and minimization.
# ---------------------------------------------------------------------------


def flow_step(ctx: EnergyContext, u: Field, dtau: float) -> Field:
    """One explicit Euler step of the negative metric-gradient flow."""
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    return u - dtau * riesz_gradient(ctx, u)


def _parts_tuple(parts: SignedParts) -> tuple[Field, ...]:
    return (
        parts.tilde_plus,
        parts.tilde_minus,
        parts.hat_plus,
        parts.hat_minus,
        parts.bar_low,
        parts.remainder,
    )


def _resplit(dec: Decomposition) -> SignedParts:
    return signed_parts(dec)


def _combine(dec_u: Decomposition, dec_g: Decomposition, dtau: float) -> Decomposition:
    """Decomposition of u - dtau*g from the two known decompositions."""
    return Decomposition(
        tilde=dec_u.tilde - dtau * dec_g.tilde,
        hat=dec_u.hat - dtau * dec_g.hat,
        bar_low=dec_u.bar_low - dtau * dec_g.bar_low,
        remainder=dec_u.remainder - dtau * dec_g.remainder,
    )


def _rescale_from_parts(
    ctx: EnergyContext, u: Field, parts: SignedParts
) -> tuple[Field, Decomposition, tuple[float, float, float]]:
    """Rescale with a known signed decomposition; returns the new field,
    its (analytic) decomposition, and the scaling triple."""
    numerators = np.array(
        [
            inner_product(u, parts.tilde_plus),
            -inner_product(u, parts.tilde_minus),
            inner_product(u, parts.hat_plus),
        ]
    )
    base = (
        ctx.grid.quad_weights * ctx.a_plus * np.abs(u.values) ** (ctx.p - 2) * u.values
    )
    denominators = np.array(
        [
            float(base @ parts.tilde_plus.values),
            -float(base @ parts.tilde_minus.values),
            float(base @ parts.hat_plus.values),
        ]
    )
    if np.any(numerators <= 0.0) or np.any(denominators <= 0.0):
        raise SignPatternLost(
            f"sign-pattern lost: pairings num={numerators}, den={denominators}"
        )
    r, s, t = ((numerators / denominators) ** (1.0 / (ctx.p - 2))).tolist()

    new_tilde = r * parts.tilde_plus - s * parts.tilde_minus
    new_hat = t * parts.hat_plus - parts.hat_minus
    w = new_tilde + new_hat + parts.bar_low + parts.remainder
    dec = Decomposition(
        tilde=new_tilde, hat=new_hat, bar_low=parts.bar_low, remainder=parts.remainder
    )
    return w, dec, (r, s, t)


def minimize(
    ctx: EnergyContext,
    params: NehariParams,
    u0: Field,
    opts: SolveOptions | None = None,
) -> SolveResult:
    """Minimize the energy over the constraint set from a member seed.

    Alternates backtracking metric-gradient steps with the sign-part
    rescale, accepting a step only if the post-rescale energy does not
    increase beyond rounding slack.  Terminates when the constraint-
    tangential gradient norm and the three derivative residuals are below
    tolerance.  Non-convergence returns the best iterate flagged
    ``converged=False`` instead of raising.
    """
    opts = opts or SolveOptions()
    tol_grad = opts.tol_grad if opts.tol_grad is not None else 1e-8 * (1.0 + norm(u0))
    tol_res = opts.tol_residual if opts.tol_residual is not None else tol_grad

    report0 = check_membership(ctx, params, u0)
    if not all(report0.nontrivial):
        raise ValueError(
            "seed violates nontriviality: signed part norms "
            f"{(report0.tilde_plus_norm, report0.tilde_minus_norm, report0.hat_plus_norm)}"
        )
    if not report0.passed:
        log.info("seed fails some membership constraints; descent will restore them")

    u = u0.copy()
    dec_u = decompose(u, ctx.grid)
    g_warm: np.ndarray | None = None
    dec_g: Decomposition | None = None

    energies: list[float] = [energy(ctx, u)]
    triples: list[tuple[float, float, float]] = []
    dtau = opts.dtau0
    converged = False
    message = ""
    iterations = 0

    for k in range(opts.max_iters):
        iterations = k + 1
        r_nodal = nodal_residual(ctx, u)
        g = solve_spd(ctx.grid, None, ctx.grid.field(r_nodal), x0=g_warm)
        g_warm = g.values
        grad_sq = float(g.values @ r_nodal)

        parts = _resplit(dec_u)
        directions = (parts.tilde_plus, parts.tilde_minus, parts.hat_plus)
        resid = np.array([float(r_nodal @ d.values) for d in directions])
        gram = np.array([[inner_product(a, b) for b in directions] for a in directions])
        try:
            coeffs = np.linalg.solve(gram, resid)
        except np.linalg.LinAlgError:
            message = "sign-pattern lost: scaling directions degenerate"
            break
        tangential_sq = max(grad_sq - float(coeffs @ resid), 0.0)

        if np.sqrt(tangential_sq) <= tol_grad and np.max(np.abs(resid)) <= tol_res:
            converged = True
            break

        dec_g = decompose(g, ctx.grid, warm=dec_g)
        e_cur = energies[-1]
        slack = 1e-12 * (1.0 + abs(e_cur))
        accepted = False
        for _ in range(opts.max_backtracks):
            try:
                trial_dec = _combine(dec_u, dec_g, dtau)
                trial = u - dtau * g
                w, dec_w, triple = _rescale_from_parts(ctx, trial, _resplit(trial_dec))
            except SignPatternLost:
                dtau *= opts.shrink
                continue
            e_new = energy(ctx, w)
            if e_new <= e_cur + slack:
                u, dec_u = w, dec_w
                energies.append(e_new)
                triples.append(triple)
                dtau = min(dtau * opts.grow, opts.dtau_max)
                accepted = True
                break
            dtau *= opts.shrink
        if not accepted:
            message = (
                f"line search failed at iteration {k}: no acceptable step above "
                f"dtau={dtau:.3e}"
            )
            break

        if (k + 1) % opts.refresh_every == 0:
            dec_u = decompose(u, ctx.grid, warm=dec_u)
    else:
        message = f"iteration cap {opts.max_iters} exceeded"

    final_dec = decompose(u, ctx.grid, warm=dec_u)
    final_report = check_membership(ctx, params, u, dec=final_dec)
    result = SolveResult(
        u=u,
        energy_trace=np.asarray(energies),
        pde_residual=pde_residual(ctx, u),
        report=final_report,
        iterations=iterations,
        triple_history=np.asarray(triples).reshape(-1, 3),
        converged=converged,
        message=message,
    )
    if not converged:
        log.warning("minimize did not converge: %s", message)
    return result


def diagnostics(ctx: EnergyContext, u: Field, dec: Decomposition | None = None) -> Diagnostics:
    """Concentration quantities of one field."""
    if dec is None:
        dec = decompose(u, ctx.grid)
    parts = signed_parts(dec)
    mu_term = (
        ctx.mu
        * weighted_p_integral(ctx.grid, ctx.weight.a_minus, parts.remainder, ctx.p)
        / ctx.p
    )
    return Diagnostics(
        hat_minus_norm=norm(parts.hat_minus),
        bar_low_norm=norm(parts.bar_low),
        remainder_norm=norm(parts.remainder),
        mu_remainder_term=mu_term,
        energy=energy(ctx, u),
        tilde_hat_plus_norm=norm(dec.tilde + parts.hat_plus),
        min_three_norms=min(
            norm(parts.tilde_plus), norm(parts.tilde_minus), norm(parts.hat_plus)
        ),
        negative_region_integral=weighted_p_integral(
            ctx.grid, ctx.weight.a_minus, u, ctx.p
        ),
    )


@dataclass(frozen=True)
class SweepFloors:
    """Ceilings the vanishing parts must reach at the largest mu."""

    hat_minus: float = 1e-2
    bar_low: float = 1e-2
    remainder: float = 1.0
    mu_term_fraction: float = 1e-3  # final mu-term relative to the first


def mu_sweep(
    spec: ProblemSpec,
    mus,
    n: int,
    opts: SolveOptions | None = None,
    floors: SweepFloors | None = None,
    params_seed: int = 0,
) -> ContinuationReport:
    """Solve along an increasing mu schedule with warm starts.

    Each solve starts from the previous solution rescaled under the new mu
    (the derivative constraints do not see mu, so warm starts remain
    members).  A non-converged solve aborts the sweep and returns the
    partial report with ``completed=False``.
    """
    mus = tuple(float(m) for m in mus)
    if len(mus) < 3:
        raise ValueError(f"schedule needs at least 3 values, got {len(mus)}")
    if any(b <= a for a, b in zip(mus, mus[1:])):
        raise ValueError("schedule must be strictly increasing")
    opts = opts or SolveOptions()
    floors = floors or SweepFloors()

    from .energy import make_context

    ctx0 = make_context(spec, n, mu=mus[0])
    params = default_params(ctx0, spec, seed=params_seed)

    results: list[SolveResult] = []
    diags: list[Diagnostics] = []
    completed = True
    u_prev: Field | None = None
    for mu in mus:
        ctx = ctx0.with_mu(mu)
        if u_prev is None:
            u0 = seed_initial(ctx, spec, amp=opts.seed_amp)
        else:
            from .constraints import rescale_to_nehari

            u0, _ = rescale_to_nehari(ctx, u_prev)
        log.info("sweep: solving at mu=%g", mu)
        res = minimize(ctx, params, u0, opts)
        results.append(res)
        diags.append(diagnostics(ctx, res.u))
        if not res.converged:
            log.warning("sweep aborted: solve at mu=%g did not converge", mu)
            completed = False
            break
        u_prev = res.u

    verdicts = _sweep_verdicts(params, diags, floors) if completed else {}
    return ContinuationReport(
        mus=mus[: len(results)],
        results=tuple(results),
        diagnostics=tuple(diags),
        verdicts=verdicts,
        kappa=params.kappa,
        completed=completed,
    )


def _monotone_within_slack(values, slack: float = 0.1) -> bool:
    return all(b <= a * (1.0 + slack) for a, b in zip(values, values[1:]))


def _sweep_verdicts(params: NehariParams, diags, floors: SweepFloors) -> dict:
    mu_terms = [d.mu_remainder_term for d in diags]
    return {
        "mu_term_nonincreasing": _monotone_within_slack(mu_terms),
        "mu_term_final_fraction_ok": mu_terms[-1] <= floors.mu_term_fraction * mu_terms[0],
        "hat_minus_decreasing": _monotone_within_slack([d.hat_minus_norm for d in diags]),
        "bar_low_decreasing": _monotone_within_slack([d.bar_low_norm for d in diags]),
        "remainder_decreasing": _monotone_within_slack([d.remainder_norm for d in diags]),
        "below_floors": (
            diags[-1].hat_minus_norm <= floors.hat_minus
            and diags[-1].bar_low_norm <= floors.bar_low
            and diags[-1].remainder_norm <= floors.remainder
        ),
        "kappa_bound": all(d.min_three_norms >= params.kappa for d in diags),
    }
