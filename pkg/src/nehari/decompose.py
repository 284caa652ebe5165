"""Orthogonal splitting of a field into component parts and a remainder.

Every field u decomposes as ``u = tilde + hat + bar_low + remainder`` where
the first three parts are the energy-orthogonal projections onto the
subspaces of fields vanishing outside the tilde/hat/bar component masks and
the remainder is discrete-harmonic inside every component.  Positive and
negative parts are taken nodewise, which for piecewise-linear elements
coincides with the function-level split at the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, inner_product, norm, solve_spd


@dataclass(frozen=True, eq=False)
class Decomposition:
    """The quadruple (tilde, hat, bar_low, remainder) of one field."""

    tilde: Field
    hat: Field
    bar_low: Field
    remainder: Field

    @property
    def grid(self) -> Grid:
        return self.tilde.grid

    def reassemble(self) -> Field:
        return self.tilde + self.hat + self.bar_low + self.remainder


def project_component(u: Field, mask: np.ndarray, x0: np.ndarray | None = None) -> Field:
    """Energy-orthogonal projection onto fields supported on ``mask``.

    Computed as the masked stiffness solve ``(K w)|mask = (K u)|mask``; the
    projection is the identity on the subspace and annihilates fields that
    are discrete-harmonic inside the mask.
    """
    rhs = u.grid.field(u.grid.stiffness @ u.values)
    return solve_spd(u.grid, mask, rhs, x0=x0)


def decompose(
    u: Field,
    grid: Grid | None = None,
    warm: "Decomposition | None" = None,
) -> Decomposition:
    """Split u into family projections plus remainder.

    ``grid`` defaults to u's own grid, which must carry component masks
    (see :func:`nehari.problem.problem_grid`).  ``warm`` optionally
    supplies a previous decomposition as a solver warm start.
    """
    grid = grid if grid is not None else u.grid
    if u.grid.key() != grid.key():
        raise ValueError("grid mismatch in decompose")
    if not grid.component_masks:
        raise ValueError("grid carries no component masks; build it via problem_grid")

    parts = {fam: grid.zero_field() for fam in ("tilde", "hat", "bar")}
    warm_parts = {
        "tilde": warm.tilde if warm is not None else None,
        "hat": warm.hat if warm is not None else None,
        "bar": warm.bar_low if warm is not None else None,
    }
    for mask, family in zip(grid.component_masks, grid.component_families):
        prev = warm_parts[family]
        x0 = prev.values if prev is not None else None
        parts[family] = parts[family] + project_component(u, mask, x0=x0)

    remainder = u - parts["tilde"] - parts["hat"] - parts["bar"]
    return Decomposition(
        tilde=parts["tilde"],
        hat=parts["hat"],
        bar_low=parts["bar"],
        remainder=remainder,
    )


def split_signs(u: Field) -> tuple[Field, Field]:
    """Nodewise positive and negative parts with ``u = plus - minus``."""
    plus = np.maximum(u.values, 0.0)
    minus = np.maximum(-u.values, 0.0)
    return u.grid.field(plus), u.grid.field(minus)


@dataclass(frozen=True, eq=False)
class SignedParts:
    """Decomposition refined by the nodewise sign splits used everywhere."""

    tilde_plus: Field
    tilde_minus: Field
    hat_plus: Field
    hat_minus: Field
    bar_low: Field
    remainder: Field

    @property
    def grid(self) -> Grid:
        return self.tilde_plus.grid


def signed_parts(dec: Decomposition) -> SignedParts:
    """Split the tilde and hat parts into signs (project first, then split)."""
    tp, tm = split_signs(dec.tilde)
    hp, hm = split_signs(dec.hat)
    return SignedParts(
        tilde_plus=tp,
        tilde_minus=tm,
        hat_plus=hp,
        hat_minus=hm,
        bar_low=dec.bar_low,
        remainder=dec.remainder,
    )


def orthogonality_defect(dec: Decomposition) -> float:
    """Largest pairwise energy inner product among the four parts."""
    parts = [dec.tilde, dec.hat, dec.bar_low, dec.remainder]
    worst = 0.0
    for i, a in enumerate(parts):
        for b in parts[i + 1:]:
            worst = max(worst, abs(inner_product(a, b)))
    return worst


def pythagoras_defect(dec: Decomposition) -> float:
    """Relative gap between ||u||^2 and the sum of part norms squared."""
    u = dec.reassemble()
    total = inner_product(u, u)
    parts_sum = sum(inner_product(w, w) for w in (dec.tilde, dec.hat, dec.bar_low, dec.remainder))
    return abs(total - parts_sum) / max(total, 1e-300)


def harmonic_defect(dec: Decomposition) -> float:
    """Max masked stiffness residual of the remainder, scaled by ||K|| ||u||."""
    grid = dec.grid
    r = grid.stiffness @ dec.remainder.values
    worst = 0.0
    for mask in grid.component_masks:
        if mask.size:
            worst = max(worst, float(np.linalg.norm(r[mask])))
    k_norm = float(np.abs(grid.stiffness).sum(axis=1).max())
    return worst / max(k_norm * norm(dec.reassemble()), 1e-300)
