"""Problem descriptions: domains, exponents, and indefinite weights.

A problem consists of a 1D or 2D box domain, an exponent p > 2, and a
continuous weight a = a_plus - a_minus whose positive part is supported on
finitely many disjoint component regions sorted into three families
("tilde", "hat", "bar") and whose negative part fills the rest of the
domain.  The built-in weight family uses parabolic bumps on the components
and a distance-tapered plateau for the negative part, so both parts vanish
on component boundaries and the sign hypotheses hold exactly on every grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, attach_masks, build_grid

FAMILIES = ("tilde", "hat", "bar")


class SpecError(ValueError):
    """Invalid problem description (syntax or violated invariant)."""


@dataclass(frozen=True)
class Component:
    """One region where a_plus > 0, tagged with its family."""

    family: str
    region: tuple[tuple[float, float], ...]
    amp: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.amp <= 0:
            raise SpecError(f"component amp must be positive, got {self.amp}")
        for lo, hi in self.region:
            if not hi > lo:
                raise SpecError(f"empty component region ({lo}, {hi})")


@dataclass(frozen=True)
class ProblemSpec:
    """Validated description of the continuous problem."""

    geometry: tuple[tuple[float, float], ...]
    p: float
    components: tuple[Component, ...]
    negative_amp: float = 1.0
    taper: float | None = None
    mu_default: float = 100.0

    @property
    def dim(self) -> int:
        return len(self.geometry)

    def family_components(self, family: str) -> tuple[Component, ...]:
        return tuple(c for c in self.components if c.family == family)


@dataclass(frozen=True)
class WeightField:
    """Nodal weight arrays and the node masks of their supports.

    ``a_plus * a_minus = 0`` nodewise; a_plus is positive exactly on nodes
    strictly inside some component region, a_minus exactly on nodes strictly
    outside the closed union of the regions.
    """

    a_plus: np.ndarray
    a_minus: np.ndarray
    component_masks: tuple[np.ndarray, ...]
    component_families: tuple[str, ...]
    negative_mask: np.ndarray

    @property
    def a_inf(self) -> float:
        """Nodal sup norm of a = a_plus - a_minus (supports are disjoint)."""
        return float(max(self.a_plus.max(initial=0.0), self.a_minus.max(initial=0.0)))


@dataclass(frozen=True)
class ValidationReport:
    """Per-invariant diagnostics plus family counts."""

    tilde_count: int
    hat_count: int
    bar_count: int
    issues: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def total_count(self) -> int:
        return self.tilde_count + self.hat_count + self.bar_count

    @property
    def ok(self) -> bool:
        return not self.issues


def _regions_overlap(a: Component, b: Component) -> bool:
    return all(
        max(la, lb) < min(ra, rb)
        for (la, ra), (lb, rb) in zip(a.region, b.region)
    )


def validate_spec(spec: ProblemSpec) -> ValidationReport:
    """Check every ProblemSpec invariant, one diagnostic per violation."""
    issues: list[str] = []
    warnings: list[str] = []

    if spec.p <= 2:
        issues.append(f"p must exceed 2, got p={spec.p}")
    if spec.dim not in (1, 2):
        issues.append(f"only interval and rectangle domains supported, dim={spec.dim}")
    if spec.negative_amp <= 0:
        issues.append(f"negative_amp must be positive, got {spec.negative_amp}")
    if spec.taper is not None and spec.taper <= 0:
        issues.append(f"taper must be positive, got {spec.taper}")
    if spec.mu_default <= 0:
        issues.append(f"mu must be positive, got {spec.mu_default}")

    for i, comp in enumerate(spec.components):
        if len(comp.region) != spec.dim:
            issues.append(f"component {i}: region dimension does not match domain")
            continue
        for (lo, hi), (dlo, dhi) in zip(comp.region, spec.geometry):
            if lo <= dlo or hi >= dhi:
                issues.append(
                    f"component {i}: region ({lo}, {hi}) must have closure inside "
                    f"the open domain ({dlo}, {dhi})"
                )
    for i, a in enumerate(spec.components):
        for j, b in enumerate(spec.components[i + 1:], start=i + 1):
            if len(a.region) == len(b.region) == spec.dim and _regions_overlap(a, b):
                issues.append(f"components overlap: {i} and {j}")

    counts = {fam: len(spec.family_components(fam)) for fam in FAMILIES}
    if counts["tilde"] == 0:
        warnings.append("tilde family empty: nodal sign pattern unavailable")
    if counts["hat"] == 0:
        warnings.append("hat family empty: one-signed bump pattern unavailable")

    return ValidationReport(
        tilde_count=counts["tilde"],
        hat_count=counts["hat"],
        bar_count=counts["bar"],
        issues=tuple(issues),
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# Configuration document parsing.
#
# Line-based format, one `key = value` per line, `#` comments, components on
# `[component]` lines holding several `key = value` groups:
#
#   p = 4.0
#   mu = 100.0
#   domain = interval 0.0 1.0
#   negative_amp = 1.0
#   taper = 0.05
#   [component] family = tilde  region = 0.05 0.30  amp = 1.0
# ---------------------------------------------------------------------------

_GLOBAL_KEYS = {"p", "mu", "domain", "negative_amp", "taper"}
_COMPONENT_KEYS = {"family", "region", "amp"}


def _parse_float(token: str, lineno: int, key: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise SpecError(f"line {lineno}: value for {key!r} is not a number: {token!r}")


def _parse_component_line(rest: str, lineno: int) -> Component:
    tokens = rest.replace("=", " = ").split()
    groups: dict[str, list[str]] = {}
    current: str | None = None
    i = 0
    while i < len(tokens):
        if i + 1 < len(tokens) and tokens[i + 1] == "=":
            key = tokens[i]
            if key not in _COMPONENT_KEYS:
                raise SpecError(f"line {lineno}: unknown component key {key!r}")
            if key in groups:
                raise SpecError(f"line {lineno}: duplicate component key {key!r}")
            groups[key] = []
            current = key
            i += 2
        else:
            if current is None:
                raise SpecError(f"line {lineno}: stray token {tokens[i]!r} in component")
            groups[current].append(tokens[i])
            i += 1

    missing = _COMPONENT_KEYS - groups.keys()
    if missing:
        raise SpecError(f"line {lineno}: component missing keys {sorted(missing)}")
    if len(groups["family"]) != 1:
        raise SpecError(f"line {lineno}: family takes exactly one value")
    family = groups["family"][0]
    if len(groups["amp"]) != 1:
        raise SpecError(f"line {lineno}: amp takes exactly one value")
    amp = _parse_float(groups["amp"][0], lineno, "amp")
    nums = [_parse_float(t, lineno, "region") for t in groups["region"]]
    if len(nums) == 2:
        region = ((nums[0], nums[1]),)
    elif len(nums) == 4:
        region = ((nums[0], nums[1]), (nums[2], nums[3]))
    else:
        raise SpecError(f"line {lineno}: region takes 2 (interval) or 4 (rectangle) numbers")
    try:
        return Component(family=family, region=region, amp=amp)
    except SpecError as exc:
        raise SpecError(f"line {lineno}: {exc}")


def parse_spec(text: str) -> ProblemSpec:
    """Parse and validate a problem description document.

    Raises :class:`SpecError` with the offending line number on syntax
    errors, unknown or duplicate keys, and on any violated invariant.
    """
    globals_seen: dict[str, object] = {}
    components: list[Component] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[component]"):
            components.append(_parse_component_line(line[len("[component]"):], lineno))
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _GLOBAL_KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        if key in globals_seen:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        if key == "domain":
            tokens = value.split()
            if tokens[:1] == ["interval"] and len(tokens) == 3:
                lo, hi = (_parse_float(t, lineno, "domain") for t in tokens[1:])
                globals_seen[key] = ((lo, hi),)
            elif tokens[:1] == ["rectangle"] and len(tokens) == 5:
                x0, x1, y0, y1 = (_parse_float(t, lineno, "domain") for t in tokens[1:])
                globals_seen[key] = ((x0, x1), (y0, y1))
            else:
                raise SpecError(
                    f"line {lineno}: domain must be 'interval lo hi' or "
                    f"'rectangle x0 x1 y0 y1'"
                )
        else:
            globals_seen[key] = _parse_float(value, lineno, key)

    if "p" not in globals_seen:
        raise SpecError("missing required key 'p'")
    if "domain" not in globals_seen:
        raise SpecError("missing required key 'domain'")
    p = float(globals_seen["p"])
    if p <= 2:
        raise SpecError(f"p must exceed 2, got p={p}")

    spec = ProblemSpec(
        geometry=globals_seen["domain"],
        p=p,
        components=tuple(components),
        negative_amp=float(globals_seen.get("negative_amp", 1.0)),
        taper=float(globals_seen["taper"]) if "taper" in globals_seen else None,
        mu_default=float(globals_seen.get("mu", 100.0)),
    )
    report = validate_spec(spec)
    if not report.ok:
        raise SpecError("; ".join(report.issues))
    return spec


# ---------------------------------------------------------------------------
# Weight construction on a grid.
# ---------------------------------------------------------------------------


def _bump_profile(coords: np.ndarray, region, amp: float) -> np.ndarray:
    """Tensor-product parabola, amp at the region center, 0 on its boundary."""
    prof = np.full(coords.shape[0], amp)
    for axis, (lo, hi) in enumerate(region):
        x = coords[:, axis]
        prof = prof * 4.0 * (x - lo) * (hi - x) / (hi - lo) ** 2
    return prof


def _strict_interior(coords: np.ndarray, region) -> np.ndarray:
    inside = np.ones(coords.shape[0], dtype=bool)
    for axis, (lo, hi) in enumerate(region):
        inside &= (coords[:, axis] > lo) & (coords[:, axis] < hi)
    return inside


def _distance_to_region(coords: np.ndarray, region) -> np.ndarray:
    d2 = np.zeros(coords.shape[0])
    for axis, (lo, hi) in enumerate(region):
        x = coords[:, axis]
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        d2 += gap ** 2
    return np.sqrt(d2)


def default_taper(spec: ProblemSpec) -> float:
    """One tenth of the smallest gap between regions (or region to boundary)."""
    gaps: list[float] = []
    for i, a in enumerate(spec.components):
        for (lo, hi), (dlo, dhi) in zip(a.region, spec.geometry):
            gaps.extend([lo - dlo, dhi - hi])
        for b in spec.components[i + 1:]:
            # Separation of axis-aligned boxes: Euclidean gap between regions.
            d2 = 0.0
            for (la, ra), (lb, rb) in zip(a.region, b.region):
                g = max(lb - ra, la - rb, 0.0)
                d2 += g * g
            if d2 > 0:
                gaps.append(np.sqrt(d2))
    positive = [g for g in gaps if g > 0]
    if not positive:
        raise SpecError("cannot infer taper width: no positive gap between regions")
    return min(positive) / 10.0


def build_weight(spec: ProblemSpec, grid: Grid) -> WeightField:
    """Evaluate the built-in weight family on a grid and build node masks.

    a_plus on each component is the amp-scaled tensor parabola vanishing on
    the region boundary; a_minus ramps linearly with distance from the
    closed union of the regions, reaching the plateau ``negative_amp`` at
    the taper width.  Deterministic: identical inputs give bitwise
    identical arrays.
    """
    if grid.dim != spec.dim or grid.bounds != spec.geometry:
        raise SpecError("grid/spec geometry mismatch")

    coords = grid.coords()
    n_nodes = grid.n_nodes
    a_plus = np.zeros(n_nodes)
    masks: list[np.ndarray] = []

    for comp in spec.components:
        for (lo, hi), h in zip(comp.region, grid.h):
            if hi - lo < 3 * h:
                raise SpecError(
                    f"component region ({lo}, {hi}) thinner than 3 mesh cells "
                    f"(h={h:.4g}): refine the grid"
                )
        inside = _strict_interior(coords, comp.region)
        mask = np.flatnonzero(inside)
        if mask.size == 0:
            raise SpecError(f"component {comp.region} contains no interior node")
        a_plus[mask] += _bump_profile(coords[mask], comp.region, comp.amp)
        masks.append(mask)

    # Component masks must not share stiffness stencil entries, otherwise the
    # subspaces are not orthogonal; demand at least one clear node between any
    # two masks (cheap proxy: regions separated by >= 2 cells).
    for i, a in enumerate(spec.components):
        for j, b in enumerate(spec.components[i + 1:], start=i + 1):
            d = 0.0
            for (la, ra), (lb, rb) in zip(a.region, b.region):
                d = max(d, lb - ra, la - rb)
            if d < 2 * max(grid.h):
                raise SpecError(
                    f"components {i} and {j} closer than 2 mesh cells: under-resolved gap"
                )

    taper = spec.taper if spec.taper is not None else default_taper(spec)
    dist = np.min(
        np.column_stack([_distance_to_region(coords, c.region) for c in spec.components]),
        axis=1,
    )
    a_minus = spec.negative_amp * np.minimum(1.0, dist / taper)
    a_minus[a_plus > 0] = 0.0  # supports disjoint by construction; enforce exactly

    negative_mask = np.flatnonzero(a_minus > 0)
    return WeightField(
        a_plus=a_plus,
        a_minus=a_minus,
        component_masks=tuple(masks),
        component_families=tuple(c.family for c in spec.components),
        negative_mask=negative_mask,
    )


def problem_grid(spec: ProblemSpec, n: int) -> tuple[Grid, WeightField]:
    """Build the grid for a spec, attach the component masks, return both."""
    bare = build_grid(spec.geometry, n)
    weight = build_weight(spec, bare)
    grid = attach_masks(bare, weight.component_masks, weight.component_families)
    return grid, weight
