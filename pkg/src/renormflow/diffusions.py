"""Algebra of admissible diffusion-function pairs on the quadrant.

A pair ``g = (g1, g2)`` drives the two-type branching SDE: ``g_i(x)/x_i`` is
the state-dependent branching rate of type ``i``. Admissible pairs are
continuous, positive on the open quadrant, and vanish on the axis of the
opposite type: ``g1 = 0`` on ``{x1 = 0}`` and ``g2 = 0`` on ``{x2 = 0}``.

The library works with three tagged families (all closed under the
renormalization map studied here):

* ``mixture`` fixed points  ``g_i = b_i x_i + c_i x1 x2``,
* polynomial pairs          ``g_i = alpha_i x_i^2 + beta_i x_i + gamma_i x1 x2``,
* perturbed fixed points    mixture plus ``w_i x1 x2 / (1 + x1 + x2)``.

Arbitrary callables are accepted as well; continuity and positivity are then
checked statistically (``spot_check``), not symbolically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegeneratePairError, MalformedFunctionError

Vec2 = tuple[float, float]


class BoundaryProperty(enum.Enum):
    """How a component vanishes near the axes.

    D1 / D2: ``g_i / x_i`` extends continuously and positively to the axes.
    D12: ``g_i / (x1 x2)`` does.
    """

    D1 = "D1"
    D2 = "D2"
    D12 = "D12"


class EffectiveBoundary(enum.Enum):
    """Joint zero set of the pair: where both components vanish."""

    ORIGIN = "origin"          # axes meet only at (0, 0)
    A1 = "A1"                  # horizontal axis {x2 = 0}
    A2 = "A2"                  # vertical axis {x1 = 0}
    A1_UNION_A2 = "A1uA2"      # both axes


@dataclass(frozen=True)
class GrowthCertificate:
    """Declared bound g1(x) + g2(x) <= C (1+x1)(1+x2) + a (x1^2 + x2^2)."""

    a: float
    C: float

    def __post_init__(self):
        if not (self.a >= 0.0 and math.isfinite(self.a)):
            raise ValueError(f"quadratic coefficient a must be >= 0, got {self.a}")
        if not (self.C > 0.0 and math.isfinite(self.C)):
            raise ValueError(f"cross-term coefficient C must be > 0, got {self.C}")

    def envelope(self, x1, x2):
        return self.C * (1.0 + x1) * (1.0 + x2) + self.a * (x1 * x1 + x2 * x2)


@dataclass(frozen=True)
class InfinitySlopes:
    """Limits of g_i against the harmonic monomials at the three infinite anchors.

    ``at_inf_0``  : (lim g1/x1,   lim g2/x1)   toward (inf, 0)
    ``at_0_inf``  : (lim g1/x2,   lim g2/x2)   toward (0, inf)
    ``at_inf_inf``: (lim g1/x1x2, lim g2/x1x2) toward (inf, inf)

    Axis vanishing forces g1's slope at (0, inf) and g2's at (inf, 0) to zero,
    so those positions carry structural zeros.
    """

    at_inf_0: Vec2
    at_0_inf: Vec2
    at_inf_inf: Vec2

    def as_array(self) -> np.ndarray:
        return np.array([self.at_inf_0, self.at_0_inf, self.at_inf_inf], dtype=float)

    @staticmethod
    def from_array(arr) -> "InfinitySlopes":
        a = np.asarray(arr, dtype=float)
        return InfinitySlopes(
            (float(a[0, 0]), float(a[0, 1])),
            (float(a[1, 0]), float(a[1, 1])),
            (float(a[2, 0]), float(a[2, 1])),
        )


@dataclass(frozen=True)
class PolynomialDiffusion:
    """Coefficient record g_i = alpha_i x_i^2 + beta_i x_i + gamma_i x1 x2.

    All coefficients nonnegative. Unless ``allow_degenerate`` is set, each
    component must be nonzero somewhere off its axis:
    (beta1 + gamma1)(beta2 + gamma2) > 0.
    """

    alpha: Vec2
    beta: Vec2
    gamma: Vec2
    allow_degenerate: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            pair = getattr(self, name)
            if len(pair) != 2 or any(not (float(v) >= 0.0) for v in pair):
                raise ValueError(f"{name} must be a pair of nonnegative reals, got {pair!r}")
            object.__setattr__(self, name, (float(pair[0]), float(pair[1])))
        if not self.allow_degenerate:
            if (self.beta[0] + self.gamma[0]) * (self.beta[1] + self.gamma[1]) <= 0.0:
                raise DegeneratePairError(
                    "component identically zero off its axis: "
                    f"beta={self.beta}, gamma={self.gamma}"
                )

    def component(self, i: int, x1: float, x2: float) -> float:
        xi = x1 if i == 0 else x2
        return self.alpha[i] * xi * xi + self.beta[i] * xi + self.gamma[i] * x1 * x2

    def scaled(self, factors: Vec2) -> "PolynomialDiffusion":
        """New record with component i multiplied by factors[i]."""
        f1, f2 = factors
        return PolynomialDiffusion(
            alpha=(self.alpha[0] * f1, self.alpha[1] * f2),
            beta=(self.beta[0] * f1, self.beta[1] * f2),
            gamma=(self.gamma[0] * f1, self.gamma[1] * f2),
            allow_degenerate=self.allow_degenerate,
        )


@dataclass(frozen=True)
class FamilyParams:
    """Flat coefficient vector for the jit-compiled evaluation fast path.

    Component i (i = 0, 1):
        g_i = quad_i . x_i^2 + lin_i . x_i + cross_i . x1 x2
              + pert_i . x1 x2 / (1 + x1 + x2)
    """

    quad: Vec2
    lin: Vec2
    cross: Vec2
    pert: Vec2 = (0.0, 0.0)

    def as_array(self) -> np.ndarray:
        q, l, c, w = self.quad, self.lin, self.cross, self.pert
        return np.array([q[0], l[0], c[0], w[0], q[1], l[1], c[1], w[1]], dtype=float)


def _family_component(p: FamilyParams, i: int, x1: float, x2: float) -> float:
    xi = x1 if i == 0 else x2
    cross = x1 * x2
    return (
        p.quad[i] * xi * xi
        + p.lin[i] * xi
        + p.cross[i] * cross
        + p.pert[i] * cross / (1.0 + x1 + x2)
    )


@dataclass(frozen=True)
class GridBacking:
    """Prepared table of a grid-represented pair, for the compiled kernels.

    ``norm_values``: (m+1, m+1, 2) table of g / (1+x1)(1+x2) at the nodes
    y = (i/m, j/m), with row/column m holding the anchor-slope values at
    the compactified boundary y = 1.
    """

    norm_values: np.ndarray
    m: int


@dataclass(frozen=True)
class DiffusionPair:
    """An admissible pair with its boundary declarations and growth data.

    ``g1``/``g2`` are plain callables ``(x1, x2) -> float``. ``family`` is set
    when the pair belongs to one of the tagged coefficient families, enabling
    the compiled simulation kernels; callables outside the families run on a
    slower generic path.
    """

    g1: Callable[[float, float], float]
    g2: Callable[[float, float], float]
    bp1: BoundaryProperty
    bp2: BoundaryProperty
    growth: Optional[GrowthCertificate] = None
    infinity_slopes: Optional[InfinitySlopes] = None
    family: Optional[FamilyParams] = None
    grid_backing: Optional[GridBacking] = None
    label: str = ""

    def __post_init__(self):
        if self.bp1 not in (BoundaryProperty.D1, BoundaryProperty.D12):
            raise ValueError(f"component 1 must vanish like x1 or x1x2, got {self.bp1}")
        if self.bp2 not in (BoundaryProperty.D2, BoundaryProperty.D12):
            raise ValueError(f"component 2 must vanish like x2 or x1x2, got {self.bp2}")

    def evaluate(self, x: Vec2) -> Vec2:
        """Evaluate both components; validates the results are finite and >= 0."""
        x1, x2 = float(x[0]), float(x[1])
        if not (x1 >= 0.0 and x2 >= 0.0):
            raise ValueError(f"point outside the quadrant: {x!r}")
        v1 = float(self.g1(x1, x2))
        v2 = float(self.g2(x1, x2))
        if not (math.isfinite(v1) and math.isfinite(v2)) or v1 < 0.0 or v2 < 0.0:
            raise MalformedFunctionError(
                f"diffusion pair {self.label or '<anonymous>'} returned ({v1}, {v2}) at {x!r}"
            )
        return (v1, v2)

    def __call__(self, x: Vec2) -> Vec2:
        return self.evaluate(x)


def effective_boundary(pair: DiffusionPair) -> EffectiveBoundary:
    """Joint zero set, read off the declared boundary properties."""
    d12_1 = pair.bp1 is BoundaryProperty.D12
    d12_2 = pair.bp2 is BoundaryProperty.D12
    if d12_1 and d12_2:
        return EffectiveBoundary.A1_UNION_A2
    if d12_1:
        return EffectiveBoundary.A1
    if d12_2:
        return EffectiveBoundary.A2
    return EffectiveBoundary.ORIGIN


def boundary_distance(boundary: EffectiveBoundary, x: Vec2) -> float:
    """Euclidean distance from x to the joint zero set."""
    x1, x2 = x
    if boundary is EffectiveBoundary.ORIGIN:
        return math.hypot(x1, x2)
    if boundary is EffectiveBoundary.A1:
        return x2
    if boundary is EffectiveBoundary.A2:
        return x1
    return min(x1, x2)


def _mixture_tags(b: Vec2, c: Vec2) -> tuple[BoundaryProperty, BoundaryProperty]:
    # b_i > 0 keeps g_i/x_i positive on the axes even when c_i > 0.
    bp1 = BoundaryProperty.D1 if b[0] > 0.0 else BoundaryProperty.D12
    bp2 = BoundaryProperty.D2 if b[1] > 0.0 else BoundaryProperty.D12
    return bp1, bp2


def make_fixed_point(b1: float, b2: float, c1: float, c2: float) -> DiffusionPair:
    """Mixture pair g = (b1 x1 + c1 x1 x2, b2 x2 + c2 x1 x2).

    These mixtures of independent, catalytic and mutually catalytic branching
    are invariant under the renormalization map for every drift rate.
    """
    for name, v in (("b1", b1), ("b2", b2), ("c1", c1), ("c2", c2)):
        if not (float(v) >= 0.0):
            raise ValueError(f"{name} must be >= 0, got {v}")
    b1, b2, c1, c2 = float(b1), float(b2), float(c1), float(c2)
    if (b1 + c1) * (b2 + c2) <= 0.0:
        raise DegeneratePairError(
            f"(b1 + c1)(b2 + c2) must be positive, got b=({b1}, {b2}), c=({c1}, {c2})"
        )
    bp1, bp2 = _mixture_tags((b1, b2), (c1, c2))
    fam = FamilyParams(quad=(0.0, 0.0), lin=(b1, b2), cross=(c1, c2))
    return DiffusionPair(
        g1=lambda x1, x2: b1 * x1 + c1 * x1 * x2,
        g2=lambda x1, x2: b2 * x2 + c2 * x1 * x2,
        bp1=bp1,
        bp2=bp2,
        growth=GrowthCertificate(a=0.0, C=b1 + b2 + c1 + c2),
        infinity_slopes=InfinitySlopes(
            at_inf_0=(b1, 0.0), at_0_inf=(0.0, b2), at_inf_inf=(c1, c2)
        ),
        family=fam,
        label=f"mixture(b=({b1:g},{b2:g}), c=({c1:g},{c2:g}))",
    )


def make_polynomial(p: PolynomialDiffusion) -> DiffusionPair:
    """Pair from a polynomial coefficient record, with a growth certificate.

    The certificate uses a = max(alpha_i) and C = max(beta1, beta2,
    gamma1 + gamma2) + 1; the gamma terms enter the growth envelope jointly,
    so their sum (not their max) is what the cross term must dominate.
    """
    a = max(p.alpha)
    C = max(p.beta[0], p.beta[1], p.gamma[0] + p.gamma[1]) + 1.0
    quad_present = p.alpha[0] > 0.0 or p.alpha[1] > 0.0
    bp1 = BoundaryProperty.D1 if (p.alpha[0] + p.beta[0]) > 0.0 else BoundaryProperty.D12
    bp2 = BoundaryProperty.D2 if (p.alpha[1] + p.beta[1]) > 0.0 else BoundaryProperty.D12
    fam = FamilyParams(quad=p.alpha, lin=p.beta, cross=p.gamma)
    slopes = None
    if not quad_present:
        slopes = InfinitySlopes(
            at_inf_0=(p.beta[0], 0.0),
            at_0_inf=(0.0, p.beta[1]),
            at_inf_inf=(p.gamma[0], p.gamma[1]),
        )
    return DiffusionPair(
        g1=lambda x1, x2: p.component(0, x1, x2),
        g2=lambda x1, x2: p.component(1, x1, x2),
        bp1=bp1,
        bp2=bp2,
        growth=GrowthCertificate(a=a, C=C),
        infinity_slopes=slopes,
        family=fam,
        label=f"polynomial(alpha={p.alpha}, beta={p.beta}, gamma={p.gamma})",
    )


def make_perturbed_fixed_point(
    b1: float, b2: float, c1: float, c2: float, weight: float
) -> DiffusionPair:
    """Mixture pair plus the bounded rational bump w x1 x2 / (1 + x1 + x2).

    The bump vanishes on both axes, adds at most w min(x1, x2) anywhere, and
    contributes nothing to the slopes at infinity, so the perturbed pair has
    the same anchor behavior as the underlying mixture. Used to probe the
    domain of attraction of the mixture family.
    """
    if weight < 0.0:
        raise ValueError(f"perturbation weight must be >= 0, got {weight}")
    base = make_fixed_point(b1, b2, c1, c2)
    w = float(weight)
    b1, b2, c1, c2 = float(b1), float(b2), float(c1), float(c2)
    fam = FamilyParams(quad=(0.0, 0.0), lin=(b1, b2), cross=(c1, c2), pert=(w, w))
    # The bump behaves like x1x2 * O(1) near the axes: g_i/x_i stays positive
    # only if b_i > 0, in which case the D-tags of the base pair still apply.
    return DiffusionPair(
        g1=lambda x1, x2: b1 * x1 + c1 * x1 * x2 + w * x1 * x2 / (1.0 + x1 + x2),
        g2=lambda x1, x2: b2 * x2 + c2 * x1 * x2 + w * x1 * x2 / (1.0 + x1 + x2),
        bp1=base.bp1,
        bp2=base.bp2,
        growth=GrowthCertificate(a=0.0, C=b1 + b2 + c1 + c2 + w),
        infinity_slopes=base.infinity_slopes,
        family=fam,
        label=f"perturbed({base.label}, w={w:g})",
    )


@dataclass(frozen=True)
class GrowthReport:
    """Outcome of a growth-envelope spot check."""

    passed: bool
    max_ratio: float
    worst_point: Vec2
    n_checked: int
    violations: int


def _probe_points(n_random: int, seed: int) -> np.ndarray:
    """Expanding log-spaced grid plus random interior points."""
    levels = np.concatenate(([0.0], np.logspace(-3.0, 6.0, 19)))
    xs, ys = np.meshgrid(levels, levels)
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    gen = np.random.Generator(np.random.Philox(key=seed))
    rand = gen.uniform(0.0, 100.0, size=(max(n_random, 1), 2))
    return np.vstack([grid, rand])


def check_growth(
    pair: DiffusionPair, a: float, C: float, n_samples: int = 256, seed: int = 0
) -> GrowthReport:
    """Spot-check the envelope C (1+x1)(1+x2) + a (x1^2+x2^2) against the pair.

    Passes iff no sampled point violates the bound (up to float slack).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cert = GrowthCertificate(a=a, C=C)
    pts = _probe_points(n_samples, seed)
    worst = (0.0, (0.0, 0.0))
    violations = 0
    for x1, x2 in pts:
        v1, v2 = pair.evaluate((x1, x2))
        ratio = (v1 + v2) / cert.envelope(x1, x2)
        if ratio > worst[0]:
            worst = (ratio, (float(x1), float(x2)))
        if ratio > 1.0 + 1e-12:
            violations += 1
    return GrowthReport(
        passed=violations == 0,
        max_ratio=worst[0],
        worst_point=worst[1],
        n_checked=len(pts),
        violations=violations,
    )


def spot_check(pair: DiffusionPair, n_samples: int = 256, seed: int = 0) -> None:
    """Statistical validation of admissibility.

    Checks (on random and structured points): finiteness, nonnegativity,
    vanishing on the opposite axes, positivity on the open quadrant, and the
    growth certificate when one is attached. Raises on the first failure.
    """
    gen = np.random.Generator(np.random.Philox(key=seed))
    ts = np.concatenate(([0.0], np.logspace(-3, 3, 13), gen.uniform(0, 50, size=8)))
    for t in ts:
        v1, _ = pair.evaluate((0.0, t))
        _, w2 = pair.evaluate((t, 0.0))
        if v1 != 0.0 or w2 != 0.0:
            raise MalformedFunctionError(
                f"axis annihilation violated at t={t}: g1(0,t)={v1}, g2(t,0)={w2}"
            )
    interior = gen.uniform(1e-3, 30.0, size=(max(n_samples, 1), 2))
    for x1, x2 in interior:
        v1, v2 = pair.evaluate((x1, x2))
        if v1 <= 0.0 or v2 <= 0.0:
            raise MalformedFunctionError(
                f"positivity violated on the open quadrant at ({x1}, {x2}): ({v1}, {v2})"
            )
    if pair.growth is not None:
        rep = check_growth(pair, pair.growth.a, pair.growth.C, n_samples=n_samples, seed=seed)
        if not rep.passed:
            raise MalformedFunctionError(
                f"growth certificate violated: ratio {rep.max_ratio:.3f} at {rep.worst_point}"
            )
