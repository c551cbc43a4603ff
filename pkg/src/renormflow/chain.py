"""Markov chains whose transition kernel is the SDE equilibrium.

One chain step from state x draws the next state from the equilibrium
distribution centered at x. For a pair invariant under the renormalization
map this homogeneous chain is exactly the scale-to-scale chain of block
averages; x1, x2 and x1*x2 are then conserved in mean at every depth.

The size-biased (Doob h-transform) variant reweights each transition by
h(y) = (1 + y1)(1 + y2). Almost surely it converges to the joint zero set of
the pair or to one of the three infinite anchors; the probability of each
anchor is an explicit rational function of the start, which
``trapping_probabilities`` estimates empirically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .diffusions import DiffusionPair, EffectiveBoundary, Vec2, boundary_distance, effective_boundary
from .errors import BlowUpError
from .renorm import CoefficientSequence, McParams, compactify, expand
from .rng import RngStream
from .sde import _kernel_args

#: guard against runaway coordinates; the h-transform grows states on purpose,
#: but beyond this scale float arithmetic in g is at risk
OVERFLOW_GUARD = 1e150

phi = compactify
phi_inv = expand


@dataclass(frozen=True)
class ChainPath:
    """Realized chain: states[k] is the state after k steps."""

    states: np.ndarray  # (depth + 1, 2)
    coeffs: CoefficientSequence
    g_source: str = ""

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ValueError(f"states must be (depth+1, 2), got {s.shape}")
        if np.any(s < 0.0):
            raise ValueError("chain states must lie in the quadrant")
        object.__setattr__(self, "states", s)

    @property
    def depth(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class TrapThresholds:
    """Classification cutoffs: > big reads as infinite, < small as vanished."""

    big: float = 1e3
    small: float = 1e-3

    def __post_init__(self):
        if not (self.small < 1.0 < self.big):
            raise ValueError(f"need small < 1 < big, got {self!r}")
        if self.big < 1.0 / self.small:
            raise ValueError(
                f"need big >= 1/small so the classes cannot overlap, got {self!r}"
            )


@dataclass(frozen=True)
class TrapReport:
    """Empirical trap-class frequencies of the size-biased chain."""

    p_inf_inf: float
    p_inf_0: float
    p_0_inf: float
    p_boundary: float
    p_unresolved: float
    depth: int
    n_chains: int
    thresholds: TrapThresholds

    def total(self) -> float:
        return (
            self.p_inf_inf + self.p_inf_0 + self.p_0_inf
            + self.p_boundary + self.p_unresolved
        )


def _draw_equilibrium(gen, pair: DiffusionPair, c: float, x: Vec2, mc: McParams,
                      n: int, thin_steps: int, burn_steps: int) -> np.ndarray:
    """n thinned post-burn-in states of the SDE centered at x, via gen."""
    t1, t2 = float(x[0]), float(x[1])
    fast = _kernel_args(pair)
    if fast is not None:
        kind, fam, grid, m = fast
        return _kernels.equilibrium_samples(
            gen, kind, fam, grid, m,
            c, t1, t2, t1 + 1.0, t2 + 1.0, mc.dt, burn_steps, n, thin_steps,
        )

    def g_eval(u1, u2):
        return pair.evaluate((u1, u2))

    return _kernels.py_equilibrium_samples(
        gen, g_eval, c, t1, t2, t1 + 1.0, t2 + 1.0, mc.dt, burn_steps, n, thin_steps
    )


def step_chain(
    x: Vec2, c: float, pair: DiffusionPair, mc: McParams, stream_id: int = 0
) -> Vec2:
    """One transition: a single retained post-burn-in equilibrium state."""
    gen = RngStream(mc.seed, stream_id).generator()
    burn_steps, _ = mc.resolve(c)
    pt = _draw_equilibrium(gen, pair, c, x, mc, 1, 1, burn_steps)
    return (float(pt[0, 0]), float(pt[0, 1]))


def run_homogeneous_chain(
    x0: Vec2,
    c: float,
    pair: DiffusionPair,
    depth: int,
    mc: McParams,
    stream_id: int = 0,
) -> ChainPath:
    """depth transitions of the equilibrium-kernel chain from x0.

    Meaningful as a scale chain when the pair is (approximately) invariant
    under the map; the running means of x1, x2 and x1*x2 over replicated
    chains are then flat in depth up to Monte Carlo error.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    gen = RngStream(mc.seed, stream_id).generator()
    burn_steps, _ = mc.resolve(c)
    states = np.zeros((depth + 1, 2))
    states[0] = (float(x0[0]), float(x0[1]))
    x = states[0]
    for k in range(depth):
        pt = _draw_equilibrium(gen, pair, c, (x[0], x[1]), mc, 1, 1, burn_steps)
        x = pt[0]
        _guard(x)
        states[k + 1] = x
    return ChainPath(
        states=states,
        coeffs=CoefficientSequence.constant(c, max(depth, 1)),
        g_source=pair.label,
    )


def _guard(x) -> None:
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > OVERFLOW_GUARD):
        raise BlowUpError(f"chain state left the trusted range: {x!r}")


def _resampled_transition(gen, pair, c, x, mc, batch, thin_steps, burn_steps):
    """Importance resampling: batch of equilibrium draws, pick one by h-weight.

    h(y) = (1+y1)(1+y2) >= 1 keeps the self-normalized weights nondegenerate,
    but their upper tail is heavy for product-type pairs, so the resampled
    transition underweights large states with a bias that decays only slowly
    in the batch size. Kept as an independent cross-check of the exact tilted
    sampler, and usable on its own for rough work.
    """
    pts = _draw_equilibrium(gen, pair, c, x, mc, batch, thin_steps, burn_steps)
    w = (1.0 + pts[:, 0]) * (1.0 + pts[:, 1])
    cw = np.cumsum(w)
    u = gen.random() * cw[-1]
    idx = min(int(np.searchsorted(cw, u)), batch - 1)
    return pts[idx]


def _tilted_transition(gen, pair: DiffusionPair, c: float, x, mc: McParams, burn_steps: int):
    """Exact draw from the h-weighted kernel via the space-time tilt.

    Simulates the SDE over the burn-in window with the explicit extra drift
    2 g_i d_i(log H), where H(t, y) is the conditional expectation of
    h(X(T)); the final state is distributed as the h-tilted time-T law. Only
    the linear drift and noise independence enter H, so this works for every
    admissible pair.
    """
    t1, t2 = float(x[0]), float(x[1])
    fast = _kernel_args(pair)
    if fast is not None:
        kind, fam, grid, m = fast
        y1, y2 = _kernels.tilted_equilibrium_draw(
            gen, kind, fam, grid, m, c, t1, t2, mc.dt, burn_steps
        )
        return np.array([y1, y2])

    def g_eval(u1, u2):
        return pair.evaluate((u1, u2))

    y1, y2 = _kernels.py_tilted_equilibrium_draw(gen, g_eval, c, t1, t2, mc.dt, burn_steps)
    return np.array([y1, y2])


def run_size_biased_chain(
    x0: Vec2,
    c: float,
    pair: DiffusionPair,
    depth: int,
    mc: McParams,
    stream_id: int = 0,
    method: str = "exact",
    batch: int = 64,
) -> ChainPath:
    """The h-transformed chain, h(x) = (1+x1)(1+x2), from x0.

    ``method="exact"`` (default) draws each transition from the tilted
    simulation window; ``method="resample"`` uses h-weighted importance
    resampling over a batch of ``batch`` plain equilibrium draws.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if method not in ("exact", "resample"):
        raise ValueError(f"method must be 'exact' or 'resample', got {method!r}")
    if batch < 2:
        raise ValueError(f"batch must be >= 2, got {batch}")
    gen = RngStream(mc.seed, stream_id).generator()
    burn_steps, thin_steps = mc.resolve(c)
    states = np.zeros((depth + 1, 2))
    states[0] = (float(x0[0]), float(x0[1]))
    x = states[0]
    for k in range(depth):
        if method == "exact":
            x = _tilted_transition(gen, pair, c, (x[0], x[1]), mc, burn_steps)
        else:
            x = _resampled_transition(
                gen, pair, c, (x[0], x[1]), mc, batch, thin_steps, burn_steps
            )
        _guard(x)
        states[k + 1] = x
    return ChainPath(
        states=states,
        coeffs=CoefficientSequence.constant(c, max(depth, 1)),
        g_source=f"h-transform of {pair.label}",
    )


def run_interaction_chain(
    x0: Vec2,
    cs: CoefficientSequence,
    pairs: Sequence[DiffusionPair],
    mc: McParams,
    stream_id: int = 0,
) -> ChainPath:
    """Backward scale chain with per-scale kernels.

    ``pairs[j]`` is the j-fold image of the base pair (pairs[0] the base pair
    itself); transitions run from the deepest scale down: the step into scale
    j uses drift rate c_j and pair j. For a map-invariant pair all entries
    coincide and the chain is the homogeneous one.
    """
    k = len(pairs)
    if k == 0:
        raise ValueError("need at least one per-scale pair")
    if len(cs) < k:
        raise ValueError(f"coefficient sequence has {len(cs)} entries, need {k}")
    gen = RngStream(mc.seed, stream_id).generator()
    states = np.zeros((k + 1, 2))
    states[0] = (float(x0[0]), float(x0[1]))
    x = states[0]
    for pos, j in enumerate(range(k - 1, -1, -1)):
        burn_steps, _ = mc.resolve(cs[j])
        pt = _draw_equilibrium(gen, pairs[j], cs[j], (x[0], x[1]), mc, 1, 1, burn_steps)
        x = pt[0]
        _guard(x)
        states[pos + 1] = x
    return ChainPath(states=states, coeffs=cs, g_source="interaction chain")


def classify_final_state(
    x: Vec2, boundary: EffectiveBoundary, thresholds: TrapThresholds
) -> str:
    """Trap class of a final state: inf_inf, inf_0, 0_inf, boundary, unresolved."""
    x1, x2 = x
    big, small = thresholds.big, thresholds.small
    if x1 > big and x2 > big:
        return "inf_inf"
    if x1 > big and x2 < small:
        return "inf_0"
    if x2 > big and x1 < small:
        return "0_inf"
    if boundary_distance(boundary, x) <= small:
        return "boundary"
    return "unresolved"


def trapping_probabilities(
    x0: Vec2,
    c: float,
    pair: DiffusionPair,
    depth: int,
    n_chains: int,
    thresholds: TrapThresholds = TrapThresholds(),
    mc: McParams = McParams(),
    method: str = "exact",
    batch: int = 64,
    workers: int = 1,
) -> TrapReport:
    """Empirical trap-class frequencies over independent size-biased chains.

    Chains that have not come near a trap by the requested depth are counted
    as unresolved rather than forced into a class. One stream per chain, so
    the report is independent of the worker count.
    """
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    boundary = effective_boundary(pair)

    def run(j: int) -> str:
        path = run_size_biased_chain(
            x0, c, pair, depth, mc, stream_id=j, method=method, batch=batch
        )
        final = path.states[-1]
        return classify_final_state((final[0], final[1]), boundary, thresholds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            labels = list(ex.map(run, range(n_chains)))
    else:
        labels = [run(j) for j in range(n_chains)]
    counts = {k: 0 for k in ("inf_inf", "inf_0", "0_inf", "boundary", "unresolved")}
    for lab in labels:
        counts[lab] += 1
    n = float(n_chains)
    return TrapReport(
        p_inf_inf=counts["inf_inf"] / n,
        p_inf_0=counts["inf_0"] / n,
        p_0_inf=counts["0_inf"] / n,
        p_boundary=counts["boundary"] / n,
        p_unresolved=counts["unresolved"] / n,
        depth=depth,
        n_chains=n_chains,
        thresholds=thresholds,
    )


def anchor_probabilities(x0: Vec2, boundary: EffectiveBoundary) -> dict[str, Optional[float]]:
    """Closed-form trap probabilities of the size-biased chain, where known.

    The (inf, inf) anchor always has probability x1 x2 / h(x0). The single-
    infinite anchors have closed forms only when the corresponding axis ray
    is not part of the joint zero set (otherwise mass can freeze at finite
    boundary points and no formula applies); unavailable entries are None.
    """
    x1, x2 = float(x0[0]), float(x0[1])
    h = (1.0 + x1) * (1.0 + x2)
    out: dict[str, Optional[float]] = {"inf_inf": x1 * x2 / h, "inf_0": None, "0_inf": None}
    if boundary in (EffectiveBoundary.ORIGIN, EffectiveBoundary.A2):
        out["inf_0"] = x1 / h
    if boundary in (EffectiveBoundary.ORIGIN, EffectiveBoundary.A1):
        out["0_inf"] = x2 / h
    return out
