"""Time-discretized simulation of the single-colony SDE and equilibrium sampling.

The autonomous dynamics for one colony are

    dX_i(t) = c [theta_i - X_i(t)] dt + sqrt(2 g_i(X(t))) dB_i(t),  i = 1, 2,

on the closed quadrant: linear reversion toward the attraction center
``theta`` plus branching noise. The process has a unique equilibrium for every
admissible pair; ``sample_equilibrium`` approximates it by one long thinned
trajectory. See ``_kernels`` for the integrator details (coefficient-truncated
explicit Euler with adaptive sub-stepping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .diffusions import BoundaryProperty, DiffusionPair, Vec2
from .errors import ForbiddenStartError
from .rng import RngStream


@dataclass(frozen=True)
class SdeParams:
    """Drift rate, attraction center, step size and diffusion pair."""

    c: float
    theta: Vec2
    dt: float
    g: DiffusionPair

    def __post_init__(self):
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise ValueError(f"drift rate c must be positive, got {self.c}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        t1, t2 = self.theta
        if not (t1 >= 0.0 and t2 >= 0.0):
            raise ValueError(f"theta must lie in the quadrant, got {self.theta}")
        object.__setattr__(self, "theta", (float(t1), float(t2)))
        if self.g.growth is not None and self.g.growth.a >= self.c:
            raise ValueError(
                f"growth class a={self.g.growth.a} requires a < c={self.c}: "
                "the equilibrium has no integrable envelope otherwise"
            )


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted-equal sample cloud approximating the equilibrium distribution."""

    points: np.ndarray  # (n, 2), quadrant
    params: SdeParams
    burn_in: float
    thin: float
    stream: RngStream

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must be a nonempty (n, 2) array, got {pts.shape}")
        if np.any(pts < 0.0) or not np.all(np.isfinite(pts)):
            raise ValueError("sample points must be finite and in the quadrant")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


def default_burn_in(c: float, tol: float = math.exp(-6.0)) -> float:
    """Time for the mean-reversion envelope exp(-c t) to fall below tol."""
    if not (c > 0.0):
        raise ValueError(f"c must be positive, got {c}")
    if not (0.0 < tol < 1.0):
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    return math.log(1.0 / tol) / c


def default_thin(c: float) -> float:
    """Thinning interval keeping sample autocorrelation near exp(-1)."""
    return 1.0 / c


def step(x: Vec2, p: SdeParams, noise: Vec2) -> Vec2:
    """One explicit Euler step with truncation at the axes.

    x_i' = max(0, x_i + c (theta_i - x_i) dt + sqrt(2 g_i(x) dt) z_i).
    """
    x1, x2 = float(x[0]), float(x[1])
    g1, g2 = p.g.evaluate((x1, x2))
    z1, z2 = noise
    th1, th2 = p.theta
    y1 = x1 + p.c * (th1 - x1) * p.dt + math.sqrt(2.0 * g1 * p.dt) * z1
    y2 = x2 + p.c * (th2 - x2) * p.dt + math.sqrt(2.0 * g2 * p.dt) * z2
    return (max(y1, 0.0), max(y2, 0.0))


def _check_start(x0: Vec2, p: SdeParams) -> None:
    th1, th2 = p.theta
    d12 = BoundaryProperty.D12 in (p.g.bp1, p.g.bp2)
    if d12 and th1 > 0.0 and th2 > 0.0 and x0[0] == 0.0 and x0[1] == 0.0:
        raise ForbiddenStartError(
            "start (0, 0) with an interior center is not well posed when a "
            "component vanishes like x1*x2 near the axes"
        )


def _kernel_args(pair: DiffusionPair):
    """(kind, family array, grid table, m) for the compiled kernels."""
    if pair.family is not None:
        grid, m = _kernels.empty_grid_args()
        return _kernels.KIND_FAMILY, pair.family.as_array(), grid, m
    if pair.grid_backing is not None:
        gb = pair.grid_backing
        return _kernels.KIND_GRID, _kernels.empty_family_args(), gb.norm_values, gb.m
    return None


def simulate_path(x0: Vec2, p: SdeParams, T: float, rng: RngStream) -> np.ndarray:
    """Trajectory on the macro grid: ceil(T/dt) steps, so ceil(T/dt)+1 states.

    Deterministic given the stream address. States are clamped to the
    quadrant; the integrator keeps axis absorption exact (a component started
    at 0 with its center coordinate 0 stays 0).
    """
    if T < p.dt:
        raise ValueError(f"T={T} must be at least one step dt={p.dt}")
    _check_start(x0, p)
    n_steps = int(math.ceil(T / p.dt - 1e-12))
    gen = rng.generator()
    x1, x2 = float(x0[0]), float(x0[1])
    fast = _kernel_args(p.g)
    th1, th2 = p.theta
    if fast is not None:
        kind, fam, grid, m = fast
        body = _kernels.equilibrium_samples(
            gen, kind, fam, grid, m,
            p.c, th1, th2, x1, x2, p.dt, 0, n_steps, 1,
        )
    else:
        def g_eval(u1, u2):
            return p.g.evaluate((u1, u2))

        body = _kernels.py_equilibrium_samples(
            gen, g_eval, p.c, th1, th2, x1, x2, p.dt, 0, n_steps, 1
        )
    out = np.empty((n_steps + 1, 2))
    out[0, 0] = max(x1, 0.0)
    out[0, 1] = max(x2, 0.0)
    out[1:] = body
    return out


def sample_equilibrium(
    p: SdeParams,
    n: int,
    burn_in: Optional[float] = None,
    thin: Optional[float] = None,
    rng: RngStream = RngStream(0),
) -> EmpiricalMeasure:
    """One long chain from theta + (1, 1); record every ``thin`` time units.

    The interior start avoids the ill-posed corner start and biases decay like
    exp(-c t) over the burn-in. Sample means of X_i approximate theta_i within
    Monte Carlo error.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    if burn_in is None:
        burn_in = default_burn_in(p.c)
    if thin is None:
        thin = default_thin(p.c)
    if burn_in < 0.0:
        raise ValueError(f"burn_in must be >= 0, got {burn_in}")
    if thin <= 0.0:
        raise ValueError(f"thin must be > 0, got {thin}")
    th1, th2 = p.theta
    x1, x2 = th1 + 1.0, th2 + 1.0
    burn_steps = int(round(burn_in / p.dt))
    thin_steps = max(1, int(round(thin / p.dt)))
    gen = rng.generator()
    fast = _kernel_args(p.g)
    if fast is not None:
        kind, fam, grid, m = fast
        pts = _kernels.equilibrium_samples(
            gen, kind, fam, grid, m,
            p.c, th1, th2, x1, x2, p.dt, burn_steps, n, thin_steps,
        )
    else:
        def g_eval(u1, u2):
            return p.g.evaluate((u1, u2))

        pts = _kernels.py_equilibrium_samples(
            gen, g_eval, p.c, th1, th2, x1, x2, p.dt, burn_steps, n, thin_steps
        )
    return EmpiricalMeasure(
        points=pts, params=p, burn_in=float(burn_in), thin=float(thin), stream=rng
    )


def batch_means_se(values: np.ndarray) -> float:
    """Standard error of the mean of an autocorrelated series by batch means.

    Uses floor(sqrt(n)) batches; thinned equilibrium samples keep enough
    batches for the variance of batch means to stabilize.
    """
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n < 4:
        return float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    n_batches = int(math.floor(math.sqrt(n)))
    batch = n // n_batches
    used = n_batches * batch
    means = v[:used].reshape(n_batches, batch).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
