"""Cutoff resolvent norms ||chi (P(h) - z)^-1 chi|| and their sweeps over h and z."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline

from ..config import load_threads
from ..domain.warp import PotentialProfile, WarpSpec, effective_potential, full_potential, profile_from_samples
from ..errors import ConfigError, SemiresError
from ..logging import get_logger
from .discretize import (
    CapProfile,
    DiscreteOperator,
    Grid,
    GridError,
    NearSingularError,
    build_operator,
    resolution_spacing,
    solve,
    solve_adjoint,
)

LOG = get_logger("resolvent")

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 200
DEFAULT_SEED = 42
BOUNDARY_DROP = 0.2
SOURCE_REACH = 200.0


@dataclass(frozen=True)
class CutoffSpec:
    center: float = 0.0
    inner_radius: float = 1.0
    taper_width: float = 0.5

    def __post_init__(self) -> None:
        if self.inner_radius < 0 or self.taper_width < 0:
            raise ConfigError("cutoff inner_radius and taper_width must be >= 0")

    @property
    def support_radius(self) -> float:
        return self.inner_radius + self.taper_width

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return interval_cutoff(x, self.center - self.inner_radius, self.center + self.inner_radius, self.taper_width)

    def enlarged(self, by: float) -> "CutoffSpec":
        return CutoffSpec(self.center, self.inner_radius + by, self.taper_width)

    @classmethod
    def around(cls, x_left: float, x_right: float, margin: float = 1.0, taper: float = 0.5) -> "CutoffSpec":
        """Default cutoff for a component: inner radius = component width + margin."""
        return cls(0.5 * (x_left + x_right), (x_right - x_left) + margin, taper)


def interval_cutoff(x: np.ndarray, left: float, right: float, taper: float) -> np.ndarray:
    """1 on [left, right], cosine taper to 0 over `taper` on each side.

    A degenerate interval with zero taper is identically 0.
    """
    x = np.asarray(x, dtype=float)
    if right < left:
        raise ConfigError(f"cutoff interval is empty: [{left}, {right}]")
    if right == left and taper <= 0:
        return np.zeros_like(x)
    dist = np.maximum(left - x, 0.0) + np.maximum(x - right, 0.0)
    if taper <= 0:
        return (dist == 0).astype(float)
    t = np.clip(dist / taper, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


@dataclass(frozen=True)
class ResolventSample:
    h: float
    z: float
    norm: float
    iterations: int
    converged: bool
    grid_n: int = 0
    cap_eta: float = 0.0
    blowup: bool = False
    error: Optional[str] = None

    CSV_COLUMNS = ("h", "z", "norm", "iterations", "converged", "grid_n", "cap_eta")

    def to_row(self) -> Dict[str, object]:
        return {
            "h": self.h,
            "z": self.z,
            "norm": self.norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "grid_n": self.grid_n,
            "cap_eta": self.cap_eta,
        }


Cutoff = Union[CutoffSpec, np.ndarray]


def _weights(chi: Cutoff, grid: Grid) -> np.ndarray:
    if isinstance(chi, CutoffSpec):
        return chi.evaluate(grid.points())
    w = np.asarray(chi, dtype=float)
    if w.shape != (grid.n,):
        raise GridError(f"cutoff has {w.shape} samples, grid has {grid.n}")
    return w


def cutoff_resolvent_norm(
    op: DiscreteOperator,
    z: float,
    chi: Cutoff,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
) -> ResolventSample:
    """Largest singular value of M = chi (op - z)^-1 chi by power iteration on M*M.

    Each step costs one solve and one adjoint solve. The estimate ||M v|| with
    ||v|| = 1 increases monotonically towards the top singular value; the run
    stops when it changes by less than tol relatively.
    """
    w = _weights(chi, op.grid)
    base = dict(h=op.h, z=float(z), grid_n=op.n, cap_eta=op.cap.strength)
    if not np.any(w):
        return ResolventSample(norm=0.0, iterations=0, converged=True, **base)
    if op.cap.strength > 0 and np.any((w > 0) & (op.cap.absorber(op.grid) > 0)):
        raise GridError("cutoff support reaches into the absorbing layer")

    rng = np.random.default_rng(seed)
    v = (rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)) * w
    v /= np.linalg.norm(v)
    prev = 0.0
    sigma = 0.0
    for it in range(1, max_iter + 1):
        try:
            y = w * solve(op, z, w * v)
            t = w * solve_adjoint(op, z, w * y)
        except NearSingularError as e:
            LOG.warning(f"h={op.h:.4g} z={z:.6g}: {e}; reporting blowup")
            return ResolventSample(norm=math.inf, iterations=it, converged=True, blowup=True, error=str(e), **base)
        sigma = float(np.linalg.norm(y))
        tn = float(np.linalg.norm(t))
        if tn == 0.0:
            return ResolventSample(norm=0.0, iterations=it, converged=True, **base)
        v = t / tn
        if it > 1 and abs(sigma - prev) < tol * sigma:
            LOG.debug(f"h={op.h:.4g} z={z:.6g}: norm {sigma:.6g} after {it} iteration(s)")
            return ResolventSample(norm=sigma, iterations=it, converged=True, **base)
        prev = sigma
    LOG.warning(f"h={op.h:.4g} z={z:.6g}: power iteration not converged after {max_iter} iterations")
    return ResolventSample(norm=sigma, iterations=max_iter, converged=False, **base)


# ---------------------------------------------------------------------------
# Sources and domains
# ---------------------------------------------------------------------------


def profile_on(source, grid: Grid):
    """Potential profile of `source` (WarpSpec or PotentialProfile) on `grid`."""
    if isinstance(source, WarpSpec):
        return effective_potential(source, grid)
    if isinstance(source, PotentialProfile):
        src = source.grid
        if src == grid:
            return source
        if grid.x_min < src.x_min - 1e-12 or grid.x_max > src.x_max + 1e-12:
            raise GridError(f"grid [{grid.x_min}, {grid.x_max}] exceeds profile range [{src.x_min}, {src.x_max}]")
        x = grid.points()
        v0 = CubicSpline(source.x, source.v0)(x)
        v1 = CubicSpline(source.x, source.v1)(x)
        return profile_from_samples(grid, v0, v1)
    raise ConfigError(f"unsupported potential source {type(source).__name__}")


def _source_reach(source) -> float:
    if isinstance(source, PotentialProfile):
        return min(-source.grid.x_min, source.grid.x_max)
    return SOURCE_REACH


def domain_half_width(source, z: float, chi: Optional[CutoffSpec], min_half_width: float = 0.0) -> float:
    """Half-width X of the CAP-free window.

    X is the smallest value with V0 <= z - 0.2*scale on all of |x| >= X (so the
    classically allowed region reaches the absorbing layer) and at least the
    cutoff support plus one.
    """
    reach = _source_reach(source)
    coarse_grid = Grid.symmetric(reach, 8001)
    prof = profile_on(source, coarse_grid)
    x, v0 = prof.x, prof.v0
    scale = max(prof.scale(), abs(z), 1e-12)
    floor = max(min_half_width, 1.0)
    if chi is not None:
        floor = max(floor, abs(chi.center) + chi.support_radius + 1.0)
    ok = v0 <= z - BOUNDARY_DROP * scale
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return floor
    x_bad = float(np.max(np.abs(x[bad])))
    if x_bad >= reach - 2 * coarse_grid.delta:
        LOG.debug(f"V0 never drops below z - {BOUNDARY_DROP}*scale within |x| <= {reach}; no outgoing region")
        return floor
    return max(floor, x_bad + coarse_grid.delta)


OperatorBuilder = Callable[[float], DiscreteOperator]


def operator_builder(
    source,
    z_ref: float,
    chi: Optional[CutoffSpec],
    cap: Optional[CapProfile] = None,
    half_width: Optional[float] = None,
    min_points: int = 64,
) -> OperatorBuilder:
    """h -> DiscreteOperator on a domain fixed once and a grid sized by the resolution rule."""
    cap = cap or CapProfile()
    X = half_width if half_width is not None else domain_half_width(source, z_ref, chi)
    L = 2.0 * X / (1.0 - 2.0 * cap.width_fraction)
    L = min(L, 2.0 * _source_reach(source))
    coarse = profile_on(source, Grid.symmetric(L / 2.0, 4001))
    v_min = float(np.min(coarse.v0))
    LOG.debug(f"operator domain: |x| <= {L / 2.0:.4g} (CAP-free |x| <= {X:.4g}), min V0 {v_min:.4g}")

    def build(h: float) -> DiscreteOperator:
        grid = Grid.with_spacing(-L / 2.0, L / 2.0, resolution_spacing(h, z_ref, v_min), min_points=min_points)
        prof = profile_on(source, grid)
        return build_operator(full_potential(prof, h), h, grid, cap)

    return build


def _check_h_list(h_list: Sequence[float]) -> List[float]:
    hs = [float(h) for h in h_list]
    if not hs:
        raise ConfigError("h_list is empty")
    if any(h <= 0 for h in hs):
        raise ConfigError("h_list must be positive")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("h_list must be decreasing")
    return hs


def h_sweep(
    source,
    z: float,
    h_list: Sequence[float],
    chi: CutoffSpec,
    cap: Optional[CapProfile] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    threads: Optional[int] = None,
    half_width: Optional[float] = None,
) -> List[ResolventSample]:
    """One cutoff resolvent sample per h at fixed z and chi, in the order of h_list.

    A failure at one h is recorded in that sample and does not stop the sweep.
    """
    hs = _check_h_list(h_list)
    build = operator_builder(source, z, chi, cap, half_width=half_width)

    def one(h: float) -> ResolventSample:
        try:
            op = build(h)
            s = cutoff_resolvent_norm(op, z, chi, tol=tol, max_iter=max_iter, seed=seed)
        except (SemiresError, ValueError, MemoryError) as e:
            LOG.error(f"h={h:.4g}: {e}")
            return ResolventSample(h=h, z=float(z), norm=math.nan, iterations=0, converged=False, error=str(e))
        LOG.info(f"h={h:.5g} z={z:.6g}: norm={s.norm:.6g} (n={s.grid_n}, {s.iterations} it)")
        return s

    workers = min(threads or load_threads(), len(hs))
    if workers <= 1:
        return [one(h) for h in hs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, hs))


def energy_scan(
    builder: Union[OperatorBuilder, DiscreteOperator],
    h: float,
    z_list: Sequence[float],
    chi: Cutoff,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    threads: Optional[int] = None,
) -> List[ResolventSample]:
    """Norms at fixed h across energies z; the operator is built once and shared.

    A failure at one z is recorded in that sample like in h_sweep.
    """
    op = builder if isinstance(builder, DiscreteOperator) else builder(h)
    zs = [float(z) for z in z_list]
    if not zs:
        raise ConfigError("z_list is empty")

    def one(z: float) -> ResolventSample:
        try:
            return cutoff_resolvent_norm(op, z, chi, tol=tol, max_iter=max_iter, seed=seed)
        except (SemiresError, ValueError, MemoryError) as e:
            LOG.error(f"h={h:.4g} z={z:.6g}: {e}")
            return ResolventSample(h=op.h, z=z, norm=math.nan, iterations=0, converged=False, grid_n=op.n, cap_eta=op.cap.strength, error=str(e))

    workers = min(threads or load_threads(), len(zs))
    if workers <= 1:
        return [one(z) for z in zs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, zs))


def peak_sample(samples: Sequence[ResolventSample]) -> ResolventSample:
    """Sample with the largest norm (blowups first); ties keep the earliest."""
    if not samples:
        raise ConfigError("no samples to scan")
    best = samples[0]
    for s in samples[1:]:
        if (s.norm if not math.isnan(s.norm) else -1.0) > (best.norm if not math.isnan(best.norm) else -1.0):
            best = s
    return best
