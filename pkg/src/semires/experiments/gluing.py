"""Propagation estimate in one dimension and the worst-of gluing check.

`propagation_inequality_check` tests the elementary bound

    ||u||_{L2(a, a+1)} <= sqrt(2/K) ||u||_{L2(b, b+K)} + sqrt(2) h^-1 (b+K-a)^{1/2} ||h u'||_{L2(a, b+K)}

on band-limited test functions. `glued_vs_local` compares the cutoff resolvent
of a profile with several unstable components to the resolvents of surgery
potentials that keep one component each and fall off monotonically elsewhere.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from ..config import load_threads
from ..domain.constants import KIND_LOCAL_MIN, VERDICT_CONSISTENT, VERDICT_INCONSISTENT
from ..domain.trapping import CriticalComponent, TrappingReport, classify_profile
from ..domain.warp import PotentialProfile, full_potential
from ..errors import ConfigError, SemiresError
from ..logging import get_logger
from ..numerics.discretize import CapProfile, Grid, GridError, build_operator, resolution_spacing
from ..numerics.resolvent import (
    DEFAULT_MAX_ITER,
    DEFAULT_SEED,
    DEFAULT_TOL,
    CutoffSpec,
    ResolventSample,
    cutoff_resolvent_norm,
    domain_half_width,
    profile_on,
)

LOG = get_logger("gluing")

POINTS_PER_WAVELENGTH = 64
QUADRATURE_SLACK = 1e-6
SURGERY_MARGIN = 1.0
TAIL_LENGTH = 2.0
RATIO_BAND = (1.0 / 3.0, 3.0)


class GluingError(SemiresError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Propagation inequality
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PropagationCase:
    """Test function u(x) = sum_j c_j exp(i xi_j x / h) on [a, b+K]."""

    a: float
    b: float
    K: float
    h: float
    amplitudes: np.ndarray
    frequencies: np.ndarray
    grid: Grid = field(init=False)

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise GluingError(f"need a < b, got a={self.a}, b={self.b}")
        if not (self.K > 0 and self.h > 0):
            raise GluingError("K and h must be positive")
        if self.a + 1.0 > self.b + self.K:
            raise GluingError("window (a, a+1) must lie inside [a, b+K]")
        amps = np.asarray(self.amplitudes, dtype=complex)
        freqs = np.asarray(self.frequencies, dtype=float)
        if amps.shape != freqs.shape:
            raise GluingError("amplitudes and frequencies must have the same length")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "grid", Grid.with_spacing(self.a, self.b + self.K, self.max_spacing))

    @property
    def max_spacing(self) -> float:
        """Spacing resolving the fastest mode with 64 points per wavelength."""
        xi = float(np.max(np.abs(self.frequencies), initial=0.0))
        if xi == 0.0:
            return (self.b + self.K - self.a) / 64.0
        return 2.0 * math.pi * self.h / (xi * POINTS_PER_WAVELENGTH)

    @property
    def u(self) -> np.ndarray:
        return self.evaluate(self.grid.points())

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        phase = np.exp(1j * np.outer(np.asarray(x, dtype=float), self.frequencies) / self.h)
        return phase @ self.amplitudes

    def derivative(self, x: np.ndarray) -> np.ndarray:
        phase = np.exp(1j * np.outer(np.asarray(x, dtype=float), self.frequencies) / self.h)
        return phase @ (self.amplitudes * 1j * self.frequencies / self.h)


def synthesize_case(a: float, b: float, K: float, h: float, rng: np.random.Generator, n_modes: int = 8, xi_max: float = 2.0) -> PropagationCase:
    amps = (rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)) / math.sqrt(2.0 * n_modes)
    freqs = rng.uniform(-xi_max, xi_max, n_modes)
    return PropagationCase(a=a, b=b, K=K, h=h, amplitudes=amps, frequencies=freqs)


def random_cases(n: int = 200, seed: int = DEFAULT_SEED) -> List[PropagationCase]:
    """Fixed-seed family of cases with varied (a, b, K, h)."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        a = float(rng.uniform(-2.0, 0.0))
        b = a + float(rng.uniform(0.5, 3.0))
        K = float(rng.uniform(0.5, 4.0))
        h = float(rng.choice([0.05, 0.1, 0.2]))
        cases.append(synthesize_case(a, b, K, h, rng))
    return cases


def _l2(case: PropagationCase, lo: float, hi: float, derivative: bool = False) -> float:
    n = max(int(math.ceil((hi - lo) / case.max_spacing)) + 1, 33)
    if (hi - lo) / (n - 1) > case.max_spacing * (1.0 + 1e-12):
        raise GridError(f"quadrature grid on [{lo}, {hi}] too coarse for the synthesis bandwidth")
    x = np.linspace(lo, hi, n)
    f = case.derivative(x) if derivative else case.evaluate(x)
    return float(math.sqrt(trapezoid(np.abs(f) ** 2, x)))


def propagation_inequality_check(case: PropagationCase) -> Dict[str, object]:
    lhs = _l2(case, case.a, case.a + 1.0)
    far = _l2(case, case.b, case.b + case.K)
    flow = case.h * _l2(case, case.a, case.b + case.K, derivative=True)
    rhs = math.sqrt(2.0 / case.K) * far + math.sqrt(2.0) / case.h * math.sqrt(case.b + case.K - case.a) * flow
    holds = lhs <= rhs * (1.0 + QUADRATURE_SLACK)
    if not holds:
        LOG.error(f"propagation inequality fails: a={case.a:.4g} b={case.b:.4g} K={case.K:.4g} h={case.h:.4g} lhs={lhs:.6g} rhs={rhs:.6g}")
    return {"lhs": lhs, "rhs": rhs, "holds": bool(holds), "slack": rhs - lhs}


# ---------------------------------------------------------------------------
# Surgery and worst-of gluing
# ---------------------------------------------------------------------------


def _tail(value: float, slope: float, s: np.ndarray) -> np.ndarray:
    """Decaying continuation away from the window, starting at `value`.

    A falling edge keeps its slope (C^1 Gaussian-damped exponential); a flat or
    rising edge only matches the value and decays from there.
    """
    if slope < 0 and value > 0:
        kappa = -slope / value
        return value * np.exp(-kappa * s - (s / TAIL_LENGTH) ** 2)
    return value * np.exp(-((s / TAIL_LENGTH) ** 2))


def surgery_potential(x: np.ndarray, V: np.ndarray, window: Tuple[float, float]) -> np.ndarray:
    """V on the window, continued outside with matched value and slope."""
    lo, hi = window
    if not (x[0] < lo < hi < x[-1]):
        raise GluingError(f"surgery window [{lo:.4g}, {hi:.4g}] must lie inside the grid")
    spline = CubicSpline(x, V)
    out = np.array(V, dtype=float, copy=True)
    right = x > hi
    out[right] = _tail(float(spline(hi)), float(spline(hi, 1)), x[right] - hi)
    left = x < lo
    # mirror: slope measured in the outward direction
    out[left] = _tail(float(spline(lo)), -float(spline(lo, 1)), lo - x[left])
    return out


def surgery_windows(components: Sequence[CriticalComponent], margin: float = SURGERY_MARGIN) -> List[Tuple[float, float]]:
    windows = [(c.x_left - margin, c.x_right + margin) for c in components]
    order = sorted(range(len(windows)), key=lambda i: windows[i][0])
    for i, j in zip(order, order[1:]):
        if windows[j][0] < windows[i][1]:
            ci, cj = components[i], components[j]
            raise GluingError(
                f"surgery windows around x={ci.center:.4g} and x={cj.center:.4g} overlap; "
                f"components must be separated by >= {2.0 * margin:g}"
            )
    return windows


@dataclass(frozen=True)
class GluingReport:
    components: Tuple[CriticalComponent, ...]
    energies: Tuple[float, ...]
    global_samples: Tuple[ResolventSample, ...]
    local_samples: Tuple[ResolventSample, ...]
    h: float

    @property
    def global_norm(self) -> float:
        return max(s.norm for s in self.global_samples)

    @property
    def local_norms(self) -> List[float]:
        return [s.norm for s in self.local_samples]

    @property
    def ratio(self) -> float:
        top = max(self.local_norms)
        return self.global_norm / top if top > 0 else math.inf

    @property
    def dominant(self) -> int:
        """Index of the component whose surgery gives the largest local norm."""
        return int(np.argmax(self.local_norms))

    @property
    def verdict(self) -> str:
        lo, hi = RATIO_BAND
        return VERDICT_CONSISTENT if lo <= self.ratio <= hi else VERDICT_INCONSISTENT

    def to_dict(self) -> Dict[str, object]:
        return {
            "h": self.h,
            "global_norm": self.global_norm,
            "local": [
                {"component": c.to_dict(), "energy": e, "norm": s.norm}
                for c, e, s in zip(self.components, self.energies, self.local_samples)
            ],
            "ratio": self.ratio,
            "verdict": self.verdict,
        }


def glued_vs_local(
    profile: PotentialProfile,
    h: float,
    z: Optional[float] = None,
    chi_global: Optional[CutoffSpec] = None,
    report: Optional[TrappingReport] = None,
    cap: Optional[CapProfile] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    threads: Optional[int] = None,
) -> GluingReport:
    """Global cutoff resolvent norm against the per-component surgery norms.

    Without z each component is measured at its own critical value and the
    global norm is the largest over those energies. All operators share one
    grid, one cutoff and one absorber.
    """
    report = report or classify_profile(profile)
    comps = list(report.components)
    if not comps:
        raise GluingError("profile has no critical components to glue")
    if any(c.kind == KIND_LOCAL_MIN for c in comps):
        raise GluingError("gluing needs unstable components only; the profile has a local minimum")
    windows = surgery_windows(comps)
    energies = [float(z) if z is not None else c.critical_value for c in comps]
    if chi_global is None:
        chi_global = CutoffSpec.around(min(w[0] for w in windows), max(w[1] for w in windows), margin=0.0)
    cap = cap or CapProfile()

    X = max(domain_half_width(profile, e, chi_global) for e in energies)
    half = X / (1.0 - 2.0 * cap.width_fraction)
    half = min(half, -profile.grid.x_min, profile.grid.x_max)
    lo_w, hi_w = cap.interior_window(Grid(-half, half, 16))
    if min(w[0] for w in windows) < lo_w or max(w[1] for w in windows) > hi_w:
        raise ConfigError("surgery windows reach into the absorbing layer; widen the profile grid")
    v_min = float(np.min(profile.v0))
    grid = Grid.with_spacing(-half, half, resolution_spacing(h, max(energies), v_min), min_points=64)
    V = full_potential(profile_on(profile, grid), h)
    x = grid.points()
    base = build_operator(V, h, grid, cap)
    LOG.info(f"gluing {len(comps)} component(s) at h={h:.4g} on n={grid.n}")

    global_samples = [cutoff_resolvent_norm(base, e, chi_global, tol=tol, max_iter=max_iter, seed=seed) for e in energies]

    def local(j: int) -> ResolventSample:
        op = build_operator(surgery_potential(x, V, windows[j]), h, grid, cap)
        s = cutoff_resolvent_norm(op, energies[j], chi_global, tol=tol, max_iter=max_iter, seed=seed)
        LOG.debug(f"surgery around x={comps[j].center:.4g}: norm {s.norm:.6g}")
        return s

    workers = min(threads or load_threads(), len(comps))
    if workers <= 1:
        local_samples = [local(j) for j in range(len(comps))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            local_samples = list(pool.map(local, range(len(comps))))
    out = GluingReport(
        components=tuple(comps),
        energies=tuple(energies),
        global_samples=tuple(global_samples),
        local_samples=tuple(local_samples),
        h=float(h),
    )
    LOG.info(f"global {out.global_norm:.6g}, local max {max(out.local_norms):.6g}, ratio {out.ratio:.4g}")
    return out
