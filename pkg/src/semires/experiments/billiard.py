"""Partially rectangular billiards reduced to one-dimensional mode problems.

The billiard boundary is the graph of Y = pi + r over the x axis, with r = 0
on the rectangle |x| <= a. Separating the transverse eigenfunctions e_k with
-e_k'' = beta_k^2 e_k leaves, per mode, P(h) = -h^2 d^2/dx^2 + Y^-2 with
h = 1/beta_k. Outward wings (r' > 0 away from the rectangle) turn the
rectangle into a cylinder-type maximum of Y^-2 at the level pi^-2.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import load_threads
from ..domain.constants import (
    BC_CHOICES,
    BC_DIRICHLET,
    VERDICT_CONSISTENT,
    VERDICT_INCONCLUSIVE,
    VERDICT_INCONSISTENT,
    WING_CHOICES,
    WING_FLAT,
    WING_GEVREY,
    WING_POWER,
)
from ..domain.warp import PotentialProfile
from ..errors import ConfigError, SemiresError
from ..logging import get_logger
from ..numerics.discretize import CapProfile, DiscreteOperator, Grid
from ..numerics.fit import FitError, ScalingFitResult, fit_power
from ..numerics.resolvent import (
    DEFAULT_MAX_ITER,
    DEFAULT_SEED,
    DEFAULT_TOL,
    CutoffSpec,
    ResolventSample,
    cutoff_resolvent_norm,
    energy_scan,
    operator_builder,
    peak_sample,
)

LOG = get_logger("billiard")

TRAPPED_ENERGY = 1.0 / math.pi**2
SCAN_OFFSETS = tuple(float(s) for s in np.linspace(-0.02, 0.02, 9))
REGIME_SHIFT = 0.2
GAMMA_CEILING = 2.3
WING_REACH = 12.0
PROFILE_SPACING = 2e-3


class PreconditionError(SemiresError, ValueError):
    pass


@dataclass(frozen=True)
class WingSpec:
    """Shape of r on one side of the rectangle, as a function of d = |x| - a >= 0.

    power: c d^q; gevrey: c exp(-d^-p); flat: 0. An inward wing saturates as
    r = -(pi/2)(1 - exp(-g)) so that Y stays above pi/2.
    """

    kind: str = WING_POWER
    c: float = 1.0
    q: float = 2.0
    p: float = 1.0
    outward: bool = True

    def __post_init__(self) -> None:
        if self.kind not in WING_CHOICES:
            raise ConfigError(f"unknown wing kind {self.kind!r}; expected one of {', '.join(WING_CHOICES)}")
        if self.kind != WING_FLAT and not self.c > 0:
            raise ConfigError(f"wing amplitude c must be positive, got {self.c}")
        if self.kind == WING_POWER and not self.q >= 1:
            raise ConfigError(f"power wing exponent q must be >= 1, got {self.q}")
        if self.kind == WING_GEVREY and not self.p > 0:
            raise ConfigError(f"gevrey wing exponent p must be positive, got {self.p}")

    @property
    def is_outward(self) -> bool:
        return self.kind != WING_FLAT and self.outward

    def shape(self, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """g, dg/dd, d2g/dd2 on d >= 0 (zero at d = 0)."""
        d = np.asarray(d, dtype=float)
        g = np.zeros_like(d)
        g1 = np.zeros_like(d)
        g2 = np.zeros_like(d)
        pos = d > 0
        if self.kind == WING_FLAT or not np.any(pos):
            return g, g1, g2
        t = d[pos]
        if self.kind == WING_POWER:
            q, c = self.q, self.c
            g[pos] = c * t**q
            g1[pos] = c * q * t ** (q - 1.0)
            g2[pos] = c * q * (q - 1.0) * t ** (q - 2.0)
        else:
            p = self.p
            e = self.c * np.exp(-(t ** (-p)))
            live = e > 0
            t, e = t[live], e[live]
            idx = np.flatnonzero(pos)[live]
            g[idx] = e
            g1[idx] = e * p * t ** (-p - 1.0)
            g2[idx] = e * (p * p * t ** (-2.0 * p - 2.0) - p * (p + 1.0) * t ** (-p - 2.0))
        return g, g1, g2

    def r(self, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """r, dr/dd, d2r/dd2."""
        g, g1, g2 = self.shape(d)
        if self.outward:
            return g, g1, g2
        half = 0.5 * math.pi
        e = np.exp(-g)
        return -half * (1.0 - e), -half * e * g1, -half * e * (g2 - g1 * g1)


@dataclass(frozen=True)
class BoundaryProfile:
    a: float
    left: WingSpec = field(default_factory=WingSpec)
    right: WingSpec = field(default_factory=WingSpec)
    bc: str = BC_DIRICHLET

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ConfigError(f"rectangle half-width a must be positive, got {self.a}")
        if self.bc not in BC_CHOICES:
            raise ConfigError(f"unknown boundary condition {self.bc!r}; expected one of {', '.join(BC_CHOICES)}")

    @classmethod
    def symmetric(cls, a: float, wing: WingSpec, bc: str = BC_DIRICHLET) -> "BoundaryProfile":
        return cls(a=a, left=wing, right=wing, bc=bc)

    @classmethod
    def rectangle(cls, a: float, bc: str = BC_DIRICHLET) -> "BoundaryProfile":
        flat = WingSpec(kind=WING_FLAT)
        return cls(a=a, left=flat, right=flat, bc=bc)

    @property
    def opens_outward(self) -> bool:
        return self.left.is_outward or self.right.is_outward

    def graph(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Y = pi + r and its first two derivatives."""
        x = np.asarray(x, dtype=float)
        Y = np.full_like(x, math.pi)
        Y1 = np.zeros_like(x)
        Y2 = np.zeros_like(x)
        right = x > self.a
        r, r1, r2 = self.right.r(x[right] - self.a)
        Y[right] += r
        Y1[right] = r1
        Y2[right] = r2
        left = x < -self.a
        r, r1, r2 = self.left.r(-x[left] - self.a)
        Y[left] += r
        Y1[left] = -r1
        Y2[left] = r2
        return Y, Y1, Y2

    def mode_potential(self, x: np.ndarray) -> np.ndarray:
        return self.graph(x)[0] ** -2

    def profile(self, grid: Grid) -> PotentialProfile:
        """V = Y^-2 with closed-form derivatives and no V1 term."""
        Y, Y1, Y2 = self.graph(grid.points())
        inv = 1.0 / Y
        v0 = inv**2
        v0p = -2.0 * Y1 * inv**3
        v0pp = 6.0 * Y1**2 * inv**4 - 2.0 * Y2 * inv**3
        return PotentialProfile(grid=grid, v0=v0, v1=np.zeros_like(v0), v0p=v0p, v0pp=v0pp, exact_derivatives=True)

    def wide_profile(self, reach: float = WING_REACH, spacing: float = PROFILE_SPACING) -> PotentialProfile:
        half = self.a + reach
        return self.profile(Grid.symmetric(half, int(round(2.0 * half / spacing)) + 1))

    def default_cutoff(self) -> CutoffSpec:
        """1 over the rectangle plus one unit of each wing."""
        return CutoffSpec(center=0.0, inner_radius=self.a + 1.0, taper_width=0.5)


@dataclass(frozen=True)
class ModeProblem:
    k: int
    beta_k: float
    h: float
    z: float
    e_tilde: float = 0.0

    @classmethod
    def from_lambda(cls, k: int, beta_k: float, lam: float, e_lambda: float = 0.0) -> "ModeProblem":
        """h = 1/beta_k, z = h^2 lambda^2, E~ = h^2 E(lambda)."""
        if not beta_k > 0:
            raise PreconditionError(f"mode k={k} has beta_k = {beta_k}; the constant mode has no semiclassical parameter")
        h = 1.0 / beta_k
        return cls(k=k, beta_k=beta_k, h=h, z=h * h * lam * lam, e_tilde=h * h * e_lambda)


def transverse_spectrum(bc: str, k_max: int) -> List[float]:
    """beta_k for -d^2/dy^2 on [-1, 1], k = 1..k_max."""
    if bc not in BC_CHOICES:
        raise ConfigError(f"unknown boundary condition {bc!r}")
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    ks = np.arange(1, k_max + 1, dtype=float)
    if bc == BC_DIRICHLET:
        return list(ks * math.pi / 2.0)
    return list((ks - 1.0) * math.pi / 2.0)


def beta_for(bc: str, k: int) -> float:
    return transverse_spectrum(bc, k)[-1]


def default_lambda_rule(beta_k: float, s: float) -> float:
    """lambda with z = h^2 lambda^2 = pi^-2 (1 + s)."""
    return beta_k * math.sqrt(TRAPPED_ENERGY * (1.0 + s))


def mode_operator(
    profile: BoundaryProfile,
    k: int,
    z_ref: Optional[float] = None,
    chi: Optional[CutoffSpec] = None,
    cap: Optional[CapProfile] = None,
) -> DiscreteOperator:
    """P(h) = -h^2 d^2/dx^2 + Y^-2 for mode k, with the absorber past the wings."""
    beta = beta_for(profile.bc, k)
    if not beta > 0:
        raise PreconditionError(f"mode k={k} ({profile.bc}) has beta_k = 0 and no mode problem")
    z_ref = TRAPPED_ENERGY * (1.0 + max(SCAN_OFFSETS)) if z_ref is None else z_ref
    build = operator_builder(profile.wide_profile(), z_ref, chi or profile.default_cutoff(), cap)
    return build(1.0 / beta)


def _modes(profile: BoundaryProfile, k_list: Sequence[int]) -> List[Tuple[int, float]]:
    ks = sorted({int(k) for k in k_list})
    if not ks:
        raise ConfigError("k_list is empty")
    out = []
    for k in ks:
        beta = beta_for(profile.bc, k)
        if beta > 0:
            out.append((k, beta))
        else:
            LOG.info(f"skipping mode k={k}: beta_k = 0")
    return out


@dataclass(frozen=True)
class ModeResult:
    problem: ModeProblem
    sample: ResolventSample

    CSV_COLUMNS = ("k", "beta_k", "h", "z_peak", "norm")

    def to_row(self) -> Dict[str, object]:
        return {
            "k": self.problem.k,
            "beta_k": self.problem.beta_k,
            "h": self.problem.h,
            "z_peak": self.sample.z,
            "norm": self.sample.norm,
        }


def _run_modes(
    profile: BoundaryProfile,
    k_list: Sequence[int],
    offsets: Sequence[float],
    chi: CutoffSpec,
    cap: Optional[CapProfile],
    lambda_rule: Callable[[float, float], float],
    tol: float,
    max_iter: int,
    seed: int,
    threads: Optional[int],
) -> List[ModeResult]:
    source = profile.wide_profile()
    modes = _modes(profile, k_list)
    z_top = max(TRAPPED_ENERGY * (1.0 + s) for s in offsets)
    build = operator_builder(source, z_top, chi, cap)

    def one(mode: Tuple[int, float]) -> ModeResult:
        k, beta = mode
        problems = [ModeProblem.from_lambda(k, beta, lambda_rule(beta, s)) for s in offsets]
        op = build(problems[0].h)
        samples = energy_scan(op, problems[0].h, [p.z for p in problems], chi, tol=tol, max_iter=max_iter, seed=seed, threads=1)
        peak = peak_sample(samples)
        best = problems[samples.index(peak)]
        LOG.debug(f"k={k} beta={beta:.4g} h={best.h:.4g}: peak {peak.norm:.6g} at z={peak.z:.6g}")
        return ModeResult(problem=best, sample=peak)

    workers = min(threads or load_threads(), len(modes))
    if workers <= 1:
        return [one(m) for m in modes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, modes))


@dataclass(frozen=True)
class BilliardReport:
    modes: Tuple[ModeResult, ...]
    fit: Optional[ScalingFitResult]
    verdict: str
    regimes: Dict[str, Dict[str, object]] = field(default_factory=dict)
    control_fit: Optional[ScalingFitResult] = None
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {
            "modes": [m.to_row() for m in self.modes],
            "fit": None if self.fit is None else self.fit.to_dict(),
            "gamma_ceiling": GAMMA_CEILING,
            "verdict": self.verdict,
            "regimes": self.regimes,
            "control_fit": None if self.control_fit is None else self.control_fit.to_dict(),
            "notes": list(self.notes),
        }

    def to_csv(self, path: str) -> str:
        tmp = f"{path}.tmp"
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=list(ModeResult.CSV_COLUMNS))
            w.writeheader()
            for m in self.modes:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in m.to_row().items()})
        os.replace(tmp, path)
        return path


def _fit_modes(results: Sequence[ModeResult]) -> Tuple[Optional[ScalingFitResult], str]:
    try:
        fit = fit_power([r.sample for r in results])
    except FitError as e:
        LOG.warning(f"no fit over the modes: {e}")
        return None, VERDICT_INCONCLUSIVE
    return fit, VERDICT_CONSISTENT if fit.gamma <= GAMMA_CEILING else VERDICT_INCONSISTENT


def nonconcentration_check(
    profile: BoundaryProfile,
    k_list: Sequence[int],
    lambda_rule: Callable[[float, float], float] = default_lambda_rule,
    offsets: Sequence[float] = SCAN_OFFSETS,
    chi: Optional[CutoffSpec] = None,
    cap: Optional[CapProfile] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    threads: Optional[int] = None,
) -> BilliardReport:
    """Peak cutoff resolvent norm near the trapped energy for each mode, fitted against h.

    Consistent when the fitted exponent stays at or below 2.3.
    """
    if not profile.opens_outward:
        raise PreconditionError("the boundary must open outward on at least one side of the rectangle")
    chi = chi or profile.default_cutoff()
    results = _run_modes(profile, k_list, offsets, chi, cap, lambda_rule, tol, max_iter, seed, threads)
    fit, verdict = _fit_modes(results)
    if fit is not None:
        LOG.info(f"billiard: gamma={fit.gamma:.4f} (r2={fit.r2:.4f}) over {fit.n_points} modes -> {verdict}")
    return BilliardReport(modes=tuple(results), fit=fit, verdict=verdict)


def regime_norms(
    profile: BoundaryProfile,
    k_list: Sequence[int],
    z: float,
    chi: Optional[CutoffSpec] = None,
    cap: Optional[CapProfile] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
) -> List[ResolventSample]:
    """Cutoff resolvent norm at a fixed energy z for each mode."""
    chi = chi or profile.default_cutoff()
    build = operator_builder(profile.wide_profile(), z, chi, cap)
    out = []
    for k, beta in _modes(profile, k_list):
        h = 1.0 / beta
        out.append(cutoff_resolvent_norm(build(h), z, chi, tol=tol, max_iter=max_iter, seed=seed))
    return out


def regime_summary(samples: Sequence[ResolventSample], scaled_by_h: bool) -> Dict[str, object]:
    """max/min of the norms (or of norm*h), bounded by 3 when the regime behaves."""
    vals = np.array([s.norm * (s.h if scaled_by_h else 1.0) for s in samples], dtype=float)
    spread = float(vals.max() / vals.min()) if vals.size and vals.min() > 0 else math.inf
    return {"values": [float(v) for v in vals], "spread": spread, "bounded": bool(spread <= 3.0)}


def regime_checks(profile: BoundaryProfile, k_list: Sequence[int], **kwargs) -> Dict[str, Dict[str, object]]:
    """Elliptic (z = pi^-2 - 0.2) and hyperbolic (z = pi^-2 + 0.2) controls."""
    elliptic = regime_norms(profile, k_list, TRAPPED_ENERGY - REGIME_SHIFT, **kwargs)
    hyperbolic = regime_norms(profile, k_list, TRAPPED_ENERGY + REGIME_SHIFT, **kwargs)
    return {
        "elliptic": regime_summary(elliptic, scaled_by_h=False),
        "hyperbolic": regime_summary(hyperbolic, scaled_by_h=True),
    }


def rectangle_control_fit(
    a: float,
    k_list: Sequence[int],
    bc: str = BC_DIRICHLET,
    reference: Optional[ScalingFitResult] = None,
    **kwargs,
) -> Optional[ScalingFitResult]:
    """Same scan for r = 0 with the absorber right past the rectangle.

    When `reference` is given, a control exponent below it is logged as a warning.
    """
    rect = BoundaryProfile.rectangle(a, bc)
    chi = kwargs.pop("chi", None) or rect.default_cutoff()
    results = _run_modes(
        rect,
        k_list,
        kwargs.pop("offsets", SCAN_OFFSETS),
        chi,
        kwargs.pop("cap", None),
        kwargs.pop("lambda_rule", default_lambda_rule),
        kwargs.pop("tol", DEFAULT_TOL),
        kwargs.pop("max_iter", DEFAULT_MAX_ITER),
        kwargs.pop("seed", DEFAULT_SEED),
        kwargs.pop("threads", None),
    )
    fit, _ = _fit_modes(results)
    if fit is not None and reference is not None and fit.gamma < reference.gamma:
        LOG.warning(f"rectangle control gamma {fit.gamma:.4f} is below the outward-wing gamma {reference.gamma:.4f}")
    return fit
