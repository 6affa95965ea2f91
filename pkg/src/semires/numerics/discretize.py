"""Finite-difference discretization of P(h) = -h^2 d^2/dx^2 + V with an absorbing layer.

The operator is stored as complex-symmetric tridiagonal bands. Linear solves go
through LAPACK's banded LU (gbsv/gbtrs) and the self-adjoint eigenproblem uses
Sturm bisection plus inverse iteration (stebz/stein via scipy).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal, get_lapack_funcs

from ..errors import SemiresError
from ..logging import get_logger

LOG = get_logger("discretize")

PIVOT_FLOOR = 1e-30
SOLVE_RTOL = 1e-10
EIG_RTOL = 1e-10
POINTS_PER_WAVELENGTH = 20


class GridError(SemiresError, ValueError):
    pass


class NearSingularError(SemiresError, RuntimeError):
    """z is (numerically) an eigenvalue of the absorbing operator."""


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise GridError("grid bounds must be finite")
        if self.x_min >= self.x_max:
            raise GridError(f"x_min ({self.x_min}) must be below x_max ({self.x_max})")
        if int(self.n) != self.n or self.n < 16:
            raise GridError(f"grid needs an integer n >= 16, got {self.n}")

    @classmethod
    def symmetric(cls, half_width: float, n: int) -> "Grid":
        # odd n keeps x = 0 on the grid
        n = int(n) | 1
        return cls(-float(half_width), float(half_width), n)

    @classmethod
    def with_spacing(cls, x_min: float, x_max: float, max_delta: float, min_points: int = 16) -> "Grid":
        n = int(math.ceil((x_max - x_min) / max_delta)) + 1
        n = max(n, min_points) | 1
        return cls(float(x_min), float(x_max), n)

    @property
    def delta(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    def index_of(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.delta))
        return min(max(i, 0), self.n - 1)


def l2_norm(u: np.ndarray, grid: Grid) -> float:
    """Discrete L^2 norm with the grid weight."""
    return float(math.sqrt(grid.delta) * np.linalg.norm(u))


def resolution_spacing(h: float, z: float, v_min: float) -> float:
    """Largest admissible spacing: 20 points per local de Broglie wavelength."""
    return h / (POINTS_PER_WAVELENGTH * math.sqrt(max(z - v_min, 1.0)))


@dataclass(frozen=True)
class CapProfile:
    strength: float = 1.0
    width_fraction: float = 0.15
    ramp_power: int = 3

    def __post_init__(self) -> None:
        if self.strength < 0:
            raise GridError(f"CAP strength must be >= 0, got {self.strength}")
        if not (0.0 < self.width_fraction < 0.4):
            raise GridError(f"CAP width_fraction must lie in (0, 0.4), got {self.width_fraction}")
        if int(self.ramp_power) != self.ramp_power or self.ramp_power < 2:
            raise GridError(f"CAP ramp_power must be an integer >= 2, got {self.ramp_power}")

    def layer_width(self, grid: Grid) -> float:
        return self.width_fraction * grid.length

    def interior_window(self, grid: Grid) -> Tuple[float, float]:
        w = self.layer_width(grid)
        return grid.x_min + w, grid.x_max - w

    def absorber(self, grid: Grid) -> np.ndarray:
        x = grid.points()
        lo, hi = self.interior_window(grid)
        w = self.layer_width(grid)
        depth = np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)
        return self.strength * (depth / w) ** int(self.ramp_power)

    def halved(self) -> "CapProfile":
        return CapProfile(self.strength / 2.0, self.width_fraction, self.ramp_power)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    h: float
    diag: np.ndarray
    offdiag: np.ndarray
    grid: Grid
    cap: CapProfile = field(default_factory=CapProfile)

    @property
    def n(self) -> int:
        return int(self.diag.shape[0])

    def matvec(self, u: np.ndarray, z: complex = 0.0) -> np.ndarray:
        """(op - z) u."""
        out = (self.diag - z) * u
        out[:-1] += self.offdiag * u[1:]
        out[1:] += self.offdiag * u[:-1]
        return out

    def dense(self, z: complex = 0.0) -> np.ndarray:
        a = np.diag(self.diag - z)
        a += np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)
        return a

    def scale(self) -> float:
        return float(max(np.max(np.abs(self.diag)), np.max(np.abs(self.offdiag), initial=0.0), 1.0))


def build_operator(V: np.ndarray, h: float, grid: Grid, cap: Optional[CapProfile] = None) -> DiscreteOperator:
    """Central-difference Laplacian plus V, with -iW on both ends."""
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.n,):
        raise GridError(f"potential has {V.shape[0] if V.ndim else 0} samples, grid has {grid.n}")
    if not h > 0:
        raise GridError(f"h must be positive, got {h}")
    cap = cap or CapProfile()
    k = h * h / (grid.delta * grid.delta)
    diag = (2.0 * k + V) - 1j * cap.absorber(grid)
    offdiag = np.full(grid.n - 1, -k, dtype=complex)
    return DiscreteOperator(h=float(h), diag=diag.astype(complex), offdiag=offdiag, grid=grid, cap=cap)


def _factor_and_solve(op: DiscreteOperator, z: complex, rhs: np.ndarray):
    n = op.n
    ab = np.zeros((4, n), dtype=complex)
    ab[1, 1:] = op.offdiag
    ab[2, :] = op.diag - z
    ab[3, :-1] = op.offdiag
    b = np.asarray(rhs, dtype=complex)
    (gbsv,) = get_lapack_funcs(("gbsv",), (ab, b))
    lu, piv, x, info = gbsv(1, 1, ab, b, overwrite_ab=True, overwrite_b=False)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of gbsv")
    pivots = np.abs(lu[2, :])
    if info > 0 or float(np.min(pivots)) < PIVOT_FLOOR * op.scale():
        raise NearSingularError(f"pivot {float(np.min(pivots)):.3e} below floor at z={z}")
    return lu, piv, x


def solve(op: DiscreteOperator, z: complex, rhs: np.ndarray) -> np.ndarray:
    """Solve (op - z) u = rhs by banded LU with partial pivoting.

    One refinement step on the residual is taken when the relative residual
    exceeds 1e-10.
    """
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape != (op.n,):
        raise GridError(f"rhs length {rhs.shape} does not match operator size {op.n}")
    lu, piv, x = _factor_and_solve(op, z, rhs)
    rnorm = float(np.linalg.norm(rhs))
    if rnorm == 0.0:
        return x
    r = rhs - op.matvec(x, z)
    if np.linalg.norm(r) > SOLVE_RTOL * rnorm:
        (gbtrs,) = get_lapack_funcs(("gbtrs",), (lu, r))
        dx, info = gbtrs(lu, 1, 1, r, piv)
        if info == 0:
            x = x + dx
            res = float(np.linalg.norm(rhs - op.matvec(x, z)) / rnorm)
            LOG.debug(f"solve refined: relative residual {res:.2e}")
    return x


def solve_adjoint(op: DiscreteOperator, z: complex, rhs: np.ndarray) -> np.ndarray:
    """Solve (op - z)^* u = rhs.

    The bands are complex-symmetric, so (op - z)^* = conj(op - z) and u is the
    conjugate of a solve against conj(rhs) at the same z.
    """
    return np.conj(solve(op, z, np.conj(np.asarray(rhs, dtype=complex))))


@dataclass(frozen=True, eq=False)
class EigenPair:
    energy: float
    vector: np.ndarray
    residual: float


def _self_adjoint_bands(V: np.ndarray, h: float, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.n,):
        raise GridError(f"potential has {V.shape[0] if V.ndim else 0} samples, grid has {grid.n}")
    k = h * h / (grid.delta * grid.delta)
    return 2.0 * k + V, np.full(grid.n - 1, -k)


def tridiagonal_apply(d: np.ndarray, e: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = d * u
    out[:-1] += e * u[1:]
    out[1:] += e * u[:-1]
    return out


def eigen_window(V: np.ndarray, h: float, grid: Grid, window: Sequence[float]) -> List[EigenPair]:
    """All Dirichlet eigenpairs of -h^2 D^2 + V with energy in (E_lo, E_hi].

    Vectors are normalized in the grid L^2 norm.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise GridError(f"eigen window must satisfy lo < hi, got [{lo}, {hi}]")
    d, e = _self_adjoint_bands(V, h, grid)
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="v", select_range=(lo, hi), lapack_driver="stebz")
    if w.shape[0] == 0:
        LOG.debug(f"eigen_window [{lo:.4g}, {hi:.4g}] h={h:.4g}: empty")
        return []
    w, v = eigh_tridiagonal(d, e, select="v", select_range=(lo, hi), lapack_driver="stebz")
    scale = max(1.0, float(np.max(np.abs(d))) + 2.0 * float(np.max(np.abs(e))))
    pairs: List[EigenPair] = []
    for j in range(w.shape[0]):
        vec = v[:, j]
        res = float(np.linalg.norm(tridiagonal_apply(d, e, vec) - w[j] * vec) / np.linalg.norm(vec))
        if res > EIG_RTOL * scale:
            LOG.warning(f"eigenpair E={w[j]:.6g} residual {res:.2e} above tolerance")
        vec = vec / l2_norm(vec, grid)
        pairs.append(EigenPair(energy=float(w[j]), vector=vec, residual=res))
    LOG.debug(f"eigen_window [{lo:.4g}, {hi:.4g}] h={h:.4g}: {len(pairs)} eigenvalue(s)")
    return pairs


def dump_bands(op: DiscreteOperator, path: str) -> str:
    """Write the operator bands to CSV (x, re_diag, im_diag, offdiag) for debugging."""
    x = op.grid.points()
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "re_diag", "im_diag", "offdiag"])
        for i in range(op.n):
            off = op.offdiag[i].real if i < op.n - 1 else 0.0
            w.writerow([repr(float(x[i])), repr(float(op.diag[i].real)), repr(float(op.diag[i].imag)), repr(float(off))])
    os.replace(tmp, path)
    return path


def count_in_window(V: np.ndarray, h: float, grid: Grid, window: Sequence[float]) -> int:
    """Number of Dirichlet eigenvalues in (E_lo, E_hi]."""
    d, e = _self_adjoint_bands(V, h, grid)
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="v", select_range=(float(window[0]), float(window[1])), lapack_driver="stebz")
    return int(w.shape[0])
