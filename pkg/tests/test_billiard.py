import math
import os
import sys

import numpy as np
import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.domain.constants import BC_DIRICHLET, BC_NEUMANN, WING_FLAT, WING_GEVREY, WING_POWER
from semires.errors import ConfigError
from semires.experiments.billiard import (
    TRAPPED_ENERGY,
    BilliardReport,
    BoundaryProfile,
    ModeProblem,
    ModeResult,
    PreconditionError,
    WingSpec,
    default_lambda_rule,
    mode_operator,
    nonconcentration_check,
    regime_summary,
    transverse_spectrum,
)
from semires.numerics.discretize import Grid
from semires.numerics.resolvent import ResolventSample


def test_transverse_spectrum_dirichlet_and_neumann():
    assert transverse_spectrum(BC_DIRICHLET, 3) == pytest.approx([math.pi / 2, math.pi, 3 * math.pi / 2])
    assert transverse_spectrum(BC_NEUMANN, 3) == pytest.approx([0.0, math.pi / 2, math.pi])
    with pytest.raises(ConfigError):
        transverse_spectrum(BC_DIRICHLET, 0)
    with pytest.raises(ConfigError):
        transverse_spectrum("robin", 3)


def test_rectangle_potential_is_constant():
    rect = BoundaryProfile.rectangle(1.5)
    x = np.linspace(-5, 5, 101)
    assert np.allclose(rect.mode_potential(x), TRAPPED_ENERGY)
    assert not rect.opens_outward


def test_outward_wings_make_the_rectangle_a_plateau_maximum():
    prof = BoundaryProfile.symmetric(1.0, WingSpec(kind=WING_POWER, c=1.0, q=2.0))
    x = np.linspace(-4, 4, 801)
    V = prof.mode_potential(x)
    inside = np.abs(x) <= 1.0
    assert np.allclose(V[inside], TRAPPED_ENERGY)
    assert np.all(V[np.abs(x) > 1.05] < TRAPPED_ENERGY)
    assert np.all(V <= TRAPPED_ENERGY * (1 + 1e-15))
    assert V.max() == pytest.approx(TRAPPED_ENERGY)


def test_inward_wing_stays_above_half_height():
    wing = WingSpec(kind=WING_POWER, c=0.5, q=2.0, outward=False)
    prof = BoundaryProfile.symmetric(1.0, wing)
    Y, _, _ = prof.graph(np.linspace(-4, 4, 401))
    assert np.all(Y > math.pi / 2)
    assert np.all(Y <= math.pi)


def test_profile_derivatives_match_finite_differences():
    prof = BoundaryProfile(a=1.0, left=WingSpec(kind=WING_GEVREY, c=1.0, p=1.0), right=WingSpec(kind=WING_POWER, q=3.0))
    grid = Grid(-3.0, 3.0, 6001)
    p = prof.profile(grid)
    d = grid.delta
    fd = (p.v0[2:] - p.v0[:-2]) / (2 * d)
    assert np.allclose(p.v0p[1:-1], fd, atol=1e-5)


def test_wing_validation():
    with pytest.raises(ConfigError):
        WingSpec(kind="spiral")
    with pytest.raises(ConfigError):
        WingSpec(kind=WING_POWER, q=0.5)
    with pytest.raises(ConfigError):
        WingSpec(kind=WING_GEVREY, p=0.0)
    with pytest.raises(ConfigError):
        BoundaryProfile(a=0.0)
    assert not WingSpec(kind=WING_FLAT).is_outward


def test_inward_only_boundary_is_rejected():
    inward = BoundaryProfile.symmetric(1.0, WingSpec(outward=False))
    with pytest.raises(PreconditionError):
        nonconcentration_check(inward, [1, 2, 3, 4])


def test_neumann_constant_mode_has_no_problem():
    prof = BoundaryProfile.symmetric(1.0, WingSpec(), bc=BC_NEUMANN)
    with pytest.raises(PreconditionError):
        mode_operator(prof, 1)
    with pytest.raises(PreconditionError):
        ModeProblem.from_lambda(1, 0.0, 1.0)


def test_mode_problem_scaling():
    beta = 3 * math.pi / 2
    lam = default_lambda_rule(beta, 0.01)
    mp = ModeProblem.from_lambda(3, beta, lam, e_lambda=2.0)
    assert mp.h == pytest.approx(1.0 / beta)
    assert mp.z == pytest.approx(TRAPPED_ENERGY * 1.01)
    assert mp.e_tilde == pytest.approx(2.0 / beta**2)


def _s(h, norm):
    return ResolventSample(h=h, z=TRAPPED_ENERGY, norm=norm, iterations=3, converged=True)


def test_regime_summary_spread():
    flat = regime_summary([_s(0.5, 2.0), _s(0.25, 4.0), _s(0.125, 8.0)], scaled_by_h=True)
    assert flat["spread"] == pytest.approx(1.0)
    assert flat["bounded"]
    growing = regime_summary([_s(0.5, 1.0), _s(0.25, 4.0)], scaled_by_h=False)
    assert growing["spread"] == pytest.approx(4.0)
    assert not growing["bounded"]


def test_report_csv(tmp_path):
    modes = tuple(
        ModeResult(problem=ModeProblem.from_lambda(k, k * math.pi / 2, 1.0), sample=_s(2 / (k * math.pi), 10.0 * k))
        for k in (1, 2)
    )
    rep = BilliardReport(modes=modes, fit=None, verdict="inconclusive")
    path = rep.to_csv(str(tmp_path / "modes.csv"))
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "k,beta_k,h,z_peak,norm"
    assert len(lines) == 3
    assert rep.to_dict()["gamma_ceiling"] == 2.3
