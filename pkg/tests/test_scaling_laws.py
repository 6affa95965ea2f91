import os
import sys
import textwrap

import numpy as np
import pytest

# Ensure the repository's src/ is importable
sys.path.insert(0, os.path.abspath("src"))

from semires.domain.constants import MODEL_POWER_LOG, MODEL_PURE_POWER, VERDICT_CONSISTENT
from semires.domain.trapping import degenerate_max_gamma, inflection_gamma
from semires.domain.warp import WarpSpec
from semires.experiments.billiard import (
    TRAPPED_ENERGY,
    BoundaryProfile,
    WingSpec,
    beta_for,
    mode_operator,
    nonconcentration_check,
    regime_checks,
)
from semires.experiments.runner import execute
from semires.experiments.settings import load_config, parse_config
from semires.numerics.discretize import CapProfile, Grid, build_operator, solve
from semires.numerics.fit import fit_power, fit_power_log
from semires.numerics.resolvent import CutoffSpec, cutoff_resolvent_norm, domain_half_width, h_sweep

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")

# Seven log-spaced h in [1/400, 1/50].
SWEEP = """
schema_version = 1
kind = "sweep"
seed = 42

[potential]
family = "{family}"
params = {params}

[sweep]
h_max = 0.02
h_min = 0.0025
h_points = 7
{extra}
"""


def _sweep(family, params, extra="", converged=True):
    text = SWEEP.format(family=family, params=params, extra=extra)
    result = execute(parse_config(textwrap.dedent(text).lstrip(), None))
    assert len(result.rows) == 7
    if converged:
        assert all(r["converged"] for r in result.rows)
    return result


def _gamma(result, model=MODEL_PURE_POWER):
    fit = result.report["fits"][model]
    assert fit is not None
    return fit["gamma"], fit["r2"]


def test_degenerate_bump_m2_grows_like_four_thirds():
    result = _sweep("degenerate_bump", "{ m = 2 }")
    gamma, r2 = _gamma(result)
    assert gamma == pytest.approx(degenerate_max_gamma(2), abs=0.15)
    assert r2 >= 0.98
    assert result.verdict == VERDICT_CONSISTENT


def test_first_order_inflection_grows_like_six_fifths():
    result = _sweep("inflection_profile", "{ m2 = 1 }")
    gamma, r2 = _gamma(result)
    assert gamma == pytest.approx(inflection_gamma(1), abs=0.15)
    assert r2 >= 0.98
    assert result.verdict == VERDICT_CONSISTENT


def test_nondegenerate_maximum_prefers_the_log_model():
    result = _sweep("degenerate_bump", "{ m = 1 }")
    samples = [(r["h"], r["norm"]) for r in result.rows]
    pure = fit_power(samples)
    with_log = fit_power_log(samples)
    assert 1.0 <= pure.gamma <= 1.3
    assert with_log.sse < pure.sse
    assert result.report["model"] == MODEL_POWER_LOG


def test_energy_above_the_bump_is_nontrapping():
    result = _sweep("degenerate_bump", "{ m = 2 }", "z = 2.0")
    gamma, _ = _gamma(result)
    assert gamma == pytest.approx(1.0, abs=0.1)
    assert result.verdict == VERDICT_CONSISTENT


@pytest.mark.parametrize("family,params", [("cylinder_plateau", "{ half_length = 1.0 }"), ("gevrey_flat", "{ p = 2 }")])
def test_flat_tops_grow_almost_quadratically(family, params):
    # report-only: the exponent sits near 2 but no verdict is asserted
    gamma, _ = _gamma(_sweep(family, params, converged=False))
    assert 1.5 <= gamma <= 2.6


def test_norms_survive_wider_domain_and_weaker_absorber():
    spec = WarpSpec.make("degenerate_bump", {"m": 2})
    chi = CutoffSpec(0.0, 1.0, 0.5)
    hs = [0.02, 0.01, 0.005]
    X = domain_half_width(spec, 1.0, chi)
    base = h_sweep(spec, 1.0, hs, chi, CapProfile(), threads=1)
    moved = h_sweep(spec, 1.0, hs, chi, CapProfile().halved(), threads=1, half_width=2.0 * X)
    for a, b in zip(base, moved):
        assert a.error is None and b.error is None
        assert b.norm == pytest.approx(a.norm, rel=0.1)
        assert b.cap_eta == pytest.approx(0.5)


def test_two_components_glue_to_the_worse_one():
    result = execute(load_config(os.path.join(CONFIGS, "glue.toml")))
    body = result.report
    assert len(body["local"]) == 2
    assert 1.0 / 3.0 <= body["ratio"] <= 3.0
    assert body["dominant_is_worst"]
    assert result.verdict == VERDICT_CONSISTENT


def _winged():
    return BoundaryProfile.symmetric(1.0, WingSpec(kind="power", c=1.0, q=2.0))


def test_mode_operator_is_the_rescaled_mode_problem():
    prof = _winged()
    op = mode_operator(prof, 4)
    assert op.h == pytest.approx(1.0 / beta_for(prof.bc, 4))
    x = op.grid.points()
    k = op.h**2 / op.grid.delta**2
    inside = np.abs(x) <= 1.0
    assert np.allclose(op.diag.real[inside] - 2.0 * k, TRAPPED_ENERGY)
    assert np.all(op.diag.imag[inside] == 0.0)
    assert np.all(op.diag.real[np.abs(x) > 1.1] - 2.0 * k < TRAPPED_ENERGY)


def test_outward_wings_keep_the_billiard_below_the_ceiling():
    prof = _winged()
    ks = [8, 16, 24, 32, 40, 48, 56, 64]
    report = nonconcentration_check(prof, ks, threads=1)
    assert report.fit is not None
    assert report.fit.gamma <= 2.3
    assert report.verdict == VERDICT_CONSISTENT
    regimes = regime_checks(prof, ks)
    assert regimes["elliptic"]["spread"] <= 3.0
    assert regimes["hyperbolic"]["spread"] <= 3.0


def test_banded_solve_residuals_on_random_systems():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(16, 401))
        g = Grid(-2.0, 2.0, n)
        V = rng.uniform(-1.0, 2.0, size=n)
        op = build_operator(V, float(rng.uniform(0.05, 0.3)), g)
        z = complex(rng.uniform(-0.5, 2.0), rng.uniform(0.1, 0.5))
        rhs = rng.normal(size=n) + 1j * rng.normal(size=n)
        u = solve(op, z, rhs)
        assert np.linalg.norm(op.matvec(u, z) - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_power_iteration_agrees_with_dense_svd():
    rng = np.random.default_rng(7)
    chi = CutoffSpec(0.0, 1.0, 0.5)
    for _ in range(120):
        n = int(rng.integers(64, 401))
        g = Grid(-4.0, 4.0, n)
        amp = float(rng.uniform(0.5, 2.0))
        op = build_operator(amp / (1.0 + g.points() ** 2), float(rng.uniform(0.2, 0.6)), g)
        z = float(rng.uniform(0.2, 1.5))
        w = chi.evaluate(g.points())
        dense = np.diag(w) @ np.linalg.inv(op.dense(z)) @ np.diag(w)
        exact = float(np.linalg.svd(dense, compute_uv=False)[0])
        s = cutoff_resolvent_norm(op, z, chi, tol=1e-10, max_iter=3000)
        assert s.norm == pytest.approx(exact, rel=1e-2)
        assert s.norm <= exact * (1 + 1e-9)
