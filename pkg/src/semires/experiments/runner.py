"""Run one configured experiment and commit report.json, data.csv and plot.script together."""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import load_output_root, load_threads
from ..domain.constants import (
    EXIT_ERROR,
    EXIT_OK,
    EXPERIMENT_BILLIARD,
    EXPERIMENT_CLASSIFY,
    EXPERIMENT_GEVREY,
    EXPERIMENT_GLUE,
    EXPERIMENT_QUASIMODE,
    EXPERIMENT_SWEEP,
    FORM_POWER_LOG,
    MODEL_POWER_LOG,
    MODEL_PURE_POWER,
    SCHEMA_VERSION,
    VERDICT_CONSISTENT,
    VERDICT_EXIT_CODES,
    VERDICT_INCONSISTENT,
)
from ..domain.trapping import TrappingReport, classify_warp, law_at_energy, relevant_components
from ..domain.warp import PotentialProfile, check_gevrey, full_potential, short_range_advisory
from ..errors import SemiresError
from ..logging import get_logger
from ..numerics.fit import FitError, ScalingFitResult, fit_power, fit_power_log, verdict, verdict_report
from ..numerics.quasimode import (
    CertifiedBound,
    Quasimode,
    build_quasimode,
    certify_blowup,
    export_quasimode,
    extend_convex,
    fit_well,
    weyl_count,
)
from ..numerics.resolvent import (
    CutoffSpec,
    ResolventSample,
    domain_half_width,
    energy_scan,
    h_sweep,
    operator_builder,
    peak_sample,
    profile_on,
)
from ..paths import default_output_dir, expand_abs
from .billiard import BoundaryProfile, WingSpec, nonconcentration_check, rectangle_control_fit, regime_checks
from .gluing import glued_vs_local
from .settings import MODEL_AUTO, ExperimentConfig, FieldError, validate

LOG = get_logger("runner")

ARTIFACTS = ("report.json", "data.csv", "plot.script")
PROFILE_ROWS = 2000
WEYL_SLOPE_TOL = 0.2


@dataclass
class RunResult:
    kind: str
    verdict: Optional[str]
    report: Dict[str, Any]
    columns: Tuple[str, ...]
    rows: List[Dict[str, Any]]
    plot: str
    extras: List[Callable[[str], Any]] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.verdict is None else VERDICT_EXIT_CODES[self.verdict]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf"/"-inf" or null."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _cell(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_report(path: str, report: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(report), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _write_rows(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(v) for k, v in row.items()})


def _plot_script(title: str, x_col: int, y_col: int, x_label: str, y_label: str, log: bool) -> str:
    lines = [
        "# gnuplot script; run with: gnuplot -persist plot.script",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        f"set xlabel '{x_label}'",
        f"set ylabel '{y_label}'",
    ]
    if log:
        lines.append("set logscale xy")
    lines.append(f"plot 'data.csv' using {x_col}:{y_col} with linespoints pointtype 7")
    return "\n".join(lines) + "\n"


def write_artifacts(result: RunResult, out_dir: str) -> str:
    """Write all artifacts into a scratch directory, then swap it in with os.replace."""
    out = expand_abs(out_dir)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    tmp = f"{out}.tmp-{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    try:
        _write_report(os.path.join(tmp, "report.json"), result.report)
        _write_rows(os.path.join(tmp, "data.csv"), result.columns, result.rows)
        with open(os.path.join(tmp, "plot.script"), "w", encoding="utf-8") as f:
            f.write(result.plot)
        for extra in result.extras:
            extra(tmp)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if os.path.exists(out):
        old = f"{out}.old-{os.getpid()}"
        os.replace(out, old)
    os.replace(tmp, out)
    if old:
        shutil.rmtree(old, ignore_errors=True)
    LOG.info(f"Wrote artifacts to: {out}")
    return out


def resolve_output_dir(cfg: ExperimentConfig) -> str:
    explicit = cfg.output_directory()
    if explicit:
        return expand_abs(explicit)
    root = load_output_root(os.path.dirname(cfg.path) if cfg.path else ".")
    if root:
        return os.path.join(root, cfg.kind)
    return default_output_dir(cfg.kind)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _classified(cfg: ExperimentConfig) -> Tuple[Any, PotentialProfile, TrappingReport]:
    spec = cfg.warp_spec()
    profile, report = classify_warp(spec, cfg.classification_grid(), **cfg.classify_kwargs())
    return spec, profile, report


def run_classify(cfg: ExperimentConfig) -> RunResult:
    spec, profile, report = _classified(cfg)
    stride = max(1, profile.grid.n // PROFILE_ROWS)
    x = profile.x
    rows = [
        {"x": x[i], "v0": profile.v0[i], "v1": profile.v1[i], "v0p": profile.v0p[i], "v0pp": profile.v0pp[i]}
        for i in range(0, profile.grid.n, stride)
    ]
    body = {
        "family": spec.family,
        "params": spec.param_dict(),
        "classification": report.to_dict(),
        "short_range_ok": short_range_advisory(spec),
    }
    plot = _plot_script(f"V0 for {spec.family}", 1, 2, "x", "V0", log=False)
    return RunResult(EXPERIMENT_CLASSIFY, None, body, ("x", "v0", "v1", "v0p", "v0pp"), rows, plot)


def _sweep_energy(cfg: ExperimentConfig, report: TrappingReport) -> float:
    z = cfg.sweep_z()
    if z is not None:
        return z
    if not report.components:
        raise FieldError("sweep.z", "required when V0 has no critical components")
    i = max(range(len(report.components)), key=lambda j: report.per_component_law[j].exponent)
    return report.components[i].critical_value


def _sweep_cutoff(cfg: ExperimentConfig, report: TrappingReport, profile: PotentialProfile, z: float) -> CutoffSpec:
    chi = cfg.cutoff()
    if chi is not None:
        return chi
    idx = relevant_components(report, z, profile.scale())
    if not idx:
        return CutoffSpec()
    comps = [report.components[i] for i in idx]
    return CutoffSpec.around(min(c.x_left for c in comps), max(c.x_right for c in comps), margin=1.0)


def _try_fit(fn: Callable[[Sequence[ResolventSample]], ScalingFitResult], samples: Sequence[ResolventSample]) -> Optional[ScalingFitResult]:
    try:
        return fn(samples)
    except FitError as e:
        LOG.warning(f"{fn.__name__}: {e}")
        return None


def run_sweep(cfg: ExperimentConfig) -> RunResult:
    spec, profile, report = _classified(cfg)
    z = _sweep_energy(cfg, report)
    chi = _sweep_cutoff(cfg, report, profile, z)
    law = law_at_energy(report, z, profile)
    hs = cfg.sweep_h_list()
    opts = cfg.solver_options()
    cap, half = cfg.cap_profile(), cfg.cap_half_width()
    zs = cfg.scan_z_list()
    LOG.info(f"sweep {spec.family}: z={z:.6g}, {len(hs)} h value(s), predicted {law.describe()}")
    if zs is None:
        samples = h_sweep(spec, z, hs, chi, cap, half_width=half, **opts)
    else:
        build = operator_builder(spec, max(zs), chi, cap, half_width=half)
        samples = []
        for h in hs:
            try:
                samples.append(peak_sample(energy_scan(build, h, zs, chi, **opts)))
            except SemiresError as e:
                LOG.error(f"h={h:.4g}: {e}")
                samples.append(ResolventSample(h=h, z=z, norm=math.nan, iterations=0, converged=False, error=str(e)))
    fits = {MODEL_PURE_POWER: _try_fit(fit_power, samples), MODEL_POWER_LOG: _try_fit(fit_power_log, samples)}
    tol, model = cfg.fit_options()
    if model == MODEL_AUTO:
        model = MODEL_POWER_LOG if law.form == FORM_POWER_LOG else MODEL_PURE_POWER
    blowup = any(s.blowup for s in samples)
    chosen = fits[model]
    outcome = verdict(chosen, law, tol, blowup_present=blowup)
    body = {
        "family": spec.family,
        "params": spec.param_dict(),
        "classification": report.to_dict(),
        "z": z,
        "cutoff": {"center": chi.center, "inner_radius": chi.inner_radius, "taper_width": chi.taper_width},
        "fits": {k: None if v is None else v.to_dict() for k, v in fits.items()},
        "model": model,
        "result": verdict_report(chosen, law, tol, blowup_present=blowup),
        "failed_samples": [{"h": s.h, "error": s.error} for s in samples if s.error],
        "verdict": outcome,
    }
    plot = _plot_script(f"cutoff resolvent norm, {spec.family}", 1, 3, "h", "norm", log=True)
    return RunResult(EXPERIMENT_SWEEP, outcome, body, ResolventSample.CSV_COLUMNS, [s.to_row() for s in samples], plot)


def run_quasimode(cfg: ExperimentConfig) -> RunResult:
    spec, profile, _ = _classified(cfg)
    opts = cfg.quasimode_options()
    sopts = cfg.solver_options()
    cap = cfg.cap_profile()
    well = fit_well(profile, None, delta0=opts["delta0"], beta=opts["beta"])
    lo, hi = well.left - well.eps, well.right + well.eps
    chi_tilde = CutoffSpec(center=0.5 * (lo + hi), inner_radius=0.5 * (hi - lo), taper_width=0.5)
    e_ref = well.window[1]
    X = max(domain_half_width(spec, e_ref, chi_tilde), abs(well.x_center) + well.outer_radius + 1.0)
    if cfg.cap_half_width() is not None:
        X = max(X, cfg.cap_half_width())
    build = operator_builder(spec, e_ref, chi_tilde, cap, half_width=X)
    order = opts["order"]

    def one(h: float) -> Tuple[Quasimode, CertifiedBound]:
        op = build(h)
        prof = profile_on(spec, op.grid)
        ext = extend_convex(prof, well, h, op.grid)
        qm = build_quasimode(ext, full_potential(prof, h), h, well, op.grid)
        weights = chi_tilde.evaluate(op.grid.points())
        bound = certify_blowup(qm, op if opts["cross_check"] else None, weights, **sopts)
        return qm, bound

    hs = opts["h_list"]
    workers = min(load_threads(), len(hs))
    if workers <= 1:
        results = [one(h) for h in hs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, hs))

    rows = []
    ok = True
    for h, (qm, bound) in zip(hs, results):
        passed = qm.residual <= h**order and bound.lower_bound >= h ** (-(order - 1)) and bound.consistent is not False
        ok = ok and passed
        rows.append(
            {
                "h": h,
                "energy": qm.energy,
                "residual": qm.residual,
                "lower_bound": bound.lower_bound,
                "measured": math.nan if bound.measured is None else bound.measured.norm,
                "mass_outside": qm.mass_outside,
                "passed": passed,
            }
        )
        LOG.info(f"h={h:.4g}: residual {qm.residual:.3e}, certified >= {bound.lower_bound:.3e} ({'ok' if passed else 'FAIL'})")

    weyl: Optional[Dict[str, Any]] = None
    if opts["weyl"]:
        h0 = hs[0]
        wh = [h0, h0 / 2.0, h0 / 4.0]
        fine = build(wh[-1])
        ext0 = extend_convex(profile_on(spec, fine.grid), well, 0.0, fine.grid)
        counts, slope = weyl_count(ext0.values, fine.grid, wh, well.window)
        weyl_ok = abs(slope + 1.0) <= WEYL_SLOPE_TOL
        ok = ok and weyl_ok
        weyl = {"h": wh, "counts": counts, "slope": slope, "ok": weyl_ok}

    outcome = VERDICT_CONSISTENT if ok else VERDICT_INCONSISTENT
    body = {
        "family": spec.family,
        "params": spec.param_dict(),
        "well": well.to_dict(),
        "order": order,
        "samples": rows,
        "weyl": weyl,
        "verdict": outcome,
    }
    qm_last, bound_last = results[-1]
    columns = ("h", "energy", "residual", "lower_bound", "measured", "mass_outside", "passed")
    plot = _plot_script("quasimode residual", 1, 3, "h", "residual", log=True)
    extras = [lambda d: export_quasimode(qm_last, bound_last, d)]
    return RunResult(EXPERIMENT_QUASIMODE, outcome, body, columns, rows, plot, extras)


def run_glue(cfg: ExperimentConfig) -> RunResult:
    spec, profile, report = _classified(cfg)
    opts = cfg.glue_options()
    sopts = cfg.solver_options()
    glued = glued_vs_local(profile, opts["h"], opts["z"], chi_global=cfg.cutoff(), report=report, cap=cfg.cap_profile(), **sopts)
    laws = report.per_component_law
    worst_gamma = max(law.exponent for law in laws)
    dominant_ok = laws[glued.dominant].exponent >= worst_gamma
    outcome = VERDICT_CONSISTENT if glued.verdict == VERDICT_CONSISTENT and dominant_ok else VERDICT_INCONSISTENT
    body = glued.to_dict()
    body.update(
        {
            "family": spec.family,
            "params": spec.param_dict(),
            "classification": report.to_dict(),
            "dominant": glued.dominant,
            "dominant_is_worst": dominant_ok,
            "verdict": outcome,
        }
    )
    rows = [
        {
            "component": i,
            "center": c.center,
            "kind": c.kind,
            "energy": e,
            "global_norm": g.norm,
            "local_norm": s.norm,
        }
        for i, (c, e, g, s) in enumerate(zip(glued.components, glued.energies, glued.global_samples, glued.local_samples))
    ]
    columns = ("component", "center", "kind", "energy", "global_norm", "local_norm")
    plot = _plot_script("global vs local norms", 1, 6, "component", "local norm", log=False)
    return RunResult(EXPERIMENT_GLUE, outcome, body, columns, rows, plot)


def run_billiard(cfg: ExperimentConfig) -> RunResult:
    opts = cfg.billiard_options()
    sopts = cfg.solver_options()
    cap, chi = cfg.cap_profile(), cfg.cutoff()
    bp = BoundaryProfile(a=opts["a"], left=WingSpec(**opts["left"]), right=WingSpec(**opts["right"]), bc=opts["bc"])
    result = nonconcentration_check(bp, opts["k_list"], chi=chi, cap=cap, **sopts)
    outcome = result.verdict
    body = result.to_dict()
    if opts["regimes"]:
        regimes = regime_checks(bp, opts["k_list"], chi=chi, cap=cap, **sopts)
        body["regimes"] = regimes
        if outcome == VERDICT_CONSISTENT and not all(r["bounded"] for r in regimes.values()):
            outcome = VERDICT_INCONSISTENT
    if opts["control"]:
        control = rectangle_control_fit(opts["a"], opts["k_list"], opts["bc"], reference=result.fit, cap=cap, **sopts)
        body["control_fit"] = None if control is None else control.to_dict()
    body.update({"a": opts["a"], "bc": opts["bc"], "left": opts["left"], "right": opts["right"], "verdict": outcome})
    rows = [m.to_row() for m in result.modes]
    plot = _plot_script("billiard mode norms", 3, 5, "h", "norm", log=True)
    return RunResult(EXPERIMENT_BILLIARD, outcome, body, ("k", "beta_k", "h", "z_peak", "norm"), rows, plot)


def run_gevrey(cfg: ExperimentConfig) -> RunResult:
    spec = cfg.warp_spec()
    opts = cfg.gevrey_options()
    g = check_gevrey(spec, opts["x0"], opts["k_max"], opts["sample_xs"])
    outcome = VERDICT_CONSISTENT if g.passes else VERDICT_INCONSISTENT
    body = {
        "family": spec.family,
        "params": spec.param_dict(),
        "tau": g.tau,
        "x0": opts["x0"],
        "k_max": opts["k_max"],
        "passes": g.passes,
        "worst_ratio": g.worst_ratio,
        "worst_pair": list(g.worst_pair),
        "constant": g.constant,
        "verdict": outcome,
    }
    rows = []
    for key in sorted(g.ratios, key=lambda s: tuple(int(t) for t in s.split(","))):
        k, s = (int(t) for t in key.split(","))
        rows.append({"k": k, "s": s, "ratio": g.ratios[key]})
    plot = _plot_script(f"0-Gevrey growth ratios, {spec.family}", 1, 3, "k", "ratio", log=False)
    return RunResult(EXPERIMENT_GEVREY, outcome, body, ("k", "s", "ratio"), rows, plot)


RUNNERS: Dict[str, Callable[[ExperimentConfig], RunResult]] = {
    EXPERIMENT_CLASSIFY: run_classify,
    EXPERIMENT_SWEEP: run_sweep,
    EXPERIMENT_QUASIMODE: run_quasimode,
    EXPERIMENT_GLUE: run_glue,
    EXPERIMENT_BILLIARD: run_billiard,
    EXPERIMENT_GEVREY: run_gevrey,
}


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run the experiment without writing anything."""
    result = RUNNERS[cfg.kind](cfg)
    result.report = {
        "schema_version": SCHEMA_VERSION,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "exit_code": result.exit_code,
        **result.report,
    }
    return result


def run(cfg: ExperimentConfig) -> int:
    """Validate, run and commit artifacts; returns the process exit code."""
    diagnostics = validate(cfg)
    if diagnostics:
        for d in diagnostics:
            LOG.error(d.format(cfg.path))
        return EXIT_ERROR
    try:
        result = execute(cfg)
        write_artifacts(result, resolve_output_dir(cfg))
    except SemiresError as e:
        LOG.error(f"{cfg.kind} failed: {e}")
        return EXIT_ERROR
    LOG.info(f"{cfg.kind}: verdict {result.verdict or 'complete'} (exit {result.exit_code})")
    return result.exit_code
