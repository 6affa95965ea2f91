"""Experiment configuration files (TOML, schema_version = 1).

`load_config` only parses; `validate` does the static checks and returns
line-anchored diagnostics instead of raising. The typed accessors on
ExperimentConfig raise ConfigError naming the offending field, which
`validate` turns into diagnostics.
"""

from __future__ import annotations

import math
import os
import re
import tomllib
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..domain.constants import (
    BC_CHOICES,
    BC_DIRICHLET,
    DEFAULT_SEED,
    EXPERIMENT_BILLIARD,
    EXPERIMENT_CHOICES,
    EXPERIMENT_GEVREY,
    EXPERIMENT_GLUE,
    EXPERIMENT_QUASIMODE,
    EXPERIMENT_SWEEP,
    FAMILY_RAW_POTENTIAL,
    MODEL_POWER_LOG,
    MODEL_PURE_POWER,
    SCHEMA_VERSION,
    WING_POWER,
)
from ..domain.trapping import CLASSIFY_HALF_WIDTH, CLASSIFY_SPACING, DEFAULT_M_CAP
from ..domain.warp import RawTable, WarpSpec
from ..errors import ConfigError
from ..logging import get_logger
from ..numerics.discretize import CapProfile, Grid, GridError
from ..numerics.fit import DEFAULT_TOL_GAMMA
from ..numerics.resolvent import DEFAULT_MAX_ITER, DEFAULT_TOL, CutoffSpec
from .billiard import WingSpec

LOG = get_logger("settings")

MODEL_AUTO = "auto"
MODEL_CHOICES: Tuple[str, ...] = (MODEL_AUTO, MODEL_PURE_POWER, MODEL_POWER_LOG)

DEFAULT_SWEEP_H = tuple(float(h) for h in np.geomspace(1.0 / 50.0, 1.0 / 400.0, 7))
DEFAULT_QUASIMODE_H = (1.0 / 40.0, 1.0 / 60.0, 1.0 / 80.0)
DEFAULT_GLUE_H = 1.0 / 100.0
DEFAULT_K_LIST = (8, 16, 24, 32, 40, 48, 56, 64)

SECTION_KEYS: Dict[str, frozenset] = {
    "potential": frozenset({"family", "params", "n", "tau", "eps", "r_short", "x", "v0", "v1"}),
    "grid": frozenset({"half_width", "spacing"}),
    "cap": frozenset({"strength", "width_fraction", "ramp_power", "half_width"}),
    "sweep": frozenset({"h_list", "h_min", "h_max", "h_points", "z", "tol", "max_iter"}),
    "scan": frozenset({"z_list", "z_min", "z_max", "z_points"}),
    "cutoff": frozenset({"center", "inner_radius", "taper_width"}),
    "fit": frozenset({"tol_gamma", "model"}),
    "classify": frozenset({"deriv_tol", "merge_width", "m_cap"}),
    "quasimode": frozenset({"h_list", "h_min", "h_max", "h_points", "delta0", "beta", "order", "cross_check", "weyl"}),
    "glue": frozenset({"h", "z"}),
    "billiard": frozenset({"a", "bc", "k_list", "wing", "left", "right", "regimes", "control"}),
    "gevrey": frozenset({"x0", "k_max", "sample_xs", "sample_range"}),
    "output": frozenset({"dir"}),
}
TOP_KEYS = frozenset({"schema_version", "kind", "seed"})
WING_KEYS = frozenset({"kind", "c", "q", "p", "outward"})

NEEDS_POTENTIAL = frozenset(set(EXPERIMENT_CHOICES) - {EXPERIMENT_BILLIARD})


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str
    line: Optional[int] = None

    def format(self, path: Optional[str] = None) -> str:
        where = f"{path or '<config>'}:{self.line}" if self.line else (path or "<config>")
        return f"{where}: {self.field}: {self.message}"


class FieldError(ConfigError):
    """ConfigError tied to one config field."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.detail = message


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=")


def line_of(text: str, field_name: str) -> Optional[int]:
    """1-based line of `section.key` (or of the section header, or a top-level key)."""
    if not text:
        return None
    section, _, key = field_name.partition(".")
    if not key:
        section, key = "", section
    key = key.split(".")[0]
    current = ""
    header_line: Optional[int] = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1).split(".")[0]
            if current == section and header_line is None:
                header_line = i
            continue
        if current == section:
            k = _KEY.match(line)
            if k and k.group(1) == key:
                return i
    if section == "" and key in SECTION_KEYS:
        for i, line in enumerate(text.splitlines(), start=1):
            m = _HEADER.match(line)
            if m and m.group(1).split(".")[0] == key:
                return i
    return header_line


def _log_space(h_max: float, h_min: float, n: int) -> List[float]:
    return [float(h) for h in np.geomspace(h_max, h_min, n)]


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = DEFAULT_SEED
    schema_version: int = SCHEMA_VERSION
    sections: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    text: str = ""
    path: Optional[str] = None
    h_points: Optional[int] = None
    output_dir: Optional[str] = None

    # ----- raw access -----

    def section(self, name: str) -> Mapping[str, Any]:
        sec = self.sections.get(name, {})
        if not isinstance(sec, Mapping):
            raise FieldError(name, "must be a table")
        return sec

    def _get(self, section: str, key: str, default: Any = None) -> Any:
        return self.section(section).get(key, default)

    def _num(self, section: str, key: str, default: Any = None, *, positive: bool = False, integer: bool = False) -> Any:
        v = self._get(section, key, default)
        name = f"{section}.{key}"
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise FieldError(name, f"must be a number, got {v!r}")
        if integer and int(v) != v:
            raise FieldError(name, f"must be an integer, got {v!r}")
        if not math.isfinite(float(v)):
            raise FieldError(name, "must be finite")
        if positive and not v > 0:
            raise FieldError(name, f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    def _num_list(self, section: str, key: str) -> Optional[List[float]]:
        v = self._get(section, key)
        if v is None:
            return None
        name = f"{section}.{key}"
        if not isinstance(v, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in v):
            raise FieldError(name, "must be a list of numbers")
        return [float(t) for t in v]

    def _flag(self, section: str, key: str, default: bool) -> bool:
        v = self._get(section, key, default)
        if not isinstance(v, bool):
            raise FieldError(f"{section}.{key}", f"must be true or false, got {v!r}")
        return v

    # ----- typed views -----

    def warp_spec(self) -> WarpSpec:
        sec = self.section("potential")
        if not sec:
            raise FieldError("potential", f"experiment {self.kind!r} needs a [potential] section")
        family = sec.get("family")
        if not isinstance(family, str):
            raise FieldError("potential.family", "missing or not a string")
        params = sec.get("params", {})
        if not isinstance(params, Mapping) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in params.values()):
            raise FieldError("potential.params", "must be a table of numbers")
        table = None
        if family == FAMILY_RAW_POTENTIAL:
            xs, v0, v1 = self._num_list("potential", "x"), self._num_list("potential", "v0"), self._num_list("potential", "v1")
            if not xs or not v0:
                raise FieldError("potential.x", "raw_potential needs x and v0 arrays")
            if len(xs) != len(v0) or (v1 is not None and len(v1) != len(xs)):
                raise FieldError("potential.v0", "x, v0 and v1 must have equal length")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise FieldError("potential.x", "must be strictly increasing")
            table = RawTable(tuple(xs), tuple(v0), None if v1 is None else tuple(v1))
        kwargs: Dict[str, Any] = {}
        for key in ("n",):
            if key in sec:
                kwargs[key] = self._num("potential", key, integer=True)
        for key in ("tau", "eps", "r_short"):
            if key in sec:
                kwargs[key] = self._num("potential", key, positive=True)
        try:
            return WarpSpec.make(family, dict(params), table=table, **kwargs)
        except ConfigError as e:
            raise FieldError("potential.family" if "family" in str(e) else "potential", str(e)) from e

    def classification_grid(self) -> Grid:
        half = self._num("grid", "half_width", CLASSIFY_HALF_WIDTH, positive=True)
        spacing = self._num("grid", "spacing", CLASSIFY_SPACING, positive=True)
        try:
            return Grid.symmetric(half, int(round(2.0 * half / spacing)) + 1)
        except GridError as e:
            raise FieldError("grid", str(e)) from e

    def classify_kwargs(self) -> Dict[str, Any]:
        return {
            "deriv_tol": self._num("classify", "deriv_tol", positive=True),
            "merge_width": self._num("classify", "merge_width", positive=True),
            "m_cap": self._num("classify", "m_cap", DEFAULT_M_CAP, positive=True, integer=True),
        }

    def cap_profile(self) -> CapProfile:
        try:
            return CapProfile(
                strength=self._num("cap", "strength", 1.0),
                width_fraction=self._num("cap", "width_fraction", 0.15),
                ramp_power=self._num("cap", "ramp_power", 3, integer=True),
            )
        except GridError as e:
            raise FieldError("cap", str(e)) from e

    def cap_half_width(self) -> Optional[float]:
        return self._num("cap", "half_width", positive=True)

    def cutoff(self) -> Optional[CutoffSpec]:
        if not self.section("cutoff"):
            return None
        try:
            return CutoffSpec(
                center=self._num("cutoff", "center", 0.0),
                inner_radius=self._num("cutoff", "inner_radius", 1.0),
                taper_width=self._num("cutoff", "taper_width", 0.5),
            )
        except ConfigError as e:
            raise FieldError("cutoff", str(e)) from e

    def _h_list(self, section: str, default: Sequence[float]) -> List[float]:
        """Explicit h_list, else log-spaced from h_max/h_min/h_points, else the default list.

        A --h-points override re-spaces whatever range results.
        """
        hs = self._num_list(section, "h_list")
        h_max = self._num(section, "h_max", positive=True)
        h_min = self._num(section, "h_min", positive=True)
        n = self.h_points or self._num(section, "h_points", positive=True, integer=True)
        if hs is None:
            if h_max is None and h_min is None and n is None:
                hs = list(default)
            else:
                h_max = h_max or max(default)
                h_min = h_min or min(default)
                if not h_min < h_max:
                    raise FieldError(f"{section}.h_min", "must be below h_max")
                hs = _log_space(h_max, h_min, n or len(default))
        elif n is not None and len(hs) >= 2:
            hs = _log_space(max(hs), min(hs), n)
        if not hs:
            raise FieldError(f"{section}.h_list", "is empty")
        if any(h <= 0 for h in hs):
            raise FieldError(f"{section}.h_list", "must be positive")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise FieldError(f"{section}.h_list", "h_list must be decreasing")
        return hs

    def sweep_h_list(self) -> List[float]:
        return self._h_list("sweep", DEFAULT_SWEEP_H)

    def sweep_z(self) -> Optional[float]:
        return self._num("sweep", "z")

    def solver_options(self) -> Dict[str, Any]:
        return {
            "tol": self._num("sweep", "tol", DEFAULT_TOL, positive=True),
            "max_iter": self._num("sweep", "max_iter", DEFAULT_MAX_ITER, positive=True, integer=True),
            "seed": int(self.seed),
        }

    def scan_z_list(self) -> Optional[List[float]]:
        if not self.section("scan"):
            return None
        zs = self._num_list("scan", "z_list")
        if zs is None:
            lo, hi = self._num("scan", "z_min"), self._num("scan", "z_max")
            n = self._num("scan", "z_points", 9, positive=True, integer=True)
            if lo is None or hi is None:
                raise FieldError("scan", "needs z_list or z_min and z_max")
            if not lo < hi:
                raise FieldError("scan.z_min", "must be below z_max")
            zs = [float(z) for z in np.linspace(lo, hi, n)]
        if not zs:
            raise FieldError("scan.z_list", "is empty")
        return zs

    def fit_options(self) -> Tuple[float, str]:
        tol = self._num("fit", "tol_gamma", DEFAULT_TOL_GAMMA, positive=True)
        model = self._get("fit", "model", MODEL_AUTO)
        if model not in MODEL_CHOICES:
            raise FieldError("fit.model", f"must be one of {', '.join(MODEL_CHOICES)}, got {model!r}")
        return tol, model

    def quasimode_options(self) -> Dict[str, Any]:
        return {
            "h_list": self._h_list("quasimode", DEFAULT_QUASIMODE_H),
            "delta0": self._num("quasimode", "delta0", positive=True),
            "beta": self._num("quasimode", "beta", 1.0, positive=True),
            "order": self._num("quasimode", "order", 4, positive=True, integer=True),
            "cross_check": self._flag("quasimode", "cross_check", True),
            "weyl": self._flag("quasimode", "weyl", True),
        }

    def glue_options(self) -> Dict[str, Any]:
        return {"h": self._num("glue", "h", DEFAULT_GLUE_H, positive=True), "z": self._num("glue", "z")}

    def _wing(self, key: str) -> Mapping[str, Any]:
        sec = self.section("billiard")
        w = sec.get(key, sec.get("wing", {}))
        if not isinstance(w, Mapping):
            raise FieldError(f"billiard.{key}", "must be a table")
        unknown = set(w) - WING_KEYS
        if unknown:
            raise FieldError(f"billiard.{key}", f"unknown key(s): {', '.join(sorted(unknown))}")
        return w

    def billiard_options(self) -> Dict[str, Any]:
        sec = self.section("billiard")
        if not sec:
            raise FieldError("billiard", "experiment 'billiard' needs a [billiard] section")
        a = self._num("billiard", "a", positive=True)
        if a is None:
            raise FieldError("billiard.a", "rectangle half-width is required")
        bc = sec.get("bc", BC_DIRICHLET)
        if bc not in BC_CHOICES:
            raise FieldError("billiard.bc", f"must be one of {', '.join(BC_CHOICES)}, got {bc!r}")
        ks = self._num_list("billiard", "k_list")
        k_list = list(DEFAULT_K_LIST) if ks is None else [int(k) for k in ks]
        if any(k < 1 or int(k) != k for k in (ks or k_list)):
            raise FieldError("billiard.k_list", "must hold positive integers")
        wings = {}
        for side in ("left", "right"):
            w = self._wing(side)
            wings[side] = {
                "kind": w.get("kind", WING_POWER),
                "c": float(w.get("c", 1.0)),
                "q": float(w.get("q", 2.0)),
                "p": float(w.get("p", 1.0)),
                "outward": bool(w.get("outward", True)),
            }
        return {
            "a": a,
            "bc": bc,
            "k_list": k_list,
            "left": wings["left"],
            "right": wings["right"],
            "regimes": self._flag("billiard", "regimes", True),
            "control": self._flag("billiard", "control", False),
        }

    def gevrey_options(self) -> Dict[str, Any]:
        x0 = self._num("gevrey", "x0", 0.0)
        k_max = self._num("gevrey", "k_max", 4, positive=True, integer=True)
        xs = self._num_list("gevrey", "sample_xs")
        if xs is None:
            rng = self._num_list("gevrey", "sample_range")
            if rng is None:
                raise FieldError("gevrey", "needs sample_xs or sample_range = [lo, hi, n]")
            if len(rng) != 3 or int(rng[2]) != rng[2] or rng[2] < 3:
                raise FieldError("gevrey.sample_range", "must be [lo, hi, n] with integer n >= 3")
            xs = [float(x) for x in np.linspace(rng[0], rng[1], int(rng[2]))]
        return {"x0": x0, "k_max": k_max, "sample_xs": xs}

    def output_directory(self) -> Optional[str]:
        if self.output_dir:
            return self.output_dir
        v = self._get("output", "dir")
        if v is not None and not isinstance(v, str):
            raise FieldError("output.dir", "must be a string")
        if v and self.path and not os.path.isabs(os.path.expanduser(v)):
            return os.path.join(os.path.dirname(os.path.abspath(self.path)), v)
        return v

    def with_overrides(self, *, kind: Optional[str] = None, seed: Optional[int] = None, h_points: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        return replace(
            self,
            kind=kind or self.kind,
            seed=self.seed if seed is None else int(seed),
            h_points=self.h_points if h_points is None else int(h_points),
            output_dir=output_dir or self.output_dir,
        )


def parse_config(text: str, path: Optional[str] = None) -> ExperimentConfig:
    """Parse TOML text; syntax errors raise ConfigError with the line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path or '<config>'}: invalid TOML: {e}") from e
    sections = {k: v for k, v in data.items() if k not in TOP_KEYS}
    kind = data.get("kind", "")
    seed = data.get("seed", DEFAULT_SEED)
    version = data.get("schema_version", SCHEMA_VERSION)
    return ExperimentConfig(
        kind=kind if isinstance(kind, str) else repr(kind),
        seed=seed if isinstance(seed, int) and not isinstance(seed, bool) else DEFAULT_SEED,
        schema_version=version if isinstance(version, int) else -1,
        sections=sections,
        text=text,
        path=path,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_config(raw.decode("utf-8"), path)
    LOG.debug(f"loaded config {path}: kind={cfg.kind!r} sections={sorted(cfg.sections)}")
    return cfg


def _diag(cfg: ExperimentConfig, field_name: str, message: str) -> Diagnostic:
    return Diagnostic(field=field_name, message=message, line=line_of(cfg.text, field_name))


def _guard(cfg: ExperimentConfig, out: List[Diagnostic], fn, *args) -> Any:
    try:
        return fn(*args)
    except FieldError as e:
        out.append(_diag(cfg, e.field, e.detail))
    except ConfigError as e:
        out.append(_diag(cfg, "config", str(e)))
    return None


def validate(cfg: ExperimentConfig) -> List[Diagnostic]:
    """Every static problem in the config; an empty list means runnable."""
    out: List[Diagnostic] = []
    if cfg.schema_version != SCHEMA_VERSION:
        out.append(_diag(cfg, "schema_version", f"unsupported schema_version {cfg.schema_version!r}; expected {SCHEMA_VERSION}"))
    if cfg.kind not in EXPERIMENT_CHOICES:
        out.append(_diag(cfg, "kind", f"unknown experiment kind {cfg.kind!r}; expected one of {', '.join(EXPERIMENT_CHOICES)}"))
        return out
    for name, sec in cfg.sections.items():
        if name not in SECTION_KEYS:
            out.append(_diag(cfg, name, "unknown section"))
            continue
        if not isinstance(sec, Mapping):
            out.append(_diag(cfg, name, "must be a table"))
            continue
        for key in sec:
            if key not in SECTION_KEYS[name]:
                out.append(_diag(cfg, f"{name}.{key}", "unknown key"))

    spec = None
    if cfg.kind in NEEDS_POTENTIAL:
        spec = _guard(cfg, out, cfg.warp_spec)
        _guard(cfg, out, cfg.classification_grid)
        _guard(cfg, out, cfg.classify_kwargs)
    cap = _guard(cfg, out, cfg.cap_profile)
    half = _guard(cfg, out, cfg.cap_half_width)
    chi = _guard(cfg, out, cfg.cutoff)
    _guard(cfg, out, cfg.fit_options)
    _guard(cfg, out, cfg.output_directory)

    if cfg.kind == EXPERIMENT_SWEEP:
        _guard(cfg, out, cfg.sweep_h_list)
        _guard(cfg, out, cfg.sweep_z)
        _guard(cfg, out, cfg.solver_options)
        _guard(cfg, out, cfg.scan_z_list)
    elif cfg.kind == EXPERIMENT_QUASIMODE:
        _guard(cfg, out, cfg.quasimode_options)
    elif cfg.kind == EXPERIMENT_GLUE:
        _guard(cfg, out, cfg.glue_options)
    elif cfg.kind == EXPERIMENT_BILLIARD:
        opts = _guard(cfg, out, cfg.billiard_options)
        if opts is not None:
            for side in ("left", "right"):
                _guard(cfg, out, lambda s=side: _checked_wing(opts[s], f"billiard.{s}"))
    elif cfg.kind == EXPERIMENT_GEVREY:
        _guard(cfg, out, cfg.gevrey_options)
        if spec is not None and spec.tau is None:
            out.append(_diag(cfg, "potential.tau", "the gevrey experiment needs a declared tau"))

    if cap is not None and half is not None and chi is not None:
        reach = abs(chi.center) + chi.support_radius
        if reach > half:
            out.append(
                _diag(
                    cfg,
                    "cutoff",
                    f"[cutoff] support reaches |x| = {reach:.4g}, inside the [cap] absorbing layer beyond |x| = {half:.4g}",
                )
            )
    if out:
        LOG.debug(f"validate: {len(out)} diagnostic(s)")
    return out


def _checked_wing(w: Mapping[str, Any], field_name: str) -> WingSpec:
    try:
        return WingSpec(**w)
    except ConfigError as e:
        raise FieldError(field_name, str(e)) from e
