from __future__ import annotations

from typing import Dict, Tuple

# Warp families.
FAMILY_CONSTANT_PLUS_BUMP = "constant_plus_bump"
FAMILY_DEGENERATE_BUMP = "degenerate_bump"
FAMILY_INFLECTION_PROFILE = "inflection_profile"
FAMILY_GEVREY_FLAT = "gevrey_flat"
FAMILY_CYLINDER_PLATEAU = "cylinder_plateau"
FAMILY_WELL_PROFILE = "well_profile"
FAMILY_POLYNOMIAL = "polynomial"
FAMILY_RAW_POTENTIAL = "raw_potential"

FAMILY_CHOICES: Tuple[str, ...] = (
    FAMILY_CONSTANT_PLUS_BUMP,
    FAMILY_DEGENERATE_BUMP,
    FAMILY_INFLECTION_PROFILE,
    FAMILY_GEVREY_FLAT,
    FAMILY_CYLINDER_PLATEAU,
    FAMILY_WELL_PROFILE,
    FAMILY_POLYNOMIAL,
    FAMILY_RAW_POTENTIAL,
)

# Default parameters per family; anything not listed is required.
FAMILY_DEFAULTS: Dict[str, Dict[str, float]] = {
    FAMILY_CONSTANT_PLUS_BUMP: {"c": 1.0, "amp": 0.0, "width": 1.0},
    FAMILY_DEGENERATE_BUMP: {"m": 2.0, "c": 1.0},
    FAMILY_INFLECTION_PROFILE: {"m2": 1.0, "m": 1.0, "x_infl": 1.0},
    FAMILY_GEVREY_FLAT: {"p": 2.0},
    FAMILY_CYLINDER_PLATEAU: {"half_length": 1.0, "w": 0.25},
    FAMILY_WELL_PROFILE: {"v_min": 0.5, "w": 8.0},
    FAMILY_POLYNOMIAL: {},
    FAMILY_RAW_POTENTIAL: {},
}

# Critical component kinds.
KIND_NONDEGENERATE_MAX = "nondegenerate_max"
KIND_DEGENERATE_MAX = "degenerate_max"
KIND_INFINITELY_DEGENERATE_MAX = "infinitely_degenerate_max"
KIND_CYLINDER_MAX = "cylinder_max"
KIND_INFLECTION = "inflection"
KIND_INFINITELY_DEGENERATE_INFLECTION = "infinitely_degenerate_inflection"
KIND_CYLINDER_INFLECTION = "cylinder_inflection"
KIND_LOCAL_MIN = "local_min"

KIND_CHOICES: Tuple[str, ...] = (
    KIND_NONDEGENERATE_MAX,
    KIND_DEGENERATE_MAX,
    KIND_INFINITELY_DEGENERATE_MAX,
    KIND_CYLINDER_MAX,
    KIND_INFLECTION,
    KIND_INFINITELY_DEGENERATE_INFLECTION,
    KIND_CYLINDER_INFLECTION,
    KIND_LOCAL_MIN,
)

KINDS_CYLINDER = frozenset({KIND_CYLINDER_MAX, KIND_CYLINDER_INFLECTION})
KINDS_INFINITE = frozenset({KIND_INFINITELY_DEGENERATE_MAX, KIND_INFINITELY_DEGENERATE_INFLECTION})

# Marker for an estimated order beyond the cap.
ORDER_INFINITE = "INFINITE"

# Scaling-law forms.
FORM_POWER = "power"
FORM_POWER_LOG = "power_log"
FORM_POWER_PLUS_ETA = "power_plus_eta"
FORM_SUPERPOLYNOMIAL = "superpolynomial"
FORM_NONTRAPPING = "nontrapping"
FORM_ELLIPTIC = "elliptic"

FORM_CHOICES: Tuple[str, ...] = (
    FORM_POWER,
    FORM_POWER_LOG,
    FORM_POWER_PLUS_ETA,
    FORM_SUPERPOLYNOMIAL,
    FORM_NONTRAPPING,
    FORM_ELLIPTIC,
)

# Global dichotomy.
CASE_ALMOST_BOUNDED = "case1_almost_bounded"
CASE_BLOWUP = "case2_blowup"

# Verdicts and their CLI exit codes.
VERDICT_CONSISTENT = "consistent"
VERDICT_INCONSISTENT = "inconsistent"
VERDICT_INCONCLUSIVE = "inconclusive"

VERDICT_CHOICES: Tuple[str, ...] = (VERDICT_CONSISTENT, VERDICT_INCONSISTENT, VERDICT_INCONCLUSIVE)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONSISTENT = 2
EXIT_INCONCLUSIVE = 3

VERDICT_EXIT_CODES: Dict[str, int] = {
    VERDICT_CONSISTENT: EXIT_OK,
    VERDICT_INCONSISTENT: EXIT_INCONSISTENT,
    VERDICT_INCONCLUSIVE: EXIT_INCONCLUSIVE,
}

# Fit models.
MODEL_PURE_POWER = "pure_power"
MODEL_POWER_LOG = "power_log"

# Billiard transverse boundary conditions and wing kinds.
BC_DIRICHLET = "dirichlet"
BC_NEUMANN = "neumann"
BC_CHOICES: Tuple[str, ...] = (BC_DIRICHLET, BC_NEUMANN)

WING_POWER = "power"
WING_GEVREY = "gevrey"
WING_FLAT = "flat"
WING_CHOICES: Tuple[str, ...] = (WING_POWER, WING_GEVREY, WING_FLAT)

# Experiment kinds.
EXPERIMENT_CLASSIFY = "classify"
EXPERIMENT_SWEEP = "sweep"
EXPERIMENT_QUASIMODE = "quasimode"
EXPERIMENT_GLUE = "glue"
EXPERIMENT_BILLIARD = "billiard"
EXPERIMENT_GEVREY = "gevrey"

EXPERIMENT_CHOICES: Tuple[str, ...] = (
    EXPERIMENT_CLASSIFY,
    EXPERIMENT_SWEEP,
    EXPERIMENT_QUASIMODE,
    EXPERIMENT_GLUE,
    EXPERIMENT_BILLIARD,
    EXPERIMENT_GEVREY,
)

SCHEMA_VERSION = 1
DEFAULT_SEED = 42
