"""Warping functions, effective potentials and trapping classification."""

from .warp import WarpSpec, PotentialProfile, effective_potential, full_potential, check_gevrey
from .trapping import CriticalComponent, ScalingLaw, TrappingReport, classify_profile, classify_warp, law_at_energy

__all__ = [
    "WarpSpec",
    "PotentialProfile",
    "effective_potential",
    "full_potential",
    "check_gevrey",
    "CriticalComponent",
    "ScalingLaw",
    "TrappingReport",
    "classify_profile",
    "classify_warp",
    "law_at_energy",
]
