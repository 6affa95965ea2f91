"""Discretized 1D operators, cutoff resolvent norms, fits and quasimodes.

Import the submodules directly; `domain.warp` depends on `numerics.discretize`
while it is still loading.
"""
