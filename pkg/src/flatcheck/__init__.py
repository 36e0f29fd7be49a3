"""flatcheck: symbolic analysis of control-affine systems.

Decides local static feedback equivalence to the chained-compatible
triangular forms, verifies (minimal) x-flat-output candidates, computes
singular control sets, constructs and validates chained-form coordinates,
and closes the loop numerically by reconstructing states and controls from
flat-output trajectories.
"""

__version__ = "0.1.0"
