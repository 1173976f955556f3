"""Compositional small-signal stability assessment for interconnected grids.

The toolkit designs local (pole-placement) and global (coupling-minimizing)
feedback for per-bus swing/turbine models, evaluates per-agent M-matrix
row conditions in original or modal coordinates, simulates the distributed
certification protocol between bus agents and a system operator, and
cross-checks every verdict against a full-system eigenvalue oracle.
"""

__version__ = "0.1.0"

from . import certify, control, gridmodel, linalg, protocol, sim  # noqa: F401
from .errors import GridcertError  # noqa: F401
