"""renormlab: desk-scale numerical checks for renormalized stochastic
continuity equations with irregular drift.

The package is organised around the estimates it probes:

- ``field``       periodic grids, mollifiers, spectral calculus
- ``commutator``  mollifier commutators and their vanishing limits
- ``parabolic``   resolvent-scale backward heat solves and decay studies
- ``flow``        stochastic flows, variational systems, pushforward solutions
- ``weakform``    renormalized weak-form ledgers and stability envelopes
- ``zvonkin``     drift-straightening diffeomorphisms and transformed residuals
- ``lab``         experiment runner and the acceptance suite
"""

from __future__ import annotations

__version__ = "0.1.0"
