"""Named coefficient presets shared by configs, scripts, and the acceptance suite.

Each builder returns plain grid fields; experiment plumbing decides how to
sample them in time.  The random profiles draw from fixed derivation
streams, so a preset is a pure function of its grid and the master seed --
re-running anywhere reproduces the same coefficients bitwise.

    constant         b = c e_1 (spatially and temporally constant)
    trig_flow        random low-mode 1-d drift, gentle compressible noise
    drift_dominated  strong 1-d drift with faint noise (refinement studies)
    divfree_2d       rotation field of the stream function 2 cos x cos y
    decay_drift      rough-ish 1-d profile with a slow power-law tail
"""

from __future__ import annotations

import numpy as np

from .field import Grid, GridScalar, GridVector, TimeGridVector, build_grid
from .rng import stream

__all__ = [
    "PRESET_TAGS",
    "constant_drift",
    "trig_flow_drift",
    "trig_flow_noise",
    "drift_dominated_drift",
    "drift_dominated_noise",
    "divfree_2d_drift",
    "divfree_2d_noise",
    "decay_drift",
    "default_datum",
    "sample_constant_in_time",
]

PRESET_TAGS = (
    "constant",
    "trig_flow",
    "drift_dominated",
    "divfree_2d",
    "decay",
)


def sample_constant_in_time(gv: GridVector, T: float, steps: int) -> TimeGridVector:
    """Hold one spatial slice on a uniform time grid of the given step count."""
    times = np.linspace(0.0, float(T), steps + 1)
    return TimeGridVector(gv.grid, times, [gv] * (steps + 1))


def constant_drift(grid: Grid, c: float = 0.8) -> GridVector:
    values = [float(c)] + [0.0] * (grid.dim - 1)
    return GridVector.constant(grid, values)


def trig_flow_drift(grid: Grid, master_seed: int = 3) -> GridVector:
    """Random two-mode profile, amplitudes 0.6/k, drawn from stream (seed, 0)."""
    if grid.dim != 1:
        raise ValueError("trig_flow preset is one-dimensional")
    rng = stream(master_seed, 0)
    x = grid.axis_coordinates()
    prof = np.zeros(grid.shape)
    for k in (1, 2):
        a = rng.uniform(-1.0, 1.0)
        b = rng.uniform(-1.0, 1.0)
        prof += 0.6 / k * (a * np.sin(k * x) + b * np.cos(k * x))
    return GridVector(grid, prof[None, :])


def trig_flow_noise(grid: Grid) -> list[GridVector]:
    x = grid.axis_coordinates()
    return [GridVector(grid, (0.4 + 0.3 * np.sin(x + 1.0))[None, :])]


def drift_dominated_drift(grid: Grid) -> GridVector:
    x = grid.axis_coordinates()
    return GridVector(grid, (0.5 + 2.0 * np.sin(x + 0.7))[None, :])


def drift_dominated_noise(grid: Grid) -> list[GridVector]:
    x = grid.axis_coordinates()
    return [GridVector(grid, (0.05 * (1.0 + 0.5 * np.sin(x + 1.0)))[None, :])]


def divfree_2d_drift(grid: Grid, amplitude: float = 2.0) -> GridVector:
    """Rotation field of psi = amplitude cos x cos y; divergence-free."""
    if grid.dim != 2:
        raise ValueError("divfree_2d preset is two-dimensional")
    xx, yy = grid.coordinates()
    return GridVector(
        grid,
        np.stack(
            [-amplitude * np.cos(xx) * np.sin(yy), amplitude * np.sin(xx) * np.cos(yy)]
        ),
    )


def unit_noise(grid: Grid) -> list[GridVector]:
    """One constant coordinate field per direction (sigma^k = e_k)."""
    out = []
    for k in range(grid.dim):
        values = [0.0] * grid.dim
        values[k] = 1.0
        out.append(GridVector.constant(grid, values))
    return out


def divfree_2d_noise(grid: Grid) -> list[GridVector]:
    """Unit noise; together with the rotation drift the flow is measure-preserving."""
    return unit_noise(grid)


def decay_drift(grid: Grid, master_seed: int = 9, modes: int = 30) -> GridVector:
    """Strong first mode plus a k^{-1/4} tail, phases from stream (seed, 0)."""
    if grid.dim != 1:
        raise ValueError("decay preset is one-dimensional")
    rng = stream(master_seed, 0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=modes)
    x = grid.axis_coordinates()
    prof = 5.0 * np.sin(x + phases[0])
    for k in range(2, modes + 1):
        prof += k**-0.25 * np.sin(k * x + phases[k - 1])
    return GridVector(grid, prof[None, :])


def default_datum(grid: Grid) -> GridScalar:
    """1 + (1/2) product of axis sines: positive, mean one, mode-one ripple."""
    if grid.dim == 1:
        return GridScalar.from_function(grid, lambda x: 1.0 + 0.5 * np.sin(x))
    return GridScalar.from_function(grid, lambda x, y: 1.0 + 0.5 * np.sin(x) * np.sin(y))
