"""Periodic grids, fields, mollifiers, and spectral calculus.

Everything downstream works on a periodic box [0, L)^n, n in {1, 2}, with N
uniformly spaced nodes per axis.  Test data is kept in the central half of the
box so that compactly-supported arguments survive the torus truncation.

Derivatives are Fourier multipliers, convolutions are FFT products scaled by
the quadrature weight h^n, and the mollifier is the classic bump

    eta(x) = c * exp(-1 / (1 - |x|^2))   on |x| < 1,

rescaled to eta_eps(x) = eps^{-n} eta(x/eps) and renormalized so the *discrete*
integral is exactly 1 (this removes a spurious O(h^2) offset from every
commutator limit measured on top of it).
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

__all__ = [
    "Grid",
    "GridScalar",
    "GridVector",
    "TimeGridVector",
    "MollifierKernel",
    "BoxRegion",
    "build_grid",
    "central_half",
    "mollifier",
    "convolve",
    "spectral_derivative",
    "lp_norm",
    "kernel_moment",
    "bump_values",
]


class FieldError(ValueError):
    """Raised on grid/field contract violations."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, L)^n with nodes {0, h, ..., L-h}^n."""

    dim: int
    L: float
    N: int

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis_coordinates(self) -> np.ndarray:
        """Node coordinates along one axis: 0, h, ..., L-h."""
        return np.arange(self.N) * self.h

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid ('ij') of node coordinates, one array per axis."""
        axes = [self.axis_coordinates()] * self.dim
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def wrapped_coordinates(self) -> tuple[np.ndarray, ...]:
        """Coordinates folded to [-L/2, L/2), measured from the origin node.

        The fold is done in exact integer index arithmetic so that the mirror
        node of x carries exactly -x (bitwise), which makes even symmetry of
        the mollifier exact rather than approximate.
        """
        idx = np.arange(self.N)
        signed = np.where(idx < self.N - idx, idx, idx - self.N)
        axis = signed * self.h
        axes = [axis] * self.dim
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def points(self) -> np.ndarray:
        """All nodes as an (N^dim, dim) array in C order."""
        mesh = self.coordinates()
        return np.stack([m.ravel() for m in mesh], axis=-1)


def build_grid(dim: int, L: float, N: int) -> Grid:
    if dim not in (1, 2):
        raise FieldError(f"dim must be 1 or 2, got {dim}")
    if L <= 0:
        raise FieldError(f"box size must be positive, got {L}")
    if N < 8 or N % 2 != 0:
        raise FieldError(f"N must be even and >= 8 (aliasing hazard), got {N}")
    return Grid(dim=int(dim), L=float(L), N=int(N))


def _require_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise FieldError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass
class GridScalar:
    """Scalar field sampled on the grid nodes, shape (N,)*dim."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise FieldError(
                f"scalar values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise FieldError("scalar field contains non-finite values")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "GridScalar":
        return cls(grid, np.asarray(fn(*grid.coordinates()), dtype=np.float64))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "GridScalar":
        return cls(grid, np.full(grid.shape, float(c)))


@dataclass
class GridVector:
    """Vector field on the grid; values shape (dim, N, ...), component-major."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.dim,) + self.grid.shape
        if self.values.shape != expected:
            raise FieldError(
                f"vector values shape {self.values.shape} != expected {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise FieldError("vector field contains non-finite values")

    def component(self, i: int) -> GridScalar:
        return GridScalar(self.grid, self.values[i])

    @classmethod
    def from_functions(cls, grid: Grid, fns) -> "GridVector":
        mesh = grid.coordinates()
        comps = [np.asarray(fn(*mesh), dtype=np.float64) for fn in fns]
        return cls(grid, np.stack(comps, axis=0))

    @classmethod
    def constant(cls, grid: Grid, c) -> "GridVector":
        c = np.asarray(c, dtype=np.float64).reshape(grid.dim)
        vals = np.empty((grid.dim,) + grid.shape)
        for i in range(grid.dim):
            vals[i].fill(c[i])
        return cls(grid, vals)


@dataclass
class TimeGridVector:
    """Time-sliced vector field: slices[j] sampled at times[j].

    Times are strictly increasing with times[0] = 0; the last entry is the
    horizon T.  Left-slice lookup (`slice_at`) matches the left-endpoint/Ito
    convention used by every quadrature in the package.
    """

    grid: Grid
    times: np.ndarray
    slices: list = dataclass_field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise FieldError("need at least two time samples (0 and T)")
        if self.times[0] != 0.0:
            raise FieldError(f"first time must be 0, got {self.times[0]}")
        if not np.all(np.diff(self.times) > 0):
            raise FieldError("times must be strictly increasing")
        for s in self.slices:
            if s.grid != self.grid:
                raise FieldError("slice grid mismatch")
        if len(self.slices) != len(self.times):
            raise FieldError(
                f"{len(self.slices)} slices vs {len(self.times)} times"
            )

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def slice_at(self, t: float) -> GridVector:
        """Slice at the largest sample time <= t (left-endpoint convention)."""
        j = int(np.searchsorted(self.times, t + 1e-12 * max(self.T, 1.0), side="right") - 1)
        if j < 0 or t > self.T * (1 + 1e-12):
            raise FieldError(f"time {t} outside [0, {self.T}]")
        return self.slices[j]

    def index_of(self, t: float) -> int:
        j = int(round(t / (self.times[1] - self.times[0])))
        if j < 0 or j >= len(self.times) or abs(self.times[j] - t) > 1e-9 * max(self.T, 1.0):
            raise FieldError(f"time {t} not on the sample grid")
        return j

    @classmethod
    def constant_in_time(cls, gv: GridVector, T: float, steps: int = 1) -> "TimeGridVector":
        times = np.linspace(0.0, T, steps + 1)
        return cls(gv.grid, times, [gv] * (steps + 1))

    @classmethod
    def from_function(cls, grid: Grid, times, fns_of_t) -> "TimeGridVector":
        """fns_of_t(t) must return a list of per-component callables."""
        times = np.asarray(times, dtype=np.float64)
        slices = [GridVector.from_functions(grid, fns_of_t(t)) for t in times]
        return cls(grid, times, slices)


# ---------------------------------------------------------------------------
# Spectral machinery
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _wavenumbers(dim: int, L: float, N: int) -> tuple[np.ndarray, ...]:
    """Per-axis angular wavenumbers broadcast to the field shape."""
    k1 = 2.0 * np.pi * np.fft.fftfreq(N, d=L / N)
    out = []
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = N
        out.append(k1.reshape(shape))
    return tuple(out)


@functools.lru_cache(maxsize=64)
def _derivative_multiplier(dim: int, L: float, N: int, multi_index: tuple[int, ...]) -> np.ndarray:
    """Fourier multiplier for the mixed derivative d^beta.

    The Nyquist mode is zeroed for odd per-axis orders so derivatives of real
    fields stay exactly real and spectral summation-by-parts is exact.
    """
    ks = _wavenumbers(dim, L, N)
    mult = np.ones((N,) * dim, dtype=np.complex128)
    for axis, order in enumerate(multi_index):
        if order == 0:
            continue
        k = ks[axis].copy()
        if order % 2 == 1:
            nyq_index = [slice(None)] * dim
            nyq_index[axis] = N // 2
            k[tuple(nyq_index)] = 0.0
        mult = mult * (1j * k) ** order
    return mult


def spectral_derivative(f: GridScalar, multi_index) -> GridScalar:
    """Mixed partial derivative d^beta f via Fourier multiplier.

    multi_index is a length-dim tuple of per-axis orders with total order <= 2.
    """
    beta = tuple(int(b) for b in multi_index)
    if len(beta) != f.grid.dim:
        raise FieldError(f"multi_index length {len(beta)} != dim {f.grid.dim}")
    if any(b < 0 for b in beta) or sum(beta) > 2:
        raise FieldError(f"derivative order {beta} unsupported (total order <= 2)")
    if sum(beta) == 0:
        return GridScalar(f.grid, f.values.copy())
    g = f.grid
    mult = _derivative_multiplier(g.dim, g.L, g.N, beta)
    out = np.fft.ifftn(mult * np.fft.fftn(f.values)).real
    return GridScalar(g, out)


def gradient(f: GridScalar) -> GridVector:
    g = f.grid
    comps = []
    for axis in range(g.dim):
        beta = [0] * g.dim
        beta[axis] = 1
        comps.append(spectral_derivative(f, beta).values)
    return GridVector(g, np.stack(comps, axis=0))


def divergence(v: GridVector) -> GridScalar:
    g = v.grid
    total = np.zeros(g.shape)
    for axis in range(g.dim):
        beta = [0] * g.dim
        beta[axis] = 1
        total += spectral_derivative(GridScalar(g, v.values[axis]), beta).values
    return GridScalar(g, total)


def jacobian(v: GridVector) -> np.ndarray:
    """All first partials of a vector field: out[i, j] = d_j v_i, each a grid array."""
    g = v.grid
    out = np.empty((g.dim, g.dim) + g.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            beta = [0] * g.dim
            beta[j] = 1
            out[i, j] = spectral_derivative(GridScalar(g, v.values[i]), beta).values
    return out


# ---------------------------------------------------------------------------
# Mollifier
# ---------------------------------------------------------------------------

def bump_values(r2_over_rad2: np.ndarray) -> np.ndarray:
    """Un-normalized C^inf bump exp(-1/(1-u)) evaluated at u = |x|^2/r^2.

    Returns 0 outside u < 1; the exponential underflows smoothly near the
    edge, so support is exactly the open ball.
    """
    u = np.asarray(r2_over_rad2, dtype=np.float64)
    out = np.zeros(u.shape)
    inside = u < 1.0
    with np.errstate(over="ignore", divide="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
    return out


@dataclass
class MollifierKernel:
    """Discrete eta_eps: nonnegative, unit discrete mass, support in |x| <= eps."""

    grid: Grid
    epsilon: float
    values: np.ndarray

    def as_scalar(self) -> GridScalar:
        return GridScalar(self.grid, self.values)


def mollifier(grid: Grid, epsilon: float) -> MollifierKernel:
    eps = float(epsilon)
    if eps < 2.0 * grid.h:
        raise FieldError(f"epsilon {eps} below resolution 2h = {2 * grid.h}")
    if eps > grid.L / 4.0:
        raise FieldError(f"epsilon {eps} above box quarter-width {grid.L / 4.0}")
    mesh = grid.wrapped_coordinates()
    r2 = np.zeros(grid.shape)
    for x in mesh:
        r2 += x * x
    vals = bump_values(r2 / (eps * eps))
    mass = vals.sum() * grid.cell_volume
    vals = vals / mass
    return MollifierKernel(grid=grid, epsilon=eps, values=vals)


def convolve(kernel: MollifierKernel, f: GridScalar) -> GridScalar:
    """Periodic convolution (eta_eps * f)(x) = h^n sum_y eta_eps(x-y) f(y)."""
    _require_same_grid(kernel.as_scalar(), f)
    g = f.grid
    out = np.fft.ifftn(np.fft.fftn(kernel.values) * np.fft.fftn(f.values)).real
    return GridScalar(g, out * g.cell_volume)


def kernel_moment(kernel: MollifierKernel, power_index, deriv_index) -> float:
    """Discrete moment  h^n sum_x  x^alpha (d^beta eta_eps)(x), x wrapped to [-L/2, L/2)."""
    alpha = tuple(int(a) for a in power_index)
    beta = tuple(int(b) for b in deriv_index)
    g = kernel.grid
    if len(alpha) != g.dim or len(beta) != g.dim:
        raise FieldError("moment index length mismatch")
    if sum(alpha) > 2 or sum(beta) > 2 or min(alpha) < 0 or min(beta) < 0:
        raise FieldError("moment indices limited to total order <= 2")
    deriv = spectral_derivative(kernel.as_scalar(), beta).values
    weight = np.ones(g.shape)
    for x, a in zip(g.wrapped_coordinates(), alpha):
        if a:
            weight = weight * x**a
    return float((weight * deriv).sum() * g.cell_volume)


# ---------------------------------------------------------------------------
# Norms and regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned sub-box [lo_i, hi_i) used as the compact set K."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def mask(self, grid: Grid) -> np.ndarray:
        mesh = grid.coordinates()
        m = np.ones(grid.shape, dtype=bool)
        for x, lo, hi in zip(mesh, self.lo, self.hi):
            m &= (x >= lo - 1e-12) & (x < hi - 1e-12)
        return m


def central_half(grid: Grid) -> BoxRegion:
    return BoxRegion(
        lo=(grid.L / 4.0,) * grid.dim,
        hi=(3.0 * grid.L / 4.0,) * grid.dim,
    )


def lp_norm(f: GridScalar, p: float, region: BoxRegion | None = None) -> float:
    """L^p norm by h^n-weighted quadrature; sup norm for p = inf."""
    if p < 1:
        raise FieldError(f"p must be >= 1, got {p}")
    vals = f.values
    if region is not None:
        vals = vals[region.mask(f.grid)]
    a = np.abs(vals)
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    return float((a**p).sum() * f.grid.cell_volume) ** (1.0 / p)


def inner(f: GridScalar, g: GridScalar) -> float:
    """Duality pairing <f, g> = h^n sum f g."""
    _require_same_grid(f, g)
    return float((f.values * g.values).sum() * f.grid.cell_volume)


def spectral_energy(f: GridScalar) -> float:
    """h^n-normalized spectral energy; equals ||f||_2^2 by Parseval."""
    g = f.grid
    fhat = np.fft.fftn(f.values)
    return float((np.abs(fhat) ** 2).sum() * g.cell_volume / g.N**g.dim)


# ---------------------------------------------------------------------------
# Serialization (.fld)
# ---------------------------------------------------------------------------

def _field_payload(obj) -> tuple[dict, np.ndarray]:
    if isinstance(obj, GridScalar):
        header = {"components": 1, "times": []}
        data = obj.values[None, ...]
        grid = obj.grid
    elif isinstance(obj, GridVector):
        header = {"components": obj.grid.dim, "times": []}
        data = obj.values
        grid = obj.grid
    elif isinstance(obj, TimeGridVector):
        header = {"components": obj.grid.dim, "times": [float(t) for t in obj.times]}
        data = np.stack([s.values for s in obj.slices], axis=0)
        grid = obj.grid
    else:
        raise FieldError(f"cannot serialize {type(obj).__name__} as a field")
    header.update({"dim": grid.dim, "L": grid.L, "N": grid.N})
    return header, np.ascontiguousarray(data, dtype="<f8")


def save_field(path, obj) -> None:
    """Write a field: one-line JSON header, then flat little-endian float64."""
    header, data = _field_payload(obj)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(data.tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    grid = build_grid(header["dim"], header["L"], header["N"])
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    times = header["times"]
    comps = header["components"]
    per_slice = comps * grid.N**grid.dim
    if times:
        data = data.reshape((len(times), comps) + grid.shape)
        slices = [GridVector(grid, data[j]) for j in range(len(times))]
        return TimeGridVector(grid, np.asarray(times), slices)
    if comps == 1:
        return GridScalar(grid, data.reshape(grid.shape))
    return GridVector(grid, data.reshape((comps,) + grid.shape))
