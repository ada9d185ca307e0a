"""Renormalizers, test functions, and weak-form residual ledgers.

The composition rule behind every renormalizer here: with

    G(z) = z Gamma'(z) - Gamma(z),      H(z) = z G'(z) - G(z),

a smooth solution of the conservative equation satisfies the renormalized
identity whose weak form is assembled term by term below.  Both derived
functions are evaluated from closed-form derivatives of Gamma, never by
numerical differentiation, so the pointwise identities are exact.

Residual ledgers integrate deterministic terms by left-endpoint quadrature
and stochastic terms by Ito sums against the driving path's own increments.
A ledger's residual is (pairing at time t) - (pairing at 0) - (sum of all
right-hand terms); for a true solution it vanishes as (dt, h) refine.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .field import (
    FieldError,
    Grid,
    GridScalar,
    GridVector,
    TimeGridVector,
    divergence,
    gradient,
    jacobian,
    spectral_derivative,
)
from .flow import BrownianPath

__all__ = [
    "WeakFormError",
    "Renormalizer",
    "TestFunction",
    "WeakFormLedger",
    "StabilitySeries",
    "make_renormalizer",
    "bump_test_function",
    "residual_original",
    "residual_renormalized",
    "weighted_l1_stability",
    "write_ledger_csv",
    "ORIGINAL_TERMS",
    "RENORMALIZED_TERMS",
]


class WeakFormError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Renormalizers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Renormalizer:
    """Gamma with closed-form first and second derivatives.

    g and h are the derived combinations; h uses G'(z) = z Gamma''(z), so
    h(z) = z^2 Gamma''(z) - z Gamma'(z) + Gamma(z).
    """

    tag: str
    gamma: object
    gamma_prime: object
    gamma_second: object
    epsilon: float | None = None

    def g(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z * self.gamma_prime(z) - self.gamma(z)

    def h(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z**2 * self.gamma_second(z) - z * self.gamma_prime(z) + self.gamma(z)


def _quintic_step(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C^2 smoothstep on [0, 1] with value, first and second derivative."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds = 30.0 * t**2 * (1.0 - t) ** 2
    d2s = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, d2s


_PLATEAU_WIDTH = 3.0  # transition of the cutoff spans [1, 1 + width] in u = eps*z


def _plateau(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cutoff B(u): 1 on |u| <= 1, 0 beyond |u| >= 1 + width, C^2 between.

    The wide transition keeps sup|B'| < 1 and sup|B''| < 1, so the scaled
    cutoff B(eps z) obeys the |B'| <= eps, |B''| <= eps^2 budget.
    """
    a = np.abs(u)
    t = (a - 1.0) / _PLATEAU_WIDTH
    s, ds, d2s = _quintic_step(t)
    value = 1.0 - s
    first = -np.sign(u) * ds / _PLATEAU_WIDTH
    second = -d2s / _PLATEAU_WIDTH**2
    return value, first, second


def _abs_eps_family(epsilon: float) -> Renormalizer:
    eps = float(epsilon)

    def A(z):
        return np.where(np.abs(z) < eps, z**2 / (2 * eps) + eps / 2, np.abs(z))

    def A1(z):
        return np.where(np.abs(z) < eps, z / eps, np.sign(z))

    def A2(z):
        return np.where(np.abs(z) < eps, 1.0 / eps, 0.0)

    def gamma(z):
        z = np.asarray(z, dtype=np.float64)
        B, _, _ = _plateau(eps * z)
        return A(z) * B

    def gamma_prime(z):
        z = np.asarray(z, dtype=np.float64)
        B, B1, _ = _plateau(eps * z)
        return A1(z) * B + A(z) * eps * B1

    def gamma_second(z):
        z = np.asarray(z, dtype=np.float64)
        B, B1, B2 = _plateau(eps * z)
        return A2(z) * B + 2.0 * A1(z) * eps * B1 + A(z) * eps**2 * B2

    return Renormalizer(
        tag="abs_eps",
        gamma=gamma,
        gamma_prime=gamma_prime,
        gamma_second=gamma_second,
        epsilon=eps,
    )


def make_renormalizer(tag: str, epsilon: float | None = None) -> Renormalizer:
    """Build one of the named Gamma families.

    tanh: bounded with bounded z Gamma' and z^2 Gamma''.  abs_eps: parabolic
    regularization of |z| (value eps/2 at 0) times a plateau cutoff; tends to
    |z| pointwise with g, h tending to 0.  linear and constant are the
    degenerate members used to collapse the renormalized ledger onto the
    plain one.
    """
    if tag == "tanh":
        return Renormalizer(
            tag="tanh",
            gamma=np.tanh,
            gamma_prime=lambda z: 1.0 / np.cosh(np.asarray(z, dtype=np.float64)) ** 2,
            gamma_second=lambda z: -2.0
            * np.tanh(z)
            / np.cosh(np.asarray(z, dtype=np.float64)) ** 2,
        )
    if tag == "abs_eps":
        if epsilon is None or epsilon <= 0:
            raise WeakFormError(f"abs_eps needs a positive epsilon, got {epsilon}")
        return _abs_eps_family(epsilon)
    if tag == "linear":
        return Renormalizer(
            tag="linear",
            gamma=lambda z: np.asarray(z, dtype=np.float64),
            gamma_prime=lambda z: np.ones_like(np.asarray(z, dtype=np.float64)),
            gamma_second=lambda z: np.zeros_like(np.asarray(z, dtype=np.float64)),
        )
    if tag == "constant":
        return Renormalizer(
            tag="constant",
            gamma=lambda z: np.ones_like(np.asarray(z, dtype=np.float64)),
            gamma_prime=lambda z: np.zeros_like(np.asarray(z, dtype=np.float64)),
            gamma_second=lambda z: np.zeros_like(np.asarray(z, dtype=np.float64)),
        )
    raise WeakFormError(f"unknown renormalizer tag {tag!r}")


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

@dataclass
class TestFunction:
    """Smooth bump supported strictly inside the central half of the box."""

    center: tuple
    radius: float
    values: GridScalar


def bump_test_function(grid: Grid, center, radius: float) -> TestFunction:
    """Reference bump exp(1 - 1/(1 - |x-c|^2/r^2)), normalized to peak 1."""
    center = tuple(float(c) for c in np.atleast_1d(np.asarray(center, dtype=np.float64)))
    if len(center) != grid.dim:
        raise WeakFormError(f"center {center} has wrong dimension for grid dim {grid.dim}")
    if radius <= 0:
        raise WeakFormError(f"radius must be positive, got {radius}")
    lo, hi = grid.L / 4.0, 3.0 * grid.L / 4.0
    for c in center:
        if not (lo < c - radius and c + radius < hi):
            raise WeakFormError(
                f"ball(center={center}, radius={radius}) leaves the central half "
                f"({lo}, {hi}) of the box"
            )
    mesh = grid.coordinates()
    u = np.zeros(grid.shape)
    for axis, c in enumerate(center):
        diff = mesh[axis] - c
        diff = diff - grid.L * np.round(diff / grid.L)
        u = u + (diff / radius) ** 2
    values = np.zeros(grid.shape)
    inside = u < 1.0
    values[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside]))
    return TestFunction(center=center, radius=float(radius), values=GridScalar(grid, values))


# ---------------------------------------------------------------------------
# Residual ledgers
# ---------------------------------------------------------------------------

ORIGINAL_TERMS = ("drift", "diffusion", "ito")
RENORMALIZED_TERMS = (
    "gamma_drift",
    "gamma_diffusion",
    "gamma_ito",
    "g_div_sigma_ito",
    "g_div_b",
    "g_div_sigma_transport",
    "g_gradsigma",
    "h_divsigma_sq",
)


@dataclass
class WeakFormLedger:
    """Signed time-integral of every right-hand term, plus the residual."""

    variant: str
    terms: dict
    lhs_delta: float
    residual: float

    def __post_init__(self):
        expected = {"original": ORIGINAL_TERMS, "renormalized": RENORMALIZED_TERMS}.get(
            self.variant
        )
        if expected is None:
            raise WeakFormError(f"unknown ledger variant {self.variant!r}")
        if tuple(self.terms.keys()) != expected:
            raise WeakFormError(
                f"{self.variant} ledger must carry terms {expected}, got {tuple(self.terms)}"
            )
        values = [self.lhs_delta, self.residual, *self.terms.values()]
        if not all(math.isfinite(v) for v in values):
            raise WeakFormError("non-finite ledger entry")


def _phi_calculus(phi: TestFunction):
    """Gradient and Hessian of the test function, spectral."""
    grid = phi.values.grid
    grad = gradient(phi.values).values
    hess = np.empty((grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        for j in range(grid.dim):
            order = [0] * grid.dim
            order[i] += 1
            order[j] += 1
            hess[i, j] = spectral_derivative(phi.values, order).values
    return grad, hess


def _check_sampling(fpath, grid: Grid, path: BrownianPath):
    if len(fpath) != path.steps + 1:
        raise WeakFormError(
            f"solution path has {len(fpath)} slices, Brownian path wants {path.steps + 1}"
        )
    for f in fpath:
        if f.grid != grid:
            raise WeakFormError("solution slices live on a different grid")


class _SigmaCalculus:
    """Per-slice divergence and Jacobian contraction, cached by slice identity."""

    def __init__(self, sigma: TimeGridVector):
        self.sigma = sigma
        self._cache: dict[int, tuple] = {}

    def at(self, t: float):
        sl = self.sigma.slice_at(t)
        key = id(sl)
        if key not in self._cache:
            jac = jacobian(sl)
            self._cache[key] = (
                sl.values,
                divergence(sl).values,
                np.einsum("ij...,ji...->...", jac, jac),
            )
        return self._cache[key]


def residual_original(
    fpath,
    b: TimeGridVector,
    sigmas,
    phi: TestFunction,
    path: BrownianPath,
) -> WeakFormLedger:
    """Ledger of the plain weak form: drift, diffusion, and Ito terms."""
    grid = phi.values.grid
    _check_sampling(fpath, grid, path)
    if len(sigmas) != path.k_count:
        raise WeakFormError("noise field count does not match the path")
    grad_phi, hess_phi = _phi_calculus(phi)
    vol = grid.cell_volume
    dt = path.dt

    drift = diffusion = ito = 0.0
    for l in range(path.steps):
        t = l * dt
        f = fpath[l].values
        b_l = b.slice_at(t).values
        drift += float(np.sum(f * np.einsum("i...,i...->...", b_l, grad_phi))) * vol * dt
        for k, sigma in enumerate(sigmas):
            s_l = sigma.slice_at(t).values
            pair = np.einsum("i...,j...,ij...->...", s_l, s_l, hess_phi)
            diffusion += 0.5 * float(np.sum(f * pair)) * vol * dt
            advect = np.einsum("i...,i...->...", s_l, grad_phi)
            ito += float(np.sum(f * advect)) * vol * path.increments[l, k]
    lhs_delta = float(np.sum((fpath[-1].values - fpath[0].values) * phi.values.values)) * vol
    terms = {"drift": drift, "diffusion": diffusion, "ito": ito}
    return WeakFormLedger(
        variant="original",
        terms=terms,
        lhs_delta=lhs_delta,
        residual=lhs_delta - sum(terms.values()),
    )


def residual_renormalized(
    fpath,
    b: TimeGridVector,
    sigmas,
    phi: TestFunction,
    renorm: Renormalizer,
    path: BrownianPath,
    flip_sign_of: str | None = None,
) -> WeakFormLedger:
    """Ledger of the renormalized weak form (all eight right-hand terms).

    flip_sign_of negates one named term before the residual is formed; it
    exists for the sign-certification anti-test and for nothing else.
    """
    grid = phi.values.grid
    _check_sampling(fpath, grid, path)
    if len(sigmas) != path.k_count:
        raise WeakFormError("noise field count does not match the path")
    if flip_sign_of is not None and flip_sign_of not in RENORMALIZED_TERMS:
        raise WeakFormError(f"cannot flip unknown term {flip_sign_of!r}")
    grad_phi, hess_phi = _phi_calculus(phi)
    phi_vals = phi.values.values
    vol = grid.cell_volume
    dt = path.dt
    sigma_calc = [_SigmaCalculus(sigma) for sigma in sigmas]
    div_b_cache: dict[int, np.ndarray] = {}

    sums = {name: 0.0 for name in RENORMALIZED_TERMS}
    for l in range(path.steps):
        t = l * dt
        f = fpath[l].values
        gamma_f = renorm.gamma(f)
        g_f = renorm.g(f)
        h_f = renorm.h(f)
        b_slice = b.slice_at(t)
        if id(b_slice) not in div_b_cache:
            div_b_cache[id(b_slice)] = divergence(b_slice).values
        div_b = div_b_cache[id(b_slice)]

        adv_b = np.einsum("i...,i...->...", b_slice.values, grad_phi)
        sums["gamma_drift"] += float(np.sum(gamma_f * adv_b)) * vol * dt
        sums["g_div_b"] -= float(np.sum(g_f * div_b * phi_vals)) * vol * dt
        for k, calc in enumerate(sigma_calc):
            s_vals, div_s, twist = calc.at(t)
            dW = path.increments[l, k]
            pair = np.einsum("i...,j...,ij...->...", s_vals, s_vals, hess_phi)
            sums["gamma_diffusion"] += 0.5 * float(np.sum(gamma_f * pair)) * vol * dt
            adv_s = np.einsum("i...,i...->...", s_vals, grad_phi)
            sums["gamma_ito"] += float(np.sum(gamma_f * adv_s)) * vol * dW
            sums["g_div_sigma_ito"] -= float(np.sum(g_f * div_s * phi_vals)) * vol * dW
            sums["g_div_sigma_transport"] -= float(np.sum(g_f * div_s * adv_s)) * vol * dt
            sums["g_gradsigma"] += 0.5 * float(np.sum(g_f * twist * phi_vals)) * vol * dt
            sums["h_divsigma_sq"] += 0.5 * float(np.sum(h_f * div_s**2 * phi_vals)) * vol * dt

    if flip_sign_of is not None:
        sums[flip_sign_of] = -sums[flip_sign_of]
    lhs_delta = (
        float(np.sum((renorm.gamma(fpath[-1].values) - renorm.gamma(fpath[0].values)) * phi_vals))
        * vol
    )
    terms = {name: sums[name] for name in RENORMALIZED_TERMS}
    return WeakFormLedger(
        variant="renormalized",
        terms=terms,
        lhs_delta=lhs_delta,
        residual=lhs_delta - sum(terms.values()),
    )


def write_ledger_csv(ledger: WeakFormLedger, path_name) -> None:
    with open(path_name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term_name", "value"])
        writer.writerow(["lhs_delta", f"{ledger.lhs_delta:.12g}"])
        for name, value in ledger.terms.items():
            writer.writerow([name, f"{value:.12g}"])
        writer.writerow(["residual", f"{ledger.residual:.12g}"])


# ---------------------------------------------------------------------------
# Weighted-L1 stability functional
# ---------------------------------------------------------------------------

@dataclass
class StabilitySeries:
    """Monte Carlo series of the weighted L1 mass against its growth envelope."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray
    r_exponent: float

    def gronwall_ratio(self) -> np.ndarray:
        """Estimate divided by the envelope; identically 0 for a zero datum."""
        out = np.zeros_like(self.mean)
        alive = self.envelope > 0.0
        out[alive] = self.mean[alive] / self.envelope[alive]
        return out


def _stability_weight(grid: Grid, r_exponent: float) -> np.ndarray:
    if r_exponent == 0.0:
        return np.ones(grid.shape)
    mesh = grid.coordinates()
    center = grid.L / 2.0
    sq = np.zeros(grid.shape)
    for axis in range(grid.dim):
        sq = sq + (mesh[axis] - center) ** 2
    return (1.0 + sq) ** (-r_exponent / 2.0)


def weighted_l1_stability(
    ensembles,
    f0: GridScalar,
    b: TimeGridVector,
    sigmas,
    r_exponent: float,
) -> StabilitySeries:
    """Per-step Monte Carlo estimate of the weighted L1 mass of |f|.

    The weight is (1 + |x - box center|^2)^(-r/2); r_exponent = 0 is the
    flat-weight override (the natural choice on a torus, where integrability
    at infinity is not in play).  Otherwise r_exponent must exceed the
    dimension.  The envelope is the left-endpoint Gronwall product of
    sup|b|/(1 + |x|) + sum_k sup(|sigma^k|/(1 + |x|))^2 applied to the
    initial weighted mass.
    """
    from .flow import pushforward_solution  # deferred to keep import one-way

    ensembles = list(ensembles)
    if len(ensembles) < 2:
        raise WeakFormError(f"need at least 2 ensembles, got {len(ensembles)}")
    grid = f0.grid
    if r_exponent != 0.0 and r_exponent <= grid.dim:
        raise WeakFormError(
            f"weight exponent must be 0 (flat) or > dim = {grid.dim}, got {r_exponent}"
        )
    path0 = ensembles[0].path
    steps = path0.steps
    for ens in ensembles:
        if ens.seeds_grid != grid:
            raise WeakFormError("ensemble grid does not match the initial datum")
        if ens.path.steps != steps or abs(ens.path.dt - path0.dt) > 1e-12:
            raise WeakFormError("ensembles use different time grids")

    weight = _stability_weight(grid, r_exponent)
    vol = grid.cell_volume
    times = np.arange(steps + 1) * path0.dt

    series = np.empty((len(ensembles), steps + 1))
    for m, ens in enumerate(ensembles):
        for l in range(steps + 1):
            f_l = pushforward_solution(f0, ens, times[l])
            series[m, l] = float(np.sum(weight * np.abs(f_l.values))) * vol

    mean = np.empty(steps + 1)
    stderr = np.empty(steps + 1)
    count = len(ensembles)
    for l in range(steps + 1):
        acc = 0.0
        for m in range(count):
            acc += series[m, l]
        mu = acc / count
        spread = 0.0
        for m in range(count):
            spread += (series[m, l] - mu) ** 2
        mean[l] = mu
        stderr[l] = math.sqrt(spread / (count - 1) / count)

    one_plus = 1.0 + np.sqrt(np.sum((np.stack(grid.coordinates()) - grid.L / 2.0) ** 2, axis=0))
    rate = np.empty(steps)
    for l in range(steps):
        t = times[l]
        b_amp = np.sqrt(np.einsum("i...,i...->...", b.slice_at(t).values, b.slice_at(t).values))
        total = float(np.max(b_amp / one_plus))
        for sigma in sigmas:
            s_amp = np.sqrt(
                np.einsum("i...,i...->...", sigma.slice_at(t).values, sigma.slice_at(t).values)
            )
            total += float(np.max(s_amp / one_plus)) ** 2
        rate[l] = total
    base = float(np.sum(weight * np.abs(f0.values))) * vol
    envelope = np.empty(steps + 1)
    envelope[0] = base
    acc = 0.0
    for l in range(steps):
        acc += rate[l] * path0.dt
        envelope[l + 1] = base * math.exp(acc)
    return StabilitySeries(
        times=times, mean=mean, stderr=stderr, envelope=envelope, r_exponent=float(r_exponent)
    )
