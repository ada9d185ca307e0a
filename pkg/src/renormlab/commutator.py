"""Mollification commutators of first- and second-order transport operators.

For a vector field sigma and density f, with f_eps = eta_eps * f:

    T_eps(f) = sigma . grad f_eps  -  (Div(sigma f))_eps
    S_eps(f) = L f_eps  -  sigma . grad (Div(sigma f))_eps  +  (L* f)_eps

where L g = (1/2) sigma_i sigma_j d_i d_j g and L* g = (1/2) d_i d_j
(sigma_i sigma_j g).  Both vanish for constant sigma and converge, for smooth
data, to

    T_eps(f) -> -(Div sigma) f
    S_eps(f) -> (1/2) (d_i sigma_j d_j sigma_i + (Div sigma)^2) f.

The sign of the T-limit and the index pairing in the S-limit are fixed by the
smooth-case expansion oracle in the test suite (moments of x tensor grad eta),
not taken on faith; the renormalized-residual checks downstream only close for
this sign set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import parallel
from .field import (
    BoxRegion,
    FieldError,
    GridScalar,
    GridVector,
    convolve,
    divergence,
    gradient,
    jacobian,
    lp_norm,
    mollifier,
    spectral_derivative,
)

__all__ = [
    "LIMIT_SIGN_T",
    "CommutatorStudy",
    "op_T",
    "op_S",
    "op_T_drift",
    "commutator_limits",
    "convergence_study",
    "write_study_csv",
]

# Sign of the first-order commutator limit, fixed once by the smooth-case
# expansion oracle (integral of x tensor grad eta = -identity).
LIMIT_SIGN_T = -1.0

TAG_T = "T"
TAG_S = "S"
TAG_T_DRIFT = "T_drift"
_TAGS = (TAG_T, TAG_S, TAG_T_DRIFT)

# Threshold below which a study is the constant-coefficient degenerate case.
_DEGENERATE_TOL = 1e-12


def _check_inputs(sigma: GridVector, f: GridScalar) -> None:
    if sigma.grid != f.grid:
        raise FieldError(f"grid mismatch: {sigma.grid} vs {f.grid}")


def _advect(sigma: GridVector, g: GridScalar) -> np.ndarray:
    """sigma . grad g, gradient taken spectrally."""
    grad = gradient(g)
    return np.einsum("i...,i...->...", sigma.values, grad.values)


def op_T(sigma: GridVector, f: GridScalar, epsilon: float) -> GridScalar:
    """First-order commutator sigma.grad(f_eps) - (Div(sigma f))_eps."""
    _check_inputs(sigma, f)
    g = f.grid
    kernel = mollifier(g, epsilon)
    f_eps = convolve(kernel, f)
    div_sf = divergence(GridVector(g, sigma.values * f.values[None, ...]))
    return GridScalar(g, _advect(sigma, f_eps) - convolve(kernel, div_sf).values)


def op_T_drift(b: GridVector, f: GridScalar, epsilon: float) -> GridScalar:
    """Drift commutator; same structure as op_T with b in place of sigma."""
    return op_T(b, f, epsilon)


def op_S(sigma: GridVector, f: GridScalar, epsilon: float) -> GridScalar:
    """Second-order commutator L(f_eps) - sigma.grad(Div(sigma f))_eps + (L* f)_eps."""
    _check_inputs(sigma, f)
    g = f.grid
    kernel = mollifier(g, epsilon)
    f_eps = convolve(kernel, f)

    # L f_eps = (1/2) sigma_i sigma_j d_i d_j f_eps
    forward = np.zeros(g.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            beta = [0] * g.dim
            beta[i] += 1
            beta[j] += 1
            forward += sigma.values[i] * sigma.values[j] * spectral_derivative(f_eps, beta).values
    forward *= 0.5

    div_sf = divergence(GridVector(g, sigma.values * f.values[None, ...]))
    middle = _advect(sigma, convolve(kernel, div_sf))

    # L* f = (1/2) d_i d_j (sigma_i sigma_j f), mollified afterwards
    adjoint = np.zeros(g.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            beta = [0] * g.dim
            beta[i] += 1
            beta[j] += 1
            prod = GridScalar(g, sigma.values[i] * sigma.values[j] * f.values)
            adjoint += spectral_derivative(prod, beta).values
    adjoint *= 0.5

    return GridScalar(g, forward - middle + convolve(kernel, GridScalar(g, adjoint)).values)


def commutator_limits(sigma: GridVector, f: GridScalar) -> tuple[GridScalar, GridScalar]:
    """Smooth-case limits of (T_eps, S_eps) as eps -> 0."""
    _check_inputs(sigma, f)
    g = f.grid
    div_sigma = divergence(sigma).values
    jac = jacobian(sigma)  # jac[i, j] = d_j sigma_i
    cross = np.einsum("ij...,ji...->...", jac, jac)
    limit_t = LIMIT_SIGN_T * div_sigma * f.values
    limit_s = 0.5 * (cross + div_sigma**2) * f.values
    return GridScalar(g, limit_t), GridScalar(g, limit_s)


@dataclass
class CommutatorStudy:
    """Convergence record for one operator over a decreasing epsilon ladder."""

    operator_tag: str
    epsilons: list[float]
    errors: list[float]
    fitted_rate: float
    bound_ratios: list[float] = dataclass_field(default_factory=list)
    degenerate: bool = False
    r_exponent: float = 2.0

    def __post_init__(self):
        if self.operator_tag not in _TAGS:
            raise FieldError(f"unknown operator tag {self.operator_tag!r}")
        eps = np.asarray(self.epsilons, dtype=float)
        if not np.all(np.diff(eps) < 0):
            raise FieldError("epsilons must be strictly decreasing")
        errs = np.asarray(self.errors, dtype=float)
        if not (np.all(np.isfinite(errs)) and np.all(errs >= 0)):
            raise FieldError("errors must be finite and nonnegative")


def _holder_exponents(tag: str, r: float, q: float | None, p: float | None) -> tuple[float, float]:
    """Pick or validate (q, p) against 1/r = m/q + 1/p, m = order of the bound."""
    m = 2.0 if tag == TAG_S else 1.0
    if q is None and p is None:
        q = (m + 1.0) * r
        p = (m + 1.0) * r
    elif q is None or p is None:
        raise FieldError("pass both q and p, or neither")
    if min(q, p) < 1 or r < 1:
        raise FieldError("exponents must be >= 1")
    if abs(1.0 / r - (m / q + 1.0 / p)) > 1e-9:
        raise FieldError(
            f"exponent mismatch: 1/{r} != {m}/{q} + 1/{p} for operator {tag}"
        )
    return q, p


def convergence_study(
    operator_tag: str,
    sigma: GridVector,
    f: GridScalar,
    epsilon_list,
    r: float,
    region: BoxRegion,
    q: float | None = None,
    p: float | None = None,
) -> CommutatorStudy:
    """Measure ||op_eps - limit||_{L^r(region)} over an epsilon ladder.

    Also forms the uniform-bound ratio ||op_eps||_{L^r} / (||grad sigma||_{L^q}^m
    ||f||_{L^p}) with m = 1 for T and 2 for S; Hoelder consistency
    1/r = m/q + 1/p is enforced.  Per-epsilon work runs through the ordered
    thread map, so results are independent of the worker count.
    """
    if operator_tag not in _TAGS:
        raise FieldError(f"unknown operator tag {operator_tag!r}")
    epsilons = [float(e) for e in epsilon_list]
    if len(epsilons) < 3:
        raise FieldError(f"need at least 3 epsilons, got {len(epsilons)}")
    q, p = _holder_exponents(operator_tag, float(r), q, p)
    _check_inputs(sigma, f)

    grid = f.grid
    order = 2.0 if operator_tag == TAG_S else 1.0
    apply_op = op_S if operator_tag == TAG_S else op_T
    limit_t, limit_s = commutator_limits(sigma, f)
    limit = limit_s if operator_tag == TAG_S else limit_t

    jac = jacobian(sigma)
    grad_sigma_frob = GridScalar(grid, np.sqrt(np.einsum("ij...,ij...->...", jac, jac)))
    denom = lp_norm(grad_sigma_frob, q, region) ** order * lp_norm(f, p, region)

    def one_epsilon(eps: float) -> tuple[float, float]:
        value = apply_op(sigma, f, eps)
        err = lp_norm(GridScalar(grid, value.values - limit.values), r, region)
        norm = lp_norm(value, r, region)
        ratio = norm / denom if denom > _DEGENERATE_TOL else 0.0
        return err, ratio

    results = parallel.ordered_map(one_epsilon, epsilons)
    errors = [res[0] for res in results]
    ratios = [res[1] for res in results]

    scale = max(lp_norm(f, r, region), 1.0)
    degenerate = denom <= _DEGENERATE_TOL or max(errors) <= _DEGENERATE_TOL * scale
    if degenerate:
        rate = 0.0
    else:
        slope, _ = np.polyfit(np.log(epsilons), np.log(np.maximum(errors, 1e-300)), 1)
        rate = float(slope)

    return CommutatorStudy(
        operator_tag=operator_tag,
        epsilons=epsilons,
        errors=errors,
        fitted_rate=rate,
        bound_ratios=ratios,
        degenerate=degenerate,
        r_exponent=float(r),
    )


def write_study_csv(study: CommutatorStudy, path) -> None:
    """One header line, then one row per epsilon."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "error_Lr", "bound_ratio"])
        for eps, err, ratio in zip(study.epsilons, study.errors, study.bound_ratios):
            writer.writerow([f"{eps:.12g}", f"{err:.12g}", f"{ratio:.12g}"])


# ---------------------------------------------------------------------------
# Renormalization remainders
#
# With u = f_eps, the chain-rule defects of a renormalizer Gamma are
#
#   R1 = Div(sigma Gamma(u)) - Gamma'(u) (Div(sigma f))_eps
#   R2 = Gamma'(u) (L* f)_eps - L* Gamma(u) + (1/2) Gamma''(u) (Div(sigma f))_eps^2
#
# and exact pointwise identities rebuild them from the commutators:
#
#   R1 = Gamma'(u) T_eps(f) + (Div sigma) Gamma(u)
#   R2 = Gamma'(u) S_eps(f) + (1/2) Gamma''(u) T_eps(f)^2
#        - sigma . grad R1 - (1/2) Gamma(u) (d_i sigma_j d_j sigma_i + (Div sigma)^2)
#
# (verified symbolically in the test suite).  Each carries a `sign` switch on
# its contested term so the suite can certify that exactly one choice closes.
# ---------------------------------------------------------------------------


def _mollified_pieces(sigma: GridVector, f: GridScalar, epsilon: float):
    g = f.grid
    kernel = mollifier(g, epsilon)
    f_eps = convolve(kernel, f).values
    div_sf = divergence(GridVector(g, sigma.values * f.values[None, ...]))
    div_sf_eps = convolve(kernel, div_sf).values
    return kernel, f_eps, div_sf_eps


def _adjoint_second_order(sigma: GridVector, values: np.ndarray) -> np.ndarray:
    """(1/2) d_i d_j (sigma_i sigma_j values), derivatives spectral."""
    g = sigma.grid
    out = np.zeros(g.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            beta = [0] * g.dim
            beta[i] += 1
            beta[j] += 1
            prod = GridScalar(g, sigma.values[i] * sigma.values[j] * values)
            out += spectral_derivative(prod, beta).values
    return 0.5 * out


def r1_remainder(sigma: GridVector, f: GridScalar, epsilon: float, renorm) -> GridScalar:
    """First-order chain-rule defect, from its definition."""
    _check_inputs(sigma, f)
    g = f.grid
    _, f_eps, div_sf_eps = _mollified_pieces(sigma, f, epsilon)
    div_s_gamma = divergence(GridVector(g, sigma.values * renorm.gamma(f_eps)[None, ...]))
    return GridScalar(g, div_s_gamma.values - renorm.gamma_prime(f_eps) * div_sf_eps)


def r1_reconstruction(
    sigma: GridVector, f: GridScalar, epsilon: float, renorm, sign: float = 1.0
) -> GridScalar:
    """Rebuild R1 from T_eps; sign multiplies the (Div sigma) Gamma term."""
    g = f.grid
    _, f_eps, _ = _mollified_pieces(sigma, f, epsilon)
    t_val = op_T(sigma, f, epsilon).values
    div_sigma = divergence(sigma).values
    out = renorm.gamma_prime(f_eps) * t_val + sign * div_sigma * renorm.gamma(f_eps)
    return GridScalar(g, out)


def r2_remainder(sigma: GridVector, f: GridScalar, epsilon: float, renorm) -> GridScalar:
    """Second-order chain-rule defect, from its definition."""
    _check_inputs(sigma, f)
    g = f.grid
    kernel, f_eps, div_sf_eps = _mollified_pieces(sigma, f, epsilon)
    adjoint_f = _adjoint_second_order(sigma, f.values)
    adjoint_f_eps = convolve(kernel, GridScalar(g, adjoint_f)).values
    adjoint_gamma = _adjoint_second_order(sigma, renorm.gamma(f_eps))
    out = (
        renorm.gamma_prime(f_eps) * adjoint_f_eps
        - adjoint_gamma
        + 0.5 * renorm.gamma_second(f_eps) * div_sf_eps**2
    )
    return GridScalar(g, out)


def r2_reconstruction(
    sigma: GridVector, f: GridScalar, epsilon: float, renorm, sign: float = 1.0
) -> GridScalar:
    """Rebuild R2 from T_eps, S_eps, R1; sign multiplies the Gamma(u) Q term."""
    g = f.grid
    _, f_eps, _ = _mollified_pieces(sigma, f, epsilon)
    t_val = op_T(sigma, f, epsilon).values
    s_val = op_S(sigma, f, epsilon).values
    r1 = r1_remainder(sigma, f, epsilon, renorm)
    adv_r1 = _advect(sigma, r1)
    div_sigma = divergence(sigma).values
    jac = jacobian(sigma)
    q_field = np.einsum("ij...,ji...->...", jac, jac) + div_sigma**2
    out = (
        renorm.gamma_prime(f_eps) * s_val
        + 0.5 * renorm.gamma_second(f_eps) * t_val**2
        - adv_r1
        - sign * 0.5 * renorm.gamma(f_eps) * q_field
    )
    return GridScalar(g, out)
