"""Commutator tests.

Two oracles anchor this file:

* a formal small-epsilon expansion (sympy) that fixes the sign of the T-limit
  and the index pairing in the S-limit from kernel moments alone;
* an O(N^2) double-sum kernel quadrature that must agree with the FFT
  implementation to near round-off, because both are circular convolutions
  against the same differentiated kernel samples.

The chain-rule defect identities (R1/R2) are certified symbolically first and
then numerically, with sign-flip anti-tests.
"""

from __future__ import annotations

import math
import types

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from renormlab.field import (
    FieldError,
    GridScalar,
    GridVector,
    build_grid,
    central_half,
    convolve,
    divergence,
    mollifier,
    spectral_derivative,
)
from renormlab.commutator import (
    LIMIT_SIGN_T,
    CommutatorStudy,
    commutator_limits,
    convergence_study,
    op_S,
    op_T,
    op_T_drift,
    r1_reconstruction,
    r1_remainder,
    r2_reconstruction,
    r2_remainder,
    write_study_csv,
)

L = 2.0 * math.pi

TANH_RENORM = types.SimpleNamespace(
    gamma=np.tanh,
    gamma_prime=lambda z: 1.0 / np.cosh(z) ** 2,
    gamma_second=lambda z: -2.0 * np.tanh(z) / np.cosh(z) ** 2,
)


def formal_kernel_integral(expr, z, deriv_order, moments):
    """Integrate expr(z) * eta^(deriv_order)(z) dz formally.

    Repeated integration by parts gives
        integral z^k eta^(b) dz = (-1)^b * k!/(k-b)! * mu_{k-b}   (0 if b > k)
    with mu_j the plain kernel moments; for a symmetric unit-mass kernel
    mu_0 = 1 and odd moments vanish.
    """
    poly = sp.Poly(sp.expand(expr), z)
    total = sp.Integer(0)
    for (k,), coeff in poly.terms():
        if deriv_order > k:
            continue
        factor = sp.Integer(-1) ** deriv_order * sp.factorial(k) / sp.factorial(k - deriv_order)
        total += coeff * factor * moments[k - deriv_order]
    return sp.simplify(total)


class TestSymbolicOracle:
    """Sign and structure of the limits, fixed independently of any grid."""

    def test_t_limit_sign_from_expansion(self):
        x, z, e = sp.symbols("x z epsilon")
        sig = sp.Function("sigma")
        f = sp.Function("f")
        m2, m4 = sp.symbols("m2 m4", positive=True)
        moments = {0: sp.Integer(1), 1: 0, 2: m2, 3: 0, 4: m4, 5: 0}

        integrand = (sig(x) - sig(x - e * z)) * f(x - e * z)
        series = sp.series(integrand, e, 0, 4).removeO().expand()
        t_series = sp.expand(formal_kernel_integral(series, z, 1, moments) / e)

        limit = sp.simplify(t_series.subs(e, 0))
        assert sp.simplify(limit - (-sp.diff(sig(x), x) * f(x))) == 0
        assert LIMIT_SIGN_T == -1.0
        # correction starts at epsilon^2 (odd kernel moments vanish)
        assert sp.simplify(sp.diff(t_series, e).subs(e, 0)) == 0

    def test_s_limit_from_expansion(self):
        x, z, e = sp.symbols("x z epsilon")
        sig = sp.Function("sigma")
        f = sp.Function("f")
        m2, m4 = sp.symbols("m2 m4", positive=True)
        moments = {0: sp.Integer(1), 1: 0, 2: m2, 3: 0, 4: m4, 5: 0, 6: 0}

        integrand = (sig(x) - sig(x - e * z)) ** 2 * f(x - e * z)
        series = sp.series(integrand, e, 0, 5).removeO().expand()
        s_series = sp.expand(formal_kernel_integral(series, z, 2, moments) / (2 * e**2))

        limit = sp.simplify(s_series.subs(e, 0))
        assert sp.simplify(limit - sp.diff(sig(x), x) ** 2 * f(x)) == 0
        assert sp.simplify(sp.diff(s_series, e).subs(e, 0)) == 0

    @staticmethod
    def _operators_1d():
        x = sp.Symbol("x")
        sig = sp.Function("sigma")(x)
        ops = {
            "grad_s": lambda g: sig * sp.diff(g, x),
            "div_s": lambda g: sp.diff(sig * g, x),
            "L": lambda g: sp.Rational(1, 2) * sig**2 * sp.diff(g, x, 2),
            "Lstar": lambda g: sp.Rational(1, 2) * sp.diff(sig**2 * g, x, 2),
            "Q": 2 * sp.diff(sig, x) ** 2,
            "divsig": sp.diff(sig, x),
            "x": x,
        }
        return ops

    def test_r1_identity_symbolic(self):
        ops = self._operators_1d()
        x = ops["x"]
        z = sp.Symbol("z")
        u = sp.Function("u")(x)
        D = sp.Function("D")(x)
        Gam = sp.Function("Gamma")
        Gp = sp.diff(Gam(z), z).subs(z, u)

        r1 = ops["div_s"](Gam(u)) - Gp * D
        t = ops["grad_s"](u) - D
        assert sp.simplify(r1 - (Gp * t + ops["divsig"] * Gam(u))) == 0
        assert sp.simplify(r1 - (Gp * t - ops["divsig"] * Gam(u))) != 0

    def test_r2_identity_symbolic_1d(self):
        ops = self._operators_1d()
        x = ops["x"]
        z = sp.Symbol("z")
        u = sp.Function("u")(x)
        D = sp.Function("D")(x)
        A = sp.Function("A")(x)
        Gam = sp.Function("Gamma")
        Gp = sp.diff(Gam(z), z).subs(z, u)
        Gpp = sp.diff(Gam(z), z, 2).subs(z, u)

        t = ops["grad_s"](u) - D
        s = ops["L"](u) - ops["grad_s"](D) + A
        r1 = ops["div_s"](Gam(u)) - Gp * D
        r2 = Gp * A - ops["Lstar"](Gam(u)) + sp.Rational(1, 2) * Gpp * D**2

        rebuilt = (
            Gp * s
            + sp.Rational(1, 2) * Gpp * t**2
            - ops["grad_s"](r1)
            - sp.Rational(1, 2) * Gam(u) * ops["Q"]
        )
        assert sp.simplify(sp.expand(r2 - rebuilt)) == 0

    def test_r2_identity_symbolic_2d(self):
        x, y, z = sp.symbols("x y z")
        X = [x, y]
        sig = [sp.Function("s1")(x, y), sp.Function("s2")(x, y)]
        u = sp.Function("u")(x, y)
        D = sp.Function("D")(x, y)
        A = sp.Function("A")(x, y)
        Gam = sp.Function("Gamma")
        Gp = sp.diff(Gam(z), z).subs(z, u)
        Gpp = sp.diff(Gam(z), z, 2).subs(z, u)

        def grad_s(g):
            return sum(sig[i] * sp.diff(g, X[i]) for i in range(2))

        def div_s(g):
            return sum(sp.diff(sig[i] * g, X[i]) for i in range(2))

        def big_l(g):
            return sp.Rational(1, 2) * sum(
                sig[i] * sig[j] * sp.diff(g, X[i], X[j]) for i in range(2) for j in range(2)
            )

        def big_l_star(g):
            return sp.Rational(1, 2) * sum(
                sp.diff(sig[i] * sig[j] * g, X[i], X[j]) for i in range(2) for j in range(2)
            )

        div_sig = sum(sp.diff(sig[i], X[i]) for i in range(2))
        q = (
            sum(sp.diff(sig[i], X[j]) * sp.diff(sig[j], X[i]) for i in range(2) for j in range(2))
            + div_sig**2
        )

        t = grad_s(u) - D
        s = big_l(u) - grad_s(D) + A
        r1 = div_s(Gam(u)) - Gp * D
        r2 = Gp * A - big_l_star(Gam(u)) + sp.Rational(1, 2) * Gpp * D**2
        rebuilt = Gp * s + sp.Rational(1, 2) * Gpp * t**2 - grad_s(r1) - sp.Rational(1, 2) * Gam(u) * q
        assert sp.simplify(sp.expand(r2 - rebuilt)) == 0


class TestExamples:
    def test_constant_sigma_annihilates_t(self):
        g = build_grid(1, L, 64)
        sig = GridVector.constant(g, [0.7])
        f = GridScalar.from_function(g, lambda x: np.cos(x) + 0.3 * np.sin(2 * x))
        assert np.max(np.abs(op_T(sig, f, L / 8).values)) < 1e-10

    def test_constant_sigma_annihilates_s(self):
        g = build_grid(1, L, 64)
        sig = GridVector.constant(g, [-1.3])
        f = GridScalar.from_function(g, lambda x: np.cos(x))
        assert np.max(np.abs(op_S(sig, f, L / 8).values)) < 1e-9

    def test_zero_sigma_is_exactly_zero(self):
        g = build_grid(1, L, 32)
        sig = GridVector.constant(g, [0.0])
        f = GridScalar.from_function(g, np.cos)
        assert np.all(op_S(sig, f, L / 8).values == 0.0)

    def test_unit_f_reduces_to_mollified_divergence(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [lambda x: np.sin(x) + 0.2 * np.cos(3 * x)])
        one = GridScalar.constant(g, 1.0)
        eps = L / 8
        got = op_T(sig, one, eps)
        want = -convolve(mollifier(g, eps), divergence(sig)).values
        assert np.max(np.abs(got.values - want)) < 1e-12

    def test_drift_variant_matches(self):
        g = build_grid(1, L, 64)
        b = GridVector.from_functions(g, [np.sin])
        f = GridScalar.from_function(g, np.cos)
        assert np.array_equal(op_T_drift(b, f, L / 8).values, op_T(b, f, L / 8).values)

    def test_limits_1d_preset(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [np.sin])
        one = GridScalar.constant(g, 1.0)
        lim_t, lim_s = commutator_limits(sig, one)
        x = g.axis_coordinates()
        assert np.max(np.abs(lim_t.values - (-np.cos(x)))) < 1e-12
        assert np.max(np.abs(lim_s.values - np.cos(x) ** 2)) < 1e-12

    def test_limits_2d_swap_preset(self):
        # sigma = (sin y, sin x): divergence-free, limit_S = cos x cos y.
        g = build_grid(2, L, 32)
        sig = GridVector.from_functions(g, [lambda x, y: np.sin(y), lambda x, y: np.sin(x)])
        one = GridScalar.constant(g, 1.0)
        lim_t, lim_s = commutator_limits(sig, one)
        xs, ys = g.coordinates()
        assert np.max(np.abs(lim_t.values)) < 1e-12
        assert np.max(np.abs(lim_s.values - np.cos(xs) * np.cos(ys))) < 1e-12

    def test_grid_mismatch_raises(self):
        g1 = build_grid(1, L, 32)
        g2 = build_grid(1, L, 64)
        with pytest.raises(FieldError):
            op_T(GridVector.constant(g1, [1.0]), GridScalar.constant(g2, 1.0), L / 8)


def _circulant_1d(samples: np.ndarray) -> np.ndarray:
    n = len(samples)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return samples[idx]


def _circulant_2d(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    ix = np.arange(n)
    mx, lx = np.meshgrid(ix, ix, indexing="ij")
    flat = [(a, b) for a in ix for b in ix]
    coords = np.array(flat)
    dx = (coords[:, None, 0] - coords[None, :, 0]) % n
    dy = (coords[:, None, 1] - coords[None, :, 1]) % n
    return samples[dx, dy]


class TestKernelFormEquivalence:
    """FFT pipeline against the direct double-sum kernel quadrature."""

    def test_t_double_sum_1d(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [lambda x: np.sin(x) + 0.3 * np.cos(2 * x)])
        f = GridScalar.from_function(g, lambda x: np.cos(x) + 0.5 * np.sin(3 * x))
        eps = L / 8
        kernel = mollifier(g, eps)
        dk = spectral_derivative(kernel.as_scalar(), (1,)).values
        big_k = _circulant_1d(dk)
        s, fv = sig.values[0], f.values
        direct = g.h * (s * (big_k @ fv) - big_k @ (s * fv))
        impl = op_T(sig, f, eps).values
        assert np.max(np.abs(impl - direct)) < 1e-7 * np.max(np.abs(impl))

    def test_t_double_sum_2d(self):
        g = build_grid(2, L, 32)
        sig = GridVector.from_functions(
            g, [lambda x, y: np.sin(x) * np.cos(y), lambda x, y: np.cos(2 * x) + 0.2 * np.sin(y)]
        )
        f = GridScalar.from_function(g, lambda x, y: np.cos(x) + 0.4 * np.sin(y + 1.0))
        eps = L / 8
        kernel = mollifier(g, eps)
        fv = f.values.ravel()
        direct = np.zeros(g.N * g.N)
        for i in range(2):
            beta = [0, 0]
            beta[i] = 1
            dk = spectral_derivative(kernel.as_scalar(), beta).values
            big_k = _circulant_2d(dk)
            s_i = sig.values[i].ravel()
            direct += s_i * (big_k @ fv) - big_k @ (s_i * fv)
        direct *= g.cell_volume
        impl = op_T(sig, f, eps).values.ravel()
        assert np.max(np.abs(impl - direct)) < 1e-7 * np.max(np.abs(impl))

    def test_s_single_kernel_form_1d(self):
        # S collapses to one kernel: (1/2) integral eta''(x-y) (sigma(x)-sigma(y))^2 f(y).
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [lambda x: np.sin(x) + 0.3 * np.cos(2 * x)])
        f = GridScalar.from_function(g, lambda x: np.cos(x) + 0.5 * np.sin(3 * x))
        eps = L / 8
        kernel = mollifier(g, eps)
        d2k = spectral_derivative(kernel.as_scalar(), (2,)).values
        big_k = _circulant_1d(d2k)
        s, fv = sig.values[0], f.values
        diff = s[:, None] - s[None, :]
        direct = 0.5 * g.h * np.sum(big_k * diff**2 * fv[None, :], axis=1)
        impl = op_S(sig, f, eps).values
        assert np.max(np.abs(impl - direct)) < 1e-7 * np.max(np.abs(impl))

    def test_t_analytic_kernel_gradient_diagnostic(self):
        # Fully independent kernel derivative (chain rule on the bump profile);
        # agreement is limited by trig interpolation of the kernel, so the
        # tolerance is loose compared to the spectral-sample tests above.
        g = build_grid(1, L, 256)
        sig = GridVector.from_functions(g, [np.sin])
        f = GridScalar.from_function(g, np.cos)
        eps = L / 8
        kernel = mollifier(g, eps)
        (x,) = g.wrapped_coordinates()
        u = x * x / (eps * eps)
        danalytic = np.zeros(g.N)
        inside = u < 1.0
        danalytic[inside] = (
            kernel.values[inside] * (-1.0 / (1.0 - u[inside]) ** 2) * (2.0 * x[inside] / eps**2)
        )
        big_k = _circulant_1d(danalytic)
        s, fv = sig.values[0], f.values
        direct = g.h * (s * (big_k @ fv) - big_k @ (s * fv))
        impl = op_T(sig, f, eps).values
        assert np.max(np.abs(impl - direct)) < 1e-3 * np.max(np.abs(impl))


class TestConvergence:
    def test_t_study_1d(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [np.sin])
        f = GridScalar.from_function(g, np.cos)
        study = convergence_study("T", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g))
        assert study.errors[0] > study.errors[1] > study.errors[2]
        assert study.fitted_rate >= 0.9
        assert not study.degenerate
        assert all(r <= 1.2 for r in study.bound_ratios)

    def test_s_study_1d(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [np.sin])
        f = GridScalar.from_function(g, np.cos)
        study = convergence_study("S", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g))
        assert study.errors[0] > study.errors[1] > study.errors[2]
        assert study.fitted_rate >= 0.9
        assert all(r <= 1.2 for r in study.bound_ratios)

    def test_s_study_2d_swap_preset(self):
        g = build_grid(2, L, 32)
        sig = GridVector.from_functions(g, [lambda x, y: np.sin(y), lambda x, y: np.sin(x)])
        f = GridScalar.from_function(g, lambda x, y: np.cos(x) * np.cos(y) + 2.0)
        study = convergence_study("S", sig, f, [L / 4, L / 8, L / 16], 2.0, central_half(g))
        assert study.errors[0] > study.errors[1] > study.errors[2]
        assert study.fitted_rate >= 0.9

    def test_bound_ratio_grid_stability(self):
        shared = [L / 8, L / 16]
        ratios = {}
        for n_nodes, ladder in ((32, [L / 4] + shared), (64, shared + [L / 32])):
            g = build_grid(1, L, n_nodes)
            sig = GridVector.from_functions(g, [np.sin])
            f = GridScalar.from_function(g, np.cos)
            study = convergence_study("T", sig, f, ladder, 2.0, central_half(g))
            by_eps = dict(zip(study.epsilons, study.bound_ratios))
            ratios[n_nodes] = [by_eps[e] for e in shared]
        for r32, r64 in zip(ratios[32], ratios[64]):
            assert abs(r32 - r64) <= 0.2 * max(r32, r64)

    def test_degenerate_case_flagged(self):
        g = build_grid(1, L, 64)
        sig = GridVector.constant(g, [2.0])
        f = GridScalar.from_function(g, np.cos)
        study = convergence_study("T", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g))
        assert study.degenerate
        assert max(study.errors) < 1e-9
        assert study.fitted_rate == 0.0

    def test_validation(self):
        g = build_grid(1, L, 64)
        sig = GridVector.from_functions(g, [np.sin])
        f = GridScalar.from_function(g, np.cos)
        with pytest.raises(FieldError):
            convergence_study("T", sig, f, [L / 8, L / 16], 2.0, central_half(g))
        with pytest.raises(FieldError):
            convergence_study("T", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g), q=4.0, p=3.0)
        with pytest.raises(FieldError):
            convergence_study("U", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g))
        with pytest.raises(FieldError):
            CommutatorStudy("T", [0.1, 0.2], [1.0, 1.0], 0.0)


class TestRenormalizerIdentities:
    """Numeric R1/R2 identity checks with sign certification."""

    def _data_1d(self, n_nodes=64):
        g = build_grid(1, L, n_nodes)
        sig = GridVector.from_functions(g, [lambda x: np.sin(x) + 0.3 * np.cos(2 * x)])
        f = GridScalar.from_function(g, lambda x: np.cos(x) + 0.5 * np.sin(3 * x))
        return g, sig, f

    def test_r1_sign_certification(self):
        _, sig, f = self._data_1d()
        eps = L / 8
        defect = r1_remainder(sig, f, eps, TANH_RENORM).values
        scale = np.max(np.abs(defect))
        good = r1_reconstruction(sig, f, eps, TANH_RENORM, sign=+1.0).values
        bad = r1_reconstruction(sig, f, eps, TANH_RENORM, sign=-1.0).values
        assert np.max(np.abs(defect - good)) < 1e-6 * scale
        assert np.max(np.abs(defect - bad)) > 0.1 * scale

    def test_r2_sign_certification_1d(self):
        _, sig, f = self._data_1d()
        eps = L / 8
        defect = r2_remainder(sig, f, eps, TANH_RENORM).values
        scale = np.max(np.abs(defect))
        good = r2_reconstruction(sig, f, eps, TANH_RENORM, sign=+1.0).values
        bad = r2_reconstruction(sig, f, eps, TANH_RENORM, sign=-1.0).values
        assert np.max(np.abs(defect - good)) < 1e-6 * scale
        assert np.max(np.abs(defect - bad)) > 0.1 * scale

    def test_r2_identity_2d(self):
        g = build_grid(2, L, 64)
        sig = GridVector.from_functions(
            g, [lambda x, y: np.sin(x) * np.cos(y), lambda x, y: np.cos(2 * x) + 0.2 * np.sin(y)]
        )
        f = GridScalar.from_function(g, lambda x, y: np.cos(x) + 0.4 * np.sin(y + 1.0))
        eps = L / 8
        defect = r2_remainder(sig, f, eps, TANH_RENORM).values
        rebuilt = r2_reconstruction(sig, f, eps, TANH_RENORM).values
        scale = np.max(np.abs(defect))
        assert np.max(np.abs(defect - rebuilt)) < 1e-6 * scale

    def test_r1_near_exact_for_polynomial_renormalizer(self):
        # Band-limited data and a cubic renormalizer leave no aliasing at all.
        _, sig, f = self._data_1d()
        cubic = types.SimpleNamespace(
            gamma=lambda z: z**3,
            gamma_prime=lambda z: 3.0 * z**2,
            gamma_second=lambda z: 6.0 * z,
        )
        eps = L / 8
        defect = r1_remainder(sig, f, eps, cubic).values
        rebuilt = r1_reconstruction(sig, f, eps, cubic).values
        assert np.max(np.abs(defect - rebuilt)) < 1e-12 * max(1.0, np.max(np.abs(defect)))


def test_study_csv_output(tmp_path):
    g = build_grid(1, L, 64)
    sig = GridVector.from_functions(g, [np.sin])
    f = GridScalar.from_function(g, np.cos)
    study = convergence_study("T", sig, f, [L / 8, L / 16, L / 32], 2.0, central_half(g))
    out = tmp_path / "study.csv"
    write_study_csv(study, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "epsilon,error_Lr,bound_ratio"
    assert len(lines) == 4
    eps0, err0, ratio0 = (float(tok) for tok in lines[1].split(","))
    assert eps0 == pytest.approx(L / 8)
    assert err0 == pytest.approx(study.errors[0])
    assert ratio0 == pytest.approx(study.bound_ratios[0])


@given(a=st.floats(-3, 3, allow_nan=False), b=st.floats(-3, 3, allow_nan=False))
@settings(max_examples=25, deadline=None)
def test_op_t_linear_in_f(a, b):
    g = build_grid(1, L, 16)
    sig = GridVector.from_functions(g, [np.sin])
    f1 = GridScalar.from_function(g, np.cos)
    f2 = GridScalar.from_function(g, lambda x: np.sin(2 * x))
    combo = GridScalar(g, a * f1.values + b * f2.values)
    eps = 1.0
    lhs = op_T(sig, combo, eps).values
    rhs = a * op_T(sig, f1, eps).values + b * op_T(sig, f2, eps).values
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * (1.0 + abs(a) + abs(b))
