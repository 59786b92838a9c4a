import math
import warnings

import numpy as np
import pytest

from glsurf.geometry import DomainSpec, build_grid, build_F, gauge_fix_potential
from glsurf.fields import (
    GLParams,
    ComplexField,
    GaugeField,
    GridMismatch,
    a0_nodes,
    covariant_gradient,
    gauge_transform,
    lll_kernel,
    lll_project,
)
from glsurf.functional import energy


def centered_patch(side=20.0, n=81):
    g = build_grid(DomainSpec.rectangle(side, side), (n, n))
    g.xy -= 0.5 * side
    return g


class TestGLParams:
    def test_derived_quantities(self):
        p = GLParams(25.0, 15.0, delta=0.5)
        assert abs(p.mu - (25.0 - 15.0) / 5.0) < 1e-15
        assert abs(p.eps**2 * p.kappa * p.H - 1.0) < 1e-14
        assert abs(p.gamma - (25.0 / 15.0 - 1.0)) < 1e-15
        assert abs(p.zeta - math.sqrt(10.0 / 15.0)) < 1e-15
        assert abs(p.lam - math.sqrt(10.0 / 15.0)) < 1e-15

    def test_critical_field_case(self):
        p = GLParams(16.0, 16.0, delta=0.3)
        assert p.mu == 0.0
        assert p.gamma == 0.0
        assert p.lam == 16.0 ** (-0.7)
        assert p.zeta == 16.0 ** (-0.25)

    def test_from_mu_roundtrip(self):
        p = GLParams.from_mu(25.0, 2.0)
        assert abs(p.H - 15.0) < 1e-12
        assert abs(p.mu - 2.0) < 1e-14

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            GLParams(-1.0, 1.0)
        with pytest.raises(ValueError):
            GLParams(1.0, 1.0, delta=1.5)


class TestGaugeField:
    def test_links_unit_modulus(self):
        g = build_grid(DomainSpec.disc(1.0), (24, 48))
        rng = np.random.default_rng(0)
        A = GaugeField.from_nodes(g, rng.standard_normal((g.n_nodes, 2)), coupling=37.0)
        assert np.max(np.abs(np.abs(A.links) - 1.0)) < 1e-14

    def test_cache_consistency_constructor(self):
        g = build_grid(DomainSpec.rectangle(1, 2), (17, 25))
        A = GaugeField.from_nodes(g, a0_nodes(g), coupling=100.0)
        assert A.recompute_link_deviation() < 1e-14

    def test_grid_mismatch_rejected(self):
        g1 = build_grid(DomainSpec.disc(1.0), (16, 32))
        g2 = build_grid(DomainSpec.disc(1.0), (16, 32))
        psi = ComplexField.constant(g1, 1.0)
        A = GaugeField.from_nodes(g2, a0_nodes(g2), 1.0)
        with pytest.raises(GridMismatch):
            covariant_gradient(psi, A)


class TestCovariantGradient:
    def test_constant_field_zero_potential(self):
        g = build_grid(DomainSpec.rectangle(2, 2), (17, 17))
        psi = ComplexField.constant(g, 1.0)
        A = GaugeField.from_nodes(g, np.zeros((g.n_nodes, 2)), 1.0)
        D = covariant_gradient(psi, A)
        assert np.max(np.abs(D)) < 1e-14

    def test_pure_gauge_second_order(self):
        sups = []
        for res in ((33, 33), (65, 65)):
            g = build_grid(DomainSpec.rectangle(2, 2), res)
            x, y = g.xy[:, 0], g.xy[:, 1]
            chi = np.sin(x) * np.cos(0.7 * y)
            grad_chi = np.column_stack([np.cos(x) * np.cos(0.7 * y), -0.7 * np.sin(x) * np.sin(0.7 * y)])
            c = 3.0
            psi = ComplexField(g, np.exp(1j * c * chi))
            A = GaugeField.from_nodes(g, grad_chi, c)
            D = covariant_gradient(psi, A)
            interior = g.dist_boundary > 0.2
            sups.append(np.max(np.abs(D[interior])))
        assert sups[1] < 0.3 * sups[0]

    def test_gaussian_oracle_second_order(self):
        # closed-form differentiation oracle for psi=exp(-|x|^2/4), A=A0
        errs = []
        for res in ((65, 128), (129, 256)):
            g = build_grid(DomainSpec.disc(4.0), res)
            x, y = g.xy[:, 0], g.xy[:, 1]
            psi_vals = np.exp(-(x**2 + y**2) / 4.0)
            psi = ComplexField(g, psi_vals)
            A = GaugeField.from_nodes(g, a0_nodes(g), 1.0)
            D = covariant_gradient(psi, A)
            exact = np.column_stack(
                [(-0.5 * x + 0.5j * y) * psi_vals, (-0.5 * y - 0.5j * x) * psi_vals]
            )
            interior = g.dist_boundary > 0.3
            errs.append(np.max(np.abs(D - exact)[interior]))
        assert errs[1] < 0.3 * errs[0]
        assert errs[1] < 5e-4

    def test_reduces_to_plain_fd_without_potential(self):
        g = build_grid(DomainSpec.rectangle(2, 2), (25, 25))
        vals = np.sin(g.xy[:, 0]) * np.exp(1j * g.xy[:, 1])
        psi = ComplexField(g, vals)
        D1 = covariant_gradient(psi, GaugeField.from_nodes(g, np.zeros((g.n_nodes, 2)), 5.0))
        D2 = covariant_gradient(psi, GaugeField.from_nodes(g, np.zeros((g.n_nodes, 2)), 0.0))
        assert np.array_equal(D1, D2)


class TestGaugeTransform:
    def setup_method(self):
        self.g = build_grid(DomainSpec.disc(1.0), (32, 64))
        self.params = GLParams(6.0, 6.0)
        self.F = build_F(self.g, coupling=self.params.coupling)
        rng = np.random.default_rng(3)
        self.psi = ComplexField(
            self.g, rng.standard_normal(self.g.n_nodes) + 1j * rng.standard_normal(self.g.n_nodes)
        )

    def test_constant_chi(self):
        E0 = energy(self.psi, self.F, self.params)
        psi2, A2 = gauge_transform(self.psi, self.F, np.full(self.g.n_nodes, 0.77))
        assert np.max(np.abs(A2.nodes - self.F.nodes)) < 1e-12
        assert np.max(np.abs(np.abs(psi2.values) - np.abs(self.psi.values))) < 1e-14
        assert abs(energy(psi2, A2, self.params) - E0) < 1e-12 * abs(E0)

    def test_random_smooth_chi_exact_invariance(self):
        x, y = self.g.xy[:, 0], self.g.xy[:, 1]
        chi = 0.4 * np.sin(2 * x) * np.cos(y) + 0.3 * x * y - 0.2 * y**2
        E0 = energy(self.psi, self.F, self.params)
        psi2, A2 = gauge_transform(self.psi, self.F, chi)
        assert abs(energy(psi2, A2, self.params) - E0) <= 1e-12 * abs(E0)

    def test_neumann_chi_transforms_a0_to_F(self):
        # the gauge function solving the Neumann problem carries A0 onto F
        sups = []
        for res in (33, 129):
            g = build_grid(DomainSpec.rectangle(1, 1), (res, res))
            c = 10.0
            A0 = GaugeField.from_nodes(g, a0_nodes(g), c)
            chi = -gauge_fix_potential(g, a0_nodes(g))
            psi = ComplexField.constant(g, 1.0)
            _, A2 = gauge_transform(psi, A0, chi)
            F = build_F(g).nodes
            sups.append(np.max(np.abs(A2.nodes - F)))
        assert sups[1] < 0.5 * sups[0]


class TestLLLProjector:
    def test_kernel_hermitian(self):
        rng = np.random.default_rng(1)
        xs = rng.uniform(-3, 3, (7, 2))
        ys = rng.uniform(-3, 3, (5, 2))
        K = lll_kernel(xs, ys)
        K2 = lll_kernel(ys, xs)
        assert np.max(np.abs(K - K2.conj().T)) < 1e-15

    def test_ground_state_reproduced(self):
        g = centered_patch(24.0, 97)
        z2 = g.xy[:, 0] ** 2 + g.xy[:, 1] ** 2
        f = ComplexField(g, np.exp(-z2 / 4.0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            Pf = lll_project(f)
        assert np.max(np.abs(Pf.values - f.values)) < 1e-8

    def test_second_level_annihilated(self):
        g = centered_patch(24.0, 97)
        z2 = g.xy[:, 0] ** 2 + g.xy[:, 1] ** 2
        zbar = g.xy[:, 0] - 1j * g.xy[:, 1]
        f = ComplexField(g, zbar * np.exp(-z2 / 4.0))
        Pf = lll_project(f)
        assert ComplexField(g, Pf.values).norm_l2() < 1e-6 * f.norm_l2()

    def test_idempotence_random_enveloped(self):
        # the envelope must sit well inside the patch: the projector widens
        # a Gaussian profile, and mass reaching the patch edge is exactly
        # what the support precondition exists to exclude
        g = centered_patch(28.0, 113)
        z2 = g.xy[:, 0] ** 2 + g.xy[:, 1] ** 2
        rng = np.random.default_rng(4)
        vals = (rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes)) * np.exp(-z2 / 3.0)
        f = ComplexField(g, vals)
        P1 = lll_project(f)
        P2 = lll_project(P1)
        resid = ComplexField(g, P2.values - P1.values).norm_l2()
        assert resid < 1e-8 * ComplexField(g, P1.values).norm_l2()

    def test_support_violation_warns(self):
        g = centered_patch(12.0, 49)
        f = ComplexField(g, np.ones(g.n_nodes))
        with pytest.warns(UserWarning, match="patch edge"):
            lll_project(f)

    def test_landau_near_kernel(self):
        # projected fields nearly solve the Landau level equation
        # -(grad - i A0)^2 u = u; the residual floor is the lattice level
        # shift, O(h^2) at the patch spacing
        g = centered_patch(20.0, 81)
        z2 = g.xy[:, 0] ** 2 + g.xy[:, 1] ** 2
        rng = np.random.default_rng(9)
        vals = (rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes)) * np.exp(-z2 / 6.0)
        Pf = lll_project(ComplexField(g, vals)).values
        A = GaugeField.from_nodes(g, a0_nodes(g), 1.0)
        ut = A.links * g.e_twist
        d = ut * Pf[g.e_head] - Pf[g.e_tail]
        kwd = g.e_kw * d
        St, Sh = g.scatter_matrices()
        Pop = (Sh @ (np.conj(ut) * kwd) - St @ kwd) / g.w  # = -(D^2) Pf weakly
        resid = Pop - Pf
        interior = g.dist_boundary > 5.0
        num = np.sqrt(np.sum(g.w[interior] * np.abs(resid[interior]) ** 2))
        den = np.sqrt(np.sum(g.w[interior] * np.abs(Pf[interior]) ** 2))
        assert num < 3e-2 * den
