import math

import numpy as np
import pytest

from glsurf.geometry import DomainSpec, build_grid, build_F
from glsurf.fields import GLParams, ComplexField, GaugeField, gauge_transform
from glsurf.functional import (
    GLProblem,
    energy,
    energy_density,
    gradient,
    residual_report,
)

PI = math.pi


@pytest.fixture(scope="module")
def disc_setup():
    g = build_grid(DomainSpec.disc(1.0), (48, 96))
    params = GLParams(5.0, 5.0)
    F = build_F(g, coupling=params.coupling)
    rng = np.random.default_rng(2)
    psi = ComplexField(g, 0.7 * (rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes)))
    return g, params, F, psi


class TestEnergyValues:
    def test_zero_state(self, disc_setup):
        g, params, F, _ = disc_setup
        assert abs(energy(ComplexField.zeros(g), F, params)) < 1e-12

    def test_unit_state_closed_form(self):
        # psi=1, A=F, kappa=H=1: pi/8 - pi/2; Richardson over two resolutions
        # removes the O(h^2) quadrature error of the kinetic term
        vals = []
        for res in ((256, 512), (512, 1024)):
            g = build_grid(DomainSpec.disc(1.0), res)
            params = GLParams(1.0, 1.0)
            F = build_F(g, coupling=1.0)
            vals.append(energy(ComplexField.constant(g, 1.0), F, params))
        extrap = (4.0 * vals[1] - vals[0]) / 3.0
        assert abs(extrap - (-3.0 * PI / 8.0)) < 1e-6
        assert abs(vals[1] - (-3.0 * PI / 8.0)) < 2e-5

    def test_density_integrates_to_energy(self, disc_setup):
        g, params, F, psi = disc_setup
        E = energy(psi, F, params)
        dens = energy_density(psi, F, params)
        assert abs(g.integrate(dens) - E) < 1e-9 * abs(E)

    def test_zero_state_density(self, disc_setup):
        g, params, F, _ = disc_setup
        dens = energy_density(ComplexField.zeros(g), F, params)
        assert np.max(np.abs(dens)) < 1e-14

    def test_region_additivity_exact(self, disc_setup):
        g, params, F, psi = disc_setup
        mask = g.mask_subdisc(0.5)
        e_in = energy(psi, F, params, region=mask)
        e_out = energy(psi, F, params, region=~mask)
        e_all = energy(psi, F, params)
        assert abs(e_in + e_out - e_all) < 1e-12 * max(1.0, abs(e_all))

    def test_density_lower_bound(self, disc_setup):
        # pointwise potential part is bounded by -kappa^2/2; kinetic and curl
        # parts are nonnegative
        g, params, F, psi = disc_setup
        # scale psi to respect |psi| <= 1, where the bound is meaningful
        scaled = ComplexField(g, psi.values / max(1.0, psi.norm_inf()))
        dens = energy_density(scaled, F, params)
        assert np.min(dens) >= -0.5 * params.kappa**2 - 1e-9


class TestGradient:
    def test_normal_state_critical(self, disc_setup):
        g, params, F, _ = disc_setup
        dpsi, dA = gradient(ComplexField.zeros(g), F, params)
        assert np.max(np.abs(dpsi.values)) < 1e-12
        # curl F = 1 makes the field term stationary too
        assert np.max(np.abs(dA.nodes)) < 1e-6

    def test_gradient_vs_fd_20_directions(self):
        g = build_grid(DomainSpec.disc(1.0), (16, 16))
        params = GLParams(3.0, 3.0)
        prob = GLProblem(g, params, variable_A=True)
        rng = np.random.default_rng(5)
        psi0 = 0.5 * (rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes))
        A0 = prob.F.nodes + 0.1 * rng.standard_normal((g.n_nodes, 2))
        x0 = prob.core.pack(psi0, A0)
        g_an = prob.gradient(x0)
        worst = 0.0
        for _ in range(20):
            d = rng.standard_normal(x0.size)
            d /= np.linalg.norm(d)
            eps = 1e-6
            fd = (prob.energy(x0 + eps * d) - prob.energy(x0 - eps * d)) / (2 * eps)
            an = float(np.dot(g_an, d))
            worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
        assert worst < 1e-6

    def test_gauge_invariance_of_energy(self, disc_setup):
        g, params, F, psi = disc_setup
        x, y = g.xy[:, 0], g.xy[:, 1]
        chi = 0.5 * np.cos(x + 0.3) * y + 0.1 * x
        E0 = energy(psi, F, params)
        psi2, A2 = gauge_transform(psi, F, chi)
        assert abs(energy(psi2, A2, params) - E0) <= 1e-12 * abs(E0)


class TestResidualReport:
    def test_normal_state(self, disc_setup):
        g, params, F, _ = disc_setup
        rep = residual_report(ComplexField.zeros(g), F, params)
        assert rep.max_abs_psi == 0.0
        assert rep.virial_defect < 1e-12
        assert rep.curl_defect_sup < 1e-6
        d = rep.to_dict()
        for key in ("max_abs_psi", "curl_defect_sup", "l2_over_zeta",
                    "linf_over_lambda", "virial_defect"):
            assert key in d

    def test_virial_tracks_gradient_norm(self, disc_setup):
        # the defect is |Re<psi, dE/dpsi*>|, so it shrinks linearly with the
        # gradient along a descent path
        g, params, F, psi = disc_setup
        scale = 0.3 / max(1.0, psi.norm_inf())
        base = ComplexField(g, psi.values * scale)
        rep = residual_report(base, F, params)
        dpsi, _ = gradient(base, F, params)
        # E0 + (kappa^2/2) quartic equals Re<psi, dE/d(conj psi)> identically
        inner = abs(np.sum(np.real(np.conj(base.values) * dpsi.values)))
        assert abs(rep.virial_defect - inner) < 1e-8 * max(1.0, inner)
