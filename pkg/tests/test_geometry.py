import math

import numpy as np
import pytest

from glsurf.geometry import (
    DomainSpec,
    GeometryError,
    build_grid,
    boundary_chart,
    build_F,
    gauge_fix_potential,
)
from glsurf.fields import a0_nodes

PI = math.pi


def series_stream_F(xy, M=1600):
    """Oracle: truncated double sine series for lap(phi)=1, phi=0 on the unit square."""
    x, y = xy[:, 0], xy[:, 1]
    m = np.arange(1, M, 2, dtype=float)
    Sx = np.sin(np.outer(x, m * PI))
    Cx = np.cos(np.outer(x, m * PI))
    Sy = np.sin(np.outer(y, m * PI))
    Cy = np.cos(np.outer(y, m * PI))
    MM, NN = np.meshgrid(m, m, indexing="ij")
    c = -16.0 / (PI**4 * MM * NN * (MM**2 + NN**2))
    F1 = -((Sx @ (c * (NN * PI))) * Cy).sum(1)
    F2 = ((Cx @ (c * (MM * PI))) * Sy).sum(1)
    return np.column_stack([F1, F2])


class TestDomainSpec:
    def test_cell_quantization(self):
        spec = DomainSpec.cell(N=1)
        assert abs(spec.R**2 - 2 * PI) <= 2 * np.spacing(2 * PI)
        spec3 = DomainSpec.cell(N=3)
        assert abs(spec3.R - math.sqrt(6 * PI)) < 1e-15

    def test_cell_rejects_unquantized_side(self):
        with pytest.raises(GeometryError):
            DomainSpec.cell(R=2.5, N=1)
        # quantized side accepted
        DomainSpec.cell(R=math.sqrt(2 * PI))

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(GeometryError):
            DomainSpec.disc(0.0)
        with pytest.raises(GeometryError):
            DomainSpec.rectangle(1.0, -2.0)
        with pytest.raises(GeometryError):
            DomainSpec.halfstrip(0.0, 5.0)


class TestQuadrature:
    def test_disc_area(self):
        g = build_grid(DomainSpec.disc(1.0), (64, 128))
        assert abs(g.w.sum() - PI) / PI < 1e-10
        assert np.all(g.w > 0)

    def test_rect_area(self):
        g = build_grid(DomainSpec.rectangle(1, 1), (32, 32))
        assert abs(g.w.sum() - 1.0) < 1e-10

    def test_graded_disc_area_and_collar(self):
        g = build_grid(
            DomainSpec.disc(1.0), (96, 128),
            radial_grading={"collar_width": 2 / 25, "min_collar_nodes": 8},
        )
        assert abs(g.w.sum() - PI) / PI < 1e-10
        radii = g.shape["radii"]
        assert np.sum(radii >= 1.0 - 2 / 25) >= 8

    def test_smooth_integrand_second_order(self):
        # disc quadrature of a smooth function converges at second order
        def f(xy):
            return np.cos(xy[:, 0]) * np.exp(0.3 * xy[:, 1])

        vals = []
        for res in ((32, 64), (64, 128), (128, 256)):
            g = build_grid(DomainSpec.disc(1.0), res)
            vals.append(g.integrate(f(g.xy)))
        # Richardson: errors shrink by about 4 per refinement
        e1 = abs(vals[0] - vals[2])
        e2 = abs(vals[1] - vals[2])
        assert e2 < 0.35 * e1

    def test_resolution_floor(self):
        with pytest.raises(GeometryError):
            build_grid(DomainSpec.disc(1.0), (4, 64))

    def test_boundary_normals_unit(self):
        for spec, res in ((DomainSpec.disc(2.0), (24, 48)), (DomainSpec.rectangle(2, 1), (16, 12))):
            g = build_grid(spec, res)
            norms = np.linalg.norm(g.boundary_normal, axis=1)
            assert np.max(np.abs(norms - 1.0)) < 1e-12


class TestBoundaryChart:
    def test_disc_curvature_and_length(self):
        ch = boundary_chart(DomainSpec.disc(1.0))
        s = np.linspace(-PI, PI, 17)[:-1]
        assert np.allclose(ch.curvature(s), 1.0)
        assert abs(ch.length - 2 * PI) < 1e-14

    def test_phi_on_circle(self):
        ch = boundary_chart(DomainSpec.disc(2.0))
        s = np.array([0.7])
        p = ch.phi(s, np.array([0.0]))
        assert np.allclose(p, [2 * math.cos(0.35), 2 * math.sin(0.35)])
        # |Phi(s,t)| = r - t exactly
        p2 = ch.phi(s, np.array([0.5]))
        assert abs(np.linalg.norm(p2) - 1.5) < 1e-14

    def test_jacobian(self):
        ch = boundary_chart(DomainSpec.disc(1.0))
        assert abs(ch.jacobian(0.3, 0.1) - 0.9) < 1e-14

    def test_rectangle_flagged_nonsmooth(self):
        ch = boundary_chart(DomainSpec.rectangle(2.0, 1.0))
        assert not ch.smooth
        assert abs(ch.length - 6.0) < 1e-14
        assert np.allclose(ch.curvature(np.array([0.0, 1.0])), 0.0)

    def test_unsupported_kinds(self):
        with pytest.raises(GeometryError):
            boundary_chart(DomainSpec.halfstrip(4, 10))
        with pytest.raises(GeometryError):
            boundary_chart(DomainSpec.cell(N=1))


class TestCanonicalField:
    def test_disc_closed_form(self):
        g = build_grid(DomainSpec.disc(1.0), (64, 128))
        gf = build_F(g)
        assert np.max(np.abs(gf.nodes - a0_nodes(g))) < 1e-6

    def test_mean_curl_exact(self):
        for spec, res in ((DomainSpec.disc(1.0), (48, 96)), (DomainSpec.rectangle(1, 2), (33, 49))):
            g = build_grid(spec, res)
            gf = build_F(g)
            mean_curl = (g.C @ gf.a).sum() / g.plaq_area.sum()
            assert abs(mean_curl - 1.0) < 1e-10

    def test_graded_disc_still_closed_form(self):
        g = build_grid(
            DomainSpec.disc(1.0), (80, 128),
            radial_grading={"collar_width": 0.1, "min_collar_nodes": 8},
        )
        gf = build_F(g)
        assert np.max(np.abs(gf.nodes - a0_nodes(g))) < 1e-9

    def test_normal_component_vanishes(self):
        for spec, res in ((DomainSpec.disc(1.0), (48, 96)), (DomainSpec.rectangle(1, 1), (33, 33))):
            g = build_grid(spec, res)
            gf = build_F(g)
            nu_dot = np.sum(gf.nodes[g.boundary_idx] * g.boundary_normal, axis=1)
            assert np.max(np.abs(nu_dot)) < 1e-12

    def test_square_vs_series_oracle(self):
        # dual route: FD stream solve (Richardson over nested grids) vs the
        # truncated sine series, compared away from the corner layers
        g1 = build_grid(DomainSpec.rectangle(1, 1), (129, 129))
        F1 = build_F(g1).nodes
        g2 = build_grid(DomainSpec.rectangle(1, 1), (257, 257))
        F2 = build_F(g2).nodes.reshape(257, 257, 2)[::2, ::2].reshape(-1, 2)
        rich = (4.0 * F2 - F1) / 3.0
        oracle = series_stream_F(g1.xy)
        interior = g1.dist_boundary > 0.1
        assert np.max(np.abs(rich - oracle)[interior]) < 2e-5
        assert np.max(np.abs(F1 - oracle)[interior]) < 1e-3

    def test_rejects_cell(self):
        g = build_grid(DomainSpec.cell(N=1), (16, 16))
        with pytest.raises(GeometryError):
            build_F(g)

    def test_curl_residual_reported(self):
        g = build_grid(DomainSpec.disc(1.0), (48, 96))
        gf = build_F(g)
        assert gf.curl_residual_sup is not None and gf.curl_residual_sup < 1e-6


class TestGaugeFix:
    def test_a0_gauges_to_F_on_square(self):
        # Neumann route to F: A0 - grad(chi) matches the stream route under
        # refinement (sup converges slowly at the corners, where the Neumann
        # data is discontinuous)
        sups = []
        for res in (33, 129):
            g = build_grid(DomainSpec.rectangle(1, 1), (res, res))
            A0 = a0_nodes(g)
            chi = gauge_fix_potential(g, A0)
            A_fixed = A0 - g.node_gradient(chi)
            F = build_F(g).nodes
            sups.append(np.max(np.abs(A_fixed - F)))
        assert sups[1] < 0.5 * sups[0]
        assert sups[1] < 2e-2


class TestSnapshot:
    def test_csv_roundtrip_columns(self, tmp_path):
        g = build_grid(DomainSpec.rectangle(1, 1), (9, 9))
        path = tmp_path / "snap.csv"
        vals = np.arange(g.n_nodes) * (1 + 2j)
        g.snapshot_csv(path, {"psi": vals})
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "x,y,weight,re_psi,im_psi"
        assert len(rows) == g.n_nodes + 1
        first = [float(v) for v in rows[1].split(",")]
        assert first[:2] == [0.0, 0.0]
