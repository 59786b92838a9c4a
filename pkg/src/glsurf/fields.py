"""Order-parameter and gauge-field types, gauge-covariant operators, and the
lowest-Landau-level projector.

The discretization is link-variable (Peierls-phase) finite differences: a
gauge field enters the energy only through unit-modulus phases attached to
mesh edges, so a discrete gauge transform multiplies every link by the exact
phase difference of the gauge function and leaves every gauge-invariant
quantity unchanged to rounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid, GeometryError

TWO_PI = 2.0 * math.pi


class FieldError(ValueError):
    pass


class GridMismatch(FieldError):
    pass


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GLParams:
    """Ginzburg-Landau parameter kappa, applied field H, and derived scales.

    mu measures the distance of H below kappa on the critical sqrt(kappa)
    scale; eps is the magnetic length 1/sqrt(kappa*H); zeta and lam are the
    L2 / L-infinity amplitude scales of the order parameter.  delta is the
    exponent defining the bulk region omega_kappa = {dist >= kappa^(delta-1)}.
    """

    kappa: float
    H: float
    delta: float = 0.5

    def __post_init__(self):
        if self.kappa <= 0 or self.H <= 0:
            raise FieldError(f"kappa and H must be positive, got {self.kappa}, {self.H}")
        if not 0.0 < self.delta < 1.0:
            raise FieldError(f"delta must lie in (0,1), got {self.delta}")

    @property
    def mu(self) -> float:
        return (self.kappa - self.H) / math.sqrt(self.kappa)

    @property
    def eps(self) -> float:
        return 1.0 / math.sqrt(self.kappa * self.H)

    @property
    def gamma(self) -> float:
        return self.kappa / self.H - 1.0

    @property
    def zeta(self) -> float:
        return max(abs(1.0 - self.kappa / self.H) ** 0.5, self.kappa ** (-0.25))

    @property
    def lam(self) -> float:
        return max(abs(self.kappa / self.H - 1.0) ** 0.5, self.kappa ** (-1.0 + self.delta))

    @property
    def coupling(self) -> float:
        return self.kappa * self.H

    @property
    def omega_depth(self) -> float:
        """Distance from the boundary excluded from the bulk region omega_kappa."""
        return self.kappa ** (-1.0 + self.delta)

    def mu_plus(self) -> float:
        return max(self.mu, 0.0)

    @staticmethod
    def from_mu(kappa: float, mu: float, delta: float = 0.5) -> "GLParams":
        return GLParams(kappa, kappa - mu * math.sqrt(kappa), delta)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass
class ComplexField:
    """Order parameter sampled at grid nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n_nodes,):
            raise FieldError(
                f"field has {self.values.shape} values for a grid of {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.values.view(float))):
            raise FieldError("field contains non-finite values")

    @staticmethod
    def zeros(grid: Grid) -> "ComplexField":
        return ComplexField(grid, np.zeros(grid.n_nodes, dtype=complex))

    @staticmethod
    def constant(grid: Grid, value: complex) -> "ComplexField":
        return ComplexField(grid, np.full(grid.n_nodes, value, dtype=complex))

    def norm_l2(self) -> float:
        return math.sqrt(self.grid.integrate(np.abs(self.values) ** 2))

    def norm_inf(self, mask: np.ndarray | None = None) -> float:
        v = np.abs(self.values) if mask is None else np.abs(self.values[mask])
        return float(v.max()) if v.size else 0.0

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())


class GaugeField:
    """Vector potential with cached link phases exp(-i c int_e A.dl).

    ``nodes`` holds the (n,2) Cartesian components; ``a`` the per-edge line
    integrals; ``links`` the unit-modulus phases at the stated coupling c.
    The cache is computed once at construction from the node values
    (trapezoid along each edge).  :meth:`shifted_exact` implements the
    discrete gauge transform: links are multiplied by the exact node
    differences of the gauge function, which is what keeps gauge invariance
    of the energy exact rather than accurate to quadrature order.
    """

    def __init__(self, grid: Grid, nodes: np.ndarray, coupling: float, a: np.ndarray):
        self.grid = grid
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.shape != (grid.n_nodes, 2):
            raise FieldError(f"gauge field needs ({grid.n_nodes},2) node values")
        self.coupling = float(coupling)
        self.a = np.asarray(a, dtype=float)
        self.links = np.exp(-1j * self.coupling * self.a)
        self.curl_residual_sup = None

    @staticmethod
    def from_nodes(grid: Grid, nodes: np.ndarray, coupling: float) -> "GaugeField":
        nodes = np.asarray(nodes, dtype=float)
        return GaugeField(grid, nodes, coupling, grid.edge_integrals(nodes))

    def recompute_link_deviation(self) -> float:
        """Sup distance between the cache and links recomputed from node values."""
        fresh = np.exp(-1j * self.coupling * self.grid.edge_integrals(self.nodes))
        return float(np.max(np.abs(fresh - self.links)))

    def shifted_exact(self, grad_nodes: np.ndarray, dchi_edges: np.ndarray) -> "GaugeField":
        """New gauge field with nodes + grad(chi) and exactly shifted edge integrals."""
        return GaugeField(self.grid, self.nodes + grad_nodes, self.coupling, self.a + dchi_edges)

    def at_coupling(self, coupling: float) -> "GaugeField":
        return GaugeField(self.grid, self.nodes, coupling, self.a)

    def copy(self) -> "GaugeField":
        return GaugeField(self.grid, self.nodes.copy(), self.coupling, self.a.copy())


def a0_nodes(grid: Grid) -> np.ndarray:
    """The symmetric-gauge unit-field potential (1/2)(-y, x) at the nodes."""
    return 0.5 * np.column_stack([-grid.xy[:, 1], grid.xy[:, 0]])


# ---------------------------------------------------------------------------
# Covariant operators
# ---------------------------------------------------------------------------


def edge_covariant_differences(psi: np.ndarray, A: GaugeField) -> np.ndarray:
    """Per-edge covariant difference quotients (based at the edge tail)."""
    g = A.grid
    ut = A.links * g.e_twist
    return (ut * psi[g.e_head] - psi[g.e_tail]) / g.e_len


def covariant_gradient(psi: ComplexField, A: GaugeField, coupling: float | None = None):
    """Gauge-covariant gradient (grad - i c A) psi at the nodes, (n,2) complex.

    Edge differences are rebased at each node and combined pairwise per mesh
    direction, giving centered second-order values in the interior and
    one-sided first-order values at boundary nodes.  When A vanishes this is
    a plain finite-difference gradient.
    """
    if psi.grid is not A.grid:
        raise GridMismatch("psi and A live on different grids")
    if coupling is not None and coupling != A.coupling:
        A = A.at_coupling(coupling)
    g = psi.grid
    d = edge_covariant_differences(psi.values, A)
    # rebase the difference of edge e at its head: multiply by conj(link*twist)
    ut = A.links * g.e_twist
    d_head = np.conj(ut) * d
    # accumulate vector estimates: edge direction = (tw_tail + tw_head)/ (len/2) halves
    dir_tail = g.e_tw_tail / (0.5 * g.e_len[:, None])
    dir_head = g.e_tw_head / (0.5 * g.e_len[:, None])
    St, Sh = g.scatter_matrices()
    num_x = St @ (d * dir_tail[:, 0]) + Sh @ (d_head * dir_head[:, 0])
    num_y = St @ (d * dir_tail[:, 1]) + Sh @ (d_head * dir_head[:, 1])
    cnt_xx = St @ dir_tail[:, 0] ** 2 + Sh @ dir_head[:, 0] ** 2
    cnt_yy = St @ dir_tail[:, 1] ** 2 + Sh @ dir_head[:, 1] ** 2
    cnt_xy = St @ (dir_tail[:, 0] * dir_tail[:, 1]) + Sh @ (dir_head[:, 0] * dir_head[:, 1])
    # least-squares solve of the 2x2 normal equations per node
    det = cnt_xx * cnt_yy - cnt_xy**2
    ok = det > 1e-12
    gx = np.where(ok, (cnt_yy * num_x - cnt_xy * num_y) / np.where(ok, det, 1.0), 0.0)
    gy = np.where(ok, (cnt_xx * num_y - cnt_xy * num_x) / np.where(ok, det, 1.0), 0.0)
    return np.column_stack([gx, gy])


def gauge_transform(
    psi: ComplexField, A: GaugeField, chi: np.ndarray, coupling: float | None = None
) -> tuple[ComplexField, GaugeField]:
    """Apply psi -> exp(i c chi) psi, A -> A + grad(chi).

    chi is a real node field.  Link integrals of the returned gauge field are
    shifted by the exact differences chi(head) - chi(tail), so the discrete
    energy is invariant to rounding for arbitrary chi; the node values carry
    the finite-difference gradient for inspection and serialization.
    """
    g = psi.grid
    if g is not A.grid:
        raise GridMismatch("psi and A live on different grids")
    chi = np.asarray(chi, dtype=float)
    c = A.coupling if coupling is None else float(coupling)
    psi2 = ComplexField(g, np.exp(1j * c * chi) * psi.values)
    dchi = chi[g.e_head] - chi[g.e_tail]
    A2 = A.at_coupling(c).shifted_exact(g.node_gradient(chi), dchi)
    return psi2, A2


# ---------------------------------------------------------------------------
# Lowest Landau level projector
# ---------------------------------------------------------------------------


def lll_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Integral kernel of the projector onto the lowest level of -(grad - i A0)^2.

    (1/2pi) exp(-i (x1 y2 - x2 y1)/2) exp(-|x-y|^2/4): Hermitian (swapping
    arguments conjugates it), reproduces exp(-|z|^2/4) and annihilates the
    anti-holomorphic first excited state conj(z) exp(-|z|^2/4).
    """
    cross = x[:, 0, None] * y[None, :, 1] - x[:, 1, None] * y[None, :, 0]
    d2 = (x[:, 0, None] - y[None, :, 0]) ** 2 + (x[:, 1, None] - y[None, :, 1]) ** 2
    return (1.0 / TWO_PI) * np.exp(-0.5j * cross - 0.25 * d2)


def lll_project(f: ComplexField, support_margin: float = 4.0) -> ComplexField:
    """Project a compactly supported field on a rectangular patch onto the LLL.

    Direct quadrature of the integral kernel against the node values.  The
    input must be negligible near the patch edge: if more than 1e-8 of the
    total mass sits within ``support_margin`` length units of the boundary, a
    support warning is emitted (the projection of the leaked tail is
    unreliable).
    """
    g = f.grid
    if g.spec.kind not in ("rectangle", "halfstrip"):
        raise GeometryError("lll_project needs a rectangular patch grid")
    total = g.integrate(np.abs(f.values) ** 2)
    if total > 0:
        edge = g.dist_boundary < support_margin
        leak = g.integrate(np.where(edge, np.abs(f.values) ** 2, 0.0)) / total
        if leak > 1e-8:
            warnings.warn(
                f"lll_project: {leak:.2e} of the input mass lies within "
                f"{support_margin} units of the patch edge",
                stacklevel=2,
            )
    wf = g.w * f.values
    out = np.empty(g.n_nodes, dtype=complex)
    chunk = max(1, int(4e6 // max(g.n_nodes, 1)))
    for start in range(0, g.n_nodes, chunk):
        sl = slice(start, min(start + chunk, g.n_nodes))
        out[sl] = lll_kernel(g.xy[sl], g.xy) @ wf
    return ComplexField(g, out)
