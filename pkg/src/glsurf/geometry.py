"""Domains, structured meshes, boundary arc-length charts, and the canonical field F.

Two mesh families are supported:

* a boundary-aligned polar mesh for the disc (optionally graded radially so a
  thin boundary layer stays resolved), with the disc center as a single node;
* uniform Cartesian meshes for rectangles, the truncated half-strip, and the
  flux-quantized periodic cell.

Every grid is reduced to one edge/plaquette representation: nodes carry
quadrature weights, edges carry kinetic weights and tangent vectors for line
integrals of a vector potential, plaquettes carry signed edge loops for
discrete curls.  All discrete operators elsewhere in the package are built on
this structure, so a single code path serves every domain kind.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Invalid domain or mesh request."""


# ---------------------------------------------------------------------------
# Domain specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of a computational domain.

    kind is one of ``disc``, ``rectangle``, ``halfstrip``, ``cell``.  The cell
    kind carries the flux integer N and must satisfy the quantization
    R^2 = 2*pi*N to one ulp; :meth:`cell` constructs R from N.
    """

    kind: str
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0
    ell: float = 0.0
    T: float = 0.0
    R: float = 0.0
    N: int = 0

    @staticmethod
    def disc(radius: float) -> "DomainSpec":
        if radius <= 0:
            raise GeometryError(f"disc radius must be positive, got {radius}")
        return DomainSpec("disc", radius=float(radius))

    @staticmethod
    def rectangle(width: float, height: float) -> "DomainSpec":
        if width <= 0 or height <= 0:
            raise GeometryError(f"rectangle sides must be positive, got {width} x {height}")
        return DomainSpec("rectangle", width=float(width), height=float(height))

    @staticmethod
    def halfstrip(ell: float, T: float) -> "DomainSpec":
        if ell <= 0 or T <= 0:
            raise GeometryError(f"halfstrip needs ell > 0 and T > 0, got {ell}, {T}")
        return DomainSpec("halfstrip", ell=float(ell), T=float(T))

    @staticmethod
    def cell(N: int | None = None, R: float | None = None) -> "DomainSpec":
        if N is None and R is None:
            raise GeometryError("cell needs a flux integer N (or a quantized side R)")
        if N is None:
            N = int(round(R * R / TWO_PI))
        if N < 1:
            raise GeometryError(f"cell flux integer must be >= 1, got {N}")
        if R is not None and abs(R * R - TWO_PI * N) > 2.0 * np.spacing(TWO_PI * N):
            raise GeometryError(
                f"cell side R={R} violates flux quantization: R^2={R * R} != 2*pi*N={TWO_PI * N}"
            )
        return DomainSpec("cell", R=math.sqrt(TWO_PI * N), N=int(N))

    @property
    def area(self) -> float:
        if self.kind == "disc":
            return math.pi * self.radius**2
        if self.kind == "rectangle":
            return self.width * self.height
        if self.kind == "halfstrip":
            return 2.0 * self.ell * self.T
        if self.kind == "cell":
            return self.R * self.R
        raise GeometryError(f"unknown domain kind {self.kind!r}")

    @property
    def perimeter(self) -> float:
        if self.kind == "disc":
            return TWO_PI * self.radius
        if self.kind == "rectangle":
            return 2.0 * (self.width + self.height)
        raise GeometryError(f"perimeter undefined for kind {self.kind!r}")


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass
class Grid:
    """Mesh with node quadrature, edge, and plaquette data.

    Nodes: ``xy`` (n,2) coordinates, positive quadrature weights ``w`` summing
    to the domain area, distances to the physical boundary (inf on the
    periodic cell), a boundary index set with unit outward normals, and a
    Dirichlet mask for problems with essential conditions.

    Edges: tail/head node indices, kinetic weight ``e_kw = w_e / len_e**2``,
    tangent half-weights such that the line integral of a node vector field V
    along edge e is ``V[tail].tw_tail + V[head].tw_head`` (trapezoid along
    straight edges and circular arcs), and a unit wrap phase ``e_twist``
    implementing quasi-periodic identifications (1 except on cell wrap edges).

    Plaquettes: signed incidence matrix ``C`` (plaquettes x edges) so the
    discrete curl of edge integrals a is ``(C @ a) / plaq_area``, plus a
    distribution matrix spreading plaquette quantities equally over corner
    nodes (density reporting).

    Grids are built once and treated as immutable; they are safe to share
    across threads.
    """

    spec: DomainSpec
    xy: np.ndarray
    w: np.ndarray
    dist_boundary: np.ndarray
    e_tail: np.ndarray
    e_head: np.ndarray
    e_kw: np.ndarray
    e_len: np.ndarray
    e_tw_tail: np.ndarray
    e_tw_head: np.ndarray
    e_twist: np.ndarray
    C: sp.csr_matrix
    plaq_area: np.ndarray
    plaq_to_node: sp.csr_matrix
    boundary_idx: np.ndarray
    boundary_normal: np.ndarray
    dirichlet_mask: np.ndarray
    shape: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.xy.shape[0]

    @property
    def n_edges(self) -> int:
        return self.e_tail.shape[0]

    def integrate(self, f: np.ndarray) -> float:
        return float(np.real(np.sum(self.w * f)))

    # -- edge/vector machinery ------------------------------------------------

    def edge_integrals(self, vec: np.ndarray) -> np.ndarray:
        """Line integrals of a node vector field (n,2) along every edge."""
        vt = vec[self.e_tail]
        vh = vec[self.e_head]
        return (
            vt[:, 0] * self.e_tw_tail[:, 0]
            + vt[:, 1] * self.e_tw_tail[:, 1]
            + vh[:, 0] * self.e_tw_head[:, 0]
            + vh[:, 1] * self.e_tw_head[:, 1]
        )

    def edge_integral_matrix(self) -> sp.csr_matrix:
        """Sparse (edges x 2n) matrix computing edge integrals from packed [V1; V2]."""
        if "T_edge" not in self._cache:
            n, E = self.n_nodes, self.n_edges
            rows = np.repeat(np.arange(E), 4)
            cols = np.stack(
                [self.e_tail, self.e_tail + n, self.e_head, self.e_head + n], axis=1
            ).ravel()
            vals = np.stack(
                [
                    self.e_tw_tail[:, 0],
                    self.e_tw_tail[:, 1],
                    self.e_tw_head[:, 0],
                    self.e_tw_head[:, 1],
                ],
                axis=1,
            ).ravel()
            self._cache["T_edge"] = sp.csr_matrix((vals, (rows, cols)), shape=(E, 2 * n))
        return self._cache["T_edge"]

    def scatter_matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """(S_tail, S_head): node x edge matrices accumulating edge values at endpoints."""
        if "scatter" not in self._cache:
            E, n = self.n_edges, self.n_nodes
            ones = np.ones(E)
            St = sp.csr_matrix((ones, (self.e_tail, np.arange(E))), shape=(n, E))
            Sh = sp.csr_matrix((ones, (self.e_head, np.arange(E))), shape=(n, E))
            self._cache["scatter"] = (St, Sh)
        return self._cache["scatter"]

    def node_gradient(self, f: np.ndarray) -> np.ndarray:
        """Gradient of a scalar node field, (n,2) Cartesian components.

        Three-point stencils, exact on quadratics, one-sided at boundaries.
        """
        if self.spec.kind == "disc":
            return _polar_node_gradient(self, f)
        return _cartesian_node_gradient(self, f)

    # -- regions ----------------------------------------------------------------

    def mask_dist_ge(self, d: float) -> np.ndarray:
        return self.dist_boundary >= d

    def mask_subdisc(self, frac: float) -> np.ndarray:
        if self.spec.kind != "disc":
            raise GeometryError("sub-disc regions are defined on disc grids only")
        r = np.hypot(self.xy[:, 0], self.xy[:, 1])
        return r <= frac * self.spec.radius

    def mask_collar(self, depth: float) -> np.ndarray:
        return self.dist_boundary <= depth

    # -- serialization ------------------------------------------------------------

    def snapshot_csv(self, path, fields: dict[str, np.ndarray] | None = None) -> None:
        """Write the node table: x, y, weight, then columns per field.

        Complex fields produce ``re_<name>, im_<name>`` columns, (n,2) vector
        fields ``<name>1, <name>2``, real fields a single column.  Plain CSV
        with a header row, ',' separator, '.' decimal point.
        """
        fields = fields or {}
        header = ["x", "y", "weight"]
        cols = [self.xy[:, 0], self.xy[:, 1], self.w]
        for name, arr in fields.items():
            arr = np.asarray(arr)
            if np.iscomplexobj(arr):
                header += [f"re_{name}", f"im_{name}"]
                cols += [arr.real, arr.imag]
            elif arr.ndim == 2:
                header += [f"{name}1", f"{name}2"]
                cols += [arr[:, 0], arr[:, 1]]
            else:
                header.append(name)
                cols.append(arr)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(np.column_stack(cols).tolist())


# ---------------------------------------------------------------------------
# Grid builders
# ---------------------------------------------------------------------------


def build_grid(
    spec: DomainSpec,
    resolution: tuple[int, int],
    radial_grading: dict | None = None,
) -> Grid:
    """Build the mesh for a domain.

    resolution is (n_r, n_theta) for the disc, (n_x, n_y) node counts for
    rectangle/halfstrip, and (n, n) for the cell.  ``radial_grading`` (disc
    only) is a dict with ``collar_width`` and ``min_collar_nodes``: the radial
    spacing at the boundary is chosen so at least that many intervals fall
    inside the collar, growing geometrically toward the center.
    """
    n1, n2 = int(resolution[0]), int(resolution[1])
    if n1 < 8 or n2 < 8:
        raise GeometryError(f"resolution must be >= 8 nodes per dimension, got {resolution}")
    if spec.kind == "disc":
        return _build_disc(spec, n1, n2, radial_grading)
    if spec.kind == "rectangle":
        return _build_cartesian(spec, n1, n2, 0.0, spec.width, 0.0, spec.height)
    if spec.kind == "halfstrip":
        g = _build_cartesian(spec, n1, n2, -spec.ell, spec.ell, 0.0, spec.T)
        x, y = g.xy[:, 0], g.xy[:, 1]
        g.dirichlet_mask = (
            np.isclose(x, -spec.ell) | np.isclose(x, spec.ell) | np.isclose(y, spec.T)
        )
        return g
    if spec.kind == "cell":
        return _build_cell(spec, n1, n2)
    raise GeometryError(f"unknown domain kind {spec.kind!r}")


def _graded_radii(r0: float, nr: int, collar_width: float, min_collar_nodes: int) -> np.ndarray:
    """Radii 0 < r_1 < ... < r_m = r0, spacing geometric and finest at r0."""
    m = nr - 1
    dr_b = collar_width / max(min_collar_nodes, 1)
    if dr_b * m >= r0:
        return np.linspace(0.0, r0, nr)[1:]
    lo, hi = 1.0 + 1e-12, 2.0
    for _ in range(200):
        q = 0.5 * (lo + hi)
        if dr_b * (q**m - 1.0) / (q - 1.0) < r0:
            lo = q
        else:
            hi = q
    q = 0.5 * (lo + hi)
    if q > 1.4:
        raise GeometryError(
            f"radial grading ratio {q:.3f} too aggressive; increase n_r "
            f"(need {min_collar_nodes} intervals inside a collar of width {collar_width})"
        )
    steps = dr_b * q ** np.arange(m)
    steps *= r0 / steps.sum()
    return r0 - np.concatenate([[0.0], np.cumsum(steps[:-1])])[::-1]


def _build_disc(spec: DomainSpec, nr: int, ntheta: int, grading: dict | None) -> Grid:
    r0 = spec.radius
    if grading:
        radii = _graded_radii(r0, nr, grading["collar_width"], grading.get("min_collar_nodes", 8))
    else:
        radii = np.linspace(0.0, r0, nr)[1:]
    nring = radii.size
    dtheta = TWO_PI / ntheta
    theta = np.arange(ntheta) * dtheta
    ct, st = np.cos(theta), np.sin(theta)

    n = 1 + nring * ntheta
    xy = np.empty((n, 2))
    xy[0] = 0.0
    xy[1:, 0] = (radii[:, None] * ct[None, :]).ravel()
    xy[1:, 1] = (radii[:, None] * st[None, :]).ravel()

    r_half = np.empty(nring + 1)
    r_half[0] = 0.5 * radii[0]
    r_half[1:-1] = 0.5 * (radii[:-1] + radii[1:])
    r_half[-1] = r0
    w = np.empty(n)
    w[0] = math.pi * r_half[0] ** 2
    w[1:] = np.repeat(0.5 * dtheta * (r_half[1:] ** 2 - r_half[:-1] ** 2), ntheta)

    dist = r0 - np.hypot(xy[:, 0], xy[:, 1])

    J = np.arange(ntheta)
    Jp = (J + 1) % ntheta

    def nid(i, j):
        return 1 + i * ntheta + j

    e_r = np.stack([ct, st], axis=1)
    e_t = np.stack([-st, ct], axis=1)

    tails, heads, kws, lens, twt, twh = [], [], [], [], [], []
    # spokes center -> ring 0
    r1 = radii[0]
    tails.append(np.zeros(ntheta, dtype=np.int64))
    heads.append(nid(0, J))
    kws.append(np.full(ntheta, dtheta * (0.5 * r1) / r1))
    lens.append(np.full(ntheta, r1))
    twt.append(e_r * (0.5 * r1))
    twh.append(e_r * (0.5 * r1))
    # radial edges ring i -> i+1
    for i in range(nring - 1):
        dr = radii[i + 1] - radii[i]
        rmid = 0.5 * (radii[i] + radii[i + 1])
        tails.append(nid(i, J))
        heads.append(nid(i + 1, J))
        kws.append(np.full(ntheta, dtheta * rmid / dr))
        lens.append(np.full(ntheta, dr))
        twt.append(e_r * (0.5 * dr))
        twh.append(e_r * (0.5 * dr))
    # arc edges within ring i
    ext = r_half[1:] - r_half[:-1]
    e_t_next = np.stack([-np.sin(theta + dtheta), np.cos(theta + dtheta)], axis=1)
    for i in range(nring):
        arc = radii[i] * dtheta
        tails.append(nid(i, J))
        heads.append(nid(i, Jp))
        kws.append(np.full(ntheta, ext[i] / arc))
        lens.append(np.full(ntheta, arc))
        twt.append(e_t * (0.5 * arc))
        twh.append(e_t_next * (0.5 * arc))

    e_tail = np.concatenate(tails)
    e_head = np.concatenate(heads)
    e_kw = np.concatenate(kws)
    e_len = np.concatenate(lens)
    e_tw_tail = np.concatenate(twt)
    e_tw_head = np.concatenate(twh)
    twist = np.ones(e_tail.size, dtype=complex)

    def spoke_id(j):
        return j % ntheta

    def radial_id(i, j):
        return ntheta + i * ntheta + j % ntheta

    arc0 = ntheta * nring

    def arc_id(i, j):
        return arc0 + i * ntheta + j % ntheta

    # plaquettes: fan around the center, then annular rings
    ncp = ntheta + (nring - 1) * ntheta
    rows = np.repeat(np.arange(ncp), [3] * ntheta + [4] * ((nring - 1) * ntheta))
    cols, vals, areas = [], [], []
    cols.append(np.stack([spoke_id(J), arc_id(0, J), spoke_id(Jp)], axis=1).ravel())
    vals.append(np.tile([1.0, 1.0, -1.0], ntheta))
    areas.append(np.full(ntheta, 0.5 * dtheta * radii[0] ** 2))
    for i in range(nring - 1):
        cols.append(
            np.stack([radial_id(i, J), arc_id(i + 1, J), radial_id(i, Jp), arc_id(i, J)], axis=1).ravel()
        )
        vals.append(np.tile([1.0, 1.0, -1.0, -1.0], ntheta))
        areas.append(np.full(ntheta, 0.5 * dtheta * (radii[i + 1] ** 2 - radii[i] ** 2)))
    C = sp.csr_matrix(
        (np.concatenate(vals), (rows, np.concatenate(cols))), shape=(ncp, e_tail.size)
    )
    plaq_area = np.concatenate(areas)

    prow, pcol, pval = [], [], []
    prow.append(np.stack([np.zeros(ntheta, dtype=np.int64), nid(0, J), nid(0, Jp)], axis=1).ravel())
    pcol.append(np.repeat(np.arange(ntheta), 3))
    pval.append(np.full(3 * ntheta, 1.0 / 3.0))
    for i in range(nring - 1):
        prow.append(np.stack([nid(i, J), nid(i + 1, J), nid(i + 1, Jp), nid(i, Jp)], axis=1).ravel())
        pcol.append(np.repeat(ntheta + i * ntheta + J, 4))
        pval.append(np.full(4 * ntheta, 0.25))
    plaq_to_node = sp.csr_matrix(
        (np.concatenate(pval), (np.concatenate(prow), np.concatenate(pcol))),
        shape=(n, ncp),
    )

    b_idx = np.arange(1 + (nring - 1) * ntheta, n)
    b_nrm = np.stack([ct, st], axis=1)

    return Grid(
        spec=spec,
        xy=xy,
        w=w,
        dist_boundary=dist,
        e_tail=e_tail,
        e_head=e_head,
        e_kw=e_kw,
        e_len=e_len,
        e_tw_tail=e_tw_tail,
        e_tw_head=e_tw_head,
        e_twist=twist,
        C=C,
        plaq_area=plaq_area,
        plaq_to_node=plaq_to_node,
        boundary_idx=b_idx,
        boundary_normal=b_nrm,
        dirichlet_mask=np.zeros(n, dtype=bool),
        shape={"kind": "disc", "nr": nring + 1, "ntheta": ntheta, "radii": radii, "dtheta": dtheta},
    )


def _build_cartesian(
    spec: DomainSpec, nx: int, ny: int, x0: float, x1: float, y0: float, y1: float
) -> Grid:
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    hx = xs[1] - xs[0]
    hy = ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    n = nx * ny

    cx = np.ones(nx)
    cx[0] = cx[-1] = 0.5
    cy = np.ones(ny)
    cy[0] = cy[-1] = 0.5
    w = (np.outer(cx, cy) * (hx * hy)).ravel()
    dist = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y]).ravel()

    I, Jf = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
    tx = (I * ny + Jf).ravel()
    hx_idx = ((I + 1) * ny + Jf).ravel()
    wx = (hx * hy) * np.tile(cy, nx - 1)
    I2, J2 = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
    ty = (I2 * ny + J2).ravel()
    hy_idx = (I2 * ny + J2 + 1).ravel()
    wy = (hx * hy) * np.repeat(cx, ny - 1)

    e_tail = np.concatenate([tx, ty])
    e_head = np.concatenate([hx_idx, hy_idx])
    e_kw = np.concatenate([wx / hx**2, wy / hy**2])
    e_len = np.concatenate([np.full(tx.size, hx), np.full(ty.size, hy)])
    e_tw = np.concatenate(
        [
            np.tile([0.5 * hx, 0.0], (tx.size, 1)),
            np.tile([0.0, 0.5 * hy], (ty.size, 1)),
        ]
    )
    twist = np.ones(e_tail.size, dtype=complex)

    nxe = (nx - 1) * ny
    Ip, Jp = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    xe = (Ip * ny + Jp).ravel()          # x-edge (i, j)
    xe_up = (Ip * ny + Jp + 1).ravel()   # x-edge (i, j+1)
    ye = (nxe + Ip * (ny - 1) + Jp).ravel()          # y-edge (i, j)
    ye_rt = (nxe + (Ip + 1) * (ny - 1) + Jp).ravel() # y-edge (i+1, j)
    P = xe.size
    rows = np.repeat(np.arange(P), 4)
    cols = np.stack([xe, ye_rt, xe_up, ye], axis=1).ravel()
    vals = np.tile([1.0, 1.0, -1.0, -1.0], P)
    C = sp.csr_matrix((vals, (rows, cols)), shape=(P, e_tail.size))
    plaq_area = np.full(P, hx * hy)

    c00 = (Ip * ny + Jp).ravel()
    c10 = ((Ip + 1) * ny + Jp).ravel()
    c11 = ((Ip + 1) * ny + Jp + 1).ravel()
    c01 = (Ip * ny + Jp + 1).ravel()
    prow = np.stack([c00, c10, c11, c01], axis=1).ravel()
    pcol = np.repeat(np.arange(P), 4)
    plaq_to_node = sp.csr_matrix((np.full(4 * P, 0.25), (prow, pcol)), shape=(n, P))

    Ia, Ja = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    on_b = (Ia == 0) | (Ia == nx - 1) | (Ja == 0) | (Ja == ny - 1)
    b_idx = np.flatnonzero(on_b.ravel())
    nrm = np.zeros((b_idx.size, 2))
    bx, by = xy[b_idx, 0], xy[b_idx, 1]
    nrm[np.isclose(bx, x0), 0] -= 1.0
    nrm[np.isclose(bx, x1), 0] += 1.0
    nrm[np.isclose(by, y0), 1] -= 1.0
    nrm[np.isclose(by, y1), 1] += 1.0
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]

    return Grid(
        spec=spec,
        xy=xy,
        w=w,
        dist_boundary=dist,
        e_tail=e_tail,
        e_head=e_head,
        e_kw=e_kw,
        e_len=e_len,
        e_tw_tail=e_tw.copy(),
        e_tw_head=e_tw.copy(),
        e_twist=twist,
        C=C,
        plaq_area=plaq_area,
        plaq_to_node=plaq_to_node,
        boundary_idx=b_idx,
        boundary_normal=nrm,
        dirichlet_mask=np.zeros(n, dtype=bool),
        shape={
            "kind": "cartesian",
            "nx": nx,
            "ny": ny,
            "hx": hx,
            "hy": hy,
            "x0": x0,
            "x1": x1,
            "y0": y0,
            "y1": y1,
        },
    )


def _build_cell(spec: DomainSpec, nx: int, ny: int) -> Grid:
    """Periodic cell [0,R)^2 with quasi-periodic wrap phases for flux N.

    Wrap phases implement u(z1+R, z2) = exp(i pi N z2 / R) u(z1, z2) and
    u(z1, z2+R) = exp(-i pi N z1 / R) u(z1, z2).  Under R^2 = 2 pi N, every
    plaquette loop (wrapped ones included) carries the same flux h^2; the two
    magnetic translations then commute, which is the consistency the
    quantization buys.
    """
    if nx != ny:
        raise GeometryError("cell grids must be square (nx == ny)")
    R, N = spec.R, spec.N
    min_res = int(np.ceil(16.0 * math.sqrt(N)))
    if nx < min_res:
        raise GeometryError(
            f"cell resolution {nx} too coarse for N={N}: need >= 16 nodes per flux quantum "
            f"per dimension ({min_res})"
        )
    h = R / nx
    xs = np.arange(nx) * h
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    n = nx * nx
    w = np.full(n, h * h)

    I, J = np.meshgrid(np.arange(nx), np.arange(nx), indexing="ij")
    tx = (I * nx + J).ravel()
    hx_idx = (((I + 1) % nx) * nx + J).ravel()
    twist_x = np.where(
        I.ravel() == nx - 1, np.exp(1j * math.pi * N * xy[tx, 1] / R), 1.0 + 0.0j
    )
    ty = tx.copy()
    hy_idx = (I * nx + (J + 1) % nx).ravel()
    twist_y = np.where(
        J.ravel() == nx - 1, np.exp(-1j * math.pi * N * xy[ty, 0] / R), 1.0 + 0.0j
    )

    e_tail = np.concatenate([tx, ty])
    e_head = np.concatenate([hx_idx, hy_idx])
    e_kw = np.full(2 * n, 1.0)  # (h*h) / h**2
    e_len = np.full(2 * n, h)
    e_tw = np.concatenate(
        [np.tile([0.5 * h, 0.0], (n, 1)), np.tile([0.0, 0.5 * h], (n, 1))]
    )
    twist = np.concatenate([twist_x, twist_y])

    xe = (I * nx + J).ravel()
    xe_up = (I * nx + (J + 1) % nx).ravel()
    ye = n + (I * nx + J).ravel()
    ye_rt = n + (((I + 1) % nx) * nx + J).ravel()
    P = n
    rows = np.repeat(np.arange(P), 4)
    cols = np.stack([xe, ye_rt, xe_up, ye], axis=1).ravel()
    vals = np.tile([1.0, 1.0, -1.0, -1.0], P)
    C = sp.csr_matrix((vals, (rows, cols)), shape=(P, e_tail.size))
    plaq_area = np.full(P, h * h)

    c00 = (I * nx + J).ravel()
    c10 = (((I + 1) % nx) * nx + J).ravel()
    c11 = (((I + 1) % nx) * nx + (J + 1) % nx).ravel()
    c01 = (I * nx + (J + 1) % nx).ravel()
    prow = np.stack([c00, c10, c11, c01], axis=1).ravel()
    pcol = np.repeat(np.arange(P), 4)
    plaq_to_node = sp.csr_matrix((np.full(4 * P, 0.25), (prow, pcol)), shape=(n, P))

    return Grid(
        spec=spec,
        xy=xy,
        w=w,
        dist_boundary=np.full(n, np.inf),
        e_tail=e_tail,
        e_head=e_head,
        e_kw=e_kw,
        e_len=e_len,
        e_tw_tail=e_tw.copy(),
        e_tw_head=e_tw.copy(),
        e_twist=twist,
        C=C,
        plaq_area=plaq_area,
        plaq_to_node=plaq_to_node,
        boundary_idx=np.empty(0, dtype=np.int64),
        boundary_normal=np.empty((0, 2)),
        dirichlet_mask=np.zeros(n, dtype=bool),
        shape={"kind": "cell", "n": nx, "h": h, "R": R, "N": N},
    )


# ---------------------------------------------------------------------------
# Node gradients
# ---------------------------------------------------------------------------


def _d_nonuniform(f: np.ndarray, x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Second-order derivative of f sampled at increasing x along axis."""
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    h1 = (x[1:-1] - x[:-2]).reshape((-1,) + (1,) * (f.ndim - 1))
    h2 = (x[2:] - x[1:-1]).reshape((-1,) + (1,) * (f.ndim - 1))
    out[1:-1] = (h1**2 * f[2:] - h2**2 * f[:-2] + (h2**2 - h1**2) * f[1:-1]) / (
        h1 * h2 * (h1 + h2)
    )
    ha, hb = x[1] - x[0], x[2] - x[1]
    out[0] = (
        -f[0] * (2 * ha + hb) / (ha * (ha + hb))
        + f[1] * (ha + hb) / (ha * hb)
        - f[2] * ha / (hb * (ha + hb))
    )
    ha, hb = x[-1] - x[-2], x[-2] - x[-3]
    out[-1] = (
        f[-1] * (2 * ha + hb) / (ha * (ha + hb))
        - f[-2] * (ha + hb) / (ha * hb)
        + f[-3] * ha / (hb * (ha + hb))
    )
    return np.moveaxis(out, 0, axis)


def _polar_node_gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    radii = grid.shape["radii"]
    ntheta = grid.shape["ntheta"]
    dtheta = grid.shape["dtheta"]
    rings = f[1:].reshape(radii.size, ntheta)
    ext = np.concatenate([[0.0], radii])
    stacked = np.vstack([np.full((1, ntheta), f[0]), rings])
    dfdr = _d_nonuniform(stacked, ext, axis=0)[1:]
    dfdth = (np.roll(rings, -1, axis=1) - np.roll(rings, 1, axis=1)) / (2 * dtheta)
    theta = np.arange(ntheta) * dtheta
    ct, st = np.cos(theta), np.sin(theta)
    gt = dfdth / radii[:, None]
    out = np.empty((grid.n_nodes, 2), dtype=np.result_type(f, float))
    out[1:, 0] = (dfdr * ct[None, :] - gt * st[None, :]).ravel()
    out[1:, 1] = (dfdr * st[None, :] + gt * ct[None, :]).ravel()
    d0 = (rings[0] - f[0]) / radii[0]
    out[0, 0] = 2.0 * np.mean(d0 * ct)
    out[0, 1] = 2.0 * np.mean(d0 * st)
    return out


def _cartesian_node_gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    sh = grid.shape
    if sh["kind"] == "cell":
        nx, h = sh["n"], sh["h"]
        F = f.reshape(nx, nx)
        gx = (np.roll(F, -1, 0) - np.roll(F, 1, 0)) / (2 * h)
        gy = (np.roll(F, -1, 1) - np.roll(F, 1, 1)) / (2 * h)
        return np.column_stack([gx.ravel(), gy.ravel()])
    nx, ny = sh["nx"], sh["ny"]
    F = f.reshape(nx, ny)
    xs = np.linspace(sh["x0"], sh["x1"], nx)
    ys = np.linspace(sh["y0"], sh["y1"], ny)
    gx = _d_nonuniform(F, xs, axis=0)
    gy = _d_nonuniform(F, ys, axis=1)
    return np.column_stack([gx.ravel(), gy.ravel()])


# ---------------------------------------------------------------------------
# Boundary chart
# ---------------------------------------------------------------------------


@dataclass
class BoundaryChart:
    """Arc-length chart of the boundary: Phi(s,t) = gamma(s) + t*nu(s).

    ``s`` runs over [-L/2, L/2) with L the boundary length, ``nu`` the unit
    inward normal, ``t`` the depth into the domain; the area element of the
    chart is 1 - t*k(s).  ``smooth`` is False for the rectangle, whose corners
    break the chart.  t0 is the collar depth on which the chart is valid.
    """

    spec: DomainSpec
    length: float
    t0: float
    smooth: bool
    gamma: Callable[[np.ndarray], np.ndarray]
    inward_normal: Callable[[np.ndarray], np.ndarray]
    curvature: Callable[[np.ndarray], np.ndarray]

    def phi(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.gamma(s) + t[..., None] * self.inward_normal(s)

    def jacobian(self, s, t):
        return 1.0 - np.asarray(t) * self.curvature(np.asarray(s))


def boundary_chart(spec: DomainSpec, t0: float | None = None) -> BoundaryChart:
    """Arc-length boundary chart; disc and rectangle only (rectangle non-smooth)."""
    if spec.kind == "disc":
        r0 = spec.radius
        L = TWO_PI * r0
        t0 = t0 if t0 is not None else 0.25 * r0

        def gamma(s):
            a = np.asarray(s) / r0
            return np.stack([r0 * np.cos(a), r0 * np.sin(a)], axis=-1)

        def nu(s):
            a = np.asarray(s) / r0
            return np.stack([-np.cos(a), -np.sin(a)], axis=-1)

        def curv(s):
            return np.broadcast_to(1.0 / r0, np.shape(s)).copy()

        return BoundaryChart(spec, L, t0, True, gamma, nu, curv)

    if spec.kind == "rectangle":
        W, H = spec.width, spec.height
        L = 2.0 * (W + H)
        t0 = t0 if t0 is not None else min(0.25 * min(W, H), 0.125 * math.hypot(W, H))

        def locate(s):
            u = np.atleast_1d((np.asarray(s, dtype=float) + 0.5 * L) % L)
            pts = np.zeros(u.shape + (2,))
            nrm = np.zeros_like(pts)
            m = u < W
            pts[m, 0] = u[m]
            nrm[m] = (0.0, 1.0)
            m = (u >= W) & (u < W + H)
            pts[m, 0] = W
            pts[m, 1] = u[m] - W
            nrm[m] = (-1.0, 0.0)
            m = (u >= W + H) & (u < 2 * W + H)
            pts[m, 0] = 2 * W + H - u[m]
            pts[m, 1] = H
            nrm[m] = (0.0, -1.0)
            m = u >= 2 * W + H
            pts[m, 1] = L - u[m]
            nrm[m] = (1.0, 0.0)
            return pts, nrm

        def gamma(s):
            pts, _ = locate(s)
            return pts.reshape(np.shape(s) + (2,))

        def nu(s):
            _, nrm = locate(s)
            return nrm.reshape(np.shape(s) + (2,))

        def curv(s):
            return np.zeros(np.shape(s))

        return BoundaryChart(spec, L, t0, False, gamma, nu, curv)

    raise GeometryError(f"boundary chart unsupported for kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Canonical field F
# ---------------------------------------------------------------------------


def _disc_poisson_stream(grid: Grid) -> np.ndarray:
    """Solve lap(phi) = 1, phi = 0 on the boundary ring (conservative polar FV)."""
    radii = grid.shape["radii"]
    ntheta = grid.shape["ntheta"]
    dtheta = grid.shape["dtheta"]
    nring = radii.size
    nun = 1 + (nring - 1) * ntheta  # unknowns: center + interior rings

    def uidx(i, j):
        return 1 + i * ntheta + (j % ntheta)

    rows, cols, vals = [], [], []
    rhs = np.ones(nun)
    r_half = np.empty(nring + 1)
    r_half[0] = 0.5 * radii[0]
    r_half[1:-1] = 0.5 * (radii[:-1] + radii[1:])
    r_half[-1] = radii[-1]

    area_c = math.pi * r_half[0] ** 2
    coef = r_half[0] * dtheta / radii[0] / area_c
    rows += [0] * (1 + ntheta)
    cols += [0] + [uidx(0, j) for j in range(ntheta)]
    vals += [-ntheta * coef] + [coef] * ntheta

    for i in range(nring - 1):
        r = radii[i]
        cell = 0.5 * dtheta * (r_half[i + 1] ** 2 - r_half[i] ** 2)
        dr_out = radii[i + 1] - r
        dr_in = (r - radii[i - 1]) if i > 0 else radii[0]
        c_out = r_half[i + 1] * dtheta / dr_out / cell
        c_in = r_half[i] * dtheta / dr_in / cell
        c_th = (r_half[i + 1] - r_half[i]) / (r * dtheta) / cell
        for j in range(ntheta):
            me = uidx(i, j)
            rows += [me, me, me]
            cols += [me, uidx(i, j + 1), uidx(i, j - 1)]
            vals += [-(c_out + c_in + 2 * c_th), c_th, c_th]
            if i + 1 <= nring - 2:
                rows.append(me), cols.append(uidx(i + 1, j)), vals.append(c_out)
            rows.append(me)
            cols.append(0 if i == 0 else uidx(i - 1, j))
            vals.append(c_in)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nun, nun))
    phi = np.zeros(grid.n_nodes)
    phi[:nun] = spla.spsolve(A, rhs)
    return phi


def _rect_poisson_stream(grid: Grid) -> np.ndarray:
    """Solve lap(phi) = 1, phi = 0 on the rectangle boundary (5-point stencil)."""
    sh = grid.shape
    nx, ny, hx, hy = sh["nx"], sh["ny"], sh["hx"], sh["hy"]
    m, k = nx - 2, ny - 2
    N = m * k
    main = np.full(N, -2.0 / hx**2 - 2.0 / hy**2)
    ex = np.ones(N - k)
    ey = np.tile(np.concatenate([np.ones(k - 1), [0.0]]), m)[:-1]
    A = sp.diags(
        [main, ex / hx**2, ex / hx**2, ey / hy**2, ey / hy**2],
        [0, k, -k, 1, -1],
        format="csc",
    )
    phi_u = spla.spsolve(A, np.ones(N))
    phi = np.zeros((nx, ny))
    phi[1:-1, 1:-1] = phi_u.reshape(m, k)
    return phi.ravel()


def build_F(grid: Grid, coupling: float = 1.0):
    """Canonical vector potential: curl F = 1, div F = 0, nu.F = 0.

    Built from the stream function solving lap(phi) = 1 with phi = 0 on the
    boundary, then F = (-d2 phi, d1 phi), so curl F = lap(phi) = 1, the
    rotated gradient is divergence free, and the normal component on the
    boundary is a tangential derivative of the constant boundary trace, hence
    zero to rounding.  Node values are scaled by 1 + O(h^2) so the discrete
    area-mean of curl F over the plaquettes is exactly 1.

    Returns a :class:`glsurf.fields.GaugeField` at the stated coupling, with
    ``curl_residual_sup`` recording the worst plaquette deviation from 1.
    """
    from .fields import GaugeField

    if grid.spec.kind == "disc":
        phi = _disc_poisson_stream(grid)
    elif grid.spec.kind == "rectangle":
        phi = _rect_poisson_stream(grid)
    else:
        raise GeometryError("build_F supports disc and rectangle domains")
    g = grid.node_gradient(phi)
    F = np.column_stack([-g[:, 1], g[:, 0]])
    a = grid.edge_integrals(F)
    circ = float((grid.C @ a).sum())
    total_area = float(grid.plaq_area.sum())
    if circ <= 0:
        raise GeometryError(f"stream-function solve produced non-positive circulation {circ}")
    F *= total_area / circ
    gf = GaugeField.from_nodes(grid, F, coupling)
    gf.curl_residual_sup = float(np.max(np.abs(grid.C @ gf.a - grid.plaq_area) / grid.plaq_area))
    return gf


def f_nodes(grid: Grid) -> np.ndarray:
    """Node values of the canonical field F, cached on the grid."""
    if "F_nodes" not in grid._cache:
        grid._cache["F_nodes"] = build_F(grid).nodes
    return grid._cache["F_nodes"]


def gauge_fix_potential(grid: Grid, vec: np.ndarray) -> np.ndarray:
    """Solve the Neumann problem lap(chi) = div(vec), d_nu chi = nu.vec.

    Subtracting grad(chi) from a unit-curl, divergence-free potential then
    kills its normal boundary component, i.e. gauges it onto the canonical F
    (rectangle grids; the constant mode is pinned at the first node).
    """
    if grid.spec.kind != "rectangle":
        raise GeometryError("gauge_fix_potential is implemented for rectangle grids")
    sh = grid.shape
    nx, ny, hx, hy = sh["nx"], sh["ny"], sh["hx"], sh["hy"]
    V1 = vec[:, 0].reshape(nx, ny)
    V2 = vec[:, 1].reshape(nx, ny)

    rows, cols, vals = [], [], []
    rhs = np.zeros(nx * ny)

    def idx(i, j):
        return i * ny + j

    for i in range(nx):
        for j in range(ny):
            me = idx(i, j)
            diag = 0.0
            for di, dj, c, flux_out in (
                (1, 0, 1.0 / hx**2, V1[i, j] / hx),
                (-1, 0, 1.0 / hx**2, -V1[i, j] / hx),
                (0, 1, 1.0 / hy**2, V2[i, j] / hy),
                (0, -1, 1.0 / hy**2, -V2[i, j] / hy),
            ):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    rows.append(me), cols.append(idx(ii, jj)), vals.append(c)
                    diag -= c
                else:
                    # exterior face: sum of fluxes vanishes, so the prescribed
                    # outward flux nu.vec moves to the right-hand side
                    rhs[me] -= flux_out
            rows.append(me), cols.append(me), vals.append(diag)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tolil()
    A[0, :] = 0.0
    A[0, 0] = 1.0
    rhs[0] = 0.0
    chi = spla.spsolve(A.tocsr(), rhs)
    return chi - chi[0]
