"""Triangulated planar domains with tagged boundaries and deformation fields.

Meshes are straight-edged triangulations (geometry is affine per element);
quadratic degrees of freedom live on edge midpoints derived from the vertex
table.  A mesh is immutable after construction: all arrays are marked
read-only and deformation returns a new mesh with identical connectivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, InvertedElement

DIRICHLET = "D"
NEUMANN = "N"

_HEADER = "shapehess-mesh v1"


def _frozen(a, dtype):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.flags.writeable = False
    return out


class Mesh2D:
    """Conforming triangulation of a plane domain with a tagged boundary.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex triples
    boundary_edges : (nb, 2) int array, each an edge of exactly one triangle
    boundary_tags : (nb,) array of "D" / "N" markers

    Construction validates positive triangle areas, closed boundary loops,
    edge-manifoldness, and a nonempty Dirichlet part.
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_tags):
        self.vertices = _frozen(vertices, float)
        self.triangles = _frozen(triangles, np.int64)
        self.boundary_edges = _frozen(boundary_edges, np.int64)
        self.boundary_tags = _frozen(np.asarray(boundary_tags, dtype="U1"), "U1")
        self._cache = {}
        self._build_edges()
        self._validate()

    # -- connectivity -------------------------------------------------

    def _build_edges(self):
        tris = self.triangles
        raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        key = np.sort(raw, axis=1)
        edges, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True
        )
        self.edges = _frozen(edges, np.int64)
        # local edge order (0,1), (1,2), (2,0) for each triangle
        self.tri_edges = _frozen(
            inverse.reshape(3, -1).T, np.int64
        )
        self._edge_counts = counts

        lookup = {tuple(e): i for i, e in enumerate(edges)}
        bidx = np.array(
            [lookup.get(tuple(sorted(e)), -1) for e in self.boundary_edges],
            dtype=np.int64,
        )
        if np.any(bidx < 0):
            raise ConfigError("boundary edge not present in triangulation")
        self.boundary_edge_index = _frozen(bidx, np.int64)

        # adjacent triangle of every boundary edge
        owner = np.full(len(edges), -1, dtype=np.int64)
        for loc in range(3):
            owner[self.tri_edges[:, loc]] = np.arange(len(tris))
        self.boundary_tri = _frozen(owner[bidx], np.int64)

    def _validate(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ConfigError("vertices must be (n, 2)")
        a = self.signed_areas()
        if np.any(a <= 0.0):
            bad = int(np.argmin(a))
            raise InvertedElement(f"triangle {bad} has signed area {a[bad]:.3e}")
        if not np.all(np.isin(self.boundary_tags, [DIRICHLET, NEUMANN])):
            raise ConfigError("boundary tags must be 'D' or 'N'")
        if not np.any(self.boundary_tags == DIRICHLET):
            raise ConfigError("Dirichlet part of the boundary must be nonempty")
        counts = self._edge_counts
        on_b = np.zeros(len(self.edges), dtype=bool)
        on_b[self.boundary_edge_index] = True
        if len(np.unique(self.boundary_edge_index)) != len(self.boundary_edge_index):
            raise ConfigError("duplicate boundary edge")
        if np.any(counts[on_b] != 1) or np.any(counts[~on_b] != 2):
            raise ConfigError("boundary edges must bound exactly one triangle, interior edges two")
        # closed loops: every boundary vertex has exactly two incident boundary edges
        deg = np.bincount(self.boundary_edges.ravel(), minlength=len(self.vertices))
        bverts = np.unique(self.boundary_edges.ravel())
        if np.any(deg[bverts] != 2):
            raise ConfigError("boundary edges do not form closed loops")

    # -- geometry -----------------------------------------------------

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def midpoints(self):
        """Edge midpoint coordinates, derived from the vertex table."""
        if "midpoints" not in self._cache:
            mp = 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])
            self._cache["midpoints"] = _frozen(mp, float)
        return self._cache["midpoints"]

    @property
    def diameter(self):
        if "diameter" not in self._cache:
            lo = self.vertices.min(axis=0)
            hi = self.vertices.max(axis=0)
            self._cache["diameter"] = float(np.hypot(*(hi - lo)))
        return self._cache["diameter"]

    @property
    def mesh_size(self):
        """Longest element edge in the triangulation."""
        if "mesh_size" not in self._cache:
            v = self.vertices
            d = v[self.edges[:, 1]] - v[self.edges[:, 0]]
            self._cache["mesh_size"] = float(np.max(np.hypot(*d.T)))
        return self._cache["mesh_size"]

    @property
    def max_boundary_edge_length(self):
        v = self.vertices
        e = self.boundary_edges
        return float(np.max(np.hypot(*(v[e[:, 1]] - v[e[:, 0]]).T)))

    def boundary_vertex_set(self):
        return np.unique(self.boundary_edges.ravel())

    def dn_junction_count(self):
        """Number of boundary vertices where the D/N tag switches."""
        tag_of = {}
        val = 0
        for (i, j), t in zip(self.boundary_edges, self.boundary_tags):
            for v in (i, j):
                prev = tag_of.setdefault(v, t)
                if prev != t:
                    val += 1
        return val


def deform(mesh: Mesh2D, V: "DeformationField", eps: float) -> Mesh2D:
    """Move every vertex x to x + eps*V(x); midpoints follow the vertices.

    Raises InvertedElement if any deformed triangle loses positive area.
    Connectivity and tags are shared with the input mesh.
    """
    new_vertices = mesh.vertices + eps * V.value(mesh.vertices)
    return Mesh2D(new_vertices, mesh.triangles, mesh.boundary_edges, mesh.boundary_tags)


# -- deformation fields ---------------------------------------------------

ANALYTIC = "ANALYTIC"
FD_JACOBIAN = "FD_JACOBIAN"


@dataclass(frozen=True)
class DeformationField:
    """Vector field on (a neighborhood of) the domain with its Jacobian.

    ``value`` maps points (m, 2) -> (m, 2); ``jacobian`` maps points
    (m, 2) -> (m, 2, 2) with entries J[i, j] = d V_i / d x_j.
    """

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    kind: str = ANALYTIC
    name: str = "custom"


def analytic_field(value, jacobian, name="custom") -> DeformationField:
    return DeformationField(value=value, jacobian=jacobian, kind=ANALYTIC, name=name)


def fd_field(value, step, name="custom-fd") -> DeformationField:
    """Wrap a plain callable; Jacobian by central differences with the given step."""

    def jac(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x), 2, 2))
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = step
            out[:, :, j] = (value(x + dx) - value(x - dx)) / (2.0 * step)
        return out

    return DeformationField(value=value, jacobian=jac, kind=FD_JACOBIAN, name=name)


def fd_step_for(mesh: Mesh2D) -> float:
    """Default central-difference step: 1e-5 times the mesh diameter."""
    return 1e-5 * mesh.diameter


def jacobian_invariants(DV):
    """First and second invariants (trace, determinant) of 2x2 Jacobians.

    Accepts a single (2, 2) matrix or a batch (..., 2, 2); returns (a1, a2).
    """
    DV = np.asarray(DV, dtype=float)
    a1 = np.trace(DV, axis1=-2, axis2=-1)
    a2 = DV[..., 0, 0] * DV[..., 1, 1] - DV[..., 0, 1] * DV[..., 1, 0]
    return a1, a2


def dilation_field() -> DeformationField:
    """V(x) = x."""

    def val(x):
        return np.array(np.atleast_2d(x), dtype=float)

    def jac(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()

    return analytic_field(val, jac, name="dilation")


def translation_field(direction=(1.0, 0.0)) -> DeformationField:
    d = np.asarray(direction, dtype=float)

    def val(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(d, (len(x), 2)).copy()

    def jac(x):
        x = np.atleast_2d(x)
        return np.zeros((len(x), 2, 2))

    return analytic_field(val, jac, name="translation")


def normal_field(radius=1.0, center=(0.0, 0.0)) -> DeformationField:
    """V(x) = (x - c)/R: equals the outward unit normal on a circle of radius R.

    Smooth linear extension into the interior; only the boundary trace matters
    for the derivative formulas, the extension feeds the volume routes.
    """
    c = np.asarray(center, dtype=float)
    r = float(radius)

    def val(x):
        return (np.atleast_2d(x) - c) / r

    def jac(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(2) / r, (len(x), 2, 2)).copy()

    return analytic_field(val, jac, name="normal")


def tangential_spin_field() -> DeformationField:
    """V(x) = (-x2, x1): tangential on every circle centered at the origin."""

    def val(x):
        x = np.atleast_2d(x)
        return np.stack([-x[:, 1], x[:, 0]], axis=1)

    def jac(x):
        x = np.atleast_2d(x)
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 1] = -1.0
        J[:, 1, 0] = 1.0
        return J

    return analytic_field(val, jac, name="spin")


def radial_bump_field(r0=0.7, center=(0.0, 0.0), amplitude=1.0) -> DeformationField:
    """Compactly supported field b(|x-c|^2) * (x-c), vanishing for |x-c| >= r0.

    The profile exp(-1/(1 - s/r0^2)) is smooth, so the field is C^infinity and
    identically zero outside the disk of radius r0 about the center.
    """
    c = np.asarray(center, dtype=float)
    r2 = float(r0) ** 2
    amp = float(amplitude)

    def prof(s):
        # s = |x - c|^2; returns b and db/ds, both zero for s >= r0^2
        t = np.clip(s / r2, 0.0, None)
        inside = t < 1.0
        b = np.zeros_like(t)
        db = np.zeros_like(t)
        tin = t[inside]
        w = np.exp(-1.0 / (1.0 - tin))
        b[inside] = w
        db[inside] = -w / ((1.0 - tin) ** 2 * r2)
        return amp * np.e * b, amp * np.e * db  # scaled so b(0) = amplitude

    def val(x):
        y = np.atleast_2d(x) - c
        b, _ = prof(np.sum(y * y, axis=1))
        return b[:, None] * y

    def jac(x):
        y = np.atleast_2d(x) - c
        s = np.sum(y * y, axis=1)
        b, db = prof(s)
        J = b[:, None, None] * np.eye(2)[None, :, :]
        J = J + 2.0 * db[:, None, None] * y[:, :, None] * y[:, None, :]
        return J

    return analytic_field(val, jac, name="bump")


def polynomial_field(terms_x, terms_y) -> DeformationField:
    """Components as polynomials: terms are (i, j, c) meaning c * x1^i * x2^j."""
    tx = [(int(i), int(j), float(cc)) for i, j, cc in terms_x]
    ty = [(int(i), int(j), float(cc)) for i, j, cc in terms_y]

    def comp(terms, x):
        out = np.zeros(len(x))
        for i, j, cc in terms:
            out += cc * x[:, 0] ** i * x[:, 1] ** j
        return out

    def dcomp(terms, x):
        dx = np.zeros(len(x))
        dy = np.zeros(len(x))
        for i, j, cc in terms:
            if i > 0:
                dx += cc * i * x[:, 0] ** (i - 1) * x[:, 1] ** j
            if j > 0:
                dy += cc * j * x[:, 0] ** i * x[:, 1] ** (j - 1)
        return dx, dy

    def val(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([comp(tx, x), comp(ty, x)], axis=1)

    def jac(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        J = np.empty((len(x), 2, 2))
        J[:, 0, 0], J[:, 0, 1] = dcomp(tx, x)
        J[:, 1, 0], J[:, 1, 1] = dcomp(ty, x)
        return J

    return analytic_field(val, jac, name="polynomial")


# -- generators -----------------------------------------------------------


def _orient_ccw(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = area2 < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _tag_split(n_edges, fraction):
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"dirichlet_fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.full(n_edges, DIRICHLET, dtype="U1")
    n_d = int(round(fraction * n_edges))
    n_d = min(max(n_d, 1), n_edges - 1)
    tags = np.full(n_edges, NEUMANN, dtype="U1")
    tags[:n_d] = DIRICHLET
    return tags


def generate_disk(radius, h, dirichlet_fraction=1.0, center=(0.0, 0.0)) -> Mesh2D:
    """Quasi-uniform disk mesh from concentric rings (6k vertices on ring k).

    The boundary polygon is a regular 6m-gon with edge length close to h; the
    Dirichlet part is a contiguous arc starting at angle 0.
    """
    if not (radius > 0 and 0 < h < radius):
        raise ConfigError("need radius > 0 and 0 < h < radius")
    cx, cy = float(center[0]), float(center[1])
    m = max(2, int(round(math.pi * radius / (3.0 * h))))
    verts = [(cx, cy)]
    ring_start = [0]
    for k in range(1, m + 1):
        ring_start.append(len(verts))
        rk = radius * k / m
        nk = 6 * k
        theta = 2.0 * np.pi * np.arange(nk) / nk
        for t in theta:
            verts.append((cx + rk * math.cos(t), cy + rk * math.sin(t)))
    vertices = np.array(verts)

    tris = []
    for k in range(1, m + 1):
        outer = ring_start[k]
        n_out = 6 * k
        if k == 1:
            for j in range(6):
                tris.append((0, outer + j, outer + (j + 1) % 6))
            continue
        inner = ring_start[k - 1]
        n_in = 6 * (k - 1)
        for s in range(6):
            for i in range(k):
                a = outer + (s * k + i) % n_out
                b = outer + (s * k + i + 1) % n_out
                c = inner + (s * (k - 1) + i) % n_in
                tris.append((a, b, c))
                if i < k - 1:
                    d = inner + (s * (k - 1) + i + 1) % n_in
                    tris.append((b, d, c))
    triangles = _orient_ccw(vertices, np.array(tris, dtype=np.int64))

    first = ring_start[m]
    nb = 6 * m
    be = np.stack(
        [first + np.arange(nb), first + (np.arange(nb) + 1) % nb], axis=1
    )
    return Mesh2D(vertices, triangles, be, _tag_split(nb, dirichlet_fraction))


def generate_ellipse(a, b, h, dirichlet_fraction=1.0) -> Mesh2D:
    """Ellipse x^2/a^2 + y^2/b^2 <= 1 by anisotropic scaling of the disk mesh."""
    if a <= 0 or b <= 0:
        raise ConfigError("semi-axes must be positive")
    base = generate_disk(1.0, h / max(a, b), dirichlet_fraction)
    vertices = base.vertices * np.array([a, b])
    return Mesh2D(vertices, base.triangles, base.boundary_edges, base.boundary_tags)


def generate_rectangle(width, height, h, dirichlet_fraction=1.0) -> Mesh2D:
    """Structured mesh of [0, width] x [0, height], each cell split into two."""
    if width <= 0 or height <= 0 or h <= 0:
        raise ConfigError("need positive width, height, h")
    nx = max(1, int(round(width / h)))
    ny = max(1, int(round(height / h)))
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = _orient_ccw(vertices, np.array(tris, dtype=np.int64))

    be = []
    for i in range(nx):
        be.append((vid(i, 0), vid(i + 1, 0)))
    for j in range(ny):
        be.append((vid(nx, j), vid(nx, j + 1)))
    for i in range(nx, 0, -1):
        be.append((vid(i, ny), vid(i - 1, ny)))
    for j in range(ny, 0, -1):
        be.append((vid(0, j), vid(0, j - 1)))
    be = np.array(be, dtype=np.int64)
    return Mesh2D(vertices, triangles, be, _tag_split(len(be), dirichlet_fraction))


def generate_annulus(r_inner, r_outer, h, dirichlet_fraction=1.0) -> Mesh2D:
    """Structured polar mesh of the annulus r_inner <= |x| <= r_outer.

    Boundary edges are ordered outer loop first (counterclockwise), then the
    inner loop; the Dirichlet fraction applies to the concatenated sequence.
    """
    if not (0 < r_inner < r_outer):
        raise ConfigError("need 0 < r_inner < r_outer")
    if h <= 0 or h >= r_outer - r_inner:
        raise ConfigError("need 0 < h < r_outer - r_inner")
    n_t = max(8, int(round(2.0 * math.pi * r_outer / h)))
    n_r = max(1, int(round((r_outer - r_inner) / h)))
    radii = np.linspace(r_inner, r_outer, n_r + 1)
    theta = 2.0 * np.pi * np.arange(n_t) / n_t
    verts = []
    for r in radii:
        for t in theta:
            verts.append((r * math.cos(t), r * math.sin(t)))
    vertices = np.array(verts)

    def vid(k, j):
        return k * n_t + j % n_t

    tris = []
    for k in range(n_r):
        for j in range(n_t):
            tris.append((vid(k, j), vid(k, j + 1), vid(k + 1, j + 1)))
            tris.append((vid(k, j), vid(k + 1, j + 1), vid(k + 1, j)))
    triangles = _orient_ccw(vertices, np.array(tris, dtype=np.int64))

    be = []
    for j in range(n_t):  # outer, counterclockwise
        be.append((vid(n_r, j), vid(n_r, j + 1)))
    for j in range(n_t, 0, -1):  # inner, clockwise (domain on the left)
        be.append((vid(0, j), vid(0, j - 1)))
    be = np.array(be, dtype=np.int64)
    return Mesh2D(vertices, triangles, be, _tag_split(len(be), dirichlet_fraction))


# -- text format -----------------------------------------------------------


def write_mesh_text(mesh: Mesh2D, path):
    """Plain-text mesh serialization (vertices, triangles, tagged boundary)."""
    lines = [_HEADER, f"vertices {mesh.n_vertices}"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g}")
    lines.append(f"triangles {mesh.n_triangles}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    for (i, j), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        lines.append(f"{i} {j} {t}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh_text(path) -> Mesh2D:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw or raw[0] != _HEADER:
        raise ConfigError(f"expected header '{_HEADER}'")
    pos = 1

    def section(name):
        nonlocal pos
        parts = raw[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise ConfigError(f"expected '{name} <count>' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    nv = section("vertices")
    vertices = np.array([[float(v) for v in raw[pos + i].split()] for i in range(nv)])
    pos += nv
    nt = section("triangles")
    triangles = np.array(
        [[int(v) for v in raw[pos + i].split()] for i in range(nt)], dtype=np.int64
    )
    pos += nt
    nb = section("boundary")
    be = np.empty((nb, 2), dtype=np.int64)
    tags = np.empty(nb, dtype="U1")
    for i in range(nb):
        parts = raw[pos + i].split()
        if len(parts) != 3:
            raise ConfigError(f"boundary line {i} needs 'i j TAG'")
        be[i] = (int(parts[0]), int(parts[1]))
        tags[i] = parts[2]
    return Mesh2D(vertices, triangles, be, tags)
