"""Boundary sampling meshes on spheres.

Certificates in this package are checked on a finite set of boundary
points.  The quantity that makes a finite check sound is the mesh
resolution ``d_a``: the largest geodesic distance between two vertices
that share a face of the triangulated point set.  This module builds
the point sets, triangulates them, and computes ``d_a`` together with
the theoretical arc-length bounds for minimal simplices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import ConvexHull, QhullError

__all__ = [
    "GeometryError",
    "SamplingMesh",
    "sample_sphere",
    "sample_sphere_uniform",
    "triangulate",
    "geodesic_distance",
    "max_face_arc",
    "minimal_simplex_arc",
    "great_circle_triangle_arc",
    "rays_covered",
]

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class GeometryError(ValueError):
    """Degenerate or inconsistent mesh geometry."""


@dataclass(frozen=True)
class SamplingMesh:
    """Points on a sphere, optionally triangulated.

    ``faces`` holds one index tuple per face: edges for ``dimension == 2``,
    triangles for 3, general (n-1)-simplex facets above.  ``d_a`` is the
    realized resolution (max pairwise geodesic distance within a face) and
    is only set once the mesh is triangulated.
    """

    dimension: int
    center: np.ndarray
    radius: float
    points: np.ndarray          # (N_p, n)
    faces: np.ndarray | None    # (N_f, n) int indices, None before triangulation
    d_a: float | None
    seed: int

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def rescaled(self, center: np.ndarray, radius: float) -> "SamplingMesh":
        """Same combinatorial mesh radially mapped to another sphere.

        Geodesic distances, and hence ``d_a``, scale linearly with the
        radius, so the triangulation carries over unchanged.
        """
        if radius <= 0:
            raise GeometryError("target radius must be positive")
        center = np.asarray(center, dtype=float)
        scale = radius / self.radius
        points = center + (self.points - self.center) * scale
        d_a = None if self.d_a is None else self.d_a * scale
        return replace(self, center=center, radius=float(radius),
                       points=points, d_a=d_a)


def _check_sphere_args(n: int, n_points: int, radius: float) -> None:
    if n < 2:
        raise ValueError(f"state dimension must be >= 2, got {n}")
    if n_points < n + 1:
        raise ValueError(
            f"need at least n+1 = {n + 1} points for a minimal simplex, got {n_points}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")


def _resolve_center(center, n: int) -> np.ndarray:
    if center is None:
        return np.zeros(n)
    center = np.asarray(center, dtype=float)
    if center.shape != (n,):
        raise ValueError(f"center must have shape ({n},), got {center.shape}")
    return center


def sample_sphere(n: int, n_points: int, center=None, radius: float = 1.0,
                  seed: int = 0) -> SamplingMesh:
    """Place ``n_points`` points on the sphere of given radius.

    n == 2 uses equally spaced angles and n == 3 a spherical Fibonacci
    lattice; both are deterministic regardless of ``seed``.  Higher
    dimensions fall back to seeded normalized Gaussian directions.
    """
    _check_sphere_args(n, n_points, radius)
    center = _resolve_center(center, n)

    if n == 2:
        theta = 2.0 * np.pi * np.arange(n_points) / n_points
        unit = np.column_stack([np.cos(theta), np.sin(theta)])
    elif n == 3:
        i = np.arange(n_points)
        z = 1.0 - (2.0 * i + 1.0) / n_points
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = _GOLDEN_ANGLE * i
        unit = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    else:
        unit = _random_directions(n, n_points, seed)

    return SamplingMesh(dimension=n, center=center, radius=float(radius),
                        points=center + radius * unit, faces=None, d_a=None,
                        seed=seed)


def sample_sphere_uniform(n: int, n_points: int, center=None,
                          radius: float = 1.0, seed: int = 0) -> np.ndarray:
    """Seeded uniform random points on the sphere (Gaussian direction trick).

    Used wherever an estimate needs samples that are independent of the
    structured lattices above (Lipschitz estimation, minimum search).
    Returns a bare (n_points, n) array, not a mesh.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    center = _resolve_center(center, n)
    return center + radius * _random_directions(n, n_points, seed)


def _random_directions(n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty((count, n))
    filled = 0
    while filled < count:
        draw = rng.standard_normal((count - filled, n))
        norms = np.linalg.norm(draw, axis=1)
        ok = norms > 1e-12
        kept = draw[ok] / norms[ok, None]
        out[filled:filled + kept.shape[0]] = kept
        filled += kept.shape[0]
    return out


def triangulate(mesh: SamplingMesh) -> SamplingMesh:
    """Attach faces and the realized resolution ``d_a`` to a point mesh.

    For n == 2 the faces are the edges between angularly consecutive
    points.  For n >= 3 they are the convex-hull facets of the point set,
    which for points on a sphere is its Delaunay triangulation.  Raises
    :class:`GeometryError` for rank-deficient point clouds (resample with
    a different seed or more points).
    """
    pts = mesh.points
    if mesh.dimension == 2:
        theta = np.arctan2(pts[:, 1] - mesh.center[1], pts[:, 0] - mesh.center[0])
        order = np.argsort(theta, kind="stable")
        faces = np.column_stack([order, np.roll(order, -1)])
    else:
        try:
            hull = ConvexHull(pts)
        except QhullError as exc:
            raise GeometryError(
                "degenerate point cloud: convex hull construction failed "
                f"({exc.__class__.__name__}); resample") from exc
        faces = np.array(hull.simplices, dtype=int)
    faces = np.ascontiguousarray(faces, dtype=int)
    d_a = max_face_arc(pts, faces, mesh.center, mesh.radius)
    return replace(mesh, faces=faces, d_a=float(d_a))


def geodesic_distance(x, y, center, radius: float) -> float:
    """Shortest arc length between two points of the same sphere.

    Both points must lie on the sphere within ``1e-8 * radius``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    center = np.asarray(center, dtype=float)
    u = (x - center) / radius
    v = (y - center) / radius
    tol = 1e-8
    for name, w in (("x", u), ("y", v)):
        err = abs(np.linalg.norm(w) - 1.0)
        if err > tol:
            raise GeometryError(
                f"point {name} is off the sphere by {err * radius:.3e} "
                f"(tolerance {tol * radius:.3e})")
    cosang = np.clip(np.dot(u, v), -1.0, 1.0)
    return float(radius * np.arccos(cosang))


def max_face_arc(points: np.ndarray, faces: np.ndarray, center, radius: float) -> float:
    """Max pairwise geodesic distance between vertices sharing a face."""
    unit = (points - np.asarray(center, dtype=float)) / radius
    verts = unit[faces]                       # (N_f, k, n)
    k = verts.shape[1]
    worst = 0.0
    for a in range(k):
        for b in range(a + 1, k):
            dots = np.clip(np.einsum("ij,ij->i", verts[:, a], verts[:, b]), -1.0, 1.0)
            worst = max(worst, float(np.max(np.arccos(dots))))
    return radius * worst


def minimal_simplex_arc(n: int, radius: float) -> float:
    """Arc length of the longest edge of a minimal boundary simplex.

    For the regular (n+1)-vertex simplex inscribed in a sphere the edge
    chord is sqrt(2(n+1)/n); this returns the corresponding arc,
    2 r asin(sqrt((n+1)/(2n))).  A mesh with d_a at or below this value
    necessarily has at least n+1 points.  Linear in the radius and
    strictly decreasing in n (limit pi*r/2).
    """
    if n < 2:
        raise ValueError(f"dimension must be >= 2, got {n}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return 2.0 * radius * np.arcsin(np.sqrt((n + 1) / (2.0 * n)))


def great_circle_triangle_arc(radius: float) -> float:
    """Arc subtended by an equilateral triangle edge on a great circle.

    Equals 2 r asin(sqrt(3)/2) = 2 pi r / 3.  This looser figure is
    sometimes quoted as the 3-D minimal-triangulation bound; the
    tetrahedral bound ``minimal_simplex_arc(3, radius)`` is smaller
    (about 1.911 r vs 2.094 r) and is what the certificate machinery
    uses.  Exposed for reference and cross-checks.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return 2.0 * radius * np.arcsin(np.sqrt(0.75))


def rays_covered(mesh: SamplingMesh, n_rays: int = 1000, seed: int = 0) -> np.ndarray:
    """Check the covering property by ray casting from the mesh center.

    Shoots ``n_rays`` seeded uniform directions from the center and
    reports, per ray, whether it passes through at least one face.  For a
    non-degenerate convex-hull triangulation of sphere points every ray
    must hit; a False entry flags a degenerate mesh.
    """
    if mesh.faces is None:
        raise GeometryError("mesh has no faces; triangulate it first")
    n = mesh.dimension
    dirs = _random_directions(n, n_rays, seed)
    verts = mesh.points[mesh.faces] - mesh.center   # (F, n, n)
    n_faces = verts.shape[0]

    # Solve, per face, sum_i lam_i (v_i - c) = t * dir with sum lam = 1.
    mats = np.zeros((n_faces, n + 1, n + 1))
    mats[:, :n, :n] = np.swapaxes(verts, 1, 2)
    mats[:, n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0

    covered = np.zeros(n_rays, dtype=bool)
    for r, d in enumerate(dirs):
        mats[:, :n, n] = -d
        good = np.abs(np.linalg.det(mats)) > 1e-12
        if not np.any(good):
            continue
        k = int(good.sum())
        b = np.broadcast_to(rhs.reshape(1, n + 1, 1), (k, n + 1, 1))
        sol = np.linalg.solve(mats[good], b)[..., 0]
        lam, t = sol[:, :n], sol[:, n]
        hits = (t > -1e-10) & np.all(lam > -1e-10, axis=1)
        covered[r] = bool(np.any(hits))
    return covered
