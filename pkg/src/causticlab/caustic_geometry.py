"""Caustic detection for parameterized ray families, surface measure, and
curvature transport.

A family is any smooth map (s, t) -> q in R^3 over a rectangle.  Two
numeric degeneracy criteria are provided: the cross-product norm
||dq/ds x dq/dt|| and the scalar triple product
det(dq/ds, dq/dt, d^2q/ds dt).  Both vanish on the envelope of the
family; detection scans the along-ray parameter t per fixed s and
refines candidate zeros.

The measure of a caustic surface is the bending-energy integral
sum (k1^2 + k2^2) dA over a triangulated mesh, with per-vertex
principal curvatures from a local quadric fit.  Curvature transport
along a ray obeys dk/dz = k^2 + n''(z); the integrator flags the
focal crossing when k blows up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "DomainError",
    "MeshError",
    "RayFamily",
    "CausticPoint",
    "CausticPointSet",
    "CausticMesh",
    "CurvatureEvolution",
    "envelope_residual",
    "determinant_residual",
    "detect_caustic",
    "vertex_curvatures",
    "caustic_measure",
    "surface_of_revolution",
    "icosphere",
    "evolve_curvature",
    "spherical_wave_family",
    "spherical_wave_fibered",
    "plane_wave_family",
]


class DomainError(ValueError):
    """Requested point (or its FD stencil) leaves the family's domain."""


class MeshError(ValueError):
    """Mesh is unusable for curvature estimation (degenerate faces, ...)."""


@dataclass
class RayFamily:
    """Smooth 2-parameter point family over a rectangular domain.

    ``fn(s, t)`` must return a length-3 array-like and be reentrant.
    Derivatives are taken by central differences with steps scaled to
    the parameter ranges (``rel_step`` of each range).
    """

    fn: object
    s_range: tuple
    t_range: tuple
    rel_step: float = 1e-4

    def __post_init__(self):
        if not (self.s_range[1] > self.s_range[0] and self.t_range[1] > self.t_range[0]):
            raise ValueError("parameter ranges must be non-empty intervals")

    @property
    def s_step(self) -> float:
        return self.rel_step * (self.s_range[1] - self.s_range[0])

    @property
    def t_step(self) -> float:
        return self.rel_step * (self.t_range[1] - self.t_range[0])

    def position(self, s: float, t: float) -> np.ndarray:
        q = np.asarray(self.fn(s, t), dtype=float)
        if q.shape != (3,):
            raise ValueError("family callable must return a 3-vector")
        if not np.all(np.isfinite(q)):
            raise ValueError(f"family value not finite at ({s}, {t})")
        return q

    def _require_interior(self, s: float, t: float):
        hs, ht = self.s_step, self.t_step
        if not (self.s_range[0] <= s - 2 * hs and s + 2 * hs <= self.s_range[1]):
            raise DomainError(f"s stencil leaves domain at s={s}")
        if not (self.t_range[0] <= t - 2 * ht and t + 2 * ht <= self.t_range[1]):
            raise DomainError(f"t stencil leaves domain at t={t}")

    def d_ds(self, s, t) -> np.ndarray:
        self._require_interior(s, t)
        h = self.s_step
        return (
            self.position(s - 2 * h, t)
            - 8 * self.position(s - h, t)
            + 8 * self.position(s + h, t)
            - self.position(s + 2 * h, t)
        ) / (12 * h)

    def d_dt(self, s, t) -> np.ndarray:
        self._require_interior(s, t)
        h = self.t_step
        return (
            self.position(s, t - 2 * h)
            - 8 * self.position(s, t - h)
            + 8 * self.position(s, t + h)
            - self.position(s, t + 2 * h)
        ) / (12 * h)

    def d2_dsdt(self, s, t) -> np.ndarray:
        self._require_interior(s, t)
        hs, ht = self.s_step, self.t_step
        return (
            self.position(s + hs, t + ht)
            - self.position(s + hs, t - ht)
            - self.position(s - hs, t + ht)
            + self.position(s - hs, t - ht)
        ) / (4 * hs * ht)

    def derivative_stability(self, s, t) -> float:
        """Relative change of the first derivatives under step halving."""
        coarse = np.concatenate([self.d_ds(s, t), self.d_dt(s, t)])
        fine = RayFamily(self.fn, self.s_range, self.t_range, self.rel_step / 2)
        refined = np.concatenate([fine.d_ds(s, t), fine.d_dt(s, t)])
        scale = max(float(np.max(np.abs(refined))), 1e-30)
        return float(np.max(np.abs(coarse - refined)) / scale)


def envelope_residual(family: RayFamily, s: float, t: float) -> float:
    """Cross-product degeneracy criterion ||dq/ds x dq/dt|| at (s, t)."""
    return float(np.linalg.norm(np.cross(family.d_ds(s, t), family.d_dt(s, t))))


def determinant_residual(family: RayFamily, s: float, t: float) -> float:
    """Triple-product degeneracy criterion det(dq/ds, dq/dt, d^2q/ds dt)."""
    m = np.column_stack(
        [family.d_ds(s, t), family.d_dt(s, t), family.d2_dsdt(s, t)]
    )
    return float(np.linalg.det(m))


@dataclass(frozen=True)
class CausticPoint:
    s: float
    t: float
    q: np.ndarray
    res_envelope: float
    res_determinant: float


@dataclass
class CausticPointSet:
    points: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def positions(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.array([p.q for p in self.points])

    def to_csv(self, path):
        from .formats import write_csv

        write_csv(
            path,
            ["s", "t", "qx", "qy", "qz", "res_env", "res_det"],
            ([p.s, p.t, *p.q, p.res_envelope, p.res_determinant] for p in self.points),
        )


def _interior_window(family: RayFamily, window):
    """Clip a t-window so the FD stencil stays inside the family domain."""
    ht = family.t_step
    lo = max(window[0], family.t_range[0] + 2 * ht)
    hi = min(window[1], family.t_range[1] - 2 * ht)
    if not hi > lo:
        raise DomainError("t window leaves no stencil-safe interior")
    return lo, hi


def detect_caustic(
    family: RayFamily,
    s_values,
    t_window=None,
    t_samples: int = 64,
    tol: float = 1e-8,
) -> CausticPointSet:
    """Locate envelope points by scanning t per fixed s.

    For each s the residual is sampled on a uniform t grid; every local
    minimum bracket is refined by bounded scalar minimization (the
    residual is a norm, so transversal zeros appear as V-shaped minima
    and tangential zeros as smooth ones).  A refined point is emitted
    only when its envelope residual is at most ``tol``; both residuals
    are recorded.  An empty result is not an error.
    """
    hs = family.s_step
    lo, hi = _interior_window(family, t_window if t_window else family.t_range)
    ts = np.linspace(lo, hi, t_samples)
    found = CausticPointSet()
    for s in np.atleast_1d(np.asarray(s_values, dtype=float)):
        if not (family.s_range[0] + 2 * hs <= s <= family.s_range[1] - 2 * hs):
            raise DomainError(f"s={s} leaves no stencil room")
        res = np.array([envelope_residual(family, s, t) for t in ts])
        for i in range(len(ts)):
            left = res[i - 1] if i > 0 else np.inf
            right = res[i + 1] if i + 1 < len(ts) else np.inf
            if not (res[i] <= left and res[i] <= right):
                continue
            a = ts[i - 1] if i > 0 else ts[i]
            b = ts[i + 1] if i + 1 < len(ts) else ts[i]
            if a == b:
                t_star = ts[i]
            else:
                opt = minimize_scalar(
                    lambda t: envelope_residual(family, s, t),
                    bounds=(a, b),
                    method="bounded",
                    options={"xatol": 1e-12 * (hi - lo)},
                )
                t_star = float(opt.x)
                # the boundary of the bracket may beat the interior optimum
                for cand in (a, b):
                    if envelope_residual(family, s, cand) < envelope_residual(family, s, t_star):
                        t_star = cand
            r_env = envelope_residual(family, s, t_star)
            if r_env <= tol:
                found.points.append(
                    CausticPoint(
                        float(s),
                        t_star,
                        family.position(s, t_star),
                        r_env,
                        determinant_residual(family, s, t_star),
                    )
                )
    return found


# ---------------------------------------------------------------------------
# Triangulated caustic surfaces and their bending-energy measure.


@dataclass
class CausticMesh:
    """Triangle mesh with lazily computed per-vertex curvature data."""

    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray     # (M, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (N, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must be (M, 3)")

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def to_off(self, path):
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{len(self.vertices)} {len(self.faces)} 0\n")
            for v in self.vertices:
                fh.write(f"{v[0]:.16e} {v[1]:.16e} {v[2]:.16e}\n")
            for f in self.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def _vertex_rings(mesh: CausticMesh):
    neighbors = [set() for _ in range(len(mesh.vertices))]
    for a, b, c in mesh.faces:
        neighbors[a].update((b, c))
        neighbors[b].update((a, c))
        neighbors[c].update((a, b))
    return neighbors


def vertex_curvatures(mesh: CausticMesh):
    """Principal curvatures (k1, k2) per vertex by local quadric fit.

    Fits h(u, v) = a u^2 + b u v + c v^2 + d u + e v + f over the
    vertex ring in the tangent frame of the area-weighted normal and
    reads the shape operator of the fitted graph at the origin.  Rings
    are grown until at least six sample points are available.
    """
    areas = mesh.face_areas()
    if np.any(areas <= 0):
        raise MeshError("mesh has zero-area faces")
    v = mesh.vertices
    f = mesh.faces
    face_n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    vert_n = np.zeros_like(v)
    for i in range(len(f)):
        for k in f[i]:
            vert_n[k] += face_n[i]
    norms = np.linalg.norm(vert_n, axis=1)
    if np.any(norms == 0):
        raise MeshError("isolated vertex without incident faces")
    vert_n /= norms[:, None]

    rings = _vertex_rings(mesh)
    kappa = np.zeros((len(v), 2))
    for i in range(len(v)):
        ring = set(rings[i])
        while len(ring) < 6:
            grown = set(ring)
            for j in ring:
                grown.update(rings[j])
            grown.discard(i)
            if grown == ring:
                break
            ring = grown
        n = vert_n[i]
        # tangent frame
        seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(n, seed)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        # the vertex itself anchors the fit; without it the constant term
        # aliases the Laplacian on a symmetric ring and the fit loses rank
        pts = np.vstack([np.zeros(3), v[sorted(ring)] - v[i]])
        u = pts @ e1
        w = pts @ e2
        h = pts @ n
        a_mat = np.column_stack([u * u, u * w, w * w, u, w, np.ones_like(u)])
        coef, *_ = np.linalg.lstsq(a_mat, h, rcond=None)
        a, b, c, d, e, _ = coef
        denom = math.sqrt(1 + d * d + e * e)
        first = np.array([[1 + d * d, d * e], [d * e, 1 + e * e]])
        second = np.array([[2 * a, b], [b, 2 * c]]) / denom
        kappa[i] = np.sort(np.linalg.eigvals(np.linalg.solve(first, second)).real)
    return kappa


def caustic_measure(mesh: CausticMesh) -> float:
    """Bending-energy measure sum (k1^2 + k2^2) dA over the mesh.

    Vertex areas are barycentric (a third of each incident face).
    """
    areas = mesh.face_areas()
    if np.any(areas <= 0):
        raise MeshError("mesh has zero-area faces")
    kappa = vertex_curvatures(mesh)
    vert_area = np.zeros(len(mesh.vertices))
    for i, face in enumerate(mesh.faces):
        for k in face:
            vert_area[k] += areas[i] / 3.0
    return float(np.sum((kappa[:, 0] ** 2 + kappa[:, 1] ** 2) * vert_area))


def surface_of_revolution(r, z, n_phi: int = 48) -> CausticMesh:
    """Revolve a meridional profile (r_i, z_i) about the z axis.

    Profile radii must be positive (the axis point itself would create
    degenerate faces).
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if len(r) < 2 or len(r) != len(z):
        raise MeshError("profile needs matching r, z arrays of length >= 2")
    if np.any(r <= 0):
        raise MeshError("profile radii must be positive for revolution")
    phis = np.linspace(0.0, 2 * math.pi, n_phi, endpoint=False)
    verts = np.array(
        [[ri * math.cos(p), ri * math.sin(p), zi] for ri, zi in zip(r, z) for p in phis]
    )
    faces = []
    for i in range(len(r) - 1):
        for j in range(n_phi):
            j2 = (j + 1) % n_phi
            a = i * n_phi + j
            b = i * n_phi + j2
            c = (i + 1) * n_phi + j
            d = (i + 1) * n_phi + j2
            faces.append((a, b, d))
            faces.append((a, d, c))
    return CausticMesh(verts, np.array(faces))


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> CausticMesh:
    """Geodesic sphere mesh from a subdivided icosahedron."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]

    def midpoint(cache, i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        cache = {}
        new_faces = []
        for a, b, c in faces:
            ab = midpoint(cache, a, b)
            bc = midpoint(cache, b, c)
            ca = midpoint(cache, c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return CausticMesh(radius * np.array(verts), np.array(faces))


# ---------------------------------------------------------------------------
# Curvature transport along a ray.

_BLOWUP_LIMIT = 1.0 / math.sqrt(np.finfo(float).eps)


@dataclass
class CurvatureEvolution:
    """Sampled curvature k(z) with a focal-crossing (blow-up) flag."""

    z: np.ndarray
    kappa: np.ndarray
    blown_up: bool
    z_blowup: float | None


def _rk4_step(kappa, z, h, d2n):
    k1 = kappa * kappa + d2n(z)
    k2 = (kappa + 0.5 * h * k1) ** 2 + d2n(z + 0.5 * h)
    k3 = (kappa + 0.5 * h * k2) ** 2 + d2n(z + 0.5 * h)
    k4 = (kappa + h * k3) ** 2 + d2n(z + h)
    return kappa + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve_curvature(kappa0: float, d2n_profile, z_span, steps: int) -> CurvatureEvolution:
    """Integrate dk/dz = k^2 + n''(z) with classic 4th-order steps.

    The uniform output grid has ``steps`` intervals over ``z_span``.
    Within each interval the step is subdivided whenever |k|*h grows
    large, so the sharpening toward a focus is resolved.  Once |k|
    exceeds 1/sqrt(machine eps) the run stops, flags the blow-up, and
    estimates the crossing as z + 1/k (exact for the homogeneous
    Riccati pole).
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    z0, z1 = float(z_span[0]), float(z_span[1])
    if not z1 > z0:
        raise ValueError("z_span must be increasing")
    grid = np.linspace(z0, z1, steps + 1)
    kappas = [float(kappa0)]
    kappa = float(kappa0)
    for i in range(steps):
        z = grid[i]
        target = grid[i + 1]
        while z < target:
            if abs(kappa) >= _BLOWUP_LIMIT:
                return CurvatureEvolution(
                    grid[: len(kappas)], np.array(kappas), True, z + 1.0 / kappa
                )
            h = target - z
            # keep |kappa| * h small so the quadratic term stays resolved
            if abs(kappa) * h > 0.05:
                h = 0.05 / abs(kappa)
            kappa = _rk4_step(kappa, z, h, d2n_profile)
            if not math.isfinite(kappa):
                return CurvatureEvolution(
                    grid[: len(kappas)], np.array(kappas), True, z
                )
            z += h
        kappas.append(kappa)
    return CurvatureEvolution(grid, np.array(kappas), False, None)


# ---------------------------------------------------------------------------
# Reference families used throughout the tests and the acceptance gate.


def spherical_wave_family(radius: float) -> RayFamily:
    """Points of the outgoing spherical wavefront at a fixed radius.

    Parameters are the polar/azimuthal angles; the degeneracy residual
    of this map is radius^2 * sin(polar angle).
    """

    def fn(theta, phi):
        return radius * np.array(
            [
                math.sin(theta) * math.cos(phi),
                math.sin(theta) * math.sin(phi),
                math.cos(theta),
            ]
        )

    return RayFamily(fn, (0.0, math.pi), (0.0, 2 * math.pi))


def spherical_wave_fibered(theta_range=(0.2, math.pi - 0.2), t_span=(-0.5, 2.0), phi: float = 0.0) -> RayFamily:
    """Rays from the origin in one meridian, fibered by arc length t.

    The t interval extends below zero so the degenerate point t = 0 is
    interior to the domain (the map is defined for negative t too).
    """

    def fn(theta, t):
        return t * np.array(
            [
                math.sin(theta) * math.cos(phi),
                math.sin(theta) * math.sin(phi),
                math.cos(theta),
            ]
        )

    return RayFamily(fn, theta_range, tuple(t_span))


def plane_wave_family(extent: float = 1.0) -> RayFamily:
    """Parallel rays along z; never focuses, residual is 1 everywhere."""

    def fn(s, t):
        return np.array([s, 0.0, t])

    return RayFamily(fn, (-extent, extent), (-extent, extent))
