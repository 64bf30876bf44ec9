"""Exact meridional ray tracing through a thick biconvex lens.

Rays enter parallel to the optical axis, refract at two spherical caps
(vector Snell law, no paraxial approximation), and leave as a
one-parameter family indexed by the entry height h.  The caustic of
that family has a closed form once the exit coordinates r_e(h), z_e(h)
and the aperture angle alpha(h) are known:

    t_c = (r_e' cos(alpha) + z_e' sin(alpha)) / alpha'
    r_caustic = r_e - t_c sin(alpha)
    z_caustic = z_e + t_c cos(alpha)

with primes denoting d/dh.  The derivatives are taken by 5-point finite
differences on the exact trace; a neighbouring-ray intersection oracle
(`brute_force_caustic`) provides an independent check.

Geometry conventions: front vertex at z = 0, front radius R1 > 0,
back vertex at z = d, back radius R2 < 0, ambient index 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LensPrescription",
    "ExitRay",
    "ExitDerivatives",
    "CausticCurve",
    "TotalInternalReflectionError",
    "GeometryError",
    "DegenerateCausticError",
    "NoIntersectionError",
    "refract_at_sphere",
    "trace_through_lens",
    "plane_to_plane_map",
    "family_derivatives",
    "exit_derivatives",
    "caustic_point",
    "brute_force_caustic",
    "caustic_profile",
    "paraxial_focus",
]


class TotalInternalReflectionError(ValueError):
    """Refraction impossible; carries the critical angle in radians."""

    def __init__(self, critical_angle: float):
        self.critical_angle = critical_angle
        super().__init__(
            f"total internal reflection (critical angle {critical_angle:.6f} rad)"
        )


class GeometryError(ValueError):
    """Ray misses a surface cap or leaves the clear aperture."""


class DegenerateCausticError(ValueError):
    """alpha'(h) vanishes: the ray bundle is locally aberration-free."""


class NoIntersectionError(ValueError):
    """The two neighbouring exit rays are parallel."""


@dataclass(frozen=True)
class LensPrescription:
    """Thick biconvex spherical lens in air.

    n > 1 glass index, d > 0 center thickness (mm), R1 > 0 front radius,
    R2 < 0 back radius, D > 0 clear aperture diameter.  The half
    aperture must stay below both radii so the caps are well defined.
    """

    n: float
    d: float
    R1: float
    R2: float
    D: float

    def __post_init__(self):
        if not self.n > 1:
            raise ValueError("glass index n must exceed 1")
        if not self.d > 0:
            raise ValueError("center thickness d must be positive")
        if not self.R1 > 0:
            raise ValueError("front radius R1 must be positive (convex)")
        if not self.R2 < 0:
            raise ValueError("back radius R2 must be negative (convex)")
        if not self.D > 0:
            raise ValueError("aperture diameter D must be positive")
        if not self.D / 2 < min(self.R1, abs(self.R2)):
            raise ValueError("aperture D/2 must stay below min(R1, |R2|)")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "LensPrescription":
        try:
            return cls(
                n=float(obj["n"]),
                d=float(obj["d"]),
                R1=float(obj["R1"]),
                R2=float(obj["R2"]),
                D=float(obj["D"]),
            )
        except KeyError as exc:
            raise ValueError(f"lens config missing key {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "LensPrescription":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))

    def sag_front(self, r: float) -> float:
        """Axial depth of the front cap at radial height r."""
        return self.R1 - math.sqrt(self.R1 * self.R1 - r * r)

    def sag_back(self, r: float) -> float:
        """Axial depth of the back cap at radial height r (measured from z=d)."""
        a = abs(self.R2)
        return a - math.sqrt(a * a - r * r)


@dataclass(frozen=True)
class ExitRay:
    """Where and how a ray leaves the back surface.

    h entry height, (r_e, z_e) exit point in cylindrical coordinates,
    alpha aperture angle of the exit direction (>= 0 when converging).
    """

    h: float
    r_e: float
    z_e: float
    alpha: float


@dataclass(frozen=True)
class ExitDerivatives:
    """d/dh of the exit functions, with a step-halving agreement flag."""

    dr_e: float
    dz_e: float
    dalpha: float
    step_ok: bool


@dataclass
class CausticCurve:
    """Sampled meridional caustic plus the axial (sagittal) branch."""

    h: np.ndarray
    t_c: np.ndarray
    r_caustic: np.ndarray
    z_caustic: np.ndarray
    valid: np.ndarray      # per-sample bool; False where the trace or t_c failed
    sagittal_z: np.ndarray  # axis crossing z per sample (nan when the ray is axial)

    def __len__(self) -> int:
        return len(self.h)


def refract_at_sphere(point, direction, center, radius, n_in, n_out):
    """Vector Snell refraction at a spherical interface.

    `point` must lie on the sphere (|point-center| = |radius| within
    1e-9*|radius|) and `direction` must be unit length.  Returns the
    unit refracted direction; raises TotalInternalReflectionError when
    n_in sin(theta_in) > n_out.
    """
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    center = np.asarray(center, dtype=float)
    rvec = point - center
    if abs(np.linalg.norm(rvec) - abs(radius)) > 1e-9 * abs(radius):
        raise ValueError("point does not lie on the sphere")
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("direction must be unit length")

    normal = rvec / abs(radius)
    cos_in = -float(direction @ normal)
    if cos_in < 0:  # orient the normal against the incident direction
        normal = -normal
        cos_in = -cos_in
    eta = n_in / n_out
    k = 1.0 - eta * eta * (1.0 - cos_in * cos_in)
    if k < 0:
        raise TotalInternalReflectionError(math.asin(min(1.0, n_out / n_in)))
    out = eta * direction + (eta * cos_in - math.sqrt(k)) * normal
    return out / np.linalg.norm(out)


def _sphere_hit(point, direction, center, radius, z_window, t_min=1e-9):
    """First ray-sphere intersection whose z lies in the cap window.

    Two roots exist for a full sphere; the physical cap is selected by
    the z window, then the smaller admissible travel distance.
    """
    oc = point - center
    b = float(direction @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    if disc < 0:
        raise GeometryError("ray misses the surface sphere")
    sq = math.sqrt(disc)
    z_lo, z_hi = z_window
    best = None
    for t in (-b - sq, -b + sq):
        if t < t_min:
            continue
        z = point[2] + t * direction[2]
        if z_lo <= z <= z_hi and (best is None or t < best):
            best = t
    if best is None:
        raise GeometryError("ray misses the surface cap")
    return point + best * direction


def _trace_two_surfaces(p0, v0, lens: LensPrescription):
    """Refract a 3D ray through both caps; returns (exit point, exit dir)."""
    half = lens.D / 2
    ztol = 1e-9 * max(1.0, lens.d)

    c1 = np.array([0.0, 0.0, lens.R1])
    window1 = (-ztol, lens.sag_front(half) + ztol)
    hit1 = _sphere_hit(p0, v0, c1, lens.R1, window1, t_min=-ztol)
    if math.hypot(hit1[0], hit1[1]) > half * (1 + 1e-12):
        raise GeometryError("ray leaves the clear aperture at the front surface")
    v1 = refract_at_sphere(hit1, v0, c1, lens.R1, 1.0, lens.n)

    c2 = np.array([0.0, 0.0, lens.d + lens.R2])
    window2 = (lens.d - lens.sag_back(half) - ztol, lens.d + ztol)
    hit2 = _sphere_hit(hit1, v1, c2, abs(lens.R2), window2)
    if math.hypot(hit2[0], hit2[1]) > half * (1 + 1e-12):
        raise GeometryError("ray leaves the clear aperture at the back surface")
    v2 = refract_at_sphere(hit2, v1, c2, lens.R2, lens.n, 1.0)
    return hit2, v2


def trace_through_lens(h: float, lens: LensPrescription) -> ExitRay:
    """Exact trace of a parallel entry ray at height h (meridional plane).

    Requires 0 <= h < D/2.  The exit angle is measured from the optical
    axis and is positive for rays bent toward it.
    """
    if not 0 <= h < lens.D / 2:
        raise ValueError(f"entry height must satisfy 0 <= h < D/2, got {h}")
    if h == 0.0:
        return ExitRay(0.0, 0.0, lens.d, 0.0)
    p0 = np.array([h, 0.0, 0.0])
    v0 = np.array([0.0, 0.0, 1.0])
    hit, v = _trace_two_surfaces(p0, v0, lens)
    alpha = math.atan2(-v[0], v[2])
    return ExitRay(h, float(hit[0]), float(hit[2]), alpha)


def plane_to_plane_map(lens: LensPrescription, z_in: float, z_out: float):
    """Exact meridional map (x, p_x) at z_in -> (x, p_x) at z_out.

    Momentum is the direction cosine (ambient index 1).  The map is
    the restriction of the full transport to the meridional plane, so
    its Jacobian determinant is 1 wherever the trace is smooth.
    """
    if z_in >= 0:
        raise ValueError("input plane must sit before the front vertex (z_in < 0)")

    def xfer(x: float, p_x: float):
        if abs(p_x) >= 1:
            raise ValueError("|p_x| must be below the ambient index 1")
        p0 = np.array([x, 0.0, z_in])
        v0 = np.array([p_x, 0.0, math.sqrt(1.0 - p_x * p_x)])
        hit, v = _trace_two_surfaces(p0, v0, lens)
        if v[2] <= 0:
            raise GeometryError("exit ray does not propagate forward")
        t = (z_out - hit[2]) / v[2]
        return float(hit[0] + t * v[0]), float(v[0])

    return xfer


def family_derivatives(trace_fn, h: float, step: float):
    """5-point central d/dh of a callable h -> (r_e, z_e, alpha).

    O(step^4) stencil; the caller is responsible for keeping
    h +/- 2*step inside the family's domain.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    samples = np.array([trace_fn(h + k * step) for k in (-2, -1, 1, 2)], dtype=float)
    deriv = (samples[0] - 8 * samples[1] + 8 * samples[2] - samples[3]) / (12 * step)
    return tuple(float(v) for v in deriv)


def exit_derivatives(h: float, lens: LensPrescription, step: float = 1e-4) -> ExitDerivatives:
    """Finite-difference derivatives of the exit functions at h.

    Computes the 5-point stencil at `step` and at `step/2`; the
    ``step_ok`` flag records whether the two agree to 1e-6 relative.
    """
    if not (h - 2 * step > 0 and h + 2 * step < lens.D / 2):
        raise ValueError("stencil h +/- 2*step must stay inside (0, D/2)")

    def fn(hh):
        ray = trace_through_lens(hh, lens)
        return (ray.r_e, ray.z_e, ray.alpha)

    full = np.array(family_derivatives(fn, h, step))
    half = np.array(family_derivatives(fn, h, step / 2))
    scale = np.maximum(np.abs(half), 1e-30)
    step_ok = bool(np.max(np.abs(full - half) / scale) < 1e-6)
    return ExitDerivatives(float(half[0]), float(half[1]), float(half[2]), step_ok)


def caustic_point(h: float, lens: LensPrescription, step: float = 1e-4):
    """Analytic caustic point reached by the exit ray of height h.

    Returns (t_c, r_caustic, z_caustic).  Raises
    DegenerateCausticError when alpha'(h) vanishes (the tangency
    distance would be infinite).
    """
    ray = trace_through_lens(h, lens)
    der = exit_derivatives(h, lens, step)
    if abs(der.dalpha) <= 1e-12:
        raise DegenerateCausticError(f"alpha'({h}) = {der.dalpha:.3e}")
    sin_a, cos_a = math.sin(ray.alpha), math.cos(ray.alpha)
    t_c = (der.dr_e * cos_a + der.dz_e * sin_a) / der.dalpha
    return (
        t_c,
        ray.r_e - t_c * sin_a,
        ray.z_e + t_c * cos_a,
    )


def brute_force_caustic(h: float, dh: float, lens: LensPrescription):
    """Independent caustic oracle: intersect the exit rays of h and h+dh.

    Solves the least-squares closest point of the two meridional exit
    lines in the (r, z) plane; converges to the analytic caustic point
    at first order in dh.
    """
    ray_a = trace_through_lens(h, lens)
    ray_b = trace_through_lens(h + dh, lens)
    pa = np.array([ray_a.r_e, ray_a.z_e])
    pb = np.array([ray_b.r_e, ray_b.z_e])
    da = np.array([-math.sin(ray_a.alpha), math.cos(ray_a.alpha)])
    db = np.array([-math.sin(ray_b.alpha), math.cos(ray_b.alpha)])
    cross = da[0] * db[1] - da[1] * db[0]
    if abs(cross) < 1e-16:
        raise NoIntersectionError("exit rays are parallel")
    ts, *_ = np.linalg.lstsq(np.column_stack([da, -db]), pb - pa, rcond=None)
    closest_a = pa + ts[0] * da
    closest_b = pb + ts[1] * db
    mid = 0.5 * (closest_a + closest_b)
    return float(mid[0]), float(mid[1])


def caustic_profile(lens: LensPrescription, h_grid, step: float = 1e-4) -> CausticCurve:
    """Evaluate the caustic along a strictly increasing grid of heights.

    Samples that fail (degenerate alpha', trace errors) are flagged
    invalid instead of raising.  The sagittal branch is reported as the
    axis-crossing z of each exit ray.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.size and np.any(np.diff(h_grid) <= 0):
        raise ValueError("height grid must be strictly increasing")
    if h_grid.size and (h_grid[0] <= 0 or h_grid[-1] >= lens.D / 2):
        raise ValueError("height grid must lie strictly inside (0, D/2)")

    n = len(h_grid)
    t_c = np.full(n, np.nan)
    r_c = np.full(n, np.nan)
    z_c = np.full(n, np.nan)
    sag = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    for i, h in enumerate(h_grid):
        try:
            t_c[i], r_c[i], z_c[i] = caustic_point(h, lens, step)
            ray = trace_through_lens(h, lens)
            if math.sin(ray.alpha) > 1e-15:
                t_ax = ray.r_e / math.sin(ray.alpha)
                sag[i] = ray.z_e + t_ax * math.cos(ray.alpha)
            valid[i] = True
        except (DegenerateCausticError, GeometryError, TotalInternalReflectionError, ValueError):
            valid[i] = False
    return CausticCurve(h_grid.copy(), t_c, r_c, z_c, valid, sag)


def paraxial_focus(lens: LensPrescription):
    """Thick-lens paraxial oracle: (effective focal length, back focal distance).

    1/f = (n-1) (1/R1 - 1/R2 + (n-1) d / (n R1 R2));
    BFD = f (1 - (n-1) d / (n R1)), measured from the back vertex.
    """
    n, d, r1, r2 = lens.n, lens.d, lens.R1, lens.R2
    inv_f = (n - 1) * (1 / r1 - 1 / r2 + (n - 1) * d / (n * r1 * r2))
    f = 1.0 / inv_f
    bfd = f * (1 - (n - 1) * d / (n * r1))
    return f, bfd
