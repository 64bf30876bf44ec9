"""Linear symplectic ray transport in the screen representation.

A ray crossing a transverse plane is the 4-vector (x, y, p_x, p_y):
transverse position in mm and optical momentum (refractive index times
direction cosine, dimensionless).  Every lossless paraxial element acts
on that vector as a 4x4 symplectic matrix, i.e. one satisfying
M^T J M = J for the standard block form of J below.  This module builds
the elementary matrices (free propagation, thin lens), composes and
applies them, and checks the symplectic identities numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SYMPLECTIC_J",
    "DEFAULT_TOL",
    "RayState",
    "TransferMap",
    "SymplecticReport",
    "free_propagation",
    "thin_lens",
    "compose",
    "check_symplectic",
    "apply",
    "lagrange_invariant",
]

# Component order (x, y, p_x, p_y) is the wire order for all serialization.
SYMPLECTIC_J = np.array(
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
    ]
)
SYMPLECTIC_J.setflags(write=False)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class RayState:
    """One ray at a screen: positions in mm, momenta dimensionless."""

    x: float
    y: float
    p_x: float
    p_y: float

    def __post_init__(self):
        for name in ("x", "y", "p_x", "p_y"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"RayState.{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.p_x, self.p_y])

    def to_json_obj(self) -> list:
        return [self.x, self.y, self.p_x, self.p_y]

    @classmethod
    def from_array(cls, v) -> "RayState":
        v = np.asarray(v, dtype=float)
        if v.shape != (4,):
            raise ValueError("RayState expects 4 components (x, y, p_x, p_y)")
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


@dataclass(frozen=True)
class SymplecticReport:
    """Residuals of the symplectic identities for a candidate matrix."""

    ok: bool
    max_residual: float  # max-norm of M^T J M - J
    det_error: float     # det(M) - 1

    def __bool__(self) -> bool:
        return self.ok


class TransferMap:
    """A 4x4 symplectic matrix acting on RayState.

    The constructor verifies the symplectic identity and unit determinant
    at ``tol`` (default 1e-10) and rejects anything that fails; use
    :func:`check_symplectic` to probe arbitrary matrices without raising.
    The wrapped array is read-only.
    """

    __slots__ = ("m",)

    def __init__(self, m, tol: float = DEFAULT_TOL):
        m = np.array(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("TransferMap expects a 4x4 matrix")
        report = check_symplectic(m, tol)
        if not report.ok:
            raise ValueError(
                "matrix is not symplectic: max|M^T J M - J| = "
                f"{report.max_residual:.3e}, det-1 = {report.det_error:.3e}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("TransferMap is immutable")

    def __matmul__(self, other: "TransferMap") -> "TransferMap":
        return TransferMap(self.m @ other.m)

    def __eq__(self, other) -> bool:
        return isinstance(other, TransferMap) and np.array_equal(self.m, other.m)

    def __repr__(self) -> str:
        return f"TransferMap({self.m.tolist()!r})"

    def inverse(self) -> "TransferMap":
        # Closed form for symplectic matrices: M^-1 = J^-1 M^T J.
        j = SYMPLECTIC_J
        return TransferMap(np.linalg.solve(j, self.m.T @ j))

    def to_json_obj(self) -> list:
        """Row-major 16-element list (the serialization wire format)."""
        return [float(v) for v in self.m.reshape(-1)]

    @classmethod
    def from_json_obj(cls, flat) -> "TransferMap":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (16,):
            raise ValueError("TransferMap wire format is a flat 16-element array")
        return cls(flat.reshape(4, 4))


def check_symplectic(m, tol: float = DEFAULT_TOL) -> SymplecticReport:
    """Test M^T J M = J and det(M) = 1 at the given tolerance.

    Accepts a raw 4x4 array or a TransferMap.  Returns a report that is
    truthy iff both residuals pass.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(m, TransferMap):
        m = m.m
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    residual = float(np.max(np.abs(m.T @ SYMPLECTIC_J @ m - SYMPLECTIC_J)))
    det_error = float(np.linalg.det(m) - 1.0)
    ok = residual <= tol and abs(det_error) <= tol
    return SymplecticReport(ok, residual, det_error)


def free_propagation(d: float, n: float = 1.0) -> TransferMap:
    """Propagation over axial distance d (mm) in a medium of index n.

    Positions advance by (d/n) times the momentum; momenta are unchanged.
    """
    if n <= 0:
        raise ValueError(f"refractive index must be positive, got {n}")
    m = np.eye(4)
    m[0, 2] = d / n
    m[1, 3] = d / n
    return TransferMap(m)


def thin_lens(f: float) -> TransferMap:
    """Thin lens of focal length f (mm): momenta tilt by -position/f."""
    if f == 0:
        raise ValueError("focal length must be nonzero")
    m = np.eye(4)
    m[2, 0] = -1.0 / f
    m[3, 1] = -1.0 / f
    return TransferMap(m)


def compose(maps) -> TransferMap:
    """Compose transfer maps in optical order: the first entry acts first."""
    maps = list(maps)
    if not maps:
        raise ValueError("compose needs at least one map")
    total = maps[0].m
    for step in maps[1:]:
        total = step.m @ total
    return TransferMap(total)


def apply(m: TransferMap, r: RayState) -> RayState:
    """Act on a ray with a transfer map."""
    return RayState.from_array(m.m @ r.as_array())


def lagrange_invariant(r: RayState) -> float:
    """Skew invariant x*p_y - y*p_x, the angular momentum of the ray.

    Conserved by every rotationally symmetric map in this module.
    """
    return r.x * r.p_y - r.y * r.p_x
