"""Pupil wavefront model: aberration terms, the point-image generating
function, its degenerate-Hessian caustic condition, spot statistics, and
the Strehl ratio.

Two bases over the closed unit disk are supported.  The default
"monomial" basis uses terms a * rho^n * {1, cos(m theta), sin(m theta)};
the alternate "zernike" basis replaces rho^n by the standard radial
polynomial R_n^m(rho) (n - m even).  Explicit conversion between the
two is provided for radial profiles of matching azimuthal symmetry.

The generating function of an image point (x, y) at defocus z is

    F = x rho cos(theta) + y rho sin(theta) - (W(rho, theta) + z rho^2 / 2)

whose pupil-critical points are rays and whose degenerate pupil Hessian
marks caustic points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

__all__ = [
    "PupilDomainError",
    "UnsupportedTermsError",
    "Term",
    "WavefrontSpec",
    "GeneratingFunctionContext",
    "zernike_radial_coefficients",
    "zernike_radial",
    "to_monomial",
    "to_zernike",
    "eval_wavefront",
    "radial_derivative",
    "generating_function",
    "radial_curvature",
    "hessian_det",
    "caustic_from_wavefront",
    "disk_quadrature",
    "pupil_mean",
    "pupil_variance",
    "rms_spot",
    "spot_sigma2_quadrature",
    "strehl",
]

KINDS = ("radial", "cos", "sin")
BASES = ("monomial", "zernike")


class PupilDomainError(ValueError):
    """Evaluation point (or FD stencil) leaves the closed unit disk."""


class UnsupportedTermsError(ValueError):
    """Operation defined only for a restricted family of terms."""


@dataclass(frozen=True)
class Term:
    """One aberration term: radial order n, azimuthal order m, coefficient a."""

    n: int
    m: int
    kind: str
    a: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (self.n >= self.m >= 0):
            raise ValueError(f"orders must satisfy n >= m >= 0, got ({self.n}, {self.m})")
        if self.m == 0 and self.kind != "radial":
            raise ValueError("m = 0 terms must use kind 'radial'")
        if self.m > 0 and self.kind == "radial":
            raise ValueError("kind 'radial' requires m = 0")
        if not math.isfinite(self.a):
            raise ValueError("coefficient must be finite")


@dataclass(frozen=True)
class WavefrontSpec:
    """A finite sum of aberration terms over the unit pupil."""

    terms: tuple
    basis: str = "monomial"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        if self.basis == "zernike":
            for t in self.terms:
                if (t.n - t.m) % 2 != 0:
                    raise ValueError(
                        f"zernike terms need n - m even, got ({t.n}, {t.m})"
                    )

    @classmethod
    def from_coeffs(cls, entries, basis: str = "monomial") -> "WavefrontSpec":
        """Build from an iterable of (n, m, kind, a) tuples."""
        return cls(tuple(Term(n, m, kind, float(a)) for n, m, kind, a in entries), basis)

    @classmethod
    def from_json_obj(cls, obj) -> "WavefrontSpec":
        if isinstance(obj, list):  # bare term list defaults to the monomial basis
            basis, entries = "monomial", obj
        else:
            basis = obj.get("basis", "monomial")
            entries = obj["terms"]
        terms = tuple(
            Term(int(e["n"]), int(e["m"]), e.get("kind", "radial"), float(e["a"]))
            for e in entries
        )
        return cls(terms, basis)

    @classmethod
    def from_json_file(cls, path) -> "WavefrontSpec":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))

    def to_json_obj(self) -> dict:
        return {
            "basis": self.basis,
            "terms": [
                {"n": t.n, "m": t.m, "kind": t.kind, "a": t.a} for t in self.terms
            ],
        }

    def total_energy(self) -> float:
        return float(sum(t.a * t.a for t in self.terms))

    def mode_energies(self) -> dict:
        """Squared coefficients per (n, m), cos and sin folded together."""
        energies: dict = {}
        for t in self.terms:
            key = (t.n, t.m)
            energies[key] = energies.get(key, 0.0) + t.a * t.a
        return energies

    def is_rotationally_symmetric(self) -> bool:
        return all(t.m == 0 for t in self.terms)


@dataclass(frozen=True)
class GeneratingFunctionContext:
    """Image point (x, y) in mm, defocus z in mm, optional wavenumber."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    k: float | None = None


def zernike_radial_coefficients(n: int, m: int) -> dict:
    """Monomial coefficients {power: coeff} of the radial polynomial R_n^m."""
    if (n - m) % 2 != 0 or not n >= m >= 0:
        raise ValueError("R_n^m requires n >= m >= 0 with n - m even")
    coeffs = {}
    for k in range((n - m) // 2 + 1):
        c = (
            (-1) ** k
            * math.factorial(n - k)
            / (
                math.factorial(k)
                * math.factorial((n + m) // 2 - k)
                * math.factorial((n - m) // 2 - k)
            )
        )
        coeffs[n - 2 * k] = float(c)
    return coeffs


def zernike_radial(n: int, m: int, rho):
    """Evaluate R_n^m(rho) (vectorized)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for power, c in zernike_radial_coefficients(n, m).items():
        out = out + c * rho**power
    return out


def to_monomial(spec: WavefrontSpec) -> WavefrontSpec:
    """Expand a zernike-basis spec into monomial terms (exact)."""
    if spec.basis == "monomial":
        return spec
    acc: dict = {}
    for t in spec.terms:
        for power, c in zernike_radial_coefficients(t.n, t.m).items():
            key = (power, t.m, t.kind)
            acc[key] = acc.get(key, 0.0) + t.a * c
    terms = tuple(Term(n, m, kind, a) for (n, m, kind), a in sorted(acc.items()) if a != 0.0)
    return WavefrontSpec(terms, "monomial")


def to_zernike(spec: WavefrontSpec) -> WavefrontSpec:
    """Re-express a monomial spec in the zernike basis (exact, triangular).

    Every monomial term must have n - m even; radial powers with the
    wrong parity have no finite radial-polynomial expansion.
    """
    if spec.basis == "zernike":
        return spec
    groups: dict = {}
    for t in spec.terms:
        if (t.n - t.m) % 2 != 0:
            raise UnsupportedTermsError(
                f"monomial term (n={t.n}, m={t.m}) has odd n - m; no zernike expansion"
            )
        groups.setdefault((t.m, t.kind), {})
        groups[(t.m, t.kind)][t.n] = groups[(t.m, t.kind)].get(t.n, 0.0) + t.a
    out = []
    for (m, kind), powers in sorted(groups.items()):
        n_max = max(powers)
        orders = list(range(m, n_max + 1, 2))
        a_mat = np.zeros((len(orders), len(orders)))
        for j, n in enumerate(orders):
            for power, c in zernike_radial_coefficients(n, m).items():
                a_mat[orders.index(power), j] = c
        rhs = np.array([powers.get(n, 0.0) for n in orders])
        coeffs = np.linalg.solve(a_mat, rhs)
        for n, c in zip(orders, coeffs):
            if c != 0.0:
                out.append(Term(n, m, kind, float(c)))
    return WavefrontSpec(tuple(out), "zernike")


def _require_pupil(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 1 + 1e-12):
        raise PupilDomainError("rho must lie in [0, 1]")
    return rho


def eval_wavefront(spec: WavefrontSpec, rho, theta):
    """W(rho, theta); accepts scalars or broadcastable arrays."""
    rho = _require_pupil(rho)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(np.broadcast(rho, theta).shape)
    for t in spec.terms:
        radial = rho**t.n if spec.basis == "monomial" else zernike_radial(t.n, t.m, rho)
        if t.kind == "radial":
            azim = 1.0
        elif t.kind == "cos":
            azim = np.cos(t.m * theta)
        else:
            azim = np.sin(t.m * theta)
        out = out + t.a * radial * azim
    if out.ndim == 0:
        return float(out)
    return out


def radial_derivative(spec: WavefrontSpec, rho, theta):
    """dW/drho, analytic per term."""
    rho = _require_pupil(rho)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(np.broadcast(rho, theta).shape)
    for t in spec.terms:
        if spec.basis == "monomial":
            radial = t.n * rho ** (t.n - 1) if t.n > 0 else 0.0
        else:
            radial = np.zeros_like(rho)
            for power, c in zernike_radial_coefficients(t.n, t.m).items():
                if power > 0:
                    radial = radial + c * power * rho ** (power - 1)
        if t.kind == "radial":
            azim = 1.0
        elif t.kind == "cos":
            azim = np.cos(t.m * theta)
        else:
            azim = np.sin(t.m * theta)
        out = out + t.a * radial * azim
    if out.ndim == 0:
        return float(out)
    return out


def generating_function(spec: WavefrontSpec, ctx: GeneratingFunctionContext, rho, theta):
    """F = x rho cos(theta) + y rho sin(theta) - (W + z rho^2 / 2)."""
    rho = _require_pupil(rho)
    theta = np.asarray(theta, dtype=float)
    w = eval_wavefront(spec, rho, theta)
    val = (
        ctx.x * rho * np.cos(theta)
        + ctx.y * rho * np.sin(theta)
        - (w + 0.5 * ctx.z * rho * rho)
    )
    if np.ndim(val) == 0:
        return float(val)
    return val


def _eval_cartesian(spec, ctx, xi, eta):
    rho = math.hypot(xi, eta)
    theta = math.atan2(eta, xi)
    return generating_function(spec, ctx, rho, theta)


def radial_curvature(spec: WavefrontSpec, ctx: GeneratingFunctionContext, rho: float,
                     theta: float = 0.0, step: float = 1e-4) -> float:
    """Meridional reduction d^2F/drho^2 along a fixed azimuth.

    Valid at rho = 0 because the stencil runs along a signed diameter
    (negative rho maps to azimuth theta + pi).
    """
    if not 0 <= rho <= 1:
        raise PupilDomainError("rho must lie in [0, 1]")
    if rho + 2 * step > 1:
        raise PupilDomainError("stencil rho + 2*step leaves the pupil")

    def f(signed):
        if signed >= 0:
            return generating_function(spec, ctx, signed, theta)
        return generating_function(spec, ctx, -signed, theta + math.pi)

    # 5-point second derivative, O(step^4)
    vals = [f(rho + k * step) for k in (-2, -1, 0, 1, 2)]
    return float(
        (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4])
        / (12 * step * step)
    )


def hessian_det(spec: WavefrontSpec, ctx: GeneratingFunctionContext, rho: float,
                theta: float, step: float = 1e-4) -> float:
    """det of the pupil-Cartesian Hessian of F at (rho, theta).

    At the pupil center the polar chart is singular, so the value is
    the product of the two meridional curvatures along theta and
    theta + pi/2 (the principal directions there for every pupil of
    definite azimuthal symmetry).
    """
    if not 0 <= rho <= 1:
        raise PupilDomainError("rho must lie in [0, 1]")
    if rho + 2 * step > 1:
        raise PupilDomainError("FD stencil leaves the unit disk")
    if rho < 2 * step:
        return radial_curvature(spec, ctx, rho, theta, step) * radial_curvature(
            spec, ctx, rho, theta + math.pi / 2, step
        )
    xi = rho * math.cos(theta)
    eta = rho * math.sin(theta)
    f = lambda a, b: _eval_cartesian(spec, ctx, a, b)
    f0 = f(xi, eta)
    fxx = (f(xi + step, eta) - 2 * f0 + f(xi - step, eta)) / step**2
    fyy = (f(xi, eta + step) - 2 * f0 + f(xi, eta - step)) / step**2
    fxy = (
        f(xi + step, eta + step)
        - f(xi + step, eta - step)
        - f(xi - step, eta + step)
        + f(xi - step, eta - step)
    ) / (4 * step**2)
    return float(fxx * fyy - fxy * fxy)


def caustic_from_wavefront(spec: WavefrontSpec, z_range, grid: int = 41,
                           step: float = 5e-4):
    """Image-space caustic points of the wavefront, scanned over the pupil.

    At a pupil point the ray condition grad F = 0 fixes the image point
    (x, y) = grad(W + z rho^2 / 2), and the degenerate-Hessian condition
    det(Hess W + z I) = 0 picks z = -eigenvalue of Hess W.  Both
    eigenvalue sheets are emitted wherever they fall inside ``z_range``.

    Returns an (N, 5) array of rows (x, y, z, rho, theta); empty when no
    caustic intersects the window.
    """
    z_lo, z_hi = float(z_range[0]), float(z_range[1])
    if not (math.isfinite(z_lo) and math.isfinite(z_hi) and z_hi >= z_lo):
        raise ValueError("z_range must be a finite interval")
    rows = []
    rhos = np.linspace(2 * step, 1.0 - 2 * step, grid)
    thetas = (
        np.array([0.0])
        if spec.is_rotationally_symmetric()
        else np.linspace(0.0, 2 * math.pi, 2 * grid, endpoint=False)
    )
    w_ctx = GeneratingFunctionContext()  # pure W: F(0,0,0) = -W

    def w_cart(a, b):
        return -_eval_cartesian(spec, w_ctx, a, b)

    for rho in rhos:
        for theta in thetas:
            xi = rho * math.cos(theta)
            eta = rho * math.sin(theta)
            w0 = w_cart(xi, eta)
            wx = (w_cart(xi + step, eta) - w_cart(xi - step, eta)) / (2 * step)
            wy = (w_cart(xi, eta + step) - w_cart(xi, eta - step)) / (2 * step)
            wxx = (w_cart(xi + step, eta) - 2 * w0 + w_cart(xi - step, eta)) / step**2
            wyy = (w_cart(xi, eta + step) - 2 * w0 + w_cart(xi, eta - step)) / step**2
            wxy = (
                w_cart(xi + step, eta + step)
                - w_cart(xi + step, eta - step)
                - w_cart(xi - step, eta + step)
                + w_cart(xi - step, eta - step)
            ) / (4 * step**2)
            for lam in np.linalg.eigvalsh(np.array([[wxx, wxy], [wxy, wyy]])):
                z = -float(lam)
                if z_lo <= z <= z_hi:
                    rows.append((wx + z * xi, wy + z * eta, z, rho, theta))
    if not rows:
        return np.zeros((0, 5))
    return np.array(rows)


def disk_quadrature(radial_order: int = 64, azimuthal_order: int = 128):
    """Nodes and weights for integrals over the unit disk in polar form.

    Returns (rho, theta, weight) flat arrays such that
    sum(f(rho, theta) * weight) approximates the integral of
    f rho drho dtheta.  Gauss-Legendre in rho (exact for radial
    polynomials of degree <= 2*radial_order - 1) crossed with a uniform
    periodic rule in theta (exact for trigonometric polynomials of
    degree < azimuthal_order).
    """
    x, wx = roots_legendre(radial_order)
    rho = 0.5 * (x + 1.0)
    w_rho = 0.5 * wx * rho  # includes the rho measure
    theta = np.arange(azimuthal_order) * (2 * math.pi / azimuthal_order)
    w_theta = 2 * math.pi / azimuthal_order
    rr, tt = np.meshgrid(rho, theta, indexing="ij")
    ww = np.broadcast_to((w_rho * w_theta)[:, None], rr.shape)
    return rr.ravel(), tt.ravel(), ww.ravel()


def pupil_mean(spec: WavefrontSpec, order: int = 64):
    rho, theta, w = disk_quadrature(order, 2 * order)
    return float(np.sum(eval_wavefront(spec, rho, theta) * w) / math.pi)


def pupil_variance(spec: WavefrontSpec, order: int = 64):
    """Variance of W over the pupil under the uniform area measure."""
    rho, theta, w = disk_quadrature(order, 2 * order)
    vals = eval_wavefront(spec, rho, theta)
    mean = float(np.sum(vals * w) / math.pi)
    return float(np.sum((vals - mean) ** 2 * w) / math.pi)


_PRIMARY_KEYS = {(2, 0, "radial"), (2, 2, "cos"), (3, 1, "cos"), (4, 0, "radial")}


def rms_spot(spec: WavefrontSpec, order: int = 64):
    """Mean-square spot radius, closed form and quadrature side by side.

    The closed form
        4 a40^2 + a31^2/2 + 2 a22^2 + 4 a20^2 + 4 a40 a20
    is defined only for the four primary monomial terms and is reported
    verbatim; the quadrature value integrates (dW/drho)^2 rho drho dtheta
    directly and serves as the oracle.  The two use different
    normalizations and disagree; callers get both.
    """
    for t in spec.terms:
        if (t.n, t.m, t.kind) not in _PRIMARY_KEYS:
            raise UnsupportedTermsError(
                "closed-form spot size is defined for primary terms only: "
                f"(n={t.n}, m={t.m}, kind={t.kind}) unsupported"
            )
    if spec.basis != "monomial":
        raise UnsupportedTermsError("closed-form spot size expects the monomial basis")
    coeff = {key: 0.0 for key in _PRIMARY_KEYS}
    for t in spec.terms:
        coeff[(t.n, t.m, t.kind)] += t.a
    a20 = coeff[(2, 0, "radial")]
    a22 = coeff[(2, 2, "cos")]
    a31 = coeff[(3, 1, "cos")]
    a40 = coeff[(4, 0, "radial")]
    closed = (
        4 * a40**2 + 0.5 * a31**2 + 2 * a22**2 + 4 * a20**2 + 4 * a40 * a20
    )
    return closed, spot_sigma2_quadrature(spec, order)


def spot_sigma2_quadrature(spec: WavefrontSpec, order: int = 64) -> float:
    """Quadrature of the printed spot integral, any spec allowed."""
    rho, theta, w = disk_quadrature(order, 2 * order)
    slope = radial_derivative(spec, rho, theta)
    return float(np.sum(slope * slope * w))


def strehl(spec: WavefrontSpec, k: float, order: int = 64) -> float:
    """On-axis intensity ratio |(1/pi) integral exp(i k W) rho drho dtheta|^2.

    Equals 1 exactly when W is constant over the pupil; otherwise < 1.
    """
    if order < 16:
        raise ValueError("quadrature order must be at least 16")
    rho, theta, w = disk_quadrature(order, 2 * order)
    vals = eval_wavefront(spec, rho, theta)
    integral = np.sum(np.exp(1j * k * vals) * w) / math.pi
    return float(min(1.0, abs(integral) ** 2))
