"""Aberration balancing and correction loops.

Three correction tools live here.  ``balance_primary`` solves the
primary-aberration trade-off two ways (the published closed relation
and a quadrature-oracle minimizer of the spot integral, which
disagree).  ``optimize_caustic`` is plain fixed-step gradient descent
on an arbitrary coefficient objective, tracing every iterate.
``toc_run`` is the four-stage topological loop: fingerprint the
dominant caustic type, unfold a degenerate umbilic by injecting a
controlled low-order term, descend a barrier-aware cost on the
high-order modes, then remove the injected term and descend the
inverse Strehl ratio on what remains.

Also here: projection of a wavefront onto a deformable-mirror basis
(least squares under the pupil inner product), the wrapped phase map
of a diffractive corrector, and the manufacturing tolerance bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from . import caustic_geometry, wavefront
from .catastrophe import (
    CatastropheLabel,
    ClassificationReport,
    NoAberrationError,
    classify,
    fingerprint,
)
from .wavefront import Term, WavefrontSpec

__all__ = [
    "OnBarrierError",
    "SaturationError",
    "StalledError",
    "DivergenceError",
    "ConditioningError",
    "ObjectiveError",
    "HyperplaneBarrier",
    "PointCloudBarrier",
    "CorrectionConfig",
    "TraceIterate",
    "CorrectionTrace",
    "MirrorBasis",
    "PrimaryBalance",
    "balance_primary",
    "balance_high_order",
    "caustic_objective",
    "optimize_caustic",
    "toc_cost",
    "lyapunov",
    "toc_run",
    "dm_project",
    "doe_phase",
    "tolerance_bound",
    "spot_objective",
]

STAGE_ORDER = ("fingerprint", "unfold", "descend", "refold", "done")


class OnBarrierError(ValueError):
    """Coefficient point sits exactly on a barrier; the cost diverges."""


class SaturationError(RuntimeError):
    """Strehl ratio numerically zero; its reciprocal is meaningless."""


class StalledError(RuntimeError):
    """High-order energy failed to reach the refold threshold in budget."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class DivergenceError(RuntimeError):
    """Objective became non-finite during descent."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class ConditioningError(ValueError):
    """Mirror Gram matrix too ill-conditioned for a trustworthy solve."""


class ObjectiveError(RuntimeError):
    """The caustic objective could not be evaluated."""


@dataclass(frozen=True)
class HyperplaneBarrier:
    """Coefficient hyperplane {c[index] = value}."""

    index: int
    value: float

    def distance(self, c: np.ndarray) -> float:
        return abs(float(c[self.index]) - self.value)

    def crossed(self, c0: np.ndarray, c1: np.ndarray) -> bool:
        a = c0[self.index] - self.value
        b = c1[self.index] - self.value
        return bool(a * b < 0)


@dataclass
class PointCloudBarrier:
    """Sampled bifurcation set; distance is nearest-neighbour Euclidean."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self._tree = cKDTree(self.points)

    def distance(self, c: np.ndarray) -> float:
        return float(self._tree.query(np.asarray(c, dtype=float))[0])

    def crossed(self, c0: np.ndarray, c1: np.ndarray) -> bool:
        # a segment "crosses" a sampled set when it passes closer than
        # the endpoint clearances allow
        mid = 0.5 * (np.asarray(c0) + np.asarray(c1))
        step = 0.5 * np.linalg.norm(np.asarray(c1) - np.asarray(c0))
        return self.distance(mid) < max(step, 0.0) * 1e-3


@dataclass
class CorrectionConfig:
    """Knobs for the descent loops; all rates and tolerances positive."""

    learning_rate: float = 0.1
    fd_step: float = 1e-6
    stop_tol: float = 1e-6
    max_iterations: int = 500
    alpha_cost: float = 1.0
    # beta small enough that the barrier equilibrium (~ beta / dist^2
    # balance) sits well below the refold threshold
    beta_cost: float = 1e-9
    mu: float = 1.0
    gain: float = 1.0
    unfold_amplitude: float = 0.15
    refold_threshold: float = 1e-12
    unfold_target: str = "defocus"  # or "astigmatism"
    max_step: float = 0.5
    wavenumber: float = 2 * math.pi
    strehl_order: int = 32
    barriers: list = field(default_factory=list)

    def __post_init__(self):
        for name in (
            "learning_rate", "fd_step", "stop_tol", "alpha_cost", "mu",
            "gain", "refold_threshold", "max_step", "wavenumber",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta_cost < 0 or self.unfold_amplitude < 0:
            raise ValueError("beta_cost and unfold_amplitude must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.unfold_target not in ("defocus", "astigmatism"):
            raise ValueError("unfold_target must be 'defocus' or 'astigmatism'")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CorrectionConfig":
        kwargs = dict(obj)
        barriers = []
        for spec in kwargs.pop("barriers", []):
            kind = spec.get("type", "hyperplane")
            if kind == "hyperplane":
                barriers.append(HyperplaneBarrier(int(spec["index"]), float(spec["value"])))
            elif kind == "points":
                barriers.append(PointCloudBarrier(np.asarray(spec["points"], dtype=float)))
            else:
                raise ValueError(f"unknown barrier type {kind!r}")
        cfg = cls(**kwargs)
        cfg.barriers = barriers
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "CorrectionConfig":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))


@dataclass(frozen=True)
class TraceIterate:
    iteration: int
    stage: str
    coeffs: np.ndarray
    objective: float
    strehl: float
    artificial: np.ndarray  # injected unfolding component, same layout as coeffs


@dataclass
class CorrectionTrace:
    modes: tuple  # (n, m, kind) per coefficient slot
    iterates: list = field(default_factory=list)

    def append(self, stage, coeffs, objective, strehl_value, artificial):
        self.iterates.append(
            TraceIterate(
                len(self.iterates),
                stage,
                np.array(coeffs, dtype=float),
                float(objective),
                float(strehl_value),
                np.array(artificial, dtype=float),
            )
        )

    def stages(self) -> list:
        seen = []
        for it in self.iterates:
            if not seen or seen[-1] != it.stage:
                seen.append(it.stage)
        return seen

    def final(self) -> TraceIterate:
        return self.iterates[-1]

    def to_csv(self, path):
        from .formats import write_csv

        ncoef = len(self.modes)
        header = ["iter", "stage", "J", "S"] + [f"c_{i + 1}" for i in range(ncoef)]
        write_csv(
            path,
            header,
            (
                [str(it.iteration), it.stage, it.objective, it.strehl, *(it.coeffs + it.artificial)]
                for it in self.iterates
            ),
        )


def _spec_from_coeffs(modes, coeffs) -> WavefrontSpec:
    return WavefrontSpec(
        tuple(Term(n, m, kind, float(a)) for (n, m, kind), a in zip(modes, coeffs)),
        "monomial",
    )


def _fd_gradient(fun, c, indices, step):
    grad = np.zeros(len(c))
    for i in indices:
        up = c.copy()
        dn = c.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (fun(up) - fun(dn)) / (2 * step)
    return grad


# ---------------------------------------------------------------------------
# Balancing


@dataclass(frozen=True)
class PrimaryBalance:
    """Both answers to the primary-aberration trade-off for a fixed a40."""

    published: tuple  # (a20, a31, a22) from the closed relation
    oracle: tuple     # (a20, a31, a22) minimizing the quadrature spot integral


def balance_primary(a40: float, order: int = 64) -> PrimaryBalance:
    """Balance defocus against fixed primary spherical aberration.

    The published closed relation gives a20 = -2 a40 (with coma and
    astigmatism zero).  The oracle minimizes the quadrature of the spot
    integral over a20 directly by golden-section search and lands on
    a20 = -(4/3) a40; the two disagree because the closed spot formula
    and the integral it claims to summarize use different
    normalizations.  Both are returned; the oracle is authoritative.
    """
    published = (-2.0 * a40, 0.0, 0.0)
    if a40 == 0:
        return PrimaryBalance(published, (0.0, 0.0, 0.0))

    def sigma2(a20):
        spec = WavefrontSpec.from_coeffs(
            [(4, 0, "radial", a40), (2, 0, "radial", a20)]
        )
        return wavefront.spot_sigma2_quadrature(spec, order)

    span = 3.0 * abs(a40)
    opt = minimize_scalar(
        sigma2, bracket=(-span, 0.0, span), method="golden", options={"xtol": 1e-12}
    )
    return PrimaryBalance(published, (float(opt.x), 0.0, 0.0))


def balance_high_order(lower_coeffs) -> float:
    """Next even-order radial coefficient from the balancing recurrence.

    ``lower_coeffs`` lists a_{0,0}, a_{2,0}, ..., a_{2n-2,0} (all orders
    below the one produced).  Evaluates, verbatim,

        a_{2n,0} = -(n+1)/(2n) a_{2n-2,0}
                   - 1/(4n) sum_{k=1}^{n-1} (2k)! (2n-2k)!
                     / ((k!)^2 ((n-k)!)^2) a_{2k,0} a_{2n-2k,0}.
    """
    coeffs = [float(v) for v in lower_coeffs]
    n = len(coeffs)
    if n < 1:
        raise ValueError("need at least a_{0,0} to produce a_{2,0}")
    linear = -(n + 1) / (2 * n) * coeffs[n - 1]
    quad = 0.0
    for k in range(1, n):
        weight = (
            math.factorial(2 * k)
            * math.factorial(2 * n - 2 * k)
            / (math.factorial(k) ** 2 * math.factorial(n - k) ** 2)
        )
        quad += weight * coeffs[k] * coeffs[n - k]
    return linear - quad / (4 * n)


# ---------------------------------------------------------------------------
# Objectives


def caustic_objective(spec: WavefrontSpec, z_window, grid: int = 80,
                      n_phi: int = 48, r_floor: float = 1e-4):
    """Bending-energy measure of the caustic surface inside a z window.

    Defined for rotationally symmetric wavefronts: the meridional
    caustic profile is revolved into a mesh and measured.  A flat or
    empty caustic (no curved sheet inside the window) scores 0.
    """
    if not spec.is_rotationally_symmetric():
        raise ObjectiveError("caustic objective requires a rotationally symmetric wavefront")
    pts = wavefront.caustic_from_wavefront(spec, z_window, grid)
    if len(pts) == 0:
        return 0.0
    radius = np.hypot(pts[:, 0], pts[:, 1])
    z = pts[:, 2]
    keep = radius > r_floor * max(1.0, float(np.max(radius)))
    if np.count_nonzero(keep) < 3:
        return 0.0
    order = np.argsort(z[keep])
    r_prof = radius[keep][order]
    z_prof = z[keep][order]
    # collapse duplicate z samples (both Hessian sheets can coincide)
    uniq = np.concatenate([[True], np.diff(z_prof) > 1e-12])
    r_prof, z_prof = r_prof[uniq], z_prof[uniq]
    if len(r_prof) < 3:
        return 0.0
    try:
        mesh = caustic_geometry.surface_of_revolution(r_prof, z_prof, n_phi)
        return caustic_geometry.caustic_measure(mesh)
    except caustic_geometry.MeshError as exc:
        raise ObjectiveError(f"caustic meshing failed: {exc}") from exc


def spot_objective(modes):
    """Objective adapter: coefficient vector -> quadrature spot integral."""

    def objective(c):
        return wavefront.spot_sigma2_quadrature(_spec_from_coeffs(modes, c))

    return objective


# ---------------------------------------------------------------------------
# Descent loops


def optimize_caustic(w0: WavefrontSpec, cfg: CorrectionConfig, objective) -> CorrectionTrace:
    """Fixed-step gradient descent c <- c - lr * grad J over all coefficients.

    ``objective`` maps a coefficient vector (layout = the spec's term
    order) to a scalar.  Central finite differences supply the
    gradient; iteration stops when its norm drops to ``stop_tol`` or
    the budget runs out.  Every iterate is recorded.
    """
    modes = tuple((t.n, t.m, t.kind) for t in w0.terms)
    c = np.array([t.a for t in w0.terms], dtype=float)
    trace = CorrectionTrace(modes)
    zero = np.zeros_like(c)

    j0 = float(objective(c))
    if not math.isfinite(j0):
        raise DivergenceError("objective not finite at the start point", trace)
    s0 = wavefront.strehl(_spec_from_coeffs(modes, c), cfg.wavenumber, cfg.strehl_order)
    trace.append("descend", c, j0, s0, zero)

    all_idx = range(len(c))
    for _ in range(cfg.max_iterations):
        grad = _fd_gradient(objective, c, all_idx, cfg.fd_step)
        if np.linalg.norm(grad) <= cfg.stop_tol:
            break
        c = c - cfg.learning_rate * grad
        j = float(objective(c))
        if not math.isfinite(j):
            raise DivergenceError("objective diverged during descent", trace)
        s = wavefront.strehl(_spec_from_coeffs(modes, c), cfg.wavenumber, cfg.strehl_order)
        trace.append("descend", c, j, s, zero)
    trace.append("done", c, float(objective(c)),
                 wavefront.strehl(_spec_from_coeffs(modes, c), cfg.wavenumber, cfg.strehl_order),
                 zero)
    return trace


def toc_cost(c, barriers, alpha: float, beta: float) -> float:
    """Barrier-aware cost alpha ||c||^2 + beta sum_k 1 / dist(c, barrier_k)."""
    c = np.asarray(c, dtype=float)
    value = alpha * float(c @ c)
    for barrier in barriers:
        dist = barrier.distance(c)
        if dist == 0:
            raise OnBarrierError("coefficient point lies on a barrier")
        value += beta / dist
    return value


def lyapunov(c, k: float, modes=None, order: int = 32) -> float:
    """Inverse Strehl ratio of the wavefront with coefficients c (>= 1)."""
    if modes is None:
        modes = _DEFAULT_MODES
    s = wavefront.strehl(_spec_from_coeffs(modes, c), k, order)
    if s < 1e-12:
        raise SaturationError("Strehl ratio below 1e-12; reciprocal saturated")
    return 1.0 / s


_DEFAULT_MODES = ((2, 0, "radial"), (2, 2, "cos"), (3, 1, "cos"), (3, 3, "cos"))


def _barrier_safe_step(c, delta, barriers, max_step):
    """Clamp a step to max_step and halve it until no barrier is crossed."""
    norm = float(np.linalg.norm(delta))
    if norm > max_step:
        delta = delta * (max_step / norm)
    for _ in range(60):
        if not any(b.crossed(c, c + delta) for b in barriers):
            return delta
        delta = 0.5 * delta
    raise OnBarrierError("cannot step without crossing a barrier")


def toc_run(c0, cfg: CorrectionConfig, modes=None) -> CorrectionTrace:
    """Four-stage topological correction of the coefficient vector c0.

    Stage 1 (fingerprint) classifies the dominant caustic type from the
    mode energies.  Stage 2 (unfold) runs only when a D-series umbilic
    dominates: the configured amplitude is injected into the defocus
    mode (astigmatism via config), tracked separately so its removal is
    exact.  Stage 3 (descend) moves the high-order modes (n >= 3)
    down the barrier-aware cost until their energy is below the refold
    threshold.  Stage 4 (refold) removes the injected term exactly and
    descends the inverse Strehl ratio on the remaining low-order modes
    along -gain * (grad V + mu * F_topo), F_topo being the negative
    barrier-term gradient.  No step may cross a barrier.
    """
    modes = tuple(modes) if modes is not None else _DEFAULT_MODES
    c = np.array(c0, dtype=float)
    if c.shape != (len(modes),):
        raise ValueError("c0 length must match the mode layout")
    art = np.zeros_like(c)
    trace = CorrectionTrace(modes)

    def strehl_of(total):
        return wavefront.strehl(_spec_from_coeffs(modes, total), cfg.wavenumber, cfg.strehl_order)

    def cost_of(total):
        return toc_cost(total, cfg.barriers, cfg.alpha_cost, cfg.beta_cost)

    # stage 1: fingerprint
    spec0 = _spec_from_coeffs(modes, c)
    try:
        fingerprint(spec0)
        report: ClassificationReport | None = classify(spec0)
    except NoAberrationError:
        report = None
    trace.append("fingerprint", c, cost_of(c + art), strehl_of(c + art), art)
    if report is None:
        trace.append("done", c, cost_of(c), strehl_of(c), art)
        return trace

    high = [i for i, (n, _, _) in enumerate(modes) if n >= 3]
    low = [i for i, (n, _, _) in enumerate(modes) if n < 3]

    # stage 2: controlled unfolding, only for dominant umbilics
    if report.label in (CatastropheLabel.D4plus, CatastropheLabel.D4minus):
        target = (2, 0, "radial") if cfg.unfold_target == "defocus" else (2, 2, "cos")
        if target not in modes:
            raise ValueError(f"unfold target mode {target} missing from layout")
        art[modes.index(target)] = cfg.unfold_amplitude
        trace.append("unfold", c, cost_of(c + art), strehl_of(c + art), art)

    # stage 3: barrier-aware descent of the high-order modes
    def high_energy(vec):
        return float(sum(vec[i] ** 2 for i in high))

    steps = 0
    while high and high_energy(c) >= cfg.refold_threshold:
        if steps >= cfg.max_iterations:
            raise StalledError(
                "high-order energy failed to reach the refold threshold", trace
            )
        grad = _fd_gradient(lambda v: cost_of(v + art), c, high, cfg.fd_step)
        delta = _barrier_safe_step(c + art, -cfg.learning_rate * grad, cfg.barriers, cfg.max_step)
        c = c + delta
        trace.append("descend", c, cost_of(c + art), strehl_of(c + art), art)
        steps += 1

    # stage 4: refold (exact removal of the injected term), then Strehl descent
    art = np.zeros_like(c)
    trace.append("refold", c, cost_of(c), strehl_of(c), art)

    def vee(vec):
        s = strehl_of(vec)
        if s < 1e-12:
            raise SaturationError("Strehl ratio below 1e-12 during refolding")
        return 1.0 / s

    def barrier_term(vec):
        value = 0.0
        for barrier in cfg.barriers:
            dist = barrier.distance(vec)
            if dist == 0:
                raise OnBarrierError("iterate landed on a barrier")
            value += cfg.beta_cost / dist
        return value

    for _ in range(cfg.max_iterations):
        grad_v = _fd_gradient(vee, c, low, cfg.fd_step)
        if np.linalg.norm(grad_v) <= cfg.stop_tol:
            break
        force = -_fd_gradient(barrier_term, c, low, cfg.fd_step)
        direction = -cfg.gain * (grad_v + cfg.mu * force)
        delta = _barrier_safe_step(c, cfg.learning_rate * direction, cfg.barriers, cfg.max_step)
        # halve until the Lyapunov value actually decreases; the control
        # law fixes the direction, not the step length
        v_now = vee(c)
        for _ in range(50):
            if vee(c + delta) < v_now:
                break
            delta = 0.5 * delta
        if np.linalg.norm(delta) < 1e-15:
            break
        c = c + delta
        trace.append("refold", c, vee(c), strehl_of(c), art)

    trace.append("done", c, cost_of(c), strehl_of(c), art)
    return trace


# ---------------------------------------------------------------------------
# Hardware projections


class MirrorBasis:
    """Deformable-mirror influence functions over the unit disk.

    ``functions`` are callables psi(x, y) accepting arrays.  The Gram
    matrix under the pupil inner product is precomputed by quadrature;
    its condition number is exposed for diagnostics.
    """

    def __init__(self, functions, order: int = 64):
        self.functions = list(functions)
        rho, theta, w = wavefront.disk_quadrature(order, 2 * order)
        x = rho * np.cos(theta)
        y = rho * np.sin(theta)
        self._nodes = (rho, theta, w, x, y)
        samples = np.array([np.asarray(f(x, y), dtype=float) for f in self.functions])
        self.gram = samples @ (samples * w).T
        self.gram = 0.5 * (self.gram + self.gram.T)
        self._samples = samples
        self.condition_number = float(np.linalg.cond(self.gram))
        eigmin = float(np.min(np.linalg.eigvalsh(self.gram)))
        if eigmin <= 0:
            raise ConditioningError("Gram matrix is not positive definite")

    def __len__(self) -> int:
        return len(self.functions)


def dm_project(spec: WavefrontSpec, basis: MirrorBasis) -> np.ndarray:
    """Least-squares mirror coefficients cancelling the wavefront.

    Solves G c = -b with b_i = <W, psi_i> under the pupil inner
    product; for an orthonormal basis this reduces to
    c_i = -<W, psi_i>.  The residual W + sum c_i psi_i is orthogonal to
    every basis function.
    """
    if basis.condition_number > 1e10:
        raise ConditioningError(
            f"Gram matrix condition number {basis.condition_number:.3e} exceeds 1e10"
        )
    rho, theta, w, _, _ = basis._nodes
    wvals = wavefront.eval_wavefront(spec, rho, theta)
    b = basis._samples @ (wvals * w)
    return np.linalg.solve(basis.gram, -b)


def doe_phase(spec: WavefrontSpec, wavelength: float, rho, theta) -> np.ndarray:
    """Wrapped phase -2 pi W / wavelength mod 2 pi, values in [0, 2 pi)."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    w = np.asarray(wavefront.eval_wavefront(spec, rho, theta), dtype=float)
    two_pi = 2 * math.pi
    phase = np.mod(-two_pi / wavelength * w, two_pi)
    # np.mod can round up to the modulus itself for tiny negatives
    phase = np.where(phase >= two_pi, 0.0, phase)
    return phase


def tolerance_bound(n: int, delta: float) -> float:
    """Coefficient tolerance delta * sqrt((n+1)/pi) at radial order n."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if n < 0:
        raise ValueError("order must be nonnegative")
    return delta * math.sqrt((n + 1) / math.pi)
