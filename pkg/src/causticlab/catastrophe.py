"""The seven elementary catastrophe polynomials, their caustic
(bifurcation) sets, and classification of a wavefront's dominant
caustic topology.

The A series (one state variable) covers fold, cusp, swallowtail and
butterfly; the D series (two state variables) the umbilics.  Only
A2, A3, A4 and the two D4 umbilics are structurally stable in three
dimensions; the codimension-4 forms A5 and D5 are provided for
evaluation only.

Classification maps the energy distribution of a wavefront's modes to
a label: defocus-dominated pupils fold (A2), spherical/coma-dominated
ones cusp (A3), coupled primary+secondary spherical gives the
swallowtail (A4), astigmatism coupled to quadrafoil the hyperbolic
umbilic (D4+), and trefoil the elliptic umbilic (D4-).  Two published
conventions disagree on the cusp/umbilic assignment of spherical,
coma, and astigmatism; the classifier follows the finer mode table and
reports the disagreement in its conflict notes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .wavefront import WavefrontSpec

__all__ = [
    "CatastropheLabel",
    "STABLE_IN_3D",
    "NoAberrationError",
    "TopologyChangeError",
    "CausticSetResidual",
    "BifurcationTrace",
    "ClassificationReport",
    "normal_form_value",
    "caustic_set_residual",
    "trace_bifurcation_set",
    "count_cusps",
    "classify",
    "fingerprint",
    "unfold_elliptic_umbilic",
]


class CatastropheLabel(enum.Enum):
    A2 = "fold"
    A3 = "cusp"
    A4 = "swallowtail"
    A5 = "butterfly"
    D4plus = "hyperbolic umbilic"
    D4minus = "elliptic umbilic"
    D5 = "parabolic umbilic"

    @property
    def display_name(self) -> str:
        return self.value

    @property
    def n_state(self) -> int:
        return 1 if self.name.startswith("A") else 2

    @property
    def n_controls(self) -> int:
        return {"A2": 1, "A3": 2, "A4": 3, "A5": 4, "D4plus": 3, "D4minus": 3, "D5": 4}[
            self.name
        ]


STABLE_IN_3D = frozenset(
    {
        CatastropheLabel.A2,
        CatastropheLabel.A3,
        CatastropheLabel.A4,
        CatastropheLabel.D4plus,
        CatastropheLabel.D4minus,
    }
)


class NoAberrationError(ValueError):
    """The wavefront carries no mode energy; nothing to classify."""


class TopologyChangeError(RuntimeError):
    """A traced caustic section does not show the expected cusp count."""


def _check_arity(label: CatastropheLabel, state, controls):
    state = np.atleast_1d(np.asarray(state, dtype=float))
    controls = np.atleast_1d(np.asarray(controls, dtype=float))
    if state.shape != (label.n_state,):
        raise ValueError(
            f"{label.name} takes {label.n_state} state variable(s), got {state.shape}"
        )
    if controls.shape != (label.n_controls,):
        raise ValueError(
            f"{label.name} takes {label.n_controls} control(s), got {controls.shape}"
        )
    return state, controls


def normal_form_value(label: CatastropheLabel, state, controls) -> float:
    """Evaluate the elementary catastrophe polynomial."""
    s, c = _check_arity(label, state, controls)
    if label is CatastropheLabel.A2:
        (y,) = s
        return float(y**3 + c[0] * y)
    if label is CatastropheLabel.A3:
        (y,) = s
        return float(y**4 + c[0] * y**2 + c[1] * y)
    if label is CatastropheLabel.A4:
        (y,) = s
        return float(y**5 + c[0] * y**3 + c[1] * y**2 + c[2] * y)
    if label is CatastropheLabel.A5:
        (y,) = s
        return float(y**6 + c[0] * y**4 + c[1] * y**3 + c[2] * y**2 + c[3] * y)
    if label is CatastropheLabel.D4plus:
        y1, y2 = s
        return float(y1**3 + y2**3 + c[0] * y1 * y2 - c[1] * y1 - c[2] * y2)
    if label is CatastropheLabel.D4minus:
        y1, y2 = s
        return float(
            y1**3 - 3 * y1 * y2**2 + c[0] * (y1**2 + y2**2) - c[1] * y1 - c[2] * y2
        )
    if label is CatastropheLabel.D5:
        y1, y2 = s
        return float(
            y1**2 * y2 + y2**4 + c[0] * y1**2 + c[1] * y2**2 + c[2] * y1 + c[3] * y2
        )
    raise ValueError(f"unknown label {label}")


@dataclass(frozen=True)
class CausticSetResidual:
    """Residuals of the critical and degeneracy equations at one point.

    ``gradient`` is dV/dstate, ``hessian_det`` the state-Hessian
    determinant.  ``eliminant`` carries the cusp discriminant
    8 q^3 + 27 l^2 for A3 (q the quadratic, l the linear control) and
    is None where no eliminant applies (the A2 caustic is the single
    plane where its control vanishes).
    """

    gradient: tuple
    hessian_det: float
    eliminant: float | None


def caustic_set_residual(label: CatastropheLabel, controls, state) -> CausticSetResidual:
    """Evaluate the caustic-set system for one of the stable forms."""
    if label not in STABLE_IN_3D:
        raise ValueError(f"{label.name} is not stable in 3D; residuals unsupported")
    s, c = _check_arity(label, state, controls)
    if label is CatastropheLabel.A2:
        (y,) = s
        return CausticSetResidual((float(3 * y**2 + c[0]),), float(6 * y), None)
    if label is CatastropheLabel.A3:
        (y,) = s
        grad = 4 * y**3 + 2 * c[0] * y + c[1]
        hess = 12 * y**2 + 2 * c[0]
        elim = 8 * c[0] ** 3 + 27 * c[1] ** 2
        return CausticSetResidual((float(grad),), float(hess), float(elim))
    if label is CatastropheLabel.A4:
        (y,) = s
        grad = 5 * y**4 + 3 * c[0] * y**2 + 2 * c[1] * y + c[2]
        hess = 20 * y**3 + 6 * c[0] * y + 2 * c[1]
        return CausticSetResidual((float(grad),), float(hess), None)
    if label is CatastropheLabel.D4plus:
        y1, y2 = s
        g1 = 3 * y1**2 + c[0] * y2 - c[1]
        g2 = 3 * y2**2 + c[0] * y1 - c[2]
        hess = 36 * y1 * y2 - c[0] ** 2
        return CausticSetResidual((float(g1), float(g2)), float(hess), None)
    # D4minus
    y1, y2 = s
    g1 = 3 * y1**2 - 3 * y2**2 + 2 * c[0] * y1 - c[1]
    g2 = -6 * y1 * y2 + 2 * c[0] * y2 - c[2]
    hess = (6 * y1 + 2 * c[0]) * (-6 * y1 + 2 * c[0]) - 36 * y2**2
    return CausticSetResidual((float(g1), float(g2)), float(hess), None)


@dataclass
class BifurcationTrace:
    """Swept caustic set projected to control space."""

    label: CatastropheLabel
    states: np.ndarray    # sweep parameter per emitted point
    controls: np.ndarray  # (N, n_controls)

    def __len__(self) -> int:
        return len(self.states)

    def to_csv(self, path):
        from .formats import write_csv

        padded = np.zeros((len(self.states), 3))
        padded[:, : self.controls.shape[1]] = self.controls
        write_csv(
            path,
            ["state", "ctrl1", "ctrl2", "ctrl3"],
            ([s, *row] for s, row in zip(self.states, padded)),
        )


def _window_filter(states, controls, window):
    window = [tuple(map(float, pair)) for pair in window]
    if len(window) != controls.shape[1]:
        raise ValueError("window must provide one (lo, hi) pair per control")
    keep = np.ones(len(states), dtype=bool)
    for j, (lo, hi) in enumerate(window):
        keep &= (controls[:, j] >= lo) & (controls[:, j] <= hi)
    return states[keep], controls[keep]


def trace_bifurcation_set(
    label: CatastropheLabel,
    window,
    resolution: int = 256,
    slice_value: float | None = None,
) -> BifurcationTrace:
    """Sweep the state variable through the critical+degenerate system.

    For A3 the sweep parameter is the state y and the emitted controls
    are (q, l) = (-6 y^2, 8 y^3).  For A4 and the umbilics the caustic
    set is a surface, so one control is frozen at ``slice_value``
    (default: midpoint of its window) and the section curve is swept.
    Points outside ``window`` are dropped.
    """
    if label not in STABLE_IN_3D:
        raise ValueError(f"{label.name} is not stable in 3D; tracing unsupported")
    window = [tuple(map(float, pair)) for pair in window]

    if label is CatastropheLabel.A2:
        # caustic is the control plane c1 = 0 at state 0
        ys = np.zeros(resolution)
        controls = np.zeros((resolution, 1))
        return BifurcationTrace(label, *_window_filter(ys, controls, window))

    if label is CatastropheLabel.A3:
        q_lo = window[0][0]
        l_hi = max(abs(window[1][0]), abs(window[1][1]))
        y_max = max(
            math.sqrt(max(0.0, -q_lo) / 6.0),
            (l_hi / 8.0) ** (1.0 / 3.0),
        )
        ys = np.linspace(-y_max, y_max, resolution)
        controls = np.column_stack([-6 * ys**2, 8 * ys**3])
        return BifurcationTrace(label, *_window_filter(ys, controls, window))

    w = slice_value if slice_value is not None else 0.5 * (window[0][0] + window[0][1])

    if label is CatastropheLabel.A4:
        span = max(abs(v) for pair in window for v in pair) or 1.0
        y_max = max(span ** (1.0 / 3.0), math.sqrt(span))
        ys = np.linspace(-y_max, y_max, resolution)
        c2 = -10 * ys**3 - 3 * w * ys
        c3 = 15 * ys**4 + 3 * w * ys**2
        controls = np.column_stack([np.full_like(ys, w), c2, c3])
        return BifurcationTrace(label, *_window_filter(ys, controls, window))

    if label is CatastropheLabel.D4plus:
        # degeneracy 36 y1 y2 = w^2 is a hyperbola; sweep one branch pair
        span = max(abs(v) for pair in window[1:] for v in pair) or 1.0
        s_max = math.sqrt(span)
        s_min = (w * w / 36.0) / s_max if w != 0 else 1e-6 * s_max
        sweep = np.geomspace(max(s_min, 1e-9), s_max, resolution // 2)
        pts = []
        states = []
        for sgn in (1.0, -1.0):
            for s in sweep:
                y1 = sgn * s
                y2 = (w * w / 36.0) / y1 if y1 != 0 else 0.0
                pts.append((w, 3 * y1**2 + w * y2, 3 * y2**2 + w * y1))
                states.append(y1)
        states = np.array(states)
        controls = np.array(pts)
        return BifurcationTrace(label, *_window_filter(states, controls, window))

    # D4minus: degeneracy circle y1^2 + y2^2 = (w/3)^2, swept by angle
    r0 = abs(w) / 3.0
    phis = np.linspace(0.0, 2 * math.pi, resolution, endpoint=False)
    y1 = r0 * np.cos(phis)
    y2 = r0 * np.sin(phis)
    c2 = 3 * y1**2 - 3 * y2**2 + 2 * w * y1
    c3 = -6 * y1 * y2 + 2 * w * y2
    controls = np.column_stack([np.full_like(phis, w), c2, c3])
    return BifurcationTrace(label, *_window_filter(phis, controls, window))


def count_cusps(points: np.ndarray, min_turn: float = math.pi / 2):
    """Indices of cusps on a closed sampled plane curve.

    A cusp is a group of consecutive vertices where the polyline
    tangent turns by more than ``min_turn``; each group contributes the
    vertex of sharpest turn.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 8:
        raise ValueError("need at least 8 samples to detect cusps")
    seg = np.roll(points, -1, axis=0) - points
    lengths = np.linalg.norm(seg, axis=1)
    if np.any(lengths == 0):
        keep = lengths > 0
        return count_cusps(points[keep], min_turn)
    tang = seg / lengths[:, None]
    dots = np.clip(np.einsum("ij,ij->i", tang, np.roll(tang, -1, axis=0)), -1.0, 1.0)
    turn = np.arccos(dots)  # turning angle at vertex i+1
    sharp = turn > min_turn
    cusps = []
    visited = np.zeros(n, dtype=bool)
    for i in range(n):
        if sharp[i] and not visited[i]:
            visited[i] = True
            group = [i]
            j = (i + 1) % n
            while sharp[j] and not visited[j] and j != i:
                visited[j] = True
                group.append(j)
                j = (j + 1) % n
            best = max(group, key=lambda k: turn[k])
            cusps.append((best + 1) % n)
    return cusps


@dataclass
class ClassificationReport:
    label: CatastropheLabel
    confidence: float
    energies: dict
    conflicts: list = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "label": self.label.name,
            "display_name": self.label.display_name,
            "confidence": self.confidence,
            "energies": {f"{n},{m}": frac for (n, m), frac in sorted(self.energies.items())},
            "conflicts": list(self.conflicts),
        }


_TABLE_CONFLICT = (
    "mode table maps spherical/coma to the cusp (A3) while the aberration "
    "correspondence theorem assigns spherical to A4 and coma to D4plus"
)
_ASTIG_CONFLICT = (
    "astigmatism is a cusp (A3) in the correspondence theorem but couples "
    "to the hyperbolic umbilic (D4plus) in the mode table"
)


def classify(
    spec: WavefrontSpec,
    dominant: float = 0.5,
    significant: float = 0.15,
) -> ClassificationReport:
    """Label the dominant caustic topology of a wavefront.

    Energies are squared coefficients per (n, m) mode, normalized to
    fractions; the decision is therefore invariant under uniform
    scaling of the spec.  Rotationally symmetric pupils (m = 0 only)
    can never receive a D-series label.
    """
    total = spec.total_energy()
    if total <= 0:
        raise NoAberrationError("wavefront has zero mode energy")
    fractions = {key: e / total for key, e in spec.mode_energies().items()}

    def frac(n, m):
        return fractions.get((n, m), 0.0)

    conflicts: list = []
    if frac(3, 3) >= dominant:
        return ClassificationReport(CatastropheLabel.D4minus, frac(3, 3), fractions, conflicts)
    if frac(2, 2) >= significant and frac(4, 4) >= significant:
        conflicts.append(_ASTIG_CONFLICT)
        return ClassificationReport(
            CatastropheLabel.D4plus, frac(2, 2) + frac(4, 4), fractions, conflicts
        )
    if frac(6, 0) >= significant and frac(4, 0) >= significant:
        conflicts.append(_TABLE_CONFLICT)
        return ClassificationReport(
            CatastropheLabel.A4, frac(6, 0) + frac(4, 0), fractions, conflicts
        )
    if frac(2, 0) >= dominant:
        return ClassificationReport(CatastropheLabel.A2, frac(2, 0), fractions, conflicts)
    if frac(4, 0) >= dominant or frac(3, 1) >= dominant:
        conflicts.append(_TABLE_CONFLICT)
        return ClassificationReport(
            CatastropheLabel.A3, max(frac(4, 0), frac(3, 1)), fractions, conflicts
        )
    if frac(2, 2) >= dominant:
        conflicts.append(_ASTIG_CONFLICT)
        return ClassificationReport(CatastropheLabel.A3, frac(2, 2), fractions, conflicts)

    # no single rule fires: fall back to the largest mode
    (n, m), top = max(fractions.items(), key=lambda kv: kv[1])
    if m == 0:
        label = CatastropheLabel.A2 if n <= 2 else (
            CatastropheLabel.A3 if n == 4 else CatastropheLabel.A4
        )
    elif m == 3:
        label = CatastropheLabel.D4minus
    elif m in (2, 4):
        label = CatastropheLabel.D4plus
        conflicts.append(_ASTIG_CONFLICT)
    else:
        label = CatastropheLabel.A3
        conflicts.append(_TABLE_CONFLICT)
    return ClassificationReport(label, top, fractions, conflicts)


_FINGERPRINT_MODES = ((2, 0), (2, 2), (3, 1), (3, 3))


def fingerprint(spec: WavefrontSpec) -> np.ndarray:
    """Energy fractions (M20, M22, M31, M33) of the marker modes.

    Cos and sin parts are folded together; the components sum to at
    most 1 (less when other modes carry energy).
    """
    total = spec.total_energy()
    if total <= 0:
        raise NoAberrationError("wavefront has zero mode energy")
    energies = spec.mode_energies()
    return np.array([energies.get(mode, 0.0) / total for mode in _FINGERPRINT_MODES])


def unfold_elliptic_umbilic(trefoil_scale: float, a: float, resolution: int = 4096) -> np.ndarray:
    """Cusp positions of the unfolded elliptic umbilic section.

    The potential s (y1^3 - 3 y1 y2^2) + a (y1^2 + y2^2) - b y1 - c y2
    has its degeneracy locus on the circle |y| = |a| / (3 |s|); swept
    into the (b, c) control plane it is a deltoid whose three cusps sit
    at mutual angles of 120 degrees and collapse to the origin as
    a -> 0.  Returns the (3, 2) cusp coordinates sorted by polar angle.
    """
    s = float(trefoil_scale)
    if s == 0:
        raise ValueError("trefoil scale must be nonzero")
    if a == 0:
        return np.zeros((3, 2))
    r0 = abs(a) / (3 * abs(s))
    phis = np.linspace(0.0, 2 * math.pi, resolution, endpoint=False)
    y1 = r0 * np.cos(phis)
    y2 = r0 * np.sin(phis)
    b = 3 * s * (y1**2 - y2**2) + 2 * a * y1
    c = -6 * s * y1 * y2 + 2 * a * y2
    curve = np.column_stack([b, c])
    cusp_idx = count_cusps(curve)
    if len(cusp_idx) != 3:
        raise TopologyChangeError(
            f"expected 3 cusps on the unfolded section, found {len(cusp_idx)}"
        )

    def speed(phi):
        db = -6 * s * r0 * r0 * math.sin(2 * phi) - 2 * a * r0 * math.sin(phi)
        dc = -6 * s * r0 * r0 * math.cos(2 * phi) + 2 * a * r0 * math.cos(phi)
        return math.hypot(db, dc)

    cusps = []
    dphi = phis[1] - phis[0]
    for idx in cusp_idx:
        phi0 = phis[idx]
        opt = minimize_scalar(
            speed, bounds=(phi0 - 2 * dphi, phi0 + 2 * dphi), method="bounded",
            options={"xatol": 1e-12},
        )
        phi = float(opt.x)
        yy1 = r0 * math.cos(phi)
        yy2 = r0 * math.sin(phi)
        cusps.append(
            (
                3 * s * (yy1**2 - yy2**2) + 2 * a * yy1,
                -6 * s * yy1 * yy2 + 2 * a * yy2,
            )
        )
    cusps = np.array(cusps)
    order = np.argsort(np.arctan2(cusps[:, 1], cusps[:, 0]))
    return cusps[order]
