"""System, barrier, and Lyapunov descriptions with box-input closed forms.

The central quantity is the worst-case boundary derivative

    sup over tolerable attack inputs of
        inf over secure inputs of  dB/dt along the dynamics,

evaluated pointwise.  For control-affine dynamics and box input sets
both the inner infimum and the outer supremum of a linear functional
have exact per-component closed forms, which is what makes the
certificate checks cheap enough to run on thousands of boundary points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import sample_sphere_uniform

__all__ = [
    "EvaluationError",
    "BoxSet",
    "ControlAffineSystem",
    "BarrierSpec",
    "LyapunovSpec",
    "lie_derivatives",
    "inf_H",
    "sup_H",
    "boundary_sup_terms",
    "estimate_l_H",
    "compute_c_M",
]


class EvaluationError(RuntimeError):
    """Non-finite value encountered while evaluating system functions."""

    def __init__(self, message: str, x=None):
        super().__init__(message if x is None else f"{message} at x={x}")
        self.x = None if x is None else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box {u : lower <= u <= upper}, possibly empty.

    A zero-dimensional box is the (non-empty) trivial input set of a
    system without that input channel.  Eroding past the point where the
    bounds cross makes the box empty, which is detectable and is how the
    certificate search signals exhaustion of a channel.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError(f"bound shapes differ: {lower.shape} vs {upper.shape}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, bounds) -> "BoxSet":
        bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
        return cls(-bounds, bounds)

    @classmethod
    def empty(cls, k: int) -> "BoxSet":
        return cls(np.ones(k), -np.ones(k))

    @property
    def k(self) -> int:
        return self.lower.shape[0]

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def erode(self, eps: float) -> "BoxSet":
        """Shrink every bound inward by eps (exact box erosion)."""
        if eps < 0:
            raise ValueError(f"erosion margin must be >= 0, got {eps}")
        return BoxSet(self.lower + eps, self.upper - eps)

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def clip(self, u) -> np.ndarray:
        """Componentwise projection onto the box."""
        if self.is_empty:
            raise ValueError("cannot clip to an empty box")
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lower, self.upper)

    def vertices(self) -> np.ndarray:
        """All 2^k corner points (k = 0 gives the single empty tuple)."""
        if self.is_empty:
            raise ValueError("empty box has no vertices")
        if self.k == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*[(lo, up) for lo, up in zip(self.lower, self.upper)],
                            indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class ControlAffineSystem:
    """dx/dt = f(x) + g_v(x) u_v + g_s(x) u_s + d(t, x).

    ``u_v`` collects the input channels an attacker may override (bounded
    by ``U_v``); ``u_s`` the channels the controller keeps.  ``delta``
    bounds the Euclidean norm of the unmodeled disturbance ``d``.
    """

    n: int
    m_v: int
    m_s: int
    f: Callable[[np.ndarray], np.ndarray]
    g_v: Callable[[np.ndarray], np.ndarray]
    g_s: Callable[[np.ndarray], np.ndarray]
    U_v: BoxSet
    U_s: BoxSet
    delta: float = 0.0

    def __post_init__(self):
        if self.U_v.k != self.m_v or self.U_s.k != self.m_s:
            raise ValueError(
                f"input box sizes ({self.U_v.k}, {self.U_s.k}) do not match "
                f"channel split (m_v={self.m_v}, m_s={self.m_s})")
        if self.delta < 0:
            raise ValueError(f"disturbance bound must be >= 0, got {self.delta}")

    @property
    def m(self) -> int:
        return self.m_v + self.m_s

    def drift(self, x: np.ndarray) -> np.ndarray:
        fx = np.asarray(self.f(x), dtype=float).reshape(self.n)
        if not np.all(np.isfinite(fx)):
            raise EvaluationError("drift evaluation is not finite", x)
        return fx

    def gains(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gv = np.asarray(self.g_v(x), dtype=float).reshape(self.n, self.m_v)
        gs = np.asarray(self.g_s(x), dtype=float).reshape(self.n, self.m_s)
        if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(gs))):
            raise EvaluationError("input-gain evaluation is not finite", x)
        return gv, gs

    def rhs(self, x: np.ndarray, u_v: np.ndarray, u_s: np.ndarray) -> np.ndarray:
        gv, gs = self.gains(x)
        return self.drift(x) + gv @ np.atleast_1d(u_v) + gs @ np.atleast_1d(u_s)


@dataclass(frozen=True)
class BarrierSpec:
    """Scalar field B with safe set {B <= 0} and spherical zero level set.

    The canonical instance is the quadratic barrier |x - x_o|^2 - R^2,
    for which the sublevel boundary {B = -c} is the sphere of radius
    sqrt(R^2 - c) and the Lipschitz constant on the safe set is exactly
    2R.  Custom fields are accepted as long as the zero level set is the
    sphere of ``radius`` about ``center`` and ``boundary_radius`` maps a
    sublevel offset to the corresponding boundary sphere radius.
    """

    B: Callable[[np.ndarray], float]
    grad_B: Callable[[np.ndarray], np.ndarray]
    center: np.ndarray
    radius: float
    l_B: float
    boundary_radius: Callable[[float], float]
    quadratic: bool = False

    @classmethod
    def sphere(cls, center, radius: float, l_B: float | None = None) -> "BarrierSpec":
        """Canonical quadratic barrier |x - center|^2 - radius^2."""
        center = np.asarray(center, dtype=float)
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        r2 = float(radius) ** 2

        def B(x):
            dx = np.asarray(x, dtype=float) - center
            return float(dx @ dx - r2)

        def grad_B(x):
            return 2.0 * (np.asarray(x, dtype=float) - center)

        def boundary_radius(c):
            if c < -1e-12 or c > r2 + 1e-12:
                raise ValueError(f"sublevel offset must lie in [0, {r2}], got {c}")
            return float(np.sqrt(max(0.0, r2 - c)))

        return cls(B=B, grad_B=grad_B, center=center, radius=float(radius),
                   l_B=float(l_B) if l_B is not None else 2.0 * float(radius),
                   boundary_radius=boundary_radius, quadratic=True)

    def gradient(self, x) -> np.ndarray:
        g = np.asarray(self.grad_B(x), dtype=float).reshape(-1)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("barrier gradient is not finite", x)
        return g


@dataclass(frozen=True)
class LyapunovSpec:
    """Positive definite V with gradient and a Lipschitz constant on S."""

    V: Callable[[np.ndarray], float]
    grad_V: Callable[[np.ndarray], np.ndarray]
    l_V: float
    P: np.ndarray | None = None

    @classmethod
    def quadratic(cls, P, domain_radius: float, l_V: float | None = None) -> "LyapunovSpec":
        """V(x) = x^T P x with P symmetric positive definite.

        ``domain_radius`` is the largest |x| over the safe set (center
        offset plus sphere radius); |grad V| <= 2 lambda_max(P) |x| gives
        the exact Lipschitz constant on that set.
        """
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        if not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        eigs = np.linalg.eigvalsh(P)
        if eigs[0] <= 0:
            raise ValueError(f"P must be positive definite (min eigenvalue {eigs[0]:g})")

        def V(x):
            x = np.asarray(x, dtype=float)
            return float(x @ P @ x)

        def grad_V(x):
            return 2.0 * (P @ np.asarray(x, dtype=float))

        if l_V is None:
            l_V = 2.0 * float(eigs[-1]) * float(domain_radius)
        return cls(V=V, grad_V=grad_V, l_V=float(l_V), P=P)

    def gradient(self, x) -> np.ndarray:
        g = np.asarray(self.grad_V(x), dtype=float).reshape(-1)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("Lyapunov gradient is not finite", x)
        return g


def lie_derivatives(sys: ControlAffineSystem, spec, x) -> tuple[float, np.ndarray, np.ndarray]:
    """Directional derivatives of a scalar field along f, g_v, g_s.

    ``spec`` is any object with a ``gradient(x)`` method (barrier or
    Lyapunov description).  Returns (L_f, L_gv row, L_gs row).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise EvaluationError("state is not finite", x)
    grad = spec.gradient(x)
    gv, gs = sys.gains(x)
    return float(grad @ sys.drift(x)), grad @ gv, grad @ gs


def _box_min(coeff: np.ndarray, box: BoxSet) -> float:
    """min over the box of <coeff, u> (exact, componentwise)."""
    return float(np.sum(np.minimum(coeff * box.lower, coeff * box.upper)))


def _box_max(coeff: np.ndarray, box: BoxSet) -> float:
    return float(np.sum(np.maximum(coeff * box.lower, coeff * box.upper)))


def inf_H(sys: ControlAffineSystem, bar: BarrierSpec, x, u_v) -> float:
    """Best-case barrier derivative: secure input minimizes dB/dt.

    inf over u_s in U_s of  L_f B + L_gs B u_s + L_gv B u_v, evaluated by
    the exact box minimization of the linear secure-input term.
    """
    if sys.U_s.is_empty:
        raise ValueError("secure input box is empty")
    l_f, l_gv, l_gs = lie_derivatives(sys, bar, x)
    u_v = np.atleast_1d(np.asarray(u_v, dtype=float))
    if u_v.shape != (sys.m_v,):
        raise ValueError(f"u_v must have shape ({sys.m_v},), got {u_v.shape}")
    return l_f + _box_min(l_gs, sys.U_s) + float(l_gv @ u_v)


def sup_H(sys: ControlAffineSystem, bar: BarrierSpec, x, uv_box: BoxSet) -> float:
    """Worst tolerated attack against the best secure response.

    sup over u_v in the tolerable box of ``inf_H``; equals the maximum of
    ``inf_H`` over the box vertices and is evaluated in closed form.
    """
    if uv_box.is_empty:
        raise ValueError("tolerable attack box is empty")
    if uv_box.k != sys.m_v:
        raise ValueError(f"attack box has {uv_box.k} components, expected {sys.m_v}")
    if sys.U_s.is_empty:
        raise ValueError("secure input box is empty")
    l_f, l_gv, l_gs = lie_derivatives(sys, bar, x)
    return l_f + _box_min(l_gs, sys.U_s) + _box_max(l_gv, uv_box)


def boundary_sup_terms(sys: ControlAffineSystem, bar: BarrierSpec,
                       points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-point decomposition of sup_H over a batch of states.

    Returns ``(base, attack_gain)`` with ``base[i]`` the attack-independent
    part (drift term plus minimized secure term) and ``attack_gain[i]``
    the row vector multiplying the attack input, so that for any box
    ``sup_H(points[i], box) = base[i] + box_max(attack_gain[i], box)``.
    The search loop reuses these across many candidate boxes.
    """
    points = np.asarray(points, dtype=float)
    base = np.empty(points.shape[0])
    gain = np.empty((points.shape[0], sys.m_v))
    for i, x in enumerate(points):
        l_f, l_gv, l_gs = lie_derivatives(sys, bar, x)
        base[i] = l_f + _box_min(l_gs, sys.U_s)
        gain[i] = l_gv
    return base, gain


def box_max_batch(gain: np.ndarray, box: BoxSet) -> np.ndarray:
    """Vectorized max over a box of <gain[i], u> for every row i."""
    return np.sum(np.maximum(gain * box.lower, gain * box.upper), axis=1)


def estimate_l_H(sys: ControlAffineSystem, bar: BarrierSpec, uv_box: BoxSet,
                 c: float = 0.0, mesh_density: int = 256, seed: int = 0) -> float:
    """Sampled Lipschitz estimate of x -> sup_H(x, uv_box) near the boundary.

    Central finite differences (step 1e-5 * boundary radius) at seeded
    uniform boundary samples; returns 1.2 times the largest observed
    gradient norm, floored at 1e-12.  Deterministic for a fixed seed.
    """
    r_c = bar.boundary_radius(c)
    if not r_c > 0:
        raise ValueError(f"boundary of the sublevel set at c={c} is degenerate")
    pts = sample_sphere_uniform(sys.n, mesh_density, bar.center, r_c, seed)
    h = 1e-5 * r_c
    worst = 0.0
    ident = np.eye(sys.n)
    for x in pts:
        grad = np.empty(sys.n)
        for j in range(sys.n):
            fp = sup_H(sys, bar, x + h * ident[j], uv_box)
            fm = sup_H(sys, bar, x - h * ident[j], uv_box)
            grad[j] = (fp - fm) / (2.0 * h)
        if not np.all(np.isfinite(grad)):
            raise EvaluationError("finite-difference gradient is not finite", x)
        worst = max(worst, float(np.linalg.norm(grad)))
    return max(1.2 * worst, 1e-12)


def compute_c_M(bar: BarrierSpec, sample_count: int = 4096, seed: int = 0,
                return_method: bool = False):
    """Largest sublevel offset c for which {B <= -c} is non-empty.

    Equals -min of B over the safe set.  Exact (-B at the center, i.e.
    radius squared) for the canonical quadratic barrier; otherwise
    estimated by seeded sampling of the safe ball followed by local
    descent from the best sample.
    """
    if bar.quadratic:
        value, method = float(bar.radius) ** 2, "exact-quadratic"
    else:
        from scipy.optimize import minimize

        rng = np.random.default_rng(seed)
        n = bar.center.shape[0]
        dirs = rng.standard_normal((sample_count, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = bar.radius * rng.random(sample_count) ** (1.0 / n)
        samples = bar.center + dirs * radii[:, None]
        values = np.array([bar.B(x) for x in samples])
        best = samples[int(np.argmin(values))]
        res = minimize(lambda x: bar.B(x), best, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12})
        value, method = -float(min(res.fun, values.min())), "sampled-descent"
    if return_method:
        return value, method
    return value
