"""Pointwise safe-feedback synthesis via a small quadratic program.

At each state the controller solves

    min  0.5 |z|^2 + q * zeta      over z = (v_s, v_v, eta, zeta)

subject to input box bounds, a barrier-derivative row that the secure
input must satisfy against the worst tolerable attack, and a soft
convergence row on a Lyapunov function.  ``eta >= 0`` can only relax the
barrier row in the interior (its coefficient B + c vanishes on the
boundary), while ``zeta`` trades convergence rate against effort.

The programs have at most m+2 variables, so they are solved exactly by
a dense dual active-set iteration: start at the unconstrained minimizer,
repeatedly add the most violated constraint, and drop working-set rows
whose multipliers would go negative.  Infeasibility is certified when a
violated row lies in the span of the working set with no droppable row.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .plant import BarrierSpec, BoxSet, ControlAffineSystem, LyapunovSpec, \
    lie_derivatives, _box_max

__all__ = [
    "QPSpec",
    "QPSolution",
    "QPInfeasibleError",
    "ControlContext",
    "FeedbackResult",
    "build_qp",
    "solve_qp",
    "feedback",
    "check_strict_complementarity",
    "StrictComplementarityReport",
]

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"

# Interior states closer to the boundary than this are treated as boundary
# states: the barrier row coefficient is clamped to zero instead of letting
# numerical drift flip its sign.
_BOUNDARY_BAND = 1e-9


class QPInfeasibleError(RuntimeError):
    """No feasible point; carries the state at which synthesis failed."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        super().__init__(
            f"QP infeasible at x={self.x}; the certificate and the constants "
            "it was computed with are inconsistent at this state")


@dataclass(frozen=True)
class QPSpec:
    """min 0.5 |z|^2 + lin . z  s.t.  rows[i] . z <= rhs[i].

    The Hessian is the identity (implicit).  ``labels`` tags each row as
    one of input_s / input_v / eta_sign / cbf / clf; there is exactly one
    cbf and one clf row.
    """

    dim: int
    m_v: int
    m_s: int
    lin: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)) or not np.all(np.isfinite(self.rhs)):
            raise ValueError("constraint rows must be finite")
        if len(self.labels) != self.rhs.shape[0]:
            raise ValueError("one label per constraint row required")
        # control-law specs carry exactly one barrier and one convergence row;
        # bare solver-level specs may omit both
        if "cbf" in self.labels or "clf" in self.labels:
            if self.labels.count("cbf") != 1 or self.labels.count("clf") != 1:
                raise ValueError("spec must contain exactly one cbf and one clf row")


@dataclass(frozen=True)
class QPSolution:
    """Solver output with the quantities needed for KKT auditing.

    For an Optimal solution: constraints hold to 1e-8, the stationarity
    residual |z + lin + rows^T lam| is at most 1e-8, and every
    |lam_i * slack_i| is at most 1e-8.  ``slacks`` is rhs - rows @ z.
    """

    status: str
    z: np.ndarray | None
    lam: np.ndarray | None
    objective: float
    kkt_residual: float
    slacks: np.ndarray | None
    labels: tuple[str, ...]


def build_qp(x, sys: ControlAffineSystem, bar: BarrierSpec, lyap: LyapunovSpec,
             c: float, uv_box: BoxSet, q: float) -> QPSpec:
    """Assemble the per-state program for z = (v_s, v_v, eta, zeta)."""
    if uv_box.is_empty:
        raise ValueError("tolerable attack box is empty")
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    x = np.asarray(x, dtype=float)
    m_v, m_s = sys.m_v, sys.m_s
    dim = m_s + m_v + 2
    i_eta, i_zeta = m_s + m_v, m_s + m_v + 1

    rows, rhs, labels = [], [], []

    def bound_rows(box, offset, label):
        for j in range(box.k):
            up = np.zeros(dim)
            up[offset + j] = 1.0
            rows.append(up)
            rhs.append(box.upper[j])
            labels.append(label)
            lo = np.zeros(dim)
            lo[offset + j] = -1.0
            rows.append(lo)
            rhs.append(-box.lower[j])
            labels.append(label)

    bound_rows(sys.U_s, 0, "input_s")
    bound_rows(uv_box, m_s, "input_v")

    eta_row = np.zeros(dim)
    eta_row[i_eta] = -1.0
    rows.append(eta_row)
    rhs.append(0.0)
    labels.append("eta_sign")

    # one dynamics evaluation serves both Lie-derivative sets
    fx = sys.drift(x)
    gv, gs = sys.gains(x)
    grad_b = bar.gradient(x)
    l_fb, l_gvb, l_gsb = float(grad_b @ fx), grad_b @ gv, grad_b @ gs
    sup_term = _box_max(l_gvb, uv_box)
    b_plus_c = bar.B(x) + c
    if 0.0 < b_plus_c <= _BOUNDARY_BAND:
        b_plus_c = 0.0
    cbf = np.zeros(dim)
    cbf[:m_s] = l_gsb
    cbf[i_eta] = b_plus_c
    rows.append(cbf)
    rhs.append(-l_fb - sup_term - bar.l_B * sys.delta)
    labels.append("cbf")

    grad_v = lyap.gradient(x)
    l_fv, l_gvv, l_gsv = float(grad_v @ fx), grad_v @ gv, grad_v @ gs
    clf = np.zeros(dim)
    clf[:m_s] = l_gsv
    clf[m_s:m_s + m_v] = l_gvv
    clf[i_zeta] = lyap.V(x)
    rows.append(clf)
    rhs.append(-l_fv - lyap.l_V * sys.delta)
    labels.append("clf")

    lin = np.zeros(dim)
    lin[i_zeta] = q
    return QPSpec(dim=dim, m_v=m_v, m_s=m_s, lin=lin,
                  rows=np.array(rows), rhs=np.array(rhs, dtype=float),
                  labels=tuple(labels))


def solve_qp(spec: QPSpec, feas_tol: float = 1e-10) -> QPSolution:
    """Dense dual active-set solve of a strictly convex box-row QP.

    Starts from the unconstrained minimizer z = -lin.  Each outer pass
    picks the most violated row and walks toward it along the projection
    of its normal onto the working-set null space; rows whose multipliers
    would cross zero are dropped on the way.  Finitely many working sets
    and a strictly increasing objective guarantee termination.
    """
    lin, A, b = spec.lin, spec.rows, spec.rhs
    n_rows = A.shape[0]
    z = -lin.astype(float).copy()
    work: list[int] = []
    lam_w: list[float] = []

    max_outer = 8 * (n_rows + 1) * (spec.dim + 2)
    for _ in range(max_outer):
        if n_rows == 0:
            break
        violations = A @ z - b
        p = int(np.argmax(violations))
        if violations[p] <= feas_tol:
            break
        a_p = A[p]
        lam_p = 0.0
        while True:
            if work:
                M = A[work]
                gram = M @ M.T
                r = np.linalg.solve(gram, M @ a_p)
                d = M.T @ r - a_p
            else:
                r = np.zeros(0)
                d = -a_p
            kappa = float(a_p @ d)
            s = float(a_p @ z - b[p])
            kappa_tol = 1e-12 * max(1.0, float(a_p @ a_p))

            t_full = s / -kappa if kappa < -kappa_tol else np.inf
            t_dual, k_drop = np.inf, -1
            for idx, (lk, rk) in enumerate(zip(lam_w, r)):
                if rk > 1e-12:
                    ratio = lk / rk
                    if ratio < t_dual:
                        t_dual, k_drop = ratio, idx
            if not np.isfinite(t_full) and not np.isfinite(t_dual):
                # a_p is spanned by the working set with non-positive
                # combination weights: Farkas certificate of infeasibility.
                return QPSolution(status=INFEASIBLE, z=None, lam=None,
                                  objective=np.nan, kkt_residual=np.nan,
                                  slacks=None, labels=spec.labels)
            t = min(t_full, t_dual)
            z = z + t * d
            lam_p += t
            lam_arr = np.array(lam_w) - t * r if work else np.zeros(0)
            if t_dual < t_full and t == t_dual:
                del work[k_drop]
                lam_w = [float(v) for i, v in enumerate(lam_arr) if i != k_drop]
                continue
            lam_w = [float(v) for v in lam_arr]
            work.append(p)
            lam_w.append(float(lam_p))
            break
    else:
        raise RuntimeError("active-set iteration failed to terminate")

    lam = np.zeros(n_rows)
    for idx, l in zip(work, lam_w):
        lam[idx] = max(l, 0.0)
    slacks = b - A @ z if n_rows else np.zeros(0)
    stationarity = float(np.linalg.norm(z + lin + (A.T @ lam if n_rows else 0.0)))
    feas = float(max(0.0, -np.min(slacks))) if n_rows else 0.0
    comp = float(np.max(np.abs(lam * slacks))) if n_rows else 0.0
    objective = 0.5 * float(z @ z) + float(lin @ z)
    return QPSolution(status=OPTIMAL, z=z, lam=lam, objective=objective,
                      kkt_residual=max(stationarity, feas, comp),
                      slacks=slacks, labels=spec.labels)


@dataclass(frozen=True)
class ControlContext:
    """Everything the feedback law needs besides the current state."""

    sys: ControlAffineSystem
    bar: BarrierSpec
    lyap: LyapunovSpec
    c: float
    uv_tilde: BoxSet
    q: float


@dataclass(frozen=True)
class FeedbackResult:
    u_s: np.ndarray
    v_v_nominal: np.ndarray
    eta: float
    zeta: float
    kkt_residual: float
    solution: QPSolution


def feedback(x, ctx: ControlContext) -> FeedbackResult:
    """Solve the per-state program and split out the applied inputs.

    ``u_s`` is the secure input to apply; ``v_v_nominal`` the vulnerable
    input the controller would apply absent an attack.  States slightly
    outside the certified sublevel set produce a warning rather than an
    error; an infeasible program raises :class:`QPInfeasibleError` with
    the offending state.
    """
    x = np.asarray(x, dtype=float)
    b_plus_c = ctx.bar.B(x) + ctx.c
    if b_plus_c > _BOUNDARY_BAND:
        # static message so repeated closed-loop excursions dedup to one warning
        warnings.warn(
            "state is outside the certified sublevel set; the feasibility "
            "guarantee does not apply", stacklevel=2)
    spec = build_qp(x, ctx.sys, ctx.bar, ctx.lyap, ctx.c, ctx.uv_tilde, ctx.q)
    sol = solve_qp(spec)
    if sol.status != OPTIMAL:
        raise QPInfeasibleError(x)
    m_s, m_v = ctx.sys.m_s, ctx.sys.m_v
    return FeedbackResult(
        u_s=sol.z[:m_s].copy(), v_v_nominal=sol.z[m_s:m_s + m_v].copy(),
        eta=float(sol.z[m_s + m_v]), zeta=float(sol.z[m_s + m_v + 1]),
        kkt_residual=sol.kkt_residual, solution=sol)


@dataclass(frozen=True)
class RowCheck:
    index: int
    label: str
    multiplier: float
    slack: float
    strict: bool


@dataclass(frozen=True)
class StrictComplementarityReport:
    passed: bool
    rows: tuple[RowCheck, ...]


def check_strict_complementarity(sol: QPSolution, tol: float = 1e-8) -> StrictComplementarityReport:
    """Row-by-row strict complementarity audit of an optimal solution.

    A row passes when exactly one of {multiplier > tol, slack > tol}
    holds; weakly active rows (both at zero) fail.  Diagnostic only: the
    feedback law is applied regardless, this merely flags states where
    its continuity argument does not hold.
    """
    if sol.status != OPTIMAL:
        raise ValueError(f"strict complementarity is defined for Optimal solutions, got {sol.status}")
    rows = []
    for i, (l, s, label) in enumerate(zip(sol.lam, sol.slacks, sol.labels)):
        rows.append(RowCheck(index=i, label=label, multiplier=float(l),
                             slack=float(s), strict=(l > tol) != (s > tol)))
    return StrictComplementarityReport(passed=all(r.strict for r in rows),
                                       rows=tuple(rows))
