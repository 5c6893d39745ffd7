"""Closed-loop simulation under attack signals and bounded disturbances.

Integrates dx/dt = f + g_v u_v + g_s u_s + d with a classical
fixed-step 4th-order scheme.  Inputs are recomputed once per step and
held (zero-order hold): the secure input comes from the per-state QP,
the vulnerable input is the QP's nominal value until the attack time and
the attacker's signal, clamped to its physical box, afterwards.  The
disturbance is evaluated at the integrator stage times so its norm bound
holds at every evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .jsonio import dumps_stable, format_float
from .plant import BarrierSpec, BoxSet, ControlAffineSystem, EvaluationError, LyapunovSpec
from .qpcontrol import ControlContext, FeedbackResult, QPInfeasibleError, feedback
from .viability import CERTIFIED, ViabilityResult

__all__ = [
    "AttackSignal",
    "DisturbanceModel",
    "Trajectory",
    "SafetyReport",
    "Scenario",
    "ScenarioOutcome",
    "simulate",
    "monitor",
    "run_scenarios",
    "standard_attack_suite",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class AttackSignal:
    """Attacker's override of the vulnerable channels, clamped to a box.

    ``clamp_box`` models the physical actuator range the attacker cannot
    exceed; every emitted value lies inside it.
    """

    kind: str
    clamp_box: BoxSet
    level: np.ndarray | None = None
    amplitude: np.ndarray | None = None
    period: float = 1.0
    omega: float = 2.0 * np.pi
    phase: float = 0.0
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    @classmethod
    def none(cls, clamp_box: BoxSet) -> "AttackSignal":
        return cls(kind="none", clamp_box=clamp_box)

    @classmethod
    def constant(cls, level, clamp_box: BoxSet) -> "AttackSignal":
        return cls(kind="constant", clamp_box=clamp_box,
                   level=np.broadcast_to(np.asarray(level, dtype=float),
                                         (clamp_box.k,)).copy())

    @classmethod
    def square(cls, amplitude, period: float, clamp_box: BoxSet,
               phase: float = 0.0) -> "AttackSignal":
        if period <= 0:
            raise ValueError(f"period must be positive, got {period}")
        return cls(kind="square", clamp_box=clamp_box, period=float(period),
                   phase=float(phase),
                   amplitude=np.broadcast_to(np.asarray(amplitude, dtype=float),
                                             (clamp_box.k,)).copy())

    @classmethod
    def sine(cls, amplitude, omega: float, clamp_box: BoxSet,
             phase: float = 0.0) -> "AttackSignal":
        return cls(kind="sine", clamp_box=clamp_box, omega=float(omega),
                   phase=float(phase),
                   amplitude=np.broadcast_to(np.asarray(amplitude, dtype=float),
                                             (clamp_box.k,)).copy())

    @classmethod
    def table(cls, times, values, clamp_box: BoxSet) -> "AttackSignal":
        """Zero-order hold through (time, value) pairs; zero before the first."""
        times = np.asarray(times, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if times.ndim != 1 or values.shape[0] != times.shape[0]:
            raise ValueError("times and values must have matching leading length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing")
        return cls(kind="table", clamp_box=clamp_box, times=times, values=values)

    def value(self, t: float) -> np.ndarray:
        k = self.clamp_box.k
        if self.kind == "none":
            raw = np.zeros(k)
        elif self.kind == "constant":
            raw = self.level
        elif self.kind == "square":
            up = ((t + self.phase) % self.period) < 0.5 * self.period
            raw = self.amplitude if up else -self.amplitude
        elif self.kind == "sine":
            raw = self.amplitude * np.sin(self.omega * t + self.phase)
        elif self.kind == "table":
            idx = int(np.searchsorted(self.times, t, side="right")) - 1
            raw = self.values[idx] if idx >= 0 else np.zeros(k)
        else:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        return self.clamp_box.clip(raw)


@dataclass(frozen=True)
class DisturbanceModel:
    """Unmodeled-dynamics injection with |d(t)| equal to delta or zero."""

    kind: str
    n: int
    delta: float
    direction: np.ndarray | None = None
    dwell: float = 0.1
    omega: float = 2.0 * np.pi
    seed: int = 0

    @classmethod
    def zero(cls, n: int) -> "DisturbanceModel":
        return cls(kind="zero", n=n, delta=0.0)

    @classmethod
    def constant_direction(cls, direction, delta: float) -> "DisturbanceModel":
        direction = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(direction)
        if norm <= 0:
            raise ValueError("direction must be a nonzero vector")
        return cls(kind="constant_direction", n=direction.shape[0],
                   delta=float(delta), direction=direction / norm)

    @classmethod
    def rotating(cls, n: int, delta: float, dwell: float, seed: int = 0) -> "DisturbanceModel":
        """Piecewise-constant seeded unit directions, redrawn every dwell."""
        if dwell <= 0:
            raise ValueError(f"dwell time must be positive, got {dwell}")
        if seed < 0:
            raise ValueError(f"seed must be >= 0, got {seed}")
        return cls(kind="rotating", n=n, delta=float(delta), dwell=float(dwell),
                   seed=int(seed))

    @classmethod
    def sine_direction(cls, n: int, delta: float, omega: float = 2.0 * np.pi) -> "DisturbanceModel":
        return cls(kind="sine_direction", n=n, delta=float(delta), omega=float(omega))

    def value(self, t: float) -> np.ndarray:
        if self.kind == "zero" or self.delta == 0.0:
            return np.zeros(self.n)
        if self.kind == "constant_direction":
            return self.delta * self.direction
        if self.kind == "rotating":
            # One generator per dwell interval keeps evaluation
            # order-independent (the integrator visits interleaved times).
            interval = max(int(np.floor(t / self.dwell)), 0)
            return self.delta * _rotating_direction(self.seed, self.n, interval)
        if self.kind == "sine_direction":
            if self.n == 1:
                return np.array([self.delta * np.sign(np.sin(self.omega * t))])
            d = np.zeros(self.n)
            d[0] = np.cos(self.omega * t)
            d[1] = np.sin(self.omega * t)
            return self.delta * d
        raise ValueError(f"unknown disturbance kind {self.kind!r}")


@lru_cache(maxsize=16384)
def _rotating_direction(seed: int, n: int, interval: int) -> np.ndarray:
    rng = np.random.default_rng((seed, interval))
    d = rng.standard_normal(n)
    norm = np.linalg.norm(d)
    while norm <= 1e-12:
        d = rng.standard_normal(n)
        norm = np.linalg.norm(d)
    d = d / norm
    d.setflags(write=False)
    return d


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed closed-loop record on a uniform grid.

    Row k holds the state at t_k together with the inputs applied over
    [t_k, t_k + h) and the QP diagnostics computed at t_k; the final row
    of a completed run carries the would-be-next inputs.  A truncated run
    ends at the last successfully controlled step and carries the error.
    """

    t: np.ndarray
    states: np.ndarray
    u_s: np.ndarray
    u_v: np.ndarray
    barrier: np.ndarray
    lyapunov: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    kkt_residual: np.ndarray
    attack_active: np.ndarray
    truncated: bool = False
    error: str | None = None

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class SafetyReport:
    max_B: float
    first_violation_time: float | None
    min_distance_to_boundary: float


def _rk4_step(sys: ControlAffineSystem, x: np.ndarray, t: float, h: float,
              u_v: np.ndarray, u_s: np.ndarray, dist: DisturbanceModel) -> np.ndarray:
    def rhs(xx, tt):
        return sys.rhs(xx, u_v, u_s) + dist.value(tt)

    k1 = rhs(x, t)
    k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = rhs(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(sys: ControlAffineSystem, bar: BarrierSpec, lyap: LyapunovSpec,
             result: ViabilityResult, x0, attack: AttackSignal, tau: float,
             dist: DisturbanceModel, T: float, h: float,
             q: float = 1.0) -> Trajectory:
    """Run the closed loop from x0 for horizon T with step h.

    The initial state must lie in the interior of the certified sublevel
    set.  QP infeasibility mid-run truncates the trajectory with an error
    record; a non-finite state aborts with :class:`EvaluationError`.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if T < h:
        raise ValueError(f"horizon ({T}) must be at least one step ({h})")
    if tau < 0:
        raise ValueError(f"attack time must be >= 0, got {tau}")
    x0 = np.asarray(x0, dtype=float)
    if bar.B(x0) + result.c >= 0:
        raise ValueError(
            f"x0 must lie in the interior of the certified sublevel set "
            f"(B(x0) + c = {bar.B(x0) + result.c:.3e})")

    ctx = ControlContext(sys=sys, bar=bar, lyap=lyap, c=result.c,
                         uv_tilde=result.uv_tilde, q=q)
    steps = int(round(T / h))
    rows = steps + 1
    t = np.arange(rows) * h
    states = np.empty((rows, sys.n))
    u_s = np.empty((rows, sys.m_s))
    u_v = np.empty((rows, sys.m_v))
    barrier = np.empty(rows)
    lyapunov = np.empty(rows)
    eta = np.empty(rows)
    zeta = np.empty(rows)
    kkt = np.empty(rows)
    active = np.empty(rows, dtype=bool)

    x = x0.copy()
    truncated, error = False, None
    recorded = 0
    for k in range(rows):
        t_k = t[k]
        try:
            fb = feedback(x, ctx)
        except QPInfeasibleError as exc:
            truncated = True
            error = f"control synthesis failed at t={t_k:.6g}: {exc}"
            break
        is_active = bool(t_k >= tau)
        uv_k = attack.value(float(t_k)) if is_active else fb.v_v_nominal
        states[k] = x
        u_s[k] = fb.u_s
        u_v[k] = uv_k
        barrier[k] = bar.B(x)
        lyapunov[k] = lyap.V(x)
        eta[k] = fb.eta
        zeta[k] = fb.zeta
        kkt[k] = fb.kkt_residual
        active[k] = is_active
        recorded = k + 1
        if k < steps:
            x = _rk4_step(sys, x, float(t_k), h, uv_k, fb.u_s, dist)
            if not np.all(np.isfinite(x)):
                raise EvaluationError("state became non-finite during integration", x)

    sl = slice(0, recorded)
    return Trajectory(t=t[sl].copy(), states=states[sl].copy(), u_s=u_s[sl].copy(),
                      u_v=u_v[sl].copy(), barrier=barrier[sl].copy(),
                      lyapunov=lyapunov[sl].copy(), eta=eta[sl].copy(),
                      zeta=zeta[sl].copy(), kkt_residual=kkt[sl].copy(),
                      attack_active=active[sl].copy(), truncated=truncated,
                      error=error)


def monitor(traj: Trajectory, bar: BarrierSpec) -> SafetyReport:
    """Safety summary: worst barrier value and when it first went positive."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    max_b = float(np.max(traj.barrier))
    violations = np.flatnonzero(traj.barrier > 0.0)
    first = float(traj.t[violations[0]]) if violations.size else None
    dist = bar.radius - np.linalg.norm(traj.states - bar.center, axis=1)
    return SafetyReport(max_B=max_b, first_violation_time=first,
                        min_distance_to_boundary=float(np.min(dist)))


@dataclass(frozen=True)
class Scenario:
    """A named attack run; tau=None uses the suite-wide attack time."""

    name: str
    attack: AttackSignal
    tau: float | None = None
    guaranteed: bool = True   # False for oversized-clamp demonstrations


# Barrier excursions below this are attributed to time discretization at
# the default step size and do not count as safety violations.
SAFETY_TOL = 1e-3


@dataclass(frozen=True)
class ScenarioOutcome:
    name: str
    trajectory: Trajectory
    report: SafetyReport
    guaranteed: bool

    @property
    def safe(self) -> bool:
        return (not self.trajectory.truncated) and self.report.max_B <= SAFETY_TOL


def standard_attack_suite(uv_full: BoxSet, tolerated: BoxSet,
                          square_period: float = 1.0,
                          sine_omega: float = 2.0 * np.pi) -> list[Scenario]:
    """The six stock attack scenarios.

    Two demonstration runs with oversized clamps (the full vulnerable box
    and 3/4 of it, saturated high), then four runs clamped to the
    tolerated box: saturated high, saturated low, square wave, sinusoid.
    Only the latter four carry a safety guarantee.
    """
    shrunk = BoxSet(0.75 * uv_full.lower, 0.75 * uv_full.upper)
    return [
        Scenario("attack1", AttackSignal.constant(uv_full.upper, uv_full),
                 guaranteed=False),
        Scenario("attack2", AttackSignal.constant(shrunk.upper, shrunk),
                 guaranteed=False),
        Scenario("attack3", AttackSignal.constant(tolerated.upper, tolerated)),
        Scenario("attack4", AttackSignal.constant(tolerated.lower, tolerated)),
        Scenario("attack5", AttackSignal.square(tolerated.upper, square_period,
                                                tolerated)),
        Scenario("attack6", AttackSignal.sine(tolerated.upper, sine_omega,
                                              tolerated)),
    ]


def run_scenarios(sys: ControlAffineSystem, bar: BarrierSpec, lyap: LyapunovSpec,
                  result: ViabilityResult, scenarios: list[Scenario], *,
                  x0, tau: float, dist: DisturbanceModel, T: float, h: float,
                  q: float = 1.0, out_dir=None,
                  require_certified: bool = True) -> list[ScenarioOutcome]:
    """Run a batch of attack scenarios against one computed result.

    With ``out_dir`` set, writes one trajectory CSV per scenario plus a
    ``summary.json``; wall-clock timings go to ``run.log`` so the data
    files stay byte-reproducible.  Results that are not Certified are
    rejected unless ``require_certified`` is disabled, in which case the
    runs are demonstrations without a safety guarantee.
    """
    if require_certified and result.status != CERTIFIED:
        raise ValueError(
            f"scenario suite requires a Certified result, got {result.status}; "
            "pass require_certified=False for a demonstration run")
    outcomes = []
    timings = []
    for scenario in scenarios:
        started = time.perf_counter()
        traj = simulate(sys, bar, lyap, result, x0, scenario.attack,
                        scenario.tau if scenario.tau is not None else tau,
                        dist, T, h, q=q)
        timings.append((scenario.name, time.perf_counter() - started))
        outcomes.append(ScenarioOutcome(name=scenario.name, trajectory=traj,
                                        report=monitor(traj, bar),
                                        guaranteed=scenario.guaranteed))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for outcome in outcomes:
            write_trajectory_csv(outcome.trajectory,
                                 out_dir / f"{outcome.name}.csv")
        summary = {
            "scenarios": [
                {
                    "name": o.name,
                    "guaranteed": o.guaranteed,
                    "max_B": o.report.max_B,
                    "first_violation_time": o.report.first_violation_time,
                    "min_distance_to_boundary": o.report.min_distance_to_boundary,
                    "steps": len(o.trajectory),
                    "truncated": o.trajectory.truncated,
                    "error": o.trajectory.error,
                    "safe": o.safe,
                }
                for o in outcomes
            ],
        }
        (out_dir / "summary.json").write_text(dumps_stable(summary))
        log_lines = [f"{name}: {seconds:.3f} s" for name, seconds in timings]
        (out_dir / "run.log").write_text("\n".join(log_lines) + "\n")
    return outcomes


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Trajectory as CSV with a fixed column order and exact float text."""
    n = traj.states.shape[1]
    m_s = traj.u_s.shape[1]
    m_v = traj.u_v.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(n)]
              + [f"us{i + 1}" for i in range(m_s)]
              + [f"uv{i + 1}" for i in range(m_v)]
              + ["B", "V", "eta", "zeta", "kkt_residual", "attack_active"])
    lines = [",".join(header)]
    for k in range(len(traj)):
        cells = ([format_float(traj.t[k])]
                 + [format_float(v) for v in traj.states[k]]
                 + [format_float(v) for v in traj.u_s[k]]
                 + [format_float(v) for v in traj.u_v[k]]
                 + [format_float(traj.barrier[k]), format_float(traj.lyapunov[k]),
                    format_float(traj.eta[k]), format_float(traj.zeta[k]),
                    format_float(traj.kkt_residual[k]),
                    str(int(traj.attack_active[k]))])
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
