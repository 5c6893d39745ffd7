"""Finite-point viability certificates and the iterative domain search.

A sublevel set {B <= -c} is accepted as a viability domain when, at
every vertex of a triangulated boundary mesh,

    sup_H(x_i, tolerable box)  <=  - l_H * d_a  -  l_B * delta.

The mesh resolution term l_H * d_a pays for only checking finitely many
points; the l_B * delta term pays for the bounded disturbance.  The
search shrinks the tolerable attack box, then raises c, then doubles the
number of mesh points until a certificate passes or options run out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import SamplingMesh, sample_sphere, triangulate
from .plant import (BarrierSpec, BoxSet, ControlAffineSystem,
                    boundary_sup_terms, box_max_batch, estimate_l_H)
from .plant import compute_c_M

__all__ = [
    "CertificateReport",
    "SearchParams",
    "IterationCounters",
    "ViabilityResult",
    "certify",
    "dense_verify",
    "algorithm1",
    "worst_case_over_vulnerable_subsets",
    "SubsetSweep",
    "result_to_dict",
    "result_from_dict",
]

CERTIFIED = "Certified"
INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class CertificateReport:
    """Pointwise margins of one certificate check.

    ``margins[i] <= tolerance`` is the passing condition at sample i;
    ``passed`` holds iff no sample violates it, iff ``worst_margin``
    (the largest margin) is within tolerance.
    """

    margins: np.ndarray
    violating_indices: np.ndarray
    worst_margin: float
    passed: bool
    tolerance: float = 0.0

    @classmethod
    def from_margins(cls, margins: np.ndarray, tolerance: float = 0.0) -> "CertificateReport":
        margins = np.asarray(margins, dtype=float)
        violating = np.flatnonzero(margins > tolerance)
        worst = float(np.max(margins))
        return cls(margins=margins, violating_indices=violating,
                   worst_margin=worst, passed=violating.size == 0,
                   tolerance=tolerance)


@dataclass(frozen=True)
class SearchParams:
    """Knobs of the iterative search.

    eps1      erosion step taken off every attack bound per shrink
    eps2      increment of the sublevel offset c
    n_c0      initial number of boundary mesh points
    n_max     inclusive cap on the mesh size (doubling schedule)
    lh_mode   'fixed' estimates one conservative Lipschitz constant at the
              full attack box; 'recompute' re-estimates per candidate box
    l_h       explicit Lipschitz constant override (skips estimation)
    """

    eps1: float
    eps2: float
    n_c0: int
    n_max: int
    seed: int = 0
    lh_mode: str = "fixed"
    l_h: float | None = None
    lh_density: int = 256

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError(f"eps1 and eps2 must be positive, got {self.eps1}, {self.eps2}")
        if self.n_max <= self.n_c0:
            raise ValueError(f"n_max ({self.n_max}) must exceed n_c0 ({self.n_c0})")
        if self.lh_mode not in ("fixed", "recompute"):
            raise ValueError(f"lh_mode must be 'fixed' or 'recompute', got {self.lh_mode!r}")
        if self.l_h is not None and self.l_h < 0:
            raise ValueError(f"l_h override must be >= 0, got {self.l_h}")


@dataclass
class IterationCounters:
    erosions: int = 0
    c_steps: int = 0
    doublings: int = 0

    def as_dict(self) -> dict:
        return {"erosions": self.erosions, "c_steps": self.c_steps,
                "doublings": self.doublings}


@dataclass(frozen=True)
class ViabilityResult:
    """Outcome of the search: a certified (c, box) pair or the best failure.

    When ``status`` is Certified, re-running :func:`certify` on a mesh
    rebuilt from (n_points, c, seed) with ``l_h_used`` passes.  When
    Infeasible, the stored fields describe the candidate with the least
    bad worst margin encountered.
    """

    c: float
    uv_tilde: BoxSet
    n_points: int
    d_a: float
    worst_margin: float
    l_h_used: float
    l_b_used: float
    delta: float
    iterations: IterationCounters
    status: str
    seed: int = 0

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED


def _margins(base: np.ndarray, gain: np.ndarray, box: BoxSet,
             l_h: float, d_a: float, l_b: float, delta: float) -> np.ndarray:
    return base + box_max_batch(gain, box) + l_h * d_a + l_b * delta


def certify(mesh: SamplingMesh, sys: ControlAffineSystem, bar: BarrierSpec,
            uv_box: BoxSet, l_h: float) -> CertificateReport:
    """Evaluate the finite-point condition at every mesh vertex.

    The mesh must be triangulated (d_a available).  Margins are
    sup_H(x_i, uv_box) + l_h * d_a + l_B * delta; the check passes when
    none is positive.
    """
    if mesh.faces is None or mesh.d_a is None:
        raise ValueError("mesh is not triangulated: d_a is undefined")
    if uv_box.is_empty:
        raise ValueError("tolerable attack box is empty")
    if l_h < 0:
        raise ValueError(f"l_h must be >= 0, got {l_h}")
    base, gain = boundary_sup_terms(sys, bar, mesh.points)
    margins = _margins(base, gain, uv_box, l_h, mesh.d_a, bar.l_B, sys.delta)
    return CertificateReport.from_margins(margins)


def dense_verify(result: ViabilityResult, sys: ControlAffineSystem,
                 bar: BarrierSpec, oversample: int = 10, seed: int = 1,
                 tolerance: float = 1e-6) -> CertificateReport:
    """Independent dense check of a certified result.

    Draws ``oversample * n_points`` fresh boundary points (new seed, same
    sampling construction) and checks the resolution-free condition
    sup_H(x, box) <= -l_B * delta + tolerance at each one.  This is the
    soundness oracle for the finite-point certificate: margins here carry
    no l_H * d_a slack.
    """
    if result.status != CERTIFIED:
        raise ValueError(f"dense verification requires a Certified result, got {result.status}")
    if oversample < 1:
        raise ValueError(f"oversample must be >= 1, got {oversample}")
    r_c = bar.boundary_radius(result.c)
    pts = sample_sphere(sys.n, oversample * result.n_points, bar.center, r_c,
                        seed=seed).points
    base, gain = boundary_sup_terms(sys, bar, pts)
    margins = base + box_max_batch(gain, result.uv_tilde) + bar.l_B * sys.delta
    return CertificateReport.from_margins(margins, tolerance=tolerance)


def _resolve_l_h(sys, bar, params: SearchParams, c: float, box: BoxSet,
                 fixed_value: float | None) -> float:
    if params.l_h is not None:
        return params.l_h
    if params.lh_mode == "fixed":
        return fixed_value
    return estimate_l_H(sys, bar, box, c=c, mesh_density=params.lh_density,
                        seed=params.seed)


def algorithm1(sys: ControlAffineSystem, bar: BarrierSpec,
               params: SearchParams) -> ViabilityResult:
    """Iterative search for a certified (c, tolerable attack box) pair.

    Three nested loops: mesh size doubling from n_c0 up to n_max; the
    sublevel offset c stepping by eps2 from 0 up to the largest feasible
    offset; the attack box eroding by eps1 from the full vulnerable box
    until the certificate passes or the box empties.  The first passing
    candidate is returned immediately.  If no candidate passes, the
    result carries the least worst margin seen and status Infeasible.

    Deterministic for a fixed seed; the boundary mesh for each c is the
    radial rescaling of one unit-sphere mesh per mesh size.
    """
    if params.n_c0 < sys.n + 1:
        raise ValueError(f"n_c0 must be at least n+1 = {sys.n + 1}, got {params.n_c0}")
    c_max = compute_c_M(bar)
    counters = IterationCounters()

    fixed_l_h = None
    if params.l_h is None and params.lh_mode == "fixed":
        fixed_l_h = estimate_l_H(sys, bar, sys.U_v, c=0.0,
                                 mesh_density=params.lh_density, seed=params.seed)

    best = None  # (worst_margin, c, box, n_points, d_a, l_h)
    n_points = params.n_c0
    while n_points <= params.n_max:
        unit = triangulate(sample_sphere(sys.n, n_points, bar.center, 1.0,
                                         seed=params.seed))
        c = 0.0
        while c <= c_max + 1e-12:
            r_c = bar.boundary_radius(min(c, c_max))
            if r_c <= 1e-12 * bar.radius:
                break  # boundary sphere collapsed; larger c cannot be sampled
            mesh = unit.rescaled(bar.center, r_c)
            base, gain = boundary_sup_terms(sys, bar, mesh.points)
            box = sys.U_v
            while not box.is_empty:
                l_h = _resolve_l_h(sys, bar, params, c, box, fixed_l_h)
                margins = _margins(base, gain, box, l_h, mesh.d_a,
                                   bar.l_B, sys.delta)
                worst = float(np.max(margins))
                if best is None or worst < best[0]:
                    best = (worst, c, box, n_points, mesh.d_a, l_h)
                if worst <= 0.0:
                    return ViabilityResult(
                        c=c, uv_tilde=box, n_points=n_points, d_a=mesh.d_a,
                        worst_margin=worst, l_h_used=l_h, l_b_used=bar.l_B,
                        delta=sys.delta, iterations=counters, status=CERTIFIED,
                        seed=params.seed)
                box = box.erode(params.eps1)
                counters.erosions += 1
            c += params.eps2
            counters.c_steps += 1
        n_points *= 2
        counters.doublings += 1

    worst, c, box, n_pts, d_a, l_h = best
    return ViabilityResult(
        c=c, uv_tilde=box, n_points=n_pts, d_a=d_a, worst_margin=worst,
        l_h_used=l_h, l_b_used=bar.l_B, delta=sys.delta, iterations=counters,
        status=INFEASIBLE, seed=params.seed)


def result_to_dict(result: ViabilityResult, tool_version: str = "") -> dict:
    """JSON-ready document for a result; inverse of :func:`result_from_dict`."""
    return {
        "c": result.c,
        "Uv_tilde": {
            "lower": result.uv_tilde.lower.tolist(),
            "upper": result.uv_tilde.upper.tolist(),
        },
        "N_p": result.n_points,
        "d_a": result.d_a,
        "worst_margin": result.worst_margin,
        "l_H_used": result.l_h_used,
        "l_B_used": result.l_b_used,
        "delta": result.delta,
        "iterations": result.iterations.as_dict(),
        "status": result.status,
        "tool_version": tool_version,
        "seed": result.seed,
    }


def result_from_dict(doc: dict) -> ViabilityResult:
    box = BoxSet(np.asarray(doc["Uv_tilde"]["lower"], dtype=float),
                 np.asarray(doc["Uv_tilde"]["upper"], dtype=float))
    it = doc["iterations"]
    return ViabilityResult(
        c=float(doc["c"]), uv_tilde=box, n_points=int(doc["N_p"]),
        d_a=float(doc["d_a"]), worst_margin=float(doc["worst_margin"]),
        l_h_used=float(doc["l_H_used"]), l_b_used=float(doc["l_B_used"]),
        delta=float(doc["delta"]),
        iterations=IterationCounters(erosions=int(it["erosions"]),
                                     c_steps=int(it["c_steps"]),
                                     doublings=int(it["doublings"])),
        status=str(doc["status"]), seed=int(doc.get("seed", 0)))


@dataclass(frozen=True)
class SubsetSweep:
    """Per-subset search results plus the aggregate worst-case offset.

    ``c_star`` is the maximum certified c over all subsets (None when no
    subset certifies); using it for the initial-condition set covers
    every considered assignment of channels to the attacker.
    """

    results: dict[tuple[int, ...], ViabilityResult]
    c_star: float | None

    @property
    def infeasible_subsets(self) -> list[tuple[int, ...]]:
        return [s for s, r in self.results.items() if not r.certified]


def worst_case_over_vulnerable_subsets(sys: ControlAffineSystem, bar: BarrierSpec,
                                       params: SearchParams,
                                       subsets=None,
                                       max_inputs: int = 10) -> SubsetSweep:
    """Run the search once per assumed set of attacker-controlled channels.

    Channels are indexed in the combined order (current vulnerable
    channels first, then secure ones).  By default every non-empty
    subset of the m channels is tried, capped at ``max_inputs`` total
    channels; pass ``subsets`` explicitly for larger systems.
    """
    m = sys.m
    if subsets is None:
        if m > max_inputs:
            raise ValueError(
                f"{m} input channels would require {2 ** m - 1} searches; "
                "pass an explicit subsets list")
        subsets = [tuple(i for i in range(m) if mask >> i & 1)
                   for mask in range(1, 2 ** m)]
    else:
        subsets = [tuple(sorted(s)) for s in subsets]

    lower = np.concatenate([sys.U_v.lower, sys.U_s.lower])
    upper = np.concatenate([sys.U_v.upper, sys.U_s.upper])

    def combined_gain(x):
        gv, gs = sys.gains(x)
        return np.hstack([gv, gs])

    results = {}
    for subset in subsets:
        if any(i < 0 or i >= m for i in subset):
            raise ValueError(f"channel index out of range in subset {subset}")
        vul = np.array(subset, dtype=int)
        sec = np.array([i for i in range(m) if i not in subset], dtype=int)
        sub_sys = ControlAffineSystem(
            n=sys.n, m_v=len(vul), m_s=len(sec), f=sys.f,
            g_v=lambda x, vul=vul: combined_gain(x)[:, vul],
            g_s=lambda x, sec=sec: combined_gain(x)[:, sec],
            U_v=BoxSet(lower[vul], upper[vul]),
            U_s=BoxSet(lower[sec], upper[sec]),
            delta=sys.delta)
        results[subset] = algorithm1(sub_sys, bar, params)

    certified = [r.c for r in results.values() if r.certified]
    return SubsetSweep(results=results, c_star=max(certified) if certified else None)
