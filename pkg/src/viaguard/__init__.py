"""Viability domains and QP safe control under bounded actuator attacks.

Given a control-affine system whose input channels split into
attacker-overridable and secure parts, this package

* computes a viability domain (a barrier sublevel set) together with a
  box of tolerable attack inputs, certified by checking a margin
  condition at finitely many boundary mesh points,
* verifies certificates independently on dense fresh samples,
* synthesizes the secure feedback law as a small per-state QP, and
* simulates the closed loop under attack and disturbance signals.
"""

from .geometry import (GeometryError, SamplingMesh, geodesic_distance,
                       great_circle_triangle_arc, max_face_arc,
                       minimal_simplex_arc, rays_covered, sample_sphere,
                       sample_sphere_uniform, triangulate)
from .plant import (BarrierSpec, BoxSet, ControlAffineSystem, EvaluationError,
                    LyapunovSpec, boundary_sup_terms, compute_c_M,
                    estimate_l_H, inf_H, lie_derivatives, sup_H)
from .qpcontrol import (ControlContext, FeedbackResult, QPInfeasibleError,
                        QPSolution, QPSpec, StrictComplementarityReport,
                        build_qp, check_strict_complementarity, feedback,
                        solve_qp)
from .sim import (AttackSignal, DisturbanceModel, SafetyReport, Scenario,
                  ScenarioOutcome, Trajectory, monitor, run_scenarios,
                  simulate, standard_attack_suite, write_trajectory_csv)
from .viability import (CertificateReport, IterationCounters, SearchParams,
                        SubsetSweep, ViabilityResult, algorithm1, certify,
                        dense_verify, result_from_dict, result_to_dict,
                        worst_case_over_vulnerable_subsets)
from .config import ConfigError, RunConfig, load_config

__version__ = "0.1.0"
