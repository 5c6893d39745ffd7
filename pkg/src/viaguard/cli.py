"""Command-line entry points.

Subcommands: ``compute`` (viability search), ``verify`` (independent
dense check of a stored result), ``check`` (per-state QP diagnostics),
``simulate`` (attack scenario suite), ``mesh`` (boundary mesh export),
``dm`` (minimal-simplex arc bound).  Exit codes: 0 success, 1 usage or
evaluation error, 2 negative outcome (infeasible search, failed check,
unsafe guaranteed scenario).

Every command is deterministic given its config and seeds; wall-clock
timings are confined to ``run.log`` so data outputs are byte-stable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .geometry import minimal_simplex_arc, great_circle_triangle_arc, \
    sample_sphere, triangulate
from .jsonio import dumps_stable, format_float
from .qpcontrol import OPTIMAL, build_qp, check_strict_complementarity, solve_qp
from .sim import run_scenarios
from .viability import algorithm1, dense_verify, result_from_dict, result_to_dict


def _parse_state(text: str, n: int) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ValueError(f"state must have {n} components, got {len(parts)}")
    return np.array([float(p) for p in parts])


def _load(config_path: str, seed: int | None) -> tuple[RunConfig, int]:
    cfg = load_config(config_path)
    effective_seed = seed if seed is not None else cfg.effective["search"]["seed"]
    return cfg, int(effective_seed)


def cmd_compute(args) -> int:
    cfg, seed = _load(args.config, args.seed)
    if args.echo_config:
        Path(args.echo_config).write_text(dumps_stable(cfg.effective))
    sys_ = cfg.build_system()
    bar = cfg.build_barrier()
    params = cfg.search_params()
    if args.seed is not None:
        from dataclasses import replace
        params = replace(params, seed=seed)
    result = algorithm1(sys_, bar, params)
    Path(args.out).write_text(dumps_stable(result_to_dict(result, __version__)))
    print(f"{result.status}: c={result.c:g} "
          f"bounds={np.round(result.uv_tilde.lower, 6).tolist()}"
          f"..{np.round(result.uv_tilde.upper, 6).tolist()} "
          f"N_p={result.n_points} d_a={result.d_a:.6g} "
          f"worst_margin={result.worst_margin:.6g}")
    return 0 if result.certified else 2


def cmd_verify(args) -> int:
    cfg, seed = _load(args.config, args.seed)
    if args.oversample < 1:
        raise ValueError(f"oversample must be >= 1, got {args.oversample}")
    result = result_from_dict_file(args.result)
    report = dense_verify(result, cfg.build_system(), cfg.build_barrier(),
                          oversample=args.oversample, seed=seed)
    doc = {
        "pass": report.passed,
        "worst_margin": report.worst_margin,
        "tolerance": report.tolerance,
        "n_samples": int(report.margins.shape[0]),
        "violating_count": int(report.violating_indices.shape[0]),
        "oversample": args.oversample,
        "seed": seed,
        "tool_version": __version__,
    }
    text = dumps_stable(doc)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0 if report.passed else 2


def cmd_check(args) -> int:
    cfg, _ = _load(args.config, args.seed)
    result = result_from_dict_file(args.result)
    sys_ = cfg.build_system()
    bar = cfg.build_barrier()
    lyap = cfg.build_lyapunov()
    x = _parse_state(args.state, sys_.n)
    spec = build_qp(x, sys_, bar, lyap, result.c, result.uv_tilde,
                    cfg.effective["qp"]["q"])
    sol = solve_qp(spec)
    doc = {
        "state": x.tolist(),
        "rows": [
            {"label": label, "coefficients": row.tolist(), "rhs": rhs}
            for label, row, rhs in zip(spec.labels, spec.rows, spec.rhs)
        ],
        "status": sol.status,
    }
    if sol.status == OPTIMAL:
        strict = check_strict_complementarity(sol)
        doc.update({
            "z": sol.z.tolist(),
            "multipliers": sol.lam.tolist(),
            "objective": sol.objective,
            "kkt_residual": sol.kkt_residual,
            "strict_complementarity": {
                "pass": strict.passed,
                "rows": [
                    {"index": r.index, "label": r.label,
                     "multiplier": r.multiplier, "slack": r.slack,
                     "strict": r.strict}
                    for r in strict.rows
                ],
            },
        })
    text = dumps_stable(doc)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0 if sol.status == OPTIMAL else 2


def cmd_simulate(args) -> int:
    cfg, seed = _load(args.config, args.seed)
    result = result_from_dict_file(args.result)
    sys_ = cfg.build_system()
    bar = cfg.build_barrier()
    lyap = cfg.build_lyapunov()
    scenarios = cfg.scenarios(sys_, result)
    if args.scenario != "all":
        wanted = [s.strip() for s in args.scenario.split(",") if s.strip()]
        known = {s.name for s in scenarios}
        unknown = [w for w in wanted if w not in known]
        if unknown:
            raise ValueError(f"unknown scenario names {unknown}; known: {sorted(known)}")
        scenarios = [s for s in scenarios if s.name in wanted]
    sim = cfg.effective["sim"]
    seed_override = args.seed if args.seed is not None else None
    outcomes = run_scenarios(
        sys_, bar, lyap, result, scenarios,
        x0=cfg.initial_state(bar, result.c, seed_override=seed_override),
        tau=sim["tau"], dist=cfg.build_disturbance(seed_override=seed_override),
        T=sim["T"], h=sim["h"], q=cfg.effective["qp"]["q"],
        out_dir=args.out, require_certified=not args.allow_uncertified)
    for o in outcomes:
        tag = "guaranteed" if o.guaranteed else "demonstration"
        state = "safe" if o.safe else "UNSAFE"
        extra = " (truncated)" if o.trajectory.truncated else ""
        print(f"{o.name} [{tag}]: {state} max_B={o.report.max_B:.6g}{extra}")
    return 0 if all(o.safe for o in outcomes if o.guaranteed) else 2


def cmd_mesh(args) -> int:
    center = None
    if args.center:
        center = np.array([float(p) for p in args.center.replace(",", " ").split()])
    mesh = triangulate(sample_sphere(args.n, args.np, center=center,
                                     radius=args.radius, seed=args.seed))
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = "idx," + ",".join(f"x{i + 1}" for i in range(args.n))
    lines = [header] + [
        f"{i}," + ",".join(format_float(v) for v in p)
        for i, p in enumerate(mesh.points)
    ]
    Path(f"{prefix}.points.csv").write_text("\n".join(lines) + "\n")
    fheader = "face_idx," + ",".join(f"v{i + 1}" for i in range(mesh.faces.shape[1]))
    flines = [fheader] + [
        f"{i}," + ",".join(str(int(v)) for v in face)
        for i, face in enumerate(mesh.faces)
    ]
    Path(f"{prefix}.faces.csv").write_text("\n".join(flines) + "\n")
    summary = {
        "n": args.n, "n_points": mesh.n_points,
        "n_faces": int(mesh.faces.shape[0]),
        "radius": mesh.radius, "seed": args.seed, "d_a": mesh.d_a,
        "tool_version": __version__,
    }
    text = dumps_stable(summary)
    Path(f"{prefix}.summary.json").write_text(text)
    print(text, end="")
    return 0


def cmd_dm(args) -> int:
    if args.great_circle:
        value = great_circle_triangle_arc(args.rc)
    else:
        value = minimal_simplex_arc(args.n, args.rc)
    print(format_float(value))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viaguard",
        description="Viability domains and QP safe control under bounded actuator attacks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, result=False, out=None):
        p.add_argument("--config", required=True, help="path to the config document")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        if result:
            p.add_argument("--result", required=True,
                           help="path to a result JSON written by compute")
        if out == "required":
            p.add_argument("--out", required=True, help="output path")
        elif out == "optional":
            p.add_argument("--out", default=None, help="optional output path")

    p = sub.add_parser("compute", help="search for a certified (c, attack box) pair")
    add_common(p, out="required")
    p.add_argument("--echo-config", default=None,
                   help="write the effective (defaults-materialized) config here")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("verify", help="dense independent check of a stored result")
    add_common(p, result=True, out="optional")
    p.add_argument("--oversample", type=int, default=10,
                   help="fresh samples per original mesh point")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check", help="QP rows, solution and slackness at one state")
    add_common(p, result=True, out="optional")
    p.add_argument("--state", required=True, help="comma-separated state vector")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="run attack scenarios against a result")
    add_common(p, result=True, out="required")
    p.add_argument("--scenario", default="all",
                   help="comma-separated scenario names, or 'all'")
    p.add_argument("--allow-uncertified", action="store_true",
                   help="run demonstrations against a non-certified result")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mesh", help="export a triangulated boundary mesh")
    p.add_argument("--n", type=int, required=True, help="state dimension")
    p.add_argument("--np", type=int, required=True, help="number of points")
    p.add_argument("--center", default=None, help="comma-separated center")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("dm", help="minimal-simplex arc bound for a sphere")
    p.add_argument("--n", type=int, default=3, help="state dimension")
    p.add_argument("--rc", type=float, required=True, help="sphere radius")
    p.add_argument("--great-circle", action="store_true",
                   help="print the looser great-circle triangle arc instead")
    p.set_defaults(func=cmd_dm)
    return parser


def result_from_dict_file(path):
    import json

    return result_from_dict(json.loads(Path(path).read_text()))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
