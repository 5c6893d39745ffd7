"""Run configuration: schema-validated text documents to built objects.

A config is a nested key-value document (YAML; JSON is a subset) with
fixed section and field names.  Validation happens before any
computation: unknown keys are rejected with their path, required fields
must be present, and every applied default is materialized into the
echoed effective config so a run can be reproduced from the echo alone.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .plant import BarrierSpec, BoxSet, ControlAffineSystem, LyapunovSpec
from .sim import AttackSignal, DisturbanceModel, Scenario
from .viability import SearchParams, ViabilityResult

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration document; message carries the key path."""


_DISTURBANCE_KINDS = ("zero", "constant_direction", "rotating", "sine_direction")
_SIGNAL_KINDS = ("none", "constant", "square", "sine", "table")


def _as_mapping(value, path):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping, path, required, optional=()):
    unknown = set(mapping) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in mapping]
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")


def _number(mapping, key, path, default=None, minimum=None, strict_min=False):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"{path}.{key}: required number is missing")
        return float(default)
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and (value <= minimum if strict_min else value < minimum):
        op = ">" if strict_min else ">="
        raise ConfigError(f"{path}.{key}: must be {op} {minimum}, got {value}")
    return value


def _integer(mapping, key, path, default=None, minimum=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"{path}.{key}: required integer is missing")
        return int(default)
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}, got {value}")
    return value


def _vector(value, length, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,):
        raise ConfigError(f"{path}: expected a vector of length {length}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{path}: entries must be finite")
    return arr


def _matrix(value, shape, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"{path}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{path}: entries must be finite")
    return arr


@dataclass
class RunConfig:
    """Validated configuration with every default made explicit.

    ``effective`` is the fully materialized document; it parses back to
    an identical RunConfig.
    """

    effective: dict

    # -- builders -----------------------------------------------------

    def build_system(self) -> ControlAffineSystem:
        s = self.effective["system"]
        n = s["n"]
        A = np.asarray(s["A"], dtype=float)
        Bv = np.asarray(s["Bv"], dtype=float).reshape(n, s["mv"])
        Bs = np.asarray(s["Bs"], dtype=float).reshape(n, s["ms"])
        # flatten polynomial terms into (state row, coefficient, exponents)
        rows_idx, coeffs, exps = [], [], []
        for i, terms in enumerate(s["poly"]):
            for coeff, e in terms:
                rows_idx.append(i)
                coeffs.append(float(coeff))
                exps.append(e)
        rows_idx = np.asarray(rows_idx, dtype=int)
        coeffs = np.asarray(coeffs, dtype=float)
        exps = np.asarray(exps, dtype=float).reshape(len(coeffs), n)

        def f(x, A=A, rows_idx=rows_idx, coeffs=coeffs, exps=exps, n=n):
            x = np.asarray(x, dtype=float)
            out = A @ x
            if coeffs.size:
                vals = coeffs * np.prod(x ** exps, axis=1)
                out += np.bincount(rows_idx, weights=vals, minlength=n)
            return out

        return ControlAffineSystem(
            n=n, m_v=s["mv"], m_s=s["ms"], f=f,
            g_v=lambda x, Bv=Bv: Bv, g_s=lambda x, Bs=Bs: Bs,
            U_v=BoxSet(np.asarray(s["Uv"]["lower"], dtype=float),
                       np.asarray(s["Uv"]["upper"], dtype=float)),
            U_s=BoxSet(np.asarray(s["Us"]["lower"], dtype=float),
                       np.asarray(s["Us"]["upper"], dtype=float)),
            delta=s["delta"])

    def build_barrier(self) -> BarrierSpec:
        b = self.effective["barrier"]
        return BarrierSpec.sphere(b["center"], b["radius"],
                                  l_B=self.effective["constants"].get("lB"))

    def build_lyapunov(self) -> LyapunovSpec:
        b = self.effective["barrier"]
        domain_radius = float(np.linalg.norm(b["center"])) + b["radius"]
        return LyapunovSpec.quadratic(self.effective["lyapunov"]["P"],
                                      domain_radius,
                                      l_V=self.effective["constants"].get("lV"))

    def search_params(self) -> SearchParams:
        s = self.effective["search"]
        return SearchParams(eps1=s["eps1"], eps2=s["eps2"], n_c0=s["Nc0"],
                            n_max=s["Nmax"], seed=s["seed"], lh_mode=s["lh_mode"],
                            l_h=self.effective["constants"].get("lH"))

    def build_disturbance(self, seed_override: int | None = None) -> DisturbanceModel:
        d = self.effective["sim"]["disturbance"]
        n = self.effective["system"]["n"]
        delta = self.effective["system"]["delta"]
        kind = d["kind"]
        if kind == "zero" or delta == 0.0:
            return DisturbanceModel.zero(n)
        if kind == "constant_direction":
            return DisturbanceModel.constant_direction(d["direction"], delta)
        if kind == "rotating":
            seed = seed_override if seed_override is not None else d["seed"]
            return DisturbanceModel.rotating(n, delta, d["dwell"], seed)
        return DisturbanceModel.sine_direction(n, delta, d["omega"])

    def initial_state(self, bar: BarrierSpec, c: float,
                      seed_override: int | None = None) -> np.ndarray:
        """Configured x0, or a seeded sample well inside the sublevel set."""
        sim = self.effective["sim"]
        if sim["x0"] is not None:
            return np.asarray(sim["x0"], dtype=float)
        seed = seed_override if seed_override is not None else self.effective["search"]["seed"]
        n = self.effective["system"]["n"]
        rng = np.random.default_rng((int(seed), 9001))
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        r_c = bar.boundary_radius(c)
        radius = 0.9 * r_c * rng.random() ** (1.0 / n)
        return bar.center + radius * direction

    def scenarios(self, sys: ControlAffineSystem,
                  result: ViabilityResult) -> list[Scenario]:
        """Materialize the scenario list against a computed result."""
        out = []
        for entry in self.effective["scenarios"]:
            clamp = self._resolve_box(entry["clamp"], sys, result,
                                      f"scenarios[{entry['name']}].clamp")
            signal = entry["signal"]
            if signal == "none":
                attack = AttackSignal.none(clamp)
            elif signal == "constant":
                level = self._resolve_level(entry["amplitude"], sys, result)
                attack = AttackSignal.constant(level, clamp)
            elif signal == "square":
                amp = self._resolve_level(entry["amplitude"], sys, result)
                attack = AttackSignal.square(amp, entry["period"], clamp,
                                             phase=entry["phase"])
            elif signal == "sine":
                amp = self._resolve_level(entry["amplitude"], sys, result)
                attack = AttackSignal.sine(amp, entry["omega"], clamp,
                                           phase=entry["phase"])
            else:
                attack = AttackSignal.table(entry["times"], entry["values"], clamp)
            out.append(Scenario(name=entry["name"], attack=attack,
                                tau=entry.get("tau"),
                                guaranteed=entry["guaranteed"]))
        return out

    @staticmethod
    def _resolve_level(spec, sys, result):
        if spec == "certified":
            return result.uv_tilde.upper
        if spec == "-certified":
            return result.uv_tilde.lower
        if spec == "full":
            return sys.U_v.upper
        return np.broadcast_to(np.asarray(spec, dtype=float), (sys.m_v,)).copy()

    @staticmethod
    def _resolve_box(spec, sys, result, path):
        if spec == "certified":
            return result.uv_tilde
        if spec == "full":
            return sys.U_v
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            if spec <= 0:
                raise ConfigError(f"{path}: clamp magnitude must be positive")
            return BoxSet.symmetric(np.full(sys.m_v, float(spec)))
        raise ConfigError(f"{path}: expected 'certified', 'full', or a positive number")


def load_config(path_or_text) -> RunConfig:
    """Parse and validate a config document from a path or raw text."""
    if isinstance(path_or_text, (str, Path)) and "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    else:
        text = str(path_or_text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    return validate_config(raw)


def validate_config(raw) -> RunConfig:
    raw = _as_mapping(raw, "config")
    _check_keys(raw, "config", required=("system", "barrier", "lyapunov", "search"),
                optional=("constants", "qp", "sim", "scenarios"))
    eff: dict = {}

    # system
    s = _as_mapping(raw["system"], "system")
    _check_keys(s, "system", required=("n", "mv", "ms", "Bv", "Bs", "delta", "Uv", "Us"),
                optional=("A", "poly"))
    n = _integer(s, "n", "system", minimum=1)
    mv = _integer(s, "mv", "system", minimum=0)
    ms = _integer(s, "ms", "system", minimum=0)
    A = _matrix(s.get("A", np.zeros((n, n))), (n, n), "system.A")
    Bv = _matrix(np.reshape(s["Bv"], (n, mv)) if mv else np.zeros((n, 0)),
                 (n, mv), "system.Bv")
    Bs = _matrix(np.reshape(s["Bs"], (n, ms)) if ms else np.zeros((n, 0)),
                 (n, ms), "system.Bs")
    poly = s.get("poly", [])
    if poly:
        if not isinstance(poly, list) or len(poly) != n:
            raise ConfigError(f"system.poly: expected one term list per state equation ({n})")
        parsed_poly = []
        for i, terms in enumerate(poly):
            if not isinstance(terms, list):
                raise ConfigError(f"system.poly[{i}]: expected a list of [coeff, exponents] pairs")
            row = []
            for j, term in enumerate(terms):
                if (not isinstance(term, (list, tuple))) or len(term) != 2:
                    raise ConfigError(f"system.poly[{i}][{j}]: expected [coeff, exponents]")
                coeff = term[0]
                if isinstance(coeff, bool) or not isinstance(coeff, (int, float)):
                    raise ConfigError(f"system.poly[{i}][{j}]: coefficient must be a number")
                exps = np.asarray(term[1])
                if exps.shape != (n,) or not np.issubdtype(exps.dtype, np.integer):
                    raise ConfigError(
                        f"system.poly[{i}][{j}]: exponents must be {n} integers")
                if np.any(exps < 0):
                    raise ConfigError(f"system.poly[{i}][{j}]: exponents must be >= 0")
                row.append([float(coeff), [int(e) for e in exps]])
            parsed_poly.append(row)
    else:
        parsed_poly = [[] for _ in range(n)]

    def box_section(name, k):
        box = _as_mapping(s[name], f"system.{name}")
        _check_keys(box, f"system.{name}", required=("lower", "upper"))
        lower = _vector(box["lower"], k, f"system.{name}.lower")
        upper = _vector(box["upper"], k, f"system.{name}.upper")
        if np.any(lower > upper):
            raise ConfigError(f"system.{name}: lower bound exceeds upper bound")
        return {"lower": lower.tolist(), "upper": upper.tolist()}

    eff["system"] = {
        "n": n, "mv": mv, "ms": ms,
        "A": A.tolist(), "Bv": Bv.tolist(), "Bs": Bs.tolist(),
        "poly": parsed_poly,
        "delta": _number(s, "delta", "system", minimum=0.0),
        "Uv": box_section("Uv", mv),
        "Us": box_section("Us", ms),
    }

    # barrier
    b = _as_mapping(raw["barrier"], "barrier")
    _check_keys(b, "barrier", required=("center", "radius"))
    eff["barrier"] = {
        "center": _vector(b["center"], n, "barrier.center").tolist(),
        "radius": _number(b, "radius", "barrier", minimum=0.0, strict_min=True),
    }

    # lyapunov
    ly = _as_mapping(raw["lyapunov"], "lyapunov")
    _check_keys(ly, "lyapunov", required=("P",))
    eff["lyapunov"] = {"P": _matrix(ly["P"], (n, n), "lyapunov.P").tolist()}

    # constants (optional overrides)
    consts = _as_mapping(raw.get("constants"), "constants")
    _check_keys(consts, "constants", required=(), optional=("lB", "lV", "lH"))
    eff["constants"] = {
        k: _number(consts, k, "constants", minimum=0.0)
        for k in ("lB", "lV", "lH") if k in consts
    }

    # search
    se = _as_mapping(raw["search"], "search")
    _check_keys(se, "search", required=("eps1", "eps2", "Nc0", "Nmax"),
                optional=("seed", "lh_mode"))
    nc0 = _integer(se, "Nc0", "search", minimum=n + 1)
    nmax = _integer(se, "Nmax", "search", minimum=1)
    if nmax <= nc0:
        raise ConfigError(f"search.Nmax: must exceed search.Nc0 ({nc0}), got {nmax}")
    lh_mode = se.get("lh_mode", "fixed")
    if lh_mode not in ("fixed", "recompute"):
        raise ConfigError(f"search.lh_mode: expected 'fixed' or 'recompute', got {lh_mode!r}")
    eff["search"] = {
        "eps1": _number(se, "eps1", "search", minimum=0.0, strict_min=True),
        "eps2": _number(se, "eps2", "search", minimum=0.0, strict_min=True),
        "Nc0": nc0, "Nmax": nmax,
        "seed": _integer(se, "seed", "search", default=0, minimum=0),
        "lh_mode": lh_mode,
    }

    # qp
    qp = _as_mapping(raw.get("qp"), "qp")
    _check_keys(qp, "qp", required=(), optional=("q",))
    eff["qp"] = {"q": _number(qp, "q", "qp", default=1.0, minimum=0.0, strict_min=True)}

    # sim
    sim = _as_mapping(raw.get("sim"), "sim")
    _check_keys(sim, "sim", required=(), optional=("h", "T", "tau", "x0", "disturbance"))
    h = _number(sim, "h", "sim", default=1e-3, minimum=0.0, strict_min=True)
    T = _number(sim, "T", "sim", default=10.0, minimum=0.0, strict_min=True)
    if T < h:
        raise ConfigError(f"sim.T: horizon ({T}) must be at least one step ({h})")
    x0 = sim.get("x0")
    eff_sim = {
        "h": h, "T": T,
        "tau": _number(sim, "tau", "sim", default=0.0, minimum=0.0),
        "x0": None if x0 is None else _vector(x0, n, "sim.x0").tolist(),
    }
    dist = _as_mapping(sim.get("disturbance"), "sim.disturbance")
    _check_keys(dist, "sim.disturbance", required=(),
                optional=("kind", "direction", "dwell", "omega", "seed"))
    kind = dist.get("kind", "rotating")
    if kind not in _DISTURBANCE_KINDS:
        raise ConfigError(
            f"sim.disturbance.kind: expected one of {_DISTURBANCE_KINDS}, got {kind!r}")
    eff_dist = {"kind": kind}
    if kind == "constant_direction":
        if "direction" not in dist:
            raise ConfigError("sim.disturbance.direction: required for constant_direction")
        eff_dist["direction"] = _vector(dist["direction"], n,
                                        "sim.disturbance.direction").tolist()
    if kind == "rotating":
        eff_dist["dwell"] = _number(dist, "dwell", "sim.disturbance", default=0.1,
                                    minimum=0.0, strict_min=True)
        eff_dist["seed"] = _integer(dist, "seed", "sim.disturbance",
                                    default=eff["search"]["seed"], minimum=0)
    if kind == "sine_direction":
        eff_dist["omega"] = _number(dist, "omega", "sim.disturbance",
                                    default=2.0 * np.pi)
    eff_sim["disturbance"] = eff_dist
    eff["sim"] = eff_sim

    # scenarios
    eff["scenarios"] = _validate_scenarios(raw.get("scenarios"), eff)

    return RunConfig(effective=eff)


def _default_scenarios(eff) -> list[dict]:
    """The six stock attacks, with absolute clamps taken from the full box."""
    upper = np.asarray(eff["system"]["Uv"]["upper"], dtype=float)
    full = float(np.max(upper)) if upper.size else 0.0
    return [
        {"name": "attack1", "signal": "constant", "amplitude": "full",
         "clamp": "full", "guaranteed": False},
        {"name": "attack2", "signal": "constant", "amplitude": 0.75 * full,
         "clamp": 0.75 * full if full > 0 else "full", "guaranteed": False},
        {"name": "attack3", "signal": "constant", "amplitude": "certified",
         "clamp": "certified", "guaranteed": True},
        {"name": "attack4", "signal": "constant", "amplitude": "-certified",
         "clamp": "certified", "guaranteed": True},
        {"name": "attack5", "signal": "square", "amplitude": "certified",
         "clamp": "certified", "period": 1.0, "phase": 0.0, "guaranteed": True},
        {"name": "attack6", "signal": "sine", "amplitude": "certified",
         "clamp": "certified", "omega": 2.0 * np.pi, "phase": 0.0,
         "guaranteed": True},
    ]


def _validate_scenarios(raw_list, eff) -> list[dict]:
    if raw_list is None:
        raw_list = _default_scenarios(eff)
    if not isinstance(raw_list, list):
        raise ConfigError("scenarios: expected a list")
    out = []
    seen = set()
    for i, entry in enumerate(raw_list):
        path = f"scenarios[{i}]"
        entry = _as_mapping(entry, path)
        _check_keys(entry, path, required=("name", "signal"),
                    optional=("amplitude", "clamp", "period", "omega", "phase",
                              "tau", "times", "values", "guaranteed"))
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise ConfigError(f"{path}.name: expected a non-empty string")
        if name in seen:
            raise ConfigError(f"{path}.name: duplicate scenario name {name!r}")
        seen.add(name)
        signal = entry["signal"]
        if signal not in _SIGNAL_KINDS:
            raise ConfigError(f"{path}.signal: expected one of {_SIGNAL_KINDS}, got {signal!r}")
        clamp = entry.get("clamp", "certified")
        if not (clamp in ("certified", "full")
                or (isinstance(clamp, (int, float)) and not isinstance(clamp, bool))):
            raise ConfigError(f"{path}.clamp: expected 'certified', 'full', or a number")
        item = {"name": name, "signal": signal, "clamp": clamp}
        if signal in ("constant", "square", "sine"):
            amp = entry.get("amplitude", "certified")
            if not (amp in ("certified", "-certified", "full")
                    or isinstance(amp, (int, float, list))):
                raise ConfigError(f"{path}.amplitude: expected a number or "
                                  "'certified'/'-certified'/'full'")
            item["amplitude"] = amp
        if signal == "square":
            item["period"] = _number(entry, "period", path, default=1.0,
                                     minimum=0.0, strict_min=True)
            item["phase"] = _number(entry, "phase", path, default=0.0)
        if signal == "sine":
            item["omega"] = _number(entry, "omega", path, default=2.0 * np.pi)
            item["phase"] = _number(entry, "phase", path, default=0.0)
        if signal == "table":
            if "times" not in entry or "values" not in entry:
                raise ConfigError(f"{path}: table signal requires times and values")
            times = np.asarray(entry["times"], dtype=float)
            values = np.atleast_2d(np.asarray(entry["values"], dtype=float))
            if values.shape[0] != times.shape[0] or values.shape[1] != eff["system"]["mv"]:
                raise ConfigError(f"{path}: values must be (len(times), mv)")
            item["times"] = times.tolist()
            item["values"] = values.tolist()
        if "tau" in entry:
            item["tau"] = _number(entry, "tau", path, minimum=0.0)
        guaranteed = entry.get("guaranteed", clamp == "certified")
        if not isinstance(guaranteed, bool):
            raise ConfigError(f"{path}.guaranteed: expected true/false")
        item["guaranteed"] = guaranteed
        out.append(item)
    return out
