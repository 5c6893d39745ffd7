import json

import numpy as np
import pytest
import yaml

from viaguard import ConfigError, load_config, result_from_dict
from viaguard.cli import main
from viaguard.config import validate_config
from viaguard.jsonio import dumps_stable, format_float

from conftest import config_path

RESULT_KEYS = ["c", "Uv_tilde", "N_p", "d_a", "worst_margin", "l_H_used",
               "l_B_used", "delta", "iterations", "status", "tool_version", "seed"]


def base_doc():
    return yaml.safe_load(open(config_path("integrator2d")))


@pytest.fixture(scope="module")
def fast_sim_config(tmp_path_factory):
    """integrator2d with a short horizon, for CLI-level runs."""
    doc = base_doc()
    doc["sim"]["T"] = 0.05
    doc["sim"]["h"] = 0.001
    path = tmp_path_factory.mktemp("cfg") / "fast.cfg"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


@pytest.fixture(scope="module")
def computed_result(fast_sim_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("res") / "result.json"
    assert main(["compute", "--config", fast_sim_config, "--out", str(out)]) == 0
    return str(out)


class TestConfigValidation:
    @pytest.mark.parametrize("name", ["integrator2d", "integrator3d",
                                      "damped3d", "paper"])
    def test_bundled_configs_validate(self, name):
        cfg = load_config(config_path(name))
        sys = cfg.build_system()
        assert sys.n == cfg.effective["system"]["n"]
        cfg.build_barrier()
        cfg.build_lyapunov()
        cfg.search_params()

    def test_unknown_key_rejected(self):
        doc = base_doc()
        doc["system"]["unknown_field"] = 1
        with pytest.raises(ConfigError, match="system: unknown keys.*unknown_field"):
            validate_config(doc)

    def test_unknown_top_level_section_rejected(self):
        doc = base_doc()
        doc["extras"] = {}
        with pytest.raises(ConfigError, match="unknown keys.*extras"):
            validate_config(doc)

    def test_missing_required_key(self):
        doc = base_doc()
        del doc["barrier"]
        with pytest.raises(ConfigError, match="missing required keys.*barrier"):
            validate_config(doc)

    def test_nmax_must_exceed_nc0(self):
        doc = base_doc()
        doc["search"]["Nmax"] = doc["search"]["Nc0"]
        with pytest.raises(ConfigError, match="search.Nmax"):
            validate_config(doc)

    def test_box_shape_checked(self):
        doc = base_doc()
        doc["system"]["Uv"]["lower"] = [-1.0]
        with pytest.raises(ConfigError, match="system.Uv.lower"):
            validate_config(doc)

    def test_poly_validation(self):
        doc = base_doc()
        doc["system"]["poly"] = [[[0.1, [1, 0]]], [[0.2, [0, 1, 3]]]]
        with pytest.raises(ConfigError, match="poly"):
            validate_config(doc)

    def test_defaults_materialized(self):
        doc = base_doc()
        del doc["qp"]
        del doc["sim"]
        cfg = validate_config(doc)
        assert cfg.effective["qp"]["q"] == 1.0
        assert cfg.effective["sim"]["h"] == 1e-3
        assert cfg.effective["sim"]["T"] == 10.0
        assert cfg.effective["sim"]["disturbance"]["kind"] == "rotating"
        names = [s["name"] for s in cfg.effective["scenarios"]]
        assert names == [f"attack{i}" for i in range(1, 7)]

    def test_effective_config_revalidates_to_itself(self):
        cfg = load_config(config_path("damped3d"))
        again = validate_config(json.loads(dumps_stable(cfg.effective)))
        assert again.effective == cfg.effective

    def test_default_initial_state_inside_domain(self):
        cfg = load_config(config_path("damped3d"))
        bar = cfg.build_barrier()
        for seed in range(5):
            x0 = cfg.initial_state(bar, c=0.0, seed_override=seed)
            assert np.linalg.norm(x0 - bar.center) <= 0.9 * bar.radius + 1e-12
        a = cfg.initial_state(bar, c=0.0, seed_override=3)
        b = cfg.initial_state(bar, c=0.0, seed_override=3)
        assert np.array_equal(a, b)

    def test_scenario_materialization(self, computed_result, fast_sim_config):
        cfg = load_config(fast_sim_config)
        sys = cfg.build_system()
        result = result_from_dict(json.loads(open(computed_result).read()))
        scenarios = cfg.scenarios(sys, result)
        byname = {s.name: s for s in scenarios}
        assert np.array_equal(byname["attack1"].attack.clamp_box.upper,
                              sys.U_v.upper)
        assert np.array_equal(byname["attack3"].attack.clamp_box.upper,
                              result.uv_tilde.upper)
        assert np.array_equal(byname["attack4"].attack.value(0.0),
                              result.uv_tilde.lower)

    def test_custom_scenarios_validated(self):
        doc = base_doc()
        doc["scenarios"] = [{"name": "probe", "signal": "sawtooth"}]
        with pytest.raises(ConfigError, match="signal"):
            validate_config(doc)
        doc["scenarios"] = [{"name": "probe", "signal": "sine"},
                            {"name": "probe", "signal": "none"}]
        with pytest.raises(ConfigError, match="duplicate"):
            validate_config(doc)


class TestJsonIO:
    def test_float_round_trip(self):
        for x in (0.1, 7.5, 1e-300, 123456.789e-12, np.pi, -2.5e17):
            assert float(format_float(x)) == x

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            dumps_stable({"x": float("nan")})

    def test_parses_as_json(self):
        doc = {"a": [1, 2.5, True, None], "b": {"c": "text"}}
        assert json.loads(dumps_stable(doc)) == doc


class TestComputeCommand:
    def test_certified_exit_and_schema(self, computed_result):
        doc = json.loads(open(computed_result).read())
        assert list(doc.keys()) == RESULT_KEYS
        assert doc["status"] == "Certified"
        assert doc["c"] == 0.0
        assert doc["Uv_tilde"]["upper"][0] > 0
        back = result_from_dict(doc)
        assert back.certified

    def test_round_trip_exact_constants(self, computed_result):
        doc = json.loads(open(computed_result).read())
        text = dumps_stable(doc)
        assert json.loads(text) == doc

    def test_invalid_config_exits_one(self, tmp_path):
        doc = base_doc()
        doc["search"]["Nmax"] = 1
        bad = tmp_path / "bad.cfg"
        bad.write_text(yaml.safe_dump(doc))
        out = tmp_path / "r.json"
        assert main(["compute", "--config", str(bad), "--out", str(out)]) == 1
        assert not out.exists()

    def test_echo_config(self, fast_sim_config, tmp_path):
        out = tmp_path / "r.json"
        echo = tmp_path / "effective.json"
        assert main(["compute", "--config", fast_sim_config, "--out", str(out),
                     "--echo-config", str(echo)]) == 0
        effective = json.loads(echo.read_text())
        assert effective["qp"]["q"] == 2.0
        assert [s["name"] for s in effective["scenarios"]] == \
            [f"attack{i}" for i in range(1, 7)]

    def test_deterministic_outputs(self, fast_sim_config, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert main(["compute", "--config", fast_sim_config, "--out", str(a)]) == 0
        assert main(["compute", "--config", fast_sim_config, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestVerifyCommand:
    def test_passes_on_certified(self, fast_sim_config, computed_result, capsys):
        code = main(["verify", "--config", fast_sim_config, "--result",
                     computed_result, "--oversample", "10", "--seed", "3"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pass"] is True
        assert doc["worst_margin"] <= 1e-6

    def test_fails_on_tampered_bound(self, fast_sim_config, computed_result,
                                     tmp_path, capsys):
        doc = json.loads(open(computed_result).read())
        doc["Uv_tilde"]["lower"] = [-1.5, -1.5]
        doc["Uv_tilde"]["upper"] = [1.5, 1.5]
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(doc))
        code = main(["verify", "--config", fast_sim_config, "--result",
                     str(tampered)])
        assert code == 2
        assert json.loads(capsys.readouterr().out)["pass"] is False

    def test_zero_oversample_is_usage_error(self, fast_sim_config, computed_result):
        assert main(["verify", "--config", fast_sim_config, "--result",
                     computed_result, "--oversample", "0"]) == 1


class TestCheckCommand:
    def test_reports_rows_solution_and_slackness(self, fast_sim_config,
                                                 computed_result, capsys):
        code = main(["check", "--config", fast_sim_config, "--result",
                     computed_result, "--state", "0.4,0.1"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["status"] == "Optimal"
        labels = [r["label"] for r in doc["rows"]]
        assert labels.count("cbf") == 1 and labels.count("clf") == 1
        assert len(doc["z"]) == 6
        assert doc["kkt_residual"] <= 1e-8
        assert "strict_complementarity" in doc

    def test_dimension_mismatch_is_error(self, fast_sim_config, computed_result):
        assert main(["check", "--config", fast_sim_config, "--result",
                     computed_result, "--state", "0.4"]) == 1


class TestSimulateCommand:
    def test_full_suite_exit_zero(self, fast_sim_config, computed_result, tmp_path):
        out = tmp_path / "runs"
        code = main(["simulate", "--config", fast_sim_config, "--result",
                     computed_result, "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        names = [s["name"] for s in summary["scenarios"]]
        assert names == [f"attack{i}" for i in range(1, 7)]
        for entry in summary["scenarios"]:
            if entry["guaranteed"]:
                assert entry["safe"] is True
        assert (out / "attack5.csv").exists()
        assert "runtime" not in (out / "summary.json").read_text()
        assert (out / "run.log").exists()

    def test_scenario_selection(self, fast_sim_config, computed_result, tmp_path):
        out = tmp_path / "runs"
        code = main(["simulate", "--config", fast_sim_config, "--result",
                     computed_result, "--out", str(out), "--scenario",
                     "attack3,attack6"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [s["name"] for s in summary["scenarios"]] == ["attack3", "attack6"]

    def test_unknown_scenario_is_usage_error(self, fast_sim_config,
                                             computed_result, tmp_path):
        assert main(["simulate", "--config", fast_sim_config, "--result",
                     computed_result, "--out", str(tmp_path / "x"),
                     "--scenario", "attack99"]) == 1

    def test_byte_identical_reruns(self, fast_sim_config, computed_result, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            assert main(["simulate", "--config", fast_sim_config, "--result",
                         computed_result, "--out", str(out), "--scenario",
                         "attack3,attack5", "--seed", "1"]) == 0
            outs.append(out)
        for name in ("summary.json", "attack3.csv", "attack5.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestMeshAndDmCommands:
    def test_mesh_export(self, tmp_path, capsys):
        prefix = tmp_path / "m"
        code = main(["mesh", "--n", "3", "--np", "3062", "--out", str(prefix)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n_points"] == 3062
        assert summary["d_a"] < 0.1
        points = (tmp_path / "m.points.csv").read_text().strip().split("\n")
        assert points[0] == "idx,x1,x2,x3"
        assert len(points) == 3063
        faces = (tmp_path / "m.faces.csv").read_text().strip().split("\n")
        assert faces[0] == "face_idx,v1,v2,v3"
        assert len(faces) == summary["n_faces"] + 1

    def test_dm_prints_bound(self, capsys):
        assert main(["dm", "--n", "3", "--rc", "1.0"]) == 0
        value = float(capsys.readouterr().out.strip())
        assert value == pytest.approx(1.9106332362490186, abs=1e-12)

    def test_dm_great_circle_variant(self, capsys):
        assert main(["dm", "--n", "3", "--rc", "1.0", "--great-circle"]) == 0
        value = float(capsys.readouterr().out.strip())
        assert value == pytest.approx(2.0 * np.pi / 3.0, abs=1e-12)

    def test_dm_rejects_degenerate_radius(self):
        assert main(["dm", "--n", "2", "--rc", "0.0"]) == 1
