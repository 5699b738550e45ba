import json

import numpy as np
import pytest

from pgop import bounds, cli
from pgop.errors import ConfigError
from pgop.experiments import (
    ExperimentConfig,
    class_optimum,
    iterations_to_fraction,
    parse_config_text,
    preset,
    regret_profile,
    rerun_from_manifest,
    run_experiment,
    run_landscape,
    run_sweep,
    verify,
)
from pgop.experiments.sweep import expand_axes
from pgop.mdp import build_four_room, evaluate_policy
from pgop.policy import SHARED


@pytest.fixture
def quick_config():
    return preset("op-reinforce", n_iters=5)


class TestConfig:
    def test_round_trip(self):
        for name in ("fig1-left", "fig1-middle", "fig1-anneal", "op-reinforce", "offpolicy-optimal"):
            config = preset(name)
            assert ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config

    def test_field_diagnostics(self):
        with pytest.raises(ConfigError, match="'projection'"):
            ExperimentConfig.from_dict({"projection": {"kind": "alpha", "alpha": 2.0}})
        with pytest.raises(ConfigError, match="unknown config fields"):
            ExperimentConfig.from_dict({"iterations": 3})
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text('{"n_iters": 3,\n "seed": }')

    def test_line_search_needs_one(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"alpha_schedule": {"kind": "line_search", "values": [0.25, 0.5]}})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("fig2")


class TestRun:
    def test_outputs(self, tmp_path, quick_config):
        run = run_experiment(quick_config, tmp_path)
        assert {p.name for p in tmp_path.iterdir()} == {"curve.csv", "final_policy.json", "manifest.json", "timing.json"}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"] == quick_config.to_dict()
        assert manifest["final_j"] == run.final_j
        assert len((tmp_path / "curve.csv").read_text().splitlines()) == 1 + 1 + quick_config.n_iters

    def test_byte_identical(self, tmp_path, quick_config):
        run_experiment(quick_config, tmp_path / "a")
        run_experiment(quick_config, tmp_path / "b")
        for name in ("curve.csv", "final_policy.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_reruns(self, tmp_path, quick_config):
        run_experiment(quick_config, tmp_path / "a")
        rerun_from_manifest(tmp_path / "a" / "manifest.json", tmp_path / "b")
        assert (tmp_path / "a" / "curve.csv").read_bytes() == (tmp_path / "b" / "curve.csv").read_bytes()

    def test_partial_marker_on_failure(self, tmp_path):
        config = ExperimentConfig.from_dict({"env": {"kind": "file", "path": str(tmp_path / "missing.json")}})
        with pytest.raises(OSError):
            run_experiment(config, tmp_path / "out")
        assert "aborted" in (tmp_path / "out" / "PARTIAL").read_text()

    def test_random_env_and_init(self, tmp_path):
        config = ExperimentConfig.from_dict({
            "env": {"kind": "random_mdp", "n_states": 4, "n_actions": 3},
            "policy_mode": "tabular", "init": {"kind": "random", "scale": 1.0}, "n_iters": 3, "seed": 11,
        })
        run = run_experiment(config)
        assert run.mdp.n_states == 4
        assert np.all(np.diff(run.returns) > 0)

    def test_fixed_sampling_from_file(self, tmp_path):
        mdp = build_four_room()
        path = tmp_path / "sampler.json"
        path.write_text(json.dumps({"probs": np.full((104, 4), 0.25).tolist()}))
        config = preset("offpolicy-optimal", sampling_policy={"path": str(path)}, n_iters=2)
        assert run_experiment(config).final_j > evaluate_policy(mdp, np.full((104, 4), 0.25)).j


def test_regret_helpers():
    returns = [0.0, 0.5, 0.9, 1.0, 1.0]
    assert iterations_to_fraction(returns, 1.0) == 2
    assert iterations_to_fraction(returns, 2.0) is None
    total, slope = regret_profile(returns, 1.0)
    assert total == pytest.approx(0.6)
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_class_optimum_shared(four_room):
    j_best, policy = class_optimum(four_room, SHARED)
    assert policy.mode == SHARED
    assert j_best == pytest.approx(evaluate_policy(four_room, policy.probs()).j)
    assert j_best < 0.8261686238355865


class TestLandscapeCommand:
    def test_files_and_validation(self, tmp_path):
        report = run_landscape(out_dir=tmp_path)
        assert report["passed"]
        for anchor in bounds.DEFAULT_ANCHORS:
            rows = bounds.read_landscape_csv(tmp_path / f"landscape_t{anchor:g}.csv")
            assert len(rows) == 101

    def test_wrong_environment(self):
        with pytest.raises(ConfigError):
            run_landscape(ExperimentConfig.from_dict({"env": {"kind": "random_mdp", "n_states": 3, "n_actions": 4}}))


class TestSweep:
    def test_empty_axes_equal_single_run(self, tmp_path, quick_config):
        summary = run_sweep(quick_config, {}, tmp_path / "sweep")
        assert len(summary["cells"]) == 1
        run_experiment(quick_config, tmp_path / "single")
        assert ((tmp_path / "sweep" / "cell_0000" / "curve.csv").read_bytes()
                == (tmp_path / "single" / "curve.csv").read_bytes())

    def test_deterministic_and_parallel(self, quick_config):
        axes = {"alpha": [0.5, 1.0], "projection": ["kl", "alpha"], "seed": [0, 1]}
        a = run_sweep(quick_config, axes)
        b = run_sweep(quick_config, axes, jobs=2)
        assert a == b
        assert len(a["cells"]) == 8

    def test_guard(self, quick_config):
        with pytest.raises(ConfigError):
            expand_axes({"seed": list(range(101)), "alpha": [0.5] * 100})

    def test_small_alpha_kl_has_largest_regret_slope(self):
        base = preset("fig1-left", n_iters=40)
        summary = run_sweep(base, {"alpha": [0.25, 0.5, 1.0], "projection": ["kl", "alpha"]}, jobs=3)
        assert len(summary["cells"]) == 6
        worst = max(summary["cells"], key=lambda c: c["regret_slope"])
        assert worst["params"] == {"projection": "kl", "alpha": 0.25}


class TestVerify:
    def test_selected_checks_pass(self):
        report = verify(["gradient_identity", "operator_bound", "landscape"])
        assert report["passed"]
        assert all(c["wallclock_s"] >= 0 for c in report["checks"])

    def test_sign_flip_canary(self, monkeypatch):
        original = bounds.operator_lower_bound

        def flipped(evaluation, mu, pi):
            # log term with the wrong sign
            return 2 * evaluation.j - original(evaluation, mu, pi)

        monkeypatch.setattr(bounds, "operator_lower_bound", flipped)
        report = verify(["operator_bound"])
        status = {c["name"]: c["passed"] for c in report["checks"]}
        assert not report["passed"]
        assert not status["operator_bound_valid"]

    def test_unknown_check(self):
        with pytest.raises(ConfigError):
            verify(["nope"])


class TestCli:
    def test_run_and_eval(self, tmp_path, capsys):
        assert cli.main(["run", "--preset", "op-reinforce", "--out", str(tmp_path / "run")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["final_j"] > 0.18
        policy = tmp_path / "run" / "final_policy.json"
        assert cli.main(["eval", "--preset", "op-reinforce", "--policy", str(policy)]) == 0
        assert json.loads(capsys.readouterr().out)["j"] == pytest.approx(out["final_j"])

    def test_seed_and_config(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(preset("op-reinforce", n_iters=2).to_dict()))
        assert cli.main(["run", "--config", str(path), "--seed", "3", "--out", str(tmp_path / "o")]) == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 3

    def test_config_errors_exit_nonzero(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"n_iters": "many"}')
        assert cli.main(["run", "--config", str(path)]) == 2
        assert "n_iters" in capsys.readouterr().err
        assert cli.main(["run"]) == 2

    def test_landscape_and_sweep(self, tmp_path, capsys):
        assert cli.main(["landscape", "--out", str(tmp_path / "land")]) == 0
        assert len(list((tmp_path / "land").glob("landscape_t*.csv"))) == 3
        capsys.readouterr()
        axes = json.dumps({"alpha": [0.5, 1.0]})
        assert cli.main(["sweep", "--preset", "fig1-left", "--axes", axes, "--jobs", "2",
                         "--out", str(tmp_path / "sweep")]) == 0
        summary = json.loads((tmp_path / "sweep" / "summary.json").read_text())
        assert len(summary["cells"]) == 2

    def test_verify_failure_exit(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(bounds, "operator_lower_bound", lambda ev, mu, pi: ev.j + 1.0)
        assert cli.main(["verify", "--checks", "operator_bound", "--out", str(tmp_path)]) == 1
        assert not json.loads((tmp_path / "verify.json").read_text())["passed"]
