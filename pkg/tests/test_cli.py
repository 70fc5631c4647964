"""End-to-end CLI tests: exit codes, JSON stdout, file side effects."""

import json
import os
import signal
import subprocess
import sys
import time
import urllib.request

import numpy as np
import pytest

from contrast_forge.cli import main
from contrast_forge.negation import build_negation_set
from contrast_forge.ply_io import load_png, save_png, save_splat_ply
from contrast_forge.prompts import load_corpus
from contrast_forge.scorer_http import start_mock_server
from contrast_forge.splat_render import GaussianCloud


def run_cli(capsys, argv):
    """Invoke the CLI in-process; returns (exit code, parsed stdout)."""
    code = main(argv)
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if captured.out.strip() else None
    return code, payload


@pytest.fixture(scope="module")
def server_url():
    server, url = start_mock_server()
    yield url
    server.shutdown()


@pytest.fixture()
def tiny_ply(tmp_path):
    rng = np.random.default_rng(11)
    n = 6
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    cloud = GaussianCloud(
        positions=rng.uniform(-0.3, 0.3, size=(n, 3)),
        log_scales=np.full((n, 3), np.log(0.08)),
        rotations=quats,
        colors=rng.uniform(0.2, 0.8, size=(n, 3)),
        opacities=np.full(n, 1.5),
    )
    path = tmp_path / "tiny.ply"
    save_splat_ply(cloud, str(path))
    return str(path)


class TestUsageErrors:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["negate"]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0


class TestNegate:
    def test_golden_prompt(self, capsys):
        code, payload = run_cli(
            capsys, ["negate", "--prompt", "white canvas shoes, red jacket"])
        assert code == 0
        assert "red canvas shoes" in payload["y_neg"]
        expected = build_negation_set("white canvas shoes, red jacket")
        assert payload["y_neg"] == expected.y_neg
        assert payload["warnings"] == []
        assert [m["text"] for m in payload["negated"]] == \
            [m.render_spatial() for m in expected.negated_maps]

    def test_spatial_prompt_reports_reversal(self, capsys):
        code, payload = run_cli(
            capsys, ["negate", "--prompt", "black glove on the left hand"])
        assert code == 0
        assert payload["spatial_reversals"] == \
            ["black glove on the right hand"]

    def test_remote_llm_url_matches_rule_client(self, capsys, server_url):
        prompt = "white canvas shoes, red jacket"
        code, payload = run_cli(
            capsys, ["negate", "--prompt", prompt, "--llm-url", server_url])
        assert code == 0
        assert payload["y_neg"] == build_negation_set(prompt).y_neg

    def test_env_var_selects_endpoint(self, capsys, server_url, monkeypatch):
        monkeypatch.setenv("CONTRAST_FORGE_SCORER_URL", server_url)
        prompt = "baseball cap"
        code, payload = run_cli(capsys, ["negate", "--prompt", prompt])
        assert code == 0
        assert payload["y_neg"] == build_negation_set(prompt).y_neg


class TestPrompts:
    def test_gen_five_unique(self, capsys):
        code, payload = run_cli(
            capsys, ["prompts", "gen", "--n", "5", "--seed", "1"])
        assert code == 0
        assert len(payload) == 5
        texts = [record["text"] for record in payload]
        assert len(set(texts)) == 5

    def test_gen_to_file_round_trips(self, capsys, tmp_path):
        out = tmp_path / "corpus.json"
        code, payload = run_cli(
            capsys,
            ["prompts", "gen", "--n", "8", "--seed", "3",
             "--out", str(out)])
        assert code == 0
        assert payload == {"path": str(out), "count": 8}
        assert len(load_corpus(out)) == 8

    def test_sample_is_subset_and_deterministic(self, capsys, tmp_path):
        out = tmp_path / "corpus.json"
        assert main(["prompts", "gen", "--n", "20", "--seed", "0",
                     "--out", str(out)]) == 0
        capsys.readouterr()
        code, first = run_cli(
            capsys,
            ["prompts", "sample", "--corpus", str(out), "--k", "5",
             "--seed", "7"])
        assert code == 0
        assert len(first) == 5
        corpus_ids = {r.id for r in load_corpus(out)}
        assert {r["id"] for r in first} <= corpus_ids
        code, second = run_cli(
            capsys,
            ["prompts", "sample", "--corpus", str(out), "--k", "5",
             "--seed", "7"])
        assert second == first

    def test_oversized_sample_is_runtime_error(self, capsys, tmp_path):
        out = tmp_path / "corpus.json"
        assert main(["prompts", "gen", "--n", "3", "--seed", "0",
                     "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["prompts", "sample", "--corpus", str(out),
                     "--k", "10"]) == 1


class TestGradcheck:
    def test_small_audit_passes(self, capsys):
        code, payload = run_cli(
            capsys,
            ["gradcheck", "--scenes", "3", "--tol", "1e-3",
             "--side", "12"])
        assert code == 0
        assert payload["passed"] is True
        assert payload["scenes"] == 3
        assert payload["max_rel_err"] <= 1e-3

    def test_impossible_tolerance_fails(self, capsys):
        code, payload = run_cli(
            capsys,
            ["gradcheck", "--scenes", "2", "--tol", "1e-15",
             "--side", "12"])
        assert code == 1
        assert payload["passed"] is False


class TestScore:
    @pytest.fixture()
    def image_path(self, tmp_path):
        rng = np.random.default_rng(5)
        image = rng.integers(0, 256, size=(16, 16, 3)) / 255.0
        path = tmp_path / "probe.png"
        save_png(str(path), image)
        return str(path)

    def test_mock_scores_and_weights(self, capsys, image_path):
        code, payload = run_cli(
            capsys, ["score", "--image", image_path, "--text", "red jacket"])
        assert code == 0
        models = [row["model"] for row in payload["scores"]]
        assert models == ["mock:brightness", "mock:target-patch"]
        weights = payload["weights"]
        assert pytest.approx(sum(weights.values())) == 1.0
        assert all(w > 0 for w in weights.values())

    def test_model_filter(self, capsys, image_path):
        code, payload = run_cli(
            capsys,
            ["score", "--image", image_path, "--text", "red jacket",
             "--model", "mock:brightness"])
        assert code == 0
        assert [row["model"] for row in payload["scores"]] == \
            ["mock:brightness"]

    def test_unknown_model_is_runtime_error(self, capsys, image_path):
        assert main(["score", "--image", image_path, "--text", "x",
                     "--model", "no-such-model"]) == 1

    def test_remote_url_matches_mocks(self, capsys, image_path, server_url):
        code, local = run_cli(
            capsys, ["score", "--image", image_path, "--text", "red jacket"])
        assert code == 0
        code, remote = run_cli(
            capsys,
            ["score", "--image", image_path, "--text", "red jacket",
             "--scorer-url", server_url])
        assert code == 0
        assert remote["scores"] == local["scores"]

    def test_dead_endpoint_is_runtime_error(self, capsys, image_path,
                                            monkeypatch):
        monkeypatch.setenv("CONTRAST_FORGE_SCORER_URL", "http://127.0.0.1:9")
        assert main(["score", "--image", image_path, "--text", "x"]) == 1

    def test_missing_image_is_runtime_error(self, capsys, tmp_path):
        assert main(["score", "--image", str(tmp_path / "nope.png"),
                     "--text", "x"]) == 1


class TestRender:
    def test_turntable_pngs(self, capsys, tiny_ply, tmp_path):
        out = tmp_path / "views"
        code, payload = run_cli(
            capsys,
            ["render", "--ply", tiny_ply, "--out", str(out),
             "--views", "3", "--resolution", "24"])
        assert code == 0
        assert payload["splats"] == 6
        assert len(payload["pngs"]) == 3
        for path in payload["pngs"]:
            assert os.path.exists(path)
            assert load_png(path).shape == (24, 24, 3)

    def test_bad_background_is_runtime_error(self, capsys, tiny_ply,
                                             tmp_path):
        assert main(["render", "--ply", tiny_ply,
                     "--out", str(tmp_path / "v"),
                     "--background", "plaid"]) == 1

    def test_missing_ply_is_runtime_error(self, capsys, tmp_path):
        assert main(["render", "--ply", str(tmp_path / "nope.ply"),
                     "--out", str(tmp_path / "v")]) == 1


class TestGenerate:
    def test_tiny_run_writes_artifacts(self, capsys, tmp_path):
        out = tmp_path / "run"
        code, payload = run_cli(
            capsys,
            ["generate", "--prompt", "red jacket", "--out", str(out),
             "--seed", "5",
             "--set", "iterations=3", "--set", "resolution=24",
             "--set", "init_count=40", "--set", "preference_weight=0.0",
             "--set", "densify_start=9999", "--set", "prune_start=9999"])
        assert code == 0
        assert payload["aborted"] is False
        assert payload["final_count"] == 40
        assert payload["scorers"] == []
        assert os.path.exists(payload["paths"]["report"])
        assert os.path.exists(payload["paths"]["ply"])

    def test_remote_scorers_in_the_loop(self, capsys, tmp_path, server_url):
        out = tmp_path / "run"
        code, payload = run_cli(
            capsys,
            ["generate", "--prompt", "red jacket", "--out", str(out),
             "--scorer-url", server_url,
             "--set", "iterations=2", "--set", "resolution=16",
             "--set", "init_count=30",
             "--set", "densify_start=9999", "--set", "prune_start=9999"])
        assert code == 0
        assert payload["scorers"] == ["mock:brightness", "mock:target-patch"]

    def test_config_file_plus_overrides(self, capsys, tmp_path):
        config_path = tmp_path / "run.cfg"
        config_path.write_text(
            "iterations = 2\nresolution = 16\ninit_count = 30\n"
            "preference_weight = 0.0\n"
            "densify_start = 9999\nprune_start = 9999\n")
        out = tmp_path / "run"
        code, payload = run_cli(
            capsys,
            ["generate", "--prompt", "red jacket", "--out", str(out),
             "--config", str(config_path), "--iterations", "3"])
        assert code == 0
        report = json.load(open(payload["paths"]["report"]))
        assert report["config"]["iterations"] == 3
        assert report["config"]["resolution"] == 16

    def test_unknown_config_key_is_runtime_error(self, capsys, tmp_path):
        assert main(["generate", "--prompt", "red jacket",
                     "--out", str(tmp_path / "run"),
                     "--set", "turbo=yes"]) == 1

    def test_bad_set_syntax_is_runtime_error(self, capsys, tmp_path):
        assert main(["generate", "--prompt", "red jacket",
                     "--out", str(tmp_path / "run"),
                     "--set", "iterations"]) == 1


class TestMockServe:
    def test_serves_health_until_interrupted(self, tmp_path):
        env = dict(os.environ)
        env["PYTHONUNBUFFERED"] = "1"
        proc = subprocess.Popen(
            [sys.executable, "-m", "contrast_forge.cli", "mock-serve",
             "--port", "0"],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            env=env,
        )
        try:
            buffer = ""
            deadline = time.time() + 20
            payload = None
            while time.time() < deadline:
                buffer += proc.stdout.readline()
                try:
                    payload = json.loads(buffer)
                    break
                except json.JSONDecodeError:
                    continue
            assert payload is not None, "server never announced its URL"
            with urllib.request.urlopen(payload["url"] + "/health",
                                        timeout=5) as response:
                health = json.loads(response.read())
            assert health["status"] == "ok"
            assert health["models"] == payload["models"]
        finally:
            proc.send_signal(signal.SIGINT)
            assert proc.wait(timeout=10) == 0
