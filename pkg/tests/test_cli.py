# tests/test_cli.py
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from recps.main import cli
from recps.services.scoring import load_score_table
from recps.services.shadow import load_ensemble
from tests.conftest import FAST_RUN


def fast_flags(**changes):
    values = {**FAST_RUN, **changes}
    flags = []
    for key, value in values.items():
        flags += ["--set", f"{key}={value}"]
    return flags


def invoke(*args):
    return CliRunner().invoke(cli, [str(arg) for arg in args])


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """Toy log plus a prepared ensemble directory shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    toy = root / "toy.tsv"
    result = invoke("toy", toy, "--seed", 0)
    assert result.exit_code == 0, result.output

    ensemble_dir = root / "run" / "ensemble"
    result = invoke("prepare", "--dataset", toy, "--out", ensemble_dir, "--seed", 1, *fast_flags())
    assert result.exit_code == 0, result.output
    return root, toy, ensemble_dir


class TestPrepare:
    """prepare writes a self-describing ensemble directory."""

    def test_directory_layout(self, prepared):
        _, _, ensemble_dir = prepared

        assert (ensemble_dir / "manifest.yaml").is_file()
        assert len(list((ensemble_dir / "models").glob("shadow_*.npz"))) == FAST_RUN["num_shadows"]
        assert (ensemble_dir / "target" / "model.npz").is_file()

    def test_independent_runs_are_byte_identical(self, prepared, tmp_path):
        _, toy, ensemble_dir = prepared
        again = tmp_path / "again"

        result = invoke("prepare", "--dataset", toy, "--out", again, "--seed", 1, *fast_flags())

        assert result.exit_code == 0, result.output
        assert (again / "manifest.yaml").read_bytes() == (ensemble_dir / "manifest.yaml").read_bytes()
        assert (again / "models" / "shadow_0000.npz").read_bytes() == (ensemble_dir / "models" / "shadow_0000.npz").read_bytes()

        for name, directory in (("first", ensemble_dir), ("second", again)):
            assert invoke("score", directory, "--out", tmp_path / name / "scores").exit_code == 0
            assert invoke("attack", directory, "--out", tmp_path / name / "attack").exit_code == 0
        for relative in ("scores/interactions.csv", "scores/users.csv", "scores/residual.csv", "attack/roc.csv"):
            assert (tmp_path / "first" / relative).read_bytes() == (tmp_path / "second" / relative).read_bytes()

    def test_missing_dataset_is_usage_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("RECPS_DATASET_PATH", raising=False)
        result = invoke("prepare", "--out", tmp_path / "out", *fast_flags())

        assert result.exit_code == 2
        assert "Error" in result.output

    def test_nonexistent_dataset_file(self, tmp_path):
        result = invoke("prepare", "--dataset", tmp_path / "absent.tsv", "--out", tmp_path / "out")

        assert result.exit_code == 2

    def test_invalid_setting(self, tmp_path, prepared):
        _, toy, _ = prepared
        result = invoke("prepare", "--dataset", toy, "--out", tmp_path / "out", "--set", "num_shadows=1")

        assert result.exit_code == 2


class TestScoreAttackUnlearn:
    """Commands that consume the ensemble directory."""

    def test_score_all_users(self, prepared):
        root, _, ensemble_dir = prepared

        result = invoke("score", ensemble_dir)

        assert result.exit_code == 0, result.output
        table = load_score_table(root / "run" / "scores")
        ensemble = load_ensemble(ensemble_dir)
        assert len(table) + len(table.residual) == ensemble.membership.shape[1]
        assert table.ensemble_ref == ensemble.digest
        assert "Scored" in result.output

    def test_single_user_matches_full_table(self, prepared, tmp_path):
        root, _, ensemble_dir = prepared
        assert invoke("score", ensemble_dir, "--out", tmp_path / "full").exit_code == 0

        result = invoke("score", ensemble_dir, "--user", "u0001", "--out", tmp_path / "one")

        assert result.exit_code == 0, result.output
        full = pd.read_csv(tmp_path / "full" / "interactions.csv", skiprows=1, dtype={"user": str, "item": str})
        one = pd.read_csv(tmp_path / "one" / "interactions.csv", skiprows=1, dtype={"user": str, "item": str})
        expected = full[full["user"] == "u0001"].reset_index(drop=True)
        assert one.equals(expected)

    def test_global_threshold_diagnostic(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared
        assert invoke("score", ensemble_dir, "--out", tmp_path / "plain").exit_code == 0

        result = invoke("score", ensemble_dir, "--global-threshold", 0.5, "--out", tmp_path / "diag")

        assert result.exit_code == 0, result.output
        plain = pd.read_csv(tmp_path / "plain" / "interactions.csv", skiprows=1, dtype={"user": str, "item": str})
        diag = pd.read_csv(tmp_path / "diag" / "interactions.csv", skiprows=1, dtype={"user": str, "item": str})
        assert "global_score" not in plain.columns
        assert diag[["user", "item", "score"]].equals(plain)
        assert (diag["global_score"] >= 0).all()
        assert (diag["global_score"] <= diag["score"] + 1e-12).all()
        assert (tmp_path / "diag" / "users.csv").read_bytes() == (tmp_path / "plain" / "users.csv").read_bytes()

    def test_unknown_user(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared

        result = invoke("score", ensemble_dir, "--user", "nobody", "--out", tmp_path / "x")

        assert result.exit_code == 1
        assert "nobody" in result.output

    def test_tampered_manifest_refuses(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared
        copy = tmp_path / "copy"
        copy.mkdir()
        for path in ensemble_dir.rglob("*"):
            if path.is_file():
                target = copy / path.relative_to(ensemble_dir)
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(path.read_bytes())
        manifest = copy / "manifest.yaml"
        manifest.write_text(manifest.read_text().replace("m: 4", "m: 5"))

        result = invoke("score", copy, "--out", tmp_path / "scores")

        assert result.exit_code != 0
        assert not (tmp_path / "scores").exists()

    def test_attack_outputs(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared

        first = invoke("attack", ensemble_dir, "--out", tmp_path / "a")
        second = invoke("attack", ensemble_dir, "--out", tmp_path / "b")

        assert first.exit_code == 0, first.output
        assert second.exit_code == 0, second.output
        lines = (tmp_path / "a" / "roc.csv").read_text().splitlines()
        assert lines[0] == "fpr,tpr"
        assert lines[1] == "0,0"
        assert lines[-1] == "1,1"
        assert (tmp_path / "a" / "roc.csv").read_bytes() == (tmp_path / "b" / "roc.csv").read_bytes()
        metrics = (tmp_path / "a" / "metrics.txt").read_text()
        assert "auc=" in metrics
        assert "hr@10=" in metrics
        assert "config_hash=" in metrics

    def test_attack_missing_target_checkpoint(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared

        result = invoke("attack", ensemble_dir, "--target", tmp_path / "none.npz", "--out", tmp_path / "a")

        assert result.exit_code == 2

    def test_unlearn_then_report(self, prepared):
        root, _, ensemble_dir = prepared
        assert invoke("score", ensemble_dir).exit_code == 0
        assert invoke("attack", ensemble_dir).exit_code == 0

        result = invoke(
            "unlearn", ensemble_dir, "--scores", root / "run" / "scores",
            "--set", "removal_arms=interaction-level,random-interaction",
        )

        assert result.exit_code == 0, result.output
        for arm in ("interaction-level", "random-interaction"):
            assert (root / "run" / "unlearn" / arm / "histogram.csv").is_file()
        assert "random-interaction" in result.output

        report = invoke("report", root / "run")
        assert report.exit_code == 0, report.output
        assert "attack" in report.output
        assert "unlearn/interaction-level" in report.output

    def test_unlearn_sweep_writes_one_directory_per_point(self, prepared, tmp_path):
        _, _, ensemble_dir = prepared

        result = invoke(
            "unlearn", ensemble_dir, "--out", tmp_path / "sweep",
            "--set", "removal_arms=user-level,interaction-level",
            "--set", "removal_interaction_fractions=0.3,0.6",
        )

        assert result.exit_code == 0, result.output
        assert (tmp_path / "sweep" / "user-level" / "metrics.txt").is_file()
        for point in ("users-0.05_interactions-0.3", "users-0.05_interactions-0.6"):
            plan = (tmp_path / "sweep" / "interaction-level" / point / "plan.txt").read_text()
            assert f"interaction_fraction={point.rsplit('-', 1)[1]}" in plan
        removed = [
            len((tmp_path / "sweep" / "interaction-level" / point / "removed.csv").read_text().splitlines())
            for point in ("users-0.05_interactions-0.3", "users-0.05_interactions-0.6")
        ]
        assert removed[0] <= removed[1]

    def test_unlearn_rejects_foreign_scores(self, prepared, tmp_path):
        root, _, ensemble_dir = prepared
        assert invoke("score", ensemble_dir, "--out", tmp_path / "scores").exit_code == 0
        path = tmp_path / "scores" / "interactions.csv"
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("# ensemble=someone-else\n" + "".join(lines[1:]))

        result = invoke("unlearn", ensemble_dir, "--scores", tmp_path / "scores", "--out", tmp_path / "u")

        assert result.exit_code == 1
        assert "different ensemble" in result.output

    def test_report_without_metrics(self, tmp_path):
        assert invoke("report", tmp_path).exit_code == 2


@pytest.mark.slow
class TestToyAcceptance:
    """The bundled toy configuration end to end."""

    def test_toy_run(self, tmp_path):
        config = Path(__file__).resolve().parents[1] / "configs" / "toy.env"
        toy = tmp_path / "toy.tsv"
        assert invoke("toy", toy).exit_code == 0
        ensemble_dir = tmp_path / "run" / "ensemble"

        prepared = invoke("prepare", "--dataset", toy, "--config", config, "--out", ensemble_dir, "--workers", 2)
        assert prepared.exit_code == 0, prepared.output
        assert invoke("score", ensemble_dir).exit_code == 0
        attacked = invoke("attack", ensemble_dir)
        assert attacked.exit_code == 0, attacked.output

        metrics = (tmp_path / "run" / "attack" / "metrics.txt").read_text().splitlines()
        values = dict(line.split("=", 1) for line in metrics)
        assert float(values["auc"]) > 0.5
        table = load_score_table(tmp_path / "run" / "scores")
        assert (table.interactions["score"] >= 0).all()
