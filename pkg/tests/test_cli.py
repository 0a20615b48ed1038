import csv

import numpy as np
import pytest

from topic_exposure import cli
from topic_exposure.errors import TrainingError
from topic_exposure.matrices import read_matrix

CONFIG = """
seed = 5
label = "tiny"

[synth]
n_users = 20000

[matrices]
extra_draws = 1

[experiment]
pf_max_iters = 20
folds = [0.6, 0.1, 0.3]

[experiment.train]
epochs = 3
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.toml"
    cfg.write_text(CONFIG)
    assert cli.main(["pipeline", "--config", str(cfg), "--out", str(root / "work")]) == 0
    return root


class TestPipeline:
    def test_outputs(self, run):
        work = run / "work"
        for rel in ("corpus/users.jsonl", "roles.csv", "mock/mocks.csv", "vocab.csv",
                    "matrices/U.csv", "matrices/labels.csv", "estimates/cnn_on.csv",
                    "report/report.csv", "report/report.md", "report/per_user/nn_off.csv"):
            assert (work / rel).exists(), rel
        assert not (work / "estimates" / "pf_on.csv").exists()
        rows = list(csv.DictReader((work / "report" / "report.csv").open()))
        assert len(rows) == 8
        assert [r["status"] for r in rows].count("n/a") == 1

    def test_rerun_is_cached(self, run, capsys):
        args = ["pipeline", "--config", str(run / "cfg.toml"), "--out", str(run / "work")]
        assert cli.main(args) == 0
        out = capsys.readouterr().out
        for stage in ("synth", "classify", "mock", "topics", "matrices", "estimate", "eval"):
            assert f"{stage}: cached" in out

    def test_deleted_output_rebuilt(self, run, capsys):
        (run / "work" / "vocab.csv").unlink()
        assert cli.main(["pipeline", "--config", str(run / "cfg.toml"),
                         "--out", str(run / "work")]) == 0
        out = capsys.readouterr().out
        assert "topics: done" in out and "classify: cached" in out

    def test_changed_option_reruns_dependents(self, run, capsys):
        text = CONFIG.replace("epochs = 3", "epochs = 4")
        (run / "cfg2.toml").write_text(text)
        assert cli.main(["pipeline", "--config", str(run / "cfg2.toml"),
                         "--out", str(run / "work")]) == 0
        out = capsys.readouterr().out
        assert "matrices: cached" in out and "estimate: done" in out
        # restore the shared run for later tests
        assert cli.main(["pipeline", "--config", str(run / "cfg.toml"),
                         "--out", str(run / "work")]) == 0

    def test_byte_identical_report(self, run, tmp_path):
        assert cli.main(["pipeline", "--config", str(run / "cfg.toml"),
                         "--out", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "report" / "report.csv").read_bytes() == \
            (run / "work" / "report" / "report.csv").read_bytes()


class TestSubcommands:
    def test_stage_by_stage(self, run, tmp_path):
        corpus = run / "work" / "corpus"
        roles = tmp_path / "roles.csv"
        assert cli.main(["corpus", "classify", "--users", str(corpus / "users.jsonl"),
                         "--tweets", str(corpus / "tweets.jsonl"), "--out", str(roles)]) == 0
        assert roles.read_bytes() == (run / "work" / "roles.csv").read_bytes()
        assert cli.main(["corpus", "mock", "--seed", "5", "--corpus", str(corpus),
                         "--roles", str(roles), "--extra-draws", "1",
                         "--out", str(tmp_path / "mock")]) == 0
        assert (tmp_path / "mock" / "mocks.csv").read_bytes() == \
            (run / "work" / "mock" / "mocks.csv").read_bytes()
        assert cli.main(["topics", "build", "--tweets", str(corpus / "tweets.jsonl"),
                         "--users", str(corpus / "users.jsonl"), "--roles", str(roles),
                         "--out", str(tmp_path / "vocab.csv")]) == 0
        assert (tmp_path / "vocab.csv").read_bytes() == \
            (run / "work" / "vocab.csv").read_bytes()
        assert cli.main(["matrices", "build", "--corpus", str(corpus), "--roles", str(roles),
                         "--mock", str(tmp_path / "mock"), "--vocab", str(tmp_path / "vocab.csv"),
                         "--out", str(tmp_path / "m")]) == 0
        for name in ("F.csv", "A.csv", "P.csv", "U.csv", "labels.csv"):
            assert (tmp_path / "m" / name).read_bytes() == \
                (run / "work" / "matrices" / name).read_bytes()
        out = tmp_path / "cnn_off.csv"
        assert cli.main(["estimate", "--method", "cnn", "--matrices", str(tmp_path / "m"),
                         "--config", str(run / "cfg.toml"), "--out", str(out)]) == 0
        assert out.read_bytes() == (run / "work" / "estimates" / "cnn_off.csv").read_bytes()
        assert cli.main(["eval", "run", "--config", str(run / "cfg.toml"),
                         "--matrices", str(tmp_path / "m"),
                         "--estimates", str(run / "work" / "estimates"),
                         "--out", str(tmp_path / "report")]) == 0
        assert (tmp_path / "report" / "report.csv").read_bytes() == \
            (run / "work" / "report" / "report.csv").read_bytes()

    def test_engager_rows(self, run, tmp_path):
        out = tmp_path / "e.csv"
        assert cli.main(["estimate", "--method", "nn", "--seed", "1", "--rows", "engagers",
                         "--matrices", str(run / "work" / "matrices"), "--out", str(out)]) == 0
        ids, _, e_hat = read_matrix(out)
        assert all(not i.startswith("mock:") for i in ids)
        assert set(np.unique(e_hat)) <= {0.0, 1.0}

    def test_synth_generate(self, tmp_path):
        cfg = tmp_path / "s.toml"
        cfg.write_text("seed = 3\n[synth]\nn_users = 1000\n")
        assert cli.main(["synth", "generate", "--config", str(cfg),
                         "--out", str(tmp_path / "c")]) == 0
        assert (tmp_path / "c" / "exposure_truth.csv").exists()


class TestExitCodes:
    def test_missing_seed_fails_before_work(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[synth]\nn_users = 1000\n")
        assert cli.main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 2
        assert not (tmp_path / "w").exists()

    @pytest.mark.parametrize("text", [
        "seed = 1\n[synth]\nn_users = 1000\n[bogus]\n",
        "seed = 1\n[synth]\ncolour = 1\n",
        "seed = 1\n",
        "seed = 1\n[synth]\n[experiment.train]\nepochs = 0\n",
        "seed = 'x'\n[synth]\n",
        "seed = 1\n[synth\n",
    ])
    def test_config_errors(self, tmp_path, text):
        cfg = tmp_path / "c.toml"
        cfg.write_text(text)
        assert cli.main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 2

    def test_missing_artifact_names_step(self, tmp_path, capsys):
        code = cli.main(["estimate", "--method", "nn", "--seed", "1",
                         "--matrices", str(tmp_path), "--out", str(tmp_path / "x.csv")])
        assert code == 3
        assert "matrices build" in capsys.readouterr().err

    def test_pf_with_profile_rejected(self, tmp_path):
        assert cli.main(["estimate", "--method", "pf", "--profile", "on", "--seed", "1",
                         "--matrices", str(tmp_path), "--out", str(tmp_path / "x.csv")]) == 2

    def test_dangling_tweet_strict(self, tmp_path):
        (tmp_path / "users.jsonl").write_text(
            '{"user_id": "a", "verified": false, "is_org": false, "registered_days": 1, '
            '"followers": 0, "friends": 0}\n')
        (tmp_path / "tweets.jsonl").write_text(
            '{"tweet_id": "1", "user_id": "zz", "day": 0, "text": "hi"}\n')
        args = ["corpus", "classify", "--users", str(tmp_path / "users.jsonl"),
                "--tweets", str(tmp_path / "tweets.jsonl"), "--out", str(tmp_path / "r.csv")]
        assert cli.main(args + ["--strict"]) == 3
        assert cli.main(args) == 0

    def test_numeric_failure(self, monkeypatch, tmp_path):
        def boom(args):
            raise TrainingError("loss became NaN at epoch 1, batch 1")
        monkeypatch.setattr(cli, "cmd_synth_generate", boom)
        assert cli.main(["synth", "generate", "--seed", "1", "--out", str(tmp_path)]) == 4
