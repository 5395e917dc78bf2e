"""Command-line surface: every subcommand end to end plus exit codes."""

import json

import pytest

from affground import cli


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    """A corpus generated through the CLI itself."""
    out = tmp_path_factory.mktemp("cli_corpus")
    code = cli.main(["synth", "--out-dir", str(out),
                     "--num-train", "12", "--num-test", "6",
                     "--sigma", "0.0", "--seed", "0"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cli_run(cli_corpus, tmp_path_factory):
    """A short CLI training run with a checkpoint."""
    out = tmp_path_factory.mktemp("cli_run")
    code = cli.main(["train", "--cache-dir", str(cli_corpus),
                     "--epochs", "2", "--batch-size", "8",
                     "--out-dir", str(out)])
    assert code == 0
    return out


class TestSynth:
    def test_writes_cache_and_records(self, cli_corpus):
        assert (cli_corpus / "manifest.json").is_file()
        assert (cli_corpus / "payload.bin").is_file()
        records = json.loads((cli_corpus / "records.json").read_text())
        assert len(records) == 18

    def test_bad_spec_exits_2(self, tmp_path, capsys):
        code = cli.main(["synth", "--out-dir", str(tmp_path / "x"),
                         "--num-classes", "7"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_run_artifacts(self, cli_run):
        assert (cli_run / "config.json").is_file()
        assert (cli_run / "checkpoint" / "manifest.json").is_file()

    def test_epoch_lines_printed(self, cli_corpus, capsys):
        code = cli.main(["train", "--cache-dir", str(cli_corpus),
                         "--epochs", "1", "--max-steps", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "epoch" in out
        assert "done: 1 steps" in out

    def test_missing_cache_exits_2(self, capsys):
        code = cli.main(["train"])
        assert code == 2
        assert "cache" in capsys.readouterr().err

    def test_bad_flag_value_exits_2(self, cli_corpus, capsys):
        code = cli.main(["train", "--cache-dir", str(cli_corpus),
                         "--temperature", "-1.0"])
        assert code == 2

    def test_config_file_base_with_flag_override(self, cli_corpus, tmp_path,
                                                 capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "cache_dir": str(cli_corpus), "epochs": 5, "max_steps": 1}))
        code = cli.main(["train", "--config", str(cfg_path),
                         "--max-steps", "2"])
        assert code == 0
        assert "done: 2 steps" in capsys.readouterr().out


class TestEval:
    def test_scores_checkpoint(self, cli_corpus, cli_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code = cli.main(["eval", "--cache-dir", str(cli_corpus),
                         "--checkpoint", str(cli_run / "checkpoint"),
                         "--out-dir", str(out)])
        assert code == 0
        line = capsys.readouterr().out
        assert "instances 6" in line
        assert "kld" in line
        assert (out / "metrics.tsv").is_file()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_instances"] == 6

    def test_bogus_checkpoint_exits_2(self, cli_corpus, tmp_path, capsys):
        code = cli.main(["eval", "--cache-dir", str(cli_corpus),
                         "--checkpoint", str(tmp_path / "nothing")])
        assert code == 2


class TestDiscover:
    def test_without_checkpoint(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "disc"
        code = cli.main(["discover", "--cache-dir", str(cli_corpus),
                         "--out-dir", str(out)])
        assert code == 0
        line = capsys.readouterr().out
        assert "instances 18" in line
        assert (out / "discover_summary.json").is_file()

    def test_with_checkpoint(self, cli_corpus, cli_run, capsys):
        code = cli.main(["discover", "--cache-dir", str(cli_corpus),
                         "--checkpoint", str(cli_run / "checkpoint")])
        assert code == 0
        assert "reliable" in capsys.readouterr().out


class TestAblate:
    def test_inline_grid(self, cli_corpus, tmp_path, capsys):
        out = tmp_path / "abl"
        code = cli.main(["ablate", "--cache-dir", str(cli_corpus),
                         "--epochs", "1", "--max-steps", "1",
                         "--out-dir", str(out),
                         "--grid", '{"lr": [0.001, 0.01]}'])
        assert code == 0
        printed = capsys.readouterr().out
        assert "baseline" in printed
        assert printed.count("sweep") == 2
        assert (out / "ablation.tsv").is_file()

    def test_grid_from_file(self, cli_corpus, tmp_path, capsys):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text('{"calibrate": [false]}')
        code = cli.main(["ablate", "--cache-dir", str(cli_corpus),
                         "--epochs", "1", "--max-steps", "1",
                         "--grid", str(grid_path)])
        assert code == 0

    def test_malformed_grid_exits_2(self, cli_corpus, capsys):
        code = cli.main(["ablate", "--cache-dir", str(cli_corpus),
                         "--grid", "not json"])
        assert code == 2
        assert "grid" in capsys.readouterr().err


class TestExtract:
    def test_packs_npy_tree(self, tmp_path, capsys):
        import numpy as np
        src = tmp_path / "dumps"
        (src / "ego/a").mkdir(parents=True)
        np.save(src / "ego/a/dino.npy", np.ones((4, 4, 8), dtype=np.float32))
        np.save(src / "ego/a/clip.npy", np.zeros((4, 4, 8), dtype=np.float32))
        out = tmp_path / "cache"
        code = cli.main(["extract", "--src", str(src), "--out", str(out)])
        assert code == 0
        assert "packed 2 arrays" in capsys.readouterr().out
        assert (out / "manifest.json").is_file()

    def test_empty_src_exits_2(self, tmp_path, capsys):
        src = tmp_path / "empty"
        src.mkdir()
        code = cli.main(["extract", "--src", str(src),
                         "--out", str(tmp_path / "cache")])
        assert code == 2


class TestParser:
    def test_unknown_subcommand_raises_system_exit(self):
        with pytest.raises(SystemExit):
            cli.main(["frobnicate"])

    def test_boolean_flag_parsing(self):
        parser = cli.build_parser()
        args = parser.parse_args(["train", "--calibrate", "off"])
        assert args.calibrate is False
        args = parser.parse_args(["train", "--calibrate", "yes"])
        assert args.calibrate is True
        with pytest.raises(SystemExit):
            parser.parse_args(["train", "--calibrate", "maybe"])

    def test_unset_flags_leave_config_defaults(self):
        parser = cli.build_parser()
        args = parser.parse_args(["train", "--lr", "0.01"])
        cfg = cli._config_from_args(args)
        assert cfg.lr == 0.01
        assert cfg.temperature == 0.5
