import csv
import statistics
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from papi import cli, core
from papi import experiment as ex
from papi import pll_data as data
from papi.config import KEYS, ExperimentConfig, parse_config, parse_config_text, serialize_config
from papi.errors import ConfigError
from papi.plots import PlotError, emit_plots, line_chart_svg

TINY = """\
num_classes = 3
per_class = 20
test_per_class = 10
dim = 4
epochs = 3
batch_size = 16
warmup_epochs = 1
ramp_epochs = 1
encoder_hidden = 16
enc_dim = 16
proj_hidden = 16
proj_dim = 4
seeds = 7
q = 0.3
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


class TestConfig:
    def test_empty_is_defaults(self, tmp_path):
        path = tmp_path / "e.cfg"
        path.write_text("")
        assert parse_config(path) == ExperimentConfig()

    def test_q_range_error_names_key(self):
        with pytest.raises(ConfigError, match="'q'") as info:
            parse_config_text("# comment\nq = 1.5\n")
        assert info.value.key == "q" and info.value.line == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="'bogus'") as info:
            parse_config_text("tau = 0.2\nbogus = 1\n")
        assert info.value.line == 2

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="'batch_size'"):
            parse_config_text("batch_size = 6.5\n")

    def test_train_range_error_names_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("\n\nlambda_ema = 2\n")
        assert info.value.key == "lambda_ema" and info.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "nope.cfg")

    def test_round_trip(self, tiny_cfg):
        cfg = parse_config(tiny_cfg)
        assert parse_config_text(serialize_config(cfg)) == cfg
        text = serialize_config(ExperimentConfig())
        assert [line.split(" = ")[0] for line in text.splitlines()] == list(KEYS)
        assert parse_config_text(text) == ExperimentConfig()

    def test_lists(self):
        cfg = parse_config_text("seeds = 1, 2,3\nq = 0.1,0.7\nvariants = full,no_mixup\nencoder_hidden = 32,16\n")
        assert cfg.seeds == (1, 2, 3) and cfg.q == (0.1, 0.7)
        assert cfg.variants == ("full", "no_mixup") and cfg.train.encoder_hidden == (32, 16)

    def test_bad_variant(self):
        with pytest.raises(ConfigError, match="variants"):
            parse_config_text("variants = full,pico\n")


class TestGenerateData:
    def test_files_and_singletons(self, tiny_cfg, tmp_path):
        out = tmp_path / "d"
        assert cli.main(["generate-data", "--config", str(tiny_cfg), "--out", str(out), "--q", "0"]) == 0
        ds = data.load_dataset(out / "data_uniform_q0_s7.csv")
        assert ds.is_fully_labeled
        assert (out / "test_s7.csv").exists()

    def test_byte_identical(self, tiny_cfg, tmp_path):
        for name in ("a", "b"):
            cli.main(["generate-data", "--config", str(tiny_cfg), "--out", str(tmp_path / name)])
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_mean_candidate_size(self, tmp_path):
        cfg_path = tmp_path / "k10.cfg"
        cfg_path.write_text("num_classes = 10\nper_class = 1000\ndim = 10\nseeds = 3\nq = 0.3\n")
        cli.main(["generate-data", "--config", str(cfg_path), "--out", str(tmp_path)])
        sizes = data.load_dataset(tmp_path / "data_uniform_q0.3_s3.csv").candidate_mask.sum(axis=1)
        assert abs(sizes.mean() - 3.7) < 3 * np.sqrt(9 * 0.21 / sizes.size)

    def test_instance_dependent(self, tmp_path):
        cfg_path = tmp_path / "id.cfg"
        cfg_path.write_text("generator = instance_dependent\nper_class = 30\noracle_epochs = 5\nseeds = 2\n")
        cli.main(["generate-data", "--config", str(cfg_path), "--out", str(tmp_path)])
        ds = data.load_dataset(tmp_path / "data_instance_dependent_s2.csv")
        assert (ds.candidate_mask.sum(axis=1) >= 2).all()  # top incorrect label always flipped

    def test_unwritable_out(self, tiny_cfg, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["generate-data", "--config", str(tiny_cfg), "--out", str(blocker / "sub")]) != 0
        assert "error" in capsys.readouterr().err


class TestTrain:
    def test_single_seed_std_zero(self, tiny_cfg, tmp_path):
        out = tmp_path / "r"
        assert cli.main(["train", "--config", str(tiny_cfg), "--out", str(out)]) == 0
        rows = ex.read_summary_csv(out / "summary.csv")
        assert len(rows) == 1 and rows[0]["std_test_acc"] == 0.0
        assert (out / "metrics_full_q0.3_s7.csv").exists()
        assert (out / "checkpoint_full_q0.3_s7.npz").exists()
        assert parse_config(out / "config.txt") == parse_config(tiny_cfg)

    def test_three_variants_and_summary_recomputes(self, tiny_cfg, tmp_path):
        cfg_path = tmp_path / "v.cfg"
        cfg_path.write_text(TINY.replace("seeds = 7", "seeds = 7,8") + "variants = full,no_mixup,no_alignment\n")
        out = tmp_path / "r"
        cli.main(["train", "--config", str(cfg_path), "--out", str(out)])
        rows = ex.read_summary_csv(out / "summary.csv")
        assert sorted(r["variant"] for r in rows) == sorted(core.VARIANTS)
        for r in rows:
            finals = [core.read_metrics_csv(out / f"metrics_{r['variant']}_q0.3_s{s}.csv")[-1].test_accuracy for s in (7, 8)]
            assert r["mean_test_acc"] == pytest.approx(statistics.fmean(finals), abs=0)
            assert r["std_test_acc"] == pytest.approx(statistics.stdev(finals), abs=0)

    def test_rerun_byte_identical(self, tiny_cfg, tmp_path):
        for name in ("a", "b"):
            cli.main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / name)])
        for f in (tmp_path / "a").glob("*.csv"):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_seed_and_q_override(self, tiny_cfg, tmp_path):
        out = tmp_path / "r"
        cli.main(["train", "--config", str(tiny_cfg), "--out", str(out), "--seed", "11", "--q", "0.1"])
        assert (out / "metrics_full_q0.1_s11.csv").exists()

    def test_workers_match_serial(self, tiny_cfg, tmp_path):
        cfg_path = tmp_path / "w.cfg"
        cfg_path.write_text(TINY.replace("seeds = 7", "seeds = 7,8"))
        cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "s")])
        cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "p"), "--workers", "2"])
        assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "p" / "summary.csv").read_bytes()

    def test_csv_dataset_input(self, tiny_cfg, tmp_path):
        cli.main(["generate-data", "--config", str(tiny_cfg), "--out", str(tmp_path / "d")])
        cfg_path = tmp_path / "csv.cfg"
        cfg_path.write_text(TINY + f"train_csv = {tmp_path / 'd' / 'data_uniform_q0.3_s7.csv'}\n"
                                   f"test_csv = {tmp_path / 'd' / 'test_s7.csv'}\n")
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r")]) == 0
        # identical data to the generated run, so identical metrics
        cli.main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / "g")])
        assert (tmp_path / "r" / "metrics_full_q0.3_s7.csv").read_bytes() == (tmp_path / "g" / "metrics_full_q0.3_s7.csv").read_bytes()

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("q = 2\n")
        assert cli.main(["train", "--config", str(path), "--out", str(tmp_path)]) == 1
        assert "'q'" in capsys.readouterr().err


class TestAblate:
    def test_table_and_pairing(self, tiny_cfg, tmp_path):
        out = tmp_path / "ab"
        assert cli.main(["ablate", "--config", str(tiny_cfg), "--out", str(out)]) == 0
        with open(out / "ablation.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == list(core.VARIANTS)
        cli.main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / "tr")])
        assert (out / "metrics_full_q0.3_s7.csv").read_bytes() == (tmp_path / "tr" / "metrics_full_q0.3_s7.csv").read_bytes()


class TestEvaluate:
    def test_checkpoint_evaluation(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "r"
        cli.main(["train", "--config", str(tiny_cfg), "--out", str(out)])
        capsys.readouterr()
        assert cli.main(["evaluate", "--config", str(tiny_cfg), "--checkpoint", str(out / "checkpoint_full_q0.3_s7.npz"),
                         "--out", str(tmp_path / "e")]) == 0
        with open(tmp_path / "e" / "evaluation.csv", newline="") as fh:
            row = next(csv.DictReader(fh))
        final = core.read_metrics_csv(out / "metrics_full_q0.3_s7.csv")[-1]
        assert float(row["test_acc"]) == final.test_accuracy
        assert float(row["proto_acc"]) == final.proto_accuracy

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "none.npz")]) == 1


class TestPlot:
    def _metrics(self, tmp_path, epochs):
        rows = [core.EpochMetrics(e, 1.0 / (e + 1), 0.5, 0.9, 0.8, 0.7, 0.95, 3 - e, e, 0.9, 0.2) for e in range(epochs)]
        path = tmp_path / "metrics_x.csv"
        core.write_metrics_csv(rows, path)
        return path

    def test_two_epochs(self, tmp_path):
        files = emit_plots(self._metrics(tmp_path, 2), tmp_path / "p")
        assert {f.name for f in files} == {f"metrics_x_{n}.svg" for n in ("losses", "accuracy", "disagreement", "similarity")}
        for f in files:
            root = ET.parse(f).getroot()
            polylines = root.findall("{http://www.w3.org/2000/svg}polyline")
            assert polylines and all(len(p.get("points").split()) == 2 for p in polylines)
            labels = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
            assert "epoch" in labels

    def test_empty_metrics(self, tmp_path):
        path = self._metrics(tmp_path, 0)
        with pytest.raises(PlotError):
            emit_plots(path, tmp_path / "p")
        assert not (tmp_path / "p").exists()

    def test_missing_column(self, tmp_path):
        path = self._metrics(tmp_path, 2)
        with pytest.raises(PlotError, match="nonexistent"):
            emit_plots(path, tmp_path / "p", {"x": ("nonexistent",)})

    def test_cli_plot(self, tmp_path):
        path = self._metrics(tmp_path, 3)
        assert cli.main(["plot", str(path), "--out", str(tmp_path / "p"), "--columns", "test_acc,proto_acc"]) == 0
        assert (tmp_path / "p" / "metrics_x_custom.svg").exists()
        assert cli.main(["plot", str(path), "--columns", "nope", "--out", str(tmp_path / "q")]) == 1

    def test_escapes_text(self):
        svg = line_chart_svg([0, 1], {"a<b": [0.0, 1.0]}, "t&t", "x", "y")
        ET.fromstring(svg.split("\n", 1)[1])
