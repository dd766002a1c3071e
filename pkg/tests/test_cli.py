"""End-to-end CLI tests: every subcommand, artifact layout, and exit codes.

Subcommands run in-process through main(argv) so exit codes and files can be
checked cheaply; two subprocess tests cover the installed console script and
the log-level environment variable.
"""

import os
import shutil
import subprocess

import numpy as np
import pandas as pd
import pytest

from cmgl.cli import main
from cmgl.config import RunConfig, load_config, write_config
from cmgl.data import SyntheticSpec, load_dataset


def _base_config():
    cfg = RunConfig()
    cfg.synthetic = SyntheticSpec(
        n_samples=60,
        num_classes=3,
        modality_dims=(8, 8, 8),
        informative_mask=(1, 1, 0),
        class_separation=6.0,
        noise_scale=1.0,
        seed=3,
    )
    cfg.stage1.epochs = 6
    cfg.stage2.epochs = 8
    cfg.stage2.patience = 8
    cfg.graph.k_candidates = (3, 5)
    cfg.graph.warmup_epochs = 2
    cfg.cv.n_folds = 2
    return cfg


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cfg_file(work):
    path = work / "run.cfg"
    write_config(_base_config(), path)
    return path


@pytest.fixture(scope="module")
def train_out(work, cfg_file):
    out = work / "train"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_writes_loadable_cohort(self, work, cfg_file):
        out = work / "synth"
        assert main(["synth", "--config", str(cfg_file), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "config_snapshot.cfg",
            "labels.tsv",
            "omics0.tsv",
            "omics1.tsv",
            "omics2.tsv",
        ]
        ds = load_dataset(out)
        assert ds.n_samples == 60
        assert ds.modality_dims == [8, 8, 8]
        assert ds.num_classes == 3

    def test_seed_override_changes_data(self, work, cfg_file):
        out_a = work / "synth_a"
        out_b = work / "synth_b"
        out_c = work / "synth_c"
        assert main(["synth", "--config", str(cfg_file), "--out", str(out_a)]) == 0
        assert main(["synth", "--config", str(cfg_file), "--out", str(out_b)]) == 0
        assert main(
            ["synth", "--config", str(cfg_file), "--out", str(out_c), "--seed", "7"]
        ) == 0
        assert (out_a / "omics0.tsv").read_bytes() == (out_b / "omics0.tsv").read_bytes()
        assert (out_a / "omics0.tsv").read_bytes() != (out_c / "omics0.tsv").read_bytes()
        assert load_config(out_c / "config_snapshot.cfg").synthetic.seed == 7

    def test_requires_synthetic_section(self, work, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "bare.cfg"
        write_config(cfg, path)
        assert main(["synth", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


class TestTrain:
    def test_artifacts(self, train_out):
        names = sorted(p.name for p in train_out.iterdir())
        assert names == [
            "checkpoint_fold0.npz",
            "checkpoint_fold1.npz",
            "confidence_fold0.tsv",
            "confidence_fold1.tsv",
            "config_snapshot.cfg",
            "report.txt",
            "timings.txt",
        ]
        text = (train_out / "report.txt").read_text(encoding="utf-8")
        assert text.startswith("[run]\nseed = 0\nvariant = full\nn_folds = 2\n")
        assert "[fold 0]" in text and "[fold 1]" in text and "[aggregate]" in text
        conf = pd.read_csv(train_out / "confidence_fold0.tsv", sep="\t")
        assert len(conf) == 60
        assert conf.columns[0] == "sample_id"

    def test_rerun_from_snapshot_is_byte_identical(self, work, train_out):
        """The written snapshot is a complete recipe for reproducing the run."""
        out2 = work / "train_again"
        snapshot = train_out / "config_snapshot.cfg"
        assert main(["train", "--config", str(snapshot), "--out", str(out2)]) == 0
        assert (out2 / "report.txt").read_bytes() == (train_out / "report.txt").read_bytes()
        for fold in (0, 1):
            name = f"confidence_fold{fold}.tsv"
            assert (out2 / name).read_bytes() == (train_out / name).read_bytes()
            # npz containers embed timestamps, so compare the stored arrays
            with np.load(train_out / f"checkpoint_fold{fold}.npz") as a, np.load(
                out2 / f"checkpoint_fold{fold}.npz"
            ) as b:
                assert set(a.files) == set(b.files)
                for key in a.files:
                    assert np.array_equal(a[key], b[key]), key

    def test_seed_flag_changes_run(self, work, cfg_file, train_out):
        out2 = work / "train_seed1"
        assert main(
            ["train", "--config", str(cfg_file), "--out", str(out2), "--seed", "1"]
        ) == 0
        text = (out2 / "report.txt").read_text(encoding="utf-8")
        assert text.startswith("[run]\nseed = 1\n")
        assert (out2 / "report.txt").read_bytes() != (train_out / "report.txt").read_bytes()


class TestAblate:
    def test_variant_run_and_rerun(self, work, cfg_file):
        out_a = work / "ablate_a"
        out_b = work / "ablate_b"
        argv = ["ablate", "--config", str(cfg_file), "--variant", "no_uncertainty"]
        assert main(argv + ["--out", str(out_a)]) == 0
        assert main(argv + ["--out", str(out_b)]) == 0
        text = (out_a / "report.txt").read_text(encoding="utf-8")
        assert "variant = no_uncertainty" in text
        assert (out_a / "report.txt").read_bytes() == (out_b / "report.txt").read_bytes()

    def test_variant_flag_required(self, work, cfg_file):
        rc = main(["ablate", "--config", str(cfg_file), "--out", str(work / "x")])
        assert rc == 1

    def test_unknown_variant(self, work, cfg_file):
        rc = main(
            ["ablate", "--config", str(cfg_file), "--variant", "nope",
             "--out", str(work / "x")]
        )
        assert rc == 1


@pytest.fixture(scope="module")
def grid_cfg_file(work):
    cfg = _base_config()
    cfg.stage1.epochs = 2
    cfg.stage2.epochs = 3
    cfg.stage2.patience = 3
    cfg.graph.k_candidates = (3,)
    cfg.graph.warmup_epochs = 1
    cfg.grid = {"stage2.epochs": ["2", "3"]}
    path = work / "grid.cfg"
    write_config(cfg, path)
    return path


class TestGrid:
    def test_run_and_rerun(self, work, grid_cfg_file):
        out_a = work / "grid_a"
        out_b = work / "grid_b"
        assert main(["grid", "--config", str(grid_cfg_file), "--out", str(out_a)]) == 0
        assert main(["grid", "--config", str(grid_cfg_file), "--out", str(out_b)]) == 0
        text = (out_a / "grid_report.txt").read_text(encoding="utf-8")
        assert text.startswith("[grid]\nseed = 0\nkeys = stage2.epochs\n")
        assert "[cell 0]" in text and "[cell 1]" in text
        assert (out_a / "config_snapshot.cfg").exists()
        assert (
            (out_a / "grid_report.txt").read_bytes()
            == (out_b / "grid_report.txt").read_bytes()
        )

    def test_grid_without_section(self, work, cfg_file):
        rc = main(["grid", "--config", str(cfg_file), "--out", str(work / "x")])
        assert rc == 1


class TestKselect:
    def test_scores_and_edges(self, work, cfg_file):
        out = work / "kselect"
        assert main(["kselect", "--config", str(cfg_file), "--out", str(out)]) == 0
        lines = (out / "kselect.txt").read_text(encoding="utf-8").splitlines()
        selected = {}
        for line in lines:
            if "k_selected" in line:
                parts = dict(p.split(" = ") for p in line.split("\t"))
                selected[int(parts["fold"])] = int(parts["k_selected"])
        assert set(selected) == {0, 1}
        for fold, k in selected.items():
            assert k in (3, 5)
            edges = out / f"edges_fold{fold}_k{k}.tsv"
            assert edges.exists()
            table = pd.read_csv(edges, sep="\t")
            assert list(table.columns) == ["src", "dst"]
        # two scored candidates per fold
        assert sum("val_macro_f1" in line for line in lines) == 4

    def test_k_candidates_flag(self, work, cfg_file):
        out = work / "kselect_flag"
        assert main(
            ["kselect", "--config", str(cfg_file), "--out", str(out),
             "--k-candidates", "4"]
        ) == 0
        text = (out / "kselect.txt").read_text(encoding="utf-8")
        assert "k = 4" in text and "k = 3" not in text

    def test_bad_k_candidates(self, work, cfg_file):
        rc = main(
            ["kselect", "--config", str(cfg_file), "--out", str(work / "x"),
             "--k-candidates", "3,x"]
        )
        assert rc == 1


class TestExport:
    def test_embeddings_table(self, work, cfg_file, train_out):
        out = work / "export"
        assert main(
            ["export", "--config", str(cfg_file), "--out", str(out),
             "--checkpoint", str(train_out / "checkpoint_fold0.npz")]
        ) == 0
        frame = pd.read_csv(out / "embeddings.tsv", sep="\t")
        assert len(frame) == 60
        assert list(frame.columns[:3]) == ["sample_id", "pred", "confidence"]
        assert list(frame.columns[3:]) == [f"e_{j}" for j in range(64)]

    def test_width_mismatch_is_data_error(self, work, train_out):
        cfg = _base_config()
        cfg.synthetic = SyntheticSpec(60, 3, (8, 4, 8), (1, 1, 0), seed=3)
        path = work / "narrow.cfg"
        write_config(cfg, path)
        rc = main(
            ["export", "--config", str(path), "--out", str(work / "x"),
             "--checkpoint", str(train_out / "checkpoint_fold0.npz")]
        )
        assert rc == 2

    def test_missing_checkpoint(self, work, cfg_file):
        rc = main(
            ["export", "--config", str(cfg_file), "--out", str(work / "x"),
             "--checkpoint", str(work / "nope.npz")]
        )
        assert rc == 2


class TestCluster:
    def test_assignments_and_report(self, work, cfg_file, train_out):
        out = work / "cluster"
        assert main(
            ["cluster", "--config", str(cfg_file), "--out", str(out),
             "--checkpoint", str(train_out / "checkpoint_fold0.npz"),
             "--clusters", "2,3"]
        ) == 0
        lines = (out / "cluster_report.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("k = 2\tsilhouette = ")
        assert lines[1].startswith("k = 3\tsilhouette = ")
        for k in (2, 3):
            table = pd.read_csv(out / f"clusters_k{k}.tsv", sep="\t")
            assert list(table.columns) == ["sample_id", "cluster"]
            assert len(table) == 60
            assert set(table["cluster"]) == set(range(k))

    def test_bad_cluster_counts(self, work, cfg_file, train_out):
        rc = main(
            ["cluster", "--config", str(cfg_file), "--out", str(work / "x"),
             "--checkpoint", str(train_out / "checkpoint_fold0.npz"),
             "--clusters", "2,x"]
        )
        assert rc == 1


class TestSubsample:
    def test_fraction_sweep(self, work, cfg_file):
        out = work / "subsample"
        assert main(
            ["subsample", "--config", str(cfg_file), "--out", str(out),
             "--fractions", "1.0,0.5"]
        ) == 0
        assert (out / "report_fraction_1.txt").exists()
        assert (out / "report_fraction_0p5.txt").exists()
        assert (out / "timings_fraction_0p5.txt").exists()
        lines = (out / "subsample.txt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("fraction = 1.0\t")
        assert lines[1].startswith("fraction = 0.5\t")
        half = (out / "report_fraction_0p5.txt").read_text(encoding="utf-8")
        assert "fraction = 0.5" in half

    def test_bad_fractions(self, work, cfg_file):
        rc = main(
            ["subsample", "--config", str(cfg_file), "--out", str(work / "x"),
             "--fractions", "x"]
        )
        assert rc == 1


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        rc = main(["train", "--config", str(tmp_path / "nope.cfg"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_missing_dataset_dir(self, tmp_path):
        rc = main(["train", "--dataset-dir", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_divergent_training(self, work, tmp_path):
        cfg = _base_config()
        cfg.stage1.epochs = 5
        cfg.stage1.learning_rate = 1e300
        path = tmp_path / "diverge.cfg"
        write_config(cfg, path)
        rc = main(["train", "--config", str(path), "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_usage_errors(self, tmp_path):
        assert main([]) == 1
        assert main(["nope"]) == 1
        assert main(["train"]) == 1  # --out is required
        assert main(["train", "--out", str(tmp_path / "o"), "--nope"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "synth" in capsys.readouterr().out


class TestConsoleScript:
    def test_installed_and_log_env(self, work, cfg_file, tmp_path):
        exe = shutil.which("cmgl")
        assert exe is not None
        argv = [exe, "synth", "--config", str(cfg_file)]
        noisy = subprocess.run(
            argv + ["--out", str(tmp_path / "a")],
            capture_output=True, text=True, env={**os.environ, "CMGL_LOG": "INFO"},
        )
        assert noisy.returncode == 0
        assert "INFO" in noisy.stderr
        quiet = subprocess.run(
            argv + ["--out", str(tmp_path / "b")],
            capture_output=True, text=True, env={**os.environ, "CMGL_LOG": "WARNING"},
        )
        assert quiet.returncode == 0
        assert "INFO" not in quiet.stderr
