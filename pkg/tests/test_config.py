import pytest

from cmgl.config import (
    RunConfig,
    VARIANTS,
    load_config,
    set_value,
    write_config,
)
from cmgl.data import SyntheticSpec
from cmgl.errors import ConfigError


def _full_config():
    cfg = RunConfig()
    cfg.seed = 11
    cfg.variant = "no_cross_fusion"
    cfg.synthetic = SyntheticSpec(
        120, 4, (16, 8), (1, 0), class_separation=3.5, noise_scale=0.7, seed=2
    )
    cfg.stage1.epochs = 25
    cfg.stage1.learning_rate = 0.0007
    cfg.stage1.lambda_div = 0.5
    cfg.fusion.dim = 32
    cfg.fusion.n_heads = 2
    cfg.fusion.use_attention = False
    cfg.stage2.epochs = 40
    cfg.stage2.patience = 7
    cfg.stage2.label_smoothing = 0.05
    cfg.graph.k_candidates = (3, 5, 9)
    cfg.graph.warmup_epochs = 4
    cfg.cv.n_folds = 3
    cfg.grid = {"stage2.lambda_con": ["0.0", "1.0"], "stage1.lambda_edl": ["1.0"]}
    return cfg


class TestDefaults:
    def test_documented_operating_point(self):
        cfg = RunConfig()
        assert cfg.stage1.lambda_edl == 1.5
        assert cfg.stage1.lambda_cls == 1.5
        assert cfg.stage1.lambda_div == 1.0
        assert cfg.stage1.anneal_step == 50
        assert cfg.stage1.epochs == 200
        assert cfg.stage1.learning_rate == 1e-3
        assert cfg.stage1.temperature == 1.0
        assert cfg.stage1.hidden_dim == 128
        assert cfg.fusion.dim == 128
        assert cfg.fusion.n_heads == 4
        assert cfg.stage2.lambda_cls == 3.0
        assert cfg.stage2.lambda_con == 1.0
        assert cfg.stage2.label_smoothing == 0.1
        assert cfg.stage2.supcon_tau == 0.1
        assert cfg.stage2.epochs == 300
        assert cfg.stage2.patience == 30
        assert cfg.stage2.sage_hidden == 128
        assert cfg.stage2.embed_dim == 64
        assert cfg.graph.k_candidates == (7, 11, 15, 19, 23)
        assert cfg.graph.warmup_epochs == 30
        assert cfg.cv.n_folds == 5
        assert cfg.variant == "full"
        cfg.validate()

    def test_variant_catalog(self):
        assert VARIANTS == ("full", "no_uncertainty", "no_cross_fusion", "no_two_stage")
        cfg = RunConfig()
        cfg.variant = "no_such"
        with pytest.raises(ConfigError, match="unknown variant"):
            cfg.validate()


class TestRoundTrip:
    def test_write_then_load_is_identity(self, tmp_path):
        cfg = _full_config()
        path = tmp_path / "run.cfg"
        write_config(cfg, path)
        loaded = load_config(path)
        assert loaded == cfg

    def test_snapshot_is_stable(self, tmp_path):
        cfg = _full_config()
        a, b = tmp_path / "a.cfg", tmp_path / "b.cfg"
        write_config(cfg, a)
        write_config(load_config(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_defaults_round_trip(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "run.cfg"
        write_config(cfg, path)
        assert load_config(path) == cfg


class TestLoadErrors:
    def _write(self, tmp_path, text):
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        return path

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.cfg")

    def test_unknown_section_named(self, tmp_path):
        path = self._write(tmp_path, "[wrong]\nx = 1\n")
        with pytest.raises(ConfigError, match=r"unknown config section \[wrong\]"):
            load_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = self._write(tmp_path, "[stage1]\nnot_a_key = 1\n")
        with pytest.raises(ConfigError, match=r"unknown config key \[stage1\] not_a_key"):
            load_config(path)

    def test_unknown_run_key(self, tmp_path):
        path = self._write(tmp_path, "[run]\nbogus = 1\n")
        with pytest.raises(ConfigError, match=r"unknown config key \[run\] bogus"):
            load_config(path)

    def test_bad_int(self, tmp_path):
        path = self._write(tmp_path, "[stage1]\nepochs = banana\n")
        with pytest.raises(ConfigError, match=r"\[stage1\] epochs"):
            load_config(path)

    def test_bad_bool(self, tmp_path):
        path = self._write(tmp_path, "[fusion]\nuse_attention = maybe\n")
        with pytest.raises(ConfigError, match="expected a boolean"):
            load_config(path)

    def test_invalid_synthetic_is_config_error(self, tmp_path):
        path = self._write(
            tmp_path,
            "[synthetic]\nn_samples = 2\nnum_classes = 4\n"
            "modality_dims = 5\ninformative_mask = 1\n",
        )
        with pytest.raises(ConfigError, match=r"\[synthetic\] section invalid"):
            load_config(path)

    def test_out_of_range_value_rejected_on_validate(self, tmp_path):
        path = self._write(tmp_path, "[cv]\nn_folds = 1\n")
        with pytest.raises(ConfigError, match="n_folds"):
            load_config(path)


class TestParsing:
    def test_tuple_with_spaces(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[graph]\nk_candidates = 3, 5,9\n")
        assert load_config(path).graph.k_candidates == (3, 5, 9)

    def test_bool_spellings(self, tmp_path):
        for raw, want in (("true", True), ("1", True), ("yes", True),
                          ("false", False), ("0", False), ("off", False)):
            path = tmp_path / "run.cfg"
            path.write_text(f"[fusion]\nlayer_norm = {raw}\n")
            assert load_config(path).fusion.layer_norm is want

    def test_grid_values_split(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[grid]\nstage2.lambda_con = 0.0, 0.5 ,1.0\n")
        assert load_config(path).grid == {"stage2.lambda_con": ["0.0", "0.5", "1.0"]}

    def test_float_repr_survives(self, tmp_path):
        cfg = RunConfig()
        cfg.stage1.learning_rate = 0.1 + 0.2  # 0.30000000000000004
        path = tmp_path / "run.cfg"
        write_config(cfg, path)
        assert load_config(path).stage1.learning_rate == cfg.stage1.learning_rate


class TestSetValue:
    def test_override_each_section(self):
        cfg = _full_config()
        set_value(cfg, "run.seed", "99")
        set_value(cfg, "stage1.epochs", "3")
        set_value(cfg, "fusion.dim", "64")
        set_value(cfg, "stage2.lambda_con", "0.0")
        set_value(cfg, "graph.k_candidates", "7,11")
        set_value(cfg, "cv.n_folds", "4")
        set_value(cfg, "synthetic.seed", "8")
        assert cfg.seed == 99
        assert cfg.stage1.epochs == 3
        assert cfg.fusion.dim == 64
        assert cfg.stage2.lambda_con == 0.0
        assert cfg.graph.k_candidates == (7, 11)
        assert cfg.cv.n_folds == 4
        assert cfg.synthetic.seed == 8

    def test_bare_run_key(self):
        cfg = RunConfig()
        set_value(cfg, "seed", "5")
        assert cfg.seed == 5

    def test_unknown_rejected(self):
        cfg = _full_config()
        with pytest.raises(ConfigError, match="unknown config key"):
            set_value(cfg, "stage1.nope", "1")
        with pytest.raises(ConfigError, match="unknown config section"):
            set_value(cfg, "nowhere.key", "1")
        with pytest.raises(ConfigError, match="unknown config key"):
            set_value(cfg, "bogus", "1")

    def test_synthetic_override_requires_section(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError, match="no synthetic section"):
            set_value(cfg, "synthetic.seed", "1")

    def test_copy_isolates(self):
        cfg = _full_config()
        dup = cfg.copy()
        set_value(dup, "stage1.epochs", "999")
        assert cfg.stage1.epochs == 25
