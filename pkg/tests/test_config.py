import pytest

from kgpath.config import ConfigError, RunConfig, load_config


class TestDefaults:
    def test_protocol_defaults(self):
        cfg = RunConfig()
        assert (cfg.encoder.dim, cfg.encoder.layers, cfg.encoder.heads) == (200, 1, 4)
        assert (cfg.train.batch_size, cfg.train.learning_rate, cfg.env.horizon) == (64, 0.001, 3)
        assert 0.0 <= cfg.policy.entropy_weight <= 0.1

    @pytest.mark.parametrize("name,mask,beam", [
        ("fb15k-237", 0.5, 256), ("WN18RR", 0.5, 256), ("NELL-995", 0.3, 512), ("nell-995-inductive", 0.3, 512)])
    def test_presets(self, name, mask, beam):
        cfg = RunConfig.for_dataset(name)
        assert cfg.encoder.mask_fraction == mask and cfg.train.beam_width == beam

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            RunConfig.for_dataset("yago")


class TestLoad:
    def test_sections_and_types(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("dataset = nell-995\n[encoder]\ndim = 32\n[conve]\nembed_dim = 8\nreshape = 2x4\n"
                        "[train]\nuse_reward_shaping = no\nlearning_rate = 0.01\n")
        cfg = load_config(path, {"train.seed": 7})
        assert cfg.dataset == "nell-995" and cfg.train.beam_width == 512
        assert cfg.encoder.dim == 32 and cfg.conve.reshape == (2, 4)
        assert cfg.train.use_reward_shaping is False and cfg.train.learning_rate == 0.01
        assert cfg.train.seed == 7

    def test_roundtrip(self):
        cfg = RunConfig.for_dataset("wn18rr")
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("text", [
        "[bogus]\nx = 1\n", "[train]\nbatch_size = 0\n", "[policy]\nentropy_weight = 0.5\n",
        "[encoder]\ndim = 30\n", "[train]\nuse_reward_shaping = maybe\n", "foo = 1\n"])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "run.ini"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_no_file_gives_defaults(self):
        assert load_config(None) == RunConfig()
