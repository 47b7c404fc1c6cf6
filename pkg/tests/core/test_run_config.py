import pytest

from src.arrowflow.errors import ConfigError
from src.arrowflow.field import GridSpec, make_synthetic
from src.arrowflow.run_config import RunConfig, flatten, load_config, with_overrides


@pytest.fixture
def custom_yaml(tmp_path):
    path = tmp_path / "custom.yaml"
    path.write_text(
        "placement:\n  d_sep: 5.0\n  rng_seed: 3\n"
        "density:\n  mode: jacobian\n  scale_max: 6.0\n"
        "render:\n  size: [128, 96]\n"
    )
    return str(path)


class TestLoadConfig:
    """Packaged defaults, files, environment and overrides."""

    def test_packaged_defaults(self):
        config = load_config()
        assert config.d_sep == 8.0
        assert config.seed_ratio == 2.0
        assert config.density == "uniform"
        assert config.size == (512, 512)
        assert config.fill_rgba == (25, 25, 25, 255)
        assert config.thickness is None

    def test_explicit_file(self, custom_yaml):
        config = load_config(custom_yaml)
        assert config.d_sep == 5.0
        assert config.rng_seed == 3
        assert config.density == "jacobian"
        assert config.scale_max == 6.0
        assert config.size == (128, 96)
        assert config.frames_per_step == 4

    def test_missing_explicit_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.yaml"))

    def test_environment_overrides_file(self, monkeypatch, custom_yaml):
        monkeypatch.setenv("ARROWFLOW_DSEP", "6.5")
        monkeypatch.setenv("ARROWFLOW_THREADS", "2")
        config = load_config(custom_yaml)
        assert config.d_sep == 6.5
        assert config.threads == 2

    def test_overrides_beat_environment(self, monkeypatch):
        monkeypatch.setenv("ARROWFLOW_DSEP", "6.5")
        config = load_config(overrides={"d_sep": 10.0, "rng_seed": None})
        assert config.d_sep == 10.0
        assert config.rng_seed == 0

    def test_invalid_environment_value(self, monkeypatch):
        monkeypatch.setenv("ARROWFLOW_RNG_SEED", "seven")
        with pytest.raises(ConfigError, match="ARROWFLOW_RNG_SEED"):
            load_config()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("placement:\n  d_separation: 5.0\n")
        with pytest.raises(ConfigError, match="placement.d_separation"):
            load_config(str(path))

    def test_invalid_value_from_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("placement:\n  d_sep: -1.0\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_section_must_be_a_mapping(self):
        with pytest.raises(ConfigError):
            flatten({"placement": 3})

    def test_section_keys_are_renamed(self):
        flat = flatten({"density": {"mode": "file", "path": "rho.dm2d", "normalization": "per_step"}})
        assert flat == {"density": "file", "density_path": "rho.dm2d", "density_normalization": "per_step"}


class TestRunConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            {"d_sep": 0.0},
            {"seed_ratio": 1.0},
            {"scale_max": 0.5},
            {"prefilter_sigma": -1.0},
            {"density": "random"},
            {"density": "file"},
            {"density_normalization": "sometimes"},
            {"priority": "oldest"},
            {"queue": "fibonacci"},
            {"threads": -1},
            {"size": (64,)},
        ],
    )
    def test_invalid_values(self, changes):
        with pytest.raises(ConfigError):
            RunConfig(**changes)

    def test_hash_ignores_runtime_fields(self):
        base = RunConfig()
        assert with_overrides(base, out="elsewhere", threads=4, log_level="DEBUG").config_hash() == base.config_hash()
        assert with_overrides(base, d_sep=9.0).config_hash() != base.config_hash()
        assert base.config_hash().startswith("sha256:")

    def test_buffer_margin(self):
        assert RunConfig(d_sep=8.0).buffer_margin == 12.0
        assert RunConfig(d_sep=8.0, thickness=1.0, max_aspect_ratio=4.0).buffer_margin == 2.0

    def test_placement_params_defaults(self):
        field = make_synthetic("constant", GridSpec(20, 20, 2), velocity=(1.0, 0.0))
        params = RunConfig(d_sep=8.0).to_placement_params(field)
        assert params.glyph_thickness == 4.0
        assert params.integrator.length_gain == pytest.approx(12.0)
        assert params.integrator.step_h == 1.0
        assert params.d_seed == 16.0

    def test_explicit_length_gain(self):
        field = make_synthetic("constant", GridSpec(20, 20, 2), velocity=(1.0, 0.0))
        params = RunConfig(length_gain=2.5, step_h=0.25).to_placement_params(field)
        assert params.integrator.length_gain == 2.5
        assert params.integrator.step_h == 0.25

    def test_style(self):
        style = RunConfig(frames_per_step=2, size=[64, 32], outline_rgba=[0, 0, 0, 255]).to_style()
        assert style.frames_per_step == 2
        assert style.size == (64, 32)
        assert style.outline_rgba == (0, 0, 0, 255)

    def test_header(self):
        header = RunConfig().header()
        assert header["density_path"] == "-"
        assert header["buffer_margin"] == 12.0
        assert header["config_hash"] == RunConfig().config_hash()

    def test_with_overrides_skips_none(self):
        config = with_overrides(RunConfig(), d_sep=None, rng_seed=4)
        assert config.d_sep == 8.0
        assert config.rng_seed == 4
