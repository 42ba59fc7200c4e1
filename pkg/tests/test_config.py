import pytest

from dhgrasp.config import ConfigError, PipelineConfig, load_config


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config(env={})
    assert cfg == PipelineConfig()
    assert cfg.tta.lambda_pen == 10.0 and cfg.ddpm.T == 1000 and cfg.contact.k == 150.0
    assert cfg.ddpm.schedule().T == 1000


def test_file_and_env_overrides(tmp_path):
    p = write(tmp_path, "[tta]\nlr = 1e-3\nsteps = 50\n[energy]\nmax_iters = 20\n")
    cfg = load_config(p, env={"DHG_TTA_LR": "5e-4", "DHG_ENERGY_LAMBDA_PHH": "2", "DHG_DISABLE_JIT": "1", "HOME": "/"})
    assert cfg.tta.lr == 5e-4 and cfg.tta.steps == 50
    assert cfg.energy.max_iters == 20 and cfg.energy.lambda_phh == 2.0
    assert isinstance(cfg.tta.steps, int)


def test_env_field_case_insensitive():
    assert load_config(env={"DHG_DDPM_T": "50"}).ddpm.T == 50
    assert load_config(env={"DHG_LOSS_LAMBDA_V": "3"}).loss.lambda_V == 3.0


@pytest.mark.parametrize(
    "text,match",
    [
        ("[bogus]\nx = 1\n", "unknown config section"),
        ("[tta]\nnope = 1\n", "unknown key"),
        ("[tta]\nsteps = 1.5\n", "steps expects int"),
        ("[tta]\nlr = 'fast'\n", "lr expects float"),
        ("[tta]\nlr = -1.0\n", r"\[tta\]"),
        ("[ddpm]\nbeta_start = 0.5\nbeta_end = 0.1\n", "beta_start"),
        ("tta = 3\n", "expected a table"),
        ("[tta\n", "c.toml"),
    ],
)
def test_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text), env={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.toml", env={})


def test_bad_env_value():
    with pytest.raises(ConfigError):
        load_config(env={"DHG_TTA_STEPS": "many"})


def test_digest(tmp_path):
    a = load_config(write(tmp_path, "[tta]\nlr = 1e-3\n", "a.toml"), env={})
    b = load_config(write(tmp_path, "[tta]\nlr = 1e-3\n", "b.toml"), env={})
    c = load_config(write(tmp_path, "[tta]\nlr = 0.001 # same value\n", "c.toml"), env={})
    assert a.digest == b.digest
    assert a.digest != c.digest  # different bytes
    assert a.digest != load_config(env={}).digest
    assert load_config(env={}).digest == load_config(env={}).digest
