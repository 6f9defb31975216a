from pathlib import Path

import pytest

from promptshift.adapt import AdaptConfig
from promptshift.config import ConfigError, adapt_config, load_config
from promptshift.errors import InvalidArgument

SHIPPED = Path(__file__).resolve().parents[1] / "configs" / "adapt.toml"


def write(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return path


def test_shipped_config_matches_the_defaults():
    assert adapt_config(load_config(SHIPPED)) == AdaptConfig()


def test_no_file_means_defaults():
    assert adapt_config(load_config(None)) == AdaptConfig()


def test_file_values_and_nesting(tmp_path):
    raw = load_config(write(tmp_path, """
[adapt]
population_size = 20
[adapt.early_stop]
patience = 5
[loss]
use_token = false
[ema]
mode = "reset"
gamma = 0.5
[inputs]
model = "m.bin"
"""))
    cfg = adapt_config(raw)
    assert (cfg.population_size, cfg.patience, cfg.ema_mode, cfg.gamma) == (20, 5, "reset", 0.5)
    assert cfg.loss.use_token is False
    assert raw["inputs"]["model"] == str((tmp_path / "m.bin").resolve())


def test_overrides_win_and_none_is_ignored(tmp_path):
    raw = load_config(write(tmp_path, '[ema]\nmode = "continuous"\n[adapt]\nseed = 4\n'))
    cfg = adapt_config(raw, {"ema_mode": "reset", "seed": None, "beta": 0.0})
    assert cfg.ema_mode == "reset" and cfg.seed == 4 and cfg.loss.beta == 0.0


@pytest.mark.parametrize("text", [
    "[adapt]\npopulation = 5\n",
    "[extra]\nx = 1\n",
    "[adapt.early_stop]\nwait = 1\n",
    "[adapt\n",
])
def test_malformed_files_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_invalid_values_rejected(tmp_path):
    with pytest.raises(InvalidArgument):
        adapt_config(load_config(write(tmp_path, "[adapt]\npopulation_size = 2\n")))
    with pytest.raises(ConfigError):
        adapt_config({}, {"bogus": 1})
