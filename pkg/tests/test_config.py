import pytest

from gssp.config import Config, parse_config_text
from gssp.errors import InputError


def test_defaults():
    c = Config()
    assert c.eps_spatial is None and c.tau_max == 0.01 and c.downsample == 1
    assert c.fractions == (0.25, 0.5, 0.75, 1.0)
    assert c.cluster_params(2.0).eps_spatial == pytest.approx(0.01)
    assert c.refine_params().kmeans_seed == 2
    assert c.prune_spec().seed == 1
    assert c.codebook_seed == 3


def test_text_round_trip():
    c = Config(seed=7, eps_spatial=0.02, tau_max=0.005, fractions=(0.5, 1.0), downsample=4)
    assert Config.from_text(c.to_text()) == c
    assert Config.from_text(Config().to_text()) == Config()


def test_parse_comments_dashes_and_overlay():
    text = "# comment\n tau-max = 0.02  # inline\n\nfractions = 0.1, 1.0\neps_spatial = auto\n"
    assert parse_config_text(text) == {"tau_max": "0.02", "fractions": "0.1, 1.0", "eps_spatial": "auto"}
    c = Config.from_text(text, base=Config(seed=9))
    assert c.seed == 9 and c.tau_max == 0.02 and c.fractions == (0.1, 1.0) and c.eps_spatial is None


@pytest.mark.parametrize("text", ["nonsense_key = 1", "seed = x", "no equals sign", "fractions = 0.5",
                                  "tau_max = -1", "downsample = 0", "seed = -3", "eps_direction = 2"])
def test_bad_config(text):
    with pytest.raises(InputError):
        Config.from_text(text)


def test_replace_coerces():
    c = Config().replace(seed="4", beta="0.25", fractions="0.3,1")
    assert c.seed == 4 and c.beta == 0.25 and c.fractions == (0.3, 1.0)
