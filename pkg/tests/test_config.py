from typing import Optional, Tuple

import pytest

from volseg.config import RunConfig, coerce
from volseg.decoder import GateKind
from volseg.exceptions import ConfigError
from volseg.nn import UpsamplerKind

RUN_CONFIG = """
# small run
[model]
base_channels = 4
upsampler = subpixel_conv   # instead of onsampling
gate = none
patch_size = 32

[train]
epochs = 10
l_initial = 1e-3
e_max = none

[data]
extent = 32,40,32
noise_std = 0.1
"""


def test_parse():
    config = RunConfig.parse(RUN_CONFIG)

    assert config.model.base_channels == 4
    assert config.model.upsampler is UpsamplerKind.SUBPIXEL_CONV
    assert config.model.gate is GateKind.NONE
    assert config.model.patch_size == (32, 32, 32)
    assert config.train.epochs == 10
    assert config.train.e_max == 10
    assert config.train.l_initial == 1e-3
    assert config.data.extent == (32, 40, 32)
    assert config.data.noise_std == 0.1


def test_empty_file_gives_defaults():
    assert RunConfig.parse("# nothing\n\n") == RunConfig()


def test_dump_parses_back():
    config = RunConfig.parse(RUN_CONFIG)

    text = config.dump()

    assert "[model]\nbase_channels = 4\n" in text
    assert "extent = 32,40,32" in text
    assert "dsa_literal_residual = false" in text
    assert "num_classes = 4" in text
    assert RunConfig.parse(text) == config


@pytest.mark.parametrize(
    "text, lineno, match",
    [
        ("[optimizer]\nlr = 1", 1, "Unknown section"),
        ("epochs = 3", 1, "outside of a section"),
        ("[train]\n\nepochs 3", 3, "key = value"),
        ("[train]\nlearning_rate = 0.1", 2, "Unknown key"),
        ("[train]\nepochs = ten", 2, "epochs"),
        ("[model]\nupsampler = nearest", 2, "upsampler"),
        ("[model]\npatch_size = 32,32", 2, "patch_size"),
        ("[model]\ndsa_literal_residual = maybe", 2, "boolean"),
    ],
)
def test_parse_errors(text, lineno, match):
    with pytest.raises(ConfigError, match=match) as exc_info:
        RunConfig.parse(text)

    assert exc_info.value.lineno == lineno
    assert str(exc_info.value).startswith(f"line {lineno}: ")


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nnum_classes = 3",
        "[model]\ndepth = 0",
        "[train]\nepochs = 10\ne_max = 5",
    ],
)
def test_invalid_combinations(text):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)


def test_phantom_spec_errors_are_config_errors():
    with pytest.raises(ConfigError, match="at least 32"):
        RunConfig.parse("[data]\nextent = 16")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="Cannot read"):
        RunConfig.from_file(tmp_path / "missing.ini")


def test_from_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(RUN_CONFIG)

    assert RunConfig.from_file(path) == RunConfig.parse(RUN_CONFIG)


def test_override():
    config = RunConfig()

    updated = config.override("model", "upsampler", "trilinear").override(
        "train", "seed", 7
    )

    assert updated.model.upsampler is UpsamplerKind.TRILINEAR
    assert updated.train.seed == 7
    assert config.model.upsampler is UpsamplerKind.ONSAMPLING


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("optimizer", "lr", "1"),
        ("train", "lr", "1"),
        ("train", "epochs", "many"),
        ("model", "depth", "0"),
    ],
)
def test_override_errors(section, key, value):
    with pytest.raises(ConfigError):
        RunConfig().override(section, key, value)


@pytest.mark.parametrize(
    "value, annotation, expected",
    [
        ("3", int, 3),
        (" 0.5 ", float, 0.5),
        ("on", bool, True),
        ("No", bool, False),
        ("none", Optional[int], None),
        ("12", Optional[int], 12),
        ("8", Tuple[int, int, int], (8, 8, 8)),
        ("1,2,3", Tuple[int, int, int], (1, 2, 3)),
        ("0.5, -1", Tuple[float, ...], (0.5, -1.0)),
        ("scp_ag", GateKind, GateKind.SCP_AG),
    ],
)
def test_coerce(value, annotation, expected):
    assert coerce(value, annotation) == expected


def test_coerce_errors():
    with pytest.raises(ValueError):
        coerce("1,2", Tuple[int, int, int])

    with pytest.raises(ValueError, match="Unsupported"):
        coerce("1", list)
