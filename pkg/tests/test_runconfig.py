"""Run-configuration parsing: schema, defaults, and rejection of typos."""

import pytest

from cascadeseg import FormatError, load_config, parse_config

FULL = """
# reference-style run
[network]
levels = 4
base_channels = 32
num_classes = 8
input_tile = 132 132 116

[train]
iterations = 1500
lr = 0.01          # tuned by hand
momentum = 0.95
batch_size = 2
val_interval = 250
seed = 42
weighting = uniform
decay_every = 500
decay_factor = 0.5
divergence_limit = 100.0

[augment]
enabled = true
max_disp = 2.5
grid_spacing = 16
rot_deg = 10
trans_vox = 5
distribution = normal

[cascade]
body_threshold = -150
dilation_radius = 5
stage = 2

[tiler]
mode = xy_half
"""


def test_full_config_parses():
    cfg = parse_config(FULL)
    assert cfg.network.levels == 4
    assert cfg.network.base_channels == 32
    assert cfg.network.num_classes == 8
    assert cfg.network.input_tile == (132, 132, 116)
    assert cfg.train.iterations == 1500
    assert cfg.train.lr == 0.01  # inline comment stripped
    assert cfg.train.momentum == 0.95
    assert cfg.train.batch_size == 2
    assert cfg.train.seed == 42
    assert cfg.train.weighting == "uniform"
    assert cfg.train.decay_every == 500
    assert cfg.train.augment is cfg.augment
    assert cfg.augment.distribution == "normal"
    assert cfg.augment.grid_spacing == 16
    assert cfg.cascade.body_threshold == -150.0
    assert cfg.cascade.dilation_radius == 5
    assert cfg.tiler_mode == "xy_half"


def test_empty_text_gives_cpu_defaults():
    cfg = parse_config("")
    assert cfg.network.levels == 2
    assert cfg.network.input_tile == (28, 28, 28)
    assert cfg.train.iterations == 2000
    assert cfg.train.lr == 1e-3
    assert cfg.train.weighting == "frequency"
    assert cfg.augment.enabled
    assert cfg.cascade.dilation_radius == 3
    assert cfg.tiler_mode == "none"


def test_partial_section_keeps_other_defaults():
    cfg = parse_config("[train]\niterations = 7\n")
    assert cfg.train.iterations == 7
    assert cfg.train.momentum == 0.9
    assert cfg.network.num_classes == 3


def test_unknown_key_is_rejected():
    with pytest.raises(FormatError, match="warmup"):
        parse_config("[train]\nwarmup = 10\n")


def test_keys_are_case_sensitive():
    with pytest.raises(FormatError, match="LR"):
        parse_config("[train]\nLR = 0.1\n")


def test_unknown_section_is_rejected():
    with pytest.raises(FormatError, match="solver"):
        parse_config("[solver]\nlr = 0.1\n")


def test_bad_value_names_the_key():
    with pytest.raises(FormatError, match="train.lr"):
        parse_config("[train]\nlr = fast\n")
    with pytest.raises(FormatError, match="network.input_tile"):
        parse_config("[network]\ninput_tile = 28 28\n")
    with pytest.raises(FormatError, match="augment.enabled"):
        parse_config("[augment]\nenabled = maybe\n")


def test_boolean_spellings():
    for text, expect in [("on", True), ("1", True), ("no", False), ("False", False)]:
        cfg = parse_config(f"[augment]\nenabled = {text}\n")
        assert cfg.augment.enabled is expect


def test_validation_failures_become_format_errors():
    with pytest.raises(FormatError):
        parse_config("[train]\nmomentum = 1.5\n")
    with pytest.raises(FormatError):
        parse_config("[train]\nweighting = balanced\n")
    with pytest.raises(FormatError, match="mode"):
        parse_config("[tiler]\nmode = diagonal\n")


def test_duplicate_key_is_rejected():
    with pytest.raises(FormatError):
        parse_config("[train]\nlr = 0.1\nlr = 0.2\n")


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(FULL)
    assert load_config(path) == parse_config(FULL)
    with pytest.raises(FormatError, match="absent.cfg"):
        load_config(tmp_path / "absent.cfg")
