"""Network geometry, parameter accounting, whole-net gradients, checkpoints."""

import numpy as np
import pytest

from cascadeseg import CheckpointError, GeometryError
from cascadeseg.network import (
    NetworkConfig,
    build,
    load_checkpoint,
    output_shape,
    remap_head,
    save_checkpoint,
)

REFERENCE = NetworkConfig(levels=4, base_channels=32, num_classes=8, input_tile=(132, 132, 116))
DESK = NetworkConfig(levels=2, base_channels=8, num_classes=3, input_tile=(28, 28, 28))


def count_oracle(levels, f, k):
    """Spreadsheet-style layer-by-layer count, independent of the builder."""
    total = 0

    def conv_bn(cin, cout, ksz=27):
        nonlocal total
        total += cin * cout * ksz + cout  # conv w + b
        total += 2 * cout  # bn gamma + beta

    cin = 1
    for i in range(levels):
        conv_bn(cin, f * 2**i)
        conv_bn(f * 2**i, f * 2 ** (i + 1))
        cin = f * 2 ** (i + 1)
    cur = f * 2**levels
    for i in reversed(range(levels - 1)):
        total += cur * cur * 8 + cur  # upconv, channels kept
        skip = f * 2 ** (i + 1)
        conv_bn(cur + skip, skip)
        conv_bn(skip, skip)
        cur = skip
    total += cur * k + k  # 1x1x1 head
    return total


# geometry -----------------------------------------------------------------------


def test_reference_tile_maps_to_44_44_28():
    assert output_shape(REFERENCE) == (44, 44, 28)


def test_desk_tile_geometry():
    assert output_shape(DESK) == (12, 12, 12)
    assert output_shape(NetworkConfig(2, 8, 3, (44, 44, 44))) == (28, 28, 28)


def test_shifting_input_by_16_shifts_output_by_16():
    base = output_shape(REFERENCE)
    bigger = NetworkConfig(4, 32, 8, (148, 148, 132))
    assert output_shape(bigger) == tuple(b + 16 for b in base)


def test_bad_tiles_raise_geometry_error_naming_layer():
    with pytest.raises(GeometryError):
        output_shape(NetworkConfig(4, 32, 8, (32, 32, 32)))
    with pytest.raises(GeometryError, match="pool"):
        output_shape(NetworkConfig(2, 8, 3, (27, 28, 28)))
    with pytest.raises(GeometryError, match="enc0"):
        output_shape(NetworkConfig(2, 8, 3, (4, 28, 28)))


def test_config_field_validation():
    with pytest.raises(ValueError):
        NetworkConfig(levels=1)
    with pytest.raises(ValueError):
        NetworkConfig(num_classes=1)
    with pytest.raises(ValueError):
        NetworkConfig(base_channels=0)


# parameter count ------------------------------------------------------------------


def test_reference_param_count_matches_hand_count():
    net = build(REFERENCE, seed=0)
    expect = count_oracle(4, 32, 8)
    assert net.param_count() == expect == 19_074_120
    assert 19_000_000 < net.param_count() < 21_000_000


def test_desk_param_count_matches_hand_count():
    net = build(DESK, seed=1)
    assert net.param_count() == count_oracle(2, 8, 3)


# forward shape / behavior ------------------------------------------------------------


def test_forward_output_shape_and_finiteness():
    net = build(DESK, seed=2)
    x = np.random.default_rng(0).normal(size=(1, 1, 28, 28, 28)).astype(np.float32)
    out = net.forward(x, training=True, record=True)
    assert out.shape == (1, 3, 12, 12, 12)
    assert np.isfinite(out).all()


def test_build_is_deterministic_per_seed():
    a, b = build(DESK, seed=5), build(DESK, seed=5)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].value, b.params[name].value)
    c = build(DESK, seed=6)
    assert any((a.params[n].value != c.params[n].value).any() for n in a.params)


def test_init_scale_and_zero_biases():
    net = build(DESK, seed=3)
    w = net.params["enc0.conv2.w"].value  # (16, 8, 3, 3, 3)
    bound = np.sqrt(2.0 / (8 * 27))
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.8 * bound
    assert not net.params["enc0.conv2.b"].value.any()
    assert (net.params["enc0.bn2.gamma"].value == 1).all()


def test_whole_net_gradient_matches_finite_differences():
    # float64 net, sum-projection scalar; checks the backward wiring end to end
    cfg = NetworkConfig(levels=2, base_channels=2, num_classes=2, input_tile=(20, 20, 20))
    net = build(cfg, seed=4, dtype=np.float64)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 20, 20, 20))
    r = rng.normal(size=(1, 2) + net.output_shape()[::-1])

    def f():
        return float(np.sum(net.forward(x, training=True) * r))

    net.zero_grad()
    net.forward(x, training=True, record=True)
    net.backward(r.copy())
    # tiny step: a weight perturbation shifts every downstream pre-activation,
    # so some ReLU kinks are always within reach; crossing error scales with
    # the step while a wiring bug would show up at order 1
    step = 1e-6
    for name in ("enc0.conv1.w", "dec0.up.w", "dec0.bn2.gamma", "head.w", "enc1.conv2.b"):
        p = net.params[name]
        flat = p.value.ravel()
        idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            hi = f()
            flat[i] = keep - step
            lo = f()
            flat[i] = keep
            num = (hi - lo) / (2 * step)
            ana = p.grad.ravel()[i]
            assert abs(ana - num) <= 1e-4 * max(1.0, abs(num)), f"{name}[{i}]: {ana} vs {num}"


# checkpoints -------------------------------------------------------------------------


def test_checkpoint_round_trip_bitwise(tmp_path):
    net = build(DESK, seed=7)
    # make running stats non-trivial before saving
    x = np.random.default_rng(2).normal(size=(1, 1, 28, 28, 28)).astype(np.float32)
    net.forward(x, training=True)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    for name in net.params:
        np.testing.assert_array_equal(loaded.params[name].value, net.params[name].value)
    for name in net.buffers:
        np.testing.assert_array_equal(loaded.buffers[name], net.buffers[name])
    # same eval output bit for bit
    np.testing.assert_array_equal(net.forward(x), loaded.forward(x))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    net = build(DESK, seed=8)
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "extra.ckpt").write_bytes(blob + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "extra.ckpt")


def test_remap_head_keeps_trunk_replaces_output_layer():
    net = build(DESK, seed=9)
    out = remap_head(net, 5, seed=1)
    assert out.config.num_classes == 5
    assert out.params["head.w"].value.shape[0] == 5
    np.testing.assert_array_equal(out.params["enc0.conv1.w"].value, net.params["enc0.conv1.w"].value)
    x = np.random.default_rng(3).normal(size=(1, 1, 28, 28, 28)).astype(np.float32)
    assert out.forward(x).shape == (1, 5, 12, 12, 12)
