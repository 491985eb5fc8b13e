"""Tile planning, probability fusion, and the two-stage pipeline."""

import numpy as np
import pytest

from cascadeseg import (
    BinaryMask,
    CascadeConfig,
    EngineError,
    InvalidMode,
    NetworkConfig,
    NoForeground,
    ShapeError,
    Volume3,
    body_mask,
    build,
    plan_tiles,
    predict_volume,
    resample_down2,
    two_stage_predict,
)
from cascadeseg.loss import softmax
from cascadeseg.phantom import PhantomSpec, generate
from cascadeseg.tiler import FusionAccumulator, coverage_counts

REF = NetworkConfig(levels=4, base_channels=32, num_classes=8, input_tile=(132, 132, 116))
DESK = NetworkConfig(levels=2, base_channels=8, num_classes=3, input_tile=(28, 28, 28))


def coverage_oracle(origins, out_xyz, vol_xyz):
    nx, ny, nz = vol_xyz
    counts = np.zeros((nz, ny, nx), int)
    for x, y, z in origins:
        for dz in range(out_xyz[2]):
            for dy in range(out_xyz[1]):
                for dx in range(out_xyz[0]):
                    if z + dz < nz and y + dy < ny and x + dx < nx:
                        counts[z + dz, y + dy, x + dx] += 1
    return counts


def test_plan_mode_none_grid_counts():
    plan = plan_tiles((88, 88, 56), REF, "none")
    assert plan.output_dims == (44, 44, 28)
    assert len(plan.origins) == 8
    assert plan.margins == ((44, 44), (44, 44), (44, 44))
    counts = coverage_counts(plan)
    assert (counts == 1).all()


def test_plan_xy_half_grid_counts_and_interior_coverage():
    plan = plan_tiles((88, 88, 56), REF, "xy_half")
    assert len(plan.origins) == 18  # 3 x 3 x 2
    counts = coverage_counts(plan)
    # interior of the x-y plane sees four tiles, corners one, edges two
    assert counts[0, 44, 44] == 4
    assert counts[0, 0, 0] == 1
    assert counts[0, 0, 44] == 2
    assert counts.max() == 4


def test_coverage_counts_match_enumeration_oracle():
    plan = plan_tiles((30, 25, 14), DESK, "xy_half")
    expect = coverage_oracle(plan.origins, plan.output_dims, (30, 25, 14))
    assert np.array_equal(coverage_counts(plan), expect)
    plan2 = plan_tiles((30, 25, 14), DESK, "none")
    oracle2 = coverage_oracle(plan2.origins, plan2.output_dims, (30, 25, 14))
    assert (oracle2 == 1).all()  # overhang never double-covers in-volume voxels


def test_plan_restrict_drops_far_tiles():
    restrict = np.zeros((56, 88, 88), bool)
    restrict[:20, :40, :40] = True  # one corner
    plan = plan_tiles((88, 88, 56), REF, "none", restrict=BinaryMask(restrict, (1, 1, 1)))
    assert plan.origins == [(0, 0, 0)]


def test_plan_rejects_bad_inputs():
    with pytest.raises(InvalidMode):
        plan_tiles((88, 88, 56), REF, "diagonal")
    with pytest.raises(ShapeError):
        plan_tiles((0, 88, 56), REF, "none")
    with pytest.raises(ShapeError):
        plan_tiles((88, 88, 56), REF, "none", restrict=BinaryMask(np.ones((2, 2, 2), bool), (1, 1, 1)))


def test_fusion_two_term_average():
    acc = FusionAccumulator(2, (2, 1, 1))
    acc.add(np.stack([np.full((1, 1, 2), 0.2), np.full((1, 1, 2), 0.8)]), (0, 0, 0))
    acc.add(np.stack([np.full((1, 1, 2), 0.6), np.full((1, 1, 2), 0.4)]), (0, 0, 0))
    probs, labels = acc.finalize()
    assert np.allclose(probs[0], 0.4) and np.allclose(probs[1], 0.6)
    assert (labels.data == 1).all()


def test_fusion_uncovered_requested_voxel_raises():
    acc = FusionAccumulator(2, (4, 1, 1))
    acc.add(np.ones((2, 1, 1, 2)) * 0.5, (0, 0, 0))
    with pytest.raises(EngineError):
        acc.finalize()


def test_fusion_crops_padding_overhang():
    acc = FusionAccumulator(2, (3, 1, 1))
    tile = np.zeros((2, 1, 1, 2))
    tile[0] = 0.3
    tile[1] = 0.7
    acc.add(tile, (2, 0, 0))  # second half overhangs
    acc.add(tile, (0, 0, 0))
    probs, _ = acc.finalize()
    assert probs[1].ravel().tolist() == pytest.approx([0.7, 0.7, 0.7])


def _unit_volume(n=24, seed=0):
    rng = np.random.default_rng(seed)
    return Volume3(rng.normal(size=(n, n, n)).astype(np.float32), (1, 1, 1))


def test_tiled_prediction_equals_whole_volume_forward():
    net = build(DESK, seed=3)
    vol = _unit_volume(24)
    plan = plan_tiles(vol.dims, net.config, "none")
    probs, labels = predict_volume(net, vol, plan)
    # oracle: one valid forward pass over the mirror-padded volume
    padded = np.pad(vol.data, 8, mode="reflect")
    logits = net.forward(padded[None, None], training=False)
    expect = softmax(logits)[0]
    assert expect.shape == (3, 24, 24, 24)
    assert np.allclose(probs, expect, atol=1e-5)
    assert np.array_equal(labels.data, np.argmax(expect, axis=0).astype(np.uint8))


def test_fused_probabilities_form_distributions():
    net = build(DESK, seed=4)
    vol = _unit_volume(30, seed=1)  # not a tile multiple
    for mode in ("none", "xy_half"):
        plan = plan_tiles(vol.dims, net.config, mode)
        probs, _ = predict_volume(net, vol, plan)
        assert probs.min() >= 0.0
        assert np.abs(probs.sum(axis=0) - 1.0).max() < 1e-5


def test_prediction_independent_of_tile_order():
    net = build(DESK, seed=5)
    vol = _unit_volume(30, seed=2)
    plan = plan_tiles(vol.dims, net.config, "xy_half")
    probs, labels = predict_volume(net, vol, plan)
    rng = np.random.default_rng(0)
    rng.shuffle(plan.origins)
    probs2, labels2 = predict_volume(net, vol, plan)
    assert np.allclose(probs, probs2, atol=1e-6)
    assert np.array_equal(labels.data, labels2.data)


def test_xy_half_agrees_with_mode_none_on_deep_interior():
    # away from volume borders every contributing input window is
    # in-bounds, so overlapping estimates are identical and averaging
    # changes nothing
    net = build(DESK, seed=6)
    vol = _unit_volume(48, seed=3)
    pn, _ = predict_volume(net, vol, plan_tiles(vol.dims, net.config, "none"))
    ph, _ = predict_volume(net, vol, plan_tiles(vol.dims, net.config, "xy_half"))
    inner = (slice(None), slice(20, 28), slice(20, 28), slice(20, 28))
    assert np.allclose(pn[inner], ph[inner], atol=1e-5)


def test_restrict_forces_background_outside():
    net = build(DESK, seed=7)
    vol = _unit_volume(24, seed=4)
    restrict = np.zeros((24, 24, 24), bool)
    restrict[:, :12, :] = True
    plan = plan_tiles(vol.dims, net.config, "none", restrict=BinaryMask(restrict, (1, 1, 1)))
    probs, labels = predict_volume(net, vol, plan, restrict=BinaryMask(restrict, (1, 1, 1)))
    assert (labels.data[~restrict] == 0).all()
    assert (probs[0][~restrict] == 1.0).all()
    # inside the mask, values match the unrestricted run tile-for-tile
    full_probs, _ = predict_volume(net, vol, plan_tiles(vol.dims, net.config, "none"))
    assert np.allclose(probs[:, restrict], full_probs[:, restrict], atol=1e-12)


def test_predict_rejects_mismatched_plan():
    net = build(DESK, seed=0)
    vol = _unit_volume(24)
    other = plan_tiles((20, 20, 20), net.config, "none")
    with pytest.raises(ShapeError):
        predict_volume(net, vol, other)
    wrong_net_plan = plan_tiles(vol.dims, NetworkConfig(2, 8, 3, (36, 36, 36)), "none")
    with pytest.raises(ShapeError):
        predict_volume(net, vol, wrong_net_plan)


def _phantom_and_nets(k=5, seed=0):
    spec = PhantomSpec()
    vol, lab = generate(spec, seed=seed)
    cfg = NetworkConfig(levels=2, base_channels=8, num_classes=k, input_tile=(28, 28, 28))
    return vol, lab, build(cfg, seed=seed), build(cfg, seed=seed + 1)


def test_two_stage_shapes_and_bookkeeping():
    vol, _, net1, net2 = _phantom_and_nets()
    labels, probs, info = two_stage_predict(net1, net2, vol)
    assert labels.dims == vol.dims
    assert probs.shape == (5, 64, 64, 64)
    assert np.abs(probs.sum(axis=0) - 1.0).max() < 1e-4
    assert 0 < info["c1_fraction"] <= 1
    assert 0 < info["c2_fraction"] <= 1
    assert info["stage1_seconds"] > 0 and info["stage2_seconds"] > 0
    assert labels.data.dtype == np.uint8


def test_two_stage_same_net_large_radius_repeats_stage1():
    vol, _, net1, _ = _phantom_and_nets(seed=1)
    cfg = CascadeConfig(dilation_radius=32)
    labels, _, info = two_stage_predict(net1, net1, vol, cfg)
    s1 = info["stage1_labels"].data
    s2 = info["stage2_labels_half"].data
    c1 = body_mask(resample_down2(vol, mode="linear")).mask.data
    assert np.array_equal(s1[c1], s2[c1])
    assert info["c2_fraction"] >= info["c1_fraction"]


def test_two_stage_empty_foreground_warns_and_backgrounds():
    vol, _, net1, net2 = _phantom_and_nets(seed=2)
    with pytest.warns(UserWarning):
        labels, probs, info = two_stage_predict(
            net1, net2, vol, foreground_min_label=5
        )
    assert (labels.data == 0).all()
    assert (probs[0] == 1.0).all()
    assert info["c2_fraction"] == 0.0


def test_two_stage_air_volume_propagates_no_foreground():
    vol = Volume3(np.full((64, 64, 64), -1000, np.float32), (1, 1, 1))
    _, _, net1, net2 = _phantom_and_nets(seed=3)
    with pytest.raises(NoForeground):
        two_stage_predict(net1, net2, vol)


def test_two_stage_rejects_class_count_mismatch():
    vol, _, net1, _ = _phantom_and_nets(seed=4)
    other = build(NetworkConfig(2, 8, 4, (28, 28, 28)), seed=9)
    with pytest.raises(ShapeError):
        two_stage_predict(net1, other, vol)
