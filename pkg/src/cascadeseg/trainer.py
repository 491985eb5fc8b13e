"""Momentum-SGD training with augmentation, validation snapshots, and
fine-tuning.

Every iteration draws its own child generator from (seed, iteration), so
a run is a pure function of (network seed, dataset, config).  Validation
sweeps the held-out cases with mode-none tiling; the best mean foreground
Dice snapshot is restored at the end of training.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .augment import (
    AugmentConfig,
    sample_deformation,
    sample_rigid,
    sample_subvolume,
    warp_case,
)
from .cascade import CascadeConfig, body_mask, candidate_from_prediction
from .errors import DivergedError, InvalidMode, NoForeground, ShapeError
from .loss import ClassStats, class_stats, class_weights, softmax, weighted_ce
from .metrics import dice
from .network import UNet, load_checkpoint, remap_head
from .tiler import plan_tiles, predict_volume
from .volume import BinaryMask, LabelVolume, Volume3, resample_down2


@dataclass
class TrainCase:
    image: Volume3
    labels: LabelVolume
    candidate: BinaryMask

    def __post_init__(self):
        if not (
            self.image.data.shape
            == self.labels.data.shape
            == self.candidate.data.shape
        ):
            raise ShapeError("case image, labels, and candidate dims disagree")


@dataclass
class Dataset:
    train: list
    val: list


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 1
    val_interval: int = 500
    seed: int = 0
    weighting: str = "frequency"  # or "uniform" (ablation)
    augment: AugmentConfig = AugmentConfig()
    decay_every: int = 0  # 0 keeps the rate constant
    decay_factor: float = 1.0
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be >= 0 and momentum in [0, 1)")
        if self.batch_size < 1 or self.val_interval < 1:
            raise ValueError("batch_size and val_interval must be positive")
        if self.weighting not in ("frequency", "uniform"):
            raise InvalidMode(f"unknown weighting {self.weighting!r}")
        if self.decay_every < 0 or self.decay_factor <= 0:
            raise ValueError("bad decay settings")


@dataclass
class TrainResult:
    history: list  # (iteration, loss, val_dice or nan)
    best_iteration: int
    best_val_dice: float
    effective_lr: float

    def history_text(self) -> str:
        lines = ["iteration\tloss\tval_dice"]
        for it, loss, vd in self.history:
            tail = "" if math.isnan(vd) else f"{vd:.4f}"
            lines.append(f"{it}\t{loss:.6f}\t{tail}")
        return "\n".join(lines) + "\n"


def sgd_step(params: dict, grads: dict, state: dict, lr: float, momentum: float):
    """v <- momentum*v - lr*g; p <- p + v, per named array, in place."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p)
        v *= momentum
        v -= lr * g
        state[name] = v
        p += v
    return params, state


def _region_weights(cases, num_classes: int, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return np.full(num_classes, 1.0 / num_classes)
    counts = np.zeros(num_classes, np.int64)
    total = 0
    for case in cases:
        st = class_stats(case.labels.data, case.candidate.data, num_classes)
        counts += st.counts
        total += st.total
    return class_weights(ClassStats(counts, total))


def validate(net: UNet, cases) -> float:
    """Mean foreground Dice over cases, mode-none tiled prediction."""
    scores = []
    for case in cases:
        plan = plan_tiles(case.image.dims, net.config, "none", restrict=case.candidate)
        _, pred = predict_volume(net, case.image, plan, restrict=case.candidate)
        per_class = [
            dice(pred.data == k, case.labels.data == k)
            for k in range(1, net.config.num_classes)
        ]
        scores.append(float(np.mean(per_class)))
    return float(np.mean(scores))


def _snapshot(net: UNet):
    return (
        {p.name: p.value.copy() for p in net.parameters()},
        {n: b.copy() for n, b in net.buffers.items()},
    )


def _restore(net: UNet, snap) -> None:
    params, buffers = snap
    for p in net.parameters():
        p.value[...] = params[p.name]
    for n, b in net.buffers.items():
        b[...] = buffers[n]


def train(net: UNet, dataset: Dataset, config: TrainConfig, log=None):
    """Run the SGD loop; returns (net, TrainResult).

    The returned network carries the best-validation snapshot when a
    validation split exists, otherwise the final parameters.
    """
    if not dataset.train:
        raise ValueError("training split is empty")
    k = net.config.num_classes
    weights = _region_weights(dataset.train, k, config.weighting)
    vel = {}
    history = []
    best_dice, best_iter, best_snap = float("-inf"), 0, None

    for it in range(1, config.iterations + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, it]))
        lr = config.lr
        if config.decay_every:
            lr *= config.decay_factor ** ((it - 1) // config.decay_every)

        net.zero_grad()
        loss_sum = 0.0
        for _ in range(config.batch_size):
            case = dataset.train[int(rng.integers(len(dataset.train)))]
            vol, lab, cand = case.image, case.labels, case.candidate
            if config.augment.enabled:
                field = sample_deformation(vol.dims, config.augment, rng)
                rigid = sample_rigid(config.augment, rng)
                wvol, wlab, wcand = warp_case(vol, lab, cand, field, rigid)
                if wcand.data.any():  # keep the raw case if warped away
                    vol, lab, cand = wvol, wlab, wcand
            x, y, m = sample_subvolume(vol, lab, cand, net.config, rng)
            logits = net.forward(x, training=True, record=True)
            loss, grad = weighted_ce(softmax(logits), y, weights, m)
            net.backward(grad)
            loss_sum += loss
        loss_val = loss_sum / config.batch_size
        if not np.isfinite(loss_val) or loss_val > config.divergence_limit:
            raise DivergedError(it, loss_val)
        if config.batch_size > 1:
            for p in net.parameters():
                p.grad /= config.batch_size

        sgd_step(
            {p.name: p.value for p in net.parameters()},
            {p.name: p.grad for p in net.parameters()},
            vel,
            lr,
            config.momentum,
        )

        val_dice = float("nan")
        if dataset.val and it % config.val_interval == 0:
            val_dice = validate(net, dataset.val)
            if val_dice > best_dice:
                best_dice, best_iter, best_snap = val_dice, it, _snapshot(net)
        history.append((it, float(loss_val), val_dice))
        if log is not None:
            tail = "" if math.isnan(val_dice) else f"{val_dice:.4f}"
            log(f"{it}\t{loss_val:.6f}\t{tail}")

    if best_snap is not None:
        _restore(net, best_snap)
    if best_snap is None:
        best_dice = float("nan")
    return net, TrainResult(history, best_iter, best_dice, config.lr)


def finetune(checkpoint_path, dataset: Dataset, config: TrainConfig,
             num_classes: int, log=None):
    """Continue from a checkpoint with a fresh head at a tenth of the rate."""
    net = load_checkpoint(checkpoint_path)
    net = remap_head(net, num_classes, seed=config.seed)
    slow = dataclasses.replace(config, lr=config.lr * 0.1)
    return train(net, dataset, slow, log=log)


# dataset assembly -------------------------------------------------------------


def stage1_cases(pairs, config: CascadeConfig = CascadeConfig()) -> list:
    """Half-resolution cases with body-mask candidates from image pairs."""
    cases = []
    for vol, labels in pairs:
        half = resample_down2(vol, "linear")
        lab_half = resample_down2(labels, "nearest")
        cases.append(TrainCase(half, lab_half, body_mask(half, config).mask))
    return cases


def stage2_cases(cases, net1: UNet, config: CascadeConfig = CascadeConfig(),
                 foreground_min_label: int = 1) -> list:
    """Swap candidates for the dilated stage-1 predictions, per case."""
    out = []
    for i, case in enumerate(cases):
        plan = plan_tiles(case.image.dims, net1.config, "none", restrict=case.candidate)
        _, pred = predict_volume(net1, case.image, plan, restrict=case.candidate)
        c2 = candidate_from_prediction(
            pred, config.dilation_radius, foreground_min_label
        )
        if not c2.mask.data.any():
            raise NoForeground(f"stage-1 prediction empty on case {i}")
        out.append(TrainCase(case.image, case.labels, c2.mask))
    return out


def split_dataset(cases, val_count: int) -> Dataset:
    """Last ``val_count`` cases become the validation split."""
    if not 0 <= val_count < len(cases):
        raise ValueError(f"cannot hold out {val_count} of {len(cases)} cases")
    cut = len(cases) - val_count
    return Dataset(list(cases[:cut]), list(cases[cut:]))
