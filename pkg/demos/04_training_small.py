"""Train the desk-scale network on two phantoms and watch the loss fall.

Training samples one input tile per step from inside each case's candidate
region, applies elastic deformation, and follows plain SGD with momentum.
The run is a deterministic function of (config, dataset, seed).
"""

import tempfile
from pathlib import Path

from cascadeseg import (
    AugmentConfig, Dataset, NetworkConfig, PhantomSpec, TrainCase, TrainConfig,
    body_mask, build, generate_dataset, load_checkpoint, param_count,
    save_checkpoint, train, validate,
)

spec = PhantomSpec(dims=(64, 64, 64), include_organs=False, seed=21)
cases = [
    TrainCase(image, labels, body_mask(image).mask)
    for image, labels in generate_dataset(spec, 3, seed=21)
]
dataset = Dataset(train=cases[:2], val=cases[2:])

net = build(NetworkConfig(levels=2, base_channels=8, num_classes=spec.num_classes,
                          input_tile=(28, 28, 28)), seed=0)
print(f"desk network: {param_count(net):,} parameters")

config = TrainConfig(iterations=300, lr=1e-3, seed=0, val_interval=100,
                     augment=AugmentConfig(max_disp=3.0, trans_vox=6.0))
net, result = train(net, dataset, config)

print("\niteration  loss      val_dice")
for it, loss, vd in result.history[:: max(1, len(result.history) // 8)]:
    print(f"{it:9d}  {loss:8.4f}  {'' if vd != vd else f'{vd:.3f}'}")
print(f"\nbest mean foreground dice {result.best_val_dice:.3f} "
      f"at iteration {result.best_iteration}")

path = Path(tempfile.mkdtemp(prefix="train_demo_")) / "model.ckpt"
save_checkpoint(net, path)
reloaded = load_checkpoint(path)
print(f"checkpoint round trip ok: {validate(reloaded, dataset.val) == validate(net, dataset.val)}")
