"""Valid-convolution geometry and parameter budget of the 3D U-Net.

Every 3x3x3 convolution trims a voxel from each face, so the output tile
is strictly smaller than the input tile; the margin is context the network
consumes.  The reference configuration maps 132x132x116 inputs to
44x44x28 outputs and carries about 19 million learnable parameters.
"""

from cascadeseg import NetworkConfig, build, output_shape, param_count

for name, cfg in (
    ("desk", NetworkConfig(levels=2, base_channels=8, num_classes=3, input_tile=(28, 28, 28))),
    ("reference", NetworkConfig(levels=4, base_channels=32, num_classes=8, input_tile=(132, 132, 116))),
):
    out = output_shape(cfg)
    margin = tuple((i - o) // 2 for i, o in zip(cfg.input_tile, out))
    print(
        f"{name:9s}: {'x'.join(map(str, cfg.input_tile))} -> "
        f"{'x'.join(map(str, out))} (margin {margin} per side)"
    )

net = build(NetworkConfig(levels=4, base_channels=32, num_classes=8,
                          input_tile=(132, 132, 116)), seed=0)
print(f"\nreference parameter count: {param_count(net):,}")

largest = max(net.parameters(), key=lambda p: p.value.size)
print(f"largest tensor: {largest.name} {largest.value.shape} "
      f"({largest.value.size:,} values)")
