"""Graph builders for the inference engine.

Shipped architectures are *shapes*, not trained models: weights are
randomly initialized (seeded) so the engine, formats, and service can be
exercised end to end.  Real pretrained weights are a user-supplied
bundle in the same format.

``densenet121`` reproduces the channel schedule of the 121-layer densely
connected network: stem 64, blocks of (6, 12, 24, 16) layers at growth
32 with bottleneck 4x, and 0.5-compression transitions, ending in a
1024-wide global average pool.
"""

from __future__ import annotations

import argparse

import numpy as np

from ctcad.backbone import INPUT_ID, LayerSpec, NetworkGraph, build_graph, save_bundle


class _Net:
    """Accumulates layer specs plus the weight shapes they require."""

    def __init__(self):
        self.layers: list[LayerSpec] = []
        self.shapes: dict[str, tuple] = {}

    def add(self, lid, kind, inputs, params=None, weights=None, weight_shapes=None):
        self.layers.append(
            LayerSpec(
                id=lid,
                kind=kind,
                inputs=tuple(inputs),
                params=dict(params or {}),
                weights=dict(weights or {}),
            )
        )
        for name, shape in (weight_shapes or {}).items():
            self.shapes[name] = tuple(shape)
        return lid

    def conv(self, lid, src, cin, cout, k, stride=1, padding=0, bias=False):
        weights = {"kernel": f"{lid}/kernel"}
        shapes = {f"{lid}/kernel": (k, k, cin, cout)}
        if bias:
            weights["bias"] = f"{lid}/bias"
            shapes[f"{lid}/bias"] = (cout,)
        self.add(lid, "conv2d", [src], {"stride": stride, "padding": padding}, weights, shapes)
        return lid

    def depthwise(self, lid, src, c, k, stride=1, padding=0, bias=False):
        weights = {"kernel": f"{lid}/kernel"}
        shapes = {f"{lid}/kernel": (k, k, c)}
        if bias:
            weights["bias"] = f"{lid}/bias"
            shapes[f"{lid}/bias"] = (c,)
        self.add(lid, "depthwise_conv2d", [src], {"stride": stride, "padding": padding}, weights, shapes)
        return lid

    def bn(self, lid, src, c):
        slots = ("gamma", "beta", "mean", "variance")
        weights = {s: f"{lid}/{s}" for s in slots}
        shapes = {f"{lid}/{s}": (c,) for s in slots}
        self.add(lid, "batch_norm", [src], None, weights, shapes)
        return lid

    def relu(self, lid, src):
        self.add(lid, "relu", [src])
        return lid

    def bn_relu(self, prefix, src, c):
        return self.relu(f"{prefix}_relu", self.bn(f"{prefix}_bn", src, c))


def _dense_block(net: _Net, prefix: str, entry: str, in_ch: int, n_layers: int,
                 growth: int, bottleneck: int) -> tuple[str, int]:
    """Stack composites where layer l consumes the concat of the block
    input and all previous in-block outputs; returns (output id, channels)."""
    feeds = [entry]
    channels = in_ch
    for l in range(n_layers):
        if len(feeds) == 1:
            src = feeds[0]
        else:
            src = net.add(f"{prefix}_l{l}_cat", "concat", list(feeds))
        width = bottleneck * growth
        x = net.bn_relu(f"{prefix}_l{l}_a", src, channels)
        x = net.conv(f"{prefix}_l{l}_squeeze", x, channels, width, k=1)
        x = net.bn_relu(f"{prefix}_l{l}_b", x, width)
        x = net.conv(f"{prefix}_l{l}_grow", x, width, growth, k=3, padding=1)
        feeds.append(x)
        channels += growth
    out = net.add(f"{prefix}_out", "concat", list(feeds))
    return out, channels


def _densenet(net: _Net, *, in_ch: int, init: int, growth: int, blocks: tuple[int, ...],
              bottleneck: int, compression: float, stem_kernel: int, stem_stride: int,
              stem_pool: bool) -> tuple[str, int]:
    pad = stem_kernel // 2
    x = net.conv("stem_conv", INPUT_ID, in_ch, init, k=stem_kernel, stride=stem_stride, padding=pad)
    x = net.bn_relu("stem", x, init)
    if stem_pool:
        x = net.add("stem_pool", "max_pool", [x], {"pool": 3, "stride": 2, "padding": 1})
    channels = init
    for b, n_layers in enumerate(blocks):
        x, channels = _dense_block(net, f"block{b + 1}", x, channels, n_layers, growth, bottleneck)
        if b != len(blocks) - 1:
            squeezed = int(channels * compression)
            x = net.bn_relu(f"trans{b + 1}", x, channels)
            x = net.conv(f"trans{b + 1}_conv", x, channels, squeezed, k=1)
            x = net.add(f"trans{b + 1}_pool", "avg_pool", [x], {"pool": 2, "stride": 2})
            channels = squeezed
    x = net.bn_relu("head", x, channels)
    x = net.add("features", "global_avg_pool", [x])
    return x, channels


def dense_block_layers(in_ch: int, n_layers: int, growth: int, bottleneck: int = 4,
                       prefix: str = "block") -> tuple[list[LayerSpec], dict, str, int]:
    """A standalone dense block; returns (layers, weight shapes, output id,
    output channels = in_ch + n_layers * growth)."""
    net = _Net()
    out, channels = _dense_block(net, prefix, INPUT_ID, in_ch, n_layers, growth, bottleneck)
    return net.layers, net.shapes, out, channels


def densenet121_layers(in_ch: int = 3) -> tuple[list[LayerSpec], dict, str, int]:
    net = _Net()
    out, dim = _densenet(
        net,
        in_ch=in_ch,
        init=64,
        growth=32,
        blocks=(6, 12, 24, 16),
        bottleneck=4,
        compression=0.5,
        stem_kernel=7,
        stem_stride=2,
        stem_pool=True,
    )
    return net.layers, net.shapes, out, dim


def small_densenet_layers(
    in_ch: int = 3,
    init: int = 8,
    growth: int = 4,
    blocks: tuple[int, ...] = (2, 2),
    bottleneck: int = 4,
    compression: float = 0.5,
    stem_stride: int = 4,
) -> tuple[list[LayerSpec], dict, str, int]:
    """Tiny 2-block network: with the defaults the feature dim is
    (8 + 2*4) * 0.5 + 2*4 = 16."""
    net = _Net()
    out, dim = _densenet(
        net,
        in_ch=in_ch,
        init=init,
        growth=growth,
        blocks=blocks,
        bottleneck=bottleneck,
        compression=compression,
        stem_kernel=3,
        stem_stride=stem_stride,
        stem_pool=False,
    )
    return net.layers, net.shapes, out, dim


def residual_demo_layers(in_ch: int = 3, width: int = 8) -> tuple[list[LayerSpec], dict, str, int]:
    """Minimal residual (skip-connection) graph exercising ``add``."""
    net = _Net()
    x = net.conv("stem", INPUT_ID, in_ch, width, k=3, stride=2, padding=1)
    x = net.bn_relu("stem", x, width)
    skip = x
    y = net.conv("res_conv1", x, width, width, k=3, padding=1)
    y = net.bn_relu("res", y, width)
    y = net.conv("res_conv2", y, width, width, k=3, padding=1)
    y = net.bn("res_bn2", y, width)
    x = net.add("res_add", "add", [skip, y])
    x = net.relu("res_out", x)
    x = net.add("features", "global_avg_pool", [x])
    return net.layers, net.shapes, x, width


def depthwise_demo_layers(in_ch: int = 3, width: int = 8) -> tuple[list[LayerSpec], dict, str, int]:
    """Mobile-style block: depthwise 3x3 followed by pointwise 1x1."""
    net = _Net()
    x = net.conv("stem", INPUT_ID, in_ch, width, k=3, stride=2, padding=1)
    x = net.bn_relu("stem", x, width)
    x = net.depthwise("dw", x, width, k=3, padding=1)
    x = net.bn_relu("dw", x, width)
    x = net.conv("pw", x, width, 2 * width, k=1)
    x = net.bn_relu("pw", x, 2 * width)
    x = net.add("features", "global_avg_pool", [x])
    return net.layers, net.shapes, x, 2 * width


_ARCHS = {
    "densenet121": densenet121_layers,
    "small": small_densenet_layers,
    "residual": residual_demo_layers,
    "depthwise": depthwise_demo_layers,
}


def random_weights(shapes: dict[str, tuple], seed: int = 0, zero_additive: bool = False) -> dict:
    """He-scaled random conv kernels plus plausible batch-norm statistics.

    ``zero_additive`` zeroes every additive constant (conv biases, BN
    shifts and running means) so a zero input propagates to a zero
    feature vector.
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in sorted(shapes.items()):
        leaf = name.rsplit("/", 1)[-1]
        if leaf == "kernel":
            fan_in = int(np.prod(shape[:-1])) if len(shape) == 4 else int(np.prod(shape[:2]))
            arr = rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)
        elif leaf == "gamma":
            arr = rng.uniform(0.5, 1.5, size=shape)
        elif leaf == "variance":
            arr = rng.uniform(0.5, 1.5, size=shape)
        elif leaf in ("beta", "mean", "bias"):
            arr = np.zeros(shape) if zero_additive else rng.normal(0.0, 0.1, size=shape)
        else:
            arr = rng.normal(0.0, 0.1, size=shape)
        weights[name] = arr.astype(np.float32)
    return weights


def make_graph(
    arch: str = "densenet121",
    *,
    input_shape: tuple[int, int, int] = (224, 224, 3),
    seed: int = 0,
    zero_additive: bool = False,
    **arch_kwargs,
) -> NetworkGraph:
    """Build a randomly initialized NetworkGraph for a named architecture."""
    if arch not in _ARCHS:
        raise ValueError(f"unknown arch {arch!r}; choose from {sorted(_ARCHS)}")
    layers, shapes, output, dim = _ARCHS[arch](in_ch=input_shape[2], **arch_kwargs)
    weights = random_weights(shapes, seed=seed, zero_additive=zero_additive)
    return build_graph(layers, output, weights, input_shape, dim)


def write_demo_bundle(path: str, arch: str = "densenet121", *, seed: int = 0,
                      zero_additive: bool = False,
                      input_shape: tuple[int, int, int] = (224, 224, 3),
                      **arch_kwargs) -> NetworkGraph:
    graph = make_graph(arch, input_shape=input_shape, seed=seed,
                       zero_additive=zero_additive, **arch_kwargs)
    save_bundle(graph, path)
    return graph


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m ctcad.zoo",
        description="Write a randomly initialized demo weight bundle.",
    )
    parser.add_argument("--arch", default="densenet121", choices=sorted(_ARCHS))
    parser.add_argument("--out", required=True, help="bundle directory to create")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--zero-additive", action="store_true")
    args = parser.parse_args(argv)
    graph = write_demo_bundle(args.out, args.arch, seed=args.seed, zero_additive=args.zero_additive)
    print(f"wrote {args.arch} bundle to {args.out} (feature dim {graph.feature_dim})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
