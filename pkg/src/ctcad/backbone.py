"""Static-graph CNN inference engine.

A network is an ordered DAG of layers over float32 tensors.  The engine
supports the nine layer kinds needed to express densely connected,
residual, and depthwise-separable architectures:

    conv2d, depthwise_conv2d, batch_norm, relu,
    max_pool, avg_pool, global_avg_pool, concat, add

Graphs are loaded from a weight bundle: a directory holding
``manifest.json`` (layer list, tensor shapes, byte offsets) and
``weights.bin`` (little-endian float32 blobs concatenated in manifest
order).  Validation happens entirely at load time; a validated graph is
immutable and safe to share across concurrent forward passes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = frozenset(
    {
        "conv2d",
        "depthwise_conv2d",
        "batch_norm",
        "relu",
        "max_pool",
        "avg_pool",
        "global_avg_pool",
        "concat",
        "add",
    }
)

INPUT_ID = "input"

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
BUNDLE_VERSION = 1
BUNDLE_DTYPE = "f32"


class BundleError(ValueError):
    """The weight bundle or graph definition is invalid."""


class ShapeError(ValueError):
    """Tensor shapes disagree at execution time."""


class ReshapeError(ValueError):
    """A feature vector cannot be laid out as a 2-D grid."""


@dataclass(frozen=True)
class LayerSpec:
    """One node of the network DAG.

    ``inputs`` names producer layers (or ``"input"`` for the graph
    input); ``weights`` maps slot names (kernel, bias, gamma, ...) to
    tensor names in the bundle.
    """

    id: str
    kind: str
    inputs: tuple[str, ...]
    params: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)


@dataclass
class NetworkGraph:
    """Topologically ordered layers plus their weight tensors.

    Built via :func:`build_graph` or :func:`load_bundle`; both validate
    structure and shapes, so a constructed graph always executes.
    """

    layers: list[LayerSpec]
    output: str
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]
    feature_dim: int
    shapes: dict = field(default_factory=dict, repr=False)
    _prepared: dict = field(default_factory=dict, repr=False)


def build_graph(
    layers: list[LayerSpec],
    output: str,
    weights: dict[str, np.ndarray],
    input_shape: tuple[int, int, int],
    feature_dim: int,
) -> NetworkGraph:
    """Assemble and validate a NetworkGraph; raises BundleError on any defect."""
    graph = NetworkGraph(
        layers=list(layers),
        output=output,
        weights=dict(weights),
        input_shape=tuple(input_shape),
        feature_dim=int(feature_dim),
    )
    _validate(graph)
    _prepare(graph)
    return graph


# ---------------------------------------------------------------------------
# validation


def _validate(graph: NetworkGraph) -> None:
    if len(graph.input_shape) != 3 or any(int(v) < 1 for v in graph.input_shape):
        raise BundleError(f"bad input shape {graph.input_shape}")

    seen: set[str] = set()
    shapes: dict[str, tuple] = {INPUT_ID: tuple(int(v) for v in graph.input_shape)}
    for layer in graph.layers:
        if layer.id == INPUT_ID or layer.id in seen:
            raise BundleError(f"duplicate or reserved layer id {layer.id!r}")
        if layer.kind not in LAYER_KINDS:
            raise BundleError(f"unknown layer kind {layer.kind!r} in {layer.id!r}")
        if not layer.inputs:
            raise BundleError(f"layer {layer.id!r} has no inputs")
        for src in layer.inputs:
            if src == layer.id:
                raise BundleError(f"cycle: layer {layer.id!r} consumes its own output")
            if src != INPUT_ID and src not in seen:
                raise BundleError(
                    f"layer {layer.id!r} consumes {src!r} which is not defined "
                    "earlier (cycle or forward reference)"
                )
        in_shapes = [shapes[src] for src in layer.inputs]
        shapes[layer.id] = _infer_shape(layer, in_shapes, graph.weights)
        seen.add(layer.id)

    if graph.output not in seen:
        raise BundleError(f"output layer {graph.output!r} is not defined")
    out_shape = shapes[graph.output]
    out_size = int(np.prod(out_shape))
    if out_size != graph.feature_dim:
        raise BundleError(
            f"declared feature dimension {graph.feature_dim} but output "
            f"{graph.output!r} produces {out_size} values (shape {out_shape})"
        )
    graph.shapes = shapes


def _weight(layer: LayerSpec, slot: str, weights: dict, required=True) -> np.ndarray | None:
    name = layer.weights.get(slot)
    if name is None:
        if required:
            raise BundleError(f"layer {layer.id!r} is missing weight slot {slot!r}")
        return None
    if name not in weights:
        raise BundleError(f"layer {layer.id!r} references absent tensor {name!r}")
    return weights[name]


def _pair(value, name: str, layer_id: str) -> tuple[int, int]:
    if isinstance(value, (int, float)):
        return int(value), int(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return int(value[0]), int(value[1])
    raise BundleError(f"layer {layer_id!r}: bad {name} {value!r}")


def _resolve_padding(padding, in_hw, k_hw, s_hw, layer_id: str):
    """Return (top, bottom, left, right) zero padding."""
    if padding in (None, "valid"):
        return 0, 0, 0, 0
    if padding == "same":
        pads = []
        for size, k, s in zip(in_hw, k_hw, s_hw):
            total = max((math.ceil(size / s) - 1) * s + k - size, 0)
            pads.append((total // 2, total - total // 2))
        (pt, pb), (pl, pr) = pads
        return pt, pb, pl, pr
    py, px = _pair(padding, "padding", layer_id)
    return py, py, px, px


def _conv_out_hw(in_hw, k_hw, s_hw, pads):
    pt, pb, pl, pr = pads
    oh = (in_hw[0] + pt + pb - k_hw[0]) // s_hw[0] + 1
    ow = (in_hw[1] + pl + pr - k_hw[1]) // s_hw[1] + 1
    return oh, ow


def _infer_shape(layer: LayerSpec, in_shapes: list[tuple], weights: dict) -> tuple:
    kind = layer.kind
    lid = layer.id

    def one_input():
        if len(in_shapes) != 1:
            raise BundleError(f"layer {lid!r} ({kind}) takes exactly one input")
        return in_shapes[0]

    def spatial(shape):
        if len(shape) != 3:
            raise BundleError(f"layer {lid!r} ({kind}) needs a HxWxC input, got {shape}")
        return shape

    if kind == "relu":
        return one_input()

    if kind == "batch_norm":
        shape = one_input()
        c = shape[-1]
        for slot in ("gamma", "beta", "mean", "variance"):
            t = _weight(layer, slot, weights)
            if t.shape != (c,):
                raise BundleError(
                    f"layer {lid!r}: {slot} shape {t.shape} != ({c},)"
                )
        return shape

    if kind == "conv2d":
        h, w, c = spatial(one_input())
        kernel = _weight(layer, "kernel", weights)
        if kernel.ndim != 4:
            raise BundleError(f"layer {lid!r}: conv kernel must be 4-D (kh, kw, cin, cout)")
        kh, kw, cin, cout = kernel.shape
        if cin != c:
            raise BundleError(
                f"layer {lid!r}: kernel expects {cin} input channels, got {c}"
            )
        bias = _weight(layer, "bias", weights, required=False)
        if bias is not None and bias.shape != (cout,):
            raise BundleError(f"layer {lid!r}: bias shape {bias.shape} != ({cout},)")
        s_hw = _pair(layer.params.get("stride", 1), "stride", lid)
        pads = _resolve_padding(layer.params.get("padding", "valid"), (h, w), (kh, kw), s_hw, lid)
        oh, ow = _conv_out_hw((h, w), (kh, kw), s_hw, pads)
        if oh < 1 or ow < 1:
            raise BundleError(f"layer {lid!r}: kernel does not fit input {h}x{w}")
        return (oh, ow, cout)

    if kind == "depthwise_conv2d":
        h, w, c = spatial(one_input())
        kernel = _weight(layer, "kernel", weights)
        if kernel.ndim != 3 or kernel.shape[2] != c:
            raise BundleError(
                f"layer {lid!r}: depthwise kernel must be (kh, kw, {c}), got {kernel.shape}"
            )
        kh, kw = kernel.shape[0], kernel.shape[1]
        bias = _weight(layer, "bias", weights, required=False)
        if bias is not None and bias.shape != (c,):
            raise BundleError(f"layer {lid!r}: bias shape {bias.shape} != ({c},)")
        s_hw = _pair(layer.params.get("stride", 1), "stride", lid)
        pads = _resolve_padding(layer.params.get("padding", "valid"), (h, w), (kh, kw), s_hw, lid)
        oh, ow = _conv_out_hw((h, w), (kh, kw), s_hw, pads)
        if oh < 1 or ow < 1:
            raise BundleError(f"layer {lid!r}: kernel does not fit input {h}x{w}")
        return (oh, ow, c)

    if kind in ("max_pool", "avg_pool"):
        h, w, c = spatial(one_input())
        k_hw = _pair(layer.params.get("pool", 2), "pool", lid)
        s_hw = _pair(layer.params.get("stride", k_hw), "stride", lid)
        pads = _resolve_padding(layer.params.get("padding", "valid"), (h, w), k_hw, s_hw, lid)
        oh, ow = _conv_out_hw((h, w), k_hw, s_hw, pads)
        if oh < 1 or ow < 1:
            raise BundleError(f"layer {lid!r}: pool window does not fit input {h}x{w}")
        return (oh, ow, c)

    if kind == "global_avg_pool":
        h, w, c = spatial(one_input())
        return (c,)

    if kind == "concat":
        if len(in_shapes) < 2:
            raise BundleError(f"layer {lid!r}: concat needs at least two inputs")
        hws = set()
        channels = 0
        for shape in in_shapes:
            h, w, c = spatial(shape)
            hws.add((h, w))
            channels += c
        if len(hws) != 1:
            raise BundleError(f"layer {lid!r}: concat inputs disagree on spatial dims {hws}")
        h, w = hws.pop()
        return (h, w, channels)

    if kind == "add":
        if len(in_shapes) < 2:
            raise BundleError(f"layer {lid!r}: add needs at least two inputs")
        if len(set(in_shapes)) != 1:
            raise BundleError(f"layer {lid!r}: add inputs disagree on shape {in_shapes}")
        return in_shapes[0]

    raise BundleError(f"unknown layer kind {kind!r}")  # unreachable


def _prepare(graph: NetworkGraph) -> None:
    """Precompute per-layer constants (reshaped kernels, BN affine folds)."""
    prepared: dict[str, tuple] = {}
    for layer in graph.layers:
        if layer.kind == "conv2d":
            kernel = graph.weights[layer.weights["kernel"]].astype(np.float32, copy=False)
            cout = kernel.shape[3]
            mat = np.ascontiguousarray(kernel.reshape(-1, cout))
            bias = _weight(layer, "bias", graph.weights, required=False)
            if bias is not None:
                bias = bias.astype(np.float32, copy=False)
            prepared[layer.id] = (mat, kernel.shape, bias)
        elif layer.kind == "depthwise_conv2d":
            kernel = graph.weights[layer.weights["kernel"]].astype(np.float32, copy=False)
            bias = _weight(layer, "bias", graph.weights, required=False)
            if bias is not None:
                bias = bias.astype(np.float32, copy=False)
            prepared[layer.id] = (kernel, bias)
        elif layer.kind == "batch_norm":
            g = graph.weights[layer.weights["gamma"]].astype(np.float64)
            b = graph.weights[layer.weights["beta"]].astype(np.float64)
            m = graph.weights[layer.weights["mean"]].astype(np.float64)
            v = graph.weights[layer.weights["variance"]].astype(np.float64)
            eps = float(layer.params.get("epsilon", 1e-5))
            scale = (g / np.sqrt(v + eps)).astype(np.float32)
            shift = (b - m * g / np.sqrt(v + eps)).astype(np.float32)
            prepared[layer.id] = (scale, shift)
    graph._prepared = prepared


# ---------------------------------------------------------------------------
# execution


def forward(graph: NetworkGraph, x: np.ndarray) -> np.ndarray:
    """Run a full forward pass; returns the float32 feature vector.

    Deterministic: identical input and bundle give bit-identical output.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.shape != graph.input_shape:
        raise ShapeError(
            f"graph expects input shape {graph.input_shape}, got {x.shape}"
        )
    out = _execute(graph.layers, graph.output, graph.weights, graph._prepared, x)
    vec = np.ascontiguousarray(out.reshape(-1), dtype=np.float32)
    if vec.shape[0] != graph.feature_dim:
        raise ShapeError(
            f"forward produced {vec.shape[0]} values, declared {graph.feature_dim}"
        )
    return vec


def dense_block_forward(
    x: np.ndarray,
    layers: list[LayerSpec],
    weights: dict[str, np.ndarray],
) -> np.ndarray:
    """Execute a dense block given as a layer list; returns the last output.

    Each in-block composite consumes the channel-concatenation of the
    block input and every previous composite output, so the channel
    count grows by the growth rate per layer.
    """
    x = np.asarray(x, dtype=np.float32)
    if not layers:
        return x
    graph = NetworkGraph(
        layers=list(layers),
        output=layers[-1].id,
        weights=dict(weights),
        input_shape=x.shape,
        feature_dim=0,
    )
    # reuse structural validation minus the feature-dim contract
    seen: set[str] = set()
    shapes: dict[str, tuple] = {INPUT_ID: x.shape}
    for layer in graph.layers:
        for src in layer.inputs:
            if src == layer.id or (src != INPUT_ID and src not in seen):
                raise BundleError(f"layer {layer.id!r}: bad wiring")
        shapes[layer.id] = _infer_shape(layer, [shapes[s] for s in layer.inputs], graph.weights)
        seen.add(layer.id)
    _prepare(graph)
    return _execute(graph.layers, graph.output, graph.weights, graph._prepared, x)


def _execute(layers, output, weights, prepared, x):
    # free each activation once its last consumer has run
    remaining = {INPUT_ID: 0}
    for layer in layers:
        remaining[layer.id] = 0
        for src in layer.inputs:
            remaining[src] += 1
    remaining[output] += 1

    acts: dict[str, np.ndarray] = {INPUT_ID: x}
    for layer in layers:
        ins = [acts[src] for src in layer.inputs]
        acts[layer.id] = _run_layer(layer, ins, prepared)
        for src in layer.inputs:
            remaining[src] -= 1
            if remaining[src] == 0:
                del acts[src]
    return acts[output]


def _run_layer(layer: LayerSpec, ins: list[np.ndarray], prepared: dict) -> np.ndarray:
    kind = layer.kind
    if kind == "relu":
        return np.maximum(ins[0], np.float32(0.0))
    if kind == "batch_norm":
        scale, shift = prepared[layer.id]
        return ins[0] * scale + shift
    if kind == "conv2d":
        mat, kshape, bias = prepared[layer.id]
        return _conv2d(ins[0], mat, kshape, bias, layer)
    if kind == "depthwise_conv2d":
        kernel, bias = prepared[layer.id]
        return _depthwise_conv2d(ins[0], kernel, bias, layer)
    if kind == "max_pool":
        return _pool(ins[0], layer, maximum=True)
    if kind == "avg_pool":
        return _pool(ins[0], layer, maximum=False)
    if kind == "global_avg_pool":
        return ins[0].mean(axis=(0, 1), dtype=np.float32)
    if kind == "concat":
        hw = {a.shape[:2] for a in ins}
        if len(hw) != 1:
            raise ShapeError(f"layer {layer.id!r}: concat spatial mismatch {hw}")
        return np.concatenate(ins, axis=2)
    if kind == "add":
        if len({a.shape for a in ins}) != 1:
            raise ShapeError(f"layer {layer.id!r}: add shape mismatch")
        out = ins[0] + ins[1]
        for extra in ins[2:]:
            out += extra
        return out
    raise ShapeError(f"unknown layer kind {kind!r}")  # unreachable after validation


def _conv2d(x, mat, kshape, bias, layer):
    kh, kw, cin, cout = kshape
    h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"layer {layer.id!r}: expected {cin} channels, got {c}")
    sh, sw = _pair(layer.params.get("stride", 1), "stride", layer.id)
    pt, pb, pl, pr = _resolve_padding(
        layer.params.get("padding", "valid"), (h, w), (kh, kw), (sh, sw), layer.id
    )
    if (kh, kw) == (1, 1) and (sh, sw) == (1, 1) and (pt, pb, pl, pr) == (0, 0, 0, 0):
        out = x.reshape(-1, cin) @ mat
        oh, ow = h, w
    else:
        if pt or pb or pl or pr:
            x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
        win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::sh, ::sw]
        oh, ow = win.shape[0], win.shape[1]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(oh * ow, kh * kw * cin)
        out = cols @ mat
    if bias is not None:
        out += bias
    return out.reshape(oh, ow, cout)


def _depthwise_conv2d(x, kernel, bias, layer):
    kh, kw, c = kernel.shape
    h, w, cx = x.shape
    if cx != c:
        raise ShapeError(f"layer {layer.id!r}: expected {c} channels, got {cx}")
    sh, sw = _pair(layer.params.get("stride", 1), "stride", layer.id)
    pt, pb, pl, pr = _resolve_padding(
        layer.params.get("padding", "valid"), (h, w), (kh, kw), (sh, sw), layer.id
    )
    if pt or pb or pl or pr:
        x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::sh, ::sw]
    out = np.einsum("hwcij,ijc->hwc", win, kernel, optimize=True).astype(np.float32, copy=False)
    if bias is not None:
        out += bias
    return out


def _pool(x, layer, maximum: bool):
    h, w, c = x.shape
    kh, kw = _pair(layer.params.get("pool", 2), "pool", layer.id)
    sh, sw = _pair(layer.params.get("stride", (kh, kw)), "stride", layer.id)
    pt, pb, pl, pr = _resolve_padding(
        layer.params.get("padding", "valid"), (h, w), (kh, kw), (sh, sw), layer.id
    )
    if pt or pb or pl or pr:
        fill = np.float32(-np.inf) if maximum else np.float32(0.0)
        x = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=fill)
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::sh, ::sw]
    if maximum:
        return win.max(axis=(3, 4))
    return win.mean(axis=(3, 4), dtype=np.float32)


# ---------------------------------------------------------------------------
# feature grid


def reshape_feature_grid(vec: np.ndarray) -> np.ndarray:
    """Lay a feature vector out as the squarest row-major 2-D grid.

    The row count is the largest divisor of the dimension not exceeding
    its square root: 1024 -> 32x32, 2048 -> 32x64.  Dimensions with no
    such split (primes, 1) raise ReshapeError.
    """
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise ReshapeError(f"expected a vector, got shape {vec.shape}")
    dim = vec.shape[0]
    rows = 0
    for r in range(int(math.isqrt(dim)), 1, -1):
        if dim % r == 0:
            rows = r
            break
    if rows < 2:
        raise ReshapeError(f"dimension {dim} has no non-trivial grid factorization")
    return vec.reshape(rows, dim // rows)


# ---------------------------------------------------------------------------
# bundle IO


def save_bundle(graph: NetworkGraph, path: str) -> None:
    """Write manifest.json + weights.bin under ``path`` (a directory)."""
    os.makedirs(path, exist_ok=True)
    tensor_names = sorted(graph.weights)
    tensors = []
    offset = 0
    with open(os.path.join(path, WEIGHTS_NAME), "wb") as fh:
        for name in tensor_names:
            arr = np.ascontiguousarray(graph.weights[name], dtype="<f4")
            tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(arr.tobytes())
            offset += arr.nbytes
    manifest = {
        "version": BUNDLE_VERSION,
        "dtype": BUNDLE_DTYPE,
        "input_shape": list(graph.input_shape),
        "feature_dim": graph.feature_dim,
        "output": graph.output,
        "layers": [
            {
                "id": layer.id,
                "kind": layer.kind,
                "inputs": list(layer.inputs),
                "params": layer.params,
                "weights": layer.weights,
            }
            for layer in graph.layers
        ],
        "tensors": tensors,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_bundle(path: str) -> NetworkGraph:
    """Load and fully validate a weight bundle directory.

    Raises BundleError for a missing or malformed manifest, absent or
    misshapen tensors, offset drift, cyclic graphs, or unknown layer
    kinds.  Loading happens once; the returned graph is ready to serve.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    weights_path = os.path.join(path, WEIGHTS_NAME)
    if not os.path.isfile(manifest_path):
        raise BundleError(f"missing {MANIFEST_NAME} in {path}")
    if not os.path.isfile(weights_path):
        raise BundleError(f"missing {WEIGHTS_NAME} in {path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"unreadable manifest: {exc}") from exc

    for key in ("version", "dtype", "input_shape", "feature_dim", "output", "layers", "tensors"):
        if key not in manifest:
            raise BundleError(f"manifest is missing {key!r}")
    if manifest["dtype"] != BUNDLE_DTYPE:
        raise BundleError(f"unsupported dtype {manifest['dtype']!r}")
    if int(manifest["version"]) != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {manifest['version']!r}")

    blob = np.fromfile(weights_path, dtype="<f4")
    weights: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(int(v) for v in entry["shape"])
        offset = int(entry["offset"])
        if offset != expected_offset:
            raise BundleError(
                f"tensor {name!r}: offset {offset} != expected {expected_offset} "
                "(tensors must be concatenated in manifest order)"
            )
        count = int(np.prod(shape)) if shape else 1
        start = offset // 4
        if offset % 4 or start + count > blob.shape[0]:
            raise BundleError(f"tensor {name!r} overruns weights.bin")
        weights[name] = blob[start : start + count].reshape(shape)
        expected_offset = offset + count * 4
    if expected_offset != blob.shape[0] * 4:
        raise BundleError(
            f"weights.bin holds {blob.shape[0] * 4} bytes but manifest accounts "
            f"for {expected_offset}"
        )

    layers = []
    for entry in manifest["layers"]:
        try:
            layers.append(
                LayerSpec(
                    id=str(entry["id"]),
                    kind=str(entry["kind"]),
                    inputs=tuple(entry["inputs"]),
                    params=dict(entry.get("params", {})),
                    weights=dict(entry.get("weights", {})),
                )
            )
        except (KeyError, TypeError) as exc:
            raise BundleError(f"malformed layer entry {entry!r}: {exc}") from exc

    return build_graph(
        layers=layers,
        output=str(manifest["output"]),
        weights=weights,
        input_shape=tuple(int(v) for v in manifest["input_shape"]),
        feature_dim=int(manifest["feature_dim"]),
    )
