"""The multi-level graph convolution architecture.

A model is a set of GNN blocks, one per locality level k. Each block
builds one KNN graph from the input coordinates and reuses it for every
graph-convolution step inside the block: transform rows with a shared
dense layer, gather the transformed rows over the graph, max-pool over
the neighborhood, and concatenate the result with the step's input
(except at the final step). A block with k = 0 skips graph construction
entirely and degenerates to a pointwise MLP chain with the same
concatenation skips.

Block outputs are concatenated per point and fused by a shared trunk
layer; the classification head pools the trunk features over all points,
while the segmentation head concatenates that pooled vector back onto
every point's trunk features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMismatch,
    HeadNotConfigured,
    InvalidK,
    MalformedFile,
    MissingFile,
    ShapeMismatch,
)
from .knngraph import (
    KnnGraph,
    build_knn_indexed,
    gather_neighbors,
    scatter_neighbor_grads,
)
from .pointset import PointCloud
from . import tensor
from .tensor import DenseLayer


@dataclass
class GcnBlockConfig:
    """One graph-convolution step inside a GNN block."""

    in_channels: int
    out_channels: int
    is_last: bool = False

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def output_width(self) -> int:
        """Width of the step output: concat with the input unless last."""
        return self.out_channels if self.is_last else self.out_channels + self.in_channels


@dataclass
class GnnBlockConfig:
    """A chain of graph-convolution steps sharing one KNN graph (k = 0: graph-free)."""

    k: int
    f0_channels: int
    gcn_blocks: list[GcnBlockConfig]

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not self.gcn_blocks:
            raise ValueError("need at least one graph-convolution step")
        width = self.f0_channels
        for i, cfg in enumerate(self.gcn_blocks):
            if cfg.in_channels != width:
                raise ValueError(
                    f"step {i} expects {cfg.in_channels} channels, chain provides {width}"
                )
            if cfg.is_last != (i == len(self.gcn_blocks) - 1):
                raise ValueError("exactly the final step must be marked last")
            width = cfg.output_width

    @property
    def output_width(self) -> int:
        return self.gcn_blocks[-1].output_width


def make_gnn_block(k: int, f0_channels: int, conv_channels: list[int]) -> GnnBlockConfig:
    """Build a block config from output widths, deriving the concat chain."""
    steps = []
    width = f0_channels
    for i, out in enumerate(conv_channels):
        last = i == len(conv_channels) - 1
        steps.append(GcnBlockConfig(width, out, is_last=last))
        width = steps[-1].output_width
    return GnnBlockConfig(k, f0_channels, steps)


@dataclass
class SegmentationConfig:
    num_parts: int
    head_hidden: list[int] = field(default_factory=list)


@dataclass
class ModelConfig:
    """Full architecture description: locality levels, widths, and heads."""

    n_points: int
    gnn_blocks: list[GnnBlockConfig]
    trunk_out_channels: int
    classifier_hidden: list[int]
    num_classes: int
    segmentation: SegmentationConfig | None = None

    def __post_init__(self):
        if not self.gnn_blocks:
            raise ValueError("need at least one GNN block")
        if self.trunk_out_channels < 1:
            raise ValueError("trunk width must be >= 1")
        if self.num_classes < 1:
            raise ValueError("need at least one class")

    @property
    def k_values(self) -> list[int]:
        return [b.k for b in self.gnn_blocks]

    @property
    def trunk_in_channels(self) -> int:
        return sum(b.output_width for b in self.gnn_blocks)


def preset_light(num_classes: int = 40, n_points: int = 1024,
                 num_parts: int | None = None) -> ModelConfig:
    """1024-point model: locality levels {63, 15, 0}, block widths 32/128, trunk 256."""
    blocks = [make_gnn_block(k, 3, [32, 128]) for k in (63, 15, 0)]
    seg = SegmentationConfig(num_parts, [256, 128]) if num_parts else None
    return ModelConfig(n_points, blocks, 256, [64], num_classes, seg)


def preset_lighter(num_classes: int = 40, n_points: int = 512,
                   num_parts: int | None = None) -> ModelConfig:
    """512-point model: locality levels {31, 7, 0}, block widths 16/64, trunk 128."""
    blocks = [make_gnn_block(k, 3, [16, 64]) for k in (31, 7, 0)]
    seg = SegmentationConfig(num_parts, [128, 64]) if num_parts else None
    return ModelConfig(n_points, blocks, 128, [64], num_classes, seg)


PRESETS = {"light": preset_light, "lighter": preset_lighter}


class ModelState:
    """All trainable layers of a model, addressable by stable names."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = rng if rng is not None else np.random.default_rng(0)

        self.gnn_layers: list[tuple[DenseLayer, list[DenseLayer]]] = []
        for block in config.gnn_blocks:
            f0 = DenseLayer(3, block.f0_channels, rng=rng, dtype=dtype)
            convs = [
                DenseLayer(step.in_channels, step.out_channels, rng=rng, dtype=dtype)
                for step in block.gcn_blocks
            ]
            self.gnn_layers.append((f0, convs))

        self.trunk = DenseLayer(config.trunk_in_channels, config.trunk_out_channels,
                                rng=rng, dtype=dtype)

        self.classifier: list[DenseLayer] = []
        width = config.trunk_out_channels
        for hidden in config.classifier_hidden:
            self.classifier.append(DenseLayer(width, hidden, rng=rng, dtype=dtype))
            width = hidden
        self.classifier.append(DenseLayer(width, config.num_classes, relu=False,
                                          rng=rng, dtype=dtype))

        self.seg_head: list[DenseLayer] | None = None
        if config.segmentation is not None:
            self.seg_head = []
            width = 2 * config.trunk_out_channels
            for hidden in config.segmentation.head_hidden:
                self.seg_head.append(DenseLayer(width, hidden, rng=rng, dtype=dtype))
                width = hidden
            self.seg_head.append(DenseLayer(width, config.segmentation.num_parts,
                                            relu=False, rng=rng, dtype=dtype))

    def named_layers(self) -> list[tuple[str, DenseLayer]]:
        out = []
        for b, (f0, convs) in enumerate(self.gnn_layers):
            out.append((f"gnn{b}.mlp0", f0))
            out.extend((f"gnn{b}.mlp{t}", layer) for t, layer in enumerate(convs, start=1))
        out.append(("trunk.mlp", self.trunk))
        out.extend((f"classifier.{i}", layer) for i, layer in enumerate(self.classifier))
        if self.seg_head is not None:
            out.extend((f"seghead.{i}", layer) for i, layer in enumerate(self.seg_head))
        return out

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for _, layer in self.named_layers())

    def zero_grad(self) -> None:
        for _, layer in self.named_layers():
            layer.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name, layer in self.named_layers():
            arrays[name + ".weight"] = layer.weight
            arrays[name + ".bias"] = layer.bias
        return arrays

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise CheckpointMismatch(f"layer names differ (missing {missing}, extra {extra})")
        for name, layer in self.named_layers():
            weight = np.asarray(arrays[name + ".weight"])
            bias = np.asarray(arrays[name + ".bias"]).reshape(-1)
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise CheckpointMismatch(
                    f"{name}: checkpoint shape {weight.shape}/{bias.shape} != "
                    f"model shape {layer.weight.shape}/{layer.bias.shape}"
                )
            layer.weight = weight.astype(self.dtype)
            layer.bias = bias.astype(self.dtype)
            layer.grad_weight = np.zeros_like(layer.weight)
            layer.grad_bias = np.zeros_like(layer.bias)

    def save(self, path) -> None:
        tensor.save_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(tensor.load_checkpoint(path))


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    return ModelState(config, rng=np.random.default_rng(seed), dtype=dtype)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _DenseSite:
    layer: DenseLayer
    x: np.ndarray
    mask: np.ndarray | None


@dataclass
class _ConvCache:
    site: _DenseSite
    pool: tensor.PoolIndexCache | None
    in_width: int
    is_last: bool


@dataclass
class _BlockCache:
    graph: KnnGraph | None
    f0_site: _DenseSite
    convs: list[_ConvCache]


@dataclass
class ModelCache:
    """Per-sample activations retained by a forward pass for exact backward."""

    task: str
    blocks: list[_BlockCache]
    block_widths: list[int]
    trunk_site: _DenseSite
    gpool: tensor.PoolIndexCache
    head_sites: list[_DenseSite]
    n_points: int


def _dense_site(layer: DenseLayer, x: np.ndarray):
    out, mask = tensor.dense_apply(layer, x)
    return out, _DenseSite(layer, x, mask)


def gcn_block_forward(layer: DenseLayer, graph: KnnGraph | None, x: np.ndarray,
                      is_last: bool = False) -> np.ndarray:
    """One graph-convolution step: transform, gather, neighborhood max-pool, concat.

    ``graph=None`` selects global mode (k = 0): the transformed features pass
    through without gather or pooling. Unless ``is_last``, the step input is
    concatenated onto the pooled output.
    """
    z, _ = tensor.dense_apply(layer, x)
    if graph is not None:
        gathered = gather_neighbors(graph, z)
        pooled, _ = tensor.neighborhood_maxpool(gathered)
    else:
        pooled = z
    return pooled if is_last else tensor.concat_channels(pooled, x)


def _gcn_forward_cached(layer: DenseLayer, graph: KnnGraph | None, x: np.ndarray,
                        is_last: bool):
    z, site = _dense_site(layer, x)
    if graph is not None:
        gathered = gather_neighbors(graph, z)
        pooled, pool = tensor.neighborhood_maxpool(gathered)
    else:
        pooled, pool = z, None
    out = pooled if is_last else tensor.concat_channels(pooled, x)
    return out, _ConvCache(site, pool, x.shape[1], is_last)


def _block_forward_cached(block_cfg: GnnBlockConfig, f0: DenseLayer,
                          convs: list[DenseLayer], coords: np.ndarray):
    n = coords.shape[0]
    if block_cfg.k > n:
        raise InvalidK(f"k={block_cfg.k} exceeds point count {n}")
    graph = None
    if block_cfg.k > 0:
        graph = build_knn_indexed(PointCloud(coords), block_cfg.k)

    x, f0_site = _dense_site(f0, coords)
    conv_caches = []
    for step_cfg, layer in zip(block_cfg.gcn_blocks, convs):
        x, cache = _gcn_forward_cached(layer, graph, x, step_cfg.is_last)
        conv_caches.append(cache)
    return x, _BlockCache(graph, f0_site, conv_caches)


def gnn_block_forward(block_cfg: GnnBlockConfig, f0: DenseLayer,
                      convs: list[DenseLayer], cloud: PointCloud) -> np.ndarray:
    """Run one GNN block: lift coordinates with the input MLP, then chain the
    graph-convolution steps over a single shared KNN graph."""
    coords = cloud.points.astype(f0.weight.dtype)
    out, _ = _block_forward_cached(block_cfg, f0, convs, coords)
    return out


def _trunk_forward_cached(model: ModelState, cloud: PointCloud):
    coords = cloud.points.astype(model.dtype)
    n = coords.shape[0]
    max_k = max(model.config.k_values)
    if n < max_k:
        raise ShapeMismatch(f"cloud has {n} points, model needs >= {max_k}")

    outputs = []
    block_caches = []
    for block_cfg, (f0, convs) in zip(model.config.gnn_blocks, model.gnn_layers):
        out, cache = _block_forward_cached(block_cfg, f0, convs, coords)
        outputs.append(out)
        block_caches.append(cache)

    fused = outputs[0]
    for out in outputs[1:]:
        fused = tensor.concat_channels(fused, out)
    trunk_out, trunk_site = _dense_site(model.trunk, fused)
    widths = [b.output_width for b in model.config.gnn_blocks]
    return trunk_out, block_caches, widths, trunk_site


def trunk_forward(model: ModelState, cloud: PointCloud) -> np.ndarray:
    """Per-point fused features: concatenated block outputs through the trunk MLP."""
    out, _, _, _ = _trunk_forward_cached(model, cloud)
    return out


def forward_classification(model: ModelState, cloud: PointCloud):
    """Class logits plus the activation cache needed for a backward pass."""
    trunk_out, block_caches, widths, trunk_site = _trunk_forward_cached(model, cloud)
    pooled, gpool = tensor.global_maxpool(trunk_out)
    head_sites = []
    x = pooled
    for layer in model.classifier:
        x, site = _dense_site(layer, x)
        head_sites.append(site)
    cache = ModelCache("classification", block_caches, widths, trunk_site,
                       gpool, head_sites, cloud.n_points)
    return x[0], cache


def classify(model: ModelState, cloud: PointCloud) -> np.ndarray:
    """Logits vector of length ``num_classes``."""
    logits, _ = forward_classification(model, cloud)
    return logits


def forward_segmentation(model: ModelState, cloud: PointCloud):
    """Per-point part logits plus the activation cache for backward."""
    if model.seg_head is None:
        raise HeadNotConfigured("model has no segmentation head")
    trunk_out, block_caches, widths, trunk_site = _trunk_forward_cached(model, cloud)
    pooled, gpool = tensor.global_maxpool(trunk_out)
    x = tensor.concat_channels(np.repeat(pooled, cloud.n_points, axis=0), trunk_out)
    head_sites = []
    for layer in model.seg_head:
        x, site = _dense_site(layer, x)
        head_sites.append(site)
    cache = ModelCache("segmentation", block_caches, widths, trunk_site,
                       gpool, head_sites, cloud.n_points)
    return x, cache


def segment(model: ModelState, cloud: PointCloud) -> np.ndarray:
    """Per-point part logits, shape ``(N, num_parts)``."""
    logits, _ = forward_segmentation(model, cloud)
    return logits


def encode(model: ModelState, cloud: PointCloud) -> np.ndarray:
    """Pre-classifier embedding: trunk features max-pooled over all points."""
    trunk_out, _, _, _ = _trunk_forward_cached(model, cloud)
    pooled, _ = tensor.global_maxpool(trunk_out)
    return pooled[0]


def _backward_heads(cache: ModelCache, grad: np.ndarray) -> np.ndarray:
    for site in reversed(cache.head_sites):
        grad = tensor.dense_grad(site.layer, site.x, site.mask, grad)
    return grad


def _backward_block(block: _BlockCache, grad: np.ndarray) -> None:
    for conv in reversed(block.convs):
        if conv.is_last:
            grad_pooled, grad_skip = grad, None
        else:
            grad_pooled, grad_skip = tensor.split_channels(grad, grad.shape[1] - conv.in_width)
        if conv.pool is not None:
            grad_gathered = tensor.neighborhood_maxpool_backward(conv.pool, grad_pooled)
            grad_z = scatter_neighbor_grads(block.graph, grad_gathered)
        else:
            grad_z = grad_pooled
        grad = tensor.dense_grad(conv.site.layer, conv.site.x, conv.site.mask, grad_z)
        if grad_skip is not None:
            grad = grad + grad_skip
    # input coordinates take no gradient; the lift layer's parameters do
    tensor.dense_grad(block.f0_site.layer, block.f0_site.x, block.f0_site.mask, grad)


def model_backward(model: ModelState, cache: ModelCache, loss_grad: np.ndarray) -> None:
    """Accumulate exact parameter gradients for the forward pass in ``cache``.

    ``loss_grad`` is the loss gradient w.r.t. the logits: a vector for
    classification, an ``(N, num_parts)`` matrix for segmentation.
    Gradients add onto each layer's ``grad_weight`` / ``grad_bias``.
    """
    loss_grad = np.asarray(loss_grad, dtype=model.dtype)
    if cache.task == "classification":
        grad = _backward_heads(cache, loss_grad.reshape(1, -1))
        grad_trunk_out = tensor.global_maxpool_backward(cache.gpool, grad)
    else:
        if loss_grad.shape[0] != cache.n_points:
            raise ShapeMismatch(f"loss grad rows {loss_grad.shape[0]} != {cache.n_points}")
        grad = _backward_heads(cache, loss_grad)
        c = cache.trunk_site.layer.out_channels
        grad_repeat, grad_direct = tensor.split_channels(grad, c)
        grad_pooled = grad_repeat.sum(axis=0, keepdims=True)
        grad_trunk_out = grad_direct + tensor.global_maxpool_backward(cache.gpool, grad_pooled)

    grad_fused = tensor.dense_grad(cache.trunk_site.layer, cache.trunk_site.x,
                                   cache.trunk_site.mask, grad_trunk_out)
    offset = 0
    for block, width in zip(cache.blocks, cache.block_widths):
        _backward_block(block, grad_fused[:, offset : offset + width])
        offset += width


# ---------------------------------------------------------------------------
# config file format: "key = value" lines
# ---------------------------------------------------------------------------

def save_model_config(path, config: ModelConfig) -> None:
    lines = [
        f"n_points = {config.n_points}",
        "k_values = " + ",".join(str(k) for k in config.k_values),
        f"f0_channels = {config.gnn_blocks[0].f0_channels}",
        "gcn_channels = " + ",".join(
            str(step.out_channels) for step in config.gnn_blocks[0].gcn_blocks
        ),
        f"trunk_channels = {config.trunk_out_channels}",
        "classifier_hidden = " + ",".join(str(w) for w in config.classifier_hidden),
        f"num_classes = {config.num_classes}",
    ]
    if config.segmentation is not None:
        lines.append(f"num_parts = {config.segmentation.num_parts}")
        lines.append("seg_hidden = " + ",".join(str(w) for w in config.segmentation.head_hidden))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_int_list(value: str) -> list[int]:
    value = value.strip()
    if not value:
        return []
    return [int(tok) for tok in value.split(",")]


def load_model_config(path) -> ModelConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    fields: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise MalformedFile(path, f"expected 'key = value', got {stripped!r}", line_no)
        key, value = stripped.split("=", 1)
        fields[key.strip()] = value.strip()

    try:
        n_points = int(fields["n_points"])
        k_values = _parse_int_list(fields["k_values"])
        f0_channels = int(fields["f0_channels"])
        gcn_channels = _parse_int_list(fields["gcn_channels"])
        trunk_channels = int(fields["trunk_channels"])
        classifier_hidden = _parse_int_list(fields.get("classifier_hidden", ""))
        num_classes = int(fields["num_classes"])
    except KeyError as exc:
        raise MalformedFile(path, f"missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise MalformedFile(path, f"bad value: {exc}") from None

    seg = None
    if "num_parts" in fields:
        seg = SegmentationConfig(int(fields["num_parts"]),
                                 _parse_int_list(fields.get("seg_hidden", "")))
    blocks = [make_gnn_block(k, f0_channels, gcn_channels) for k in k_values]
    return ModelConfig(n_points, blocks, trunk_channels, classifier_hidden, num_classes, seg)
