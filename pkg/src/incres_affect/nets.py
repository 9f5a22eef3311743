"""Inception-ResNet blocks and the three affect-regression networks.

``shallow``: stem (valid padding) -> Inception-ResNet-A -> dropout -> dense(2)
``deep``:    stem (same padding, 49->25->13) -> Inception-ResNet-A
             -> reduction (13->7) -> Inception-ResNet-B -> dropout -> dense(2)
``lstm``:    the deep trunk and dropout, then a width LSTM and a height LSTM
             whose final states are concatenated -> dense(2)

Widths default to a scaled-down Inception-ResNet-v1 table and are all
configurable through :class:`ArchConfig`.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidOverride, ShapeMismatch, UnknownVariant
from .layers import (Activation, BatchNormParams, DenseParams, DropoutParams, Mode,
                     Padding, batchnorm, concat_channels, conv2d, dense, dropout, flatten,
                     global_avg_pool, init_conv, init_dense, maxpool, output_extent, relu)
from .lstm import LstmParams, dual_direction_head
from .tensor import Rng, Tensor, add, no_grad, scale

INPUT_SHAPE = (49, 49, 3)
OUTPUT_DIM = 2
HEAD_POOLING = ("average", "flatten")


class Variant(str, enum.Enum):
    SHALLOW = "shallow"
    DEEP = "deep"
    LSTM = "lstm"


def parse_variant(value) -> Variant:
    try:
        return Variant(str(value.value if isinstance(value, Variant) else value).lower())
    except ValueError:
        raise UnknownVariant(
            f"unknown variant {value!r}; expected one of {[v.value for v in Variant]}") from None


class BlockKind(str, enum.Enum):
    STEM = "stem"
    INC_RES_A = "inc_res_a"
    REDUCTION = "reduction"
    INC_RES_B = "inc_res_b"
    DROPOUT = "dropout"
    DENSE = "dense"
    LSTM_HEAD = "lstm_head"


RESIDUAL_KINDS = (BlockKind.INC_RES_A, BlockKind.INC_RES_B)


@dataclass
class ArchConfig:
    variant: Variant = Variant.DEEP
    width_multiplier: float = 1.0
    # conv3x3/s2, conv3x3, conv3x3, [maxpool3x3/s2], conv1x1, conv3x3
    stem_widths: tuple[int, ...] = (32, 32, 64, 48, 64)
    inc_a_width: int = 16
    reduction_width: int = 64
    inc_b_width: int = 32
    keep_prob: float = 0.8
    residual_scale: float = 0.1
    lstm_hidden: int = 200
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3
    # how a 4-D feature map enters the dense layer: "average" or "flatten"
    head_pooling: str = "average"
    init_seed: int = 0

    def __post_init__(self):
        self.variant = parse_variant(self.variant)
        self.stem_widths = tuple(int(w) for w in self.stem_widths)
        problems = []
        if len(self.stem_widths) != 5 or min(self.stem_widths) < 1:
            problems.append(f"stem_widths needs 5 positive ints, got {self.stem_widths}")
        if not self.width_multiplier > 0:
            problems.append("width_multiplier must be positive")
        for name in ("inc_a_width", "reduction_width", "inc_b_width", "lstm_hidden"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be a positive integer")
        if not 0 < self.keep_prob <= 1:
            problems.append("keep_prob must lie in (0, 1]")
        if not 0 < self.residual_scale <= 1:
            problems.append("residual_scale must lie in (0, 1]")
        if not 0 < self.bn_momentum < 1:
            problems.append("bn_momentum must lie in (0, 1)")
        if not self.bn_epsilon > 0:
            problems.append("bn_epsilon must be positive")
        if self.head_pooling not in HEAD_POOLING:
            problems.append(f"head_pooling must be one of {HEAD_POOLING}, got {self.head_pooling!r}")
        if problems:
            raise InvalidOverride("; ".join(problems))

    def width(self, base: int) -> int:
        return max(1, int(round(base * self.width_multiplier)))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        d["stem_widths"] = list(self.stem_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidOverride(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **overrides) -> "ArchConfig":
        d = self.to_dict()
        d.update(overrides)
        return ArchConfig.from_dict(d)


_KEY_ALIASES = {"dropout_keep_prob": "keep_prob", "width_multipliers": "width_multiplier"}


def _coerce(name: str, raw: str, lineno: int):
    typ = {f.name: f.type for f in dataclasses.fields(ArchConfig)}[name]
    try:
        if name in ("variant", "head_pooling"):
            return raw
        if name == "stem_widths":
            return tuple(int(v) for v in raw.replace("(", "").replace(")", "").split(",") if v.strip())
        if typ == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise InvalidOverride(f"line {lineno}: cannot parse {name} = {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    known = {f.name for f in dataclasses.fields(ArchConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise InvalidOverride(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split(sep, 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            raise InvalidOverride(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw.strip().strip('"').strip("'"), lineno)
    return out


def load_config(path, **overrides) -> ArchConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ArchConfig.from_dict(values)


@dataclass
class LayerConfig:
    kind: str  # "conv" or "maxpool"
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.SAME
    out_channels: int | None = None
    activation: Activation = Activation.RELU


def conv(out_channels, kernel, stride=1, padding=Padding.SAME, activation=Activation.RELU):
    kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    stride = (stride, stride) if isinstance(stride, int) else tuple(stride)
    return LayerConfig("conv", kernel, stride, Padding(padding), out_channels, Activation(activation))


def pool(kernel, stride, padding):
    return LayerConfig("maxpool", (kernel, kernel), (stride, stride), Padding(padding))


@dataclass
class BlockSpec:
    kind: BlockKind
    name: str
    branches: list[list[LayerConfig]] = field(default_factory=list)
    residual_scale: float = 1.0
    projection: LayerConfig | None = None
    keep_prob: float = 1.0
    hidden: int = 0
    out_features: int = 0
    pooling: str = "flatten"


@dataclass
class NetworkSpec:
    variant: Variant
    blocks: list[BlockSpec]
    config: ArchConfig
    input_shape: tuple[int, int, int] = INPUT_SHAPE
    output_dim: int = OUTPUT_DIM

    def count(self, kind: BlockKind) -> int:
        return sum(b.kind is kind for b in self.blocks)


def _stem(cfg: ArchConfig, padding: Padding) -> BlockSpec:
    w = [cfg.width(x) for x in cfg.stem_widths]
    layers = [
        conv(w[0], 3, 2, padding),
        conv(w[1], 3, 1, padding),
        conv(w[2], 3, 1, Padding.SAME),
        pool(3, 2, padding),
        conv(w[3], 1, 1, padding),
        conv(w[4], 3, 1, padding),
    ]
    return BlockSpec(BlockKind.STEM, "stem", [layers])


def _inc_res_a(cfg: ArchConfig, channels: int) -> BlockSpec:
    a = cfg.width(cfg.inc_a_width)
    return BlockSpec(
        BlockKind.INC_RES_A, "inc_res_a",
        [[conv(a, 1)],
         [conv(a, 1), conv(a, 3)],
         [conv(a, 1), conv(a, 3), conv(a, 3)]],
        residual_scale=cfg.residual_scale,
        projection=conv(channels, 1, activation=Activation.LINEAR),
    )


def _reduction(cfg: ArchConfig) -> BlockSpec:
    r = cfg.width(cfg.reduction_width)
    return BlockSpec(BlockKind.REDUCTION, "reduction",
                     [[conv(r, 3, 2)], [pool(3, 2, Padding.SAME)]])


def _inc_res_b(cfg: ArchConfig, channels: int) -> BlockSpec:
    b = cfg.width(cfg.inc_b_width)
    return BlockSpec(
        BlockKind.INC_RES_B, "inc_res_b",
        [[conv(b, 1)],
         [conv(b, 1), conv(b, (1, 7)), conv(b, (7, 1))]],
        residual_scale=cfg.residual_scale,
        projection=conv(channels, 1, activation=Activation.LINEAR),
    )


def make_spec(cfg: ArchConfig) -> NetworkSpec:
    variant = cfg.variant
    if variant is Variant.SHALLOW:
        stem = _stem(cfg, Padding.VALID)
    else:
        stem = _stem(cfg, Padding.SAME)
    stem_out = stem.branches[0][-1].out_channels
    blocks = [stem, _inc_res_a(cfg, stem_out)]
    if variant is not Variant.SHALLOW:
        red = _reduction(cfg)
        blocks += [red, _inc_res_b(cfg, stem_out + red.branches[0][0].out_channels)]
    blocks.append(BlockSpec(BlockKind.DROPOUT, "dropout", keep_prob=cfg.keep_prob))
    if variant is Variant.LSTM:
        blocks.append(BlockSpec(BlockKind.LSTM_HEAD, "lstm_head", hidden=cfg.lstm_hidden))
    blocks.append(BlockSpec(BlockKind.DENSE, "dense", out_features=OUTPUT_DIM,
                            pooling=cfg.head_pooling))
    return NetworkSpec(variant, blocks, cfg)


class Network:
    """A built network: its spec plus every layer's parameters.

    ``layers`` maps a dotted path (``inc_res_a.b1.0``) to the parameter
    object(s) for that layer; convolutional layers hold a
    ``(ConvParams, BatchNormParams)`` pair.
    """

    def __init__(self, spec: NetworkSpec, layers: dict, shapes: dict):
        self.spec = spec
        self.layers = layers
        self.shapes = shapes

    @property
    def config(self) -> ArchConfig:
        return self.spec.config

    @property
    def variant(self) -> Variant:
        return self.spec.variant

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors in a fixed order."""
        out = {}
        for path, obj in self.layers.items():
            if isinstance(obj, tuple):
                cp, bn = obj
                out[f"{path}.kernel"] = cp.kernel
                out[f"{path}.bias"] = cp.bias
                out[f"{path}.bn.gamma"] = bn.gamma
                out[f"{path}.bn.beta"] = bn.beta
            elif isinstance(obj, DenseParams):
                out[f"{path}.weight"] = obj.weight
                out[f"{path}.bias"] = obj.bias
            elif isinstance(obj, LstmParams):
                for name, t in obj.tensors().items():
                    out[f"{path}.{name}"] = t
        return out

    def named_buffers(self) -> dict[str, Tensor]:
        """Non-trainable state (batchnorm running statistics)."""
        out = {}
        for path, obj in self.layers.items():
            if isinstance(obj, tuple):
                bn = obj[1]
                out[f"{path}.bn.running_mean"] = bn.running_mean
                out[f"{path}.bn.running_var"] = bn.running_var
        return out

    def state_tensors(self) -> dict[str, Tensor]:
        return {**self.named_parameters(), **self.named_buffers()}

    def zero_grad(self):
        for t in self.named_parameters().values():
            t.grad = None

    def feature_width(self) -> int:
        """Width of the vector entering the final dense layer."""
        return self.layers["dense"].weight.shape[0]

    def forward(self, batch: Tensor, mode=Mode.TRAIN, rng: Rng | None = None,
                probe: dict | None = None) -> Tensor:
        return forward(self, batch, mode, rng, probe)

    def predict(self, images: np.ndarray, batch_size: int = 64, clamp: bool = True) -> np.ndarray:
        """Eval-mode predictions as an (n, 2) array."""
        outs = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunk = Tensor(images[start : start + batch_size])
                outs.append(forward(self, chunk, Mode.EVAL).data)
        pred = np.concatenate(outs, axis=0) if outs else np.zeros((0, OUTPUT_DIM))
        return np.clip(pred, -1.0, 1.0) if clamp else pred


def _run_layer(layer: LayerConfig, params, x: Tensor, mode: Mode) -> Tensor:
    if layer.kind == "maxpool":
        return maxpool(x, layer.kernel, layer.stride, layer.padding)
    cp, bn = params
    return batchnorm(conv2d(x, cp), bn, mode)


def _run_branch(block: BlockSpec, b: int, net: Network, x: Tensor, mode: Mode) -> Tensor:
    for j, layer in enumerate(block.branches[b]):
        x = _run_layer(layer, net.layers.get(f"{block.name}.b{b}.{j}"), x, mode)
    return x


def forward(net: Network, batch: Tensor, mode=Mode.TRAIN, rng: Rng | None = None,
            probe: dict | None = None) -> Tensor:
    """Per-frame (valence, arousal) predictions, shape n x 2, unclamped."""
    mode = Mode(mode)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(net.spec.input_shape):
        raise ShapeMismatch(
            f"batch must be n x {'x'.join(map(str, net.spec.input_shape))}, got {batch.shape}")
    x = batch
    for block in net.spec.blocks:
        x_in = x
        x = run_block(net, block, x, mode, rng)
        if probe is not None:
            probe[block.name] = (tuple(x_in.shape), tuple(x.shape))
    return x


def run_block(net: Network, block: BlockSpec, x: Tensor, mode=Mode.TRAIN,
              rng: Rng | None = None) -> Tensor:
    if block.kind in (BlockKind.STEM, BlockKind.REDUCTION) or block.kind in RESIDUAL_KINDS:
        outs = [_run_branch(block, b, net, x, mode) for b in range(len(block.branches))]
        y = concat_channels(outs)
        if block.kind in RESIDUAL_KINDS:
            proj = _run_layer(block.projection, net.layers[f"{block.name}.proj"], y, mode)
            y = relu(add(x, scale(proj, block.residual_scale)))
        return y
    if block.kind is BlockKind.DROPOUT:
        return dropout(x, DropoutParams(block.keep_prob, mode), rng)
    if block.kind is BlockKind.LSTM_HEAD:
        return dual_direction_head(x, net.layers["lstm_head.width"], net.layers["lstm_head.height"])
    if x.ndim == 4 and block.pooling == "average":
        x = global_avg_pool(x)
    return dense(flatten(x), net.layers[block.name])


def _layer_out_shape(layer: LayerConfig, shape):
    h, w, c = shape
    oh = output_extent(h, layer.kernel[0], layer.stride[0], layer.padding)
    ow = output_extent(w, layer.kernel[1], layer.stride[1], layer.padding)
    return (oh, ow, layer.out_channels if layer.kind == "conv" else c)


def _init_conv_unit(rng: Rng, layer: LayerConfig, cin: int, cfg: ArchConfig):
    cp = init_conv(rng, *layer.kernel, cin, layer.out_channels, layer.stride, layer.padding)
    bn = BatchNormParams.fresh(layer.out_channels, layer.activation, cfg.bn_momentum, cfg.bn_epsilon)
    return cp, bn


def build_network(variant=None, config: ArchConfig | dict | None = None,
                  rng: Rng | None = None) -> Network:
    """Build the spec for ``variant`` and initialize all parameters.

    ``config`` may be an :class:`ArchConfig` or a dict of overrides on the
    defaults. An explicit ``variant`` wins over ``config.variant``.
    """
    if config is None:
        cfg = ArchConfig(variant=parse_variant(variant or Variant.DEEP))
    elif isinstance(config, ArchConfig):
        cfg = config if variant is None else config.with_overrides(variant=parse_variant(variant).value)
    else:
        overrides = dict(config)
        if variant is not None:
            overrides["variant"] = parse_variant(variant)
        cfg = ArchConfig.from_dict(overrides)
    spec = make_spec(cfg)
    rng = rng or Rng(cfg.init_seed)

    layers: dict = {}
    shapes: dict = {}
    shape = spec.input_shape
    for block in spec.blocks:
        in_shape = shape
        if block.branches:
            outs = []
            for b, branch in enumerate(block.branches):
                s = in_shape
                for j, layer in enumerate(branch):
                    if layer.kind == "conv":
                        layers[f"{block.name}.b{b}.{j}"] = _init_conv_unit(rng, layer, s[2], cfg)
                    s = _layer_out_shape(layer, s)
                outs.append(s)
            if len({o[:2] for o in outs}) != 1:
                raise ShapeMismatch(f"{block.name} branches disagree on spatial extent: {outs}")
            shape = (*outs[0][:2], sum(o[2] for o in outs))
            if block.projection is not None:
                layers[f"{block.name}.proj"] = _init_conv_unit(rng, block.projection, shape[2], cfg)
                shape = _layer_out_shape(block.projection, shape)
                if shape != in_shape:
                    raise ShapeMismatch(f"{block.name} projection {shape} cannot be added to input {in_shape}")
        elif block.kind is BlockKind.LSTM_HEAD:
            h, w, c = shape
            layers["lstm_head.width"] = LstmParams.init(rng, h * c, block.hidden)
            layers["lstm_head.height"] = LstmParams.init(rng, w * c, block.hidden)
            shape = (2 * block.hidden,)
        elif block.kind is BlockKind.DENSE:
            if len(shape) == 3 and block.pooling == "average":
                shape = (shape[2],)
            fan_in = int(np.prod(shape))
            layers[block.name] = init_dense(rng, fan_in, block.out_features)
            shape = (block.out_features,)
        shapes[block.name] = (in_shape, shape)
    return Network(spec, layers, shapes)


def count_parameters(net: Network) -> int:
    """Number of trainable scalars (running statistics excluded)."""
    return int(sum(t.size for t in net.named_parameters().values()))
