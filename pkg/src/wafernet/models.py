"""Architecture zoo: BaseNet family, IncNet, ResiNet and canonical VGG16."""
from __future__ import annotations

import enum
import math
from collections import OrderedDict

import numpy as np

from .errors import ConfigurationError, DimensionError
from .layers import (
    Activation, BatchNorm2d, Conv2d, Dense, Flatten, GlobalAvgPool, InceptionBlock,
    Layer, MaxPool2d, ResBlock,
)
from .tensor import Tensor


class ArchId(str, enum.Enum):
    BaseNet = "BaseNet"
    BaseNet8 = "BaseNet8"
    BaseNet8Plus = "BaseNet8Plus"
    IncNet = "IncNet"
    ResiNet = "ResiNet"
    VGG16 = "VGG16"

    @classmethod
    def parse(cls, value) -> "ArchId":
        if isinstance(value, cls):
            return value
        key = str(value).replace("+", "Plus").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ConfigurationError(f"unknown architecture {value!r}")


DEFAULT_RES = {a: 256 for a in ArchId} | {ArchId.VGG16: 224}

BASENET8_WIDTHS = (8, 16, 32, 64, 128, 256, 512, 512)
INCNET_WIDTHS = (32, 64, 128, 256)
RESINET_WIDTHS = (16, 32, 64, 128)
VGG16_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
              512, 512, 512, "M", 512, 512, 512, "M")


class ModelGraph:
    """Ordered layer plan plus input spec.

    ``input_shape`` is ``(C, H, W)`` for image models or ``(F,)`` for vector
    inputs; shapes are propagated through every layer at construction so a bad
    resolution fails here instead of mid-forward.
    """

    def __init__(self, arch: str, layers: list[Layer], input_shape: tuple, *,
                 train_defaults: dict | None = None):
        self.arch = arch
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.train_defaults = dict(train_defaults or {})
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            self.shapes.append(shape)
        self.output_shape = shape
        names = [p.name for p in self.parameters()] + [n for n, _ in self.buffers()]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ConfigurationError(f"duplicate tensor names: {sorted(dupes)}")

    @property
    def num_classes(self) -> int:
        return self.output_shape[0]

    @property
    def input_res(self):
        return self.input_shape[-1] if len(self.input_shape) == 3 else None

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def forward(self, x, train: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.dtype)
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(
                f"{self.arch}: batch shape {x.shape} does not match input spec (N, {', '.join(map(str, self.input_shape))})"
            )
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    __call__ = forward

    @property
    def dtype(self):
        return self.parameters()[0].dtype if self.parameters() else np.dtype(np.float32)

    def astype(self, dtype) -> "ModelGraph":
        """Convert parameters and buffers in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for layer in _walk(self.layers):
            if isinstance(layer, BatchNorm2d):
                layer.running.mean = layer.running.mean.astype(dtype)
                layer.running.var = layer.running.var.astype(dtype)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((p.name, p.data.copy()) for p in self.parameters())
        for name, arr in self.buffers():
            state[name] = arr.copy()
        return state

    def load_state_dict(self, state):
        params = {p.name: p for p in self.parameters()}
        bufs = dict(self.buffers())
        for name, arr in state.items():
            if name in params:
                params[name].data = np.array(arr, dtype=params[name].dtype)
            elif name in bufs:
                bufs[name][...] = arr
            else:
                raise KeyError(name)

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

    def summary(self) -> str:
        lines = [f"{self.arch}  input={self.input_shape}  params={count_params(self):,}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            lines.append(f"  {layer!r:<60} -> {shape}")
        return "\n".join(lines)


def _walk(layers):
    for layer in layers:
        yield layer
        for attr in ("layers", "paths"):
            yield from _walk(getattr(layer, attr, []))
        for attr in ("body", "proj"):
            sub = getattr(layer, attr, None)
            if sub is not None:
                yield from _walk([sub])


def count_params(model: ModelGraph) -> int:
    return int(sum(p.size for p in model.trainable_parameters()))


# -- plans -------------------------------------------------------------------------

def _basenet(c, res, rng, dtype):
    if res < 8 or res % 4:
        raise ConfigurationError(f"BaseNet needs a resolution divisible by 4 (>= 8), got {res}")
    flat = 8 * (res // 4) ** 2
    return [
        Conv2d(1, 8, 5, 1, 2, name="conv1", rng=rng, dtype=dtype), Activation("relu"), MaxPool2d(2),
        Conv2d(8, 8, 5, 1, 2, name="conv2", rng=rng, dtype=dtype), Activation("relu"), MaxPool2d(2),
        Flatten(),
        Dense(flat, 256, name="fc1", rng=rng, dtype=dtype), Activation("relu"),
        Dense(256, c, name="fc2", rng=rng, dtype=dtype),
    ]


def basenet8_pools(res: int) -> int:
    """Number of leading conv stages followed by a 2x2 pool.

    At 256 every stage pools (256 -> 1). Smaller power-of-two inputs pool on
    the first log2(res) stages and keep 1x1 maps afterwards.
    """
    k = int(round(math.log2(res))) if res > 0 else -1
    if res < 2 or 2 ** k != res:
        raise ConfigurationError(f"BaseNet8 needs a power-of-two resolution, got {res}")
    return min(k, len(BASENET8_WIDTHS))


def _basenet8(c, res, rng, dtype, plus=False):
    pools = basenet8_pools(res)
    act = "relu6" if plus else "relu"
    layers, cin = [], 1
    for i, width in enumerate(BASENET8_WIDTHS, start=1):
        layers.append(Conv2d(cin, width, 3, 1, 1, name=f"conv{i}", rng=rng, dtype=dtype))
        if plus:
            layers.append(BatchNorm2d(width, name=f"bn{i}", dtype=dtype))
        layers.append(Activation(act))
        if i <= pools:
            layers.append(MaxPool2d(2))
        cin = width
    side = res // 2 ** pools
    layers += [
        Flatten(),
        Dense(cin * side * side, 256, name="fc1", rng=rng, dtype=dtype), Activation(act),
        Dense(256, c, name="fc2", rng=rng, dtype=dtype),
    ]
    return layers


def _incnet(c, res, rng, dtype):
    if res < 16 or res % 16:
        raise ConfigurationError(f"IncNet needs a resolution divisible by 16, got {res}")
    layers = [Conv2d(1, 16, 3, 1, 1, name="stem", rng=rng, dtype=dtype), Activation("relu"), MaxPool2d(2)]
    cin = 16
    for i, width in enumerate(INCNET_WIDTHS, start=1):
        if i > 1:
            layers.append(MaxPool2d(2))
        layers.append(InceptionBlock(cin, width, name=f"inc{i}", rng=rng, dtype=dtype))
        cin = width
    layers += [GlobalAvgPool(), Dense(cin, c, name="fc", rng=rng, dtype=dtype)]
    return layers


def _resinet(c, res, rng, dtype):
    if res < 16 or res % 16:
        raise ConfigurationError(f"ResiNet needs a resolution divisible by 16, got {res}")
    layers = [Conv2d(1, 16, 3, 1, 1, name="stem", rng=rng, dtype=dtype), Activation("relu"), MaxPool2d(2)]
    cin = 16
    for i, width in enumerate(RESINET_WIDTHS, start=1):
        layers.append(ResBlock(cin, width, name=f"res{i}", rng=rng, downsample=i > 1, dtype=dtype))
        cin = width
    layers += [GlobalAvgPool(), Dense(cin, c, name="fc", rng=rng, dtype=dtype)]
    return layers


def _vgg16(c, res, rng, dtype):
    if res != 224:
        raise ConfigurationError(f"VGG16 is fixed at 224x224 input, got {res}")
    layers, cin, block, idx = [], 3, 1, 1
    for item in VGG16_PLAN:
        if item == "M":
            layers.append(MaxPool2d(2))
            block, idx = block + 1, 1
            continue
        layers += [Conv2d(cin, item, 3, 1, 1, name=f"conv{block}_{idx}", rng=rng, dtype=dtype),
                   Activation("relu")]
        cin, idx = item, idx + 1
    layers += [
        Flatten(),
        Dense(512 * 7 * 7, 4096, name="fc6", rng=rng, dtype=dtype), Activation("relu"),
        Dense(4096, 4096, name="fc7", rng=rng, dtype=dtype), Activation("relu"),
        Dense(4096, c, name="fc8", rng=rng, dtype=dtype),
    ]
    return layers


def build_model(arch, num_classes: int = 8, input_res: int | None = None, seed: int = 0,
                dtype=np.float32) -> ModelGraph:
    """Construct the documented plan for ``arch``.

    Weights use fan-in scaled uniform init drawn from ``seed`` (materialized
    on first use); biases start at zero and batchnorm at gamma=1, beta=0.
    """
    arch = ArchId.parse(arch)
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    res = DEFAULT_RES[arch] if input_res is None else int(input_res)
    rng = np.random.SeedSequence(seed)
    defaults = {}
    if arch is ArchId.BaseNet:
        layers = _basenet(num_classes, res, rng, dtype)
    elif arch is ArchId.BaseNet8:
        layers = _basenet8(num_classes, res, rng, dtype)
    elif arch is ArchId.BaseNet8Plus:
        layers = _basenet8(num_classes, res, rng, dtype, plus=True)
        defaults["multistep"] = True
    elif arch is ArchId.IncNet:
        layers = _incnet(num_classes, res, rng, dtype)
    elif arch is ArchId.ResiNet:
        layers = _resinet(num_classes, res, rng, dtype)
    else:
        layers = _vgg16(num_classes, res, rng, dtype)
    channels = 3 if arch is ArchId.VGG16 else 1
    return ModelGraph(arch.value, layers, (channels, res, res), train_defaults=defaults)


def predict(model: ModelGraph, batch):
    """Eval-mode forward; returns ``(logits, class_indices)`` as arrays."""
    logits = model.forward(batch, train=False).data
    return logits, logits.argmax(axis=1)


def predict_batched(model: ModelGraph, x: np.ndarray, batch_size: int = 64):
    outs = [model.forward(x[i:i + batch_size], train=False).data
            for i in range(0, len(x), batch_size)]
    if not outs:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    return np.concatenate(outs)
