"""Layer objects: parameter holders around the tensor primitives.

Each layer knows its output shape for a given input shape (``(C, H, W)`` or
``(F,)``), which :class:`~wafernet.models.ModelGraph` uses to validate a plan
before any data flows through it.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .tensor import Parameter, RunningStats, Tensor
from .tensor import ops


def kaiming_uniform(seeds: np.random.SeedSequence, shape, fan_in, name, dtype=np.float32):
    """Lazy fan-in uniform init, ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``.

    Each parameter draws from its own child of ``seeds`` so values do not
    depend on materialization order.
    """
    bound = math.sqrt(6.0 / fan_in)
    child = seeds.spawn(1)[0]
    draw_dtype = np.float32 if np.dtype(dtype) == np.float32 else np.float64

    def init():
        u = np.random.default_rng(child).random(shape, dtype=draw_dtype)
        u *= 2 * bound
        u -= bound
        return u

    return Parameter(name=name, shape=shape, init=init, dtype=dtype)


class Layer:
    kind = "layer"

    def __init__(self, name: str = ""):
        self.name = name

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def out_shape(self, shape):
        return shape

    def forward(self, x: Tensor, train: bool) -> Tensor:
        raise NotImplementedError

    def hyper(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, **self.hyper(),
                "params": [p.name for p in self.parameters()]}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, cin, cout, k, stride=1, padding=0, *, name, rng, dtype=np.float32):
        super().__init__(name)
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, padding
        fan_in = cin * k * k
        self.weight = kaiming_uniform(rng, (cout, cin, k, k), fan_in, f"{name}.weight", dtype)
        self.bias = Parameter(np.zeros(cout, dtype=dtype), f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def out_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.cin:
            raise ConfigurationError(f"{self.name}: expects ({self.cin}, H, W), got {shape}")
        _, h, w = shape
        try:
            ho = ops.conv_output_size(h, self.k, self.stride, self.padding, "H")
            wo = ops.conv_output_size(w, self.k, self.stride, self.padding, "W")
        except ValueError as exc:
            raise ConfigurationError(f"{self.name}: {exc}") from exc
        return (self.cout, ho, wo)

    def forward(self, x, train):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def hyper(self):
        return {"cin": self.cin, "cout": self.cout, "k": self.k,
                "stride": self.stride, "padding": self.padding}


class BatchNorm2d(Layer):
    kind = "batchnorm2d"

    def __init__(self, c, *, name, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__(name)
        self.c, self.eps = c, eps
        self.gamma = Parameter(np.ones(c, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(c, dtype=dtype), f"{name}.beta")
        self.running = RunningStats.fresh(c, dtype, momentum)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running.mean),
                (f"{self.name}.running_var", self.running.var)]

    def out_shape(self, shape):
        if shape[0] != self.c:
            raise ConfigurationError(f"{self.name}: expects {self.c} channels, got {shape}")
        return shape

    def forward(self, x, train):
        return ops.batchnorm2d(x, self.gamma, self.beta, self.eps,
                               "train" if train else "eval", self.running)

    def hyper(self):
        return {"c": self.c, "eps": self.eps}


class Dense(Layer):
    kind = "dense"

    def __init__(self, fin, fout, *, name, rng, dtype=np.float32):
        super().__init__(name)
        self.fin, self.fout = fin, fout
        self.weight = kaiming_uniform(rng, (fout, fin), fin, f"{name}.weight", dtype)
        self.bias = Parameter(np.zeros(fout, dtype=dtype), f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def out_shape(self, shape):
        if shape != (self.fin,):
            raise ConfigurationError(f"{self.name}: expects ({self.fin},), got {shape}")
        return (self.fout,)

    def forward(self, x, train):
        return ops.dense(x, self.weight, self.bias)

    def hyper(self):
        return {"fin": self.fin, "fout": self.fout}


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn="relu", name=""):
        super().__init__(name)
        self.fn = fn

    def forward(self, x, train):
        return ops.activation(x, self.fn)

    def hyper(self):
        return {"fn": self.fn}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window=2, stride=None, name=""):
        super().__init__(name)
        self.window = window
        self.stride = window if stride is None else stride

    def out_shape(self, shape):
        c, h, w = shape
        if self.window > h or self.window > w:
            raise ConfigurationError(f"{self.name}: window {self.window} larger than {h}x{w}")
        if self.window == self.stride and (h % self.stride or w % self.stride):
            raise ConfigurationError(f"{self.name}: {h}x{w} not divisible by stride {self.stride}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, x, train):
        return ops.maxpool2d(x, self.window, self.stride)

    def hyper(self):
        return {"window": self.window, "stride": self.stride}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train):
        return ops.flatten(x)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape, name=""):
        super().__init__(name)
        self.shape = tuple(shape)

    def out_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ConfigurationError(f"{self.name}: cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, x, train):
        return ops.reshape(x, (x.shape[0], *self.shape))

    def hyper(self):
        return {"shape": self.shape}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, x, train):
        return ops.global_avg_pool(x)


class Upsample2x(Layer):
    kind = "upsample2x"

    def out_shape(self, shape):
        c, h, w = shape
        return (c, 2 * h, 2 * w)

    def forward(self, x, train):
        return ops.upsample2x(x)


class UnitClamp(Layer):
    """Maps to [0, 1] via relu6(6x)/6 (identity on [0, 1])."""

    kind = "unit_clamp"

    def forward(self, x, train):
        return ops.scale(ops.relu6(ops.scale(x, 6.0)), 1.0 / 6.0)


class Sequence(Layer):
    """Run sublayers in order; used inside composite blocks."""

    kind = "sequence"

    def __init__(self, layers, name=""):
        super().__init__(name)
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def forward(self, x, train):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def describe(self):
        return {"name": self.name, "kind": self.kind,
                "layers": [layer.describe() for layer in self.layers]}


class InceptionBlock(Layer):
    """Four parallel paths (1x1, 3x3, 5x5, 9x9->9x9) concatenated on channels."""

    kind = "inception"

    def __init__(self, cin, width, *, name, rng, act="relu", dtype=np.float32):
        super().__init__(name)
        if width % 4:
            raise ConfigurationError(f"{name}: width {width} not divisible by 4")
        q = width // 4
        self.cin, self.width = cin, width

        def conv(ci, k, tag):
            return Conv2d(ci, q, k, 1, k // 2, name=f"{name}.{tag}", rng=rng, dtype=dtype)

        self.paths = [
            Sequence([conv(cin, 1, "p1"), Activation(act)], f"{name}.p1"),
            Sequence([conv(cin, 3, "p2"), Activation(act)], f"{name}.p2"),
            Sequence([conv(cin, 5, "p3"), Activation(act)], f"{name}.p3"),
            Sequence([conv(cin, 9, "p4a"), Activation(act),
                      conv(q, 9, "p4b"), Activation(act)], f"{name}.p4"),
        ]

    def parameters(self):
        return [p for path in self.paths for p in path.parameters()]

    def buffers(self):
        return [b for path in self.paths for b in path.buffers()]

    def out_shape(self, shape):
        outs = [path.out_shape(shape) for path in self.paths]
        return (sum(o[0] for o in outs), *outs[0][1:])

    def forward(self, x, train):
        return ops.concat([path.forward(x, train) for path in self.paths], axis=1)

    def hyper(self):
        return {"cin": self.cin, "width": self.width}

    def describe(self):
        return {**super().describe(), "paths": [p.describe() for p in self.paths]}


class ResBlock(Layer):
    """``act(convs(x') + skip(x'))`` with ``x'`` optionally max-pooled by 2.

    The skip is the identity unless the channel count changes, in which case
    a 1x1 projection is used.
    """

    kind = "resblock"

    def __init__(self, cin, cout, *, name, rng, downsample=False, act="relu", dtype=np.float32):
        super().__init__(name)
        self.cin, self.cout, self.downsample, self.act = cin, cout, downsample, act
        self.pool = MaxPool2d(2, name=f"{name}.pool") if downsample else None
        self.body = Sequence([
            Conv2d(cin, cout, 3, 1, 1, name=f"{name}.conv1", rng=rng, dtype=dtype),
            Activation(act),
            Conv2d(cout, cout, 3, 1, 1, name=f"{name}.conv2", rng=rng, dtype=dtype),
        ], f"{name}.body")
        self.proj = (Conv2d(cin, cout, 1, name=f"{name}.proj", rng=rng, dtype=dtype)
                     if cin != cout else None)

    def parameters(self):
        ps = self.body.parameters()
        if self.proj is not None:
            ps += self.proj.parameters()
        return ps

    def out_shape(self, shape):
        if self.pool is not None:
            shape = self.pool.out_shape(shape)
        out = self.body.out_shape(shape)
        if self.proj is not None:
            self.proj.out_shape(shape)
        return out

    def forward(self, x, train):
        if self.pool is not None:
            x = self.pool.forward(x, train)
        skip = self.proj.forward(x, train) if self.proj is not None else x
        return ops.activation(ops.add(self.body.forward(x, train), skip), self.act)

    def hyper(self):
        return {"cin": self.cin, "cout": self.cout, "downsample": self.downsample}

    def describe(self):
        return {**super().describe(), "body": self.body.describe()}
