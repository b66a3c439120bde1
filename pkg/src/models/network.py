"""
Sequential networks built from architecture descriptor rows.

The builder tracks the activation shape while walking the LayerSpecs: a Flatten
is inserted in front of a dense layer that follows a convolution, and an
Unflatten (to a square map) in front of a convolution that follows a dense
layer. Softmax heads are kept in the descriptor but skipped in forward, so the
network returns logits.
"""
import contextlib
import copy
import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.im2col import output_size, transposed_output_size
from src.autodiff.random import rng_stream
from src.autodiff.tensor import DimensionError, Tensor, default_dtype
from src.models.layers import STAR, LayerSpec, parse_rows, render_rows

logger = logging.getLogger(__name__)

INIT_FAN_IN = "fan_in"
INIT_NORMAL = "normal"
NORMAL_STD = 0.02


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: Dict[str, Tensor] = {}

    def forward(self, x: Tensor, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
        raise NotImplementedError

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        pass


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, pad: int):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.params = {"weight": Tensor(np.zeros((c_out, c_in, kernel, kernel)), requires_grad=True),
                       "bias": Tensor(np.zeros(c_out), requires_grad=True)}

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.params["weight"].shape[1:]))

    def forward(self, x, training, rng):
        return F.conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad)


class ConvTranspose2d(Layer):
    kind = "convt"

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, pad: int):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.params = {"weight": Tensor(np.zeros((c_in, c_out, kernel, kernel)), requires_grad=True),
                       "bias": Tensor(np.zeros(c_out), requires_grad=True)}

    @property
    def fan_in(self) -> int:
        w = self.params["weight"].shape
        return w[0] * w[2] * w[3]

    def forward(self, x, training, rng):
        return F.conv_transpose2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad)


class Dense(Layer):
    kind = "fc"

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.params = {"weight": Tensor(np.zeros((d_in, d_out)), requires_grad=True),
                       "bias": Tensor(np.zeros(d_out), requires_grad=True)}

    @property
    def fan_in(self) -> int:
        return self.params["weight"].shape[0]

    def forward(self, x, training, rng):
        return F.dense(x, self.params["weight"], self.params["bias"])


class BatchNorm(Layer):
    kind = "bn"

    def __init__(self, channels: int):
        super().__init__()
        self.params = {"gamma": Tensor(np.ones(channels), requires_grad=True),
                       "beta": Tensor(np.zeros(channels), requires_grad=True)}
        self.state = F.BatchNormState.create(channels)

    def forward(self, x, training, rng):
        return F.batch_norm(x, self.params["gamma"], self.params["beta"], self.state, training)

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def load_buffers(self, buffers):
        self.state.running_mean = np.array(buffers["running_mean"], dtype=np.float64)
        self.state.running_var = np.array(buffers["running_var"], dtype=np.float64)


class Activation(Layer):
    def __init__(self, kind: str):
        super().__init__()
        self.kind = kind

    def forward(self, x, training, rng):
        if self.kind == "relu":
            return F.relu(x)
        if self.kind == "sigmoid":
            return F.sigmoid(x)
        # softmax heads only appear at the end of classifiers; logits pass through
        return x


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x, training, rng):
        return F.dropout(x, self.p, rng, training)


class Reshape(Layer):
    def __init__(self, kind: str, shape: Tuple[int, ...]):
        super().__init__()
        self.kind = kind
        self.shape = shape

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], *self.shape)


class Network:
    """
    Feed-forward network assembled from LayerSpecs.

    Attributes:
        name: name used in parameter keys and init streams
        specs: the descriptor LayerSpecs
        input_shape: per-example input shape, (C, H, W) or (D,)
        output_shape: per-example output shape
        layers: runtime layers, including inserted reshapes
        metadata: training metadata attached by training loops and checkpoint loading
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Tuple[int, ...], image_channels: int,
                 name: str = "net", seed: int = 0, init: str = INIT_FAN_IN):
        self.name = name
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.image_channels = image_channels
        self.metadata: Dict[str, object] = {}
        self.layers: List[Layer] = []
        self._names: List[str] = []
        self.output_shape = self._build()
        self.initialize(seed, init)

    @classmethod
    def from_rows(cls, rows: Sequence[str], input_shape: Tuple[int, ...], image_channels: int, **kwargs) -> "Network":
        return cls(parse_rows(rows), input_shape, image_channels, **kwargs)

    @property
    def descriptor(self) -> List[str]:
        return render_rows(self.specs)

    def _resolve(self, value) -> int:
        return self.image_channels if value == STAR else int(value)

    def _add(self, layer: Layer, index: int) -> None:
        self.layers.append(layer)
        self._names.append(f"{index:02d}_{layer.kind}")

    def _build(self) -> Tuple[int, ...]:
        shape = self.input_shape
        for index, spec in enumerate(self.specs):
            where = f"layer {index} '{spec.render()}' of {self.name}"
            if spec.kind in ("Conv", "ConvT"):
                c_in, c_out, k, stride, pad = (self._resolve(spec.args[0]), self._resolve(spec.args[1]),
                                               int(spec.args[2]), int(spec.args[3]), int(spec.args[4]))
                if len(shape) == 1:
                    side = math.isqrt(shape[0] // c_in) if shape[0] % c_in == 0 else 0
                    if side == 0 or c_in * side * side != shape[0]:
                        raise DimensionError(f"{where}: cannot unflatten {shape[0]} features into {c_in} square maps")
                    shape = (c_in, side, side)
                    self._add(Reshape("unflatten", shape), index)
                if shape[0] != c_in:
                    raise DimensionError(f"{where}: expects {c_in} input channels, got {shape[0]}")
                if spec.kind == "Conv":
                    h, w = output_size(shape[1], k, stride, pad), output_size(shape[2], k, stride, pad)
                    self._add(Conv2d(c_in, c_out, k, stride, pad), index)
                else:
                    h, w = (transposed_output_size(shape[1], k, stride, pad),
                            transposed_output_size(shape[2], k, stride, pad))
                    self._add(ConvTranspose2d(c_in, c_out, k, stride, pad), index)
                if h < 1 or w < 1:
                    raise DimensionError(f"{where}: output size ({h}, {w}) is not positive for input {shape}")
                shape = (c_out, h, w)
            elif spec.kind in ("FC", "FC1", "FC2"):
                if len(shape) != 1:
                    shape = (int(np.prod(shape)),)
                    self._add(Reshape("flatten", shape), index)
                d_in, d_out = (shape[0], int(spec.args[0])) if len(spec.args) == 1 else map(int, spec.args)
                if d_in != shape[0]:
                    raise DimensionError(f"{where}: expects {d_in} input features, got {shape[0]}")
                self._add(Dense(d_in, d_out), index)
                shape = (d_out,)
            elif spec.kind == "BN":
                self._add(BatchNorm(shape[0]), index)
            elif spec.kind == "Dropout":
                self._add(Dropout(float(spec.args[0])), index)
            else:
                self._add(Activation(spec.kind.lower()), index)
        return shape

    def initialize(self, seed: int, init: str = INIT_FAN_IN) -> None:
        """
        Draw fresh weights.

        fan_in: weights ~ N(0, 2 / fan_in), biases 0.
        normal: conv, transposed conv and dense weights ~ N(0, 0.02^2), batch-norm
        scale ~ N(1, 0.02^2), shifts and biases 0.
        """
        if init not in (INIT_FAN_IN, INIT_NORMAL):
            raise ValueError(f"Unknown init scheme '{init}'")
        dtype = default_dtype()
        for name, layer in zip(self._names, self.layers):
            rng = rng_stream(seed, "init", self.name, name)
            if isinstance(layer, (Conv2d, ConvTranspose2d, Dense)):
                w = layer.params["weight"]
                std = NORMAL_STD if init == INIT_NORMAL else math.sqrt(2.0 / layer.fan_in)
                w.data = rng.normal(0.0, std, size=w.shape).astype(dtype)
                layer.params["bias"].data = np.zeros(layer.params["bias"].shape, dtype=dtype)
            elif isinstance(layer, BatchNorm):
                gamma = layer.params["gamma"]
                gamma.data = (rng.normal(1.0, NORMAL_STD, size=gamma.shape) if init == INIT_NORMAL
                              else np.ones(gamma.shape)).astype(dtype)
                layer.params["beta"].data = np.zeros(gamma.shape, dtype=dtype)

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(f"{self.name} expects input (N, {', '.join(map(str, self.input_shape))}), "
                                 f"got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    __call__ = forward

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{name}.{key}": tensor
                for name, layer in zip(self._names, self.layers) for key, tensor in layer.params.items()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{name}.{key}": array
                for name, layer in zip(self._names, self.layers) for key, array in layer.buffers().items()}

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        for name, layer in zip(self._names, self.layers):
            own = {key.split(".", 1)[1]: value for key, value in buffers.items() if key.split(".", 1)[0] == name}
            if own:
                layer.load_buffers(own)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    @contextlib.contextmanager
    def frozen(self) -> Iterator["Network"]:
        """Stop parameters from requiring gradients inside the block (attacks, z-search)."""
        params = list(self.parameters().values())
        previous = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, previous):
                p.requires_grad = flag

    def clone(self) -> "Network":
        """Independent copy; parameters, buffers and metadata do not share memory."""
        twin = copy.copy(self)
        twin.layers = copy.deepcopy(self.layers)
        twin.metadata = copy.deepcopy(self.metadata)
        for p in twin.parameters().values():
            p.grad = None
        return twin

    def __repr__(self) -> str:
        return f"Network({self.name}, {self.input_shape} -> {self.output_shape}, {self.parameter_count()} params)"
