"""Parameter containers and the layers the models are built from.

Modules register Parameters, child Modules, and non-trainable buffers
(batchnorm running statistics) by attribute assignment. state_dict keys are
attribute paths ("encoder.mlp.0.weight"), which keeps names unique and ties
each entry to its owning module.

Weight init is fan-in-scaled uniform for all conv/linear weights, zero for
biases, ones/zeros for batchnorm gain/shift. Every layer takes an explicit
numpy Generator so construction is reproducible.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


class Parameter(Tensor):
    """Trainable tensor. trainable=False keeps it in state_dict but out of
    the optimizer and the parameter count."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable=True):
        super().__init__(data, requires_grad=trainable)
        self.trainable = trainable


def _uniform_fan_in(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Tree of parameters/buffers with train/eval mode and dtype control."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self, trainable_only=True):
        for _, p in self.named_parameters():
            if p.trainable or not trainable_only:
                yield p

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", bool(mode))
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self, trainable_only=True):
        return sum(
            p.size for p in self.parameters(trainable_only=trainable_only)
        )

    def state_dict(self):
        """name -> ndarray for every parameter and buffer."""
        state = {}
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state, strict=True):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if strict and (missing or extra):
            raise ConfigError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in self.named_parameters():
            if name in state:
                src = np.asarray(state[name])
                if src.shape != p.data.shape:
                    raise ShapeError(
                        f"{name}: checkpoint shape {src.shape} vs model {p.data.shape}"
                    )
                p.data = src.astype(p.data.dtype, copy=True)
        for name, _ in self.named_buffers():
            if name in state:
                self._assign_buffer(name, np.asarray(state[name]))

    def _assign_buffer(self, path, array):
        parts = path.split(".")
        mod = self
        for part in parts[:-1]:
            mod = mod._modules[part]
        leaf = parts[-1]
        old = mod._buffers[leaf]
        if old.shape != array.shape:
            raise ShapeError(
                f"{path}: checkpoint shape {array.shape} vs model {old.shape}"
            )
        old[...] = array.astype(old.dtype)

    def to_dtype(self, dtype):
        """Convert all parameters and float buffers in place."""
        for p in self.parameters(trainable_only=False):
            p.data = p.data.astype(dtype)
            p.grad = None
        for mod in self.modules():
            for name, buf in mod._buffers.items():
                if np.issubdtype(buf.dtype, np.floating):
                    mod._buffers[name] = buf.astype(dtype)
                    object.__setattr__(mod, name, mod._buffers[name])
        return self


class ModuleList(Module):
    """Sequence container; children register under their index."""

    def __init__(self, mods=()):
        super().__init__()
        self._order = []
        for m in mods:
            self.append(m)

    def append(self, mod):
        setattr(self, str(len(self._order)), mod)
        self._order.append(mod)

    def __iter__(self):
        return iter(self._order)

    def __len__(self):
        return len(self._order)

    def __getitem__(self, i):
        return self._order[i]


class Linear(Module):
    """y = x @ weight + bias for x of shape (P, c_in)."""

    def __init__(self, c_in, c_out, rng, bias=True, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out
        self.weight = Parameter(_uniform_fan_in(rng, (c_in, c_out), c_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return ad.fully_connected(x, self.weight, self.bias)



class Conv1x1(Module):
    """Pointwise conv over (c,h,w) or (b,c,h,w); weight stored (c_out, c_in)."""

    def __init__(self, c_in, c_out, rng, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out
        self.weight = Parameter(_uniform_fan_in(rng, (c_out, c_in), c_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        return ad.conv1x1(x, self.weight, self.bias)



class TransposedConv2d(Module):
    """Fractionally-strided conv; weight stored (c_in, c_out, k, k)."""

    def __init__(self, c_in, c_out, rng, kernel=4, stride=2, padding=1,
                 dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(
            _uniform_fan_in(rng, (c_in, c_out, kernel, kernel), fan_in, dtype)
        )
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        return ad.transposed_conv2d(
            x, self.weight, self.bias, stride=self.stride, padding=self.padding
        )



class BatchNorm(Module):
    """Channel normalization; rank decides the layout (see autodiff.batchnorm)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        return ad.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )



class LinearBlock(Module):
    """Linear -> BatchNorm -> ReLU on (P, C) features."""

    def __init__(self, c_in, c_out, rng, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.lin = Linear(c_in, c_out, rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.lin(x)))



class ConvBlock(Module):
    """Conv1x1 -> BatchNorm -> ReLU on grid features."""

    def __init__(self, c_in, c_out, rng, dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.conv = Conv1x1(c_in, c_out, rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))



class UpConvBlock(Module):
    """TransposedConv2d -> BatchNorm -> ReLU (doubles spatial extent)."""

    def __init__(self, c_in, c_out, rng, kernel=4, stride=2, padding=1,
                 dtype=ad.DEFAULT_DTYPE):
        super().__init__()
        self.conv = TransposedConv2d(
            c_in, c_out, rng, kernel=kernel, stride=stride, padding=padding,
            dtype=dtype,
        )
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))

