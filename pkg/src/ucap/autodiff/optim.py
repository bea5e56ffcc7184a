"""Named parameter collections, Adam, and global-norm clipping."""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .tensor import ContractError, Tensor

INIT_SCALE = 0.08


class ModelParams:
    """Ordered ``name -> Tensor`` map of trainable parameters."""

    def __init__(self, tensors=None):
        self._tensors = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name, value):
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def subset(self, prefix):
        return ModelParams({k: v for k, v in self._tensors.items() if k.startswith(prefix)})

    def merged(self, *others):
        out = ModelParams(dict(self._tensors))
        for other in others:
            for k, v in other.items():
                out.add(k, v)
        return out

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()

    def state_dict(self):
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_state_dict(self, arrays, strict=True):
        missing = [k for k in self._tensors if k not in arrays]
        if strict and missing:
            raise KeyError(f"checkpoint lacks parameters: {missing}")
        for k, t in self._tensors.items():
            if k not in arrays:
                continue
            arr = np.asarray(arrays[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def num_parameters(self):
        return sum(t.size for t in self._tensors.values())


def uniform_init(rng, shape):
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(params, max_norm):
    """Scale all grads so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params.values()
                              if t.grad is not None)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return total


def adam_step(params, state):
    """Bias-corrected Adam update of every parameter; grads are cleared after."""
    lacking = [name for name, t in params.items() if t.grad is None]
    if lacking:
        raise ContractError(f"adam_step: no gradient for {lacking}")
    state.step += 1
    for name, t in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        kernels.adam_update(t.data, np.ascontiguousarray(t.grad), state.m[name], state.v[name],
                            state.learning_rate, state.beta1, state.beta2, state.epsilon,
                            float(state.step))
        t.grad = None
