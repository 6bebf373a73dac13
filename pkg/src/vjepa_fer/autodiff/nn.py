"""Small module system: named parameter trees on top of :class:`Tensor`."""

from __future__ import annotations

import copy
import hashlib

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import DimensionError


class Module:
    """Parameters are the ``Tensor`` attributes; child modules and lists of them nest.

    A list attribute ``blocks`` contributes names ``block0``, ``block1``, ...
    Attributes starting with ``_`` are never parameters.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                stem = key[:-1] if key.endswith("s") else key
                for i, child in enumerate(val):
                    out.extend(child.named_parameters(f"{prefix}{stem}{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters(prefix)}

    def load_state_dict(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise DimensionError(f"checkpoint is missing tensor {name!r}")
            src = np.asarray(arrays[name])
            if src.shape != p.shape:
                raise DimensionError(f"checkpoint tensor {name!r} has shape {src.shape}, model expects {p.shape}")
            p.data = src.astype(p.dtype, copy=True)

    def set_requires_grad(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def clone(self) -> "Module":
        return copy.deepcopy(self)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def param(arr: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=T.get_default_dtype(), name=name)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, std: float = 0.02):
        self.weight = param(trunc_normal(rng, (d_in, d_out), std))
        self.bias = param(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gain = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self._eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self._eps)
