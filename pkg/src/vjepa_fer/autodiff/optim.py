"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from vjepa_fer.autodiff.tensor import Tensor
from vjepa_fer.errors import ConfigError, UsageError


@dataclass
class OptimizerState:
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: list[np.ndarray] = field(default_factory=list)
    exp_avg_sq: list[np.ndarray] = field(default_factory=list)


class AdamW:
    """Bias-corrected Adam with weight decay applied directly to the weights.

    Tensors listed in ``no_decay`` are updated without weight decay.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        no_decay: Iterable[Tensor] = (),
    ):
        self.params = list(params)
        if lr < 0 or eps <= 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1) or weight_decay < 0:
            raise ConfigError(f"invalid optimizer hyperparameters lr={lr} betas={betas} eps={eps} wd={weight_decay}")
        skip = {id(p) for p in no_decay}
        self._decay = [0.0 if id(p) in skip else weight_decay for p in self.params]
        self.state = OptimizerState(
            lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay,
            exp_avg=[np.zeros_like(p.data) for p in self.params],
            exp_avg_sq=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            names = [self.params[i].name or f"#{i}" for i in missing[:5]]
            raise UsageError(f"optimizer step with missing gradients for {len(missing)} parameter(s): {names}")
        st = self.state
        lr = st.lr if lr is None else lr
        b1, b2 = st.betas
        st.step += 1
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for p, m, v, wd in zip(self.params, st.exp_avg, st.exp_avg_sq, self._decay):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if wd:
                p.data *= p.dtype.type(1.0 - lr * wd)
            upd = (m / c1) / (np.sqrt(v / c2) + st.eps)
            p.data -= (lr * upd).astype(p.dtype, copy=False)

    # checkpoint support -------------------------------------------------
    def state_arrays(self, names: list[str]) -> dict[str, np.ndarray]:
        out = {"optim.step": np.array([self.state.step], dtype=np.int64)}
        for n, m, v in zip(names, self.state.exp_avg, self.state.exp_avg_sq):
            out[f"optim.m.{n}"] = m
            out[f"optim.v.{n}"] = v
        return out

    def load_state_arrays(self, names: list[str], arrays: dict[str, np.ndarray]) -> None:
        self.state.step = int(arrays["optim.step"][0])
        for i, n in enumerate(names):
            self.state.exp_avg[i][...] = arrays[f"optim.m.{n}"]
            self.state.exp_avg_sq[i][...] = arrays[f"optim.v.{n}"]


def optimizer_step(params: list[Tensor], optimizer: AdamW, lr: float | None = None) -> OptimizerState:
    """Functional wrapper: one update of ``params`` (which must be the optimizer's)."""
    if [id(p) for p in params] != [id(p) for p in optimizer.params]:
        raise UsageError("optimizer_step: parameter list does not match the optimizer state")
    optimizer.step(lr)
    return optimizer.state
