"""Adam with bias correction over named parameters."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from disent_toolkit.autodiff import Tensor
from disent_toolkit.errors import NumericError, ShapeError


@dataclass
class AdamState:
    """Per-parameter first/second moments, step counter and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper: float) -> AdamState:
        state = cls(**hyper)
        for name, param in params.items():
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state

    def hyperparameters(self) -> dict[str, float]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None] | None = None,
) -> None:
    """Apply one Adam update in place. Missing gradients count as zero.

    Raises:
        NumericError: If any gradient holds NaN or inf; no parameter is touched.
        ShapeError: If a gradient or moment does not match its parameter.
    """
    if grads is None:
        grads = {name: param.grad for name, param in params.items()}

    resolved: dict[str, np.ndarray] = {}
    for name, param in params.items():
        grad = grads.get(name)
        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter is {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in parameter {name}")
        if name not in state.m:
            raise ShapeError(f"optimizer has no moments for parameter {name}")
        resolved[name] = grad

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, grad in resolved.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        params[name].data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam bound to a parameter dict."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = dict(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None
