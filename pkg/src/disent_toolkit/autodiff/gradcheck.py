"""Central finite-difference checks for recorded gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from disent_toolkit.autodiff.tensor import Tensor, backward, no_grad
from disent_toolkit.errors import ShapeError


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + 1e-8)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    samples: int = 20,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Return the worst relative error over ``samples`` random coordinates.

    ``fn`` must rebuild the scalar loss from ``params`` on every call.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for param in params:
        param.data = np.ascontiguousarray(param.data)
        param.grad = None

    loss = fn()
    if loss.size != 1:
        raise ShapeError(f"gradient check needs a scalar loss, got shape {loss.shape}")
    backward(loss)
    analytic = [
        param.grad.reshape(-1).copy() if param.grad is not None else np.zeros(param.size)
        for param in params
    ]

    sizes = np.array([param.size for param in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for _ in range(samples):
        flat_index = int(rng.integers(offsets[-1]))
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        coordinate = flat_index - offsets[which]
        flat = params[which].data.reshape(-1)
        original = flat[coordinate]
        with no_grad():
            flat[coordinate] = original + step
            plus = fn().item()
            flat[coordinate] = original - step
            minus = fn().item()
        flat[coordinate] = original
        numeric = (plus - minus) / (2.0 * step)
        worst = max(worst, relative_error(analytic[which][coordinate], numeric))
    return worst
