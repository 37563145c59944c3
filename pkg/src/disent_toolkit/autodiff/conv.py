"""2-D convolution and its exact adjoint, the transposed convolution.

Both use the cross-correlation convention (no kernel flip) and NCHW layout.
Weights are ``(C_out, C_in, kh, kw)`` for ``conv2d`` and ``(C_in, C_out, kh, kw)``
for ``conv_transpose2d``, so the same array passed to both gives a pair of
mutually adjoint linear maps.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from disent_toolkit.autodiff.tensor import Tensor, _record, as_tensor
from disent_toolkit.errors import ShapeError


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def deconv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C, H', W', kh, kw) strided view of kernel windows."""
    view = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Plain conv2d forward without bias: (B,Ci,H,W) x (Co,Ci,kh,kw) -> (B,Co,H',W')."""
    windows = _windows(_pad(x, padding), w.shape[2], w.shape[3], stride)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(g: np.ndarray, w: np.ndarray, out_hw: tuple[int, int], stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. its input (col2im)."""
    batch = g.shape[0]
    _, c_in, kh, kw = w.shape
    h_out, w_out = g.shape[2], g.shape[3]
    height, width = out_hw
    padded = np.zeros((batch, c_in, height + 2 * padding, width + 2 * padding))
    # (B, H', W', Ci, kh, kw)
    columns = np.tensordot(g, w, axes=([1], [0]))
    for i in range(kh):
        rows = slice(i, i + stride * (h_out - 1) + 1, stride)
        for j in range(kw):
            cols = slice(j, j + stride * (w_out - 1) + 1, stride)
            padded[:, :, rows, cols] += columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        padded = padded[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(padded)


def _weight_grad(source: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Sum over batch and positions of g[b,o,h,w] * window(source)[b,c,h,w,i,j] -> (O, C, kh, kw)."""
    windows = _windows(_pad(source, padding), kh, kw, stride)
    return np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))


def _check_geometry(x: Tensor, w: Tensor, channel_axis: int, name: str) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"{name}: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[channel_axis]:
        raise ShapeError(
            f"{name}: input has {x.shape[1]} channels but weight expects {w.shape[channel_axis]}"
        )


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    name: str = "conv2d",
) -> Tensor:
    """Cross-correlate ``x`` (B,Cin,H,W) with ``w`` (Cout,Cin,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    _check_geometry(x, w, 1, name)
    kh, kw = w.shape[2], w.shape[3]
    h_out = conv_output_extent(x.shape[2], kh, stride, padding)
    w_out = conv_output_extent(x.shape[3], kw, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"{name}: non-positive output extent {h_out}x{w_out} for input {x.shape[2:]}")

    xd, wd = x.data, w.data
    out = _correlate(xd, wd, stride, padding)
    inputs: tuple[Tensor, ...] = (x, w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs = (x, w, bias)
    in_hw = (xd.shape[2], xd.shape[3])

    def rule(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        grad_x = _scatter(g, wd, in_hw, stride, padding) if x.requires_grad else None
        grad_w = _weight_grad(xd, g, kh, kw, stride, padding) if w.requires_grad else None
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return _record(out, inputs, rule, "conv2d")


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    name: str = "conv_transpose2d",
) -> Tensor:
    """Transposed convolution of ``x`` (B,Cin,H,W) with ``w`` (Cin,Cout,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    _check_geometry(x, w, 0, name)
    kh, kw = w.shape[2], w.shape[3]
    h_out = deconv_output_extent(x.shape[2], kh, stride, padding)
    w_out = deconv_output_extent(x.shape[3], kw, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"{name}: non-positive output extent {h_out}x{w_out} for input {x.shape[2:]}")

    xd, wd = x.data, w.data
    out = _scatter(xd, wd, (h_out, w_out), stride, padding)
    inputs: tuple[Tensor, ...] = (x, w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs = (x, w, bias)

    def rule(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        grad_x = _correlate(g, wd, stride, padding) if x.requires_grad else None
        grad_w = _weight_grad(g, xd, kh, kw, stride, padding) if w.requires_grad else None
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return _record(out, inputs, rule, "conv_transpose2d")
