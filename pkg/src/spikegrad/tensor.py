"""Dense float64 tensor kernels shared by every layer type.

All public operations take and return float64 numpy arrays in row-major
order, validate operand shapes, and reject non-finite results. Contracts
are stated per sample; where noted, a leading batch axis is also accepted
(conv kernels then reduce weight-shaped outputs over the batch).
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "as_tensor",
    "affine",
    "conv2d",
    "conv2d_weight_corr",
    "conv2d_input_grad",
    "conv_output_hw",
    "outer",
    "hadamard",
    "im2col",
    "col2im_add",
    "write_tensor",
    "read_tensor",
]


class ShapeError(ValueError):
    """Operand shapes or conv geometry do not agree."""


class NonFiniteError(ArithmeticError):
    """A kernel produced (or was handed) NaN or Inf values."""


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _checked(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out[j] = sum_i weight[j, i] * x[i] + bias[j].

    `x` may be a single vector [n_in] or a batch [B, n_in].
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if weight.ndim != 2 or bias.ndim != 1 or weight.shape[0] != bias.shape[0]:
        raise ShapeError(
            f"affine expects weight [n_out, n_in] and bias [n_out], "
            f"got {weight.shape} and {bias.shape}"
        )
    if x.ndim == 1:
        if x.shape[0] != weight.shape[1]:
            raise ShapeError(f"affine input {x.shape} vs weight {weight.shape}")
        return _checked(weight @ x + bias, "affine")
    if x.ndim == 2:
        if x.shape[1] != weight.shape[1]:
            raise ShapeError(f"affine input {x.shape} vs weight {weight.shape}")
        return _checked(x @ weight.T + bias, "affine")
    raise ShapeError(f"affine input must be 1-D or 2-D, got shape {x.shape}")


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    """Output spatial size of a strided cross-correlation; errors if not integral."""
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid conv geometry: stride={stride}, pad={pad}")
    dh, dw = h + 2 * pad - kh, w + 2 * pad - kw
    if dh < 0 or dw < 0 or dh % stride or dw % stride:
        raise ShapeError(
            f"non-integral conv output for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}"
        )
    return dh // stride + 1, dw // stride + 1


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, widths)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Lower [B, C, H, W] to patch columns [B, C*kh*kw, H'*W']."""
    b, c, h, w = x.shape
    ho, wo = conv_output_hw(h, w, kh, kw, stride, pad)
    xp = _pad_hw(x, pad)
    sb, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(b, c * kh * kw, ho * wo)


def col2im_add(cols: np.ndarray, in_hw: tuple[int, int], kh: int, kw: int,
               stride: int, pad: int) -> np.ndarray:
    """Scatter-add patch columns [B, C*kh*kw, H'*W'] back to [B, C, H, W]."""
    b = cols.shape[0]
    h, w = in_hw
    ho, wo = conv_output_hw(h, w, kh, kw, stride, pad)
    c = cols.shape[1] // (kh * kw)
    grid = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for p in range(kh):
        for q in range(kw):
            out[:, :, p:p + stride * ho:stride, q:q + stride * wo:stride] += grid[:, :, p, q]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def _conv_operands(x: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"{name} expects [C, H, W] or [B, C, H, W], got shape {x.shape}")


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """Strided 2-D cross-correlation plus per-channel bias.

    `x` may be [C, H, W] or batched [B, C, H, W].
    """
    x4, batched = _conv_operands(x, "conv2d")
    kernel = as_tensor(kernel)
    bias = as_tensor(bias)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [C_out, C_in, kh, kw], got {kernel.shape}")
    co, ci, kh, kw = kernel.shape
    if x4.shape[1] != ci:
        raise ShapeError(f"conv2d input channels {x4.shape[1]} != kernel C_in {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({co},)")
    ho, wo = conv_output_hw(x4.shape[2], x4.shape[3], kh, kw, stride, pad)
    cols = im2col(x4, kh, kw, stride, pad)
    out = kernel.reshape(co, -1) @ cols + bias[:, None]
    out = out.reshape(x4.shape[0], co, ho, wo)
    return _checked(out if batched else out[0], "conv2d")


def conv2d_weight_corr(x: np.ndarray, out_map: np.ndarray, kh: int, kw: int,
                       stride: int = 1, pad: int = 0) -> np.ndarray:
    """Correlate an input map with an output-shaped map into kernel shape.

    out[o, c, p, q] = sum_{h', w'} out_map[o, h', w'] * x[c, h'*stride - pad + p,
    w'*stride - pad + q], out-of-range input read as 0. Doubles as the conv
    weight gradient and as the conv-layer trace relation. Batched operands
    [B, ...] are reduced by summation over B.
    """
    x4, x_batched = _conv_operands(x, "conv2d_weight_corr")
    o4, o_batched = _conv_operands(out_map, "conv2d_weight_corr")
    if x_batched != o_batched or x4.shape[0] != o4.shape[0]:
        raise ShapeError(
            f"conv2d_weight_corr batch mismatch: input {x.shape} vs out_map {out_map.shape}"
        )
    ho, wo = conv_output_hw(x4.shape[2], x4.shape[3], kh, kw, stride, pad)
    if o4.shape[2:] != (ho, wo):
        raise ShapeError(
            f"conv2d_weight_corr geometry mismatch: out_map {out_map.shape} "
            f"but expected spatial {(ho, wo)}"
        )
    cols = im2col(x4, kh, kw, stride, pad)
    flat = o4.reshape(o4.shape[0], o4.shape[1], ho * wo)
    out = np.einsum("bon,bkn->ok", flat, cols).reshape(o4.shape[1], x4.shape[1], kh, kw)
    return _checked(out, "conv2d_weight_corr")


def conv2d_input_grad(out_grad: np.ndarray, kernel: np.ndarray, in_hw: tuple[int, int],
                      stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of conv2d with respect to its input (transposed correlation)."""
    g4, batched = _conv_operands(out_grad, "conv2d_input_grad")
    kernel = as_tensor(kernel)
    co, ci, kh, kw = kernel.shape
    if g4.shape[1] != co:
        raise ShapeError(f"conv2d_input_grad channels {g4.shape[1]} != kernel C_out {co}")
    ho, wo = conv_output_hw(in_hw[0], in_hw[1], kh, kw, stride, pad)
    if g4.shape[2:] != (ho, wo):
        raise ShapeError(f"conv2d_input_grad spatial {g4.shape[2:]} != expected {(ho, wo)}")
    cols = np.einsum("ok,bon->bkn", kernel.reshape(co, -1), g4.reshape(g4.shape[0], co, -1))
    out = col2im_add(cols, in_hw, kh, kw, stride, pad)
    return _checked(out if batched else out[0], "conv2d_input_grad")


def outer(post: np.ndarray, pre: np.ndarray) -> np.ndarray:
    """out[j, i] = post[j] * pre[i]."""
    post = as_tensor(post)
    pre = as_tensor(pre)
    if post.ndim != 1 or pre.ndim != 1:
        raise ShapeError(f"outer expects vectors, got {post.shape} and {pre.shape}")
    return _checked(np.multiply.outer(post, pre), "outer")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product of identically shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return _checked(a * b, "hadamard")


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    """Serialize little-endian: u32 rank, u32 dims, then the f64 payload."""
    arr = as_tensor(arr)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f8").tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    """Inverse of write_tensor; raises ValueError on a truncated stream."""
    head = f.read(4)
    if len(head) != 4:
        raise ValueError("truncated tensor: missing rank")
    rank = struct.unpack("<I", head)[0]
    dims_raw = f.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise ValueError("truncated tensor: missing dims")
    shape = struct.unpack(f"<{rank}I", dims_raw) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor: missing payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
