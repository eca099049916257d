"""Neural network layers on top of the autodiff tensor.

Single-sample signatures (conv2d, maxpool2d, dense, lstm_step,
softmax_cross_entropy) are the documented surface; each has a batched
variant used by training loops, since looping python over a minibatch would
dominate the runtime. Convolution lowers to an im2col gather plus one
matmul; the gather index is cached per geometry.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import (
    ColIndex,
    Tensor,
    add,
    broadcast_to,
    concat,
    getitem,
    logsumexp,
    matmul,
    max_last,
    mul,
    neg,
    pad,
    powc,
    relu,
    reshape,
    sigmoid,
    softmax,
    sum_,
    take_cols,
    tanh,
    transpose,
)

_IM2COL_CACHE: dict[tuple, ColIndex] = {}


def _im2col_index(c: int, h: int, w: int, fh: int, fw: int, stride: int) -> ColIndex:
    key = (c, h, w, fh, fw, stride)
    cached = _IM2COL_CACHE.get(key)
    if cached is not None:
        return cached
    oh = (h - fh) // stride + 1
    ow = (w - fw) // stride + 1
    # index[p, f] = flat position of input element f of window p
    ci, ui, vi = np.meshgrid(np.arange(c), np.arange(fh), np.arange(fw), indexing="ij")
    window = (ci * h * w + ui * w + vi).reshape(-1)  # (c*fh*fw,)
    ii, ji = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    origin = (ii * stride * w + ji * stride).reshape(-1)  # (oh*ow,)
    idx = (origin[:, None] + window[None, :]).reshape(-1)
    out = ColIndex(idx, c * h * w)
    _IM2COL_CACHE[key] = out
    return out


def conv2d_batch(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation. x (N,C,H,W), kernels (K,C,fh,fw), bias (K,)."""
    n, c, h, w = x.shape
    k, kc, fh, fw = kernels.shape
    if kc != c:
        raise ShapeMismatch(f"kernel channels {kc} != input channels {c}")
    if fh > h or fw > w:
        raise ShapeMismatch(f"kernel {fh}x{fw} larger than input {h}x{w}")
    if stride < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    if bias.shape != (k,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({k},)")
    oh = (h - fh) // stride + 1
    ow = (w - fw) // stride + 1
    idx = _im2col_index(c, h, w, fh, fw, stride)
    cols = take_cols(reshape(x, (n, c * h * w)), idx)  # (n, P*F)
    p, f = oh * ow, c * fh * fw
    cols = reshape(cols, (n * p, f))
    out = matmul(cols, transpose(reshape(kernels, (k, f))))  # (n*p, k)
    out = transpose(reshape(out, (n, p, k)), (0, 2, 1))
    out = reshape(out, (n, k, oh, ow))
    return add(out, reshape(bias, (1, k, 1, 1)))


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Single-sample convolution: x (C,H,W) -> (K,H',W')."""
    if x.ndim != 3:
        raise ShapeMismatch(f"conv2d wants (C,H,W), got {x.shape}")
    out = conv2d_batch(reshape(x, (1,) + x.shape), kernels, bias, stride)
    return reshape(out, out.shape[1:])


def maxpool2d_batch(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling; both spatial dims must divide by size."""
    n, c, h, w = x.shape
    if size < 1 or h % size or w % size:
        raise ShapeMismatch(f"pool size {size} does not divide {h}x{w}")
    oh, ow = h // size, w // size
    t = reshape(x, (n, c, oh, size, ow, size))
    t = transpose(t, (0, 1, 2, 4, 3, 5))
    t = reshape(t, (n, c, oh, ow, size * size))
    return max_last(t)


def maxpool2d(x: Tensor, size: int) -> Tensor:
    if x.ndim != 3:
        raise ShapeMismatch(f"maxpool2d wants (C,H,W), got {x.shape}")
    out = maxpool2d_batch(reshape(x, (1,) + x.shape), size)
    return reshape(out, out.shape[1:])


def dense_batch(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N,in) @ weight (out,in)^T + bias (out,)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"dense: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"dense: bias {bias.shape} vs weight {weight.shape}")
    return add(matmul(x, transpose(weight)), reshape(bias, (1, weight.shape[0])))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim == 1:
        return reshape(dense_batch(reshape(x, (1, x.shape[0])), weight, bias), (weight.shape[0],))
    return dense_batch(x, weight, bias)


LSTM_PARAM_KEYS = ("w_f", "b_f", "w_i", "b_i", "w_o", "b_o", "w_c", "b_c")


def lstm_step(
    x: Tensor, h_prev: Tensor, c_prev: Tensor, params: dict[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """One LSTM cell step over [h_prev, x].

    Gates follow the standard cell: forget and input gates are sigmoids of
    affine maps of the concatenated previous hidden state and current input,
    the candidate state is a tanh of the same, and the output gate screens
    tanh of the new cell state. Accepts (D,)/(H,) vectors or (N,D)/(N,H)
    batches.
    """
    for key in LSTM_PARAM_KEYS:
        if key not in params:
            raise ShapeMismatch(f"lstm_step params missing {key!r}")
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
        h_prev = reshape(h_prev, (1, h_prev.shape[0]))
        c_prev = reshape(c_prev, (1, c_prev.shape[0]))
    hidden = h_prev.shape[1]
    if params["w_f"].shape != (hidden, hidden + x.shape[1]):
        raise ShapeMismatch(
            f"w_f shape {params['w_f'].shape} != ({hidden}, {hidden + x.shape[1]})"
        )
    hx = concat([h_prev, x], axis=1)
    f = sigmoid(dense_batch(hx, params["w_f"], params["b_f"]))
    i = sigmoid(dense_batch(hx, params["w_i"], params["b_i"]))
    o = sigmoid(dense_batch(hx, params["w_o"], params["b_o"]))
    cand = tanh(dense_batch(hx, params["w_c"], params["b_c"]))
    c = add(mul(f, c_prev), mul(i, cand))
    h = mul(o, tanh(c))
    if single:
        h = reshape(h, (hidden,))
        c = reshape(c, (hidden,))
    return h, c


def _check_onehot(target: Tensor) -> None:
    t = target.data
    if not (np.all((t == 0.0) | (t == 1.0)) and np.all(t.sum(axis=-1) == 1.0)):
        raise ShapeMismatch("targets must be one-hot rows")


def softmax_cross_entropy_batch(logits: Tensor, target: Tensor) -> tuple[Tensor, Tensor]:
    """Mean cross entropy over rows; returns (loss, probabilities)."""
    if logits.shape != target.shape or logits.ndim != 2:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {target.shape}")
    _check_onehot(target)
    lse = logsumexp(logits, axis=-1)  # (N,1)
    picked = sum_(mul(logits, target), axis=-1, keepdims=True)
    loss = mul(sum_(add(lse, neg(picked))), Tensor(1.0 / logits.shape[0]))
    return loss, softmax(logits, axis=-1)


def softmax_cross_entropy(logits: Tensor, target: Tensor) -> tuple[Tensor, Tensor]:
    """Single-sample form: logits (C,), one-hot target (C,)."""
    if logits.ndim == 1:
        loss, probs = softmax_cross_entropy_batch(
            reshape(logits, (1,) + logits.shape), reshape(target, (1,) + target.shape)
        )
        return loss, reshape(probs, logits.shape)
    return softmax_cross_entropy_batch(logits, target)


def conv1d_same_batch(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """'same' 1-D convolution for sequence models. x (N,C,L), kernels (K,C,fw).

    Odd kernel widths pad symmetrically; even widths put the extra zero on
    the right, matching the usual framework convention.
    """
    n, c, length = x.shape
    k, kc, fw = kernels.shape
    left = (fw - 1) // 2
    right = fw - 1 - left
    x4 = reshape(x, (n, c, 1, length))
    x4 = pad(x4, ((0, 0), (0, 0), (0, 0), (left, right)))
    out = conv2d_batch(x4, reshape(kernels, (k, kc, 1, fw)), bias)
    return reshape(out, (n, k, length))


# ---------------------------------------------------------------------------
# parameter initialization


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int
) -> Tensor:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def dense_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> tuple[Tensor, Tensor]:
    w = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
    b = Tensor(np.zeros(out_dim), requires_grad=True)
    return w, b


def conv_init(
    rng: np.random.Generator, k: int, c: int, fh: int, fw: int
) -> tuple[Tensor, Tensor]:
    w = glorot_uniform(rng, (k, c, fh, fw), c * fh * fw, k * fh * fw)
    b = Tensor(np.zeros(k), requires_grad=True)
    return w, b
