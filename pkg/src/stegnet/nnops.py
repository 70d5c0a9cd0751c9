"""Differentiable operators: grouped convolution, batch normalization,
activations, average pooling, spatial pyramid pooling, linear, and the
softmax cross-entropy loss.

Conventions
-----------
* Convolution is cross-correlation (no kernel flip); all padding is zero
  padding. Activation maps are [N, C, H, W].
* Operators that need saved state for the backward pass return
  ``(output, context)`` from the forward call; the backward call takes the
  upstream gradient plus that context and returns gradients matching the
  partials of ``sum(upstream * output)`` with respect to each forward input.
  Calling a backward with a missing context is a contract violation.
* Elementwise activations (relu / tlu / abs_act) return the bare output;
  their backwards take the upstream gradient and the original input.
* Forward/backward calls are pure functions of their arguments plus context;
  the only mutation is the running-statistics update inside
  ``batchnorm_forward`` in train mode.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DataError, ShapeError, SpecError
from .tensor import DTYPES, Tensor


def _require_rank(t: Tensor, rank: int, what: str) -> None:
    if not isinstance(t, Tensor):
        raise ShapeError(f"{what} must be a Tensor, got {type(t).__name__}")
    if len(t.shape) != rank:
        raise ShapeError(f"{what} must have rank {rank}, got shape {t.shape}")


def _require_ctx(ctx, cls, op: str):
    if not isinstance(ctx, cls):
        raise ContractError(
            f"{op}_backward needs the context saved by {op}_forward; got {type(ctx).__name__}"
        )


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2dSpec:
    """Static description of a grouped 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def validate(self) -> None:
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "groups"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise SpecError(f"conv2d spec field {name} must be a positive integer, got {v!r}")
        if not isinstance(self.padding, int) or self.padding < 0:
            raise SpecError(f"conv2d spec padding must be a non-negative integer, got {self.padding!r}")
        if self.in_channels % self.groups != 0:
            raise SpecError(
                f"conv2d groups ({self.groups}) must divide in_channels ({self.in_channels})"
            )
        if self.out_channels % self.groups != 0:
            raise SpecError(
                f"conv2d groups ({self.groups}) must divide out_channels ({self.out_channels})"
            )

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise SpecError(
                f"conv2d output would be empty: input {h}x{w}, kernel "
                f"{self.kernel_h}x{self.kernel_w}, stride {self.stride}, padding {self.padding}"
            )
        return oh, ow

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_h,
            self.kernel_w,
        )


@dataclass
class Conv2dContext:
    spec: Conv2dSpec
    x_padded: np.ndarray
    weights: np.ndarray
    has_bias: bool
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Strided view of all kernel-sized patches: [N, C, kh, kw, oh, ow]."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def _conv_cols(xp: np.ndarray, spec: Conv2dSpec, oh: int, ow: int) -> np.ndarray:
    """Patches regrouped for batched matmul: [N, groups, Cg*kh*kw, oh*ow]."""
    n = xp.shape[0]
    g = spec.groups
    cg = spec.in_channels // g
    view = _im2col(xp, spec.kernel_h, spec.kernel_w, spec.stride, oh, ow)
    return view.reshape(n, g, cg * spec.kernel_h * spec.kernel_w, oh * ow)


def conv2d_forward(
    inp: Tensor, weights: Tensor, bias: Optional[Tensor], spec: Conv2dSpec
) -> tuple[Tensor, Conv2dContext]:
    """Grouped 2-D cross-correlation.

    inp: [N, Cin, H, W]; weights: [Cout, Cin/groups, kh, kw]; bias: [Cout] or
    None. Returns the [N, Cout, oh, ow] output and the context for backward.
    """
    spec.validate()
    _require_rank(inp, 4, "conv2d input")
    _require_rank(weights, 4, "conv2d weights")
    x = inp.array
    w = weights.array
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv2d input has {x.shape[1]} channels, spec says {spec.in_channels}"
        )
    if w.shape != spec.weight_shape():
        raise ShapeError(
            f"conv2d weights shape {w.shape} does not match spec {spec.weight_shape()}"
        )
    if w.dtype != x.dtype:
        raise ShapeError(f"conv2d weight dtype {weights.dtype} differs from input {inp.dtype}")
    b = None
    if bias is not None:
        _require_rank(bias, 1, "conv2d bias")
        if bias.shape != (spec.out_channels,):
            raise ShapeError(f"conv2d bias shape {bias.shape}, expected ({spec.out_channels},)")
        if bias.dtype != inp.dtype:
            raise ShapeError(f"conv2d bias dtype {bias.dtype} differs from input {inp.dtype}")
        b = bias.array

    n, _, h, wdt = x.shape
    oh, ow = spec.output_size(h, wdt)
    p = spec.padding
    if p:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x

    g = spec.groups
    og = spec.out_channels // g
    cols = _conv_cols(xp, spec, oh, ow)
    wmat = w.reshape(g, og, -1)
    out = np.matmul(wmat[None], cols)  # [N, g, og, oh*ow]
    out = out.reshape(n, spec.out_channels, oh, ow)
    if b is not None:
        out += b[None, :, None, None]
    ctx = Conv2dContext(
        spec=spec,
        x_padded=xp,
        weights=w,
        has_bias=b is not None,
        in_shape=x.shape,
        out_shape=out.shape,
    )
    return Tensor(out), ctx


def conv2d_backward(
    upstream: Tensor, ctx: Conv2dContext
) -> tuple[Tensor, Tensor, Optional[Tensor]]:
    """Gradients (grad_input, grad_weights, grad_bias-or-None) for conv2d."""
    _require_ctx(ctx, Conv2dContext, "conv2d")
    _require_rank(upstream, 4, "conv2d upstream")
    if upstream.shape != ctx.out_shape:
        raise ShapeError(
            f"conv2d upstream shape {upstream.shape} does not match output {ctx.out_shape}"
        )
    spec = ctx.spec
    up = upstream.array
    if up.dtype != ctx.x_padded.dtype:
        raise ShapeError("conv2d upstream dtype differs from forward input")

    n, _, oh, ow = up.shape
    g = spec.groups
    og = spec.out_channels // g
    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding

    gy = up.reshape(n, g, og, oh * ow)
    # patches are recomputed from the saved padded input rather than stored
    cols = _conv_cols(ctx.x_padded, spec, oh, ow)
    wmat = ctx.weights.reshape(g, og, -1)

    grad_w = np.matmul(gy, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    grad_w = grad_w.reshape(ctx.weights.shape)

    grad_cols = np.matmul(wmat.transpose(0, 2, 1)[None], gy)  # [N, g, Cg*kh*kw, oh*ow]
    grad_cols = grad_cols.reshape(n, spec.in_channels, kh, kw, oh, ow)
    grad_xp = np.zeros_like(ctx.x_padded)
    for u in range(kh):
        for v in range(kw):
            grad_xp[:, :, u : u + s * oh : s, v : v + s * ow : s] += grad_cols[:, :, u, v]
    if p:
        h, w_in = ctx.in_shape[2], ctx.in_shape[3]
        grad_x = grad_xp[:, :, p : p + h, p : p + w_in]
    else:
        grad_x = grad_xp

    grad_b = Tensor(up.sum(axis=(0, 2, 3))) if ctx.has_bias else None
    return Tensor(grad_x), Tensor(grad_w), grad_b


# ---------------------------------------------------------------------------
# average pooling
# ---------------------------------------------------------------------------

@dataclass
class AvgPoolContext:
    win: int
    stride: int
    padding: int
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    dtype: np.dtype


def avg_pool(
    inp: Tensor, win: int, stride: int, padding: int = 0
) -> tuple[Tensor, AvgPoolContext]:
    """Average pooling with a square window.

    Zero padding counts toward the window average (the pad pixels contribute
    zeros and the divisor stays win*win).
    """
    _require_rank(inp, 4, "avg_pool input")
    if not isinstance(win, int) or win < 1:
        raise SpecError(f"avg_pool window must be a positive integer, got {win!r}")
    if not isinstance(stride, int) or stride < 1:
        raise SpecError(f"avg_pool stride must be a positive integer, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise SpecError(f"avg_pool padding must be a non-negative integer, got {padding!r}")
    x = inp.array
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if win > hp or win > wp:
        raise SpecError(
            f"avg_pool window {win} exceeds padded input {hp}x{wp}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    oh = (hp - win) // stride + 1
    ow = (wp - win) // stride + 1
    sn, sc, sh, sw = xp.strides
    v = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, win, win),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    out = v.mean(axis=(4, 5))
    ctx = AvgPoolContext(win, stride, padding, x.shape, out.shape, x.dtype)
    return Tensor(out), ctx


def avg_pool_backward(upstream: Tensor, ctx: AvgPoolContext) -> Tensor:
    """Distributes each upstream value uniformly over its pooling window."""
    _require_ctx(ctx, AvgPoolContext, "avg_pool")
    _require_rank(upstream, 4, "avg_pool upstream")
    if upstream.shape != ctx.out_shape:
        raise ShapeError(
            f"avg_pool upstream shape {upstream.shape} does not match output {ctx.out_shape}"
        )
    n, c, h, w = ctx.in_shape
    win, s, p = ctx.win, ctx.stride, ctx.padding
    oh, ow = ctx.out_shape[2], ctx.out_shape[3]
    scaled = upstream.array / ctx.dtype.type(win * win)
    grad_xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=ctx.dtype)
    for u in range(win):
        for v in range(win):
            grad_xp[:, :, u : u + s * oh : s, v : v + s * ow : s] += scaled
    if p:
        grad_xp = grad_xp[:, :, p : p + h, p : p + w]
    return Tensor(grad_xp)


# ---------------------------------------------------------------------------
# elementwise activations
# ---------------------------------------------------------------------------

def relu(inp: Tensor) -> Tensor:
    """max(x, 0)."""
    _require_tensor(inp, "relu input")
    return Tensor(np.maximum(inp.array, 0))


def relu_backward(upstream: Tensor, inp: Tensor) -> Tensor:
    _require_same_shape(upstream, inp, "relu")
    return Tensor(upstream.array * (inp.array > 0))


def tlu(inp: Tensor, threshold: float) -> Tensor:
    """Truncated linear unit: clamp(x, -T, T); T must be positive."""
    _require_tensor(inp, "tlu input")
    if not (threshold > 0):
        raise SpecError(f"tlu threshold must be positive, got {threshold!r}")
    t = inp.array.dtype.type(threshold)
    return Tensor(np.clip(inp.array, -t, t))


def tlu_backward(upstream: Tensor, inp: Tensor, threshold: float) -> Tensor:
    _require_same_shape(upstream, inp, "tlu")
    if not (threshold > 0):
        raise SpecError(f"tlu threshold must be positive, got {threshold!r}")
    x = inp.array
    inside = (x > -threshold) & (x < threshold)
    return Tensor(upstream.array * inside)


def abs_act(inp: Tensor) -> Tensor:
    """|x|; subgradient at 0 is taken as 0."""
    _require_tensor(inp, "abs input")
    return Tensor(np.abs(inp.array))


def abs_backward(upstream: Tensor, inp: Tensor) -> Tensor:
    _require_same_shape(upstream, inp, "abs")
    return Tensor(upstream.array * np.sign(inp.array))


def _require_tensor(t, what: str) -> None:
    if not isinstance(t, Tensor):
        raise ShapeError(f"{what} must be a Tensor, got {type(t).__name__}")


def _require_same_shape(upstream: Tensor, inp: Tensor, op: str) -> None:
    _require_tensor(upstream, f"{op} upstream")
    _require_tensor(inp, f"{op} saved input")
    if upstream.shape != inp.shape:
        raise ShapeError(
            f"{op}_backward shapes differ: upstream {upstream.shape} vs input {inp.shape}"
        )


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    ``mode`` selects train behaviour (batch statistics, running update) or
    eval behaviour (running statistics, no mutation). Variance is the biased
    batch variance (divide by the element count, not count-1).
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, channels: int, dtype: str = "f32", momentum: float = 0.1,
               eps: float = 1e-5) -> "BatchNormState":
        if not isinstance(channels, int) or channels < 1:
            raise SpecError(f"batchnorm channels must be a positive integer, got {channels!r}")
        if dtype not in DTYPES:
            raise SpecError(f"unknown dtype {dtype!r}")
        dt = DTYPES[dtype]
        return cls(
            gamma=np.ones(channels, dtype=dt),
            beta=np.zeros(channels, dtype=dt),
            running_mean=np.zeros(channels, dtype=dt),
            running_var=np.ones(channels, dtype=dt),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class BatchNormContext:
    xhat: np.ndarray
    inv_std: np.ndarray  # per channel
    gamma: np.ndarray
    count: int
    mode: str


def batchnorm_forward(inp: Tensor, state: BatchNormState) -> tuple[Tensor, BatchNormContext]:
    """Per-channel normalization of a [N, C, H, W] map.

    Train mode normalizes with the biased batch statistics and folds them
    into the running averages: running = (1-momentum)*running + momentum*batch.
    Eval mode normalizes with the running statistics and mutates nothing.
    """
    _require_rank(inp, 4, "batchnorm input")
    x = inp.array
    c = x.shape[1]
    if state.gamma.shape != (c,):
        raise ShapeError(
            f"batchnorm state has {state.gamma.shape[0]} channels, input has {c}"
        )
    if state.mode not in ("train", "eval"):
        raise SpecError(f"batchnorm mode must be 'train' or 'eval', got {state.mode!r}")
    dt = x.dtype
    if state.gamma.dtype != dt:
        raise ShapeError(f"batchnorm state dtype {state.gamma.dtype} differs from input {dt}")

    if state.mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise DataError(
                f"batchnorm train mode needs at least 2 values per channel, got {count}"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))  # biased: divide by count
        m = dt.type(state.momentum)
        state.running_mean *= 1 - m
        state.running_mean += m * mean
        state.running_var *= 1 - m
        state.running_var += m * var
    else:
        count = 0
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + dt.type(state.eps))
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = state.gamma[None, :, None, None] * xhat + state.beta[None, :, None, None]
    ctx = BatchNormContext(xhat=xhat, inv_std=inv_std.astype(dt, copy=False),
                           gamma=state.gamma.copy(), count=count, mode=state.mode)
    return Tensor(out), ctx


def batchnorm_backward(
    upstream: Tensor, ctx: BatchNormContext
) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients (grad_input, grad_gamma, grad_beta)."""
    _require_ctx(ctx, BatchNormContext, "batchnorm")
    _require_rank(upstream, 4, "batchnorm upstream")
    up = upstream.array
    if up.shape != ctx.xhat.shape:
        raise ShapeError(
            f"batchnorm upstream shape {up.shape} does not match output {ctx.xhat.shape}"
        )
    grad_beta = up.sum(axis=(0, 2, 3))
    grad_gamma = (up * ctx.xhat).sum(axis=(0, 2, 3))
    gxhat = up * ctx.gamma[None, :, None, None]
    inv = ctx.inv_std[None, :, None, None]
    if ctx.mode == "eval":
        # running statistics are constants in eval mode
        grad_x = gxhat * inv
    else:
        mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx = (gxhat * ctx.xhat).mean(axis=(0, 2, 3), keepdims=True)
        grad_x = inv * (gxhat - mean_g - ctx.xhat * mean_gx)
    return Tensor(grad_x), Tensor(grad_gamma), Tensor(grad_beta)


# ---------------------------------------------------------------------------
# spatial pyramid pooling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SppConfig:
    """Pyramid levels (grid sizes) pooled with averaging, coarse bins last."""

    levels: tuple[int, ...] = (4, 2, 1)

    def validate(self) -> None:
        if len(self.levels) == 0:
            raise SpecError("spp needs at least one pyramid level")
        for n in self.levels:
            if not isinstance(n, int) or n < 1:
                raise SpecError(f"spp levels must be positive integers, got {self.levels!r}")

    @property
    def bins(self) -> int:
        return sum(n * n for n in self.levels)


def spp_windows(a: int, n: int) -> tuple[int, int]:
    """Window and stride that carve an a-by-a map into an n-by-n grid:
    win = ceil(a/n), stride = floor(a/n)."""
    if n < 1 or a < 1:
        raise SpecError(f"spp grid needs positive sizes, got a={a}, n={n}")
    return -(-a // n), a // n


@dataclass
class SppContext:
    cfg: SppConfig
    in_shape: tuple[int, ...]
    slices: list[tuple[int, int, int, int]]  # per output bin: r0, r1, c0, c1
    dtype: np.dtype


def spp_forward(inp: Tensor, cfg: SppConfig) -> tuple[Tensor, SppContext]:
    """Fixed-length descriptor from a square [N, K, a, a] map.

    Output is [N, K*M] with M = sum(n^2): values are grouped channel-major
    (all M bins of channel 0, then channel 1, ...), levels in ``cfg.levels``
    order and bins in row-major grid order within a level.
    """
    cfg.validate()
    _require_rank(inp, 4, "spp input")
    x = inp.array
    n_batch, k, h, w = x.shape
    if h != w:
        raise ShapeError(f"spp expects square feature maps, got {h}x{w}")
    a = h
    worst = max(cfg.levels)
    if a < worst:
        raise SpecError(f"spp input size {a} is smaller than pyramid level {worst}")

    per_level = []
    slices: list[tuple[int, int, int, int]] = []
    for n in cfg.levels:
        win, stride = spp_windows(a, n)
        pooled = np.empty((n_batch, k, n * n), dtype=x.dtype)
        for i in range(n):
            r0 = i * stride
            r1 = min(r0 + win, a)
            for j in range(n):
                c0 = j * stride
                c1 = min(c0 + win, a)
                pooled[:, :, i * n + j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
                slices.append((r0, r1, c0, c1))
        per_level.append(pooled)
    stacked = np.concatenate(per_level, axis=2)  # [N, K, M]
    out = stacked.reshape(n_batch, k * cfg.bins)
    ctx = SppContext(cfg=cfg, in_shape=x.shape, slices=slices, dtype=x.dtype)
    return Tensor(out), ctx


def spp_backward(upstream: Tensor, ctx: SppContext) -> Tensor:
    _require_ctx(ctx, SppContext, "spp")
    _require_rank(upstream, 2, "spp upstream")
    n_batch, k = ctx.in_shape[0], ctx.in_shape[1]
    m = ctx.cfg.bins
    if upstream.shape != (n_batch, k * m):
        raise ShapeError(
            f"spp upstream shape {upstream.shape}, expected ({n_batch}, {k * m})"
        )
    up = upstream.array.reshape(n_batch, k, m)
    grad = np.zeros(ctx.in_shape, dtype=ctx.dtype)
    for b, (r0, r1, c0, c1) in enumerate(ctx.slices):
        count = ctx.dtype.type((r1 - r0) * (c1 - c0))
        grad[:, :, r0:r1, c0:c1] += (up[:, :, b] / count)[:, :, None, None]
    return Tensor(grad)


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

@dataclass
class LinearContext:
    x: np.ndarray
    w: np.ndarray
    out_shape: tuple[int, ...]


def linear_forward(inp: Tensor, weights: Tensor, bias: Tensor) -> tuple[Tensor, LinearContext]:
    """Affine map: [N, D] @ [D, E] + [E]."""
    _require_rank(inp, 2, "linear input")
    _require_rank(weights, 2, "linear weights")
    _require_rank(bias, 1, "linear bias")
    x, w, b = inp.array, weights.array, bias.array
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear input dim {x.shape[1]} does not match weights {w.shape}")
    if b.shape[0] != w.shape[1]:
        raise ShapeError(f"linear bias dim {b.shape[0]} does not match weights {w.shape}")
    if w.dtype != x.dtype or b.dtype != x.dtype:
        raise ShapeError("linear parameter dtypes differ from input")
    out = x @ w + b
    return Tensor(out), LinearContext(x=x, w=w, out_shape=out.shape)


def linear_backward(upstream: Tensor, ctx: LinearContext) -> tuple[Tensor, Tensor, Tensor]:
    _require_ctx(ctx, LinearContext, "linear")
    _require_rank(upstream, 2, "linear upstream")
    up = upstream.array
    if up.shape != ctx.out_shape:
        raise ShapeError(f"linear upstream shape {up.shape}, expected {ctx.out_shape}")
    grad_x = up @ ctx.w.T
    grad_w = ctx.x.T @ up
    grad_b = up.sum(axis=0)
    return Tensor(grad_x), Tensor(grad_w), Tensor(grad_b)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for overflow safety."""
    _require_rank(logits, 2, "softmax logits")
    z = logits.array
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return Tensor(e / e.sum(axis=1, keepdims=True))


def softmax_xent(logits: Tensor, labels: Sequence[int]) -> tuple[float, Tensor]:
    """Mean softmax cross-entropy over the batch.

    Returns the scalar loss and the gradient with respect to the logits,
    (softmax - onehot) / N. Computed via log-sum-exp so extreme logits do
    not overflow.
    """
    _require_rank(logits, 2, "softmax_xent logits")
    z = logits.array
    n, c = z.shape
    if n < 1:
        raise DataError("softmax_xent needs at least one row of logits")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise DataError(f"softmax_xent needs {n} labels, got array of shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {y.dtype}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= c:
        bad = sorted(set(int(v) for v in y if v < 0 or v >= c))
        raise DataError(f"labels outside [0, {c}): {bad}")

    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    loss = float(np.mean(lse - z[np.arange(n), y]))
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), y] -= 1
    grad = p / z.dtype.type(n)
    return loss, Tensor(grad)
