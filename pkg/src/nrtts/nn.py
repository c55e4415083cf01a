"""Neural building blocks: parameter registry plus the layers the models use.

Modules register parameters and submodules by attribute assignment and
expose ``named_parameters()`` with slash-joined names; those names are the
stable identity used by freeze plans and checkpoint diffs.

Constructing a module with ``rng=None`` zero-initializes every parameter.
That mode exists for shape enumeration and parameter accounting (numpy's
calloc makes it cheap even at the paper-scale preset) and for layers whose
contract is an exact-zero init.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def _init(rng, shape, scale):
    if rng is None:
        return np.zeros(shape)
    return rng.normal(0.0, scale, size=shape)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}/")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng=None):
        super().__init__()
        self.w = Parameter(_init(rng, (in_dim, out_dim), 1.0 / np.sqrt(in_dim)))
        self.b = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Conv1d(Module):
    """Time-major convolution; padding='same' keeps T (stride 1 only)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: str = "valid", rng=None):
        super().__init__()
        if padding == "same" and stride != 1:
            raise ValueError("padding='same' requires stride 1")
        self.w = Parameter(_init(rng, (kernel, in_ch, out_ch),
                                 1.0 / np.sqrt(kernel * in_ch)))
        self.b = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.kernel = kernel
        if padding == "same":
            self.pad_left = (kernel - 1) // 2
            self.pad_right = kernel // 2
        else:
            self.pad_left = 0
            self.pad_right = 0

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.w, self.b, stride=self.stride,
                         pad_left=self.pad_left, pad_right=self.pad_right)


class GroupedConv1d(Module):
    """Channel-grouped same-padding convolution (used for positional mixing)."""

    def __init__(self, channels: int, kernel: int, groups: int, rng=None):
        super().__init__()
        if channels % groups != 0:
            raise ValueError("channels must divide evenly into groups")
        cg = channels // groups
        self.w = Parameter(_init(rng, (groups, kernel, cg, cg),
                                 1.0 / np.sqrt(kernel * cg)))
        self.b = Parameter(np.zeros(channels))
        self.groups = groups
        self.cg = cg
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        outs = []
        for g in range(self.groups):
            xg = x[:, g * self.cg:(g + 1) * self.cg]
            wg = self.w[g]
            bg = self.b[g * self.cg:(g + 1) * self.cg]
            outs.append(ag.conv1d(xg, wg, bg, stride=1,
                                  pad_left=self.pad_left, pad_right=self.pad_right))
        return ag.concat(outs, axis=-1)


class BiLSTM(Module):
    """Single-layer bidirectional LSTM; output dim is 2 * hidden."""

    def __init__(self, input_dim: int, hidden: int, rng=None):
        super().__init__()
        for tag in ("fwd", "bwd"):
            setattr(self, f"w_ih_{tag}",
                    Parameter(_init(rng, (input_dim, 4 * hidden), 1.0 / np.sqrt(input_dim))))
            setattr(self, f"w_hh_{tag}",
                    Parameter(_init(rng, (hidden, 4 * hidden), 1.0 / np.sqrt(hidden))))
            bias = np.zeros(4 * hidden)
            bias[hidden:2 * hidden] = 1.0  # forget-gate bias
            setattr(self, f"b_{tag}", Parameter(bias))
        self.hidden = hidden

    def __call__(self, x: Tensor) -> Tensor:
        h_f = ag.lstm(x, self.w_ih_fwd, self.w_hh_fwd, self.b_fwd, reverse=False)
        h_b = ag.lstm(x, self.w_ih_bwd, self.w_hh_bwd, self.b_bwd, reverse=True)
        return ag.concat([h_f, h_b], axis=-1)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng=None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must divide evenly into heads")
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.heads = heads
        self.dh = dim // heads
        self.scale = 1.0 / np.sqrt(self.dh)

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[0]

        def split(h: Tensor) -> Tensor:
            return h.reshape(t, self.heads, self.dh).transpose((1, 0, 2))

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = (q @ k.transpose((0, 2, 1))) * self.scale
        ctx = ag.softmax(scores, axis=-1) @ v  # [heads, T, dh]
        merged = ctx.transpose((1, 0, 2)).reshape(t, self.heads * self.dh)
        return self.wo(merged)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng=None):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ag.gelu(self.lin1(x)))


class TransformerLayer(Module):
    """Pre-LN block; optional adapters wrap each sub-layer output before it
    rejoins the residual stream."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng=None):
        super().__init__()
        self.ln_attn = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.ln_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng)
        object.__setattr__(self, "adapter_attn", None)
        object.__setattr__(self, "adapter_ffn", None)

    def __call__(self, x: Tensor, adapters_enabled: bool = True) -> Tensor:
        h = self.attn(self.ln_attn(x))
        if self.adapter_attn is not None and adapters_enabled:
            h = self.adapter_attn(h)
        x = x + h
        f = self.ffn(self.ln_ffn(x))
        if self.adapter_ffn is not None and adapters_enabled:
            f = self.adapter_ffn(f)
        return x + f


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng=None):
        super().__init__()
        self.table = Parameter(_init(rng, (vocab, dim), 1.0 / np.sqrt(dim)))

    def __call__(self, ids) -> Tensor:
        return ag.embedding_lookup(self.table, ids)


class Adam:
    """Plain Adam with bias correction; updates only params that carry grads."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.param_list = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.param_list]
        self.v = [np.zeros_like(p.data) for p in self.param_list]

    def zero_grad(self):
        for p in self.param_list:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.param_list):
            if p.grad is None or not p.requires_grad:
                continue
            m, v = self.m[i], self.v[i]
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * np.square(p.grad)
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


_POS_CACHE: dict = {}


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional code, [length, dim] (cached, read-only)."""
    key = (length, dim)
    if key not in _POS_CACHE:
        pos = np.arange(length)[:, None]
        i = np.arange(dim // 2)[None, :]
        angles = pos / (10000.0 ** (2.0 * i / dim))
        out = np.zeros((length, dim))
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        out.setflags(write=False)
        _POS_CACHE[key] = out
    return _POS_CACHE[key]
