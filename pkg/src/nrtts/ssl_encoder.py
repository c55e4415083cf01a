"""Toy SSL speech encoder: strided conv feature extractor + transformer stack.

The encoder exposes every layer's hidden states as a LayerStack whose index
0 is the projected conv-extractor output and indices 1..L are transformer
layer outputs.  That indexing is load-bearing for the representation
analysis, so it is fixed here and documented: layer 0 excludes the
positional convolution, which is treated as part of the transformer input.

The desk-scale default trains in minutes on a CPU; the paper-scale preset
exists only for parameter accounting and should not be run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .dsp import AudioClip
from .errors import InvalidInputError

DESK_SCALE = dict(n_conv_blocks=3, conv_channels=64,
                  conv_kernels=(32, 10, 8), conv_strides=(16, 5, 4),
                  n_transformer_layers=4, model_dim=96, n_heads=4, ffn_dim=384,
                  pos_kernel=16, pos_groups=4)

PAPER_SCALE = dict(n_conv_blocks=7, conv_channels=512,
                   conv_kernels=(10, 3, 3, 3, 3, 2, 2),
                   conv_strides=(5, 2, 2, 2, 2, 2, 2),
                   n_transformer_layers=12, model_dim=768, n_heads=12,
                   ffn_dim=3072, pos_kernel=128, pos_groups=16)


@dataclass(frozen=True)
class EncoderConfig:
    n_conv_blocks: int = 3
    conv_channels: int = 64
    conv_kernels: tuple = (32, 10, 8)
    conv_strides: tuple = (16, 5, 4)
    n_transformer_layers: int = 4
    model_dim: int = 96
    n_heads: int = 4
    ffn_dim: int = 384
    pos_kernel: int = 16
    pos_groups: int = 4

    def __post_init__(self):
        if len(self.conv_kernels) != self.n_conv_blocks or \
                len(self.conv_strides) != self.n_conv_blocks:
            raise InvalidInputError("kernel/stride lists must match n_conv_blocks")

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        return cls(**PAPER_SCALE)

    @property
    def min_samples(self) -> int:
        n = 1
        for k, s in zip(reversed(self.conv_kernels), reversed(self.conv_strides)):
            n = (n - 1) * s + k
        return n

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.conv_strides))

    def frames_for(self, n_samples: int) -> int:
        t = n_samples
        for k, s in zip(self.conv_kernels, self.conv_strides):
            t = (t - k) // s + 1
        return t


@dataclass
class LayerStack:
    """Per-layer hidden states, layers[l] of shape [T, D] for l = 0..L."""

    layers: np.ndarray  # [L+1, T, D]
    frame_rate: float

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def frames(self) -> int:
        return self.layers.shape[1]


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, rng=None):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride=stride,
                              padding="valid", rng=rng)
        self.ln = nn.LayerNorm(out_ch)
        object.__setattr__(self, "adapter", None)

    def __call__(self, x):
        return ag.gelu(self.ln(self.conv(x)))


class SSLEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, rng=None):
        super().__init__()
        self.config = config
        blocks = []
        in_ch = 1
        for k, s in zip(config.conv_kernels, config.conv_strides):
            blocks.append(ConvBlock(in_ch, config.conv_channels, k, s, rng))
            in_ch = config.conv_channels
        self.conv_blocks = nn.ModuleList(blocks)
        self.proj = nn.Linear(config.conv_channels, config.model_dim, rng)
        self.pos_conv = nn.GroupedConv1d(config.model_dim, config.pos_kernel,
                                         config.pos_groups, rng)
        self.layers = nn.ModuleList([
            nn.TransformerLayer(config.model_dim, config.n_heads,
                                config.ffn_dim, rng)
            for _ in range(config.n_transformer_layers)])
        object.__setattr__(self, "adapter_set", None)

    # -- forward ------------------------------------------------------------
    def conv_features(self, samples: np.ndarray, adapters_enabled: bool = True) -> Tensor:
        x = Tensor(np.asarray(samples, dtype=np.float64)[:, None])
        for block in self.conv_blocks:
            x = block(x)
            if block.adapter is not None and adapters_enabled:
                x = block.adapter(x)
        return x

    def forward_stack(self, samples: np.ndarray, adapters_enabled: bool = True,
                      mask_indices=None, mask_embed: Tensor | None = None) -> list:
        """Graph-building forward pass; returns [layer0, ..., layerL] Tensors."""
        if len(samples) < self.config.min_samples:
            raise InvalidInputError(
                f"audio too short: {len(samples)} samples, encoder needs at "
                f"least {self.config.min_samples}")
        feats = self.conv_features(samples, adapters_enabled)
        layer0 = self.proj(feats)
        stack = [layer0]
        h = layer0
        if mask_indices is not None and len(mask_indices) > 0:
            keep = np.ones(h.shape[0], dtype=np.float64)
            keep[mask_indices] = 0.0
            put = np.zeros((h.shape[0], 1))
            put[mask_indices] = 1.0
            h = h * keep[:, None] + Tensor(put) * mask_embed
        h = h + ag.gelu(self.pos_conv(h))
        for layer in self.layers:
            h = layer(h, adapters_enabled=adapters_enabled)
            stack.append(h)
        return stack

    def extract_features(self, audio: AudioClip, adapters_enabled: bool = True) -> LayerStack:
        """Inference-mode layer extraction (no graph)."""
        with ag.no_grad():
            stack = self.forward_stack(audio.samples, adapters_enabled)
        return LayerStack(np.stack([t.data for t in stack]),
                          frame_rate=audio.sample_rate / self.config.total_stride)

    # -- trainability ---------------------------------------------------------
    def base_parameters(self):
        yield from (("encoder/" + n, p) for n, p in self.named_parameters())

    def adapter_parameters(self):
        if self.adapter_set is None:
            return
        yield from (("adapters/" + n, p)
                    for n, p in self.adapter_set.named_parameters())


# ---------------------------------------------------------------------------
# optional masked-prediction warm start for the toy encoder
# ---------------------------------------------------------------------------

class MaskedPredictor(nn.Module):
    """Mask embedding plus regression head from layer L back to layer 0."""

    def __init__(self, dim: int, rng=None):
        super().__init__()
        self.mask_embed = nn.Parameter(
            rng.normal(0, 0.1, size=dim) if rng is not None else np.zeros(dim))
        self.ln = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, dim, rng)


def masked_step_loss(encoder: SSLEncoder, predictor: MaskedPredictor,
                     samples: np.ndarray, rng: np.random.Generator,
                     mask_prob: float = 0.15):
    """One utterance's masked-frame regression loss; returns (loss, n_masked)."""
    t_frames = encoder.config.frames_for(len(samples))
    mask = rng.random(t_frames) < mask_prob
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        idx = np.array([int(rng.integers(t_frames))])
    stack = encoder.forward_stack(samples, mask_indices=idx,
                                  mask_embed=predictor.mask_embed)
    target = Tensor(stack[0].data[idx])  # clean layer-0 features, detached
    pred = predictor.head(predictor.ln(stack[-1][idx]))
    diff = pred - target
    return (diff * diff).mean(), idx.size


def masked_pretrain(encoder: SSLEncoder, records, steps: int, seed: int,
                    mask_prob: float = 0.15, lr: float = 1e-3,
                    batch_size: int = 4):
    """Lightweight masked-prediction training of the encoder base.

    steps=0 leaves the encoder untouched.  Returns (predictor, losses).
    """
    if steps < 0:
        raise InvalidInputError("steps must be >= 0")
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6d61736b]))
    predictor = MaskedPredictor(encoder.config.model_dim, init_rng)
    losses = []
    if steps == 0:
        return predictor, losses
    params = list(encoder.base_parameters()) + \
        [("mask/" + n, p) for n, p in predictor.named_parameters()]
    opt = nn.Adam([p for _, p in params], lr=lr)
    data_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x64617461]))
    for step in range(steps):
        picks = data_rng.integers(0, len(records), size=batch_size)
        total = None
        for i in picks:
            loss, _ = masked_step_loss(encoder, predictor,
                                       records[i].audio.samples, data_rng,
                                       mask_prob)
            total = loss if total is None else total + loss
        total = total * (1.0 / batch_size)
        opt.zero_grad()
        total.backward()
        opt.step()
        losses.append(total.item())
    return predictor, losses
