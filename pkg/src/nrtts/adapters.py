"""Bottleneck and gated-convolution adapters, freeze plans, and counting.

Both adapter types are exact identities at initialization: the bottleneck
adapter's up-projection (weight and bias) starts at zero, and the conv
adapter's contribution is gated by tanh(alpha) with alpha = 0.  Inserting
them therefore changes no model output until training moves them.

Adapters are deliberately kept out of the encoder's own parameter tree;
they live in an :class:`AdapterSet` so checkpoints carry them under a
separate ``adapters/`` namespace and freeze plans can address them as
groups.  One set serves both embedding towers (they share the encoder).
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag
from . import nn
from .errors import InvalidConfigError, InvalidStateError

PARAM_GROUPS = ("base_conv", "base_transformer", "bn_adapters", "cnn_adapters",
                "embedding_modules", "tts_model", "se_frontend")

DEFAULT_BOTTLENECK = 256
DEFAULT_CNN_KERNEL = 2  # puts the paper-scale increment inside the accounting tolerance


class BNAdapter(nn.Module):
    """Residual bottleneck: x + Up(GELU(Down(LN(x))))."""

    def __init__(self, dim: int, bottleneck: int, rng=None):
        super().__init__()
        self.ln = nn.LayerNorm(dim)
        self.down = nn.Linear(dim, bottleneck, rng)
        self.up = nn.Linear(bottleneck, dim, rng=None)  # exact-zero init
        self.bottleneck = bottleneck

    def __call__(self, x):
        return x + self.up(ag.gelu(self.down(self.ln(x))))


class CNNAdapter(nn.Module):
    """Residual gated conv: x + tanh(alpha) * Conv(LN(x)), alpha starts at 0."""

    def __init__(self, channels: int, kernel: int = DEFAULT_CNN_KERNEL, rng=None):
        super().__init__()
        self.ln = nn.LayerNorm(channels)
        self.conv = nn.Conv1d(channels, channels, kernel, padding="same", rng=rng)
        self.alpha = nn.Parameter(np.zeros(()))

    def __call__(self, x):
        return x + ag.tanh(self.alpha) * self.conv(self.ln(x))


class AdapterSet(nn.Module):
    """All adapters of one encoder, addressable as bn/* and cnn/* groups."""

    def __init__(self):
        super().__init__()
        self.bn = nn.ModuleList()
        self.cnn = nn.ModuleList()


def insert_adapters(encoder, use_bn: bool, use_cnn: bool,
                    bottleneck: int = DEFAULT_BOTTLENECK,
                    cnn_kernel: int = DEFAULT_CNN_KERNEL, rng=None) -> AdapterSet:
    """Attach fresh adapters to an encoder (identity at init, insert once)."""
    if encoder.adapter_set is not None:
        raise InvalidStateError("adapters already inserted into this encoder")
    adapter_set = AdapterSet()
    if use_bn:
        for layer in encoder.layers:
            post_attn = BNAdapter(encoder.config.model_dim, bottleneck, rng)
            post_ffn = BNAdapter(encoder.config.model_dim, bottleneck, rng)
            object.__setattr__(layer, "adapter_attn", post_attn)
            object.__setattr__(layer, "adapter_ffn", post_ffn)
            adapter_set.bn.append(post_attn)
            adapter_set.bn.append(post_ffn)
    if use_cnn:
        for block in encoder.conv_blocks:
            adapter = CNNAdapter(encoder.config.conv_channels, cnn_kernel, rng)
            object.__setattr__(block, "adapter", adapter)
            adapter_set.cnn.append(adapter)
    object.__setattr__(encoder, "adapter_set", adapter_set)
    return adapter_set


@dataclass(frozen=True)
class FreezePlan:
    """Trainability flags per parameter group; SE front-ends stay frozen."""

    base_conv: bool = False
    base_transformer: bool = False
    bn_adapters: bool = False
    cnn_adapters: bool = False
    embedding_modules: bool = False
    tts_model: bool = False
    se_frontend: bool = False

    def __post_init__(self):
        if self.se_frontend:
            raise InvalidConfigError("the SE front-end is never trainable")

    @classmethod
    def from_dict(cls, flags: dict) -> "FreezePlan":
        known = {f.name for f in fields(cls)}
        unknown = set(flags) - known
        if unknown:
            raise InvalidConfigError(f"unknown parameter group(s): {sorted(unknown)}")
        return cls(**flags)

    def trainable_groups(self) -> set:
        return {f.name for f in fields(self) if getattr(self, f.name)}

    def allows(self, name: str) -> bool:
        return getattr(self, parameter_group(name))


FREEZE_ALL = FreezePlan()

CONDITIONS = ("pretrained", "whole_ft", "no_adapters", "bn", "cnn", "bn_cnn")


def plan_for_condition(condition: str, stage: str = "finetune") -> FreezePlan:
    """Standard plans for the paper's training conditions."""
    if stage == "pretrain":
        return FreezePlan(embedding_modules=True, tts_model=True)
    table = {
        "no_adapters": FreezePlan(embedding_modules=True),
        "bn": FreezePlan(embedding_modules=True, bn_adapters=True),
        "cnn": FreezePlan(embedding_modules=True, cnn_adapters=True),
        "bn_cnn": FreezePlan(embedding_modules=True, bn_adapters=True,
                             cnn_adapters=True),
        "whole_ft": FreezePlan(embedding_modules=True, base_conv=True,
                               base_transformer=True),
    }
    if condition not in table:
        raise InvalidConfigError(
            f"unknown fine-tune condition {condition!r}; expected one of {sorted(table)}")
    return table[condition]


def adapter_flags_for_condition(condition: str) -> tuple[bool, bool]:
    return condition in ("bn", "bn_cnn"), condition in ("cnn", "bn_cnn")


def parameter_group(name: str) -> str:
    """Map a namespaced parameter name to its freeze group."""
    if name.startswith("encoder/conv_blocks/") or name.startswith("encoder/proj/"):
        return "base_conv"
    if name.startswith("encoder/"):
        return "base_transformer"
    if name.startswith("adapters/bn/"):
        return "bn_adapters"
    if name.startswith("adapters/cnn/"):
        return "cnn_adapters"
    if name.startswith("embedding/"):
        return "embedding_modules"
    if name.startswith("tts/"):
        return "tts_model"
    if name.startswith("se/"):
        return "se_frontend"
    raise InvalidConfigError(f"parameter {name!r} belongs to no known group")


def count_trainable_params(named_shapes: dict, plan: FreezePlan) -> int:
    """Exact scalar count over the plan's trainable groups."""
    total = 0
    for name, shape in named_shapes.items():
        if plan.allows(name):
            total += int(np.prod(shape)) if shape else 1
    return total


def group_counts(named_shapes: dict) -> dict:
    out = {g: 0 for g in PARAM_GROUPS}
    for name, shape in named_shapes.items():
        out[parameter_group(name)] += int(np.prod(shape)) if shape else 1
    return out
