"""Fixed-length speaker embeddings from encoder layer stacks.

Two structurally identical but fully independent towers produce the
acoustic-conditioning and duration-conditioning embeddings from the same
LayerStack: softmax-normalized layer weighting, a BiLSTM aggregator
(hidden E/2 per direction), and additive attention pooling with a single
learned scalar score per frame.  The towers share nothing downstream of
the encoder, which is what lets duration and acoustic conditioning be
analyzed separately.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .errors import InvalidInputError
from .ssl_encoder import LayerStack

TOWERS = ("acoustic", "duration")


@dataclass
class LayerWeights:
    logits: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        e = np.exp(self.logits - self.logits.max())
        return e / e.sum()


@dataclass
class SpeakerEmbeddingPair:
    acoustic: np.ndarray
    duration: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.acoustic)


def weighted_sum(stack: LayerStack, weights: LayerWeights) -> np.ndarray:
    """Convex combination of layers: out[t] = sum_l w[l] * layer_l[t]."""
    if stack.n_layers != len(weights.logits):
        raise InvalidInputError(
            f"stack has {stack.n_layers} layers but weights cover {len(weights.logits)}")
    w = weights.normalized
    return np.tensordot(w, stack.layers, axes=(0, 0))


class EmbeddingTower(nn.Module):
    def __init__(self, n_layers: int, model_dim: int, embed_dim: int, rng=None):
        super().__init__()
        if embed_dim % 2 != 0:
            raise InvalidInputError("embed_dim must be even (E/2 per LSTM direction)")
        self.layer_logits = nn.Parameter(np.zeros(n_layers))
        self.lstm = nn.BiLSTM(model_dim, embed_dim // 2, rng)
        self.score = nn.Linear(embed_dim, 1, rng)
        self.embed_dim = embed_dim

    def combine_layers(self, stack: list) -> Tensor:
        if len(stack) != self.layer_logits.shape[0]:
            raise InvalidInputError(
                f"stack has {len(stack)} layers but tower expects "
                f"{self.layer_logits.shape[0]}")
        w = ag.softmax(self.layer_logits, axis=0)
        out = w[0] * stack[0]
        for l in range(1, len(stack)):
            out = out + w[l] * stack[l]
        return out

    def attention_pool(self, hiddens: Tensor) -> Tensor:
        if hiddens.shape[0] < 1:
            raise InvalidInputError("attention pooling needs at least one frame")
        scores = self.score(hiddens)            # [T, 1]
        attn = ag.softmax(scores, axis=0)
        return (attn * hiddens).sum(axis=0)     # [E]

    def __call__(self, stack: list) -> Tensor:
        return self.attention_pool(self.lstm(self.combine_layers(stack)))

    def layer_weights(self) -> LayerWeights:
        return LayerWeights(self.layer_logits.data.copy())


class EmbeddingExtractor(nn.Module):
    """The acoustic/duration tower pair."""

    def __init__(self, n_layers: int, model_dim: int, embed_dim: int = 256, rng=None):
        super().__init__()
        self.acoustic = EmbeddingTower(n_layers, model_dim, embed_dim, rng)
        self.duration = EmbeddingTower(n_layers, model_dim, embed_dim, rng)
        self.embed_dim = embed_dim

    def __call__(self, stack: list) -> tuple:
        return self.acoustic(stack), self.duration(stack)

    def extract_pair(self, stack: LayerStack) -> SpeakerEmbeddingPair:
        tensors = [Tensor(layer) for layer in stack.layers]
        with ag.no_grad():
            e_a, e_d = self(tensors)
        return SpeakerEmbeddingPair(e_a.data.copy(), e_d.data.copy())


def layer_weight_report(extractor: EmbeddingExtractor) -> dict:
    """Normalized per-tower layer weights, ready for plotting."""
    return {
        "acoustic": extractor.acoustic.layer_weights().normalized,
        "duration": extractor.duration.layer_weights().normalized,
    }


def write_layer_weights_csv(path, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tower", "layer", "weight"])
        for tower in TOWERS:
            for layer, w in enumerate(report[tower]):
                writer.writerow([tower, layer, repr(float(w))])


def read_layer_weights_csv(path) -> dict:
    out = {tower: {} for tower in TOWERS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["tower"]][int(row["layer"])] = float(row["weight"])
    return {tower: np.array([vals[i] for i in sorted(vals)])
            for tower, vals in out.items()}


def write_embeddings_csv(path, rows) -> None:
    """rows: iterable of (utterance_id, tower, vector)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for utt_id, tower, vec in rows:
            writer.writerow([utt_id, tower] + [repr(float(v)) for v in vec])
