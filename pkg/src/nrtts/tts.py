"""Non-autoregressive acoustic model with separate duration/acoustic conditioning.

FastSpeech2-flavoured: phoneme encoder, duration predictor, length
regulator, mel decoder.  The duration predictor sees the linguistic
hiddens plus a projected duration embedding; the decoder input sees the
length-regulated hiddens plus a projected acoustic embedding.  Conditioning
is a broadcast add of the projected embedding, so the two embeddings have
disjoint gradient paths (duration loss cannot reach the acoustic tower and
vice versa).

Durations are handled in log-frames internally; at synthesis they are
exponentiated, rounded, and floored at one frame.  Training always teacher
forces the length regulator with ground-truth durations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .dsp import MelSpectrogram
from .errors import InvalidInputError


@dataclass(frozen=True)
class TTSConfig:
    hidden_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 3
    n_heads: int = 2
    ffn_dim: int = 384
    n_mels: int = 80
    n_phonemes: int = 32
    embed_dim: int = 256
    frame_shift_ms: float = 10.0
    duration_loss_weight: float = 1.0
    condition_encoder: bool = False  # alternative conditioning point, off by default

    @classmethod
    def paper_scale(cls) -> "TTSConfig":
        return cls(hidden_dim=256, encoder_layers=4, decoder_layers=6,
                   n_heads=4, ffn_dim=1024)


def length_regulate_np(hidden: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Repeat position i durations[i] times; total frames = sum(durations)."""
    durations = np.asarray(durations, dtype=np.int64)
    if len(durations) != len(hidden):
        raise InvalidInputError("durations must align with hidden positions")
    if np.any(durations < 1):
        raise InvalidInputError("every duration must be at least one frame")
    return np.repeat(hidden, durations, axis=0)


def regulate_indices(durations: np.ndarray) -> np.ndarray:
    durations = np.asarray(durations, dtype=np.int64)
    if np.any(durations < 1):
        raise InvalidInputError("every duration must be at least one frame")
    return np.repeat(np.arange(len(durations)), durations)


def log_durations_to_frames(log_dur: np.ndarray) -> np.ndarray:
    """Synthesis-time rounding with a floor of one frame."""
    return np.maximum(1, np.round(np.exp(log_dur))).astype(np.int64)


class DurationPredictor(nn.Module):
    def __init__(self, hidden: int, rng=None, kernel: int = 3):
        super().__init__()
        self.conv1 = nn.Conv1d(hidden, hidden, kernel, padding="same", rng=rng)
        self.ln1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel, padding="same", rng=rng)
        self.ln2 = nn.LayerNorm(hidden)
        self.out = nn.Linear(hidden, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(ag.gelu(self.conv1(x)))
        x = self.ln2(ag.gelu(self.conv2(x)))
        return self.out(x).reshape(-1)  # log-frames, [N]


class TTSModel(nn.Module):
    def __init__(self, config: TTSConfig, rng=None):
        super().__init__()
        self.config = config
        h = config.hidden_dim
        self.phoneme_embed = nn.Embedding(config.n_phonemes, h, rng)
        self.encoder = nn.ModuleList([
            nn.TransformerLayer(h, config.n_heads, config.ffn_dim, rng)
            for _ in range(config.encoder_layers)])
        self.duration_predictor = DurationPredictor(h, rng)
        self.proj_duration = nn.Linear(config.embed_dim, h, rng)
        self.proj_acoustic = nn.Linear(config.embed_dim, h, rng)
        self.decoder = nn.ModuleList([
            nn.TransformerLayer(h, config.n_heads, config.ffn_dim, rng)
            for _ in range(config.decoder_layers)])
        self.mel_out = nn.Linear(h, config.n_mels, rng)

    # -- submodule passes ---------------------------------------------------
    def encode_text(self, phonemes, e_a: Tensor | None = None) -> Tensor:
        phonemes = np.asarray(phonemes, dtype=np.int64)
        if phonemes.size == 0:
            raise InvalidInputError("phoneme sequence must be non-empty")
        if np.any(phonemes < 0) or np.any(phonemes >= self.config.n_phonemes):
            raise InvalidInputError("phoneme id outside model vocabulary")
        x = self.phoneme_embed(phonemes)
        x = x + Tensor(nn.sinusoidal_positions(len(phonemes), self.config.hidden_dim))
        if self.config.condition_encoder and e_a is not None:
            x = x + self.proj_acoustic(e_a)
        for layer in self.encoder:
            x = layer(x)
        return x

    def predict_log_durations(self, linguistic: Tensor, e_d: Tensor) -> Tensor:
        if linguistic.shape[0] < 1:
            raise InvalidInputError("empty linguistic sequence")
        return self.duration_predictor(linguistic + self.proj_duration(e_d))

    def decode_mel(self, frames: Tensor, e_a: Tensor) -> Tensor:
        if frames.shape[0] < 1:
            raise InvalidInputError("decoder needs at least one frame")
        x = frames
        if not self.config.condition_encoder:
            x = x + self.proj_acoustic(e_a)
        x = x + Tensor(nn.sinusoidal_positions(x.shape[0], self.config.hidden_dim))
        for layer in self.decoder:
            x = layer(x)
        return self.mel_out(x)

    def length_regulate(self, hidden: Tensor, durations: np.ndarray) -> Tensor:
        return hidden[regulate_indices(durations)]

    # -- losses and inference -------------------------------------------------
    def teacher_losses(self, phonemes, gt_frames: np.ndarray, e_a: Tensor,
                       e_d: Tensor, target_mel: np.ndarray) -> dict:
        """Teacher-forced forward pass; returns {'mel_l1', 'duration_mse'} Tensors."""
        gt_frames = np.asarray(gt_frames, dtype=np.int64)
        if gt_frames.size == 0:
            raise InvalidInputError("ground-truth durations are required in training")
        linguistic = self.encode_text(phonemes, e_a)
        log_pred = self.predict_log_durations(linguistic, e_d)
        dur_err = log_pred - Tensor(np.log(gt_frames.astype(np.float64)))
        duration_mse = (dur_err * dur_err).mean()
        frames = self.length_regulate(linguistic, gt_frames)
        mel = self.decode_mel(frames, e_a)
        if mel.shape[0] != target_mel.shape[0]:
            raise InvalidInputError(
                f"target mel has {target_mel.shape[0]} frames, regulator "
                f"produced {mel.shape[0]}")
        mel_l1 = ag.absolute(mel - Tensor(target_mel)).mean()
        return {"mel_l1": mel_l1, "duration_mse": duration_mse}

    def infer(self, phonemes, e_a: np.ndarray, e_d: np.ndarray,
              forced_durations: np.ndarray | None = None
              ) -> tuple[MelSpectrogram, np.ndarray]:
        """Synthesis pass; forced_durations bypasses the duration predictor
        for alignment-exact evaluation."""
        with ag.no_grad():
            ea_t, ed_t = Tensor(e_a), Tensor(e_d)
            linguistic = self.encode_text(phonemes, ea_t)
            log_pred = self.predict_log_durations(linguistic, ed_t)
            predicted = log_durations_to_frames(log_pred.data)
            durations = predicted if forced_durations is None else \
                np.asarray(forced_durations, dtype=np.int64)
            frames = self.length_regulate(linguistic, durations)
            mel = self.decode_mel(frames, ea_t)
        return (MelSpectrogram(mel.data.copy(), self.config.n_mels,
                               self.config.frame_shift_ms), predicted)
