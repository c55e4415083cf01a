"""Pluggable speech-enhancement stage for reference audio.

Two parameter-free enhancers ship by default: a pass-through and a
magnitude spectral subtractor.  The subtractor estimates the noise
magnitude per frequency bin from the lowest-energy 10% of frames,
oversubtracts with a spectral floor, and resynthesizes with the noisy
phase via windowed overlap-add.  Enhancers are frozen by contract: they
expose no trainable parameters and never appear in a freeze plan's
trainable set.
"""
from __future__ import annotations

import numpy as np

from . import dsp
from .dsp import AudioClip
from .errors import InvalidConfigError


class Enhancer:
    """Waveform-in/waveform-out, same length and rate, never trainable."""

    name = "base"
    is_trainable = False

    def enhance(self, noisy: AudioClip) -> AudioClip:
        raise NotImplementedError

    def __call__(self, noisy: AudioClip) -> AudioClip:
        out = self.enhance(noisy)
        assert len(out.samples) == len(noisy.samples)
        assert out.sample_rate == noisy.sample_rate
        return out


class PassThrough(Enhancer):
    name = "passthrough"

    def enhance(self, noisy: AudioClip) -> AudioClip:
        return AudioClip(noisy.samples, noisy.sample_rate)


class SpectralSubtraction(Enhancer):
    """Power-domain spectral subtraction with a multiplicative gain mask.

    The noise power spectrum is estimated from the lowest-energy 10% of
    fully-covered frames (tail-padded frames are excluded), oversubtracted,
    and floored; resynthesis keeps the noisy phase.  ``gain_mask`` exposes
    the time-frequency gain so component-wise SNR oracles can push known
    clean/noise parts through the identical processing.
    """

    name = "spectral_subtraction"

    def __init__(self, oversubtract: float = 4.0, floor: float = 0.05,
                 quantile: float = 0.10, n_fft: int = 512,
                 hop: int = 160, win: int = 400):
        self.oversubtract = oversubtract
        self.floor = floor
        self.quantile = quantile
        self.n_fft = n_fft
        self.hop = hop
        self.win = win

    def gain_mask(self, noisy: AudioClip) -> np.ndarray:
        spec = dsp.stft(noisy.samples, n_fft=self.n_fft, hop=self.hop,
                        win_length=self.win)
        mag = np.abs(spec)
        n_full = max(1, (len(noisy.samples) - self.win) // self.hop + 1)
        energy = (mag[:n_full] ** 2).sum(axis=1)
        n_quiet = max(1, int(np.ceil(self.quantile * n_full)))
        quiet = np.argsort(energy)[:n_quiet]
        noise_pow = (mag[quiet] ** 2).mean(axis=0)

        cleaned = np.sqrt(np.maximum(
            mag ** 2 - self.oversubtract * noise_pow[None, :],
            (self.floor * mag) ** 2))
        return cleaned / np.maximum(mag, 1e-12)

    def enhance(self, noisy: AudioClip) -> AudioClip:
        spec = dsp.stft(noisy.samples, n_fft=self.n_fft, hop=self.hop,
                        win_length=self.win)
        out = dsp.istft(self.gain_mask(noisy) * spec, len(noisy.samples),
                        n_fft=self.n_fft, hop=self.hop, win_length=self.win)
        return AudioClip(out, noisy.sample_rate)


ENHANCERS = {
    "passthrough": PassThrough,
    "spectral_subtraction": SpectralSubtraction,
}


def get_enhancer(name: str) -> Enhancer:
    if name not in ENHANCERS:
        raise InvalidConfigError(
            f"unknown enhancer {name!r}; expected one of {sorted(ENHANCERS)}")
    return ENHANCERS[name]()
