"""SNR-exact noise mixing and the stochastic reference-speech policy.

SNR is defined on full-clip RMS power.  Noise shorter than the signal is
tiled; longer noise is windowed at the spec'd offset.  If the mixture
would clip, the whole mixture is rescaled (both components equally), which
preserves the realized SNR exactly; the scale is recorded on the MixSpec.

Augmentation only ever touches the reference-speech path; training code
keeps target mels clean by construction and tests assert it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dsp
from .dsp import AudioClip
from .corpus import NoiseBank
from .errors import DegenerateInputError, InvalidConfigError, InvalidInputError


@dataclass
class MixSpec:
    snr_db: float
    noise_id: str = ""
    offset_samples: int = 0
    renorm_scale: float = 1.0  # set by mix_at_snr when peak renormalization fires

    def validate(self):
        if not np.isfinite(self.snr_db):
            raise InvalidInputError("snr_db must be finite")
        if self.offset_samples < 0:
            raise InvalidInputError("offset_samples must be non-negative")


@dataclass
class AugmentPolicy:
    probability: float = 0.5
    snr_low_db: float = -10.0
    snr_high_db: float = 20.0

    def validate(self):
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidConfigError("probability must lie in [0, 1]")
        if self.snr_low_db > self.snr_high_db:
            raise InvalidConfigError("snr_low_db must not exceed snr_high_db")


def _fit_noise(noise: np.ndarray, length: int, offset: int) -> np.ndarray:
    """Tile short noise, window long noise at the given offset."""
    if len(noise) >= length + offset:
        return noise[offset:offset + length]
    reps = int(np.ceil((length + offset) / len(noise)))
    return np.tile(noise, reps)[offset:offset + length]


def noise_gain(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Amplitude gain that puts `noise` at `snr_db` below `clean`."""
    return dsp.rms(clean) / (dsp.rms(noise) * 10.0 ** (snr_db / 20.0))


def mix_with_gain(clean: AudioClip, noise_fitted: np.ndarray, gain: float) -> np.ndarray:
    return clean.samples + gain * noise_fitted


def mix_at_snr(clean: AudioClip, noise: AudioClip, spec: MixSpec) -> AudioClip:
    """Mix noise into clean speech at an exact full-clip RMS SNR."""
    spec.validate()
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError(
            f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    if dsp.rms(clean.samples) == 0.0:
        raise DegenerateInputError("clean signal is silent; SNR undefined")
    if dsp.rms(noise.samples) == 0.0:
        raise DegenerateInputError("noise signal is silent; SNR undefined")

    fitted = _fit_noise(noise.samples, len(clean.samples), spec.offset_samples)
    gain = noise_gain(clean.samples, fitted, spec.snr_db)
    mixture = mix_with_gain(clean, fitted, gain)

    spec.renorm_scale = 1.0
    peak = np.max(np.abs(mixture))
    if peak > 1.0:
        # scaling the whole mixture keeps the realized SNR untouched
        spec.renorm_scale = float(1.0 / peak)
        mixture = mixture * spec.renorm_scale
    return AudioClip(mixture, clean.sample_rate)


def measured_snr_db(clean: np.ndarray, scaled_noise: np.ndarray) -> float:
    """Oracle-style SNR from known components."""
    return dsp.power_db(clean) - dsp.power_db(scaled_noise)


def apply_policy(clean: AudioClip, policy: AugmentPolicy, noise_bank: NoiseBank,
                 rng: np.random.Generator) -> tuple[AudioClip, Optional[MixSpec]]:
    """Mix with probability `policy.probability` at SNR ~ U[low, high].

    Draw order is fixed (fire?, noise id, SNR, offset) so a given rng state
    maps to exactly one outcome.
    """
    policy.validate()
    if policy.probability > 0 and len(noise_bank) == 0:
        raise InvalidConfigError("augmentation enabled but noise bank is empty")

    if rng.random() >= policy.probability:
        return clean, None

    noise_id, noise = noise_bank.sample(rng)
    snr_db = float(rng.uniform(policy.snr_low_db, policy.snr_high_db))
    slack = max(1, len(noise.samples) - len(clean.samples))
    offset = int(rng.integers(0, slack))
    spec = MixSpec(snr_db=snr_db, noise_id=noise_id, offset_samples=offset)
    return mix_at_snr(clean, noise, spec), spec


def record_rng(global_seed: int, utterance_id: str, step: int) -> np.random.Generator:
    """Per-(record, step) rng stream so data pipelines can shard safely."""
    return dsp.seeded_rng("augment", global_seed, utterance_id, step)
