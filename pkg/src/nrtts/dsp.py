"""Audio containers and the shared signal-processing front-end.

The mel analysis here is the single source of truth: corpus targets,
evaluation metrics, and synthesis checks all call the same functions with
the same defaults (80 mel bands, 10 ms shift, 25 ms window at 16 kHz).

Framing pads the tail so the frame count is exactly ``ceil(len / hop)``;
audio whose length is a whole number of hops therefore yields one frame
per hop, which is what keeps teacher-forced duration targets aligned with
mel targets.
"""
from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

from .errors import InvalidInputError

MEL_FLOOR = 1e-6


@dataclass
class AudioClip:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-amplitude mel frames, [T, n_mels]."""

    frames: np.ndarray
    n_mels: int
    frame_shift_ms: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)


def seed_material(*parts) -> list[int]:
    """Stable 256-bit seed entropy from a mixed str/int key tuple."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    digest = h.digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def seeded_rng(*parts) -> np.random.Generator:
    """Deterministic generator keyed by an arbitrary tuple of str/int parts."""
    return np.random.default_rng(np.random.SeedSequence(seed_material(*parts)))


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def power_db(x: np.ndarray) -> float:
    return 10.0 * np.log10(np.mean(np.square(x)))


# ---------------------------------------------------------------------------
# WAV IO (16-bit PCM, little-endian, mono)
# ---------------------------------------------------------------------------

def float_to_pcm16(x: np.ndarray) -> np.ndarray:
    clipped = np.clip(x, -1.0, 1.0)
    return np.round(clipped * 32767.0).astype("<i2")


def pcm16_to_float(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float64) / 32767.0


def write_wav(path, clip: AudioClip) -> None:
    pcm = float_to_pcm16(clip.samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: expected mono 16-bit PCM")
        rate = fh.getframerate()
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return AudioClip(pcm16_to_float(pcm), rate)


def resample(clip: AudioClip, new_rate: int) -> AudioClip:
    """Polyphase resampling; provided for generality, the corpus is single-rate."""
    if new_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), new_rate)
    g = np.gcd(int(new_rate), int(clip.sample_rate))
    out = resample_poly(clip.samples, new_rate // g, clip.sample_rate // g)
    return AudioClip(out, new_rate)


# ---------------------------------------------------------------------------
# STFT / mel analysis
# ---------------------------------------------------------------------------

def frame_count(n_samples: int, hop: int) -> int:
    return int(np.ceil(n_samples / hop))


def stft(x: np.ndarray, n_fft: int = 512, hop: int = 160, win_length: int = 400):
    """Tail-padded magnitude-phase STFT, frames-major [T, n_fft//2+1]."""
    t = frame_count(len(x), hop)
    needed = (t - 1) * hop + win_length
    xp = np.pad(x, (0, max(0, needed - len(x))))
    idx = np.arange(t)[:, None] * hop + np.arange(win_length)[None, :]
    window = np.hanning(win_length)
    frames = xp[idx] * window
    return np.fft.rfft(frames, n=n_fft, axis=-1)


def istft(spec: np.ndarray, n_samples: int, n_fft: int = 512, hop: int = 160,
          win_length: int = 400) -> np.ndarray:
    """Windowed overlap-add inverse of :func:`stft`, trimmed to n_samples."""
    t = spec.shape[0]
    frames = np.fft.irfft(spec, n=n_fft, axis=-1)[:, :win_length]
    window = np.hanning(win_length)
    total = (t - 1) * hop + win_length
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(t):
        lo = i * hop
        out[lo:lo + win_length] += frames[i] * window
        norm[lo:lo + win_length] += window ** 2
    # clamp relative to peak coverage: hann edges have near-zero window sum
    # and would blow up once the spectrum has been modified
    out /= np.maximum(norm, 0.01 * norm.max())
    return out[:n_samples]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, [n_mels, n_fft//2+1]."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bins)))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bins - lo) / max(ctr - lo, 1e-12)
        down = (hi - bins) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


_FB_CACHE: dict = {}


def _filterbank(sample_rate, n_fft, n_mels):
    key = (sample_rate, n_fft, n_mels)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(sample_rate, n_fft, n_mels)
    return _FB_CACHE[key]


def mel_spectrogram(clip: AudioClip, n_mels: int = 80, frame_shift_ms: float = 10.0,
                    win_ms: float = 25.0, n_fft: int = 512) -> MelSpectrogram:
    """Log-amplitude mel analysis of a clip."""
    hop = int(round(clip.sample_rate * frame_shift_ms / 1000.0))
    win = int(round(clip.sample_rate * win_ms / 1000.0))
    mag = np.abs(stft(clip.samples, n_fft=n_fft, hop=hop, win_length=win))
    mel = mag @ _filterbank(clip.sample_rate, n_fft, n_mels).T
    return MelSpectrogram(np.log(mel + MEL_FLOOR), n_mels, frame_shift_ms)


def mel_cepstra(log_mel_frames: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame."""
    return dct(log_mel_frames, type=2, norm="ortho", axis=-1)


# ---------------------------------------------------------------------------
# binary matrix format for synthesized mels
# ---------------------------------------------------------------------------

_MELB_MAGIC = b"MELB"


def write_mel_bin(path, mel: MelSpectrogram) -> None:
    """MELB container: magic, u32 version, u32 rows, u32 cols, f32-LE data."""
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MELB_MAGIC)
        np.array([1, frames.shape[0], frames.shape[1]], dtype="<u4").tofile(fh)
        fh.write(frames.tobytes())


def read_mel_bin(path, frame_shift_ms: float = 10.0) -> MelSpectrogram:
    with open(path, "rb") as fh:
        if fh.read(4) != _MELB_MAGIC:
            raise InvalidInputError(f"{path}: not a MELB file")
        version, rows, cols = np.fromfile(fh, dtype="<u4", count=3)
        if version != 1:
            raise InvalidInputError(f"{path}: unsupported MELB version {version}")
        data = np.fromfile(fh, dtype="<f4", count=rows * cols)
    return MelSpectrogram(data.reshape(rows, cols).astype(np.float64),
                          int(cols), frame_shift_ms)
