"""Deterministic multi-speaker toy corpus and procedural noise clips.

Speech is rendered with a source-filter model: a harmonic source at the
speaker's base F0 (with a mild declination contour and a per-speaker
spectral rolloff), filtered through a cascade of three formant resonators
whose center frequencies come from the phoneme table scaled by the
speaker's formant shift.  Speaker identity is therefore recoverable both
from the spectrum (F0, formants, rolloff) and from rhythm (per-speaker
duration scaling), which is exactly what the two embedding roles need.

Everything is a pure function of (config, seed): building the same corpus
twice yields byte-identical manifests and PCM audio.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import dsp
from .dsp import AudioClip, MelSpectrogram, seeded_rng, seed_material
from .errors import InvalidConfigError, InvalidInputError

NOISE_REF_RMS = 0.1
NOISE_KINDS = ("tonal", "babble", "broadband")

_FORMANT_BANDWIDTHS = (90.0, 120.0, 160.0)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    f0_base: float            # Hz, in [80, 400]
    formant_shift: float      # ratio, in [0.8, 1.25]
    rhythm_scale: float       # ratio, in [0.7, 1.4]
    timbre_seed: int


@dataclass(frozen=True)
class Vocabulary:
    """Phoneme inventory: canonical durations and formant targets."""

    canonical_ms: np.ndarray      # [V]
    formants_hz: np.ndarray       # [V, 3]

    @property
    def size(self) -> int:
        return len(self.canonical_ms)


@dataclass
class UtteranceRecord:
    utterance_id: str
    speaker_id: int
    phonemes: np.ndarray
    durations_ms: np.ndarray
    audio: AudioClip
    mel: MelSpectrogram
    split: str
    synth_seed: int


@dataclass
class CorpusConfig:
    n_speakers: int = 8
    utterances_per_speaker: int = 20
    n_valid_speakers: int = 1
    n_test_speakers: int = 1
    vocab_size: int = 32
    phonemes_min: int = 3
    phonemes_max: int = 6
    sample_rate: int = 16000
    n_mels: int = 80
    frame_shift_ms: float = 10.0

    def validate(self):
        if self.n_speakers < 2:
            raise InvalidConfigError("n_speakers must be at least 2")
        if self.vocab_size < 1:
            raise InvalidConfigError("vocabulary size must be positive")
        if self.utterances_per_speaker < 2:
            raise InvalidConfigError("need at least 2 utterances per speaker")
        if self.n_valid_speakers < 1 or self.n_test_speakers < 1:
            raise InvalidConfigError("valid/test splits need at least one speaker each")
        if self.n_speakers - self.n_valid_speakers - self.n_test_speakers < 1:
            raise InvalidConfigError(
                "disjoint splits are infeasible: "
                f"{self.n_speakers} speakers cannot fill train/valid/test")


@dataclass
class Manifest:
    config: CorpusConfig
    seed: int
    vocab: Vocabulary
    profiles: dict
    records: list
    stats: dict = field(default_factory=dict)

    def split_records(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def split_speakers(self, split: str) -> set:
        return {r.speaker_id for r in self.records if r.split == split}


# ---------------------------------------------------------------------------
# deterministic generators
# ---------------------------------------------------------------------------

def make_vocabulary(seed: int, vocab_size: int) -> Vocabulary:
    rng = seeded_rng("vocab", seed)
    canonical = rng.uniform(60.0, 180.0, size=vocab_size)
    f1 = rng.uniform(300.0, 900.0, size=vocab_size)
    f2 = rng.uniform(1000.0, 2400.0, size=vocab_size)
    f3 = rng.uniform(2600.0, 3400.0, size=vocab_size)
    return Vocabulary(canonical, np.stack([f1, f2, f3], axis=1))


def speaker_profile(corpus_seed: int, speaker_id: int) -> SpeakerProfile:
    """Profile depends only on (corpus seed, speaker id)."""
    rng = seeded_rng("speaker", corpus_seed, speaker_id)
    return SpeakerProfile(
        speaker_id=speaker_id,
        f0_base=float(rng.uniform(100.0, 300.0)),
        formant_shift=float(rng.uniform(0.85, 1.2)),
        rhythm_scale=float(rng.uniform(0.75, 1.35)),
        timbre_seed=int(rng.integers(0, 2 ** 31 - 1)),
    )


def _resonator(freq: float, bw: float, sr: int):
    """Two-pole resonator normalized to unit gain at its center frequency."""
    r = np.exp(-np.pi * bw / sr)
    theta = 2.0 * np.pi * freq / sr
    b0 = (1.0 - r) * np.sqrt(1.0 - 2.0 * r * np.cos(2.0 * theta) + r * r)
    return [b0], [1.0, -2.0 * r * np.cos(theta), r * r]


def phoneme_durations(profile: SpeakerProfile, phonemes, vocab: Vocabulary,
                      frame_shift_ms: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Rhythm-scaled durations quantized to whole frames: (frames, ms)."""
    phonemes = np.asarray(phonemes, dtype=np.int64)
    scaled = vocab.canonical_ms[phonemes] * profile.rhythm_scale
    frames = np.maximum(1, np.round(scaled / frame_shift_ms)).astype(np.int64)
    return frames, frames * frame_shift_ms


def synthesize_utterance(profile: SpeakerProfile, phonemes, seed: int,
                         vocab: Vocabulary, sample_rate: int = 16000,
                         frame_shift_ms: float = 10.0, n_mels: int = 80,
                         ) -> tuple[AudioClip, np.ndarray, MelSpectrogram]:
    """Render one utterance; returns (audio, durations_ms, analysis mel).

    The audio is quantized through 16-bit PCM before being returned so the
    in-memory clip equals its on-disk WAV bit for bit.
    """
    phonemes = np.asarray(phonemes, dtype=np.int64)
    if phonemes.size == 0:
        raise InvalidInputError("phoneme sequence must be non-empty")
    if np.any(phonemes < 0) or np.any(phonemes >= vocab.size):
        raise InvalidInputError("phoneme id outside vocabulary")

    hop = int(round(sample_rate * frame_shift_ms / 1000.0))
    frames, durations_ms = phoneme_durations(profile, phonemes, vocab, frame_shift_ms)
    seg_samples = frames * hop
    n_total = int(seg_samples.sum())

    timbre = seeded_rng("timbre", profile.timbre_seed)
    rolloff = timbre.uniform(0.8, 1.3)

    # harmonic source with a gentle F0 declination over the utterance
    progress = np.arange(n_total) / max(n_total - 1, 1)
    f0_track = profile.f0_base * (1.04 - 0.08 * progress)
    phase = 2.0 * np.pi * np.cumsum(f0_track) / sample_rate
    n_harm = max(2, int(0.45 * sample_rate / (profile.f0_base * 1.04)))
    n_harm = min(n_harm, 30)
    source = np.zeros(n_total)
    for h in range(1, n_harm + 1):
        source += (h ** -rolloff) * np.sin(h * phase)

    noise_rng = seeded_rng("utt-noise", profile.timbre_seed, seed, *phonemes.tolist())
    source += 0.08 * dsp.rms(source) * noise_rng.standard_normal(n_total)

    # per-phoneme formant cascade with short edge fades against clicks
    out = np.zeros(n_total)
    fade = max(1, int(0.002 * sample_rate))
    offsets = np.concatenate([[0], np.cumsum(seg_samples)])
    for i, ph in enumerate(phonemes):
        lo, hi = offsets[i], offsets[i + 1]
        seg = source[lo:hi]
        for freq, bw in zip(vocab.formants_hz[ph] * profile.formant_shift,
                            _FORMANT_BANDWIDTHS):
            freq = min(freq, 0.45 * sample_rate)
            b, a = _resonator(freq, bw, sample_rate)
            seg = lfilter(b, a, seg)
        n = len(seg)
        env = np.ones(n)
        edge = min(fade, n // 2)
        if edge > 0:
            env[:edge] = np.linspace(0.0, 1.0, edge)
            env[-edge:] = np.linspace(1.0, 0.0, edge)
        out[lo:hi] = seg * env

    level = dsp.rms(out)
    if level > 0:
        out *= 0.15 / level
    peak = np.max(np.abs(out))
    if peak > 0.95:
        out *= 0.95 / peak

    canonical = dsp.pcm16_to_float(dsp.float_to_pcm16(out))
    audio = AudioClip(canonical, sample_rate)
    mel = dsp.mel_spectrogram(audio, n_mels=n_mels, frame_shift_ms=frame_shift_ms)
    return audio, durations_ms.astype(np.float64), mel


def generate_noise(kind: str, duration_s: float, seed: int,
                   sample_rate: int = 16000) -> AudioClip:
    """Procedural noise clip, RMS-normalized to the bank reference level."""
    if kind not in NOISE_KINDS:
        raise InvalidInputError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if duration_s <= 0:
        raise InvalidInputError("duration_s must be positive")
    n = int(round(duration_s * sample_rate))
    rng = seeded_rng("noise", kind, seed)

    if kind == "broadband":
        x = rng.standard_normal(n)
    elif kind == "tonal":
        t = np.arange(n) / sample_rate
        x = np.zeros(n)
        for _ in range(4):
            freq = np.exp(rng.uniform(np.log(100.0), np.log(3000.0)))
            am_rate = rng.uniform(0.3, 1.5)
            am_phase = rng.uniform(0.0, 2.0 * np.pi)
            ph = rng.uniform(0.0, 2.0 * np.pi)
            env = 0.6 + 0.4 * np.sin(2.0 * np.pi * am_rate * t + am_phase)
            x += env * np.sin(2.0 * np.pi * freq * t + ph)
    else:  # babble: a few overlapped toy voices
        vocab = make_vocabulary(int(rng.integers(2 ** 31)), 16)
        x = np.zeros(n)
        for v in range(4):
            prof = SpeakerProfile(
                speaker_id=-1,
                f0_base=float(rng.uniform(100.0, 300.0)),
                formant_shift=float(rng.uniform(0.85, 1.2)),
                rhythm_scale=float(rng.uniform(0.75, 1.35)),
                timbre_seed=int(rng.integers(2 ** 31)),
            )
            voice = np.zeros(0)
            k = 0
            while len(voice) < n + sample_rate // 2:
                phs = rng.integers(0, 16, size=8)
                clip, _, _ = synthesize_utterance(
                    prof, phs, seed=int(rng.integers(2 ** 31)), vocab=vocab,
                    sample_rate=sample_rate)
                voice = np.concatenate([voice, clip.samples])
                k += 1
            offset = int(rng.integers(0, max(1, len(voice) - n)))
            x += voice[offset:offset + n]

    x = x * (NOISE_REF_RMS / dsp.rms(x))
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
        x = x * (NOISE_REF_RMS / dsp.rms(x))
        x = np.clip(x, -1.0, 1.0)
    return AudioClip(x, sample_rate)


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------

def build_corpus(config: CorpusConfig, seed: int) -> Manifest:
    """Build the full toy corpus in memory, deterministically."""
    config.validate()
    vocab = make_vocabulary(seed, config.vocab_size)
    profiles = {sid: speaker_profile(seed, sid) for sid in range(config.n_speakers)}

    order = seeded_rng("splits", seed).permutation(config.n_speakers)
    split_of = {}
    for pos, sid in enumerate(order):
        if pos < config.n_test_speakers:
            split_of[int(sid)] = "test"
        elif pos < config.n_test_speakers + config.n_valid_speakers:
            split_of[int(sid)] = "valid"
        else:
            split_of[int(sid)] = "train"

    records = []
    for sid in range(config.n_speakers):
        for k in range(config.utterances_per_speaker):
            content_rng = seeded_rng("content", seed, sid, k)
            length = int(content_rng.integers(config.phonemes_min,
                                              config.phonemes_max + 1))
            phonemes = content_rng.integers(0, config.vocab_size, size=length)
            synth_seed = seed_material("utt", seed, sid, k)[0]
            audio, durations_ms, mel = synthesize_utterance(
                profiles[sid], phonemes, synth_seed, vocab,
                sample_rate=config.sample_rate,
                frame_shift_ms=config.frame_shift_ms, n_mels=config.n_mels)
            records.append(UtteranceRecord(
                utterance_id=f"spk{sid:03d}_utt{k:03d}",
                speaker_id=sid,
                phonemes=np.asarray(phonemes, dtype=np.int64),
                durations_ms=durations_ms,
                audio=audio,
                mel=mel,
                split=split_of[sid],
                synth_seed=synth_seed))

    manifest = Manifest(config=config, seed=seed, vocab=vocab,
                        profiles=profiles, records=records)
    assert_zero_shot_splits(manifest)
    manifest.stats["separability_ratio"] = speaker_separability(manifest)
    return manifest


def assert_zero_shot_splits(manifest: Manifest) -> None:
    train = manifest.split_speakers("train")
    valid = manifest.split_speakers("valid")
    test = manifest.split_speakers("test")
    if train & valid or train & test or valid & test:
        raise InvalidConfigError("speaker sets overlap across splits")


def speaker_separability(manifest: Manifest) -> float:
    """Ratio of mean between-speaker to within-speaker mel distance."""
    means = np.stack([r.mel.frames.mean(axis=0) for r in manifest.records])
    speakers = np.array([r.speaker_id for r in manifest.records])
    d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    same = speakers[:, None] == speakers[None, :]
    off_diag = ~np.eye(len(means), dtype=bool)
    within = d[same & off_diag].mean()
    between = d[~same].mean()
    return float(between / max(within, 1e-12))


def regenerate_audio(manifest: Manifest, record: UtteranceRecord) -> AudioClip:
    """Re-render a record from (profile, phonemes, seed); bit-equal to stored."""
    audio, _, _ = synthesize_utterance(
        manifest.profiles[record.speaker_id], record.phonemes, record.synth_seed,
        manifest.vocab, sample_rate=manifest.config.sample_rate,
        frame_shift_ms=manifest.config.frame_shift_ms,
        n_mels=manifest.config.n_mels)
    return audio


# ---------------------------------------------------------------------------
# persistence: JSONL manifest + PCM16 WAV files
# ---------------------------------------------------------------------------

def manifest_lines(manifest: Manifest) -> list[str]:
    lines = []
    for r in manifest.records:
        lines.append(json.dumps({
            "utterance_id": r.utterance_id,
            "speaker_id": r.speaker_id,
            "split": r.split,
            "phonemes": r.phonemes.tolist(),
            "durations_ms": r.durations_ms.tolist(),
            "audio_path": f"audio/{r.utterance_id}.wav",
            "synth_seed": r.synth_seed,
        }, sort_keys=True))
    return lines


def save_corpus(manifest: Manifest, out_dir) -> None:
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    for r in manifest.records:
        dsp.write_wav(out_dir / "audio" / f"{r.utterance_id}.wav", r.audio)
    (out_dir / "manifest.jsonl").write_text("\n".join(manifest_lines(manifest)) + "\n")
    header = {
        "config": asdict(manifest.config),
        "seed": manifest.seed,
        "stats": manifest.stats,
        "vocab": {
            "canonical_ms": manifest.vocab.canonical_ms.tolist(),
            "formants_hz": manifest.vocab.formants_hz.tolist(),
        },
        "profiles": {str(sid): asdict(p) for sid, p in manifest.profiles.items()},
    }
    (out_dir / "corpus.json").write_text(json.dumps(header, sort_keys=True, indent=1))


def load_corpus(corpus_dir) -> Manifest:
    corpus_dir = Path(corpus_dir)
    header = json.loads((corpus_dir / "corpus.json").read_text())
    config = CorpusConfig(**header["config"])
    vocab = Vocabulary(np.asarray(header["vocab"]["canonical_ms"]),
                       np.asarray(header["vocab"]["formants_hz"]))
    profiles = {int(sid): SpeakerProfile(**p)
                for sid, p in header["profiles"].items()}
    records = []
    for line in (corpus_dir / "manifest.jsonl").read_text().splitlines():
        rec = json.loads(line)
        audio = dsp.read_wav(corpus_dir / rec["audio_path"])
        mel = dsp.mel_spectrogram(audio, n_mels=config.n_mels,
                                  frame_shift_ms=config.frame_shift_ms)
        records.append(UtteranceRecord(
            utterance_id=rec["utterance_id"],
            speaker_id=rec["speaker_id"],
            phonemes=np.asarray(rec["phonemes"], dtype=np.int64),
            durations_ms=np.asarray(rec["durations_ms"]),
            audio=audio,
            mel=mel,
            split=rec["split"],
            synth_seed=rec["synth_seed"]))
    return Manifest(config=config, seed=header["seed"], vocab=vocab,
                    profiles=profiles, records=records, stats=header["stats"])


# ---------------------------------------------------------------------------
# noise bank
# ---------------------------------------------------------------------------

class NoiseBank:
    """Named collection of noise clips; train/test banks use disjoint seeds."""

    def __init__(self, clips: dict):
        if not clips:
            raise InvalidConfigError("noise bank cannot be empty")
        self.clips = clips
        self.ids = sorted(clips)

    def __len__(self):
        return len(self.ids)

    def get(self, noise_id: str) -> AudioClip:
        return self.clips[noise_id]

    def sample(self, rng: np.random.Generator) -> tuple[str, AudioClip]:
        noise_id = self.ids[int(rng.integers(len(self.ids)))]
        return noise_id, self.clips[noise_id]


def build_noise_bank(domain: str, seed: int, per_kind: int = 4,
                     duration_s: float = 2.0, sample_rate: int = 16000,
                     kinds=NOISE_KINDS) -> NoiseBank:
    clips = {}
    for kind in kinds:
        for i in range(per_kind):
            clip_seed = seed_material("bank", seed, domain, kind, i)[0]
            clips[f"{kind}-{domain}-{i:02d}"] = generate_noise(
                kind, duration_s, clip_seed, sample_rate)
    return NoiseBank(clips)
