"""Objective metrics and the Table-1-shaped evaluation grid.

MCD is computed without any time alignment search: evaluation renders the
mel at the reference's original phoneme durations (teacher-forced length
regulation), so generated and target frames correspond one to one.  Mel
frames are converted to cepstra with an orthonormal DCT; coefficient 0
(energy) is excluded and the first 24 coefficients enter the distance.

CN distance compares per-layer representations of clean and noisy inputs
after per-dimension standardization.  Statistics are computed corpus-level
over the clean test set; sigma is interpreted as standard deviation by
default (a "variance" mode is selectable for the alternative reading).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import augment as augment_mod
from . import dsp
from .augment import MixSpec
from .corpus import Manifest, NoiseBank
from .dsp import AudioClip, MelSpectrogram, seeded_rng
from .errors import InvalidConfigError, InvalidInputError
from .ssl_encoder import LayerStack
from .training import gt_frames

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)
SNR_LEVELS = ("clean", 20.0, 10.0, 0.0, -5.0)
MODEL_ORDER = ("pretrained", "whole_ft", "no_adapters", "bn", "cnn", "bn_cnn")


def mcd(generated: MelSpectrogram, reference: MelSpectrogram,
        n_coeffs: int = 24) -> float:
    """Mel-cepstral distortion in dB over aligned frames (no DTW)."""
    if generated.frames.shape != reference.frames.shape:
        raise InvalidInputError(
            f"frame mismatch: generated {generated.frames.shape} vs "
            f"reference {reference.frames.shape}; evaluation requires "
            "teacher-forced alignment")
    c_gen = dsp.mel_cepstra(generated.frames)[:, 1:n_coeffs + 1]
    c_ref = dsp.mel_cepstra(reference.frames)[:, 1:n_coeffs + 1]
    dist = np.linalg.norm(c_gen - c_ref, axis=1)
    return float(MCD_CONST * dist.mean())


def duration_rmse(predicted_frames, reference_frames,
                  frame_shift_ms: float = 10.0) -> float:
    """RMSE of per-phoneme durations, in milliseconds."""
    predicted = np.asarray(predicted_frames, dtype=np.float64)
    reference = np.asarray(reference_frames, dtype=np.float64)
    if predicted.shape != reference.shape:
        raise InvalidInputError(
            f"length mismatch: {predicted.shape} vs {reference.shape}")
    err_ms = (predicted - reference) * frame_shift_ms
    return float(np.sqrt(np.mean(err_ms ** 2)))


# ---------------------------------------------------------------------------
# CN distance
# ---------------------------------------------------------------------------

@dataclass
class CNDistanceReport:
    d: np.ndarray       # [L+1]
    mu: np.ndarray      # [L+1, D]
    sigma: np.ndarray   # [L+1, D]
    frames: int


def layer_stats(stacks, sigma_mode: str = "std") -> tuple[np.ndarray, np.ndarray]:
    """Per-layer (mu, sigma) over all frames of the given stacks."""
    if sigma_mode not in ("std", "var"):
        raise InvalidConfigError("sigma_mode must be 'std' or 'var'")
    frames = np.concatenate([s.layers for s in stacks], axis=1)  # [L+1, sumT, D]
    mu = frames.mean(axis=1)
    var = frames.var(axis=1)
    sigma = var if sigma_mode == "var" else np.sqrt(var)
    return mu, np.maximum(sigma, 1e-8)


def cn_distance(stack_clean: LayerStack, stack_noisy: LayerStack,
                stats: tuple[np.ndarray, np.ndarray]) -> CNDistanceReport:
    """Mean squared distance between standardized clean/noisy representations."""
    zc, zn = stack_clean.layers, stack_noisy.layers
    if zc.shape != zn.shape:
        raise InvalidInputError(f"stack shapes differ: {zc.shape} vs {zn.shape}")
    mu, sigma = stats
    if mu.shape != (zc.shape[0], zc.shape[2]) or sigma.shape != mu.shape:
        raise InvalidInputError("stats do not match the stack layout")
    sigma = np.maximum(sigma, 1e-8)
    gc = (zc - mu[:, None, :]) / sigma[:, None, :]
    gn = (zn - mu[:, None, :]) / sigma[:, None, :]
    d = ((gc - gn) ** 2).sum(axis=2).mean(axis=1)
    return CNDistanceReport(d=d, mu=mu, sigma=sigma, frames=zc.shape[1])


def cn_analysis(system, manifest: Manifest, noise_bank: NoiseBank,
                snr_db: float = -5.0, seed: int = 0,
                sigma_mode: str = "std") -> np.ndarray:
    """Average CN distance per layer over the test split at one SNR."""
    records = manifest.split_records("test")
    if not records:
        raise InvalidInputError("manifest has no test split")
    clean_stacks = [system.encoder.extract_features(r.audio) for r in records]
    stats = layer_stats(clean_stacks, sigma_mode)
    total = None
    for r, clean_stack in zip(records, clean_stacks):
        noisy = _noisy_reference(r.audio, r.utterance_id, snr_db,
                                 noise_bank, seed)
        noisy_stack = system.encoder.extract_features(noisy)
        report = cn_distance(clean_stack, noisy_stack, stats)
        total = report.d if total is None else total + report.d
    return total / len(records)


# ---------------------------------------------------------------------------
# the evaluation grid
# ---------------------------------------------------------------------------

@dataclass
class EvalGrid:
    snr_levels: tuple = SNR_LEVELS
    conditions: tuple = ("parallel", "non_parallel")
    se_modes: tuple = (False, True)
    models: tuple = MODEL_ORDER


@dataclass
class EvalCell:
    model: str
    se: bool
    condition: str
    snr: object
    mcd_db: float
    dur_rmse_ms: float
    n_utterances: int


@dataclass
class EvalReport:
    cells: list = field(default_factory=list)

    def cell(self, model, se, condition, snr) -> EvalCell:
        for c in self.cells:
            if (c.model, c.se, c.condition, _snr_key(c.snr)) == \
                    (model, se, condition, _snr_key(snr)):
                return c
        raise KeyError((model, se, condition, snr))


def _snr_key(snr) -> str:
    if isinstance(snr, str):
        return snr
    return str(int(snr)) if float(snr).is_integer() else str(snr)


def _noisy_reference(clip: AudioClip, utt_id: str, snr, noise_bank: NoiseBank,
                     seed: int) -> AudioClip:
    """Deterministic noisy version of a reference clip for one grid SNR."""
    if isinstance(snr, str) and snr == "clean":
        return clip
    rng = seeded_rng("eval-noise", seed, utt_id, _snr_key(snr))
    noise_id, noise = noise_bank.sample(rng)
    slack = max(1, len(noise.samples) - len(clip.samples))
    offset = int(rng.integers(0, slack))
    spec = MixSpec(snr_db=float(snr), noise_id=noise_id, offset_samples=offset)
    return augment_mod.mix_at_snr(clip, noise, spec)


def pick_references(manifest: Manifest, seed: int) -> dict:
    """One reference utterance per test speaker (seeded), for non-parallel."""
    refs = {}
    for sid in sorted(manifest.split_speakers("test")):
        candidates = [r for r in manifest.split_records("test")
                      if r.speaker_id == sid]
        rng = seeded_rng("eval-ref", seed, sid)
        refs[sid] = candidates[int(rng.integers(len(candidates)))]
    return refs


def run_grid(models: dict, grid: EvalGrid, manifest: Manifest,
             noise_bank: NoiseBank, seed: int = 0) -> EvalReport:
    """Fill every grid cell; missing models yield absent (n=0) cells."""
    test_records = manifest.split_records("test")
    if not test_records:
        raise InvalidInputError("manifest has no test split")
    shift = manifest.config.frame_shift_ms
    refs = pick_references(manifest, seed)

    report = EvalReport()
    for model_name in grid.models:
        system = models.get(model_name)
        for snr in grid.snr_levels:
            for se in grid.se_modes:
                for condition in grid.conditions:
                    if system is None:
                        report.cells.append(EvalCell(
                            model_name, se, condition, snr,
                            math.nan, math.nan, 0))
                        continue
                    mcds, rmses = [], []
                    for record in test_records:
                        if condition == "parallel":
                            reference = record
                        else:
                            reference = refs[record.speaker_id]
                            if reference.utterance_id == record.utterance_id:
                                continue  # content would coincide
                        ref_clip = _noisy_reference(
                            reference.audio, reference.utterance_id, snr,
                            noise_bank, seed)
                        frames = gt_frames(record, shift)
                        mel, predicted = system.synthesize(
                            record.phonemes, ref_clip, se_enabled=se,
                            forced_durations=frames)
                        mcds.append(mcd(mel, record.mel))
                        rmses.append(duration_rmse(predicted, frames, shift))
                    report.cells.append(EvalCell(
                        model_name, se, condition, snr,
                        float(np.mean(mcds)), float(np.mean(rmses)),
                        len(mcds)))
    return report


# ---------------------------------------------------------------------------
# CSV emission (schema-checked)
# ---------------------------------------------------------------------------

EVAL_COLUMNS = ("model", "se", "condition", "snr", "mcd_db", "dur_rmse_ms", "n")


def _check_row(row: dict) -> None:
    if set(row) != set(EVAL_COLUMNS):
        raise InvalidInputError(f"eval row has wrong columns: {sorted(row)}")
    if row["se"] not in ("on", "off"):
        raise InvalidInputError(f"bad se flag {row['se']!r}")
    if row["condition"] not in ("parallel", "non_parallel"):
        raise InvalidInputError(f"bad condition {row['condition']!r}")
    int(row["n"])


def report_rows(report: EvalReport) -> list:
    rows = []
    for c in report.cells:
        rows.append({
            "model": c.model,
            "se": "on" if c.se else "off",
            "condition": c.condition,
            "snr": _snr_key(c.snr),
            "mcd_db": "" if math.isnan(c.mcd_db) else repr(round(c.mcd_db, 6)),
            "dur_rmse_ms": "" if math.isnan(c.dur_rmse_ms)
                           else repr(round(c.dur_rmse_ms, 6)),
            "n": str(c.n_utterances),
        })
    return rows


def write_eval_csv(path, report: EvalReport) -> None:
    rows = report_rows(report)
    for row in rows:
        _check_row(row)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def read_eval_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cn_csv(path, distances: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "d_l"])
        for layer, d in enumerate(distances):
            if d < 0:
                raise InvalidInputError("CN distance cannot be negative")
            writer.writerow([layer, repr(float(d))])
