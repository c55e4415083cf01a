"""Two-stage training regimen with freeze verification and run logging.

Stage 1 (pretrain) trains the acoustic model and embedding towers on clean
speech with the encoder base frozen.  Stage 2 (finetune) starts from a
pretrain checkpoint, optionally inserts adapters, and trains only the
condition's groups while reference audio is noise-augmented on the fly;
target mels always stay the clean corpus mels.

Noise mixing is on-the-fly per step (recorded in the config as mix_mode);
each (record, step) gets its own seeded rng stream so data pipelines can
shard without coordinating.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import checkpoint as ckpt_mod
from . import nn
from .adapters import (FreezePlan, adapter_flags_for_condition, parameter_group,
                       plan_for_condition, CONDITIONS)
from .augment import AugmentPolicy
from .corpus import Manifest, NoiseBank, build_noise_bank
from .errors import InvalidConfigError, InvalidInputError
from .system import System, SystemConfig, build_system, system_from_checkpoint


@dataclass
class RunConfig:
    stage: str = "pretrain"
    steps: int = 2000
    seed: int = 0
    batch_size: int = 8
    condition: str = "pretrained"
    lr_kind: str = "warmup_inverse_sqrt"  # or "fixed"
    lr_value: float = 1e-4
    lr_warmup: int = 200
    lr_scale: float = 0.05
    augment_enabled: bool = False
    augment_probability: float = 0.5
    snr_low_db: float = -10.0
    snr_high_db: float = 20.0
    se_enabled: bool = False
    noise_seed: int = 1234
    noise_per_kind: int = 3
    noise_duration_s: float = 2.0
    mix_mode: str = "on_the_fly"
    log_every: int = 100

    def validate(self):
        if self.stage not in ("pretrain", "finetune"):
            raise InvalidConfigError(f"unknown stage {self.stage!r}")
        if self.steps < 0:
            raise InvalidConfigError("steps must be non-negative")
        if self.stage == "pretrain":
            if self.augment_enabled:
                raise InvalidConfigError(
                    "pretraining forbids augmentation; it belongs to fine-tuning")
            if self.condition != "pretrained":
                raise InvalidConfigError(
                    "pretraining takes no fine-tune condition")
        else:
            if self.condition not in CONDITIONS or self.condition == "pretrained":
                raise InvalidConfigError(
                    f"fine-tuning requires a condition from "
                    f"{sorted(set(CONDITIONS) - {'pretrained'})}")
        if self.lr_kind not in ("fixed", "warmup_inverse_sqrt"):
            raise InvalidConfigError(f"unknown lr schedule {self.lr_kind!r}")

    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.augment_probability, self.snr_low_db,
                             self.snr_high_db)


def finetune_defaults(condition: str, seed: int = 0, steps: int = 1000) -> RunConfig:
    """The searched-range default: fixed 1e-4 with augmentation on."""
    return RunConfig(stage="finetune", steps=steps, seed=seed,
                     condition=condition, lr_kind="fixed", lr_value=1e-4,
                     augment_enabled=True)


def canonical_hash(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def learning_rate(config: RunConfig, step: int) -> float:
    if config.lr_kind == "fixed":
        return config.lr_value
    s = step + 1
    return config.lr_scale * min(s ** -0.5, s * config.lr_warmup ** -1.5)


def gt_frames(record, frame_shift_ms: float) -> np.ndarray:
    return np.round(np.asarray(record.durations_ms) / frame_shift_ms).astype(np.int64)


class RunLog:
    """Append-only event log; one JSON object per line."""

    def __init__(self):
        self.events = []

    def add(self, **event):
        self.events.append(event)

    def mixes(self) -> list:
        return [m for e in self.events if e.get("event") == "step"
                for m in e.get("mixes", [])]

    def save(self, path):
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(e, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    checkpoint_path: Path
    initial_path: Path
    log: RunLog
    system: System
    config: RunConfig


def _batches(records, batch_size: int, rng: np.random.Generator):
    """Length-bucketed batches in a seeded order, cycling over epochs."""
    order = sorted(range(len(records)), key=lambda i: len(records[i].audio.samples))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    while True:
        for ci in rng.permutation(len(chunks)):
            yield [records[j] for j in chunks[ci]]


def _total_loss(losses: dict, weight: float):
    return losses["mel_l1"] + weight * losses["duration_mse"]


def evaluate_losses(system: System, records, frame_shift_ms: float) -> dict:
    """Mean teacher-forced losses over records, from clean references."""
    from . import autograd as ag
    mel_sum = dur_sum = 0.0
    with ag.no_grad():
        for r in records:
            e_a, e_d = system.training_embeddings(r.audio.samples)
            losses = system.tts.teacher_losses(
                r.phonemes, gt_frames(r, frame_shift_ms), e_a, e_d, r.mel.frames)
            mel_sum += losses["mel_l1"].item()
            dur_sum += losses["duration_mse"].item()
    n = max(1, len(records))
    return {"mel_l1": mel_sum / n, "duration_mse": dur_sum / n}


def _save_system(path, system: System, config: RunConfig, rng_state) -> None:
    header = {
        "stage": config.stage,
        "condition": config.condition,
        "seed": config.seed,
        "steps": config.steps,
        "run_config": asdict(config),
        "config_hash": canonical_hash(asdict(config)),
        "system": _jsonable(system.config.to_dict()),
        "rng_state": rng_state,
    }
    ckpt_mod.save_checkpoint(path, header, system.state_arrays())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _train_loop(system: System, manifest: Manifest, config: RunConfig,
                log: RunLog, noise_bank: NoiseBank | None,
                data_rng: np.random.Generator) -> None:
    from . import autograd as ag

    train_records = manifest.split_records("train")
    valid_records = manifest.split_records("valid")
    shift = manifest.config.frame_shift_ms
    weight = system.tts.config.duration_loss_weight
    policy = config.policy()

    opt = nn.Adam([p for _, p in system.trainable_parameters()],
                  lr=config.lr_value)

    # pretrain references are clean and the encoder is fully frozen, so the
    # layer stacks never change; cache them once
    use_cache = (config.stage == "pretrain")
    stack_cache = {}
    if use_cache:
        with ag.no_grad():
            for r in train_records:
                stack = system.encoder.forward_stack(r.audio.samples)
                stack_cache[r.utterance_id] = [t.data for t in stack]

    val = evaluate_losses(system, valid_records, shift)
    log.add(event="valid", step=0, **val)

    batch_iter = _batches(train_records, config.batch_size, data_rng)
    for step in range(config.steps):
        t0 = time.perf_counter()
        batch = next(batch_iter)
        total = None
        mel_acc = dur_acc = 0.0
        mixes = []
        for record in batch:
            if use_cache:
                e_a, e_d = system.training_embeddings_from_stack(
                    stack_cache[record.utterance_id])
            else:
                clip = record.audio
                if config.augment_enabled:
                    rng = augment_mod.record_rng(config.seed,
                                                 record.utterance_id, step)
                    clip, spec = augment_mod.apply_policy(
                        clip, policy, noise_bank, rng)
                    if spec is not None:
                        mixes.append({"utterance_id": record.utterance_id,
                                      "snr_db": spec.snr_db,
                                      "noise_id": spec.noise_id,
                                      "offset_samples": spec.offset_samples,
                                      "renorm_scale": spec.renorm_scale})
                if config.se_enabled:
                    clip = system.enhancer(clip)
                e_a, e_d = system.training_embeddings(clip.samples)
            losses = system.tts.teacher_losses(
                record.phonemes, gt_frames(record, shift), e_a, e_d,
                record.mel.frames)
            item = _total_loss(losses, weight)
            total = item if total is None else total + item
            mel_acc += losses["mel_l1"].item()
            dur_acc += losses["duration_mse"].item()
        total = total * (1.0 / len(batch))
        lr = learning_rate(config, step)
        opt.zero_grad()
        total.backward()
        opt.step(lr=lr)
        log.add(event="step", step=step, mel_l1=mel_acc / len(batch),
                duration_mse=dur_acc / len(batch), lr=lr, mixes=mixes,
                wall_s=round(time.perf_counter() - t0, 6))

    val = evaluate_losses(system, valid_records, shift)
    log.add(event="valid", step=config.steps, **val)


def pretrain(manifest: Manifest, system_config: SystemConfig,
             config: RunConfig, out_dir) -> TrainResult:
    """Stage 1: encoder frozen, TTS + embedding towers trained on clean data."""
    config.validate()
    if config.stage != "pretrain":
        raise InvalidConfigError("pretrain() called with a non-pretrain config")
    if system_config.use_bn or system_config.use_cnn:
        raise InvalidConfigError("adapters are inserted at fine-tune time")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    system = build_system(system_config, seed=config.seed)
    system.set_trainable(plan_for_condition("pretrained", stage="pretrain"))
    data_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, 0x70726574]))

    initial = out_dir / "initial.nrtc"
    _save_system(initial, system, config, rng_state=None)

    log = RunLog()
    _train_loop(system, manifest, config, log, noise_bank=None,
                data_rng=data_rng)

    final = out_dir / "checkpoint.nrtc"
    _save_system(final, system, config,
                 rng_state=_jsonable(data_rng.bit_generator.state))
    log.save(out_dir / "runlog.jsonl")
    return TrainResult(final, initial, log, system, config)


def finetune(manifest: Manifest, pretrain_ckpt, config: RunConfig,
             out_dir) -> TrainResult:
    """Stage 2: adapters per condition, augmentation on the reference path."""
    config.validate()
    if config.stage != "finetune":
        raise InvalidConfigError("finetune() called with a non-finetune config")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    header, tensors = ckpt_mod.load_checkpoint(pretrain_ckpt)
    if header.get("stage") != "pretrain":
        raise InvalidInputError("fine-tuning requires a pretrain checkpoint")
    system = system_from_checkpoint(header, tensors)

    use_bn, use_cnn = adapter_flags_for_condition(config.condition)
    if use_bn or use_cnn:
        system.insert_adapters(use_bn, use_cnn, seed=config.seed)
    system.set_trainable(plan_for_condition(config.condition))

    noise_bank = None
    if config.augment_enabled:
        noise_bank = build_noise_bank(
            "train", config.noise_seed, per_kind=config.noise_per_kind,
            duration_s=config.noise_duration_s,
            sample_rate=manifest.config.sample_rate)

    data_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, 0x66696e65]))

    initial = out_dir / "initial.nrtc"
    _save_system(initial, system, config, rng_state=None)

    log = RunLog()
    _train_loop(system, manifest, config, log, noise_bank=noise_bank,
                data_rng=data_rng)

    final = out_dir / "checkpoint.nrtc"
    _save_system(final, system, config,
                 rng_state=_jsonable(data_rng.bit_generator.state))
    log.save(out_dir / "runlog.jsonl")
    return TrainResult(final, initial, log, system, config)


# ---------------------------------------------------------------------------
# freeze verification
# ---------------------------------------------------------------------------

@dataclass
class FreezeReport:
    changed: list
    violations: list
    passed: bool

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status}: {len(self.changed)} parameter(s) changed"]
        for name in self.violations:
            lines.append(f"  frozen parameter changed: {name}")
        return "\n".join(lines)


def verify_freeze(before_ckpt, after_ckpt, plan: FreezePlan) -> FreezeReport:
    """Bitwise diff two checkpoints against a plan's trainable groups."""
    changed = ckpt_mod.diff_checkpoints(before_ckpt, after_ckpt)
    trainable = plan.trainable_groups()
    violations = [n for n in changed if parameter_group(n) not in trainable]
    return FreezeReport(changed=changed, violations=violations,
                        passed=not violations)
