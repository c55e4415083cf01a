"""Experiment harness CLI.

Every command reads a JSON config file, honors --seed and --set overrides,
and writes its artifacts under a run directory named by the hash of the
effective config, together with a files.json manifest.  Rerunning a
completed command with the same config hash is a no-op unless --force.

Exit codes: 0 success, 1 verification failure, 2 invalid config or input
(machine-readable JSON on stderr), 3 missing checkpoint.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import dsp, evaluation, training
from .adapters import (FreezePlan, adapter_flags_for_condition,
                       count_trainable_params, group_counts,
                       plan_for_condition)
from .corpus import CorpusConfig, build_corpus, build_noise_bank, load_corpus
from .embedding import layer_weight_report, write_layer_weights_csv
from .errors import (InvalidConfigError, InvalidInputError,
                     MissingCheckpointError)
from .ssl_encoder import EncoderConfig
from .system import System, SystemConfig, load_system
from .training import RunConfig, canonical_hash
from .tts import TTSConfig

COMMANDS = ("corpus-build", "pretrain", "finetune", "synthesize", "evaluate",
            "analyze-cn", "analyze-weights", "params-count", "verify-freeze")


def _fail(code: int, kind: str, message: str, **extra):
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload), file=sys.stderr)
    raise SystemExit(code)


def _parse_set(items):
    overrides = {}
    for item in items or ():
        if "=" not in item:
            _fail(2, "invalid-config", f"--set expects key=value, got {item!r}",
                  field="--set")
        key, raw = item.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _apply_override(config: dict, dotted: str, value):
    node = config
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(args) -> dict:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            _fail(2, "invalid-config", f"config file not found: {path}",
                  field="--config")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            _fail(2, "invalid-config", f"config does not parse: {e}",
                  field="--config")
    else:
        config = {}
    for key, value in _parse_set(args.set).items():
        _apply_override(config, key, value)
    if args.seed is not None:
        config["seed"] = args.seed
    config.setdefault("seed", 0)
    return config


def _dataclass_from(config: dict, key: str, cls, defaults=None):
    known = {f.name for f in fields(cls)}
    section = dict(defaults or {})
    section.update(config.get(key, {}))
    unknown = set(section) - known
    if unknown:
        _fail(2, "invalid-config",
              f"unknown {key} field(s): {sorted(unknown)}", field=key)
    try:
        return cls(**section)
    except (TypeError, InvalidConfigError, InvalidInputError) as e:
        _fail(2, "invalid-config", f"bad {key} section: {e}", field=key)


def _system_config(config: dict) -> SystemConfig:
    section = config.get("system", {})
    enc = _dataclass_from(section, "encoder", EncoderConfig)
    tts_defaults = {"embed_dim": section.get("embed_dim", 256)}
    tts = _dataclass_from(section, "tts", TTSConfig, defaults=tts_defaults)
    try:
        return SystemConfig(
            encoder=enc, tts=tts,
            embed_dim=section.get("embed_dim", 256),
            bottleneck=section.get("bottleneck", 32),
            cnn_kernel=section.get("cnn_kernel", 2),
            se_enhancer=section.get("se_enhancer", "spectral_subtraction"))
    except InvalidConfigError as e:
        _fail(2, "invalid-config", str(e), field="system")


def _run_dir(config: dict, command: str) -> tuple[Path, str]:
    out_root = Path(config.get("out_root", "runs"))
    digest = canonical_hash({"command": command, "config": config})
    return out_root / f"{command}-{digest}", digest


def _finish_run(run_dir: Path, produced: list):
    manifest = {"files": sorted(str(p) for p in produced)}
    (run_dir / "files.json").write_text(json.dumps(manifest, indent=1))
    print(json.dumps({"run_dir": str(run_dir), "files": manifest["files"]}))


def _already_done(run_dir: Path, force: bool) -> bool:
    if force:
        return False
    if (run_dir / "files.json").exists():
        print(json.dumps({"run_dir": str(run_dir), "status": "cached"}))
        return True
    return False


def _require_corpus(config: dict):
    corpus_dir = config.get("corpus_dir")
    if not corpus_dir or not Path(corpus_dir).exists():
        _fail(2, "invalid-config",
              f"corpus_dir missing or not found: {corpus_dir}",
              field="corpus_dir")
    return load_corpus(corpus_dir)


def _load_system_or_exit(path) -> tuple[System, dict]:
    try:
        return load_system(path)
    except MissingCheckpointError as e:
        _fail(3, "missing-checkpoint", str(e), field="checkpoint")


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def cmd_corpus_build(config, args):
    run_dir, _ = _run_dir(config, "corpus-build")
    if _already_done(run_dir, args.force):
        return 0
    run_dir.mkdir(parents=True, exist_ok=True)
    corpus_cfg = _dataclass_from(config, "corpus", CorpusConfig)
    try:
        manifest = build_corpus(corpus_cfg, config["seed"])
    except InvalidConfigError as e:
        _fail(2, "invalid-config", str(e), field="corpus")
    corpus_dir = Path(config.get("corpus_dir", run_dir / "corpus"))
    from .corpus import save_corpus
    save_corpus(manifest, corpus_dir)
    _finish_run(run_dir, [corpus_dir / "manifest.jsonl",
                          corpus_dir / "corpus.json"])
    return 0


def cmd_pretrain(config, args):
    run_dir, _ = _run_dir(config, "pretrain")
    if _already_done(run_dir, args.force):
        return 0
    manifest = _require_corpus(config)
    sys_cfg = _system_config(config)
    run_cfg = _dataclass_from(config, "run", RunConfig,
                              defaults={"stage": "pretrain",
                                        "seed": config["seed"]})
    try:
        run_cfg.validate()
        result = training.pretrain(manifest, sys_cfg, run_cfg, run_dir)
    except InvalidConfigError as e:
        _fail(2, "invalid-config", str(e), field="run")
    _finish_run(run_dir, [result.checkpoint_path, result.initial_path,
                          run_dir / "runlog.jsonl"])
    return 0


def cmd_finetune(config, args):
    run_dir, _ = _run_dir(config, "finetune")
    if _already_done(run_dir, args.force):
        return 0
    manifest = _require_corpus(config)
    ckpt = config.get("pretrain_checkpoint")
    if not ckpt:
        _fail(2, "invalid-config", "finetune requires pretrain_checkpoint",
              field="pretrain_checkpoint")
    if not Path(ckpt).exists():
        _fail(3, "missing-checkpoint", f"checkpoint not found: {ckpt}",
              field="pretrain_checkpoint")
    run_cfg = _dataclass_from(config, "run", RunConfig,
                              defaults={"stage": "finetune",
                                        "seed": config["seed"],
                                        "lr_kind": "fixed",
                                        "augment_enabled": True})
    try:
        run_cfg.validate()
        result = training.finetune(manifest, ckpt, run_cfg, run_dir)
    except InvalidConfigError as e:
        _fail(2, "invalid-config", str(e), field="run")
    _finish_run(run_dir, [result.checkpoint_path, result.initial_path,
                          run_dir / "runlog.jsonl"])
    return 0


def cmd_synthesize(config, args):
    run_dir, _ = _run_dir(config, "synthesize")
    if _already_done(run_dir, args.force):
        return 0
    manifest = _require_corpus(config)
    system, _ = _load_system_or_exit(config.get("checkpoint", ""))

    by_id = {r.utterance_id: r for r in manifest.records}
    ref_key = config.get("reference_utterance")
    if config.get("reference_wav"):
        reference = dsp.read_wav(config["reference_wav"])
    elif ref_key and ref_key in by_id:
        reference = by_id[ref_key].audio
    else:
        _fail(2, "invalid-config",
              "synthesize needs reference_wav or reference_utterance",
              field="reference_utterance")
    if config.get("phonemes") is not None:
        phonemes = np.asarray(config["phonemes"], dtype=np.int64)
    elif config.get("text_utterance") in by_id:
        phonemes = by_id[config["text_utterance"]].phonemes
    else:
        _fail(2, "invalid-config",
              "synthesize needs phonemes or text_utterance", field="phonemes")

    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        mel, frames = system.synthesize(
            phonemes, reference, se_enabled=config.get("se_enabled", False))
    except InvalidInputError as e:
        _fail(2, "invalid-input", str(e))
    mel_path = run_dir / "mel.melb"
    dsp.write_mel_bin(mel_path, mel)
    dur_path = run_dir / "durations.csv"
    with open(dur_path, "w") as fh:
        fh.write("position,frames,ms\n")
        for i, f in enumerate(frames):
            fh.write(f"{i},{f},{f * manifest.config.frame_shift_ms}\n")
    _finish_run(run_dir, [mel_path, dur_path])
    return 0


def cmd_evaluate(config, args):
    run_dir, _ = _run_dir(config, "evaluate")
    if _already_done(run_dir, args.force):
        return 0
    manifest = _require_corpus(config)
    section = config.get("evaluate", {})
    model_paths = section.get("models", {})
    if not model_paths:
        _fail(2, "invalid-config", "evaluate.models must map names to checkpoints",
              field="evaluate.models")
    models = {}
    for name, path in model_paths.items():
        if path is None or not Path(path).exists():
            models[name] = None  # absent cell, run continues
        else:
            models[name], _ = _load_system_or_exit(path)

    snr_levels = tuple(section.get("snr_levels", list(evaluation.SNR_LEVELS)))
    grid = evaluation.EvalGrid(
        snr_levels=snr_levels,
        conditions=tuple(section.get("conditions",
                                     ("parallel", "non_parallel"))),
        se_modes=tuple(bool(x) for x in section.get("se_modes", (False, True))),
        models=tuple(model_paths))
    bank = build_noise_bank(
        "test", section.get("noise_seed", 4242),
        per_kind=section.get("noise_per_kind", 3),
        duration_s=section.get("noise_duration_s", 2.0),
        sample_rate=manifest.config.sample_rate)
    report = evaluation.run_grid(models, grid, manifest, bank,
                                 seed=config["seed"])
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "eval.csv"
    evaluation.write_eval_csv(out, report)
    _finish_run(run_dir, [out])
    return 0


def cmd_analyze_cn(config, args):
    run_dir, _ = _run_dir(config, "analyze-cn")
    if _already_done(run_dir, args.force):
        return 0
    manifest = _require_corpus(config)
    system, _ = _load_system_or_exit(config.get("checkpoint", ""))
    section = config.get("analyze", {})
    bank = build_noise_bank(
        "test", section.get("noise_seed", 4242),
        per_kind=section.get("noise_per_kind", 3),
        duration_s=section.get("noise_duration_s", 2.0),
        sample_rate=manifest.config.sample_rate)
    distances = evaluation.cn_analysis(
        system, manifest, bank, snr_db=section.get("snr_db", -5.0),
        seed=config["seed"], sigma_mode=section.get("sigma_mode", "std"))
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "cn_distance.csv"
    evaluation.write_cn_csv(out, distances)
    _finish_run(run_dir, [out])
    return 0


def cmd_analyze_weights(config, args):
    run_dir, _ = _run_dir(config, "analyze-weights")
    if _already_done(run_dir, args.force):
        return 0
    system, _ = _load_system_or_exit(config.get("checkpoint", ""))
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "layer_weights.csv"
    write_layer_weights_csv(out, layer_weight_report(system.extractor))
    _finish_run(run_dir, [out])
    return 0


def cmd_params_count(config, args):
    preset = config.get("preset", "desk")
    if preset == "paper":
        sys_cfg = SystemConfig.paper_scale()
    elif preset == "desk":
        sys_cfg = _system_config(config)
    else:
        _fail(2, "invalid-config", f"unknown preset {preset!r}", field="preset")
    condition = config.get("condition", "bn")
    try:
        plan = plan_for_condition(condition) if condition != "pretrained" \
            else plan_for_condition("pretrained", stage="pretrain")
        use_bn, use_cnn = adapter_flags_for_condition(condition)
    except InvalidConfigError as e:
        _fail(2, "invalid-config", str(e), field="condition")
    system = System(sys_cfg, seed=None)
    if use_bn or use_cnn:
        system.insert_adapters(use_bn, use_cnn, seed=None)
    shapes = system.param_shapes()
    result = {
        "preset": preset,
        "condition": condition,
        "trainable": count_trainable_params(shapes, plan),
        "groups": group_counts(shapes),
    }
    print(json.dumps(result, indent=1, sort_keys=True))
    return 0


def cmd_verify_freeze(config, args):
    before = config.get("before")
    after = config.get("after")
    for field_name, path in (("before", before), ("after", after)):
        if not path:
            _fail(2, "invalid-config", f"verify-freeze requires {field_name}",
                  field=field_name)
        if not Path(path).exists():
            _fail(3, "missing-checkpoint", f"checkpoint not found: {path}",
                  field=field_name)
    if "groups" in config:
        try:
            plan = FreezePlan.from_dict({g: True for g in config["groups"]})
        except InvalidConfigError as e:
            _fail(2, "invalid-config", str(e), field="groups")
    else:
        condition = config.get("condition", "no_adapters")
        try:
            plan = plan_for_condition(condition) if condition != "pretrained" \
                else plan_for_condition("pretrained", stage="pretrain")
        except InvalidConfigError as e:
            _fail(2, "invalid-config", str(e), field="condition")
    try:
        report = training.verify_freeze(before, after, plan)
    except InvalidInputError as e:
        _fail(2, "invalid-input", str(e))
    print(report.summary())
    return 0 if report.passed else 1


HANDLERS = {
    "corpus-build": cmd_corpus_build,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "analyze-cn": cmd_analyze_cn,
    "analyze-weights": cmd_analyze_weights,
    "params-count": cmd_params_count,
    "verify-freeze": cmd_verify_freeze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrtts",
        description="Noise-robust zero-shot TTS experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--force", action="store_true",
                       help="rerun even if this config hash already completed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override (JSON value)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args)
    try:
        return HANDLERS[args.command](config, args)
    except MissingCheckpointError as e:
        _fail(3, "missing-checkpoint", str(e))
    except (InvalidConfigError,) as e:
        _fail(2, "invalid-config", str(e))
    except InvalidInputError as e:
        _fail(2, "invalid-input", str(e))


if __name__ == "__main__":
    raise SystemExit(main())
