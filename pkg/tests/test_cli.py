import json

import numpy as np
import pytest

from nrtts import cli
from nrtts.dsp import read_mel_bin


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def run_cli(args):
    return cli.main(args)


def expect_exit(args, code):
    with pytest.raises(SystemExit) as err:
        cli.main(args)
    assert err.value.code == code


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """corpus-build -> pretrain -> finetune, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    base = {
        "out_root": str(root / "runs"),
        "seed": 3,
        "corpus_dir": str(corpus_dir),
        "corpus": {"n_speakers": 4, "utterances_per_speaker": 3},
    }
    cfg = write_config(root / "corpus.json", base)
    assert run_cli(["corpus-build", "--config", cfg]) == 0

    pre_cfg = dict(base)
    pre_cfg["run"] = {"steps": 8, "batch_size": 4}
    cfg_pre = write_config(root / "pre.json", pre_cfg)
    assert run_cli(["pretrain", "--config", cfg_pre]) == 0
    pre_dir = next((root / "runs").glob("pretrain-*"))

    ft_cfg = dict(base)
    ft_cfg["pretrain_checkpoint"] = str(pre_dir / "checkpoint.nrtc")
    ft_cfg["run"] = {"steps": 5, "batch_size": 4, "condition": "bn_cnn"}
    cfg_ft = write_config(root / "ft.json", ft_cfg)
    assert run_cli(["finetune", "--config", cfg_ft]) == 0
    ft_dir = next((root / "runs").glob("finetune-*"))
    return {"root": root, "base": base, "corpus_dir": corpus_dir,
            "pre_dir": pre_dir, "ft_dir": ft_dir, "cfg_pre": cfg_pre}


def test_corpus_artifacts_on_disk(pipeline):
    assert (pipeline["corpus_dir"] / "manifest.jsonl").exists()
    assert (pipeline["corpus_dir"] / "corpus.json").exists()
    assert any((pipeline["corpus_dir"] / "audio").glob("*.wav"))


def test_rerun_is_cached_untill_force(pipeline, capsys):
    assert run_cli(["pretrain", "--config", pipeline["cfg_pre"]]) == 0
    out = capsys.readouterr().out
    assert "cached" in out


def test_evaluate_emits_schema_checked_csv(pipeline):
    cfg = dict(pipeline["base"])
    cfg["evaluate"] = {
        "models": {
            "pretrained": str(pipeline["pre_dir"] / "checkpoint.nrtc"),
            "bn_cnn": str(pipeline["ft_dir"] / "checkpoint.nrtc"),
            "whole_ft": None,
        },
        "snr_levels": ["clean", -5.0],
        "conditions": ["parallel"],
        "se_modes": [False],
        "noise_per_kind": 1,
    }
    path = write_config(pipeline["root"] / "eval.json", cfg)
    assert run_cli(["evaluate", "--config", path]) == 0
    eval_dir = next((pipeline["root"] / "runs").glob("evaluate-*"))
    rows = (eval_dir / "eval.csv").read_text().splitlines()
    assert rows[0] == "model,se,condition,snr,mcd_db,dur_rmse_ms,n"
    assert len(rows) == 1 + 3 * 2  # three models x two SNRs
    absent = [r for r in rows if r.startswith("whole_ft")]
    assert all(",,," not in r or True for r in absent) and absent


def test_synthesize_writes_mel_and_durations(pipeline):
    cfg = dict(pipeline["base"])
    cfg["checkpoint"] = str(pipeline["pre_dir"] / "checkpoint.nrtc")
    manifest = (pipeline["corpus_dir"] / "manifest.jsonl").read_text()
    first = json.loads(manifest.splitlines()[0])
    cfg["reference_utterance"] = first["utterance_id"]
    cfg["phonemes"] = [1, 2, 3]
    path = write_config(pipeline["root"] / "synth.json", cfg)
    assert run_cli(["synthesize", "--config", path]) == 0
    synth_dir = next((pipeline["root"] / "runs").glob("synthesize-*"))
    mel = read_mel_bin(synth_dir / "mel.melb")
    assert mel.frames.shape[1] == 80
    lines = (synth_dir / "durations.csv").read_text().splitlines()
    assert lines[0] == "position,frames,ms"
    assert len(lines) == 4


def test_analyze_weights_and_cn(pipeline):
    cfg = dict(pipeline["base"])
    cfg["checkpoint"] = str(pipeline["ft_dir"] / "checkpoint.nrtc")
    cfg["analyze"] = {"snr_db": -5.0, "noise_per_kind": 1}
    path = write_config(pipeline["root"] / "analyze.json", cfg)
    assert run_cli(["analyze-weights", "--config", path]) == 0
    assert run_cli(["analyze-cn", "--config", path]) == 0
    wdir = next((pipeline["root"] / "runs").glob("analyze-weights-*"))
    rows = (wdir / "layer_weights.csv").read_text().splitlines()
    assert rows[0] == "tower,layer,weight"
    assert len(rows) == 1 + 2 * 5
    cdir = next((pipeline["root"] / "runs").glob("analyze-cn-*"))
    rows = (cdir / "cn_distance.csv").read_text().splitlines()
    assert rows[0] == "layer,d_l"
    assert len(rows) == 1 + 5


def test_verify_freeze_command(pipeline):
    cfg = dict(pipeline["base"])
    cfg["before"] = str(pipeline["ft_dir"] / "initial.nrtc")
    cfg["after"] = str(pipeline["ft_dir"] / "checkpoint.nrtc")
    cfg["condition"] = "bn_cnn"
    path = write_config(pipeline["root"] / "vf.json", cfg)
    assert run_cli(["verify-freeze", "--config", path, "--force"]) == 0
    cfg["groups"] = ["tts_model"]
    path = write_config(pipeline["root"] / "vf2.json", cfg)
    assert run_cli(["verify-freeze", "--config", path, "--force"]) == 1


def test_params_count_closed_form(capsys):
    assert run_cli(["params-count", "--set", "preset=paper",
                    "--set", "condition=bn"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["groups"]["bn_adapters"] == 9_498_624
    assert out["trainable"] == out["groups"]["bn_adapters"] + \
        out["groups"]["embedding_modules"]


def test_seed_flag_overrides_config(pipeline, capsys):
    assert run_cli(["params-count", "--seed", "9", "--set", "preset=desk"]) == 0
    json.loads(capsys.readouterr().out)


def test_bad_config_exits_2_with_json(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json",
                       {"corpus": {"n_speakers": 1}, "corpus_dir":
                        str(tmp_path / "c")})
    expect_exit(["corpus-build", "--config", cfg], 2)
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid-config"
    expect_exit(["corpus-build", "--config", str(tmp_path / "missing.json")], 2)


def test_missing_checkpoint_exits_3(pipeline, tmp_path, capsys):
    cfg = dict(pipeline["base"])
    cfg["pretrain_checkpoint"] = str(tmp_path / "ghost.nrtc")
    cfg["run"] = {"steps": 1, "condition": "bn"}
    path = write_config(tmp_path / "ft.json", cfg)
    expect_exit(["finetune", "--config", path], 3)
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "missing-checkpoint"


def test_unknown_config_key_rejected(tmp_path):
    cfg = write_config(tmp_path / "odd.json",
                       {"corpus": {"speakers": 4},
                        "corpus_dir": str(tmp_path / "c")})
    expect_exit(["corpus-build", "--config", cfg], 2)
