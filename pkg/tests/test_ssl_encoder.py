import numpy as np
import pytest

from nrtts import nn
from nrtts.adapters import FreezePlan, plan_for_condition
from nrtts.dsp import AudioClip, seeded_rng
from nrtts.errors import InvalidConfigError, InvalidInputError
from nrtts.ssl_encoder import (EncoderConfig, SSLEncoder, masked_pretrain,
                               masked_step_loss, MaskedPredictor)
from nrtts.system import System, SystemConfig


def clip_of(seconds=1.0, seed=0, sr=16000):
    rng = np.random.default_rng(seed)
    return AudioClip(rng.uniform(-0.5, 0.5, int(seconds * sr)), sr)


def test_stack_shape_contract():
    config = EncoderConfig()
    encoder = SSLEncoder(config, seeded_rng("e", 0))
    stack = encoder.extract_features(clip_of(1.0))
    assert stack.n_layers == config.n_transformer_layers + 1
    t = config.frames_for(16000)
    assert stack.layers.shape == (5, t, config.model_dim)
    assert stack.frame_rate == pytest.approx(16000 / config.total_stride)


def test_too_short_audio_rejected_with_minimum_in_message():
    config = EncoderConfig()
    encoder = SSLEncoder(config, seeded_rng("e", 1))
    with pytest.raises(InvalidInputError) as err:
        encoder.extract_features(AudioClip(np.zeros(1), 16000))
    assert str(config.min_samples) in str(err.value)


def test_deterministic_inference():
    encoder = SSLEncoder(EncoderConfig(), seeded_rng("e", 2))
    clip = clip_of(0.5, seed=1)
    a = encoder.extract_features(clip)
    b = encoder.extract_features(clip)
    np.testing.assert_array_equal(a.layers, b.layers)


def test_freeze_all_keeps_weights_bit_identical():
    system = System(SystemConfig(), seed=5)
    system.set_trainable(FreezePlan(embedding_modules=True, tts_model=True))
    before = {n: p.data.copy() for n, p in system.encoder.base_parameters()}
    opt = nn.Adam([p for _, p in system.trainable_parameters()], lr=1e-3)
    clip = clip_of(0.4, seed=2)
    for _ in range(5):
        e_a, e_d = system.training_embeddings(clip.samples)
        loss = (e_a * e_a).sum() + (e_d * e_d).sum()
        opt.zero_grad()
        loss.backward()
        opt.step()
    for n, p in system.encoder.base_parameters():
        np.testing.assert_array_equal(p.data, before[n])


def test_adapters_only_plan_trains_adapters_not_base():
    system = System(SystemConfig(), seed=6)
    system.insert_adapters(use_bn=True, use_cnn=True, seed=6)
    system.set_trainable(plan_for_condition("bn_cnn"))
    base_before = {n: p.data.copy() for n, p in system.encoder.base_parameters()}
    ad_before = {n: p.data.copy() for n, p in system.encoder.adapter_parameters()}
    opt = nn.Adam([p for _, p in system.trainable_parameters()], lr=1e-2)
    clip = clip_of(0.4, seed=3)
    for _ in range(3):
        e_a, e_d = system.training_embeddings(clip.samples)
        loss = (e_a * e_a).sum() + (e_d * e_d).sum()
        opt.zero_grad()
        loss.backward()
        opt.step()
    for n, p in system.encoder.base_parameters():
        np.testing.assert_array_equal(p.data, base_before[n])
    changed = [n for n, p in system.encoder.adapter_parameters()
               if not np.array_equal(p.data, ad_before[n])]
    assert changed  # gradients reached the adapters through the frozen base


def test_unknown_group_rejected():
    with pytest.raises(InvalidConfigError):
        FreezePlan.from_dict({"decoder": True})


def test_gradient_flows_through_frozen_base():
    # finite perturbation of a frozen base weight changes the loss even
    # though no update is ever applied to it
    system = System(SystemConfig(), seed=7)
    system.insert_adapters(use_bn=True, use_cnn=False, seed=7)
    system.set_trainable(plan_for_condition("bn"))
    clip = clip_of(0.3, seed=4)

    def loss_value():
        e_a, _ = system.training_embeddings(clip.samples)
        return float((e_a * e_a).sum().item())

    base = loss_value()
    p = dict(system.encoder.base_parameters())["encoder/layers/0/ffn/lin1/w"]
    assert not p.requires_grad
    p.data[0, 0] += 0.05
    assert loss_value() != pytest.approx(base, abs=1e-12)
    p.data[0, 0] -= 0.05


# -- masked pretrain ----------------------------------------------------------

def test_masked_pretrain_zero_steps_is_identity(tiny_manifest):
    encoder = SSLEncoder(EncoderConfig(), seeded_rng("e", 8))
    before = {n: p.data.copy() for n, p in encoder.named_parameters()}
    masked_pretrain(encoder, tiny_manifest.records, steps=0, seed=0)
    for n, p in encoder.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])
    with pytest.raises(InvalidInputError):
        masked_pretrain(encoder, tiny_manifest.records, steps=-1, seed=0)


def test_masked_fraction_statistic():
    config = EncoderConfig()
    encoder = SSLEncoder(config, seeded_rng("e", 9))
    predictor = MaskedPredictor(config.model_dim, seeded_rng("m", 1))
    rng = np.random.default_rng(0)
    t_frames = config.frames_for(16000)
    fractions = []
    for _ in range(1000):
        mask = rng.random(t_frames) < 0.15
        fractions.append(mask.mean())
    assert abs(np.mean(fractions) - 0.15) < 0.02


def test_masked_pretrain_reduces_heldout_loss(tiny_manifest):
    encoder = SSLEncoder(EncoderConfig(), seeded_rng("e", 10))
    train = tiny_manifest.split_records("train")
    held = tiny_manifest.split_records("test")

    def heldout_loss(enc, pred):
        rng = np.random.default_rng(99)
        vals = []
        for r in held:
            loss, _ = masked_step_loss(enc, pred, r.audio.samples, rng)
            vals.append(loss.item())
        return float(np.mean(vals))

    predictor0 = MaskedPredictor(encoder.config.model_dim,
                                 seeded_rng("m", 0xbead))
    before = heldout_loss(encoder, predictor0)
    predictor, losses = masked_pretrain(encoder, train, steps=60, seed=5,
                                        batch_size=2)
    after = heldout_loss(encoder, predictor)
    assert after < before
