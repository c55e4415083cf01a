import numpy as np
import pytest
from scipy.stats import chi2

from nrtts import augment, dsp
from nrtts.augment import (AugmentPolicy, MixSpec, apply_policy, mix_at_snr,
                           mix_with_gain, noise_gain)
from nrtts.corpus import NoiseBank, build_noise_bank
from nrtts.dsp import AudioClip
from nrtts.errors import DegenerateInputError, InvalidConfigError, InvalidInputError


def tone(freq=220.0, n=4000, sr=16000, amp=0.3):
    t = np.arange(n) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


def noise_clip(n=4000, seed=0, amp=0.1, sr=16000):
    rng = np.random.default_rng(seed)
    return AudioClip(amp * rng.standard_normal(n), sr)


def components_snr_db(mix: AudioClip, clean: AudioClip, spec: MixSpec) -> float:
    """Oracle: recover the noise component from the mixture itself."""
    clean_part = spec.renorm_scale * clean.samples
    noise_part = mix.samples - clean_part
    return 10.0 * np.log10(np.sum(clean_part ** 2) / np.sum(noise_part ** 2))


def test_zero_db_equalizes_rms():
    clean, noise = tone(), noise_clip()
    g = noise_gain(clean.samples, noise.samples, 0.0)
    assert dsp.rms(g * noise.samples) == pytest.approx(dsp.rms(clean.samples),
                                                       abs=1e-6)


def test_twenty_db_is_ten_to_one_amplitude():
    clean, noise = tone(), noise_clip()
    g = noise_gain(clean.samples, noise.samples, 20.0)
    assert dsp.rms(g * noise.samples) == pytest.approx(
        dsp.rms(clean.samples) / 10.0, abs=1e-6)


def test_measured_snr_within_tenth_db_over_100_pairs():
    for i in range(100):
        clean = noise_clip(n=3000, seed=1000 + i, amp=0.2)
        noise = noise_clip(n=3000, seed=2000 + i, amp=0.05)
        spec = MixSpec(snr_db=-5.0)
        mix = mix_at_snr(clean, noise, spec)
        assert components_snr_db(mix, clean, spec) == pytest.approx(-5.0,
                                                                    abs=0.1)


def test_clipping_renormalizes_but_preserves_snr():
    clean = AudioClip(0.95 * np.sin(np.linspace(0, 100, 4000)), 16000)
    noise = noise_clip(amp=0.5)
    spec = MixSpec(snr_db=-10.0)
    mix = mix_at_snr(clean, noise, spec)
    assert spec.renorm_scale < 1.0
    assert np.max(np.abs(mix.samples)) <= 1.0 + 1e-12
    assert components_snr_db(mix, clean, spec) == pytest.approx(-10.0, abs=0.1)


def test_short_noise_is_tiled_and_offset_windows():
    clean = tone(n=5000)
    short = noise_clip(n=1024, seed=3)
    mix = mix_at_snr(clean, short, MixSpec(snr_db=0.0))
    assert len(mix.samples) == 5000
    long = noise_clip(n=9000, seed=4)
    spec = MixSpec(snr_db=0.0, offset_samples=1234)
    fitted = augment._fit_noise(long.samples, 5000, 1234)
    np.testing.assert_array_equal(fitted, long.samples[1234:1234 + 5000])


def test_degenerate_and_mismatched_inputs():
    clean = tone()
    silent = AudioClip(np.zeros(4000), 16000)
    with pytest.raises(DegenerateInputError):
        mix_at_snr(silent, noise_clip(), MixSpec(snr_db=0.0))
    with pytest.raises(DegenerateInputError):
        mix_at_snr(clean, silent, MixSpec(snr_db=0.0))
    with pytest.raises(InvalidInputError):
        mix_at_snr(clean, AudioClip(np.ones(100), 8000), MixSpec(snr_db=0.0))
    with pytest.raises(InvalidInputError):
        mix_at_snr(clean, noise_clip(), MixSpec(snr_db=float("inf")))


def test_mixing_linear_in_clean_at_fixed_gain():
    c1, c2, noise = tone(300.0), tone(500.0), noise_clip()
    g = 0.37
    lhs = mix_with_gain(AudioClip(c1.samples + c2.samples, 16000),
                        noise.samples, g)
    rhs = mix_with_gain(c1, noise.samples, g) + \
        mix_with_gain(c2, noise.samples, g) - g * noise.samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# -- policy -------------------------------------------------------------------

@pytest.fixture(scope="module")
def bank():
    return build_noise_bank("train", 5, per_kind=2, duration_s=0.5)


def test_probability_zero_returns_clean(bank):
    clean = tone()
    rng = np.random.default_rng(0)
    for _ in range(50):
        out, spec = apply_policy(clean, AugmentPolicy(probability=0.0), bank, rng)
        assert spec is None
        np.testing.assert_array_equal(out.samples, clean.samples)


def test_snr_draws_uniform_chi_square_at_1pct(bank):
    clean = tone(n=800)
    policy = AugmentPolicy(probability=1.0, snr_low_db=-10.0, snr_high_db=20.0)
    rng = np.random.default_rng(1)
    draws = []
    for _ in range(10_000):
        _, spec = apply_policy(clean, policy, bank, rng)
        draws.append(spec.snr_db)
    draws = np.asarray(draws)
    assert draws.min() >= -10.0 and draws.max() <= 20.0
    counts, _ = np.histogram(draws, bins=10, range=(-10.0, 20.0))
    expected = len(draws) / 10
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < chi2.ppf(0.99, df=9)


def test_applied_fraction_half(bank):
    clean = tone(n=800)
    policy = AugmentPolicy(probability=0.5)
    rng = np.random.default_rng(2)
    fired = 0
    for _ in range(10_000):
        _, spec = apply_policy(clean, policy, bank, rng)
        fired += spec is not None
    assert abs(fired / 10_000 - 0.5) <= 0.02


def test_policy_validation():
    with pytest.raises(InvalidConfigError):
        AugmentPolicy(probability=1.5).validate()
    with pytest.raises(InvalidConfigError):
        AugmentPolicy(snr_low_db=5.0, snr_high_db=-5.0).validate()


def test_empty_bank_with_probability_rejected(bank):
    clean = tone()
    rng = np.random.default_rng(3)
    empty = NoiseBank({"solo": noise_clip()})
    empty.clips.clear()
    empty.ids.clear()
    with pytest.raises(InvalidConfigError):
        apply_policy(clean, AugmentPolicy(probability=1.0), empty, rng)


def test_policy_deterministic_given_rng_state():
    bank2 = build_noise_bank("train", 5, per_kind=2, duration_s=0.5)
    clean = tone()
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        out, spec = apply_policy(clean, AugmentPolicy(probability=1.0), bank2, rng)
        outs.append((out.samples.copy(), spec.snr_db, spec.noise_id))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    assert outs[0][1:] == outs[1][1:]
