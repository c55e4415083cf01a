"""The full zero-shot TTS system: encoder + adapters + towers + acoustic model.

The system owns the parameter namespace used everywhere else:

    encoder/...    conv extractor, projection, positional conv, transformer
    adapters/...   bn/* and cnn/* adapter groups (present once inserted)
    embedding/...  the two embedding towers
    tts/...        the acoustic model

Freeze plans, checkpoints, and the bitwise diff all speak these names.
There is no speaker identity anywhere in the synthesis API: conditioning
comes exclusively from reference audio, so unseen speakers are handled by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import adapters as adapters_mod
from .adapters import FreezePlan
from .autograd import Tensor
from .dsp import AudioClip, MelSpectrogram, seeded_rng
from .embedding import EmbeddingExtractor, SpeakerEmbeddingPair
from .errors import InvalidConfigError, InvalidInputError
from .se_frontend import get_enhancer
from .ssl_encoder import EncoderConfig, SSLEncoder
from .tts import TTSConfig, TTSModel


@dataclass
class SystemConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    tts: TTSConfig = field(default_factory=TTSConfig)
    embed_dim: int = 256
    bottleneck: int = 32
    cnn_kernel: int = adapters_mod.DEFAULT_CNN_KERNEL
    use_bn: bool = False
    use_cnn: bool = False
    se_enhancer: str = "spectral_subtraction"

    def __post_init__(self):
        if self.tts.embed_dim != self.embed_dim:
            raise InvalidConfigError(
                "tts.embed_dim must match the system embed_dim")

    @classmethod
    def paper_scale(cls, use_bn=False, use_cnn=False) -> "SystemConfig":
        return cls(encoder=EncoderConfig.paper_scale(),
                   tts=TTSConfig.paper_scale(),
                   embed_dim=256, bottleneck=256,
                   use_bn=use_bn, use_cnn=use_cnn)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        enc = dict(d["encoder"])
        enc["conv_kernels"] = tuple(enc["conv_kernels"])
        enc["conv_strides"] = tuple(enc["conv_strides"])
        return cls(encoder=EncoderConfig(**enc), tts=TTSConfig(**d["tts"]),
                   embed_dim=d["embed_dim"], bottleneck=d["bottleneck"],
                   cnn_kernel=d["cnn_kernel"], use_bn=d["use_bn"],
                   use_cnn=d["use_cnn"], se_enhancer=d["se_enhancer"])


class System:
    def __init__(self, config: SystemConfig, seed: int | None = 0):
        self.config = config
        enc_rng = seeded_rng("init-encoder", seed) if seed is not None else None
        emb_rng = seeded_rng("init-embedding", seed) if seed is not None else None
        tts_rng = seeded_rng("init-tts", seed) if seed is not None else None
        self.encoder = SSLEncoder(config.encoder, enc_rng)
        self.extractor = EmbeddingExtractor(
            config.encoder.n_transformer_layers + 1, config.encoder.model_dim,
            config.embed_dim, emb_rng)
        self.tts = TTSModel(config.tts, tts_rng)
        self.enhancer = get_enhancer(config.se_enhancer)
        self.plan = FreezePlan()
        if config.use_bn or config.use_cnn:
            self.insert_adapters(config.use_bn, config.use_cnn, seed=seed)

    # -- parameters -----------------------------------------------------------
    def named_parameters(self):
        yield from (("encoder/" + n, p)
                    for n, p in self.encoder.named_parameters())
        if self.encoder.adapter_set is not None:
            yield from (("adapters/" + n, p)
                        for n, p in self.encoder.adapter_set.named_parameters())
        yield from (("embedding/" + n, p)
                    for n, p in self.extractor.named_parameters())
        yield from (("tts/" + n, p) for n, p in self.tts.named_parameters())

    def param_shapes(self) -> dict:
        return {n: p.data.shape for n, p in self.named_parameters()}

    def state_arrays(self) -> dict:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state(self, tensors: dict) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(tensors):
            missing = sorted(set(params) - set(tensors))
            extra = sorted(set(tensors) - set(params))
            raise InvalidInputError(
                f"checkpoint does not match model (missing: {missing[:4]}, "
                f"extra: {extra[:4]})")
        for name, p in params.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise InvalidInputError(
                    f"{name}: checkpoint shape {arr.shape} vs model {p.data.shape}")
            p.data = arr.copy()

    def set_trainable(self, plan: FreezePlan) -> None:
        self.plan = plan
        for name, p in self.named_parameters():
            p.requires_grad = plan.allows(name)

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def insert_adapters(self, use_bn: bool, use_cnn: bool, seed=0):
        rng = seeded_rng("init-adapters", seed) if seed is not None else None
        adapter_set = adapters_mod.insert_adapters(
            self.encoder, use_bn, use_cnn, bottleneck=self.config.bottleneck,
            cnn_kernel=self.config.cnn_kernel, rng=rng)
        self.config.use_bn = use_bn
        self.config.use_cnn = use_cnn
        return adapter_set

    # -- inference --------------------------------------------------------------
    def prepare_reference(self, reference: AudioClip, se_enabled: bool) -> AudioClip:
        return self.enhancer(reference) if se_enabled else reference

    def embed_reference(self, reference: AudioClip,
                        se_enabled: bool = False) -> SpeakerEmbeddingPair:
        ref = self.prepare_reference(reference, se_enabled)
        stack = self.encoder.extract_features(ref)
        return self.extractor.extract_pair(stack)

    def training_embeddings(self, samples: np.ndarray):
        """Graph-carrying embedding pair for one reference waveform."""
        stack = self.encoder.forward_stack(samples)
        return self.extractor(stack)

    def training_embeddings_from_stack(self, stack_arrays):
        tensors = [Tensor(a) for a in stack_arrays]
        return self.extractor(tensors)

    def synthesize(self, phonemes, reference: AudioClip, se_enabled: bool = False,
                   forced_durations=None) -> tuple[MelSpectrogram, np.ndarray]:
        """Zero-shot synthesis from a reference clip.

        Returns (mel, predicted duration frames).  When forced_durations is
        given the mel is rendered at that alignment while the prediction is
        still reported, which is what alignment-exact evaluation needs.
        """
        pair = self.embed_reference(reference, se_enabled)
        return self.tts.infer(phonemes, pair.acoustic, pair.duration,
                              forced_durations=forced_durations)


def build_system(config: SystemConfig, seed: int | None = 0) -> System:
    return System(config, seed)


def system_from_checkpoint(header: dict, tensors: dict) -> System:
    """Rebuild a system exactly as checkpointed (configs, adapters, weights)."""
    config = SystemConfig.from_dict(header["system"])
    use_bn, use_cnn = config.use_bn, config.use_cnn
    config.use_bn = config.use_cnn = False
    system = System(config, seed=None)
    if use_bn or use_cnn:
        system.insert_adapters(use_bn, use_cnn, seed=None)
    system.load_state(tensors)
    return system


def load_system(checkpoint_path) -> tuple[System, dict]:
    """Load a checkpoint file into a fresh system; returns (system, header)."""
    from .checkpoint import load_checkpoint
    header, tensors = load_checkpoint(checkpoint_path)
    return system_from_checkpoint(header, tensors), header
