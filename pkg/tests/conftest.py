import numpy as np
import pytest

from nrtts.corpus import CorpusConfig, build_corpus, build_noise_bank
from nrtts.system import SystemConfig
from nrtts.training import RunConfig, pretrain

# step counts shared by the training-dependent tests and the acceptance
# suite (sized for CPU runtime; see test_acceptance for the trend runs)
PRETRAIN_STEPS = 1200
MAIN_SEED = 1


@pytest.fixture(scope="session")
def tiny_manifest():
    return build_corpus(CorpusConfig(n_speakers=4, utterances_per_speaker=3),
                        seed=7)


@pytest.fixture(scope="session")
def small_manifest():
    return build_corpus(CorpusConfig(n_speakers=6, utterances_per_speaker=5),
                        seed=11)


@pytest.fixture(scope="session")
def accept_manifest():
    return build_corpus(CorpusConfig(n_speakers=10, utterances_per_speaker=10,
                                     n_valid_speakers=1, n_test_speakers=2),
                        seed=7)


@pytest.fixture(scope="session")
def test_noise_bank():
    return build_noise_bank("test", 4242, per_kind=3, duration_s=2.0)


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("artifacts")


@pytest.fixture(scope="session")
def pretrained_main(accept_manifest, artifacts_dir):
    """The shared stage-1 model used by synthesis-quality and freeze tests."""
    config = RunConfig(stage="pretrain", steps=PRETRAIN_STEPS, seed=MAIN_SEED,
                       batch_size=6, lr_kind="warmup_inverse_sqrt",
                       lr_warmup=150, lr_scale=0.05)
    return pretrain(accept_manifest, SystemConfig(), config,
                    artifacts_dir / "pretrain-main")


@pytest.fixture(scope="session")
def pretrained_small(small_manifest, artifacts_dir):
    """A quick stage-1 run for structural tests that just need a checkpoint."""
    config = RunConfig(stage="pretrain", steps=60, seed=3, batch_size=6,
                       lr_kind="warmup_inverse_sqrt", lr_warmup=30,
                       lr_scale=0.05)
    return pretrain(small_manifest, SystemConfig(), config,
                    artifacts_dir / "pretrain-small")


def fd_gradient(f, arr: np.ndarray, indices, h: float = 1e-6):
    """Central finite differences of scalar f() w.r.t. arr at flat indices."""
    flat = arr.reshape(-1)
    grads = {}
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        lp = f()
        flat[i] = old - h
        lm = f()
        flat[i] = old
        grads[i] = (lp - lm) / (2.0 * h)
    return grads
