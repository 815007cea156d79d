import numpy as np
import pytest

from morseuq import kernels
from morseuq.structgraph import Case
from morseuq.synth import SynthConfig, generate_case

# Acceptance corpus recipe: momentum curves with heavy spur/gap corruption so
# both true and spurious structures appear in quantity, zero additive noise so
# the structure count stays at desk scale.
CORPUS_KW = dict(n_curves=3, thickness=3, gap_rate=0.3, spur_rate=0.5,
                 blur_sigma=1.0, noise_sigma=0.0)
BG_THRESHOLD = 0.05
TRAIN_MASTER_SEED = 7
HELDOUT_MASTER_SEED = 8


def case_seed(master: int, k: int) -> int:
    """Per-case seed derivation, shared with the synth CLI (domain tag 2)."""
    return int(np.random.SeedSequence(
        entropy=master & 0xFFFFFFFFFFFFFFFF, spawn_key=(2, k)).generate_state(1)[0])


def make_corpus(master: int, n_cases: int, dims=(64, 64)) -> list[Case]:
    cases = []
    for k in range(n_cases):
        cfg = SynthConfig(dims=dims, seed=case_seed(master, k), **CORPUS_KW)
        image, gt, likelihood = generate_case(cfg)
        cases.append(Case(case_id=f"case_{k:03d}", image=image,
                          likelihood=likelihood, gt=gt))
    return cases


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def train_corpus():
    return make_corpus(TRAIN_MASTER_SEED, 20)


@pytest.fixture(scope="session")
def heldout_corpus():
    return make_corpus(HELDOUT_MASTER_SEED, 10)
