import numpy as np
import pytest

from chem.smiles import Vocabulary
from config import ModelConfig

DESK_SMILES = [
    "CCO", "CCN", "CCC", "CCCC", "CCCCO", "CCCCN", "CC(C)O", "CC(C)N", "CC(=O)O", "CC(=O)N",
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "OC1CCCCC1", "NC1CCCCC1",
    "c1ccccc1", "c1ccccc1O", "c1ccccc1N", "c1ccccc1C", "c1ccccc1CC", "Cc1ccccc1C",
    "c1ccncc1", "c1ccoc1", "c1ccsc1", "Oc1ccc(O)cc1", "Nc1ccc(N)cc1",
    "COC1=CC=C(C=C1)C(=O)N1CCCC1=O", "CC(C)Cc1ccc(cc1)C(C)C(=O)O", "CC(=O)Oc1ccccc1C(=O)O",
    "C#N", "CC#N", "C=C", "C=CC=C", "ClCCl", "BrCCBr", "CC(Cl)Cl", "OCCO", "NCCN", "OCCN",
    "[NH4+]", "[O-]C(=O)C", "C[N+](C)(C)C", "CCOCC", "CCSCC", "CC(=O)CC", "O=C1CCCCC1",
    "c1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
]


RING_FRAGMENTS = ["c1ccccc1", "C1CCCCC1", "C1CCCC1", "c1ccncc1", "c1ccoc1", "C1CC1"]
CHAIN_ATOMS = ["C", "C", "C", "N", "O"]
BRANCHES = ["(C)", "(O)", "(N)", "(=O)", "(F)", "(Cl)"]
CAPS = ["", "", "O", "N", "F", "Cl", "Br", "C#N"]


def desk_corpus(n, seed=0):
    """``n`` distinct parseable SMILES built from ring, chain, branch and cap fragments."""
    rng = np.random.default_rng(seed)
    seen = {}
    for _ in range(100 * n):
        if len(seen) == n:
            break
        parts = []
        if rng.random() < 0.4:
            parts.append(RING_FRAGMENTS[rng.integers(len(RING_FRAGMENTS))])
        for _ in range(int(rng.integers(1, 7))):
            atom = CHAIN_ATOMS[rng.integers(len(CHAIN_ATOMS))]
            parts.append(atom)
            if atom == "C" and rng.random() < 0.25:
                parts.append(BRANCHES[rng.integers(len(BRANCHES))])
        parts.append(CAPS[rng.integers(len(CAPS))])
        seen.setdefault("".join(parts), None)
    assert len(seen) == n, f"only {len(seen)} distinct molecules"
    return list(seen)


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run the long training gates")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training gates (enable with --run-slow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def desk_smiles():
    return list(DESK_SMILES)


@pytest.fixture
def desk_vocab():
    return Vocabulary.from_smiles(DESK_SMILES)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(d=8, heads=2, enc_layers=1, dec_layers=1, ff=16, max_len=24, rnn_d=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
