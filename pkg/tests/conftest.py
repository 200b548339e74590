import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mdlm_decode import ExactJointModel, Template, Vocab


@pytest.fixture
def pair_joint():
    """The 4-entry L=2 joint: p(00)=0.4, p(01)=0.1, p(10)=0.2, p(11)=0.3."""
    return ExactJointModel.from_probs([[0.4, 0.1], [0.2, 0.3]])


@pytest.fixture
def correlated_joint():
    """p(00)=p(11)=0.5; the canonical non-product joint."""
    return ExactJointModel.from_probs([[0.5, 0.0], [0.0, 0.5]])


@pytest.fixture
def small_vocab():
    return Vocab(size=4, eos_id=3, mask_id=4, pad_id=2)


@pytest.fixture
def basic_template():
    """16-cell layout: reasoning [0,10), 2 delimiter tokens, answer [12,16)."""
    return Template(reasoning_span=(0, 10), delimiter_tokens=(0, 1), answer_span=(12, 16))
