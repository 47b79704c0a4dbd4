import json
import os

import numpy as np
import pytest

from ergolab.space import FiniteSystem, integrate

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def load_golden(name):
    with open(os.path.join(GOLDEN_DIR, name)) as fh:
        return json.load(fh)


def zero_mean(system, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(system.atom_count)
    return f - integrate(system, f)


@pytest.fixture
def z6():
    return FiniteSystem.cycle(6)


@pytest.fixture
def z10():
    return FiniteSystem.cycle(10)
