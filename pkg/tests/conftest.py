import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes reference.py importable

import mian.data as D
import mian.model as M


@pytest.fixture
def tiny_cfg():
    return M.ModelConfig(d_model=8, n_heads=2, n_layers=1, m=4, u=4,
                         classifier_hidden=8, seed=1)


@pytest.fixture
def tiny_samples(tiny_cfg):
    spec = D.SynthSpec(n_samples=8, m=4, u=4, d=8, n_topics=3,
                       class_mix={0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}, seed=5)
    return D.generate(spec)


def rand_tensor(rng, shape, requires_grad=False):
    from mian.tensor import Tensor
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)
