import logging

import numpy as np
import pytest

from volseg.autograd import Tensor

logging.getLogger("volseg").setLevel(logging.DEBUG)


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run tests training or evaluating a model",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: mark test as training or evaluating a model"
    )


def pytest_collection_modifyitems(config, items):

    # --run-slow given in cli: do not skip slow tests
    if not config.getoption("--run-slow"):
        skip_slow = pytest.mark.skip(reason="need --run-slow option to run")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_tensor(rng):
    """Factory of float64 tensors with standard normal values."""

    def make(*shape, name=None, requires_grad=False):
        return Tensor(
            rng.standard_normal(shape),
            requires_grad=requires_grad,
            dtype=np.float64,
            name=name,
        )

    return make


def naive_conv3d(x, weight, bias=None, stride=1, padding=0):
    """Direct six-loop convolution used as an oracle."""
    n, cin, d, h, w = x.shape
    cout, _, kd, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3)
    od = (d + 2 * padding - kd) // stride + 1
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, od, oh, ow))
    for b in range(n):
        for o in range(cout):
            for i in range(od):
                for j in range(oh):
                    for k in range(ow):
                        patch = xp[
                            b,
                            :,
                            i * stride : i * stride + kd,
                            j * stride : j * stride + kh,
                            k * stride : k * stride + kw,
                        ]
                        out[b, o, i, j, k] = np.sum(patch * weight[o])
            if bias is not None:
                out[b, o] += bias[o]
    return out
