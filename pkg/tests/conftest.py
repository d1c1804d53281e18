import numpy as np
import pytest

from mcfnet import kernels
from mcfnet.tensor import Tensor


def rand_tensor(rng, shape, requires_grad=False, dtype=np.float64, scale=1.0):
    t = Tensor(rng.standard_normal(shape) * scale, dtype=dtype)
    t.requires_grad = requires_grad
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(kernels.available_backends()))
def each_backend(request):
    """Run a test once per kernel backend, restoring the default after."""
    prev = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)
