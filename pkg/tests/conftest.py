import math

import pytest

from cascadelab import generators as G

W = G.discrete_iid(2, [0.5, 1.5], [0.5, 0.5])


def builtin_generators():
    """One or more instances of every family, including a composite."""
    return {
        "deterministic-2": G.deterministic(2),
        "deterministic-3": G.deterministic(3),
        "discrete-W": W,
        "discrete-zero-atom": G.discrete_iid(3, [0.0, 1.5], [1 / 3, 2 / 3]),
        "lognormal-2": G.lognormal(2, 0.2),
        "lognormal-3": G.lognormal(3, 0.1),
        "logpoisson": G.log_poisson(2, 1.0, 0.8),
        "dirichlet": G.dirichlet(3, [1.0, 2.0, 0.5]),
        "onehot": G.one_hot(3),
        "tensor": G.tensor_product(W, G.lognormal(3, 0.1)),
    }


BUILTINS = builtin_generators()


@pytest.fixture
def w_gen():
    return W


LN2 = math.log(2.0)
