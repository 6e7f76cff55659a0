import numpy as np
import pytest

from slhlab.operators import HilbertSpace, Operator, identity, zero
from slhlab.slh import SLHTriple


def random_hermitian(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (m + m.conj().T)


def random_complex(rng, dim):
    return rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))


def random_unitary(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_validated_triple(rng, dim, n):
    """Random SLH triple: S-block from an (n*dim)-unitary, random L, Hermitian H."""
    space = HilbertSpace((dim,))
    big = random_unitary(rng, n * dim)
    s = tuple(
        tuple(
            Operator(space, big[j * dim:(j + 1) * dim, k * dim:(k + 1) * dim])
            for k in range(n)
        )
        for j in range(n)
    )
    l = tuple(Operator(space, random_complex(rng, dim)) for _ in range(n))
    h = Operator(space, random_hermitian(rng, dim))
    return SLHTriple(s, l, h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
