"""Dense complex linear algebra on finite composite Hilbert spaces.

Everything downstream (SLH triples, Ito expressions, collision-model
unitaries) is carried by :class:`Operator`: a dense complex matrix tagged
with the :class:`HilbertSpace` it lives on.  Field modes are truncated, so
ladder-operator identities hold exactly only below the top Fock level; the
truncation dimension is always an explicit argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import factorial, sqrt
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

DEFAULT_DIM_CAP = 4096


class DimensionError(ValueError):
    """Raised for invalid or oversized Hilbert-space dimensions."""


class SpaceMismatchError(ValueError):
    """Raised when operators on different spaces are combined."""


@dataclass(frozen=True)
class HilbertSpace:
    """Composite Hilbert space given by the ordered dimensions of its factors.

    The total dimension is capped (default 4096) to keep dense algebra
    tractable; pass a larger ``max_dim`` explicitly to override.
    """

    factor_dims: tuple[int, ...]
    max_dim: int = field(default=DEFAULT_DIM_CAP, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        object.__setattr__(self, "factor_dims", dims)
        if not dims:
            raise DimensionError("space needs at least one factor")
        if any(d < 1 for d in dims):
            raise DimensionError(f"factor dimensions must be >= 1, got {dims}")
        if self.dim > self.max_dim:
            raise DimensionError(
                f"total dimension {self.dim} exceeds cap {self.max_dim}"
            )

    @property
    def dim(self) -> int:
        return int(np.prod(self.factor_dims, dtype=np.int64))

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)


@dataclass(frozen=True)
class Operator:
    """Immutable dense operator on a :class:`HilbertSpace`.

    ``+``/``-`` combine operators on the same space, ``*`` takes scalars,
    ``@`` is the operator product.  The underlying matrix is copied on
    construction and marked read-only, so instances are safe to share.
    """

    space: HilbertSpace
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator matrix must be square, got {m.shape}")
        if m.shape[0] != self.space.dim:
            raise DimensionError(
                f"matrix size {m.shape[0]} does not match space dim {self.space.dim}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    # -- algebra -------------------------------------------------------
    def _check_space(self, other: "Operator"):
        if self.space != other.space:
            raise SpaceMismatchError(
                f"operators live on different spaces: "
                f"{self.space.factor_dims} vs {other.space.factor_dims}"
            )

    def __add__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix - other.matrix)

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.space, self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Operator":
        return Operator(self.space, self.matrix / complex(scalar))

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix @ other.matrix)

    @property
    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    @property
    def dim(self) -> int:
        return self.space.dim

    # -- predicates and norms -----------------------------------------
    def norm(self) -> float:
        """Frobenius norm, the tolerance yardstick used throughout."""
        return float(np.linalg.norm(self.matrix))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return float(np.linalg.norm(self.matrix - self.matrix.conj().T)) <= tol

    def is_unitary(self, tol: float = 1e-12) -> bool:
        d = self.matrix.conj().T @ self.matrix - np.eye(self.dim)
        return float(np.linalg.norm(d)) <= tol

    def isclose(self, other: "Operator", tol: float = 1e-12) -> bool:
        self._check_space(other)
        return float(np.linalg.norm(self.matrix - other.matrix)) <= tol

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.matrix @ psi))

    def __repr__(self) -> str:
        return f"Operator(dims={self.space.factor_dims}, norm={self.norm():.4g})"


# -- constructors ------------------------------------------------------

def identity(space: HilbertSpace | int) -> Operator:
    if isinstance(space, int):
        space = HilbertSpace((space,))
    return Operator(space, np.eye(space.dim))


def zero(space: HilbertSpace | int) -> Operator:
    if isinstance(space, int):
        space = HilbertSpace((space,))
    return Operator(space, np.zeros((space.dim, space.dim)))


def annihilator(trunc_dim: int) -> Operator:
    """Truncated bosonic mode operator a with a[i, i+1] = sqrt(i+1).

    At truncation d the commutator [a, a†] equals the identity except for
    the bottom-right entry, which is -(d-1).
    """
    if trunc_dim < 2:
        raise DimensionError(f"annihilator needs dimension >= 2, got {trunc_dim}")
    m = np.diag(np.sqrt(np.arange(1, trunc_dim)), k=1)
    return Operator(HilbertSpace((trunc_dim,)), m)


def creation(trunc_dim: int) -> Operator:
    return annihilator(trunc_dim).dag


def number_op(trunc_dim: int) -> Operator:
    a = annihilator(trunc_dim)
    return a.dag @ a


def adjoint(op: Operator) -> Operator:
    return op.dag


def commutator(a: Operator, b: Operator) -> Operator:
    a._check_space(b)
    return Operator(a.space, a.matrix @ b.matrix - b.matrix @ a.matrix)


def anticommutator(a: Operator, b: Operator) -> Operator:
    a._check_space(b)
    return Operator(a.space, a.matrix @ b.matrix + b.matrix @ a.matrix)


def is_unitary(op: Operator, tol: float = 1e-12) -> bool:
    return op.is_unitary(tol)


def is_hermitian(op: Operator, tol: float = 1e-12) -> bool:
    return op.is_hermitian(tol)


def expm(op: Operator) -> Operator:
    """Matrix exponential (scaling-and-squaring with Pade approximant)."""
    if not np.all(np.isfinite(op.matrix)):
        raise ValueError("expm requires finite matrix entries")
    return Operator(op.space, scipy.linalg.expm(op.matrix))


def tensor(*ops: Operator) -> Operator:
    """Kronecker product of operators, concatenating their factor lists."""
    if not ops:
        raise ValueError("tensor() needs at least one operator")
    dims = tuple(d for op in ops for d in op.space.factor_dims)
    m = reduce(np.kron, (op.matrix for op in ops))
    return Operator(HilbertSpace(dims), m)


def embed(op: Operator, target: HilbertSpace, factor_index: int) -> Operator:
    """Place ``op`` on one tensor factor of ``target``, identity elsewhere."""
    if not 0 <= factor_index < target.n_factors:
        raise IndexError(
            f"factor index {factor_index} out of range for {target.factor_dims}"
        )
    if op.space.dim != target.factor_dims[factor_index]:
        raise DimensionError(
            f"operator dim {op.space.dim} does not match factor "
            f"{factor_index} of {target.factor_dims}"
        )
    left = int(np.prod(target.factor_dims[:factor_index], dtype=np.int64))
    right = int(np.prod(target.factor_dims[factor_index + 1:], dtype=np.int64))
    m = np.kron(np.kron(np.eye(left), op.matrix), np.eye(right))
    return Operator(target, m)


def hermitian_basis(dim: int) -> list[np.ndarray]:
    """Generalized Gell-Mann basis: dim^2 - 1 traceless Hermitian matrices.

    Together with the identity this spans all Hermitian matrices, which
    makes "for all observables X" assertable in finite checks.
    """
    basis = []
    for j in range(dim):
        for k in range(j + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[j, k] = sym[k, j] = 1.0
            basis.append(sym)
            asym = np.zeros((dim, dim), dtype=complex)
            asym[j, k] = -1j
            asym[k, j] = 1j
            basis.append(asym)
    for l in range(1, dim):
        diag = np.zeros(dim, dtype=complex)
        diag[:l] = 1.0
        diag[l] = -l
        basis.append(np.diag(diag) * sqrt(2.0 / (l * (l + 1))))
    return basis


# -- state vectors -----------------------------------------------------

def fock_state(dim: int, n: int) -> np.ndarray:
    if not 0 <= n < dim:
        raise DimensionError(f"Fock level {n} outside truncation {dim}")
    psi = np.zeros(dim, dtype=complex)
    psi[n] = 1.0
    return psi


def coherent_state(dim: int, alpha: complex) -> np.ndarray:
    """Truncated coherent state, renormalized on the truncated space."""
    n = np.arange(dim)
    amps = np.array(
        [alpha ** k / sqrt(factorial(k)) for k in n], dtype=complex
    )
    psi = amps / np.linalg.norm(amps)
    return psi
