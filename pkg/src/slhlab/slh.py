"""SLH triples: validation, series product, concatenation, superoperators.

A triple (S, L, H) holds an n x n scattering block of operators, an
n-vector of coupling operators and a Hamiltonian, all on one system space.
The S-block must be unitary as a block matrix and H Hermitian for the
generated process to be unitary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ito
from .operators import (
    HilbertSpace,
    Operator,
    SpaceMismatchError,
    identity,
    zero,
)


class InvalidTripleError(ValueError):
    """Raised when an operation requires a validated SLH triple."""


@dataclass(frozen=True)
class SLHTriple:
    """Hudson-Parthasarathy parameters of an open-system evolution."""

    S: tuple[tuple[Operator, ...], ...]
    L: tuple[Operator, ...]
    H: Operator

    def __post_init__(self):
        s = tuple(tuple(row) for row in self.S)
        l = tuple(self.L)
        n = len(l)
        if len(s) != n or any(len(row) != n for row in s):
            raise InvalidTripleError(
                f"S must be {n}x{n} to match the {n}-vector L"
            )
        space = self.H.space
        for row in s:
            for op in row:
                if op.space != space:
                    raise SpaceMismatchError("S entries on mismatched spaces")
        for op in l:
            if op.space != space:
                raise SpaceMismatchError("L entries on mismatched spaces")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "L", l)

    @property
    def n(self) -> int:
        return len(self.L)

    @property
    def space(self) -> HilbertSpace:
        return self.H.space

    def s_block(self) -> np.ndarray:
        """The (n*d) x (n*d) block matrix [S_jk]."""
        d = self.space.dim
        block = np.zeros((self.n * d, self.n * d), dtype=complex)
        for j in range(self.n):
            for k in range(self.n):
                block[j * d:(j + 1) * d, k * d:(k + 1) * d] = self.S[j][k].matrix
        return block

    def is_valid(self, tol: float = 1e-10) -> bool:
        return validate(self, tol)

    def assert_valid(self, tol: float = 1e-10):
        if not validate(self, tol):
            raise InvalidTripleError(
                "triple fails validation (S-block not unitary or H not Hermitian)"
            )


def validate(g: SLHTriple, tol: float = 1e-10) -> bool:
    """True iff the S-block is unitary and H Hermitian, in Frobenius norm."""
    block = g.s_block()
    eye = np.eye(block.shape[0])
    if np.linalg.norm(block.conj().T @ block - eye) > tol:
        return False
    if np.linalg.norm(block @ block.conj().T - eye) > tol:
        return False
    return g.H.is_hermitian(tol)


def identity_triple(space: HilbertSpace | int, n: int = 1) -> SLHTriple:
    """The trivial system (I, 0, 0) with multiplicity n."""
    if isinstance(space, int):
        space = HilbertSpace((space,))
    eye, nil = identity(space), zero(space)
    s = tuple(
        tuple(eye if j == k else nil for k in range(n)) for j in range(n)
    )
    return SLHTriple(s, (nil,) * n, nil)


def scalar_phase_triple(space: HilbertSpace, phase: complex, l_op: Operator,
                        h_op: Operator) -> SLHTriple:
    """Single-channel triple with scalar scattering phase."""
    return SLHTriple(((phase * identity(space),),), (l_op,), h_op)


def _im_operator(x: Operator) -> Operator:
    """Entrywise operator imaginary part (X - X†) / 2i."""
    return (x - x.dag) * (1.0 / 2j)


def series_product(g_b: SLHTriple, g_a: SLHTriple) -> SLHTriple:
    """Cascade g_a's output into g_b: (S_B S_A, L_B + S_B L_A, H_A + H_B + Im L_B† S_B L_A).

    Im means the anti-Hermitian part divided by 2i of the operator product
    L_B† S_B L_A = Σ_jk L_Bj† S_Bjk L_Ak.
    """
    if g_a.n != g_b.n:
        raise InvalidTripleError(
            f"series product needs equal multiplicities, got {g_b.n} and {g_a.n}"
        )
    if g_a.space != g_b.space:
        raise SpaceMismatchError("series product needs a common space")
    n = g_a.n
    s = tuple(
        tuple(
            sum(
                (g_b.S[j][m] @ g_a.S[m][k] for m in range(n)),
                zero(g_a.space),
            )
            for k in range(n)
        )
        for j in range(n)
    )
    l = tuple(
        g_b.L[j] + sum((g_b.S[j][m] @ g_a.L[m] for m in range(n)), zero(g_a.space))
        for j in range(n)
    )
    cross = sum(
        (g_b.L[j].dag @ g_b.S[j][k] @ g_a.L[k] for j in range(n) for k in range(n)),
        zero(g_a.space),
    )
    h = g_a.H + g_b.H + _im_operator(cross)
    out = SLHTriple(s, l, h)
    out.assert_valid()
    return out


def concatenate(g_1: SLHTriple, g_2: SLHTriple) -> SLHTriple:
    """Stack two systems on a common space: block-diagonal S, stacked L, H1 + H2."""
    if g_1.space != g_2.space:
        raise SpaceMismatchError("concatenation needs a common system space")
    n1, n2 = g_1.n, g_2.n
    nil = zero(g_1.space)
    s = tuple(
        tuple(
            (g_1.S[j][k] if j < n1 and k < n1
             else g_2.S[j - n1][k - n1] if j >= n1 and k >= n1
             else nil)
            for k in range(n1 + n2)
        )
        for j in range(n1 + n2)
    )
    return SLHTriple(s, g_1.L + g_2.L, g_1.H + g_2.H)


# -- superoperators (static-coefficient flow) ---------------------------

def lindbladian(g: SLHTriple, x: Operator) -> Operator:
    """ℒX = 1/2 Σ_i L_i†[X, L_i] + 1/2 Σ_i [L_i†, X] L_i - i[X, H]."""
    if x.space != g.space:
        raise SpaceMismatchError("observable lives on a different space")
    xm = x.matrix
    acc = -1j * (xm @ g.H.matrix - g.H.matrix @ xm)
    for li in g.L:
        l, ld = li.matrix, li.matrix.conj().T
        acc = acc + 0.5 * ld @ (xm @ l - l @ xm) + 0.5 * (ld @ xm - xm @ ld) @ l
    return Operator(g.space, acc)


def superop_m(g: SLHTriple, i: int, x: Operator) -> Operator:
    """M_iX = Σ_j S_ji† [X, L_j], the dB_i† coefficient of the flow."""
    if x.space != g.space:
        raise SpaceMismatchError("observable lives on a different space")
    xm = x.matrix
    acc = np.zeros((g.space.dim, g.space.dim), dtype=complex)
    for j in range(g.n):
        l = g.L[j].matrix
        acc = acc + g.S[j][i].matrix.conj().T @ (xm @ l - l @ xm)
    return Operator(g.space, acc)


def superop_n(g: SLHTriple, i: int, x: Operator) -> Operator:
    """N_iX = Σ_k [L_k†, X] S_ki, the dB_i coefficient of the flow."""
    if x.space != g.space:
        raise SpaceMismatchError("observable lives on a different space")
    xm = x.matrix
    acc = np.zeros((g.space.dim, g.space.dim), dtype=complex)
    for k in range(g.n):
        ld = g.L[k].matrix.conj().T
        acc = acc + (ld @ xm - xm @ ld) @ g.S[k][i].matrix
    return Operator(g.space, acc)


def superop_s(g: SLHTriple, i: int, k: int, x: Operator) -> Operator:
    """S_ikX = Σ_j S_ji† X S_jk - δ_ik X, the dΛ_ik coefficient of the flow."""
    if x.space != g.space:
        raise SpaceMismatchError("observable lives on a different space")
    xm = x.matrix
    acc = np.zeros((g.space.dim, g.space.dim), dtype=complex)
    for j in range(g.n):
        acc = acc + g.S[j][i].matrix.conj().T @ xm @ g.S[j][k].matrix
    if i == k:
        acc = acc - xm
    return Operator(g.space, acc)


# -- static output relations --------------------------------------------

def output_increment(g: SLHTriple, j: int) -> ito.ItoExpr:
    """Template for dB_j^out: Σ_k S_jk dB_k + L_j dt.

    Coefficients are the bare system operators; the flow conjugates them
    downstream.
    """
    g.assert_valid()
    if not 0 <= j < g.n:
        raise IndexError(f"channel {j} out of range for multiplicity {g.n}")
    expr = ito.ItoExpr.zero(g.n, g.space)
    expr._add_term(ito.ItoIncrement.dt(), g.L[j].matrix)
    for k in range(g.n):
        expr._add_term(ito.ItoIncrement.db(k), g.S[j][k].matrix)
    return expr


def quadrature_output_increment(g: SLHTriple) -> ito.ItoExpr:
    """Template for dY = S dB + S† dB† + (L + L†) dt, single channel."""
    g.assert_valid()
    if g.n != 1:
        raise InvalidTripleError("quadrature output template needs n = 1")
    expr = ito.ItoExpr.zero(1, g.space)
    expr._add_term(ito.ItoIncrement.dt(), g.L[0].matrix + g.L[0].matrix.conj().T)
    expr._add_term(ito.ItoIncrement.db(0), g.S[0][0].matrix)
    expr._add_term(ito.ItoIncrement.dbdag(0), g.S[0][0].matrix.conj().T)
    return expr
