"""Quantum Ito increment algebra with numeric operator coefficients.

An :class:`ItoExpr` is a formal sum of operator coefficients times the
increments dt, dB_k, dB_j†, dΛ_jk.  Products of expressions contract the
increments through the Ito table

    dΛ_ij dΛ_kl = δ_jk dΛ_il      dΛ_ij dB_k† = δ_jk dB_i†
    dB_i dΛ_kl  = δ_ik dB_l       dB_i dB_k†  = δ_ik dt

and every other increment pair vanishes.  Coefficients are dense matrices
rather than free symbols: each identity asserted downstream is decided
numerically at small dimension.  Terms with Frobenius norm below
``CANONICAL_TOL`` are dropped so that "equals zero" is decidable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .operators import HilbertSpace, Operator, SpaceMismatchError

if TYPE_CHECKING:  # pragma: no cover
    from .slh import SLHTriple

CANONICAL_TOL = 1e-14

_DT = "dt"
_DB = "dB"
_DBDAG = "dB†"
_DLAMBDA = "dΛ"


@dataclass(frozen=True, order=True)
class ItoIncrement:
    """One of dt, dB_k, dB_j†, dΛ_jk, with channel indices in 0..n-1."""

    kind: str
    i: int = -1
    j: int = -1

    @staticmethod
    def dt() -> "ItoIncrement":
        return ItoIncrement(_DT)

    @staticmethod
    def db(k: int) -> "ItoIncrement":
        return ItoIncrement(_DB, k)

    @staticmethod
    def dbdag(j: int) -> "ItoIncrement":
        return ItoIncrement(_DBDAG, j)

    @staticmethod
    def dlambda(j: int, k: int) -> "ItoIncrement":
        return ItoIncrement(_DLAMBDA, j, k)

    def max_channel(self) -> int:
        return max(self.i, self.j)

    @property
    def adjoint(self) -> "ItoIncrement":
        if self.kind == _DT:
            return self
        if self.kind == _DB:
            return ItoIncrement.dbdag(self.i)
        if self.kind == _DBDAG:
            return ItoIncrement.db(self.i)
        return ItoIncrement.dlambda(self.j, self.i)

    def __str__(self) -> str:
        if self.kind == _DT:
            return "dt"
        if self.kind == _DLAMBDA:
            return f"dΛ[{self.i},{self.j}]"
        return f"{self.kind}[{self.i}]"


def increment_product(x: ItoIncrement, y: ItoIncrement) -> ItoIncrement | None:
    """Ito table contraction of two increments; None when the product vanishes."""
    if x.kind == _DLAMBDA and y.kind == _DLAMBDA:
        return ItoIncrement.dlambda(x.i, y.j) if x.j == y.i else None
    if x.kind == _DLAMBDA and y.kind == _DBDAG:
        return ItoIncrement.dbdag(x.i) if x.j == y.i else None
    if x.kind == _DB and y.kind == _DLAMBDA:
        return ItoIncrement.db(y.j) if x.i == y.i else None
    if x.kind == _DB and y.kind == _DBDAG:
        return ItoIncrement.dt() if x.i == y.i else None
    return None


class ItoExpr:
    """Formal sum of operator coefficients times Ito increments.

    All coefficients live on one :class:`HilbertSpace`; the channel
    multiplicity ``n`` is fixed per expression.
    """

    def __init__(self, multiplicity: int, space: HilbertSpace,
                 terms: dict[ItoIncrement, np.ndarray] | None = None):
        if multiplicity < 0:
            raise ValueError("multiplicity must be >= 0")
        self.multiplicity = int(multiplicity)
        self.space = space
        self.terms: dict[ItoIncrement, np.ndarray] = {}
        if terms:
            for inc, coeff in terms.items():
                self._add_term(inc, np.asarray(coeff, dtype=complex))

    def _add_term(self, inc: ItoIncrement, coeff: np.ndarray):
        if inc.max_channel() >= self.multiplicity:
            raise ValueError(
                f"increment {inc} outside multiplicity {self.multiplicity}"
            )
        if coeff.shape != (self.space.dim, self.space.dim):
            raise SpaceMismatchError(
                f"coefficient shape {coeff.shape} does not match space "
                f"dim {self.space.dim}"
            )
        total = self.terms.get(inc)
        total = coeff if total is None else total + coeff
        if np.linalg.norm(total) < CANONICAL_TOL:
            self.terms.pop(inc, None)
        else:
            self.terms[inc] = total

    @staticmethod
    def zero(multiplicity: int, space: HilbertSpace) -> "ItoExpr":
        return ItoExpr(multiplicity, space)

    def _check_compatible(self, other: "ItoExpr"):
        if self.multiplicity != other.multiplicity:
            raise ValueError(
                f"multiplicity mismatch: {self.multiplicity} vs {other.multiplicity}"
            )
        if self.space != other.space:
            raise SpaceMismatchError("Ito expressions live on different spaces")

    # -- linear structure ---------------------------------------------
    def __add__(self, other: "ItoExpr") -> "ItoExpr":
        self._check_compatible(other)
        out = ItoExpr(self.multiplicity, self.space, self.terms)
        for inc, coeff in other.terms.items():
            out._add_term(inc, coeff)
        return out

    def __sub__(self, other: "ItoExpr") -> "ItoExpr":
        return self + (-1.0) * other

    def __mul__(self, scalar) -> "ItoExpr":
        return ItoExpr(
            self.multiplicity, self.space,
            {inc: coeff * complex(scalar) for inc, coeff in self.terms.items()},
        )

    __rmul__ = __mul__

    def __neg__(self) -> "ItoExpr":
        return self * (-1.0)

    @property
    def adjoint(self) -> "ItoExpr":
        return ItoExpr(
            self.multiplicity, self.space,
            {inc.adjoint: coeff.conj().T for inc, coeff in self.terms.items()},
        )

    # -- access ---------------------------------------------------------
    def coefficient(self, inc: ItoIncrement) -> Operator:
        coeff = self.terms.get(inc)
        if coeff is None:
            coeff = np.zeros((self.space.dim, self.space.dim))
        return Operator(self.space, coeff)

    def max_coeff_norm(self) -> float:
        if not self.terms:
            return 0.0
        return max(float(np.linalg.norm(c)) for c in self.terms.values())

    def is_zero(self, tol: float = 1e-10) -> bool:
        return self.max_coeff_norm() <= tol

    def pretty(self) -> str:
        """Terse text form ordered dt, dB†, dB, dΛ, coefficients by norm."""
        if not self.terms:
            return "0"
        order = {_DT: 0, _DBDAG: 1, _DB: 2, _DLAMBDA: 3}
        items = sorted(
            self.terms.items(), key=lambda kv: (order[kv[0].kind], kv[0].i, kv[0].j)
        )
        parts = []
        for inc, coeff in items:
            parts.append(f"(‖x‖={np.linalg.norm(coeff):.6g})·{inc}")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"ItoExpr(n={self.multiplicity}, {self.pretty()})"


def ito_product(x: ItoExpr, y: ItoExpr) -> ItoExpr:
    """Product of two Ito expressions via the increment table.

    Operator coefficients multiply in the order given (x then y).
    """
    x._check_compatible(y)
    out = ItoExpr.zero(x.multiplicity, x.space)
    for inc_x, cx in x.terms.items():
        for inc_y, cy in y.terms.items():
            inc = increment_product(inc_x, inc_y)
            if inc is not None:
                out._add_term(inc, cx @ cy)
    return out


def generator_from_slh(g: "SLHTriple") -> ItoExpr:
    """Generator dG of the unitary QSDE dU = dG U for a static triple.

    dG = -(1/2 L†L + iH) dt + Σ_j L_j dB_j† - Σ_jk L_j† S_jk dB_k
         + Σ_jk (S_jk - δ_jk) dΛ_jk
    """
    g.assert_valid()
    n, space = g.n, g.space
    eye = np.eye(space.dim)
    expr = ItoExpr.zero(n, space)

    ldagl = sum(
        (g.L[j].matrix.conj().T @ g.L[j].matrix for j in range(n)),
        np.zeros((space.dim, space.dim), dtype=complex),
    )
    expr._add_term(ItoIncrement.dt(), -0.5 * ldagl - 1j * g.H.matrix)
    for j in range(n):
        expr._add_term(ItoIncrement.dbdag(j), g.L[j].matrix)
    for j in range(n):
        ldag = g.L[j].matrix.conj().T
        for k in range(n):
            expr._add_term(ItoIncrement.db(k), -ldag @ g.S[j][k].matrix)
    for j in range(n):
        for k in range(n):
            delta = eye if j == k else 0.0
            expr._add_term(ItoIncrement.dlambda(j, k), g.S[j][k].matrix - delta)
    return expr


def isometry_defect(dg: ItoExpr) -> ItoExpr:
    """dG + dG† + (dG†)(dG); all coefficients vanish for a valid triple."""
    return dg + dg.adjoint + ito_product(dg.adjoint, dg)


def coisometry_defect(dg: ItoExpr) -> ItoExpr:
    """dG + dG† + (dG)(dG†), the co-isometry counterpart."""
    return dg + dg.adjoint + ito_product(dg, dg.adjoint)


def heisenberg_increment(x: Operator, g: "SLHTriple") -> ItoExpr:
    """Flow increment of a system observable X under a static triple.

    Returns ℒX dt + Σ_i M_iX dB_i† + Σ_i N_iX dB_i + Σ_ik S_ikX dΛ_ik with
    the standard Lindbladian and noise superoperators.
    """
    from .slh import lindbladian, superop_m, superop_n, superop_s

    if x.space != g.space:
        raise SpaceMismatchError("observable lives on a different space")
    expr = ItoExpr.zero(g.n, g.space)
    expr._add_term(ItoIncrement.dt(), lindbladian(g, x).matrix)
    for i in range(g.n):
        expr._add_term(ItoIncrement.dbdag(i), superop_m(g, i, x).matrix)
        expr._add_term(ItoIncrement.db(i), superop_n(g, i, x).matrix)
    for i in range(g.n):
        for k in range(g.n):
            expr._add_term(ItoIncrement.dlambda(i, k), superop_s(g, i, k, x).matrix)
    return expr
