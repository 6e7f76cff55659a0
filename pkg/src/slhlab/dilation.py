"""Collision-model dilation: exact operator-level checks of the theory.

The field is discretized into N bins of dimension 2 or 3; step k applies
U_k = expm(sqrt(dt)(L_k b_k† - L_k† b_k) - i H_k dt) where L_k, H_k may
depend on the quadratures (or photon numbers) of bins j < k.  Because
those past-bin operators commute with everything a later step touches,
the record-invariance, non-demolition and picture-equivalence statements
hold exactly on the finite space, up to floating error, and can be
asserted at 1e-9.

Scattering is excluded from the dilation (scalar phases fold into the
definition of the measured quadrature), and step unitaries use a full
matrix exponential so unitarity is exact and only the continuum limit
carries O(dt) error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .control import (
    QUADRATURE,
    COUNTING,
    AffineCoefficients,
    ControlledCoefficients,
    OperatorKernelCoefficients,
)
from .operators import (
    DimensionError,
    HilbertSpace,
    Operator,
    annihilator,
    commutator,
    embed,
    expm,
    hermitian_basis,
    identity,
)

DEFAULT_DIM_CAP = 4096


class AdaptednessError(ValueError):
    """Coefficients at step k referenced bins >= k."""


@dataclass(frozen=True)
class CollisionConfig:
    n_bins: int
    bin_dim: int
    dt: float
    system_dim: int
    kind: str = QUADRATURE

    def __post_init__(self):
        if self.bin_dim not in (2, 3):
            raise DimensionError(f"bin dimension must be 2 or 3, got {self.bin_dim}")
        if self.n_bins < 1 or self.system_dim < 2:
            raise DimensionError("need at least one bin and a system of dim >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.total_dim > DEFAULT_DIM_CAP:
            raise DimensionError(
                f"collision space dim {self.total_dim} exceeds cap {DEFAULT_DIM_CAP}"
            )
        if self.kind not in (QUADRATURE, COUNTING):
            raise ValueError(f"unknown increment kind {self.kind!r}")

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.bin_dim ** self.n_bins

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace((self.system_dim,) + (self.bin_dim,) * self.n_bins)


def _bin_ladders(cfg: CollisionConfig) -> list[Operator]:
    b = annihilator(cfg.bin_dim)
    return [embed(b, cfg.space, 1 + j) for j in range(cfg.n_bins)]


def increment_operators(cfg: CollisionConfig) -> list[Operator]:
    """Bin increment operators: sqrt(dt)(b + b†) or b†b per bin."""
    ladders = _bin_ladders(cfg)
    if cfg.kind == QUADRATURE:
        return [np.sqrt(cfg.dt) * (b + b.dag) for b in ladders]
    return [b.dag @ b for b in ladders]


def _embed_system(cfg: CollisionConfig):
    space = cfg.space

    def embed_sys(mat) -> Operator:
        op = mat if isinstance(mat, Operator) else Operator(
            HilbertSpace((cfg.system_dim,)), mat
        )
        return embed(op, space, 0)

    return embed_sys


def step_coefficients(coeffs, cfg: CollisionConfig, k: int,
                      inc_ops: list[Operator]) -> tuple[Operator, Operator]:
    """Full-space (L_k, H_k) from the commuting past-bin increment operators.

    Only increment operators of bins < k are handed over, so adaptedness is
    structural for the built-in coefficient families; raw callables are
    checked against the later-bin ladders afterwards.
    """
    embed_sys = _embed_system(cfg)
    past = inc_ops[:k]
    if isinstance(coeffs, AffineCoefficients):
        if abs(complex(coeffs.phase) - 1.0) > 1e-12:
            raise ValueError(
                "the dilation excludes scattering; fold the scalar phase into "
                "the quadrature definition and build with theta = 0"
            )
        l_op = embed_sys(coeffs.l0)
        if coeffs.l1 is not None:
            u_op = coeffs.l1_modulator.operator(k, past, cfg.dt, cfg.space)
            l_op = l_op + embed_sys(coeffs.l1) @ u_op
        h_op = embed_sys(coeffs.h0)
        for mat, sig in coeffs.h_terms:
            v_op = sig.operator(k, past, cfg.dt, cfg.space)
            h_op = h_op + embed_sys(mat) @ v_op
        return l_op, h_op
    if isinstance(coeffs, OperatorKernelCoefficients):
        l_op = embed_sys(coeffs.l0)
        h_op = embed_sys(coeffs.h0)
        for j in range(k):
            mat = coeffs.kernel_matrix(k - j)
            if mat is not None:
                h_op = h_op + embed_sys(mat) @ past[j]
        return l_op, h_op
    if callable(coeffs):
        l_op, h_op = coeffs(k, past, embed_sys, cfg.dt)
        _assert_adapted(l_op, h_op, cfg, k)
        return l_op, h_op
    raise TypeError(
        f"cannot map {type(coeffs).__name__} onto collision coefficients"
    )


def _assert_adapted(l_op: Operator, h_op: Operator, cfg: CollisionConfig,
                    k: int):
    ladders = _bin_ladders(cfg)
    for j in range(k, cfg.n_bins):
        for op, name in ((l_op, "L"), (h_op, "H")):
            if commutator(op, ladders[j]).norm() > 1e-10:
                raise AdaptednessError(
                    f"{name} at step {k} acts on bin {j} (only bins < {k} "
                    f"are in its past)"
                )


def _step_unitaries(coeffs, cfg: CollisionConfig):
    """Per-step unitaries and coefficient operators, in time order."""
    inc_ops = increment_operators(cfg)
    ladders = _bin_ladders(cfg)
    rdt = np.sqrt(cfg.dt)
    steps = []
    for k in range(cfg.n_bins):
        l_op, h_op = step_coefficients(coeffs, cfg, k, inc_ops)
        b = ladders[k]
        gen = rdt * (l_op @ b.dag - l_op.dag @ b) - 1j * cfg.dt * h_op
        steps.append((expm(gen), l_op, h_op))
    return steps, inc_ops


def build_controlled_unitary(coeffs, cfg: CollisionConfig) -> Operator:
    """Total unitary U = U_N ... U_1 of the controlled collision chain."""
    steps, _ = _step_unitaries(coeffs, cfg)
    u = identity(cfg.space)
    for u_k, _, _ in steps:
        u = u_k @ u
    return u


@dataclass(frozen=True)
class NondemolitionReport:
    max_flow_commutator: float
    max_pairwise_commutator: float
    max_record_invariance: float
    unitarity_defect: float

    @property
    def max_defect(self) -> float:
        return max(self.max_flow_commutator, self.max_pairwise_commutator,
                   self.max_record_invariance, self.unitarity_defect)


def check_nondemolition(coeffs, cfg: CollisionConfig,
                        observables=None) -> NondemolitionReport:
    """Record observables commute with all later system observables.

    For each bin s the measured record operator is Y_s = U_s† dZ_s U_s with
    U_s the product of steps up to s.  Checks, in Frobenius norm: that the
    full-time conjugation U† dZ_s U equals Y_s (the record, once produced,
    never changes); that [j_T(X), Y_s] = 0 for a Hermitian operator basis X
    of the system; and that [Y_s, Y_s'] = 0 (commutative measurement
    algebra).
    """
    steps, inc_ops = _step_unitaries(coeffs, cfg)
    d = cfg.total_dim
    u = np.eye(d, dtype=complex)
    y = []
    for (u_k, _, _), dz in zip(steps, inc_ops):
        u = u_k.matrix @ u
        # u is now exactly the prefix through bin s's own collision
        y.append(u.conj().T @ dz.matrix @ u)
    u_full = u

    unitarity = float(np.linalg.norm(u_full.conj().T @ u_full - np.eye(d)))

    invariance = 0.0
    for s, dz in enumerate(inc_ops):
        via_full = u_full.conj().T @ dz.matrix @ u_full
        invariance = max(invariance, float(np.linalg.norm(via_full - y[s])))

    if observables is None:
        observables = hermitian_basis(cfg.system_dim)
    embed_sys = _embed_system(cfg)
    flow_comm = 0.0
    for x in observables:
        jx = u_full.conj().T @ embed_sys(np.asarray(x, complex)).matrix @ u_full
        for ys in y:
            c = jx @ ys - ys @ jx
            flow_comm = max(flow_comm, float(np.linalg.norm(c)))

    pairwise = 0.0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            c = y[i] @ y[j] - y[j] @ y[i]
            pairwise = max(pairwise, float(np.linalg.norm(c)))

    return NondemolitionReport(
        max_flow_commutator=flow_comm,
        max_pairwise_commutator=pairwise,
        max_record_invariance=invariance,
        unitarity_defect=unitarity,
    )


def check_picture_equivalence(coeffs, cfg: CollisionConfig) -> float:
    """Input-picture and output-picture compositions build the same unitary.

    U is assembled by left multiplication with step unitaries (coefficients
    in terms of the fed-in control operators); V multiplies from the right
    with step generators whose coefficient operators are conjugated by the
    evolution built so far (the measured-record form).  Returns ||U - V||_F.
    """
    steps, _ = _step_unitaries(coeffs, cfg)
    ladders = _bin_ladders(cfg)
    d = cfg.total_dim
    rdt = np.sqrt(cfg.dt)

    u = np.eye(d, dtype=complex)
    for u_k, _, _ in steps:
        u = u_k.matrix @ u

    v = np.eye(d, dtype=complex)
    for k, (_, l_op, h_op) in enumerate(steps):
        vd = v.conj().T
        l_tilde = vd @ l_op.matrix @ v
        h_tilde = vd @ h_op.matrix @ v
        b = ladders[k].matrix
        gen = rdt * (l_tilde @ b.conj().T - l_tilde.conj().T @ b) \
            - 1j * cfg.dt * h_tilde
        v = v @ scipy.linalg.expm(gen)
    return float(np.linalg.norm(u - v))


@dataclass(frozen=True)
class QuadratureResidualReport:
    dt: float
    residuals: np.ndarray
    drift_checked: bool

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def ratio(self) -> float:
        return self.max_residual / self.dt ** 1.5


def check_quadrature_consistency(coeffs, cfg: CollisionConfig,
                                 ) -> QuadratureResidualReport:
    """Per-bin residual of dY against dZ + (L~ + L~†) dt, order dt^{3/2}.

    dY_k = U_k† dZ_k U_k is compared with dZ_k plus the drift built from
    the pre-step-conjugated coupling operator.  The residual is measured on
    the bins-vacuum columns (the sector that survives the continuum limit)
    so that ladder-truncation artifacts at the top bin level do not mask
    the dt^{3/2} scaling; the reported ratio max residual / dt^{3/2} must
    stay bounded as dt is halved at fixed horizon.
    """
    if cfg.kind != QUADRATURE:
        raise ValueError("quadrature consistency needs quadrature increments")
    steps, inc_ops = _step_unitaries(coeffs, cfg)
    d = cfg.total_dim
    vac_cols = [i * cfg.bin_dim ** cfg.n_bins for i in range(cfg.system_dim)]

    u = np.eye(d, dtype=complex)
    residuals = []
    for k, (u_k, l_op, _) in enumerate(steps):
        pre = u  # evolution before this collision
        drift = pre.conj().T @ (l_op.matrix + l_op.matrix.conj().T) @ pre
        u = u_k.matrix @ u
        dy = u.conj().T @ inc_ops[k].matrix @ u
        resid = dy - inc_ops[k].matrix - cfg.dt * drift
        residuals.append(float(np.linalg.norm(resid[:, vac_cols])))
    return QuadratureResidualReport(
        dt=cfg.dt, residuals=np.array(residuals), drift_checked=True
    )
