"""Adapted SLH coefficients driven by a measurement record.

A :class:`ControlRecord` is the discrete-time record of quadrature or
counting increments.  Modulators turn the record into a scalar control
signal; coefficient builders attach those signals to operator slots,
producing a time/record-dependent triple.  All stochastic integrals are
left-point Riemann(-Stieltjes) sums on the record grid, and a coefficient
at step k sees increments with index < k only, so adaptedness is
structural rather than asserted.

The same signal objects evaluate three ways: scalar (one trajectory),
batched (vectorized across trajectories), and operator-valued (record
increments replaced by commuting collision-bin operators), which is what
ties the simulator and the dilation checks to one set of formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .operators import HilbertSpace, Operator, identity, zero
from .slh import SLHTriple


class RecordError(ValueError):
    """Raised for malformed control records."""


class ModulatorError(ValueError):
    """Raised for invalid modulator configuration or inputs."""


QUADRATURE = "quadrature"
COUNTING = "counting"


@dataclass(frozen=True)
class ControlRecord:
    """Time-ordered record increments on a uniform grid of step dt."""

    dt: float
    increments: np.ndarray
    kind: str = QUADRATURE

    def __post_init__(self):
        if self.dt <= 0:
            raise RecordError(f"record step must be positive, got {self.dt}")
        if self.kind not in (QUADRATURE, COUNTING):
            raise RecordError(f"unknown record kind {self.kind!r}")
        inc = np.array(self.increments, dtype=float, copy=True)
        if inc.ndim != 1:
            raise RecordError("increments must be a flat sequence")
        if self.kind == COUNTING and inc.size and not np.all(
            (inc == 0.0) | (inc == 1.0)
        ):
            raise RecordError("counting increments must be 0 or 1")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    def __len__(self) -> int:
        return self.increments.size

    @property
    def elapsed(self) -> float:
        return len(self) * self.dt

    def values(self) -> np.ndarray:
        """Accumulated record Z_k = sum of increments with index < k.

        Length len+1; values are sampled left-of-step.
        """
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    def prefix(self, k: int) -> "ControlRecord":
        return ControlRecord(self.dt, self.increments[:k], self.kind)


# ---------------------------------------------------------------------
# Modulators / signals
# ---------------------------------------------------------------------

class Modulator:
    """Causal map from record increments to a scalar signal W.

    ``value`` recomputes W_k from scratch; the batch_* methods advance one
    step at a time across a trajectory batch; ``operator`` substitutes
    commuting increment operators (collision-model dilation).  W at step k
    uses increments with index < k only.
    """

    def value(self, k: int, increments: np.ndarray, dt: float) -> float:
        state = self.batch_state(1, dt)
        for j in range(k):
            self.batch_advance(state, increments[j:j + 1])
        return float(self.batch_value(state)[0])

    def batch_state(self, n: int, dt: float) -> dict:
        raise NotImplementedError

    def batch_value(self, state: dict) -> np.ndarray:
        raise NotImplementedError

    def batch_advance(self, state: dict, inc: np.ndarray):
        raise NotImplementedError

    def weights(self, k: int, dt: float) -> np.ndarray:
        """For linear modulators: W_k = weights(k) . increments[:k]."""
        raise ModulatorError(f"{type(self).__name__} is not a linear modulator")

    def operator(self, k: int, inc_ops: Sequence[Operator], dt: float,
                 space: HilbertSpace) -> Operator:
        w = self.weights(k, dt)
        out = zero(space)
        for j in range(k):
            if w[j] != 0.0:
                out = out + w[j] * inc_ops[j]
        return out


class Proportional(Modulator):
    """W_k = Z_k, the accumulated record value."""

    def batch_state(self, n, dt):
        return {"z": np.zeros(n)}

    def batch_value(self, state):
        return state["z"]

    def batch_advance(self, state, inc):
        state["z"] = state["z"] + inc

    def weights(self, k, dt):
        return np.ones(k)


class Nonlinear(Modulator):
    """W_k = g(Z_k) for a pointwise real function g (ufunc-compatible)."""

    def __init__(self, g: Callable[[np.ndarray], np.ndarray]):
        self.g = g

    def batch_state(self, n, dt):
        return {"z": np.zeros(n)}

    def batch_value(self, state):
        return np.asarray(self.g(state["z"]), dtype=float)

    def batch_advance(self, state, inc):
        state["z"] = state["z"] + inc

    def operator(self, k, inc_ops, dt, space):
        # g applied by spectral calculus to the (Hermitian, commuting) sum
        acc = zero(space)
        for j in range(k):
            acc = acc + inc_ops[j]
        vals, vecs = np.linalg.eigh(acc.matrix)
        m = (vecs * self.g(vals)) @ vecs.conj().T
        return Operator(space, m)


class Convolution(Modulator):
    """Causal linear filter W_k = sum_{j<k} h((k-j) dt) dZ_j.

    The kernel is a sampled array, kernel[m] = h(m dt); lags beyond the
    sampled range contribute zero unless strict mode is on, in which case
    a too-short kernel raises.
    """

    def __init__(self, kernel: Sequence[float], strict: bool = False):
        self.kernel = np.asarray(kernel, dtype=float)
        if self.kernel.ndim != 1 or self.kernel.size == 0:
            raise ModulatorError("kernel must be a non-empty 1-d sample array")
        self.strict = strict

    def weights(self, k, dt):
        lags = np.arange(k, 0, -1)  # lag of increment j is k - j
        if self.strict and k and lags.max() >= self.kernel.size:
            raise ModulatorError(
                f"kernel ({self.kernel.size} samples) shorter than record "
                f"prefix ({k} steps) in strict mode"
            )
        w = np.zeros(k)
        ok = lags < self.kernel.size
        w[ok] = self.kernel[lags[ok]]
        return w

    def batch_state(self, n, dt):
        return {"hist": [], "n": n}

    def batch_value(self, state):
        k = len(state["hist"])
        w = self.weights(k, 0.0)
        out = np.zeros(state["n"])
        for j in range(k):
            if w[j] != 0.0:
                out += w[j] * state["hist"][j]
        return out

    def batch_advance(self, state, inc):
        state["hist"].append(np.array(inc, dtype=float))


class Pid(Modulator):
    """Discretized PID filter.

    Per-step signal increment dW_k = k_p Y_k dt + k_i (sum_{j<=k} Y_j dt) dt
    + k_d dY_k, accumulated into W_k = sum_{j<k} dW_j, so W at step k is
    causal even though the derivative term uses the newest increment.
    """

    def __init__(self, k_p: float, k_i: float, k_d: float):
        self.k_p = float(k_p)
        self.k_i = float(k_i)
        self.k_d = float(k_d)

    def batch_state(self, n, dt):
        # y = Y_j, iacc = sum_{i<=j} Y_i dt, w = W_j
        return {"y": np.zeros(n), "iacc": np.zeros(n), "w": np.zeros(n),
                "dt": dt}

    def batch_value(self, state):
        return state["w"]

    def batch_advance(self, state, inc):
        dt = state["dt"]
        dw = (self.k_p * state["y"] * dt + self.k_i * state["iacc"] * dt
              + self.k_d * inc)
        state["w"] = state["w"] + dw
        state["y"] = state["y"] + inc
        state["iacc"] = state["iacc"] + state["y"] * dt

    def weights(self, k, dt):
        # contribution of increment i to W_k = sum_{j<k} dW_j:
        #   proportional: k_p dt #{j : i < j < k}
        #   integral:     k_i dt^2 sum_{j<k} #{i' : i < i' <= j}
        #   derivative:   k_d
        i = np.arange(k)
        prop = self.k_p * dt * (k - 1 - i).clip(min=0)
        m = (k - 1 - i).clip(min=0)
        integ = self.k_i * dt * dt * m * (m + 1) / 2.0
        return prop + integ + self.k_d * np.ones(k)


class RunningTimeIntegral(Modulator):
    """Left Riemann sum of the accumulated record: I_k = dt sum_{j<k} Z_j."""

    def batch_state(self, n, dt):
        return {"z": np.zeros(n), "acc": np.zeros(n), "dt": dt}

    def batch_value(self, state):
        return state["acc"]

    def batch_advance(self, state, inc):
        state["acc"] = state["acc"] + state["dt"] * state["z"]
        state["z"] = state["z"] + inc

    def weights(self, k, dt):
        i = np.arange(k)
        return dt * (k - 1 - i).clip(min=0)


def modulate(m: Modulator, record: ControlRecord) -> np.ndarray:
    """Signal sequence W_k, k = 0..len(record)-1, sampled left-of-step."""
    state = m.batch_state(1, record.dt)
    out = np.empty(len(record))
    for k in range(len(record)):
        out[k] = m.batch_value(state)[0]
        m.batch_advance(state, record.increments[k:k + 1])
    return out


# ---------------------------------------------------------------------
# Controlled coefficients
# ---------------------------------------------------------------------

def _as_matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, Operator) else np.asarray(op, dtype=complex)


def _require_hermitian(op: Operator, name: str):
    if not op.is_hermitian(1e-12):
        raise ModulatorError(f"{name} must be Hermitian")


class ControlledCoefficients:
    """Adapted map (step k, record prefix) -> single-channel SLH triple."""

    record_kind: str = QUADRATURE
    metadata: str = ""

    def evaluate(self, k: int, record: ControlRecord) -> SLHTriple:
        raise NotImplementedError


@dataclass(frozen=True)
class AffineCoefficients(ControlledCoefficients):
    """Coefficients affine in scalar control signals.

    S = phase * I fixed, L = L0 + u_k L1 with u from one modulator, and
    H = H0 + sum_m v_mk H_m with each v from its own modulator.  This form
    covers the proportional / nonlinear / convolution Hamiltonian feedback,
    the coupling feedback and the PID coefficients, and is what both the
    batched simulator and the collision dilation consume.
    """

    space: HilbertSpace
    phase: complex = 1.0
    l0: np.ndarray = None
    l1: np.ndarray = None
    l1_modulator: Modulator = None
    h0: np.ndarray = None
    h_terms: tuple = ()
    record_kind: str = QUADRATURE
    metadata: str = ""

    def __post_init__(self):
        d = self.space.dim
        l0 = np.zeros((d, d), dtype=complex) if self.l0 is None else \
            np.asarray(self.l0, dtype=complex)
        h0 = np.zeros((d, d), dtype=complex) if self.h0 is None else \
            np.asarray(self.h0, dtype=complex)
        object.__setattr__(self, "l0", l0)
        object.__setattr__(self, "h0", h0)
        if self.l1 is not None:
            object.__setattr__(self, "l1", np.asarray(self.l1, dtype=complex))
        object.__setattr__(
            self, "h_terms",
            tuple((np.asarray(m, dtype=complex), sig) for m, sig in self.h_terms),
        )
        if abs(abs(complex(self.phase)) - 1.0) > 1e-12:
            raise ModulatorError("scattering phase must have unit modulus")

    def evaluate(self, k: int, record: ControlRecord) -> SLHTriple:
        if len(record) < k:
            raise RecordError(f"record prefix too short for step {k}")
        inc = record.increments
        l = self.l0
        if self.l1 is not None:
            u = self.l1_modulator.value(k, inc, record.dt)
            l = l + u * self.l1
        h = self.h0
        for mat, sig in self.h_terms:
            v = sig.value(k, inc, record.dt)
            h = h + v * mat
        s = complex(self.phase) * identity(self.space)
        return SLHTriple(((s,),), (Operator(self.space, l),),
                         Operator(self.space, h))


@dataclass(frozen=True)
class GenericCoefficients(ControlledCoefficients):
    """Arbitrary adapted coefficient map, wrapped for the slow paths."""

    fn: Callable[[int, ControlRecord], SLHTriple]
    record_kind: str = QUADRATURE
    metadata: str = ""

    def evaluate(self, k: int, record: ControlRecord) -> SLHTriple:
        if len(record) < k:
            raise RecordError(f"record prefix too short for step {k}")
        return self.fn(k, record.prefix(k))


@dataclass(frozen=True)
class OperatorKernelCoefficients(ControlledCoefficients):
    """Hamiltonian feedback through an operator-valued causal kernel.

    H at step k is sum_{j<k} F[k-j] dZ_j with F a lag-sampled list of
    Hermitian operators (F[m] stands for F(m dt)); S = I and L is fixed.
    """

    space: HilbertSpace
    kernel: tuple
    l0: np.ndarray
    h0: np.ndarray
    record_kind: str = QUADRATURE
    metadata: str = "hamiltonian_feedback(operator kernel)"

    def kernel_matrix(self, lag: int) -> np.ndarray | None:
        if 0 < lag < len(self.kernel):
            return self.kernel[lag]
        return None

    def evaluate(self, k: int, record: ControlRecord) -> SLHTriple:
        if len(record) < k:
            raise RecordError(f"record prefix too short for step {k}")
        h = self.h0.copy()
        for j in range(k):
            mat = self.kernel_matrix(k - j)
            if mat is not None:
                h = h + record.increments[j] * mat
        return SLHTriple(((identity(self.space),),),
                         (Operator(self.space, self.l0),),
                         Operator(self.space, h))


# ---------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------

def static_coefficients(g: SLHTriple) -> AffineCoefficients:
    """Wrap a fixed single-channel triple with scalar scattering phase."""
    if g.n != 1:
        raise ModulatorError("simulation coefficients need multiplicity 1")
    s = g.S[0][0].matrix
    phase = s[0, 0]
    if np.linalg.norm(s - phase * np.eye(g.space.dim)) > 1e-10:
        raise ModulatorError("scattering must be a scalar phase times identity")
    return AffineCoefficients(
        space=g.space, phase=phase, l0=g.L[0].matrix, h0=g.H.matrix,
        metadata="static",
    )


def hamiltonian_feedback(f, modulator: Modulator | None = None, *,
                         coupling: Operator | None = None,
                         hamiltonian: Operator | None = None,
                         phase: complex = 1.0,
                         record_kind: str = QUADRATURE):
    """Feedback to the Hamiltonian: H_t = H0 + F . W_t.

    ``f`` is a Hermitian operator and ``modulator`` produces W from the
    record (proportional, nonlinear, convolution, PID).  Alternatively
    ``f`` may be a lag-sampled sequence of Hermitian operators, giving the
    causal filter H_t = H0 + sum_{j<k} F[(k-j)] dZ_j with no modulator.
    """
    if isinstance(f, (list, tuple)):
        if modulator is not None:
            raise ModulatorError(
                "operator-valued kernel carries its own filtering; "
                "no modulator allowed"
            )
        ops = [op if isinstance(op, Operator) else None for op in f]
        if any(op is None for op in ops):
            raise ModulatorError("kernel entries must be Operators")
        space = ops[0].space
        for op in ops:
            _require_hermitian(op, "kernel entry")
        l0 = coupling.matrix if coupling is not None else \
            np.zeros((space.dim, space.dim))
        h0 = hamiltonian.matrix if hamiltonian is not None else \
            np.zeros((space.dim, space.dim))
        return OperatorKernelCoefficients(
            space=space, kernel=tuple(op.matrix for op in ops), l0=l0, h0=h0,
            record_kind=record_kind,
        )

    _require_hermitian(f, "feedback operator F")
    if modulator is None:
        modulator = Proportional()
    space = f.space
    l0 = coupling.matrix if coupling is not None else None
    h0 = hamiltonian.matrix if hamiltonian is not None else None
    if hamiltonian is not None:
        _require_hermitian(hamiltonian, "base Hamiltonian")
    return AffineCoefficients(
        space=space, phase=phase, l0=l0, h0=h0,
        h_terms=((f.matrix, modulator),),
        record_kind=record_kind,
        metadata=f"hamiltonian_feedback({type(modulator).__name__})",
    )


def coupling_feedback(gamma: float, lam: float, omega: float, theta: float,
                      dim: int) -> AffineCoefficients:
    """Cavity with record fed back into the coupling operator.

    At step k the triple is (e^{i theta} I, sqrt(gamma) a + lam Z_k I,
    omega a†a) on a mode truncated to ``dim`` levels.  Marginally stable
    for lam < gamma/4 at omega = 0.
    """
    if gamma < 0:
        raise ModulatorError(f"gamma must be >= 0, got {gamma}")
    from .operators import annihilator, number_op

    a = annihilator(dim)
    return AffineCoefficients(
        space=a.space,
        phase=np.exp(1j * theta),
        l0=np.sqrt(gamma) * a.matrix,
        l1=lam * np.eye(dim),
        l1_modulator=Proportional(),
        h0=omega * number_op(dim).matrix,
        metadata=f"coupling_feedback(gamma={gamma}, lambda={lam}, "
                 f"omega={omega}, theta={theta})",
    )


def pid_coefficients(l0: Operator, h0: Operator, f_p: Operator,
                     f_i: Operator, f_d: Operator) -> AffineCoefficients:
    """PID coefficient choice: derivative action through L, P and I through H.

    S = I, L = L0 - i F_D, H_t = H0 + (F_D L0 + L0† F_D)/2 + F_P Z_t
    + F_I (dt sum_{j<k} Z_j).  The quadrature output drift L + L† is then
    F_D-free by construction.
    """
    space = l0.space
    _require_hermitian(h0, "H0")
    for name, op in (("F_P", f_p), ("F_I", f_i), ("F_D", f_d)):
        _require_hermitian(op, name)
    l = l0.matrix - 1j * f_d.matrix
    h_base = h0.matrix + 0.5 * (
        f_d.matrix @ l0.matrix + l0.matrix.conj().T @ f_d.matrix
    )
    h_terms = []
    if np.linalg.norm(f_p.matrix) > 0:
        h_terms.append((f_p.matrix, Proportional()))
    if np.linalg.norm(f_i.matrix) > 0:
        h_terms.append((f_i.matrix, RunningTimeIntegral()))
    return AffineCoefficients(
        space=space, phase=1.0, l0=l, h0=h_base, h_terms=tuple(h_terms),
        metadata="pid_coefficients",
    )
