"""Closed-form treatment of the coupling-feedback cavity.

The mode amplitude, its conjugate and the measured quadrature obey the
linear equation dx = A x dt + B du with

    x = (a~, a~†, Y),   A = [[-(γ/2 + iω), 0,          -√γ λ/2],
                             [0,           -(γ/2 - iω), -√γ λ/2],
                             [√γ,           √γ,           2λ   ]],

    B = [[-√γ, 0], [0, -√γ], [e^{iθ}, e^{-iθ}]].

det A = 2 ω² λ; at ω = 0 the spectrum is {0, -γ/2, -γ/2 + 2λ} and the
model is marginally stable for λ < γ/4.

Ground truth for the response kernels is the matrix exponential of A
(f, g, k are the first row of e^{At}; p, r come from the Y row), not the
printed scalar formulas: the printed f fails the initial condition
f(0) = 1 (it evaluates to 3/2 at λ = 0).  Both are computed and the
deviation is reported rather than silently patched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class DegenerateParameterError(ValueError):
    """Raised when printed-formula denominators degenerate."""


@dataclass(frozen=True)
class LinearModel:
    gamma: float
    lam: float
    omega: float
    theta: float
    A: np.ndarray
    B: np.ndarray


def build(gamma: float, lam: float, omega: float, theta: float) -> LinearModel:
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    rg = np.sqrt(gamma)
    A = np.array(
        [
            [-(0.5 * gamma + 1j * omega), 0.0, -0.5 * rg * lam],
            [0.0, -(0.5 * gamma - 1j * omega), -0.5 * rg * lam],
            [rg, rg, 2.0 * lam],
        ],
        dtype=complex,
    )
    B = np.array(
        [
            [-rg, 0.0],
            [0.0, -rg],
            [np.exp(1j * theta), np.exp(-1j * theta)],
        ],
        dtype=complex,
    )
    A.setflags(write=False)
    B.setflags(write=False)
    return LinearModel(gamma, lam, omega, theta, A, B)


def eigenvalues(model: LinearModel) -> np.ndarray:
    """Numeric spectrum of A, sorted by real part then imaginary part."""
    eigs = np.linalg.eigvals(model.A)
    order = np.lexsort((eigs.imag, eigs.real))
    return eigs[order]


def closed_form_eigenvalues(model: LinearModel) -> np.ndarray:
    """The ω = 0 spectrum {0, -γ/2, -γ/2 + 2λ} in that order."""
    if model.omega != 0.0:
        raise ValueError("closed-form eigenvalues require omega = 0")
    g, l = model.gamma, model.lam
    return np.array([0.0, -0.5 * g, -0.5 * g + 2.0 * l], dtype=complex)


def is_stable(model: LinearModel, tol: float = 1e-10) -> bool:
    """Marginal stability: one zero mode tolerated, all others decaying.

    At ω = 0 this is the strict condition λ < γ/4; the boundary case has a
    double zero eigenvalue and counts as unstable.
    """
    eigs = np.sort(np.linalg.eigvals(model.A).real)
    if eigs[-1] > tol:
        return False
    # the largest-real mode may sit at zero; every other must decay
    return bool(np.all(eigs[:-1] < -tol))


def propagator(model: LinearModel, t: float) -> np.ndarray:
    return scipy.linalg.expm(model.A * t)


def mean_evolution(model: LinearModel, x0, t_grid) -> np.ndarray:
    """First moments e^{At} x0 on the grid (vacuum input has zero mean)."""
    x0 = np.asarray(x0, dtype=complex)
    if x0.shape != (3,):
        raise ValueError("x0 must be a 3-vector (mode, conjugate, record)")
    return np.array([propagator(model, t) @ x0 for t in np.asarray(t_grid)])


@dataclass(frozen=True)
class KernelTable:
    """Oracle kernels, the printed closed forms, and their deviations."""

    t: np.ndarray
    f: np.ndarray
    g: np.ndarray
    k: np.ndarray
    p: np.ndarray
    r: np.ndarray
    printed: dict
    printed_deviation: dict


def _printed_kernels(model: LinearModel, t: np.ndarray) -> dict:
    g, l = model.gamma, model.lam
    d4, d2 = g - 4.0 * l, g - 2.0 * l
    if abs(d4) < 1e-12 or abs(d2) < 1e-12:
        which = "gamma - 4 lambda" if abs(d4) < 1e-12 else "gamma - 2 lambda"
        raise DegenerateParameterError(
            f"printed kernel denominator {which} degenerates for "
            f"gamma={g}, lambda={l}"
        )
    slow = np.exp(-(0.5 * g - 2.0 * l) * t)
    fast = np.exp(-0.5 * g * t)
    return {
        "f": -2.0 * l / d4 + (g / d2) * slow + 0.5 * fast,
        "g": -2.0 * l / d4 + (g / d2) * slow - 0.5 * fast,
        "k": (np.sqrt(g) * l / d4) * (slow - 1.0),
        "p": (-2.0 / d4) * (1.0 - slow),
        "r": (-1.0 / d4) * (g - 4.0 * l * slow),
    }


def kernels(model: LinearModel, t_grid) -> KernelTable:
    """Sampled response kernels f, g, k, p, r.

    Oracle definition: E(t) = e^{At} propagates initial data (a, a†, 0), so
    f = E00 and g = E01; the noise kernels are rows of e^{A(t-s)} B, which
    pin k = E02 (from the mode row, e^{iθ} k - √γ f) and p = -E20/√γ,
    r = E22 (from the record row, e^{iθ} r + γ p).  Requires ω = 0.
    """
    if model.omega != 0.0:
        raise ValueError("kernel table requires omega = 0")
    t = np.asarray(t_grid, dtype=float)
    props = np.array([propagator(model, ti) for ti in t])
    rg = np.sqrt(model.gamma)
    f = props[:, 0, 0]
    g = props[:, 0, 1]
    k = props[:, 0, 2]
    p = -props[:, 2, 0] / rg if model.gamma > 0 else np.zeros_like(t, dtype=complex)
    r = props[:, 2, 2]
    printed = _printed_kernels(model, t)
    oracle = {"f": f, "g": g, "k": k, "p": p, "r": r}
    deviation = {
        name: float(np.max(np.abs(oracle[name] - printed[name])))
        for name in printed
    }
    return KernelTable(t=t, f=f, g=g, k=k, p=p, r=r, printed=printed,
                       printed_deviation=deviation)
