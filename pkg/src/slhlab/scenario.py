"""Scenario files: TOML configuration for the command-line tools.

A scenario names the system, the (possibly controlled) SLH model, the
modulator, the initial state and the simulation grid.  Matrices are
nested arrays of [re, im] pairs.  Validation failures raise
:class:`ScenarioError` carrying the offending field path.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .control import (
    AffineCoefficients,
    Convolution,
    ControlledCoefficients,
    Modulator,
    Nonlinear,
    Pid,
    Proportional,
    coupling_feedback,
    hamiltonian_feedback,
    pid_coefficients,
    static_coefficients,
)
from .operators import (
    HilbertSpace,
    Operator,
    annihilator,
    coherent_state,
    fock_state,
    identity,
    number_op,
    zero,
)
from .slh import SLHTriple
from .trajectories import SimConfig


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the field path."""


def matrix_to_json(m: np.ndarray) -> list:
    m = np.asarray(m)
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def matrix_from_json(data, path: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a nested [re, im] array ({exc})")
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ScenarioError(
            f"{path}: expected shape (rows, cols, 2) of [re, im] pairs, "
            f"got {arr.shape}"
        )
    return arr[..., 0] + 1j * arr[..., 1]


def vector_from_json(data, path: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: not a [re, im] array ({exc})")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(f"{path}: expected shape (dim, 2), got {arr.shape}")
    return arr[:, 0] + 1j * arr[:, 1]


def _get(table: dict, key: str, path: str, required=True, default=None):
    if key not in table:
        if required:
            raise ScenarioError(f"{path}.{key}: missing required field")
        return default
    return table[key]


def _number(table, key, path, required=True, default=None, minimum=None):
    val = _get(table, key, path, required, default)
    if val is None:
        return None
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise ScenarioError(f"{path}.{key}: expected a number, got {val!r}")
    if minimum is not None and val < minimum:
        raise ScenarioError(f"{path}.{key}: must be >= {minimum}, got {val}")
    return float(val)


@dataclass
class Scenario:
    """Parsed and validated scenario with builders resolved."""

    name: str
    raw: dict
    system_dim: int
    coefficients: ControlledCoefficients
    psi0: np.ndarray
    sim: SimConfig | None
    dilation: dict | None
    static_triple: SLHTriple | None


_NONLINEAR_PRESETS = {
    "square": lambda z: z ** 2,
    "cube": lambda z: z ** 3,
    "tanh": np.tanh,
    "identity": lambda z: z,
}


def _build_modulator(table: dict, path: str) -> Modulator:
    name = _get(table, "name", path)
    if name == "proportional":
        return Proportional()
    if name == "nonlinear":
        preset = _get(table, "function", path)
        if preset in _NONLINEAR_PRESETS:
            return Nonlinear(_NONLINEAR_PRESETS[preset])
        if preset == "polynomial":
            coeffs = _get(table, "coefficients", path)
            arr = np.asarray(coeffs, dtype=float)
            return Nonlinear(lambda z, c=arr: np.polyval(c, z))
        raise ScenarioError(
            f"{path}.function: unknown preset {preset!r} "
            f"(square, cube, tanh, identity, polynomial)"
        )
    if name == "convolution":
        kernel = _get(table, "kernel", path)
        strict = bool(table.get("strict", False))
        try:
            return Convolution(np.asarray(kernel, dtype=float), strict=strict)
        except Exception as exc:
            raise ScenarioError(f"{path}.kernel: {exc}")
    if name == "pid":
        return Pid(
            _number(table, "k_p", path, required=False, default=0.0),
            _number(table, "k_i", path, required=False, default=0.0),
            _number(table, "k_d", path, required=False, default=0.0),
        )
    raise ScenarioError(f"{path}.name: unknown modulator {name!r}")


def _static_triple_from_table(table: dict, dim: int, path: str) -> SLHTriple:
    space = HilbertSpace((dim,))

    def op(key, required=True, default=None):
        data = _get(table, key, path, required=required)
        if data is None:
            return default
        m = matrix_from_json(data, f"{path}.{key}")
        if m.shape != (dim, dim):
            raise ScenarioError(
                f"{path}.{key}: shape {m.shape} does not match system dim {dim}"
            )
        return Operator(space, m)

    s = op("S", required=False, default=identity(space))
    l = op("L", required=False, default=zero(space))
    h = op("H", required=False, default=zero(space))
    g = SLHTriple(((s,),), (l,), h)
    if not g.is_valid(1e-10):
        raise ScenarioError(f"{path}: static triple fails validation")
    return g


def _hermitian_from_table(table, key, dim, path):
    data = _get(table, key, path)
    m = matrix_from_json(data, f"{path}.{key}")
    if m.shape != (dim, dim):
        raise ScenarioError(
            f"{path}.{key}: shape {m.shape} does not match system dim {dim}"
        )
    space = HilbertSpace((dim,))
    return Operator(space, m)


def _build_coefficients(raw: dict, dim: int):
    slh = raw.get("slh")
    if not isinstance(slh, dict):
        raise ScenarioError("slh: missing table")
    builder = _get(slh, "builder", "slh")
    static = None
    if builder == "static":
        static = _static_triple_from_table(slh, dim, "slh")
        return static_coefficients(static), static
    if builder == "coupling_feedback":
        gamma = _number(slh, "gamma", "slh", minimum=0.0)
        lam = _number(slh, "lambda", "slh", required=False, default=0.0)
        omega = _number(slh, "omega", "slh", required=False, default=0.0)
        theta = _number(slh, "theta", "slh", required=False, default=0.0)
        return coupling_feedback(gamma, lam, omega, theta, dim=dim), None
    if builder == "hamiltonian_feedback":
        f = _hermitian_from_table(slh, "F", dim, "slh")
        modulator = _build_modulator(raw.get("modulator", {}), "modulator")
        space = HilbertSpace((dim,))
        coupling = None
        if "L" in slh:
            coupling = Operator(space, matrix_from_json(slh["L"], "slh.L"))
        h0 = None
        if "H0" in slh:
            h0 = Operator(space, matrix_from_json(slh["H0"], "slh.H0"))
        try:
            coeffs = hamiltonian_feedback(f, modulator, coupling=coupling,
                                          hamiltonian=h0)
        except ValueError as exc:
            raise ScenarioError(f"slh.F: {exc}")
        return coeffs, None
    if builder == "pid":
        space = HilbertSpace((dim,))
        gamma = _number(slh, "gamma", "slh", required=False, default=None)
        if gamma is not None:
            l0 = np.sqrt(gamma) * annihilator(dim)
            omega = _number(slh, "omega", "slh", required=False, default=0.0)
            h0 = omega * number_op(dim)
        else:
            l0 = Operator(space, matrix_from_json(
                _get(slh, "L0", "slh"), "slh.L0"))
            h0 = Operator(space, matrix_from_json(
                _get(slh, "H0", "slh"), "slh.H0"))
        ops = {}
        for key in ("F_P", "F_I", "F_D"):
            if key in slh:
                ops[key] = _hermitian_from_table(slh, key, dim, "slh")
            else:
                ops[key] = zero(space)
        try:
            coeffs = pid_coefficients(l0, h0, ops["F_P"], ops["F_I"],
                                      ops["F_D"])
        except ValueError as exc:
            raise ScenarioError(f"slh: {exc}")
        return coeffs, None
    raise ScenarioError(f"slh.builder: unknown builder {builder!r}")


_CAVITY_OBSERVABLES = {
    "a": lambda d: annihilator(d).matrix,
    "adag": lambda d: annihilator(d).dag.matrix,
    "n": lambda d: number_op(d).matrix,
    "x": lambda d: annihilator(d).matrix + annihilator(d).dag.matrix,
    "p": lambda d: -1j * (annihilator(d).matrix - annihilator(d).dag.matrix),
}


def _resolve_observables(raw: dict, dim: int) -> dict:
    names = raw.get("sim", {}).get("observables", [])
    custom = raw.get("observable_matrices", {})
    out = {}
    for name in names:
        if name in custom:
            m = matrix_from_json(custom[name], f"observable_matrices.{name}")
            if m.shape != (dim, dim):
                raise ScenarioError(
                    f"observable_matrices.{name}: shape {m.shape} does not "
                    f"match system dim {dim}"
                )
            out[name] = m
        elif name in _CAVITY_OBSERVABLES:
            out[name] = _CAVITY_OBSERVABLES[name](dim)
        else:
            raise ScenarioError(
                f"sim.observables: unknown observable {name!r} (declare it "
                f"under [observable_matrices])"
            )
    return out


def _build_initial(raw: dict, dim: int) -> np.ndarray:
    table = raw.get("initial", {"kind": "fock", "n": 0})
    kind = _get(table, "kind", "initial")
    if kind == "fock":
        n = table.get("n", 0)
        if not isinstance(n, int) or not 0 <= n < dim:
            raise ScenarioError(
                f"initial.n: Fock level must be an integer in [0, {dim})"
            )
        return fock_state(dim, n)
    if kind == "coherent":
        alpha = table.get("alpha", 0.0)
        if isinstance(alpha, (list, tuple)) and len(alpha) == 2:
            alpha = complex(alpha[0], alpha[1])
        elif isinstance(alpha, (int, float)):
            alpha = complex(alpha)
        else:
            raise ScenarioError("initial.alpha: expected number or [re, im]")
        return coherent_state(dim, alpha)
    if kind == "superposition":
        # equal-weight superposition of listed Fock levels
        levels = table.get("levels", [0, 1])
        psi = np.zeros(dim, dtype=complex)
        for lv in levels:
            if not isinstance(lv, int) or not 0 <= lv < dim:
                raise ScenarioError(
                    f"initial.levels: level {lv!r} outside [0, {dim})"
                )
            psi[lv] = 1.0
        return psi / np.linalg.norm(psi)
    if kind == "custom":
        psi = vector_from_json(_get(table, "vector", "initial"),
                               "initial.vector")
        if psi.size != dim:
            raise ScenarioError(
                f"initial.vector: dim {psi.size} does not match system {dim}"
            )
        nrm = np.linalg.norm(psi)
        if abs(nrm - 1.0) > 1e-10:
            raise ScenarioError("initial.vector: state must be normalized")
        return psi
    raise ScenarioError(f"initial.kind: unknown kind {kind!r}")


def parse_scenario(raw: dict) -> Scenario:
    name = raw.get("name", "scenario")
    system = raw.get("system", {})
    kind = system.get("kind", "cavity")
    if kind == "qubit":
        dim = 2
    elif kind in ("cavity", "custom"):
        dim = system.get("dim")
        if not isinstance(dim, int) or dim < 2:
            raise ScenarioError("system.dim: integer dimension >= 2 required")
    else:
        raise ScenarioError(f"system.kind: unknown kind {kind!r}")

    coefficients, static = _build_coefficients(raw, dim)
    psi0 = _build_initial(raw, dim)

    sim_cfg = None
    if "sim" in raw:
        sim = raw["sim"]
        seed = _get(sim, "seed", "sim")
        if not isinstance(seed, int):
            raise ScenarioError("sim.seed: explicit integer seed required "
                                "(no implicit entropy)")
        try:
            sim_cfg = SimConfig(
                dt=_number(sim, "dt", "sim", minimum=0.0),
                T=_number(sim, "T", "sim", minimum=0.0),
                n_traj=int(_number(sim, "n_traj", "sim", minimum=1)),
                seed=seed,
                unravelling=sim.get("unravelling", "homodyne"),
                system_dim=dim,
                observables=_resolve_observables(raw, dim),
            )
        except ValueError as exc:
            raise ScenarioError(f"sim: {exc}")

    dilation = None
    if "dilation" in raw:
        dil = raw["dilation"]
        dilation = {
            "n_bins": int(_number(dil, "n_bins", "dilation", minimum=1)),
            "bin_dim": int(_number(dil, "bin_dim", "dilation", minimum=2)),
            "dt": _number(dil, "dt", "dilation", minimum=0.0),
            "kind": dil.get("kind", "quadrature"),
        }

    return Scenario(
        name=str(name), raw=raw, system_dim=dim, coefficients=coefficients,
        psi0=psi0, sim=sim_cfg, dilation=dilation, static_triple=static,
    )


def load_scenario(path: str, overrides: dict | None = None) -> Scenario:
    """Read a TOML scenario file, apply flat overrides, parse and validate."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: TOML parse error: {exc}")
    if overrides:
        for dotted, value in overrides.items():
            table = raw
            parts = dotted.split(".")
            for part in parts[:-1]:
                table = table.setdefault(part, {})
            table[parts[-1]] = value
    return parse_scenario(raw)
