"""Command-line interface: simulate, analyze-linear, verify-ito,
verify-dilation, compose.

Artifacts (CSV with 17-significant-digit numbers, JSON reports with a full
config echo, library version and seed) are written to --out, the
SLHLAB_OUT environment variable, or ./slhlab_out.  They are bit-identical
for identical (scenario, seed, version): thread count and wall-clock never
enter an artifact.

Exit codes: 0 success, 1 validation failure (with a field diagnostic),
2 numeric failure (jump-probability cap, defect above threshold).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .control import ControlRecord
from .ito import (
    coisometry_defect,
    generator_from_slh,
    increment_product,
    isometry_defect,
    ItoIncrement,
)
from .linear import (
    DegenerateParameterError,
    build as build_linear,
    closed_form_eigenvalues,
    eigenvalues,
    is_stable,
    kernels,
    mean_evolution,
)
from .dilation import (
    CollisionConfig,
    check_nondemolition,
    check_picture_equivalence,
    check_quadrature_consistency,
)
from .scenario import ScenarioError, load_scenario, matrix_to_json
from .slh import SLHTriple, concatenate, series_product
from .trajectories import JumpProbabilityError, SimConfig, ensemble

DEFECT_THRESHOLD = 1e-9
ISOMETRY_THRESHOLD = 1e-10


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _out_dir(args) -> str:
    out = args.out or os.environ.get("SLHLAB_OUT") or "slhlab_out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_csv(path: str, header: list[str], columns: list[np.ndarray]):
    rows = max(len(c) for c in columns) if columns else 0
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            cells = []
            for col in columns:
                cells.append(_fmt(col[i]) if i < len(col) else "0")
            fh.write(",".join(cells) + "\n")


def _write_json(path: str, payload: dict):
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _complex_pair(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


# ---------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["sim.seed"] = args.seed
    if args.dt is not None:
        overrides["sim.dt"] = args.dt
    scn = load_scenario(args.scenario, overrides)
    if scn.sim is None:
        raise ScenarioError("sim: missing table (required by simulate)")
    res = ensemble(scn.coefficients, scn.psi0, scn.sim, threads=args.threads)

    out = _out_dir(args)
    csv_path = os.path.join(out, f"{scn.name}_timeseries.csv")
    header = ["t"]
    columns = [res.times]
    for name in scn.sim.observables:
        header += [f"{name}_mean_re", f"{name}_mean_im",
                   f"{name}_sem_re", f"{name}_sem_im"]
        columns += [res.obs_mean[name].real, res.obs_mean[name].imag,
                    res.obs_sem_re[name], res.obs_sem_im[name]]
    header += ["record_value_mean", "record_value_sem",
               "record_mean", "record_sem"]
    columns += [res.record_value_mean, res.record_value_sem,
                res.record_mean, res.record_sem]
    _write_csv(csv_path, header, columns)

    report = {
        "command": "simulate",
        "version": __version__,
        "scenario": scn.raw,
        "seed": scn.sim.seed,
        "n_traj": res.n_traj,
        "unravelling": res.unravelling,
        "dt": res.dt,
        "norm_drift_max": res.norm_drift_max,
        "artifacts": {"timeseries": os.path.basename(csv_path)},
    }
    report_path = os.path.join(out, f"{scn.name}_report.json")
    _write_json(report_path, report)
    print(csv_path)
    print(report_path)
    return 0


# ---------------------------------------------------------------------
# analyze-linear
# ---------------------------------------------------------------------

def _cmd_analyze_linear(args) -> int:
    if args.gamma is None:
        raise ScenarioError("--gamma: required for analyze-linear")
    model = build_linear(args.gamma, getattr(args, "lambda"), args.omega,
                         args.theta)
    t = np.linspace(0.0, args.tmax, args.points)
    out = _out_dir(args)

    eigs = eigenvalues(model)
    report = {
        "command": "analyze-linear",
        "version": __version__,
        "parameters": {
            "gamma": args.gamma,
            "lambda": getattr(args, "lambda"),
            "omega": args.omega,
            "theta": args.theta,
        },
        "eigenvalues": [_complex_pair(z) for z in eigs],
        "det_A": _complex_pair(np.linalg.det(model.A)),
        "det_expected": 2.0 * args.omega ** 2 * getattr(args, "lambda"),
        "stable": is_stable(model),
    }
    if args.omega == 0.0:
        report["eigenvalues_closed_form"] = [
            float(z.real) for z in closed_form_eigenvalues(model)
        ]

    x0 = np.array([args.alpha, np.conj(args.alpha), 0.0], dtype=complex)
    means = mean_evolution(model, x0, t)
    means_path = os.path.join(out, "linear_means.csv")
    _write_csv(
        means_path,
        ["t", "mode_re", "mode_im", "mode_conj_re", "mode_conj_im",
         "record_re", "record_im"],
        [t, means[:, 0].real, means[:, 0].imag, means[:, 1].real,
         means[:, 1].imag, means[:, 2].real, means[:, 2].imag],
    )
    report["artifacts"] = {"means": os.path.basename(means_path)}

    if args.omega == 0.0:
        tab = kernels(model, t)
        kern_path = os.path.join(out, "linear_kernels.csv")
        _write_csv(
            kern_path,
            ["t", "f", "g", "k", "p", "r",
             "f_printed", "g_printed", "k_printed", "p_printed", "r_printed"],
            [t, tab.f.real, tab.g.real, tab.k.real, tab.p.real, tab.r.real,
             tab.printed["f"], tab.printed["g"], tab.printed["k"],
             tab.printed["p"], tab.printed["r"]],
        )
        report["printed_kernel_deviation"] = tab.printed_deviation
        report["artifacts"]["kernels"] = os.path.basename(kern_path)
    else:
        report["printed_kernel_deviation"] = None

    report_path = os.path.join(out, "linear_report.json")
    _write_json(report_path, report)
    print(report_path)
    return 0


# ---------------------------------------------------------------------
# verify-ito
# ---------------------------------------------------------------------

def _table_self_test() -> bool:
    incs = [ItoIncrement.dt()]
    for i in range(2):
        incs += [ItoIncrement.db(i), ItoIncrement.dbdag(i)]
        incs += [ItoIncrement.dlambda(i, j) for j in range(2)]

    def prod(a, b):
        return increment_product(a, b) if a is not None and b is not None \
            else None

    ok = all(
        prod(prod(x, y), z) == prod(x, prod(y, z))
        for x in incs for y in incs for z in incs
    )
    ok &= increment_product(ItoIncrement.db(0), ItoIncrement.dbdag(0)) \
        == ItoIncrement.dt()
    ok &= increment_product(ItoIncrement.dbdag(0), ItoIncrement.db(0)) is None
    return ok


def _random_triple(rng, dim, n):
    from .operators import HilbertSpace, Operator

    space = HilbertSpace((dim,))
    m = rng.standard_normal((n * dim, n * dim)) \
        + 1j * rng.standard_normal((n * dim, n * dim))
    q, r = np.linalg.qr(m)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    s = tuple(
        tuple(Operator(space, q[j * dim:(j + 1) * dim, k * dim:(k + 1) * dim])
              for k in range(n))
        for j in range(n)
    )
    l = tuple(
        Operator(space, rng.standard_normal((dim, dim))
                 + 1j * rng.standard_normal((dim, dim)))
        for _ in range(n)
    )
    h_m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = Operator(space, 0.5 * (h_m + h_m.conj().T))
    return SLHTriple(s, l, h)


def _cmd_verify_ito(args) -> int:
    rng = np.random.default_rng(args.seed)
    max_iso, max_coiso = 0.0, 0.0
    for _ in range(args.trials):
        dim = int(rng.integers(2, 7))
        n = int(rng.integers(1, 4))
        dg = generator_from_slh(_random_triple(rng, dim, n))
        max_iso = max(max_iso, isometry_defect(dg).max_coeff_norm())
        max_coiso = max(max_coiso, coisometry_defect(dg).max_coeff_norm())

    report = {
        "command": "verify-ito",
        "version": __version__,
        "seed": args.seed,
        "trials": args.trials,
        "table_self_test": _table_self_test(),
        "isometry_defect_max": max_iso,
        "coisometry_defect_max": max_coiso,
        "threshold": ISOMETRY_THRESHOLD,
    }

    if args.scenario:
        scn = load_scenario(args.scenario)
        g = scn.coefficients.evaluate(
            0, ControlRecord(1.0, np.zeros(0))
        )
        dg = generator_from_slh(g)
        report["scenario"] = scn.raw
        report["scenario_generator"] = dg.pretty()
        report["scenario_isometry_defect"] = \
            isometry_defect(dg).max_coeff_norm()
        report["scenario_coisometry_defect"] = \
            coisometry_defect(dg).max_coeff_norm()

    out = _out_dir(args)
    report_path = os.path.join(out, "ito_report.json")
    _write_json(report_path, report)
    print(report_path)

    passed = (
        report["table_self_test"]
        and max_iso < ISOMETRY_THRESHOLD
        and max_coiso < ISOMETRY_THRESHOLD
        and report.get("scenario_isometry_defect", 0.0) < ISOMETRY_THRESHOLD
        and report.get("scenario_coisometry_defect", 0.0) < ISOMETRY_THRESHOLD
    )
    if not passed:
        print("verify-ito: defect above threshold", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------
# verify-dilation
# ---------------------------------------------------------------------

def _cmd_verify_dilation(args) -> int:
    scn = load_scenario(args.scenario)
    if scn.dilation is None:
        raise ScenarioError("dilation: missing table (required by "
                            "verify-dilation)")
    cfg = CollisionConfig(
        n_bins=scn.dilation["n_bins"],
        bin_dim=scn.dilation["bin_dim"],
        dt=scn.dilation["dt"],
        system_dim=scn.system_dim,
        kind=scn.dilation["kind"],
    )
    nd = check_nondemolition(scn.coefficients, cfg)
    pe = check_picture_equivalence(scn.coefficients, cfg)
    report = {
        "command": "verify-dilation",
        "version": __version__,
        "scenario": scn.raw,
        "collision": {
            "n_bins": cfg.n_bins, "bin_dim": cfg.bin_dim, "dt": cfg.dt,
            "system_dim": cfg.system_dim, "kind": cfg.kind,
            "total_dim": cfg.total_dim,
        },
        "unitarity_defect": nd.unitarity_defect,
        "nondemolition_commutator_max": nd.max_flow_commutator,
        "record_commutativity_max": nd.max_pairwise_commutator,
        "record_invariance_max": nd.max_record_invariance,
        "picture_equivalence_defect": pe,
        "threshold": DEFECT_THRESHOLD,
    }
    if cfg.kind == "quadrature":
        qr = check_quadrature_consistency(scn.coefficients, cfg)
        report["quadrature_residual_max"] = qr.max_residual
        report["quadrature_residual_ratio"] = qr.ratio

    out = _out_dir(args)
    report_path = os.path.join(out, "dilation_report.json")
    _write_json(report_path, report)
    print(report_path)

    passed = (
        nd.max_defect < DEFECT_THRESHOLD and pe < DEFECT_THRESHOLD
    )
    if not passed:
        print("verify-dilation: defect above threshold", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------
# compose
# ---------------------------------------------------------------------

def _triple_to_json(g: SLHTriple) -> dict:
    return {
        "multiplicity": g.n,
        "S": [[matrix_to_json(g.S[j][k].matrix) for k in range(g.n)]
              for j in range(g.n)],
        "L": [matrix_to_json(g.L[j].matrix) for j in range(g.n)],
        "H": matrix_to_json(g.H.matrix),
    }


def _cmd_compose(args) -> int:
    scn_b = load_scenario(args.outer)
    scn_a = load_scenario(args.inner)
    if scn_b.static_triple is None or scn_a.static_triple is None:
        raise ScenarioError(
            "slh.builder: compose needs static triples in both scenarios"
        )
    try:
        if args.op == "series":
            composed = series_product(scn_b.static_triple, scn_a.static_triple)
        else:
            composed = concatenate(scn_b.static_triple, scn_a.static_triple)
    except ValueError as exc:
        raise ScenarioError(f"compose: {exc}")

    report = {
        "command": "compose",
        "version": __version__,
        "op": args.op,
        "outer": scn_b.raw,
        "inner": scn_a.raw,
        "result": _triple_to_json(composed),
    }
    out = _out_dir(args)
    report_path = os.path.join(out, "composed.json")
    _write_json(report_path, report)
    print(report_path)
    return 0


# ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slhlab",
        description="Controlled quantum stochastic flows: simulation, "
                    "algebra checks and the linear feedback model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a trajectory ensemble")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", default=None)
    sim.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    sim.add_argument("--dt", type=float, default=None,
                     help="override the scenario step")
    sim.add_argument("--threads", type=int, default=1)
    sim.set_defaults(fn=_cmd_simulate)

    lin = sub.add_parser("analyze-linear",
                         help="closed-form coupling-feedback model")
    lin.add_argument("--gamma", type=float, default=None)
    lin.add_argument("--lambda", dest="lambda", type=float, default=0.0)
    lin.add_argument("--omega", type=float, default=0.0)
    lin.add_argument("--theta", type=float, default=0.0)
    lin.add_argument("--alpha", type=float, default=1.0,
                     help="initial mode amplitude for the means table")
    lin.add_argument("--tmax", type=float, default=10.0)
    lin.add_argument("--points", type=int, default=201)
    lin.add_argument("--out", default=None)
    lin.set_defaults(fn=_cmd_analyze_linear)

    ito = sub.add_parser("verify-ito",
                         help="Ito table self-test and isometry defects")
    ito.add_argument("--scenario", default=None)
    ito.add_argument("--trials", type=int, default=50)
    ito.add_argument("--seed", type=int, default=20240817)
    ito.add_argument("--out", default=None)
    ito.set_defaults(fn=_cmd_verify_ito)

    dil = sub.add_parser("verify-dilation",
                         help="collision-model theorem checks")
    dil.add_argument("--scenario", required=True)
    dil.add_argument("--out", default=None)
    dil.set_defaults(fn=_cmd_verify_dilation)

    comp = sub.add_parser("compose",
                          help="series product or concatenation of triples")
    comp.add_argument("--op", choices=["series", "concat"], default="series")
    comp.add_argument("outer", help="scenario with the downstream system")
    comp.add_argument("inner", help="scenario with the upstream system")
    comp.add_argument("--out", default=None)
    comp.set_defaults(fn=_cmd_compose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DegenerateParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except JumpProbabilityError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
