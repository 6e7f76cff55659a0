"""Monte-Carlo measurement-feedback trajectories, homodyne and counting.

Simulation runs in the output picture: the physical record is drawn
directly (vacuum-input statistics), and the coefficients for each step are
evaluated on the record prefix accumulated so far.  The integrator is
explicit Euler-Maruyama with post-step renormalization; acceptance-level
comparisons are first-moment checks with known O(dt) bias.

Trajectory i draws its noise from a counter-based Philox stream keyed by
(seed, i), so serial, chunked and threaded runs agree bit-exactly.  The
ensemble reducer processes fixed-size chunks and combines partial sums in
chunk-index order, which makes artifacts independent of thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import (
    COUNTING,
    QUADRATURE,
    AffineCoefficients,
    ControlRecord,
    ControlledCoefficients,
)
from .operators import Operator

CHUNK_SIZE = 1024  # fixed: chunk boundaries must not depend on thread count
JUMP_PROBABILITY_CAP = 0.1

HOMODYNE = "homodyne"
COUNTING_UNRAVELLING = "counting"


class JumpProbabilityError(RuntimeError):
    """Per-step jump probability exceeded the cap; dt is too coarse."""


class SimulationError(ValueError):
    """Raised for invalid simulation configuration or state."""


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    n_traj: int
    seed: int
    unravelling: str = HOMODYNE
    system_dim: int = 0
    observables: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise SimulationError(f"dt must be positive, got {self.dt}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise SimulationError(
                f"horizon T={self.T} is not an integral number of steps of {self.dt}"
            )
        if self.n_traj < 1:
            raise SimulationError("n_traj must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 63:
            raise SimulationError("seed must be a non-negative 63-bit integer")
        if self.unravelling not in (HOMODYNE, COUNTING_UNRAVELLING):
            raise SimulationError(f"unknown unravelling {self.unravelling!r}")
        mats = {}
        for name, op in self.observables.items():
            m = op.matrix if isinstance(op, Operator) else np.asarray(op, complex)
            if self.system_dim and m.shape != (self.system_dim, self.system_dim):
                raise SimulationError(
                    f"observable {name!r} has shape {m.shape}, expected "
                    f"({self.system_dim}, {self.system_dim})"
                )
            mats[name] = m
        object.__setattr__(self, "observables", mats)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class TrajectoryOutput:
    times: np.ndarray
    record: ControlRecord
    expectations: dict
    norm_drift: float
    seed: int
    traj_index: int


@dataclass(frozen=True)
class EnsembleResult:
    times: np.ndarray
    n_traj: int
    obs_mean: dict
    obs_sem_re: dict
    obs_sem_im: dict
    record_mean: np.ndarray
    record_sem: np.ndarray
    record_value_mean: np.ndarray
    record_value_sem: np.ndarray
    cross_mean: dict
    norm_drift_max: float
    seed: int
    unravelling: str
    dt: float

    def sigma_mc(self, name: str) -> np.ndarray:
        """Complex-combined Monte-Carlo error sqrt(sem_re^2 + sem_im^2)."""
        return np.hypot(self.obs_sem_re[name], self.obs_sem_im[name])


def _traj_noise(seed: int, key: int, n_steps: int, kind: str,
                dt: float) -> np.ndarray:
    """Pre-drawn noise for one trajectory from a Philox(seed, key) stream."""
    bits = np.random.Philox(key=(int(seed) + (int(key) << 64)))
    gen = np.random.Generator(bits)
    if kind == HOMODYNE:
        return gen.standard_normal(n_steps) * math.sqrt(dt)
    return gen.random(n_steps)


def _check_state(psi0: np.ndarray, dim: int) -> np.ndarray:
    psi = np.asarray(psi0, dtype=complex).reshape(-1)
    if dim and psi.size != dim:
        raise SimulationError(
            f"initial state has dim {psi.size}, expected {dim}"
        )
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise SimulationError("initial state must be normalized")
    return psi


class _ChunkAccumulator:
    """Running sums for one chunk, reduced in fixed trajectory order."""

    def __init__(self, obs_names, n_steps):
        self.obs_sum = {n: np.zeros(n_steps + 1, complex) for n in obs_names}
        self.obs_sumsq_re = {n: np.zeros(n_steps + 1) for n in obs_names}
        self.obs_sumsq_im = {n: np.zeros(n_steps + 1) for n in obs_names}
        self.cross_sum = {n: np.zeros(n_steps, complex) for n in obs_names}
        self.rec_sum = np.zeros(n_steps)
        self.rec_sumsq = np.zeros(n_steps)
        self.val_sum = np.zeros(n_steps + 1)
        self.val_sumsq = np.zeros(n_steps + 1)
        self.norm_drift = 0.0
        self.n = 0

    def add_obs(self, k, name, vals):
        self.obs_sum[name][k] += vals.sum()
        self.obs_sumsq_re[name][k] += (vals.real ** 2).sum()
        self.obs_sumsq_im[name][k] += (vals.imag ** 2).sum()

    def merge(self, other: "_ChunkAccumulator"):
        for n in self.obs_sum:
            self.obs_sum[n] += other.obs_sum[n]
            self.obs_sumsq_re[n] += other.obs_sumsq_re[n]
            self.obs_sumsq_im[n] += other.obs_sumsq_im[n]
            self.cross_sum[n] += other.cross_sum[n]
        self.rec_sum += other.rec_sum
        self.rec_sumsq += other.rec_sumsq
        self.val_sum += other.val_sum
        self.val_sumsq += other.val_sumsq
        self.norm_drift = max(self.norm_drift, other.norm_drift)
        self.n += other.n


def _affine_parts(coeffs: AffineCoefficients, dt: float):
    """Transposed/conjugated matrices for row-vector state updates."""
    parts = {
        "l0_t": coeffs.l0.T.copy(),
        "l0_c": coeffs.l0.conj().copy(),  # (L0†)^T, for the L† action
        "l1_t": None,
        "l1_c": None,
        "h_t": [],
        "h0_t": coeffs.h0.T.copy() if np.linalg.norm(coeffs.h0) > 0 else None,
    }
    if coeffs.l1 is not None:
        parts["l1_t"] = coeffs.l1.T.copy()
        parts["l1_c"] = coeffs.l1.conj().copy()
    for mat, sig in coeffs.h_terms:
        parts["h_t"].append((mat.T.copy(), sig))
    return parts


def _run_chunk(coeffs: AffineCoefficients, psi0: np.ndarray, cfg: SimConfig,
               idx0: int, n: int, keys, collect: bool):
    """Advance n trajectories (global indices idx0..) through all steps.

    Returns (accumulator, per-trajectory record matrix, series dict or None,
    per-trajectory norm drift).
    """
    kind = cfg.unravelling
    counting = kind == COUNTING_UNRAVELLING
    dt, n_steps = cfg.dt, cfg.n_steps
    psi = np.tile(psi0, (n, 1))
    noise = np.empty((n, n_steps))
    for row in range(n):
        noise[row] = _traj_noise(cfg.seed, keys[idx0 + row], n_steps, kind, dt)

    parts = _affine_parts(coeffs, dt)
    u_state = None
    if coeffs.l1 is not None:
        u_state = coeffs.l1_modulator.batch_state(n, dt)
    h_states = [sig.batch_state(n, dt) for _, sig in coeffs.h_terms]

    acc = _ChunkAccumulator(cfg.observables, n_steps)
    acc.n = n
    records = np.empty((n, n_steps))
    drift = np.zeros(n)
    zacc = np.zeros(n)  # accumulated record value, sampled left-of-step
    series = (
        {name: np.empty((n, n_steps + 1), complex) for name in cfg.observables}
        if collect else None
    )

    obs_items = list(cfg.observables.items())
    obs_t = [(name, m.T.copy()) for name, m in obs_items]

    for k in range(n_steps):
        u = None
        lpsi = psi @ parts["l0_t"]
        if coeffs.l1 is not None:
            u = coeffs.l1_modulator.batch_value(u_state)
            lpsi += (u[:, None]) * (psi @ parts["l1_t"])

        cur_obs = {}
        for name, m_t in obs_t:
            vals = np.einsum("ij,ij->i", psi.conj(), psi @ m_t)
            cur_obs[name] = vals
            acc.add_obs(k, name, vals)
            if collect:
                series[name][:, k] = vals

        hpsi = None
        if parts["h0_t"] is not None:
            hpsi = psi @ parts["h0_t"]
        for (m_t, sig), state in zip(parts["h_t"], h_states):
            v = sig.batch_value(state)
            term = (v[:, None]) * (psi @ m_t)
            hpsi = term if hpsi is None else hpsi + term

        ldlpsi = lpsi @ parts["l0_c"]
        if u is not None:
            ldlpsi += (u[:, None]) * (lpsi @ parts["l1_c"])

        if counting:
            p = np.einsum("ij,ij->i", lpsi.conj(), lpsi).real * dt
            pmax = p.max() if n else 0.0
            if pmax > JUMP_PROBABILITY_CAP:
                raise JumpProbabilityError(
                    f"jump probability {pmax:.3g} exceeds cap "
                    f"{JUMP_PROBABILITY_CAP} at step {k}; reduce dt"
                )
            jump = noise[:, k] < p
            dn = jump.astype(float)
            new = psi - 0.5 * dt * ldlpsi
            if hpsi is not None:
                new -= 1j * dt * hpsi
            nrm = np.sqrt(np.einsum("ij,ij->i", new.conj(), new).real)
            drift = np.maximum(drift, np.abs(nrm - 1.0))
            new /= nrm[:, None]
            if jump.any():
                jnorm = np.sqrt(
                    np.einsum("ij,ij->i", lpsi.conj(), lpsi).real
                )
                jpsi = lpsi / np.where(jnorm > 0, jnorm, 1.0)[:, None]
                new = np.where(jump[:, None], jpsi, new)
            psi = new
            increments = dn
        else:
            exp_drift = 2.0 * np.einsum("ij,ij->i", psi.conj(), lpsi).real
            dy = exp_drift * dt + noise[:, k]
            new = psi - 0.5 * dt * ldlpsi + dy[:, None] * lpsi
            if hpsi is not None:
                new -= 1j * dt * hpsi
            nrm = np.sqrt(np.einsum("ij,ij->i", new.conj(), new).real)
            drift = np.maximum(drift, np.abs(nrm - 1.0))
            psi = new / nrm[:, None]
            increments = dy

        records[:, k] = increments
        acc.rec_sum[k] += increments.sum()
        acc.rec_sumsq[k] += (increments ** 2).sum()
        acc.val_sum[k] += zacc.sum()
        acc.val_sumsq[k] += (zacc ** 2).sum()
        zacc = zacc + increments
        for name in cfg.observables:
            acc.cross_sum[name][k] += (cur_obs[name] * increments).sum()
        if u_state is not None:
            coeffs.l1_modulator.batch_advance(u_state, increments)
        for (_, sig), state in zip(parts["h_t"], h_states):
            sig.batch_advance(state, increments)

    for name, m_t in obs_t:
        vals = np.einsum("ij,ij->i", psi.conj(), psi @ m_t)
        acc.add_obs(n_steps, name, vals)
        if collect:
            series[name][:, n_steps] = vals
    acc.val_sum[n_steps] += zacc.sum()
    acc.val_sumsq[n_steps] += (zacc ** 2).sum()
    acc.norm_drift = float(drift.max()) if n else 0.0
    return acc, records, series, drift


def _run_generic_traj(coeffs: ControlledCoefficients, psi0: np.ndarray,
                      cfg: SimConfig, traj_index: int, key: int):
    """Reference per-trajectory loop calling coeffs.evaluate each step."""
    kind = cfg.unravelling
    counting = kind == COUNTING_UNRAVELLING
    dt, n_steps = cfg.dt, cfg.n_steps
    psi = psi0.copy()
    noise = _traj_noise(cfg.seed, key, n_steps, kind, dt)
    increments = np.zeros(n_steps)
    record_kind = COUNTING if counting else QUADRATURE
    series = {n: np.empty(n_steps + 1, complex) for n in cfg.observables}
    drift = 0.0

    for k in range(n_steps):
        rec = ControlRecord(dt, increments[:k], record_kind)
        g = coeffs.evaluate(k, rec)
        l, h = g.L[0].matrix, g.H.matrix
        for name, m in cfg.observables.items():
            series[name][k] = np.vdot(psi, m @ psi)
        lpsi = l @ psi
        if counting:
            p = float(np.vdot(lpsi, lpsi).real) * dt
            if p > JUMP_PROBABILITY_CAP:
                raise JumpProbabilityError(
                    f"jump probability {p:.3g} exceeds cap "
                    f"{JUMP_PROBABILITY_CAP} at step {k}; reduce dt"
                )
            if noise[k] < p:
                psi = lpsi / np.linalg.norm(lpsi)
                increments[k] = 1.0
            else:
                new = psi - dt * (1j * (h @ psi) + 0.5 * (l.conj().T @ lpsi))
                nrm = np.linalg.norm(new)
                drift = max(drift, abs(nrm - 1.0))
                psi = new / nrm
        else:
            dy = 2.0 * float(np.vdot(psi, lpsi).real) * dt + noise[k]
            new = psi + dy * lpsi - dt * (
                1j * (h @ psi) + 0.5 * (l.conj().T @ lpsi)
            )
            nrm = np.linalg.norm(new)
            drift = max(drift, abs(nrm - 1.0))
            psi = new / nrm
            increments[k] = dy
    for name, m in cfg.observables.items():
        series[name][n_steps] = np.vdot(psi, m @ psi)
    return increments, series, drift


def _default_keys(cfg: SimConfig, key_fn=None):
    if key_fn is None:
        return list(range(cfg.n_traj))
    return [int(key_fn(i)) for i in range(cfg.n_traj)]


def _simulate_one(coeffs, psi0, cfg, traj_index, kind):
    if cfg.unravelling != kind:
        cfg = SimConfig(cfg.dt, cfg.T, cfg.n_traj, cfg.seed, kind,
                        cfg.system_dim, cfg.observables)
    psi = _check_state(psi0, cfg.system_dim)
    record_kind = COUNTING if kind == COUNTING_UNRAVELLING else QUADRATURE
    if isinstance(coeffs, AffineCoefficients):
        _acc, records, series, drift = _run_chunk(
            coeffs, psi, cfg, 0, 1, [traj_index], collect=True
        )
        increments = records[0]
        out_series = {n: s[0] for n, s in series.items()}
        out_drift = float(drift[0])
    else:
        increments, out_series, out_drift = _run_generic_traj(
            coeffs, psi, cfg, traj_index, traj_index
        )
    return TrajectoryOutput(
        times=cfg.times,
        record=ControlRecord(cfg.dt, increments, record_kind),
        expectations=out_series,
        norm_drift=out_drift,
        seed=cfg.seed,
        traj_index=traj_index,
    )


def simulate_homodyne(coeffs: ControlledCoefficients, psi0, cfg: SimConfig,
                      traj_index: int = 0) -> TrajectoryOutput:
    """One diffusive (quadrature-measurement) trajectory.

    Per step: evaluate (S, L, H) on the record prefix, draw xi ~ N(0, dt),
    set dY = <L + L†> dt + xi, apply the Euler step
    psi <- psi + (-iH - L†L/2) psi dt + L psi dY, renormalize, and append
    dY to the record.  Scattering must be a scalar phase (it folds into
    the measured quadrature).
    """
    return _simulate_one(coeffs, psi0, cfg, traj_index, HOMODYNE)


def simulate_counting(coeffs: ControlledCoefficients, psi0, cfg: SimConfig,
                      traj_index: int = 0) -> TrajectoryOutput:
    """One photon-counting trajectory (jump unravelling).

    Per step the jump probability is p = <L†L> dt; with probability p the
    state collapses to L psi (normalized) and dN = 1, otherwise it evolves
    under (I - (iH + L†L/2) dt) and renormalizes.  The record of counts is
    what controlled coefficients see (the control process is the photon
    number).  A step with p > 0.1 raises: dt is too coarse.
    """
    return _simulate_one(coeffs, psi0, cfg, traj_index, COUNTING_UNRAVELLING)


def ensemble(coeffs: ControlledCoefficients, psi0, cfg: SimConfig,
             threads: int = 1, key_fn=None) -> EnsembleResult:
    """Mean/variance tables over cfg.n_traj trajectories.

    Deterministic for fixed (seed, cfg): chunking is fixed-size, each
    trajectory has its own counter-based stream, and partial sums combine
    in chunk order no matter how many worker threads run.
    """
    psi = _check_state(psi0, cfg.system_dim)
    keys = _default_keys(cfg, key_fn)
    n_steps = cfg.n_steps

    if isinstance(coeffs, AffineCoefficients):
        chunks = [
            (start, min(CHUNK_SIZE, cfg.n_traj - start))
            for start in range(0, cfg.n_traj, CHUNK_SIZE)
        ]

        def work(args):
            start, n = args
            acc, _, _, _ = _run_chunk(coeffs, psi, cfg, start, n, keys,
                                      collect=False)
            return acc

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                partials = list(pool.map(work, chunks))
        else:
            partials = [work(c) for c in chunks]
        total = partials[0]
        for acc in partials[1:]:
            total.merge(acc)
    else:
        total = _ChunkAccumulator(cfg.observables, n_steps)
        total.n = cfg.n_traj
        for i in range(cfg.n_traj):
            increments, series, drift = _run_generic_traj(
                coeffs, psi, cfg, i, keys[i]
            )
            for name, vals in series.items():
                total.obs_sum[name] += vals
                total.obs_sumsq_re[name] += vals.real ** 2
                total.obs_sumsq_im[name] += vals.imag ** 2
                total.cross_sum[name] += vals[:n_steps] * increments
            total.rec_sum += increments
            total.rec_sumsq += increments ** 2
            values = np.concatenate(([0.0], np.cumsum(increments)))
            total.val_sum += values
            total.val_sumsq += values ** 2
            total.norm_drift = max(total.norm_drift, drift)

    n = cfg.n_traj
    obs_mean, sem_re, sem_im, cross = {}, {}, {}, {}
    for name in cfg.observables:
        mean = total.obs_sum[name] / n
        obs_mean[name] = mean
        cross[name] = total.cross_sum[name] / n
        if n >= 2:
            var_re = (total.obs_sumsq_re[name] - n * mean.real ** 2) / (n - 1)
            var_im = (total.obs_sumsq_im[name] - n * mean.imag ** 2) / (n - 1)
            sem_re[name] = np.sqrt(np.clip(var_re, 0.0, None) / n)
            sem_im[name] = np.sqrt(np.clip(var_im, 0.0, None) / n)
        else:
            sem_re[name] = np.zeros(n_steps + 1)
            sem_im[name] = np.zeros(n_steps + 1)
    rec_mean = total.rec_sum / n
    val_mean = total.val_sum / n
    if n >= 2:
        rec_var = (total.rec_sumsq - n * rec_mean ** 2) / (n - 1)
        rec_sem = np.sqrt(np.clip(rec_var, 0.0, None) / n)
        val_var = (total.val_sumsq - n * val_mean ** 2) / (n - 1)
        val_sem = np.sqrt(np.clip(val_var, 0.0, None) / n)
    else:
        rec_sem = np.zeros(n_steps)
        val_sem = np.zeros(n_steps + 1)

    return EnsembleResult(
        times=cfg.times,
        n_traj=n,
        obs_mean=obs_mean,
        obs_sem_re=sem_re,
        obs_sem_im=sem_im,
        record_mean=rec_mean,
        record_sem=rec_sem,
        record_value_mean=val_mean,
        record_value_sem=val_sem,
        cross_mean=cross,
        norm_drift_max=total.norm_drift,
        seed=cfg.seed,
        unravelling=cfg.unravelling,
        dt=cfg.dt,
    )
