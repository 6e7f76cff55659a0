import numpy as np
import pytest
import scipy.linalg

from slhlab.control import (
    ControlRecord,
    GenericCoefficients,
    Proportional,
    coupling_feedback,
    hamiltonian_feedback,
    pid_coefficients,
    static_coefficients,
)
from slhlab.linear import build as build_linear
from slhlab.linear import mean_evolution
from slhlab.operators import (
    HilbertSpace,
    Operator,
    annihilator,
    coherent_state,
    fock_state,
    identity,
    number_op,
    zero,
)
from slhlab.slh import SLHTriple
from slhlab.trajectories import (
    JumpProbabilityError,
    SimConfig,
    SimulationError,
    ensemble,
    simulate_counting,
    simulate_homodyne,
)


def cavity_triple(dim, gamma, omega=0.0):
    a = annihilator(dim)
    return SLHTriple(((identity(a.space),),), (np.sqrt(gamma) * a,),
                     omega * number_op(dim))


def vacuum_coeffs(dim=2):
    space = HilbertSpace((dim,))
    return static_coefficients(
        SLHTriple(((identity(space),),), (zero(space),), zero(space))
    )


def master_equation_mean(l, h, rho0, obs, times):
    """Exact Lindblad propagation of <obs>, row-major vectorization."""
    d = l.shape[0]
    eye = np.eye(d)
    ldl = l.conj().T @ l
    sup = (
        -1j * (np.kron(h, eye) - np.kron(eye, h.T))
        + np.kron(l, l.conj())
        - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    )
    out = []
    for t in times:
        rho = scipy.linalg.expm(sup * t) @ rho0.reshape(-1)
        out.append(np.trace(obs @ rho.reshape(d, d)))
    return np.array(out)


class TestConfigValidation:
    def test_non_integral_horizon_rejected(self):
        with pytest.raises(SimulationError):
            SimConfig(dt=0.3, T=1.0, n_traj=1, seed=1)

    def test_unnormalized_state_rejected(self):
        cfg = SimConfig(dt=0.1, T=0.5, n_traj=1, seed=1, system_dim=2)
        with pytest.raises(SimulationError):
            simulate_homodyne(vacuum_coeffs(), np.array([1.0, 1.0]), cfg)

    def test_observable_shape_checked(self):
        with pytest.raises(SimulationError):
            SimConfig(dt=0.1, T=0.5, n_traj=1, seed=1, system_dim=3,
                      observables={"a": annihilator(2)})


class TestVacuumHomodyne:
    def test_state_constant_and_record_driftless(self):
        dim = 2
        cfg = SimConfig(dt=0.01, T=1.0, n_traj=4000, seed=11, system_dim=dim,
                        observables={"n": number_op(dim)})
        res = ensemble(vacuum_coeffs(dim), fock_state(dim, 0), cfg)
        assert np.max(np.abs(res.obs_mean["n"])) < 1e-14
        assert res.norm_drift_max == 0.0
        # mean dY/dt compatible with zero at 3 sigma
        z = res.record_mean / np.where(res.record_sem > 0, res.record_sem, 1)
        assert np.max(np.abs(z)) < 4.0
        # random-walk variance: sum of per-step variances ~ T
        var_total = np.sum(res.record_sem ** 2) * cfg.n_traj
        assert var_total == pytest.approx(1.0, rel=0.1)


def superposition_state(dim):
    """Equal |0>+|1> superposition: conditioned trajectories genuinely
    diffuse (coherent states would make <a> deterministic under homodyne,
    leaving no MC scale for 3-sigma comparisons)."""
    psi = np.zeros(dim, dtype=complex)
    psi[0] = psi[1] = 1.0
    return psi / np.linalg.norm(psi)


class TestUncontrolledCavity:
    def test_mean_mode_decay(self):
        dim, gamma = 10, 1.0
        cfg = SimConfig(dt=1e-3, T=1.0, n_traj=2000, seed=7, system_dim=dim,
                        observables={"a": annihilator(dim)})
        coeffs = static_coefficients(cavity_triple(dim, gamma))
        psi0 = superposition_state(dim)
        a0 = annihilator(dim).expectation(psi0)
        res = ensemble(coeffs, psi0, cfg)
        expected = a0 * np.exp(-0.5 * gamma * res.times)
        err = np.abs(res.obs_mean["a"] - expected)
        sig = np.clip(res.sigma_mc("a"), 1e-6, None)
        # correlated path; check every 100th point at 3 sigma
        assert np.all((err / sig)[100::100] < 3.0)

    def test_detuned_cavity_rotates(self):
        dim, gamma, omega = 8, 0.5, 2.0
        cfg = SimConfig(dt=1e-3, T=1.0, n_traj=800, seed=3, system_dim=dim,
                        observables={"a": annihilator(dim)})
        coeffs = static_coefficients(cavity_triple(dim, gamma, omega))
        psi0 = superposition_state(dim)
        a0 = annihilator(dim).expectation(psi0)
        res = ensemble(coeffs, psi0, cfg)
        expected = a0 * np.exp(-(0.5 * gamma + 1j * omega) * res.times)
        err = np.abs(res.obs_mean["a"] - expected)
        sig = np.clip(res.sigma_mc("a"), 1e-6, None)
        assert np.all((err / sig)[100::100] < 3.5)


class TestCouplingFeedback:
    def test_ensemble_mean_matches_linear_oracle(self):
        gamma, lam, dim, alpha = 1.0, 0.15, 10, 0.8
        cfg = SimConfig(dt=1e-3, T=1.5, n_traj=3000, seed=21, system_dim=dim,
                        observables={"a": annihilator(dim)})
        coeffs = coupling_feedback(gamma, lam, 0.0, 0.0, dim=dim)
        res = ensemble(coeffs, coherent_state(dim, alpha), cfg)
        model = build_linear(gamma, lam, 0.0, 0.0)
        ref = mean_evolution(model, [alpha, alpha, 0.0], res.times)
        err_a = np.abs(res.obs_mean["a"] - ref[:, 0])
        sig_a = np.clip(res.sigma_mc("a"), 1e-6, None)
        assert np.all((err_a / sig_a)[::100] < 3.0)
        # mean record Y_t against the third linear component
        y_mean = np.concatenate(([0.0], np.cumsum(res.record_mean)))
        y_sem = np.sqrt(np.concatenate(([0.0], np.cumsum(res.record_sem ** 2))))
        err_y = np.abs(y_mean - ref[:, 2].real)
        assert np.all(err_y[100::100] < 3.0 * y_sem[100::100])

    def test_lambda_zero_statistically_matches_uncontrolled(self):
        dim, gamma = 8, 1.0
        obs = {"a": annihilator(dim)}
        psi0 = coherent_state(dim, 0.9)
        cfg_on = SimConfig(dt=2e-3, T=1.0, n_traj=1500, seed=5,
                           system_dim=dim, observables=obs)
        cfg_off = SimConfig(dt=2e-3, T=1.0, n_traj=1500, seed=6,
                            system_dim=dim, observables=obs)
        res_on = ensemble(coupling_feedback(gamma, 0.0, 0.0, 0.0, dim=dim),
                          psi0, cfg_on)
        res_off = ensemble(static_coefficients(cavity_triple(dim, gamma)),
                           psi0, cfg_off)
        diff = np.abs(res_on.obs_mean["a"] - res_off.obs_mean["a"])
        sig = np.hypot(res_on.sigma_mc("a"), res_off.sigma_mc("a"))
        assert np.all((diff / np.clip(sig, 1e-9, None))[::100] < 3.5)


class TestCounting:
    def test_no_coupling_means_no_jumps(self):
        dim = 3
        space = HilbertSpace((dim,))
        coeffs = static_coefficients(
            SLHTriple(((identity(space),),), (zero(space),),
                      0.7 * number_op(dim))
        )
        cfg = SimConfig(dt=0.01, T=1.0, n_traj=50, seed=2,
                        unravelling="counting", system_dim=dim,
                        observables={"n": number_op(dim)})
        res = ensemble(coeffs, fock_state(dim, 1), cfg)
        assert np.all(res.record_mean == 0.0)
        assert np.allclose(res.obs_mean["n"], 1.0, atol=1e-12)

    def test_single_photon_decay_statistics(self):
        dim, gamma, T = 3, 1.0, 2.0
        cfg = SimConfig(dt=1e-3, T=T, n_traj=2000, seed=13,
                        unravelling="counting", system_dim=dim,
                        observables={"n": number_op(dim)})
        coeffs = static_coefficients(cavity_triple(dim, gamma))
        res = ensemble(coeffs, fock_state(dim, 1), cfg)
        # at most one jump per trajectory: every step mean is a probability
        total_mean = np.sum(res.record_mean)
        expected = 1.0 - np.exp(-gamma * T)
        sigma = np.sqrt(expected * (1 - expected) / cfg.n_traj)
        assert abs(total_mean - expected) < 3.0 * sigma

    def test_jump_rate_matches_intensity(self):
        dim, gamma, T = 3, 1.0, 2.0
        n_op = number_op(dim)
        cfg = SimConfig(dt=1e-3, T=T, n_traj=2000, seed=17,
                        unravelling="counting", system_dim=dim,
                        observables={"n": n_op})
        coeffs = static_coefficients(cavity_triple(dim, gamma))
        res = ensemble(coeffs, fock_state(dim, 1), cfg)
        # block-averaged jump frequency vs gamma <n> dt within 3 sigma
        block = 200
        k = (len(res.record_mean) // block) * block
        freq = res.record_mean[:k].reshape(-1, block).sum(axis=1)
        intensity = gamma * res.obs_mean["n"][:k].real * cfg.dt
        pred = intensity.reshape(-1, block).sum(axis=1)
        sem = np.sqrt((res.record_sem[:k] ** 2).reshape(-1, block).sum(axis=1))
        assert np.all(np.abs(freq - pred) < 3.0 * np.clip(sem, 1e-9, None))

    def test_single_trajectory_record_is_binary(self):
        dim = 3
        cfg = SimConfig(dt=1e-3, T=1.0, n_traj=1, seed=23,
                        unravelling="counting", system_dim=dim)
        out = simulate_counting(
            static_coefficients(cavity_triple(dim, 1.0)), fock_state(dim, 1),
            cfg,
        )
        assert set(np.unique(out.record.increments)) <= {0.0, 1.0}
        assert out.record.kind == "counting"

    def test_probability_cap_raises(self):
        dim = 3
        cfg = SimConfig(dt=0.5, T=1.0, n_traj=1, seed=1,
                        unravelling="counting", system_dim=dim)
        coeffs = static_coefficients(cavity_triple(dim, 5.0))
        with pytest.raises(JumpProbabilityError):
            simulate_counting(coeffs, fock_state(dim, 1), cfg)

    def test_controlled_jump_rate_matches_record_dependent_intensity(self):
        # jump frequency of a record-controlled coupling tracks the current
        # <L†L> with L = sqrt(gamma) a + lam N_k built from the count record:
        # <L†L> = gamma<n> + 2 sqrt(gamma) lam N_k Re<a> + lam^2 N_k^2
        # lam kept small: the count-dependent coupling is self-exciting and
        # large gains push the per-step probability into the hard cap
        dim, gamma, lam = 6, 1.0, 0.15
        coeffs = coupling_feedback(gamma, lam, 0.0, 0.0, dim=dim)
        cfg = SimConfig(dt=2e-3, T=0.6, n_traj=300, seed=19,
                        unravelling="counting", system_dim=dim,
                        observables={"a": annihilator(dim),
                                     "n": number_op(dim)})
        psi0 = coherent_state(dim, 1.0)
        k_steps = cfg.n_steps
        freq = np.zeros(k_steps)
        intensity = np.zeros(k_steps)
        for i in range(cfg.n_traj):
            out = simulate_counting(coeffs, psi0, cfg, traj_index=i)
            inc = out.record.increments
            freq += inc
            counts = np.concatenate(([0.0], np.cumsum(inc)))[:-1]
            exp_a = out.expectations["a"][:k_steps].real
            exp_n = out.expectations["n"][:k_steps].real
            intensity += (
                gamma * exp_n
                + 2.0 * np.sqrt(gamma) * lam * counts * exp_a
                + lam ** 2 * counts ** 2
            ) * cfg.dt
        block = 100
        f_b = freq.reshape(-1, block).sum(axis=1) / cfg.n_traj
        i_b = intensity.reshape(-1, block).sum(axis=1) / cfg.n_traj
        sig = np.sqrt(np.maximum(i_b, 1e-12) / cfg.n_traj)
        assert np.all(np.abs(f_b - i_b) < 3.5 * sig)


class TestCrossPathConsistency:
    def test_affine_and_generic_paths_agree(self):
        # same noise stream through the batched kernel and the generic
        # per-step evaluate() loop
        dim, gamma, lam = 6, 1.0, 0.2
        affine = coupling_feedback(gamma, lam, 0.4, 0.0, dim=dim)

        def fn(k, record):
            return affine.evaluate(k, record)

        generic = GenericCoefficients(fn)
        obs = {"a": annihilator(dim), "n": number_op(dim)}
        cfg = SimConfig(dt=5e-3, T=0.5, n_traj=1, seed=37, system_dim=dim,
                        observables=obs)
        psi0 = coherent_state(dim, 0.7)
        for idx in (0, 5):
            out_a = simulate_homodyne(affine, psi0, cfg, traj_index=idx)
            out_g = simulate_homodyne(generic, psi0, cfg, traj_index=idx)
            assert np.allclose(out_a.record.increments,
                               out_g.record.increments, atol=1e-10)
            for name in obs:
                assert np.allclose(out_a.expectations[name],
                                   out_g.expectations[name], atol=1e-10)

    def test_counting_paths_agree(self):
        dim = 4
        affine = coupling_feedback(1.0, 0.0, 0.3, 0.0, dim=dim)
        generic = GenericCoefficients(lambda k, r: affine.evaluate(k, r),
                                      record_kind="counting")
        cfg = SimConfig(dt=2e-3, T=0.4, n_traj=1, seed=41,
                        unravelling="counting", system_dim=dim,
                        observables={"n": number_op(dim)})
        psi0 = fock_state(dim, 2)
        out_a = simulate_counting(affine, psi0, cfg)
        out_g = simulate_counting(generic, psi0, cfg)
        assert np.array_equal(out_a.record.increments,
                              out_g.record.increments)
        assert np.allclose(out_a.expectations["n"], out_g.expectations["n"],
                           atol=1e-10)


class TestPidSimulation:
    def test_derivative_feedback_matches_master_equation(self):
        # pure-D number-operator feedback is a static triple; the ensemble
        # mean must follow the exact Lindblad propagation of that triple
        dim, g0, k_d, alpha = 10, 1.0, 0.4, 0.6
        a = annihilator(dim)
        nil = zero(a.space)
        coeffs = pid_coefficients(
            np.sqrt(g0) * a, nil, nil, nil, k_d * number_op(dim)
        )
        cfg = SimConfig(dt=1e-3, T=1.0, n_traj=3000, seed=29, system_dim=dim,
                        observables={"a": a})
        psi0 = coherent_state(dim, alpha)
        res = ensemble(coeffs, psi0, cfg)
        g = coeffs.evaluate(0, ControlRecord(cfg.dt, np.zeros(0)))
        rho0 = np.outer(psi0, psi0.conj())
        sl = res.times[::200]
        ref = master_equation_mean(g.L[0].matrix, g.H.matrix, rho0, a.matrix,
                                   sl)
        err = np.abs(res.obs_mean["a"][::200] - ref)
        sig = np.clip(res.sigma_mc("a")[::200], 1e-6, None)
        assert np.all(err / sig < 3.5)


class TestEnsembleMachinery:
    def test_duplicated_keys_give_zero_variance(self):
        dim = 4
        coeffs = static_coefficients(cavity_triple(dim, 1.0))
        cfg = SimConfig(dt=0.01, T=0.2, n_traj=3, seed=55, system_dim=dim,
                        observables={"a": annihilator(dim)})
        res = ensemble(coeffs, coherent_state(dim, 0.5), cfg,
                       key_fn=lambda i: 0)
        # zero up to the cancellation floor of the streaming variance
        assert np.max(res.obs_sem_re["a"]) < 1e-7
        assert np.max(res.obs_sem_im["a"]) < 1e-7
        assert np.max(res.record_sem) < 1e-7

    def test_doubling_trajectories_halves_mc_variance(self):
        dim = 2
        coeffs = vacuum_coeffs(dim)
        psi0 = fock_state(dim, 0)
        base = dict(dt=0.01, T=0.5, seed=61, system_dim=dim,
                    observables={})
        res1 = ensemble(coeffs, psi0, SimConfig(n_traj=10000, **base))
        res2 = ensemble(coeffs, psi0, SimConfig(n_traj=20000, **base))
        ratio = np.mean(res2.record_sem ** 2) / np.mean(res1.record_sem ** 2)
        assert 0.5 * 0.8 < ratio < 0.5 * 1.2

    def test_thread_count_does_not_change_results(self):
        dim, gamma, lam = 6, 1.0, 0.2
        coeffs = coupling_feedback(gamma, lam, 0.0, 0.0, dim=dim)
        cfg = SimConfig(dt=5e-3, T=0.25, n_traj=2500, seed=71,
                        system_dim=dim, observables={"a": annihilator(dim)})
        psi0 = coherent_state(dim, 0.8)
        res1 = ensemble(coeffs, psi0, cfg, threads=1)
        res8 = ensemble(coeffs, psi0, cfg, threads=8)
        assert np.array_equal(res1.obs_mean["a"], res8.obs_mean["a"])
        assert np.array_equal(res1.record_mean, res8.record_mean)
        assert np.array_equal(res1.obs_sem_re["a"], res8.obs_sem_re["a"])
        assert res1.norm_drift_max == res8.norm_drift_max

    def test_trajectory_output_matches_ensemble_row(self):
        dim = 5
        coeffs = coupling_feedback(1.0, 0.1, 0.0, 0.0, dim=dim)
        cfg = SimConfig(dt=0.01, T=0.3, n_traj=1, seed=77, system_dim=dim,
                        observables={"a": annihilator(dim)})
        psi0 = coherent_state(dim, 0.6)
        out = simulate_homodyne(coeffs, psi0, cfg)
        res = ensemble(coeffs, psi0, cfg)
        assert np.array_equal(out.expectations["a"], res.obs_mean["a"])
        assert np.array_equal(out.record.increments, res.record_mean)


class TestNormDrift:
    def test_counting_drift_scales_linearly_in_dt(self):
        dim, gamma = 3, 1.0
        coeffs = static_coefficients(cavity_triple(dim, gamma))
        drifts = []
        for dt in (4e-3, 2e-3, 1e-3):
            cfg = SimConfig(dt=dt, T=0.512, n_traj=200, seed=83,
                            unravelling="counting", system_dim=dim)
            res = ensemble(coeffs, fock_state(dim, 2), cfg)
            drifts.append(res.norm_drift_max)
        r1 = drifts[0] / drifts[1]
        r2 = drifts[1] / drifts[2]
        assert 1.6 < r1 < 2.4 and 1.6 < r2 < 2.4

    def test_homodyne_drift_shrinks_with_dt(self):
        # stochastic per-step drift is O(sqrt(dt)); check it decays
        dim = 6
        coeffs = static_coefficients(cavity_triple(dim, 1.0))
        psi0 = coherent_state(dim, 0.8)
        drifts = []
        for dt in (4e-3, 1e-3, 2.5e-4):
            cfg = SimConfig(dt=dt, T=0.5, n_traj=100, seed=89,
                            system_dim=dim)
            drifts.append(ensemble(coeffs, psi0, cfg).norm_drift_max)
        assert drifts[0] > drifts[1] > drifts[2]
        assert drifts[0] / drifts[1] > 1.5 and drifts[1] / drifts[2] > 1.5
