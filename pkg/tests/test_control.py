import numpy as np
import pytest

from slhlab.control import (
    AffineCoefficients,
    ControlRecord,
    Convolution,
    GenericCoefficients,
    ModulatorError,
    Nonlinear,
    Pid,
    Proportional,
    RecordError,
    RunningTimeIntegral,
    coupling_feedback,
    hamiltonian_feedback,
    modulate,
    pid_coefficients,
    static_coefficients,
)
from slhlab.operators import (
    HilbertSpace,
    Operator,
    annihilator,
    identity,
    number_op,
    zero,
)
from slhlab.slh import SLHTriple, validate

from conftest import random_hermitian


def quad_record(incs, dt=0.1):
    return ControlRecord(dt, np.asarray(incs, dtype=float))


class TestControlRecord:
    def test_values_are_left_of_step(self):
        rec = quad_record([1.0, 1.0, -1.0])
        assert np.allclose(rec.values(), [0.0, 1.0, 2.0, 1.0])

    def test_counting_increments_validated(self):
        ControlRecord(0.1, np.array([0.0, 1.0, 0.0]), kind="counting")
        with pytest.raises(RecordError):
            ControlRecord(0.1, np.array([0.0, 2.0]), kind="counting")

    def test_elapsed(self):
        assert quad_record([1.0] * 5, dt=0.2).elapsed == pytest.approx(1.0)


class TestModulators:
    def test_proportional_cumulative_sum(self):
        w = modulate(Proportional(), quad_record([1.0, 1.0, -1.0]))
        assert np.allclose(w, [0.0, 1.0, 2.0])

    def test_nonlinear_square(self):
        rec = quad_record([2.0, 0.0, 1.0])
        w = modulate(Nonlinear(lambda z: z ** 2), rec)
        assert np.allclose(w, [0.0, 4.0, 4.0])

    def test_convolution_lag_one_delta_shifts_increments(self):
        rec = quad_record([3.0, -1.0, 2.0, 5.0])
        w = modulate(Convolution([0.0, 1.0]), rec)
        assert np.allclose(w, [0.0, 3.0, -1.0, 2.0])

    def test_convolution_heaviside_reproduces_cumsum(self):
        rec = quad_record([3.0, -1.0, 2.0, 5.0])
        w = modulate(Convolution(np.ones(16)), rec)
        assert np.allclose(w, modulate(Proportional(), rec))

    def test_convolution_strict_kernel_too_short(self):
        rec = quad_record([1.0] * 5)
        with pytest.raises(ModulatorError):
            modulate(Convolution([0.0, 1.0], strict=True), rec)
        # non-strict mode zero-pads
        w = modulate(Convolution([0.0, 1.0], strict=False), rec)
        assert np.allclose(w, [0.0, 1.0, 1.0, 1.0, 1.0])

    def test_pid_proportional_part_matches_rate(self):
        # with k_i = k_d = 0: dW_k / dt = k_p * (proportional signal)_k
        rec = quad_record([0.5, -0.2, 0.9, 0.1], dt=0.05)
        k_p = 1.7
        w = modulate(Pid(k_p, 0.0, 0.0), rec)
        w_prop = modulate(Proportional(), rec)
        assert np.allclose(np.diff(w) / rec.dt, k_p * w_prop[:-1])

    def test_pid_weights_match_incremental(self):
        rec = quad_record([0.5, -0.2, 0.9, 0.1, -0.7], dt=0.05)
        m = Pid(0.8, 0.3, 1.1)
        w = modulate(m, rec)
        for k in range(len(rec)):
            assert w[k] == pytest.approx(
                float(m.weights(k, rec.dt) @ rec.increments[:k]), abs=1e-14
            )

    def test_running_time_integral(self):
        rec = quad_record([1.0, 1.0, 0.0], dt=0.5)
        w = modulate(RunningTimeIntegral(), rec)
        # Z = (0, 1, 2); I_k = dt * sum_{j<k} Z_j
        assert np.allclose(w, [0.0, 0.0, 0.5])

    def test_linear_weights_match_values(self):
        rec = quad_record([0.3, -1.2, 0.4, 2.0], dt=0.1)
        for m in (Proportional(), Convolution([0.0, 0.5, 0.25]),
                  RunningTimeIntegral()):
            for k in range(len(rec) + 1):
                direct = m.value(k, rec.increments, rec.dt)
                via_w = float(m.weights(k, rec.dt) @ rec.increments[:k])
                assert direct == pytest.approx(via_w, abs=1e-14)


class TestHamiltonianFeedback:
    def test_zero_record_reduces_to_uncontrolled(self, rng):
        space = HilbertSpace((3,))
        f = Operator(space, random_hermitian(rng, 3))
        l = Operator(space, rng.standard_normal((3, 3)) * 1.0j)
        coeffs = hamiltonian_feedback(f, Proportional(), coupling=l)
        rec = quad_record(np.zeros(4))
        g = coeffs.evaluate(4, rec)
        assert g.H.norm() == 0.0
        assert g.L[0].isclose(l, 1e-14)

    def test_nonlinear_square_value(self, rng):
        space = HilbertSpace((2,))
        f = Operator(space, random_hermitian(rng, 2))
        coeffs = hamiltonian_feedback(f, Nonlinear(lambda z: z ** 2))
        rec = quad_record([2.0, 0.0])
        g = coeffs.evaluate(2, rec)
        assert g.H.isclose(4.0 * f, 1e-13)

    def test_factorized_kernel_is_convolution_of_increments(self, rng):
        # F(t) = F h(t) gives H_t = F * (h ⋆ dZ)_t
        space = HilbertSpace((2,))
        f = Operator(space, random_hermitian(rng, 2))
        h = [0.0, 0.7, 0.2, 0.1]
        coeffs = hamiltonian_feedback(f, Convolution(h))
        rec = quad_record([1.0, -2.0, 0.5, 0.3], dt=0.1)
        k = 4
        expected = sum(h[k - j] * rec.increments[j] for j in range(k) if k - j < len(h))
        g = coeffs.evaluate(k, rec)
        assert g.H.isclose(expected * f, 1e-13)

    def test_operator_kernel_variant(self, rng):
        space = HilbertSpace((2,))
        f0 = Operator(space, random_hermitian(rng, 2))
        f1 = Operator(space, random_hermitian(rng, 2))
        coeffs = hamiltonian_feedback([zero(space), f0, f1])
        rec = quad_record([1.0, -1.0, 2.0])
        g = coeffs.evaluate(3, rec)
        # H = dZ_2 F[1] + dZ_1 F[2] (lag 3 beyond kernel)
        expected = 2.0 * f0 + (-1.0) * f1
        assert g.H.isclose(expected, 1e-13)

    def test_rejects_non_hermitian_f(self, rng):
        space = HilbertSpace((2,))
        f = Operator(space, [[0, 1], [0, 0]])
        with pytest.raises(ModulatorError):
            hamiltonian_feedback(f, Proportional())


class TestCouplingFeedback:
    def test_lambda_zero_is_uncontrolled_cavity(self):
        coeffs = coupling_feedback(1.0, 0.0, 0.5, 0.0, dim=4)
        rec = quad_record([1.0, -2.0, 3.0])
        g = coeffs.evaluate(3, rec)
        assert g.L[0].isclose(annihilator(4), 1e-14)
        assert g.H.isclose(0.5 * number_op(4), 1e-14)

    def test_zero_record_keeps_bare_coupling(self):
        coeffs = coupling_feedback(2.0, 0.3, 0.0, 0.0, dim=3)
        rec = quad_record(np.zeros(5))
        for k in range(6):
            g = coeffs.evaluate(k, rec)
            assert g.L[0].isclose(np.sqrt(2.0) * annihilator(3), 1e-14)

    def test_accumulated_record_enters_coupling(self):
        lam = 0.1
        coeffs = coupling_feedback(1.0, lam, 0.0, 0.0, dim=3)
        rec = quad_record([1.0, 1.0, -1.0])
        g = coeffs.evaluate(2, rec)
        expected = annihilator(3) + lam * 2.0 * identity(3)
        assert g.L[0].isclose(expected, 1e-14)

    def test_stable_parameters_accepted_and_validated(self):
        coeffs = coupling_feedback(1.0, 0.1, 0.0, 0.0, dim=3)
        assert 0.1 < 0.25  # stability margin lam < gamma/4 for these params
        rec = quad_record([0.5, -0.5, 1.5])
        for k in range(4):
            assert validate(coeffs.evaluate(k, rec), 1e-10)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ModulatorError):
            coupling_feedback(-1.0, 0.0, 0.0, 0.0, dim=3)


class TestPidCoefficients:
    def setup_method(self):
        self.space = HilbertSpace((3,))
        self.a = annihilator(3)
        self.l0 = np.sqrt(0.8) * self.a
        self.h0 = 0.4 * number_op(3)

    def test_all_zero_gains_give_bare_triple(self):
        nil = zero(self.space)
        coeffs = pid_coefficients(self.l0, self.h0, nil, nil, nil)
        g = coeffs.evaluate(3, quad_record([1.0, 2.0, 3.0]))
        assert g.L[0].isclose(self.l0, 1e-14)
        assert g.H.isclose(self.h0, 1e-14)

    def test_derivative_only_static_triple(self, rng):
        f_d = Operator(self.space, random_hermitian(rng, 3))
        nil = zero(self.space)
        coeffs = pid_coefficients(self.l0, self.h0, nil, nil, f_d)
        g = coeffs.evaluate(4, quad_record(np.zeros(4)))
        assert g.L[0].isclose(self.l0 - 1j * f_d, 1e-14)
        expected_h = self.h0 + 0.5 * (f_d @ self.l0 + self.l0.dag @ f_d)
        assert g.H.isclose(expected_h, 1e-13)

    def test_quadrature_drift_is_derivative_free(self, rng):
        # L + L† must not contain F_D
        f_d = Operator(self.space, random_hermitian(rng, 3))
        nil = zero(self.space)
        coeffs = pid_coefficients(self.l0, self.h0, nil, nil, f_d)
        rec = quad_record(rng.standard_normal(6))
        g = coeffs.evaluate(6, rec)
        drift = g.L[0] + g.L[0].dag
        assert drift.isclose(self.l0 + self.l0.dag, 1e-13)

    def test_matches_proportional_hamiltonian_feedback(self, rng):
        # PID with only F_P equals hamiltonian_feedback with Proportional
        f_p = Operator(self.space, random_hermitian(rng, 3))
        nil = zero(self.space)
        pid = pid_coefficients(self.l0, Operator(self.space, self.h0.matrix),
                               f_p, nil, nil)
        prop = hamiltonian_feedback(
            f_p, Proportional(), coupling=self.l0,
            hamiltonian=Operator(self.space, self.h0.matrix),
        )
        rec = quad_record(rng.standard_normal(8))
        for k in range(9):
            g1, g2 = pid.evaluate(k, rec), prop.evaluate(k, rec)
            assert g1.L[0].isclose(g2.L[0], 1e-13)
            assert g1.H.isclose(g2.H, 1e-13)
            assert g1.S[0][0].isclose(g2.S[0][0], 1e-13)

    def test_rejects_non_hermitian_gain(self):
        bad = Operator(self.space, self.a.matrix)
        nil = zero(self.space)
        with pytest.raises(ModulatorError):
            pid_coefficients(self.l0, self.h0, bad, nil, nil)


class TestAdaptedness:
    def test_future_entries_do_not_matter(self, rng):
        # metamorphic: perturbing record entries at indices >= k leaves
        # evaluate(k, .) unchanged
        builders = [
            coupling_feedback(1.0, 0.2, 0.3, 0.1, dim=3),
            hamiltonian_feedback(
                Operator(HilbertSpace((3,)), random_hermitian(rng, 3)),
                Pid(0.5, 0.2, 0.1),
            ),
        ]
        incs = rng.standard_normal(10)
        for coeffs in builders:
            for k in (0, 3, 7):
                base = coeffs.evaluate(k, quad_record(incs))
                tampered = incs.copy()
                tampered[k:] += rng.standard_normal(10 - k) * 5.0
                out = coeffs.evaluate(k, quad_record(tampered))
                assert out.L[0].isclose(base.L[0], 0.0)
                assert out.H.isclose(base.H, 0.0)

    def test_emitted_triples_validate(self, rng):
        coeffs = coupling_feedback(1.5, 0.3, 0.7, 0.4, dim=4)
        rec = quad_record(rng.standard_normal(20).clip(-3, 3), dt=0.05)
        for k in range(0, 21, 4):
            assert validate(coeffs.evaluate(k, rec), 1e-10)

    def test_short_record_prefix_rejected(self):
        coeffs = coupling_feedback(1.0, 0.1, 0.0, 0.0, dim=3)
        with pytest.raises(RecordError):
            coeffs.evaluate(5, quad_record([1.0, 2.0]))


class TestStaticWrapper:
    def test_round_trip(self, rng):
        a = annihilator(3)
        g = SLHTriple(((np.exp(0.3j) * identity(a.space),),), (1.2 * a,),
                      0.7 * number_op(3))
        coeffs = static_coefficients(g)
        out = coeffs.evaluate(3, quad_record([1.0, 2.0, 3.0]))
        assert out.L[0].isclose(g.L[0], 1e-14)
        assert out.H.isclose(g.H, 1e-14)
        assert out.S[0][0].isclose(g.S[0][0], 1e-14)

    def test_rejects_operator_scattering(self, rng):
        space = HilbertSpace((2,))
        sz = Operator(space, [[1, 0], [0, -1]])
        g = SLHTriple(((sz,),), (zero(space),), zero(space))
        with pytest.raises(ModulatorError):
            static_coefficients(g)
