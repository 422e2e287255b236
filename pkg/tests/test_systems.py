"""Problem-instance tests.

The Colpitts reference values are checked against an independent in-test
evaluation of the circuit equations written out scalar by scalar, never
against the package's own vectorized code.
"""

import math

import numpy as np
import pytest

from parapss.errors import SingularMatrixError
from parapss.linalg import fd_jacobian
from parapss.systems import (ColpittsParams, OdeSystem, colpitts_surrogate,
                             colpitts_system, vanderpol_surrogate,
                             vanderpol_system)

RNG = np.random.default_rng(7)

# circuit constants, restated here so the oracle below shares nothing
# with the implementation
C1, C2, C3, C4 = 50e-12, 1e-9, 50e-9, 100e-9
R1, R2, R3, R4 = 12e3, 3.0, 8.2e3, 1.5e3
L, U_OP, U_T = 10e-3, 10.0, 2.585
Y_E, X_E, I_S, Y_C, X_C = 10e-6, 1.01e-3, 1e-3, 20e-6, 1.02e-3


def reference_rhs(u1, u2, u3, u4):
    """Scalar transcription of the circuit equations (test oracle)."""
    h42 = math.exp((u4 - u2) / U_T) - 1.0
    h43 = math.exp((u4 - u3) / U_T) - 1.0
    return [
        (u2 - u1) * R2 / L,
        (U_OP - u1) / R2 + X_C * h42 - I_S * h43,
        -u3 / R4 + X_E * h43 - I_S * h42,
        -u4 / R3 + (U_OP - u4) / R1 - Y_E * h43 - Y_C * h42,
    ]


class TestColpitts:
    def test_mass_matrix_entries(self, colpitts):
        m = colpitts.mass
        assert m[1, 1] == pytest.approx(C1 + C3)          # 50.05 nF
        assert m[1, 1] == pytest.approx(5.005e-8)
        expected = np.array([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, C1 + C3, -C3, -C1],
            [0.0, -C3, C2 + C3 + C4, -C2],
            [0.0, -C1, -C2, C1 + C2],
        ])
        np.testing.assert_array_equal(m, expected)

    def test_mass_capacitance_block_symmetric(self, colpitts):
        block = colpitts.mass[1:, 1:]
        np.testing.assert_array_equal(block, block.T)

    def test_mass_nonsingular(self, colpitts):
        assert abs(np.linalg.det(colpitts.mass)) > 0.0

    def test_rhs_inductor_row_zero_when_nodes_equal(self, colpitts):
        f = colpitts.rhs(np.array([10.0, 10.0, 0.0, 0.0]))
        assert f[0] == 0.0

    def test_rhs_reference_point(self, colpitts):
        u = np.array([9.75, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(colpitts.rhs(u), reference_rhs(*u),
                                   rtol=1e-14)

    def test_rhs_random_states_match_oracle(self, colpitts):
        for _ in range(25):
            u = np.array([9.75, 1.0, 1.0, 1.0]) + 3.0 * RNG.standard_normal(4)
            np.testing.assert_allclose(colpitts.rhs(u), reference_rhs(*u),
                                       rtol=1e-13)

    def test_jacobian_matches_finite_differences(self, colpitts):
        """Analytic Jacobian vs central differences at 100 random states."""
        for _ in range(100):
            u = np.array([9.75, 1.0, 1.0, 1.0]) + 2.0 * RNG.standard_normal(4)
            J_fd = fd_jacobian(colpitts.rhs, u, rel_step=1e-6)
            J_an = colpitts.rhs_jacobian(u)
            denom = np.max(np.abs(J_an))
            assert np.max(np.abs(J_fd - J_an)) <= 1e-5 * denom

    def test_clamp_flagged_and_finite(self, colpitts):
        before = colpitts.diagnostics.clamped_evals
        f = colpitts.rhs(np.array([0.0, -600.0, 0.0, 0.0]))
        assert np.all(np.isfinite(f))
        assert colpitts.diagnostics.clamped_evals > before

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            ColpittsParams(c1=-1e-12)
        with pytest.raises(ValueError):
            ColpittsParams(u_t=0.0)


class TestSurrogate:
    def test_printed_entries(self, colpitts_A_c):
        assert colpitts_A_c.A[0, 0] == pytest.approx(-R2 / L)    # -300 1/s
        assert colpitts_A_c.A[0, 0] == pytest.approx(-300.0)
        np.testing.assert_allclose(colpitts_A_c.c,
                                   [0.0, U_OP / R2, 0.0, U_OP / R1], rtol=1e-15)

    def test_c_sparsity_any_params(self):
        sur = colpitts_surrogate(ColpittsParams(u_op=3.3, r1=1e3, r2=7.0))
        assert sur.c[0] == 0.0 and sur.c[2] == 0.0

    def test_row_sums_match_scripted_evaluation(self, colpitts_A_c):
        s = 1.0 / 0.2585
        rows = [
            -R2 / L + R2 / L,
            -1.0 / R2 - X_C * s + I_S * s + (X_C - I_S) * s,
            I_S * s - 1.0 / R4 - X_E * s + (X_E - I_S) * s,
            Y_C * s + Y_E * s - 1.0 / R3 - 1.0 / R1 - Y_E * s - Y_C * s,
        ]
        np.testing.assert_allclose(colpitts_A_c.A.sum(axis=1), rows, rtol=1e-12)

    def test_equals_jacobian_of_linearized_transistor_model(self, colpitts_A_c):
        """A is the Jacobian of the circuit with h(x) replaced by x/0.2585."""
        s = 1.0 / 0.2585

        def linearized_rhs(u):
            u1, u2, u3, u4 = u
            h42 = (u4 - u2) * s
            h43 = (u4 - u3) * s
            return np.array([
                (u2 - u1) * R2 / L,
                (U_OP - u1) / R2 + X_C * h42 - I_S * h43,
                -u3 / R4 + X_E * h43 - I_S * h42,
                -u4 / R3 + (U_OP - u4) / R1 - Y_E * h43 - Y_C * h42,
            ])

        # affine map: the finite-difference Jacobian is exact up to rounding
        J = fd_jacobian(linearized_rhs, np.array([1.0, 2.0, -1.0, 0.5]))
        np.testing.assert_allclose(colpitts_A_c.A, J, rtol=1e-6, atol=1e-9)

    def test_dimension_mismatch_rejected(self):
        from parapss.systems import LinearSurrogate
        with pytest.raises(ValueError):
            LinearSurrogate(A=np.eye(3), c=np.zeros(2))


class TestVanDerPol:
    def test_equilibrium(self, vdp):
        np.testing.assert_array_equal(vdp.rhs(np.zeros(2)), np.zeros(2))

    def test_unit_point(self, vdp):
        np.testing.assert_allclose(vdp.rhs(np.array([1.0, 1.0])), [1.0, -1.0])

    def test_jacobian_matches_fd(self, vdp):
        for _ in range(50):
            u = 2.5 * RNG.standard_normal(2)
            J_fd = fd_jacobian(vdp.rhs, u)
            np.testing.assert_allclose(vdp.rhs_jacobian(u), J_fd,
                                       rtol=1e-5, atol=1e-7)

    def test_surrogate_is_origin_jacobian(self, vdp, vdp_A_c):
        np.testing.assert_array_equal(vdp_A_c.A, vdp.rhs_jacobian(np.zeros(2)))
        np.testing.assert_array_equal(vdp_A_c.c, np.zeros(2))

    def test_bad_mu_rejected(self):
        with pytest.raises(ValueError):
            vanderpol_system(0.0)


class TestOdeSystem:
    def test_singular_mass_rejected(self):
        with pytest.raises(SingularMatrixError):
            OdeSystem(dim=2, mass=np.array([[1.0, 1.0], [1.0, 1.0]]),
                      rhs=lambda u: u)

    def test_fd_fallback_installed(self):
        sys = OdeSystem(dim=2, mass=np.eye(2),
                        rhs=lambda u: np.array([u[1], -u[0]]))
        J = sys.rhs_jacobian(np.array([0.3, -0.7]))
        np.testing.assert_allclose(J, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-8)
