import numpy as np
import pytest

from chela import ssm
from chela.rng import Rng


def power_iteration_radius(A, iters=600, seed=0):
    """Growth-rate estimate of the spectral radius (independent oracle)."""
    rng = Rng(seed)
    v = rng.normal(A.shape[0])
    v /= np.linalg.norm(v)
    ratios = []
    for _ in range(iters):
        w = A @ v
        n = np.linalg.norm(w)
        ratios.append(n)
        v = w / n
    return float(np.exp(np.mean(np.log(ratios[-100:]))))


class TestInit:
    def test_diagonal_before_rank_one_correction(self):
        # the i == j case carries a leading minus: -1/2 on the diagonal
        d_s = 8
        c = ssm.hippo_s4_init(d_s, Rng(0))
        p = np.sqrt(np.arange(d_s) + 0.5)
        base = c.A + np.outer(p, p)
        assert np.allclose(np.diag(base), -0.5)

    def test_b_first_entry(self):
        c = ssm.hippo_s4_init(4, Rng(1))
        assert c.B[0] == 1.0

    def test_p_second_entry(self):
        # (1 + 1/2)^(1/2)
        assert abs(np.sqrt(1 + 0.5) - 1.224745) < 1e-6

    def test_symmetric_part_negative_semidefinite(self):
        for d_s in (2, 4, 8, 16):
            c = ssm.hippo_s4_init(d_s, Rng(d_s))
            eig = np.linalg.eigvalsh(c.A + c.A.T)
            assert np.max(eig) <= 1e-10

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            ssm.hippo_s4_init(0, Rng(0))


class TestBilinearDiscretize:
    def test_zero_dynamics_scalar(self):
        c = ssm.ContinuousSsm(A=np.zeros((1, 1)), B=np.ones(1), C=np.ones(1), delta=0.3)
        d = ssm.bilinear_discretize(c)
        assert np.allclose(d.A_bar, 1.0)
        assert np.allclose(d.B_bar, 0.3)

    def test_scalar_decay(self):
        c = ssm.ContinuousSsm(A=np.array([[-1.0]]), B=np.ones(1), C=np.ones(1), delta=0.1)
        d = ssm.bilinear_discretize(c)
        assert abs(d.A_bar[0, 0] - 0.904762) < 1e-6
        assert abs(d.B_bar[0] - 0.095238) < 1e-6

    def test_hippo_spectral_radius_below_one(self):
        d = ssm.bilinear_discretize(ssm.hippo_s4_init(16, Rng(2), delta=0.01))
        assert power_iteration_radius(d.A_bar) < 1.0
        assert ssm.spectral_radius(d.A_bar) < 1.0

    def test_singular_matrix_reported(self):
        c = ssm.ContinuousSsm(A=np.array([[2.0]]), B=np.ones(1),
                              C=np.ones(1), delta=1.0)
        # I - (1/2)*A = 0: singular
        with pytest.raises(np.linalg.LinAlgError):
            ssm.bilinear_discretize(c)

    def test_invalid_step_size(self):
        with pytest.raises(ValueError):
            ssm.ContinuousSsm(A=np.zeros((1, 1)), B=np.ones(1), C=np.ones(1), delta=0.0)


class TestKernel:
    def test_scalar_geometric(self):
        d = ssm.DiscreteSsm(A_bar=np.array([[0.5]]), B_bar=np.ones(1), C_bar=np.ones(1))
        assert np.allclose(ssm.materialize_kernel(d, 3), [1.0, 0.5, 0.25])

    def test_orthogonal_read_write_zero_kernel(self):
        d = ssm.DiscreteSsm(A_bar=np.eye(2), B_bar=np.array([1.0, 0.0]),
                            C_bar=np.array([0.0, 1.0]))
        assert np.all(ssm.materialize_kernel(d, 9) == 0.0)

    def test_entry_matches_matrix_power_oracle(self):
        rng = Rng(3)
        A = rng.normal((8, 8)) * 0.2
        d = ssm.DiscreteSsm(A_bar=A, B_bar=rng.normal(8), C_bar=rng.normal(8))
        k = ssm.materialize_kernel(d, 8)
        want = float(d.C_bar @ np.linalg.matrix_power(A, 5) @ d.B_bar)
        assert abs(k[5] - want) / max(1.0, abs(want)) <= 1e-10

    def test_invalid_length(self):
        d = ssm.DiscreteSsm(A_bar=np.eye(1), B_bar=np.ones(1), C_bar=np.ones(1))
        with pytest.raises(ValueError):
            ssm.materialize_kernel(d, 0)


class TestScanAndForward:
    def _system(self, d_s, seed, delta=0.01):
        return ssm.bilinear_discretize(ssm.hippo_s4_init(d_s, Rng(seed), delta=delta))

    def test_impulse_response_equals_kernel(self):
        d = self._system(8, 4)
        u = np.zeros(32)
        u[0] = 1.0
        assert np.max(np.abs(ssm.recurrent_scan(d, u) - ssm.materialize_kernel(d, 32))) <= 1e-14

    def test_zero_input_zero_output(self):
        d = self._system(8, 5)
        assert np.all(ssm.recurrent_scan(d, np.zeros(16)) == 0.0)

    def test_single_step(self):
        d = self._system(4, 6)
        u = np.array([2.0])
        want = float(d.C_bar @ d.B_bar) * 2.0
        assert abs(ssm.ssm_forward(d, u)[0] - want) <= 1e-12

    @pytest.mark.parametrize("d_s,L", [(4, 64), (16, 512), (32, 1024)])
    def test_conv_matches_recurrence(self, d_s, L):
        d = self._system(d_s, d_s + L)
        u = Rng(d_s * L).normal(L)
        y_scan = ssm.recurrent_scan(d, u)
        y_conv = ssm.ssm_forward(d, u)
        rel = np.max(np.abs(y_conv - y_scan)) / np.max(np.abs(y_scan))
        assert rel <= 1e-8

    def test_kernel_decay_envelope(self):
        # |k_t| tail is geometric: linear fit on log|k_t| with R^2 >= 0.9
        d = self._system(16, 7, delta=0.1)
        k = ssm.materialize_kernel(d, 256)
        tail = np.abs(k[32:])
        tail = np.where(tail == 0, 1e-300, tail)
        t = np.arange(32, 256, dtype=float)
        y = np.log(tail)
        slope, intercept = np.polyfit(t, y, 1)
        pred = slope * t + intercept
        ss_res = np.sum((y - pred) ** 2)
        ss_tot = np.sum((y - y.mean()) ** 2)
        assert slope < 0.0
        assert 1.0 - ss_res / ss_tot >= 0.9
