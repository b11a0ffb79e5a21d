import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import naive_cov
from soilgp.kernels import (
    KernelMode,
    NumericFailure,
    TaskCholesky,
    assemble_cross_cov,
    assemble_training_cov,
    chol_with_jitter,
    cross_matern32,
    matern32,
    pack_theta,
    task_cov,
    theta_dim,
    unpack_theta,
)

lengthscales = st.floats(min_value=0.1, max_value=300.0)


class TestMatern32:
    def test_zero_lag_is_one(self):
        for l in [0.5, 3.0, 80.0]:
            assert matern32(0.0, l) == 1.0

    def test_decay_limit(self):
        assert matern32(50.0 * 7.0, 7.0) < 1e-10

    def test_frozen_point_value(self):
        # (1 + sqrt(3)) * exp(-sqrt(3)) evaluated at high precision
        assert matern32(1.0, 1.0) == pytest.approx(0.4833577245965077, abs=1e-12)

    @given(l=lengthscales, r1=st.floats(0, 500), r2=st.floats(0, 500))
    @settings(deadline=None)
    def test_strictly_decreasing(self, l, r1, r2):
        if r1 == r2:
            return
        lo, hi = min(r1, r2), max(r1, r2)
        klo, khi = matern32(lo, l), matern32(hi, l)
        assert klo >= khi - 1e-15  # monotone to within an ulp
        # strict decrease once the analytic gap is representable: the
        # kernel is flat at zero lag, so tiny separations change nothing
        if (hi - lo) > 1e-3 * l and lo < 10 * l:
            assert klo > khi

    def test_rejects_bad_lengthscale(self):
        with pytest.raises(ValueError):
            matern32(1.0, 0.0)
        with pytest.raises(ValueError):
            matern32(1.0, -2.0)


def spectral_cross_oracle(r, li, lj):
    """Inverse Fourier transform of the geometric-mean spectral density.

    The per-task Matérn 3/2 kernel has 1-d spectral density
    S(w) = 12·√3·l⁻³·(3/l² + w²)⁻²; the convolution construction gives
    the cross kernel the density √(S_i·S_j). quad with the cosine weight
    handles the oscillatory transform accurately.
    """

    def density(w):
        si = 12.0 * np.sqrt(3.0) / li**3 * (3.0 / li**2 + w**2) ** -2
        sj = 12.0 * np.sqrt(3.0) / lj**3 * (3.0 / lj**2 + w**2) ** -2
        return np.sqrt(si * sj)

    if r == 0:
        val, _ = quad(density, 0, np.inf, limit=200)
    else:
        val, _ = quad(density, 0, np.inf, weight="cos", wvar=r, limit=200)
    return val / np.pi


class TestCrossMatern32:
    def test_equal_lengthscales_reduce_to_matern(self):
        assert cross_matern32(2.0, 3.0, 3.0) == matern32(2.0, 3.0)

    def test_zero_lag_closed_form(self):
        assert cross_matern32(0.0, 1.0, 4.0) == pytest.approx(0.8, abs=1e-12)

    @pytest.mark.parametrize(
        "r,li,lj", [(0.0, 1.0, 4.0), (2.0, 1.0, 4.0), (5.0, 0.7, 3.2), (10.0, 2.0, 9.0)]
    )
    def test_matches_convolution_oracle(self, r, li, lj):
        assert cross_matern32(r, li, lj) == pytest.approx(
            spectral_cross_oracle(r, li, lj), rel=1e-6, abs=1e-9
        )

    @given(
        r=st.floats(0, 1000),
        li=lengthscales,
        lj=lengthscales,
    )
    @settings(deadline=None)
    def test_symmetric_in_lengthscales(self, r, li, lj):
        a = cross_matern32(r, li, lj)
        b = cross_matern32(r, lj, li)
        assert abs(a - b) <= 1e-14

    def test_continuous_across_switch(self):
        for l in [1.0, 7.5, 40.0]:
            for r in [0.0, l / 2, l, 5 * l]:
                d = abs(cross_matern32(r, l, l * (1 + 1e-4)) - matern32(r, l))
                assert d <= 1e-6

    @given(li=lengthscales, lj=lengthscales, r=st.floats(0, 500))
    @settings(deadline=None)
    def test_cauchy_schwarz(self, li, lj, r):
        # k_ii(0) = k_jj(0) = 1 for the unit-amplitude kernels
        assert cross_matern32(r, li, lj) ** 2 <= 1.0 + 1e-12

    def test_rejects_bad_lengthscale(self):
        with pytest.raises(ValueError):
            cross_matern32(1.0, -1.0, 2.0)


class TestTaskCov:
    def test_identity_factor(self):
        chol = TaskCholesky.from_matrix(np.eye(3))
        np.testing.assert_array_equal(task_cov(chol), np.eye(3))

    def test_hand_two_by_two(self):
        L = np.array([[1.0, 0.0], [0.9, 0.43589]])
        Kc = task_cov(TaskCholesky.from_matrix(L))
        np.testing.assert_allclose(Kc, [[1.0, 0.9], [0.9, 1.0]], atol=1e-4)

    @given(seed=st.integers(0, 10_000))
    @settings(deadline=None, max_examples=50)
    def test_always_psd_with_jitter(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        L = np.tril(rng.uniform(-2, 2, (n, n)))
        np.fill_diagonal(L, rng.uniform(0.1, 3, n))
        Kc = task_cov(TaskCholesky.from_matrix(L))
        np.testing.assert_allclose(Kc, Kc.T, atol=1e-12)
        chol_with_jitter(Kc + 1e-10 * np.eye(n), (0.0,))  # must not raise

    def test_rejects_nonpositive_diagonal(self):
        with pytest.raises(ValueError):
            TaskCholesky.from_matrix(np.array([[0.0]]))


class TestThetaPacking:
    @pytest.mark.parametrize("mode", list(KernelMode))
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_round_trip(self, mode, n):
        rng = np.random.default_rng(7 * n)
        L = np.tril(rng.normal(size=(n, n)))
        np.fill_diagonal(L, rng.uniform(0.2, 2.0, n))
        ls = rng.uniform(1, 50, 1 if mode is KernelMode.ICM else n)
        noise = rng.uniform(1e-4, 0.5, n)
        theta = pack_theta(L, ls, noise, mode)
        assert theta.shape == (theta_dim(n, mode),)
        L2, ls2, noise2 = unpack_theta(theta, n, mode)
        np.testing.assert_allclose(L2, L, atol=1e-12)
        np.testing.assert_allclose(ls2, ls, rtol=1e-12)
        np.testing.assert_allclose(noise2, noise, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            unpack_theta(np.zeros(5), 2, KernelMode.CONVOLVED)

    def test_noise_floor_applied(self):
        theta = pack_theta(np.eye(1), [10.0], [1e-12], KernelMode.ICM)
        _, _, noise = unpack_theta(theta, 1, KernelMode.ICM)
        assert noise[0] == 1e-8


def random_layout(rng, m, n):
    tasks = rng.integers(0, n, m)
    tasks[:n] = np.arange(n)
    xy = rng.uniform(0, 80, (m, 2))
    return tasks, xy


class TestAssembleTrainingCov:
    def test_kronecker_oracle_icm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(2, 6))
            L = np.tril(rng.normal(size=(n, n)))
            np.fill_diagonal(L, rng.uniform(0.3, 2, n))
            Kc = L @ L.T
            pts = rng.uniform(0, 50, (m, 2))
            l0 = float(rng.uniform(2, 40))
            noise = rng.uniform(1e-3, 0.3, n)
            tasks = np.repeat(np.arange(n), m)  # task-major ordering
            xy = np.tile(pts, (n, 1))
            K = assemble_training_cov(tasks, xy, Kc, [l0], noise, KernelMode.ICM)
            r = np.hypot(
                pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1]
            )
            expected = np.kron(Kc, matern32(r, l0)) + np.diag(np.repeat(noise, m))
            np.testing.assert_allclose(K, expected, atol=1e-12)

    def test_shape_30_locations_4_tasks(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 300, (30, 2))
        tasks = np.tile(np.arange(4), 30)
        xy = np.repeat(pts, 4, axis=0)
        K = assemble_training_cov(
            tasks, xy, np.eye(4), [40.0, 40.0, 60.0, 80.0],
            np.full(4, 0.05), KernelMode.CONVOLVED,
        )
        assert K.shape == (120, 120)

    def test_convolved_equals_icm_when_lengthscales_equal(self):
        rng = np.random.default_rng(2)
        n, m = 3, 7
        tasks, xy = random_layout(rng, m, n)
        L = np.tril(rng.normal(size=(n, n)))
        np.fill_diagonal(L, rng.uniform(0.3, 2, n))
        Kc = L @ L.T
        noise = rng.uniform(1e-3, 0.1, n)
        K_conv = assemble_training_cov(
            tasks, xy, Kc, [12.0, 12.0, 12.0], noise, KernelMode.CONVOLVED
        )
        K_icm = assemble_training_cov(tasks, xy, Kc, [12.0], noise, KernelMode.ICM)
        np.testing.assert_allclose(K_conv, K_icm, atol=1e-12)

    def test_matches_naive_loop_oracle_both_modes(self):
        rng = np.random.default_rng(3)
        for mode in KernelMode:
            n, m = 3, 9
            tasks, xy = random_layout(rng, m, n)
            L = np.tril(rng.normal(size=(n, n)))
            np.fill_diagonal(L, rng.uniform(0.3, 2, n))
            Kc = L @ L.T
            ls = rng.uniform(3, 50, 1 if mode is KernelMode.ICM else n)
            noise = rng.uniform(1e-3, 0.1, n)
            K = assemble_training_cov(tasks, xy, Kc, ls, noise, mode)
            np.testing.assert_allclose(
                K, naive_cov(tasks, xy, Kc, ls, noise, mode), atol=1e-12
            )

    def test_noise_on_diagonal_only_and_symmetric(self):
        rng = np.random.default_rng(4)
        tasks, xy = random_layout(rng, 10, 2)
        noise = np.array([0.3, 0.7])
        K = assemble_training_cov(
            tasks, xy, np.eye(2), [5.0, 9.0], noise, KernelMode.CONVOLVED
        )
        K0 = assemble_training_cov(
            tasks, xy, np.eye(2), [5.0, 9.0], np.zeros(2), KernelMode.CONVOLVED
        )
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        np.testing.assert_allclose(K - K0, np.diag(noise[tasks]), atol=1e-14)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        n, m = 3, 12
        tasks, xy = random_layout(rng, m, n)
        L = np.tril(rng.normal(size=(n, n)))
        np.fill_diagonal(L, rng.uniform(0.3, 2, n))
        Kc = L @ L.T
        ls = [4.0, 11.0, 25.0]
        noise = rng.uniform(1e-3, 0.1, n)
        K = assemble_training_cov(tasks, xy, Kc, ls, noise, KernelMode.CONVOLVED)
        perm = rng.permutation(m)
        K_perm = assemble_training_cov(
            tasks[perm], xy[perm], Kc, ls, noise, KernelMode.CONVOLVED
        )
        np.testing.assert_allclose(K_perm, K[np.ix_(perm, perm)], atol=1e-14)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            assemble_training_cov(
                np.array([0, 1]), np.zeros((3, 2)), np.eye(2), [5.0, 5.0],
                np.ones(2), KernelMode.CONVOLVED,
            )


class TestAssembleCrossCov:
    def test_queries_equal_obs_reproduces_noiseless_block(self):
        rng = np.random.default_rng(6)
        tasks, xy = random_layout(rng, 8, 2)
        Kc = np.array([[1.0, 0.5], [0.5, 2.0]])
        ls = [6.0, 14.0]
        K_train = assemble_training_cov(
            tasks, xy, Kc, ls, np.zeros(2), KernelMode.CONVOLVED
        )
        K_cross = assemble_cross_cov(tasks, xy, tasks, xy, Kc, ls, KernelMode.CONVOLVED)
        np.testing.assert_allclose(K_cross, K_train, atol=1e-14)

    def test_far_query_decays(self):
        rng = np.random.default_rng(7)
        tasks, xy = random_layout(rng, 8, 2)
        Kc = np.array([[1.5, 0.5], [0.5, 2.0]])
        ls = [6.0, 14.0]
        far = np.array([[100 * 14.0 + 100, 0.0]])
        K = assemble_cross_cov(np.array([0]), far, tasks, xy, Kc, ls, KernelMode.CONVOLVED)
        assert np.all(np.abs(K) < 1e-8 * np.abs(Kc).max())

    def test_shape_one_query_120_obs(self):
        rng = np.random.default_rng(8)
        tasks = np.tile(np.arange(4), 30)
        xy = np.repeat(rng.uniform(0, 300, (30, 2)), 4, axis=0)
        K = assemble_cross_cov(
            np.array([2]), np.array([[10.0, 10.0]]), tasks, xy,
            np.eye(4), [40.0, 40.0, 60.0, 80.0], KernelMode.CONVOLVED,
        )
        assert K.shape == (1, 120)


class TestCholWithJitter:
    def test_reports_jitter_used(self):
        L, jitter = chol_with_jitter(np.eye(3))
        assert jitter == 0.0
        np.testing.assert_allclose(L, np.eye(3))

    def test_escalates_then_fails(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(NumericFailure):
            chol_with_jitter(bad)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericFailure):
            chol_with_jitter(np.array([[np.inf, 0.0], [0.0, 1.0]]))
