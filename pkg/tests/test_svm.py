import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ctcad.svm import (
    DimError,
    InfeasibleNu,
    NuSvmConfig,
    NuSvmModel,
    decision_value,
    decision_values,
    load_model,
    nu_upper_bound,
    predict_label,
    rbf_gram,
    rbf_kernel,
    save_model,
    train_nu_svm,
)

TIGHT = NuSvmConfig(nu=0.5, gamma=1.0, max_iter=200000, tol=1e-10)


def blobs(rng, n_per_class=20, d=2, sep=10.0, sigma=1.0):
    A = rng.normal(0, sigma, (n_per_class, d)) + sep / 2
    B = rng.normal(0, sigma, (n_per_class, d)) - sep / 2
    X = np.vstack([A, B])
    y = np.array([1] * n_per_class + [-1] * n_per_class)
    return X, y


class TestRbfKernel:
    def test_zero_distance(self):
        x = np.array([1.0, 2.0, 3.0])
        assert rbf_kernel(x, x, gamma=3.7) == 1.0

    def test_zero_gamma(self):
        assert rbf_kernel(np.array([1.0, 0.0]), np.array([5.0, -2.0]), gamma=0.0) == 1.0

    def test_reference_gamma_at_distance_100(self):
        # ||x-y||^2 = 6^2 + 8^2 = 100
        x = np.array([0.0, 0.0])
        y = np.array([6.0, 8.0])
        got = rbf_kernel(x, y, gamma=0.0098)
        assert got == pytest.approx(math.exp(-0.98), abs=1e-12)
        assert got == pytest.approx(0.375311, abs=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(DimError):
            rbf_kernel(np.zeros(2), np.zeros(3), gamma=1.0)

    def test_symmetry_and_range(self, rng):
        for _ in range(50):
            x = rng.normal(0, 2, 4)
            y = rng.normal(0, 2, 4)
            g = rng.uniform(0, 3)
            a = rbf_kernel(x, y, g)
            assert a == rbf_kernel(y, x, g)
            assert 0.0 < a <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(2, 8), gamma=st.floats(0.01, 5.0))
    def test_gram_positive_semidefinite(self, seed, n, gamma):
        X = np.random.default_rng(seed).normal(0, 1, (n, 3))
        K = rbf_gram(X, X, gamma)
        assert np.min(np.linalg.eigvalsh((K + K.T) / 2)) >= -1e-8


class TestTraining:
    def test_xor_all_support_vectors(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([1, 1, -1, -1])
        model = train_nu_svm(X, y, TIGHT)
        assert model.converged
        assert model.m == 4
        preds = np.where(decision_values(model, X) > 0, 1, -1)
        assert np.array_equal(preds, y)
        oracle = oracles.brute_force_nu_svm_objective(X, y, nu=0.5, gamma=1.0)
        assert model.dual_objective == pytest.approx(oracle, abs=1e-6)

    def test_separated_blobs_table1_hyperparams(self, rng):
        X, y = blobs(rng, n_per_class=20, sep=20.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.4, gamma=0.0098, max_iter=10000, tol=1e-6))
        preds = np.where(decision_values(model, X) > 0, 1, -1)
        assert np.array_equal(preds, y)
        assert model.m / X.shape[0] >= 0.4

    def test_infeasible_nu(self):
        y = np.array([1] * 9 + [-1])
        assert nu_upper_bound(y) == pytest.approx(0.2)
        X = np.random.default_rng(0).normal(0, 1, (10, 2))
        with pytest.raises(InfeasibleNu):
            train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=1.0))

    def test_dual_feasibility_at_return(self, rng):
        for trial in range(10):
            X, y, nu, gamma = oracles.random_nu_svm_instance(rng, n_max=12, d_max=3)
            cfg = NuSvmConfig(nu=nu, gamma=gamma, max_iter=50000, tol=1e-8)
            model = train_nu_svm(X, y, cfg)
            a = model.alpha
            n = len(y)
            assert np.all(a >= -1e-15)
            assert np.all(a <= 1.0 / n + 1e-12)
            assert abs(np.sum(a * y)) <= cfg.tol
            assert np.sum(a) >= nu - cfg.tol

    def test_oracle_equivalence_small_suite(self, rng):
        for trial in range(8):
            X, y, nu, gamma = oracles.random_nu_svm_instance(rng)
            model = train_nu_svm(X, y, NuSvmConfig(nu=nu, gamma=gamma,
                                                   max_iter=200000, tol=1e-12))
            oracle = oracles.brute_force_nu_svm_objective(X, y, nu, gamma)
            assert model.dual_objective == pytest.approx(oracle, abs=1e-6)

    def test_nu_property_on_converged_instances(self, rng):
        for trial in range(10):
            n = 30
            X = rng.normal(0, 1, (n, 3))
            y = np.where(X[:, 0] + 0.3 * rng.normal(0, 1, n) > 0, 1, -1)
            if np.all(y == y[0]):
                continue
            nu = min(0.5, 0.9 * nu_upper_bound(y))
            model = train_nu_svm(X, y, NuSvmConfig(nu=nu, gamma=0.5,
                                                   max_iter=50000, tol=1e-6))
            assert model.converged
            margins = y * decision_values(model, X)
            # strictly inside the margin, beyond free-SV solver jitter
            margin_errors = np.sum(margins < 1.0 - 1e-3) / n
            sv_frac = model.m / n
            assert margin_errors <= nu + 1.0 / n
            assert sv_frac >= nu - 1.0 / n

    def test_permutation_invariance(self, rng):
        X, y = blobs(rng, n_per_class=10, sep=3.0)
        cfg = NuSvmConfig(nu=0.5, gamma=0.3, max_iter=50000, tol=1e-10)
        model_a = train_nu_svm(X, y, cfg)
        perm = rng.permutation(len(y))
        model_b = train_nu_svm(X[perm], y[perm], cfg)
        probe = rng.normal(0, 2, (20, 2))
        np.testing.assert_allclose(
            decision_values(model_a, probe), decision_values(model_b, probe), atol=1e-9
        )

    def test_iteration_cap_flags_nonconvergence(self, rng):
        X = rng.normal(0, 1, (40, 2))
        y = np.where(rng.random(40) > 0.5, 1, -1)
        y[:2] = [1, -1]
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.3, gamma=1.0, max_iter=1, tol=1e-12))
        assert not model.converged
        assert model.iterations == 1
        # still a usable model
        assert np.isfinite(decision_value(model, np.zeros(2)))

    def test_class_coefficient_masses_balance(self, rng):
        X, y = blobs(rng, n_per_class=12, sep=4.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.4, max_iter=50000, tol=1e-8))
        coeffs = model.dual_coeffs
        pos_mass = float(np.sum(coeffs[coeffs > 0]))
        neg_mass = float(np.sum(coeffs[coeffs < 0]))
        assert pos_mass == pytest.approx(-neg_mass, rel=1e-6)

    def test_deterministic_given_identical_inputs(self, rng):
        X, y = blobs(rng, n_per_class=8, sep=2.0)
        cfg = NuSvmConfig(nu=0.4, gamma=0.7, max_iter=10000, tol=1e-8)
        m1 = train_nu_svm(X.copy(), y.copy(), cfg)
        m2 = train_nu_svm(X.copy(), y.copy(), cfg)
        assert np.array_equal(m1.dual_coeffs, m2.dual_coeffs)
        assert m1.bias == m2.bias


class TestDecision:
    def test_symmetric_pair_midpoint_zero(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        y = np.array([1, -1])
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=1000, tol=1e-12))
        assert abs(decision_value(model, np.array([0.0, 0.0]))) <= 1e-9

    def test_interior_positive_point_scores_at_least_one(self, rng):
        X, y = blobs(rng, n_per_class=15, sep=12.0)
        cfg = NuSvmConfig(nu=0.3, gamma=0.1, max_iter=50000, tol=1e-8)
        model = train_nu_svm(X, y, cfg)
        assert model.converged
        interior = [
            i for i in range(len(y))
            if y[i] == 1 and i not in set(model.sv_index.tolist())
        ]
        assert interior  # separable blobs leave non-SV positives
        for i in interior:
            assert decision_value(model, X[i]) >= 1.0 - cfg.tol

    def test_far_point_decays_to_bias(self, rng):
        X, y = blobs(rng, n_per_class=5, sep=4.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=10000, tol=1e-8))
        far = np.array([1e6, 1e6])
        assert decision_value(model, far) == pytest.approx(model.bias, abs=1e-12)

    def test_dim_error(self, rng):
        X, y = blobs(rng, n_per_class=3, sep=4.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=100))
        with pytest.raises(DimError):
            decision_value(model, np.zeros(5))
        with pytest.raises(DimError):
            decision_values(model, np.zeros((4, 5)))


class TestPredictLabel:
    def _fixed_model(self, coeffs, bias):
        return NuSvmModel(
            support_vectors=np.array([[1.0, 0.0], [-1.0, 0.0]], np.float32),
            dual_coeffs=np.asarray(coeffs, np.float64),
            bias=bias,
            gamma=1.0,
            nu=0.5,
            max_iter=100,
        )

    def test_positive_score(self):
        model = self._fixed_model([0.0, 0.0], bias=2.3)
        assert predict_label(model, np.zeros(2)) == 1

    def test_exact_zero_resolves_negative(self):
        # equidistant SVs with opposite coefficients cancel exactly
        model = self._fixed_model([0.7, -0.7], bias=0.0)
        assert decision_value(model, np.zeros(2)) == 0.0
        assert predict_label(model, np.zeros(2)) == -1

    def test_negative_score(self):
        model = self._fixed_model([0.0, 0.0], bias=-0.1)
        assert predict_label(model, np.zeros(2)) == -1

    def test_label_map_names(self, rng):
        X, y = blobs(rng, n_per_class=4, sep=6.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=1000))
        assert model.label_map == {1: "COVID", -1: "NonCOVID"}


class TestModelFile:
    def test_roundtrip(self, tmp_path, rng):
        X, y = blobs(rng, n_per_class=10, sep=8.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.4, gamma=0.0098, max_iter=176))
        path = str(tmp_path / "m.nsvm")
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.gamma == model.gamma
        assert loaded.nu == model.nu
        assert loaded.max_iter == model.max_iter
        assert loaded.bias == model.bias
        assert loaded.m == model.m
        assert loaded.d == model.d
        assert loaded.converged == model.converged
        assert loaded.label_map == model.label_map
        # float32 container: decisions agree to f32 precision
        probe = rng.normal(0, 4, (10, 2))
        np.testing.assert_allclose(
            decision_values(loaded, probe), decision_values(model, probe), rtol=1e-4, atol=1e-5
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nsvm"
        path.write_bytes(b"JUNKJUNKJUNK" * 10)
        with pytest.raises(ValueError, match="not a Nu-SVM"):
            load_model(str(path))

    def test_truncated(self, tmp_path, rng):
        X, y = blobs(rng, n_per_class=4, sep=6.0)
        model = train_nu_svm(X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=1000))
        path = tmp_path / "m.nsvm"
        save_model(model, str(path))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="truncated"):
            load_model(str(path))
