import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopkit import embed, koopfit, linalg, systems
from koopkit.exceptions import (
    InsufficientDataError,
    InsufficientDataWarning,
    PoorConjugacyWarning,
    ValidationError,
)

rng = np.random.default_rng(2024)


def example1_data(n=50, seed=0):
    F = systems.example1_map(0.9, 0.8)
    X = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    return F, embed.SnapshotPair(X.T, np.array([F(x) for x in X]).T)


def nonlinear_basis(n=2, degree=2):
    E = embed.monomial_exponents(n, degree)
    return embed.PolynomialDictionary(E[E.sum(axis=1) >= 2])


class TestDmd:
    def test_linear_system_exact(self):
        A = np.array([[0.9, 0.2], [-0.1, 0.7]])
        tr = systems.simulate_map(lambda x: A @ x, [1.0, -1.0], 20)
        model = koopfit.fit_dmd(tr)
        np.testing.assert_allclose(model.A, A, atol=1e-12)
        np.testing.assert_array_equal(model.C, np.eye(2))
        assert model.info["method"] == "dmd"

    def test_closed_form(self):
        X, Xp = rng.standard_normal((3, 30)), rng.standard_normal((3, 30))
        model = koopfit.fit_dmd(embed.SnapshotPair(X, Xp))
        assert np.max(np.abs(model.A - Xp @ np.linalg.pinv(X))) <= 1e-10

    def test_rank_truncation(self):
        u = np.array([1.0, 2.0, -1.0]) / np.sqrt(6)
        A = 0.8 * np.outer(u, u)
        X = np.outer(u, rng.standard_normal(10)) + 1e-13 * rng.standard_normal((3, 10))
        model = koopfit.fit_dmd(embed.SnapshotPair(X, A @ X), rank=1)
        assert np.linalg.matrix_rank(model.A, tol=1e-10) == 1
        np.testing.assert_allclose(model.A, A, atol=1e-8)

    def test_misfit_on_nonlinear_map(self):
        _, pairs = example1_data()
        assert koopfit.fit_dmd(pairs).info["residuals"]["lifting"] > 1e-3

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            koopfit.fit_dmd(embed.SnapshotPair(np.zeros((2, 0)), np.zeros((2, 0))))


class TestEdmd:
    def test_exact_lifting(self):
        _, pairs = example1_data()
        model = koopfit.fit_edmd(pairs, embed.example1_observables())
        A = [[0.9, 0, 0], [0, 0.8, -0.01], [0, 0, 0.81]]
        np.testing.assert_allclose(model.A, A, atol=1e-12)
        assert model.info["residuals"]["lifting"] < 1e-12
        assert model.status == []

    def test_insufficient_data(self):
        _, pairs = example1_data(n=2)
        with pytest.warns(InsufficientDataWarning):
            model = koopfit.fit_edmd(pairs, embed.example1_observables())
        assert "insufficient-data" in model.status

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.integers(0, 1000))
    def test_output_linearity(self, alpha, seed):
        F, pairs = example1_data(seed=seed)
        X = pairs.X.T
        g1, g2 = X[:, 0] ** 2, X[:, 0] - 3 * X[:, 1]
        Y = np.column_stack([g1, g2, alpha * g1 + g2])
        model = koopfit.fit_edmd(pairs, embed.example1_observables(), outputs=Y)
        y = koopfit.predict(model, [0.3, -0.6], 10)
        assert np.max(np.abs(y[:, 2] - (alpha * y[:, 0] + y[:, 1]))) <= 1e-12 * (1 + abs(alpha))

    def test_callable_outputs(self):
        _, pairs = example1_data()
        model = koopfit.fit_edmd(pairs, embed.example1_observables(), outputs=lambda x: [x[0] ** 2])
        np.testing.assert_allclose(model.C, [[0, 0, 1]], atol=1e-12)

    def test_predict_first_row(self):
        _, pairs = example1_data()
        model = koopfit.fit_edmd(pairs, embed.example1_observables())
        y = koopfit.predict(model, [0.4, 0.1], 0)
        np.testing.assert_allclose(y, [[0.4, 0.1]], atol=1e-14)
        with pytest.raises(ValidationError):
            koopfit.predict(model, [0.4, 0.1], -1)


class TestGenerator:
    def test_example4_drift_exact(self):
        c, d = -0.5, -0.3
        f = systems.example4_system(c, d).drift
        X = rng.uniform(-1, 1, (40, 2))
        Xdot = np.array([f(x) for x in X])
        model = koopfit.fit_generator_edmd(X, Xdot, embed.example4_lifting())
        # Lie derivatives: L x1 = c x1, L(x2 + x1^2) = d (x2 + x1^2) + (2c - c^2) x1^2, L x1^2 = 2c x1^2
        G = np.array([[c, 0, 0, 0], [0, d, 2 * c - c * c, 0], [0, 0, 2 * c, 0], [0, 0, 0, 0]])
        np.testing.assert_allclose(model.A, G, atol=1e-12)
        assert model.kind == koopfit.CONTINUOUS

    def test_continuous_prediction_matches_flow(self):
        c, d = -0.5, -0.3
        f = systems.example4_system(c, d).drift
        X = rng.uniform(-1, 1, (40, 2))
        model = koopfit.fit_generator_edmd(X, np.array([f(x) for x in X]), embed.example4_lifting(), ts=0.1)
        y = koopfit.predict(model, [0.6, -0.4], 30)
        truth = systems.integrate_rk4(f, [0.6, -0.4], 3.0, 0.1, substeps=20).states
        assert np.max(np.abs(y - truth)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            koopfit.fit_generator_edmd(np.zeros((3, 2)), np.zeros((3, 1)), embed.identity_dictionary(2))


class TestSpectrum:
    def test_reconstruction_identity(self):
        _, pairs = example1_data()
        model = koopfit.fit_edmd(pairs, embed.example1_observables())
        spec = koopfit.extract_spectrum(model)
        np.testing.assert_allclose(spec.modes @ spec.transition @ spec.eigenfunction_coeffs,
                                   model.C @ model.A, atol=1e-12)
        assert spec.is_diagonal

    def test_eigenfunctions_are_eigenfunctions(self):
        F, pairs = example1_data()
        spec = koopfit.extract_spectrum(koopfit.fit_edmd(pairs, embed.example1_observables()))
        X = rng.uniform(-1, 1, (30, 2))
        FX = np.array([F(x) for x in X])
        np.testing.assert_allclose(spec.eigenfunctions(FX), spec.eigenfunctions(X) * spec.eigenvalues,
                                   atol=1e-12)
        phi0 = spec.eigenfunction(0)
        assert phi0(X[0]) == pytest.approx(spec.eigenfunctions(X[:1])[0, 0])

    def test_jordan_fallback(self):
        A = np.array([[0.5, 1.0], [0.0, 0.5]])
        model = koopfit.KoopmanModel(embed.identity_dictionary(2), A, np.eye(2))
        spec = koopfit.extract_spectrum(model)
        assert spec.block_sizes == (2,) and not spec.is_diagonal
        np.testing.assert_allclose(koopfit.predict(spec, [1.0, 2.0], 15),
                                   koopfit.predict(model, [1.0, 2.0], 15), atol=1e-10)

    def test_complex_pair_prediction_is_real(self):
        c, s = np.cos(0.4), np.sin(0.4)
        A = 0.95 * np.array([[c, -s], [s, c]])
        model = koopfit.KoopmanModel(embed.identity_dictionary(2), A, np.eye(2))
        y = koopfit.predict(koopfit.extract_spectrum(model), [1.0, 0.0], 10)
        assert not np.iscomplexobj(y)
        np.testing.assert_allclose(y, koopfit.predict(model, [1.0, 0.0], 10), atol=1e-12)

    def test_from_eigenfunctions(self):
        spec = koopfit.spectral_model_from_eigenfunctions(
            [0.9, 0.8, 0.81], embed.example1_eigenfunctions(), [[1, 0, 0], [0, 1, -1]]
        )
        F = systems.example1_map(0.9, 0.8)
        np.testing.assert_allclose(koopfit.predict(spec, [0.7, -0.2], 20),
                                   systems.simulate_map(F, [0.7, -0.2], 20).states, atol=1e-14)


class TestConjugacy:
    def test_example1_coefficients(self):
        F = systems.example1_map(0.9, 0.8)
        cmap, pairs = koopfit.fit_conjugacy(F, basis=nonlinear_basis(), samples=rng.uniform(-1, 1, (60, 2)))
        np.testing.assert_allclose(cmap.coefficients, [[0, 0, 0], [1, 0, 0]], atol=1e-10)
        np.testing.assert_allclose(pairs.eigenvalues, [0.9, 0.8])
        assert all(p.provenance == "principle" for p in pairs)
        d = cmap.as_dictionary()
        np.testing.assert_allclose(d([0.5, 0.25]), [0.5, 0.5], atol=1e-10)

    def test_resonant_map_warns(self):
        F = systems.DiscreteMap(2, lambda x: np.array([0.9 * x[0], 0.81 * x[1] + x[0] ** 2]), "resonant")
        with pytest.warns(PoorConjugacyWarning):
            cmap, _ = koopfit.fit_conjugacy(F, basis=nonlinear_basis(), samples=rng.uniform(-1, 1, (60, 2)))
        assert cmap.residual > 1e-6

    def test_vector_field(self):
        c, d = -0.5, -1.3
        f = systems.VectorField(2, lambda x: np.array([c * x[0], d * x[1] + (d - 2 * c) * x[0] ** 2]), "flow")
        cmap, pairs = koopfit.fit_conjugacy(f, np.diag([c, d]), nonlinear_basis(), rng.uniform(-1, 1, (60, 2)))
        # d(x) = (x1, x2 + x1^2) linearizes this field
        np.testing.assert_allclose(cmap.coefficients, [[0, 0, 0], [1, 0, 0]], atol=1e-10)

    def test_linear_basis_rejected(self):
        F = systems.example1_map(0.9, 0.8)
        with pytest.raises(ValidationError):
            koopfit.fit_conjugacy(F, basis=embed.monomial_dictionary(2, 2), samples=np.zeros((5, 2)))

    def test_products(self):
        F = systems.example1_map(0.9, 0.8)
        _, principles = koopfit.fit_conjugacy(F, basis=nonlinear_basis(), samples=rng.uniform(-1, 1, (60, 2)))
        prods = koopfit.eigenpair_products(principles, 3)
        assert [p.multi_index for p in prods][:5] == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        X = rng.uniform(-1, 1, (50, 2))
        for p in prods:
            lam = np.prod([q.eigenvalue ** k for q, k in zip(principles, p.multi_index)])
            assert p.eigenvalue == pytest.approx(lam, abs=1e-15)
            for x in X:
                assert abs(p(F(x)) - p.eigenvalue * p(x)) <= 1e-8


class TestHankel:
    def test_cosine(self):
        k = np.arange(40)
        lam = koopfit.extract_spectrum(koopfit.hankel_dmd(np.cos(np.pi * k / 6), 2)).eigenvalues
        np.testing.assert_allclose(lam, [np.cos(np.pi / 6) - 0.5j, np.cos(np.pi / 6) + 0.5j], atol=1e-10)

    def test_geometric(self):
        lam = koopfit.extract_spectrum(koopfit.hankel_dmd(0.9 ** np.arange(30), 3)).eigenvalues
        assert abs(lam[0] - 0.9) < 1e-10

    def test_two_decays(self):
        k = np.arange(40)
        y = 0.9**k + 0.5 * 0.6**k
        lam = koopfit.extract_spectrum(koopfit.hankel_dmd(y, 2)).eigenvalues
        np.testing.assert_allclose(lam, [0.9, 0.6], atol=1e-8)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            koopfit.hankel_dmd([1.0, 2.0], 2)


def test_eig_and_spectrum_orders_agree():
    A = rng.standard_normal((5, 5))
    model = koopfit.KoopmanModel(embed.identity_dictionary(5), A, np.eye(5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        spec = koopfit.extract_spectrum(model)
    np.testing.assert_array_equal(spec.eigenvalues, linalg.eig(A).eigenvalues)
