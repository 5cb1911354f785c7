import math

import numpy as np
import pytest
import scipy.sparse as sp

from wgmrf.errors import NotSpdError, ParseError, ValidationError
from wgmrf.sparse import (
    SparseSymmetric,
    factorize,
    load_triplet,
    log_det,
    refactorize,
    sample_canonical,
    save_triplet,
    solve,
)


def random_spd(n, seed, density=0.1, shift=None):
    a = sp.random(n, n, density=density, random_state=seed, format="csc")
    m = (a @ a.T + (shift if shift is not None else n) * sp.identity(n)).tocsc()
    return SparseSymmetric.from_scipy(m), m.toarray()


class TestFactorize:
    def test_identity(self):
        q = SparseSymmetric.from_dense(np.eye(5))
        f = factorize(q)
        assert log_det(f) == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(f.Lx, np.ones(5))

    def test_diagonal(self):
        q = SparseSymmetric.from_dense(np.diag([4.0, 9.0]))
        f = factorize(q)
        assert sorted(f.Lx.tolist()) == pytest.approx([2.0, 3.0])
        assert log_det(f) == pytest.approx(math.log(36.0), rel=1e-14)

    def test_residual_random_spd(self):
        q, dense = random_spd(50, seed=1, shift=50)
        f = factorize(q)
        n = q.n
        low = sp.csc_matrix((f.Lx, f.Li, f.Lp), shape=(n, n)).toarray()
        pqp = dense[np.ix_(f.perm, f.perm)]
        res = np.max(np.abs(pqp - low @ low.T))
        assert res < 1e-10 * np.max(np.abs(dense))

    def test_not_spd_reports_index(self):
        q = SparseSymmetric.from_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(NotSpdError) as err:
            factorize(q, ordering="natural")
        assert err.value.index == 1

    def test_fill_monotonicity(self):
        q, _ = random_spd(40, seed=3)
        f = factorize(q)
        assert f.nnz_L >= q.nnz_lower

    def test_ordering_reduces_fill_on_arrow(self):
        # arrowhead matrix: natural order fills completely, min degree not
        n = 30
        dense = np.eye(n) * n
        dense[0, :] = 1.0
        dense[:, 0] = 1.0
        dense[0, 0] = n
        q = SparseSymmetric.from_dense(dense)
        f_amd = factorize(q, ordering="amd")
        f_nat = factorize(q, ordering="natural")
        assert f_amd.nnz_L < f_nat.nnz_L
        assert log_det(f_amd) == pytest.approx(log_det(f_nat), abs=1e-10)


class TestRefactorize:
    def test_idempotent(self):
        q, _ = random_spd(30, seed=4)
        f = factorize(q)
        f2 = refactorize(f, q)
        assert log_det(f2) == pytest.approx(log_det(f), abs=0.0)
        np.testing.assert_array_equal(f.Lx, f2.Lx)

    def test_scaling_identity(self):
        q, _ = random_spd(25, seed=5)
        f = factorize(q)
        f2 = refactorize(f, q.with_data(2.0 * q.data))
        assert log_det(f2) - log_det(f) == pytest.approx(25 * math.log(2.0), rel=1e-12)

    def test_matches_fresh_factorization(self):
        from wgmrf.mesh import build_planar_mesh, fem_matrices

        mesh = build_planar_mesh((0, 0, 2, 2), 1.0, 0.0)
        fem = fem_matrices(mesh)
        f1 = factorize(fem.precision(1.0))
        q2 = fem.precision(2.0)
        via_refactor = refactorize(f1, q2)
        fresh = factorize(q2)
        assert log_det(via_refactor) == pytest.approx(log_det(fresh), abs=1e-12)

    def test_pattern_mismatch(self):
        q1, _ = random_spd(20, seed=6)
        q2, _ = random_spd(20, seed=7)
        f = factorize(q1)
        with pytest.raises(ValidationError):
            refactorize(f, q2)

    def test_refactorize_not_spd(self):
        q = SparseSymmetric.from_dense(np.eye(3))
        f = factorize(q)
        bad = q.with_data(np.array([1.0, -1.0, 1.0]))
        with pytest.raises(NotSpdError):
            refactorize(f, bad)


class TestLogDet:
    def test_diagonal_exp(self):
        q = SparseSymmetric.from_dense(np.diag([math.e, math.e ** 2]))
        assert log_det(factorize(q)) == pytest.approx(3.0, rel=1e-12)

    def test_against_eigenvalues(self):
        q, dense = random_spd(20, seed=8)
        expected = float(np.sum(np.log(np.linalg.eigvalsh(dense))))
        assert log_det(factorize(q)) == pytest.approx(expected, abs=1e-9)

    def test_permutation_invariance(self):
        q, _ = random_spd(35, seed=9)
        a = log_det(factorize(q, ordering="amd"))
        b = log_det(factorize(q, ordering="natural"))
        assert a == pytest.approx(b, abs=1e-10)


class TestSolve:
    def test_identity(self):
        f = factorize(SparseSymmetric.from_dense(np.eye(4)))
        b = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_allclose(solve(f, b), b)

    def test_diagonal(self):
        f = factorize(SparseSymmetric.from_dense(np.diag([2.0, 4.0])))
        np.testing.assert_allclose(solve(f, np.array([2.0, 4.0])), [1.0, 1.0])

    def test_against_dense(self):
        q, dense = random_spd(50, seed=10)
        f = factorize(q)
        b = np.random.default_rng(0).standard_normal(50)
        x = solve(f, b)
        expected = np.linalg.solve(dense, b)
        assert np.max(np.abs(x - expected)) < 1e-8 * np.max(np.abs(expected))
        assert np.max(np.abs(dense @ x - b)) <= 1e-8 * np.max(np.abs(b))

    def test_dimension_mismatch(self):
        f = factorize(SparseSymmetric.from_dense(np.eye(3)))
        with pytest.raises(ValidationError):
            solve(f, np.ones(4))


class TestSampleCanonical:
    def test_identity_returns_raw_normals(self):
        f = factorize(SparseSymmetric.from_dense(np.eye(6)))
        draw = sample_canonical(f, np.zeros(6), np.random.default_rng(7))
        expected = np.random.default_rng(7).standard_normal(6)
        np.testing.assert_allclose(draw, expected)

    def test_scalar_moments(self):
        f = factorize(SparseSymmetric.from_dense(np.array([[4.0]])))
        rng = np.random.default_rng(11)
        draws = np.array(
            [sample_canonical(f, np.array([4.0]), rng)[0] for _ in range(100_000)]
        )
        se = 0.5 / math.sqrt(len(draws))
        assert abs(draws.mean() - 1.0) < 4 * se
        assert abs(draws.std() - 0.5) < 4 * se

    def test_covariance_matches_dense_inverse(self):
        q, dense = random_spd(10, seed=12, density=0.4)
        f = factorize(q)
        rng = np.random.default_rng(13)
        b = rng.standard_normal(10)
        n_draws = 100_000
        draws = np.empty((n_draws, 10))
        for t in range(n_draws):
            draws[t] = sample_canonical(f, b, rng)
        cov = np.linalg.inv(dense)
        mean_expected = cov @ b
        sd = np.sqrt(np.diag(cov))
        se_mean = sd / math.sqrt(n_draws)
        assert np.all(np.abs(draws.mean(axis=0) - mean_expected) < 4 * se_mean)
        emp = np.cov(draws.T)
        se_cov = np.sqrt(np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / math.sqrt(
            n_draws
        )
        assert np.all(np.abs(emp - cov) < 4 * se_cov)


class TestTripletIO:
    def test_round_trip(self, tmp_path):
        q, _ = random_spd(12, seed=14)
        path = tmp_path / "m.txt"
        save_triplet(q, path)
        back = load_triplet(path)
        assert back.same_pattern(q)
        np.testing.assert_array_equal(back.data, q.data)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nonsense\n")
        with pytest.raises(ParseError):
            load_triplet(path)

    def test_upper_entry_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2\n0 0 1.0\n0 1 0.5\n")
        with pytest.raises(ParseError) as err:
            load_triplet(path)
        assert err.value.line == 3


class TestSparseSymmetric:
    def test_missing_diagonal_rejected(self):
        with pytest.raises(ValidationError):
            SparseSymmetric.from_coo(2, [1], [0], [1.0])

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError):
            SparseSymmetric.from_coo(2, [0, 0, 1], [0, 0, 1], [1.0, 2.0, 1.0])

    def test_quad_form_matches_dense(self):
        q, dense = random_spd(15, seed=15)
        x = np.random.default_rng(1).standard_normal(15)
        assert q.quad_form(x) == pytest.approx(x @ dense @ x, rel=1e-12)

    def test_matvec_matches_dense(self):
        q, dense = random_spd(15, seed=16)
        x = np.random.default_rng(2).standard_normal(15)
        np.testing.assert_allclose(q.matvec(x), dense @ x, rtol=1e-12)
