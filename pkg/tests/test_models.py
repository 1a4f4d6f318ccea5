import numpy as np
import pytest

from gradevade.data import Dataset
from gradevade.kernels import KernelSpec, kernel_eval, kernel_grad
from gradevade.models import (
    LinearModel,
    MlpModel,
    SvmModel,
    load_model,
    save_model,
    train_kernel_svm,
    train_linear_svm,
    train_mlp,
    with_offset,
)


def central_diff(fn, x, step=1e-5):
    """Central finite differences of a scalar function, one coordinate at a time."""
    g = np.zeros_like(x, dtype=float)
    for i in range(len(x)):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (fn(hi) - fn(lo)) / (2 * step)
    return g


def assert_grad_close(analytic, numeric, rel=1e-4, abs_tol=1e-8):
    norm = np.linalg.norm(numeric)
    if norm > 1e-8:
        assert np.linalg.norm(analytic - numeric) <= rel * norm + abs_tol
    else:
        assert np.linalg.norm(analytic - numeric) <= abs_tol


class TestKernels:
    def test_rbf_at_same_point(self):
        k = KernelSpec("rbf", gamma=0.7)
        x = np.array([1.0, -2.0])
        assert kernel_eval(k, x, x) == 1.0
        np.testing.assert_allclose(kernel_grad(k, x, x), [0.0, 0.0])

    def test_linear_hand_values(self):
        k = KernelSpec("linear")
        assert kernel_eval(k, np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
        np.testing.assert_allclose(kernel_grad(k, np.array([9.0, 9.0]), np.array([3.0, 4.0])), [3.0, 4.0])

    def test_polynomial_hand_values(self):
        k = KernelSpec("polynomial", degree=2, coef0=1.0)
        assert kernel_eval(k, np.array([1.0, 0.0]), np.array([2.0, 1.0])) == 9.0
        np.testing.assert_allclose(kernel_grad(k, np.array([1.0, 0.0]), np.array([2.0, 1.0])), [12.0, 6.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            kernel_eval(KernelSpec("linear"), np.zeros(2), np.zeros(3))

    @pytest.mark.parametrize("kind", ["linear", "rbf", "polynomial"])
    def test_grad_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(20):
            k = KernelSpec(kind, gamma=float(rng.uniform(0.1, 2.0)),
                           degree=int(rng.integers(1, 4)), coef0=float(rng.uniform(0.0, 2.0)))
            x = rng.normal(size=4)
            xi = rng.normal(size=4)
            numeric = central_diff(lambda v: kernel_eval(k, v, xi), x)
            assert_grad_close(kernel_grad(k, x, xi), numeric, rel=1e-6)


def blobs(n_per_class=20, sep=4.0, seed=0, d=2):
    rng = np.random.default_rng(seed)
    neg = rng.normal(size=(n_per_class, d)) - sep / 2
    pos = rng.normal(size=(n_per_class, d)) + sep / 2
    X = np.vstack([neg, pos])
    y = np.array([-1] * n_per_class + [1] * n_per_class)
    return Dataset(X, y)


class TestLinearSvm:
    def test_hand_solved_max_margin(self):
        ds = Dataset(np.array([[-1.0], [1.0]]), np.array([-1, 1]))
        m = train_linear_svm(ds, C=1000.0)
        assert abs(m.w[0] - 1.0) < 1e-6
        assert abs(m.b) < 1e-6

    def test_duplication_invariance_hard_margin(self):
        # separable data trained past the hard-margin threshold: duplicating
        # every point leaves the solution unchanged (solver property)
        ds = blobs(15, sep=5.0, seed=3)
        dup = Dataset(np.vstack([ds.X, ds.X]), np.concatenate([ds.y, ds.y]))
        m1 = train_linear_svm(ds, C=1000.0, tol=1e-6)
        m2 = train_linear_svm(dup, C=1000.0, tol=1e-6)
        np.testing.assert_allclose(m1.w, m2.w, atol=1e-6)
        assert abs(m1.b - m2.b) < 1e-6

    def test_separable_blobs_perfect_training_accuracy(self):
        ds = blobs(25, sep=6.0, seed=1)
        m = train_linear_svm(ds, C=10.0)
        preds = np.array([m.predict(x) for x in ds.X])
        assert np.all(preds == ds.y)

    def test_degenerate_data_rejected(self):
        ds = Dataset(np.ones((4, 2)), np.array([-1, -1, 1, 1]))
        with pytest.raises(ValueError, match="degenerate"):
            train_linear_svm(ds, C=1.0)


def kkt_violation(model: SvmModel, ds: Dataset) -> float:
    """Worst violation of the dual optimality conditions, measured directly."""
    scores = model.discriminant_many(ds.X)
    # recover alpha per training point by matching support vectors
    worst = 0.0
    sv_map = {tuple(v): c for v, c in zip(model.support_vectors, model.dual_coefs)}
    for x, y, s in zip(ds.X, ds.y, scores):
        coef = sv_map.get(tuple(x), 0.0)
        alpha = coef * y  # dual_coefs store alpha_i y_i
        margin = y * s
        if alpha <= 1e-8:
            worst = max(worst, 1.0 - margin)      # must have margin >= 1
        elif alpha >= model.C - 1e-8:
            worst = max(worst, margin - 1.0)      # must have margin <= 1
        else:
            worst = max(worst, abs(margin - 1.0))  # free: margin == 1
    return worst


class TestKernelSvm:
    def test_linear_kernel_collapse_matches(self):
        ds = blobs(20, sep=3.0, seed=7)
        svm = train_kernel_svm(ds, KernelSpec("linear"), C=1.0)
        lin = svm.collapse_linear()
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=2) * 3
            assert abs(svm.discriminant(x) - lin.discriminant(x)) < 1e-6
            assert svm.predict(x) == lin.predict(x)

    def test_xor_rbf(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([-1, -1, 1, 1])
        ds = Dataset(X, y)
        m = train_kernel_svm(ds, KernelSpec("rbf", gamma=1.0), C=100.0)
        preds = np.array([m.predict(x) for x in X])
        assert np.all(preds == y)

    def test_dual_constraints_and_kkt(self):
        ds = blobs(25, sep=2.0, seed=5)  # overlapping: some alphas at bound
        m = train_kernel_svm(ds, KernelSpec("rbf", gamma=0.5), C=1.0)
        assert np.all(np.abs(m.dual_coefs) <= m.C + 1e-9)
        assert abs(m.dual_coefs.sum()) <= 1e-6
        assert kkt_violation(m, ds) <= 1e-3

    def test_identical_positive_points_kkt(self):
        X = np.vstack([np.tile([2.0, 2.0], (5, 1)), np.array([[0.0, 0.0], [0.5, 0.1], [-1.0, 0.3]])])
        y = np.array([1] * 5 + [-1] * 3)
        ds = Dataset(X, y)
        m = train_kernel_svm(ds, KernelSpec("rbf", gamma=1.0), C=10.0)
        assert kkt_violation(m, ds) <= 1e-3

    def test_discriminant_matches_hand_sum(self):
        k = KernelSpec("rbf", gamma=0.3)
        sv = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        coefs = np.array([0.5, -0.75, 0.25])
        m = SvmModel(kernel=k, support_vectors=sv, dual_coefs=coefs, b=0.1, C=1.0)
        x = np.array([0.5, 0.25])
        by_hand = sum(c * np.exp(-0.3 * np.sum((x - v) ** 2)) for c, v in zip(coefs, sv)) + 0.1
        assert abs(m.discriminant(x) - by_hand) < 1e-9


class TestMlp:
    def test_separable_blobs_accuracy(self):
        ds = blobs(30, sep=4.0, seed=2)
        m = train_mlp(ds, m=3, epochs=800, learning_rate=2.0, seed=0)
        preds = np.array([m.predict(x) for x in ds.X])
        assert np.mean(preds == ds.y) >= 0.95

    def test_zero_epochs_returns_init(self):
        ds = blobs(5, seed=4)
        m0 = train_mlp(ds, m=4, epochs=0, seed=9)
        rng = np.random.default_rng(9)
        np.testing.assert_array_equal(m0.hidden_weights, rng.uniform(-0.5, 0.5, size=(4, 2)))

    def test_seed_determinism(self):
        ds = blobs(10, seed=6)
        m1 = train_mlp(ds, m=3, epochs=50, learning_rate=1.0, seed=42)
        m2 = train_mlp(ds, m=3, epochs=50, learning_rate=1.0, seed=42)
        np.testing.assert_array_equal(m1.hidden_weights, m2.hidden_weights)
        np.testing.assert_array_equal(m1.output_weights, m2.output_weights)
        assert m1.output_bias == m2.output_bias

    def test_loss_decreases(self):
        ds = blobs(20, sep=3.0, seed=8)
        init = train_mlp(ds, m=3, epochs=0, seed=1)
        trained = train_mlp(ds, m=3, epochs=300, learning_rate=1.0, seed=1)

        def loss(model):
            t = (ds.y + 1) / 2
            g = model.discriminant_many(ds.X)
            return -np.mean(t * np.log(g) + (1 - t) * np.log(1 - g))

        assert loss(trained) <= loss(init)

    def test_divergence_reports_epoch(self):
        ds = blobs(10, sep=2.0, seed=3)
        with pytest.raises(RuntimeError, match="epoch"):
            train_mlp(ds, m=3, epochs=5, learning_rate=1e308, seed=0)

    def test_constant_network_half(self):
        m = MlpModel(
            hidden_weights=np.ones((3, 2)),
            hidden_biases=np.zeros(3),
            output_weights=np.zeros(3),
            output_bias=0.0,
        )
        for x in (np.zeros(2), np.array([5.0, -3.0])):
            assert m.discriminant(x) == 0.5
            np.testing.assert_allclose(m.gradient(x), 0.0)

    def test_output_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            m = MlpModel(
                hidden_weights=rng.normal(size=(4, 3)),
                hidden_biases=rng.normal(size=4),
                output_weights=rng.normal(size=4),
                output_bias=float(rng.normal()),
            )
            g = m.discriminant(rng.normal(size=3) * 3)
            assert 0.0 < g < 1.0


class TestDiscriminantGradients:
    def test_linear_gradient_constant(self):
        m = LinearModel(np.array([2.0, 1.0]), 0.5)
        assert m.discriminant(np.array([1.0, 1.0])) == 3.5
        np.testing.assert_array_equal(m.gradient(np.array([7.0, -2.0])), [2.0, 1.0])

    def test_all_families_match_finite_differences(self):
        rng = np.random.default_rng(21)
        d = 4
        models = []
        for _ in range(8):
            models.append(LinearModel(rng.normal(size=d), float(rng.normal())))
            sv = rng.normal(size=(6, d))
            raw = rng.uniform(0.1, 0.9, size=6)
            coefs = raw - raw.mean()  # sums to zero, |coef| < 1
            models.append(SvmModel(KernelSpec("rbf", gamma=float(rng.uniform(0.2, 1.5))), sv, coefs, 0.0, C=1.0))
            models.append(SvmModel(KernelSpec("polynomial", degree=3, coef0=1.0), sv, coefs, 0.1, C=1.0))
            models.append(
                MlpModel(rng.normal(size=(3, d)), rng.normal(size=3), rng.normal(size=3), float(rng.normal()))
            )
        for model in models:
            for _ in range(4):
                x = rng.normal(size=d)
                numeric = central_diff(model.discriminant, x)
                assert_grad_close(model.gradient(x), numeric)


class TestPredict:
    def test_sign_and_tie(self):
        m = LinearModel(np.array([1.0]), 0.0)
        assert m.predict(np.array([3.0])) == 1
        assert m.predict(np.array([-0.5])) == -1
        assert m.predict(np.array([0.0])) == 1  # tie goes to +1

    def test_offset_convention(self):
        m = MlpModel(np.zeros((2, 1)), np.zeros(2), np.zeros(2), -0.4)
        # g = sigmoid(-0.4) ~ 0.401 < 0.5 -> legitimate under the MLP offset
        assert m.predict(np.array([0.0])) == -1
        assert with_offset(m, 0.0).predict(np.array([0.0])) == 1


class TestModelIO:
    def test_linear_round_trip(self, tmp_path):
        m = LinearModel(np.array([0.1, -0.25, 3.0]), 1.75, decision_offset=0.5)
        p = tmp_path / "m.json"
        save_model(m, p)
        m2 = load_model(p)
        np.testing.assert_array_equal(m.w, m2.w)
        assert m.b == m2.b and m.decision_offset == m2.decision_offset

    def test_svm_round_trip_probe_oracle(self, tmp_path):
        rng = np.random.default_rng(3)
        sv = rng.normal(size=(50, 5))
        raw = rng.uniform(0.0, 1.0, size=50)
        coefs = raw - raw.mean()
        m = SvmModel(KernelSpec("rbf", gamma=0.37), sv, coefs, -0.2, C=2.0)
        p = tmp_path / "svm.json"
        save_model(m, p)
        m2 = load_model(p)
        for _ in range(20):
            x = rng.normal(size=5)
            assert abs(m.discriminant(x) - m2.discriminant(x)) < 1e-12

    def test_mlp_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        m = MlpModel(rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=3), 0.5)
        p = tmp_path / "mlp.json"
        save_model(m, p)
        m2 = load_model(p)
        for _ in range(20):
            x = rng.normal(size=2)
            assert abs(m.discriminant(x) - m2.discriminant(x)) < 1e-12

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format_version": "gradevade-model/99", "kind": "linear"}\n')
        with pytest.raises(ValueError, match="version"):
            load_model(p)

    def test_corrupted_payload(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ValueError, match="corrupted"):
            load_model(p)
