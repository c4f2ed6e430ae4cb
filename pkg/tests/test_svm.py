import numpy as np
import pytest

from safectrl.svm import (
    KernelParams,
    accuracy,
    confusion,
    decision,
    decision_gradient,
    fit,
    kernel,
    load_model,
    save_model,
    train,
)


class TestKernel:
    def test_zero_inputs(self):
        assert kernel(np.zeros(4), np.zeros(4)) == pytest.approx(0.8**7)

    def test_unit_inner_product(self):
        # <y, z> = 0.4 -> (0.8 + 0.5*0.4)^7 = 1
        y = np.array([0.4, 0.0, 0.0, 0.0])
        z = np.array([1.0, 0.0, 0.0, 0.0])
        assert kernel(y, z) == pytest.approx(1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            y, z = rng.normal(size=4), rng.normal(size=4)
            assert kernel(y, z) == pytest.approx(kernel(z, y), rel=1e-12)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            KernelParams(c1=0.0)
        with pytest.raises(ValueError):
            KernelParams(degree=0)


@pytest.fixture(scope="module")
def toy_model():
    # separable blob pair in the sampled box
    rng = np.random.default_rng(7)
    a = rng.uniform(0.2, 0.9, size=(30, 4))
    b = rng.uniform(1.8, 2.6, size=(30, 4))
    X = np.vstack([a, b])
    y = np.array([-1.0] * 30 + [1.0] * 30)
    return fit(X, y, C=100.0), X, y


class TestFit:
    def test_two_point_toy_set(self):
        X = np.array([[0.5, 0.5, 0.5, 0.5], [2.5, 2.5, 1.5, 1.5]])
        y = np.array([-1.0, 1.0])
        model = fit(X, y)
        assert model.training_accuracy == 1.0

    def test_separable_blobs_fit_clean(self, toy_model):
        model, X, y = toy_model
        assert model.training_accuracy == 1.0
        conf = confusion(model, X, y)
        assert conf["fp"] == 0 and conf["fn"] == 0

    def test_single_class_rejected(self):
        X = np.ones((5, 4))
        with pytest.raises(ValueError):
            fit(X, np.ones(5))

    def test_dual_feasibility(self, toy_model):
        model, _, _ = toy_model
        assert abs(model.coef.sum()) <= 1e-8
        assert np.all(np.abs(model.coef) <= model.C + 1e-9)

    def test_free_support_vectors_on_margin(self, toy_model):
        model, _, _ = toy_model
        free = np.abs(model.coef) < model.C - 1e-6
        assert np.any(free)
        vals = model.decision_batch(model.support_vectors[free])
        assert np.all(np.abs(np.abs(vals) - 1.0) <= 1e-2)

    def test_training_determinism(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 2, size=(40, 4))
        y = np.where(X[:, 0] + X[:, 2] > 1.8, 1.0, -1.0)
        m1 = fit(X, y)
        m2 = fit(X, y)
        assert np.array_equal(m1.coef, m2.coef)
        assert m1.bias == m2.bias


class TestDecision:
    def test_matches_manual_sum(self, toy_model):
        model, _, _ = toy_model
        z = np.array([1.0, 1.2, 0.8, 0.6])
        manual = sum(
            c * kernel(sv, z, model.kernel)
            for c, sv in zip(model.coef, model.support_vectors)
        ) + model.bias
        assert decision(model, z) == pytest.approx(manual, rel=1e-12)

    def test_sign_agreement_with_training_accuracy(self, toy_model):
        model, X, y = toy_model
        assert accuracy(model, X, y) >= model.training_accuracy

    def test_lipschitz_continuity(self, toy_model):
        # |H(z+h) - H(z)| bounded via the sampled gradient-norm sweep
        model, _, _ = toy_model
        rng = np.random.default_rng(11)
        pts = np.column_stack([
            rng.uniform(0, 3, size=(60, 2)), rng.uniform(0, 2, size=(60, 2))
        ])
        L = max(np.linalg.norm(decision_gradient(model, z)) for z in pts) * 1.5
        for z in pts[:20]:
            h = rng.normal(size=4)
            h *= 1e-4 / np.linalg.norm(h)
            assert abs(decision(model, z + h) - decision(model, z)) <= L * 1e-4


class TestGradient:
    def test_zero_support_vector(self):
        from safectrl.svm import SvmModel

        model = SvmModel(
            support_vectors=np.zeros((1, 4)),
            coef=np.array([2.0]),
            bias=0.1,
            kernel=KernelParams(),
            C=100.0,
            training_accuracy=1.0,
        )
        assert np.allclose(decision_gradient(model, np.array([1.0, 2.0, 0.5, 0.3])), 0.0)

    def test_matches_central_differences(self, toy_model):
        model, _, _ = toy_model
        rng = np.random.default_rng(13)
        h = 1e-5
        for _ in range(100):
            z = np.concatenate([rng.uniform(0, 3, 2), rng.uniform(0, 2, 2)])
            g = decision_gradient(model, z)
            fd = np.zeros(4)
            for k in range(4):
                zp, zm = z.copy(), z.copy()
                zp[k] += h
                zm[k] -= h
                fd[k] = (decision(model, zp) - decision(model, zm)) / (2 * h)
            denom = max(1e-9, float(np.max(np.abs(fd))))
            assert np.max(np.abs(g - fd)) / denom <= 1e-4

    def test_gradient_orthogonal_at_line_maximum(self):
        # a mirror-symmetric pair of negative support vectors around a
        # positive one gives H an interior maximum at the center along the
        # mirror axis: the numerically located peak must have vanishing
        # directional derivative
        from safectrl.svm import SvmModel

        u = np.array([0.6, -0.3, 0.4, 0.2])
        model = SvmModel(
            support_vectors=np.vstack([-u, u, np.zeros(4)]),
            coef=np.array([-1.0, -1.0, 1.0]),
            bias=0.0,
            kernel=KernelParams(),
            C=100.0,
            training_accuracy=1.0,
        )
        d = u / np.linalg.norm(u)
        ts = np.linspace(-0.5, 0.5, 2001)
        vals = [decision(model, t * d) for t in ts]
        k = int(np.argmax(vals))
        assert 0 < k < len(ts) - 1
        zmax = ts[k] * d
        gnorm = np.linalg.norm(decision_gradient(model, zmax))
        assert abs(decision_gradient(model, zmax) @ d) <= 1e-6 * (1.0 + gnorm)


class TestPersistence:
    def test_round_trip_decision_stability(self, toy_model, tmp_path):
        model, _, _ = toy_model
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        rng = np.random.default_rng(17)
        for _ in range(40):
            z = rng.uniform(0, 3, size=4)
            assert abs(decision(model, z) - decision(back, z)) <= 1e-12 * (
                1.0 + abs(decision(model, z))
            )

    def test_json_fields(self, toy_model, tmp_path):
        import json

        model, _, _ = toy_model
        path = tmp_path / "model.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        assert doc["kernel"] == {"c1": 0.8, "c2": 0.5, "degree": 7}
        assert len(doc["sv"]) == len(doc["coef"])
        assert all(len(row) == 4 for row in doc["sv"])


def test_train_on_dataset_wrapper():
    from safectrl.dataset import build_dataset

    ds = build_dataset(80, seed=31)
    model = train(ds)
    X, y = ds.matrix()
    assert accuracy(model, X, y) == model.training_accuracy
    assert model.training_accuracy >= 0.9
