"""CNN classifier: forward oracle, gradient checks, training, patches, I/O."""

import numpy as np
import pytest

from conftest import naive_conv2d
from riemsar import cnn
from riemsar.errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyClassError,
    ShapeMismatchError,
)


def tiny_model(channels=2, classes=2, seed=3):
    return cnn.init_model(channels, classes, seed=seed)


class TestForward:
    def test_rows_sum_to_one(self, rng):
        model = tiny_model()
        x = rng.standard_normal((5, 2, 9, 9))
        probs = cnn.forward(model, x)
        assert probs.shape == (5, 2)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12
        assert (probs > 0).all()

    def test_zero_weights_uniform(self, rng):
        model = tiny_model(channels=3, classes=4)
        model.set_params([np.zeros_like(p) for p in model.params()])
        probs = cnn.forward(model, rng.standard_normal((2, 3, 9, 9)))
        assert np.allclose(probs, 0.25)

    def test_matches_naive_convolution_trace(self, rng):
        # independent forward oracle: run the three stages through a
        # quadruple-loop convolution and compare logits
        model = tiny_model(channels=1, classes=2, seed=9)
        x = rng.standard_normal((2, 1, 9, 9))
        z1 = naive_conv2d(x, model.w1, model.b1)
        a1 = np.maximum(z1, 0)
        z2 = naive_conv2d(a1, model.w2, model.b2)
        a2 = np.maximum(z2, 0)
        z3 = naive_conv2d(a2, model.w3, model.b3)
        logits = z3.mean(axis=(2, 3))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        expect = e / e.sum(axis=1, keepdims=True)
        assert np.allclose(cnn.forward(model, x), expect, atol=1e-12)

    def test_shape_mismatch(self, rng):
        model = tiny_model()
        with pytest.raises(ShapeMismatchError):
            cnn.forward(model, rng.standard_normal((2, 3, 9, 9)))
        with pytest.raises(ShapeMismatchError):
            cnn.forward(model, rng.standard_normal((2, 2, 5, 5)))

    def test_batch_permutation_equivariance(self, rng):
        model = tiny_model()
        x = rng.standard_normal((6, 2, 9, 9))
        perm = rng.permutation(6)
        assert np.allclose(
            cnn.forward(model, x)[perm], cnn.forward(model, x[perm]), atol=1e-15
        )


class TestGradients:
    def test_every_tensor_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        model = tiny_model()
        x = rng.standard_normal((3, 2, 9, 9))
        y = np.array([0, 1, 0])
        _, grads = cnn.gradients(model, x, y)
        h = 1e-5
        for p, g in zip(model.params(), grads):
            flat = p.ravel()
            take = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for j in take:
                orig = flat[j]
                flat[j] = orig + h
                lp, _ = cnn.gradients(model, x, y)
                flat[j] = orig - h
                lm, _ = cnn.gradients(model, x, y)
                flat[j] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(g.ravel()[j] - fd) / max(abs(g.ravel()[j]), abs(fd), 1e-8) < 1e-4

    def test_near_one_hot_predictions_near_zero_loss(self, rng):
        model = tiny_model()
        model.b3 = np.array([40.0, -40.0])  # logits pinned to class 0
        x = rng.standard_normal((4, 2, 9, 9)) * 0.0
        model.w3 *= 0.0
        loss, _ = cnn.gradients(model, x, np.zeros(4, dtype=int))
        assert loss < 1e-12

    def test_overfit_ten_samples(self, rng):
        model = tiny_model()
        x = rng.standard_normal((10, 2, 9, 9))
        y = rng.integers(0, 2, 10)
        x[y == 1] += 0.4
        cfg = cnn.TrainConfig(learning_rate=5e-3)
        state = cnn.AdamState.for_model(model)
        losses = [cnn.backward_and_step(model, x, y, cfg, state) for _ in range(50)]
        assert losses[-1] < losses[0]
        pred = np.argmax(cnn.forward(model, x), axis=1)
        assert (pred == y).mean() >= 0.99


class TestExtractPatches:
    def make_labeled(self, rng, h=25, w=40, classes=2):
        feats = rng.standard_normal((h, w, 3))
        labels = (rng.integers(0, classes, size=(h, w)) + 1).astype(np.int32)
        return feats, labels

    def test_split_sizes_stratified(self, rng):
        feats = rng.standard_normal((25, 40, 3))
        labels = np.ones((25, 40), dtype=np.int32)  # 1000 labeled pixels
        cfg = cnn.TrainConfig(train_ratio=0.10, seed=4)
        train, test = cnn.extract_patches(feats, labels, cfg)
        assert len(train) == 100
        assert len(test) == 900

    def test_per_class_rounding(self, rng):
        feats, labels = self.make_labeled(rng)
        cfg = cnn.TrainConfig(train_ratio=0.10, seed=4)
        train, test = cnn.extract_patches(feats, labels, cfg)
        for c in (1, 2):
            n_c = int((labels == c).sum())
            expect = int(np.floor(0.10 * n_c + 0.5))
            assert int((train.labels == c).sum()) == expect

    def test_corner_patch_reflect_padding(self, rng):
        feats, labels = self.make_labeled(rng)
        cfg = cnn.TrainConfig(patch_size=9)
        train, _ = cnn.extract_patches(feats, labels, cfg)
        everything = cnn.PatchSet(
            cnn._pad_features(feats, 9),
            np.array([0]),
            np.array([1]),
            9,
            feats.shape[:2],
        )
        patch = everything.gather([0])
        assert patch.shape == (1, 3, 9, 9)
        oracle = np.pad(feats, ((4, 4), (4, 4), (0, 0)), mode="reflect")[:9, :9]
        assert np.array_equal(patch[0], oracle.transpose(2, 0, 1))

    def test_same_seed_same_split(self, rng):
        feats, labels = self.make_labeled(rng)
        cfg = cnn.TrainConfig(seed=8)
        t1, _ = cnn.extract_patches(feats, labels, cfg)
        t2, _ = cnn.extract_patches(feats, labels, cfg)
        assert np.array_equal(t1.centers, t2.centers)

    def test_empty_class(self, rng):
        feats = rng.standard_normal((10, 10, 3))
        labels = np.zeros((10, 10), dtype=np.int32)
        labels[0, 0] = 2  # class 1 absent
        with pytest.raises(EmptyClassError):
            cnn.extract_patches(feats, labels, cnn.TrainConfig())


class TestTrain:
    def separable_set(self, rng, n=60):
        feats = rng.standard_normal((12, 24, 4)) * 0.1
        labels = np.zeros((12, 24), dtype=np.int32)
        labels[:, :12] = 1
        labels[:, 12:] = 2
        feats[:, 12:, 0] += 3.0  # channel 0 separates the classes
        return feats, labels

    def test_zero_epochs_model_unchanged(self, rng):
        feats, labels = self.separable_set(rng)
        cfg = cnn.TrainConfig(epochs=0)
        train_set, _ = cnn.extract_patches(feats, labels, cfg)
        model = tiny_model(channels=4, classes=2)
        before = [p.copy() for p in model.params()]
        cnn.train(model, train_set, cfg)
        for a, b in zip(before, model.params()):
            assert np.array_equal(a, b)

    def test_separable_reaches_high_accuracy(self, rng):
        feats, labels = self.separable_set(rng)
        cfg = cnn.TrainConfig(epochs=30, batch_size=32, train_ratio=0.5, seed=1)
        train_set, _ = cnn.extract_patches(feats, labels, cfg)
        model = cnn.init_model(4, 2, seed=1)
        _, losses = cnn.train(model, train_set, cfg)
        x = train_set.gather(np.arange(len(train_set)))
        pred = np.argmax(cnn.forward(model, x), axis=1) + 1
        assert (pred == train_set.labels).mean() >= 0.99
        assert losses[-1] < losses[0]

    def test_training_deterministic(self, rng):
        feats, labels = self.separable_set(rng)
        cfg = cnn.TrainConfig(epochs=3, batch_size=16, seed=2)
        weights = []
        for _ in range(2):
            train_set, _ = cnn.extract_patches(feats, labels, cfg)
            model = cnn.init_model(4, 2, seed=2)
            cnn.train(model, train_set, cfg)
            weights.append([p.copy() for p in model.params()])
        for a, b in zip(*weights):
            assert np.array_equal(a, b)


class TestClassifyImage:
    def test_constant_features_constant_map(self, rng):
        model = tiny_model(channels=3, classes=2)
        feats = np.ones((6, 7, 3))
        out = cnn.classify_image(model, feats)
        assert out.shape == (6, 7)
        assert len(np.unique(out)) == 1
        assert out.min() >= 1

    def test_classifies_separable_train_pixels(self, rng):
        feats = rng.standard_normal((12, 24, 4)) * 0.1
        labels = np.zeros((12, 24), dtype=np.int32)
        labels[:, :12] = 1
        labels[:, 12:] = 2
        feats[:, 12:, 0] += 3.0
        cfg = cnn.TrainConfig(epochs=30, batch_size=32, train_ratio=0.5, seed=1)
        train_set, _ = cnn.extract_patches(feats, labels, cfg)
        model = cnn.init_model(4, 2, seed=1)
        cnn.train(model, train_set, cfg)
        pred = cnn.classify_image(model, feats)
        mask = labels > 0
        assert (pred[mask] == labels[mask]).mean() >= 0.95


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = tiny_model(channels=5, classes=3, seed=12)
        path = tmp_path / "m.cnn"
        cnn.save_model(path, model)
        back = cnn.load_model(path)
        for a, b in zip(model.params(), back.params()):
            assert np.array_equal(a, b)
        assert back.channels == 5 and back.classes == 3

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.cnn"
        path.write_bytes(b"WRONGMAG" + b"\0" * 32)
        with pytest.raises(BadMagicError):
            cnn.load_model(path)
