import numpy as np
import pytest

from structbench.distinguish import (
    ClassifierConfig,
    ClassifierFeatureProvider,
    LabelError,
    LabeledDataset,
    LabeledItem,
    ToyClassifier,
    TrainingError,
    accuracy,
    default_classifier_config,
    expand_labels,
    remap_logits,
    train,
)
from structbench.featurenet import ConvSpec
from structbench.tensor import DimensionError

from fixtures import blob_texture


def small_config(n_classes, hw=(16, 16), seed=0):
    return ClassifierConfig(layers=(ConvSpec(4, 3, 1, 1), "relu", "pool"),
                            n_classes=n_classes, input_hw=hw, init_seed=seed)


class TestExpandLabels:
    def test_single_class(self):
        base = LabeledDataset([LabeledItem("a.png", 0)], n_base_classes=1)
        out = expand_labels(base, {0: ["a_d.png"]})
        assert sorted((it.image_path, it.label) for it in out.items) == \
            [("a.png", 0), ("a_d.png", 1)]
        assert out.n_classes == 2

    def test_counts(self):
        base = LabeledDataset([LabeledItem(f"{i}.png", i % 3) for i in range(9)],
                              n_base_classes=3)
        disrupted = {0: ["d0.png", "d1.png"], 1: ["d2.png"], 2: ["d3.png"]}
        out = expand_labels(base, disrupted)
        assert len(out.items) == 9 + 4

    def test_labels_offset_by_n(self):
        base = LabeledDataset([LabeledItem("a.png", 0), LabeledItem("b.png", 1)],
                              n_base_classes=2)
        out = expand_labels(base, {0: ["da.png"], 1: ["db.png"]})
        by_path = {it.image_path: it.label for it in out.items}
        assert by_path["da.png"] == 2 and by_path["db.png"] == 3

    def test_class_without_disrupted_rejected(self):
        base = LabeledDataset([LabeledItem("a.png", 0), LabeledItem("b.png", 1)],
                              n_base_classes=2)
        with pytest.raises(LabelError, match="class 1"):
            expand_labels(base, {0: ["da.png"], 1: []})


class TestRemapLogits:
    def test_n1(self):
        assert np.array_equal(remap_logits(np.array([3.0, 4.0])), [7.0])

    def test_zeros(self):
        assert np.array_equal(remap_logits(np.zeros(6)), np.zeros(3))

    def test_n3_direct(self):
        z = np.array([1.0, 2, 3, 10, 20, 30])
        assert np.array_equal(remap_logits(z), [11.0, 22.0, 33.0])

    def test_odd_length_rejected(self):
        with pytest.raises(DimensionError):
            remap_logits(np.zeros(5))

    def test_block_swap_symmetry(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=8)
        swapped = np.concatenate([z[4:], z[:4]])
        assert np.allclose(remap_logits(z), remap_logits(swapped))


class TestTrain:
    def test_zero_lr_keeps_weights(self):
        model = ToyClassifier(small_config(2))
        before = [p.data.copy() for p in model.params()]
        X = np.random.default_rng(0).random((8, 3, 16, 16))
        y = np.array([0, 1] * 4)
        train(model, X, y, epochs=2, lr=0.0, batch_size=4, seed=0)
        for b, p in zip(before, model.params()):
            assert np.array_equal(b, p.data)

    def test_separable_two_class_reaches_full_accuracy(self):
        # class 0: dark images, class 1: bright images
        rng = np.random.default_rng(1)
        X0 = 0.2 * rng.random((20, 3, 16, 16))
        X1 = 0.8 + 0.2 * rng.random((20, 3, 16, 16))
        X = np.concatenate([X0, X1])
        y = np.array([0] * 20 + [1] * 20)
        model = ToyClassifier(small_config(2))
        curve = train(model, X, y, epochs=50, lr=0.02, batch_size=8, seed=1)
        assert accuracy(model, X, y) == 1.0
        assert curve[-1] < curve[0]

    def test_deterministic_for_seed(self):
        X = np.random.default_rng(2).random((12, 3, 16, 16))
        y = np.arange(12) % 2
        outs = []
        for _ in range(2):
            model = ToyClassifier(small_config(2))
            train(model, X, y, epochs=3, lr=0.02, batch_size=4, seed=7)
            outs.append([p.data.copy() for p in model.params()])
        for a, b in zip(*outs):
            assert np.array_equal(a, b)

    def test_label_beyond_head_width_rejected(self):
        model = ToyClassifier(small_config(2))
        X = np.zeros((2, 3, 16, 16))
        with pytest.raises(LabelError):
            train(model, X, np.array([0, 2]), epochs=1, lr=0.01)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        model = ToyClassifier(small_config(3, seed=5))
        path = tmp_path / "model.fnw"
        model.save(path)
        loaded = ToyClassifier.load(path)
        X = np.random.default_rng(3).random((2, 3, 16, 16))
        from structbench.tensor import Tensor
        assert np.array_equal(model.logits(Tensor(X)).data,
                              loaded.logits(Tensor(X)).data)


class TestEvalWiring:
    def test_feature_provider_bypasses_logits(self, tmp_path):
        # the embedding is the raw pre-head feature vector, not the
        # (remapped) class scores
        from structbench import imageio
        from structbench.tensor import Tensor
        model = ToyClassifier(small_config(4))
        img = blob_texture(0, seed=0, h=16, w=16)
        imageio.write_rgb(tmp_path / "a.png", img)
        e = ClassifierFeatureProvider(model).embedding("a", tmp_path / "a.png")
        decoded = imageio.read_rgb(tmp_path / "a.png")
        assert np.allclose(e.vector, model.features(decoded))
        assert not np.allclose(e.vector, model.logits(Tensor(decoded)).data)
