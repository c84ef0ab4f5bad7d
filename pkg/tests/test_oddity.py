import json
from pathlib import Path

import numpy as np
import pytest

from structbench import featurenet, imageio
from structbench.dataset import DatasetManifest, TripletRecord
from structbench.oddity import (
    Embedding,
    FeatureNetProvider,
    FileProvider,
    MetricError,
    PixelProvider,
    RandomProvider,
    cosine_distance,
    evaluate,
    oddity_scores,
    select_odd,
    write_embeddings,
)

from fixtures import blob_texture


def emb(v, image_id="x"):
    return Embedding(np.asarray(v, dtype=float), image_id)


def softmax(s):
    z = np.exp(np.asarray(s) - np.max(s))
    return z / z.sum()


class TestCosineDistance:
    def test_identical_vectors(self):
        assert cosine_distance(emb([1, 2, 3]), emb([1, 2, 3])) == pytest.approx(0.0)

    def test_orthogonal_vectors(self):
        assert cosine_distance(emb([1, 0]), emb([0, 1])) == pytest.approx(1.0)

    def test_opposite_vectors(self):
        assert cosine_distance(emb([1, 1]), emb([-1, -1])) == pytest.approx(2.0)

    def test_zero_vector_rejected_at_ingestion(self):
        with pytest.raises(MetricError, match="zero-norm"):
            emb([0, 0, 0])

    def test_dim_mismatch(self):
        with pytest.raises(MetricError):
            cosine_distance(emb([1, 0]), emb([1, 0, 0]))


class TestOddityScores:
    def test_identical_embeddings(self):
        scores = oddity_scores([emb([1, 2]), emb([1, 2]), emb([1, 2])])
        assert scores == pytest.approx([0.0, 0.0, 0.0])

    def test_worked_example(self):
        # cos(e1,e2)=1, cos(e1,e3)=cos(e2,e3)=0 -> D = (0.5, 0.5, 1.0)
        scores = oddity_scores([emb([1, 0]), emb([1, 0]), emb([0, 1])])
        assert scores == pytest.approx([0.5, 0.5, 1.0])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        es = [emb(rng.normal(size=5)) for _ in range(3)]
        base = oddity_scores(es)
        for perm in ([0, 2, 1], [1, 0, 2], [2, 1, 0], [1, 2, 0], [2, 0, 1]):
            permuted = oddity_scores([es[i] for i in perm])
            assert permuted == pytest.approx([base[i] for i in perm], abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        es = [rng.normal(size=6) for _ in range(3)]
        base = oddity_scores([emb(e) for e in es])
        scaled = oddity_scores([emb(es[0] * 7.5), emb(es[1]), emb(es[2] * 0.001)])
        assert np.max(np.abs(np.array(base) - scaled)) < 1e-12


class TestSelectOdd:
    def test_worked_example(self):
        assert select_odd([0.5, 0.5, 1.0]) == (2, False)

    def test_all_tie_picks_lowest_index(self):
        assert select_odd([0.0, 0.0, 0.0]) == (0, True)

    def test_two_way_tie_flagged(self):
        idx, tie = select_odd([0.7, 0.7, 0.1])
        assert idx == 0 and tie

    def test_softmax_argmax_equivalence(self):
        rng = np.random.default_rng(2)
        for _ in range(2000):
            s = rng.normal(scale=3.0, size=3)
            assert select_odd(s)[0] == int(np.argmax(softmax(s)))


def make_manifest(tmp_path, triples):
    """triples: list of (original_img, var0_img, var1_img)."""
    records = []
    for i, (o, v0, v1) in enumerate(triples):
        tid = f"t{i:05d}"
        imageio.write_rgb(tmp_path / f"{tid}_orig.png", o)
        imageio.write_rgb(tmp_path / f"{tid}_var0.png", v0)
        imageio.write_rgb(tmp_path / f"{tid}_var1.png", v1)
        records.append(TripletRecord(id=tid, original_path=f"{tid}_orig.png",
                                     variant_paths=[f"{tid}_var0.png", f"{tid}_var1.png"],
                                     seeds=[2 * i, 2 * i + 1], config_hash="test"))
    return DatasetManifest(format_version=1, featurenet_config={},
                           synthesis_config={}, base_seed=0, records=records)


class TestEvaluate:
    def test_pixel_oracle_on_identical_variants(self, tmp_path):
        # both variants pixel-identical to each other -> original is the odd one
        triples = []
        rng = np.random.default_rng(3)
        for i in range(8):
            o = rng.random((3, 8, 8))
            v = rng.random((3, 8, 8))
            triples.append((o, v, v.copy()))
        m = make_manifest(tmp_path, triples)
        report = evaluate(m, PixelProvider(), tmp_path, shuffle_seed=1)
        assert report.accuracy == 1.0

    def test_random_provider_near_chance(self, tmp_path):
        rng = np.random.default_rng(4)
        triples = []
        for _ in range(60):
            img = rng.random((3, 4, 4))
            triples.append((img, img, img))
        m = make_manifest(tmp_path, triples)
        report = evaluate(m, RandomProvider(dim=8, seed=7), tmp_path, shuffle_seed=2)
        assert 0.05 < report.accuracy < 0.65  # loose; acceptance pins the 99% interval

    def test_deterministic_given_seed(self, tmp_path):
        rng = np.random.default_rng(5)
        triples = [(rng.random((3, 4, 4)), rng.random((3, 4, 4)), rng.random((3, 4, 4)))
                   for _ in range(10)]
        m = make_manifest(tmp_path, triples)
        r1 = evaluate(m, RandomProvider(dim=8, seed=9), tmp_path, shuffle_seed=3)
        r2 = evaluate(m, RandomProvider(dim=8, seed=9), tmp_path, shuffle_seed=3)
        assert r1.accuracy == r2.accuracy
        assert [v.chosen for v in r1.verdicts] == [v.chosen for v in r2.verdicts]

    def test_featurenet_provider_dim(self, tmp_path):
        net = featurenet.build(featurenet.default_config())
        img = blob_texture(0, seed=0, h=32, w=32)
        imageio.write_rgb(tmp_path / "a.png", img)
        e = FeatureNetProvider(net).embedding("a", tmp_path / "a.png")
        assert e.vector.shape == (64,)


class TestFileProvider:
    def test_round_trip(self, tmp_path):
        vectors = {"a": np.array([1.0, 2.0, 3.0]), "b": np.array([4.0, 5.0])}
        write_embeddings(tmp_path, vectors)
        fp = FileProvider(tmp_path)
        assert np.array_equal(fp.embedding("a", Path("unused")).vector, vectors["a"])
        assert np.array_equal(fp.embedding("b", Path("unused")).vector, vectors["b"])

    def test_missing_id_names_image(self, tmp_path):
        write_embeddings(tmp_path, {"a": np.ones(2)})
        with pytest.raises(MetricError, match="'zzz'"):
            FileProvider(tmp_path).embedding("zzz", Path("unused"))

    def test_dim_mismatch_detected(self, tmp_path):
        write_embeddings(tmp_path, {"a": np.ones(4)})
        index = json.loads((tmp_path / "embeddings.json").read_text())
        index["a"]["dim"] = 5
        (tmp_path / "embeddings.json").write_text(json.dumps(index))
        with pytest.raises(MetricError, match="dim"):
            FileProvider(tmp_path).embedding("a", Path("unused"))

    def test_missing_index_rejected(self, tmp_path):
        with pytest.raises(MetricError, match="index"):
            FileProvider(tmp_path / "nowhere")
