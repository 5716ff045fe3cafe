import json

import numpy as np
import pytest

from riveg.errors import DataError
from riveg.retrieval import FeatureVector, build_index, load_features, topn_similar


def brute_force_topn(vectors, query, n):
    """Full-sort oracle with the same tie rule (descending cosine, index order)."""
    q = query / np.linalg.norm(query)
    scored = []
    for pos, v in enumerate(vectors):
        cos = float(np.dot(v.vec / np.linalg.norm(v.vec), q))
        scored.append((pos, v.id, cos))
    scored.sort(key=lambda item: (-item[2], item[0]))
    return [(vid, cos) for _, vid, cos in scored[:n]]


def make_vectors(rng, count, dim):
    return [FeatureVector(f"v{i}", rng.normal(size=dim)) for i in range(count)]


class TestBuildIndex:
    def test_single_vector(self):
        index = build_index([FeatureVector("a", np.array([1.0, 2.0]))])
        assert len(index) == 1
        assert index.dim == 2

    def test_mixed_dimensions_rejected(self):
        vectors = [FeatureVector("a", np.ones(4)), FeatureVector("b", np.ones(5))]
        with pytest.raises(DataError, match="dimension mismatch"):
            build_index(vectors)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            FeatureVector("a", np.zeros(3))

    def test_empty_rejected(self):
        with pytest.raises(DataError, match="zero vectors"):
            build_index([])

    def test_unit_norms(self):
        rng = np.random.default_rng(0)
        index = build_index(make_vectors(rng, 20, 6))
        norms = np.linalg.norm(index.unit, axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-9)


class TestTopnSimilar:
    def test_identity_query(self):
        rng = np.random.default_rng(1)
        vectors = make_vectors(rng, 10, 5)
        index = build_index(vectors)
        results = topn_similar(index, FeatureVector("q", vectors[3].vec.copy()), 1)
        assert results[0][0] == "v3"
        assert results[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_query_keeps_index_order(self):
        basis = [
            FeatureVector("a", np.array([1.0, 0.0, 0.0])),
            FeatureVector("b", np.array([0.0, 1.0, 0.0])),
        ]
        index = build_index(basis)
        results = topn_similar(index, FeatureVector("q", np.array([0.0, 0.0, 2.0])), 5)
        assert [r[0] for r in results] == ["a", "b"]
        assert all(abs(cos) <= 1e-12 for _, cos in results)

    def test_n_larger_than_index(self):
        rng = np.random.default_rng(2)
        vectors = make_vectors(rng, 4, 3)
        index = build_index(vectors)
        assert len(topn_similar(index, FeatureVector("q", rng.normal(size=3)), 10)) == 4

    def test_zero_norm_query_rejected(self):
        rng = np.random.default_rng(3)
        index = build_index(make_vectors(rng, 3, 3))
        with pytest.raises(ValueError):
            topn_similar(index, FeatureVector("q", np.zeros(3)), 1)

    def test_bad_n(self):
        rng = np.random.default_rng(4)
        index = build_index(make_vectors(rng, 3, 3))
        with pytest.raises(DataError):
            topn_similar(index, FeatureVector("q", np.ones(3)), 0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            count = int(rng.integers(1, 30))
            dim = int(rng.integers(2, 8))
            vectors = make_vectors(rng, count, dim)
            index = build_index(vectors)
            query = FeatureVector("q", rng.normal(size=dim))
            n = int(rng.integers(1, count + 3))
            got = topn_similar(index, query, n)
            expected = brute_force_topn(vectors, query.vec, n)
            assert [g[0] for g in got] == [e[0] for e in expected]
            for (_, gc), (_, ec) in zip(got, expected):
                assert gc == pytest.approx(ec, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        vectors = make_vectors(rng, 15, 4)
        index = build_index(vectors)
        scaled_index = build_index(
            [FeatureVector(v.id, v.vec * float(rng.uniform(0.1, 50))) for v in vectors]
        )
        for _ in range(50):
            query = rng.normal(size=4)
            base = topn_similar(index, FeatureVector("q", query), 5)
            scaled = topn_similar(scaled_index, FeatureVector("q", query * 7.25), 5)
            assert [b[0] for b in base] == [s[0] for s in scaled]
            for (_, bc), (_, sc) in zip(base, scaled):
                assert abs(bc - sc) <= 1e-9


def test_load_features(tmp_path):
    path = tmp_path / "f.jsonl"
    path.write_text(
        json.dumps({"id": "a", "vec": [1.0, 2.0]}) + "\n" + json.dumps({"id": "b", "vec": [3.0, 4.0]}) + "\n",
        encoding="utf-8",
    )
    vectors = load_features(path)
    assert [v.id for v in vectors] == ["a", "b"]
    with pytest.raises(DataError):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"}\n', encoding="utf-8")
        load_features(bad)
