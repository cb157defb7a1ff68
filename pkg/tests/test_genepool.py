import math

import numpy as np
import pytest

from biobo import (
    GenePool,
    PathwayDB,
    build_pool,
    fuse,
    load_embeddings,
    load_labels,
    parse_gmt,
    synth_benchmark,
    train_test_split,
)
from biobo.genepool import PoolState


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadEmbeddings:
    def test_roundtrip(self, tmp_path):
        p = _write(tmp_path / "m.csv", "gene_id,f0,f1\nA,1.0,2.0\nB,0.0,1.0\n")
        table = load_embeddings(p, "m")
        assert set(table) == {"A", "B"}
        np.testing.assert_array_equal(table["A"], [1.0, 2.0])
        np.testing.assert_array_equal(table["B"], [0.0, 1.0])

    def test_duplicate_id_named(self, tmp_path):
        p = _write(tmp_path / "m.csv", "gene_id,f0\nA,1.0\nA,2.0\n")
        with pytest.raises(ValueError, match="'A'"):
            load_embeddings(p, "m")

    def test_nan_cell_rejected(self, tmp_path):
        p = _write(tmp_path / "m.csv", "gene_id,f0,f1\nA,1.0,NaN\n")
        with pytest.raises(ValueError, match="f1"):
            load_embeddings(p, "m")

    def test_unparsable_cell_reports_position(self, tmp_path):
        p = _write(tmp_path / "m.csv", "gene_id,f0,f1\nA,1.0,2.0\nB,x,2.0\n")
        with pytest.raises(ValueError, match="3.*f0|f0.*3"):
            load_embeddings(p, "m")

    def test_ragged_row(self, tmp_path):
        p = _write(tmp_path / "m.csv", "gene_id,f0,f1\nA,1.0\n")
        with pytest.raises(ValueError, match="fields"):
            load_embeddings(p, "m")

    def test_bad_header(self, tmp_path):
        p = _write(tmp_path / "m.csv", "id,f0\nA,1.0\n")
        with pytest.raises(ValueError, match="gene_id"):
            load_embeddings(p, "m")

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_embeddings(str(tmp_path / "nope.csv"), "m")


class TestLoadLabels:
    def test_roundtrip(self, tmp_path):
        p = _write(tmp_path / "y.csv", "gene_id,value\nA,1.5\nB,-0.25\n")
        assert load_labels(p) == {"A": 1.5, "B": -0.25}

    def test_header_enforced(self, tmp_path):
        p = _write(tmp_path / "y.csv", "gene_id,score\nA,1.5\n")
        with pytest.raises(ValueError, match="value"):
            load_labels(p)


class TestParseGmt:
    def test_dedup_within_line(self, tmp_path):
        p = _write(tmp_path / "p.gmt", "P1\tdesc\tA\tB\tB\n")
        db = parse_gmt(p)
        assert db.pathways["P1"] == frozenset({"A", "B"})

    def test_duplicate_name(self, tmp_path):
        p = _write(tmp_path / "p.gmt", "P1\tdesc\tA\nP1\tdesc\tB\n")
        with pytest.raises(ValueError, match="duplicate"):
            parse_gmt(p)

    def test_too_few_fields(self, tmp_path):
        p = _write(tmp_path / "p.gmt", "P2\tdesc\n")
        with pytest.raises(ValueError, match="fields"):
            parse_gmt(p)

    def test_empty_gene_list(self, tmp_path):
        p = _write(tmp_path / "p.gmt", "P2\tdesc\t\n")
        with pytest.raises(ValueError, match="no genes"):
            parse_gmt(p)


class TestBuildPool:
    def _tables(self):
        m1 = {"A": np.array([1.0]), "B": np.array([2.0]), "C": np.array([3.0])}
        m2 = {"B": np.array([1.0, 1.0]), "C": np.array([2.0, 2.0]), "D": np.array([3.0, 3.0])}
        labels = {"B": 1.0, "C": 2.0, "D": 3.0}
        return {"m1": m1, "m2": m2}, labels

    def test_intersection(self):
        tables, labels = self._tables()
        pool, _ = build_pool(tables, labels, PathwayDB({}))
        assert pool.ids == ("B", "C")

    def test_pathway_dropped_when_emptied(self):
        tables, labels = self._tables()
        db = PathwayDB({"keep": {"B", "A"}, "drop": {"A", "D"}})
        _, restricted = build_pool(tables, labels, db)
        assert set(restricted.pathways) == {"keep"}
        assert restricted.pathways["keep"] == frozenset({"B"})
        assert restricted.universe_hint == 2

    def test_empty_intersection(self):
        with pytest.raises(ValueError, match="no gene"):
            build_pool({"m": {"A": np.array([1.0])}}, {"X": 1.0}, PathwayDB({}))

    def test_idempotent(self):
        tables, labels = self._tables()
        pool1, _ = build_pool(tables, labels, PathwayDB({}))
        tables2 = {
            name: {g: mat[i] for i, g in enumerate(pool1.ids)}
            for name, mat in pool1.modalities.items()
        }
        pool2, _ = build_pool(tables2, pool1.labels, PathwayDB({}))
        assert pool2.ids == pool1.ids
        assert pool2.labels == pool1.labels
        for name in pool1.modalities:
            np.testing.assert_array_equal(pool2.modalities[name], pool1.modalities[name])


class TestFuse:
    def test_l2_normalization(self):
        pool = GenePool(("A",), {"m": np.array([[3.0, 4.0]])}, {"A": 0.0})
        np.testing.assert_allclose(fuse(pool, ["m"]), [[0.6, 0.8]])

    def test_concatenation_width(self):
        pool = GenePool(
            ("A",),
            {"m1": np.ones((1, 2)), "m2": np.ones((1, 3))},
            {"A": 0.0},
        )
        assert fuse(pool, ["m1", "m2"]).shape == (1, 5)

    def test_zero_row_passthrough(self):
        pool = GenePool(("A",), {"m": np.zeros((1, 2))}, {"A": 0.0})
        fused = fuse(pool, ["m"])
        np.testing.assert_array_equal(fused, [[0.0, 0.0]])
        assert np.all(np.isfinite(fused))

    def test_unknown_modality(self, tiny_pool):
        with pytest.raises(ValueError, match="unknown modality"):
            fuse(tiny_pool, ["nope"])

    def test_row_norm_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, d1, d2 = rng.integers(2, 8), rng.integers(1, 5), rng.integers(1, 5)
            mods = {
                "a": rng.standard_normal((n, d1)) + 0.1,
                "b": rng.standard_normal((n, d2)) + 0.1,
            }
            pool = GenePool(
                tuple(f"g{i}" for i in range(n)), mods, {f"g{i}": 0.0 for i in range(n)}
            )
            norms = np.linalg.norm(fuse(pool, ["a", "b"]), axis=1)
            assert np.all(norms <= math.sqrt(2) + 1e-9)
            np.testing.assert_allclose(norms, math.sqrt(2), atol=1e-9)


class TestSynthBenchmark:
    def test_deterministic(self):
        a_pool, a_db = synth_benchmark(60, d=3, n_pathways=6, signal_pathways=2, noise_sd=0.2, seed=7)
        b_pool, b_db = synth_benchmark(60, d=3, n_pathways=6, signal_pathways=2, noise_sd=0.2, seed=7)
        assert a_pool.ids == b_pool.ids
        assert a_pool.labels == b_pool.labels
        np.testing.assert_array_equal(a_pool.modalities["embedding"], b_pool.modalities["embedding"])
        assert a_db.pathways == b_db.pathways

    def test_top_genes_concentrate_in_signal_pathway(self):
        pool, db = synth_benchmark(1000, d=8, n_pathways=10, signal_pathways=1, noise_sd=0.1, seed=3)
        k = math.ceil(0.01 * pool.size)
        top = sorted(pool.ids, key=lambda g: (-pool.labels[g], g))[:k]
        signal = db.pathways["PW000"]
        inside = sum(1 for g in top if g in signal)
        assert inside / k >= 0.95

    def test_partition_sizes(self):
        _, db = synth_benchmark(100, d=2, n_pathways=10, signal_pathways=1, noise_sd=0.1, seed=0)
        assert sorted(len(m) for m in db.pathways.values()) == [10] * 10

    def test_signal_label_gap(self):
        for seed in range(5):
            pool, db = synth_benchmark(
                200, d=4, n_pathways=8, signal_pathways=2, noise_sd=0.5, seed=seed
            )
            signal = db.pathways["PW000"] | db.pathways["PW001"]
            sig = np.mean([pool.labels[g] for g in pool.ids if g in signal])
            rest = np.mean([pool.labels[g] for g in pool.ids if g not in signal])
            assert sig - rest >= 1.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_genes": 10},
            {"n_genes": 100, "signal_pathways": 0},
            {"n_genes": 100, "n_pathways": 4, "signal_pathways": 5},
            {"n_genes": 100, "noise_sd": -0.1},
        ],
    )
    def test_parameter_bounds(self, kwargs):
        with pytest.raises(ValueError):
            synth_benchmark(**{"d": 2, "n_pathways": 5, "signal_pathways": 1,
                               "noise_sd": 0.1, "seed": 0, **kwargs})


class TestTrainTestSplit:
    def test_disjoint_exhaustive(self, small_bench):
        pool, _ = small_bench
        train, test = train_test_split(pool, 0.2, seed=1)
        assert len(train) == 80 and len(test) == 20
        assert set(train) | set(test) == set(pool.ids)
        assert set(train) & set(test) == set()

    def test_top_decile_stratified(self, small_bench):
        pool, _ = small_bench
        _, test = train_test_split(pool, 0.2, seed=4)
        top10 = set(sorted(pool.ids, key=lambda g: (-pool.labels[g], g))[:10])
        assert len(top10 & set(test)) == 2

    def test_deterministic(self, small_bench):
        pool, _ = small_bench
        assert train_test_split(pool, 0.3, seed=9) == train_test_split(pool, 0.3, seed=9)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
    def test_fraction_bounds(self, small_bench, fraction):
        pool, _ = small_bench
        with pytest.raises(ValueError):
            train_test_split(pool, fraction, seed=0)


class TestPoolState:
    def test_observe_moves_ids(self, tiny_pool):
        state = PoolState.fresh(tiny_pool)
        state.observe(["B", "D"], [2.0, 1.5], cycle=1)
        assert set(state.labeled) == {"B", "D"}
        assert state.unlabeled == ["A", "C"]
        assert state.cycle == 1

    def test_observe_rejects_unknown(self, tiny_pool):
        state = PoolState.fresh(tiny_pool)
        state.observe(["B"], [2.0], cycle=1)
        with pytest.raises(ValueError):
            state.observe(["B"], [2.0], cycle=2)

    def test_partition_invariant(self, tiny_pool):
        state = PoolState.fresh(tiny_pool)
        state.observe(["A"], [0.1], cycle=1)
        assert set(state.labeled) | set(state.unlabeled) == set(tiny_pool.ids)
        assert set(state.labeled) & set(state.unlabeled) == set()
