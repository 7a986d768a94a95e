import json

import numpy as np
import pytest

from glind.data import (Dataset, Graph, KnnSpec, ShiftBenchmarkConfig, build_knn_graph,
                        generate_shift_benchmark, load_benchmark, load_dataset,
                        make_pseudo_dataset, split_by_domain, write_benchmark)
from glind.errors import ConfigError, DataError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestGraph:
    def test_symmetrize_and_dedup(self):
        g = Graph.from_pairs(4, [(0, 1), (1, 0), (2, 3)])
        assert g.num_undirected_edges == 2
        assert np.array_equal(g.pairs, [[0, 1], [2, 3]])
        assert np.array_equal(g.neighbors(0), [1])
        assert np.array_equal(g.neighbors(1), [0])

    def test_self_loops_dropped(self):
        g = Graph.from_pairs(3, [(1, 1), (0, 2)])
        assert g.num_undirected_edges == 1
        assert g.degrees[1] == 0

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            Graph.from_pairs(3, [(0, 3)])

    def test_symmetry_invariant(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 30))
            m = int(rng.integers(0, 40))
            pairs = rng.integers(0, n, size=(m, 2))
            g = Graph.from_pairs(n, pairs)
            fwd = set(map(tuple, np.stack([g.edge_src, g.edge_dst], axis=1)))
            assert all((v, u) in fwd for u, v in fwd)
            assert all(u != v for u, v in fwd)
            assert all(len(g.neighbors(u)) == g.degrees[u] for u in range(n))


class TestLoaders:
    def test_load_roundtrip(self, tmp_path):
        f = write(tmp_path, "features.tsv", "1.0\t2.0\n3.0\t4.0\n0.5\t0.5\n1\t0\n")
        l = write(tmp_path, "labels.tsv", "0\n1\nNA\n1\n")
        e = write(tmp_path, "edges.tsv", "0\t1\n1\t0\n2\t3\n")
        d = write(tmp_path, "domains.tsv", "0\n0\n1\n1\n")
        ds, g = load_dataset(f, l, e, d, task="classification")
        assert ds.n == 4 and ds.dim == 2
        assert g.num_undirected_edges == 2
        assert np.array_equal(ds.labeled_indices, [0, 1, 3])
        assert ds.num_classes == 2

    def test_na_labels_excluded(self, tmp_path):
        f = write(tmp_path, "f.tsv", "1.0\n2.0\n3.0\n")
        l = write(tmp_path, "l.tsv", "NA\n0\nNA\n")
        ds, _ = load_dataset(f, l, task="classification")
        assert np.array_equal(ds.labeled_indices, [1])

    def test_bad_token_cites_line(self, tmp_path):
        rows = ["1.0"] * 10
        rows[6] = "oops"
        f = write(tmp_path, "f.tsv", "\n".join(rows) + "\n")
        l = write(tmp_path, "l.tsv", "\n".join("0" for _ in range(10)) + "\n")
        with pytest.raises(DataError, match=r"f\.tsv:7"):
            load_dataset(f, l, task="classification")

    def test_row_count_mismatch(self, tmp_path):
        f = write(tmp_path, "f.tsv", "1.0\n2.0\n")
        l = write(tmp_path, "l.tsv", "0\n")
        with pytest.raises(DataError, match="labels"):
            load_dataset(f, l, task="classification")

    def test_no_edges_path_gives_empty_graph(self, tmp_path):
        f = write(tmp_path, "f.tsv", "1.0\n2.0\n")
        l = write(tmp_path, "l.tsv", "0\n1\n")
        _, g = load_dataset(f, l, task="classification")
        assert g.num_undirected_edges == 0

    def test_edge_out_of_range_cites_line(self, tmp_path):
        f = write(tmp_path, "f.tsv", "1.0\n2.0\n")
        l = write(tmp_path, "l.tsv", "0\n1\n")
        e = write(tmp_path, "e.tsv", "0\t1\n0\t9\n")
        with pytest.raises(DataError, match=r"e\.tsv:2"):
            load_dataset(f, l, e, task="classification")


class TestKnn:
    def test_three_points_on_a_line(self):
        # exhaustive pairwise distances: 0 picks 1, 1 picks 0, 2 picks 1
        x = np.array([[0.0], [1.0], [3.0]])
        g = build_knn_graph(x, KnnSpec(k=1, metric="euclidean"))
        assert np.array_equal(g.pairs, [[0, 1], [1, 2]])

    def test_zero_theta_matches_plain_cosine(self, rng):
        x = rng.standard_normal((30, 5))
        a = build_knn_graph(x, KnnSpec(k=3, metric="cosine"))
        b = build_knn_graph(x, KnnSpec(k=3, metric="angle-biased-cosine", theta_degrees=0.0))
        assert a == b

    def test_saturation_gives_complete_graph(self):
        x = np.random.default_rng(0).standard_normal((6, 2))
        g = build_knn_graph(x, KnnSpec(k=5))
        assert g.num_undirected_edges == 15

    def test_needs_more_points_than_k(self):
        with pytest.raises(ConfigError):
            build_knn_graph(np.ones((3, 2)), KnnSpec(k=3))

    def test_zero_row_rejected_for_cosine(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ConfigError, match="row 1"):
            build_knn_graph(x, KnnSpec(k=1, metric="cosine"))

    def test_tie_breaks_toward_lower_index(self):
        # 1 and 2 are equidistant from 0; the lower index wins
        x = np.array([[0.0], [1.0], [-1.0], [9.0]])
        g = build_knn_graph(x, KnnSpec(k=1))
        assert [0, 1] in g.pairs.tolist()

    def test_permutation_equivariance(self, rng):
        x = rng.standard_normal((20, 3))
        perm = rng.permutation(20)
        g = build_knn_graph(x, KnnSpec(k=2))
        gp = build_knn_graph(x[perm], KnnSpec(k=2))
        relabeled = {tuple(sorted((int(np.nonzero(perm == u)[0][0]),
                                   int(np.nonzero(perm == v)[0][0]))))
                     for u, v in g.pairs}
        assert relabeled == set(map(tuple, gp.pairs.tolist()))

    def test_theta_requires_angle_metric(self):
        with pytest.raises(ConfigError):
            KnnSpec(k=2, metric="euclidean", theta_degrees=30.0)


def small_bench_config(**kw):
    base = dict(seed=7, n=60, dim=4, classes=3,
                domain_specs=(KnnSpec(k=2), KnnSpec(k=5)), gamma=1.5)
    base.update(kw)
    return ShiftBenchmarkConfig(**base)


class TestShiftBenchmark:
    def test_gamma_zero_labels_equal_clusters(self):
        domains = generate_shift_benchmark(small_bench_config(gamma=0.0))
        for dom in domains:
            assert np.array_equal(dom.dataset.labels, dom.clusters.astype(float))

    def test_same_seed_bit_identical(self):
        a = generate_shift_benchmark(small_bench_config())
        b = generate_shift_benchmark(small_bench_config())
        for da, db in zip(a, b):
            assert np.array_equal(da.dataset.features, db.dataset.features)
            assert np.array_equal(da.dataset.labels, db.dataset.labels)
            assert da.graph == db.graph

    def test_six_domains_share_features(self):
        specs = tuple(KnnSpec(k=k) for k in (2, 3, 4, 8, 9, 10))
        domains = generate_shift_benchmark(small_bench_config(n=120, domain_specs=specs))
        assert len(domains) == 6
        for dom in domains[1:]:
            assert np.array_equal(dom.dataset.features, domains[0].dataset.features)
        ks = [dom.graph.num_undirected_edges for dom in domains]
        assert ks == sorted(ks)

    def test_identical_specs_identical_graphs(self):
        domains = generate_shift_benchmark(
            small_bench_config(domain_specs=(KnnSpec(k=3), KnnSpec(k=3))))
        assert domains[0].graph == domains[1].graph
        assert np.array_equal(domains[0].dataset.labels, domains[1].dataset.labels)

    def test_degenerate_class_count_rejected(self):
        with pytest.raises(ConfigError):
            small_bench_config(classes=1)

    def test_roundtrip_through_files(self, tmp_path):
        domains = generate_shift_benchmark(small_bench_config())
        manifest = write_benchmark(str(tmp_path / "bench"), domains, [0], [1])
        loaded, meta = load_benchmark(manifest)
        assert meta["train_domains"] == [0]
        for (ds, g), dom in zip(loaded, domains):
            assert np.allclose(ds.features, dom.dataset.features)
            assert np.array_equal(ds.labels, dom.dataset.labels)
            assert g == dom.graph


class TestPseudoDataset:
    def test_default_size_is_one_percent(self):
        x = np.zeros((250, 2))
        ps = make_pseudo_dataset(x, edge_prob=0.0, seed=1)
        assert ps.size == 2

    def test_default_size_floors_at_one(self):
        ps = make_pseudo_dataset(np.zeros((50, 2)), edge_prob=0.0, seed=1)
        assert ps.size == 1

    def test_complete_graph_at_probability_one(self):
        ps = make_pseudo_dataset(np.zeros((100, 2)), size=6, edge_prob=1.0, seed=0)
        assert ps.graph.num_undirected_edges == 15

    def test_edgeless_at_probability_zero(self):
        ps = make_pseudo_dataset(np.zeros((100, 2)), size=6, edge_prob=0.0, seed=0)
        assert ps.graph.num_undirected_edges == 0

    def test_size_exceeding_n_rejected(self):
        with pytest.raises(ConfigError):
            make_pseudo_dataset(np.zeros((5, 2)), size=6, edge_prob=0.5)

    def test_density_default_from_graph(self):
        g = Graph.from_pairs(10, [(i, (i + 1) % 10) for i in range(10)])
        ps = make_pseudo_dataset(np.zeros((10, 2)), graph=g, size=4, seed=0)
        assert np.isclose(ps.edge_prob, g.density)

    def test_sampling_without_replacement(self):
        ps = make_pseudo_dataset(np.arange(40).reshape(20, 2).astype(float),
                                 size=20, edge_prob=0.0, seed=3)
        assert len(set(ps.source_indices.tolist())) == 20


class TestSplits:
    def make_dataset(self, n=100, domains=(0, 1)):
        labels = np.arange(n) % 2
        dom = np.asarray(domains)[np.arange(n) % len(domains)]
        return Dataset(np.zeros((n, 2)), labels.astype(float), dom, "classification")

    def test_quarter_heldout(self):
        ds = self.make_dataset(200, domains=(0, 1))
        sp = split_by_domain(ds, [0], [1], valid_fraction=0.25, seed=0)
        assert sp.train.size == 75 and sp.valid.size == 25
        assert sp.test.size == 100

    def test_zero_fraction_rejected(self):
        ds = self.make_dataset()
        with pytest.raises(ConfigError):
            split_by_domain(ds, [0], [1], valid_fraction=0.0)

    def test_disjointness(self):
        ds = self.make_dataset(120, domains=(0, 1, 2))
        sp = split_by_domain(ds, [0, 1], [2], valid_fraction=0.25, seed=5)
        assert not set(sp.train) & set(sp.test)
        assert not set(sp.train) & set(sp.valid)
        assert not set(sp.valid) & set(sp.test)

    def test_overlapping_domains_rejected(self):
        ds = self.make_dataset()
        with pytest.raises(ConfigError):
            split_by_domain(ds, [0], [0], valid_fraction=0.25)

    def test_missing_domain_rejected(self):
        ds = self.make_dataset()
        with pytest.raises(ConfigError):
            split_by_domain(ds, [0], [7], valid_fraction=0.25)

    def test_unlabeled_excluded(self):
        ds = self.make_dataset(40, domains=(0, 1))
        ds.labels[::4] = np.nan
        sp = split_by_domain(ds, [0], [1], valid_fraction=0.25, seed=0)
        for idx in np.concatenate([sp.train, sp.valid, sp.test]):
            assert not np.isnan(ds.labels[idx])
