import json

import numpy as np
import pytest

from comem.exact import exact_pvw_bruteforce
from comem.graph import Graph, PlantedParams, sample_planted
from comem.hierarchy import (
    Dendrogram,
    average_linkage,
    coarse_grain,
    distance_matrix,
    order_leaves,
    pgm_bytes,
    render_matrix,
    triangle_check,
)
from comem.pvw import mu_bar, pvw_matrix_batch


def random_distances(rng, n):
    p = rng.uniform(0, 1, (n, n))
    p = 0.5 * (p + p.T)
    np.fill_diagonal(p, 1.0)
    return distance_matrix(p)


def two_block_distances(n, split):
    d = np.ones((n, n))
    d[:split, :split] = 0.0
    d[split:, split:] = 0.0
    return d


# ---------------------------------------------------------------------------
# distances


def test_distance_matrix_basic_values(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    dense = mat.to_dense()
    assert np.allclose(d, 1.0 - dense)
    assert np.all(np.diagonal(d) == 0.0)
    assert d.min() >= 0.0 and d.max() <= 1.0


def test_distance_matrix_certain_and_prior():
    p = np.array([[1.0, 1.0, mu_bar(34)], [1.0, 1.0, 0.5], [mu_bar(34), 0.5, 1.0]])
    d = distance_matrix(p)
    assert d[0, 1] == 0.0
    assert d[0, 2] == pytest.approx(1.0 - mu_bar(34))


def test_distance_matrix_clamps():
    p = np.array([[1.0, 1.2], [1.2, 1.0]])
    d = distance_matrix(p)
    assert d[0, 1] == 0.0  # overshoot clamps instead of going negative


# ---------------------------------------------------------------------------
# average linkage


def upgma_oracle(d):
    # dict-based reference with the same smallest-canonical-pair tie rule
    n = d.shape[0]
    clusters = {i: [i] for i in range(n)}
    ids = {i: i for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        for a in sorted(clusters):
            for b in sorted(clusters):
                if a >= b:
                    continue
                dist = float(
                    np.mean([d[x, y] for x in clusters[a] for y in clusters[b]])
                )
                key = (dist, min(a, b), max(a, b))
                if best is None or key < best:
                    best = key
        _, a, b = best
        merges.append((ids[a], ids[b], best[0]))
        clusters[a] = clusters[a] + clusters[b]
        ids[a] = n + step
        del clusters[b]
        del ids[b]
    return merges


def test_average_linkage_hand_case():
    d = np.array([[0.0, 0.1, 0.4], [0.1, 0.0, 0.6], [0.4, 0.6, 0.0]])
    dendro = average_linkage(d)
    assert dendro.merges == [(0, 1, 0.1), (3, 2, pytest.approx(0.5))]


def test_average_linkage_two_blocks():
    d = two_block_distances(9, 4)
    dendro = average_linkage(d)
    heights = dendro.heights()
    assert np.all(heights[:-1] == 0.0)
    assert heights[-1] == pytest.approx(1.0)
    labels = dendro.cut(0.5)
    assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1
    assert labels[0] != labels[-1]


def test_average_linkage_matches_oracle(rng):
    for _ in range(8):
        n = int(rng.integers(3, 11))
        d = random_distances(rng, n)
        got = average_linkage(d).merges
        want = upgma_oracle(d)
        assert [(a, b) for a, b, _ in got] == [(a, b) for a, b, _ in want]
        assert np.allclose([h for _, _, h in got], [h for _, _, h in want])


def test_average_linkage_heights_monotone(rng):
    for _ in range(30):
        n = int(rng.integers(3, 20))
        heights = average_linkage(random_distances(rng, n)).heights()
        assert np.all(np.diff(heights) >= -1e-12)


def test_average_linkage_all_ties_canonical():
    d = np.full((4, 4), 0.5)
    np.fill_diagonal(d, 0.0)
    dendro = average_linkage(d)
    assert dendro.merges == [(0, 1, 0.5), (4, 2, 0.5), (5, 3, 0.5)]
    assert dendro.leaf_order.tolist() == [0, 1, 2, 3]


def test_average_linkage_input_validation():
    with pytest.raises(ValueError):
        average_linkage(np.array([[0.0, 1.0], [0.9, 0.0]]))
    with pytest.raises(ValueError):
        average_linkage(np.array([[0.5, 1.0], [1.0, 0.5]]))
    big = np.zeros((4001, 4001))
    with pytest.raises(ValueError):
        average_linkage(big)


# ---------------------------------------------------------------------------
# dendrogram container


def test_dendrogram_leaf_order_is_permutation(rng):
    for _ in range(5):
        n = int(rng.integers(2, 25))
        dendro = average_linkage(random_distances(rng, n))
        assert sorted(dendro.leaf_order.tolist()) == list(range(n))


def test_dendrogram_cut_extremes(rng):
    d = random_distances(rng, 12)
    dendro = average_linkage(d)
    assert len(set(dendro.cut(0.0))) == 12  # all positive heights
    assert len(set(dendro.cut(dendro.root_height))) == 1
    with pytest.raises(ValueError):
        dendro.cut(-0.5)
    with pytest.raises(ValueError):
        dendro.cut(dendro.root_height + 1.0)


def test_dendrogram_cuts_nest(rng):
    d = random_distances(rng, 15)
    dendro = average_linkage(d)
    lo = dendro.cut(0.3 * dendro.root_height)
    hi = dendro.cut(0.8 * dendro.root_height)
    # every low-level block sits inside one high-level block
    for lab in set(lo.tolist()):
        assert len(set(hi[lo == lab].tolist())) == 1


def test_dendrogram_json_roundtrip(rng):
    d = random_distances(rng, 10)
    dendro = order_leaves(average_linkage(d), d)
    tree = dendro.to_json()
    back = Dendrogram.from_json(tree)
    assert back.merges == dendro.merges
    assert np.array_equal(back.leaf_order, dendro.leaf_order)
    again = Dendrogram.from_json(json.dumps(tree))
    assert again.merges == dendro.merges


def test_dendrogram_rejects_bad_merges():
    with pytest.raises(ValueError):
        Dendrogram(3, [(0, 1, 0.5)])  # missing a merge
    with pytest.raises(ValueError):
        Dendrogram(3, [(0, 1, 0.5), (3, 2, 0.2)])  # heights decrease


# ---------------------------------------------------------------------------
# leaf ordering


def test_order_leaves_two_nodes_tie():
    d = np.array([[0.0, 0.7], [0.7, 0.0]])
    dendro = order_leaves(average_linkage(d), d)
    assert dendro.leaf_order.tolist() == [0, 1]


def test_order_leaves_blocks_stay_contiguous():
    d = two_block_distances(10, 6)
    dendro = order_leaves(average_linkage(d), d)
    order = dendro.leaf_order.tolist()
    first = [v < 6 for v in order]
    assert first == sorted(first, reverse=True) or first == sorted(first)


def test_order_leaves_each_branch_locally_optimal(rng):
    # at every branch point, with the final left/right neighbor blocks,
    # swapping the two children cannot lower the local average distance
    for _ in range(10):
        n = int(rng.integers(4, 18))
        d = random_distances(rng, n)
        dendro = order_leaves(average_linkage(d), d)
        leaves = dendro.leaves_under

        def avg(xs, ys):
            return float(d[np.ix_(xs, ys)].mean()) if xs.size and ys.size else 0.0

        empty = np.array([], dtype=int)
        stack = [(dendro.root, empty, empty)]
        while stack:
            node, lctx, rctx = stack.pop()
            if node < dendro.n:
                continue
            a, b = dendro.children(node)
            kept = avg(lctx, leaves(a)) + avg(leaves(b), rctx)
            swapped = avg(lctx, leaves(b)) + avg(leaves(a), rctx)
            assert kept <= swapped + 1e-12
            stack.append((a, lctx, leaves(b)))
            stack.append((b, leaves(a), rctx))


def test_order_leaves_idempotent(rng):
    for _ in range(10):
        n = int(rng.integers(3, 16))
        d = random_distances(rng, n)
        once = order_leaves(average_linkage(d), d)
        twice = order_leaves(once, d)
        assert once.merges == twice.merges
        assert np.array_equal(once.leaf_order, twice.leaf_order)


def test_order_leaves_size_mismatch():
    d = np.zeros((3, 3))
    dendro = Dendrogram(2, [(0, 1, 0.5)])
    with pytest.raises(ValueError):
        order_leaves(dendro, d)


# ---------------------------------------------------------------------------
# rendering


def test_render_matrix_identity_diagonal():
    p = np.eye(5)
    pixels = render_matrix(p)
    assert np.all(np.diagonal(pixels) == 255)
    assert pixels.sum() == 5 * 255


def test_render_matrix_two_blocks_and_ordering():
    p = np.zeros((4, 4))
    p[:2, :2] = 1.0
    p[2:, 2:] = 1.0
    shuffled = [0, 2, 1, 3]
    pixels = render_matrix(p, ordering=shuffled)
    want = (255 * p[np.ix_(shuffled, shuffled)]).astype(np.uint8)
    assert np.array_equal(pixels, want)


def test_render_matrix_rejects_bad_ordering():
    with pytest.raises(ValueError):
        render_matrix(np.eye(3), ordering=[0, 1, 1])


def test_render_matrix_pgm_bytes_deterministic(tmp_path, karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    order = order_leaves(average_linkage(d), d).leaf_order
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    render_matrix(mat, ordering=order, path=a)
    render_matrix(mat, ordering=order, path=b)
    blob = a.read_bytes()
    assert blob == b.read_bytes()
    assert blob.startswith(b"P5\n34 34\n255\n")
    assert len(blob) == len(b"P5\n34 34\n255\n") + 34 * 34


def test_render_matrix_png_roundtrip(tmp_path):
    from PIL import Image

    p = np.linspace(0, 1, 16).reshape(4, 4)
    p = 0.5 * (p + p.T)
    path = tmp_path / "m.png"
    pixels = render_matrix(p, path=path)
    with Image.open(path) as img:
        assert img.size == (4, 4)
        assert np.array_equal(np.asarray(img), pixels)


def test_pgm_bytes_header():
    arr = np.zeros((2, 3), dtype=np.uint8)
    assert pgm_bytes(arr) == b"P5\n3 2\n255\n" + b"\x00" * 6


# ---------------------------------------------------------------------------
# coarse graining


def karate_view(karate, merge, community, **kw):
    mat, _ = pvw_matrix_batch(karate, method="integral")
    d = distance_matrix(mat)
    dendro = order_leaves(average_linkage(d), d)
    return mat, dendro, coarse_grain(karate, mat, dendro, merge, community, **kw)


def test_coarse_grain_level_zero_is_original(karate):
    mat, dendro, view = karate_view(karate, 0.0, 0.0)
    assert len(view.meta_nodes) == karate.n
    assert all(len(m) == 1 for m in view.meta_nodes)
    got_edges = {(view.meta_nodes[e["a"]][0], view.meta_nodes[e["b"]][0]) for e in view.meta_edges}
    want_edges = {(min(u, v), max(u, v)) for (u, v), _ in karate.edge_items()}
    assert got_edges == want_edges
    dense = mat.to_dense()
    for e in view.meta_edges:
        u, v = view.meta_nodes[e["a"]][0], view.meta_nodes[e["b"]][0]
        assert e["mean_p"] == pytest.approx(dense[u, v])
        assert e["edge_count"] == 1


def test_coarse_grain_root_single_meta(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    dendro = average_linkage(d)
    view = coarse_grain(karate, mat, dendro, dendro.root_height, dendro.root_height)
    assert len(view.meta_nodes) == 1
    assert view.meta_edges == []
    assert view.communities == ((0,),)


def test_coarse_grain_partitions_nodes(rng):
    truth, g = sample_planted(40, PlantedParams(3, 0.6, 0.05), seed=2)
    mat, _ = pvw_matrix_batch(g, method="hat")
    d = distance_matrix(mat)
    dendro = average_linkage(d)
    for frac in (0.2, 0.5, 0.9):
        level = frac * dendro.root_height
        view = coarse_grain(g, mat, dendro, level, min(1.2 * level, dendro.root_height))
        members = sorted(v for meta in view.meta_nodes for v in meta)
        assert members == list(range(g.n))
        assert sorted(i for c in view.communities for i in c) == list(
            range(len(view.meta_nodes))
        )
        for e in view.meta_edges:
            assert 0.0 <= e["mean_p"] <= 1.0


def test_coarse_grain_level_validation(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    dendro = average_linkage(d)
    with pytest.raises(ValueError):
        coarse_grain(karate, mat, dendro, 0.5, 0.2)
    with pytest.raises(ValueError):
        coarse_grain(karate, mat, dendro, -0.1, 0.5)
    with pytest.raises(ValueError):
        coarse_grain(karate, mat, dendro, 0.2, dendro.root_height + 1.0)


def test_coarse_grain_color_classes():
    g = Graph(4, [(0, 1), (1, 2), (2, 3)])
    p = np.eye(4)
    p[0, 1] = p[1, 0] = 0.75
    p[1, 2] = p[2, 1] = 0.01
    p[2, 3] = p[3, 2] = 0.30
    dendro = Dendrogram(4, [(0, 1, 0.4), (2, 3, 0.5), (4, 5, 0.9)])
    view = coarse_grain(g, p, dendro, 0.0, 0.0, blue=0.75, red=0.01)
    colors = {(e["a"], e["b"]): e["color"] for e in view.meta_edges}
    assert colors[(0, 1)] == "blue"  # at threshold counts as blue
    assert colors[(1, 2)] == "red"  # at threshold counts as red
    assert colors[(2, 3)] == "neutral"


def test_coarse_grain_karate_published_thresholds(karate):
    _, _, view = karate_view(karate, 0.0, 0.0)
    by_pair = {
        (view.meta_nodes[e["a"]][0], view.meta_nodes[e["b"]][0]): e["color"]
        for e in view.meta_edges
    }
    i = karate.index_of
    pair_48 = (min(i(4), i(8)), max(i(4), i(8)))
    pair_132 = (min(i(1), i(32)), max(i(1), i(32)))
    assert by_pair[pair_48] == "blue"  # published value 0.988
    assert by_pair[pair_132] == "neutral"  # published value 0.089


def test_coarse_grain_json_shape(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    dendro = average_linkage(d)
    view = coarse_grain(karate, mat, dendro, 0.3, 0.6)
    blob = view.to_json()
    assert set(blob) == {
        "merge_level",
        "community_level",
        "blue_threshold",
        "red_threshold",
        "meta_nodes",
        "sizes",
        "communities",
        "meta_edges",
    }
    assert blob["sizes"] == [len(m) for m in blob["meta_nodes"]]
    json.dumps(blob)  # serializable


# ---------------------------------------------------------------------------
# triangle diagnostics


def triangle_oracle(d, tol=1e-12):
    n = d.shape[0]
    count = 0
    for v in range(n):
        for w in range(v + 1, n):
            for x in range(n):
                if x in (v, w):
                    continue
                if d[v, w] > d[v, x] + d[w, x] + tol:
                    count += 1
    return count


def test_triangle_check_metric_input():
    xs = np.array([0.0, 1.0, 2.5, 4.0])
    d = np.abs(xs[:, None] - xs[None, :])
    report = triangle_check(d)
    assert report.violations == 0
    assert report.triples_checked == 4


def test_triangle_check_exact_probabilities_clean():
    _, g = sample_planted(6, PlantedParams(2, 0.8, 0.1), seed=9)
    pvw = exact_pvw_bruteforce(g, PlantedParams(2, 0.8, 0.1), mode="fixed")
    report = triangle_check(distance_matrix(pvw))
    assert report.violations == 0


def test_triangle_check_constructed_violation():
    d = np.array([[0.0, 1.0, 0.3], [1.0, 0.0, 0.3], [0.3, 0.3, 0.0]])
    report = triangle_check(d)
    assert report.violations == 1
    assert report.worst_triple == (0, 1, 2)
    assert report.worst_excess == pytest.approx(0.4)
    assert report.violation_fraction == 1.0


def test_triangle_check_karate_matches_bruteforce(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    d = distance_matrix(mat)
    report = triangle_check(d)
    assert report.violations == triangle_oracle(d)
    assert report.triples_checked == 34 * 33 * 32 // 6
    assert report.violation_fraction < 0.1
    assert not report.sampled


def test_triangle_check_sampled_path():
    n = 2100
    d = np.zeros((n, n))  # degenerate but valid: everything coincident
    report = triangle_check(d, samples=5000)
    assert report.sampled
    assert report.triples_checked == 5000
    assert report.violations == 0
