import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from comem.graph import Graph, PlantedParams, sample_planted
from comem.pvw import (
    PairEvidence,
    PvwMatrix,
    TripleCache,
    common_neighbor_counts,
    lambda_corrections,
    lambda_tilde,
    log_f,
    mu_bar,
    pair_evidence,
    peak_location,
    pvw_hat,
    pvw_integral,
    pvw_matrix_batch,
)


def evidence_strategy(max_n=60):
    return st.tuples(
        st.integers(0, 1), st.integers(0, max_n), st.integers(0, max_n), st.integers(0, max_n)
    ).filter(lambda t: t[1] + t[2] + t[3] >= 1).map(lambda t: PairEvidence(*t))


# ---------------------------------------------------------------------------
# evidence extraction


def pair_evidence_oracle(graph, v, w):
    kappa = 1 if graph.has_edge(v, w) else 0
    n0 = n1 = n2 = 0
    for x in range(graph.n):
        if x in (v, w):
            continue
        links = int(graph.has_edge(v, x)) + int(graph.has_edge(w, x))
        if links == 0:
            n0 += 1
        elif links == 1:
            n1 += 1
        else:
            n2 += 1
    return kappa, n0, n1, n2


def test_pair_evidence_matches_oracle(rng):
    for _ in range(10):
        n = int(rng.integers(3, 12))
        edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.4]
        g = Graph(n, edges)
        v, w = rng.choice(n, size=2, replace=False)
        ev = pair_evidence(g, int(v), int(w))
        assert (ev.kappa, ev.n0, ev.n1, ev.n2) == pair_evidence_oracle(g, int(v), int(w))
        assert ev.n0 + ev.n1 + ev.n2 == n - 2


def test_pair_evidence_known_pair(karate):
    ev = pair_evidence(karate, karate.index_of(1), karate.index_of(34))
    assert (ev.kappa, ev.n0, ev.n1, ev.n2) == (0, 3, 25, 4)


def test_pair_evidence_validation(karate):
    with pytest.raises(ValueError):
        pair_evidence(karate, 3, 3)
    with pytest.raises(ValueError):
        PairEvidence(2, 1, 1, 1)
    with pytest.raises(ValueError):
        PairEvidence(0, 0, 0, 0)


# ---------------------------------------------------------------------------
# peak location and likelihood ratio


def test_peak_location_known_pair(karate):
    ev = pair_evidence(karate, karate.index_of(1), karate.index_of(34))
    peak = peak_location(ev)
    assert peak.delta == pytest.approx(33 / 64)
    assert peak.psi == pytest.approx(-577 / 4096)


@given(evidence_strategy())
def test_peak_bases_have_closed_form(ev):
    # at the peak the three f bases reduce to n0/d, n1/(2d), n2/d
    d = ev.n0 + ev.n1 + ev.n2
    peak = peak_location(ev)
    assert (1 - peak.delta) ** 2 + peak.psi == pytest.approx(ev.n0 / d, abs=1e-12)
    assert peak.delta * (1 - peak.delta) - peak.psi == pytest.approx(ev.n1 / (2 * d), abs=1e-12)
    assert peak.delta**2 + peak.psi == pytest.approx(ev.n2 / d, abs=1e-12)


@given(evidence_strategy())
def test_lambda_tilde_side_of_one_follows_psi(ev):
    lam = lambda_tilde(ev)
    psi = peak_location(ev).psi
    if psi >= 0:
        assert lam >= 1.0 - 1e-12
    else:
        assert lam <= 1.0 + 1e-12


def test_lambda_tilde_no_shared_structure_is_one():
    # n1 = n2 = 0 gives delta_p = psi_p = 0 and a flat ratio
    assert lambda_tilde(PairEvidence(1, 32, 0, 0)) == pytest.approx(1.0)
    assert lambda_tilde(PairEvidence(0, 32, 0, 0)) == pytest.approx(1.0)


def test_log_f_zero_exponent_convention():
    ev = PairEvidence(0, 5, 0, 0)
    assert log_f(0.0, 0.0, ev) == pytest.approx(0.0)  # (1-0)^2 base only
    ev2 = PairEvidence(0, 0, 3, 2)
    assert log_f(0.0, 0.0, ev2) == -np.inf  # zero base with positive count


def test_lambda_corrections_values():
    # adjacent pair with no shared structure in a 34-node graph
    lam0, lam1 = lambda_corrections(PairEvidence(1, 32, 0, 0))
    assert lam1 == pytest.approx(0.56051044368284805729 * 34 + 1.598)
    assert lam0 == pytest.approx(0.7197)
    # cap by the power law once delta_p is moderate
    ev = PairEvidence(0, 3, 25, 4)
    lam0, lam1 = lambda_corrections(ev)
    delta = peak_location(ev).delta
    assert lam0 == pytest.approx(0.46 * delta**-0.15)
    assert lam0 == pytest.approx(0.508, abs=5e-4)
    assert lam1 == pytest.approx(delta**-0.7)


@given(evidence_strategy())
def test_lambda_corrections_respect_caps(ev):
    lam0, lam1 = lambda_corrections(ev)
    assert 0 < lam0 <= 0.7197
    assert 0 < lam1 <= 0.56051044368284805729 * ev.n + 1.598 + 1e-12
    assert lam1 >= lam0 - 1e-12


def test_mu_bar_values():
    assert mu_bar(4) == pytest.approx((0.5 - 0.25) / math.log(2.0))
    assert mu_bar(4) == pytest.approx(0.3607, abs=5e-5)
    assert mu_bar(34) == pytest.approx(0.16610, abs=5e-6)
    assert mu_bar(2) == 0.5
    with pytest.raises(ValueError):
        mu_bar(1)


def test_mu_bar_decreases_with_n():
    vals = [mu_bar(n) for n in range(2, 200)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# closed-form probability


def test_pvw_hat_flat_evidence_value():
    # adjacent pair, no other structure, n = 34
    got = pvw_hat(PairEvidence(1, 32, 0, 0))
    lam1 = 0.56051044368284805729 * 34 + 1.598
    want = lam1 / (lam1 + 1.0 / mu_bar(34) - 1.0)
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(0.8045, abs=5e-4)


@given(evidence_strategy())
def test_pvw_hat_is_a_probability(ev):
    p = pvw_hat(ev)
    assert 0.0 <= p <= 1.0


@given(evidence_strategy(max_n=40))
def test_pvw_hat_edge_dominates_nonedge(ev):
    other = PairEvidence(1 - ev.kappa, ev.n0, ev.n1, ev.n2)
    p1 = pvw_hat(ev if ev.kappa else other)
    p0 = pvw_hat(other if ev.kappa else ev)
    assert p1 >= p0 - 1e-12


def test_pvw_hat_decreasing_in_unshared_neighbors():
    for kappa in (0, 1):
        for n2 in (0, 2):
            vals = []
            for n1 in range(0, 30 - n2):
                n0 = 30 - n1 - n2
                vals.append(pvw_hat(PairEvidence(kappa, n0, n1, n2)))
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# full integral


def integral_oracle(ev):
    # direct nested adaptive quadrature of the evidence integrals, with the
    # same log-uniform group-count grid but none of the scaling machinery
    n = ev.n
    x, w = np.polynomial.legendre.leggauss(33)
    lo, hi = math.log(2.0), math.log(n)
    ms = np.exp(0.5 * (x + 1.0) * (hi - lo) + lo)
    mw = 0.5 * w
    mw = mw / mw.sum()

    def f(delta, psi):
        return (
            ((1 - delta) ** 2 + psi) ** ev.n0
            * (delta * (1 - delta) - psi) ** ev.n1
            * (delta**2 + psi) ** ev.n2
        )

    num = den = 0.0
    for m_k, w_k in zip(ms, mw):
        mu = 1.0 / m_k

        def g_same(p_out, p_in):
            delta = mu * p_in + (1 - mu) * p_out
            ej = p_in if ev.kappa else 1 - p_in
            return ej * f(delta, mu * (1 - mu) * (p_in - p_out) ** 2)

        def g_split(p_out, p_in):
            delta = mu * p_in + (1 - mu) * p_out
            ej = p_out if ev.kappa else 1 - p_out
            return ej * f(delta, -((mu * (p_in - p_out)) ** 2))

        num += w_k * dblquad(g_same, 0, 1, 0, lambda p_in: p_in, epsabs=1e-13)[0]
        den += w_k * dblquad(g_split, 0, 1, 0, lambda p_in: p_in, epsabs=1e-13)[0]
    lam = num / den
    return lam / (lam + 1.0 / mu_bar(n) - 1.0)


def test_pvw_integral_matches_independent_quadrature():
    for ev in (PairEvidence(1, 4, 1, 1), PairEvidence(0, 3, 2, 1), PairEvidence(0, 1, 3, 2)):
        want = integral_oracle(ev)
        assert pvw_integral(ev) == pytest.approx(want, rel=1e-7)
        assert pvw_integral(ev, quadrature="tensor") == pytest.approx(want, rel=1e-7)


def test_pvw_integral_quadratures_agree(karate):
    for pair in ((1, 34), (15, 16), (4, 8)):
        ev = pair_evidence(karate, karate.index_of(pair[0]), karate.index_of(pair[1]))
        a = pvw_integral(ev)
        t = pvw_integral(ev, quadrature="tensor")
        assert a == pytest.approx(t, rel=1e-10)


def test_pvw_integral_edge_dominates_nonedge():
    for counts in ((5, 2, 1), (20, 5, 5), (3, 25, 4)):
        p1 = pvw_integral(PairEvidence(1, *counts), quadrature="tensor")
        p0 = pvw_integral(PairEvidence(0, *counts), quadrature="tensor")
        assert 0.0 <= p0 < p1 <= 1.0


def test_pvw_integral_weighting_flag_changes_value():
    ev = PairEvidence(0, 30, 0, 2)
    plain = pvw_integral(ev)
    posterior = pvw_integral(ev, m_weighting="posterior")
    assert plain != pytest.approx(posterior, abs=1e-4)
    with pytest.raises(ValueError):
        pvw_integral(ev, m_weighting="other")


def test_pvw_integral_node_guard():
    with pytest.raises(ValueError):
        pvw_integral(PairEvidence(0, 400, 0, 0))


# ---------------------------------------------------------------------------
# common neighbor counting


def common_neighbor_oracle(graph):
    out = {}
    for x in range(graph.n):
        nb = sorted(graph.neighbors(x).tolist())
        for i in range(len(nb)):
            for j in range(i + 1, len(nb)):
                out[(nb[i], nb[j])] = out.get((nb[i], nb[j]), 0) + 1
    return out


@pytest.mark.parametrize("workers", [1, 2])
def test_common_neighbor_counts_match_oracle(rng, workers):
    for _ in range(4):
        n = int(rng.integers(5, 40))
        edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.2]
        g = Graph(n, edges)
        keys, counts = common_neighbor_counts(g, workers=workers)
        want = common_neighbor_oracle(g)
        got = {(int(k) // n, int(k) % n): int(c) for k, c in zip(keys, counts)}
        assert got == want
        assert np.all(np.diff(keys) > 0)


# ---------------------------------------------------------------------------
# triple cache and matrix


def test_triple_cache_reuse_and_export(tmp_path):
    cache = TripleCache(20, method="hat")
    a = cache.get(1, 3, 2, count=4)
    b = cache.get(1, 3, 2, count=6)
    assert a == b == cache.compute(1, 3, 2)
    assert cache.counts[(1, 3, 2)] == 10
    path = tmp_path / "stats.csv"
    cache.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kappa,n1,n2,p_hat,count"
    assert lines[1].startswith("1,3,2,")
    assert lines[1].endswith(",10")


def test_batch_matches_per_pair_evaluation(rng):
    _, g = sample_planted(30, PlantedParams(3, 0.5, 0.08), seed=3)
    mat, cache = pvw_matrix_batch(g, method="hat")
    dense = mat.to_dense()
    for v in range(g.n):
        for w in range(v + 1, g.n):
            want = pvw_hat(pair_evidence(g, v, w))
            assert dense[v, w] == pytest.approx(want, rel=1e-12)
            assert mat.get(v, w) == pytest.approx(want, rel=1e-12)
    assert sum(cache.counts.values()) == g.n * (g.n - 1) // 2


def test_batch_integral_method_matches_per_pair(rng):
    _, g = sample_planted(12, PlantedParams(2, 0.7, 0.1), seed=5)
    mat, _ = pvw_matrix_batch(g, method="integral")
    for v in range(0, g.n, 3):
        for w in range(v + 1, g.n, 2):
            want = pvw_integral(pair_evidence(g, v, w))
            assert mat.get(v, w) == pytest.approx(want, rel=1e-9)


def test_batch_workers_identical(rng):
    _, g = sample_planted(60, PlantedParams(4, 0.4, 0.05), seed=8)
    m1, _ = pvw_matrix_batch(g, method="hat", workers=1)
    m2, _ = pvw_matrix_batch(g, method="hat", workers=3)
    assert np.array_equal(m1.keys, m2.keys)
    assert np.allclose(m1.values, m2.values, rtol=0, atol=0)


def test_batch_handles_isolated_nodes():
    g = Graph(6, [(0, 1), (1, 2)])
    mat, _ = pvw_matrix_batch(g, method="hat")
    # pair of isolated nodes falls back to the degree-zero class
    assert mat.get(4, 5) == pytest.approx(pvw_hat(PairEvidence(0, 4, 0, 0)))
    assert mat.get(0, 0) == 1.0


def test_batch_guard_small_graph():
    with pytest.raises(ValueError):
        pvw_matrix_batch(Graph(2, [(0, 1)]))


def test_matrix_save_load_roundtrip(tmp_path, karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    path = tmp_path / "karate.pvw"
    mat.save(path)
    back = PvwMatrix.load(path)
    assert back.n == mat.n
    assert np.array_equal(back.keys, mat.keys)
    assert np.array_equal(back.values, mat.values)
    assert np.allclose(back.to_dense(), mat.to_dense())
    assert back.metadata["method"] == "hat"


def test_matrix_degree_class_guard(karate):
    mat, _ = pvw_matrix_batch(karate, method="hat")
    with pytest.raises(ValueError):
        mat._default_for_degsum(33)
