import numpy as np
import pytest

import oracles
from gaitkd.errors import DegenerateGapError, NumericError, ShapeError
from gaitkd.eval_metrics import (GapRecord, RetrievalIndex, build_index, evaluate, flatten_embeddings,
                                 gap_closed, mean_ap, mean_inp, rank_k)


def _index_from_ranking(relevance):
    """Gallery on a line so that the probe at 0 ranks item r at distance r."""
    n = len(relevance)
    gallery = np.arange(1, n + 1, dtype=float)[:, None]
    labels = np.where(np.asarray(relevance), 1, 0)
    return RetrievalIndex(gallery, labels, np.zeros((1, 1)), np.array([1]))


def test_perfect_ranking():
    idx = _index_from_ranking([1, 1, 0, 0])
    assert rank_k(idx, 1) == 100.0 and mean_ap(idx) == 100.0 and mean_inp(idx) == 100.0


def test_ap_of_one_relevant_at_rank_two():
    idx = _index_from_ranking([0, 1, 0, 0])
    assert rank_k(idx, 1) == 0.0
    assert rank_k(idx, 2) == 100.0
    assert mean_ap(idx) == pytest.approx(50.0)


def test_inp_examples():
    assert mean_inp(_index_from_ranking([0, 0, 0, 1])) == pytest.approx(25.0)
    assert mean_inp(_index_from_ranking([1, 0, 0, 0, 1])) == pytest.approx(40.0)


def test_metrics_match_loop_oracle(rng):
    for _ in range(60):
        Ng, Np, F = int(rng.integers(3, 21)), int(rng.integers(1, 8)), int(rng.integers(1, 5))
        C = int(rng.integers(1, 5))
        g_lab = rng.integers(0, C, size=Ng)
        p_lab = rng.choice(g_lab, size=Np)
        G, Pr = rng.normal(size=(Ng, F)), rng.normal(size=(Np, F))
        idx = RetrievalIndex(G, g_lab, Pr, p_lab)
        k = int(rng.integers(1, 4))
        r, ap, inp = oracles.retrieval(G.tolist(), g_lab.tolist(), Pr.tolist(), p_lab.tolist(), k)
        assert abs(rank_k(idx, k) - r) < 1e-12
        assert abs(mean_ap(idx) - ap) < 1e-12
        assert abs(mean_inp(idx) - inp) < 1e-12


def test_ties_keep_gallery_order():
    G = np.array([[1.0], [1.0]])
    idx = RetrievalIndex(G, np.array([0, 1]), np.zeros((1, 1)), np.array([1]))
    assert rank_k(idx, 1) == 0.0


def test_metric_ordering_and_report(rng):
    idx = build_index(rng.normal(size=(12, 3, 2)), np.repeat(np.arange(4), 3),
                      rng.normal(size=(8, 3, 2)), np.repeat(np.arange(4), 2))
    rep = evaluate(idx)
    assert rep.rank1 <= rep.rank5
    assert rep.rank1 == rank_k(idx, 1) and rep.map == mean_ap(idx) and rep.minp == mean_inp(idx)
    assert rep.minp <= rep.map + 1e-12
    assert rep.to_kv().startswith("rank1=")
    assert rep.detail_csv().count("\n") == 9


def test_flatten_normalises_each_part(rng):
    E = rng.normal(size=(3, 4, 2))
    F = flatten_embeddings(E)
    assert F.shape == (3, 8)
    np.testing.assert_allclose(np.linalg.norm(F.reshape(3, 2, 4), axis=2), 1.0)
    with pytest.raises(NumericError):
        flatten_embeddings(np.zeros((1, 2, 1)))


def test_index_validation(rng):
    with pytest.raises(ShapeError):
        RetrievalIndex(rng.normal(size=(3, 2)), [0, 1, 2], rng.normal(size=(1, 2)), [5])
    with pytest.raises(ShapeError):
        RetrievalIndex(rng.normal(size=(3, 2)), [0, 1, 2], rng.normal(size=(1, 3)), [0])
    with pytest.raises(NumericError):
        RetrievalIndex(np.full((1, 1), np.nan), [0], np.zeros((1, 1)), [0])


def test_gap_closed_reference_rows():
    assert gap_closed(GapRecord(74.4, 61.5, 63.3)) == pytest.approx(14.0, abs=0.05)
    assert gap_closed(GapRecord(74.4, 61.5, 65.8)) == pytest.approx(33.3, abs=0.05)
    assert gap_closed(GapRecord(80.0, 60.0, 80.0)) == 100.0
    assert gap_closed(GapRecord(80.0, 60.0, 60.0)) == 0.0
    with pytest.raises(DegenerateGapError):
        gap_closed(GapRecord(60.0, 60.0, 61.0))
    with pytest.raises(ValueError):
        GapRecord(101.0, 50.0, 60.0)
