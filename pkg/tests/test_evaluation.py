"""nDCG and Kendall tau versus brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from rrk.evaluation import kendall_tau, ndcg_at_k, write_metric_report
from rrk.trec import Run


def ndcg_oracle(ranked_grades, all_judged_grades, k):
    def dcg(grades):
        return sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(grades[:k]))

    ideal = dcg(sorted(all_judged_grades, reverse=True))
    return dcg(ranked_grades) / ideal if ideal > 0 else None


def tau_b_oracle(a, b):
    """O(n^2) pair counting with tie corrections."""
    n = len(a)
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da, db = a[i] - a[j], b[i] - b[j]
            if da == 0 and db == 0:
                ties_a += 1
                ties_b += 1
            elif da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif da * db > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    return (concordant - discordant) / denom if denom else 0.0


def run_of(grades_in_rank_order):
    run = Run()
    ranked = [(f"d{i}", float(len(grades_in_rank_order) - i))
              for i in range(len(grades_in_rank_order))]
    run.add_query("q1", ranked)
    qrels = {("q1", f"d{i}"): g for i, g in enumerate(grades_in_rank_order)}
    return run, qrels


class TestNdcg:
    def test_ideal_ordering_scores_one(self):
        run, qrels = run_of([3, 2, 1, 0])
        assert ndcg_at_k(run, qrels, 10).per_query["q1"] == pytest.approx(1.0)

    def test_two_doc_hand_value(self):
        # relevant doc at rank 2: DCG = 1/log2(3), IDCG = 1
        run, qrels = run_of([0, 1])
        expected = 1.0 / math.log2(3.0)
        assert ndcg_at_k(run, qrels, 10).per_query["q1"] == pytest.approx(expected, abs=1e-10)
        assert expected == pytest.approx(0.6309, abs=1e-4)

    def test_all_three_doc_permutations_match_oracle(self):
        for grades in itertools.product(range(4), repeat=3):
            for perm in itertools.permutations(range(3)):
                ranked = [grades[i] for i in perm]
                run, _ = run_of(ranked)
                qrels = {("q1", f"d{i}"): ranked[i] for i in range(3)}
                got = ndcg_at_k(run, qrels, 10)
                expected = ndcg_oracle(ranked, list(grades), 10)
                if expected is None:
                    assert got.n_excluded == 1
                else:
                    assert got.per_query["q1"] == pytest.approx(expected, abs=1e-12)

    def test_exhaustive_four_doc_permutations_match_oracle(self):
        grades = [3, 2, 1, 0]
        for perm in itertools.permutations(range(4)):
            ranked = [grades[i] for i in perm]
            run, qrels = run_of(ranked)
            got = ndcg_at_k(run, qrels, 10).per_query["q1"]
            assert got == pytest.approx(ndcg_oracle(ranked, grades, 10), abs=1e-12)

    def test_unjudged_docs_count_as_zero(self):
        run = Run()
        run.add_query("q1", [("unjudged", 2.0), ("rel", 1.0)])
        qrels = {("q1", "rel"): 1}
        assert ndcg_at_k(run, qrels, 10).per_query["q1"] == pytest.approx(1 / math.log2(3))

    def test_zero_idcg_excluded_and_counted(self):
        run = Run()
        run.add_query("qz", [("a", 1.0)])
        run.add_query("qok", [("b", 1.0)])
        qrels = {("qz", "a"): 0, ("qok", "b"): 2}
        report = ndcg_at_k(run, qrels, 10)
        assert report.n_excluded == 1
        assert set(report.per_query) == {"qok"}

    def test_ideal_uses_judged_docs_not_retrieved(self):
        # a missing grade-3 doc caps attainable nDCG below 1
        run = Run()
        run.add_query("q1", [("a", 1.0)])
        qrels = {("q1", "a"): 1, ("q1", "missing"): 3}
        got = ndcg_at_k(run, qrels, 10).per_query["q1"]
        assert got == pytest.approx(1.0 / (7 + 1 / math.log2(3)), abs=1e-12)

    def test_invariant_under_monotone_score_transform(self):
        rng = np.random.default_rng(0)
        grades = list(rng.integers(0, 4, size=8))
        qrels = {("q1", f"d{i}"): int(g) for i, g in enumerate(grades)}
        scores = np.sort(rng.standard_normal(8))[::-1]
        run_a, run_b = Run(), Run()
        run_a.add_query("q1", [(f"d{i}", float(s)) for i, s in enumerate(scores)])
        run_b.add_query("q1", [(f"d{i}", float(np.exp(3 * s))) for i, s in enumerate(scores)])
        assert (ndcg_at_k(run_a, qrels, 10).per_query["q1"]
                == ndcg_at_k(run_b, qrels, 10).per_query["q1"])

    def test_bad_cutoff(self):
        run, qrels = run_of([1])
        with pytest.raises(ValueError, match="cutoff"):
            ndcg_at_k(run, qrels, 0)

    def test_report_file_format(self, tmp_path):
        run, qrels = run_of([3, 1])
        report = ndcg_at_k(run, qrels, 10)
        path = tmp_path / "report.tsv"
        write_metric_report(report, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("q1\t")
        assert lines[-1].startswith("mean_ndcg@10\t")


class TestKendallTau:
    def test_identical_rankings(self):
        scores = {"a": 3.0, "b": 2.0, "c": 1.0}
        assert kendall_tau(scores, dict(scores)) == pytest.approx(1.0)

    def test_exact_reversal(self):
        a = {"a": 3.0, "b": 2.0, "c": 1.0}
        b = {"a": 1.0, "b": 2.0, "c": 3.0}
        assert kendall_tau(a, b) == pytest.approx(-1.0)

    def test_item_set_mismatch_rejected(self):
        with pytest.raises(ValueError, match="item sets"):
            kendall_tau({"a": 1.0}, {"b": 1.0})

    def test_fully_tied_ranking_is_zero(self):
        a = {"a": 0.0, "b": 0.0, "c": 0.0}
        b = {"a": 3.0, "b": 2.0, "c": 1.0}
        assert kendall_tau(a, b) == 0.0

    def test_matches_pair_count_oracle_on_random_rankings(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(2, 9))
            a = rng.integers(0, 5, size=n).astype(float)
            b = rng.integers(0, 5, size=n).astype(float)
            if np.all(a == a[0]) or np.all(b == b[0]):
                continue
            items = [f"i{j}" for j in range(n)]
            got = kendall_tau(dict(zip(items, a)), dict(zip(items, b)))
            assert got == pytest.approx(tau_b_oracle(list(a), list(b)), abs=1e-12)
