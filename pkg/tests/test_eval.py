import numpy as np
import pytest

from cisrec import eval as ev
from cisrec.config import Protocol
from cisrec.dataset import ImplicitDataset, RelevanceLabels, build_relevance, split
from cisrec.errors import ContractError, DivergenceError
from cisrec.eval import MetricReport, RankingTask


def _prefer_low_index(user, items):
    return -np.asarray(items, dtype=float)


# 지표
def test_average_precision():
    assert ev.average_precision([0, 1, 2], {0, 2}) == pytest.approx((1 / 1 + 2 / 3) / 2)
    assert ev.average_precision([3, 4, 5], {3, 4}) == 1.0
    assert ev.average_precision([0, 1, 2, 3], {2}) == pytest.approx(1 / 3)


def test_epr():
    assert ev.epr([7, 1, 2, 3, 4], {7}) == 0.0
    assert ev.epr([1, 2, 3, 4, 7], {7}) == 1.0
    assert ev.epr([1, 2, 7, 3, 4], {7}) == pytest.approx(0.5)
    assert ev.epr([7], {7}) == 0.0


def test_precision_recall_at_k():
    ranked = [0, 1, 2, 3, 4, 5, 6, 7]
    relevant = {0, 2, 4, 7}
    assert ev.precision_at_k(ranked, relevant, 5) == pytest.approx(0.6)
    assert ev.recall_at_k(ranked, relevant, 5) == pytest.approx(0.75)
    assert ev.recall_at_k(ranked, relevant, 20) == 1.0
    assert ev.precision_at_k(ranked, {7}, 3) == 0.0
    assert ev.recall_at_k(ranked, {7}, 3) == 0.0


def test_precision_short_list_uses_list_length():
    assert ev.precision_at_k([0, 1], {0, 1}, 10) == 1.0


def test_metric_contracts():
    with pytest.raises(ContractError):
        ev.average_precision([0, 1], set())
    with pytest.raises(ContractError):
        ev.average_precision([0, 1], {5})
    with pytest.raises(ContractError):
        ev.precision_at_k([0, 1], {0}, 0)
    with pytest.raises(ContractError):
        ev.recall_at_k([0, 1], {0}, 0)


def test_swapping_relevant_upward_never_hurts(rng):
    for _ in range(50):
        ranked = rng.permutation(12).tolist()
        relevant = set(rng.choice(12, size=4, replace=False).tolist())
        for pos in range(11):
            if ranked[pos] not in relevant and ranked[pos + 1] in relevant:
                swapped = ranked[:pos] + [ranked[pos + 1], ranked[pos]] + ranked[pos + 2:]
                assert ev.average_precision(swapped, relevant) >= ev.average_precision(ranked, relevant)
                assert ev.epr(swapped, relevant) <= ev.epr(ranked, relevant)


def test_rank_candidates_breaks_ties_by_index():
    ranked = ev.rank_candidates(np.array([5, 2, 9, 1]), np.array([1.0, 3.0, 1.0, 1.0]))
    assert ranked.tolist() == [2, 1, 5, 9]


# 프로토콜
def test_protocol_explicit_candidates():
    test = ImplicitDataset([(0, 0), (0, 1)], 1, 4)
    labels = RelevanceLabels({0: ({0, 1}, {2})})
    tasks = ev.build_protocol_explicit(labels, test)
    assert len(tasks) == 1
    assert tasks[0].candidates.tolist() == [0, 1, 2]
    assert tasks[0].relevant.tolist() == [0, 1]
    assert tasks.protocol is Protocol.EXPLICIT


def test_protocol_explicit_skips_user_without_negatives():
    test = ImplicitDataset([(0, 0), (1, 1)], 2, 3)
    labels = RelevanceLabels({0: ({0}, set()), 1: ({1}, {2})})
    tasks = ev.build_protocol_explicit(labels, test)
    assert [t.user for t in tasks] == [1]
    assert tasks.skipped == 1


def test_protocol_explicit_excludes_training_items(planted, planted_data):
    train, _, test = split(planted_data, (0.6, 0.1, 0.3), seed=2)
    labels = build_relevance(planted.ratings, 4.0, 3.0).reindex(planted_data)
    tasks = ev.build_tasks(Protocol.EXPLICIT, train, test, labels)
    assert len(tasks) > 0
    for task in tasks:
        assert not set(task.candidates.tolist()) & set(train.user_items[task.user].tolist())


def test_protocol_explicit_needs_labels(tiny):
    with pytest.raises(ContractError):
        ev.build_tasks(Protocol.EXPLICIT, tiny, tiny)


def test_protocol_all_unobserved():
    train = ImplicitDataset([(0, 0)], 1, 4)
    test = ImplicitDataset([(0, 1)], 1, 4)
    tasks = ev.build_protocol_all_unobserved(train, test)
    assert tasks[0].candidates.tolist() == [1, 2, 3]
    assert tasks[0].relevant.tolist() == [1]


def test_protocol_all_unobserved_skips_seen_only():
    train = ImplicitDataset([(0, 0), (0, 1)], 1, 3)
    test = ImplicitDataset([(0, 1)], 1, 3)
    tasks = ev.build_protocol_all_unobserved(train, test)
    assert len(tasks) == 0
    assert tasks.skipped == 1


def test_protocol_all_unobserved_candidate_counts(planted_data):
    train, _, test = split(planted_data, (0.7, 0.1, 0.2), seed=1)
    tasks = ev.build_protocol_all_unobserved(train, test)
    for task in tasks:
        assert len(task.candidates) == planted_data.n_items - len(train.user_items[task.user])


# evaluate
def test_evaluate_perfect_ranking():
    tasks = [RankingTask(0, np.array([0, 1, 2]), np.array([0]))]
    report = ev.evaluate(_prefer_low_index, tasks)
    assert report.map == 1.0
    assert report.epr == 0.0
    assert report.users == 1


def test_evaluate_averages_users():
    tasks = [
        RankingTask(0, np.array([0, 1]), np.array([0])),
        RankingTask(1, np.array([0, 1]), np.array([1])),
    ]
    assert ev.evaluate(_prefer_low_index, tasks).map == pytest.approx(0.75)


def _oracle(scores, candidates, relevant):
    order = sorted(candidates, key=lambda i: (-scores[i], i))
    ap, found = 0.0, 0
    for rank, item in enumerate(order, start=1):
        if item in relevant:
            found += 1
            ap += found / rank
    ranks = [order.index(i) + 1 for i in relevant]
    epr = sum((r - 1) / (len(order) - 1) for r in ranks) / len(ranks) if len(order) > 1 else 0.0
    row = [ap / len(relevant), epr]
    row += [sum(1 for i in order[:k] if i in relevant) / min(k, len(order)) for k in ev.CUTOFFS]
    row += [sum(1 for i in order[:k] if i in relevant) / len(relevant) for k in ev.CUTOFFS]
    return row


def _as_row(report):
    return [report.map, report.epr] + [report.precision[k] for k in ev.CUTOFFS] + [report.recall[k] for k in ev.CUTOFFS]


def test_evaluate_matches_oracle(rng):
    table = rng.integers(0, 4, size=(100, 30)).astype(float)
    tasks, expected = [], []
    for u in range(100):
        candidates = np.sort(rng.choice(30, size=int(rng.integers(2, 30)), replace=False))
        relevant = np.sort(rng.choice(candidates, size=int(rng.integers(1, len(candidates) + 1)), replace=False))
        tasks.append(RankingTask(u, candidates, relevant))
        expected.append(_oracle(table[u], candidates.tolist(), set(relevant.tolist())))

    scorer = lambda u, items: table[u][items]  # noqa: E731
    for task, row in zip(tasks, expected):
        assert _as_row(ev.evaluate(scorer, [task])) == pytest.approx(row, abs=1e-12)
    assert _as_row(ev.evaluate(scorer, tasks)) == pytest.approx(np.mean(expected, axis=0).tolist(), abs=1e-12)


def test_evaluate_threads_agree(rng):
    table = rng.normal(size=(20, 10))
    tasks = [RankingTask(u, np.arange(10), np.array([u % 10])) for u in range(20)]
    scorer = lambda u, items: table[u][items]  # noqa: E731
    assert ev.evaluate(scorer, tasks).to_dict() == ev.evaluate(scorer, tasks, threads=4).to_dict()


def test_evaluate_is_invariant_to_monotone_transform(rng):
    table = rng.normal(size=(10, 8))
    tasks = [RankingTask(u, np.arange(8), np.array([0, 3])) for u in range(10)]
    plain = ev.evaluate(lambda u, items: table[u][items], tasks)
    squashed = ev.evaluate(lambda u, items: np.exp(table[u][items]), tasks)
    assert plain.to_dict() == squashed.to_dict()


def test_evaluate_non_finite_score():
    tasks = [RankingTask(3, np.array([0, 1]), np.array([0]))]
    with pytest.raises(DivergenceError) as info:
        ev.evaluate(lambda u, items: np.array([0.0, np.nan]), tasks)
    assert "user 3, item 1" in str(info.value)


def test_evaluate_empty_tasks():
    report = ev.evaluate(_prefer_low_index, [])
    assert report.users == 0


def test_pointwise_scorer():
    scorer = ev.pointwise(lambda u, i: float(u * 10 + i))
    assert scorer(2, np.array([1, 3])).tolist() == [21.0, 23.0]


# 보고서
def test_report_row_and_header():
    report = MetricReport(map=0.5, epr=0.125, users=3, skipped=1, model="cis-hier", protocol="explicit")
    cells = report.to_row().split("\t")
    assert len(cells) == len(MetricReport.header().split("\t"))
    assert cells[:4] == ["cis-hier", "explicit", "50.00", "12.50"]
    assert cells[-2:] == ["3", "1"]
    assert report.to_dict()["p@5"] == 0.0
