"""
Offline Evaluation Protocol

Temporal train/test split per user, one test case per held-out listening
event with the previously played artist as context, six top-k accuracy
metrics and paired significance tests between algorithms.
"""

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .baselines import (
    TrainingData, predict_cf_item, predict_cf_user, predict_oracle, predict_pop,
    predict_random, predict_time, predict_top,
)
from .errors import ConfigError, DataError
from .ingestion import GenreCatalog, ListeningEvent
from .logger import get_logger
from .memory import AssociationIndex, PredictionList, predict_act, predict_bll

logger = get_logger(__name__)

F1_K = 5
TABLE_METRICS = ('F1', 'MRR', 'MAP', 'nDCG')


@dataclass
class UserSplit:
    train: List[ListeningEvent]
    test: List[ListeningEvent]


@dataclass
class SplitDataset:
    """Per-user chronological train/test split"""
    users: Dict[str, UserSplit]
    split_fraction: float
    excluded: List[str] = field(default_factory=list)

    def train_events(self) -> Iterable[ListeningEvent]:
        for user in sorted(self.users):
            yield from self.users[user].train

    @property
    def test_size(self) -> int:
        return sum(len(s.test) for s in self.users.values())


@dataclass(frozen=True)
class TestCase:
    """One held-out listening event to predict genres for"""
    index: int
    user_id: str
    target_artist: str
    relevant_genres: FrozenSet[int]
    context_artist: Optional[str]
    ref_time: int


@dataclass
class TestCaseSet:
    cases: List[TestCase]
    unmappable: int = 0


@dataclass
class CaseMetrics:
    """Metric values of one test case; recall/precision indexed by k - 1"""
    recall: List[float]
    precision: List[float]
    mrr: float
    map: float
    ndcg: float


@dataclass
class MetricResult:
    """Mean of one metric at one k for one algorithm on one group"""
    algorithm: str
    group: str
    metric: str
    k: int
    value: float
    per_user: Dict[str, float]
    n_test_cases: int


@dataclass
class SignificanceResult:
    t: Optional[float]
    p: Optional[float]
    significant: bool
    alpha: float
    paired: bool
    degenerate: bool = False
    note: str = ''


@dataclass
class AlgorithmEvaluation:
    """Everything one algorithm produced on one group"""
    algorithm: str
    group: str
    metrics: List[MetricResult]
    predictions: List[PredictionList]
    cold_cases: int = 0

    def metric(self, name: str, k: int) -> MetricResult:
        for m in self.metrics:
            if m.metric == name and m.k == k:
                return m
        raise KeyError(f"{name}@{k}")

    def curve(self, k_max: int) -> List[Tuple[int, float, float]]:
        """(k, recall, precision) points for k = 1..k_max"""
        return [(k, self.metric('R', k).value, self.metric('P', k).value) for k in range(1, k_max + 1)]


def temporal_split(events_per_user: Mapping[str, Sequence[ListeningEvent]],
                   fraction: float = 0.01) -> SplitDataset:
    """
    Hold out the most recent events of every user.

    The test set of a user is the ceil(fraction * |LE_u|) most recent events
    (at least one). Events are ordered by timestamp with the original order
    breaking ties. Users with fewer than two events are excluded.
    """
    if not (0 < fraction < 1):
        raise ValueError(f"split fraction must be in (0, 1): {fraction}")
    users: Dict[str, UserSplit] = {}
    excluded: List[str] = []
    for user in sorted(events_per_user):
        ordered = sorted(events_per_user[user], key=lambda e: e.timestamp)
        n = len(ordered)
        if n < 2:
            excluded.append(user)
            continue
        # tolerance keeps e.g. 0.01 * 300 from rounding up to 4
        n_test = min(n - 1, max(1, math.ceil(fraction * n - 1e-9)))
        users[user] = UserSplit(train=ordered[:n - n_test], test=ordered[n - n_test:])
    if excluded:
        logger.warning(f"⚠️ {len(excluded)} user(s) with fewer than 2 events excluded from the split")
    return SplitDataset(users=users, split_fraction=fraction, excluded=excluded)


def build_test_cases(split: SplitDataset, catalog: GenreCatalog) -> TestCaseSet:
    """
    One test case per test event, in user then chronological order.

    The context artist is the artist of the event right before the test
    event in the user's full stream. Test events whose artist has no genres
    are dropped and counted as unmappable.
    """
    cases: List[TestCase] = []
    unmappable = 0
    for user in sorted(split.users):
        s = split.users[user]
        previous = s.train[-1].artist_id if s.train else None
        for e in s.test:
            relevant = frozenset(catalog.genres_of(e.artist_id))
            if relevant:
                cases.append(TestCase(
                    index=len(cases),
                    user_id=user,
                    target_artist=e.artist_id,
                    relevant_genres=relevant,
                    context_artist=previous,
                    ref_time=e.timestamp,
                ))
            else:
                unmappable += 1
            previous = e.artist_id
    if unmappable:
        logger.info(f"🎯 {unmappable} test event(s) without mapped genres excluded")
    return TestCaseSet(cases=cases, unmappable=unmappable)


def recall_at_k(predicted: Sequence[int], relevant: FrozenSet[int], k: int) -> float:
    return len(set(predicted[:k]) & relevant) / len(relevant)


def precision_at_k(predicted: Sequence[int], relevant: FrozenSet[int], k: int) -> float:
    return len(set(predicted[:k]) & relevant) / k


def reciprocal_rank_at_k(predicted: Sequence[int], relevant: FrozenSet[int], k: int) -> float:
    """1 / rank of the first relevant genre within the top k, 0 if none"""
    for rank, gid in enumerate(predicted[:k], start=1):
        if gid in relevant:
            return 1.0 / rank
    return 0.0


def average_precision_at_k(predicted: Sequence[int], relevant: FrozenSet[int], k: int) -> float:
    """Sum of P@i at relevant positions i <= k over min(|relevant|, k)"""
    hits = 0
    total = 0.0
    for i, gid in enumerate(predicted[:k], start=1):
        if gid in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def ndcg_at_k(predicted: Sequence[int], relevant: FrozenSet[int], k: int) -> float:
    """Binary-relevance nDCG; the ideal list holds min(|relevant|, k) hits"""
    dcg = sum(1.0 / math.log2(i + 1) for i, gid in enumerate(predicted[:k], start=1) if gid in relevant)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0"""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def case_metrics(predicted: Sequence[int], relevant: FrozenSet[int], k_max: int = 10) -> CaseMetrics:
    """All per-case metric values for one prediction"""
    if not relevant:
        raise ValueError("a test case needs at least one relevant genre")
    return CaseMetrics(
        recall=[recall_at_k(predicted, relevant, k) for k in range(1, k_max + 1)],
        precision=[precision_at_k(predicted, relevant, k) for k in range(1, k_max + 1)],
        mrr=reciprocal_rank_at_k(predicted, relevant, k_max),
        map=average_precision_at_k(predicted, relevant, k_max),
        ndcg=ndcg_at_k(predicted, relevant, k_max),
    )


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    # exactly rounded sum: independent of order and worker count
    return math.fsum(values) / len(values) if values else 0.0


def aggregate(algorithm: str, group: str, cases: Sequence[TestCase], metrics: Sequence[CaseMetrics],
              k_max: int = 10) -> List[MetricResult]:
    """
    Mean every metric over all test cases and per user.

    F1@5 is the harmonic mean of the aggregated P@5 and R@5, per user of
    the user's mean P@5 and R@5.
    """
    n = len(cases)
    by_user: Dict[str, List[int]] = defaultdict(list)
    for i, case in enumerate(cases):
        by_user[case.user_id].append(i)

    def result(name: str, k: int, values: List[float]) -> MetricResult:
        per_user = {u: _mean(values[i] for i in idx) for u, idx in sorted(by_user.items())}
        return MetricResult(algorithm, group, name, k, _mean(values), per_user, n)

    results: List[MetricResult] = []
    for k in range(1, k_max + 1):
        results.append(result('R', k, [m.recall[k - 1] for m in metrics]))
        results.append(result('P', k, [m.precision[k - 1] for m in metrics]))

    f1_k = min(F1_K, k_max)
    recall_f1 = next(r for r in results if r.metric == 'R' and r.k == f1_k)
    precision_f1 = next(r for r in results if r.metric == 'P' and r.k == f1_k)
    results.append(MetricResult(
        algorithm, group, 'F1', f1_k,
        f1(precision_f1.value, recall_f1.value),
        {u: f1(precision_f1.per_user[u], recall_f1.per_user[u]) for u in recall_f1.per_user},
        n,
    ))
    results.append(result('MRR', k_max, [m.mrr for m in metrics]))
    results.append(result('MAP', k_max, [m.map for m in metrics]))
    results.append(result('nDCG', k_max, [m.ndcg for m in metrics]))
    return results


class Evaluator:
    """
    Runs algorithms over the test cases of one group.

    Models see the training split only; context pointers come from the
    test cases, so evaluation never mutates model state.
    """

    def __init__(self, training: TrainingData, catalog: GenreCatalog, d: Optional[float] = None,
                 association: Optional[AssociationIndex] = None, w_c: float = 1.0,
                 cf_user_neighbors: int = 20, cf_item_neighbors: int = 20,
                 cf_item_top_artists: int = 20, seed: int = 42):
        self.training = training
        self.catalog = catalog
        self.d = d
        self.association = association
        self.w_c = w_c
        self.cf_user_neighbors = cf_user_neighbors
        self.cf_item_neighbors = cf_item_neighbors
        self.cf_item_top_artists = cf_item_top_artists
        self.seed = seed

    def predictor(self, algorithm: str) -> Callable[[TestCase, int], PredictionList]:
        """Prediction function for an algorithm name"""
        t = self.training
        if algorithm in ('BLL_u', 'ACT_ua') and self.d is None:
            raise DataError(f"{algorithm} needs a decay exponent: run fit-decay or set d_override")
        if algorithm == 'ACT_ua' and self.association is None:
            self.association = AssociationIndex(self.catalog)

        table: Dict[str, Callable[[TestCase, int], PredictionList]] = {
            'TOP': lambda c, k: predict_top(t, k, c.user_id),
            'CF_u': lambda c, k: predict_cf_user(t, c.user_id, k, self.cf_user_neighbors),
            'CF_i': lambda c, k: predict_cf_item(t, c.user_id, k, self.cf_item_top_artists,
                                                 self.cf_item_neighbors),
            'POP_u': lambda c, k: predict_pop(t, c.user_id, k),
            'TIME_u': lambda c, k: predict_time(t, c.user_id, c.ref_time, k),
            'BLL_u': lambda c, k: predict_bll(t.history, c.user_id, c.ref_time, k, self.d),
            'ACT_ua': lambda c, k: predict_act(t.history, self.association, self.catalog, c.user_id,
                                               c.context_artist, c.ref_time, k, self.d, self.w_c),
            'ORACLE': lambda c, k: predict_oracle(c.user_id, c.relevant_genres, k),
            'RANDOM': lambda c, k: predict_random(t, c.user_id, k,
                                                  np.random.default_rng([self.seed, c.index])),
        }
        if algorithm not in table:
            raise ConfigError(f"Unknown algorithm: {algorithm}")
        return table[algorithm]

    def evaluate(self, algorithm: str, group: str, cases: Sequence[TestCase],
                 k_max: int = 10, workers: int = 1) -> AlgorithmEvaluation:
        """
        Predict and score every test case.

        Results do not depend on ``workers``: outcomes are collected in case
        order and means use exactly rounded sums.
        """
        predict = self.predictor(algorithm)

        def run(case: TestCase) -> Tuple[PredictionList, CaseMetrics, bool]:
            try:
                prediction = predict(case, k_max)
                cold = False
            except DataError:
                # cold user: scored as an empty prediction
                prediction = PredictionList(user_id=case.user_id, k=k_max, items=[])
                cold = True
            prediction.algorithm = algorithm
            prediction.context_artist = case.context_artist
            return prediction, case_metrics(prediction.genres, case.relevant_genres, k_max), cold

        if workers > 1 and len(cases) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(run, cases))
        else:
            outcomes = [run(c) for c in cases]

        cold_cases = sum(1 for _, _, cold in outcomes if cold)
        if cold_cases:
            logger.warning(f"⚠️ {algorithm}: {cold_cases} test case(s) of cold users scored as empty")
        metrics = aggregate(algorithm, group, cases, [m for _, m, _ in outcomes], k_max)
        return AlgorithmEvaluation(
            algorithm=algorithm,
            group=group,
            metrics=metrics,
            predictions=[p for p, _, _ in outcomes],
            cold_cases=cold_cases,
        )


def significance_test(scores_a: Sequence[float], scores_b: Sequence[float], alpha: float = 0.001,
                      paired: bool = True) -> SignificanceResult:
    """
    Two-tailed t-test between two per-user score vectors.

    Paired by default; ``paired=False`` runs Welch's independent-samples
    test. Zero variance yields a degenerate, non-significant result.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if paired and len(a) != len(b):
        raise ValueError("paired test needs score vectors of equal length")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("t-test needs at least 2 scores per side")

    if paired:
        degenerate = np.var(a - b) == 0
    else:
        degenerate = np.var(a) == 0 and np.var(b) == 0
    if degenerate:
        return SignificanceResult(t=None, p=None, significant=False, alpha=alpha, paired=paired,
                                  degenerate=True, note='degenerate: identical scores')

    if paired:
        result = stats.ttest_rel(a, b)
    else:
        result = stats.ttest_ind(a, b, equal_var=False)
    t, p = float(result.statistic), float(result.pvalue)
    return SignificanceResult(t=t, p=p, significant=p < alpha, alpha=alpha, paired=paired)


@dataclass
class SignificanceRow:
    group: str
    metric: str
    algorithm_a: str
    algorithm_b: str
    result: SignificanceResult


def significance_matrix(evaluations: Sequence[AlgorithmEvaluation], k_max: int = 10,
                        alpha: float = 0.001, paired: bool = True) -> List[SignificanceRow]:
    """Test every pair of algorithms on every table metric over shared users"""
    rows: List[SignificanceRow] = []
    f1_k = min(F1_K, k_max)
    for name in TABLE_METRICS:
        k = f1_k if name == 'F1' else k_max
        for first, second in combinations(evaluations, 2):
            a, b = first.metric(name, k).per_user, second.metric(name, k).per_user
            users = sorted(set(a) & set(b))
            if len(users) < 2:
                result = SignificanceResult(t=None, p=None, significant=False, alpha=alpha, paired=paired,
                                            degenerate=True, note='degenerate: fewer than 2 users')
            else:
                result = significance_test([a[u] for u in users], [b[u] for u in users], alpha, paired)
            rows.append(SignificanceRow(first.group, f"{name}@{k}", first.algorithm, second.algorithm, result))
    return rows
