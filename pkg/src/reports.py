"""
Result Files and Reports

Readers and writers for every artifact the pipeline persists: JSON
manifests, CSV tables, the JSON-lines prediction log and the aligned text
report. Output is deterministic: sorted keys, fixed column order, no
timestamps.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd

from .config import ALGORITHMS, DEBUG_ALGORITHMS, GROUP_NAMES
from .errors import DataError
from .evaluation import AlgorithmEvaluation, F1_K, SignificanceRow, TABLE_METRICS, TestCase
from .ingestion import GenreCatalog, GroupStats, UserGroup, UserProfile, Gender
from .memory import DecayFit

PathLike = Union[str, Path]

METRIC_COLUMNS = ['group', 'algorithm', 'metric', 'k', 'value', 'n']
CURVE_COLUMNS = ['group', 'algorithm', 'k', 'recall', 'precision']
SIGNIFICANCE_COLUMNS = ['group', 'metric', 'algorithm_a', 'algorithm_b', 't', 'p', 'significant']
SIMILARITY_COLUMNS = ['group', 'users', 'min', 'q1', 'median', 'q3', 'max', 'mean']
BEST_MARK = '***'


def write_json(path: PathLike, data: Any) -> Path:
    """Write JSON with sorted keys and a trailing newline"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write('\n')
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise DataError(f"Missing file: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Unreadable JSON file {path}: {e}") from e


def file_digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def read_table(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    """Read a CSV artifact and check its header"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing file: {path}")
    frame = pd.read_csv(path, keep_default_na=True)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks column(s): {', '.join(missing)}")
    return frame


# Catalog and profiles

def write_catalog(path: PathLike, catalog: GenreCatalog) -> Path:
    return write_json(path, catalog.to_dict())


def read_catalog(path: PathLike) -> GenreCatalog:
    return GenreCatalog.from_dict(read_json(path))


def write_profiles(path: PathLike, profiles: Mapping[str, UserProfile]) -> Path:
    data = {}
    for user in sorted(profiles):
        p = profiles[user]
        data[user] = {
            'country': p.country,
            'age': p.age,
            'gender': p.gender.value if p.gender is not None else None,
            'mainstreaminess': p.mainstreaminess,
        }
    return write_json(path, data)


def read_profiles(path: PathLike) -> Dict[str, UserProfile]:
    data = read_json(path)
    return {
        user: UserProfile(
            user_id=user,
            country=fields.get('country'),
            age=fields.get('age'),
            gender=Gender(fields['gender']) if fields.get('gender') else None,
            mainstreaminess=fields.get('mainstreaminess'),
        )
        for user, fields in data.items()
    }


def write_scores(path: PathLike, scores: Mapping[str, float]) -> Path:
    """Mainstreaminess score per user, ordered by user id"""
    users = sorted(scores)
    return _write_frame(path, pd.DataFrame({'user_id': users, 'mainstreaminess': [scores[u] for u in users]}))


def read_scores(path: PathLike) -> Dict[str, float]:
    frame = read_table(path, ['user_id', 'mainstreaminess'])
    return dict(zip(frame['user_id'].astype(str), frame['mainstreaminess'].astype(float)))


# Groups and decay fits

def group_to_dict(group: UserGroup) -> Dict[str, Any]:
    stats = None
    if group.stats is not None:
        s = group.stats
        stats = {
            'users': s.users,
            'artists': s.artists,
            'genres': s.genres,
            'listening_events': s.listening_events,
            'genre_assignments': s.genre_assignments,
            'ga_per_le': s.ga_per_le,
            'genres_per_user': s.genres_per_user,
            'avg_mainstreaminess': s.avg_mainstreaminess,
        }
    return {'name': group.name, 'decay_d': group.decay_d, 'user_ids': list(group.user_ids), 'stats': stats}


def group_from_dict(data: Mapping[str, Any]) -> UserGroup:
    try:
        stats = GroupStats(**data['stats']) if data.get('stats') else None
        return UserGroup(name=data['name'], user_ids=data['user_ids'], decay_d=data.get('decay_d'), stats=stats)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"Invalid group manifest: {e}") from e


def write_group(path: PathLike, group: UserGroup) -> Path:
    return write_json(path, group_to_dict(group))


def read_group(path: PathLike) -> UserGroup:
    return group_from_dict(read_json(path))


def write_decay_fit(path: PathLike, group: str, fit: DecayFit) -> Path:
    return write_json(path, {'group': group, **fit.to_dict()})


def read_decay_fit(path: PathLike) -> DecayFit:
    data = dict(read_json(path))
    data.pop('group', None)
    try:
        return DecayFit(**data)
    except TypeError as e:
        raise DataError(f"Invalid decay fit file {path}: {e}") from e


# Evaluation outputs

def metric_frame(evaluations: Iterable[AlgorithmEvaluation]) -> pd.DataFrame:
    rows = [
        (m.group, m.algorithm, m.metric, m.k, m.value, m.n_test_cases)
        for evaluation in evaluations for m in evaluation.metrics
    ]
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def write_metric_table(path: PathLike, evaluations: Iterable[AlgorithmEvaluation]) -> Path:
    return _write_frame(path, metric_frame(evaluations))


def write_curves(path: PathLike, evaluations: Iterable[AlgorithmEvaluation], k_max: int = 10) -> Path:
    """Recall/precision at k = 1..k_max, the data behind recall-precision plots"""
    rows = [
        (e.group, e.algorithm, k, recall, precision)
        for e in evaluations for k, recall, precision in e.curve(k_max)
    ]
    return _write_frame(path, pd.DataFrame(rows, columns=CURVE_COLUMNS))


def write_significance(path: PathLike, rows: Iterable[SignificanceRow]) -> Path:
    records = [
        (r.group, r.metric, r.algorithm_a, r.algorithm_b, r.result.t, r.result.p, r.result.significant)
        for r in rows
    ]
    return _write_frame(path, pd.DataFrame(records, columns=SIGNIFICANCE_COLUMNS))


def write_user_similarity(path: PathLike, group: str, summary: Mapping[str, float]) -> Path:
    row = {'group': group, **{key: summary[key] for key in SIMILARITY_COLUMNS[1:]}}
    return _write_frame(path, pd.DataFrame([row], columns=SIMILARITY_COLUMNS))


def write_predictions(path: PathLike, evaluations: Iterable[AlgorithmEvaluation],
                      cases: Sequence[TestCase], catalog: GenreCatalog) -> Path:
    """One JSON object per (algorithm, test case) with everything needed to re-score it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for evaluation in evaluations:
            for case, prediction in zip(cases, evaluation.predictions):
                record = prediction.to_dict(catalog)
                record.update({
                    'group': evaluation.group,
                    'case': case.index,
                    'target_artist': case.target_artist,
                    'ref_time': case.ref_time,
                    'relevant': [catalog.name(g) for g in sorted(case.relevant_genres)],
                })
                f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n')
    return path


def read_predictions(path: PathLike) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing file: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


# Text report

def _ordered(values: Iterable[str], preferred: Sequence[str]) -> List[str]:
    values = set(values)
    head = [v for v in preferred if v in values]
    return head + sorted(values - set(head))


def _best_algorithms(metrics: pd.DataFrame, significance: Optional[pd.DataFrame]) -> set:
    """(group, metric label, algorithm) triples best and significantly better than all others"""
    marked = set()
    if significance is None or significance.empty:
        return marked
    for (group, label), block in metrics.groupby(['group', 'label']):
        values = dict(zip(block['algorithm'], block['value']))
        if len(values) < 2:
            continue
        best = max(values, key=lambda a: (values[a], a))
        others = [a for a in values if a != best]
        tests = significance[(significance['group'] == group) & (significance['metric'] == label)]
        beaten = 0
        for other in others:
            pair = tests[((tests['algorithm_a'] == best) & (tests['algorithm_b'] == other))
                         | ((tests['algorithm_a'] == other) & (tests['algorithm_b'] == best))]
            if not pair.empty and bool(pair['significant'].iloc[0]) and values[best] > values[other]:
                beaten += 1
        if beaten == len(others):
            marked.add((group, label, best))
    return marked


def render_report(metrics: pd.DataFrame, significance: Optional[pd.DataFrame] = None,
                  k_max: int = 10) -> str:
    """
    Aligned text table: one row per algorithm, one column block per group
    with F1@5, MRR, MAP and nDCG. ``***`` marks the best algorithm of a
    column when it is significantly better than every other algorithm.
    """
    f1_k = min(F1_K, k_max)
    wanted = {(name, f1_k if name == 'F1' else k_max) for name in TABLE_METRICS}
    rows = metrics[[(m, int(k)) in wanted for m, k in zip(metrics['metric'], metrics['k'])]].copy()
    if rows.empty:
        raise DataError("No table metrics to report")
    rows['label'] = [f"{m}@{int(k)}" for m, k in zip(rows['metric'], rows['k'])]
    marked = _best_algorithms(rows, significance)

    groups = _ordered(rows['group'], GROUP_NAMES)
    algorithms = _ordered(rows['algorithm'], ALGORITHMS + DEBUG_ALGORITHMS)
    labels = [f"{name}@{f1_k if name == 'F1' else k_max}" for name in TABLE_METRICS]

    table = pd.DataFrame(
        index=pd.Index(algorithms, name='algorithm'),
        columns=pd.MultiIndex.from_product([groups, labels]),
        dtype=object,
    )
    table.loc[:, :] = '-'
    for group, algorithm, label, value in zip(rows['group'], rows['algorithm'], rows['label'], rows['value']):
        cell = f"{value:.3f}"
        if (group, label, algorithm) in marked:
            cell += BEST_MARK
        table.loc[algorithm, (group, label)] = cell
    return table.to_string() + '\n'
