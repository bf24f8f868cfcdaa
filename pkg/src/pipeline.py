"""
Staged Pipeline

The subcommands behind the command line: ingest -> split-groups ->
fit-decay -> evaluate -> report. Every stage reads the persisted output
of the previous one from the run directory and records its counts in the
run manifest, so a run can be resumed or reproduced stage by stage.

Run directory layout::

    manifest.json
    ingest/events.tsv, catalog.json, profiles.json
    groups/<group>.json, mainstreaminess.csv
    fits/<group>.json
    evaluation/<group>/metrics.csv, curves.csv, significance.csv,
                       predictions.jsonl, user_similarity.csv
    report.txt
"""

import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from . import __version__
from .baselines import TrainingData, user_similarity_summary
from .config import GROUP_NAMES, Config
from .errors import ConfigError, DataError
from .evaluation import Evaluator, build_test_cases, significance_matrix, temporal_split
from .ingestion import (
    ListeningEvent, build_genre_catalog, compute_mainstreaminess, events_by_user, filter_users,
    group_stats, load_allowed_genres, parse_events, parse_profiles, serialize_events, split_groups,
)
from .logger import get_logger
from .memory import AssociationIndex, DecayFit, build_genre_history, fit_decay
from .reports import (
    METRIC_COLUMNS, SIGNIFICANCE_COLUMNS, file_digest, read_catalog, read_decay_fit, read_group,
    read_json, read_profiles, read_table, render_report, write_catalog, write_curves,
    write_decay_fit, write_group, write_json, write_metric_table, write_predictions,
    write_profiles, write_scores, write_significance, write_user_similarity,
)
from .runtime import host_info, log_memory
from .synthetic import generate_corpus

logger = get_logger(__name__)

MANIFEST_NAME = 'manifest.json'


@dataclass
class RunManifest:
    """Everything that determines a run, without timestamps"""
    version: str = __version__
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    stages: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    decay: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    host: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: Path) -> 'RunManifest':
        path = Path(out_dir) / MANIFEST_NAME
        if not path.exists():
            return cls()
        data = read_json(path)
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def save(self, out_dir: Path, config: Config) -> Path:
        self.version = __version__
        self.config = config.to_dict()
        self.host = host_info()
        return write_json(Path(out_dir) / MANIFEST_NAME, asdict(self))


class RunLayout:
    """Paths of every artifact inside the run directory"""

    def __init__(self, out_dir):
        self.root = Path(out_dir)

    @property
    def events(self) -> Path:
        return self.root / 'ingest' / 'events.tsv'

    @property
    def catalog(self) -> Path:
        return self.root / 'ingest' / 'catalog.json'

    @property
    def profiles(self) -> Path:
        return self.root / 'ingest' / 'profiles.json'

    @property
    def scores(self) -> Path:
        return self.root / 'groups' / 'mainstreaminess.csv'

    def group(self, name: str) -> Path:
        return self.root / 'groups' / f'{name}.json'

    def fit(self, name: str) -> Path:
        return self.root / 'fits' / f'{name}.json'

    def evaluation(self, name: str) -> Path:
        return self.root / 'evaluation' / name

    @property
    def report(self) -> Path:
        return self.root / 'report.txt'


def _require(path: Optional[str], what: str) -> Path:
    if not path:
        raise DataError(f"No {what} file configured")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"Missing {what} file: {p}")
    return p


def _optional(path: Optional[str], what: str) -> Optional[Path]:
    return _require(path, what) if path else None


def _selected_groups(group: Optional[str]) -> List[str]:
    if group is None:
        return list(GROUP_NAMES)
    if group not in GROUP_NAMES:
        raise ConfigError(f"Unknown group {group!r}; expected one of {', '.join(GROUP_NAMES)}")
    return [group]


def _load_ingested(layout: RunLayout, workers: int = 1) -> List[ListeningEvent]:
    if not layout.events.exists():
        raise DataError(f"No ingested events in {layout.root}; run 'ingest' first")
    with open(layout.events, 'rb') as f:
        return parse_events(f, strict=True, workers=workers).events


def _load_group(layout: RunLayout, name: str):
    if not layout.group(name).exists():
        raise DataError(f"No manifest for group {name}; run 'split-groups' first")
    return read_group(layout.group(name))


def cmd_ingest(config: Config) -> Dict[str, Any]:
    """
    Parse the raw inputs, filter users by activity and persist the
    normalized event store, genre catalog and profiles.

    Raises:
        DataError: missing input files, no events, strict-mode parse errors
    """
    paths, ingest = config.paths, config.ingest
    layout = RunLayout(paths.out_dir)
    events_path = _require(paths.events, 'events')
    tags_path = _require(paths.tags, 'genre tag')
    profiles_path = _optional(paths.profiles, 'profiles')
    allowed_path = _optional(paths.allowed_genres, 'allowed-genre')

    workers = config.evaluation.workers
    with open(events_path, 'rb') as f:
        parsed = parse_events(f, strict=ingest.strict, workers=workers)
    if not parsed.events:
        raise DataError(f"no events in {events_path}")
    log_memory(logger, 'events parsed')

    allowed = None
    if allowed_path is not None:
        with open(allowed_path, 'rb') as f:
            allowed = load_allowed_genres(f)
    with open(tags_path, 'rb') as f:
        catalog = build_genre_catalog(f, ingest.min_rel_freq, allowed, ingest.strict)

    profiles = {}
    if profiles_path is not None:
        with open(profiles_path, 'rb') as f:
            profiles = parse_profiles(f, ingest.strict)

    kept_users = filter_users(parsed.events, ingest.min_le, ingest.max_le)
    kept = [e for e in parsed.events if e.user_id in kept_users]
    if not kept:
        raise DataError(f"no users with between {ingest.min_le} and {ingest.max_le} listening events")

    layout.events.parent.mkdir(parents=True, exist_ok=True)
    with open(layout.events, 'wb') as f:
        serialize_events(kept, f)
    write_catalog(layout.catalog, catalog)
    write_profiles(layout.profiles, {u: p for u, p in profiles.items() if u in kept_users})

    counts = {
        'lines': parsed.lines,
        'skipped_lines': parsed.skipped,
        'events': len(parsed.events),
        'users_before_filter': len({e.user_id for e in parsed.events}),
        'users_after_filter': len(kept_users),
        'listening_events': len(kept),
        'genre_assignments': sum(len(catalog.genres_of(e.artist_id)) for e in kept),
        'artists': len({e.artist_id for e in kept}),
        'genres': len(catalog),
        'profiles': len(profiles),
    }
    logger.info(f"📥 Ingest: {counts['users_after_filter']}/{counts['users_before_filter']} users kept, "
                f"|LE|={counts['listening_events']}, |GA|={counts['genre_assignments']}")

    manifest = RunManifest.load(layout.root)
    manifest.inputs = {
        name: file_digest(path)
        for name, path in (('events', events_path), ('tags', tags_path),
                           ('profiles', profiles_path), ('allowed_genres', allowed_path))
        if path is not None
    }
    manifest.stages['ingest'] = counts
    manifest.save(layout.root, config)
    log_memory(logger, 'ingest')
    return counts


def cmd_split_groups(config: Config) -> Dict[str, Any]:
    """
    Score mainstreaminess and write the LowMS / MedMS / HighMS group manifests.

    Raises:
        DataError: ingest not run, or fewer than ``3 * group_size`` users
    """
    layout = RunLayout(config.paths.out_dir)
    events = _load_ingested(layout, config.evaluation.workers)
    catalog = read_catalog(layout.catalog)
    profiles = read_profiles(layout.profiles) if layout.profiles.exists() else {}

    scores = compute_mainstreaminess(events, profiles, config.ingest.mainstreaminess_mode)
    groups = split_groups(scores, config.ingest.group_size)
    write_scores(layout.scores, scores)

    counts: Dict[str, Any] = {
        'users_scored': len(scores),
        'median_mainstreaminess': statistics.median(scores.values()),
    }
    for group in groups:
        group.stats = group_stats(group.user_ids, events, catalog, scores)
        write_group(layout.group(group.name), group)
        counts[group.name] = asdict(group.stats)
        logger.info(f"👥 {group.name}: {group.stats.users} users, |LE|={group.stats.listening_events}, "
                    f"Avg. MS={group.stats.avg_mainstreaminess:.3f}")

    manifest = RunManifest.load(layout.root)
    manifest.stages['split_groups'] = counts
    manifest.save(layout.root, config)
    log_memory(logger, 'split-groups')
    return counts


def cmd_fit_decay(config: Config, group: Optional[str] = None) -> Dict[str, DecayFit]:
    """
    Fit the decay exponent d of each group from its relistening gaps, or
    record the configured override. With ``model.decay_fit_events`` set to
    'train' only the training portion of the evaluation split is used.

    Raises:
        DegenerateComputationError: the gaps do not support a fit
    """
    layout = RunLayout(config.paths.out_dir)
    names = _selected_groups(group)
    model = config.model
    events = None
    catalog = None
    fits: Dict[str, DecayFit] = {}

    for name in names:
        user_group = _load_group(layout, name)
        if name in model.d_override:
            fit = DecayFit.override(model.d_override[name])
            logger.info(f"📉 {name}: using d_override={fit.d}")
        else:
            if events is None:
                events = _load_ingested(layout, config.evaluation.workers)
                catalog = read_catalog(layout.catalog)
            members = set(user_group.user_ids)
            group_events = [e for e in events if e.user_id in members]
            if model.decay_fit_events == 'train':
                # same split as 'evaluate': held-out events stay out of the fit
                split = temporal_split(events_by_user(group_events), config.evaluation.split_fraction)
                group_events = list(split.train_events())
            logger.debug(f"📉 {name}: fitting d on {len(group_events)} {model.decay_fit_events} events")
            store = build_genre_history(group_events, catalog)
            fit = fit_decay(store, model.decay_reference_grid, model.decay_bins)
        write_decay_fit(layout.fit(name), name, fit)
        user_group.decay_d = fit.d
        write_group(layout.group(name), user_group)
        fits[name] = fit

    manifest = RunManifest.load(layout.root)
    for name, fit in fits.items():
        manifest.decay[name] = {'d': fit.d, 'provenance': fit.provenance}
    manifest.save(layout.root, config)
    return fits


def _decay_for(layout: RunLayout, config: Config, name: str) -> Optional[float]:
    if name in config.model.d_override:
        return config.model.d_override[name]
    if layout.fit(name).exists():
        return read_decay_fit(layout.fit(name)).d
    return None


def cmd_evaluate(config: Config, group: Optional[str] = None,
                 algorithms: Optional[Sequence[str]] = None) -> Dict[str, Any]:
    """
    Split, train and evaluate the selected algorithms on each group and
    write the metric table, curves, significance matrix, prediction log
    and user similarity summary.

    Raises:
        ConfigError: unknown algorithm
        DataError: missing stage outputs, or BLL/ACT without a decay exponent
    """
    layout = RunLayout(config.paths.out_dir)
    evaluation, model = config.evaluation, config.model
    algorithms = list(algorithms or evaluation.algorithms)
    config.evaluation.algorithms = algorithms
    config.validate()

    events = _load_ingested(layout, evaluation.workers)
    catalog = read_catalog(layout.catalog)
    association = AssociationIndex(catalog) if 'ACT_ua' in algorithms else None
    per_group: Dict[str, Any] = {}

    for name in _selected_groups(group):
        user_group = _load_group(layout, name)
        d = _decay_for(layout, config, name)
        if d is None and any(a in ('BLL_u', 'ACT_ua') for a in algorithms):
            raise DataError(f"No decay exponent for {name}: run 'fit-decay' or set model.d_override")

        members = set(user_group.user_ids)
        split = temporal_split(events_by_user(e for e in events if e.user_id in members),
                               evaluation.split_fraction)
        test_cases = build_test_cases(split, catalog)
        if not test_cases.cases:
            raise DataError(f"{name}: no test case has a target artist with genres")

        training = TrainingData(split.train_events(), catalog)
        evaluator = Evaluator(
            training, catalog, d=d, association=association, w_c=model.attentional_weight,
            cf_user_neighbors=model.cf_user_neighbors, cf_item_neighbors=model.cf_item_neighbors,
            cf_item_top_artists=model.cf_item_top_artists, seed=evaluation.seed,
        )
        results = []
        for algorithm in algorithms:
            result = evaluator.evaluate(algorithm, name, test_cases.cases, evaluation.k_max, evaluation.workers)
            f1 = next(m for m in result.metrics if m.metric == 'F1')
            logger.info(f"🎯 {name} {algorithm}: F1@{f1.k}={f1.value:.4f}")
            results.append(result)

        significance = significance_matrix(results, evaluation.k_max, evaluation.alpha, evaluation.paired)
        target = layout.evaluation(name)
        write_metric_table(target / 'metrics.csv', results)
        write_curves(target / 'curves.csv', results, evaluation.k_max)
        write_significance(target / 'significance.csv', significance)
        write_predictions(target / 'predictions.jsonl', results, test_cases.cases, catalog)
        if len(training.users) >= 2:
            write_user_similarity(target / 'user_similarity.csv', name, user_similarity_summary(training))

        per_group[name] = {
            'users': len(split.users),
            'excluded_users': len(split.excluded),
            'train_events': sum(len(s.train) for s in split.users.values()),
            'test_events': split.test_size,
            'test_cases': len(test_cases.cases),
            'unmappable_test_events': test_cases.unmappable,
            'cold_cases': {r.algorithm: r.cold_cases for r in results},
            'decay_d': d,
        }
        log_memory(logger, f'evaluate {name}')

    manifest = RunManifest.load(layout.root)
    manifest.stages.setdefault('evaluate', {}).update(per_group)
    manifest.save(layout.root, config)
    return per_group


def cmd_report(config: Config) -> str:
    """Render every evaluated group's metric table as one aligned text table"""
    layout = RunLayout(config.paths.out_dir)
    metric_frames, significance_frames = [], []
    for name in GROUP_NAMES:
        target = layout.evaluation(name)
        if not (target / 'metrics.csv').exists():
            continue
        metric_frames.append(read_table(target / 'metrics.csv', METRIC_COLUMNS))
        if (target / 'significance.csv').exists():
            significance_frames.append(read_table(target / 'significance.csv', SIGNIFICANCE_COLUMNS))
    if not metric_frames:
        raise DataError(f"No evaluation results in {layout.root}; run 'evaluate' first")

    significance = pd.concat(significance_frames, ignore_index=True) if significance_frames else None
    text = render_report(pd.concat(metric_frames, ignore_index=True), significance, config.evaluation.k_max)
    layout.report.write_text(text, encoding='utf-8')
    return text


def cmd_synthesize(config: Config, target_dir, users_per_group: int = 100,
                   events_per_user: int = 200) -> Dict[str, Any]:
    """
    Write a synthetic corpus plus a config file whose paths point at it.

    The written config scales filtering, group size and split fraction to
    the corpus so the full pipeline runs on it unchanged.
    """
    target_dir = Path(target_dir)
    corpus = generate_corpus(users_per_group=users_per_group, events_per_user=events_per_user,
                             seed=config.evaluation.seed)
    paths = corpus.write(target_dir)

    run_config = Config()
    run_config.update_from_dict({
        'paths': {name: str(path) for name, path in paths.items()},
        'ingest': {'min_le': 1, 'max_le': max(events_per_user, 1), 'group_size': users_per_group},
        'evaluation': {'split_fraction': 0.05, 'seed': config.evaluation.seed},
    })
    run_config.paths.out_dir = str(target_dir / 'out')
    config_path = run_config.save(target_dir / 'config.json')

    counts = {
        'users': len(corpus.mainstream_weight),
        'events': len(corpus.events),
        'genres': len(corpus.allowed_genres),
        'config': str(config_path),
    }
    logger.info(f"🧪 Synthetic corpus written to {target_dir}")
    return counts
