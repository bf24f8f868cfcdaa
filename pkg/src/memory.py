"""
ACT-R Declarative Memory Model for Genres

Base-level activation of a genre grows with how often and how recently a
user listened to it and decays with a power law:

    B(g, u) = ln( sum_j (t_ref - t_j)^(-d) )

Base-level values are softmax-normalized over the genres the user has
heard. Spreading activation from the genres of the most recently played
artist adds the Jaccard association of each context genre:

    A(g, u, a) = B'(g, u) + sum_{c in G_a} W_c * S(c, g)
"""

import math
from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, special, stats

from .errors import DataError, DegenerateComputationError
from .ingestion import GenreCatalog, ListeningEvent, events_by_user
from .logger import get_logger

logger = get_logger(__name__)

MIN_AGE_SECONDS = 1
RANK_DIGITS = 12


@dataclass
class UserHistory:
    """Occurrence timestamps of one user, one contiguous segment per genre"""
    genre_ids: np.ndarray   # ascending genre ids, shape (G_u,)
    offsets: np.ndarray     # segment bounds into times, shape (G_u + 1,)
    times: np.ndarray       # ascending within each segment

    def segment(self, position: int) -> np.ndarray:
        return self.times[self.offsets[position]:self.offsets[position + 1]]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def last_times(self) -> np.ndarray:
        return self.times[self.offsets[1:] - 1]


class GenreHistoryStore:
    """
    Build-once, read-many store of per (user, genre) occurrence timestamps.
    """

    def __init__(self, histories: Mapping[str, Mapping[int, Sequence[int]]]):
        """
        Args:
            histories: user_id -> {genre_id: timestamps}
        """
        self._users: Dict[str, UserHistory] = {}
        self._positions: Dict[str, Dict[int, int]] = {}
        for user, genres in histories.items():
            kept = sorted((gid, sorted(ts)) for gid, ts in genres.items() if len(ts) > 0)
            if not kept:
                continue
            genre_ids = np.array([gid for gid, _ in kept], dtype=np.int64)
            lengths = [len(ts) for _, ts in kept]
            offsets = np.zeros(len(kept) + 1, dtype=np.int64)
            offsets[1:] = np.cumsum(lengths)
            times = np.fromiter((t for _, ts in kept for t in ts), dtype=np.int64, count=int(offsets[-1]))
            self._users[user] = UserHistory(genre_ids, offsets, times)
            self._positions[user] = {gid: i for i, (gid, _) in enumerate(kept)}

    def __len__(self) -> int:
        return len(self._users)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._users

    def users(self) -> List[str]:
        return sorted(self._users)

    def history(self, user_id: str) -> UserHistory:
        """Raises DataError for a user without any genre occurrence"""
        try:
            return self._users[user_id]
        except KeyError:
            raise DataError(f"cold user: no genre history for {user_id!r}") from None

    def genres(self, user_id: str) -> Tuple[int, ...]:
        """G_u in ascending genre id order (empty for unknown users)"""
        h = self._users.get(user_id)
        return () if h is None else tuple(int(g) for g in h.genre_ids)

    def timestamps(self, user_id: str, genre_id: int) -> np.ndarray:
        h = self.history(user_id)
        position = self._positions[user_id].get(genre_id)
        if position is None:
            raise DataError(f"unknown genre for user: genre {genre_id} not in G_u of {user_id!r}")
        return h.segment(position)

    def count(self, user_id: str, genre_id: int) -> int:
        return len(self.timestamps(user_id, genre_id))

    def bll_scores(self, user_id: str, ref_time: int, d: float) -> np.ndarray:
        """
        Unnormalized B(g, u) for every g in G_u, aligned with ``history(u).genre_ids``.

        Ages below one second are clamped to one second.
        """
        if not d > 0:
            raise ValueError(f"decay exponent must be positive: {d}")
        h = self.history(user_id)
        ages = np.maximum(ref_time - h.times, MIN_AGE_SECONDS).astype(np.float64)
        terms = -d * np.log(ages)
        starts = h.offsets[:-1]
        seg_max = np.maximum.reduceat(terms, starts)
        shifted = np.exp(terms - np.repeat(seg_max, h.counts))
        return np.log(np.add.reduceat(shifted, starts)) + seg_max


@dataclass
class DecayFit:
    """Least-squares power-law fit of relistening counts over time gaps"""
    slope: float
    intercept: Optional[float]
    d: float
    point_count: int
    bin_count: int
    provenance: str = 'fit'

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def override(cls, d: float) -> 'DecayFit':
        """A fit record for a manually supplied decay exponent"""
        if not d > 0:
            raise ValueError(f"decay exponent must be positive: {d}")
        return cls(slope=-d, intercept=None, d=d, point_count=0, bin_count=0,
                   provenance='override')


@dataclass
class PredictionList:
    """Ordered top-k genres for one query"""
    user_id: str
    k: int
    items: List[Tuple[int, float]]
    context_artist: Optional[str] = None
    algorithm: Optional[str] = None

    @property
    def genres(self) -> List[int]:
        return [gid for gid, _ in self.items]

    def to_dict(self, catalog: Optional[GenreCatalog] = None) -> Dict[str, object]:
        def label(gid):
            return catalog.name(gid) if catalog is not None else gid
        return {
            'algorithm': self.algorithm,
            'user': self.user_id,
            'context_artist': self.context_artist,
            'k': self.k,
            'items': [{'genre': label(gid), 'score': score} for gid, score in self.items],
        }


def rank_key(score: float) -> float:
    # 12 significant digits; residual floating point noise compares as a tie
    return float(f"{score:.{RANK_DIGITS}g}")


def top_k(scores: Mapping[int, float], k: int) -> List[Tuple[int, float]]:
    """Highest scores first, ties broken by ascending genre id"""
    ranked = sorted(scores.items(), key=lambda item: (-rank_key(item[1]), item[0]))
    return [(int(gid), float(score)) for gid, score in ranked[:k]]


def build_genre_history(events: Iterable[ListeningEvent], catalog: GenreCatalog) -> GenreHistoryStore:
    """
    Expand listening events into genre occurrences.

    Each event of artist ``a`` contributes one occurrence of every genre in
    ``G_a`` at the event's timestamp; artists without genres contribute
    nothing.
    """
    histories: Dict[str, Dict[int, List[int]]] = {}
    for user, user_events in events_by_user(events).items():
        genres: Dict[int, List[int]] = {}
        for e in user_events:
            for gid in catalog.genres_of(e.artist_id):
                genres.setdefault(gid, []).append(e.timestamp)
        if genres:
            histories[user] = genres
    return GenreHistoryStore(histories)


def bll_score(store: GenreHistoryStore, user_id: str, genre_id: int, ref_time: int, d: float) -> float:
    """
    Base-level activation B(g, u) = ln(sum_j age_j^(-d)), ages clamped to >= 1s.

    Raises:
        DataError: genre not in G_u
    """
    if not d > 0:
        raise ValueError(f"decay exponent must be positive: {d}")
    ages = np.maximum(ref_time - store.timestamps(user_id, genre_id), MIN_AGE_SECONDS)
    return float(special.logsumexp(-d * np.log(ages.astype(np.float64))))


def softmax_normalize(scores: Mapping[int, float]) -> Dict[int, float]:
    """
    Softmax over a genre -> score mapping, shifted by the maximum for stability.

    Raises:
        ValueError: empty input or non-finite scores
    """
    if not scores:
        raise ValueError("softmax of an empty score set")
    keys = list(scores)
    values = np.fromiter((scores[g] for g in keys), dtype=np.float64, count=len(keys))
    if not np.all(np.isfinite(values)):
        raise ValueError("softmax input contains NaN or infinite scores")
    return dict(zip(keys, special.softmax(values).tolist()))


class AssociationIndex:
    """
    Jaccard association strengths between all catalog genres.

    S(c, g) = |A_c & A_g| / |A_c | A_g| where A_g are the artists carrying g.
    """

    def __init__(self, catalog: GenreCatalog):
        artists = [a for a in catalog.artists if catalog.genres_of(a)]
        n_genres = len(catalog)
        rows, cols = [], []
        for i, artist in enumerate(artists):
            for gid in catalog.genres_of(artist):
                rows.append(i)
                cols.append(gid)
        incidence = sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int64), (rows, cols)),
            shape=(len(artists), n_genres)
        )
        co = (incidence.T @ incidence).toarray()
        sizes = np.diag(co).copy()
        union = sizes[:, None] + sizes[None, :] - co
        with np.errstate(divide='ignore', invalid='ignore'):
            self._matrix = np.where(union > 0, co / np.where(union > 0, union, 1), 0.0)
        self._size = n_genres
        logger.debug(f"Association index built over {n_genres} genres and {len(artists)} artists")

    def __len__(self) -> int:
        return self._size

    def _check(self, genre_id: int) -> None:
        if not (0 <= genre_id < self._size):
            raise DataError(f"unknown genre id {genre_id}")

    def strength(self, c: int, g: int) -> float:
        self._check(c)
        self._check(g)
        return float(self._matrix[c, g])

    def block(self, context: Sequence[int], candidates: Sequence[int]) -> np.ndarray:
        """S values with one row per context genre and one column per candidate"""
        return self._matrix[np.ix_(np.asarray(context, dtype=np.int64),
                                   np.asarray(candidates, dtype=np.int64))]


def association_strength(index: AssociationIndex, c: int, g: int) -> float:
    """Jaccard association strength S(c, g); 0 when neither genre has artists"""
    return index.strength(c, g)


def relisten_gaps(store: GenreHistoryStore) -> np.ndarray:
    """Seconds between consecutive occurrences of the same (user, genre), clamped to >= 1"""
    gaps = []
    for user in store.users():
        h = store.history(user)
        diffs = np.diff(h.times)
        # drop differences that straddle two genre segments
        keep = np.ones(len(diffs), dtype=bool)
        keep[h.offsets[1:-1] - 1] = False
        gaps.append(diffs[keep])
    if not gaps:
        return np.empty(0, dtype=np.int64)
    return np.maximum(np.concatenate(gaps), MIN_AGE_SECONDS)


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, int]:
    """
    Least-squares line through (log10 x, log10 y).

    Returns:
        (slope, intercept, point_count)
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("x and y data must be the same size")
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0) or np.ptp(x) == 0:
        raise DegenerateComputationError(
            "Power-law fit needs at least 2 positive points at distinct gaps; "
            "supply the decay exponent manually (d_override)")
    result = stats.linregress(np.log10(x), np.log10(y))
    return float(result.slope), float(result.intercept), len(x)


def fit_decay(store: GenreHistoryStore, bin_edges: Optional[Sequence[float]] = None,
              bin_count: int = 100) -> DecayFit:
    """
    Fit the decay exponent d from relistening gaps.

    Gaps between consecutive occurrences of a genre are histogrammed into
    logarithmically spaced bins (or the supplied reference grid), and a line
    is fitted through (log10 bin centre, log10 count) over nonzero bins.

    Raises:
        DegenerateComputationError: fewer than two nonzero bins or a flat line
    """
    gaps = relisten_gaps(store)
    if len(gaps) == 0:
        raise DegenerateComputationError(
            "No relistening gaps to fit; supply the decay exponent manually (d_override)")

    if bin_edges is None:
        low, high = float(gaps.min()), float(gaps.max())
        if low == high:
            raise DegenerateComputationError(
                f"All relistening gaps equal {low:g}s (fewer than 2 nonzero bins); "
                "supply the decay exponent manually (d_override)")
        edges = np.logspace(math.log10(low), math.log10(high), bin_count + 1)
        # outer edges are the exact extreme gaps; logspace round-off may miss them
        edges[0], edges[-1] = low, high
    else:
        edges = np.asarray(bin_edges, dtype=np.float64)
        if len(edges) < 3 or np.any(np.diff(edges) <= 0) or edges[0] <= 0:
            raise ValueError("reference grid must be at least 3 increasing positive edges")

    counts, _ = np.histogram(gaps, bins=edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    nonzero = counts > 0
    if nonzero.sum() < 2:
        raise DegenerateComputationError(
            f"Decay fit found {int(nonzero.sum())} nonzero bin(s), at least 2 are needed; "
            "supply the decay exponent manually (d_override)")

    slope, intercept, points = fit_power_law(centers[nonzero], counts[nonzero])
    if slope == 0:
        raise DegenerateComputationError("Relistening counts do not decay (slope 0)")
    if slope > 0:
        logger.warning(f"⚠️ Relistening counts increase with time gap (slope {slope:.4f})")
    logger.info(f"📉 Decay fit over {len(gaps)} gaps: slope={slope:.4f}, d={abs(slope):.4f}")
    return DecayFit(slope=slope, intercept=intercept, d=abs(slope), point_count=points,
                    bin_count=len(edges) - 1)


def predict_bll(store: GenreHistoryStore, user_id: str, ref_time: int, k: int, d: float) -> PredictionList:
    """
    Top-k genres of G_u by softmax-normalized base-level activation.

    Raises:
        DataError: the user has no genre history
    """
    h = store.history(user_id)
    raw = store.bll_scores(user_id, ref_time, d)
    normalized = special.softmax(raw)
    scores = dict(zip(h.genre_ids.tolist(), normalized.tolist()))
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k), algorithm='BLL_u')


@lru_cache(maxsize=4096)
def _warn_unknown_artist(artist_id: str) -> None:
    logger.warning(f"⚠️ Context artist {artist_id!r} is not in the genre catalog; using empty context")


def predict_act(store: GenreHistoryStore, index: AssociationIndex, catalog: GenreCatalog,
                user_id: str, context_artist: Optional[str], ref_time: int, k: int, d: float,
                w_c: float = 1.0) -> PredictionList:
    """
    Top-k genres of G_u by the full activation equation.

    A(g) = B'(g) + sum over context genres c of w_c * S(c, g), softmax-normalized.
    An empty context gives exactly the ``predict_bll`` result.
    """
    context: Tuple[int, ...] = ()
    if context_artist is not None:
        if catalog.has_artist(context_artist):
            context = catalog.genres_of(context_artist)
        else:
            _warn_unknown_artist(context_artist)

    if not context:
        result = predict_bll(store, user_id, ref_time, k, d)
        result.context_artist = context_artist
        result.algorithm = 'ACT_ua'
        return result

    h = store.history(user_id)
    base = special.softmax(store.bll_scores(user_id, ref_time, d))
    associative = w_c * index.block(context, h.genre_ids).sum(axis=0)
    activation = special.softmax(base + associative)
    scores = dict(zip(h.genre_ids.tolist(), activation.tolist()))
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k),
                          context_artist=context_artist, algorithm='ACT_ua')
