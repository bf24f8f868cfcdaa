"""
Baseline Genre Predictors

The comparison algorithms: group-level mainstream ranking (TOP), user-based
and item-based collaborative filtering over genre vectors (CF_u, CF_i),
personal frequency (POP_u) and personal recency (TIME_u).
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import DataError
from .ingestion import GenreCatalog, ListeningEvent
from .logger import get_logger
from .memory import GenreHistoryStore, PredictionList, build_genre_history, top_k, rank_key

logger = get_logger(__name__)

DEFAULT_NEIGHBORS = 20
DEFAULT_TOP_ARTISTS = 20


@dataclass
class NeighborSet:
    """Most similar users or artists of a target, most similar first"""
    target: str
    neighbors: List[Tuple[str, float]]


def _nearest(target_index: int, ids: Sequence[str], similarities: np.ndarray, size: int) -> List[Tuple[str, float]]:
    # positive similarities only, the target excluded, ties by ascending id
    candidates = [
        (ids[i], float(similarities[i]))
        for i in np.flatnonzero(similarities > 0)
        if i != target_index
    ]
    candidates.sort(key=lambda item: (-rank_key(item[1]), item[0]))
    return candidates[:size]


class TrainingData:
    """
    Training split of one user group.

    Holds the genre history store, per-user genre count vectors
    (|GA_{g,u}|), per-user artist play counts and group genre totals
    (|GA_g|). Built once; every predictor only reads it.
    """

    def __init__(self, events: Iterable[ListeningEvent], catalog: GenreCatalog):
        events = list(events)
        self.catalog = catalog
        self.history: GenreHistoryStore = build_genre_history(events, catalog)

        self.artist_counts: Dict[str, Counter] = {}
        for e in events:
            self.artist_counts.setdefault(e.user_id, Counter())[e.artist_id] += 1
        self.users: List[str] = sorted(self.artist_counts)

        self.genre_counts: Dict[str, Dict[int, int]] = {}
        self.group_genre_totals: Counter = Counter()
        for user in self.history.users():
            h = self.history.history(user)
            counts = dict(zip(h.genre_ids.tolist(), h.counts.tolist()))
            self.genre_counts[user] = counts
            self.group_genre_totals.update(counts)

        self._user_similarity: Optional[np.ndarray] = None
        self._user_index: Dict[str, int] = {u: i for i, u in enumerate(self.users)}
        self._user_neighbors: Dict[Tuple[str, int], NeighborSet] = {}
        self._artist_model: Optional['ArtistSimilarity'] = None
        self._top_cache: Dict[int, List[Tuple[int, float]]] = {}

        logger.debug(f"Training data: {len(self.users)} users, {len(events)} events, "
                     f"{sum(self.group_genre_totals.values())} genre assignments")

    def user_similarity(self) -> np.ndarray:
        """Cosine similarity between the genre count vectors of all users"""
        if self._user_similarity is None:
            n_genres = len(self.catalog)
            matrix = np.zeros((len(self.users), n_genres), dtype=np.int64)
            for user, counts in self.genre_counts.items():
                row = self._user_index[user]
                for gid, c in counts.items():
                    matrix[row, gid] = c
            gram = matrix @ matrix.T
            norms = np.sqrt(np.diag(gram).astype(np.float64))
            denom = np.outer(norms, norms)
            with np.errstate(divide='ignore', invalid='ignore'):
                self._user_similarity = np.where(denom > 0, gram / np.where(denom > 0, denom, 1), 0.0)
        return self._user_similarity

    def user_neighbors(self, user_id: str, size: int = DEFAULT_NEIGHBORS) -> NeighborSet:
        key = (user_id, size)
        if key not in self._user_neighbors:
            index = self._user_index.get(user_id)
            if index is None:
                neighbors = []
            else:
                neighbors = _nearest(index, self.users, self.user_similarity()[index], size)
            self._user_neighbors[key] = NeighborSet(user_id, neighbors)
        return self._user_neighbors[key]

    def group_ranking(self, k: int) -> List[Tuple[int, float]]:
        """Top-k genres of the whole group by |GA_g|"""
        if k not in self._top_cache:
            self._top_cache[k] = top_k({g: float(c) for g, c in self.group_genre_totals.items()}, k)
        return list(self._top_cache[k])

    def artist_model(self) -> 'ArtistSimilarity':
        if self._artist_model is None:
            artists = sorted({a for counts in self.artist_counts.values() for a in counts})
            self._artist_model = ArtistSimilarity(self.catalog, artists)
        return self._artist_model


class ArtistSimilarity:
    """
    Cosine similarity between binary artist genre vectors.

    Neighbor lists are computed on demand and cached; the cache never
    changes a result.
    """

    def __init__(self, catalog: GenreCatalog, artists: Iterable[str]):
        self.catalog = catalog
        self.artists = [a for a in artists if catalog.genres_of(a)]
        self._index = {a: i for i, a in enumerate(self.artists)}
        rows, cols = [], []
        for i, artist in enumerate(self.artists):
            for gid in catalog.genres_of(artist):
                rows.append(i)
                cols.append(gid)
        self._incidence = sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int64), (rows, cols)),
            shape=(len(self.artists), len(catalog))
        )
        self._sizes = np.asarray(self._incidence.sum(axis=1)).ravel()
        self._cache: Dict[Tuple[str, int], NeighborSet] = {}

    def similar(self, artist_id: str, size: int = DEFAULT_NEIGHBORS) -> NeighborSet:
        key = (artist_id, size)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        index = self._index.get(artist_id)
        if index is None:
            result = NeighborSet(artist_id, [])
        else:
            shared = np.asarray((self._incidence @ self._incidence[index].T).todense()).ravel()
            cosine = shared / np.sqrt(self._sizes * self._sizes[index])
            result = NeighborSet(artist_id, _nearest(index, self.artists, cosine, size))
        self._cache[key] = result
        return result


def predict_top(training: TrainingData, k: int, user_id: str = '*') -> PredictionList:
    """
    The group's top-k genres by total genre assignments |GA_g|.

    Identical for every user of the group.
    """
    return PredictionList(user_id=user_id, k=k, items=training.group_ranking(k), algorithm='TOP')


def predict_cf_user(training: TrainingData, user_id: str, k: int, n: int = DEFAULT_NEIGHBORS) -> PredictionList:
    """
    User-based CF: sum over the n most similar users v of sim(u, v) * |GA_{g,v}|.

    Genres u already heard are not excluded. No positively similar
    neighbor gives an empty prediction.
    """
    scores: Dict[int, float] = {}
    for neighbor, similarity in training.user_neighbors(user_id, n).neighbors:
        for gid, count in training.genre_counts.get(neighbor, {}).items():
            scores[gid] = scores.get(gid, 0.0) + similarity * count
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k), algorithm='CF_u')


def top_artists(training: TrainingData, user_id: str, limit: int = DEFAULT_TOP_ARTISTS) -> List[str]:
    """The user's most played training artists, ties by ascending artist id"""
    counts = training.artist_counts.get(user_id, Counter())
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return [artist for artist, _ in ranked[:limit]]


def predict_cf_item(training: TrainingData, user_id: str, k: int,
                    top_artists_count: int = DEFAULT_TOP_ARTISTS, n: int = DEFAULT_NEIGHBORS) -> PredictionList:
    """
    Item-based CF over artist genre vectors.

    For each of the user's top artists a, every similar artist s contributes
    cos(G_a, G_s) to each genre it carries.
    """
    model = training.artist_model()
    scores: Dict[int, float] = {}
    for artist in top_artists(training, user_id, top_artists_count):
        for similar, similarity in model.similar(artist, n).neighbors:
            for gid in training.catalog.genres_of(similar):
                scores[gid] = scores.get(gid, 0.0) + similarity
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k), algorithm='CF_i')


def predict_pop(training: TrainingData, user_id: str, k: int) -> PredictionList:
    """
    The user's most frequently heard genres.

    Raises:
        DataError: cold user
    """
    h = training.history.history(user_id)
    scores = dict(zip(h.genre_ids.tolist(), h.counts.astype(np.float64).tolist()))
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k), algorithm='POP_u')


def predict_time(training: TrainingData, user_id: str, ref_time: int, k: int) -> PredictionList:
    """
    The user's most recently heard genres; the score is the last occurrence timestamp.

    Raises:
        DataError: cold user
    """
    h = training.history.history(user_id)
    scores = dict(zip(h.genre_ids.tolist(), h.last_times.astype(np.float64).tolist()))
    return PredictionList(user_id=user_id, k=k, items=top_k(scores, k), algorithm='TIME_u')


def predict_oracle(user_id: str, relevant: Iterable[int], k: int) -> PredictionList:
    """Debug predictor that returns the relevant genres"""
    items = [(gid, 1.0) for gid in sorted(relevant)[:k]]
    return PredictionList(user_id=user_id, k=k, items=items, algorithm='ORACLE')


def predict_random(training: TrainingData, user_id: str, k: int, rng: np.random.Generator) -> PredictionList:
    """Debug predictor: a random permutation of G_u"""
    genres = list(training.history.genres(user_id))
    if not genres:
        raise DataError(f"cold user: no genre history for {user_id!r}")
    order = rng.permutation(len(genres))[:k]
    items = [(genres[i], 1.0 / (rank + 1)) for rank, i in enumerate(order)]
    return PredictionList(user_id=user_id, k=k, items=items, algorithm='RANDOM')


def user_similarity_summary(training: TrainingData) -> Dict[str, float]:
    """
    Distribution of each user's mean cosine similarity to the other group members.

    Returns min, q1, median, q3, max and mean, the data behind a boxplot.
    """
    similarity = training.user_similarity()
    n = len(training.users)
    if n < 2:
        raise DataError("Pairwise user similarity needs at least 2 users")
    off_diagonal = similarity.sum(axis=1) - np.diag(similarity)
    per_user = off_diagonal / (n - 1)
    q = np.percentile(per_user, [0, 25, 50, 75, 100])
    return {
        'users': n,
        'min': float(q[0]),
        'q1': float(q[1]),
        'median': float(q[2]),
        'q3': float(q[3]),
        'max': float(q[4]),
        'mean': math.fsum(per_user.tolist()) / n,
    }
