"""
Listening Log Ingestion

Parses listening-event logs, user profiles and artist genre tags, filters
users by activity, scores their mainstreaminess and splits them into the
LowMS / MedMS / HighMS groups.
"""

import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import DataError
from .logger import get_logger

logger = get_logger(__name__)

EVENT_COLUMNS = 5
PROFILE_COLUMNS = 5
TAG_COLUMNS = 3
MISSING = '-'


@dataclass(frozen=True, slots=True)
class ListeningEvent:
    """One play of a track by a user"""
    user_id: str
    artist_id: str
    album_id: Optional[str]
    track_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.artist_id:
            raise ValueError("user_id and artist_id must be non-empty")
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive: {self.timestamp}")


class Gender(str, Enum):
    MALE = 'male'
    FEMALE = 'female'
    UNKNOWN = 'unknown'


_GENDER_CODES = {
    'm': Gender.MALE, 'male': Gender.MALE,
    'f': Gender.FEMALE, 'female': Gender.FEMALE,
    'n': Gender.UNKNOWN, 'unknown': Gender.UNKNOWN,
}


@dataclass(frozen=True)
class UserProfile:
    """Demographic pass-through fields of one user"""
    user_id: str
    country: Optional[str] = None
    age: Optional[int] = None
    gender: Optional[Gender] = None
    mainstreaminess: Optional[float] = None

    def __post_init__(self):
        if self.age is not None and self.age < 0:
            raise ValueError(f"age must be non-negative: {self.age}")
        if self.mainstreaminess is not None and not (0.0 <= self.mainstreaminess <= 1.0):
            raise ValueError(f"mainstreaminess must be in [0, 1]: {self.mainstreaminess}")


@dataclass
class ParsedEvents:
    """Result of parsing an events file"""
    events: List[ListeningEvent]
    skipped: int = 0
    lines: int = 0


class GenreCatalog:
    """
    Artist to genre assignments after tag filtering.

    Genre ids index the alphabetically sorted genre names, so ascending
    genre id and ascending genre name give the same order.
    """

    def __init__(self, assignments: Mapping[str, Mapping[str, float]]):
        """
        Args:
            assignments: artist_id -> {genre name: relative frequency}
        """
        names = sorted({g for genres in assignments.values() for g in genres})
        self.genre_ids: Tuple[str, ...] = tuple(names)
        self.genre_index: Dict[str, int] = {name: i for i, name in enumerate(names)}
        self._assignments: Dict[str, Tuple[Tuple[int, float], ...]] = {}
        for artist, genres in assignments.items():
            pairs = sorted((self.genre_index[g], float(w)) for g, w in genres.items())
            self._assignments[artist] = tuple(pairs)
        self._genre_sets: Dict[str, Tuple[int, ...]] = {
            artist: tuple(gid for gid, _ in pairs) for artist, pairs in self._assignments.items()
        }
        self._artists_by_genre: Optional[Dict[int, FrozenSet[str]]] = None

    def __len__(self) -> int:
        return len(self.genre_ids)

    @property
    def artists(self) -> List[str]:
        return sorted(self._assignments)

    def has_artist(self, artist_id: str) -> bool:
        return artist_id in self._assignments

    def assignments(self, artist_id: str) -> Tuple[Tuple[int, float], ...]:
        """(genre_id, relative_frequency) pairs of an artist, empty if unknown"""
        return self._assignments.get(artist_id, ())

    def genres_of(self, artist_id: str) -> Tuple[int, ...]:
        """Genre ids assigned to an artist in ascending order, empty if unknown"""
        return self._genre_sets.get(artist_id, ())

    def name(self, genre_id: int) -> str:
        return self.genre_ids[genre_id]

    def artists_by_genre(self) -> Dict[int, FrozenSet[str]]:
        """Inverted index: genre id -> artists carrying it"""
        if self._artists_by_genre is None:
            index = defaultdict(set)
            for artist, genres in self._genre_sets.items():
                for gid in genres:
                    index[gid].add(artist)
            self._artists_by_genre = {gid: frozenset(artists) for gid, artists in index.items()}
        return self._artists_by_genre

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {
            artist: {self.genre_ids[gid]: w for gid, w in pairs}
            for artist, pairs in sorted(self._assignments.items())
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float]]) -> 'GenreCatalog':
        return cls(data)


@dataclass
class GroupStats:
    """Descriptive statistics of a user group"""
    users: int
    artists: int
    genres: int
    listening_events: int
    genre_assignments: int
    ga_per_le: float
    genres_per_user: float
    avg_mainstreaminess: Optional[float]


@dataclass
class UserGroup:
    """A named set of users with its decay exponent"""
    name: str
    user_ids: Tuple[str, ...]
    decay_d: Optional[float] = None
    stats: Optional[GroupStats] = None

    def __post_init__(self):
        self.user_ids = tuple(self.user_ids)
        if not self.user_ids:
            raise ValueError(f"group {self.name} has no users")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise ValueError(f"group {self.name} contains duplicate users")
        if self.decay_d is not None and not self.decay_d > 0:
            raise ValueError(f"decay_d must be positive: {self.decay_d}")


class _LineError(Exception):
    pass


def _split_lines(source: BinaryIO) -> List[bytes]:
    try:
        data = source.read()
    except OSError as e:
        raise DataError(f"Unreadable source: {e}") from e
    if not data:
        return []
    lines = data.split(b'\n')
    if lines[-1] == b'':
        lines.pop()
    return lines


def _decode(raw: bytes, expected_columns: int) -> List[str]:
    try:
        text = raw.rstrip(b'\r').decode('utf-8')
    except UnicodeDecodeError as e:
        raise _LineError(f"invalid UTF-8: {e.reason}") from e
    fields = text.split('\t')
    if len(fields) != expected_columns:
        raise _LineError(f"expected {expected_columns} columns, found {len(fields)}")
    return fields


def _parse_event_line(raw: bytes) -> ListeningEvent:
    user_id, artist_id, album_id, track_id, timestamp = _decode(raw, EVENT_COLUMNS)
    if not (timestamp.isascii() and timestamp.isdigit()):
        raise _LineError(f"non-numeric timestamp {timestamp!r}")
    try:
        return ListeningEvent(user_id, artist_id, album_id or None, track_id, int(timestamp))
    except ValueError as e:
        raise _LineError(str(e)) from e


def _parse_chunk(lines: Sequence[bytes], first_lineno: int, strict: bool):
    events = []
    skipped = 0
    first_error = None
    for offset, raw in enumerate(lines):
        try:
            events.append(_parse_event_line(raw))
        except _LineError as e:
            skipped += 1
            if first_error is None:
                first_error = (first_lineno + offset, str(e))
            if strict:
                break
    return events, skipped, first_error


def parse_events(source: BinaryIO, strict: bool = False, workers: int = 1) -> ParsedEvents:
    """
    Parse a tab-separated listening event log.

    Args:
        source: Binary stream with lines ``user, artist, album, track, timestamp``
        strict: Abort at the first malformed line instead of skipping it
        workers: Number of line-range shards parsed concurrently

    Returns:
        ParsedEvents: events in file order plus skip and line counts

    Raises:
        DataError: unreadable source, or a malformed line in strict mode
    """
    lines = _split_lines(source)
    if not lines:
        return ParsedEvents(events=[], skipped=0, lines=0)

    shards = max(1, min(workers, len(lines)))
    size = math.ceil(len(lines) / shards)
    bounds = [(start, lines[start:start + size]) for start in range(0, len(lines), size)]

    if len(bounds) == 1:
        results = [_parse_chunk(bounds[0][1], 1, strict)]
    else:
        with ThreadPoolExecutor(max_workers=shards) as pool:
            results = list(pool.map(lambda b: _parse_chunk(b[1], b[0] + 1, strict), bounds))

    errors = [r[2] for r in results if r[2] is not None]
    if strict and errors:
        lineno, message = min(errors)
        raise DataError(f"Malformed event at line {lineno}: {message}")

    events: List[ListeningEvent] = []
    skipped = 0
    for chunk_events, chunk_skipped, _ in results:
        events.extend(chunk_events)
        skipped += chunk_skipped

    if skipped:
        lineno, message = min(errors)
        logger.warning(f"⚠️ Skipped {skipped} malformed event line(s); first at line {lineno}: {message}")
    return ParsedEvents(events=events, skipped=skipped, lines=len(lines))


def serialize_events(events: Iterable[ListeningEvent], sink: BinaryIO) -> int:
    """Write events in the input TSV layout; returns the number written"""
    count = 0
    for e in events:
        sink.write(f"{e.user_id}\t{e.artist_id}\t{e.album_id or ''}\t{e.track_id}\t{e.timestamp}\n"
                   .encode('utf-8'))
        count += 1
    return count


def _parse_optional(value: str, convert):
    return None if value == MISSING or value == '' else convert(value)


def parse_profiles(source: BinaryIO, strict: bool = False) -> Dict[str, UserProfile]:
    """
    Parse the profiles TSV ``user_id, country, age, gender, mainstreaminess``.

    ``-`` marks a missing value; a first line starting with ``user_id`` is
    treated as a header.
    """
    profiles: Dict[str, UserProfile] = {}
    skipped = 0
    for lineno, raw in enumerate(_split_lines(source), start=1):
        try:
            user_id, country, age, gender, score = _decode(raw, PROFILE_COLUMNS)
            if lineno == 1 and user_id == 'user_id':
                continue
            if not user_id:
                raise _LineError("empty user_id")
            if country not in (MISSING, '') and len(country) != 2:
                raise _LineError(f"country must be a 2-letter code: {country!r}")
            gender_value = _parse_optional(gender.lower(), lambda g: _GENDER_CODES[g])
            profiles[user_id] = UserProfile(
                user_id=user_id,
                country=_parse_optional(country, str.upper),
                age=_parse_optional(age, int),
                gender=gender_value,
                mainstreaminess=_parse_optional(score, float),
            )
        except (_LineError, ValueError, KeyError) as e:
            if strict:
                raise DataError(f"Malformed profile at line {lineno}: {e}") from e
            skipped += 1
    if skipped:
        logger.warning(f"⚠️ Skipped {skipped} malformed profile line(s)")
    return profiles


def _normalize_genre(name: str) -> str:
    return ' '.join(name.split()).casefold()


def load_allowed_genres(source: BinaryIO) -> FrozenSet[str]:
    """Read one genre name per line; blank lines and ``#`` comments are ignored"""
    genres = set()
    for raw in _split_lines(source):
        try:
            name = raw.decode('utf-8').strip()
        except UnicodeDecodeError as e:
            raise DataError(f"Allowed-genre list is not valid UTF-8: {e.reason}") from e
        if name and not name.startswith('#'):
            genres.add(_normalize_genre(name))
    return frozenset(genres)


def build_genre_catalog(tag_source: BinaryIO, min_rel_freq: float = 0.5,
                        allowed_genres: Optional[Iterable[str]] = None,
                        strict: bool = False) -> GenreCatalog:
    """
    Build the artist genre catalog from weighted tags.

    A tag is kept when it names an allowed genre and its relative frequency
    is at least ``min_rel_freq``. Artists whose tags are all removed stay in
    the catalog with an empty genre set.

    Args:
        tag_source: Binary stream of ``artist_id, tag, relative_frequency`` lines
        min_rel_freq: Inclusive lower bound on the relative frequency
        allowed_genres: Genre vocabulary (None: every tag is allowed)
        strict: Abort on the first malformed line

    Returns:
        GenreCatalog
    """
    if not (0 <= min_rel_freq <= 1):
        raise ValueError(f"min_rel_freq must be in [0, 1]: {min_rel_freq}")
    allowed = None if allowed_genres is None else {_normalize_genre(g) for g in allowed_genres}

    assignments: Dict[str, Dict[str, float]] = {}
    skipped = 0
    for lineno, raw in enumerate(_split_lines(tag_source), start=1):
        try:
            artist_id, tag, weight = _decode(raw, TAG_COLUMNS)
            if not artist_id:
                raise _LineError("empty artist_id")
            try:
                rel_freq = float(weight)
            except ValueError as e:
                raise _LineError(f"non-numeric relative frequency {weight!r}") from e
            if not (0.0 <= rel_freq <= 1.0):
                raise _LineError(f"relative frequency outside [0, 1]: {rel_freq}")
        except _LineError as e:
            if strict:
                raise DataError(f"Malformed tag at line {lineno}: {e}") from e
            skipped += 1
            continue

        genres = assignments.setdefault(artist_id, {})
        genre = _normalize_genre(tag)
        if rel_freq < min_rel_freq or (allowed is not None and genre not in allowed):
            continue
        genres[genre] = max(rel_freq, genres.get(genre, 0.0))

    if skipped:
        logger.warning(f"⚠️ Skipped {skipped} malformed tag line(s)")

    catalog = GenreCatalog(assignments)
    mapped = sum(1 for a in assignments if catalog.genres_of(a))
    logger.info(f"🎼 Genre catalog: {len(catalog)} genres, {mapped}/{len(assignments)} artists mapped")
    return catalog


def events_by_user(events: Iterable[ListeningEvent]) -> Dict[str, List[ListeningEvent]]:
    """Group events per user, sorted by timestamp (stable on file order)"""
    grouped: Dict[str, List[ListeningEvent]] = defaultdict(list)
    for e in events:
        grouped[e.user_id].append(e)
    for user_events in grouped.values():
        user_events.sort(key=lambda e: e.timestamp)
    return dict(grouped)


def filter_users(events: Iterable[ListeningEvent], min_le: int = 6000, max_le: int = 12000) -> set:
    """
    Users whose number of listening events lies in [min_le, max_le].

    Both bounds are inclusive.
    """
    if min_le > max_le:
        raise ValueError(f"min_le {min_le} exceeds max_le {max_le}")
    counts = Counter(e.user_id for e in events)
    return {user for user, n in counts.items() if min_le <= n <= max_le}


def compute_mainstreaminess(events: Iterable[ListeningEvent],
                            profiles: Optional[Mapping[str, UserProfile]] = None,
                            mode: str = 'cosine') -> Dict[str, float]:
    """
    Score how closely each user's artist play counts follow the population.

    The score is the cosine similarity between the user's artist play-count
    vector and the summed vector of all users. With ``mode='prefer-supplied'``
    a mainstreaminess value present in the user's profile is returned as is.

    Integer arithmetic keeps the result independent of event order.
    """
    if mode not in ('cosine', 'prefer-supplied'):
        raise ValueError(f"Unknown mainstreaminess mode: {mode}")

    per_user: Dict[str, Counter] = defaultdict(Counter)
    for e in events:
        per_user[e.user_id][e.artist_id] += 1
    if not per_user:
        raise DataError("Cannot compute mainstreaminess without events")

    global_counts: Counter = Counter()
    for counts in per_user.values():
        global_counts.update(counts)
    global_norm2 = sum(c * c for c in global_counts.values())

    scores: Dict[str, float] = {}
    for user, counts in per_user.items():
        if mode == 'prefer-supplied' and profiles is not None:
            profile = profiles.get(user)
            if profile is not None and profile.mainstreaminess is not None:
                scores[user] = profile.mainstreaminess
                continue
        dot = sum(c * global_counts[a] for a, c in counts.items())
        user_norm2 = sum(c * c for c in counts.values())
        scores[user] = min(1.0, dot / math.sqrt(user_norm2 * global_norm2))
    return scores


def split_groups(scores: Mapping[str, float], group_size: int = 1000
                 ) -> Tuple[UserGroup, UserGroup, UserGroup]:
    """
    Split users into low, medium and high mainstreaminess groups.

    Users are ranked by (score, user_id). The low group takes the lowest
    ``group_size`` ranks, the high group the highest, and the medium group
    the ``group_size`` ranks centred on the median rank.

    Raises:
        DataError: fewer than ``3 * group_size`` scored users
    """
    required = 3 * group_size
    if len(scores) < required:
        raise DataError(f"Group split requires {required} scored users, {len(scores)} available")

    ranked = [user for user, _ in sorted(scores.items(), key=lambda item: (item[1], item[0]))]
    n = len(ranked)
    start = n // 2 - group_size // 2
    return (
        UserGroup('LowMS', ranked[:group_size]),
        UserGroup('MedMS', ranked[start:start + group_size]),
        UserGroup('HighMS', ranked[n - group_size:]),
    )


def group_stats(user_ids: Iterable[str], events: Iterable[ListeningEvent], catalog: GenreCatalog,
                scores: Optional[Mapping[str, float]] = None) -> GroupStats:
    """Descriptive statistics of a group over its listening events"""
    members = set(user_ids)
    artists = set()
    genres = set()
    user_genres: Dict[str, set] = {u: set() for u in members}
    le_count = 0
    ga_count = 0
    for e in events:
        if e.user_id not in members:
            continue
        le_count += 1
        artists.add(e.artist_id)
        artist_genres = catalog.genres_of(e.artist_id)
        ga_count += len(artist_genres)
        genres.update(artist_genres)
        user_genres[e.user_id].update(artist_genres)

    avg_ms = None
    if scores:
        values = [scores[u] for u in sorted(members) if u in scores]
        avg_ms = math.fsum(values) / len(values) if values else None

    return GroupStats(
        users=len(members),
        artists=len(artists),
        genres=len(genres),
        listening_events=le_count,
        genre_assignments=ga_count,
        ga_per_le=ga_count / le_count if le_count else 0.0,
        genres_per_user=math.fsum(len(g) for g in user_genres.values()) / len(members) if members else 0.0,
        avg_mainstreaminess=avg_ms,
    )
