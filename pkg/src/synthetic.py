"""
Synthetic Listening Corpus

Deterministic corpus generator for fixtures and sanity runs. Each user
has a mainstream weight: with that probability a play goes to a popular
artist drawn from a Zipf-like popularity curve, otherwise to one of the
user's own niche artists. Low, medium and high weights give corpora whose
mainstreaminess groups separate cleanly.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .ingestion import ListeningEvent, serialize_events
from .logger import get_logger

logger = get_logger(__name__)

START_TIME = 1_400_000_000
MAX_GAP_SECONDS = 30 * 24 * 3600
MAINSTREAM_WEIGHTS = (0.1, 0.5, 0.9)
COUNTRIES = ('AT', 'DE', 'US', 'UK', 'BR', 'JP')


@dataclass
class SyntheticCorpus:
    events: List[ListeningEvent]
    tags: List[Tuple[str, str, float]]
    allowed_genres: List[str]
    profiles: List[Tuple[str, str, str, str, str]] = field(default_factory=list)
    mainstream_weight: Dict[str, float] = field(default_factory=dict)

    def write(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """Write events, tags, profiles and the allowed-genre list as input files"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            'events': directory / 'events.tsv',
            'tags': directory / 'tags.tsv',
            'profiles': directory / 'profiles.tsv',
            'allowed_genres': directory / 'allowed_genres.txt',
        }
        with open(paths['events'], 'wb') as f:
            serialize_events(self.events, f)
        with open(paths['tags'], 'w', encoding='utf-8', newline='\n') as f:
            for artist, tag, weight in self.tags:
                f.write(f"{artist}\t{tag}\t{weight:.2f}\n")
        with open(paths['profiles'], 'w', encoding='utf-8', newline='\n') as f:
            f.write("user_id\tcountry\tage\tgender\tmainstreaminess\n")
            for row in self.profiles:
                f.write('\t'.join(row) + '\n')
        with open(paths['allowed_genres'], 'w', encoding='utf-8', newline='\n') as f:
            f.write("# synthetic genre vocabulary\n")
            for genre in self.allowed_genres:
                f.write(genre + '\n')
        return paths


def generate_corpus(users_per_group: int = 100, events_per_user: int = 200, seed: int = 42,
                    popular_artists: int = 300, mainstream_genres: int = 60,
                    niche_artists: int = 5, niche_genres: int = 3,
                    weights: Sequence[float] = MAINSTREAM_WEIGHTS,
                    zipf_exponent: float = 0.8) -> SyntheticCorpus:
    """
    Build a corpus of ``len(weights) * users_per_group`` users.

    Popular artists carry two mainstream genres each. Every user owns
    ``niche_artists`` artists nobody else plays, each tagged with two of the
    user's ``niche_genres`` private genres. Inter-play gaps are heavy tailed.
    """
    if niche_genres < 2:
        raise ValueError("niche_genres must be at least 2")
    rng = np.random.default_rng(seed)

    mainstream = [f"mainstream {i:03d}" for i in range(mainstream_genres)]
    tags: List[Tuple[str, str, float]] = []
    popular = [f"artist-p{i:04d}" for i in range(popular_artists)]
    for artist in popular:
        first, second = rng.choice(mainstream_genres, size=2, replace=False)
        tags.append((artist, mainstream[first], 1.0))
        tags.append((artist, mainstream[second], float(rng.uniform(0.5, 1.0))))
        # filtered out: below the relative frequency threshold, not a genre
        tags.append((artist, mainstream[(first + 1) % mainstream_genres], 0.3))
        tags.append((artist, 'seen live', 0.9))

    popularity = 1.0 / np.arange(1, popular_artists + 1) ** zipf_exponent
    popularity /= popularity.sum()

    allowed = list(mainstream)
    events: List[ListeningEvent] = []
    profiles: List[Tuple[str, str, str, str, str]] = []
    weight_of: Dict[str, float] = {}

    n_users = users_per_group * len(weights)
    for u in range(n_users):
        user = f"user-{u:05d}"
        w = weights[u % len(weights)]
        weight_of[user] = w

        own_genres = [f"niche {u:05d}-{j}" for j in range(niche_genres)]
        allowed.extend(own_genres)
        own_artists = [f"artist-n{u:05d}-{j}" for j in range(niche_artists)]
        for j, artist in enumerate(own_artists):
            tags.append((artist, own_genres[j % niche_genres], 1.0))
            tags.append((artist, own_genres[(j + 1) % niche_genres], float(rng.uniform(0.5, 1.0))))

        is_mainstream = rng.random(events_per_user) < w
        popular_picks = rng.choice(popular_artists, size=events_per_user, p=popularity)
        niche_picks = rng.integers(0, niche_artists, size=events_per_user)
        gaps = np.minimum(np.ceil(60 * (1 + rng.pareto(0.8, size=events_per_user))), MAX_GAP_SECONDS)
        times = START_TIME + u * 7 + np.cumsum(gaps.astype(np.int64))

        for i in range(events_per_user):
            artist = popular[popular_picks[i]] if is_mainstream[i] else own_artists[niche_picks[i]]
            events.append(ListeningEvent(user, artist, f"album-{artist}", f"track-{artist}-{i % 7}",
                                         int(times[i])))

        profiles.append((
            user,
            COUNTRIES[u % len(COUNTRIES)],
            str(int(rng.integers(15, 60))),
            ('m', 'f', 'n')[u % 3],
            '-',
        ))

    logger.info(f"🧪 Synthetic corpus: {n_users} users, {len(events)} events, {len(allowed)} genres")
    return SyntheticCorpus(events=events, tags=tags, allowed_genres=sorted(allowed), profiles=profiles,
                           mainstream_weight=weight_of)
