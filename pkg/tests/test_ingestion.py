#!/usr/bin/env python3
"""
Ingestion Tests

Parsing of listening events, profiles and genre tags, user filtering,
mainstreaminess scoring and the three-way group split.
"""

import io
import math
import random
import sys
import os
import unittest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.errors import DataError
from src.ingestion import (
    Gender, ListeningEvent, UserProfile, build_genre_catalog, compute_mainstreaminess,
    events_by_user, filter_users, group_stats, load_allowed_genres, parse_events,
    parse_profiles, serialize_events, split_groups,
)


def _stream(text):
    return io.BytesIO(text.encode('utf-8'))


def _events(user, count, artist='a1', start=1_400_000_000):
    return [ListeningEvent(user, artist, None, 't', start + i) for i in range(count)]


class TestParseEvents(unittest.TestCase):
    """Test the listening event parser"""

    def test_direct_field_mapping(self):
        """A well formed line maps field by field"""
        parsed = parse_events(_stream("u1\ta9\tal2\ttr7\t1400000000\n"))
        self.assertEqual(parsed.events, [ListeningEvent('u1', 'a9', 'al2', 'tr7', 1400000000)])
        self.assertEqual(parsed.skipped, 0)
        self.assertEqual(parsed.lines, 1)

    def test_non_numeric_timestamp_is_skipped(self):
        """Lenient mode counts and skips a malformed line"""
        parsed = parse_events(_stream("u1\ta9\tal2\ttr7\tyesterday\nu1\ta9\tal2\ttr7\t1400000001\n"))
        self.assertEqual(len(parsed.events), 1)
        self.assertEqual(parsed.skipped, 1)

    def test_empty_input(self):
        """Empty input yields no events and no skips"""
        parsed = parse_events(_stream(""))
        self.assertEqual(parsed.events, [])
        self.assertEqual(parsed.skipped, 0)

    def test_strict_mode_names_line(self):
        """Strict mode aborts with the 1-based line number"""
        text = "u1\ta1\t\tt\t1400000000\nu1\ta1\t\tt\n"
        with self.assertRaises(DataError) as ctx:
            parse_events(_stream(text), strict=True)
        self.assertIn("line 2", str(ctx.exception))

    def test_invalid_utf8_is_malformed(self):
        """Invalid byte sequences are a parse error"""
        data = b"u1\ta\xff\t\tt\t1400000000\n"
        self.assertEqual(parse_events(io.BytesIO(data)).skipped, 1)
        with self.assertRaises(DataError):
            parse_events(io.BytesIO(data), strict=True)

    def test_shards_preserve_file_order(self):
        """Sharded parsing returns the same events in file order"""
        lines = [f"u{i % 3}\ta{i % 7}\tal\tt{i}\t{1_400_000_000 + (i * 37) % 101}" for i in range(250)]
        lines[17] = "broken line"
        lines[180] = "u1\ta1\tal\tt\t-5"
        text = '\n'.join(lines) + '\n'
        single = parse_events(_stream(text), workers=1)
        for workers in (2, 3, 8):
            sharded = parse_events(_stream(text), workers=workers)
            self.assertEqual(sharded.events, single.events)
            self.assertEqual(sharded.skipped, 2)

    def test_serialize_round_trip(self):
        """Serializing parsed events reproduces the input bytes"""
        text = "u1\ta9\tal2\ttr7\t1400000000\nu2\ta1\t\ttr1\t1400000005\n"
        parsed = parse_events(_stream(text))
        sink = io.BytesIO()
        self.assertEqual(serialize_events(parsed.events, sink), 2)
        self.assertEqual(sink.getvalue().decode('utf-8'), text)


class TestProfilesAndCatalog(unittest.TestCase):
    """Test profiles, allowed genres and the genre catalog"""

    def test_profiles_with_missing_values(self):
        """Dashes are missing values and a header line is skipped"""
        text = ("user_id\tcountry\tage\tgender\tmainstreaminess\n"
                "u1\tat\t25\tm\t0.4\n"
                "u2\t-\t-\tf\t-\n")
        profiles = parse_profiles(_stream(text))
        self.assertEqual(profiles['u1'], UserProfile('u1', 'AT', 25, Gender.MALE, 0.4))
        self.assertEqual(profiles['u2'], UserProfile('u2', None, None, Gender.FEMALE, None))

    def test_profile_score_out_of_range(self):
        """A mainstreaminess outside [0, 1] is rejected"""
        text = "u1\tAT\t25\tm\t1.5\n"
        self.assertEqual(parse_profiles(_stream(text)), {})
        with self.assertRaises(DataError):
            parse_profiles(_stream(text), strict=True)

    def test_metallica_tags(self):
        """Low weight tags and non-genre tags are removed"""
        tags = ("metallica\tthrash metal\t1.0\n"
                "metallica\tmetal\t0.91\n"
                "metallica\theavy metal\t0.74\n"
                "metallica\thard rock\t0.41\n"
                "metallica\trock\t0.34\n"
                "metallica\tseen live\t0.3\n")
        allowed = load_allowed_genres(_stream("# genres\nThrash Metal\nmetal\nheavy metal\nhard rock\nrock\n\n"))
        catalog = build_genre_catalog(_stream(tags), 0.5, allowed)
        names = sorted(catalog.name(g) for g in catalog.genres_of('metallica'))
        self.assertEqual(names, ['heavy metal', 'metal', 'thrash metal'])
        for _, weight in catalog.assignments('metallica'):
            self.assertGreaterEqual(weight, 0.5)

    def test_all_tags_below_threshold(self):
        """An artist whose tags are all filtered stays with an empty genre set"""
        catalog = build_genre_catalog(_stream("a1\trock\t0.2\na1\tpop\t0.49\n"))
        self.assertTrue(catalog.has_artist('a1'))
        self.assertEqual(catalog.genres_of('a1'), ())

    def test_zero_threshold_keeps_everything(self):
        """min_rel_freq 0 without a vocabulary keeps every tag"""
        catalog = build_genre_catalog(_stream("a1\trock\t0.0\na1\tpop\t0.2\na2\tjazz\t1\n"), min_rel_freq=0)
        self.assertEqual(len(catalog.genres_of('a1')), 2)
        self.assertEqual(len(catalog), 3)

    def test_relative_frequency_out_of_range(self):
        """Weights outside [0, 1] are rejected leniently or abort strictly"""
        tags = "a1\trock\t1.2\na1\tpop\t0.8\n"
        catalog = build_genre_catalog(_stream(tags))
        self.assertEqual([catalog.name(g) for g in catalog.genres_of('a1')], ['pop'])
        with self.assertRaises(DataError):
            build_genre_catalog(_stream(tags), strict=True)

    def test_genre_ids_follow_name_order(self):
        """Genre ids are assigned in alphabetical order and duplicates collapse"""
        catalog = build_genre_catalog(_stream("a1\tzydeco\t0.9\na1\tambient\t0.8\na2\tambient\t0.6\na1\tambient\t0.7\n"))
        self.assertEqual(catalog.genre_ids, ('ambient', 'zydeco'))
        self.assertEqual(catalog.assignments('a1'), ((0, 0.8), (1, 0.9)))
        self.assertEqual(catalog.artists_by_genre()[0], frozenset({'a1', 'a2'}))


class TestUsersAndGroups(unittest.TestCase):
    """Test filtering, mainstreaminess and group construction"""

    def test_filter_bounds_are_inclusive(self):
        """6,000 and 12,000 events are kept, 5,999 and 12,001 are not"""
        events = []
        for user, n in (('low', 5999), ('min', 6000), ('max', 12000), ('high', 12001)):
            events.extend(_events(user, n))
        self.assertEqual(filter_users(events), {'min', 'max'})

    def test_cosine_example(self):
        """Hand-computed cosine against the global play vector"""
        events = [
            ListeningEvent('u1', 'a', None, 't', 1), ListeningEvent('u1', 'a', None, 't', 2),
            ListeningEvent('u2', 'a', None, 't', 3), ListeningEvent('u2', 'b', None, 't', 4),
        ]
        scores = compute_mainstreaminess(events)
        self.assertAlmostEqual(scores['u1'], 3 / math.sqrt(10), places=12)
        self.assertAlmostEqual(scores['u2'], 4 / math.sqrt(2 * 10), places=12)

    def test_self_similarity_and_orthogonal_user(self):
        """A lone user scores 1.0; a user of unshared artists in a large corpus scores near 0"""
        self.assertEqual(compute_mainstreaminess(_events('u1', 5))['u1'], 1.0)
        events = _events('crowd', 1000, artist='hit') + _events('loner', 1, artist='obscure')
        scores = compute_mainstreaminess(events)
        self.assertLess(scores['loner'], 0.01)

    def test_permutation_invariant(self):
        """Event order does not change any score"""
        rng = random.Random(3)
        events = [ListeningEvent(f"u{rng.randrange(5)}", f"a{rng.randrange(9)}", None, 't', i + 1)
                  for i in range(300)]
        shuffled = list(events)
        rng.shuffle(shuffled)
        self.assertEqual(compute_mainstreaminess(events), compute_mainstreaminess(shuffled))

    def test_prefer_supplied_scores(self):
        """Supplied profile scores pass through unchanged"""
        events = _events('u1', 3) + _events('u2', 3, artist='b')
        profiles = {'u1': UserProfile('u1', mainstreaminess=0.379)}
        scores = compute_mainstreaminess(events, profiles, mode='prefer-supplied')
        self.assertEqual(scores['u1'], 0.379)
        self.assertAlmostEqual(scores['u2'], 1 / math.sqrt(2), places=12)

    def test_exact_partition(self):
        """Distinct scores split into consecutive rank blocks"""
        scores = {f"u{i:04d}": i / 3000 for i in range(3000)}
        low, med, high = split_groups(scores, 1000)
        self.assertEqual(low.user_ids, tuple(f"u{i:04d}" for i in range(1000)))
        self.assertEqual(med.user_ids, tuple(f"u{i:04d}" for i in range(1000, 2000)))
        self.assertEqual(high.user_ids, tuple(f"u{i:04d}" for i in range(2000, 3000)))

    def test_median_group_is_centred(self):
        """The medium group is centred on the median rank and groups are disjoint"""
        rng = random.Random(11)
        scores = {f"u{i:03d}": rng.random() for i in range(100)}
        low, med, high = split_groups(scores, 10)
        ranked = sorted(scores, key=lambda u: (scores[u], u))
        self.assertEqual(list(med.user_ids), ranked[45:55])
        self.assertFalse(set(low.user_ids) & set(med.user_ids))
        self.assertFalse(set(med.user_ids) & set(high.user_ids))
        self.assertLessEqual(max(scores[u] for u in low.user_ids), min(scores[u] for u in high.user_ids))

    def test_ties_broken_by_user_id(self):
        """Equal scores at a boundary order by ascending user id"""
        scores = {'b': 0.5, 'a': 0.5, 'c': 0.5, 'd': 0.1, 'e': 0.9, 'f': 0.9}
        low, med, high = split_groups(scores, 2)
        self.assertEqual(low.user_ids, ('d', 'a'))
        self.assertEqual(med.user_ids, ('b', 'c'))
        self.assertEqual(high.user_ids, ('e', 'f'))

    def test_too_few_users(self):
        """The error names the required and available counts"""
        scores = {f"u{i}": i / 25 for i in range(25)}
        with self.assertRaises(DataError) as ctx:
            split_groups(scores, 10)
        self.assertIn("30", str(ctx.exception))
        self.assertIn("25", str(ctx.exception))

    def test_group_stats(self):
        """Group statistics count events, assignments and genres per user"""
        catalog = build_genre_catalog(_stream("a1\trock\t1\na1\tpop\t1\na2\tjazz\t1\n"))
        events = [
            ListeningEvent('u1', 'a1', None, 't', 1), ListeningEvent('u1', 'a2', None, 't', 2),
            ListeningEvent('u2', 'a2', None, 't', 3), ListeningEvent('u3', 'a1', None, 't', 4),
        ]
        stats = group_stats(['u1', 'u2'], events, catalog, {'u1': 0.2, 'u2': 0.4, 'u3': 0.9})
        self.assertEqual(stats.users, 2)
        self.assertEqual(stats.artists, 2)
        self.assertEqual(stats.genres, 3)
        self.assertEqual(stats.listening_events, 3)
        self.assertEqual(stats.genre_assignments, 4)
        self.assertAlmostEqual(stats.ga_per_le, 4 / 3)
        self.assertAlmostEqual(stats.genres_per_user, 2.0)
        self.assertAlmostEqual(stats.avg_mainstreaminess, 0.3)

    def test_events_by_user_stable_sort(self):
        """Per-user events sort by timestamp keeping file order on ties"""
        events = [
            ListeningEvent('u1', 'b', None, 't', 5), ListeningEvent('u1', 'a', None, 't', 2),
            ListeningEvent('u1', 'c', None, 't', 5),
        ]
        self.assertEqual([e.artist_id for e in events_by_user(events)['u1']], ['a', 'b', 'c'])


if __name__ == '__main__':
    unittest.main(verbosity=2)
