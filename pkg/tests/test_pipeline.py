#!/usr/bin/env python3
"""
Pipeline and Command Line Tests

Runs the subcommands end to end through main.main() on small corpora and
checks run directory contents, exit codes, reproducibility, configuration
handling and the text report.
"""

import contextlib
import io
import json
import shutil
import sys
import os
import tempfile
import unittest
from pathlib import Path

import pandas as pd

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import main as cli
from src.config import Config, GROUP_NAMES
from src.errors import ConfigError, DataError
from src.logger import setup_logging
from src.reports import (
    SIGNIFICANCE_COLUMNS, read_decay_fit, read_group, read_json, read_predictions, read_scores, read_table,
    render_report,
)

T0 = 1_500_000_000


def run_cli(*argv):
    """Run the command line with stdout captured; returns (exit code, stdout)"""
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = cli.main([str(a) for a in argv])
    return code, out.getvalue()


def run_files(root):
    """Relative path -> bytes for every artifact except the manifest and logs"""
    root = Path(root)
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob('*'))
        if p.is_file() and p.name != 'manifest.json' and 'logs' not in p.relative_to(root).parts
    }


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp(prefix='genre_memory_cli_'))

    def tearDown(self):
        # release the rotating file handlers before removing their directory
        setup_logging(log_to_console=False)
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def synthesize(self, users_per_group=4, events_per_user=40):
        code, _ = run_cli('synthesize', self.temp_dir / 'corpus',
                          '--users-per-group', users_per_group, '--events-per-user', events_per_user)
        self.assertEqual(code, 0)
        return self.temp_dir / 'corpus' / 'config.json'

    def edit_config(self, path, section, **values):
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        data[section].update(values)
        Path(path).write_text(json.dumps(data), encoding='utf-8')

    def write_corpus(self, offsets, split_fraction):
        """Three users, each replaying their own artist at ``T0 + offset``; one user per group"""
        lines = [f"user-{u}\tartist-{u}\t\ttrack\t{T0 + offset}\n" for u in range(3) for offset in offsets]
        (self.temp_dir / 'events.tsv').write_text(''.join(lines), encoding='utf-8')
        tags = [f"artist-{u}\tgenre {u}\t1.0\n" for u in range(3)]
        (self.temp_dir / 'tags.tsv').write_text(''.join(tags), encoding='utf-8')

        self.config = self.temp_dir / 'config.json'
        config = Config()
        config.update_from_dict({
            'paths': {'events': str(self.temp_dir / 'events.tsv'), 'tags': str(self.temp_dir / 'tags.tsv'),
                      'out_dir': str(self.temp_dir / 'out')},
            'ingest': {'min_le': 1, 'max_le': 100, 'group_size': 1},
            'evaluation': {'split_fraction': split_fraction},
        })
        config.paths.profiles = None
        config.paths.allowed_genres = None
        config.save(self.config)
        for command in ('ingest', 'split-groups'):
            self.assertEqual(run_cli('--config', self.config, command)[0], 0)


class TestFullRun(CliTestCase):
    """Test every stage on a synthetic corpus"""

    def test_all_stages(self):
        config = self.synthesize()
        out = self.temp_dir / 'run'
        for command in ('ingest', 'split-groups', 'fit-decay', 'evaluate'):
            code, stdout = run_cli('--config', config, '--out', out, command)
            self.assertEqual(code, 0, command)
            self.assertIn('✅', stdout)

        code, report = run_cli('--config', config, '--out', out, 'report')
        self.assertEqual(code, 0)
        for text in ('F1@5', 'MRR@10', 'MAP@10', 'nDCG@10', 'ACT_ua', 'CF_i', 'HighMS'):
            self.assertIn(text, report)
        self.assertEqual((out / 'report.txt').read_text(encoding='utf-8'), report)

        for name in GROUP_NAMES:
            group = read_group(out / 'groups' / f'{name}.json')
            self.assertEqual(len(group.user_ids), 4)
            self.assertEqual(group.decay_d, read_decay_fit(out / 'fits' / f'{name}.json').d)
            target = out / 'evaluation' / name
            for artifact in ('metrics.csv', 'curves.csv', 'significance.csv', 'predictions.jsonl',
                             'user_similarity.csv'):
                self.assertTrue((target / artifact).exists(), f"{name}/{artifact}")

        scores = read_scores(out / 'groups' / 'mainstreaminess.csv')
        self.assertEqual(len(scores), 12)
        self.assertTrue(all(0 <= s <= 1 for s in scores.values()))
        low = [scores[u] for u in read_group(out / 'groups' / 'LowMS.json').user_ids]
        high = [scores[u] for u in read_group(out / 'groups' / 'HighMS.json').user_ids]
        self.assertLessEqual(max(low), min(high))

        manifest = read_json(out / 'manifest.json')
        self.assertEqual(set(manifest['stages']), {'ingest', 'split_groups', 'evaluate'})
        self.assertEqual(set(manifest['decay']), set(GROUP_NAMES))
        self.assertEqual(set(manifest['inputs']), {'events', 'tags', 'profiles', 'allowed_genres'})
        self.assertEqual(manifest['stages']['ingest']['users_after_filter'], 12)
        self.assertEqual(manifest['stages']['evaluate']['LowMS']['test_events'], 4 * 2)

        predictions = read_predictions(out / 'evaluation' / 'LowMS' / 'predictions.jsonl')
        self.assertEqual(len(predictions), 7 * manifest['stages']['evaluate']['LowMS']['test_cases'])
        self.assertTrue(all(len(p['items']) <= 10 for p in predictions))

    def test_reruns_are_byte_identical(self):
        """Worker count and output directory never change an artifact"""
        config = self.synthesize()
        runs = []
        for out, workers in ((self.temp_dir / 'one', 1), (self.temp_dir / 'many', 4)):
            for command in ('ingest', 'split-groups', 'fit-decay', 'evaluate', 'report'):
                code, _ = run_cli('--config', config, '--out', out, '--workers', workers, command)
                self.assertEqual(code, 0, command)
            runs.append(out)

        first, second = run_files(runs[0]), run_files(runs[1])
        self.assertEqual(sorted(first), sorted(second))
        for name in first:
            self.assertEqual(first[name], second[name], name)

        manifests = [read_json(out / 'manifest.json') for out in runs]
        for key in ('stages', 'decay', 'inputs'):
            self.assertEqual(manifests[0][key], manifests[1][key])

    def test_algorithm_subset(self):
        config = self.synthesize()
        out = self.temp_dir / 'run'
        for command in ('ingest', 'split-groups'):
            self.assertEqual(run_cli('--config', config, '--out', out, command)[0], 0)
        code, _ = run_cli('--config', config, '--out', out, 'evaluate', '--group', 'MedMS',
                          '--algorithms', 'TOP,POP_u,ORACLE')
        self.assertEqual(code, 0)
        metrics = pd.read_csv(out / 'evaluation' / 'MedMS' / 'metrics.csv')
        self.assertEqual(list(dict.fromkeys(metrics['algorithm'])), ['TOP', 'POP_u', 'ORACLE'])
        oracle = metrics[(metrics['algorithm'] == 'ORACLE') & (metrics['metric'] == 'MRR')]
        self.assertEqual(float(oracle['value'].iloc[0]), 1.0)
        self.assertFalse((out / 'evaluation' / 'LowMS').exists())


class TestExitCodes(CliTestCase):
    """Test the error to exit code mapping"""

    def test_empty_events_file(self):
        config = self.synthesize()
        (self.temp_dir / 'corpus' / 'events.tsv').write_bytes(b'')
        self.assertEqual(run_cli('--config', config, 'ingest')[0], DataError.exit_code)

    def test_too_few_users_for_groups(self):
        config = self.synthesize()
        self.assertEqual(run_cli('--config', config, 'ingest')[0], 0)
        self.edit_config(config, 'ingest', group_size=5)
        self.assertEqual(run_cli('--config', config, 'split-groups')[0], 2)

    def test_stage_out_of_order(self):
        config = self.synthesize()
        self.assertEqual(run_cli('--config', config, 'split-groups')[0], 2)
        self.assertEqual(run_cli('--config', config, 'report')[0], 2)

    def test_unknown_algorithm(self):
        config = self.synthesize()
        self.assertEqual(run_cli('--config', config, 'evaluate', '--algorithms', 'TOP,SVD')[0], 1)

    def test_invalid_config(self):
        path = self.temp_dir / 'broken.json'
        path.write_text('{"ingest": {"min_le": ', encoding='utf-8')
        self.assertEqual(run_cli('--config', path, 'ingest')[0], 1)
        path.write_text('{"ingest": {"min_events": 3}}', encoding='utf-8')
        self.assertEqual(run_cli('--config', path, 'ingest')[0], 1)

    def test_override_needs_group(self):
        config = self.synthesize()
        self.assertEqual(run_cli('--config', config, 'fit-decay', '--d-override', '0.5')[0], 1)

    def test_usage_error(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as raised:
                cli.main(['evaluate', '--group', 'NoMS'])
        self.assertEqual(raised.exception.code, 1)


class TestDecayStage(CliTestCase):
    """Test the degenerate fit path and the manual override"""

    def setUp(self):
        super().setUp()
        # every relistening gap is exactly one minute
        self.write_corpus([60 * i for i in range(4)], 0.25)

    def test_equal_gaps_are_degenerate(self):
        self.assertEqual(run_cli('--config', self.config, 'fit-decay')[0], 3)

    def test_override_then_evaluate(self):
        out = self.temp_dir / 'out'
        code, _ = run_cli('--config', self.config, 'fit-decay', '--group', 'LowMS', '--d-override', '0.5')
        self.assertEqual(code, 0)
        fit = read_decay_fit(out / 'fits' / 'LowMS.json')
        self.assertEqual((fit.d, fit.provenance), (0.5, 'override'))
        self.assertEqual(read_group(out / 'groups' / 'LowMS.json').decay_d, 0.5)
        self.assertEqual(read_json(out / 'manifest.json')['decay']['LowMS'], {'d': 0.5, 'provenance': 'override'})

        code, _ = run_cli('--config', self.config, 'evaluate', '--group', 'LowMS', '--algorithms', 'BLL_u,ACT_ua')
        self.assertEqual(code, 0)
        significance = read_table(out / 'evaluation' / 'LowMS' / 'significance.csv', SIGNIFICANCE_COLUMNS)
        self.assertTrue(significance['t'].isna().all())
        self.assertFalse((out / 'evaluation' / 'LowMS' / 'user_similarity.csv').exists())

    def test_memory_models_need_decay(self):
        code, _ = run_cli('--config', self.config, 'evaluate', '--group', 'MedMS', '--algorithms', 'BLL_u')
        self.assertEqual(code, 2)


class TestDecayFitEvents(CliTestCase):
    """Test which events the decay fit sees"""

    def setUp(self):
        super().setUp()
        # one-minute gaps, then a long gap into the held-out last event
        self.write_corpus([0, 60, 120, 180, 1000], 0.2)

    def test_held_out_events_are_not_fitted(self):
        self.assertEqual(run_cli('--config', self.config, 'fit-decay')[0], 3)

    def test_all_events_when_configured(self):
        self.edit_config(self.config, 'model', decay_fit_events='all')
        code, _ = run_cli('--config', self.config, 'fit-decay', '--group', 'HighMS')
        self.assertEqual(code, 0)
        fit = read_decay_fit(self.temp_dir / 'out' / 'fits' / 'HighMS.json')
        self.assertEqual((fit.point_count, fit.provenance), (2, 'fit'))
        self.assertGreater(fit.d, 0)

    def test_unknown_event_selection(self):
        self.edit_config(self.config, 'model', decay_fit_events='test')
        self.assertEqual(run_cli('--config', self.config, 'fit-decay')[0], 1)


class TestConfig(unittest.TestCase):
    """Test configuration loading and validation"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp(prefix='genre_memory_config_'))

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_defaults(self):
        config = Config()
        self.assertTrue(config.validate())
        self.assertEqual((config.ingest.min_le, config.ingest.max_le), (6000, 12000))
        self.assertEqual(config.evaluation.split_fraction, 0.01)
        self.assertEqual(config.evaluation.alpha, 0.001)
        self.assertEqual(config.model.attentional_weight, 1.0)
        self.assertEqual(config.model.decay_fit_events, 'train')

    def test_missing_file_uses_defaults(self):
        config = Config(self.temp_dir / 'absent.json')
        self.assertEqual(config.to_dict(), Config().to_dict())

    def test_save_and_load(self):
        config = Config()
        config.update_from_dict({'model': {'d_override': {'HighMS': 1.1}}, 'evaluation': {'workers': None}})
        path = config.save(self.temp_dir / 'run.json')
        loaded = Config(path)
        self.assertEqual(loaded.model.d_override, {'HighMS': 1.1})
        self.assertEqual(loaded.evaluation.workers, 1)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            Config().update_from_dict({'model': {'decay': 0.5}})
        with self.assertRaises(ConfigError):
            Config().update_from_dict({'plots': {}})

    def test_validation_lists_problems(self):
        config = Config()
        config.evaluation.split_fraction = 1.0
        config.model.d_override = {'TopMS': 0.5}
        config.model.decay_reference_grid = [10.0, 5.0, 20.0]
        with self.assertRaises(ConfigError) as raised:
            config.validate()
        message = str(raised.exception)
        for fragment in ('split_fraction', 'TopMS', 'decay_reference_grid'):
            self.assertIn(fragment, message)


class TestReport(unittest.TestCase):
    """Test the text report table"""

    def _metrics(self):
        rows = []
        for algorithm, base in (('TOP', 0.1), ('BLL_u', 0.4), ('ACT_ua', 0.5)):
            for metric, k in (('F1', 5), ('MRR', 10), ('MAP', 10), ('nDCG', 10)):
                rows.append(('LowMS', algorithm, metric, k, base, 100))
        return pd.DataFrame(rows, columns=['group', 'algorithm', 'metric', 'k', 'value', 'n'])

    def _significance(self, significant):
        rows = []
        for label in ('F1@5', 'MRR@10', 'MAP@10', 'nDCG@10'):
            for a, b in (('TOP', 'BLL_u'), ('TOP', 'ACT_ua'), ('BLL_u', 'ACT_ua')):
                rows.append(('LowMS', label, a, b, 3.0, 1e-5 if significant else 0.2, significant))
        return pd.DataFrame(rows, columns=SIGNIFICANCE_COLUMNS)

    def test_layout(self):
        text = render_report(self._metrics())
        lines = text.splitlines()
        self.assertIn('LowMS', lines[0])
        self.assertIn('nDCG@10', lines[1])
        self.assertLess(text.index('TOP'), text.index('BLL_u'))
        self.assertLess(text.index('BLL_u'), text.index('ACT_ua'))
        self.assertIn('0.500', text)

    def test_best_marked_only_when_significant(self):
        self.assertEqual(render_report(self._metrics(), self._significance(True)).count('0.500***'), 4)
        self.assertNotIn('***', render_report(self._metrics(), self._significance(False)))

    def test_nothing_to_report(self):
        empty = self._metrics().iloc[0:0]
        with self.assertRaises(DataError):
            render_report(empty)


if __name__ == '__main__':
    unittest.main(verbosity=2)
