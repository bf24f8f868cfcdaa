#!/usr/bin/env python3
"""
Genre Memory Model - Main Application Entry Point

Command line pipeline that models listeners' music-genre preferences with
a human memory activation equation and evaluates it against collaborative
filtering and popularity baselines on listening logs.

Author: growmation21
"""

import sys
import argparse
import json
from pathlib import Path

# Add the project directory to Python path for imports
PROJECT_DIR = Path(__file__).parent.absolute()
sys.path.insert(0, str(PROJECT_DIR))

# Import our modules after path setup
from src import __version__
from src.config import ALGORITHMS, DEBUG_ALGORITHMS, GROUP_NAMES, load_config
from src.errors import ConfigError, GenreMemoryError
from src.logger import setup_logger
from src.pipeline import (
    cmd_evaluate, cmd_fit_decay, cmd_ingest, cmd_report, cmd_split_groups, cmd_synthesize,
)
from src.runtime import default_workers


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the configuration error code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser():
    """Build the command line parser"""
    parser = _Parser(
        prog='genre-memory',
        description='Genre Memory Model - genre preference prediction and offline evaluation',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py --config run.json ingest
  python main.py --config run.json split-groups
  python main.py --config run.json fit-decay --group LowMS
  python main.py --config run.json --workers 4 evaluate --algorithms TOP,BLL_u,ACT_ua
  python main.py --config run.json report
  python main.py synthesize fixtures/synthetic
        """
    )

    parser.add_argument(
        '--config',
        type=Path,
        help='Path to a JSON configuration file'
    )

    parser.add_argument(
        '--out',
        type=str,
        help='Run output directory (overrides paths.out_dir)'
    )

    parser.add_argument(
        '--workers',
        type=int,
        help=f'Worker threads (default: config value, 0 = physical cores, here {default_workers()})'
    )

    parser.add_argument(
        '--seed',
        type=int,
        help='Seed for randomized debug predictors and synthetic corpora'
    )

    parser.add_argument(
        '--strict',
        action='store_true',
        default=None,
        help='Abort on the first malformed input line'
    )

    parser.add_argument(
        '--debug',
        action='store_true',
        help='Enable debug logging'
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'Genre Memory Model v{__version__}'
    )

    commands = parser.add_subparsers(dest='command', metavar='command', required=True,
                                     parser_class=_Parser)

    commands.add_parser('ingest', help='Parse inputs, filter users, persist the normalized store')
    commands.add_parser('split-groups', help='Score mainstreaminess and write the three group manifests')

    fit = commands.add_parser('fit-decay', help='Fit the decay exponent d per group')
    fit.add_argument('--group', choices=GROUP_NAMES, help='Only this group (default: all)')
    fit.add_argument('--d-override', type=float, help='Record this d instead of fitting (needs --group)')

    evaluate = commands.add_parser('evaluate', help='Evaluate algorithms on the temporal split')
    evaluate.add_argument('--group', choices=GROUP_NAMES, help='Only this group (default: all)')
    evaluate.add_argument(
        '--algorithms',
        type=lambda s: [a.strip() for a in s.split(',') if a.strip()],
        help=f"Comma separated subset of {','.join(ALGORITHMS + DEBUG_ALGORITHMS)}"
    )

    commands.add_parser('report', help='Print the metric table of all evaluated groups')

    synthesize = commands.add_parser('synthesize', help='Write a synthetic corpus and a matching config')
    synthesize.add_argument('target', type=Path, help='Directory to write the corpus into')
    synthesize.add_argument('--users-per-group', type=int, default=100, help='Users per group (default: 100)')
    synthesize.add_argument('--events-per-user', type=int, default=200, help='Events per user (default: 200)')

    return parser


def load_run_config(args):
    """Configuration file values with command line flags applied on top"""
    config = load_config(args.config)
    workers = args.workers
    if workers == 0:
        workers = default_workers()
    config.update_from_dict({
        'paths': {'out_dir': args.out},
        'ingest': {'strict': args.strict},
        'evaluation': {'workers': workers, 'seed': args.seed},
    })
    if args.command == 'fit-decay' and args.d_override is not None:
        if args.group is None:
            raise ConfigError("--d-override needs --group")
        config.model.d_override[args.group] = args.d_override
    config.validate()
    return config


def _print_counts(title, counts):
    print(f"✅ {title}")
    print(json.dumps(counts, indent=2, sort_keys=True, default=str))


def main(argv=None):
    """Main application function"""
    args = build_parser().parse_args(argv)

    try:
        config = load_run_config(args)
    except GenreMemoryError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code

    out_dir = None if args.command == 'synthesize' else config.paths.out_dir
    logger = setup_logger(config.logging, out_dir, args.debug)
    logger.info(f"🚀 Genre Memory Model v{__version__}: {args.command}")

    try:
        if args.command == 'ingest':
            _print_counts('Ingest complete', cmd_ingest(config))
        elif args.command == 'split-groups':
            _print_counts('Groups written', cmd_split_groups(config))
        elif args.command == 'fit-decay':
            fits = cmd_fit_decay(config, args.group)
            _print_counts('Decay fitted', {name: fit.to_dict() for name, fit in fits.items()})
        elif args.command == 'evaluate':
            _print_counts('Evaluation complete', cmd_evaluate(config, args.group, args.algorithms))
        elif args.command == 'report':
            print(cmd_report(config), end='')
        elif args.command == 'synthesize':
            _print_counts('Synthetic corpus written',
                          cmd_synthesize(config, args.target, args.users_per_group, args.events_per_user))
    except GenreMemoryError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("🛑 Interrupted by user")
        return 130

    logger.info(f"👋 {args.command} finished")
    return 0


def run():
    """Entry point function for console scripts"""
    try:
        exit_code = main()
    except Exception as e:
        print(f"❌ Fatal error: {e}", file=sys.stderr)
        exit_code = 1
    sys.exit(exit_code)


if __name__ == '__main__':
    run()
