#!/usr/bin/env python3
"""
Social Navigation Lab
Command-line interface: maps, episodes, batch simulation, evaluation, rendering and training
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from sn_config import ConfigError, ConfigManager, RunSettings, SocialNavConfig, SocialNavError, setup_logging
from sn_lab import SocialNavLab

logger = logging.getLogger("socnav")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# CLI flag -> (config section, key); a None section is a top-level key.
FLAG_KEYS = {
    'seed': (None, 'seed'),
    'jobs': (None, 'jobs'),
    'log_level': ('logging_settings', 'log_level'),
    'log_file': ('logging_settings', 'log_file'),
    'dt': ('simulation', 'dt'),
    'v_max': ('simulation', 'v_max'),
    'max_steps': ('simulation', 'max_steps'),
    'clearance': ('simulation', 'clearance'),
    'n_pedestrians': ('generation', 'n_pedestrians'),
    'tasks': ('policy', 'tasks'),
    'learning_rate': ('training', 'learning_rate'),
    'n_updates': ('training', 'n_updates'),
    'map': ('run', 'map'),
    'maps': ('run', 'maps'),
    'map_id': ('run', 'map_id'),
    'n': ('run', 'n_episodes'),
    'episodes': ('run', 'episodes'),
    'policy': ('run', 'policy'),
    'deterministic': ('run', 'deterministic'),
    'runs': ('run', 'runs'),
    'label': ('run', 'label'),
    'log': ('run', 'log'),
    'no_encounters': ('run', 'no_encounters'),
    'checkpoint': ('run', 'checkpoint'),
    'training_log': ('run', 'training_log'),
    'resume': ('run', 'resume'),
    'out': ('run', 'out'),
}


class UsageError(ConfigError):
    """Bad command line"""


class LabArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = LabArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file')
    common.add_argument('--seed', type=int, help='Base random seed')
    common.add_argument('--jobs', type=int, help='Worker processes for episode-level parallelism')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'])
    common.add_argument('--log-file', help='Rotating log file')
    common.add_argument('--dt', type=float, help='Simulation timestep (s)')
    common.add_argument('--v-max', type=float, help='Agent top speed (m/s)')
    common.add_argument('--max-steps', type=int, help='Episode timeout in steps')
    common.add_argument('--clearance', type=float, help='Planning clearance (m)')
    common.add_argument('--n-pedestrians', type=int, help='Pedestrians per generated episode')
    common.add_argument('--tasks', nargs='*', choices=['risk', 'compass'], help='Auxiliary social tasks')
    common.add_argument('--learning-rate', type=float)
    common.add_argument('--n-updates', type=int)
    return common


def build_parser() -> argparse.ArgumentParser:
    """Subcommand inputs are optional here; they may also come from the run section of the config"""
    common = _common_options()
    parser = LabArgumentParser(prog='socnav', description='Social Navigation Lab')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('make-map', parents=[common], help='Generate a procedural occupancy map')
    p.add_argument('--out', help='Output map file')
    p.add_argument('--map-id')

    p = sub.add_parser('generate', parents=[common], help='Generate an episode file for a map')
    p.add_argument('--map')
    p.add_argument('--n', type=int, help='Number of episodes')
    p.add_argument('--out', help='Output episode file')

    p = sub.add_parser('simulate', parents=[common], help='Run a policy over an episode file')
    p.add_argument('--map')
    p.add_argument('--episodes')
    p.add_argument('--policy', help="greedy | social | stationary | checkpoint path (default greedy)")
    p.add_argument('--out', help='Directory for trajectory logs')
    p.add_argument('--deterministic', action='store_true', default=None,
                   help='Use the mean action of a learned policy')

    p = sub.add_parser('evaluate', parents=[common], help='Navigation metrics and encounter report')
    p.add_argument('--runs', nargs='+', help='Log directories, one per run')
    p.add_argument('--out', help='Report directory')
    p.add_argument('--map', help='Map override for logs')
    p.add_argument('--label', help='Run label in the results database')

    p = sub.add_parser('render', parents=[common], help='Render one trajectory log to SVG')
    p.add_argument('--log')
    p.add_argument('--out')
    p.add_argument('--map', help='Map override for the log')
    p.add_argument('--no-encounters', action='store_true', default=None)

    p = sub.add_parser('train', parents=[common], help='Train the multi-belief policy')
    p.add_argument('--map', dest='maps', nargs='+')
    p.add_argument('--checkpoint')
    p.add_argument('--training-log', help='CSV of per-update losses')
    p.add_argument('--resume', action='store_true', default=None, help='Continue from the checkpoint')
    return parser


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for flag, (section, key) in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            overrides[key] = value
        else:
            overrides.setdefault(section, {})[key] = value
    return overrides


def load_config(args: argparse.Namespace, environ: Optional[Dict[str, str]] = None) -> SocialNavConfig:
    """defaults < JSON file < SOCNAV_ environment < command-line flags"""
    manager = ConfigManager(args.config)
    manager.apply_environment_overrides(environ)
    overrides = flag_overrides(args)
    if overrides:
        manager.update_config(overrides)
    return manager.require_valid()


def _require(run: RunSettings, command: str, **needed: str) -> None:
    missing = [flag for key, flag in needed.items() if getattr(run, key) in (None, [])]
    if missing:
        raise UsageError(f"{command} needs {', '.join(missing)} (flag or run section of the configuration)")


def run_command(args: argparse.Namespace, config: SocialNavConfig) -> Dict[str, Any]:
    lab = SocialNavLab(config)
    run = config.run
    if args.command == 'make-map':
        _require(run, args.command, out='--out')
        return lab.make_map(config.seed, run.out, run.map_id)
    if args.command == 'generate':
        _require(run, args.command, map='--map', n_episodes='--n', out='--out')
        return lab.generate(run.map, run.n_episodes, config.seed, run.out)
    if args.command == 'simulate':
        _require(run, args.command, map='--map', episodes='--episodes', out='--out')
        return lab.simulate(run.map, run.episodes, run.policy, run.out, config.jobs, run.deterministic)
    if args.command == 'evaluate':
        _require(run, args.command, runs='--runs', out='--out')
        result = lab.evaluate(run.runs, run.out, run.map, run.label)
        print('\n'.join(result['table']))
        for run_row in result['database']:
            print(f"{run_row['label']}: {run_row['n_episodes']} episodes, success {run_row['success_pct']:.2f}%, "
                  f"SPL {run_row['spl']:.3f}, {sum(c['count'] for c in run_row['classes'].values())} encounters")
        return {'paths': result['paths'], 'episodes': result['summary']['n_episodes'],
                'encounters': result['report'].total, 'runs': result['database']}
    if args.command == 'render':
        _require(run, args.command, log='--log', out='--out')
        return {'svg': lab.render(run.log, run.out, run.map, not run.no_encounters)}
    if args.command == 'train':
        _require(run, args.command, maps='--map', checkpoint='--checkpoint')
        return lab.train(run.maps, run.checkpoint, run.training_log, config.training.n_updates, run.resume)
    raise UsageError(f"Unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None, environ: Optional[Dict[str, str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args, environ)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    setup_logging(config)
    try:
        result = run_command(args, config)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (SocialNavError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    logger.info(f"{args.command} finished: {json.dumps(result, default=str, sort_keys=True)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
