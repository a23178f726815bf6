import argparse
from genmix.genmix_manager import GenMixManager
from genmix.internal.errors import GenMixError, NumericalError
from genmix.internal.utils import logger
from os import environ
import asyncio
import sys

COMMANDS = ['pretrain', 'train_defense', 'evaluate', 'attack_bench', 'summarize']

# flags whose config key depends on the command being run
_PER_COMMAND = {
    'epochs': {'pretrain': 'pretrain.epochs', 'train_defense': 'defense.train_epochs'},
    'batch': {'pretrain': 'pretrain.batch_size', 'train_defense': 'defense.batch_size',
              'evaluate': 'evaluate.batch_size', 'attack_bench': 'bench.batch'},
    'lr': {'pretrain': 'pretrain.lr', 'train_defense': 'defense.lr'},
}

_FIXED = {
    'mnist_dir': 'mnist_dir',
    'out': 'out_dir',
    'seed': 'seed',
    'threads': 'threads',
    'init_epochs': 'defense.init_epochs',
    'generators': 'defense.generators',
    'attack': 'defense.attacks',
    'preset': 'defense.preset',
    'mode': 'defense.mode',
    'faster_init': 'defense.faster_init',
    'perturb': 'defense.perturb_fraction',
    'large_generator': 'defense.large_generator',
    'cache_attacks': 'defense.cache_attacks',
    'selection': 'defense.selection',
    'emit_grids': 'evaluate.emit_grids',
    'setting': 'evaluate.setting',
}


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description='genmix cli')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config',
                        default=environ.get("GENMIX_CONFIG"),
                        help='TOML file merged over the packaged defaults')
    parser.add_argument('--mnist-dir', help='Directory holding the four MNIST IDX files')
    parser.add_argument('--out', help='Output directory (default: $GENMIX_OUT or genmix_out)')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--init-epochs', type=int)
    parser.add_argument('--batch', type=int)
    parser.add_argument('--lr', type=float)
    parser.add_argument('--generators', type=int)
    parser.add_argument('--attack',
                        action='append',
                        help='KIND:EPS[:key=val,...], repeat for several attacks')
    parser.add_argument('--preset', help='Named attack roster used when no --attack is given')
    parser.add_argument('--mode', help='joint | separate')
    parser.add_argument('--selection', help='batch | example')
    parser.add_argument('--faster-init', action='store_true', default=None)
    parser.add_argument('--perturb', type=float, help='Fraction of weights perturbed per copy')
    parser.add_argument('--large-generator', action='store_true', default=None)
    parser.add_argument('--cache-attacks', action='store_true', default=None)
    parser.add_argument('--threads', type=int)
    parser.add_argument('--emit-grids', help='Directory for sample PGM tiles')
    parser.add_argument('--setting', help='Name written to the summary CSV')
    parser.add_argument('--classifier', help='Classifier checkpoint path')
    parser.add_argument('--ensemble', help='Ensemble directory')
    parser.add_argument('--summaries', nargs='+', help='Summary CSVs for summarize')

    return parser.parse_args(argv)


def build_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for flag, path in _FIXED.items():
        overrides[path] = getattr(args, flag, None)
    for flag, paths in _PER_COMMAND.items():
        if args.command in paths:
            overrides[paths[args.command]] = getattr(args, flag, None)
    return {k: v for k, v in overrides.items() if v is not None}


async def main_async(args=None):
    if not isinstance(args, argparse.Namespace):
        args = parse_args(args)
    manager = GenMixManager(args.config, build_overrides(args))
    return await manager.execute_command(args.command,
                                         classifier=args.classifier,
                                         ensemble=args.ensemble,
                                         summaries=args.summaries)


def main(args=None) -> int:
    try:
        asyncio.run(main_async(args))
    except NumericalError as exc:
        logger.error(f"numerical failure: {exc}")
        return 2
    except (GenMixError, FileNotFoundError, ValueError) as exc:
        logger.error(str(exc))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
