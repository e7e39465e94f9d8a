from typing import Awaitable, List, Optional, Tuple, TypeVar
import argparse
import asyncio
import logging
import signal
import sys

from swarm.experiment import PLOT_METRICS, plot_emit, run_experiment
from swarm.protocol import ProtocolError
from swarm.settings import ConfigError, ExperimentConfig, Variant
from swarm.swarm import MODES, CollaborativeSwarm, SwarmConfig
from swarm.utils import constants
from swarm.utils.logging import setup_logging
from swarm.verify import SUITES, run_suites

logger = logging.getLogger('SwarmLauncher')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_VERIFY = 4

T = TypeVar('T')


class GracefulKiller:
    """Handle graceful shutdown on SIGINT and SIGTERM."""

    def __init__(self):
        self.kill_now = False
        self._previous = {
            signal.SIGINT: signal.signal(signal.SIGINT, self.exit_gracefully),
            signal.SIGTERM: signal.signal(signal.SIGTERM, self.exit_gracefully),
        }

    def exit_gracefully(self, signum, frame):
        logger.info(f"Received signal {signum}. Starting graceful shutdown...")
        self.kill_now = True

    def restore(self) -> None:
        for signum, handler in self._previous.items():
            signal.signal(signum, handler)


async def shutdown_handler(killer: GracefulKiller) -> None:
    while not killer.kill_now:
        await asyncio.sleep(0.5)


async def supervise(work: Awaitable[T], killer: GracefulKiller) -> T:
    """Run work until it finishes or a shutdown signal arrives"""
    task = asyncio.ensure_future(work)
    watcher = asyncio.create_task(shutdown_handler(killer))
    try:
        await asyncio.wait({task, watcher}, return_when=asyncio.FIRST_COMPLETED)
        if not task.done():
            logger.info("Cancelling the running job...")
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass
            raise KeyboardInterrupt
        return task.result()
    finally:
        watcher.cancel()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='launcher.py',
        description='Collaborative PSO + SGD training: experiments, verification and plots.',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='run the experiment grid, a coordinator or a worker')
    run.add_argument('--config', help='experiment JSON (env SWARM_CONFIG)')
    run.add_argument('--mode', choices=MODES, help='inprocess | coordinator | worker (env SWARM_MODE)')
    run.add_argument('--listen', help=f'coordinator address, default {constants.DEFAULT_LISTEN} (env SWARM_LISTEN)')
    run.add_argument('--connect', help='coordinator address for a worker (env SWARM_CONNECT)')
    run.add_argument('--seed', type=int, help='run a single seed instead of the configured list (env SWARM_SEED)')
    run.add_argument('--out', help='output directory (env SWARM_OUT)')
    run.add_argument('--timeout', type=float, help='barrier timeout in seconds (env SWARM_TIMEOUT)')
    run.add_argument('--model', help='model of a networked run, default the first configured one')
    run.add_argument('--dynamic', choices=constants.DYNAMIC_NAMES,
                     help='dynamic of a networked run, default the first configured one')
    run.add_argument('--variant', help='sweep point of a networked run, default the first one')

    verify = sub.add_parser('verify', help='run the built-in invariant checks')
    verify.add_argument('--suite', choices=SUITES, default='all')
    verify.add_argument('--draws', type=int, default=10, help='random draws per gradient check')
    verify.add_argument('--samples', type=int, default=200,
                        help='parameters checked per draw, 0 checks every parameter')

    plot = sub.add_parser('plot', help='emit per-epoch CSV series from trajectory logs')
    plot.add_argument('--logs', nargs='+', required=True, help='trajectory files or run directories')
    plot.add_argument('--out', required=True, help='CSV file to write')
    plot.add_argument('--metric', choices=PLOT_METRICS, default='loss')
    return parser


def _networked_cell(config: ExperimentConfig, args: argparse.Namespace) -> Tuple[Variant, str, str, int]:
    model = args.model or config.model.names[0]
    dynamic = args.dynamic or config.dynamics.dynamics[0]
    if model not in config.model.names:
        raise ConfigError('model.names', f"{model!r} is not a configured model")
    variants = {variant.label: variant for variant in config.variants()}
    label = args.variant if args.variant is not None else next(iter(variants))
    if label not in variants:
        raise ConfigError('sweep', f"{label!r} is not a sweep point, choose from {sorted(variants)}")
    return variants[label], model, dynamic, config.seeds[0]


async def run_command(args: argparse.Namespace, runtime: SwarmConfig, config: ExperimentConfig) -> int:
    if runtime.mode == 'inprocess':
        result = await run_experiment(CollaborativeSwarm(config, runtime), runtime.out_dir)
        logger.info(f"Summary written to {result.summary_path}")
        return EXIT_OK

    variant, model, dynamic, seed = _networked_cell(config, args)
    swarm = CollaborativeSwarm(variant.config, runtime)
    out_dir = runtime.out_dir / variant.label
    if runtime.mode == 'coordinator':
        status = await swarm.run_coordinator(model, dynamic, seed, out_dir)
        logger.info(f"Coordinator finished with status {status}")
        return EXIT_OK if status == 'complete' else EXIT_PROTOCOL

    await swarm.run_worker(model, dynamic, seed, out_dir)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        runtime = SwarmConfig().override(
            mode=getattr(args, 'mode', None), listen=getattr(args, 'listen', None),
            connect=getattr(args, 'connect', None), seed=getattr(args, 'seed', None),
            out_dir=getattr(args, 'out', None) if args.command == 'run' else None,
            timeout=getattr(args, 'timeout', None), config_path=getattr(args, 'config', None),
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG

    setup_logging(runtime.log_dir, runtime.log_level)

    if args.command == 'plot':
        try:
            plot_emit(args.logs, args.out, args.metric)
        except (FileNotFoundError, ValueError) as e:
            logger.error(f"Cannot emit plot series: {e}")
            return EXIT_CONFIG
        return EXIT_OK

    killer = GracefulKiller()
    try:
        if args.command == 'verify':
            results = asyncio.run(supervise(run_suites(args.suite, args.draws, args.samples), killer))
            return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY

        if runtime.config_path is None:
            print("error: no experiment config given (--config or SWARM_CONFIG)", file=sys.stderr)
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        config = ExperimentConfig.from_file(runtime.config_path)
        if runtime.seed is not None:
            config = config.with_seeds([runtime.seed])
        return asyncio.run(supervise(run_command(args, runtime, config), killer))
    except FileNotFoundError as e:
        logger.error(str(e))
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        logger.error(f"Invalid configuration at {e.key}: {e.message}")
        return EXIT_CONFIG
    except ProtocolError as e:
        logger.error(f"Protocol failure: {e.reason}")
        return EXIT_PROTOCOL
    except KeyboardInterrupt:
        logger.info("Interrupted, shutting down...")
        return EXIT_FAILURE
    except Exception as e:
        logger.critical(f"Fatal error occurred: {e}", exc_info=e)
        return EXIT_FAILURE
    finally:
        killer.restore()
        logger.info("Shutdown complete")


if __name__ == "__main__":
    sys.exit(main())
