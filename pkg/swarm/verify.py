"""Self-checks runnable from the command line.

Each check prints one JSON object {suite, check, passed, detail}; a final
object summarises the counts.
"""
import asyncio
import inspect
import json
import logging
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TextIO

import numpy as np

from .coordinator import Coordinator, replay_losses, run_status
from .core import Dynamic, DynamicsConfig, NeighborSnapshot, ParticleState, SnapshotEntry, pair_weight
from .dynamics import StepInput, dynamic2_step
from .models import build_model
from .models.base import LossModel, SequenceBatch
from .models.convnet import ConvNetClassifier, ConvNetDims, random_image_batch
from .models.gradcheck import finite_diff_gradient, max_relative_error, sample_indices
from .protocol import ProtocolError
from .worker import NetworkExchange, WorkerSettings, run_particle, run_swarm_inprocess

logger = logging.getLogger('SwarmVerify')

SUITES = ('gradients', 'dynamics', 'protocol', 'all')
GRADIENT_TOLERANCE = 1e-4

SEQUENCE_CHECK_DIMS = dict(frames=6, features=5, num_classes=3, d_model=16, num_heads=2, num_blocks=2,
                           ffn_dim=16, hidden_units=6, dense_units=12)


@dataclass
class CheckResult:
    suite: str
    check: str
    passed: bool
    detail: str = ''


def random_sequence_batch(frames: int, features: int, num_classes: int, size: int, seed: int) -> SequenceBatch:
    rng = np.random.default_rng(seed)
    return SequenceBatch(rng.standard_normal((size, frames, features)),
                         rng.integers(0, num_classes, size), num_classes)


def gradient_models() -> Dict[str, Callable[[int], LossModel]]:
    models: Dict[str, Callable[[int], LossModel]] = {
        'sphere': lambda seed: build_model('sphere', dimension=6),
        'rosenbrock': lambda seed: build_model('rosenbrock', dimension=6),
        'rastrigin': lambda seed: build_model('rastrigin', dimension=6),
        'convnet': lambda seed: ConvNetClassifier(ConvNetDims(), seed),
    }
    for arch in ('mlp', 'transformer', 'rnn', 'lstm', 'gru', 'bilstm'):
        models[arch] = (lambda a: lambda seed: build_model(a, seed=seed, **SEQUENCE_CHECK_DIMS))(arch)
    return models


def batch_for(model: LossModel, seed: int, size: int = 4) -> Optional[SequenceBatch]:
    if isinstance(model, ConvNetClassifier):
        return random_image_batch(model.dims, size, seed)
    if model.is_classifier:
        d = model.dims
        return random_sequence_batch(d.frames, d.features, d.num_classes, size, seed)
    return None


def gradient_error(model: LossModel, seed: int, samples: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients at a random point"""
    rng = np.random.default_rng(seed)
    params = rng.normal(0.0, 0.5, model.dimension)
    batch = batch_for(model, seed)
    analytic = model.gradient(params, batch)
    indices = None if samples <= 0 else sample_indices(model.dimension, samples, rng)
    numeric = finite_diff_gradient(model, params, batch, indices=indices)
    if indices is not None:
        analytic, numeric = analytic[indices], numeric[indices]
    return max_relative_error(analytic, numeric)


def _gradient_checks(draws: int, samples: int) -> List[Callable[[], str]]:
    checks = []
    for name, factory in gradient_models().items():
        def check(name=name, factory=factory) -> str:
            worst = max(gradient_error(factory(draw), draw, samples) for draw in range(draws))
            assert worst < GRADIENT_TOLERANCE, f"max relative error {worst:.3e}"
            return f"max relative error {worst:.3e} over {draws} draws"
        check.__name__ = f"gradient_{name}"
        checks.append(check)
    return checks


async def _sgd_degeneracy() -> str:
    model = build_model('sphere', dimension=100)
    settings = WorkerSettings(epochs=50, learning_rates=[0.01], base_seed=3)
    losses = {}
    with tempfile.TemporaryDirectory() as tmp:
        for dynamic in (Dynamic.DYNAMIC1, Dynamic.INDIVIDUAL):
            config = DynamicsConfig(weights=[[np.nan]], c1=0.0, c2=0.0, k=0, dynamic=dynamic, warmup_epochs=0)
            trajectories = await run_swarm_inprocess(model, None, None, settings, config, dynamic.value,
                                                     Path(tmp) / dynamic.value)
            losses[dynamic] = [r.loss for r in trajectories[0]]
    assert losses[Dynamic.DYNAMIC1] == losses[Dynamic.INDIVIDUAL], "dynamic 1 drifted from plain SGD"
    return "50 epochs identical"


async def _best_monotonicity(runs: int = 20) -> str:
    names = ('sphere', 'rastrigin')
    dynamics = (Dynamic.INDIVIDUAL, Dynamic.DYNAMIC1, Dynamic.DYNAMIC2)
    with tempfile.TemporaryDirectory() as tmp:
        for run in range(runs):
            model = build_model(names[run % 2], dimension=5)
            config = DynamicsConfig.for_swarm(4, dynamic=dynamics[run % 3])
            settings = WorkerSettings(epochs=8, base_seed=run)
            trajectories = await run_swarm_inprocess(model, None, None, settings, config, f"mono-{run}",
                                                     Path(tmp) / f"run{run}")
            for pid, trajectory in trajectories.items():
                best = [r.best_loss for r in trajectory]
                nbhd = [r.nbhd_best_loss for r in trajectory]
                assert all(b <= a for a, b in zip(best, best[1:])), f"run {run} particle {pid}: P loss rose"
                assert all(b <= a for a, b in zip(nbhd, nbhd[1:])), f"run {run} particle {pid}: P_g loss rose"
                assert all(g <= p for g, p in zip(nbhd, best)), f"run {run} particle {pid}: L(P_g) > L(P)"
    return f"{runs} runs monotone"


def _pair_weight_examples() -> str:
    assert pair_weight(0.0, 0.2, 1.0) == 0.2
    assert abs(pair_weight(1.0, 0.2, 1.0) - 0.1) < 1e-12
    assert abs(pair_weight(3.0, 0.2, 1.0) - 0.05) < 1e-12
    assert abs(pair_weight(3.0, 10.0, 2.0) - 0.625) < 1e-12
    return "f(0)=M, f(1)=M/2, f(3)=M/4, f(3; beta=2)=M/16"


def _dynamic2_fixed_point() -> str:
    x = np.array([0.5, -1.0, 2.0])
    entries = tuple(SnapshotEntry(pid, x.copy(), np.zeros(3), 1.0, x.copy(), 1.0, 0.01) for pid in range(3))
    snapshot = NeighborSnapshot(0, entries)
    state = ParticleState(0, x.copy(), np.zeros(3), x.copy(), 1.0, x.copy(), 1.0, 0.01)
    config = DynamicsConfig.for_swarm(3, dynamic=Dynamic.DYNAMIC2)
    out = dynamic2_step(StepInput(state, snapshot, config, np.zeros(3), frozenset({0, 1, 2}),
                                  np.random.default_rng(0)))
    assert np.array_equal(out.new_position, x), "consensus point moved"
    return "consensus with zero gradients is a fixed point"


async def _network_equivalence() -> str:
    model = build_model('sphere', dimension=5)
    config = DynamicsConfig.for_swarm(2, dynamic=Dynamic.DYNAMIC1)
    settings = WorkerSettings(epochs=5, base_seed=11)
    with tempfile.TemporaryDirectory() as tmp:
        local = await run_swarm_inprocess(model, None, None, settings, config, 'equiv', Path(tmp) / 'local')
        coordinator = Coordinator('equiv', 2, Path(tmp) / 'net' / 'run_log.jsonl', timeout=30.0)
        ready = asyncio.Event()
        server = asyncio.create_task(coordinator.serve('127.0.0.1', 0, ready))
        await ready.wait()
        address = f"{coordinator.address[0]}:{coordinator.address[1]}"
        remote = await asyncio.gather(*(
            run_particle(model, None, None, settings, config, NetworkExchange(address, 'equiv'))
            for _ in range(2)
        ))
        assert await server == 'complete'
        local_log = replay_losses(Path(tmp) / 'local' / 'run_log.jsonl')
        remote_log = replay_losses(Path(tmp) / 'net' / 'run_log.jsonl')
    remote_by_id = {t[0].particle_id: t for t in remote}
    for pid, trajectory in local.items():
        a = [r.loss for r in trajectory]
        b = [r.loss for r in remote_by_id[pid]]
        assert np.allclose(a, b, rtol=0.0, atol=1e-9), f"particle {pid} losses differ"
    assert local_log == remote_log, "run logs replay differently"
    return "networked and in-process losses agree"


async def _fault_injection() -> str:
    with tempfile.TemporaryDirectory() as tmp:
        log_path = Path(tmp) / 'run_log.jsonl'
        coordinator = Coordinator('fault', 2, log_path, timeout=0.5)
        ready = asyncio.Event()
        server = asyncio.create_task(coordinator.serve('127.0.0.1', 0, ready))
        await ready.wait()
        address = f"{coordinator.address[0]}:{coordinator.address[1]}"

        survivor = NetworkExchange(address, 'fault')
        casualty = NetworkExchange(address, 'fault')
        first = await survivor.register()
        second = await casualty.register()
        await casualty.close()
        entry = SnapshotEntry(first, np.zeros(2), np.zeros(2), 0.0, np.zeros(2), 0.0, 0.1)
        await survivor.publish(first, 0, entry)
        try:
            await survivor.snapshot(first, 0)
        except ProtocolError as e:
            detail = e.reason
        else:
            raise AssertionError("snapshot released without particle %d" % second)
        finally:
            await survivor.close()
        assert await server == 'failed'
        assert run_status(log_path) == 'failed'
        assert 0 not in coordinator.released_epochs()
    return f"timeout reported: {detail}"


def _suite_checks(suite: str, draws: int, samples: int) -> List[Callable[[], Any]]:
    if suite == 'gradients':
        return _gradient_checks(draws, samples)
    if suite == 'dynamics':
        return [_sgd_degeneracy, _best_monotonicity, _pair_weight_examples, _dynamic2_fixed_point]
    if suite == 'protocol':
        return [_network_equivalence, _fault_injection]
    raise ValueError(f"unknown suite {suite!r}, choose from {SUITES}")


async def run_suites(suite: str = 'all', draws: int = 10, samples: int = 200,
                     stream: Optional[TextIO] = None) -> List[CheckResult]:
    """Run the selected suites and print one JSON line per check"""
    stream = stream or sys.stdout
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}, choose from {SUITES}")
    suites = SUITES[:-1] if suite == 'all' else (suite,)
    results = []
    for name in suites:
        for check in _suite_checks(name, draws, samples):
            label = check.__name__.lstrip('_')
            try:
                outcome = check()
                if inspect.isawaitable(outcome):
                    outcome = await outcome
                result = CheckResult(name, label, True, str(outcome))
            except AssertionError as e:
                result = CheckResult(name, label, False, str(e) or 'assertion failed')
            except Exception as e:
                logger.error(f"Check {label} crashed: {e}", exc_info=True)
                result = CheckResult(name, label, False, f"{type(e).__name__}: {e}")
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, f"{name}/{label}: {'pass' if result.passed else 'FAIL'} {result.detail}")
            print(json.dumps(asdict(result)), file=stream)
            results.append(result)
    passed = sum(r.passed for r in results)
    print(json.dumps({'suite': 'summary', 'passed': passed, 'failed': len(results) - passed,
                      'ok': passed == len(results)}), file=stream)
    return results
