import asyncio
import json
import os
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from swarm.coordinator import replay_losses, run_status
from swarm.experiment import collaboration_table, run_experiment
from swarm.settings import ExperimentConfig
from swarm.swarm import CollaborativeSwarm, SwarmConfig, run_id_for
from swarm.utils.handlers import iter_records

REPO = Path(__file__).resolve().parent.parent

pytestmark = pytest.mark.slow


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(('127.0.0.1', 0))
        return sock.getsockname()[1]


def launch(args, workdir, name):
    env = {key: value for key, value in os.environ.items() if not key.startswith('SWARM_')}
    env['SWARM_LOG_DIR'] = str(workdir / 'logs' / name)
    with open(workdir / f"{name}.err", 'w') as stderr:
        return subprocess.Popen([sys.executable, str(REPO / 'launcher.py'), 'run'] + args, cwd=workdir,
                                env=env, stdout=subprocess.DEVNULL, stderr=stderr)


def test_worker_processes_reproduce_the_inprocess_losses(tmp_path):
    config_path = tmp_path / 'net.json'
    config_path.write_text(json.dumps({
        'swarm': {'num_particles': 4, 'epochs': 20},
        'dynamics': {'dynamics': ['dynamic1']},
        'model': {'names': ['transformer']},
        'data': {'samples_per_class': 24, 'train_count': 64},
        'coordinator': {'timeout': 120},
    }))
    config = ExperimentConfig.from_file(config_path)
    swarm = CollaborativeSwarm(config, SwarmConfig(env_path=str(tmp_path / '.env')))
    asyncio.run(swarm.run_inprocess('transformer', 'dynamic1', 0, tmp_path / 'local'))

    address = f"127.0.0.1:{free_port()}"
    common = ['--config', str(config_path), '--out', str(tmp_path / 'net')]
    processes = [launch(common + ['--mode', 'coordinator', '--listen', address], tmp_path, 'coordinator')]
    processes += [launch(common + ['--mode', 'worker', '--connect', address], tmp_path, f"worker{i}")
                  for i in range(4)]
    try:
        codes = [process.wait(timeout=300) for process in processes]
    finally:
        for process in processes:
            if process.poll() is None:
                process.kill()
    assert codes == [0] * 5, [path.read_text() for path in sorted(tmp_path.glob('*.err'))]

    run_id = run_id_for('transformer', 'dynamic1', 0)
    local = replay_losses(tmp_path / 'local' / run_id / 'run_log.jsonl')
    remote = replay_losses(tmp_path / 'net' / run_id / 'run_log.jsonl')
    assert run_status(tmp_path / 'net' / run_id / 'run_log.jsonl') == 'complete'
    assert sorted(remote) == list(range(20))
    for epoch, losses in local.items():
        assert sorted(remote[epoch]) == [0, 1, 2, 3]
        for pid, loss in losses.items():
            assert remote[epoch][pid] == pytest.approx(loss, abs=1e-9)


def test_collaboration_matches_or_beats_independent_descent_on_rastrigin(tmp_path):
    seeds = list(range(10))
    config = ExperimentConfig.from_dict({
        'swarm': {'num_particles': 4, 'epochs': 20},
        'model': {'names': ['rastrigin'], 'params': {'rastrigin': {'dimension': 10}}},
        'seeds': seeds,
    })
    swarm = CollaborativeSwarm(config, SwarmConfig(env_path=str(tmp_path / '.env')))
    outcome = asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    total = collaboration_table(outcome.results, ['rastrigin'], seeds)[-1]
    assert total['seed'] == 'all'
    assert int(total['dynamic1_wins']) >= 7
    assert int(total['dynamic2_wins']) >= 7


def test_transformer_swarm_learns_the_frequency_classes(tmp_path):
    seeds = list(range(10))
    config = ExperimentConfig.from_dict({
        'swarm': {'num_particles': 4, 'epochs': 30},
        'dynamics': {'dynamics': ['individual', 'dynamic1']},
        'model': {'names': ['transformer']},
        'data': {'num_classes': 4, 'samples_per_class': 70, 'train_count': 200, 'frames': 16, 'feature_dim': 8},
        'seeds': seeds,
    })
    swarm = CollaborativeSwarm(config, SwarmConfig(env_path=str(tmp_path / '.env')))
    asyncio.run(run_experiment(swarm, tmp_path / 'out'))

    def best_accuracy(dynamic, seed):
        run_dir = tmp_path / 'out' / 'runs' / run_id_for('transformer', dynamic, seed)
        return max(r['accuracy'] for path in run_dir.glob('particle_*.jsonl') for r in iter_records(path)
                   if r.get('event') == 'epoch')

    assert sum(best_accuracy('dynamic1', seed) >= 0.9 for seed in seeds) >= 8
    assert all(0.0 <= best_accuracy('individual', seed) <= 1.0 for seed in seeds)
