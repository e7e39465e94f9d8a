import asyncio
import csv

import pytest

from swarm.experiment import (
    COLLABORATION_FIELDS,
    SUMMARY_FIELDS,
    ParticleResult,
    collaboration_table,
    plot_emit,
    run_experiment,
    summarize,
)
from swarm.settings import ExperimentConfig
from swarm.swarm import CollaborativeSwarm, SwarmConfig


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def result(dynamic, seed, pid, loss, accuracy=None, model='sphere'):
    return ParticleResult(model, dynamic, seed, pid, loss, accuracy, 0.01)


def small_swarm(tmp_path, **swarm):
    config = ExperimentConfig.from_dict({
        'swarm': {'epochs': 2, **swarm},
        'model': {'names': ['sphere'], 'params': {'sphere': {'dimension': 3}}},
        'seeds': [0, 1],
    })
    return CollaborativeSwarm(config, SwarmConfig(env_path=str(tmp_path / '.env')))


def test_summary_over_one_seed_has_zero_spread():
    rows = summarize([result('dynamic1', 0, 0, 0.5, accuracy=0.75)], ['sphere'], ['dynamic1'])
    assert len(rows) == 1
    row = rows[0]
    assert row['particle'] == 'PSO-1' and row['runs'] == '1'
    assert row['best_loss_mean'] == '0.5' and row['best_loss_std'] == '0'
    assert row['accuracy_mean'] == '0.75' and row['accuracy_std'] == '0'


def test_summary_spread_over_two_seeds_is_the_half_range():
    results = [result('individual', 0, 1, 1.0), result('individual', 1, 1, 3.0)]
    row = summarize(results, ['sphere'], ['individual'])[0]
    assert row['best_loss_mean'] == '2'
    assert row['best_loss_std'] == '1'
    assert (row['best_loss_min'], row['best_loss_max']) == ('1', '3')
    assert row['accuracy_mean'] == ''


def test_summary_follows_model_and_dynamic_order():
    results = [result('dynamic2', 0, pid, 1.0) for pid in (1, 0)] + [result('individual', 0, 0, 2.0)]
    rows = summarize(results, ['sphere'], ['individual', 'dynamic2'])
    assert [(r['dynamic'], r['particle']) for r in rows] == [
        ('individual', 'PSO-1'), ('dynamic2', 'PSO-1'), ('dynamic2', 'PSO-2')]


def test_collaboration_table_counts_wins():
    results = []
    for seed, (ind, d1, d2) in enumerate([(1.0, 0.5, 2.0), (1.0, 1.0, 0.1)]):
        results += [result('individual', seed, 0, ind), result('dynamic1', seed, 0, d1),
                    result('dynamic2', seed, 0, d2)]
    rows = collaboration_table(results, ['sphere'], [0, 1])
    assert len(rows) == 3
    assert (rows[0]['dynamic1_wins'], rows[0]['dynamic2_wins']) == ('1', '0')
    assert (rows[1]['dynamic1_wins'], rows[1]['dynamic2_wins']) == ('1', '1')
    assert rows[2]['seed'] == 'all'
    assert (rows[2]['dynamic1_wins'], rows[2]['dynamic2_wins']) == ('2', '1')


def test_collaboration_uses_the_median_particle():
    results = [result('individual', 0, pid, loss) for pid, loss in enumerate([5.0, 1.0, 3.0])]
    results += [result('dynamic1', 0, pid, loss) for pid, loss in enumerate([0.0, 4.0, 2.9])]
    row = collaboration_table(results, ['sphere'], [0])[0]
    assert row['individual'] == '3' and row['dynamic1'] == '2.9'
    assert row['dynamic1_wins'] == '1'
    assert row['dynamic2'] == '' and row['dynamic2_wins'] == '0'


def test_run_experiment_writes_the_tables(tmp_path):
    swarm = small_swarm(tmp_path)
    outcome = asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    assert len(outcome.results) == 3 * 2 * 4

    summary = read_csv(outcome.summary_path)
    assert list(summary[0]) == SUMMARY_FIELDS
    assert len(summary) == 12
    assert all(row['runs'] == '2' for row in summary)

    collaboration = read_csv(outcome.collaboration_path)
    assert list(collaboration[0]) == COLLABORATION_FIELDS
    assert [row['seed'] for row in collaboration] == ['0', '1', 'all']

    run_dir = tmp_path / 'out' / 'runs' / 'sphere-dynamic2-seed1'
    assert (run_dir / 'run_log.jsonl').exists()
    assert sorted(p.name for p in run_dir.glob('particle_*.jsonl')) == [f"particle_{i}.jsonl" for i in range(4)]


def test_run_experiment_without_baseline_skips_collaboration(tmp_path):
    swarm = small_swarm(tmp_path)
    swarm.experiment.dynamics.dynamics = ['dynamic1']
    outcome = asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    assert outcome.collaboration_path is None
    assert not (tmp_path / 'out' / 'collaboration.csv').exists()


def test_plot_series_from_a_run_directory(tmp_path):
    swarm = small_swarm(tmp_path)
    asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    run_dir = tmp_path / 'out' / 'runs' / 'sphere-dynamic1-seed0'
    path = plot_emit([run_dir], tmp_path / 'loss.csv', 'best_loss')
    rows = read_csv(path)
    assert [row['epoch'] for row in rows] == ['0', '1']
    assert list(rows[0]) == ['epoch'] + [f"sphere-dynamic1-seed0/particle_{i}" for i in range(4)]
    assert all(float(value) >= 0 for row in rows for key, value in row.items() if key != 'epoch')


def test_plot_of_a_zero_epoch_run_is_header_only(tmp_path):
    swarm = small_swarm(tmp_path, epochs=0)
    swarm.experiment.dynamics.dynamics = ['individual']
    asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    log = tmp_path / 'out' / 'runs' / 'sphere-individual-seed0' / 'particle_0.jsonl'
    path = plot_emit([log], tmp_path / 'empty.csv')
    assert path.read_text().splitlines() == ['epoch,sphere-individual-seed0/particle_0']


def test_plot_rejects_unknown_metric_and_missing_files(tmp_path):
    with pytest.raises(ValueError):
        plot_emit([tmp_path], tmp_path / 'x.csv', metric='velocity')
    with pytest.raises(FileNotFoundError):
        plot_emit([tmp_path / 'missing.jsonl'], tmp_path / 'x.csv')


def test_sweep_points_get_their_own_runs_and_rows(tmp_path):
    config = ExperimentConfig.from_dict({
        'swarm': {'num_particles': 2, 'epochs': 1, 'batch_size': 4},
        'dynamics': {'dynamics': ['individual', 'dynamic1']},
        'model': {'names': ['mlp'], 'params': {'mlp': {'dense_units': 6}}},
        'data': {'num_classes': 2, 'samples_per_class': 6, 'train_count': 8, 'min_len': 4, 'max_len': 8,
                 'frames': 4, 'feature_dim': 3},
        'sweep': {'selection': ['shadow', 'stride']},
    })
    swarm = CollaborativeSwarm(config, SwarmConfig(env_path=str(tmp_path / '.env')))
    outcome = asyncio.run(run_experiment(swarm, tmp_path / 'out'))
    assert len(outcome.results) == 2 * 2 * 2
    assert {r.variant for r in outcome.results} == {'selection-shadow', 'selection-stride'}

    summary = read_csv(outcome.summary_path)
    assert [(row['variant'], row['dynamic']) for row in summary[::2]] == [
        ('selection-shadow', 'individual'), ('selection-shadow', 'dynamic1'),
        ('selection-stride', 'individual'), ('selection-stride', 'dynamic1')]
    assert all(row['accuracy_mean'] != '' for row in summary)

    collaboration = read_csv(outcome.collaboration_path)
    assert [(row['variant'], row['seed']) for row in collaboration] == [
        ('selection-shadow', '0'), ('selection-shadow', 'all'), ('selection-stride', '0'), ('selection-stride', 'all')]

    for label in ('selection-shadow', 'selection-stride'):
        run_dir = tmp_path / 'out' / 'runs' / label / 'mlp-dynamic1-seed0'
        assert (run_dir / 'run_log.jsonl').exists()
    path = plot_emit([tmp_path / 'out' / 'runs'], tmp_path / 'loss.csv', 'loss')
    assert len(read_csv(path)[0]) == 1 + 2 * 2 * 2
