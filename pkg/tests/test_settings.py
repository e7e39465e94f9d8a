import json
import os
from pathlib import Path

import numpy as np
import pytest

from swarm.core import Dynamic
from swarm.settings import ConfigError, ExperimentConfig
from swarm.swarm import SwarmConfig, run_id_for

REPO = Path(__file__).resolve().parent.parent

ENV_KEYS = ('SWARM_CONFIG', 'SWARM_MODE', 'SWARM_LISTEN', 'SWARM_CONNECT', 'SWARM_SEED', 'SWARM_OUT',
            'SWARM_TIMEOUT', 'SWARM_LOG_DIR', 'SWARM_LOG_LEVEL')


@pytest.fixture
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    return monkeypatch


def config_error(raw):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(raw)
    return info.value.key


def test_empty_config_uses_defaults():
    config = ExperimentConfig.from_dict({})
    assert config.swarm.num_particles == 4
    assert config.seeds == [0]
    assert config.dynamics.dynamics == ['individual', 'dynamic1', 'dynamic2']
    assert config.dynamics_config('dynamic1').k == 3


def test_config_errors_name_the_key():
    assert config_error({'optimizer': {}}) == 'optimizer'
    assert config_error({'swarm': {'particles': 4}}) == 'swarm.particles'
    assert config_error({'swarm': {'epochs': 'ten'}}) == 'swarm.epochs'
    assert config_error({'swarm': {'epochs': 2.5}}) == 'swarm.epochs'
    assert config_error({'swarm': {'stochastic_layers': 1}}) == 'swarm.stochastic_layers'
    assert config_error({'swarm': []}) == 'swarm'
    assert config_error({'dynamics': {'beta': 0}}) == 'dynamics.beta'
    assert config_error({'dynamics': {'k': 4}}) == 'dynamics.k'
    assert config_error({'dynamics': {'dynamics': ['dynamic3']}}) == 'dynamics.dynamics'
    assert config_error({'dynamics': {'r_mode': 'vector'}}) == 'dynamics.r_mode'
    assert config_error({'dynamics': {'weights': [[0.0, 0.2], [0.2, 0.0]]}}) == 'dynamics.weights'
    assert config_error({'model': {'names': ['convnet']}}) == 'model.names'
    assert config_error({'model': {'names': ['resnet']}}) == 'model.names'
    assert config_error({'data': {'selection': 'random'}}) == 'data.selection'
    assert config_error({'data': {'min_len': 10, 'max_len': 5}}) == 'data.max_len'
    assert config_error({'coordinator': {'timeout': 0}}) == 'coordinator.timeout'
    assert config_error({'seeds': []}) == 'seeds'
    assert config_error([1, 2]) == '<root>'


def test_float_keys_accept_integers():
    config = ExperimentConfig.from_dict({'dynamics': {'c1': 1, 'beta': 2}})
    assert config.dynamics_config('dynamic1').beta == 2


def test_from_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.from_file(tmp_path / 'missing.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{"swarm": ')
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(bad)
    assert info.value.key == '<root>'
    good = tmp_path / 'good.json'
    good.write_text(json.dumps({'swarm': {'num_particles': 2}, 'seeds': 5}))
    config = ExperimentConfig.from_file(good)
    assert config.swarm.num_particles == 2 and config.seeds == [5]


def test_default_neighbour_count_follows_swarm_size():
    single = ExperimentConfig.from_dict({'swarm': {'num_particles': 1}})
    assert single.dynamics_config('dynamic2').k == 0
    pair = ExperimentConfig.from_dict({'swarm': {'num_particles': 2}})
    assert pair.dynamics_config('dynamic2').k == 1
    explicit = ExperimentConfig.from_dict({'dynamics': {'k': 1}})
    assert explicit.dynamics_config('dynamic1').k == 1


def test_dynamics_config_carries_weights_and_selector():
    raw = {'swarm': {'num_particles': 2}, 'dynamics': {'weights': [[0, 0.5], [0.3, 0]], 'c': 0.25}}
    config = ExperimentConfig.from_dict(raw).dynamics_config('dynamic2')
    assert config.dynamic is Dynamic.DYNAMIC2
    assert config.pair_constant(0, 1) == 0.5 and config.pair_constant(1, 0) == 0.3
    assert np.isnan(config.weights[0, 0])
    assert config.c == 0.25


def test_worker_settings_and_model_params():
    config = ExperimentConfig.from_dict({
        'swarm': {'epochs': 3, 'batch_size': 4, 'learning_rates': [0.1]},
        'model': {'names': ['lstm'], 'params': {'lstm': {'hidden_units': 5}}},
        'data': {'frames': 6, 'feature_dim': 3, 'num_classes': 2, 'train_count': 100},
    })
    settings = config.worker_settings(7)
    assert (settings.epochs, settings.batch_size, settings.base_seed) == (3, 4, 7)
    assert list(settings.learning_rates) == [0.1]
    assert config.model_params('lstm') == {'hidden_units': 5, 'frames': 6, 'features': 3, 'num_classes': 2}
    assert config.model_params('sphere') == {}


def test_with_seeds_keeps_the_rest():
    config = ExperimentConfig.from_dict({'swarm': {'epochs': 2}, 'seeds': [0, 1]})
    reseeded = config.with_seeds([9])
    assert reseeded.seeds == [9]
    assert reseeded.swarm.epochs == 2
    assert config.seeds == [0, 1]


def test_shipped_configs_load():
    for name in ('default.json', 'smoke.json', 'sweep.json'):
        config = ExperimentConfig.from_file(REPO / 'configs' / name)
        assert config.seeds


def test_runtime_settings_from_environment(tmp_path, clean_env):
    clean_env.setenv('SWARM_MODE', 'worker')
    clean_env.setenv('SWARM_SEED', '3')
    clean_env.setenv('SWARM_TIMEOUT', '12.5')
    runtime = SwarmConfig(env_path=str(tmp_path / '.env'))
    assert runtime.mode == 'worker'
    assert runtime.seed == 3
    assert runtime.timeout == 12.5
    assert runtime.out_dir == Path('results')


def test_runtime_settings_from_env_file(tmp_path, clean_env):
    env_file = tmp_path / '.env'
    env_file.write_text('SWARM_OUT=elsewhere\nSWARM_LOG_LEVEL=DEBUG\n')
    try:
        runtime = SwarmConfig(env_path=str(env_file))
    finally:
        for key in ('SWARM_OUT', 'SWARM_LOG_LEVEL'):
            os.environ.pop(key, None)
    assert runtime.out_dir == Path('elsewhere')
    assert runtime.log_level == 'DEBUG'


def test_runtime_settings_errors(tmp_path, clean_env):
    clean_env.setenv('SWARM_SEED', 'abc')
    with pytest.raises(ValueError):
        SwarmConfig(env_path=str(tmp_path / '.env'))
    clean_env.delenv('SWARM_SEED')
    runtime = SwarmConfig(env_path=str(tmp_path / '.env'))
    with pytest.raises(ValueError):
        runtime.override(mode='cluster')


def test_override_ignores_missing_values(tmp_path, clean_env):
    runtime = SwarmConfig(env_path=str(tmp_path / '.env')).override(mode='coordinator', seed=None,
                                                                     out_dir='runs')
    assert runtime.mode == 'coordinator'
    assert runtime.seed is None
    assert runtime.out_dir == Path('runs')


def test_run_id_format():
    assert run_id_for('lstm', 'dynamic2', 1) == 'lstm-dynamic2-seed1'


# Sweep -------------------------------------------------------------------------

def sweep_config(sweep, names=('transformer', 'gru')):
    return ExperimentConfig.from_dict({
        'model': {'names': list(names), 'params': {'gru': {'hidden_units': 6}}},
        'sweep': sweep,
    })


def test_without_axes_there_is_one_unlabeled_variant():
    config = ExperimentConfig.from_dict({})
    [variant] = config.variants()
    assert variant.label == '' and variant.point == {}
    assert variant.config is config


def test_sweep_crosses_every_axis():
    config = sweep_config({'selection': ['shadow', 'stride'], 'frames': [8, 12]})
    variants = config.variants()
    assert [v.label for v in variants] == [
        'selection-shadow_frames-8', 'selection-shadow_frames-12',
        'selection-stride_frames-8', 'selection-stride_frames-12']
    last = variants[-1].config
    assert (last.data.selection, last.data.frames) == ('stride', 12)
    assert last.model_params('gru')['frames'] == 12
    assert last.sweep.axes() == []
    assert config.data.frames == 16 and config.data.selection == 'shadow'


def test_sweep_model_axes():
    config = sweep_config({'num_heads': [1, 4], 'dense_units': [32], 'max_seq_len': [20]})
    variant = config.variants()[1]
    assert variant.label == 'max_seq_len-20_num_heads-4_dense_units-32'
    assert variant.config.data.max_seq_len == 20
    assert variant.config.model_params('transformer')['num_heads'] == 4
    assert variant.config.model_params('transformer')['dense_units'] == 32
    gru = variant.config.model_params('gru')
    assert 'num_heads' not in gru
    assert gru['dense_units'] == 32 and gru['hidden_units'] == 6
    assert 'dense_units' not in config.model_params('gru')


def test_sweep_errors_name_the_key():
    assert config_error({'sweep': {'selection': ['random']}, 'model': {'names': ['gru']}}) == 'sweep.selection'
    assert config_error({'sweep': {'frames': [8, 0]}, 'model': {'names': ['gru']}}) == 'sweep.frames'
    assert config_error({'sweep': {'frames': [8, 8]}, 'model': {'names': ['gru']}}) == 'sweep.frames'
    assert config_error({'sweep': {'frames': 8}, 'model': {'names': ['gru']}}) == 'sweep.frames'
    assert config_error({'sweep': {'frames': [8]}}) == 'sweep'
    assert config_error({'sweep': {'num_heads': [2, 3]}, 'model': {'names': ['transformer']}}) == 'sweep'
    assert config_error({'sweep': {'shuffle': [True]}}) == 'sweep.shuffle'


def test_sequence_model_dimensions_are_checked():
    assert config_error({'data': {'max_seq_len': 0}}) == 'data.max_seq_len'
    assert config_error({'model': {'names': ['transformer'],
                                   'params': {'transformer': {'num_heads': 3}}}}) == 'model.params.transformer'
    assert config_error({'model': {'names': ['gru'], 'params': {'gru': {'depth': 3}}}}) == 'model.params.gru'
