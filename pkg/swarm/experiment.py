"""Individual-versus-collaborative comparison grid and its result tables."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .swarm import CollaborativeSwarm, run_id_for
from .utils import constants
from .utils.handlers import iter_records
from .worker import TrajectoryRecord

logger = logging.getLogger('SwarmExperiment')

SUMMARY_FIELDS = [
    'variant', 'model', 'dynamic', 'particle', 'runs',
    'best_loss_mean', 'best_loss_std', 'best_loss_min', 'best_loss_max',
    'accuracy_mean', 'accuracy_std', 'accuracy_max',
]
COLLABORATION_FIELDS = [
    'variant', 'model', 'seed', 'individual', 'dynamic1', 'dynamic2', 'dynamic1_wins', 'dynamic2_wins',
]
PLOT_METRICS = ('loss', 'best_loss', 'nbhd_best_loss', 'accuracy')


@dataclass
class ParticleResult:
    model: str
    dynamic: str
    seed: int
    particle_id: int
    final_best_loss: float
    final_accuracy: Optional[float]
    learning_rate: float
    variant: str = ''


@dataclass
class ExperimentResult:
    results: List[ParticleResult]
    summary_path: Path
    collaboration_path: Optional[Path]


def final_result(model: str, dynamic: str, seed: int, trajectory: Sequence[TrajectoryRecord],
                 variant: str = '') -> ParticleResult:
    last = [r for r in trajectory if r.event in ('init', 'epoch')][-1]
    return ParticleResult(model, dynamic, seed, last.particle_id, float(last.best_loss), last.accuracy,
                          last.learning_rate, variant)


def _fmt(value: Optional[float]) -> str:
    return '' if value is None else f"{value:.10g}"


def _stats(values: List[float]) -> Tuple[float, float, float, float]:
    """mean, population std, min, max; with two values the std equals the half-range"""
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std()), float(array.min()), float(array.max())


def _variants(results: Sequence[ParticleResult]) -> List[str]:
    return list(dict.fromkeys(r.variant for r in results))


def summarize(results: Iterable[ParticleResult], models: Sequence[str],
              dynamics: Sequence[str]) -> List[Dict[str, str]]:
    """One row per variant x model x dynamic x particle, over seeds"""
    results = list(results)
    cells: Dict[Tuple[str, str, str, int], List[ParticleResult]] = {}
    for result in results:
        cells.setdefault((result.variant, result.model, result.dynamic, result.particle_id), []).append(result)

    rows = []
    for variant in _variants(results):
        for model in models:
            for dynamic in dynamics:
                particles = sorted(pid for (v, m, d, pid) in cells if (v, m, d) == (variant, model, dynamic))
                for pid in particles:
                    rows.append(_summary_row(cells[(variant, model, dynamic, pid)]))
    return rows


def _summary_row(cell: List[ParticleResult]) -> Dict[str, str]:
    first = cell[0]
    mean, std, low, high = _stats([r.final_best_loss for r in cell])
    row = {
        'variant': first.variant, 'model': first.model, 'dynamic': first.dynamic,
        'particle': constants.particle_label(first.particle_id), 'runs': str(len(cell)),
        'best_loss_mean': _fmt(mean), 'best_loss_std': _fmt(std),
        'best_loss_min': _fmt(low), 'best_loss_max': _fmt(high),
        'accuracy_mean': '', 'accuracy_std': '', 'accuracy_max': '',
    }
    accuracies = [r.final_accuracy for r in cell if r.final_accuracy is not None]
    if accuracies:
        acc_mean, acc_std, _, acc_max = _stats(accuracies)
        row.update(accuracy_mean=_fmt(acc_mean), accuracy_std=_fmt(acc_std), accuracy_max=_fmt(acc_max))
    return row


def collaboration_table(results: Iterable[ParticleResult], models: Sequence[str],
                        seeds: Sequence[int]) -> List[Dict[str, str]]:
    """Median final best loss per seed for each dynamic, and whether collaboration matched or beat GD"""
    results = list(results)
    grouped: Dict[Tuple[str, str, str, int], List[float]] = {}
    for r in results:
        grouped.setdefault((r.variant, r.model, r.dynamic, r.seed), []).append(r.final_best_loss)
    medians = {key: float(np.median(values)) for key, values in grouped.items()}

    rows = []
    for variant in _variants(results):
        for model in models:
            wins = {'dynamic1': 0, 'dynamic2': 0}
            for seed in seeds:
                baseline = medians.get((variant, model, 'individual', seed))
                row = {'variant': variant, 'model': model, 'seed': str(seed), 'individual': _fmt(baseline)}
                for dynamic in wins:
                    value = medians.get((variant, model, dynamic, seed))
                    row[dynamic] = _fmt(value)
                    won = baseline is not None and value is not None and value <= baseline
                    row[f'{dynamic}_wins'] = '1' if won else '0'
                    wins[dynamic] += int(won)
                rows.append(row)
            rows.append({'variant': variant, 'model': model, 'seed': 'all', 'individual': '', 'dynamic1': '',
                         'dynamic2': '', 'dynamic1_wins': str(wins['dynamic1']),
                         'dynamic2_wins': str(wins['dynamic2'])})
    return rows


def write_csv(path: Union[str, Path], fields: Sequence[str], rows: Iterable[Dict[str, str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fields), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


async def run_experiment(swarm: CollaborativeSwarm, out_dir: Union[str, Path]) -> ExperimentResult:
    """Run every sweep point x model x dynamic x seed cell in process and write summary tables.

    Without sweep axes runs land in runs/<run id>; each sweep point gets its
    own runs/<point>/ directory.
    """
    out_dir = Path(out_dir)
    config = swarm.experiment
    runs_dir = out_dir / 'runs'
    results: List[ParticleResult] = []

    for variant in config.variants():
        runner = swarm if not variant.label else CollaborativeSwarm(variant.config, swarm.runtime)
        if variant.label:
            logger.info(f"Sweep point {variant.label}")
        for model in config.model.names:
            for dynamic in config.dynamics.dynamics:
                for seed in config.seeds:
                    try:
                        trajectories = await runner.run_inprocess(model, dynamic, seed, runs_dir / variant.label)
                    except Exception as e:
                        logger.error(f"Run {run_id_for(model, dynamic, seed)} failed: {e}", exc_info=True)
                        raise
                    for pid in sorted(trajectories):
                        results.append(final_result(model, dynamic, seed, trajectories[pid], variant.label))
                    best = min(r.final_best_loss for r in results[-len(trajectories):])
                    logger.info(f"{constants.get_dynamic_display_name(dynamic)} on {model} (seed {seed}): "
                                f"best loss {best:.6g}")

    summary_path = write_csv(out_dir / 'summary.csv', SUMMARY_FIELDS,
                             summarize(results, config.model.names, config.dynamics.dynamics))
    collaboration_path = None
    if 'individual' in config.dynamics.dynamics:
        collaboration_path = write_csv(out_dir / 'collaboration.csv', COLLABORATION_FIELDS,
                                       collaboration_table(results, config.model.names, config.seeds))
    logger.info(f"Wrote {summary_path}")
    return ExperimentResult(results, summary_path, collaboration_path)


def _trajectory_files(paths: Iterable[Union[str, Path]]) -> List[Path]:
    files = []
    for path in map(Path, paths):
        if path.is_dir():
            files += sorted(path.rglob('particle_*.jsonl'))
        else:
            files.append(path)
    return files


def _series_name(path: Path) -> str:
    return f"{path.parent.name}/{path.stem}" if path.parent.name else path.stem


def plot_emit(log_paths: Iterable[Union[str, Path]], out_path: Union[str, Path], metric: str = 'loss') -> Path:
    """Per-epoch series of a trajectory metric, one CSV column per trajectory log"""
    if metric not in PLOT_METRICS:
        raise ValueError(f"metric must be one of {PLOT_METRICS}, got {metric!r}")
    series: Dict[str, Dict[int, Optional[float]]] = {}
    for path in _trajectory_files(log_paths):
        points = {int(r['epoch']): r.get(metric) for r in iter_records(path) if r.get('event') == 'epoch'}
        name = _series_name(path)
        if name in series:
            name = f"{path.parent.parent.name}/{name}"
        series[name] = points

    epochs = sorted({epoch for points in series.values() for epoch in points})
    names = list(series)
    rows = []
    for epoch in epochs:
        row = {'epoch': str(epoch)}
        for name in names:
            row[name] = _fmt(series[name].get(epoch))
        rows.append(row)
    path = write_csv(out_path, ['epoch'] + names, rows)
    logger.info(f"Wrote {len(names)} {metric} series of {len(epochs)} epochs to {path}")
    return path
