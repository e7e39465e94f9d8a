from pathlib import Path
from typing import Dict, List, Optional, Tuple
import asyncio
import logging
import os

from dotenv import load_dotenv

from .coordinator import Coordinator
from .data import augment_videos, generate_dataset, load_dataset, split_dataset, to_batch
from .models import LossModel, SequenceBatch, build_model
from .protocol import parse_address
from .settings import SEQUENCE_MODELS, ExperimentConfig
from .worker import NetworkExchange, TrajectoryRecord, run_particle, run_swarm_inprocess

logger = logging.getLogger('CollaborativeSwarm')

MODES = ('inprocess', 'coordinator', 'worker')


class SwarmConfig:
    """Runtime settings read from the environment (and a .env file)."""

    def __init__(self, env_path: str = ".env"):
        load_dotenv(env_path)
        self.config_path: Optional[str] = self._get_env("SWARM_CONFIG", None)
        self.mode: str = self._get_env("SWARM_MODE", "inprocess")
        self.listen: Optional[str] = self._get_env("SWARM_LISTEN", None)
        self.connect: Optional[str] = self._get_env("SWARM_CONNECT", None)
        seed = self._get_env("SWARM_SEED", None)
        self.seed: Optional[int] = self._parse_int("SWARM_SEED", seed) if seed is not None else None
        self.out_dir: Path = Path(self._get_env("SWARM_OUT", "results"))
        timeout = self._get_env("SWARM_TIMEOUT", None)
        self.timeout: Optional[float] = self._parse_float("SWARM_TIMEOUT", timeout) if timeout is not None else None
        self.log_dir: Path = Path(self._get_env("SWARM_LOG_DIR", "logs"))
        self.log_level: str = self._get_env("SWARM_LOG_LEVEL", "INFO")

    @staticmethod
    def _get_env(key: str, default: Optional[str]) -> Optional[str]:
        return os.getenv(key) or default

    @staticmethod
    def _parse_int(key: str, value: str) -> int:
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"Environment variable {key} must be an integer, got {value!r}")

    @staticmethod
    def _parse_float(key: str, value: str) -> float:
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"Environment variable {key} must be a number, got {value!r}")

    def override(self, **values) -> 'SwarmConfig':
        """Apply command-line values that were given"""
        for key, value in values.items():
            if value is None:
                continue
            if key == 'out_dir':
                value = Path(value)
            setattr(self, key, value)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        return self


def run_id_for(model_name: str, dynamic: str, seed: int) -> str:
    return f"{model_name}-{dynamic}-seed{seed}"


class CollaborativeSwarm:
    """Builds the problem for one grid cell and runs it in a chosen mode"""

    def __init__(self, experiment: ExperimentConfig, runtime: SwarmConfig):
        self.experiment = experiment
        self.runtime = runtime
        self.coordinator: Optional[Coordinator] = None
        self._datasets: Dict[int, Tuple[SequenceBatch, SequenceBatch]] = {}

    @property
    def timeout(self) -> float:
        return self.runtime.timeout or self.experiment.coordinator.timeout

    def sequence_data(self) -> Tuple[SequenceBatch, SequenceBatch]:
        """Train and test batches of the synthetic dataset, shared by every cell"""
        cfg = self.experiment.data
        if cfg.seed not in self._datasets:
            if cfg.path is not None:
                videos = load_dataset(cfg.path)
            else:
                videos = generate_dataset(cfg.num_classes, cfg.samples_per_class, cfg.min_len, cfg.max_len,
                                          cfg.feature_dim, cfg.noise_sigma, cfg.seed)
            train_count = min(cfg.train_count, len(videos))
            train, test = split_dataset(videos, train_count, cfg.seed)
            if cfg.augment_copies:
                train = augment_videos(train, cfg.augment_copies, cfg.seed)
            train_batch = to_batch(train, cfg.frames, cfg.selection, cfg.num_classes, cfg.max_seq_len)
            test_batch = to_batch(test, cfg.frames, cfg.selection, cfg.num_classes, cfg.max_seq_len) if test else None
            logger.info(f"Prepared {len(train_batch)} training and {len(test) if test else 0} test sequences")
            self._datasets[cfg.seed] = (train_batch, test_batch)
        return self._datasets[cfg.seed]

    def build_problem(self, model_name: str, seed: int) -> Tuple[LossModel, Optional[SequenceBatch],
                                                                 Optional[SequenceBatch]]:
        model = build_model(model_name, seed=seed, **self.experiment.model_params(model_name))
        if model_name in SEQUENCE_MODELS:
            train, test = self.sequence_data()
            return model, train, test
        return model, None, None

    async def run_inprocess(self, model_name: str, dynamic: str, seed: int,
                            out_dir: Path) -> Dict[int, List[TrajectoryRecord]]:
        run_id = run_id_for(model_name, dynamic, seed)
        model, train, test = self.build_problem(model_name, seed)
        logger.info(f"Running {run_id} in process with {self.experiment.swarm.num_particles} particles")
        return await run_swarm_inprocess(model, train, test, self.experiment.worker_settings(seed),
                                         self.experiment.dynamics_config(dynamic), run_id,
                                         Path(out_dir) / run_id, self.timeout)

    async def run_coordinator(self, model_name: str, dynamic: str, seed: int, out_dir: Path,
                              ready: Optional[asyncio.Event] = None) -> str:
        run_id = run_id_for(model_name, dynamic, seed)
        host, port = parse_address(self.runtime.listen or self.experiment.coordinator.listen)
        coordinator = Coordinator(run_id, self.experiment.swarm.num_particles,
                                  Path(out_dir) / run_id / 'run_log.jsonl', self.timeout,
                                  fsync=self.experiment.coordinator.fsync)
        self.coordinator = coordinator
        return await coordinator.serve(host, port, ready)

    async def run_worker(self, model_name: str, dynamic: str, seed: int, out_dir: Path) -> List[TrajectoryRecord]:
        run_id = run_id_for(model_name, dynamic, seed)
        model, train, test = self.build_problem(model_name, seed)
        exchange = NetworkExchange(self.runtime.connect or self.experiment.coordinator.listen, run_id)
        return await run_particle(model, train, test, self.experiment.worker_settings(seed),
                                  self.experiment.dynamics_config(dynamic), exchange, Path(out_dir) / run_id)
