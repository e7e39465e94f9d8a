"""Per-particle training loop.

Every epoch a particle trains by minibatch SGD, publishes its state, waits
for the epoch's snapshot, refreshes its bests and applies the configured
dynamic. The exchange is either a direct call into an in-process coordinator
or the wire protocol over TCP.
"""
from __future__ import annotations

import asyncio
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .coordinator import Coordinator
from .core import (
    DynamicsConfig,
    NeighborSnapshot,
    ParticleState,
    SnapshotEntry,
    nearest_neighbors,
    update_neighborhood_best,
    update_personal_best,
)
from .data import accuracy
from .dynamics import StepInput, apply_dynamic, learning_rate_regime, wild_learning_rate
from .models.base import LossModel, SequenceBatch
from .protocol import MessageKind, ProtocolError, WireMessage, parse_address, read_message, write_message
from .utils import constants
from .utils.handlers import JsonLinesHandler

logger = logging.getLogger('SwarmWorker')

EXCHANGE_GRADIENTS = ('full', 'last_batch')


class EpochResult(NamedTuple):
    params: np.ndarray
    epoch_loss: float
    gradient: np.ndarray
    loss_at_params: float


def train_epoch(model: LossModel, params: np.ndarray, data: Optional[SequenceBatch], batch_size: int,
                learning_rate: float, rng: np.random.Generator, stochastic: bool = False,
                exchange_gradient: str = 'full',
                noise_rng: Optional[np.random.Generator] = None) -> EpochResult:
    """One pass of plain SGD over a seeded shuffle of the data.

    Batch-independent models (data is None) take a single gradient step.
    The returned gradient is the full-batch gradient at the final params, or
    the last minibatch gradient with exchange_gradient='last_batch'.
    """
    if exchange_gradient not in EXCHANGE_GRADIENTS:
        raise ValueError(f"exchange_gradient must be one of {EXCHANGE_GRADIENTS}, got {exchange_gradient!r}")
    params = np.asarray(params, dtype=np.float64)

    if data is None:
        loss, grad = model.evaluate_and_gradient(params)
        params = params + (-learning_rate * grad)
        loss_at, grad_at = model.evaluate_and_gradient(params)
        return EpochResult(params, float(loss), grad_at if exchange_gradient == 'full' else grad, float(loss_at))

    size = len(data)
    if batch_size < 1 or batch_size > size:
        raise ValueError(f"batch_size {batch_size} out of range for {size} samples")
    order = rng.permutation(size)
    losses = []
    for start in range(0, size, batch_size):
        batch = data.take(order[start:start + batch_size])
        loss, grad = model.evaluate_and_gradient(params, batch, training=stochastic,
                                                 rng=noise_rng if noise_rng is not None else rng)
        params = params + (-learning_rate * grad)
        losses.append(loss)
    loss_at, grad_at = model.evaluate_and_gradient(params, data)
    gradient = grad_at if exchange_gradient == 'full' else grad
    return EpochResult(params, float(np.mean(losses)), gradient, float(loss_at))


# Exchanges -----------------------------------------------------------------------

class Exchange(ABC):
    """How a particle reaches the coordinator"""

    @abstractmethod
    async def register(self) -> int:
        """Join the run; returns the assigned particle id"""

    @abstractmethod
    async def publish(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        """Hand over this epoch's state"""

    @abstractmethod
    async def snapshot(self, particle_id: int, epoch: int) -> NeighborSnapshot:
        """Wait for the complete epoch snapshot"""

    @abstractmethod
    async def complete(self, particle_id: int) -> None:
        """Report that the particle finished all epochs"""

    async def close(self) -> None:
        pass


class LocalExchange(Exchange):
    """Direct calls into a coordinator living in the same event loop"""

    def __init__(self, coordinator: Coordinator):
        self.coordinator = coordinator

    async def register(self) -> int:
        return self.coordinator.register(self.coordinator.run_id)

    async def publish(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        self.coordinator.publish_state(particle_id, epoch, entry)

    async def snapshot(self, particle_id: int, epoch: int) -> NeighborSnapshot:
        return await self.coordinator.await_snapshot(particle_id, epoch)

    async def complete(self, particle_id: int) -> None:
        self.coordinator.mark_complete(particle_id)


class NetworkExchange(Exchange):
    """Wire protocol over one persistent TCP connection"""

    def __init__(self, address: str, run_id: str, connect_timeout: float = 30.0):
        self.host, self.port = parse_address(address)
        self.run_id = run_id
        self.connect_timeout = connect_timeout
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None

    async def connect(self) -> None:
        """Retry until the coordinator accepts the connection or connect_timeout passes"""
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                self._reader, self._writer = await asyncio.open_connection(self.host, self.port)
                logger.info(f"Connected to coordinator at {self.host}:{self.port}")
                return
            except OSError as e:
                if time.monotonic() >= deadline:
                    logger.error(f"Could not reach coordinator at {self.host}:{self.port}: {e}")
                    raise
                await asyncio.sleep(0.2)

    async def _request(self, message: WireMessage) -> WireMessage:
        if self._writer is None:
            await self.connect()
        await write_message(self._writer, message)
        try:
            reply = await read_message(self._reader)
        except asyncio.IncompleteReadError as e:
            raise ProtocolError("coordinator closed the connection") from e
        return reply.raise_for_error()

    async def register(self) -> int:
        reply = await self._request(WireMessage(MessageKind.REGISTER, self.run_id))
        if reply.kind is not MessageKind.REGISTER_ACK:
            raise ProtocolError(f"expected RegisterAck, got {reply.kind.value}")
        await self.heartbeat(reply.particle_id)
        return reply.particle_id

    async def heartbeat(self, particle_id: int) -> float:
        """Round-trip latency in seconds"""
        sent = time.monotonic()
        await self._request(WireMessage(MessageKind.HEARTBEAT, self.run_id, particle_id, -1, {'sent': sent}))
        latency = time.monotonic() - sent
        logger.debug(f"Coordinator round trip for particle {particle_id}: {latency * 1000:.2f} ms")
        return latency

    async def publish(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        reply = await self._request(WireMessage(MessageKind.PUBLISH_STATE, self.run_id, particle_id, epoch,
                                                entry.to_payload()))
        if reply.kind is not MessageKind.PUBLISH_ACK or reply.epoch != epoch:
            raise ProtocolError(f"expected PublishAck for epoch {epoch}, got {reply.kind.value}")

    async def snapshot(self, particle_id: int, epoch: int) -> NeighborSnapshot:
        reply = await self._request(WireMessage(MessageKind.SNAPSHOT_READY, self.run_id, particle_id, epoch))
        if reply.kind is not MessageKind.SNAPSHOT_REPLY or reply.epoch != epoch:
            raise ProtocolError(f"expected SnapshotReply for epoch {epoch}, got {reply.kind.value}")
        try:
            return NeighborSnapshot.from_payload(reply.payload)
        except (KeyError, ValueError, TypeError) as e:
            raise ProtocolError(f"malformed snapshot for epoch {epoch}: {e}") from e

    async def complete(self, particle_id: int) -> None:
        await self._request(WireMessage(MessageKind.RUN_COMPLETE, self.run_id, particle_id))

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            self._writer = None


# Particle loop ---------------------------------------------------------------------

@dataclass
class WorkerSettings:
    epochs: int = constants.EPOCHS
    batch_size: int = constants.BATCH_SIZE
    base_seed: int = 0
    learning_rates: Optional[Sequence[float]] = None
    resample_wild_learning_rate: bool = False
    exchange_gradient: str = 'full'
    stochastic_layers: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.exchange_gradient not in EXCHANGE_GRADIENTS:
            raise ValueError(f"exchange_gradient must be one of {EXCHANGE_GRADIENTS}")


@dataclass
class TrajectoryRecord:
    particle_id: int
    epoch: int
    event: str
    loss: Optional[float]
    best_loss: Optional[float]
    nbhd_best_loss: Optional[float]
    position_norm: Optional[float]
    learning_rate: float
    wall_time: float
    accuracy: Optional[float] = None
    detail: Optional[str] = None


@dataclass
class ParticleStreams:
    """Independent random streams of one particle, all derived from base_seed + particle_id"""
    data: np.random.Generator
    dynamics: np.random.Generator
    rates: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def for_particle(cls, base_seed: int, particle_id: int) -> 'ParticleStreams':
        seeds = np.random.SeedSequence(base_seed + particle_id).spawn(4)
        return cls(*(np.random.default_rng(s) for s in seeds))


def _initial_learning_rate(settings: WorkerSettings, particle_id: int, rng: np.random.Generator) -> float:
    if settings.learning_rates is not None:
        rates = list(settings.learning_rates)
        return float(rates[particle_id % len(rates)])
    return learning_rate_regime(particle_id, rng)


def _test_accuracy(model: LossModel, params: np.ndarray, test: Optional[SequenceBatch]) -> Optional[float]:
    if test is None or len(test) == 0 or not model.is_classifier:
        return None
    return accuracy(model.predict(params, test), test.labels)


async def run_particle(model: LossModel, train: Optional[SequenceBatch], test: Optional[SequenceBatch],
                       settings: WorkerSettings, config: DynamicsConfig, exchange: Exchange,
                       trajectory_dir: Optional[Union[str, Path]] = None) -> List[TrajectoryRecord]:
    """Run one particle for all epochs and return its trajectory"""
    particle_id = await exchange.register()
    label = constants.particle_label(particle_id)
    seed = settings.base_seed + particle_id
    streams = ParticleStreams.for_particle(settings.base_seed, particle_id)
    started = time.monotonic()
    current_epoch = -1

    trajectory: List[TrajectoryRecord] = []
    handler = None
    if trajectory_dir is not None:
        handler = JsonLinesHandler(Path(trajectory_dir) / f"particle_{particle_id}.jsonl", truncate=True).open()

    def record(entry: TrajectoryRecord) -> None:
        trajectory.append(entry)
        if handler is not None:
            handler.append(entry)

    try:
        learning_rate = _initial_learning_rate(settings, particle_id, streams.rates)
        position = model.init_params(seed)
        initial_loss = model.evaluate(position, train)
        state = ParticleState.initial(particle_id, position, initial_loss, learning_rate, seed)
        record(TrajectoryRecord(particle_id, -1, 'init', initial_loss, initial_loss, initial_loss,
                                float(np.linalg.norm(position)), learning_rate, 0.0,
                                _test_accuracy(model, position, test)))
        logger.info(f"{label} starting: {settings.epochs} epochs, learning rate {learning_rate:.3g}, "
                    f"dynamic {config.dynamic.value}")

        for epoch in range(settings.epochs):
            current_epoch = epoch
            if settings.resample_wild_learning_rate and particle_id >= len(constants.FIXED_LEARNING_RATES) \
                    and settings.learning_rates is None:
                state.learning_rate = wild_learning_rate(streams.rates)

            result = train_epoch(model, state.position, train, settings.batch_size, state.learning_rate,
                                 streams.data, settings.stochastic_layers, settings.exchange_gradient,
                                 streams.noise)
            personal_best, personal_best_loss = update_personal_best(
                state.personal_best, state.personal_best_loss, result.params, result.loss_at_params)

            await exchange.publish(particle_id, epoch, SnapshotEntry(
                particle_id, result.params, result.gradient, result.loss_at_params,
                personal_best, personal_best_loss, state.learning_rate))
            snapshot = await exchange.snapshot(particle_id, epoch)

            neighborhood = nearest_neighbors(snapshot.positions(), particle_id, config.k)
            nbhd_best, nbhd_best_loss = update_neighborhood_best(
                state.nbhd_best, state.nbhd_best_loss, snapshot, neighborhood)
            state = ParticleState(particle_id, result.params, state.velocity, personal_best, personal_best_loss,
                                  nbhd_best, nbhd_best_loss, state.learning_rate, epoch, seed)

            step = apply_dynamic(StepInput(state, snapshot, config, result.gradient, neighborhood,
                                           streams.dynamics))
            record(TrajectoryRecord(particle_id, epoch, 'epoch', result.loss_at_params, personal_best_loss,
                                    nbhd_best_loss, float(np.linalg.norm(result.params)), state.learning_rate,
                                    time.monotonic() - started, _test_accuracy(model, result.params, test)))
            logger.debug(f"{label} epoch {epoch}: loss={result.loss_at_params:.6g} "
                         f"best={personal_best_loss:.6g} neighbours={sorted(neighborhood)}")
            state.position = step.new_position
            state.velocity = step.new_velocity

        await exchange.complete(particle_id)
        logger.info(f"{label} finished with best loss {state.personal_best_loss:.6g}")
        return trajectory
    except ProtocolError as e:
        logger.error(f"{label} aborted: {e.reason}")
        record(TrajectoryRecord(particle_id, current_epoch, 'error', None, None,
                                None, None, 0.0, time.monotonic() - started, detail=e.reason))
        raise
    finally:
        if handler is not None:
            handler.close()
        await exchange.close()


async def run_swarm_inprocess(model: LossModel, train: Optional[SequenceBatch], test: Optional[SequenceBatch],
                              settings: WorkerSettings, config: DynamicsConfig, run_id: str,
                              run_dir: Union[str, Path],
                              timeout: float = constants.COORDINATOR_TIMEOUT) -> Dict[int, List[TrajectoryRecord]]:
    """N particles as tasks of one event loop sharing one coordinator"""
    run_dir = Path(run_dir)
    coordinator = Coordinator(run_id, config.num_particles, run_dir / 'run_log.jsonl', timeout)
    tasks = [
        asyncio.create_task(run_particle(model, train, test, settings, config,
                                         LocalExchange(coordinator), run_dir))
        for _ in range(config.num_particles)
    ]
    try:
        trajectories = await asyncio.gather(*tasks)
    except BaseException:
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        coordinator.abort("a particle failed")
        raise
    finally:
        coordinator.close()
    return {trajectory[0].particle_id: trajectory for trajectory in trajectories}
