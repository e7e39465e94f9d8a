"""Barrier-synchronised state exchange.

Workers register, publish their state once per epoch and wait for the
epoch's snapshot, which is released only after every particle's record has
been written to the run log. The coordinator never touches the dynamics.
"""
from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple, Union

from .core import NeighborSnapshot, SnapshotEntry, position_digest
from .protocol import MessageKind, ProtocolError, WireMessage, read_message, write_frame, write_message
from .utils import constants
from .utils.handlers import JsonLinesHandler, iter_records, read_records

logger = logging.getLogger('SwarmCoordinator')

RUN_EVENTS = ('header', 'register', 'publish', 'release', 'run_failed', 'run_complete')


class RunFailedError(ProtocolError):
    """The run was aborted: a barrier timed out or the run log could not be written"""


@dataclass
class RunLogRecord:
    timestamp: float
    run_id: str
    epoch: int
    particle_id: int
    loss: Optional[float]
    position: Optional[Dict[str, Any]]
    event: str
    detail: Optional[str] = None


class Coordinator:
    """Rendezvous and storage service for one run"""

    def __init__(self, run_id: str, expected_particles: int, log_path: Union[str, Path],
                 timeout: float = constants.COORDINATOR_TIMEOUT, fsync: bool = False):
        if expected_particles < 1:
            raise ValueError(f"a run needs at least one particle, got {expected_particles}")
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        self.run_id = run_id
        self.expected_particles = expected_particles
        self.timeout = timeout
        self.log_path = Path(log_path)
        self.address: Optional[Tuple[str, int]] = None

        self._log = JsonLinesHandler(self.log_path, fsync=fsync, truncate=True)
        self._next_id = 0
        self._expected_epoch: Dict[int, int] = {}
        self._published: Dict[int, Dict[int, SnapshotEntry]] = {}
        self._released: Dict[int, NeighborSnapshot] = {}
        self._frames: Dict[int, bytes] = {}
        self._fetched: Dict[int, Set[int]] = {}
        self._release_log: List[int] = []
        self._barriers: Dict[int, asyncio.Event] = {}
        self._completed: Set[int] = set()
        self._failure: Optional[RunFailedError] = None
        self._done = asyncio.Event()

        self.persist_record(self._record('header', detail=f"expected_particles={expected_particles}"))
        logger.info(f"Run {run_id} waiting for {expected_particles} particles (log: {self.log_path})")

    # State ---------------------------------------------------------------

    @property
    def started(self) -> bool:
        return self._next_id == self.expected_particles

    @property
    def failed(self) -> bool:
        return self._failure is not None

    @property
    def complete(self) -> bool:
        return len(self._completed) == self.expected_particles

    @property
    def status(self) -> str:
        if self.failed:
            return 'failed'
        return 'complete' if self.complete else 'running'

    def released_epochs(self) -> List[int]:
        return list(self._release_log)

    def retained_epochs(self) -> List[int]:
        """Released epochs whose snapshot some particle has not fetched yet"""
        return sorted(self._released)

    def snapshot_frame(self, epoch: int) -> bytes:
        """Encoded SnapshotReply for a released epoch, identical for every receiver"""
        try:
            return self._frames[epoch]
        except KeyError:
            raise ProtocolError(f"no snapshot held for epoch {epoch}")

    def _record(self, event: str, epoch: int = -1, particle_id: int = -1, loss: Optional[float] = None,
                position: Optional[Dict[str, Any]] = None, detail: Optional[str] = None) -> RunLogRecord:
        return RunLogRecord(time.time(), self.run_id, epoch, particle_id, loss, position, event, detail)

    def _check_alive(self) -> None:
        if self._failure is not None:
            raise self._failure

    def _check_run(self, run_id: str) -> None:
        if run_id != self.run_id:
            raise ProtocolError(f"this coordinator serves run {self.run_id!r}, not {run_id!r}")

    # Operations ------------------------------------------------------------

    def persist_record(self, record: RunLogRecord) -> None:
        """Append to the run log; a storage failure aborts the run"""
        try:
            self._log.append(record)
        except OSError as e:
            self._fail(f"run log write failed: {e}", record.epoch if record.epoch >= 0 else None)
            raise self._failure from e

    def register(self, run_id: str) -> int:
        self._check_run(run_id)
        self._check_alive()
        if self.started:
            logger.warning(f"Rejected registration for run {run_id}: all {self.expected_particles} particles joined")
            raise ProtocolError(f"run {run_id} already started with {self.expected_particles} particles")
        particle_id = self._next_id
        self.persist_record(self._record('register', particle_id=particle_id))
        self._next_id += 1
        self._expected_epoch[particle_id] = 0
        logger.info(f"Registered {constants.particle_label(particle_id)} ({self._next_id}/{self.expected_particles})")
        if self.started:
            logger.info(f"Run {self.run_id} started at epoch 0")
        return particle_id

    def publish_state(self, particle_id: int, epoch: int, entry: SnapshotEntry) -> None:
        """Store one particle's state for an epoch; releases the epoch once all N are stored"""
        self._check_alive()
        if particle_id not in self._expected_epoch:
            raise ProtocolError(f"particle {particle_id} is not registered")
        if entry.particle_id != particle_id:
            raise ProtocolError(f"particle {particle_id} published a record for particle {entry.particle_id}")
        if particle_id in self._published.get(epoch, {}):
            raise ProtocolError(f"duplicate publish from particle {particle_id} for epoch {epoch}",
                                expected_epoch=self._expected_epoch[particle_id])
        expected = self._expected_epoch[particle_id]
        if epoch != expected:
            raise ProtocolError(f"particle {particle_id} published epoch {epoch}, expected {expected}",
                                expected_epoch=expected)

        self.persist_record(self._record('publish', epoch, particle_id, float(entry.loss),
                                         position_digest(entry.position)))
        self._published.setdefault(epoch, {})[particle_id] = entry
        self._expected_epoch[particle_id] = expected + 1
        logger.debug(f"Stored epoch {epoch} state of particle {particle_id} (loss={entry.loss:.6g})")

        if len(self._published[epoch]) == self.expected_particles:
            self._release(epoch)

    def _release(self, epoch: int) -> None:
        snapshot = NeighborSnapshot(epoch, tuple(self._published.pop(epoch).values()))
        reply = WireMessage(MessageKind.SNAPSHOT_REPLY, self.run_id, constants.BROADCAST_ID, epoch,
                            snapshot.to_payload())
        frame = reply.encode()
        self.persist_record(self._record('release', epoch, detail=f"particles={len(snapshot.entries)}"))
        self._released[epoch] = snapshot
        self._frames[epoch] = frame
        self._fetched[epoch] = set()
        self._release_log.append(epoch)
        self._barriers.setdefault(epoch, asyncio.Event()).set()
        logger.info(f"Released epoch {epoch} snapshot of run {self.run_id}")

    async def await_snapshot(self, particle_id: int, epoch: int) -> NeighborSnapshot:
        """Block until every particle has published the epoch"""
        snapshot, _ = await self._fetch(particle_id, epoch)
        return snapshot

    async def await_snapshot_frame(self, particle_id: int, epoch: int) -> bytes:
        """Same barrier as await_snapshot, returning the encoded reply"""
        _, frame = await self._fetch(particle_id, epoch)
        return frame

    async def _fetch(self, particle_id: int, epoch: int) -> Tuple[NeighborSnapshot, bytes]:
        self._check_alive()
        if self._expected_epoch.get(particle_id, 0) <= epoch:
            raise ProtocolError(f"particle {particle_id} must publish epoch {epoch} before awaiting it",
                                expected_epoch=self._expected_epoch.get(particle_id))
        if epoch not in self._released and epoch in self._release_log:
            raise ProtocolError(f"snapshot for epoch {epoch} was already fetched by every particle")
        if epoch not in self._released:
            barrier = self._barriers.setdefault(epoch, asyncio.Event())
            try:
                await asyncio.wait_for(barrier.wait(), self.timeout)
            except asyncio.TimeoutError:
                self._fail(f"barrier for epoch {epoch} timed out after {self.timeout:g}s", epoch)
        self._check_alive()
        snapshot, frame = self._released[epoch], self._frames[epoch]
        self._mark_fetched(particle_id, epoch)
        return snapshot, frame

    def _mark_fetched(self, particle_id: int, epoch: int) -> None:
        """Drop an epoch's snapshot once all N particles have received it"""
        fetched = self._fetched[epoch]
        fetched.add(particle_id)
        if len(fetched) == self.expected_particles:
            del self._released[epoch], self._frames[epoch], self._fetched[epoch]
            self._barriers.pop(epoch, None)
            logger.debug(f"Evicted epoch {epoch} snapshot of run {self.run_id}")

    def mark_complete(self, particle_id: int) -> None:
        self._check_alive()
        if particle_id not in self._expected_epoch:
            raise ProtocolError(f"particle {particle_id} is not registered")
        self._completed.add(particle_id)
        logger.debug(f"Particle {particle_id} finished ({len(self._completed)}/{self.expected_particles})")
        if self.complete:
            self.persist_record(self._record('run_complete', detail=f"epochs={len(self._release_log)}"))
            logger.info(f"Run {self.run_id} complete after {len(self._release_log)} epochs")
            self._done.set()

    def _fail(self, reason: str, epoch: Optional[int] = None) -> None:
        """Mark the run failed and wake every waiter; only the first reason sticks"""
        if self._failure is not None:
            return
        self._failure = RunFailedError(reason, expected_epoch=epoch)
        logger.error(f"Run {self.run_id} failed: {reason}")
        try:
            self._log.append(self._record('run_failed', epoch if epoch is not None else -1, detail=reason))
        except OSError:
            logger.error(f"Could not record the failure of run {self.run_id}", exc_info=True)
        for barrier in self._barriers.values():
            barrier.set()
        self._done.set()

    def abort(self, reason: str) -> None:
        self._fail(reason)

    def close(self) -> None:
        self._log.close()

    # Serving -------------------------------------------------------------

    async def serve(self, host: str, port: int, ready: Optional[asyncio.Event] = None) -> str:
        """Accept workers until the run completes or fails; returns the final status"""
        try:
            server = await asyncio.start_server(self._handle_connection, host, port)
        except OSError as e:
            logger.error(f"Could not listen on {host}:{port}: {e}")
            raise
        self.address = server.sockets[0].getsockname()[:2]
        logger.info(f"Coordinator listening on {self.address[0]}:{self.address[1]}")
        if ready is not None:
            ready.set()
        try:
            async with server:
                await self._done.wait()
        finally:
            self.close()
        return self.status

    @staticmethod
    def _check_sender(bound_id: int, message: WireMessage) -> None:
        """Messages after Register must carry the id assigned on this connection"""
        if message.kind is MessageKind.REGISTER:
            if bound_id != constants.BROADCAST_ID:
                raise ProtocolError(f"connection already registered as particle {bound_id}")
            return
        if bound_id == constants.BROADCAST_ID:
            raise ProtocolError(f"{message.kind.value} sent before Register")
        if message.particle_id != bound_id:
            raise ProtocolError(f"connection registered as particle {bound_id} sent {message.kind.value} "
                                f"for particle {message.particle_id}")

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info('peername')
        particle_id = constants.BROADCAST_ID
        try:
            while True:
                try:
                    message = await read_message(reader)
                except asyncio.IncompleteReadError:
                    if particle_id not in self._completed:
                        logger.warning(f"Particle {particle_id} at {peer} disconnected before finishing")
                    break
                except ProtocolError as e:
                    logger.warning(f"Dropping connection from {peer}: {e.reason}")
                    break

                try:
                    self._check_run(message.run_id)
                    self._check_sender(particle_id, message)
                    if message.kind is MessageKind.REGISTER:
                        particle_id = self.register(message.run_id)
                        await write_message(writer, WireMessage(
                            MessageKind.REGISTER_ACK, self.run_id, particle_id, 0,
                            {'expected_particles': self.expected_particles, 'timeout': self.timeout},
                        ))
                    elif message.kind is MessageKind.PUBLISH_STATE:
                        try:
                            entry = SnapshotEntry.from_payload(message.payload)
                        except (ValueError, TypeError) as e:
                            raise ProtocolError(f"bad PublishState payload: {e}") from e
                        self.publish_state(particle_id, message.epoch, entry)
                        await write_message(writer, WireMessage(
                            MessageKind.PUBLISH_ACK, self.run_id, particle_id, message.epoch))
                    elif message.kind is MessageKind.SNAPSHOT_READY:
                        await write_frame(writer, await self.await_snapshot_frame(particle_id, message.epoch))
                    elif message.kind is MessageKind.HEARTBEAT:
                        await write_message(writer, WireMessage(
                            MessageKind.HEARTBEAT, self.run_id, message.particle_id, message.epoch,
                            message.payload))
                    elif message.kind is MessageKind.RUN_COMPLETE:
                        self.mark_complete(particle_id)
                        await write_message(writer, WireMessage(
                            MessageKind.RUN_COMPLETE, self.run_id, particle_id, message.epoch))
                        break
                    else:
                        raise ProtocolError(f"unexpected {message.kind.value} message from a worker")
                except ProtocolError as e:
                    logger.warning(f"Rejected {message.kind.value} from particle {message.particle_id}: {e.reason}")
                    await write_message(writer, WireMessage.error(self.run_id, message.particle_id,
                                                                  message.epoch, e))
                    if isinstance(e, RunFailedError):
                        break
        except (ConnectionError, OSError) as e:
            logger.warning(f"Connection to {peer} lost: {e}")
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


def replay_losses(log_path: Union[str, Path]) -> Dict[int, Dict[int, float]]:
    """Per-epoch, per-particle losses rebuilt from a run log"""
    losses: Dict[int, Dict[int, float]] = {}
    for record in read_records(log_path, event='publish'):
        losses.setdefault(int(record['epoch']), {})[int(record['particle_id'])] = float(record['loss'])
    return losses


def run_status(log_path: Union[str, Path]) -> str:
    """'failed', 'complete' or 'running' according to a run log"""
    events = {record.get('event') for record in iter_records(log_path)}
    if 'run_failed' in events:
        return 'failed'
    if 'run_complete' in events:
        return 'complete'
    return 'running'
