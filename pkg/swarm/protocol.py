"""Coordinator wire protocol: a 4-byte big-endian length prefix followed by a
UTF-8 JSON object {kind, run_id, particle_id, epoch, payload}.

Floats are written with their shortest round-tripping representation, so
positions and gradients survive the trip bit for bit.
"""
from __future__ import annotations

import asyncio
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

logger = logging.getLogger('SwarmCoordinator')

HEADER = struct.Struct('>I')
MAX_FRAME_BYTES = 64 * 1024 * 1024


class MessageKind(str, Enum):
    REGISTER = 'Register'
    REGISTER_ACK = 'RegisterAck'
    PUBLISH_STATE = 'PublishState'
    PUBLISH_ACK = 'PublishAck'
    SNAPSHOT_READY = 'SnapshotReady'
    SNAPSHOT_REPLY = 'SnapshotReply'
    RUN_COMPLETE = 'RunComplete'
    ERROR = 'Error'
    HEARTBEAT = 'Heartbeat'


class ProtocolError(RuntimeError):
    """A request that breaks the exchange protocol"""

    def __init__(self, reason: str, expected_epoch: Optional[int] = None):
        super().__init__(reason)
        self.reason = reason
        self.expected_epoch = expected_epoch

    def to_payload(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {'reason': self.reason, 'error': type(self).__name__}
        if self.expected_epoch is not None:
            payload['expected_epoch'] = self.expected_epoch
        return payload


@dataclass
class WireMessage:
    kind: MessageKind
    run_id: str
    particle_id: int = -1
    epoch: int = -1
    payload: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = MessageKind(self.kind)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'run_id': self.run_id,
            'particle_id': int(self.particle_id),
            'epoch': int(self.epoch),
            'payload': self.payload,
        }

    def encode(self) -> bytes:
        body = json.dumps(self.to_dict(), separators=(',', ':')).encode('utf-8')
        if len(body) > MAX_FRAME_BYTES:
            raise ProtocolError(f"message of {len(body)} bytes exceeds the {MAX_FRAME_BYTES} byte limit")
        return HEADER.pack(len(body)) + body

    @classmethod
    def decode(cls, body: bytes) -> 'WireMessage':
        try:
            raw = json.loads(body.decode('utf-8'))
            return cls(
                kind=raw['kind'],
                run_id=str(raw['run_id']),
                particle_id=int(raw.get('particle_id', -1)),
                epoch=int(raw.get('epoch', -1)),
                payload=raw.get('payload') or {},
            )
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"malformed message: {e}") from e

    def raise_for_error(self) -> 'WireMessage':
        """Turn an Error reply back into the exception it carries"""
        if self.kind is MessageKind.ERROR:
            raise ProtocolError(self.payload.get('reason', 'unknown error'),
                                self.payload.get('expected_epoch'))
        return self

    @classmethod
    def error(cls, run_id: str, particle_id: int, epoch: int, exc: ProtocolError) -> 'WireMessage':
        return cls(MessageKind.ERROR, run_id, particle_id, epoch, exc.to_payload())


async def read_message(reader: asyncio.StreamReader) -> WireMessage:
    """Read one frame; asyncio.IncompleteReadError signals a closed peer"""
    header = await reader.readexactly(HEADER.size)
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"announced frame of {length} bytes exceeds the limit")
    body = await reader.readexactly(length)
    message = WireMessage.decode(body)
    logger.debug(f"<- {message.kind.value} particle={message.particle_id} epoch={message.epoch}")
    return message


async def write_frame(writer: asyncio.StreamWriter, frame: bytes) -> None:
    writer.write(frame)
    await writer.drain()


async def write_message(writer: asyncio.StreamWriter, message: WireMessage) -> None:
    logger.debug(f"-> {message.kind.value} particle={message.particle_id} epoch={message.epoch}")
    await write_frame(writer, message.encode())


def parse_address(address: str) -> tuple:
    """Split 'host:port' into (host, port)"""
    host, sep, port = address.rpartition(':')
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {address!r}")
    return host or '127.0.0.1', int(port)
