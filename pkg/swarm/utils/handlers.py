from dataclasses import asdict, is_dataclass
from typing import Any, Dict, Iterator, List, Optional, Union
import json
import logging
import os
from pathlib import Path

logger = logging.getLogger('SwarmHandlers')


def _to_plain(record: Any) -> Dict[str, Any]:
    if is_dataclass(record):
        return asdict(record)
    if isinstance(record, dict):
        return record
    raise TypeError(f"Cannot serialise record of type {type(record).__name__}")


class JsonLinesHandler:
    """Append-only line-delimited JSON file.

    With truncate=True the first open discards whatever an earlier run left
    in the file; later reopens append.
    """

    def __init__(self, path: Union[str, Path], fsync: bool = False, truncate: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = None
        self._truncate = truncate

    def open(self) -> 'JsonLinesHandler':
        if self._file is None:
            self._file = open(self.path, 'w' if self._truncate else 'a', encoding='utf-8')
            self._truncate = False
        return self

    def append(self, record: Any) -> None:
        """Write one record and flush it to the operating system before returning"""
        self.open()
        try:
            line = json.dumps(_to_plain(record), separators=(',', ':'))
            self._file.write(line + '\n')
            self._file.flush()
            if self.fsync:
                os.fsync(self._file.fileno())
        except OSError as e:
            logger.error(f"Failed to append to {self.path}: {e}", exc_info=True)
            raise

    def close(self) -> None:
        if self._file is not None:
            try:
                self._file.close()
            finally:
                self._file = None

    def __enter__(self) -> 'JsonLinesHandler':
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()


def iter_records(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """Yield every record of a line-delimited JSON file, skipping blank lines"""
    file_path = Path(path)
    if not file_path.exists():
        logger.error(f"Record file does not exist: {file_path}")
        raise FileNotFoundError(f"File not found: {file_path}")

    with open(file_path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                logger.error(f"Malformed record at {file_path}:{number}: {e}")
                raise ValueError(f"Malformed record at {file_path}:{number}") from e


def read_records(path: Union[str, Path], event: Optional[str] = None) -> List[Dict[str, Any]]:
    """Load all records, optionally only those whose 'event' field matches"""
    records = list(iter_records(path))
    if event is not None:
        records = [r for r in records if r.get('event') == event]
    return records


def write_records(path: Union[str, Path], records: List[Any]) -> Path:
    """Write records to a fresh file, replacing any previous content"""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'w', encoding='utf-8') as handle:
        for record in records:
            handle.write(json.dumps(_to_plain(record), separators=(',', ':')) + '\n')
    logger.debug(f"Wrote {len(records)} records to {file_path}")
    return file_path
