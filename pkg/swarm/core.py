"""Particle and swarm domain types, the pairwise weight function, nearest
neighbour selection and best-position bookkeeping.

Everything here is a pure function over value types.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from .utils import constants


class Dynamic(str, Enum):
    INDIVIDUAL = 'individual'
    DYNAMIC1 = 'dynamic1'
    DYNAMIC2 = 'dynamic2'


class RMode(str, Enum):
    SCALAR = 'scalar'
    PER_DIMENSION = 'per-dimension'


class Dynamic2Form(str, Enum):
    NORMALIZED = 'normalized'
    LITERAL = 'literal'


def _as_vector(values: Any) -> np.ndarray:
    return np.array(values, dtype=np.float64).reshape(-1)


@dataclass
class ParticleState:
    """Position, velocity and best positions of one particle"""
    particle_id: int
    position: np.ndarray
    velocity: np.ndarray
    personal_best: np.ndarray
    personal_best_loss: float
    nbhd_best: np.ndarray
    nbhd_best_loss: float
    learning_rate: float
    epoch: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        dim = self.position.shape[0]
        for name in ('velocity', 'personal_best', 'nbhd_best'):
            if getattr(self, name).shape != (dim,):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected ({dim},)")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be nonnegative, got {self.learning_rate}")

    @classmethod
    def initial(cls, particle_id: int, position: Any, loss: float,
                learning_rate: float, rng_seed: int = 0) -> 'ParticleState':
        x = _as_vector(position)
        return cls(
            particle_id=particle_id,
            position=x.copy(),
            velocity=np.zeros_like(x),
            personal_best=x.copy(),
            personal_best_loss=float(loss),
            nbhd_best=x.copy(),
            nbhd_best_loss=float(loss),
            learning_rate=float(learning_rate),
            epoch=0,
            rng_seed=int(rng_seed),
        )

    @property
    def dimension(self) -> int:
        return int(self.position.shape[0])


def default_weight_matrix(n: int) -> np.ndarray:
    """Gradient weight matrix M: 0.2 between ordinary particles, 10 towards the fourth one.

    The diagonal is NaN because no rule ever reads it.
    """
    if n < 1:
        raise ValueError(f"swarm needs at least one particle, got {n}")
    matrix = np.full((n, n), constants.PAIR_WEIGHT, dtype=np.float64)
    if n > constants.WILD_PARTICLE:
        matrix[:, constants.WILD_PARTICLE] = constants.WILD_PAIR_WEIGHT
    np.fill_diagonal(matrix, np.nan)
    return matrix


@dataclass
class DynamicsConfig:
    """Constants of the swarm update rules"""
    weights: np.ndarray
    c1: float = constants.C1
    c2: float = constants.C2
    c: float = constants.DYNAMIC2_C
    beta: float = constants.BETA
    k: int = constants.NUM_NEIGHBORS
    dynamic: Dynamic = Dynamic.DYNAMIC1
    warmup_epochs: int = constants.WARMUP_EPOCHS
    r_mode: RMode = RMode.SCALAR
    dynamic2_form: Dynamic2Form = Dynamic2Form.NORMALIZED

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.dynamic = Dynamic(self.dynamic)
        self.r_mode = RMode(self.r_mode)
        self.dynamic2_form = Dynamic2Form(self.dynamic2_form)
        n = self.num_particles
        if self.weights.shape != (n, n):
            raise ValueError(f"weight matrix must be square, got shape {self.weights.shape}")
        off_diagonal = self.weights[~np.eye(n, dtype=bool)]
        if np.any(np.isnan(off_diagonal)) or np.any(off_diagonal < 0):
            raise ValueError("weight matrix entries off the diagonal must be nonnegative numbers")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.k < 0 or self.k > n - 1:
            raise ValueError(f"k must lie in [0, {n - 1}] for {n} particles, got {self.k}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be nonnegative, got {self.warmup_epochs}")

    @classmethod
    def for_swarm(cls, n: int, **overrides: Any) -> 'DynamicsConfig':
        weights = overrides.pop('weights', None)
        if weights is None:
            weights = default_weight_matrix(n)
        if 'k' not in overrides:
            overrides['k'] = min(constants.NUM_NEIGHBORS, n - 1)
        return cls(weights=weights, **overrides)

    @property
    def num_particles(self) -> int:
        return int(self.weights.shape[0])

    def pair_constant(self, n: int, ell: int) -> float:
        if n == ell:
            raise ValueError("the diagonal of the weight matrix is never read")
        return float(self.weights[n, ell])


@dataclass(frozen=True)
class SnapshotEntry:
    """State one particle published for an epoch"""
    particle_id: int
    position: np.ndarray
    gradient: np.ndarray
    loss: float
    personal_best: np.ndarray
    personal_best_loss: float
    learning_rate: float

    @property
    def psi(self) -> np.ndarray:
        """Intermediate velocity -eta * grad L(x) of this particle"""
        return -self.learning_rate * self.gradient

    def to_payload(self) -> Dict[str, Any]:
        return {
            'particle_id': int(self.particle_id),
            'position': self.position.tolist(),
            'gradient': self.gradient.tolist(),
            'loss': float(self.loss),
            'personal_best': self.personal_best.tolist(),
            'personal_best_loss': float(self.personal_best_loss),
            'learning_rate': float(self.learning_rate),
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> 'SnapshotEntry':
        try:
            entry = cls(
                particle_id=int(payload['particle_id']),
                position=_as_vector(payload['position']),
                gradient=_as_vector(payload['gradient']),
                loss=float(payload['loss']),
                personal_best=_as_vector(payload['personal_best']),
                personal_best_loss=float(payload['personal_best_loss']),
                learning_rate=float(payload['learning_rate']),
            )
        except KeyError as e:
            raise ValueError(f"snapshot entry is missing field {e.args[0]!r}") from e
        dim = entry.position.shape[0]
        if entry.gradient.shape[0] != dim or entry.personal_best.shape[0] != dim:
            raise ValueError(f"snapshot entry {entry.particle_id} mixes vector dimensions")
        return entry


@dataclass(frozen=True)
class NeighborSnapshot:
    """Per-epoch published state of every particle, ordered by particle id"""
    epoch: int
    entries: Tuple[SnapshotEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda e: e.particle_id))
        ids = [e.particle_id for e in ordered]
        if len(set(ids)) != len(ids):
            raise ValueError(f"snapshot for epoch {self.epoch} holds duplicate particle ids {ids}")
        object.__setattr__(self, 'entries', ordered)

    @property
    def ids(self) -> List[int]:
        return [e.particle_id for e in self.entries]

    def entry(self, particle_id: int) -> SnapshotEntry:
        for e in self.entries:
            if e.particle_id == particle_id:
                return e
        raise KeyError(particle_id)

    def positions(self) -> List[Tuple[int, np.ndarray]]:
        return [(e.particle_id, e.position) for e in self.entries]

    def to_payload(self) -> Dict[str, Any]:
        return {'epoch': int(self.epoch), 'entries': [e.to_payload() for e in self.entries]}

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> 'NeighborSnapshot':
        return cls(
            epoch=int(payload['epoch']),
            entries=tuple(SnapshotEntry.from_payload(e) for e in payload.get('entries', [])),
        )


def pair_weight(z: float, m_pair: float, beta: float) -> float:
    """f(z) = M / (1 + z)^beta, a decreasing weight in (0, M]"""
    if not z >= 0:
        raise ValueError(f"distance must be nonnegative, got {z}")
    if not m_pair > 0:
        raise ValueError(f"weight constant must be positive, got {m_pair}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return float(m_pair / (1.0 + z) ** beta)


def nearest_neighbors(states: Sequence[Tuple[int, Any]], n: int, k: int) -> FrozenSet[int]:
    """Particle n together with its k nearest particles by Euclidean distance.

    Equal distances are broken by ascending particle id.
    """
    ids = [pid for pid, _ in states]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate particle ids in {ids}")
    if n not in ids:
        raise ValueError(f"unknown particle id {n}")
    if k < 0 or k > len(states) - 1:
        raise ValueError(f"k={k} out of range for {len(states)} particles")

    positions = {pid: _as_vector(x) for pid, x in states}
    origin = positions[n]
    candidates = []
    for pid in ids:
        if pid == n:
            continue
        other = positions[pid]
        if other.shape != origin.shape:
            raise ValueError(f"particle {pid} has dimension {other.shape[0]}, expected {origin.shape[0]}")
        candidates.append((float(np.linalg.norm(origin - other)), pid))
    candidates.sort()
    return frozenset([n] + [pid for _, pid in candidates[:k]])


def update_personal_best(best: np.ndarray, best_loss: float,
                         position: np.ndarray, loss: float) -> Tuple[np.ndarray, float]:
    """Keep the earlier best unless the new loss is strictly lower"""
    if loss < best_loss:
        return position, float(loss)
    return best, float(best_loss)


def update_neighborhood_best(best: np.ndarray, best_loss: float,
                             snapshot: NeighborSnapshot,
                             nbhd: Iterable[int]) -> Tuple[np.ndarray, float]:
    """Argmin-loss point among the incumbent and the neighbours' current positions.

    Ties keep the incumbent, then the lowest particle id.
    """
    members = sorted(set(nbhd))
    if not members:
        raise ValueError("neighborhood is empty")
    known = set(snapshot.ids)
    missing = [pid for pid in members if pid not in known]
    if missing:
        raise ValueError(f"neighborhood ids {missing} are not in the epoch {snapshot.epoch} snapshot")

    current, current_loss = best, float(best_loss)
    for pid in members:
        entry = snapshot.entry(pid)
        if entry.loss < current_loss:
            current, current_loss = entry.position, float(entry.loss)
    return current, current_loss


def position_digest(position: np.ndarray, head: int = 8) -> Dict[str, Any]:
    """First components and L2 norm of a position, as stored in logs"""
    x = _as_vector(position)
    return {'head': x[:head].tolist(), 'norm': float(np.linalg.norm(x))}
