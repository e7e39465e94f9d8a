"""Position-update rules: Dynamic 1 (gradient velocities pushed through the
neighbourhood plus personal/neighbourhood-best attraction), Dynamic 2
(consensus pull towards gradient-corrected neighbours) and plain gradient
descent as the individual-learning baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import FrozenSet, Union

import numpy as np

from .core import (
    Dynamic,
    Dynamic2Form,
    DynamicsConfig,
    NeighborSnapshot,
    ParticleState,
    RMode,
    SnapshotEntry,
    pair_weight,
)
from .protocol import ProtocolError
from .utils import constants

SELF_WEIGHT = 1.0


@dataclass
class StepInput:
    self_state: ParticleState
    snapshot: NeighborSnapshot
    config: DynamicsConfig
    gradient: np.ndarray
    neighborhood: FrozenSet[int]
    rng: np.random.Generator


@dataclass
class StepOutput:
    new_position: np.ndarray
    new_velocity: np.ndarray
    psi: np.ndarray
    phi: np.ndarray


def _check_input(inp: StepInput) -> None:
    state = inp.self_state
    if inp.gradient.shape != state.position.shape:
        raise ValueError(
            f"gradient has shape {inp.gradient.shape}, position has shape {state.position.shape}"
        )
    if inp.snapshot.epoch != state.epoch:
        raise ProtocolError(
            f"snapshot is for epoch {inp.snapshot.epoch}, particle is at epoch {state.epoch}",
            expected_epoch=state.epoch,
        )


def _neighbor(inp: StepInput, particle_id: int) -> SnapshotEntry:
    try:
        entry = inp.snapshot.entry(particle_id)
    except KeyError:
        raise ProtocolError(f"snapshot for epoch {inp.snapshot.epoch} has no entry for particle {particle_id}")
    if entry.position.shape != inp.self_state.position.shape:
        raise ValueError(f"particle {particle_id} has dimension {entry.position.shape[0]}")
    return entry


def _draw(inp: StepInput) -> Union[float, np.ndarray]:
    if inp.config.r_mode is RMode.PER_DIMENSION:
        return inp.rng.random(inp.self_state.dimension)
    return float(inp.rng.random())


def individual_gd_step(inp: StepInput) -> StepOutput:
    """x' = x - eta * grad L(x)"""
    _check_input(inp)
    state = inp.self_state
    psi = -state.learning_rate * inp.gradient
    phi = state.position + psi
    return StepOutput(new_position=phi, new_velocity=psi, psi=psi, phi=phi.copy())


def dynamic1_step(inp: StepInput) -> StepOutput:
    """Weighted neighbour gradient steps plus cognitive and social attraction.

    v' = sum_l w_nl psi_l + c1 r1 (P - phi) + c2 r2 (P_g - phi), x' = x + v'
    """
    _check_input(inp)
    state, cfg = inp.self_state, inp.config
    n = state.particle_id
    x = state.position

    psi = -state.learning_rate * inp.gradient
    phi = x + psi

    mixed = np.zeros_like(x)
    for ell in sorted(inp.neighborhood):
        if ell == n:
            mixed = mixed + SELF_WEIGHT * psi
            continue
        entry = _neighbor(inp, ell)
        m_pair = cfg.pair_constant(n, ell)
        if m_pair == 0:
            continue
        weight = pair_weight(float(np.linalg.norm(x - entry.position)), m_pair, cfg.beta)
        mixed = mixed + weight * entry.psi

    r1 = _draw(inp)
    r2 = _draw(inp)
    velocity = (mixed
                + cfg.c1 * r1 * (state.personal_best - phi)
                + cfg.c2 * r2 * (state.nbhd_best - phi))
    return StepOutput(new_position=x + velocity, new_velocity=velocity, psi=psi, phi=phi)


def dynamic2_step(inp: StepInput) -> StepOutput:
    """Pull towards gradient-corrected neighbour positions plus neighbourhood-best attraction.

    Weights use the squared distance, w_ij = M_ij / (1 + |x_i - x_j|^2)^beta,
    and each neighbour's gradient is scaled by that neighbour's own rate.
    The pull sums over every other particle in the snapshot; the kNN
    neighbourhood only decides the best position the particle is drawn to.
    """
    _check_input(inp)
    state, cfg = inp.self_state, inp.config
    i = state.particle_id
    x = state.position

    weights = []
    targets = []
    for j in inp.snapshot.ids:
        if j == i:
            continue
        entry = _neighbor(inp, j)
        m_pair = cfg.pair_constant(i, j)
        if m_pair == 0:
            continue
        distance = float(np.linalg.norm(x - entry.position))
        weights.append(pair_weight(distance ** 2, m_pair, cfg.beta))
        targets.append(entry.position + entry.psi)

    pull = np.zeros_like(x)
    if cfg.dynamic2_form is Dynamic2Form.LITERAL:
        for weight, target in zip(weights, targets):
            pull = pull + weight * target
    else:
        scale = 1.0 + math.fsum(weights)
        for weight, target in zip(weights, targets):
            pull = pull + (weight / scale) * (target - x)

    r = _draw(inp)
    velocity = pull + cfg.c * r * (state.nbhd_best - x)

    psi = -state.learning_rate * inp.gradient
    return StepOutput(new_position=x + velocity, new_velocity=velocity, psi=psi, phi=x + psi)


def apply_dynamic(inp: StepInput) -> StepOutput:
    """Run the configured rule; warm-up epochs always use individual gradient descent"""
    cfg = inp.config
    if inp.self_state.epoch < cfg.warmup_epochs or cfg.dynamic is Dynamic.INDIVIDUAL:
        return individual_gd_step(inp)
    if cfg.dynamic is Dynamic.DYNAMIC1:
        return dynamic1_step(inp)
    return dynamic2_step(inp)


def learning_rate_regime(particle_id: int, rng: np.random.Generator) -> float:
    """Fixed rates for the first three particles, log-uniform for the rest"""
    if 0 <= particle_id < len(constants.FIXED_LEARNING_RATES):
        return constants.FIXED_LEARNING_RATES[particle_id]
    return wild_learning_rate(rng)


def wild_learning_rate(rng: np.random.Generator) -> float:
    low, high = constants.WILD_LEARNING_RATE_RANGE
    return float(10.0 ** rng.uniform(math.log10(low), math.log10(high)))
